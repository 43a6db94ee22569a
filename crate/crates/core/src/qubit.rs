//! Ideal two-level gate algebra in the {g, e} basis.
//!
//! Conventions match the qutrit simulator: a pulse of angle θ and phase φ is
//! exp(−iθ/2·(cos φ·σx + sin φ·σy)) with σx = |g⟩⟨e| + |e⟩⟨g| and
//! σy = −i|g⟩⟨e| + i|e⟩⟨g|; a virtual Z(φ) is diag(1, e^{iφ}). Bloch
//! components use the ground state at z = −1.

use nalgebra::{Complex, Matrix2};

use crate::scalar::Real;

pub type U2<T> = Matrix2<Complex<T>>;

fn c<T: Real>(x: T) -> Complex<T> {
    Complex::new(x, T::zero())
}

pub fn pulse_unitary<T: Real>(theta: T, phase: T) -> U2<T> {
    let h = theta / T::lit(2.0);
    let (s, co) = (h.sin(), h.cos());
    // −i·sin(θ/2)·(cos φ σx + sin φ σy): off-diagonals −i s e^{∓iφ}
    let upper = Complex::new(-s * phase.sin(), -s * phase.cos());
    let lower = Complex::new(s * phase.sin(), -s * phase.cos());
    Matrix2::new(c(co), upper, lower, c(co))
}

pub fn z_unitary<T: Real>(phase: T) -> U2<T> {
    Matrix2::new(c(T::one()), c(T::zero()), c(T::zero()), Complex::new(phase.cos(), phase.sin()))
}

/// |⟨U, V⟩|/2 equals 1 iff U and V agree up to a global phase.
pub fn phase_insensitive_overlap<T: Real>(u: &U2<T>, v: &U2<T>) -> T {
    let t = (u.adjoint() * v).trace();
    t.norm_sqr().sqrt() / T::lit(2.0)
}

pub fn equal_up_to_phase<T: Real>(u: &U2<T>, v: &U2<T>, tol: T) -> bool {
    T::one() - phase_insensitive_overlap(u, v) <= tol
}

/// Outcome probabilities (p_g, p_e) of U|g⟩.
pub fn probabilities_from_ground<T: Real>(u: &U2<T>) -> [T; 2] {
    let pg = u[(0, 0)].norm_sqr();
    let pe = u[(1, 0)].norm_sqr();
    let s = pg + pe;
    [pg / s, pe / s]
}

/// Bloch vector (x, y, z) of a 2×2 density matrix, ground at z = −1.
pub fn bloch_vector<T: Real>(rho: &U2<T>) -> [T; 3] {
    let two = T::lit(2.0);
    [two * rho[(1, 0)].re, two * rho[(1, 0)].im, rho[(1, 1)].re - rho[(0, 0)].re]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn unitaries_are_unitary() {
        for (t, p) in [(0.3, 0.0), (PI, 1.1), (PI / 2.0, -2.0)] {
            let u = pulse_unitary(t, p);
            assert!((u.adjoint() * u - U2::<f64>::identity()).norm() < 1e-14);
        }
    }

    #[test]
    fn pi_pulse_flips() {
        let p = probabilities_from_ground(&pulse_unitary(PI, 0.4));
        assert!(p[0] < 1e-30 && (p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn z_conjugation_rotates_axis() {
        let phi = 0.7;
        let lhs = z_unitary(phi) * pulse_unitary(1.3, 0.0) * z_unitary(-phi);
        assert!(equal_up_to_phase(&lhs, &pulse_unitary(1.3, phi), 1e-14));
    }

    #[test]
    fn half_pi_lands_on_minus_y() {
        let u = pulse_unitary(PI / 2.0, 0.0);
        let psi = u.column(0);
        let rho = psi * psi.adjoint();
        let r = bloch_vector(&rho);
        assert!(r[0].abs() < 1e-15 && (r[1] + 1.0).abs() < 1e-15 && r[2].abs() < 1e-15);
    }
}
