//! Single-qubit Clifford group decomposed into X(π/2), X(π) and virtual Z.

use crate::driveline::DriveLineError;
use crate::gateset::GateSet;
use crate::qubit::{equal_up_to_phase, pulse_unitary, z_unitary, U2};
use crate::qutrit::GateSpec;
use crate::scalar::Real;

pub const GROUP_SIZE: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    X90,
    X180,
    /// Virtual Z by k·π/2, k ∈ {1, 2, 3}.
    Z(u8),
}

#[derive(Debug, Clone)]
pub struct CliffordGate<T: Real> {
    pub index: usize,
    pub unitary: U2<T>,
    /// Time-ordered.
    pub decomposition: Vec<Primitive>,
}

impl<T: Real> CliffordGate<T> {
    pub fn physical_pulses(&self) -> usize {
        self.decomposition.iter().filter(|p| !matches!(p, Primitive::Z(_))).count()
    }
}

#[derive(Debug, Clone)]
pub struct CliffordTable<T: Real> {
    pub gates: Vec<CliffordGate<T>>,
    /// `compose[a][b]` is the element equal to applying `a` then `b`.
    compose: [[u8; GROUP_SIZE]; GROUP_SIZE],
    inverse: [u8; GROUP_SIZE],
}

fn primitive_unitary<T: Real>(p: Primitive) -> U2<T> {
    match p {
        Primitive::X90 => pulse_unitary(T::FRAC_PI_2(), T::zero()),
        Primitive::X180 => pulse_unitary(T::PI(), T::zero()),
        Primitive::Z(k) => z_unitary(T::FRAC_PI_2() * T::lit(f64::from(k))),
    }
}

pub fn decomposition_unitary<T: Real>(ops: &[Primitive]) -> U2<T> {
    ops.iter().fold(U2::identity(), |acc, &p| primitive_unitary::<T>(p) * acc)
}

fn tolerance<T: Real>() -> T {
    T::lit(1e-12).max(T::eps() * T::lit(100.0))
}

impl<T: Real> CliffordTable<T> {
    /// Enumerates Z(a)·X(b)·Z(c) with b ∈ {0, π/2, π} and a, c multiples of
    /// π/2, keeping the first (fewest-pulse) decomposition of each element.
    pub fn new() -> Self {
        let mut gates: Vec<CliffordGate<T>> = Vec::with_capacity(GROUP_SIZE);
        for b in 0..3u8 {
            for a in 0..4u8 {
                for cq in 0..4u8 {
                    let mut ops = Vec::new();
                    if cq != 0 {
                        ops.push(Primitive::Z(cq));
                    }
                    match b {
                        1 => ops.push(Primitive::X90),
                        2 => ops.push(Primitive::X180),
                        _ => {}
                    }
                    if a != 0 {
                        ops.push(Primitive::Z(a));
                    }
                    let u = decomposition_unitary::<T>(&ops);
                    if !gates.iter().any(|g| equal_up_to_phase(&g.unitary, &u, tolerance())) {
                        gates.push(CliffordGate { index: gates.len(), unitary: u, decomposition: ops });
                    }
                }
            }
        }
        assert_eq!(gates.len(), GROUP_SIZE, "Clifford enumeration incomplete");
        let find = |u: &U2<T>| -> u8 {
            gates
                .iter()
                .position(|g| equal_up_to_phase(&g.unitary, u, T::lit(1e-9)))
                .expect("Clifford group is closed") as u8
        };
        let mut compose = [[0u8; GROUP_SIZE]; GROUP_SIZE];
        let mut inverse = [0u8; GROUP_SIZE];
        for (a, ga) in gates.iter().enumerate() {
            for (b, gb) in gates.iter().enumerate() {
                compose[a][b] = find(&(gb.unitary * ga.unitary));
            }
            inverse[a] = find(&ga.unitary.adjoint());
        }
        Self { gates, compose, inverse }
    }

    pub fn identity_index(&self) -> usize {
        0
    }

    /// Element equal to applying `a` then `b`.
    pub fn then(&self, a: usize, b: usize) -> usize {
        usize::from(self.compose[a][b])
    }

    pub fn inverse(&self, a: usize) -> usize {
        usize::from(self.inverse[a])
    }

    /// Net element of a time-ordered list.
    pub fn net(&self, seq: &[usize]) -> usize {
        seq.iter().fold(self.identity_index(), |acc, &g| self.then(acc, g))
    }

    /// Average physical pulses per Clifford.
    pub fn average_pulses(&self) -> T {
        let total: usize = self.gates.iter().map(|g| g.physical_pulses()).sum();
        T::from_usize_lossy(total) / T::from_usize_lossy(GROUP_SIZE)
    }

    /// Pulses and frame updates realizing a list of Cliffords.
    pub fn expand(&self, seq: &[usize], gateset: &GateSet<T>) -> Result<Vec<GateSpec<T>>, DriveLineError> {
        let x90 = gateset.x(T::lit(90.0))?;
        let x180 = gateset.x(T::lit(180.0))?;
        let mut out = Vec::with_capacity(seq.len() * 2);
        for &i in seq {
            for p in &self.gates[i].decomposition {
                out.push(match p {
                    Primitive::X90 => x90,
                    Primitive::X180 => x180,
                    Primitive::Z(k) => GateSpec::VirtualZ { phase: T::FRAC_PI_2() * T::lit(f64::from(*k)) },
                });
            }
        }
        Ok(out)
    }
}

impl<T: Real> Default for CliffordTable<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// The 24 elements with their decompositions.
pub fn clifford_table<T: Real>() -> CliffordTable<T> {
    CliffordTable::new()
}
