//! Three-state assignment errors: shot sampling, inversion-based mitigation
//! and renormalization onto the qubit subspace.

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Clipped probability mass above which mitigation attaches a warning.
pub const CLIP_WARNING_THRESHOLD: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReadoutError {
    #[error("confusion row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("confusion entry ({row}, {col}) = {value} outside [0, 1]")]
    Entry { row: usize, col: usize, value: f64 },
    #[error("confusion matrix is singular")]
    Singular,
    #[error("populations sum to {0}, expected 1")]
    PopulationSum(f64),
    #[error("population {value} of state {state} is negative")]
    NegativePopulation { state: usize, value: f64 },
    #[error("qubit-subspace population {0} too small to renormalize")]
    EmptySubspace(f64),
    #[error("shot count must be positive")]
    NoShots,
}

/// Entry (i, j) is the probability of reading state j after preparing state i
/// (order g, e, f).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "[[T; 3]; 3]",
    into = "[[T; 3]; 3]",
    bound(serialize = "T: Real + Serialize", deserialize = "T: Real + Deserialize<'de>")
)]
pub struct ConfusionMatrix3<T: Real> {
    rows: [[T; 3]; 3],
    transpose_inverse: Option<[[T; 3]; 3]>,
    condition_number: T,
}

impl<T: Real> ConfusionMatrix3<T> {
    pub fn new(rows: [[T; 3]; 3]) -> Result<Self, ReadoutError> {
        let tol = T::lit(1e-12).max(T::eps() * T::lit(16.0));
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(v >= T::zero() && v <= T::one()) {
                    return Err(ReadoutError::Entry { row: i, col: j, value: v.as_f64() });
                }
            }
            let sum = row[0] + row[1] + row[2];
            if (sum - T::one()).abs() > tol {
                return Err(ReadoutError::RowSum { row: i, sum: sum.as_f64() });
            }
        }
        let m = Matrix3::from_fn(|i, j| rows[i][j]);
        let sv = m.singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        // Singular matrices can still be sampled through; only mitigation needs the inverse.
        let transpose_inverse = if smin > T::eps() * smax * T::lit(1e3) {
            m.transpose()
                .try_inverse()
                .map(|inv| std::array::from_fn(|i| std::array::from_fn(|j| inv[(i, j)])))
        } else {
            None
        };
        let condition_number = if smin > T::zero() { smax / smin } else { T::lit(f64::INFINITY) };
        Ok(Self { rows, transpose_inverse, condition_number })
    }

    pub fn identity() -> Self {
        Self::symmetric(T::zero()).expect("identity is valid")
    }

    /// Assignment error `error` split equally between the two wrong labels.
    pub fn symmetric(error: T) -> Result<Self, ReadoutError> {
        let off = error / T::lit(2.0);
        let on = T::one() - error;
        Self::new([[on, off, off], [off, on, off], [off, off, on]])
    }

    pub fn rows(&self) -> &[[T; 3]; 3] {
        &self.rows
    }

    pub fn is_invertible(&self) -> bool {
        self.transpose_inverse.is_some()
    }

    /// 2-norm condition number.
    pub fn condition_number(&self) -> T {
        self.condition_number
    }

    /// Average probability of a wrong label.
    pub fn average_error(&self) -> T {
        (T::lit(3.0) - self.rows[0][0] - self.rows[1][1] - self.rows[2][2]) / T::lit(3.0)
    }

    /// Label distribution for true populations: confusionᵀ·p.
    pub fn forward(&self, populations: [T; 3]) -> [T; 3] {
        std::array::from_fn(|j| (0..3).fold(T::zero(), |acc, i| acc + populations[i] * self.rows[i][j]))
    }

    fn solve(&self, freqs: [T; 3]) -> Result<[T; 3], ReadoutError> {
        let m = self.transpose_inverse.as_ref().ok_or(ReadoutError::Singular)?;
        Ok(std::array::from_fn(|i| m[i][0] * freqs[0] + m[i][1] * freqs[1] + m[i][2] * freqs[2]))
    }
}

impl<T: Real> TryFrom<[[T; 3]; 3]> for ConfusionMatrix3<T> {
    type Error = ReadoutError;
    fn try_from(rows: [[T; 3]; 3]) -> Result<Self, Self::Error> {
        Self::new(rows)
    }
}

impl<T: Real> From<ConfusionMatrix3<T>> for [[T; 3]; 3] {
    fn from(c: ConfusionMatrix3<T>) -> Self {
        c.rows
    }
}

/// Single-shot outcome counts for one sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShotRecord {
    pub n_g: u64,
    pub n_e: u64,
    pub n_f: u64,
}

impl ShotRecord {
    pub fn new(n_g: u64, n_e: u64, n_f: u64) -> Self {
        Self { n_g, n_e, n_f }
    }

    pub fn shots(&self) -> u64 {
        self.n_g + self.n_e + self.n_f
    }

    pub fn frequencies<T: Real>(&self) -> [T; 3] {
        let n = T::lit(self.shots() as f64);
        [self.n_g, self.n_e, self.n_f].map(|c| T::lit(c as f64) / n)
    }
}

fn check_populations<T: Real>(p: [T; 3]) -> Result<(), ReadoutError> {
    for (state, &v) in p.iter().enumerate() {
        if v < -T::lit(1e-9) || !v.is_finite() {
            return Err(ReadoutError::NegativePopulation { state, value: v.as_f64() });
        }
    }
    let sum = p[0] + p[1] + p[2];
    if (sum - T::one()).abs() > T::lit(1e-9).max(T::eps() * T::lit(64.0)) {
        return Err(ReadoutError::PopulationSum(sum.as_f64()));
    }
    Ok(())
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("probability in (0, 1)").sample(rng)
    }
}

/// One multinomial draw of `shots` labels from the confusion-mixed populations.
pub fn sample_readout<T: Real, R: Rng + ?Sized>(
    populations: [T; 3],
    confusion: &ConfusionMatrix3<T>,
    shots: u64,
    rng: &mut R,
) -> Result<ShotRecord, ReadoutError> {
    check_populations(populations)?;
    if shots == 0 {
        return Err(ReadoutError::NoShots);
    }
    let q = confusion.forward(populations).map(|v| v.as_f64().max(0.0));
    let total: f64 = q.iter().sum();
    let q = q.map(|v| v / total);
    let n_g = binomial(shots, q[0], rng);
    let rest = shots - n_g;
    let tail = q[1] + q[2];
    let n_e = if tail > 0.0 { binomial(rest, q[1] / tail, rng) } else { 0 };
    Ok(ShotRecord { n_g, n_e, n_f: rest - n_e })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mitigated<T> {
    pub populations: [T; 3],
    /// Total negative mass removed before renormalizing.
    pub clipped: T,
    pub warning: Option<&'static str>,
}

/// Inverts the assignment map, clipping negative components to zero.
pub fn mitigate<T: Real>(record: &ShotRecord, confusion: &ConfusionMatrix3<T>) -> Result<Mitigated<T>, ReadoutError> {
    if record.shots() == 0 {
        return Err(ReadoutError::NoShots);
    }
    mitigate_frequencies(record.frequencies(), confusion)
}

pub fn mitigate_frequencies<T: Real>(
    freqs: [T; 3],
    confusion: &ConfusionMatrix3<T>,
) -> Result<Mitigated<T>, ReadoutError> {
    let raw = confusion.solve(freqs)?;
    let clipped = raw.iter().fold(T::zero(), |acc, &v| if v < T::zero() { acc - v } else { acc });
    let populations = if clipped > T::zero() {
        let kept = raw.map(|v| v.max(T::zero()));
        let sum = kept[0] + kept[1] + kept[2];
        kept.map(|v| v / sum)
    } else {
        raw
    };
    let warning = (clipped.as_f64() > CLIP_WARNING_THRESHOLD)
        .then_some("readout mitigation clipped more than 5% probability; confusion model may be wrong");
    Ok(Mitigated { populations, clipped, warning })
}

/// Populations conditioned on staying in {g, e}, with p_f kept for leakage analysis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspacePopulations<T> {
    pub p_g: T,
    pub p_e: T,
    pub p_f: T,
}

impl<T: Real> SubspacePopulations<T> {
    /// ⟨σz⟩ with the ground state at +1.
    pub fn sigma_z(&self) -> T {
        self.p_g - self.p_e
    }
}

pub fn renormalize_computational<T: Real>(p: [T; 3]) -> Result<SubspacePopulations<T>, ReadoutError> {
    let s = p[0] + p[1];
    if !(s > T::lit(1e-12)) {
        return Err(ReadoutError::EmptySubspace(s.as_f64()));
    }
    Ok(SubspacePopulations { p_g: p[0] / s, p_e: p[1] / s, p_f: p[2] })
}
