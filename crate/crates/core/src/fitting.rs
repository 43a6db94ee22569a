//! Weighted nonlinear least squares and bootstrap resampling.
//!
//! The solver is a Levenberg-Marquardt (damped Gauss-Newton) iteration with a
//! central-difference Jacobian and optional box bounds. Every decay and
//! calibration fit in the toolkit goes through [`fit_least_squares`].

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::scalar::Real;
use crate::seed;
use crate::stats;

use rand::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("underdetermined problem: {points} data points for {params} parameters")]
    Underdetermined { points: usize, params: usize },
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("model produced a non-finite value at parameters {params:?}")]
    NonFinite { params: Vec<f64> },
    #[error("{failed} of {repeats} bootstrap resamples failed")]
    BootstrapFailed { failed: usize, repeats: usize },
}

/// Model evaluated over all abscissae at once.
///
/// Batch evaluation lets sequential forward models (the N-pulse propagator)
/// reuse work between abscissae.
pub trait CurveModel<T: Real>: Sync {
    fn evaluate(&self, params: &[T], abscissae: &[T]) -> Vec<T>;
}

/// Adapts a pointwise closure `f(params, x)`.
pub struct Pointwise<F>(pub F);

impl<T, F> CurveModel<T> for Pointwise<F>
where
    T: Real,
    F: Fn(&[T], T) -> T + Sync,
{
    fn evaluate(&self, params: &[T], abscissae: &[T]) -> Vec<T> {
        abscissae.iter().map(|&x| (self.0)(params, x)).collect()
    }
}

/// Adapts a batch closure `f(params, xs) -> ys`.
pub struct Batch<F>(pub F);

impl<T, F> CurveModel<T> for Batch<F>
where
    T: Real,
    F: Fn(&[T], &[T]) -> Vec<T> + Sync,
{
    fn evaluate(&self, params: &[T], abscissae: &[T]) -> Vec<T> {
        (self.0)(params, abscissae)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataPoint<T> {
    pub x: T,
    pub y: T,
    /// Inverse variance of `y`.
    pub weight: T,
}

impl<T: Real> DataPoint<T> {
    pub fn new(x: T, y: T, weight: T) -> Self {
        Self { x, y, weight }
    }

    pub fn unweighted(x: T, y: T) -> Self {
        Self::new(x, y, T::one())
    }
}

/// Solver tolerances. Defaults follow the toolkit-wide convergence policy.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub decrease_tolerance: f64,
    pub gradient_tolerance: f64,
    /// When false the covariance is scaled by the reduced chi-square.
    pub absolute_weights: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            step_tolerance: 1e-10,
            decrease_tolerance: 1e-12,
            gradient_tolerance: 1e-14,
            absolute_weights: false,
        }
    }
}

pub struct CurveFitProblem<T: Real, M> {
    model: M,
    data: Vec<DataPoint<T>>,
    initial_guess: Vec<T>,
    bounds: Option<Vec<(T, T)>>,
    options: SolverOptions,
}

impl<T: Real, M: CurveModel<T>> CurveFitProblem<T, M> {
    pub fn new(model: M, data: Vec<DataPoint<T>>, initial_guess: Vec<T>) -> Result<Self, FitError> {
        if data.len() < initial_guess.len() {
            return Err(FitError::Underdetermined {
                points: data.len(),
                params: initial_guess.len(),
            });
        }
        if initial_guess.is_empty() {
            return Err(FitError::Invalid("no parameters".into()));
        }
        for (i, p) in data.iter().enumerate() {
            if !(p.weight > T::zero()) || !p.weight.is_finite() {
                return Err(FitError::Invalid(format!("weight of point {i} is not strictly positive")));
            }
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(FitError::Invalid(format!("point {i} is not finite")));
            }
        }
        Ok(Self {
            model,
            data,
            initial_guess,
            bounds: None,
            options: SolverOptions::default(),
        })
    }

    pub fn with_bounds(mut self, bounds: Vec<(T, T)>) -> Result<Self, FitError> {
        if bounds.len() != self.initial_guess.len() {
            return Err(FitError::Invalid("bounds length differs from parameter count".into()));
        }
        for (i, (&(lo, hi), &p)) in bounds.iter().zip(&self.initial_guess).enumerate() {
            if lo > hi {
                return Err(FitError::Invalid(format!("empty bound interval for parameter {i}")));
            }
            if p < lo || p > hi {
                return Err(FitError::Invalid(format!("initial guess of parameter {i} outside bounds")));
            }
        }
        self.bounds = Some(bounds);
        Ok(self)
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn data(&self) -> &[DataPoint<T>] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitOutcome<T> {
    pub params: Vec<T>,
    pub covariance: Vec<Vec<T>>,
    /// sqrt of the weighted sum of squared residuals.
    pub residual_norm: T,
    pub converged: bool,
    pub iterations: usize,
}

impl<T: Real> FitOutcome<T> {
    /// One-sigma uncertainty of parameter `i` from the covariance diagonal.
    pub fn std_error(&self, i: usize) -> T {
        let v = self.covariance[i][i];
        if v > T::zero() {
            v.sqrt()
        } else {
            T::zero()
        }
    }

    /// Weighted residual sum of squares divided by the degrees of freedom.
    pub fn reduced_chi2(&self, n_points: usize) -> T {
        let dof = n_points.saturating_sub(self.params.len()).max(1);
        self.residual_norm * self.residual_norm / T::from_usize_lossy(dof)
    }
}

fn to_f64s<T: Real>(p: &[T]) -> Vec<f64> {
    p.iter().map(|v| v.as_f64()).collect()
}

struct Evaluator<'a, T: Real, M> {
    problem: &'a CurveFitProblem<T, M>,
    xs: Vec<T>,
    sqrt_w: Vec<T>,
}

impl<'a, T: Real, M: CurveModel<T>> Evaluator<'a, T, M> {
    fn new(problem: &'a CurveFitProblem<T, M>) -> Self {
        Self {
            xs: problem.data.iter().map(|d| d.x).collect(),
            sqrt_w: problem.data.iter().map(|d| d.weight.sqrt()).collect(),
            problem,
        }
    }

    /// Weighted residuals sqrt(w)·(y − f); None when the model is non-finite.
    fn residuals(&self, params: &[T]) -> Option<Vec<T>> {
        let f = self.problem.model.evaluate(params, &self.xs);
        if f.len() != self.xs.len() {
            return None;
        }
        let mut r = Vec::with_capacity(f.len());
        for ((fi, d), sw) in f.iter().zip(&self.problem.data).zip(&self.sqrt_w) {
            if !fi.is_finite() {
                return None;
            }
            r.push(*sw * (d.y - *fi));
        }
        Some(r)
    }

    fn clamp(&self, params: &mut [T]) {
        if let Some(bounds) = &self.problem.bounds {
            for (p, &(lo, hi)) in params.iter_mut().zip(bounds) {
                if *p < lo {
                    *p = lo;
                }
                if *p > hi {
                    *p = hi;
                }
            }
        }
    }

    fn diff_step(p: T) -> T {
        // 1e-7 for f64; single precision needs a coarser step.
        let c = if T::eps() < T::lit(1e-10) {
            T::lit(1e-7)
        } else {
            T::eps().cbrt()
        };
        let scaled = c * p.abs();
        if scaled > c {
            scaled
        } else {
            c
        }
    }

    /// Jacobian of the weighted model values, d(sqrt(w)·f)/dp.
    fn jacobian(&self, params: &[T]) -> Result<DMatrix<T>, FitError> {
        let n = self.xs.len();
        let m = params.len();
        let mut jac = DMatrix::<T>::zeros(n, m);
        for j in 0..m {
            let h = Self::diff_step(params[j]);
            let (lo, hi) = match &self.problem.bounds {
                Some(b) => (b[j].0, b[j].1),
                None => (T::lit(f64::NEG_INFINITY), T::lit(f64::INFINITY)),
            };
            let mut plus = params.to_vec();
            let mut minus = params.to_vec();
            let up_ok = params[j] + h <= hi;
            let down_ok = params[j] - h >= lo;
            let (denominator, fp, fm);
            if up_ok && down_ok {
                plus[j] = params[j] + h;
                minus[j] = params[j] - h;
                denominator = h + h;
            } else if up_ok {
                plus[j] = params[j] + h;
                denominator = h;
            } else {
                minus[j] = params[j] - h;
                denominator = h;
            }
            fp = self.problem.model.evaluate(&plus, &self.xs);
            fm = self.problem.model.evaluate(&minus, &self.xs);
            for i in 0..n {
                let d = (fp[i] - fm[i]) / denominator;
                if !d.is_finite() {
                    let bad = if fp[i].is_finite() { minus } else { plus };
                    return Err(FitError::NonFinite { params: to_f64s(&bad) });
                }
                jac[(i, j)] = self.sqrt_w[i] * d;
            }
        }
        Ok(jac)
    }
}

fn sum_sq<T: Real>(r: &[T]) -> T {
    r.iter().fold(T::zero(), |acc, &v| acc + v * v)
}

/// Solves the symmetric system `a·x = b`, falling back to LU when `a` is not
/// numerically positive definite.
fn solve_spd<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> Option<DVector<T>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    a.clone().lu().solve(b)
}

/// Inverse of a symmetric positive semi-definite matrix through its
/// eigendecomposition; null directions get zero variance contribution.
fn psd_inverse<T: Real>(a: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    let sym = (a + a.transpose()) * T::lit(0.5);
    let eig = sym.symmetric_eigen();
    let max_ev = eig
        .eigenvalues
        .iter()
        .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m });
    let cutoff = max_ev * T::eps() * T::from_usize_lossy(n.max(1)) * T::lit(10.0);
    let mut inv = DMatrix::<T>::zeros(n, n);
    for k in 0..n {
        let ev = eig.eigenvalues[k];
        if ev > cutoff {
            let v = eig.eigenvectors.column(k);
            inv += (v * v.transpose()) / ev;
        }
    }
    (inv.clone() + inv.transpose()) * T::lit(0.5)
}

/// Fits the model by weighted least squares.
///
/// Returns a local minimizer; `converged` is false when the iteration budget
/// ran out before the step, decrease or gradient tolerance was met.
pub fn fit_least_squares<T: Real, M: CurveModel<T>>(
    problem: &CurveFitProblem<T, M>,
) -> Result<FitOutcome<T>, FitError> {
    let opts = problem.options;
    let eval = Evaluator::new(problem);
    let mut params = problem.initial_guess.clone();
    eval.clamp(&mut params);
    let mut r = eval
        .residuals(&params)
        .ok_or_else(|| FitError::NonFinite { params: to_f64s(&params) })?;
    let mut cost = sum_sq(&r);
    let step_tol = T::lit(opts.step_tolerance).max(T::eps() * T::lit(4.0));
    let decrease_tol = T::lit(opts.decrease_tolerance).max(T::eps() * T::lit(4.0));
    let grad_tol = T::lit(opts.gradient_tolerance);

    let m = params.len();
    let mut lambda = T::lit(1e-3);
    let mut converged = false;
    let mut small_decreases = 0;
    let mut iterations = 0;
    let mut jac = eval.jacobian(&params)?;

    while iterations < opts.max_iterations {
        iterations += 1;
        let rv = DVector::from_vec(r.clone());
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let grad = &jt * &rv;
        let gmax = grad.iter().fold(T::zero(), |acc, g| acc.max(g.abs()));
        if cost == T::zero() || gmax <= grad_tol * (T::one() + cost) {
            converged = true;
            break;
        }

        let mut accepted = false;
        let mut last_bad: Option<Vec<T>> = None;
        while lambda < T::lit(1e16) {
            let mut damped = jtj.clone();
            for k in 0..m {
                let d = jtj[(k, k)].max(T::lit(1e-12) * (T::one() + jtj[(k, k)]));
                damped[(k, k)] += lambda * d;
            }
            let Some(delta) = solve_spd(&damped, &grad) else {
                lambda *= T::lit(10.0);
                continue;
            };
            let mut trial: Vec<T> = params.iter().zip(delta.iter()).map(|(&p, &d)| p + d).collect();
            eval.clamp(&mut trial);
            match eval.residuals(&trial) {
                Some(rt) => {
                    let cost_t = sum_sq(&rt);
                    if cost_t <= cost {
                        let step_norm = trial
                            .iter()
                            .zip(&params)
                            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b))
                            .sqrt();
                        let p_norm = params.iter().fold(T::zero(), |acc, &a| acc + a * a).sqrt();
                        let rel_decrease = (cost - cost_t) / cost;
                        params = trial;
                        r = rt;
                        cost = cost_t;
                        lambda = (lambda / T::lit(10.0)).max(T::lit(1e-12));
                        accepted = true;
                        // A tiny decrease must repeat before it counts, so the
                        // final Gauss-Newton step still gets taken.
                        if rel_decrease <= decrease_tol {
                            small_decreases += 1;
                        } else {
                            small_decreases = 0;
                        }
                        if step_norm <= step_tol * (p_norm + step_tol) || small_decreases >= 2 {
                            converged = true;
                        }
                        break;
                    }
                    lambda *= T::lit(10.0);
                }
                None => {
                    last_bad = Some(trial);
                    lambda *= T::lit(10.0);
                }
            }
        }
        if !accepted {
            // No descent direction left: a minimum to working precision,
            // unless every trial was non-finite.
            if let Some(bad) = last_bad {
                if gmax > T::lit(1e-6) * (T::one() + cost) {
                    return Err(FitError::NonFinite { params: to_f64s(&bad) });
                }
            }
            converged = true;
            break;
        }
        jac = eval.jacobian(&params)?;
        if converged {
            break;
        }
    }

    let jt = jac.transpose();
    let mut cov = psd_inverse(&(&jt * &jac));
    let n = problem.data.len();
    if !opts.absolute_weights && n > m {
        cov *= cost / T::from_usize_lossy(n - m);
    }
    let covariance = (0..m).map(|i| (0..m).map(|j| cov[(i, j)]).collect()).collect();
    Ok(FitOutcome {
        params,
        covariance,
        residual_norm: cost.sqrt(),
        converged,
        iterations,
    })
}

/// Model `A·base^x + B`, parameters `[A, base, B]`.
pub fn exp_decay_model<T: Real>(p: &[T], x: T) -> T {
    p[0] * p[1].powf(x) + p[2]
}

/// Heuristic starting point for [`exp_decay_model`]: B from the last decile,
/// A from the first ordinate, the base from a log-linear regression of |y − B|.
pub fn exp_decay_guess<T: Real>(xs: &[T], ys: &[T]) -> [T; 3] {
    let n = ys.len();
    let tail = (n / 10).max(1);
    let b = stats::mean(&ys[n - tail..]);
    let a = ys[0] - b;
    let mut sx = T::zero();
    let mut sy = T::zero();
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    let mut cnt = T::zero();
    let floor = a.abs() * T::lit(1e-3);
    for (&x, &y) in xs.iter().zip(ys) {
        let d = (y - b).abs();
        if d > floor && d > T::zero() {
            let ly = d.ln();
            sx += x;
            sy += ly;
            sxx += x * x;
            sxy += x * ly;
            cnt += T::one();
        }
    }
    let mut base = T::lit(0.99);
    if cnt >= T::lit(2.0) {
        let den = cnt * sxx - sx * sx;
        if den.abs() > T::zero() {
            let slope = (cnt * sxy - sx * sy) / den;
            let candidate = slope.exp();
            if candidate.is_finite() && candidate > T::zero() && candidate < T::one() {
                base = candidate;
            }
        }
    }
    let base = base.min(T::one() - T::lit(1e-9)).max(T::lit(1e-6));
    [a, base, b]
}

/// Fits `A·base^x + B` with base bounded to (0, 1]. Every decay observable here
/// lies in [−1, 1], so |A| ≤ 2 and |B| ≤ 1; without these bounds a curve that
/// has barely decayed admits a runaway A with the base pinned near 1.
pub fn fit_exp_decay<T: Real>(data: Vec<DataPoint<T>>) -> Result<FitOutcome<T>, FitError> {
    let xs: Vec<T> = data.iter().map(|d| d.x).collect();
    let ys: Vec<T> = data.iter().map(|d| d.y).collect();
    if data.len() < 3 {
        return Err(FitError::Underdetermined { points: data.len(), params: 3 });
    }
    let guess = exp_decay_guess(&xs, &ys);
    let two = T::lit(2.0);
    let guess = [guess[0].max(-two).min(two), guess[1], guess[2].max(-T::one()).min(T::one())];
    let problem = CurveFitProblem::new(Pointwise(exp_decay_model::<T>), data, guess.to_vec())?
        .with_bounds(vec![(-two, two), (T::lit(1e-9), T::one()), (-T::one(), T::one())])?;
    fit_least_squares(&problem)
}

/// Sequence-level resampling plan: one group per sequence length, each group
/// holding `group_sizes[g]` random sequences drawn with replacement.
#[derive(Debug, Clone)]
pub struct ResamplePlan {
    pub group_sizes: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapSummary<T> {
    pub mean: T,
    pub std: T,
    /// 1.4826 × median absolute deviation; matches `std` for Gaussian spread
    /// but ignores resamples where a fit locked onto noise.
    pub robust_std: T,
    pub failed: usize,
    pub repeats: usize,
}

fn median<T: Real>(xs: &mut [T]) -> T {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / T::lit(2.0)
    }
}

fn median_absolute_deviation<T: Real>(xs: &[T]) -> T {
    let mut v = xs.to_vec();
    let m = median(&mut v);
    let mut dev: Vec<T> = xs.iter().map(|&x| (x - m).abs()).collect();
    median(&mut dev)
}

/// Bootstrap mean and standard deviation of `analysis` over resampled sequence
/// selections. Failed resamples are discarded and counted; more than half
/// failing is an error.
pub fn bootstrap_uncertainty<T, E, F>(
    plan: &ResamplePlan,
    analysis: F,
    repeats: usize,
) -> Result<BootstrapSummary<T>, FitError>
where
    T: Real,
    F: Fn(&[Vec<usize>]) -> Result<T, E> + Sync,
{
    if repeats < 2 {
        return Err(FitError::Invalid("bootstrap needs at least two repeats".into()));
    }
    let outcomes: Vec<Option<T>> = (0..repeats)
        .into_par_iter()
        .map(|rep| {
            let mut rng = seed::stream(plan.seed, "bootstrap", rep as u64);
            let selection: Vec<Vec<usize>> = plan
                .group_sizes
                .iter()
                .map(|&k| (0..k).map(|_| if k == 0 { 0 } else { rng.random_range(0..k) }).collect())
                .collect();
            analysis(&selection).ok().filter(|v| v.is_finite())
        })
        .collect();
    let ok: Vec<T> = outcomes.iter().filter_map(|o| *o).collect();
    let failed = repeats - ok.len();
    if failed * 2 > repeats {
        return Err(FitError::BootstrapFailed { failed, repeats });
    }
    Ok(BootstrapSummary {
        mean: stats::mean(&ok),
        std: stats::sample_std(&ok),
        robust_std: T::lit(1.4826) * median_absolute_deviation(&ok),
        failed,
        repeats,
    })
}
