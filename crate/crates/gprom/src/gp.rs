//! Per-mode Gaussian-process regression: marginal-likelihood hyperparameter
//! fitting, smoothed state estimates, analytic derivative estimates, and the
//! square root of the generalized-least-squares weight matrix.
//!
//! Hyperparameters are fit by multi-start Nelder-Mead descent on
//! (log sigma^2, log ell, log chi) inside data-derived box bounds. The
//! contract is "best of the evaluated starts, locally converged"; the
//! marginal likelihood is nonconvex and no global claim is made.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{assemble_blocks, kernel_matrix, KernelHyperparams};
use crate::util::{halton, linspace};

/// Ceiling for the escalation of the numerical regularization constant.
const TAU_MAX: f64 = 1e-2;

/// How the observation-noise variance is treated during fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseFit {
    /// chi is a free hyperparameter.
    Optimize,
    /// chi is pinned to the given value (useful for interpolation tests).
    Fixed(f64),
}

/// Options for [`fit_hyperparameters`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of quasi-random (Halton) starting points.
    pub n_starts: usize,
    /// Simplex iterations allowed per start.
    pub max_iters: usize,
    /// Absolute simplex spread tolerance on the objective.
    pub ftol: f64,
    /// Noise-variance treatment.
    pub noise: NoiseFit,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_starts: 8,
            max_iters: 200,
            ftol: 1e-9,
            noise: NoiseFit::Optimize,
        }
    }
}

/// Observation grid plus the uniform estimation grid spanning it.
#[derive(Debug, Clone)]
pub struct EstimationGrid {
    /// Sorted, strictly increasing observation times (length m).
    pub t_obs: Vec<f64>,
    /// Uniform estimation times covering `[t_obs[0], t_obs[m-1]]` (length m').
    pub t_est: Vec<f64>,
}

impl EstimationGrid {
    /// Default estimation-grid size for `m` observations.
    pub fn default_size(m: usize) -> usize {
        4 * m
    }

    /// Build a uniform estimation grid with `m_est` points.
    pub fn uniform(t_obs: &[f64], m_est: usize) -> Result<Self> {
        if t_obs.is_empty() {
            return Err(Error::EmptyTimeVector);
        }
        if m_est < 2 {
            return Err(Error::InvalidConfig(
                "estimation grid needs at least two points".into(),
            ));
        }
        let mut sorted = t_obs.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "observation times must be distinct".into(),
            ));
        }
        let t_est = linspace(sorted[0], sorted[sorted.len() - 1], m_est);
        Ok(Self {
            t_obs: sorted,
            t_est,
        })
    }
}

/// Output of [`gp_fit`] for a single reduced mode.
#[derive(Debug, Clone)]
pub struct GpEstimate {
    /// Estimation times (length m').
    pub t_est: Vec<f64>,
    /// Smoothed state estimate at the estimation times.
    pub y_tilde: DVector<f64>,
    /// Time-derivative estimate at the estimation times.
    pub z_tilde: DVector<f64>,
    /// Symmetric square root of the weight matrix W^zz (m' x m').
    pub w_sqrt: DMatrix<f64>,
    /// Fitted kernel hyperparameters.
    pub hp: KernelHyperparams,
    /// Regularization constant actually used for the weight factorization.
    pub tau: f64,
}

/// Negative log marginal likelihood of the data under the kernel:
/// `0.5 y^T K^-1 y + 0.5 log|K| + (m/2) log 2pi` with `K = kappa(t,t) + chi I`.
pub fn neg_log_marginal_likelihood(
    hp: &KernelHyperparams,
    t_obs: &[f64],
    y: &DVector<f64>,
) -> Result<f64> {
    let m = t_obs.len();
    if m == 0 {
        return Err(Error::EmptyTimeVector);
    }
    if y.len() != m {
        return Err(Error::DimensionMismatch {
            context: "neg_log_marginal_likelihood",
            expected: m,
            found: y.len(),
        });
    }
    let mut k = kernel_matrix(t_obs, t_obs, hp);
    for i in 0..m {
        k[(i, i)] += hp.noise_variance;
    }
    let chol = k.cholesky().ok_or(Error::NumericallySingular)?;
    let l = chol.l();
    let w = l
        .solve_lower_triangular(y)
        .ok_or(Error::NumericallySingular)?;
    let quad = 0.5 * w.norm_squared();
    let logdet: f64 = (0..m).map(|i| l[(i, i)].ln()).sum();
    Ok(quad + logdet + 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Box bounds in log space, derived from the data.
struct LogBounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

fn log_bounds(t_sorted: &[f64], y: &DVector<f64>) -> Result<LogBounds> {
    let m = t_sorted.len();
    if m < 2 {
        return Err(Error::InvalidConfig(
            "hyperparameter fitting needs at least two observations".into(),
        ));
    }
    let span = t_sorted[m - 1] - t_sorted[0];
    let dt_min = t_sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min);
    if !(dt_min > 0.0) {
        return Err(Error::InvalidConfig(
            "observation times must be strictly increasing".into(),
        ));
    }
    let mean = y.mean();
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
    let second = y.norm_squared() / m as f64;
    // Anchor the variance bounds on the data variance; fall back to the
    // second moment for (near-)constant data, where the zero-mean GP must
    // still explain the offset, and to 1 for all-zero data.
    let scale = if var > 1e-10 * second {
        var
    } else if second > 0.0 {
        second
    } else {
        1.0
    };
    let ls = scale.ln();
    // The lengthscale cap must admit near-flat fits: for constant data the
    // GP mean's edge curvature scales as span/ell^2, so ell up to 50 spans
    // is needed before the derivative estimate drops below 1e-3 of the data.
    Ok(LogBounds {
        // Order: log sigma^2, log ell, log chi.
        lo: vec![ls - 12.0, dt_min.ln(), ls - 16.0],
        hi: vec![ls + 12.0, (50.0 * span).ln(), ls + 4.0],
    })
}

fn hp_from_point(x: &[f64], noise: &NoiseFit) -> KernelHyperparams {
    let chi = match noise {
        NoiseFit::Optimize => x[2].exp(),
        NoiseFit::Fixed(v) => *v,
    };
    KernelHyperparams {
        signal_variance: x[0].exp(),
        lengthscale: x[1].exp(),
        noise_variance: chi,
    }
}

/// Quasi-random starting points: Halton sequence mapped into the box.
fn starting_points(bounds: &LogBounds, n_starts: usize, dim: usize) -> Vec<Vec<f64>> {
    const BASES: [u64; 3] = [2, 3, 5];
    (1..=n_starts as u64)
        .map(|i| {
            (0..dim)
                .map(|d| {
                    let u = halton(i, BASES[d]);
                    bounds.lo[d] + u * (bounds.hi[d] - bounds.lo[d])
                })
                .collect()
        })
        .collect()
}

/// Nelder-Mead simplex descent with projection onto box bounds.
///
/// Returns the best point evaluated, which may be a simplex vertex rather
/// than a stationary point; all evaluations are reported through `track`.
fn nelder_mead<F>(
    f: &F,
    x0: &[f64],
    bounds: &LogBounds,
    max_iters: usize,
    ftol: f64,
    track: &mut dyn FnMut(&[f64], f64),
) where
    F: Fn(&[f64]) -> f64,
{
    let dim = x0.len();
    let clamp = |x: &mut Vec<f64>| {
        for d in 0..dim {
            x[d] = x[d].clamp(bounds.lo[d], bounds.hi[d]);
        }
    };
    let eval = |x: &Vec<f64>, track: &mut dyn FnMut(&[f64], f64)| {
        let v = f(x);
        track(x, v);
        v
    };

    // Initial simplex: the start plus a 10%-of-box step along each axis.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let mut first = x0.to_vec();
    clamp(&mut first);
    let f0 = eval(&first, track);
    simplex.push((first.clone(), f0));
    for d in 0..dim {
        let mut x = first.clone();
        let step = 0.1 * (bounds.hi[d] - bounds.lo[d]);
        x[d] = if x[d] + step <= bounds.hi[d] {
            x[d] + step
        } else {
            x[d] - step
        };
        let v = eval(&x, track);
        simplex.push((x, v));
    }

    for _ in 0..max_iters {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[dim].1;
        if (worst - best).abs() <= ftol * (1.0 + best.abs()) {
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; dim];
        for (x, _) in simplex.iter().take(dim) {
            for d in 0..dim {
                centroid[d] += x[d] / dim as f64;
            }
        }

        let blend = |a: f64| -> Vec<f64> {
            let mut x: Vec<f64> = (0..dim)
                .map(|d| centroid[d] + a * (centroid[d] - simplex[dim].0[d]))
                .collect();
            clamp(&mut x);
            x
        };

        let xr = blend(1.0);
        let fr = eval(&xr, track);
        if fr < simplex[0].1 {
            let xe = blend(2.0);
            let fe = eval(&xe, track);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let xc = blend(-0.5);
            let fc = eval(&xc, track);
            if fc < simplex[dim].1 {
                simplex[dim] = (xc, fc);
            } else {
                // Shrink toward the best vertex.
                let best_x = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    for d in 0..dim {
                        vertex.0[d] = 0.5 * (vertex.0[d] + best_x[d]);
                    }
                    vertex.1 = eval(&vertex.0, track);
                }
            }
        }
    }
}

/// Fit kernel hyperparameters by minimizing the negative log marginal
/// likelihood over the data-derived box, starting from `n_starts`
/// quasi-random points. The achieved objective is no worse than the
/// objective at any evaluated point, in particular at every start.
pub fn fit_hyperparameters(
    t_obs: &[f64],
    y: &DVector<f64>,
    config: &FitConfig,
) -> Result<KernelHyperparams> {
    let mut sorted = t_obs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let bounds_full = log_bounds(&sorted, y)?;
    let dim = match config.noise {
        NoiseFit::Optimize => 3,
        NoiseFit::Fixed(_) => 2,
    };
    let bounds = LogBounds {
        lo: bounds_full.lo[..dim].to_vec(),
        hi: bounds_full.hi[..dim].to_vec(),
    };

    let objective = |x: &[f64]| -> f64 {
        let hp = hp_from_point(x, &config.noise);
        match neg_log_marginal_likelihood(&hp, t_obs, y) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    };

    let mut best: Option<(Vec<f64>, f64)> = None;
    {
        let mut track = |x: &[f64], v: f64| {
            if v.is_finite() && best.as_ref().map_or(true, |(_, bv)| v < *bv) {
                best = Some((x.to_vec(), v));
            }
        };
        for start in starting_points(&bounds, config.n_starts.max(1), dim) {
            nelder_mead(
                &objective,
                &start,
                &bounds,
                config.max_iters,
                config.ftol,
                &mut track,
            );
        }
    }
    let (x, _) = best.ok_or(Error::AllStartsFailed)?;
    Ok(hp_from_point(&x, &config.noise))
}

/// Factor the regularized inverse-weight matrix `base + tau I` as
/// `Psi Xi Psi^T` and return `(W^zz)^{1/2} = Psi Xi^{-1/2} Psi^T`.
///
/// If any eigenvalue is nonpositive, tau is escalated by factors of 10 up
/// to [`TAU_MAX`] before giving up.
pub(crate) fn weight_sqrt(base: &DMatrix<f64>, tau0: f64) -> Result<(DMatrix<f64>, f64)> {
    let mut tau = tau0;
    loop {
        let m = base.nrows();
        let mut reg = base.clone();
        for i in 0..m {
            reg[(i, i)] += tau;
        }
        let eig = SymmetricEigen::new(reg);
        let min_eig = eig.eigenvalues.min();
        if min_eig > 0.0 {
            let mut scaled = eig.eigenvectors.clone();
            for (j, mut col) in scaled.column_iter_mut().enumerate() {
                col *= 1.0 / eig.eigenvalues[j].sqrt();
            }
            let w = &scaled * eig.eigenvectors.transpose();
            // Symmetrize away roundoff.
            let w_sym = 0.5 * (&w + w.transpose());
            return Ok((w_sym, tau));
        }
        if tau >= TAU_MAX {
            return Err(Error::NonPositiveEigenvalue { tau });
        }
        tau = (tau * 10.0).min(TAU_MAX);
    }
}

/// Gaussian-process regression with derivative estimation for one mode.
///
/// Fits hyperparameters, then produces the smoothed state `y_tilde`, the
/// derivative estimate `z_tilde`, and the weight-matrix square root on the
/// estimation grid. `tau` is the initial numerical regularization for the
/// weight factorization (1e-8 unless the data demand more).
pub fn gp_fit(
    t_obs: &[f64],
    y: &DVector<f64>,
    t_est: &[f64],
    tau: f64,
    config: &FitConfig,
) -> Result<GpEstimate> {
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig("tau must be positive".into()));
    }
    let hp = fit_hyperparameters(t_obs, y, config)?;
    gp_fit_with_hyperparams(t_obs, y, t_est, tau, &hp)
}

/// The estimation half of [`gp_fit`] with hyperparameters already chosen.
pub fn gp_fit_with_hyperparams(
    t_obs: &[f64],
    y: &DVector<f64>,
    t_est: &[f64],
    tau: f64,
    hp: &KernelHyperparams,
) -> Result<GpEstimate> {
    let blocks = assemble_blocks(t_obs, t_est, hp)?;
    if y.len() != t_obs.len() {
        return Err(Error::DimensionMismatch {
            context: "gp_fit",
            expected: t_obs.len(),
            found: y.len(),
        });
    }
    // Cholesky with back substitution everywhere; Kyy is never inverted.
    let chol = blocks.kyy.clone().cholesky().ok_or(Error::NumericallySingular)?;
    let alpha = chol.solve(y);
    let y_tilde = kernel_matrix(t_est, t_obs, hp) * &alpha;
    let z_tilde = &blocks.kzy * &alpha;

    let c = &blocks.kzy * chol.solve(&blocks.kzy.transpose());
    let base = &blocks.kzz - 0.5 * (&c + c.transpose());
    let (w_sqrt, tau_used) = weight_sqrt(&base, tau)?;

    Ok(GpEstimate {
        t_est: t_est.to_vec(),
        y_tilde,
        z_tilde,
        w_sqrt,
        hp: *hp,
        tau: tau_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOG_2PI: f64 = 1.837_877_066_409_345_5;

    fn hp(sv: f64, ls: f64, nv: f64) -> KernelHyperparams {
        KernelHyperparams::new(sv, ls, nv).unwrap()
    }

    #[test]
    fn nll_single_zero_observation() {
        // Quadratic term vanishes; 0.5 log(2pi) remains.
        let v = neg_log_marginal_likelihood(&hp(1.0, 1.0, 0.0), &[0.0], &DVector::from_vec(vec![0.0]))
            .unwrap();
        assert!((v - 0.5 * LOG_2PI).abs() < 1e-12);
        assert!((v - 0.918_938_5).abs() < 1e-6);
    }

    #[test]
    fn nll_single_unit_observation() {
        let v = neg_log_marginal_likelihood(&hp(0.4, 1.0, 0.6), &[0.0], &DVector::from_vec(vec![1.0]))
            .unwrap();
        assert!((v - (0.5 + 0.5 * LOG_2PI)).abs() < 1e-12);
        assert!((v - 1.418_938_5).abs() < 1e-6);
    }

    #[test]
    fn nll_zero_data_leaves_logdet_plus_constant() {
        let t = [0.0, 0.2, 0.5, 0.9, 1.4];
        let k = hp(1.3, 0.4, 0.2);
        let v =
            neg_log_marginal_likelihood(&k, &t, &DVector::zeros(t.len())).unwrap();
        // Independent route: determinant via LU.
        let mut km = kernel_matrix(&t, &t, &k);
        for i in 0..t.len() {
            km[(i, i)] += k.noise_variance;
        }
        let expected = 0.5 * km.determinant().ln() + 0.5 * t.len() as f64 * LOG_2PI;
        assert!((v - expected).abs() < 1e-10);
    }

    #[test]
    fn nll_fails_on_singular_gram() {
        // Duplicate times with zero noise make the Gram matrix singular.
        let t = [0.5, 0.5];
        let err = neg_log_marginal_likelihood(&hp(1.0, 1.0, 0.0), &t, &DVector::from_vec(vec![1.0, 1.0]));
        assert!(matches!(err, Err(Error::NumericallySingular)));
    }

    #[test]
    fn estimation_grid_spans_observations() {
        let g = EstimationGrid::uniform(&[0.3, 0.0, 1.2, 0.7], 9).unwrap();
        assert_eq!(g.t_est.len(), 9);
        assert_eq!(g.t_est[0], 0.0);
        assert_eq!(g.t_est[8], 1.2);
        let h = g.t_est[1] - g.t_est[0];
        for w in g.t_est.windows(2) {
            assert!((w[1] - w[0] - h).abs() < 1e-12);
        }
    }

    #[test]
    fn estimation_grid_rejects_duplicates() {
        assert!(EstimationGrid::uniform(&[0.0, 0.0, 1.0], 4).is_err());
    }

    fn sin_data(m: usize) -> (Vec<f64>, DVector<f64>) {
        let t = linspace(0.0, 1.0, m);
        let y = DVector::from_iterator(m, t.iter().map(|&ti| (2.0 * std::f64::consts::PI * ti).sin()));
        (t, y)
    }

    #[test]
    fn fit_noise_free_sine_finds_small_noise_and_reproduces_data() {
        let (t, y) = sin_data(50);
        let hp = fit_hyperparameters(&t, &y, &FitConfig::default()).unwrap();
        assert!(
            hp.noise_variance <= 1e-4 * hp.signal_variance,
            "chi = {:e}, sigma2 = {:e}",
            hp.noise_variance,
            hp.signal_variance
        );
        let est = gp_fit_with_hyperparams(&t, &y, &t, 1e-8, &hp).unwrap();
        let rel = (&est.y_tilde - &y).norm() / y.norm();
        assert!(rel <= 1e-2, "relative reproduction error {rel:e}");
    }

    #[test]
    fn fit_objective_not_worse_than_any_start() {
        let (t, y) = sin_data(30);
        let cfg = FitConfig::default();
        let fitted = fit_hyperparameters(&t, &y, &cfg).unwrap();
        let achieved = neg_log_marginal_likelihood(&fitted, &t, &y).unwrap();

        let bounds = log_bounds(&t, &y).unwrap();
        for start in starting_points(&bounds, cfg.n_starts, 3) {
            let hp0 = hp_from_point(&start, &NoiseFit::Optimize);
            if let Ok(v) = neg_log_marginal_likelihood(&hp0, &t, &y) {
                assert!(achieved <= v + 1e-9, "start beats fit: {v} < {achieved}");
            }
        }
    }

    #[test]
    fn constant_data_recovered_by_posterior_mean() {
        let t = linspace(0.0, 2.0, 25);
        let c = -3.7;
        let y = DVector::from_element(25, c);
        let g = EstimationGrid::uniform(&t, 60).unwrap();
        let est = gp_fit(&g.t_obs, &y, &g.t_est, 1e-8, &FitConfig::default()).unwrap();
        for v in est.y_tilde.iter() {
            assert!((v - c).abs() <= 1e-3 * c.abs(), "y_tilde {v} vs {c}");
        }
        // Derivative of a constant is (nearly) zero.
        for z in est.z_tilde.iter() {
            assert!(z.abs() <= 1e-3 * c.abs(), "z_tilde {z}");
        }
    }

    #[test]
    fn interpolation_limit_with_fixed_zero_noise() {
        let t = linspace(0.0, 1.0, 8);
        let y = DVector::from_iterator(8, t.iter().map(|&ti| (3.0 * ti).cos()));
        let cfg = FitConfig {
            noise: NoiseFit::Fixed(0.0),
            ..FitConfig::default()
        };
        let est = gp_fit(&t, &y, &t, 1e-8, &cfg).unwrap();
        let rel = (&est.y_tilde - &y).norm() / y.norm();
        assert!(rel <= 1e-8, "interpolation error {rel:e}");
    }

    #[test]
    fn linear_data_derivative_near_slope() {
        let t = linspace(0.0, 1.0, 30);
        let y = DVector::from_iterator(30, t.iter().map(|&ti| 2.0 * ti + 1.0));
        let g = EstimationGrid::uniform(&t, 120).unwrap();
        let est = gp_fit(&g.t_obs, &y, &g.t_est, 1e-8, &FitConfig::default()).unwrap();
        for (j, &tj) in g.t_est.iter().enumerate() {
            if tj >= 0.2 && tj <= 0.8 {
                assert!(
                    (est.z_tilde[j] - 2.0).abs() <= 0.05,
                    "z_tilde({tj}) = {}",
                    est.z_tilde[j]
                );
            }
        }
    }

    #[test]
    fn derivative_consistent_with_central_differences_of_state() {
        let (t, y) = sin_data(40);
        let g = EstimationGrid::uniform(&t, 240).unwrap();
        let est = gp_fit(&g.t_obs, &y, &g.t_est, 1e-8, &FitConfig::default()).unwrap();
        let h = g.t_est[1] - g.t_est[0];
        let zmax = est.z_tilde.amax();
        for j in 1..g.t_est.len() - 1 {
            let fd = (est.y_tilde[j + 1] - est.y_tilde[j - 1]) / (2.0 * h);
            assert!(
                (fd - est.z_tilde[j]).abs() <= 1e-3 * zmax,
                "j={j}: fd={fd}, z={}",
                est.z_tilde[j]
            );
        }
    }

    #[test]
    fn weight_sqrt_is_symmetric_and_inverts_regularized_matrix() {
        let (t, y) = sin_data(25);
        let g = EstimationGrid::uniform(&t, 60).unwrap();
        let est = gp_fit(&g.t_obs, &y, &g.t_est, 1e-8, &FitConfig::default()).unwrap();
        let asym = (&est.w_sqrt - est.w_sqrt.transpose()).abs().max();
        assert!(asym < 1e-12, "asymmetry {asym:e}");

        // (w_sqrt^2)^-1 recovers Kzz - sym(C) + tau I.
        let blocks = assemble_blocks(&g.t_obs, &g.t_est, &est.hp).unwrap();
        let chol = blocks.kyy.clone().cholesky().unwrap();
        let c = &blocks.kzy * chol.solve(&blocks.kzy.transpose());
        let mut base = &blocks.kzz - 0.5 * (&c + c.transpose());
        for i in 0..base.nrows() {
            base[(i, i)] += est.tau;
        }
        let w = &est.w_sqrt * &est.w_sqrt;
        let prod = &w * &base;
        let id = DMatrix::<f64>::identity(base.nrows(), base.ncols());
        let rel = (&prod - &id).norm() / id.norm();
        assert!(rel < 1e-6, "W^zz * (W^zz)^-1 deviates from I by {rel:e}");
    }

    #[test]
    fn weight_sqrt_escalates_tau() {
        // base has eigenvalue -1e-6; tau must grow to 1e-5 before all
        // eigenvalues are positive.
        let base = DMatrix::from_diagonal(&DVector::from_vec(vec![-1e-6, 1.0]));
        let (_, tau) = weight_sqrt(&base, 1e-8).unwrap();
        assert!((tau - 1e-5).abs() < 1e-18);

        let hopeless = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0]));
        assert!(matches!(
            weight_sqrt(&hopeless, 1e-8),
            Err(Error::NonPositiveEigenvalue { .. })
        ));
    }

    #[test]
    fn gp_fit_is_deterministic() {
        let (t, y) = sin_data(20);
        let g = EstimationGrid::uniform(&t, 50).unwrap();
        let a = gp_fit(&g.t_obs, &y, &g.t_est, 1e-8, &FitConfig::default()).unwrap();
        let b = gp_fit(&g.t_obs, &y, &g.t_est, 1e-8, &FitConfig::default()).unwrap();
        assert_eq!(a.hp.signal_variance.to_bits(), b.hp.signal_variance.to_bits());
        assert_eq!(a.hp.lengthscale.to_bits(), b.hp.lengthscale.to_bits());
        assert_eq!(a.hp.noise_variance.to_bits(), b.hp.noise_variance.to_bits());
        assert_eq!(a.y_tilde, b.y_tilde);
        assert_eq!(a.z_tilde, b.z_tilde);
        assert_eq!(a.w_sqrt, b.w_sqrt);
    }
}
