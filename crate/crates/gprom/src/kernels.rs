//! Squared-exponential kernel, its analytic derivatives, and batch
//! kernel-matrix assembly.
//!
//! The derivative formulas are hard-coded closed forms (validated against
//! finite differences in the tests); only this one kernel family is
//! supported, which keeps the joint state/derivative covariance analytic.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters of one mode's squared-exponential kernel plus the
/// observation noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    /// Signal variance sigma^2 > 0, in squared state-amplitude units.
    pub signal_variance: f64,
    /// Lengthscale ell > 0, in time units.
    pub lengthscale: f64,
    /// Additive white-noise variance chi >= 0.
    pub noise_variance: f64,
}

impl KernelHyperparams {
    pub fn new(signal_variance: f64, lengthscale: f64, noise_variance: f64) -> Result<Self> {
        if !(signal_variance > 0.0 && signal_variance.is_finite()) {
            return Err(Error::InvalidHyperparams(format!(
                "signal variance must be positive, got {signal_variance}"
            )));
        }
        if !(lengthscale > 0.0 && lengthscale.is_finite()) {
            return Err(Error::InvalidHyperparams(format!(
                "lengthscale must be positive, got {lengthscale}"
            )));
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidHyperparams(format!(
                "noise variance must be nonnegative, got {noise_variance}"
            )));
        }
        Ok(Self {
            signal_variance,
            lengthscale,
            noise_variance,
        })
    }
}

/// Covariance blocks of the joint state/derivative process on a pair of
/// time grids: observations `t` (length m) and estimation points `t'`
/// (length m').
#[derive(Debug, Clone)]
pub struct KernelBlocks {
    /// kappa(t, t) + chi * I, m x m, symmetric positive definite for chi > 0.
    pub kyy: DMatrix<f64>,
    /// d1 kappa(t', t), m' x m.
    pub kzy: DMatrix<f64>,
    /// d1 d2 kappa(t', t'), m' x m', symmetric.
    pub kzz: DMatrix<f64>,
}

/// kappa(t1, t2) = sigma^2 exp(-(t1 - t2)^2 / (2 ell^2)).
pub fn kernel_eval(t1: f64, t2: f64, hp: &KernelHyperparams) -> f64 {
    let d = t1 - t2;
    let l2 = hp.lengthscale * hp.lengthscale;
    hp.signal_variance * (-0.5 * d * d / l2).exp()
}

/// Partial derivative of the kernel in its first argument.
pub fn kernel_d1(t1: f64, t2: f64, hp: &KernelHyperparams) -> f64 {
    let d = t1 - t2;
    let l2 = hp.lengthscale * hp.lengthscale;
    -hp.signal_variance * d / l2 * (-0.5 * d * d / l2).exp()
}

/// Mixed second partial d1 d2 of the kernel.
pub fn kernel_d1d2(t1: f64, t2: f64, hp: &KernelHyperparams) -> f64 {
    let d = t1 - t2;
    let l2 = hp.lengthscale * hp.lengthscale;
    hp.signal_variance * (1.0 / l2 - d * d / (l2 * l2)) * (-0.5 * d * d / l2).exp()
}

/// Kernel Gram matrix kappa(ta, tb) without any noise term.
pub fn kernel_matrix(ta: &[f64], tb: &[f64], hp: &KernelHyperparams) -> DMatrix<f64> {
    DMatrix::from_fn(ta.len(), tb.len(), |i, j| kernel_eval(ta[i], tb[j], hp))
}

/// Assemble the three covariance blocks used throughout the GP machinery.
pub fn assemble_blocks(
    t_obs: &[f64],
    t_est: &[f64],
    hp: &KernelHyperparams,
) -> Result<KernelBlocks> {
    if t_obs.is_empty() || t_est.is_empty() {
        return Err(Error::EmptyTimeVector);
    }
    let m = t_obs.len();
    let mut kyy = kernel_matrix(t_obs, t_obs, hp);
    for i in 0..m {
        kyy[(i, i)] += hp.noise_variance;
    }
    let kzy = DMatrix::from_fn(t_est.len(), m, |a, b| kernel_d1(t_est[a], t_obs[b], hp));
    let kzz = DMatrix::from_fn(t_est.len(), t_est.len(), |a, b| {
        kernel_d1d2(t_est[a], t_est[b], hp)
    });
    Ok(KernelBlocks { kyy, kzy, kzz })
}
