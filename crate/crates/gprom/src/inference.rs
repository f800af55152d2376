//! Closed-form operator posterior, trajectory / mode stacking, and
//! posterior sampling.
//!
//! The posterior mean is always computed from the stacked 2-norm
//! least-squares system via a Householder QR factorization; the normal
//! equations are never solved for the mean. The covariance is the inverse
//! of the regularized Gram matrix, obtained through its Cholesky
//! factorization.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::util::derive_seed;

/// Diagonal of the Gaussian prior scale over one operator row.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorVariance(pub DVector<f64>);

impl PriorVariance {
    /// All entries tied to a single scalar.
    pub fn scalar(gamma: f64, d: usize) -> Result<Self> {
        if gamma < 0.0 || !gamma.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "prior variance must be nonnegative, got {gamma}"
            )));
        }
        Ok(Self(DVector::from_element(d, gamma)))
    }

    pub fn from_entries(gamma: DVector<f64>) -> Result<Self> {
        if gamma.iter().any(|g| *g < 0.0 || !g.is_finite()) {
            return Err(Error::InvalidConfig(
                "prior variance entries must be nonnegative".into(),
            ));
        }
        Ok(Self(gamma))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Gaussian posterior over one operator row (or a shared parameter vector).
#[derive(Debug, Clone)]
pub struct OperatorPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl OperatorPosterior {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Elementwise posterior standard deviations.
    pub fn std(&self) -> DVector<f64> {
        DVector::from_fn(self.dim(), |i, _| self.covariance[(i, i)].sqrt())
    }
}

/// Everything one generalized least-squares solve needs: the data matrix,
/// the (possibly stacked) derivative estimates, and the weight-matrix
/// square root.
#[derive(Debug, Clone)]
pub struct RegressionBundle {
    /// n x d data matrix (n = m' or a stack of m' blocks).
    pub data_matrix: DMatrix<f64>,
    /// Length-n derivative estimate.
    pub z_tilde: DVector<f64>,
    /// n x n symmetric weight square root.
    pub w_sqrt: DMatrix<f64>,
}

impl RegressionBundle {
    pub fn new(data_matrix: DMatrix<f64>, z_tilde: DVector<f64>, w_sqrt: DMatrix<f64>) -> Result<Self> {
        let n = data_matrix.nrows();
        if z_tilde.len() != n {
            return Err(Error::DimensionMismatch {
                context: "bundle z_tilde rows",
                expected: n,
                found: z_tilde.len(),
            });
        }
        if w_sqrt.nrows() != n || w_sqrt.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "bundle w_sqrt shape",
                expected: n,
                found: w_sqrt.nrows().max(w_sqrt.ncols()),
            });
        }
        Ok(Self {
            data_matrix,
            z_tilde,
            w_sqrt,
        })
    }

    pub fn width(&self) -> usize {
        self.data_matrix.ncols()
    }
}

/// Least-squares solve of a tall stacked system via Householder QR.
/// Returns `None` when the triangular factor is numerically singular.
fn qr_least_squares(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let d = a.ncols();
    let qr = a.qr();
    let r = qr.r();
    let max_diag = (0..d).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    if max_diag == 0.0 {
        return None;
    }
    let tol = max_diag * 1e-13 * d as f64;
    if (0..d).any(|i| r[(i, i)].abs() <= tol) {
        return None;
    }
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb)
}

/// Posterior over one operator row given a regression bundle and prior
/// scale. The mean minimizes
/// `|| W^{1/2} (D eta - z) ||^2 + || Gamma eta ||^2`
/// through the stacked 2-norm system; the covariance is
/// `(D^T W D + Gamma^T Gamma)^{-1}`.
pub fn op_post(bundle: &RegressionBundle, gamma: &PriorVariance) -> Result<OperatorPosterior> {
    let d = bundle.width();
    if gamma.len() != d {
        return Err(Error::DimensionMismatch {
            context: "op_post prior width",
            expected: d,
            found: gamma.len(),
        });
    }
    let n = bundle.data_matrix.nrows();
    let weighted = &bundle.w_sqrt * &bundle.data_matrix;
    let weighted_z = &bundle.w_sqrt * &bundle.z_tilde;

    // Stacked system [W^{1/2} D; Gamma] eta = [W^{1/2} z; 0].
    let mut stacked = DMatrix::zeros(n + d, d);
    stacked.view_mut((0, 0), (n, d)).copy_from(&weighted);
    for i in 0..d {
        stacked[(n + i, i)] = gamma.0[i];
    }
    let mut rhs = DVector::zeros(n + d);
    rhs.rows_mut(0, n).copy_from(&weighted_z);

    let mean = qr_least_squares(stacked, &rhs).ok_or(Error::SingularSystem)?;

    // Gram matrix D^T W D + Gamma^T Gamma, inverted via Cholesky.
    let mut gram = weighted.transpose() * &weighted;
    for i in 0..d {
        gram[(i, i)] += gamma.0[i] * gamma.0[i];
    }
    let covariance = gram.cholesky().ok_or(Error::SingularSystem)?.inverse();
    // Cholesky inverse is symmetric up to roundoff; enforce it exactly.
    let covariance = 0.5 * (&covariance + covariance.transpose());

    Ok(OperatorPosterior { mean, covariance })
}

/// [`op_post`] applied to each row independently; errors carry the row
/// index that produced them.
pub fn op_post_all(
    bundles: &[RegressionBundle],
    gammas: &[PriorVariance],
) -> Result<Vec<OperatorPosterior>> {
    if bundles.len() != gammas.len() {
        return Err(Error::DimensionMismatch {
            context: "op_post_all rows",
            expected: bundles.len(),
            found: gammas.len(),
        });
    }
    bundles
        .iter()
        .zip(gammas)
        .enumerate()
        .map(|(row, (bundle, gamma))| {
            op_post(bundle, gamma).map_err(|e| Error::Row {
                row,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Stack per-trajectory regression data for one mode: data matrices and
/// derivative estimates row-stack, weight square roots become block
/// diagonal.
pub fn stack_trajectories(per_traj: &[RegressionBundle]) -> Result<RegressionBundle> {
    if per_traj.is_empty() {
        return Err(Error::InvalidConfig("no trajectories to stack".into()));
    }
    let d = per_traj[0].width();
    if per_traj.iter().any(|b| b.width() != d) {
        return Err(Error::DimensionMismatch {
            context: "stack_trajectories width",
            expected: d,
            found: per_traj.iter().map(|b| b.width()).find(|&w| w != d).unwrap(),
        });
    }
    let total: usize = per_traj.iter().map(|b| b.data_matrix.nrows()).sum();
    let mut data = DMatrix::zeros(total, d);
    let mut z = DVector::zeros(total);
    let mut w = DMatrix::zeros(total, total);
    let mut at = 0;
    for b in per_traj {
        let n = b.data_matrix.nrows();
        data.view_mut((at, 0), (n, d)).copy_from(&b.data_matrix);
        z.rows_mut(at, n).copy_from(&b.z_tilde);
        w.view_mut((at, at), (n, n)).copy_from(&b.w_sqrt);
        at += n;
    }
    RegressionBundle::new(data, z, w)
}

/// Stack per-mode derivative estimates and weights for the shared-parameter
/// ODE inference. `structure_rows` must contain the mode-major rows of the
/// structure matrix evaluated on the estimation grid: the first m' rows
/// belong to mode 1, the next m' to mode 2, and so on.
pub fn stack_modes_for_ode(
    per_mode: &[(DVector<f64>, DMatrix<f64>)],
    structure_rows: DMatrix<f64>,
) -> Result<RegressionBundle> {
    if per_mode.is_empty() {
        return Err(Error::InvalidConfig("no modes to stack".into()));
    }
    let total: usize = per_mode.iter().map(|(z, _)| z.len()).sum();
    if structure_rows.nrows() != total {
        return Err(Error::DimensionMismatch {
            context: "stack_modes_for_ode rows",
            expected: total,
            found: structure_rows.nrows(),
        });
    }
    let mut z = DVector::zeros(total);
    let mut w = DMatrix::zeros(total, total);
    let mut at = 0;
    for (z_i, w_i) in per_mode {
        let n = z_i.len();
        if w_i.nrows() != n || w_i.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "stack_modes_for_ode weight shape",
                expected: n,
                found: w_i.nrows().max(w_i.ncols()),
            });
        }
        z.rows_mut(at, n).copy_from(z_i);
        w.view_mut((at, at), (n, n)).copy_from(w_i);
        at += n;
    }
    RegressionBundle::new(structure_rows, z, w)
}

/// Precomputed Cholesky factors for repeated operator-matrix sampling.
pub struct OperatorSampler {
    rows: Vec<(DVector<f64>, DMatrix<f64>)>,
    width: usize,
}

impl OperatorSampler {
    pub fn new(posteriors: &[OperatorPosterior]) -> Result<Self> {
        if posteriors.is_empty() {
            return Err(Error::InvalidConfig("no posteriors to sample".into()));
        }
        let width = posteriors[0].dim();
        let rows = posteriors
            .iter()
            .map(|p| {
                if p.dim() != width {
                    return Err(Error::DimensionMismatch {
                        context: "sampler row width",
                        expected: width,
                        found: p.dim(),
                    });
                }
                let chol = p
                    .covariance
                    .clone()
                    .cholesky()
                    .ok_or(Error::CovarianceNotPositiveDefinite)?;
                Ok((p.mean.clone(), chol.l()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows, width })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// One operator matrix draw; row i is mean_i + L_i zeta with
    /// independent standard normal zeta.
    pub fn sample(&self, rng: &mut ChaCha12Rng) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows.len(), self.width);
        for (i, (mean, l)) in self.rows.iter().enumerate() {
            let zeta = DVector::from_fn(self.width, |_, _| StandardNormal.sample(rng));
            let row = mean + l * zeta;
            out.row_mut(i).copy_from(&row.transpose());
        }
        out
    }
}

/// Draw one operator matrix (row i from N(mean_i, Sigma_i)) with an
/// explicit seed.
pub fn sample_operator_matrix(
    posteriors: &[OperatorPosterior],
    rng_seed: u64,
) -> Result<DMatrix<f64>> {
    let sampler = OperatorSampler::new(posteriors)?;
    let mut rng = ChaCha12Rng::seed_from_u64(rng_seed);
    Ok(sampler.sample(&mut rng))
}

/// Seed for the k-th Monte Carlo sample of a batch.
pub fn sample_seed(base: u64, k: usize) -> u64 {
    derive_seed(base, k as u64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;

    fn identity_bundle(z: DVector<f64>) -> RegressionBundle {
        let d = z.len();
        RegressionBundle::new(DMatrix::identity(d, d), z, DMatrix::identity(d, d)).unwrap()
    }

    fn random_spd_sqrt(n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> DMatrix<f64> {
        // Orthogonalize a random matrix, then scale by random positive roots.
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let q = a.qr().q();
        let lam = DVector::from_fn(n, |_, _| rng.random_range(0.5..2.0f64).sqrt());
        let mut scaled = q.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= lam[j];
        }
        let w = &scaled * q.transpose();
        0.5 * (&w + w.transpose())
    }

    fn random_instance(
        n: usize,
        d: usize,
        gamma: f64,
        seed: u64,
    ) -> (RegressionBundle, PriorVariance) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let z = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let w_sqrt = random_spd_sqrt(n, &mut rng);
        (
            RegressionBundle::new(data, z, w_sqrt).unwrap(),
            PriorVariance::scalar(gamma, d).unwrap(),
        )
    }

    /// Normal-equations oracle: mean = (D^T W D + G^T G)^-1 D^T W z by
    /// explicit inversion.
    fn normal_equations_oracle(b: &RegressionBundle, gamma: &PriorVariance) -> DVector<f64> {
        let w = &b.w_sqrt * &b.w_sqrt;
        let d = b.width();
        let mut gram = b.data_matrix.transpose() * &w * &b.data_matrix;
        for i in 0..d {
            gram[(i, i)] += gamma.0[i] * gamma.0[i];
        }
        let inv = gram.try_inverse().unwrap();
        inv * (b.data_matrix.transpose() * &w * &b.z_tilde)
    }

    #[test]
    fn identity_regression_returns_data() {
        let z = DVector::from_row_slice(&[0.3, -1.2, 0.8]);
        let bundle = identity_bundle(z.clone());
        let gamma = PriorVariance::scalar(0.0, 3).unwrap();
        let post = op_post(&bundle, &gamma).unwrap();
        assert!((post.mean - &z).abs().max() < 1e-13);
        let id = DMatrix::<f64>::identity(3, 3);
        assert!((post.covariance - id).abs().max() < 1e-12);
    }

    #[test]
    fn huge_prior_shrinks_mean_to_zero() {
        let (bundle, _) = random_instance(12, 5, 0.0, 1);
        let gamma = PriorVariance::scalar(1e8, 5).unwrap();
        let post = op_post(&bundle, &gamma).unwrap();
        assert!(post.mean.norm() <= 1e-6 * bundle.z_tilde.norm());
    }

    #[test]
    fn mean_matches_normal_equations_oracle() {
        let (bundle, gamma) = random_instance(12, 5, 0.3, 7);
        let post = op_post(&bundle, &gamma).unwrap();
        let oracle = normal_equations_oracle(&bundle, &gamma);
        let rel = (&post.mean - &oracle).norm() / oracle.norm();
        assert!(rel < 1e-8, "relative deviation {rel:e}");
    }

    #[test]
    fn covariance_inverts_gram_and_gradient_is_stationary() {
        let (bundle, gamma) = random_instance(20, 6, 0.2, 11);
        let post = op_post(&bundle, &gamma).unwrap();

        let w = &bundle.w_sqrt * &bundle.w_sqrt;
        let mut gram = bundle.data_matrix.transpose() * &w * &bundle.data_matrix;
        for i in 0..6 {
            gram[(i, i)] += gamma.0[i] * gamma.0[i];
        }
        let prod = &post.covariance * &gram;
        let id = DMatrix::<f64>::identity(6, 6);
        assert!((prod - &id).norm() / id.norm() < 1e-8);

        // Objective gradient at the mean: 2 (Gram mu - D^T W z) = 0.
        let grad = &gram * &post.mean - bundle.data_matrix.transpose() * &w * &bundle.z_tilde;
        let scale = gram.norm() * post.mean.norm() + 1.0;
        assert!(grad.norm() <= 1e-8 * scale);

        // Consistency identity: mean = Sigma D^T W z.
        let alt = &post.covariance * (bundle.data_matrix.transpose() * &w * &bundle.z_tilde);
        assert!((alt - &post.mean).norm() / post.mean.norm() < 1e-8);
    }

    #[test]
    fn rank_deficient_without_prior_is_singular() {
        // Two identical columns, gamma = 0.
        let mut data = DMatrix::zeros(6, 2);
        for i in 0..6 {
            data[(i, 0)] = i as f64;
            data[(i, 1)] = i as f64;
        }
        let bundle = RegressionBundle::new(
            data,
            DVector::from_element(6, 1.0),
            DMatrix::identity(6, 6),
        )
        .unwrap();
        let gamma = PriorVariance::scalar(0.0, 2).unwrap();
        assert!(matches!(op_post(&bundle, &gamma), Err(Error::SingularSystem)));
        // A positive prior regularizes it.
        let gamma = PriorVariance::scalar(0.5, 2).unwrap();
        assert!(op_post(&bundle, &gamma).is_ok());
    }

    #[test]
    fn op_post_all_is_elementwise_and_tags_rows() {
        let (b1, g1) = random_instance(10, 4, 0.1, 21);
        let (b2, g2) = random_instance(10, 4, 0.4, 22);
        let all = op_post_all(&[b1.clone(), b2.clone()], &[g1.clone(), g2.clone()]).unwrap();
        let p1 = op_post(&b1, &g1).unwrap();
        let p2 = op_post(&b2, &g2).unwrap();
        assert_eq!(all[0].mean, p1.mean);
        assert_eq!(all[1].mean, p2.mean);

        // Duplicated bundles give identical posteriors.
        let dup = op_post_all(&[b1.clone(), b1.clone()], &[g1.clone(), g1.clone()]).unwrap();
        assert_eq!(dup[0].mean, dup[1].mean);
        assert_eq!(dup[0].covariance, dup[1].covariance);

        // Permuting rows permutes outputs.
        let swapped = op_post_all(&[b2, b1], &[g2, g1]).unwrap();
        assert_eq!(swapped[0].mean, all[1].mean);
        assert_eq!(swapped[1].mean, all[0].mean);

        // Row tagging on failure.
        let bad = RegressionBundle::new(
            DMatrix::zeros(3, 2),
            DVector::zeros(3),
            DMatrix::identity(3, 3),
        )
        .unwrap();
        let gz = PriorVariance::scalar(0.0, 2).unwrap();
        let (good_b, good_g) = random_instance(8, 2, 0.1, 33);
        let err = op_post_all(&[good_b, bad], &[good_g, gz]).unwrap_err();
        assert!(matches!(err, Error::Row { row: 1, .. }));
    }

    #[test]
    fn stacking_single_bundle_is_identity() {
        let (b, _) = random_instance(9, 3, 0.0, 41);
        let stacked = stack_trajectories(std::slice::from_ref(&b)).unwrap();
        assert_eq!(stacked.data_matrix, b.data_matrix);
        assert_eq!(stacked.z_tilde, b.z_tilde);
        assert_eq!(stacked.w_sqrt, b.w_sqrt);
    }

    #[test]
    fn stacked_objective_equals_sum_of_per_trajectory_objectives() {
        let (b1, _) = random_instance(7, 3, 0.0, 51);
        let (b2, _) = random_instance(9, 3, 0.0, 52);
        let stacked = stack_trajectories(&[b1.clone(), b2.clone()]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(53);
        let eta = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let res = |b: &RegressionBundle| {
            (&b.w_sqrt * (&b.data_matrix * &eta - &b.z_tilde)).norm_squared()
        };
        let sum = res(&b1) + res(&b2);
        let total = res(&stacked);
        assert!((sum - total).abs() < 1e-10 * (1.0 + sum));

        // Block-diagonal square root squared equals blockwise squares.
        let w2 = &stacked.w_sqrt * &stacked.w_sqrt;
        let w1sq = &b1.w_sqrt * &b1.w_sqrt;
        assert!((w2.view((0, 0), (7, 7)) - w1sq).abs().max() < 1e-12);
        assert!(w2.view((0, 7), (7, 9)).abs().max() < 1e-15);
    }

    #[test]
    fn stack_trajectories_rejects_mismatched_width() {
        let (b1, _) = random_instance(7, 3, 0.0, 61);
        let (b2, _) = random_instance(7, 4, 0.0, 62);
        assert!(stack_trajectories(&[b1, b2]).is_err());
    }

    #[test]
    fn ode_stack_single_mode_is_plain_bundle() {
        let (b, g) = random_instance(10, 4, 0.2, 71);
        let stacked = stack_modes_for_ode(
            &[(b.z_tilde.clone(), b.w_sqrt.clone())],
            b.data_matrix.clone(),
        )
        .unwrap();
        let p0 = op_post(&b, &g).unwrap();
        let p1 = op_post(&stacked, &g).unwrap();
        assert_eq!(p0.mean, p1.mean);
    }

    #[test]
    fn ode_stack_zero_derivatives_give_zero_mean() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(81);
        let rows = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-1.0..1.0));
        let per_mode = vec![
            (DVector::zeros(6), DMatrix::identity(6, 6)),
            (DVector::zeros(6), DMatrix::identity(6, 6)),
        ];
        let bundle = stack_modes_for_ode(&per_mode, rows).unwrap();
        let post = op_post(&bundle, &PriorVariance::scalar(0.5, 3).unwrap()).unwrap();
        assert!(post.mean.abs().max() < 1e-12);
    }

    #[test]
    fn row_independence_of_posteriors() {
        let (b1, g1) = random_instance(10, 4, 0.1, 91);
        let (mut b2, g2) = random_instance(10, 4, 0.1, 92);
        let before = op_post_all(&[b1.clone(), b2.clone()], &[g1.clone(), g2.clone()]).unwrap();
        b2.z_tilde[3] += 10.0;
        let after = op_post_all(&[b1, b2], &[g1, g2]).unwrap();
        // Row 0 bit-identical, row 1 changed.
        assert_eq!(before[0].mean, after[0].mean);
        assert_eq!(before[0].covariance, after[0].covariance);
        assert_ne!(before[1].mean, after[1].mean);
    }

    #[test]
    fn degenerate_covariance_sampling_returns_mean() {
        let post = OperatorPosterior {
            mean: DVector::from_row_slice(&[1.0, -2.0]),
            covariance: DMatrix::identity(2, 2) * 1e-20,
        };
        let s = sample_operator_matrix(&[post.clone(), post.clone()], 5).unwrap();
        for i in 0..2 {
            assert!((s[(i, 0)] - 1.0).abs() < 1e-9);
            assert!((s[(i, 1)] + 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let (bundle, gamma) = random_instance(15, 4, 0.2, 101);
        let post = op_post(&bundle, &gamma).unwrap();
        let a = sample_operator_matrix(&[post.clone()], 42).unwrap();
        let b = sample_operator_matrix(&[post.clone()], 42).unwrap();
        let c = sample_operator_matrix(&[post], 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn monte_carlo_moments_match_posterior() {
        let (bundle, gamma) = random_instance(30, 4, 0.3, 111);
        let post = op_post(&bundle, &gamma).unwrap();
        let sampler = OperatorSampler::new(std::slice::from_ref(&post)).unwrap();
        let n = 10_000;
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut sum = DVector::zeros(4);
        let mut outer = DMatrix::zeros(4, 4);
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let s = sampler.sample(&mut rng).row(0).transpose();
            sum += &s;
            draws.push(s);
        }
        let mean = sum / n as f64;
        for s in &draws {
            let c = s - &mean;
            outer += &c * c.transpose();
        }
        let cov = outer / (n - 1) as f64;

        let max_std = post.std().max();
        let bound = 4.0 * max_std / (n as f64).sqrt();
        for i in 0..4 {
            assert!(
                (mean[i] - post.mean[i]).abs() <= bound,
                "mean[{i}] off by {}",
                (mean[i] - post.mean[i]).abs()
            );
        }
        let rel = (&cov - &post.covariance).norm() / post.covariance.norm();
        assert!(rel < 0.10, "covariance relative error {rel}");
    }
}
