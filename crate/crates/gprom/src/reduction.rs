//! Snapshot centering, POD basis computation, and compression to / from
//! reduced coordinates.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A rank-r linear state approximation `q ~ V qhat + q_bar`.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    /// Basis matrix with orthonormal columns (N x r).
    pub v: DMatrix<f64>,
    /// Centering vector (mean snapshot, length N).
    pub q_bar: DVector<f64>,
    /// Reduced dimension.
    pub r: usize,
    /// All singular values of the centered snapshot matrix, nonincreasing.
    pub singular_values: DVector<f64>,
}

impl ReducedBasis {
    /// Identity "basis" (V = I, no centering); compression is a no-op.
    ///
    /// Used when the observed state already lives in the model coordinates,
    /// e.g. low-dimensional synthetic systems.
    pub fn identity(n: usize) -> Self {
        Self {
            v: DMatrix::identity(n, n),
            q_bar: DVector::zeros(n),
            r: n,
            singular_values: DVector::zeros(0),
        }
    }

    /// Full state dimension N.
    pub fn state_dim(&self) -> usize {
        self.v.nrows()
    }

    /// Project snapshots (N x k) to reduced coordinates (r x k):
    /// `V^T (Q - q_bar 1^T)`.
    pub fn compress(&self, snapshots: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if snapshots.nrows() != self.v.nrows() {
            return Err(Error::DimensionMismatch {
                context: "compress",
                expected: self.v.nrows(),
                found: snapshots.nrows(),
            });
        }
        let mut centered = snapshots.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.q_bar;
        }
        Ok(self.v.transpose() * centered)
    }

    /// Lift reduced coordinates (r x k) back to the full space (N x k):
    /// `V X + q_bar 1^T`.
    pub fn reconstruct(&self, reduced: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if reduced.nrows() != self.r {
            return Err(Error::DimensionMismatch {
                context: "reconstruct",
                expected: self.r,
                found: reduced.nrows(),
            });
        }
        let mut full = &self.v * reduced;
        for mut col in full.column_iter_mut() {
            col += &self.q_bar;
        }
        Ok(full)
    }
}

/// Compute a rank-`r` POD basis from snapshots (N x m_total).
///
/// The snapshots are centered by their mean; `V` holds the first `r` left
/// singular vectors of the centered matrix. All singular values are
/// returned for spectral-decay diagnostics. Each basis vector's
/// largest-magnitude entry is made positive so results are reproducible
/// across platforms.
pub fn pod_basis(snapshots: &DMatrix<f64>, r: usize) -> Result<ReducedBasis> {
    let (n, m) = snapshots.shape();
    if r == 0 || r > n.min(m) {
        return Err(Error::InvalidConfig(format!(
            "rank r = {r} must be in 1..={}",
            n.min(m)
        )));
    }
    let q_bar = DVector::from_fn(n, |i, _| snapshots.row(i).mean());
    let mut centered = snapshots.clone();
    for mut col in centered.column_iter_mut() {
        col -= &q_bar;
    }

    let svd = centered.svd(true, false);
    let u = svd.u.as_ref().ok_or(Error::NumericallySingular)?;
    // nalgebra does not guarantee ordering; sort indices by singular value.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
    });
    let singular_values =
        DVector::from_iterator(order.len(), order.iter().map(|&i| svd.singular_values[i]));

    let sigma_max = singular_values[0];
    let available = singular_values.iter().filter(|&&s| s > 1e-12 * sigma_max).count();
    if available < r {
        return Err(Error::RankDeficient {
            requested: r,
            available,
        });
    }

    let mut v = DMatrix::zeros(n, r);
    for (j, &src) in order.iter().take(r).enumerate() {
        let col = u.column(src);
        // Sign convention: largest-magnitude entry positive.
        let mut idx = 0;
        for i in 0..n {
            if col[i].abs() > col[idx].abs() {
                idx = i;
            }
        }
        let sign = if col[idx] < 0.0 { -1.0 } else { 1.0 };
        v.column_mut(j).copy_from(&(col * sign));
    }

    Ok(ReducedBasis {
        v,
        q_bar,
        r,
        singular_values,
    })
}
