//! Declarative reduced-model structure: which polynomial / input terms
//! appear, the layout of the data vector, and the compressed symmetric
//! Kronecker product.
//!
//! The quadratic block stores the r(r+1)/2 distinct products q_i q_j
//! (i <= j) with no symmetry scaling; inferred operator coefficients absorb
//! the factor of two on cross terms. Coefficients over the compressed basis
//! must therefore only ever be compared to full-Kronecker coefficients
//! through their action, never entrywise.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A term of the reduced model's right-hand side.
///
/// Data-vector layout is fixed in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    Constant,
    Linear,
    Quadratic,
    Input,
    Bilinear,
}

impl Term {
    fn width(self, r: usize, p: usize) -> usize {
        match self {
            Term::Constant => 1,
            Term::Linear => r,
            Term::Quadratic => r * (r + 1) / 2,
            Term::Input => p,
            Term::Bilinear => r * p,
        }
    }

    fn needs_inputs(self) -> bool {
        matches!(self, Term::Input | Term::Bilinear)
    }
}

/// The set of terms, reduced dimension r, and input dimension p that fix
/// the data-vector layout and operator width d(r, p).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelStructure {
    terms: Vec<Term>,
    r: usize,
    p: usize,
}

impl ModelStructure {
    /// Validate and build a structure. `terms` must be listed in canonical
    /// order (constant, linear, quadratic, input, bilinear) without
    /// duplicates; `p > 0` is required iff an input-carrying term appears.
    pub fn new(terms: &[Term], r: usize, p: usize) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidConfig("structure needs at least one term".into()));
        }
        if r == 0 {
            return Err(Error::InvalidConfig("reduced dimension must be positive".into()));
        }
        if terms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidConfig(
                "terms must be unique and in canonical order".into(),
            ));
        }
        let needs_inputs = terms.iter().any(|t| t.needs_inputs());
        if needs_inputs && p == 0 {
            return Err(Error::InvalidConfig(
                "input/bilinear terms require input dimension p > 0".into(),
            ));
        }
        if !needs_inputs && p != 0 {
            return Err(Error::InvalidConfig(
                "p must be zero when no term consumes inputs".into(),
            ));
        }
        Ok(Self {
            terms: terms.to_vec(),
            r,
            p,
        })
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn reduced_dim(&self) -> usize {
        self.r
    }

    pub fn input_dim(&self) -> usize {
        self.p
    }

    /// Operator width d(r, p): the length of the data vector.
    pub fn width(&self) -> usize {
        self.terms.iter().map(|t| t.width(self.r, self.p)).sum()
    }

    pub fn has_inputs(&self) -> bool {
        self.terms.iter().any(|t| t.needs_inputs())
    }

    /// Same terms with a different reduced dimension.
    pub fn with_reduced_dim(&self, r: usize) -> Result<Self> {
        Self::new(&self.terms, r, self.p)
    }
}

/// Compressed symmetric Kronecker product: the r(r+1)/2 products
/// `q_i q_j` for i <= j, in lexicographic order of (i, j).
pub fn kron_compressed(q: &DVector<f64>) -> DVector<f64> {
    let r = q.len();
    let mut out = DVector::zeros(r * (r + 1) / 2);
    let mut k = 0;
    for i in 0..r {
        for j in i..r {
            out[k] = q[i] * q[j];
            k += 1;
        }
    }
    out
}

/// Assemble one data vector d(q, u) in the fixed term order.
pub fn build_data_vector(
    q: &DVector<f64>,
    u: Option<&DVector<f64>>,
    spec: &ModelStructure,
) -> Result<DVector<f64>> {
    if q.len() != spec.r {
        return Err(Error::DimensionMismatch {
            context: "build_data_vector state",
            expected: spec.r,
            found: q.len(),
        });
    }
    if spec.has_inputs() {
        let u = u.ok_or(Error::MissingInputs)?;
        if u.len() != spec.p {
            return Err(Error::DimensionMismatch {
                context: "build_data_vector input",
                expected: spec.p,
                found: u.len(),
            });
        }
    }
    let mut out = DVector::zeros(spec.width());
    let mut at = 0;
    for term in &spec.terms {
        match term {
            Term::Constant => {
                out[at] = 1.0;
                at += 1;
            }
            Term::Linear => {
                out.rows_mut(at, spec.r).copy_from(q);
                at += spec.r;
            }
            Term::Quadratic => {
                let kq = kron_compressed(q);
                out.rows_mut(at, kq.len()).copy_from(&kq);
                at += kq.len();
            }
            Term::Input => {
                out.rows_mut(at, spec.p).copy_from(u.unwrap());
                at += spec.p;
            }
            Term::Bilinear => {
                // u (x) q, u-major: (u_1 q_1 .. u_1 q_r, u_2 q_1, ...).
                let u = u.unwrap();
                for a in 0..spec.p {
                    for b in 0..spec.r {
                        out[at] = u[a] * q[b];
                        at += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Row-wise data matrix: row j is the data vector at state column j and
/// input column j. `inputs` must be present iff the structure consumes
/// inputs.
pub fn build_data_matrix(
    states: &DMatrix<f64>,
    inputs: Option<&DMatrix<f64>>,
    spec: &ModelStructure,
) -> Result<DMatrix<f64>> {
    let cols = states.ncols();
    if spec.has_inputs() {
        let u = inputs.ok_or(Error::MissingInputs)?;
        if u.ncols() != cols {
            return Err(Error::DimensionMismatch {
                context: "build_data_matrix input columns",
                expected: cols,
                found: u.ncols(),
            });
        }
    }
    let mut out = DMatrix::zeros(cols, spec.width());
    for j in 0..cols {
        let q = states.column(j).into_owned();
        let u = inputs.map(|m| m.column(j).into_owned());
        let row = build_data_vector(&q, u.as_ref(), spec)?;
        out.row_mut(j).copy_from(&row.transpose());
    }
    Ok(out)
}

/// Evaluate the reduced right-hand side `O d(q, u)`.
pub fn rom_rhs(
    op_matrix: &DMatrix<f64>,
    q: &DVector<f64>,
    u: Option<&DVector<f64>>,
    spec: &ModelStructure,
) -> Result<DVector<f64>> {
    if op_matrix.ncols() != spec.width() {
        return Err(Error::DimensionMismatch {
            context: "rom_rhs operator width",
            expected: spec.width(),
            found: op_matrix.ncols(),
        });
    }
    Ok(op_matrix * build_data_vector(q, u, spec)?)
}

/// Expansion matrix E (r^2 x r(r+1)/2) with `q (x) q = E kron_compressed(q)`.
///
/// Exposed for tests and for converting compressed quadratic coefficients
/// into full Kronecker form through their action.
pub fn kron_expansion_matrix(r: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(r * r, r * (r + 1) / 2);
    let mut k = 0;
    for i in 0..r {
        for j in i..r {
            e[(i * r + j, k)] = 1.0;
            if i != j {
                e[(j * r + i, k)] = 1.0;
            }
            k += 1;
        }
    }
    e
}
