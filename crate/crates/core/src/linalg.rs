//! Dense symmetric matrices, cyclic Jacobi eigen-decomposition and the
//! amended (pseudo-) log-determinant of a rank-deficient PSD matrix.

use crate::error::{Error, Result};

/// Absolute tolerance on `|a_ij - a_ji|` accepted as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Default relative eigenvalue cutoff for [`amended_log_det`].
pub const DEFAULT_REL_TOL: f64 = 1e-9;

const MAX_SWEEPS: usize = 100;
const OFF_DIAG_REL_TOL: f64 = 1e-12;

/// Row-major square symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl SymMatrix {
    /// Validates shape and symmetry.
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("matrix dimension must be at least 1"));
        }
        if entries.len() != n * n {
            return Err(Error::invalid(format!(
                "expected {} entries for a {n}x{n} matrix, got {}",
                n * n,
                entries.len()
            )));
        }
        if let Some(v) = entries.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite matrix entry {v}")));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (entries[i * n + j], entries[j * n + i]);
                if (a - b).abs() > SYMMETRY_TOL {
                    return Err(Error::invalid(format!(
                        "matrix is not symmetric at ({i}, {j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self { n, entries })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::diagonal(&vec![1.0; n])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n);
        for (i, &d) in diag.iter().enumerate() {
            m.entries[i * n + i] = d;
        }
        m
    }

    /// Builds from a closure evaluated on the upper triangle and mirrored.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m.entries[i * n + j] = v;
                m.entries[j * n + i] = v;
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// Adds `v` at `(i, j)` and, off the diagonal, at `(j, i)`.
    #[inline]
    pub(crate) fn add_sym(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.n + j] += v;
        if i != j {
            self.entries[j * self.n + i] += v;
        }
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            entries: self.entries.iter().map(|v| v * c).collect(),
        }
    }
}

/// Eigenvalues (ascending) and matching eigenvectors.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    /// `vectors[k]` is the unit eigenvector for `values[k]`.
    pub vectors: Vec<Vec<f64>>,
    pub sweeps: usize,
}

impl SymEigen {
    /// `V diag(values) Vᵀ`, the matrix implied by the decomposition.
    pub fn reconstruct(&self) -> Vec<f64> {
        let n = self.values.len();
        let mut out = vec![0.0; n * n];
        for (lambda, v) in self.values.iter().zip(&self.vectors) {
            for i in 0..n {
                let s = lambda * v[i];
                for j in 0..n {
                    out[i * n + j] += s * v[j];
                }
            }
        }
        out
    }
}

/// Cyclic Jacobi eigen-decomposition.
pub fn sym_eigen(m: &SymMatrix) -> SymEigen {
    let n = m.n;
    let mut a = m.entries.clone();
    // Columns of `v` accumulate the rotations.
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let total = m.frobenius_norm();
    let mut sweeps = 0;
    while sweeps < MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= OFF_DIAG_REL_TOL * total {
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;

                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    SymEigen {
        values: order.iter().map(|&k| a[k * n + k]).collect(),
        vectors: order
            .iter()
            .map(|&k| (0..n).map(|i| v[i * n + k]).collect())
            .collect(),
        sweeps,
    }
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(m: &SymMatrix) -> Vec<f64> {
    sym_eigen(m).values
}

/// Log of the product of eigenvalues above `rel_tol * max_eig`, together
/// with how many eigenvalues were kept.
///
/// Eigenvalues in `[-rel_tol * max_eig, rel_tol * max_eig]` count as zero;
/// anything more negative is rejected.
pub fn amended_log_det(m: &SymMatrix, rel_tol: f64) -> Result<(f64, usize)> {
    if !(rel_tol >= 0.0) {
        return Err(Error::invalid(format!("rel_tol must be nonnegative, got {rel_tol}")));
    }
    let eig = sym_eigenvalues(m);
    let max_eig = eig.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if max_eig == 0.0 {
        return Ok((0.0, 0));
    }
    let threshold = rel_tol * max_eig;
    if let Some(&lowest) = eig.first() {
        if lowest < -threshold {
            return Err(Error::NotPsd {
                eigenvalue: lowest,
                threshold,
            });
        }
    }
    let kept: Vec<f64> = eig.into_iter().filter(|&v| v > threshold).collect();
    Ok((kept.iter().map(|v| v.ln()).sum(), kept.len()))
}

/// Determinant by partial-pivot LU. Used for small blocks and in tests.
pub fn determinant(n: usize, entries: &[f64]) -> f64 {
    assert_eq!(entries.len(), n * n);
    let mut a = entries.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if a[pivot * n + col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            det = -det;
        }
        let d = a[col * n + col];
        det *= d;
        for r in (col + 1)..n {
            let f = a[r * n + col] / d;
            if f != 0.0 {
                for k in col..n {
                    a[r * n + k] -= f * a[col * n + k];
                }
            }
        }
    }
    det
}
