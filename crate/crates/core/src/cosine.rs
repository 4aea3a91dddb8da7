//! Cosine classifier: softmax over `τ · cos(β_j, x)`.
//!
//! The logits depend on the weights only through their directions
//! `T(β_j) = β_j / ‖β_j‖`, so the classifier is a logistic model evaluated
//! at normalized weights and features. The Jacobian of `T` is block
//! diagonal with blocks `(I - u uᵀ) / ‖β_j‖`.

use crate::error::{Error, Result};
use crate::model::{check_dims, dot, FeatureSet, LogisticParams, ProbMatrix};
use crate::penalty::{PenaltyConfig, PenaltyKind};
use crate::train::{self, Classifier};

const MIN_NORM: f64 = 1e-12;

/// One weight vector per class (no zero reference) and a fixed scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineParams {
    dim: usize,
    weights: Vec<Vec<f64>>,
    tau: f64,
    // unit directions and norms of `weights`, kept in sync
    units: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl CosineParams {
    pub fn new(weights: Vec<Vec<f64>>, tau: f64) -> Result<Self> {
        let dim = weights.first().map(Vec::len).unwrap_or(0);
        if weights.len() < 2 || dim == 0 {
            return Err(Error::invalid("cosine params need >= 2 class vectors of length >= 1"));
        }
        if weights.iter().any(|w| w.len() != dim) {
            return Err(Error::invalid("all class vectors must share one dimension"));
        }
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("cosine scale must be positive, got {tau}")));
        }
        Ok(Self::build(dim, weights, tau))
    }

    fn build(dim: usize, weights: Vec<Vec<f64>>, tau: f64) -> Self {
        let mut p = Self {
            dim,
            weights,
            tau,
            units: Vec::new(),
            norms: Vec::new(),
        };
        p.refresh();
        p
    }

    fn refresh(&mut self) {
        self.norms = self.weights.iter().map(|w| norm(w)).collect();
        self.units = self
            .weights
            .iter()
            .zip(&self.norms)
            .map(|(w, &n)| {
                let s = if n < MIN_NORM { 0.0 } else { 1.0 / n };
                w.iter().map(|v| v * s).collect()
            })
            .collect();
    }

    fn check_norms(&self) -> Result<()> {
        match self.norms.iter().position(|&n| n < MIN_NORM) {
            Some(j) => Err(Error::Degenerate(format!("class {j} weight has zero norm"))),
            None => Ok(()),
        }
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Copy with each class vector multiplied by its own factor.
    pub fn rescaled(&self, factors: &[f64]) -> Self {
        let weights = self
            .weights
            .iter()
            .zip(factors)
            .map(|(w, c)| w.iter().map(|v| v * c).collect())
            .collect();
        Self::build(self.dim, weights, self.tau)
    }

    /// Unit class directions `T(β_j)`.
    pub fn unit_weights(&self) -> Result<&[Vec<f64>]> {
        self.check_norms()?;
        Ok(&self.units)
    }

    /// The logistic model with reference class 0 that yields identical
    /// probabilities on normalized features: `β'_j = τ (u_j - u_0)`.
    pub fn as_logistic(&self) -> Result<LogisticParams> {
        let units = self.unit_weights()?;
        let u0 = &units[0];
        LogisticParams::new(
            units[1..]
                .iter()
                .map(|u| u.iter().zip(u0).map(|(a, b)| self.tau * (a - b)).collect())
                .collect(),
        )
    }
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `x / ‖x‖`.
pub fn normalize(x: &[f64]) -> Result<Vec<f64>> {
    let n = norm(x);
    if n < MIN_NORM {
        return Err(Error::Degenerate("zero-norm vector cannot be normalized".into()));
    }
    Ok(x.iter().map(|v| v / n).collect())
}

impl Classifier for CosineParams {
    fn dim(&self) -> usize {
        self.dim
    }

    fn num_classes(&self) -> usize {
        self.weights.len()
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.weights.len());
        self.logits_into(x, &mut out)?;
        Ok(out)
    }

    fn logits_into(&self, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        let xn = norm(x);
        if xn < MIN_NORM {
            return Err(Error::Degenerate("zero-norm feature vector".into()));
        }
        self.check_norms()?;
        let s = self.tau / xn;
        out.clear();
        out.extend(self.units.iter().map(|u| s * dot(u, x)));
        Ok(())
    }

    fn param_count(&self) -> usize {
        self.weights.len() * self.dim
    }

    fn flat(&self) -> Vec<f64> {
        self.weights.concat()
    }

    fn set_flat(&mut self, values: &[f64]) {
        for (w, chunk) in self.weights.iter_mut().zip(values.chunks_exact(self.dim)) {
            w.copy_from_slice(chunk);
        }
        self.refresh();
    }

    fn accumulate_grad(&self, x: &[f64], dlogits: &[f64], grad: &mut [f64]) -> Result<()> {
        let xh = normalize(x)?;
        self.check_norms()?;
        for ((g, (u, &n)), &dz) in grad
            .chunks_exact_mut(self.dim)
            .zip(self.units.iter().zip(&self.norms))
            .zip(dlogits)
        {
            if dz == 0.0 {
                continue;
            }
            // ∂logit_j/∂β_j = τ A_jj x̂
            let c = dot(u, &xh);
            let s = dz * self.tau / n;
            for ((gi, &xi), &ui) in g.iter_mut().zip(&xh).zip(u) {
                *gi += s * (xi - c * ui);
            }
        }
        Ok(())
    }
}

/// Softmax over `τ · β_jᵀx_i / (‖β_j‖ ‖x_i‖)`.
pub fn cosine_probs(params: &CosineParams, features: &[Vec<f64>]) -> Result<ProbMatrix> {
    check_dims(features, params.dim)?;
    params.probs(features)
}

/// Mean cross-entropy plus `λ · mean KL(U ‖ P_i)` on cosine probabilities.
pub fn cosine_firth_loss(params: &CosineParams, data: &FeatureSet, lambda: f64) -> Result<f64> {
    train::loss(params, data, &PenaltyConfig::new(PenaltyKind::KlUniform, lambda))
}

/// `A_jj · v` with `A_jj = (I - β_j β_jᵀ / β_jᵀβ_j) / ‖β_j‖`, the diagonal
/// block of the Jacobian of `β ↦ β / ‖β‖`.
pub fn jacobian_block_check(beta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if beta.len() != v.len() {
        return Err(Error::invalid("beta and v must have the same length"));
    }
    let n = norm(beta);
    if n < MIN_NORM {
        return Err(Error::Degenerate("zero-norm weight vector".into()));
    }
    let proj = dot(beta, v) / (n * n);
    Ok(v.iter().zip(beta).map(|(vi, bi)| (vi - proj * bi) / n).collect())
}

/// Dense `A_jj`, row-major `d x d`.
pub fn jacobian_block(beta: &[f64]) -> Result<Vec<f64>> {
    let d = beta.len();
    let mut out = Vec::with_capacity(d * d);
    for k in 0..d {
        let mut e = vec![0.0; d];
        e[k] = 1.0;
        out.extend(jacobian_block_check(beta, &e)?);
    }
    // A_jj is symmetric, so columns equal rows
    Ok(out)
}
