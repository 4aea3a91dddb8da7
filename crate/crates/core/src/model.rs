//! Labeled feature sets, classifier parameters and forward passes.
//!
//! The 1-layer logistic model keeps class 0 as a structural zero-weight
//! reference, so only `J` weight vectors are stored for `J + 1` classes.
//! The MLP stores logits for every class.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::seed;

/// Probabilities are floored here before any logarithm is taken.
pub const PROB_FLOOR: f64 = 1e-300;

/// `ln(PROB_FLOOR)`.
#[inline]
pub fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Labeled feature vectors with a fixed class count.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    dim: usize,
    num_classes: usize,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl FeatureSet {
    pub fn new(num_classes: usize, features: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::invalid("feature set must contain at least one row"));
        }
        if features.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::invalid("feature set needs at least one class"));
        }
        let dim = features[0].len();
        if dim == 0 {
            return Err(Error::invalid("feature dimension must be at least 1"));
        }
        for (i, (x, &y)) in features.iter().zip(&labels).enumerate() {
            if x.len() != dim {
                return Err(Error::invalid(format!(
                    "row {i} has {} features, expected {dim}",
                    x.len()
                )));
            }
            if y >= num_classes {
                return Err(Error::invalid(format!(
                    "row {i} has label {y} but only {num_classes} classes"
                )));
            }
        }
        Ok(Self {
            dim,
            num_classes,
            features,
            labels,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], usize)> {
        self.features
            .iter()
            .map(Vec::as_slice)
            .zip(self.labels.iter().copied())
    }

    /// Row indices grouped by class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }

    /// New set made of the given rows, in order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            self.num_classes,
            rows.iter().map(|&i| self.features[i].clone()).collect(),
            rows.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Appends a constant-1 feature to every row (intercept term).
    pub fn with_bias_column(&self) -> Self {
        Self {
            dim: self.dim + 1,
            num_classes: self.num_classes,
            features: self
                .features
                .iter()
                .map(|x| x.iter().copied().chain(std::iter::once(1.0)).collect())
                .collect(),
            labels: self.labels.clone(),
        }
    }
}

/// `N x (J+1)` matrix of class-assignment probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    classes: usize,
    data: Vec<f64>,
}

impl ProbMatrix {
    /// Row-wise softmax of arbitrary logits, with max-logit subtraction.
    pub fn from_logits(logits: &[Vec<f64>]) -> Result<Self> {
        let classes = logits.first().map(Vec::len).unwrap_or(0);
        if classes == 0 {
            return Err(Error::invalid("logit rows must be non-empty"));
        }
        let mut data = Vec::with_capacity(logits.len() * classes);
        for row in logits {
            if row.len() != classes {
                return Err(Error::invalid("ragged logit matrix"));
            }
            data.extend(softmax_row(row));
        }
        Ok(Self { classes, data })
    }

    /// Validates that every entry is in `[0, 1]` and rows sum to 1.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let classes = rows.first().map(Vec::len).unwrap_or(0);
        if classes == 0 {
            return Err(Error::invalid("probability rows must be non-empty"));
        }
        let mut data = Vec::with_capacity(rows.len() * classes);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != classes {
                return Err(Error::invalid("ragged probability matrix"));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid(format!("row {i} has an entry outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("row {i} sums to {s}, not 1")));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { classes, data })
    }

    pub fn num_rows(&self) -> usize {
        self.data.len() / self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.classes)
    }

    /// Fraction of rows whose argmax equals the label.
    pub fn accuracy(&self, labels: &[usize]) -> f64 {
        let hits = predict(self)
            .iter()
            .zip(labels)
            .filter(|(p, y)| p == y)
            .count();
        hits as f64 / labels.len().max(1) as f64
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::INFINITY {
        return m;
    }
    m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Per-row argmax, ties to the lowest class index.
pub fn predict(probs: &ProbMatrix) -> Vec<usize> {
    probs
        .rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (j, &p)| {
                    if p > best.1 {
                        (j, p)
                    } else {
                        best
                    }
                })
                .0
        })
        .collect()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn check_dims(features: &[Vec<f64>], dim: usize) -> Result<()> {
    if let Some((i, x)) = features.iter().enumerate().find(|(_, x)| x.len() != dim) {
        return Err(Error::invalid(format!(
            "feature row {i} has dimension {}, model expects {dim}",
            x.len()
        )));
    }
    Ok(())
}

/// Weights of the multinomial logistic model; class 0 is the implicit
/// zero-weight reference.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticParams {
    dim: usize,
    betas: Vec<Vec<f64>>,
}

impl LogisticParams {
    pub fn new(betas: Vec<Vec<f64>>) -> Result<Self> {
        let dim = betas.first().map(Vec::len).unwrap_or(0);
        if betas.is_empty() || dim == 0 {
            return Err(Error::invalid("logistic params need J >= 1 vectors of length d >= 1"));
        }
        if betas.iter().any(|b| b.len() != dim) {
            return Err(Error::invalid("all beta vectors must share one dimension"));
        }
        if betas.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite logistic weight"));
        }
        Ok(Self { dim, betas })
    }

    /// All-zero weights for `num_classes` classes (so `J = num_classes - 1`).
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        assert!(num_classes >= 2 && dim >= 1);
        Self {
            dim,
            betas: vec![vec![0.0; dim]; num_classes - 1],
        }
    }

    /// Non-reference weights, `J` rows of length `d`.
    pub fn betas(&self) -> &[Vec<f64>] {
        &self.betas
    }

    pub(crate) fn betas_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.betas
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `J + 1`.
    pub fn num_classes(&self) -> usize {
        self.betas.len() + 1
    }

    /// Full `(J+1)`-wide logits with the reference logit fixed at 0.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        std::iter::once(0.0)
            .chain(self.betas.iter().map(|b| dot(b, x)))
            .collect()
    }
}

/// `P_ij = exp(β_jᵀx_i) / (1 + Σ_j' exp(β_j'ᵀx_i))` with `β_0 = 0`.
pub fn softmax_probs(params: &LogisticParams, features: &[Vec<f64>]) -> Result<ProbMatrix> {
    check_dims(features, params.dim)?;
    let logits: Vec<Vec<f64>> = features.iter().map(|x| params.logits(x)).collect();
    ProbMatrix::from_logits(&logits)
}

/// `Σ_i log P_{i, y_i}`.
pub fn log_likelihood(params: &LogisticParams, data: &FeatureSet) -> Result<f64> {
    if data.num_classes() != params.num_classes() {
        return Err(Error::invalid(format!(
            "data has {} classes, params have {}",
            data.num_classes(),
            params.num_classes()
        )));
    }
    check_dims(data.features(), params.dim)?;
    Ok(data
        .rows()
        .map(|(x, y)| {
            let z = params.logits(x);
            (z[y] - log_sum_exp(&z)).max(PROB_FLOOR.ln())
        })
        .sum())
}

/// One dense layer, `out = W x + b` with `W` stored row-major `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| self.bias[o] + dot(&self.weights[o * self.inputs..(o + 1) * self.inputs], x))
            .collect()
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Hidden widths of the 3-layer classifier.
pub const MLP_HIDDEN: (usize, usize) = (100, 50);

/// Features → h1 → ReLU → h2 → ReLU → classes → softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: [Dense; 3],
}

pub(crate) struct MlpTrace {
    pub pre1: Vec<f64>,
    pub act1: Vec<f64>,
    pub pre2: Vec<f64>,
    pub act2: Vec<f64>,
    pub logits: Vec<f64>,
}

impl MlpParams {
    pub fn new(layers: [Dense; 3]) -> Result<Self> {
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::invalid("dense layer storage does not match its shape"));
            }
        }
        if layers[0].outputs != layers[1].inputs || layers[1].outputs != layers[2].inputs {
            return Err(Error::invalid("MLP layer shapes do not chain"));
        }
        if layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("non-finite MLP parameter"));
        }
        Ok(Self { layers })
    }

    pub fn zeros(dim: usize, hidden: (usize, usize), num_classes: usize) -> Self {
        Self {
            layers: [
                Dense::zeros(dim, hidden.0),
                Dense::zeros(hidden.0, hidden.1),
                Dense::zeros(hidden.1, num_classes),
            ],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot(dim: usize, hidden: (usize, usize), num_classes: usize, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut p = Self::zeros(dim, hidden, num_classes);
        for layer in &mut p.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn num_classes(&self) -> usize {
        self.layers[2].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub(crate) fn trace(&self, x: &[f64]) -> MlpTrace {
        let pre1 = self.layers[0].forward(x);
        let act1: Vec<f64> = pre1.iter().map(|v| v.max(0.0)).collect();
        let pre2 = self.layers[1].forward(&act1);
        let act2: Vec<f64> = pre2.iter().map(|v| v.max(0.0)).collect();
        let logits = self.layers[2].forward(&act2);
        MlpTrace {
            pre1,
            act1,
            pre2,
            act2,
            logits,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.trace(x).logits
    }

    /// Distance of the nearest hidden pre-activation from the ReLU kink.
    pub fn min_abs_preactivation(&self, x: &[f64]) -> f64 {
        let t = self.trace(x);
        t.pre1.iter().chain(&t.pre2).fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

pub fn mlp_forward(params: &MlpParams, features: &[Vec<f64>]) -> Result<ProbMatrix> {
    check_dims(features, params.dim())?;
    let logits: Vec<Vec<f64>> = features.iter().map(|x| params.logits(x)).collect();
    ProbMatrix::from_logits(&logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_params(classes: usize, dim: usize, seed: u64) -> LogisticParams {
        let mut rng = seed::rng(seed);
        LogisticParams::new(
            (0..classes - 1)
                .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
        )
        .unwrap()
    }

    fn random_rows(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seed::rng(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect()
    }

    #[test]
    fn zero_betas_give_uniform() {
        let p = softmax_probs(&LogisticParams::zeros(4, 3), &random_rows(5, 3, 1)).unwrap();
        for row in p.rows() {
            for &v in row {
                assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn binary_direct_substitution() {
        let params = LogisticParams::new(vec![vec![2f64.ln()]]).unwrap();
        let p = softmax_probs(&params, &[vec![1.0]]).unwrap();
        assert_abs_diff_eq!(p.row(0)[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.row(0)[1], 2.0 / 3.0, epsilon = 1e-15);

        let data = FeatureSet::new(2, vec![vec![1.0]], vec![1]).unwrap();
        assert_abs_diff_eq!(
            log_likelihood(&params, &data).unwrap(),
            (2.0f64 / 3.0).ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn huge_logits_stay_finite() {
        let params = LogisticParams::new(vec![vec![2f64.ln() * 1e6], vec![-3e5]]).unwrap();
        let p = softmax_probs(&params, &[vec![1.0], vec![1e-3]]).unwrap();
        for row in p.rows() {
            assert!(row.iter().all(|v| v.is_finite()));
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        let data = FeatureSet::new(3, vec![vec![1.0]], vec![2]).unwrap();
        assert!(log_likelihood(&params, &data).unwrap().is_finite());
    }

    #[test]
    fn log_likelihood_uniform_and_reevaluated() {
        let data = FeatureSet::new(2, vec![vec![1.0, 2.0], vec![-1.0, 0.5]], vec![0, 1]).unwrap();
        assert_abs_diff_eq!(
            log_likelihood(&LogisticParams::zeros(2, 2), &data).unwrap(),
            2.0 * 0.5f64.ln(),
            epsilon = 1e-15
        );

        let params = random_params(4, 6, 3);
        let x = random_rows(5, 6, 4);
        let y = vec![0, 3, 1, 2, 3];
        let data = FeatureSet::new(4, x.clone(), y.clone()).unwrap();
        let probs = softmax_probs(&params, &x).unwrap();
        let oracle: f64 = y.iter().enumerate().map(|(i, &c)| probs.row(i)[c].ln()).sum();
        assert_abs_diff_eq!(log_likelihood(&params, &data).unwrap(), oracle, epsilon = 1e-12);
        assert!(oracle <= 0.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let params = LogisticParams::zeros(3, 4);
        assert!(matches!(
            softmax_probs(&params, &[vec![1.0, 2.0]]),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn predict_tie_break_and_shift() {
        let p = ProbMatrix::from_rows(&[vec![0.25; 4]]).unwrap();
        assert_eq!(predict(&p), vec![0]);
        let p = ProbMatrix::from_rows(&[vec![0.1, 0.7, 0.2]]).unwrap();
        assert_eq!(predict(&p), vec![1]);

        let logits = vec![vec![0.3, 1.2, -0.4], vec![2.0, 2.0, 1.0]];
        let shifted: Vec<Vec<f64>> = logits
            .iter()
            .zip([5.0, -300.0])
            .map(|(r, c)| r.iter().map(|v| v + c).collect())
            .collect();
        let a = ProbMatrix::from_logits(&logits).unwrap();
        let b = ProbMatrix::from_logits(&shifted).unwrap();
        assert_eq!(predict(&a), predict(&b));
        for (ra, rb) in a.rows().zip(b.rows()) {
            for (x, y) in ra.iter().zip(rb) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn mlp_zero_and_identity_layers_are_uniform() {
        let x = random_rows(3, 5, 9);
        let p = mlp_forward(&MlpParams::zeros(5, MLP_HIDDEN, 4), &x).unwrap();
        assert!(p.rows().flatten().all(|&v| (v - 0.25).abs() < 1e-15));

        let mut m = MlpParams::zeros(5, (5, 5), 3);
        for i in 0..5 {
            m.layers[0].weights[i * 5 + i] = 1.0;
        }
        let p = mlp_forward(&m, &x).unwrap();
        assert!(p.rows().flatten().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn mlp_random_rows_normalized() {
        let m = MlpParams::glorot(8, MLP_HIDDEN, 6, 17);
        let p = mlp_forward(&m, &random_rows(10, 8, 2)).unwrap();
        for row in p.rows() {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        }
        assert!(mlp_forward(&m, &random_rows(1, 7, 2)).is_err());
    }

    #[test]
    fn bias_column_appends_one() {
        let s = FeatureSet::new(2, vec![vec![3.0]], vec![1]).unwrap().with_bias_column();
        assert_eq!(s.features()[0], vec![3.0, 1.0]);
        assert_eq!(s.dim(), 2);
    }
}
