//! Penalty terms on predicted class distributions, and the Fisher
//! information machinery used to certify the simplified Firth term.
//!
//! Every penalty is an average over samples of a per-row quantity, so each
//! kind exposes both a row value and its gradient with respect to that
//! row's logits. Training composes the latter with the model's backward pass.

use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::model::{self, floored_ln, LogisticParams, ProbMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PenaltyKind {
    None,
    /// `-(1/N) Σ_i Σ_j log P_ij`: the log-det of the Fisher information up
    /// to a data-only constant.
    FirthSimplified,
    /// `(1/N) Σ_i KL(U ‖ P_i)`.
    KlUniform,
    /// `(1/N) Σ_i KL(A ‖ P_i)` for a class prior `A`.
    KlPrior,
    /// `(1/N) Σ_i KL(P_i ‖ U)`.
    Confidence,
    /// Mean of squares over every classifier parameter.
    L2MeanSquared,
}

impl PenaltyKind {
    pub const ALL: [PenaltyKind; 6] = [
        PenaltyKind::None,
        PenaltyKind::FirthSimplified,
        PenaltyKind::KlUniform,
        PenaltyKind::KlPrior,
        PenaltyKind::Confidence,
        PenaltyKind::L2MeanSquared,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::None => "none",
            PenaltyKind::FirthSimplified => "firth_simplified",
            PenaltyKind::KlUniform => "kl_uniform",
            PenaltyKind::KlPrior => "kl_prior",
            PenaltyKind::Confidence => "confidence",
            PenaltyKind::L2MeanSquared => "l2_mean_squared",
        }
    }

    /// True for kinds that act on the predicted distribution.
    pub fn acts_on_probs(self) -> bool {
        !matches!(self, PenaltyKind::None | PenaltyKind::L2MeanSquared)
    }
}

impl std::fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "none" | "baseline" => PenaltyKind::None,
            "firth_simplified" | "firth_logdet" => PenaltyKind::FirthSimplified,
            "kl_uniform" | "firth" => PenaltyKind::KlUniform,
            "kl_prior" | "unigram" => PenaltyKind::KlPrior,
            "confidence" => PenaltyKind::Confidence,
            "l2_mean_squared" | "l2" => PenaltyKind::L2MeanSquared,
            other => return Err(Error::Config(format!("unknown penalty kind `{other}`"))),
        })
    }
}

/// A penalty kind, its coefficient and (for `KlPrior`) the prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    pub lambda: f64,
    pub prior: Option<Vec<f64>>,
}

impl PenaltyConfig {
    pub fn none() -> Self {
        Self {
            kind: PenaltyKind::None,
            lambda: 0.0,
            prior: None,
        }
    }

    pub fn new(kind: PenaltyKind, lambda: f64) -> Self {
        Self {
            kind,
            lambda,
            prior: None,
        }
    }

    pub fn with_prior(mut self, prior: Vec<f64>) -> Self {
        self.prior = Some(prior);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "penalty lambda must be a nonnegative finite number, got {}",
                self.lambda
            )));
        }
        if let Some(prior) = &self.prior {
            validate_prior(prior)?;
        }
        if self.kind == PenaltyKind::KlPrior && self.prior.is_none() && self.is_active() {
            return Err(Error::Config("kl_prior penalty requires a prior".into()));
        }
        Ok(())
    }

    /// False when the penalty contributes nothing to the loss.
    pub fn is_active(&self) -> bool {
        self.kind != PenaltyKind::None && self.lambda != 0.0
    }

    /// Stable arm label, e.g. `kl_uniform@0.1`.
    pub fn label(&self) -> String {
        format!("{}@{}", self.kind, self.lambda)
    }
}

fn validate_prior(prior: &[f64]) -> Result<()> {
    if prior.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Config("prior entries must be positive".into()));
    }
    let s: f64 = prior.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("prior sums to {s}, not 1")));
    }
    Ok(())
}

/// `(1/N) Σ_i Σ_j log P_ij`. Maximized (at `-(J+1) log(J+1)`) by uniform rows.
pub fn firth_simplified(probs: &ProbMatrix) -> f64 {
    mean_rows(probs, |row| row.iter().map(|&p| floored_ln(p)).sum())
}

/// `(1/N) Σ_i KL(prior ‖ P_i)`.
pub fn kl_to_prior(probs: &ProbMatrix, prior: &[f64]) -> Result<f64> {
    if prior.len() != probs.num_classes() {
        return Err(Error::invalid(format!(
            "prior has {} entries, probabilities have {} classes",
            prior.len(),
            probs.num_classes()
        )));
    }
    validate_prior(prior).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(mean_rows(probs, |row| kl_prior_row(row, prior)))
}

/// `(1/N) Σ_i KL(U ‖ P_i)`.
pub fn kl_uniform(probs: &ProbMatrix) -> f64 {
    mean_rows(probs, kl_uniform_row)
}

/// `(1/N) Σ_i KL(P_i ‖ U)`, the reverse direction of [`kl_uniform`].
pub fn confidence_penalty(probs: &ProbMatrix) -> f64 {
    mean_rows(probs, confidence_row)
}

/// Mean of squared parameter values; 0 for an empty slice.
pub fn l2_mean_squared(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64
}

fn mean_rows(probs: &ProbMatrix, f: impl Fn(&[f64]) -> f64) -> f64 {
    probs.rows().map(f).sum::<f64>() / probs.num_rows() as f64
}

fn kl_prior_row(row: &[f64], prior: &[f64]) -> f64 {
    row.iter()
        .zip(prior)
        .map(|(&p, &a)| a * (a.ln() - floored_ln(p)))
        .sum()
}

fn kl_uniform_row(row: &[f64]) -> f64 {
    let k = row.len() as f64;
    -k.ln() - row.iter().map(|&p| floored_ln(p)).sum::<f64>() / k
}

fn confidence_row(row: &[f64]) -> f64 {
    let k = row.len() as f64;
    k.ln() + row.iter().map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 }).sum::<f64>()
}

/// Per-row penalty (before multiplying by lambda) for the distribution
/// penalties. `None` and `L2MeanSquared` contribute zero here.
pub(crate) fn row_value(kind: PenaltyKind, prior: Option<&[f64]>, row: &[f64]) -> f64 {
    match kind {
        PenaltyKind::None | PenaltyKind::L2MeanSquared => 0.0,
        PenaltyKind::FirthSimplified => -row.iter().map(|&p| floored_ln(p)).sum::<f64>(),
        PenaltyKind::KlUniform => kl_uniform_row(row),
        PenaltyKind::KlPrior => kl_prior_row(row, prior.expect("validated prior")),
        PenaltyKind::Confidence => confidence_row(row),
    }
}

/// Adds `scale * ∂(row_value)/∂z_k` to `out[k]`, where `z` are the logits
/// that produced `row` through a softmax.
pub(crate) fn add_row_logit_grad(
    kind: PenaltyKind,
    prior: Option<&[f64]>,
    row: &[f64],
    scale: f64,
    out: &mut [f64],
) {
    let k = row.len() as f64;
    match kind {
        PenaltyKind::None | PenaltyKind::L2MeanSquared => {}
        PenaltyKind::FirthSimplified => {
            for (o, &p) in out.iter_mut().zip(row) {
                *o += scale * (k * p - 1.0);
            }
        }
        PenaltyKind::KlUniform => {
            for (o, &p) in out.iter_mut().zip(row) {
                *o += scale * (p - 1.0 / k);
            }
        }
        PenaltyKind::KlPrior => {
            let prior = prior.expect("validated prior");
            for ((o, &p), &a) in out.iter_mut().zip(row).zip(prior) {
                *o += scale * (p - a);
            }
        }
        PenaltyKind::Confidence => {
            let neg_entropy: f64 = row
                .iter()
                .map(|&p| if p > 0.0 { p * p.ln() } else { 0.0 })
                .sum();
            for (o, &p) in out.iter_mut().zip(row) {
                if p > 0.0 {
                    *o += scale * p * (p.ln() - neg_entropy);
                }
            }
        }
    }
}

/// The loss contribution of `config`: `λ` times the named penalty, oriented
/// so that minimizing `mean CE + penalty_value` is the penalized objective.
pub fn penalty_value(config: &PenaltyConfig, probs: &ProbMatrix, params: &[f64]) -> Result<f64> {
    config.validate()?;
    if !config.is_active() {
        return Ok(0.0);
    }
    let base = match config.kind {
        PenaltyKind::None => 0.0,
        PenaltyKind::FirthSimplified => -firth_simplified(probs),
        PenaltyKind::KlUniform => kl_uniform(probs),
        PenaltyKind::KlPrior => kl_to_prior(probs, config.prior.as_deref().expect("validated"))?,
        PenaltyKind::Confidence => confidence_penalty(probs),
        PenaltyKind::L2MeanSquared => l2_mean_squared(params),
    };
    Ok(config.lambda * base)
}

/// `M_i = Diag(p_{1:J}) - p_{1:J} p_{1:J}ᵀ` over the non-reference classes.
pub fn block_m(row: &[f64]) -> Result<SymMatrix> {
    if row.len() < 2 {
        return Err(Error::invalid("probability row needs at least two classes"));
    }
    let p = &row[1..];
    Ok(SymMatrix::from_fn(p.len(), |j, k| {
        if j == k {
            p[j] * (1.0 - p[j])
        } else {
            -p[j] * p[k]
        }
    }))
}

/// Fisher information of the logistic model, laid out as `J x J` blocks of
/// `d x d`; block `(j, k)` is `Σ_i P_ij (δ_jk - P_ik) x_i x_iᵀ`.
pub fn build_fim(params: &LogisticParams, features: &[Vec<f64>]) -> Result<SymMatrix> {
    let probs = model::softmax_probs(params, features)?;
    let d = params.dim();
    let j_count = params.num_classes() - 1;
    let mut fim = SymMatrix::zeros(d * j_count);
    for (x, row) in features.iter().zip(probs.rows()) {
        let p = &row[1..];
        for j in 0..j_count {
            for k in j..j_count {
                let w = if j == k { p[j] * (1.0 - p[j]) } else { -p[j] * p[k] };
                if w == 0.0 {
                    continue;
                }
                for a in 0..d {
                    let wa = w * x[a];
                    let b_start = if j == k { a } else { 0 };
                    for (b, &xb) in x.iter().enumerate().skip(b_start) {
                        fim.add_sym(j * d + a, k * d + b, wa * xb);
                    }
                }
            }
        }
    }
    Ok(fim)
}

/// `Σ_i log det(M_i)` computed through the simplified form `Σ_i Σ_j log P_ij`.
fn sum_log_det_m(params: &LogisticParams, features: &[Vec<f64>]) -> Result<f64> {
    let probs = model::softmax_probs(params, features)?;
    Ok(firth_simplified(&probs) * probs.num_rows() as f64)
}

/// Difference-of-differences between the amended log-determinant of the
/// Fisher information and the simplified Firth term, for two parameter
/// settings over the same features. The data-only constant cancels, so the
/// result should vanish up to round-off.
pub fn penalty_oracle_residual(
    params_a: &LogisticParams,
    params_b: &LogisticParams,
    features: &[Vec<f64>],
) -> Result<f64> {
    if params_a.dim() != params_b.dim() || params_a.num_classes() != params_b.num_classes() {
        return Err(Error::invalid("parameter pair has mismatched shapes"));
    }
    let expected = features.len() * (params_a.num_classes() - 1);
    let mut log_dets = [0.0; 2];
    for (slot, params) in log_dets.iter_mut().zip([params_a, params_b]) {
        let fim = build_fim(params, features)?;
        let (ld, rank) = linalg::amended_log_det(&fim, linalg::DEFAULT_REL_TOL)?;
        if rank != expected {
            return Err(Error::DegenerateData { rank, expected });
        }
        *slot = ld;
    }
    let simplified = sum_log_det_m(params_a, features)? - sum_log_det_m(params_b, features)?;
    Ok((log_dets[0] - log_dets[1]) - simplified)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_probs(n: usize, k: usize, seed: u64) -> ProbMatrix {
        let mut rng = crate::seed::rng(seed);
        let logits: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..k).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        ProbMatrix::from_logits(&logits).unwrap()
    }

    #[test]
    fn firth_uniform_is_maximal() {
        let u = ProbMatrix::from_rows(&vec![vec![0.25; 4]; 3]).unwrap();
        assert_abs_diff_eq!(firth_simplified(&u), -4.0 * 4f64.ln(), epsilon = 1e-14);
        let p = random_probs(7, 4, 1);
        assert!(firth_simplified(&p) < -4.0 * 4f64.ln());
    }

    #[test]
    fn firth_single_row() {
        let p = ProbMatrix::from_rows(&[vec![1.0 / 3.0, 2.0 / 3.0]]).unwrap();
        assert_abs_diff_eq!(
            firth_simplified(&p),
            (1.0f64 / 3.0).ln() + (2.0f64 / 3.0).ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn kl_prior_cases() {
        let u = ProbMatrix::from_rows(&vec![vec![1.0 / 3.0; 3]; 2]).unwrap();
        assert_abs_diff_eq!(kl_to_prior(&u, &[1.0 / 3.0; 3]).unwrap(), 0.0, epsilon = 1e-15);

        let p = ProbMatrix::from_rows(&[vec![0.25, 0.75]]).unwrap();
        let expected = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert_abs_diff_eq!(kl_to_prior(&p, &[0.5, 0.5]).unwrap(), expected, epsilon = 1e-15);
        assert!(kl_to_prior(&p, &[0.2, 0.3, 0.5]).is_err());
    }

    #[test]
    fn kl_uniform_links_to_firth() {
        for seed in 0..10 {
            let p = random_probs(1, 5, seed);
            let via_firth = -(5f64).ln() - firth_simplified(&p) / 5.0;
            assert_abs_diff_eq!(kl_to_prior(&p, &[0.2; 5]).unwrap(), via_firth, epsilon = 1e-10);
            assert_abs_diff_eq!(kl_uniform(&p), via_firth, epsilon = 1e-10);
        }
    }

    #[test]
    fn confidence_cases() {
        let u = ProbMatrix::from_rows(&vec![vec![0.25; 4]; 2]).unwrap();
        assert_abs_diff_eq!(confidence_penalty(&u), 0.0, epsilon = 1e-15);

        let mut last = 0.0;
        for eps in [1e-2, 1e-4, 1e-8, 1e-12] {
            let p = ProbMatrix::from_rows(&[vec![1.0 - 3.0 * eps, eps, eps, eps]]).unwrap();
            let v = confidence_penalty(&p);
            assert!(v > last && v < 4f64.ln());
            last = v;
        }
        assert_abs_diff_eq!(last, 4f64.ln(), epsilon = 1e-9);

        let p = random_probs(3, 4, 5);
        assert!((confidence_penalty(&p) - kl_uniform(&p)).abs() > 1e-6);
    }

    #[test]
    fn l2_cases() {
        assert_eq!(l2_mean_squared(&[0.0; 9]), 0.0);
        assert_eq!(l2_mean_squared(&[3.0, 4.0]), 12.5);
    }

    #[test]
    fn block_m_cases() {
        let m = block_m(&[0.5, 0.5]).unwrap();
        assert_eq!(m.entries(), &[0.25]);
        let m = block_m(&[1.0 / 3.0; 3]).unwrap();
        assert_abs_diff_eq!(m.get(0, 0), 2.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.get(0, 1), -1.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn penalty_value_dispatch() {
        let p = random_probs(4, 3, 2);
        for kind in PenaltyKind::ALL {
            let mut cfg = PenaltyConfig::new(kind, 0.0);
            if kind == PenaltyKind::KlPrior {
                cfg = cfg.with_prior(vec![0.2, 0.3, 0.5]);
            }
            assert_eq!(penalty_value(&cfg, &p, &[1.0, 2.0]).unwrap(), 0.0);
        }
        let u = ProbMatrix::from_rows(&vec![vec![1.0 / 3.0; 3]; 2]).unwrap();
        let cfg = PenaltyConfig::new(PenaltyKind::KlUniform, 2.0);
        assert_abs_diff_eq!(penalty_value(&cfg, &u, &[]).unwrap(), 0.0, epsilon = 1e-15);

        let cfg = PenaltyConfig::new(PenaltyKind::FirthSimplified, 0.7);
        assert_abs_diff_eq!(
            penalty_value(&cfg, &p, &[]).unwrap(),
            -0.7 * firth_simplified(&p),
            epsilon = 1e-15
        );

        let missing = PenaltyConfig::new(PenaltyKind::KlPrior, 1.0);
        assert!(matches!(penalty_value(&missing, &p, &[]), Err(Error::Config(_))));
        let negative = PenaltyConfig::new(PenaltyKind::KlUniform, -1.0);
        assert!(negative.validate().is_err());
    }

    #[test]
    fn oracle_residual_same_params_is_zero() {
        let params = LogisticParams::new(vec![vec![0.1, -0.2, 0.3, 0.0, 0.5]]).unwrap();
        let mut rng = crate::seed::rng(3);
        let x: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        assert_eq!(penalty_oracle_residual(&params, &params, &x).unwrap(), 0.0);
    }

    #[test]
    fn oracle_residual_flags_rank_deficiency() {
        let params = LogisticParams::zeros(3, 4);
        // duplicate rows collapse the rank
        let x = vec![vec![1.0, 2.0, 3.0, 4.0]; 3];
        assert!(matches!(
            penalty_oracle_residual(&params, &params, &x),
            Err(Error::DegenerateData { rank: 2, expected: 6 })
        ));
    }
}
