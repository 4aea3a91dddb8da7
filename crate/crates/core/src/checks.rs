//! Randomized self-checks: the Firth log-det identity and analytic versus
//! finite-difference gradients.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::cosine::CosineParams;
use crate::error::Result;
use crate::model::{Dense, FeatureSet, LogisticParams, MlpParams};
use crate::penalty::{penalty_oracle_residual, PenaltyConfig, PenaltyKind};
use crate::seed::{self, Rng};
use crate::train::{finite_diff_grad, loss_and_grad, Arch, Classifier};

fn gaussian(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FimCheck {
    pub instances: usize,
    pub max_abs_residual: f64,
}

/// Largest |residual| over `instances` random pairs of logistic parameters
/// sharing `rows` random features of dimension `dim`; `J` cycles 1..=3.
pub fn fim_check(instances: usize, rows: usize, dim: usize, seed_value: u64) -> Result<FimCheck> {
    let mut worst: f64 = 0.0;
    for t in 0..instances {
        let mut rng = seed::child_rng(seed_value, "fim-check", t as u64);
        let j = 1 + t % 3;
        let mut params = || {
            LogisticParams::new((0..j).map(|_| gaussian(&mut rng, dim, 0.8)).collect())
        };
        let (a, b) = (params()?, params()?);
        let x: Vec<Vec<f64>> = (0..rows).map(|_| gaussian(&mut rng, dim, 1.0)).collect();
        worst = worst.max(penalty_oracle_residual(&a, &b, &x)?.abs());
    }
    Ok(FimCheck {
        instances,
        max_abs_residual: worst,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckRow {
    pub arch: &'static str,
    pub kind: PenaltyKind,
    pub triples: usize,
    pub max_rel_error: f64,
}

/// `‖a - b‖ / max(‖a‖, ‖b‖, 1e-8)`.
pub fn vector_relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    diff / norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied())).max(1e-8)
}

fn penalty_for(rng: &mut Rng, kind: PenaltyKind, classes: usize) -> PenaltyConfig {
    match kind {
        PenaltyKind::None => PenaltyConfig::none(),
        PenaltyKind::L2MeanSquared => PenaltyConfig::new(kind, rng.random_range(1.0..100.0)),
        PenaltyKind::KlPrior => {
            let raw: Vec<f64> = (0..classes).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            PenaltyConfig::new(kind, rng.random_range(0.1..3.0))
                .with_prior(raw.into_iter().map(|v| v / s).collect())
        }
        _ => PenaltyConfig::new(kind, rng.random_range(0.1..3.0)),
    }
}

fn mlp_away_from_kinks(rng: &mut Rng, dim: usize, hidden: (usize, usize), classes: usize, x: &[Vec<f64>]) -> MlpParams {
    loop {
        let mut layer = |inputs: usize, outputs: usize| Dense {
            inputs,
            outputs,
            weights: gaussian(rng, inputs * outputs, (2.0 / inputs as f64).sqrt()),
            bias: gaussian(rng, outputs, 0.3),
        };
        let p = MlpParams::new([layer(dim, hidden.0), layer(hidden.0, hidden.1), layer(hidden.1, classes)])
            .expect("shapes chain");
        if x.iter().all(|r| p.min_abs_preactivation(r) > 1e-3) {
            return p;
        }
    }
}

fn check_one<C: Classifier>(p: &C, data: &FeatureSet, pen: &PenaltyConfig, step: f64) -> Result<f64> {
    let (_, g) = loss_and_grad(p, data, pen)?;
    Ok(vector_relative_error(&g, &finite_diff_grad(p, data, pen, step)?))
}

/// Worst relative gradient error per architecture and penalty kind over
/// `triples` random (parameters, batch, penalty) draws. MLP draws use
/// `hidden` widths and avoid ReLU kinks.
pub fn grad_check(triples: usize, hidden: (usize, usize), seed_value: u64) -> Result<Vec<GradCheckRow>> {
    let mut rows = Vec::new();
    for (ki, kind) in PenaltyKind::ALL.into_iter().enumerate() {
        let mut worst = [0.0f64; 3];
        for t in 0..triples {
            let mut rng = seed::child_rng(seed::derive(seed_value, "grad-check", ki as u64), "triple", t as u64);
            let classes = rng.random_range(2..=5);
            let dim = rng.random_range(2..=6);
            let n = rng.random_range(1..=8);
            let features: Vec<Vec<f64>> = (0..n).map(|_| gaussian(&mut rng, dim, 1.0)).collect();
            let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let data = FeatureSet::new(classes, features, labels)?;
            let pen = penalty_for(&mut rng, kind, classes);

            let lp = LogisticParams::new((1..classes).map(|_| gaussian(&mut rng, dim, 0.7)).collect())?;
            worst[0] = worst[0].max(check_one(&lp, &data, &pen, 1e-5)?);
            let mp = mlp_away_from_kinks(&mut rng, dim, hidden, classes, data.features());
            worst[1] = worst[1].max(check_one(&mp, &data, &pen, 1e-6)?);
            let cp = CosineParams::new((0..classes).map(|_| gaussian(&mut rng, dim, 1.0)).collect(), Arch::DEFAULT_TAU)?;
            worst[2] = worst[2].max(check_one(&cp, &data, &pen, 1e-6)?);
        }
        for (arch, w) in ["logistic", "mlp", "cosine"].into_iter().zip(worst) {
            rows.push(GradCheckRow {
                arch,
                kind,
                triples,
                max_rel_error: w,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_runs_are_clean() {
        let f = fim_check(6, 4, 9, 1).unwrap();
        assert!(f.max_abs_residual < 1e-6);
        let g = grad_check(2, (6, 5), 1).unwrap();
        assert_eq!(g.len(), 18);
        assert!(g.iter().all(|r| r.max_rel_error < 1e-5), "{g:?}");
        assert_eq!(g, grad_check(2, (6, 5), 1).unwrap());
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(vector_relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((vector_relative_error(&[1.0, 0.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
