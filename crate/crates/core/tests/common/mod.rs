#![allow(dead_code)]

use firth_core::cosine::CosineParams;
use firth_core::model::{Dense, FeatureSet, LogisticParams, MlpParams};
use firth_core::penalty::{PenaltyConfig, PenaltyKind};
use firth_core::seed;
use rand::Rng;
use rand_distr::StandardNormal;

pub type TestRng = seed::Rng;

pub fn gaussian_vec(rng: &mut TestRng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn random_logistic(rng: &mut TestRng, classes: usize, dim: usize, scale: f64) -> LogisticParams {
    LogisticParams::new((1..classes).map(|_| gaussian_vec(rng, dim, scale)).collect()).unwrap()
}

pub fn random_cosine(rng: &mut TestRng, classes: usize, dim: usize, tau: f64) -> CosineParams {
    CosineParams::new((0..classes).map(|_| gaussian_vec(rng, dim, 1.0)).collect(), tau).unwrap()
}

pub fn random_mlp(rng: &mut TestRng, dim: usize, hidden: (usize, usize), classes: usize) -> MlpParams {
    let mut layer = |inputs: usize, outputs: usize| {
        let s = (2.0 / inputs as f64).sqrt();
        Dense {
            inputs,
            outputs,
            weights: gaussian_vec(rng, inputs * outputs, s),
            bias: gaussian_vec(rng, outputs, 0.3),
        }
    };
    MlpParams::new([layer(dim, hidden.0), layer(hidden.0, hidden.1), layer(hidden.1, classes)]).unwrap()
}

/// Smallest |pre-activation| over both hidden layers and all rows.
pub fn min_abs_preactivation(p: &MlpParams, features: &[Vec<f64>]) -> f64 {
    let affine = |l: &Dense, x: &[f64]| -> Vec<f64> {
        (0..l.outputs)
            .map(|o| {
                l.bias[o]
                    + l.weights[o * l.inputs..(o + 1) * l.inputs]
                        .iter()
                        .zip(x)
                        .map(|(w, v)| w * v)
                        .sum::<f64>()
            })
            .collect()
    };
    let mut m = f64::INFINITY;
    for x in features {
        let a1 = affine(&p.layers[0], x);
        let h1: Vec<f64> = a1.iter().map(|v| v.max(0.0)).collect();
        let a2 = affine(&p.layers[1], &h1);
        m = a1.iter().chain(&a2).fold(m, |acc, v| acc.min(v.abs()));
    }
    m
}

pub fn random_batch(rng: &mut TestRng, n: usize, dim: usize, classes: usize) -> FeatureSet {
    let features = (0..n).map(|_| gaussian_vec(rng, dim, 1.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    FeatureSet::new(classes, features, labels).unwrap()
}

pub fn random_simplex(rng: &mut TestRng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

pub fn random_penalty(rng: &mut TestRng, kind: PenaltyKind, classes: usize) -> PenaltyConfig {
    match kind {
        PenaltyKind::None => PenaltyConfig::none(),
        PenaltyKind::L2MeanSquared => PenaltyConfig::new(kind, rng.random_range(1.0..100.0)),
        PenaltyKind::KlPrior => {
            PenaltyConfig::new(kind, rng.random_range(0.1..3.0)).with_prior(random_simplex(rng, classes))
        }
        _ => PenaltyConfig::new(kind, rng.random_range(0.1..3.0)),
    }
}

/// `‖a - b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn vec_rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(floor)
}
