//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every export returns a flat `Float64Array`; the layouts are documented on
//! each function.

use firth_core::episodes::synth_features;
use firth_core::geom::{bias_curve, GeomExperimentConfig};
use firth_core::penalty::{penalty_value, PenaltyConfig, PenaltyKind};
use firth_core::train::{sgd_train, Arch, TrainConfig};
use firth_core::ProbMatrix;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

/// `[slope, n_0, bias_mle_0, bias_firth_0, n_1, ...]`.
#[wasm_bindgen]
pub fn geom_bias(beta: f64, trials: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    let config = GeomExperimentConfig {
        beta_star: beta,
        trials_per_size: trials,
        seed: seed as u64,
        ..GeomExperimentConfig::default()
    };
    let curve = bias_curve(&config).map_err(js_err)?;
    let mut out = vec![curve.slope_mle];
    for r in &curve.rows {
        out.extend([r.n as f64, r.bias_mle, r.bias_firth]);
    }
    Ok(out)
}

const TOY_CLASSES: usize = 3;
const TOY_EXTENT: f64 = 4.0;

/// Three Gaussian clusters in the plane, `shots` points each, fit by a
/// logistic head with intercept under `kl_uniform` at `lambda`.
///
/// Layout: `[shots * 3 points as (x, y, label)]` followed by
/// `grid * grid * 3` class probabilities, row-major from the top-left of the
/// square `[-4, 4]^2`.
#[wasm_bindgen]
pub fn toy_field(lambda: f64, shots: usize, grid: usize, seed: u32) -> Result<Vec<f64>, JsError> {
    let data = synth_features(TOY_CLASSES, 2, shots, 2.0, seed as u64).map_err(js_err)?;
    let config = TrainConfig {
        learning_rate: 0.05,
        batch_size: 10,
        epochs: 300,
        penalty: PenaltyConfig::new(PenaltyKind::KlUniform, lambda),
        seed: seed as u64,
        shuffle: true,
    };
    let model = sgd_train(&data.with_bias_column(), &config, Arch::Logistic).map_err(js_err)?;

    let mut out = Vec::with_capacity(data.len() * 3 + grid * grid * TOY_CLASSES);
    for (x, y) in data.rows() {
        out.extend([x[0], x[1], y as f64]);
    }
    let step = 2.0 * TOY_EXTENT / (grid.max(2) - 1) as f64;
    let cells: Vec<Vec<f64>> = (0..grid * grid)
        .map(|i| {
            let (r, c) = (i / grid, i % grid);
            vec![-TOY_EXTENT + c as f64 * step, TOY_EXTENT - r as f64 * step, 1.0]
        })
        .collect();
    let probs = model.probs(&cells).map_err(js_err)?;
    for row in probs.rows() {
        out.extend_from_slice(row);
    }
    Ok(out)
}

/// Penalty value over a triangular grid of 3-class distributions.
///
/// Layout: `(p0, p1, p2, value)` per point, for all `i + j <= res` with
/// `p = ((i, j, res - i - j) + eps) / (res + 3 eps)`. `kl_prior` uses the prior
/// `(0.6, 0.3, 0.1)`.
#[wasm_bindgen]
pub fn simplex_penalty(kind: &str, res: usize) -> Result<Vec<f64>, JsError> {
    let kind: PenaltyKind = kind.parse().map_err(js_err)?;
    let mut config = PenaltyConfig::new(kind, 1.0);
    if kind == PenaltyKind::KlPrior {
        config = config.with_prior(vec![0.6, 0.3, 0.1]);
    }
    let eps = 0.02;
    let mut out = Vec::new();
    for i in 0..=res {
        for j in 0..=res - i {
            let k = res - i - j;
            let total = res as f64 + 3.0 * eps;
            let row = [i, j, k].map(|c| (c as f64 + eps) / total).to_vec();
            let probs = ProbMatrix::from_rows(std::slice::from_ref(&row)).map_err(js_err)?;
            let v = penalty_value(&config, &probs, &[]).map_err(js_err)?;
            out.extend(row);
            out.push(v);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geom_layout() {
        let v = geom_bias(0.5, 200, 1).unwrap();
        assert_eq!(v.len(), 1 + 3 * 6);
        assert_eq!(v[1], 4.0);
    }

    #[test]
    fn toy_layout_and_smoothing() {
        let grid = 5;
        let shots = 4;
        let sharp = toy_field(0.0, shots, grid, 3).unwrap();
        let smooth = toy_field(5.0, shots, grid, 3).unwrap();
        assert_eq!(sharp.len(), shots * 3 * 3 + grid * grid * 3);
        let probs = |v: &[f64]| v[shots * 9..].to_vec();
        let (a, b) = (probs(&sharp), probs(&smooth));
        for cell in a.chunks(3) {
            assert!((cell.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let peak = |p: &[f64]| p.chunks(3).map(|c| c.iter().cloned().fold(0.0, f64::max)).sum::<f64>();
        assert!(peak(&b) < peak(&a));
    }

    #[test]
    fn simplex_minimum_is_uniform() {
        let v = simplex_penalty("kl_uniform", 6).unwrap();
        assert_eq!(v.len(), 4 * 28);
        let min = v.chunks(4).min_by(|a, b| a[3].total_cmp(&b[3])).unwrap();
        assert!(min[..3].iter().all(|p| (p - 1.0 / 3.0).abs() < 0.05), "{min:?}");
    }
}
