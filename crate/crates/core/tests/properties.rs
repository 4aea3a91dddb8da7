use std::path::Path;

use firth_core::io::{decode_fsf, encode_fsf, parse_config, ExperimentConfig};
use firth_core::model::{log_likelihood, softmax_probs, FeatureSet, LogisticParams};
use firth_core::penalty::{kl_uniform, PenaltyKind};
use firth_core::ProbMatrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-30.0..30.0f64, cols), rows)
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(logits in (1usize..6, 2usize..7).prop_flat_map(|(r, c)| matrix(r, c))) {
        let p = ProbMatrix::from_logits(&logits).unwrap();
        for row in p.rows() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        prop_assert!(kl_uniform(&p) >= -1e-12);
    }

    #[test]
    fn log_likelihood_ignores_row_order(
        betas in matrix(2, 3),
        x in matrix(6, 3),
        labels in prop::collection::vec(0usize..3, 6),
        rot in 0usize..6,
    ) {
        let params = LogisticParams::new(betas).unwrap();
        let data = FeatureSet::new(3, x.clone(), labels.clone()).unwrap();
        let mut xr = x;
        let mut lr = labels;
        xr.rotate_left(rot);
        lr.rotate_left(rot);
        let rotated = FeatureSet::new(3, xr, lr).unwrap();
        let (a, b) = (log_likelihood(&params, &data).unwrap(), log_likelihood(&params, &rotated).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        prop_assert!(softmax_probs(&params, data.features()).unwrap().num_rows() == 6);
    }

    #[test]
    fn fsf_round_trip_is_f32_exact(
        x in matrix(5, 4),
        labels in prop::collection::vec(0usize..4, 5),
    ) {
        let x: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|&v| v as f32 as f64).collect()).collect();
        let set = FeatureSet::new(4, x, labels).unwrap();
        let back = decode_fsf(Path::new("mem.fsf"), &encode_fsf(&set)).unwrap();
        prop_assert_eq!(back, set);
    }

    #[test]
    fn config_echo_parses_back(
        shots in prop::collection::vec(1usize..30, 1..5),
        lr in 1e-4..1.0f64,
        epochs in 1usize..1000,
        seed in any::<u64>(),
        kind in prop::sample::select(PenaltyKind::ALL.to_vec()),
    ) {
        let cfg = ExperimentConfig {
            shots,
            learning_rate: lr,
            epochs,
            seed,
            penalties: vec![kind],
            ..ExperimentConfig::default()
        };
        prop_assert_eq!(parse_config(&cfg.to_text()).unwrap(), cfg);
    }
}
