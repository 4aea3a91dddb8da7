//! Few-shot episodes: class subsets, per-class support counts and a
//! disjoint evaluation split, all driven by one seed.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::FeatureSet;
use crate::seed;

/// How the per-class evaluation rows are sized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalSplit {
    /// `round(fraction · class_pool)` rows per class, at least one.
    HeldoutFraction(f64),
    /// A fixed number of query rows per class.
    QueryPerClass(usize),
}

impl Default for EvalSplit {
    fn default() -> Self {
        EvalSplit::HeldoutFraction(0.10)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub ways: usize,
    /// Support rows per episode class, `counts.len() == ways`.
    pub counts: Vec<usize>,
    pub eval: EvalSplit,
    pub seed: u64,
    /// Fixed source classes to use instead of sampling a subset.
    pub classes: Option<Vec<usize>>,
}

impl EpisodeSpec {
    pub fn balanced(ways: usize, shots: usize, seed: u64) -> Self {
        Self {
            ways,
            counts: vec![shots; ways],
            eval: EvalSplit::default(),
            seed,
            classes: None,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ways < 2 {
            return Err(Error::Config(format!("ways must be >= 2, got {}", self.ways)));
        }
        if self.counts.len() != self.ways {
            return Err(Error::Config(format!(
                "{} support counts for a {}-way episode",
                self.counts.len(),
                self.ways
            )));
        }
        if self.counts.contains(&0) {
            return Err(Error::Config("every support count must be >= 1".into()));
        }
        match self.eval {
            EvalSplit::HeldoutFraction(f) if !(f > 0.0 && f < 1.0) => {
                return Err(Error::Config(format!(
                    "heldout_fraction must be in (0, 1), got {f}"
                )))
            }
            EvalSplit::QueryPerClass(0) => {
                return Err(Error::Config("query_per_class must be >= 1".into()))
            }
            _ => {}
        }
        if let Some(classes) = &self.classes {
            if classes.len() != self.ways {
                return Err(Error::Config(format!(
                    "fixed class list has {} entries for a {}-way episode",
                    classes.len(),
                    self.ways
                )));
            }
            let mut sorted = classes.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != classes.len() {
                return Err(Error::Config("fixed class list has duplicates".into()));
            }
        }
        Ok(())
    }

    /// Mean support count.
    pub fn mean_shots(&self) -> f64 {
        self.counts.iter().sum::<usize>() as f64 / self.counts.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: FeatureSet,
    pub evaluation: FeatureSet,
    /// `class_map[e]` is the source class behind episode label `e`.
    pub class_map: Vec<usize>,
    /// Source row indices behind `support` and `evaluation`.
    pub support_rows: Vec<usize>,
    pub evaluation_rows: Vec<usize>,
    pub seed: u64,
}

fn eval_rows(split: EvalSplit, pool: usize) -> usize {
    match split {
        EvalSplit::HeldoutFraction(f) => ((f * pool as f64).round() as usize).max(1),
        EvalSplit::QueryPerClass(q) => q,
    }
}

/// Draws one episode. The result depends only on `(source, spec)`.
pub fn sample_episode(source: &FeatureSet, spec: &EpisodeSpec) -> Result<Episode> {
    spec.validate()?;
    let num_classes = source.num_classes();
    let class_map = match &spec.classes {
        Some(fixed) => {
            if let Some(&c) = fixed.iter().find(|&&c| c >= num_classes) {
                return Err(Error::Config(format!(
                    "fixed class {c} does not exist in a {num_classes}-class source"
                )));
            }
            fixed.clone()
        }
        None => {
            if num_classes < spec.ways {
                return Err(Error::InsufficientData(format!(
                    "source has {num_classes} classes, episode needs {}",
                    spec.ways
                )));
            }
            let mut all: Vec<usize> = (0..num_classes).collect();
            let mut rng = seed::child_rng(spec.seed, "classes", 0);
            let (picked, _) = all.partial_shuffle(&mut rng, spec.ways);
            picked.to_vec()
        }
    };

    let by_class = source.class_indices();
    let mut support_rows = Vec::new();
    let mut support_labels = Vec::new();
    let mut evaluation_rows = Vec::new();
    let mut evaluation_labels = Vec::new();
    for (e, (&c, &count)) in class_map.iter().zip(&spec.counts).enumerate() {
        let mut pool = by_class[c].clone();
        let n_eval = eval_rows(spec.eval, pool.len());
        let required = count + n_eval;
        if pool.len() < required {
            return Err(Error::InfeasibleEpisode {
                class: c,
                available: pool.len(),
                required,
            });
        }
        let mut rng = seed::child_rng(spec.seed, "rows", c as u64);
        pool.shuffle(&mut rng);
        support_rows.extend_from_slice(&pool[..count]);
        support_labels.extend(std::iter::repeat_n(e, count));
        evaluation_rows.extend_from_slice(&pool[count..required]);
        evaluation_labels.extend(std::iter::repeat_n(e, n_eval));
    }

    let pick = |rows: &[usize], labels: Vec<usize>| {
        FeatureSet::new(
            spec.ways,
            rows.iter().map(|&i| source.features()[i].clone()).collect(),
            labels,
        )
    };
    Ok(Episode {
        support: pick(&support_rows, support_labels)?,
        evaluation: pick(&evaluation_rows, evaluation_labels)?,
        class_map,
        support_rows,
        evaluation_rows,
        seed: spec.seed,
    })
}

/// Imbalanced 16-way support count schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImbalanceScheme {
    /// Mean 7.5 shots per class.
    Avg7_5,
    /// Mean 15 shots per class.
    Avg15,
}

impl std::str::FromStr for ImbalanceScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "avg7_5" | "avg7.5" => Ok(ImbalanceScheme::Avg7_5),
            "avg15" => Ok(ImbalanceScheme::Avg15),
            other => Err(Error::Config(format!("unknown imbalance scheme `{other}`"))),
        }
    }
}

pub fn imbalanced_counts(scheme: ImbalanceScheme) -> Vec<usize> {
    match scheme {
        ImbalanceScheme::Avg7_5 => vec![2, 2, 2, 2, 4, 4, 4, 4, 8, 8, 8, 8, 16, 16, 16, 16],
        ImbalanceScheme::Avg15 => vec![1, 1, 5, 5, 9, 9, 13, 13, 17, 17, 21, 21, 25, 25, 29, 29],
    }
}

/// Counts normalized to a probability vector.
pub fn empirical_class_prior(counts: &[usize]) -> Result<Vec<f64>> {
    if counts.is_empty() || counts.contains(&0) {
        return Err(Error::invalid("class counts must be non-empty and positive"));
    }
    let total: usize = counts.iter().sum();
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Gaussian class clusters: each class mean is a random direction scaled to
/// `separation`, rows add standard normal noise.
pub fn synth_features(
    classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<FeatureSet> {
    if classes == 0 || dim == 0 || per_class == 0 {
        return Err(Error::invalid("classes, dim and per_class must all be >= 1"));
    }
    if !(separation >= 0.0) {
        return Err(Error::invalid(format!("separation must be >= 0, got {separation}")));
    }
    let mut mean_rng = seed::child_rng(seed, "synth-means", 0);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| mean_rng.sample(StandardNormal)).collect();
            let n = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.into_iter().map(|a| a / n * separation).collect()
        })
        .collect();
    let mut noise = seed::child_rng(seed, "synth-noise", 0);
    let mut features = Vec::with_capacity(classes * per_class);
    let mut labels = Vec::with_capacity(classes * per_class);
    for (c, mu) in means.iter().enumerate() {
        for _ in 0..per_class {
            features.push(
                mu.iter()
                    .map(|m| m + noise.sample::<f64, _>(StandardNormal))
                    .collect(),
            );
            labels.push(c);
        }
    }
    FeatureSet::new(classes, features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn counts_match_schemes() {
        let a = imbalanced_counts(ImbalanceScheme::Avg7_5);
        let b = imbalanced_counts(ImbalanceScheme::Avg15);
        assert_eq!(a.len(), 16);
        assert_eq!(b.len(), 16);
        assert_eq!(a.iter().sum::<usize>(), 120);
        assert_eq!(b.iter().sum::<usize>(), 240);
    }

    #[test]
    fn empirical_prior() {
        let p = empirical_class_prior(&[3, 3, 3]).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let p = empirical_class_prior(&imbalanced_counts(ImbalanceScheme::Avg7_5)).unwrap();
        assert_eq!(p[0], 2.0 / 120.0);
        assert_eq!(p[15], 16.0 / 120.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(empirical_class_prior(&[1, 0]).is_err());
    }

    #[test]
    fn full_take_keeps_ninety_percent() {
        let src = synth_features(3, 4, 10, 2.0, 1).unwrap();
        let spec = EpisodeSpec {
            counts: vec![9; 3],
            ..EpisodeSpec::balanced(3, 9, 5)
        };
        let ep = sample_episode(&src, &spec).unwrap();
        assert_eq!(ep.support.len(), 27);
        assert_eq!(ep.evaluation.len(), 3);
        let mut all: Vec<usize> = ep.support_rows.iter().chain(&ep.evaluation_rows).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn infeasible_episode_names_class() {
        let src = synth_features(3, 2, 5, 1.0, 2).unwrap();
        let spec = EpisodeSpec {
            classes: Some(vec![2, 0, 1]),
            ..EpisodeSpec::balanced(3, 5, 0)
        };
        match sample_episode(&src, &spec) {
            Err(Error::InfeasibleEpisode { class: 2, available: 5, required: 6 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn query_split_and_fixed_classes() {
        let src = synth_features(6, 3, 20, 1.0, 3).unwrap();
        let spec = EpisodeSpec {
            eval: EvalSplit::QueryPerClass(7),
            classes: Some(vec![5, 1]),
            ..EpisodeSpec::balanced(2, 4, 11)
        };
        let ep = sample_episode(&src, &spec).unwrap();
        assert_eq!(ep.class_map, vec![5, 1]);
        assert_eq!(ep.support.len(), 8);
        assert_eq!(ep.evaluation.len(), 14);
        for &r in &ep.support_rows[..4] {
            assert_eq!(src.labels()[r], 5);
        }
    }

    #[test]
    fn spec_validation() {
        let src = synth_features(4, 2, 10, 1.0, 0).unwrap();
        let bad = [
            EpisodeSpec::balanced(1, 2, 0),
            EpisodeSpec { counts: vec![1, 1], ..EpisodeSpec::balanced(3, 1, 0) },
            EpisodeSpec::balanced(3, 0, 0),
            EpisodeSpec { eval: EvalSplit::HeldoutFraction(1.0), ..EpisodeSpec::balanced(2, 1, 0) },
            EpisodeSpec { classes: Some(vec![1, 1]), ..EpisodeSpec::balanced(2, 1, 0) },
        ];
        for spec in bad {
            assert!(matches!(sample_episode(&src, &spec), Err(Error::Config(_))), "{spec:?}");
        }
        assert!(matches!(
            sample_episode(&src, &EpisodeSpec::balanced(5, 1, 0)),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn synth_is_seeded() {
        let a = synth_features(3, 5, 4, 2.0, 9).unwrap();
        assert_eq!(a, synth_features(3, 5, 4, 2.0, 9).unwrap());
        assert_ne!(a, synth_features(3, 5, 4, 2.0, 10).unwrap());
        let means_distinct: HashSet<u64> = a.features().iter().map(|r| r[0].to_bits()).collect();
        assert_eq!(means_distinct.len(), 12);
    }
}
