//! Matched-randomization trial runner, paired improvement statistics and
//! validation-driven coefficient sweeps.
//!
//! Within a trial every arm sees the same episode and the same training
//! seed, so per-trial accuracy differences carry no sampling noise from the
//! episode draw or the SGD shuffle.

use std::collections::BTreeMap;

use crate::episodes::{empirical_class_prior, sample_episode, EpisodeSpec};
use crate::error::{Error, Result};
use crate::model::FeatureSet;
use crate::penalty::{PenaltyConfig, PenaltyKind};
use crate::seed;
use crate::train::{sgd_train, Arch, TrainConfig};

/// 95% normal quantile used for every confidence interval.
pub const Z95: f64 = 1.96;

/// Firth (KL-to-uniform) coefficient grid.
pub const FIRTH_GRID: [f64; 8] = [0.0, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0];

/// L2 coefficient grid, for the mean-squared normalization.
pub const L2_GRID: [f64; 8] = [0.0, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0, 1000.0];

/// Default grid for a penalty kind.
pub fn default_grid(kind: PenaltyKind) -> Vec<f64> {
    match kind {
        PenaltyKind::L2MeanSquared => L2_GRID.to_vec(),
        _ => FIRTH_GRID.to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub episode_seed: u64,
    pub arm: String,
    pub kind: PenaltyKind,
    pub lambda: f64,
    pub way: usize,
    pub shot: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrialFailure {
    pub trial: usize,
    pub episode_seed: u64,
    pub arm: Option<String>,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct TrialBatch {
    pub results: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
}

impl TrialBatch {
    /// Mean accuracy of one arm.
    pub fn mean_accuracy(&self, arm: &str) -> Option<(f64, f64)> {
        let acc: Vec<f64> = self
            .results
            .iter()
            .filter(|r| r.arm == arm)
            .map(|r| r.accuracy)
            .collect();
        (!acc.is_empty()).then(|| mean_ci(&acc))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,episode_seed,arm,way,shot,lambda,accuracy\n");
        for r in &self.results {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.trial, r.episode_seed, r.arm, r.way, r.shot, r.lambda, r.accuracy
            ));
        }
        out
    }
}

/// Mean and `1.96 · sd / √n` (0 for a single value).
pub fn mean_ci(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, Z95 * (var / n).sqrt())
}

/// Unique arm labels, in order.
fn arm_labels(arms: &[PenaltyConfig]) -> Vec<String> {
    let mut seen = BTreeMap::new();
    arms.iter()
        .map(|a| {
            let base = a.label();
            let k = seen.entry(base.clone()).or_insert(0usize);
            *k += 1;
            if *k == 1 {
                base
            } else {
                format!("{base}#{k}")
            }
        })
        .collect()
}

/// Seed of episode `trial` under `spec`.
pub fn episode_seed(spec: &EpisodeSpec, trial: usize) -> u64 {
    seed::derive(spec.seed, "episode", trial as u64)
}

/// Runs `n_trials` episodes; in each, trains every arm with identical
/// episode rows and training seed. Failures are recorded per trial and the
/// whole trial is left out of `results`.
pub fn run_trials(
    source: &FeatureSet,
    spec: &EpisodeSpec,
    arms: &[PenaltyConfig],
    train: &TrainConfig,
    arch: Arch,
    n_trials: usize,
) -> Result<TrialBatch> {
    if arms.is_empty() {
        return Err(Error::Config("at least one arm is required".into()));
    }
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be >= 1".into()));
    }
    spec.validate()?;
    // arms carry their own penalties
    TrainConfig {
        penalty: PenaltyConfig::none(),
        ..train.clone()
    }
    .validate()?;
    for arm in arms {
        if !(arm.kind == PenaltyKind::KlPrior && arm.prior.is_none()) {
            arm.validate()?;
        }
    }
    let labels = arm_labels(arms);

    let outcomes = crate::par_map_indexed(n_trials, |t| {
        run_one_trial(source, spec, arms, &labels, train, arch, t)
    });

    let mut batch = TrialBatch::default();
    for outcome in outcomes {
        match outcome {
            Ok(rows) => batch.results.extend(rows),
            Err(f) => batch.failures.push(f),
        }
    }
    Ok(batch)
}

fn run_one_trial(
    source: &FeatureSet,
    spec: &EpisodeSpec,
    arms: &[PenaltyConfig],
    labels: &[String],
    train: &TrainConfig,
    arch: Arch,
    trial: usize,
) -> std::result::Result<Vec<TrialResult>, TrialFailure> {
    let ep_seed = episode_seed(spec, trial);
    let fail = |arm: Option<&String>, e: Error| TrialFailure {
        trial,
        episode_seed: ep_seed,
        arm: arm.cloned(),
        message: e.to_string(),
    };
    let episode = sample_episode(source, &spec.with_seed(ep_seed)).map_err(|e| fail(None, e))?;
    let train_seed = seed::derive(ep_seed, "train", 0);
    let mut rows = Vec::with_capacity(arms.len());
    for (arm, label) in arms.iter().zip(labels) {
        let mut penalty = arm.clone();
        if penalty.kind == PenaltyKind::KlPrior && penalty.prior.is_none() {
            // unigram smoothing: the support set's own class frequencies
            penalty.prior = Some(empirical_class_prior(&spec.counts).map_err(|e| fail(Some(label), e))?);
        }
        let config = TrainConfig {
            penalty,
            seed: train_seed,
            ..train.clone()
        };
        let model = sgd_train(&episode.support, &config, arch).map_err(|e| fail(Some(label), e))?;
        let accuracy = model
            .accuracy(&episode.evaluation)
            .map_err(|e| fail(Some(label), e))?;
        rows.push(TrialResult {
            trial,
            episode_seed: ep_seed,
            arm: label.clone(),
            kind: arm.kind,
            lambda: arm.lambda,
            way: spec.ways,
            shot: spec.mean_shots(),
            accuracy,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedImprovement {
    pub mean: f64,
    pub ci95: f64,
    pub pairs: usize,
}

/// Mean of `acc_b - acc_a` over episodes where both arms ran, with a
/// normal-approximation 95% half-width.
pub fn paired_improvement(
    results: &[TrialResult],
    arm_a: &str,
    arm_b: &str,
) -> Result<PairedImprovement> {
    let mut pairs: BTreeMap<u64, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in results {
        if r.arm == arm_a {
            pairs.entry(r.episode_seed).or_default().0 = Some(r.accuracy);
        }
        if r.arm == arm_b {
            pairs.entry(r.episode_seed).or_default().1 = Some(r.accuracy);
        }
    }
    let deltas: Vec<f64> = pairs
        .values()
        .filter_map(|(a, b)| Some((*b)? - (*a)?))
        .collect();
    if deltas.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} paired episodes for `{arm_a}` vs `{arm_b}`, need at least 2",
            deltas.len()
        )));
    }
    let (mean, ci95) = mean_ci(&deltas);
    Ok(PairedImprovement {
        mean,
        ci95,
        pairs: deltas.len(),
    })
}

/// Inputs of one coefficient sweep.
#[derive(Debug, Clone)]
pub struct SweepSetup {
    pub spec: EpisodeSpec,
    pub kind: PenaltyKind,
    pub grid: Vec<f64>,
    pub train: TrainConfig,
    pub arch: Arch,
    pub validation_trials: usize,
    pub novel_trials: usize,
    /// Fixed prior for `kl_prior`; `None` uses the support frequencies.
    pub prior: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub kind: PenaltyKind,
    pub way: usize,
    pub shot: f64,
    /// `(λ, mean validation accuracy)` in grid order.
    pub validation: Vec<(f64, f64)>,
    pub selected_lambda: f64,
    pub before: f64,
    pub before_ci: f64,
    pub after: f64,
    pub after_ci: f64,
    pub improvement: f64,
    pub improvement_ci: f64,
    /// `improvement / before`.
    pub relative_improvement: f64,
    pub novel_pairs: usize,
}

impl SweepReport {
    pub const CSV_HEADER: &'static str = "kind,way,shot,selected_lambda,before,before_ci,after,after_ci,improvement,improvement_ci,relative_improvement,pairs,validation";

    pub fn csv_row(&self) -> String {
        let val: Vec<String> = self
            .validation
            .iter()
            .map(|(l, a)| format!("{l}:{a}"))
            .collect();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.kind,
            self.way,
            self.shot,
            self.selected_lambda,
            self.before,
            self.before_ci,
            self.after,
            self.after_ci,
            self.improvement,
            self.improvement_ci,
            self.relative_improvement,
            self.novel_pairs,
            val.join(";")
        )
    }
}

fn arm_for(kind: PenaltyKind, lambda: f64, prior: &Option<Vec<f64>>) -> PenaltyConfig {
    if lambda == 0.0 {
        return PenaltyConfig::none();
    }
    let mut cfg = PenaltyConfig::new(kind, lambda);
    cfg.prior = prior.clone();
    cfg
}

/// Picks λ on validation classes (highest mean accuracy, ties to the
/// smaller λ), then measures baseline vs λ* on novel classes.
pub fn sweep_lambda(
    source_val: &FeatureSet,
    source_novel: &FeatureSet,
    setup: &SweepSetup,
) -> Result<SweepReport> {
    if setup.grid.is_empty() {
        return Err(Error::Config("lambda grid must be non-empty".into()));
    }
    if let Some(l) = setup.grid.iter().find(|l| !(**l >= 0.0)) {
        return Err(Error::Config(format!("grid contains invalid lambda {l}")));
    }
    let mut grid = setup.grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();

    let arms: Vec<PenaltyConfig> = grid
        .iter()
        .map(|&l| arm_for(setup.kind, l, &setup.prior))
        .collect();
    let labels = arm_labels(&arms);
    let val_spec = setup.spec.with_seed(seed::derive(setup.spec.seed, "validation", 0));
    let val = run_trials(
        source_val,
        &val_spec,
        &arms,
        &setup.train,
        setup.arch,
        setup.validation_trials,
    )?;
    let mut validation = Vec::with_capacity(grid.len());
    let mut selected = (grid[0], f64::NEG_INFINITY);
    for (&lambda, label) in grid.iter().zip(&labels) {
        let (acc, _) = val.mean_accuracy(label).ok_or_else(|| {
            Error::InsufficientData(format!("no successful validation trials for {label}"))
        })?;
        validation.push((lambda, acc));
        if acc > selected.1 {
            selected = (lambda, acc);
        }
    }
    let selected_lambda = selected.0;

    let novel_spec = setup.spec.with_seed(seed::derive(setup.spec.seed, "novel", 0));
    let baseline = PenaltyConfig::none();
    let chosen = arm_for(setup.kind, selected_lambda, &setup.prior);
    let novel_arms = if chosen.is_active() {
        vec![baseline, chosen]
    } else {
        vec![baseline]
    };
    let novel_labels = arm_labels(&novel_arms);
    let novel = run_trials(
        source_novel,
        &novel_spec,
        &novel_arms,
        &setup.train,
        setup.arch,
        setup.novel_trials,
    )?;
    let base_label = &novel_labels[0];
    let after_label = novel_labels.last().expect("non-empty");
    let (before, before_ci) = novel
        .mean_accuracy(base_label)
        .ok_or_else(|| Error::InsufficientData("no successful novel trials".into()))?;
    let (after, after_ci) = novel.mean_accuracy(after_label).expect("same trials as baseline");
    let (improvement, improvement_ci, pairs) = if base_label == after_label {
        let n = novel.results.len();
        (0.0, 0.0, n)
    } else {
        let p = paired_improvement(&novel.results, base_label, after_label)?;
        (p.mean, p.ci95, p.pairs)
    };
    Ok(SweepReport {
        kind: setup.kind,
        way: setup.spec.ways,
        shot: setup.spec.mean_shots(),
        validation,
        selected_lambda,
        before,
        before_ci,
        after,
        after_ci,
        improvement,
        improvement_ci,
        relative_improvement: if before > 0.0 { improvement / before } else { f64::NAN },
        novel_pairs: pairs,
    })
}

/// Coefficient to use for `requested_way`: the exact entry if tuned,
/// otherwise the largest tuned way not above it, otherwise the largest
/// tuned way overall.
pub fn way_adoption_rule(tuned: &BTreeMap<usize, f64>, requested_way: usize) -> Result<f64> {
    if let Some(&l) = tuned.get(&requested_way) {
        return Ok(l);
    }
    tuned
        .range(..=requested_way)
        .next_back()
        .or_else(|| tuned.iter().next_back())
        .map(|(_, &l)| l)
        .ok_or_else(|| Error::InsufficientData("no tuned coefficients".into()))
}
