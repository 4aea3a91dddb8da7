use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use firth_core::checks::{fim_check, grad_check};
use firth_core::episodes::{synth_features, EpisodeSpec, EvalSplit};
use firth_core::eval::{paired_improvement, run_trials, sweep_lambda, SweepReport, SweepSetup};
use firth_core::geom::{bias_curve, GeomExperimentConfig};
use firth_core::io::{self, ExperimentConfig, ARTIFACT_VERSION};
use firth_core::{Arch, Error, FeatureSet, PenaltyConfig, PenaltyKind, TrainConfig};

#[derive(Parser)]
#[command(name = "firth", version, about = "Firth bias reduction experiments")]
struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output file (CSV for tables, .fsf or .csv for features).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for trial-level parallelism.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    workers: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo bias of the geometric MLE and its Firth correction.
    GeomDemo(GeomArgs),
    /// Write a synthetic Gaussian feature set.
    Synth(SynthArgs),
    /// Train one classifier on a 90/10 split and print held-out accuracy.
    Train(TrainArgs),
    /// Select λ on validation classes, then compare against the baseline on novel classes.
    Sweep,
    /// Run matched trials for the configured arms.
    Trials,
    /// Check the Firth log-det identity on random instances.
    FimCheck(FimArgs),
    /// Compare analytic and finite-difference gradients.
    GradCheck(GradArgs),
}

fn parse_beta(s: &str) -> Result<f64, String> {
    let b: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if b > 0.0 && b < 1.0 {
        Ok(b)
    } else {
        Err(format!("beta must lie strictly between 0 and 1, got {b}"))
    }
}

#[derive(Args)]
struct GeomArgs {
    #[arg(long, default_value_t = 0.5, value_parser = parse_beta)]
    beta: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 16, 32, 64, 128])]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 200_000, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 16)]
    classes: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Logistic,
    Mlp,
    Cosine,
}

#[derive(Args)]
struct TrainArgs {
    /// Feature file; a synthetic set is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ArchArg::Logistic)]
    arch: ArchArg,
    #[arg(long, default_value = "none")]
    penalty: PenaltyKind,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0.005)]
    lr: f64,
    #[arg(long, default_value_t = 10)]
    batch: usize,
    #[arg(long, default_value_t = 0.10)]
    heldout: f64,
    #[arg(long, default_value_t = Arch::DEFAULT_TAU)]
    tau: f64,
}

#[derive(Args)]
struct FimArgs {
    #[arg(long, default_value_t = 30)]
    instances: usize,
    #[arg(long, default_value_t = 4)]
    rows: usize,
    #[arg(long, default_value_t = 9)]
    dim: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args)]
struct GradArgs {
    #[arg(long, default_value_t = 50)]
    triples: usize,
    /// MLP hidden widths for the check, e.g. `--hidden 10 8`.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [10usize, 8])]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::ConfigLine { .. } | Error::InvalidInput(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n as usize).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match &cli.command {
        Command::GeomDemo(a) => geom_demo(&cli, a),
        Command::Synth(a) => synth(&cli, a),
        Command::Train(a) => train(&cli, a),
        Command::Sweep => sweep(&cli),
        Command::Trials => trials(&cli),
        Command::FimCheck(a) => fim(&cli, a),
        Command::GradCheck(a) => grad(&cli, a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => Ok(io::write_atomic(p, text.as_bytes())?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => io::load_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.out.is_some() {
        cfg.output.clone_from(&cli.out);
    }
    Ok(cfg)
}

fn geom_demo(cli: &Cli, a: &GeomArgs) -> CliResult {
    let config = GeomExperimentConfig {
        beta_star: a.beta,
        sample_sizes: a.sizes.clone(),
        trials_per_size: a.trials as usize,
        seed: cli.seed.unwrap_or(0),
    };
    config.validate()?;
    eprintln!("simulating {} trials for each of {} sample sizes", a.trials, a.sizes.len());
    let curve = bias_curve(&config)?;
    let sizes: Vec<String> = a.sizes.iter().map(usize::to_string).collect();
    let mut text = format!(
        "# {ARTIFACT_VERSION}\n# geom-demo beta={} sizes={} trials={} seed={}\n",
        a.beta,
        sizes.join(","),
        a.trials,
        config.seed
    );
    text.push_str(&curve.to_csv());
    emit(cli.out.as_deref(), &text)?;
    if cli.out.is_some() {
        println!("slope_mle {:.4}", curve.slope_mle);
        for r in &curve.rows {
            println!("N={:<4} bias_mle {:+.5}  bias_firth {:+.5}", r.n, r.bias_mle, r.bias_firth);
        }
    } else {
        println!("# slope_mle {:.4}", curve.slope_mle);
    }
    Ok(())
}

fn synth(cli: &Cli, a: &SynthArgs) -> CliResult {
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| Failure::Usage("synth needs --out".into()))?;
    let set = synth_features(a.classes, a.dim, a.per_class, a.separation, cli.seed.unwrap_or(0))?;
    io::write_features(&set, out)?;
    eprintln!("wrote {} rows of dimension {} to {}", set.len(), set.dim(), out.display());
    Ok(())
}

/// Per-class split: `round(heldout · n_c)` rows held out, the rest trained on.
fn split(data: &FeatureSet, heldout: f64, seed: u64) -> Result<(FeatureSet, FeatureSet), Failure> {
    if !(heldout > 0.0 && heldout < 1.0) {
        return Err(Failure::Usage(format!("--heldout must be in (0, 1), got {heldout}")));
    }
    let by_class = data.class_indices();
    let present: Vec<usize> = (0..data.num_classes())
        .filter(|&c| !by_class[c].is_empty())
        .collect();
    let counts = present
        .iter()
        .map(|&c| {
            let n = by_class[c].len();
            n - ((heldout * n as f64).round() as usize).max(1)
        })
        .collect();
    let spec = EpisodeSpec {
        ways: present.len(),
        counts,
        eval: EvalSplit::HeldoutFraction(heldout),
        seed,
        classes: Some(present),
    };
    let ep = firth_core::episodes::sample_episode(data, &spec)?;
    Ok((ep.support, ep.evaluation))
}

fn train(cli: &Cli, a: &TrainArgs) -> CliResult {
    let seed = cli.seed.unwrap_or(0);
    let data = match &a.data {
        Some(p) => io::read_features(p)?,
        None => synth_features(16, 32, 100, 3.0, seed)?,
    };
    let arch = match a.arch {
        ArchArg::Logistic => Arch::Logistic,
        ArchArg::Mlp => Arch::mlp(),
        ArchArg::Cosine => Arch::Cosine { tau: a.tau },
    };
    let mut penalty = PenaltyConfig::new(a.penalty, a.lambda);
    let (support, heldout) = split(&data, a.heldout, seed)?;
    if penalty.kind == PenaltyKind::KlPrior && penalty.prior.is_none() {
        let counts: Vec<usize> = support.class_indices().iter().map(|rows| rows.len().max(1)).collect();
        penalty.prior = Some(firth_core::episodes::empirical_class_prior(&counts)?);
    }
    let config = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        epochs: a.epochs.unwrap_or_else(|| arch.default_epochs()),
        penalty,
        seed,
        shuffle: true,
    };
    eprintln!(
        "training {} on {} rows for {} epochs",
        arch.name(),
        support.len(),
        config.epochs
    );
    let model = firth_core::train::sgd_train(&support, &config, arch)?;
    let acc = model.accuracy(&heldout)?;
    let mut text = format!("# {ARTIFACT_VERSION}\n# train arch={} penalty={} lr={} batch={} epochs={} seed={seed}\n", arch.name(), config.penalty.label(), config.learning_rate, config.batch_size, config.epochs);
    let _ = writeln!(text, "arch,penalty,lambda,train_rows,heldout_rows,heldout_accuracy");
    let _ = writeln!(
        text,
        "{},{},{},{},{},{}",
        arch.name(),
        config.penalty.kind,
        config.penalty.lambda,
        support.len(),
        heldout.len(),
        acc
    );
    if let Some(p) = &cli.out {
        io::write_atomic(p, text.as_bytes())?;
    }
    println!("heldout_accuracy {acc:.4}");
    Ok(())
}

fn sweep(cli: &Cli) -> CliResult {
    let cfg = load_config(cli)?;
    let (val, novel) = cfg.source.load()?;
    let (val, novel) = with_intercept(&cfg, val, novel);
    let mut text = cfg.provenance_header();
    text.push_str(SweepReport::CSV_HEADER);
    text.push('\n');
    for &kind in &cfg.penalties {
        for &shots in &cfg.shots {
            eprintln!("sweeping {kind} at {shots} shots");
            let setup = SweepSetup {
                spec: cfg.episode_spec(shots),
                kind,
                grid: cfg.grid(kind).to_vec(),
                train: cfg.train_config(),
                arch: cfg.arch(),
                validation_trials: cfg.validation_trials,
                novel_trials: cfg.trials,
                prior: None,
            };
            let r = sweep_lambda(&val, &novel, &setup)?;
            eprintln!(
                "  λ*={} improvement {:+.4} ± {:.4}",
                r.selected_lambda, r.improvement, r.improvement_ci
            );
            text.push_str(&r.csv_row());
            text.push('\n');
            if cfg.scheme.is_some() {
                break;
            }
        }
    }
    emit(cfg.output.as_deref(), &text)
}

fn with_intercept(cfg: &ExperimentConfig, val: FeatureSet, novel: FeatureSet) -> (FeatureSet, FeatureSet) {
    if cfg.intercept {
        (val.with_bias_column(), novel.with_bias_column())
    } else {
        (val, novel)
    }
}

fn trials(cli: &Cli) -> CliResult {
    let cfg = load_config(cli)?;
    let (_, novel) = cfg.source.load()?;
    let novel = if cfg.intercept { novel.with_bias_column() } else { novel };
    let mut text = cfg.provenance_header();
    let mut header_done = false;
    for &shots in &cfg.shots {
        eprintln!("running {} trials at {shots} shots", cfg.trials);
        let batch = run_trials(&novel, &cfg.episode_spec(shots), &cfg.arms, &cfg.train_config(), cfg.arch(), cfg.trials)?;
        for f in &batch.failures {
            eprintln!("  trial {} failed: {}", f.trial, f.message);
        }
        let csv = batch.to_csv();
        let body = if header_done {
            csv.split_once('\n').map_or("", |(_, rest)| rest)
        } else {
            &csv
        };
        header_done = true;
        text.push_str(body);

        let labels: Vec<String> = batch.results.iter().map(|r| r.arm.clone()).fold(Vec::new(), |mut v, a| {
            if !v.contains(&a) {
                v.push(a);
            }
            v
        });
        for label in &labels {
            if let Some((m, ci)) = batch.mean_accuracy(label) {
                println!("{shots}-shot {label}: accuracy {m:.4} ± {ci:.4}");
            }
        }
        for label in labels.iter().skip(1) {
            if let Ok(p) = paired_improvement(&batch.results, &labels[0], label) {
                println!("{shots}-shot {label} vs {}: {:+.4} ± {:.4} over {} pairs", labels[0], p.mean, p.ci95, p.pairs);
            }
        }
        if cfg.scheme.is_some() {
            break;
        }
    }
    match &cfg.output {
        Some(p) => Ok(io::write_atomic(p, text.as_bytes())?),
        None => Ok(()),
    }
}

fn fim(cli: &Cli, a: &FimArgs) -> CliResult {
    let r = fim_check(a.instances, a.rows, a.dim, cli.seed.unwrap_or(0))?;
    println!("max_abs_residual {:.3e} over {} instances", r.max_abs_residual, r.instances);
    if r.max_abs_residual > a.tol {
        return Err(Failure::Runtime(format!("residual exceeds tolerance {}", a.tol)));
    }
    Ok(())
}

fn grad(cli: &Cli, a: &GradArgs) -> CliResult {
    let hidden = (a.hidden[0], a.hidden[1]);
    if hidden.0 == 0 || hidden.1 == 0 {
        return Err(Failure::Usage("hidden widths must be >= 1".into()));
    }
    let rows = grad_check(a.triples, hidden, cli.seed.unwrap_or(0))?;
    let mut worst: f64 = 0.0;
    let mut text = String::from("arch,penalty,triples,max_rel_error\n");
    for r in &rows {
        worst = worst.max(r.max_rel_error);
        let _ = writeln!(text, "{},{},{},{:e}", r.arch, r.kind, r.triples, r.max_rel_error);
    }
    emit(cli.out.as_deref(), &text)?;
    println!("max_rel_error {worst:.3e}");
    if worst > a.tol {
        return Err(Failure::Runtime(format!("gradient error exceeds tolerance {}", a.tol)));
    }
    Ok(())
}
