//! Feature files (FSF1 binary and CSV), experiment configuration files and
//! atomic result writes.
//!
//! FSF1 layout, all little-endian:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "FSF1"
//! 4       4           version (u32, currently 1)
//! 8       4           row_count (u32)
//! 12      4           dim (u32)
//! 16      4           class_count (u32)
//! 20      4*rows      labels (u32)
//! ...     4*rows*dim  features (f32, row-major)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::episodes::{imbalanced_counts, synth_features, EpisodeSpec, EvalSplit, ImbalanceScheme};
use crate::error::{Error, Result};
use crate::eval::{FIRTH_GRID, L2_GRID};
use crate::model::{FeatureSet, MLP_HIDDEN};
use crate::penalty::{PenaltyConfig, PenaltyKind};
use crate::seed;
use crate::train::{Arch, TrainConfig};

pub const MAGIC: &[u8; 4] = b"FSF1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

/// Artifact version string embedded in result files.
pub const ARTIFACT_VERSION: &str = concat!("firth-core ", env!("CARGO_PKG_VERSION"));

fn format_err(path: &Path, location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        location: location.into(),
        message: message.into(),
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a feature file; `.csv` selects the text format, anything else FSF1.
pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    if is_csv(path) {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        parse_csv(path, &text)
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_fsf(path, &bytes)
    }
}

/// Writes a feature file atomically; features are stored as `f32`.
pub fn write_features(set: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if is_csv(path) {
        encode_csv(set).into_bytes()
    } else {
        encode_fsf(set)
    };
    write_atomic(path, &bytes)
}

fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

pub fn encode_fsf(set: &FeatureSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + set.len() * 4 * (1 + set.dim()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [set.len(), set.dim(), set.num_classes()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for &y in set.labels() {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    for x in set.features() {
        for &v in x {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_fsf(path: &Path, bytes: &[u8]) -> Result<FeatureSet> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            path,
            "byte 0",
            format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(format_err(path, "byte 0", "bad magic, expected FSF1"));
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(format_err(path, "byte 4", format!("unsupported version {version}")));
    }
    let rows = read_u32(bytes, 8) as usize;
    let dim = read_u32(bytes, 12) as usize;
    let classes = read_u32(bytes, 16) as usize;
    for (name, v, off) in [("row_count", rows, 8), ("dim", dim, 12), ("class_count", classes, 16)] {
        if v == 0 {
            return Err(format_err(path, format!("byte {off}"), format!("{name} must be >= 1")));
        }
    }
    let expected = HEADER_LEN + 4 * rows + 4 * rows * dim;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            format!("byte {}", bytes.len().min(expected)),
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let mut labels = Vec::with_capacity(rows);
    for i in 0..rows {
        let off = HEADER_LEN + 4 * i;
        let y = read_u32(bytes, off) as usize;
        if y >= classes {
            return Err(format_err(
                path,
                format!("byte {off}"),
                format!("label {y} is not below class_count {classes}"),
            ));
        }
        labels.push(y);
    }
    let base = HEADER_LEN + 4 * rows;
    let features = (0..rows)
        .map(|i| {
            (0..dim)
                .map(|k| {
                    let off = base + 4 * (i * dim + k);
                    f32::from_le_bytes(bytes[off..off + 4].try_into().expect("4 bytes")) as f64
                })
                .collect()
        })
        .collect();
    FeatureSet::new(classes, features, labels).map_err(|e| format_err(path, "payload", e.to_string()))
}

pub fn encode_csv(set: &FeatureSet) -> String {
    let mut out = format!("# classes={} dim={}\nlabel", set.num_classes(), set.dim());
    for k in 0..set.dim() {
        let _ = write!(out, ",f{k}");
    }
    out.push('\n');
    for (x, y) in set.rows() {
        let _ = write!(out, "{y}");
        for &v in x {
            let _ = write!(out, ",{}", v as f32);
        }
        out.push('\n');
    }
    out
}

pub fn parse_csv(path: &Path, text: &str) -> Result<FeatureSet> {
    let mut declared: Option<usize> = None;
    let mut features: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let at = || format!("line {line_no}");
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            for tok in comment.split_whitespace() {
                if let Some(v) = tok.strip_prefix("classes=") {
                    declared = Some(
                        v.parse()
                            .map_err(|_| format_err(path, at(), format!("bad class count `{v}`")))?,
                    );
                }
            }
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let first = fields.next().unwrap_or_default();
        if first.eq_ignore_ascii_case("label") {
            continue;
        }
        let y: usize = first
            .parse()
            .map_err(|_| format_err(path, at(), format!("bad label `{first}`")))?;
        if let Some(c) = declared {
            if y >= c {
                return Err(format_err(
                    path,
                    at(),
                    format!("label {y} is not below the declared {c} classes"),
                ));
            }
        }
        let x = fields
            .map(|f| {
                f.parse::<f32>()
                    .map(f64::from)
                    .map_err(|_| format_err(path, at(), format!("bad feature value `{f}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first_row) = features.first() {
            if x.len() != first_row.len() {
                return Err(format_err(
                    path,
                    at(),
                    format!("{} features, expected {}", x.len(), first_row.len()),
                ));
            }
        }
        features.push(x);
        labels.push(y);
    }
    let classes = declared.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    FeatureSet::new(classes, features, labels).map_err(|e| format_err(path, "end of file", e.to_string()))
}

/// Writes through a sibling temporary file and renames it into place.
/// Missing parent directories are an error, never created.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} has no file name", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(path, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

/// Where episodes come from.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceConfig {
    /// Gaussian clusters; validation and novel sets use distinct sub-seeds.
    Synth {
        classes: usize,
        dim: usize,
        per_class: usize,
        separation: f64,
        seed: u64,
    },
    Files {
        novel: PathBuf,
        validation: Option<PathBuf>,
    },
}

impl SourceConfig {
    /// `(validation, novel)` feature sets. Without a validation file the
    /// novel file serves both roles.
    pub fn load(&self) -> Result<(FeatureSet, FeatureSet)> {
        match self {
            SourceConfig::Synth {
                classes,
                dim,
                per_class,
                separation,
                seed,
            } => Ok((
                synth_features(*classes, *dim, *per_class, *separation, seed::derive(*seed, "validation-source", 0))?,
                synth_features(*classes, *dim, *per_class, *separation, seed::derive(*seed, "novel-source", 0))?,
            )),
            SourceConfig::Files { novel, validation } => {
                let n = read_features(novel)?;
                let v = match validation {
                    Some(p) => read_features(p)?,
                    None => n.clone(),
                };
                Ok((v, n))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArchName {
    Logistic,
    Mlp,
    Cosine,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub source: SourceConfig,
    pub ways: usize,
    pub shots: Vec<usize>,
    pub scheme: Option<ImbalanceScheme>,
    pub eval_split: EvalSplit,
    pub classes: Option<Vec<usize>>,
    pub arch: ArchName,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub shuffle: bool,
    pub tau: f64,
    pub hidden: (usize, usize),
    pub intercept: bool,
    pub seed: u64,
    pub trials: usize,
    pub validation_trials: usize,
    pub penalties: Vec<PenaltyKind>,
    pub arms: Vec<PenaltyConfig>,
    pub firth_grid: Vec<f64>,
    pub l2_grid: Vec<f64>,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            source: SourceConfig::Synth {
                classes: 16,
                dim: 32,
                per_class: 600,
                separation: 4.0,
                seed: 0,
            },
            ways: 16,
            shots: vec![1, 5, 10, 15, 20, 25],
            scheme: None,
            eval_split: EvalSplit::HeldoutFraction(0.10),
            classes: None,
            arch: ArchName::Logistic,
            learning_rate: 0.005,
            batch_size: 10,
            epochs: 400,
            shuffle: true,
            tau: Arch::DEFAULT_TAU,
            hidden: MLP_HIDDEN,
            intercept: false,
            seed: 0,
            trials: 800,
            validation_trials: 100,
            penalties: vec![PenaltyKind::KlUniform, PenaltyKind::L2MeanSquared],
            arms: vec![PenaltyConfig::none(), PenaltyConfig::new(PenaltyKind::KlUniform, 1.0)],
            firth_grid: FIRTH_GRID.to_vec(),
            l2_grid: L2_GRID.to_vec(),
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn arch(&self) -> Arch {
        match self.arch {
            ArchName::Logistic => Arch::Logistic,
            ArchName::Mlp => Arch::Mlp { hidden: self.hidden },
            ArchName::Cosine => Arch::Cosine { tau: self.tau },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            penalty: PenaltyConfig::none(),
            seed: self.seed,
            shuffle: self.shuffle,
        }
    }

    /// Episode spec for one shot count (ignored under an imbalance scheme).
    pub fn episode_spec(&self, shots: usize) -> EpisodeSpec {
        let counts = match self.scheme {
            Some(s) => imbalanced_counts(s),
            None => vec![shots; self.ways],
        };
        EpisodeSpec {
            ways: self.ways,
            counts,
            eval: self.eval_split,
            seed: seed::derive(self.seed, "episodes", shots as u64),
            classes: self.classes.clone(),
        }
    }

    pub fn grid(&self, kind: PenaltyKind) -> &[f64] {
        match kind {
            PenaltyKind::L2MeanSquared => &self.l2_grid,
            _ => &self.firth_grid,
        }
    }

    /// Renders the effective configuration in the file format accepted by
    /// [`parse_config`].
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
        let ulist = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(", ");
        let mut s = String::from("[source]\n");
        match &self.source {
            SourceConfig::Synth {
                classes,
                dim,
                per_class,
                separation,
                seed,
            } => {
                let _ = writeln!(s, "kind = synth");
                let _ = writeln!(s, "classes = {classes}");
                let _ = writeln!(s, "dim = {dim}");
                let _ = writeln!(s, "per_class = {per_class}");
                let _ = writeln!(s, "separation = {separation}");
                let _ = writeln!(s, "seed = {seed}");
            }
            SourceConfig::Files { novel, validation } => {
                let _ = writeln!(s, "kind = file");
                let _ = writeln!(s, "novel_path = {}", novel.display());
                if let Some(v) = validation {
                    let _ = writeln!(s, "validation_path = {}", v.display());
                }
            }
        }
        let _ = writeln!(s, "\n[episode]");
        let _ = writeln!(s, "ways = {}", self.ways);
        let _ = writeln!(s, "shots = {}", ulist(&self.shots));
        if let Some(scheme) = self.scheme {
            let name = match scheme {
                ImbalanceScheme::Avg7_5 => "avg7_5",
                ImbalanceScheme::Avg15 => "avg15",
            };
            let _ = writeln!(s, "scheme = {name}");
        }
        match self.eval_split {
            EvalSplit::HeldoutFraction(f) => {
                let _ = writeln!(s, "heldout_fraction = {f}");
            }
            EvalSplit::QueryPerClass(q) => {
                let _ = writeln!(s, "query_per_class = {q}");
            }
        }
        if let Some(c) = &self.classes {
            let _ = writeln!(s, "classes = {}", ulist(c));
        }
        let _ = writeln!(s, "\n[train]");
        let arch = match self.arch {
            ArchName::Logistic => "logistic",
            ArchName::Mlp => "mlp",
            ArchName::Cosine => "cosine",
        };
        let _ = writeln!(s, "arch = {arch}");
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "shuffle = {}", self.shuffle);
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "hidden = {}, {}", self.hidden.0, self.hidden.1);
        let _ = writeln!(s, "intercept = {}", self.intercept);
        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "validation_trials = {}", self.validation_trials);
        let kinds: Vec<&str> = self.penalties.iter().map(|k| k.name()).collect();
        let _ = writeln!(s, "penalties = {}", kinds.join(", "));
        let arms: Vec<String> = self.arms.iter().map(|a| format!("{}:{}", a.kind, a.lambda)).collect();
        let _ = writeln!(s, "arms = {}", arms.join(", "));
        let _ = writeln!(s, "firth_grid = {}", list(&self.firth_grid));
        let _ = writeln!(s, "l2_grid = {}", list(&self.l2_grid));
        if let Some(o) = &self.output {
            let _ = writeln!(s, "\n[output]\npath = {}", o.display());
        }
        s
    }

    /// The effective configuration as `# `-prefixed lines, for result files.
    pub fn provenance_header(&self) -> String {
        let mut s = format!("# {ARTIFACT_VERSION}\n");
        for line in self.to_text().lines() {
            let _ = writeln!(s, "# {line}");
        }
        s
    }
}

/// Reads and parses a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

fn line_err(line: usize, key: &str, message: impl Into<String>) -> Error {
    Error::ConfigLine {
        line,
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| line_err(line, key, format!("cannot parse `{v}` as {}", std::any::type_name::<T>())))
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(line, key, s))
        .collect()
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(line_err(line, key, format!("expected a boolean, got `{v}`"))),
    }
}

/// Parses the `[section]` / `key = value` format. Absent keys take their
/// defaults; unknown sections or keys and duplicates are errors.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut seen = std::collections::BTreeMap::<String, usize>::new();
    let mut section = String::new();

    let mut source_kind: Option<(String, usize)> = None;
    let (mut classes, mut dim, mut per_class, mut separation, mut source_seed) = (16, 32, 600, 4.0, 0u64);
    let mut novel_path: Option<PathBuf> = None;
    let mut validation_path: Option<PathBuf> = None;
    let mut epochs: Option<usize> = None;
    let mut trials: Option<usize> = None;
    let mut heldout: Option<(f64, usize)> = None;
    let mut query: Option<(usize, usize)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or_default().trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let name = name.trim();
            if !["source", "episode", "train", "eval", "output"].contains(&name) {
                return Err(line_err(line, name, "unknown section"));
            }
            section = name.to_string();
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(line_err(line, content, "expected `key = value`"));
        };
        let (key, v) = (key.trim(), value.trim());
        let full = format!("{section}.{key}");
        if let Some(prev) = seen.insert(full.clone(), line) {
            return Err(line_err(line, &full, format!("duplicate key, first set on line {prev}")));
        }
        match (section.as_str(), key) {
            ("source", "kind") => source_kind = Some((v.to_string(), line)),
            ("source", "classes") => classes = parse_value(line, &full, v)?,
            ("source", "dim") => dim = parse_value(line, &full, v)?,
            ("source", "per_class") => per_class = parse_value(line, &full, v)?,
            ("source", "separation") => separation = parse_value(line, &full, v)?,
            ("source", "seed") => source_seed = parse_value(line, &full, v)?,
            ("source", "novel_path") => novel_path = Some(PathBuf::from(v)),
            ("source", "validation_path") => validation_path = Some(PathBuf::from(v)),
            ("episode", "ways") => cfg.ways = parse_value(line, &full, v)?,
            ("episode", "shots") => cfg.shots = parse_list(line, &full, v)?,
            ("episode", "scheme") => cfg.scheme = Some(v.parse().map_err(|e: Error| line_err(line, &full, e.to_string()))?),
            ("episode", "heldout_fraction") => heldout = Some((parse_value(line, &full, v)?, line)),
            ("episode", "query_per_class") => query = Some((parse_value(line, &full, v)?, line)),
            ("episode", "classes") => cfg.classes = Some(parse_list(line, &full, v)?),
            ("train", "arch") => {
                cfg.arch = match v {
                    "logistic" => ArchName::Logistic,
                    "mlp" => ArchName::Mlp,
                    "cosine" => ArchName::Cosine,
                    _ => return Err(line_err(line, &full, format!("unknown architecture `{v}`"))),
                }
            }
            ("train", "learning_rate") => cfg.learning_rate = parse_value(line, &full, v)?,
            ("train", "batch_size") => cfg.batch_size = parse_value(line, &full, v)?,
            ("train", "epochs") => epochs = Some(parse_value(line, &full, v)?),
            ("train", "shuffle") => cfg.shuffle = parse_bool(line, &full, v)?,
            ("train", "tau") => cfg.tau = parse_value(line, &full, v)?,
            ("train", "hidden") => {
                let h: Vec<usize> = parse_list(line, &full, v)?;
                if h.len() != 2 {
                    return Err(line_err(line, &full, "expected two hidden widths"));
                }
                cfg.hidden = (h[0], h[1]);
            }
            ("train", "intercept") => cfg.intercept = parse_bool(line, &full, v)?,
            ("eval", "seed") => cfg.seed = parse_value(line, &full, v)?,
            ("eval", "trials") => trials = Some(parse_value(line, &full, v)?),
            ("eval", "validation_trials") => cfg.validation_trials = parse_value(line, &full, v)?,
            ("eval", "penalties") => {
                cfg.penalties = v
                    .split(',')
                    .map(|s| s.parse().map_err(|e: Error| line_err(line, &full, e.to_string())))
                    .collect::<Result<_>>()?
            }
            ("eval", "arms") => cfg.arms = parse_arms(line, &full, v)?,
            ("eval", "firth_grid") => cfg.firth_grid = parse_list(line, &full, v)?,
            ("eval", "l2_grid") => cfg.l2_grid = parse_list(line, &full, v)?,
            ("output", "path") => cfg.output = Some(PathBuf::from(v)),
            ("", _) => return Err(line_err(line, key, "key outside of any section")),
            _ => return Err(line_err(line, &full, "unknown key")),
        }
    }

    cfg.source = match source_kind.as_ref().map(|(k, l)| (k.as_str(), *l)) {
        None | Some(("synth", _)) => SourceConfig::Synth {
            classes,
            dim,
            per_class,
            separation,
            seed: source_seed,
        },
        Some(("file", l)) => SourceConfig::Files {
            novel: novel_path.ok_or_else(|| line_err(l, "source.novel_path", "required for file sources"))?,
            validation: validation_path,
        },
        Some((other, l)) => return Err(line_err(l, "source.kind", format!("unknown source kind `{other}`"))),
    };
    cfg.eval_split = match (heldout, query) {
        (Some(_), Some((_, l))) => {
            return Err(line_err(l, "episode.query_per_class", "conflicts with heldout_fraction"))
        }
        (Some((f, _)), None) => EvalSplit::HeldoutFraction(f),
        (None, Some((q, _))) => EvalSplit::QueryPerClass(q),
        (None, None) => EvalSplit::HeldoutFraction(0.10),
    };
    let arch_default = cfg.arch();
    cfg.epochs = epochs.unwrap_or_else(|| arch_default.default_epochs());
    cfg.trials = trials.unwrap_or(if cfg.arch == ArchName::Mlp { 400 } else { 800 });
    if cfg.scheme.is_some() {
        cfg.ways = 16;
    }
    validate_config(&cfg, &seen)?;
    Ok(cfg)
}

fn parse_arms(line: usize, key: &str, v: &str) -> Result<Vec<PenaltyConfig>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (kind, lambda) = item.split_once(':').unwrap_or((item, "0"));
            let kind: PenaltyKind = kind.parse().map_err(|e: Error| line_err(line, key, e.to_string()))?;
            let lambda: f64 = parse_value(line, key, lambda.trim())?;
            Ok(PenaltyConfig::new(kind, lambda))
        })
        .collect()
}

fn validate_config(cfg: &ExperimentConfig, seen: &std::collections::BTreeMap<String, usize>) -> Result<()> {
    let at = |key: &str, msg: String| line_err(seen.get(key).copied().unwrap_or(0), key, msg);
    if cfg.ways < 2 {
        return Err(at("episode.ways", format!("must be >= 2, got {}", cfg.ways)));
    }
    if cfg.shots.is_empty() || cfg.shots.contains(&0) {
        return Err(at("episode.shots", "must be a non-empty list of positive counts".into()));
    }
    if let EvalSplit::HeldoutFraction(f) = cfg.eval_split {
        if !(f > 0.0 && f < 1.0) {
            return Err(at("episode.heldout_fraction", format!("must be in (0, 1), got {f}")));
        }
    }
    if cfg.eval_split == EvalSplit::QueryPerClass(0) {
        return Err(at("episode.query_per_class", "must be >= 1".into()));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(at("train.learning_rate", format!("must be positive, got {}", cfg.learning_rate)));
    }
    if cfg.batch_size == 0 {
        return Err(at("train.batch_size", "must be >= 1".into()));
    }
    if cfg.epochs == 0 {
        return Err(at("train.epochs", "must be >= 1".into()));
    }
    if !(cfg.tau > 0.0) {
        return Err(at("train.tau", format!("must be positive, got {}", cfg.tau)));
    }
    if cfg.hidden.0 == 0 || cfg.hidden.1 == 0 {
        return Err(at("train.hidden", "widths must be >= 1".into()));
    }
    if cfg.trials == 0 {
        return Err(at("eval.trials", "must be >= 1".into()));
    }
    if cfg.validation_trials == 0 {
        return Err(at("eval.validation_trials", "must be >= 1".into()));
    }
    for (key, grid) in [("eval.firth_grid", &cfg.firth_grid), ("eval.l2_grid", &cfg.l2_grid)] {
        if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(at(key, "must be a non-empty list of nonnegative numbers".into()));
        }
    }
    if cfg.arms.is_empty() || cfg.arms.iter().any(|a| !(a.lambda >= 0.0)) {
        return Err(at("eval.arms", "must list at least one kind:lambda with lambda >= 0".into()));
    }
    if let SourceConfig::Synth {
        classes,
        dim,
        per_class,
        separation,
        ..
    } = cfg.source
    {
        if classes < cfg.ways {
            return Err(at("source.classes", format!("{classes} classes cannot fill a {}-way episode", cfg.ways)));
        }
        if dim == 0 || per_class == 0 {
            return Err(at("source.dim", "dim and per_class must be >= 1".into()));
        }
        if !(separation >= 0.0) {
            return Err(at("source.separation", "must be >= 0".into()));
        }
    }
    if let Some(c) = &cfg.classes {
        if c.len() != cfg.ways {
            return Err(at("episode.classes", format!("{} classes listed for {} ways", c.len(), cfg.ways)));
        }
    }
    Ok(())
}
