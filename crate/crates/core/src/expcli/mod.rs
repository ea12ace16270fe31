//! Run configuration, the four CLI verbs and report emission.
//!
//! A run config is a TOML file:
//!
//! ```toml
//! output_dir = "out"              # overridden by CASCADE_OUTPUT_DIR or --output-dir
//! seeds = [0, 1, 2]
//! presets = ["source_only", "oracle", "uda_image", "wsjt", "wsjt_cafa", "wsjt_cwfa"]
//!
//! [data]
//! shift = "syn2real_like"         # or "fog_like"
//! skew = true
//! generator_seed = 0
//! source_train = 2000
//! source_val = 500
//! target_train = 2000
//! target_val = 500
//! # [data.source] / [data.target] replace the shift preset's domain configs
//!
//! [train]                         # trainer settings, preset and seed come from the CLI
//! [adapt]                         # loss weights, alignment mode comes from the preset
//! [eval]                          # score threshold, NMS, pose criteria
//!
//! [label_time]
//! weak_images = [30, 150, 600]
//! full_images = [5, 25, 100, 400]
//! seed = 0
//! ```
//!
//! Every section rejects unknown keys. Outputs live under `output_dir`:
//!
//! ```text
//! data/{source_train,source_val,target_train,target_train_full,target_val}/
//! runs/<preset>/seed<k>/                        main matrix
//! runs/label_time/<preset>_n<images>/seed<k>/   truncated target split
//! report/{report.json,tables.md,label_time.svg}
//! ```

mod cli;
mod report;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cli::{main_with_args, Cli};
pub use report::{
    best_of, build_report, compare_curves, label_time_cost, label_time_svg, render_tables, write_report, Baseline,
    BestValue, CurveComparison, LabelTimeCurve, LabelTimePoint, PresetRow, RunEntry, RunReport, FULL_LABEL_COST,
    WEAK_LABEL_COST,
};

use crate::evalkit::{evaluate, EvalMode, EvalOptions, MetricReport};
use crate::netcore::load_checkpoint;
use crate::objectives::AdaptConfig;
use crate::scenegen::{
    fog_like, syn2real_like, write_dataset, AccessSnapshot, Dataset, DatasetManifest, DomainConfig, DomainTag,
    LabelMode, ShiftPreset, Split,
};
use crate::trainer::{run_prefix, run_training, HistoryRecord, Preset, RunPaths, TargetUsage, TrainConfig};
use crate::{Error, Result};

/// Environment variable overriding `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "CASCADE_OUTPUT_DIR";
pub const RUN_FILE: &str = "run.json";
pub const FINAL_FILE: &str = "final.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    Syn2realLike,
    FogLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub shift: ShiftKind,
    /// Skewed target class frequencies; syn2real-like only.
    pub skew: bool,
    pub generator_seed: u64,
    pub source_train: usize,
    pub source_val: usize,
    pub target_train: usize,
    pub target_val: usize,
    pub source: Option<DomainConfig>,
    pub target: Option<DomainConfig>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            shift: ShiftKind::Syn2realLike,
            skew: true,
            generator_seed: 0,
            source_train: 2000,
            source_val: 500,
            target_train: 2000,
            target_val: 500,
            source: None,
            target: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelTimeConfig {
    /// Weakly labeled target images per `wsjt_cwfa` run.
    pub weak_images: Vec<usize>,
    /// Fully labeled target images per `oracle` run.
    pub full_images: Vec<usize>,
    pub seed: u64,
}

impl Default for LabelTimeConfig {
    fn default() -> Self {
        Self {
            weak_images: vec![30, 150, 600],
            full_images: vec![5, 25, 100, 400],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_presets")]
    pub presets: Vec<Preset>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub adapt: AdaptConfig,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default)]
    pub label_time: LabelTimeConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_presets() -> Vec<Preset> {
    Preset::ALL.to_vec()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: default_output_dir(),
            seeds: default_seeds(),
            presets: default_presets(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            adapt: AdaptConfig::default(),
            eval: EvalOptions::default(),
            label_time: LabelTimeConfig::default(),
        }
    }
}

/// The datasets written by `generate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    SourceTrain,
    SourceVal,
    TargetTrain,
    TargetTrainFull,
    TargetVal,
}

impl DatasetName {
    pub const ALL: [DatasetName; 5] = [
        DatasetName::SourceTrain,
        DatasetName::SourceVal,
        DatasetName::TargetTrain,
        DatasetName::TargetTrainFull,
        DatasetName::TargetVal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DatasetName::SourceTrain => "source_train",
            DatasetName::SourceVal => "source_val",
            DatasetName::TargetTrain => "target_train",
            DatasetName::TargetTrainFull => "target_train_full",
            DatasetName::TargetVal => "target_val",
        }
    }
}

/// Parses a run config; errors carry the line and column.
pub fn parse_config(text: &str, path: &Path) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

/// Reads a run config. A relative `output_dir` is taken relative to the
/// config file; [`OUTPUT_DIR_ENV`] replaces it when set.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingInput(format!("config file {} not found", path.display())),
        _ => Error::io(path, e),
    })?;
    let mut config = parse_config(&text, path)?;
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
        config.output_dir = PathBuf::from(dir);
    } else if config.output_dir.is_relative() {
        let base = path.parent().unwrap_or(Path::new("."));
        config.output_dir = base.join(&config.output_dir);
    }
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.presets.is_empty() {
            return Err(Error::Config("presets must not be empty".into()));
        }
        for (i, p) in self.presets.iter().enumerate() {
            if self.presets[..i].contains(p) {
                return Err(Error::Config(format!("preset {p} listed twice")));
            }
        }
        let d = &self.data;
        if [d.source_train, d.source_val, d.target_train, d.target_val].contains(&0) {
            return Err(Error::Config("dataset sizes must be positive".into()));
        }
        if d.skew && d.shift == ShiftKind::FogLike {
            return Err(Error::Config("skew applies to the syn2real_like shift only".into()));
        }
        for n in self.label_time.weak_images.iter().chain(&self.label_time.full_images) {
            if *n == 0 || *n > d.target_train {
                return Err(Error::Config(format!(
                    "label_time image counts must lie in 1..={}, got {n}",
                    d.target_train
                )));
            }
        }
        self.train.validate()?;
        self.adapt.validate()?;
        let shift = self.shift();
        shift.source.validate()?;
        shift.target.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, with `output_dir` left out.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("run config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("output_dir");
        }
        let canonical = serde_json::to_string(&value).expect("json value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Domain pair after applying `[data.source]`/`[data.target]`.
    pub fn shift(&self) -> ShiftPreset {
        let mut preset = match self.data.shift {
            ShiftKind::Syn2realLike => syn2real_like(self.data.skew),
            ShiftKind::FogLike => fog_like(),
        };
        if let Some(s) = &self.data.source {
            preset.source = s.clone();
        }
        if let Some(t) = &self.data.target {
            preset.target = t.clone();
        }
        preset
    }

    pub fn manifest(&self, name: DatasetName) -> DatasetManifest {
        let shift = self.shift();
        let d = &self.data;
        let (n, tag, mode, split, domain) = match name {
            DatasetName::SourceTrain => (
                d.source_train,
                DomainTag::Source,
                LabelMode::Full,
                Split::Train,
                shift.source,
            ),
            DatasetName::SourceVal => (
                d.source_val,
                DomainTag::Source,
                LabelMode::Full,
                Split::Val,
                shift.source,
            ),
            DatasetName::TargetTrain => (
                d.target_train,
                DomainTag::Target,
                LabelMode::Weak,
                Split::Train,
                shift.target,
            ),
            DatasetName::TargetTrainFull => (
                d.target_train,
                DomainTag::Target,
                LabelMode::Full,
                Split::Train,
                shift.target,
            ),
            DatasetName::TargetVal => (
                d.target_val,
                DomainTag::Target,
                LabelMode::Full,
                Split::Val,
                shift.target,
            ),
        };
        DatasetManifest::new(n, tag, mode, d.generator_seed, split, domain)
    }

    pub fn dataset_dir(&self, name: DatasetName) -> PathBuf {
        self.output_dir.join("data").join(name.name())
    }

    pub fn run_dir(&self, preset: Preset, seed: u64, target_limit: Option<usize>) -> PathBuf {
        let runs = self.output_dir.join("runs");
        match target_limit {
            Some(n) => runs
                .join("label_time")
                .join(format!("{preset}_n{n}"))
                .join(format!("seed{seed}")),
            None => runs.join(preset.name()).join(format!("seed{seed}")),
        }
    }

    pub fn report_dir(&self) -> PathBuf {
        self.output_dir.join("report")
    }

    pub fn run_paths(&self, preset: Preset, seed: u64, target_limit: Option<usize>) -> RunPaths {
        let target_train = match preset.target_usage() {
            TargetUsage::None => None,
            TargetUsage::Full => Some(self.dataset_dir(DatasetName::TargetTrainFull)),
            _ => Some(self.dataset_dir(DatasetName::TargetTrain)),
        };
        RunPaths {
            source_train: self.dataset_dir(DatasetName::SourceTrain),
            target_train,
            val: self.dataset_dir(DatasetName::TargetVal),
            out_dir: self.run_dir(preset, seed, target_limit),
            target_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerateOutcome {
    pub dataset: DatasetName,
    pub dir: PathBuf,
    pub digest: String,
    pub written: bool,
}

/// Writes all five datasets; identical existing datasets are kept as is.
pub fn generate(config: &RunConfig) -> Result<Vec<GenerateOutcome>> {
    DatasetName::ALL
        .into_iter()
        .map(|name| {
            let dir = config.dataset_dir(name);
            let out = write_dataset(&dir, &config.manifest(name))?;
            Ok(GenerateOutcome {
                dataset: name,
                dir,
                digest: out.digest,
                written: out.written,
            })
        })
        .collect()
}

/// Identity of a run, written when it starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_id: String,
    pub preset: Preset,
    pub seed: u64,
    pub target_limit: Option<usize>,
    pub config_digest: String,
}

/// Written when a run completes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(flatten)]
    pub info: RunInfo,
    pub final_record: HistoryRecord,
    pub source_access: AccessSnapshot,
    pub target_access: Option<AccessSnapshot>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Trains one preset/seed, optionally on the first `target_limit` target
/// images. Resuming requires the same config digest.
pub fn train(
    config: &RunConfig,
    preset: Preset,
    seed: u64,
    target_limit: Option<usize>,
    resume: bool,
) -> Result<RunSummary> {
    if let Some(n) = target_limit {
        if n == 0 || n > config.data.target_train {
            return Err(Error::Config(format!(
                "target limit must lie in 1..={}, got {n}",
                config.data.target_train
            )));
        }
        if preset.target_usage() == TargetUsage::None {
            return Err(Error::Config(format!("preset {preset} uses no target images")));
        }
    }
    let train = TrainConfig {
        preset,
        seed,
        ..config.train.clone()
    };
    let paths = config.run_paths(preset, seed, target_limit);
    let info = RunInfo {
        run_id: run_prefix(&train, target_limit),
        preset,
        seed,
        target_limit,
        config_digest: config.digest(),
    };
    let run_file = paths.out_dir.join(RUN_FILE);
    if resume && run_file.is_file() {
        let previous: RunInfo = read_json(&run_file)?;
        if previous != info {
            return Err(Error::Config(format!(
                "{} was started with a different config (digest {})",
                paths.out_dir.display(),
                previous.config_digest
            )));
        }
    }
    fs::create_dir_all(&paths.out_dir).map_err(|e| Error::io(&paths.out_dir, e))?;
    let final_file = paths.out_dir.join(FINAL_FILE);
    if final_file.exists() {
        fs::remove_file(&final_file).map_err(|e| Error::io(&final_file, e))?;
    }
    write_json(&run_file, &info)?;

    let outcome = run_training(&train, &config.adapt, &config.eval, &paths, resume, None)?;
    let final_record = outcome
        .final_eval
        .ok_or_else(|| Error::InvalidInput("training ended without a final evaluation".into()))?;
    let summary = RunSummary {
        info,
        final_record,
        source_access: outcome.source_access,
        target_access: outcome.target_access,
    };
    write_json(&final_file, &summary)?;
    Ok(summary)
}

/// Evaluates a checkpoint on a fully labeled dataset.
pub fn eval_checkpoint(
    checkpoint: &Path,
    dataset: &Path,
    mode: EvalMode,
    options: &EvalOptions,
) -> Result<MetricReport> {
    if !checkpoint.is_file() {
        return Err(Error::MissingInput(format!(
            "checkpoint {} not found",
            checkpoint.display()
        )));
    }
    if !dataset.join("manifest.json").is_file() {
        return Err(Error::MissingInput(format!("dataset {} not found", dataset.display())));
    }
    let ck = load_checkpoint(checkpoint)?;
    let data = Dataset::open(dataset)?;
    evaluate(&ck.params, &data, mode, options)
}

/// Process exit code for an error: 1 config, 2 runtime, 3 missing inputs.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) | Error::Parse { .. } | Error::ImpossibleConfig(_) | Error::Supervision(_) => 1,
        Error::MissingInput(_) => 3,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 3,
        _ => 2,
    }
}
