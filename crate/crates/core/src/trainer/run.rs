use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{lambda_schedule, make_batch, step_rng, train_step, TargetUsage, TrainConfig, TrainState};
use crate::evalkit::{evaluate, EvalMode, EvalOptions, MetricReport};
use crate::netcore::{load_checkpoint, save_checkpoint, Checkpoint};
use crate::objectives::{AdaptConfig, LossBreakdown};
use crate::scenegen::{AccessSnapshot, Dataset, LabelMode};
use crate::{Error, Result};

pub const HISTORY_FILE: &str = "history.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

/// Dataset locations and the output directory of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    pub source_train: PathBuf,
    pub target_train: Option<PathBuf>,
    /// Fully labeled target validation split.
    pub val: PathBuf,
    pub out_dir: PathBuf,
    /// Use only the first `n` target training images.
    pub target_limit: Option<usize>,
}

/// One line of the metric history: a loss record (`losses` set) or an
/// evaluation snapshot (`predicted`/`gt_boxes` set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    /// `<preset>/seed<k>/<kind>@<iteration>`.
    pub id: String,
    pub iteration: u64,
    pub lr: f64,
    pub lambda_grl: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<LossBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_boxes: Option<MetricReport>,
}

impl HistoryRecord {
    pub fn is_eval(&self) -> bool {
        self.predicted.is_some() || self.gt_boxes.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub history: Vec<HistoryRecord>,
    /// Final snapshot; `None` when the run stopped early.
    pub final_eval: Option<HistoryRecord>,
    pub source_access: AccessSnapshot,
    pub target_access: Option<AccessSnapshot>,
}

/// Record id prefix: `<preset>/seed<k>`, or `<preset>/n<limit>/seed<k>`
/// for runs on a truncated target split.
pub fn run_prefix(config: &TrainConfig, target_limit: Option<usize>) -> String {
    match target_limit {
        Some(n) => format!("{}/n{n}/seed{}", config.preset, config.seed),
        None => format!("{}/seed{}", config.preset, config.seed),
    }
}

fn read_history(path: &Path) -> Result<Vec<HistoryRecord>> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(out)
}

fn open_checked(path: &Path, what: &str) -> Result<Dataset> {
    if !path.join("manifest.json").is_file() {
        return Err(Error::MissingInput(format!(
            "{what} dataset not found at {}",
            path.display()
        )));
    }
    Dataset::open(path)
}

/// Trains `config.preset` and records losses and evaluation snapshots.
///
/// With `resume`, an existing checkpoint in the output directory is loaded
/// and the history is cut back to it before continuing. `stop_at` halts
/// after that many total iterations without a final evaluation, as an
/// interrupted run would.
pub fn run_training(
    config: &TrainConfig,
    adapt: &AdaptConfig,
    eval: &EvalOptions,
    paths: &RunPaths,
    resume: bool,
    stop_at: Option<u64>,
) -> Result<TrainOutcome> {
    config.validate()?;
    adapt.validate()?;
    let adapt = config.adapt(adapt);
    let usage = config.preset.target_usage();

    let source = open_checked(&paths.source_train, "source training")?;
    if source.label_mode() != LabelMode::Full {
        return Err(Error::Supervision(
            "the source training split must carry full labels".into(),
        ));
    }
    let target = match (usage, &paths.target_train) {
        (TargetUsage::None, _) => None,
        (_, None) => {
            return Err(Error::MissingInput(format!(
                "preset {} needs a target training split",
                config.preset
            )))
        }
        (_, Some(p)) => {
            let d = open_checked(p, "target training")?;
            Some(match paths.target_limit {
                Some(n) => d.with_limit(n),
                None => d,
            })
        }
    };
    if let Some(t) = &target {
        if usage == TargetUsage::Full && t.label_mode() != LabelMode::Full {
            return Err(Error::Supervision(format!(
                "preset {} requires a fully labeled target split, {} is weak",
                config.preset,
                t.dir().display()
            )));
        }
    }
    let val = open_checked(&paths.val, "validation")?;
    let val_snapshot = if config.eval_images > 0 {
        open_checked(&paths.val, "validation")?.with_limit(config.eval_images)
    } else {
        open_checked(&paths.val, "validation")?
    };

    fs::create_dir_all(&paths.out_dir).map_err(|e| Error::io(&paths.out_dir, e))?;
    let ckpt_path = paths.out_dir.join(CHECKPOINT_FILE);
    let history_path = paths.out_dir.join(HISTORY_FILE);

    let mode = config.preset.alignment_mode();
    let (mut state, mut history) = if resume && ckpt_path.is_file() {
        let ck = load_checkpoint(&ckpt_path)?;
        if ck.params.alignment_mode() != mode {
            return Err(Error::InvalidInput(format!(
                "checkpoint {} holds a {} classifier, preset {} needs {}",
                ckpt_path.display(),
                ck.params.alignment_mode().name(),
                config.preset,
                mode.name()
            )));
        }
        let c = ck.iteration;
        let history: Vec<HistoryRecord> = read_history(&history_path)?
            .into_iter()
            .filter(|r| match (r.is_eval(), r.id.contains("/final@")) {
                (_, true) => false,
                (true, false) => r.iteration <= c,
                (false, false) => r.iteration < c,
            })
            .collect();
        (
            TrainState {
                params: ck.params,
                momentum: ck.momentum,
                iteration: c,
            },
            history,
        )
    } else {
        (TrainState::new(config.seed, mode), Vec::new())
    };

    let mut writer = BufWriter::new(File::create(&history_path).map_err(|e| Error::io(&history_path, e))?);
    let write = |w: &mut BufWriter<File>, r: &HistoryRecord| -> Result<()> {
        let line = serde_json::to_string(r).expect("history records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(&history_path, e))
    };
    for r in &history {
        write(&mut writer, r)?;
    }

    let prefix = run_prefix(config, paths.target_limit);
    let end = stop_at.map_or(config.iterations, |s| s.min(config.iterations));
    let snapshot = |state: &TrainState, data: &Dataset, kind: &str| -> Result<HistoryRecord> {
        let (lr, grl) = lambda_schedule(state.iteration, config, &adapt);
        Ok(HistoryRecord {
            id: format!("{prefix}/{kind}@{}", state.iteration),
            iteration: state.iteration,
            lr,
            lambda_grl: grl,
            losses: None,
            predicted: Some(evaluate(&state.params, data, EvalMode::Predicted, eval)?),
            gt_boxes: Some(evaluate(&state.params, data, EvalMode::GtBoxes, eval)?),
        })
    };

    while state.iteration < end {
        let it = state.iteration;
        let mut rng = step_rng(config.seed, it);
        let (src, tgt) = make_batch(&source, target.as_ref(), &mut rng, config)?;
        let (lr, grl) = lambda_schedule(it, config, &adapt);
        let losses = train_step(&mut state, &src, tgt.as_ref(), config, &adapt)?;
        if it % config.log_interval == 0 {
            let r = HistoryRecord {
                id: format!("{prefix}/loss@{it}"),
                iteration: it,
                lr,
                lambda_grl: grl,
                losses: Some(losses),
                predicted: None,
                gt_boxes: None,
            };
            write(&mut writer, &r)?;
            history.push(r);
        }
        let done = state.iteration;
        if config.eval_interval > 0 && done % config.eval_interval == 0 && done < config.iterations {
            let r = snapshot(&state, &val_snapshot, "eval")?;
            write(&mut writer, &r)?;
            history.push(r);
        }
        if config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0 {
            writer.flush().map_err(|e| Error::io(&history_path, e))?;
            save_checkpoint(
                &ckpt_path,
                &Checkpoint {
                    iteration: done,
                    params: state.params.clone(),
                    momentum: state.momentum.clone(),
                },
            )?;
        }
    }

    let final_eval = if state.iteration >= config.iterations {
        let r = snapshot(&state, &val, "final")?;
        write(&mut writer, &r)?;
        history.push(r.clone());
        save_checkpoint(
            &ckpt_path,
            &Checkpoint {
                iteration: state.iteration,
                params: state.params.clone(),
                momentum: state.momentum.clone(),
            },
        )?;
        Some(r)
    } else {
        None
    };
    writer.flush().map_err(|e| Error::io(&history_path, e))?;

    Ok(TrainOutcome {
        state,
        history,
        final_eval,
        source_access: source.access(),
        target_access: target.as_ref().map(Dataset::access),
    })
}
