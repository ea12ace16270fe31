use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::builder::PossibleValuesParser;
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use super::{
    build_report, eval_checkpoint, exit_code, generate, load_config, render_tables, train, write_report, RunConfig,
};
use crate::evalkit::{EvalMode, EvalOptions};
use crate::trainer::Preset;
use crate::{Error, Result};

/// Weakly-supervised domain adaptation experiments.
#[derive(Debug, Parser)]
#[command(name = "cascade", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the source and target datasets of a run config.
    Generate {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Train one preset and seed.
    Train {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long, value_parser = preset_parser())]
        preset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train on the first N target images only.
        #[arg(long)]
        target_limit: Option<usize>,
        /// Continue from the run's last checkpoint.
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Score a checkpoint on a fully labeled dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_parser = PossibleValuesParser::new(["predicted", "gt_boxes"]))]
        mode: String,
        /// Take evaluation settings from this run config.
        #[arg(long, short)]
        config: Option<PathBuf>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collect completed runs into tables and the label-time plot.
    Report {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Report directory, `<output_dir>/report` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn preset_parser() -> PossibleValuesParser {
    PossibleValuesParser::new(Preset::ALL.map(Preset::name))
}

fn config_with_override(path: &Path, output_dir: Option<PathBuf>) -> Result<RunConfig> {
    let mut config = load_config(path)?;
    if let Some(dir) = output_dir {
        config.output_dir = dir;
    }
    Ok(config)
}

fn run(command: Command, stdout: &mut dyn Write) -> Result<()> {
    let out = |stdout: &mut dyn Write, text: &str| {
        let _ = stdout.write_all(text.as_bytes());
    };
    match command {
        Command::Generate { config, output_dir } => {
            let config = config_with_override(&config, output_dir)?;
            out(stdout, &format!("config digest {}\n", config.digest()));
            for g in generate(&config)? {
                let state = if g.written { "written" } else { "unchanged, no rewrite" };
                out(
                    stdout,
                    &format!("{}: {} ({state}) {}\n", g.dataset.name(), g.dir.display(), g.digest),
                );
            }
        }
        Command::Train {
            config,
            preset,
            seed,
            target_limit,
            resume,
            output_dir,
        } => {
            let config = config_with_override(&config, output_dir)?;
            let preset = Preset::from_name(&preset).expect("clap restricts preset names");
            let summary = train(&config, preset, seed, target_limit, resume)?;
            let r = &summary.final_record;
            let m = (r.predicted.as_ref(), r.gt_boxes.as_ref());
            if let (Some(p), Some(g)) = m {
                out(
                    stdout,
                    &format!(
                        "{} box mAP {:.4} mask mAP {:.4} pose-DS {:.4} | gt boxes: mask mAP {:.4} pose-DS {:.4}\n",
                        r.id, p.box_map, p.mask_map, p.pose_ds, g.mask_map, g.pose_ds
                    ),
                );
            }
        }
        Command::Eval {
            checkpoint,
            dataset,
            mode,
            config,
            out: path,
        } => {
            let mode = EvalMode::from_name(&mode).expect("clap restricts mode names");
            let options = match config {
                Some(c) => load_config(&c)?.eval,
                None => EvalOptions::default(),
            };
            let report = eval_checkpoint(&checkpoint, &dataset, mode, &options)?;
            let mut text = serde_json::to_string_pretty(&report).expect("metric report serializes");
            text.push('\n');
            match path {
                Some(p) => std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?,
                None => out(stdout, &text),
            }
        }
        Command::Report {
            config,
            output_dir,
            out: dir,
        } => {
            let config = config_with_override(&config, output_dir)?;
            let report = build_report(&config)?;
            let dir = dir.unwrap_or_else(|| config.report_dir());
            write_report(&report, &dir)?;
            out(stdout, &render_tables(&report));
            if report.rows.is_empty() {
                return Err(Error::MissingInput("no completed runs".into()));
            }
        }
    }
    Ok(())
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
/// Usage errors count as config errors.
pub fn main_with_args<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    match run(cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}
