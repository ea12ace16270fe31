use std::path::{Path, PathBuf};

use cascade_core::evalkit::EvalOptions;
use cascade_core::objectives::AdaptConfig;
use cascade_core::scenegen::{
    syn2real_like, write_dataset, AccessSnapshot, DatasetManifest, DomainTag, LabelMode, Split,
};
use cascade_core::trainer::{run_training, Preset, RunPaths, TargetUsage, TrainConfig};
use tempfile::TempDir;

/// Small on-disk datasets for end-to-end runs.
pub struct TinyData {
    pub root: TempDir,
    pub source: PathBuf,
    pub target_weak: PathBuf,
    pub target_full: PathBuf,
    pub val: PathBuf,
}

pub fn tiny_data(n: usize) -> TinyData {
    let root = tempfile::tempdir().unwrap();
    let shift = syn2real_like(true);
    let write = |name: &str, tag: DomainTag, mode: LabelMode, split: Split| -> PathBuf {
        let cfg = match tag {
            DomainTag::Source => shift.source.clone(),
            DomainTag::Target => shift.target.clone(),
        };
        let dir = root.path().join(name);
        write_dataset(&dir, &DatasetManifest::new(n, tag, mode, 9, split, cfg)).unwrap();
        dir
    };
    TinyData {
        source: write("source", DomainTag::Source, LabelMode::Full, Split::Train),
        target_weak: write("target_weak", DomainTag::Target, LabelMode::Weak, Split::Train),
        target_full: write("target_full", DomainTag::Target, LabelMode::Full, Split::Train),
        val: write("val", DomainTag::Target, LabelMode::Full, Split::Val),
        root,
    }
}

pub fn tiny_config(preset: Preset, iterations: u64) -> TrainConfig {
    TrainConfig {
        preset,
        iterations,
        batch_size: 2,
        log_interval: 1,
        checkpoint_interval: 0,
        ..TrainConfig::default()
    }
}

pub fn tiny_paths(data: &TinyData, preset: Preset, out: &Path) -> RunPaths {
    let target_train = match preset.target_usage() {
        TargetUsage::None => None,
        TargetUsage::Full => Some(data.target_full.clone()),
        _ => Some(data.target_weak.clone()),
    };
    RunPaths {
        source_train: data.source.clone(),
        target_train,
        val: data.val.clone(),
        out_dir: out.to_path_buf(),
        target_limit: None,
    }
}

/// Trains every preset briefly and returns what each read from its
/// target training split. With `full_target` every preset gets the fully
/// labeled split, so masks and poses are there to be (wrongly) read.
pub fn access_by_preset(data: &TinyData, iterations: u64, full_target: bool) -> Vec<(Preset, Option<AccessSnapshot>)> {
    Preset::ALL
        .into_iter()
        .map(|p| {
            let out = data.root.path().join(format!("runs_{full_target}")).join(p.name());
            let mut paths = tiny_paths(data, p, &out);
            if full_target && paths.target_train.is_some() {
                paths.target_train = Some(data.target_full.clone());
            }
            let outcome = run_training(
                &tiny_config(p, iterations),
                &AdaptConfig::default(),
                &EvalOptions::default(),
                &paths,
                false,
                None,
            )
            .unwrap();
            (p, outcome.target_access)
        })
        .collect()
}

/// Human-readable isolation violations; empty when every preset reads
/// only what it is entitled to.
pub fn isolation_violations(access: &[(Preset, Option<AccessSnapshot>)]) -> Vec<String> {
    let mut out = Vec::new();
    for (p, a) in access {
        match (p.target_usage(), a) {
            (TargetUsage::None, None) => {}
            (TargetUsage::None, Some(_)) => out.push(format!("{p} opened a target split")),
            (_, None) => out.push(format!("{p} never opened its target split")),
            (TargetUsage::ImagesOnly, Some(a)) => {
                if a.touched_annotations() || a.mask_file_opens > 0 {
                    out.push(format!("{p} read target annotations: {a:?}"));
                }
                if a.image_reads == 0 {
                    out.push(format!("{p} read no target images"));
                }
            }
            (TargetUsage::Boxes, Some(a)) => {
                if a.touched_attributes() {
                    out.push(format!("{p} read target masks or poses: {a:?}"));
                }
                if a.label_reads == 0 {
                    out.push(format!("{p} read no target boxes"));
                }
            }
            (TargetUsage::Full, Some(a)) => {
                if a.attribute_reads == 0 {
                    out.push(format!("{p} read no target attributes"));
                }
            }
        }
    }
    out
}
