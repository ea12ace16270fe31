use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, write_json, DatasetName, RunConfig, RunSummary, FINAL_FILE};
use crate::evalkit::MetricReport;
use crate::scenegen::Dataset;
use crate::trainer::Preset;
use crate::{Error, Result};

/// Label time per object with a 2D box and class.
pub const WEAK_LABEL_COST: f64 = 1.0;
/// Label time per object with box, mask and pose.
pub const FULL_LABEL_COST: f64 = 6.0;

/// Label time of `objects` annotated objects.
pub fn label_time_cost(objects: usize, full_labels: bool) -> f64 {
    objects as f64 * if full_labels { FULL_LABEL_COST } else { WEAK_LABEL_COST }
}

/// Final-iteration metrics of one completed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run_id: String,
    /// History record the metrics come from.
    pub record: String,
    pub preset: Preset,
    pub seed: u64,
    pub target_limit: Option<usize>,
    pub iteration: u64,
    pub predicted: MetricReport,
    pub gt_boxes: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestValue {
    pub value: f64,
    pub seed: u64,
    pub record: String,
}

/// Highest value wins; ties go to the earlier entry.
pub fn best_of(candidates: &[(u64, f64, String)]) -> Option<BestValue> {
    let mut best: Option<&(u64, f64, String)> = None;
    for c in candidates {
        if best.is_none_or(|b| c.1 > b.1) {
            best = Some(c);
        }
    }
    best.map(|(seed, value, record)| BestValue {
        value: *value,
        seed: *seed,
        record: record.clone(),
    })
}

/// Best-seed values of one preset, chosen per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetRow {
    pub preset: Preset,
    pub seeds: Vec<u64>,
    pub box_map: BestValue,
    pub mask_map: BestValue,
    pub pose_ds: BestValue,
    pub gt_boxes_mask_map: BestValue,
    pub gt_boxes_pose_ds: BestValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTimePoint {
    pub target_images: usize,
    pub objects: usize,
    pub label_time: f64,
    pub mask_map: f64,
    pub record: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub preset: Preset,
    pub mask_map: BestValue,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveComparison {
    pub label_time: f64,
    pub weak: f64,
    pub full: f64,
}

/// Mask mAP against label time for weak (`wsjt_cwfa`) and full (`oracle`)
/// target labels. Both curves are piecewise linear in label time and flat
/// past their last point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelTimeCurve {
    pub weak_cost_per_object: f64,
    pub full_cost_per_object: f64,
    pub weak: Vec<LabelTimePoint>,
    pub full: Vec<LabelTimePoint>,
    pub baselines: Vec<Baseline>,
    /// Both curves evaluated at every point time where both are defined.
    pub comparisons: Vec<CurveComparison>,
    /// Weak above full at the smallest shared label time.
    pub weak_dominates_at_low_budget: bool,
    /// First label time where full catches up with weak.
    pub crossover: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_digest: String,
    pub shift: String,
    pub rows: Vec<PresetRow>,
    pub label_time: Option<LabelTimeCurve>,
    pub runs: Vec<RunEntry>,
    /// Requested runs without a usable `final.json`.
    pub missing: Vec<String>,
}

impl RunReport {
    pub fn row(&self, preset: Preset) -> Option<&PresetRow> {
        self.rows.iter().find(|r| r.preset == preset)
    }
}

fn interpolate(points: &[(f64, f64)], t: f64) -> Option<f64> {
    let first = points.first()?;
    if t < first.0 {
        return None;
    }
    for w in points.windows(2) {
        let ((t0, v0), (t1, v1)) = (w[0], w[1]);
        if t <= t1 {
            if t1 == t0 {
                return Some(v1);
            }
            return Some(v0 + (v1 - v0) * (t - t0) / (t1 - t0));
        }
    }
    points.last().map(|p| p.1)
}

/// Compares two `(label_time, value)` curves sorted by label time. Returns
/// the comparisons, whether `weak` starts above `full`, and the crossover.
pub fn compare_curves(weak: &[(f64, f64)], full: &[(f64, f64)]) -> (Vec<CurveComparison>, bool, Option<f64>) {
    let (Some(w0), Some(f0)) = (weak.first(), full.first()) else {
        return (Vec::new(), false, None);
    };
    let start = w0.0.max(f0.0);
    let mut grid: Vec<f64> = weak.iter().chain(full).map(|p| p.0).filter(|&t| t >= start).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let comparisons: Vec<CurveComparison> = grid
        .iter()
        .map(|&t| CurveComparison {
            label_time: t,
            weak: interpolate(weak, t).expect("grid starts inside both curves"),
            full: interpolate(full, t).expect("grid starts inside both curves"),
        })
        .collect();
    let dominates = comparisons.first().is_some_and(|c| c.weak > c.full);
    let mut crossover = None;
    if dominates {
        for w in comparisons.windows(2) {
            let (d0, d1) = (w[0].weak - w[0].full, w[1].weak - w[1].full);
            if d1 <= 0.0 {
                let t0 = w[0].label_time;
                crossover = Some(t0 + (w[1].label_time - t0) * d0 / (d0 - d1));
                break;
            }
        }
    }
    (comparisons, dominates, crossover)
}

fn load_run(
    config: &RunConfig,
    preset: Preset,
    seed: u64,
    limit: Option<usize>,
    digest: &str,
) -> std::result::Result<RunEntry, String> {
    let dir = config.run_dir(preset, seed, limit);
    let label = match limit {
        Some(n) => format!("{preset}/n{n}/seed{seed}"),
        None => format!("{preset}/seed{seed}"),
    };
    let path = dir.join(FINAL_FILE);
    if !path.is_file() {
        return Err(format!("{label}: not completed"));
    }
    let summary: RunSummary = read_json(&path).map_err(|e| format!("{label}: {e}"))?;
    if summary.info.config_digest != digest {
        return Err(format!("{label}: trained with config {}", summary.info.config_digest));
    }
    let r = summary.final_record;
    match (r.predicted, r.gt_boxes) {
        (Some(predicted), Some(gt_boxes)) => Ok(RunEntry {
            run_id: summary.info.run_id,
            record: r.id,
            preset,
            seed,
            target_limit: limit,
            iteration: r.iteration,
            predicted,
            gt_boxes,
        }),
        _ => Err(format!("{label}: final record {} lacks metrics", r.id)),
    }
}

fn preset_row(preset: Preset, runs: &[&RunEntry]) -> Option<PresetRow> {
    let pick = |f: &dyn Fn(&RunEntry) -> f64| {
        let c: Vec<(u64, f64, String)> = runs.iter().map(|r| (r.seed, f(r), r.record.clone())).collect();
        best_of(&c)
    };
    Some(PresetRow {
        preset,
        seeds: runs.iter().map(|r| r.seed).collect(),
        box_map: pick(&|r| r.predicted.box_map)?,
        mask_map: pick(&|r| r.predicted.mask_map)?,
        pose_ds: pick(&|r| r.predicted.pose_ds)?,
        gt_boxes_mask_map: pick(&|r| r.gt_boxes.mask_map)?,
        gt_boxes_pose_ds: pick(&|r| r.gt_boxes.pose_ds)?,
    })
}

/// Collects every completed run of `config` into a report. Missing or
/// stale runs are listed and left out.
pub fn build_report(config: &RunConfig) -> Result<RunReport> {
    let digest = config.digest();
    let mut runs = Vec::new();
    let mut missing = Vec::new();
    for &preset in &config.presets {
        for &seed in &config.seeds {
            match load_run(config, preset, seed, None, &digest) {
                Ok(r) => runs.push(r),
                Err(m) => missing.push(m),
            }
        }
    }
    let rows: Vec<PresetRow> = config
        .presets
        .iter()
        .filter_map(|&p| {
            let of: Vec<&RunEntry> = runs.iter().filter(|r| r.preset == p).collect();
            preset_row(p, &of)
        })
        .collect();

    let mut label_time = None;
    if config.presets.contains(&Preset::WsjtCwfa) && config.presets.contains(&Preset::Oracle) {
        let seed = config.label_time.seed;
        let mut limited = Vec::new();
        for (preset, counts) in [
            (Preset::WsjtCwfa, &config.label_time.weak_images),
            (Preset::Oracle, &config.label_time.full_images),
        ] {
            for &n in counts {
                match load_run(config, preset, seed, Some(n), &digest) {
                    Ok(r) => limited.push(r),
                    Err(m) => missing.push(m),
                }
            }
        }
        let target_dir = config.dataset_dir(DatasetName::TargetTrain);
        let objects = match target_object_counts(&target_dir) {
            Ok(c) => Some(c),
            Err(e) => {
                missing.push(format!("label-time object counts: {e}"));
                None
            }
        };
        if let Some(objects) = objects {
            let point = |r: &RunEntry, full_labels: bool| -> LabelTimePoint {
                let n = r.target_limit.unwrap_or(objects.len()).min(objects.len());
                let count: usize = objects[..n].iter().sum();
                LabelTimePoint {
                    target_images: n,
                    objects: count,
                    label_time: label_time_cost(count, full_labels),
                    mask_map: r.predicted.mask_map,
                    record: r.record.clone(),
                }
            };
            let curve_of = |preset: Preset, full_labels: bool| -> Vec<LabelTimePoint> {
                let mut pts: Vec<LabelTimePoint> = limited
                    .iter()
                    .chain(runs.iter().filter(|r| r.seed == seed))
                    .filter(|r| r.preset == preset)
                    .map(|r| point(r, full_labels))
                    .collect();
                pts.sort_by(|a, b| {
                    a.label_time
                        .total_cmp(&b.label_time)
                        .then(a.target_images.cmp(&b.target_images))
                });
                pts
            };
            let weak = curve_of(Preset::WsjtCwfa, false);
            let full = curve_of(Preset::Oracle, true);
            if !weak.is_empty() && !full.is_empty() {
                let xy = |p: &[LabelTimePoint]| p.iter().map(|q| (q.label_time, q.mask_map)).collect::<Vec<_>>();
                let (comparisons, dominates, crossover) = compare_curves(&xy(&weak), &xy(&full));
                let baselines = [Preset::SourceOnly, Preset::UdaImage]
                    .into_iter()
                    .filter_map(|p| {
                        rows.iter().find(|r| r.preset == p).map(|r| Baseline {
                            preset: p,
                            mask_map: r.mask_map.clone(),
                        })
                    })
                    .collect();
                label_time = Some(LabelTimeCurve {
                    weak_cost_per_object: WEAK_LABEL_COST,
                    full_cost_per_object: FULL_LABEL_COST,
                    weak,
                    full,
                    baselines,
                    comparisons,
                    weak_dominates_at_low_budget: dominates,
                    crossover,
                });
            }
        }
        runs.extend(limited);
    }

    Ok(RunReport {
        config_digest: digest,
        shift: config.shift().name,
        rows,
        label_time,
        runs,
        missing,
    })
}

/// Objects per image of a target training split, in image order.
fn target_object_counts(dir: &Path) -> Result<Vec<usize>> {
    if !dir.join("manifest.json").is_file() {
        return Err(Error::MissingInput(format!("dataset {} not found", dir.display())));
    }
    let data = Dataset::open(dir)?;
    (0..data.len()).map(|i| data.labels(i).map(|l| l.len())).collect()
}

fn pct(v: f64) -> String {
    format!("{:.1}", 100.0 * v)
}

fn cell(b: &BestValue) -> String {
    format!("{} (seed {})", pct(b.value), b.seed)
}

fn records(values: &[&BestValue]) -> String {
    let mut ids: Vec<&str> = values.iter().map(|b| b.record.as_str()).collect();
    ids.dedup();
    ids.iter().map(|i| format!("`{i}`")).collect::<Vec<_>>().join(", ")
}

/// Markdown rendering of the report tables.
pub fn render_tables(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Results\n");
    let _ = writeln!(s, "Shift `{}`, config digest `{}`.", report.shift, report.config_digest);
    let _ = writeln!(s, "Values are percentages of the best seed at the final iteration.\n");

    let _ = writeln!(s, "## Detection and instance masks (predicted boxes)\n");
    let _ = writeln!(s, "| preset | box mAP | mask mAP | records |");
    let _ = writeln!(s, "|---|---|---|---|");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |",
            r.preset,
            cell(&r.box_map),
            cell(&r.mask_map),
            records(&[&r.box_map, &r.mask_map])
        );
    }

    let _ = writeln!(s, "\n## Pose detection score (predicted boxes)\n");
    let _ = writeln!(s, "| preset | pose-DS | records |");
    let _ = writeln!(s, "|---|---|---|");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} |",
            r.preset,
            cell(&r.pose_ds),
            records(&[&r.pose_ds])
        );
    }

    let _ = writeln!(s, "\n## Ground-truth boxes at test time\n");
    let _ = writeln!(s, "| preset | mask mAP | pose-DS | records |");
    let _ = writeln!(s, "|---|---|---|---|");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} |",
            r.preset,
            cell(&r.gt_boxes_mask_map),
            cell(&r.gt_boxes_pose_ds),
            records(&[&r.gt_boxes_mask_map, &r.gt_boxes_pose_ds])
        );
    }

    if let Some(c) = &report.label_time {
        let _ = writeln!(s, "\n## Mask mAP against label time\n");
        let _ = writeln!(
            s,
            "One unit per object for a box label, {} units per object for a full label.\n",
            c.full_cost_per_object
        );
        let _ = writeln!(
            s,
            "| labels | target images | objects | label time | mask mAP | record |"
        );
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for (kind, pts) in [("weak", &c.weak), ("full", &c.full)] {
            for p in pts.iter() {
                let _ = writeln!(
                    s,
                    "| {kind} | {} | {} | {} | {} | `{}` |",
                    p.target_images,
                    p.objects,
                    p.label_time,
                    pct(p.mask_map),
                    p.record
                );
            }
        }
        for b in &c.baselines {
            let _ = writeln!(
                s,
                "| {} | 0 | 0 | 0 | {} | `{}` |",
                b.preset,
                pct(b.mask_map.value),
                b.mask_map.record
            );
        }
        let _ = writeln!(
            s,
            "\nWeak labels ahead at the smallest shared budget: {}.",
            if c.weak_dominates_at_low_budget { "yes" } else { "no" }
        );
        match c.crossover {
            Some(t) => {
                let _ = writeln!(s, "Full labels catch up at {t:.0} units.");
            }
            None => {
                let _ = writeln!(s, "No crossover within the measured range.");
            }
        }
    }

    if !report.missing.is_empty() {
        let _ = writeln!(s, "\n## Missing runs\n");
        for m in &report.missing {
            let _ = writeln!(s, "- {m}");
        }
    }
    s
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 420.0;
const PLOT: (f64, f64, f64, f64) = (70.0, 30.0, 600.0, 360.0);

/// Static plot of the label-time curve, log-scaled label time on x.
pub fn label_time_svg(curve: &LabelTimeCurve) -> String {
    let times: Vec<f64> = curve
        .weak
        .iter()
        .chain(&curve.full)
        .map(|p| p.label_time.max(1.0))
        .collect();
    let lo = times.iter().cloned().fold(f64::INFINITY, f64::min).log10().floor();
    let hi = times.iter().cloned().fold(1.0, f64::max).log10().ceil().max(lo + 1.0);
    let values = curve
        .weak
        .iter()
        .chain(&curve.full)
        .map(|p| p.mask_map)
        .chain(curve.baselines.iter().map(|b| b.mask_map.value));
    let top = (values.fold(0.0, f64::max) * 10.0).ceil().max(1.0) / 10.0;
    let (x0, y0, x1, y1) = PLOT;
    let px = |t: f64| x0 + (t.max(1.0).log10() - lo) / (hi - lo) * (x1 - x0);
    let py = |v: f64| y1 - v / top * (y1 - y0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{SVG_W}" height="{SVG_H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<path d="M{x0} {y0}V{y1}H{x1}" fill="none" stroke="black"/>"#);
    for e in lo as i64..=hi as i64 {
        let x = px(10f64.powi(e as i32));
        let _ = writeln!(
            s,
            r#"<line x1="{x:.1}" y1="{y1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#,
            y1 + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">1e{e}</text>"#,
            y1 + 20.0
        );
    }
    let steps = (top * 10.0).round() as usize;
    for k in 0..=steps {
        let v = k as f64 / 10.0;
        let y = py(v);
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{x0}" y2="{y:.1}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.0}</text>"#,
            x0 - 8.0,
            y + 4.0,
            v * 100.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">label time (units, full label = {} x box label)</text>"#,
        (x0 + x1) / 2.0,
        SVG_H - 15.0,
        curve.full_cost_per_object
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">mask mAP</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let colors = ["#1f77b4", "#d62728", "#7f7f7f", "#2ca02c"];
    for (i, b) in curve.baselines.iter().enumerate() {
        let y = py(b.mask_map.value);
        let _ = writeln!(
            s,
            r#"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="{}" stroke-dasharray="6 4"/>"#,
            colors[2 + i % 2]
        );
    }
    for (i, pts) in [&curve.weak, &curve.full].into_iter().enumerate() {
        let path: Vec<String> = pts
            .iter()
            .map(|p| format!("{:.1},{:.1}", px(p.label_time), py(p.mask_map)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            path.join(" "),
            colors[i]
        );
        for p in pts.iter() {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{}"/>"#,
                px(p.label_time),
                py(p.mask_map),
                colors[i]
            );
        }
    }
    let mut legend = vec![
        ("wsjt_cwfa (box labels)".to_string(), colors[0]),
        ("oracle (full labels)".to_string(), colors[1]),
    ];
    for (i, b) in curve.baselines.iter().enumerate() {
        legend.push((b.preset.name().to_string(), colors[2 + i % 2]));
    }
    for (i, (name, color)) in legend.iter().enumerate() {
        let y = y0 + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"/>"#,
            x0 + 15.0,
            x0 + 40.0
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{name}</text>"#, x0 + 48.0, y + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `report.json`, `tables.md` and, with a curve, `label_time.svg`.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_json(&dir.join("report.json"), report)?;
    let tables = dir.join("tables.md");
    fs::write(&tables, render_tables(report)).map_err(|e| Error::io(&tables, e))?;
    let svg = dir.join("label_time.svg");
    match &report.label_time {
        Some(c) => fs::write(&svg, label_time_svg(c)).map_err(|e| Error::io(&svg, e))?,
        None if svg.exists() => fs::remove_file(&svg).map_err(|e| Error::io(&svg, e))?,
        None => {}
    }
    Ok(())
}
