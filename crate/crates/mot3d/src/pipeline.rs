//! Batch drivers over sequence directories.
//!
//! A dataset root holds one detection file and at most one label file per
//! sequence, named after the sequence:
//!
//! ```text
//! root/detections/0000.txt   (or 0000.jsonl)
//! root/labels/0000.txt       KITTI tracking labels, optional
//! ```
//!
//! Tracking writes `out/0000.txt` in KITTI tracking format. Sequences run in
//! parallel on a rayon pool; each sequence is tracked by a single thread.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use mot3d_core::eval::{evaluate_sequence, Labeled, MotReport};
use mot3d_core::simgen::{generate, Scenario, ScenarioConfig};
use mot3d_core::tracker::track_sequence;
use mot3d_core::{AffinityWeights, Detection, FrameResult};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AssociatorKind, RunConfig};
use crate::detections::{read_detections, to_frames, write_detections, DetectionRecord};
use crate::kitti::{self, parse_kitti, read_kitti, results_to_records, write_labels, LabelFilter, LabelRecord};
use crate::report::{EvalSummary, ResultSet};

pub const DETECTIONS_DIR: &str = "detections";
pub const LABELS_DIR: &str = "labels";

/// Sequence files in `dir` keyed by file stem. Only `.txt`, `.jsonl` and
/// `.json` files count; two files with the same stem are an error.
pub fn list_sequences(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry?.path();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        if !path.is_file() || !matches!(ext, "txt" | "jsonl" | "json") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).context("non UTF-8 file name")?.to_string();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            bail!("sequence `{stem}` has two files: {} and {}", prev.display(), path.display());
        }
    }
    Ok(out)
}

/// Builds the worker pool; `threads = 0` lets rayon choose.
pub fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().context("building worker pool")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTiming {
    pub name: String,
    pub frames: usize,
    pub detections: usize,
    pub elapsed: Duration,
}

impl SequenceTiming {
    pub fn mean_frame_ms(&self) -> f64 {
        if self.frames == 0 {
            0.0
        } else {
            self.elapsed.as_secs_f64() * 1e3 / self.frames as f64
        }
    }
}

/// Tracks one sequence and returns its per-frame output with timing.
pub fn track_frames(cfg: &RunConfig, name: &str, frames: &BTreeMap<u32, Vec<Detection>>) -> Result<(Vec<FrameResult>, SequenceTiming)> {
    let tcfg = cfg.tracker_config();
    let start = Instant::now();
    let results = track_sequence(&tcfg, frames, None).with_context(|| format!("tracking sequence {name}"))?;
    let timing = SequenceTiming {
        name: name.to_string(),
        frames: results.len(),
        detections: frames.values().map(Vec::len).sum(),
        elapsed: start.elapsed(),
    };
    Ok((results, timing))
}

/// Tracks every sequence under `input/detections` into `output/<seq>.txt`.
pub fn run_track(cfg: &RunConfig, input: &Path, output: &Path) -> Result<Vec<SequenceTiming>> {
    let det_dir = input.join(DETECTIONS_DIR);
    if !det_dir.is_dir() {
        bail!("missing detections directory {}", det_dir.display());
    }
    let sequences = list_sequences(&det_dir)?;
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let pool = pool(cfg.run.threads)?;
    pool.install(|| {
        sequences
            .par_iter()
            .map(|(name, path)| {
                let frames = to_frames(&read_detections(path)?);
                let (results, timing) = track_frames(cfg, name, &frames)?;
                let out_path = output.join(format!("{name}.txt"));
                let file = File::create(&out_path).with_context(|| format!("creating {}", out_path.display()))?;
                kitti::write_kitti_tracking(BufWriter::new(file), &results, &cfg.run.object_type)
                    .with_context(|| format!("writing {}", out_path.display()))?;
                Ok(timing)
            })
            .collect()
    })
}

/// Tracker output reduced to what a result file keeps: records rounded to
/// the written precision.
pub fn results_as_written(results: &[FrameResult], object_type: &str) -> Result<Vec<LabelRecord>> {
    as_written(&results_to_records(results, object_type), &LabelFilter::default())
}

fn as_written(records: &[LabelRecord], filter: &LabelFilter) -> Result<Vec<LabelRecord>> {
    let text: String = records.iter().map(|r| kitti::format_line(r) + "\n").collect();
    Ok(parse_kitti(&text, filter)?)
}

fn diff_sets(expected: &BTreeSet<String>, found: &BTreeSet<String>) -> Option<String> {
    let missing: Vec<&str> = expected.difference(found).map(String::as_str).collect();
    let extra: Vec<&str> = found.difference(expected).map(String::as_str).collect();
    let mut parts = Vec::new();
    if !missing.is_empty() {
        parts.push(format!("missing sequences: {}", missing.join(", ")));
    }
    if !extra.is_empty() {
        parts.push(format!("sequences without labels: {}", extra.join(", ")));
    }
    (!parts.is_empty()).then(|| parts.join("; "))
}

/// Evaluates each named results directory against the labels directory.
pub fn run_eval(cfg: &RunConfig, labels: &Path, results: &[(String, PathBuf)]) -> Result<EvalSummary> {
    let gt_files = list_sequences(labels)?;
    let filter = cfg.label_filter();
    let ecfg = cfg.eval_config();
    let pool = pool(cfg.run.threads)?;
    let gt: BTreeMap<String, BTreeMap<u32, Vec<Labeled>>> = pool.install(|| {
        gt_files
            .par_iter()
            .map(|(name, path)| Ok((name.clone(), kitti::to_labeled(&read_kitti(path, &filter)?))))
            .collect::<Result<_>>()
    })?;
    let expected: BTreeSet<String> = gt.keys().cloned().collect();

    let mut sets = Vec::new();
    for (set_name, dir) in results {
        let files = list_sequences(dir)?;
        let found: BTreeSet<String> = files.keys().cloned().collect();
        if let Some(diff) = diff_sets(&expected, &found) {
            bail!("results `{set_name}` ({}) do not match the labels: {diff}", dir.display());
        }
        let sequences: BTreeMap<String, MotReport> = pool.install(|| {
            files
                .par_iter()
                .map(|(name, path)| {
                    let hyp = kitti::to_labeled(&read_kitti(path, &LabelFilter::default())?);
                    Ok((name.clone(), evaluate_sequence(&gt[name], &hyp, &ecfg)))
                })
                .collect::<Result<_>>()
        })?;
        let overall = MotReport::aggregate(sequences.values());
        sets.push(ResultSet { name: set_name.clone(), sequences, overall });
    }
    Ok(EvalSummary { results: sets })
}

/// Ground truth of a generated scenario as label records.
pub fn scenario_labels(s: &Scenario, object_type: &str) -> Vec<LabelRecord> {
    s.ground_truth
        .iter()
        .flat_map(|(frame, objs)| {
            objs.iter().map(move |o| LabelRecord {
                frame: *frame,
                track_id: o.id,
                object_type: object_type.to_string(),
                truncated: 0.0,
                occluded: 0,
                bbox: o.bbox,
                score: None,
            })
        })
        .collect()
}

pub fn scenario_detections(s: &Scenario) -> Vec<DetectionRecord> {
    s.detections
        .iter()
        .flat_map(|(frame, dets)| dets.iter().map(move |d| DetectionRecord::from_detection(*frame, d)))
        .collect()
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading scenario {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid scenario {}", path.display()))
}

/// Sequence `i` of a multi-sequence simulation: seed offset by `i`, named
/// with four digits.
pub fn scenario_instance(base: &ScenarioConfig, i: usize) -> (String, ScenarioConfig) {
    let cfg = ScenarioConfig { seed: base.seed.wrapping_add(i as u64), ..base.clone() };
    (format!("{i:04}"), cfg)
}

/// Writes `count` generated sequences under `output/{detections,labels}`.
pub fn run_simulate(scenario: &ScenarioConfig, count: usize, object_type: &str, output: &Path) -> Result<Vec<String>> {
    let det_dir = output.join(DETECTIONS_DIR);
    let label_dir = output.join(LABELS_DIR);
    fs::create_dir_all(&det_dir).with_context(|| format!("creating {}", det_dir.display()))?;
    fs::create_dir_all(&label_dir).with_context(|| format!("creating {}", label_dir.display()))?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let (name, cfg) = scenario_instance(scenario, i);
            let s = generate(&cfg);
            let det_path = det_dir.join(format!("{name}.txt"));
            let f = File::create(&det_path).with_context(|| format!("creating {}", det_path.display()))?;
            write_detections(BufWriter::new(f), &scenario_detections(&s))?;
            let label_path = label_dir.join(format!("{name}.txt"));
            let f = File::create(&label_path).with_context(|| format!("creating {}", label_path.display()))?;
            write_labels(BufWriter::new(f), &scenario_labels(&s, object_type))?;
            Ok(name)
        })
        .collect()
}

/// Parameter grid. An empty axis keeps the base configuration's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub beta_over_alpha: Vec<f64>,
    pub w_cls: Vec<f64>,
    pub w_aff: Vec<f64>,
    pub w_se: Vec<f64>,
    pub cls_threshold: Vec<f64>,
    pub associator: Vec<AssociatorKind>,
}

/// One grid point and its pooled metrics; field order is the CSV column
/// order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub beta_over_alpha: f64,
    pub w_cls: f64,
    pub w_aff: f64,
    pub w_se: f64,
    pub cls_threshold: f64,
    pub associator: AssociatorKind,
    pub sequences: usize,
    pub mota: f64,
    pub motp: f64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub idsw: u64,
    pub frag: u64,
    pub mt: f64,
    pub pt: f64,
    pub ml: f64,
}

pub struct SweepSequence {
    pub name: String,
    pub detections: BTreeMap<u32, Vec<Detection>>,
    pub labels: BTreeMap<u32, Vec<Labeled>>,
}

fn axis<T: Clone>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl SweepGrid {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading grid {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid grid {}", path.display()))
    }

    /// Grid points in row-major order over the axes as declared.
    pub fn points(&self, base: &RunConfig) -> Result<Vec<(f64, RunConfig)>> {
        let base_ratio = base.affinity.beta / base.affinity.alpha;
        let mut out = Vec::new();
        for &ratio in &axis(&self.beta_over_alpha, base_ratio) {
            for &w_cls in &axis(&self.w_cls, base.association.w_cls) {
                for &w_aff in &axis(&self.w_aff, base.association.w_aff) {
                    for &w_se in &axis(&self.w_se, base.association.w_se) {
                        for &th in &axis(&self.cls_threshold, base.tracker.cls_threshold) {
                            for &assoc in &axis(&self.associator, base.tracker.associator) {
                                let mut cfg = base.clone();
                                if !self.beta_over_alpha.is_empty() {
                                    let w = AffinityWeights::from_ratio(ratio)
                                        .map_err(|e| anyhow::anyhow!("beta_over_alpha = {ratio}: {e}"))?;
                                    cfg.affinity.alpha = w.alpha();
                                    cfg.affinity.beta = w.beta();
                                }
                                cfg.association.w_cls = w_cls;
                                cfg.association.w_aff = w_aff;
                                cfg.association.w_se = w_se;
                                cfg.tracker.cls_threshold = th;
                                cfg.tracker.associator = assoc;
                                cfg.validate()?;
                                out.push((ratio, cfg));
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Generated sequences for a sweep, identical to what `run_simulate` writes
/// and `dataset_sequences` reads back. Detection text round-trips exactly;
/// labels are rounded like the label files.
pub fn simulated_sequences(cfg: &RunConfig, scenario: &ScenarioConfig, count: usize) -> Result<Vec<SweepSequence>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let (name, sc) = scenario_instance(scenario, i);
            let s = generate(&sc);
            let labels = as_written(&scenario_labels(&s, &cfg.run.object_type), &cfg.label_filter())?;
            Ok(SweepSequence { name, detections: s.detections, labels: kitti::to_labeled(&labels) })
        })
        .collect()
}

/// Sequences from a dataset root with both detections and labels.
pub fn dataset_sequences(cfg: &RunConfig, root: &Path) -> Result<Vec<SweepSequence>> {
    let dets = list_sequences(&root.join(DETECTIONS_DIR))?;
    let labels = list_sequences(&root.join(LABELS_DIR))?;
    let found: BTreeSet<String> = dets.keys().cloned().collect();
    let expected: BTreeSet<String> = labels.keys().cloned().collect();
    if let Some(diff) = diff_sets(&expected, &found) {
        bail!("detections under {} do not match the labels: {diff}", root.display());
    }
    let filter = cfg.label_filter();
    dets.par_iter()
        .map(|(name, path)| {
            Ok(SweepSequence {
                name: name.clone(),
                detections: to_frames(&read_detections(path)?),
                labels: kitti::to_labeled(&read_kitti(&labels[name], &filter)?),
            })
        })
        .collect()
}

/// Runs tracking and evaluation for every grid point. Metrics are computed
/// on results rounded exactly as `run_track` writes them, so a one-point
/// grid reproduces `track` followed by `eval`.
pub fn run_sweep(base: &RunConfig, grid: &SweepGrid, data: &[SweepSequence]) -> Result<Vec<SweepRow>> {
    let points = grid.points(base)?;
    let pool = pool(base.run.threads)?;
    pool.install(|| {
        points
            .par_iter()
            .map(|(ratio, cfg)| {
                let reports: Vec<MotReport> = data
                    .par_iter()
                    .map(|seq| {
                        let (results, _) = track_frames(cfg, &seq.name, &seq.detections)?;
                        let hyp = kitti::to_labeled(&results_as_written(&results, &cfg.run.object_type)?);
                        Ok(evaluate_sequence(&seq.labels, &hyp, &cfg.eval_config()))
                    })
                    .collect::<Result<_>>()?;
                let r = MotReport::aggregate(&reports);
                Ok(SweepRow {
                    beta_over_alpha: *ratio,
                    w_cls: cfg.association.w_cls,
                    w_aff: cfg.association.w_aff,
                    w_se: cfg.association.w_se,
                    cls_threshold: cfg.tracker.cls_threshold,
                    associator: cfg.tracker.associator,
                    sequences: data.len(),
                    mota: r.mota,
                    motp: r.motp,
                    fp: r.fp,
                    fn_: r.fn_,
                    idsw: r.idsw,
                    frag: r.frag,
                    mt: r.mt,
                    pt: r.pt,
                    ml: r.ml,
                })
            })
            .collect()
    })
}

pub fn write_sweep_csv<W: std::io::Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_points_follow_axis_order() {
        let grid = SweepGrid {
            beta_over_alpha: vec![1.0, 10.0],
            cls_threshold: vec![0.85, 0.9],
            ..Default::default()
        };
        let pts = grid.points(&RunConfig::default()).unwrap();
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[0].0, 1.0);
        assert_eq!(pts[0].1.affinity.alpha, 0.5);
        assert_eq!(pts[1].1.tracker.cls_threshold, 0.9);
        assert_eq!(pts[2].0, 10.0);
        let single = SweepGrid::default().points(&RunConfig::default()).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].1, RunConfig::default());
    }

    #[test]
    fn invalid_grid_value_rejected() {
        let grid = SweepGrid { cls_threshold: vec![1.5], ..Default::default() };
        assert!(grid.points(&RunConfig::default()).is_err());
    }

    #[test]
    fn sweep_csv_header_is_fixed() {
        let mut buf = Vec::new();
        let row = SweepRow {
            beta_over_alpha: 10.0,
            w_cls: 100.0,
            w_aff: 22.0,
            w_se: 1.0,
            cls_threshold: 0.85,
            associator: AssociatorKind::Mip,
            sequences: 1,
            mota: 1.0,
            motp: 1.0,
            fp: 0,
            fn_: 0,
            idsw: 0,
            frag: 0,
            mt: 1.0,
            pt: 0.0,
            ml: 0.0,
        };
        write_sweep_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "beta_over_alpha,w_cls,w_aff,w_se,cls_threshold,associator,sequences,mota,motp,fp,fn,idsw,frag,mt,pt,ml"
        );
        assert_eq!(text.lines().nth(1).unwrap(), "10.0,100.0,22.0,1.0,0.85,mip,1,1.0,1.0,0,0,0,0,1.0,0.0,0.0");
    }
}
