//! Run configuration.
//!
//! One TOML file holds every tunable. Missing keys take the defaults below,
//! unknown keys are rejected. Command-line `--set section.key=value`
//! overrides are applied on top of the file, so precedence is
//! defaults < file < command line.
//!
//! ```toml
//! [tracker]
//! cls_threshold = 0.85
//! hit_threshold = 0
//! miss_threshold = 2
//! default_start_end_prob = 0.5
//! track_confidence = "last"    # or "mean"
//! associator = "mip"           # or "hungarian"
//! # hungarian_gate = 0.5       # minimum refined affinity for a Hungarian match
//!
//! [affinity]
//! alpha = 0.0909090909090909   # appearance weight, alpha + beta = 1
//! beta = 0.9090909090909091    # motion weight
//! appearance = true
//! distance = true
//! iou = true
//!
//! [association]
//! w_cls = 100.0
//! w_aff = 22.0
//! w_se = 1.0
//!
//! [kalman]
//! p0 = [1, 1, 1, 0.1, 0.1, 0.1, 0.1, 10, 10, 10]
//! r = [0.5, 0.5, 0.5, 0.05, 0.05, 0.05, 0.05]
//! q = [0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01, 0.01]
//!
//! [eval]
//! iou_threshold = 0.5
//! mostly_tracked = 0.8
//! mostly_lost = 0.2
//! classes = []                 # empty keeps every class
//! # max_truncated = 1.0
//! # max_occluded = 2
//!
//! [run]
//! threads = 0                  # 0 uses every core
//! object_type = "Car"
//! ```

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use mot3d_core::affinity::{AffinityConfig, AffinityTerms, AffinityWeights};
use mot3d_core::eval::EvalConfig;
use mot3d_core::motion::{KalmanConfig, DEFAULT_P0_DIAG, DEFAULT_Q_DIAG, DEFAULT_R_DIAG};
use mot3d_core::{Associator, AssociationWeights, TrackConfidence, TrackerConfig};
use serde::{Deserialize, Serialize};

use crate::kitti::LabelFilter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociatorKind {
    Mip,
    Hungarian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerSection {
    pub cls_threshold: f64,
    pub hit_threshold: u32,
    pub miss_threshold: u32,
    pub default_start_end_prob: f64,
    pub track_confidence: TrackConfidence,
    pub associator: AssociatorKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hungarian_gate: Option<f64>,
}

impl Default for TrackerSection {
    fn default() -> Self {
        let d = TrackerConfig::default();
        TrackerSection {
            cls_threshold: d.cls_threshold,
            hit_threshold: d.hit_threshold,
            miss_threshold: d.miss_threshold,
            default_start_end_prob: d.default_start_end_prob,
            track_confidence: d.track_confidence,
            associator: AssociatorKind::Mip,
            hungarian_gate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffinitySection {
    pub alpha: f64,
    pub beta: f64,
    pub appearance: bool,
    pub distance: bool,
    pub iou: bool,
}

impl Default for AffinitySection {
    fn default() -> Self {
        let w = AffinityWeights::default();
        AffinitySection { alpha: w.alpha(), beta: w.beta(), appearance: true, distance: true, iou: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssociationSection {
    pub w_cls: f64,
    pub w_aff: f64,
    pub w_se: f64,
}

impl Default for AssociationSection {
    fn default() -> Self {
        let w = AssociationWeights::default();
        AssociationSection { w_cls: w.cls, w_aff: w.aff, w_se: w.se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanSection {
    pub p0: [f64; 10],
    pub r: [f64; 7],
    pub q: [f64; 10],
}

impl Default for KalmanSection {
    fn default() -> Self {
        KalmanSection { p0: DEFAULT_P0_DIAG, r: DEFAULT_R_DIAG, q: DEFAULT_Q_DIAG }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub iou_threshold: f64,
    pub mostly_tracked: f64,
    pub mostly_lost: f64,
    pub classes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_truncated: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_occluded: Option<i32>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        EvalSection {
            iou_threshold: e.iou_threshold,
            mostly_tracked: e.mostly_tracked,
            mostly_lost: e.mostly_lost,
            classes: Vec::new(),
            max_truncated: None,
            max_occluded: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub threads: usize,
    pub object_type: String,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { threads: 0, object_type: "Car".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tracker: TrackerSection,
    pub affinity: AffinitySection,
    pub association: AssociationSection,
    pub kalman: KalmanSection,
    pub eval: EvalSection,
    pub run: RunSection,
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key parsed above"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `section.key=value` to a TOML table.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec.split_once('=').with_context(|| format!("override `{spec}` is not key=value"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("override `{spec}` has an empty key");
    }
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut node = table;
    for k in parents {
        node = node
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .with_context(|| format!("`{k}` in override `{spec}` is not a section"))?;
    }
    node.insert(last.to_string(), override_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: RunConfig = toml::Value::Table(table).try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).context("invalid configuration")?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    /// Defaults, then the file if given, then `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
            None => String::new(),
        };
        Self::parse(&text, overrides).with_context(|| match path {
            Some(p) => format!("in {}", p.display()),
            None => "in command-line overrides".to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64, name: &str| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                bail!("{name} = {v} must lie in [0, 1]");
            }
            Ok(())
        };
        let positive = |v: f64, name: &str| -> Result<()> {
            if !(v.is_finite() && v > 0.0) {
                bail!("{name} = {v} must be positive");
            }
            Ok(())
        };
        let t = &self.tracker;
        unit(t.cls_threshold, "tracker.cls_threshold")?;
        unit(t.default_start_end_prob, "tracker.default_start_end_prob")?;
        if let Some(g) = t.hungarian_gate {
            if !g.is_finite() {
                bail!("tracker.hungarian_gate must be finite");
            }
        }
        AffinityWeights::new(self.affinity.alpha, self.affinity.beta)
            .map_err(|e| anyhow::anyhow!("affinity.alpha/beta: {e}"))?;
        positive(self.association.w_cls, "association.w_cls")?;
        positive(self.association.w_aff, "association.w_aff")?;
        positive(self.association.w_se, "association.w_se")?;
        let k = &self.kalman;
        for (name, diag) in [("kalman.p0", &k.p0[..]), ("kalman.r", &k.r[..]), ("kalman.q", &k.q[..])] {
            if diag.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                bail!("{name} entries must be finite and non-negative");
            }
        }
        if k.r.contains(&0.0) {
            bail!("kalman.r entries must be positive");
        }
        let e = &self.eval;
        unit(e.iou_threshold, "eval.iou_threshold")?;
        unit(e.mostly_tracked, "eval.mostly_tracked")?;
        unit(e.mostly_lost, "eval.mostly_lost")?;
        if e.mostly_lost > e.mostly_tracked {
            bail!("eval.mostly_lost must not exceed eval.mostly_tracked");
        }
        Ok(())
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        let t = &self.tracker;
        let a = &self.affinity;
        TrackerConfig {
            cls_threshold: t.cls_threshold,
            hit_threshold: t.hit_threshold,
            miss_threshold: t.miss_threshold,
            default_start_end_prob: t.default_start_end_prob,
            track_confidence: t.track_confidence,
            affinity: AffinityConfig {
                weights: AffinityWeights::new(a.alpha, a.beta).expect("validated"),
                terms: AffinityTerms { appearance: a.appearance, distance: a.distance, iou: a.iou },
            },
            association: AssociationWeights {
                cls: self.association.w_cls,
                aff: self.association.w_aff,
                se: self.association.w_se,
            },
            kalman: KalmanConfig::from_diagonals(&self.kalman.p0, &self.kalman.r, &self.kalman.q),
            associator: match t.associator {
                AssociatorKind::Mip => Associator::Mip,
                AssociatorKind::Hungarian => Associator::Hungarian { gate: t.hungarian_gate },
            },
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            iou_threshold: self.eval.iou_threshold,
            mostly_tracked: self.eval.mostly_tracked,
            mostly_lost: self.eval.mostly_lost,
        }
    }

    pub fn label_filter(&self) -> LabelFilter {
        LabelFilter {
            classes: self.eval.classes.clone(),
            max_truncated: self.eval.max_truncated,
            max_occluded: self.eval.max_occluded,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::parse("", &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.tracker_config(), TrackerConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("[tracker]\ncls_treshold = 0.9\n", &[]).unwrap_err();
        assert!(format!("{err:#}").contains("cls_treshold"), "{err:#}");
        let err = RunConfig::parse("[trackr]\n", &[]).unwrap_err();
        assert!(format!("{err:#}").contains("trackr"), "{err:#}");
    }

    #[test]
    fn overrides_beat_file() {
        let file = "[tracker]\ncls_threshold = 0.9\nassociator = \"hungarian\"\n";
        let cfg = RunConfig::parse(file, &["tracker.cls_threshold=0.95".into(), "run.object_type=Pedestrian".into()])
            .unwrap();
        assert_eq!(cfg.tracker.cls_threshold, 0.95);
        assert_eq!(cfg.tracker.associator, AssociatorKind::Hungarian);
        assert_eq!(cfg.run.object_type, "Pedestrian");
        assert!(RunConfig::parse("", &["tracker.nope=1".into()]).is_err());
        assert!(RunConfig::parse("", &["tracker".into()]).is_err());
    }

    #[test]
    fn out_of_range_values_rejected() {
        assert!(RunConfig::parse("[tracker]\ncls_threshold = 1.5\n", &[]).is_err());
        assert!(RunConfig::parse("[association]\nw_aff = 0\n", &[]).is_err());
        assert!(RunConfig::parse("[affinity]\nalpha = -1\n", &[]).is_err());
        assert!(RunConfig::parse("[kalman]\nr = [0, 1, 1, 1, 1, 1, 1]\n", &[]).is_err());
        assert!(RunConfig::parse("[kalman]\nr = [1, 1]\n", &[]).is_err());
    }

    #[test]
    fn dump_parses_back() {
        let mut cfg = RunConfig::default();
        cfg.tracker.hungarian_gate = Some(0.25);
        cfg.eval.classes = vec!["Car".into()];
        assert_eq!(RunConfig::parse(&cfg.to_toml(), &[]).unwrap(), cfg);
    }
}
