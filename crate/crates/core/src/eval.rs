//! CLEAR MOT evaluation with mostly-tracked / mostly-lost breakdown.
//!
//! Hypotheses are matched to ground truth by bird's-eye-view IoU, strictly
//! above a threshold (0.5 by default). Correspondences from the previous
//! frame are kept while they still pass the threshold; the rest are matched
//! by maximum total IoU.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::association::max_weight_assignment;
use crate::geometry::{bev_iou, Box3D};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalConfig {
    pub iou_threshold: f64,
    pub mostly_tracked: f64,
    pub mostly_lost: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { iou_threshold: 0.5, mostly_tracked: 0.8, mostly_lost: 0.2 }
    }
}

/// A box with an identity, used for both ground truth and hypotheses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Labeled {
    pub id: u64,
    pub bbox: Box3D,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub gt_id: u64,
    pub hyp_id: u64,
    pub iou: f64,
}

/// Matching outcome of one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    pub gt_ids: Vec<u64>,
    pub hyp_ids: Vec<u64>,
    pub pairs: Vec<MatchedPair>,
}

impl FrameMatch {
    /// Ground-truth id to hypothesis id for this frame.
    pub fn correspondence(&self) -> BTreeMap<u64, u64> {
        self.pairs.iter().map(|p| (p.gt_id, p.hyp_id)).collect()
    }
}

pub fn match_frame(gt: &[Labeled], hyp: &[Labeled], prev: &BTreeMap<u64, u64>, iou_threshold: f64) -> FrameMatch {
    let mut pairs = Vec::new();
    let mut gt_used = alloc::vec![false; gt.len()];
    let mut hyp_used = alloc::vec![false; hyp.len()];

    for (gi, g) in gt.iter().enumerate() {
        let Some(&hyp_id) = prev.get(&g.id) else { continue };
        let Some(hi) = hyp.iter().position(|h| h.id == hyp_id) else { continue };
        if hyp_used[hi] {
            continue;
        }
        let iou = bev_iou(&g.bbox, &hyp[hi].bbox);
        if iou > iou_threshold {
            gt_used[gi] = true;
            hyp_used[hi] = true;
            pairs.push(MatchedPair { gt_id: g.id, hyp_id, iou });
        }
    }

    let free_gt: Vec<usize> = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
    let free_hyp: Vec<usize> = (0..hyp.len()).filter(|&i| !hyp_used[i]).collect();
    if !free_gt.is_empty() && !free_hyp.is_empty() {
        let iou = DMatrix::from_fn(free_gt.len(), free_hyp.len(), |r, c| {
            let v = bev_iou(&gt[free_gt[r]].bbox, &hyp[free_hyp[c]].bbox);
            if v > iou_threshold { v } else { 0.0 }
        });
        for (r, c) in max_weight_assignment(&iou).into_iter().enumerate() {
            if let Some(c) = c {
                if iou[(r, c)] > iou_threshold {
                    pairs.push(MatchedPair { gt_id: gt[free_gt[r]].id, hyp_id: hyp[free_hyp[c]].id, iou: iou[(r, c)] });
                }
            }
        }
    }
    pairs.sort_by_key(|p| p.gt_id);

    FrameMatch { gt_ids: gt.iter().map(|g| g.id).collect(), hyp_ids: hyp.iter().map(|h| h.id).collect(), pairs }
}

/// Raw counts behind a report; sums across sequences.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MotCounts {
    pub gt_objects: u64,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub idsw: u64,
    pub frag: u64,
    pub iou_sum: f64,
    pub trajectories: u64,
    pub mostly_tracked: u64,
    pub partially_tracked: u64,
    pub mostly_lost: u64,
}

impl core::ops::Add for MotCounts {
    type Output = MotCounts;
    fn add(self, o: MotCounts) -> MotCounts {
        MotCounts {
            gt_objects: self.gt_objects + o.gt_objects,
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            idsw: self.idsw + o.idsw,
            frag: self.frag + o.frag,
            iou_sum: self.iou_sum + o.iou_sum,
            trajectories: self.trajectories + o.trajectories,
            mostly_tracked: self.mostly_tracked + o.mostly_tracked,
            partially_tracked: self.partially_tracked + o.partially_tracked,
            mostly_lost: self.mostly_lost + o.mostly_lost,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MotReport {
    pub mota: f64,
    /// Mean IoU over true positives (higher is better).
    pub motp: f64,
    pub fp: u64,
    #[cfg_attr(feature = "serde", serde(rename = "fn"))]
    pub fn_: u64,
    pub idsw: u64,
    pub frag: u64,
    pub mt: f64,
    pub pt: f64,
    pub ml: f64,
    /// Set when there is no ground truth; `mota` is then reported as 1.
    pub mota_undefined: bool,
    pub counts: MotCounts,
}

impl MotReport {
    pub fn from_counts(c: MotCounts) -> Self {
        let mota_undefined = c.gt_objects == 0;
        let mota = if mota_undefined {
            1.0
        } else {
            1.0 - (c.fp + c.fn_ + c.idsw) as f64 / c.gt_objects as f64
        };
        let motp = if c.tp == 0 { 0.0 } else { c.iou_sum / c.tp as f64 };
        let ratio = |n: u64| if c.trajectories == 0 { 0.0 } else { n as f64 / c.trajectories as f64 };
        MotReport {
            mota,
            motp,
            fp: c.fp,
            fn_: c.fn_,
            idsw: c.idsw,
            frag: c.frag,
            mt: ratio(c.mostly_tracked),
            pt: ratio(c.partially_tracked),
            ml: ratio(c.mostly_lost),
            mota_undefined,
            counts: c,
        }
    }

    /// Pools several sequences into one report.
    pub fn aggregate<'a>(reports: impl IntoIterator<Item = &'a MotReport>) -> MotReport {
        let total = reports.into_iter().fold(MotCounts::default(), |acc, r| acc + r.counts);
        MotReport::from_counts(total)
    }
}

#[derive(Default)]
struct GtHistory {
    present: u64,
    tracked: u64,
    last_hyp: Option<u64>,
    /// Whether the object was matched the last time it was present.
    was_tracked: bool,
}

/// Folds per-frame matches (in frame order) into a report.
pub fn accumulate(frames: &[FrameMatch], cfg: &EvalConfig) -> MotReport {
    let mut c = MotCounts::default();
    let mut history: BTreeMap<u64, GtHistory> = BTreeMap::new();
    for f in frames {
        let matched: BTreeMap<u64, &MatchedPair> = f.pairs.iter().map(|p| (p.gt_id, p)).collect();
        let hyp_matched: BTreeSet<u64> = f.pairs.iter().map(|p| p.hyp_id).collect();
        c.gt_objects += f.gt_ids.len() as u64;
        c.tp += f.pairs.len() as u64;
        c.fn_ += (f.gt_ids.len() - f.pairs.len()) as u64;
        c.fp += f.hyp_ids.iter().filter(|h| !hyp_matched.contains(h)).count() as u64;
        c.iou_sum += f.pairs.iter().map(|p| p.iou).sum::<f64>();

        for gt_id in &f.gt_ids {
            let h = history.entry(*gt_id).or_default();
            h.present += 1;
            match matched.get(gt_id) {
                Some(p) => {
                    h.tracked += 1;
                    if h.last_hyp.is_some_and(|last| last != p.hyp_id) {
                        c.idsw += 1;
                    }
                    if h.last_hyp.is_some() && !h.was_tracked {
                        c.frag += 1;
                    }
                    h.last_hyp = Some(p.hyp_id);
                    h.was_tracked = true;
                }
                None => h.was_tracked = false,
            }
        }
    }
    for h in history.values() {
        c.trajectories += 1;
        let ratio = h.tracked as f64 / h.present as f64;
        if ratio >= cfg.mostly_tracked {
            c.mostly_tracked += 1;
        } else if ratio <= cfg.mostly_lost {
            c.mostly_lost += 1;
        } else {
            c.partially_tracked += 1;
        }
    }
    MotReport::from_counts(c)
}

/// Matches and accumulates a whole sequence. Frames missing from either map
/// count as empty.
pub fn evaluate_sequence(
    gt: &BTreeMap<u32, Vec<Labeled>>,
    hyp: &BTreeMap<u32, Vec<Labeled>>,
    cfg: &EvalConfig,
) -> MotReport {
    let frames: BTreeSet<u32> = gt.keys().chain(hyp.keys()).copied().collect();
    let mut prev = BTreeMap::new();
    let mut matches = Vec::with_capacity(frames.len());
    for f in frames {
        let g = gt.get(&f).map(Vec::as_slice).unwrap_or(&[]);
        let h = hyp.get(&f).map(Vec::as_slice).unwrap_or(&[]);
        let m = match_frame(g, h, &prev, cfg.iou_threshold);
        prev = m.correspondence();
        matches.push(m);
    }
    accumulate(&matches, cfg)
}
