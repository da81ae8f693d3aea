//! Online per-sequence tracking loop and track lifecycle.
//!
//! Each frame: drop low-confidence detections, predict every track one
//! frame ahead, score detections against the predictions, associate, update
//! matched tracks and apply the hit/miss lifecycle. Only confirmed tracks
//! that were matched (or started) in the current frame are reported.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::affinity::{compute_affinities, AffinityConfig, AffinityError, AffinityTarget};
use crate::association::{
    hungarian_baseline, solve_mip, AssociationError, AssociationProblem, AssociationResult, AssociationWeights,
};
use crate::detection::{Detection, Embedding};
use crate::geometry::{Box3D, GeometryError};
use crate::motion::{kf_init, kf_predict, kf_update, observation_from_box, KalmanConfig, KalmanState, MotionError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackerError {
    #[error("frame {frame} is not after the previous frame {previous}")]
    OutOfOrder { frame: u32, previous: u32 },
    #[error("invalid detection: {0}")]
    InvalidBox(#[from] GeometryError),
    #[error("detection score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error(transparent)]
    Affinity(#[from] AffinityError),
    #[error(transparent)]
    Association(#[from] AssociationError),
    #[error(transparent)]
    Motion(#[from] MotionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TrackStatus {
    Tentative,
    Confirmed,
}

/// How a track's classification confidence is derived for association.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TrackConfidence {
    /// Score of the most recently associated detection.
    #[default]
    Last,
    /// Mean score over all associated detections.
    Mean,
}

/// Association back end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Associator {
    /// Joint binary program over confidences, affinities and start/end.
    Mip,
    /// Maximum-affinity matching that treats every input as a true object.
    Hungarian { gate: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Detections scoring below this are discarded before association.
    pub cls_threshold: f64,
    /// A matched track is confirmed once its hit count exceeds this.
    pub hit_threshold: u32,
    /// A track is deleted once its consecutive misses exceed this.
    pub miss_threshold: u32,
    /// Start/end probability for objects that carry none.
    pub default_start_end_prob: f64,
    pub track_confidence: TrackConfidence,
    pub affinity: AffinityConfig,
    pub association: AssociationWeights,
    pub kalman: KalmanConfig,
    pub associator: Associator,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            cls_threshold: 0.85,
            hit_threshold: 0,
            miss_threshold: 2,
            default_start_end_prob: 0.5,
            track_confidence: TrackConfidence::Last,
            affinity: AffinityConfig::default(),
            association: AssociationWeights::default(),
            kalman: KalmanConfig::default(),
            associator: Associator::Mip,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub state: KalmanState,
    /// Prior box for the current frame.
    pub predicted: Box3D,
    pub last_box: Box3D,
    pub embedding: Option<Embedding>,
    /// Classification confidence, see [`TrackConfidence`].
    pub confidence: f64,
    /// Number of detections associated so far.
    pub detections: u32,
    pub hits: u32,
    pub misses: u32,
    pub status: TrackStatus,
}

impl AffinityTarget for Track {
    fn predicted_box(&self) -> &Box3D {
        &self.predicted
    }

    fn embedding(&self) -> Option<&Embedding> {
        self.embedding.as_ref()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackOutput {
    pub id: u64,
    pub bbox: Box3D,
    pub confidence: f64,
}

/// Reported tracks of one frame, sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame: u32,
    pub tracks: Vec<TrackOutput>,
}

/// Single-sequence tracker state.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    tracks: Vec<Track>,
    next_id: u64,
    last_frame: Option<u32>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Self {
        Tracker { cfg, tracks: Vec::new(), next_id: 1, last_frame: None }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Live tracks, tentative and confirmed, in creation order.
    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn step(&mut self, frame: u32, dets: &[Detection]) -> Result<FrameResult, TrackerError> {
        self.step_with_appearance(frame, dets, None)
    }

    /// Like [`step`](Self::step) with precomputed raw appearance scores.
    ///
    /// `raw_appearance` is indexed by the detections that pass the confidence
    /// threshold (rows, input order) and by [`tracks`](Self::tracks) as they
    /// stand before the call (columns).
    pub fn step_with_appearance(
        &mut self,
        frame: u32,
        dets: &[Detection],
        raw_appearance: Option<&DMatrix<f64>>,
    ) -> Result<FrameResult, TrackerError> {
        if let Some(previous) = self.last_frame {
            if frame <= previous {
                return Err(TrackerError::OutOfOrder { frame, previous });
            }
        }
        for d in dets {
            d.bbox.validate()?;
            if !(0.0..=1.0).contains(&d.score) {
                return Err(TrackerError::InvalidScore(d.score));
            }
        }
        self.last_frame = Some(frame);

        let kept: Vec<Detection> = dets.iter().filter(|d| d.score >= self.cfg.cls_threshold).cloned().collect();

        for t in self.tracks.iter_mut() {
            let (state, predicted) = kf_predict(&t.state, &self.cfg.kalman);
            t.state = state;
            t.predicted = predicted;
        }

        let affinity = compute_affinities(&kept, &self.tracks, &self.cfg.affinity, raw_appearance)?;
        let assoc = match self.cfg.associator {
            Associator::Mip => {
                let default_se = self.cfg.default_start_end_prob;
                let problem = AssociationProblem {
                    det_cls: kept.iter().map(|d| d.score).collect(),
                    trk_cls: self.tracks.iter().map(|t| t.confidence).collect(),
                    affinity: affinity.refined,
                    det_start: kept.iter().map(|d| d.start_prob.unwrap_or(default_se)).collect(),
                    trk_end: self.tracks.iter().map(|_| default_se).collect(),
                    weights: self.cfg.association,
                };
                solve_mip(&problem)?
            }
            Associator::Hungarian { gate } => {
                trust_all(kept.len(), self.tracks.len(), &hungarian_baseline(&affinity.refined, gate))
            }
        };

        let reported = self.apply_lifecycle(&assoc, &kept)?;
        let mut out: Vec<TrackOutput> = self
            .tracks
            .iter()
            .filter(|t| reported.contains(&t.id) && t.status == TrackStatus::Confirmed)
            .map(|t| TrackOutput { id: t.id, bbox: t.last_box, confidence: t.confidence })
            .collect();
        out.sort_by_key(|t| t.id);
        Ok(FrameResult { frame, tracks: out })
    }

    /// Applies one frame's association to the track set and returns the ids
    /// of tracks that were matched or started in this frame.
    ///
    /// * matched track: Kalman update, `hits += 1`, `misses = 0`, confirmed
    ///   once `hits > hit_threshold`;
    /// * unmatched or ended track: coasts on its prediction, `misses += 1`,
    ///   `hits = 0`;
    /// * started detection: new confirmed track;
    /// * unselected detection: new tentative track with one miss;
    /// * tracks with `misses > miss_threshold` are removed.
    pub fn apply_lifecycle(&mut self, assoc: &AssociationResult, dets: &[Detection]) -> Result<Vec<u64>, TrackerError> {
        let mut touched = Vec::new();
        let mut matched = alloc::vec![false; self.tracks.len()];
        for (d, k) in assoc.matches() {
            let det = &dets[d];
            let t = &mut self.tracks[k];
            t.state = kf_update(&t.state, &observation_from_box(&det.bbox), &self.cfg.kalman)?;
            t.last_box = t.state.to_box();
            t.embedding = det.embedding.clone();
            t.detections += 1;
            t.confidence = match self.cfg.track_confidence {
                TrackConfidence::Last => det.score,
                TrackConfidence::Mean => t.confidence + (det.score - t.confidence) / t.detections as f64,
            };
            t.hits += 1;
            t.misses = 0;
            if t.hits > self.cfg.hit_threshold {
                t.status = TrackStatus::Confirmed;
            }
            matched[k] = true;
            touched.push(t.id);
        }
        for (t, _) in self.tracks.iter_mut().zip(&matched).filter(|(_, m)| !**m) {
            t.misses += 1;
            t.hits = 0;
        }

        for (d, det) in dets.iter().enumerate() {
            if assoc.y_se_det[d] {
                let id = self.spawn(det, TrackStatus::Confirmed, 1, 0);
                touched.push(id);
            } else if !assoc.y_cls_det[d] {
                self.spawn(det, TrackStatus::Tentative, 0, 1);
            }
        }

        let limit = self.cfg.miss_threshold;
        self.tracks.retain(|t| t.misses <= limit);
        Ok(touched)
    }

    fn spawn(&mut self, det: &Detection, status: TrackStatus, hits: u32, misses: u32) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.tracks.push(Track {
            id,
            state: kf_init(&det.bbox, &self.cfg.kalman),
            predicted: det.bbox,
            last_box: det.bbox,
            embedding: det.embedding.clone(),
            confidence: det.score,
            detections: 1,
            hits,
            misses,
            status,
        });
        id
    }
}

/// Lifts a plain matching into association variables: every unmatched
/// detection starts a track and every unmatched track ends.
fn trust_all(m: usize, n: usize, pairs: &[(usize, usize)]) -> AssociationResult {
    let mut y = AssociationResult::empty(m, n);
    for &(d, k) in pairs {
        y.y_aff[d * n + k] = true;
        y.y_cls_det[d] = true;
        y.y_cls_trk[k] = true;
    }
    for d in 0..m {
        if !y.y_cls_det[d] {
            y.y_se_det[d] = true;
            y.y_cls_det[d] = true;
        }
    }
    for k in 0..n {
        if !y.y_cls_trk[k] {
            y.y_se_trk[k] = true;
            y.y_cls_trk[k] = true;
        }
    }
    y
}

/// Runs a whole sequence, stepping every frame from 0 through
/// `last_frame` (or the last frame present) so that empty frames coast.
pub fn track_sequence(
    cfg: &TrackerConfig,
    frames: &BTreeMap<u32, Vec<Detection>>,
    last_frame: Option<u32>,
) -> Result<Vec<FrameResult>, TrackerError> {
    let mut tracker = Tracker::new(cfg.clone());
    let last = match (last_frame, frames.keys().next_back()) {
        (Some(l), _) => l,
        (None, Some(&l)) => l,
        (None, None) => return Ok(Vec::new()),
    };
    let mut out = Vec::with_capacity(last as usize + 1);
    for frame in 0..=last {
        let dets = frames.get(&frame).map(Vec::as_slice).unwrap_or(&[]);
        out.push(tracker.step(frame, dets)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn car(x: f64, y: f64) -> Box3D {
        Box3D::new(x, y, 0.0, 4.0, 1.8, 1.5, 0.0).unwrap()
    }

    #[test]
    fn empty_frame_no_tracks() {
        let mut t = Tracker::new(TrackerConfig::default());
        let r = t.step(0, &[]).unwrap();
        assert_eq!(r, FrameResult { frame: 0, tracks: vec![] });
    }

    #[test]
    fn out_of_order_frames_rejected() {
        let mut t = Tracker::new(TrackerConfig::default());
        t.step(3, &[]).unwrap();
        assert_eq!(t.step(3, &[]), Err(TrackerError::OutOfOrder { frame: 3, previous: 3 }));
        assert_eq!(t.step(1, &[]), Err(TrackerError::OutOfOrder { frame: 1, previous: 3 }));
    }

    #[test]
    fn stationary_object_confirmed_immediately() {
        let mut t = Tracker::new(TrackerConfig::default());
        let det = Detection::new(car(5.0, 2.0), 0.99);
        // 0.99 is not certain enough to start an identity on its own, so the
        // first frame leaves a tentative track that the second frame matches
        assert!(t.step(0, core::slice::from_ref(&det)).unwrap().tracks.is_empty());
        for frame in 1..5 {
            let r = t.step(frame, core::slice::from_ref(&det)).unwrap();
            assert_eq!(r.tracks.len(), 1, "frame {frame}");
            assert_eq!(r.tracks[0].id, 1);
        }
        assert_eq!(t.tracks().len(), 1);
    }

    #[test]
    fn low_confidence_detection_filtered() {
        let mut t = Tracker::new(TrackerConfig::default());
        let r = t.step(0, &[Detection::new(car(0.0, 0.0), 0.5)]).unwrap();
        assert!(r.tracks.is_empty());
        assert!(t.tracks().is_empty());
    }

    #[test]
    fn unselected_detection_becomes_tentative_then_expires() {
        let mut t = Tracker::new(TrackerConfig::default());
        // start gain 100 * (0.9 - 1) + 0.5 < 0, so the program leaves it out
        let r = t.step(0, &[Detection::new(car(0.0, 0.0), 0.9)]).unwrap();
        assert!(r.tracks.is_empty());
        assert_eq!(t.tracks().len(), 1);
        assert_eq!(t.tracks()[0].status, TrackStatus::Tentative);
        assert_eq!(t.tracks()[0].misses, 1);
        t.step(1, &[]).unwrap();
        assert_eq!(t.tracks()[0].misses, 2);
        t.step(2, &[]).unwrap();
        assert!(t.tracks().is_empty(), "misses = 3 exceeds the threshold of 2");
    }

    #[test]
    fn tentative_track_confirmed_on_match() {
        let mut t = Tracker::new(TrackerConfig::default());
        t.step(0, &[Detection::new(car(0.0, 0.0), 0.9)]).unwrap();
        let r = t.step(1, &[Detection::new(car(0.3, 0.0), 0.9)]).unwrap();
        assert_eq!(r.tracks.len(), 1);
        assert_eq!(r.tracks[0].id, 1);
        assert_eq!(t.tracks()[0].status, TrackStatus::Confirmed);
    }

    #[test]
    fn occlusion_bridged() {
        let mut t = Tracker::new(TrackerConfig::default());
        for frame in 0..4u32 {
            t.step(frame, &[Detection::new(car(frame as f64, 0.0), 1.0)]).unwrap();
        }
        let missed = t.step(4, &[]).unwrap();
        assert!(missed.tracks.is_empty());
        let back = t.step(5, &[Detection::new(car(5.0, 0.0), 1.0)]).unwrap();
        assert_eq!(back.tracks.len(), 1);
        assert_eq!(back.tracks[0].id, 1);
    }

    #[test]
    fn confident_detection_starts_confirmed_track() {
        let mut t = Tracker::new(TrackerConfig::default());
        // start gain 100 * (0.995 - 1) + 1.0 = 0.5 > 0
        let r = t.step(0, &[Detection::new(car(0.0, 0.0), 0.995).with_start_prob(1.0)]).unwrap();
        assert_eq!(r.tracks.len(), 1);
        assert_eq!(t.tracks()[0].status, TrackStatus::Confirmed);
    }

    #[test]
    fn ids_increase_and_are_not_reused() {
        let mut t = Tracker::new(TrackerConfig::default());
        t.step(0, &[Detection::new(car(0.0, 0.0), 1.0)]).unwrap();
        for f in 1..5 {
            t.step(f, &[]).unwrap();
        }
        assert!(t.tracks().is_empty());
        let r = t.step(5, &[Detection::new(car(0.0, 0.0), 1.0)]).unwrap();
        assert_eq!(r.tracks[0].id, 2);
    }

    #[test]
    fn hungarian_trusts_every_detection() {
        let cfg = TrackerConfig { associator: Associator::Hungarian { gate: None }, ..Default::default() };
        let mut t = Tracker::new(cfg);
        let r = t.step(0, &[Detection::new(car(0.0, 0.0), 0.86)]).unwrap();
        assert_eq!(r.tracks.len(), 1);
    }

    #[test]
    fn sequence_runner_fills_gaps() {
        let mut frames = BTreeMap::new();
        frames.insert(0, vec![Detection::new(car(0.0, 0.0), 1.0)]);
        frames.insert(3, vec![Detection::new(car(0.0, 0.0), 1.0)]);
        let out = track_sequence(&TrackerConfig::default(), &frames, Some(4)).unwrap();
        assert_eq!(out.iter().map(|f| f.frame).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        assert_eq!(out[3].tracks[0].id, 1);
        assert!(track_sequence(&TrackerConfig::default(), &BTreeMap::new(), None).unwrap().is_empty());
    }

    #[test]
    fn mean_track_confidence() {
        let cfg = TrackerConfig { track_confidence: TrackConfidence::Mean, cls_threshold: 0.0, ..Default::default() };
        let mut t = Tracker::new(cfg);
        t.step(0, &[Detection::new(car(0.0, 0.0), 1.0)]).unwrap();
        t.step(1, &[Detection::new(car(0.0, 0.0), 0.96)]).unwrap();
        t.step(2, &[Detection::new(car(0.0, 0.0), 0.98)]).unwrap();
        assert_eq!(t.tracks().len(), 1);
        assert!((t.tracks()[0].confidence - 0.98).abs() < 1e-12);
        assert_eq!(t.tracks()[0].detections, 3);
    }
}
