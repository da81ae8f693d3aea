//! Detection-to-track affinities: appearance scores ranked by a
//! bidirectional softmax, motion scores from 3D-DIoU against the Kalman
//! predicted boxes, fused by a convex combination.

use libm::exp;
use nalgebra::DMatrix;
use thiserror::Error;

use crate::detection::{Detection, Embedding};
use crate::geometry::{diou_affinity, distance_term, iou_3d, Box3D};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AffinityError {
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("affinity weights must be nonnegative and sum to 1 (got {0}, {1})")]
    InvalidWeights(f64, f64),
    #[error("raw appearance matrix is {got_rows}x{got_cols}, expected {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize, got_rows: usize, got_cols: usize },
}

/// Mixing weights for appearance (`alpha`) and motion (`beta`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityWeights {
    alpha: f64,
    beta: f64,
}

impl AffinityWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, AffinityError> {
        if !(alpha >= 0.0 && beta >= 0.0) || (alpha + beta - 1.0).abs() > 1e-9 {
            return Err(AffinityError::InvalidWeights(alpha, beta));
        }
        Ok(AffinityWeights { alpha, beta })
    }

    /// Weights with `beta = ratio * alpha`.
    pub fn from_ratio(beta_over_alpha: f64) -> Result<Self, AffinityError> {
        if beta_over_alpha.is_nan() || beta_over_alpha < 0.0 || !beta_over_alpha.is_finite() {
            return Err(AffinityError::InvalidWeights(1.0, beta_over_alpha));
        }
        let alpha = 1.0 / (1.0 + beta_over_alpha);
        Ok(AffinityWeights { alpha, beta: beta_over_alpha * alpha })
    }

    pub const MOTION_ONLY: AffinityWeights = AffinityWeights { alpha: 0.0, beta: 1.0 };
    pub const APPEARANCE_ONLY: AffinityWeights = AffinityWeights { alpha: 1.0, beta: 0.0 };

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl Default for AffinityWeights {
    /// `beta = 10 alpha`.
    fn default() -> Self {
        AffinityWeights { alpha: 1.0 / 11.0, beta: 10.0 / 11.0 }
    }
}

/// Which affinity cues take part. Used for ablations; all on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AffinityTerms {
    pub appearance: bool,
    pub distance: bool,
    pub iou: bool,
}

impl Default for AffinityTerms {
    fn default() -> Self {
        AffinityTerms { appearance: true, distance: true, iou: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffinityConfig {
    pub weights: AffinityWeights,
    pub terms: AffinityTerms,
}

/// Anything that can be scored against detections: a predicted box plus an
/// optional appearance feature.
pub trait AffinityTarget {
    fn predicted_box(&self) -> &Box3D;
    fn embedding(&self) -> Option<&Embedding>;
}

/// Detections x tracks affinity components and their fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub appearance: DMatrix<f64>,
    pub motion: DMatrix<f64>,
    pub refined: DMatrix<f64>,
    /// Weights actually applied (appearance may have been switched off).
    pub weights: AffinityWeights,
}

impl AffinityMatrix {
    pub fn empty(rows: usize, cols: usize, weights: AffinityWeights) -> Self {
        AffinityMatrix {
            appearance: DMatrix::zeros(rows, cols),
            motion: DMatrix::zeros(rows, cols),
            refined: DMatrix::zeros(rows, cols),
            weights,
        }
    }

    pub fn num_detections(&self) -> usize {
        self.refined.nrows()
    }

    pub fn num_tracks(&self) -> usize {
        self.refined.ncols()
    }
}

/// Negated mean absolute difference; 0 for identical embeddings.
pub fn raw_appearance_score(e_d: &Embedding, e_k: &Embedding) -> Result<f64, AffinityError> {
    if e_d.dim() != e_k.dim() {
        return Err(AffinityError::DimensionMismatch(e_d.dim(), e_k.dim()));
    }
    if e_d.dim() == 0 {
        return Ok(0.0);
    }
    let sum: f64 = e_d.0.iter().zip(&e_k.0).map(|(a, b)| (a - b).abs()).sum();
    Ok(-sum / e_d.dim() as f64)
}

fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let mut total = 0.0;
    for v in values.iter_mut() {
        *v = exp(*v - max);
        total += *v;
    }
    for v in values.iter_mut() {
        *v /= total;
    }
}

/// Softmax over each column: every column sums to 1.
pub fn column_softmax(raw: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = raw.clone();
    if raw.nrows() > 0 {
        // storage is column-major, so each column is a contiguous run
        for chunk in out.as_mut_slice().chunks_mut(raw.nrows()) {
            softmax_in_place(chunk);
        }
    }
    out
}

/// Softmax over each row: every row sums to 1.
pub fn row_softmax(raw: &DMatrix<f64>) -> DMatrix<f64> {
    column_softmax(&raw.transpose()).transpose()
}

/// Average of the column-wise and row-wise softmax of `raw`.
pub fn softmax_ranking(raw: &DMatrix<f64>) -> DMatrix<f64> {
    (column_softmax(raw) + row_softmax(raw)) * 0.5
}

/// Motion affinity restricted to the enabled geometric cues.
pub fn motion_affinity(det: &Box3D, predicted: &Box3D, terms: &AffinityTerms) -> f64 {
    match (terms.distance, terms.iou) {
        (true, true) => diou_affinity(det, predicted),
        (true, false) => distance_term(det, predicted),
        (false, true) => iou_3d(det, predicted),
        (false, false) => 0.0,
    }
}

/// Builds the refined affinity matrix between `dets` (rows) and `tracks`
/// (columns).
///
/// `raw_appearance`, when given, replaces the embedding-based raw scores and
/// must be `dets.len() x tracks.len()`. Without it, appearance is used only
/// if every detection and track carries an embedding; otherwise the frame
/// falls back to motion-only weights.
pub fn compute_affinities<T: AffinityTarget>(
    dets: &[Detection],
    tracks: &[T],
    cfg: &AffinityConfig,
    raw_appearance: Option<&DMatrix<f64>>,
) -> Result<AffinityMatrix, AffinityError> {
    let (m, n) = (dets.len(), tracks.len());
    let motion_enabled = cfg.terms.distance || cfg.terms.iou;
    if m == 0 || n == 0 {
        return Ok(AffinityMatrix::empty(m, n, cfg.weights));
    }

    let raw = if !cfg.terms.appearance {
        None
    } else if let Some(raw) = raw_appearance {
        if raw.shape() != (m, n) {
            return Err(AffinityError::ShapeMismatch { rows: m, cols: n, got_rows: raw.nrows(), got_cols: raw.ncols() });
        }
        Some(raw.clone())
    } else if dets.iter().all(|d| d.embedding.is_some()) && tracks.iter().all(|t| t.embedding().is_some()) {
        let mut raw = DMatrix::zeros(m, n);
        for (k, t) in tracks.iter().enumerate() {
            let e_k = t.embedding().expect("checked above");
            for (d, det) in dets.iter().enumerate() {
                raw[(d, k)] = raw_appearance_score(det.embedding.as_ref().expect("checked above"), e_k)?;
            }
        }
        Some(raw)
    } else {
        None
    };

    let weights = match (raw.is_some(), motion_enabled) {
        (true, true) => cfg.weights,
        (true, false) => AffinityWeights::APPEARANCE_ONLY,
        (false, _) => AffinityWeights::MOTION_ONLY,
    };
    let appearance = raw.as_ref().map(softmax_ranking).unwrap_or_else(|| DMatrix::zeros(m, n));

    let mut motion = DMatrix::zeros(m, n);
    if motion_enabled {
        for (k, t) in tracks.iter().enumerate() {
            let predicted = t.predicted_box();
            for (d, det) in dets.iter().enumerate() {
                motion[(d, k)] = motion_affinity(&det.bbox, predicted, &cfg.terms);
            }
        }
    }

    let refined = &appearance * weights.alpha + &motion * weights.beta;
    Ok(AffinityMatrix { appearance, motion, refined, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    struct Target {
        bbox: Box3D,
        embedding: Option<Embedding>,
    }

    impl AffinityTarget for Target {
        fn predicted_box(&self) -> &Box3D {
            &self.bbox
        }
        fn embedding(&self) -> Option<&Embedding> {
            self.embedding.as_ref()
        }
    }

    fn unit_box(x: f64) -> Box3D {
        Box3D::new(x, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn default_weights() {
        let w = AffinityWeights::default();
        assert_abs_diff_eq!(w.beta(), 10.0 * w.alpha(), epsilon = 1e-15);
        assert_abs_diff_eq!(w.alpha() + w.beta(), 1.0, epsilon = 1e-15);
        assert_eq!(AffinityWeights::from_ratio(10.0).unwrap().alpha(), w.alpha());
        assert!(AffinityWeights::new(0.5, 0.6).is_err());
        assert!(AffinityWeights::new(-0.5, 1.5).is_err());
    }

    #[test]
    fn raw_score_examples() {
        let a = Embedding(vec![1.0, 1.0]);
        let b = Embedding(vec![0.0, 3.0]);
        assert_eq!(raw_appearance_score(&a, &a).unwrap(), 0.0);
        assert_eq!(raw_appearance_score(&a, &b).unwrap(), -1.5);
        assert_eq!(raw_appearance_score(&b, &a).unwrap(), -1.5);
        assert_eq!(
            raw_appearance_score(&a, &Embedding(vec![1.0])),
            Err(AffinityError::DimensionMismatch(2, 1))
        );
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_ranking(&DMatrix::from_element(1, 1, -7.3))[(0, 0)], 1.0);
        let out = softmax_ranking(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]));
        let hi = exp(2.0) / (exp(2.0) + 1.0);
        assert_abs_diff_eq!(out[(0, 0)], hi, epsilon = 1e-12);
        assert_abs_diff_eq!(out[(0, 1)], 1.0 - hi, epsilon = 1e-12);
        assert_abs_diff_eq!(out[(1, 0)], 1.0 - hi, epsilon = 1e-12);
        assert_abs_diff_eq!(out[(0, 0)], 0.8808, epsilon = 1e-4);
        assert_eq!(softmax_ranking(&DMatrix::zeros(0, 3)).shape(), (0, 3));
    }

    #[test]
    fn softmax_handles_large_values() {
        let out = softmax_ranking(&DMatrix::from_row_slice(1, 2, &[1000.0, 999.0]));
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn coinciding_detection_and_track() {
        let e = Embedding(vec![0.3, -0.2, 0.9]);
        let det = Detection::new(unit_box(0.0), 1.0).with_embedding(e.clone());
        let trk = Target { bbox: unit_box(0.0), embedding: Some(e) };
        let aff = compute_affinities(&[det], &[trk], &AffinityConfig::default(), None).unwrap();
        assert_abs_diff_eq!(aff.refined[(0, 0)], 21.0 / 11.0, epsilon = 1e-12);
    }

    #[test]
    fn motion_only_when_embedding_missing() {
        let det = Detection::new(unit_box(0.0), 1.0);
        let trk = Target { bbox: unit_box(0.4), embedding: Some(Embedding(vec![1.0])) };
        let aff = compute_affinities(&[det], &[trk], &AffinityConfig::default(), None).unwrap();
        assert_eq!(aff.weights, AffinityWeights::MOTION_ONLY);
        assert_eq!(aff.refined, aff.motion);
    }

    #[test]
    fn explicit_motion_weights() {
        let e = Embedding(vec![0.0]);
        let dets = [
            Detection::new(unit_box(0.0), 1.0).with_embedding(e.clone()),
            Detection::new(unit_box(3.0), 1.0).with_embedding(e.clone()),
        ];
        let trk = [Target { bbox: unit_box(0.5), embedding: Some(e) }];
        let cfg = AffinityConfig { weights: AffinityWeights::new(0.0, 1.0).unwrap(), ..Default::default() };
        let aff = compute_affinities(&dets, &trk, &cfg, None).unwrap();
        assert_eq!(aff.refined, aff.motion);
    }

    #[test]
    fn empty_inputs() {
        let trk = [Target { bbox: unit_box(0.0), embedding: None }];
        let aff = compute_affinities(&[], &trk, &AffinityConfig::default(), None).unwrap();
        assert_eq!(aff.refined.shape(), (0, 1));
        let aff = compute_affinities::<Target>(&[Detection::new(unit_box(0.0), 1.0)], &[], &AffinityConfig::default(), None)
            .unwrap();
        assert_eq!(aff.refined.shape(), (1, 0));
    }

    #[test]
    fn raw_override_shape_checked() {
        let det = Detection::new(unit_box(0.0), 1.0);
        let trk = [Target { bbox: unit_box(0.0), embedding: None }];
        let bad = DMatrix::zeros(2, 1);
        assert!(matches!(
            compute_affinities(core::slice::from_ref(&det), &trk, &AffinityConfig::default(), Some(&bad)),
            Err(AffinityError::ShapeMismatch { .. })
        ));
        let good = DMatrix::from_element(1, 1, -3.0);
        let aff = compute_affinities(&[det], &trk, &AffinityConfig::default(), Some(&good)).unwrap();
        assert_eq!(aff.appearance[(0, 0)], 1.0);
    }

    #[test]
    fn ablation_terms() {
        let det = [Detection::new(unit_box(0.0), 1.0)];
        let trk = [Target { bbox: unit_box(0.5), embedding: None }];
        let only = |distance, iou| {
            let cfg = AffinityConfig {
                terms: AffinityTerms { appearance: false, distance, iou },
                ..Default::default()
            };
            compute_affinities(&det, &trk, &cfg, None).unwrap().refined[(0, 0)]
        };
        let d = only(true, false);
        let i = only(false, true);
        assert_abs_diff_eq!(i, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(only(true, true), d + i, epsilon = 1e-12);
    }
}
