//! Joint data association as a binary program over classification,
//! affinity and start/end variables.
//!
//! Every detection `d` and track `k` carries a selection variable `y_cls`.
//! A selected object is either paired with exactly one object on the other
//! side (`y_aff`) or explains itself through a start/end event (`y_se`):
//!
//! ```text
//! y_cls_d = sum_k y_aff_dk + y_se_d        y_cls_k = sum_d y_aff_dk + y_se_k
//! ```
//!
//! The objective `sum c_cls y_cls + sum c_aff y_aff + sum c_se y_se` is
//! maximized with `c_cls = w_cls (x_cls - 1) <= 0`, `c_aff = w_aff x_aff`
//! and `c_se = w_se x_se`.
//!
//! Because `y_cls` is implied by the other two families, an instance reduces
//! to a maximum-weight bipartite matching: unmatched objects take their best
//! outside option (`0`, or start/end when positive) and a pair is worth its
//! value above both outside options. [`solve_mip`] solves that matching
//! exactly with the Hungarian method; [`brute_force_oracle`] enumerates the
//! full feasible set for small instances.

mod hungarian;

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use thiserror::Error;

pub use hungarian::{hungarian_baseline, max_weight_assignment};

/// Largest side the exhaustive oracle accepts.
pub const ORACLE_MAX_SIDE: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AssociationError {
    #[error("invalid association problem: {0}")]
    Invalid(&'static str),
    #[error("brute-force oracle limited to {max}x{max}, got {rows}x{cols}")]
    TooLarge { rows: usize, cols: usize, max: usize },
}

/// Objective weights.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AssociationWeights {
    pub cls: f64,
    pub aff: f64,
    pub se: f64,
}

impl Default for AssociationWeights {
    fn default() -> Self {
        AssociationWeights { cls: 100.0, aff: 22.0, se: 1.0 }
    }
}

/// One frame's association instance: `M` detections against `N` tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationProblem {
    pub det_cls: Vec<f64>,
    pub trk_cls: Vec<f64>,
    /// `M x N` refined affinities.
    pub affinity: DMatrix<f64>,
    pub det_start: Vec<f64>,
    pub trk_end: Vec<f64>,
    pub weights: AssociationWeights,
}

impl AssociationProblem {
    pub fn num_detections(&self) -> usize {
        self.det_cls.len()
    }

    pub fn num_tracks(&self) -> usize {
        self.trk_cls.len()
    }

    pub fn validate(&self) -> Result<(), AssociationError> {
        let (m, n) = (self.num_detections(), self.num_tracks());
        if self.det_start.len() != m || self.trk_end.len() != n || self.affinity.shape() != (m, n) {
            return Err(AssociationError::Invalid("inconsistent dimensions"));
        }
        let unit = |v: &f64| (0.0..=1.0).contains(v);
        if !self.det_cls.iter().chain(&self.trk_cls).all(unit) {
            return Err(AssociationError::Invalid("classification confidence outside [0, 1]"));
        }
        if !self.det_start.iter().chain(&self.trk_end).all(unit) {
            return Err(AssociationError::Invalid("start/end probability outside [0, 1]"));
        }
        if !self.affinity.iter().all(|v| v.is_finite()) {
            return Err(AssociationError::Invalid("non-finite affinity"));
        }
        let w = &self.weights;
        if !(w.cls > 0.0 && w.aff > 0.0 && w.se > 0.0) || !(w.cls.is_finite() && w.aff.is_finite() && w.se.is_finite()) {
            return Err(AssociationError::Invalid("weights must be positive"));
        }
        Ok(())
    }
}

/// Linear objective coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Costs {
    pub det_cls: Vec<f64>,
    pub trk_cls: Vec<f64>,
    pub aff: DMatrix<f64>,
    pub det_se: Vec<f64>,
    pub trk_se: Vec<f64>,
}

impl Costs {
    /// Objective value of an assignment.
    pub fn evaluate(&self, y: &AssociationResult) -> f64 {
        let dot = |c: &[f64], y: &[bool]| c.iter().zip(y).filter(|(_, &s)| s).map(|(c, _)| *c).sum::<f64>();
        let mut total = dot(&self.det_cls, &y.y_cls_det)
            + dot(&self.trk_cls, &y.y_cls_trk)
            + dot(&self.det_se, &y.y_se_det)
            + dot(&self.trk_se, &y.y_se_trk);
        for (d, k) in y.matches() {
            total += self.aff[(d, k)];
        }
        total
    }
}

pub fn build_costs(p: &AssociationProblem) -> Costs {
    let w = &p.weights;
    Costs {
        det_cls: p.det_cls.iter().map(|x| w.cls * (x - 1.0)).collect(),
        trk_cls: p.trk_cls.iter().map(|x| w.cls * (x - 1.0)).collect(),
        aff: &p.affinity * w.aff,
        det_se: p.det_start.iter().map(|x| w.se * x).collect(),
        trk_se: p.trk_end.iter().map(|x| w.se * x).collect(),
    }
}

/// Binary solution of an association instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationResult {
    pub y_cls_det: Vec<bool>,
    pub y_cls_trk: Vec<bool>,
    /// Row-major `M x N` match indicators.
    pub y_aff: Vec<bool>,
    pub y_se_det: Vec<bool>,
    pub y_se_trk: Vec<bool>,
    pub objective: f64,
}

impl AssociationResult {
    pub fn empty(m: usize, n: usize) -> Self {
        AssociationResult {
            y_cls_det: vec![false; m],
            y_cls_trk: vec![false; n],
            y_aff: vec![false; m * n],
            y_se_det: vec![false; m],
            y_se_trk: vec![false; n],
            objective: 0.0,
        }
    }

    pub fn num_detections(&self) -> usize {
        self.y_cls_det.len()
    }

    pub fn num_tracks(&self) -> usize {
        self.y_cls_trk.len()
    }

    pub fn is_matched(&self, d: usize, k: usize) -> bool {
        self.y_aff[d * self.num_tracks() + k]
    }

    /// All `(detection, track)` pairs with `y_aff = 1`, in row-major order.
    pub fn matches(&self) -> Vec<(usize, usize)> {
        let n = self.num_tracks();
        self.y_aff.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| (i / n, i % n)).collect()
    }

    pub fn track_for_detection(&self, d: usize) -> Option<usize> {
        (0..self.num_tracks()).find(|&k| self.is_matched(d, k))
    }

    /// Checks both families of linking constraints exactly.
    pub fn satisfies_constraints(&self) -> bool {
        let (m, n) = (self.num_detections(), self.num_tracks());
        if self.y_aff.len() != m * n || self.y_se_det.len() != m || self.y_se_trk.len() != n {
            return false;
        }
        let det_ok = (0..m).all(|d| {
            let linked = (0..n).filter(|&k| self.is_matched(d, k)).count() + self.y_se_det[d] as usize;
            linked == self.y_cls_det[d] as usize
        });
        let trk_ok = (0..n).all(|k| {
            let linked = (0..m).filter(|&d| self.is_matched(d, k)).count() + self.y_se_trk[k] as usize;
            linked == self.y_cls_trk[k] as usize
        });
        det_ok && trk_ok
    }
}

/// Exact maximizer of the association objective.
///
/// Among equal-value pairings the solver keeps zero-gain matches, so ties
/// favour continuing an identity over starting a new one.
pub fn solve_mip(p: &AssociationProblem) -> Result<AssociationResult, AssociationError> {
    p.validate()?;
    let (m, n) = (p.num_detections(), p.num_tracks());
    let costs = build_costs(p);
    let det_outside: Vec<f64> = (0..m).map(|d| (costs.det_cls[d] + costs.det_se[d]).max(0.0)).collect();
    let trk_outside: Vec<f64> = (0..n).map(|k| (costs.trk_cls[k] + costs.trk_se[k]).max(0.0)).collect();

    let gain = DMatrix::from_fn(m, n, |d, k| {
        costs.det_cls[d] + costs.trk_cls[k] + costs.aff[(d, k)] - det_outside[d] - trk_outside[k]
    });
    let clipped = gain.map(|g| g.max(0.0));

    let mut y = AssociationResult::empty(m, n);
    for (d, k) in max_weight_assignment(&clipped).into_iter().enumerate() {
        if let Some(k) = k {
            if gain[(d, k)] >= 0.0 {
                y.y_aff[d * n + k] = true;
                y.y_cls_det[d] = true;
                y.y_cls_trk[k] = true;
            }
        }
    }
    for d in 0..m {
        if !y.y_cls_det[d] && costs.det_cls[d] + costs.det_se[d] > 0.0 {
            y.y_se_det[d] = true;
            y.y_cls_det[d] = true;
        }
    }
    for k in 0..n {
        if !y.y_cls_trk[k] && costs.trk_cls[k] + costs.trk_se[k] > 0.0 {
            y.y_se_trk[k] = true;
            y.y_cls_trk[k] = true;
        }
    }
    y.objective = costs.evaluate(&y);
    Ok(y)
}

/// Exhaustive search over every feasible assignment (test oracle).
///
/// Ties are broken toward the lexicographically smallest row-major `y_aff`.
pub fn brute_force_oracle(p: &AssociationProblem) -> Result<AssociationResult, AssociationError> {
    p.validate()?;
    let (m, n) = (p.num_detections(), p.num_tracks());
    if m > ORACLE_MAX_SIDE || n > ORACLE_MAX_SIDE {
        return Err(AssociationError::TooLarge { rows: m, cols: n, max: ORACLE_MAX_SIDE });
    }
    let costs = build_costs(p);
    let mut search = Search {
        costs: &costs,
        m,
        n,
        current: AssociationResult::empty(m, n),
        best: None,
    };
    search.detection(0, 0.0);
    let mut best = search.best.expect("the empty assignment is always feasible");
    best.objective = costs.evaluate(&best);
    Ok(best)
}

struct Search<'a> {
    costs: &'a Costs,
    m: usize,
    n: usize,
    current: AssociationResult,
    best: Option<AssociationResult>,
}

impl Search<'_> {
    fn detection(&mut self, d: usize, value: f64) {
        if d == self.m {
            return self.track(0, value);
        }
        let c = self.costs;
        // unselected
        self.detection(d + 1, value);
        // start event
        self.current.y_cls_det[d] = true;
        self.current.y_se_det[d] = true;
        self.detection(d + 1, value + c.det_cls[d] + c.det_se[d]);
        self.current.y_se_det[d] = false;
        // paired with a free track
        for k in 0..self.n {
            if self.current.y_cls_trk[k] {
                continue;
            }
            self.current.y_aff[d * self.n + k] = true;
            self.current.y_cls_trk[k] = true;
            self.detection(d + 1, value + c.det_cls[d] + c.trk_cls[k] + c.aff[(d, k)]);
            self.current.y_aff[d * self.n + k] = false;
            self.current.y_cls_trk[k] = false;
        }
        self.current.y_cls_det[d] = false;
    }

    fn track(&mut self, k: usize, value: f64) {
        if k == self.n {
            return self.leaf(value);
        }
        if self.current.y_cls_trk[k] {
            return self.track(k + 1, value);
        }
        self.track(k + 1, value);
        self.current.y_cls_trk[k] = true;
        self.current.y_se_trk[k] = true;
        self.track(k + 1, value + self.costs.trk_cls[k] + self.costs.trk_se[k]);
        self.current.y_se_trk[k] = false;
        self.current.y_cls_trk[k] = false;
    }

    fn leaf(&mut self, value: f64) {
        let better = match &self.best {
            None => true,
            Some(b) => value > b.objective || (value == b.objective && self.current.y_aff < b.y_aff),
        };
        if better {
            let mut snapshot = self.current.clone();
            snapshot.objective = value;
            self.best = Some(snapshot);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn problem(det_cls: &[f64], trk_cls: &[f64], aff: &[f64], det_start: &[f64], trk_end: &[f64]) -> AssociationProblem {
        AssociationProblem {
            det_cls: det_cls.to_vec(),
            trk_cls: trk_cls.to_vec(),
            affinity: DMatrix::from_row_slice(det_cls.len(), trk_cls.len(), aff),
            det_start: det_start.to_vec(),
            trk_end: trk_end.to_vec(),
            weights: AssociationWeights::default(),
        }
    }

    #[test]
    fn cost_examples() {
        let p = problem(&[1.0, 0.85], &[1.0], &[1.909, 0.0], &[0.5, 0.5], &[0.5]);
        let c = build_costs(&p);
        assert_eq!(c.det_cls[0], 0.0);
        assert_abs_diff_eq!(c.det_cls[1], -15.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.aff[(0, 0)], 42.0, epsilon = 1e-2);
        assert_eq!(c.det_se[0], 0.5);
    }

    #[test]
    fn lone_detection_stays_unselected() {
        let p = problem(&[0.9], &[], &[], &[0.5], &[]);
        for y in [solve_mip(&p).unwrap(), brute_force_oracle(&p).unwrap()] {
            assert_eq!(y.objective, 0.0);
            assert_eq!(y.y_cls_det, vec![false]);
            assert_eq!(y.y_se_det, vec![false]);
        }
    }

    #[test]
    fn single_pair_matched() {
        let p = problem(&[0.95], &[0.9], &[1.5], &[0.5], &[0.5]);
        for y in [solve_mip(&p).unwrap(), brute_force_oracle(&p).unwrap()] {
            assert_abs_diff_eq!(y.objective, 18.0, epsilon = 1e-9);
            assert_eq!(y.matches(), vec![(0, 0)]);
            assert!(y.satisfies_constraints());
        }
    }

    #[test]
    fn vacuous_problem() {
        let p = problem(&[], &[], &[], &[], &[]);
        let y = solve_mip(&p).unwrap();
        assert_eq!(y.objective, 0.0);
        assert!(y.matches().is_empty());
        assert_eq!(brute_force_oracle(&p).unwrap(), y);
    }

    #[test]
    fn certain_objects_start_and_end() {
        let p = problem(&[1.0, 1.0], &[1.0, 1.0], &[0.0; 4], &[1.0, 1.0], &[1.0, 1.0]);
        for y in [solve_mip(&p).unwrap(), brute_force_oracle(&p).unwrap()] {
            assert_eq!(y.y_se_det, vec![true, true]);
            assert_eq!(y.y_se_trk, vec![true, true]);
            assert!(y.matches().is_empty());
            assert_abs_diff_eq!(y.objective, 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn oracle_size_limit() {
        let p = problem(&[1.0; 6], &[], &[], &[0.5; 6], &[]);
        assert_eq!(
            brute_force_oracle(&p),
            Err(AssociationError::TooLarge { rows: 6, cols: 0, max: ORACLE_MAX_SIDE })
        );
        assert!(solve_mip(&p).is_ok());
    }

    #[test]
    fn invalid_inputs_rejected() {
        let mut p = problem(&[1.2], &[], &[], &[0.5], &[]);
        assert!(solve_mip(&p).is_err());
        p.det_cls[0] = 0.9;
        p.weights.se = 0.0;
        assert!(solve_mip(&p).is_err());
        let q = problem(&[0.9], &[0.9], &[f64::NAN], &[0.5], &[0.5]);
        assert!(solve_mip(&q).is_err());
    }

    #[test]
    fn constraint_checker_catches_double_match() {
        let mut y = AssociationResult::empty(1, 2);
        y.y_aff = vec![true, true];
        y.y_cls_det[0] = true;
        y.y_cls_trk = vec![true, true];
        assert!(!y.satisfies_constraints());
    }
}
