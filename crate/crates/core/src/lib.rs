//! Online 3D multi-object tracking.
//!
//! Detections are scored against Kalman-predicted tracks with a fused
//! appearance and 3D-DIoU affinity, associated by an exact binary program
//! that weighs detection confidence, affinity and start/end evidence, and
//! managed through a hit/miss track lifecycle. Evaluation (CLEAR MOT) and a
//! deterministic scenario generator are included for verification.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;

pub mod affinity;
pub mod association;
pub mod detection;
pub mod eval;
pub mod geometry;
pub mod motion;
pub mod simgen;
pub mod tracker;

pub use affinity::{AffinityConfig, AffinityMatrix, AffinityTerms, AffinityWeights};
pub use association::{AssociationProblem, AssociationResult, AssociationWeights};
pub use detection::{Detection, Embedding};
pub use geometry::Box3D;
pub use motion::{KalmanConfig, KalmanState};
pub use tracker::{Associator, FrameResult, Track, TrackConfidence, TrackOutput, Tracker, TrackerConfig};
