//! File formats, run configuration and batch drivers around
//! [`mot3d_core`].

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub mod cli;
pub mod config;
pub mod detections;
pub mod kitti;
pub mod pipeline;
pub mod report;

pub use config::RunConfig;
pub use detections::{read_detections, DetectionRecord};
pub use kitti::{read_kitti, write_kitti_tracking, LabelFilter, LabelRecord};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{}:{line}: {message}", path.display())]
    FileLine { path: PathBuf, line: usize, message: String },
    #[error("duplicate track {id} in frame {frame}")]
    Duplicate { frame: u32, id: u64 },
}

impl FormatError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn in_file(self, path: &Path) -> Self {
        match self {
            FormatError::Line { line, message } => FormatError::FileLine { path: path.to_path_buf(), line, message },
            other => other,
        }
    }
}
