//! KITTI tracking label files, used both for ground truth and for tracker
//! output.
//!
//! One object per line:
//!
//! ```text
//! frame track_id type truncated occluded alpha left top right bottom h w l x y z rotation_y [score]
//! ```
//!
//! Image-plane fields are not produced by a LiDAR-space tracker. The writer
//! fills them with placeholders: truncated and occluded `-1`, alpha `-10`,
//! 2D box `-1 -1 -1 -1`. `x y z rotation_y` hold the box center and heading
//! in the tracker's own frame, with no camera transform applied. Real
//! numbers are written with six decimals.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use mot3d_core::eval::Labeled;
use mot3d_core::{Box3D, FrameResult};

use crate::FormatError;

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub frame: u32,
    pub track_id: u64,
    pub object_type: String,
    pub truncated: f64,
    pub occluded: i32,
    pub bbox: Box3D,
    pub score: Option<f64>,
}

/// Ground-truth filtering applied while parsing. `DontCare` rows and rows
/// with track id `-1` are always dropped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelFilter {
    /// Object types to keep; empty keeps all.
    pub classes: Vec<String>,
    pub max_truncated: Option<f64>,
    pub max_occluded: Option<i32>,
}

impl LabelFilter {
    fn keeps(&self, r: &LabelRecord) -> bool {
        (self.classes.is_empty() || self.classes.iter().any(|c| c == &r.object_type))
            && self.max_truncated.is_none_or(|m| r.truncated <= m)
            && self.max_occluded.is_none_or(|m| r.occluded <= m)
    }
}

fn number(tok: &str, what: &str) -> Result<f64, String> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(format!("non-finite {what} `{tok}`")),
        Err(_) => Err(format!("invalid {what} `{tok}`")),
    }
}

fn parse_line(line: &str) -> Result<Option<LabelRecord>, String> {
    let t: Vec<&str> = line.split_whitespace().collect();
    if t.len() != 17 && t.len() != 18 {
        return Err(format!("expected 17 or 18 fields, found {}", t.len()));
    }
    let frame: u32 = t[0].parse().map_err(|_| format!("invalid frame `{}`", t[0]))?;
    let track_id: i64 = t[1].parse().map_err(|_| format!("invalid track id `{}`", t[1]))?;
    let object_type = t[2];
    if track_id < 0 || object_type == "DontCare" {
        return Ok(None);
    }
    let truncated = number(t[3], "truncation")?;
    let occluded: i32 = t[4].parse().map_err(|_| format!("invalid occlusion `{}`", t[4]))?;
    // alpha and the 2D box are only checked for being numbers
    for tok in &t[5..10] {
        number(tok, "image-plane field")?;
    }
    let mut v = [0.0; 7];
    for (slot, tok) in v.iter_mut().zip(&t[10..17]) {
        *slot = number(tok, "box field")?;
    }
    let [h, w, l, x, y, z, ry] = v;
    let bbox = Box3D::new(x, y, z, l, w, h, ry).map_err(|e| e.to_string())?;
    let score = t.get(17).map(|s| number(s, "score")).transpose()?;
    Ok(Some(LabelRecord { frame, track_id: track_id as u64, object_type: object_type.to_string(), truncated, occluded, bbox, score }))
}

pub fn parse_kitti(text: &str, filter: &LabelFilter) -> Result<Vec<LabelRecord>, FormatError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok(Some(r)) if filter.keeps(&r) => out.push(r),
            Ok(_) => {}
            Err(message) => return Err(FormatError::Line { line: i + 1, message }),
        }
    }
    Ok(out)
}

pub fn read_kitti(path: &Path, filter: &LabelFilter) -> Result<Vec<LabelRecord>, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_kitti(&text, filter).map_err(|e| e.in_file(path))
}

pub fn format_line(r: &LabelRecord) -> String {
    let b = &r.bbox;
    let mut s = format!(
        "{} {} {} {} {} -10.000000 -1.000000 -1.000000 -1.000000 -1.000000 {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
        r.frame, r.track_id, r.object_type, r.truncated, r.occluded, b.h, b.w, b.l, b.x, b.y, b.z, b.a
    );
    if let Some(score) = r.score {
        s.push_str(&format!(" {score:.6}"));
    }
    s
}

/// Writes label records, rejecting a repeated `(frame, track_id)`.
pub fn write_labels<W: Write>(mut out: W, records: &[LabelRecord]) -> Result<(), FormatError> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert((r.frame, r.track_id)) {
            return Err(FormatError::Duplicate { frame: r.frame, id: r.track_id });
        }
    }
    let io_err = |e: io::Error| FormatError::Io { path: "<output>".into(), source: e };
    for r in records {
        writeln!(out, "{}", format_line(r)).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Tracker output as label records with placeholder image-plane fields.
pub fn results_to_records(results: &[FrameResult], object_type: &str) -> Vec<LabelRecord> {
    results
        .iter()
        .flat_map(|fr| {
            fr.tracks.iter().map(move |t| LabelRecord {
                frame: fr.frame,
                track_id: t.id,
                object_type: object_type.to_string(),
                truncated: -1.0,
                occluded: -1,
                bbox: t.bbox,
                score: Some(t.confidence),
            })
        })
        .collect()
}

pub fn write_kitti_tracking<W: Write>(out: W, results: &[FrameResult], object_type: &str) -> Result<(), FormatError> {
    write_labels(out, &results_to_records(results, object_type))
}

pub fn to_labeled(records: &[LabelRecord]) -> BTreeMap<u32, Vec<Labeled>> {
    let mut frames: BTreeMap<u32, Vec<Labeled>> = BTreeMap::new();
    for r in records {
        frames.entry(r.frame).or_default().push(Labeled { id: r.track_id, bbox: r.bbox });
    }
    frames
}
