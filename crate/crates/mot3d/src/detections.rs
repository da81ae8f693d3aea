//! Detection input files.
//!
//! Two interchangeable encodings, picked by the first non-blank character
//! of the file (`{` selects JSON lines):
//!
//! ```text
//! # frame x y z l w h a score [start_prob] [[e0, e1, ...]]
//! 0 1.5 -2 0.8 4.1 1.7 1.5 0.1 0.97
//! 0 9 3.25 0.8 3.9 1.6 1.5 3.1 0.91 0.4 [0.12, -0.3, 0.05]
//! ```
//!
//! ```text
//! {"frame":0,"box":{"x":1.5,"y":-2.0,"z":0.8,"l":4.1,"w":1.7,"h":1.5,"a":0.1},"score":0.97}
//! ```
//!
//! Blank lines and lines starting with `#` are skipped in the text form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use mot3d_core::{Box3D, Detection, Embedding};
use serde::{Deserialize, Serialize};

use crate::FormatError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame: u32,
    #[serde(rename = "box")]
    pub bbox: Box3D,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl DetectionRecord {
    pub fn from_detection(frame: u32, d: &Detection) -> Self {
        DetectionRecord {
            frame,
            bbox: d.bbox,
            score: d.score,
            start_prob: d.start_prob,
            embedding: d.embedding.as_ref().map(|e| e.0.clone()),
        }
    }

    pub fn to_detection(&self) -> Detection {
        Detection {
            bbox: self.bbox,
            score: self.score,
            embedding: self.embedding.clone().map(Embedding),
            start_prob: self.start_prob,
        }
    }

    fn validate(&self) -> Result<(), String> {
        self.bbox.validate().map_err(|e| e.to_string())?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        if let Some(p) = self.start_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("start probability {p} outside [0, 1]"));
            }
        }
        if let Some(e) = &self.embedding {
            if e.iter().any(|v| !v.is_finite()) {
                return Err("non-finite embedding value".into());
            }
        }
        Ok(())
    }
}

pub type FrameDetections = BTreeMap<u32, Vec<DetectionRecord>>;

fn parse_number(tok: &str, what: &str) -> Result<f64, String> {
    let v: f64 = tok.parse().map_err(|_| format!("invalid {what} `{tok}`"))?;
    if !v.is_finite() {
        return Err(format!("non-finite {what} `{tok}`"));
    }
    Ok(v)
}

fn parse_text_line(line: &str) -> Result<DetectionRecord, String> {
    let (head, embedding) = match line.find('[') {
        Some(open) => {
            let tail = line[open + 1..].trim_end();
            let inner = tail.strip_suffix(']').ok_or("unterminated embedding, expected `]`")?;
            let values = inner
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| parse_number(t, "embedding value"))
                .collect::<Result<Vec<_>, _>>()?;
            (&line[..open], Some(values))
        }
        None => (line, None),
    };
    let toks: Vec<&str> = head.split_whitespace().collect();
    if toks.len() != 9 && toks.len() != 10 {
        return Err(format!("expected 9 or 10 fields before the embedding, found {}", toks.len()));
    }
    let frame: u32 = toks[0].parse().map_err(|_| format!("invalid frame `{}`", toks[0]))?;
    let mut nums = [0.0; 8];
    for (slot, tok) in nums.iter_mut().zip(&toks[1..9]) {
        *slot = parse_number(tok, "number")?;
    }
    let [x, y, z, l, w, h, a, score] = nums;
    let bbox = Box3D::new(x, y, z, l, w, h, a).map_err(|e| e.to_string())?;
    let start_prob = toks.get(9).map(|t| parse_number(t, "start probability")).transpose()?;
    Ok(DetectionRecord { frame, bbox, score, start_prob, embedding })
}

fn parse_json_line(line: &str) -> Result<DetectionRecord, String> {
    let mut rec: DetectionRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
    rec.bbox = Box3D::new(rec.bbox.x, rec.bbox.y, rec.bbox.z, rec.bbox.l, rec.bbox.w, rec.bbox.h, rec.bbox.a)
        .map_err(|e| e.to_string())?;
    Ok(rec)
}

/// Parses detection records, grouped by frame in ascending order with the
/// in-frame order of the input preserved.
pub fn parse_detections(text: &str) -> Result<FrameDetections, FormatError> {
    let json = text.trim_start().starts_with('{');
    let mut frames = FrameDetections::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (!json && line.starts_with('#')) {
            continue;
        }
        let parsed = if json { parse_json_line(line) } else { parse_text_line(line) };
        let rec = parsed
            .and_then(|r| r.validate().map(|_| r))
            .map_err(|message| FormatError::Line { line: i + 1, message })?;
        frames.entry(rec.frame).or_default().push(rec);
    }
    Ok(frames)
}

pub fn read_detections(path: &Path) -> Result<FrameDetections, FormatError> {
    let text = fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_detections(&text).map_err(|e| e.in_file(path))
}

/// Text encoding of one record. Numbers use the shortest representation
/// that parses back to the same value.
pub fn format_text_line(r: &DetectionRecord) -> String {
    let b = &r.bbox;
    let mut s = format!("{} {} {} {} {} {} {} {} {}", r.frame, b.x, b.y, b.z, b.l, b.w, b.h, b.a, r.score);
    if let Some(p) = r.start_prob {
        let _ = write!(s, " {p}");
    }
    if let Some(e) = &r.embedding {
        s.push_str(" [");
        for (i, v) in e.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            let _ = write!(s, "{v}");
        }
        s.push(']');
    }
    s
}

pub fn write_detections<W: Write>(mut out: W, records: &[DetectionRecord]) -> io::Result<()> {
    for r in records {
        writeln!(out, "{}", format_text_line(r))?;
    }
    Ok(())
}

pub fn write_detections_json<W: Write>(mut out: W, records: &[DetectionRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        writeln!(out)?;
    }
    Ok(())
}

pub fn to_frames(records: &FrameDetections) -> BTreeMap<u32, Vec<Detection>> {
    records.iter().map(|(f, rs)| (*f, rs.iter().map(DetectionRecord::to_detection).collect())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_has_no_frames() {
        assert!(parse_detections("").unwrap().is_empty());
        assert!(parse_detections("\n  \n# header\n").unwrap().is_empty());
    }

    #[test]
    fn groups_by_frame_in_order() {
        let text = "1 0 0 0 4 2 1.5 0 0.9\n0 1 0 0 4 2 1.5 0 0.8\n0 2 0 0 4 2 1.5 0 0.7\n";
        let f = parse_detections(text).unwrap();
        assert_eq!(f.keys().copied().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(f[&0].len(), 2);
        assert_eq!(f[&0][0].bbox.x, 1.0);
        assert_eq!(f[&0][1].bbox.x, 2.0);
        assert_eq!(f[&1].len(), 1);
    }

    #[test]
    fn optional_fields() {
        let f = parse_detections("3 0 0 0 4 2 1.5 0 0.9 0.25 [1, -2.5 3]").unwrap();
        let r = &f[&3][0];
        assert_eq!(r.start_prob, Some(0.25));
        assert_eq!(r.embedding.as_deref(), Some(&[1.0, -2.5, 3.0][..]));
        let f = parse_detections("3 0 0 0 4 2 1.5 0 0.9 []").unwrap();
        assert_eq!(f[&3][0].embedding.as_deref(), Some(&[][..]));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse_detections("0 0 0 0 4 2 1.5 0 0.9\n\n0 0 0 NaN 4 2 1.5 0 0.9\n").unwrap_err();
        assert!(matches!(err, FormatError::Line { line: 3, .. }), "{err}");
        let err = parse_detections("0 0 0 0 4 2 1.5 0 1.2").unwrap_err();
        assert!(err.to_string().contains("score"), "{err}");
        let err = parse_detections("0 0 0 0 4 2 1.5 0").unwrap_err();
        assert!(err.to_string().contains("fields"), "{err}");
        let err = parse_detections("0 0 0 0 4 2 1.5 0 0.9 [1, inf]").unwrap_err();
        assert!(err.to_string().contains("non-finite"), "{err}");
        let err = parse_detections("0 0 0 0 -4 2 1.5 0 0.9").unwrap_err();
        assert!(matches!(err, FormatError::Line { line: 1, .. }));
    }

    #[test]
    fn json_lines_detected() {
        let text = r#"
{"frame":2,"box":{"x":1.0,"y":2.0,"z":0.5,"l":4.0,"w":1.8,"h":1.5,"a":0.0},"score":0.9,"embedding":[0.5]}
{"frame":2,"box":{"x":5.0,"y":2.0,"z":0.5,"l":4.0,"w":1.8,"h":1.5,"a":0.0},"score":0.8,"start_prob":0.1}
"#;
        let f = parse_detections(text).unwrap();
        assert_eq!(f[&2].len(), 2);
        assert_eq!(f[&2][0].embedding, Some(vec![0.5]));
        assert_eq!(f[&2][1].start_prob, Some(0.1));
        let err = parse_detections("{\"frame\":0}\n").unwrap_err();
        assert!(matches!(err, FormatError::Line { line: 1, .. }));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let rec = DetectionRecord {
            frame: 7,
            bbox: Box3D::new(0.1 + 0.2, -1e-7, 3.0, 4.25, 1.75, 1.5, -3.0).unwrap(),
            score: 0.123456789,
            start_prob: Some(1.0 / 3.0),
            embedding: Some(vec![1e-300, -2.5, 1e20]),
        };
        let back = parse_detections(&format_text_line(&rec)).unwrap();
        assert_eq!(back[&7][0], rec);
    }
}
