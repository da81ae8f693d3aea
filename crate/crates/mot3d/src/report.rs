//! Evaluation summaries as an aligned text table and as JSON.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use mot3d_core::eval::MotReport;
use serde::Serialize;

/// Metrics of one results directory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultSet {
    pub name: String,
    pub sequences: BTreeMap<String, MotReport>,
    pub overall: MotReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub results: Vec<ResultSet>,
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn row(name: &str, seq: &str, r: &MotReport) -> [String; 11] {
    [
        name.to_string(),
        seq.to_string(),
        pct(r.mota),
        pct(r.motp),
        r.fp.to_string(),
        r.fn_.to_string(),
        r.idsw.to_string(),
        r.frag.to_string(),
        pct(r.mt),
        pct(r.pt),
        pct(r.ml),
    ]
}

impl EvalSummary {
    /// One row per sequence and an `OVERALL` row per results set. Results
    /// sets follow each other so associators can be compared line by line.
    pub fn table(&self) -> String {
        const HEADER: [&str; 11] = ["results", "sequence", "MOTA", "MOTP", "FP", "FN", "IDSW", "FRAG", "MT", "PT", "ML"];
        let mut rows: Vec<[String; 11]> = vec![HEADER.map(String::from)];
        for set in &self.results {
            if set.sequences.len() > 1 {
                for (seq, r) in &set.sequences {
                    rows.push(row(&set.name, seq, r));
                }
            }
            rows.push(row(&set.name, "OVERALL", &set.overall));
        }
        let mut widths = [0; 11];
        for r in &rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = String::new();
        for r in &rows {
            let mut line = String::new();
            for (i, (cell, w)) in r.iter().zip(widths).enumerate() {
                if i < 2 {
                    let _ = write!(line, "{cell:<w$}  ");
                } else {
                    let _ = write!(line, "{cell:>w$}  ");
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        let flagged: Vec<&str> = self.results.iter().filter(|s| s.overall.mota_undefined).map(|s| s.name.as_str()).collect();
        if !flagged.is_empty() {
            let _ = writeln!(out, "note: no ground-truth objects for {}; MOTA reported as 100%", flagged.join(", "));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mot3d_core::eval::MotCounts;

    fn report(fp: u64) -> MotReport {
        MotReport::from_counts(MotCounts { gt_objects: 10, tp: 10, fp, iou_sum: 9.0, ..Default::default() })
    }

    #[test]
    fn table_columns_align() {
        let mut sequences = BTreeMap::new();
        sequences.insert("0000".to_string(), report(0));
        sequences.insert("0001".to_string(), report(3));
        let overall = MotReport::aggregate(sequences.values());
        let summary = EvalSummary {
            results: vec![
                ResultSet { name: "mip".into(), sequences: sequences.clone(), overall },
                ResultSet { name: "hungarian".into(), sequences, overall },
            ],
        };
        let table = summary.table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 7);
        assert!(lines[0].starts_with("results"));
        let mota_end = lines[0].find("MOTA").unwrap() + 4;
        for l in &lines[1..] {
            assert_eq!(&l[mota_end - 1..mota_end], "%", "{l}");
        }
        let json: serde_json::Value = serde_json::from_str(&summary.to_json()).unwrap();
        assert_eq!(json["results"][0]["sequences"]["0001"]["fp"], 3);
    }
}
