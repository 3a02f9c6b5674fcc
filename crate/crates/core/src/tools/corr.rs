use std::fmt::Write;

use serde::Serialize;

use crate::corpus::{AnnotationRecord, Emotion, Intent, Label};

/// Emotion x intent co-occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorrelationMatrix {
    /// `counts[emotion][intent]`.
    pub counts: Vec<Vec<u64>>,
}

const GLYPHS: [char; 10] = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];

pub fn correlation_matrix(records: &[AnnotationRecord]) -> CorrelationMatrix {
    let mut counts = vec![vec![0u64; Intent::count()]; Emotion::count()];
    for r in records {
        counts[r.emotion.index()][r.intent.index()] += 1;
    }
    CorrelationMatrix { counts }
}

impl CorrelationMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Header row of intent names, then one row per emotion.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("emotion");
        for i in Intent::ALL {
            out.push(',');
            out.push_str(i.name());
        }
        out.push('\n');
        for (e, row) in Emotion::ALL.iter().zip(&self.counts) {
            out.push_str(e.name());
            for c in row {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }

    /// Counts with a glyph per cell scaled to the largest count.
    pub fn heatmap(&self) -> String {
        let max = self.counts.iter().flatten().copied().max().unwrap_or(0);
        let ew = Emotion::ALL.iter().map(|e| e.name().len()).max().unwrap_or(0);
        let cw = Intent::ALL.iter().map(|i| i.name().len()).max().unwrap_or(0).max(6);
        let mut out = format!("{:ew$}", "");
        for i in Intent::ALL {
            let _ = write!(out, " {:>cw$}", i.name());
        }
        out.push('\n');
        for (e, row) in Emotion::ALL.iter().zip(&self.counts) {
            let _ = write!(out, "{:<ew$}", e.name());
            for &c in row {
                let level = if max == 0 {
                    0
                } else {
                    ((c as f64 / max as f64) * (GLYPHS.len() - 1) as f64).round() as usize
                };
                let glyph = GLYPHS[level];
                let cell = format!("{c} {glyph}");
                let _ = write!(out, " {cell:>cw$}");
            }
            out.push('\n');
        }
        out
    }
}
