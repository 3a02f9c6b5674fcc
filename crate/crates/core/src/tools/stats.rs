use std::collections::BTreeSet;
use std::fmt::Write;

use serde::Serialize;

use crate::corpus::{Conversation, Modality, ModalitySet};

/// Corpus summary statistics. Statistics whose inputs are absent are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    /// Modalities with features for every utterance.
    pub modalities: Option<ModalitySet>,
    pub conversations: usize,
    pub utterances: usize,
    pub duration_hours: f64,
    pub avg_words_per_utterance: Option<f64>,
    pub avg_duration_per_utterance_s: Option<f64>,
    pub avg_utterances_per_conversation: Option<f64>,
    pub avg_emotions_per_conversation: Option<f64>,
    pub avg_intents_per_conversation: Option<f64>,
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30ff      // kana
        | 0x3400..=0x4dbf    // CJK extension A
        | 0x4e00..=0x9fff    // CJK unified
        | 0xac00..=0xd7af    // hangul
        | 0xf900..=0xfaff
        | 0x20000..=0x2fa1f)
}

/// Whitespace tokens, except that a token holding CJK characters counts
/// each of its non-punctuation characters.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace()
        .map(|tok| {
            if tok.chars().any(is_cjk) {
                tok.chars().filter(|c| c.is_alphanumeric()).count()
            } else {
                1
            }
        })
        .sum()
}

pub fn dataset_stats(conversations: &[Conversation]) -> DatasetStats {
    let utts: Vec<_> = conversations.iter().flat_map(|c| &c.utterances).collect();
    let n = utts.len();
    let per_utt = |total: f64| if n == 0 { None } else { Some(total / n as f64) };
    let n_conv = conversations.len();
    let per_conv = |total: f64| {
        if n_conv == 0 {
            None
        } else {
            Some(total / n_conv as f64)
        }
    };
    let modalities = if n == 0 {
        None
    } else {
        let mut set = ModalitySet::all();
        for m in Modality::ALL {
            if utts.iter().any(|u| u.features.get(m).is_none()) {
                set.set(m, false);
            }
        }
        (!set.is_empty()).then_some(set)
    };
    let total_ms: u64 = utts.iter().map(|u| u.record.duration_ms()).sum();
    let texts: Vec<&str> = utts.iter().map(|u| u.record.subtitle.as_str()).collect();
    let avg_words = if texts.iter().all(|t| t.trim().is_empty()) {
        None
    } else {
        per_utt(texts.iter().map(|t| word_count(t)).sum::<usize>() as f64)
    };
    let distinct = |f: &dyn Fn(&Conversation) -> usize| per_conv(conversations.iter().map(f).sum::<usize>() as f64);
    DatasetStats {
        modalities,
        conversations: n_conv,
        utterances: n,
        duration_hours: total_ms as f64 / 3_600_000.0,
        avg_words_per_utterance: avg_words,
        avg_duration_per_utterance_s: per_utt(total_ms as f64 / 1000.0),
        avg_utterances_per_conversation: per_conv(n as f64),
        avg_emotions_per_conversation: distinct(&|c| {
            c.utterances
                .iter()
                .map(|u| u.record.emotion)
                .collect::<BTreeSet<_>>()
                .len()
        }),
        avg_intents_per_conversation: distinct(&|c| {
            c.utterances
                .iter()
                .map(|u| u.record.intent)
                .collect::<BTreeSet<_>>()
                .len()
        }),
    }
}

impl DatasetStats {
    /// The nine statistics as `(name, value)`; absent values render as `-`.
    pub fn rows(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
        let modalities = self.modalities.map_or_else(
            || "-".to_string(),
            |s| {
                format!(
                    "({})",
                    s.iter().map(|m| m.letter().to_string()).collect::<Vec<_>>().join(", ")
                )
            },
        );
        vec![
            ("Modalities", modalities),
            ("Conversations", self.conversations.to_string()),
            ("Utterances", self.utterances.to_string()),
            ("Duration (hours)", format!("{:.2}", self.duration_hours)),
            ("Avg. words per utterance", opt(self.avg_words_per_utterance)),
            (
                "Avg. duration per utterance (s)",
                opt(self.avg_duration_per_utterance_s),
            ),
            (
                "Avg. utterances per conversation",
                opt(self.avg_utterances_per_conversation),
            ),
            (
                "Avg. emotions per conversation",
                opt(self.avg_emotions_per_conversation),
            ),
            ("Avg. intents per conversation", opt(self.avg_intents_per_conversation)),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("statistic,value\n");
        for (k, v) in self.rows() {
            let _ = writeln!(out, "{k},\"{v}\"");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let rows = self.rows();
        let w = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<w$}  {v:>10}");
        }
        out
    }
}
