use serde::Serialize;

use crate::corpus::{Emotion, Intent, Label};
use crate::error::{data_err, Result};

/// Outcome of voting over three annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Vote<L> {
    Final(L),
    /// All three differ; an expert label is needed.
    NoMajority,
}

/// A label adopted by at least two of three annotators, or `NoMajority`.
pub fn majority_vote<L: Label>(labels: [L; 3]) -> Vote<L> {
    let [a, b, c] = labels;
    if a == b || a == c {
        Vote::Final(a)
    } else if b == c {
        Vote::Final(b)
    } else {
        Vote::NoMajority
    }
}

/// The final label of a triple: the majority if there is one, else the
/// expert's label if present.
pub fn resolve<L: Label>(labels: [L; 3], expert: Option<L>) -> Option<L> {
    match majority_vote(labels) {
        Vote::Final(l) => Some(l),
        Vote::NoMajority => expert,
    }
}

/// One utterance's three annotations, still as raw strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AnnotationTriple {
    pub dia_no: u32,
    pub utt_no: u32,
    pub labels: [String; 3],
    pub expert: Option<String>,
}

/// Label vocabulary of a triples file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Vocabulary {
    Emotion,
    Intent,
}

impl Vocabulary {
    pub fn names(self) -> Vec<&'static str> {
        match self {
            Vocabulary::Emotion => Emotion::ALL.iter().map(|l| l.name()).collect(),
            Vocabulary::Intent => Intent::ALL.iter().map(|l| l.name()).collect(),
        }
    }

    /// Class index of `s`, case-insensitive.
    pub fn index(self, s: &str) -> Option<usize> {
        match self {
            Vocabulary::Emotion => Emotion::parse(s).map(Label::index),
            Vocabulary::Intent => Intent::parse(s).map(Label::index),
        }
    }

    /// The vocabulary every label of `triples` belongs to, emotion first.
    pub fn detect(triples: &[AnnotationTriple]) -> Result<Self> {
        let all = |v: Vocabulary| {
            triples
                .iter()
                .flat_map(|t| t.labels.iter().chain(t.expert.iter()))
                .all(|l| v.index(l).is_some())
        };
        if all(Vocabulary::Emotion) {
            Ok(Vocabulary::Emotion)
        } else if all(Vocabulary::Intent) {
            Ok(Vocabulary::Intent)
        } else {
            let bad = triples
                .iter()
                .flat_map(|t| t.labels.iter())
                .find(|l| Vocabulary::Emotion.index(l).is_none() && Vocabulary::Intent.index(l).is_none());
            Err(match bad {
                Some(l) => data_err!("label \"{l}\" is neither an emotion nor an intent"),
                None => data_err!("triples mix emotion and intent labels"),
            })
        }
    }
}

/// Parses `dia_no,utt_no,annotator_1,annotator_2,annotator_3[,expert]`
/// with a header row.
pub fn parse_triples_csv(bytes: &[u8]) -> Result<Vec<AnnotationTriple>> {
    let bytes = bytes.strip_prefix(b"\xef\xbb\xbf").unwrap_or(bytes);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        if row.len() < 5 || row.len() > 6 {
            return Err(data_err!("row {line}: expected 5 or 6 fields, found {}", row.len()));
        }
        let num = |k: usize, what: &str| -> Result<u32> {
            row[k]
                .parse()
                .map_err(|_| data_err!("row {line}: {what} \"{}\" is not a non-negative integer", &row[k]))
        };
        let expert = row.get(5).filter(|s| !s.is_empty()).map(str::to_string);
        out.push(AnnotationTriple {
            dia_no: num(0, "dia_no")?,
            utt_no: num(1, "utt_no")?,
            labels: [row[2].to_string(), row[3].to_string(), row[4].to_string()],
            expert,
        });
    }
    Ok(out)
}

/// Class indices of a triple under `vocab`.
pub fn triple_indices(t: &AnnotationTriple, vocab: Vocabulary) -> Result<[usize; 3]> {
    let mut out = [0; 3];
    for (slot, l) in out.iter_mut().zip(&t.labels) {
        *slot = vocab.index(l).ok_or_else(|| {
            data_err!(
                "dia_{}_utt_{}: \"{l}\" is not a valid {} label",
                t.dia_no,
                t.utt_no,
                match vocab {
                    Vocabulary::Emotion => "emotion",
                    Vocabulary::Intent => "intent",
                }
            )
        })?;
    }
    Ok(out)
}

/// Per-utterance voting result of a triples file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VoteOutcome {
    pub dia_no: u32,
    pub utt_no: u32,
    /// `None` when no majority exists and no expert label was supplied.
    pub label: Option<String>,
    pub by_expert: bool,
}

/// Applies voting to every triple. Indices compare by class, so label case
/// never matters.
pub fn vote_triples(triples: &[AnnotationTriple], vocab: Vocabulary) -> Result<Vec<VoteOutcome>> {
    let names = vocab.names();
    triples
        .iter()
        .map(|t| {
            let idx = triple_indices(t, vocab)?;
            let [a, b, c] = idx;
            let majority = if a == b || a == c {
                Some(a)
            } else if b == c {
                Some(b)
            } else {
                None
            };
            let (label, by_expert) = match majority {
                Some(k) => (Some(names[k].to_string()), false),
                None => match &t.expert {
                    Some(e) => {
                        let k = vocab.index(e).ok_or_else(|| {
                            data_err!("dia_{}_utt_{}: invalid expert label \"{e}\"", t.dia_no, t.utt_no)
                        })?;
                        (Some(names[k].to_string()), true)
                    }
                    None => (None, false),
                },
            };
            Ok(VoteOutcome {
                dia_no: t.dia_no,
                utt_no: t.utt_no,
                label,
                by_expert,
            })
        })
        .collect()
}
