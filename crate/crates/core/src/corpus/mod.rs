//! Corpus data model and on-disk formats.

mod annotations;
mod assemble;
pub mod features;
mod labels;
mod subtitles;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub use annotations::{
    format_timestamp, parse_annotations_csv, parse_timestamp, serialize_annotations_csv, AnnotationRecord, CSV_HEADER,
};
pub use assemble::{
    assemble_conversations, load_corpus, save_corpus, Corpus, FeatureLayout, Split, SplitName, ANNOTATIONS_FILE,
    SPLITS_FILE,
};
pub use labels::{Emotion, Intent, Label};
pub use subtitles::{parse_subtitle_file, SubtitleEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Textual,
    Acoustic,
    Visual,
}

impl Modality {
    /// Token order of the fusion input.
    pub const ALL: [Modality; 3] = [Modality::Visual, Modality::Acoustic, Modality::Textual];

    pub fn letter(self) -> char {
        match self {
            Modality::Textual => 't',
            Modality::Acoustic => 'a',
            Modality::Visual => 'v',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Textual => "textual",
            Modality::Acoustic => "acoustic",
            Modality::Visual => "visual",
        }
    }
}

/// A non-empty subset of the three modalities, written as letters (`t`,
/// `a`, `v`), e.g. `"ta"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModalitySet {
    pub textual: bool,
    pub acoustic: bool,
    pub visual: bool,
}

impl Default for ModalitySet {
    fn default() -> Self {
        Self::all()
    }
}

impl ModalitySet {
    pub fn all() -> Self {
        ModalitySet {
            textual: true,
            acoustic: true,
            visual: true,
        }
    }

    pub fn only(m: Modality) -> Self {
        let mut s = ModalitySet {
            textual: false,
            acoustic: false,
            visual: false,
        };
        s.set(m, true);
        s
    }

    pub fn contains(&self, m: Modality) -> bool {
        match m {
            Modality::Textual => self.textual,
            Modality::Acoustic => self.acoustic,
            Modality::Visual => self.visual,
        }
    }

    pub fn set(&mut self, m: Modality, on: bool) {
        match m {
            Modality::Textual => self.textual = on,
            Modality::Acoustic => self.acoustic = on,
            Modality::Visual => self.visual = on,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.textual || self.acoustic || self.visual)
    }

    pub fn iter(&self) -> impl Iterator<Item = Modality> + '_ {
        [Modality::Textual, Modality::Acoustic, Modality::Visual]
            .into_iter()
            .filter(|m| self.contains(*m))
    }

    /// All seven non-empty subsets, largest first.
    pub fn nonempty_subsets() -> Vec<ModalitySet> {
        ["tav", "ta", "tv", "av", "t", "a", "v"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect()
    }
}

impl std::fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s: String = [Modality::Textual, Modality::Acoustic, Modality::Visual]
            .into_iter()
            .filter(|m| self.contains(*m))
            .map(Modality::letter)
            .collect();
        f.write_str(&s)
    }
}

impl std::str::FromStr for ModalitySet {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        let mut set = ModalitySet {
            textual: false,
            acoustic: false,
            visual: false,
        };
        for c in s.chars().filter(|c| !matches!(c, ',' | ' ' | '+')) {
            let m = match c.to_ascii_lowercase() {
                't' => Modality::Textual,
                'a' => Modality::Acoustic,
                'v' => Modality::Visual,
                _ => {
                    return Err(crate::Error::Usage(format!(
                        "unknown modality '{c}' in \"{s}\" (use letters t, a, v)"
                    )))
                }
            };
            set.set(m, true);
        }
        if set.is_empty() {
            return Err(crate::Error::Usage("modality set must be non-empty".into()));
        }
        Ok(set)
    }
}

impl Serialize for ModalitySet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ModalitySet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Frame- or token-level feature matrices of one utterance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UtteranceFeatures {
    pub textual: Option<Tensor>,
    pub acoustic: Option<Tensor>,
    pub visual: Option<Tensor>,
}

impl UtteranceFeatures {
    pub fn get(&self, m: Modality) -> Option<&Tensor> {
        match m {
            Modality::Textual => self.textual.as_ref(),
            Modality::Acoustic => self.acoustic.as_ref(),
            Modality::Visual => self.visual.as_ref(),
        }
    }

    pub fn set(&mut self, m: Modality, t: Option<Tensor>) {
        match m {
            Modality::Textual => self.textual = t,
            Modality::Acoustic => self.acoustic = t,
            Modality::Visual => self.visual = t,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub record: AnnotationRecord,
    pub features: UtteranceFeatures,
}

impl Utterance {
    pub fn key(&self) -> String {
        format!("dia_{}_utt_{}", self.record.dia_no, self.record.utt_no)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conversation {
    pub dia_no: u32,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }
}
