use std::fmt;

use serde::{Deserialize, Serialize};

/// A closed label vocabulary with a fixed class order.
pub trait Label: Copy + Eq + fmt::Debug + 'static {
    const ALL: &'static [Self];
    const KIND: &'static str;

    fn name(self) -> &'static str;

    fn index(self) -> usize {
        Self::ALL.iter().position(|&l| l == self).expect("label in ALL")
    }

    fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Case-insensitive, whitespace-trimmed lookup.
    fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        Self::ALL.iter().copied().find(|l| l.name().eq_ignore_ascii_case(s))
    }

    fn count() -> usize {
        Self::ALL.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Happy,
    Surprise,
    Sad,
    Disgust,
    Anger,
    Fear,
    Neutral,
}

impl Label for Emotion {
    const ALL: &'static [Self] = &[
        Emotion::Happy,
        Emotion::Surprise,
        Emotion::Sad,
        Emotion::Disgust,
        Emotion::Anger,
        Emotion::Fear,
        Emotion::Neutral,
    ];
    const KIND: &'static str = "emotion";

    fn name(self) -> &'static str {
        match self {
            Emotion::Happy => "happy",
            Emotion::Surprise => "surprise",
            Emotion::Sad => "sad",
            Emotion::Disgust => "disgust",
            Emotion::Anger => "anger",
            Emotion::Fear => "fear",
            Emotion::Neutral => "neutral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Questioning,
    Agreeing,
    Acknowledging,
    Sympathizing,
    Encouraging,
    Consoling,
    Suggesting,
    Wishing,
    Neutral,
}

impl Label for Intent {
    const ALL: &'static [Self] = &[
        Intent::Questioning,
        Intent::Agreeing,
        Intent::Acknowledging,
        Intent::Sympathizing,
        Intent::Encouraging,
        Intent::Consoling,
        Intent::Suggesting,
        Intent::Wishing,
        Intent::Neutral,
    ];
    const KIND: &'static str = "intent";

    fn name(self) -> &'static str {
        match self {
            Intent::Questioning => "questioning",
            Intent::Agreeing => "agreeing",
            Intent::Acknowledging => "acknowledging",
            Intent::Sympathizing => "sympathizing",
            Intent::Encouraging => "encouraging",
            Intent::Consoling => "consoling",
            Intent::Suggesting => "suggesting",
            Intent::Wishing => "wishing",
            Intent::Neutral => "neutral",
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
