use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::split::{split_corpus, MIN_CONVERSATIONS};
use crate::corpus::{
    AnnotationRecord, Conversation, Corpus, Emotion, Intent, Label, Modality, Utterance, UtteranceFeatures,
};
use crate::error::{contract_err, Result};
use crate::nn::derive_seed;
use crate::tensor::Tensor;

const WORDS: [&str; 24] = [
    "well", "I", "you", "think", "really", "we", "know", "it", "that", "never", "maybe", "so", "what", "just", "right",
    "okay", "come", "on", "here", "there", "again", "now", "sure", "please",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_conversations: usize,
    /// Inclusive range of utterances per conversation.
    pub utterances: (usize, usize),
    pub emotion_marginal: Vec<f64>,
    /// Row `e` is the intent distribution given emotion `e`.
    pub intent_given_emotion: Vec<Vec<f64>>,
    pub text_dim: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    /// Inclusive frame-count ranges.
    pub text_frames: (usize, usize),
    pub audio_frames: (usize, usize),
    pub visual_frames: (usize, usize),
    /// Standard deviation of prototype entries.
    pub prototype_scale: f64,
    /// Standard deviation of per-frame Gaussian noise.
    pub noise: f64,
    /// Intent halves of every feature vector carry noise only.
    pub zero_intent_prototypes: bool,
    /// Probability of repeating the previous utterance's emotion.
    pub stickiness: f64,
    /// Split ratios for `splits.csv`; `None` writes no split.
    pub split_ratios: Option<[f64; 3]>,
    pub seed: u64,
}

/// Primary intent of each emotion in the planted tables.
pub const PRIMARY_INTENT: [Intent; 7] = [
    Intent::Wishing,
    Intent::Questioning,
    Intent::Sympathizing,
    Intent::Suggesting,
    Intent::Acknowledging,
    Intent::Consoling,
    Intent::Neutral,
];

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_conversations: 64,
            utterances: (6, 10),
            emotion_marginal: vec![0.15, 0.10, 0.12, 0.08, 0.12, 0.08, 0.35],
            intent_given_emotion: SynthConfig::sharp_table(),
            text_dim: 768,
            audio_dim: 512,
            visual_dim: 342,
            text_frames: (4, 12),
            audio_frames: (6, 16),
            visual_frames: (3, 8),
            prototype_scale: 1.0,
            noise: 0.5,
            zero_intent_prototypes: false,
            stickiness: 0.0,
            split_ratios: Some([7.0, 1.0, 2.0]),
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Each emotion's primary intent with probability 0.8, a neutral (or,
    /// for neutral emotion, agreeing) intent otherwise.
    pub fn sharp_table() -> Vec<Vec<f64>> {
        PRIMARY_INTENT
            .iter()
            .map(|&p| {
                let mut row = vec![0.0; Intent::count()];
                row[p.index()] = 0.8;
                let other = if p == Intent::Neutral {
                    Intent::Agreeing
                } else {
                    Intent::Neutral
                };
                row[other.index()] = 0.2;
                row
            })
            .collect()
    }

    /// Intent fully determined by emotion.
    pub fn deterministic_table() -> Vec<Vec<f64>> {
        PRIMARY_INTENT
            .iter()
            .map(|&p| {
                let mut row = vec![0.0; Intent::count()];
                row[p.index()] = 1.0;
                row
            })
            .collect()
    }

    pub fn feature_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Textual => self.text_dim,
            Modality::Acoustic => self.audio_dim,
            Modality::Visual => self.visual_dim,
        }
    }

    fn frames(&self, m: Modality) -> (usize, usize) {
        match m {
            Modality::Textual => self.text_frames,
            Modality::Acoustic => self.audio_frames,
            Modality::Visual => self.visual_frames,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let normalized = |v: &[f64]| v.iter().all(|&p| p >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        if self.emotion_marginal.len() != Emotion::count() || !normalized(&self.emotion_marginal) {
            return Err(contract_err!(
                "emotion marginal must hold {} non-negative probabilities summing to 1",
                Emotion::count()
            ));
        }
        if self.intent_given_emotion.len() != Emotion::count() {
            return Err(contract_err!("intent table needs {} rows", Emotion::count()));
        }
        for (e, row) in self.intent_given_emotion.iter().enumerate() {
            if row.len() != Intent::count() || !normalized(row) {
                return Err(contract_err!(
                    "intent table row {} must hold {} non-negative probabilities summing to 1",
                    Emotion::ALL[e].name(),
                    Intent::count()
                ));
            }
        }
        if !(0.0..1.0).contains(&self.stickiness) {
            return Err(contract_err!("stickiness must lie in [0, 1), got {}", self.stickiness));
        }
        if self.n_conversations == 0 {
            return Err(contract_err!("n_conversations must be positive"));
        }
        let ranges = [
            ("utterances", self.utterances),
            ("text_frames", self.text_frames),
            ("audio_frames", self.audio_frames),
            ("visual_frames", self.visual_frames),
        ];
        for (name, (lo, hi)) in ranges {
            if lo == 0 || lo > hi {
                return Err(contract_err!(
                    "{name} range {lo}..={hi} must be non-empty and start at 1 or more"
                ));
            }
        }
        for m in Modality::ALL {
            if self.feature_dim(m) == 0 {
                return Err(contract_err!("{} feature dimension must be positive", m.name()));
            }
        }
        if !(self.noise >= 0.0 && self.prototype_scale >= 0.0) {
            return Err(contract_err!("noise and prototype scale must be non-negative"));
        }
        if let Some(r) = self.split_ratios {
            if self.n_conversations < MIN_CONVERSATIONS {
                return Err(contract_err!(
                    "a split needs at least {MIN_CONVERSATIONS} conversations, configured {}",
                    self.n_conversations
                ));
            }
            if r.iter().any(|x| !(*x >= 0.0)) || r.iter().sum::<f64>() <= 0.0 {
                return Err(contract_err!("split ratios must be non-negative with a positive sum"));
            }
        }
        Ok(())
    }

    /// Configured joint probability of each (emotion, intent) pair.
    pub fn joint(&self) -> Vec<Vec<f64>> {
        self.emotion_marginal
            .iter()
            .zip(&self.intent_given_emotion)
            .map(|(p, row)| row.iter().map(|q| p * q).collect())
            .collect()
    }
}

/// Class prototypes: the emotion half and the intent half of each
/// modality's feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    /// `[modality][emotion]`, each of length `dim - dim / 2`.
    pub emotion: Vec<Vec<Vec<f64>>>,
    /// `[modality][intent]`, each of length `dim / 2`.
    pub intent: Vec<Vec<Vec<f64>>>,
}

fn modality_slot(m: Modality) -> usize {
    match m {
        Modality::Textual => 0,
        Modality::Acoustic => 1,
        Modality::Visual => 2,
    }
}

/// Feature files store f32; generating f32-representable values keeps a
/// saved corpus identical to the in-memory one.
fn as_f32(x: f64) -> f64 {
    x as f32 as f64
}

impl Prototypes {
    fn sample(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, cfg.prototype_scale).expect("validated scale");
        let mut emotion = Vec::new();
        let mut intent = Vec::new();
        for m in [Modality::Textual, Modality::Acoustic, Modality::Visual] {
            let d = cfg.feature_dim(m);
            let (de, di) = (d - d / 2, d / 2);
            emotion.push(
                (0..Emotion::count())
                    .map(|_| (0..de).map(|_| as_f32(normal.sample(rng))).collect())
                    .collect(),
            );
            intent.push(
                (0..Intent::count())
                    .map(|_| {
                        let v: Vec<f64> = (0..di).map(|_| as_f32(normal.sample(rng))).collect();
                        if cfg.zero_intent_prototypes {
                            vec![0.0; di]
                        } else {
                            v
                        }
                    })
                    .collect(),
            );
        }
        Prototypes { emotion, intent }
    }

    /// Noise-free feature row of one class pair.
    pub fn row(&self, m: Modality, e: Emotion, i: Intent) -> Vec<f64> {
        let k = modality_slot(m);
        let mut v = self.emotion[k][e.index()].clone();
        v.extend_from_slice(&self.intent[k][i.index()]);
        v
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub corpus: Corpus,
    pub prototypes: Prototypes,
}

const PROTOTYPE_STREAM: u64 = 1;
const LABEL_STREAM: u64 = 2;
const FEATURE_STREAM: u64 = 3;
const TEXT_STREAM: u64 = 4;
const SPLIT_STREAM: u64 = 5;

/// Generates a labelled multimodal corpus with a planted emotion-intent
/// structure. Labels, features, text and the split draw from separate
/// seeded streams.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let stream = |k: u64| ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, k));
    let prototypes = Prototypes::sample(cfg, &mut stream(PROTOTYPE_STREAM));
    let mut label_rng = stream(LABEL_STREAM);
    let mut feature_rng = stream(FEATURE_STREAM);
    let mut text_rng = stream(TEXT_STREAM);
    let marginal = WeightedIndex::new(&cfg.emotion_marginal).map_err(|e| contract_err!("emotion marginal: {e}"))?;
    let conditionals: Vec<WeightedIndex<f64>> = cfg
        .intent_given_emotion
        .iter()
        .map(|row| WeightedIndex::new(row).map_err(|e| contract_err!("intent table: {e}")))
        .collect::<Result<_>>()?;
    let noise = Normal::new(0.0, cfg.noise).expect("validated noise");

    let mut conversations = Vec::with_capacity(cfg.n_conversations);
    for c in 0..cfg.n_conversations {
        let dia_no = c as u32;
        let len = label_rng.random_range(cfg.utterances.0..=cfg.utterances.1);
        let mut clock = 1000 + text_rng.random_range(0..60_000u64);
        let mut prev: Option<Emotion> = None;
        let mut utterances = Vec::with_capacity(len);
        for u in 0..len {
            let emotion = match prev {
                Some(p) if label_rng.random::<f64>() < cfg.stickiness => p,
                _ => Emotion::ALL[marginal.sample(&mut label_rng)],
            };
            let intent = Intent::ALL[conditionals[emotion.index()].sample(&mut label_rng)];
            prev = Some(emotion);

            let mut features = UtteranceFeatures::default();
            for m in [Modality::Textual, Modality::Acoustic, Modality::Visual] {
                let (lo, hi) = cfg.frames(m);
                let frames = feature_rng.random_range(lo..=hi);
                let base = prototypes.row(m, emotion, intent);
                let mut data = Vec::with_capacity(frames * base.len());
                for _ in 0..frames {
                    if cfg.noise == 0.0 {
                        data.extend_from_slice(&base);
                    } else {
                        data.extend(base.iter().map(|b| as_f32(b + noise.sample(&mut feature_rng))));
                    }
                }
                features.set(m, Some(Tensor::new(&[frames, base.len()], data)?));
            }

            let n_words = text_rng.random_range(3..=12);
            let words: Vec<&str> = (0..n_words)
                .map(|_| WORDS[text_rng.random_range(0..WORDS.len())])
                .collect();
            let duration = text_rng.random_range(800..=4000u64);
            let begin_ms = clock;
            clock += duration + text_rng.random_range(100..=1500u64);
            utterances.push(Utterance {
                record: AnnotationRecord {
                    subtitle: words.join(" "),
                    dia_no,
                    utt_no: u as u32,
                    video_name: "Synthetic".to_string(),
                    season: Some(1),
                    episode: 1 + dia_no / 20,
                    begin_ms,
                    end_ms: begin_ms + duration,
                    emotion,
                    intent,
                    speaker: text_rng.random_range(0..2),
                },
                features,
            });
        }
        conversations.push(Conversation { dia_no, utterances });
    }
    let mut corpus = Corpus {
        conversations,
        split: None,
    };
    if let Some(ratios) = cfg.split_ratios {
        let seed = derive_seed(cfg.seed, SPLIT_STREAM);
        corpus.split = Some(split_corpus(&corpus.records(), ratios, seed, 0.0)?.split);
    }
    Ok(SynthOutput { corpus, prototypes })
}

/// Empirical joint distribution of (emotion, intent) labels.
pub fn empirical_joint(records: &[AnnotationRecord]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; Intent::count()]; Emotion::count()];
    if records.is_empty() {
        return out;
    }
    let w = 1.0 / records.len() as f64;
    for r in records {
        out[r.emotion.index()][r.intent.index()] += w;
    }
    out
}

pub fn l1_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .sum()
}

/// Independence test between consecutive emotions within conversations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionTest {
    /// `counts[previous][current]`.
    pub counts: Vec<Vec<u64>>,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-square on the transition table, over rows and columns with
/// non-zero totals. Returns `None` when fewer than two rows or columns
/// remain.
pub fn transition_test(conversations: &[Conversation]) -> Option<TransitionTest> {
    let k = Emotion::count();
    let mut counts = vec![vec![0u64; k]; k];
    for conv in conversations {
        for pair in conv.utterances.windows(2) {
            counts[pair[0].record.emotion.index()][pair[1].record.emotion.index()] += 1;
        }
    }
    let rows: Vec<usize> = (0..k).filter(|&r| counts[r].iter().sum::<u64>() > 0).collect();
    let cols: Vec<usize> = (0..k)
        .filter(|&c| counts.iter().map(|row| row[c]).sum::<u64>() > 0)
        .collect();
    if rows.len() < 2 || cols.len() < 2 {
        return None;
    }
    let total: f64 = counts.iter().flatten().sum::<u64>() as f64;
    let mut statistic = 0.0;
    for &r in &rows {
        let rt: f64 = counts[r].iter().sum::<u64>() as f64;
        for &c in &cols {
            let ct: f64 = counts.iter().map(|row| row[c]).sum::<u64>() as f64;
            let expected = rt * ct / total;
            let diff = counts[r][c] as f64 - expected;
            statistic += diff * diff / expected;
        }
    }
    let dof = (rows.len() - 1) * (cols.len() - 1);
    let p_value = ChiSquared::new(dof as f64)
        .map(|d| 1.0 - d.cdf(statistic))
        .unwrap_or(f64::NAN);
    Some(TransitionTest {
        counts,
        statistic,
        dof,
        p_value,
    })
}
