//! The emotion-intent interaction network.
//!
//! Per utterance, each task encodes its three modalities into one token each
//! and fuses the `[3 × hidden]` token sequence with a transformer layer. A
//! shared history encoder summarizes all earlier utterances of the
//! conversation and is added to every token. The two task sequences then
//! attend to each other twice (binary correlation, then triple
//! interaction), the result is gated and added back residually, and each
//! task classifies the mean of its tokens.

mod forward;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{Modality, ModalitySet};
use crate::error::{contract_err, Error, Result};
use crate::nn::checkpoint::{self, Dtype};
use crate::nn::{
    derive_seed, Gru, Initializer, LayerSpec, Linear, Lstm, MultiHeadAttention, TextCnn, TransformerLayer,
};
use crate::tensor::ParamStore;

pub use forward::{fuse_history, gate_regulate, ForwardTrace, InteractionTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Emotion,
    Intent,
}

impl Task {
    pub const BOTH: [Task; 2] = [Task::Emotion, Task::Intent];

    pub fn name(self) -> &'static str {
        match self {
            Task::Emotion => "emotion",
            Task::Intent => "intent",
        }
    }

    pub fn other(self) -> Task {
        match self {
            Task::Emotion => Task::Intent,
            Task::Intent => Task::Emotion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ei2Config {
    pub hidden: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub n_emotions: usize,
    pub n_intents: usize,
    pub modality_mask: ModalitySet,
    pub use_history: bool,
    pub use_interaction: bool,
    pub use_gate: bool,
    pub text_dim: usize,
    pub audio_dim: usize,
    pub visual_dim: usize,
    pub cnn_widths: Vec<usize>,
    pub cnn_filters: usize,
}

impl Default for Ei2Config {
    fn default() -> Self {
        Ei2Config {
            hidden: 128,
            heads: 4,
            ffn_dim: 256,
            n_emotions: 7,
            n_intents: 9,
            modality_mask: ModalitySet::all(),
            use_history: true,
            use_interaction: true,
            use_gate: true,
            text_dim: 768,
            audio_dim: 512,
            visual_dim: 342,
            cnn_widths: vec![3, 4, 5],
            cnn_filters: 64,
        }
    }
}

impl Ei2Config {
    pub fn feature_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Textual => self.text_dim,
            Modality::Acoustic => self.audio_dim,
            Modality::Visual => self.visual_dim,
        }
    }

    pub fn classes(&self, task: Task) -> usize {
        match task {
            Task::Emotion => self.n_emotions,
            Task::Intent => self.n_intents,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modality_mask.is_empty() {
            return Err(contract_err!("modality mask must be non-empty"));
        }
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(contract_err!(
                "hidden size {} must be a positive multiple of {} heads",
                self.hidden,
                self.heads
            ));
        }
        if self.n_emotions < 2 || self.n_intents < 2 {
            return Err(contract_err!("each task needs at least two classes"));
        }
        LayerSpec::textcnn(self.text_dim, self.hidden, &self.cnn_widths, self.cnn_filters).validate()?;
        LayerSpec::transformer_layer(self.hidden, self.heads, self.ffn_dim).validate()?;
        if self.audio_dim == 0 || self.visual_dim == 0 {
            return Err(contract_err!("feature dimensions must be positive"));
        }
        Ok(())
    }
}

/// Modality encoders plus the fusion transformer of one task.
#[derive(Debug, Clone)]
pub struct TaskEncoder {
    pub textual: TextCnn,
    pub acoustic: Lstm,
    pub visual: Lstm,
    pub fusion: TransformerLayer,
}

/// One GRU per modality over per-utterance mean-pooled features, then a
/// projection of the concatenated final states.
#[derive(Debug, Clone)]
pub struct HistoryEncoder {
    pub textual: Gru,
    pub acoustic: Gru,
    pub visual: Gru,
    pub projection: Linear,
}

impl HistoryEncoder {
    pub fn gru(&self, m: Modality) -> &Gru {
        match m {
            Modality::Textual => &self.textual,
            Modality::Acoustic => &self.acoustic,
            Modality::Visual => &self.visual,
        }
    }
}

/// Attention maps of one task's interaction branch.
#[derive(Debug, Clone)]
pub struct InteractionBranch {
    pub binary: MultiHeadAttention,
    pub triple: MultiHeadAttention,
}

/// Parameter handles of the whole network.
#[derive(Debug, Clone)]
pub struct Ei2Model {
    pub config: Ei2Config,
    pub emotion_encoder: TaskEncoder,
    pub intent_encoder: TaskEncoder,
    pub history: HistoryEncoder,
    pub emotion_branch: InteractionBranch,
    pub intent_branch: InteractionBranch,
    pub emotion_classifier: Linear,
    pub intent_classifier: Linear,
}

impl Ei2Model {
    pub fn encoder(&self, task: Task) -> &TaskEncoder {
        match task {
            Task::Emotion => &self.emotion_encoder,
            Task::Intent => &self.intent_encoder,
        }
    }

    pub fn branch(&self, task: Task) -> &InteractionBranch {
        match task {
            Task::Emotion => &self.emotion_branch,
            Task::Intent => &self.intent_branch,
        }
    }

    pub fn classifier(&self, task: Task) -> &Linear {
        match task {
            Task::Emotion => &self.emotion_classifier,
            Task::Intent => &self.intent_classifier,
        }
    }
}

/// Path prefixes of the parameters that belong to one task's side of the
/// network (encoder, interaction branch, classifier).
pub fn task_prefixes(task: Task) -> [String; 3] {
    let t = task.name();
    [
        format!("{t}_encoder/"),
        format!("interaction/{t}/"),
        format!("classifier/{t}/"),
    ]
}

pub fn encoder_prefix(task: Task) -> String {
    format!("{}_encoder/", task.name())
}

/// A network plus its parameter values.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub model: Ei2Model,
    pub params: ParamStore,
}

struct Builder {
    seed: u64,
    ordinal: u64,
}

impl Builder {
    /// A fresh weight stream per layer so one layer's shape never shifts
    /// another's draws.
    fn next(&mut self) -> Initializer {
        self.ordinal += 1;
        Initializer::new(derive_seed(self.seed, self.ordinal))
    }

    fn task_encoder(&mut self, store: &mut ParamStore, prefix: &str, c: &Ei2Config) -> Result<TaskEncoder> {
        let cnn_spec = LayerSpec::textcnn(c.text_dim, c.hidden, &c.cnn_widths, c.cnn_filters);
        let textual = TextCnn::new(store, &format!("{prefix}/textual"), &cnn_spec, &mut self.next())?;
        let acoustic = Lstm::new(
            store,
            &format!("{prefix}/acoustic"),
            c.audio_dim,
            c.hidden,
            &mut self.next(),
        )?;
        let visual = Lstm::new(
            store,
            &format!("{prefix}/visual"),
            c.visual_dim,
            c.hidden,
            &mut self.next(),
        )?;
        let fusion = TransformerLayer::new(
            store,
            &format!("{prefix}/fusion"),
            c.hidden,
            c.heads,
            c.ffn_dim,
            &mut self.next(),
        )?;
        Ok(TaskEncoder {
            textual,
            acoustic,
            visual,
            fusion,
        })
    }

    fn branch(&mut self, store: &mut ParamStore, prefix: &str, c: &Ei2Config) -> Result<InteractionBranch> {
        Ok(InteractionBranch {
            binary: MultiHeadAttention::new(store, &format!("{prefix}/binary"), c.hidden, c.heads, &mut self.next())?,
            triple: MultiHeadAttention::new(store, &format!("{prefix}/triple"), c.hidden, c.heads, &mut self.next())?,
        })
    }
}

impl ModelState {
    pub fn init(config: &Ei2Config, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config;
        let mut params = ParamStore::new();
        let mut b = Builder { seed, ordinal: 0 };
        let store = &mut params;
        let emotion_encoder = b.task_encoder(store, "emotion_encoder", c)?;
        let intent_encoder = b.task_encoder(store, "intent_encoder", c)?;
        let history = HistoryEncoder {
            textual: Gru::new(store, "history/textual", c.text_dim, c.hidden, &mut b.next())?,
            acoustic: Gru::new(store, "history/acoustic", c.audio_dim, c.hidden, &mut b.next())?,
            visual: Gru::new(store, "history/visual", c.visual_dim, c.hidden, &mut b.next())?,
            projection: Linear::new(store, "history/projection", 3 * c.hidden, c.hidden, &mut b.next())?,
        };
        let emotion_branch = b.branch(store, "interaction/emotion", c)?;
        let intent_branch = b.branch(store, "interaction/intent", c)?;
        let emotion_classifier = Linear::new(store, "classifier/emotion", c.hidden, c.n_emotions, &mut b.next())?;
        let intent_classifier = Linear::new(store, "classifier/intent", c.hidden, c.n_intents, &mut b.next())?;
        Ok(ModelState {
            model: Ei2Model {
                config: c.clone(),
                emotion_encoder,
                intent_encoder,
                history,
                emotion_branch,
                intent_branch,
                emotion_classifier,
                intent_classifier,
            },
            params,
        })
    }

    pub fn config(&self) -> &Ei2Config {
        &self.model.config
    }

    /// Writes the parameters and a JSON sidecar holding the config.
    pub fn save(&self, path: &Path, dtype: Dtype) -> Result<()> {
        checkpoint::save(&self.params, dtype, path)?;
        let sidecar = sidecar_path(path);
        let json = serde_json::to_string_pretty(self.config())?;
        fs::write(&sidecar, json + "\n").map_err(|e| Error::io(&sidecar, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sidecar = sidecar_path(path);
        let json = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let config: Ei2Config = serde_json::from_str(&json)?;
        let mut state = ModelState::init(&config, 0)?;
        let stored = checkpoint::load(path)?;
        checkpoint::restore(&mut state.params, &stored)?;
        Ok(state)
    }
}

pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}
