use super::{Ei2Model, Task};
use crate::corpus::{Conversation, Modality, Utterance};
use crate::error::{data_err, shape_err, Result};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Cross-task attention intermediates of one utterance.
#[derive(Debug, Clone, Copy)]
pub struct InteractionTrace<'g> {
    /// Emotion queries over intent features.
    pub f_ei: Var<'g>,
    pub f_ie: Var<'g>,
    pub f_eie: Var<'g>,
    pub f_iei: Var<'g>,
    pub g_star_e: Var<'g>,
    pub g_star_i: Var<'g>,
}

/// Every intermediate of one utterance's forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardTrace<'g> {
    pub f_star_e: Var<'g>,
    pub f_star_i: Var<'g>,
    /// `None` when history is disabled.
    pub f_h: Option<Var<'g>>,
    pub f_e: Var<'g>,
    pub f_i: Var<'g>,
    /// `None` when interaction is disabled.
    pub interaction: Option<InteractionTrace<'g>>,
    pub g_e: Var<'g>,
    pub g_i: Var<'g>,
    pub logits_e: Var<'g>,
    pub logits_i: Var<'g>,
}

impl<'g> ForwardTrace<'g> {
    pub fn logits(&self, task: Task) -> Var<'g> {
        match task {
            Task::Emotion => self.logits_e,
            Task::Intent => self.logits_i,
        }
    }
}

/// Mean over frames of one modality's features.
fn pooled(features: &Tensor) -> Vec<f64> {
    let (rows, cols) = (features.shape()[0], features.shape()[1]);
    let mut out = vec![0.0; cols];
    for r in 0..rows {
        for (o, x) in out.iter_mut().zip(features.row(r)) {
            *o += x;
        }
    }
    for o in &mut out {
        *o /= rows as f64;
    }
    out
}

impl Ei2Model {
    fn modality_features<'u>(&self, utt: &'u Utterance, m: Modality) -> Result<&'u Tensor> {
        let t = utt
            .features
            .get(m)
            .ok_or_else(|| data_err!("{}: missing {} features", utt.key(), m.name()))?;
        let dim = self.config.feature_dim(m);
        if t.shape().len() != 2 || t.shape()[1] != dim {
            return Err(shape_err!(
                "{}: {} features must be [frames × {dim}], got {:?}",
                utt.key(),
                m.name(),
                t.shape()
            ));
        }
        Ok(t)
    }

    /// Modality tokens before fusion, `[3 × hidden]` in visual, acoustic,
    /// textual order; disabled modalities are zero rows.
    pub fn modality_tokens<'g>(
        &self,
        g: &'g Graph,
        params: &ParamStore,
        utt: &Utterance,
        task: Task,
    ) -> Result<Var<'g>> {
        let enc = self.encoder(task);
        let hidden = self.config.hidden;
        let mut tokens = Vec::with_capacity(3);
        for m in Modality::ALL {
            let token = if self.config.modality_mask.contains(m) {
                let x = g.constant(self.modality_features(utt, m)?.clone());
                match m {
                    Modality::Textual => enc.textual.encode(g, params, x)?,
                    Modality::Acoustic => enc.acoustic.encode(g, params, x)?,
                    Modality::Visual => enc.visual.encode(g, params, x)?,
                }
            } else {
                g.constant(Tensor::zeros(&[hidden]))
            };
            tokens.push(token);
        }
        g.stack(&tokens)
    }

    /// Task representation of one utterance, `[3 × hidden]`.
    pub fn encode_task_utterance<'g>(
        &self,
        g: &'g Graph,
        params: &ParamStore,
        utt: &Utterance,
        task: Task,
    ) -> Result<Var<'g>> {
        let tokens = self.modality_tokens(g, params, utt, task)?;
        self.encoder(task).fusion.forward(g, params, tokens)
    }

    /// Mean-pooled per-utterance rows of one modality, `[n × dim]`.
    fn history_rows(&self, past: &[&Utterance], m: Modality) -> Result<Tensor> {
        let dim = self.config.feature_dim(m);
        let mut data = Vec::with_capacity(past.len() * dim);
        for u in past {
            data.extend(pooled(self.modality_features(u, m)?));
        }
        Tensor::new(&[past.len(), dim], data)
    }

    /// History vector from the utterances before the current one, `[hidden]`.
    /// An empty history gives an exact zero vector.
    pub fn encode_history<'g>(&self, g: &'g Graph, params: &ParamStore, past: &[&Utterance]) -> Result<Var<'g>> {
        let hidden = self.config.hidden;
        if past.is_empty() {
            return Ok(g.constant(Tensor::zeros(&[hidden])));
        }
        let mut finals = Vec::with_capacity(3);
        for m in Modality::ALL {
            let state = if self.config.modality_mask.contains(m) {
                let rows = g.constant(self.history_rows(past, m)?);
                self.history.gru(m).encode(g, params, rows)?
            } else {
                g.constant(Tensor::zeros(&[hidden]))
            };
            finals.push(state);
        }
        let joined = g.concat(&finals, 0)?;
        self.history.projection.forward(g, params, joined)
    }

    /// History vectors for every position of a conversation; entry `n`
    /// equals `encode_history` over utterances `0..n`.
    pub fn history_for_conversation<'g>(
        &self,
        g: &'g Graph,
        params: &ParamStore,
        conv: &Conversation,
    ) -> Result<Vec<Var<'g>>> {
        let hidden = self.config.hidden;
        let len = conv.len();
        let mut out = vec![g.constant(Tensor::zeros(&[hidden]))];
        if len <= 1 {
            out.truncate(len);
            return Ok(out);
        }
        let past: Vec<&Utterance> = conv.utterances[..len - 1].iter().collect();
        let mut per_modality: Vec<Vec<Var<'g>>> = Vec::with_capacity(3);
        for m in Modality::ALL {
            if self.config.modality_mask.contains(m) {
                let rows = g.constant(self.history_rows(&past, m)?);
                per_modality.push(self.history.gru(m).run_all(g, params, rows)?);
            } else {
                let zero = g.constant(Tensor::zeros(&[hidden]));
                per_modality.push(vec![zero; len - 1]);
            }
        }
        for n in 1..len {
            let finals: Vec<Var<'g>> = per_modality.iter().map(|s| s[n - 1]).collect();
            let joined = g.concat(&finals, 0)?;
            out.push(self.history.projection.forward(g, params, joined)?);
        }
        Ok(out)
    }

    /// Classifier logits from `g = g_star + f` (or `f` alone), mean-pooled
    /// over tokens.
    pub fn classify<'g>(
        &self,
        g: &'g Graph,
        params: &ParamStore,
        g_star: Option<Var<'g>>,
        f: Var<'g>,
        task: Task,
    ) -> Result<(Var<'g>, Var<'g>)> {
        let residual = match g_star {
            Some(gs) => gs.add(f)?,
            None => f,
        };
        let pooled = residual.mean(0)?;
        Ok((residual, self.classifier(task).forward(g, params, pooled)?))
    }

    /// Binary correlation: `branch` queries its own features against the
    /// other task's.
    pub fn binary_correlation<'g>(
        &self,
        g: &'g Graph,
        params: &ParamStore,
        f_gamma: Var<'g>,
        f_beta: Var<'g>,
        branch: Task,
    ) -> Result<Var<'g>> {
        self.branch(branch).binary.forward(g, params, f_gamma, f_beta, f_beta)
    }

    pub fn triple_interaction<'g>(
        &self,
        g: &'g Graph,
        params: &ParamStore,
        f_gamma: Var<'g>,
        f_gb: Var<'g>,
        branch: Task,
    ) -> Result<Var<'g>> {
        self.branch(branch).triple.forward(g, params, f_gamma, f_gb, f_gb)
    }

    /// Everything after the task encoders and history, for one utterance.
    pub fn head<'g>(
        &self,
        g: &'g Graph,
        params: &ParamStore,
        f_star_e: Var<'g>,
        f_star_i: Var<'g>,
        f_h: Option<Var<'g>>,
    ) -> Result<ForwardTrace<'g>> {
        let c = &self.config;
        let f_h = if c.use_history { f_h } else { None };
        let (f_e, f_i) = match f_h {
            Some(h) => (fuse_history(f_star_e, h, true)?, fuse_history(f_star_i, h, true)?),
            None => (f_star_e, f_star_i),
        };
        let interaction = if c.use_interaction {
            let f_ei = self.binary_correlation(g, params, f_e, f_i, Task::Emotion)?;
            let f_ie = self.binary_correlation(g, params, f_i, f_e, Task::Intent)?;
            let f_eie = self.triple_interaction(g, params, f_e, f_ei, Task::Emotion)?;
            let f_iei = self.triple_interaction(g, params, f_i, f_ie, Task::Intent)?;
            Some(InteractionTrace {
                f_ei,
                f_ie,
                f_eie,
                f_iei,
                g_star_e: gate_regulate(f_eie, f_ei, c.use_gate)?,
                g_star_i: gate_regulate(f_iei, f_ie, c.use_gate)?,
            })
        } else {
            None
        };
        let (g_e, logits_e) = self.classify(g, params, interaction.map(|t| t.g_star_e), f_e, Task::Emotion)?;
        let (g_i, logits_i) = self.classify(g, params, interaction.map(|t| t.g_star_i), f_i, Task::Intent)?;
        Ok(ForwardTrace {
            f_star_e,
            f_star_i,
            f_h,
            f_e,
            f_i,
            interaction,
            g_e,
            g_i,
            logits_e,
            logits_i,
        })
    }

    /// Full forward pass for utterance `n` of `conv`. Only utterances
    /// `0..=n` are read.
    pub fn forward<'g>(
        &self,
        g: &'g Graph,
        params: &ParamStore,
        conv: &Conversation,
        n: usize,
    ) -> Result<ForwardTrace<'g>> {
        let utt = conv
            .utterances
            .get(n)
            .ok_or_else(|| shape_err!("utterance index {n} out of range for {} utterances", conv.len()))?;
        let f_star_e = self.encode_task_utterance(g, params, utt, Task::Emotion)?;
        let f_star_i = self.encode_task_utterance(g, params, utt, Task::Intent)?;
        let f_h = if self.config.use_history {
            let past: Vec<&Utterance> = conv.utterances[..n].iter().collect();
            Some(self.encode_history(g, params, &past)?)
        } else {
            None
        };
        self.head(g, params, f_star_e, f_star_i, f_h)
    }

    /// Forward passes for every utterance of `conv`, sharing the history
    /// recurrence. Results equal [`Ei2Model::forward`] at each index
    /// bit for bit.
    pub fn forward_conversation<'g>(
        &self,
        g: &'g Graph,
        params: &ParamStore,
        conv: &Conversation,
    ) -> Result<Vec<ForwardTrace<'g>>> {
        let history = if self.config.use_history {
            Some(self.history_for_conversation(g, params, conv)?)
        } else {
            None
        };
        conv.utterances
            .iter()
            .enumerate()
            .map(|(n, utt)| {
                let f_star_e = self.encode_task_utterance(g, params, utt, Task::Emotion)?;
                let f_star_i = self.encode_task_utterance(g, params, utt, Task::Intent)?;
                self.head(g, params, f_star_e, f_star_i, history.as_ref().map(|h| h[n]))
            })
            .collect()
    }
}

/// `f_star + f_h` on every token, or `f_star` unchanged when history is off.
pub fn fuse_history<'g>(f_star: Var<'g>, f_h: Var<'g>, use_history: bool) -> Result<Var<'g>> {
    if use_history {
        f_star.add(f_h)
    } else {
        Ok(f_star)
    }
}

/// `f_gbg ⊙ σ(f_gbg + f_gb)`, or `f_gbg` unchanged when the gate is off.
pub fn gate_regulate<'g>(f_gbg: Var<'g>, f_gb: Var<'g>, use_gate: bool) -> Result<Var<'g>> {
    if f_gbg.shape() != f_gb.shape() {
        return Err(shape_err!(
            "gate inputs differ in shape: {:?} vs {:?}",
            f_gbg.shape(),
            f_gb.shape()
        ));
    }
    if !use_gate {
        return Ok(f_gbg);
    }
    f_gbg.mul(f_gbg.add(f_gb)?.sigmoid())
}
