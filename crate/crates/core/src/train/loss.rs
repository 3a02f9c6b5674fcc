use super::{TaskMode, TrainConfig};
use crate::corpus::{AnnotationRecord, Label};
use crate::error::{contract_err, data_err, Result};
use crate::model::Task;
use crate::tensor::{Graph, Tensor, Var};

/// `-(1 - p_t)^gamma * ln p_t` where `p_t` is the softmax probability of
/// `class`. With `gamma == 0` this is exactly cross-entropy.
pub fn focal_loss<'g>(logits: Var<'g>, class: usize, gamma: f64) -> Result<Var<'g>> {
    if !(gamma >= 0.0) {
        return Err(contract_err!("focal gamma must be non-negative, got {gamma}"));
    }
    let n = logits.numel();
    if class >= n {
        return Err(contract_err!("class {class} out of range for {n} logits"));
    }
    let log_p = logits.log_softmax(0)?.index(class)?;
    if gamma == 0.0 {
        return Ok(log_p.neg());
    }
    let weight = log_p.exp().affine(-1.0, 1.0).pow(gamma)?;
    Ok(weight.mul(log_p)?.neg())
}

pub fn cross_entropy(logits: Var<'_>, class: usize) -> Result<Var<'_>> {
    focal_loss(logits, class, 0.0)
}

/// Mean per-task losses of one batch, still on the tape.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss<'g> {
    pub total: Var<'g>,
    pub emotion: Var<'g>,
    pub intent: Var<'g>,
}

/// Scalar losses of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize)]
pub struct StepLoss {
    pub total: f64,
    pub emotion: f64,
    pub intent: f64,
}

impl BatchLoss<'_> {
    pub fn values(&self) -> StepLoss {
        StepLoss {
            total: self.total.item(),
            emotion: self.emotion.item(),
            intent: self.intent.item(),
        }
    }
}

pub fn label_index(record: &AnnotationRecord, task: Task) -> usize {
    match task {
        Task::Emotion => record.emotion.index(),
        Task::Intent => record.intent.index(),
    }
}

/// Emotion and intent logits of one utterance plus its labels.
#[derive(Debug, Clone, Copy)]
pub struct Scored<'g, 'r> {
    pub logits_e: Var<'g>,
    pub logits_i: Var<'g>,
    pub record: &'r AnnotationRecord,
}

impl<'g> Scored<'g, '_> {
    fn logits(&self, task: Task) -> Var<'g> {
        match task {
            Task::Emotion => self.logits_e,
            Task::Intent => self.logits_i,
        }
    }
}

/// Mean over the batch of the per-utterance task losses. A task outside
/// `config.task_mode` contributes a constant zero.
pub fn batch_loss<'g>(g: &'g Graph, items: &[Scored<'g, '_>], config: &TrainConfig) -> Result<BatchLoss<'g>> {
    if items.is_empty() {
        return Err(contract_err!("batch_loss needs a non-empty batch"));
    }
    let gamma = if config.use_focal { config.focal_gamma } else { 0.0 };
    let mut terms = [Vec::new(), Vec::new()];
    for item in items {
        let record = item.record;
        for (slot, task) in Task::BOTH.into_iter().enumerate() {
            let logits = item.logits(task);
            let class = label_index(record, task);
            if class >= logits.numel() {
                return Err(data_err!(
                    "dia_{}_utt_{}: {} label {class} outside the model's {} classes",
                    record.dia_no,
                    record.utt_no,
                    task.name(),
                    logits.numel()
                ));
            }
            if config.task_mode.includes(task) {
                terms[slot].push(focal_loss(logits, class, gamma)?);
            }
        }
    }
    let scale = 1.0 / items.len() as f64;
    let mean = |vars: &[Var<'g>]| -> Result<Var<'g>> {
        if vars.is_empty() {
            return Ok(g.constant(Tensor::scalar(0.0)));
        }
        let summed = g.stack(vars)?.sum_all();
        Ok(summed.scale(scale))
    };
    let emotion = mean(&terms[0])?;
    let intent = mean(&terms[1])?;
    let total = match config.task_mode {
        TaskMode::Joint => emotion.add(intent)?,
        TaskMode::EmotionOnly => emotion,
        TaskMode::IntentOnly => intent,
    };
    Ok(BatchLoss { total, emotion, intent })
}
