use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::{batch_loss, label_index, Scored, StepLoss};
use super::metrics::{argmax, label_names, Evaluation, MetricsReport};
use super::optim::Adam;
use super::TrainConfig;
use crate::corpus::{Conversation, Corpus, SplitName};
use crate::error::{contract_err, data_err, Result};
use crate::model::{encoder_prefix, Ei2Config, ModelState, Task};
use crate::nn::{derive_seed, Initializer, Linear};
use crate::tensor::{Graph, ParamStore, Precision};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const PRETRAIN_SHUFFLE_STREAM: u64 = 0x5052_4553;
const PRETRAIN_HEAD_STREAM: u64 = 0x5052_4548;

/// Target utterances `start..end` of one conversation. Everything before
/// `start` is context only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub conv: usize,
    pub start: usize,
    pub end: usize,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Shuffles conversations, cuts any conversation longer than `batch_size`
/// into consecutive chunks, and packs chunks greedily into batches of at
/// most `batch_size` target utterances.
pub fn plan_batches(lengths: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Chunk>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    let mut current: Vec<Chunk> = Vec::new();
    let mut filled = 0;
    for conv in order {
        let mut start = 0;
        while start < lengths[conv] {
            let end = (start + batch_size).min(lengths[conv]);
            let chunk = Chunk { conv, start, end };
            if filled + chunk.len() > batch_size {
                batches.push(std::mem::take(&mut current));
                filled = 0;
            }
            filled += chunk.len();
            current.push(chunk);
            start = end;
        }
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_emotion: f64,
    pub loss_intent: f64,
    pub valid_waf_emotion: Option<f64>,
    pub valid_waf_intent: Option<f64>,
}

/// Per-step losses plus one record per completed epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub steps: Vec<StepLoss>,
    pub epochs: Vec<EpochRecord>,
}

impl LossReport {
    /// `epoch,loss_total,loss_e,loss_i` with one row per epoch.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss_total,loss_e,loss_i\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.epoch + 1,
                e.loss_total,
                e.loss_emotion,
                e.loss_intent
            ));
        }
        out
    }
}

/// What the caller wants after an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best validation WAF sum.
    pub state: ModelState,
    pub report: LossReport,
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Encoder parameters only.
    pub encoders: ParamStore,
    pub report: LossReport,
}

fn prefix_conversation(conv: &Conversation, end: usize) -> Conversation {
    Conversation {
        dia_no: conv.dia_no,
        utterances: conv.utterances[..end].to_vec(),
    }
}

struct EpochTotals {
    sums: StepLoss,
    count: usize,
}

impl EpochTotals {
    fn new() -> Self {
        EpochTotals {
            sums: StepLoss::default(),
            count: 0,
        }
    }

    fn add(&mut self, step: StepLoss, n: usize) {
        let w = n as f64;
        self.sums.total += step.total * w;
        self.sums.emotion += step.emotion * w;
        self.sums.intent += step.intent * w;
        self.count += n;
    }

    fn mean(&self) -> StepLoss {
        let n = self.count.max(1) as f64;
        StepLoss {
            total: self.sums.total / n,
            emotion: self.sums.emotion / n,
            intent: self.sums.intent / n,
        }
    }
}

fn check_nonempty(convs: &[&Conversation], what: &str) -> Result<()> {
    if convs.iter().all(|c| c.is_empty()) {
        return Err(data_err!("the {what} split has no utterances"));
    }
    Ok(())
}

/// Trains the task encoders with throwaway classifiers on the pooled fused
/// tokens, without history or interaction.
pub fn pretrain(train: &[&Conversation], model: &Ei2Config, cfg: &TrainConfig) -> Result<PretrainOutcome> {
    cfg.validate()?;
    check_nonempty(train, "train")?;
    let ModelState { model: net, params } = ModelState::init(model, cfg.seed)?;
    let mut store = params;
    let mut init = Initializer::new(derive_seed(cfg.seed, PRETRAIN_HEAD_STREAM));
    let heads = [
        Linear::new(
            &mut store,
            "pretrain/emotion",
            model.hidden,
            model.n_emotions,
            &mut init,
        )?,
        Linear::new(&mut store, "pretrain/intent", model.hidden, model.n_intents, &mut init)?,
    ];
    let mut adam = Adam::new(&store);
    let lengths: Vec<usize> = train.iter().map(|c| c.len()).collect();
    let mut report = LossReport::default();
    for epoch in 0..cfg.epochs_pretrain {
        let lr = cfg.learning_rate * cfg.lr_schedule.factor(epoch, cfg.epochs_pretrain);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ PRETRAIN_SHUFFLE_STREAM, epoch as u64));
        let mut totals = EpochTotals::new();
        for batch in plan_batches(&lengths, cfg.batch_size, &mut rng) {
            let g = Graph::new(cfg.precision);
            let mut items = Vec::new();
            for chunk in &batch {
                for utt in &train[chunk.conv].utterances[chunk.start..chunk.end] {
                    let mut logits = Vec::with_capacity(2);
                    for (task, head) in Task::BOTH.into_iter().zip(&heads) {
                        let tokens = net.encode_task_utterance(&g, &store, utt, task)?;
                        logits.push(head.forward(&g, &store, tokens.mean(0)?)?);
                    }
                    items.push(Scored {
                        logits_e: logits[0],
                        logits_i: logits[1],
                        record: &utt.record,
                    });
                }
            }
            let loss = batch_loss(&g, &items, cfg)?;
            g.backward(loss.total)?;
            let grads = g.param_grads(&store);
            adam.update(&mut store, &grads, lr, cfg.precision)?;
            let step = loss.values();
            totals.add(step, items.len());
            report.steps.push(step);
        }
        let mean = totals.mean();
        report.epochs.push(EpochRecord {
            epoch,
            lr,
            loss_total: mean.total,
            loss_emotion: mean.emotion,
            loss_intent: mean.intent,
            valid_waf_emotion: None,
            valid_waf_intent: None,
        });
    }
    let prefixes = Task::BOTH.map(encoder_prefix);
    let encoders = store.subset(|name| prefixes.iter().any(|p| name.starts_with(p.as_str())));
    Ok(PretrainOutcome { encoders, report })
}

/// Argmax predictions of both tasks over `convs`.
pub fn evaluate_conversations(state: &ModelState, convs: &[&Conversation], precision: Precision) -> Result<Evaluation> {
    check_nonempty(convs, "evaluation")?;
    let mut truths = [Vec::new(), Vec::new()];
    let mut preds = [Vec::new(), Vec::new()];
    for conv in convs {
        let g = Graph::new(precision);
        let traces = state.model.forward_conversation(&g, &state.params, conv)?;
        for (trace, utt) in traces.iter().zip(&conv.utterances) {
            for (slot, task) in Task::BOTH.into_iter().enumerate() {
                truths[slot].push(label_index(&utt.record, task));
                preds[slot].push(argmax(trace.logits(task).value().data()));
            }
        }
    }
    let report = |slot: usize, task: Task| {
        let mut names = label_names(task);
        names.truncate(state.config().classes(task));
        MetricsReport::from_predictions(task, names, &truths[slot], &preds[slot])
            .map_err(|e| data_err!("{} labels do not fit the model: {e}", task.name()))
    };
    Ok(Evaluation {
        emotion: report(0, Task::Emotion)?,
        intent: report(1, Task::Intent)?,
    })
}

pub fn evaluate(state: &ModelState, corpus: &Corpus, split: SplitName, precision: Precision) -> Result<Evaluation> {
    evaluate_conversations(state, &corpus.subset(split)?, precision)
}

/// Joint training with best-validation checkpoint selection. When `valid`
/// is empty the final epoch is kept. `observer` runs after every epoch with
/// the current (not the selected) parameters and may stop training early.
pub fn train_with<F>(
    train: &[&Conversation],
    valid: &[&Conversation],
    model: &Ei2Config,
    cfg: &TrainConfig,
    pretrained: Option<&ParamStore>,
    mut observer: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochRecord, &ModelState) -> Control,
{
    cfg.validate()?;
    check_nonempty(train, "train")?;
    let has_valid = valid.iter().any(|c| !c.is_empty());
    let mut state = ModelState::init(model, cfg.seed)?;
    if let Some(encoders) = pretrained {
        for task in Task::BOTH {
            if state.params.copy_prefix_from(encoders, &encoder_prefix(task))? == 0 {
                return Err(contract_err!("pre-trained parameters hold no {} encoder", task.name()));
            }
        }
    }
    let mut adam = Adam::new(&state.params);
    let lengths: Vec<usize> = train.iter().map(|c| c.len()).collect();
    let mut report = LossReport::default();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 0..cfg.epochs_train {
        let lr = cfg.learning_rate * cfg.lr_schedule.factor(epoch, cfg.epochs_train);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ SHUFFLE_STREAM, epoch as u64));
        let mut totals = EpochTotals::new();
        for batch in plan_batches(&lengths, cfg.batch_size, &mut rng) {
            let g = Graph::new(cfg.precision);
            let mut items: Vec<Scored<'_, '_>> = Vec::new();
            for chunk in &batch {
                let conv = train[chunk.conv];
                let traces = if chunk.end == conv.len() {
                    state.model.forward_conversation(&g, &state.params, conv)?
                } else {
                    state
                        .model
                        .forward_conversation(&g, &state.params, &prefix_conversation(conv, chunk.end))?
                };
                let targets = &conv.utterances[chunk.start..chunk.end];
                for (trace, utt) in traces[chunk.start..chunk.end].iter().zip(targets) {
                    items.push(Scored {
                        logits_e: trace.logits_e,
                        logits_i: trace.logits_i,
                        record: &utt.record,
                    });
                }
            }
            let loss = batch_loss(&g, &items, cfg)?;
            g.backward(loss.total)?;
            let grads = g.param_grads(&state.params);
            adam.update(&mut state.params, &grads, lr, cfg.precision)?;
            let step = loss.values();
            totals.add(step, items.len());
            report.steps.push(step);
        }
        let mean = totals.mean();
        let valid_eval = if has_valid {
            Some(evaluate_conversations(&state, valid, cfg.precision)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            lr,
            loss_total: mean.total,
            loss_emotion: mean.emotion,
            loss_intent: mean.intent,
            valid_waf_emotion: valid_eval.as_ref().map(|e| e.emotion.waf),
            valid_waf_intent: valid_eval.as_ref().map(|e| e.intent.waf),
        };
        report.epochs.push(record);
        let score = valid_eval.as_ref().map_or(f64::INFINITY, Evaluation::waf_sum);
        let improved = match &best {
            None => true,
            Some((s, _, _)) => score > *s || !has_valid,
        };
        if improved {
            best = Some((score, epoch, state.params.clone()));
        }
        if observer(&record, &state) == Control::Stop {
            break;
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    state.params = params;
    Ok(TrainOutcome {
        state,
        report,
        best_epoch,
    })
}

pub fn train(
    corpus: &Corpus,
    model: &Ei2Config,
    cfg: &TrainConfig,
    pretrained: Option<&ParamStore>,
) -> Result<TrainOutcome> {
    let train = corpus.subset(SplitName::Train)?;
    let valid = corpus.subset(SplitName::Valid)?;
    train_with(&train, &valid, model, cfg, pretrained, |_, _| Control::Continue)
}

/// One seeded run: optional pre-training, training, test evaluation.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub pretrain: Option<LossReport>,
    pub outcome: TrainOutcome,
    pub test: Evaluation,
}

/// `cfg.n_runs` runs with consecutive seeds starting at `cfg.seed`.
pub fn run_experiment(corpus: &Corpus, model: &Ei2Config, cfg: &TrainConfig) -> Result<Vec<RunResult>> {
    run_experiment_from(corpus, model, cfg, None)
}

/// Like [`run_experiment`], but every run starts from the given encoder
/// parameters instead of pre-training its own.
pub fn run_experiment_from(
    corpus: &Corpus,
    model: &Ei2Config,
    cfg: &TrainConfig,
    encoders: Option<&ParamStore>,
) -> Result<Vec<RunResult>> {
    cfg.validate()?;
    let train_set = corpus.subset(SplitName::Train)?;
    let valid = corpus.subset(SplitName::Valid)?;
    let test = corpus.subset(SplitName::Test)?;
    let mut runs = Vec::with_capacity(cfg.n_runs);
    for r in 0..cfg.n_runs {
        let run_cfg = TrainConfig {
            seed: cfg.run_seed(r),
            ..cfg.clone()
        };
        let pre = if run_cfg.pretrained_init && encoders.is_none() {
            Some(pretrain(&train_set, model, &run_cfg)?)
        } else {
            None
        };
        let init = encoders.or(pre.as_ref().map(|p| &p.encoders));
        let outcome = train_with(&train_set, &valid, model, &run_cfg, init, |_, _| Control::Continue)?;
        let test_eval = evaluate_conversations(&outcome.state, &test, run_cfg.precision)?;
        runs.push(RunResult {
            seed: run_cfg.seed,
            pretrain: pre.map(|p| p.report),
            outcome,
            test: test_eval,
        });
    }
    Ok(runs)
}
