//! Finite-difference audit of every network block and of the full model
//! under the joint focal loss.

use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::loss::{batch_loss, Scored};
use super::TrainConfig;
use crate::corpus::{AnnotationRecord, Conversation, Emotion, Intent, Label, Modality, Utterance, UtteranceFeatures};
use crate::error::Result;
use crate::model::{Ei2Config, ModelState};
use crate::nn::{derive_seed, init_params, LayerParams, LayerSpec};
use crate::tensor::{grad_check, GradCheckOptions, GradCheckReport, Graph, ParamStore, Tensor, Var};

pub const AUDIT_TOLERANCE: f64 = 1e-4;

/// Central-difference step of the full-model check.
pub const MODEL_EPS: f64 = 1e-4;

/// Steps retried for a coordinate whose error exceeds [`RETRY_ABOVE`].
/// Smaller steps step around max-pool and ReLU switches; larger ones lift
/// tiny gradients out of roundoff.
pub const RETRY_EPS: [f64; 5] = [1e-5, 3e-4, 1e-3, 3e-5, 1e-6];
pub const RETRY_ABOVE: f64 = 1e-5;

/// Half-width of the uniform noise added to initial model parameters, so
/// that zero biases do not sit on activation kinks.
pub const MODEL_NOISE: f64 = 0.5;

/// The model the audit differentiates: small enough for every coordinate
/// to be checked.
pub fn audit_model_config() -> Ei2Config {
    Ei2Config {
        hidden: 4,
        heads: 2,
        ffn_dim: 8,
        text_dim: 6,
        audio_dim: 5,
        visual_dim: 4,
        cnn_filters: 2,
        ..Ei2Config::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub target: String,
    pub point: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub eps: f64,
    pub coords_checked: usize,
    pub retried: usize,
}

impl AuditEntry {
    fn new(target: &str, point: usize, r: GradCheckReport) -> Self {
        AuditEntry {
            target: target.to_string(),
            point,
            max_rel_error: r.max_rel_error,
            worst_param: r.worst_param,
            worst_index: r.worst_index,
            analytic: r.analytic,
            numeric: r.numeric,
            eps: r.eps,
            coords_checked: r.coords_checked,
            retried: r.retried,
        }
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error < AUDIT_TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub seed: u64,
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(AuditEntry::passed)
    }

    pub fn worst(&self) -> Option<&AuditEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("target,point,max_rel_error,worst_param,worst_index,analytic,numeric,eps,coords,retried\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{:e},{},{},{:e},{:e},{:e},{},{}",
                e.target,
                e.point,
                e.max_rel_error,
                e.worst_param,
                e.worst_index,
                e.analytic,
                e.numeric,
                e.eps,
                e.coords_checked,
                e.retried
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "gradient audit, seed {}, tolerance {AUDIT_TOLERANCE:e}", self.seed);
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{:<12} point {}  max rel error {:.3e}  ({} coords, {} retried, worst {}[{}])  {}",
                e.target,
                e.point,
                e.max_rel_error,
                e.coords_checked,
                e.retried,
                e.worst_param,
                e.worst_index,
                if e.passed() { "ok" } else { "FAIL" }
            );
        }
        let _ = writeln!(out, "{}", if self.passed() { "PASS" } else { "FAIL" });
        out
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("shape matches")
}

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng, scale: f64) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        store.set(id, uniform(rng, &shape, scale))?;
    }
    Ok(())
}

/// Reduces a block output to a scalar with fixed random weights.
fn probe<'g>(g: &'g Graph, out: Var<'g>, weights: &Tensor) -> Result<Var<'g>> {
    Ok(out.mul(g.constant(weights.clone()))?.sum_all())
}

fn check<F>(store: &mut ParamStore, f: F, eps: f64) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &ParamStore) -> Result<Var<'g>>,
{
    let opts = GradCheckOptions {
        eps,
        retry_eps: RETRY_EPS.to_vec(),
        retry_above: RETRY_ABOVE,
        ..GradCheckOptions::default()
    };
    grad_check(store, f, &opts)
}

fn block_entries(point: usize, seed: u64) -> Result<Vec<AuditEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let eps = GradCheckOptions::default().eps;
    let specs = [
        ("linear", LayerSpec::linear(4, 3), vec![2, 4]),
        ("lstm", LayerSpec::lstm(3, 4), vec![4, 3]),
        ("gru", LayerSpec::gru(3, 4), vec![3, 3]),
        ("textcnn", LayerSpec::textcnn(3, 4, &[1, 2, 3], 3), vec![5, 3]),
        ("attention", LayerSpec::mha(6, 2), vec![3, 6]),
        ("transformer", LayerSpec::transformer_layer(6, 2, 8), vec![3, 6]),
    ];
    for (name, spec, input_shape) in specs {
        let (mut store, params) = init_params(&spec, rng.random())?;
        randomize(&mut store, &mut rng, 0.8)?;
        let x = store.insert("input/x", uniform(&mut rng, &input_shape, 1.0))?;
        let kv = store.insert("input/kv", uniform(&mut rng, &[4, 6], 1.0))?;
        let out_shape = match &params {
            LayerParams::Linear(_) => vec![2, 3],
            LayerParams::Gru(_) => vec![3, 4],
            LayerParams::Lstm(_) | LayerParams::TextCnn(_) => vec![4],
            LayerParams::Mha(_) | LayerParams::TransformerLayer(_) => vec![3, 6],
        };
        let w = uniform(&mut rng, &out_shape, 1.0);
        let report = check(
            &mut store,
            |g, s| {
                let x = g.param(s, x);
                let y = match &params {
                    LayerParams::Linear(l) => l.forward(g, s, x)?,
                    LayerParams::Lstm(l) => l.encode(g, s, x)?,
                    LayerParams::Gru(l) => g.stack(&l.run_all(g, s, x)?)?,
                    LayerParams::TextCnn(l) => l.encode(g, s, x)?,
                    LayerParams::Mha(l) => {
                        let kv = g.param(s, kv);
                        l.forward(g, s, x, kv, kv)?
                    }
                    LayerParams::TransformerLayer(l) => l.forward(g, s, x)?,
                };
                probe(g, y, &w)
            },
            eps,
        )?;
        out.push(AuditEntry::new(name, point, report));
    }
    Ok(out)
}

fn random_conversation(rng: &mut ChaCha8Rng, config: &Ei2Config, len: usize) -> Conversation {
    let utterances = (0..len)
        .map(|u| {
            let mut features = UtteranceFeatures::default();
            for m in Modality::ALL {
                let frames = rng.random_range(1..6);
                features.set(m, Some(uniform(rng, &[frames, config.feature_dim(m)], 1.0)));
            }
            let record = AnnotationRecord {
                subtitle: String::new(),
                dia_no: 0,
                utt_no: u as u32,
                video_name: "audit".into(),
                season: None,
                episode: 0,
                begin_ms: 1000 * u as u64,
                end_ms: 1000 * u as u64 + 500,
                emotion: Emotion::ALL[rng.random_range(0..Emotion::count())],
                intent: Intent::ALL[rng.random_range(0..Intent::count())],
                speaker: (u % 2) as u8,
            };
            Utterance { record, features }
        })
        .collect();
    Conversation { dia_no: 0, utterances }
}

/// The full model on a three-utterance conversation under the default
/// joint focal loss.
pub fn model_entry(point: usize, seed: u64) -> Result<AuditEntry> {
    let config = audit_model_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = ModelState::init(&config, rng.random())?;
    let ids: Vec<_> = state.params.ids().collect();
    for id in ids {
        let mut t = state.params.get(id).clone();
        for x in t.data_mut() {
            *x += rng.random_range(-MODEL_NOISE..MODEL_NOISE);
        }
        state.params.set(id, t)?;
    }
    let conv = random_conversation(&mut rng, &config, 3);
    let model = state.model.clone();
    let cfg = TrainConfig::default();
    let report = check(
        &mut state.params,
        |g, p| {
            let traces = model.forward_conversation(g, p, &conv)?;
            let items: Vec<Scored<'_, '_>> = traces
                .iter()
                .zip(&conv.utterances)
                .map(|(t, u)| Scored {
                    logits_e: t.logits_e,
                    logits_i: t.logits_i,
                    record: &u.record,
                })
                .collect();
            Ok(batch_loss(g, &items, &cfg)?.total)
        },
        MODEL_EPS,
    )?;
    Ok(AuditEntry::new("ei2+focal", point, report))
}

/// Every block and the full model at `points` seeded random points.
pub fn gradient_audit(seed: u64, points: usize) -> Result<AuditReport> {
    let mut entries = Vec::new();
    for p in 0..points {
        let s = derive_seed(seed, p as u64);
        entries.extend(block_entries(p, derive_seed(s, 1))?);
        entries.push(model_entry(p, derive_seed(s, 2))?);
    }
    Ok(AuditReport { seed, entries })
}
