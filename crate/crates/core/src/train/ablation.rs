use std::fmt::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use super::fit::run_experiment;
use super::metrics::Evaluation;
use super::report::{csv_header, csv_row};
use super::{TaskMode, TrainConfig};
use crate::corpus::{Corpus, ModalitySet};
use crate::model::{Ei2Config, Task};

/// Published full-scale results (language, emotion WAF, intent WAF). They
/// need the full feature release and are echoed for orientation only.
pub const REFERENCE_RESULTS: [(&str, f64, f64); 2] = [("English", 42.09, 45.53), ("Mandarin", 55.08, 61.63)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationGroup {
    Component,
    Task,
    Modality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    pub name: String,
    pub group: AblationGroup,
    pub model: Ei2Config,
    pub train: TrainConfig,
}

fn modality_label(set: ModalitySet) -> String {
    set.iter()
        .map(|m| m.letter().to_ascii_uppercase().to_string())
        .collect::<Vec<_>>()
        .join("+")
}

/// The full model, five component ablations, two single-task modes and all
/// seven non-empty modality subsets.
pub fn ablation_configs(model: &Ei2Config, train: &TrainConfig) -> Vec<AblationConfig> {
    let entry = |name: &str, group, m: Ei2Config, t: TrainConfig| AblationConfig {
        name: name.to_string(),
        group,
        model: m,
        train: t,
    };
    let base_m = || model.clone();
    let base_t = || train.clone();
    let mut out = vec![
        entry("full", AblationGroup::Component, base_m(), base_t()),
        entry(
            "w/o History",
            AblationGroup::Component,
            Ei2Config {
                use_history: false,
                ..base_m()
            },
            base_t(),
        ),
        entry(
            "w/o Interaction",
            AblationGroup::Component,
            Ei2Config {
                use_interaction: false,
                ..base_m()
            },
            base_t(),
        ),
        entry(
            "w/o Gating",
            AblationGroup::Component,
            Ei2Config {
                use_gate: false,
                ..base_m()
            },
            base_t(),
        ),
        entry(
            "w/o FL",
            AblationGroup::Component,
            base_m(),
            TrainConfig {
                use_focal: false,
                ..base_t()
            },
        ),
        entry(
            "w/o Pre-training",
            AblationGroup::Component,
            base_m(),
            TrainConfig {
                pretrained_init: false,
                ..base_t()
            },
        ),
        entry(
            "emotion only",
            AblationGroup::Task,
            base_m(),
            TrainConfig {
                task_mode: TaskMode::EmotionOnly,
                ..base_t()
            },
        ),
        entry(
            "intent only",
            AblationGroup::Task,
            base_m(),
            TrainConfig {
                task_mode: TaskMode::IntentOnly,
                ..base_t()
            },
        ),
    ];
    let mut subsets = ModalitySet::nonempty_subsets();
    subsets.sort_by_key(|s| (s.iter().count(), s.to_string()));
    for set in subsets {
        out.push(entry(
            &format!("modality {}", modality_label(set)),
            AblationGroup::Modality,
            Ei2Config {
                modality_mask: set,
                ..base_m()
            },
            base_t(),
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunScore {
    pub seed: u64,
    pub test: Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub group: AblationGroup,
    pub task_mode: TaskMode,
    /// Per-seed test results, or the error that stopped this configuration.
    pub result: Result<Vec<RunScore>, String>,
}

impl AblationRow {
    /// Mean test WAF over runs; `None` for a task this row does not train
    /// or when the configuration failed.
    pub fn mean_waf(&self, task: Task) -> Option<f64> {
        if !self.task_mode.includes(task) {
            return None;
        }
        let runs = self.result.as_ref().ok()?;
        if runs.is_empty() {
            return None;
        }
        Some(runs.iter().map(|r| r.test.get(task).waf).sum::<f64>() / runs.len() as f64)
    }

    fn mean_f1(&self, task: Task) -> Option<(Vec<String>, Vec<f64>)> {
        let runs = self.result.as_ref().ok()?;
        let first = runs.first()?.test.get(task);
        let mut f1 = vec![0.0; first.f1.len()];
        for r in runs {
            for (a, b) in f1.iter_mut().zip(&r.test.get(task).f1) {
                *a += b / runs.len() as f64;
            }
        }
        Some((first.labels.clone(), f1))
    }
}

/// Held-out intent WAF of the full model against the w/o-Interaction
/// ablation, seed by seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InteractionBenefit {
    /// `(seed, full, without interaction)`.
    pub per_seed: Vec<(u64, f64, f64)>,
    pub wins: usize,
}

impl InteractionBenefit {
    /// True when the full model wins in at least two thirds of the seeds.
    pub fn holds(&self) -> bool {
        3 * self.wins >= 2 * self.per_seed.len() && !self.per_seed.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub interaction_benefit: Option<InteractionBenefit>,
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v))
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Mean test WAF and per-class F1 of every trained task of every
    /// configuration that completed.
    pub fn to_csv(&self) -> String {
        let mut out = csv_header();
        for row in &self.rows {
            for task in Task::BOTH {
                if let (Some(waf), Some((labels, f1))) = (row.mean_waf(task), row.mean_f1(task)) {
                    out.push_str(&csv_row(&row.name, task, waf, &labels, &f1));
                }
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Published full-scale reference (not reproducible at desk scale):");
        for (lang, e, i) in REFERENCE_RESULTS {
            let _ = writeln!(out, "  {lang:<9} Emo WAF {e:.2}  Int WAF {i:.2}");
        }
        out.push('\n');
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(13).max(13);
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>8}  runs",
            "configuration", "Emo WAF", "Int WAF"
        );
        let mut group = None;
        for row in &self.rows {
            if group.is_some() && group != Some(row.group) {
                out.push('\n');
            }
            group = Some(row.group);
            match &row.result {
                Ok(runs) => {
                    let _ = writeln!(
                        out,
                        "{:<width$}  {:>8}  {:>8}  {}",
                        row.name,
                        pct(row.mean_waf(Task::Emotion)),
                        pct(row.mean_waf(Task::Intent)),
                        runs.len()
                    );
                }
                Err(e) => {
                    let _ = writeln!(out, "{:<width$}  failed: {e}", row.name);
                }
            }
        }
        if let Some(b) = &self.interaction_benefit {
            out.push('\n');
            let _ = writeln!(
                out,
                "Interaction benefit (held-out intent WAF, full vs w/o Interaction):"
            );
            for (seed, full, cut) in &b.per_seed {
                let mark = if full > cut { "+" } else { "-" };
                let _ = writeln!(
                    out,
                    "  seed {seed:<6} {:>7.2}  {:>7.2}  {mark}",
                    100.0 * full,
                    100.0 * cut
                );
            }
            let _ = writeln!(
                out,
                "  full model ahead in {} of {} seeds: {}",
                b.wins,
                b.per_seed.len(),
                if b.holds() { "PASS" } else { "FAIL" }
            );
        }
        out
    }
}

fn interaction_benefit(rows: &[AblationRow]) -> Option<InteractionBenefit> {
    let full = rows.iter().find(|r| r.name == "full")?.result.as_ref().ok()?;
    let cut = rows
        .iter()
        .find(|r| r.name == "w/o Interaction")?
        .result
        .as_ref()
        .ok()?;
    let per_seed: Vec<(u64, f64, f64)> = full
        .iter()
        .zip(cut)
        .map(|(a, b)| (a.seed, a.test.intent.waf, b.test.intent.waf))
        .collect();
    let wins = per_seed.iter().filter(|(_, a, b)| a > b).count();
    Some(InteractionBenefit { per_seed, wins })
}

fn run_one(corpus: &Corpus, cfg: &AblationConfig) -> Result<Vec<RunScore>, String> {
    run_experiment(corpus, &cfg.model, &cfg.train)
        .map(|runs| {
            runs.into_iter()
                .map(|r| RunScore {
                    seed: r.seed,
                    test: r.test,
                })
                .collect()
        })
        .map_err(|e| e.to_string())
}

/// Runs every configuration of [`ablation_configs`] on up to `jobs`
/// threads. A configuration identical to an earlier one reuses its result;
/// a failing configuration keeps its error and the others still run.
pub fn ablation_suite(corpus: &Corpus, model: &Ei2Config, train: &TrainConfig, jobs: usize) -> AblationReport {
    let configs = ablation_configs(model, train);
    let canonical: Vec<usize> = configs
        .iter()
        .enumerate()
        .map(|(i, c)| {
            configs[..i]
                .iter()
                .position(|p| p.model == c.model && p.train == c.train)
                .unwrap_or(i)
        })
        .collect();
    let todo: Vec<usize> = (0..configs.len()).filter(|&i| canonical[i] == i).collect();
    let results: Vec<Mutex<Option<Result<Vec<RunScore>, String>>>> =
        (0..configs.len()).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let k = next.fetch_add(1, Ordering::Relaxed);
        let Some(&i) = todo.get(k) else { break };
        let r = run_one(corpus, &configs[i]);
        *results[i].lock().expect("result slot") = Some(r);
    };
    let jobs = jobs.clamp(1, todo.len().max(1));
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(&worker);
            }
        });
    }
    let computed: Vec<Option<Result<Vec<RunScore>, String>>> = results
        .into_iter()
        .map(|m| m.into_inner().expect("result slot"))
        .collect();
    let rows: Vec<AblationRow> = configs
        .iter()
        .enumerate()
        .map(|(i, c)| AblationRow {
            name: c.name.clone(),
            group: c.group,
            task_mode: c.train.task_mode,
            result: computed[canonical[i]]
                .clone()
                .expect("every canonical configuration ran"),
        })
        .collect();
    let interaction_benefit = interaction_benefit(&rows);
    AblationReport {
        rows,
        interaction_benefit,
    }
}
