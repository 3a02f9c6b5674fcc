use serde::Serialize;

use crate::corpus::{Emotion, Intent, Label};
use crate::error::{contract_err, Result};
use crate::model::Task;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn label_names(task: Task) -> Vec<String> {
    match task {
        Task::Emotion => Emotion::ALL.iter().map(|l| l.name().to_string()).collect(),
        Task::Intent => Intent::ALL.iter().map(|l| l.name().to_string()).collect(),
    }
}

/// Classification quality of one task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub task: Task,
    pub labels: Vec<String>,
    /// `confusion[truth][prediction]`.
    pub confusion: Vec<Vec<u64>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
    /// Support-weighted mean of the per-class F1.
    pub waf: f64,
    pub n: usize,
}

impl MetricsReport {
    pub fn from_predictions(task: Task, labels: Vec<String>, truths: &[usize], preds: &[usize]) -> Result<Self> {
        let c = labels.len();
        if truths.len() != preds.len() {
            return Err(contract_err!("{} truths but {} predictions", truths.len(), preds.len()));
        }
        if truths.is_empty() {
            return Err(contract_err!("cannot score an empty prediction set"));
        }
        let mut confusion = vec![vec![0u64; c]; c];
        for (&t, &p) in truths.iter().zip(preds) {
            if t >= c || p >= c {
                return Err(contract_err!("label index outside {c} classes"));
            }
            confusion[t][p] += 1;
        }
        let n = truths.len();
        let support: Vec<u64> = confusion.iter().map(|row| row.iter().sum()).collect();
        let predicted: Vec<u64> = (0..c).map(|k| confusion.iter().map(|row| row[k]).sum()).collect();
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision: Vec<f64> = (0..c).map(|k| ratio(confusion[k][k], predicted[k])).collect();
        let recall: Vec<f64> = (0..c).map(|k| ratio(confusion[k][k], support[k])).collect();
        let f1: Vec<f64> = precision
            .iter()
            .zip(&recall)
            .map(|(&p, &r)| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
            .collect();
        let waf = f1
            .iter()
            .zip(&support)
            .map(|(f, &s)| f * s as f64 / n as f64)
            .sum::<f64>()
            .clamp(0.0, 1.0);
        Ok(MetricsReport {
            task,
            labels,
            confusion,
            precision,
            recall,
            f1,
            support,
            waf,
            n,
        })
    }
}

/// Metrics of both tasks over one split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub emotion: MetricsReport,
    pub intent: MetricsReport,
}

impl Evaluation {
    pub fn get(&self, task: Task) -> &MetricsReport {
        match task {
            Task::Emotion => &self.emotion,
            Task::Intent => &self.intent,
        }
    }

    pub fn waf_sum(&self) -> f64 {
        self.emotion.waf + self.intent.waf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_take_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
        assert_eq!(argmax(&[-1.0]), 0);
    }

    #[test]
    fn hand_case() {
        let names = vec!["a".to_string(), "b".to_string()];
        let m = MetricsReport::from_predictions(Task::Emotion, names, &[0, 0, 1], &[0, 1, 1]).unwrap();
        assert!((m.f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.waf - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.confusion, vec![vec![1, 1], vec![0, 1]]);
    }
}
