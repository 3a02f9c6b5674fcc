use std::fmt::Write;

use super::metrics::{label_names, Evaluation, MetricsReport};
use crate::model::Task;

/// Column order of per-class F1 in CSV reports: emotion classes, then
/// intent classes, with the shared `neutral` class once at the end.
fn f1_columns() -> Vec<String> {
    let mut cols: Vec<String> = label_names(Task::Emotion)
        .into_iter()
        .filter(|l| l != "neutral")
        .collect();
    cols.extend(label_names(Task::Intent));
    cols
}

pub(crate) fn csv_header() -> String {
    let mut h = String::from("configuration,task,waf");
    for c in f1_columns() {
        h.push_str(",f1_");
        h.push_str(&c);
    }
    h.push('\n');
    h
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One CSV row; `f1` follows `labels`. Classes absent from the task leave
/// their column empty.
pub(crate) fn csv_row(config: &str, task: Task, waf: f64, labels: &[String], f1: &[f64]) -> String {
    let mut row = format!("{},{},{waf}", csv_field(config), task.name());
    for col in f1_columns() {
        row.push(',');
        if let Some(k) = labels.iter().position(|l| *l == col) {
            let _ = write!(row, "{}", f1[k]);
        }
    }
    row.push('\n');
    row
}

/// `configuration,task,waf,f1_<class>...` with one row per task.
pub fn metrics_csv(configuration: &str, eval: &Evaluation) -> String {
    let mut out = csv_header();
    for task in Task::BOTH {
        let m = eval.get(task);
        out.push_str(&csv_row(configuration, task, m.waf, &m.labels, &m.f1));
    }
    out
}

fn task_table(out: &mut String, m: &MetricsReport) {
    let width = m.labels.iter().map(String::len).max().unwrap_or(5).max(5);
    let _ = writeln!(out, "{} (n = {}, WAF = {:.4})", m.task.name(), m.n, m.waf);
    let _ = writeln!(
        out,
        "  {:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
        "class", "precision", "recall", "f1", "support"
    );
    for k in 0..m.labels.len() {
        let _ = writeln!(
            out,
            "  {:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
            m.labels[k], m.precision[k], m.recall[k], m.f1[k], m.support[k]
        );
    }
    let _ = writeln!(out, "  confusion (rows true, columns predicted):");
    for (k, row) in m.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
        let _ = writeln!(out, "  {:<width$} {}", m.labels[k], cells.join(""));
    }
}

/// Aligned plain-text rendering of both tasks.
pub fn metrics_table(eval: &Evaluation) -> String {
    let mut out = String::new();
    task_table(&mut out, &eval.emotion);
    out.push('\n');
    task_table(&mut out, &eval.intent);
    out
}
