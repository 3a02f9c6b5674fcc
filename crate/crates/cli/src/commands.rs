use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use eiu_core::corpus::{
    assemble_conversations, load_corpus, parse_annotations_csv, parse_subtitle_file, save_corpus, AnnotationRecord,
    Conversation, Corpus, FeatureLayout, Modality, ModalitySet, SplitName, ANNOTATIONS_FILE,
};
use eiu_core::model::{ModelState, Task};
use eiu_core::nn::checkpoint::{self, Dtype};
use eiu_core::tools::{
    correlation_matrix, counts_from_triples, dataset_stats, fleiss_kappa, parse_triples_csv, split_corpus,
    synth_corpus, triple_indices, vote_triples, AnnotationTriple, Vocabulary,
};
use eiu_core::train::{
    ablation_suite, evaluate, gradient_audit, metrics_csv, metrics_table, pretrain, run_experiment_from, TaskMode,
};
use eiu_core::{Error, Result};

use crate::manifest::RunManifest;
use crate::settings::Settings;
use crate::{Ablation, Cli, Command, ModelArgs};

pub const CHECKPOINT_FILE: &str = "model.eiup";
pub const ENCODERS_FILE: &str = "encoders.eiup";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn no_modalities() -> ModalitySet {
    let mut set = ModalitySet::all();
    for m in Modality::ALL {
        set.set(m, false);
    }
    set
}

/// Defaults, then the config file, then flags.
fn resolve(cli: &Cli, model_args: Option<&ModelArgs>) -> Result<Settings> {
    let mut s = Settings::load(cli.common.config.as_deref())?;
    if let Some(seed) = cli.common.seed {
        s.train.seed = seed;
        s.synth.seed = seed;
    }
    if let Some(p) = cli.common.precision {
        s.train.precision = p.into();
    }
    if let Some(m) = model_args {
        if let Some(mods) = &m.modalities {
            s.model.modality_mask = mods.parse()?;
        }
        if let Some(task) = &m.task {
            s.train.task_mode = task.parse::<TaskMode>()?;
        }
        for a in &m.ablate {
            match a {
                Ablation::History => s.model.use_history = false,
                Ablation::Interaction => s.model.use_interaction = false,
                Ablation::Gating => s.model.use_gate = false,
                Ablation::Fl => s.train.use_focal = false,
                Ablation::Pretrain => s.train.pretrained_init = false,
            }
        }
    }
    Ok(s)
}

/// Loads a corpus and sets the model's feature sizes from its first
/// utterance.
fn load_model_corpus(dir: &Path, s: &mut Settings) -> Result<Corpus> {
    let corpus = load_corpus(&FeatureLayout::new(dir), s.model.modality_mask)?;
    let first = corpus
        .conversations
        .iter()
        .flat_map(|c| c.utterances.first())
        .next()
        .ok_or_else(|| Error::Data(format!("{}: corpus has no utterances", dir.display())))?;
    for m in s.model.modality_mask.iter() {
        let dim = first.features.get(m).map_or(0, |t| t.shape()[1]);
        match m {
            Modality::Textual => s.model.text_dim = dim,
            Modality::Acoustic => s.model.audio_dim = dim,
            Modality::Visual => s.model.visual_dim = dim,
        }
    }
    s.validate()?;
    Ok(corpus)
}

/// Annotation records from a corpus directory or a CSV file.
fn load_records(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let file = if path.is_dir() {
        path.join(ANNOTATIONS_FILE)
    } else {
        path.to_path_buf()
    };
    parse_annotations_csv(&read(&file)?)
}

/// Conversations with whatever feature folders exist.
fn load_conversations(path: &Path) -> Result<Vec<Conversation>> {
    let records = load_records(path)?;
    let (layout, mask) = if path.is_dir() {
        let layout = FeatureLayout::new(path);
        let mut mask = no_modalities();
        for m in Modality::ALL {
            mask.set(m, path.join(layout.folder(m)).is_dir());
        }
        (layout, mask)
    } else {
        (
            FeatureLayout::new(path.parent().unwrap_or(Path::new("."))),
            no_modalities(),
        )
    };
    assemble_conversations(&records, &layout, mask)
}

fn load_triples(path: &Path) -> Result<(Vec<AnnotationTriple>, Vocabulary)> {
    let triples = parse_triples_csv(&read(path)?)?;
    let vocab = Vocabulary::detect(&triples)?;
    Ok((triples, vocab))
}

fn parse_ratios(text: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Usage(format!("ratios must look like 7:1:2, got \"{text}\"")))?;
    <[f64; 3]>::try_from(parts).map_err(|_| Error::Usage(format!("ratios need three parts, got \"{text}\"")))
}

fn csv_bytes<F>(header: &[&str], rows: usize, mut row: F) -> Result<Vec<u8>>
where
    F: FnMut(usize) -> Vec<String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for i in 0..rows {
        w.write_record(row(i))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

pub fn run(cli: &Cli) -> Result<ExitCode> {
    let out = &cli.common.out;
    let dry = cli.common.dry_run;
    let name = cli.command.name();
    let model_args = match &cli.command {
        Command::Pretrain { model } | Command::Train { model, .. } | Command::Ablate { model, .. } => Some(model),
        _ => None,
    };
    let mut s = resolve(cli, model_args)?;
    let manifest = |s: &Settings, seeds: Vec<u64>, inputs: &[(&str, &Path)]| -> Result<()> {
        let mut m = RunManifest::new(name, s.clone(), seeds, out, dry);
        for (k, p) in inputs {
            m = m.input(k, p);
        }
        m.write()
    };
    let run_seeds = |s: &Settings| (0..s.train.n_runs).map(|k| s.train.run_seed(k)).collect::<Vec<_>>();

    match &cli.command {
        Command::Synth => {
            s.synth.validate()?;
            manifest(&s, vec![s.synth.seed], &[])?;
            if dry {
                return Ok(ExitCode::SUCCESS);
            }
            let synth = synth_corpus(&s.synth)?;
            save_corpus(&synth.corpus, &FeatureLayout::new(out))?;
            println!(
                "wrote {} conversations, {} utterances to {}",
                synth.corpus.conversations.len(),
                synth.corpus.utterance_count(),
                out.display()
            );
        }
        Command::Pretrain { model } => {
            let corpus = load_model_corpus(&model.corpus, &mut s)?;
            let train_set = corpus.subset(SplitName::Train)?;
            manifest(&s, vec![s.train.seed], &[("corpus", &model.corpus)])?;
            if dry {
                return Ok(ExitCode::SUCCESS);
            }
            let outcome = pretrain(&train_set, &s.model, &s.train)?;
            checkpoint::save(
                &outcome.encoders,
                Dtype::from(s.train.precision),
                &out.join(ENCODERS_FILE),
            )?;
            write(&out.join("pretrain_loss.csv"), outcome.report.to_csv())?;
            if let Some(last) = outcome.report.epochs.last() {
                println!("pre-training finished, final loss {:.6}", last.loss_total);
            }
        }
        Command::Train { model, pretrained } => {
            let corpus = load_model_corpus(&model.corpus, &mut s)?;
            let mut inputs: Vec<(&str, &Path)> = vec![("corpus", &model.corpus)];
            if let Some(p) = pretrained {
                inputs.push(("pretrained", p));
            }
            let encoders = pretrained.as_deref().map(checkpoint::load).transpose()?;
            for split in SplitName::ALL {
                corpus.subset(split)?;
            }
            manifest(&s, run_seeds(&s), &inputs)?;
            if dry {
                return Ok(ExitCode::SUCCESS);
            }
            let runs = run_experiment_from(&corpus, &s.model, &s.train, encoders.as_ref())?;
            let mut csv = String::new();
            let mut text = String::new();
            for (k, r) in runs.iter().enumerate() {
                let dir = out.join(format!("run_{k}"));
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                r.outcome
                    .state
                    .save(&dir.join(CHECKPOINT_FILE), Dtype::from(s.train.precision))?;
                write(&dir.join("loss.csv"), r.outcome.report.to_csv())?;
                if let Some(pre) = &r.pretrain {
                    write(&dir.join("pretrain_loss.csv"), pre.to_csv())?;
                }
                let rows = metrics_csv(&format!("seed {}", r.seed), &r.test);
                csv.push_str(if k == 0 {
                    &rows
                } else {
                    rows.split_once('\n').map_or("", |(_, b)| b)
                });
                text.push_str(&format!(
                    "run {k} (seed {}, best epoch {}), test split\n{}\n",
                    r.seed,
                    r.outcome.best_epoch + 1,
                    metrics_table(&r.test)
                ));
            }
            let n = runs.len().max(1) as f64;
            for task in Task::BOTH {
                let mean = runs.iter().map(|r| r.test.get(task).waf).sum::<f64>() / n;
                text.push_str(&format!(
                    "mean test {} WAF over {} runs: {:.4}\n",
                    task.name(),
                    runs.len(),
                    mean
                ));
            }
            write(&out.join("metrics.csv"), csv)?;
            write(&out.join("metrics.txt"), &text)?;
            print!("{text}");
        }
        Command::Eval {
            checkpoint: ckpt,
            corpus,
            split,
        } => {
            let split_name = SplitName::parse(split)
                .ok_or_else(|| Error::Usage(format!("unknown split \"{split}\" (expected train, valid or test)")))?;
            let state = ModelState::load(ckpt)?;
            s.model = state.config().clone();
            let data = load_corpus(&FeatureLayout::new(corpus), s.model.modality_mask)?;
            data.subset(split_name)?;
            manifest(&s, vec![], &[("checkpoint", ckpt), ("corpus", corpus)])?;
            if dry {
                return Ok(ExitCode::SUCCESS);
            }
            let eval = evaluate(&state, &data, split_name, s.train.precision)?;
            write(&out.join("metrics.csv"), metrics_csv(split_name.name(), &eval))?;
            let text = metrics_table(&eval);
            write(&out.join("metrics.txt"), &text)?;
            print!("{text}");
        }
        Command::Ablate { model, jobs } => {
            if *jobs == 0 {
                return Err(Error::Usage("--jobs must be at least 1".into()));
            }
            let corpus = load_model_corpus(&model.corpus, &mut s)?;
            for split in SplitName::ALL {
                corpus.subset(split)?;
            }
            manifest(&s, run_seeds(&s), &[("corpus", &model.corpus)])?;
            if dry {
                return Ok(ExitCode::SUCCESS);
            }
            let report = ablation_suite(&corpus, &s.model, &s.train, *jobs);
            write(&out.join("ablation.csv"), report.to_csv())?;
            write(
                &out.join("ablation.json"),
                serde_json::to_string_pretty(&report)? + "\n",
            )?;
            let text = report.to_text();
            write(&out.join("ablation.txt"), &text)?;
            print!("{text}");
        }
        Command::Gradcheck { points } => {
            if *points == 0 {
                return Err(Error::Usage("--points must be at least 1".into()));
            }
            manifest(&s, vec![s.train.seed], &[])?;
            if dry {
                return Ok(ExitCode::SUCCESS);
            }
            let report = gradient_audit(s.train.seed, *points)?;
            write(&out.join("gradcheck.csv"), report.to_csv())?;
            let text = report.to_text();
            write(&out.join("gradcheck.txt"), &text)?;
            print!("{text}");
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Vote { csv } => {
            let (triples, vocab) = load_triples(csv)?;
            manifest(&s, vec![], &[("csv", csv)])?;
            if dry {
                return Ok(ExitCode::SUCCESS);
            }
            let votes = vote_triples(&triples, vocab)?;
            let bytes = csv_bytes(&["Dia_No", "Utt_No", "label", "by_expert"], votes.len(), |i| {
                let v = &votes[i];
                vec![
                    v.dia_no.to_string(),
                    v.utt_no.to_string(),
                    v.label.clone().unwrap_or_default(),
                    v.by_expert.to_string(),
                ]
            })?;
            write(&out.join("votes.csv"), bytes)?;
            let expert = votes.iter().filter(|v| v.by_expert).count();
            let open = votes.iter().filter(|v| v.label.is_none()).count();
            println!(
                "{} utterances: {} by majority, {expert} by expert, {open} unresolved",
                votes.len(),
                votes.len() - expert - open
            );
        }
        Command::Kappa { csv } => {
            let (triples, vocab) = load_triples(csv)?;
            manifest(&s, vec![], &[("csv", csv)])?;
            if dry {
                return Ok(ExitCode::SUCCESS);
            }
            let idx = triples
                .iter()
                .map(|t| triple_indices(t, vocab))
                .collect::<Result<Vec<_>>>()?;
            let k = fleiss_kappa(&counts_from_triples(&idx, vocab.names().len()))?;
            write(&out.join("kappa.json"), serde_json::to_string_pretty(&k)? + "\n")?;
            println!("κ = {:?}", k.kappa);
            println!(
                "observed agreement {:.6}, expected {:.6}, {} items",
                k.observed, k.expected, k.items
            );
        }
        Command::Split { corpus, ratios } => {
            let ratios = parse_ratios(ratios)?;
            let records = load_records(corpus)?;
            manifest(&s, vec![s.train.seed], &[("corpus", corpus)])?;
            if dry {
                return Ok(ExitCode::SUCCESS);
            }
            let outcome = split_corpus(&records, ratios, s.train.seed, 0.0)?;
            write(&out.join(eiu_core::corpus::SPLITS_FILE), outcome.split.to_csv()?)?;
            let sizes: Vec<String> = SplitName::ALL
                .iter()
                .map(|&n| format!("{} {}", n.name(), outcome.split.get(n).len()))
                .collect();
            println!("{}; label distance {:.6}", sizes.join(", "), outcome.distance);
        }
        Command::Corr { corpus } => {
            let records = load_records(corpus)?;
            manifest(&s, vec![], &[("corpus", corpus)])?;
            if dry {
                return Ok(ExitCode::SUCCESS);
            }
            let m = correlation_matrix(&records);
            write(&out.join("corr.csv"), m.to_csv())?;
            let text = m.heatmap();
            write(&out.join("corr.txt"), &text)?;
            print!("{text}");
        }
        Command::Stats { corpus } => {
            let convs = load_conversations(corpus)?;
            manifest(&s, vec![], &[("corpus", corpus)])?;
            if dry {
                return Ok(ExitCode::SUCCESS);
            }
            let stats = dataset_stats(&convs);
            write(&out.join("stats.csv"), stats.to_csv())?;
            let text = stats.to_text();
            write(&out.join("stats.txt"), &text)?;
            print!("{text}");
        }
        Command::ParseSubs { input } => {
            let entries = parse_subtitle_file(&read(input)?)?;
            manifest(&s, vec![], &[("input", input)])?;
            if dry {
                return Ok(ExitCode::SUCCESS);
            }
            let bytes = csv_bytes(&["index", "begin_ms", "end_ms", "text"], entries.len(), |i| {
                let e = &entries[i];
                vec![
                    e.index.to_string(),
                    e.begin_ms.to_string(),
                    e.end_ms.to_string(),
                    e.text.clone(),
                ]
            })?;
            let name = input
                .file_stem()
                .map_or_else(|| PathBuf::from("subtitles"), PathBuf::from);
            write(&out.join(name.with_extension("csv")), bytes)?;
            println!("{} subtitle entries", entries.len());
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_parse() {
        assert_eq!(parse_ratios("7:1:2").unwrap(), [7.0, 1.0, 2.0]);
        assert!(matches!(parse_ratios("7:1"), Err(Error::Usage(_))));
        assert!(matches!(parse_ratios("a:b:c"), Err(Error::Usage(_))));
    }
}
