use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn eiu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eiu"))
        .args(args)
        .output()
        .expect("run eiu")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = "n_conversations = 12\nutterances = [3, 4]\ntext_dim = 6\naudio_dim = 5\nvisual_dim = 4\n\
hidden = 8\nheads = 2\nffn_dim = 12\ncnn_filters = 3\n\
epochs_pretrain = 1\nepochs_train = 1\nn_runs = 1\nbatch_size = 8\n";

/// A synthetic corpus plus the config file that made it.
fn tiny_corpus(dir: &Path) -> (String, String) {
    let cfg = dir.join("tiny.cfg");
    fs::write(&cfg, TINY).unwrap();
    let corpus = dir.join("corpus");
    let o = eiu(&["synth", "--seed", "3", "--config", s(&cfg), "--out", s(&corpus)]);
    assert!(o.status.success(), "{o:?}");
    (s(&cfg).to_string(), s(&corpus).to_string())
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(eiu(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(eiu(&["kappa", "--bogus"]).status.code(), Some(2));
    assert_eq!(eiu(&["train"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = eiu(&["synth", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
    let o = eiu(&["split", "--corpus", "x.csv", "--ratios", "7:1", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn data_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    fs::write(&csv, "dia_no,utt_no,a1,a2,a3\n0,0,happy,joyful,sad\n").unwrap();
    let o = eiu(&["kappa", "--csv", s(&csv), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("joyful"));
    let o = eiu(&[
        "stats",
        "--corpus",
        s(&dir.path().join("missing")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn kappa_of_perfect_agreement_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    fs::write(
        &csv,
        "dia_no,utt_no,a1,a2,a3\n0,0,happy,happy,happy\n0,1,sad,sad,sad\n1,0,fear,fear,fear\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = eiu(&["kappa", "--csv", s(&csv), "--out", s(&out)]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("κ = 1.0"), "{}", stdout(&o));
    assert!(out.join("manifest.json").is_file() && out.join("kappa.json").is_file());
}

#[test]
fn dry_run_writes_only_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, corpus) = tiny_corpus(dir.path());
    let out = dir.path().join("dry");
    let o = eiu(&[
        "train",
        "--dry-run",
        "--corpus",
        &corpus,
        "--config",
        &cfg,
        "--seed",
        "9",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{o:?}");
    let names: Vec<_> = fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, ["manifest.json"]);
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["subcommand"], "train");
    assert_eq!(m["seeds"], serde_json::json!([9]));
    assert_eq!(m["config"]["train"]["seed"], 9);
    assert_eq!(m["config"]["model"]["hidden"], 8);
    // Feature sizes come from the corpus.
    assert_eq!(m["config"]["model"]["text_dim"], 6);
    assert_eq!(m["config"]["model"]["audio_dim"], 5);
    assert!(m["inputs"]["corpus"].is_string());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, corpus) = tiny_corpus(dir.path());
    let out = dir.path().join("dry");
    let o = eiu(&[
        "ablate",
        "--dry-run",
        "--corpus",
        &corpus,
        "--config",
        &cfg,
        "--modalities",
        "tv",
        "--task",
        "intent",
        "--ablate",
        "gating",
        "--ablate",
        "fl",
        "--precision",
        "f32",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{o:?}");
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let c = &m["config"];
    assert_eq!(c["model"]["modality_mask"], "tv");
    assert_eq!(c["model"]["use_gate"], false);
    assert_eq!(c["model"]["use_history"], true);
    assert_eq!(c["train"]["use_focal"], false);
    assert_eq!(c["train"]["task_mode"], "intent_only");
    assert_eq!(c["train"]["precision"], "f32");
}

#[test]
fn pipeline_pretrain_train_eval_ablate() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, corpus) = tiny_corpus(dir.path());
    let pre = dir.path().join("pre");
    assert!(
        eiu(&["pretrain", "--corpus", &corpus, "--config", &cfg, "--out", s(&pre)])
            .status
            .success()
    );
    assert!(pre.join("encoders.eiup").is_file() && pre.join("pretrain_loss.csv").is_file());

    let train = dir.path().join("train");
    let enc = pre.join("encoders.eiup");
    let o = eiu(&[
        "train",
        "--corpus",
        &corpus,
        "--config",
        &cfg,
        "--pretrained",
        s(&enc),
        "--out",
        s(&train),
    ]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("mean test emotion WAF"));
    let ckpt = train.join("run_0/model.eiup");
    assert!(ckpt.is_file() && train.join("run_0/model.json").is_file());
    // Encoders came from the file, so no per-run pre-training happened.
    assert!(!train.join("run_0/pretrain_loss.csv").exists());
    let header = fs::read_to_string(train.join("metrics.csv")).unwrap();
    assert!(header.starts_with("configuration,task,waf,f1_happy"));

    let eval = dir.path().join("eval");
    let o = eiu(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--corpus",
        &corpus,
        "--split",
        "valid",
        "--out",
        s(&eval),
    ]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("emotion (n = "));
    assert_eq!(
        eiu(&["eval", "--checkpoint", s(&ckpt), "--corpus", &corpus, "--split", "dev"])
            .status
            .code(),
        Some(2)
    );

    let abl = dir.path().join("ablate");
    let o = eiu(&[
        "ablate",
        "--corpus",
        &corpus,
        "--config",
        &cfg,
        "--jobs",
        "2",
        "--out",
        s(&abl),
    ]);
    assert!(o.status.success(), "{o:?}");
    let report: Value = serde_json::from_str(&fs::read_to_string(abl.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 15);
    let text = stdout(&o);
    assert!(text.contains("w/o Interaction") && text.contains("Interaction benefit"));
}

#[test]
fn corpus_tools_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (_, corpus) = tiny_corpus(dir.path());
    let out = dir.path().join("tools");
    let o = eiu(&["split", "--corpus", &corpus, "--seed", "4", "--out", s(&out)]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).starts_with("train 8, valid 1, test 3"), "{}", stdout(&o));
    assert!(out.join("splits.csv").is_file());
    let o = eiu(&["corr", "--corpus", &corpus, "--out", s(&out)]);
    assert!(o.status.success());
    let corr = fs::read_to_string(out.join("corr.csv")).unwrap();
    assert_eq!(corr.lines().count(), 8);
    let o = eiu(&["stats", "--corpus", &corpus, "--out", s(&out)]);
    assert!(o.status.success());
    assert!(fs::read_to_string(out.join("stats.csv")).unwrap().contains("12"));

    let srt = dir.path().join("ep.srt");
    fs::write(
        &srt,
        "\u{feff}1\n00:24:09,900 --> 00:24:12,530\nTurns out this\nsweater fits.\n\n",
    )
    .unwrap();
    let o = eiu(&["parse-subs", "--input", s(&srt), "--out", s(&out)]);
    assert!(o.status.success(), "{o:?}");
    let csv = fs::read_to_string(out.join("ep.csv")).unwrap();
    assert_eq!(
        csv,
        "index,begin_ms,end_ms,text\n1,1449900,1452530,Turns out this sweater fits.\n"
    );

    let votes = dir.path().join("v.csv");
    fs::write(
        &votes,
        "dia_no,utt_no,a1,a2,a3,expert\n0,0,happy,happy,sad,\n0,1,happy,sad,anger,fear\n",
    )
    .unwrap();
    let o = eiu(&["vote", "--csv", s(&votes), "--out", s(&out)]);
    assert!(o.status.success());
    assert_eq!(
        fs::read_to_string(out.join("votes.csv")).unwrap(),
        "Dia_No,Utt_No,label,by_expert\n0,0,happy,false\n0,1,fear,true\n"
    );
}
