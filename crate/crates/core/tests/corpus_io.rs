mod common;

use std::fs;

use common::{random, record, rng};
use eiu_core::corpus::features::{decode, encode, read_feature_file, write_feature_file};
use eiu_core::corpus::{
    assemble_conversations, format_timestamp, load_corpus, parse_annotations_csv, parse_subtitle_file, parse_timestamp,
    save_corpus, serialize_annotations_csv, AnnotationRecord, Corpus, Emotion, FeatureLayout, Intent, Label, Modality,
    ModalitySet, Split,
};
use eiu_core::tensor::Tensor;
use eiu_core::Error;
use proptest::prelude::*;
use rand::Rng;

const HEADER: &str =
    "Subtitle,Dia_No,Utt_No,Video_name,Season,Episode,Begin_timestamp,End_timestamp,Emotion,Intent,Speaker\n";

#[test]
fn published_example_row() {
    let csv = format!(
        "{HEADER}\"Turns out this sweater, was made for a woman.\",34,0,Friends,10,9,\"00:24:09,900\",\"00:24:12,530\",Neutral,neutral,0\n"
    );
    let records = parse_annotations_csv(csv.as_bytes()).unwrap();
    assert_eq!(records.len(), 1);
    let r = &records[0];
    assert_eq!(r.subtitle, "Turns out this sweater, was made for a woman.");
    assert_eq!((r.dia_no, r.utt_no), (34, 0));
    assert_eq!(r.video_name, "Friends");
    assert_eq!((r.season, r.episode), (Some(10), 9));
    assert_eq!((r.begin_ms, r.end_ms), (1_449_900, 1_452_530));
    assert_eq!((r.emotion, r.intent, r.speaker), (Emotion::Neutral, Intent::Neutral, 0));
}

#[test]
fn unknown_label_names_row_and_value() {
    let csv = format!(
        "{HEADER}a,1,0,Show,1,1,\"00:00:01,000\",\"00:00:02,000\",happy,agreeing,0\nb,1,1,Show,1,1,\"00:00:03,000\",\"00:00:04,000\",joyful,agreeing,1\n"
    );
    let err = parse_annotations_csv(csv.as_bytes()).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, Error::Data(_)));
    assert!(msg.contains("row 3") && msg.contains("joyful"), "{msg}");
}

#[test]
fn annotation_edge_cases() {
    assert!(parse_annotations_csv(HEADER.as_bytes()).unwrap().is_empty());

    let csv = format!("{HEADER}x,2,0,Show,-,4,\"00:00:01,000\",\"00:00:02,000\", SAD ,Consoling,1\n");
    let r = &parse_annotations_csv(csv.as_bytes()).unwrap()[0];
    assert_eq!(r.season, None);
    assert_eq!((r.emotion, r.intent), (Emotion::Sad, Intent::Consoling));

    let bad_time = format!("{HEADER}x,2,0,Show,1,4,\"00:00:01\",\"00:00:02,000\",sad,consoling,1\n");
    assert!(matches!(
        parse_annotations_csv(bad_time.as_bytes()),
        Err(Error::Data(_))
    ));

    let dup = format!(
        "{HEADER}x,2,0,Show,1,4,\"00:00:01,000\",\"00:00:02,000\",sad,consoling,1\ny,2,0,Show,1,4,\"00:00:03,000\",\"00:00:04,000\",sad,consoling,0\n"
    );
    let msg = parse_annotations_csv(dup.as_bytes()).unwrap_err().to_string();
    assert!(msg.contains("duplicate"), "{msg}");

    let reversed = format!("{HEADER}x,2,0,Show,1,4,\"00:00:05,000\",\"00:00:02,000\",sad,consoling,1\n");
    assert!(matches!(
        parse_annotations_csv(reversed.as_bytes()),
        Err(Error::Data(_))
    ));
}

#[test]
fn timestamps() {
    assert_eq!(parse_timestamp("00:24:09,900"), Some(1_449_900));
    assert_eq!(parse_timestamp("00:24:12,530"), Some(1_452_530));
    assert_eq!(parse_timestamp("01:00:00.001"), Some(3_600_001));
    assert_eq!(parse_timestamp("00:61:00,000"), None);
    assert_eq!(format_timestamp(1_449_900), "00:24:09,900");
}

fn arb_record() -> impl Strategy<Value = AnnotationRecord> {
    (
        "[a-zA-Z ,\"'?!]{0,30}",
        0u32..1000,
        0u32..50,
        proptest::option::of(0u32..30),
        0u32..30,
        0u64..10_000_000,
        1u64..100_000,
        0usize..7,
        0usize..9,
        0u8..2,
    )
        .prop_map(
            |(subtitle, dia_no, utt_no, season, episode, begin, len, e, i, speaker)| AnnotationRecord {
                subtitle,
                dia_no,
                utt_no,
                video_name: "Friends".into(),
                season,
                episode,
                begin_ms: begin,
                end_ms: begin + len,
                emotion: Emotion::from_index(e).unwrap(),
                intent: Intent::from_index(i).unwrap(),
                speaker,
            },
        )
}

proptest! {
    #[test]
    fn csv_round_trip_is_fixed_point(records in proptest::collection::vec(arb_record(), 0..20)) {
        let mut seen = std::collections::HashSet::new();
        let records: Vec<_> = records.into_iter().filter(|r| seen.insert((r.dia_no, r.utt_no))).collect();
        let bytes = serialize_annotations_csv(&records).unwrap();
        let parsed = parse_annotations_csv(&bytes).unwrap();
        prop_assert_eq!(&parsed, &records);
        prop_assert_eq!(serialize_annotations_csv(&parsed).unwrap(), bytes);
    }

    #[test]
    fn feature_encoding_round_trips(rows in 1usize..6, cols in 1usize..20, seed in any::<u64>()) {
        let mut r = rng(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| r.random_range(-1e3f32..1e3) as f64).collect();
        let t = Tensor::new(&[rows, cols], data).unwrap();
        let bytes = encode(&t);
        let back = decode(&bytes).unwrap();
        prop_assert!(back.bitwise_eq(&t));
        prop_assert_eq!(encode(&back), bytes);
    }
}

fn f32_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    let t = random(&mut rng(seed), &[rows, cols], 1.0);
    Tensor::new(&[rows, cols], t.data().iter().map(|&x| x as f32 as f64).collect()).unwrap()
}

#[test]
fn feature_files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for (rows, cols) in [(5, 768), (1, 342), (3, 512)] {
        let t = f32_matrix(rows, cols, cols as u64);
        let path = dir.path().join(format!("m{cols}.eiuf"));
        write_feature_file(&path, &t).unwrap();
        let bytes = fs::read(&path).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(back.shape(), &[rows, cols]);
        assert!(back.bitwise_eq(&t));
        write_feature_file(&path, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
    }
}

#[test]
fn feature_file_corruption_is_format_error() {
    let mut bytes = encode(&f32_matrix(2, 3, 1));
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"XXXX");
    assert!(matches!(decode(&bad), Err(Error::Format(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode(&bad), Err(Error::Format(_))));
    bytes.pop();
    assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    assert!(matches!(decode(b"EIU"), Err(Error::Format(_))));
}

fn write_dialogues(layout: &FeatureLayout, mask: ModalitySet, dialogues: u32, len: u32) -> Vec<AnnotationRecord> {
    let dims = [(Modality::Textual, 6), (Modality::Acoustic, 5), (Modality::Visual, 4)];
    let mut records = Vec::new();
    for d in 0..dialogues {
        for u in 0..len {
            records.push(record(d, u, Emotion::Happy, Intent::Wishing));
            for (m, dim) in dims {
                if mask.contains(m) {
                    let dir = layout.root.join(layout.folder(m));
                    fs::create_dir_all(&dir).unwrap();
                    write_feature_file(&layout.path(m, d, u), &f32_matrix(2, dim, (d * 10 + u) as u64)).unwrap();
                }
            }
        }
    }
    records
}

#[test]
fn assembly_groups_by_dialogue() {
    let dir = tempfile::tempdir().unwrap();
    let layout = FeatureLayout::new(dir.path());
    let mut records = write_dialogues(&layout, ModalitySet::all(), 2, 3);
    records.reverse();
    let convs = assemble_conversations(&records, &layout, ModalitySet::all()).unwrap();
    assert_eq!(convs.len(), 2);
    assert_eq!(convs.iter().map(|c| c.len()).sum::<usize>(), records.len());
    for c in &convs {
        assert_eq!(c.len(), 3);
        let order: Vec<u32> = c.utterances.iter().map(|u| u.record.utt_no).collect();
        assert_eq!(order, vec![0, 1, 2]);
        assert_eq!(
            c.utterances[1].features.get(Modality::Acoustic).unwrap().shape(),
            &[2, 5]
        );
    }
}

#[test]
fn assembly_reports_every_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let layout = FeatureLayout::new(dir.path());
    let records = write_dialogues(&layout, ModalitySet::all(), 2, 3);
    let gone = [
        layout.path(Modality::Acoustic, 1, 2),
        layout.path(Modality::Acoustic, 0, 0),
    ];
    for p in &gone {
        fs::remove_file(p).unwrap();
    }
    let msg = assemble_conversations(&records, &layout, ModalitySet::all())
        .unwrap_err()
        .to_string();
    for p in &gone {
        assert!(msg.contains(&p.display().to_string()), "{msg}");
    }
}

#[test]
fn assembly_respects_modality_mask() {
    let dir = tempfile::tempdir().unwrap();
    let layout = FeatureLayout::new(dir.path());
    let text = ModalitySet::only(Modality::Textual);
    let records = write_dialogues(&layout, text, 1, 2);
    assert!(!dir.path().join(layout.folder(Modality::Acoustic)).exists());
    let convs = assemble_conversations(&records, &layout, text).unwrap();
    assert!(convs[0].utterances[0].features.get(Modality::Acoustic).is_none());
    assert!(assemble_conversations(&records, &layout, ModalitySet::all()).is_err());
}

#[test]
fn assembly_rejects_utterance_gaps() {
    let dir = tempfile::tempdir().unwrap();
    let layout = FeatureLayout::new(dir.path());
    let mut records = write_dialogues(&layout, ModalitySet::all(), 1, 3);
    records.remove(1);
    let msg = assemble_conversations(&records, &layout, ModalitySet::all())
        .unwrap_err()
        .to_string();
    assert!(msg.contains("without gaps"), "{msg}");
}

#[test]
fn corpus_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let layout = FeatureLayout::new(dir.path().join("corpus"));
    let scratch = FeatureLayout::new(dir.path().join("scratch"));
    let records = write_dialogues(&scratch, ModalitySet::all(), 3, 2);
    let conversations = assemble_conversations(&records, &scratch, ModalitySet::all()).unwrap();
    let corpus = Corpus {
        conversations,
        split: Some(Split {
            train: vec![2, 0],
            valid: vec![1],
            test: vec![],
        }),
    };
    save_corpus(&corpus, &layout).unwrap();
    let back = load_corpus(&layout, ModalitySet::all()).unwrap();
    assert_eq!(back, corpus);
}

#[test]
fn subtitle_blocks() {
    let srt = "\u{feff}1\n00:00:01,000 --> 00:00:02,500\nHello\n\n2  \n00:24:09,900 --> 00:24:12,530\nTurns out this sweater\nwas made for a woman.  \n";
    let entries = parse_subtitle_file(srt.as_bytes()).unwrap();
    assert_eq!(entries.len(), 2);
    assert_eq!(
        (entries[0].begin_ms, entries[0].end_ms, entries[0].text.as_str()),
        (1000, 2500, "Hello")
    );
    assert_eq!((entries[1].begin_ms, entries[1].end_ms), (1_449_900, 1_452_530));
    assert_eq!(entries[1].text, "Turns out this sweater was made for a woman.");
}

#[test]
fn subtitle_sorting_and_errors() {
    let srt = "2\n00:00:05,000 --> 00:00:06,000\nlater\n\n1\n00:00:01,000 --> 00:00:02,000\nearlier\n";
    let entries = parse_subtitle_file(srt.as_bytes()).unwrap();
    assert_eq!(entries.iter().map(|e| e.index).collect::<Vec<_>>(), vec![1, 2]);
    assert!(entries.iter().all(|e| e.end_ms > e.begin_ms));

    let bad = "1\n00:00:01,000 -> 00:00:02,000\nx\n";
    match parse_subtitle_file(bad.as_bytes()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    let reversed = "1\n00:00:03,000 --> 00:00:02,000\nx\n";
    assert!(matches!(parse_subtitle_file(reversed.as_bytes()), Err(Error::Data(_))));
    assert!(parse_subtitle_file(b"").unwrap().is_empty());
}

#[test]
fn label_vocabularies_keep_published_order() {
    let e: Vec<&str> = Emotion::ALL.iter().map(|l| l.name()).collect();
    assert_eq!(e, ["happy", "surprise", "sad", "disgust", "anger", "fear", "neutral"]);
    let i: Vec<&str> = Intent::ALL.iter().map(|l| l.name()).collect();
    assert_eq!(
        i,
        [
            "questioning",
            "agreeing",
            "acknowledging",
            "sympathizing",
            "encouraging",
            "consoling",
            "suggesting",
            "wishing",
            "neutral"
        ]
    );
}
