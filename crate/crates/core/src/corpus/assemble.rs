use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::annotations::{parse_annotations_csv, serialize_annotations_csv, AnnotationRecord};
use super::features::{file_name, read_feature_file, write_feature_file};
use super::{Conversation, Modality, ModalitySet, Utterance, UtteranceFeatures};
use crate::error::{data_err, Error, Result};

pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const SPLITS_FILE: &str = "splits.csv";

/// Where feature files live: `{root}/{folder}/dia_{d}_utt_{u}.eiuf`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub root: PathBuf,
    pub textual_folder: String,
    pub acoustic_folder: String,
    pub visual_folder: String,
}

impl FeatureLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FeatureLayout {
            root: root.into(),
            textual_folder: "textual".into(),
            acoustic_folder: "acoustic".into(),
            visual_folder: "visual".into(),
        }
    }

    pub fn folder(&self, m: Modality) -> &str {
        match m {
            Modality::Textual => &self.textual_folder,
            Modality::Acoustic => &self.acoustic_folder,
            Modality::Visual => &self.visual_folder,
        }
    }

    pub fn path(&self, m: Modality, dia_no: u32, utt_no: u32) -> PathBuf {
        self.root.join(self.folder(m)).join(file_name(dia_no, utt_no))
    }
}

/// Groups records into conversations and loads the features of every
/// enabled modality.
pub fn assemble_conversations(
    records: &[AnnotationRecord],
    layout: &FeatureLayout,
    mask: ModalitySet,
) -> Result<Vec<Conversation>> {
    let mut groups: BTreeMap<u32, Vec<&AnnotationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.dia_no).or_default().push(r);
    }
    let mut missing = Vec::new();
    for (dia, group) in groups.iter_mut() {
        group.sort_by_key(|r| r.utt_no);
        for (expected, r) in group.iter().enumerate() {
            if r.utt_no as usize != expected {
                return Err(data_err!(
                    "dialogue {dia}: utterance numbers must run 0..{} without gaps, found Utt_No {} at position {expected}",
                    group.len(),
                    r.utt_no
                ));
            }
            for m in mask.iter() {
                let p = layout.path(m, r.dia_no, r.utt_no);
                if !p.is_file() {
                    missing.push(p);
                }
            }
        }
    }
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        return Err(data_err!("{} missing feature file(s): {}", list.len(), list.join(", ")));
    }

    let mut conversations = Vec::with_capacity(groups.len());
    for (dia_no, group) in groups {
        let mut utterances = Vec::with_capacity(group.len());
        for r in group {
            let mut features = UtteranceFeatures::default();
            for m in mask.iter() {
                let t = read_feature_file(&layout.path(m, r.dia_no, r.utt_no))?;
                if t.shape().len() != 2 || !t.all_finite() {
                    return Err(data_err!(
                        "{}: {} features must be a finite [frames × dim] matrix, got shape {:?}",
                        format!("dia_{}_utt_{}", r.dia_no, r.utt_no),
                        m.name(),
                        t.shape()
                    ));
                }
                features.set(m, Some(t));
            }
            utterances.push(Utterance {
                record: r.clone(),
                features,
            });
        }
        conversations.push(Conversation { dia_no, utterances });
    }
    Ok(conversations)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Valid, SplitName::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Valid => "valid",
            SplitName::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|n| n.name().eq_ignore_ascii_case(s.trim()))
    }
}

/// Dialogue-level partition, listed by `dia_no`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<u32>,
    pub valid: Vec<u32>,
    pub test: Vec<u32>,
}

impl Split {
    pub fn get(&self, name: SplitName) -> &[u32] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Valid => &self.valid,
            SplitName::Test => &self.test,
        }
    }

    fn get_mut(&mut self, name: SplitName) -> &mut Vec<u32> {
        match name {
            SplitName::Train => &mut self.train,
            SplitName::Valid => &mut self.valid,
            SplitName::Test => &mut self.test,
        }
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["dia_no", "split"])?;
        for name in SplitName::ALL {
            for d in self.get(name) {
                w.write_record([d.to_string().as_str(), name.name()])?;
            }
        }
        w.into_inner().map_err(|e| Error::Format(format!("csv buffer: {e}")))
    }

    pub fn parse_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let mut split = Split::default();
        for (i, row) in r.records().enumerate() {
            let row = row?;
            let line = i + 2;
            let dia = row
                .get(0)
                .and_then(|s| s.trim().parse::<u32>().ok())
                .ok_or_else(|| data_err!("splits row {line}: bad dia_no"))?;
            let name = row
                .get(1)
                .and_then(SplitName::parse)
                .ok_or_else(|| data_err!("splits row {line}: split must be train, valid or test"))?;
            split.get_mut(name).push(dia);
        }
        Ok(split)
    }

    /// Checks that the split is a partition of `dia_nos`.
    pub fn validate(&self, dia_nos: &[u32]) -> Result<()> {
        let mut owner: HashMap<u32, SplitName> = HashMap::new();
        for name in SplitName::ALL {
            for &d in self.get(name) {
                if let Some(prev) = owner.insert(d, name) {
                    return Err(data_err!(
                        "dialogue {d} assigned to both {} and {}",
                        prev.name(),
                        name.name()
                    ));
                }
            }
        }
        for d in dia_nos {
            if owner.remove(d).is_none() {
                return Err(data_err!("dialogue {d} is not assigned to any split"));
            }
        }
        if let Some(d) = owner.keys().min() {
            return Err(data_err!("split names unknown dialogue {d}"));
        }
        Ok(())
    }
}

/// Conversations plus an optional split.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub conversations: Vec<Conversation>,
    pub split: Option<Split>,
}

impl Corpus {
    pub fn dia_nos(&self) -> Vec<u32> {
        self.conversations.iter().map(|c| c.dia_no).collect()
    }

    pub fn utterance_count(&self) -> usize {
        self.conversations.iter().map(Conversation::len).sum()
    }

    pub fn records(&self) -> Vec<AnnotationRecord> {
        self.conversations
            .iter()
            .flat_map(|c| c.utterances.iter().map(|u| u.record.clone()))
            .collect()
    }

    /// Conversations of one split, in split order.
    pub fn subset(&self, name: SplitName) -> Result<Vec<&Conversation>> {
        let split = self
            .split
            .as_ref()
            .ok_or_else(|| data_err!("corpus has no split assignment"))?;
        let by_dia: HashMap<u32, &Conversation> = self.conversations.iter().map(|c| (c.dia_no, c)).collect();
        split
            .get(name)
            .iter()
            .map(|d| {
                by_dia
                    .get(d)
                    .copied()
                    .ok_or_else(|| data_err!("split names unknown dialogue {d}"))
            })
            .collect()
    }
}

/// Reads `{root}/annotations.csv`, the feature folders and, if present,
/// `{root}/splits.csv`.
pub fn load_corpus(layout: &FeatureLayout, mask: ModalitySet) -> Result<Corpus> {
    let csv_path = layout.root.join(ANNOTATIONS_FILE);
    let bytes = fs::read(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let records = parse_annotations_csv(&bytes).map_err(|e| prefix_path(e, &csv_path))?;
    let conversations = assemble_conversations(&records, layout, mask)?;
    let split_path = layout.root.join(SPLITS_FILE);
    let split = if split_path.is_file() {
        let bytes = fs::read(&split_path).map_err(|e| Error::io(&split_path, e))?;
        let split = Split::parse_csv(&bytes).map_err(|e| prefix_path(e, &split_path))?;
        let dias: Vec<u32> = conversations.iter().map(|c| c.dia_no).collect();
        split.validate(&dias).map_err(|e| prefix_path(e, &split_path))?;
        Some(split)
    } else {
        None
    };
    Ok(Corpus { conversations, split })
}

/// Writes `annotations.csv`, one feature file per utterance and modality
/// present, and `splits.csv` when the corpus has a split.
pub fn save_corpus(corpus: &Corpus, layout: &FeatureLayout) -> Result<()> {
    fs::create_dir_all(&layout.root).map_err(|e| Error::io(&layout.root, e))?;
    let csv_path = layout.root.join(ANNOTATIONS_FILE);
    let bytes = serialize_annotations_csv(&corpus.records())?;
    fs::write(&csv_path, bytes).map_err(|e| Error::io(&csv_path, e))?;
    for m in Modality::ALL {
        let folder = layout.root.join(layout.folder(m));
        let mut created = false;
        for conv in &corpus.conversations {
            for utt in &conv.utterances {
                if let Some(t) = utt.features.get(m) {
                    if !created {
                        fs::create_dir_all(&folder).map_err(|e| Error::io(&folder, e))?;
                        created = true;
                    }
                    write_feature_file(&layout.path(m, conv.dia_no, utt.record.utt_no), t)?;
                }
            }
        }
    }
    if let Some(split) = &corpus.split {
        let path = layout.root.join(SPLITS_FILE);
        fs::write(&path, split.to_csv()?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn prefix_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    }
}
