#![allow(dead_code)]

use eiu_core::corpus::{
    AnnotationRecord, Conversation, Emotion, Intent, Label, Modality, Utterance, UtteranceFeatures,
};
use eiu_core::model::Ei2Config;
use eiu_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// A model small enough for exhaustive finite differences.
pub fn tiny_config() -> Ei2Config {
    Ei2Config {
        hidden: 8,
        heads: 2,
        ffn_dim: 12,
        text_dim: 6,
        audio_dim: 5,
        visual_dim: 4,
        cnn_filters: 3,
        ..Ei2Config::default()
    }
}

pub fn record(dia_no: u32, utt_no: u32, emotion: Emotion, intent: Intent) -> AnnotationRecord {
    AnnotationRecord {
        subtitle: format!("line {utt_no}"),
        dia_no,
        utt_no,
        video_name: "Synthetic".into(),
        season: Some(1),
        episode: 1,
        begin_ms: 1000 * utt_no as u64,
        end_ms: 1000 * utt_no as u64 + 800,
        emotion,
        intent,
        speaker: (utt_no % 2) as u8,
    }
}

pub fn random_features(rng: &mut ChaCha8Rng, config: &Ei2Config) -> UtteranceFeatures {
    let mut f = UtteranceFeatures::default();
    for m in Modality::ALL {
        let frames = rng.random_range(1..6);
        f.set(m, Some(random(rng, &[frames, config.feature_dim(m)], 1.0)));
    }
    f
}

pub fn random_conversation(rng: &mut ChaCha8Rng, config: &Ei2Config, len: usize, dia_no: u32) -> Conversation {
    let utterances = (0..len)
        .map(|u| {
            let e = Emotion::from_index(rng.random_range(0..7)).unwrap();
            let i = Intent::from_index(rng.random_range(0..9)).unwrap();
            Utterance {
                record: record(dia_no, u as u32, e, i),
                features: random_features(rng, config),
            }
        })
        .collect();
    Conversation { dia_no, utterances }
}
