mod common;

use common::{random, random_conversation, rng, tiny_config};
use eiu_core::corpus::{Modality, ModalitySet};
use eiu_core::model::{fuse_history, gate_regulate, task_prefixes, Ei2Config, ModelState, Task};
use eiu_core::nn::checkpoint::Dtype;
use eiu_core::tensor::{grad_check, GradCheckOptions, Graph, Tensor};
use eiu_core::Error;
use proptest::prelude::*;
use rand::Rng;

fn logits(state: &ModelState, conv: &eiu_core::corpus::Conversation, n: usize) -> (Tensor, Tensor) {
    let g = Graph::default();
    let t = state.model.forward(&g, &state.params, conv, n).unwrap();
    (t.logits_e.value(), t.logits_i.value())
}

#[test]
fn paper_sized_inputs_give_three_by_hidden_sequences() {
    let config = Ei2Config::default();
    let state = ModelState::init(&config, 1).unwrap();
    let mut r = rng(2);
    let conv = random_conversation(&mut r, &config, 1, 0);
    let g = Graph::default();
    let utt = &conv.utterances[0];
    let e = state
        .model
        .encode_task_utterance(&g, &state.params, utt, Task::Emotion)
        .unwrap();
    let i = state
        .model
        .encode_task_utterance(&g, &state.params, utt, Task::Intent)
        .unwrap();
    assert_eq!(e.shape(), vec![3, 128]);
    assert_ne!(e.value(), i.value());
    let t = state.model.forward(&g, &state.params, &conv, 0).unwrap();
    assert_eq!(t.logits_e.shape(), vec![7]);
    assert_eq!(t.logits_i.shape(), vec![9]);
}

#[test]
fn masked_modalities_are_zero_tokens() {
    let config = Ei2Config {
        modality_mask: ModalitySet::only(Modality::Textual),
        ..tiny_config()
    };
    let state = ModelState::init(&config, 3).unwrap();
    let mut r = rng(4);
    let mut conv = random_conversation(&mut r, &config, 1, 0);
    conv.utterances[0].features.acoustic = None;
    conv.utterances[0].features.visual = None;
    let g = Graph::default();
    let tokens = state
        .model
        .modality_tokens(&g, &state.params, &conv.utterances[0], Task::Emotion)
        .unwrap()
        .value();
    assert!(tokens.row(0).iter().chain(tokens.row(1)).all(|&x| x == 0.0));
    assert!(tokens.row(2).iter().any(|&x| x != 0.0));
}

#[test]
fn missing_enabled_modality_is_a_data_error() {
    let config = tiny_config();
    let state = ModelState::init(&config, 3).unwrap();
    let mut r = rng(5);
    let mut conv = random_conversation(&mut r, &config, 2, 17);
    conv.utterances[1].features.acoustic = None;
    let g = Graph::default();
    match state.model.forward(&g, &state.params, &conv, 1) {
        Err(Error::Data(msg)) => {
            assert!(msg.contains("acoustic") && msg.contains("dia_17_utt_1"), "{msg}");
        }
        other => panic!("expected data error, got {other:?}"),
    }
}

#[test]
fn history_base_case_and_single_step() {
    let config = tiny_config();
    let state = ModelState::init(&config, 6).unwrap();
    let mut r = rng(7);
    let conv = random_conversation(&mut r, &config, 3, 0);
    let g = Graph::default();
    let m = &state.model;
    let empty = m.encode_history(&g, &state.params, &[]).unwrap().value();
    assert_eq!(empty.shape(), &[8]);
    assert!(empty.data().iter().all(|&x| x == 0.0));

    let first = &conv.utterances[0];
    let fh = m.encode_history(&g, &state.params, &[first]).unwrap().value();
    let mut finals = Vec::new();
    for modality in Modality::ALL {
        let feats = first.features.get(modality).unwrap();
        let frames = feats.shape()[0];
        let dim = feats.shape()[1];
        let mean: Vec<f64> = (0..dim)
            .map(|c| (0..frames).map(|r| feats.at(r, c)).sum::<f64>() / frames as f64)
            .collect();
        let row = g.constant(Tensor::matrix(1, dim, mean).unwrap());
        finals.push(m.history.gru(modality).encode(&g, &state.params, row).unwrap());
    }
    let joined = g.concat(&finals, 0).unwrap();
    let expected = m.history.projection.forward(&g, &state.params, joined).unwrap().value();
    assert!(fh.bitwise_eq(&expected));
}

#[test]
fn fuse_history_contracts() {
    let g = Graph::default();
    let mut r = rng(8);
    let f_star = g.constant(random(&mut r, &[3, 4], 1.0));
    let v = random(&mut r, &[4], 1.0);
    let f_h = g.constant(v.clone());
    let zero = g.constant(Tensor::zeros(&[4]));
    assert!(fuse_history(f_star, zero, true)
        .unwrap()
        .value()
        .bitwise_eq(&f_star.value()));
    assert!(fuse_history(f_star, f_h, false)
        .unwrap()
        .value()
        .bitwise_eq(&f_star.value()));
    let zeros = g.constant(Tensor::zeros(&[3, 4]));
    let out = fuse_history(zeros, f_h, true).unwrap().value();
    for row in 0..3 {
        assert_eq!(out.row(row), v.data());
    }
}

#[test]
fn binary_correlation_shape_and_uniform_weights() {
    let config = tiny_config();
    let state = ModelState::init(&config, 9).unwrap();
    let mut r = rng(10);
    let g = Graph::default();
    let f_gamma = g.constant(random(&mut r, &[3, 8], 1.0));
    let row = random(&mut r, &[1, 8], 1.0).to_vec();
    let f_beta = g.constant(Tensor::new(&[3, 8], row.repeat(3)).unwrap());
    let out = state
        .model
        .binary_correlation(&g, &state.params, f_gamma, f_beta, Task::Emotion)
        .unwrap();
    assert_eq!(out.shape(), vec![3, 8]);
    for branch in Task::BOTH {
        let mha = &state.model.branch(branch).triple;
        let (_, weights) = mha
            .forward_with_weights(&g, &state.params, f_gamma, f_beta, f_beta)
            .unwrap();
        for w in weights {
            assert!(w.value().data().iter().all(|a| (a - 1.0 / 3.0).abs() < 1e-15));
        }
    }
}

#[test]
fn gate_probe_and_annihilator() {
    let g = Graph::default();
    let one = g.constant(Tensor::vector(vec![1.0]));
    let zero = g.constant(Tensor::vector(vec![0.0]));
    let out = gate_regulate(one, zero, true).unwrap().item();
    assert!((out - 0.7310585786300049).abs() < 1e-15);
    let mut r = rng(11);
    let f_gb = g.constant(random(&mut r, &[3, 8], 5.0));
    let zeros = g.constant(Tensor::zeros(&[3, 8]));
    assert!(gate_regulate(zeros, f_gb, true)
        .unwrap()
        .value()
        .data()
        .iter()
        .all(|&x| x == 0.0));
    let f_gbg = g.constant(random(&mut r, &[3, 8], 5.0));
    assert!(gate_regulate(f_gbg, f_gb, false)
        .unwrap()
        .value()
        .bitwise_eq(&f_gbg.value()));
}

#[test]
fn classify_residual_identity() {
    let config = tiny_config();
    let state = ModelState::init(&config, 12).unwrap();
    let mut r = rng(13);
    let g = Graph::default();
    let f = g.constant(random(&mut r, &[3, 8], 1.0));
    let zeros = g.constant(Tensor::zeros(&[3, 8]));
    let m = &state.model;
    let (_, with_zero) = m.classify(&g, &state.params, Some(zeros), f, Task::Emotion).unwrap();
    let (_, alone) = m.classify(&g, &state.params, None, f, Task::Emotion).unwrap();
    assert!(with_zero.value().bitwise_eq(&alone.value()));
    let (_, intent) = m.classify(&g, &state.params, None, f, Task::Intent).unwrap();
    assert_eq!(intent.shape(), vec![9]);
}

#[test]
fn forward_is_finite_and_records_every_stage() {
    let config = tiny_config();
    let state = ModelState::init(&config, 14).unwrap();
    let mut r = rng(15);
    let conv = random_conversation(&mut r, &config, 4, 0);
    let g = Graph::default();
    for n in 0..4 {
        let t = state.model.forward(&g, &state.params, &conv, n).unwrap();
        let inter = t.interaction.expect("interaction enabled");
        for v in [
            t.f_star_e,
            t.f_star_i,
            t.f_e,
            t.f_i,
            inter.f_ei,
            inter.f_ie,
            inter.f_eie,
            inter.f_iei,
            inter.g_star_e,
            inter.g_star_i,
            t.g_e,
            t.g_i,
        ] {
            assert_eq!(v.shape(), vec![3, 8]);
            assert!(v.value().all_finite());
        }
        assert_eq!(t.f_h.unwrap().shape(), vec![8]);
        assert!(t.logits_e.value().all_finite() && t.logits_i.value().all_finite());
        // Branch direction: emotion queries emotion features.
        let expected = state
            .model
            .emotion_branch
            .binary
            .forward(&g, &state.params, t.f_e, t.f_i, t.f_i)
            .unwrap();
        assert!(inter.f_ei.value().bitwise_eq(&expected.value()));
        let g_star = inter.g_star_e.value();
        let bound = inter.f_eie.value();
        assert!(g_star.data().iter().zip(bound.data()).all(|(a, b)| a.abs() <= b.abs()));
    }
}

#[test]
fn conversation_pass_matches_per_index_pass_bitwise() {
    for use_history in [true, false] {
        let config = Ei2Config {
            use_history,
            modality_mask: "ta".parse().unwrap(),
            ..tiny_config()
        };
        let state = ModelState::init(&config, 16).unwrap();
        let mut r = rng(17);
        let conv = random_conversation(&mut r, &config, 5, 0);
        let g = Graph::default();
        let all = state.model.forward_conversation(&g, &state.params, &conv).unwrap();
        assert_eq!(all.len(), 5);
        for (n, t) in all.iter().enumerate() {
            let (e, i) = logits(&state, &conv, n);
            assert!(t.logits_e.value().bitwise_eq(&e));
            assert!(t.logits_i.value().bitwise_eq(&i));
        }
    }
}

#[test]
fn future_utterances_never_change_logits() {
    let config = tiny_config();
    let state = ModelState::init(&config, 18).unwrap();
    let mut r = rng(19);
    let conv = random_conversation(&mut r, &config, 5, 0);
    for n in 0..4 {
        let before = logits(&state, &conv, n);
        let mut altered = conv.clone();
        for u in &mut altered.utterances[n + 1..] {
            u.features = common::random_features(&mut r, &config);
        }
        let after = logits(&state, &altered, n);
        assert!(before.0.bitwise_eq(&after.0) && before.1.bitwise_eq(&after.1));
    }
}

#[test]
fn interaction_cut_isolates_emotion_from_intent_parameters() {
    let config = Ei2Config {
        use_interaction: false,
        ..tiny_config()
    };
    let base = ModelState::init(&config, 20).unwrap();
    let mut r = rng(21);
    let conv = random_conversation(&mut r, &config, 3, 0);
    let (reference, _) = logits(&base, &conv, 2);
    let prefixes = task_prefixes(Task::Intent);
    for trial in 0..20u64 {
        let mut state = base.clone();
        let mut pr = rng(1000 + trial);
        let ids: Vec<_> = state.params.ids().collect();
        let mut touched = 0;
        for id in ids {
            if prefixes.iter().any(|p| state.params.name(id).starts_with(p.as_str())) {
                let shape = state.params.get(id).shape().to_vec();
                state.params.set(id, random(&mut pr, &shape, 3.0)).unwrap();
                touched += 1;
            }
        }
        assert!(touched > 10);
        let (e, i) = logits(&state, &conv, 2);
        assert!(e.bitwise_eq(&reference), "trial {trial}");
        assert!(!i.bitwise_eq(&logits(&base, &conv, 2).1));
    }
}

#[test]
fn history_cut_ignores_history_features() {
    let config = Ei2Config {
        use_history: false,
        ..tiny_config()
    };
    let state = ModelState::init(&config, 22).unwrap();
    let mut r = rng(23);
    let conv = random_conversation(&mut r, &config, 4, 0);
    let reference = logits(&state, &conv, 3);
    for _ in 0..20 {
        let mut noisy = conv.clone();
        for u in &mut noisy.utterances[..3] {
            u.features = common::random_features(&mut r, &config);
        }
        let got = logits(&state, &noisy, 3);
        assert!(got.0.bitwise_eq(&reference.0) && got.1.bitwise_eq(&reference.1));
    }
}

#[test]
fn initialization_is_deterministic_and_paths_unique() {
    let config = tiny_config();
    let a = ModelState::init(&config, 5).unwrap();
    let b = ModelState::init(&config, 5).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, ModelState::init(&config, 6).unwrap().params);
    let mut names: Vec<&str> = a.params.iter().map(|(_, n, _)| n).collect();
    let total = names.len();
    names.sort_unstable();
    names.dedup();
    assert_eq!(names.len(), total);
    for prefix in [
        "emotion_encoder/",
        "intent_encoder/",
        "history/",
        "interaction/emotion/",
        "interaction/intent/",
        "classifier/emotion/",
        "classifier/intent/",
    ] {
        assert!(names.iter().any(|n| n.starts_with(prefix)), "{prefix}");
    }
}

#[test]
fn model_checkpoint_round_trip() {
    let config = Ei2Config {
        use_gate: false,
        modality_mask: "av".parse().unwrap(),
        ..tiny_config()
    };
    let state = ModelState::init(&config, 24).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.eiup");
    state.save(&path, Dtype::F64).unwrap();
    let back = ModelState::load(&path).unwrap();
    assert_eq!(back.params, state.params);
    assert_eq!(back.config(), state.config());
}

#[test]
fn full_model_passes_grad_check() {
    let config = Ei2Config {
        hidden: 4,
        ffn_dim: 8,
        cnn_filters: 2,
        ..tiny_config()
    };
    let mut state = ModelState::init(&config, 25).unwrap();
    let mut r = rng(26);
    let ids: Vec<_> = state.params.ids().collect();
    for id in ids {
        let mut t = state.params.get(id).clone();
        for x in t.data_mut() {
            *x += r.random_range(-0.5..0.5);
        }
        state.params.set(id, t).unwrap();
    }
    let conv = random_conversation(&mut r, &config, 3, 0);
    let probe_e = random(&mut r, &[7], 1.0);
    let probe_i = random(&mut r, &[9], 1.0);
    let model = state.model.clone();
    let report = grad_check(
        &mut state.params,
        |g, p| {
            let mut total = g.constant(Tensor::scalar(0.0));
            for t in model.forward_conversation(g, p, &conv)? {
                let e = t.logits_e.mul(g.constant(probe_e.clone()))?.sum_all();
                let i = t.logits_i.mul(g.constant(probe_i.clone()))?.sum_all();
                total = total.add(e)?.add(i)?;
            }
            Ok(total)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(
        report.max_rel_error < 1e-4,
        "{} at {}[{}]: analytic {} numeric {}",
        report.max_rel_error,
        report.worst_param,
        report.worst_index,
        report.analytic,
        report.numeric
    );
    assert_eq!(report.coords_checked, state.params.numel());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gate_never_amplifies(xs in proptest::collection::vec(-50.0f64..50.0, 24), ys in proptest::collection::vec(-50.0f64..50.0, 24)) {
        let g = Graph::default();
        let a = g.constant(Tensor::new(&[3, 8], xs.clone()).unwrap());
        let b = g.constant(Tensor::new(&[3, 8], ys).unwrap());
        let out = gate_regulate(a, b, true).unwrap().value();
        for (o, x) in out.data().iter().zip(&xs) {
            prop_assert!(o.abs() <= x.abs());
        }
    }

    #[test]
    fn use_interaction_false_ignores_intent_features(seed in 0u64..500) {
        let config = Ei2Config { use_interaction: false, ..tiny_config() };
        let state = ModelState::init(&config, seed).unwrap();
        let mut r = rng(seed);
        let g = Graph::default();
        let f_e = g.constant(random(&mut r, &[3, 8], 1.0));
        let t = state.model.head(&g, &state.params, f_e, g.constant(random(&mut r, &[3, 8], 1.0)), None).unwrap();
        let u = state.model.head(&g, &state.params, f_e, g.constant(random(&mut r, &[3, 8], 1.0)), None).unwrap();
        prop_assert!(t.logits_e.value().bitwise_eq(&u.logits_e.value()));
    }
}
