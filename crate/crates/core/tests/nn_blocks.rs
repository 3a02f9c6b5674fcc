use eiu_core::nn::checkpoint::{self, Dtype};
use eiu_core::nn::{init_params, LayerKind, LayerParams, LayerSpec, LAYER_NORM_EPS};
use eiu_core::tensor::{grad_check, GradCheckOptions, Graph, ParamStore, Tensor, Var};
use eiu_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Replaces every parameter with uniform noise so biases and norms are
/// exercised away from their initial values.
fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        store.set(id, random(&mut rng, &shape, scale)).unwrap();
    }
}

fn probed<'g>(g: &'g Graph, out: Var<'g>, seed: u64) -> Var<'g> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let w = g.constant(random(&mut rng, &out.shape(), 1.0));
    out.mul(w).unwrap().sum_all()
}

fn input<'g>(g: &'g Graph, store: &ParamStore, name: &str) -> Var<'g> {
    g.param(store, store.lookup(name).unwrap())
}

fn assert_grad_ok<F>(store: &mut ParamStore, f: F, what: &str)
where
    F: for<'g> Fn(&'g Graph, &ParamStore) -> eiu_core::Result<Var<'g>>,
{
    let report = grad_check(store, f, &GradCheckOptions::default()).unwrap();
    assert!(
        report.max_rel_error < 1e-4,
        "{what}: rel error {} at {}[{}] (analytic {}, numeric {})",
        report.max_rel_error,
        report.worst_param,
        report.worst_index,
        report.analytic,
        report.numeric
    );
}

#[test]
fn init_is_deterministic_and_shaped_by_spec() {
    let spec = LayerSpec::linear(4, 3);
    let (a, pa) = init_params(&spec, 7).unwrap();
    let (b, _) = init_params(&spec, 7).unwrap();
    assert_eq!(a, b);
    let (c, _) = init_params(&spec, 8).unwrap();
    assert_ne!(a, c);
    let LayerParams::Linear(lin) = pa else { panic!() };
    assert_eq!(a.get(lin.weight).shape(), &[4, 3]);
    assert_eq!(a.get(lin.bias.unwrap()).shape(), &[3]);
    assert!(a.get(lin.bias.unwrap()).data().iter().all(|&x| x == 0.0));
    let bound = 1.0 / 2.0;
    assert!(a.get(lin.weight).data().iter().all(|x| x.abs() <= bound));
}

#[test]
fn weights_respect_fan_in_bound_for_every_kind() {
    let specs = [
        LayerSpec::lstm(10, 6),
        LayerSpec::gru(5, 7),
        LayerSpec::textcnn(12, 8, &[3, 4, 5], 4),
        LayerSpec::mha(16, 4),
        LayerSpec::transformer_layer(16, 4, 32),
    ];
    for spec in &specs {
        let (store, _) = init_params(spec, 3).unwrap();
        for (_, name, t) in store.iter() {
            if t.shape().len() == 2 {
                let bound = 1.0 / (t.shape()[0] as f64).sqrt();
                assert!(t.data().iter().all(|x| x.abs() <= bound), "{name}");
            } else if name.ends_with("gamma") {
                assert!(t.data().iter().all(|&x| x == 1.0), "{name}");
            } else {
                assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
            }
        }
    }
}

#[test]
fn invalid_specs_are_contract_errors() {
    assert!(matches!(
        init_params(&LayerSpec::mha(128, 3), 0),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        init_params(&LayerSpec::textcnn(8, 8, &[], 4), 0),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        init_params(&LayerSpec::textcnn(8, 8, &[3, 0], 4), 0),
        Err(Error::Contract(_))
    ));
    let mut spec = LayerSpec::linear(3, 3);
    spec.output_dim = 0;
    assert!(matches!(init_params(&spec, 0), Err(Error::Contract(_))));
}

#[test]
fn mha_head_dim_for_model_width() {
    let (_, params) = init_params(&LayerSpec::mha(128, 4), 0).unwrap();
    let LayerParams::Mha(mha) = params else { panic!() };
    assert_eq!(mha.head_dim(), 32);
    assert_eq!(LayerSpec::mha(128, 4).kind, LayerKind::Mha);
}

#[test]
fn linear_hand_values() {
    let (mut store, params) = init_params(&LayerSpec::linear(2, 1), 0).unwrap();
    let LayerParams::Linear(lin) = params else { panic!() };
    store
        .set(lin.weight, Tensor::from_rows(&[vec![1.0], vec![1.0]]))
        .unwrap();
    let g = Graph::default();
    let x = g.constant(Tensor::vector(vec![2.0, 3.0]));
    let y = lin.forward(&g, &store, x).unwrap().value();
    assert_eq!(y.shape(), &[1]);
    assert_eq!(y.data(), &[5.0]);

    let (mut store, params) = init_params(&LayerSpec::linear(3, 3), 1).unwrap();
    let LayerParams::Linear(lin) = params else { panic!() };
    store.set(lin.weight, Tensor::eye(3)).unwrap();
    let x = g.constant(Tensor::from_rows(&[vec![1.5, -2.0, 0.25], vec![4.0, 5.0, 6.0]]));
    assert!(lin.forward(&g, &store, x).unwrap().value().bitwise_eq(&x.value()));

    store.set(lin.weight, Tensor::zeros(&[3, 3])).unwrap();
    store
        .set(lin.bias.unwrap(), Tensor::vector(vec![0.5, -1.0, 2.0]))
        .unwrap();
    // a graph snapshots parameters when first bound, so rebind on a new tape
    let g = Graph::default();
    let x = g.constant(Tensor::from_rows(&[vec![1.5, -2.0, 0.25], vec![4.0, 5.0, 6.0]]));
    let y = lin.forward(&g, &store, x).unwrap().value();
    assert_eq!(y.row(0), &[0.5, -1.0, 2.0]);
    assert_eq!(y.row(1), &[0.5, -1.0, 2.0]);

    let bad = g.constant(Tensor::zeros(&[2]));
    assert!(matches!(lin.forward(&g, &store, bad), Err(Error::Shape(_))));
}

#[test]
fn lstm_singleton_pooling_and_width() {
    let (store, params) = init_params(&LayerSpec::lstm(6, 128), 11).unwrap();
    let LayerParams::Lstm(lstm) = params else { panic!() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = Graph::default();
    let x = g.constant(random(&mut rng, &[1, 6], 1.0));
    let states = lstm.run(&g, &store, x).unwrap().value();
    let pooled = lstm.encode(&g, &store, x).unwrap().value();
    assert_eq!(pooled.shape(), &[128]);
    assert_eq!(pooled.data(), states.data());

    let a = random(&mut rng, &[1, 6], 1.0);
    let b = random(&mut rng, &[1, 6], 1.0);
    let seq = |rows: [&Tensor; 3]| {
        let data: Vec<f64> = rows.iter().flat_map(|t| t.to_vec()).collect();
        g.constant(Tensor::new(&[3, 6], data).unwrap())
    };
    let first = lstm.encode(&g, &store, seq([&a, &a, &b])).unwrap().value();
    let swapped = lstm.encode(&g, &store, seq([&a, &a, &b])).unwrap().value();
    assert!(first.bitwise_eq(&swapped));
}

#[test]
fn gru_single_step_matches_hand_recurrence() {
    let (mut store, params) = init_params(&LayerSpec::gru(3, 2), 5).unwrap();
    randomize(&mut store, 9, 0.8);
    let LayerParams::Gru(gru) = params else { panic!() };
    let x = [0.3, -0.7, 1.1];
    let g = Graph::default();
    let out = gru
        .encode(&g, &store, g.constant(Tensor::matrix(1, 3, x.to_vec()).unwrap()))
        .unwrap()
        .value();

    let w = store.get(gru.w_ih);
    let b_ih = store.get(gru.b_ih).data();
    let b_hh = store.get(gru.b_hh).data();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let pre = |col: usize| (0..3).map(|k| x[k] * w.at(k, col)).sum::<f64>() + b_ih[col];
    for j in 0..2 {
        let r = sig(pre(j) + b_hh[j]);
        let z = sig(pre(2 + j) + b_hh[2 + j]);
        let n = (pre(4 + j) + r * b_hh[4 + j]).tanh();
        let h = (1.0 - z) * n;
        assert!((out.data()[j] - h).abs() < 1e-14, "{j}: {} vs {h}", out.data()[j]);
    }
}

#[test]
fn gru_zero_parameters_fixed_point() {
    let (mut store, params) = init_params(&LayerSpec::gru(4, 3), 5).unwrap();
    let LayerParams::Gru(gru) = params else { panic!() };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::zeros(&shape)).unwrap();
    }
    let g = Graph::default();
    let out = gru.encode(&g, &store, g.constant(Tensor::zeros(&[5, 4]))).unwrap();
    assert!(out.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn recurrent_encoders_ignore_masked_padding() {
    let (lstm_store, lp) = init_params(&LayerSpec::lstm(4, 5), 1).unwrap();
    let (gru_store, gp) = init_params(&LayerSpec::gru(4, 5), 2).unwrap();
    let (LayerParams::Lstm(lstm), LayerParams::Gru(gru)) = (lp, gp) else {
        panic!()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let body = random(&mut rng, &[3, 4], 1.0);
    let mut padded = body.to_vec();
    padded.extend(std::iter::repeat_n(0.0, 2 * 4));
    let padded = Tensor::new(&[5, 4], padded).unwrap();

    let g = Graph::default();
    let (b, p) = (g.constant(body), g.constant(padded));
    let l_plain = lstm.encode(&g, &lstm_store, b).unwrap().value();
    let l_masked = lstm.encode_masked(&g, &lstm_store, p, 3).unwrap().value();
    assert!(l_plain.bitwise_eq(&l_masked));
    let g_plain = gru.encode(&g, &gru_store, b).unwrap().value();
    let g_masked = gru.encode_masked(&g, &gru_store, p, 3).unwrap().value();
    assert!(g_plain.bitwise_eq(&g_masked));

    assert!(matches!(
        lstm.encode_masked(&g, &lstm_store, p, 0),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        gru.encode_masked(&g, &gru_store, p, 6),
        Err(Error::Contract(_))
    ));
}

#[test]
fn textcnn_output_width_and_short_inputs() {
    let (store, params) = init_params(&LayerSpec::textcnn(16, 128, &[3, 4, 5], 64), 0).unwrap();
    let LayerParams::TextCnn(cnn) = params else { panic!() };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = Graph::default();
    for len in [1, 4, 9] {
        let out = cnn
            .encode(&g, &store, g.constant(random(&mut rng, &[len, 16], 1.0)))
            .unwrap();
        assert_eq!(out.shape(), vec![128]);
    }
}

#[test]
fn textcnn_constant_input_is_length_invariant() {
    let (mut store, params) = init_params(&LayerSpec::textcnn(3, 4, &[1], 5), 0).unwrap();
    randomize(&mut store, 1, 1.0);
    let LayerParams::TextCnn(cnn) = params else { panic!() };
    let g = Graph::default();
    let row = [0.4, -0.2, 0.9];
    let at = |len: usize| {
        let data = row.iter().copied().cycle().take(3 * len).collect();
        cnn.encode(&g, &store, g.constant(Tensor::new(&[len, 3], data).unwrap()))
            .unwrap()
            .value()
    };
    let base = at(1);
    for len in [2, 5, 13] {
        assert!(at(len).bitwise_eq(&base));
    }
}

#[test]
fn attention_over_single_key_is_value_projection() {
    let (mut store, params) = init_params(&LayerSpec::mha(8, 2), 3).unwrap();
    randomize(&mut store, 4, 0.5);
    let LayerParams::Mha(mha) = params else { panic!() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = Graph::default();
    let q = g.constant(random(&mut rng, &[3, 8], 1.0));
    let kv = g.constant(random(&mut rng, &[1, 8], 1.0));
    let (out, weights) = mha.forward_with_weights(&g, &store, q, kv, kv).unwrap();
    for w in &weights {
        assert!(w.value().data().iter().all(|&a| a == 1.0));
    }
    let v = mha.value.forward(&g, &store, kv).unwrap();
    let expected = mha.out.forward(&g, &store, v).unwrap().value();
    let out = out.value();
    for r in 0..3 {
        assert_eq!(out.row(r), expected.row(0));
    }
}

#[test]
fn identical_keys_give_uniform_weights() {
    let (mut store, params) = init_params(&LayerSpec::mha(8, 4), 3).unwrap();
    randomize(&mut store, 6, 0.5);
    let LayerParams::Mha(mha) = params else { panic!() };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = Graph::default();
    let row = random(&mut rng, &[1, 8], 1.0).to_vec();
    let keys = g.constant(Tensor::new(&[5, 8], row.repeat(5)).unwrap());
    let q = g.constant(random(&mut rng, &[2, 8], 1.0));
    let (_, weights) = mha.forward_with_weights(&g, &store, q, keys, keys).unwrap();
    assert_eq!(weights.len(), 4);
    for w in weights {
        for a in w.value().data() {
            assert!((a - 0.2).abs() < 1e-15);
        }
    }
}

#[test]
fn transformer_preserves_shape_and_normalizes_rows() {
    let (store, params) = init_params(&LayerSpec::transformer_layer(16, 4, 32), 2).unwrap();
    let LayerParams::TransformerLayer(layer) = params else {
        panic!()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let g = Graph::default();
    for len in 1..=5 {
        let x = g.constant(random(&mut rng, &[len, 16], 2.0));
        let y = layer.forward(&g, &store, x).unwrap().value();
        assert_eq!(y.shape(), &[len, 16]);
        assert!(y.all_finite());
        // gamma = 1 and beta = 0 at init, so the output rows are the
        // pre-affine normalized rows.
        for r in 0..len {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!(var <= 1.0 && 1.0 - var < 1e-4, "var {var}");
        }
    }
}

#[test]
fn layer_norm_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g = Graph::default();
    let x = random(&mut rng, &[6, 32], 20.0);
    let y = g.constant(x.clone()).layer_norm(LAYER_NORM_EPS).unwrap().value();
    for r in 0..6 {
        let xr = x.row(r);
        let xm = xr.iter().sum::<f64>() / 32.0;
        let xv = xr.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / 32.0;
        let row = y.row(r);
        let mean = row.iter().sum::<f64>() / 32.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - xv / (xv + LAYER_NORM_EPS)).abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6, "input var {xv}");
    }
}

#[test]
fn linear_and_lstm_pass_grad_check_at_five_points() {
    for point in 0..5u64 {
        let (mut store, params) = init_params(&LayerSpec::linear(4, 3), point).unwrap();
        let LayerParams::Linear(lin) = params else { panic!() };
        randomize(&mut store, 100 + point, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + point);
        store.insert("x", random(&mut rng, &[2, 4], 1.0)).unwrap();
        assert_grad_ok(
            &mut store,
            |g, s| Ok(probed(g, lin.forward(g, s, input(g, s, "x"))?, point)),
            "linear",
        );

        let (mut store, params) = init_params(&LayerSpec::lstm(3, 4), point).unwrap();
        let LayerParams::Lstm(lstm) = params else { panic!() };
        randomize(&mut store, 300 + point, 0.8);
        store.insert("x", random(&mut rng, &[4, 3], 1.0)).unwrap();
        assert_grad_ok(
            &mut store,
            |g, s| Ok(probed(g, lstm.encode(g, s, input(g, s, "x"))?, point)),
            "lstm",
        );
    }
}

#[test]
fn gru_passes_grad_check_at_five_points() {
    for point in 0..5u64 {
        let (mut store, params) = init_params(&LayerSpec::gru(3, 4), point).unwrap();
        let LayerParams::Gru(gru) = params else { panic!() };
        randomize(&mut store, 400 + point, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(500 + point);
        store.insert("x", random(&mut rng, &[3, 3], 1.0)).unwrap();
        assert_grad_ok(
            &mut store,
            |g, s| {
                let states = gru.run_all(g, s, input(g, s, "x"))?;
                let all = g.stack(&states)?;
                Ok(probed(g, all, point))
            },
            "gru",
        );
    }
}

#[test]
fn textcnn_passes_grad_check_at_five_points() {
    for point in 0..5u64 {
        let (mut store, params) = init_params(&LayerSpec::textcnn(3, 4, &[1, 2, 3], 3), point).unwrap();
        let LayerParams::TextCnn(cnn) = params else { panic!() };
        randomize(&mut store, 600 + point, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(700 + point);
        store.insert("x", random(&mut rng, &[5, 3], 1.0)).unwrap();
        assert_grad_ok(
            &mut store,
            |g, s| Ok(probed(g, cnn.encode(g, s, input(g, s, "x"))?, point)),
            "textcnn",
        );
    }
}

#[test]
fn attention_blocks_pass_grad_check_at_five_points() {
    for point in 0..5u64 {
        let (mut store, params) = init_params(&LayerSpec::mha(6, 2), point).unwrap();
        let LayerParams::Mha(mha) = params else { panic!() };
        randomize(&mut store, 800 + point, 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(900 + point);
        store.insert("q", random(&mut rng, &[3, 6], 1.0)).unwrap();
        store.insert("kv", random(&mut rng, &[4, 6], 1.0)).unwrap();
        assert_grad_ok(
            &mut store,
            |g, s| {
                let kv = input(g, s, "kv");
                Ok(probed(g, mha.forward(g, s, input(g, s, "q"), kv, kv)?, point))
            },
            "mha",
        );

        let (mut store, params) = init_params(&LayerSpec::transformer_layer(6, 2, 8), point).unwrap();
        let LayerParams::TransformerLayer(layer) = params else {
            panic!()
        };
        randomize(&mut store, 1000 + point, 0.8);
        store.insert("x", random(&mut rng, &[3, 6], 1.0)).unwrap();
        assert_grad_ok(
            &mut store,
            |g, s| Ok(probed(g, layer.forward(g, s, input(g, s, "x"))?, point)),
            "transformer",
        );
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let (mut store, _) = init_params(&LayerSpec::transformer_layer(8, 2, 16), 1).unwrap();
    store.insert("extra/scalar", Tensor::scalar(-0.0)).unwrap();
    store
        .insert("extra/odd", Tensor::vector(vec![f64::MIN_POSITIVE, 1e300, -3.5]))
        .unwrap();
    let mut bytes = Vec::new();
    checkpoint::write(&store, Dtype::F64, &mut bytes).unwrap();
    assert_eq!(&bytes[..4], b"EIUP");
    assert_eq!(bytes[4], 1);
    let back = checkpoint::read(bytes.as_slice()).unwrap();
    assert_eq!(back, store);
    for ((_, na, a), (_, nb, b)) in store.iter().zip(back.iter()) {
        assert_eq!(na, nb);
        assert_eq!(a.shape(), b.shape());
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.eiup");
    checkpoint::save(&store, Dtype::F64, &path).unwrap();
    assert_eq!(checkpoint::load(&path).unwrap(), store);
}

#[test]
fn f32_checkpoint_round_trips_single_precision_values() {
    let mut store = ParamStore::new();
    store
        .insert("w", Tensor::vector(vec![0.1f32 as f64, -2.75, 3e-20f32 as f64]))
        .unwrap();
    let mut bytes = Vec::new();
    checkpoint::write(&store, Dtype::F32, &mut bytes).unwrap();
    assert_eq!(bytes.len(), 4 + 1 + 2 + 1 + 1 + 4 + 4 + 3 * 4);
    assert_eq!(checkpoint::read(bytes.as_slice()).unwrap(), store);
}

#[test]
fn malformed_checkpoints_are_format_errors() {
    let (store, _) = init_params(&LayerSpec::linear(3, 2), 0).unwrap();
    let mut bytes = Vec::new();
    checkpoint::write(&store, Dtype::F64, &mut bytes).unwrap();

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(checkpoint::read(bad_magic.as_slice()), Err(Error::Format(_))));
    let mut bad_version = bytes.clone();
    bad_version[4] = 9;
    assert!(matches!(
        checkpoint::read(bad_version.as_slice()),
        Err(Error::Format(_))
    ));
    let truncated = &bytes[..bytes.len() - 3];
    assert!(matches!(checkpoint::read(truncated), Err(Error::Format(_))));
}

#[test]
fn restore_requires_matching_paths_and_shapes() {
    let (mut target, _) = init_params(&LayerSpec::linear(3, 2), 0).unwrap();
    let (source, _) = init_params(&LayerSpec::linear(3, 2), 1).unwrap();
    checkpoint::restore(&mut target, &source).unwrap();
    assert_eq!(target, source);

    let (other, _) = init_params(&LayerSpec::linear(2, 2), 1).unwrap();
    assert!(matches!(
        checkpoint::restore(&mut target, &other),
        Err(Error::Format(_))
    ));
    let (lstm, _) = init_params(&LayerSpec::lstm(3, 2), 1).unwrap();
    assert!(checkpoint::restore(&mut target, &lstm).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_rows_sum_to_one(seed in 0u64..1000, lq in 1usize..5, lk in 1usize..6) {
        let (mut store, params) = init_params(&LayerSpec::mha(8, 4), seed).unwrap();
        randomize(&mut store, seed, 2.0);
        let LayerParams::Mha(mha) = params else { panic!() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let g = Graph::default();
        let q = g.constant(random(&mut rng, &[lq, 8], 3.0));
        let kv = g.constant(random(&mut rng, &[lk, 8], 3.0));
        let (_, weights) = mha.forward_with_weights(&g, &store, q, kv, kv).unwrap();
        for w in weights {
            let w = w.value();
            for r in 0..lq {
                let s: f64 = w.row(r).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn init_is_a_pure_function(seed in any::<u64>(), din in 1usize..6, dout in 1usize..6) {
        let spec = LayerSpec::gru(din, dout);
        prop_assert_eq!(init_params(&spec, seed).unwrap().0, init_params(&spec, seed).unwrap().0);
    }
}
