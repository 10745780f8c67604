use autodiff::{grad_check, ParamStore, Rng, Tape, Tensor};
use proptest::prelude::*;
use sememnn::data::{Batch, EncodedExample};
use sememnn::model::{
    check_model, forward, init_params, layers, param_count, param_specs, predict, Head, ModelConfig, SeMemNN, SemanticSource,
};

fn toy_config(head: Head, source: SemanticSource) -> ModelConfig {
    let mut c = ModelConfig::new(12, 3, head, source).with_width(4);
    c.lstm_units = 3;
    c.attention_width = 4;
    c.abstract_len = 5;
    c.content_len = 6;
    c
}

fn example(rng: &mut Rng, cfg: &ModelConfig, n_abs: usize, n_ct: usize, label: usize) -> EncodedExample {
    let mut ids = |len: usize, n: usize| {
        let ids: Vec<u32> = (0..len).map(|i| if i < n { 1 + rng.below(cfg.vocab_size as u64 - 1) as u32 } else { 0 }).collect();
        let mask: Vec<bool> = (0..len).map(|i| i < n).collect();
        (ids, mask)
    };
    let (abstract_ids, abstract_mask) = ids(cfg.abstract_len, n_abs);
    let (content_ids, content_mask) = ids(cfg.content_len, n_ct);
    EncodedExample { label, abstract_ids, abstract_mask, content_ids, content_mask }
}

fn toy_batch(cfg: &ModelConfig, seed: u64) -> Batch {
    let mut rng = Rng::new(seed);
    let exs = [
        example(&mut rng, cfg, 5, 6, 0),
        example(&mut rng, cfg, 2, 4, 1),
        example(&mut rng, cfg, 3, 1, 2),
    ];
    Batch::from_examples(&exs, cfg.abstract_len, cfg.content_len)
}

fn all_configs() -> Vec<(Head, SemanticSource)> {
    Head::ALL.iter().flat_map(|&h| SemanticSource::ALL.iter().map(move |&s| (h, s))).collect()
}

/// Pads every sequence of `ex` out to new lengths.
fn repad(ex: &EncodedExample, la: usize, lc: usize) -> EncodedExample {
    let grow = |ids: &[u32], mask: &[bool], n: usize| {
        let mut ids = ids.to_vec();
        let mut mask = mask.to_vec();
        ids.resize(n, 0);
        mask.resize(n, false);
        (ids, mask)
    };
    let (abstract_ids, abstract_mask) = grow(&ex.abstract_ids, &ex.abstract_mask, la);
    let (content_ids, content_mask) = grow(&ex.content_ids, &ex.content_mask, lc);
    EncodedExample { label: ex.label, abstract_ids, abstract_mask, content_ids, content_mask }
}

#[test]
fn full_model_gradient_check_all_configs() {
    for (head, source) in all_configs() {
        let cfg = toy_config(head, source);
        for seed in [0, 1, 2] {
            let check = check_model(&cfg, seed, 1e-5, 1e-4, None).unwrap();
            assert!(check.relu_margin > 10.0 * 1e-5, "{head}/{source}: ReLU input {} too close to the kink", check.relu_margin);
            assert!(check.report.passed(), "{head}/{source} seed {seed}\n{}", check.report);
            assert_eq!(check.report.params.len(), param_specs(&cfg).len());
        }
    }
}

#[test]
fn corrupted_relu_is_caught_by_model_check() {
    let cfg = toy_config(Head::L, SemanticSource::Abs);
    let check = check_model(&cfg, 0, 1e-5, 1e-4, Some(autodiff::OpKind::Relu)).unwrap();
    let failed: Vec<&str> = check.report.failures().map(|p| p.name.as_str()).collect();
    assert!(failed.contains(&"memory.P") && failed.contains(&"memory.Z"), "{failed:?}");
    assert!(!failed.contains(&"out.b"));
}

#[test]
fn init_is_deterministic_and_shaped() {
    let cfg = ModelConfig::new(300, 4, Head::SAB, SemanticSource::Ct);
    let a: ParamStore<f32> = init_params(&cfg, &mut Rng::new(1)).unwrap();
    let b: ParamStore<f32> = init_params(&cfg, &mut Rng::new(1)).unwrap();
    assert!(a.bit_identical(&b));
    let c: ParamStore<f32> = init_params(&cfg, &mut Rng::new(2)).unwrap();
    assert!(!a.bit_identical(&c));
    assert_eq!(a.get("memory.P").unwrap().shape(), [128, 128]);
    assert_eq!(a.get("memory.Z").unwrap().shape(), [128, 128]);
    assert!(a.get("embed.E").unwrap().data()[..128].iter().all(|&v| v == 0.0));
    let e = a.get("embed.E").unwrap().data();
    assert!(e.iter().all(|&v| v.abs() < 0.05));
    let bias = a.get("head.fwd.bias").unwrap().data();
    assert!(bias[128..256].iter().all(|&v| v == 1.0));
    assert!(bias[..128].iter().chain(&bias[256..]).all(|&v| v == 0.0));
    let names = a.names();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
}

#[test]
fn parameter_count_closed_form() {
    let mut cfg = ModelConfig::new(50_000, 4, Head::SAB, SemanticSource::Ct);
    // V·d + d·D + m·M + 2·(4u(d+m) + 4u·u + 4u) + 3·(2u)² + 2u·C + C
    assert_eq!(param_count(&cfg), 6_400_000 + 16_384 + 16_384 + 2 * 197_120 + 196_608 + 1_028);
    for (head, source) in all_configs() {
        cfg.classifier = head;
        cfg.semantic_source = source;
        cfg.vocab_size = 97;
        let store: ParamStore<f32> = init_params(&cfg, &mut Rng::new(0)).unwrap();
        assert_eq!(store.num_scalars(), param_count(&cfg), "{head}");
    }
}

#[test]
fn trace_invariants() {
    for (head, source) in all_configs() {
        let cfg = toy_config(head, source);
        let model = SeMemNN::<f64>::new(cfg.clone(), 3).unwrap();
        for t in model.trace(&toy_batch(&cfg, 5)).unwrap() {
            let s: f64 = t.addr.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
            assert!(t.addr.iter().all(|&a| a > 0.0));
            assert!(t.fused.iter().all(|&o| o >= 0.0));
            assert_eq!(t.logits.len(), 3);
        }
    }
}

#[test]
fn default_config_gives_four_logits() {
    let cfg = ModelConfig::new(50, 4, Head::L, SemanticSource::Abs);
    let model = SeMemNN::<f32>::new(cfg.clone(), 0).unwrap();
    let mut rng = Rng::new(1);
    let ex = example(&mut rng, &cfg, 7, 40, 2);
    let batch = Batch::from_examples([&ex], 32, 256);
    assert_eq!(model.logits_of(&batch).unwrap().len(), 4);
}

#[test]
fn padding_invariance() {
    for (head, source) in all_configs() {
        let cfg = toy_config(head, source);
        let model = SeMemNN::<f32>::new(cfg.clone(), 9).unwrap();
        let batch = toy_batch(&cfg, 6);
        let base = model.logits_of(&batch).unwrap();
        let mut rng = Rng::new(6);
        let exs: Vec<EncodedExample> = [(5, 6, 0), (2, 4, 1), (3, 1, 2)]
            .iter()
            .map(|&(a, c, l)| example(&mut rng, &cfg, a, c, l))
            .collect();
        let (la, lc) = (cfg.abstract_len + 7, cfg.content_len + 3);
        let padded: Vec<EncodedExample> = exs.iter().map(|e| repad(e, la, lc)).collect();
        let mut wide = cfg.clone();
        wide.abstract_len = la;
        wide.content_len = lc;
        let wide_model = SeMemNN::from_params(wide, model.params.clone()).unwrap();
        let longer = wide_model.logits_of(&Batch::from_examples(&padded, la, lc)).unwrap();
        assert_eq!(base, longer, "{head}/{source}");
    }
}

#[test]
fn batch_rows_are_independent() {
    for (head, source) in all_configs() {
        let cfg = toy_config(head, source);
        let model = SeMemNN::<f32>::new(cfg.clone(), 2).unwrap();
        let mut rng = Rng::new(12);
        let ex = example(&mut rng, &cfg, 3, 5, 1);
        let one = model.logits_of(&Batch::from_examples([&ex], cfg.abstract_len, cfg.content_len)).unwrap();
        let two = model.logits_of(&Batch::from_examples([&ex, &ex], cfg.abstract_len, cfg.content_len)).unwrap();
        assert_eq!(&two[..3], &one[..]);
        assert_eq!(&two[3..], &one[..]);
    }
}

#[test]
fn source_choice_irrelevant_when_memory_is_zero() {
    for head in Head::ALL {
        let ct = toy_config(head, SemanticSource::Ct);
        let mut model = SeMemNN::<f32>::new(ct.clone(), 5).unwrap();
        model.params.get_mut("memory.Z").unwrap().data_mut().fill(0.0);
        let batch = toy_batch(&ct, 8);
        let a = model.logits_of(&batch).unwrap();
        let abs = SeMemNN::from_params(toy_config(head, SemanticSource::Abs), model.params.clone()).unwrap();
        let b = abs.logits_of(&batch).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        // With a live memory the two variants differ.
        let live_ct = SeMemNN::<f32>::new(ct.clone(), 5).unwrap();
        let live_abs = SeMemNN::from_params(toy_config(head, SemanticSource::Abs), live_ct.params.clone()).unwrap();
        assert_ne!(live_ct.logits_of(&batch).unwrap(), live_abs.logits_of(&batch).unwrap());
    }
}

#[test]
fn zero_head_weights_give_output_bias() {
    for (head, source) in all_configs() {
        let cfg = toy_config(head, source);
        let mut model = SeMemNN::<f64>::new(cfg.clone(), 1).unwrap();
        for p in model.params.iter_mut() {
            if p.name.starts_with("head.") || p.name == "out.w" {
                p.tensor.data_mut().fill(0.0);
            }
        }
        model.params.get_mut("out.b").unwrap().data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let logits = model.logits_of(&toy_batch(&cfg, 2)).unwrap();
        for row in logits.chunks(3) {
            assert_eq!(row, [0.5, -1.0, 2.0]);
        }
    }
}

#[test]
fn palindrome_gives_equal_directional_states() {
    let cfg = toy_config(Head::B, SemanticSource::Ct);
    let mut model = SeMemNN::<f64>::new(cfg.clone(), 4).unwrap();
    for suffix in ["bias", "w_hh", "w_ih"] {
        let fwd = model.params.get(&format!("head.fwd.{suffix}")).unwrap().data().to_vec();
        model.params.get_mut(&format!("head.bwd.{suffix}")).unwrap().data_mut().copy_from_slice(&fwd);
    }
    let ex = EncodedExample {
        label: 0,
        abstract_ids: vec![3, 7, 5, 7, 3],
        abstract_mask: vec![true; 5],
        content_ids: vec![2, 4, 0, 0, 0, 0],
        content_mask: vec![true, true, false, false, false, false],
    };
    let batch = Batch::from_examples([&ex], 5, 6);
    let mut tape = model.tape();
    let f = forward(&mut tape, &cfg, &batch).unwrap();
    let e = tape.param("embed.E").unwrap();
    let embeds = layers::embed_sequence(&mut tape, e, &batch.abstract_ids, 1, 5).unwrap();
    let tiled = tape.repeat_steps(f.fused, 5).unwrap();
    let x = tape.concat(embeds, tiled).unwrap();
    let wf = layers::LstmWeights::from_params(&mut tape, "head.fwd").unwrap();
    let wb = layers::LstmWeights::from_params(&mut tape, "head.bwd").unwrap();
    let fw = layers::lstm_sequence(&mut tape, x, &batch.abstract_mask, &wf, false).unwrap();
    let bw = layers::lstm_sequence(&mut tape, x, &batch.abstract_mask, &wb, true).unwrap();
    let (a, b) = (tape.data(fw.last), tape.data(bw.last));
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn predict_examples() {
    assert_eq!(predict(&[0.1f32, 0.9, 0.1, 0.1]), 1);
    assert_eq!(predict(&[0.3f64; 4]), 0);
    assert_eq!(predict(&[2.0f64, 5.0, 5.0]), 1);
}

#[test]
fn memory_read_gradient_matches_finite_differences() {
    let mut rng = Rng::new(31);
    let (m, big_m) = (3, 4);
    let src: Vec<f64> = (0..big_m).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let zv: Vec<f64> = (0..m * big_m).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let mut store = ParamStore::<f64>::new();
    store.insert("Z", Tensor::from_f64(&[m, big_m], &zv).unwrap()).unwrap();
    let mut tape = Tape::with_params(&store);
    let z = tape.param("Z").unwrap();
    let s = tape.constant(&[1, big_m], src.clone()).unwrap();
    let r = layers::semantic_read(&mut tape, s, z).unwrap();
    let loss = tape.sum(r).unwrap();
    let g = tape.backward(loss).unwrap();
    let dz = g.param(&store, "Z").unwrap();
    for i in 0..m {
        for j in 0..big_m {
            assert_eq!(dz[i * big_m + j], src[j]);
        }
    }
    let report = grad_check::<_, sememnn::Error>(
        |tape: &mut Tape<'_, f64>| {
            let z = tape.param("Z")?;
            let s = tape.constant(&[1, big_m], src.clone())?;
            let r = layers::semantic_read(tape, s, z)?;
            Ok(tape.sum(r)?)
        },
        &mut store,
        1e-6,
        1e-4,
    )
    .unwrap();
    assert!(report.passed(), "{report}");
}

proptest! {
    #[test]
    fn address_is_shift_invariant(
        a in proptest::collection::vec(-2.0f64..2.0, 3),
        c in proptest::collection::vec(-2.0f64..2.0, 3),
        p in proptest::collection::vec(-1.0f64..1.0, 12),
        shift in -5.0f64..5.0,
    ) {
        let mut tape = Tape::<f64>::new();
        let av = tape.constant(&[1, 3], a.clone()).unwrap();
        let cv = tape.constant(&[1, 3], c.clone()).unwrap();
        let pv = tape.constant(&[4, 3], p.clone()).unwrap();
        let addr = layers::address(&mut tape, av, cv, pv).unwrap();
        let out = tape.data(addr).to_vec();
        prop_assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(out.iter().all(|&v| v > 0.0));
        // Independent route: explicit products, shifted, then a plain softmax.
        let proj = |x: &[f64]| -> Vec<f64> { (0..4).map(|i| (0..3).map(|k| p[i * 3 + k] * x[k]).sum()).collect() };
        let pre: Vec<f64> = proj(&c).iter().zip(proj(&a)).map(|(x, y)| x * y + shift).collect();
        let mx = pre.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ex: Vec<f64> = pre.iter().map(|v| (v - mx).exp()).collect();
        let s: f64 = ex.iter().sum();
        for (o, e) in out.iter().zip(&ex) {
            prop_assert!((o - e / s).abs() < 1e-12);
        }
    }

    #[test]
    fn fused_bounds(addr_raw in proptest::collection::vec(0.01f64..1.0, 5), sem in proptest::collection::vec(-1.0f64..1.0, 5)) {
        let total: f64 = addr_raw.iter().sum();
        let addr: Vec<f64> = addr_raw.iter().map(|v| v / total).collect();
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(&[1, 5], addr.clone()).unwrap();
        let s = tape.constant(&[1, 5], sem.clone()).unwrap();
        let o = layers::fuse(&mut tape, a, s).unwrap();
        for ((&o, a), s) in tape.data(o).iter().zip(&addr).zip(&sem) {
            prop_assert!(o >= 0.0 && o >= a + s);
            if *s <= -*a { prop_assert_eq!(o, 0.0); }
        }
    }

    #[test]
    fn prediction_shift_invariant(logits in proptest::collection::vec(-10.0f64..10.0, 1..8), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = logits.iter().map(|v| v + c).collect();
        let a = predict(&logits);
        let b = predict(&shifted);
        // A shift can only merge near-ties through rounding.
        prop_assert!(a == b || (logits[a] - logits[b]).abs() < 1e-9);
    }
}
