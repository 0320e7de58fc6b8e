use deskmoe::model::*;
use deskmoe::moe::{RouterState, Routing};
use deskmoe::numerics::gradcheck::{gradient_check, Coords};
use deskmoe::numerics::{Tape, Tensor, TruncatedNormal, Var};
use deskmoe::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// `Σ out ⊙ r` for a fixed random `r`, to reduce a tensor to a scalar.
fn project(tape: &mut Tape<f64>, out: Var, seed: u64) -> deskmoe::Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let r = random(shape, &mut ChaCha8Rng::seed_from_u64(seed));
    let rv = tape.leaf(r);
    let p = tape.mul(out, rv)?;
    tape.sum(p)
}

fn small_config() -> ModelConfig {
    let mut cfg = ModelConfig::tiny();
    cfg.layers = 4;
    cfg.dense_first = 1;
    cfg.d_model = 16;
    cfg.ffn_dim = 24;
    cfg.heads_q = 4;
    cfg.heads_kv = 2;
    cfg.head_dim = 4;
    cfg.window = 3;
    cfg.seq_len = 8;
    cfg.vocab_size = 20;
    cfg.n_routed = 4;
    cfg.top_k = 2;
    cfg.expert_dim = 8;
    cfg.init_sigma = 0.125;
    cfg
}

fn states(cfg: &ModelConfig) -> Vec<RouterState> {
    (0..cfg.moe_layers())
        .map(|_| RouterState::new(cfg.n_routed, cfg.balancer_params))
        .collect()
}

#[test]
fn zero_sublayer_and_zero_out_gain_are_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random(vec![5, 6], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let g1 = tape.leaf(Tensor::ones(vec![6]));
    let g2 = tape.leaf(Tensor::ones(vec![6]));
    let y = sandwich_block(&mut tape, xv, g1, g2, 1e-6, |t, h| t.scale(h, 0.0)).unwrap();
    assert_eq!(tape.value(y), &x);

    let g0 = tape.leaf(Tensor::zeros(vec![6]));
    let w = tape.leaf(random(vec![6, 6], &mut rng));
    let y = sandwich_block(&mut tape, xv, g1, g0, 1e-6, |t, h| t.matmul(h, w)).unwrap();
    assert_eq!(tape.value(y), &x);
}

#[test]
fn sandwich_matches_manual_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(vec![3, 4], &mut rng);
    let w = random(vec![4, 4], &mut rng);
    let (g_in, g_out) = (vec![1.0, 0.5, 2.0, -1.0], vec![0.3, 0.3, 0.3, 0.3]);
    let rms = |row: &[f64], g: &[f64]| -> Vec<f64> {
        let r = (row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64 + 1e-6).sqrt();
        row.iter().zip(g).map(|(v, g)| v / r * g).collect()
    };
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let gi = tape.leaf(Tensor::from_f64(vec![4], &g_in).unwrap());
    let go = tape.leaf(Tensor::from_f64(vec![4], &g_out).unwrap());
    let wv = tape.leaf(w.clone());
    let y = sandwich_block(&mut tape, xv, gi, go, 1e-6, |t, h| t.matmul(h, wv)).unwrap();
    for r in 0..3 {
        let h = rms(x.row(r), &g_in);
        let m: Vec<f64> = (0..4)
            .map(|j| (0..4).map(|i| h[i] * w.get2(i, j)).sum())
            .collect();
        let n = rms(&m, &g_out);
        for j in 0..4 {
            assert!((tape.value(y).get2(r, j) - (x.get2(r, j) + n[j])).abs() < 1e-12);
        }
    }
}

#[test]
fn norm_gain_examples() {
    assert_eq!(init_norm_gains(64).unwrap(), (1.0, 0.125));
    assert_eq!(init_norm_gains(1).unwrap(), (1.0, 1.0));
    assert!((init_norm_gains(60).unwrap().1 - 0.1291).abs() < 5e-5);
    assert!(init_norm_gains(0).is_err());
}

#[test]
fn initialized_weights_follow_config() {
    let cfg = ModelConfig::tiny();
    let w = ModelWeights::<f64>::init(&cfg, 3).unwrap();
    let sigma = cfg.computed_sigma();
    assert_eq!(sigma, 0.0625);
    for (name, t) in w.named() {
        if t.shape().len() == 2 {
            assert!(t.max_abs() <= 3.0 * sigma, "{name} exceeds 3σ");
        }
    }
    for b in &w.blocks {
        assert!(b.attn_norm_in.data().iter().all(|&g| g == 1.0));
        assert!(b
            .ffn_norm_out
            .data()
            .iter()
            .all(|&g| g == 1.0 / 8f64.sqrt()));
    }
    let shapes = cfg.parameter_shapes();
    let named = w.named();
    assert_eq!(shapes.len(), named.len());
    for ((n1, s), (n2, t)) in shapes.iter().zip(&named) {
        assert_eq!(n1, n2);
        assert_eq!(s.as_slice(), t.shape());
    }
    assert_eq!(w.parameter_count() as u64, cfg.parameter_count());
    // Sample standard deviation of the largest matrix.
    let e = w.embed.data();
    let sd = (e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64).sqrt();
    assert!((sd / sigma - 0.9866).abs() < 0.02, "{sd}");
}

#[test]
fn printed_sigmas_match_at_printed_precision() {
    for (name, d, printed) in [
        ("trinity-nano", 1024, 0.016),
        ("trinity-mini", 2048, 0.011),
        ("trinity-large", 3072, 0.009),
    ] {
        let cfg = ModelConfig::preset(name).unwrap();
        assert_eq!(cfg.d_model, d);
        assert_eq!(cfg.init_sigma, printed);
        assert!(cfg.sigma_matches(), "{name}");
    }
    assert_eq!(
        ModelConfig::preset("trinity-nano")
            .unwrap()
            .computed_sigma(),
        0.015625
    );
    let mut cfg = ModelConfig::preset("trinity-mini").unwrap();
    cfg.init_sigma = 0.012;
    assert!(!cfg.sigma_matches());
}

#[test]
fn embedding_scales_by_sqrt_d() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut table = random(vec![10, 64], &mut rng);
    for v in &mut table.data_mut()[3 * 64..4 * 64] {
        *v = 0.0;
    }
    let e = embed_value(&table, &[1, 3, 1]).unwrap();
    let rms = |s: &[f64]| (s.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt();
    assert!((rms(e.row(0)) - 8.0 * rms(table.row(1))).abs() < 1e-12);
    assert!(e.row(1).iter().all(|&v| v == 0.0));
    assert_eq!(e.row(0), e.row(2));
    for (a, b) in e.row(0).iter().zip(table.row(1)) {
        assert_eq!(*a, 8.0 * b);
    }
    assert!(matches!(embed_value(&table, &[10]), Err(Error::Lookup(_))));
}

#[test]
fn final_head_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let u = random(vec![6, 9], &mut rng);
    let h = random(vec![4, 6], &mut rng);
    let logits = |h: Tensor<f64>, eps: f64| {
        let mut tape = Tape::new();
        let hv = tape.leaf(h);
        let g = tape.leaf(Tensor::ones(vec![6]));
        let uv = tape.leaf(u.clone());
        let l = final_head(&mut tape, hv, g, uv, eps).unwrap();
        tape.value(l).clone()
    };
    assert!(logits(Tensor::zeros(vec![4, 6]), 1e-6)
        .data()
        .iter()
        .all(|&v| v == 0.0));
    let a = logits(h.clone(), 0.0);
    let b = logits(h.map(|v| v * 10.0), 0.0);
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn loss_closed_forms() {
    let v = 37;
    let zeros = Tensor::<f64>::zeros(vec![5, v]);
    let targets = [0, 3, 36, 2, 2];
    let ln_v = (v as f64).ln();
    let ce = training_loss_value(&zeros, &targets, 0.0, &[]).unwrap();
    assert!((ce - ln_v).abs() < 1e-12);
    let with_z = training_loss_value(&zeros, &targets, 1e-3, &[]).unwrap();
    assert!((with_z - ce - 1e-3 * ln_v * ln_v).abs() < 1e-12);
    let with_aux = training_loss_value(&zeros, &targets, 0.0, &[0.25, 0.5]).unwrap();
    assert!((with_aux - ce - 0.75).abs() < 1e-12);

    // Uniform but shifted logits keep CE at ln V; z sees the shift.
    let shifted = Tensor::full(vec![5, v], 2.0);
    let ce2 = training_loss_value(&shifted, &targets, 0.0, &[]).unwrap();
    assert!((ce2 - ln_v).abs() < 1e-12);
}

#[test]
fn adjusted_lr_examples() {
    assert_eq!(adjusted_lr(0.02, 512, 512).unwrap(), 0.02);
    assert_eq!(adjusted_lr(0.02, 512, 2048).unwrap(), 0.04);
    assert_eq!(adjusted_lr(0.02, 2048, 512).unwrap(), 0.02);
    assert!(adjusted_lr(0.02, 0, 4).is_err());
}

#[test]
fn block_gradient_check() {
    let cfg = ModelConfig::tiny();
    let acfg = cfg.attention_config(deskmoe::attention::LayerKind::Local);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dist = TruncatedNormal::new(0.2).unwrap();
    let aw = deskmoe::attention::AttentionWeights::<f64>::init(&acfg, &dist, &mut rng);
    let x = random(vec![10, 64], &mut rng);
    let mask = std::sync::Arc::new(
        deskmoe::attention::AttentionMask::batched(&[6, 4], acfg.kind, acfg.window, None).unwrap(),
    );
    let mut inputs = vec![x, random(vec![64], &mut rng), random(vec![64], &mut rng)];
    inputs.extend(aw.tensors().into_iter().cloned());
    let report = gradient_check(
        |tape, v| {
            let w = deskmoe::attention::AttentionVars {
                w_q: v[3],
                w_k: v[4],
                w_v: v[5],
                w_g: v[6],
                w_o: v[7],
                q_gain: v[8],
                k_gain: v[9],
            };
            let y = sandwich_block(tape, v[0], v[1], v[2], 1e-6, |t, h| {
                deskmoe::attention::attention_forward(t, h, &acfg, &w, mask.clone())
            })?;
            project(tape, y, 60)
        },
        &inputs,
        1e-6,
        Coords::Sample {
            per_input: 40,
            seed: 1,
        },
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn head_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = vec![
        random(vec![5, 8], &mut rng),
        random(vec![8], &mut rng),
        random(vec![8, 11], &mut rng),
    ];
    let targets = vec![0, 10, 4, 4, 7];
    let report = gradient_check(
        |tape, v| {
            let l = final_head(tape, v[0], v[1], v[2], 1e-6)?;
            Ok(training_loss(tape, l, &targets, 0.01, &[])?.total)
        },
        &inputs,
        1e-6,
        Coords::All,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn full_model_gradient_check_with_frozen_routing() {
    let cfg = small_config();
    let w = ModelWeights::<f64>::init(&cfg, 8).unwrap();
    let st = states(&cfg);
    let batch = Batch {
        inputs: vec![vec![1, 2, 3, 4, 5, 6], vec![7, 8, 9, 10]],
        targets: vec![vec![2, 3, 4, 5, 6, 7], vec![8, 9, 10, 11]],
        doc_ids: Some(vec![vec![0, 0, 0, 1, 1, 1], vec![0, 0, 0, 0]]),
    };
    let (_, out) = w.evaluate(&batch, &cfg, &st).unwrap();
    let routings: Vec<Routing> = out.routings.clone();
    let report = gradient_check(
        |tape, v| {
            let vars = vars_from_slice(&cfg, v);
            Ok(model_forward(tape, &batch, &cfg, &vars, &st, Some(&routings))?.loss)
        },
        &w.tensors().into_iter().cloned().collect::<Vec<_>>(),
        1e-6,
        Coords::Sample {
            per_input: 6,
            seed: 2,
        },
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
    assert!(report.checked > 200);
}

#[test]
fn tiny_forward_is_finite_and_structured() {
    let cfg = ModelConfig::tiny();
    let w = ModelWeights::<f64>::init(&cfg, 9).unwrap();
    let st = states(&cfg);
    let corpus = memorizable_corpus(200, 64, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = sample_windows(&corpus, 2, cfg.seq_len, &mut rng).unwrap();
    let (loss, out) = w.evaluate(&batch, &cfg, &st).unwrap();
    assert!(loss.is_finite());
    assert!((out.ce - (cfg.vocab_size as f64).ln()).abs() < 0.5);
    let layers: Vec<usize> = out.moe.iter().map(|m| m.layer).collect();
    assert_eq!(layers, (cfg.dense_first..cfg.layers).collect::<Vec<_>>());
    for m in &out.moe {
        assert_eq!(m.stats.total(), (batch.tokens() * cfg.top_k) as u64);
        assert!(m.max_vio.is_finite());
    }
}

#[test]
fn forward_rejects_bad_batches() {
    let cfg = small_config();
    let w = ModelWeights::<f64>::init(&cfg, 1).unwrap();
    let st = states(&cfg);
    let long = Batch::next_token(&[(0..10).collect()]).unwrap();
    assert!(w.evaluate(&long, &cfg, &st).is_err());
    let oov = Batch::next_token(&[vec![1, 25, 3]]).unwrap();
    assert!(matches!(w.evaluate(&oov, &cfg, &st), Err(Error::Lookup(_))));
    assert!(w
        .evaluate(&Batch::next_token(&[vec![1, 2]]).unwrap(), &cfg, &st[..1])
        .is_err());
    assert!(Batch::next_token(&[vec![1]]).is_err());
}

#[test]
fn training_is_deterministic_and_learns() {
    let cfg = small_config();
    let train = TrainConfig {
        steps: 30,
        batch_size: 2,
        warmup_steps: 3,
        ..TrainConfig::default()
    };
    let corpus = memorizable_corpus(40, 8, 3);
    let a = smoke_train::<f64>(&cfg, &train, &corpus, 11).unwrap();
    let b = smoke_train::<f64>(&cfg, &train, &corpus, 11).unwrap();
    assert_eq!(a, b);
    let losses: Vec<u64> = a.iter().map(|r| r.loss.to_bits()).collect();
    let c = smoke_train::<f64>(&cfg, &train, &corpus, 12).unwrap();
    assert_ne!(
        losses,
        c.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>()
    );
    assert!(a.last().unwrap().loss < a[0].loss);
    assert_eq!(a[0].max_vio_per_layer.len(), cfg.moe_layers());
}

#[test]
fn schedule_warms_up_then_decays() {
    let s = LrSchedule {
        peak: 1.0,
        warmup: 10,
        total: 110,
        final_fraction: 0.1,
    };
    assert!((s.at(0) - 0.1).abs() < 1e-12);
    assert!((s.at(9) - 1.0).abs() < 1e-12);
    assert!(s.at(60) < 1.0 && s.at(60) > 0.1);
    assert!((s.at(109) - 0.1).abs() < 0.01);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = small_config();
    let train = TrainConfig {
        steps: 3,
        batch_size: 2,
        warmup_steps: 1,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::<f64>::new(cfg.clone(), train, 4).unwrap();
    let corpus = memorizable_corpus(40, 8, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..3 {
        trainer
            .step(&sample_windows(&corpus, 2, cfg.seq_len, &mut rng).unwrap())
            .unwrap();
    }
    let ck = Checkpoint {
        config: cfg.clone(),
        weights: trainer.weights.clone(),
        states: trainer.states.clone(),
        step: 3,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::<f64>::load(&path).unwrap();
    assert_eq!(back, ck);
    for (a, b) in back.weights.tensors().iter().zip(ck.weights.tensors()) {
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(back.to_bytes().unwrap(), ck.to_bytes().unwrap());
}

#[test]
fn checkpoint_corruption_reports_offset() {
    let cfg = small_config();
    let ck = Checkpoint {
        config: cfg.clone(),
        weights: ModelWeights::<f64>::init(&cfg, 1).unwrap(),
        states: states(&cfg),
        step: 0,
    };
    let bytes = ck.to_bytes().unwrap();
    let mut flipped = bytes.clone();
    flipped[100] ^= 1;
    assert!(matches!(
        Checkpoint::<f64>::from_bytes(&flipped),
        Err(Error::Checkpoint { .. })
    ));
    match Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 10]) {
        Err(Error::Checkpoint { offset, .. }) => assert!(offset <= bytes.len() as u64),
        other => panic!("expected checkpoint error, got {other:?}"),
    }
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    match Checkpoint::<f64>::from_bytes(&bad_magic) {
        Err(Error::Checkpoint { offset, .. }) => assert_eq!(offset, 0),
        other => panic!("expected checkpoint error, got {other:?}"),
    }
}

#[test]
fn presets_reproduce_table_fields() {
    let nano = ModelConfig::preset("trinity-nano").unwrap();
    assert_eq!(
        (
            nano.layers,
            nano.dense_first,
            nano.d_model,
            nano.ffn_dim,
            nano.heads_q,
            nano.heads_kv
        ),
        (56, 2, 1024, 3072, 8, 2)
    );
    assert_eq!(
        (nano.n_shared, nano.n_routed, nano.top_k, nano.expert_dim),
        (1, 128, 8, 256)
    );
    let mini = ModelConfig::preset("trinity-mini").unwrap();
    assert_eq!(
        (
            mini.layers,
            mini.d_model,
            mini.heads_q,
            mini.heads_kv,
            mini.expert_dim
        ),
        (32, 2048, 32, 4, 1024)
    );
    let large = ModelConfig::preset("trinity-large").unwrap();
    assert_eq!(
        (
            large.layers,
            large.dense_first,
            large.d_model,
            large.n_routed,
            large.top_k,
            large.route_scale
        ),
        (60, 6, 3072, 256, 4, 2.448)
    );
    assert!(ModelConfig::preset("nope").is_err());
    for name in PRESET_NAMES {
        let cfg = ModelConfig::preset(name).unwrap();
        cfg.validate().unwrap();
        assert_eq!(
            ModelConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(),
            cfg
        );
        assert_eq!(
            cfg.parameter_shapes().len(),
            ModelConfig::preset(name).unwrap().parameter_shapes().len()
        );
    }
}

#[test]
fn preset_parameter_counts_are_close_to_reported_sizes() {
    for (name, total, active) in [
        ("trinity-nano", 6.0e9, 1.0e9),
        ("trinity-mini", 26.0e9, 3.0e9),
        ("trinity-large", 400.0e9, 13.0e9),
    ] {
        let cfg = ModelConfig::preset(name).unwrap();
        let t = cfg.parameter_count() as f64;
        let a = cfg.active_parameter_count() as f64;
        assert!((t / total - 1.0).abs() < 0.05, "{name} total {t}");
        assert!((a / active - 1.0).abs() < 0.2, "{name} active {a}");
    }
}

#[test]
fn nan_loss_names_the_step() {
    let cfg = small_config();
    let mut trainer = Trainer::<f64>::new(cfg.clone(), TrainConfig::default(), 1).unwrap();
    trainer.weights.unembed.data_mut()[0] = f64::NAN;
    let batch = Batch::next_token(&[vec![0, 1, 2]]).unwrap();
    match trainer.step(&batch) {
        Err(Error::Metric(m)) => assert!(m.contains("step 1"), "{m}"),
        other => panic!("expected metric error, got {other:?}"),
    }
}
