use std::sync::Arc;

use deskmoe::attention::{
    attention_forward, build_mask, gated_output, project_and_norm, sdpa, AttentionLayerConfig,
    AttentionMask, AttentionMaskSpec, AttentionWeights, LayerKind,
};
use deskmoe::numerics::{gradient_check, Coords, Tape, Tensor, TruncatedNormal};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn weights(cfg: &AttentionLayerConfig, seed: u64) -> AttentionWeights<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = TruncatedNormal::new(0.5 / (cfg.d_model as f64).sqrt()).unwrap();
    let mut w = AttentionWeights::init(cfg, &dist, &mut rng);
    // non-trivial gains so gain gradients are exercised
    for g in [&mut w.q_gain, &mut w.k_gain] {
        for v in g.data_mut() {
            *v = rng.random_range(0.5..1.5);
        }
    }
    w
}

fn single(len: usize, cfg: &AttentionLayerConfig, docs: Option<Vec<u32>>) -> Arc<AttentionMask> {
    Arc::new(
        build_mask(&AttentionMaskSpec {
            len,
            kind: cfg.kind,
            window: cfg.window,
            doc_ids: docs,
        })
        .unwrap(),
    )
}

/// Straight-line evaluation of the attention sublayer with nested loops.
fn oracle(
    x: &Tensor<f64>,
    cfg: &AttentionLayerConfig,
    w: &AttentionWeights<f64>,
    docs: Option<&[u32]>,
) -> Vec<Vec<f64>> {
    let (t_len, d, hq, hkv, dh) = (
        x.rows(),
        cfg.d_model,
        cfg.heads_q,
        cfg.heads_kv,
        cfg.head_dim,
    );
    let proj = |m: &Tensor<f64>, t: usize| -> Vec<f64> {
        (0..m.cols())
            .map(|c| (0..d).map(|r| x.get2(t, r) * m.get2(r, c)).sum())
            .collect()
    };
    let norm = |v: &[f64], g: &[f64]| -> Vec<f64> {
        let ms = v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64;
        let inv = 1.0 / (ms + cfg.norm_eps).sqrt();
        v.iter().zip(g).map(|(a, b)| a * inv * b).collect()
    };
    let rope = |v: &mut [f64], pos: usize| {
        if cfg.kind == LayerKind::Global {
            return;
        }
        for p in 0..dh / 2 {
            let ang = pos as f64 / cfg.rope_theta.powf(2.0 * p as f64 / dh as f64);
            let (a, b) = (v[2 * p], v[2 * p + 1]);
            v[2 * p] = a * ang.cos() - b * ang.sin();
            v[2 * p + 1] = a * ang.sin() + b * ang.cos();
        }
    };
    let head = |full: &[f64], h: usize| full[h * dh..(h + 1) * dh].to_vec();
    let mut q = vec![vec![vec![]; hq]; t_len];
    let mut k = vec![vec![vec![]; hkv]; t_len];
    let mut v = vec![vec![vec![]; hkv]; t_len];
    for t in 0..t_len {
        let (qf, kf, vf) = (proj(&w.w_q, t), proj(&w.w_k, t), proj(&w.w_v, t));
        for h in 0..hq {
            q[t][h] = norm(&head(&qf, h), w.q_gain.data());
            rope(&mut q[t][h], t);
        }
        for h in 0..hkv {
            k[t][h] = norm(&head(&kf, h), w.k_gain.data());
            rope(&mut k[t][h], t);
            v[t][h] = head(&vf, h);
        }
    }
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let gate: Vec<f64> = proj(&w.w_g, t)
            .iter()
            .map(|z| 1.0 / (1.0 + (-z).exp()))
            .collect();
        let mut concat = vec![0.0; hq * dh];
        for i in 1..=hq {
            let j = (i * hkv).div_ceil(hq) - 1;
            let allowed: Vec<usize> = (0..=t)
                .filter(|&s| cfg.kind == LayerKind::Global || t - s < cfg.window)
                .filter(|&s| docs.is_none_or(|dd| dd[s] == dd[t]))
                .collect();
            let logits: Vec<f64> = allowed
                .iter()
                .map(|&s| {
                    q[t][i - 1]
                        .iter()
                        .zip(&k[s][j])
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
                        / (dh as f64).sqrt()
                })
                .collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            for (&s, l) in allowed.iter().zip(&logits) {
                let a = (l - m).exp() / z;
                for e in 0..dh {
                    concat[(i - 1) * dh + e] += a * v[s][j][e];
                }
            }
        }
        for (c, g) in concat.iter_mut().zip(&gate) {
            *c *= g;
        }
        out.push(
            (0..d)
                .map(|c| (0..hq * dh).map(|r| concat[r] * w.w_o.get2(r, c)).sum())
                .collect(),
        );
    }
    out
}

fn assert_close_rows(a: &Tensor<f64>, b: &[Vec<f64>], tol: f64) {
    for (t, row) in b.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let got = a.get2(t, c);
            assert!((got - v).abs() <= tol, "row {t} col {c}: {got} vs {v}");
        }
    }
}

#[test]
fn matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (kind, hkv, docs) in [
        (LayerKind::Local, 2, None),
        (LayerKind::Global, 2, None),
        (LayerKind::Local, 4, Some(vec![0, 0, 0, 1, 1, 1, 1, 2, 2])),
        (LayerKind::Global, 1, Some(vec![5, 5, 6, 6, 6, 6, 6, 6, 7])),
    ] {
        let cfg = AttentionLayerConfig::new(16, 4, hkv, kind, 3).unwrap();
        let w = weights(&cfg, 3);
        let x = random(&[9, 16], &mut rng, 1.0);
        let got = w.forward(&x, &cfg, single(9, &cfg, docs.clone())).unwrap();
        assert_close_rows(&got, &oracle(&x, &cfg, &w, docs.as_deref()), 1e-12);
    }
}

#[test]
fn explicit_head_dim_wider_than_model() {
    let mut cfg = AttentionLayerConfig::new(12, 3, 1, LayerKind::Local, 4).unwrap();
    cfg.head_dim = 8;
    let w = weights(&cfg, 4);
    assert_eq!(w.w_q.shape(), &[12, 24]);
    assert_eq!(w.w_o.shape(), &[24, 12]);
    let x = random(&[6, 12], &mut ChaCha8Rng::seed_from_u64(1), 1.0);
    let got = w.forward(&x, &cfg, single(6, &cfg, None)).unwrap();
    assert_close_rows(&got, &oracle(&x, &cfg, &w, None), 1e-12);
}

#[test]
fn gqa_with_duplicated_kv_equals_mha() {
    let gqa = AttentionLayerConfig::new(16, 4, 2, LayerKind::Local, 4).unwrap();
    let mha = AttentionLayerConfig::new(16, 4, 4, LayerKind::Local, 4).unwrap();
    let w = weights(&gqa, 9);
    let dh = gqa.head_dim;
    let widen = |m: &Tensor<f64>| {
        let mut data = Vec::new();
        for r in 0..m.rows() {
            for h in 0..4 {
                let src = h / 2;
                data.extend_from_slice(&m.row(r)[src * dh..(src + 1) * dh]);
            }
        }
        Tensor::new(vec![m.rows(), 4 * dh], data).unwrap()
    };
    let mut wm = w.clone();
    wm.w_k = widen(&w.w_k);
    wm.w_v = widen(&w.w_v);
    let x = random(&[7, 16], &mut ChaCha8Rng::seed_from_u64(2), 1.0);
    let a = w.forward(&x, &gqa, single(7, &gqa, None)).unwrap();
    let b = wm.forward(&x, &mha, single(7, &mha, None)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn mha_degenerate_matches_oracle_exactly_shaped() {
    let cfg = AttentionLayerConfig::new(8, 2, 2, LayerKind::Global, 0).unwrap();
    let w = weights(&cfg, 1);
    let x = random(&[5, 8], &mut ChaCha8Rng::seed_from_u64(8), 2.0);
    let got = w.forward(&x, &cfg, single(5, &cfg, None)).unwrap();
    assert_close_rows(&got, &oracle(&x, &cfg, &w, None), 1e-12);
}

#[test]
fn sdpa_single_position_returns_value() {
    let cfg = AttentionLayerConfig::new(8, 2, 1, LayerKind::Global, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new();
    let q = tape.leaf(random(&[1, 8], &mut rng, 1.0));
    let k = tape.leaf(random(&[1, 4], &mut rng, 1.0));
    let vt = random(&[1, 4], &mut rng, 1.0);
    let v = tape.leaf(vt.clone());
    let o = sdpa(&mut tape, q, k, v, single(1, &cfg, None), 2, 1, 4).unwrap();
    let out = tape.value(o);
    assert_eq!(&out.data()[..4], vt.data());
    assert_eq!(&out.data()[4..], vt.data());
}

#[test]
fn sdpa_equal_logits_average_allowed_values() {
    let cfg = AttentionLayerConfig::new(4, 1, 1, LayerKind::Local, 2).unwrap();
    let mut tape = Tape::new();
    let q = tape.leaf(Tensor::zeros(vec![4, 4]));
    let k = tape.leaf(random(&[4, 4], &mut ChaCha8Rng::seed_from_u64(6), 1.0));
    let vt = Tensor::from_f64(vec![4, 4], &(0..16).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
    let v = tape.leaf(vt.clone());
    let o = sdpa(&mut tape, q, k, v, single(4, &cfg, None), 1, 1, 4).unwrap();
    let out = tape.value(o);
    for t in 1..4 {
        for c in 0..4 {
            let want = 0.5 * (vt.get2(t - 1, c) + vt.get2(t, c));
            assert!((out.get2(t, c) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_gate_weights_halve_the_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tape = Tape::new();
    let x = tape.leaf(random(&[3, 6], &mut rng, 1.0));
    let o_t = random(&[3, 6], &mut rng, 1.0);
    let wo_t = random(&[6, 6], &mut rng, 1.0);
    let o = tape.leaf(o_t.clone());
    let wg = tape.leaf(Tensor::zeros(vec![6, 6]));
    let wo = tape.leaf(wo_t.clone());
    let u = gated_output(&mut tape, x, o, wg, wo).unwrap();
    let want = o_t.map(|v| 0.5 * v).matmul(&wo_t).unwrap();
    for (a, b) in tape.value(u).data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-14);
    }

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(vec![3, 6], 1.0));
    let o = tape.leaf(o_t);
    let wg = tape.leaf(Tensor::full(vec![6, 6], -100.0));
    let wo = tape.leaf(wo_t);
    let u = gated_output(&mut tape, x, o, wg, wo).unwrap();
    assert!(tape.value(u).max_abs() < 1e-200);
}

#[test]
fn qk_norm_properties() {
    let mut cfg = AttentionLayerConfig::new(16, 4, 2, LayerKind::Global, 0).unwrap();
    cfg.norm_eps = 0.0;
    let mut w = weights(&cfg, 2);
    w.q_gain = Tensor::ones(vec![4]);
    w.k_gain = Tensor::ones(vec![4]);
    let x_t = random(&[5, 16], &mut ChaCha8Rng::seed_from_u64(3), 1.0);
    let run = |x: Tensor<f64>, cfg: &AttentionLayerConfig| {
        let mut tape = Tape::new();
        let vars = w.record(&mut tape);
        let xv = tape.leaf(x);
        let (q, k, v) = project_and_norm(&mut tape, xv, cfg, &vars).unwrap();
        (
            tape.value(q).clone(),
            tape.value(k).clone(),
            tape.value(v).clone(),
        )
    };
    let (q, k, _) = run(x_t.clone(), &cfg);
    for head in q.data().chunks(4).chain(k.data().chunks(4)) {
        let rms = (head.iter().map(|a| a * a).sum::<f64>() / 4.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);
    }
    let (q10, _, _) = run(x_t.map(|v| 10.0 * v), &cfg);
    for (a, b) in q.data().iter().zip(q10.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    cfg.norm_eps = 1e-6;
    let (qz, kz, vz) = run(Tensor::zeros(vec![5, 16]), &cfg);
    assert!(qz.max_abs() == 0.0 && kz.max_abs() == 0.0 && vz.max_abs() == 0.0);
}

#[test]
fn causality_and_window_locality() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for kind in [LayerKind::Local, LayerKind::Global] {
        let cfg = AttentionLayerConfig::new(16, 4, 2, kind, 3).unwrap();
        let w = weights(&cfg, 4);
        for _ in 0..10 {
            let x = random(&[10, 16], &mut rng, 1.0);
            let base = w.forward(&x, &cfg, single(10, &cfg, None)).unwrap();
            let p = rng.random_range(0..10);
            let mut y = x.clone();
            for c in 0..16 {
                y.data_mut()[p * 16 + c] += rng.random_range(-1.0..1.0);
            }
            let out = w.forward(&y, &cfg, single(10, &cfg, None)).unwrap();
            for t in 0..10 {
                let unaffected = t < p || (kind == LayerKind::Local && p + cfg.window <= t);
                if unaffected {
                    assert_eq!(base.row(t), out.row(t), "kind {kind:?} p {p} t {t}");
                } else if t == p {
                    assert_ne!(base.row(t), out.row(t));
                }
            }
        }
    }
}

#[test]
fn batch_items_are_independent() {
    let cfg = AttentionLayerConfig::new(16, 4, 2, LayerKind::Local, 4).unwrap();
    let w = weights(&cfg, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (a, b) = (
        random(&[5, 16], &mut rng, 1.0),
        random(&[3, 16], &mut rng, 1.0),
    );
    let stack = |first: &Tensor<f64>, second: &Tensor<f64>| {
        let mut d = first.data().to_vec();
        d.extend_from_slice(second.data());
        Tensor::new(vec![first.rows() + second.rows(), 16], d).unwrap()
    };
    let ab = w
        .forward(
            &stack(&a, &b),
            &cfg,
            Arc::new(AttentionMask::batched(&[5, 3], cfg.kind, 4, None).unwrap()),
        )
        .unwrap();
    let ba = w
        .forward(
            &stack(&b, &a),
            &cfg,
            Arc::new(AttentionMask::batched(&[3, 5], cfg.kind, 4, None).unwrap()),
        )
        .unwrap();
    for t in 0..5 {
        assert_eq!(ab.row(t), ba.row(t + 3));
    }
    for t in 0..3 {
        assert_eq!(ab.row(t + 5), ba.row(t));
    }
}

#[test]
fn shifted_document_gives_same_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for (kind, tol) in [(LayerKind::Global, 1e-13), (LayerKind::Local, 1e-10)] {
        let cfg = AttentionLayerConfig::new(16, 4, 2, kind, 64).unwrap();
        let w = weights(&cfg, 6);
        let x = random(&[6, 16], &mut rng, 1.0);
        let alone = w.forward(&x, &cfg, single(6, &cfg, None)).unwrap();
        let prefix = random(&[5, 16], &mut rng, 1.0);
        let mut d = prefix.data().to_vec();
        d.extend_from_slice(x.data());
        let shifted_in = Tensor::new(vec![11, 16], d).unwrap();
        let docs: Vec<u32> = (0..11).map(|i| u32::from(i >= 5)).collect();
        let shifted = w
            .forward(&shifted_in, &cfg, single(11, &cfg, Some(docs)))
            .unwrap();
        for t in 0..6 {
            for (a, b) in alone.row(t).iter().zip(shifted.row(t + 5)) {
                assert!((a - b).abs() < tol, "{kind:?}: {a} vs {b}");
            }
        }
    }
}

fn check_block(kind: LayerKind, docs: Option<Vec<u32>>) -> f64 {
    let cfg = AttentionLayerConfig::new(8, 4, 2, kind, 3).unwrap();
    let w = weights(&cfg, 17);
    let x = random(&[6, 8], &mut ChaCha8Rng::seed_from_u64(5), 1.0);
    let mask = single(6, &cfg, docs);
    let readout = random(&[6, 8], &mut ChaCha8Rng::seed_from_u64(6), 1.0);
    let mut inputs = vec![x];
    inputs.extend(w.tensors().into_iter().cloned());
    let report = gradient_check(
        |tape, v| {
            let vars = deskmoe::attention::AttentionVars {
                w_q: v[1],
                w_k: v[2],
                w_v: v[3],
                w_g: v[4],
                w_o: v[5],
                q_gain: v[6],
                k_gain: v[7],
            };
            let u = attention_forward(tape, v[0], &cfg, &vars, mask.clone())?;
            let r = tape.leaf(readout.clone());
            let p = tape.mul(u, r)?;
            tape.sum(p)
        },
        &inputs,
        1e-4,
        Coords::All,
    )
    .unwrap();
    report.max_rel_error
}

#[test]
fn gradient_check_local_block() {
    let err = check_block(LayerKind::Local, None);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gradient_check_global_block_with_documents() {
    let err = check_block(LayerKind::Global, Some(vec![0, 0, 1, 1, 1, 2]));
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gradient_check_local_global_stack() {
    let local = AttentionLayerConfig::new(8, 4, 2, LayerKind::Local, 3).unwrap();
    let global = AttentionLayerConfig::new(8, 4, 2, LayerKind::Global, 0).unwrap();
    let (w1, w2) = (weights(&local, 1), weights(&global, 2));
    let lm = single(6, &local, None);
    let gm = single(6, &global, None);
    let x = random(&[6, 8], &mut ChaCha8Rng::seed_from_u64(9), 1.0);
    let mut inputs = vec![x];
    inputs.extend(w1.tensors().into_iter().cloned());
    inputs.extend(w2.tensors().into_iter().cloned());
    let vars_at = |v: &[deskmoe::numerics::Var], o: usize| deskmoe::attention::AttentionVars {
        w_q: v[o],
        w_k: v[o + 1],
        w_v: v[o + 2],
        w_g: v[o + 3],
        w_o: v[o + 4],
        q_gain: v[o + 5],
        k_gain: v[o + 6],
    };
    let report = gradient_check(
        |tape, v| {
            let h1 = attention_forward(tape, v[0], &local, &vars_at(v, 1), lm.clone())?;
            let r1 = tape.add(v[0], h1)?;
            let h2 = attention_forward(tape, r1, &global, &vars_at(v, 8), gm.clone())?;
            let r2 = tape.add(r1, h2)?;
            let sq = tape.square(r2)?;
            tape.mean(sq)
        },
        &inputs,
        1e-4,
        Coords::All,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn mismatched_shapes_are_errors() {
    let cfg = AttentionLayerConfig::new(8, 2, 1, LayerKind::Local, 2).unwrap();
    let w = weights(&cfg, 0);
    assert!(w
        .forward(&Tensor::zeros(vec![3, 6]), &cfg, single(3, &cfg, None))
        .is_err());
    assert!(w
        .forward(&Tensor::zeros(vec![3, 8]), &cfg, single(4, &cfg, None))
        .is_err());
    let other = AttentionLayerConfig::new(16, 2, 1, LayerKind::Local, 2).unwrap();
    assert!(w.check(&other).is_err());
}

proptest! {
    #[test]
    fn mask_contains_self_and_respects_window(
        len in 1usize..40,
        window in 1usize..10,
        global in any::<bool>(),
        docs in proptest::collection::vec(0u32..3, 40),
    ) {
        let kind = if global { LayerKind::Global } else { LayerKind::Local };
        let mut ids = docs[..len].to_vec();
        ids.sort_unstable();
        let m = build_mask(&AttentionMaskSpec { len, kind, window, doc_ids: Some(ids.clone()) }).unwrap();
        for t in 0..len {
            prop_assert!(m.allows(t, t));
            for s in 0..len {
                let want = s <= t
                    && (global || t - s < window)
                    && ids[s] == ids[t];
                prop_assert_eq!(m.allows(t, s), want);
            }
        }
    }
}
