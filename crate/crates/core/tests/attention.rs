use hopose::attention::*;
use hopose::Vec2;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_map(h: usize, w: usize, c: usize, r: &mut impl Rng) -> FeatureMap {
    FeatureMap::from_fn(h, w, c, |_, _, _| r.random_range(-1.0..1.0))
}

/// Token `t`, channel `j` of a feature map.
fn tok(m: &FeatureMap, t: usize, j: usize) -> f64 {
    m.get(t / m.width(), t % m.width(), j)
}

/// Triple-loop re-implementation of the block.
fn naive_block(p: &CrParams, query: &FeatureMap, context: &FeatureMap) -> Vec<Vec<f64>> {
    let c = p.channels();
    let hid = p.hidden();
    let (nq, nk) = (query.positions(), context.positions());
    let lin = |m: &FeatureMap, t: usize, w: &DMatrix<f64>, col: usize| (0..c).map(|i| tok(m, t, i) * w[(i, col)]).sum::<f64>();
    let mut out = Vec::new();
    for t in 0..nq {
        let q: Vec<f64> = (0..c).map(|j| lin(query, t, &p.w_q, j)).collect();
        let logits: Vec<f64> =
            (0..nk).map(|s| (0..c).map(|j| q[j] * lin(context, s, &p.w_k, j)).sum::<f64>() / (c as f64).sqrt()).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = e.iter().sum();
        let qp: Vec<f64> = (0..c).map(|j| tok(query, t, j) + (0..nk).map(|s| e[s] / z * lin(context, s, &p.w_v, j)).sum::<f64>()).collect();
        let mean = qp.iter().sum::<f64>() / c as f64;
        let var = qp.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
        let y: Vec<f64> = (0..c).map(|j| (qp[j] - mean) / (var + LN_EPSILON).sqrt() * p.ln_gain[(0, j)] + p.ln_bias[(0, j)]).collect();
        let h: Vec<f64> = (0..hid).map(|k| ((0..c).map(|j| y[j] * p.w1[(j, k)]).sum::<f64>() + p.b1[(0, k)]).max(0.0)).collect();
        out.push((0..c).map(|j| qp[j] + (0..hid).map(|k| h[k] * p.w2[(k, j)]).sum::<f64>() + p.b2[(0, j)]).collect());
    }
    out
}

#[test]
fn forward_matches_loop_oracle_and_rows_sum_to_one() {
    let mut r = rng(31);
    for _ in 0..5 {
        let p = CrParams::random(8, &mut r);
        let query = random_map(4, 4, 8, &mut r);
        let context = random_map(2, 2, 8, &mut r);
        let (out, tape) = cr_forward(&p, &query, &context).unwrap();
        for row in tape.attention().row_iter() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
        let naive = naive_block(&p, &query, &context);
        for (t, row) in naive.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((tok(&out, t, j) - v).abs() < 1e-10);
            }
        }
        assert_eq!(out.shape(), query.shape());
    }
}

#[test]
fn zero_weights_give_exact_residual() {
    let mut r = rng(32);
    let p = CrParams::identity(8, 32);
    let query = random_map(4, 4, 8, &mut r);
    let context = random_map(3, 2, 8, &mut r);
    let (out, _) = cr_forward(&p, &query, &context).unwrap();
    assert_eq!(out, query);

    // random Q/K/LN weights still leave the residual intact when W_v and the MLP are zero
    let mut p = CrParams::random(8, &mut r);
    p.w_v.fill(0.0);
    p.w1.fill(0.0);
    p.b1.fill(0.0);
    p.w2.fill(0.0);
    p.b2.fill(0.0);
    let (out, _) = cr_forward(&p, &query, &context).unwrap();
    assert_eq!(out, query);
}

#[test]
fn single_key_context() {
    let mut r = rng(33);
    let p = CrParams::random(6, &mut r);
    let query = random_map(3, 3, 6, &mut r);
    let context = random_map(1, 1, 6, &mut r);
    let (_, tape) = cr_forward(&p, &query, &context).unwrap();
    assert!(tape.attention().iter().all(|w| *w == 1.0));
}

#[test]
fn softmax_shift_invariance() {
    let mut r = rng(34);
    let logits = DMatrix::from_fn(7, 5, |_, _| r.random_range(-20.0..20.0));
    let base = softmax_rows(&logits);
    let mut shifted = logits.clone();
    for (i, mut row) in shifted.row_iter_mut().enumerate() {
        row.add_scalar_mut(100.0 * i as f64 - 250.0);
    }
    assert!((softmax_rows(&shifted) - &base).abs().max() < 1e-12);
    for row in softmax_rows(&DMatrix::from_fn(4, 9, |_, _| r.random_range(-700.0..700.0))).row_iter() {
        assert!((row.sum() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn tape_replay_is_bit_identical() {
    let mut r = rng(35);
    let p = CrParams::random(8, &mut r);
    let (out, tape) = cr_forward(&p, &random_map(3, 4, 8, &mut r), &random_map(2, 3, 8, &mut r)).unwrap();
    assert_eq!(tape.replay().unwrap(), out);
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut r = rng(36);
    let p = CrParams::random(8, &mut r);
    let (_, tape) = cr_forward(&p, &random_map(3, 3, 8, &mut r), &random_map(2, 2, 8, &mut r)).unwrap();
    let g = cr_backward(&tape, &FeatureMap::zeros(3, 3, 8)).unwrap();
    assert!(g.query.data().iter().all(|v| *v == 0.0));
    assert!(g.context.data().iter().all(|v| *v == 0.0));
    assert!(g.params.tensors().iter().all(|(_, t)| t.iter().all(|v| *v == 0.0)));
}

#[test]
fn residual_only_block_has_identity_jacobian() {
    let mut r = rng(37);
    let p = CrParams::identity(8, 32);
    let (_, tape) = cr_forward(&p, &random_map(3, 3, 8, &mut r), &random_map(2, 2, 8, &mut r)).unwrap();
    let up = random_map(3, 3, 8, &mut r);
    let g = cr_backward(&tape, &up).unwrap();
    assert_eq!(g.query, up);
    assert!(g.context.data().iter().all(|v| *v == 0.0));
}

#[test]
fn channel_mismatch_is_reported() {
    let mut r = rng(38);
    let p = CrParams::random(8, &mut r);
    let err = cr_forward(&p, &random_map(2, 2, 4, &mut r), &random_map(2, 2, 8, &mut r)).unwrap_err();
    assert!(matches!(err, hopose::Error::DimensionMismatch(_)));
}

#[test]
fn gradcheck_all_modes_small() {
    let mut r = rng(39);
    for mode in [QueryMode::ObjectQuery, QueryMode::HandQuery, QueryMode::BothQuery] {
        let m = ContextReasoning::random(mode, 8, &mut r);
        let maps: Vec<FeatureMap> = (0..5).map(|_| random_map(4, 4, 8, &mut r)).collect();
        let rep = gradcheck(&m, &maps[0], &maps[1], &maps[2], &maps[3], &maps[4]).unwrap();
        assert!(rep.max_rel_error < 1e-4, "{mode:?}: {} at {}", rep.max_rel_error, rep.worst_coordinate);
    }
}

#[test]
fn modes_enhance_the_right_streams() {
    let mut r = rng(40);
    let (h, o, i) = (random_map(3, 3, 4, &mut r), random_map(3, 3, 4, &mut r), random_map(2, 2, 4, &mut r));
    let m = ContextReasoning::random(QueryMode::ObjectQuery, 4, &mut r);
    let (out, _) = m.forward(&h, &o, &i).unwrap();
    assert_eq!(out.hand, h);
    assert_ne!(out.object, o);
    let m = ContextReasoning::random(QueryMode::HandQuery, 4, &mut r);
    let (out, _) = m.forward(&h, &o, &i).unwrap();
    assert_ne!(out.hand, h);
    assert_eq!(out.object, o);
}

#[test]
fn checkpoint_round_trip() {
    let mut r = rng(41);
    let m = ContextReasoning::random(QueryMode::BothQuery, 4, &mut r);
    let json = Checkpoint::from_module(&m).to_json();
    assert_eq!(Checkpoint::from_json(&json).unwrap().to_module().unwrap(), m);
}

#[test]
fn soft_argmax_examples_and_oracle() {
    let mut one_hot = FeatureMap::zeros(32, 32, 21);
    for j in 0..21 {
        one_hot.set(20, 10, j, 1.0);
    }
    for p in soft_argmax_joints(&one_hot).unwrap() {
        assert_eq!(p, Vec2::new(10.0, 20.0));
    }
    let uniform = FeatureMap::from_fn(32, 32, 21, |_, _, _| 1.0 / 1024.0);
    for p in soft_argmax_joints(&uniform).unwrap() {
        assert!((p - Vec2::new(15.5, 15.5)).norm() < 1e-12);
    }

    let mut r = rng(42);
    let mut raw = random_map(32, 32, 21, &mut r);
    raw.data_mut().iter_mut().for_each(|v| *v = v.abs());
    for j in 0..21 {
        let z: f64 = (0..32).flat_map(|y| (0..32).map(move |x| (y, x))).map(|(y, x)| raw.get(y, x, j)).sum();
        for y in 0..32 {
            for x in 0..32 {
                let v = raw.get(y, x, j) / z;
                raw.set(y, x, j, v);
            }
        }
    }
    let got = soft_argmax_joints(&raw).unwrap();
    for (j, g) in got.iter().enumerate() {
        let (mut ex, mut ey) = (0.0, 0.0);
        for y in 0..32 {
            for x in 0..32 {
                ex += x as f64 * raw.get(y, x, j);
                ey += y as f64 * raw.get(y, x, j);
            }
        }
        assert!((g - Vec2::new(ex, ey)).norm() < 1e-9);
    }
    raw.set(0, 0, 3, raw.get(0, 0, 3) + 0.01);
    assert!(matches!(soft_argmax_joints(&raw), Err(hopose::Error::NotNormalized { .. })));
}

#[test]
fn heatmap_loss_examples_and_oracle() {
    let mut r = rng(43);
    let a = random_map(32, 32, 21, &mut r);
    assert_eq!(heatmap_loss(&a, &a).unwrap(), 0.0);
    let mut b = a.clone();
    for y in 0..32 {
        for x in 0..32 {
            b.set(y, x, 5, a.get(y, x, 5) + 0.1);
        }
    }
    assert!((heatmap_loss(&b, &a).unwrap() - 10.24).abs() < 1e-9);
    let c = random_map(32, 32, 21, &mut r);
    let mut acc = 0.0;
    for (x, y) in a.data().iter().zip(c.data()) {
        acc += (x - y) * (x - y);
    }
    assert!((heatmap_loss(&a, &c).unwrap() - acc).abs() < 1e-9);
    assert!(heatmap_loss(&a, &random_map(32, 32, 20, &mut r)).is_err());
}

#[test]
fn gaussian_heatmaps_decode_to_their_centres() {
    let pts: Vec<Vec2> = (0..21).map(|j| Vec2::new(5.5 + j as f64, 20.0 - 0.5 * j as f64)).collect();
    let maps = gaussian_heatmaps(32, 32, &pts, 1.0).unwrap();
    for (g, p) in soft_argmax_joints(&maps).unwrap().iter().zip(&pts) {
        assert!((g - p).norm() < 1e-6);
    }
}

#[test]
fn loss_closed_forms_and_oracles() {
    assert!((hand_loss(10.0, 1.0) - 2.0).abs() < 1e-12);
    assert!((object_loss(2.0, 10.0) - 2.0).abs() < 1e-12);
    assert_eq!(masked_total_loss(1.0, 2.0, true), 3.0);
    assert_eq!(masked_total_loss(1.0, 2.0, false), 1.0);
    assert_eq!(hand_loss(0.0, 0.0), 0.0);
    assert_eq!(object_loss(0.0, 0.0), 0.0);

    let mut r = rng(44);
    for _ in 0..100 {
        let (a, b): (f64, f64) = (r.random_range(0.0..100.0), r.random_range(0.0..100.0));
        assert!((hand_loss(a, b) - (0.1 * a + b)).abs() < 1e-12);
        assert!((object_loss(a, b) - (0.5 * a + 0.1 * b)).abs() < 1e-12);
        let flag: bool = r.random();
        assert_eq!(masked_total_loss(a, b, flag), a + if flag { b } else { 0.0 });
    }
}

#[test]
fn mano_loss_examples() {
    use hopose::Vec3;
    let theta = vec![0.1; 48];
    let beta = vec![0.2; 10];
    let j: Vec<Vec3> = (0..21).map(|i| Vec3::new(i as f64, 0.0, 1.0)).collect();
    let v: Vec<Vec3> = (0..50).map(|i| Vec3::new(0.0, i as f64, 2.0)).collect();
    let gt = ManoTerms { theta: &theta, beta: &beta, joints3d: &j, vertices: &v };
    assert_eq!(mano_loss(&gt, &gt).unwrap(), 0.0);
    let mut t2 = theta.clone();
    t2[7] += 1e-3;
    let pred = ManoTerms { theta: &t2, ..gt };
    assert!((mano_loss(&pred, &gt).unwrap() - 1e-6).abs() < 1e-15);
    let short = vec![0.0; 47];
    assert!(mano_loss(&ManoTerms { theta: &short, ..gt }, &gt).is_err());
}
