use qamvs::databundle::{generate_synthetic, EpisodeBundle, SyntheticSpec, VideoTrack};
use qamvs::diffcore::{lstm_step, Graph, LstmWeights, ParamStore, Tensor, Var};
use qamvs::policy::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DV: usize = 6;
const DT: usize = 4;

fn config() -> PolicyConfig {
    PolicyConfig::toy(DV, DT, 8)
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_bundle(seed: u64, lengths: &[usize], n_images: usize) -> EpisodeBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EpisodeBundle {
        event_id: format!("r{seed}"),
        d_visual: DV,
        d_text: DT,
        videos: lengths
            .iter()
            .enumerate()
            .map(|(i, &n)| VideoTrack {
                video_id: format!("v{i}"),
                frames: (0..n).map(|_| unit(&mut rng, DV)).collect(),
                text: unit(&mut rng, DT),
            })
            .collect(),
        images: (0..n_images).map(|_| unit(&mut rng, DV)).collect(),
        query: unit(&mut rng, DT),
        ground_truth: None,
    }
}

fn setup(g: &mut Graph, b: &EpisodeBundle, p: &PolicyParams) -> EpisodeContext {
    let enc = encode_frames(g, b, p).unwrap();
    EpisodeContext::new(g, b, p, enc).unwrap()
}

fn vals(g: &Graph, v: Var) -> Vec<f64> {
    g.value(v).data().to_vec()
}

fn head_store(m: usize, n_h: usize, a: usize, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    s.insert_uniform("t.w1", &[a], 1, &mut rng).unwrap();
    s.insert_uniform("t.w2", &[m + n_h, a], 1, &mut rng).unwrap();
    s
}

#[test]
fn attention_single_input() {
    let s = head_store(3, 2, 4, 1);
    let mut g = Graph::new();
    let head = AttentionHead::load(&mut g, &s, "t", 2).unwrap();
    let u = g.constant(Tensor::vector(vec![0.2, -0.5, 0.9]));
    let h = g.constant(Tensor::vector(vec![0.3, 0.1]));
    let (p, c) = attention_op(&mut g, &[u], h, &head).unwrap();
    assert_eq!(vals(&g, p), vec![1.0]);
    assert_eq!(vals(&g, c), vec![0.2, -0.5, 0.9]);
}

#[test]
fn attention_zero_w1_is_uniform() {
    let mut s = head_store(2, 2, 3, 2);
    s.value_mut("t.w1").unwrap().data_mut().fill(0.0);
    let mut g = Graph::new();
    let head = AttentionHead::load(&mut g, &s, "t", 2).unwrap();
    let us: Vec<Var> = [[1.0, 0.0], [0.0, 1.0], [2.0, 2.0], [-1.0, 1.0]]
        .iter()
        .map(|u| g.constant(Tensor::vector(u.to_vec())))
        .collect();
    let h = g.constant(Tensor::vector(vec![0.5, -0.5]));
    let (p, c) = attention_op(&mut g, &us, h, &head).unwrap();
    assert!(vals(&g, p).iter().all(|&x| (x - 0.25).abs() < 1e-15));
    let c = vals(&g, c);
    assert!((c[0] - 0.5).abs() < 1e-15 && (c[1] - 1.0).abs() < 1e-15);
}

#[test]
fn attention_matches_scalar_evaluation() {
    let (m, n_h, a) = (3, 2, 4);
    let s = head_store(m, n_h, a, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let us: Vec<Vec<f64>> = (0..3).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let h: Vec<f64> = (0..n_h).map(|_| rng.random_range(-1.0..1.0)).collect();

    let w1 = s.value("t.w1").unwrap().data();
    let w2 = s.value("t.w2").unwrap().data(); // [m + n_h, a], row-major
    let mut e = Vec::new();
    for u in &us {
        let joined: Vec<f64> = u.iter().chain(&h).copied().collect();
        let mut score = 0.0;
        for k in 0..a {
            let mut z = 0.0;
            for (r, x) in joined.iter().enumerate() {
                z += w2[r * a + k] * x;
            }
            score += w1[k] * z.tanh();
        }
        e.push(score);
    }
    let mx = e.iter().cloned().fold(f64::MIN, f64::max);
    let ex: Vec<f64> = e.iter().map(|x| (x - mx).exp()).collect();
    let z: f64 = ex.iter().sum();
    let p_ref: Vec<f64> = ex.iter().map(|x| x / z).collect();
    let c_ref: Vec<f64> = (0..m).map(|j| (0..3).map(|i| p_ref[i] * us[i][j]).sum()).collect();

    let mut g = Graph::new();
    let head = AttentionHead::load(&mut g, &s, "t", n_h).unwrap();
    let uv: Vec<Var> = us.iter().map(|u| g.constant(Tensor::vector(u.clone()))).collect();
    let hv = g.constant(Tensor::vector(h));
    let (p, c) = attention_op(&mut g, &uv, hv, &head).unwrap();
    for (x, y) in vals(&g, p).iter().zip(&p_ref) {
        assert!((x - y).abs() < 1e-12);
    }
    for (x, y) in vals(&g, c).iter().zip(&c_ref) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn attention_empty_input_is_error() {
    let s = head_store(2, 2, 2, 4);
    let mut g = Graph::new();
    let head = AttentionHead::load(&mut g, &s, "t", 2).unwrap();
    let h = g.constant(Tensor::vector(vec![0.0, 0.0]));
    assert!(matches!(attention_op(&mut g, &[], h, &head), Err(qamvs::Error::EmptySupport(_))));
}

#[test]
fn zero_encoder_gives_zero_encodings() {
    let b = random_bundle(1, &[3, 2], 2);
    let mut p = PolicyParams::init(config(), 1).unwrap();
    p.zero_prefix("enc.");
    let mut g = Graph::new();
    let enc = encode_frames(&mut g, &b, &p).unwrap();
    for v in &enc.videos {
        assert!(vals(&g, *v).iter().all(|&x| x == 0.0));
    }
    assert!(vals(&g, enc.images.unwrap()).iter().all(|&x| x == 0.0));
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain-loop LSTM over a sequence of inputs, returning hidden states.
fn scalar_lstm(store: &ParamStore, prefix: &str, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let wx = store.value(&format!("{prefix}.wx")).unwrap();
    let wh = store.value(&format!("{prefix}.wh")).unwrap();
    let b = store.value(&format!("{prefix}.b")).unwrap().data();
    let d_in = wx.shape()[0];
    let n = wh.shape()[0];
    let (wx, wh) = (wx.data(), wh.data());
    let mut h = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut out = Vec::new();
    for x in xs {
        let mut pre = b.to_vec();
        for (j, p) in pre.iter_mut().enumerate() {
            for k in 0..d_in {
                *p += x[k] * wx[k * 4 * n + j];
            }
            for k in 0..n {
                *p += h[k] * wh[k * 4 * n + j];
            }
        }
        for k in 0..n {
            let i = sigmoid(pre[k]);
            let f = sigmoid(pre[n + k]);
            let gg = pre[2 * n + k].tanh();
            let o = sigmoid(pre[3 * n + k]);
            c[k] = f * c[k] + i * gg;
            h[k] = o * c[k].tanh();
        }
        out.push(h.clone());
    }
    out
}

fn projected_frames(p: &PolicyParams, frames: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let w = p.store.value("enc.proj.w").unwrap();
    let b = p.store.value("enc.proj.b").unwrap().data();
    let d_e = w.shape()[1];
    frames
        .iter()
        .map(|x| {
            (0..d_e)
                .map(|j| b[j] + x.iter().enumerate().map(|(k, xk)| xk * w.data()[k * d_e + j]).sum::<f64>())
                .collect()
        })
        .collect()
}

#[test]
fn encoder_matches_two_pass_scalar_recurrence() {
    for lengths in [&[1usize][..], &[3][..]] {
        let b = random_bundle(5, lengths, 0);
        let p = PolicyParams::init(config(), 5).unwrap();
        let xs = projected_frames(&p, &b.videos[0].frames);
        let fwd = scalar_lstm(&p.store, "enc.fwd", &xs);
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let mut bwd = scalar_lstm(&p.store, "enc.bwd", &rev);
        bwd.reverse();

        let mut g = Graph::new();
        let enc = encode_frames(&mut g, &b, &p).unwrap();
        for t in 0..lengths[0] {
            let got = vals(&g, enc.frame_rows[0][t]);
            let want: Vec<f64> = fwd[t].iter().chain(&bwd[t]).copied().collect();
            for (x, y) in got.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12, "t={t}: {got:?} vs {want:?}");
            }
        }
    }
}

#[test]
fn encoder_rejects_wrong_dims() {
    let b = random_bundle(1, &[2], 0);
    let p = PolicyParams::init(PolicyConfig::toy(DV + 1, DT, 8), 1).unwrap();
    let mut g = Graph::new();
    assert!(matches!(encode_frames(&mut g, &b, &p), Err(qamvs::Error::Dimension { .. })));
}

#[test]
fn decoder_init_and_advance() {
    let b = random_bundle(2, &[3, 2], 1);
    let p = PolicyParams::init(config(), 2).unwrap();
    let mut g = Graph::new();
    let ctx = setup(&mut g, &b, &p);
    let s0 = init_decoder(&mut g, &p).unwrap();
    let s0b = init_decoder(&mut g, &p).unwrap();
    assert_eq!(s0.step, 0);
    assert!(s0.selected.is_empty());
    assert_eq!(vals(&g, s0.h), vals(&g, s0b.h));

    let enc = ctx.encoding((1, 0));
    let s1 = advance_decoder(&mut g, &s0, (1, 0), enc, &p).unwrap();
    assert_eq!(s1.step, 1);
    assert_eq!(s1.order, vec![(1, 0)]);
    let w = LstmWeights::load(&mut g, &p.store, "dec.lstm").unwrap();
    let (h, c) = lstm_step(&mut g, enc, s0.h, s0.c, &w).unwrap();
    assert_eq!(vals(&g, s1.h), vals(&g, h));
    assert_eq!(vals(&g, s1.c), vals(&g, c));
    assert!(matches!(
        advance_decoder(&mut g, &s1, (1, 0), enc, &p),
        Err(qamvs::Error::Contract(_))
    ));
}

#[test]
fn zero_decoder_weights_keep_h_zero() {
    let b = random_bundle(3, &[2, 2], 1);
    let mut p = PolicyParams::init(config(), 3).unwrap();
    p.zero_prefix("dec.");
    let mut g = Graph::new();
    let ctx = setup(&mut g, &b, &p);
    let s = init_decoder(&mut g, &p).unwrap();
    assert!(vals(&g, s.h).iter().all(|&x| x == 0.0));
    let s = advance_decoder(&mut g, &s, (0, 1), ctx.encoding((0, 1)), &p).unwrap();
    assert!(vals(&g, s.h).iter().all(|&x| x == 0.0));
}

fn walk_steps(b: &EpisodeBundle, p: &PolicyParams, mut visit: impl FnMut(&Graph, &EpisodeContext, &DecoderState, &StepDistribution)) {
    let mut g = Graph::new();
    let ctx = setup(&mut g, b, p);
    let mut s = init_decoder(&mut g, p).unwrap();
    for _ in 0..ctx.total {
        let d = policy_step(&mut g, &ctx, &s).unwrap();
        visit(&g, &ctx, &s, &d);
        let a = ctx.frame_ref(argmax(d.probs(&g)));
        s = advance_decoder(&mut g, &s, a, ctx.encoding(a), p).unwrap();
    }
    assert!(matches!(policy_step(&mut g, &ctx, &s), Err(qamvs::Error::EmptySupport(_))));
}

#[test]
fn every_head_is_a_distribution_over_remaining_frames() {
    for seed in 0..10 {
        let n_images = (seed % 3) as usize;
        let b = random_bundle(seed, &[3, 1, 4], n_images);
        let p = PolicyParams::init(config(), seed).unwrap();
        walk_steps(&b, &p, |g, ctx, s, d| {
            let mask = ctx.action_mask(s);
            let mut heads = vec![d.probs, d.heads.pi_video, d.heads.pi_text];
            heads.extend(d.heads.pi_image);
            assert_eq!(d.heads.pi_image.is_some(), n_images > 0);
            for h in heads {
                let v = vals(g, h);
                assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (x, &m) in v.iter().zip(&mask) {
                    if m {
                        assert!(*x >= 0.0);
                    } else {
                        assert_eq!(*x, 0.0);
                    }
                }
            }
            let mu = d.mu(g);
            assert!((mu.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(mu.iter().all(|&m| m >= 0.0));
            if n_images == 0 {
                assert_eq!(mu[1], 0.0);
            }
            // the mixture is the mu-weighted sum of the heads
            let pv = vals(g, d.heads.pi_video);
            let pt = vals(g, d.heads.pi_text);
            let pi = d.heads.pi_image.map(|h| vals(g, h)).unwrap_or(vec![0.0; pv.len()]);
            for (i, x) in vals(g, d.probs).iter().enumerate() {
                let want = mu[0] * pv[i] + mu[1] * pi[i] + mu[2] * pt[i];
                assert!((x - want).abs() < 1e-15);
            }
        });
    }
}

#[test]
fn last_remaining_frame_gets_all_mass() {
    let b = random_bundle(4, &[2, 2], 2);
    let p = PolicyParams::init(config(), 4).unwrap();
    let mut steps = 0;
    walk_steps(&b, &p, |g, ctx, s, d| {
        steps += 1;
        if s.selected.len() + 1 == ctx.total {
            let v = d.probs(g);
            assert_eq!(v.iter().filter(|&&x| x > 0.0).count(), 1);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!(v.iter().any(|&x| (x - 1.0).abs() < 1e-15));
        }
    });
    assert_eq!(steps, 4);
}

#[test]
fn zero_mix_w1_gives_equal_mixture() {
    for (n_images, want) in [(2, [1.0 / 3.0; 3]), (0, [0.5, 0.0, 0.5])] {
        let b = random_bundle(6, &[2, 3], n_images);
        let mut p = PolicyParams::init(config(), 6).unwrap();
        p.store.value_mut("att.mix.w1").unwrap().data_mut().fill(0.0);
        let mut g = Graph::new();
        let ctx = setup(&mut g, &b, &p);
        let s = init_decoder(&mut g, &p).unwrap();
        let mu = policy_step(&mut g, &ctx, &s).unwrap().mu(&g);
        for (m, w) in mu.iter().zip(want) {
            assert!((m - w).abs() < 1e-15, "{mu:?}");
        }
    }
}

#[test]
fn frame_attention_zero_w1_uniform_over_remaining() {
    let b = random_bundle(7, &[4], 0);
    let mut p = PolicyParams::init(config(), 7).unwrap();
    p.store.value_mut("att.frame.w1").unwrap().data_mut().fill(0.0);
    let mut g = Graph::new();
    let ctx = setup(&mut g, &b, &p);
    let s = init_decoder(&mut g, &p).unwrap();
    let s = advance_decoder(&mut g, &s, (0, 2), ctx.encoding((0, 2)), &p).unwrap();
    let (pf, _) = frame_attention(&mut g, &ctx, 0, &s).unwrap();
    let v = vals(&g, pf);
    let third = 1.0 / 3.0;
    for (i, x) in v.iter().enumerate() {
        let want = if i == 2 { 0.0 } else { third };
        assert!((x - want).abs() < 1e-15);
    }
}

#[test]
fn identical_videos_split_video_attention_evenly() {
    let mut b = random_bundle(8, &[3, 3], 1);
    b.videos[1].frames = b.videos[0].frames.clone();
    let p = PolicyParams::init(config(), 8).unwrap();
    let mut g = Graph::new();
    let ctx = setup(&mut g, &b, &p);
    let s = init_decoder(&mut g, &p).unwrap();
    let d = policy_step(&mut g, &ctx, &s).unwrap();
    let pv = vals(&g, d.heads.p_video);
    assert!((pv[0] - 0.5).abs() < 1e-15 && (pv[1] - 0.5).abs() < 1e-15);

    // exhaust video 1: all video-level mass moves to video 0
    let mut s = s;
    for f in 0..3 {
        s = advance_decoder(&mut g, &s, (1, f), ctx.encoding((1, f)), &p).unwrap();
    }
    let d = policy_step(&mut g, &ctx, &s).unwrap();
    assert_eq!(vals(&g, d.heads.p_video), vec![1.0, 0.0]);
    assert!(d.heads.p_frames[1].is_none());
}

#[test]
fn image_head_matches_exp_sum() {
    let b = random_bundle(9, &[3], 2);
    let p = PolicyParams::init(config(), 9).unwrap();
    let mut g = Graph::new();
    let ctx = setup(&mut g, &b, &p);
    let s = init_decoder(&mut g, &p).unwrap();
    let (pi, c) = image_attention(&mut g, &ctx, &s).unwrap().unwrap();
    let c = vals(&g, c);
    let scores: Vec<f64> = (0..3)
        .map(|f| vals(&g, ctx.encoding((0, f))).iter().zip(&c).map(|(a, b)| a * b).sum())
        .collect();
    let z: f64 = scores.iter().map(|x| x.exp()).sum();
    for (x, sc) in vals(&g, pi).iter().zip(&scores) {
        assert!((x - sc.exp() / z).abs() < 1e-12);
    }
}

#[test]
fn image_head_uniform_when_encodings_identical() {
    let mut b = random_bundle(10, &[3], 2);
    let f0 = b.videos[0].frames[0].clone();
    b.videos[0].frames = vec![f0; 3];
    let mut p = PolicyParams::init(config(), 10).unwrap();
    p.zero_prefix("enc.fwd");
    p.zero_prefix("enc.bwd");
    let mut g = Graph::new();
    let ctx = setup(&mut g, &b, &p);
    let s = init_decoder(&mut g, &p).unwrap();
    let (pi, _) = image_attention(&mut g, &ctx, &s).unwrap().unwrap();
    assert!(vals(&g, pi).iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn query_head_spreads_video_mass_uniformly() {
    let b = random_bundle(11, &[3, 1], 1);
    let p = PolicyParams::init(config(), 11).unwrap();
    let mut g = Graph::new();
    let ctx = setup(&mut g, &b, &p);
    let s = init_decoder(&mut g, &p).unwrap();
    let s = advance_decoder(&mut g, &s, (0, 0), ctx.encoding((0, 0)), &p).unwrap();
    let (pi, p_text, _) = query_attention(&mut g, &ctx, &s).unwrap();
    let pt = vals(&g, p_text);
    let pi = vals(&g, pi);
    // two frames remain in video 0, one in video 1
    let want = [0.0, pt[0] / 2.0, pt[0] / 2.0, pt[1]];
    for (x, w) in pi.iter().zip(want) {
        assert!((x - w).abs() < 1e-15);
    }
    assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn query_head_spread_reproduces_worked_split() {
    // p_txt = [0.6, 0.4] with 2 and 1 remaining frames gives [0.3, 0.3, 0.4]
    let p_txt = [0.6, 0.4];
    let remaining = [2usize, 1];
    let spread: Vec<f64> = p_txt
        .iter()
        .zip(remaining)
        .flat_map(|(p, r)| std::iter::repeat_n(p / r as f64, r))
        .collect();
    assert_eq!(spread, vec![0.3, 0.3, 0.4]);
}

#[test]
fn orthogonal_query_gives_uniform_text_attention() {
    let mut b = random_bundle(12, &[2, 2, 2], 0);
    b.query = vec![1.0, 0.0, 0.0, 0.0];
    for (i, v) in b.videos.iter_mut().enumerate() {
        v.text = vec![0.0, 1.0 - i as f64 * 0.2, i as f64 * 0.2, 0.0];
    }
    let p = PolicyParams::init(config(), 12).unwrap();
    let mut g = Graph::new();
    let ctx = setup(&mut g, &b, &p);
    let s = init_decoder(&mut g, &p).unwrap();
    let (_, p_text, _) = query_attention(&mut g, &ctx, &s).unwrap();
    assert!(vals(&g, p_text).iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn video_attention_is_permutation_equivariant() {
    let b = random_bundle(13, &[2, 3, 4], 2);
    let perm = [2usize, 0, 1];
    let mut permuted = b.clone();
    permuted.videos = perm.iter().map(|&i| b.videos[i].clone()).collect();
    let p = PolicyParams::init(config(), 13).unwrap();

    let p_video = |bundle: &EpisodeBundle| {
        let mut g = Graph::new();
        let ctx = setup(&mut g, bundle, &p);
        let s = init_decoder(&mut g, &p).unwrap();
        let d = policy_step(&mut g, &ctx, &s).unwrap();
        vals(&g, d.heads.p_video)
    };
    let base = p_video(&b);
    let moved = p_video(&permuted);
    for (j, &i) in perm.iter().enumerate() {
        assert!((moved[j] - base[i]).abs() < 1e-12, "{base:?} vs {moved:?}");
    }
}

#[test]
fn greedy_argmax_breaks_ties_low() {
    assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    assert_eq!(argmax(&[0.0, 0.0]), 0);
}

#[test]
fn full_policy_log_prob_passes_gradcheck() {
    let report = policy_gradcheck(8, 1e-4, 3).unwrap();
    assert!(report.passed(), "{:?}", report.flagged().collect::<Vec<_>>());
    let groups: std::collections::BTreeSet<String> = report
        .params
        .iter()
        .map(|p| p.name.rsplit_once('.').unwrap().0.to_string())
        .collect();
    for grp in ["adapter", "att.frame", "att.image", "att.mix", "att.text", "att.video", "dec", "dec.lstm", "enc.bwd", "enc.fwd", "enc.proj"] {
        assert!(groups.contains(grp), "{grp}");
    }
}

#[test]
fn synthetic_bundle_runs_end_to_end() {
    let spec = SyntheticSpec {
        n_events: 1,
        n_videos: 3,
        frames_per_video: 5,
        ..SyntheticSpec::default()
    };
    let b = generate_synthetic(&spec).unwrap().remove(0).normalize().unwrap();
    let p = PolicyParams::init(PolicyConfig::desk(b.d_visual, b.d_text), 0).unwrap();
    let mut n = 0;
    walk_steps(&b, &p, |_, _, _, _| n += 1);
    assert_eq!(n, 15);
}
