mod common;

use common::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use termforge_core::corpus::{Corpus, FeatureMatrix, FrameSpan, Segment, Utterance};
use termforge_core::embednet::*;

fn small_arch() -> NetArch {
    NetArch::standard(24, 6)
}

fn random_input(r: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// Straight loop evaluation of the architecture, with offsets laid out as
/// `[w0, b0, w1, b1, ...]` and weights stored `fan_in x fan_out`.
fn naive_forward(arch: &NetArch, p: &[f64], x: &[f64]) -> Vec<f64> {
    let mut off = 0;
    let mut take = |n: usize| {
        let s = off;
        off += n;
        s
    };
    let (mut t, mut c) = (arch.input_frames, arch.feature_dim);
    let mut cur = x.to_vec();
    for conv in &arch.convs {
        let w = take(conv.kernel * c * conv.channels);
        let b = take(conv.channels);
        let t_out = t - conv.kernel + 1;
        let mut y = vec![0.0; t_out * conv.channels];
        for tt in 0..t_out {
            for o in 0..conv.channels {
                let mut acc = p[b + o];
                for dt in 0..conv.kernel {
                    for i in 0..c {
                        acc += p[w + (dt * c + i) * conv.channels + o] * cur[(tt + dt) * c + i];
                    }
                }
                y[tt * conv.channels + o] = acc.max(0.0);
            }
        }
        let t_pool = t_out / conv.pool;
        let mut pooled = vec![0.0; t_pool * conv.channels];
        for tt in 0..t_pool {
            for o in 0..conv.channels {
                pooled[tt * conv.channels + o] = (0..conv.pool)
                    .map(|k| y[(tt * conv.pool + k) * conv.channels + o])
                    .fold(f64::NEG_INFINITY, f64::max);
            }
        }
        cur = pooled;
        t = t_pool;
        c = conv.channels;
    }
    let widths: Vec<usize> = arch.hidden.iter().copied().chain([arch.output_dim]).collect();
    for (k, &out) in widths.iter().enumerate() {
        let w = take(cur.len() * out);
        let b = take(out);
        let mut y = vec![0.0; out];
        for (o, yo) in y.iter_mut().enumerate() {
            *yo = p[b + o] + cur.iter().enumerate().map(|(i, v)| p[w + i * out + o] * v).sum::<f64>();
            if k + 1 < widths.len() {
                *yo = yo.max(0.0);
            }
        }
        cur = y;
    }
    assert_eq!(off, p.len());
    cur
}

#[test]
fn forward_matches_naive_evaluation() {
    let mut r = rng(41);
    for seed in 0..5 {
        let mut params = NetworkParams::init(small_arch(), seed).unwrap();
        for v in params.data.iter_mut() {
            *v += r.random_range(-0.05..0.05);
        }
        let x = random_input(&mut r, params.input_len());
        let got = forward(&params, &x).unwrap();
        let want = naive_forward(&params.arch, &params.data, &x);
        assert_eq!(got.len(), 40);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn zero_net_gives_zero_and_last_layer_is_linear() {
    let arch = small_arch();
    let zero = NetworkParams::from_data(arch.clone(), 0, vec![0.0; arch.layout().unwrap().len]).unwrap();
    assert!(forward(&zero, &vec![0.0; zero.input_len()]).unwrap().iter().all(|v| *v == 0.0));

    let mut r = rng(42);
    let params = NetworkParams::init(arch, 1).unwrap();
    let x = random_input(&mut r, params.input_len());
    let base = forward(&params, &x).unwrap();
    let last = *params.layout().layers.last().unwrap();
    let mut doubled = params.clone();
    for v in &mut doubled.data[last.w..last.b] {
        *v *= 2.0;
    }
    for (a, b) in forward(&doubled, &x).unwrap().iter().zip(&base) {
        assert!((a - 2.0 * b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn shape_mismatch_is_an_error() {
    let params = NetworkParams::init(small_arch(), 0).unwrap();
    assert!(forward(&params, &[0.0; 3]).is_err());
    assert!(NetworkParams::from_data(small_arch(), 0, vec![0.0; 3]).is_err());
    assert!(NetArch::standard(4, 6).layout().is_err());
}

fn check_fixture(seed: u64) -> (NetworkParams, Vec<Vec<f64>>) {
    let params = NetworkParams::init(small_arch(), seed).unwrap();
    let mut r = rng(seed + 100);
    let inputs = (0..6).map(|_| random_input(&mut r, params.input_len())).collect();
    (params, inputs)
}

#[test]
fn contrastive_gradient_matches_finite_differences() {
    let (params, inputs) = check_fixture(3);
    let batch = [
        Example::Pair { a: 0, b: 1, y: 1 },
        Example::Pair { a: 2, b: 3, y: 0 },
        Example::Pair { a: 4, b: 5, y: 0 },
    ];
    // margin just wide enough that every negative hinge is active
    let dist = |a: usize, b: usize| {
        let (x, y) = (forward(&params, &inputs[a]).unwrap(), forward(&params, &inputs[b]).unwrap());
        x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
    };
    let margin = dist(2, 3).max(dist(4, 5)) + 1.0;
    let err = gradient_check(&params, &inputs, &batch, margin, 200, 7).unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn triplet_gradient_matches_finite_differences() {
    let (params, inputs) = check_fixture(4);
    let batch = [
        Example::Triplet { anchor: 0, positive: 1, negative: 2 },
        Example::Triplet { anchor: 3, positive: 4, negative: 5 },
    ];
    let sq = |a: usize, b: usize| {
        let (x, y) = (forward(&params, &inputs[a]).unwrap(), forward(&params, &inputs[b]).unwrap());
        x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>()
    };
    let margin = (sq(0, 2) - sq(0, 1)).max(sq(3, 5) - sq(3, 4)).max(0.0) + 1.0;
    let err = gradient_check(&params, &inputs, &batch, margin, 200, 8).unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn inactive_batch_has_zero_gradient() {
    let (params, inputs) = check_fixture(5);
    let batch = [Example::Pair { a: 0, b: 0, y: 1 }, Example::Pair { a: 1, b: 2, y: 0 }];
    let (loss, grad) = batch_loss_grad(&params, &inputs, &batch, 1e-9).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn loss_closed_forms() {
    let z = vec![0.0; 40];
    let mut far = z.clone();
    far[0] = 2.0;
    assert_eq!(contrastive_loss(&z, &z, 1, 1.0), 0.0);
    assert_eq!(contrastive_loss(&z, &far, 0, 1.0), 0.0);
    assert_eq!(contrastive_loss(&z, &z, 0, 1.0), 0.5);
    let (e0, e1) = (vec![0.3, -1.0, 2.0], vec![1.0, 0.5, -0.5]);
    let (_, g) = contrastive_grad(&e0, &e1, 1, 1.0);
    assert_eq!(g, vec![0.3 - 1.0, -1.0 - 0.5, 2.0 + 0.5]);

    let (mut p, mut n) = (z.clone(), z.clone());
    p[0] = 1.0;
    n[1] = 1.2;
    assert!((triplet_loss(&z, &p, &n, 1.0) - 0.56).abs() < 1e-12);
    assert_eq!(triplet_loss(&z, &p, &p, 1.0), 1.0);
    assert_eq!(triplet_loss(&z, &p, &far, 1.0), 0.0);
}

#[test]
fn pad_and_truncate() {
    let m = FeatureMatrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    assert_eq!(pad_or_truncate(&m, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert_eq!(pad_or_truncate(&m, 5), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(pad_or_truncate(&m, 2), vec![1.0, 2.0, 3.0, 4.0]);
}

fn separable_pairs() -> (NetworkParams, Vec<Vec<f64>>, Vec<Example>) {
    let params = NetworkParams::init(small_arch(), 9).unwrap();
    let mut r = rng(9);
    let len = params.input_len();
    let a = random_input(&mut r, len);
    let b: Vec<f64> = a.iter().map(|v| -v).collect();
    let mut inputs = Vec::new();
    for i in 0..10 {
        let src = if i % 2 == 0 { &a } else { &b };
        inputs.push(src.iter().map(|v| v + r.random_range(-0.05..0.05)).collect());
    }
    let examples = (0..5)
        .flat_map(|i| {
            [
                Example::Pair { a: 2 * i, b: (2 * i + 2) % 10, y: 1 },
                Example::Pair { a: 2 * i, b: 2 * i + 1, y: 0 },
            ]
        })
        .collect();
    (params, inputs, examples)
}

fn smoke_config(lr: f64) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        batch_size: 4,
        max_epochs: 8,
        seed: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn training_lowers_the_loss() {
    let (params, inputs, examples) = separable_pairs();
    let out = train(params, &inputs, &examples, &smoke_config(1e-3)).unwrap();
    assert!(out.loss_curve.last().unwrap() < &out.loss_curve[0], "{:?}", out.loss_curve);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let (params, inputs, examples) = separable_pairs();
    let out = train(params.clone(), &inputs, &examples, &smoke_config(0.0)).unwrap();
    assert_eq!(out.params, params);
    assert!(out.loss_curve.windows(2).all(|w| w[0] == w[1]));
    assert!(out.stopped_early);
}

#[test]
fn training_is_bit_reproducible() {
    let (params, inputs, examples) = separable_pairs();
    let a = train(params.clone(), &inputs, &examples, &smoke_config(1e-3)).unwrap();
    let b = train(params, &inputs, &examples, &smoke_config(1e-3)).unwrap();
    assert_eq!(a.loss_curve.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.loss_curve.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.params, b.params);
}

#[test]
fn divergence_is_reported() {
    let (params, inputs, examples) = separable_pairs();
    let err = train(params, &inputs, &examples, &smoke_config(1e6)).unwrap_err();
    assert!(matches!(err, termforge_core::Error::Divergence { .. }), "{err}");
}

#[test]
fn embed_all_rows() {
    let mut r = rng(43);
    let frames = 30;
    let data: Vec<f32> = (0..frames * 6).map(|_| r.random_range(-1.0..1.0)).collect();
    let u = Utterance {
        id: "u0".into(),
        features: FeatureMatrix::new(frames, 6, data).unwrap(),
        transcription: syms(&[0]),
        frame_spans: vec![FrameSpan::new(0, frames)],
    };
    let corpus = Corpus::new(6, 1, vec![u]).unwrap();
    let seg = |id, s, e| Segment {
        id,
        utterance: "u0".into(),
        span: FrameSpan::new(s, e),
        symbols: syms(&[0]),
        embedding: None,
    };
    let segs = vec![seg(0, 2, 12), seg(1, 2, 12), seg(2, 5, 30)];
    let params = NetworkParams::init(small_arch(), 2).unwrap();
    let rows = embed_all(&params, &segs, &corpus).unwrap();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], rows[1]);
    assert_ne!(rows[0], rows[2]);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let params = NetworkParams::init(small_arch(), 11).unwrap();
    let path = dir.path().join("p.bin");
    save_params(&params, &path).unwrap();
    assert_eq!(load_params(&path).unwrap(), params);
    let rows = vec![vec![1.0, -2.5], vec![f64::MIN_POSITIVE, 3.0]];
    let epath = dir.path().join("e.bin");
    write_embeddings(&rows, &epath).unwrap();
    assert_eq!(read_embeddings(&epath).unwrap(), rows);
    std::fs::write(&path, b"junk").unwrap();
    assert!(load_params(&path).is_err());
}
