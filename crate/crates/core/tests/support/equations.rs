//! Independent scalar-loop implementations of every model formula. Each
//! check returns the worst normwise relative error,
//! `max |got - want| / max |want|`, over `cases` random toy inputs.

use hpmdub::aligner::DurationAligner;
use hpmdub::autograd::{Graph, Mat, ParamStore};
use hpmdub::booster::AtmosphereBooster;
use hpmdub::config::Config;
use hpmdub::data::{generate_samples, SyntheticSpec};
use hpmdub::model::DubbingModel;
use hpmdub::nn::Linear;
use hpmdub::prosody::{AdditiveAttention, ProsodyAdaptor};
use hpmdub::training::{
    loss_emotion, loss_energy, loss_mel, loss_pitch, model_input, sample_loss, total_loss, Lambdas, NormStats,
    Targets,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Replaces every parameter (biases included) with random values.
fn scramble(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        store.value_mut(id).mapv_inplace(|_| rng.random_range(-0.6..0.6));
    }
}

fn rel_err(got: &Mat, want: &Mat) -> f64 {
    assert_eq!(got.dim(), want.dim(), "shape mismatch");
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    got.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

fn scalar_rel(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-300)
}

fn affine(x: &Mat, store: &ParamStore, lin: &Linear) -> Mat {
    let w = store.value(lin.weight);
    let mut y = Array2::zeros((x.nrows(), lin.out_dim));
    for i in 0..x.nrows() {
        for c in 0..lin.out_dim {
            let mut acc = lin.bias.map_or(0.0, |b| store.value(b)[[0, c]]);
            for k in 0..lin.in_dim {
                acc += x[[i, k]] * w[[k, c]];
            }
            y[[i, c]] = acc;
        }
    }
    y
}

/// Softmax over the entries of `scores` where `keep` holds; the rest get exactly 0.
fn masked_softmax(scores: &[f64], keep: &[bool]) -> Vec<f64> {
    let max = scores
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .fold(f64::NEG_INFINITY, |m, (s, _)| m.max(*s));
    let exps: Vec<f64> = scores
        .iter()
        .zip(keep)
        .map(|(s, &k)| if k { (s - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

fn weighted_rows(weights: &[f64], values: &Mat) -> Vec<f64> {
    (0..values.ncols())
        .map(|c| weights.iter().enumerate().map(|(j, w)| w * values[[j, c]]).sum())
        .collect()
}

pub fn align(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let heads = [1, 2, 4][case % 3];
        let dim = heads * rng.random_range(1..=3);
        let (t_v, l) = (rng.random_range(1..=6), rng.random_range(1..=7));
        let mut mask: Vec<bool> = (0..l).map(|_| rng.random_bool(0.7)).collect();
        mask[rng.random_range(0..l)] = true;
        let cfg = Config { dim, aligner_heads: heads, ..Config::desk() };
        let mut store = ParamStore::new();
        let aligner = DurationAligner::new(&mut store, &mut rng, &cfg);
        scramble(&mut store, &mut rng);
        let (lips, phon) = (random(t_v, dim, &mut rng), random(l, dim, &mut rng));

        let mut g = Graph::new(&store);
        let (lv, pv) = (g.constant(lips.clone()), g.constant(phon.clone()));
        let (fused, weights) = aligner.align(&mut g, lv, pv, &mask).unwrap();

        let att = &aligner.attention;
        let q = affine(&lips, &store, &att.query);
        let k = affine(&phon, &store, &att.key);
        let v = affine(&phon, &store, &att.value);
        let dk = dim / heads;
        let mut concat = Array2::zeros((t_v, dim));
        for h in 0..heads {
            let mut w_h = Array2::zeros((t_v, l));
            for i in 0..t_v {
                let scores: Vec<f64> = (0..l)
                    .map(|j| (0..dk).map(|c| q[[i, h * dk + c]] * k[[j, h * dk + c]]).sum::<f64>() / (dk as f64).sqrt())
                    .collect();
                let w = masked_softmax(&scores, &mask);
                for j in 0..l {
                    w_h[[i, j]] = w[j];
                    for c in 0..dk {
                        concat[[i, h * dk + c]] += w[j] * v[[j, h * dk + c]];
                    }
                }
            }
            worst = worst.max(rel_err(g.value(weights[h]), &w_h));
        }
        let want = affine(&concat, &store, &att.output);
        worst = worst.max(rel_err(g.value(fused), &want));
    }
    worst
}

fn additive_oracle(store: &ParamStore, att: &AdditiveAttention, q: &Mat, m: &Mat) -> (Mat, Mat) {
    let (wq, um, b, w) = (store.value(att.query), store.value(att.memory), store.value(att.bias), store.value(att.score));
    let a = wq.ncols();
    let (tq, tm, d) = (q.nrows(), m.nrows(), m.ncols());
    let mut ctx = Array2::zeros((tq, d));
    let mut weights = Array2::zeros((tq, tm));
    for i in 0..tq {
        let scores: Vec<f64> = (0..tm)
            .map(|j| {
                (0..a)
                    .map(|u| {
                        let mut pre = b[[0, u]];
                        for k in 0..d {
                            pre += q[[i, k]] * wq[[k, u]] + m[[j, k]] * um[[k, u]];
                        }
                        w[[u, 0]] * pre.tanh()
                    })
                    .sum()
            })
            .collect();
        let xi = masked_softmax(&scores, &vec![true; tm]);
        for (c, v) in weighted_rows(&xi, m).into_iter().enumerate() {
            ctx[[i, c]] = v;
        }
        for j in 0..tm {
            weights[[i, j]] = xi[j];
        }
    }
    (ctx, weights)
}

pub fn prosody_context(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let dim = rng.random_range(2..=8);
        let cfg = Config { dim, attention_dim: rng.random_range(2..=8), ..Config::desk() };
        let mut store = ParamStore::new();
        let adaptor = ProsodyAdaptor::new(&mut store, &mut rng, &cfg);
        scramble(&mut store, &mut rng);
        let (tq, tm) = (rng.random_range(1..=7), rng.random_range(1..=7));
        let (q, m) = (random(tq, dim, &mut rng), random(tm, dim, &mut rng));
        let mut g = Graph::new(&store);
        let (qv, mv) = (g.constant(q.clone()), g.constant(m.clone()));
        let (branch, (ctx, w)) = if case % 2 == 0 {
            (&adaptor.arousal, adaptor.arousal_context(&mut g, qv, mv).unwrap())
        } else {
            (&adaptor.valence, adaptor.valence_context(&mut g, qv, mv).unwrap())
        };
        let (want_ctx, want_w) = additive_oracle(&store, branch, &q, &m);
        worst = worst.max(rel_err(g.value(ctx), &want_ctx)).max(rel_err(g.value(w), &want_w));
    }
    worst
}

pub fn fuse_scene(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let strict = case % 4 == 3;
        let dim = rng.random_range(2..=8);
        let cfg = Config { dim, strict_attention: strict, ..Config::desk() };
        let mut store = ParamStore::new();
        let booster = AtmosphereBooster::new(&mut store, &mut rng, &cfg);
        scramble(&mut store, &mut rng);
        let t_y = rng.random_range(1..=9);
        let t_s = if strict { t_y } else { rng.random_range(1..=9) };
        let (prosody, scene) = (random(t_y, 2 * dim, &mut rng), random(t_s, dim, &mut rng));
        let mut g = Graph::new(&store);
        let (pv, sv) = (g.constant(prosody.clone()), g.constant(scene.clone()));
        let (ctx, w) = booster.fuse_scene(&mut g, pv, sv).unwrap();

        let q = affine(&prosody, &store, &booster.query);
        let values = if strict { &q } else { &scene };
        let mut want_ctx = Array2::zeros((t_y, dim));
        let mut want_w = Array2::zeros((t_y, t_s));
        for i in 0..t_y {
            let scores: Vec<f64> = (0..t_s)
                .map(|j| (0..dim).map(|c| q[[i, c]] * scene[[j, c]]).sum::<f64>() / (dim as f64).sqrt())
                .collect();
            let p = masked_softmax(&scores, &vec![true; t_s]);
            for (c, v) in weighted_rows(&p, values).into_iter().enumerate() {
                want_ctx[[i, c]] = v;
            }
            for j in 0..t_s {
                want_w[[i, j]] = p[j];
            }
        }
        worst = worst.max(rel_err(g.value(ctx), &want_ctx)).max(rel_err(g.value(w), &want_w));
    }
    worst
}

pub fn scalar_losses(cases: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let t = rng.random_range(1..=40);
        let a: Vec<f64> = (0..t).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..t).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut sq = 0.0;
        for i in 0..t {
            sq += (a[i] - b[i]) * (a[i] - b[i]);
        }
        let mse = sq / t as f64;
        worst = worst.max(scalar_rel(loss_pitch(&a, &b).unwrap(), mse));
        worst = worst.max(scalar_rel(loss_energy(&b, &a).unwrap(), mse));

        let c = rng.random_range(2..=10);
        let logits: Vec<f64> = (0..c).map(|_| rng.random_range(-4.0..4.0)).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let probs: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        let label = rng.random_range(0..c);
        worst = worst.max(scalar_rel(loss_emotion(&probs, label).unwrap(), -(probs[label]).ln()));

        let n = rng.random_range(1..=12);
        let (p, q) = (random(t, n, &mut rng), random(t, n, &mut rng));
        let mut l1 = 0.0;
        for i in 0..t {
            for k in 0..n {
                l1 += (p[[i, k]] - q[[i, k]]).abs();
            }
        }
        worst = worst.max(scalar_rel(loss_mel(&p, &q).unwrap(), l1 / t as f64));

        let l = Lambdas {
            mel: rng.random_range(0.0..2.0),
            pitch: rng.random_range(0.0..2.0),
            energy: rng.random_range(0.0..2.0),
            emo: rng.random_range(0.0..2.0),
        };
        let parts: [f64; 4] = std::array::from_fn(|_| rng.random_range(0.0..50.0));
        let want = l.mel * parts[0] + l.pitch * parts[1] + l.energy * parts[2] + l.emo * parts[3];
        let got = total_loss(parts[0], parts[1], parts[2], parts[3], l, 0).total;
        worst = worst.max(scalar_rel(got, want));
    }
    worst
}

pub fn objective(cases: usize) -> f64 {
    let spec = SyntheticSpec { n_samples: 6, frames: (2, 4), ..SyntheticSpec::default() };
    let data = generate_samples(&spec).unwrap();
    let samples: Vec<_> = data.iter().map(|(s, _)| s).collect();
    let stats = NormStats::fit(&samples).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let cfg = Config {
            dim: 8,
            fft_heads: 2,
            ffn_hidden: 8,
            aligner_heads: 2,
            attention_dim: 4,
            predictor_hidden: 4,
            postnet_channels: 4,
            postnet_layers: 2,
            decoder_blocks: 1,
            phoneme_blocks: 1,
            lip_blocks: 1,
            pre_postnet_mel_loss: case % 2 == 0,
            ..Config::desk()
        };
        let model = DubbingModel::new(&cfg, case as u64).unwrap();
        let sample = samples[case % samples.len()];
        let targets = Targets::new(sample, &stats);
        let l = Lambdas {
            mel: rng.random_range(0.1..2.0),
            pitch: rng.random_range(0.1..2.0),
            energy: rng.random_range(0.1..2.0),
            emo: rng.random_range(0.1..2.0),
        };

        let mut g = Graph::new(&model.store);
        let vars = sample_loss(&model, &mut g, sample, &targets, l).unwrap();

        let mut g2 = Graph::new(&model.store);
        let out = model.forward(&mut g2, model_input(sample), Some(sample.mel_len())).unwrap();
        let t_y = sample.mel_len();
        let frame_l1 = |pred: &Mat| {
            let mut s = 0.0;
            for i in 0..t_y {
                for k in 0..pred.ncols() {
                    s += (pred[[i, k]] - targets.mel[[i, k]]).abs();
                }
            }
            s / t_y as f64
        };
        let mut mel = frame_l1(g2.value(out.mel_after));
        if cfg.pre_postnet_mel_loss {
            mel += frame_l1(g2.value(out.mel_before));
        }
        let mse = |pred: &Mat, target: &Mat| {
            let mut s = 0.0;
            for i in 0..t_y {
                s += (pred[[i, 0]] - target[[i, 0]]).powi(2);
            }
            s / t_y as f64
        };
        let pitch = mse(g2.value(out.pitch), &targets.pitch);
        let energy = mse(g2.value(out.energy), &targets.energy);
        let logits = g2.value(out.emotion_logits.unwrap());
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        let emo = -(logits[[0, sample.emotion]].exp() / z).ln();
        let total = l.mel * mel + l.pitch * pitch + l.energy * energy + l.emo * emo;

        worst = worst
            .max(scalar_rel(g.scalar(vars.mel), mel))
            .max(scalar_rel(g.scalar(vars.pitch), pitch))
            .max(scalar_rel(g.scalar(vars.energy), energy))
            .max(scalar_rel(g.scalar(vars.emo.unwrap()), emo))
            .max(scalar_rel(g.scalar(vars.total), total));
    }
    worst
}
