//! Autodiff against central finite differences.

use std::collections::BTreeMap;

use hpmdub::autograd::{Graph, ParamId, ParamStore, Var};
use hpmdub::config::Config;
use hpmdub::data::DubbingSample;
use hpmdub::model::DubbingModel;
use hpmdub::prosody::ProsodyAdaptor;
use hpmdub::training::{sample_loss, Lambdas, NormStats, Targets};
use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
/// Denominator floor. With a loss near 1e2, rounding alone puts about
/// `1e-16 · 1e2 / h = 1e-9` of noise into each difference quotient, so
/// gradients below this are effectively compared to an absolute 1e-8.
pub const FLOOR: f64 = 1e-5;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

/// Every scalar of the store, addressed as (param, flat index).
fn coordinates(store: &ParamStore) -> Vec<(ParamId, usize)> {
    store.ids().flat_map(|id| (0..store.value(id).len()).map(move |k| (id, k))).collect()
}

fn at(m: &hpmdub::autograd::Mat, k: usize) -> f64 {
    m[[k / m.ncols(), k % m.ncols()]]
}

fn nudge(store: &mut ParamStore, (id, k): (ParamId, usize), delta: f64) {
    let v = store.value_mut(id);
    let cols = v.ncols();
    v[[k / cols, k % cols]] += delta;
}

fn micro_setup() -> (DubbingModel, DubbingSample, Targets) {
    let data = super::samples(4, (2, 2), 21);
    let refs: Vec<_> = data.iter().collect();
    let stats = NormStats::fit(&refs).unwrap();
    let sample = data.into_iter().next().unwrap();
    assert_eq!(sample.video.frames(), 2);
    let targets = Targets::new(&sample, &stats);
    let mut model = DubbingModel::new(&super::micro_config(), 4).unwrap();
    // Nonzero biases and gains so no branch sits at a symmetric point.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for id in model.store.ids().collect::<Vec<_>>() {
        model.store.value_mut(id).mapv_inplace(|x| x + rng.random_range(-0.05..0.05));
    }
    (model, sample, targets)
}

fn loss(model: &DubbingModel, sample: &DubbingSample, targets: &Targets) -> f64 {
    let mut g = Graph::new(&model.store);
    let l = sample_loss(model, &mut g, sample, targets, Lambdas::default()).unwrap();
    g.scalar(l.total)
}

/// Samples 1% of all scalar parameters and compares them at 1e-3.
/// Returns how many were checked, or the offending coordinates.
pub fn end_to_end() -> Result<usize, String> {
    let (mut model, sample, targets) = micro_setup();
    let grads = {
        let mut g = Graph::new(&model.store);
        let l = sample_loss(&model, &mut g, &sample, &targets, Lambdas::default()).unwrap();
        g.backward(l.total).into_params()
    };
    let coords = coordinates(&model.store);
    let n = coords.len().div_ceil(100);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = Vec::new();
    for idx in index::sample(&mut rng, coords.len(), n) {
        let c = coords[idx];
        nudge(&mut model.store, c, H);
        let up = loss(&model, &sample, &targets);
        nudge(&mut model.store, c, -2.0 * H);
        let down = loss(&model, &sample, &targets);
        nudge(&mut model.store, c, H);
        let fd = (up - down) / (2.0 * H);
        let ad = grads[c.0.index()].as_ref().map_or(0.0, |g| at(g, c.1));
        if rel(fd, ad) > 1e-3 {
            failures.push(format!("{}[{}]: fd {fd:e} ad {ad:e}", model.store.name(c.0), c.1));
        }
    }
    if failures.is_empty() {
        Ok(n)
    } else {
        Err(format!("{} of {n} sampled gradients off:\n{}", failures.len(), failures.join("\n")))
    }
}

/// Parameter groups (first two name segments) whose gradient is identically
/// zero, excluding the face encoder which only runs under its ablation.
pub fn dead_groups() -> Vec<String> {
    let (model, sample, targets) = micro_setup();
    let mut g = Graph::new(&model.store);
    let l = sample_loss(&model, &mut g, &sample, &targets, Lambdas::default()).unwrap();
    let grads = g.backward(l.total).into_params();
    let mut norms: BTreeMap<String, f64> = BTreeMap::new();
    for id in model.store.ids() {
        let name = model.store.name(id);
        let group = name.split('.').take(2).collect::<Vec<_>>().join(".");
        let sq = grads[id.index()].as_ref().map_or(0.0, |g| g.iter().map(|x| x * x).sum());
        *norms.entry(group).or_default() += sq;
    }
    // The face encoder only runs under the face-features ablation.
    norms.into_iter().filter(|(k, v)| *v == 0.0 && !k.starts_with("face")).map(|(k, _)| k).collect()
}

/// Worst relative error over every prosody adaptor parameter, with a description.
pub fn adaptor_worst() -> (f64, String) {
    let cfg = Config { dim: 6, attention_dim: 5, predictor_hidden: 4, ..Config::desk() };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let adaptor = ProsodyAdaptor::new(&mut store, &mut rng, &cfg);
    for id in store.ids().collect::<Vec<_>>() {
        store.value_mut(id).mapv_inplace(|x| x + rng.random_range(-0.1..0.1));
    }
    let (t_v, t_y) = (2, 9);
    let rand_mat = |r: usize, c: usize, rng: &mut ChaCha8Rng| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
    let memory = rand_mat(t_y, cfg.dim, &mut rng);
    let arousal = rand_mat(t_v, cfg.dim, &mut rng);
    let valence = rand_mat(t_v, cfg.dim, &mut rng);
    let speaker = rand_mat(1, cfg.dim, &mut rng);
    let upsample: Vec<Option<usize>> = (0..t_y).map(|i| Some((i * t_v / t_y).min(t_v - 1))).collect();
    let energy_target = rand_mat(t_y, 1, &mut rng);
    let pitch_target = rand_mat(t_y, 1, &mut rng);

    let build = |g: &mut Graph| -> Var {
        let m = g.constant(memory.clone());
        let a = g.constant(arousal.clone());
        let v = g.constant(valence.clone());
        let s = g.constant(speaker.clone());
        let out = adaptor.forward(g, m, Some(a), Some(v), &upsample, s).unwrap();
        let mut terms = Vec::new();
        for (pred, target) in [(out.pitch, &pitch_target), (out.energy, &energy_target)] {
            let t = g.constant(target.clone());
            let d = g.sub(pred, t);
            let sq = g.square(d);
            terms.push(g.mean(sq));
        }
        let f = g.square(out.feature);
        terms.push(g.mean(f));
        let ab = g.add(terms[0], terms[1]);
        g.add(ab, terms[2])
    };
    let grads = {
        let mut g = Graph::new(&store);
        let l = build(&mut g);
        g.backward(l).into_params()
    };
    let mut worst = (0.0, String::new());
    for c in coordinates(&store) {
        let eval = |store: &ParamStore| {
            let mut g = Graph::new(store);
            let l = build(&mut g);
            g.scalar(l)
        };
        nudge(&mut store, c, H);
        let up = eval(&store);
        nudge(&mut store, c, -2.0 * H);
        let down = eval(&store);
        nudge(&mut store, c, H);
        let fd = (up - down) / (2.0 * H);
        let ad = grads[c.0.index()].as_ref().map_or(0.0, |g| at(g, c.1));
        let e = rel(fd, ad);
        if e > worst.0 {
            worst = (e, format!("{}[{}]: fd {fd:e} ad {ad:e}", store.name(c.0), c.1));
        }
    }
    worst
}
