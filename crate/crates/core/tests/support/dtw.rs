//! DTW and MCD oracles.

use hpmdub::autograd::Mat;
use hpmdub::evaluation::{mcd, mcd_dtw, mcd_dtw_sl, to_cepstra};
use ndarray::{s, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const N_MELS: usize = 80;

pub fn random_mel(t: usize, rng: &mut ChaCha8Rng) -> Mat {
    Array2::from_shape_fn((t, N_MELS), |_| rng.random_range(-80.0..0.0))
}

pub fn random_cepstra(t: usize, rng: &mut ChaCha8Rng) -> Mat {
    to_cepstra(&random_mel(t, rng)).unwrap()
}

/// Plain frame distortion recomputed from cepstra.
fn frame_cost(ca: &Mat, cb: &Mat, i: usize, j: usize) -> f64 {
    let sq: f64 = ca.row(i).iter().zip(cb.row(j)).map(|(x, y)| (x - y).powi(2)).sum();
    10.0 / std::f64::consts::LN_10 * (2.0 * sq).sqrt()
}

/// Minimum summed cost over every monotone path, with its length.
pub fn brute_force(ca: &Mat, cb: &Mat) -> (f64, usize) {
    fn walk(ca: &Mat, cb: &Mat, i: usize, j: usize, acc: f64, len: usize, best: &mut (f64, usize)) {
        let acc = acc + frame_cost(ca, cb, i, j);
        let (n, m) = (ca.nrows(), cb.nrows());
        if i == n - 1 && j == m - 1 {
            if acc < best.0 {
                *best = (acc, len + 1);
            }
            return;
        }
        if i + 1 < n && j + 1 < m {
            walk(ca, cb, i + 1, j + 1, acc, len + 1, best);
        }
        if i + 1 < n {
            walk(ca, cb, i + 1, j, acc, len + 1, best);
        }
        if j + 1 < m {
            walk(ca, cb, i, j + 1, acc, len + 1, best);
        }
    }
    let mut best = (f64::INFINITY, 0);
    walk(ca, cb, 0, 0, 0.0, 0, &mut best);
    best
}

/// Worst relative error of `mcd_dtw` (total and mean cost) against exhaustive
/// enumeration over every length pair up to `max_t`, for `draws` random pairs.
pub fn exhaustive(draws: usize, max_t: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for draw in 0..draws {
        let a = random_mel(max_t, &mut rng);
        let b = random_mel(max_t, &mut rng);
        for ta in 1..=max_t {
            for tb in 1..=max_t {
                let ca = to_cepstra(&a.slice(s![..ta, ..]).to_owned()).unwrap();
                let cb = to_cepstra(&b.slice(s![..tb, ..]).to_owned()).unwrap();
                let dtw = mcd_dtw(&ca, &cb).map_err(|e| e.to_string())?;
                let (total, len) = brute_force(&ca, &cb);
                if dtw.path.len() != len {
                    return Err(format!("draw {draw} {ta}x{tb}: path length {} vs {len}", dtw.path.len()));
                }
                let mean = total / len as f64;
                worst = worst
                    .max((dtw.total_cost - total).abs() / total.max(1e-300))
                    .max((dtw.mean_cost - mean).abs() / mean.max(1e-300));
            }
        }
    }
    Ok(worst)
}

/// Paths start at (0, 0), end at the last pair, and take only legal steps.
pub fn monotone_paths(draws: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..draws {
        let (ta, tb) = (rng.random_range(1..20), rng.random_range(1..20));
        let d = mcd_dtw(&random_cepstra(ta, &mut rng), &random_cepstra(tb, &mut rng)).map_err(|e| e.to_string())?;
        if d.path.first() != Some(&(0, 0)) || d.path.last() != Some(&(ta - 1, tb - 1)) {
            return Err(format!("{ta}x{tb}: path not anchored"));
        }
        for w in d.path.windows(2) {
            let step = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            if !matches!(step, (1, 1) | (1, 0) | (0, 1)) {
                return Err(format!("illegal step {w:?}"));
            }
        }
    }
    Ok(())
}

/// MCD between two mels whose cepstra differ only by 1 in c1.
pub fn single_offset_mcd() -> f64 {
    let base = Array2::from_elem((3, N_MELS), -20.0);
    let mut ln = base.mapv(|db: f64| db / 20.0 * std::f64::consts::LN_10);
    let n = N_MELS as f64;
    for m in 0..N_MELS {
        let basis = (2.0 / n).sqrt() * (std::f64::consts::PI * (m as f64 + 0.5) / n).cos();
        ln.column_mut(m).mapv_inplace(|x| x + basis);
    }
    let shifted = ln.mapv(|x| x * 20.0 / std::f64::consts::LN_10);
    mcd(&to_cepstra(&base).unwrap(), &to_cepstra(&shifted).unwrap()).unwrap()
}

/// Zero self-distance, symmetry, DTW ≤ aligned MCD, invariance to frame
/// duplication, and the length-ratio factor of MCD-DTW-SL, on random pairs.
pub fn identities(draws: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let err = |e: hpmdub::Error| e.to_string();
    for draw in 0..draws {
        let t = rng.random_range(1..=10);
        let a = random_cepstra(t, &mut rng);
        let b = random_cepstra(t, &mut rng);
        let fail = |what: &str| Err(format!("draw {draw}: {what}"));
        if mcd(&a, &a).map_err(err)? != 0.0 || mcd_dtw(&a, &a).map_err(err)?.mean_cost != 0.0 {
            return fail("self distance");
        }
        let (ab, ba) = (mcd(&a, &b).map_err(err)?, mcd(&b, &a).map_err(err)?);
        if (ab - ba).abs() > 1e-9 {
            return fail("symmetry");
        }
        let dtw = mcd_dtw(&a, &b).map_err(err)?.mean_cost;
        if dtw > ab + 1e-9 {
            return fail("DTW above aligned MCD");
        }
        if mcd_dtw_sl(&a, &b).map_err(err)? != dtw {
            return fail("SL differs from DTW at equal length");
        }
        let k = rng.random_range(0..t);
        let mut rows: Vec<usize> = (0..t).collect();
        for _ in 0..rng.random_range(1..4) {
            rows.insert(k, k);
        }
        let stretched = a.select(Axis(0), &rows);
        if mcd_dtw(&stretched, &a).map_err(err)?.mean_cost != 0.0 || mcd_dtw(&a, &stretched).map_err(err)?.total_cost != 0.0 {
            return fail("duplication not free");
        }
        let c = random_cepstra(rng.random_range(1..=9), &mut rng);
        let ratio = a.nrows().max(c.nrows()) as f64 / a.nrows().min(c.nrows()) as f64;
        let want = mcd_dtw(&a, &c).map_err(err)?.mean_cost * ratio;
        if (mcd_dtw_sl(&a, &c).map_err(err)? - want).abs() > 1e-9 * want.max(1.0) {
            return fail("SL length factor");
        }
    }
    Ok(())
}
