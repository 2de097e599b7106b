use ndarray::Zip;

use super::{Mat, ParamStore};

/// Sums per-sample gradients for one optimizer step.
#[derive(Clone, Debug)]
pub struct GradAccumulator {
    grads: Vec<Option<Mat>>,
}

impl GradAccumulator {
    pub fn new(num_params: usize) -> Self {
        Self {
            grads: (0..num_params).map(|_| None).collect(),
        }
    }

    pub fn add(&mut self, grads: Vec<Option<Mat>>, weight: f64) {
        for (slot, g) in self.grads.iter_mut().zip(grads) {
            let Some(mut g) = g else { continue };
            if weight != 1.0 {
                g *= weight;
            }
            match slot {
                Some(acc) => *acc += &g,
                None => *slot = Some(g),
            }
        }
    }

    pub fn grads(&self) -> &[Option<Mat>] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [Option<Mat>] {
        &mut self.grads
    }
}

/// Rescales gradients in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Mat>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let k = max_norm / (norm + 1e-12);
        for g in grads.iter_mut().flatten() {
            *g *= k;
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Mat>,
    pub second: Vec<Mat>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Mat::zeros(p.value.dim()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &[Option<Mat>]) {
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let id = super::ParamId(i);
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            Zip::from(store.value_mut(id))
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}
