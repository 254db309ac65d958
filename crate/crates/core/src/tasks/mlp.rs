//! Learning-rate decay schedule for a tiny MLP trained with momentum SGD.

use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::unroll::{SystemState, UnrolledSystem};

use super::idx::{load_idx_dataset, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpObjective {
    /// Minibatch cross-entropy at the pre-update weights.
    TrainLoss,
    /// Validation error rate after the update.
    ValidationError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpConfig {
    pub horizon: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub decay_q: f64,
    pub objective: MlpObjective,
    /// Synthetic two-Gaussians data: total points and input dimension.
    pub n_points: usize,
    pub input_dim: usize,
    pub train_fraction: f64,
    pub seed: u64,
    /// Optional IDX files replacing the synthetic data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            horizon: 200,
            hidden: 16,
            batch_size: 100,
            momentum: 0.9,
            decay_q: 5000.0,
            objective: MlpObjective::TrainLoss,
            n_points: 2000,
            input_dim: 2,
            train_fraction: 0.8,
            seed: 0,
            images: None,
            labels: None,
        }
    }
}

/// Two isotropic unit-variance Gaussians centred at `±0.75·1`.
pub fn two_gaussians(n_points: usize, dim: usize, seed: u64) -> Dataset {
    let mut stream = rng::stream(seed, 0x6461_7461, 0);
    let mut features = Vec::with_capacity(n_points * dim);
    let mut labels = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let label = i % 2;
        let centre = if label == 0 { -0.75 } else { 0.75 };
        for z in rng::gaussian_vector(&mut stream, dim, 1.0) {
            features.push(centre + z);
        }
        labels.push(label);
    }
    Dataset {
        features,
        dim,
        labels,
        n_classes: 2,
    }
}

#[derive(Debug)]
struct Data {
    train: Dataset,
    valid: Dataset,
    /// Fixed minibatch order over the training set.
    order: Vec<usize>,
}

/// Inner state is `[weights, velocity]`, each laid out as `W1, b1, W2, b2`.
/// `θ = (ln α₀, γ)` with `α_t = α₀ / (1 + t/Q)^γ`.
#[derive(Debug, Clone)]
pub struct LrDecayMlp {
    config: MlpConfig,
    data: Arc<Data>,
    dim: usize,
    classes: usize,
    init: Vec<f64>,
}

impl LrDecayMlp {
    pub fn new(config: &MlpConfig) -> Result<Self> {
        let c = config.clone();
        if c.horizon == 0 || c.hidden == 0 || c.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "mlp needs horizon, hidden and batch_size ≥ 1".into(),
            ));
        }
        if !(0.0 < c.train_fraction && c.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(
                "mlp train_fraction must lie in (0, 1)".into(),
            ));
        }
        let full = match (&c.images, &c.labels) {
            (Some(images), Some(labels)) => load_idx_dataset(images, labels)?,
            (None, None) => two_gaussians(c.n_points, c.input_dim, c.seed),
            _ => {
                return Err(Error::InvalidArgument(
                    "mlp needs both `images` and `labels` or neither".into(),
                ))
            }
        };
        let mut idx: Vec<usize> = (0..full.len()).collect();
        idx.shuffle(&mut rng::stream(c.seed, 0x7370_6c74, 0));
        let n_train = ((full.len() as f64) * c.train_fraction).round() as usize;
        if n_train == 0 || n_train == full.len() {
            return Err(Error::InvalidArgument(
                "mlp dataset too small for a train/validation split".into(),
            ));
        }
        let subset = |ids: &[usize]| Dataset {
            features: ids.iter().flat_map(|&i| full.row(i).to_vec()).collect(),
            dim: full.dim,
            labels: ids.iter().map(|&i| full.labels[i]).collect(),
            n_classes: full.n_classes,
        };
        let train = subset(&idx[..n_train]);
        let valid = subset(&idx[n_train..]);
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut rng::stream(c.seed, 0x6f72_6472, 0));

        let (dim, classes, h) = (full.dim, full.n_classes.max(2), c.hidden);
        let mut init_rng = rng::stream(c.seed, 0x696e_6974, 0);
        let mut init = Vec::new();
        let mut layer = |fan_in: usize, fan_out: usize, out: &mut Vec<f64>| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                out.push(init_rng.random_range(-bound..bound));
            }
            out.extend(std::iter::repeat_n(0.0, fan_out));
        };
        layer(dim, h, &mut init);
        layer(h, classes, &mut init);
        let n_weights = init.len();
        init.extend(std::iter::repeat_n(0.0, n_weights));

        Ok(Self {
            config: c,
            data: Arc::new(Data {
                train,
                valid,
                order,
            }),
            dim,
            classes,
            init,
        })
    }

    fn n_weights(&self) -> usize {
        self.init.len() / 2
    }

    pub fn learning_rate(&self, t: usize, theta: &[f64]) -> f64 {
        theta[0].exp() / (1.0 + t as f64 / self.config.decay_q).powf(theta[1])
    }

    /// Mean cross-entropy and its gradient over `rows` of `set`.
    fn loss_and_grad(&self, w: &[f64], set: &Dataset, rows: &[usize]) -> (f64, Vec<f64>) {
        let (d, h, c) = (self.dim, self.config.hidden, self.classes);
        let (w1, rest) = w.split_at(d * h);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h * c);
        let mut grad = vec![0.0; w.len()];
        let mut loss = 0.0;
        let mut hid = vec![0.0; h];
        let mut logits = vec![0.0; c];
        for &r in rows {
            let x = set.row(r);
            for j in 0..h {
                let z: f64 = b1[j] + (0..d).map(|k| w1[j * d + k] * x[k]).sum::<f64>();
                hid[j] = z.tanh();
            }
            for k in 0..c {
                logits[k] = b2[k] + (0..h).map(|j| w2[k * h + j] * hid[j]).sum::<f64>();
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            let y = set.labels[r];
            loss += lse - logits[y];
            let (gw1, grest) = grad.split_at_mut(d * h);
            let (gb1, grest) = grest.split_at_mut(h);
            let (gw2, gb2) = grest.split_at_mut(h * c);
            let mut dh = vec![0.0; h];
            for k in 0..c {
                let dl = (logits[k] - lse).exp() - if k == y { 1.0 } else { 0.0 };
                gb2[k] += dl;
                for j in 0..h {
                    gw2[k * h + j] += dl * hid[j];
                    dh[j] += dl * w2[k * h + j];
                }
            }
            for j in 0..h {
                let dz = dh[j] * (1.0 - hid[j] * hid[j]);
                gb1[j] += dz;
                for k in 0..d {
                    gw1[j * d + k] += dz * x[k];
                }
            }
        }
        let n = rows.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        (loss / n, grad)
    }

    fn predict(&self, w: &[f64], x: &[f64]) -> usize {
        let (d, h, c) = (self.dim, self.config.hidden, self.classes);
        let (w1, rest) = w.split_at(d * h);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h * c);
        let hid: Vec<f64> = (0..h)
            .map(|j| (b1[j] + (0..d).map(|k| w1[j * d + k] * x[k]).sum::<f64>()).tanh())
            .collect();
        (0..c)
            .map(|k| b2[k] + (0..h).map(|j| w2[k * h + j] * hid[j]).sum::<f64>())
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, l)| if l > best.1 { (k, l) } else { best })
            .0
    }

    pub fn validation_error(&self, weights: &[f64]) -> f64 {
        let v = &self.data.valid;
        let wrong = (0..v.len())
            .filter(|&i| self.predict(weights, v.row(i)) != v.labels[i])
            .count();
        wrong as f64 / v.len() as f64
    }

    fn batch(&self, t: usize) -> Vec<usize> {
        let order = &self.data.order;
        (0..self.config.batch_size)
            .map(|i| order[(t * self.config.batch_size + i) % order.len()])
            .collect()
    }
}

impl UnrolledSystem for LrDecayMlp {
    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn state_dim(&self) -> usize {
        self.init.len()
    }

    fn param_dim(&self) -> usize {
        2
    }

    fn init_state(&self) -> SystemState {
        SystemState::initial(self.init.clone())
    }

    fn step(&self, state: &SystemState, theta: &[f64]) -> (SystemState, f64) {
        let t = state.step_index;
        let nw = self.n_weights();
        let (w, v) = state.values.split_at(nw);
        let (train_loss, grad) = self.loss_and_grad(w, &self.data.train, &self.batch(t));
        let lr = self.learning_rate(t, theta);
        let mut next = Vec::with_capacity(2 * nw);
        let mut vel = Vec::with_capacity(nw);
        for i in 0..nw {
            vel.push(self.config.momentum * v[i] + grad[i]);
        }
        for i in 0..nw {
            next.push(w[i] - lr * vel[i]);
        }
        let loss = match self.config.objective {
            MlpObjective::TrainLoss => train_loss,
            MlpObjective::ValidationError => self.validation_error(&next),
        };
        next.extend(vel);
        (SystemState::new(next, t + 1), loss)
    }
}
