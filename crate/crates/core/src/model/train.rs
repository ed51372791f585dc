use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::{encode, loss_and_grad, Batch};
use super::{decode, Arch, Hyperparams, ModelParams, Weights};
use crate::dataset::{component_stats, MelodyDataset};
use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-epoch means of the batch losses, weighted by batch size.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochLoss {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

struct Adam {
    m: Weights<f32>,
    v: Weights<f32>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(arch: &Arch, lr: f64) -> Self {
        Adam {
            m: Weights::zeros(arch),
            v: Weights::zeros(arch),
            t: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut Weights<f32>, grad: &Weights<f32>) {
        self.t += 1;
        let c1 = (1.0 - ADAM_BETA1.powi(self.t)) as f32;
        let c2 = (1.0 - ADAM_BETA2.powi(self.t)) as f32;
        let (b1, b2, lr, eps) = (
            ADAM_BETA1 as f32,
            ADAM_BETA2 as f32,
            self.lr as f32,
            ADAM_EPS as f32,
        );
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((((_, mut p), (_, g)), (_, mut m)), (_, mut v)) in tensors {
            ndarray::Zip::from(&mut p)
                .and(&g)
                .and(&mut m)
                .and(&mut v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
        }
    }
}

fn clip_grad_norm(grad: &mut Weights<f32>, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm: f64 = grad
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.iter())
        .map(|&g| (g as f64) * (g as f64))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        for (_, mut t) in grad.tensors_mut() {
            t.mapv_inplace(|g| g * scale);
        }
    }
}

fn kl_weight(h: &Hyperparams, step: usize) -> f64 {
    if h.beta_warmup_steps == 0 {
        h.beta_max
    } else {
        h.beta_max * (step as f64 / h.beta_warmup_steps as f64).min(1.0)
    }
}

pub fn train(dataset: &MelodyDataset, h: &Hyperparams) -> Result<(ModelParams, Vec<EpochLoss>)> {
    train_with_progress(dataset, h, |_, _| {})
}

/// Trains a model from scratch. One PRNG stream seeded with `h.seed`
/// drives initialization, per-epoch shuffling and the reparameterization
/// noise, in that order, so a seed fixes the whole run.
pub fn train_with_progress(
    dataset: &MelodyDataset,
    h: &Hyperparams,
    mut progress: impl FnMut(usize, &EpochLoss),
) -> Result<(ModelParams, Vec<EpochLoss>)> {
    h.validate()?;
    let stats = component_stats(dataset)?;
    let arch = Arch::new(h, dataset.vocab.size);
    let mut rng: SeededRng = rng::seeded(h.seed);
    let mut params = ModelParams {
        hyper: *h,
        vocab: dataset.vocab,
        stats,
        weights: Weights::init(&arch, &mut rng),
    };

    let conds: Vec<[f32; 3]> = dataset
        .components
        .iter()
        .map(|c| stats.standardize(c).map(|v| v as f32))
        .collect();
    let mut adam = Adam::new(&arch, h.learning_rate);
    let mut grad = Weights::<f32>::zeros(&arch);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(h.epochs);
    let mut step = 0usize;

    for epoch in 0..h.epochs {
        order.shuffle(&mut rng);
        let mut sum = EpochLoss::default();
        for chunk in order.chunks(h.batch) {
            let batch = Batch {
                tokens: chunk
                    .iter()
                    .map(|&i| dataset.sequences[i].tokens().as_slice())
                    .collect(),
                cond: Array2::from_shape_fn((chunk.len(), 3), |(b, k)| conds[chunk[b]][k]),
                eps: Array2::from_shape_fn((chunk.len(), h.latent_dim), |_| {
                    rng::standard_normal(&mut rng) as f32
                }),
            };
            grad.fill_zero();
            let parts = loss_and_grad(
                &params.weights,
                &arch,
                &batch,
                kl_weight(h, step),
                &mut grad,
            );
            if !parts.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step,
                    loss: parts.total,
                });
            }
            clip_grad_norm(&mut grad, h.grad_clip);
            adam.update(&mut params.weights, &grad);
            step += 1;

            let w = chunk.len() as f64;
            sum.total += parts.total * w;
            sum.recon += parts.recon * w;
            sum.kl += parts.kl * w;
        }
        let n = dataset.len() as f64;
        let epoch_loss = EpochLoss {
            total: sum.total / n,
            recon: sum.recon / n,
            kl: sum.kl / n,
        };
        progress(epoch, &epoch_loss);
        history.push(epoch_loss);
    }
    if !params.weights.is_finite() {
        return Err(Error::Divergence {
            epoch: h.epochs,
            step,
            loss: f64::NAN,
        });
    }
    Ok((params, history))
}

/// Fraction of positions where the teacher-forced argmax prediction equals
/// the target, decoding from the posterior mean.
pub fn teacher_forced_accuracy(params: &ModelParams, dataset: &MelodyDataset) -> f64 {
    let arch = params.arch();
    let mut correct = 0usize;
    let mut total = 0usize;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(256) {
        let tokens: Vec<&[u8]> = chunk
            .iter()
            .map(|&i| dataset.sequences[i].tokens().as_slice())
            .collect();
        let cond = Array2::from_shape_fn((chunk.len(), 3), |(b, k)| {
            params.stats.standardize(&dataset.components[chunk[b]])[k] as f32
        });
        let (mu, _) = encode(&params.weights, &tokens, &cond);
        let logits = decode(&params.weights, &arch, &mu, &cond, &tokens);
        for (pos, l) in logits.iter().enumerate() {
            for (b, seq) in tokens.iter().enumerate() {
                let row = l.row(b);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                correct += usize::from(best == seq[pos] as usize);
                total += 1;
            }
        }
    }
    correct as f64 / total as f64
}
