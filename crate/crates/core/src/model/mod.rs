//! Conditional sequence VAE over 16-note melodies.
//!
//! * Encoder: bidirectional LSTM over `[lift(c), embed(x_1), ..., embed(x_16)]`,
//!   final states of both directions projected to `mu` and `logvar`.
//! * Decoder: a conductor LSTM reads `[z ‖ c]` once per segment and emits a
//!   segment embedding; each embedding seeds (through a `tanh` projection)
//!   the state of a note-level LSTM that produces the segment's notes
//!   autoregressively from `[embed(previous note) ‖ segment embedding]`.
//!
//! All network code is generic over the float type so that training can run
//! in `f32` while gradient checks run in `f64`.

mod checkpoint;
mod lstm;
mod network;
mod train;

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::contour::NUM_COMPONENTS;
use crate::dataset::{ComponentStats, PitchVocabulary};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint,
    CHECKPOINT_VERSION,
};
pub use lstm::LstmWeights;
pub use network::{
    decode, decode_with, elbo_loss, encode, loss_and_grad, loss_only, reparameterize, softmax_rows,
    Batch, LossParts,
};
pub use train::{teacher_forced_accuracy, train, train_with_progress, EpochLoss};

/// Float types the network runs in.
pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + Debug
    + Send
    + Sync
    + 'static
{
}

impl<T> Real for T where
    T: Float
        + FromPrimitive
        + LinalgScalar
        + ScalarOperand
        + AddAssign
        + SubAssign
        + MulAssign
        + Debug
        + Send
        + Sync
        + 'static
{
}

pub(crate) fn real<F: Real>(x: f64) -> F {
    F::from_f64(x).expect("representable constant")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub embed_dim: usize,
    pub enc_hidden: usize,
    pub latent_dim: usize,
    pub conductor_hidden: usize,
    pub dec_hidden: usize,
    pub segments: usize,
    pub segment_len: usize,
    pub batch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta_max: f64,
    pub beta_warmup_steps: usize,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            embed_dim: 32,
            enc_hidden: 128,
            latent_dim: 32,
            conductor_hidden: 64,
            dec_hidden: 128,
            segments: 4,
            segment_len: 4,
            batch: 64,
            epochs: 30,
            learning_rate: 1e-3,
            beta_max: 0.2,
            beta_warmup_steps: 1000,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn seq_len(&self) -> usize {
        self.segments * self.segment_len
    }

    /// Checks the shape constraints of the network itself.
    pub fn validate_shapes(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("enc_hidden", self.enc_hidden),
            ("latent_dim", self.latent_dim),
            ("conductor_hidden", self.conductor_hidden),
            ("dec_hidden", self.dec_hidden),
            ("segments", self.segments),
            ("segment_len", self.segment_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        Ok(())
    }

    /// Full check for training on 16-note melodies.
    pub fn validate(&self) -> Result<()> {
        self.validate_shapes()?;
        if self.seq_len() != crate::contour::SERIES_LEN {
            return Err(Error::InvalidArgument(format!(
                "segments x segment_len must be {}, got {}x{}",
                crate::contour::SERIES_LEN,
                self.segments,
                self.segment_len
            )));
        }
        if self.batch == 0 {
            return Err(Error::InvalidArgument("batch must be positive".into()));
        }
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        if !non_negative(self.learning_rate)
            || self.learning_rate == 0.0
            || !non_negative(self.beta_max)
            || !non_negative(self.grad_clip)
        {
            return Err(Error::InvalidArgument(
                "learning_rate must be positive; beta_max and grad_clip non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Network dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub enc_hidden: usize,
    pub latent_dim: usize,
    pub conductor_hidden: usize,
    pub dec_hidden: usize,
    pub segments: usize,
    pub segment_len: usize,
}

impl Arch {
    pub fn new(h: &Hyperparams, vocab_size: usize) -> Self {
        Arch {
            vocab_size,
            embed_dim: h.embed_dim,
            enc_hidden: h.enc_hidden,
            latent_dim: h.latent_dim,
            conductor_hidden: h.conductor_hidden,
            dec_hidden: h.dec_hidden,
            segments: h.segments,
            segment_len: h.segment_len,
        }
    }

    pub fn seq_len(&self) -> usize {
        self.segments * self.segment_len
    }
}

/// Every learned tensor of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<F> {
    /// `[V, E]`
    pub embed: Array2<F>,
    /// `[E]`, decoder input before the first note.
    pub start: Array1<F>,
    /// `[3, E]` lift of the conditioning vector into the encoder's prefix step.
    pub cond_w: Array2<F>,
    pub cond_b: Array1<F>,
    pub enc_fwd: LstmWeights<F>,
    pub enc_bwd: LstmWeights<F>,
    /// `[2 * enc_hidden, latent]`
    pub mu_w: Array2<F>,
    pub mu_b: Array1<F>,
    pub logvar_w: Array2<F>,
    pub logvar_b: Array1<F>,
    /// input `latent + 3`
    pub conductor: LstmWeights<F>,
    /// `[conductor_hidden, 2 * dec_hidden]`, segment embedding to decoder `(h0, c0)`.
    pub dec_init_w: Array2<F>,
    pub dec_init_b: Array1<F>,
    /// input `E + conductor_hidden`
    pub decoder: LstmWeights<F>,
    /// `[dec_hidden, V]`
    pub out_w: Array2<F>,
    pub out_b: Array1<F>,
}

impl<F: Real> Weights<F> {
    pub fn zeros(a: &Arch) -> Self {
        let z2 = |r, c| Array2::zeros((r, c));
        let z1 = |n| Array1::zeros(n);
        Weights {
            embed: z2(a.vocab_size, a.embed_dim),
            start: z1(a.embed_dim),
            cond_w: z2(NUM_COMPONENTS, a.embed_dim),
            cond_b: z1(a.embed_dim),
            enc_fwd: LstmWeights::zeros(a.embed_dim, a.enc_hidden),
            enc_bwd: LstmWeights::zeros(a.embed_dim, a.enc_hidden),
            mu_w: z2(2 * a.enc_hidden, a.latent_dim),
            mu_b: z1(a.latent_dim),
            logvar_w: z2(2 * a.enc_hidden, a.latent_dim),
            logvar_b: z1(a.latent_dim),
            conductor: LstmWeights::zeros(a.latent_dim + NUM_COMPONENTS, a.conductor_hidden),
            dec_init_w: z2(a.conductor_hidden, 2 * a.dec_hidden),
            dec_init_b: z1(2 * a.dec_hidden),
            decoder: LstmWeights::zeros(a.embed_dim + a.conductor_hidden, a.dec_hidden),
            out_w: z2(a.dec_hidden, a.vocab_size),
            out_b: z1(a.vocab_size),
        }
    }

    /// Uniform `±1/sqrt(fan_in)` weights, LSTM forget-gate biases at 1,
    /// other LSTM biases at 0. Embeddings see one-hot inputs (fan-in 1).
    pub fn init(a: &Arch, rng: &mut SeededRng) -> Self {
        let mut w = Self::zeros(a);
        let lstm_names = ["enc_fwd", "enc_bwd", "conductor", "decoder"];
        for (name, mut t) in w.tensors_mut() {
            let (owner, field) = name.split_once('.').unwrap_or((name, ""));
            if lstm_names.contains(&owner) && field == "bias" {
                let hidden = t.len() / 4;
                t.iter_mut()
                    .enumerate()
                    .for_each(|(i, v)| *v = if i / hidden == 1 { F::one() } else { F::zero() });
                continue;
            }
            let fan_in = match name {
                "embed" | "start" => 1,
                "cond_b" => NUM_COMPONENTS,
                "mu_b" | "logvar_b" => 2 * a.enc_hidden,
                "dec_init_b" => a.conductor_hidden,
                "out_b" => a.dec_hidden,
                _ => t.shape()[0],
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in t.iter_mut() {
                *v = real(rng.random_range(-bound..bound));
            }
        }
        w
    }

    /// Named views in a fixed order (also the checkpoint order).
    pub fn tensors(&self) -> Vec<(&'static str, ArrayViewD<'_, F>)> {
        vec![
            ("embed", self.embed.view().into_dyn()),
            ("start", self.start.view().into_dyn()),
            ("cond_w", self.cond_w.view().into_dyn()),
            ("cond_b", self.cond_b.view().into_dyn()),
            ("enc_fwd.w_x", self.enc_fwd.w_x.view().into_dyn()),
            ("enc_fwd.w_h", self.enc_fwd.w_h.view().into_dyn()),
            ("enc_fwd.bias", self.enc_fwd.bias.view().into_dyn()),
            ("enc_bwd.w_x", self.enc_bwd.w_x.view().into_dyn()),
            ("enc_bwd.w_h", self.enc_bwd.w_h.view().into_dyn()),
            ("enc_bwd.bias", self.enc_bwd.bias.view().into_dyn()),
            ("mu_w", self.mu_w.view().into_dyn()),
            ("mu_b", self.mu_b.view().into_dyn()),
            ("logvar_w", self.logvar_w.view().into_dyn()),
            ("logvar_b", self.logvar_b.view().into_dyn()),
            ("conductor.w_x", self.conductor.w_x.view().into_dyn()),
            ("conductor.w_h", self.conductor.w_h.view().into_dyn()),
            ("conductor.bias", self.conductor.bias.view().into_dyn()),
            ("dec_init_w", self.dec_init_w.view().into_dyn()),
            ("dec_init_b", self.dec_init_b.view().into_dyn()),
            ("decoder.w_x", self.decoder.w_x.view().into_dyn()),
            ("decoder.w_h", self.decoder.w_h.view().into_dyn()),
            ("decoder.bias", self.decoder.bias.view().into_dyn()),
            ("out_w", self.out_w.view().into_dyn()),
            ("out_b", self.out_b.view().into_dyn()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, ArrayViewMutD<'_, F>)> {
        vec![
            ("embed", self.embed.view_mut().into_dyn()),
            ("start", self.start.view_mut().into_dyn()),
            ("cond_w", self.cond_w.view_mut().into_dyn()),
            ("cond_b", self.cond_b.view_mut().into_dyn()),
            ("enc_fwd.w_x", self.enc_fwd.w_x.view_mut().into_dyn()),
            ("enc_fwd.w_h", self.enc_fwd.w_h.view_mut().into_dyn()),
            ("enc_fwd.bias", self.enc_fwd.bias.view_mut().into_dyn()),
            ("enc_bwd.w_x", self.enc_bwd.w_x.view_mut().into_dyn()),
            ("enc_bwd.w_h", self.enc_bwd.w_h.view_mut().into_dyn()),
            ("enc_bwd.bias", self.enc_bwd.bias.view_mut().into_dyn()),
            ("mu_w", self.mu_w.view_mut().into_dyn()),
            ("mu_b", self.mu_b.view_mut().into_dyn()),
            ("logvar_w", self.logvar_w.view_mut().into_dyn()),
            ("logvar_b", self.logvar_b.view_mut().into_dyn()),
            ("conductor.w_x", self.conductor.w_x.view_mut().into_dyn()),
            ("conductor.w_h", self.conductor.w_h.view_mut().into_dyn()),
            ("conductor.bias", self.conductor.bias.view_mut().into_dyn()),
            ("dec_init_w", self.dec_init_w.view_mut().into_dyn()),
            ("dec_init_b", self.dec_init_b.view_mut().into_dyn()),
            ("decoder.w_x", self.decoder.w_x.view_mut().into_dyn()),
            ("decoder.w_h", self.decoder.w_h.view_mut().into_dyn()),
            ("decoder.bias", self.decoder.bias.view_mut().into_dyn()),
            ("out_w", self.out_w.view_mut().into_dyn()),
            ("out_b", self.out_b.view_mut().into_dyn()),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Element type conversion with identical shapes.
    pub fn cast<G: Real>(&self) -> Weights<G> {
        let f = |v: &F| G::from(*v).expect("finite cast");
        Weights {
            embed: self.embed.map(f),
            start: self.start.map(f),
            cond_w: self.cond_w.map(f),
            cond_b: self.cond_b.map(f),
            enc_fwd: self.enc_fwd.cast(),
            enc_bwd: self.enc_bwd.cast(),
            mu_w: self.mu_w.map(f),
            mu_b: self.mu_b.map(f),
            logvar_w: self.logvar_w.map(f),
            logvar_b: self.logvar_b.map(f),
            conductor: self.conductor.cast(),
            dec_init_w: self.dec_init_w.map(f),
            dec_init_b: self.dec_init_b.map(f),
            decoder: self.decoder.cast(),
            out_w: self.out_w.map(f),
            out_b: self.out_b.map(f),
        }
    }

    pub fn fill_zero(&mut self) {
        for (_, mut t) in self.tensors_mut() {
            t.fill(F::zero());
        }
    }
}

/// A trained (or freshly initialized) model with everything needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hyper: Hyperparams,
    pub vocab: PitchVocabulary,
    pub stats: ComponentStats,
    pub weights: Weights<f32>,
}

impl ModelParams {
    pub fn init(hyper: Hyperparams, vocab: PitchVocabulary, stats: ComponentStats) -> Result<Self> {
        hyper.validate_shapes()?;
        vocab.validate()?;
        let mut rng = crate::rng::seeded(hyper.seed);
        let weights = Weights::init(&Arch::new(&hyper, vocab.size), &mut rng);
        Ok(ModelParams {
            hyper,
            vocab,
            stats,
            weights,
        })
    }

    pub fn arch(&self) -> Arch {
        Arch::new(&self.hyper, self.vocab.size)
    }

    /// Standardized conditioning vector for a target contour.
    pub fn conditioning(&self, c: &crate::contour::ContourComponents) -> [f64; NUM_COMPONENTS] {
        self.stats.standardize(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparams_are_valid() {
        Hyperparams::default().validate().unwrap();
        let bad = Hyperparams {
            segments: 3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        bad.validate_shapes().unwrap();
        assert!(Hyperparams {
            latent_dim: 0,
            ..Default::default()
        }
        .validate_shapes()
        .is_err());
    }

    #[test]
    fn init_respects_bounds_and_forget_bias() {
        let h = Hyperparams::default();
        let arch = Arch::new(&h, 36);
        let w: Weights<f64> = Weights::init(&arch, &mut crate::rng::seeded(1));
        let bound = 1.0 / (arch.embed_dim as f64).sqrt();
        assert!(w.enc_fwd.w_x.iter().all(|v| v.abs() <= bound));
        let hid = arch.dec_hidden;
        assert!(w.decoder.bias.iter().skip(hid).take(hid).all(|&v| v == 1.0));
        assert!(w.decoder.bias.iter().take(hid).all(|&v| v == 0.0));
        assert!(w.is_finite());
        assert_eq!(w.tensors().len(), 24);
    }

    #[test]
    fn cast_round_trip_preserves_shapes() {
        let arch = Arch::new(&Hyperparams::default(), 36);
        let w: Weights<f32> = Weights::init(&arch, &mut crate::rng::seeded(2));
        let back: Weights<f32> = w.cast::<f64>().cast();
        assert_eq!(w, back);
    }
}
