//! Network checks against independent references: a scalar loop
//! re-implementation of the forward pass, central finite differences for
//! every gradient, and closed-form loss values.

use midi_draw_core::model::{
    decode, elbo_loss, encode, loss_and_grad, loss_only, reparameterize, softmax_rows, Arch, Batch,
    Hyperparams, Weights,
};
use midi_draw_core::rng;
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

fn micro_arch(vocab: usize, dim: usize, segments: usize, segment_len: usize) -> Arch {
    Arch {
        vocab_size: vocab,
        embed_dim: dim,
        enc_hidden: dim,
        latent_dim: dim,
        conductor_hidden: dim,
        dec_hidden: dim,
        segments,
        segment_len,
    }
}

/// Weights uniform in `±scale`, so that every gate is exercised.
fn random_weights(arch: &Arch, seed: u64, scale: f64) -> Weights<f64> {
    let mut w = Weights::<f64>::zeros(arch);
    let mut r = rng::seeded(seed);
    for (_, mut t) in w.tensors_mut() {
        t.iter_mut()
            .for_each(|v| *v = r.random_range(-scale..scale));
    }
    w
}

// ---------------------------------------------------------------------------
// Scalar reference

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn row(m: &Array2<f64>, r: usize) -> Vec<f64> {
    m.row(r).to_vec()
}

/// `x·W + b` with explicit loops.
fn linear(x: &[f64], w: &Array2<f64>, b: &Array1<f64>) -> Vec<f64> {
    (0..w.ncols())
        .map(|j| b[j] + (0..x.len()).map(|i| x[i] * w[[i, j]]).sum::<f64>())
        .collect()
}

fn cell(
    l: &midi_draw_core::model::LstmWeights<f64>,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let hid = h.len();
    let mut h_new = vec![0.0; hid];
    let mut c_new = vec![0.0; hid];
    for j in 0..hid {
        let pre = |gate: usize| {
            let col = gate * hid + j;
            l.bias[col]
                + (0..x.len()).map(|i| x[i] * l.w_x[[i, col]]).sum::<f64>()
                + (0..hid).map(|i| h[i] * l.w_h[[i, col]]).sum::<f64>()
        };
        let i_g = sigmoid(pre(0));
        let f_g = sigmoid(pre(1));
        let g_g = pre(2).tanh();
        let o_g = sigmoid(pre(3));
        c_new[j] = f_g * c[j] + i_g * g_g;
        h_new[j] = o_g * c_new[j].tanh();
    }
    (h_new, c_new)
}

fn scalar_encode(w: &Weights<f64>, tokens: &[u8], cond: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut inputs = vec![linear(cond, &w.cond_w, &w.cond_b)];
    inputs.extend(tokens.iter().map(|&t| row(&w.embed, t as usize)));
    let he = w.enc_fwd.w_h.nrows();
    let (mut hf, mut cf) = (vec![0.0; he], vec![0.0; he]);
    for x in &inputs {
        (hf, cf) = cell(&w.enc_fwd, x, &hf, &cf);
    }
    let (mut hb, mut cb) = (vec![0.0; he], vec![0.0; he]);
    for x in inputs.iter().rev() {
        (hb, cb) = cell(&w.enc_bwd, x, &hb, &cb);
    }
    let hcat: Vec<f64> = hf.into_iter().chain(hb).collect();
    (
        linear(&hcat, &w.mu_w, &w.mu_b),
        linear(&hcat, &w.logvar_w, &w.logvar_b),
    )
}

fn scalar_decode(
    w: &Weights<f64>,
    arch: &Arch,
    z: &[f64],
    cond: &[f64],
    teacher: &[u8],
) -> Vec<Vec<f64>> {
    let cin: Vec<f64> = z.iter().chain(cond).copied().collect();
    let hc = arch.conductor_hidden;
    let hd = arch.dec_hidden;
    let (mut h, mut c) = (vec![0.0; hc], vec![0.0; hc]);
    let mut logits = Vec::new();
    for s in 0..arch.segments {
        (h, c) = cell(&w.conductor, &cin, &h, &c);
        let seg = h.clone();
        let init: Vec<f64> = linear(&seg, &w.dec_init_w, &w.dec_init_b)
            .iter()
            .map(|v| v.tanh())
            .collect();
        let (mut dh, mut dc) = (init[..hd].to_vec(), init[hd..].to_vec());
        for j in 0..arch.segment_len {
            let pos = s * arch.segment_len + j;
            let prev = if pos == 0 {
                w.start.to_vec()
            } else {
                row(&w.embed, teacher[pos - 1] as usize)
            };
            let x: Vec<f64> = prev.into_iter().chain(seg.iter().copied()).collect();
            (dh, dc) = cell(&w.decoder, &x, &dh, &dc);
            logits.push(linear(&dh, &w.out_w, &w.out_b));
        }
    }
    logits
}

#[test]
fn encoder_matches_scalar_reference() {
    // two tokens, V = 3, hidden 2
    let arch = micro_arch(3, 2, 1, 2);
    let w = random_weights(&arch, 31, 0.9);
    let tokens: [&[u8]; 2] = [&[2, 0], &[1, 1]];
    let cond = array![[0.4, -1.2, 0.7], [-0.3, 0.0, 2.0]];
    let (mu, logvar) = encode(&w, &tokens, &cond);
    for b in 0..2 {
        let (m, lv) = scalar_encode(&w, tokens[b], &cond.row(b).to_vec());
        for k in 0..2 {
            assert!((mu[[b, k]] - m[k]).abs() < 1e-12);
            assert!((logvar[[b, k]] - lv[k]).abs() < 1e-12);
        }
    }
}

#[test]
fn decoder_matches_scalar_reference() {
    // V = 3, two segments of two steps
    let arch = micro_arch(3, 2, 2, 2);
    let w = random_weights(&arch, 32, 0.9);
    let teacher: [&[u8]; 2] = [&[0, 2, 1, 1], &[2, 2, 0, 1]];
    let z = array![[0.5, -0.25], [1.5, 0.3]];
    let cond = array![[0.1, 0.2, -0.3], [1.0, -1.0, 0.5]];
    let logits = decode(&w, &arch, &z, &cond, &teacher);
    assert_eq!(logits.len(), 4);
    for b in 0..2 {
        let expected = scalar_decode(
            &w,
            &arch,
            &z.row(b).to_vec(),
            &cond.row(b).to_vec(),
            teacher[b],
        );
        for (pos, l) in logits.iter().enumerate() {
            for v in 0..3 {
                assert!(
                    (l[[b, v]] - expected[pos][v]).abs() < 1e-12,
                    "pos {pos} b {b}"
                );
            }
        }
    }
}

#[test]
fn zero_network_is_neutral() {
    let h = Hyperparams::default();
    let arch = Arch::new(&h, 36);
    let w = Weights::<f64>::zeros(&arch);
    let tokens: Vec<&[u8]> = vec![&[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16]; 2];
    let cond = array![[1.0, 2.0, 3.0], [-1.0, 0.0, 4.0]];
    let (mu, logvar) = encode(&w, &tokens, &cond);
    assert!(mu.iter().chain(logvar.iter()).all(|&v| v == 0.0));
    let z = Array2::from_elem((2, h.latent_dim), 0.7);
    let logits = decode(&w, &arch, &z, &cond, &tokens);
    assert_eq!(logits.len(), 16);
    for l in &logits {
        assert_eq!(l.dim(), (2, 36));
        assert!(softmax_rows(l)
            .iter()
            .all(|&p| (p - 1.0 / 36.0).abs() < 1e-15));
    }
}

#[test]
fn softmax_rows_normalize() {
    let arch = micro_arch(7, 5, 4, 4);
    let w = random_weights(&arch, 5, 2.0);
    let tokens: Vec<&[u8]> = vec![&[0, 1, 2, 3, 4, 5, 6, 0, 1, 2, 3, 4, 5, 6, 0, 1]; 3];
    let z = Array2::from_shape_fn((3, 5), |(i, j)| (i as f64 - j as f64) * 0.8);
    let cond = Array2::from_shape_fn((3, 3), |(i, j)| (i * j) as f64 - 1.0);
    for l in decode(&w, &arch, &z, &cond, &tokens) {
        for r in softmax_rows(&l).rows() {
            assert!((r.sum() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn elbo_closed_forms() {
    let mu0 = Array2::<f64>::zeros((1, 4));
    let lv0 = Array2::<f64>::zeros((1, 4));
    let uniform = vec![Array2::<f64>::zeros((1, 36)); 16];
    let target: [&[u8]; 1] = [&[5; 16]];
    let parts = elbo_loss(&uniform, &target, &mu0, &lv0, 0.3);
    assert_eq!(parts.kl, 0.0);
    assert!((parts.recon - 36f64.ln()).abs() < 1e-12);
    assert_eq!(parts.total, parts.recon + 0.3 * parts.kl);

    let mut mu1 = mu0.clone();
    mu1[[0, 0]] = 1.0;
    let parts = elbo_loss(&uniform, &target, &mu1, &lv0, 2.0);
    assert!((parts.kl - 0.5).abs() < 1e-15);
    assert_eq!(parts.total, parts.recon + 2.0 * parts.kl);
}

#[test]
fn reparameterize_closed_forms() {
    let mu = array![[1.0]];
    let z = reparameterize(&mu, &array![[2.0 * 2f64.ln()]], &array![[3.0]]);
    assert!((z[[0, 0]] - 7.0).abs() < 1e-12);
    let mu = array![[0.3, -0.2]];
    assert_eq!(
        reparameterize(&mu, &array![[0.5, 0.1]], &array![[0.0, 0.0]]),
        mu
    );
    let z = reparameterize(&mu, &array![[0.0, 0.0]], &array![[1.5, -2.0]]);
    assert_eq!(z, array![[1.8, -2.2]]);
}

proptest! {
    #[test]
    fn reparameterize_is_linear_in_noise(
        mu in prop::array::uniform4(-3.0f64..3.0),
        lv in prop::array::uniform4(-3.0f64..3.0),
        eps in prop::array::uniform4(-3.0f64..3.0),
        a in -4.0f64..4.0,
    ) {
        let mu = Array2::from_shape_vec((1, 4), mu.to_vec()).unwrap();
        let lv = Array2::from_shape_vec((1, 4), lv.to_vec()).unwrap();
        let eps = Array2::from_shape_vec((1, 4), eps.to_vec()).unwrap();
        let base = reparameterize(&mu, &lv, &eps) - &mu;
        let scaled = reparameterize(&mu, &lv, &(&eps * a)) - &mu;
        for (s, b) in scaled.iter().zip(base.iter()) {
            prop_assert!((s - a * b).abs() <= 1e-12 * (1.0 + s.abs()));
        }
    }

    #[test]
    fn losses_are_non_negative(seed in 0u64..1000, beta in 0.0f64..3.0) {
        let arch = micro_arch(5, 4, 2, 2);
        let w = random_weights(&arch, seed, 1.5);
        let mut r = rng::seeded(seed + 1);
        let toks: Vec<Vec<u8>> = (0..2).map(|_| (0..4).map(|_| r.random_range(0..5u8)).collect()).collect();
        let batch = Batch {
            tokens: toks.iter().map(|t| t.as_slice()).collect(),
            cond: Array2::from_shape_fn((2, 3), |_| r.random_range(-2.0..2.0)),
            eps: Array2::from_shape_fn((2, 4), |_| r.random_range(-2.0..2.0)),
        };
        let p = loss_only(&w, &arch, &batch, beta);
        prop_assert!(p.kl >= 0.0 && p.recon >= 0.0);
        prop_assert_eq!(p.total, p.recon + beta * p.kl);
    }
}

// ---------------------------------------------------------------------------
// Gradients

fn micro_batch(
    r: &mut rng::SeededRng,
    vocab: u8,
    len: usize,
    latent: usize,
    rows: usize,
) -> (Vec<Vec<u8>>, Array2<f64>, Array2<f64>) {
    let toks = (0..rows)
        .map(|_| (0..len).map(|_| r.random_range(0..vocab)).collect())
        .collect();
    let cond = Array2::from_shape_fn((rows, 3), |_| r.random_range(-1.5..1.5));
    let eps = Array2::from_shape_fn((rows, latent), |_| r.random_range(-1.5..1.5));
    (toks, cond, eps)
}

#[test]
fn every_gradient_matches_central_differences() {
    // V = 5, all widths <= 8, batch 2, 2 segments x 2 steps
    let arch = Arch {
        vocab_size: 5,
        embed_dim: 4,
        enc_hidden: 6,
        latent_dim: 3,
        conductor_hidden: 5,
        dec_hidden: 8,
        segments: 2,
        segment_len: 2,
    };
    let w = random_weights(&arch, 77, 0.8);
    let mut r = rng::seeded(78);
    let (toks, cond, eps) = micro_batch(&mut r, 5, 4, 3, 2);
    let batch = Batch {
        tokens: toks.iter().map(|t| t.as_slice()).collect(),
        cond,
        eps,
    };
    let beta = 0.7;

    let mut grad = Weights::<f64>::zeros(&arch);
    loss_and_grad(&w, &arch, &batch, beta, &mut grad);

    let step = 1e-5;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let analytic: Vec<(String, Vec<f64>)> = grad
        .tensors()
        .into_iter()
        .map(|(n, t)| (n.to_string(), t.iter().copied().collect()))
        .collect();
    for (ti, (name, values)) in analytic.iter().enumerate() {
        for (idx, &a) in values.iter().enumerate() {
            let mut plus = w.clone();
            if let Some(v) = plus.tensors_mut()[ti].1.iter_mut().nth(idx) {
                *v += step;
            }
            let mut minus = w.clone();
            if let Some(v) = minus.tensors_mut()[ti].1.iter_mut().nth(idx) {
                *v -= step;
            }
            let numeric = (loss_only(&plus, &arch, &batch, beta).total
                - loss_only(&minus, &arch, &batch, beta).total)
                / (2.0 * step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            assert!(
                rel <= 1e-4,
                "{name}[{idx}]: analytic {a:e} numeric {numeric:e} rel {rel:e}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, w.num_params());
    eprintln!("checked {checked} gradients, worst relative error {worst:e}");
}

#[test]
fn absent_token_has_zero_embedding_gradient() {
    let arch = micro_arch(6, 4, 2, 2);
    let w = random_weights(&arch, 12, 0.8);
    let tokens: Vec<&[u8]> = vec![&[0, 1, 2, 3], &[3, 2, 1, 0]];
    let batch = Batch {
        tokens,
        cond: array![[0.1, 0.2, 0.3], [-0.5, 0.5, 1.0]],
        eps: array![[0.3, -0.1, 0.2, 0.0], [1.0, 0.5, -0.5, 0.25]],
    };
    let mut grad = Weights::<f64>::zeros(&arch);
    loss_and_grad(&w, &arch, &batch, 0.5, &mut grad);
    for absent in [4, 5] {
        assert!(grad.embed.row(absent).iter().all(|&g| g == 0.0));
    }
    assert!(grad.embed.row(0).iter().any(|&g| g != 0.0));
}

#[test]
fn kl_part_of_mu_gradient_scales_with_beta() {
    let arch = micro_arch(5, 4, 2, 2);
    let w = random_weights(&arch, 13, 0.8);
    let mut r = rng::seeded(14);
    let (toks, cond, eps) = micro_batch(&mut r, 5, 4, 4, 2);
    let batch = Batch {
        tokens: toks.iter().map(|t| t.as_slice()).collect(),
        cond,
        eps,
    };
    let mu_grad = |beta: f64| {
        let mut g = Weights::<f64>::zeros(&arch);
        loss_and_grad(&w, &arch, &batch, beta, &mut g);
        g.mu_w
    };
    let recon_only = mu_grad(0.0);
    let kl_at_beta = &mu_grad(0.4) - &recon_only;
    let kl_at_double = &mu_grad(0.8) - &recon_only;
    for (d, s) in kl_at_double.iter().zip(kl_at_beta.iter()) {
        assert!((d - 2.0 * s).abs() <= 1e-12 * (1.0 + d.abs()));
    }
    assert!(kl_at_beta.iter().any(|&v| v.abs() > 1e-6));
}

#[test]
fn token_order_matters_to_the_encoder() {
    let arch = micro_arch(36, 8, 4, 4);
    let w = random_weights(&arch, 90, 0.5);
    let a: &[u8] = &[3, 9, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8, 9, 7, 9];
    let mut swapped = a.to_vec();
    swapped.swap(2, 3);
    let cond = array![[0.2, -0.4, 1.0]];
    let (mu_a, lv_a) = encode(&w, &[a], &cond);
    let (mu_b, lv_b) = encode(&w, &[&swapped], &cond);
    assert_ne!(mu_a, mu_b);
    assert_ne!(lv_a, lv_b);
}
