use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array2, Axis};

use super::lstm::{self, split_cols, LstmStep};
use super::{real, Arch, Real, Weights};

/// A teacher-forced training batch: token rows, standardized conditioning
/// `[B, 3]` and the reparameterization noise `[B, latent]`.
#[derive(Debug, Clone)]
pub struct Batch<'a, F> {
    pub tokens: Vec<&'a [u8]>,
    pub cond: Array2<F>,
    pub eps: Array2<F>,
}

/// Batch-mean loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

fn add_row_bias<F: Real>(m: &mut Array2<F>, bias: &ndarray::Array1<F>) {
    for mut row in m.rows_mut() {
        row += bias;
    }
}

fn affine<F: Real>(x: &Array2<F>, w: &Array2<F>, b: &ndarray::Array1<F>) -> Array2<F> {
    let mut out = x.dot(w);
    add_row_bias(&mut out, b);
    out
}

/// `grad_w += xᵀ·dy`, `grad_b += Σ_rows dy`.
fn affine_grad<F: Real>(
    x: &Array2<F>,
    dy: &Array2<F>,
    grad_w: &mut Array2<F>,
    grad_b: &mut ndarray::Array1<F>,
) {
    general_mat_mul(F::one(), &x.t(), dy, F::one(), grad_w);
    *grad_b += &dy.sum_axis(Axis(0));
}

fn gather_rows<F: Real>(table: &Array2<F>, tokens: &[&[u8]], pos: usize) -> Array2<F> {
    let mut out = Array2::zeros((tokens.len(), table.ncols()));
    for (b, seq) in tokens.iter().enumerate() {
        out.row_mut(b).assign(&table.row(seq[pos] as usize));
    }
    out
}

fn scatter_rows<F: Real>(grad: &mut Array2<F>, tokens: &[&[u8]], pos: usize, d: &Array2<F>) {
    for (b, seq) in tokens.iter().enumerate() {
        let mut row = grad.row_mut(seq[pos] as usize);
        row += &d.row(b);
    }
}

fn broadcast_row<F: Real>(v: &ndarray::Array1<F>, rows: usize) -> Array2<F> {
    let mut out = Array2::zeros((rows, v.len()));
    for mut r in out.rows_mut() {
        r.assign(v);
    }
    out
}

pub struct EncoderCache<F> {
    fwd: Vec<LstmStep<F>>,
    bwd: Vec<LstmStep<F>>,
    hcat: Array2<F>,
}

fn encode_cached<F: Real>(
    w: &Weights<F>,
    tokens: &[&[u8]],
    cond: &Array2<F>,
) -> (Array2<F>, Array2<F>, EncoderCache<F>) {
    let batch = tokens.len();
    let seq_len = tokens.first().map(|t| t.len()).unwrap_or(0);
    assert_eq!(cond.dim(), (batch, 3), "conditioning shape");
    assert!(
        tokens.iter().all(|t| t.len() == seq_len),
        "ragged token batch"
    );
    assert!(
        tokens
            .iter()
            .flat_map(|t| t.iter())
            .all(|&t| (t as usize) < w.embed.nrows()),
        "token outside vocabulary"
    );

    let mut xs = Vec::with_capacity(seq_len + 1);
    xs.push(affine(cond, &w.cond_w, &w.cond_b));
    for pos in 0..seq_len {
        xs.push(gather_rows(&w.embed, tokens, pos));
    }
    let rev: Vec<_> = xs.iter().rev().cloned().collect();

    let he = w.enc_fwd.hidden();
    let zeros = || Array2::zeros((batch, he));
    let fwd = lstm::forward(&w.enc_fwd, xs, zeros(), zeros());
    let bwd = lstm::forward(&w.enc_bwd, rev, zeros(), zeros());
    let hcat = concatenate(
        Axis(1),
        &[
            fwd.last().expect("non-empty").h.view(),
            bwd.last().expect("non-empty").h.view(),
        ],
    )
    .expect("matching batch sizes");
    let mu = affine(&hcat, &w.mu_w, &w.mu_b);
    let logvar = affine(&hcat, &w.logvar_w, &w.logvar_b);
    (mu, logvar, EncoderCache { fwd, bwd, hcat })
}

/// Posterior parameters `(mu, logvar)`, each `[B, latent]`.
pub fn encode<F: Real>(
    w: &Weights<F>,
    tokens: &[&[u8]],
    cond: &Array2<F>,
) -> (Array2<F>, Array2<F>) {
    let (mu, logvar, _) = encode_cached(w, tokens, cond);
    (mu, logvar)
}

/// `z = mu + exp(logvar / 2) ⊙ eps`
pub fn reparameterize<F: Real>(mu: &Array2<F>, logvar: &Array2<F>, eps: &Array2<F>) -> Array2<F> {
    assert_eq!(mu.dim(), logvar.dim());
    assert_eq!(mu.dim(), eps.dim());
    let half = real::<F>(0.5);
    let mut z = mu.clone();
    ndarray::Zip::from(&mut z)
        .and(logvar)
        .and(eps)
        .for_each(|z, &lv, &e| *z += (half * lv).exp() * e);
    z
}

pub struct DecoderCache<F> {
    cin: Array2<F>,
    conductor: Vec<LstmStep<F>>,
    inits: Vec<Array2<F>>,
    segments: Vec<Vec<LstmStep<F>>>,
}

/// Result of a decoder pass: the token fed back at every position and the
/// logits that produced it.
pub struct Decoded<F> {
    /// `tokens[b][pos]`
    pub tokens: Vec<Vec<u8>>,
    /// `logits[pos]` is `[B, V]`.
    pub logits: Vec<Array2<F>>,
    cache: DecoderCache<F>,
}

/// Runs the decoder autoregressively. After the logits of position `pos`
/// are computed, `choose(pos, logits)` returns the token of every batch row
/// at that position; that token is fed to the next step.
pub fn decode_with<F: Real>(
    w: &Weights<F>,
    arch: &Arch,
    z: &Array2<F>,
    cond: &Array2<F>,
    mut choose: impl FnMut(usize, &Array2<F>) -> Vec<u8>,
) -> Decoded<F> {
    let batch = z.nrows();
    assert_eq!(z.ncols(), w.mu_b.len(), "latent width");
    assert_eq!(cond.dim(), (batch, 3), "conditioning shape");
    let hc = w.conductor.hidden();
    let hd = w.decoder.hidden();

    let cin = concatenate(Axis(1), &[z.view(), cond.view()]).expect("matching batch sizes");
    let conductor = lstm::forward(
        &w.conductor,
        vec![cin.clone(); arch.segments],
        Array2::zeros((batch, hc)),
        Array2::zeros((batch, hc)),
    );

    let mut tokens = vec![Vec::with_capacity(arch.seq_len()); batch];
    let mut logits = Vec::with_capacity(arch.seq_len());
    let mut inits = Vec::with_capacity(arch.segments);
    let mut segments = Vec::with_capacity(arch.segments);
    let mut prev = broadcast_row(&w.start, batch);

    for (s, cstep) in conductor.iter().enumerate() {
        let seg = &cstep.h;
        let init = affine(seg, &w.dec_init_w, &w.dec_init_b).mapv(|v| v.tanh());
        let (mut h, mut c) = split_cols(&init, hd);
        inits.push(init);
        let mut steps = Vec::with_capacity(arch.segment_len);
        for j in 0..arch.segment_len {
            let pos = s * arch.segment_len + j;
            let x = concatenate(Axis(1), &[prev.view(), seg.view()]).expect("matching batch sizes");
            let st = lstm::step(&w.decoder, x, h, c);
            let l = affine(&st.h, &w.out_w, &w.out_b);
            let chosen = choose(pos, &l);
            assert_eq!(chosen.len(), batch, "one token per batch row");
            for (row, &t) in tokens.iter_mut().zip(&chosen) {
                row.push(t);
            }
            let chosen_refs: Vec<&[u8]> = chosen.iter().map(std::slice::from_ref).collect();
            prev = gather_rows(&w.embed, &chosen_refs, 0);
            h = st.h.clone();
            c = st.c.clone();
            logits.push(l);
            steps.push(st);
        }
        segments.push(steps);
    }

    Decoded {
        tokens,
        logits,
        cache: DecoderCache {
            cin,
            conductor,
            inits,
            segments,
        },
    }
}

/// Teacher-forced decoder logits, one `[B, V]` matrix per position.
pub fn decode<F: Real>(
    w: &Weights<F>,
    arch: &Arch,
    z: &Array2<F>,
    cond: &Array2<F>,
    teacher: &[&[u8]],
) -> Vec<Array2<F>> {
    assert_eq!(teacher.len(), z.nrows(), "teacher batch size");
    assert!(
        teacher.iter().all(|t| t.len() == arch.seq_len()),
        "teacher length"
    );
    decode_with(w, arch, z, cond, |pos, _| {
        teacher.iter().map(|t| t[pos]).collect()
    })
    .logits
}

pub fn softmax_rows<F: Real>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn log_softmax_at<F: Real>(row: ndarray::ArrayView1<F>, target: usize) -> F {
    let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let lse = row
        .iter()
        .map(|&v| (v - max).exp())
        .fold(F::zero(), |a, b| a + b)
        .ln()
        + max;
    row[target] - lse
}

/// Negative ELBO terms averaged over the batch: reconstruction is the
/// per-step categorical cross-entropy averaged over positions, `kl` is the
/// closed-form divergence from `N(0, I)`.
pub fn elbo_loss<F: Real>(
    logits: &[Array2<F>],
    targets: &[&[u8]],
    mu: &Array2<F>,
    logvar: &Array2<F>,
    beta: f64,
) -> LossParts {
    let batch = targets.len();
    let seq_len = logits.len();
    let mut recon = 0.0;
    for (pos, l) in logits.iter().enumerate() {
        for (b, seq) in targets.iter().enumerate() {
            recon -= log_softmax_at(l.row(b), seq[pos] as usize)
                .to_f64()
                .unwrap_or(f64::NAN);
        }
    }
    recon /= (seq_len * batch) as f64;
    let mut kl = 0.0;
    ndarray::Zip::from(mu).and(logvar).for_each(|&m, &lv| {
        let (m, lv) = (
            m.to_f64().unwrap_or(f64::NAN),
            lv.to_f64().unwrap_or(f64::NAN),
        );
        kl += -0.5 * (1.0 + lv - m * m - lv.exp());
    });
    kl /= batch as f64;
    LossParts {
        total: recon + beta * kl,
        recon,
        kl,
    }
}

/// Loss of a batch without gradients.
pub fn loss_only<F: Real>(w: &Weights<F>, arch: &Arch, batch: &Batch<F>, beta: f64) -> LossParts {
    let (mu, logvar, _) = encode_cached(w, &batch.tokens, &batch.cond);
    let z = reparameterize(&mu, &logvar, &batch.eps);
    let logits = decode(w, arch, &z, &batch.cond, &batch.tokens);
    elbo_loss(&logits, &batch.tokens, &mu, &logvar, beta)
}

/// Forward and reverse-mode pass over a batch. Gradients of the batch-mean
/// total loss are added into `grad`.
pub fn loss_and_grad<F: Real>(
    w: &Weights<F>,
    arch: &Arch,
    batch: &Batch<F>,
    beta: f64,
    grad: &mut Weights<F>,
) -> LossParts {
    let tokens = &batch.tokens;
    let bsz = tokens.len();
    let seq_len = arch.seq_len();
    let (mu, logvar, enc) = encode_cached(w, tokens, &batch.cond);
    let z = reparameterize(&mu, &logvar, &batch.eps);
    let dec = decode_with(w, arch, &z, &batch.cond, |pos, _| {
        tokens.iter().map(|t| t[pos]).collect()
    });
    let parts = elbo_loss(&dec.logits, tokens, &mu, &logvar, beta);

    let one = F::one();
    let half = real::<F>(0.5);
    let beta_f = real::<F>(beta);
    let scale = real::<F>(1.0 / (seq_len * bsz) as f64);
    let e = w.embed.ncols();
    let latent = w.mu_b.len();

    // Output head and note-level decoder, segment by segment.
    let cache = &dec.cache;
    let mut dseg: Vec<Array2<F>> = Vec::with_capacity(arch.segments);
    for (s, steps) in cache.segments.iter().enumerate() {
        let mut dh_out = Vec::with_capacity(steps.len());
        for (j, st) in steps.iter().enumerate() {
            let pos = s * arch.segment_len + j;
            let mut dlogits = softmax_rows(&dec.logits[pos]);
            for (b, seq) in tokens.iter().enumerate() {
                dlogits[[b, seq[pos] as usize]] -= one;
            }
            dlogits *= scale;
            affine_grad(&st.h, &dlogits, &mut grad.out_w, &mut grad.out_b);
            dh_out.push(Some(dlogits.dot(&w.out_w.t())));
        }
        let back = lstm::backward(&w.decoder, steps, &dh_out, &mut grad.decoder);

        let seg = &cache.conductor[s].h;
        let mut d_this_seg = Array2::<F>::zeros(seg.raw_dim());
        for (j, dx) in back.dxs.iter().enumerate() {
            let pos = s * arch.segment_len + j;
            let (dprev, dseg_part) = split_cols(dx, e);
            if pos == 0 {
                grad.start += &dprev.sum_axis(Axis(0));
            } else {
                scatter_rows(&mut grad.embed, tokens, pos - 1, &dprev);
            }
            d_this_seg += &dseg_part;
        }
        let init = &cache.inits[s];
        let mut dinit =
            concatenate(Axis(1), &[back.dh0.view(), back.dc0.view()]).expect("same batch");
        ndarray::Zip::from(&mut dinit)
            .and(init)
            .for_each(|d, &y| *d *= one - y * y);
        affine_grad(seg, &dinit, &mut grad.dec_init_w, &mut grad.dec_init_b);
        d_this_seg += &dinit.dot(&w.dec_init_w.t());
        dseg.push(d_this_seg);
    }

    // Conductor.
    let dh_out: Vec<_> = dseg.into_iter().map(Some).collect();
    let back = lstm::backward(&w.conductor, &cache.conductor, &dh_out, &mut grad.conductor);
    let mut dcin = Array2::<F>::zeros(cache.cin.raw_dim());
    for dx in &back.dxs {
        dcin += dx;
    }
    let dz = dcin.slice(s![.., ..latent]).to_owned();

    // Latent: reparameterization and KL.
    let inv_b = real::<F>(1.0 / bsz as f64);
    let mut dmu = dz.clone();
    ndarray::Zip::from(&mut dmu)
        .and(&mu)
        .for_each(|d, &m| *d += beta_f * m * inv_b);
    let mut dlv = dz;
    ndarray::Zip::from(&mut dlv)
        .and(&logvar)
        .and(&batch.eps)
        .for_each(|d, &lv, &ep| {
            let sigma = (half * lv).exp();
            *d = *d * ep * half * sigma + beta_f * half * (sigma * sigma - one) * inv_b;
        });
    affine_grad(&enc.hcat, &dmu, &mut grad.mu_w, &mut grad.mu_b);
    affine_grad(&enc.hcat, &dlv, &mut grad.logvar_w, &mut grad.logvar_b);
    let dhcat = dmu.dot(&w.mu_w.t()) + dlv.dot(&w.logvar_w.t());
    let he = w.enc_fwd.hidden();
    let (dh_f, dh_b) = split_cols(&dhcat, he);

    // Bidirectional encoder. Input index 0 is the conditioning prefix.
    let n_in = seq_len + 1;
    let mut fwd_out = vec![None; n_in];
    fwd_out[n_in - 1] = Some(dh_f);
    let back_f = lstm::backward(&w.enc_fwd, &enc.fwd, &fwd_out, &mut grad.enc_fwd);
    let mut bwd_out = vec![None; n_in];
    bwd_out[n_in - 1] = Some(dh_b);
    let back_b = lstm::backward(&w.enc_bwd, &enc.bwd, &bwd_out, &mut grad.enc_bwd);

    for t in 0..n_in {
        let dx = &back_f.dxs[t] + &back_b.dxs[n_in - 1 - t];
        if t == 0 {
            affine_grad(&batch.cond, &dx, &mut grad.cond_w, &mut grad.cond_b);
        } else {
            scatter_rows(&mut grad.embed, tokens, t - 1, &dx);
        }
    }
    parts
}
