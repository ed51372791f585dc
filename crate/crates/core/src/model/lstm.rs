//! Batched LSTM cell with backpropagation through time.
//!
//! Gate pre-activations are `x·W_x + h·W_h + b`, laid out in column blocks
//! `[input | forget | candidate | output]`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};

use super::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights<F> {
    /// `[input, 4 * hidden]`
    pub w_x: Array2<F>,
    /// `[hidden, 4 * hidden]`
    pub w_h: Array2<F>,
    /// `[4 * hidden]`
    pub bias: Array1<F>,
}

impl<F: Real> LstmWeights<F> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmWeights {
            w_x: Array2::zeros((input, 4 * hidden)),
            w_h: Array2::zeros((hidden, 4 * hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.nrows()
    }

    pub fn input(&self) -> usize {
        self.w_x.nrows()
    }

    pub fn cast<G: Real>(&self) -> LstmWeights<G> {
        let f = |v: &F| G::from(*v).expect("finite cast");
        LstmWeights {
            w_x: self.w_x.map(f),
            w_h: self.w_h.map(f),
            bias: self.bias.map(f),
        }
    }
}

/// Everything one step keeps for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmStep<F> {
    pub x: Array2<F>,
    pub h_prev: Array2<F>,
    pub c_prev: Array2<F>,
    /// Activated gates `[i | f | g | o]`, `[B, 4H]`.
    pub gates: Array2<F>,
    pub c: Array2<F>,
    pub tanh_c: Array2<F>,
    pub h: Array2<F>,
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

pub fn step<F: Real>(
    w: &LstmWeights<F>,
    x: Array2<F>,
    h_prev: Array2<F>,
    c_prev: Array2<F>,
) -> LstmStep<F> {
    let hidden = w.hidden();
    let batch = x.nrows();
    debug_assert_eq!(x.ncols(), w.input(), "LSTM input width");
    debug_assert_eq!(h_prev.dim(), (batch, hidden), "LSTM state shape");

    let mut gates = Array2::from_shape_fn((batch, 4 * hidden), |(_, j)| w.bias[j]);
    general_mat_mul(F::one(), &x, &w.w_x, F::one(), &mut gates);
    general_mat_mul(F::one(), &h_prev, &w.w_h, F::one(), &mut gates);

    let mut c = Array2::zeros((batch, hidden));
    let mut tanh_c = Array2::zeros((batch, hidden));
    let mut h = Array2::zeros((batch, hidden));
    for b in 0..batch {
        let mut g = gates.row_mut(b);
        let g = g.as_slice_mut().expect("contiguous gates");
        for j in 0..hidden {
            let i_g = sigmoid(g[j]);
            let f_g = sigmoid(g[hidden + j]);
            let c_g = g[2 * hidden + j].tanh();
            let o_g = sigmoid(g[3 * hidden + j]);
            g[j] = i_g;
            g[hidden + j] = f_g;
            g[2 * hidden + j] = c_g;
            g[3 * hidden + j] = o_g;
            let cell = f_g * c_prev[[b, j]] + i_g * c_g;
            let tc = cell.tanh();
            c[[b, j]] = cell;
            tanh_c[[b, j]] = tc;
            h[[b, j]] = o_g * tc;
        }
    }
    LstmStep {
        x,
        h_prev,
        c_prev,
        gates,
        c,
        tanh_c,
        h,
    }
}

/// Runs the cell over a sequence of inputs.
pub fn forward<F: Real>(
    w: &LstmWeights<F>,
    xs: Vec<Array2<F>>,
    h0: Array2<F>,
    c0: Array2<F>,
) -> Vec<LstmStep<F>> {
    let mut steps: Vec<LstmStep<F>> = Vec::with_capacity(xs.len());
    let (mut h, mut c) = (h0, c0);
    for x in xs {
        let st = step(w, x, h, c);
        h = st.h.clone();
        c = st.c.clone();
        steps.push(st);
    }
    steps
}

pub struct LstmBackward<F> {
    /// Gradient with respect to each step's input.
    pub dxs: Vec<Array2<F>>,
    pub dh0: Array2<F>,
    pub dc0: Array2<F>,
}

/// Backpropagation through time. `dh_out[t]` is the loss gradient flowing
/// into `h_t` from outside the recurrence (`None` for none). Parameter
/// gradients are accumulated into `grad`.
pub fn backward<F: Real>(
    w: &LstmWeights<F>,
    steps: &[LstmStep<F>],
    dh_out: &[Option<Array2<F>>],
    grad: &mut LstmWeights<F>,
) -> LstmBackward<F> {
    assert_eq!(
        steps.len(),
        dh_out.len(),
        "one output gradient slot per step"
    );
    let hidden = w.hidden();
    let batch = steps.first().map(|s| s.h.nrows()).unwrap_or(0);
    let mut dh_next = Array2::<F>::zeros((batch, hidden));
    let mut dc_next = Array2::<F>::zeros((batch, hidden));
    let mut dxs = vec![Array2::zeros((0, 0)); steps.len()];
    let one = F::one();

    for t in (0..steps.len()).rev() {
        let st = &steps[t];
        let mut dh = dh_next;
        if let Some(d) = &dh_out[t] {
            dh += d;
        }
        let mut dpre = Array2::<F>::zeros((batch, 4 * hidden));
        let mut dc_prev = Array2::<F>::zeros((batch, hidden));
        for b in 0..batch {
            let g = st.gates.row(b);
            let mut dp = dpre.row_mut(b);
            for j in 0..hidden {
                let (i_g, f_g, c_g, o_g) =
                    (g[j], g[hidden + j], g[2 * hidden + j], g[3 * hidden + j]);
                let tc = st.tanh_c[[b, j]];
                let dhv = dh[[b, j]];
                let dc = dc_next[[b, j]] + dhv * o_g * (one - tc * tc);
                dp[j] = dc * c_g * i_g * (one - i_g);
                dp[hidden + j] = dc * st.c_prev[[b, j]] * f_g * (one - f_g);
                dp[2 * hidden + j] = dc * i_g * (one - c_g * c_g);
                dp[3 * hidden + j] = dhv * tc * o_g * (one - o_g);
                dc_prev[[b, j]] = dc * f_g;
            }
        }
        general_mat_mul(one, &st.x.t(), &dpre, one, &mut grad.w_x);
        general_mat_mul(one, &st.h_prev.t(), &dpre, one, &mut grad.w_h);
        grad.bias += &dpre.sum_axis(Axis(0));
        dxs[t] = dpre.dot(&w.w_x.t());
        dh_next = dpre.dot(&w.w_h.t());
        dc_next = dc_prev;
    }
    LstmBackward {
        dxs,
        dh0: dh_next,
        dc0: dc_next,
    }
}

/// Splits `[B, a + b]` columns into `([B, a], [B, b])`.
pub fn split_cols<F: Real>(m: &Array2<F>, at: usize) -> (Array2<F>, Array2<F>) {
    (
        m.slice(s![.., ..at]).to_owned(),
        m.slice(s![.., at..]).to_owned(),
    )
}
