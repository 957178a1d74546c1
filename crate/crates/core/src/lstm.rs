//! Peephole LSTM cell: forward step, unrolled sequence pass and analytic BPTT.
//!
//! One step, with `g` the inner activation and all gates sigmoid:
//!
//! ```text
//! i_t = σ(W_xi x_t + W_hi h_{t-1} + w_ci ⊙ c_{t-1} + b_i)
//! f_t = σ(W_xf x_t + W_hf h_{t-1} + w_cf ⊙ c_{t-1} + b_f)
//! c_t = f_t ⊙ c_{t-1} + i_t ⊙ g(W_xc x_t + W_hc h_{t-1} + b_c)
//! o_t = σ(W_xo x_t + W_ho h_{t-1} + w_co ⊙ c_t + b_o)
//! h_t = o_t ⊙ g(c_t)
//! ```
//!
//! The output gate peeks at the *current* cell `c_t`; the input and forget
//! gates peek at `c_{t-1}`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{matvec_acc, matvec_t_acc, outer_acc, sigmoid_scalar, Matrix, Vector};

/// Nonlinearity on the cell pathway: both the candidate and the cell output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum InnerActivation {
    Tanh,
    Sigmoid,
}

impl InnerActivation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            InnerActivation::Tanh => x.tanh(),
            InnerActivation::Sigmoid => sigmoid_scalar(x),
        }
    }

    /// Derivative expressed through the activation's output `y = g(x)`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            InnerActivation::Tanh => 1.0 - y * y,
            InnerActivation::Sigmoid => y * (1.0 - y),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InnerActivation::Tanh => "tanh",
            InnerActivation::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for InnerActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InnerActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(InnerActivation::Tanh),
            "sigmoid" => Ok(InnerActivation::Sigmoid),
            other => Err(Error::InvalidSpec(format!(
                "unknown inner activation `{other}` (expected tanh or sigmoid)"
            ))),
        }
    }
}

/// How a tensor is treated by the L2 penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Peephole,
    Bias,
}

impl ParamKind {
    pub fn penalized(self) -> bool {
        !matches!(self, ParamKind::Bias)
    }
}

#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub kind: ParamKind,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct TensorMut<'a> {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub kind: ParamKind,
    pub data: &'a mut [f64],
}

/// All weights and biases of one cell. `n` neurons, `d` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    pub w_xi: Matrix,
    pub w_xf: Matrix,
    pub w_xc: Matrix,
    pub w_xo: Matrix,
    pub w_hi: Matrix,
    pub w_hf: Matrix,
    pub w_hc: Matrix,
    pub w_ho: Matrix,
    pub w_ci: Vector,
    pub w_cf: Vector,
    pub w_co: Vector,
    pub b_i: Vector,
    pub b_f: Vector,
    pub b_c: Vector,
    pub b_o: Vector,
}

macro_rules! tensor_list {
    ($self:ident, $ctor:ident, $as:ident) => {{
        let CellParams {
            w_xi,
            w_xf,
            w_xc,
            w_xo,
            w_hi,
            w_hf,
            w_hc,
            w_ho,
            w_ci,
            w_cf,
            w_co,
            b_i,
            b_f,
            b_c,
            b_o,
        } = $self;
        let n = w_ci.len();
        vec![
            $ctor!("w_xi", w_xi.rows(), w_xi.cols(), ParamKind::Weight, w_xi.$as()),
            $ctor!("w_xf", w_xf.rows(), w_xf.cols(), ParamKind::Weight, w_xf.$as()),
            $ctor!("w_xc", w_xc.rows(), w_xc.cols(), ParamKind::Weight, w_xc.$as()),
            $ctor!("w_xo", w_xo.rows(), w_xo.cols(), ParamKind::Weight, w_xo.$as()),
            $ctor!("w_hi", n, n, ParamKind::Weight, w_hi.$as()),
            $ctor!("w_hf", n, n, ParamKind::Weight, w_hf.$as()),
            $ctor!("w_hc", n, n, ParamKind::Weight, w_hc.$as()),
            $ctor!("w_ho", n, n, ParamKind::Weight, w_ho.$as()),
            $ctor!("w_ci", n, 1, ParamKind::Peephole, w_ci.$as()),
            $ctor!("w_cf", n, 1, ParamKind::Peephole, w_cf.$as()),
            $ctor!("w_co", n, 1, ParamKind::Peephole, w_co.$as()),
            $ctor!("b_i", n, 1, ParamKind::Bias, b_i.$as()),
            $ctor!("b_f", n, 1, ParamKind::Bias, b_f.$as()),
            $ctor!("b_c", n, 1, ParamKind::Bias, b_c.$as()),
            $ctor!("b_o", n, 1, ParamKind::Bias, b_o.$as()),
        ]
    }};
}

macro_rules! tref {
    ($name:expr, $rows:expr, $cols:expr, $kind:expr, $data:expr) => {
        TensorRef {
            name: $name,
            rows: $rows,
            cols: $cols,
            kind: $kind,
            data: $data,
        }
    };
}

macro_rules! tmut {
    ($name:expr, $rows:expr, $cols:expr, $kind:expr, $data:expr) => {
        TensorMut {
            name: $name,
            rows: $rows,
            cols: $cols,
            kind: $kind,
            data: $data,
        }
    };
}

/// Tensor names in canonical (checkpoint) order.
pub const CELL_TENSOR_NAMES: [&str; 15] = [
    "w_xi", "w_xf", "w_xc", "w_xo", "w_hi", "w_hf", "w_hc", "w_ho", "w_ci", "w_cf", "w_co", "b_i",
    "b_f", "b_c", "b_o",
];

impl CellParams {
    pub fn zeros(n: usize, d: usize) -> Self {
        CellParams {
            w_xi: Matrix::zeros(n, d),
            w_xf: Matrix::zeros(n, d),
            w_xc: Matrix::zeros(n, d),
            w_xo: Matrix::zeros(n, d),
            w_hi: Matrix::zeros(n, n),
            w_hf: Matrix::zeros(n, n),
            w_hc: Matrix::zeros(n, n),
            w_ho: Matrix::zeros(n, n),
            w_ci: Vector::zeros(n),
            w_cf: Vector::zeros(n),
            w_co: Vector::zeros(n),
            b_i: Vector::zeros(n),
            b_f: Vector::zeros(n),
            b_c: Vector::zeros(n),
            b_o: Vector::zeros(n),
        }
    }

    /// Uniform `[-1/√fan_in, 1/√fan_in]` weights per matrix, zero peepholes
    /// and biases; `forget_bias` is added to `b_f`.
    pub fn init<R: Rng + ?Sized>(n: usize, d: usize, forget_bias: f64, rng: &mut R) -> Self {
        let rx = if d > 0 { 1.0 / (d as f64).sqrt() } else { 0.0 };
        let rh = if n > 0 { 1.0 / (n as f64).sqrt() } else { 0.0 };
        CellParams {
            w_xi: Matrix::random_uniform(n, d, rx, rng),
            w_xf: Matrix::random_uniform(n, d, rx, rng),
            w_xc: Matrix::random_uniform(n, d, rx, rng),
            w_xo: Matrix::random_uniform(n, d, rx, rng),
            w_hi: Matrix::random_uniform(n, n, rh, rng),
            w_hf: Matrix::random_uniform(n, n, rh, rng),
            w_hc: Matrix::random_uniform(n, n, rh, rng),
            w_ho: Matrix::random_uniform(n, n, rh, rng),
            w_ci: Vector::zeros(n),
            w_cf: Vector::zeros(n),
            w_co: Vector::zeros(n),
            b_i: Vector::zeros(n),
            b_f: Vector::filled(n, forget_bias),
            b_c: Vector::zeros(n),
            b_o: Vector::zeros(n),
        }
    }

    /// Every entry drawn from `[-bound, bound]`, peepholes and biases included.
    pub fn random_full<R: Rng + ?Sized>(n: usize, d: usize, bound: f64, rng: &mut R) -> Self {
        let mut p = CellParams::zeros(n, d);
        for t in p.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = rng.gen_range(-bound..=bound);
            }
        }
        p
    }

    pub fn n(&self) -> usize {
        self.w_ci.len()
    }

    pub fn d(&self) -> usize {
        self.w_xi.cols()
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        tensor_list!(self, tref, as_slice)
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        tensor_list!(self, tmut, as_mut_slice)
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// Checks that every tensor agrees with `(n, d)`.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let d = self.d();
        for t in self.tensors() {
            let expected = match t.kind {
                ParamKind::Weight if t.name.starts_with("w_x") => (n, d),
                ParamKind::Weight => (n, n),
                _ => (n, 1),
            };
            if (t.rows, t.cols) != expected || t.data.len() != expected.0 * expected.1 {
                return Err(Error::shape(
                    "CellParams::validate",
                    format!("{} expected {}x{}", t.name, expected.0, expected.1),
                    format!("{}x{} (len {})", t.rows, t.cols, t.data.len()),
                ));
            }
        }
        Ok(())
    }
}

/// `(c_t, h_t)` carried between steps.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub c: Vector,
    pub h: Vector,
}

impl CellState {
    pub fn zeros(n: usize) -> Self {
        CellState {
            c: Vector::zeros(n),
            h: Vector::zeros(n),
        }
    }
}

/// Everything one forward step computed, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct StepTrace {
    pub x: Vector,
    pub c_prev: Vector,
    pub h_prev: Vector,
    pub i: Vector,
    pub f: Vector,
    pub o: Vector,
    /// Candidate pre-activation `W_xc x + W_hc h_{t-1} + b_c`.
    pub cand_pre: Vector,
    /// `g(cand_pre)`.
    pub cand: Vector,
    pub c: Vector,
    /// `g(c_t)`.
    pub c_act: Vector,
    pub h: Vector,
}

pub fn cell_forward(
    p: &CellParams,
    prev: &CellState,
    x: &[f64],
    act: InnerActivation,
) -> Result<(CellState, StepTrace)> {
    let n = p.n();
    if x.len() != p.d() {
        return Err(Error::shape("cell_forward", format!("input dim {}", p.d()), format!("x len {}", x.len())));
    }
    if prev.c.len() != n || prev.h.len() != n {
        return Err(Error::shape(
            "cell_forward",
            format!("state dim {n}"),
            format!("c len {}, h len {}", prev.c.len(), prev.h.len()),
        ));
    }
    let trace = step(p, &prev.c, &prev.h, x, act);
    let state = CellState {
        c: trace.c.clone(),
        h: trace.h.clone(),
    };
    Ok((state, trace))
}

fn step(p: &CellParams, c_prev: &[f64], h_prev: &[f64], x: &[f64], act: InnerActivation) -> StepTrace {
    let n = p.n();
    let pre = |wx: &Matrix, wh: &Matrix, b: &Vector| {
        let mut a = b.clone();
        matvec_acc(wx, x, &mut a);
        matvec_acc(wh, h_prev, &mut a);
        a
    };

    let mut i = pre(&p.w_xi, &p.w_hi, &p.b_i);
    let mut f = pre(&p.w_xf, &p.w_hf, &p.b_f);
    let cand_pre = pre(&p.w_xc, &p.w_hc, &p.b_c);
    let mut o = pre(&p.w_xo, &p.w_ho, &p.b_o);

    let mut cand = Vector::zeros(n);
    let mut c = Vector::zeros(n);
    let mut c_act = Vector::zeros(n);
    let mut h = Vector::zeros(n);
    for k in 0..n {
        i[k] = sigmoid_scalar(i[k] + p.w_ci[k] * c_prev[k]);
        f[k] = sigmoid_scalar(f[k] + p.w_cf[k] * c_prev[k]);
        cand[k] = act.apply(cand_pre[k]);
        c[k] = f[k] * c_prev[k] + i[k] * cand[k];
        o[k] = sigmoid_scalar(o[k] + p.w_co[k] * c[k]);
        c_act[k] = act.apply(c[k]);
        h[k] = o[k] * c_act[k];
    }

    StepTrace {
        x: Vector::from(x.to_vec()),
        c_prev: Vector::from(c_prev.to_vec()),
        h_prev: Vector::from(h_prev.to_vec()),
        i,
        f,
        o,
        cand_pre,
        cand,
        c,
        c_act,
        h,
    }
}

/// Runs the cell over `xs` starting from `init`.
pub fn sequence_forward<X: AsRef<[f64]>>(
    p: &CellParams,
    xs: &[X],
    act: InnerActivation,
    init: &CellState,
) -> Result<(Vec<StepTrace>, CellState)> {
    if xs.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut traces = Vec::with_capacity(xs.len());
    let mut state = init.clone();
    for x in xs {
        let (next, trace) = cell_forward(p, &state, x.as_ref(), act)?;
        state = next;
        traces.push(trace);
    }
    Ok((traces, state))
}

/// Gradients returned by [`cell_backward`].
#[derive(Clone, Debug)]
pub struct CellGrads {
    pub params: CellParams,
    /// `∂L/∂x_t` for each step.
    pub dx: Vec<Vector>,
    pub dh_init: Vector,
    pub dc_init: Vector,
}

/// Reverse-mode pass over a sequence trace.
///
/// `dh[t]` is the gradient flowing into `h_t` from outside the cell (the
/// loss or a layer above); `dc_final` is the gradient on the last `c_T`.
pub fn cell_backward(
    p: &CellParams,
    traces: &[StepTrace],
    dh: &[Vector],
    dc_final: &[f64],
    act: InnerActivation,
) -> Result<CellGrads> {
    let n = p.n();
    let d = p.d();
    if traces.len() != dh.len() {
        return Err(Error::shape(
            "cell_backward",
            format!("{} steps", traces.len()),
            format!("{} h-gradients", dh.len()),
        ));
    }
    if dc_final.len() != n {
        return Err(Error::shape("cell_backward", format!("n {n}"), format!("dc_final len {}", dc_final.len())));
    }
    for (t, (tr, g)) in traces.iter().zip(dh).enumerate() {
        if tr.x.len() != d || tr.h.len() != n || g.len() != n {
            return Err(Error::shape(
                "cell_backward",
                format!("params n={n} d={d}"),
                format!("step {t}: x len {}, h len {}, dh len {}", tr.x.len(), tr.h.len(), g.len()),
            ));
        }
    }

    let mut grads = CellParams::zeros(n, d);
    let mut dx = vec![Vector::zeros(d); traces.len()];
    let mut dh_next = vec![0.0; n];
    let mut dc_next = dc_final.to_vec();

    let mut dai = vec![0.0; n];
    let mut daf = vec![0.0; n];
    let mut daz = vec![0.0; n];
    let mut dao = vec![0.0; n];

    for (t, tr) in traces.iter().enumerate().rev() {
        let mut dc_prev = vec![0.0; n];
        for k in 0..n {
            let dh_k = dh[t][k] + dh_next[k];
            let d_o = dh_k * tr.c_act[k];
            dao[k] = d_o * tr.o[k] * (1.0 - tr.o[k]);
            let dc = dc_next[k]
                + dh_k * tr.o[k] * act.derivative_from_output(tr.c_act[k])
                + dao[k] * p.w_co[k];
            dai[k] = dc * tr.cand[k] * tr.i[k] * (1.0 - tr.i[k]);
            daf[k] = dc * tr.c_prev[k] * tr.f[k] * (1.0 - tr.f[k]);
            daz[k] = dc * tr.i[k] * act.derivative_from_output(tr.cand[k]);
            dc_prev[k] = dc * tr.f[k] + dai[k] * p.w_ci[k] + daf[k] * p.w_cf[k];

            grads.w_ci[k] += dai[k] * tr.c_prev[k];
            grads.w_cf[k] += daf[k] * tr.c_prev[k];
            grads.w_co[k] += dao[k] * tr.c[k];
            grads.b_i[k] += dai[k];
            grads.b_f[k] += daf[k];
            grads.b_c[k] += daz[k];
            grads.b_o[k] += dao[k];
        }

        outer_acc(&mut grads.w_xi, &dai, &tr.x);
        outer_acc(&mut grads.w_xf, &daf, &tr.x);
        outer_acc(&mut grads.w_xc, &daz, &tr.x);
        outer_acc(&mut grads.w_xo, &dao, &tr.x);
        outer_acc(&mut grads.w_hi, &dai, &tr.h_prev);
        outer_acc(&mut grads.w_hf, &daf, &tr.h_prev);
        outer_acc(&mut grads.w_hc, &daz, &tr.h_prev);
        outer_acc(&mut grads.w_ho, &dao, &tr.h_prev);

        let dx_t = &mut dx[t];
        matvec_t_acc(&p.w_xi, &dai, dx_t);
        matvec_t_acc(&p.w_xf, &daf, dx_t);
        matvec_t_acc(&p.w_xc, &daz, dx_t);
        matvec_t_acc(&p.w_xo, &dao, dx_t);

        dh_next.iter_mut().for_each(|v| *v = 0.0);
        matvec_t_acc(&p.w_hi, &dai, &mut dh_next);
        matvec_t_acc(&p.w_hf, &daf, &mut dh_next);
        matvec_t_acc(&p.w_hc, &daz, &mut dh_next);
        matvec_t_acc(&p.w_ho, &dao, &mut dh_next);

        dc_next = dc_prev;
    }

    Ok(CellGrads {
        params: grads,
        dx,
        dh_init: Vector::from(dh_next),
        dc_init: Vector::from(dc_next),
    })
}
