//! Stacked and spatio-temporal stacked LSTM regressors.
//!
//! Both kinds are two LSTM layers followed by a scalar dense head that reads
//! only the last layer-2 hidden state. They differ in layer 1:
//!
//! * `Stacked`: one cell with `n1` neurons sees the full `c·m` input.
//! * `StStacked`: `c` independent cells with `n1/c` neurons each, cell `k`
//!   sees only the `m` columns of location `k`; their hidden states are
//!   concatenated in location order before layer 2.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{
    cell_backward, sequence_forward, CellParams, CellState, InnerActivation, ParamKind, StepTrace,
};
use crate::numerics::{concat, dot, Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Stacked,
    StStacked,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Stacked => "stacked",
            ModelKind::StStacked => "st_stacked",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stacked" => Ok(ModelKind::Stacked),
            "st_stacked" | "st-stacked" | "st" => Ok(ModelKind::StStacked),
            other => Err(Error::InvalidSpec(format!(
                "unknown model kind `{other}` (expected stacked or st_stacked)"
            ))),
        }
    }
}

/// Default layer sizes and window length: the smallest neuron counts of the
/// usual search grid, and a ten-day input window.
pub const DEFAULT_N1: usize = 20;
pub const DEFAULT_N2: usize = 32;
pub const DEFAULT_SEQ_LEN: usize = 10;

/// Architecture description shared by both model kinds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Number of locations `c`.
    pub locations: usize,
    /// Variables per location `m`.
    pub vars: usize,
    /// Total layer-1 neurons; each st_stacked location cell gets `n1 / c`.
    pub n1: usize,
    pub n2: usize,
    pub activation: InnerActivation,
    pub seq_len: usize,
    /// Days ahead.
    pub horizon: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        if self.locations == 0 || self.vars == 0 {
            return bad(format!("locations ({}) and vars ({}) must be >= 1", self.locations, self.vars));
        }
        if self.n1 == 0 || self.n2 == 0 {
            return bad(format!("n1 ({}) and n2 ({}) must be >= 1", self.n1, self.n2));
        }
        if self.seq_len == 0 || self.horizon == 0 {
            return bad(format!(
                "seq_len ({}) and horizon ({}) must be >= 1",
                self.seq_len, self.horizon
            ));
        }
        if self.kind == ModelKind::StStacked && self.n1 % self.locations != 0 {
            return bad(format!(
                "st_stacked needs n1 ({}) divisible by locations ({})",
                self.n1, self.locations
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.locations * self.vars
    }

    /// Neurons per layer-1 location cell (st_stacked only).
    pub fn cell_neurons(&self) -> usize {
        self.n1 / self.locations
    }

    /// Space-separated `key=value` pairs; the checkpoint's second line.
    pub fn to_kv_line(&self) -> String {
        format!(
            "kind={} locations={} vars={} n1={} n2={} activation={} seq_len={} horizon={}",
            self.kind, self.locations, self.vars, self.n1, self.n2, self.activation, self.seq_len, self.horizon
        )
    }

    pub fn from_kv_line(line: &str) -> Result<Self> {
        let mut kind = None;
        let mut activation = None;
        let mut nums = [None; 6];
        const NUM_KEYS: [&str; 6] = ["locations", "vars", "n1", "n2", "seq_len", "horizon"];
        for pair in line.split_whitespace() {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::InvalidSpec(format!("expected key=value, got `{pair}`")))?;
            match k {
                "kind" => kind = Some(v.parse()?),
                "activation" => activation = Some(v.parse()?),
                _ => {
                    let idx = NUM_KEYS
                        .iter()
                        .position(|&n| n == k)
                        .ok_or_else(|| Error::InvalidSpec(format!("unknown spec key `{k}`")))?;
                    nums[idx] = Some(
                        v.parse::<usize>()
                            .map_err(|_| Error::InvalidSpec(format!("`{k}` is not a count: `{v}`")))?,
                    );
                }
            }
        }
        let need = |name: &str, v: Option<usize>| {
            v.ok_or_else(|| Error::InvalidSpec(format!("missing spec key `{name}`")))
        };
        let spec = ModelSpec {
            kind: kind.ok_or_else(|| Error::InvalidSpec("missing spec key `kind`".into()))?,
            activation: activation.ok_or_else(|| Error::InvalidSpec("missing spec key `activation`".into()))?,
            locations: need("locations", nums[0])?,
            vars: need("vars", nums[1])?,
            n1: need("n1", nums[2])?,
            n2: need("n2", nums[3])?,
            seq_len: need("seq_len", nums[4])?,
            horizon: need("horizon", nums[5])?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Layer-1 parameters: one wide cell or one cell per location.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer1 {
    Stacked(CellParams),
    PerLocation(Vec<CellParams>),
}

/// Full trainable parameter set of either model kind.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layer1: Layer1,
    pub layer2: CellParams,
    pub w_dense: Vector,
    pub b_dense: f64,
}

/// A named, flattened view of one parameter tensor.
#[derive(Debug)]
pub struct NamedTensor<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: ParamKind,
    pub data: &'a [f64],
}

#[derive(Debug)]
pub struct NamedTensorMut<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: ParamKind,
    pub data: &'a mut [f64],
}

impl ModelParams {
    /// Parameters laid out for `spec`, every value zero.
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self::build(spec, CellParams::zeros)
    }

    /// Fresh training initialization (see [`CellParams::init`]); head uniform
    /// in `[-1/√n2, 1/√n2]`, zero head bias.
    pub fn init<R: Rng + ?Sized>(spec: &ModelSpec, forget_bias: f64, rng: &mut R) -> Self {
        let mut p = Self::build(spec, |n, d| CellParams::init(n, d, forget_bias, rng));
        p.w_dense = Vector::random_uniform(spec.n2, 1.0 / (spec.n2 as f64).sqrt(), rng);
        p
    }

    /// Every entry uniform in `[-bound, bound]`; used by oracles and tests.
    pub fn random_full<R: Rng + ?Sized>(spec: &ModelSpec, bound: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(spec);
        for t in p.tensors_mut() {
            for v in t.data.iter_mut() {
                *v = rng.gen_range(-bound..=bound);
            }
        }
        p
    }

    fn build(spec: &ModelSpec, mut make: impl FnMut(usize, usize) -> CellParams) -> Self {
        let layer1 = match spec.kind {
            ModelKind::Stacked => Layer1::Stacked(make(spec.n1, spec.input_dim())),
            ModelKind::StStacked => Layer1::PerLocation(
                (0..spec.locations)
                    .map(|_| make(spec.cell_neurons(), spec.vars))
                    .collect(),
            ),
        };
        ModelParams {
            layer1,
            layer2: make(spec.n2, spec.n1),
            w_dense: Vector::zeros(spec.n2),
            b_dense: 0.0,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self.layer1 {
            Layer1::Stacked(_) => ModelKind::Stacked,
            Layer1::PerLocation(_) => ModelKind::StStacked,
        }
    }

    /// All tensors in canonical order: layer 1, layer 2, head.
    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        fn push_cell<'a>(prefix: &str, cell: &'a CellParams, out: &mut Vec<NamedTensor<'a>>) {
            for t in cell.tensors() {
                out.push(NamedTensor {
                    name: format!("{prefix}.{}", t.name),
                    rows: t.rows,
                    cols: t.cols,
                    kind: t.kind,
                    data: t.data,
                });
            }
        }
        let mut out = Vec::new();
        match &self.layer1 {
            Layer1::Stacked(cell) => push_cell("layer1", cell, &mut out),
            Layer1::PerLocation(cells) => {
                for (k, cell) in cells.iter().enumerate() {
                    push_cell(&format!("layer1.loc{k}"), cell, &mut out);
                }
            }
        }
        push_cell("layer2", &self.layer2, &mut out);
        out.push(NamedTensor {
            name: "dense.w".into(),
            rows: self.w_dense.len(),
            cols: 1,
            kind: ParamKind::Weight,
            data: self.w_dense.as_slice(),
        });
        out.push(NamedTensor {
            name: "dense.b".into(),
            rows: 1,
            cols: 1,
            kind: ParamKind::Bias,
            data: std::slice::from_ref(&self.b_dense),
        });
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_>> {
        fn push_cell<'a>(prefix: &str, cell: &'a mut CellParams, out: &mut Vec<NamedTensorMut<'a>>) {
            for t in cell.tensors_mut() {
                out.push(NamedTensorMut {
                    name: format!("{prefix}.{}", t.name),
                    rows: t.rows,
                    cols: t.cols,
                    kind: t.kind,
                    data: t.data,
                });
            }
        }
        let mut out = Vec::new();
        match &mut self.layer1 {
            Layer1::Stacked(cell) => push_cell("layer1", cell, &mut out),
            Layer1::PerLocation(cells) => {
                for (k, cell) in cells.iter_mut().enumerate() {
                    push_cell(&format!("layer1.loc{k}"), cell, &mut out);
                }
            }
        }
        push_cell("layer2", &mut self.layer2, &mut out);
        let n2 = self.w_dense.len();
        out.push(NamedTensorMut {
            name: "dense.w".into(),
            rows: n2,
            cols: 1,
            kind: ParamKind::Weight,
            data: self.w_dense.as_mut_slice(),
        });
        out.push(NamedTensorMut {
            name: "dense.b".into(),
            rows: 1,
            cols: 1,
            kind: ParamKind::Bias,
            data: std::slice::from_mut(&mut self.b_dense),
        });
        out
    }

    /// Number of scalar parameters, by enumeration.
    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        for t in self.tensors() {
            out.extend_from_slice(t.data);
        }
        out
    }

    /// Overwrites every parameter from a flat slice in [`Self::tensors`] order.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.count();
        if flat.len() != n {
            return Err(Error::shape("ModelParams::set_flat", format!("{n} params"), format!("len {}", flat.len())));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let len = t.data.len();
            t.data.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// `(name[index], penalized)` for every scalar parameter, in flat order.
    pub fn flat_labels(&self) -> Vec<(String, bool)> {
        let mut out = Vec::with_capacity(self.count());
        for t in self.tensors() {
            for i in 0..t.data.len() {
                out.push((format!("{}[{i}]", t.name), t.kind.penalized()));
            }
        }
        out
    }

    /// Checks that the parameter layout matches `spec` exactly.
    pub fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        let expected = ModelParams::zeros(spec);
        let mine = self.tensors();
        let theirs = expected.tensors();
        if mine.len() != theirs.len() {
            return Err(Error::shape(
                "ModelParams::check_spec",
                format!("{} tensors for {}", theirs.len(), spec.kind),
                format!("{} tensors", mine.len()),
            ));
        }
        for (a, b) in mine.iter().zip(&theirs) {
            if a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.data.len() != b.data.len() {
                return Err(Error::shape(
                    "ModelParams::check_spec",
                    format!("{} {}x{}", b.name, b.rows, b.cols),
                    format!("{} {}x{}", a.name, a.rows, a.cols),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Layer1Trace {
    Stacked(Vec<StepTrace>),
    PerLocation(Vec<Vec<StepTrace>>),
}

/// Everything [`model_forward`] computed, for [`model_backward`].
#[derive(Clone, Debug)]
pub struct ModelTrace {
    pub layer1: Layer1Trace,
    pub layer2: Vec<StepTrace>,
    /// Final layer-2 hidden state read by the head.
    pub h_final: Vector,
}

/// Prediction for one window. Sequence-to-one: only the last layer-2 hidden
/// state reaches the head.
pub fn model_forward<X: AsRef<[f64]>>(
    spec: &ModelSpec,
    params: &ModelParams,
    window: &[X],
) -> Result<(f64, ModelTrace)> {
    if params.kind() != spec.kind {
        return Err(Error::InvalidSpec(format!(
            "params are {} but spec says {}",
            params.kind(),
            spec.kind
        )));
    }
    if window.len() != spec.seq_len {
        return Err(Error::shape(
            "model_forward",
            format!("seq_len {}", spec.seq_len),
            format!("window of {} steps", window.len()),
        ));
    }
    let d = spec.input_dim();
    if let Some(bad) = window.iter().find(|x| x.as_ref().len() != d) {
        return Err(Error::shape(
            "model_forward",
            format!("input dim {d}"),
            format!("step of len {}", bad.as_ref().len()),
        ));
    }

    let act = spec.activation;
    let (layer1, h1): (Layer1Trace, Vec<Vector>) = match &params.layer1 {
        Layer1::Stacked(cell) => {
            let (tr, _) = sequence_forward(cell, window, act, &CellState::zeros(cell.n()))?;
            let h1 = tr.iter().map(|s| s.h.clone()).collect();
            (Layer1Trace::Stacked(tr), h1)
        }
        Layer1::PerLocation(cells) => {
            if cells.len() != spec.locations {
                return Err(Error::shape(
                    "model_forward",
                    format!("{} locations", spec.locations),
                    format!("{} location cells", cells.len()),
                ));
            }
            let m = spec.vars;
            let mut traces = Vec::with_capacity(cells.len());
            for (k, cell) in cells.iter().enumerate() {
                let slices: Vec<&[f64]> = window.iter().map(|x| &x.as_ref()[k * m..(k + 1) * m]).collect();
                let (tr, _) = sequence_forward(cell, &slices, act, &CellState::zeros(cell.n()))?;
                traces.push(tr);
            }
            let h1 = (0..spec.seq_len)
                .map(|t| {
                    let parts: Vec<&[f64]> = traces.iter().map(|tr| tr[t].h.as_slice()).collect();
                    concat(&parts)
                })
                .collect();
            (Layer1Trace::PerLocation(traces), h1)
        }
    };

    let (layer2, fin) = sequence_forward(&params.layer2, &h1, act, &CellState::zeros(spec.n2))?;
    if params.w_dense.len() != fin.h.len() {
        return Err(Error::shape("model_forward", format!("n2 {}", fin.h.len()), format!("w_dense len {}", params.w_dense.len())));
    }
    let y = dot(&params.w_dense, &fin.h) + params.b_dense;
    Ok((
        y,
        ModelTrace {
            layer1,
            layer2,
            h_final: fin.h,
        },
    ))
}

/// Convenience wrapper returning only the prediction.
pub fn predict<X: AsRef<[f64]>>(spec: &ModelSpec, params: &ModelParams, window: &[X]) -> Result<f64> {
    model_forward(spec, params, window).map(|(y, _)| y)
}

/// Gradients of a scalar loss with respect to every parameter, given
/// `dy = ∂L/∂ŷ` for the window that produced `trace`.
pub fn model_backward(
    spec: &ModelSpec,
    params: &ModelParams,
    trace: &ModelTrace,
    dy: f64,
) -> Result<ModelParams> {
    let mut grads = ModelParams::zeros(spec);
    model_backward_acc(spec, params, trace, dy, &mut grads)?;
    Ok(grads)
}

/// Like [`model_backward`] but adds into `grads`.
pub fn model_backward_acc(
    spec: &ModelSpec,
    params: &ModelParams,
    trace: &ModelTrace,
    dy: f64,
    grads: &mut ModelParams,
) -> Result<()> {
    let act = spec.activation;
    let t_len = trace.layer2.len();
    if t_len != spec.seq_len || trace.h_final.len() != spec.n2 {
        return Err(Error::shape(
            "model_backward",
            format!("seq_len {} n2 {}", spec.seq_len, spec.n2),
            format!("trace of {} steps, h len {}", t_len, trace.h_final.len()),
        ));
    }

    for (g, h) in grads.w_dense.iter_mut().zip(trace.h_final.iter()) {
        *g += dy * h;
    }
    grads.b_dense += dy;

    let mut dh2 = vec![Vector::zeros(spec.n2); t_len];
    dh2[t_len - 1] = params.w_dense.iter().map(|w| dy * w).collect();
    let g2 = cell_backward(&params.layer2, &trace.layer2, &dh2, &vec![0.0; spec.n2], act)?;
    add_cell(&mut grads.layer2, &g2.params);

    match (&params.layer1, &trace.layer1, &mut grads.layer1) {
        (Layer1::Stacked(cell), Layer1Trace::Stacked(tr), Layer1::Stacked(acc)) => {
            let g1 = cell_backward(cell, tr, &g2.dx, &vec![0.0; cell.n()], act)?;
            add_cell(acc, &g1.params);
        }
        (Layer1::PerLocation(cells), Layer1Trace::PerLocation(trs), Layer1::PerLocation(accs)) => {
            if cells.len() != trs.len() || cells.len() != accs.len() {
                return Err(Error::shape(
                    "model_backward",
                    format!("{} location cells", cells.len()),
                    format!("{} traces", trs.len()),
                ));
            }
            for (k, ((cell, tr), acc)) in cells.iter().zip(trs).zip(accs.iter_mut()).enumerate() {
                let nk = cell.n();
                let dh: Vec<Vector> = g2.dx.iter().map(|g| g.slice(k * nk, nk)).collect();
                let g1 = cell_backward(cell, tr, &dh, &vec![0.0; nk], act)?;
                add_cell(acc, &g1.params);
            }
        }
        _ => {
            return Err(Error::InvalidSpec(
                "trace, params and gradient buffer disagree on model kind".into(),
            ))
        }
    }
    Ok(())
}

fn add_cell(acc: &mut CellParams, g: &CellParams) {
    for (a, b) in acc.tensors_mut().into_iter().zip(g.tensors()) {
        for (x, y) in a.data.iter_mut().zip(b.data) {
            *x += y;
        }
    }
}

/// Rewrites a spatio-temporal model as an ordinary stacked model whose
/// layer-1 matrices are block diagonal, one block per location.
pub fn block_diagonal_embed(spec: &ModelSpec, params: &ModelParams) -> Result<(ModelSpec, ModelParams)> {
    spec.validate()?;
    params.check_spec(spec)?;
    let cells = match &params.layer1 {
        Layer1::PerLocation(cells) => cells,
        Layer1::Stacked(_) => {
            return Err(Error::InvalidSpec("block_diagonal_embed expects st_stacked params".into()))
        }
    };
    let (n1, m) = (spec.n1, spec.vars);
    let nk = spec.cell_neurons();
    let d = spec.input_dim();

    let mut big = CellParams::zeros(n1, d);
    for (k, cell) in cells.iter().enumerate() {
        let r0 = k * nk;
        let xs = [
            (&mut big.w_xi, &cell.w_xi),
            (&mut big.w_xf, &cell.w_xf),
            (&mut big.w_xc, &cell.w_xc),
            (&mut big.w_xo, &cell.w_xo),
        ];
        for (dst, src) in xs {
            dst.set_block(r0, k * m, src)?;
        }
        let hs = [
            (&mut big.w_hi, &cell.w_hi),
            (&mut big.w_hf, &cell.w_hf),
            (&mut big.w_hc, &cell.w_hc),
            (&mut big.w_ho, &cell.w_ho),
        ];
        for (dst, src) in hs {
            dst.set_block(r0, r0, src)?;
        }
    }
    let stack = |get: fn(&CellParams) -> &Vector| concat(&cells.iter().map(get).collect::<Vec<_>>());
    big.w_ci = stack(|c| &c.w_ci);
    big.w_cf = stack(|c| &c.w_cf);
    big.w_co = stack(|c| &c.w_co);
    big.b_i = stack(|c| &c.b_i);
    big.b_f = stack(|c| &c.b_f);
    big.b_c = stack(|c| &c.b_c);
    big.b_o = stack(|c| &c.b_o);

    let out_spec = ModelSpec {
        kind: ModelKind::Stacked,
        ..spec.clone()
    };
    let out = ModelParams {
        layer1: Layer1::Stacked(big),
        layer2: params.layer2.clone(),
        w_dense: params.w_dense.clone(),
        b_dense: params.b_dense,
    };
    Ok((out_spec, out))
}

/// Closed-form parameter counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub layer1: usize,
    pub layer2: usize,
    pub head: usize,
    pub total: usize,
}

/// Per cell: four input matrices, four recurrent matrices, three diagonal
/// peepholes and four biases.
pub fn param_count(spec: &ModelSpec) -> Result<ParamCount> {
    spec.validate()?;
    let cell = |n: usize, d: usize| 4 * n * d + 4 * n * n + 3 * n + 4 * n;
    let layer1 = match spec.kind {
        ModelKind::Stacked => cell(spec.n1, spec.input_dim()),
        ModelKind::StStacked => spec.locations * cell(spec.cell_neurons(), spec.vars),
    };
    let layer2 = cell(spec.n2, spec.n1);
    let head = spec.n2 + 1;
    Ok(ParamCount {
        layer1,
        layer2,
        head,
        total: layer1 + layer2 + head,
    })
}

/// Places `blocks` along the diagonal of an otherwise zero matrix.
pub fn block_diagonal(blocks: &[Matrix]) -> Result<Matrix> {
    let rows = blocks.iter().map(Matrix::rows).sum();
    let cols = blocks.iter().map(Matrix::cols).sum();
    let mut m = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        m.set_block(r, c, b)?;
        r += b.rows();
        c += b.cols();
    }
    Ok(m)
}
