use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::WindowBatch;
use crate::error::Result;
use crate::lstm::InnerActivation;
use crate::model::{ModelKind, ModelParams, ModelSpec};
use crate::numerics::Vector;

use super::dd::Dd;
use super::loss_and_grad;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub lambda: f64,
    /// Number of random windows in the checked batch.
    pub windows: usize,
    /// Central-difference step.
    pub step: f64,
    /// Parameters are drawn uniformly from `[-param_bound, param_bound]`.
    pub param_bound: f64,
    pub input_bound: f64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            lambda: 0.01,
            windows: 3,
            step: 1e-5,
            param_bound: 0.5,
            input_bound: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub n_params: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of the full training loss (including the
/// L2 term) against central differences on every parameter, for a random
/// model and batch drawn from `seed`.
pub fn gradcheck(spec: &ModelSpec, seed: u64, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    gradcheck_with(spec, seed, opts, |_| {})
}

pub(super) fn gradcheck_with(
    spec: &ModelSpec,
    seed: u64,
    opts: &GradcheckOptions,
    tamper: impl FnOnce(&mut [f64]),
) -> Result<GradcheckReport> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::random_full(spec, opts.param_bound, &mut rng);
    let windows: Vec<WindowBatch> = (0..opts.windows.max(1))
        .map(|i| WindowBatch {
            inputs: (0..spec.seq_len)
                .map(|_| Vector::random_uniform(spec.input_dim(), opts.input_bound, &mut rng))
                .collect(),
            target: rng.gen_range(-1.0..1.0),
            window_id: i,
            target_date: Default::default(),
        })
        .collect();
    let batch: Vec<&WindowBatch> = windows.iter().collect();

    let (_, grads) = loss_and_grad(spec, &params, &batch, opts.lambda)?;
    let mut analytic = grads.to_flat();
    tamper(&mut analytic);
    let labels = params.flat_labels();
    let penalized: Vec<bool> = labels.iter().map(|l| l.1).collect();
    let oracle = DdLoss {
        spec,
        windows: &windows,
        penalized: &penalized,
        lambda: Dd::from_f64(opts.lambda),
    };

    let mut report = GradcheckReport {
        max_rel_err: 0.0,
        worst_param: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        n_params: analytic.len(),
    };
    let mut flat: Vec<Dd> = params.to_flat().into_iter().map(Dd::from_f64).collect();
    let h = Dd::from_f64(opts.step);
    for i in 0..flat.len() {
        let base = flat[i];
        flat[i] = base + h;
        let up = oracle.eval(&flat);
        flat[i] = base - h;
        let down = oracle.eval(&flat);
        flat[i] = base;
        let numeric = ((up - down) / (h + h)).to_f64();
        let rel = relative_error(analytic[i], numeric);
        if rel > report.max_rel_err || report.worst_param.is_empty() {
            report.max_rel_err = rel;
            report.worst_param = labels[i].0.clone();
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
    }
    Ok(report)
}

// The finite-difference side runs its own scalar forward pass in double-double
// arithmetic. In plain f64 the rounding noise of a loss difference divided by
// 2h sits near 1e-11, which swamps the smallest gradient components.

struct DdCell<'a> {
    n: usize,
    d: usize,
    // w_xi, w_xf, w_xc, w_xo, w_hi, w_hf, w_hc, w_ho, w_ci, w_cf, w_co, b_i, b_f, b_c, b_o
    t: [&'a [Dd]; 15],
}

impl<'a> DdCell<'a> {
    fn take(flat: &mut &'a [Dd], n: usize, d: usize) -> DdCell<'a> {
        let mut t: [&[Dd]; 15] = [&[]; 15];
        for (k, slot) in t.iter_mut().enumerate() {
            let len = match k {
                0..=3 => n * d,
                4..=7 => n * n,
                _ => n,
            };
            let (head, rest) = flat.split_at(len);
            *slot = head;
            *flat = rest;
        }
        DdCell { n, d, t }
    }

    fn run(&self, xs: &[Vec<Dd>], act: InnerActivation) -> Vec<Vec<Dd>> {
        let g = |z: Dd| match act {
            InnerActivation::Tanh => z.tanh(),
            InnerActivation::Sigmoid => z.sigmoid(),
        };
        let (n, d, t) = (self.n, self.d, &self.t);
        let mut h = vec![Dd::ZERO; n];
        let mut c = vec![Dd::ZERO; n];
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let pre = |gate: usize, j: usize| {
                let mut s = t[11 + gate][j];
                for k in 0..d {
                    s = s + t[gate][j * d + k] * x[k];
                }
                for k in 0..n {
                    s = s + t[4 + gate][j * n + k] * h[k];
                }
                s
            };
            let mut c_new = vec![Dd::ZERO; n];
            let mut h_new = vec![Dd::ZERO; n];
            for j in 0..n {
                let i = (pre(0, j) + t[8][j] * c[j]).sigmoid();
                let f = (pre(1, j) + t[9][j] * c[j]).sigmoid();
                let cj = f * c[j] + i * g(pre(2, j));
                let o = (pre(3, j) + t[10][j] * cj).sigmoid();
                c_new[j] = cj;
                h_new[j] = o * g(cj);
            }
            c = c_new;
            h = h_new;
            out.push(h.clone());
        }
        out
    }
}

struct DdLoss<'a> {
    spec: &'a ModelSpec,
    windows: &'a [WindowBatch],
    penalized: &'a [bool],
    lambda: Dd,
}

impl DdLoss<'_> {
    fn eval(&self, flat: &[Dd]) -> Dd {
        let spec = self.spec;
        let (c, m) = (spec.locations, spec.vars);
        let mut rest = flat;
        let layer1: Vec<DdCell> = match spec.kind {
            ModelKind::Stacked => vec![DdCell::take(&mut rest, spec.n1, c * m)],
            ModelKind::StStacked => (0..c).map(|_| DdCell::take(&mut rest, spec.n1 / c, m)).collect(),
        };
        let layer2 = DdCell::take(&mut rest, spec.n2, spec.n1);
        let (w_dense, b_dense) = rest.split_at(spec.n2);
        assert_eq!(b_dense.len(), 1);

        let mut data = Dd::ZERO;
        for w in self.windows {
            let xs: Vec<Vec<Dd>> = w
                .inputs
                .iter()
                .map(|x| x.iter().copied().map(Dd::from_f64).collect())
                .collect();
            let h1: Vec<Vec<Dd>> = if spec.kind == ModelKind::Stacked {
                layer1[0].run(&xs, spec.activation)
            } else {
                let per: Vec<Vec<Vec<Dd>>> = layer1
                    .iter()
                    .enumerate()
                    .map(|(k, cell)| {
                        let part: Vec<Vec<Dd>> = xs.iter().map(|x| x[k * m..(k + 1) * m].to_vec()).collect();
                        cell.run(&part, spec.activation)
                    })
                    .collect();
                (0..xs.len()).map(|t| per.iter().flat_map(|p| p[t].iter().copied()).collect()).collect()
            };
            let h2 = layer2.run(&h1, spec.activation);
            let last = h2.last().expect("seq_len >= 1");
            let mut y = b_dense[0];
            for (wi, hi) in w_dense.iter().zip(last) {
                y = y + *wi * *hi;
            }
            let r = y - Dd::from_f64(w.target);
            data = data + r * r;
        }
        let mut penalty = Dd::ZERO;
        for (p, &on) in flat.iter().zip(self.penalized) {
            if on {
                penalty = penalty + *p * *p;
            }
        }
        data / Dd::from_f64(self.windows.len() as f64) + self.lambda * penalty
    }
}
