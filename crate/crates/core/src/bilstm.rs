//! Peephole LSTM cell, bidirectional wrapper and window-to-window training.
//!
//! Cell, per direction:
//!
//! ```text
//! i = sigma(W_ix x + W_im m' + w_ic * c' + b_i)
//! f = sigma(W_fx x + W_fm m' + w_fc * c' + b_f)
//! c = f * c' + i * g(W_cx x + W_cm m' + b_c)
//! o = sigma(W_ox x + W_om m' + w_oc * c' + b_o)
//! m = o * h(c)
//! ```
//!
//! where primes denote the previous step. Note the output gate peeks at the
//! previous cell state `c'`; some formulations use the updated `c` instead.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::gan::AdamConfig;
use crate::neural::layers::sigmoid_scalar;
use crate::neural::{Adam, Gradients, Param, ParameterStore, Shape};
use crate::rng::{derive_seed, rng_from_seed, Rng};

pub const PREFIX: &str = "bilstm";
const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];
const GATES: [char; 4] = ['i', 'f', 'c', 'o'];
/// Gates with a peephole, in `GATES` order (all but the candidate).
const PEEPHOLE_GATES: [usize; 3] = [0, 1, 3];

/// Activation used for the cell input (`g`) and cell output (`h`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellActivation {
    Tanh,
    Identity,
}

impl CellActivation {
    fn apply(self, x: f64) -> f64 {
        match self {
            CellActivation::Tanh => x.tanh(),
            CellActivation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    fn slope_at_output(self, y: f64) -> f64 {
        match self {
            CellActivation::Tanh => 1.0 - y * y,
            CellActivation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmArch {
    pub hidden_size: usize,
    pub n_features: usize,
    /// `g`, the candidate activation.
    pub input_activation: CellActivation,
    /// `h`, applied to the cell state before output gating.
    pub output_activation: CellActivation,
    /// `phi` on the projection.
    pub projection_activation: CellActivation,
}

impl Default for BiLstmArch {
    fn default() -> Self {
        Self {
            hidden_size: 64,
            n_features: crate::data::N_FEATURES,
            input_activation: CellActivation::Tanh,
            output_activation: CellActivation::Tanh,
            projection_activation: CellActivation::Identity,
        }
    }
}

/// Borrowed view of one direction's parameters.
#[derive(Debug, Clone, Copy)]
pub struct LstmCellParams<'a> {
    /// `W_gx`, each `hidden x input`, gates in `i, f, c, o` order.
    pub w_x: [ArrayView2<'a, f64>; 4],
    /// `W_gm`, each `hidden x hidden`.
    pub w_m: [ArrayView2<'a, f64>; 4],
    /// Diagonal peepholes `w_ic, w_fc, w_oc`.
    pub peep: [ArrayView1<'a, f64>; 3],
    pub b: [ArrayView1<'a, f64>; 4],
}

impl<'a> LstmCellParams<'a> {
    pub fn from_store(store: &'a ParameterStore, direction: &str, hidden: usize) -> Result<Self> {
        let get = |suffix: String| store.get(&format!("{PREFIX}.{direction}.{suffix}"));
        let mut w_x = Vec::with_capacity(4);
        let mut w_m = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for g in GATES {
            w_x.push(get(format!("w_{g}x"))?.as_matrix(hidden));
            w_m.push(get(format!("w_{g}m"))?.as_matrix(hidden));
            b.push(get(format!("b_{g}"))?.as_vector());
        }
        let peep = [
            get("w_ic".into())?.as_vector(),
            get("w_fc".into())?.as_vector(),
            get("w_oc".into())?.as_vector(),
        ];
        Ok(Self {
            w_x: w_x.try_into().expect("four gates"),
            w_m: w_m.try_into().expect("four gates"),
            peep,
            b: b.try_into().expect("four gates"),
        })
    }

    pub fn hidden(&self) -> usize {
        self.b[0].len()
    }

    pub fn input(&self) -> usize {
        self.w_x[0].ncols()
    }
}

/// One step of the cell for a single sample. Returns `(m_t, c_t)`.
pub fn lstm_cell_step(
    x: ArrayView1<'_, f64>,
    m_prev: ArrayView1<'_, f64>,
    c_prev: ArrayView1<'_, f64>,
    cell: &LstmCellParams<'_>,
    g_act: CellActivation,
    h_act: CellActivation,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let (hdim, idim) = (cell.hidden(), cell.input());
    if x.len() != idim || m_prev.len() != hdim || c_prev.len() != hdim {
        return Err(Error::Shape(format!(
            "cell step: x {} (want {idim}), m {} and c {} (want {hdim})",
            x.len(),
            m_prev.len(),
            c_prev.len()
        )));
    }
    let pre = |k: usize| cell.w_x[k].dot(&x) + cell.w_m[k].dot(&m_prev) + cell.b[k];
    let i = (pre(0) + &cell.peep[0] * &c_prev).mapv(sigmoid_scalar);
    let f = (pre(1) + &cell.peep[1] * &c_prev).mapv(sigmoid_scalar);
    let g = pre(2).mapv(|v| g_act.apply(v));
    let o = (pre(3) + &cell.peep[2] * &c_prev).mapv(sigmoid_scalar);
    let c = &f * &c_prev + &i * &g;
    let m = &o * &c.mapv(|v| h_act.apply(v));
    Ok((m, c))
}

/// Per-step activations kept for backpropagation (batch x hidden each,
/// except `x`).
struct Step {
    x: Array2<f64>,
    m_prev: Array2<f64>,
    c_prev: Array2<f64>,
    gates: [Array2<f64>; 4],
    hc: Array2<f64>,
}

fn batched_pre(cell: &LstmCellParams<'_>, k: usize, x: &Array2<f64>, m_prev: &Array2<f64>) -> Array2<f64> {
    let mut a = x.dot(&cell.w_x[k].t()) + m_prev.dot(&cell.w_m[k].t());
    a += &cell.b[k];
    a
}

/// Scans `xs` (one `batch x input` matrix per time step) in `order`,
/// returning hidden states indexed by time and the scan-ordered caches.
fn run_direction(
    cell: &LstmCellParams<'_>,
    arch: &BiLstmArch,
    xs: &[Array2<f64>],
    order: &[usize],
) -> (Vec<Array2<f64>>, Vec<Step>) {
    let batch = xs[0].nrows();
    let hdim = cell.hidden();
    let mut m = Array2::zeros((batch, hdim));
    let mut c = Array2::<f64>::zeros((batch, hdim));
    let mut hidden = vec![Array2::zeros((0, 0)); xs.len()];
    let mut steps = Vec::with_capacity(order.len());
    for &t in order {
        let x = &xs[t];
        let mut a = [0, 1, 2, 3].map(|k| batched_pre(cell, k, x, &m));
        for (slot, &k) in PEEPHOLE_GATES.iter().enumerate() {
            a[k] += &(&c * &cell.peep[slot]);
        }
        let gates = [
            a[0].mapv(sigmoid_scalar),
            a[1].mapv(sigmoid_scalar),
            a[2].mapv(|v| arch.input_activation.apply(v)),
            a[3].mapv(sigmoid_scalar),
        ];
        let c_new = &gates[1] * &c + &gates[0] * &gates[2];
        let hc = c_new.mapv(|v| arch.output_activation.apply(v));
        let m_new = &gates[3] * &hc;
        steps.push(Step {
            x: x.clone(),
            m_prev: m,
            c_prev: c,
            gates,
            hc,
        });
        hidden[t] = m_new.clone();
        m = m_new;
        c = c_new;
    }
    (hidden, steps)
}

/// Gradient buffers for one direction, `GATES` order.
struct CellGrads {
    w_x: Vec<Array2<f64>>,
    w_m: Vec<Array2<f64>>,
    peep: Vec<Array1<f64>>,
    b: Vec<Array1<f64>>,
}

/// Backpropagation through time for one direction. `dh[t]` is the loss
/// gradient w.r.t. the hidden state emitted at time `t`. Returns parameter
/// gradients and input gradients indexed by time.
fn backprop_direction(
    cell: &LstmCellParams<'_>,
    arch: &BiLstmArch,
    steps: &[Step],
    order: &[usize],
    dh: &[Array2<f64>],
) -> (CellGrads, Vec<Array2<f64>>) {
    let (hdim, idim) = (cell.hidden(), cell.input());
    let batch = steps[0].x.nrows();
    let mut grads = CellGrads {
        w_x: vec![Array2::zeros((hdim, idim)); 4],
        w_m: vec![Array2::zeros((hdim, hdim)); 4],
        peep: vec![Array1::zeros(hdim); 3],
        b: vec![Array1::zeros(hdim); 4],
    };
    let mut dx = vec![Array2::zeros((0, 0)); dh.len()];
    let mut dm_next = Array2::<f64>::zeros((batch, hdim));
    let mut dc_next = Array2::<f64>::zeros((batch, hdim));

    for (step, &t) in steps.iter().zip(order).rev() {
        let [i, f, g, o] = &step.gates;
        let dm = &dh[t] + &dm_next;
        let mut da_o = &dm * &step.hc;
        da_o.zip_mut_with(o, |d, ov| *d *= ov * (1.0 - ov));
        let mut dc = &dm * o;
        dc.zip_mut_with(&step.hc, |d, h| *d *= arch.output_activation.slope_at_output(*h));
        dc += &dc_next;
        let mut da_i = &dc * g;
        da_i.zip_mut_with(i, |d, iv| *d *= iv * (1.0 - iv));
        let mut da_f = &dc * &step.c_prev;
        da_f.zip_mut_with(f, |d, fv| *d *= fv * (1.0 - fv));
        let mut da_g = &dc * i;
        da_g.zip_mut_with(g, |d, gv| *d *= arch.input_activation.slope_at_output(*gv));
        let da = [da_i, da_f, da_g, da_o];

        let mut dc_prev = &dc * f;
        for (slot, &k) in PEEPHOLE_GATES.iter().enumerate() {
            dc_prev += &(&da[k] * &cell.peep[slot]);
            grads.peep[slot] += &(&da[k] * &step.c_prev).sum_axis(Axis(0));
        }
        let mut dm_prev = Array2::zeros((batch, hdim));
        let mut dxt = Array2::zeros((batch, idim));
        for k in 0..4 {
            grads.w_x[k] += &da[k].t().dot(&step.x);
            grads.w_m[k] += &da[k].t().dot(&step.m_prev);
            grads.b[k] += &da[k].sum_axis(Axis(0));
            dm_prev += &da[k].dot(&cell.w_m[k]);
            dxt += &da[k].dot(&cell.w_x[k]);
        }
        dx[t] = dxt;
        dm_next = dm_prev;
        dc_next = dc_prev;
    }
    (grads, dx)
}

/// Bidirectional model whose parameters live in a [`ParameterStore`] under
/// `bilstm.fwd.*`, `bilstm.bwd.*` and `bilstm.proj.*`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmModel {
    pub arch: BiLstmArch,
    params: ParameterStore,
}

/// Result of a batched forward pass: predictions plus what backward needs.
pub struct SeqPass {
    /// One `batch x features` matrix per time step.
    pub outputs: Vec<Array2<f64>>,
    hidden: [Vec<Array2<f64>>; 2],
    steps: [Vec<Step>; 2],
}

pub struct SeqGradients {
    pub params: Gradients,
    /// Input gradients, one `batch x features` matrix per time step.
    pub inputs: Vec<Array2<f64>>,
}

fn scan_orders(n: usize) -> [Vec<usize>; 2] {
    [(0..n).collect(), (0..n).rev().collect()]
}

impl BiLstmModel {
    /// Random initialisation: Glorot-uniform input and projection weights,
    /// uniform recurrent weights, small peepholes, forget bias 1.
    pub fn new(arch: &BiLstmArch, seed: u64) -> Result<Self> {
        let (hd, nf) = (arch.hidden_size, arch.n_features);
        if hd == 0 || nf == 0 {
            return Err(Error::Parameter("hidden_size and n_features must be positive".into()));
        }
        let mut rng = rng_from_seed(seed);
        let mut params = ParameterStore::new(Some(seed));
        let uniform = |rng: &mut Rng, dims: Vec<usize>, limit: f64| -> Result<Param> {
            let shape = Shape::new(dims)?;
            let dist = Uniform::new_inclusive(-limit, limit).expect("valid range");
            let values = (0..shape.size()).map(|_| dist.sample(rng)).collect();
            Param::new(shape, values)
        };
        for dir in DIRECTIONS {
            let name = |s: &str| format!("{PREFIX}.{dir}.{s}");
            for g in GATES {
                let lx = (6.0 / (nf + hd) as f64).sqrt();
                params.insert(name(&format!("w_{g}x")), uniform(&mut rng, vec![hd, nf], lx)?)?;
                let lm = (6.0 / (2 * hd) as f64).sqrt();
                params.insert(name(&format!("w_{g}m")), uniform(&mut rng, vec![hd, hd], lm)?)?;
            }
            for p in ["w_ic", "w_fc", "w_oc"] {
                params.insert(name(p), uniform(&mut rng, vec![hd], 0.1)?)?;
            }
            for g in GATES {
                let bias = if g == 'f' { 1.0 } else { 0.0 };
                params.insert(name(&format!("b_{g}")), Param::new(Shape::vector(hd)?, vec![bias; hd])?)?;
            }
        }
        let lp = (6.0 / (2 * hd + nf) as f64).sqrt();
        params.insert(format!("{PREFIX}.proj.weight"), uniform(&mut rng, vec![nf, 2 * hd], lp)?)?;
        params.insert(format!("{PREFIX}.proj.bias"), Param::new(Shape::vector(nf)?, vec![0.0; nf])?)?;
        Ok(Self {
            arch: arch.clone(),
            params,
        })
    }

    /// Same layout with every value zero.
    pub fn zeros(arch: &BiLstmArch) -> Result<Self> {
        let mut model = Self::new(arch, 0)?;
        let names: Vec<String> = model.params.names().map(String::from).collect();
        for n in names {
            model.params.get_mut(&n)?.values.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(model)
    }

    /// Wraps stored parameters (a `bilstm.*` subset suffices), checking shapes.
    pub fn from_params(arch: &BiLstmArch, store: &ParameterStore) -> Result<Self> {
        let reference = Self::new(arch, 0)?;
        let params = store.subset(&format!("{PREFIX}."));
        for (name, p) in reference.params.iter() {
            let got = params.get(name)?;
            if got.shape != p.shape {
                return Err(Error::Shape(format!(
                    "parameter `{name}` has shape {}, architecture needs {}",
                    got.shape, p.shape
                )));
            }
        }
        Ok(Self {
            arch: arch.clone(),
            params,
        })
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }

    pub fn cell(&self, direction: usize) -> Result<LstmCellParams<'_>> {
        LstmCellParams::from_store(&self.params, DIRECTIONS[direction], self.arch.hidden_size)
    }

    fn split_time(&self, windows: &[ArrayView2<'_, f64>]) -> Result<Vec<Array2<f64>>> {
        let first = windows
            .first()
            .ok_or_else(|| Error::insufficient("BiLSTM batch", 1, 0))?;
        let (n, m) = first.dim();
        if m != self.arch.n_features || windows.iter().any(|w| w.dim() != (n, m)) || n == 0 {
            return Err(Error::Shape(format!(
                "BiLSTM expects equal windows with {} features",
                self.arch.n_features
            )));
        }
        Ok((0..n)
            .map(|t| {
                let mut xt = Array2::zeros((windows.len(), m));
                for (b, w) in windows.iter().enumerate() {
                    xt.row_mut(b).assign(&w.row(t));
                }
                xt
            })
            .collect())
    }

    /// Batched forward pass over windows of equal shape.
    pub fn forward_batch(&self, windows: &[ArrayView2<'_, f64>]) -> Result<SeqPass> {
        let xs = self.split_time(windows)?;
        let orders = scan_orders(xs.len());
        let (hf, sf) = run_direction(&self.cell(0)?, &self.arch, &xs, &orders[0]);
        let (hb, sb) = run_direction(&self.cell(1)?, &self.arch, &xs, &orders[1]);
        let hd = self.arch.hidden_size;
        let w = self.params.get(&format!("{PREFIX}.proj.weight"))?.as_matrix(self.arch.n_features);
        let b = self.params.get(&format!("{PREFIX}.proj.bias"))?.as_vector();
        let outputs = hf
            .iter()
            .zip(&hb)
            .map(|(f, bk)| {
                let mut y = f.dot(&w.slice(s![.., ..hd]).t()) + bk.dot(&w.slice(s![.., hd..]).t());
                y += &b;
                y.mapv_inplace(|v| self.arch.projection_activation.apply(v));
                y
            })
            .collect::<Vec<_>>();
        if outputs.iter().any(|y| y.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite {
                layer: format!("{PREFIX}.proj"),
            });
        }
        Ok(SeqPass {
            outputs,
            hidden: [hf, hb],
            steps: [sf, sb],
        })
    }

    /// Predicts the next window (same shape) from one `n x m` window.
    pub fn forward(&self, window: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let pass = self.forward_batch(&[window])?;
        let n = pass.outputs.len();
        let mut out = Array2::zeros((n, self.arch.n_features));
        for (t, y) in pass.outputs.iter().enumerate() {
            out.row_mut(t).assign(&y.row(0));
        }
        Ok(out)
    }

    /// Pre-projection hidden states `(forward, backward)`, each `n x hidden`.
    pub fn hidden_sequence(&self, window: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let pass = self.forward_batch(&[window])?;
        let stack = |hs: &[Array2<f64>]| {
            let mut out = Array2::zeros((hs.len(), self.arch.hidden_size));
            for (t, h) in hs.iter().enumerate() {
                out.row_mut(t).assign(&h.row(0));
            }
            out
        };
        Ok((stack(&pass.hidden[0]), stack(&pass.hidden[1])))
    }

    /// Reverse pass given output gradients (one `batch x features` matrix
    /// per time step).
    pub fn backward(&self, pass: &SeqPass, d_out: &[Array2<f64>]) -> Result<SeqGradients> {
        if d_out.len() != pass.outputs.len() || d_out.iter().zip(&pass.outputs).any(|(d, y)| d.dim() != y.dim()) {
            return Err(Error::Shape("output gradient does not match the forward pass".into()));
        }
        let (hd, nf) = (self.arch.hidden_size, self.arch.n_features);
        let w = self.params.get(&format!("{PREFIX}.proj.weight"))?.as_matrix(nf);
        let mut dw = Array2::<f64>::zeros((nf, 2 * hd));
        let mut db = Array1::<f64>::zeros(nf);
        let mut dh: [Vec<Array2<f64>>; 2] = [Vec::new(), Vec::new()];
        for (t, (d, y)) in d_out.iter().zip(&pass.outputs).enumerate() {
            let mut dy = d.clone();
            dy.zip_mut_with(y, |g, yv| *g *= self.arch.projection_activation.slope_at_output(*yv));
            let (hf, hb) = (&pass.hidden[0][t], &pass.hidden[1][t]);
            dw.slice_mut(s![.., ..hd]).scaled_add(1.0, &dy.t().dot(hf));
            dw.slice_mut(s![.., hd..]).scaled_add(1.0, &dy.t().dot(hb));
            db += &dy.sum_axis(Axis(0));
            dh[0].push(dy.dot(&w.slice(s![.., ..hd])));
            dh[1].push(dy.dot(&w.slice(s![.., hd..])));
        }
        let orders = scan_orders(d_out.len());
        let mut grads = Gradients::default();
        let mut inputs: Vec<Array2<f64>> = Vec::new();
        for (k, dir) in DIRECTIONS.iter().enumerate() {
            let (g, dx) = backprop_direction(&self.cell(k)?, &self.arch, &pass.steps[k], &orders[k], &dh[k]);
            let name = |s: String| format!("{PREFIX}.{dir}.{s}");
            for (gi, gate) in GATES.iter().enumerate() {
                grads.insert(name(format!("w_{gate}x")), g.w_x[gi].clone().into_raw_vec_and_offset().0);
                grads.insert(name(format!("w_{gate}m")), g.w_m[gi].clone().into_raw_vec_and_offset().0);
            }
            for (slot, p) in ["w_ic", "w_fc", "w_oc"].iter().enumerate() {
                grads.insert(name(p.to_string()), g.peep[slot].to_vec());
            }
            for (gi, gate) in GATES.iter().enumerate() {
                grads.insert(name(format!("b_{gate}")), g.b[gi].to_vec());
            }
            if inputs.is_empty() {
                inputs = dx;
            } else {
                inputs.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
            }
        }
        grads.insert(format!("{PREFIX}.proj.weight"), dw.into_raw_vec_and_offset().0);
        grads.insert(format!("{PREFIX}.proj.bias"), db.to_vec());
        Ok(SeqGradients { params: grads, inputs })
    }
}

/// Mean squared error over every element of every pair, and its gradient
/// w.r.t. the outputs.
fn mse_and_grad(outputs: &[Array2<f64>], targets: &[Array2<f64>]) -> (f64, Vec<Array2<f64>>) {
    let count: usize = outputs.iter().map(|y| y.len()).sum();
    let mut loss = 0.0;
    let grads = outputs
        .iter()
        .zip(targets)
        .map(|(y, t)| {
            let diff = y - t;
            loss += diff.iter().map(|d| d * d).sum::<f64>();
            diff * (2.0 / count as f64)
        })
        .collect();
    (loss / count as f64, grads)
}

/// Input/target window pairs: input at `start`, target at `start + n`.
pub fn make_pairs(rows: ArrayView2<'_, f64>, n: usize, stride: usize) -> Result<Vec<(Array2<f64>, Array2<f64>)>> {
    if n == 0 || stride == 0 {
        return Err(Error::Parameter("window length and stride must be positive".into()));
    }
    if rows.nrows() < 2 * n {
        return Err(Error::insufficient("BiLSTM training pairs", 2 * n, rows.nrows()));
    }
    Ok((0..=rows.nrows() - 2 * n)
        .step_by(stride)
        .map(|s0| {
            (
                rows.slice(s![s0..s0 + n, ..]).to_owned(),
                rows.slice(s![s0 + n..s0 + 2 * n, ..]).to_owned(),
            )
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqTrainConfig {
    /// Full passes over the training pairs.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
}

impl Default for SeqTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            seed: 0,
            optimizer: AdamConfig {
                lr: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedBiLstm {
    pub model: BiLstmModel,
    /// Mean training MSE per epoch.
    pub history: Vec<f64>,
}

/// Minimises MSE over `pairs` with shuffled mini-batches.
pub fn bilstm_train(
    pairs: &[(Array2<f64>, Array2<f64>)],
    arch: &BiLstmArch,
    config: &SeqTrainConfig,
) -> Result<TrainedBiLstm> {
    if pairs.is_empty() {
        return Err(Error::insufficient("BiLSTM training pairs", 1, 0));
    }
    if config.batch_size == 0 {
        return Err(Error::Parameter("batch_size must be positive".into()));
    }
    let mut model = BiLstmModel::new(arch, derive_seed(config.seed, 11))?;
    let mut shuffle_rng = rng_from_seed(derive_seed(config.seed, 12));
    let mut opt: Adam = config.optimizer.build();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let inputs: Vec<ArrayView2<'_, f64>> = chunk.iter().map(|&i| pairs[i].0.view()).collect();
            let targets: Vec<ArrayView2<'_, f64>> = chunk.iter().map(|&i| pairs[i].1.view()).collect();
            let pass = model.forward_batch(&inputs)?;
            let target_steps = model.split_time(&targets)?;
            let (loss, d_out) = mse_and_grad(&pass.outputs, &target_steps);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    stage: "BiLSTM training".into(),
                    index: epoch,
                });
            }
            let grads = model.backward(&pass, &d_out)?;
            opt.apply(&mut model.params, &grads.params).map_err(|e| {
                if e.is_numeric() {
                    Error::Diverged {
                        stage: "BiLSTM training".into(),
                        index: epoch,
                    }
                } else {
                    e
                }
            })?;
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        history.push(total / seen as f64);
    }
    Ok(TrainedBiLstm { model, history })
}

pub fn write_history(path: &Path, history: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        out.push_str(&format!("{e},{l}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
