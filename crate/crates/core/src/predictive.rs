//! Predictive GAN: latent-space optimization that turns a trained generator
//! into a one-step-ahead forecaster, and the autoregressive window roll-out.
//!
//! To predict time level `n`, a latent `z` is optimized so that the first
//! `n - 1` rows of `G(z)` match the known preceding rows; the last row of
//! `G(z*)` is the prediction.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::gan::GeneratorModel;
use crate::neural::{Adam, Mode};
use crate::rng::{derive_seed, rng_from_seed};

/// A differentiable map from latent vectors to `n x m` windows.
pub trait LatentGenerator {
    fn latent_dim(&self) -> usize;

    /// `(n, m)` of generated windows.
    fn window_shape(&self) -> (usize, usize);

    fn generate(&self, z: &[f64]) -> Result<Array2<f64>>;

    /// Evaluates `loss(G(z))` and its gradient with respect to `z`. The
    /// closure returns the loss and its gradient with respect to the window.
    fn value_and_grad(
        &self,
        z: &[f64],
        loss: &mut dyn FnMut(ArrayView2<'_, f64>) -> (f64, Array2<f64>),
    ) -> Result<(f64, Vec<f64>)>;
}

impl LatentGenerator for GeneratorModel {
    fn latent_dim(&self) -> usize {
        GeneratorModel::latent_dim(self)
    }

    fn window_shape(&self) -> (usize, usize) {
        let dims = self.network().output_shape().dims().to_vec();
        (dims[0], dims[1])
    }

    fn generate(&self, z: &[f64]) -> Result<Array2<f64>> {
        GeneratorModel::generate(self, z)
    }

    fn value_and_grad(
        &self,
        z: &[f64],
        loss: &mut dyn FnMut(ArrayView2<'_, f64>) -> (f64, Array2<f64>),
    ) -> Result<(f64, Vec<f64>)> {
        let (n, m) = self.window_shape();
        if z.len() != self.latent_dim() {
            return Err(Error::Shape(format!(
                "latent vector has length {}, generator expects {}",
                z.len(),
                self.latent_dim()
            )));
        }
        let x = ArrayView2::from_shape((1, z.len()), z).expect("row view");
        let pass = self.network().forward(self.params(), x, Mode::Infer, None)?;
        let window = pass.output.view().into_shape_with_order((n, m)).expect("window layout");
        let (value, grad) = loss(window);
        let grad = grad.into_shape_with_order((1, n * m)).expect("flat gradient");
        let back = self.network().backward(self.params(), &pass, grad.view(), false)?;
        Ok((value, back.input.into_raw_vec_and_offset().0))
    }
}

/// Frozen linear generator `G(z) = A z`, reshaped row-major to `n x m`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGenerator {
    /// `(n * m) x latent_dim`.
    pub a: Array2<f64>,
    pub n: usize,
    pub m: usize,
}

impl LinearGenerator {
    pub fn new(a: Array2<f64>, n: usize, m: usize) -> Result<Self> {
        if a.nrows() != n * m || a.ncols() == 0 {
            return Err(Error::Shape(format!(
                "linear generator matrix is {:?}, expected {}x(latent)",
                a.dim(),
                n * m
            )));
        }
        Ok(Self { a, n, m })
    }
}

impl LatentGenerator for LinearGenerator {
    fn latent_dim(&self) -> usize {
        self.a.ncols()
    }

    fn window_shape(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    fn generate(&self, z: &[f64]) -> Result<Array2<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::Shape(format!("latent length {} != {}", z.len(), self.latent_dim())));
        }
        let y = self.a.dot(&Array1::from(z.to_vec()));
        Ok(y.into_shape_with_order((self.n, self.m)).expect("window layout"))
    }

    fn value_and_grad(
        &self,
        z: &[f64],
        loss: &mut dyn FnMut(ArrayView2<'_, f64>) -> (f64, Array2<f64>),
    ) -> Result<(f64, Vec<f64>)> {
        let y = self.generate(z)?;
        let (value, grad) = loss(y.view());
        let g = grad.into_shape_with_order(self.n * self.m).expect("flat gradient");
        Ok((value, self.a.t().dot(&g).to_vec()))
    }
}

/// Strictly positive per-feature weights for the latent-optimization MSE.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWeights(Vec<f64>);

impl FeatureWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Parameter(format!("feature weights must be positive, got {weights:?}")));
        }
        Ok(Self(weights))
    }

    pub fn ones(m: usize) -> Self {
        Self(vec![1.0; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `(1 / (k m)) * sum_t sum_j w_j (pred[t,j] - known[t,j])^2`.
pub fn weighted_mse(predicted: ArrayView2<'_, f64>, known: ArrayView2<'_, f64>, weights: &FeatureWeights) -> Result<f64> {
    if predicted.dim() != known.dim() || predicted.ncols() != weights.0.len() || predicted.nrows() == 0 {
        return Err(Error::Shape(format!(
            "weighted_mse: predicted {:?}, known {:?}, {} weights",
            predicted.dim(),
            known.dim(),
            weights.0.len()
        )));
    }
    let count = predicted.len() as f64;
    let mut total = 0.0;
    for ((t, j), p) in predicted.indexed_iter() {
        let d = p - known[[t, j]];
        total += weights.0[j] * d * d;
    }
    Ok(total / count)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentOptConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Stop as soon as the loss falls below this value.
    pub tolerance: Option<f64>,
    /// Stop when the best loss improved by less than `min_improvement`
    /// over the last `patience` iterations.
    pub patience: usize,
    pub min_improvement: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Start each roll-out step from the previous step's optimum instead of
    /// a fresh random latent.
    pub warm_start: bool,
}

impl Default for LatentOptConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            lr: 1e-2,
            tolerance: None,
            patience: 200,
            min_improvement: 1e-6,
            restarts: 1,
            seed: 0,
            warm_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentResult {
    /// Lowest-loss latent seen.
    pub z: Vec<f64>,
    pub loss: f64,
    pub iterations: usize,
    /// Loss of the iterate at each evaluated step.
    pub trace: Vec<f64>,
}

impl LatentResult {
    pub fn write_trace(&self, path: &Path) -> Result<()> {
        let mut out = String::from("iteration,loss\n");
        for (i, l) in self.trace.iter().enumerate() {
            out.push_str(&format!("{i},{l}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn check_known<G: LatentGenerator + ?Sized>(gen: &G, known: ArrayView2<'_, f64>, weights: &FeatureWeights) -> Result<()> {
    let (n, m) = gen.window_shape();
    if known.nrows() == 0 || known.nrows() >= n || known.ncols() != m {
        return Err(Error::Shape(format!(
            "known block is {:?}; generator windows are {n}x{m}, so at most {} rows can be matched",
            known.dim(),
            n - 1
        )));
    }
    if weights.0.len() != m {
        return Err(Error::Shape(format!("{} feature weights for {m} features", weights.0.len())));
    }
    Ok(())
}

/// Adam on `weighted_mse(first k rows of G(z), known)`.
///
/// Starts from `init` when given, otherwise from `N(0, I)` drawn with
/// `config.seed`. With several restarts the best result wins.
pub fn optimize_latent<G: LatentGenerator + ?Sized>(
    gen: &G,
    known: ArrayView2<'_, f64>,
    weights: &FeatureWeights,
    config: &LatentOptConfig,
    init: Option<&[f64]>,
) -> Result<LatentResult> {
    check_known(gen, known, weights)?;
    if config.iterations == 0 || config.restarts == 0 {
        return Err(Error::Parameter("iterations and restarts must be at least 1".into()));
    }
    let mut best: Option<LatentResult> = None;
    for r in 0..config.restarts {
        let start = match (r, init) {
            (0, Some(z)) => z.to_vec(),
            _ => {
                let mut rng = rng_from_seed(derive_seed(config.seed, r as u64));
                (0..gen.latent_dim()).map(|_| StandardNormal.sample(&mut rng)).collect()
            }
        };
        let result = optimize_from(gen, known, weights, config, start)?;
        if best.as_ref().is_none_or(|b| result.loss < b.loss) {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn optimize_from<G: LatentGenerator + ?Sized>(
    gen: &G,
    known: ArrayView2<'_, f64>,
    weights: &FeatureWeights,
    config: &LatentOptConfig,
    mut z: Vec<f64>,
) -> Result<LatentResult> {
    if z.len() != gen.latent_dim() {
        return Err(Error::Shape(format!(
            "initial latent has length {}, generator expects {}",
            z.len(),
            gen.latent_dim()
        )));
    }
    let (k, m) = known.dim();
    let w = weights.as_slice();
    let scale = 2.0 / (k * m) as f64;
    let mut loss_fn = |window: ArrayView2<'_, f64>| -> (f64, Array2<f64>) {
        let head = window.slice(s![..k, ..]);
        let mut grad = Array2::zeros(window.raw_dim());
        let mut total = 0.0;
        for t in 0..k {
            for j in 0..m {
                let d = head[[t, j]] - known[[t, j]];
                total += w[j] * d * d;
                grad[[t, j]] = scale * w[j] * d;
            }
        }
        (total / (k * m) as f64, grad)
    };

    let mut opt = Adam::new(config.lr);
    let mut best_z = z.clone();
    let mut best_loss = f64::INFINITY;
    let mut reference = (f64::INFINITY, 0usize);
    let mut trace = Vec::new();
    for it in 0..config.iterations {
        let (loss, grad) = gen.value_and_grad(&z, &mut loss_fn).map_err(|e| {
            if e.is_numeric() {
                Error::Diverged {
                    stage: "latent optimization".into(),
                    index: it,
                }
            } else {
                e
            }
        })?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                stage: "latent optimization".into(),
                index: it,
            });
        }
        trace.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best_z.clone_from(&z);
        }
        if config.tolerance.is_some_and(|tol| loss < tol) {
            break;
        }
        if reference.0 - best_loss > config.min_improvement {
            reference = (best_loss, it);
        } else if it - reference.1 >= config.patience {
            break;
        }
        opt.apply_vector("z", &mut z, &grad);
    }
    Ok(LatentResult {
        z: best_z,
        loss: best_loss,
        iterations: trace.len(),
        trace,
    })
}

/// Forecasts the next time level from the `n - 1` preceding rows.
pub fn predict_next<G: LatentGenerator + ?Sized>(
    gen: &G,
    known: ArrayView2<'_, f64>,
    weights: &FeatureWeights,
    config: &LatentOptConfig,
) -> Result<Array1<f64>> {
    Ok(predict_next_detailed(gen, known, weights, config, None)?.0)
}

fn predict_next_detailed<G: LatentGenerator + ?Sized>(
    gen: &G,
    known: ArrayView2<'_, f64>,
    weights: &FeatureWeights,
    config: &LatentOptConfig,
    init: Option<&[f64]>,
) -> Result<(Array1<f64>, LatentResult)> {
    let (n, _) = gen.window_shape();
    if known.nrows() != n - 1 {
        return Err(Error::Shape(format!("need {} known rows, got {}", n - 1, known.nrows())));
    }
    let result = optimize_latent(gen, known, weights, config, init)?;
    let window = gen.generate(&result.z)?;
    Ok((window.row(n - 1).to_owned(), result))
}

/// One roll-out step as seen by an observer.
pub struct StepRecord<'a> {
    /// 0-based index of the predicted row within the window.
    pub step: usize,
    /// Rows the latent was fitted to.
    pub conditioning: ArrayView2<'a, f64>,
    pub result: &'a LatentResult,
}

/// Autoregressive roll-out of `n` rows from `n - 1` seed rows: each step
/// conditions on the latest `n - 1` rows (seed rows first, then its own
/// predictions). Step `i` uses the seed `derive_seed(config.seed, i)`.
pub fn predict_window<G: LatentGenerator + ?Sized>(
    gen: &G,
    seed_rows: ArrayView2<'_, f64>,
    weights: &FeatureWeights,
    config: &LatentOptConfig,
) -> Result<Array2<f64>> {
    predict_window_observed(gen, seed_rows, weights, config, |_| {})
}

pub fn predict_window_observed<G: LatentGenerator + ?Sized>(
    gen: &G,
    seed_rows: ArrayView2<'_, f64>,
    weights: &FeatureWeights,
    config: &LatentOptConfig,
    mut observer: impl FnMut(&StepRecord<'_>),
) -> Result<Array2<f64>> {
    let (n, m) = gen.window_shape();
    if seed_rows.dim() != (n - 1, m) {
        return Err(Error::Shape(format!(
            "seed rows are {:?}, expected {}x{m}",
            seed_rows.dim(),
            n - 1
        )));
    }
    // history = seed rows followed by predictions.
    let mut history = Array2::zeros((2 * n - 1, m));
    history.slice_mut(s![..n - 1, ..]).assign(&seed_rows);
    let mut previous: Option<Vec<f64>> = None;
    for step in 0..n {
        let conditioning = history.slice(s![step..step + n - 1, ..]).to_owned();
        let step_config = LatentOptConfig {
            seed: derive_seed(config.seed, step as u64),
            ..config.clone()
        };
        let init = if config.warm_start { previous.as_deref() } else { None };
        let (row, result) = predict_next_detailed(gen, conditioning.view(), weights, &step_config, init)?;
        observer(&StepRecord {
            step,
            conditioning: conditioning.view(),
            result: &result,
        });
        history.row_mut(n - 1 + step).assign(&row);
        previous = Some(result.z);
    }
    Ok(history.slice(s![n - 1.., ..]).to_owned())
}

/// Chains `count` windows: window `k` is seeded by the last `n - 1` rows
/// of window `k - 1` (the first by `seed_rows`), using only the generator.
pub fn predict_windows<G: LatentGenerator + ?Sized>(
    gen: &G,
    seed_rows: ArrayView2<'_, f64>,
    count: usize,
    weights: &FeatureWeights,
    config: &LatentOptConfig,
) -> Result<Vec<Array2<f64>>> {
    let (n, _) = gen.window_shape();
    let mut windows: Vec<Array2<f64>> = Vec::with_capacity(count);
    for k in 0..count {
        let seed = match windows.last() {
            Some(w) => w.slice(s![1.., ..]).to_owned(),
            None => seed_rows.to_owned(),
        };
        debug_assert_eq!(seed.nrows(), n - 1);
        let cfg = LatentOptConfig {
            seed: derive_seed(config.seed, 0x1000 + k as u64),
            ..config.clone()
        };
        windows.push(predict_window(gen, seed.view(), weights, &cfg)?);
    }
    Ok(windows)
}
