//! Sequential layer chains over a [`ParameterStore`].

use indexmap::IndexMap;
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand_distr::{Distribution, Uniform};

use super::layers::{
    add_channel_bias, batchnorm_backward_train, batchnorm_kernel, channel_sums, col2im, conv_geometry,
    dropout_mask, im2col, sigmoid_scalar, sum_rows, ConvGeometry, LayerSpec, Mode,
};
use super::params::{Param, ParameterStore};
use super::shape::Shape;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Clone)]
struct Node {
    spec: LayerSpec,
    name: String,
    input: Shape,
    output: Shape,
    conv: Option<ConvGeometry>,
}

/// A chain of layers whose parameters live under `"{prefix}.{index}.*"`.
#[derive(Debug, Clone)]
pub struct Network {
    prefix: String,
    input_shape: Shape,
    nodes: Vec<Node>,
}

enum Cache {
    None,
    Input(Array2<f64>),
    Cols(Array2<f64>),
    BatchNormTrain { xhat: Array2<f64>, inv_std: Vec<f64> },
    BatchNormInfer { xhat: Array2<f64>, inv_std: Vec<f64> },
    Output(Array2<f64>),
    Mask(Vec<f64>),
}

/// Recorded forward pass: output plus everything `backward` needs.
pub struct ForwardPass {
    pub output: Array2<f64>,
    caches: Vec<Cache>,
    running_updates: Vec<(String, Vec<f64>)>,
    mode: Mode,
}

impl ForwardPass {
    /// Writes the batch-norm running statistics computed in train mode.
    pub fn commit_running_stats(&self, params: &mut ParameterStore) -> Result<()> {
        for (name, values) in &self.running_updates {
            params.get_mut(name)?.values.clone_from(values);
        }
        Ok(())
    }
}

/// Gradient arrays keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients(IndexMap<String, Vec<f64>>);

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.0.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn insert(&mut self, name: String, values: Vec<f64>) {
        self.0.insert(name, values);
    }

    /// Elementwise sum with another gradient set over the same names.
    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        for (name, g) in other.iter() {
            match self.0.get_mut(name) {
                Some(mine) if mine.len() == g.len() => mine.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                Some(_) => return Err(Error::Shape(format!("gradient length mismatch for `{name}`"))),
                None => {
                    self.0.insert(name.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    /// Global L2 norm over every entry.
    pub fn norm(&self) -> f64 {
        self.0.values().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }
}

pub struct Backward {
    pub params: Gradients,
    pub input: Array2<f64>,
}

fn view<'a>(p: &'a Param) -> ArrayView1<'a, f64> {
    p.as_vector()
}

impl Network {
    /// Resolves every layer's shapes; fails if any transition is invalid.
    pub fn new(prefix: impl Into<String>, input_shape: Shape, specs: Vec<LayerSpec>) -> Result<Self> {
        let prefix = prefix.into();
        let mut nodes = Vec::with_capacity(specs.len());
        let mut current = input_shape.clone();
        for (i, spec) in specs.into_iter().enumerate() {
            let output = spec.output_shape(&current).map_err(|e| match e {
                Error::Shape(msg) => Error::Shape(format!("{prefix}.{i} ({}): {msg}", spec.kind())),
                other => other,
            })?;
            let conv = match &spec {
                LayerSpec::Conv2d {
                    kernel,
                    stride,
                    padding,
                    ..
                } => Some(conv_geometry(&current, &output, *kernel, *stride, *padding)?),
                LayerSpec::Conv2dTranspose {
                    kernel,
                    stride,
                    padding,
                    ..
                } => Some(conv_geometry(&output, &current, *kernel, *stride, *padding)?),
                _ => None,
            };
            nodes.push(Node {
                name: format!("{prefix}.{i}"),
                spec,
                input: current,
                output: output.clone(),
                conv,
            });
            current = output;
        }
        Ok(Self {
            prefix,
            input_shape,
            nodes,
        })
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn input_shape(&self) -> &Shape {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &Shape {
        self.nodes.last().map(|n| &n.output).unwrap_or(&self.input_shape)
    }

    pub fn specs(&self) -> impl Iterator<Item = &LayerSpec> {
        self.nodes.iter().map(|n| &n.spec)
    }

    /// Shapes after each layer, in order.
    pub fn layer_shapes(&self) -> Vec<Shape> {
        self.nodes.iter().map(|n| n.output.clone()).collect()
    }

    pub fn has_dropout(&self) -> bool {
        self.nodes.iter().any(|n| matches!(n.spec, LayerSpec::Dropout { .. }))
    }

    /// Glorot-uniform weights, zero biases, unit batch-norm scale and
    /// running variance.
    pub fn init_params(&self, seed: u64) -> Result<ParameterStore> {
        let mut rng = rng_from_seed(seed);
        let mut store = ParameterStore::new(Some(seed));
        for node in &self.nodes {
            let mut glorot = |dims: Vec<usize>, fan_in: usize, fan_out: usize| -> Result<Param> {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new(-limit, limit).expect("valid range");
                let shape = Shape::new(dims)?;
                let values = (0..shape.size()).map(|_| dist.sample(&mut rng)).collect();
                Param::new(shape, values)
            };
            let n = &node.name;
            match &node.spec {
                LayerSpec::Dense { units } => {
                    let fan_in = node.input.size();
                    store.insert(format!("{n}.weight"), glorot(vec![*units, fan_in], fan_in, *units)?)?;
                    store.insert(format!("{n}.bias"), Param::new(Shape::vector(*units)?, vec![0.0; *units])?)?;
                }
                LayerSpec::Conv2d { filters, kernel, .. } => {
                    let c_in = node.input.channels();
                    let area = kernel.0 * kernel.1;
                    let w = glorot(vec![kernel.0, kernel.1, c_in, *filters], area * c_in, area * filters)?;
                    store.insert(format!("{n}.weight"), w)?;
                    store.insert(format!("{n}.bias"), Param::new(Shape::vector(*filters)?, vec![0.0; *filters])?)?;
                }
                LayerSpec::Conv2dTranspose { filters, kernel, .. } => {
                    let c_in = node.input.channels();
                    let area = kernel.0 * kernel.1;
                    let w = glorot(vec![kernel.0, kernel.1, *filters, c_in], area * c_in, area * filters)?;
                    store.insert(format!("{n}.weight"), w)?;
                    store.insert(format!("{n}.bias"), Param::new(Shape::vector(*filters)?, vec![0.0; *filters])?)?;
                }
                LayerSpec::BatchNorm { .. } => {
                    let c = node.input.channels();
                    let vec_of = |v: f64| Param::new(Shape::vector(c).expect("positive"), vec![v; c]);
                    store.insert(format!("{n}.gamma"), vec_of(1.0)?)?;
                    store.insert(format!("{n}.beta"), vec_of(0.0)?)?;
                    store.insert(format!("{n}.running_mean"), vec_of(0.0)?)?;
                    store.insert(format!("{n}.running_var"), vec_of(1.0)?)?;
                }
                _ => {}
            }
        }
        Ok(store)
    }

    /// Names of the parameters updated by gradient descent (batch-norm
    /// running statistics excluded).
    pub fn trainable_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for node in &self.nodes {
            match node.spec {
                LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. } | LayerSpec::Conv2dTranspose { .. } => {
                    names.push(format!("{}.weight", node.name));
                    names.push(format!("{}.bias", node.name));
                }
                LayerSpec::BatchNorm { .. } => {
                    names.push(format!("{}.gamma", node.name));
                    names.push(format!("{}.beta", node.name));
                }
                _ => {}
            }
        }
        names
    }

    /// Runs the chain on a `batch x input_len` matrix.
    ///
    /// Train mode uses batch statistics and dropout (drawing masks from
    /// `rng`); running statistics are returned in the pass, not written.
    pub fn forward(
        &self,
        params: &ParameterStore,
        x: ArrayView2<'_, f64>,
        mode: Mode,
        mut rng: Option<&mut Rng>,
    ) -> Result<ForwardPass> {
        if x.ncols() != self.input_shape.size() {
            return Err(Error::Shape(format!(
                "{}: expected inputs of length {} ({}), got {}",
                self.prefix,
                self.input_shape.size(),
                self.input_shape,
                x.ncols()
            )));
        }
        let batch = x.nrows();
        let mut caches = Vec::with_capacity(self.nodes.len());
        let mut running_updates = Vec::new();
        let mut h = x.as_standard_layout().into_owned();

        for node in &self.nodes {
            let n = &node.name;
            let (out, cache) = match &node.spec {
                LayerSpec::Dense { .. } => {
                    let w = params.get(&format!("{n}.weight"))?;
                    let b = params.get(&format!("{n}.bias"))?;
                    let mut y = h.dot(&w.as_matrix(node.output.size()).t());
                    y += &view(b);
                    (y, Cache::Input(h))
                }
                LayerSpec::Conv2d { filters, .. } => {
                    let g = node.conv.as_ref().expect("conv geometry");
                    let w = params.get(&format!("{n}.weight"))?;
                    let b = params.get(&format!("{n}.bias"))?;
                    let cols = im2col(h.view(), g);
                    let y = cols.dot(&w.as_matrix(g.patch_len()));
                    let mut y = y
                        .into_shape_with_order((batch, node.output.size()))
                        .expect("conv output layout");
                    add_channel_bias(&mut y, view(b));
                    let _ = filters;
                    (y, Cache::Cols(cols))
                }
                LayerSpec::Conv2dTranspose { .. } => {
                    let g = node.conv.as_ref().expect("conv geometry");
                    let w = params.get(&format!("{n}.weight"))?;
                    let b = params.get(&format!("{n}.bias"))?;
                    let c_in = node.input.channels();
                    let grid = h
                        .view()
                        .into_shape_with_order((batch * g.positions(), c_in))
                        .expect("grid layout");
                    let cols = grid.dot(&w.as_matrix(g.patch_len()).t());
                    let mut y = col2im(cols.view(), g, batch);
                    add_channel_bias(&mut y, view(b));
                    (y, Cache::Input(h))
                }
                LayerSpec::BatchNorm { momentum, eps } => {
                    let c = node.input.channels();
                    let gamma = &params.get(&format!("{n}.gamma"))?.values;
                    let beta = &params.get(&format!("{n}.beta"))?.values;
                    let rm = &params.get(&format!("{n}.running_mean"))?.values;
                    let rv = &params.get(&format!("{n}.running_var"))?.values;
                    match mode {
                        Mode::Train => {
                            if batch < 2 {
                                return Err(Error::BatchSize(batch));
                            }
                            let out = batchnorm_kernel(h.view(), c, gamma, beta, None, *eps);
                            let blend = |run: &[f64], cur: &[f64]| -> Vec<f64> {
                                run.iter()
                                    .zip(cur)
                                    .map(|(r, b)| momentum * r + (1.0 - momentum) * b)
                                    .collect()
                            };
                            running_updates.push((format!("{n}.running_mean"), blend(rm, &out.batch_mean)));
                            running_updates.push((format!("{n}.running_var"), blend(rv, &out.batch_var)));
                            (
                                out.y,
                                Cache::BatchNormTrain {
                                    xhat: out.xhat,
                                    inv_std: out.inv_std,
                                },
                            )
                        }
                        Mode::Infer => {
                            let out = batchnorm_kernel(h.view(), c, gamma, beta, Some((rm, rv)), *eps);
                            (
                                out.y,
                                Cache::BatchNormInfer {
                                    xhat: out.xhat,
                                    inv_std: out.inv_std,
                                },
                            )
                        }
                    }
                }
                LayerSpec::LeakyRelu { slope } => {
                    let y = h.mapv(|v| if v >= 0.0 { v } else { slope * v });
                    (y, Cache::Input(h))
                }
                LayerSpec::Tanh => {
                    let y = h.mapv(f64::tanh);
                    (y.clone(), Cache::Output(y))
                }
                LayerSpec::Sigmoid => {
                    let y = h.mapv(sigmoid_scalar);
                    (y.clone(), Cache::Output(y))
                }
                LayerSpec::Dropout { rate } => match mode {
                    Mode::Infer => (h, Cache::None),
                    Mode::Train => {
                        let rng = rng.as_deref_mut().ok_or_else(|| {
                            Error::Parameter(format!("{n}: dropout in train mode needs an rng"))
                        })?;
                        let mask = dropout_mask(h.len(), *rate, rng);
                        let mut y = h;
                        y.as_slice_mut()
                            .expect("contiguous")
                            .iter_mut()
                            .zip(&mask)
                            .for_each(|(v, m)| *v *= m);
                        (y, Cache::Mask(mask))
                    }
                },
                LayerSpec::Reshape { .. } | LayerSpec::Flatten => (h, Cache::None),
            };
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    layer: format!("{n} ({})", node.spec.kind()),
                });
            }
            caches.push(cache);
            h = out;
        }
        Ok(ForwardPass {
            output: h,
            caches,
            running_updates,
            mode,
        })
    }

    /// Reverse-mode pass. `grad_out` is dLoss/dOutput for the recorded
    /// batch. Parameter gradients are skipped when `param_grads` is false.
    pub fn backward(
        &self,
        params: &ParameterStore,
        pass: &ForwardPass,
        grad_out: ArrayView2<'_, f64>,
        param_grads: bool,
    ) -> Result<Backward> {
        if grad_out.dim() != pass.output.dim() {
            return Err(Error::Shape(format!(
                "{}: gradient shape {:?} does not match output {:?}",
                self.prefix,
                grad_out.dim(),
                pass.output.dim()
            )));
        }
        let batch = grad_out.nrows();
        let mut grads = Gradients::default();
        let mut g = grad_out.as_standard_layout().into_owned();

        for (node, cache) in self.nodes.iter().zip(&pass.caches).rev() {
            let n = &node.name;
            g = match (&node.spec, cache) {
                (LayerSpec::Dense { .. }, Cache::Input(x)) => {
                    let w = params.get(&format!("{n}.weight"))?;
                    let wm = w.as_matrix(node.output.size());
                    if param_grads {
                        let dw = g.t().dot(x);
                        grads.insert(format!("{n}.weight"), dw.into_raw_vec_and_offset().0);
                        grads.insert(format!("{n}.bias"), sum_rows(g.view()));
                    }
                    g.dot(&wm)
                }
                (LayerSpec::Conv2d { filters, .. }, Cache::Cols(cols)) => {
                    let geo = node.conv.as_ref().expect("conv geometry");
                    let w = params.get(&format!("{n}.weight"))?;
                    let gy = g
                        .view()
                        .into_shape_with_order((batch * geo.positions(), *filters))
                        .expect("grid layout")
                        .to_owned();
                    if param_grads {
                        let dw = cols.t().dot(&gy);
                        grads.insert(format!("{n}.weight"), dw.into_raw_vec_and_offset().0);
                        grads.insert(format!("{n}.bias"), channel_sums(g.view(), *filters));
                    }
                    let dcols = gy.dot(&w.as_matrix(geo.patch_len()).t());
                    col2im(dcols.view(), geo, batch)
                }
                (LayerSpec::Conv2dTranspose { filters, .. }, Cache::Input(x)) => {
                    let geo = node.conv.as_ref().expect("conv geometry");
                    let w = params.get(&format!("{n}.weight"))?;
                    let c_in = node.input.channels();
                    let dcols = im2col(g.view(), geo);
                    if param_grads {
                        let grid = x
                            .view()
                            .into_shape_with_order((batch * geo.positions(), c_in))
                            .expect("grid layout");
                        let dw = dcols.t().dot(&grid);
                        grads.insert(format!("{n}.weight"), dw.into_raw_vec_and_offset().0);
                        grads.insert(format!("{n}.bias"), channel_sums(g.view(), *filters));
                    }
                    dcols
                        .dot(&w.as_matrix(geo.patch_len()))
                        .into_shape_with_order((batch, node.input.size()))
                        .expect("input layout")
                }
                (LayerSpec::BatchNorm { .. }, Cache::BatchNormTrain { xhat, inv_std }) => {
                    let gamma = &params.get(&format!("{n}.gamma"))?.values;
                    let (dx, dgamma, dbeta) = batchnorm_backward_train(g.view(), xhat.view(), inv_std, gamma);
                    if param_grads {
                        grads.insert(format!("{n}.gamma"), dgamma);
                        grads.insert(format!("{n}.beta"), dbeta);
                    }
                    dx
                }
                (LayerSpec::BatchNorm { .. }, Cache::BatchNormInfer { xhat, inv_std }) => {
                    let gamma = &params.get(&format!("{n}.gamma"))?.values;
                    let c = gamma.len();
                    if param_grads {
                        let mut dgamma = vec![0.0; c];
                        for (d, h) in g
                            .as_slice()
                            .expect("contiguous")
                            .chunks_exact(c)
                            .zip(xhat.as_slice().expect("contiguous").chunks_exact(c))
                        {
                            for k in 0..c {
                                dgamma[k] += d[k] * h[k];
                            }
                        }
                        grads.insert(format!("{n}.gamma"), dgamma);
                        grads.insert(format!("{n}.beta"), channel_sums(g.view(), c));
                    }
                    let mut dx = g;
                    for v in dx.as_slice_mut().expect("contiguous").chunks_exact_mut(c) {
                        for k in 0..c {
                            v[k] *= gamma[k] * inv_std[k];
                        }
                    }
                    dx
                }
                (LayerSpec::LeakyRelu { slope }, Cache::Input(x)) => {
                    let mut dx = g;
                    dx.zip_mut_with(x, |d, xv| {
                        if *xv < 0.0 {
                            *d *= slope
                        }
                    });
                    dx
                }
                (LayerSpec::Tanh, Cache::Output(y)) => {
                    let mut dx = g;
                    dx.zip_mut_with(y, |d, yv| *d *= 1.0 - yv * yv);
                    dx
                }
                (LayerSpec::Sigmoid, Cache::Output(y)) => {
                    let mut dx = g;
                    dx.zip_mut_with(y, |d, yv| *d *= yv * (1.0 - yv));
                    dx
                }
                (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => {
                    let mut dx = g;
                    dx.as_slice_mut()
                        .expect("contiguous")
                        .iter_mut()
                        .zip(mask)
                        .for_each(|(d, m)| *d *= m);
                    dx
                }
                (LayerSpec::Dropout { .. }, Cache::None)
                | (LayerSpec::Reshape { .. }, Cache::None)
                | (LayerSpec::Flatten, Cache::None) => g,
                (spec, _) => {
                    return Err(Error::State(format!(
                        "{n}: cache does not match layer kind {} in {:?} mode",
                        spec.kind(),
                        pass.mode
                    )))
                }
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    layer: format!("{n} ({} backward)", node.spec.kind()),
                });
            }
        }

        // Gradients were pushed in reverse layer order; present them forward.
        let mut ordered = Gradients::default();
        for name in self.trainable_names() {
            if let Some(v) = grads.0.shift_remove(&name) {
                ordered.insert(name, v);
            }
        }
        Ok(Backward {
            params: ordered,
            input: g,
        })
    }
}
