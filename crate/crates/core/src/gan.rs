//! Windowed DCGAN: generator and discriminator stacks, cross-entropy losses
//! and the alternating training loop.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{WindowSample, N_FEATURES, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::neural::layers::sigmoid_scalar;
use crate::neural::{Adam, LayerSpec, Mode, Network, ParameterStore, Shape};
use crate::rng::{derive_seed, rng_from_seed, Rng};

pub const GEN_PREFIX: &str = "gen";
pub const DISC_PREFIX: &str = "disc";

/// Rows of the generator's first feature map; the last transposed
/// convolution doubles it minus one (5 -> 9).
const SEED_ROWS: usize = WINDOW_LEN.div_ceil(2);

/// Layer widths and hyperparameters shared by both networks.
#[derive(Debug, Clone, PartialEq)]
pub struct GanArch {
    pub latent_dim: usize,
    /// Channels of the 5x4 map produced by the dense layer (256 gives 5120 units).
    pub dense_channels: usize,
    /// Filters of the two shape-preserving transposed convolutions.
    pub gen_channels: [usize; 2],
    pub disc_channels: [usize; 2],
    pub leaky_slope: f64,
    pub dropout: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for GanArch {
    fn default() -> Self {
        Self {
            latent_dim: 100,
            dense_channels: 256,
            gen_channels: [128, 64],
            disc_channels: [64, 128],
            leaky_slope: 0.3,
            dropout: 0.3,
            bn_momentum: 0.99,
            bn_eps: 1e-5,
        }
    }
}

impl GanArch {
    fn bn(&self) -> LayerSpec {
        LayerSpec::BatchNorm {
            momentum: self.bn_momentum,
            eps: self.bn_eps,
        }
    }

    fn leaky(&self) -> LayerSpec {
        LayerSpec::LeakyRelu { slope: self.leaky_slope }
    }

    pub fn window_shape() -> Shape {
        Shape::new(vec![WINDOW_LEN, N_FEATURES, 1]).expect("positive dims")
    }

    pub fn generator_specs(&self) -> Result<Vec<LayerSpec>> {
        let same = |filters| LayerSpec::Conv2dTranspose {
            filters,
            kernel: (3, 3),
            stride: (1, 1),
            padding: (1, 1),
        };
        Ok(vec![
            LayerSpec::Dense {
                units: SEED_ROWS * N_FEATURES * self.dense_channels,
            },
            self.bn(),
            self.leaky(),
            LayerSpec::Reshape {
                target: Shape::new(vec![SEED_ROWS, N_FEATURES, self.dense_channels])?,
            },
            same(self.gen_channels[0]),
            self.bn(),
            self.leaky(),
            same(self.gen_channels[1]),
            self.bn(),
            self.leaky(),
            LayerSpec::Conv2dTranspose {
                filters: 1,
                kernel: (3, 3),
                stride: (2, 1),
                padding: (1, 1),
            },
            LayerSpec::Tanh,
        ])
    }

    pub fn discriminator_specs(&self) -> Vec<LayerSpec> {
        let conv = |filters, stride| LayerSpec::Conv2d {
            filters,
            kernel: (3, 3),
            stride,
            padding: (1, 1),
        };
        vec![
            conv(self.disc_channels[0], (2, 1)),
            self.leaky(),
            LayerSpec::Dropout { rate: self.dropout },
            conv(self.disc_channels[1], (1, 1)),
            self.leaky(),
            LayerSpec::Dropout { rate: self.dropout },
            LayerSpec::Flatten,
            LayerSpec::Dense { units: 1 },
        ]
    }

    pub fn generator_network(&self) -> Result<Network> {
        if self.latent_dim == 0 {
            return Err(Error::Parameter("latent_dim must be positive".into()));
        }
        let net = Network::new(GEN_PREFIX, Shape::vector(self.latent_dim)?, self.generator_specs()?)?;
        if net.output_shape() != &Self::window_shape() {
            return Err(Error::Shape(format!(
                "generator produces {}, expected {}",
                net.output_shape(),
                Self::window_shape()
            )));
        }
        Ok(net)
    }

    pub fn discriminator_network(&self) -> Result<Network> {
        let net = Network::new(DISC_PREFIX, Self::window_shape(), self.discriminator_specs())?;
        if net.output_shape().size() != 1 {
            return Err(Error::Shape(format!("discriminator produces {}", net.output_shape())));
        }
        Ok(net)
    }
}

fn check_store(net: &Network, params: &ParameterStore) -> Result<()> {
    let expected = net.init_params(0)?;
    for (name, p) in expected.iter() {
        let got = params.get(name)?;
        if got.shape != p.shape {
            return Err(Error::Shape(format!(
                "parameter `{name}` has shape {}, architecture needs {}",
                got.shape, p.shape
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct GeneratorModel {
    pub arch: GanArch,
    net: Network,
    params: ParameterStore,
}

impl GeneratorModel {
    pub fn new(arch: &GanArch, seed: u64) -> Result<Self> {
        let net = arch.generator_network()?;
        let params = net.init_params(seed)?;
        Ok(Self {
            arch: arch.clone(),
            net,
            params,
        })
    }

    /// Wraps stored parameters (a `gen.*` subset suffices), checking shapes.
    pub fn from_params(arch: &GanArch, params: &ParameterStore) -> Result<Self> {
        let net = arch.generator_network()?;
        let params = params.subset(&format!("{GEN_PREFIX}."));
        check_store(&net, &params)?;
        Ok(Self {
            arch: arch.clone(),
            net,
            params,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    /// One window (`9 x 4`) for latent `z`, with inference-mode batch norm.
    pub fn generate(&self, z: &[f64]) -> Result<Array2<f64>> {
        if z.len() != self.latent_dim() {
            return Err(Error::Shape(format!(
                "latent vector has length {}, generator expects {}",
                z.len(),
                self.latent_dim()
            )));
        }
        let x = ArrayView2::from_shape((1, z.len()), z).expect("row view");
        let out = self.net.forward(&self.params, x, Mode::Infer, None)?.output;
        Ok(out.into_shape_with_order((WINDOW_LEN, N_FEATURES)).expect("window layout"))
    }

    /// Batched inference: `batch x latent_dim` to `batch x 36`.
    pub fn generate_batch(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.net.forward(&self.params, z, Mode::Infer, None)?.output)
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorModel {
    pub arch: GanArch,
    net: Network,
    params: ParameterStore,
}

impl DiscriminatorModel {
    pub fn new(arch: &GanArch, seed: u64) -> Result<Self> {
        let net = arch.discriminator_network()?;
        let params = net.init_params(seed)?;
        Ok(Self {
            arch: arch.clone(),
            net,
            params,
        })
    }

    pub fn from_params(arch: &GanArch, params: &ParameterStore) -> Result<Self> {
        let net = arch.discriminator_network()?;
        let params = params.subset(&format!("{DISC_PREFIX}."));
        check_store(&net, &params)?;
        Ok(Self {
            arch: arch.clone(),
            net,
            params,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    /// Inference-mode logits for a `batch x 36` matrix of windows.
    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        Ok(self.net.forward(&self.params, x, Mode::Infer, None)?.output.into_raw_vec_and_offset().0)
    }

    /// D(x) for one `9 x 4` window.
    pub fn probability(&self, window: ArrayView2<'_, f64>) -> Result<f64> {
        let flat = window.as_standard_layout().into_owned();
        let flat = flat
            .into_shape_with_order((1, WINDOW_LEN * N_FEATURES))
            .map_err(|_| Error::Shape(format!("expected a {WINDOW_LEN}x{N_FEATURES} window")))?;
        Ok(sigmoid_scalar(self.logits(flat.view())?[0]))
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

/// Discriminator cross-entropy from probabilities in (0, 1):
/// `mean(-ln D(x)) + mean(-ln(1 - D(G(z))))`.
pub fn discriminator_loss(d_real: &[f64], d_fake: &[f64]) -> f64 {
    mean(d_real.iter().map(|p| -p.ln())) + mean(d_fake.iter().map(|p| -(-p).ln_1p()))
}

/// Non-saturating generator loss `mean(-ln D(G(z)))`.
pub fn generator_loss(d_fake: &[f64]) -> f64 {
    mean(d_fake.iter().map(|p| -p.ln()))
}

/// [`discriminator_loss`] evaluated on logits: `-ln sigmoid(l) = softplus(-l)`.
pub fn discriminator_loss_logits(real: &[f64], fake: &[f64]) -> f64 {
    mean(real.iter().map(|l| softplus(-l))) + mean(fake.iter().map(|l| softplus(*l)))
}

pub fn generator_loss_logits(fake: &[f64]) -> f64 {
    mean(fake.iter().map(|l| softplus(-l)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl AdamConfig {
    pub fn gan() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
        }
    }

    pub fn build(&self) -> Adam {
        Adam::with_betas(self.lr, self.beta1, self.beta2)
    }
}

/// What one training "epoch" means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochSemantics {
    /// One discriminator and one generator update on a single batch.
    Update,
    /// As many update pairs as whole batches fit in the training set.
    FullPass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub gen_opt: AdamConfig,
    pub disc_opt: AdamConfig,
    pub semantics: EpochSemantics,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50_000,
            batch_size: 32,
            seed: 0,
            gen_opt: AdamConfig::gan(),
            disc_opt: AdamConfig::gan(),
            semantics: EpochSemantics::Update,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedGan {
    pub generator: GeneratorModel,
    pub discriminator: DiscriminatorModel,
    pub history: Vec<LossRecord>,
}

impl TrainedGan {
    /// Both parameter sets in one store (`gen.*` then `disc.*`).
    pub fn parameter_store(&self) -> Result<ParameterStore> {
        let mut store = self.generator.params.clone();
        store.merge(self.discriminator.params.clone())?;
        Ok(store)
    }
}

/// Cycles through shuffled sample indices, reshuffling when fewer than a
/// full batch remain.
struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: Rng,
}

impl BatchSampler {
    fn new(n: usize, rng: Rng) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    fn next(&mut self, batch: usize) -> &[usize] {
        if self.pos + batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += batch;
        &self.order[self.pos - batch..self.pos]
    }
}

fn gaussian_batch(rng: &mut Rng, batch: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((batch, dim), || StandardNormal.sample(rng))
}

pub fn flatten_windows(samples: &[WindowSample], idx: &[usize]) -> Array2<f64> {
    let width = WINDOW_LEN * N_FEATURES;
    let mut out = Array2::zeros((idx.len(), width));
    for (mut row, &i) in out.rows_mut().into_iter().zip(idx) {
        let v = samples[i].values.as_standard_layout();
        row.assign(&ndarray::ArrayView1::from(v.as_slice().expect("contiguous")));
    }
    out
}

/// Alternating 1:1 discriminator/generator training.
///
/// Losses are logged before each pair's updates and averaged per epoch.
pub fn gan_train(samples: &[WindowSample], arch: &GanArch, config: &GanTrainConfig) -> Result<TrainedGan> {
    gan_train_with(samples, arch, config, |_| {})
}

/// [`gan_train`] with a per-epoch observer.
pub fn gan_train_with(
    samples: &[WindowSample],
    arch: &GanArch,
    config: &GanTrainConfig,
    mut on_epoch: impl FnMut(&LossRecord),
) -> Result<TrainedGan> {
    let b = config.batch_size;
    if b < 2 {
        return Err(Error::Parameter(format!("batch_size must be at least 2 for batch norm, got {b}")));
    }
    if samples.len() < b {
        return Err(Error::insufficient("GAN batch", b, samples.len()));
    }
    if let Some(bad) = samples.iter().position(|s| s.values.dim() != (WINDOW_LEN, N_FEATURES)) {
        return Err(Error::Shape(format!(
            "sample {bad} is {:?}, expected {WINDOW_LEN}x{N_FEATURES}",
            samples[bad].values.dim()
        )));
    }
    let seed = config.seed;
    let mut generator = GeneratorModel::new(arch, derive_seed(seed, 1))?;
    let mut discriminator = DiscriminatorModel::new(arch, derive_seed(seed, 2))?;
    let mut latent_rng = rng_from_seed(derive_seed(seed, 3));
    let mut sampler = BatchSampler::new(samples.len(), rng_from_seed(derive_seed(seed, 4)));
    let mut dropout_rng = rng_from_seed(derive_seed(seed, 5));
    let mut g_opt = config.gen_opt.build();
    let mut d_opt = config.disc_opt.build();

    let updates_per_epoch = match config.semantics {
        EpochSemantics::Update => 1,
        EpochSemantics::FullPass => samples.len() / b,
    };
    let (gen_net, disc_net) = (generator.net.clone(), discriminator.net.clone());
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let (mut d_sum, mut g_sum) = (0.0, 0.0);
        for _ in 0..updates_per_epoch {
            let diverged = || Error::Diverged {
                stage: "GAN training".into(),
                index: epoch,
            };
            let numeric = |e: Error| if e.is_numeric() { diverged() } else { e };

            // Discriminator step.
            let real = flatten_windows(samples, sampler.next(b));
            let z = gaussian_batch(&mut latent_rng, b, arch.latent_dim);
            let fake = gen_net
                .forward(&generator.params, z.view(), Mode::Train, None)
                .map_err(numeric)?
                .output;
            let real_pass = disc_net
                .forward(&discriminator.params, real.view(), Mode::Train, Some(&mut dropout_rng))
                .map_err(numeric)?;
            let fake_pass = disc_net
                .forward(&discriminator.params, fake.view(), Mode::Train, Some(&mut dropout_rng))
                .map_err(numeric)?;
            let real_logits = real_pass.output.as_slice().expect("contiguous").to_vec();
            let fake_logits = fake_pass.output.as_slice().expect("contiguous").to_vec();
            let d_loss = discriminator_loss_logits(&real_logits, &fake_logits);
            if !d_loss.is_finite() {
                return Err(diverged());
            }
            let n = b as f64;
            let d_real = real_pass.output.mapv(|l| (sigmoid_scalar(l) - 1.0) / n);
            let d_fake = fake_pass.output.mapv(|l| sigmoid_scalar(l) / n);
            let g_real = disc_net
                .backward(&discriminator.params, &real_pass, d_real.view(), true)
                .map_err(numeric)?;
            let g_fake = disc_net
                .backward(&discriminator.params, &fake_pass, d_fake.view(), true)
                .map_err(numeric)?;
            let mut d_grads = g_real.params;
            d_grads.add_assign(&g_fake.params)?;
            d_opt.apply(&mut discriminator.params, &d_grads).map_err(numeric)?;

            // Generator step through the updated discriminator.
            let z = gaussian_batch(&mut latent_rng, b, arch.latent_dim);
            let g_pass = gen_net
                .forward(&generator.params, z.view(), Mode::Train, None)
                .map_err(numeric)?;
            let d_pass = disc_net
                .forward(&discriminator.params, g_pass.output.view(), Mode::Train, Some(&mut dropout_rng))
                .map_err(numeric)?;
            let logits = d_pass.output.as_slice().expect("contiguous").to_vec();
            let g_loss = generator_loss_logits(&logits);
            if !g_loss.is_finite() {
                return Err(diverged());
            }
            let dl = d_pass.output.mapv(|l| (sigmoid_scalar(l) - 1.0) / n);
            let through_d = disc_net
                .backward(&discriminator.params, &d_pass, dl.view(), false)
                .map_err(numeric)?;
            let g_grads = gen_net
                .backward(&generator.params, &g_pass, through_d.input.view(), true)
                .map_err(numeric)?;
            g_opt.apply(&mut generator.params, &g_grads.params).map_err(numeric)?;
            g_pass.commit_running_stats(&mut generator.params)?;

            d_sum += d_loss;
            g_sum += g_loss;
        }
        let record = LossRecord {
            epoch,
            d_loss: d_sum / updates_per_epoch as f64,
            g_loss: g_sum / updates_per_epoch as f64,
        };
        on_epoch(&record);
        history.push(record);
    }
    Ok(TrainedGan {
        generator,
        discriminator,
        history,
    })
}

pub fn write_loss_history(path: &Path, history: &[LossRecord]) -> Result<()> {
    let mut out = String::from("epoch,d_loss,g_loss\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.d_loss, r.g_loss));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn tiny() -> GanArch {
        GanArch {
            latent_dim: 6,
            dense_channels: 4,
            gen_channels: [4, 3],
            disc_channels: [3, 4],
            ..GanArch::default()
        }
    }

    #[test]
    fn paper_widths_compose_to_window_shapes() {
        let arch = GanArch::default();
        let gen = arch.generator_network().unwrap();
        let dims: Vec<String> = gen.layer_shapes().iter().map(|s| s.to_string()).collect();
        assert_eq!(dims[0], "5120");
        assert_eq!(dims[3], "5x4x256");
        assert_eq!(dims[4], "5x4x128");
        assert_eq!(dims[7], "5x4x64");
        assert_eq!(dims[10], "9x4x1");
        let disc = arch.discriminator_network().unwrap();
        let dims: Vec<String> = disc.layer_shapes().iter().map(|s| s.to_string()).collect();
        assert_eq!(dims[0], "5x4x64");
        assert_eq!(dims[3], "5x4x128");
        assert_eq!(dims.last().unwrap(), "1");
    }

    #[test]
    fn loss_identities() {
        let ln2 = std::f64::consts::LN_2;
        assert!((discriminator_loss(&[0.5], &[0.5]) - 2.0 * ln2).abs() < 1e-12);
        assert!((discriminator_loss(&[0.9], &[0.1]) - 0.210_721_031_315_652_6).abs() < 1e-9);
        assert!(discriminator_loss(&[1.0 - 1e-12], &[1e-12]) < 1e-11);
        assert!((generator_loss(&[0.5]) - ln2).abs() < 1e-12);
        assert!((generator_loss(&[0.25]) - 2.0 * ln2).abs() < 1e-12);
        assert!(generator_loss(&[1.0 - 1e-12]) < 1e-11);
    }

    #[test]
    fn logit_losses_agree_with_probability_form() {
        let mut rng = rng_from_seed(3);
        for _ in 0..200 {
            let (a, b): (f64, f64) = (rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
            let (pa, pb) = (sigmoid_scalar(a), sigmoid_scalar(b));
            assert!((discriminator_loss_logits(&[a], &[b]) - discriminator_loss(&[pa], &[pb])).abs() < 1e-9);
            assert!((generator_loss_logits(&[b]) - generator_loss(&[pb])).abs() < 1e-9);
        }
        assert!(discriminator_loss_logits(&[-800.0], &[800.0]).is_finite());
    }

    #[test]
    fn zero_epochs_keep_initialisation() {
        let samples: Vec<WindowSample> = (0..4)
            .map(|i| WindowSample {
                values: Array2::from_elem((WINDOW_LEN, N_FEATURES), 0.1 * i as f64),
                start_index: i,
            })
            .collect();
        let cfg = GanTrainConfig {
            epochs: 0,
            batch_size: 2,
            seed: 11,
            ..GanTrainConfig::default()
        };
        let trained = gan_train(&samples, &tiny(), &cfg).unwrap();
        let fresh = GeneratorModel::new(&tiny(), derive_seed(11, 1)).unwrap();
        assert_eq!(trained.generator.params(), fresh.params());
        assert!(trained.history.is_empty());
    }

    #[test]
    fn generate_checks_latent_length() {
        let g = GeneratorModel::new(&tiny(), 0).unwrap();
        assert!(matches!(g.generate(&[0.0; 5]), Err(Error::Shape(_))));
        let w = g.generate(&[0.3; 6]).unwrap();
        assert_eq!(w.dim(), (WINDOW_LEN, N_FEATURES));
        assert!(w.iter().all(|v| v.abs() < 1.0));
        assert_eq!(w, g.generate(&[0.3; 6]).unwrap());
    }

    #[test]
    fn batch_size_validation() {
        let samples = vec![WindowSample {
            values: Array2::zeros((WINDOW_LEN, N_FEATURES)),
            start_index: 0,
        }];
        let cfg = GanTrainConfig {
            epochs: 1,
            batch_size: 2,
            ..GanTrainConfig::default()
        };
        assert!(matches!(
            gan_train(&samples, &tiny(), &cfg),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn stored_params_round_trip_through_models() {
        let arch = tiny();
        let g = GeneratorModel::new(&arch, 1).unwrap();
        let d = DiscriminatorModel::new(&arch, 2).unwrap();
        let trained = TrainedGan {
            generator: g.clone(),
            discriminator: d,
            history: vec![],
        };
        let store = trained.parameter_store().unwrap();
        let back = GeneratorModel::from_params(&arch, &store).unwrap();
        assert_eq!(back.params(), g.params());
        let wider = GanArch {
            dense_channels: 5,
            ..arch
        };
        assert!(GeneratorModel::from_params(&wider, &store).is_err());
    }
}
