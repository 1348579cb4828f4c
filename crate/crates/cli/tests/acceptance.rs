//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs with `cargo test -p forecaster --test acceptance`. Set
//! `ACCEPTANCE_ONLY=1,4,9` to run a subset, and `FORECASTER_TELEMETRY` to
//! point at the reference telemetry CSV (default `data/PdM_telemetry.csv`;
//! a synthetic stand-in is used when neither exists).

use std::cell::RefCell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use forecaster::config::RunConfig;
use forecaster_core::bilstm::{
    bilstm_train, lstm_cell_step, make_pairs, BiLstmArch, BiLstmModel, CellActivation, TrainedBiLstm,
};
use forecaster_core::data::{
    load_telemetry, make_windows, prepare, FeatureFrame, FrameOrigin, PreparedData, StageOrder, TelemetryRecord,
};
use forecaster_core::eval::{ar_fit, ar_forecast, mean_forecast, rmse};
use forecaster_core::gan::{
    discriminator_loss, gan_train, generator_loss, DiscriminatorModel, GanArch, GeneratorModel, TrainedGan,
};
use forecaster_core::interleave::{
    forecast, to_physical, InterleaveConfig, PredictiveGan, TrainTail, WindowForecaster, WindowModel,
};
use forecaster_core::neural::gradcheck::{check_network, relative_error, FD_STEP};
use forecaster_core::neural::layers::{conv2d_forward, conv2d_transpose_forward};
use forecaster_core::neural::{LayerSpec, Mode, Network, ParameterStore, Shape};
use forecaster_core::predictive::{
    optimize_latent, predict_windows, FeatureWeights, LatentGenerator, LatentOptConfig, LinearGenerator,
};
use forecaster_core::rng::{rng_from_seed, Rng};
use forecaster_core::synthetic::{telemetry_stand_in, TELEMETRY_ROWS};
use nalgebra::{DMatrix, DVector};
use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView2, Axis};
use rand::Rng as _;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const PAPER_RMSE: [(&str, f64); 3] = [("arima", 7.469), ("bilstm_to_predgan", 13.076), ("predgan_to_bilstm", 9.532)];

struct Verdict {
    pass: bool,
    detail: String,
    /// Judged on stand-in data, so a failure is reported but not fatal.
    advisory: bool,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
        advisory: false,
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------- criterion 1

fn shape(d: &[usize]) -> Shape {
    Shape::new(d.to_vec()).unwrap()
}

fn perturbed_params(net: &Network, seed: u64, rng: &mut Rng) -> ParameterStore {
    let mut p = net.init_params(seed).unwrap();
    let names: Vec<String> = p.names().map(String::from).collect();
    for name in names {
        let values = &mut p.get_mut(&name).unwrap().values;
        if name.ends_with(".bias") || name.ends_with(".beta") || name.ends_with(".gamma") {
            values.iter_mut().for_each(|v| *v += rng.random_range(-0.5..0.5));
        }
        if name.ends_with(".running_var") {
            values.iter_mut().for_each(|v| *v = rng.random_range(0.5..2.0));
        }
    }
    p
}

/// Worst relative error over random single-layer instances of every kind.
fn layer_sweep() -> f64 {
    let mut rng = rng_from_seed(101);
    let mut worst: f64 = 0.0;
    for trial in 0..30u64 {
        let (h, w, c) = (rng.random_range(3..6), rng.random_range(3..5), rng.random_range(1..3));
        let stride = (rng.random_range(1..3), rng.random_range(1..3));
        let len = rng.random_range(2..8);
        let cases: Vec<(Vec<usize>, LayerSpec, Mode)> = vec![
            (vec![len], LayerSpec::Dense { units: rng.random_range(1..5) }, Mode::Train),
            (
                vec![h, w, c],
                LayerSpec::Conv2d {
                    filters: rng.random_range(1..4),
                    kernel: (3, 3),
                    stride,
                    padding: (1, 1),
                },
                Mode::Train,
            ),
            (
                vec![h, w, c],
                LayerSpec::Conv2dTranspose {
                    filters: rng.random_range(1..4),
                    kernel: (3, 3),
                    stride,
                    padding: (1, 1),
                },
                Mode::Train,
            ),
            (vec![h, w, c], LayerSpec::BatchNorm { momentum: 0.99, eps: 1e-5 }, Mode::Train),
            (vec![len], LayerSpec::BatchNorm { momentum: 0.99, eps: 1e-5 }, Mode::Infer),
            (vec![len], LayerSpec::Tanh, Mode::Train),
            (vec![len], LayerSpec::Sigmoid, Mode::Train),
            (vec![len], LayerSpec::Dropout { rate: 0.3 }, Mode::Train),
            (vec![h, w, c], LayerSpec::Flatten, Mode::Train),
        ];
        for (dims, spec, mode) in cases {
            let size: usize = dims.iter().product();
            let net = Network::new("l", shape(&dims), vec![spec]).unwrap();
            let params = perturbed_params(&net, trial, &mut rng);
            let x = Array2::from_shape_fn((3, size), |_| rng.random_range(-1.5..1.5));
            let r = check_network(&net, &params, x.view(), mode, trial, None, trial + 7).unwrap();
            worst = worst.max(r.max_rel_error);
        }
        // Leaky ReLU away from its kink.
        let net = Network::new("k", shape(&[len]), vec![LayerSpec::LeakyRelu { slope: 0.3 }]).unwrap();
        let x = Array2::from_shape_fn((2, len), |_| {
            let m: f64 = rng.random_range(0.01..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        });
        let r = check_network(&net, &net.init_params(0).unwrap(), x.view(), Mode::Train, 0, None, trial).unwrap();
        worst = worst.max(r.max_rel_error);
    }
    worst
}

fn random3(rng: &mut Rng, d: (usize, usize, usize)) -> Array3<f64> {
    Array3::from_shape_fn(d, |_| rng.random_range(-1.0..1.0))
}

/// Worst `|<conv x, y> - <x, convT y>|` over shapes that round-trip exactly.
fn adjoint_gap() -> f64 {
    let mut rng = rng_from_seed(102);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let k: (usize, usize) = (rng.random_range(1..4), rng.random_range(1..4));
        let st = (rng.random_range(1..3), rng.random_range(1..3));
        let pad = (rng.random_range(0..k.0.div_ceil(2)), rng.random_range(0..k.1.div_ceil(2)));
        let h = st.0 * rng.random_range(1..4) + k.0 - 2 * pad.0;
        let w = st.1 * rng.random_range(1..4) + k.1 - 2 * pad.1;
        let (c_in, c_out) = (rng.random_range(1..4), rng.random_range(1..4));
        let x = random3(&mut rng, (h, w, c_in));
        let kern = Array4::from_shape_fn((k.0, k.1, c_in, c_out), |_| rng.random_range(-1.0..1.0));
        let fx = conv2d_forward(&x, &kern, st, pad).unwrap();
        let y = random3(&mut rng, fx.dim());
        let back = conv2d_transpose_forward(&y, &kern, st, pad).unwrap();
        assert_eq!(back.dim(), x.dim());
        worst = worst.max(((&fx * &y).sum() - (&x * &back).sum()).abs());
    }
    worst
}

fn randomized_bilstm(rng: &mut Rng, arch: &BiLstmArch, scale: f64) -> BiLstmModel {
    let mut model = BiLstmModel::new(arch, rng.random()).unwrap();
    let names: Vec<String> = model.params().names().map(String::from).collect();
    for n in names {
        for v in &mut model.params_mut().get_mut(&n).unwrap().values {
            *v = rng.random_range(-scale..scale);
        }
    }
    model
}

/// Worst relative error of a 9-step BiLSTM rollout over all parameters and
/// inputs, loss `sum(r * y)`.
fn bilstm_rollout_error() -> f64 {
    let mut rng = rng_from_seed(103);
    let arch = BiLstmArch {
        hidden_size: 4,
        ..BiLstmArch::default()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let model = randomized_bilstm(&mut rng, &arch, 0.8);
        let window = Array2::from_shape_fn((9, 4), |_| rng.random_range(-1.0..1.0));
        let r = Array2::from_shape_fn((9, 4), |_| rng.random_range(-1.0..1.0));
        let f = |m: &BiLstmModel, w: ArrayView2<'_, f64>| (&m.forward(w).unwrap() * &r).sum();
        let pass = model.forward_batch(&[window.view()]).unwrap();
        let d_out: Vec<Array2<f64>> = (0..9).map(|t| r.row(t).to_owned().insert_axis(Axis(0))).collect();
        let grads = model.backward(&pass, &d_out).unwrap();
        for (name, g) in grads.params.iter() {
            for i in 0..g.len() {
                let (mut up, mut down) = (model.clone(), model.clone());
                up.params_mut().get_mut(name).unwrap().values[i] += FD_STEP;
                down.params_mut().get_mut(name).unwrap().values[i] -= FD_STEP;
                let numeric = (f(&up, window.view()) - f(&down, window.view())) / (2.0 * FD_STEP);
                worst = worst.max(relative_error(g[i], numeric));
            }
        }
        for ((t, j), _) in window.indexed_iter() {
            let (mut up, mut down) = (window.clone(), window.clone());
            up[[t, j]] += FD_STEP;
            down[[t, j]] -= FD_STEP;
            let numeric = (f(&model, up.view()) - f(&model, down.view())) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grads.inputs[t][[0, j]], numeric));
        }
    }
    worst
}

/// Every coordinate of a narrow full generator and discriminator.
fn full_gan_error() -> f64 {
    let arch = GanArch {
        latent_dim: 8,
        dense_channels: 4,
        gen_channels: [3, 2],
        disc_channels: [2, 3],
        ..GanArch::default()
    };
    let mut rng = rng_from_seed(104);
    let mut worst: f64 = 0.0;
    let gen = GeneratorModel::new(&arch, 5).unwrap();
    for mode in [Mode::Train, Mode::Infer] {
        let z = Array2::from_shape_fn((3, 8), |_| rng.random_range(-1.5..1.5));
        let r = check_network(gen.network(), gen.params(), z.view(), mode, 1, None, 2).unwrap();
        worst = worst.max(r.max_rel_error);
    }
    let disc = DiscriminatorModel::new(&arch, 6).unwrap();
    let x = Array2::from_shape_fn((3, 36), |_| rng.random_range(-0.9..0.9));
    let r = check_network(disc.network(), disc.params(), x.view(), Mode::Train, 3, None, 4).unwrap();
    worst.max(r.max_rel_error)
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let layers = layer_sweep();
    let adjoint = adjoint_gap();
    let bilstm = bilstm_rollout_error();
    let gan = full_gan_error();
    let secs = t.elapsed().as_secs_f64();
    verdict(
        layers < 1e-4 && adjoint < 1e-10 && bilstm < 1e-3 && gan < 1e-3 && secs < 120.0,
        format!(
            "layers {layers:.2e} (<1e-4), adjoint {adjoint:.2e} (<1e-10), 9-step BiLSTM {bilstm:.2e} (<1e-3), \
             full GAN {gan:.2e} (<1e-3), {secs:.1}s (<120s)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Peephole cell evaluated scalar by scalar from named parameters.
fn reference_cell(
    store: &ParameterStore,
    dir: &str,
    hidden: usize,
    x: &[f64],
    m_prev: &[f64],
    c_prev: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let p = |n: &str| store.get(&format!("bilstm.{dir}.{n}")).unwrap().values.clone();
    let affine = |g: char, j: usize| {
        let (wx, wm, b) = (p(&format!("w_{g}x")), p(&format!("w_{g}m")), p(&format!("b_{g}")));
        let mut acc = b[j];
        for (k, v) in x.iter().enumerate() {
            acc += wx[j * x.len() + k] * v;
        }
        for (k, v) in m_prev.iter().enumerate() {
            acc += wm[j * hidden + k] * v;
        }
        acc
    };
    let (w_ic, w_fc, w_oc) = (p("w_ic"), p("w_fc"), p("w_oc"));
    let mut m = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    for j in 0..hidden {
        let i = sig(affine('i', j) + w_ic[j] * c_prev[j]);
        let f = sig(affine('f', j) + w_fc[j] * c_prev[j]);
        c[j] = f * c_prev[j] + i * affine('c', j).tanh();
        let o = sig(affine('o', j) + w_oc[j] * c_prev[j]);
        m[j] = o * c[j].tanh();
    }
    (m, c)
}

fn criterion_2() -> Verdict {
    let d_half = discriminator_loss(&[0.5], &[0.5]);
    let d_skew = discriminator_loss(&[0.9], &[0.1]);
    let g_half = generator_loss(&[0.5]);
    let g_quarter = generator_loss(&[0.25]);
    let loss_gap = [
        (d_half - 1.386294361119891).abs(),
        (d_skew - 0.2107210313156526).abs(),
        (g_half - std::f64::consts::LN_2).abs(),
        (g_quarter - 4f64.ln()).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    let mut rng = rng_from_seed(201);
    let mut cell_gap: f64 = 0.0;
    for _ in 0..1000 {
        let (hidden, input) = (rng.random_range(1..6), rng.random_range(1..5));
        let arch = BiLstmArch {
            hidden_size: hidden,
            n_features: input,
            ..BiLstmArch::default()
        };
        let model = randomized_bilstm(&mut rng, &arch, 1.5);
        let x: Vec<f64> = (0..input).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m0: Vec<f64> = (0..hidden).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c0: Vec<f64> = (0..hidden).map(|_| rng.random_range(-3.0..3.0)).collect();
        for (d, dir) in ["fwd", "bwd"].iter().enumerate() {
            let (m, c) = lstm_cell_step(
                Array1::from(x.clone()).view(),
                Array1::from(m0.clone()).view(),
                Array1::from(c0.clone()).view(),
                &model.cell(d).unwrap(),
                CellActivation::Tanh,
                CellActivation::Tanh,
            )
            .unwrap();
            let (rm, rc) = reference_cell(model.params(), dir, hidden, &x, &m0, &c0);
            for j in 0..hidden {
                cell_gap = cell_gap.max((m[j] - rm[j]).abs()).max((c[j] - rc[j]).abs());
            }
        }
    }
    verdict(
        loss_gap < 1e-9 && cell_gap < 1e-12,
        format!(
            "D loss {d_half:.6} @0.5, {d_skew:.6} @0.9/0.1, G loss {g_half:.6} @0.5, {g_quarter:.6} @0.25, max gap {loss_gap:.1e} (<1e-9); \
             cell vs scalar reference {cell_gap:.1e} over 1000 instances (<1e-12)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Verdict {
    let t = Instant::now();
    let (n, m, latent) = (9, 4, 10);
    let cfg = LatentOptConfig {
        iterations: 10_000,
        seed: 3,
        ..LatentOptConfig::default()
    };
    let mut worst_gap: f64 = 0.0;
    let mut worst_planted: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = rng_from_seed(300 + seed);
        let a = Array2::from_shape_fn((n * m, latent), |_| rng.random_range(-0.5..0.5));
        let gen = LinearGenerator::new(a.clone(), n, m).unwrap();
        let known = Array2::from_shape_fn((n - 1, m), |_| rng.random_range(-1.0..1.0));
        // Closed-form least squares on the first n - 1 rows via QR.
        let rows = (n - 1) * m;
        let am = DMatrix::from_fn(rows, latent, |i, j| a[[i, j]]);
        let y = DVector::from_iterator(rows, known.iter().copied());
        let qr = am.clone().qr();
        let z = qr.r().solve_upper_triangular(&(qr.q().transpose() * &y)).unwrap();
        let residual = (&am * z - &y).norm_squared() / rows as f64;
        let res = optimize_latent(&gen, known.view(), &FeatureWeights::ones(m), &cfg, None).unwrap();
        worst_gap = worst_gap.max((res.loss - residual).abs());

        let z_true: Vec<f64> = (0..latent).map(|_| rng.random_range(-1.0..1.0)).collect();
        let window = gen.generate(&z_true).unwrap();
        let planted = window.slice(s![..n - 1, ..]).to_owned();
        let res = optimize_latent(&gen, planted.view(), &FeatureWeights::ones(m), &cfg, None).unwrap();
        worst_planted = worst_planted.max(res.loss);
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst_gap < 1e-3 && worst_planted < 1e-4 && secs < 60.0,
        format!(
            "residual gap {worst_gap:.2e} (<1e-3), planted loss {worst_planted:.2e} (<1e-4), {secs:.1}s (<60s)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 4

struct TapBilstm {
    seen: RefCell<Vec<(Array2<f64>, Array2<f64>)>>,
}

impl WindowModel for TapBilstm {
    fn predict(&self, window: ArrayView2<'_, f64>) -> forecaster_core::Result<Array2<f64>> {
        let k = self.seen.borrow().len() as f64;
        let out = window.mapv(|v| (0.6 * v + 0.05 * k).cos());
        self.seen.borrow_mut().push((window.to_owned(), out.clone()));
        Ok(out)
    }
}

struct TapPgan {
    seen: RefCell<Vec<(Array2<f64>, Array2<f64>)>>,
}

impl WindowForecaster for TapPgan {
    fn window_len(&self) -> usize {
        9
    }

    fn forecast_window(&self, rows: ArrayView2<'_, f64>, seed: u64) -> forecaster_core::Result<Array2<f64>> {
        let out = Array2::from_shape_fn((9, rows.ncols()), |(t, j)| {
            (rows[[t.min(7), j]] * 1.1 + (seed % 97) as f64 * 1e-3 + t as f64 * 1e-2).sin()
        });
        self.seen.borrow_mut().push((rows.to_owned(), out.clone()));
        Ok(out)
    }
}

fn criterion_4() -> Verdict {
    let rows = Array2::from_shape_fn((30, 4), |(t, j)| ((t as f64) * 0.41 + j as f64).sin());
    let frame = FeatureFrame::telemetry(rows, FrameOrigin::Scaled).unwrap();
    let tail = TrainTail::from_frame(&frame, 9).unwrap();
    let bilstm = TapBilstm {
        seen: RefCell::new(Vec::new()),
    };
    let pgan = TapPgan {
        seen: RefCell::new(Vec::new()),
    };
    let cfg = InterleaveConfig {
        horizon_windows: 5,
        seed: 41,
    };
    let (primary, secondary) = forecast(&pgan, &bilstm, &tail, &cfg).unwrap();
    let (b, p) = (bilstm.seen.borrow(), pgan.seen.borrow());
    let last = frame.rows().slice(s![21.., ..]).to_owned();
    let mut ok = b.len() == 5 && p.len() == 5;
    ok &= b[0].0 == last && p[0].0 == last.slice(s![1.., ..]);
    for k in 1..5 {
        ok &= b[k].0 == p[k - 1].1;
        ok &= p[k].0 == b[k - 1].1.slice(s![1.., ..]);
    }
    ok &= primary.windows.iter().zip(b.iter()).all(|(w, (_, out))| w == out);
    ok &= secondary.windows.iter().zip(p.iter()).all(|(w, (_, out))| w == out);
    ok &= primary.n_rows() == 45;
    verdict(ok, "t=5: BiLSTM k reads PredGAN k-1, PredGAN k reads last 8 rows of BiLSTM k-1, bit-exact")
}

// ---------------------------------------------------------------- criteria 5, 7

/// Records, a description of their source, and whether they are the real corpus.
fn telemetry_records() -> (Vec<TelemetryRecord>, String, bool) {
    let path = std::env::var_os("FORECASTER_TELEMETRY")
        .map(PathBuf::from)
        .unwrap_or_else(|| workspace().join("data/PdM_telemetry.csv"));
    if path.is_file() {
        let recs = load_telemetry(&path).unwrap();
        (recs, format!("reference CSV {}", path.display()), true)
    } else {
        (
            telemetry_stand_in(3, TELEMETRY_ROWS, 7),
            "synthetic stand-in (reference CSV not present)".to_string(),
            false,
        )
    }
}

fn criterion_5(records: &[TelemetryRecord], source: &str) -> Verdict {
    let cfg = RunConfig::default().pipeline();
    let counts = prepare(records, &cfg).unwrap().stage_counts();
    // Neither disclosed ordering reaches 2914.
    let swapped = prepare(
        records,
        &forecaster_core::data::PipelineConfig {
            order: StageOrder::FuseThenSmooth,
            ..cfg.clone()
        },
    )
    .unwrap()
    .stage_counts();
    verdict(
        counts == [8760, 8737, 2912, 2038, 874] && swapped[2] != 2914,
        format!(
            "{} -> {} -> {} -> {}/{} on {source}; fuse-then-smooth gives {}, neither is 2914",
            counts[0], counts[1], counts[2], counts[3], counts[4], swapped[2]
        ),
    )
}

struct Trained {
    gan: TrainedGan,
    bilstm: TrainedBiLstm,
}

fn train_models(cfg: &RunConfig, data: &PreparedData) -> Trained {
    let samples = make_windows(&data.train_scaled, cfg.window_len, 1).unwrap();
    let gan = gan_train(&samples, &cfg.gan_arch(), &cfg.gan_train()).unwrap();
    let pairs = make_pairs(data.train_scaled.rows(), cfg.window_len, 1).unwrap();
    let bilstm = bilstm_train(&pairs, &cfg.bilstm_arch(), &cfg.bilstm_train()).unwrap();
    Trained { gan, bilstm }
}

/// Physical-scale `(predgan_to_bilstm, bilstm_to_predgan)` rows.
fn interleaved(cfg: &RunConfig, data: &PreparedData, models: &Trained) -> (Array2<f64>, Array2<f64>) {
    let pgan = PredictiveGan {
        generator: &models.gan.generator,
        weights: FeatureWeights::ones(4),
        config: cfg.latent(),
    };
    let tail = TrainTail::from_frame(&data.train_scaled, cfg.window_len).unwrap();
    let icfg = InterleaveConfig {
        horizon_windows: cfg.horizon_windows,
        seed: cfg.seed,
    };
    let (p2b, b2p) = forecast(&pgan, &models.bilstm.model, &tail, &icfg).unwrap();
    (
        to_physical(&p2b, &data.scaler).unwrap().rows(),
        to_physical(&b2p, &data.scaler).unwrap().rows(),
    )
}

fn load_config(name: &str, overrides: &[String]) -> RunConfig {
    let mut cfg = RunConfig::load(&workspace().join("configs").join(name)).unwrap();
    for o in overrides {
        cfg.apply_override(o).unwrap();
    }
    cfg.validate().unwrap();
    cfg
}

fn criterion_7(records: &[TelemetryRecord], source: &str) -> Verdict {
    let t = Instant::now();
    let mut averages: Vec<[f64; 3]> = Vec::new();
    for seed in SEEDS {
        let cfg = load_config("telemetry.conf", &[format!("seed={seed}")]);
        let data = prepare(records, &cfg.pipeline()).unwrap();
        let models = train_models(&cfg, &data);
        let (p2b, b2p) = interleaved(&cfg, &data, &models);
        let k = p2b.nrows().min(data.test.len());
        let actual = data.test.rows().slice(s![..k, ..]).to_owned();
        let arima = ar_forecast(&ar_fit(data.train.rows(), cfg.ar_p, cfg.ar_d).unwrap(), k);
        let avg = |f: ArrayView2<'_, f64>| mean(&rmse(f, actual.view()).unwrap());
        averages.push([
            avg(arima.view()),
            avg(b2p.slice(s![..k, ..])),
            avg(p2b.slice(s![..k, ..])),
        ]);
    }
    let med: Vec<f64> = (0..3).map(|i| median(averages.iter().map(|a| a[i]).collect())).collect();
    let ours = PAPER_RMSE
        .iter()
        .zip(&med)
        .map(|((name, paper), v)| format!("{name} {v:.3} (paper {paper:.3})"))
        .collect::<Vec<_>>()
        .join(", ");
    let per_seed = averages
        .iter()
        .map(|a| format!("{:.2}/{:.2}", a[2], a[1]))
        .collect::<Vec<_>>()
        .join(" ");
    verdict(
        med[2] <= med[1],
        format!(
            "median average RMSE over 5 seeds: {ours}; predgan_to_bilstm <= bilstm_to_predgan required; \
             per seed p2b/b2p [{per_seed}]; {source}; {:.0}s",
            t.elapsed().as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criteria 6, 8

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for item in idx.iter().take(j + 1).skip(i) {
            r[*item] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(y: &[f64]) -> f64 {
    let x: Vec<f64> = (0..y.len()).map(|i| i as f64).collect();
    let (rx, ry) = (ranks(&x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

const DEGRADATION_WINDOWS: usize = 6;

fn smoke_criteria() -> (Verdict, Verdict) {
    let t = Instant::now();
    let records = load_telemetry(&workspace().join("data/smoke.csv")).unwrap();
    let mut p2b_rmse: Vec<Vec<f64>> = Vec::new();
    let mut baseline = Vec::new();
    let mut rhos = Vec::new();
    let mut curves = Vec::new();
    let mut secs_6 = 0.0;
    for seed in SEEDS {
        let t6 = Instant::now();
        let cfg = load_config(
            "smoke.conf",
            &[
                format!("seed={seed}"),
                "gan_epochs=5000".into(),
                "bilstm_epochs=100".into(),
                "latent_iterations=2000".into(),
                "horizon_windows=3".into(),
            ],
        );
        let data = prepare(&records, &cfg.pipeline()).unwrap();
        let models = train_models(&cfg, &data);
        let (p2b, _) = interleaved(&cfg, &data, &models);
        let k = p2b.nrows();
        let actual = data.test.rows().slice(s![..k, ..]).to_owned();
        p2b_rmse.push(rmse(p2b.view(), actual.view()).unwrap());
        baseline = rmse(mean_forecast(data.train.rows(), k).unwrap().view(), actual.view()).unwrap();
        secs_6 += t6.elapsed().as_secs_f64();

        // PredGAN alone, chained well past one window.
        let train = data.train_scaled.rows();
        let seed_rows = train.slice(s![train.nrows() - (cfg.window_len - 1).., ..]);
        let windows = predict_windows(
            &models.gan.generator,
            seed_rows,
            DEGRADATION_WINDOWS,
            &FeatureWeights::ones(4),
            &cfg.latent(),
        )
        .unwrap();
        let test = data.test_scaled.rows();
        let curve: Vec<f64> = windows
            .iter()
            .enumerate()
            .map(|(w, win)| {
                let act = test.slice(s![w * cfg.window_len..(w + 1) * cfg.window_len, ..]);
                mean(&rmse(win.view(), act).unwrap())
            })
            .collect();
        rhos.push(spearman(&curve));
        curves.push(curve);
    }
    let med: Vec<f64> = (0..4).map(|j| median(p2b_rmse.iter().map(|r| r[j]).collect())).collect();
    let wins = med.iter().zip(&baseline).filter(|(a, b)| a < b).count();
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ");
    let c6 = verdict(
        wins >= 3 && secs_6 < 900.0,
        format!(
            "median predgan_to_bilstm RMSE [{}] vs mean baseline [{}]: {wins}/4 below (>=3), {secs_6:.0}s (<900s)",
            fmt(&med),
            fmt(&baseline)
        ),
    );
    let rho = median(rhos.clone());
    let median_curve: Vec<f64> = (0..DEGRADATION_WINDOWS)
        .map(|w| median(curves.iter().map(|c| c[w]).collect()))
        .collect();
    let c8 = verdict(
        rho > 0.0,
        format!(
            "{DEGRADATION_WINDOWS} PredGAN-only windows, Spearman per seed [{}], median {rho:.3} (>0); \
             median window RMSE [{}]; {:.0}s total",
            fmt(&rhos),
            fmt(&median_curve),
            t.elapsed().as_secs_f64()
        ),
    );
    (c6, c8)
}

// ---------------------------------------------------------------- criterion 9

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn criterion_9() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let config = workspace().join("configs/smoke.conf");
    let data = workspace().join("data/smoke.csv");
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        for cmd in ["ingest", "train-gan", "train-bilstm", "train", "forecast", "evaluate", "plot"] {
            let status = Command::new(env!("CARGO_BIN_EXE_forecaster"))
                .arg(cmd)
                .arg("--config")
                .arg(&config)
                .arg("--out")
                .arg(&out)
                .arg(format!("data={}", data.display()))
                .output()
                .unwrap();
            if !status.status.success() {
                return verdict(
                    false,
                    format!("`{cmd}` failed: {}", String::from_utf8_lossy(&status.stderr)),
                );
            }
        }
        runs.push(snapshot(&out));
    }
    let differing: Vec<&str> = runs[0]
        .iter()
        .zip(&runs[1])
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0.as_str())
        .collect();
    verdict(
        differing.is_empty() && runs[0].len() == runs[1].len(),
        format!("{} artifacts from every command, differing: {differing:?}", runs[0].len()),
    )
}

// ----------------------------------------------------------------------------

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    let wanted = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));
    let (records, source, real) = if wanted(5) || wanted(7) {
        telemetry_records()
    } else {
        (Vec::new(), String::new(), false)
    };

    let mut results: Vec<(u32, &str, Verdict, f64)> = Vec::new();
    let mut run = |id: u32, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        if !wanted(id) {
            return;
        }
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        let status = match (v.pass, v.advisory) {
            (true, _) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (advisory: stand-in data)",
        };
        println!("criterion {id} [{name}] {status} ({secs:.1}s): {}", v.detail);
        results.push((id, name, v, secs));
    };
    run(1, "numeric core gradients", &mut criterion_1);
    run(2, "loss and cell conformance", &mut criterion_2);
    run(3, "latent optimization oracle", &mut criterion_3);
    run(4, "interleave wiring", &mut criterion_4);
    run(5, "pipeline arithmetic", &mut || criterion_5(&records, &source));
    let smoke = if wanted(6) || wanted(8) {
        Some(catch_unwind(smoke_criteria))
    } else {
        None
    };
    let smoke_part = |which: usize| -> Verdict {
        match &smoke {
            Some(Ok((c6, c8))) => {
                let v = if which == 6 { c6 } else { c8 };
                verdict(v.pass, v.detail.clone())
            }
            _ => verdict(false, "smoke run panicked"),
        }
    };
    run(6, "smoke end-to-end vs mean baseline", &mut || smoke_part(6));
    run(7, "telemetry path ordering", &mut || {
        let mut v = criterion_7(&records, &source);
        // The ordering claim is about the reference corpus; a stand-in
        // result is informative only.
        v.advisory = !real;
        v
    });
    run(8, "PredGAN-only degradation", &mut || smoke_part(8));
    run(9, "CLI determinism", &mut criterion_9);

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    let fatal: Vec<u32> = results.iter().filter(|r| !r.2.pass && !r.2.advisory).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if failed.len() > fatal.len() {
        println!("failed on stand-in data only: {:?}", failed.iter().filter(|i| !fatal.contains(i)).collect::<Vec<_>>());
    }
    if !fatal.is_empty() {
        println!("failed: {fatal:?}");
        std::process::exit(1);
    }
}
