use std::fmt::Write as _;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use forecaster_core::bilstm::{bilstm_train, make_pairs, write_history, BiLstmModel};
use forecaster_core::data::{
    load_telemetry, make_windows, prepare, FeatureFrame, FrameOrigin, Scaler, FEATURE_NAMES, N_FEATURES,
};
use forecaster_core::eval::{ar_fit, ar_forecast, evaluate, write_plot_csv};
use forecaster_core::gan::{gan_train, write_loss_history, GeneratorModel};
use forecaster_core::interleave::{
    forecast, read_series_csv, to_physical, write_series_csv, InterleaveConfig, PredictiveGan, SeriesPath, TrainTail,
};
use forecaster_core::neural::ParameterStore;
use forecaster_core::predictive::FeatureWeights;
use forecaster_core::{Error, Result};
use ndarray::{s, Array2};
use sha2::{Digest, Sha256};

use crate::config::{hex, RunConfig};
use crate::svg;

pub const SCALER: &str = "scaler.csv";
pub const TRAIN: &str = "train.csv";
pub const TEST: &str = "test.csv";
pub const TRAIN_SCALED: &str = "train_scaled.csv";
pub const TEST_SCALED: &str = "test_scaled.csv";
pub const GENERATOR: &str = "generator.pgf";
pub const DISCRIMINATOR: &str = "discriminator.pgf";
pub const BILSTM: &str = "bilstm.pgf";
pub const GAN_HISTORY: &str = "gan_history.csv";
pub const BILSTM_HISTORY: &str = "bilstm_history.csv";
pub const RMSE_TEXT: &str = "rmse.txt";
pub const RMSE_CSV: &str = "rmse.csv";
pub const ARIMA: &str = "arima";

pub fn forecast_file(path: SeriesPath) -> String {
    format!("forecast_{}.csv", path.as_str())
}

pub fn plot_data_file(feature: &str) -> String {
    format!("plot_{feature}.csv")
}

pub fn plot_file(feature: &str) -> String {
    format!("plot_{feature}.svg")
}

fn feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Fails with a hint naming the command that produces `name`.
fn require(dir: &Path, name: &str, producer: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Io {
            path,
            source: std::io::Error::new(ErrorKind::NotFound, format!("missing; run `forecaster {producer}` first")),
        })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

/// Records the command, seed, config and the hash of every artifact.
fn write_manifest(cfg: &RunConfig, command: &str, artifacts: &[String]) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "command = {command}");
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "config_sha256 = {}", cfg.hash());
    s.push_str("\n[config]\n");
    s.push_str(&cfg.canonical());
    s.push_str("\n[artifacts]\n");
    for name in artifacts {
        let path = cfg.out.join(name);
        let bytes = std::fs::read(&path).map_err(|source| Error::Io { path, source })?;
        let _ = writeln!(s, "{name} = {}", hex(&Sha256::digest(&bytes)));
    }
    let path = cfg.out.join(format!("manifest_{command}.txt"));
    std::fs::write(&path, s).map_err(|source| Error::Io { path, source })
}

pub fn ingest(cfg: &RunConfig) -> Result<()> {
    let records = load_telemetry(&cfg.data)?;
    let data = prepare(&records, &cfg.pipeline())?;
    create_dir(&cfg.out)?;
    let frames = [
        ("smoothed.csv", &data.smoothed),
        ("fused.csv", &data.fused),
        (TRAIN, &data.train),
        (TEST, &data.test),
        (TRAIN_SCALED, &data.train_scaled),
        (TEST_SCALED, &data.test_scaled),
    ];
    for (name, frame) in frames {
        frame.write_csv(&cfg.out.join(name))?;
    }
    data.scaler.write_csv(&cfg.out.join(SCALER), data.train.feature_names())?;
    let [raw, smoothed, fused, train, test] = data.stage_counts();
    println!("rows: raw {raw} -> smoothed {smoothed} -> fused {fused} -> train {train} / test {test}");
    let mut names: Vec<String> = frames.iter().map(|(n, _)| n.to_string()).collect();
    names.push(SCALER.into());
    write_manifest(cfg, "ingest", &names)
}

fn load_frame(cfg: &RunConfig, name: &str, origin: FrameOrigin) -> Result<FeatureFrame> {
    FeatureFrame::read_csv(&require(&cfg.out, name, "ingest")?, origin)
}

fn train_gan_inner(cfg: &RunConfig) -> Result<Vec<String>> {
    let train = load_frame(cfg, TRAIN_SCALED, FrameOrigin::Scaled)?;
    let samples = make_windows(&train, cfg.window_len, 1)?;
    let trained = gan_train(&samples, &cfg.gan_arch(), &cfg.gan_train())?;
    let mut gen = trained.generator.params().clone();
    gen.rng_seed = Some(cfg.seed);
    gen.save(&cfg.out.join(GENERATOR))?;
    let mut disc = trained.discriminator.params().clone();
    disc.rng_seed = Some(cfg.seed);
    disc.save(&cfg.out.join(DISCRIMINATOR))?;
    write_loss_history(&cfg.out.join(GAN_HISTORY), &trained.history)?;
    if let Some(last) = trained.history.last() {
        println!(
            "gan: {} updates, final d_loss {:.6} g_loss {:.6}",
            trained.history.len(),
            last.d_loss,
            last.g_loss
        );
    } else {
        println!("gan: 0 updates, saved the seeded initialization");
    }
    Ok(vec![GENERATOR.into(), DISCRIMINATOR.into(), GAN_HISTORY.into()])
}

fn train_bilstm_inner(cfg: &RunConfig) -> Result<Vec<String>> {
    let train = load_frame(cfg, TRAIN_SCALED, FrameOrigin::Scaled)?;
    let pairs = make_pairs(train.rows(), cfg.window_len, 1)?;
    let trained = bilstm_train(&pairs, &cfg.bilstm_arch(), &cfg.bilstm_train())?;
    let mut params = trained.model.params().clone();
    params.rng_seed = Some(cfg.seed);
    params.save(&cfg.out.join(BILSTM))?;
    write_history(&cfg.out.join(BILSTM_HISTORY), &trained.history)?;
    match trained.history.last() {
        Some(loss) => println!("bilstm: {} epochs, final loss {loss:.6}", trained.history.len()),
        None => println!("bilstm: 0 epochs, saved the seeded initialization"),
    }
    Ok(vec![BILSTM.into(), BILSTM_HISTORY.into()])
}

pub fn train_gan(cfg: &RunConfig) -> Result<()> {
    let names = train_gan_inner(cfg)?;
    write_manifest(cfg, "train-gan", &names)
}

pub fn train_bilstm(cfg: &RunConfig) -> Result<()> {
    let names = train_bilstm_inner(cfg)?;
    write_manifest(cfg, "train-bilstm", &names)
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let mut names = train_gan_inner(cfg)?;
    names.extend(train_bilstm_inner(cfg)?);
    write_manifest(cfg, "train", &names)
}

pub fn forecast_cmd(cfg: &RunConfig) -> Result<()> {
    let train = load_frame(cfg, TRAIN_SCALED, FrameOrigin::Scaled)?;
    let scaler = Scaler::read_csv(&require(&cfg.out, SCALER, "ingest")?)?;
    let gen_store = ParameterStore::load(&require(&cfg.out, GENERATOR, "train")?)?;
    let generator = GeneratorModel::from_params(&cfg.gan_arch(), &gen_store)?;
    let bl_store = ParameterStore::load(&require(&cfg.out, BILSTM, "train")?)?;
    let bilstm = BiLstmModel::from_params(&cfg.bilstm_arch(), &bl_store)?;
    let pgan = PredictiveGan {
        generator: &generator,
        weights: FeatureWeights::ones(N_FEATURES),
        config: cfg.latent(),
    };
    let tail = TrainTail::from_frame(&train, cfg.window_len)?;
    let icfg = InterleaveConfig {
        horizon_windows: cfg.horizon_windows,
        seed: cfg.seed,
    };
    let (primary, secondary) = forecast(&pgan, &bilstm, &tail, &icfg)?;
    let names = feature_names();
    let mut written = Vec::new();
    for series in [primary, secondary] {
        let phys = to_physical(&series, &scaler)?;
        let name = forecast_file(phys.path);
        write_series_csv(&cfg.out.join(&name), &[&phys], &names)?;
        println!("{}: {} rows -> {name}", phys.path.as_str(), phys.n_rows());
        written.push(name);
    }
    write_manifest(cfg, "forecast", &written)
}

fn load_forecast(cfg: &RunConfig, path: SeriesPath) -> Result<Array2<f64>> {
    let file = require(&cfg.out, &forecast_file(path), "forecast")?;
    read_series_csv(&file, &feature_names())?
        .into_iter()
        .find(|s| s.path == path)
        .map(|s| s.rows)
        .ok_or_else(|| Error::Format(format!("{} holds no {} rows", file.display(), path.as_str())))
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<()> {
    let train = load_frame(cfg, TRAIN, FrameOrigin::Fused)?;
    let test = load_frame(cfg, TEST, FrameOrigin::Fused)?;
    let b2p = load_forecast(cfg, SeriesPath::BilstmToPredgan)?;
    let p2b = load_forecast(cfg, SeriesPath::PredganToBilstm)?;
    // Partial windows beyond the test partition are dropped here.
    let k = p2b.nrows().min(b2p.nrows()).min(test.len());
    if k == 0 {
        return Err(Error::Alignment("no overlap between forecasts and the test partition".into()));
    }
    let arima = ar_forecast(&ar_fit(train.rows(), cfg.ar_p, cfg.ar_d)?, k);
    let methods = [
        (ARIMA, arima.view()),
        (SeriesPath::BilstmToPredgan.as_str(), b2p.slice(s![..k, ..])),
        (SeriesPath::PredganToBilstm.as_str(), p2b.slice(s![..k, ..])),
    ];
    let names = feature_names();
    let report = evaluate(&methods, test.rows(), &names)?;
    let text = report.to_text();
    print!("{text}");
    std::fs::write(cfg.out.join(RMSE_TEXT), &text).map_err(|source| Error::Io {
        path: cfg.out.join(RMSE_TEXT),
        source,
    })?;
    report.write_csv(&cfg.out.join(RMSE_CSV))?;
    let mut written = vec![RMSE_TEXT.to_string(), RMSE_CSV.to_string()];
    let actual = test.rows().slice(s![..k, ..]).to_owned();
    for (j, name) in names.iter().enumerate() {
        let file = plot_data_file(name);
        write_plot_csv(&cfg.out.join(&file), j, actual.view(), &methods)?;
        written.push(file);
    }
    write_manifest(cfg, "evaluate", &written)
}

pub fn plot_cmd(cfg: &RunConfig) -> Result<()> {
    let mut written = Vec::new();
    for name in feature_names() {
        let data_path = require(&cfg.out, &plot_data_file(&name), "evaluate")?;
        let text = std::fs::read_to_string(&data_path).map_err(|source| Error::Io {
            path: data_path.clone(),
            source,
        })?;
        let chart = svg::PlotData::parse(&text).map_err(|m| Error::Format(format!("{}: {m}", data_path.display())))?;
        let file = plot_file(&name);
        let path = cfg.out.join(&file);
        std::fs::write(&path, chart.render(&name)).map_err(|source| Error::Io { path, source })?;
        written.push(file);
    }
    println!("wrote {} charts", written.len());
    write_manifest(cfg, "plot", &written)
}
