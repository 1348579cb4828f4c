//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use forecaster_core::data::{PipelineConfig, StageOrder, WINDOW_LEN};
use forecaster_core::gan::{AdamConfig, EpochSemantics, GanArch, GanTrainConfig};
use forecaster_core::bilstm::{BiLstmArch, SeqTrainConfig};
use forecaster_core::predictive::LatentOptConfig;
use forecaster_core::{Error, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub machine_id: u32,
    pub smoothing_window: usize,
    pub fusion_window: usize,
    pub train_fraction: f64,
    pub window_len: usize,
    pub latent_dim: usize,
    pub gan_epochs: usize,
    pub gan_batch_size: usize,
    pub gan_lr: f64,
    pub gan_dense_channels: usize,
    pub gan_gen_channels: [usize; 2],
    pub gan_disc_channels: [usize; 2],
    pub bilstm_epochs: usize,
    pub bilstm_batch_size: usize,
    pub bilstm_hidden: usize,
    pub bilstm_lr: f64,
    pub latent_iterations: usize,
    pub latent_lr: f64,
    pub latent_restarts: usize,
    pub latent_patience: usize,
    pub horizon_windows: usize,
    pub ar_p: usize,
    pub ar_d: usize,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gan = GanArch::default();
        Self {
            data: PathBuf::from("data/PdM_telemetry.csv"),
            machine_id: 1,
            smoothing_window: 24,
            fusion_window: 3,
            train_fraction: 0.7,
            window_len: WINDOW_LEN,
            latent_dim: gan.latent_dim,
            gan_epochs: 50_000,
            gan_batch_size: 32,
            gan_lr: 1e-4,
            gan_dense_channels: gan.dense_channels,
            gan_gen_channels: gan.gen_channels,
            gan_disc_channels: gan.disc_channels,
            bilstm_epochs: 200,
            bilstm_batch_size: 32,
            bilstm_hidden: 64,
            bilstm_lr: 1e-3,
            latent_iterations: 10_000,
            latent_lr: 1e-2,
            latent_restarts: 1,
            latent_patience: 200,
            horizon_windows: 10,
            ar_p: 1,
            ar_d: 0,
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parameter(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_pair(key: &str, value: &str) -> Result<[usize; 2]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([parse(key, a)?, parse(key, b)?]),
        _ => Err(Error::Parameter(format!("`{key}`: expected two comma-separated widths, got `{value}`"))),
    }
}

impl RunConfig {
    /// Reads a config file on top of the defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parameter(format!("{}:{}: expected `key = value`", path.display(), i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = PathBuf::from(value),
            "machine_id" => self.machine_id = parse(key, value)?,
            "smoothing_window" => self.smoothing_window = parse(key, value)?,
            "fusion_window" => self.fusion_window = parse(key, value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "window_len" => self.window_len = parse(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "gan_epochs" => self.gan_epochs = parse(key, value)?,
            "gan_batch_size" => self.gan_batch_size = parse(key, value)?,
            "gan_lr" => self.gan_lr = parse(key, value)?,
            "gan_dense_channels" => self.gan_dense_channels = parse(key, value)?,
            "gan_gen_channels" => self.gan_gen_channels = parse_pair(key, value)?,
            "gan_disc_channels" => self.gan_disc_channels = parse_pair(key, value)?,
            "bilstm_epochs" => self.bilstm_epochs = parse(key, value)?,
            "bilstm_batch_size" => self.bilstm_batch_size = parse(key, value)?,
            "bilstm_hidden" => self.bilstm_hidden = parse(key, value)?,
            "bilstm_lr" => self.bilstm_lr = parse(key, value)?,
            "latent_iterations" => self.latent_iterations = parse(key, value)?,
            "latent_lr" => self.latent_lr = parse(key, value)?,
            "latent_restarts" => self.latent_restarts = parse(key, value)?,
            "latent_patience" => self.latent_patience = parse(key, value)?,
            "horizon_windows" => self.horizon_windows = parse(key, value)?,
            "ar_p" => self.ar_p = parse(key, value)?,
            "ar_d" => self.ar_d = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(Error::Parameter(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` command-line override.
    pub fn apply_override(&mut self, arg: &str) -> Result<()> {
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| Error::Parameter(format!("override `{arg}` is not `key=value`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("smoothing_window", self.smoothing_window),
            ("fusion_window", self.fusion_window),
            ("latent_dim", self.latent_dim),
            ("gan_dense_channels", self.gan_dense_channels),
            ("bilstm_batch_size", self.bilstm_batch_size),
            ("bilstm_hidden", self.bilstm_hidden),
            ("latent_iterations", self.latent_iterations),
            ("latent_restarts", self.latent_restarts),
            ("latent_patience", self.latent_patience),
            ("horizon_windows", self.horizon_windows),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Parameter(format!("`{k}` must be positive")));
            }
        }
        if self.gan_gen_channels.contains(&0) || self.gan_disc_channels.contains(&0) {
            return Err(Error::Parameter("GAN channel widths must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Parameter(format!(
                "`train_fraction` must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.window_len != WINDOW_LEN {
            return Err(Error::Parameter(format!(
                "`window_len` must be {WINDOW_LEN}: the generator geometry emits {WINDOW_LEN}-row windows"
            )));
        }
        if self.gan_batch_size < 2 {
            return Err(Error::Parameter("`gan_batch_size` must be at least 2 for batch norm".into()));
        }
        for (k, v) in [("gan_lr", self.gan_lr), ("bilstm_lr", self.bilstm_lr), ("latent_lr", self.latent_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("`{k}` must be a positive finite number")));
            }
        }
        Ok(())
    }

    /// Canonical `key = value` lines, `out` excluded so moving a run does
    /// not change its hash.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let pair = |p: [usize; 2]| format!("{},{}", p[0], p[1]);
        let _ = writeln!(s, "data = {}", self.data.display());
        let _ = writeln!(s, "machine_id = {}", self.machine_id);
        let _ = writeln!(s, "smoothing_window = {}", self.smoothing_window);
        let _ = writeln!(s, "fusion_window = {}", self.fusion_window);
        let _ = writeln!(s, "train_fraction = {}", self.train_fraction);
        let _ = writeln!(s, "window_len = {}", self.window_len);
        let _ = writeln!(s, "latent_dim = {}", self.latent_dim);
        let _ = writeln!(s, "gan_epochs = {}", self.gan_epochs);
        let _ = writeln!(s, "gan_batch_size = {}", self.gan_batch_size);
        let _ = writeln!(s, "gan_lr = {}", self.gan_lr);
        let _ = writeln!(s, "gan_dense_channels = {}", self.gan_dense_channels);
        let _ = writeln!(s, "gan_gen_channels = {}", pair(self.gan_gen_channels));
        let _ = writeln!(s, "gan_disc_channels = {}", pair(self.gan_disc_channels));
        let _ = writeln!(s, "bilstm_epochs = {}", self.bilstm_epochs);
        let _ = writeln!(s, "bilstm_batch_size = {}", self.bilstm_batch_size);
        let _ = writeln!(s, "bilstm_hidden = {}", self.bilstm_hidden);
        let _ = writeln!(s, "bilstm_lr = {}", self.bilstm_lr);
        let _ = writeln!(s, "latent_iterations = {}", self.latent_iterations);
        let _ = writeln!(s, "latent_lr = {}", self.latent_lr);
        let _ = writeln!(s, "latent_restarts = {}", self.latent_restarts);
        let _ = writeln!(s, "latent_patience = {}", self.latent_patience);
        let _ = writeln!(s, "horizon_windows = {}", self.horizon_windows);
        let _ = writeln!(s, "ar_p = {}", self.ar_p);
        let _ = writeln!(s, "ar_d = {}", self.ar_d);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            machine_id: self.machine_id,
            smoothing_window: self.smoothing_window,
            fusion_window: self.fusion_window,
            train_fraction: self.train_fraction,
            order: StageOrder::SmoothThenFuse,
        }
    }

    pub fn gan_arch(&self) -> GanArch {
        GanArch {
            latent_dim: self.latent_dim,
            dense_channels: self.gan_dense_channels,
            gen_channels: self.gan_gen_channels,
            disc_channels: self.gan_disc_channels,
            ..GanArch::default()
        }
    }

    pub fn gan_train(&self) -> GanTrainConfig {
        let opt = AdamConfig {
            lr: self.gan_lr,
            ..AdamConfig::gan()
        };
        GanTrainConfig {
            epochs: self.gan_epochs,
            batch_size: self.gan_batch_size,
            seed: self.seed,
            gen_opt: opt,
            disc_opt: opt,
            semantics: EpochSemantics::Update,
        }
    }

    pub fn bilstm_arch(&self) -> BiLstmArch {
        BiLstmArch {
            hidden_size: self.bilstm_hidden,
            ..BiLstmArch::default()
        }
    }

    pub fn bilstm_train(&self) -> SeqTrainConfig {
        let base = SeqTrainConfig::default();
        SeqTrainConfig {
            epochs: self.bilstm_epochs,
            batch_size: self.bilstm_batch_size,
            seed: self.seed,
            optimizer: AdamConfig {
                lr: self.bilstm_lr,
                ..base.optimizer
            },
        }
    }

    pub fn latent(&self) -> LatentOptConfig {
        LatentOptConfig {
            iterations: self.latent_iterations,
            lr: self.latent_lr,
            restarts: self.latent_restarts,
            patience: self.latent_patience,
            seed: self.seed,
            ..LatentOptConfig::default()
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "# smoke\nseed = 4\ngan_gen_channels = 16, 8  # narrow\n\nhorizon_windows=3\n").unwrap();
        let mut cfg = RunConfig::load(&path).unwrap();
        assert_eq!((cfg.seed, cfg.gan_gen_channels, cfg.horizon_windows), (4, [16, 8], 3));
        cfg.apply_override("train_fraction=0.5").unwrap();
        assert_eq!(cfg.train_fraction, 0.5);
        assert!(cfg.apply_override("bogus=1").is_err());
        assert!(cfg.apply_override("seed").is_err());
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_rejects_bad_values() {
        for (k, v) in [("train_fraction", "1.0"), ("window_len", "7"), ("gan_batch_size", "1"), ("latent_lr", "0")] {
            let mut cfg = RunConfig::default();
            cfg.set(k, v).unwrap();
            assert!(cfg.validate().is_err(), "{k}={v}");
        }
    }

    #[test]
    fn hash_ignores_output_directory() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn canonical_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.set("gan_disc_channels", "8,16").unwrap();
        cfg.set("gan_lr", "0.0002").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(&path, cfg.canonical()).unwrap();
        let back = RunConfig::load(&path).unwrap();
        assert_eq!(back.hash(), cfg.hash());
    }
}
