//! Window hand-off between the BiLSTM and the Predictive GAN.
//!
//! With `B_k` the BiLSTM windows and `P_k` the Predictive-GAN windows:
//!
//! ```text
//! B_1 = bilstm(last n training rows)      P_1 = pgan(last n-1 training rows)
//! B_k = bilstm(P_{k-1})                   P_k = pgan(last n-1 rows of B_{k-1})
//! ```
//!
//! The BiLSTM windows form the primary PredGAN->BiLSTM series, the
//! Predictive-GAN windows the BiLSTM->PredGAN series; each is named by the
//! model that emits it.

use std::fmt;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};

use crate::bilstm::BiLstmModel;
use crate::data::{FeatureFrame, FrameOrigin, Scaler};
use crate::error::{Error, Result};
use crate::predictive::{predict_window, FeatureWeights, LatentGenerator, LatentOptConfig};
use crate::rng::derive_seed;

/// Maps an `n x m` window to the next `n x m` window.
pub trait WindowModel {
    fn predict(&self, window: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

impl WindowModel for BiLstmModel {
    fn predict(&self, window: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward(window)
    }
}

/// Produces an `n x m` window from the `n - 1` rows preceding it.
pub trait WindowForecaster {
    fn window_len(&self) -> usize;

    fn forecast_window(&self, seed_rows: ArrayView2<'_, f64>, seed: u64) -> Result<Array2<f64>>;
}

/// A generator used through latent optimization.
pub struct PredictiveGan<'a, G: LatentGenerator + ?Sized> {
    pub generator: &'a G,
    pub weights: FeatureWeights,
    pub config: LatentOptConfig,
}

impl<G: LatentGenerator + ?Sized> WindowForecaster for PredictiveGan<'_, G> {
    fn window_len(&self) -> usize {
        self.generator.window_shape().0
    }

    fn forecast_window(&self, seed_rows: ArrayView2<'_, f64>, seed: u64) -> Result<Array2<f64>> {
        let cfg = LatentOptConfig {
            seed,
            ..self.config.clone()
        };
        predict_window(self.generator, seed_rows, &self.weights, &cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesPath {
    PredganToBilstm,
    BilstmToPredgan,
}

impl SeriesPath {
    pub fn as_str(self) -> &'static str {
        match self {
            SeriesPath::PredganToBilstm => "predgan_to_bilstm",
            SeriesPath::BilstmToPredgan => "bilstm_to_predgan",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "predgan_to_bilstm" => Some(SeriesPath::PredganToBilstm),
            "bilstm_to_predgan" => Some(SeriesPath::BilstmToPredgan),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesScale {
    /// The scaler's `[-1, 1]` range.
    Model,
    Physical,
}

impl fmt::Display for SeriesScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SeriesScale::Model => "model",
            SeriesScale::Physical => "physical",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSeries {
    pub windows: Vec<Array2<f64>>,
    pub path: SeriesPath,
    pub scale: SeriesScale,
}

impl ForecastSeries {
    /// All windows stacked in order.
    pub fn rows(&self) -> Array2<f64> {
        let views: Vec<ArrayView2<'_, f64>> = self.windows.iter().map(|w| w.view()).collect();
        if views.is_empty() {
            return Array2::zeros((0, 0));
        }
        ndarray::concatenate(ndarray::Axis(0), &views).expect("windows share a width")
    }

    pub fn n_rows(&self) -> usize {
        self.windows.iter().map(|w| w.nrows()).sum()
    }
}

/// The last rows of the scaled training partition. Holding only these is
/// what keeps the test partition out of [`forecast`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainTail(Array2<f64>);

impl TrainTail {
    /// Takes the last `n` rows of a scaled training frame.
    pub fn from_frame(train_scaled: &FeatureFrame, n: usize) -> Result<Self> {
        if train_scaled.origin() != FrameOrigin::Scaled {
            return Err(Error::State(format!(
                "forecast seeds must be in model scale, got a {} frame",
                train_scaled.origin().as_str()
            )));
        }
        if train_scaled.len() < n {
            return Err(Error::insufficient("forecast seed rows", n, train_scaled.len()));
        }
        Ok(Self(train_scaled.tail(n)?.into_rows()))
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterleaveConfig {
    /// Number of windows on each path.
    pub horizon_windows: usize,
    pub seed: u64,
}

/// Runs both paths in lockstep for `horizon_windows` windows. Returns
/// `(predgan_to_bilstm, bilstm_to_predgan)` in model scale.
pub fn forecast<F, B>(
    pgan: &F,
    bilstm: &B,
    tail: &TrainTail,
    config: &InterleaveConfig,
) -> Result<(ForecastSeries, ForecastSeries)>
where
    F: WindowForecaster + ?Sized,
    B: WindowModel + ?Sized,
{
    let n = pgan.window_len();
    if config.horizon_windows == 0 {
        return Err(Error::Parameter("horizon_windows must be at least 1".into()));
    }
    let rows = tail.rows();
    if rows.nrows() < n {
        return Err(Error::insufficient("forecast seed rows", n, rows.nrows()));
    }
    let last = rows.slice(s![rows.nrows() - n.., ..]);
    let mut b_windows: Vec<Array2<f64>> = Vec::with_capacity(config.horizon_windows);
    let mut p_windows: Vec<Array2<f64>> = Vec::with_capacity(config.horizon_windows);
    for k in 0..config.horizon_windows {
        let pgan_seed = derive_seed(config.seed, k as u64);
        let (b_in, p_in) = match (b_windows.last(), p_windows.last()) {
            (Some(b), Some(p)) => (p.view(), b.slice(s![b.nrows() - (n - 1).., ..])),
            _ => (last, last.slice(s![1.., ..])),
        };
        let b_next = bilstm.predict(b_in)?;
        let p_next = pgan.forecast_window(p_in, pgan_seed)?;
        if b_next.nrows() != n || p_next.nrows() != n {
            return Err(Error::Shape(format!(
                "window {k}: models returned {} and {} rows, expected {n}",
                b_next.nrows(),
                p_next.nrows()
            )));
        }
        b_windows.push(b_next);
        p_windows.push(p_next);
    }
    Ok((
        ForecastSeries {
            windows: b_windows,
            path: SeriesPath::PredganToBilstm,
            scale: SeriesScale::Model,
        },
        ForecastSeries {
            windows: p_windows,
            path: SeriesPath::BilstmToPredgan,
            scale: SeriesScale::Model,
        },
    ))
}

/// Inverts the training scaler on every row.
pub fn to_physical(series: &ForecastSeries, scaler: &Scaler) -> Result<ForecastSeries> {
    if series.scale == SeriesScale::Physical {
        return Err(Error::State("series is already in physical scale".into()));
    }
    let windows = series
        .windows
        .iter()
        .map(|w| scaler.unscale_rows(w.view()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForecastSeries {
        windows,
        path: series.path,
        scale: SeriesScale::Physical,
    })
}

/// Long-format export, `step,feature,value,path,scale`.
pub fn write_series_csv(path: &Path, series: &[&ForecastSeries], feature_names: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["step", "feature", "value", "path", "scale"])
        .map_err(|e| csv_io(path, e))?;
    for s in series {
        let rows = s.rows();
        if rows.ncols() != feature_names.len() && s.n_rows() > 0 {
            return Err(Error::Shape(format!(
                "{} feature names for {}-column series",
                feature_names.len(),
                rows.ncols()
            )));
        }
        for (step, row) in rows.rows().into_iter().enumerate() {
            for (name, v) in feature_names.iter().zip(row) {
                w.write_record([
                    step.to_string(),
                    name.clone(),
                    v.to_string(),
                    s.path.as_str().to_string(),
                    s.scale.to_string(),
                ])
                .map_err(|e| csv_io(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Stacked rows of one path read back from a series CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRows {
    pub path: SeriesPath,
    pub scale: SeriesScale,
    pub rows: Array2<f64>,
}

/// Reads a file written by [`write_series_csv`]; paths in file order.
pub fn read_series_csv(path: &Path, feature_names: &[String]) -> Result<Vec<SeriesRows>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_io(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    for (i, col) in ["step", "feature", "value", "path", "scale"].iter().enumerate() {
        if header.get(i).map(String::as_str) != Some(*col) {
            return Err(Error::Schema { column: col.to_string() });
        }
    }
    let m = feature_names.len();
    // (path, scale, values in file order)
    let mut groups: Vec<(SeriesPath, SeriesScale, Vec<f64>)> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let row = i + 2;
        let bad = |column: &str, message: String| Error::Parse {
            row,
            column: column.into(),
            message,
        };
        let series = SeriesPath::parse(&rec[3]).ok_or_else(|| bad("path", format!("unknown path `{}`", &rec[3])))?;
        let scale = match &rec[4] {
            "model" => SeriesScale::Model,
            "physical" => SeriesScale::Physical,
            other => return Err(bad("scale", format!("unknown scale `{other}`"))),
        };
        let value: f64 = rec[2].parse().map_err(|_| bad("value", format!("`{}` is not a number", &rec[2])))?;
        let pos = match groups.iter().position(|g| g.0 == series) {
            Some(p) => p,
            None => {
                groups.push((series, scale, Vec::new()));
                groups.len() - 1
            }
        };
        let group = &mut groups[pos];
        let expected = &feature_names[group.2.len() % m];
        if &rec[1] != expected.as_str() || group.1 != scale {
            return Err(bad("feature", format!("expected `{expected}` in {} scale", group.1)));
        }
        group.2.push(value);
    }
    groups
        .into_iter()
        .map(|(series, scale, values)| {
            if values.len() % m != 0 {
                return Err(Error::Shape(format!("{}: incomplete final row", series.as_str())));
            }
            let rows = Array2::from_shape_vec((values.len() / m, m), values)
                .map_err(|e| Error::Shape(e.to_string()))?;
            Ok(SeriesRows {
                path: series,
                scale,
                rows,
            })
        })
        .collect()
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}
