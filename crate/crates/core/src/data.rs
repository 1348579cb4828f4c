//! Telemetry ingestion and preprocessing.
//!
//! Raw hourly telemetry is filtered to one machine, smoothed with a trailing
//! rolling average, reduced with non-overlapping fusion windows, min-max
//! scaled to `[-1, 1]` and cut into `n x m` window samples.

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use chrono::NaiveDateTime;
use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

pub const FEATURE_NAMES: [&str; 4] = ["volt", "rotate", "pressure", "vibration"];
pub const N_FEATURES: usize = FEATURE_NAMES.len();

/// Time steps per window sample.
pub const WINDOW_LEN: usize = 9;

/// Exact input header, in order.
pub const TELEMETRY_HEADER: [&str; 6] = [
    "datetime",
    "machineID",
    "volt",
    "rotate",
    "pressure",
    "vibration",
];
pub const DATETIME_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRecord {
    pub timestamp: NaiveDateTime,
    pub machine_id: u32,
    pub volt: f64,
    pub rotate: f64,
    pub pressure: f64,
    pub vibration: f64,
}

impl TelemetryRecord {
    pub fn features(&self) -> [f64; N_FEATURES] {
        [self.volt, self.rotate, self.pressure, self.vibration]
    }
}

/// Processing stage a frame has reached. Stages only move forward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FrameOrigin {
    Raw,
    Smoothed,
    Fused,
    Scaled,
}

impl FrameOrigin {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameOrigin::Raw => "raw",
            FrameOrigin::Smoothed => "smoothed",
            FrameOrigin::Fused => "fused",
            FrameOrigin::Scaled => "scaled",
        }
    }
}

/// Ordered rows of `m` finite feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    rows: Array2<f64>,
    feature_names: Vec<String>,
    origin: FrameOrigin,
}

impl FeatureFrame {
    pub fn new(rows: Array2<f64>, feature_names: Vec<String>, origin: FrameOrigin) -> Result<Self> {
        if rows.ncols() != feature_names.len() {
            return Err(Error::Shape(format!(
                "frame has {} columns but {} feature names",
                rows.ncols(),
                feature_names.len()
            )));
        }
        if let Some((idx, _)) = rows.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (r, c) = (idx / rows.ncols().max(1), idx % rows.ncols().max(1));
            return Err(Error::Parameter(format!(
                "non-finite value at row {r}, feature `{}`",
                feature_names[c]
            )));
        }
        Ok(Self {
            rows,
            feature_names,
            origin,
        })
    }

    /// Frame over the four telemetry features.
    pub fn telemetry(rows: Array2<f64>, origin: FrameOrigin) -> Result<Self> {
        Self::new(rows, default_feature_names(), origin)
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn into_rows(self) -> Array2<f64> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn n_features(&self) -> usize {
        self.rows.ncols()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn origin(&self) -> FrameOrigin {
        self.origin
    }

    /// Last `count` rows, as a new frame with the same origin.
    pub fn tail(&self, count: usize) -> Result<FeatureFrame> {
        if count > self.len() {
            return Err(Error::insufficient("frame tail", count, self.len()));
        }
        let start = self.len() - count;
        Ok(Self {
            rows: self.rows.slice(s![start.., ..]).to_owned(),
            feature_names: self.feature_names.clone(),
            origin: self.origin,
        })
    }

    fn derive(&self, rows: Array2<f64>, stage: FrameOrigin) -> Result<FeatureFrame> {
        if self.origin == FrameOrigin::Scaled && stage != FrameOrigin::Scaled {
            return Err(Error::State(format!(
                "cannot apply {} stage to a scaled frame",
                stage.as_str()
            )));
        }
        Ok(Self {
            rows,
            feature_names: self.feature_names.clone(),
            origin: self.origin.max(stage),
        })
    }

    /// Writes the frame as CSV with header `t,<features...>`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::with_capacity(self.len() * 64);
        out.push('t');
        for name in &self.feature_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (t, row) in self.rows.axis_iter(Axis(0)).enumerate() {
            out.push_str(&t.to_string());
            for v in row {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a frame written by [`FeatureFrame::write_csv`].
    pub fn read_csv(path: &Path, origin: FrameOrigin) -> Result<FeatureFrame> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(BufReader::new(file));
        let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
        if headers.get(0) != Some("t") {
            return Err(Error::Schema {
                column: "t".into(),
            });
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
        let mut values = Vec::new();
        let mut count = 0;
        for record in rdr.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let row = record.position().map(|p| p.line() as usize).unwrap_or(count + 2);
            for (j, name) in names.iter().enumerate() {
                let cell = record.get(j + 1).unwrap_or("");
                values.push(parse_f64(cell, row, name)?);
            }
            count += 1;
        }
        let rows = Array2::from_shape_vec((count, names.len()), values)
            .map_err(|e| Error::Shape(e.to_string()))?;
        FeatureFrame::new(rows, names, origin)
    }
}

pub fn default_feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other:?}", path.display())),
    }
}

fn parse_f64(cell: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|e| Error::Parse {
        row,
        column: column.to_owned(),
        message: format!("`{cell}`: {e}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            column: column.to_owned(),
            message: format!("`{cell}` is not finite"),
        });
    }
    Ok(v)
}

/// Parses the telemetry CSV. Row numbers in errors are file line numbers
/// (the header is row 1).
pub fn load_telemetry(path: &Path) -> Result<Vec<TelemetryRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();

    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema {
                column: name.to_owned(),
            })
    };
    let idx: Vec<usize> = TELEMETRY_HEADER
        .iter()
        .map(|name| col(name))
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    for (i, result) in rdr.records().enumerate() {
        let record = result.map_err(|e| csv_error(path, e))?;
        let row = record.position().map(|p| p.line() as usize).unwrap_or(i + 2);
        let cell = |k: usize| record.get(idx[k]).unwrap_or("").trim();

        let timestamp = NaiveDateTime::parse_from_str(cell(0), DATETIME_FORMAT).map_err(|e| {
            Error::Parse {
                row,
                column: TELEMETRY_HEADER[0].into(),
                message: format!("`{}`: {e}", cell(0)),
            }
        })?;
        let machine_id: u32 = cell(1).parse().map_err(|e| Error::Parse {
            row,
            column: TELEMETRY_HEADER[1].into(),
            message: format!("`{}`: {e}", cell(1)),
        })?;
        if machine_id == 0 {
            return Err(Error::Parse {
                row,
                column: TELEMETRY_HEADER[1].into(),
                message: "machine id must be positive".into(),
            });
        }
        records.push(TelemetryRecord {
            timestamp,
            machine_id,
            volt: parse_f64(cell(2), row, TELEMETRY_HEADER[2])?,
            rotate: parse_f64(cell(3), row, TELEMETRY_HEADER[3])?,
            pressure: parse_f64(cell(4), row, TELEMETRY_HEADER[4])?,
            vibration: parse_f64(cell(5), row, TELEMETRY_HEADER[5])?,
        });
    }
    Ok(records)
}

/// Writes records in the input schema (used for bundled and synthetic datasets).
pub fn write_telemetry(path: &Path, records: &[TelemetryRecord]) -> Result<()> {
    let mut out = TELEMETRY_HEADER.join(",");
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.timestamp.format(DATETIME_FORMAT),
            r.machine_id,
            r.volt,
            r.rotate,
            r.pressure,
            r.vibration
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Selects one machine's rows in chronological order.
pub fn filter_machine(records: &[TelemetryRecord], machine_id: u32) -> Result<FeatureFrame> {
    if records.is_empty() {
        return Err(Error::insufficient("telemetry records", 1, 0));
    }
    let mut selected: Vec<&TelemetryRecord> =
        records.iter().filter(|r| r.machine_id == machine_id).collect();
    if selected.is_empty() {
        return Err(Error::EmptySelection { machine_id });
    }
    selected.sort_by_key(|r| r.timestamp);
    if let Some(pair) = selected.windows(2).find(|w| w[0].timestamp == w[1].timestamp) {
        return Err(Error::Format(format!(
            "machine {machine_id} has duplicate timestamp {}",
            pair[0].timestamp
        )));
    }
    let mut rows = Array2::zeros((selected.len(), N_FEATURES));
    for (mut row, rec) in rows.axis_iter_mut(Axis(0)).zip(&selected) {
        row.assign(&ndarray::arr1(&rec.features()));
    }
    FeatureFrame::telemetry(rows, FrameOrigin::Raw)
}

/// Mean computed relative to the first value, so a constant block is
/// reproduced exactly.
fn block_mean(block: ArrayView2<'_, f64>, out: &mut [f64]) {
    let len = block.nrows() as f64;
    for (j, o) in out.iter_mut().enumerate() {
        let col = block.column(j);
        let anchor = col[0];
        let shift: f64 = col.iter().map(|v| v - anchor).sum();
        *o = anchor + shift / len;
    }
}

/// Trailing-complete rolling mean: output row `k` averages input rows
/// `k..k+window_len`.
pub fn rolling_average(frame: &FeatureFrame, window_len: usize) -> Result<FeatureFrame> {
    if window_len == 0 {
        return Err(Error::Parameter("rolling window must be positive".into()));
    }
    if frame.len() < window_len {
        return Err(Error::insufficient("rolling average", window_len, frame.len()));
    }
    let out_len = frame.len() - window_len + 1;
    let m = frame.n_features();
    let mut rows = Array2::zeros((out_len, m));
    let mut buf = vec![0.0; m];
    for k in 0..out_len {
        block_mean(frame.rows.slice(s![k..k + window_len, ..]), &mut buf);
        rows.row_mut(k).iter_mut().zip(&buf).for_each(|(r, b)| *r = *b);
    }
    frame.derive(rows, FrameOrigin::Smoothed)
}

/// Non-overlapping block means; trailing remainder rows are dropped.
pub fn fusion_windows(frame: &FeatureFrame, window_len: usize) -> Result<FeatureFrame> {
    if window_len == 0 {
        return Err(Error::Parameter("fusion window must be positive".into()));
    }
    if frame.len() < window_len {
        return Err(Error::insufficient("fusion windows", window_len, frame.len()));
    }
    let out_len = frame.len() / window_len;
    let m = frame.n_features();
    let mut rows = Array2::zeros((out_len, m));
    let mut buf = vec![0.0; m];
    for k in 0..out_len {
        let start = k * window_len;
        block_mean(frame.rows.slice(s![start..start + window_len, ..]), &mut buf);
        rows.row_mut(k).iter_mut().zip(&buf).for_each(|(r, b)| *r = *b);
    }
    frame.derive(rows, FrameOrigin::Fused)
}

/// Per-feature affine map of `[min, max]` onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    per_feature_min: Vec<f64>,
    per_feature_max: Vec<f64>,
}

impl Scaler {
    pub fn new(per_feature_min: Vec<f64>, per_feature_max: Vec<f64>) -> Result<Self> {
        if per_feature_min.len() != per_feature_max.len() {
            return Err(Error::Shape("scaler min/max lengths differ".into()));
        }
        for (j, (lo, hi)) in per_feature_min.iter().zip(&per_feature_max).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                let name = FEATURE_NAMES.get(j).copied().unwrap_or("?");
                return Err(Error::DegenerateFeature {
                    feature: name.to_owned(),
                    value: *lo,
                });
            }
        }
        Ok(Self {
            per_feature_min,
            per_feature_max,
        })
    }

    pub fn min(&self) -> &[f64] {
        &self.per_feature_min
    }

    pub fn max(&self) -> &[f64] {
        &self.per_feature_max
    }

    pub fn n_features(&self) -> usize {
        self.per_feature_min.len()
    }

    #[inline]
    pub fn scale_value(&self, j: usize, x: f64) -> f64 {
        let (lo, hi) = (self.per_feature_min[j], self.per_feature_max[j]);
        2.0 * (x - lo) / (hi - lo) - 1.0
    }

    #[inline]
    pub fn unscale_value(&self, j: usize, y: f64) -> f64 {
        let (lo, hi) = (self.per_feature_min[j], self.per_feature_max[j]);
        (y + 1.0) * 0.5 * (hi - lo) + lo
    }

    /// Inverse-scales a bare `k x m` matrix.
    pub fn unscale_rows(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_width(rows.ncols())?;
        let mut out = rows.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.unscale_value(j, *v);
            }
        }
        Ok(out)
    }

    fn check_width(&self, m: usize) -> Result<()> {
        if m != self.n_features() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} features, frame has {m}",
                self.n_features()
            )));
        }
        Ok(())
    }

    /// Writes `feature,min,max` rows.
    pub fn write_csv(&self, path: &Path, names: &[String]) -> Result<()> {
        let mut out = String::from("feature,min,max\n");
        for (j, name) in names.iter().enumerate() {
            out.push_str(&format!(
                "{name},{},{}\n",
                self.per_feature_min[j], self.per_feature_max[j]
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Scaler> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(BufReader::new(file));
        let (mut lo, mut hi) = (Vec::new(), Vec::new());
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| csv_error(path, e))?;
            lo.push(parse_f64(record.get(1).unwrap_or(""), i + 2, "min")?);
            hi.push(parse_f64(record.get(2).unwrap_or(""), i + 2, "max")?);
        }
        Scaler::new(lo, hi)
    }
}

/// Fits per-feature min/max. Call on the training partition only.
pub fn fit_scaler(frame: &FeatureFrame) -> Result<Scaler> {
    if frame.is_empty() {
        return Err(Error::insufficient("scaler fit", 1, 0));
    }
    let m = frame.n_features();
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    for row in frame.rows.axis_iter(Axis(0)) {
        for (j, v) in row.iter().enumerate() {
            lo[j] = lo[j].min(*v);
            hi[j] = hi[j].max(*v);
        }
    }
    if let Some(j) = (0..m).find(|&j| lo[j] >= hi[j]) {
        return Err(Error::DegenerateFeature {
            feature: frame.feature_names[j].clone(),
            value: lo[j],
        });
    }
    Scaler::new(lo, hi)
}

pub fn apply_scaler(frame: &FeatureFrame, scaler: &Scaler) -> Result<FeatureFrame> {
    scaler.check_width(frame.n_features())?;
    if frame.origin == FrameOrigin::Scaled {
        return Err(Error::State("frame is already scaled".into()));
    }
    let mut rows = frame.rows.clone();
    for mut row in rows.axis_iter_mut(Axis(0)) {
        for (j, v) in row.iter_mut().enumerate() {
            *v = scaler.scale_value(j, *v);
        }
    }
    frame.derive(rows, FrameOrigin::Scaled)
}

/// Undoes [`apply_scaler`]. The result is labelled `fused`, the stage that
/// precedes scaling in the standard pipeline.
pub fn invert_scaler(frame: &FeatureFrame, scaler: &Scaler) -> Result<FeatureFrame> {
    if frame.origin != FrameOrigin::Scaled {
        return Err(Error::State("only scaled frames can be inverted".into()));
    }
    let rows = scaler.unscale_rows(frame.rows.view())?;
    FeatureFrame::new(rows, frame.feature_names.clone(), FrameOrigin::Fused)
}

/// Chronological split: the first `floor(fraction * len)` rows train.
pub fn split_train_test(frame: &FeatureFrame, train_fraction: f64) -> Result<(FeatureFrame, FeatureFrame)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if frame.is_empty() {
        return Err(Error::insufficient("train/test split", 1, 0));
    }
    // Small slack so decimal fractions like 0.7 * 10 floor to 7, not 6.
    let cut = ((train_fraction * frame.len() as f64) + 1e-9).floor() as usize;
    let cut = cut.min(frame.len());
    let part = |range: std::ops::Range<usize>| FeatureFrame {
        rows: frame.rows.slice(s![range, ..]).to_owned(),
        feature_names: frame.feature_names.clone(),
        origin: frame.origin,
    };
    Ok((part(0..cut), part(cut..frame.len())))
}

/// One `n x m` training unit cut from a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub values: Array2<f64>,
    pub start_index: usize,
}

/// Windows starting at `0, stride, 2*stride, ...` while they fit.
pub fn make_windows(frame: &FeatureFrame, n: usize, stride: usize) -> Result<Vec<WindowSample>> {
    if n == 0 || stride == 0 {
        return Err(Error::Parameter("window length and stride must be positive".into()));
    }
    if frame.len() < n {
        return Err(Error::insufficient("windowing", n, frame.len()));
    }
    Ok((0..=frame.len() - n)
        .step_by(stride)
        .map(|start| WindowSample {
            values: frame.rows.slice(s![start..start + n, ..]).to_owned(),
            start_index: start,
        })
        .collect())
}

/// Which of the two averaging stages runs first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOrder {
    SmoothThenFuse,
    FuseThenSmooth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub machine_id: u32,
    pub smoothing_window: usize,
    pub fusion_window: usize,
    pub train_fraction: f64,
    pub order: StageOrder,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            machine_id: 1,
            smoothing_window: 24,
            fusion_window: 3,
            train_fraction: 0.7,
            order: StageOrder::SmoothThenFuse,
        }
    }
}

/// Every intermediate frame of one preprocessing run.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub raw: FeatureFrame,
    pub smoothed: FeatureFrame,
    /// Final averaged frame, the input of the split, whichever order ran.
    pub fused: FeatureFrame,
    /// Physical-scale partitions.
    pub train: FeatureFrame,
    pub test: FeatureFrame,
    pub scaler: Scaler,
    pub train_scaled: FeatureFrame,
    pub test_scaled: FeatureFrame,
}

impl PreparedData {
    /// Row counts: raw, smoothed, fused, train, test.
    pub fn stage_counts(&self) -> [usize; 5] {
        [
            self.raw.len(),
            self.smoothed.len(),
            self.fused.len(),
            self.train.len(),
            self.test.len(),
        ]
    }
}

pub fn prepare(records: &[TelemetryRecord], config: &PipelineConfig) -> Result<PreparedData> {
    let raw = filter_machine(records, config.machine_id)?;
    let (smoothed, fused) = match config.order {
        StageOrder::SmoothThenFuse => {
            let smoothed = rolling_average(&raw, config.smoothing_window)?;
            let fused = fusion_windows(&smoothed, config.fusion_window)?;
            (smoothed, fused)
        }
        StageOrder::FuseThenSmooth => {
            let fused = fusion_windows(&raw, config.fusion_window)?;
            let smoothed = rolling_average(&fused, config.smoothing_window)?;
            (smoothed.clone(), smoothed)
        }
    };
    let (train, test) = split_train_test(&fused, config.train_fraction)?;
    if train.is_empty() {
        return Err(Error::insufficient("training partition", 1, 0));
    }
    let scaler = fit_scaler(&train)?;
    let train_scaled = apply_scaler(&train, &scaler)?;
    let test_scaled = apply_scaler(&test, &scaler)?;
    Ok(PreparedData {
        raw,
        smoothed,
        fused,
        train,
        test,
        scaler,
        train_scaled,
        test_scaled,
    })
}
