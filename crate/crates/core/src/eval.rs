//! Baselines and the RMSE comparison table.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Per-feature root mean squared error.
pub fn rmse(predicted: ArrayView2<'_, f64>, actual: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    if predicted.dim() != actual.dim() || predicted.nrows() == 0 {
        return Err(Error::Shape(format!(
            "rmse: predicted {:?} vs actual {:?}",
            predicted.dim(),
            actual.dim()
        )));
    }
    let k = predicted.nrows() as f64;
    Ok((0..predicted.ncols())
        .map(|j| {
            let sse: f64 = predicted
                .column(j)
                .iter()
                .zip(actual.column(j))
                .map(|(p, a)| (p - a) * (p - a))
                .sum();
            (sse / k).sqrt()
        })
        .collect())
}

/// One feature's autoregression on its `d`-times differenced series.
#[derive(Debug, Clone, PartialEq)]
pub struct ArFeature {
    pub intercept: f64,
    /// `phi_1 .. phi_p`, lag 1 first.
    pub coefficients: Vec<f64>,
    /// Last `p` values of the differenced series, oldest first.
    recent: Vec<f64>,
    /// Last value at each differencing level `0 .. d`, used to integrate.
    anchors: Vec<f64>,
}

/// AR(p) with `d`-fold differencing, one independent model per feature.
#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    pub p: usize,
    pub d: usize,
    pub features: Vec<ArFeature>,
}

fn difference(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

fn fit_feature(series: ArrayView1<'_, f64>, p: usize, d: usize, feature: usize) -> Result<ArFeature> {
    let mut level = series.to_vec();
    let mut anchors = Vec::with_capacity(d);
    for _ in 0..d {
        anchors.push(*level.last().expect("non-empty"));
        level = difference(&level);
    }
    let recent = level[level.len() - p..].to_vec();
    let first = level[0];
    if level.iter().all(|v| *v == first) {
        // Every AR fit reproduces a constant; pick the one without lags.
        return Ok(ArFeature {
            intercept: first,
            coefficients: vec![0.0; p],
            recent,
            anchors,
        });
    }
    let rows = level.len() - p;
    let x = DMatrix::from_fn(rows, p + 1, |r, c| if c == 0 { 1.0 } else { level[r + p - c] });
    let y = DVector::from_iterator(rows, level[p..].iter().copied());
    let svd = x.clone().svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    if smin <= smax * 1e-10 {
        return Err(Error::Fit(format!(
            "feature {feature}: lagged design is singular for p = {p}; try a smaller order"
        )));
    }
    let beta = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::Fit(format!("feature {feature}: {e}")))?;
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Fit(format!("feature {feature}: non-finite coefficients")));
    }
    Ok(ArFeature {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        recent,
        anchors,
    })
}

/// Fits each column of `train` (`len x m`) by ordinary least squares.
pub fn ar_fit(train: ArrayView2<'_, f64>, p: usize, d: usize) -> Result<ArModel> {
    if train.nrows() <= p + d + 1 {
        return Err(Error::insufficient("AR fit", p + d + 2, train.nrows()));
    }
    let features = train
        .axis_iter(Axis(1))
        .enumerate()
        .map(|(j, col)| fit_feature(col, p, d, j))
        .collect::<Result<Vec<_>>>()?;
    Ok(ArModel { p, d, features })
}

/// Recursive `horizon`-step forecast, integrated back `d` times.
pub fn ar_forecast(model: &ArModel, horizon: usize) -> Array2<f64> {
    let mut out = Array2::zeros((horizon, model.features.len()));
    for (j, f) in model.features.iter().enumerate() {
        let mut recent = f.recent.clone();
        let mut anchors = f.anchors.clone();
        for t in 0..horizon {
            let mut next = f.intercept;
            for (i, phi) in f.coefficients.iter().enumerate() {
                next += phi * recent[recent.len() - 1 - i];
            }
            if !recent.is_empty() {
                recent.remove(0);
                recent.push(next);
            }
            // Integrate from the deepest differencing level outwards.
            let mut value = next;
            for a in anchors.iter_mut().rev() {
                value += *a;
                *a = value;
            }
            out[[t, j]] = value;
        }
    }
    out
}

/// Repeats the per-feature training mean.
pub fn mean_forecast(train: ArrayView2<'_, f64>, horizon: usize) -> Result<Array2<f64>> {
    let mean: Array1<f64> = train
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::insufficient("mean baseline", 1, 0))?;
    Ok(Array2::from_shape_fn((horizon, mean.len()), |(_, j)| mean[j]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRmse {
    pub method: String,
    pub per_feature: Vec<f64>,
}

impl MethodRmse {
    pub fn average(&self) -> f64 {
        self.per_feature.iter().sum::<f64>() / self.per_feature.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmseReport {
    pub features: Vec<String>,
    pub methods: Vec<MethodRmse>,
    /// Rows scored per method.
    pub samples: usize,
}

/// Scores each method on the first `k` rows of `test`, where `k` is the
/// common forecast length.
pub fn evaluate(
    forecasts: &[(&str, ArrayView2<'_, f64>)],
    test: ArrayView2<'_, f64>,
    feature_names: &[String],
) -> Result<RmseReport> {
    let k = forecasts
        .first()
        .map(|(_, f)| f.nrows())
        .ok_or_else(|| Error::Alignment("no forecasts to evaluate".into()))?;
    let lengths = || {
        forecasts
            .iter()
            .map(|(name, f)| format!("{name}: {} rows", f.nrows()))
            .collect::<Vec<_>>()
            .join(", ")
    };
    if forecasts.iter().any(|(_, f)| f.nrows() != k) || k == 0 || k > test.nrows() {
        return Err(Error::Alignment(format!(
            "forecasts must share a length within the {} test rows ({})",
            test.nrows(),
            lengths()
        )));
    }
    if feature_names.len() != test.ncols() {
        return Err(Error::Shape(format!(
            "{} feature names for {} columns",
            feature_names.len(),
            test.ncols()
        )));
    }
    let actual = test.slice(ndarray::s![..k, ..]);
    let methods = forecasts
        .iter()
        .map(|(name, f)| {
            Ok(MethodRmse {
                method: name.to_string(),
                per_feature: rmse(*f, actual)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RmseReport {
        features: feature_names.to_vec(),
        methods,
        samples: k,
    })
}

impl RmseReport {
    pub fn method(&self, name: &str) -> Option<&MethodRmse> {
        self.methods.iter().find(|m| m.method == name)
    }

    /// Features as rows, methods as columns, average last.
    pub fn to_text(&self) -> String {
        let label_w = self.features.iter().map(String::len).max().unwrap_or(0).max("average".len());
        let col_w: Vec<usize> = self.methods.iter().map(|m| m.method.len().max(10)).collect();
        let mut out = String::new();
        let _ = write!(out, "{:<label_w$}", "feature");
        for (m, w) in self.methods.iter().zip(&col_w) {
            let _ = write!(out, "  {:>w$}", m.method);
        }
        out.push('\n');
        let mut row = |label: &str, values: Vec<f64>| {
            let _ = write!(out, "{label:<label_w$}");
            for (v, w) in values.iter().zip(&col_w) {
                let _ = write!(out, "  {v:>w$.3}");
            }
            out.push('\n');
        };
        for (j, f) in self.features.iter().enumerate() {
            row(f, self.methods.iter().map(|m| m.per_feature[j]).collect());
        }
        row("average", self.methods.iter().map(MethodRmse::average).collect());
        out
    }

    /// `feature,<method>...` with a trailing `average` row.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("feature");
        for m in &self.methods {
            out.push(',');
            out.push_str(&m.method);
        }
        out.push('\n');
        for (j, f) in self.features.iter().enumerate() {
            out.push_str(f);
            for m in &self.methods {
                let _ = write!(out, ",{}", m.per_feature[j]);
            }
            out.push('\n');
        }
        out.push_str("average");
        for m in &self.methods {
            let _ = write!(out, ",{}", m.average());
        }
        out.push('\n');
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Plot data for one feature: `step,actual,predicted,method`.
pub fn write_plot_csv(
    path: &Path,
    feature: usize,
    actual: ArrayView2<'_, f64>,
    forecasts: &[(&str, ArrayView2<'_, f64>)],
) -> Result<()> {
    let mut out = String::from("step,actual,predicted,method\n");
    for (name, f) in forecasts {
        if f.nrows() > actual.nrows() || feature >= f.ncols() || feature >= actual.ncols() {
            return Err(Error::Alignment(format!(
                "{name}: {} rows against {} actual rows",
                f.nrows(),
                actual.nrows()
            )));
        }
        for t in 0..f.nrows() {
            let _ = writeln!(out, "{t},{},{},{name}", actual[[t, feature]], f[[t, feature]]);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
