//! Central finite-difference checks of [`Network::backward`].
//!
//! The probed loss is a fixed random linear functional of the output,
//! `L = sum(r * y)`, so its output gradient is exactly `r`.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;

use super::layers::Mode;
use super::network::Network;
use super::params::ParameterStore;
use crate::error::Result;
use crate::rng::rng_from_seed;

pub const FD_STEP: f64 = 1e-4;

/// Gradients smaller than this are compared absolutely; without a floor,
/// entries that are zero up to rounding would dominate the maximum.
pub const REL_FLOOR: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Name of the worst entry (`"input"` or a parameter name) and its index.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = e;
            self.worst = Some((name.to_string(), index));
        }
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        self.checked += other.checked;
        if other.max_rel_error > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
    }
}

/// Compares analytic and numeric gradients for the input and every
/// trainable parameter. At most `max_coords` entries per tensor are probed
/// (chosen at random) when given. Dropout masks are redrawn from
/// `dropout_seed` on every evaluation so the function being differentiated
/// is fixed.
pub fn check_network(
    net: &Network,
    params: &ParameterStore,
    x: ArrayView2<'_, f64>,
    mode: Mode,
    dropout_seed: u64,
    max_coords: Option<usize>,
    probe_seed: u64,
) -> Result<GradCheckReport> {
    let mut probe = rng_from_seed(probe_seed);
    let out_dim = (x.nrows(), net.output_shape().size());
    let r = Array2::from_shape_fn(out_dim, |_| probe.random_range(-1.0..1.0));

    let loss = |p: &ParameterStore, x: ArrayView2<'_, f64>| -> Result<f64> {
        let mut rng = rng_from_seed(dropout_seed);
        let pass = net.forward(p, x, mode, Some(&mut rng))?;
        Ok((&pass.output * &r).sum())
    };

    let mut rng = rng_from_seed(dropout_seed);
    let pass = net.forward(params, x, mode, Some(&mut rng))?;
    let back = net.backward(params, &pass, r.view(), true)?;

    let mut pick = |len: usize| -> Vec<usize> {
        match max_coords {
            Some(k) if k < len => (0..k).map(|_| probe.random_range(0..len)).collect(),
            _ => (0..len).collect(),
        }
    };

    let mut report = GradCheckReport::default();
    let mut xp = x.to_owned();
    for i in pick(xp.len()) {
        let orig = xp.as_slice().expect("contiguous")[i];
        xp.as_slice_mut().expect("contiguous")[i] = orig + FD_STEP;
        let up = loss(params, xp.view())?;
        xp.as_slice_mut().expect("contiguous")[i] = orig - FD_STEP;
        let down = loss(params, xp.view())?;
        xp.as_slice_mut().expect("contiguous")[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        report.record("input", i, back.input.as_slice().expect("contiguous")[i], numeric);
    }

    let mut p = params.clone();
    for (name, grad) in back.params.iter() {
        for i in pick(grad.len()) {
            let orig = p.get(name)?.values[i];
            p.get_mut(name)?.values[i] = orig + FD_STEP;
            let up = loss(&p, x)?;
            p.get_mut(name)?.values[i] = orig - FD_STEP;
            let down = loss(&p, x)?;
            p.get_mut(name)?.values[i] = orig;
            report.record(name, i, grad[i], (up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(report)
}
