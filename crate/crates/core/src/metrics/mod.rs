//! Calibration, coverage, storage and timing metrics, plus run reports.

mod calibration;
mod report;

pub use calibration::{bench_backends, calibration_run, CalibrationRecord, TimingRow};
pub use report::{fmt_sig6, line_plot_svg, report, Series, COVERAGE_BINS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of sparsification bins.
pub const AUSE_BINS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsificationCurves {
    /// Fraction of points removed at each curve position.
    pub fractions: Vec<f64>,
    /// Normalized RMSE when removing by decreasing uncertainty.
    pub uncertainty: Vec<f64>,
    /// Normalized RMSE when removing by decreasing true error.
    pub oracle: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ause {
    pub value: f64,
    pub curves: SparsificationCurves,
}

fn removal_order(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&i, &j| keys[j].total_cmp(&keys[i]).then(i.cmp(&j)));
    idx
}

fn sparsification_curve(errors: &[f64], order: &[usize], bins: usize, full: f64) -> Vec<f64> {
    let n = errors.len();
    (0..bins)
        .map(|k| {
            let removed = k * n / bins;
            let kept = &order[removed..];
            let mse = kept.iter().map(|&i| errors[i] * errors[i]).sum::<f64>() / kept.len() as f64;
            if full > 0.0 {
                mse.sqrt() / full
            } else {
                0.0
            }
        })
        .collect()
}

/// Area under the sparsification error curve with `bins` removal fractions
/// `k/bins`, `k = 0..bins`.
pub fn ause(errors: &[f64], uncertainties: &[f64], bins: usize) -> Result<Ause> {
    if errors.len() != uncertainties.len() {
        return Err(Error::Shape(format!(
            "ause: {} errors vs {} uncertainties",
            errors.len(),
            uncertainties.len()
        )));
    }
    if bins < 2 || bins > errors.len() {
        return Err(Error::InvalidArgument(format!(
            "ause: need 2 <= bins <= n, got bins = {bins}, n = {}",
            errors.len()
        )));
    }
    if errors.iter().chain(uncertainties).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("ause: non-finite input".into()));
    }
    let n = errors.len();
    let full = (errors.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    let uncertainty = sparsification_curve(errors, &removal_order(uncertainties), bins, full);
    let oracle = sparsification_curve(errors, &removal_order(errors), bins, full);
    let value = uncertainty.iter().zip(&oracle).map(|(u, o)| u - o).sum::<f64>() / bins as f64;
    Ok(Ause {
        value,
        curves: SparsificationCurves {
            fractions: (0..bins).map(|k| (k * n / bins) as f64 / n as f64).collect(),
            uncertainty,
            oracle,
        },
    })
}

/// Histogram bounds over the first two state dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl GridBounds {
    /// Grid covering the reachable region of a built-in environment.
    pub fn for_env(name: &str) -> Self {
        match name {
            "point_mass" => Self {
                x: (-1.0, 1.0),
                y: (-0.5, 0.5),
            },
            _ => Self {
                x: (-1.0, 1.0),
                y: (-1.0, 1.0),
            },
        }
    }
}

fn bin_of(v: f64, (lo, hi): (f64, f64), bins: usize) -> usize {
    let u = ((v - lo) / (hi - lo) * bins as f64).floor();
    if u.is_nan() {
        0
    } else {
        (u.max(0.0) as usize).min(bins - 1)
    }
}

/// Shannon entropy (nats) of the state histogram over the first two
/// dimensions; points outside `bounds` count in the nearest edge bin.
pub fn coverage_entropy<S: AsRef<[f64]>>(states: &[S], bins: usize, bounds: GridBounds) -> Result<f64> {
    if states.is_empty() {
        return Err(Error::InvalidArgument(
            "coverage_entropy needs at least one state".into(),
        ));
    }
    if bins == 0 {
        return Err(Error::InvalidArgument("coverage_entropy needs bins >= 1".into()));
    }
    let mut counts = vec![0usize; bins * bins];
    for s in states {
        let s = s.as_ref();
        if s.len() < 2 {
            return Err(Error::Shape(format!(
                "coverage_entropy needs 2-D states, got {}",
                s.len()
            )));
        }
        counts[bin_of(s[0], bounds.x, bins) * bins + bin_of(s[1], bounds.y, bins)] += 1;
    }
    let n = states.len() as f64;
    Ok(-counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * p.ln()
        })
        .sum::<f64>())
}

/// Parameters stored by a posterior: `n_ens` full networks plus a dense
/// covariance over the subnetwork.
pub fn storage_cost(n_ens: u64, n_weights: u64, n_subnet: u64) -> u128 {
    u128::from(n_ens) * u128::from(n_weights) + u128::from(n_subnet) * u128::from(n_subnet)
}
