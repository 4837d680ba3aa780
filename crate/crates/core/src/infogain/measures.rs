//! Closed-form information measures over Gaussian predictions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numkit::{cholesky_logdet, logdet_psd, Matrix};

/// Eigenvalue slack tolerated before a covariance is rejected as non-PSD.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Full(Matrix),
}

/// Predicted next-state distribution in state units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrediction {
    pub mean: Vec<f64>,
    pub cov: Covariance,
}

impl GaussianPrediction {
    pub fn diagonal(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return shape_err("mean and variance lengths differ");
        }
        if let Some(v) = var.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Numeric(format!("variance must be positive and finite, got {v}")));
        }
        Ok(Self {
            mean,
            cov: Covariance::Diagonal(var),
        })
    }

    pub fn full(mean: Vec<f64>, cov: Matrix) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return shape_err("covariance shape does not match mean");
        }
        if !cov.is_symmetric(1e-9) {
            return Err(Error::Numeric("covariance is not symmetric".into()));
        }
        Ok(Self {
            mean,
            cov: Covariance::Full(cov),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.cov, Covariance::Diagonal(_))
    }

    /// Marginal variances.
    pub fn variances(&self) -> Vec<f64> {
        match &self.cov {
            Covariance::Diagonal(v) => v.clone(),
            Covariance::Full(m) => m.diag(),
        }
    }

    pub fn cov_matrix(&self) -> Matrix {
        match &self.cov {
            Covariance::Diagonal(v) => Matrix::from_diag(v),
            Covariance::Full(m) => m.clone(),
        }
    }

    fn logdet(&self) -> Result<f64> {
        match &self.cov {
            Covariance::Diagonal(v) => Ok(v.iter().map(|x| x.ln()).sum()),
            Covariance::Full(m) => Ok(cholesky_logdet(m, 0.0)?.logdet),
        }
    }
}

fn same_dim(p: &GaussianPrediction, q: &GaussianPrediction) -> Result<()> {
    if p.dim() != q.dim() {
        return shape_err(format!("dimension {} vs {}", p.dim(), q.dim()));
    }
    Ok(())
}

/// Differential entropy in nats.
pub fn gaussian_entropy(pred: &GaussianPrediction) -> Result<f64> {
    let d = pred.dim() as f64;
    Ok(0.5 * (d * (2.0 * PI * std::f64::consts::E).ln() + pred.logdet()?))
}

/// `KL(p ‖ q)` in nats.
pub fn gaussian_kl(p: &GaussianPrediction, q: &GaussianPrediction) -> Result<f64> {
    same_dim(p, q)?;
    let d = p.dim();
    let diff: Vec<f64> = q.mean.iter().zip(&p.mean).map(|(a, b)| a - b).collect();
    let kl = match (&p.cov, &q.cov) {
        (Covariance::Diagonal(vp), Covariance::Diagonal(vq)) => {
            let mut s = 0.0;
            for i in 0..d {
                s += vp[i] / vq[i] + diff[i] * diff[i] / vq[i] - 1.0 + (vq[i] / vp[i]).ln();
            }
            0.5 * s
        }
        _ => {
            let cq = cholesky_logdet(&q.cov_matrix(), 0.0)?;
            let sp = p.cov_matrix();
            let trace = cq.solve(&sp)?.diag().iter().sum::<f64>();
            let maha = crate::numkit::dot(&diff, &cq.solve_vec(&diff));
            0.5 * (trace + maha - d as f64 + cq.logdet - p.logdet()?)
        }
    };
    Ok(kl.max(0.0))
}

/// `log N(x | μ, S)` for a diagonal or full `S`.
fn log_normal_density(x: &[f64], mu: &[f64], s: &Covariance) -> Result<f64> {
    let d = x.len() as f64;
    let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    match s {
        Covariance::Diagonal(v) => {
            let mut q = 0.0;
            let mut ld = 0.0;
            for (di, vi) in diff.iter().zip(v) {
                q += di * di / vi;
                ld += vi.ln();
            }
            Ok(-0.5 * (d * (2.0 * PI).ln() + ld + q))
        }
        Covariance::Full(m) => {
            let c = cholesky_logdet(m, 0.0)?;
            let q = crate::numkit::dot(&diff, &c.solve_vec(&diff));
            Ok(-0.5 * (d * (2.0 * PI).ln() + c.logdet + q))
        }
    }
}

fn sum_cov(a: &Covariance, b: &Covariance) -> Result<Covariance> {
    Ok(match (a, b) {
        (Covariance::Diagonal(x), Covariance::Diagonal(y)) => {
            Covariance::Diagonal(x.iter().zip(y).map(|(p, q)| p + q).collect())
        }
        (Covariance::Diagonal(x), Covariance::Full(m)) | (Covariance::Full(m), Covariance::Diagonal(x)) => {
            let mut out = m.clone();
            for (i, v) in x.iter().enumerate() {
                out[(i, i)] += v;
            }
            Covariance::Full(out)
        }
        (Covariance::Full(m), Covariance::Full(n)) => Covariance::Full(m.add(n)?),
    })
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_components(components: &[GaussianPrediction]) -> Result<usize> {
    let first = components
        .first()
        .ok_or_else(|| Error::InvalidArgument("mixture needs at least one component".into()))?;
    for c in components {
        same_dim(first, c)?;
    }
    Ok(first.dim())
}

/// Rényi entropy of order 2 of an equally weighted Gaussian mixture:
/// `−log ∫ p(x)² dx`, available in closed form.
pub fn renyi2_mixture_entropy(components: &[GaussianPrediction]) -> Result<f64> {
    check_components(components)?;
    let n = components.len();
    let mut terms = Vec::with_capacity(n * n);
    for ci in components {
        for cj in components {
            let s = sum_cov(&ci.cov, &cj.cov)?;
            terms.push(log_normal_density(&ci.mean, &cj.mean, &s)?);
        }
    }
    Ok(-(log_sum_exp(&terms) - 2.0 * (n as f64).ln()))
}

/// Rényi-2 entropy of a single Gaussian: `½ log((4π)^d |Σ|)`.
pub fn renyi2_entropy(pred: &GaussianPrediction) -> Result<f64> {
    let d = pred.dim() as f64;
    Ok(0.5 * (d * (4.0 * PI).ln() + pred.logdet()?))
}

/// Jensen–Rényi divergence of the components: mixture Rényi-2 entropy minus
/// the mean component Rényi-2 entropy. Zero when all components coincide.
pub fn utility_jr(components: &[GaussianPrediction]) -> Result<f64> {
    let mix = renyi2_mixture_entropy(components)?;
    let mut mean_component = 0.0;
    for c in components {
        mean_component += renyi2_entropy(c)?;
    }
    mean_component /= components.len() as f64;
    Ok(mix - mean_component)
}

/// Single Gaussian with the mixture's first two moments.
pub fn moment_match(components: &[GaussianPrediction]) -> Result<GaussianPrediction> {
    let d = check_components(components)?;
    let n = components.len() as f64;
    let mut mean = vec![0.0; d];
    for c in components {
        for (m, x) in mean.iter_mut().zip(&c.mean) {
            *m += x / n;
        }
    }
    let mut cov = Matrix::zeros(d, d);
    for c in components {
        let ci = c.cov_matrix();
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (ci[(i, j)] + c.mean[i] * c.mean[j]) / n;
            }
        }
    }
    for i in 0..d {
        for j in 0..d {
            cov[(i, j)] -= mean[i] * mean[j];
        }
    }
    cov.symmetrize();
    // Cancellation in E[μμᵀ] − μ_Mμ_Mᵀ can leave tiny negative diagonals.
    for i in 0..d {
        if cov[(i, i)] < 0.0 && cov[(i, i)] > -PSD_TOL {
            cov[(i, i)] = 0.0;
        }
    }
    GaussianPrediction::full(mean, cov)
}

/// Scatter of the component means about their average.
pub fn mean_scatter(components: &[GaussianPrediction]) -> Result<Matrix> {
    let d = check_components(components)?;
    let n = components.len() as f64;
    let mut mu = vec![0.0; d];
    for c in components {
        for (m, x) in mu.iter_mut().zip(&c.mean) {
            *m += x / n;
        }
    }
    let mut s = Matrix::zeros(d, d);
    for c in components {
        for i in 0..d {
            let di = c.mean[i] - mu[i];
            for j in 0..d {
                s[(i, j)] += di * (c.mean[j] - mu[j]) / n;
            }
        }
    }
    s.symmetrize();
    Ok(s)
}

/// Sample entropy metric: `log|S + εI|` with `S` the scatter of the component
/// means (homoscedastic noise drops the per-component variances).
pub fn utility_entropy_samples(components: &[GaussianPrediction], eps: f64) -> Result<f64> {
    if components.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "sample entropy metric needs at least 2 components, got {}",
            components.len()
        )));
    }
    check_eps(eps)?;
    logdet_psd(&mean_scatter(components)?, eps)
}

pub(crate) fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {eps}")));
    }
    Ok(())
}
