//! Lyapunov spectra: the closed form, the Lyapunov dimension, and a
//! Benettin-style QR estimator driven by simulated Jacobians.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{steps_for, FlowIntegrator, FlowState, SimConfig};
use crate::points::Points;
use crate::rng::normal;
use crate::stats::mean_se;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    QrEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LyapunovSpectrum {
    pub exponents: Vec<f64>,
    /// Standard errors, for estimates.
    pub stderr: Option<Vec<f64>>,
    pub multiplicities: Vec<usize>,
    pub provenance: Provenance,
}

impl LyapunovSpectrum {
    pub fn top(&self) -> f64 {
        self.exponents[0]
    }

    pub fn sum(&self) -> f64 {
        self.exponents.iter().zip(&self.multiplicities).map(|(l, m)| l * *m as f64).sum()
    }

    pub fn dimension(&self) -> Result<f64> {
        lyapunov_dimension(&self.exponents, &self.multiplicities)
    }

    /// `lambda_1 = 0`, where the dimension formula has no admissible `k`.
    pub fn is_boundary(&self) -> bool {
        self.exponents[0] == 0.0
    }
}

/// `lambda_i = (d - i) beta_N / 2 - i beta_L / 2 - c` for `i = 1..d`.
pub fn closed_form_spectrum(beta_l: f64, beta_n: f64, c: f64, d: usize) -> Result<LyapunovSpectrum> {
    if !(beta_l > 0.0 && beta_n > 0.0 && beta_l.is_finite() && beta_n.is_finite()) {
        return Err(Error::InvalidModel(format!("beta_L = {beta_l}, beta_N = {beta_n} must be positive")));
    }
    if !(c.is_finite() && c > 0.0) || d < 2 {
        return Err(Error::InvalidModel(format!("need c > 0 and d >= 2, got c = {c}, d = {d}")));
    }
    let exponents = (1..=d)
        .map(|i| (d - i) as f64 * beta_n / 2.0 - i as f64 * beta_l / 2.0 - c)
        .collect();
    Ok(LyapunovSpectrum { exponents, stderr: None, multiplicities: vec![1; d], provenance: Provenance::ClosedForm })
}

pub fn model_spectrum(model: &crate::CorrelationModel) -> Result<LyapunovSpectrum> {
    let (bl, bn) = model.beta_coefficients();
    closed_form_spectrum(bl, bn, model.drift(), model.dim())
}

/// Lyapunov dimension of exponents `lambda_1 > ... > lambda_r` with
/// multiplicities `m_i`. Let `k` be the largest index with
/// `sum_{i<=k} lambda_i m_i > 0`; then `D = d` if `sum_{i<=k} m_i = d` and
/// `D = sum_{i<=k} m_i - sum_{i<=k} lambda_i m_i / lambda_{k+1}` otherwise.
/// When no such `k` exists (`lambda_1 <= 0`) the equilibrium is a Dirac
/// measure and `D = 0`.
pub fn lyapunov_dimension(exponents: &[f64], multiplicities: &[usize]) -> Result<f64> {
    if exponents.is_empty() || exponents.len() != multiplicities.len() {
        return Err(Error::InvalidConfig("exponents and multiplicities must be non-empty and of equal length".into()));
    }
    if exponents.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Lyapunov exponents".into()));
    }
    if exponents.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::UnorderedSpectrum);
    }
    let d: usize = multiplicities.iter().sum();
    let mut partial = 0.0;
    let mut k = 0;
    let mut acc = 0.0;
    for (i, (l, m)) in exponents.iter().zip(multiplicities).enumerate() {
        partial += l * *m as f64;
        if partial > 0.0 {
            k = i + 1;
            acc = partial;
        }
    }
    if k == 0 {
        return Ok(0.0);
    }
    let mk: usize = multiplicities[..k].iter().sum();
    if mk == d {
        return Ok(d as f64);
    }
    Ok(mk as f64 - acc / exponents[k])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QrOptions {
    /// Steps between re-orthonormalizations.
    pub reortho_stride: usize,
    pub batches: usize,
    /// Start every replica from a random orthogonal frame instead of `Id`.
    pub random_frame: bool,
}

impl Default for QrOptions {
    fn default() -> Self {
        QrOptions { reortho_stride: 10, batches: 10, random_frame: false }
    }
}

/// Largest admissible `R_11 / R_dd` between re-orthonormalizations.
pub const CONDITION_LIMIT: f64 = 1e8;

#[derive(Debug, Clone, Serialize)]
pub struct QrReplica {
    pub replica: u64,
    pub exponents: Vec<f64>,
    /// `batches x d` batch means.
    pub batch_means: Vec<Vec<f64>>,
    pub stride_used: usize,
}

/// A Haar-distributed orthogonal matrix, row-major.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| normal(rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[i * d + j] = q[(i, j)] * r[(j, j)].signum();
        }
    }
    out
}

fn orthonormalize(j: &mut [f64], d: usize, logs: &mut [f64]) -> f64 {
    let m = DMatrix::from_row_slice(d, d, j);
    let qr = m.qr();
    let (q, r) = (qr.q(), qr.r());
    for k in 0..d {
        let rk = r[(k, k)];
        logs[k] += rk.abs().ln();
        let s = rk.signum();
        for i in 0..d {
            j[i * d + k] = q[(i, k)] * s;
        }
    }
    r[(0, 0)].abs() / r[(d - 1, d - 1)].abs()
}

/// Runs one replica of the QR estimator.
pub fn qr_replica(config: &SimConfig, options: &QrOptions) -> Result<QrReplica> {
    let d = config.model.dim();
    if options.reortho_stride == 0 || options.batches == 0 {
        return Err(Error::InvalidConfig("stride and batch count must be positive".into()));
    }
    let cfg = SimConfig { track_jacobians: true, ..config.clone() };
    let (n_steps, _) = steps_for(cfg.horizon, cfg.dt);
    if n_steps < options.batches as u64 {
        return Err(Error::InsufficientData("fewer steps than batches".into()));
    }
    let mut flow = FlowIntegrator::new(cfg.clone())?;
    let mut state = FlowState::new(Points::zeros(d, 1), true);
    if options.random_frame {
        let q = random_orthogonal(d, flow.stream());
        state.jacobians = Some(q);
    }
    let mut stride = options.reortho_stride;
    let mut halved = false;
    let per_batch = n_steps / options.batches as u64;
    let mut batch_means = Vec::with_capacity(options.batches);
    let mut total = vec![0.0; d];
    let mut step = 0u64;
    for b in 0..options.batches {
        let end = if b + 1 == options.batches { n_steps } else { (b as u64 + 1) * per_batch };
        let t_start = state.t;
        let mut logs = vec![0.0; d];
        let mut since = 0usize;
        while step < end {
            flow.step(&mut state)?;
            step += 1;
            since += 1;
            if since == stride || step == end {
                let cond = orthonormalize(state.jacobians.as_mut().unwrap(), d, &mut logs);
                since = 0;
                if cond.is_nan() || cond > CONDITION_LIMIT {
                    if halved || stride == 1 {
                        return Err(Error::Numerical(format!(
                            "Jacobian condition number {cond:e} exceeds {CONDITION_LIMIT:e} at stride {stride}"
                        )));
                    }
                    stride = (stride / 2).max(1);
                    halved = true;
                }
            }
        }
        let span = state.t - t_start;
        batch_means.push(logs.iter().map(|v| v / span).collect::<Vec<_>>());
        for (t, v) in total.iter_mut().zip(&logs) {
            *t += v;
        }
    }
    let exponents = total.iter().map(|v| v / state.t).collect();
    Ok(QrReplica { replica: config.replica, exponents, batch_means, stride_used: stride })
}

/// Pools `replicas` independent QR runs (replica indices `0..replicas`).
/// Exponents are the time-weighted mean; standard errors come from the
/// spread of all batch means.
pub fn estimate_spectrum_qr(
    config: &SimConfig,
    replicas: usize,
    options: &QrOptions,
) -> Result<(LyapunovSpectrum, Vec<QrReplica>)> {
    if replicas == 0 {
        return Err(Error::InvalidConfig("need at least one replica".into()));
    }
    let runs: Vec<QrReplica> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| qr_replica(&SimConfig { replica: r, ..config.clone() }, options))
        .collect::<Result<_>>()?;
    let d = config.model.dim();
    let mut exponents = Vec::with_capacity(d);
    let mut stderr = Vec::with_capacity(d);
    for k in 0..d {
        let means: Vec<f64> = runs.iter().flat_map(|r| r.batch_means.iter().map(move |b| b[k])).collect();
        let ms = mean_se(&means);
        exponents.push(runs.iter().map(|r| r.exponents[k]).sum::<f64>() / runs.len() as f64);
        stderr.push(ms.se);
    }
    let spectrum =
        LyapunovSpectrum { exponents, stderr: Some(stderr), multiplicities: vec![1; d], provenance: Provenance::QrEstimate };
    Ok((spectrum, runs))
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumSummary {
    pub closed_form: Vec<f64>,
    pub estimates: Vec<f64>,
    pub stderr: Vec<f64>,
    #[serde(rename = "D_closed")]
    pub d_closed: f64,
    /// `None` when the estimated exponents are not strictly ordered.
    #[serde(rename = "D_estimated")]
    pub d_estimated: Option<f64>,
    pub boundary: bool,
}

pub fn summarize(closed: &LyapunovSpectrum, estimated: &LyapunovSpectrum) -> Result<SpectrumSummary> {
    Ok(SpectrumSummary {
        closed_form: closed.exponents.clone(),
        estimates: estimated.exponents.clone(),
        stderr: estimated.stderr.clone().unwrap_or_default(),
        d_closed: closed.dimension()?,
        d_estimated: estimated.dimension().ok(),
        boundary: closed.is_boundary(),
    })
}
