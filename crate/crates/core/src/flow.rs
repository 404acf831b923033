//! Euler-type integration of IOUF n-point motions and their Jacobians.
//!
//! Positions follow `dx = F(dt, x) - c x dt` and each tracked Jacobian follows
//! the variational equation `dJ = dDF(x) J - c J dt`, driven by the same
//! field draw. Increments are frozen at start-of-step positions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::correlation::CorrelationModel;
use crate::dimension::{EmpiricalMeasure, MeasureMeta};
use crate::error::{Error, Result};
use crate::points::Points;
use crate::rng::{fill_normal, replica_stream, Stream};
use crate::sampler::{CovarianceFactor, IncrementRequest, IncrementSample, SamplerKind, SpectralSampler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
    /// The linear drift is applied exactly as the factor `exp(-c dt)`.
    ExponentialEuler,
}

/// Largest pullback cloud accepted, in stored coordinates.
pub const MAX_CLOUD_COORDINATES: usize = 50_000_000;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub model: CorrelationModel,
    pub dt: f64,
    pub horizon: f64,
    pub track_jacobians: bool,
    pub scheme: Scheme,
    pub sampler: SamplerKind,
    /// Multiplies every field increment; `0` gives the deterministic flow.
    pub noise_scale: f64,
    pub seed: u64,
    pub replica: u64,
    /// Steps between stored frames of a trajectory.
    pub stride: usize,
    /// Skips the step-size guard.
    pub override_dt_guard: bool,
}

impl SimConfig {
    pub fn new(model: CorrelationModel) -> Self {
        let dt = stable_dt(&model);
        SimConfig {
            model,
            dt,
            horizon: 1.0,
            track_jacobians: false,
            scheme: Scheme::EulerMaruyama,
            sampler: SamplerKind::Exact,
            noise_scale: 1.0,
            seed: 0,
            replica: 0,
            stride: 1,
            override_dt_guard: false,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_jacobians(mut self, track: bool) -> Self {
        self.track_jacobians = track;
        self
    }

    pub fn with_scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_sampler(mut self, sampler: SamplerKind) -> Self {
        self.sampler = sampler;
        self
    }

    pub fn with_noise_scale(mut self, a: f64) -> Self {
        self.noise_scale = a;
        self
    }

    pub fn with_seed(mut self, seed: u64, replica: u64) -> Self {
        self.seed = seed;
        self.replica = replica;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn overriding_dt_guard(mut self) -> Self {
        self.override_dt_guard = true;
        self
    }

    pub fn dt_limit(&self) -> f64 {
        stable_dt(&self.model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::InvalidConfig(format!("horizon must be non-negative, got {}", self.horizon)));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::InvalidConfig(format!("noise scale must be non-negative, got {}", self.noise_scale)));
        }
        if self.stride == 0 {
            return Err(Error::InvalidConfig("stride must be at least 1".into()));
        }
        let limit = self.dt_limit();
        if !self.override_dt_guard && self.dt > limit * (1.0 + 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "dt = {} exceeds the stability guard {limit:.6e}; lower it or override the guard",
                self.dt
            )));
        }
        Ok(())
    }

    /// Number of steps and the length of the last one.
    pub fn steps(&self) -> (u64, f64) {
        steps_for(self.horizon, self.dt)
    }

    /// Stable one-line description of everything that determines the output.
    pub fn fingerprint(&self) -> String {
        format!(
            "model={};dt={:?};T={:?};jac={};scheme={:?};sampler={:?};a={:?};seed={};replica={};stride={}",
            self.model.describe(),
            self.dt,
            self.horizon,
            self.track_jacobians,
            self.scheme,
            self.sampler,
            self.noise_scale,
            self.seed,
            self.replica,
            self.stride
        )
    }
}

/// `min(0.01 / c, 0.01 l^2 min(1 / beta_L, 1 / beta_N))`.
pub fn stable_dt(model: &CorrelationModel) -> f64 {
    let l2 = model.length_scale().powi(2);
    let (bl, bn) = model.beta_coefficients();
    (0.01 / model.drift()).min(0.01 * l2 * (1.0 / bl).min(1.0 / bn))
}

pub(crate) fn steps_for(horizon: f64, dt: f64) -> (u64, f64) {
    if horizon <= 0.0 {
        return (0, 0.0);
    }
    let n = (horizon / dt - 1e-9).ceil().max(1.0) as u64;
    let last = horizon - (n - 1) as f64 * dt;
    (n, last)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub positions: Points,
    /// Row-major `d x d` per point, when tracked.
    pub jacobians: Option<Vec<f64>>,
}

impl FlowState {
    pub fn new(positions: Points, track_jacobians: bool) -> Self {
        let (n, d) = (positions.len(), positions.dim());
        let jacobians = track_jacobians.then(|| {
            let mut j = vec![0.0; n * d * d];
            for p in 0..n {
                for i in 0..d {
                    j[p * d * d + i * d + i] = 1.0;
                }
            }
            j
        });
        FlowState { t: 0.0, positions, jacobians }
    }

    pub fn jacobian(&self, p: usize) -> Option<&[f64]> {
        let dd = self.positions.dim().pow(2);
        self.jacobians.as_ref().map(|j| &j[p * dd..(p + 1) * dd])
    }

    pub fn is_finite(&self) -> bool {
        self.positions.is_finite() && self.jacobians.as_ref().is_none_or(|j| j.iter().all(|v| v.is_finite()))
    }
}

enum Engine {
    Exact { cached: Option<(bool, CovarianceFactor)> },
    Spectral(SpectralSampler),
}

/// Owns the random stream of one replica and advances states with it.
pub struct FlowIntegrator {
    config: SimConfig,
    rng: Stream,
    engine: Engine,
}

impl FlowIntegrator {
    pub fn new(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let rng = replica_stream(config.seed, config.replica);
        Self::with_stream(config, rng)
    }

    /// Uses a caller-provided stream instead of the one derived from the
    /// configured seed and replica.
    pub fn with_stream(config: SimConfig, rng: Stream) -> Result<Self> {
        config.validate()?;
        let engine = match config.sampler {
            SamplerKind::Exact => Engine::Exact { cached: None },
            SamplerKind::Spectral { modes } => Engine::Spectral(SpectralSampler::new(&config.model, modes)?),
        };
        Ok(FlowIntegrator { config, rng, engine })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn stream(&mut self) -> &mut Stream {
        &mut self.rng
    }

    fn draw(&mut self, positions: &Points, with_gradients: bool, dt: f64) -> Result<IncrementSample> {
        let model = &self.config.model;
        match &mut self.engine {
            Engine::Spectral(s) => s.sample(&IncrementRequest::new(positions, with_gradients, dt), &mut self.rng),
            Engine::Exact { cached } => {
                // unit-time factor, scaled by sqrt(dt) on use; a single point
                // always sees the covariance at z = 0
                let unit = IncrementRequest::new(positions, with_gradients, 1.0);
                let mut s = if positions.len() == 1 {
                    if cached.as_ref().is_none_or(|(g, _)| *g != with_gradients) {
                        *cached = Some((with_gradients, CovarianceFactor::new(model, &unit)?));
                    }
                    cached.as_ref().unwrap().1.sample(&mut self.rng)
                } else {
                    CovarianceFactor::new(model, &unit)?.sample(&mut self.rng)
                };
                let k = dt.sqrt();
                s.df.iter_mut().for_each(|v| *v *= k);
                if let Some(g) = s.ddf.as_mut() {
                    g.iter_mut().for_each(|v| *v *= k);
                }
                Ok(s)
            }
        }
    }

    /// Advances `state` by one step of length `dt`.
    pub fn step_by(&mut self, state: &mut FlowState, dt: f64) -> Result<()> {
        let d = state.positions.dim();
        let n = state.positions.len();
        let c = self.config.model.drift();
        let a = self.config.noise_scale;
        let with_gradients = state.jacobians.is_some();
        let inc = if a == 0.0 || n == 0 { None } else { Some(self.draw(&state.positions, with_gradients, dt)?) };
        let decay = match self.config.scheme {
            Scheme::EulerMaruyama => 1.0 - c * dt,
            Scheme::ExponentialEuler => (-c * dt).exp(),
        };
        if let Some(jac) = state.jacobians.as_mut() {
            let mut tmp = vec![0.0; d * d];
            for p in 0..n {
                let jp = &mut jac[p * d * d..(p + 1) * d * d];
                match inc.as_ref().and_then(|s| s.ddf_at(p)) {
                    Some(g) => {
                        for i in 0..d {
                            for j in 0..d {
                                let mut v = decay * jp[i * d + j];
                                for k in 0..d {
                                    v += a * g[i * d + k] * jp[k * d + j];
                                }
                                tmp[i * d + j] = v;
                            }
                        }
                        jp.copy_from_slice(&tmp);
                    }
                    None => jp.iter_mut().for_each(|v| *v *= decay),
                }
            }
        }
        let flat = state.positions.as_flat_mut();
        match &inc {
            Some(s) => {
                for (x, df) in flat.iter_mut().zip(&s.df) {
                    *x = decay * *x + a * df;
                }
            }
            None => flat.iter_mut().for_each(|x| *x *= decay),
        }
        state.t += dt;
        if !state.is_finite() {
            return Err(Error::NonFinite(format!("flow state at t = {}", state.t)));
        }
        Ok(())
    }

    pub fn step(&mut self, state: &mut FlowState) -> Result<()> {
        let dt = self.config.dt;
        self.step_by(state, dt)
    }

    /// Integrates `state` forward by `duration`, calling `observe` after every
    /// step with the step index (from 1).
    pub fn advance(
        &mut self,
        state: &mut FlowState,
        duration: f64,
        mut observe: impl FnMut(u64, &FlowState),
    ) -> Result<()> {
        let (n, last) = steps_for(duration, self.config.dt);
        for k in 1..=n {
            let h = if k == n { last } else { self.config.dt };
            self.step_by(state, h)?;
            observe(k, state);
        }
        Ok(())
    }
}

/// Down-sampled states of one replica.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub fingerprint: String,
    pub replica: u64,
    pub frames: Vec<FlowState>,
}

/// Runs one replica from `initial`, storing every `stride`-th state and the
/// terminal one.
pub fn simulate(config: &SimConfig, initial: &Points) -> Result<Trajectory> {
    if initial.dim() != config.model.dim() {
        return Err(Error::InvalidConfig("initial points do not match the model dimension".into()));
    }
    let mut flow = FlowIntegrator::new(config.clone())?;
    let mut state = FlowState::new(initial.clone(), config.track_jacobians);
    let mut frames = vec![state.clone()];
    let (n, _) = config.steps();
    let stride = config.stride as u64;
    flow.advance(&mut state, config.horizon, |k, s| {
        if k % stride == 0 || k == n {
            frames.push(s.clone());
        }
    })?;
    Ok(Trajectory { fingerprint: config.fingerprint(), replica: config.replica, frames })
}

/// Draws `n` i.i.d. points from the one-point invariant law `N(0, I / 2c)`.
pub fn sample_invariant<R: Rng + ?Sized>(model: &CorrelationModel, n: usize, rng: &mut R) -> Points {
    let d = model.dim();
    let mut coords = vec![0.0; n * d];
    fill_normal(rng, &mut coords);
    let sd = (0.5 / model.drift()).sqrt();
    coords.iter_mut().for_each(|v| *v *= sd);
    Points::from_flat(d, coords).expect("consistent shape")
}

/// Pushes an i.i.d. sample of the one-point invariant law through one flow
/// realization and returns the cloud at every horizon in `horizons`.
///
/// All points share the field, so the cloud at horizon `T` is distributed as
/// the pullback of `nu` over a window of length `T` by stationarity of the
/// increments. Clouds at different horizons come from the same realization.
pub fn pullback_snapshots(config: &SimConfig, n_samples: usize, horizons: &[f64]) -> Result<Vec<EmpiricalMeasure>> {
    let d = config.model.dim();
    if n_samples.saturating_mul(d) > MAX_CLOUD_COORDINATES {
        return Err(Error::InvalidConfig(format!("pullback cloud of {n_samples} points exceeds the memory guard")));
    }
    if horizons.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::InvalidConfig("pullback horizons must be non-negative".into()));
    }
    let mut order: Vec<usize> = (0..horizons.len()).collect();
    order.sort_by(|&a, &b| horizons[a].total_cmp(&horizons[b]));
    let cfg = SimConfig { track_jacobians: false, ..config.clone() };
    let mut flow = FlowIntegrator::new(cfg)?;
    let initial = sample_invariant(&config.model, n_samples, flow.stream());
    let mut state = FlowState::new(initial, false);
    let mut out: Vec<Option<EmpiricalMeasure>> = vec![None; horizons.len()];
    let mut now = 0.0;
    for &i in &order {
        let target = horizons[i];
        if target > now {
            flow.advance(&mut state, target - now, |_, _| {})?;
            now = target;
        }
        let meta = MeasureMeta {
            model: config.model.describe(),
            horizon: target,
            seed: config.seed,
            replica: config.replica,
            n: n_samples,
        };
        out[i] = Some(EmpiricalMeasure::new(state.positions.clone(), meta));
    }
    Ok(out.into_iter().map(|m| m.expect("every horizon visited")).collect())
}

pub fn pullback_cloud(config: &SimConfig, n_samples: usize, horizon: f64) -> Result<EmpiricalMeasure> {
    Ok(pullback_snapshots(config, n_samples, &[horizon])?.remove(0))
}
