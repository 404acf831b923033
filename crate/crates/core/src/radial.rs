//! The distance process `r_t = |phi_t(x) - phi_t(y)|` as a scalar diffusion.
//!
//! With noise amplitude `a` the process solves
//!
//! ```text
//! dr = sqrt(2 a^2 (1 - B_L(r))) dW + (a^2 (d - 1) (1 - B_N(r)) / r - c r) dt
//! ```
//!
//! and its generator is `A u = a^2 (1 - B_L) u'' + drift u'`. With
//! `g(z) = drift(z) / (a^2 (1 - B_L(z)))` and `I(x) = int_1^x g`, the scale
//! function is `s(x) = int_1^x exp(-I(y)) dy` and the speed density is
//! `m(x) = exp(I(x)) / (a^2 (1 - B_L(x)))`.
//!
//! Near zero `g(z) ~ p0 / z` with `p0 = ((d - 1) beta_N / 2 - c / a^2) / (beta_L / 2)`,
//! so `m(x) ~ x^(p0 - 2)`; `m` is integrable at zero exactly when `p0 > 1`,
//! i.e. when the top Lyapunov exponent is positive.

use rand::Rng;
use serde::Serialize;

use crate::correlation::CorrelationModel;
use crate::error::{Error, Result};
use crate::flow::{steps_for, Scheme};
use crate::quadrature::{composite_gl10, gauss_legendre_10};
use crate::rng::normal;
use crate::spectrum::{model_spectrum, LyapunovSpectrum};

/// Below this radius (in units of `l`) the integrands are replaced by their
/// small-`r` power laws.
pub const SWITCH_RADIUS: f64 = 1e-3;

/// Reflection radius (in units of `l`) for Euler steps that leave `(0, inf)`.
pub const REFLECTION_RADIUS: f64 = 1e-8;

/// Largest admissible fraction of reflected steps.
pub const MAX_REFLECTION_FRACTION: f64 = 1e-3;

const NODES_PER_DECADE: f64 = 100.0;
/// Grid stops once `I` has fallen this far below its maximum.
const DECAY_DEPTH: f64 = 40.0;
const MAX_RADIUS: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Recurrent,
    Transient,
}

/// Recurrent iff `lambda_1 >= 0`.
pub fn classify(spectrum: &LyapunovSpectrum) -> Classification {
    if spectrum.top() >= 0.0 {
        Classification::Recurrent
    } else {
        Classification::Transient
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InvariantLaw {
    Normalizable {
        /// `int_0^inf m`.
        total_mass: f64,
        /// Analytic contribution of `(0, r_sw)`.
        mass_below_switch: f64,
        /// Bound on the contribution above the last grid node.
        mass_above_grid: f64,
    },
    NotNormalizable,
}

#[derive(Debug, Clone)]
struct Cache {
    nodes: Vec<f64>,
    /// `I` at the nodes (base point 1).
    i_vals: Vec<f64>,
    /// `int_{r_sw}^{x_k} exp(-I)`.
    s_cum: Vec<f64>,
    /// `int_{r_sw}^{x_k} m`.
    m_cum: Vec<f64>,
    /// `s(1)` relative to `s_cum`.
    s_base: f64,
}

#[derive(Debug, Clone)]
pub struct RadialLaw {
    model: CorrelationModel,
    noise_scale: f64,
    p0: f64,
    cache: Option<Cache>,
}

impl RadialLaw {
    pub fn new(model: CorrelationModel) -> Result<Self> {
        Self::with_noise_scale(model, 1.0)
    }

    pub fn with_noise_scale(model: CorrelationModel, noise_scale: f64) -> Result<Self> {
        if !(noise_scale.is_finite() && noise_scale >= 0.0) {
            return Err(Error::InvalidConfig(format!("noise scale must be non-negative, got {noise_scale}")));
        }
        let l = model.length_scale();
        for i in 0..=600 {
            let r = l * 1e-3 * (1e6f64).powf(i as f64 / 600.0);
            let v = model.one_minus_bl(r);
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidModel(format!("1 - B_L({r:e}) = {v} is not positive")));
            }
        }
        let (bl, bn) = model.beta_coefficients();
        let d = model.dim() as f64;
        let a2 = noise_scale * noise_scale;
        let p0 = if a2 > 0.0 { ((d - 1.0) * bn / 2.0 - model.drift() / a2) / (bl / 2.0) } else { f64::NEG_INFINITY };
        let mut law = RadialLaw { model, noise_scale, p0, cache: None };
        if a2 > 0.0 {
            law.cache = Some(law.build_cache()?);
        }
        Ok(law)
    }

    pub fn model(&self) -> &CorrelationModel {
        &self.model
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    /// `a^2 (d - 1) (1 - B_N(r)) / r - c r`.
    pub fn drift(&self, r: f64) -> f64 {
        let a2 = self.noise_scale * self.noise_scale;
        a2 * (self.model.dim() as f64 - 1.0) * self.model.one_minus_bn(r) / r - self.model.drift() * r
    }

    /// `2 a^2 (1 - B_L(r))`.
    pub fn diffusion2(&self, r: f64) -> f64 {
        2.0 * self.noise_scale * self.noise_scale * self.model.one_minus_bl(r)
    }

    /// Exponent `p0` of `g(z) ~ p0 / z` at zero.
    pub fn small_r_exponent(&self) -> f64 {
        self.p0
    }

    /// Analytic exponent of `m(x) ~ x^(p0 - 2)` at zero.
    pub fn speed_exponent(&self) -> f64 {
        self.p0 - 2.0
    }

    fn g(&self, z: f64) -> f64 {
        let a2 = self.noise_scale * self.noise_scale;
        let d = self.model.dim() as f64;
        (a2 * (d - 1.0) * self.model.one_minus_bn(z) - self.model.drift() * z * z)
            / (a2 * z * self.model.one_minus_bl(z))
    }

    fn r_sw(&self) -> f64 {
        SWITCH_RADIUS * self.model.length_scale()
    }

    fn build_cache(&self) -> Result<Cache> {
        let l = self.model.length_scale();
        let r_sw = self.r_sw();
        let ratio = 10f64.powf(1.0 / NODES_PER_DECADE);
        let floor = (3.0 * l).max(2.0);
        let mut nodes = vec![r_sw];
        let mut j_vals = vec![0.0];
        let mut j_max = f64::NEG_INFINITY;
        loop {
            let x = *nodes.last().unwrap();
            let j = *j_vals.last().unwrap();
            j_max = j_max.max(j);
            if x >= floor && j < j_max - DECAY_DEPTH && self.g(x) < 0.0 {
                break;
            }
            if x > MAX_RADIUS * l {
                break;
            }
            let next = x * ratio;
            let inc = gauss_legendre_10(x, next, |z| self.g(z));
            if !inc.is_finite() {
                return Err(Error::Numerical(format!("scale integrand not finite on [{x:e}, {next:e}]")));
            }
            nodes.push(next);
            j_vals.push(j + inc);
        }
        let k1 = locate(&nodes, 1.0);
        let j1 = j_vals[k1] + gauss_legendre_10(nodes[k1], 1.0, |z| self.g(z));
        let i_vals: Vec<f64> = j_vals.iter().map(|v| v - j1).collect();
        let a2 = self.noise_scale * self.noise_scale;
        let mut s_cum = vec![0.0];
        let mut m_cum = vec![0.0];
        for k in 0..nodes.len() - 1 {
            let (x0, x1, ik) = (nodes[k], nodes[k + 1], i_vals[k]);
            let inner = |y: f64| ik + gauss_legendre_10(x0, y, |z| self.g(z));
            let ds = gauss_legendre_10(x0, x1, |y| (-inner(y)).exp());
            let dm = gauss_legendre_10(x0, x1, |y| inner(y).exp() / (a2 * self.model.one_minus_bl(y)));
            if !(ds.is_finite() && dm.is_finite()) {
                return Err(Error::Numerical(format!("scale/speed quadrature overflow on [{x0:e}, {x1:e}]")));
            }
            s_cum.push(s_cum[k] + ds);
            m_cum.push(m_cum[k] + dm);
        }
        let mut cache = Cache { nodes, i_vals, s_cum, m_cum, s_base: 0.0 };
        cache.s_base = self.s_raw(&cache, 1.0);
        Ok(cache)
    }

    fn cache(&self) -> Result<&Cache> {
        self.cache
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("scale function and speed measure need a positive noise scale".into()))
    }

    /// `I(x) = int_1^x g`.
    fn i_at(&self, c: &Cache, x: f64) -> f64 {
        let r_sw = c.nodes[0];
        if x < r_sw {
            return c.i_vals[0] + self.p0 * (x / r_sw).ln();
        }
        let last = c.nodes.len() - 1;
        if x >= c.nodes[last] {
            let pieces = (NODES_PER_DECADE * (x / c.nodes[last]).log10()).ceil().max(1.0) as usize;
            return c.i_vals[last] + composite_gl10(c.nodes[last], x, pieces, |z| self.g(z));
        }
        let k = locate(&c.nodes, x);
        c.i_vals[k] + gauss_legendre_10(c.nodes[k], x, |z| self.g(z))
    }

    /// `int_{r_sw}^x exp(-I)`, negative below `r_sw`.
    fn s_raw(&self, c: &Cache, x: f64) -> f64 {
        let r_sw = c.nodes[0];
        if x < r_sw {
            let e = (-c.i_vals[0]).exp();
            let q = 1.0 - self.p0;
            return if q.abs() < 1e-12 {
                e * r_sw * (x / r_sw).ln()
            } else {
                e * r_sw / q * ((x / r_sw).powf(q) - 1.0)
            };
        }
        let (k, base) = self.anchor(c, x);
        let ik = self.i_at(c, base);
        let start = if k < c.nodes.len() { c.s_cum[k] } else { self.s_raw(c, base) };
        start + self.local_integral(base, ik, x, |i, _| (-i).exp())
    }

    fn m_raw(&self, c: &Cache, x: f64) -> f64 {
        let r_sw = c.nodes[0];
        let a2 = self.noise_scale * self.noise_scale;
        if x < r_sw {
            return -self.mass_below(c, r_sw) + self.mass_below(c, x);
        }
        let (k, base) = self.anchor(c, x);
        let ik = self.i_at(c, base);
        let start = if k < c.nodes.len() { c.m_cum[k] } else { self.m_raw(c, base) };
        start + self.local_integral(base, ik, x, |i, y| i.exp() / (a2 * self.model.one_minus_bl(y)))
    }

    /// Node index and base point for a cumulative evaluation at `x >= r_sw`.
    fn anchor(&self, c: &Cache, x: f64) -> (usize, f64) {
        let last = c.nodes.len() - 1;
        if x >= c.nodes[last] {
            (last, c.nodes[last])
        } else {
            let k = locate(&c.nodes, x);
            (k, c.nodes[k])
        }
    }

    /// `int_base^x h(I(y), y) dy` with `I` continued from `I(base) = ik`.
    fn local_integral(&self, base: f64, ik: f64, x: f64, h: impl Fn(f64, f64) -> f64) -> f64 {
        if x == base {
            return 0.0;
        }
        let pieces = (NODES_PER_DECADE * (x / base).log10().abs()).ceil().max(1.0) as usize;
        let width = (x - base) / pieces as f64;
        let mut total = 0.0;
        let mut i_left = ik;
        for p in 0..pieces {
            let a = base + p as f64 * width;
            let b = if p + 1 == pieces { x } else { a + width };
            total += gauss_legendre_10(a, b, |y| h(i_left + gauss_legendre_10(a, y, |z| self.g(z)), y));
            i_left += gauss_legendre_10(a, b, |z| self.g(z));
        }
        total
    }

    /// `int_0^x m` for `x <= r_sw` using the power law; infinite if `p0 <= 1`.
    fn mass_below(&self, c: &Cache, x: f64) -> f64 {
        if self.p0 <= 1.0 {
            return f64::INFINITY;
        }
        let r_sw = c.nodes[0];
        let a2 = self.noise_scale * self.noise_scale;
        let m_sw = c.i_vals[0].exp() / (a2 * self.model.one_minus_bl(r_sw));
        m_sw * r_sw / (self.p0 - 1.0) * (x / r_sw).powf(self.p0 - 1.0)
    }

    /// `s(x) = int_1^x exp(-I(y)) dy`.
    pub fn scale_function(&self, x: f64) -> Result<f64> {
        check_radius(x)?;
        let c = self.cache()?;
        let v = self.s_raw(c, x) - c.s_base;
        finite(v, "scale function", x)
    }

    /// `s'(x) = exp(-I(x))`.
    pub fn scale_derivative(&self, x: f64) -> Result<f64> {
        check_radius(x)?;
        let c = self.cache()?;
        finite((-self.i_at(c, x)).exp(), "scale derivative", x)
    }

    /// `m(x) = exp(I(x)) / (a^2 (1 - B_L(x)))`.
    pub fn speed_density(&self, x: f64) -> Result<f64> {
        check_radius(x)?;
        let c = self.cache()?;
        let a2 = self.noise_scale * self.noise_scale;
        finite(self.i_at(c, x).exp() / (a2 * self.model.one_minus_bl(x)), "speed density", x)
    }

    /// Integrability of `m` over `(0, inf)`. The verdict follows the sign of
    /// the small-`r` exponent, which matches the sign of `lambda_1`.
    pub fn invariant_law(&self) -> Result<InvariantLaw> {
        let c = self.cache()?;
        if self.p0 <= 1.0 {
            return Ok(InvariantLaw::NotNormalizable);
        }
        let last = c.nodes.len() - 1;
        let x_max = c.nodes[last];
        let a2 = self.noise_scale * self.noise_scale;
        let m_max = c.i_vals[last].exp() / (a2 * self.model.one_minus_bl(x_max));
        let above = m_max * a2 / (self.model.drift() * x_max);
        let below = self.mass_below(c, c.nodes[0]);
        let total = below + c.m_cum[last] + above;
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::Numerical(format!("speed measure mass {total}")));
        }
        Ok(InvariantLaw::Normalizable { total_mass: total, mass_below_switch: below, mass_above_grid: above })
    }

    fn total_mass(&self) -> Result<Option<f64>> {
        Ok(match self.invariant_law()? {
            InvariantLaw::Normalizable { total_mass, .. } => Some(total_mass),
            InvariantLaw::NotNormalizable => None,
        })
    }

    /// Normalized invariant density `m_p = m / int m`, `None` if not normalizable.
    pub fn invariant_density(&self, x: f64) -> Result<Option<f64>> {
        match self.total_mass()? {
            Some(z) => Ok(Some(self.speed_density(x)? / z)),
            None => Ok(None),
        }
    }

    /// Distribution function of the invariant law, `None` if not normalizable.
    pub fn invariant_cdf(&self, x: f64) -> Result<Option<f64>> {
        let Some(z) = self.total_mass()? else { return Ok(None) };
        if x <= 0.0 {
            return Ok(Some(0.0));
        }
        let c = self.cache()?;
        let below = self.mass_below(c, c.nodes[0]);
        let v = if x < c.nodes[0] { self.mass_below(c, x) } else { below + self.m_raw(c, x) };
        Ok(Some((v / z).min(1.0)))
    }

    /// `A s (r)` with `s'` and `s''` from central differences of step
    /// `h = 1e-3 r`, together with the scale `|s'| (|drift| + a^2 (1 - B_L) / r)`
    /// of the terms that cancel.
    pub fn generator_residual(&self, r: f64) -> Result<(f64, f64)> {
        check_radius(r)?;
        let c = self.cache()?;
        let h = 1e-3 * r;
        let ir = self.i_at(c, r);
        let up = self.local_integral(r, ir, r + h, |i, _| (-i).exp());
        let down = self.local_integral(r, ir, r - h, |i, _| (-i).exp());
        let s1 = (up - down) / (2.0 * h);
        let s2 = (up + down) / (h * h);
        let a2 = self.noise_scale * self.noise_scale;
        let diff = a2 * self.model.one_minus_bl(r);
        let residual = diff * s2 + self.drift(r) * s1;
        let scale = s1.abs() * (self.drift(r).abs() + diff / r);
        Ok((residual, scale))
    }

    /// One step of the distance process.
    pub fn step<R: Rng + ?Sized>(&self, r: f64, dt: f64, scheme: Scheme, rng: &mut R) -> f64 {
        let noise = self.diffusion2(r).sqrt() * dt.sqrt() * normal(rng);
        match scheme {
            Scheme::EulerMaruyama => r + self.drift(r) * dt + noise,
            Scheme::ExponentialEuler => {
                let a2 = self.noise_scale * self.noise_scale;
                let inter = a2 * (self.model.dim() as f64 - 1.0) * self.model.one_minus_bn(r) / r;
                r * (-self.model.drift() * dt).exp() + inter * dt + noise
            }
        }
    }

    /// Integrates one path, calling `observe(t, r)` after every step.
    /// Steps landing at or below zero are reflected to `REFLECTION_RADIUS l`.
    pub fn simulate_with<R: Rng + ?Sized>(
        &self,
        r0: f64,
        dt: f64,
        horizon: f64,
        scheme: Scheme,
        rng: &mut R,
        mut observe: impl FnMut(f64, f64),
    ) -> Result<PathStats> {
        if !(r0.is_finite() && r0 > 0.0) {
            return Err(Error::InvalidConfig(format!("initial distance must be positive, got {r0}")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
        }
        let eps = REFLECTION_RADIUS * self.model.length_scale();
        let (n, last) = steps_for(horizon, dt);
        let mut r = r0;
        let mut t = 0.0;
        let mut stats = PathStats { steps: n, reflections: 0, min: r0, max: r0, terminal: r0 };
        for k in 1..=n {
            let h = if k == n { last } else { dt };
            let mut next = self.step(r, h, scheme, rng);
            if !next.is_finite() {
                return Err(Error::NonFinite(format!("radial path at t = {t}")));
            }
            if next <= 0.0 {
                next = eps;
                stats.reflections += 1;
            }
            r = next;
            t += h;
            stats.min = stats.min.min(r);
            stats.max = stats.max.max(r);
            observe(t, r);
        }
        stats.terminal = r;
        if n > 0 && stats.reflections as f64 > MAX_REFLECTION_FRACTION * n as f64 {
            return Err(Error::Numerical(format!(
                "{} of {n} steps reflected at zero; dt = {dt} is too coarse",
                stats.reflections
            )));
        }
        Ok(stats)
    }

    /// Integrates one path and stores every `stride`-th value (and the last).
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        r0: f64,
        dt: f64,
        horizon: f64,
        scheme: Scheme,
        stride: usize,
        rng: &mut R,
    ) -> Result<RadialPath> {
        let stride = stride.max(1) as u64;
        let mut times = vec![0.0];
        let mut values = vec![r0];
        let (n, _) = steps_for(horizon, dt);
        let mut k = 0u64;
        let stats = self.simulate_with(r0, dt, horizon, scheme, rng, |t, r| {
            k += 1;
            if k.is_multiple_of(stride) || k == n {
                times.push(t);
                values.push(r);
            }
        })?;
        Ok(RadialPath { times, values, stats })
    }

    /// Rows `(r, s, m, m_p)` on `grid`.
    pub fn table(&self, grid: &[f64]) -> Result<Vec<RadialRow>> {
        grid.iter()
            .map(|&r| {
                Ok(RadialRow {
                    r,
                    s: self.scale_function(r)?,
                    m: self.speed_density(r)?,
                    m_p: self.invariant_density(r)?,
                })
            })
            .collect()
    }

    pub fn verdict(&self) -> Result<RadialVerdict> {
        let spectrum = model_spectrum(&self.model)?;
        let a2 = self.noise_scale * self.noise_scale;
        let lambda1 = if a2 > 0.0 { spectrum.top() + (a2 - 1.0) * (spectrum.top() + self.model.drift()) } else { -self.model.drift() };
        let law = self.invariant_law()?;
        Ok(RadialVerdict {
            lambda1,
            classification: if lambda1 >= 0.0 { Classification::Recurrent } else { Classification::Transient },
            normalizable: matches!(law, InvariantLaw::Normalizable { .. }),
            boundary: lambda1 == 0.0,
            small_r_exponent: self.speed_exponent(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathStats {
    pub steps: u64,
    pub reflections: u64,
    pub min: f64,
    pub max: f64,
    pub terminal: f64,
}

#[derive(Debug, Clone)]
pub struct RadialPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub stats: PathStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialRow {
    pub r: f64,
    pub s: f64,
    pub m: f64,
    pub m_p: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RadialVerdict {
    pub lambda1: f64,
    pub classification: Classification,
    pub normalizable: bool,
    /// `lambda_1 = 0`: recurrent, but the speed measure has infinite mass.
    pub boundary: bool,
    pub small_r_exponent: f64,
}

fn locate(nodes: &[f64], x: f64) -> usize {
    match nodes.binary_search_by(|v| v.total_cmp(&x)) {
        Ok(k) => k.min(nodes.len() - 1),
        Err(k) => k.saturating_sub(1),
    }
}

fn check_radius(x: f64) -> Result<()> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::InvalidConfig(format!("radius must be positive, got {x}")));
    }
    Ok(())
}

fn finite(v: f64, what: &str, x: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numerical(format!("{what} at {x:e} is not finite")))
    }
}
