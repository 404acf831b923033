//! Isotropic covariance tensors.
//!
//! The driving field has spatial covariance
//!
//! ```text
//! b_ij(x) = (B_L(|x|) - B_N(|x|)) x_i x_j / |x|^2 + delta_ij B_N(|x|),   b(0) = Id
//! ```
//!
//! where `B_L` and `B_N` are the longitudinal and transversal correlation
//! functions. Internally the tensor is written in terms of `s = |x|^2` as
//! `b_ij = F1(s) x_i x_j + F0(s) delta_ij`, with `F0 = B_N` and
//! `F1 = (B_L - B_N) / s`. For the shipped Gaussian families both functions
//! are entire in `s`, so all Cartesian derivatives are regular at the origin.
//!
//! The Gaussian families come from the scalar kernel
//! `C(x) = l^2 exp(-|x|^2 / 2 l^2)`: the potential family is `-Hess C`
//! (gradient of a scalar Gaussian field), the solenoidal family is the
//! divergence-free complement `(-Lap C Id + Hess C) / (d - 1)`, and the
//! mixture with potential weight `alpha` is their convex combination.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::points::Points;

/// Radial correlation function `r >= 0 -> R`.
pub type RadialFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    GaussianPotential,
    GaussianSolenoidal,
    /// `alpha` is the weight of the potential part.
    GaussianMixture { alpha: f64 },
    UserSupplied,
}

impl Family {
    /// Weight of the potential component, for the Gaussian families.
    pub fn potential_weight(&self) -> Option<f64> {
        match *self {
            Family::GaussianPotential => Some(1.0),
            Family::GaussianSolenoidal => Some(0.0),
            Family::GaussianMixture { alpha } => Some(alpha),
            Family::UserSupplied => None,
        }
    }
}

#[derive(Clone)]
struct UserProfile {
    bl: RadialFn,
    bn: RadialFn,
}

/// Relative step of the five-point finite differences used for
/// user-supplied correlation functions.
pub const USER_FD_STEP: f64 = 1e-4;

/// Default radius (in units of the length scale) below which Cartesian
/// derivatives of user-supplied tensors are refused.
pub const SINGULAR_BAND: f64 = 1e-10;

/// The values of `F0, F1` and their first two `s`-derivatives at `s = |x|^2`.
#[derive(Debug, Clone, Copy)]
struct Profile {
    f0: f64,
    f0p: f64,
    f0pp: f64,
    f1: f64,
    f1p: f64,
    f1pp: f64,
}

#[derive(Clone)]
pub struct CorrelationModel {
    family: Family,
    length_scale: f64,
    dim: usize,
    drift: f64,
    beta_l: f64,
    beta_n: f64,
    user: Option<UserProfile>,
}

impl fmt::Debug for CorrelationModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CorrelationModel")
            .field("family", &self.family)
            .field("length_scale", &self.length_scale)
            .field("dim", &self.dim)
            .field("drift", &self.drift)
            .field("beta_l", &self.beta_l)
            .field("beta_n", &self.beta_n)
            .finish()
    }
}

/// Constants of the pairwise separation bound
/// `|phi_t(x) - phi_t(y)| <= |x - y| exp(sigma B*_t + lambda t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairwiseBound {
    /// `sup_u (1 - B_N(u)) / u^2`
    pub a: f64,
    /// `sup_u (1 - B_L(u)) / u^2`
    pub b_const: f64,
    pub sigma: f64,
    pub lambda_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsdReport {
    pub psd: bool,
    pub min_eigenvalue: f64,
    pub size: usize,
}

/// First and second Cartesian derivatives of `b`, stored densely.
#[derive(Debug, Clone)]
pub struct TensorDerivatives {
    dim: usize,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl TensorDerivatives {
    /// `d_k b_ij`
    #[inline]
    pub fn first(&self, i: usize, j: usize, k: usize) -> f64 {
        let d = self.dim;
        self.first[(i * d + j) * d + k]
    }

    /// `d_k d_l b_ij`
    #[inline]
    pub fn second(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let d = self.dim;
        self.second[((i * d + j) * d + k) * d + l]
    }
}

fn check_common(length_scale: f64, dim: usize, drift: f64) -> Result<()> {
    if !(length_scale.is_finite() && length_scale > 0.0) {
        return Err(Error::InvalidModel(format!("length scale must be positive, got {length_scale}")));
    }
    if dim < 2 {
        return Err(Error::InvalidModel(format!("dimension must be at least 2, got {dim}")));
    }
    if !(drift.is_finite() && drift > 0.0) {
        return Err(Error::InvalidModel(format!("drift c must be positive, got {drift}")));
    }
    Ok(())
}

impl CorrelationModel {
    pub fn gaussian_potential(length_scale: f64, dim: usize, drift: f64) -> Result<Self> {
        Self::gaussian(Family::GaussianPotential, length_scale, dim, drift)
    }

    pub fn gaussian_solenoidal(length_scale: f64, dim: usize, drift: f64) -> Result<Self> {
        Self::gaussian(Family::GaussianSolenoidal, length_scale, dim, drift)
    }

    pub fn gaussian_mixture(alpha: f64, length_scale: f64, dim: usize, drift: f64) -> Result<Self> {
        Self::gaussian(Family::GaussianMixture { alpha }, length_scale, dim, drift)
    }

    pub fn gaussian(family: Family, length_scale: f64, dim: usize, drift: f64) -> Result<Self> {
        check_common(length_scale, dim, drift)?;
        let alpha = family
            .potential_weight()
            .ok_or_else(|| Error::InvalidModel("user-supplied models need correlation functions".into()))?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::InvalidModel(format!("mixture weight must lie in [0, 1], got {alpha}")));
        }
        let q = 1.0 / (length_scale * length_scale);
        let beta_l = q * (1.0 + 2.0 * alpha);
        let beta_n = q * (1.0 + 2.0 * (1.0 - alpha) / (dim as f64 - 1.0));
        Ok(CorrelationModel { family, length_scale, dim, drift, beta_l, beta_n, user: None })
    }

    /// A model from arbitrary correlation functions. Derivatives are taken by
    /// five-point central differences with step `USER_FD_STEP * length_scale`.
    /// Positive definiteness is not checked here; see [`Self::validate_psd`].
    pub fn user_supplied(
        length_scale: f64,
        dim: usize,
        drift: f64,
        bl: impl Fn(f64) -> f64 + Send + Sync + 'static,
        bn: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        check_common(length_scale, dim, drift)?;
        let user = UserProfile { bl: Arc::new(bl), bn: Arc::new(bn) };
        let mut model = CorrelationModel {
            family: Family::UserSupplied,
            length_scale,
            dim,
            drift,
            beta_l: f64::NAN,
            beta_n: f64::NAN,
            user: Some(user),
        };
        for (name, f) in [("B_L", model.user.as_ref().unwrap().bl.clone()), ("B_N", model.user.as_ref().unwrap().bn.clone())] {
            let at0 = f(0.0);
            if (at0 - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidModel(format!("{name}(0) = {at0}, expected 1 (b(0) = Id)")));
            }
            for i in 0..=2000 {
                let r = length_scale * 1e-3 * (1e7f64).powf(i as f64 / 2000.0);
                let v = f(r);
                if !v.is_finite() || v.abs() > 1.0 + 1e-12 {
                    return Err(Error::InvalidModel(format!("|{name}({r:e})| = {v} exceeds 1")));
                }
            }
        }
        let h = USER_FD_STEP * length_scale;
        let (bl, bn) = {
            let u = model.user.as_ref().unwrap();
            (u.bl.clone(), u.bn.clone())
        };
        model.beta_l = -even_second_derivative_at_zero(&*bl, h);
        model.beta_n = -even_second_derivative_at_zero(&*bn, h);
        if !(model.beta_l > 0.0 && model.beta_n > 0.0) {
            return Err(Error::InvalidModel(format!(
                "degenerate model: beta_L = {}, beta_N = {} must both be positive",
                model.beta_l, model.beta_n
            )));
        }
        // small-r expansion B(r) = 1 - beta r^2 / 2 + O(r^4) on (0, l/4]
        for (name, f, beta) in [("B_L", &bl, model.beta_l), ("B_N", &bn, model.beta_n)] {
            let mut c4 = 0.0f64;
            for i in 1..=200 {
                let r = 0.25 * length_scale * i as f64 / 200.0;
                let dev = (f(r) - (1.0 - 0.5 * beta * r * r)).abs() / r.powi(4);
                c4 = c4.max(dev);
            }
            if !c4.is_finite() || c4 * length_scale.powi(4) > 1e6 {
                return Err(Error::InvalidModel(format!("{name} violates the quadratic small-r expansion")));
            }
        }
        Ok(model)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// The linear drift constant `c`.
    pub fn drift(&self) -> f64 {
        self.drift
    }

    /// The same correlation structure with a different drift constant.
    pub fn with_drift(&self, drift: f64) -> Result<Self> {
        check_common(self.length_scale, self.dim, drift)?;
        Ok(CorrelationModel { drift, ..self.clone() })
    }

    /// Short stable description, used to fingerprint simulations.
    pub fn describe(&self) -> String {
        let fam = match self.family {
            Family::GaussianPotential => "potential".to_string(),
            Family::GaussianSolenoidal => "solenoidal".to_string(),
            Family::GaussianMixture { alpha } => format!("mixture(alpha={alpha:?})"),
            Family::UserSupplied => "user".to_string(),
        };
        format!("{fam};l={:?};d={};c={:?}", self.length_scale, self.dim, self.drift)
    }

    fn gaussian_coefficients(&self) -> Option<(f64, f64, f64)> {
        let alpha = self.family.potential_weight()?;
        let q = 1.0 / (self.length_scale * self.length_scale);
        // B_L = (1 - a s) e, B_N = (1 - n s) e, e = exp(-q s / 2)
        Some((q, alpha * q, (1.0 - alpha) * q / (self.dim as f64 - 1.0)))
    }

    /// Longitudinal correlation `B_L(r)`.
    pub fn bl(&self, r: f64) -> f64 {
        match self.gaussian_coefficients() {
            Some((q, a, _)) => (1.0 - a * r * r) * (-0.5 * q * r * r).exp(),
            None => (self.user.as_ref().unwrap().bl)(r.abs()),
        }
    }

    /// Transversal correlation `B_N(r)`.
    pub fn bn(&self, r: f64) -> f64 {
        match self.gaussian_coefficients() {
            Some((q, _, n)) => (1.0 - n * r * r) * (-0.5 * q * r * r).exp(),
            None => (self.user.as_ref().unwrap().bn)(r.abs()),
        }
    }

    /// `1 - B_L(r)` without cancellation for the Gaussian families.
    pub fn one_minus_bl(&self, r: f64) -> f64 {
        match self.gaussian_coefficients() {
            Some((q, a, _)) => {
                let s = r * r;
                -(-0.5 * q * s).exp_m1() + a * s * (-0.5 * q * s).exp()
            }
            None => 1.0 - self.bl(r),
        }
    }

    /// `1 - B_N(r)` without cancellation for the Gaussian families.
    pub fn one_minus_bn(&self, r: f64) -> f64 {
        match self.gaussian_coefficients() {
            Some((q, _, n)) => {
                let s = r * r;
                -(-0.5 * q * s).exp_m1() + n * s * (-0.5 * q * s).exp()
            }
            None => 1.0 - self.bn(r),
        }
    }

    fn user_derivatives(&self, f: &RadialFn, r: f64) -> (f64, f64) {
        let h = USER_FD_STEP * self.length_scale;
        let e = |x: f64| f(x.abs());
        let d1 = (e(r - 2.0 * h) - 8.0 * e(r - h) + 8.0 * e(r + h) - e(r + 2.0 * h)) / (12.0 * h);
        let d2 = (-e(r - 2.0 * h) + 16.0 * e(r - h) - 30.0 * e(r) + 16.0 * e(r + h) - e(r + 2.0 * h))
            / (12.0 * h * h);
        (d1, d2)
    }

    /// `(B_L'(r), B_L''(r))`.
    pub fn bl_derivatives(&self, r: f64) -> (f64, f64) {
        match self.gaussian_coefficients() {
            Some(_) => radial_from_s(r, self.profile_gaussian(r * r).map(|p| (p.f0 + p.f1 * r * r, p.f0p + p.f1 + p.f1p * r * r, p.f0pp + 2.0 * p.f1p + p.f1pp * r * r))),
            None => self.user_derivatives(&self.user.as_ref().unwrap().bl, r),
        }
    }

    /// `(B_N'(r), B_N''(r))`.
    pub fn bn_derivatives(&self, r: f64) -> (f64, f64) {
        match self.gaussian_coefficients() {
            Some(_) => radial_from_s(r, self.profile_gaussian(r * r).map(|p| (p.f0, p.f0p, p.f0pp))),
            None => self.user_derivatives(&self.user.as_ref().unwrap().bn, r),
        }
    }

    fn profile_gaussian(&self, s: f64) -> Option<Profile> {
        let (q, a, n) = self.gaussian_coefficients()?;
        let e = (-0.5 * q * s).exp();
        let kappa = n - a;
        Some(Profile {
            f0: (1.0 - n * s) * e,
            f0p: e * (-n - 0.5 * q + 0.5 * n * q * s),
            f0pp: e * (n * q + 0.25 * q * q - 0.25 * n * q * q * s),
            f1: kappa * e,
            f1p: -0.5 * q * kappa * e,
            f1pp: 0.25 * q * q * kappa * e,
        })
    }

    /// Profile in `s = r^2` for a user-supplied model at `r > 0`.
    fn profile_user(&self, r: f64) -> Profile {
        let u = self.user.as_ref().unwrap();
        let (bl, bn) = ((u.bl)(r), (u.bn)(r));
        let (dbl, d2bl) = self.user_derivatives(&u.bl, r);
        let (dbn, d2bn) = self.user_derivatives(&u.bn, r);
        let (dd, dd1, dd2) = (bl - bn, dbl - dbn, d2bl - d2bn);
        let r2 = r * r;
        // G(r) = F1(r^2) = D / r^2
        let g = dd / r2;
        let g1 = dd1 / r2 - 2.0 * dd / (r2 * r);
        let g2 = dd2 / r2 - 4.0 * dd1 / (r2 * r) + 6.0 * dd / (r2 * r2);
        Profile {
            f0: bn,
            f0p: dbn / (2.0 * r),
            f0pp: (d2bn - dbn / r) / (4.0 * r2),
            f1: g,
            f1p: g1 / (2.0 * r),
            f1pp: (g2 - g1 / r) / (4.0 * r2),
        }
    }

    /// `(beta_L, beta_N)`: negative right-hand second derivatives at zero.
    pub fn beta_coefficients(&self) -> (f64, f64) {
        (self.beta_l, self.beta_n)
    }

    pub fn beta_l(&self) -> f64 {
        self.beta_l
    }

    pub fn beta_n(&self) -> f64 {
        self.beta_n
    }

    /// The covariance tensor `b(x)`.
    pub fn build_tensor(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.dim;
        check_vector(x, d)?;
        let s: f64 = x.iter().map(|v| v * v).sum();
        if s == 0.0 {
            return Ok(DMatrix::identity(d, d));
        }
        let (f0, f1) = match self.profile_gaussian(s) {
            Some(p) => (p.f0, p.f1),
            None => {
                let r = s.sqrt();
                let (bl, bn) = (self.bl(r), self.bn(r));
                (bn, (bl - bn) / s)
            }
        };
        Ok(DMatrix::from_fn(d, d, |i, j| {
            let (i, j) = (i.min(j), i.max(j));
            f1 * (x[i] * x[j]) + if i == j { f0 } else { 0.0 }
        }))
    }

    /// Cartesian first and second derivatives of `b` at `x`.
    ///
    /// At `x = 0` the analytic limit is used: first derivatives vanish and
    /// `-d_p d_p b_pp(0) = beta_L`, `-d_q d_q b_pp(0) = beta_N` for `q != p`.
    /// User-supplied models refuse `0 < |x| < SINGULAR_BAND * l`.
    pub fn tensor_derivatives(&self, x: &[f64]) -> Result<TensorDerivatives> {
        let d = self.dim;
        check_vector(x, d)?;
        let s: f64 = x.iter().map(|v| v * v).sum();
        let p = if s == 0.0 {
            Profile {
                f0: 1.0,
                f0p: -0.5 * self.beta_n,
                f0pp: 0.0,
                f1: 0.5 * (self.beta_n - self.beta_l),
                f1p: 0.0,
                f1pp: 0.0,
            }
        } else if let Some(p) = self.profile_gaussian(s) {
            p
        } else {
            let r = s.sqrt();
            let limit = SINGULAR_BAND * self.length_scale;
            if r < limit {
                return Err(Error::SingularBand { radius: r, limit });
            }
            self.profile_user(r)
        };
        let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let mut first = vec![0.0; d * d * d];
        let mut second = vec![0.0; d * d * d * d];
        for i in 0..d {
            for j in 0..d {
                let xij = x[i] * x[j];
                for k in 0..d {
                    first[(i * d + j) * d + k] = 2.0 * x[k] * p.f1p * xij
                        + p.f1 * (delta(i, k) * x[j] + delta(j, k) * x[i])
                        + 2.0 * delta(i, j) * x[k] * p.f0p;
                    for l in 0..d {
                        second[((i * d + j) * d + k) * d + l] = (4.0 * x[k] * x[l] * p.f1pp
                            + 2.0 * delta(k, l) * p.f1p)
                            * xij
                            + 2.0 * x[k] * p.f1p * (delta(i, l) * x[j] + delta(j, l) * x[i])
                            + 2.0 * x[l] * p.f1p * (delta(i, k) * x[j] + delta(j, k) * x[i])
                            + p.f1 * (delta(i, k) * delta(j, l) + delta(j, k) * delta(i, l))
                            + delta(i, j) * (4.0 * x[k] * x[l] * p.f0pp + 2.0 * delta(k, l) * p.f0p);
                    }
                }
            }
        }
        Ok(TensorDerivatives { dim: d, first, second })
    }

    /// Constants `a`, `b`, `sigma = sqrt(2 b)` and `lambda = (d-1) a - c` of
    /// the pairwise separation bound. The suprema are taken over a geometric
    /// grid on `[1e-4 l, 1e3 l]` together with the `u -> 0` limits `beta / 2`.
    pub fn sup_ratio_constants(&self) -> Result<PairwiseBound> {
        let l = self.length_scale;
        let (mut a, mut b) = (0.5 * self.beta_n, 0.5 * self.beta_l);
        const POINTS: usize = 4000;
        for i in 0..=POINTS {
            let u = l * 1e-4 * (1e7f64).powf(i as f64 / POINTS as f64);
            let u2 = u * u;
            a = a.max(self.one_minus_bn(u) / u2);
            b = b.max(self.one_minus_bl(u) / u2);
        }
        if !(a.is_finite() && b.is_finite() && a > 0.0 && b > 0.0) {
            return Err(Error::InvalidModel(format!("non-finite separation constants a = {a}, b = {b}")));
        }
        Ok(PairwiseBound {
            a,
            b_const: b,
            sigma: (2.0 * b).sqrt(),
            lambda_bound: (self.dim as f64 - 1.0) * a - self.drift,
        })
    }

    /// Assembles the `nd x nd` block matrix `[b(x_i - x_j)]` and reports
    /// whether its smallest eigenvalue is at least `-tol`.
    pub fn validate_psd(&self, points: &Points, tol: f64) -> Result<PsdReport> {
        let d = self.dim;
        let n = points.len();
        if n == 0 {
            return Err(Error::InsufficientData("validate_psd needs at least one point".into()));
        }
        let mut m = DMatrix::zeros(n * d, n * d);
        let mut diff = vec![0.0; d];
        for p in 0..n {
            for q in 0..=p {
                for (k, v) in diff.iter_mut().enumerate() {
                    *v = points.point(p)[k] - points.point(q)[k];
                }
                let b = self.build_tensor(&diff)?;
                for i in 0..d {
                    for j in 0..d {
                        m[(p * d + i, q * d + j)] = b[(i, j)];
                        m[(q * d + j, p * d + i)] = b[(i, j)];
                    }
                }
            }
        }
        let min_eigenvalue = SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(PsdReport { psd: min_eigenvalue >= -tol, min_eigenvalue, size: n * d })
    }
}

fn check_vector(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::InvalidConfig(format!("vector of length {} in dimension {d}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("vector {x:?}")));
    }
    Ok(())
}

/// Converts `(g, g_s, g_ss)` of a function of `s = r^2` into
/// `(d/dr, d^2/dr^2)` at `r`.
fn radial_from_s(r: f64, v: Option<(f64, f64, f64)>) -> (f64, f64) {
    let (_, gs, gss) = v.expect("gaussian profile");
    (2.0 * r * gs, 2.0 * gs + 4.0 * r * r * gss)
}

/// Five-point second derivative at zero of an even function.
fn even_second_derivative_at_zero(f: &dyn Fn(f64) -> f64, h: f64) -> f64 {
    (-2.0 * f(2.0 * h) + 32.0 * f(h) - 30.0 * f(0.0)) / (12.0 * h * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gaussian_betas() {
        let m = CorrelationModel::gaussian_potential(1.0, 2, 0.5).unwrap();
        assert_relative_eq!(m.beta_l(), 3.0, epsilon = 1e-15);
        assert_relative_eq!(m.beta_n(), 1.0, epsilon = 1e-15);
        let m = CorrelationModel::gaussian_potential(2.0, 2, 0.5).unwrap();
        assert_relative_eq!(m.beta_l(), 0.75, epsilon = 1e-15);
        assert_relative_eq!(m.beta_n(), 0.25, epsilon = 1e-15);
        let s = CorrelationModel::gaussian_solenoidal(1.0, 2, 0.5).unwrap();
        assert_eq!((s.beta_l(), s.beta_n()), (1.0, 3.0));
    }

    #[test]
    fn mixture_betas_are_linear_in_alpha() {
        let p = CorrelationModel::gaussian_potential(1.3, 3, 0.2).unwrap();
        let s = CorrelationModel::gaussian_solenoidal(1.3, 3, 0.2).unwrap();
        for &alpha in &[0.0, 0.25, 0.6, 1.0] {
            let m = CorrelationModel::gaussian_mixture(alpha, 1.3, 3, 0.2).unwrap();
            assert_relative_eq!(m.beta_l(), alpha * p.beta_l() + (1.0 - alpha) * s.beta_l(), epsilon = 1e-14);
            assert_relative_eq!(m.beta_n(), alpha * p.beta_n() + (1.0 - alpha) * s.beta_n(), epsilon = 1e-14);
        }
    }

    #[test]
    fn closed_forms_match_hessian_construction() {
        // potential: B_L = (1 - r^2) e^{-r^2/2}, B_N = e^{-r^2/2} at l = 1
        let m = CorrelationModel::gaussian_potential(1.0, 2, 1.0).unwrap();
        for r in [0.0f64, 0.3, 1.0, 2.5] {
            let e = (-0.5 * r * r).exp();
            assert_relative_eq!(m.bl(r), (1.0 - r * r) * e, epsilon = 1e-15);
            assert_relative_eq!(m.bn(r), e, epsilon = 1e-15);
            assert_relative_eq!(m.one_minus_bl(r), 1.0 - m.bl(r), epsilon = 1e-15);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(CorrelationModel::gaussian_potential(0.0, 2, 1.0).is_err());
        assert!(CorrelationModel::gaussian_potential(1.0, 1, 1.0).is_err());
        assert!(CorrelationModel::gaussian_potential(1.0, 2, 0.0).is_err());
        assert!(CorrelationModel::gaussian_mixture(1.5, 1.0, 2, 1.0).is_err());
        assert!(CorrelationModel::gaussian(Family::UserSupplied, 1.0, 2, 1.0).is_err());
    }

    #[test]
    fn user_model_degenerate_beta_is_rejected() {
        let flat = CorrelationModel::user_supplied(1.0, 2, 1.0, |r| (-r.powi(4)).exp(), |r| (-r.powi(4)).exp());
        assert!(matches!(flat, Err(Error::InvalidModel(_))));
        let unnormalized = CorrelationModel::user_supplied(1.0, 2, 1.0, |r| 0.5 * (-r * r).exp(), |r| (-r * r).exp());
        assert!(unnormalized.is_err());
    }

    #[test]
    fn user_model_matches_gaussian_family() {
        let g = CorrelationModel::gaussian_mixture(0.3, 1.0, 2, 0.5).unwrap();
        let g2 = g.clone();
        let g3 = g.clone();
        let u = CorrelationModel::user_supplied(1.0, 2, 0.5, move |r| g2.bl(r), move |r| g3.bn(r)).unwrap();
        assert_relative_eq!(u.beta_l(), g.beta_l(), max_relative = 1e-6);
        assert_relative_eq!(u.beta_n(), g.beta_n(), max_relative = 1e-6);
        let x = [0.4, -0.7];
        let (tg, tu) = (g.tensor_derivatives(&x).unwrap(), u.tensor_derivatives(&x).unwrap());
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    assert!((tg.first(i, j, k) - tu.first(i, j, k)).abs() < 1e-6);
                    for l in 0..2 {
                        assert!((tg.second(i, j, k, l) - tu.second(i, j, k, l)).abs() < 1e-5);
                    }
                }
            }
        }
    }

    #[test]
    fn singular_band_is_refused_for_user_models() {
        let u = CorrelationModel::user_supplied(1.0, 2, 0.5, |r| (-0.5 * r * r).exp(), |r| (-0.5 * r * r).exp())
            .unwrap();
        assert!(matches!(u.tensor_derivatives(&[1e-12, 0.0]), Err(Error::SingularBand { .. })));
        assert!(u.tensor_derivatives(&[0.0, 0.0]).is_ok());
        assert!(u.build_tensor(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn sup_ratio_of_gaussian_transversal_is_one_half() {
        // solenoidal, d = 2: B_L = e^{-r^2/2}, so b = sup (1 - e^{-u^2/2}) / u^2 = 1/2 at u -> 0
        let m = CorrelationModel::gaussian_solenoidal(1.0, 2, 0.5).unwrap();
        let pb = m.sup_ratio_constants().unwrap();
        assert_relative_eq!(pb.b_const, 0.5, epsilon = 1e-9);
        assert_relative_eq!(pb.sigma, 1.0, epsilon = 1e-9);
        assert!(pb.a >= 0.5 * m.beta_n());
        assert_relative_eq!(pb.lambda_bound, pb.a - 0.5, epsilon = 1e-15);
    }
}
