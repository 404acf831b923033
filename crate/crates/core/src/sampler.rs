//! Joint Gaussian increments of the driving field and its gradient.
//!
//! Two samplers are provided:
//!
//! * [`CovarianceFactor`] assembles the exact covariance of
//!   `(dF(x_p), dDF(x_p))_p` at the requested points and draws from it through
//!   a pivoted Cholesky factor. The law is exact up to round-off, at cost
//!   `O((n d (1 + d))^3)` per distinct point configuration.
//! * [`SpectralSampler`] draws, every step, a fresh random-Fourier field with
//!   `K` modes whose covariance equals `dt b(x - y)` in expectation over the
//!   modes. It is linear in the number of points and is used for large clouds.
//!
//! Per point the sample block is laid out as `[F_1 .. F_d, dF_j/dx_l at
//! d + j d + l]`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use serde::Serialize;

use crate::correlation::CorrelationModel;
use crate::error::{Error, Result};
use crate::points::Points;
use crate::rng::{fill_normal, normal};

/// Relative diagonal jitter levels tried in turn when factorization fails.
pub const JITTER_LADDER: [f64; 5] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8];

/// Pivots below this fraction of the largest diagonal entry end the
/// factorization (the remaining directions are numerically null).
pub const PIVOT_TOLERANCE: f64 = 1e-13;

/// Accepted max-entry reconstruction error, relative to the largest diagonal.
pub const RECONSTRUCTION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Exact,
    Spectral { modes: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct IncrementRequest<'a> {
    pub points: &'a Points,
    pub with_gradients: bool,
    pub dt: f64,
}

impl<'a> IncrementRequest<'a> {
    pub fn new(points: &'a Points, with_gradients: bool, dt: f64) -> Self {
        IncrementRequest { points, with_gradients, dt }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if !(self.dt.is_finite() && self.dt >= 0.0) {
            return Err(Error::InvalidConfig(format!("time step must be non-negative, got {}", self.dt)));
        }
        if self.points.dim() != dim {
            return Err(Error::InvalidConfig(format!(
                "points of dimension {} for a model of dimension {dim}",
                self.points.dim()
            )));
        }
        if !self.points.is_finite() {
            return Err(Error::NonFinite("increment request contains non-finite points".into()));
        }
        Ok(())
    }
}

/// One draw of the field increment at `n` points.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementSample {
    dim: usize,
    /// `n * d`, row-major.
    pub df: Vec<f64>,
    /// `n * d * d`; entry `p d^2 + j d + l` is the increment of `dF_j/dx_l` at point `p`.
    pub ddf: Option<Vec<f64>>,
}

impl IncrementSample {
    pub fn zeros(dim: usize, n: usize, with_gradients: bool) -> Self {
        IncrementSample {
            dim,
            df: vec![0.0; n * dim],
            ddf: with_gradients.then(|| vec![0.0; n * dim * dim]),
        }
    }

    pub fn len(&self) -> usize {
        self.df.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.df.is_empty()
    }

    pub fn df_at(&self, p: usize) -> &[f64] {
        &self.df[p * self.dim..(p + 1) * self.dim]
    }

    /// Row-major `d x d` gradient increment at point `p`.
    pub fn ddf_at(&self, p: usize) -> Option<&[f64]> {
        let dd = self.dim * self.dim;
        self.ddf.as_ref().map(|g| &g[p * dd..(p + 1) * dd])
    }
}

fn block_size(dim: usize, with_gradients: bool) -> usize {
    if with_gradients {
        dim * (1 + dim)
    } else {
        dim
    }
}

/// Covariance of the stacked sample vector.
///
/// With `z = x_p - x_q`:
/// `Cov(F_i(x_p), F_j(x_q)) = dt b_ij(z)`,
/// `Cov(F_i(x_p), d_l F_j(x_q)) = -dt d_l b_ij(z)`,
/// `Cov(d_k F_i(x_p), F_j(x_q)) = dt d_k b_ij(z)`,
/// `Cov(d_k F_i(x_p), d_l F_j(x_q)) = -dt d_k d_l b_ij(z)`.
pub fn assemble_covariance(model: &CorrelationModel, request: &IncrementRequest) -> Result<DMatrix<f64>> {
    let d = model.dim();
    request.validate(d)?;
    let n = request.points.len();
    let bs = block_size(d, request.with_gradients);
    let dt = request.dt;
    let mut cov = DMatrix::zeros(n * bs, n * bs);
    let mut z = vec![0.0; d];
    for p0 in 0..n {
        for q0 in 0..=p0 {
            // Orient each pair by coordinates so a permuted request assembles identical entries.
            let (p, q) = if lex_less(request.points.point(q0), request.points.point(p0)) { (q0, p0) } else { (p0, q0) };
            for (k, v) in z.iter_mut().enumerate() {
                *v = request.points.point(p)[k] - request.points.point(q)[k];
            }
            let (rp, rq) = (p * bs, q * bs);
            if request.with_gradients {
                let td = model.tensor_derivatives(&z)?;
                let b = model.build_tensor(&z)?;
                for i in 0..d {
                    for j in 0..d {
                        cov[(rp + i, rq + j)] = dt * b[(i, j)];
                        for l in 0..d {
                            cov[(rp + i, rq + d + j * d + l)] = -dt * td.first(i, j, l);
                            cov[(rp + d + i * d + l, rq + j)] = dt * td.first(i, j, l);
                        }
                        for k in 0..d {
                            for l in 0..d {
                                cov[(rp + d + i * d + k, rq + d + j * d + l)] = -dt * td.second(i, j, k, l);
                            }
                        }
                    }
                }
            } else {
                let b = model.build_tensor(&z)?;
                for i in 0..d {
                    for j in 0..d {
                        cov[(rp + i, rq + j)] = dt * b[(i, j)];
                    }
                }
            }
            if p != q {
                for a in 0..bs {
                    for c in 0..bs {
                        cov[(rq + c, rp + a)] = cov[(rp + a, rq + c)];
                    }
                }
            }
        }
    }
    Ok(cov)
}

fn lex_order(x: &[f64], y: &[f64]) -> std::cmp::Ordering {
    x.iter().zip(y).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
}

fn lex_less(x: &[f64], y: &[f64]) -> bool {
    lex_order(x, y).is_lt()
}

/// Pivoted Cholesky factor `L` (`size x rank`) with `L L^T ~ cov`.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    dim: usize,
    n_points: usize,
    with_gradients: bool,
    /// Column-major, `size * rank`.
    columns: Vec<f64>,
    size: usize,
    rank: usize,
    jitter: f64,
}

/// Ties between equal residual diagonals go to the smallest `order[i]`.
fn pivoted_cholesky(a: &DMatrix<f64>, order: &[usize]) -> (Vec<f64>, usize) {
    let n = a.nrows();
    let mut diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let max_diag = diag.iter().copied().fold(0.0, f64::max);
    let mut cols: Vec<f64> = Vec::new();
    let mut used = vec![false; n];
    let mut rank = 0;
    while rank < n {
        let (piv, dp) = (0..n)
            .filter(|&i| !used[i])
            .map(|i| (i, diag[i]))
            .max_by(|x, y| x.1.total_cmp(&y.1).then(order[y.0].cmp(&order[x.0])))
            .unwrap();
        if dp.is_nan() || dp <= PIVOT_TOLERANCE * max_diag {
            break;
        }
        used[piv] = true;
        let sq = dp.sqrt();
        let mut col = vec![0.0; n];
        for i in 0..n {
            if used[i] && i != piv {
                continue;
            }
            let mut v = a[(i, piv)];
            for m in 0..rank {
                v -= cols[m * n + i] * cols[m * n + piv];
            }
            col[i] = v / sq;
        }
        col[piv] = sq;
        for i in 0..n {
            if !used[i] {
                diag[i] -= col[i] * col[i];
            }
        }
        diag[piv] = 0.0;
        cols.extend_from_slice(&col);
        rank += 1;
    }
    (cols, rank)
}

fn reconstruction_error(a: &DMatrix<f64>, cols: &[f64], rank: usize) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..=i {
            let mut v = a[(i, j)];
            for m in 0..rank {
                v -= cols[m * n + i] * cols[m * n + j];
            }
            worst = worst.max(v.abs());
        }
    }
    worst
}

impl CovarianceFactor {
    /// Factorizes `cov`, retrying with the jitter ladder on failure.
    pub fn from_covariance(cov: &DMatrix<f64>, dim: usize, n_points: usize, with_gradients: bool) -> Result<Self> {
        let order: Vec<usize> = (0..cov.nrows()).collect();
        Self::factorize(cov, dim, n_points, with_gradients, &order)
    }

    fn factorize(cov: &DMatrix<f64>, dim: usize, n_points: usize, with_gradients: bool, order: &[usize]) -> Result<Self> {
        let size = cov.nrows();
        let scale = (0..size).map(|i| cov[(i, i)]).fold(0.0, f64::max);
        if size == 0 || scale == 0.0 {
            return Ok(CovarianceFactor { dim, n_points, with_gradients, columns: Vec::new(), size, rank: 0, jitter: 0.0 });
        }
        if (0..size).any(|i| (0..size).any(|j| !cov[(i, j)].is_finite())) {
            return Err(Error::NonFinite("covariance matrix".into()));
        }
        let mut jitter = 0.0;
        let mut levels = JITTER_LADDER.iter();
        loop {
            let mut m = cov.clone();
            if jitter > 0.0 {
                for i in 0..size {
                    m[(i, i)] += jitter;
                }
            }
            let (columns, rank) = pivoted_cholesky(&m, order);
            if reconstruction_error(&m, &columns, rank) <= RECONSTRUCTION_TOLERANCE * scale {
                return Ok(CovarianceFactor { dim, n_points, with_gradients, columns, size, rank, jitter });
            }
            match levels.next() {
                Some(level) => jitter = level * scale,
                None => {
                    let min_eigenvalue =
                        SymmetricEigen::new(cov.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
                    return Err(Error::Factorization { min_eigenvalue });
                }
            }
        }
    }

    /// Factorizes the request's covariance. Pivot ties are broken by point
    /// coordinates, so permuting the points permutes the draw.
    pub fn new(model: &CorrelationModel, request: &IncrementRequest) -> Result<Self> {
        let cov = assemble_covariance(model, request)?;
        let d = model.dim();
        let n = request.points.len();
        let bs = block_size(d, request.with_gradients);
        let mut by_coords: Vec<usize> = (0..n).collect();
        by_coords.sort_by(|&p, &q| lex_order(request.points.point(p), request.points.point(q)));
        let mut order = vec![0; n * bs];
        for (position, &p) in by_coords.iter().enumerate() {
            for c in 0..bs {
                order[p * bs + c] = position * bs + c;
            }
        }
        Self::factorize(&cov, d, n, request.with_gradients, &order)
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Diagonal jitter that was added (absolute), zero if none was needed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Dense copy of the factor, `size x rank`.
    pub fn factor(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.size, self.rank, &self.columns)
    }

    /// One exact draw; consumes exactly `rank` standard normals.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> IncrementSample {
        let mut xi = vec![0.0; self.rank];
        fill_normal(rng, &mut xi);
        let mut flat = vec![0.0; self.size];
        for (m, &x) in xi.iter().enumerate() {
            let col = &self.columns[m * self.size..(m + 1) * self.size];
            for (v, c) in flat.iter_mut().zip(col) {
                *v += c * x;
            }
        }
        let d = self.dim;
        let bs = block_size(d, self.with_gradients);
        let mut out = IncrementSample::zeros(d, self.n_points, self.with_gradients);
        for p in 0..self.n_points {
            out.df[p * d..(p + 1) * d].copy_from_slice(&flat[p * bs..p * bs + d]);
            if let Some(g) = out.ddf.as_mut() {
                g[p * d * d..(p + 1) * d * d].copy_from_slice(&flat[p * bs + d..(p + 1) * bs]);
            }
        }
        out
    }
}

/// Draws one exact increment at the requested points.
pub fn sample_increment<R: Rng + ?Sized>(factor: &CovarianceFactor, rng: &mut R) -> IncrementSample {
    factor.sample(rng)
}

/// Random-Fourier increments for the Gaussian families.
///
/// With `w ~ N(0, I / l^2)` the kernel `C(x) = l^2 exp(-|x|^2 / 2 l^2)`
/// satisfies `C(x) = l^2 E cos(w.x)`, so `-Hess C = l^2 E[w w^T cos(w.x)]` and
/// the solenoidal part is `l^2 E[|w|^2 P_w cos(w.x)] / (d - 1)` with `P_w` the
/// projection orthogonal to `w`. Each step draws `modes` fresh frequencies
/// per part with Gaussian amplitudes, which reproduces `dt b(x - y)` exactly
/// in expectation while keeping the cost linear in the number of points.
#[derive(Debug, Clone)]
pub struct SpectralSampler {
    dim: usize,
    modes: usize,
    length_scale: f64,
    alpha: f64,
}

impl SpectralSampler {
    pub fn new(model: &CorrelationModel, modes: usize) -> Result<Self> {
        let alpha = model.family().potential_weight().ok_or_else(|| {
            Error::InvalidConfig("the spectral sampler needs a Gaussian correlation family".into())
        })?;
        if modes == 0 {
            return Err(Error::InvalidConfig("the spectral sampler needs at least one mode".into()));
        }
        Ok(SpectralSampler { dim: model.dim(), modes, length_scale: model.length_scale(), alpha })
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Draws the frequencies and cosine/sine amplitude vectors of one step,
    /// as `(w, a, b)` triples flattened with stride `d`.
    fn draw_modes<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let l = self.length_scale;
        let k = self.modes;
        let mut w = Vec::with_capacity(2 * k * d);
        let mut a = Vec::with_capacity(2 * k * d);
        let mut b = Vec::with_capacity(2 * k * d);
        let mut wk = vec![0.0; d];
        if self.alpha > 0.0 {
            let amp = self.alpha.sqrt() * l * (dt / k as f64).sqrt();
            for _ in 0..k {
                for v in wk.iter_mut() {
                    *v = normal(rng) / l;
                }
                let (xi, eta) = (normal(rng), normal(rng));
                w.extend_from_slice(&wk);
                a.extend(wk.iter().map(|v| amp * xi * v));
                b.extend(wk.iter().map(|v| amp * eta * v));
            }
        }
        if self.alpha < 1.0 {
            let amp = (1.0 - self.alpha).sqrt() * l / ((d - 1) as f64).sqrt() * (dt / k as f64).sqrt();
            let mut g = vec![0.0; d];
            for _ in 0..k {
                for v in wk.iter_mut() {
                    *v = normal(rng) / l;
                }
                let w2: f64 = wk.iter().map(|v| v * v).sum();
                let wn = w2.sqrt();
                w.extend_from_slice(&wk);
                for target in [&mut a, &mut b] {
                    fill_normal(rng, &mut g);
                    let proj: f64 = g.iter().zip(&wk).map(|(x, y)| x * y).sum::<f64>() / w2;
                    target.extend(g.iter().zip(&wk).map(|(gi, wi)| amp * wn * (gi - proj * wi)));
                }
            }
        }
        (w, a, b)
    }

    pub fn sample<R: Rng + ?Sized>(&self, request: &IncrementRequest, rng: &mut R) -> Result<IncrementSample> {
        let d = self.dim;
        request.validate(d)?;
        let n = request.points.len();
        let mut out = IncrementSample::zeros(d, n, request.with_gradients);
        if request.dt == 0.0 {
            return Ok(out);
        }
        let (w, a, b) = self.draw_modes(request.dt, rng);
        let total = w.len() / d;
        for p in 0..n {
            let x = request.points.point(p);
            let df = &mut out.df[p * d..(p + 1) * d];
            for m in 0..total {
                let wm = &w[m * d..(m + 1) * d];
                let phase: f64 = wm.iter().zip(x).map(|(u, v)| u * v).sum();
                let (s, c) = phase.sin_cos();
                let (am, bm) = (&a[m * d..(m + 1) * d], &b[m * d..(m + 1) * d]);
                for j in 0..d {
                    df[j] += am[j] * c + bm[j] * s;
                }
                if let Some(g) = out.ddf.as_mut() {
                    let gp = &mut g[p * d * d..(p + 1) * d * d];
                    for j in 0..d {
                        let coef = -am[j] * s + bm[j] * c;
                        for l in 0..d {
                            gp[j * d + l] += coef * wm[l];
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}
