//! Pullback clouds as empirical measures and their correlation dimension.
//!
//! The dimension of a cloud is estimated as the slope of `ln C(r)` against
//! `ln r`, where `C(r)` is the fraction of point pairs closer than `r`. Pair
//! distances are accumulated in a fine logarithmic histogram, so percentiles
//! and `C(r)` at bin edges are exact counts.
//!
//! A fixed-mass estimator of the pointwise dimension is provided alongside:
//! the mean of `ln r_k(x)`, the distance from `x` to its `k`-th neighbour,
//! grows like `psi(k) / D` with `psi` the digamma function.

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::digamma;

use crate::correlation::CorrelationModel;
use crate::error::{Error, Result};
use crate::flow::{pullback_snapshots, SimConfig};
use crate::points::{distance, Points};
use crate::spectrum::model_spectrum;
use crate::stats::{linear_fit, mean_se, quantile_sorted, t_quantile_975};

/// Smallest cloud accepted for a dimension fit.
pub const MIN_CLOUD: usize = 1000;

const BINS: usize = 8192;
/// Histogram floor relative to the largest possible distance.
const FLOOR: f64 = 1e-12;
/// Clouds whose bounding box is smaller than this are treated as a point.
pub const DEGENERATE_DIAMETER: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureMeta {
    pub model: String,
    pub horizon: f64,
    pub seed: u64,
    pub replica: u64,
    pub n: usize,
}

/// A uniformly weighted point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    pub points: Points,
    pub meta: MeasureMeta,
}

impl EmpiricalMeasure {
    pub fn new(points: Points, meta: MeasureMeta) -> Self {
        EmpiricalMeasure { points, meta }
    }

    pub fn from_points(points: Points) -> Self {
        let n = points.len();
        EmpiricalMeasure {
            points,
            meta: MeasureMeta { model: String::new(), horizon: 0.0, seed: 0, replica: 0, n },
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.points.len() as f64
    }

    /// Sample mean and per-coordinate sample covariance, row-major.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.points.dim();
        let n = self.points.len() as f64;
        let mut mean = vec![0.0; d];
        for p in self.points.iter() {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / n;
            }
        }
        let mut cov = vec![0.0; d * d];
        for p in self.points.iter() {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += (p[i] - mean[i]) * (p[j] - mean[j]) / (n - 1.0);
                }
            }
        }
        (mean, cov)
    }

    /// Quantile of pairwise distances over (a deterministic subsample of at
    /// most `max_points` of) the cloud.
    pub fn pair_distance_quantile(&self, q: f64, max_points: usize) -> f64 {
        let n = self.points.len();
        let step = n.div_ceil(max_points.max(2));
        let idx: Vec<usize> = (0..n).step_by(step.max(1)).collect();
        let mut d = Vec::with_capacity(idx.len() * idx.len() / 2);
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                d.push(distance(self.points.point(i), self.points.point(j)));
            }
        }
        d.sort_by(f64::total_cmp);
        quantile_sorted(&d, q)
    }
}

/// Which part of the pair-distance distribution is fitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RangePolicy {
    /// Pair-distance quantile of the smallest fitted radius.
    pub lo_quantile: f64,
    /// Pair-distance quantile of the largest fitted radius.
    pub hi_quantile: f64,
    pub radii: usize,
    /// Disjoint subsets used for the confidence interval.
    pub subsets: usize,
    pub min_r2: f64,
    pub min_points: usize,
}

impl Default for RangePolicy {
    fn default() -> Self {
        RangePolicy { lo_quantile: 0.001, hi_quantile: 0.05, radii: 20, subsets: 5, min_r2: 0.98, min_points: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionFit {
    pub estimate: f64,
    pub ci_halfwidth: f64,
    pub scaling_range: (f64, f64),
    pub fit_r2: f64,
    pub fit_points: usize,
    pub accepted: bool,
    pub degenerate: bool,
    /// `(ln r, ln C(r))` pairs used in the fit.
    pub curve: Vec<(f64, f64)>,
}

struct PairHistogram {
    log_lo: f64,
    width: f64,
    /// Pairs closer than the histogram floor.
    underflow: u64,
    counts: Vec<u64>,
    total: u64,
}

impl PairHistogram {
    fn build(points: &Points, indices: &[usize], dmax: f64) -> Self {
        let log_lo = (dmax * FLOOR).ln();
        let width = (dmax.ln() - log_lo) / BINS as f64;
        let mut counts = vec![0u64; BINS];
        let mut underflow = 0u64;
        let lo2 = (dmax * FLOOR).powi(2);
        for (a, &i) in indices.iter().enumerate() {
            let x = points.point(i);
            for &j in &indices[a + 1..] {
                let y = points.point(j);
                let s: f64 = x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum();
                if s < lo2 {
                    underflow += 1;
                } else {
                    let b = ((0.5 * s.ln() - log_lo) / width) as usize;
                    counts[b.min(BINS - 1)] += 1;
                }
            }
        }
        let m = indices.len() as u64;
        PairHistogram { log_lo, width, underflow, counts, total: m * m.saturating_sub(1) / 2 }
    }

    fn edge(&self, b: usize) -> f64 {
        (self.log_lo + b as f64 * self.width).exp()
    }

    /// Smallest bin edge below which at least a fraction `q` of pairs lie.
    fn quantile_edge(&self, q: f64) -> usize {
        let target = (q * self.total as f64).ceil() as u64;
        let mut acc = self.underflow;
        for (b, c) in self.counts.iter().enumerate() {
            if acc >= target {
                return b;
            }
            acc += c;
        }
        BINS
    }

    /// Cumulative counts at every bin edge.
    fn cumulative(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(BINS + 1);
        let mut acc = self.underflow;
        out.push(acc);
        for c in &self.counts {
            acc += c;
            out.push(acc);
        }
        out
    }
}

fn bounding_diameter(points: &Points) -> f64 {
    let d = points.dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in points.iter() {
        for k in 0..d {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    lo.iter().zip(&hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt()
}

fn fit_edges(hist: &PairHistogram, edges: &[usize]) -> (Vec<(f64, f64)>, f64, f64) {
    let cum = hist.cumulative();
    let curve: Vec<(f64, f64)> = edges
        .iter()
        .filter(|&&b| cum[b] > 0)
        .map(|&b| (hist.edge(b).ln(), (cum[b] as f64 / hist.total as f64).ln()))
        .collect();
    if curve.len() < 2 {
        return (curve, f64::NAN, f64::NAN);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = curve.iter().copied().unzip();
    let f = linear_fit(&x, &y);
    (curve, f.slope, f.r2)
}

/// Correlation-dimension fit of a cloud of at least [`MIN_CLOUD`] points.
pub fn correlation_dimension(cloud: &EmpiricalMeasure, policy: &RangePolicy) -> Result<DimensionFit> {
    let points = &cloud.points;
    let n = points.len();
    if n < MIN_CLOUD {
        return Err(Error::InsufficientData(format!("{n} points; a dimension fit needs at least {MIN_CLOUD}")));
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("cloud".into()));
    }
    if !(0.0 < policy.lo_quantile && policy.lo_quantile < policy.hi_quantile && policy.hi_quantile <= 1.0)
        || policy.radii < 2
        || policy.subsets < 2
    {
        return Err(Error::InvalidConfig(format!("invalid range policy {policy:?}")));
    }
    let dmax = bounding_diameter(points);
    if dmax <= DEGENERATE_DIAMETER {
        return Ok(DimensionFit {
            estimate: 0.0,
            ci_halfwidth: 0.0,
            scaling_range: (0.0, 0.0),
            fit_r2: 1.0,
            fit_points: 0,
            accepted: true,
            degenerate: true,
            curve: Vec::new(),
        });
    }
    let all: Vec<usize> = (0..n).collect();
    let hist = PairHistogram::build(points, &all, dmax);
    let b_lo = hist.quantile_edge(policy.lo_quantile);
    let b_hi = hist.quantile_edge(policy.hi_quantile).max(b_lo + 1).min(BINS);
    let mut edges: Vec<usize> = (0..policy.radii)
        .map(|k| {
            let f = k as f64 / (policy.radii - 1) as f64;
            (b_lo as f64 + f * (b_hi - b_lo) as f64).round() as usize
        })
        .collect();
    edges.dedup();
    let (curve, slope, r2) = fit_edges(&hist, &edges);
    let slopes: Vec<f64> = (0..policy.subsets)
        .map(|s| {
            let idx: Vec<usize> = (s..n).step_by(policy.subsets).collect();
            let h = PairHistogram::build(points, &idx, dmax);
            fit_edges(&h, &edges).1
        })
        .collect();
    let spread = mean_se(&slopes);
    let ci_halfwidth = t_quantile_975(policy.subsets - 1) * spread.se;
    let fit_points = curve.len();
    Ok(DimensionFit {
        estimate: slope,
        ci_halfwidth,
        scaling_range: (hist.edge(edges[0]), hist.edge(*edges.last().unwrap())),
        fit_r2: r2,
        fit_points,
        accepted: r2 >= policy.min_r2 && fit_points >= policy.min_points && slope.is_finite(),
        degenerate: false,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointwiseFit {
    pub estimate: f64,
    pub ci_halfwidth: f64,
    /// Neighbour orders used in the fit.
    pub neighbours: Vec<usize>,
    pub fit_r2: f64,
    pub centers: usize,
}

/// Fixed-mass estimate of the pointwise dimension, averaging over up to
/// `max_centers` evenly strided centres.
pub fn pointwise_dimension(cloud: &EmpiricalMeasure, max_centers: usize) -> Result<PointwiseFit> {
    let points = &cloud.points;
    let n = points.len();
    if n < MIN_CLOUD {
        return Err(Error::InsufficientData(format!("{n} points; a dimension fit needs at least {MIN_CLOUD}")));
    }
    if !points.is_finite() {
        return Err(Error::NonFinite("cloud".into()));
    }
    let dmax = bounding_diameter(points);
    if dmax <= DEGENERATE_DIAMETER {
        return Ok(PointwiseFit { estimate: 0.0, ci_halfwidth: 0.0, neighbours: Vec::new(), fit_r2: 1.0, centers: 0 });
    }
    let kmax = (n / 40).min(256);
    let neighbours: Vec<usize> = (1..).map(|e| 1usize << e).take_while(|&k| k <= kmax).collect();
    if neighbours.len() < 3 {
        return Err(Error::InsufficientData(format!("{n} points give too few neighbour orders")));
    }
    let stride = n.div_ceil(max_centers.max(1));
    let centers: Vec<usize> = (0..n).step_by(stride).collect();
    let floor = dmax * FLOOR;
    let last = *neighbours.last().unwrap();
    let logs: Vec<Vec<f64>> = centers
        .par_iter()
        .map(|&i| {
            let x = points.point(i);
            let mut ds: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| distance(x, points.point(j))).collect();
            ds.select_nth_unstable_by(last - 1, f64::total_cmp);
            let head = &mut ds[..last];
            head.sort_unstable_by(f64::total_cmp);
            neighbours.iter().map(|&k| head[k - 1].max(floor).ln()).collect()
        })
        .collect();
    let xs: Vec<f64> = neighbours.iter().map(|&k| digamma(k as f64)).collect();
    let fit_rows = |rows: &[&Vec<f64>]| {
        let ys: Vec<f64> = (0..neighbours.len())
            .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64)
            .collect();
        linear_fit(&xs, &ys)
    };
    let all: Vec<&Vec<f64>> = logs.iter().collect();
    let fit = fit_rows(&all);
    let subsets = 5;
    let estimates: Vec<f64> = (0..subsets)
        .map(|s| {
            let rows: Vec<&Vec<f64>> = logs.iter().skip(s).step_by(subsets).collect();
            1.0 / fit_rows(&rows).slope
        })
        .collect();
    let spread = mean_se(&estimates);
    Ok(PointwiseFit {
        estimate: 1.0 / fit.slope,
        ci_halfwidth: t_quantile_975(subsets - 1) * spread.se,
        neighbours,
        fit_r2: fit.r2,
        centers: centers.len(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumEntry {
    pub horizon: f64,
    pub fit: Option<DimensionFit>,
    pub pointwise: Option<PointwiseFit>,
    /// 95th percentile of pairwise distances.
    pub pair_distance_p95: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReport {
    pub lambda1: f64,
    #[serde(rename = "D_closed_form")]
    pub d_closed_form: f64,
    /// The closed-form dimension, or zero for a Dirac equilibrium.
    pub prediction: f64,
    pub entries: Vec<EquilibriumEntry>,
    /// Last two estimates lie within each other's confidence intervals.
    pub stabilized: Option<bool>,
    /// For `lambda_1 <= 0`: the pair-distance scale shrinks along `T`.
    pub diameter_decreasing: Option<bool>,
}

/// Pullback clouds at every horizon in `horizons` (one realization), with a
/// dimension fit at each when `lambda_1 > 0`. The pointwise estimate uses up
/// to `pointwise_centers` centres.
pub fn equilibrium_report(
    config: &SimConfig,
    horizons: &[f64],
    n_samples: usize,
    policy: &RangePolicy,
    pointwise_centers: usize,
) -> Result<EquilibriumReport> {
    let model: &CorrelationModel = &config.model;
    let spectrum = model_spectrum(model)?;
    let lambda1 = spectrum.top();
    let d_closed_form = spectrum.dimension()?;
    let clouds = pullback_snapshots(config, n_samples, horizons)?;
    let fit_wanted = lambda1 > 0.0;
    let mut entries = Vec::with_capacity(clouds.len());
    for cloud in &clouds {
        let fit = if fit_wanted { Some(correlation_dimension(cloud, policy)?) } else { None };
        let pointwise = if fit_wanted { Some(pointwise_dimension(cloud, pointwise_centers)?) } else { None };
        entries.push(EquilibriumEntry {
            horizon: cloud.meta.horizon,
            fit,
            pointwise,
            pair_distance_p95: cloud.pair_distance_quantile(0.95, 2000),
        });
    }
    let stabilized = if fit_wanted && entries.len() >= 2 {
        let a = entries[entries.len() - 2].fit.as_ref().unwrap();
        let b = entries[entries.len() - 1].fit.as_ref().unwrap();
        let gap = (a.estimate - b.estimate).abs();
        Some(gap <= a.ci_halfwidth.max(b.ci_halfwidth))
    } else {
        None
    };
    let diameter_decreasing = (!fit_wanted && entries.len() >= 2)
        .then(|| entries.windows(2).all(|w| w[1].pair_distance_p95 <= w[0].pair_distance_p95));
    Ok(EquilibriumReport {
        lambda1,
        d_closed_form,
        prediction: if fit_wanted { d_closed_form } else { 0.0 },
        entries,
        stabilized,
        diameter_decreasing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn identical_points_have_dimension_zero() {
        let cloud = EmpiricalMeasure::from_points(Points::from_flat(2, vec![0.25; 2 * 1200]).unwrap());
        let fit = correlation_dimension(&cloud, &RangePolicy::default()).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.estimate, 0.0);
    }

    #[test]
    fn small_clouds_are_rejected() {
        let cloud = EmpiricalMeasure::from_points(Points::zeros(2, 10));
        assert!(matches!(correlation_dimension(&cloud, &RangePolicy::default()), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn square_has_dimension_two() {
        let mut rng = crate::rng::replica_stream(3, 0);
        let coords: Vec<f64> = (0..2 * 3000).map(|_| rng.random::<f64>()).collect();
        let cloud = EmpiricalMeasure::from_points(Points::from_flat(2, coords).unwrap());
        let fit = correlation_dimension(&cloud, &RangePolicy::default()).unwrap();
        assert!((fit.estimate - 2.0).abs() < 0.15, "{fit:?}");
        assert!(fit.accepted);
        let pw = pointwise_dimension(&cloud, 1000).unwrap();
        assert!((pw.estimate - 2.0).abs() < 0.15, "{pw:?}");
    }
}
