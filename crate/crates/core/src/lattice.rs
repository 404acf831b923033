//! Deterministic low-discrepancy point sets on spheres and balls.
//!
//! In the plane the shell is `n` equally spaced points on the circle and the
//! interior is a Vogel sunflower; in higher dimension both come from a Halton
//! sequence. A random rotation per replica removes the lattice orientation.

use nalgebra::DMatrix;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::points::Points;
use crate::spectrum::random_orthogonal;

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// Radical inverse of `i` in base `b`.
pub fn radical_inverse(mut i: u64, b: u64) -> f64 {
    let inv = 1.0 / b as f64;
    let mut out = 0.0;
    let mut f = inv;
    while i > 0 {
        out += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    out
}

fn halton(i: u64, d: usize) -> Vec<f64> {
    (0..d).map(|k| radical_inverse(i + 1, PRIMES[k % PRIMES.len()])).collect()
}

/// `n` points on the sphere of radius `radius` centred at the origin.
pub fn shell(dim: usize, n: usize, radius: f64) -> Points {
    let mut pts = Points::zeros(dim, n);
    if dim == 2 {
        for k in 0..n {
            let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            pts.point_mut(k).copy_from_slice(&[radius * th.cos(), radius * th.sin()]);
        }
        return pts;
    }
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    for k in 0..n {
        let u = halton(k as u64, dim);
        let g: Vec<f64> = u.iter().map(|v| z.inverse_cdf(v.clamp(1e-12, 1.0 - 1e-12))).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (p, v) in pts.point_mut(k).iter_mut().zip(&g) {
            *p = radius * v / norm;
        }
    }
    pts
}

/// `n` points spread uniformly through the open ball of radius `radius`.
pub fn interior(dim: usize, n: usize, radius: f64) -> Points {
    let mut pts = Points::zeros(dim, n);
    if dim == 2 {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        for k in 0..n {
            let r = radius * ((k as f64 + 0.5) / n as f64).sqrt();
            let th = golden * k as f64;
            pts.point_mut(k).copy_from_slice(&[r * th.cos(), r * th.sin()]);
        }
        return pts;
    }
    let mut k = 0;
    let mut i = 0u64;
    while k < n {
        let u = halton(i, dim);
        i += 1;
        let v: Vec<f64> = u.iter().map(|x| 2.0 * x - 1.0).collect();
        if v.iter().map(|x| x * x).sum::<f64>() < 1.0 {
            for (p, x) in pts.point_mut(k).iter_mut().zip(&v) {
                *p = radius * x;
            }
            k += 1;
        }
    }
    pts
}

/// Shell followed by interior points; the shell occupies the first `n_shell` rows.
pub fn ball(dim: usize, n_shell: usize, n_interior: usize, radius: f64) -> Points {
    let mut coords = shell(dim, n_shell, radius).as_flat().to_vec();
    coords.extend_from_slice(interior(dim, n_interior, radius).as_flat());
    Points::from_flat(dim, coords).expect("consistent shape")
}

/// Applies a Haar-random rotation drawn from `rng`.
pub fn randomly_rotated<R: Rng + ?Sized>(points: &Points, rng: &mut R) -> Points {
    let d = points.dim();
    let q = DMatrix::from_row_slice(d, d, &random_orthogonal(d, rng));
    let mut out = points.clone();
    for p in 0..points.len() {
        let x = points.point(p);
        let y = out.point_mut(p);
        for i in 0..d {
            y[i] = (0..d).map(|j| q[(i, j)] * x[j]).sum();
        }
    }
    out
}

/// Translates every point by `center`.
pub fn shifted(points: &Points, center: &[f64]) -> Points {
    points.map_affine(1.0, center)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn shell_points_lie_on_the_sphere() {
        for d in [2, 3, 4] {
            for n in shell(d, 37, 2.5).norms() {
                assert_relative_eq!(n, 2.5, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn interior_points_lie_inside() {
        for d in [2, 3] {
            let pts = interior(d, 200, 3.0);
            assert_eq!(pts.len(), 200);
            assert!(pts.max_norm() < 3.0);
        }
    }

    #[test]
    fn rotation_preserves_norms() {
        let pts = ball(3, 20, 20, 1.5);
        let rot = randomly_rotated(&pts, &mut crate::rng::replica_stream(2, 1));
        for (a, b) in pts.norms().iter().zip(rot.norms()) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }
}
