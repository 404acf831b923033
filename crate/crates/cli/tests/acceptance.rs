//! End-to-end acceptance run. Prints one `criterion N: PASS|FAIL` line per
//! criterion followed by a tally. Failures are reported, not panicked on.

use std::fs;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ouflow::attractor::{
    attractor_criterion, brownian_max_check, diameter_tail, ou_tail_check, pairwise_growth_check, spatial_regularity_ratio,
    BoundCheck,
};
use ouflow::dimension::{correlation_dimension, equilibrium_report, EmpiricalMeasure, RangePolicy};
use ouflow::flow::{simulate, stable_dt};
use ouflow::radial::RadialLaw;
use ouflow::rng::replica_stream;
use ouflow::sampler::{assemble_covariance, CovarianceFactor, IncrementRequest};
use ouflow::spectrum::{estimate_spectrum_qr, lyapunov_dimension, random_orthogonal, QrOptions};
use ouflow::stats::{linear_fit, mean_se};
use ouflow::{CorrelationModel, Family, Points, SamplerKind, Scheme, SimConfig};
use rand::Rng;
use rayon::prelude::*;

fn expanding() -> CorrelationModel {
    CorrelationModel::gaussian_mixture(0.0, 1.0, 2, 0.5).unwrap()
}

fn contracting() -> CorrelationModel {
    CorrelationModel::gaussian_potential(1.0, 2, 0.5).unwrap()
}

fn spectral(model: CorrelationModel, seed: u64) -> SimConfig {
    SimConfig::new(model).with_sampler(SamplerKind::Spectral { modes: 32 }).with_seed(seed, 0)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_spectrum() -> Outcome {
    let cfg = SimConfig::new(expanding()).with_dt(1e-3).with_horizon(200.0).with_seed(1, 0);
    let (est, _) = estimate_spectrum_qr(&cfg, 20, &QrOptions::default()).unwrap();
    let target = [0.5, -1.5];
    let ok = est.exponents.iter().zip(target).all(|(e, t): (&f64, f64)| (e - t).abs() <= 0.05f64.max(0.1 * t.abs()));
    outcome(ok, format!("QR {:.4?} +- {:.4?} vs (0.5, -1.5)", est.exponents, est.stderr.unwrap()))
}

fn c2_dimension_arithmetic() -> Outcome {
    let a = lyapunov_dimension(&[1.0, -2.0], &[1, 1]).unwrap();
    let b = lyapunov_dimension(&[2.0, -1.0], &[1, 2]).unwrap();
    let c = lyapunov_dimension(&[1.0, 0.5], &[1, 1]).unwrap();
    outcome(a == 1.5 && b == 3.0 && c == 2.0, format!("D(1,-2) = {a}, D(2,-1;1,2) = {b}, D(1,0.5) = {c}"))
}

fn uniform_cloud(n: usize, seed: u64, map: impl Fn(f64, f64) -> [f64; 2]) -> EmpiricalMeasure {
    let mut rng = replica_stream(seed, 0);
    let coords: Vec<f64> = (0..n).flat_map(|_| map(rng.random(), rng.random())).collect();
    EmpiricalMeasure::from_points(Points::from_flat(2, coords).unwrap())
}

fn c3_equilibrium_dimension() -> Outcome {
    let policy = RangePolicy::default();
    let seg = correlation_dimension(&uniform_cloud(10_000, 1, |u, _| [2.0 * u, u]), &policy).unwrap().estimate;
    let disk = correlation_dimension(
        &uniform_cloud(10_000, 2, |u, v| {
            let (r, a) = (u.sqrt(), std::f64::consts::TAU * v);
            [r * a.cos(), r * a.sin()]
        }),
        &policy,
    )
    .unwrap()
    .estimate;
    let calibrated = (seg - 1.0).abs() <= 0.05 && (disk - 2.0).abs() <= 0.1;
    let report = equilibrium_report(&spectral(expanding(), 7), &[10.0, 20.0, 30.0], 10_000, &policy, 2000).unwrap();
    let last = report.entries.last().unwrap();
    let fit = last.fit.as_ref().unwrap();
    let pw = last.pointwise.as_ref().unwrap();
    let two_point = RadialLaw::new(expanding()).unwrap().small_r_exponent() - 1.0;
    let ok = calibrated && (fit.estimate - report.d_closed_form).abs() <= 0.15 * report.d_closed_form;
    outcome(
        ok,
        format!(
            "correlation dim {:.3} +- {:.3} at T = {} (stabilized {:?}) vs D = {:.4}; calibration segment {seg:.3}, disk {disk:.3}; \
             pointwise dim {:.3} +- {:.3}; two-point prediction {two_point:.3}",
            fit.estimate,
            fit.ci_halfwidth,
            last.horizon,
            report.stabilized,
            report.d_closed_form,
            pw.estimate,
            pw.ci_halfwidth
        ),
    )
}

/// The `r0` at which the invariant law puts equal mass below `r0 / 10` and
/// above `10 r0`.
fn balanced_start(law: &RadialLaw) -> f64 {
    let cdf = |x: f64| law.invariant_cdf(x).unwrap().unwrap();
    let (mut lo, mut hi) = (1e-4f64, 10.0f64);
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        if cdf(mid / 10.0) < 1.0 - cdf(10.0 * mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo * hi).sqrt()
}

fn c4_dichotomy() -> Outcome {
    let transient = RadialLaw::new(contracting()).unwrap();
    let dt = stable_dt(transient.model());
    let collapsed = (0..200u64)
        .into_par_iter()
        .filter(|&i| {
            let s = transient.simulate_with(1.0, dt, 100.0, Scheme::EulerMaruyama, &mut replica_stream(40, i), |_, _| {});
            s.unwrap().terminal < 1e-3
        })
        .count();
    let recurrent = RadialLaw::new(expanding()).unwrap();
    let dt = stable_dt(recurrent.model());
    let r0 = balanced_start(&recurrent);
    let crossed = (0..200u64)
        .into_par_iter()
        .filter(|&i| {
            let s = recurrent.simulate_with(r0, dt, 1000.0, Scheme::EulerMaruyama, &mut replica_stream(41, i), |_, _| {});
            let s = s.unwrap();
            s.min < r0 / 10.0 && s.max > 10.0 * r0
        })
        .count();
    outcome(
        collapsed >= 180 && crossed >= 180,
        format!("transient: {collapsed}/200 below 1e-3 r0 at T = 100; recurrent (r0 = {r0:.4}): {crossed}/200 cross both r0/10 and 10 r0"),
    )
}

fn c5_invariant_density() -> Outcome {
    let law = RadialLaw::new(expanding()).unwrap();
    let dt = stable_dt(law.model());
    let mut samples = Vec::new();
    let mut k = 0u64;
    law.simulate_with(1.0, dt, 20_100.0, Scheme::EulerMaruyama, &mut replica_stream(50, 0), |t, r| {
        k += 1;
        if t > 100.0 && k.is_multiple_of(10) {
            samples.push(r);
        }
    })
    .unwrap();
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut sup = 0.0f64;
    for j in 0..=400 {
        let x = 1e-3 * 10f64.powf(4.0 * j as f64 / 400.0);
        let emp = samples.partition_point(|&s| s <= x) as f64 / n;
        sup = sup.max((emp - law.invariant_cdf(x).unwrap().unwrap()).abs());
    }
    let mut slopes = Vec::new();
    let mut slopes_ok = true;
    for model in [expanding(), contracting(), CorrelationModel::gaussian_potential(1.0, 2, 0.1).unwrap()] {
        let law = RadialLaw::new(model).unwrap();
        let xs: Vec<f64> = (0..=20).map(|k| 1e-3 * 10f64.powf(k as f64 / 20.0)).collect();
        let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
        let lm: Vec<f64> = xs.iter().map(|&x| law.speed_density(x).unwrap().ln()).collect();
        let slope = linear_fit(&lx, &lm).slope;
        let target = law.speed_exponent();
        slopes_ok &= (slope - target).abs() <= 0.02 * target.abs().max(1.0);
        slopes.push(format!("{slope:.4}/{target:.4}"));
    }
    outcome(
        sup < 0.05 && slopes_ok,
        format!("occupation vs m_p sup-CDF distance {sup:.4} ({} samples); small-r slopes (fit/exact) {}", samples.len(), slopes.join(", ")),
    )
}

fn c6_generator() -> Outcome {
    let mut worst = 0.0f64;
    for model in [expanding(), contracting(), CorrelationModel::gaussian_mixture(0.5, 1.0, 3, 0.3).unwrap()] {
        let law = RadialLaw::new(model).unwrap();
        for k in 0..=60 {
            let r = 0.2 * 25f64.powf(k as f64 / 60.0);
            let (res, scale) = law.generator_residual(r).unwrap();
            worst = worst.max(res.abs() / scale);
        }
    }
    outcome(worst <= 1e-4, format!("max |A s| / scale on [0.2, 5] = {worst:.2e}"))
}

fn c7_one_point_law() -> Outcome {
    let (c, t, x0) = (0.5, 1.0, [1.0, -0.5]);
    let mut worst = 0.0f64;
    for (i, model) in [expanding(), contracting()].into_iter().enumerate() {
        let cfg = SimConfig::new(model).with_horizon(t);
        let initial = Points::from_rows(2, &[x0.to_vec()]).unwrap();
        let finals: Vec<Vec<f64>> = (0..10_000u64)
            .into_par_iter()
            .map(|r| simulate(&cfg.clone().with_seed(70 + i as u64, r), &initial).unwrap().frames.last().unwrap().positions.point(0).to_vec())
            .collect();
        let var = (1.0 - (-2.0 * c * t).exp()) / (2.0 * c);
        for k in 0..2 {
            let mean = x0[k] * (-c * t).exp();
            let xs: Vec<f64> = finals.iter().map(|p| p[k]).collect();
            let m = mean_se(&xs);
            let v = mean_se(&xs.iter().map(|x| (x - mean).powi(2)).collect::<Vec<_>>());
            worst = worst.max((m.mean - mean).abs() / m.se).max((v.mean - var).abs() / v.se);
        }
    }
    outcome(worst < 4.0, format!("largest deviation {worst:.2} SE over means and variances, 1e4 replicas, both default models"))
}

fn c8_attractor_criterion() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for (name, model) in [("expanding", expanding()), ("contracting", contracting())] {
        let rep = attractor_criterion(&spectral(model, 3), &[5.0, 10.0, 20.0], &[0.0, 1.0, 5.0, 10.0, 20.0], 16).unwrap();
        let finals: Vec<String> = rep
            .curves
            .iter()
            .map(|c| {
                let e = c.last().unwrap();
                format!("R={}: {:.3}+-{:.3}", e.radius, e.mean_sup, e.se)
            })
            .collect();
        ok &= rep.common_limit;
        details.push(format!("{name}: {} common={} M={:.3}", finals.join(" "), rep.common_limit, rep.bound_m));
    }
    outcome(ok, details.join("; "))
}

fn c9_inequalities() -> Outcome {
    let mut checks: Vec<BoundCheck> = Vec::new();
    for t in [1.0, 5.0] {
        for model in [expanding(), contracting()] {
            checks.extend(ou_tail_check(&model, &[2.0, 5.0, 10.0], &[0.5, 1.0, 2.0, 4.0], t, 10_000, 90).unwrap());
        }
    }
    for model in [expanding(), contracting()] {
        let cfg = SimConfig::new(model).with_seed(91, 0);
        checks.extend(pairwise_growth_check(&cfg, 0.1, 2.0, &[1.5, 2.0, 4.0, 8.0], 400).unwrap());
    }
    let tail =
        diameter_tail(&spectral(contracting(), 92).with_scheme(Scheme::ExponentialEuler), 2.0, &[1.0, 1.5, 2.0, 3.0, 4.0, 6.0], 32, 400)
            .unwrap();
    checks.extend(tail.checks.iter().cloned());
    let bm = brownian_max_check(&[(1.0, 0.5), (1.0, 1.0), (2.0, 1.0), (2.0, 2.0), (3.0, 1.0), (3.0, 4.0)], 10_000, 50, 93).unwrap();
    checks.extend(bm.tail_checks.iter().cloned());
    let violated: Vec<String> =
        checks.iter().filter(|c| !c.satisfied).map(|c| format!("{} {:?}", c.name, c.parameters)).collect();
    let count = |name: &str| checks.iter().filter(|c| c.name == name).count();
    outcome(
        violated.is_empty() && bm.ks_pass,
        format!(
            "{} parameter points (ou_tail {}, pairwise_growth {}, diameter_tail {} [{:?}], brownian_max_tail {}); KS {:.4} < {:.4}; violations {:?}",
            checks.len(),
            count("ou_tail"),
            count("pairwise_growth"),
            count("diameter_tail"),
            tail.verdict,
            count("brownian_max_tail"),
            bm.ks_statistic,
            bm.ks_critical_1pct,
            violated
        ),
    )
}

fn c10_structure() -> Outcome {
    let mut rng = replica_stream(100, 0);
    let mut violations = 0usize;
    let families = [Family::GaussianPotential, Family::GaussianSolenoidal, Family::GaussianMixture { alpha: 0.3 }];
    for case in 0..100 {
        let family = families[case % 3];
        let d = 2 + case % 3;
        let m = CorrelationModel::gaussian(family, 1.0, d, 0.5).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
        let q = DMatrix::from_row_slice(d, d, &random_orthogonal(d, &mut rng));
        let ox: Vec<f64> = (q.clone() * DVector::from_column_slice(&x)).iter().copied().collect();
        if (q.transpose() * m.build_tensor(&ox).unwrap() * &q - m.build_tensor(&x).unwrap()).norm() > 1e-12 {
            violations += 1;
        }
        let r: f64 = rng.random_range(0.01..4.0);
        let mut axis = vec![0.0; d];
        axis[0] = r;
        let b = m.build_tensor(&axis).unwrap();
        let expected = DMatrix::from_fn(d, d, |i, j| if i != j { 0.0 } else if i == 0 { m.bl(r) } else { m.bn(r) });
        if (b - expected).abs().max() > 1e-15 {
            violations += 1;
        }
        if x.iter().map(|v| v * v).sum::<f64>().sqrt() > 1e-3 {
            let td = m.tensor_derivatives(&x).unwrap();
            let h = 1e-5;
            for k in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                let fd = (m.build_tensor(&xp).unwrap() - m.build_tensor(&xm).unwrap()) / (2.0 * h);
                for i in 0..d {
                    for j in 0..d {
                        let an = td.first(i, j, k);
                        if (fd[(i, j)] - an).abs() > 1e-5 * an.abs().max(1.0) {
                            violations += 1;
                        }
                    }
                }
            }
        }
        let coords: Vec<f64> = (0..2 * 5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let pts = Points::from_flat(2, coords).unwrap();
        let cov = assemble_covariance(&CorrelationModel::gaussian(family, 1.0, 2, 0.5).unwrap(), &IncrementRequest::new(&pts, true, 1.0))
            .unwrap();
        if cov != cov.transpose() || cov.symmetric_eigenvalues().min() < -1e-10 {
            violations += 1;
        }
    }
    let mut sampler_entries = 0;
    for family in families {
        let m = CorrelationModel::gaussian(family, 1.0, 2, 0.5).unwrap();
        let pts = Points::from_rows(2, &[vec![0.0, 0.0], vec![0.5, 0.2], vec![-0.3, 0.9]]).unwrap();
        let req = IncrementRequest::new(&pts, true, 0.2);
        let target = assemble_covariance(&m, &req).unwrap();
        let factor = CovarianceFactor::new(&m, &req).unwrap();
        let mut srng = replica_stream(101, 0);
        let draws: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                let s = factor.sample(&mut srng);
                (0..s.len()).flat_map(|p| [s.df_at(p), s.ddf_at(p).unwrap()].concat()).collect()
            })
            .collect();
        for i in 0..target.nrows() {
            for j in 0..=i {
                let prods: Vec<f64> = draws.iter().map(|z| z[i] * z[j]).collect();
                let ms = mean_se(&prods);
                sampler_entries += 1;
                if (ms.mean - target[(i, j)]).abs() > 4.0 * ms.se + 1e-12 {
                    violations += 1;
                }
            }
        }
    }
    outcome(
        violations == 0,
        format!(
            "{violations} violations over 100 isotropy, 100 axis-form, finite-difference and 100 covariance-PSD cases, and {sampler_entries} sampler covariance entries"
        ),
    )
}

fn c11_regularity() -> Outcome {
    let radii = [5.0, 10.0, 20.0, 50.0];
    let pts = spatial_regularity_ratio(
        &spectral(expanding(), 110),
        &radii,
        1.0,
        |r| ((8.0 * std::f64::consts::PI * r).ceil() as usize).max(100),
        30,
    )
    .unwrap();
    let decreasing = pts.windows(2).all(|w| w[1].ratio < w[0].ratio);
    let last = pts.last().unwrap();
    let factor = (-0.5f64).exp();
    let norm_ok = (last.norm_ratio - factor).abs() <= 2.0 * last.norm_ratio_se;
    let curve: Vec<String> = pts.iter().map(|p| format!("{}: {:.4}+-{:.4}", p.radius, p.ratio, p.ratio_se)).collect();
    outcome(
        decreasing && last.ratio < 0.05 && norm_ok,
        format!(
            "ratio {} (decreasing {decreasing}); norm ratio at R = 50: {:.4} +- {:.4} vs e^-c = {factor:.4}",
            curve.join(", "),
            last.norm_ratio,
            last.norm_ratio_se
        ),
    )
}

fn c12_reproducibility() -> Outcome {
    let tmp = std::env::temp_dir().join(format!("ouflow-acceptance-{}", std::process::id()));
    let config = tmp.join("config.toml");
    fs::create_dir_all(&tmp).unwrap();
    fs::write(&config, "seed = 3\n[numerics]\nhorizon = 5.0\nreplicas = 4\n").unwrap();
    let mut bodies = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_ouflow"))
            .args(["spectrum", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        let text = fs::read_to_string(out.join("batches.csv")).unwrap();
        bodies.push(text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n"));
    }
    let _ = fs::remove_dir_all(&tmp);
    outcome(bodies[0] == bodies[1] && !bodies[0].is_empty(), format!("two spectrum runs, {} CSV body bytes each", bodies[0].len()))
}

fn main() {
    let criteria: [(usize, fn() -> Outcome); 12] = [
        (1, c1_spectrum),
        (2, c2_dimension_arithmetic),
        (3, c3_equilibrium_dimension),
        (4, c4_dichotomy),
        (5, c5_invariant_density),
        (6, c6_generator),
        (7, c7_one_point_law),
        (8, c8_attractor_criterion),
        (9, c9_inequalities),
        (10, c10_structure),
        (11, c11_regularity),
        (12, c12_reproducibility),
    ];
    let filter: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut passed = 0;
    let mut run = 0;
    for (n, f) in criteria {
        if filter.is_some_and(|only| only != n) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        run += 1;
        passed += o.pass as usize;
        println!(
            "criterion {n}: {} ({:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("acceptance: {passed}/{run} criteria pass");
}
