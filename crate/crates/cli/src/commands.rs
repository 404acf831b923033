use ouflow::attractor::{attractor_criterion, contraction_factor, spatial_regularity_ratio, squeezing_frequency};
use ouflow::dimension::{equilibrium_report, RangePolicy};
use ouflow::radial::{Classification, RadialLaw};
use ouflow::rng::replica_stream;
use ouflow::spectrum::{estimate_spectrum_qr, model_spectrum, summarize, QrOptions};
use ouflow::{CorrelationModel, Points, Scheme, SimConfig};
use rand::Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{Command, ExperimentConfig};
use crate::error::CliError;
use crate::output::{num, opt, OutputDir};

pub fn run(command: Command, config: &ExperimentConfig, out: &mut OutputDir) -> Result<(), CliError> {
    let model = config.build_model()?;
    match command {
        Command::ValidateModel => validate_model(config, model, out),
        Command::Spectrum => spectrum(config, model, out),
        Command::Radial => radial(config, model, out),
        Command::PullbackDim => pullback_dim(config, model, out),
        Command::Attractor => attractor(config, model, out),
        Command::Squeeze => squeeze(config, model, out),
    }
}

fn model_json(model: &CorrelationModel) -> serde_json::Value {
    json!({
        "description": model.describe(),
        "family": model.family(),
        "length_scale": model.length_scale(),
        "dim": model.dim(),
        "drift": model.drift(),
        "beta_l": model.beta_l(),
        "beta_n": model.beta_n(),
    })
}

fn validate_model(config: &ExperimentConfig, model: CorrelationModel, out: &mut OutputDir) -> Result<(), CliError> {
    let v = &config.validate;
    let (d, ell) = (model.dim(), model.length_scale());
    let mut rng = replica_stream(config.seed, 0);
    let coords: Vec<f64> = (0..v.points * d).map(|_| v.extent * ell * (2.0 * rng.random::<f64>() - 1.0)).collect();
    let report = model.validate_psd(&Points::from_flat(d, coords)?, v.tolerance)?;
    let spectrum = model_spectrum(&model)?;
    out.csv(
        "profile.csv",
        &["r", "b_l", "b_n"],
        (0..=40).map(|k| {
            let r = 0.1 * k as f64 * ell;
            [num(r), num(model.bl(r)), num(model.bn(r))]
        }),
    )?;
    out.json(
        "summary.json",
        &json!({
            "command": "validate-model",
            "model": model_json(&model),
            "psd": report,
            "pairwise_bound": model.sup_ratio_constants()?,
            "closed_form_spectrum": spectrum.exponents,
            "D_closed": spectrum.dimension()?,
        }),
    )?;
    if !report.psd {
        return Err(CliError::ModelValidation(format!("minimum eigenvalue {:e}", report.min_eigenvalue)));
    }
    Ok(())
}

fn spectrum(config: &ExperimentConfig, model: CorrelationModel, out: &mut OutputDir) -> Result<(), CliError> {
    let closed = model_spectrum(&model)?;
    let d = model.dim();
    let cfg = config.sim_config(model.clone());
    let options = QrOptions {
        reortho_stride: config.numerics.stride,
        batches: config.spectrum.batches,
        random_frame: config.spectrum.random_frame,
    };
    let (estimate, runs) = estimate_spectrum_qr(&cfg, config.numerics.replicas, &options)?;
    let mut header = vec!["replica".to_string(), "batch".to_string()];
    header.extend((1..=d).map(|i| format!("lambda_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.csv(
        "batches.csv",
        &header,
        runs.iter().flat_map(|run| {
            run.batch_means.iter().enumerate().map(move |(b, means)| {
                let mut row = vec![run.replica.to_string(), b.to_string()];
                row.extend(means.iter().map(|v| num(*v)));
                row
            })
        }),
    )?;
    out.json(
        "summary.json",
        &json!({
            "command": "spectrum",
            "model": model_json(&model),
            "fingerprint": cfg.fingerprint(),
            "replicas": runs.len(),
            "spectrum": summarize(&closed, &estimate)?,
        }),
    )?;
    Ok(())
}

fn radial(config: &ExperimentConfig, model: CorrelationModel, out: &mut OutputDir) -> Result<(), CliError> {
    let rs = &config.radial;
    let ell = model.length_scale();
    let dt = config.sim_config(model.clone()).dt;
    let law = RadialLaw::new(model.clone())?;
    let grid: Vec<f64> = rs.grid.iter().map(|r| r * ell).collect();
    let rows = law.table(&grid)?;
    out.csv(
        "table.csv",
        &["r", "s", "m", "m_p"],
        rows.iter().map(|row| [num(row.r), num(row.s), num(row.m), opt(row.m_p)]),
    )?;
    let mut residual = 0.0f64;
    for &r in &grid {
        let (res, scale) = law.generator_residual(r)?;
        residual = residual.max(res.abs() / scale);
    }
    let verdict = law.verdict()?;
    let r0 = rs.r0 * ell;
    let stats: Vec<ouflow::radial::PathStats> = (0..rs.paths as u64)
        .into_par_iter()
        .map(|p| {
            law.simulate_with(r0, dt, rs.path_horizon, Scheme::EulerMaruyama, &mut replica_stream(config.seed, p), |_, _| {})
        })
        .collect::<ouflow::Result<_>>()?;
    out.csv(
        "paths.csv",
        &["path", "min", "max", "terminal", "reflections"],
        stats.iter().enumerate().map(|(p, s)| {
            [p.to_string(), num(s.min), num(s.max), num(s.terminal), s.reflections.to_string()]
        }),
    )?;
    let n = stats.len().max(1) as f64;
    let collapsed = stats.iter().filter(|s| s.terminal < 1e-3 * r0).count() as f64 / n;
    let crossed = stats.iter().filter(|s| s.min < r0 / 10.0 && s.max > 10.0 * r0).count() as f64 / n;
    out.json(
        "summary.json",
        &json!({
            "command": "radial",
            "model": model_json(&model),
            "verdict": verdict,
            "recurrent": verdict.classification == Classification::Recurrent,
            "max_relative_generator_residual": residual,
            "paths": {
                "count": stats.len(),
                "r0": r0,
                "horizon": rs.path_horizon,
                "dt": dt,
                "fraction_below_1e-3_r0": collapsed,
                "fraction_crossing_r0_over_10_and_10_r0": crossed,
            },
        }),
    )?;
    Ok(())
}

fn pullback_dim(config: &ExperimentConfig, model: CorrelationModel, out: &mut OutputDir) -> Result<(), CliError> {
    let ps = &config.pullback;
    let cfg = config.sim_config(model.clone());
    let policy = RangePolicy { lo_quantile: ps.lo_quantile, hi_quantile: ps.hi_quantile, ..RangePolicy::default() };
    let report = equilibrium_report(&cfg, &ps.horizons, config.numerics.n, &policy, ps.pointwise_centers)?;
    out.csv(
        "curve.csv",
        &["horizon", "log_r", "log_c"],
        report.entries.iter().flat_map(|e| {
            let curve = e.fit.as_ref().map(|f| f.curve.clone()).unwrap_or_default();
            curve.into_iter().map(move |(x, y)| [num(e.horizon), num(x), num(y)])
        }),
    )?;
    out.csv(
        "estimates.csv",
        &["horizon", "correlation_dimension", "ci_halfwidth", "pointwise_dimension", "pointwise_ci_halfwidth", "pair_distance_p95"],
        report.entries.iter().map(|e| {
            [
                num(e.horizon),
                opt(e.fit.as_ref().map(|f| f.estimate)),
                opt(e.fit.as_ref().map(|f| f.ci_halfwidth)),
                opt(e.pointwise.as_ref().map(|f| f.estimate)),
                opt(e.pointwise.as_ref().map(|f| f.ci_halfwidth)),
                num(e.pair_distance_p95),
            ]
        }),
    )?;
    out.json(
        "summary.json",
        &json!({
            "command": "pullback-dim",
            "model": model_json(&model),
            "fingerprint": cfg.fingerprint(),
            "n": config.numerics.n,
            "policy": policy,
            "report": report,
        }),
    )?;
    Ok(())
}

fn attractor(config: &ExperimentConfig, model: CorrelationModel, out: &mut OutputDir) -> Result<(), CliError> {
    let a = &config.attractor;
    let ell = model.length_scale();
    let replicas = config.numerics.replicas;
    let cfg: SimConfig = config.sim_config(model.clone());
    let radii: Vec<f64> = a.radii.iter().map(|r| r * ell).collect();
    let criterion = attractor_criterion(&cfg, &radii, &a.times, replicas)?;
    out.csv(
        "sup.csv",
        &["radius", "t", "mean_sup", "se", "refined_mean_sup", "refined_se", "resolution_stable"],
        criterion.curves.iter().flatten().map(|e| {
            [
                num(e.radius),
                num(e.t),
                num(e.mean_sup),
                num(e.se),
                num(e.refined_mean_sup),
                num(e.refined_se),
                e.resolution_stable.to_string(),
            ]
        }),
    )?;
    let reg_radii: Vec<f64> = a.regularity_radii.iter().map(|r| r * ell).collect();
    let density = a.shell_density;
    let regularity = spatial_regularity_ratio(
        &cfg,
        &reg_radii,
        a.regularity_time,
        |r| ((density * r / ell).ceil() as usize).max(8),
        replicas,
    )?;
    out.csv(
        "regularity.csv",
        &["radius", "shell_points", "ratio", "ratio_se", "norm_ratio", "norm_ratio_se", "deterministic_factor"],
        regularity.iter().map(|p| {
            [
                num(p.radius),
                p.shell_points.to_string(),
                num(p.ratio),
                num(p.ratio_se),
                num(p.norm_ratio),
                num(p.norm_ratio_se),
                num(p.deterministic_factor),
            ]
        }),
    )?;
    let contraction = contraction_factor(&cfg, a.t0, &radii, a.iterations, replicas)?;
    out.csv(
        "contraction.csv",
        &["radius", "delta_hat", "se"],
        contraction.points.iter().map(|p| [num(p.radius), num(p.delta_hat), num(p.se)]),
    )?;
    out.json(
        "summary.json",
        &json!({
            "command": "attractor",
            "model": model_json(&model),
            "fingerprint": cfg.fingerprint(),
            "replicas": replicas,
            "bound_m": criterion.bound_m,
            "common_limit": criterion.common_limit,
            "resolution_stable": criterion.resolution_stable,
            "regularity": regularity,
            "contraction": contraction,
        }),
    )?;
    Ok(())
}

fn squeeze(config: &ExperimentConfig, model: CorrelationModel, out: &mut OutputDir) -> Result<(), CliError> {
    let s = &config.squeeze;
    let ell = model.length_scale();
    let cfg = config.sim_config(model.clone());
    let eps: Vec<f64> = s.epsilons.iter().map(|e| e * ell).collect();
    let rows = squeezing_frequency(&cfg, s.r * ell, &eps, &s.times, s.shell_points, config.numerics.replicas)?;
    out.csv(
        "squeeze.csv",
        &["t", "epsilon", "frequency", "se", "refined_frequency", "resolution_stable"],
        rows.iter().map(|r| {
            [num(r.t), num(r.epsilon), num(r.frequency), num(r.se), num(r.refined_frequency), r.resolution_stable.to_string()]
        }),
    )?;
    out.json(
        "summary.json",
        &json!({
            "command": "squeeze",
            "model": model_json(&model),
            "fingerprint": cfg.fingerprint(),
            "replicas": config.numerics.replicas,
            "rows": rows,
        }),
    )?;
    Ok(())
}
