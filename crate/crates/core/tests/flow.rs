use approx::assert_relative_eq;
use ouflow::correlation::CorrelationModel;
use ouflow::flow::{pullback_cloud, pullback_snapshots, simulate, FlowIntegrator};
use ouflow::points::distance;
use ouflow::sampler::SamplerKind;
use ouflow::spectrum::model_spectrum;
use ouflow::stats::mean_se;
use ouflow::{FlowState, Points, Scheme, SimConfig};
use rayon::prelude::*;

fn expanding() -> CorrelationModel {
    CorrelationModel::gaussian_solenoidal(1.0, 2, 0.5).unwrap()
}

fn contracting() -> CorrelationModel {
    CorrelationModel::gaussian_potential(1.0, 2, 0.5).unwrap()
}

#[test]
fn zero_noise_positions_decay_exponentially() {
    let cfg = SimConfig::new(expanding())
        .with_noise_scale(0.0)
        .with_scheme(Scheme::ExponentialEuler)
        .with_jacobians(true)
        .with_horizon(3.0);
    let initial = Points::from_rows(2, &[vec![1.0, -2.0], vec![0.5, 0.25]]).unwrap();
    let traj = simulate(&cfg, &initial).unwrap();
    let last = traj.frames.last().unwrap();
    assert_relative_eq!(last.t, 3.0, epsilon = 1e-12);
    let factor = (-0.5f64 * 3.0).exp();
    for p in 0..2 {
        for k in 0..2 {
            assert_relative_eq!(last.positions.point(p)[k], initial.point(p)[k] * factor, max_relative = 1e-12);
        }
        let j = last.jacobian(p).unwrap();
        assert_relative_eq!(j[0], factor, max_relative = 1e-12);
        assert_relative_eq!(j[3], factor, max_relative = 1e-12);
        assert_eq!(j[1], 0.0);
        assert_eq!(j[2], 0.0);
    }
}

#[test]
fn zero_horizon_echoes_initial_state() {
    let initial = Points::from_rows(2, &[vec![1.0, 2.0]]).unwrap();
    let traj = simulate(&SimConfig::new(expanding()).with_horizon(0.0), &initial).unwrap();
    assert_eq!(traj.frames.len(), 1);
    assert_eq!(traj.frames[0].positions, initial);
    assert_eq!(traj.frames[0].t, 0.0);
}

#[test]
fn trajectories_are_reproducible_and_fingerprinted() {
    let cfg = SimConfig::new(expanding()).with_horizon(0.5).with_seed(3, 2).with_stride(10);
    let initial = Points::from_rows(2, &[vec![0.0, 0.0], vec![0.3, 0.1]]).unwrap();
    let a = simulate(&cfg, &initial).unwrap();
    let b = simulate(&cfg, &initial).unwrap();
    assert_eq!(a.frames, b.frames);
    assert_eq!(a.fingerprint, cfg.fingerprint());
    let other = simulate(&cfg.clone().with_seed(3, 3), &initial).unwrap();
    assert_ne!(a.frames.last(), other.frames.last());
}

#[test]
fn permuted_initial_points_give_permuted_trajectory() {
    let cfg = SimConfig::new(expanding()).with_horizon(0.5).with_seed(8, 0).with_jacobians(true);
    let initial = Points::from_rows(2, &[vec![0.0, 0.0], vec![0.3, 0.1], vec![-0.5, 0.7]]).unwrap();
    let perm = [2, 0, 1];
    let a = simulate(&cfg, &initial).unwrap();
    let b = simulate(&cfg, &initial.select(&perm)).unwrap();
    let (sa, sb) = (a.frames.last().unwrap(), b.frames.last().unwrap());
    for (k, &p) in perm.iter().enumerate() {
        assert_eq!(sb.positions.point(k), sa.positions.point(p));
        assert_eq!(sb.jacobian(k), sa.jacobian(p));
    }
}

#[test]
fn one_point_marginal_is_ornstein_uhlenbeck() {
    let c = 0.5;
    let t = 1.0;
    let x0 = [1.0, -0.5];
    let cfg = SimConfig::new(contracting()).with_horizon(t);
    let initial = Points::from_rows(2, &[x0.to_vec()]).unwrap();
    let finals: Vec<[f64; 2]> = (0..10_000u64)
        .into_par_iter()
        .map(|r| {
            let traj = simulate(&cfg.clone().with_seed(17, r), &initial).unwrap();
            let p = traj.frames.last().unwrap().positions.point(0);
            [p[0], p[1]]
        })
        .collect();
    let mean_target: Vec<f64> = x0.iter().map(|x| x * (-c * t).exp()).collect();
    let var_target = (1.0 - (-2.0 * c * t).exp()) / (2.0 * c);
    for k in 0..2 {
        let xs: Vec<f64> = finals.iter().map(|p| p[k]).collect();
        let m = mean_se(&xs);
        assert!((m.mean - mean_target[k]).abs() < 4.0 * m.se, "mean {k}: {m:?} vs {}", mean_target[k]);
        let sq: Vec<f64> = xs.iter().map(|x| (x - mean_target[k]).powi(2)).collect();
        let v = mean_se(&sq);
        assert!((v.mean - var_target).abs() < 4.0 * v.se, "var {k}: {v:?} vs {var_target}");
    }
    let cross: Vec<f64> = finals.iter().map(|p| (p[0] - mean_target[0]) * (p[1] - mean_target[1])).collect();
    let cv = mean_se(&cross);
    assert!(cv.mean.abs() < 4.0 * cv.se, "{cv:?}");
}

#[test]
fn contracting_pairs_come_together() {
    let cfg = SimConfig::new(contracting()).with_horizon(50.0);
    let initial = Points::from_rows(2, &[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
    let closer = (0..200u64)
        .into_par_iter()
        .filter(|&r| {
            let traj = simulate(&cfg.clone().with_seed(23, r).with_stride(1000), &initial).unwrap();
            let last = &traj.frames.last().unwrap().positions;
            distance(last.point(0), last.point(1)) < 1.0
        })
        .count();
    assert!(closer >= 180, "{closer} of 200");
}

#[test]
fn resolvable_pairs_never_coincide() {
    // A contracting pair shrinks like exp(lambda_1 t); keep it above double resolution.
    let initial = Points::from_rows(2, &[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
    for (model, horizon) in [(expanding(), 50.0), (contracting(), 10.0)] {
        (0..20u64).into_par_iter().for_each(|r| {
            let cfg = SimConfig::new(model.clone()).with_horizon(horizon).with_seed(24, r);
            for f in simulate(&cfg, &initial).unwrap().frames {
                assert!(distance(f.positions.point(0), f.positions.point(1)) > 0.0, "t = {}", f.t);
            }
        });
    }
}

/// Growth rate of a renormalized infinitesimal pair, averaged over replicas.
fn pair_growth_rate(model: CorrelationModel, horizon: f64, replicas: u64) -> (f64, f64) {
    let delta = 1e-3 * model.length_scale();
    let cfg = SimConfig::new(model).with_scheme(Scheme::ExponentialEuler);
    let (steps, _) = cfg.clone().with_horizon(horizon).steps();
    let rates: Vec<f64> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut flow = FlowIntegrator::new(cfg.clone().with_seed(29, r)).unwrap();
            let mut state = FlowState::new(Points::from_rows(2, &[vec![0.2, 0.1], vec![0.2 + delta, 0.1]]).unwrap(), false);
            let mut log_growth = 0.0;
            for k in 1..=steps {
                flow.step(&mut state).unwrap();
                if k % 10 == 0 || k == steps {
                    let (x, y) = (state.positions.point(0).to_vec(), state.positions.point(1).to_vec());
                    let dist = distance(&x, &y);
                    assert!(dist > 0.0);
                    log_growth += (dist / delta).ln();
                    let y_new: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + delta * (b - a) / dist).collect();
                    state.positions.point_mut(1).copy_from_slice(&y_new);
                }
            }
            log_growth / state.t
        })
        .collect();
    let m = mean_se(&rates);
    (m.mean, m.se)
}

#[test]
fn localized_pair_growth_matches_top_exponent() {
    for model in [expanding(), contracting()] {
        let lambda1 = model_spectrum(&model).unwrap().top();
        let (rate, se) = pair_growth_rate(model, 100.0, 16);
        assert!((rate - lambda1).abs() <= 0.1 * lambda1.abs(), "{rate} ± {se} vs {lambda1}");
    }
}

#[test]
fn scheme_gap_is_first_order_in_dt() {
    let model = contracting();
    let initial = Points::from_rows(2, &[vec![2.0, 0.0]]).unwrap();
    let gap = |dt: f64| {
        let mean_at = |scheme: Scheme| {
            let xs: Vec<f64> = (0..2000u64)
                .into_par_iter()
                .map(|r| {
                    let cfg = SimConfig::new(model.clone()).with_dt(dt).with_horizon(1.0).with_scheme(scheme).with_seed(31, r);
                    simulate(&cfg, &initial).unwrap().frames.last().unwrap().positions.point(0)[0]
                })
                .collect();
            xs.iter().sum::<f64>() / xs.len() as f64
        };
        mean_at(Scheme::EulerMaruyama) - mean_at(Scheme::ExponentialEuler)
    };
    let dt = ouflow::flow::stable_dt(&model);
    let (coarse, fine) = (gap(dt), gap(dt / 2.0));
    let ratio = coarse / fine;
    assert!((1.7..2.3).contains(&ratio), "{coarse} / {fine} = {ratio}");
}

#[test]
fn zero_horizon_pullback_is_invariant_sample() {
    let cfg = SimConfig::new(expanding()).with_seed(41, 0);
    let cloud = pullback_cloud(&cfg, 10_000, 0.0).unwrap();
    assert_eq!(cloud.len(), 10_000);
    assert_relative_eq!(cloud.weight() * cloud.len() as f64, 1.0, epsilon = 1e-12);
    let var = 1.0 / (2.0 * 0.5);
    for k in 0..2 {
        let sq: Vec<f64> = cloud.points.iter().map(|p| p[k] * p[k]).collect();
        let m = mean_se(&sq);
        assert!((m.mean - var).abs() < 4.0 * m.se, "{m:?}");
    }
    let cross: Vec<f64> = cloud.points.iter().map(|p| p[0] * p[1]).collect();
    let m = mean_se(&cross);
    assert!(m.mean.abs() < 4.0 * m.se);
}

#[test]
fn contracting_pullback_cloud_collapses() {
    let cfg = SimConfig::new(contracting())
        .with_sampler(SamplerKind::Spectral { modes: 32 })
        .with_scheme(Scheme::ExponentialEuler)
        .with_seed(43, 0);
    let clouds = pullback_snapshots(&cfg, 1000, &[0.0, 100.0]).unwrap();
    let p0 = clouds[0].pair_distance_quantile(0.95, 1000);
    let p1 = clouds[1].pair_distance_quantile(0.95, 1000);
    assert!(p1 < 0.01 * p0, "{p1} vs {p0}");
}

#[test]
fn strong_drift_concentrates_at_the_origin() {
    let c = 5.0;
    let model = CorrelationModel::gaussian_potential(1.0, 2, c).unwrap();
    let per_replica: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|r| {
            let cloud = pullback_cloud(&SimConfig::new(model.clone()).with_seed(47, r), 10, 2.0).unwrap();
            cloud.points.iter().map(|p| (p[0] * p[0] + p[1] * p[1]) / 2.0).sum::<f64>() / 10.0
        })
        .collect();
    let m = mean_se(&per_replica);
    assert!((m.mean - 1.0 / (2.0 * c)).abs() < 4.0 * m.se, "{m:?}");
}

#[test]
fn oversized_clouds_are_refused() {
    let cfg = SimConfig::new(expanding());
    assert!(pullback_cloud(&cfg, 40_000_000, 1.0).is_err());
}
