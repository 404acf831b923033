use ouflow::correlation::CorrelationModel;
use ouflow::dimension::{correlation_dimension, equilibrium_report, pointwise_dimension, EmpiricalMeasure, RangePolicy};
use ouflow::rng::replica_stream;
use ouflow::sampler::SamplerKind;
use ouflow::{Error, Points, Scheme, SimConfig};
use proptest::prelude::*;
use rand::Rng;

fn cloud(n: usize, seed: u64, f: impl Fn(&mut dyn FnMut() -> f64) -> Vec<f64>) -> EmpiricalMeasure {
    let mut rng = replica_stream(seed, 0);
    let mut u = || rng.random::<f64>();
    let coords: Vec<f64> = (0..n).flat_map(|_| f(&mut u)).collect();
    let dim = coords.len() / n;
    EmpiricalMeasure::from_points(Points::from_flat(dim, coords).unwrap())
}

fn segment(n: usize, seed: u64) -> EmpiricalMeasure {
    cloud(n, seed, |u| {
        let s = u();
        vec![0.3 + 2.0 * s, -1.0 + 1.5 * s]
    })
}

fn disk(n: usize, seed: u64) -> EmpiricalMeasure {
    cloud(n, seed, |u| {
        let (r, a) = (u().sqrt(), std::f64::consts::TAU * u());
        vec![r * a.cos(), r * a.sin()]
    })
}

#[test]
fn segment_has_dimension_one() {
    let fit = correlation_dimension(&segment(10_000, 1), &RangePolicy::default()).unwrap();
    assert!((0.95..=1.05).contains(&fit.estimate), "{fit:?}");
    assert!(fit.accepted);
    let pw = pointwise_dimension(&segment(10_000, 1), 2000).unwrap();
    assert!((0.95..=1.05).contains(&pw.estimate), "{pw:?}");
}

#[test]
fn disk_has_dimension_two() {
    let fit = correlation_dimension(&disk(10_000, 2), &RangePolicy::default()).unwrap();
    assert!((1.9..=2.05).contains(&fit.estimate), "{fit:?}");
    assert!(fit.accepted);
    assert!(fit.ci_halfwidth > 0.0 && fit.ci_halfwidth < 0.1);
    let pw = pointwise_dimension(&disk(10_000, 2), 2000).unwrap();
    assert!((1.9..=2.05).contains(&pw.estimate), "{pw:?}");
}

#[test]
fn identical_points_are_degenerate() {
    let c = EmpiricalMeasure::from_points(Points::from_flat(3, [0.5, -1.0, 2.0].repeat(1500)).unwrap());
    let fit = correlation_dimension(&c, &RangePolicy::default()).unwrap();
    assert!(fit.degenerate);
    assert_eq!(fit.estimate, 0.0);
    assert_eq!(pointwise_dimension(&c, 500).unwrap().estimate, 0.0);
}

#[test]
fn affine_images_keep_the_estimate() {
    let base = disk(5000, 3);
    let moved = EmpiricalMeasure::from_points(base.points.map_affine(2.0, &[5.0, -3.0]));
    let policy = RangePolicy::default();
    let (a, b) = (correlation_dimension(&base, &policy).unwrap(), correlation_dimension(&moved, &policy).unwrap());
    assert!((a.estimate - b.estimate).abs() < a.ci_halfwidth, "{} vs {}", a.estimate, b.estimate);
}

#[test]
fn bad_clouds_are_rejected() {
    let small = EmpiricalMeasure::from_points(Points::zeros(2, 999));
    assert!(matches!(correlation_dimension(&small, &RangePolicy::default()), Err(Error::InsufficientData(_))));
    assert!(matches!(pointwise_dimension(&small, 100), Err(Error::InsufficientData(_))));
    let mut coords = vec![0.0; 2 * 1200];
    coords[7] = f64::NAN;
    let nan = EmpiricalMeasure::from_points(Points::from_flat(2, coords).unwrap());
    assert!(correlation_dimension(&nan, &RangePolicy::default()).is_err());
    let policy = RangePolicy { lo_quantile: 0.2, hi_quantile: 0.1, ..RangePolicy::default() };
    assert!(matches!(correlation_dimension(&disk(1000, 4), &policy), Err(Error::InvalidConfig(_))));
}

#[test]
fn contracting_equilibrium_is_a_point() {
    let model = CorrelationModel::gaussian_potential(1.0, 2, 0.5).unwrap();
    let cfg = SimConfig::new(model)
        .with_sampler(SamplerKind::Spectral { modes: 32 })
        .with_scheme(Scheme::ExponentialEuler)
        .with_seed(12, 0);
    let report = equilibrium_report(&cfg, &[0.0, 5.0, 20.0], 1000, &RangePolicy::default(), 2000).unwrap();
    assert!(report.lambda1 < 0.0);
    assert_eq!(report.prediction, 0.0);
    assert_eq!(report.diameter_decreasing, Some(true));
    assert!(report.entries.iter().all(|e| e.fit.is_none()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn estimate_does_not_exceed_ambient_dimension(seed in any::<u64>(), stretch in 0.01..1.0f64, d in 2usize..4) {
        let c = cloud(1500, seed, |u| (0..d).map(|k| if k == 0 { u() } else { stretch * u() }).collect());
        let fit = correlation_dimension(&c, &RangePolicy::default()).unwrap();
        prop_assert!(fit.estimate <= d as f64 + fit.ci_halfwidth, "{fit:?}");
    }
}
