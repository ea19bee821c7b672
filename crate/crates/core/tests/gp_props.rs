mod common;

use std::sync::Arc;

use common::{normal, random_gmm, random_vec};
use gmrgp::{
    fit_gmm, generate_synthetic, DemonstrationSet, EmConfig, GaussianComponent, GmmModel, GmrGpModel, GmrKernel,
    GmrMean, GpModel, LmcKernel, Matern52Params, MultiOutputKernel, NoiseModel, ObservationSet, OptConfig, SynthKind,
    SynthParams, ViaPoint, ZeroMean,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn x1(t: f64) -> DVector<f64> {
    DVector::from_element(1, t)
}

fn random_gmr_gp(rng: &mut ChaCha8Rng, c: usize, d: usize) -> GpModel<GmrMean, GmrKernel> {
    let gmm = Arc::new(random_gmm(rng, c, 1, d));
    let ls = (0..c).map(|_| rng.random_range(0.3..2.0)).collect();
    GpModel::new(GmrMean(gmm.clone()), GmrKernel::new(gmm, ls).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conditioning_never_adds_uncertainty(seed in any::<u64>(), v in 1usize..8, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gp = random_gmr_gp(&mut rng, 3, d);
        let xs: Vec<_> = (0..v).map(|_| random_vec(&mut rng, 1, 2.0)).collect();
        let ys: Vec<_> = (0..v).map(|_| random_vec(&mut rng, d, 1.0)).collect();
        let post = gp.condition(ObservationSet::with_shared_noise(xs, ys, 1e-3).unwrap()).unwrap();
        for _ in 0..10 {
            let x = random_vec(&mut rng, 1, 3.0);
            let prior = gp.kernel().eval(&x, &x).unwrap();
            let p = post.predict(&x).unwrap();
            let gap = prior + DMatrix::identity(d, d) * 1e-8 - p.covariance;
            prop_assert!(gap.symmetric_eigen().eigenvalues.min() >= 0.0);
        }
    }
}

#[test]
fn observations_on_the_prior_mean_leave_it_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let gp = random_gmr_gp(&mut rng, 4, 2);
    let xs: Vec<_> = [-1.0, 0.0, 0.8, 1.9].into_iter().map(x1).collect();
    let ys = xs.iter().map(|x| gp.predict(x).unwrap().mean).collect();
    let post = gp.condition(ObservationSet::with_shared_noise(xs, ys, 0.0).unwrap()).unwrap();
    for i in 0..50 {
        let x = x1(-3.0 + 6.0 * i as f64 / 49.0);
        let a = post.predict(&x).unwrap().mean;
        let b = gp.predict(&x).unwrap().mean;
        assert!((a - b).amax() <= 1e-8);
    }
}

#[test]
fn far_queries_see_only_the_prior() {
    let k = LmcKernel::isotropic(1, 2, Matern52Params::new(1.0, 0.5).unwrap());
    let gp = GpModel::new(ZeroMean { input_dim: 1, output_dim: 2 }, k.clone()).unwrap();
    let obs = ObservationSet::with_shared_noise(vec![x1(0.0), x1(0.3)], vec![DVector::from_vec(vec![1.0, -1.0]); 2], 1e-6)
        .unwrap();
    let post = gp.condition(obs).unwrap();
    let far = x1(60.0);
    assert!(k.eval(&far, &x1(0.3)).unwrap().amax() < 1e-12);
    let p = post.predict(&far).unwrap();
    assert!(p.mean.amax() <= 1e-9);
    assert!((p.covariance - k.eval(&far, &far).unwrap()).amax() <= 1e-9);
}

#[test]
fn near_noise_free_observation_is_interpolated() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gp = random_gmr_gp(&mut rng, 3, 2);
    let y = DVector::from_vec(vec![0.4, -0.9]);
    let post = gp.condition(ObservationSet::with_shared_noise(vec![x1(0.5)], vec![y.clone()], 1e-8).unwrap()).unwrap();
    let p = post.predict(&x1(0.5)).unwrap();
    assert!((p.mean - y).amax() <= 1e-3);
    assert!(p.covariance.diagonal().iter().all(|v| *v <= 2e-8));
}

#[test]
fn prior_sample_mean_concentrates() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let gp = random_gmr_gp(&mut rng, 3, 2);
    let xs: Vec<_> = [-1.0, -0.2, 0.4, 1.1, 2.0].into_iter().map(x1).collect();
    let n = 10_000;
    let draws = gp.sample(&xs, n, 13).unwrap();
    for (i, x) in xs.iter().enumerate() {
        let p = gp.predict(x).unwrap();
        let mean = draws.iter().fold(DVector::zeros(2), |a, s| a + &s[i]) / n as f64;
        for j in 0..2 {
            let bound = 4.0 * (p.covariance[(j, j)] / n as f64).sqrt();
            assert!((mean[j] - p.mean[j]).abs() <= bound, "query {i}, output {j}");
        }
    }
}

#[test]
fn posterior_samples_pin_the_via_point() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let gp = random_gmr_gp(&mut rng, 3, 2);
    let y = DVector::from_vec(vec![1.0, 1.0]);
    let post = gp.condition(ObservationSet::with_shared_noise(vec![x1(0.2)], vec![y], 1e-4).unwrap()).unwrap();
    let n = 2000;
    let draws = post.sample(&[x1(0.2)], n, 1).unwrap();
    for j in 0..2 {
        let m = draws.iter().map(|s| s[0][j]).sum::<f64>() / n as f64;
        let sd = (draws.iter().map(|s| (s[0][j] - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!(sd <= 2e-2, "output {j}: sd {sd}");
    }
    assert_eq!(post.sample(&[x1(0.2), x1(1.0)], 3, 5).unwrap(), post.sample(&[x1(0.2), x1(1.0)], 3, 5).unwrap());
}

/// A one-component model with a flat mean, so the GP draw is the only signal.
fn flat_gmm(range: f64) -> GmmModel {
    let cov = DMatrix::from_row_slice(2, 2, &[range * range, 0.0, 0.0, 1.0]);
    GmmModel::new(vec![GaussianComponent::new(1.0, DVector::from_vec(vec![range / 2.0, 0.0]), cov).unwrap()], 1, 1)
        .unwrap()
}

#[test]
fn optimizer_recovers_a_known_lengthscale() {
    let gmm = flat_gmm(10.0);
    let truth = GmrGpModel::new(gmm.clone(), vec![1.0], NoiseModel::Shared { variance: 0.0 }).unwrap();
    let xs: Vec<_> = (0..200).map(|i| x1(10.0 * i as f64 / 199.0)).collect();
    let draw = truth.sample_trajectories(&xs, 1, 3).unwrap().remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let ys = draw.into_iter().map(|y| y.add_scalar(0.01 * normal(&mut rng))).collect();
    let demos = DemonstrationSet::single(xs, ys).unwrap();
    let config = OptConfig {
        max_points: 200,
        ..OptConfig::default()
    };
    let (model, report) = GmrGpModel::build(gmm, &demos, &config).unwrap();
    let l = model.lengthscales()[0];
    assert!((0.5..=2.0).contains(&l), "recovered lengthscale {l}");
    let opt = &report.optimization;
    assert!(opt.start_values.iter().all(|s| opt.value >= *s));
}

#[test]
fn letter_build_stays_in_bounds() {
    let demos = generate_synthetic(SynthKind::Letter, &SynthParams::default(), None, 7).unwrap();
    let gmm = fit_gmm(&demos, 6, &EmConfig::default()).unwrap().model;
    let config = OptConfig {
        starts: 4,
        max_evals: 120,
        max_points: 120,
        ..OptConfig::default()
    };
    let (model, report) = GmrGpModel::build(gmm, &demos, &config).unwrap();
    let used = demos.strided(report.stride);
    let ts = used.inputs().iter().map(|x| x[0]);
    let range = ts.clone().fold(f64::MIN, f64::max) - ts.fold(f64::MAX, f64::min);
    for l in model.lengthscales() {
        assert!(*l >= 1e-2 * range && *l <= 1e2 * range, "lengthscale {l}");
    }
    match model.noise() {
        NoiseModel::Shared { variance } => assert!(*variance > 0.0 && *variance <= 1.0),
        other => panic!("unexpected noise model {other:?}"),
    }
    assert!(report.likelihood_points <= 120);

    // Demonstrations are dropped: only via-points are ever conditioned on.
    assert!(model.engine().observations().is_empty());
    let adapted = model.adapt(vec![ViaPoint::new(vec![1.0], vec![3.0, 3.0])]).unwrap();
    assert_eq!(adapted.engine().observations().len(), 1);
}
