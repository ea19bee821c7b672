mod common;

use common::{normal, random_gmm, random_spd, random_vec};
use gmrgp::gmm::fit_gmm_observed;
use gmrgp::{
    fit_gmm, generate_synthetic, DemonstrationSet, EmConfig, GaussianComponent, GmmModel, SynthKind, SynthParams,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Weighted Gaussian densities summed in linear space.
fn naive_mixture_pdf(model: &GmmModel, p: &DVector<f64>) -> f64 {
    model
        .components()
        .iter()
        .map(|c| {
            let d = p.len() as f64;
            let diff = p - c.mean();
            let inv = c.covariance().clone().try_inverse().unwrap();
            let m = (diff.transpose() * inv * &diff)[0];
            c.weight() * (-0.5 * m).exp() / ((2.0 * std::f64::consts::PI).powf(d / 2.0) * c.covariance().determinant().sqrt())
        })
        .sum()
}

fn split(points: &[DVector<f64>], din: usize) -> DemonstrationSet {
    let d = points[0].len() - din;
    DemonstrationSet::single(
        points.iter().map(|p| p.rows(0, din).into_owned()).collect(),
        points.iter().map(|p| p.rows(din, d).into_owned()).collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn responsibilities_are_normalized(seed in any::<u64>(), c in 1usize..7, din in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_gmm(&mut rng, c, din, 2);
        for _ in 0..16 {
            let x = random_vec(&mut rng, din, 4.0);
            let h = model.responsibilities(&x).unwrap().values;
            prop_assert_eq!(h.len(), c);
            prop_assert!((h.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(h.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn log_pdf_matches_naive_summation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_gmm(&mut rng, 3, 1, 2);
        let p = random_vec(&mut rng, 3, 2.0);
        let naive = naive_mixture_pdf(&model, &p);
        prop_assume!(naive > 1e-250);
        let lp = model.joint_log_pdf(&p).unwrap();
        prop_assert!((lp - naive.ln()).abs() <= 1e-10, "{} vs {}", lp, naive.ln());
    }

    #[test]
    fn model_json_round_trip_is_bit_identical(seed in any::<u64>(), c in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_gmm(&mut rng, c, 1, 2);
        let back: GmmModel = serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
        for (a, b) in model.components().iter().zip(back.components()) {
            prop_assert_eq!(a.weight().to_bits(), b.weight().to_bits());
            prop_assert_eq!(a.mean(), b.mean());
            prop_assert_eq!(a.covariance(), b.covariance());
        }
    }

    #[test]
    fn em_keeps_covariances_valid(seed in any::<u64>(), c in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = random_gmm(&mut rng, c, 1, 2);
        let data = split(&truth.sample_joint(60 * c, seed), 1);
        let config = EmConfig { seed, ..EmConfig::default() };
        let mut failures = Vec::new();
        fit_gmm_observed(&data, c, &config, |iter, model| {
            for (l, comp) in model.components().iter().enumerate() {
                let s = comp.covariance();
                let asym = (s - s.transpose()).amax();
                let dim = s.nrows() as f64;
                let floor = config.reg * s.trace() / (dim * (1.0 + config.reg));
                let min_eig = s.clone().symmetric_eigen().eigenvalues.min();
                if asym > 1e-12 || min_eig < floor * (1.0 - 1e-9) {
                    failures.push((iter, l, asym, min_eig, floor));
                }
            }
        })
        .unwrap();
        prop_assert!(failures.is_empty(), "{:?}", failures);
    }
}

#[test]
fn single_component_recovers_the_sample_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cov = random_spd(&mut rng, 3, 0.8, 0.2);
    let truth = GmmModel::new(vec![GaussianComponent::new(1.0, DVector::from_vec(vec![1.0, -2.0, 0.5]), cov).unwrap()], 1, 2)
        .unwrap();
    let pts = truth.sample_joint(5000, 3);
    let n = pts.len() as f64;
    let mean = pts.iter().fold(DVector::zeros(3), |a, p| a + p) / n;
    let fit = fit_gmm(&split(&pts, 1), 1, &EmConfig::default()).unwrap();
    let got = fit.model.components()[0].mean();
    for i in 0..3 {
        let var = pts.iter().map(|p| (p[i] - mean[i]).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((got[i] - mean[i]).abs() <= 3.0 * (var / n).sqrt(), "coordinate {i}");
    }
}

#[test]
fn separated_mixture_weights_are_recovered() {
    let comp = |w: f64, m: [f64; 2]| {
        GaussianComponent::new(w, DVector::from_vec(m.to_vec()), DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]))
            .unwrap()
    };
    let truth = GmmModel::new(vec![comp(0.3, [-5.0, 2.0]), comp(0.7, [5.0, -1.0])], 1, 1).unwrap();
    let data = split(&truth.sample_joint(10_000, 5), 1);
    let fit = fit_gmm(&data, 2, &EmConfig::default()).unwrap();
    let mut got: Vec<(f64, f64)> = fit.model.components().iter().map(|c| (c.mean()[0], c.weight())).collect();
    got.sort_by(|a, b| a.0.total_cmp(&b.0));
    assert!((got[0].1 - 0.3).abs() < 0.05 && (got[1].1 - 0.7).abs() < 0.05, "{got:?}");
}

#[test]
fn letter_and_three_dimensional_fits_have_the_requested_size() {
    let letter = generate_synthetic(SynthKind::Letter, &SynthParams::default(), None, 1).unwrap();
    let fit = fit_gmm(&letter, 6, &EmConfig::default()).unwrap();
    assert_eq!(fit.model.num_components(), 6);
    assert_eq!((fit.model.input_dim(), fit.model.output_dim()), (1, 2));

    let params = SynthParams {
        demos: 3,
        output_dim: 3,
        ..SynthParams::default()
    };
    let aligned = generate_synthetic(SynthKind::Minjerk, &params, None, 2).unwrap();
    let fit = fit_gmm(&aligned, 4, &EmConfig::default()).unwrap();
    assert_eq!(fit.model.num_components(), 4);
    assert_eq!(fit.model.output_dim(), 3);
    assert!(fit.log_likelihood.windows(2).all(|w| w[1] >= w[0] - 1e-9));
}

#[test]
fn one_component_sample_mean_concentrates() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cov = random_spd(&mut rng, 2, 1.0, 0.1);
    let mu = DVector::from_vec(vec![0.7, -0.2]);
    let model = GmmModel::new(vec![GaussianComponent::new(1.0, mu.clone(), cov.clone()).unwrap()], 1, 1).unwrap();
    let n = 1_000_000;
    let pts = model.sample_joint(n, 8);
    let mean = pts.iter().fold(DVector::zeros(2), |a, p| a + p) / n as f64;
    for i in 0..2 {
        let bound = 4.0 * (cov[(i, i)] / n as f64).sqrt();
        assert!((mean[i] - mu[i]).abs() <= bound, "coordinate {i}: {} vs {}", mean[i], mu[i]);
    }
}

#[test]
fn component_frequencies_follow_the_weights() {
    let unit = DMatrix::identity(2, 2);
    let model = GmmModel::new(
        vec![
            GaussianComponent::new(0.35, DVector::from_vec(vec![0.0, 0.0]), unit.clone()).unwrap(),
            GaussianComponent::new(0.65, DVector::from_vec(vec![100.0, 0.0]), unit).unwrap(),
        ],
        1,
        1,
    )
    .unwrap();
    let n = 1_000_000;
    let left = model.sample_joint(n, 21).iter().filter(|p| p[0] < 50.0).count();
    assert!((left as f64 / n as f64 - 0.35).abs() < 0.01);
}

#[test]
fn sampling_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = random_gmm(&mut rng, 3, 1, 2);
    assert_eq!(model.sample_joint(50, 9), model.sample_joint(50, 9));
    assert_ne!(model.sample_joint(50, 9), model.sample_joint(50, 10));
}

#[test]
fn em_is_monotone_on_noisy_time_series() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..5 {
        let demos = (0..4)
            .map(|_| {
                let phase: f64 = rng.random_range(-0.2..0.2);
                let ts: Vec<f64> = (0..80).map(|i| i as f64 / 79.0).collect();
                let ys = ts
                    .iter()
                    .map(|t| DVector::from_vec(vec![(6.0 * t + phase).sin() + 0.05 * normal(&mut rng), t * t]))
                    .collect();
                (ts.iter().map(|t| DVector::from_element(1, *t)).collect(), ys)
            })
            .collect();
        let data = DemonstrationSet::from_demos(demos).unwrap();
        let fit = fit_gmm(&data, 5, &EmConfig::default()).unwrap();
        for w in fit.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "log-likelihood dropped {} -> {}", w[0], w[1]);
        }
    }
}
