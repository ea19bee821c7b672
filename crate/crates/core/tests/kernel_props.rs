mod common;

use std::sync::Arc;

use common::{random_gmm, random_spd, random_vec};
use gmrgp::kernels::matern52;
use gmrgp::synth::two_component_fixture;
use gmrgp::{component_conditional, GmrKernel, GmrGpModel, KernelSpec, LmcKernel, Matern52Params, MultiOutputKernel, NoiseModel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn x1(t: f64) -> DVector<f64> {
    DVector::from_element(1, t)
}

fn random_lmc(rng: &mut ChaCha8Rng, q: usize, din: usize, d: usize) -> LmcKernel {
    let ups = (0..q).map(|_| random_spd(rng, d, 0.7, 0.0)).collect();
    let scalars = (0..q)
        .map(|_| Matern52Params::new(rng.random_range(0.2..2.0), rng.random_range(0.2..3.0)).unwrap())
        .collect();
    LmcKernel::new(din, ups, scalars).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernels_are_exactly_symmetric(seed in any::<u64>(), c in 1usize..6, d in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gmm = Arc::new(random_gmm(&mut rng, c, 1, d));
        let ls = (0..c).map(|_| rng.random_range(0.1..3.0)).collect();
        let gmr = GmrKernel::new(gmm, ls).unwrap();
        let lmc = random_lmc(&mut rng, 2, 1, d);
        for _ in 0..10 {
            let (a, b) = (random_vec(&mut rng, 1, 3.0), random_vec(&mut rng, 1, 3.0));
            prop_assert_eq!(gmr.eval(&a, &b).unwrap(), gmr.eval(&b, &a).unwrap().transpose());
            prop_assert_eq!(lmc.eval(&a, &b).unwrap(), lmc.eval(&b, &a).unwrap().transpose());
        }
    }

    #[test]
    fn cross_gram_transposes(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gmm = Arc::new(random_gmm(&mut rng, 3, 1, 2));
        let k = GmrKernel::new(gmm, vec![0.5, 1.0, 2.0]).unwrap();
        let xs: Vec<_> = (0..7).map(|_| random_vec(&mut rng, 1, 2.0)).collect();
        let ys: Vec<_> = (0..4).map(|_| random_vec(&mut rng, 1, 2.0)).collect();
        let ab = k.gram(&xs, &ys).unwrap();
        let ba = k.gram(&ys, &xs).unwrap();
        prop_assert!((ab - ba.transpose()).amax() <= 1e-12);
        let s = k.gram_self(&xs).unwrap();
        prop_assert!((&s - s.transpose()).amax() <= 1e-12);
    }
}

#[test]
fn lmc_matches_a_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = random_lmc(&mut rng, 3, 2, 3);
    for _ in 0..20 {
        let (a, b) = (random_vec(&mut rng, 2, 1.5), random_vec(&mut rng, 2, 1.5));
        let got = k.eval(&a, &b).unwrap();
        let mut want = DMatrix::zeros(3, 3);
        for (u, p) in k.coregionalization().iter().zip(k.scalars()) {
            let kq = matern52(p, &a, &b).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    want[(i, j)] += u[(i, j)] * kq;
                }
            }
        }
        assert!((got - want).amax() <= 1e-12);
    }
}

#[test]
fn single_term_lmc_special_cases() {
    let p = Matern52Params::new(1.7, 0.8).unwrap();
    let eye = LmcKernel::new(1, vec![DMatrix::identity(2, 2)], vec![p]).unwrap();
    let (a, b) = (x1(0.1), x1(0.9));
    let k = matern52(&p, &a, &b).unwrap();
    assert!((eye.eval(&a, &b).unwrap() - DMatrix::identity(2, 2) * k).amax() <= 1e-15);

    let u = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let lmc = LmcKernel::new(1, vec![u.clone()], vec![p]).unwrap();
    assert!((lmc.eval(&a, &a).unwrap() - u * 1.7).amax() <= 1e-15);
}

#[test]
fn single_component_kernel_is_separable() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let gmm = Arc::new(random_gmm(&mut rng, 1, 1, 2));
    let k = GmrKernel::new(gmm.clone(), vec![0.7]).unwrap();
    let (_, s) = component_conditional(&gmm, 0, &x1(0.0)).unwrap();
    let p = Matern52Params::new(1.0, 0.7).unwrap();
    for _ in 0..20 {
        let (a, b) = (random_vec(&mut rng, 1, 2.0), random_vec(&mut rng, 1, 2.0));
        let want = &s * matern52(&p, &a, &b).unwrap();
        assert!((k.eval(&a, &b).unwrap() - want).amax() <= 1e-12);
    }
}

#[test]
fn conditional_covariances_are_cached_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let gmm = Arc::new(random_gmm(&mut rng, 4, 2, 3));
    let k = GmrKernel::new(gmm.clone(), vec![1.0; 4]).unwrap();
    for (l, cached) in k.conditional_covs().iter().enumerate() {
        let (_, s) = component_conditional(&gmm, l, &random_vec(&mut rng, 2, 1.0)).unwrap();
        assert!((cached - s).amax() <= 1e-12);
    }
    for l in 0..4 {
        assert_eq!(k.component_params(l).variance(), 1.0);
    }
}

#[test]
fn midpoint_blend_matches_the_direct_formula() {
    let gmm = Arc::new(two_component_fixture());
    let k = GmrKernel::new(gmm.clone(), vec![1.0, 1.0]).unwrap();
    let mid = x1(1.25);
    let h = gmm.responsibilities(&mid).unwrap().values;
    let s0 = component_conditional(&gmm, 0, &mid).unwrap().1;
    let s1 = component_conditional(&gmm, 1, &mid).unwrap().1;
    let want = s0 * h[0].powi(2) + s1 * h[1].powi(2);
    assert!((k.eval(&mid, &mid).unwrap() - want).amax() <= 1e-12);
}

#[test]
fn pure_input_gives_the_component_covariance() {
    let gmm = Arc::new(two_component_fixture());
    let k = GmrKernel::new(gmm.clone(), vec![1.0, 1.0]).unwrap();
    for (l, t) in [(0, 0.3), (1, 2.3)] {
        let x = x1(t);
        assert!(gmm.responsibilities(&x).unwrap().values[l] > 1.0 - 1e-9);
        let s = component_conditional(&gmm, l, &x).unwrap().1;
        assert!((k.eval(&x, &x).unwrap() - &s).norm() <= 1e-6 * s.norm());
    }
}

#[test]
fn kernel_is_not_stationary() {
    let k = GmrKernel::new(Arc::new(two_component_fixture()), vec![1.0, 1.0]).unwrap();
    let left = k.eval(&x1(0.2), &x1(0.5)).unwrap();
    let right = k.eval(&x1(2.0), &x1(2.3)).unwrap();
    assert!((left - right).amax() > 1e-3);
}

#[test]
fn serialized_component_variances_are_one() {
    let model = GmrGpModel::new(two_component_fixture(), vec![0.4, 2.0], NoiseModel::Shared { variance: 1e-4 }).unwrap();
    let json: serde_json::Value = serde_json::from_str(&model.to_json().unwrap()).unwrap();
    assert_eq!(json["kernel"]["type"], "gmr");
    assert_eq!(json["kernel"]["variances"], serde_json::json!([1.0, 1.0]));

    let tampered = KernelSpec::Gmr {
        lengthscales: vec![0.4, 2.0],
        variances: vec![1.0, 2.0],
    };
    assert!(GmrKernel::from_spec(model.gmm().clone(), &tampered).is_err());
}
