#![allow(dead_code)]

use gmrgp::{GaussianComponent, GmmModel, MultiOutputKernel};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * normal(rng))
}

/// `A Aᵀ + floor · I` with a Gaussian `A`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, scale: f64, floor: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| scale * normal(rng));
    let m = &a * a.transpose() + DMatrix::identity(n, n) * floor;
    (&m + m.transpose()) * 0.5
}

pub fn random_gmm(rng: &mut ChaCha8Rng, c: usize, din: usize, d: usize) -> GmmModel {
    let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let comps = raw
        .iter()
        .map(|w| {
            GaussianComponent::new(
                w / total,
                random_vec(rng, din + d, 2.0),
                random_spd(rng, din + d, 0.6, 0.1),
            )
            .unwrap()
        })
        .collect();
    GmmModel::new(comps, din, d).unwrap()
}

/// Naive GP posterior with an explicit inverse of the noisy Gram matrix.
pub struct DenseOracle {
    pub k_inv: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub residual: DVector<f64>,
    pub xs: Vec<DVector<f64>>,
}

pub fn block_gram<K: MultiOutputKernel>(k: &K, a: &[DVector<f64>], b: &[DVector<f64>]) -> DMatrix<f64> {
    let d = k.output_dim();
    let mut out = DMatrix::zeros(a.len() * d, b.len() * d);
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            let blk = k.eval(x, y).unwrap();
            for r in 0..d {
                for s in 0..d {
                    out[(i * d + r, j * d + s)] = blk[(r, s)];
                }
            }
        }
    }
    out
}

impl DenseOracle {
    pub fn new<K: MultiOutputKernel>(
        kernel: &K,
        xs: &[DVector<f64>],
        ys: &[DVector<f64>],
        prior_means: &[DVector<f64>],
        noise: &[DMatrix<f64>],
    ) -> Self {
        let d = kernel.output_dim();
        let mut k = block_gram(kernel, xs, xs);
        for (i, n) in noise.iter().enumerate() {
            for r in 0..d {
                for s in 0..d {
                    k[(i * d + r, i * d + s)] += n[(r, s)];
                }
            }
        }
        let residual = DVector::from_iterator(
            xs.len() * d,
            ys.iter().zip(prior_means).flat_map(|(y, m)| (y - m).iter().copied().collect::<Vec<_>>()),
        );
        let k_inv = k.clone().try_inverse().expect("invertible Gram matrix");
        Self {
            k_inv,
            k,
            residual,
            xs: xs.to_vec(),
        }
    }

    pub fn predict<K: MultiOutputKernel>(
        &self,
        kernel: &K,
        x: &DVector<f64>,
        prior_mean: &DVector<f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let ks = block_gram(kernel, &self.xs, std::slice::from_ref(x));
        let kxx = kernel.eval(x, x).unwrap();
        let mean = prior_mean + ks.transpose() * &self.k_inv * &self.residual;
        let cov = kxx - ks.transpose() * &self.k_inv * &ks;
        (mean, cov)
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.residual.len() as f64;
        let det = self.k.determinant();
        -0.5 * (self.residual.transpose() * &self.k_inv * &self.residual)[0]
            - 0.5 * det.ln()
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

pub fn rel_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
