//! Exact multi-output GP conditioning, prediction, sampling and likelihood.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::gmm::GmmModel;
use crate::gmr::gmr_mean;
use crate::kernels::MultiOutputKernel;
use crate::linalg::{cholesky_with_jitter, min_eigenvalue, sym_sqrt, symmetrize, JitteredCholesky};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub trait MeanFunction: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn mean(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ZeroMean {
    pub input_dim: usize,
    pub output_dim: usize,
}

impl MeanFunction for ZeroMean {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn mean(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.input_dim, x.len(), "input vector")?;
        Ok(DVector::zeros(self.output_dim))
    }
}

/// The GMR mean of a mixture, evaluated through [`gmr_mean`].
#[derive(Clone, Debug)]
pub struct GmrMean(pub Arc<GmmModel>);

impl MeanFunction for GmrMean {
    fn input_dim(&self) -> usize {
        self.0.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.0.output_dim()
    }

    fn mean(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        gmr_mean(&self.0, x)
    }
}

/// Observations `y_v = f(x_v) + ε_v` with `ε_v ~ N(0, Σ_v)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    inputs: Vec<DVector<f64>>,
    outputs: Vec<DVector<f64>>,
    noise: Vec<DMatrix<f64>>,
}

impl ObservationSet {
    pub fn empty() -> Self {
        Self {
            inputs: Vec::new(),
            outputs: Vec::new(),
            noise: Vec::new(),
        }
    }

    /// Shared isotropic noise `σ_ε · I`; `σ_ε` is a variance.
    pub fn with_shared_noise(
        inputs: Vec<DVector<f64>>,
        outputs: Vec<DVector<f64>>,
        sigma: f64,
    ) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::NonPositiveParam {
                name: "noise",
                value: sigma,
            });
        }
        let d = outputs.first().map_or(0, |y| y.len());
        let noise = vec![DMatrix::identity(d, d) * sigma; outputs.len()];
        Self::with_noise(inputs, outputs, noise)
    }

    /// One symmetric PSD `D × D` noise covariance per observation.
    pub fn with_noise(
        inputs: Vec<DVector<f64>>,
        outputs: Vec<DVector<f64>>,
        noise: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        check_dim(inputs.len(), outputs.len(), "observation outputs")?;
        check_dim(inputs.len(), noise.len(), "observation noise")?;
        if let (Some(x0), Some(y0)) = (inputs.first(), outputs.first()) {
            let (din, d) = (x0.len(), y0.len());
            for (i, ((x, y), n)) in inputs.iter().zip(&outputs).zip(&noise).enumerate() {
                check_dim(din, x.len(), "observation input").map_err(|e| e.at(i))?;
                check_dim(d, y.len(), "observation output").map_err(|e| e.at(i))?;
                check_dim(d, n.nrows(), "noise rows").map_err(|e| e.at(i))?;
                check_dim(d, n.ncols(), "noise columns").map_err(|e| e.at(i))?;
                if x.iter().chain(y.iter()).chain(n.iter()).any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteInput(format!("observation {i}")));
                }
                let scale = n.amax().max(f64::MIN_POSITIVE);
                if (n - n.transpose()).amax() > 1e-12 * scale
                    || min_eigenvalue(n) < -1e-12 * scale
                {
                    return Err(Error::InvalidParam(format!(
                        "noise covariance of observation {i} is not symmetric PSD"
                    )));
                }
            }
        }
        Ok(Self {
            inputs,
            outputs,
            noise,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[DVector<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[DVector<f64>] {
        &self.outputs
    }

    pub fn noise(&self) -> &[DMatrix<f64>] {
        &self.noise
    }

    /// Collapses observations with bit-identical inputs.
    ///
    /// Replicates with positive-definite noise become one observation with
    /// the precision-weighted mean and the combined noise, which leaves the
    /// posterior over `f` unchanged. Identical noise-free replicates collapse
    /// to one copy. Any other group is kept as is.
    pub fn merge_replicates(&self) -> ObservationSet {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        for (i, x) in self.inputs.iter().enumerate() {
            let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
            match index.get(&key) {
                Some(&g) => groups[g].push(i),
                None => {
                    index.insert(key, groups.len());
                    groups.push(vec![i]);
                }
            }
        }
        if groups.len() == self.len() {
            return self.clone();
        }
        let mut out = ObservationSet::empty();
        for g in groups {
            if g.len() == 1 {
                out.push(self, g[0]);
                continue;
            }
            if let Some((y, n)) = self.precision_merge(&g) {
                out.inputs.push(self.inputs[g[0]].clone());
                out.outputs.push(y);
                out.noise.push(n);
            } else if g
                .iter()
                .all(|&i| self.outputs[i] == self.outputs[g[0]] && self.noise[i] == self.noise[g[0]])
            {
                out.push(self, g[0]);
            } else {
                for &i in &g {
                    out.push(self, i);
                }
            }
        }
        out
    }

    fn push(&mut self, from: &ObservationSet, i: usize) {
        self.inputs.push(from.inputs[i].clone());
        self.outputs.push(from.outputs[i].clone());
        self.noise.push(from.noise[i].clone());
    }

    fn precision_merge(&self, group: &[usize]) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let d = self.outputs[group[0]].len();
        let mut precision = DMatrix::zeros(d, d);
        let mut info = DVector::zeros(d);
        for &i in group {
            let chol = Cholesky::new(self.noise[i].clone())?;
            let p = chol.inverse();
            info += &p * &self.outputs[i];
            precision += p;
        }
        symmetrize(&mut precision);
        let chol = Cholesky::new(precision)?;
        let mut noise = chol.inverse();
        symmetrize(&mut noise);
        let y = &noise * info;
        Some((y, noise))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorPrediction {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

#[derive(Clone, Debug)]
struct Posterior {
    /// Observations actually factorized (replicates merged).
    obs: ObservationSet,
    chol: JitteredCholesky,
    /// `(K_obs + Σ_ε)⁻¹ (y − μ)`.
    alpha: DVector<f64>,
}

/// A GP prior, optionally conditioned on observations.
#[derive(Clone, Debug)]
pub struct GpModel<M, K> {
    mean: M,
    kernel: K,
    observations: ObservationSet,
    posterior: Option<Arc<Posterior>>,
}

fn stack(vs: &[DVector<f64>]) -> DVector<f64> {
    let d = vs.first().map_or(0, |v| v.len());
    let mut out = DVector::zeros(vs.len() * d);
    for (i, v) in vs.iter().enumerate() {
        out.rows_mut(i * d, d).copy_from(v);
    }
    out
}

fn add_block_noise(k: &mut DMatrix<f64>, noise: &[DMatrix<f64>]) {
    for (i, n) in noise.iter().enumerate() {
        let d = n.nrows();
        let mut b = k.view_mut((i * d, i * d), (d, d));
        b += n;
    }
}

impl<M: MeanFunction + Clone, K: MultiOutputKernel + Clone> GpModel<M, K> {
    pub fn new(mean: M, kernel: K) -> Result<Self> {
        check_dim(kernel.input_dim(), mean.input_dim(), "mean input dimension")?;
        check_dim(kernel.output_dim(), mean.output_dim(), "mean output dimension")?;
        Ok(Self {
            mean,
            kernel,
            observations: ObservationSet::empty(),
            posterior: None,
        })
    }

    pub fn mean_fn(&self) -> &M {
        &self.mean
    }

    pub fn kernel(&self) -> &K {
        &self.kernel
    }

    pub fn observations(&self) -> &ObservationSet {
        &self.observations
    }

    pub fn input_dim(&self) -> usize {
        self.kernel.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.kernel.output_dim()
    }

    /// Diagonal jitter used by the cached factorization (0 when none).
    pub fn jitter(&self) -> f64 {
        self.posterior.as_ref().map_or(0.0, |p| p.chol.jitter)
    }

    /// `K_obs + Σ_ε` for the factorized observations, and the factor, for
    /// diagnostics.
    pub fn factorized_system(&self) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
        let p = self.posterior.as_ref()?;
        let mut k = self.kernel.gram_self(p.obs.inputs()).ok()?;
        add_block_noise(&mut k, p.obs.noise());
        Some((k, p.chol.factor.l()))
    }

    /// A new model conditioned on `obs`; the receiver is unchanged.
    pub fn condition(&self, obs: ObservationSet) -> Result<Self> {
        let mut out = Self {
            mean: self.mean.clone(),
            kernel: self.kernel.clone(),
            observations: obs,
            posterior: None,
        };
        if out.observations.is_empty() {
            return Ok(out);
        }
        check_dim(self.input_dim(), out.observations.inputs[0].len(), "observation input")?;
        check_dim(self.output_dim(), out.observations.outputs[0].len(), "observation output")?;
        let merged = out.observations.merge_replicates();
        let mut k = self.kernel.gram_self(merged.inputs())?;
        add_block_noise(&mut k, merged.noise());
        let chol = cholesky_with_jitter(&k)?;
        let resid = self.residuals(&merged)?;
        let alpha = chol.solve_vec(&resid);
        out.posterior = Some(Arc::new(Posterior {
            obs: merged,
            chol,
            alpha,
        }));
        Ok(out)
    }

    /// The same prior without observations.
    pub fn prior(&self) -> Self {
        Self {
            mean: self.mean.clone(),
            kernel: self.kernel.clone(),
            observations: ObservationSet::empty(),
            posterior: None,
        }
    }

    fn residuals(&self, obs: &ObservationSet) -> Result<DVector<f64>> {
        let d = self.output_dim();
        let mut r = DVector::zeros(obs.len() * d);
        for (i, (x, y)) in obs.inputs.iter().zip(&obs.outputs).enumerate() {
            let m = self.mean.mean(x).map_err(|e| e.at(i))?;
            r.rows_mut(i * d, d).copy_from(&(y - m));
        }
        Ok(r)
    }

    pub fn predict(&self, x: &DVector<f64>) -> Result<PosteriorPrediction> {
        check_dim(self.input_dim(), x.len(), "query input")?;
        let mu = self.mean.mean(x)?;
        let kxx = self.kernel.eval(x, x)?;
        let Some(p) = &self.posterior else {
            return Ok(PosteriorPrediction {
                mean: mu,
                covariance: kxx,
            });
        };
        let kox = self.kernel.gram(p.obs.inputs(), std::slice::from_ref(x))?;
        let mean = mu + kox.tr_mul(&p.alpha);
        let v = p.chol.solve_lower(&kox);
        let mut cov = kxx - v.tr_mul(&v);
        symmetrize(&mut cov);
        clip_diagonal(&mut cov);
        Ok(PosteriorPrediction {
            mean,
            covariance: cov,
        })
    }

    pub fn predict_batch(&self, xs: &[DVector<f64>]) -> Result<Vec<PosteriorPrediction>> {
        xs.iter()
            .enumerate()
            .map(|(i, x)| self.predict(x).map_err(|e| e.at(i)))
            .collect()
    }

    /// Stacked mean and full joint covariance over `xs`.
    pub fn joint(&self, xs: &[DVector<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let means = xs
            .iter()
            .enumerate()
            .map(|(i, x)| self.mean.mean(x).map_err(|e| e.at(i)))
            .collect::<Result<Vec<_>>>()?;
        let mut mean = stack(&means);
        let mut cov = self.kernel.gram_self(xs)?;
        if let Some(p) = &self.posterior {
            let kox = self.kernel.gram(p.obs.inputs(), xs)?;
            mean += kox.tr_mul(&p.alpha);
            let v = p.chol.solve_lower(&kox);
            cov -= v.tr_mul(&v);
            symmetrize(&mut cov);
            clip_diagonal(&mut cov);
        }
        Ok((mean, cov))
    }

    /// `count` joint draws over `xs`, each a sequence of `D`-vectors.
    pub fn sample(&self, xs: &[DVector<f64>], count: usize, seed: u64) -> Result<Vec<Vec<DVector<f64>>>> {
        if count == 0 {
            return Err(Error::InvalidParam("sample count must be >= 1".into()));
        }
        let (mean, cov) = self.joint(xs)?;
        let root = sym_sqrt(&cov);
        let d = self.output_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..count)
            .map(|_| {
                let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
                let s = &mean + &root * z;
                (0..xs.len())
                    .map(|i| s.rows(i * d, d).clone_owned())
                    .collect()
            })
            .collect())
    }

    /// `log N(y − μ(x); 0, K + Σ_ε)` under this model's prior.
    pub fn log_marginal_likelihood(&self, data: &ObservationSet) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyData);
        }
        check_dim(self.input_dim(), data.inputs[0].len(), "observation input")?;
        check_dim(self.output_dim(), data.outputs[0].len(), "observation output")?;
        let mut k = self.kernel.gram_self(data.inputs())?;
        add_block_noise(&mut k, data.noise());
        let chol = cholesky_with_jitter(&k)?;
        let r = self.residuals(data)?;
        let alpha = chol.solve_vec(&r);
        let n = r.len() as f64;
        Ok(-0.5 * r.dot(&alpha) - 0.5 * chol.log_det() - 0.5 * n * LN_2PI)
    }
}

fn clip_diagonal(m: &mut DMatrix<f64>) {
    for i in 0..m.nrows() {
        if m[(i, i)] < 0.0 {
            m[(i, i)] = 0.0;
        }
    }
}
