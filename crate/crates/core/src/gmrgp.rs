//! The GMR-based Gaussian process: GMR prior mean, responsibility-weighted
//! kernel, hyperparameters fitted on demonstrations, and conditioning on
//! via-points only.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::DemonstrationSet;
use crate::error::{check_dim, Error, Result};
use crate::gmm::GmmModel;
use crate::gp::{GmrMean, GpModel, MeanFunction, ObservationSet, PosteriorPrediction};
use crate::kernels::{GmrKernel, KernelSpec, MultiOutputKernel};
use crate::linalg::{from_rows, to_rows};
use crate::optim::{maximize, OptConfig, OptResult};

/// Distance below which two via-point inputs count as the same input.
pub const VIA_INPUT_TOLERANCE: f64 = 1e-12;

/// Observation noise attached to a single via-point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseOverride {
    /// Isotropic variance.
    Scalar(f64),
    /// Full `D × D` covariance, row-major.
    Matrix(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViaPoint {
    pub input: Vec<f64>,
    pub output: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseOverride>,
}

impl ViaPoint {
    pub fn new(input: Vec<f64>, output: Vec<f64>) -> Self {
        Self {
            input,
            output,
            noise: None,
        }
    }

    pub fn with_noise(mut self, noise: NoiseOverride) -> Self {
        self.noise = Some(noise);
        self
    }

    pub fn with_noise_matrix(self, noise: &DMatrix<f64>) -> Self {
        self.with_noise(NoiseOverride::Matrix(to_rows(noise)))
    }

    pub fn input_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.input)
    }

    pub fn output_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.output)
    }

    fn has_zero_noise(&self, model_noise: &DMatrix<f64>) -> bool {
        match &self.noise {
            Some(NoiseOverride::Scalar(v)) => *v == 0.0,
            Some(NoiseOverride::Matrix(m)) => m.iter().flatten().all(|v| *v == 0.0),
            None => model_noise.iter().all(|v| *v == 0.0),
        }
    }
}

/// Process noise `σ_ε` (a variance), shared or per component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseModel {
    Shared { variance: f64 },
    /// Enters a via-point as `Σ_ℓ h_ℓ(ξ)² σ_ℓ · I`.
    PerComponent { variances: Vec<f64> },
}

impl NoiseModel {
    fn validate(&self, components: usize) -> Result<()> {
        match self {
            NoiseModel::Shared { variance } => check_nonnegative(*variance),
            NoiseModel::PerComponent { variances } => {
                check_dim(components, variances.len(), "per-component noise")?;
                variances.iter().try_for_each(|v| check_nonnegative(*v))
            }
        }
    }
}

fn check_nonnegative(v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return Err(Error::NonPositiveParam {
            name: "noise",
            value: v,
        });
    }
    Ok(())
}

/// Diagnostics from [`GmrGpModel::build`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub optimization: OptResult,
    pub likelihood_points: usize,
    pub stride: usize,
}

#[derive(Clone, Debug)]
pub struct GmrGpModel {
    gmm: Arc<GmmModel>,
    noise: NoiseModel,
    via_points: Vec<ViaPoint>,
    engine: GpModel<GmrMean, GmrKernel>,
}

impl GmrGpModel {
    /// A prior with fixed hyperparameters and no via-points.
    pub fn new(gmm: impl Into<Arc<GmmModel>>, lengthscales: Vec<f64>, noise: NoiseModel) -> Result<Self> {
        let gmm = gmm.into();
        noise.validate(gmm.num_components())?;
        let kernel = GmrKernel::new(gmm.clone(), lengthscales)?;
        let engine = GpModel::new(GmrMean(gmm.clone()), kernel)?;
        Ok(Self {
            gmm,
            noise,
            via_points: Vec::new(),
            engine,
        })
    }

    /// Fits the component lengthscales and a shared noise by maximizing the
    /// GP likelihood of the demonstrations (strided), then returns the
    /// prior with no via-points. The demonstrations are not kept.
    pub fn build(
        gmm: impl Into<Arc<GmmModel>>,
        demos: &DemonstrationSet,
        config: &OptConfig,
    ) -> Result<(Self, BuildReport)> {
        let gmm = gmm.into();
        check_dim(gmm.input_dim(), demos.input_dim(), "demonstration input dimension")?;
        check_dim(gmm.output_dim(), demos.output_dim(), "demonstration output dimension")?;
        let stride = likelihood_stride(demos.len(), config);
        let data = demos.strided(stride);
        let c = gmm.num_components();
        let range = input_range(data.inputs());
        let (lo_l, hi_l) = config.lengthscale_bounds;
        let mut lower = vec![lo_l * range; c];
        let mut upper = vec![hi_l * range; c];
        lower.push(config.noise_bounds.0);
        upper.push(config.noise_bounds.1);

        let prior = Self::new(gmm.clone(), vec![range; c], NoiseModel::Shared { variance: 0.0 })?;
        let objective = |p: &[f64]| -> Result<f64> {
            let kernel = prior.engine.kernel().with_lengthscales(p[..c].to_vec())?;
            let gp = GpModel::new(GmrMean(gmm.clone()), kernel)?;
            let obs = ObservationSet::with_shared_noise(
                data.inputs().to_vec(),
                data.outputs().to_vec(),
                p[c],
            )?;
            gp.log_marginal_likelihood(&obs)
        };
        let opt = maximize(objective, &lower, &upper, None, config)?;
        let model = Self::new(
            gmm,
            opt.params[..c].to_vec(),
            NoiseModel::Shared {
                variance: opt.params[c],
            },
        )?;
        log::info!(
            "GMR-GP hyperparameters: lengthscales {:?}, noise {:e}, log-likelihood {}",
            &opt.params[..c],
            opt.params[c],
            opt.value
        );
        Ok((
            model,
            BuildReport {
                optimization: opt,
                likelihood_points: data.len(),
                stride,
            },
        ))
    }

    pub fn gmm(&self) -> &Arc<GmmModel> {
        &self.gmm
    }

    pub fn kernel(&self) -> &GmrKernel {
        self.engine.kernel()
    }

    pub fn lengthscales(&self) -> &[f64] {
        self.engine.kernel().lengthscales()
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn via_points(&self) -> &[ViaPoint] {
        &self.via_points
    }

    pub fn engine(&self) -> &GpModel<GmrMean, GmrKernel> {
        &self.engine
    }

    pub fn input_dim(&self) -> usize {
        self.gmm.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.gmm.output_dim()
    }

    /// Model-level noise covariance for an observation at `x`.
    pub fn noise_at(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.output_dim();
        Ok(match &self.noise {
            NoiseModel::Shared { variance } => DMatrix::identity(d, d) * *variance,
            NoiseModel::PerComponent { variances } => {
                let h = self.gmm.responsibilities(x)?.values;
                let v: f64 = h.iter().zip(variances).map(|(h, s)| h * h * s).sum();
                DMatrix::identity(d, d) * v
            }
        })
    }

    fn via_noise(&self, via: &ViaPoint) -> Result<DMatrix<f64>> {
        let d = self.output_dim();
        match &via.noise {
            Some(NoiseOverride::Scalar(v)) => {
                check_nonnegative(*v)?;
                Ok(DMatrix::identity(d, d) * *v)
            }
            Some(NoiseOverride::Matrix(rows)) => {
                let m = from_rows(rows, "via-point noise row")?;
                check_dim(d, m.nrows(), "via-point noise rows")?;
                check_dim(d, m.ncols(), "via-point noise columns")?;
                Ok(m)
            }
            None => self.noise_at(&via.input_vec()),
        }
    }

    /// A new model conditioned on exactly `via_points` (replacing any
    /// previous ones). The prior is unchanged.
    pub fn adapt(&self, via_points: Vec<ViaPoint>) -> Result<Self> {
        for (i, v) in via_points.iter().enumerate() {
            check_dim(self.input_dim(), v.input.len(), "via-point input").map_err(|e| e.at(i))?;
            check_dim(self.output_dim(), v.output.len(), "via-point output").map_err(|e| e.at(i))?;
            if v.input.iter().chain(&v.output).any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteInput(format!("via-point {i}")));
            }
        }
        let merged = self.merge_duplicates(via_points)?;
        let mut noise = Vec::with_capacity(merged.len());
        for (i, v) in merged.iter().enumerate() {
            noise.push(self.via_noise(v).map_err(|e| e.at(i))?);
        }
        let obs = ObservationSet::with_noise(
            merged.iter().map(ViaPoint::input_vec).collect(),
            merged.iter().map(ViaPoint::output_vec).collect(),
            noise,
        )?;
        let engine = self.engine.condition(obs)?;
        Ok(Self {
            gmm: self.gmm.clone(),
            noise: self.noise.clone(),
            via_points: merged,
            engine,
        })
    }

    fn merge_duplicates(&self, via: Vec<ViaPoint>) -> Result<Vec<ViaPoint>> {
        let mut out: Vec<(usize, ViaPoint, usize)> = Vec::new();
        for (i, v) in via.into_iter().enumerate() {
            let x = v.input_vec();
            let hit = out
                .iter_mut()
                .find(|(_, u, _)| (u.input_vec() - &x).norm() <= VIA_INPUT_TOLERANCE);
            let Some((first, u, count)) = hit else {
                out.push((i, v, 1));
                continue;
            };
            let model_noise = self.noise_at(&x)?;
            let conflicting = u
                .output
                .iter()
                .zip(&v.output)
                .any(|(a, b)| (a - b).abs() > VIA_INPUT_TOLERANCE * a.abs().max(b.abs()).max(1.0));
            if conflicting {
                if u.has_zero_noise(&model_noise) || v.has_zero_noise(&model_noise) {
                    return Err(Error::DuplicateViaInput {
                        first: *first,
                        second: i,
                    });
                }
                out.push((i, v, 1));
                continue;
            }
            let n = *count as f64;
            for (a, b) in u.output.iter_mut().zip(&v.output) {
                *a = (*a * n + b) / (n + 1.0);
            }
            *count += 1;
        }
        Ok(out.into_iter().map(|(_, v, _)| v).collect())
    }

    /// GMR mean at `x`, i.e. the prior mean of the process.
    pub fn prior_mean(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.engine.mean_fn().mean(x)
    }

    /// Prior covariance `k(x, x)`.
    pub fn prior_covariance(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.engine.kernel().eval(x, x)
    }

    pub fn predict(&self, x: &DVector<f64>) -> Result<PosteriorPrediction> {
        self.engine.predict(x)
    }

    pub fn predict_trajectory(&self, xs: &[DVector<f64>]) -> Result<Vec<PosteriorPrediction>> {
        self.engine.predict_batch(xs)
    }

    pub fn sample_trajectories(
        &self,
        xs: &[DVector<f64>],
        count: usize,
        seed: u64,
    ) -> Result<Vec<Vec<DVector<f64>>>> {
        self.engine.sample(xs, count, seed)
    }

    fn rebuilt(&self, kernel: GmrKernel, noise: NoiseModel) -> Result<Self> {
        noise.validate(self.gmm.num_components())?;
        let prior = Self {
            gmm: self.gmm.clone(),
            noise,
            via_points: Vec::new(),
            engine: GpModel::new(GmrMean(self.gmm.clone()), kernel)?,
        };
        if self.via_points.is_empty() {
            Ok(prior)
        } else {
            prior.adapt(self.via_points.clone())
        }
    }

    pub fn set_component_lengthscale(&self, l: usize, value: f64) -> Result<Self> {
        let kernel = self.engine.kernel().with_lengthscale(l, value)?;
        self.rebuilt(kernel, self.noise.clone())
    }

    pub fn set_lengthscales(&self, lengthscales: Vec<f64>) -> Result<Self> {
        let kernel = self.engine.kernel().with_lengthscales(lengthscales)?;
        self.rebuilt(kernel, self.noise.clone())
    }

    pub fn set_noise(&self, noise: NoiseModel) -> Result<Self> {
        self.rebuilt(self.engine.kernel().clone(), noise)
    }

    pub fn to_file(&self) -> GmrGpFile {
        GmrGpFile {
            gmm: (*self.gmm).clone(),
            kernel: self.engine.kernel().spec(),
            noise: self.noise.clone(),
            via_points: self.via_points.clone(),
        }
    }

    pub fn from_file(file: GmrGpFile) -> Result<Self> {
        let gmm = Arc::new(file.gmm);
        let kernel = GmrKernel::from_spec(gmm.clone(), &file.kernel)?;
        let prior = Self::new(gmm, kernel.lengthscales().to_vec(), file.noise)?;
        if file.via_points.is_empty() {
            Ok(prior)
        } else {
            prior.adapt(file.via_points)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }
}

/// Serialized GMR-GP model: mixture, kernel, noise and via-points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GmrGpFile {
    pub gmm: GmmModel,
    pub kernel: KernelSpec,
    pub noise: NoiseModel,
    #[serde(default)]
    pub via_points: Vec<ViaPoint>,
}

pub(crate) fn likelihood_stride(n: usize, config: &OptConfig) -> usize {
    config
        .stride
        .unwrap_or_else(|| n.div_ceil(config.max_points.max(1)))
        .max(1)
}

/// Diameter of the bounding box of the inputs (1 when degenerate).
pub(crate) fn input_range(xs: &[DVector<f64>]) -> f64 {
    let din = xs[0].len();
    let mut sq = 0.0;
    for i in 0..din {
        let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x[i]), hi.max(x[i]))
        });
        sq += (hi - lo) * (hi - lo);
    }
    let r = sq.sqrt();
    if r > 0.0 {
        r
    } else {
        1.0
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::GaussianComponent;

    fn one_component() -> GmmModel {
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 0.5, 0.05, 0.1, 0.05, 0.4]);
        GmmModel::new(
            vec![GaussianComponent::new(1.0, DVector::from_vec(vec![0.0, 1.0, 2.0]), cov).unwrap()],
            1,
            2,
        )
        .unwrap()
    }

    #[test]
    fn single_component_prior_covariance_is_conditional() {
        let gmm = one_component();
        let m = GmrGpModel::new(gmm, vec![0.7], NoiseModel::Shared { variance: 1e-4 }).unwrap();
        let expected = m.kernel().conditional_covs()[0].clone();
        for x in [-2.0, 0.0, 3.5] {
            let k = m.prior_covariance(&DVector::from_vec(vec![x])).unwrap();
            assert_eq!(k, expected);
        }
    }

    #[test]
    fn duplicate_via_points() {
        let m = GmrGpModel::new(one_component(), vec![1.0], NoiseModel::Shared { variance: 0.0 }).unwrap();
        let a = ViaPoint::new(vec![0.5], vec![1.0, 2.0]);
        let b = ViaPoint::new(vec![0.5], vec![1.5, 2.0]);
        assert!(matches!(
            m.adapt(vec![a.clone(), b]),
            Err(Error::DuplicateViaInput { first: 0, second: 1 })
        ));
        let merged = m
            .adapt(vec![a.clone().with_noise(NoiseOverride::Scalar(1e-6)), a.clone()])
            .unwrap();
        assert_eq!(merged.via_points().len(), 1);
    }

    #[test]
    fn setters_validate() {
        let m = GmrGpModel::new(one_component(), vec![1.0], NoiseModel::Shared { variance: 1e-4 }).unwrap();
        assert!(matches!(m.set_component_lengthscale(1, 1.0), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(
            m.set_component_lengthscale(0, -1.0),
            Err(Error::NonPositiveParam { .. })
        ));
        assert!(m.set_noise(NoiseModel::Shared { variance: -1.0 }).is_err());
    }

    #[test]
    fn json_round_trip_keeps_via_points() {
        let m = GmrGpModel::new(one_component(), vec![1.0], NoiseModel::Shared { variance: 1e-4 })
            .unwrap()
            .adapt(vec![ViaPoint::new(vec![0.25], vec![1.0, 2.5])])
            .unwrap();
        let back = GmrGpModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.via_points(), m.via_points());
        let x = DVector::from_vec(vec![0.4]);
        assert_eq!(back.predict(&x).unwrap(), m.predict(&x).unwrap());
        assert!(m.to_json().unwrap().contains("\"variances\""));
    }
}
