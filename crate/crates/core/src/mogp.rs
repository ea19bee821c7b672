//! Stationary zero-mean MOGP baseline with an LMC kernel of `Q` Matérn
//! terms, `Υ_q = s_q · B̄`.

use nalgebra::{DMatrix, DVector};

use crate::data::DemonstrationSet;
use crate::error::{check_dim, Error, Result};
use crate::gmrgp::{input_range, likelihood_stride, NoiseOverride, ViaPoint};
use crate::gp::{GpModel, ObservationSet, PosteriorPrediction, ZeroMean};
use crate::kernels::{LmcKernel, Matern52Params};
use crate::linalg::{from_rows, symmetrize};
use crate::optim::{maximize, OptConfig, OptResult};

/// Output second-moment matrix `E[y yᵀ]` scaled to unit mean diagonal, plus
/// `1e-6 · I`.
pub fn coregionalization_base(demos: &DemonstrationSet) -> DMatrix<f64> {
    let d = demos.output_dim();
    let mut m = DMatrix::zeros(d, d);
    for y in demos.outputs() {
        m.ger(1.0, y, y, 1.0);
    }
    m /= demos.len() as f64;
    let scale = m.trace() / d as f64;
    if scale > 0.0 {
        m /= scale;
    } else {
        m = DMatrix::identity(d, d);
    }
    symmetrize(&mut m);
    m + DMatrix::identity(d, d) * 1e-6
}

/// Mean output second moment per dimension, the natural unit of the scales.
fn second_moment_scale(demos: &DemonstrationSet) -> f64 {
    let s: f64 = demos.outputs().iter().map(|y| y.norm_squared()).sum();
    (s / (demos.len() * demos.output_dim()) as f64).max(f64::MIN_POSITIVE)
}

#[derive(Clone, Debug)]
pub struct MogpModel {
    base: DMatrix<f64>,
    noise: f64,
    engine: GpModel<ZeroMean, LmcKernel>,
}

impl MogpModel {
    pub fn new(
        input_dim: usize,
        base: DMatrix<f64>,
        lengthscales: &[f64],
        scales: &[f64],
        noise: f64,
    ) -> Result<Self> {
        check_dim(lengthscales.len(), scales.len(), "MOGP scales")?;
        if !(noise >= 0.0 && noise.is_finite()) {
            return Err(Error::NonPositiveParam {
                name: "noise",
                value: noise,
            });
        }
        let coreg = scales.iter().map(|s| &base * *s).collect();
        let scalars = lengthscales
            .iter()
            .map(|&l| Matern52Params::new(1.0, l))
            .collect::<Result<Vec<_>>>()?;
        let kernel = LmcKernel::new(input_dim, coreg, scalars)?;
        let output_dim = base.nrows();
        let engine = GpModel::new(
            ZeroMean {
                input_dim,
                output_dim,
            },
            kernel,
        )?;
        Ok(Self {
            base,
            noise,
            engine,
        })
    }

    /// Fits `num_terms` lengthscales, `num_terms` scales and a shared noise
    /// by maximum likelihood on the (strided) demonstrations.
    pub fn build(
        demos: &DemonstrationSet,
        num_terms: usize,
        config: &OptConfig,
    ) -> Result<(Self, OptResult)> {
        if num_terms == 0 {
            return Err(Error::InvalidParam("MOGP needs at least one kernel term".into()));
        }
        let data = demos.strided(likelihood_stride(demos.len(), config));
        let base = coregionalization_base(demos);
        let range = input_range(data.inputs());
        let m = second_moment_scale(demos);
        let q = num_terms;
        let (lo_l, hi_l) = config.lengthscale_bounds;
        let mut lower = vec![lo_l * range; q];
        let mut upper = vec![hi_l * range; q];
        lower.extend(std::iter::repeat_n(1e-3 * m, q));
        upper.extend(std::iter::repeat_n(1e2 * m, q));
        lower.push(config.noise_bounds.0);
        upper.push(config.noise_bounds.1);
        let din = demos.input_dim();
        let objective = |p: &[f64]| -> Result<f64> {
            let model = Self::new(din, base.clone(), &p[..q], &p[q..2 * q], p[2 * q])?;
            let obs = ObservationSet::with_shared_noise(
                data.inputs().to_vec(),
                data.outputs().to_vec(),
                p[2 * q],
            )?;
            model.engine.log_marginal_likelihood(&obs)
        };
        let opt = maximize(objective, &lower, &upper, None, config)?;
        let p = &opt.params;
        let model = Self::new(din, base, &p[..q], &p[q..2 * q], p[2 * q])?;
        Ok((model, opt))
    }

    pub fn engine(&self) -> &GpModel<ZeroMean, LmcKernel> {
        &self.engine
    }

    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    /// Conditions on every demonstration sample with the model noise.
    pub fn condition_on_demos(&self, demos: &DemonstrationSet) -> Result<Self> {
        let obs = ObservationSet::with_shared_noise(
            demos.inputs().to_vec(),
            demos.outputs().to_vec(),
            self.noise,
        )?;
        self.with_engine(self.engine.prior().condition(obs)?)
    }

    /// Conditions on via-points only, honoring per-point noise overrides.
    pub fn adapt(&self, via_points: &[ViaPoint]) -> Result<Self> {
        let d = self.engine.output_dim();
        let mut noise = Vec::with_capacity(via_points.len());
        for v in via_points {
            noise.push(match &v.noise {
                Some(NoiseOverride::Scalar(s)) => DMatrix::identity(d, d) * *s,
                Some(NoiseOverride::Matrix(rows)) => from_rows(rows, "via-point noise row")?,
                None => DMatrix::identity(d, d) * self.noise,
            });
        }
        let obs = ObservationSet::with_noise(
            via_points.iter().map(ViaPoint::input_vec).collect(),
            via_points.iter().map(ViaPoint::output_vec).collect(),
            noise,
        )?;
        self.with_engine(self.engine.prior().condition(obs)?)
    }

    fn with_engine(&self, engine: GpModel<ZeroMean, LmcKernel>) -> Result<Self> {
        Ok(Self {
            base: self.base.clone(),
            noise: self.noise,
            engine,
        })
    }

    pub fn predict(&self, x: &DVector<f64>) -> Result<PosteriorPrediction> {
        self.engine.predict(x)
    }

    pub fn predict_trajectory(&self, xs: &[DVector<f64>]) -> Result<Vec<PosteriorPrediction>> {
        self.engine.predict_batch(xs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_demos() -> DemonstrationSet {
        let demo = |off: f64| {
            let xs: Vec<_> = (0..20).map(|i| DVector::from_vec(vec![i as f64 / 19.0])).collect();
            let ys: Vec<_> = xs
                .iter()
                .map(|x| DVector::from_vec(vec![1.0 + x[0] + off, 2.0 - x[0]]))
                .collect();
            (xs, ys)
        };
        DemonstrationSet::from_demos(vec![demo(0.0), demo(0.05), demo(-0.05)]).unwrap()
    }

    #[test]
    fn base_is_normalized_psd() {
        let b = coregionalization_base(&line_demos());
        assert!((b.trace() - 2.0 - 2e-6).abs() < 1e-12);
        assert!(crate::linalg::min_eigenvalue(&b) > 0.0);
    }

    #[test]
    fn zero_mean_far_from_data() {
        let demos = line_demos();
        let m = MogpModel::new(1, coregionalization_base(&demos), &[0.2], &[1.0], 1e-4).unwrap();
        let post = m.condition_on_demos(&demos).unwrap();
        let p = post.predict(&DVector::from_vec(vec![50.0])).unwrap();
        assert!(p.mean.amax() < 1e-9);
        let near = post.predict(&DVector::from_vec(vec![0.5])).unwrap();
        assert!((near.mean[0] - 1.5).abs() < 0.05);
    }
}
