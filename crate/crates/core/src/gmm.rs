//! Gaussian mixture models over joint input/output vectors.
//!
//! Every component covariance is partitioned as
//!
//! ```text
//! | Σx   Σxy |
//! | Σyx  Σy  |
//! ```
//!
//! with the first `input_dim` coordinates being inputs. The blocks needed by
//! regression (the input-block factor, the regression matrix `Σyx Σx⁻¹` and
//! the conditional covariance) are computed once when a model is built.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::DemonstrationSet;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, from_rows, stable_norm, symmetrize, to_rows};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One weighted Gaussian over the joint input/output space.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianComponent {
    weight: f64,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianComponent {
    pub fn new(weight: f64, mean: DVector<f64>, mut covariance: DMatrix<f64>) -> Result<Self> {
        if !(weight > 0.0 && weight <= 1.0 + 1e-12) {
            return Err(Error::InvalidModel(format!(
                "component weight {weight} outside (0, 1]"
            )));
        }
        let d = mean.len();
        check_dim(d, covariance.nrows(), "covariance rows")?;
        check_dim(d, covariance.ncols(), "covariance columns")?;
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("component parameters".into()));
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-9 * covariance.amax().max(1.0) {
            return Err(Error::InvalidModel(format!(
                "covariance is not symmetric (max asymmetry {asym:e})"
            )));
        }
        symmetrize(&mut covariance);
        Ok(Self {
            weight,
            mean,
            covariance,
        })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }
}

/// Quantities derived from one component, cached at model construction.
#[derive(Clone, Debug)]
pub(crate) struct ComponentCache {
    joint_chol: Cholesky<f64, Dyn>,
    joint_log_norm: f64,
    input_chol: Cholesky<f64, Dyn>,
    input_log_norm: f64,
    /// `Σyx Σx⁻¹`, `output_dim × input_dim`.
    pub(crate) regression: DMatrix<f64>,
    /// `Σy − Σyx Σx⁻¹ Σxy`, exactly symmetric.
    pub(crate) conditional_cov: DMatrix<f64>,
}

fn log_norm(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let n = l.nrows();
    let half_log_det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
    -0.5 * n as f64 * LN_2PI - half_log_det
}

/// Whitened residual `L⁻¹ (x − μ)`.
fn whiten(chol: &Cholesky<f64, Dyn>, x: &DVector<f64>, mean: &DVector<f64>) -> DVector<f64> {
    let mut z = x - mean;
    chol.l_dirty().solve_lower_triangular_mut(&mut z);
    z
}

/// Result of a responsibility evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Responsibilities {
    pub values: Vec<f64>,
    /// Set when every component density underflowed even in log space and the
    /// vector was replaced by a one-hot on the nearest component (Mahalanobis).
    pub underflow: bool,
}

/// Mixture of `C ≥ 1` Gaussians over `input_dim + output_dim` coordinates.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "GmmModelFile", into = "GmmModelFile")]
pub struct GmmModel {
    components: Vec<GaussianComponent>,
    input_dim: usize,
    output_dim: usize,
    cache: Vec<ComponentCache>,
}

impl PartialEq for GmmModel {
    fn eq(&self, other: &Self) -> bool {
        self.input_dim == other.input_dim
            && self.output_dim == other.output_dim
            && self.components == other.components
    }
}

impl GmmModel {
    /// Validates and builds a model. Weights must sum to one within 1e-9 and
    /// are renormalized unless already normalized to rounding; every covariance must be positive definite.
    pub fn new(
        mut components: Vec<GaussianComponent>,
        input_dim: usize,
        output_dim: usize,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidModel("a mixture needs at least one component".into()));
        }
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidModel("input and output dimensions must be >= 1".into()));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel(format!("weights sum to {total}, not 1")));
        }
        // Skipped when already normalized to rounding, so that reloading a
        // saved model keeps its weights bit for bit.
        if (total - 1.0).abs() > components.len() as f64 * f64::EPSILON {
            for c in &mut components {
                c.weight /= total;
            }
        }
        let d = input_dim + output_dim;
        let mut cache = Vec::with_capacity(components.len());
        for (l, c) in components.iter().enumerate() {
            check_dim(d, c.mean.len(), "component mean").map_err(|e| e.at(l))?;
            let joint_chol = Cholesky::new(c.covariance.clone()).ok_or_else(|| {
                Error::InvalidModel(format!("covariance of component {l} is not positive definite"))
            })?;
            let sx = c.covariance.view((0, 0), (input_dim, input_dim)).clone_owned();
            let sxy = c
                .covariance
                .view((0, input_dim), (input_dim, output_dim))
                .clone_owned();
            let sy = c
                .covariance
                .view((input_dim, input_dim), (output_dim, output_dim))
                .clone_owned();
            let input_chol = Cholesky::new(sx).ok_or(Error::SingularInputBlock(l))?;
            // Σx⁻¹ Σxy through the factor; never an explicit inverse.
            let gain_t = input_chol.solve(&sxy);
            let regression = gain_t.transpose();
            let mut conditional_cov = sy - &regression * &sxy;
            symmetrize(&mut conditional_cov);
            cache.push(ComponentCache {
                joint_log_norm: log_norm(&joint_chol),
                joint_chol,
                input_log_norm: log_norm(&input_chol),
                input_chol,
                regression,
                conditional_cov,
            });
        }
        Ok(Self {
            components,
            input_dim,
            output_dim,
            cache,
        })
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub(crate) fn cache(&self, l: usize) -> &ComponentCache {
        &self.cache[l]
    }

    pub fn input_mean(&self, l: usize) -> DVector<f64> {
        self.components[l].mean.rows(0, self.input_dim).clone_owned()
    }

    pub fn output_mean(&self, l: usize) -> DVector<f64> {
        self.components[l]
            .mean
            .rows(self.input_dim, self.output_dim)
            .clone_owned()
    }

    /// Log density of component `l` alone at a joint point.
    pub fn component_log_pdf(&self, l: usize, point: &DVector<f64>) -> f64 {
        let c = &self.cache[l];
        let z = whiten(&c.joint_chol, point, &self.components[l].mean);
        c.joint_log_norm - 0.5 * z.norm_squared()
    }

    /// Log of the input-marginal density of component `l`.
    pub fn component_input_log_pdf(&self, l: usize, x: &DVector<f64>) -> f64 {
        let c = &self.cache[l];
        let z = whiten(&c.input_chol, x, &self.input_mean(l));
        c.input_log_norm - 0.5 * z.norm_squared()
    }

    /// Log of the mixture density at a joint point, via log-sum-exp.
    pub fn joint_log_pdf(&self, point: &DVector<f64>) -> Result<f64> {
        check_dim(self.input_dim + self.output_dim, point.len(), "joint point")?;
        if point.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("joint point".into()));
        }
        let terms: Vec<f64> = (0..self.num_components())
            .map(|l| self.components[l].weight.ln() + self.component_log_pdf(l, point))
            .collect();
        Ok(log_sum_exp(&terms))
    }

    /// Posterior probability of each component given an input, computed in
    /// log space and normalized.
    pub fn responsibilities(&self, x: &DVector<f64>) -> Result<Responsibilities> {
        check_dim(self.input_dim, x.len(), "input vector")?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("input vector".into()));
        }
        let c = self.num_components();
        let log_w: Vec<f64> = (0..c)
            .map(|l| self.components[l].weight.ln() + self.component_input_log_pdf(l, x))
            .collect();
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Ok(Responsibilities {
                values: self.nearest_one_hot(x),
                underflow: true,
            });
        }
        let mut values: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
        let sum: f64 = values.iter().sum();
        for v in &mut values {
            *v /= sum;
        }
        Ok(Responsibilities {
            values,
            underflow: false,
        })
    }

    fn nearest_one_hot(&self, x: &DVector<f64>) -> Vec<f64> {
        let dist = |l: usize| stable_norm(&whiten(&self.cache[l].input_chol, x, &self.input_mean(l)));
        let nearest = (0..self.num_components())
            .min_by(|&a, &b| dist(a).total_cmp(&dist(b)))
            .unwrap_or(0);
        let mut h = vec![0.0; self.num_components()];
        h[nearest] = 1.0;
        h
    }

    /// Draws `count` i.i.d. joint samples; deterministic for a fixed seed.
    pub fn sample_joint(&self, count: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, count)
    }

    pub(crate) fn sample_with<R: Rng>(&self, rng: &mut R, count: usize) -> Vec<DVector<f64>> {
        let picker = WeightedIndex::new(self.weights()).expect("weights are validated");
        let d = self.input_dim + self.output_dim;
        (0..count)
            .map(|_| {
                let l = picker.sample(rng);
                let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                &self.components[l].mean + self.cache[l].joint_chol.l_dirty().lower_triangle() * z
            })
            .collect()
    }
}

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Serialized form: row-major covariances, plain `f64` decimals.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GmmModelFile {
    pub input_dim: usize,
    pub output_dim: usize,
    pub components: Vec<ComponentFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComponentFile {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl TryFrom<GmmModelFile> for GmmModel {
    type Error = Error;

    fn try_from(f: GmmModelFile) -> Result<Self> {
        let components = f
            .components
            .into_iter()
            .map(|c| {
                GaussianComponent::new(
                    c.weight,
                    DVector::from_vec(c.mean),
                    from_rows(&c.covariance, "covariance row")?,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        GmmModel::new(components, f.input_dim, f.output_dim)
    }
}

impl From<GmmModel> for GmmModelFile {
    fn from(m: GmmModel) -> Self {
        Self {
            input_dim: m.input_dim,
            output_dim: m.output_dim,
            components: m
                .components
                .iter()
                .map(|c| ComponentFile {
                    weight: c.weight,
                    mean: c.mean.iter().copied().collect(),
                    covariance: to_rows(&c.covariance),
                })
                .collect(),
        }
    }
}

/// How EM picks its starting point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmInit {
    /// Equal-width input bins for time-driven data, k-means++ otherwise.
    Auto,
    TimeBins,
    KMeansPlusPlus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once `|ΔLL| < tol · |LL|`.
    pub tol: f64,
    /// Relative covariance jitter; `reg · trace(Σ) / dim` is added to the
    /// diagonal after every M-step.
    pub reg: f64,
    pub init: EmInit,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-6,
            reg: 1e-6,
            init: EmInit::Auto,
            seed: 0,
        }
    }
}

/// A fitted mixture and the log-likelihood trace of the run that produced it.
#[derive(Clone, Debug)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Joint log-likelihood of the data, one entry per parameter set visited
    /// (the initial one included).
    pub log_likelihood: Vec<f64>,
    pub converged: bool,
}

impl GmmFit {
    pub fn iterations(&self) -> usize {
        self.log_likelihood.len() - 1
    }
}

pub fn fit_gmm(data: &DemonstrationSet, num_components: usize, config: &EmConfig) -> Result<GmmFit> {
    fit_gmm_observed(data, num_components, config, |_, _| {})
}

/// Like [`fit_gmm`] but calls `observer(iteration, model)` after every M-step.
pub fn fit_gmm_observed(
    data: &DemonstrationSet,
    num_components: usize,
    config: &EmConfig,
    mut observer: impl FnMut(usize, &GmmModel),
) -> Result<GmmFit> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if num_components == 0 {
        return Err(Error::InvalidParam("num_components must be >= 1".into()));
    }
    if data.len() < num_components {
        return Err(Error::InvalidParam(format!(
            "{} samples cannot support {num_components} components",
            data.len()
        )));
    }
    let points: Vec<DVector<f64>> = (0..data.len()).map(|i| data.joint(i)).collect();
    let din = data.input_dim();
    let dout = data.output_dim();
    let dim = din + dout;
    let global_scale = sample_moments(&points, &vec![1.0; points.len()]).1.trace() / dim as f64;
    let regularizer = Regularizer {
        reg: config.reg,
        floor: config.reg * config.reg.max(f64::EPSILON) * global_scale.max(f64::MIN_POSITIVE),
    };

    let use_bins = match config.init {
        EmInit::TimeBins => true,
        EmInit::KMeansPlusPlus => false,
        EmInit::Auto => data.is_time_driven(),
    };
    let init_labels = if use_bins {
        time_bin_labels(data, num_components)
    } else {
        None
    };
    let labels = match init_labels {
        Some(l) => l,
        None => kmeans_pp_labels(&points, num_components, config.seed),
    };
    let mut model = model_from_labels(&points, &labels, num_components, din, dout, &regularizer)?;

    let (mut resp, mut ll) = e_step(&model, &points);
    let mut trace = vec![ll];
    let mut converged = false;
    for iter in 0..config.max_iter {
        model = m_step(&points, &resp, din, dout, &regularizer)?;
        observer(iter, &model);
        let (r, new_ll) = e_step(&model, &points);
        resp = r;
        trace.push(new_ll);
        let change = (new_ll - ll).abs();
        ll = new_ll;
        if change < config.tol * ll.abs() {
            converged = true;
            break;
        }
    }
    log::debug!(
        "EM finished after {} iterations, log-likelihood {ll}, converged = {converged}",
        trace.len() - 1
    );
    Ok(GmmFit {
        model,
        log_likelihood: trace,
        converged,
    })
}

struct Regularizer {
    reg: f64,
    /// Absolute lower bound on the jitter, for components whose scatter has
    /// zero trace.
    floor: f64,
}

impl Regularizer {
    fn apply(&self, cov: &mut DMatrix<f64>) {
        let d = cov.nrows();
        let jitter = (self.reg * cov.trace() / d as f64).max(self.floor);
        for i in 0..d {
            cov[(i, i)] += jitter;
        }
    }
}

/// Weighted mean and (biased) covariance; returns the total weight as well.
fn sample_moments(points: &[DVector<f64>], w: &[f64]) -> (DVector<f64>, DMatrix<f64>, f64) {
    let d = points[0].len();
    let total: f64 = w.iter().sum();
    let mut mean = DVector::zeros(d);
    for (p, &wi) in points.iter().zip(w) {
        mean.axpy(wi, p, 1.0);
    }
    mean /= total;
    let mut cov = DMatrix::zeros(d, d);
    for (p, &wi) in points.iter().zip(w) {
        let r = p - &mean;
        cov.ger(wi, &r, &r, 1.0);
    }
    cov /= total;
    symmetrize(&mut cov);
    (mean, cov, total)
}

fn e_step(model: &GmmModel, points: &[DVector<f64>]) -> (Vec<Vec<f64>>, f64) {
    let c = model.num_components();
    let log_weights: Vec<f64> = model.components.iter().map(|k| k.weight.ln()).collect();
    let mut ll = 0.0;
    let resp = points
        .iter()
        .map(|p| {
            let terms: Vec<f64> = (0..c)
                .map(|l| log_weights[l] + model.component_log_pdf(l, p))
                .collect();
            let lse = log_sum_exp(&terms);
            ll += lse;
            let mut r: Vec<f64> = terms.iter().map(|t| (t - lse).exp()).collect();
            let s: f64 = r.iter().sum();
            for v in &mut r {
                *v /= s;
            }
            r
        })
        .collect();
    (resp, ll)
}

fn m_step(
    points: &[DVector<f64>],
    resp: &[Vec<f64>],
    din: usize,
    dout: usize,
    regularizer: &Regularizer,
) -> Result<GmmModel> {
    let c = resp[0].len();
    let n = points.len() as f64;
    let mut components = Vec::with_capacity(c);
    for l in 0..c {
        let w: Vec<f64> = resp.iter().map(|r| r[l]).collect();
        let nk: f64 = w.iter().sum();
        if !(nk > 1e3 * f64::MIN_POSITIVE) || nk < f64::EPSILON * n {
            return Err(Error::DegenerateComponent {
                component: l,
                reason: format!("effective sample count {nk:e}"),
            });
        }
        let (mean, mut cov, _) = sample_moments(points, &w);
        regularizer.apply(&mut cov);
        components.push(GaussianComponent {
            weight: nk / n,
            mean,
            covariance: cov,
        });
    }
    GmmModel::new(components, din, dout).map_err(|e| match e {
        Error::InvalidModel(reason) | Error::NonFiniteInput(reason) => Error::DegenerateComponent {
            component: 0,
            reason,
        },
        Error::SingularInputBlock(l) => Error::DegenerateComponent {
            component: l,
            reason: "singular input block".into(),
        },
        other => other,
    })
}

fn model_from_labels(
    points: &[DVector<f64>],
    labels: &[usize],
    c: usize,
    din: usize,
    dout: usize,
    regularizer: &Regularizer,
) -> Result<GmmModel> {
    let n = points.len() as f64;
    let ones = vec![1.0; points.len()];
    let (_, global_cov, _) = sample_moments(points, &ones);
    let mut components = Vec::with_capacity(c);
    for l in 0..c {
        let w: Vec<f64> = labels.iter().map(|&k| if k == l { 1.0 } else { 0.0 }).collect();
        let count: f64 = w.iter().sum();
        let (mean, mut cov) = if count >= 2.0 {
            let (m, c, _) = sample_moments(points, &w);
            (m, c)
        } else if count >= 1.0 {
            let (m, _, _) = sample_moments(points, &w);
            (m, global_cov.clone())
        } else {
            return Err(Error::DegenerateComponent {
                component: l,
                reason: "no samples assigned at initialization".into(),
            });
        };
        regularizer.apply(&mut cov);
        components.push(GaussianComponent {
            weight: count / n,
            mean,
            covariance: cov,
        });
    }
    GmmModel::new(components, din, dout)
}

/// Labels from `c` equal-width bins over the scalar input range, or `None`
/// when some bin would hold fewer than two samples.
fn time_bin_labels(data: &DemonstrationSet, c: usize) -> Option<Vec<usize>> {
    if data.input_dim() != 1 {
        return None;
    }
    let (lo, hi) = data
        .inputs()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x[0]), hi.max(x[0]))
        });
    let width = (hi - lo) / c as f64;
    if !(width > 0.0) {
        return None;
    }
    let labels: Vec<usize> = data
        .inputs()
        .iter()
        .map(|x| (((x[0] - lo) / width).floor() as usize).min(c - 1))
        .collect();
    let mut counts = vec![0usize; c];
    for &l in &labels {
        counts[l] += 1;
    }
    counts.iter().all(|&k| k >= 2).then_some(labels)
}

fn kmeans_pp_labels(points: &[DVector<f64>], c: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = points.len();
    let mut centers: Vec<DVector<f64>> = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - &centers[0]).norm_squared()).collect();
    while centers.len() < c {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            WeightedIndex::new(&d2).map_or(0, |w| w.sample(&mut rng))
        } else {
            rng.random_range(0..n)
        };
        centers.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - &centers[centers.len() - 1]).norm_squared());
        }
    }
    let assign = |centers: &[DVector<f64>]| -> Vec<usize> {
        points
            .iter()
            .map(|p| {
                (0..centers.len())
                    .min_by(|&a, &b| {
                        (p - &centers[a])
                            .norm_squared()
                            .total_cmp(&(p - &centers[b]).norm_squared())
                    })
                    .unwrap_or(0)
            })
            .collect()
    };
    let mut labels = assign(&centers);
    for _ in 0..25 {
        for (l, center) in centers.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> = points
                .iter()
                .zip(&labels)
                .filter(|(_, &k)| k == l)
                .map(|(p, _)| p)
                .collect();
            if !members.is_empty() {
                let mut m = DVector::zeros(center.len());
                for p in &members {
                    m += *p;
                }
                *center = m / members.len() as f64;
            }
        }
        let next = assign(&centers);
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

/// Minimum eigenvalue of every component covariance, for diagnostics.
pub fn min_covariance_eigenvalues(model: &GmmModel) -> Vec<f64> {
    model
        .components
        .iter()
        .map(|c| linalg::min_eigenvalue(&c.covariance))
        .collect()
}

/// Standard normal density at its mode in `d` dimensions, `(2π)^{-d/2}`.
pub fn standard_normal_log_mode(d: usize) -> f64 {
    -0.5 * d as f64 * (2.0 * PI).ln()
}
