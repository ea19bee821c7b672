//! Matrix-valued covariance kernels.
//!
//! Every kernel maps a pair of inputs to a `D × D` block. Gram matrices use
//! one block row per input: entry `(i·D + a, j·D + b)` is the covariance of
//! output `a` at input `i` with output `b` at input `j`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_positive, Error, Result};
use crate::gmm::GmmModel;
use crate::linalg::{from_rows, min_eigenvalue, symmetrize, to_rows};

const SQRT_5: f64 = 2.236_067_977_499_79;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matern52Params {
    variance: f64,
    lengthscale: f64,
}

impl Matern52Params {
    pub fn new(variance: f64, lengthscale: f64) -> Result<Self> {
        check_positive("variance", variance)?;
        check_positive("lengthscale", lengthscale)?;
        Ok(Self {
            variance,
            lengthscale,
        })
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// Kernel value at Euclidean distance `r`.
    #[inline]
    pub fn at_distance(&self, r: f64) -> f64 {
        let s = SQRT_5 * r / self.lengthscale;
        self.variance * (1.0 + s + s * s / 3.0) * (-s).exp()
    }
}

pub fn matern52(params: &Matern52Params, x: &DVector<f64>, x2: &DVector<f64>) -> Result<f64> {
    check_dim(x.len(), x2.len(), "kernel inputs")?;
    Ok(params.at_distance(distance(x, x2)))
}

/// Euclidean distance, symmetric in its arguments bit for bit.
#[inline]
pub(crate) fn distance(x: &DVector<f64>, x2: &DVector<f64>) -> f64 {
    x.iter()
        .zip(x2.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// A kernel whose values are `D × D` matrices.
pub trait MultiOutputKernel: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    fn eval(&self, x: &DVector<f64>, x2: &DVector<f64>) -> Result<DMatrix<f64>>;

    /// Cross Gram matrix, `(M·D) × (M'·D)`.
    fn gram(&self, xs: &[DVector<f64>], ys: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        let d = self.output_dim();
        let mut k = DMatrix::zeros(xs.len() * d, ys.len() * d);
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in ys.iter().enumerate() {
                k.view_mut((i * d, j * d), (d, d))
                    .copy_from(&self.eval(x, y)?);
            }
        }
        Ok(k)
    }

    /// Self Gram matrix; lower blocks mirror the upper ones so the result is
    /// exactly symmetric.
    fn gram_self(&self, xs: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        let d = self.output_dim();
        let n = xs.len() * d;
        let mut k = DMatrix::zeros(n, n);
        for i in 0..xs.len() {
            for j in i..xs.len() {
                let b = self.eval(&xs[i], &xs[j])?;
                k.view_mut((i * d, j * d), (d, d)).copy_from(&b);
            }
        }
        mirror_upper(&mut k);
        Ok(k)
    }

    /// Serializable description of the kernel.
    fn spec(&self) -> KernelSpec;
}

fn mirror_upper(k: &mut DMatrix<f64>) {
    let n = k.nrows();
    for c in 0..n {
        for r in (c + 1)..n {
            k[(r, c)] = k[(c, r)];
        }
    }
}

fn check_inputs(din: usize, xs: &[DVector<f64>]) -> Result<()> {
    for (i, x) in xs.iter().enumerate() {
        check_dim(din, x.len(), "kernel input").map_err(|e| e.at(i))?;
    }
    Ok(())
}

/// Serialized kernel configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelSpec {
    Gmr {
        lengthscales: Vec<f64>,
        variances: Vec<f64>,
    },
    Lmc {
        lengthscales: Vec<f64>,
        variances: Vec<f64>,
        coregionalization: Vec<Vec<Vec<f64>>>,
    },
    Matern52 {
        lengthscales: Vec<f64>,
        variances: Vec<f64>,
    },
}

/// Linear model of coregionalization: `Σ_q Υ_q k_q(x, x')`.
#[derive(Clone, Debug)]
pub struct LmcKernel {
    input_dim: usize,
    coregionalization: Vec<DMatrix<f64>>,
    scalars: Vec<Matern52Params>,
}

impl LmcKernel {
    pub fn new(
        input_dim: usize,
        coregionalization: Vec<DMatrix<f64>>,
        scalars: Vec<Matern52Params>,
    ) -> Result<Self> {
        if coregionalization.is_empty() {
            return Err(Error::InvalidModel("LMC kernel needs at least one term".into()));
        }
        check_dim(coregionalization.len(), scalars.len(), "LMC scalar kernels")?;
        let d = coregionalization[0].nrows();
        let mut mats = Vec::with_capacity(coregionalization.len());
        for (q, mut u) in coregionalization.into_iter().enumerate() {
            check_dim(d, u.nrows(), "coregionalization rows").map_err(|e| e.at(q))?;
            check_dim(d, u.ncols(), "coregionalization columns").map_err(|e| e.at(q))?;
            let asym = (&u - u.transpose()).amax();
            if asym > 1e-12 * u.amax().max(1.0) {
                return Err(Error::InvalidModel(format!(
                    "coregionalization matrix {q} is not symmetric"
                )));
            }
            symmetrize(&mut u);
            if min_eigenvalue(&u) < -1e-10 {
                return Err(Error::InvalidModel(format!(
                    "coregionalization matrix {q} is not positive semi-definite"
                )));
            }
            mats.push(u);
        }
        Ok(Self {
            input_dim,
            coregionalization: mats,
            scalars,
        })
    }

    /// `k(x, x') · I_D`.
    pub fn isotropic(input_dim: usize, output_dim: usize, params: Matern52Params) -> Self {
        Self::new(input_dim, vec![DMatrix::identity(output_dim, output_dim)], vec![params])
            .expect("identity is a valid coregionalization matrix")
    }

    pub fn coregionalization(&self) -> &[DMatrix<f64>] {
        &self.coregionalization
    }

    pub fn scalars(&self) -> &[Matern52Params] {
        &self.scalars
    }

    #[inline]
    fn eval_unchecked(&self, x: &DVector<f64>, x2: &DVector<f64>) -> DMatrix<f64> {
        let r = distance(x, x2);
        let d = self.output_dim();
        let mut out = DMatrix::zeros(d, d);
        for (u, p) in self.coregionalization.iter().zip(&self.scalars) {
            let kv = p.at_distance(r);
            for b in 0..d {
                for a in 0..d {
                    out[(a, b)] += kv * u[(a, b)];
                }
            }
        }
        out
    }
}

impl MultiOutputKernel for LmcKernel {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.coregionalization[0].nrows()
    }

    fn eval(&self, x: &DVector<f64>, x2: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.input_dim, x.len(), "kernel input")?;
        check_dim(self.input_dim, x2.len(), "kernel input")?;
        Ok(self.eval_unchecked(x, x2))
    }

    fn gram(&self, xs: &[DVector<f64>], ys: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        check_inputs(self.input_dim, xs)?;
        check_inputs(self.input_dim, ys)?;
        let d = self.output_dim();
        let mut k = DMatrix::zeros(xs.len() * d, ys.len() * d);
        for (j, y) in ys.iter().enumerate() {
            for (i, x) in xs.iter().enumerate() {
                let r = distance(x, y);
                for (u, p) in self.coregionalization.iter().zip(&self.scalars) {
                    let kv = p.at_distance(r);
                    for b in 0..d {
                        for a in 0..d {
                            k[(i * d + a, j * d + b)] += kv * u[(a, b)];
                        }
                    }
                }
            }
        }
        Ok(k)
    }

    fn gram_self(&self, xs: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        check_inputs(self.input_dim, xs)?;
        let d = self.output_dim();
        let n = xs.len() * d;
        let mut k = DMatrix::zeros(n, n);
        for j in 0..xs.len() {
            for i in 0..=j {
                let r = distance(&xs[i], &xs[j]);
                for (u, p) in self.coregionalization.iter().zip(&self.scalars) {
                    let kv = p.at_distance(r);
                    for b in 0..d {
                        for a in 0..d {
                            k[(i * d + a, j * d + b)] += kv * u[(a, b)];
                        }
                    }
                }
            }
        }
        mirror_upper(&mut k);
        Ok(k)
    }

    fn spec(&self) -> KernelSpec {
        KernelSpec::Lmc {
            lengthscales: self.scalars.iter().map(|p| p.lengthscale).collect(),
            variances: self.scalars.iter().map(|p| p.variance).collect(),
            coregionalization: self.coregionalization.iter().map(to_rows).collect(),
        }
    }
}

impl LmcKernel {
    pub fn from_spec(input_dim: usize, spec: &KernelSpec) -> Result<Self> {
        match spec {
            KernelSpec::Lmc {
                lengthscales,
                variances,
                coregionalization,
            } => {
                check_dim(lengthscales.len(), variances.len(), "LMC variances")?;
                let scalars = lengthscales
                    .iter()
                    .zip(variances)
                    .map(|(&l, &v)| Matern52Params::new(v, l))
                    .collect::<Result<Vec<_>>>()?;
                let mats = coregionalization
                    .iter()
                    .map(|m| from_rows(m, "coregionalization row"))
                    .collect::<Result<Vec<_>>>()?;
                Self::new(input_dim, mats, scalars)
            }
            other => Err(Error::InvalidModel(format!(
                "expected an lmc kernel, found {other:?}"
            ))),
        }
    }
}

/// The GMR-based kernel `Σ_ℓ h_ℓ(x) h_ℓ(x') Σ̂_ℓ k_ℓ(x, x')` with unit-variance
/// Matérn-5/2 component kernels.
#[derive(Clone, Debug)]
pub struct GmrKernel {
    gmm: Arc<GmmModel>,
    lengthscales: Vec<f64>,
    conditional_covs: Vec<DMatrix<f64>>,
}

impl GmrKernel {
    pub fn new(gmm: Arc<GmmModel>, lengthscales: Vec<f64>) -> Result<Self> {
        check_dim(gmm.num_components(), lengthscales.len(), "component lengthscales")?;
        for &l in &lengthscales {
            check_positive("lengthscale", l)?;
        }
        let conditional_covs = (0..gmm.num_components())
            .map(|l| gmm.cache(l).conditional_cov.clone())
            .collect();
        Ok(Self {
            gmm,
            lengthscales,
            conditional_covs,
        })
    }

    pub fn gmm(&self) -> &Arc<GmmModel> {
        &self.gmm
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn conditional_covs(&self) -> &[DMatrix<f64>] {
        &self.conditional_covs
    }

    /// Component kernel `k_ℓ`; its variance is always 1.
    pub fn component_params(&self, l: usize) -> Matern52Params {
        Matern52Params {
            variance: 1.0,
            lengthscale: self.lengthscales[l],
        }
    }

    pub fn with_lengthscale(&self, l: usize, value: f64) -> Result<Self> {
        if l >= self.lengthscales.len() {
            return Err(Error::IndexOutOfRange {
                index: l,
                len: self.lengthscales.len(),
            });
        }
        check_positive("lengthscale", value)?;
        let mut out = self.clone();
        out.lengthscales[l] = value;
        Ok(out)
    }

    pub fn with_lengthscales(&self, lengthscales: Vec<f64>) -> Result<Self> {
        Self::new(self.gmm.clone(), lengthscales)
    }

    fn weights(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        let h = self.gmm.responsibilities(x)?;
        if h.underflow {
            log::debug!("kernel responsibilities fell back to the nearest component at {x:?}");
        }
        Ok(h.values)
    }

    fn weights_all(&self, xs: &[DVector<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.iter()
            .enumerate()
            .map(|(i, x)| self.weights(x).map_err(|e| e.at(i)))
            .collect()
    }

    #[inline]
    fn block_into(
        &self,
        hx: &[f64],
        hy: &[f64],
        r: f64,
        k: &mut DMatrix<f64>,
        row: usize,
        col: usize,
    ) {
        let d = self.output_dim();
        for (l, cov) in self.conditional_covs.iter().enumerate() {
            let w = hx[l] * hy[l];
            if w == 0.0 {
                continue;
            }
            let w = w * self.component_params(l).at_distance(r);
            for b in 0..d {
                for a in 0..d {
                    k[(row + a, col + b)] += w * cov[(a, b)];
                }
            }
        }
    }
}

impl MultiOutputKernel for GmrKernel {
    fn input_dim(&self) -> usize {
        self.gmm.input_dim()
    }

    fn output_dim(&self) -> usize {
        self.gmm.output_dim()
    }

    fn eval(&self, x: &DVector<f64>, x2: &DVector<f64>) -> Result<DMatrix<f64>> {
        let hx = self.weights(x)?;
        let hy = self.weights(x2)?;
        let d = self.output_dim();
        let mut k = DMatrix::zeros(d, d);
        self.block_into(&hx, &hy, distance(x, x2), &mut k, 0, 0);
        Ok(k)
    }

    fn gram(&self, xs: &[DVector<f64>], ys: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        let hx = self.weights_all(xs)?;
        let hy = self.weights_all(ys)?;
        let d = self.output_dim();
        let mut k = DMatrix::zeros(xs.len() * d, ys.len() * d);
        for j in 0..ys.len() {
            for i in 0..xs.len() {
                self.block_into(&hx[i], &hy[j], distance(&xs[i], &ys[j]), &mut k, i * d, j * d);
            }
        }
        Ok(k)
    }

    fn gram_self(&self, xs: &[DVector<f64>]) -> Result<DMatrix<f64>> {
        let h = self.weights_all(xs)?;
        let d = self.output_dim();
        let mut k = DMatrix::zeros(xs.len() * d, xs.len() * d);
        for j in 0..xs.len() {
            for i in 0..=j {
                self.block_into(&h[i], &h[j], distance(&xs[i], &xs[j]), &mut k, i * d, j * d);
            }
        }
        mirror_upper(&mut k);
        Ok(k)
    }

    fn spec(&self) -> KernelSpec {
        KernelSpec::Gmr {
            lengthscales: self.lengthscales.clone(),
            variances: vec![1.0; self.lengthscales.len()],
        }
    }
}

impl GmrKernel {
    pub fn from_spec(gmm: Arc<GmmModel>, spec: &KernelSpec) -> Result<Self> {
        match spec {
            KernelSpec::Gmr {
                lengthscales,
                variances,
            } => {
                if variances.iter().any(|&v| v != 1.0) {
                    return Err(Error::InvalidModel(
                        "GMR kernel component variances are fixed to 1".into(),
                    ));
                }
                Self::new(gmm, lengthscales.clone())
            }
            other => Err(Error::InvalidModel(format!(
                "expected a gmr kernel, found {other:?}"
            ))),
        }
    }
}
