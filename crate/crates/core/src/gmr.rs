//! Gaussian mixture regression: the conditional distribution of the outputs
//! given an input under a joint [`GmmModel`].

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::gmm::{GmmModel, Responsibilities};
use crate::linalg::{psd_repair, row_major};

/// Ridge added by the PSD repair of the mixture covariance.
pub const GMR_COV_RIDGE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct GmrPrediction {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub responsibilities: Vec<f64>,
    /// True when the responsibilities came from the nearest-component fallback.
    pub underflow: bool,
}

/// Conditional mean `ŷ_ℓ(x)` and covariance `Σ̂_ℓ` of component `l`.
pub fn component_conditional(
    model: &GmmModel,
    l: usize,
    x: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if l >= model.num_components() {
        return Err(Error::IndexOutOfRange {
            index: l,
            len: model.num_components(),
        });
    }
    check_dim(model.input_dim(), x.len(), "input vector")?;
    Ok((
        conditional_mean(model, l, x),
        model.cache(l).conditional_cov.clone(),
    ))
}

fn conditional_mean(model: &GmmModel, l: usize, x: &DVector<f64>) -> DVector<f64> {
    let dx = x - model.input_mean(l);
    model.output_mean(l) + &model.cache(l).regression * dx
}

fn conditional_means(model: &GmmModel, x: &DVector<f64>) -> Vec<DVector<f64>> {
    (0..model.num_components())
        .map(|l| conditional_mean(model, l, x))
        .collect()
}

fn mix(h: &[f64], means: &[DVector<f64>]) -> DVector<f64> {
    let mut out = DVector::zeros(means[0].len());
    for (w, m) in h.iter().zip(means) {
        out.axpy(*w, m, 1.0);
    }
    out
}

/// The GMR mean `Σ_ℓ h_ℓ(x) ŷ_ℓ(x)`. Both [`gmr_predict`] and the GMR-based
/// GP prior mean go through this function.
pub fn gmr_mean(model: &GmmModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    let h = model.responsibilities(x)?;
    Ok(mix(&h.values, &conditional_means(model, x)))
}

fn predict_with(model: &GmmModel, x: &DVector<f64>, h: Responsibilities) -> GmrPrediction {
    let means = conditional_means(model, x);
    let mean = mix(&h.values, &means);
    let d = model.output_dim();
    // Law of total covariance in centered form; equal to the raw
    // second-moment expression but without its cancellation.
    let mut cov = DMatrix::zeros(d, d);
    for (l, (w, m)) in h.values.iter().zip(&means).enumerate() {
        if *w == 0.0 {
            continue;
        }
        let r = m - &mean;
        cov += &model.cache(l).conditional_cov * *w;
        cov.ger(*w, &r, &r, 1.0);
    }
    GmrPrediction {
        mean,
        covariance: psd_repair(&cov, GMR_COV_RIDGE),
        responsibilities: h.values,
        underflow: h.underflow,
    }
}

pub fn gmr_predict(model: &GmmModel, x: &DVector<f64>) -> Result<GmrPrediction> {
    let h = model.responsibilities(x)?;
    Ok(predict_with(model, x, h))
}

/// Element-wise [`gmr_predict`]; errors carry the index of the failing input.
pub fn gmr_predict_batch(model: &GmmModel, xs: &[DVector<f64>]) -> Result<Vec<GmrPrediction>> {
    xs.iter()
        .enumerate()
        .map(|(i, x)| gmr_predict(model, x).map_err(|e| e.at(i)))
        .collect()
}

/// One row per query: `x…, mean…, cov_i_j…` (covariance row-major).
pub fn write_gmr_csv<W: Write>(
    out: W,
    xs: &[DVector<f64>],
    preds: &[GmrPrediction],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let (din, d) = match (xs.first(), preds.first()) {
        (Some(x), Some(p)) => (x.len(), p.mean.len()),
        _ => {
            w.flush()?;
            return Ok(());
        }
    };
    let mut header: Vec<String> = (0..din).map(|i| format!("x{i}")).collect();
    header.extend((0..d).map(|i| format!("mean{i}")));
    for i in 0..d {
        header.extend((0..d).map(|j| format!("cov{i}_{j}")));
    }
    w.write_record(&header)?;
    for (x, p) in xs.iter().zip(preds) {
        let row: Vec<String> = x
            .iter()
            .chain(p.mean.iter())
            .copied()
            .chain(row_major(&p.covariance))
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
