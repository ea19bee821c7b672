//! Small dense linear-algebra helpers shared by the model modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative jitter levels tried (after a plain attempt) when a symmetric
/// matrix fails to factorize. Each is multiplied by `trace / n`.
pub const JITTER_LADDER: [f64; 3] = [1e-8, 1e-7, 1e-6];

/// Replaces `m` by `(m + mᵀ) / 2`, which makes it exactly symmetric.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn reconstruct(eig: &SymmetricEigen<f64, Dyn>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let q = &eig.eigenvectors;
    let d = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| f(l)));
    let mut out = q * DMatrix::from_diagonal(&d) * q.transpose();
    symmetrize(&mut out);
    out
}

/// Symmetrizes, clips negative eigenvalues to zero and adds `ridge · I`.
pub fn psd_repair(m: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    let mut out = reconstruct(&eig, |l| l.max(0.0));
    for i in 0..out.nrows() {
        out[(i, i)] += ridge;
    }
    out
}

/// Symmetric square root `S` with `S S = m`, negative eigenvalues clipped at 0.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    reconstruct(&eig, |l| l.max(0.0).sqrt())
}

/// Inverse of a symmetric positive-definite matrix after flooring its
/// eigenvalues at `floor`.
pub fn floored_inverse(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = SymmetricEigen::new(s);
    reconstruct(&eig, |l| 1.0 / l.max(floor))
}

pub fn eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s).eigenvalues
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).min()
}

/// A Cholesky factor together with the diagonal jitter that was needed.
#[derive(Clone, Debug)]
pub struct JitteredCholesky {
    pub factor: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn log_det(&self) -> f64 {
        let l = self.factor.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.factor.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }

    /// Computes `L⁻¹ b` with the lower-triangular factor.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let l = self.factor.l_dirty();
        let mut out = b.clone();
        // The upper triangle of `l_dirty` holds garbage; the triangular solver
        // only reads the lower half.
        l.solve_lower_triangular_mut(&mut out);
        out
    }
}

/// Cholesky factorization with bounded jitter escalation.
///
/// Tries the matrix as given, then with `c · trace/n · I` for each `c` in
/// [`JITTER_LADDER`]. Fails with [`Error::FactorizationFailure`] after the
/// last rung.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<JitteredCholesky> {
    let n = m.nrows();
    if n == 0 {
        return Err(Error::FactorizationFailure { size: 0, jitter: 0.0 });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::FactorizationFailure { size: n, jitter: 0.0 });
    }
    if let Some(factor) = Cholesky::new(m.clone()) {
        return Ok(JitteredCholesky { factor, jitter: 0.0 });
    }
    let mean_diag = m.trace() / n as f64;
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let mut last = 0.0;
    for rel in JITTER_LADDER {
        let jitter = rel * scale;
        last = jitter;
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += jitter;
        }
        if let Some(factor) = Cholesky::new(a) {
            log::debug!("cholesky of size {n} needed jitter {jitter:e}");
            return Ok(JitteredCholesky { factor, jitter });
        }
    }
    Err(Error::FactorizationFailure { size: n, jitter: last })
}

/// Euclidean norm computed with scaling so that huge entries do not overflow.
pub fn stable_norm(v: &DVector<f64>) -> f64 {
    let amax = v.amax();
    if amax == 0.0 || !amax.is_finite() {
        return amax;
    }
    amax * (v / amax).norm()
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>], context: &'static str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    for r in rows {
        crate::error::check_dim(ncols, r.len(), context)?;
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Row-major flattening, the layout used by every CSV export.
pub fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}
