use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::NumericsError;

/// Relative asymmetry tolerated before a matrix is rejected as non-symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Eigenvalue floor for log-determinants, relative to the trace.
pub const LOGDET_FLOOR: f64 = 1e-12;
/// Negative eigenvalues below `-NEG_EIG_TOL * trace` signal an invalid covariance.
pub const NEG_EIG_TOL: f64 = 1e-8;

/// A symmetric positive semi-definite matrix together with the ridge that
/// was added to its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdMatrix {
    matrix: DMatrix<f64>,
    eps: f64,
}

impl PsdMatrix {
    /// Wraps a square matrix after checking symmetry.
    pub fn new(matrix: DMatrix<f64>, eps: f64) -> Result<Self, NumericsError> {
        check_symmetric(&matrix)?;
        Ok(Self { matrix, eps })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }
}

pub(crate) fn check_finite(x: &DMatrix<f64>) -> Result<(), NumericsError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite)
    }
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::DimensionMismatch(format!(
            "{}x{} matrix is not square",
            m.nrows(),
            m.ncols()
        )));
    }
    check_finite(m)?;
    let scale = m.amax().max(1.0);
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if worst > SYMMETRY_TOL * scale {
        return Err(NumericsError::NotSymmetric(worst));
    }
    Ok(())
}

/// Copies the lower triangle onto the upper one.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Column means of `x`.
pub fn column_means(x: &DMatrix<f64>) -> DVector<f64> {
    let n = x.nrows().max(1) as f64;
    DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.sum() / n))
}

/// `x` with its column means removed.
pub fn center_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mu = column_means(x);
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mu[j]);
    }
    out
}

/// Sample covariance (divisor `n`) of `x` plus `eps * I`.
pub fn reg_covariance(x: &DMatrix<f64>, eps: f64) -> Result<PsdMatrix, NumericsError> {
    if x.nrows() == 0 {
        return Err(NumericsError::TooFewSamples { needed: 1, got: 0 });
    }
    if !(eps >= 0.0) {
        return Err(NumericsError::InvalidInput(format!("negative ridge {eps}")));
    }
    check_finite(x)?;
    let xc = center_columns(x);
    let mut cov = xc.tr_mul(&xc) / x.nrows() as f64;
    symmetrize(&mut cov);
    for i in 0..cov.nrows() {
        cov[(i, i)] += eps;
    }
    Ok(PsdMatrix { matrix: cov, eps })
}

/// Log-determinant of a PSD matrix through its eigenvalues, each clamped to
/// at least `1e-12 * trace`.
pub fn logdet_psd(m: &PsdMatrix) -> Result<f64, NumericsError> {
    check_symmetric(&m.matrix)?;
    let trace = m.matrix.trace();
    let floor = (LOGDET_FLOOR * trace.abs()).max(f64::MIN_POSITIVE);
    let eig = SymmetricEigen::new(m.matrix.clone());
    Ok(eig.eigenvalues.iter().map(|&l| l.max(floor).ln()).sum())
}

/// Log-determinant of a symmetric positive-definite matrix by Cholesky.
/// Returns `None` when the factorization fails.
pub fn logdet_cholesky(m: DMatrix<f64>) -> Option<f64> {
    let chol = m.cholesky()?;
    Some(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

fn checked_eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>, NumericsError> {
    let trace = m.trace();
    let eig = SymmetricEigen::new(m);
    let tol = NEG_EIG_TOL * trace.abs();
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| l < -tol) {
        return Err(NumericsError::NegativeEigenvalue { value: bad, trace });
    }
    Ok(eig)
}

/// Principal square root of a PSD matrix; tiny negative eigenvalues are clamped to 0.
pub fn sqrtm_psd(m: &PsdMatrix) -> Result<DMatrix<f64>, NumericsError> {
    let eig = checked_eigen(m.matrix.clone())?;
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&roots) * v.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// `tr((A B)^{1/2})`, evaluated as `tr((A^{1/2} B A^{1/2})^{1/2})`.
pub fn sqrtm_psd_product(a: &PsdMatrix, b: &PsdMatrix) -> Result<f64, NumericsError> {
    if a.dim() != b.dim() {
        return Err(NumericsError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.dim(),
            a.dim(),
            b.dim(),
            b.dim()
        )));
    }
    check_symmetric(&a.matrix)?;
    check_symmetric(&b.matrix)?;
    let a_half = sqrtm_psd(a)?;
    let mut inner = &a_half * &b.matrix * &a_half;
    symmetrize(&mut inner);
    let eig = checked_eigen(inner)?;
    Ok(eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum())
}

/// Projects `x` onto the leading principal components that together retain
/// at least `energy` of the total variance. Columns are centered first.
pub fn pca_project(x: &DMatrix<f64>, energy: f64) -> Result<DMatrix<f64>, NumericsError> {
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(NumericsError::InvalidInput(format!(
            "retained energy must lie in (0, 1], got {energy}"
        )));
    }
    check_finite(x)?;
    let xc = center_columns(x);
    let (n, d) = xc.shape();
    let use_gram = n < d;
    let mut second = if use_gram { &xc * xc.transpose() } else { xc.tr_mul(&xc) };
    symmetrize(&mut second);
    let eig = SymmetricEigen::new(second);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    if total <= 0.0 {
        // No variance at all: a single zero component.
        return Ok(DMatrix::zeros(n, 1));
    }
    let mut kept = 0;
    let mut acc = 0.0;
    for &i in &order {
        kept += 1;
        acc += eig.eigenvalues[i].max(0.0);
        if acc >= energy * total - 1e-12 * total {
            break;
        }
    }
    let cols = &order[..kept];
    if use_gram {
        // Scores are U * sqrt(lambda) for the Gram eigenpairs.
        Ok(DMatrix::from_fn(n, kept, |i, k| {
            let c = cols[k];
            eig.eigenvectors[(i, c)] * eig.eigenvalues[c].max(0.0).sqrt()
        }))
    } else {
        let basis = DMatrix::from_fn(d, kept, |j, k| eig.eigenvectors[(j, cols[k])]);
        Ok(xc * basis)
    }
}
