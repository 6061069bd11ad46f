//! Small dense least-squares helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Minimizes `‖diag(√w)(a β − b)‖²` through a QR factorization of the
/// weighted design. The caller is responsible for the rank check.
pub(crate) fn weighted_least_squares(a: &DMatrix<f64>, b: &DVector<f64>, w: &[f64]) -> Result<DVector<f64>> {
    let mut aw = a.clone();
    let mut bw = b.clone();
    for (i, wi) in w.iter().enumerate() {
        let s = wi.sqrt();
        aw.row_mut(i).scale_mut(s);
        bw[i] *= s;
    }
    let qr = aw.qr();
    let qtb = qr.q().transpose() * bw;
    qr.r()
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::RankDeficient("singular triangular factor".into()))
}

/// Ordinary least squares with textbook standard errors.
#[derive(Debug, Clone)]
pub(crate) struct OlsFit {
    pub beta: DVector<f64>,
    pub std_errors: DVector<f64>,
    pub rss: f64,
    pub df: usize,
}

pub(crate) fn ols(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<OlsFit> {
    let (n, p) = a.shape();
    if n <= p {
        return Err(Error::InsufficientGroups {
            groups: n,
            df: n as i64 - p as i64,
        });
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let max_diag = r.diagonal().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if r.diagonal().iter().any(|v| !(v.abs() > max_diag * 1e-12)) {
        return Err(Error::RankDeficient("design columns are collinear".into()));
    }
    let qtb = qr.q().transpose() * b;
    let beta = r
        .solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::RankDeficient("singular triangular factor".into()))?;
    let resid = b - a * &beta;
    let rss = resid.norm_squared();
    let df = n - p;
    let s2 = rss / df as f64;
    // (AᵀA)⁻¹ = R⁻¹ R⁻ᵀ
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::RankDeficient("singular triangular factor".into()))?;
    let cov_diag = DVector::from_iterator(p, (0..p).map(|i| r_inv.row(i).norm_squared()));
    let std_errors = cov_diag.map(|v| (s2 * v).sqrt());
    Ok(OlsFit { beta, std_errors, rss, df })
}
