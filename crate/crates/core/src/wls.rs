//! Small dense weighted least squares via QR orthogonalization.
//!
//! Rows are scaled by sqrt(w) and the resulting ordinary least-squares
//! problem is solved through a Householder QR factorization rather than the
//! normal equations. Designs here have at most a handful of columns, so the
//! factorization cost is negligible.

use nalgebra::{DMatrix, DVector};

/// Relative threshold on the diagonal of R below which a column is declared
/// linearly dependent.
const RANK_TOLERANCE: f64 = 1e-12;

pub struct WlsFit {
    pub coefficients: Vec<f64>,
    /// Weighted residual sum of squares, with weights as given.
    pub weighted_rss: f64,
}

pub enum WlsError {
    /// Indices of columns whose R diagonal collapsed.
    RankDeficient(Vec<usize>),
    /// Fewer rows than columns.
    Underdetermined { rows: usize, cols: usize },
}

/// Solve min_beta sum_i w_i (y_i - x_i' beta)^2.
///
/// `x` is row-major: `x[i]` is observation i's design row. All weights must
/// be positive; the caller enforces that.
pub fn solve(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<WlsFit, WlsError> {
    let n = x.len();
    let k = if n > 0 { x[0].len() } else { 0 };
    if n < k {
        return Err(WlsError::Underdetermined { rows: n, cols: k });
    }

    let mut scaled = DMatrix::<f64>::zeros(n, k);
    let mut rhs = DVector::<f64>::zeros(n);
    for i in 0..n {
        let s = w[i].sqrt();
        for j in 0..k {
            scaled[(i, j)] = s * x[i][j];
        }
        rhs[i] = s * y[i];
    }

    let qr = scaled.qr();
    let r = qr.r();
    let max_diag = (0..k).map(|j| r[(j, j)].abs()).fold(0.0_f64, f64::max);
    let bad: Vec<usize> = (0..k)
        .filter(|&j| r[(j, j)].abs() <= RANK_TOLERANCE * max_diag.max(1.0))
        .collect();
    if !bad.is_empty() {
        return Err(WlsError::RankDeficient(bad));
    }

    let qt_y = qr.q().transpose() * &rhs;
    let beta = r
        .solve_upper_triangular(&qt_y)
        .ok_or_else(|| WlsError::RankDeficient((0..k).collect()))?;

    let mut weighted_rss = 0.0;
    for i in 0..n {
        let mut fitted = 0.0;
        for j in 0..k {
            fitted += x[i][j] * beta[j];
        }
        let e = y[i] - fitted;
        weighted_rss += w[i] * e * e;
    }

    Ok(WlsFit {
        coefficients: beta.iter().copied().collect(),
        weighted_rss,
    })
}
