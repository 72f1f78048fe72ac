//! Dense regression primitives shared by the selection and estimation layers.
//!
//! Everything here works on column-standardized designs with centered
//! responses unless stated otherwise, so no intercept is fitted.

mod lasso;
mod logistic;
mod ridge_cv;

pub use lasso::{lambda_grid, lasso, lasso_bic, lasso_gram, CdOptions, GramProblem, LassoBic, LassoSolution};
pub use logistic::{logistic_fit, sigmoid, LogisticFit};
pub use ridge_cv::{ridge_cv, ridge_cv_augmented, ridge_init, RidgeCvChoice, RidgeCvOptions, RidgeInit};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::Diag;
use ndarray_linalg::{Cholesky, SolveTriangular, UPLO};

use crate::error::{Error, Result};

/// Default threshold below which a coefficient counts as zero.
pub const ZERO_TOL: f64 = 1e-8;

/// Cholesky pivots smaller than this fraction of the matching diagonal entry
/// are treated as numerical rank loss.
const PIVOT_TOL: f64 = 1e-11;

/// A covariate matrix together with the moments used to standardize it.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
    column_means: Array1<f64>,
    column_sds: Array1<f64>,
    standardized: bool,
}

impl DataMatrix {
    /// Wraps a matrix without transforming it.
    pub fn raw(values: Array2<f64>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::TooFewRows { rows: values.nrows(), required: 2 });
        }
        let p = values.ncols();
        Ok(Self { values, column_means: Array1::zeros(p), column_sds: Array1::ones(p), standardized: false })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_means(&self) -> &Array1<f64> {
        &self.column_means
    }

    pub fn column_sds(&self) -> &Array1<f64> {
        &self.column_sds
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Copies the listed columns, in order, into a new matrix.
    pub fn select_columns(&self, idx: &[usize]) -> Array2<f64> {
        self.values.select(Axis(1), idx)
    }

    /// Maps coefficients fitted on the standardized scale back to the raw
    /// covariate scale.
    pub fn unscale_coefficients(&self, coef: &Array1<f64>) -> Array1<f64> {
        coef / &self.column_sds
    }
}

/// Centers every column and scales it by its sample standard deviation
/// (divisor `n - 1`).
pub fn standardize(m: Array2<f64>) -> Result<DataMatrix> {
    let n = m.nrows();
    if n < 2 {
        return Err(Error::TooFewRows { rows: n, required: 2 });
    }
    let mut values = m;
    let p = values.ncols();
    let mut means = Array1::zeros(p);
    let mut sds = Array1::zeros(p);
    for (j, mut col) in values.axis_iter_mut(Axis(1)).enumerate() {
        let mean = col.sum() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        if !(sd > f64::EPSILON * (1.0 + mean.abs())) {
            return Err(Error::ConstantColumn { column: j });
        }
        col.mapv_inplace(|v| (v - mean) / sd);
        means[j] = mean;
        sds[j] = sd;
    }
    Ok(DataMatrix { values, column_means: means, column_sds: sds, standardized: true })
}

/// Returns `v - mean(v)`.
pub fn center(v: ArrayView1<f64>) -> Array1<f64> {
    let mean = v.mean().unwrap_or(0.0);
    v.mapv(|x| x - mean)
}

/// A coefficient vector with the tolerance used to read off its support.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefVector {
    pub values: Array1<f64>,
    pub zero_tol: f64,
}

impl CoefVector {
    pub fn new(values: Array1<f64>) -> Self {
        Self { values, zero_tol: ZERO_TOL }
    }

    pub fn zeros(p: usize) -> Self {
        Self::new(Array1::zeros(p))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn support(&self) -> Vec<usize> {
        support_of(self.values.view(), self.zero_tol)
    }

    pub fn l0(&self) -> usize {
        self.values.iter().filter(|v| v.abs() > self.zero_tol).count()
    }

    pub fn l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// Zeroes every entry at or below the tolerance.
    pub fn thresholded(&self) -> Self {
        let tol = self.zero_tol;
        Self { values: self.values.mapv(|v| if v.abs() > tol { v } else { 0.0 }), zero_tol: tol }
    }
}

pub fn support_of(v: ArrayView1<f64>, tol: f64) -> Vec<usize> {
    v.iter().enumerate().filter(|(_, x)| x.abs() > tol).map(|(i, _)| i).collect()
}

/// `sign(z) * max(|z| - t, 0)`.
#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: Array2<f64>,
}

impl CholeskyFactor {
    /// Factors `a`; fails with [`Error::RankDeficient`] when a pivot collapses.
    pub fn new(a: &Array2<f64>) -> Result<Self> {
        let lower = a.cholesky(UPLO::Lower).map_err(|_| Error::RankDeficient)?;
        for j in 0..a.nrows() {
            let pivot = lower[[j, j]] * lower[[j, j]];
            if !(pivot > PIVOT_TOL * a[[j, j]].abs().max(f64::MIN_POSITIVE)) {
                return Err(Error::RankDeficient);
            }
        }
        Ok(Self { lower })
    }

    pub fn solve(&self, b: &Array1<f64>) -> Result<Array1<f64>> {
        let z = self.lower.solve_triangular(UPLO::Lower, Diag::NonUnit, b)?;
        Ok(self.lower.t().solve_triangular(UPLO::Upper, Diag::NonUnit, &z)?)
    }

    /// Diagonal of the inverse of the factored matrix.
    pub fn inverse_diagonal(&self) -> Result<Array1<f64>> {
        let k = self.lower.nrows();
        let eye = Array2::<f64>::eye(k);
        let linv = self.lower.solve_triangular(UPLO::Lower, Diag::NonUnit, &eye)?;
        Ok(linv.map_axis(Axis(0), |col| col.dot(&col)))
    }
}

/// Ordinary least squares fit with the pieces needed for classical inference.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coef: Array1<f64>,
    pub residuals: Array1<f64>,
    pub rss: f64,
    /// Diagonal of `(X'X)^{-1}`.
    pub xtx_inv_diag: Array1<f64>,
    pub df_resid: usize,
}

impl OlsFit {
    /// Classical standard errors `sqrt(s^2 (X'X)^{-1}_jj)`.
    pub fn std_errors(&self) -> Array1<f64> {
        let s2 = if self.df_resid > 0 { self.rss / self.df_resid as f64 } else { f64::NAN };
        self.xtx_inv_diag.mapv(|v| (s2 * v).sqrt())
    }
}

pub fn ols_fit(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<OlsFit> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("X has {n} rows, y has {}", y.len())));
    }
    if p >= n {
        return Err(Error::RankDeficient);
    }
    let gram = x.t().dot(&x);
    let factor = CholeskyFactor::new(&gram)?;
    let coef = factor.solve(&x.t().dot(&y))?;
    let residuals = &y - &x.dot(&coef);
    let rss = residuals.dot(&residuals);
    let xtx_inv_diag = factor.inverse_diagonal()?;
    Ok(OlsFit { coef, residuals, rss, xtx_inv_diag, df_resid: n - p })
}

/// Least squares coefficients of `y` on the columns of `x`.
pub fn ols(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<CoefVector> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("X has {n} rows, y has {}", y.len())));
    }
    if p >= n {
        return Err(Error::RankDeficient);
    }
    let gram = x.t().dot(&x);
    let factor = CholeskyFactor::new(&gram)?;
    Ok(CoefVector::new(factor.solve(&x.t().dot(&y))?))
}

/// Solves `(X'X + lambda I) b = X'y`.
///
/// When `p > n` the equivalent dual form `b = X'(XX' + lambda I)^{-1} y` is
/// used, which only factors an `n x n` matrix.
pub fn ridge(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<CoefVector> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("X has {n} rows, y has {}", y.len())));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("ridge penalty must be finite and >= 0, got {lambda}")));
    }
    if p == 0 {
        return Ok(CoefVector::zeros(0));
    }
    if p > n && lambda > 0.0 {
        let mut kernel = x.dot(&x.t());
        kernel.diag_mut().mapv_inplace(|v| v + lambda);
        let factor = CholeskyFactor::new(&kernel).map_err(|_| Error::Singular)?;
        let dual = factor.solve(&y.to_owned())?;
        return Ok(CoefVector::new(x.t().dot(&dual)));
    }
    let mut gram = x.t().dot(&x);
    gram.diag_mut().mapv_inplace(|v| v + lambda);
    let factor = CholeskyFactor::new(&gram).map_err(|_| Error::Singular)?;
    Ok(CoefVector::new(factor.solve(&x.t().dot(&y))?))
}

/// Eigen-decomposition of a symmetric matrix via LAPACK `dsyevd`.
///
/// Returns eigenvalues in ascending order and a matrix whose columns are the
/// matching orthonormal eigenvectors.
pub fn symmetric_eigen(a: Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch("eigen-decomposition needs a square matrix".into()));
    }
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    // A symmetric row-major buffer is also its own column-major buffer.
    let mut buf = a.as_standard_layout().into_owned().into_raw_vec_and_offset().0;
    let mut w = vec![0.0f64; n];
    let dim = n as i32;
    let jobz = b'V' as std::ffi::c_char;
    let uplo = b'L' as std::ffi::c_char;
    let mut info = 0i32;
    let mut work_query = [0.0f64];
    let mut iwork_query = [0i32];
    // SAFETY: all pointers reference live buffers of the sizes LAPACK expects;
    // the first call is a workspace query.
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &dim,
            buf.as_mut_ptr(),
            &dim,
            w.as_mut_ptr(),
            work_query.as_mut_ptr(),
            &-1,
            iwork_query.as_mut_ptr(),
            &-1,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Linalg(format!("dsyevd workspace query failed: info = {info}")));
    }
    let lwork = work_query[0] as i32;
    let liwork = iwork_query[0];
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    let mut iwork = vec![0i32; liwork.max(1) as usize];
    // SAFETY: as above, with workspaces sized by the query.
    unsafe {
        lapack_sys::dsyevd_(
            &jobz,
            &uplo,
            &dim,
            buf.as_mut_ptr(),
            &dim,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Linalg(format!("dsyevd failed: info = {info}")));
    }
    // Column-major output: row j of the row-major view is eigenvector j.
    let rows = Array2::from_shape_vec((n, n), buf).expect("buffer has n*n entries");
    Ok((Array1::from(w), rows.reversed_axes().as_standard_layout().into_owned()))
}

/// `[lead | x]` as a new matrix.
pub fn prepend_column(lead: ArrayView1<f64>, x: ArrayView2<f64>) -> Array2<f64> {
    let (n, p) = x.dim();
    let mut out = Array2::zeros((n, p + 1));
    out.column_mut(0).assign(&lead);
    out.slice_mut(s![.., 1..]).assign(&x);
    out
}

/// `[1 | x]` as a new matrix.
pub fn with_intercept(x: ArrayView2<f64>) -> Array2<f64> {
    prepend_column(Array1::ones(x.nrows()).view(), x)
}

/// Indices sorted by `score` descending, ties broken by ascending index.
pub fn rank_descending(score: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..score.len()).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    order
}

/// Median with the even-count convention of averaging the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
