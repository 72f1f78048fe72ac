//! Sure independence screening and its iterative variant.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{lasso_bic, ols_fit, rank_descending, ridge, GramProblem};

/// Marginal association ranking `omega = X'y / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SisRanking {
    pub omega: Array1<f64>,
    /// Column indices by `|omega|` descending, ties by ascending index.
    pub order: Vec<usize>,
    pub submodel_size: usize,
}

impl SisRanking {
    /// The leading `submodel_size` indices.
    pub fn submodel(&self) -> &[usize] {
        &self.order[..self.submodel_size]
    }
}

/// Ranks the columns of a standardized `x` by marginal correlation with a
/// centered `y` and keeps the top `floor(fraction * n)` (at least one).
pub fn sis_rank(x: ArrayView2<f64>, y: ArrayView1<f64>, fraction: f64) -> Result<SisRanking> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("X has {n} rows, y has {}", y.len())));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!("screening fraction must lie in (0, 1], got {fraction}")));
    }
    let omega = x.t().dot(&y) / n as f64;
    let order = rank_descending(&omega.mapv(f64::abs).to_vec());
    let submodel_size = ((fraction * n as f64).floor() as usize).max(1).min(p).min(n);
    Ok(SisRanking { omega, order, submodel_size })
}

/// Settings for [`isis`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsisOptions {
    /// Stop once this many variables are selected.
    pub target_size: usize,
    /// Variables kept by each correlation screen.
    pub screen_size: usize,
    pub max_iter: usize,
    /// Length of the inner lasso path.
    pub path_len: usize,
    /// Smallest path penalty as a fraction of the largest.
    pub path_ratio: f64,
}

impl IsisOptions {
    /// `floor(n / ln n)` for both the screen and the target size.
    pub fn for_rows(n: usize) -> Self {
        let size = default_size(n);
        Self { target_size: size, screen_size: size, max_iter: 5, path_len: 50, path_ratio: 1e-3 }
    }
}

/// `floor(n / ln n)`, at least 1.
pub fn default_size(n: usize) -> usize {
    if n < 3 {
        return 1;
    }
    ((n as f64 / (n as f64).ln()).floor() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsisResult {
    /// Union of the per-iteration sets, in order of selection.
    pub selected: Vec<usize>,
    pub iterations: usize,
    pub per_iteration_sets: Vec<Vec<usize>>,
}

/// Iterated screening: screen the unselected columns against the current
/// residual, pick variables with a BIC-tuned lasso on the screened columns,
/// refit least squares on everything selected so far, repeat.
pub fn isis(x: ArrayView2<f64>, y: ArrayView1<f64>, opts: &IsisOptions) -> Result<IsisResult> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!("X has {n} rows, y has {}", y.len())));
    }
    if opts.target_size == 0 || opts.target_size >= n {
        return Err(Error::InvalidInput(format!("target size must satisfy 0 < target < n = {n}, got {}", opts.target_size)));
    }
    if opts.screen_size == 0 {
        return Err(Error::InvalidInput("screen size must be positive".into()));
    }

    let mut selected: Vec<usize> = Vec::new();
    let mut in_model = vec![false; p];
    let mut sets = Vec::new();
    let mut residual = y.to_owned();
    let mut iterations = 0;

    while iterations < opts.max_iter && selected.len() < opts.target_size {
        iterations += 1;
        let remaining: Vec<usize> = (0..p).filter(|&j| !in_model[j]).collect();
        if remaining.is_empty() {
            break;
        }
        let scores: Vec<f64> = remaining.iter().map(|&j| x.column(j).dot(&residual).abs()).collect();
        let screened: Vec<usize> = rank_descending(&scores).into_iter().take(opts.screen_size).map(|k| remaining[k]).collect();

        let xs = x.select(Axis(1), &screened);
        let problem = GramProblem::new(xs.view(), residual.view())?;
        let inner = lasso_bic(&problem, None, opts.path_len, opts.path_ratio)?;
        let strength: Vec<f64> = inner.coef.values.iter().map(|b| b.abs()).collect();
        let room = opts.target_size - selected.len();
        // Strongest first, so a size cap keeps the largest coefficients.
        let new_set: Vec<usize> = rank_descending(&strength)
            .into_iter()
            .filter(|&k| strength[k] > inner.coef.zero_tol)
            .take(room)
            .map(|k| screened[k])
            .collect();
        if new_set.is_empty() {
            break;
        }
        for &j in &new_set {
            in_model[j] = true;
        }
        selected.extend(&new_set);
        sets.push(new_set);

        let xsel = x.select(Axis(1), &selected);
        residual = match ols_fit(xsel.view(), y) {
            Ok(fit) => fit.residuals,
            // Collinear selections fall back to a barely regularized fit.
            Err(Error::RankDeficient) => {
                let b = ridge(xsel.view(), y, 1e-8 * n as f64)?;
                &y - &xsel.dot(&b.values)
            }
            Err(e) => return Err(e),
        };
    }
    Ok(IsisResult { selected, iterations, per_iteration_sets: sets })
}
