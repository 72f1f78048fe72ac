//! Cyclic coordinate descent for the (weighted) lasso on a precomputed Gram
//! matrix.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{soft_threshold, CoefVector};
use crate::error::{Error, Result};

/// Stopping rule for coordinate descent.
#[derive(Debug, Clone, Copy)]
pub struct CdOptions {
    /// Relative objective change that counts as converged.
    pub tol: f64,
    pub max_sweeps: usize,
    /// KKT slack, relative to `max(1, max_j |x_j'y|)`, required before stopping.
    pub kkt_tol: f64,
}

impl Default for CdOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_sweeps: 10_000, kkt_tol: 1e-9 }
    }
}

/// Sufficient statistics of a least squares problem: `X'X`, `X'y`, `y'y`.
#[derive(Debug, Clone)]
pub struct GramProblem {
    pub gram: Array2<f64>,
    pub xty: Array1<f64>,
    pub yty: f64,
    pub n: usize,
}

impl GramProblem {
    pub fn new(x: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!("X has {} rows, y has {}", x.nrows(), y.len())));
        }
        Ok(Self { gram: x.t().dot(&x), xty: x.t().dot(&y), yty: y.dot(&y), n: x.nrows() })
    }

    /// Same design, different response.
    pub fn with_response(&self, xty: Array1<f64>, yty: f64) -> Self {
        Self { gram: self.gram.clone(), xty, yty, n: self.n }
    }

    pub fn dim(&self) -> usize {
        self.xty.len()
    }

    /// Residual sum of squares at `coef`.
    pub fn rss(&self, coef: &Array1<f64>) -> f64 {
        let gb = self.gram.dot(coef);
        (self.yty - 2.0 * coef.dot(&self.xty) + coef.dot(&gb)).max(0.0)
    }
}

#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub coef: Array1<f64>,
    /// `X'(y - Xb)` at the solution.
    pub gradient: Array1<f64>,
    pub objective: f64,
    pub rss: f64,
    pub sweeps: usize,
}

struct CdState<'a> {
    problem: &'a GramProblem,
    penalties: ArrayView1<'a, f64>,
    coef: Array1<f64>,
    grad: Array1<f64>,
}

impl CdState<'_> {
    fn update(&mut self, j: usize) -> bool {
        let gjj = self.problem.gram[[j, j]];
        if gjj <= 0.0 {
            return false;
        }
        let old = self.coef[j];
        let new = soft_threshold(old + self.grad[j] / gjj, self.penalties[j] / gjj);
        let delta = new - old;
        if delta == 0.0 {
            return false;
        }
        self.coef[j] = new;
        let row = self.problem.gram.row(j);
        self.grad.scaled_add(-delta, &row);
        true
    }

    fn rss(&self) -> f64 {
        (self.problem.yty - self.coef.dot(&self.problem.xty) - self.coef.dot(&self.grad)).max(0.0)
    }

    fn objective(&self) -> f64 {
        let pen: f64 = self.coef.iter().zip(self.penalties.iter()).map(|(b, l)| l * b.abs()).sum();
        0.5 * self.rss() + pen
    }

    fn kkt_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..self.coef.len() {
            if self.problem.gram[[j, j]] <= 0.0 {
                continue;
            }
            let g = self.grad[j];
            let l = self.penalties[j];
            let v = if self.coef[j] == 0.0 { (g.abs() - l).max(0.0) } else { (g - l * self.coef[j].signum()).abs() };
            worst = worst.max(v);
        }
        worst
    }
}

fn relative_change(prev: f64, cur: f64) -> f64 {
    (prev - cur).abs() / prev.abs().max(cur.abs()).max(f64::MIN_POSITIVE)
}

/// Minimizes `1/2 ||y - Xb||^2 + sum_j penalties[j] |b_j|`.
///
/// Sweeps run in ascending index order; after each full sweep the active set
/// is cycled until it stalls, then a full sweep checks whether new
/// coordinates enter.
pub fn lasso_gram(
    problem: &GramProblem,
    penalties: ArrayView1<f64>,
    warm: Option<&Array1<f64>>,
    opts: CdOptions,
) -> Result<LassoSolution> {
    let p = problem.dim();
    if penalties.len() != p {
        return Err(Error::DimensionMismatch(format!("{} penalties for {p} coefficients", penalties.len())));
    }
    if penalties.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::InvalidInput("lasso penalties must be >= 0".into()));
    }
    let coef = match warm {
        Some(w) if w.len() == p => w.clone(),
        Some(_) => return Err(Error::DimensionMismatch("warm start has the wrong length".into())),
        None => Array1::zeros(p),
    };
    let grad = &problem.xty - &problem.gram.dot(&coef);
    let mut st = CdState { problem, penalties, coef, grad };
    let kkt_tol = opts.kkt_tol * problem.xty.iter().fold(1.0f64, |m, v| m.max(v.abs()));

    let mut obj = st.objective();
    let mut sweeps = 0usize;
    loop {
        for j in 0..p {
            st.update(j);
        }
        sweeps += 1;
        let new_obj = st.objective();
        let rel = relative_change(obj, new_obj);
        obj = new_obj;
        if rel < opts.tol && st.kkt_violation() <= kkt_tol {
            break;
        }
        if sweeps >= opts.max_sweeps {
            return Err(Error::NoConvergence { iterations: sweeps });
        }
        let active: Vec<usize> = (0..p).filter(|&j| st.coef[j] != 0.0).collect();
        while sweeps < opts.max_sweeps {
            for &j in &active {
                st.update(j);
            }
            sweeps += 1;
            let new_obj = st.objective();
            let rel = relative_change(obj, new_obj);
            obj = new_obj;
            if rel < opts.tol {
                break;
            }
        }
    }
    let rss = st.rss();
    Ok(LassoSolution { coef: st.coef, gradient: st.grad, objective: obj, rss, sweeps })
}

/// Minimizes `1/2 ||y - Xb||^2 + lambda ||b||_1`.
pub fn lasso(x: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<CoefVector> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("lasso penalty must be >= 0, got {lambda}")));
    }
    let problem = GramProblem::new(x, y)?;
    let pen = Array1::from_elem(problem.dim(), lambda);
    let sol = lasso_gram(&problem, pen.view(), None, CdOptions::default())?;
    Ok(CoefVector::new(sol.coef))
}

/// `count` log-spaced values from `max` down to `max * ratio`.
pub fn lambda_grid(max: f64, count: usize, ratio: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![max],
        _ => {
            let step = ratio.ln() / (count - 1) as f64;
            (0..count).map(|k| max * (step * k as f64).exp()).collect()
        }
    }
}

/// Lasso fit chosen by BIC along a descending penalty path.
#[derive(Debug, Clone)]
pub struct LassoBic {
    pub lambda: f64,
    pub coef: CoefVector,
    pub bic: f64,
    pub rss: f64,
    pub path: Vec<(f64, f64)>,
}

/// Fits a warm-started path of `count` penalties spanning
/// `[ratio, 1] * lambda_max` and keeps the BIC minimizer,
/// `n log(RSS/n) + df log n`. Ties favour the larger penalty.
///
/// With `weights`, coordinate `j` is penalized by `lambda * weights[j]`.
pub fn lasso_bic(problem: &GramProblem, weights: Option<&Array1<f64>>, count: usize, ratio: f64) -> Result<LassoBic> {
    let p = problem.dim();
    let n = problem.n as f64;
    let w = match weights {
        Some(w) if w.len() == p => w.clone(),
        Some(_) => return Err(Error::DimensionMismatch("weights have the wrong length".into())),
        None => Array1::ones(p),
    };
    let lambda_max =
        problem.xty.iter().zip(w.iter()).filter(|(_, wj)| **wj > 0.0).map(|(c, wj)| c.abs() / wj).fold(0.0f64, f64::max);
    let rss_floor = 1e-14 * problem.yty.max(f64::MIN_POSITIVE);
    let bic_of = |rss: f64, df: usize| n * (rss.max(rss_floor) / n).ln() + df as f64 * n.ln();

    if lambda_max <= 0.0 || p == 0 {
        let rss = problem.yty;
        return Ok(LassoBic { lambda: 0.0, coef: CoefVector::zeros(p), bic: bic_of(rss, 0), rss, path: Vec::new() });
    }

    let mut best: Option<LassoBic> = None;
    let mut warm: Option<Array1<f64>> = None;
    let mut path = Vec::with_capacity(count);
    for lambda in lambda_grid(lambda_max, count, ratio) {
        let pen = &w * lambda;
        let sol = lasso_gram(problem, pen.view(), warm.as_ref(), CdOptions::default())?;
        let df = sol.coef.iter().filter(|b| **b != 0.0).count();
        let bic = bic_of(sol.rss, df);
        path.push((lambda, bic));
        if best.as_ref().is_none_or(|b| bic < b.bic) {
            best = Some(LassoBic { lambda, coef: CoefVector::new(sol.coef.clone()), bic, rss: sol.rss, path: Vec::new() });
        }
        warm = Some(sol.coef);
    }
    let mut best = best.expect("path is non-empty");
    best.path = path;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::ols;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn instance(n: usize, p: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((n, p), || rng.sample(StandardNormal));
        let noise: Array1<f64> = Array1::from_shape_simple_fn(n, || rng.sample(StandardNormal));
        let truth = Array1::from_shape_fn(p, |j| if j % 3 == 0 { 1.5 } else { 0.0 });
        let y = x.dot(&truth) + noise;
        (x, y)
    }

    fn kkt_holds(x: &Array2<f64>, y: &Array1<f64>, b: &Array1<f64>, lambda: f64, tol: f64) -> bool {
        let g = x.t().dot(&(y - &x.dot(b)));
        g.iter().zip(b.iter()).all(
            |(gj, bj)| {
                if *bj == 0.0 {
                    gj.abs() <= lambda + tol
                } else {
                    (gj - lambda * bj.signum()).abs() <= tol
                }
            },
        )
    }

    #[test]
    fn zero_penalty_reproduces_ols() {
        let (x, y) = instance(40, 5, 3);
        let l = lasso(x.view(), y.view(), 0.0).unwrap();
        let o = ols(x.view(), y.view()).unwrap();
        assert_abs_diff_eq!(l.values, o.values, epsilon = 1e-6);
    }

    #[test]
    fn full_shrinkage_above_lambda_max() {
        let (x, y) = instance(40, 6, 4);
        let lmax = x.t().dot(&y).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let b = lasso(x.view(), y.view(), lmax).unwrap();
        assert!(b.values.iter().all(|v| *v == 0.0));
        let b = lasso(x.view(), y.view(), 2.0 * lmax).unwrap();
        assert!(b.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn kkt_conditions_at_several_penalties() {
        let (x, y) = instance(60, 12, 9);
        for lambda in [0.5, 5.0, 20.0, 60.0] {
            let b = lasso(x.view(), y.view(), lambda).unwrap();
            assert!(kkt_holds(&x, &y, &b.values, lambda, 1e-6), "lambda {lambda}");
        }
    }

    #[test]
    fn two_dimensional_grid_oracle() {
        let (x, y) = instance(25, 2, 21);
        let lambda = 4.0;
        let f = |b0: f64, b1: f64| {
            let r = &y - &(&x.column(0) * b0 + &x.column(1) * b1);
            0.5 * r.dot(&r) + lambda * (b0.abs() + b1.abs())
        };
        let b = lasso(x.view(), y.view(), lambda).unwrap();
        let h = 0.005;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in -600..=600 {
            for k in -600..=600 {
                let (b0, b1) = (i as f64 * h, k as f64 * h);
                let v = f(b0, b1);
                if v < best.0 {
                    best = (v, b0, b1);
                }
            }
        }
        assert!((b.values[0] - best.1).abs() <= h);
        assert!((b.values[1] - best.2).abs() <= h);
        assert!(f(b.values[0], b.values[1]) <= best.0 + 1e-12);
    }

    #[test]
    fn bic_path_prefers_true_support() {
        let (x, y) = instance(200, 9, 5);
        let problem = GramProblem::new(x.view(), y.view()).unwrap();
        let fit = lasso_bic(&problem, None, 50, 1e-3).unwrap();
        let support = fit.coef.support();
        assert!([0, 3, 6].iter().all(|j| support.contains(j)));
        assert!(support.len() <= 4, "{support:?}");
        assert_eq!(fit.path.len(), 50);
    }

    #[test]
    fn weighted_penalty_excludes_heavily_weighted_coordinate() {
        let (x, y) = instance(100, 3, 6);
        let problem = GramProblem::new(x.view(), y.view()).unwrap();
        let pen = Array1::from(vec![1.0, 1.0, 1e9]);
        let sol = lasso_gram(&problem, pen.view(), None, CdOptions::default()).unwrap();
        assert_eq!(sol.coef[2], 0.0);
    }

    #[test]
    fn lambda_grid_endpoints() {
        let g = lambda_grid(10.0, 5, 1e-2);
        assert_eq!(g.len(), 5);
        assert_abs_diff_eq!(g[0], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[4], 0.1, epsilon = 1e-12);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }
}
