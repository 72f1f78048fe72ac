//! Joint treatment/outcome fit with an adaptive penalty on the entrywise
//! product of the two coefficient vectors.
//!
//! The objective is
//!
//! ```text
//! 1/2 ||d - X a||^2 + 1/2 ||y - d g - X b||^2
//!     + lambda * sum_i w_i |a_i b_i| + lambda2 ||a||_1 + lambda3 ||b||_1
//! ```
//!
//! It is convex in `a` for fixed `b` and vice versa, so the solver runs exact
//! coordinate minimization block by block. Every update is a closed-form
//! soft-threshold step, hence the objective never increases, but the limit is
//! a stationary point rather than a certified global minimum.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{lambda_grid, rank_descending, ridge_init, soft_threshold, CoefVector, RidgeCvOptions};

/// Default ratio of the supplementary L1 penalties to the main penalty.
pub const SUPPLEMENTARY_RATIO: f64 = 0.01;
pub const DEFAULT_WEIGHT_CAP: f64 = 1e6;
pub const DEFAULT_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyConfig {
    pub lambda: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub adaptive_weights: Array1<f64>,
    pub weight_cap: f64,
}

impl PenaltyConfig {
    /// Weights `1 / sqrt(|a_i b_i|)` from initial estimates, capped at
    /// `weight_cap` (a zero product gets the cap).
    pub fn adaptive(alpha_init: ArrayView1<f64>, beta_init: ArrayView1<f64>, lambda: f64, weight_cap: f64) -> Self {
        let adaptive_weights = alpha_init
            .iter()
            .zip(beta_init.iter())
            .map(|(a, b)| {
                let prod = (a * b).abs();
                if prod > 0.0 {
                    (1.0 / prod.sqrt()).min(weight_cap)
                } else {
                    weight_cap
                }
            })
            .collect();
        Self {
            lambda,
            lambda2: SUPPLEMENTARY_RATIO * lambda,
            lambda3: SUPPLEMENTARY_RATIO * lambda,
            adaptive_weights,
            weight_cap,
        }
    }

    /// Same weights at another main penalty. The supplementary penalties keep
    /// their ratio to `lambda`; with `lambda = 0` they are copied unchanged.
    pub fn at_lambda(&self, lambda: f64) -> Self {
        let (l2, l3) = if self.lambda > 0.0 {
            (self.lambda2 / self.lambda * lambda, self.lambda3 / self.lambda * lambda)
        } else {
            (self.lambda2, self.lambda3)
        };
        Self { lambda, lambda2: l2, lambda3: l3, ..self.clone() }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.adaptive_weights.len() != p {
            return Err(Error::DimensionMismatch(format!("{} weights for {p} covariates", self.adaptive_weights.len())));
        }
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !ok(self.lambda) || !ok(self.lambda2) || !ok(self.lambda3) {
            return Err(Error::InvalidInput("penalties must be finite and >= 0".into()));
        }
        if !(self.weight_cap > 0.0) || self.adaptive_weights.iter().any(|w| !(*w > 0.0 && *w <= self.weight_cap)) {
            return Err(Error::InvalidInput("adaptive weights must lie in (0, weight_cap]".into()));
        }
        Ok(())
    }
}

/// Sufficient statistics of the joint problem: `X'X`, `X'd`, `X'y` and the
/// inner products of `d` and `y`.
#[derive(Debug, Clone)]
pub struct SilassoProblem {
    pub gram: Array2<f64>,
    pub xtd: Array1<f64>,
    pub xty: Array1<f64>,
    pub dd: f64,
    pub dy: f64,
    pub yy: f64,
    pub n: usize,
}

impl SilassoProblem {
    pub fn new(x: ArrayView2<f64>, d: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<Self> {
        let n = x.nrows();
        if d.len() != n || y.len() != n {
            return Err(Error::DimensionMismatch(format!("X has {n} rows, d has {}, y has {}", d.len(), y.len())));
        }
        Ok(Self { gram: x.t().dot(&x), xtd: x.t().dot(&d), xty: x.t().dot(&y), dd: d.dot(&d), dy: d.dot(&y), yy: y.dot(&y), n })
    }

    pub fn dim(&self) -> usize {
        self.xtd.len()
    }

    /// `(||d - Xa||^2, ||y - dg - Xb||^2)`.
    pub fn residual_sums(&self, alpha: &Array1<f64>, beta: &Array1<f64>, gamma: f64) -> (f64, f64) {
        let ga = self.gram.dot(alpha);
        let gb = self.gram.dot(beta);
        let rss_d = self.dd - 2.0 * alpha.dot(&self.xtd) + alpha.dot(&ga);
        let ryy = self.yy - 2.0 * gamma * self.dy + gamma * gamma * self.dd;
        let q = &self.xty - &(&self.xtd * gamma);
        let rss_y = ryy - 2.0 * beta.dot(&q) + beta.dot(&gb);
        (rss_d.max(0.0), rss_y.max(0.0))
    }

    pub fn objective(&self, alpha: &Array1<f64>, beta: &Array1<f64>, gamma: f64, config: &PenaltyConfig) -> f64 {
        let (rd, ry) = self.residual_sums(alpha, beta, gamma);
        0.5 * (rd + ry) + penalty(alpha, beta, config)
    }
}

fn penalty(alpha: &Array1<f64>, beta: &Array1<f64>, config: &PenaltyConfig) -> f64 {
    let product: f64 =
        alpha.iter().zip(beta.iter()).zip(config.adaptive_weights.iter()).map(|((a, b), w)| w * (a * b).abs()).sum();
    let l1 = |v: &Array1<f64>| v.iter().map(|t| t.abs()).sum::<f64>();
    config.lambda * product + config.lambda2 * l1(alpha) + config.lambda3 * l1(beta)
}

/// The penalized objective evaluated directly from the data.
pub fn objective(
    alpha: &Array1<f64>,
    beta: &Array1<f64>,
    gamma: f64,
    x: ArrayView2<f64>,
    d: ArrayView1<f64>,
    y: ArrayView1<f64>,
    config: &PenaltyConfig,
) -> f64 {
    let rd = &d - &x.dot(alpha);
    let ry = &y - &(&d * gamma) - x.dot(beta);
    0.5 * (rd.dot(&rd) + ry.dot(&ry)) + penalty(alpha, beta, config)
}

/// Iterate of the block coordinate descent.
///
/// Keeps the gradients `X'(d - Xa)` and `X'(y - dg - Xb)` current so each
/// coordinate update costs one Gram row when it moves and nothing otherwise.
#[derive(Debug, Clone)]
pub struct BlockState<'a> {
    problem: &'a SilassoProblem,
    config: &'a PenaltyConfig,
    alpha: Array1<f64>,
    beta: Array1<f64>,
    gamma: f64,
    grad_alpha: Array1<f64>,
    grad_beta: Array1<f64>,
}

impl<'a> BlockState<'a> {
    pub fn new(
        problem: &'a SilassoProblem,
        config: &'a PenaltyConfig,
        alpha: Array1<f64>,
        beta: Array1<f64>,
        gamma: f64,
    ) -> Result<Self> {
        let p = problem.dim();
        config.validate(p)?;
        if alpha.len() != p || beta.len() != p {
            return Err(Error::DimensionMismatch("starting coefficients have the wrong length".into()));
        }
        if !(problem.dd > 0.0) {
            return Err(Error::DegenerateTreatment);
        }
        let grad_alpha = &problem.xtd - &problem.gram.dot(&alpha);
        let grad_beta = &problem.xty - &(&problem.xtd * gamma) - problem.gram.dot(&beta);
        Ok(Self { problem, config, alpha, beta, gamma, grad_alpha, grad_beta })
    }

    pub fn alpha(&self) -> &Array1<f64> {
        &self.alpha
    }

    pub fn beta(&self) -> &Array1<f64> {
        &self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Exact minimization over `alpha_j` with everything else fixed.
    pub fn update_alpha(&mut self, j: usize) {
        let g = self.problem.gram[[j, j]];
        if !(g > 0.0) {
            return;
        }
        let old = self.alpha[j];
        let z = self.grad_alpha[j] + g * old;
        let t = self.config.lambda * self.config.adaptive_weights[j] * self.beta[j].abs() + self.config.lambda2;
        let new = soft_threshold(z, t) / g;
        if new != old {
            self.grad_alpha.scaled_add(old - new, &self.problem.gram.row(j));
            self.alpha[j] = new;
        }
    }

    /// Exact minimization over `beta_j` with everything else fixed.
    pub fn update_beta(&mut self, j: usize) {
        let g = self.problem.gram[[j, j]];
        if !(g > 0.0) {
            return;
        }
        let old = self.beta[j];
        let z = self.grad_beta[j] + g * old;
        let t = self.config.lambda * self.config.adaptive_weights[j] * self.alpha[j].abs() + self.config.lambda3;
        let new = soft_threshold(z, t) / g;
        if new != old {
            self.grad_beta.scaled_add(old - new, &self.problem.gram.row(j));
            self.beta[j] = new;
        }
    }

    /// Exact minimization over the treatment effect: `d'(y - Xb) / d'd`.
    pub fn update_gamma(&mut self) {
        let new = (self.problem.dy - self.problem.xtd.dot(&self.beta)) / self.problem.dd;
        self.grad_beta.scaled_add(self.gamma - new, &self.problem.xtd);
        self.gamma = new;
    }

    pub fn residual_sums(&self) -> (f64, f64) {
        let pr = self.problem;
        let rss_d = pr.dd - self.alpha.dot(&pr.xtd) - self.alpha.dot(&self.grad_alpha);
        let ryy = pr.yy - 2.0 * self.gamma * pr.dy + self.gamma * self.gamma * pr.dd;
        let q = &pr.xty - &(&pr.xtd * self.gamma);
        let rss_y = ryy - self.beta.dot(&q) - self.beta.dot(&self.grad_beta);
        (rss_d.max(0.0), rss_y.max(0.0))
    }

    pub fn objective(&self) -> f64 {
        let (rd, ry) = self.residual_sums();
        0.5 * (rd + ry) + penalty(&self.alpha, &self.beta, self.config)
    }

    /// One outer iteration: an ascending sweep over `alpha`, one over `beta`,
    /// then the `gamma` step.
    pub fn sweep(&mut self) {
        for j in 0..self.alpha.len() {
            self.update_alpha(j);
        }
        for j in 0..self.beta.len() {
            self.update_beta(j);
        }
        self.update_gamma();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Relative objective change that ends the descent.
    pub eps: f64,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { eps: 1e-6, max_iter: 500 }
    }
}

/// Starting point for [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct StartValues {
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct SilassoFit {
    pub alpha: CoefVector,
    pub beta: CoefVector,
    pub gamma: f64,
    /// Objective at the start and after every outer iteration.
    pub objective_trace: Vec<f64>,
    /// `|alpha_i beta_i|`.
    pub importance: Array1<f64>,
    pub config: PenaltyConfig,
    pub converged: bool,
    pub iterations: usize,
    pub rss_d: f64,
    pub rss_y: f64,
}

impl SilassoFit {
    pub fn objective_final(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the starting objective")
    }

    pub fn start_values(&self) -> StartValues {
        StartValues { alpha: self.alpha.values.clone(), beta: self.beta.values.clone(), gamma: self.gamma }
    }
}

/// Block coordinate descent from `start` until the relative objective change
/// drops below `opts.eps` or `opts.max_iter` outer iterations have run.
pub fn fit(problem: &SilassoProblem, config: &PenaltyConfig, start: &StartValues, opts: FitOptions) -> Result<SilassoFit> {
    if !(opts.eps > 0.0) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {}", opts.eps)));
    }
    let mut state = BlockState::new(problem, config, start.alpha.clone(), start.beta.clone(), start.gamma)?;
    let mut obj = state.objective();
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        state.sweep();
        iterations += 1;
        let new_obj = state.objective();
        trace.push(new_obj);
        let rel = (obj - new_obj).abs() / obj.abs().max(f64::MIN_POSITIVE);
        obj = new_obj;
        if rel < opts.eps {
            converged = true;
            break;
        }
    }
    let (rss_d, rss_y) = state.residual_sums();
    let importance = (&state.alpha * &state.beta).mapv(f64::abs);
    Ok(SilassoFit {
        alpha: CoefVector::new(state.alpha),
        beta: CoefVector::new(state.beta),
        gamma: state.gamma,
        objective_trace: trace,
        importance,
        config: config.clone(),
        converged,
        iterations,
        rss_d,
        rss_y,
    })
}

/// `(rss_d + rss_y) / (1 - (||a||_0 + ||b||_0) / (2n))^2`.
pub fn gcv_star(fit: &SilassoFit, n: usize) -> Result<f64> {
    let support = fit.alpha.l0() + fit.beta.l0();
    if support >= 2 * n {
        return Err(Error::DenominatorCollapse { support, n });
    }
    let shrink = 1.0 - support as f64 / (2 * n) as f64;
    Ok((fit.rss_d + fit.rss_y) / (shrink * shrink))
}

/// Outcome of a penalty search.
#[derive(Debug, Clone)]
pub struct TuneResult {
    pub lambda: f64,
    pub fit: SilassoFit,
    /// `(lambda, GCV*)` for every grid point; `None` where the criterion is
    /// undefined.
    pub path: Vec<(f64, Option<f64>)>,
}

/// Fits every penalty in `grid` (sorted descending, each warm-started from
/// the previous solution, the first from `start`) and keeps the GCV*
/// minimizer. Ties go to the larger penalty.
pub fn tune(
    problem: &SilassoProblem,
    grid: &[f64],
    base: &PenaltyConfig,
    start: &StartValues,
    opts: FitOptions,
) -> Result<TuneResult> {
    if grid.is_empty() || grid.iter().any(|l| !(*l >= 0.0)) {
        return Err(Error::InvalidInput("penalty grid must be non-empty and >= 0".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.dedup();

    let mut best: Option<(f64, f64, SilassoFit)> = None;
    let mut path = Vec::with_capacity(sorted.len());
    let mut warm = start.clone();
    for &lambda in &sorted {
        let config = base.at_lambda(lambda);
        let f = fit(problem, &config, &warm, opts)?;
        let score = match gcv_star(&f, problem.n) {
            Ok(s) => Some(s),
            Err(Error::DenominatorCollapse { .. }) => None,
            Err(e) => return Err(e),
        };
        path.push((lambda, score));
        warm = f.start_values();
        if let Some(s) = score {
            if best.as_ref().is_none_or(|(_, b, _)| s < *b) {
                best = Some((lambda, s, f));
            }
        }
    }
    let (lambda, _, fit) = best.ok_or(Error::DenominatorCollapse { support: 2 * problem.n, n: problem.n })?;
    Ok(TuneResult { lambda, fit, path })
}

/// Smallest penalty whose fit from `start` has no nonzero product
/// `alpha_i beta_i`, located by bracketing and geometric bisection.
pub fn lambda_max(problem: &SilassoProblem, base: &PenaltyConfig, start: &StartValues, opts: FitOptions) -> Result<f64> {
    const BISECTIONS: usize = 8;
    const MAX_BRACKET_STEPS: usize = 60;
    let zero_products = |lambda: f64| -> Result<bool> {
        let f = fit(problem, &base.at_lambda(lambda), start, opts)?;
        let tol = f.alpha.zero_tol;
        Ok(f.alpha.values.iter().zip(f.beta.values.iter()).all(|(a, b)| a.abs() <= tol || b.abs() <= tol))
    };
    // Penalty at which coordinate i alone, with the other block's marginal
    // estimate plugged in, loses one factor of its product.
    let w = &base.adaptive_weights;
    let mut guess = 0.0f64;
    for i in 0..problem.dim() {
        let g = problem.gram[[i, i]];
        let (cd, cy) = (problem.xtd[i].abs(), problem.xty[i].abs());
        if cd == 0.0 || cy == 0.0 || g == 0.0 {
            continue;
        }
        let kill_beta = cy * g / (w[i] * cd);
        let kill_alpha = cd * g / (w[i] * cy);
        guess = guess.max(kill_beta.min(kill_alpha));
    }
    if guess == 0.0 {
        guess = 1.0;
    }
    let (mut lo, mut hi);
    if zero_products(guess)? {
        hi = guess;
        lo = guess / 2.0;
        let mut steps = 0;
        while zero_products(lo)? {
            hi = lo;
            lo /= 2.0;
            steps += 1;
            if steps >= MAX_BRACKET_STEPS {
                return Ok(hi);
            }
        }
    } else {
        lo = guess;
        hi = guess * 2.0;
        let mut steps = 0;
        while !zero_products(hi)? {
            lo = hi;
            hi *= 2.0;
            steps += 1;
            if steps >= MAX_BRACKET_STEPS {
                return Err(Error::NoConvergence { iterations: steps });
            }
        }
    }
    for _ in 0..BISECTIONS {
        let mid = (lo * hi).sqrt();
        if zero_products(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Variables sorted into roles by which coefficients clear `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// By importance descending, ties by ascending index.
    pub confounders: Vec<usize>,
    pub treatment_predictors: Vec<usize>,
    pub outcome_predictors: Vec<usize>,
    pub threshold: f64,
}

pub fn classify(alpha: &CoefVector, beta: &CoefVector, threshold: f64) -> SelectionResult {
    let mut confounders = Vec::new();
    let mut treatment_predictors = Vec::new();
    let mut outcome_predictors = Vec::new();
    for (i, (a, b)) in alpha.values.iter().zip(beta.values.iter()).enumerate() {
        let (a, b) = (a.abs(), b.abs());
        match (a > threshold, b > threshold) {
            (true, true) => confounders.push(i),
            (true, false) => treatment_predictors.push(i),
            (false, true) => outcome_predictors.push(i),
            (false, false) => {}
        }
    }
    let score: Vec<f64> = confounders.iter().map(|&i| (alpha.values[i] * beta.values[i]).abs()).collect();
    let confounders = rank_descending(&score).into_iter().map(|k| confounders[k]).collect();
    SelectionResult { confounders, treatment_predictors, outcome_predictors, threshold }
}

/// Settings for the full selection pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct SilassoOptions {
    pub fit: FitOptions,
    pub grid_len: usize,
    /// Smallest grid penalty as a fraction of the computed maximum.
    pub grid_ratio: f64,
    /// Explicit grid overriding the data-driven one.
    pub grid: Option<Vec<f64>>,
    pub supplementary_ratio: f64,
    pub weight_cap: f64,
    pub threshold: f64,
    pub ridge: RidgeCvOptions,
}

impl Default for SilassoOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            grid_len: 50,
            grid_ratio: 1e-3,
            grid: None,
            supplementary_ratio: SUPPLEMENTARY_RATIO,
            weight_cap: DEFAULT_WEIGHT_CAP,
            threshold: DEFAULT_THRESHOLD,
            ridge: RidgeCvOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SilassoOutput {
    pub tuned: TuneResult,
    pub selection: SelectionResult,
    pub lambda_max: f64,
    pub grid: Vec<f64>,
}

/// Ridge initialization, adaptive weights, penalty grid, GCV* tuning and
/// classification on standardized `x` with centered `d` and `y`.
pub fn silasso(x: ArrayView2<f64>, d: ArrayView1<f64>, y: ArrayView1<f64>, opts: &SilassoOptions) -> Result<SilassoOutput> {
    let problem = SilassoProblem::new(x, d, y)?;
    if !(problem.dd > 0.0) {
        return Err(Error::DegenerateTreatment);
    }
    let init = ridge_init(x, d, y, &opts.ridge)?;
    let mut base = PenaltyConfig::adaptive(init.alpha.view(), init.beta.view(), 1.0, opts.weight_cap);
    base.lambda2 = opts.supplementary_ratio;
    base.lambda3 = opts.supplementary_ratio;
    let start = StartValues { alpha: init.alpha, beta: init.beta, gamma: init.gamma };
    let (lmax, grid) = match &opts.grid {
        Some(g) => (g.iter().cloned().fold(0.0, f64::max), g.clone()),
        None => {
            let lmax = lambda_max(&problem, &base, &start, opts.fit)?;
            (lmax, lambda_grid(lmax, opts.grid_len, opts.grid_ratio))
        }
    };
    let tuned = tune(&problem, &grid, &base, &start, opts.fit)?;
    let selection = classify(&tuned.fit.alpha, &tuned.fit.beta, opts.threshold);
    Ok(SilassoOutput { tuned, selection, lambda_max: lmax, grid })
}
