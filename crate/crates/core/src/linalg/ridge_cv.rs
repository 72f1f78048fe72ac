//! K-fold cross-validated ridge regression.
//!
//! Each training fold is eigen-decomposed once (its Gram matrix when
//! `p <= n_train`, its kernel matrix otherwise), after which the validation
//! error of every grid penalty costs only `O(n_val * min(n, p))`.
//!
//! A ridge fit of `y` on `[d | X]` is handled without forming the augmented
//! matrix: profiling out `b` leaves
//! `g = d'(I - H)y / (d'(I - H)d + lambda)` with `H` the hat matrix of `X`,
//! and `b = ridge(X, y - g d)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{prepend_column, ridge, symmetric_eigen, CoefVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeCvOptions {
    pub folds: usize,
    pub grid_len: usize,
    /// Smallest grid penalty as a multiple of `n`.
    pub grid_lo: f64,
    /// Largest grid penalty as a multiple of `n`.
    pub grid_hi: f64,
}

impl Default for RidgeCvOptions {
    fn default() -> Self {
        Self { folds: 5, grid_len: 20, grid_lo: 1e-4, grid_hi: 10.0 }
    }
}

impl RidgeCvOptions {
    pub fn grid(&self, n: usize) -> Vec<f64> {
        let n = n as f64;
        let (lo, hi) = (self.grid_lo.ln(), self.grid_hi.ln());
        if self.grid_len == 1 {
            return vec![n * self.grid_hi];
        }
        (0..self.grid_len).map(|k| n * (lo + (hi - lo) * k as f64 / (self.grid_len - 1) as f64).exp()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeCvChoice {
    pub lambda: f64,
    pub grid: Vec<f64>,
    pub cv_error: Vec<f64>,
}

impl RidgeCvChoice {
    fn pick(grid: Vec<f64>, cv_error: Vec<f64>) -> Self {
        // Ties go to the larger penalty.
        let mut best = 0;
        for k in 1..grid.len() {
            let better = cv_error[k] < cv_error[best] || (cv_error[k] == cv_error[best] && grid[k] > grid[best]);
            if better {
                best = k;
            }
        }
        Self { lambda: grid[best], grid, cv_error }
    }
}

struct Fold {
    train_mask: Array1<f64>,
    val: Vec<usize>,
    primal: bool,
    eig: Array1<f64>,
    vecs: Array2<f64>,
    train_rows: Vec<usize>,
    /// Maps spectral coordinates scaled by `1/(eig + lambda)` to validation
    /// predictions.
    val_basis: Array2<f64>,
}

impl Fold {
    fn project(&self, x: ArrayView2<f64>, z: ArrayView1<f64>) -> Array1<f64> {
        if self.primal {
            let masked = &z * &self.train_mask;
            self.vecs.t().dot(&x.t().dot(&masked))
        } else {
            let z_tr = z.select(Axis(0), &self.train_rows);
            self.vecs.t().dot(&z_tr)
        }
    }

    fn in_sample_dot(&self, z: ArrayView1<f64>, w: ArrayView1<f64>) -> f64 {
        z.iter().zip(w.iter()).zip(self.train_mask.iter()).map(|((a, b), m)| a * b * m).sum()
    }

    /// `z'(I - H)w` over the training rows.
    fn residual_form(&self, z: ArrayView1<f64>, w: ArrayView1<f64>, pz: &Array1<f64>, pw: &Array1<f64>, lambda: f64) -> f64 {
        let hat: f64 = pz
            .iter()
            .zip(pw.iter())
            .zip(self.eig.iter())
            .map(|((a, b), e)| if self.primal { a * b / (e + lambda) } else { a * b * e / (e + lambda) })
            .sum();
        self.in_sample_dot(z, w) - hat
    }

    fn predict(&self, coords: &Array1<f64>, lambda: f64) -> Array1<f64> {
        let scaled = Array1::from_shape_fn(coords.len(), |i| coords[i] / (self.eig[i] + lambda));
        self.val_basis.dot(&scaled)
    }
}

struct CvPlan<'a> {
    x: ArrayView2<'a, f64>,
    folds: Vec<Fold>,
    grid: Vec<f64>,
}

impl<'a> CvPlan<'a> {
    fn new(x: ArrayView2<'a, f64>, opts: &RidgeCvOptions) -> Result<Self> {
        let (n, p) = x.dim();
        let k = opts.folds;
        if k < 2 || n < 2 * k {
            return Err(Error::TooFewRows { rows: n, required: 2 * k.max(2) });
        }
        let n_train_min = n - n.div_ceil(k);
        let primal = p <= n_train_min;
        let full = if primal { x.t().dot(&x) } else { x.dot(&x.t()) };
        let mut folds = Vec::with_capacity(k);
        for f in 0..k {
            let val: Vec<usize> = (f..n).step_by(k).collect();
            let train_rows: Vec<usize> = (0..n).filter(|i| i % k != f).collect();
            let mut train_mask = Array1::ones(n);
            for &i in &val {
                train_mask[i] = 0.0;
            }
            let x_val = x.select(Axis(0), &val);
            let (eig, vecs, val_basis) = if primal {
                let gram = &full - &x_val.t().dot(&x_val);
                let (eig, vecs) = symmetric_eigen(gram)?;
                let basis = x_val.dot(&vecs);
                (eig, vecs, basis)
            } else {
                let kernel = full.select(Axis(0), &train_rows).select(Axis(1), &train_rows);
                let (eig, vecs) = symmetric_eigen(kernel)?;
                let cross = full.select(Axis(0), &val).select(Axis(1), &train_rows);
                let basis = cross.dot(&vecs);
                (eig, vecs, basis)
            };
            let eig = eig.mapv(|e| e.max(0.0));
            folds.push(Fold { train_mask, val, primal, eig, vecs, train_rows, val_basis });
        }
        Ok(Self { x, folds, grid: opts.grid(n) })
    }

    fn plain_errors(&self, z: ArrayView1<f64>) -> Vec<f64> {
        let mut err = vec![0.0; self.grid.len()];
        for fold in &self.folds {
            let pz = fold.project(self.x, z);
            let z_val = z.select(Axis(0), &fold.val);
            for (e, &lambda) in err.iter_mut().zip(&self.grid) {
                let r = &z_val - &fold.predict(&pz, lambda);
                *e += r.dot(&r);
            }
        }
        err
    }

    fn augmented_errors(&self, lead: ArrayView1<f64>, y: ArrayView1<f64>) -> Vec<f64> {
        let mut err = vec![0.0; self.grid.len()];
        for fold in &self.folds {
            let pd = fold.project(self.x, lead);
            let py = fold.project(self.x, y);
            let d_val = lead.select(Axis(0), &fold.val);
            let y_val = y.select(Axis(0), &fold.val);
            for (e, &lambda) in err.iter_mut().zip(&self.grid) {
                let num = fold.residual_form(lead, y, &pd, &py, lambda);
                let den = fold.residual_form(lead, lead, &pd, &pd, lambda) + lambda;
                let g = if den > 0.0 { num / den } else { 0.0 };
                let coords = &py - &(&pd * g);
                let pred = &d_val * g + fold.predict(&coords, lambda);
                let r = &y_val - &pred;
                *e += r.dot(&r);
            }
        }
        err
    }
}

fn check_rows(x: ArrayView2<f64>, v: ArrayView1<f64>) -> Result<()> {
    if x.nrows() != v.len() {
        return Err(Error::DimensionMismatch(format!("X has {} rows, vector has {}", x.nrows(), v.len())));
    }
    Ok(())
}

/// Ridge of `z` on `X` with the penalty chosen by K-fold cross-validation.
pub fn ridge_cv(x: ArrayView2<f64>, z: ArrayView1<f64>, opts: &RidgeCvOptions) -> Result<(RidgeCvChoice, CoefVector)> {
    check_rows(x, z)?;
    let plan = CvPlan::new(x, opts)?;
    let choice = RidgeCvChoice::pick(plan.grid.clone(), plan.plain_errors(z));
    let coef = ridge(x, z, choice.lambda)?;
    Ok((choice, coef))
}

/// Ridge of `y` on `[lead | X]` with the penalty chosen by K-fold
/// cross-validation. Returns the lead coefficient and the `X` block.
pub fn ridge_cv_augmented(
    x: ArrayView2<f64>,
    lead: ArrayView1<f64>,
    y: ArrayView1<f64>,
    opts: &RidgeCvOptions,
) -> Result<(RidgeCvChoice, f64, CoefVector)> {
    check_rows(x, lead)?;
    check_rows(x, y)?;
    let plan = CvPlan::new(x, opts)?;
    let choice = RidgeCvChoice::pick(plan.grid.clone(), plan.augmented_errors(lead, y));
    let (g, b) = ridge_augmented(x, lead, y, choice.lambda)?;
    Ok((choice, g, b))
}

fn ridge_augmented(x: ArrayView2<f64>, lead: ArrayView1<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<(f64, CoefVector)> {
    let design = prepend_column(lead, x);
    let coef = ridge(design.view(), y, lambda)?.values;
    Ok((coef[0], CoefVector::new(coef.slice(ndarray::s![1..]).to_owned())))
}

/// Ridge starting values for the treatment and outcome models: `alpha` from
/// `d ~ X`, and `(gamma, beta)` from `y ~ [d | X]`, each with its own
/// cross-validated penalty. The fold decompositions are shared.
#[derive(Debug, Clone)]
pub struct RidgeInit {
    pub alpha: Array1<f64>,
    pub beta: Array1<f64>,
    pub gamma: f64,
    pub alpha_choice: RidgeCvChoice,
    pub beta_choice: RidgeCvChoice,
}

pub fn ridge_init(x: ArrayView2<f64>, d: ArrayView1<f64>, y: ArrayView1<f64>, opts: &RidgeCvOptions) -> Result<RidgeInit> {
    check_rows(x, d)?;
    check_rows(x, y)?;
    let plan = CvPlan::new(x, opts)?;
    let alpha_choice = RidgeCvChoice::pick(plan.grid.clone(), plan.plain_errors(d));
    let beta_choice = RidgeCvChoice::pick(plan.grid.clone(), plan.augmented_errors(d, y));
    let alpha = ridge(x, d, alpha_choice.lambda)?.values;
    let (gamma, beta) = ridge_augmented(x, d, y, beta_choice.lambda)?;
    Ok(RidgeInit { alpha, beta: beta.values, gamma, alpha_choice, beta_choice })
}
