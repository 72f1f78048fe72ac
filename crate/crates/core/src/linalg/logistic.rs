use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{with_intercept, CholeskyFactor, CoefVector};
use crate::error::{Error, Result};

const MAX_NEWTON_STEPS: usize = 100;
const GRADIENT_TOL: f64 = 1e-6;
const SEPARATION_EPS: f64 = 1e-8;
/// At exit, every row fitted to within this distance of its label means the
/// likelihood has no finite maximizer.
const PERFECT_FIT_EPS: f64 = 1e-6;

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Logistic regression with an intercept.
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub intercept: f64,
    pub coef: CoefVector,
    pub iterations: usize,
    /// Log-likelihood after each accepted Newton step, starting from the
    /// null-model initialization.
    pub loglik_trace: Vec<f64>,
}

impl LogisticFit {
    pub fn predict_proba(&self, x: ArrayView2<f64>) -> Array1<f64> {
        (x.dot(&self.coef.values) + self.intercept).mapv(sigmoid)
    }
}

fn log_likelihood(eta: &Array1<f64>, d: ArrayView1<f64>) -> f64 {
    // d*eta - log(1 + e^eta), written to avoid overflow.
    eta.iter().zip(d.iter()).map(|(&e, &di)| di * e - if e > 0.0 { e + (-e).exp().ln_1p() } else { e.exp().ln_1p() }).sum()
}

/// Maximizes the Bernoulli log-likelihood with a logit link by Newton-Raphson
/// (iteratively reweighted least squares) with step halving, so the
/// log-likelihood never decreases between accepted iterates.
pub fn logistic_fit(x: ArrayView2<f64>, d: ArrayView1<f64>) -> Result<LogisticFit> {
    let n = x.nrows();
    if d.len() != n {
        return Err(Error::DimensionMismatch(format!("X has {n} rows, d has {}", d.len())));
    }
    if d.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::InvalidInput("logistic response must be 0/1".into()));
    }
    let ones = d.sum();
    if ones == 0.0 || ones == n as f64 {
        return Err(Error::InvalidInput("logistic response needs both classes".into()));
    }
    let design = with_intercept(x);
    let k = design.ncols();
    let mut theta = Array1::zeros(k);
    let rate = ones / n as f64;
    theta[0] = (rate / (1.0 - rate)).ln();

    let mut eta = design.dot(&theta);
    let mut ll = log_likelihood(&eta, d);
    let mut trace = vec![ll];
    let mut iterations = 0;
    loop {
        let prob = eta.mapv(sigmoid);
        let grad = design.t().dot(&(&d - &prob));
        let gnorm = grad.dot(&grad).sqrt();
        if gnorm < GRADIENT_TOL {
            if prob.iter().zip(d.iter()).all(|(p, di)| (p - di).abs() < PERFECT_FIT_EPS) {
                return Err(Error::Separation);
            }
            break;
        }
        if prob.iter().all(|p| *p < SEPARATION_EPS || *p > 1.0 - SEPARATION_EPS) {
            return Err(Error::Separation);
        }
        if iterations >= MAX_NEWTON_STEPS {
            return Err(Error::NoConvergence { iterations });
        }
        let weights = prob.mapv(|p| p * (1.0 - p));
        let mut weighted = design.clone();
        for (mut row, w) in weighted.axis_iter_mut(Axis(0)).zip(weights.iter()) {
            row *= *w;
        }
        let info: Array2<f64> = design.t().dot(&weighted);
        let step = CholeskyFactor::new(&info).map_err(|_| Error::Separation)?.solve(&grad)?;

        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &theta + &(&step * scale);
            let cand_eta = design.dot(&cand);
            let cand_ll = log_likelihood(&cand_eta, d);
            if cand_ll >= ll {
                theta = cand;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        if !accepted {
            // At machine precision; the gradient is as small as it can get.
            if gnorm < 1e3 * GRADIENT_TOL {
                break;
            }
            return Err(Error::NoConvergence { iterations });
        }
        trace.push(ll);
    }
    let coef = theta.slice(ndarray::s![1..]).to_owned();
    Ok(LogisticFit { intercept: theta[0], coef: CoefVector::new(coef), iterations, loglik_trace: trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn simulate(n: usize, slope: f64, seed: u64) -> (Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((n, 1), || rng.sample::<f64, _>(StandardNormal));
        let d = x.column(0).mapv(|v| if rng.random::<f64>() < sigmoid(0.3 + slope * v) { 1.0 } else { 0.0 });
        (x, d)
    }

    #[test]
    fn null_model_recovers_base_rate() {
        let (x, d) = simulate(20_000, 0.0, 1);
        let fit = logistic_fit(x.view(), d.view()).unwrap();
        let rate = d.mean().unwrap();
        assert!((fit.intercept - (rate / (1.0 - rate)).ln()).abs() < 0.02);
        assert!(fit.coef.values[0].abs() < 0.05);
    }

    #[test]
    fn one_covariate_matches_likelihood_grid() {
        let (x, d) = simulate(300, 1.2, 2);
        let fit = logistic_fit(x.view(), d.view()).unwrap();
        let ll = |a: f64, b: f64| log_likelihood(&x.column(0).mapv(|v| a + b * v), d.view());
        let h = 0.002;
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in -400..=600 {
            for k in 0..=1200 {
                let (a, b) = (i as f64 * h, k as f64 * h);
                let v = ll(a, b);
                if v > best.0 {
                    best = (v, a, b);
                }
            }
        }
        assert!((fit.intercept - best.1).abs() <= h);
        assert!((fit.coef.values[0] - best.2).abs() <= h);
    }

    #[test]
    fn label_flip_negates_coefficients() {
        let x = ndarray::array![[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0], [-1.5], [1.5]];
        let d = ndarray::array![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        let flipped = d.mapv(|v| 1.0 - v);
        let a = logistic_fit(x.view(), d.view()).unwrap();
        let b = logistic_fit(x.view(), flipped.view()).unwrap();
        assert!((a.intercept + b.intercept).abs() < 1e-8);
        assert!((a.coef.values[0] + b.coef.values[0]).abs() < 1e-8);
    }

    #[test]
    fn loglik_trace_is_monotone() {
        let (x, d) = simulate(500, 2.0, 3);
        let fit = logistic_fit(x.view(), d.view()).unwrap();
        assert!(fit.loglik_trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn separated_classes_are_reported() {
        let x = ndarray::array![[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]];
        let d = ndarray::array![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let err = logistic_fit(x.view(), d.view()).unwrap_err();
        assert!(matches!(err, Error::Separation | Error::NoConvergence { .. }));
    }
}
