//! Treatment-effect estimators applied after selection, and the
//! Durbin-Wu-Hausman endogeneity test.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::linalg::{
    lasso_bic, lasso_gram, logistic_fit, median, ols, ols_fit, with_intercept, CdOptions, CoefVector, GramProblem, ZERO_TOL,
};

/// Propensity scores are clipped to `[DR_CLIP, 1 - DR_CLIP]`.
pub const DR_CLIP: f64 = 0.01;
/// Adaptive-lasso weight for instruments whose median-based direct effect is
/// numerically zero.
pub const IV_WEIGHT_CAP: f64 = 1e6;
const IV_PATH_LEN: usize = 50;
const IV_PATH_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Adjusted,
    DrAte,
    IvMedian,
    IvAdaptive,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Adjusted => "adjusted",
            Estimator::DrAte => "dr_ate",
            Estimator::IvMedian => "iv_median",
            Estimator::IvAdaptive => "iv_adaptive",
        }
    }
}

/// Non-fatal conditions met while estimating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectWarning {
    /// Propensity scores that hit the clip bound.
    PositivityViolation { clipped: usize },
    /// Instruments dropped from the ratio median for a near-zero first stage.
    WeakInstruments { excluded: usize },
    /// Instruments whose median-based direct effect is zero; they receive the
    /// capped weight and are treated as valid.
    ZeroMedianResidual { instruments: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimate: f64,
    pub std_error: Option<f64>,
    pub estimator: Estimator,
    pub n_used: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<EffectWarning>,
}

/// Coefficient of `d` in the OLS fit of `y` on an intercept, `d` and the
/// union of the selected confounders and outcome predictors, with its
/// classical standard error.
pub fn adjusted_effect(
    y: ArrayView1<f64>,
    d: ArrayView1<f64>,
    x: ArrayView2<f64>,
    confounders: &[usize],
    outcome_predictors: &[usize],
) -> Result<EffectEstimate> {
    let n = y.len();
    if d.len() != n || x.nrows() != n {
        return Err(Error::DimensionMismatch(format!("y has {n} rows, d {}, X {}", d.len(), x.nrows())));
    }
    let mut cols: Vec<usize> = confounders.iter().chain(outcome_predictors).cloned().collect();
    cols.sort_unstable();
    cols.dedup();
    if let Some(&j) = cols.iter().find(|&&j| j >= x.ncols()) {
        return Err(Error::InvalidInput(format!("column {j} out of range for {} covariates", x.ncols())));
    }
    if cols.len() + 1 >= n {
        return Err(Error::RankDeficient);
    }
    let mut design = Array2::ones((n, cols.len() + 2));
    design.column_mut(1).assign(&d);
    for (k, &j) in cols.iter().enumerate() {
        design.column_mut(k + 2).assign(&x.column(j));
    }
    let fit = ols_fit(design.view(), y)?;
    Ok(EffectEstimate {
        estimate: fit.coef[1],
        std_error: Some(fit.std_errors()[1]),
        estimator: Estimator::Adjusted,
        n_used: n,
        warnings: Vec::new(),
    })
}

/// Doubly robust ATE from fitted propensities and arm-wise outcome
/// predictions.
///
/// The standard error is `sd(psi) / sqrt(n)` over the per-row terms.
pub fn dr_ate_from_predictions(
    y: ArrayView1<f64>,
    d: ArrayView1<f64>,
    propensity: ArrayView1<f64>,
    m1: ArrayView1<f64>,
    m0: ArrayView1<f64>,
) -> Result<EffectEstimate> {
    let n = y.len();
    if [d.len(), propensity.len(), m1.len(), m0.len()].iter().any(|&k| k != n) {
        return Err(Error::DimensionMismatch("dr_ate inputs must share one length".into()));
    }
    if n < 2 {
        return Err(Error::TooFewRows { rows: n, required: 2 });
    }
    if d.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(Error::InvalidInput("dr_ate needs a 0/1 treatment".into()));
    }
    let mut clipped = 0;
    let mut psi = Array1::zeros(n);
    for i in 0..n {
        let raw = propensity[i];
        if raw.is_nan() {
            return Err(Error::InvalidInput(format!("propensity score at row {i} is NaN")));
        }
        let e = raw.clamp(DR_CLIP, 1.0 - DR_CLIP);
        if raw <= DR_CLIP || raw >= 1.0 - DR_CLIP {
            clipped += 1;
        }
        let (di, yi) = (d[i], y[i]);
        psi[i] = di * yi / e - (1.0 - di) * yi / (1.0 - e) - (di - e) / e * m1[i] - (di - e) / (1.0 - e) * m0[i];
    }
    let mean = psi.sum() / n as f64;
    let var = psi.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let warnings = if clipped > 0 { vec![EffectWarning::PositivityViolation { clipped }] } else { Vec::new() };
    Ok(EffectEstimate {
        estimate: mean,
        std_error: Some((var / n as f64).sqrt()),
        estimator: Estimator::DrAte,
        n_used: n,
        warnings,
    })
}

/// Doubly robust ATE with a logistic propensity model and separate linear
/// outcome models on each arm, all on the columns of `x_sel` plus an
/// intercept.
pub fn dr_ate(y: ArrayView1<f64>, d: ArrayView1<f64>, x_sel: ArrayView2<f64>) -> Result<EffectEstimate> {
    let n = y.len();
    if d.len() != n || x_sel.nrows() != n {
        return Err(Error::DimensionMismatch(format!("y has {n} rows, d {}, X {}", d.len(), x_sel.nrows())));
    }
    let propensity = logistic_fit(x_sel, d)?.predict_proba(x_sel);
    let design = with_intercept(x_sel);
    let arm = |treated: bool| -> Result<Array1<f64>> {
        let rows: Vec<usize> = (0..n).filter(|&i| (d[i] == 1.0) == treated).collect();
        let coef = ols(design.select(Axis(0), &rows).view(), y.select(Axis(0), &rows).view())?;
        Ok(design.dot(&coef.values))
    };
    let m1 = arm(true)?;
    let m0 = arm(false)?;
    dr_ate_from_predictions(y, d, propensity.view(), m1.view(), m0.view())
}

/// Intermediate quantities of the ratio-median and adaptive-lasso IV
/// estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct IvArtifacts {
    /// Reduced-form coefficients of `y` on `Z`.
    pub gamma_hat: Array1<f64>,
    /// First-stage coefficients of `d` on `Z`.
    pub eta_hat: Array1<f64>,
    /// `gamma_hat / eta_hat`, absent where the first stage is near zero.
    pub pi_hat: Vec<Option<f64>>,
    pub median_ratio: f64,
    /// Fitted treatment `Z eta_hat`.
    pub d_hat: Array1<f64>,
    /// `gamma_hat - median_ratio * eta_hat`.
    pub alpha_m: Array1<f64>,
    /// `Z` with its projection on `d_hat` removed.
    pub z_tilde: Array2<f64>,
    pub excluded: usize,
}

fn check_iv_inputs(y: ArrayView1<f64>, d: ArrayView1<f64>, z: ArrayView2<f64>) -> Result<()> {
    let n = y.len();
    if d.len() != n || z.nrows() != n {
        return Err(Error::DimensionMismatch(format!("y has {n} rows, d {}, Z {}", d.len(), z.nrows())));
    }
    if z.ncols() == 0 {
        return Err(Error::InvalidInput("need at least one instrument".into()));
    }
    Ok(())
}

/// Median of the per-instrument ratios of reduced-form to first-stage
/// coefficients. Even counts average the two middle ratios. No standard
/// error is reported.
pub fn iv_median(y: ArrayView1<f64>, d: ArrayView1<f64>, z: ArrayView2<f64>) -> Result<(EffectEstimate, IvArtifacts)> {
    check_iv_inputs(y, d, z)?;
    let gamma_hat = ols(z, y)?.values;
    let eta_hat = ols(z, d)?.values;
    let pi_hat: Vec<Option<f64>> =
        gamma_hat.iter().zip(eta_hat.iter()).map(|(g, e)| (e.abs() > ZERO_TOL).then(|| g / e)).collect();
    let usable: Vec<f64> = pi_hat.iter().flatten().cloned().collect();
    let excluded = pi_hat.len() - usable.len();
    let median_ratio = median(&usable).ok_or(Error::AllInstrumentsWeak)?;

    let d_hat = z.dot(&eta_hat);
    let alpha_m = &gamma_hat - &(&eta_hat * median_ratio);
    let dd = d_hat.dot(&d_hat);
    let loadings = z.t().dot(&d_hat) / dd;
    let mut z_tilde = z.to_owned();
    for (mut col, l) in z_tilde.axis_iter_mut(Axis(1)).zip(loadings.iter()) {
        col.scaled_add(-*l, &d_hat);
    }

    let warnings = if excluded > 0 { vec![EffectWarning::WeakInstruments { excluded }] } else { Vec::new() };
    let estimate =
        EffectEstimate { estimate: median_ratio, std_error: None, estimator: Estimator::IvMedian, n_used: y.len(), warnings };
    Ok((estimate, IvArtifacts { gamma_hat, eta_hat, pi_hat, median_ratio, d_hat, alpha_m, z_tilde, excluded }))
}

/// Two-stage least squares treating every instrument as valid.
pub fn tsls(y: ArrayView1<f64>, d: ArrayView1<f64>, z: ArrayView2<f64>) -> Result<f64> {
    check_iv_inputs(y, d, z)?;
    let d_hat = z.dot(&ols(z, d)?.values);
    let dd = d_hat.dot(&d_hat);
    if !(dd > 0.0) {
        return Err(Error::AllInstrumentsWeak);
    }
    Ok(d_hat.dot(&y) / dd)
}

#[derive(Debug, Clone)]
pub struct IvAdaptiveFit {
    pub estimate: EffectEstimate,
    /// Estimated direct effects of the instruments on `y`.
    pub alpha_ad: CoefVector,
    pub lambda: f64,
    pub artifacts: IvArtifacts,
}

/// Adaptive-lasso IV estimator with weights `1 / |alpha_m|^v`.
///
/// `lambda = None` picks the penalty by BIC over a 50-point path. The
/// standard error ignores heteroskedasticity and the selection step.
pub fn iv_adaptive(
    y: ArrayView1<f64>,
    d: ArrayView1<f64>,
    z: ArrayView2<f64>,
    lambda: Option<f64>,
    v: f64,
) -> Result<IvAdaptiveFit> {
    if !(v > 0.0) {
        return Err(Error::InvalidInput(format!("adaptive exponent must be > 0, got {v}")));
    }
    let (median_est, artifacts) = iv_median(y, d, z)?;
    let mut warnings = median_est.warnings;
    let zero_median: Vec<usize> = (0..artifacts.alpha_m.len()).filter(|&l| artifacts.alpha_m[l].abs() <= ZERO_TOL).collect();
    if !zero_median.is_empty() {
        warnings.push(EffectWarning::ZeroMedianResidual { instruments: zero_median });
    }
    let weights =
        artifacts.alpha_m.mapv(|a| if a.abs() <= ZERO_TOL { IV_WEIGHT_CAP } else { a.abs().powf(-v).min(IV_WEIGHT_CAP) });

    let problem = GramProblem::new(artifacts.z_tilde.view(), y)?;
    let (lambda, alpha_ad) = match lambda {
        Some(l) if l >= 0.0 => {
            let pen = &weights * l;
            (l, lasso_gram(&problem, pen.view(), None, CdOptions::default())?.coef)
        }
        Some(l) => return Err(Error::InvalidInput(format!("lambda must be >= 0, got {l}"))),
        None => {
            let best = lasso_bic(&problem, Some(&weights), IV_PATH_LEN, IV_PATH_RATIO)?;
            (best.lambda, best.coef.values)
        }
    };

    let d_hat = &artifacts.d_hat;
    let dd = d_hat.dot(d_hat);
    let adjusted = &y - &z.dot(&alpha_ad);
    let estimate = d_hat.dot(&adjusted) / dd;
    let n = y.len();
    let df = alpha_ad.iter().filter(|a| **a != 0.0).count() + 1;
    let resid = &adjusted - &(&d * estimate);
    let s2 = if n > df { resid.dot(&resid) / (n - df) as f64 } else { f64::NAN };

    Ok(IvAdaptiveFit {
        estimate: EffectEstimate {
            estimate,
            std_error: Some((s2 / dd).sqrt()),
            estimator: Estimator::IvAdaptive,
            n_used: n,
            warnings,
        },
        alpha_ad: CoefVector::new(alpha_ad),
        lambda,
        artifacts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwhTest {
    pub statistic: f64,
    pub p_value: f64,
    pub df: usize,
}

/// Control-function Durbin-Wu-Hausman test. The first stage regresses `d` on
/// an intercept, `Z` and `C`; the statistic is the t-ratio of the first-stage
/// residual when added to the regression of `y` on an intercept, `d` and `C`.
pub fn dwh_test(y: ArrayView1<f64>, d: ArrayView1<f64>, z: ArrayView2<f64>, c: ArrayView2<f64>) -> Result<DwhTest> {
    check_iv_inputs(y, d, z)?;
    let n = y.len();
    if c.nrows() != n {
        return Err(Error::DimensionMismatch(format!("y has {n} rows, C has {}", c.nrows())));
    }
    let first = with_intercept(ndarray::concatenate![Axis(1), z, c].view());
    let v_hat = &d - &first.dot(&ols(first.view(), d)?.values);
    if v_hat.dot(&v_hat) <= ZERO_TOL * ZERO_TOL * d.dot(&d).max(1.0) {
        return Err(Error::RankDeficient);
    }
    let k = c.ncols() + 3;
    let mut second = Array2::ones((n, k));
    second.column_mut(1).assign(&d);
    second.slice_mut(ndarray::s![.., 2..k - 1]).assign(&c);
    second.column_mut(k - 1).assign(&v_hat);
    let fit = ols_fit(second.view(), y)?;
    let statistic = fit.coef[k - 1] / fit.std_errors()[k - 1];
    let df = fit.df_resid;
    let t = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let p_value = (2.0 * (1.0 - t.cdf(statistic.abs()))).clamp(0.0, 1.0);
    Ok(DwhTest { statistic, p_value, df })
}
