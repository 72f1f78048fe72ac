//! Selection methods behind one interface, and the replicated simulation
//! benchmark that compares them.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::adjusted_effect;
use crate::error::{Error, Result};
use crate::linalg::{center, lasso_bic, median, ols, prepend_column, rank_descending, ridge, standardize, GramProblem};
use crate::silasso::{silasso, SilassoOptions};
use crate::simgen::{child_seed, compute_metrics, generate, Metrics, ScenarioConfig};
use crate::sisis::{sisis_select, SisisOptions};

/// Ridge penalty used by the OLS baseline when the full fit is not
/// identified.
pub const OLS_FALLBACK_RIDGE: f64 = 1.0;
const DLASSO_PATH_LEN: usize = 50;
const DLASSO_PATH_RATIO: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ols,
    Dlasso,
    Sisis,
    Silasso,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ols, Method::Dlasso, Method::Sisis, Method::Silasso];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::Dlasso => "dlasso",
            Method::Sisis => "sisis",
            Method::Silasso => "silasso",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| Error::InvalidInput(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MethodOptions {
    pub silasso: SilassoOptions,
    /// Overrides the row-count defaults of the screening method.
    pub sisis: Option<SisisOptions>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub objective_final: Option<f64>,
}

/// Output of one selection method on one data set.
#[derive(Debug, Clone)]
pub struct MethodSelection {
    pub method: Method,
    /// Treatment-model coefficients on the standardized scale.
    pub alpha: Array1<f64>,
    /// Outcome-model coefficients on the standardized scale.
    pub beta: Array1<f64>,
    /// `|alpha_i beta_i|`.
    pub importance: Array1<f64>,
    /// By importance descending, ties by ascending index.
    pub confounders: Vec<usize>,
    pub treatment_predictors: Vec<usize>,
    pub outcome_predictors: Vec<usize>,
    pub gamma_hat: Option<f64>,
    pub diagnostics: Diagnostics,
}

fn importance_of(alpha: &Array1<f64>, beta: &Array1<f64>) -> Array1<f64> {
    (alpha * beta).mapv(f64::abs)
}

fn rank_by(importance: &Array1<f64>, set: &[usize]) -> Vec<usize> {
    let score: Vec<f64> = set.iter().map(|&i| importance[i]).collect();
    rank_descending(&score).into_iter().map(|k| set[k]).collect()
}

fn scatter(p: usize, idx: &[usize], values: ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(p);
    for (&i, v) in idx.iter().zip(values.iter()) {
        out[i] = *v;
    }
    out
}

/// Runs `method` on standardized `x` with centered `d` and `y`.
pub fn select_confounders(
    method: Method,
    x: ArrayView2<f64>,
    d: ArrayView1<f64>,
    y: ArrayView1<f64>,
    opts: &MethodOptions,
) -> Result<MethodSelection> {
    let (n, p) = x.dim();
    if d.len() != n || y.len() != n {
        return Err(Error::DimensionMismatch(format!("X has {n} rows, d {}, y {}", d.len(), y.len())));
    }
    match method {
        Method::Ols => {
            let joint = prepend_column(d, x);
            let (alpha, coef) = if p + 1 < n {
                (ols(x, d)?.values, ols(joint.view(), y)?.values)
            } else {
                (ridge(x, d, OLS_FALLBACK_RIDGE)?.values, ridge(joint.view(), y, OLS_FALLBACK_RIDGE)?.values)
            };
            let beta = coef.slice(ndarray::s![1..]).to_owned();
            let importance = importance_of(&alpha, &beta);
            let all: Vec<usize> = (0..p).collect();
            Ok(MethodSelection {
                method,
                confounders: rank_by(&importance, &all),
                alpha,
                beta,
                importance,
                treatment_predictors: Vec::new(),
                outcome_predictors: Vec::new(),
                gamma_hat: Some(coef[0]),
                diagnostics: Diagnostics { iterations: 1, converged: true, objective_final: None },
            })
        }
        Method::Dlasso => {
            let gram = GramProblem::new(x, d)?;
            let d_fit = lasso_bic(&gram, None, DLASSO_PATH_LEN, DLASSO_PATH_RATIO)?;
            let y_problem = gram.with_response(x.t().dot(&y), y.dot(&y));
            let y_fit = lasso_bic(&y_problem, None, DLASSO_PATH_LEN, DLASSO_PATH_RATIO)?;
            let alpha = d_fit.coef.values;
            let beta = y_fit.coef.values;
            let union: Vec<usize> = (0..p).filter(|&i| alpha[i] != 0.0 || beta[i] != 0.0).collect();
            let importance = importance_of(&alpha, &beta);
            let gamma_hat = adjusted_effect(y, d, x, &union, &[]).ok().map(|e| e.estimate);
            Ok(MethodSelection {
                method,
                confounders: rank_by(&importance, &union),
                alpha,
                beta,
                importance,
                treatment_predictors: Vec::new(),
                outcome_predictors: Vec::new(),
                gamma_hat,
                diagnostics: Diagnostics { iterations: 2, converged: true, objective_final: None },
            })
        }
        Method::Sisis => {
            let sisis_opts = opts.sisis.clone().unwrap_or_else(|| SisisOptions::for_rows(n));
            let out = sisis_select(y, d, x, &sisis_opts)?;
            // Importance from least squares refits on the two screened sets.
            let alpha = scatter(p, &out.d_set, ols(x.select(Axis(1), &out.d_set).view(), d)?.values.view());
            let joint = prepend_column(d, x.select(Axis(1), &out.r_set).view());
            let coef = ols(joint.view(), y)?.values;
            let beta = scatter(p, &out.r_set, coef.slice(ndarray::s![1..]));
            let importance = importance_of(&alpha, &beta);
            let d_set: BTreeSet<usize> = out.d_set.iter().cloned().collect();
            let r_set: BTreeSet<usize> = out.r_set.iter().cloned().collect();
            Ok(MethodSelection {
                method,
                confounders: rank_by(&importance, &out.confounders),
                alpha,
                beta,
                importance,
                treatment_predictors: d_set.difference(&r_set).cloned().collect(),
                outcome_predictors: r_set.difference(&d_set).cloned().collect(),
                gamma_hat: Some(out.gamma_hat),
                diagnostics: Diagnostics { iterations: out.iterations, converged: out.converged, objective_final: None },
            })
        }
        Method::Silasso => {
            let out = silasso(x, d, y, &opts.silasso)?;
            let fit = out.tuned.fit;
            let gamma_hat = adjusted_effect(y, d, x, &out.selection.confounders, &[]).map(|e| e.estimate).unwrap_or(fit.gamma);
            Ok(MethodSelection {
                method,
                alpha: fit.alpha.values.clone(),
                beta: fit.beta.values.clone(),
                importance: fit.importance.clone(),
                confounders: out.selection.confounders,
                treatment_predictors: out.selection.treatment_predictors,
                outcome_predictors: out.selection.outcome_predictors,
                gamma_hat: Some(gamma_hat),
                diagnostics: Diagnostics {
                    iterations: fit.iterations,
                    converged: fit.converged,
                    objective_final: Some(fit.objective_final()),
                },
            })
        }
    }
}

/// Standardized covariates and centered responses ready for selection.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub x: ndarray::Array2<f64>,
    pub d: Array1<f64>,
    pub y: Array1<f64>,
}

pub fn prepare(x: ndarray::Array2<f64>, d: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<PreparedData> {
    Ok(PreparedData { x: standardize(x)?.into_values(), d: center(d), y: center(y) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub method: Method,
    pub metrics: Option<Metrics>,
    pub gamma_hat: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    pub failures: usize,
    pub median_sn: Option<f64>,
    pub median_tn: Option<f64>,
    /// Median over the runs where the cover number is defined.
    pub median_cn: Option<f64>,
    pub cn_defined: usize,
    /// Runs with every true confounder selected and ranked first.
    pub full_recovery: usize,
    pub gamma_bias: Option<f64>,
    pub gamma_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// Scenario with `seed` holding the master seed.
    pub config: ScenarioConfig,
    pub replications: usize,
    pub records: Vec<ReplicationRecord>,
    pub summaries: Vec<MethodSummary>,
}

fn run_replication(
    config: &ScenarioConfig,
    replication: usize,
    methods: &[Method],
    opts: &MethodOptions,
) -> Vec<ReplicationRecord> {
    let seed = child_seed(config.seed, replication as u64);
    let record = |method: Method, outcome: Result<(Metrics, Option<f64>)>| match outcome {
        Ok((metrics, gamma_hat)) => {
            ReplicationRecord { replication, seed, method, metrics: Some(metrics), gamma_hat, error: None }
        }
        Err(e) => ReplicationRecord { replication, seed, method, metrics: None, gamma_hat: None, error: Some(e.to_string()) },
    };
    let data = generate(&config.with_seed(seed)).and_then(|data| {
        let prepared = prepare(data.x.clone(), data.d.view(), data.y.view())?;
        Ok((data, prepared))
    });
    let (data, prepared) = match data {
        Ok(v) => v,
        Err(e) => return methods.iter().map(|&m| record(m, Err(e.clone()))).collect(),
    };
    methods
        .iter()
        .map(|&method| {
            let outcome = select_confounders(method, prepared.x.view(), prepared.d.view(), prepared.y.view(), opts)
                .map(|sel| (compute_metrics(&sel.confounders, &data.roles), sel.gamma_hat));
            record(method, outcome)
        })
        .collect()
}

fn summarize(method: Method, records: &[&ReplicationRecord], p1: usize, gamma_true: f64) -> MethodSummary {
    let ok: Vec<&Metrics> = records.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let med = |values: Vec<f64>| median(&values);
    let cns: Vec<f64> = ok.iter().filter_map(|m| m.cn).map(|c| c as f64).collect();
    let errors: Vec<f64> = records.iter().filter_map(|r| r.gamma_hat).map(|g| g - gamma_true).collect();
    let count = errors.len() as f64;
    MethodSummary {
        method,
        runs: records.len(),
        failures: records.iter().filter(|r| r.error.is_some()).count(),
        median_sn: med(ok.iter().map(|m| m.sn as f64).collect()),
        median_tn: med(ok.iter().map(|m| m.tn as f64).collect()),
        cn_defined: cns.len(),
        median_cn: med(cns),
        full_recovery: ok.iter().filter(|m| m.cn == Some(p1)).count(),
        gamma_bias: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / count),
        gamma_rmse: (!errors.is_empty()).then(|| (errors.iter().map(|e| e * e).sum::<f64>() / count).sqrt()),
    }
}

/// Runs every method on `replications` data sets drawn from `config`.
///
/// Replication `r` uses the seed `child_seed(config.seed, r)`, so the report
/// does not depend on how rayon schedules the work. Method errors are
/// recorded per replication rather than aborting the run.
pub fn run_benchmark(
    config: &ScenarioConfig,
    methods: &[Method],
    replications: usize,
    opts: &MethodOptions,
) -> Result<BenchmarkReport> {
    config.validate()?;
    let records: Vec<ReplicationRecord> = (0..replications)
        .into_par_iter()
        .map(|r| run_replication(config, r, methods, opts))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let summaries = methods
        .iter()
        .map(|&m| {
            let mine: Vec<&ReplicationRecord> = records.iter().filter(|r| r.method == m).collect();
            summarize(m, &mine, config.p1, config.gamma_true)
        })
        .collect();
    Ok(BenchmarkReport { config: *config, replications, records, summaries })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ScenarioConfig {
        ScenarioConfig { n: 300, p1: 3, p2: 10, p3: 10, p4: 17, sigma2: 1.0, rho: 0.2, gamma_true: 1.0, seed }
    }

    #[test]
    fn method_tags_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("lasso".parse::<Method>().is_err());
    }

    #[test]
    fn ols_ranks_every_covariate() {
        let data = generate(&small(1)).unwrap();
        let prep = prepare(data.x.clone(), data.d.view(), data.y.view()).unwrap();
        let sel =
            select_confounders(Method::Ols, prep.x.view(), prep.d.view(), prep.y.view(), &MethodOptions::default()).unwrap();
        assert_eq!(sel.confounders.len(), 40);
        let m = compute_metrics(&sel.confounders, &data.roles);
        assert_eq!(m.tn, 3);
        assert!((sel.gamma_hat.unwrap() - 1.0).abs() < 0.2);
    }

    #[test]
    fn ols_falls_back_to_ridge_when_wide() {
        let cfg = ScenarioConfig { n: 30, p1: 2, p2: 10, p3: 10, p4: 10, ..small(2) };
        let data = generate(&cfg).unwrap();
        let prep = prepare(data.x.clone(), data.d.view(), data.y.view()).unwrap();
        let sel =
            select_confounders(Method::Ols, prep.x.view(), prep.d.view(), prep.y.view(), &MethodOptions::default()).unwrap();
        assert_eq!(sel.confounders.len(), 32);
        assert!(sel.gamma_hat.unwrap().is_finite());
    }

    #[test]
    fn dlasso_selects_the_union_of_supports() {
        let data = generate(&small(3)).unwrap();
        let prep = prepare(data.x.clone(), data.d.view(), data.y.view()).unwrap();
        let sel =
            select_confounders(Method::Dlasso, prep.x.view(), prep.d.view(), prep.y.view(), &MethodOptions::default()).unwrap();
        let mut union: Vec<usize> = (0..40).filter(|&i| sel.alpha[i] != 0.0 || sel.beta[i] != 0.0).collect();
        let mut got = sel.confounders.clone();
        got.sort_unstable();
        union.sort_unstable();
        assert_eq!(got, union);
        for w in sel.confounders.windows(2) {
            assert!(sel.importance[w[0]] >= sel.importance[w[1]]);
        }
    }

    #[test]
    fn sisis_roles_partition_the_screened_sets() {
        let data = generate(&small(4)).unwrap();
        let prep = prepare(data.x.clone(), data.d.view(), data.y.view()).unwrap();
        let sel =
            select_confounders(Method::Sisis, prep.x.view(), prep.d.view(), prep.y.view(), &MethodOptions::default()).unwrap();
        for i in &sel.confounders {
            assert!(!sel.treatment_predictors.contains(i) && !sel.outcome_predictors.contains(i));
            assert!(sel.alpha[*i] != 0.0 && sel.beta[*i] != 0.0);
        }
    }

    #[test]
    fn silasso_on_a_small_scenario() {
        let data = generate(&small(5)).unwrap();
        let prep = prepare(data.x.clone(), data.d.view(), data.y.view()).unwrap();
        let sel =
            select_confounders(Method::Silasso, prep.x.view(), prep.d.view(), prep.y.view(), &MethodOptions::default()).unwrap();
        let m = compute_metrics(&sel.confounders, &data.roles);
        assert_eq!(m.tn, 3, "{:?}", sel.confounders);
        assert_eq!(m.cn, Some(3), "{:?}", sel.confounders);
        assert!(sel.diagnostics.objective_final.is_some());
        for &i in &sel.confounders {
            assert!(sel.alpha[i] != 0.0 && sel.beta[i] != 0.0);
        }
    }

    #[test]
    fn benchmark_is_deterministic_and_ordered() {
        let cfg = small(6);
        let methods = [Method::Ols, Method::Dlasso, Method::Sisis];
        let a = run_benchmark(&cfg, &methods, 3, &MethodOptions::default()).unwrap();
        let b = run_benchmark(&cfg, &methods, 3, &MethodOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 9);
        for (k, r) in a.records.iter().enumerate() {
            assert_eq!(r.replication, k / 3);
            assert_eq!(r.method, methods[k % 3]);
            assert_eq!(r.seed, child_seed(6, (k / 3) as u64));
        }
        assert_eq!(a.summaries.len(), 3);
        assert!(a.summaries.iter().all(|s| s.runs == 3 && s.failures == 0));
    }

    #[test]
    fn failures_are_recorded_not_fatal() {
        // Two rows leave no room for the screening target.
        let cfg = ScenarioConfig { n: 2, ..small(7) };
        let report = run_benchmark(&cfg, &[Method::Sisis], 2, &MethodOptions::default()).unwrap();
        assert_eq!(report.summaries[0].failures, 2);
        assert!(report.records.iter().all(|r| r.error.is_some()));
    }
}
