use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use siconf_core::benchmark::{prepare, run_benchmark, select_confounders, Method, MethodOptions, MethodSelection};
use siconf_core::linalg::lambda_grid;
use siconf_core::silasso::{FitOptions, SilassoOptions};
use siconf_core::{adjusted_effect, dr_ate, generate, iv_adaptive, iv_median, EffectEstimate, ScenarioConfig};

use crate::error::{CliError, Result, EXIT_CODES};
use crate::ingest::{ingest_csv, write_dataset_csv, Dataset};
use crate::report::{
    benchmark_csv, emit_results, to_json, write_output, write_scatter, Format, RunConfig, SelectionReport, TruthFile,
};

pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Parser)]
#[command(name = "siconf", version, about = "Confounder selection and treatment-effect estimation", after_help = EXIT_CODES)]
pub struct Cli {
    /// Random seed; the SICONF_SEED environment variable sets the default.
    #[arg(long, global = true, env = "SICONF_SEED", default_value_t = DEFAULT_SEED)]
    pub seed: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulation scenario and write it as CSV.
    Simulate(SimulateArgs),
    /// Select confounders from a CSV file.
    Select(SelectArgs),
    /// Select confounders, then estimate the treatment effect.
    Estimate(EstimateArgs),
    /// Compare selection methods over seeded replications.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Preset scenario; explicit dimensions below override its fields.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub scenario: Option<u8>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p1: Option<usize>,
    #[arg(long)]
    pub p2: Option<usize>,
    #[arg(long)]
    pub p3: Option<usize>,
    #[arg(long)]
    pub p4: Option<usize>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

impl ScenarioArgs {
    pub fn resolve(&self, seed: u64) -> Result<ScenarioConfig> {
        let base = match self.scenario {
            Some(s) => ScenarioConfig::preset(s, seed).expect("range checked by the parser"),
            None => {
                let need = |v: Option<usize>, flag: &str| {
                    v.ok_or_else(|| CliError::Usage(format!("--{flag} is required without --scenario")))
                };
                ScenarioConfig {
                    n: need(self.n, "n")?,
                    p1: need(self.p1, "p1")?,
                    p2: need(self.p2, "p2")?,
                    p3: need(self.p3, "p3")?,
                    p4: need(self.p4, "p4")?,
                    sigma2: 1.0,
                    rho: 0.2,
                    gamma_true: 1.0,
                    seed,
                }
            }
        };
        let cfg = ScenarioConfig {
            n: self.n.unwrap_or(base.n),
            p1: self.p1.unwrap_or(base.p1),
            p2: self.p2.unwrap_or(base.p2),
            p3: self.p3.unwrap_or(base.p3),
            p4: self.p4.unwrap_or(base.p4),
            sigma2: self.sigma2.unwrap_or(base.sigma2),
            rho: self.rho.unwrap_or(base.rho),
            gamma_true: self.gamma.unwrap_or(base.gamma_true),
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn record(&self, cfg: &ScenarioConfig, params: &mut BTreeMap<String, String>) {
        if let Some(s) = self.scenario {
            params.insert("scenario".into(), s.to_string());
        }
        for (k, v) in [("n", cfg.n), ("p1", cfg.p1), ("p2", cfg.p2), ("p3", cfg.p3), ("p4", cfg.p4)] {
            params.insert(k.into(), v.to_string());
        }
        params.insert("rho".into(), cfg.rho.to_string());
        params.insert("sigma2".into(), cfg.sigma2.to_string());
        params.insert("gamma".into(), cfg.gamma_true.to_string());
    }
}

/// `lo:hi:count`, a log-spaced penalty grid from `hi` down to `lo`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaGrid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl FromStr for LambdaGrid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lo, hi, count] = parts[..] else {
            return Err(format!("expected lo:hi:count, got '{s}'"));
        };
        let lo: f64 = lo.parse().map_err(|_| format!("bad lower bound '{lo}'"))?;
        let hi: f64 = hi.parse().map_err(|_| format!("bad upper bound '{hi}'"))?;
        let count: usize = count.parse().map_err(|_| format!("bad count '{count}'"))?;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) || count == 0 {
            return Err(format!("need 0 < lo <= hi and count >= 1, got '{s}'"));
        }
        Ok(Self { lo, hi, count })
    }
}

impl LambdaGrid {
    pub fn values(&self) -> Vec<f64> {
        lambda_grid(self.hi, self.count, self.lo / self.hi)
    }
}

#[derive(Debug, Clone, Args)]
pub struct TuningArgs {
    /// Explicit penalty grid for the selection lasso, as lo:hi:count.
    #[arg(long)]
    pub lambda_grid: Option<LambdaGrid>,
    /// Relative objective change that ends coordinate descent.
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,
    /// Maximum outer iterations of coordinate descent.
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Coefficients at or below this magnitude count as zero.
    #[arg(long, default_value_t = 1e-6)]
    pub threshold: f64,
}

impl TuningArgs {
    pub fn method_options(&self) -> Result<MethodOptions> {
        if self.eps.is_nan() || self.eps <= 0.0 || self.max_iter == 0 || self.threshold.is_nan() || self.threshold < 0.0 {
            return Err(CliError::Usage("need --eps > 0, --max-iter >= 1 and --threshold >= 0".into()));
        }
        let silasso = SilassoOptions {
            fit: FitOptions { eps: self.eps, max_iter: self.max_iter },
            grid: self.lambda_grid.map(|g| g.values()),
            threshold: self.threshold,
            ..SilassoOptions::default()
        };
        Ok(MethodOptions { silasso, sisis: None })
    }

    fn record(&self, params: &mut BTreeMap<String, String>) {
        if let Some(g) = self.lambda_grid {
            params.insert("lambda_grid".into(), format!("{}:{}:{}", g.lo, g.hi, g.count));
        }
        params.insert("eps".into(), self.eps.to_string());
        params.insert("max_iter".into(), self.max_iter.to_string());
        params.insert("threshold".into(), self.threshold.to_string());
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    /// Data file with columns y, d, x1..xp.
    #[arg(long)]
    pub emit_csv: PathBuf,
    /// JSON file with the covariate roles and true coefficients.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Ols,
    Dlasso,
    Sisis,
    Silasso,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ols => Method::Ols,
            MethodArg::Dlasso => Method::Dlasso,
            MethodArg::Sisis => Method::Sisis,
            MethodArg::Silasso => Method::Silasso,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "y")]
    pub outcome: String,
    #[arg(long, default_value = "d")]
    pub treatment: String,
    #[arg(long, value_enum, default_value_t = MethodArg::Silasso)]
    pub method: MethodArg,
    /// Report destination; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Also write per-covariate (alpha, beta, truth_role) rows here.
    #[arg(long)]
    pub scatter: Option<PathBuf>,
    /// Truth file from `simulate --truth`, used to label scatter rows.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    /// Regression adjustment for the selected confounders.
    Adjusted,
    /// Doubly robust ATE; needs a 0/1 treatment.
    Dr,
    /// Median of instrument ratios over the selected treatment predictors.
    Ivmedian,
    /// Adaptive-lasso IV over the selected treatment predictors.
    Ivadaptive,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub select: SelectArgs,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Adjusted)]
    pub estimator: EstimatorArg,
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value_t = 10)]
    pub replications: usize,
    /// Methods to compare, comma separated; all four by default.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub method: Vec<MethodArg>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate(&args, cli.seed),
        Command::Select(args) => {
            let (report, _) = select(&args, cli.seed, None)?;
            emit_results(&report, args.output.as_deref(), args.format)
        }
        Command::Estimate(args) => {
            let (report, _) = select(&args.select, cli.seed, Some(args.estimator))?;
            emit_results(&report, args.select.output.as_deref(), args.select.format)
        }
        Command::Benchmark(args) => benchmark(&args, cli.seed),
    }
}

pub fn simulate(args: &SimulateArgs, seed: u64) -> Result<()> {
    let cfg = args.scenario.resolve(seed)?;
    let data = generate(&cfg)?;
    let names: Vec<String> = (1..=cfg.p()).map(|j| format!("x{j}")).collect();
    write_dataset_csv(&args.emit_csv, &data.y, &data.d, &data.x, &names)?;
    if let Some(path) = &args.truth {
        let truth = TruthFile {
            config: cfg,
            roles: data.roles.clone(),
            alpha_true: data.alpha_true.to_vec(),
            beta_true: data.beta_true.to_vec(),
        };
        write_output(Some(path), &to_json(&truth)?)?;
    }
    Ok(())
}

fn estimate_effect(estimator: EstimatorArg, data: &Dataset, sel: &MethodSelection) -> Result<EffectEstimate> {
    let (y, d, x) = (data.y.view(), data.d.view(), data.x.view());
    let instruments = || {
        if sel.treatment_predictors.is_empty() {
            return Err(CliError::Core(siconf_core::Error::InvalidInput(
                "the selection found no treatment predictors to use as instruments".into(),
            )));
        }
        let prepared = prepare(x.select(ndarray::Axis(1), &sel.treatment_predictors), d, y)?;
        Ok(prepared)
    };
    Ok(match estimator {
        EstimatorArg::Adjusted => adjusted_effect(y, d, x, &sel.confounders, &[])?,
        EstimatorArg::Dr => dr_ate(y, d, x.select(ndarray::Axis(1), &sel.confounders).view())?,
        EstimatorArg::Ivmedian => {
            let p = instruments()?;
            iv_median(p.y.view(), p.d.view(), p.x.view())?.0
        }
        EstimatorArg::Ivadaptive => {
            let p = instruments()?;
            iv_adaptive(p.y.view(), p.d.view(), p.x.view(), None, 1.0)?.estimate
        }
    })
}

/// Runs selection (and estimation when `estimator` is given) on the input
/// file; writes the scatter file if requested.
pub fn select(args: &SelectArgs, seed: u64, estimator: Option<EstimatorArg>) -> Result<(SelectionReport, MethodSelection)> {
    let data = ingest_csv(&args.input, &args.outcome, &args.treatment)?;
    let truth = args.truth.as_ref().map(TruthFile::read).transpose()?;
    if let Some(t) = &truth {
        if t.roles.len() != data.x.ncols() {
            return Err(CliError::Usage(format!("truth file has {} roles for {} covariates", t.roles.len(), data.x.ncols())));
        }
    }
    let opts = args.tuning.method_options()?;
    let method: Method = args.method.into();
    let prepared = prepare(data.x.clone(), data.d.view(), data.y.view())?;
    let sel = select_confounders(method, prepared.x.view(), prepared.d.view(), prepared.y.view(), &opts)?;
    let effect = estimator.map(|e| estimate_effect(e, &data, &sel)).transpose()?;

    let mut params = BTreeMap::new();
    params.insert("seed".to_string(), seed.to_string());
    params.insert("outcome".to_string(), args.outcome.clone());
    params.insert("treatment".to_string(), args.treatment.clone());
    if let Some(e) = estimator {
        params.insert("estimator".to_string(), e.to_possible_value().expect("no skipped variants").get_name().to_string());
    }
    args.tuning.record(&mut params);
    let config = RunConfig {
        command: if estimator.is_some() { "estimate" } else { "select" }.to_string(),
        input_path: Some(path_string(&args.input)),
        method: Some(method.as_str().to_string()),
        hyperparameters: params,
        output_path: args.output.as_deref().map(path_string),
    };
    if let Some(path) = &args.scatter {
        write_scatter(path, &sel, &data.covariate_names, truth.as_ref().map(|t| t.roles.as_slice()))?;
    }
    Ok((SelectionReport::new(&sel, &data.covariate_names, config, effect), sel))
}

pub fn benchmark(args: &BenchmarkArgs, seed: u64) -> Result<()> {
    if args.replications == 0 {
        return Err(CliError::Usage("--replications must be at least 1".into()));
    }
    let cfg = args.scenario.resolve(seed)?;
    let methods: Vec<Method> =
        if args.method.is_empty() { Method::ALL.to_vec() } else { args.method.iter().map(|&m| m.into()).collect() };
    let report = run_benchmark(&cfg, &methods, args.replications, &args.tuning.method_options()?)?;
    let bytes = match args.format {
        Format::Json => {
            let mut params = BTreeMap::new();
            params.insert("seed".to_string(), seed.to_string());
            params.insert("replications".to_string(), args.replications.to_string());
            args.scenario.record(&cfg, &mut params);
            args.tuning.record(&mut params);
            let config = RunConfig {
                command: "benchmark".into(),
                input_path: None,
                method: Some(methods.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(",")),
                hyperparameters: params,
                output_path: args.output.as_deref().map(path_string),
            };
            to_json(&serde_json::json!({ "config": config, "report": report }))?
        }
        Format::Csv => benchmark_csv(&report)?,
    };
    write_output(args.output.as_deref(), &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_grid_parses_and_spans_the_bounds() {
        let g: LambdaGrid = "0.01:10:4".parse().unwrap();
        let v = g.values();
        assert_eq!(v.len(), 4);
        assert!((v[0] - 10.0).abs() < 1e-12 && (v[3] - 0.01).abs() < 1e-12);
        assert!("1:0.5:3".parse::<LambdaGrid>().is_err());
        assert!("0:1:3".parse::<LambdaGrid>().is_err());
        assert!("1:2".parse::<LambdaGrid>().is_err());
    }

    #[test]
    fn explicit_dimensions_need_every_block() {
        let args = ScenarioArgs {
            scenario: None,
            n: Some(100),
            p1: Some(2),
            p2: None,
            p3: Some(2),
            p4: Some(2),
            rho: None,
            sigma2: None,
            gamma: None,
        };
        assert!(matches!(args.resolve(1), Err(CliError::Usage(_))));
        let full = ScenarioArgs { p2: Some(3), ..args };
        assert_eq!(full.resolve(1).unwrap().p(), 9);
    }

    #[test]
    fn preset_fields_can_be_overridden() {
        let args = ScenarioArgs {
            scenario: Some(3),
            n: Some(200),
            p1: None,
            p2: None,
            p3: None,
            p4: None,
            rho: Some(0.5),
            sigma2: None,
            gamma: None,
        };
        let cfg = args.resolve(9).unwrap();
        assert_eq!((cfg.n, cfg.p(), cfg.rho, cfg.seed), (200, 1500, 0.5, 9));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    fn invoke(args: &[&str]) -> Result<()> {
        let mut argv = vec!["siconf"];
        argv.extend(args);
        run(Cli::try_parse_from(argv).map_err(|e| CliError::Usage(e.to_string()))?)
    }

    fn small_csv(dir: &Path) -> String {
        let path = dir.join("data.csv").to_str().unwrap().to_string();
        invoke(&[
            "simulate",
            "--n",
            "120",
            "--p1",
            "3",
            "--p2",
            "5",
            "--p3",
            "5",
            "--p4",
            "7",
            "--seed",
            "3",
            "--emit-csv",
            &path,
        ])
        .unwrap();
        path
    }

    #[test]
    fn simulate_then_ingest_reproduces_generator() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s1.csv");
        invoke(&["simulate", "--scenario", "1", "--seed", "17", "--emit-csv", path.to_str().unwrap()]).unwrap();
        let data = ingest_csv(&path, "y", "d").unwrap();
        let truth = generate(&ScenarioConfig::preset(1, 17).unwrap()).unwrap();
        assert_eq!(data.x.dim(), truth.x.dim());
        let max_diff = |a: ndarray::ArrayViewD<f64>, b: ndarray::ArrayViewD<f64>| {
            a.iter().zip(b.iter()).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()))
        };
        assert!(max_diff(data.x.view().into_dyn(), truth.x.view().into_dyn()) <= 1e-12);
        assert!(max_diff(data.y.view().into_dyn(), truth.y.view().into_dyn()) <= 1e-12);
        assert!(max_diff(data.d.view().into_dyn(), truth.d.view().into_dyn()) <= 1e-12);
        assert_eq!(data.covariate_names[0], "x1");
    }

    #[test]
    fn na_cell_maps_to_the_parse_code() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("na.csv");
        let mut text = "y,d,x1,x2\n".to_string();
        for i in 0..12 {
            let x1 = if i == 5 { "NA".to_string() } else { i.to_string() };
            text.push_str(&format!("{i},1,{x1},2\n"));
        }
        std::fs::write(&path, text).unwrap();
        let err = invoke(&["select", "--input", path.to_str().unwrap()]).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        let msg = err.to_string();
        assert!(msg.contains("line 7") && msg.contains("'x1'") && msg.contains("'NA'"), "{msg}");
    }

    #[test]
    fn input_errors_have_distinct_codes() {
        let dir = tempfile::tempdir().unwrap();
        let data = small_csv(dir.path());
        assert_eq!(invoke(&["select", "--input", &data, "--treatment", "z"]).unwrap_err().exit_code(), 6);
        assert_eq!(invoke(&["select", "--input", "/nonexistent/file.csv"]).unwrap_err().exit_code(), 3);
        assert_eq!(invoke(&["simulate", "--scenario", "4", "--emit-csv", "x.csv"]).unwrap_err().exit_code(), 2);
        let short = dir.path().join("short.csv");
        std::fs::write(&short, "y,d,x1\n1,0,2\n3,1,4\n").unwrap();
        assert_eq!(invoke(&["select", "--input", short.to_str().unwrap()]).unwrap_err().exit_code(), 7);
    }

    #[test]
    fn help_documents_exit_codes() {
        use clap::CommandFactory;
        let text = Cli::command().render_long_help().to_string();
        assert!(text.contains("Exit codes:") && text.contains("no usable instrument"));
    }

    #[test]
    fn json_report_has_documented_shape() {
        let dir = tempfile::tempdir().unwrap();
        let data = small_csv(dir.path());
        let out = dir.path().join("est.json");
        invoke(&[
            "estimate",
            "--input",
            &data,
            "--method",
            "sisis",
            "--estimator",
            "adjusted",
            "--output",
            out.to_str().unwrap(),
        ])
        .unwrap();
        let v: serde_json::Value = serde_json::from_slice(&std::fs::read(out).unwrap()).unwrap();
        for key in ["method", "config", "selection", "effect", "diagnostics"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        for key in ["confounders", "treatment_predictors", "outcome_predictors"] {
            assert!(v["selection"][key].is_array());
        }
        assert!(v["effect"]["estimate"].is_f64());
        assert_eq!(v["effect"]["estimator"], "adjusted");
        assert!(v["diagnostics"]["iterations"].is_u64());
    }

    #[test]
    fn csv_format_writes_selection_rows() {
        let dir = tempfile::tempdir().unwrap();
        let data = small_csv(dir.path());
        let out = dir.path().join("sel.csv");
        invoke(&["select", "--input", &data, "--method", "ols", "--format", "csv", "--output", out.to_str().unwrap()]).unwrap();
        let text = std::fs::read_to_string(out).unwrap();
        assert!(text.starts_with("role,index,name,alpha,beta,importance\n"));
        assert_eq!(text.lines().count(), 1 + 20);
    }
}
