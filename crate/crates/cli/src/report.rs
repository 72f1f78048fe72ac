use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use siconf_core::benchmark::{BenchmarkReport, Diagnostics, Method, MethodSelection};
use siconf_core::{EffectEstimate, Role, ScenarioConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// The resolved invocation, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub input_path: Option<String>,
    pub method: Option<String>,
    pub hyperparameters: BTreeMap<String, String>,
    pub output_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableEntry {
    pub index: usize,
    pub name: String,
    pub alpha: f64,
    pub beta: f64,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SelectionBlock {
    pub confounders: Vec<VariableEntry>,
    pub treatment_predictors: Vec<VariableEntry>,
    pub outcome_predictors: Vec<VariableEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub method: Method,
    pub config: RunConfig,
    pub selection: SelectionBlock,
    pub effect: Option<EffectEstimate>,
    pub diagnostics: Diagnostics,
}

impl SelectionReport {
    pub fn new(sel: &MethodSelection, names: &[String], config: RunConfig, effect: Option<EffectEstimate>) -> Self {
        let entry = |i: usize| VariableEntry {
            index: i,
            name: names[i].clone(),
            alpha: sel.alpha[i],
            beta: sel.beta[i],
            importance: sel.importance[i],
        };
        let entries = |idx: &[usize]| idx.iter().map(|&i| entry(i)).collect();
        Self {
            method: sel.method,
            config,
            selection: SelectionBlock {
                confounders: entries(&sel.confounders),
                treatment_predictors: entries(&sel.treatment_predictors),
                outcome_predictors: entries(&sel.outcome_predictors),
            },
            effect,
            diagnostics: sel.diagnostics,
        }
    }
}

/// Pretty JSON whose floats are always written with 17 significant digits.
struct FixedDigits<'a>(PrettyFormatter<'a>);

impl Formatter for FixedDigits<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedDigits(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(buf)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes to `path`, or to stdout when `path` is `None`.
pub fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| CliError::io(p, e)),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Csv(e.to_string());
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Csv(e.to_string()))
}

/// Selection rows, one per variable with a role.
pub fn selection_csv(report: &SelectionReport) -> Result<Vec<u8>> {
    let block = &report.selection;
    let tagged = [
        ("confounder", &block.confounders),
        ("treatment_predictor", &block.treatment_predictors),
        ("outcome_predictor", &block.outcome_predictors),
    ];
    let rows = tagged.into_iter().flat_map(|(role, entries)| {
        entries.iter().map(move |e| {
            vec![role.to_string(), e.index.to_string(), e.name.clone(), fmt_f64(e.alpha), fmt_f64(e.beta), fmt_f64(e.importance)]
        })
    });
    csv_bytes(&["role", "index", "name", "alpha", "beta", "importance"], rows)
}

pub fn emit_results(report: &SelectionReport, path: Option<&Path>, format: Format) -> Result<()> {
    let bytes = match format {
        Format::Json => to_json(report)?,
        Format::Csv => selection_csv(report)?,
    };
    write_output(path, &bytes)
}

/// One `(alpha_i, beta_i, truth_role)` row per covariate; the role column is
/// empty when the truth is unknown.
pub fn write_scatter(path: &Path, sel: &MethodSelection, names: &[String], roles: Option<&[Role]>) -> Result<()> {
    let rows = (0..sel.alpha.len()).map(|i| {
        vec![
            i.to_string(),
            names[i].clone(),
            fmt_f64(sel.alpha[i]),
            fmt_f64(sel.beta[i]),
            roles.map_or(String::new(), |r| r[i].as_str().to_string()),
        ]
    });
    let bytes = csv_bytes(&["index", "name", "alpha", "beta", "truth_role"], rows)?;
    write_output(Some(path), &bytes)
}

/// Generating parameters written next to simulated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub config: ScenarioConfig,
    pub roles: Vec<Role>,
    pub alpha_true: Vec<f64>,
    pub beta_true: Vec<f64>,
}

impl TruthFile {
    pub fn read(path: &PathBuf) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_slice(&text)?)
    }
}

/// Per-method summary rows.
pub fn benchmark_csv(report: &BenchmarkReport) -> Result<Vec<u8>> {
    let opt = |v: Option<f64>| v.map_or(String::new(), fmt_f64);
    let rows = report.summaries.iter().map(|s| {
        vec![
            s.method.as_str().to_string(),
            s.runs.to_string(),
            s.failures.to_string(),
            opt(s.median_sn),
            opt(s.median_tn),
            opt(s.median_cn),
            s.cn_defined.to_string(),
            s.full_recovery.to_string(),
            opt(s.gamma_bias),
            opt(s.gamma_rmse),
        ]
    });
    csv_bytes(
        &[
            "method",
            "runs",
            "failures",
            "median_sn",
            "median_tn",
            "median_cn",
            "cn_defined",
            "full_recovery",
            "gamma_bias",
            "gamma_rmse",
        ],
        rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn config() -> RunConfig {
        RunConfig {
            command: "select".into(),
            input_path: Some("data.csv".into()),
            method: Some("silasso".into()),
            hyperparameters: BTreeMap::from([("eps".to_string(), "1e-6".to_string())]),
            output_path: None,
        }
    }

    fn selection(confounders: Vec<usize>) -> MethodSelection {
        MethodSelection {
            method: Method::Silasso,
            alpha: array![0.5, 0.0, -0.25],
            beta: array![0.1, 0.2, 0.3],
            importance: array![0.05, 0.0, 0.075],
            confounders,
            treatment_predictors: Vec::new(),
            outcome_predictors: vec![1],
            gamma_hat: None,
            diagnostics: Diagnostics { iterations: 4, converged: true, objective_final: Some(12.5) },
        }
    }

    fn names() -> Vec<String> {
        vec!["age".into(), "bmi".into(), "dose".into()]
    }

    #[test]
    fn empty_selection_is_valid_json() {
        let mut sel = selection(Vec::new());
        sel.outcome_predictors.clear();
        let report = SelectionReport::new(&sel, &names(), config(), None);
        let value: serde_json::Value = serde_json::from_slice(&to_json(&report).unwrap()).unwrap();
        assert_eq!(value["selection"]["confounders"], serde_json::json!([]));
        assert_eq!(value["selection"]["treatment_predictors"], serde_json::json!([]));
        assert!(value["effect"].is_null());
    }

    #[test]
    fn json_round_trip_is_identical() {
        let effect = EffectEstimate {
            estimate: 1.0 / 3.0,
            std_error: Some(0.1),
            estimator: siconf_core::Estimator::Adjusted,
            n_used: 50,
            warnings: Vec::new(),
        };
        let report = SelectionReport::new(&selection(vec![2, 0]), &names(), config(), Some(effect));
        let bytes = to_json(&report).unwrap();
        let back: SelectionReport = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back, report);
        assert_eq!(to_json(&back).unwrap(), bytes);
    }

    #[test]
    fn floats_carry_seventeen_digits() {
        let text = String::from_utf8(to_json(&vec![0.1, 1.0, -2.5e-300]).unwrap()).unwrap();
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
        assert!(text.contains("1.0000000000000000e0"));
        assert!(text.contains("-2.5000000000000000e-300"));
    }

    #[test]
    fn names_follow_indices() {
        let report = SelectionReport::new(&selection(vec![2, 0]), &names(), config(), None);
        let got: Vec<&str> = report.selection.confounders.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(got, vec!["dose", "age"]);
        assert_eq!(report.selection.outcome_predictors[0].name, "bmi");
    }

    #[test]
    fn csv_flattens_roles() {
        let report = SelectionReport::new(&selection(vec![2, 0]), &names(), config(), None);
        let text = String::from_utf8(selection_csv(&report).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "role,index,name,alpha,beta,importance");
        assert!(lines[1].starts_with("confounder,2,dose,"));
        assert!(lines[3].starts_with("outcome_predictor,1,bmi,"));
        assert_eq!(lines.len(), 4);
    }
}
