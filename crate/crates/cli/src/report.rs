//! Outcomes, tables and the JSON report.

use std::collections::BTreeMap;
use std::io::Write;

use flowlab_core::flow::fmt17;
use flowlab_core::{commutator, continuity, flow, gaussian, ou, stats};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

/// Key of the report field that varies between otherwise identical runs.
pub const TIMESTAMP_KEY: &str = "timestamp";

/// One invariant evaluated by an experiment. Checks with `enforced = false`
/// are reported but do not affect the exit code.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub pass: bool,
    pub enforced: bool,
}

impl Check {
    /// `value <= bound`.
    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        Self { name: name.into(), value, bound, pass: value <= bound, enforced: true }
    }

    pub fn new(name: impl Into<String>, value: f64, bound: f64, pass: bool) -> Self {
        Self { name: name.into(), value, bound, pass, enforced: true }
    }

    pub fn informational(mut self) -> Self {
        self.enforced = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Self::Num(v) if v.is_nan() => String::new(),
            Self::Num(v) => fmt17(*v),
            Self::Int(v) => v.to_string(),
            Self::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Self::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Self::Int(v as u64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Self::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Self::Text(v)
    }
}

/// A CSV table; numbers are written with 17 significant digits, `NaN` as an
/// empty cell.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CliError> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub parameter: f64,
    pub metric: f64,
    pub std_error: f64,
    /// Empirical order against the previous row; `None` on the first row.
    pub rate: Option<f64>,
}

/// Builds rows with `rate_i = log(m_{i-1}/m_i) / log(h_{i-1}/h_i)`.
pub fn convergence_rows(params: &[f64], metrics: &[(f64, f64)]) -> Vec<ConvergenceRow> {
    let means: Vec<f64> = metrics.iter().map(|m| m.0).collect();
    let orders = stats::empirical_orders(params, &means);
    params
        .iter()
        .zip(metrics)
        .enumerate()
        .map(|(i, (&parameter, &(metric, std_error)))| ConvergenceRow {
            parameter,
            metric,
            std_error,
            rate: if i == 0 { None } else { Some(orders[i - 1]).filter(|v| v.is_finite()) },
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub results: serde_json::Value,
    pub table: Table,
    /// `(sweep key, rows)` for sweep experiments.
    pub convergence: Option<(String, Vec<ConvergenceRow>)>,
}

impl Outcome {
    pub fn pass(&self) -> bool {
        self.checks.iter().filter(|c| c.enforced).all(|c| c.pass)
    }

    /// The table written to `<prefix>.table.csv`: the convergence table for
    /// sweeps, the experiment's own table otherwise.
    pub fn csv_table(&self) -> Table {
        match &self.convergence {
            None => self.table.clone(),
            Some((_, rows)) => {
                let mut t = Table::new(&["parameter", "metric", "rate", "metric_std_error"]);
                for r in rows {
                    t.push(vec![
                        r.parameter.into(),
                        r.metric.into(),
                        r.rate.unwrap_or(f64::NAN).into(),
                        r.std_error.into(),
                    ]);
                }
                t
            }
        }
    }
}

/// All invariant tolerances of the core modules.
pub fn tolerances() -> BTreeMap<&'static str, f64> {
    BTreeMap::from([
        ("confidence_sigmas", stats::CONFIDENCE_SIGMAS),
        ("cancellation", gaussian::CANCELLATION_TOLERANCE),
        ("ou_identity", ou::IDENTITY_TOLERANCE),
        ("log_jacobian", flow::LOG_JACOBIAN_TOLERANCE),
        ("exact_semigroup", flow::EXACT_SEMIGROUP_TOLERANCE),
        ("rk4_order", flow::RK4_ORDER),
        ("order_tolerance", flow::ORDER_TOLERANCE),
        ("duhamel", flow::DUHAMEL_TOLERANCE),
        ("smooth_stability", flow::SMOOTH_STABILITY_TOLERANCE),
        ("machine_precision", flow::MACHINE_PRECISION_TOLERANCE),
        ("limit_ratio", commutator::LIMIT_RATIO),
        ("limit_monotone_sigmas", commutator::LIMIT_MONOTONE_SIGMAS),
        ("limit_floor", commutator::LIMIT_FLOOR),
        ("commutator_closed_form", commutator::CLOSED_FORM_TOLERANCE),
        ("renormalization", continuity::RENORMALIZATION_TOLERANCE),
    ])
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub flowlab_version: &'static str,
    pub build_id: &'static str,
    pub experiment: crate::ExperimentKind,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub tolerances: BTreeMap<&'static str, f64>,
    pub pass: bool,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_table: Option<ConvergenceTable>,
    pub results: serde_json::Value,
    pub timestamp: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub key: String,
    pub rows: Vec<ConvergenceRow>,
}

impl Report {
    pub fn new(cfg: &ExperimentConfig, outcome: &Outcome) -> Result<Self, CliError> {
        Ok(Self {
            flowlab_version: env!("CARGO_PKG_VERSION"),
            build_id: env!("FLOWLAB_BUILD_ID"),
            experiment: cfg.experiment,
            seed: cfg.seed,
            config: cfg.clone(),
            tolerances: tolerances(),
            pass: outcome.pass(),
            checks: outcome.checks.clone(),
            convergence_table: outcome
                .convergence
                .as_ref()
                .map(|(key, rows)| ConvergenceTable { key: key.clone(), rows: rows.clone() }),
            results: outcome.results.clone(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        })
    }

    /// Pretty JSON terminated by a single LF.
    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Parses report JSON and drops the timestamp, for run-to-run comparison.
pub fn strip_timestamp(report_json: &str) -> Result<serde_json::Value, CliError> {
    let mut v: serde_json::Value = serde_json::from_str(report_json)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove(TIMESTAMP_KEY);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_formatting() {
        let mut t = Table::new(&["a", "b", "c"]);
        t.push(vec![0.1.into(), f64::NAN.into(), "x".into()]);
        t.push(vec![1e-300.into(), 3usize.into(), (-2.5).into()]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "a,b,c\n1.0000000000000001e-1,,x\n1.0000000000000000e-300,3,-2.5000000000000000e0\n");
        for line in s.lines().skip(1) {
            let v: f64 = line.split(',').next().unwrap().parse().unwrap();
            assert!(v == 0.1 || v == 1e-300);
        }
    }

    #[test]
    fn rates() {
        let rows = convergence_rows(&[0.1, 0.05, 0.025], &[(1e-4, 0.0), (6.25e-6, 0.0), (3.90625e-7, 0.0)]);
        assert!(rows[0].rate.is_none());
        assert!((rows[1].rate.unwrap() - 4.0).abs() < 1e-12);
        assert!((rows[2].rate.unwrap() - 4.0).abs() < 1e-12);
        let zero = convergence_rows(&[1.0, 2.0, 3.0], &[(0.0, 0.0), (0.0, 0.0), (0.0, 0.0)]);
        assert!(zero.iter().all(|r| r.rate.is_none()));
    }

    #[test]
    fn informational_checks_do_not_fail() {
        let outcome = Outcome {
            checks: vec![Check::at_most("a", 1.0, 2.0), Check::at_most("b", 3.0, 2.0).informational()],
            results: serde_json::Value::Null,
            table: Table::default(),
            convergence: None,
        };
        assert!(outcome.pass());
    }
}
