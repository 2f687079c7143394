//! Experiment configuration: JSON schema types and validation.

use std::path::Path;

use flowlab_core::commutator::TestScalar;
use flowlab_core::field::conjugate;
use flowlab_core::gaussian::MAX_NODES;
use flowlab_core::{FieldDescriptor, FieldSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    DensityBound,
    CommutatorSweep,
    Semigroup,
    Stability,
    DimensionConsistency,
    RotatedFlow,
    OuProperties,
    CancellationIdentities,
}

impl ExperimentKind {
    pub fn needs_field(self) -> bool {
        !matches!(self, Self::OuProperties | Self::CancellationIdentities)
    }

    /// Sweep keys the experiment accepts.
    pub fn sweep_keys(self) -> &'static [SweepKey] {
        match self {
            Self::DensityBound | Self::CommutatorSweep => &[SweepKey::K],
            Self::Semigroup => &[SweepKey::Dt],
            Self::Stability => &[SweepKey::NSmoothing],
            Self::DimensionConsistency => &[SweepKey::N],
            Self::RotatedFlow | Self::OuProperties | Self::CancellationIdentities => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepKey {
    #[serde(rename = "dt")]
    Dt,
    #[serde(rename = "K")]
    K,
    #[serde(rename = "N")]
    N,
    #[serde(rename = "n_smoothing")]
    NSmoothing,
}

impl SweepKey {
    pub fn name(self) -> &'static str {
        match self {
            Self::Dt => "dt",
            Self::K => "K",
            Self::N => "N",
            Self::NSmoothing => "n_smoothing",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub key: SweepKey,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureBlock {
    /// Gauss–Hermite nodes per axis for Mehler integrals (dim ≤ 4).
    #[serde(default = "default_inner_nodes")]
    pub nodes_per_axis: usize,
    /// Monte Carlo samples for Mehler integrals above dimension 4.
    #[serde(default = "default_inner_samples")]
    pub mc_samples: usize,
    /// Gauss–Hermite nodes per axis for norms and bounds (dim ≤ 4).
    #[serde(default = "default_norm_nodes")]
    pub norm_nodes_per_axis: usize,
    /// Monte Carlo samples for norms and bounds above dimension 4.
    #[serde(default = "default_norm_samples")]
    pub norm_samples: usize,
}

impl Default for QuadratureBlock {
    fn default() -> Self {
        Self {
            nodes_per_axis: default_inner_nodes(),
            mc_samples: default_inner_samples(),
            norm_nodes_per_axis: default_norm_nodes(),
            norm_samples: default_norm_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentOptions {
    /// Density-bound exponents; defaults to `{2, p', q'}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_values: Option<Vec<f64>>,
    #[serde(default = "default_eps_grid")]
    pub eps_grid: Vec<f64>,
    #[serde(default = "default_test_scalars")]
    pub test_scalars: Vec<TestScalar>,
    /// `[r, s, t]` for the semigroup experiment; defaults to `[0, T/2, T]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<[f64; 3]>,
    /// RK4 steps per solve for the semigroup experiment.
    #[serde(default = "default_step_counts")]
    pub step_counts: Vec<usize>,
    #[serde(default = "default_smoothing_n")]
    pub smoothing_n: Vec<f64>,
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    #[serde(default = "default_omega")]
    pub rotation_omega: f64,
    #[serde(default = "default_matrices")]
    pub random_matrices: usize,
    #[serde(default = "default_identity_samples")]
    pub identity_samples: usize,
    #[serde(default = "default_moment_p")]
    pub moment_p: Vec<f64>,
    #[serde(default = "default_ou_times")]
    pub ou_times: Vec<f64>,
    #[serde(default = "default_probe_points")]
    pub probe_points: usize,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all options have defaults")
    }
}

fn default_inner_nodes() -> usize {
    20
}
fn default_inner_samples() -> usize {
    4096
}
fn default_norm_nodes() -> usize {
    40
}
fn default_norm_samples() -> usize {
    100_000
}
fn default_eps_grid() -> Vec<f64> {
    vec![1.0, 0.3, 0.1, 0.03, 0.01]
}
fn default_test_scalars() -> Vec<TestScalar> {
    TestScalar::SUITE.to_vec()
}
fn default_step_counts() -> Vec<usize> {
    vec![4, 8, 16, 32]
}
fn default_smoothing_n() -> Vec<f64> {
    vec![4.0, 8.0, 16.0, 32.0, 64.0]
}
fn default_dims() -> Vec<usize> {
    vec![1, 2, 3, 4]
}
fn default_omega() -> f64 {
    1.0
}
fn default_matrices() -> usize {
    20
}
fn default_identity_samples() -> usize {
    1_000_000
}
fn default_moment_p() -> Vec<f64> {
    vec![1.0, 1.5, 3.0]
}
fn default_ou_times() -> Vec<f64> {
    vec![0.1, 0.5, 1.0]
}
fn default_probe_points() -> usize {
    8
}
fn default_horizon() -> f64 {
    1.0
}
fn default_two() -> f64 {
    2.0
}
fn default_steps() -> usize {
    100
}
fn default_particles() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldDescriptor>,
    pub dim: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_two")]
    pub p: f64,
    #[serde(default = "default_two")]
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// Exponential integrability constant of `[div_γ b]^-`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default)]
    pub quadrature: QuadratureBlock,
    #[serde(default = "default_steps")]
    pub time_steps: usize,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_prefix: Option<String>,
    #[serde(default)]
    pub options: ExperimentOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn strictly_monotone(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] > w[0]) || values.windows(2).all(|w| w[1] < w[0])
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| bad(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// `max(p', q')`.
    pub fn r_exponent(&self) -> f64 {
        conjugate(self.p).max(conjugate(self.q))
    }

    /// Density-bound exponents, deduplicated and sorted when defaulted.
    pub fn r_values(&self) -> Vec<f64> {
        match &self.options.r_values {
            Some(v) => v.clone(),
            None => {
                let mut v = vec![2.0, conjugate(self.p), conjugate(self.q)];
                v.sort_by(f64::total_cmp);
                v.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
                v
            }
        }
    }

    /// The configured field in dimension `dim` with horizon and exponents applied.
    pub fn field_at(&self, dim: usize) -> Result<FieldSpec, CliError> {
        let desc = self.field.as_ref().ok_or_else(|| bad("missing field kind"))?;
        desc.build(dim)
            .and_then(|f| f.with_horizon(self.horizon))
            .and_then(|f| f.with_exponents(self.p, self.q))
            .map_err(|e| bad(e.to_string()))
    }

    pub fn field_is_smooth(&self) -> bool {
        self.field.as_ref().is_some_and(FieldDescriptor::is_smooth)
    }

    /// Sweep values, either from `sweep` or from the experiment's defaults.
    pub fn sweep_values(&self) -> Option<(SweepKey, Vec<f64>)> {
        if let Some(s) = &self.sweep {
            return Some((s.key, s.values.clone()));
        }
        let t = self.horizon;
        match self.experiment {
            ExperimentKind::Semigroup => {
                Some((SweepKey::Dt, self.options.step_counts.iter().map(|&n| t / n as f64).collect()))
            }
            ExperimentKind::Stability => Some((SweepKey::NSmoothing, self.options.smoothing_n.clone())),
            ExperimentKind::DimensionConsistency => {
                Some((SweepKey::N, self.options.dims.iter().map(|&n| n as f64).collect()))
            }
            _ => None,
        }
    }

    /// Checks every schema-level and hypothesis-level constraint.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.dim == 0 {
            return Err(bad("dim must be at least 1"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(bad(format!("horizon must be positive and finite, got {}", self.horizon)));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(bad(format!("p must be > 1, got {}", self.p)));
        }
        if !(self.q > 1.0 && self.q <= 2.0) {
            return Err(bad(format!("q must lie in (1, 2], got {}", self.q)));
        }
        let r = self.r_exponent();
        if let Some(user_r) = self.r {
            if (user_r - r).abs() > 1e-12 * r.max(1.0) {
                return Err(bad(format!("r = {user_r} does not match max(p', q') = {r}")));
            }
        }
        if self.time_steps == 0 {
            return Err(bad("time_steps must be at least 1"));
        }
        if self.particles < 2 {
            return Err(bad("particles must be at least 2"));
        }
        let qb = &self.quadrature;
        if qb.nodes_per_axis == 0 || qb.norm_nodes_per_axis == 0 || qb.mc_samples < 2 || qb.norm_samples < 2 {
            return Err(bad("quadrature sizes must be positive (Monte Carlo sizes at least 2)"));
        }
        self.validate_node_counts()?;
        self.validate_experiment(r)?;
        self.validate_sweep()
    }

    fn validate_node_counts(&self) -> Result<(), CliError> {
        let dims: Vec<usize> = match self.experiment {
            ExperimentKind::DimensionConsistency => self.options.dims.iter().map(|d| d + 1).collect(),
            _ => vec![self.dim],
        };
        let qb = &self.quadrature;
        for d in dims {
            if d > 4 {
                continue;
            }
            for n in [qb.nodes_per_axis, qb.norm_nodes_per_axis] {
                let total = (n as u128).checked_pow(d as u32);
                if total.is_none_or(|t| t > MAX_NODES as u128) {
                    return Err(bad(format!("tensor Gauss–Hermite with {n}^{d} nodes exceeds {MAX_NODES}")));
                }
            }
        }
        Ok(())
    }

    fn validate_experiment(&self, r: f64) -> Result<(), CliError> {
        let o = &self.options;
        if self.experiment.needs_field() {
            if self.field.is_none() {
                return Err(bad("missing field kind"));
            }
            if self.experiment != ExperimentKind::DimensionConsistency {
                self.field_at(self.dim)?;
            }
        }
        match self.experiment {
            ExperimentKind::DensityBound => {
                let rs = self.r_values();
                if rs.is_empty() || rs.iter().any(|v| !(*v >= 1.0 && v.is_finite())) {
                    return Err(bad("r_values must be non-empty and each >= 1"));
                }
                let c = self.c.unwrap_or(r * self.horizon);
                for &rv in &rs {
                    if c < rv * self.horizon {
                        return Err(bad(format!("need c >= rT: c = {c}, r = {rv}, T = {}", self.horizon)));
                    }
                }
            }
            ExperimentKind::CommutatorSweep => {
                let g = &o.eps_grid;
                if g.is_empty() || g.iter().any(|e| !(*e > 0.0 && e.is_finite())) || g.windows(2).any(|w| w[1] >= w[0])
                {
                    return Err(bad("eps_grid must be non-empty, positive and strictly decreasing"));
                }
                if o.test_scalars.is_empty() {
                    return Err(bad("test_scalars must be non-empty"));
                }
            }
            ExperimentKind::Semigroup => {
                let [a, b, c] = self.semigroup_times();
                if !(0.0 <= a && a <= b && b <= c && c <= self.horizon) {
                    return Err(bad(format!(
                        "semigroup times must satisfy 0 <= r <= s <= t <= T, got [{a}, {b}, {c}]"
                    )));
                }
                if o.step_counts.contains(&0) {
                    return Err(bad("step_counts must be positive"));
                }
            }
            ExperimentKind::Stability => {
                if o.smoothing_n.iter().any(|n| !(*n > 0.0 && n.is_finite())) {
                    return Err(bad("smoothing_n values must be positive"));
                }
            }
            ExperimentKind::DimensionConsistency => {
                if o.dims.contains(&0) {
                    return Err(bad("dims must be positive"));
                }
                for &d in &o.dims {
                    self.field_at(d)?;
                    self.field_at(d + 1)?;
                }
            }
            ExperimentKind::RotatedFlow => {
                if self.dim < 2 {
                    return Err(bad("rotated_flow needs dim >= 2"));
                }
                if !o.rotation_omega.is_finite() {
                    return Err(bad("rotation_omega must be finite"));
                }
            }
            ExperimentKind::OuProperties => {
                if self.dim > 3 {
                    return Err(bad("ou_properties supports dim <= 3"));
                }
                if o.ou_times.is_empty() || o.ou_times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                    return Err(bad("ou_times must be non-empty and positive"));
                }
                if o.probe_points == 0 {
                    return Err(bad("probe_points must be positive"));
                }
            }
            ExperimentKind::CancellationIdentities => {
                if self.dim > 3 {
                    return Err(bad("cancellation_identities supports dim <= 3"));
                }
                if o.random_matrices == 0 || o.identity_samples < 2 {
                    return Err(bad("random_matrices must be positive and identity_samples at least 2"));
                }
                if o.moment_p.is_empty() || o.moment_p.iter().any(|p| !(*p >= 1.0 && p.is_finite())) {
                    return Err(bad("moment_p values must be >= 1"));
                }
            }
        }
        Ok(())
    }

    fn validate_sweep(&self) -> Result<(), CliError> {
        let Some((key, values)) = self.sweep_values() else {
            return Ok(());
        };
        if self.sweep.is_some() && !self.experiment.sweep_keys().contains(&key) {
            return Err(bad(format!("sweep key {} is not supported by this experiment", key.name())));
        }
        if values.len() < 3 {
            return Err(bad(format!("sweep over {} needs at least 3 values", key.name())));
        }
        if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) || !strictly_monotone(&values) {
            return Err(bad(format!("sweep values for {} must be positive and strictly monotone", key.name())));
        }
        let integral = |v: &f64| v.fract() == 0.0;
        match key {
            SweepKey::K | SweepKey::N if !values.iter().all(integral) => {
                Err(bad(format!("sweep values for {} must be integers", key.name())))
            }
            SweepKey::K if values.iter().any(|v| *v < 2.0) => Err(bad("K sweep values must be at least 2")),
            SweepKey::N => {
                for &n in &values {
                    self.field_at(n as usize)?;
                    self.field_at(n as usize + 1)?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn semigroup_times(&self) -> [f64; 3] {
        self.options.times.unwrap_or([0.0, 0.5 * self.horizon, self.horizon])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        let cfg = ExperimentConfig::from_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = parse(
            r#"{"experiment": "density_bound", "dim": 1, "field": {"kind": "constant", "params": {"v": [1.0]}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.time_steps, 100);
        assert_eq!(cfg.particles, 10_000);
        assert_eq!(cfg.r_exponent(), 2.0);
        assert_eq!(cfg.r_values(), vec![2.0]);
        assert_eq!(cfg.options.eps_grid, default_eps_grid());
    }

    #[test]
    fn r_must_match() {
        let base = r#"{"experiment": "density_bound", "dim": 1, "p": 4, "q": 1.5, "field": {"kind": "constant", "params": {"v": [1.0]}}"#;
        assert!(parse(&format!("{base}, \"r\": 3}}")).is_ok());
        assert!(matches!(parse(&format!("{base}, \"r\": 2}}")), Err(CliError::Config(_))));
        let cfg = parse(&format!("{base}}}")).unwrap();
        assert_eq!(cfg.r_values(), vec![4.0 / 3.0, 2.0, 3.0]);
    }

    #[test]
    fn c_guard() {
        let base = r#"{"experiment": "density_bound", "dim": 1, "horizon": 2, "field": {"kind": "constant", "params": {"v": [1.0]}}"#;
        assert!(parse(&format!("{base}, \"c\": 4}}")).is_ok());
        assert!(parse(&format!("{base}, \"c\": 3.9}}")).is_err());
    }

    #[test]
    fn rejections() {
        for text in [
            "{not json",
            r#"{"experiment": "density_bound", "dim": 1}"#,
            r#"{"experiment": "density_bound", "dim": 1, "field": {"params": {"v": [1.0]}}}"#,
            r#"{"experiment": "density_bound", "dim": 2, "field": {"kind": "constant", "params": {"v": [1.0]}}}"#,
            r#"{"experiment": "density_bound", "dim": 1, "p": 1, "field": {"kind": "constant", "params": {"v": [1.0]}}}"#,
            r#"{"experiment": "density_bound", "dim": 1, "q": 3, "field": {"kind": "constant", "params": {"v": [1.0]}}}"#,
            r#"{"experiment": "density_bound", "dim": 1, "bogus": 1, "field": {"kind": "constant", "params": {"v": [1.0]}}}"#,
            r#"{"experiment": "ou_properties", "dim": 3, "quadrature": {"nodes_per_axis": 300}}"#,
            r#"{"experiment": "semigroup", "dim": 1, "field": {"kind": "constant", "params": {"v": [1.0]}}, "sweep": {"key": "dt", "values": [0.1, 0.05]}}"#,
            r#"{"experiment": "semigroup", "dim": 1, "field": {"kind": "constant", "params": {"v": [1.0]}}, "sweep": {"key": "dt", "values": [0.1, 0.05, 0.07]}}"#,
            r#"{"experiment": "semigroup", "dim": 1, "field": {"kind": "constant", "params": {"v": [1.0]}}, "sweep": {"key": "K", "values": [10, 20, 40]}}"#,
            r#"{"experiment": "commutator_sweep", "dim": 1, "field": {"kind": "constant", "params": {"v": [1.0]}}, "options": {"eps_grid": [0.1, 1.0]}}"#,
            r#"{"experiment": "dimension_consistency", "dim": 1, "field": {"kind": "constant", "params": {"v": [1.0]}}}"#,
        ] {
            assert!(matches!(parse(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn implicit_sweeps() {
        let cfg = parse(r#"{"experiment": "semigroup", "dim": 1, "horizon": 2, "field": {"kind": "constant", "params": {"v": [1.0]}}}"#)
            .unwrap();
        assert_eq!(cfg.sweep_values(), Some((SweepKey::Dt, vec![0.5, 0.25, 0.125, 0.0625])));
        let cfg = parse(
            r#"{"experiment": "dimension_consistency", "dim": 1, "field": {"kind": "custom_named", "params": {"name": "product_sine"}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.sweep_values().unwrap().1, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn round_trip() {
        let cfg = parse(r#"{"experiment": "stability", "dim": 1, "field": {"kind": "custom_named", "params": {"name": "low_regularity"}}}"#)
            .unwrap();
        let again: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }
}
