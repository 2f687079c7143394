//! One runner per experiment kind.

use std::sync::Arc;

use flowlab_core::commutator::{commutator_report, CommutatorReport, CommutatorSetup, LIMIT_RATIO};
use flowlab_core::flow::{
    check_density_bound, dimension_consistency_metric, rotated_flow_solve, semigroup_discrepancy, stability_metric,
    uniform_grid, InitialPoints, IntegratorOptions, DUHAMEL_TOLERANCE, EXACT_SEMIGROUP_TOLERANCE,
    MACHINE_PRECISION_TOLERANCE, ORDER_TOLERANCE, RK4_ORDER, SMOOTH_STABILITY_TOLERANCE,
};
use flowlab_core::gaussian::{
    moment_identity_check, quadratic_cancellation, quadratic_deviation_norm, sample_points, CANCELLATION_TOLERANCE,
};
use flowlab_core::ou::{hermite_he, self_adjoint_check, OuOperator, IDENTITY_TOLERANCE};
use flowlab_core::seed::{self, rng_from_seed, sub_seed};
use flowlab_core::stats::{empirical_orders, CONFIDENCE_SIGMAS};
use flowlab_core::{QuadratureScheme, RotationGroup};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use crate::config::{ExperimentConfig, ExperimentKind, SweepKey};
use crate::report::{convergence_rows, Cell, Check, ConvergenceRow, Outcome, Table};
use crate::CliError;

/// Runs the configured experiment. The config must already be validated.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    match cfg.experiment {
        ExperimentKind::DensityBound => density_bound(cfg),
        ExperimentKind::CommutatorSweep => commutator_sweep(cfg),
        ExperimentKind::Semigroup => semigroup(cfg),
        ExperimentKind::Stability => stability(cfg),
        ExperimentKind::DimensionConsistency => dimension_consistency(cfg),
        ExperimentKind::RotatedFlow => rotated_flow(cfg),
        ExperimentKind::OuProperties => ou_properties(cfg),
        ExperimentKind::CancellationIdentities => cancellation_identities(cfg),
    }
}

fn inner_quad(cfg: &ExperimentConfig, dim: usize) -> Result<Arc<QuadratureScheme>, CliError> {
    let q = &cfg.quadrature;
    let s = sub_seed(cfg.seed, seed::INNER_MEHLER);
    Ok(Arc::new(QuadratureScheme::default_inner(dim, q.nodes_per_axis, q.mc_samples, s)?))
}

fn norm_quad(cfg: &ExperimentConfig, dim: usize) -> Result<Arc<QuadratureScheme>, CliError> {
    let q = &cfg.quadrature;
    let s = sub_seed(cfg.seed, seed::NORMS);
    Ok(Arc::new(QuadratureScheme::default_inner(dim, q.norm_nodes_per_axis, q.norm_samples, s)?))
}

fn particles(cfg: &ExperimentConfig, count: usize) -> InitialPoints {
    InitialPoints::Seeded { count, seed: sub_seed(cfg.seed, seed::PARTICLES) }
}

fn grid(cfg: &ExperimentConfig) -> Vec<f64> {
    uniform_grid(0.0, cfg.horizon, cfg.time_steps)
}

/// Particle counts: the `K` sweep if present, otherwise `particles`.
fn particle_counts(cfg: &ExperimentConfig) -> Vec<usize> {
    match &cfg.sweep {
        Some(s) if s.key == SweepKey::K => s.values.iter().map(|&v| v as usize).collect(),
        _ => vec![cfg.particles],
    }
}

fn sweep_params(cfg: &ExperimentConfig) -> (SweepKey, Vec<f64>) {
    cfg.sweep_values().expect("experiment has a sweep")
}

/// Largest increase between consecutive metrics ordered by increasing
/// parameter; negative iff the metric is strictly decreasing.
fn worst_increase(params: &[f64], metrics: &[f64]) -> f64 {
    let mut pairs: Vec<(f64, f64)> = params.iter().copied().zip(metrics.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.windows(2).map(|w| w[1].1 - w[0].1).fold(f64::NEG_INFINITY, f64::max)
}

fn density_bound(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let f = cfg.field_at(cfg.dim)?;
    let quad = norm_quad(cfg, cfg.dim)?;
    let grid = grid(cfg);
    let opts = IntegratorOptions::default();
    let rs = cfg.r_values();
    let counts = particle_counts(cfg);
    let mut checks = Vec::new();
    let mut table = Table::new(&["K", "r", "t", "lhs", "std_error", "rhs", "margin", "dead_count"]);
    let mut results = Vec::new();
    let mut sweep_metrics = Vec::new();
    for &k in &counts {
        let points = particles(cfg, k);
        for (ri, &r) in rs.iter().enumerate() {
            let rep = check_density_bound(&f, r, &points, &grid, &quad, &opts)?;
            let worst = rep
                .lhs
                .iter()
                .zip(&rep.std_error)
                .map(|(l, s)| l - CONFIDENCE_SIGMAS * s)
                .fold(f64::NEG_INFINITY, f64::max);
            let label = if rep.vacuous { " (rhs infinite)" } else { "" };
            checks.push(Check::new(format!("density bound K={k} r={r}{label}"), worst, rep.rhs, rep.pass));
            for i in 0..rep.times.len() {
                table.push(vec![
                    k.into(),
                    r.into(),
                    rep.times[i].into(),
                    rep.lhs[i].into(),
                    rep.std_error[i].into(),
                    rep.rhs.into(),
                    rep.margin[i].into(),
                    rep.dead_count.into(),
                ]);
            }
            if ri == 0 {
                let last = rep.lhs.len() - 1;
                sweep_metrics.push((rep.std_error[last], 0.0));
            }
            results.push(json!({ "K": k, "report": rep }));
        }
    }
    let convergence = cfg.sweep.as_ref().map(|s| {
        let params: Vec<f64> = counts.iter().map(|&k| k as f64).collect();
        (s.key.name().to_string(), convergence_rows(&params, &sweep_metrics))
    });
    Ok(Outcome { checks, results: json!({ "r_values": rs, "runs": results }), table, convergence })
}

fn commutator_rows(table: &mut Table, k: usize, rep: &CommutatorReport) {
    for i in 0..rep.eps_grid.len() {
        let b = &rep.bound_terms[i];
        table.push(vec![
            k.into(),
            rep.v.as_str().into(),
            rep.eps_grid[i].into(),
            rep.l1_norm[i].mean.into(),
            rep.l1_norm[i].std_error.into(),
            b.moment_term.into(),
            b.div_term.into(),
            b.sym_term.into(),
            b.total().into(),
            rep.limit_residual[i].mean.into(),
            rep.limit_residual[i].std_error.into(),
        ]);
    }
}

fn commutator_sweep(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let c = cfg.field_at(cfg.dim)?;
    let inner = inner_quad(cfg, cfg.dim)?;
    let norm = norm_quad(cfg, cfg.dim)?;
    let smooth = cfg.field_is_smooth();
    let counts = particle_counts(cfg);
    let mut checks = Vec::new();
    let mut table = Table::new(&[
        "K",
        "v",
        "eps",
        "l1_norm",
        "l1_std_error",
        "moment_term",
        "div_term",
        "sym_term",
        "bound_total",
        "limit_residual",
        "limit_std_error",
    ]);
    let mut results = Vec::new();
    let mut sweep_metrics = Vec::new();
    for &k in &counts {
        let setup = CommutatorSetup {
            inner: inner.clone(),
            norm_quad: norm.clone(),
            outer_points: k,
            outer_seed: sub_seed(cfg.seed, seed::OUTER_POINTS),
        };
        for (vi, v) in cfg.options.test_scalars.iter().enumerate() {
            let rep = commutator_report(|z| v.eval(z), v.name(), &c, cfg.p, cfg.q, &cfg.options.eps_grid, &setup)?;
            checks.push(Check::at_most(format!("bound violations K={k} v={}", v.name()), rep.violations as f64, 0.0));
            let limit = rep.limit_check();
            let mut check = Check::new(format!("limit K={k} v={}", v.name()), limit.ratio, LIMIT_RATIO, limit.pass);
            if !smooth {
                check = check.informational();
            }
            checks.push(check);
            commutator_rows(&mut table, k, &rep);
            if vi == 0 {
                let last = rep.eps_grid.len() - 1;
                sweep_metrics.push((rep.l1_norm[last].std_error, 0.0));
            }
            results.push(json!({ "K": k, "limit": limit, "report": rep }));
        }
    }
    let convergence = cfg.sweep.as_ref().map(|s| {
        let params: Vec<f64> = counts.iter().map(|&k| k as f64).collect();
        (s.key.name().to_string(), convergence_rows(&params, &sweep_metrics))
    });
    Ok(Outcome { checks, results: json!({ "smooth_field": smooth, "runs": results }), table, convergence })
}

/// Orders between consecutive rows whose metrics both exceed the rounding floor.
fn measurable_orders(params: &[f64], metrics: &[f64], floor: f64) -> Vec<f64> {
    empirical_orders(params, metrics)
        .into_iter()
        .zip(metrics.windows(2))
        .filter(|(_, m)| m[0] > floor && m[1] > floor)
        .map(|(o, _)| o)
        .collect()
}

fn semigroup(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let f = cfg.field_at(cfg.dim)?;
    let (key, dts) = sweep_params(cfg);
    let times = cfg.semigroup_times();
    let points = particles(cfg, cfg.particles);
    let opts = IntegratorOptions::default();
    let steps: Vec<usize> = dts.iter().map(|dt| ((cfg.horizon / dt).round() as usize).max(1)).collect();
    let params: Vec<f64> = steps.iter().map(|&n| cfg.horizon / n as f64).collect();
    let metrics: Vec<f64> = steps
        .iter()
        .map(|&n| semigroup_discrepancy(&f, (times[0], times[1], times[2]), &points, n, &opts))
        .collect::<Result<_, _>>()?;
    let rows = convergence_rows(&params, &metrics.iter().map(|&m| (m, 0.0)).collect::<Vec<_>>());
    let worst = metrics.iter().copied().fold(0.0, f64::max);
    let orders = measurable_orders(&params, &metrics, EXACT_SEMIGROUP_TOLERANCE);
    let check = if worst <= EXACT_SEMIGROUP_TOLERANCE {
        Check::at_most("semigroup discrepancy at rounding level", worst, EXACT_SEMIGROUP_TOLERANCE)
    } else if orders.is_empty() {
        Check::new("RK4 order (no measurable pair)", f64::NAN, ORDER_TOLERANCE, false)
    } else {
        let dev = orders.iter().map(|o| (o - RK4_ORDER).abs()).fold(0.0, f64::max);
        Check::at_most("RK4 order deviation", dev, ORDER_TOLERANCE)
    };
    let table = semigroup_table(&steps, &rows);
    Ok(Outcome {
        checks: vec![check],
        results: json!({ "times": times, "steps": steps, "measured_orders": orders }),
        table,
        convergence: Some((key.name().to_string(), rows)),
    })
}

fn semigroup_table(steps: &[usize], rows: &[ConvergenceRow]) -> Table {
    let mut t = Table::new(&["steps", "dt", "discrepancy", "rate"]);
    for (n, r) in steps.iter().zip(rows) {
        t.push(vec![(*n).into(), r.parameter.into(), r.metric.into(), r.rate.unwrap_or(f64::NAN).into()]);
    }
    t
}

fn stability(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let f = cfg.field_at(cfg.dim)?;
    let (key, ns) = sweep_params(cfg);
    let inner = inner_quad(cfg, cfg.dim)?;
    let points = particles(cfg, cfg.particles);
    let grid = grid(cfg);
    let opts = IntegratorOptions::default();
    let estimates: Vec<(f64, f64)> = ns
        .iter()
        .map(|&n| stability_metric(&f, 1.0 / n, inner.clone(), &points, &grid, &opts).map(|m| (m.mean, m.std_error)))
        .collect::<Result<_, _>>()?;
    let means: Vec<f64> = estimates.iter().map(|m| m.0).collect();
    let rows = convergence_rows(&ns, &estimates);
    let inc = worst_increase(&ns, &means);
    let mut checks = vec![Check::new("metric strictly decreasing in n", inc, 0.0, inc < 0.0)];
    if cfg.field_is_smooth() {
        let (i, n_max) = ns.iter().copied().enumerate().max_by(|a, b| a.1.total_cmp(&b.1)).expect("non-empty sweep");
        checks.push(
            Check::at_most(format!("smooth-field metric at n={n_max}"), means[i], SMOOTH_STABILITY_TOLERANCE)
                .informational(),
        );
    }
    Ok(Outcome {
        checks,
        results: json!({ "eps": ns.iter().map(|n| 1.0 / n).collect::<Vec<_>>() }),
        table: Table::default(),
        convergence: Some((key.name().to_string(), rows)),
    })
}

fn dimension_consistency(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (key, dims) = sweep_params(cfg);
    let grid = grid(cfg);
    let opts = IntegratorOptions::default();
    let mut estimates = Vec::with_capacity(dims.len());
    for &d in &dims {
        let n = d as usize;
        let member = cfg.field_at(n)?;
        let reference = cfg.field_at(n + 1)?;
        let m = dimension_consistency_metric(&member, &reference, &particles(cfg, cfg.particles), &grid, &opts)?;
        estimates.push((m.mean, m.std_error));
    }
    let means: Vec<f64> = estimates.iter().map(|m| m.0).collect();
    let worst = means.iter().copied().fold(0.0, f64::max);
    let check = if worst <= MACHINE_PRECISION_TOLERANCE {
        Check::at_most("exact consistency", worst, MACHINE_PRECISION_TOLERANCE)
    } else {
        let inc = worst_increase(&dims, &means);
        Check::new("metric strictly decreasing in N", inc, 0.0, inc < 0.0)
    };
    Ok(Outcome {
        checks: vec![check],
        results: json!({ "reference": "dimension N + 1" }),
        table: Table::default(),
        convergence: Some((key.name().to_string(), convergence_rows(&dims, &estimates))),
    })
}

fn rotated_flow(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let f = cfg.field_at(cfg.dim)?;
    let group = RotationGroup::planar(cfg.dim, cfg.options.rotation_omega)?;
    let sol =
        rotated_flow_solve(&f, &group, &particles(cfg, cfg.particles), &grid(cfg), &IntegratorOptions::default())?;
    let worst = sol.duhamel_residual.iter().copied().fold(0.0, f64::max);
    let mut header = vec!["particle".to_string(), "duhamel_residual".to_string()];
    header.extend((1..=cfg.dim).map(|i| format!("x{i}_final")));
    let mut table = Table { header, rows: Vec::new() };
    let finals = sol.batch.final_positions();
    for (k, (res, x)) in sol.duhamel_residual.iter().zip(&finals).enumerate() {
        let mut row: Vec<Cell> = vec![k.into(), (*res).into()];
        row.extend(x.iter().map(|&v| Cell::from(v)));
        table.push(row);
    }
    let dead = (0..sol.batch.len()).filter(|&k| !sol.batch.alive(k)).count();
    Ok(Outcome {
        checks: vec![Check::at_most("max Duhamel residual", worst, DUHAMEL_TOLERANCE)],
        results: json!({ "omega": cfg.options.rotation_omega, "max_residual": worst, "dead_count": dead }),
        table,
        convergence: None,
    })
}

/// Polynomial inputs for the OU checks in dimension `dim`; the last axis
/// doubles as the first in dimension one.
fn ou_polynomials(dim: usize) -> (impl Fn(&[f64]) -> f64 + Sync + Copy, impl Fn(&[f64]) -> f64 + Sync + Copy) {
    let last = dim - 1;
    let u = move |x: &[f64]| x[0].powi(4) - 2.0 * x[0] * x[last] + x[0].powi(3);
    let v = move |x: &[f64]| x[0] * x[0] * x[last] - x[0] + 0.5;
    (u, v)
}

fn ou_properties(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let dim = cfg.dim;
    let inner = Arc::new(QuadratureScheme::gauss_hermite(dim, cfg.quadrature.nodes_per_axis)?);
    let probes = sample_points(cfg.options.probe_points, dim, sub_seed(cfg.seed, seed::OUTER_POINTS));
    let times = &cfg.options.ou_times;
    let mut table = Table::new(&["check", "label", "t", "point", "value", "reference", "deviation"]);
    let mut worst = [0.0f64; 4];

    // eigenrelation on products He_j(x_1) He_k(x_N), j + k <= 4
    let pairs: Vec<(usize, usize)> =
        (0..=4).flat_map(|j| (0..=4 - j).map(move |k| (j, k))).filter(|&(_, k)| dim > 1 || k == 0).collect();
    for &t in times {
        let op = OuOperator::new(t, inner.clone())?;
        for &(j, k) in &pairs {
            let h = move |x: &[f64]| hermite_he(j, x[0]) * hermite_he(k, x[x.len() - 1]);
            let lambda = (-((j + k) as f64) * t).exp();
            for (pi, x) in probes.iter().enumerate() {
                let got = op.apply(h, x)?;
                let want = lambda * h(x);
                let dev = (got - want).abs() / want.abs().max(lambda);
                worst[0] = worst[0].max(dev);
                table.push(vec![
                    "eigen".into(),
                    format!("He{j}*He{k}").into(),
                    t.into(),
                    pi.into(),
                    got.into(),
                    want.into(),
                    dev.into(),
                ]);
            }
        }
    }

    let (u, v) = ou_polynomials(dim);
    for &s in times {
        for &t in times {
            let os = OuOperator::new(s, inner.clone())?;
            let ot = OuOperator::new(t, inner.clone())?;
            let ost = OuOperator::new(s + t, inner.clone())?;
            for (pi, x) in probes.iter().enumerate() {
                let got = os.apply(|y| ot.apply(u, y).unwrap_or(f64::NAN), x)?;
                let want = ost.apply(u, x)?;
                let dev = (got - want).abs();
                worst[1] = worst[1].max(dev);
                table.push(vec![
                    "composition".into(),
                    format!("s={s}").into(),
                    t.into(),
                    pi.into(),
                    got.into(),
                    want.into(),
                    dev.into(),
                ]);
            }
        }
    }

    for &t in times {
        let op = OuOperator::new(t, inner.clone())?;
        let (lhs, rhs) = self_adjoint_check(u, v, &op, &inner)?;
        let dev = (lhs - rhs).abs();
        worst[2] = worst[2].max(dev);
        table.push(vec![
            "self_adjoint".into(),
            "u,v".into(),
            t.into(),
            0usize.into(),
            lhs.into(),
            rhs.into(),
            dev.into(),
        ]);
    }

    // ∇T_t u = e^{-t} T_t ∇u
    let last = dim - 1;
    let grad_u = move |x: &[f64]| {
        let mut g = vec![0.0; x.len()];
        g[0] += 4.0 * x[0].powi(3) - 2.0 * x[last] + 3.0 * x[0] * x[0];
        g[last] -= 2.0 * x[0];
        g
    };
    for &t in times {
        let op = OuOperator::new(t, inner.clone())?;
        for (pi, x) in probes.iter().enumerate() {
            let got = op.gradient(u, x)?;
            let want: Vec<f64> = op.apply_vec(grad_u, dim, x)?.iter().map(|g| (-t).exp() * g).collect();
            for (i, (a, b)) in got.iter().zip(&want).enumerate() {
                let dev = (a - b).abs() / b.abs().max(1.0);
                worst[3] = worst[3].max(dev);
                table.push(vec![
                    "gradient".into(),
                    format!("d{}", i + 1).into(),
                    t.into(),
                    pi.into(),
                    (*a).into(),
                    (*b).into(),
                    dev.into(),
                ]);
            }
        }
    }

    let checks = vec![
        Check::at_most("Hermite eigenrelation (relative)", worst[0], IDENTITY_TOLERANCE),
        Check::at_most("semigroup composition", worst[1], IDENTITY_TOLERANCE),
        Check::at_most("self-adjointness", worst[2], IDENTITY_TOLERANCE),
        Check::at_most("gradient commutation (relative)", worst[3], IDENTITY_TOLERANCE),
    ];
    Ok(Outcome {
        checks,
        results: json!({ "nodes_per_axis": cfg.quadrature.nodes_per_axis, "probe_points": probes.len() }),
        table,
        convergence: None,
    })
}

fn cancellation_identities(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let dim = cfg.dim;
    let quad = QuadratureScheme::gauss_hermite(dim, cfg.quadrature.nodes_per_axis)?;
    let mut rng = rng_from_seed(sub_seed(cfg.seed, seed::MATRICES));
    let mut table = Table::new(&["check", "index", "param", "lhs", "rhs", "abs_diff", "std_error"]);
    let mut worst_cancel: f64 = 0.0;
    let mut worst_holder = f64::NEG_INFINITY;
    for i in 0..cfg.options.random_matrices {
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c: f64 = rng.sample(StandardNormal);
        let chk = quadratic_cancellation(&a, c, &quad)?;
        worst_cancel = worst_cancel.max(chk.abs_diff());
        table.push(vec![
            "quadratic_cancellation".into(),
            i.into(),
            c.into(),
            chk.lhs.into(),
            chk.rhs.into(),
            chk.abs_diff().into(),
            chk.lhs_std_error.into(),
        ]);
        let dev = quadratic_deviation_norm(&a, c, cfg.q, &quad)?;
        worst_holder = worst_holder.max(dev.lhs - dev.rhs);
        table.push(vec![
            "quadratic_deviation_norm".into(),
            i.into(),
            cfg.q.into(),
            dev.lhs.into(),
            dev.rhs.into(),
            dev.abs_diff().into(),
            dev.lhs_std_error.into(),
        ]);
    }
    let mc =
        QuadratureScheme::monte_carlo(dim, cfg.options.identity_samples, sub_seed(cfg.seed, seed::MOMENT_SAMPLES))?;
    let mut moment_sigmas: f64 = 0.0;
    for (i, &p) in cfg.options.moment_p.iter().enumerate() {
        let l: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let chk = moment_identity_check(&l, p, &mc)?;
        let z =
            if chk.lhs_std_error > 0.0 { chk.abs_diff() / chk.lhs_std_error } else { chk.abs_diff() / f64::EPSILON };
        moment_sigmas = moment_sigmas.max(z);
        table.push(vec![
            "moment_identity".into(),
            i.into(),
            p.into(),
            chk.lhs.into(),
            chk.rhs.into(),
            chk.abs_diff().into(),
            chk.lhs_std_error.into(),
        ]);
    }
    let checks = vec![
        Check::at_most("quadratic cancellation |lhs - rhs|", worst_cancel, CANCELLATION_TOLERANCE),
        Check::at_most("deviation norm lhs - rhs", worst_holder, CANCELLATION_TOLERANCE),
        Check::at_most("moment identity (standard errors)", moment_sigmas, CONFIDENCE_SIGMAS),
    ];
    Ok(Outcome {
        checks,
        results: json!({ "matrices": cfg.options.random_matrices, "moment_samples": cfg.options.identity_samples }),
        table,
        convergence: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        let c = ExperimentConfig::from_json(text).unwrap();
        c.validate().unwrap();
        c
    }

    #[test]
    fn increase_and_orders() {
        assert!(worst_increase(&[4.0, 8.0, 16.0], &[3.0, 2.0, 1.0]) < 0.0);
        assert!(worst_increase(&[16.0, 8.0, 4.0], &[1.0, 2.0, 3.0]) < 0.0);
        assert_eq!(worst_increase(&[4.0, 8.0, 16.0], &[3.0, 3.0, 1.0]), 0.0);
        let o = measurable_orders(&[0.1, 0.05, 0.025], &[1.6e-9, 1e-10, 1e-11], 1e-10);
        assert_eq!(o.len(), 0);
        let o = measurable_orders(&[0.1, 0.05, 0.025], &[1.6e-7, 1e-8, 1e-11], 1e-10);
        assert_eq!(o.len(), 1);
        assert!((o[0] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_density_is_one() {
        let c = cfg(r#"{"experiment": "density_bound", "dim": 2, "particles": 50, "time_steps": 10,
            "field": {"kind": "rotation", "params": {}}}"#);
        let out = execute(&c).unwrap();
        assert!(out.pass());
        let lhs = out.table.header.iter().position(|h| h == "lhs").unwrap();
        for row in &out.table.rows {
            assert_eq!(row[lhs], Cell::Num(1.0));
        }
    }

    #[test]
    fn cancellation_small() {
        let c = cfg(r#"{"experiment": "cancellation_identities", "dim": 2,
            "options": {"random_matrices": 3, "identity_samples": 20000}}"#);
        let out = execute(&c).unwrap();
        assert!(out.pass(), "{:?}", out.checks);
        assert_eq!(out.table.rows.len(), 3 * 2 + 3);
    }
}
