//! The commutator `r^ε(v, c) = e^ε⟨c, ∇T_ε v⟩ - T_ε(div_γ(v c))`, its
//! `L¹(γ)` estimate against the moment/divergence/symmetric-gradient bound,
//! and the interpolated `A_ε`/`B_ε` split of `-r^ε`.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, FlowlabError, Result};
use crate::field::{conjugate, hs_norm, FieldSpec, Snapshot};
use crate::flow::fmt17;
use crate::gaussian::{dot, lambda_moment, sample_points, QuadratureScheme};
use crate::ou::{hermite_he, lp_norm, rotation_coefficients};
use crate::quad1d::gauss_legendre;
use crate::stats::{McEstimate, CONFIDENCE_SIGMAS};

/// Scalar test functions `v` used against the field catalogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestScalar {
    Zero,
    One,
    Z1,
    Z1Squared,
    Hermite2,
}

impl TestScalar {
    pub const SUITE: [TestScalar; 4] = [Self::One, Self::Z1, Self::Z1Squared, Self::Hermite2];

    pub fn eval(self, z: &[f64]) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::One => 1.0,
            Self::Z1 => z[0],
            Self::Z1Squared => z[0] * z[0],
            Self::Hermite2 => hermite_he(2, z[0]),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Zero => "0",
            Self::One => "1",
            Self::Z1 => "z1",
            Self::Z1Squared => "z1^2",
            Self::Hermite2 => "H2(z1)",
        }
    }
}

/// `β_ε = ε / √(1 - e^{-2ε})`.
pub fn beta_eps(eps: f64) -> f64 {
    eps / rotation_coefficients(eps).1
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(FlowlabError::Domain(format!("eps must be positive, got {eps}")))
    }
}

/// `r^ε(x)`; never differentiates `v` or `c`. With the rescaled smoothing
/// `u ↦ e^{-ε}T_ε u` the commutator is `e^{-ε} r^ε`.
///
/// Both Mehler integrals share the inner nodes, so the integrand is
/// `v(z)[⟨c(x), y⟩/σ - c(z)·(y/σ - z)]` with `z = e^{-ε}x + σy`,
/// `σ = √(1-e^{-2ε})`.
pub fn commutator_eval<V>(v: V, c: Snapshot<'_>, eps: f64, inner: &QuadratureScheme, x: &[f64]) -> Result<f64>
where
    V: Fn(&[f64]) -> f64 + Sync,
{
    check_eps(eps)?;
    check_dim(c.dim(), x.len())?;
    check_dim(c.dim(), inner.dim())?;
    let (a, s) = rotation_coefficients(eps);
    let cx = c.value(x);
    inner.try_expectation(|y| {
        let z: Vec<f64> = x.iter().zip(y).map(|(xi, yi)| a * xi + s * yi).collect();
        let vz = v(&z);
        if vz == 0.0 {
            return Ok(0.0);
        }
        let cz = c.value(&z);
        let transport = dot(&cx, y) / s;
        let divergence: f64 = cz.iter().zip(y).zip(&z).map(|((ci, yi), zi)| ci * (yi / s - zi)).sum();
        let val = vz * (transport - divergence);
        if val.is_finite() {
            Ok(val)
        } else {
            Err(FlowlabError::NonFinite { context: "commutator integrand", point: z })
        }
    })
}

/// Consecutive limit residuals may increase by at most this many combined
/// standard errors.
pub const LIMIT_MONOTONE_SIGMAS: f64 = 2.0;
/// Required ratio of the smallest-ε to the largest-ε limit residual.
pub const LIMIT_RATIO: f64 = 0.1;
/// Limit residuals below this are rounding noise of an exactly vanishing limit.
pub const LIMIT_FLOOR: f64 = 1e-12;
/// Pointwise tolerance for closed-form commutator values.
pub const CLOSED_FORM_TOLERANCE: f64 = 1e-6;

/// The three terms of the commutator bound, each multiplied by `‖v‖_{L^r}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub moment_term: f64,
    pub div_term: f64,
    pub sym_term: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.moment_term + self.div_term + self.sym_term
    }
}

/// Norms entering the bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommutatorNorms {
    pub c_lp: f64,
    pub div_lq: f64,
    pub sym_lq: f64,
    pub v_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommutatorReport {
    pub v: String,
    pub c: String,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub lambda_p: f64,
    pub norms: CommutatorNorms,
    pub eps_grid: Vec<f64>,
    pub l1_norm: Vec<McEstimate>,
    pub bound_terms: Vec<BoundTerms>,
    /// `‖r^ε + v div_γ c‖_{L¹}` per ε.
    pub limit_residual: Vec<McEstimate>,
    /// Number of ε at which `l1_norm > bound + 3σ`.
    pub violations: usize,
}

impl CommutatorReport {
    /// One row per ε:
    /// `eps,l1_norm,l1_std_error,moment_term,div_term,sym_term,bound_total,limit_residual,limit_std_error`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record([
            "eps",
            "l1_norm",
            "l1_std_error",
            "moment_term",
            "div_term",
            "sym_term",
            "bound_total",
            "limit_residual",
            "limit_std_error",
        ])?;
        for i in 0..self.eps_grid.len() {
            let b = &self.bound_terms[i];
            w.write_record([
                fmt17(self.eps_grid[i]),
                fmt17(self.l1_norm[i].mean),
                fmt17(self.l1_norm[i].std_error),
                fmt17(b.moment_term),
                fmt17(b.div_term),
                fmt17(b.sym_term),
                fmt17(b.total()),
                fmt17(self.limit_residual[i].mean),
                fmt17(self.limit_residual[i].std_error),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Outcome of the `ε ↓ 0` limit check on one report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCheck {
    pub monotone: bool,
    /// Smallest-ε residual over largest-ε residual, `0` when both vanish.
    pub ratio: f64,
    pub pass: bool,
}

impl CommutatorReport {
    pub fn limit_check(&self) -> LimitCheck {
        let res = &self.limit_residual;
        let monotone = res.windows(2).all(|w| {
            let slack = LIMIT_MONOTONE_SIGMAS * w[0].std_error.hypot(w[1].std_error);
            w[1].mean <= w[0].mean + slack || w[1].mean <= LIMIT_FLOOR
        });
        let (first, last) = match (res.first(), res.last()) {
            (Some(a), Some(b)) => (a.mean, b.mean),
            _ => (0.0, 0.0),
        };
        let ratio = if first <= LIMIT_FLOOR && last <= LIMIT_FLOOR { 0.0 } else { last / first };
        LimitCheck { monotone, ratio, pass: monotone && ratio <= LIMIT_RATIO }
    }
}

/// Quadratures and sample sizes for [`commutator_report`].
#[derive(Debug, Clone)]
pub struct CommutatorSetup {
    /// Inner rule for the Mehler `y`-integrals.
    pub inner: Arc<QuadratureScheme>,
    /// Rule for the norms of `c`, `div_γ c`, `(∇c)^sym` and `v`.
    pub norm_quad: Arc<QuadratureScheme>,
    /// Number of seeded outer `γ`-samples for the `L¹` norms.
    pub outer_points: usize,
    pub outer_seed: u64,
}

/// Fills a [`CommutatorReport`] for `(v, c)` with `c` frozen at `t = 0`.
pub fn commutator_report<V>(
    v: V,
    v_name: &str,
    c: &FieldSpec,
    p: f64,
    q: f64,
    eps_grid: &[f64],
    setup: &CommutatorSetup,
) -> Result<CommutatorReport>
where
    V: Fn(&[f64]) -> f64 + Sync,
{
    if !(p > 1.0) {
        return Err(FlowlabError::Domain(format!("p must be > 1, got {p}")));
    }
    if !(q > 1.0 && q <= 2.0) {
        return Err(FlowlabError::Domain(format!("q must lie in (1, 2], got {q}")));
    }
    for &e in eps_grid {
        check_eps(e)?;
    }
    if eps_grid.is_empty() || eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(FlowlabError::Config("eps grid must be non-empty and strictly decreasing".into()));
    }
    let r = conjugate(p).max(conjugate(q));
    let lambda_p = lambda_moment(p)?;
    let snap = c.snapshot(0.0);
    let nq = &setup.norm_quad;
    let norms = CommutatorNorms {
        c_lp: lp_norm(|x| crate::gaussian::norm(&snap.value(x)), p, nq)?,
        div_lq: lp_norm(|x| snap.gaussian_divergence(x), q, nq)?,
        sym_lq: lp_norm(|x| hs_norm(&snap.symmetric_gradient(x)), q, nq)?,
        v_lr: lp_norm(&v, r, nq)?,
    };
    let outer = sample_points(setup.outer_points, c.dim(), setup.outer_seed);
    let limit: Vec<f64> = outer.iter().map(|x| v(x) * snap.gaussian_divergence(x)).collect();
    let two_q = 2f64.powf(1.0 / conjugate(q));
    let mut report = CommutatorReport {
        v: v_name.to_string(),
        c: c.name().to_string(),
        p,
        q,
        r,
        lambda_p,
        norms,
        eps_grid: eps_grid.to_vec(),
        l1_norm: Vec::new(),
        bound_terms: Vec::new(),
        limit_residual: Vec::new(),
        violations: 0,
    };
    for &eps in eps_grid {
        let values: Vec<f64> =
            outer.par_iter().map(|x| commutator_eval(&v, snap, eps, &setup.inner, x)).collect::<Result<_>>()?;
        let abs: Vec<f64> = values.iter().map(|r| r.abs()).collect();
        let resid: Vec<f64> = values.iter().zip(&limit).map(|(r, l)| (r + l).abs()).collect();
        let l1 = McEstimate::from_samples(&abs);
        let terms = BoundTerms {
            moment_term: lambda_p * beta_eps(eps) * norms.c_lp * norms.v_lr,
            div_term: two_q * norms.div_lq * norms.v_lr,
            sym_term: two_q * std::f64::consts::SQRT_2 * norms.sym_lq * norms.v_lr,
        };
        if l1.mean > terms.total() + CONFIDENCE_SIGMAS * l1.std_error {
            report.violations += 1;
        }
        report.l1_norm.push(l1);
        report.bound_terms.push(terms);
        report.limit_residual.push(McEstimate::from_samples(&resid));
    }
    Ok(report)
}

/// The two pieces of `-r^ε(x) = β_ε ∫ α_ε (A_ε + B_ε) dγ(y)`, each already
/// integrated against `α_ε(x,y) = v(e^{-ε}x + √(1-e^{-2ε}) y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitTerms {
    pub a_term: f64,
    pub b_term: f64,
    pub beta: f64,
}

impl SplitTerms {
    /// `β_ε (A + B)`, which equals `-r^ε(x)`.
    pub fn reconstructed_minus_r(&self) -> f64 {
        self.beta * (self.a_term + self.b_term)
    }
}

/// Gauss–Legendre nodes in `u = √(1 - e^{-2tε}) ∈ [0, √(1-e^{-2ε})]` with
/// the Jacobian `dt/du = u / (ε(1-u²))` folded into the weights.
fn interpolation_rule(eps: f64, t_nodes: usize) -> Vec<(f64, f64)> {
    let upper = rotation_coefficients(eps).1;
    let rule = gauss_legendre(t_nodes).on_interval(0.0, upper);
    rule.nodes.iter().zip(&rule.weights).map(|(&u, &w)| (u, w * u / (eps * (1.0 - u * u)))).collect()
}

/// `∫₀¹ e^{-2tε}/√(1-e^{-2tε}) dt` through the substituted rule; equals
/// `√(1-e^{-2ε})/ε`.
pub fn interpolation_weight_integral(eps: f64, t_nodes: usize) -> f64 {
    interpolation_rule(eps, t_nodes).iter().map(|&(u, w)| w * (1.0 - u * u) / u).sum()
}

/// `(A_ε(x,y), B_ε(x,y))` for one pair of points.
fn split_integrands(c: Snapshot<'_>, x: &[f64], y: &[f64], rule: &[(f64, f64)]) -> (f64, f64) {
    let n = x.len();
    let mut a_acc = 0.0;
    let mut b_acc = 0.0;
    for &(u, w) in rule {
        let e2 = 1.0 - u * u; // e^{-2tε}
        let e1 = e2.sqrt(); // e^{-tε}
        let z: Vec<f64> = x.iter().zip(y).map(|(xi, yi)| e1 * xi + u * yi).collect();
        let cz = c.value(&z);
        let jac = c.jacobian(&z);
        let left: Vec<f64> = (0..n).map(|i| e1 * u * x[i] - e2 * y[i]).collect();
        let right: Vec<f64> = (0..n).map(|j| e1 * x[j] - e2 / u * y[j]).collect();
        let mut jac_term = 0.0;
        for i in 0..n {
            for j in 0..n {
                jac_term += jac[(i, j)] * left[i] * right[j];
            }
        }
        let extra: f64 = (0..n).map(|i| cz[i] * e2 / u * (e1 * x[i] + u * y[i])).sum();
        let b: f64 = (0..n).map(|i| cz[i] * e1 * (u * x[i] - e1 * y[i])).sum();
        a_acc += w * (jac_term - extra);
        b_acc += w * b;
    }
    (a_acc, b_acc)
}

/// Evaluates the interpolated split at `x`: the `t ∈ [0,1]` integral by
/// `t_nodes`-point Gauss–Legendre after the substitution
/// `u = √(1-e^{-2tε})`, the `y` integral by `quad_y`.
pub fn commutator_split_diagnostic<V>(
    v: V,
    c: Snapshot<'_>,
    eps: f64,
    x: &[f64],
    quad_y: &QuadratureScheme,
    t_nodes: usize,
) -> Result<SplitTerms>
where
    V: Fn(&[f64]) -> f64 + Sync,
{
    check_eps(eps)?;
    check_dim(c.dim(), x.len())?;
    check_dim(c.dim(), quad_y.dim())?;
    let rule = interpolation_rule(eps, t_nodes);
    let (a, s) = rotation_coefficients(eps);
    let pieces = quad_y.evaluate(|y| {
        let z: Vec<f64> = x.iter().zip(y).map(|(xi, yi)| a * xi + s * yi).collect();
        let alpha = v(&z);
        if alpha == 0.0 {
            return (0.0, 0.0);
        }
        let (ai, bi) = split_integrands(c, x, y, &rule);
        (alpha * ai, alpha * bi)
    });
    let a_vals: Vec<f64> = pieces.iter().map(|p| p.0).collect();
    let b_vals: Vec<f64> = pieces.iter().map(|p| p.1).collect();
    if let Some(i) = a_vals.iter().zip(&b_vals).position(|(p, q)| !p.is_finite() || !q.is_finite()) {
        return Err(FlowlabError::NonFinite { context: "split integrand", point: quad_y.node(i).to_vec() });
    }
    Ok(SplitTerms {
        a_term: crate::stats::weighted_sum(quad_y.weights(), &a_vals),
        b_term: crate::stats::weighted_sum(quad_y.weights(), &b_vals),
        beta: beta_eps(eps),
    })
}

/// `β_ε ∫∫ |α_ε B_ε| dγ(y) dγ(x)` with `outer` points for `x`.
pub fn b_term_abs_integral<V>(
    v: V,
    c: Snapshot<'_>,
    eps: f64,
    outer: &[Vec<f64>],
    quad_y: &QuadratureScheme,
    t_nodes: usize,
) -> Result<McEstimate>
where
    V: Fn(&[f64]) -> f64 + Sync,
{
    check_eps(eps)?;
    let rule = interpolation_rule(eps, t_nodes);
    let (a, s) = rotation_coefficients(eps);
    let beta = beta_eps(eps);
    let per_x: Vec<f64> = outer
        .par_iter()
        .map(|x| {
            quad_y.expectation(|y| {
                let z: Vec<f64> = x.iter().zip(y).map(|(xi, yi)| a * xi + s * yi).collect();
                let alpha = v(&z);
                if alpha == 0.0 {
                    return 0.0;
                }
                (alpha * split_integrands(c, x, y, &rule).1).abs()
            })
        })
        .collect::<Result<_>>()?;
    let scaled: Vec<f64> = per_x.iter().map(|v| beta * v).collect();
    Ok(McEstimate::from_samples(&scaled))
}
