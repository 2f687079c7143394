//! Ornstein–Uhlenbeck semigroup through Mehler's formula
//! `T_t u(x) = ∫ u(e^{-t}x + √(1-e^{-2t}) y) dγ(y)`.

use std::sync::Arc;

use crate::error::{check_dim, FlowlabError, Result};
use crate::gaussian::QuadratureScheme;

/// Below this time the gradient formula's `1/√(1-e^{-2t})` factor is
/// considered too noisy and [`OuOperator::gradient`] refuses.
pub const MIN_GRADIENT_TIME: f64 = 1e-6;

/// Tolerance for the eigenrelation (relative), composition and
/// self-adjointness (absolute) on polynomial inputs.
pub const IDENTITY_TOLERANCE: f64 = 1e-8;

/// `T_t` realized with a fixed inner quadrature for the `y`-integral.
#[derive(Debug, Clone)]
pub struct OuOperator {
    t: f64,
    inner: Arc<QuadratureScheme>,
}

impl OuOperator {
    pub fn new(t: f64, inner: Arc<QuadratureScheme>) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(FlowlabError::Domain(format!("semigroup time must be finite and >= 0, got {t}")));
        }
        Ok(Self { t, inner })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn inner(&self) -> &Arc<QuadratureScheme> {
        &self.inner
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// `(e^{-t}, √(1-e^{-2t}))`.
    pub fn coefficients(&self) -> (f64, f64) {
        rotation_coefficients(self.t)
    }

    /// `e^{-t}x + √(1-e^{-2t}) y`.
    pub fn shifted(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let (a, s) = self.coefficients();
        x.iter().zip(y).map(|(xi, yi)| a * xi + s * yi).collect()
    }

    /// `T_t u(x)`.
    pub fn apply<F>(&self, u: F, x: &[f64]) -> Result<f64>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        check_dim(self.dim(), x.len())?;
        self.inner.try_expectation(|y| {
            let z = self.shifted(x, y);
            let v = u(&z);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(FlowlabError::NonFinite { context: "Mehler integrand", point: z })
            }
        })
    }

    /// Componentwise `T_t` of a vector-valued `u` with `len` components.
    pub fn apply_vec<F>(&self, u: F, len: usize, x: &[f64]) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Vec<f64> + Sync,
    {
        check_dim(self.dim(), x.len())?;
        self.inner.try_expectation_vec(len, |y| Ok(u(&self.shifted(x, y))))
    }

    /// `∇T_t u(x) = e^{-t} ∫ u(e^{-t}x + √(1-e^{-2t}) y) y / √(1-e^{-2t}) dγ(y)`.
    pub fn gradient<F>(&self, u: F, x: &[f64]) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        if self.t < MIN_GRADIENT_TIME {
            return Err(FlowlabError::Domain(format!(
                "Mehler gradient needs t >= {MIN_GRADIENT_TIME}, got {}",
                self.t
            )));
        }
        check_dim(self.dim(), x.len())?;
        let (a, s) = self.coefficients();
        let scale = a / s;
        self.inner.try_expectation_vec(x.len(), |y| {
            let z = self.shifted(x, y);
            let v = u(&z);
            if !v.is_finite() {
                return Err(FlowlabError::NonFinite { context: "Mehler gradient integrand", point: z });
            }
            Ok(y.iter().map(|yi| scale * v * yi).collect())
        })
    }

    /// `T_ε(div_γ(v c))(x)` without differentiating `v` or `c`:
    /// `∫ (v c)(z)·(y/√(1-e^{-2ε}) - z) dγ(y)` with `z = e^{-ε}x + √(1-e^{-2ε}) y`.
    pub fn smoothed_divergence<V, C>(&self, v: V, c: C, x: &[f64]) -> Result<f64>
    where
        V: Fn(&[f64]) -> f64 + Sync,
        C: Fn(&[f64]) -> Vec<f64> + Sync,
    {
        if !(self.t > 0.0) {
            return Err(FlowlabError::Domain("smoothed divergence needs eps > 0".into()));
        }
        check_dim(self.dim(), x.len())?;
        let (_, s) = self.coefficients();
        self.inner.try_expectation(|y| {
            let z = self.shifted(x, y);
            let vz = v(&z);
            if vz == 0.0 {
                return Ok(0.0);
            }
            let cz = c(&z);
            check_dim(z.len(), cz.len())?;
            let val: f64 = cz.iter().zip(y).zip(&z).map(|((ci, yi), zi)| ci * (yi / s - zi)).sum::<f64>() * vz;
            if val.is_finite() {
                Ok(val)
            } else {
                Err(FlowlabError::NonFinite { context: "smoothed divergence integrand", point: z })
            }
        })
    }
}

/// `(e^{-t}, √(1-e^{-2t}))`, accurate for small `t`.
pub fn rotation_coefficients(t: f64) -> (f64, f64) {
    ((-t).exp(), (-(-2.0 * t).exp_m1()).sqrt())
}

/// `T_t u(x)`.
pub fn mehler_apply<F>(u: F, op: &OuOperator, x: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    op.apply(u, x)
}

/// `∇T_t u(x)`.
pub fn mehler_gradient<F>(u: F, op: &OuOperator, x: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    op.gradient(u, x)
}

/// `T_ε(div_γ(v c))(x)` with the inner rule `inner`.
pub fn smoothed_divergence<V, C>(v: V, c: C, eps: f64, inner: &Arc<QuadratureScheme>, x: &[f64]) -> Result<f64>
where
    V: Fn(&[f64]) -> f64 + Sync,
    C: Fn(&[f64]) -> Vec<f64> + Sync,
{
    if !(eps > 0.0) {
        return Err(FlowlabError::Domain(format!("eps must be positive, got {eps}")));
    }
    OuOperator::new(eps, inner.clone())?.smoothed_divergence(v, c, x)
}

/// `(∫ v T_t u dγ, ∫ u T_t v dγ)` with `outer` for the x-integral.
pub fn self_adjoint_check<U, V>(u: U, v: V, op: &OuOperator, outer: &QuadratureScheme) -> Result<(f64, f64)>
where
    U: Fn(&[f64]) -> f64 + Sync,
    V: Fn(&[f64]) -> f64 + Sync,
{
    let lhs = outer.try_expectation(|x| Ok(v(x) * op.apply(&u, x)?))?;
    let rhs = outer.try_expectation(|x| Ok(u(x) * op.apply(&v, x)?))?;
    Ok((lhs, rhs))
}

/// `(∫|f|^p dγ)^{1/p}`.
pub fn lp_norm<F>(f: F, p: f64, quad: &QuadratureScheme) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    Ok(quad.expectation(|x| f(x).abs().powf(p))?.powf(1.0 / p))
}

/// Probabilists' Hermite polynomial `He_k(x)`.
pub fn hermite_he(k: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (0.0, 1.0);
    for j in 0..k {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(t: f64, dim: usize, n: usize) -> OuOperator {
        OuOperator::new(t, Arc::new(QuadratureScheme::gauss_hermite(dim, n).unwrap())).unwrap()
    }

    #[test]
    fn constants_are_fixed() {
        let o = op(0.7, 2, 6);
        assert!((o.apply(|_| 5.0, &[0.3, -2.0]).unwrap() - 5.0).abs() < 1e-13);
        let g = o.gradient(|_| 5.0, &[0.3, -2.0]).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn linear_and_quadratic() {
        let t = 2f64.ln();
        let o = op(t, 1, 6);
        assert!((o.apply(|z| z[0], &[1.7]).unwrap() - 0.5 * 1.7).abs() < 1e-14);
        assert!((o.apply(|z| z[0] * z[0], &[1.0]).unwrap() - 1.0).abs() < 1e-14);
        assert!((o.gradient(|z| z[0], &[-3.0]).unwrap()[0] - 0.5).abs() < 1e-14);
        assert!((o.gradient(|z| z[0] * z[0], &[1.0]).unwrap()[0] - 0.5).abs() < 1e-13);
    }

    #[test]
    fn identity_at_time_zero() {
        let o = op(0.0, 1, 5);
        assert!((o.apply(|z| z[0].sin(), &[0.4]).unwrap() - 0.4f64.sin()).abs() < 1e-15);
        assert!(matches!(o.gradient(|z| z[0], &[0.4]), Err(FlowlabError::Domain(_))));
        assert!(matches!(op(1e-7, 1, 5).gradient(|z| z[0], &[0.4]), Err(FlowlabError::Domain(_))));
    }

    #[test]
    fn smoothed_divergence_examples() {
        let eps: f64 = 0.3;
        let inner = Arc::new(QuadratureScheme::gauss_hermite(1, 8).unwrap());
        for x in [-1.5, 0.0, 0.8] {
            let want = (-2.0 * eps).exp() * (1.0 - x * x);
            let a = smoothed_divergence(|_| 1.0, |z: &[f64]| z.to_vec(), eps, &inner, &[x]).unwrap();
            let b = smoothed_divergence(|z: &[f64]| z[0], |_: &[f64]| vec![1.0], eps, &inner, &[x]).unwrap();
            assert!((a - want).abs() < 1e-13, "{a} {want}");
            assert!((b - want).abs() < 1e-13, "{b} {want}");
            let zero = smoothed_divergence(|_| 0.0, |z: &[f64]| z.to_vec(), eps, &inner, &[x]).unwrap();
            assert_eq!(zero, 0.0);
        }
        assert!(smoothed_divergence(|_| 1.0, |z: &[f64]| z.to_vec(), 0.0, &inner, &[0.0]).is_err());
    }

    #[test]
    fn self_adjoint_quartic() {
        let t = 0.4;
        let o = op(t, 1, 10);
        let outer = QuadratureScheme::gauss_hermite(1, 10).unwrap();
        let (l, r) = self_adjoint_check(|z| z[0] * z[0], |z| z[0] * z[0], &o, &outer).unwrap();
        let want = 1.0 + 2.0 * (-2.0 * t).exp();
        assert!((l - want).abs() < 1e-13 && (r - want).abs() < 1e-13);
    }

    #[test]
    fn hermite_values() {
        assert_eq!(hermite_he(0, 3.0), 1.0);
        assert_eq!(hermite_he(2, 3.0), 8.0);
        assert_eq!(hermite_he(4, 2.0), 16.0 - 24.0 + 3.0);
    }
}
