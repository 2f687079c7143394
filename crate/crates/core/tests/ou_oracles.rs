use std::sync::Arc;

use flowlab_core::ou::{
    hermite_he, lp_norm, mehler_apply, mehler_gradient, self_adjoint_check, smoothed_divergence, MIN_GRADIENT_TIME,
};
use flowlab_core::{OuOperator, QuadratureScheme};

fn op(t: f64, dim: usize, n: usize) -> OuOperator {
    OuOperator::new(t, Arc::new(QuadratureScheme::gauss_hermite(dim, n).unwrap())).unwrap()
}

#[test]
fn polynomial_closed_forms() {
    for t in [0.05, 0.5, 2f64.ln(), 3.0] {
        let o = op(t, 1, 20);
        for x in [-1.7, 0.0, 1.0, 2.4] {
            assert!((mehler_apply(|z| z[0], &o, &[x]).unwrap() - (-t).exp() * x).abs() < 1e-13);
            let want = (-2.0 * t).exp() * x * x + 1.0 - (-2.0 * t).exp();
            assert!((mehler_apply(|z| z[0] * z[0], &o, &[x]).unwrap() - want).abs() < 1e-12);
            assert!((mehler_gradient(|z| z[0], &o, &[x]).unwrap()[0] - (-t).exp()).abs() < 1e-12);
            let g2 = mehler_gradient(|z| z[0] * z[0], &o, &[x]).unwrap()[0];
            assert!((g2 - 2.0 * (-2.0 * t).exp() * x).abs() < 1e-11);
        }
    }
    let o = op(2f64.ln(), 1, 20);
    assert!((mehler_apply(|z| z[0] * z[0], &o, &[1.0]).unwrap() - 1.0).abs() < 1e-14);
    assert!((mehler_gradient(|z| z[0] * z[0], &o, &[1.0]).unwrap()[0] - 0.5).abs() < 1e-13);
}

#[test]
fn hermite_eigenrelation() {
    for k in 0..=4usize {
        for t in [0.1, 0.7, 1.5] {
            let o = op(t, 1, 20);
            for x in [-2.0, -0.3, 0.9, 1.8] {
                let got = mehler_apply(|z| hermite_he(k, z[0]), &o, &[x]).unwrap();
                let want = (-(k as f64) * t).exp() * hermite_he(k, x);
                assert!((got - want).abs() <= 1e-8 * want.abs().max(1e-300) + 1e-14, "k={k} t={t} x={x}");
            }
        }
    }
}

#[test]
fn gradient_refuses_tiny_times() {
    let o = op(MIN_GRADIENT_TIME / 2.0, 1, 4);
    assert!(mehler_gradient(|z| z[0], &o, &[0.0]).is_err());
    assert!(OuOperator::new(-1.0, Arc::new(QuadratureScheme::gauss_hermite(1, 2).unwrap())).is_err());
}

#[test]
fn semigroup_composition() {
    let (s, t) = (0.3, 0.45);
    let inner = op(s, 2, 12);
    let outer = op(t, 2, 12);
    let both = op(s + t, 2, 12);
    let u = |z: &[f64]| z[0].powi(3) * z[1] - 2.0 * z[1] * z[1] + z[0];
    for x in [[0.2, -1.0], [1.5, 0.7]] {
        let composed = mehler_apply(|y| mehler_apply(u, &inner, y).unwrap(), &outer, &x).unwrap();
        let direct = mehler_apply(u, &both, &x).unwrap();
        assert!((composed - direct).abs() < 1e-10);
    }
}

#[test]
fn self_adjointness_examples() {
    let outer = QuadratureScheme::gauss_hermite(1, 20).unwrap();
    for t in [0.2, 1.0] {
        let o = op(t, 1, 20);
        let (l, r) = self_adjoint_check(|z| z[0] * z[0], |z| z[0] * z[0], &o, &outer).unwrap();
        let want = 1.0 + 2.0 * (-2.0 * t).exp();
        assert!((l - want).abs() < 1e-12 && (r - want).abs() < 1e-12);
        let (l, r) = self_adjoint_check(|z| z[0], |z| z[0].powi(3), &o, &outer).unwrap();
        assert!((l - 3.0 * (-t).exp()).abs() < 1e-12 && (r - 3.0 * (-t).exp()).abs() < 1e-12);
    }
}

#[test]
fn smoothed_divergence_examples() {
    let inner = Arc::new(QuadratureScheme::gauss_hermite(1, 20).unwrap());
    for eps in [0.01f64, 0.3, 1.0] {
        for x in [-1.3, 0.0, 0.6] {
            let want = (-2.0 * eps).exp() * (1.0 - x * x);
            let a = smoothed_divergence(|_| 1.0, |z| z.to_vec(), eps, &inner, &[x]).unwrap();
            let b = smoothed_divergence(|z| z[0], |_| vec![1.0], eps, &inner, &[x]).unwrap();
            assert!((a - want).abs() < 1e-10, "eps={eps} x={x}");
            assert!((b - want).abs() < 1e-10);
        }
    }
    assert!(smoothed_divergence(|_| 1.0, |z| z.to_vec(), 0.0, &inner, &[0.0]).is_err());
}

#[test]
fn lp_contraction_on_samples() {
    let quad = QuadratureScheme::gauss_hermite(1, 40).unwrap();
    let u = |z: &[f64]| (z[0] - 0.5).abs().sqrt() + z[0].sin();
    for p in [1.0, 1.5, 2.0, 3.0] {
        for t in [0.1, 1.0] {
            let o = op(t, 1, 30);
            let tu = lp_norm(|x| mehler_apply(u, &o, x).unwrap(), p, &quad).unwrap();
            let uu = lp_norm(u, p, &quad).unwrap();
            assert!(tu <= uu * (1.0 + 1e-6), "p={p} t={t}: {tu} > {uu}");
        }
    }
}

#[test]
fn l1_norm_preserved_for_nonnegative_inputs() {
    let quad = QuadratureScheme::gauss_hermite(1, 40).unwrap();
    let u = |z: &[f64]| z[0] * z[0] * (0.5 + z[0].cos().powi(2));
    for t in [0.2, 1.0] {
        let o = op(t, 1, 30);
        let tu = lp_norm(|x| mehler_apply(u, &o, x).unwrap(), 1.0, &quad).unwrap();
        let uu = lp_norm(u, 1.0, &quad).unwrap();
        assert!((tu - uu).abs() < 1e-8 * uu);
    }
}
