use std::sync::Arc;

use flowlab_core::field::{catalogue, FieldSpec};
use flowlab_core::flow::{
    check_density_bound, density_lr_norm, dimension_consistency_metric, divergence_exp_bound, flow_from_time,
    integrate_flow, rotated_flow_solve, semigroup_discrepancy, stability_metric, uniform_grid, InitialPoints,
    IntegratorOptions,
};
use flowlab_core::gaussian::sample_points;
use flowlab_core::stats::empirical_orders;
use flowlab_core::{QuadratureScheme, RotationGroup};
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

fn opts() -> IntegratorOptions {
    IntegratorOptions::default()
}

fn mat_vec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (a * DVector::from_column_slice(x)).iter().copied().collect()
}

#[test]
fn linear_flow_matches_matrix_exponential() {
    let a = catalogue::default_linear_matrix(3);
    let f = catalogue::linear(a.clone());
    let grid = uniform_grid(0.0, 1.0, 100);
    let batch = integrate_flow(&f, &InitialPoints::Seeded { count: 50, seed: 1 }, &grid, &opts()).unwrap();
    for k in 0..batch.len() {
        for (i, &t) in grid.iter().enumerate() {
            assert!((batch.log_jacobian[k][i] - t * a.trace()).abs() <= 1e-8);
        }
        let want = mat_vec(&a.clone().exp(), &batch.initial_points[k]);
        for (g, w) in batch.positions[k][100].iter().zip(&want) {
            assert!((g - w).abs() < 1e-8);
        }
    }
    // X^s(t, x) = e^{(t-s)A} x
    let s = 0.25;
    let x = vec![0.3, -0.8, 1.1];
    let b =
        flow_from_time(&f, s, &InitialPoints::Explicit(vec![x.clone()]), &uniform_grid(s, 1.0, 75), &opts()).unwrap();
    let want = mat_vec(&(&a * (1.0 - s)).exp(), &x);
    for (g, w) in b.final_positions()[0].iter().zip(&want) {
        assert!((g - w).abs() < 1e-9);
    }
    assert!(flow_from_time(&f, s, &InitialPoints::Explicit(vec![x]), &uniform_grid(0.0, 1.0, 4), &opts()).is_err());
}

#[test]
fn rotation_preserves_norm_and_density() {
    let f = catalogue::rotation(2, 1.0);
    let grid = uniform_grid(0.0, 1.0, 100);
    let batch = integrate_flow(&f, &InitialPoints::Seeded { count: 100, seed: 2 }, &grid, &opts()).unwrap();
    for k in 0..batch.len() {
        let r0: f64 = batch.initial_points[k].iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..grid.len() {
            let r: f64 = batch.positions[k][i].iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((r - r0).abs() < 1e-9 * r0.max(1.0));
            assert_eq!(batch.log_density[k][i], 0.0);
        }
    }
    assert_eq!(density_lr_norm(&batch, 3.0, 100).unwrap().estimate, 1.0);
}

#[test]
fn constant_field_density_norm_is_e() {
    let f = catalogue::constant(vec![1.0]);
    let grid = uniform_grid(0.0, 1.0, 10);
    let batch = integrate_flow(&f, &InitialPoints::Seeded { count: 100_000, seed: 77 }, &grid, &opts()).unwrap();
    let est = density_lr_norm(&batch, 2.0, 10).unwrap();
    let e = std::f64::consts::E;
    assert!((est.estimate - e).abs() <= 3.0 * est.std_error, "{est:?}");
    // exp(r(r-1)t²|v|²/2) at every node
    for (i, &t) in grid.iter().enumerate().step_by(5) {
        let est = density_lr_norm(&batch, 2.0, i).unwrap();
        assert!((est.estimate - (t * t).exp()).abs() <= 3.0 * est.std_error.max(1e-15));
    }
}

#[test]
fn constant_field_bound_against_normal_cdf() {
    // ∫ exp(2 x⁺) dγ = 1/2 + e² Φ(2)
    let phi2 = Normal::new(0.0, 1.0).unwrap().cdf(2.0);
    let oracle = 0.5 + std::f64::consts::E.powi(2) * phi2;
    assert!((oracle - 7.7210).abs() < 1e-4);
    let f = catalogue::constant(vec![1.0]);
    let quad = QuadratureScheme::gauss_hermite(1, 200).unwrap();
    let b = divergence_exp_bound(&f, 2.0, &quad, &[0.0, 1.0]).unwrap();
    assert!((b.value - oracle).abs() < 1e-3 * oracle, "{} vs {oracle}", b.value);
    let mc = QuadratureScheme::monte_carlo(1, 400_000, 5).unwrap();
    let rep = check_density_bound(
        &f,
        2.0,
        &InitialPoints::Seeded { count: 20_000, seed: 5 },
        &uniform_grid(0.0, 1.0, 10),
        &mc,
        &opts(),
    )
    .unwrap();
    assert!(rep.pass && !rep.vacuous);
    assert!((rep.lhs[10] - std::f64::consts::E).abs() < 3.0 * rep.std_error[10]);
    assert!(rep.margin.iter().all(|m| *m > 4.0));
}

#[test]
fn contraction_bound_below_envelope() {
    let f = catalogue::linear(DMatrix::from_element(1, 1, -1.0));
    let quad = QuadratureScheme::gauss_hermite(1, 60).unwrap();
    for r in [1.5, 2.0, 3.0] {
        let b = divergence_exp_bound(&f, r, &quad, &[0.0, 0.5, 1.0]).unwrap();
        assert!(b.value.is_finite() && b.value <= r.exp());
    }
    // exponential growth of the negative part is reported as non-integrable
    let bad = catalogue::linear(DMatrix::from_element(1, 1, 1.0));
    let b = divergence_exp_bound(&bad, 2.0, &quad, &[0.0, 1.0]).unwrap();
    assert!(b.value.is_infinite() && b.offending.is_some());
}

#[test]
fn semigroup_law() {
    let pts = InitialPoints::Seeded { count: 64, seed: 3 };
    let c = catalogue::constant(vec![0.3, -1.2]);
    assert!(semigroup_discrepancy(&c, (0.0, 0.4, 1.0), &pts, 10, &opts()).unwrap() <= 1e-10);
    // nilpotent generator: RK4 is exact
    let nil = catalogue::linear(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
    assert!(semigroup_discrepancy(&nil, (0.0, 0.5, 1.0), &pts, 8, &opts()).unwrap() <= 1e-12);
    let f = catalogue::linear(catalogue::default_linear_matrix(2));
    let steps = [4usize, 8, 16, 32];
    let errs: Vec<f64> =
        steps.iter().map(|&n| semigroup_discrepancy(&f, (0.0, 0.5, 1.0), &pts, n, &opts()).unwrap()).collect();
    let dts: Vec<f64> = steps.iter().map(|&n| 1.0 / n as f64).collect();
    for order in empirical_orders(&dts, &errs) {
        assert!((order - 4.0).abs() < 0.3, "{errs:?}");
    }
    assert!(semigroup_discrepancy(&f, (0.5, 0.2, 1.0), &pts, 4, &opts()).is_err());
}

#[test]
fn rotated_constant_field_closed_form() {
    let v = vec![0.5, -0.25];
    let f = catalogue::constant(v.clone());
    let group = RotationGroup::planar(2, 1.0).unwrap();
    let l = group.generator().clone();
    let grid = uniform_grid(0.0, 1.0, 100);
    let x0 = vec![1.0, 0.3];
    let sol = rotated_flow_solve(&f, &group, &InitialPoints::Explicit(vec![x0.clone()]), &grid, &opts()).unwrap();
    let linv = l.clone().try_inverse().unwrap();
    for (i, &t) in grid.iter().enumerate() {
        let q = (&l * t).exp();
        // ∫₀ᵗ Q_{t-s} v ds = L⁻¹(Q_t - I) v
        let drift = mat_vec(&(&linv * (&q - DMatrix::identity(2, 2))), &v);
        let free = mat_vec(&q, &x0);
        for d in 0..2 {
            assert!((sol.batch.positions[0][i][d] - free[d] - drift[d]).abs() < 1e-10);
        }
    }
    assert!(sol.duhamel_residual[0] < 1e-8);
}

#[test]
fn rotated_flow_duhamel_residual_on_nonlinear_field() {
    let f = catalogue::gradient_perturbation(2, 0.5);
    let group = RotationGroup::planar(2, 0.7).unwrap();
    let grid = uniform_grid(0.0, 1.0, 100);
    let sol = rotated_flow_solve(&f, &group, &InitialPoints::Seeded { count: 20, seed: 4 }, &grid, &opts()).unwrap();
    assert!(sol.duhamel_residual.iter().all(|r| *r < 1e-6));
}

#[test]
fn stability_metric_decreases_under_smoothing() {
    let inner = Arc::new(QuadratureScheme::gauss_hermite(2, 10).unwrap());
    let grid = uniform_grid(0.0, 1.0, 20);
    let pts = InitialPoints::Seeded { count: 200, seed: 6 };
    let c = catalogue::constant(vec![1.0, 0.5]);
    assert!(stability_metric(&c, 0.25, inner.clone(), &pts, &grid, &opts()).unwrap().mean < 1e-12);
    let f = catalogue::linear(catalogue::default_linear_matrix(2));
    let m: Vec<f64> = [4.0, 8.0, 16.0, 32.0]
        .iter()
        .map(|n| stability_metric(&f, 1.0 / n, inner.clone(), &pts, &grid, &opts()).unwrap().mean)
        .collect();
    // first order in 1/n
    for w in m.windows(2) {
        assert!((w[0] / w[1] - 2.0).abs() < 0.3, "{m:?}");
    }
}

#[test]
fn product_family_is_exactly_consistent() {
    let grid = uniform_grid(0.0, 1.0, 50);
    for n in 1..4usize {
        let pts = InitialPoints::Seeded { count: 100, seed: 9 };
        let m = dimension_consistency_metric(
            &catalogue::product_sine(n),
            &catalogue::product_sine(n + 1),
            &pts,
            &grid,
            &opts(),
        )
        .unwrap();
        assert_eq!(m.mean, 0.0);
    }
    let m: Vec<f64> = (1..5usize)
        .map(|n| {
            let pts = InitialPoints::Seeded { count: 200, seed: 9 };
            dimension_consistency_metric(
                &catalogue::weakly_coupled(n, 0.2),
                &catalogue::weakly_coupled(n + 1, 0.2),
                &pts,
                &grid,
                &opts(),
            )
            .unwrap()
            .mean
        })
        .collect();
    assert!(m.windows(2).all(|w| w[1] < w[0]), "{m:?}");
}

#[test]
fn blow_up_particles_are_frozen() {
    let f = FieldSpec::new("cubic", 1, |_, x| vec![x[0].powi(3)]);
    let grid = uniform_grid(0.0, 1.0, 40);
    let pts = InitialPoints::Explicit(vec![vec![0.1], vec![3.0]]);
    let b = integrate_flow(&f, &pts, &grid, &IntegratorOptions { r_max: 1e3, substeps: 1 }).unwrap();
    assert!(b.died_at[0].is_none());
    let k = b.died_at[1].expect("explodes before t = 1/18");
    assert!(b.positions[1][k..].windows(2).all(|w| w[0] == w[1]));
    assert_eq!(b.alive_count(40), 1);
}

#[test]
fn batch_csv_layout() {
    let f = catalogue::constant(vec![1.0, 2.0]);
    let b = integrate_flow(&f, &InitialPoints::Explicit(sample_points(2, 2, 1)), &uniform_grid(0.0, 1.0, 2), &opts())
        .unwrap();
    let mut buf = Vec::new();
    b.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "particle_id,t,x_1,x_2,log_jacobian,log_density,alive");
    assert_eq!(lines.len(), 1 + 2 * 3);
    assert!(!text.contains('\r'));
}

#[test]
fn mass_is_conserved() {
    let grid = uniform_grid(0.0, 1.0, 50);
    for f in [catalogue::gradient_perturbation(2, 0.5), catalogue::linear(catalogue::default_linear_matrix(2))] {
        let batch = integrate_flow(&f, &InitialPoints::Seeded { count: 20_000, seed: 10 }, &grid, &opts()).unwrap();
        let est = density_lr_norm(&batch, 1.0, 50).unwrap();
        assert_eq!(est.estimate, 1.0);
        assert_eq!(est.dead_count, 0);
    }
}

#[test]
fn jacobian_matches_trajectory_bundle() {
    let grid = uniform_grid(0.0, 1.0, 100);
    let fields = [
        catalogue::linear(catalogue::default_linear_matrix(2)),
        catalogue::gradient_perturbation(2, 0.5),
        catalogue::product_sine(2),
        catalogue::weakly_coupled(2, 0.2),
    ];
    let h = 1e-5;
    for f in &fields {
        for x in sample_points(10, 2, 33) {
            // x and x ± h e_j: 2N + 1 trajectories
            let mut pts = vec![x.clone()];
            for j in 0..2 {
                for s in [1.0, -1.0] {
                    let mut p = x.clone();
                    p[j] += s * h;
                    pts.push(p);
                }
            }
            let b = integrate_flow(f, &InitialPoints::Explicit(pts), &grid, &opts()).unwrap();
            let end = |k: usize| b.positions[k][100].clone();
            let jac = DMatrix::from_fn(2, 2, |i, j| (end(1 + 2 * j)[i] - end(2 + 2 * j)[i]) / (2.0 * h));
            let want = b.log_jacobian[0][100].exp();
            assert!((jac.determinant() - want).abs() < 0.01 * want, "{}: {} vs {want}", f.name(), jac.determinant());
        }
    }
}
