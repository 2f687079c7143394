//! One-dimensional quadrature rules: Gauss–Hermite for the standard Gaussian,
//! Gauss–Legendre on intervals, and adaptive Gauss–Kronrod.

use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of a one-dimensional rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Eigenvalues of the symmetric tridiagonal Jacobi matrix with zero diagonal
/// and the given off-diagonal, sorted ascending.
fn jacobi_eigenvalues(off_diag: &[f64]) -> Vec<f64> {
    let n = off_diag.len() + 1;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for (k, &b) in off_diag.iter().enumerate() {
        m[(k, k + 1)] = b;
        m[(k + 1, k)] = b;
    }
    let mut eig: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Normalized probabilists' Hermite values `(ψ_n(x), ψ_{n-1}(x))`, where
/// `ψ_k = He_k / sqrt(k!)`.
fn hermite_pair(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..n {
        let next = (x * cur - (k as f64).sqrt() * prev) / ((k + 1) as f64).sqrt();
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Gauss–Hermite rule for the standard Gaussian measure (weights sum to 1).
///
/// Nodes start from the Golub–Welsch eigenvalues of the Jacobi matrix of the
/// probabilists' Hermite polynomials and are polished by Newton steps on the
/// normalized three-term recurrence; weights use `1 / (n ψ_{n-1}(x)^2)`,
/// which stays accurate in the tails where eigenvector weights do not.
pub fn gauss_hermite(n: usize) -> Rule1d {
    assert!(n >= 1, "Gauss–Hermite needs at least one node");
    if n == 1 {
        return Rule1d { nodes: vec![0.0], weights: vec![1.0] };
    }
    let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
    let mut nodes = jacobi_eigenvalues(&off);
    let sqrt_n = (n as f64).sqrt();
    for x in nodes.iter_mut() {
        for _ in 0..8 {
            let (p, q) = hermite_pair(n, *x);
            let dx = p / (sqrt_n * q);
            *x -= dx;
            if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
    }
    // exact symmetry
    for i in 0..n / 2 {
        let a = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -a;
        nodes[n - 1 - i] = a;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let mut weights: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            let (_, q) = hermite_pair(n, x);
            1.0 / (n as f64 * q * q)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Rule1d { nodes, weights }
}

fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut prev = 1.0;
    let mut cur = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * x * cur - kf * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    (cur, prev)
}

/// Gauss–Legendre rule on `[-1, 1]` (weights sum to 2).
pub fn gauss_legendre(n: usize) -> Rule1d {
    assert!(n >= 1, "Gauss–Legendre needs at least one node");
    if n == 1 {
        return Rule1d { nodes: vec![0.0], weights: vec![2.0] };
    }
    let off: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    let mut nodes = jacobi_eigenvalues(&off);
    let nf = n as f64;
    let deriv = |x: f64| {
        let (p, q) = legendre_pair(n, x);
        (p, nf * (q - x * p) / (1.0 - x * x))
    };
    for x in nodes.iter_mut() {
        for _ in 0..8 {
            let (p, dp) = deriv(*x);
            let dx = p / dp;
            *x -= dx;
            if dx.abs() <= 1e-16 {
                break;
            }
        }
    }
    let weights = nodes
        .iter()
        .map(|&x| {
            let (_, dp) = deriv(x);
            2.0 / ((1.0 - x * x) * dp * dp)
        })
        .collect();
    Rule1d { nodes, weights }
}

impl Rule1d {
    /// Maps a `[-1, 1]` rule onto `[a, b]`.
    pub fn on_interval(&self, a: f64, b: f64) -> Rule1d {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        Rule1d {
            nodes: self.nodes.iter().map(|x| mid + half * x).collect(),
            weights: self.weights.iter().map(|w| half * w).collect(),
        }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

// Kronrod 15-point nodes (non-negative half) and weights, with the embedded
// Gauss 7-point weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let s = f(mid - dx) + f(mid + dx);
        kronrod += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// Subdivides the interval with the largest error estimate until the summed
/// error estimate is below `max(abs_tol, rel_tol * |integral|)`.
pub fn integrate_adaptive(f: impl Fn(f64) -> f64, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> f64 {
    const MAX_INTERVALS: usize = 2000;
    let (v, e) = gk15(&f, a, b);
    let mut parts = vec![(a, b, v, e)];
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) || parts.len() >= MAX_INTERVALS {
            return total;
        }
        let (idx, _) = parts.iter().enumerate().max_by(|x, y| x.1 .3.total_cmp(&y.1 .3)).expect("non-empty");
        let (lo, hi, _, _) = parts.swap_remove(idx);
        let m = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, m);
        let (v2, e2) = gk15(&f, m, hi);
        parts.push((lo, m, v1, e1));
        parts.push((m, hi, v2, e2));
    }
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `∫ g dγ` in one dimension by adaptive quadrature on `[-40, 40]`, split at 0.
pub fn gaussian_integral_1d(g: impl Fn(f64) -> f64) -> f64 {
    let h = |x: f64| g(x) * normal_pdf(x);
    integrate_adaptive(&h, -40.0, 0.0, 1e-15, 1e-13) + integrate_adaptive(&h, 0.0, 40.0, 1e-15, 1e-13)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial_odd(k: u32) -> f64 {
        // (k-1)!! for even k, the k-th Gaussian moment
        (1..k).step_by(2).map(f64::from).product()
    }

    #[test]
    fn two_point_rule() {
        let r = gauss_hermite(2);
        assert!((r.nodes[0] + 1.0).abs() < 1e-15 && (r.nodes[1] - 1.0).abs() < 1e-15);
        assert!((r.weights[0] - 0.5).abs() < 1e-15 && (r.weights[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hermite_moments_exact() {
        for n in [3usize, 7, 20, 40] {
            let r = gauss_hermite(n);
            for k in (0..(2 * n as u32)).step_by(2) {
                let exact = double_factorial_odd(k);
                let got = r.integrate(|x| x.powi(k as i32));
                assert!((got - exact).abs() <= 1e-11 * exact, "n={n} k={k} {got} {exact}");
            }
        }
    }

    #[test]
    fn legendre_integrates_polynomials() {
        let r = gauss_legendre(32).on_interval(0.0, 2.0);
        let got = r.integrate(|x| x.powi(63));
        let exact = 2f64.powi(64) / 64.0;
        assert!((got - exact).abs() < 1e-12 * exact);
        assert!((gauss_legendre(5).weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_kink() {
        let v = integrate_adaptive(|x: f64| x.abs().sqrt(), -1.0, 1.0, 1e-14, 1e-12);
        assert!((v - 4.0 / 3.0).abs() < 1e-10);
    }
}
