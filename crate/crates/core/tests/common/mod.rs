//! Independent oracles shared by the integration tests.
//!
//! Nothing here goes through the Van Loan blocks or the solver: matrix
//! exponentials come from nalgebra, integrals from adaptive Gauss-Kronrod
//! quadrature and trajectories from RK4.

#![allow(dead_code)]

use monospline::kernel::StateSpace;
use monospline::linalg::{Matrix, Vector};
use monospline::problem::QpProblem;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728,
];
/// Gauss weights for the odd-indexed Kronrod nodes, center last.
const G_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// G7-K15 on `[a, b]`: (Kronrod estimate, |Kronrod - Gauss|, ∫|f| estimate).
fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = K_WEIGHTS[7] * fc;
    let mut gauss = G_WEIGHTS[3] * fc;
    let mut abs = K_WEIGHTS[7] * fc.abs();
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let (f1, f2) = (f(c - x), f(c + x));
        kronrod += K_WEIGHTS[i] * (f1 + f2);
        abs += K_WEIGHTS[i] * (f1.abs() + f2.abs());
        if i % 2 == 1 {
            gauss += G_WEIGHTS[i / 2] * (f1 + f2);
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs(), abs * h.abs())
}

/// Adaptive Gauss-Kronrod quadrature; returns (integral, ∫|f|).
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64) -> (f64, f64) {
    if a == b {
        return (0.0, 0.0);
    }
    let (v, e, abs) = gk15(&mut f, a, b);
    let mut pieces = vec![(a, b, v, e, abs)];
    for _ in 0..5000 {
        let total: f64 = pieces.iter().map(|p| p.2).sum();
        let total_abs: f64 = pieces.iter().map(|p| p.4).sum();
        let err: f64 = pieces.iter().map(|p| p.3).sum();
        if err <= rel_tol * total_abs.max(1e-300) {
            return (total, total_abs);
        }
        let (idx, _) = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .unwrap();
        let (lo, hi, ..) = pieces.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        for (l, r) in [(lo, mid), (mid, hi)] {
            let (v, e, abs) = gk15(&mut f, l, r);
            pieces.push((l, r, v, e, abs));
        }
    }
    panic!("quadrature did not converge on [{a}, {b}]");
}

/// `∫` over consecutive breakpoints, so kinks never sit inside a panel.
pub fn integrate_piecewise<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], rel_tol: f64) -> f64 {
    breaks
        .windows(2)
        .map(|w| integrate(&mut f, w[0], w[1], rel_tol).0)
        .sum()
}

pub fn expm(m: &Matrix) -> Matrix {
    m.clone().exp()
}

/// `C e^{A h} B` via nalgebra's exponential.
pub fn impulse(sys: &StateSpace, h: f64) -> f64 {
    (sys.c() * expm(&(sys.a() * h)) * sys.b())[(0, 0)]
}

/// `C A e^{A h} B`.
pub fn impulse_dot(sys: &StateSpace, h: f64) -> f64 {
    (sys.c() * sys.a() * expm(&(sys.a() * h)) * sys.b())[(0, 0)]
}

/// `⟨φ_s, φ_t⟩` by quadrature; also returns `∫|φ_s φ_t|`.
pub fn inner_phi_phi_quad(sys: &StateSpace, s: f64, t: f64) -> (f64, f64) {
    integrate(
        |tau| impulse(sys, s - tau) * impulse(sys, t - tau),
        0.0,
        s.min(t),
        1e-13,
    )
}

/// `⟨φ̇_s, φ_t⟩` by quadrature; also returns `∫|φ̇_s φ_t|`.
pub fn inner_phidot_phi_quad(sys: &StateSpace, s: f64, t: f64) -> (f64, f64) {
    integrate(
        |tau| impulse_dot(sys, s - tau) * impulse(sys, t - tau),
        0.0,
        s.min(t),
        1e-13,
    )
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random SISO system of order `1..=5` with spectral norm of `A` at most 2.
pub fn random_system(rng: &mut ChaCha8Rng, horizon: f64) -> StateSpace {
    let n = rng.random_range(1..=5);
    let mut a = random_matrix(rng, n, n);
    let norm = a.clone().svd(false, false).singular_values.max();
    let target = rng.random_range(0.2..2.0);
    if norm > 0.0 {
        a *= target / norm;
    }
    let b = random_matrix(rng, n, 1);
    let c = random_matrix(rng, 1, n);
    StateSpace::new(a, b, c, horizon).unwrap()
}

/// Classical RK4 for `ẋ = Ax + Bu(t)`, `y = Cx`, returning `y` at each of
/// `times` (increasing), with steps no longer than `step` that land on every
/// requested time.
pub fn rk4_output<U: FnMut(f64) -> f64>(sys: &StateSpace, x0: &Vector, mut u: U, times: &[f64], step: f64) -> Vec<f64> {
    let a = sys.a();
    let b: Vector = sys.b().column(0).into_owned();
    let c: Vector = sys.c().row(0).transpose();
    let mut x = x0.clone();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &target in times {
        while t < target - 1e-15 {
            let h = step.min(target - t);
            let mut rhs = |tt: f64, xx: &Vector| a * xx + &b * u(tt);
            let k1 = rhs(t, &x);
            let k2 = rhs(t + h / 2.0, &(&x + &k1 * (h / 2.0)));
            let k3 = rhs(t + h / 2.0, &(&x + &k2 * (h / 2.0)));
            let k4 = rhs(t + h, &(&x + &k3 * h));
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            t += h;
        }
        t = target;
        out.push(c.dot(&x));
    }
    out
}

/// Random QP with a known feasible point; `P = LLᵀ` of the given rank.
pub fn random_qp(rng: &mut ChaCha8Rng, n: usize, rows: usize, rank: usize, with_box: bool) -> QpProblem {
    let l = random_matrix(rng, n, rank);
    let p = &l * l.transpose();
    let q = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let x_feas = Vector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    let mut a = monospline::linalg::DenseRows::new(n);
    let mut b = Vec::new();
    for _ in 0..rows {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ax: f64 = row.iter().zip(x_feas.iter()).map(|(r, x)| r * x).sum();
        b.push(ax + rng.random_range(0.0..0.5));
        a.push_row(&row).unwrap();
    }
    if with_box {
        for sign in [1.0, -1.0] {
            for j in 0..n {
                let mut row = vec![0.0; n];
                row[j] = sign;
                a.push_row(&row).unwrap();
                b.push(2.0);
            }
        }
    }
    QpProblem::new(p, q, a, Vector::from_vec(b), Matrix::zeros(0, n), Vector::zeros(0), 0.0).unwrap()
}

/// Exact minimum of a small strictly convex QP by enumerating active sets.
pub fn brute_force_qp(qp: &QpProblem) -> (Vector, f64) {
    let n = qp.dim();
    let m = qp.a_ineq.nrows();
    let a = qp.a_ineq.to_matrix();
    let mut best: Option<(Vector, f64)> = None;
    for mask in 0u32..(1 << m) {
        let active: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        if active.len() > n {
            continue;
        }
        let k = active.len();
        let mut kkt = Matrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
        let mut rhs = Vector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&qp.q));
        for (r, &i) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = a[(i, j)];
                kkt[(j, n + r)] = a[(i, j)];
            }
            rhs[n + r] = qp.b_ineq[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let x: Vector = sol.rows(0, n).into_owned();
        let feasible = (&a * &x - &qp.b_ineq).iter().all(|v| *v <= 1e-9);
        let dual_ok = sol.rows(n, k).iter().all(|v| *v >= -1e-9);
        if feasible && dual_ok {
            let f = qp.objective(&x);
            if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                best = Some((x, f));
            }
        }
    }
    best.expect("a strictly convex feasible QP has a KKT point")
}
