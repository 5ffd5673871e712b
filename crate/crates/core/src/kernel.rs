//! Spline kernel: the impulse-response sections `φ_t(τ) = C e^{A(t-τ)} B`
//! (zero for `t ≤ τ`), their time derivatives, and the inner products that
//! populate the Gram matrix `G`, the free-response map `F` and the
//! derivative row `Φ(t)` with `ẏ(t) = Φ(t)ᵀθ`.

use log::warn;

use crate::error::{Error, Result};
use crate::linalg::{
    block_generator, ensure_finite, mat_exp, symmetrize, van_loan_cross, van_loan_gramian, GramIntegralBlocks, Matrix,
    Vector,
};

/// Relative slack allowed when checking that a time lies in `[0, T]`.
const TIME_SLACK: f64 = 1e-12;

/// Exact re-anchoring period of the propagated block exponentials in a
/// uniform sweep.
const SWEEP_ANCHOR: usize = 256;

/// Single-input single-output generator `ẋ = Ax + Bu, y = Cx` on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    a: Matrix,
    b: Matrix,
    c: Matrix,
    horizon: f64,
    cb: f64,
}

impl StateSpace {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, horizon: f64) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::Dimension(format!(
                "A must be square with n >= 1, got {:?}",
                a.shape()
            )));
        }
        if b.shape() != (n, 1) {
            return Err(Error::Dimension(format!("B must be {n}x1, got {:?}", b.shape())));
        }
        if c.shape() != (1, n) {
            return Err(Error::Dimension(format!("C must be 1x{n}, got {:?}", c.shape())));
        }
        ensure_finite(&a, "A")?;
        ensure_finite(&b, "B")?;
        ensure_finite(&c, "C")?;
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Validation(format!(
                "horizon T must be positive and finite, got {horizon}"
            )));
        }
        let cb = (&c * &b)[(0, 0)];
        Ok(StateSpace { a, b, c, horizon, cb })
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        StateSpace::new(self.a.clone(), self.b.clone(), self.c.clone(), horizon)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// The high-frequency gain `CB`.
    pub fn cb(&self) -> f64 {
        self.cb
    }

    /// `CB == 0`, i.e. the derivative row `Φ(t)` is Lipschitz.
    pub fn relative_degree_at_least_two(&self) -> bool {
        self.cb == 0.0
    }

    /// Validates `t ∈ [0, T]`, snapping round-off just outside the ends.
    pub fn check_time(&self, name: &str, t: f64) -> Result<f64> {
        let slack = TIME_SLACK * self.horizon.max(1.0);
        if !t.is_finite() || t < -slack || t > self.horizon + slack {
            return Err(Error::Domain(format!(
                "{name} = {t} lies outside [0, {}]",
                self.horizon
            )));
        }
        Ok(t.clamp(0.0, self.horizon))
    }

    pub fn exp_at(&self, t: f64) -> Result<Matrix> {
        mat_exp(&(&self.a * t))
    }

    fn gram_generator(&self) -> Matrix {
        let q = self.c.transpose() * &self.c;
        block_generator(&self.a, &q).expect("dimensions checked at construction")
    }

    fn cross_generator(&self) -> Matrix {
        let q = self.a.transpose() * self.c.transpose() * &self.c;
        block_generator(&self.a, &q).expect("dimensions checked at construction")
    }
}

/// `φ_t(τ)`.
pub fn phi(sys: &StateSpace, t: f64, tau: f64) -> Result<f64> {
    let t = sys.check_time("t", t)?;
    let tau = sys.check_time("tau", tau)?;
    if t <= tau {
        return Ok(0.0);
    }
    Ok((sys.c() * sys.exp_at(t - tau)? * sys.b())[(0, 0)])
}

/// `∂φ_t(τ)/∂t`.
pub fn phi_dot(sys: &StateSpace, t: f64, tau: f64) -> Result<f64> {
    let t = sys.check_time("t", t)?;
    let tau = sys.check_time("tau", tau)?;
    if t <= tau {
        return Ok(0.0);
    }
    Ok((sys.c() * sys.a() * sys.exp_at(t - tau)? * sys.b())[(0, 0)])
}

/// `⟨φ_s, φ_t⟩` over `[0, T]`; the integrand vanishes past `min(s, t)`.
pub fn inner_phi_phi(sys: &StateSpace, s: f64, t: f64) -> Result<f64> {
    let s = sys.check_time("s", s)?;
    let t = sys.check_time("t", t)?;
    // ordered so that swapping the arguments gives a bit-identical result
    let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
    let w = van_loan_gramian(sys.a(), sys.c(), lo)?;
    let v_lo = sys.exp_at(lo)? * sys.b();
    let v_hi = sys.exp_at(hi)? * sys.b();
    Ok((v_lo.transpose() * w * v_hi)[(0, 0)])
}

/// `⟨φ̇_s, φ_t⟩`; not symmetric in `(s, t)`.
pub fn inner_phidot_phi(sys: &StateSpace, s: f64, t: f64) -> Result<f64> {
    let s = sys.check_time("s", s)?;
    let t = sys.check_time("t", t)?;
    let w = van_loan_cross(sys.a(), sys.c(), s.min(t))?;
    let vs = sys.exp_at(s)? * sys.b();
    let vt = sys.exp_at(t)? * sys.b();
    Ok((vs.transpose() * w * vt)[(0, 0)])
}

/// Validates sample times: `0 < t_1 < … < t_m = T`.
pub fn check_sample_times(times: &[f64], horizon: f64) -> Result<()> {
    let Some(&last) = times.last() else {
        return Err(Error::Validation("no sample times".into()));
    };
    if let Some(t) = times.iter().find(|t| !t.is_finite()) {
        return Err(Error::Validation(format!("sample time {t} is not finite")));
    }
    if times[0] <= 0.0 {
        return Err(Error::Validation(format!(
            "first sample time must be positive, got {}",
            times[0]
        )));
    }
    if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Validation(format!(
            "sample times must be strictly increasing, got {} then {}",
            w[0], w[1]
        )));
    }
    if last != horizon {
        return Err(Error::Validation(format!(
            "last sample time {last} must equal the horizon {horizon}"
        )));
    }
    Ok(())
}

/// Gram matrix `G`, free-response map `F` and per-knot caches for a fixed
/// set of sample times.
#[derive(Debug, Clone)]
pub struct KernelTable {
    times: Vec<f64>,
    gram: Matrix,
    output_map: Matrix,
    /// `e^{A t_i}`.
    knot_exps: Vec<Matrix>,
    /// `v_i = e^{A t_i} B`.
    knot_inputs: Vec<Vector>,
    /// `Wg(t_i) v_i`.
    gram_weights: Vec<Vector>,
    /// `Wc(t_i) v_i`.
    cross_weights: Vec<Vector>,
}

/// Builds `G[i][j] = ⟨φ_{t_j}, φ_{t_i}⟩` and `F` with rows `C e^{A t_i}`.
pub fn build_kernel_table(sys: &StateSpace, times: &[f64]) -> Result<KernelTable> {
    check_sample_times(times, sys.horizon())?;
    let m = times.len();
    let n = sys.order();

    let mut knot_exps = Vec::with_capacity(m);
    let mut knot_inputs = Vec::with_capacity(m);
    let mut gram_weights = Vec::with_capacity(m);
    let mut cross_weights = Vec::with_capacity(m);
    let gram_gen = sys.gram_generator();
    let cross_gen = sys.cross_generator();
    for &t in times {
        let e = sys.exp_at(t)?;
        let v: Vector = (&e * sys.b()).column(0).into_owned();
        let wg = symmetrize(&GramIntegralBlocks::from_generator(&gram_gen, t)?.integral());
        let wc = GramIntegralBlocks::from_generator(&cross_gen, t)?.integral();
        gram_weights.push(&wg * &v);
        cross_weights.push(&wc * &v);
        knot_exps.push(e);
        knot_inputs.push(v);
    }

    // G[i][j] = v_jᵀ Wg(min(t_i, t_j)) v_i = v_jᵀ (Wg(t_i) v_i) for t_i ≤ t_j
    let mut gram = Matrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let g = knot_inputs[j].dot(&gram_weights[i]);
            gram[(i, j)] = g;
            gram[(j, i)] = g;
        }
    }

    let mut output_map = Matrix::zeros(m, n);
    for (i, e) in knot_exps.iter().enumerate() {
        output_map.row_mut(i).copy_from(&(sys.c() * e));
    }

    Ok(KernelTable {
        times: times.to_vec(),
        gram,
        output_map,
        knot_exps,
        knot_inputs,
        gram_weights,
        cross_weights,
    })
}

impl KernelTable {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `G`.
    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    /// `F`.
    pub fn output_map(&self) -> &Matrix {
        &self.output_map
    }

    /// Length of the parameter vector `θ = [η; x_0]`.
    pub fn parameter_dim(&self) -> usize {
        self.times.len() + self.output_map.ncols()
    }
}

/// Everything needed to evaluate kernel rows at one time `t`.
#[derive(Debug, Clone)]
pub struct TimeSlice {
    t: f64,
    /// `e^{Aᵀt}`.
    exp_t: Matrix,
    /// `e^{-At}`.
    exp_neg: Matrix,
    /// `Wg(t)`.
    gram_w: Matrix,
    /// `Wc(t)`.
    cross_w: Matrix,
}

impl TimeSlice {
    pub fn at(sys: &StateSpace, t: f64) -> Result<Self> {
        let t = sys.check_time("t", t)?;
        let g = GramIntegralBlocks::from_generator(&sys.gram_generator(), t)?;
        let c = GramIntegralBlocks::from_generator(&sys.cross_generator(), t)?;
        Ok(Self::from_blocks(t, &g, &c))
    }

    fn from_blocks(t: f64, g: &GramIntegralBlocks, c: &GramIntegralBlocks) -> Self {
        TimeSlice {
            t,
            exp_t: g.f11.clone(),
            exp_neg: g.f22.clone(),
            gram_w: symmetrize(&g.integral()),
            cross_w: c.integral(),
        }
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// `v_t = e^{At} B`.
    fn input_response(&self, sys: &StateSpace) -> Vector {
        (self.exp_t.transpose() * sys.b()).column(0).into_owned()
    }

    /// Row `r(t)` with `y(t) = r(t)ᵀθ`: `[⟨φ_t, φ_{t_i}⟩]_i` followed by `(C e^{At})ᵀ`.
    pub fn output_row(&self, sys: &StateSpace, table: &KernelTable) -> Vector {
        let m = table.len();
        let n = sys.order();
        let vt = self.input_response(sys);
        let mut row = Vector::zeros(m + n);
        let wv = &self.gram_w * &vt;
        for i in 0..m {
            row[i] = if self.t < table.times[i] {
                wv.dot(&table.knot_inputs[i])
            } else {
                vt.dot(&table.gram_weights[i])
            };
        }
        let free = &self.exp_t * sys.c().transpose();
        row.rows_mut(m, n).copy_from(&free.column(0));
        row
    }

    /// `Φ(t)`: `[⟨φ̇_t, φ_{t_i}⟩ + CB·φ_{t_i}(t)]_i` followed by `e^{Aᵀt}AᵀCᵀ`.
    pub fn derivative_row(&self, sys: &StateSpace, table: &KernelTable) -> Vector {
        let m = table.len();
        let n = sys.order();
        let vt = self.input_response(sys);
        let mut row = Vector::zeros(m + n);
        let wv = self.cross_w.transpose() * &vt;
        let cb = sys.cb();
        let neg_b = if cb != 0.0 { Some(&self.exp_neg * sys.b()) } else { None };
        for i in 0..m {
            let ti = table.times[i];
            row[i] = if self.t < ti {
                let mut val = wv.dot(&table.knot_inputs[i]);
                if let Some(nb) = &neg_b {
                    // φ_{t_i}(t) = C e^{A t_i} e^{-At} B
                    val += cb * (sys.c() * &table.knot_exps[i] * nb)[(0, 0)];
                }
                val
            } else {
                vt.dot(&table.cross_weights[i])
            };
        }
        let ca_t = sys.a().transpose() * sys.c().transpose();
        let free = &self.exp_t * ca_t;
        row.rows_mut(m, n).copy_from(&free.column(0));
        row
    }

    /// `[φ_{t_i}(t)]_i`; `u(t)` is its dot product with `η`.
    pub fn input_row(&self, sys: &StateSpace, table: &KernelTable) -> Vector {
        let m = table.len();
        let neg_b = &self.exp_neg * sys.b();
        Vector::from_iterator(
            m,
            (0..m).map(|i| {
                if self.t < table.times[i] {
                    (sys.c() * &table.knot_exps[i] * &neg_b)[(0, 0)]
                } else {
                    0.0
                }
            }),
        )
    }
}

/// `Φ(t)`, satisfying `ẏ(t) = Φ(t)ᵀθ`.
pub fn build_constraint_vector(sys: &StateSpace, table: &KernelTable, t: f64) -> Result<Vector> {
    check_table(sys, table)?;
    Ok(TimeSlice::at(sys, t)?.derivative_row(sys, table))
}

pub(crate) fn check_table(sys: &StateSpace, table: &KernelTable) -> Result<()> {
    if table.output_map.ncols() != sys.order() {
        return Err(Error::Dimension(format!(
            "kernel table built for order {}, system has order {}",
            table.output_map.ncols(),
            sys.order()
        )));
    }
    if table.times.last() != Some(&sys.horizon()) {
        return Err(Error::Validation(
            "kernel table times do not end at the system horizon".into(),
        ));
    }
    Ok(())
}

/// Time of point `k` on the uniform grid with `intervals` pieces over `[0, T]`.
pub fn uniform_point(horizon: f64, intervals: usize, k: usize) -> f64 {
    if k >= intervals {
        horizon
    } else {
        horizon * (k as f64 / intervals as f64)
    }
}

/// Visits `TimeSlice`s on the uniform grid `t_k = kT/intervals`, `k = 0..=intervals`.
///
/// The block exponentials are advanced by multiplying with the one-step
/// exponential and recomputed directly every `SWEEP_ANCHOR` points, so the
/// cost per point is two small matrix products instead of two exponentials.
pub fn sweep_uniform<F>(sys: &StateSpace, intervals: usize, mut visit: F) -> Result<()>
where
    F: FnMut(usize, &TimeSlice),
{
    if intervals == 0 {
        return Err(Error::Validation("uniform sweep needs at least one interval".into()));
    }
    let horizon = sys.horizon();
    let gram_gen = sys.gram_generator();
    let cross_gen = sys.cross_generator();
    let step = horizon / intervals as f64;
    let gram_step = mat_exp(&(&gram_gen * step))?;
    let cross_step = mat_exp(&(&cross_gen * step))?;

    let mut gram_e = Matrix::identity(gram_gen.nrows(), gram_gen.ncols());
    let mut cross_e = gram_e.clone();
    for k in 0..=intervals {
        let t = uniform_point(horizon, intervals, k);
        if k % SWEEP_ANCHOR == 0 || k == intervals {
            gram_e = mat_exp(&(&gram_gen * t))?;
            cross_e = mat_exp(&(&cross_gen * t))?;
        } else {
            gram_e = &gram_e * &gram_step;
            cross_e = &cross_e * &cross_step;
        }
        let g = GramIntegralBlocks::split(&gram_e, t);
        let c = GramIntegralBlocks::split(&cross_e, t);
        visit(k, &TimeSlice::from_blocks(t, &g, &c));
    }
    Ok(())
}

pub(crate) fn warn_if_not_lipschitz(sys: &StateSpace) {
    if !sys.relative_degree_at_least_two() {
        warn!(
            "CB = {} is nonzero: the derivative row jumps at the sample times and the \
             grid certificate does not apply",
            sys.cb()
        );
    }
}
