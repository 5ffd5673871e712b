//! Assembly of the finite-dimensional quadratic program.
//!
//! With `θ = [η_1, …, η_m, x_0ᵀ]ᵀ` the cost becomes `½θᵀPθ + qᵀθ + αᵀWα` and
//! the continuum constraint `ẏ(t) ≥ 0` is replaced by `ẏ(T_k) ≥ ε` on a
//! uniform grid together with the box `‖θ‖_∞ ≤ r`. When the grid spacing is
//! at most `ε / (rμ)`, with `μ` a Lipschitz constant of `Φ` in the 1-norm,
//! every grid-feasible `θ` satisfies the continuum constraint.
//!
//! Inequalities are stored as `a_ineq·θ ≤ b_ineq`: the grid rows are
//! `-Φ(T_k)ᵀ` with right-hand side `-ε`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    check_sample_times, check_table, sweep_uniform, uniform_point, warn_if_not_lipschitz, KernelTable, StateSpace,
    TimeSlice,
};
use crate::linalg::{ensure_finite, symmetrize, DenseRows, Matrix, Vector};

pub const DEFAULT_GRID_CAP: usize = 10_000_000;
pub const DEFAULT_PROBE_POINTS: usize = 1024;
pub const LIPSCHITZ_SAFETY: f64 = 1.5;
pub const MIN_PROBE_POINTS: usize = 100;
const DEGENERATE_MU: f64 = 1e-12;
/// Relative slack when deciding whether `Tμr/ε` is an integer.
const SPACING_SLACK: f64 = 1e-12;

/// Noisy observations `(t_i, α_i)` with weights `w_i` and smoothing weight `λ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    times: Vec<f64>,
    values: Vec<f64>,
    weights: Vec<f64>,
    smoothing: f64,
}

impl DataSet {
    pub fn new(times: Vec<f64>, values: Vec<f64>, weights: Vec<f64>, smoothing: f64) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Validation("data set is empty".into()));
        }
        if values.len() != times.len() || weights.len() != times.len() {
            return Err(Error::Dimension(format!(
                "{} times, {} values and {} weights",
                times.len(),
                values.len(),
                weights.len()
            )));
        }
        check_sample_times(&times, *times.last().unwrap())?;
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!("value {i} is not finite: {v}")));
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::Validation(format!(
                "weight {i} must be positive and finite, got {w}"
            )));
        }
        if !(smoothing > 0.0) || !smoothing.is_finite() {
            return Err(Error::Validation(format!(
                "smoothing weight lambda must be positive, got {smoothing}"
            )));
        }
        Ok(DataSet {
            times,
            values,
            weights,
            smoothing,
        })
    }

    pub fn with_uniform_weight(times: Vec<f64>, values: Vec<f64>, weight: f64, smoothing: f64) -> Result<Self> {
        let weights = vec![weight; times.len()];
        DataSet::new(times, values, weights, smoothing)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `T = t_m`.
    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty by construction")
    }

    /// `αᵀWα`.
    pub fn weighted_sum_of_squares(&self) -> f64 {
        self.values.iter().zip(&self.weights).map(|(a, w)| w * a * a).sum()
    }

    pub fn value_range(&self) -> f64 {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        hi - lo
    }
}

/// Quadratic and linear parts of the cost plus the dropped constant `αᵀWα`.
#[derive(Debug, Clone)]
pub struct CostTerms {
    pub p: Matrix,
    pub q: Vector,
    pub constant: f64,
}

/// `P = [[2(λI + GW)G, 2GWF], [2FᵀWG, 2FᵀWF]]`, `q = -2[G F]ᵀWα`.
pub fn assemble_cost(table: &KernelTable, data: &DataSet) -> Result<CostTerms> {
    if table.times() != data.times() {
        return Err(Error::Validation(
            "kernel table and data set have different sample times".into(),
        ));
    }
    let m = data.len();
    let g = table.gram();
    let f = table.output_map();
    let n = f.ncols();
    let w = Matrix::from_diagonal(&Vector::from_column_slice(data.weights()));
    let alpha = Vector::from_column_slice(data.values());
    let lambda = data.smoothing();

    let gw = g * &w;
    let mut p = Matrix::zeros(m + n, m + n);
    let top_left = (Matrix::identity(m, m) * lambda + &gw) * g * 2.0;
    let top_right = &gw * f * 2.0;
    let bottom_right = f.transpose() * &w * f * 2.0;
    p.view_mut((0, 0), (m, m)).copy_from(&top_left);
    p.view_mut((0, m), (m, n)).copy_from(&top_right);
    p.view_mut((m, 0), (n, m)).copy_from(&top_right.transpose());
    p.view_mut((m, m), (n, n)).copy_from(&bottom_right);

    let w_alpha = &w * &alpha;
    let mut q = Vector::zeros(m + n);
    q.rows_mut(0, m).copy_from(&(g.transpose() * &w_alpha * -2.0));
    q.rows_mut(m, n).copy_from(&(f.transpose() * &w_alpha * -2.0));

    Ok(CostTerms {
        p: symmetrize(&p),
        q,
        constant: data.weighted_sum_of_squares(),
    })
}

/// Estimated Lipschitz constant of `t ↦ Φ(t)` in the 1-norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub mu: f64,
    pub probe_points: usize,
    /// `Φ` did not change on the probe grid; `mu` is a floor value.
    pub degenerate: bool,
    /// `CB ≠ 0`: `Φ` jumps at the sample times and is not Lipschitz.
    pub cb_nonzero: bool,
}

/// `μ = 1.5 · max_k ‖Φ(t_{k+1}) - Φ(t_k)‖₁ / (t_{k+1} - t_k)` on a uniform
/// probe grid with `probe_points` intervals.
pub fn estimate_lipschitz(sys: &StateSpace, table: &KernelTable, probe_points: usize) -> Result<LipschitzEstimate> {
    check_table(sys, table)?;
    if probe_points < MIN_PROBE_POINTS {
        return Err(Error::Validation(format!(
            "at least {MIN_PROBE_POINTS} probe points are needed, got {probe_points}"
        )));
    }
    warn_if_not_lipschitz(sys);
    let step = sys.horizon() / probe_points as f64;
    let mut prev: Option<Vector> = None;
    let mut max_slope: f64 = 0.0;
    sweep_uniform(sys, probe_points, |_, slice| {
        let row = slice.derivative_row(sys, table);
        if let Some(p) = &prev {
            let diff: f64 = (&row - p).iter().map(|v| v.abs()).sum();
            max_slope = max_slope.max(diff / step);
        }
        prev = Some(row);
    })?;
    let degenerate = !(max_slope > 0.0);
    if degenerate {
        warn!("derivative row is constant on the probe grid; using mu = {DEGENERATE_MU}");
    }
    Ok(LipschitzEstimate {
        mu: if degenerate {
            DEGENERATE_MU
        } else {
            LIPSCHITZ_SAFETY * max_slope
        },
        probe_points,
        degenerate,
        cb_nonzero: !sys.relative_degree_at_least_two(),
    })
}

/// Uniform discretization grid with margin `ε` and box bound `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPlan {
    epsilon: f64,
    r: f64,
    mu: f64,
    grid: Vec<f64>,
}

impl GridPlan {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().expect("grid has at least two points")
    }

    /// `M`, the number of grid intervals.
    pub fn intervals(&self) -> usize {
        self.grid.len() - 1
    }

    /// `I_max(M)`.
    pub fn max_spacing(&self) -> f64 {
        self.grid.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// `ε / (rμ)`.
    pub fn spacing_bound(&self) -> f64 {
        self.epsilon / (self.r * self.mu)
    }

    /// `I_max(M) ≤ ε / (rμ)`, up to the rounding of grid points near `T`.
    pub fn certificate_holds(&self) -> bool {
        let rounding = 4.0 * f64::EPSILON * self.horizon();
        self.max_spacing() <= self.spacing_bound() + rounding
    }
}

pub fn plan_grid(horizon: f64, epsilon: f64, r: f64, mu: f64) -> Result<GridPlan> {
    plan_grid_capped(horizon, epsilon, r, mu, DEFAULT_GRID_CAP)
}

/// Smallest uniform grid with spacing at most `ε / (rμ)`.
pub fn plan_grid_capped(horizon: f64, epsilon: f64, r: f64, mu: f64, cap: usize) -> Result<GridPlan> {
    for (name, v) in [("horizon", horizon), ("epsilon", epsilon), ("r", r), ("mu", mu)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Validation(format!(
                "{name} must be positive and finite, got {v}"
            )));
        }
    }
    let exact = horizon * r * mu / epsilon;
    // an exact integer ratio must not be bumped up by round-off in the division
    let nearest = exact.round();
    let required = if (exact - nearest).abs() <= SPACING_SLACK * exact {
        nearest
    } else {
        exact.ceil()
    }
    .max(1.0);
    if !(required <= cap as f64) {
        return Err(Error::GridTooLarge { required, cap });
    }
    let mut intervals = required as usize;
    loop {
        let plan = GridPlan {
            epsilon,
            r,
            mu,
            grid: (0..=intervals).map(|k| uniform_point(horizon, intervals, k)).collect(),
        };
        if plan.certificate_holds() {
            return Ok(plan);
        }
        intervals += 1;
        if intervals > cap {
            return Err(Error::GridTooLarge {
                required: intervals as f64,
                cap,
            });
        }
    }
}

/// Grid rows `-Φ(T_k)ᵀθ ≤ -ε` followed by the box `θ ≤ r`, `-θ ≤ r`.
pub fn assemble_constraints(table: &KernelTable, sys: &StateSpace, plan: &GridPlan) -> Result<(DenseRows, Vector)> {
    check_table(sys, table)?;
    if plan.horizon() != sys.horizon() {
        return Err(Error::Validation(format!(
            "grid ends at {}, system horizon is {}",
            plan.horizon(),
            sys.horizon()
        )));
    }
    let dim = table.parameter_dim();
    let intervals = plan.intervals();
    let mut rows = DenseRows::with_capacity(dim, intervals + 1 + 2 * dim);
    sweep_uniform(sys, intervals, |_, slice| {
        let row = -slice.derivative_row(sys, table);
        rows.push_row(row.as_slice())
            .expect("row length is the parameter dimension");
    })?;
    let mut rhs: Vec<f64> = vec![-plan.epsilon; intervals + 1];
    append_box(&mut rows, &mut rhs, plan.r)?;
    Ok((rows, Vector::from_vec(rhs)))
}

/// Rows `-Φ(t)ᵀθ ≤ -margin` at arbitrary times.
pub fn derivative_rows_at(
    table: &KernelTable,
    sys: &StateSpace,
    times: &[f64],
    margin: f64,
) -> Result<(DenseRows, Vector)> {
    check_table(sys, table)?;
    let mut rows = DenseRows::with_capacity(table.parameter_dim(), times.len());
    for &t in times {
        let row = -TimeSlice::at(sys, t)?.derivative_row(sys, table);
        rows.push_row(row.as_slice())?;
    }
    Ok((rows, Vector::from_element(times.len(), -margin)))
}

pub(crate) fn append_box(rows: &mut DenseRows, rhs: &mut Vec<f64>, r: f64) -> Result<()> {
    let dim = rows.ncols();
    let mut unit = vec![0.0; dim];
    for sign in [1.0, -1.0] {
        for j in 0..dim {
            unit[j] = sign;
            rows.push_row(&unit)?;
            unit[j] = 0.0;
            rhs.push(r);
        }
    }
    Ok(())
}

/// `min ½θᵀPθ + qᵀθ` subject to `a_ineq·θ ≤ b_ineq` and `a_eq·θ = b_eq`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: Matrix,
    pub q: Vector,
    pub a_ineq: DenseRows,
    pub b_ineq: Vector,
    pub a_eq: Matrix,
    pub b_eq: Vector,
    /// Constant dropped from the objective (`αᵀWα`).
    pub constant: f64,
}

impl QpProblem {
    pub fn new(
        p: Matrix,
        q: Vector,
        a_ineq: DenseRows,
        b_ineq: Vector,
        a_eq: Matrix,
        b_eq: Vector,
        constant: f64,
    ) -> Result<Self> {
        let qp = QpProblem {
            p,
            q,
            a_ineq,
            b_ineq,
            a_eq,
            b_eq,
            constant,
        };
        qp.validate()?;
        Ok(qp)
    }

    /// A problem with no constraints.
    pub fn unconstrained(cost: CostTerms) -> Result<Self> {
        let dim = cost.q.len();
        QpProblem::new(
            cost.p,
            cost.q,
            DenseRows::new(dim),
            Vector::zeros(0),
            Matrix::zeros(0, dim),
            Vector::zeros(0),
            cost.constant,
        )
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.len();
        if self.p.shape() != (n, n) {
            return Err(Error::Dimension(format!("P is {:?}, expected {n}x{n}", self.p.shape())));
        }
        if self.a_ineq.ncols() != n && self.a_ineq.nrows() > 0 {
            return Err(Error::Dimension(format!(
                "inequality rows have {} columns, expected {n}",
                self.a_ineq.ncols()
            )));
        }
        if self.a_ineq.nrows() != self.b_ineq.len() {
            return Err(Error::Dimension(format!(
                "{} inequality rows but {} right-hand sides",
                self.a_ineq.nrows(),
                self.b_ineq.len()
            )));
        }
        if self.a_eq.ncols() != n || self.a_eq.nrows() != self.b_eq.len() {
            return Err(Error::Dimension(format!(
                "equality block is {:?} with {} right-hand sides, expected k×{n}",
                self.a_eq.shape(),
                self.b_eq.len()
            )));
        }
        ensure_finite(&self.p, "P")?;
        let finite = |v: &Vector| v.iter().all(|x| x.is_finite());
        if !finite(&self.q) || !finite(&self.b_ineq) || !finite(&self.b_eq) {
            return Err(Error::NonFinite("QP vectors".into()));
        }
        if !self.a_ineq.rows().flatten().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("inequality rows".into()));
        }
        ensure_finite(&self.a_eq, "equality rows")?;
        if !self.constant.is_finite() {
            return Err(Error::NonFinite("constant".into()));
        }
        Ok(())
    }

    /// `½θᵀPθ + qᵀθ`.
    pub fn objective(&self, theta: &Vector) -> f64 {
        0.5 * theta.dot(&(&self.p * theta)) + self.q.dot(theta)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&QpProblemJson::from(self))
            .map_err(|e| Error::Validation(format!("cannot serialize QP: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: QpProblemJson =
            serde_json::from_str(text).map_err(|e| Error::Validation(format!("malformed QP JSON: {e}")))?;
        raw.try_into()
    }
}

pub const QP_JSON_CONVENTION: &str = "minimize 0.5*x'*p*x + q'*x subject to a_ineq*x <= b_ineq and a_eq*x = b_eq; \
     monotonicity rows are -Phi(T_k)' with right-hand side -epsilon";

/// On-disk layout of [`QpProblem`]; matrices are arrays of rows.
#[derive(Debug, Serialize, Deserialize)]
struct QpProblemJson {
    #[serde(default)]
    convention: Option<String>,
    p: Vec<Vec<f64>>,
    q: Vec<f64>,
    #[serde(default)]
    a_ineq: Vec<Vec<f64>>,
    #[serde(default)]
    b_ineq: Vec<f64>,
    #[serde(default)]
    a_eq: Vec<Vec<f64>>,
    #[serde(default)]
    b_eq: Vec<f64>,
    #[serde(default)]
    constant: f64,
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl From<&QpProblem> for QpProblemJson {
    fn from(qp: &QpProblem) -> Self {
        QpProblemJson {
            convention: Some(QP_JSON_CONVENTION.to_string()),
            p: matrix_rows(&qp.p),
            q: qp.q.iter().copied().collect(),
            a_ineq: qp.a_ineq.clone().into(),
            b_ineq: qp.b_ineq.iter().copied().collect(),
            a_eq: matrix_rows(&qp.a_eq),
            b_eq: qp.b_eq.iter().copied().collect(),
            constant: qp.constant,
        }
    }
}

impl TryFrom<QpProblemJson> for QpProblem {
    type Error = Error;

    fn try_from(raw: QpProblemJson) -> Result<Self> {
        let n = raw.q.len();
        let rows_to_matrix = |rows: &[Vec<f64>], what: &str| -> Result<Matrix> {
            let mut data = Vec::with_capacity(rows.len() * n);
            for (i, r) in rows.iter().enumerate() {
                if r.len() != n {
                    return Err(Error::Dimension(format!(
                        "{what} row {i} has {} entries, expected {n}",
                        r.len()
                    )));
                }
                data.extend_from_slice(r);
            }
            Ok(Matrix::from_row_slice(rows.len(), n, &data))
        };
        let p = rows_to_matrix(&raw.p, "p")?;
        let a_eq = rows_to_matrix(&raw.a_eq, "a_eq")?;
        let mut a_ineq = DenseRows::with_capacity(n, raw.a_ineq.len());
        for r in &raw.a_ineq {
            a_ineq.push_row(r)?;
        }
        QpProblem::new(
            p,
            Vector::from_vec(raw.q),
            a_ineq,
            Vector::from_vec(raw.b_ineq),
            a_eq,
            Vector::from_vec(raw.b_eq),
            raw.constant,
        )
    }
}

/// Which output quantity an equality constraint pins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EqualityKind {
    /// `y(t) = target`.
    Value,
    /// `ẏ(t) = target`.
    Derivative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EqualityConstraint {
    pub kind: EqualityKind,
    pub t: f64,
    pub target: f64,
}

/// Row `r` with `rᵀθ = y(t)` or `rᵀθ = ẏ(t)`.
pub fn equality_row(table: &KernelTable, sys: &StateSpace, kind: EqualityKind, t: f64) -> Result<Vector> {
    check_table(sys, table)?;
    let slice = TimeSlice::at(sys, t)?;
    Ok(match kind {
        EqualityKind::Value => slice.output_row(sys, table),
        EqualityKind::Derivative => slice.derivative_row(sys, table),
    })
}

/// Appends `y(t) = target` or `ẏ(t) = target` to the equality block.
pub fn add_equality(
    mut qp: QpProblem,
    table: &KernelTable,
    sys: &StateSpace,
    kind: EqualityKind,
    t: f64,
    target: f64,
) -> Result<QpProblem> {
    if !target.is_finite() {
        return Err(Error::Validation(format!("equality target {target} is not finite")));
    }
    let row = equality_row(table, sys, kind, t)?;
    if row.len() != qp.dim() {
        return Err(Error::Dimension(format!(
            "equality row has {} entries, QP has {} variables",
            row.len(),
            qp.dim()
        )));
    }
    let scale = 1.0 + row.amax();
    for (i, existing) in qp.a_eq.row_iter().enumerate() {
        let same = existing
            .iter()
            .zip(row.iter())
            .all(|(a, b)| (a - b).abs() <= 1e-12 * scale);
        if same && (qp.b_eq[i] - target).abs() > 1e-12 * (1.0 + target.abs()) {
            return Err(Error::Validation(format!(
                "{kind:?} constraint at t = {t} contradicts an existing equality \
                 ({} vs {target})",
                qp.b_eq[i]
            )));
        }
    }

    let k = qp.a_eq.nrows();
    let mut a_eq = qp.a_eq.clone().insert_row(k, 0.0);
    a_eq.row_mut(k).copy_from(&row.transpose());
    let b_eq = qp.b_eq.clone().push(target);

    let rank = a_eq.clone().svd(false, false).rank(1e-10 * (1.0 + a_eq.amax()));
    if rank < a_eq.nrows() {
        warn!(
            "equality rows are linearly dependent (rank {rank} of {}); dependent rows are \
             eliminated before solving",
            a_eq.nrows()
        );
    }
    qp.a_eq = a_eq;
    qp.b_eq = b_eq;
    Ok(qp)
}

/// `10⁻³ · (range of α) / T`, the default constraint margin.
pub fn default_epsilon(data: &DataSet) -> f64 {
    let scale = data.value_range() / data.horizon();
    if scale > 0.0 {
        1e-3 * scale
    } else {
        1e-6
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::build_kernel_table;
    use crate::linalg::matrix_from_rows;

    fn double_integrator(horizon: f64) -> StateSpace {
        StateSpace::new(
            matrix_from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap(),
            matrix_from_rows(&[[0.0], [1.0]]).unwrap(),
            matrix_from_rows(&[[1.0, 0.0]]).unwrap(),
            horizon,
        )
        .unwrap()
    }

    #[test]
    fn data_set_validation() {
        assert!(DataSet::with_uniform_weight(vec![], vec![], 1.0, 1.0).is_err());
        assert!(DataSet::with_uniform_weight(vec![0.0, 1.0], vec![0.0, 1.0], 1.0, 1.0).is_err());
        assert!(DataSet::with_uniform_weight(vec![1.0, 1.0], vec![0.0, 1.0], 1.0, 1.0).is_err());
        assert!(DataSet::with_uniform_weight(vec![1.0, 2.0], vec![0.0, 1.0], 0.0, 1.0).is_err());
        assert!(DataSet::with_uniform_weight(vec![1.0, 2.0], vec![0.0, 1.0], 1.0, 0.0).is_err());
        assert!(DataSet::new(vec![1.0, 2.0], vec![0.0], vec![1.0, 1.0], 1.0).is_err());
        let d = DataSet::with_uniform_weight(vec![1.0, 2.0], vec![0.5, 1.0], 2.0, 1.0).unwrap();
        assert_eq!(d.horizon(), 2.0);
        assert!((d.weighted_sum_of_squares() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn cost_with_zero_data_has_zero_linear_term() {
        let sys = double_integrator(2.0);
        let table = build_kernel_table(&sys, &[1.0, 2.0]).unwrap();
        let data = DataSet::with_uniform_weight(vec![1.0, 2.0], vec![0.0, 0.0], 1.0, 0.3).unwrap();
        let cost = assemble_cost(&table, &data).unwrap();
        assert_eq!(cost.q.amax(), 0.0);
        assert_eq!(cost.constant, 0.0);
    }

    #[test]
    fn cost_single_knot_double_integrator() {
        let sys = double_integrator(1.0);
        let table = build_kernel_table(&sys, &[1.0]).unwrap();
        let data = DataSet::with_uniform_weight(vec![1.0], vec![1.0], 1.0, 1.0).unwrap();
        let cost = assemble_cost(&table, &data).unwrap();
        let p00 = 2.0 * (1.0 / 3.0 + 1.0 / 9.0);
        let expected_p = matrix_from_rows(&[
            [p00, 2.0 / 3.0, 2.0 / 3.0],
            [2.0 / 3.0, 2.0, 2.0],
            [2.0 / 3.0, 2.0, 2.0],
        ])
        .unwrap();
        assert!((&cost.p - expected_p).amax() < 1e-12);
        let expected_q = [-2.0 / 3.0, -2.0, -2.0];
        for (a, b) in cost.q.iter().zip(expected_q) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(cost.constant, 1.0);
    }

    #[test]
    fn cost_rejects_mismatched_times() {
        let sys = double_integrator(2.0);
        let table = build_kernel_table(&sys, &[1.0, 2.0]).unwrap();
        let data = DataSet::with_uniform_weight(vec![0.5, 2.0], vec![0.0, 0.0], 1.0, 1.0).unwrap();
        assert!(assemble_cost(&table, &data).is_err());
    }

    #[test]
    fn plan_grid_direct_formula() {
        let plan = plan_grid(7.0, 0.01, 10.0, 1.0).unwrap();
        assert_eq!(plan.intervals(), 7000);
        assert!(plan.certificate_holds());
        assert!(plan.max_spacing() <= 0.001 + 1e-14);
        assert_eq!(plan.grid()[0], 0.0);
        assert_eq!(*plan.grid().last().unwrap(), 7.0);
    }

    #[test]
    fn plan_grid_single_interval() {
        let plan = plan_grid(1.0, 5.0, 1.0, 2.0).unwrap();
        assert_eq!(plan.intervals(), 1);
        assert_eq!(plan.grid(), &[0.0, 1.0]);
    }

    #[test]
    fn halving_epsilon_doubles_intervals() {
        let a = plan_grid(3.0, 0.02, 2.0, 1.3).unwrap().intervals();
        let b = plan_grid(3.0, 0.01, 2.0, 1.3).unwrap().intervals();
        assert!(b == 2 * a || b == 2 * a - 1, "{a} -> {b}");
    }

    #[test]
    fn plan_grid_cap() {
        let err = plan_grid_capped(7.0, 1e-6, 10.0, 10.0, 1000).unwrap_err();
        assert!(matches!(err, Error::GridTooLarge { .. }));
        assert!(plan_grid(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(plan_grid(1.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn constraint_dimensions_and_zero_theta() {
        let sys = double_integrator(2.0);
        let table = build_kernel_table(&sys, &[1.0, 2.0]).unwrap();
        let plan = plan_grid(2.0, 0.1, 1.0, 2.0).unwrap();
        let (a, b) = assemble_constraints(&table, &sys, &plan).unwrap();
        let dim = table.parameter_dim();
        assert_eq!(a.nrows(), plan.intervals() + 1 + 2 * dim);
        assert_eq!(a.ncols(), dim);
        let ax = a.mul_vec(&Vector::zeros(dim));
        // θ = 0 gives ẏ ≡ 0, which violates every margin row
        for k in 0..=plan.intervals() {
            assert!(ax[k] > b[k]);
        }
        for k in plan.intervals() + 1..a.nrows() {
            assert!(ax[k] <= b[k]);
        }
    }

    #[test]
    fn lipschitz_rejects_few_probes() {
        let sys = double_integrator(1.0);
        let table = build_kernel_table(&sys, &[1.0]).unwrap();
        assert!(estimate_lipschitz(&sys, &table, 50).is_err());
    }

    #[test]
    fn lipschitz_double_integrator_bound() {
        let sys = double_integrator(1.0);
        let table = build_kernel_table(&sys, &[1.0]).unwrap();
        let est = estimate_lipschitz(&sys, &table, 512).unwrap();
        assert!(!est.degenerate && !est.cb_nonzero);
        assert!(est.mu > 0.0 && est.mu <= 3.0, "mu = {}", est.mu);
    }

    #[test]
    fn lipschitz_flags_nonzero_cb() {
        let one = Matrix::from_element(1, 1, 1.0);
        let sys = StateSpace::new(-one.clone(), one.clone(), one, 1.0).unwrap();
        let table = build_kernel_table(&sys, &[0.5, 1.0]).unwrap();
        assert!(estimate_lipschitz(&sys, &table, 200).unwrap().cb_nonzero);
    }

    #[test]
    fn value_equality_at_origin() {
        let sys = double_integrator(2.0);
        let table = build_kernel_table(&sys, &[1.0, 2.0]).unwrap();
        let data = DataSet::with_uniform_weight(vec![1.0, 2.0], vec![0.0, 1.0], 1.0, 1.0).unwrap();
        let qp = QpProblem::unconstrained(assemble_cost(&table, &data).unwrap()).unwrap();
        let qp = add_equality(qp, &table, &sys, EqualityKind::Value, 0.0, 0.25).unwrap();
        assert_eq!(qp.a_eq.nrows(), 1);
        let row: Vec<f64> = qp.a_eq.row(0).iter().copied().collect();
        assert_eq!(row, vec![0.0, 0.0, 1.0, 0.0]);
        assert_eq!(qp.b_eq[0], 0.25);
    }

    #[test]
    fn contradictory_equalities_rejected() {
        let sys = double_integrator(2.0);
        let table = build_kernel_table(&sys, &[1.0, 2.0]).unwrap();
        let data = DataSet::with_uniform_weight(vec![1.0, 2.0], vec![0.0, 1.0], 1.0, 1.0).unwrap();
        let qp = QpProblem::unconstrained(assemble_cost(&table, &data).unwrap()).unwrap();
        let qp = add_equality(qp, &table, &sys, EqualityKind::Value, 2.0, 1.0).unwrap();
        let same = add_equality(qp.clone(), &table, &sys, EqualityKind::Value, 2.0, 1.0).unwrap();
        assert_eq!(same.a_eq.nrows(), 2);
        let err = add_equality(qp, &table, &sys, EqualityKind::Value, 2.0, 3.0).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn qp_json_round_trip() {
        let sys = double_integrator(2.0);
        let table = build_kernel_table(&sys, &[1.0, 2.0]).unwrap();
        let data = DataSet::with_uniform_weight(vec![1.0, 2.0], vec![0.3, 1.0], 1.0, 0.5).unwrap();
        let cost = assemble_cost(&table, &data).unwrap();
        let plan = plan_grid(2.0, 0.5, 1.0, 2.0).unwrap();
        let (a, b) = assemble_constraints(&table, &sys, &plan).unwrap();
        let qp = QpProblem::new(
            cost.p,
            cost.q,
            a,
            b,
            Matrix::zeros(0, 4),
            Vector::zeros(0),
            cost.constant,
        )
        .unwrap();
        let qp = add_equality(qp, &table, &sys, EqualityKind::Derivative, 2.0, 0.0).unwrap();
        let json = qp.to_json().unwrap();
        for key in [
            "\"p\"",
            "\"q\"",
            "\"a_ineq\"",
            "\"b_ineq\"",
            "\"a_eq\"",
            "\"b_eq\"",
            "\"constant\"",
        ] {
            assert!(json.contains(key), "missing {key}");
        }
        assert_eq!(QpProblem::from_json(&json).unwrap(), qp);
    }

    #[test]
    fn qp_json_rejects_bad_shapes() {
        let bad = r#"{"p": [[1.0, 0.0]], "q": [0.0, 0.0]}"#;
        assert!(QpProblem::from_json(bad).is_err());
        assert!(QpProblem::from_json("not json").is_err());
    }
}
