//! Monotone smoothing spline fits and their evaluation.

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{
    build_kernel_table, check_table, sweep_uniform, uniform_point, KernelTable, StateSpace, TimeSlice,
};
use crate::linalg::{mat_exp, Matrix, Vector};
use crate::problem::{
    add_equality, assemble_constraints, assemble_cost, default_epsilon, derivative_rows_at, estimate_lipschitz,
    plan_grid_capped, DataSet, EqualityConstraint, GridPlan, LipschitzEstimate, QpProblem, DEFAULT_GRID_CAP,
    DEFAULT_PROBE_POINTS,
};
use crate::qpsolve::{solve, KktResiduals, SolveStatus, SolverOptions};

pub const AUTO_BOX_FACTOR: f64 = 10.0;
pub const DEFAULT_VERIFY_MULTIPLIER: usize = 10;
/// Floor on the number of intervals of the verification grid.
pub const MIN_VERIFY_INTERVALS: usize = 10_000;
/// Re-anchoring period of the state propagation used by [`ydot_on_uniform_grid`].
const PROPAGATION_ANCHOR: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Certified grid with margin `ε` and a box on `θ`.
    #[default]
    Proposed,
    /// `ẏ ≥ 0` imposed only at `t = 0` and the sample times.
    Conventional,
}

/// Bound `r` of the box `‖θ‖_∞ ≤ r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoxBound {
    Fixed(f64),
    /// `10 · ‖θ_unc‖_∞` where `θ_unc` solves the problem without inequalities.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub mode: Mode,
    /// Margin `ε`; `None` picks [`default_epsilon`].
    pub epsilon: Option<f64>,
    pub r: BoxBound,
    pub probe_points: usize,
    pub grid_cap: usize,
    pub solver: SolverOptions,
    pub verify_multiplier: usize,
    pub equalities: Vec<EqualityConstraint>,
    /// Solve large grids on a working set of rows grown until no grid row
    /// is violated; off solves with every row present.
    pub screening: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            mode: Mode::Proposed,
            epsilon: None,
            r: BoxBound::Auto,
            probe_points: DEFAULT_PROBE_POINTS,
            grid_cap: DEFAULT_GRID_CAP,
            solver: SolverOptions::default(),
            verify_multiplier: DEFAULT_VERIFY_MULTIPLIER,
            equalities: Vec::new(),
            screening: true,
        }
    }
}

/// Fitted curve `y(t) = Σ η_i ⟨φ_t, φ_{t_i}⟩ + C e^{At} x_0`.
#[derive(Debug, Clone)]
pub struct SplineCurve {
    sys: StateSpace,
    table: KernelTable,
    theta: Vector,
}

/// One row of a sampled curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveSample {
    pub t: f64,
    pub y: f64,
    pub ydot: f64,
    pub u: f64,
}

impl SplineCurve {
    pub fn new(sys: StateSpace, table: KernelTable, theta: Vector) -> Result<Self> {
        check_table(&sys, &table)?;
        if theta.len() != table.parameter_dim() {
            return Err(Error::Dimension(format!(
                "theta has {} entries, expected {}",
                theta.len(),
                table.parameter_dim()
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("theta".into()));
        }
        Ok(SplineCurve { sys, table, theta })
    }

    pub fn system(&self) -> &StateSpace {
        &self.sys
    }

    pub fn table(&self) -> &KernelTable {
        &self.table
    }

    /// `θ = [η; x_0]`.
    pub fn theta(&self) -> &Vector {
        &self.theta
    }

    pub fn eta(&self) -> Vector {
        self.theta.rows(0, self.table.len()).into_owned()
    }

    pub fn x0(&self) -> Vector {
        self.theta.rows(self.table.len(), self.sys.order()).into_owned()
    }

    /// `u(t) = Σ η_i φ_{t_i}(t)`.
    pub fn evaluate_u(&self, t: f64) -> Result<f64> {
        let slice = TimeSlice::at(&self.sys, t)?;
        Ok(slice.input_row(&self.sys, &self.table).dot(&self.eta()))
    }

    pub fn evaluate_y(&self, t: f64) -> Result<f64> {
        let slice = TimeSlice::at(&self.sys, t)?;
        Ok(slice.output_row(&self.sys, &self.table).dot(&self.theta))
    }

    /// `ẏ(t) = Φ(t)ᵀθ`.
    pub fn evaluate_ydot(&self, t: f64) -> Result<f64> {
        let slice = TimeSlice::at(&self.sys, t)?;
        Ok(slice.derivative_row(&self.sys, &self.table).dot(&self.theta))
    }

    /// `∫₀ᵀ u² = ηᵀGη`.
    pub fn input_energy(&self) -> f64 {
        let eta = self.eta();
        eta.dot(&(self.table.gram() * &eta))
    }

    /// Fitted values `y(t_i) = Gη + F x_0` at the sample times.
    pub fn fitted_values(&self) -> Vector {
        self.table.gram() * self.eta() + self.table.output_map() * self.x0()
    }

    /// `J(θ) = λ ∫u² + Σ w_i (y(t_i) - α_i)²`.
    pub fn cost(&self, data: &DataSet) -> Result<f64> {
        if data.times() != self.table.times() {
            return Err(Error::Validation(
                "data times differ from the curve's sample times".into(),
            ));
        }
        let fitted = self.fitted_values();
        let misfit: f64 = fitted
            .iter()
            .zip(data.values())
            .zip(data.weights())
            .map(|((y, a), w)| w * (y - a) * (y - a))
            .sum();
        Ok(data.smoothing() * self.input_energy() + misfit)
    }

    /// `points` equally spaced samples of `(t, y, ẏ, u)` over `[0, T]`.
    pub fn sample(&self, points: usize) -> Result<Vec<CurveSample>> {
        if points < 2 {
            return Err(Error::Validation(format!(
                "curve resolution must be at least 2 points, got {points}"
            )));
        }
        let eta = self.eta();
        let mut out = Vec::with_capacity(points);
        sweep_uniform(&self.sys, points - 1, |_, slice| {
            out.push(CurveSample {
                t: slice.time(),
                y: slice.output_row(&self.sys, &self.table).dot(&self.theta),
                ydot: slice.derivative_row(&self.sys, &self.table).dot(&self.theta),
                u: slice.input_row(&self.sys, &self.table).dot(&eta),
            });
        })?;
        Ok(out)
    }
}

/// Visits `(k, t_k, y(t_k), ẏ(t_k))` on the uniform grid with `intervals` pieces.
///
/// Between sample times `u(t) = Bᵀw(t)` with `ẇ = -Aᵀw`, so `z = [x; w]`
/// follows the autonomous system `ż = [[A, BBᵀ], [0, -Aᵀ]] z` and `w` drops
/// `η_i Cᵀ` when `t` passes `t_i`. Propagating `z` costs one small
/// matrix-vector product per point, which keeps dense verification cheap,
/// and is an evaluation route independent of the kernel rows.
pub fn ydot_on_uniform_grid<F>(curve: &SplineCurve, intervals: usize, mut visit: F) -> Result<()>
where
    F: FnMut(usize, f64, f64, f64),
{
    if intervals == 0 {
        return Err(Error::Validation("uniform grid needs at least one interval".into()));
    }
    let sys = &curve.sys;
    let n = sys.order();
    let knots = curve.table.times();
    let eta = curve.eta();
    let horizon = sys.horizon();

    let mut gen = Matrix::zeros(2 * n, 2 * n);
    gen.view_mut((0, 0), (n, n)).copy_from(sys.a());
    gen.view_mut((0, n), (n, n)).copy_from(&(sys.b() * sys.b().transpose()));
    gen.view_mut((n, n), (n, n)).copy_from(&(-sys.a().transpose()));

    let ca: Vector = (sys.c() * sys.a()).row(0).transpose();
    let c: Vector = sys.c().row(0).transpose();
    let b: Vector = sys.b().column(0).into_owned();
    let cb = sys.cb();
    let read = |z: &Vector| -> (f64, f64) {
        let x = z.rows(0, n);
        let w = z.rows(n, n);
        (c.dot(&x), ca.dot(&x) + cb * b.dot(&w))
    };

    let mut z = Vector::zeros(2 * n);
    z.rows_mut(0, n).copy_from(&curve.x0());
    let w0 = curve.table.output_map().transpose() * &eta;
    z.rows_mut(n, n).copy_from(&w0);

    let step = horizon / intervals as f64;
    let step_exp = mat_exp(&(&gen * step))?;

    let mut seg_start = 0.0;
    let mut seg_state = z.clone();
    let mut next_knot = 0;
    let mut since_anchor = 0usize;
    let mut current: Option<Vector> = None;
    for k in 0..=intervals {
        let t = uniform_point(horizon, intervals, k);
        // advance the segment past every knot at or before t
        let mut moved = false;
        while next_knot < knots.len() && knots[next_knot] <= t {
            let tk = knots[next_knot];
            let mut at_knot = mat_exp(&(&gen * (tk - seg_start)))? * &seg_state;
            let mut w = at_knot.rows_mut(n, n);
            w -= eta[next_knot] * &c;
            seg_state = at_knot;
            seg_start = tk;
            next_knot += 1;
            moved = true;
        }
        let state = match current.take() {
            Some(prev) if !moved && since_anchor < PROPAGATION_ANCHOR => {
                since_anchor += 1;
                &step_exp * prev
            }
            _ => {
                since_anchor = 0;
                mat_exp(&(&gen * (t - seg_start)))? * &seg_state
            }
        };
        let (y, ydot) = read(&state);
        visit(k, t, y, ydot);
        current = Some(state);
    }
    Ok(())
}

/// Set of points where `ẏ ≥ margin` was imposed.
#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintGrid {
    Certified(GridPlan),
    SamplePoints(Vec<f64>),
}

impl ConstraintGrid {
    pub fn len(&self) -> usize {
        match self {
            ConstraintGrid::Certified(plan) => plan.grid().len(),
            ConstraintGrid::SamplePoints(times) => times.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn margin(&self) -> f64 {
        match self {
            ConstraintGrid::Certified(plan) => plan.epsilon(),
            ConstraintGrid::SamplePoints(_) => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    /// Smallest `ẏ` on the verification grid.
    pub min_ydot: f64,
    /// Earliest time attaining `min_ydot`.
    pub argmin_t: f64,
    /// Intervals of the verification grid.
    pub grid_resolution: usize,
    /// `min_ydot ≥ 0`.
    pub feasible_everywhere: bool,
    /// Smallest `ẏ` over the constraint grid.
    pub grid_min_ydot: f64,
    /// `ẏ ≥ margin` on the constraint grid, up to the solver tolerance.
    pub grid_margin_ok: bool,
}

/// Checks `ẏ` on a uniform grid `multiplier` times finer than the constraint
/// grid (at least [`MIN_VERIFY_INTERVALS`] intervals) and the margin on the
/// constraint grid itself.
///
/// The verification grid has `multiplier·M + 1` intervals so that its
/// interior points never coincide with the constraint grid.
pub fn verify(curve: &SplineCurve, grid: &ConstraintGrid, multiplier: usize, slack: f64) -> Result<VerificationReport> {
    if multiplier == 0 {
        return Err(Error::Validation("verification multiplier must be at least 1".into()));
    }
    let base = match grid {
        ConstraintGrid::Certified(plan) => plan.intervals(),
        ConstraintGrid::SamplePoints(times) => times.len(),
    };
    let intervals = multiplier
        .checked_mul(base)
        .and_then(|v| v.checked_add(1))
        .ok_or_else(|| Error::Validation("verification grid size overflows".into()))?
        .max(MIN_VERIFY_INTERVALS);

    let mut min_ydot = f64::INFINITY;
    let mut argmin_t = 0.0;
    ydot_on_uniform_grid(curve, intervals, |_, t, _, ydot| {
        if ydot < min_ydot {
            min_ydot = ydot;
            argmin_t = t;
        }
    })?;
    if !min_ydot.is_finite() {
        return Err(Error::NonFinite("ẏ on the verification grid".into()));
    }

    let mut grid_min = f64::INFINITY;
    match grid {
        ConstraintGrid::Certified(plan) => {
            ydot_on_uniform_grid(curve, plan.intervals(), |_, _, _, ydot| grid_min = grid_min.min(ydot))?;
        }
        ConstraintGrid::SamplePoints(times) => {
            for &t in times {
                grid_min = grid_min.min(curve.evaluate_ydot(t)?);
            }
        }
    }

    Ok(VerificationReport {
        min_ydot,
        argmin_t,
        grid_resolution: intervals,
        feasible_everywhere: min_ydot >= 0.0,
        grid_min_ydot: grid_min,
        grid_margin_ok: grid_min >= grid.margin() - slack,
    })
}

/// Maximal runs of the uniform grid with `ẏ < 0`, as `(first, last)` grid
/// times of each run.
pub fn violation_intervals(curve: &SplineCurve, intervals: usize) -> Result<Vec<(f64, f64)>> {
    let mut runs = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    ydot_on_uniform_grid(curve, intervals, |_, t, _, ydot| {
        if ydot < 0.0 {
            open = Some(open.map_or((t, t), |(start, _)| (start, t)));
        } else if let Some(run) = open.take() {
            runs.push(run);
        }
    })?;
    runs.extend(open);
    Ok(runs)
}

/// A fitting problem assembled but not yet solved.
///
/// `base` carries the cost and equality rows. The monotonicity rows are
/// described by `grid` and materialized by [`PreparedFit::full_qp`] or, on
/// large grids, only for the working set of the screened solve.
#[derive(Debug, Clone)]
pub struct PreparedFit {
    pub sys: StateSpace,
    pub table: KernelTable,
    pub base: QpProblem,
    pub grid: ConstraintGrid,
    pub lipschitz: Option<LipschitzEstimate>,
    /// `‖θ_unc‖_∞` when `r` was chosen automatically.
    pub unconstrained_norm: Option<f64>,
}

impl PreparedFit {
    /// The QP with every monotonicity row: `-Φ(T_k)ᵀθ ≤ -ε` on the grid and
    /// the box in proposed mode, `-Φ(t)ᵀθ ≤ 0` at the sample points in
    /// conventional mode.
    pub fn full_qp(&self) -> Result<QpProblem> {
        let mut qp = self.base.clone();
        let (rows, rhs) = match &self.grid {
            ConstraintGrid::Certified(plan) => assemble_constraints(&self.table, &self.sys, plan)?,
            ConstraintGrid::SamplePoints(points) => derivative_rows_at(&self.table, &self.sys, points, 0.0)?,
        };
        qp.a_ineq = rows;
        qp.b_ineq = rhs;
        qp.validate()?;
        Ok(qp)
    }

    /// `‖b‖_∞` of the full inequality block.
    fn rhs_scale(&self) -> f64 {
        match &self.grid {
            ConstraintGrid::Certified(plan) => plan.epsilon().max(plan.r()),
            ConstraintGrid::SamplePoints(_) => 0.0,
        }
    }
}

/// Builds the kernel table, cost, equality rows and the constraint grid for
/// `opts.mode`.
pub fn prepare(sys: &StateSpace, data: &DataSet, opts: &FitOptions) -> Result<PreparedFit> {
    if sys.horizon() != data.horizon() {
        return Err(Error::Validation(format!(
            "system horizon {} differs from the last sample time {}",
            sys.horizon(),
            data.horizon()
        )));
    }
    let table = build_kernel_table(sys, data.times())?;
    let mut base = QpProblem::unconstrained(assemble_cost(&table, data)?)?;
    for eq in &opts.equalities {
        base = add_equality(base, &table, sys, eq.kind, eq.t, eq.target)?;
    }

    let (grid, lipschitz, unconstrained_norm) = match opts.mode {
        Mode::Conventional => {
            let mut points = Vec::with_capacity(data.len() + 1);
            points.push(0.0);
            points.extend_from_slice(data.times());
            (ConstraintGrid::SamplePoints(points), None, None)
        }
        Mode::Proposed => {
            let epsilon = opts.epsilon.unwrap_or_else(|| default_epsilon(data));
            let (r, unconstrained_norm) = match opts.r {
                BoxBound::Fixed(r) => (r, None),
                BoxBound::Auto => {
                    let unc = solve(&base, &opts.solver)?;
                    if unc.status != SolveStatus::Optimal {
                        return Err(Error::Infeasible(format!(
                            "problem without inequalities ended with status {:?}",
                            unc.status
                        )));
                    }
                    let norm = unc.theta.amax();
                    let r = if norm > 0.0 { AUTO_BOX_FACTOR * norm } else { 1.0 };
                    info!("auto box bound r = {r:.6e} from ‖θ_unc‖∞ = {norm:.6e}");
                    (r, Some(norm))
                }
            };
            let lipschitz = estimate_lipschitz(sys, &table, opts.probe_points)?;
            let plan = plan_grid_capped(sys.horizon(), epsilon, r, lipschitz.mu, opts.grid_cap)?;
            info!(
                "grid: M = {}, epsilon = {epsilon:.3e}, r = {r:.3e}, mu = {:.6e}",
                plan.intervals(),
                lipschitz.mu
            );
            (ConstraintGrid::Certified(plan), Some(lipschitz), unconstrained_norm)
        }
    };
    Ok(PreparedFit {
        sys: sys.clone(),
        table,
        base,
        grid,
        lipschitz,
        unconstrained_norm,
    })
}

#[derive(Debug, Clone)]
pub struct SplineSolution {
    pub curve: SplineCurve,
    pub mode: Mode,
    pub grid: ConstraintGrid,
    pub lipschitz: Option<LipschitzEstimate>,
    pub unconstrained_norm: Option<f64>,
    /// `½θᵀPθ + qᵀθ`.
    pub objective_f: f64,
    /// `λ∫u² + Σ w_i (y(t_i) - α_i)²`, from `G` and `F` directly.
    pub objective_j: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub kkt_residuals: KktResiduals,
    /// Monotonicity rows passed to the solver in the last screening round.
    pub working_rows: usize,
    /// Solves performed while screening; 1 for a direct solve.
    pub screening_rounds: usize,
    pub verification: VerificationReport,
}

impl SplineSolution {
    pub fn theta(&self) -> &Vector {
        self.curve.theta()
    }

    pub fn sample_curve(&self, points: usize) -> Result<Vec<CurveSample>> {
        self.curve.sample(points)
    }
}

/// Grids with at most this many points are solved with every row present.
pub const DIRECT_SOLVE_MAX_ROWS: usize = 20_000;
/// Size of the initial working set, and of the rows added per round.
const SCREEN_BATCH: usize = 4_096;
const MAX_SCREEN_ROUNDS: usize = 50;

struct RawSolve {
    theta: Vector,
    objective: f64,
    status: SolveStatus,
    iterations: usize,
    kkt: KktResiduals,
    working_rows: usize,
    rounds: usize,
}

fn direct_solve(prep: &PreparedFit, opts: &SolverOptions) -> Result<RawSolve> {
    let qp = prep.full_qp()?;
    let sol = solve(&qp, opts)?;
    Ok(RawSolve {
        theta: sol.theta,
        objective: sol.objective,
        status: sol.status,
        iterations: sol.iterations,
        kkt: sol.kkt_residuals,
        working_rows: qp.b_ineq.len(),
        rounds: 1,
    })
}

/// Rows `-Φ(T_k)ᵀ` for the listed grid indices plus the box.
fn working_qp(prep: &PreparedFit, plan: &GridPlan, indices: &[usize]) -> Result<QpProblem> {
    let dim = prep.table.parameter_dim();
    let mut rows = crate::linalg::DenseRows::with_capacity(dim, indices.len() + 2 * dim);
    for &k in indices {
        let t = uniform_point(plan.horizon(), plan.intervals(), k);
        let row = -TimeSlice::at(&prep.sys, t)?.derivative_row(&prep.sys, &prep.table);
        rows.push_row(row.as_slice())?;
    }
    let mut rhs = vec![-plan.epsilon(); indices.len()];
    crate::problem::append_box(&mut rows, &mut rhs, plan.r())?;
    let mut qp = prep.base.clone();
    qp.a_ineq = rows;
    qp.b_ineq = Vector::from_vec(rhs);
    Ok(qp)
}

/// Keeps at most `limit` of `candidates`: discrete local minima of `ydot`
/// first, then an even subsample of the rest.
fn pick_rows(candidates: &[usize], ydot: &[f64], limit: usize) -> Vec<usize> {
    if candidates.len() <= limit {
        return candidates.to_vec();
    }
    let is_min = |k: usize| {
        let left = k == 0 || ydot[k - 1] >= ydot[k];
        let right = k + 1 == ydot.len() || ydot[k + 1] >= ydot[k];
        left && right
    };
    let mut picked: Vec<usize> = candidates.iter().copied().filter(|&k| is_min(k)).collect();
    picked.truncate(limit / 2);
    let stride = candidates.len().div_ceil(limit - picked.len());
    picked.extend(candidates.iter().copied().step_by(stride.max(1)));
    picked.sort_unstable();
    picked.dedup();
    picked
}

/// Solves the proposed-mode QP on a working set of grid rows, adding every
/// grid row the current solution violates until none is left.
///
/// The rows left out are satisfied by the final point and carry zero
/// multipliers, so the result is a KKT point of the full problem.
fn screened_solve(prep: &PreparedFit, plan: &GridPlan, opts: &SolverOptions) -> Result<RawSolve> {
    let points = plan.intervals() + 1;
    let stride = points.div_ceil(SCREEN_BATCH).max(1);
    let mut working: Vec<usize> = (0..points).step_by(stride).collect();
    if working.last() != Some(&(points - 1)) {
        working.push(points - 1);
    }
    let allowed = opts.tol * (1.0 + prep.rhs_scale());
    let mut ydot = vec![0.0; points];
    let mut iterations = 0;
    for round in 1..=MAX_SCREEN_ROUNDS {
        let qp = working_qp(prep, plan, &working)?;
        let sol = solve(&qp, opts)?;
        iterations += sol.iterations;
        if sol.status != SolveStatus::Optimal {
            // infeasibility of a relaxation carries over to the full problem
            return Ok(RawSolve {
                theta: sol.theta,
                objective: sol.objective,
                status: sol.status,
                iterations,
                kkt: sol.kkt_residuals,
                working_rows: working.len(),
                rounds: round,
            });
        }
        let curve = SplineCurve::new(prep.sys.clone(), prep.table.clone(), sol.theta.clone())?;
        ydot_on_uniform_grid(&curve, plan.intervals(), |k, _, _, v| ydot[k] = v)?;
        let violation = ydot.iter().map(|v| plan.epsilon() - v).fold(0.0, f64::max);
        debug!(
            "screening round {round}: {} rows, {} iterations, violation {violation:.3e}",
            working.len(),
            sol.iterations
        );
        if violation <= allowed {
            let mut kkt = sol.kkt_residuals;
            kkt.primal = kkt.primal.max(violation / (1.0 + prep.rhs_scale()));
            return Ok(RawSolve {
                theta: sol.theta,
                objective: sol.objective,
                status: SolveStatus::Optimal,
                iterations,
                kkt,
                working_rows: working.len(),
                rounds: round,
            });
        }
        let candidates: Vec<usize> = (0..points)
            .filter(|&k| plan.epsilon() - ydot[k] > allowed && working.binary_search(&k).is_err())
            .collect();
        working.extend(pick_rows(&candidates, &ydot, SCREEN_BATCH));
        working.sort_unstable();
        working.dedup();
    }
    Err(Error::Validation(format!(
        "constraint screening did not settle within {MAX_SCREEN_ROUNDS} rounds"
    )))
}

/// Solves a prepared problem and verifies the result.
///
/// An infeasible or unbounded QP is an error; hitting the iteration cap
/// returns the best iterate with status `MaxIter`.
pub fn solve_prepared(prep: PreparedFit, data: &DataSet, opts: &FitOptions) -> Result<SplineSolution> {
    let raw = match &prep.grid {
        ConstraintGrid::Certified(plan) if opts.screening && plan.grid().len() > DIRECT_SOLVE_MAX_ROWS => {
            screened_solve(&prep, plan, &opts.solver)?
        }
        _ => direct_solve(&prep, &opts.solver)?,
    };
    match raw.status {
        SolveStatus::Infeasible => {
            return Err(Error::Infeasible(match prep.grid {
                ConstraintGrid::Certified(_) => {
                    "no θ meets the margin on the grid within the box; try a smaller epsilon or a larger r".into()
                }
                ConstraintGrid::SamplePoints(_) => "the constraints at the sample points are inconsistent".into(),
            }))
        }
        SolveStatus::Unbounded => return Err(Error::Unbounded),
        SolveStatus::MaxIter => warn!(
            "solver stopped after {} iterations with KKT residual {:.3e}",
            raw.iterations,
            raw.kkt.max()
        ),
        SolveStatus::Optimal => {}
    }
    let slack = 10.0 * opts.solver.tol * (1.0 + prep.rhs_scale());
    let curve = SplineCurve::new(prep.sys, prep.table, raw.theta)?;
    let verification = verify(&curve, &prep.grid, opts.verify_multiplier, slack)?;
    if !verification.feasible_everywhere {
        warn!(
            "ẏ = {:.6e} < 0 at t = {:.6}",
            verification.min_ydot, verification.argmin_t
        );
    }
    let objective_j = curve.cost(data)?;
    Ok(SplineSolution {
        curve,
        mode: opts.mode,
        grid: prep.grid,
        lipschitz: prep.lipschitz,
        unconstrained_norm: prep.unconstrained_norm,
        objective_f: raw.objective,
        objective_j,
        status: raw.status,
        iterations: raw.iterations,
        kkt_residuals: raw.kkt,
        working_rows: raw.working_rows,
        screening_rounds: raw.rounds,
        verification,
    })
}

/// Fits a monotone smoothing spline in `opts.mode`.
pub fn fit(sys: &StateSpace, data: &DataSet, opts: &FitOptions) -> Result<SplineSolution> {
    let prep = prepare(sys, data, opts)?;
    solve_prepared(prep, data, opts)
}

/// Fits with `ẏ ≥ 0` imposed only at `t = 0` and the sample times.
pub fn solve_conventional(sys: &StateSpace, data: &DataSet, opts: &FitOptions) -> Result<SplineSolution> {
    let opts = FitOptions {
        mode: Mode::Conventional,
        ..opts.clone()
    };
    fit(sys, data, &opts)
}
