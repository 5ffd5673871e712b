//! Output file layouts.

use std::path::Path;

use monospline::kernel::StateSpace;
use monospline::problem::{DataSet, EqualityConstraint, QpProblem};
use monospline::qpsolve::{KktResiduals, QpSolution, SolveStatus};
use monospline::spline::{BoxBound, ConstraintGrid, CurveSample, FitOptions, Mode, SplineSolution, VerificationReport};
use serde::Serialize;

use crate::{input_error, Failure};

pub const SUMMARY_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct VerificationJson {
    #[serde(flatten)]
    report: VerificationReport,
    /// `(first, last)` verification-grid times of each run with `ẏ < 0`.
    violation_intervals: Vec<[f64; 2]>,
}

pub fn verification(report: &VerificationReport, violations: &[(f64, f64)]) -> VerificationJson {
    VerificationJson {
        report: *report,
        violation_intervals: violations.iter().map(|&(a, b)| [a, b]).collect(),
    }
}

#[derive(Debug, Serialize)]
struct SystemJson {
    order: usize,
    horizon: f64,
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl From<&StateSpace> for SystemJson {
    fn from(sys: &StateSpace) -> Self {
        SystemJson {
            order: sys.order(),
            horizon: sys.horizon(),
            a: sys.a().row_iter().map(|r| r.iter().copied().collect()).collect(),
            b: sys.b().iter().copied().collect(),
            c: sys.c().iter().copied().collect(),
        }
    }
}

#[derive(Debug, Serialize)]
struct DataJson {
    points: usize,
    horizon: f64,
    lambda: f64,
}

#[derive(Debug, Serialize)]
struct GridJson {
    /// `certified` or `sample_points`.
    kind: &'static str,
    points: usize,
    margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    intervals: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_spacing: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    spacing_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    certificate_holds: Option<bool>,
}

impl From<&ConstraintGrid> for GridJson {
    fn from(grid: &ConstraintGrid) -> Self {
        match grid {
            ConstraintGrid::Certified(plan) => GridJson {
                kind: "certified",
                points: plan.grid().len(),
                margin: plan.epsilon(),
                intervals: Some(plan.intervals()),
                max_spacing: Some(plan.max_spacing()),
                spacing_bound: Some(plan.spacing_bound()),
                certificate_holds: Some(plan.certificate_holds()),
            },
            ConstraintGrid::SamplePoints(points) => GridJson {
                kind: "sample_points",
                points: points.len(),
                margin: 0.0,
                intervals: None,
                max_spacing: None,
                spacing_bound: None,
                certificate_holds: None,
            },
        }
    }
}

/// Everything about a fit except timing, so that repeated runs produce the
/// same bytes.
#[derive(Debug, Serialize)]
pub struct Summary {
    schema: u32,
    mode: Mode,
    system: SystemJson,
    data: DataJson,
    equalities: Vec<EqualityConstraint>,
    epsilon: Option<f64>,
    r: Option<f64>,
    /// `"auto"` or `"fixed"`.
    r_source: Option<&'static str>,
    unconstrained_norm: Option<f64>,
    mu: Option<f64>,
    grid: GridJson,
    status: SolveStatus,
    iterations: usize,
    kkt_residuals: KktResiduals,
    working_rows: usize,
    screening_rounds: usize,
    objective_f: f64,
    objective_j: f64,
    min_ydot: f64,
    verification: VerificationJson,
    theta: Vec<f64>,
}

pub fn summary(sol: &SplineSolution, data: &DataSet, opts: &FitOptions, verification: VerificationJson) -> Summary {
    let (epsilon, r, r_source) = match &sol.grid {
        ConstraintGrid::Certified(plan) => {
            let source = match opts.r {
                BoxBound::Auto => "auto",
                BoxBound::Fixed(_) => "fixed",
            };
            (Some(plan.epsilon()), Some(plan.r()), Some(source))
        }
        ConstraintGrid::SamplePoints(_) => (None, None, None),
    };
    Summary {
        schema: SUMMARY_SCHEMA,
        mode: sol.mode,
        system: sol.curve.system().into(),
        data: DataJson {
            points: data.len(),
            horizon: data.horizon(),
            lambda: data.smoothing(),
        },
        equalities: opts.equalities.clone(),
        epsilon,
        r,
        r_source,
        unconstrained_norm: sol.unconstrained_norm,
        mu: sol.lipschitz.map(|l| l.mu),
        grid: (&sol.grid).into(),
        status: sol.status,
        iterations: sol.iterations,
        kkt_residuals: sol.kkt_residuals,
        working_rows: sol.working_rows,
        screening_rounds: sol.screening_rounds,
        objective_f: sol.objective_f,
        objective_j: sol.objective_j,
        min_ydot: sol.verification.min_ydot,
        verification,
        theta: sol.theta().iter().copied().collect(),
    }
}

#[derive(Debug, Serialize)]
pub struct QpSolutionJson {
    status: SolveStatus,
    /// `½xᵀPx + qᵀx`, without the constant.
    objective: f64,
    constant: f64,
    iterations: usize,
    kkt_residuals: KktResiduals,
    x: Vec<f64>,
    ineq_multipliers: Vec<f64>,
    eq_multipliers: Vec<f64>,
}

pub fn qp_solution(qp: &QpProblem, sol: &QpSolution) -> QpSolutionJson {
    QpSolutionJson {
        status: sol.status,
        objective: sol.objective,
        constant: qp.constant,
        iterations: sol.iterations,
        kkt_residuals: sol.kkt_residuals,
        x: sol.theta.iter().copied().collect(),
        ineq_multipliers: sol.ineq_multipliers.iter().copied().collect(),
        eq_multipliers: sol.eq_multipliers.iter().copied().collect(),
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| input_error(format!("cannot serialize output: {e}")))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| input_error(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = to_json(value)?;
    text.push('\n');
    write_text(path, &text)
}

/// CSV with header `t,y,ydot,u`.
pub fn write_curve(path: &Path, samples: &[CurveSample]) -> Result<(), Failure> {
    let fail = |e: csv::Error| input_error(format!("cannot write {}: {e}", path.display()));
    let mut writer = csv::Writer::from_path(path).map_err(fail)?;
    for s in samples {
        writer.serialize(s).map_err(fail)?;
    }
    writer
        .flush()
        .map_err(|e| input_error(format!("cannot write {}: {e}", path.display())))
}
