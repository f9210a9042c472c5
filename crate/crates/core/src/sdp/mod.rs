//! Gram-lifted semidefinite programs: representation, solving and
//! independent certification of solutions.

mod ipm;
pub mod program;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use program::{Evaluation, GramProgram, Objective};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    NearOptimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl SolveStatus {
    /// Whether the solution carries a usable objective value.
    pub fn is_solved(self) -> bool {
        matches!(self, SolveStatus::Optimal | SolveStatus::NearOptimal)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::NearOptimal => "near_optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SolveStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "optimal" => SolveStatus::Optimal,
            "near_optimal" => SolveStatus::NearOptimal,
            "infeasible" => SolveStatus::Infeasible,
            "unbounded" => SolveStatus::Unbounded,
            "numerical_failure" => SolveStatus::NumericalFailure,
            _ => return Err(Error::InvalidInput(format!("unknown status `{s}`"))),
        })
    }
}

/// Stopping rules of the interior-point backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative duality gap for `optimal`.
    pub rel_gap: f64,
    /// Relative primal and dual infeasibility for `optimal`.
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            rel_gap: 1e-8,
            feas_tol: 1e-8,
            max_iter: 100,
        }
    }
}

/// Relative residuals reported by the solver on its scaled problem.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverResiduals {
    pub primal: f64,
    pub dual: f64,
    pub rel_gap: f64,
}

#[derive(Clone, Debug)]
pub struct SdpSolution {
    /// Primal objective (maximised). NaN unless the status is solved.
    pub value: f64,
    /// Dual objective, an upper bound on `value` up to solver tolerance.
    pub dual_value: f64,
    pub gram: Mat<f64>,
    pub f_values: Vec<f64>,
    /// Lagrange multipliers in the original constraint order; nonnegative
    /// for inequalities.
    pub multipliers: Vec<f64>,
    pub status: SolveStatus,
    pub residuals: SolverResiduals,
    pub iterations: usize,
    pub diagnostics: String,
}

impl SdpSolution {
    pub(crate) fn failed(prog: &GramProgram, status: SolveStatus, msg: String) -> Self {
        SdpSolution {
            value: f64::NAN,
            dual_value: f64::NAN,
            gram: Mat::zeros(prog.dim, prog.dim),
            f_values: vec![0.0; prog.n_fvars],
            multipliers: vec![0.0; prog.constraints.len()],
            status,
            residuals: SolverResiduals::default(),
            iterations: 0,
            diagnostics: msg,
        }
    }
}

/// A conic backend able to solve [`GramProgram`]s.
pub trait SdpBackend: Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, prog: &GramProgram) -> SdpSolution;
}

/// Built-in primal-dual interior-point method.
#[derive(Clone, Debug, Default)]
pub struct InteriorPoint {
    pub settings: SolverSettings,
}

impl SdpBackend for InteriorPoint {
    fn name(&self) -> &'static str {
        "interior_point"
    }

    fn solve(&self, prog: &GramProgram) -> SdpSolution {
        let mut sol = ipm::solve(prog, &self.settings);
        if !sol.status.is_solved() {
            sol.value = f64::NAN;
            sol.dual_value = f64::NAN;
        }
        sol
    }
}

/// Solves `prog` with the default backend.
///
/// Invalid programs are rejected with an error; solver trouble is reported
/// through [`SdpSolution::status`] and [`SdpSolution::diagnostics`].
pub fn solve(prog: &GramProgram, settings: &SolverSettings) -> Result<SdpSolution> {
    solve_with(&InteriorPoint { settings: settings.clone() }, prog)
}

pub fn solve_with(backend: &dyn SdpBackend, prog: &GramProgram) -> Result<SdpSolution> {
    prog.validate()?;
    Ok(backend.solve(prog))
}

/// Default certification tolerances.
pub const FEAS_TOL: f64 = 1e-7;
pub const EIG_TOL: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    /// Objective recomputed from the Gram matrix.
    pub objective: f64,
    pub max_violation: f64,
    pub worst_constraint: Option<String>,
    pub min_eigenvalue: f64,
    /// `min_eigenvalue` relative to `max(1, ||G||_2)`.
    pub rel_min_eigenvalue: f64,
}

/// Re-evaluates every constraint and the spectrum of the Gram matrix
/// without consulting the solver's own residuals.
///
/// Residuals are scaled by `1 + sum |terms|` per constraint, the eigenvalue
/// by `max(1, ||G||_2)`.
pub fn certify(sol: &SdpSolution, prog: &GramProgram, feas_tol: f64, eig_tol: f64) -> Result<CertificationReport> {
    if !sol.status.is_solved() {
        return Err(Error::InvalidInput(format!("cannot certify a solution with status {}", sol.status)));
    }
    certify_point(&sol.gram, &sol.f_values, prog, feas_tol, eig_tol)
}

/// Certifies an arbitrary candidate point `(gram, f)`.
pub fn certify_point(
    gram: &Mat<f64>,
    f: &[f64],
    prog: &GramProgram,
    feas_tol: f64,
    eig_tol: f64,
) -> Result<CertificationReport> {
    if gram.nrows() != prog.dim || gram.ncols() != prog.dim || f.len() != prog.n_fvars {
        return Err(Error::InvalidInput("solution shape does not match program".into()));
    }
    let eval = prog.evaluate(gram, f);
    let (max_violation, worst) = eval.max_violation();
    let eigs = gram
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Solver(format!("eigenvalue computation failed: {e:?}")))?;
    let min_eig = eigs.first().copied().unwrap_or(0.0);
    let top = eigs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rel_min = min_eig / top.max(1.0);
    if max_violation > feas_tol {
        let idx = worst.expect("violation implies an index");
        return Err(Error::CertificationFailed {
            constraint: prog.labels[idx].clone(),
            violation: max_violation,
        });
    }
    if rel_min < -eig_tol {
        return Err(Error::CertificationFailed {
            constraint: "gram_psd".into(),
            violation: -rel_min,
        });
    }
    Ok(CertificationReport {
        objective: eval.objective,
        max_violation,
        worst_constraint: worst.map(|i| prog.labels[i].clone()),
        min_eigenvalue: min_eig,
        rel_min_eigenvalue: rel_min,
    })
}

/// JSON summary of one solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub params: serde_json::Value,
    pub value: Option<f64>,
    pub status: SolveStatus,
    pub residuals: SolverResiduals,
    pub wall_time: f64,
}

impl SolutionRecord {
    pub fn new(params: serde_json::Value, sol: &SdpSolution, wall_time: f64) -> Self {
        SolutionRecord {
            params,
            value: sol.value.is_finite().then_some(sol.value),
            status: sol.status,
            residuals: sol.residuals,
            wall_time,
        }
    }
}

/// Solves and times a program in one call.
pub fn solve_timed(prog: &GramProgram, settings: &SolverSettings) -> Result<(SdpSolution, f64)> {
    let start = Instant::now();
    let sol = solve(prog, settings)?;
    Ok((sol, start.elapsed().as_secs_f64()))
}
