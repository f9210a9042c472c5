//! Python bindings for the `diging-pep` core crate.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use diging_pep::function_class::ClassParams;
use diging_pep::generator;
use diging_pep::graph::{self, TopologyKind};
use diging_pep::pep::ScheduleParams;
use diging_pep::sdp::{certify, solve, SolverSettings, EIG_TOL, FEAS_TOL};
use diging_pep::sim::{self, ProblemKind};
use diging_pep::sweep::{self, AlphaGrid, PepSweep, Scenario};
use diging_pep::Error;

create_exception!(diging_pep_py, BoundViolatedError, PyException);
create_exception!(diging_pep_py, SolverError, PyRuntimeError);

fn py_err(e: Error) -> PyErr {
    match e {
        Error::BoundViolated { .. } => BoundViolatedError::new_err(e.to_string()),
        Error::Solver(_) | Error::CertificationFailed { .. } => SolverError::new_err(e.to_string()),
        Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for diging_pep::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Doubly stochastic mixing matrix of a communication graph.
#[pyclass(name = "MixingMatrix", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyMixingMatrix {
    inner: graph::MixingMatrix,
}

#[pymethods]
impl PyMixingMatrix {
    /// Metropolis-Hastings weights of a generated topology.
    #[staticmethod]
    #[pyo3(signature = (topology, n, p = 0.5, seed = 0))]
    fn metropolis(topology: &str, n: usize, p: f64, seed: u64) -> PyResult<Self> {
        let kind: TopologyKind = topology.parse().py()?;
        let g = graph::build_graph(kind, n, p, seed).py()?;
        Ok(PyMixingMatrix {
            inner: graph::metropolis_weights(&g).py()?,
        })
    }

    #[staticmethod]
    fn from_rows(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(PyMixingMatrix {
            inner: graph::MixingMatrix::from_rows(&rows).py()?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn rows(&self) -> Vec<Vec<f64>> {
        self.inner.rows()
    }

    fn second_singular_value(&self) -> f64 {
        self.inner.second_singular_value()
    }

    fn __repr__(&self) -> String {
        format!("MixingMatrix(n={})", self.inner.n())
    }
}

/// Concrete distributed problem: one local objective per agent.
#[pyclass(name = "ProblemInstance", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyProblemInstance {
    inner: sim::ProblemInstance,
}

#[pymethods]
impl PyProblemInstance {
    /// Two scalar quadratics, `0.5 (x + 1)^2` and `0.1 (x - 1)^2`.
    #[staticmethod]
    fn motivating() -> Self {
        PyProblemInstance {
            inner: generator::motivating_example(),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (n, m, d, seed, mu = 0.1, l = 1.0))]
    fn regression(n: usize, m: usize, d: usize, seed: u64, mu: f64, l: f64) -> PyResult<Self> {
        let c = ClassParams::new(mu, l).py()?;
        Ok(PyProblemInstance {
            inner: generator::gen_regression(n, m, d, c, seed).py()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (n, d, seed, mu = 0.1, l = 1.0, r0 = 1.0, rstar = 1.0))]
    fn quadratic(n: usize, d: usize, seed: u64, mu: f64, l: f64, r0: f64, rstar: f64) -> PyResult<Self> {
        let c = ClassParams::new(mu, l).py()?;
        Ok(PyProblemInstance {
            inner: generator::gen_quadratic(n, d, c, r0, rstar, seed).py()?,
        })
    }

    #[staticmethod]
    fn read_bundle(dir: std::path::PathBuf) -> PyResult<Self> {
        Ok(PyProblemInstance {
            inner: generator::read_bundle(&dir).py()?,
        })
    }

    fn write_bundle(&self, dir: std::path::PathBuf) -> PyResult<()> {
        generator::write_bundle(&self.inner, &dir).py().map(|_| ())
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.inner.n_agents()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.inner.kind {
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::LeastSquares => "least_squares",
        }
    }

    /// `(lambda_min, lambda_max)` of each local Hessian.
    fn spectra(&self) -> PyResult<Vec<(f64, f64)>> {
        self.inner.spectra().py()
    }

    fn global_optimum(&self) -> PyResult<Vec<f64>> {
        sim::global_optimum(&self.inner).py()
    }

    fn local_optima(&self) -> PyResult<Vec<Vec<f64>>> {
        self.inner.local_optima().py()
    }

    fn __repr__(&self) -> String {
        format!(
            "ProblemInstance(kind={}, n_agents={}, dim={})",
            self.kind(),
            self.inner.n_agents(),
            self.inner.dim
        )
    }
}

/// Solved and certified worst-case program.
#[pyclass(name = "Certificate", frozen, skip_from_py_object, get_all)]
#[derive(Clone)]
pub struct PyCertificate {
    pub value: f64,
    pub status: String,
    pub iterations: usize,
    pub max_violation: f64,
    pub gram_dim: usize,
}

#[pymethods]
impl PyCertificate {
    fn __repr__(&self) -> String {
        format!("Certificate(value={}, status={})", self.value, self.status)
    }
}

fn schedule(
    w: &graph::MixingMatrix,
    tau: usize,
    rounds: usize,
    alpha: f64,
    mu: f64,
    l: f64,
    r0: f64,
    rstar: f64,
) -> diging_pep::Result<ScheduleParams> {
    let c = ClassParams::new(mu, l)?;
    ScheduleParams::with_radii(w.n(), tau, rounds, alpha, c, r0, rstar)
}

fn certificate(w: &graph::MixingMatrix, p: &ScheduleParams, full: bool) -> diging_pep::Result<PyCertificate> {
    let prog = sweep::pep_program(w, p, !full)?;
    let sol = solve(&prog, &SolverSettings::default())?;
    if !sol.status.is_solved() {
        return Err(Error::Solver(format!("{}: {}", sol.status, sol.diagnostics)));
    }
    let report = certify(&sol, &prog, FEAS_TOL, EIG_TOL)?;
    Ok(PyCertificate {
        value: sol.value,
        status: sol.status.to_string(),
        iterations: sol.iterations,
        max_violation: report.max_violation,
        gram_dim: prog.dim,
    })
}

/// Worst-case mean squared distance to the minimiser after `tau * rounds`
/// iterations.
#[pyfunction]
#[pyo3(signature = (w, tau, rounds, alpha, mu = 0.1, l = 1.0, r0 = 1.0, rstar = 1.0, full = false))]
#[allow(clippy::too_many_arguments)]
fn worst_case(
    py: Python<'_>,
    w: &PyMixingMatrix,
    tau: usize,
    rounds: usize,
    alpha: f64,
    mu: f64,
    l: f64,
    r0: f64,
    rstar: f64,
    full: bool,
) -> PyResult<PyCertificate> {
    let p = schedule(&w.inner, tau, rounds, alpha, mu, l, r0, rstar).py()?;
    py.detach(|| certificate(&w.inner, &p, full)).py()
}

/// Certified step-size grid search; returns `(alphas, values, alpha_star,
/// value_star)` with failed points as `inf`.
#[pyfunction]
#[pyo3(signature = (w, tau, rounds, alpha_lo = 0.01, alpha_hi = 0.8, resolution = 0.01, mu = 0.1, l = 1.0, r0 = 1.0, rstar = 1.0))]
#[allow(clippy::too_many_arguments)]
fn sweep_alpha(
    py: Python<'_>,
    w: &PyMixingMatrix,
    tau: usize,
    rounds: usize,
    alpha_lo: f64,
    alpha_hi: f64,
    resolution: f64,
    mu: f64,
    l: f64,
    r0: f64,
    rstar: f64,
) -> PyResult<(Vec<f64>, Vec<f64>, f64, f64)> {
    let grid = AlphaGrid::new(alpha_lo, alpha_hi, resolution).py()?;
    let c = ClassParams::new(mu, l).py()?;
    let mut spec = PepSweep::new(w.inner.clone(), c, grid);
    spec.r0 = r0;
    spec.rstar = rstar;
    let r = py.detach(|| spec.search(tau, rounds)).py()?;
    Ok((r.alphas, r.values, r.alpha_star, r.value_star))
}

/// Error `(1/N) sum_i |x_i - x*|^2` after each communication round, starting
/// from all agents at the origin.
#[pyfunction]
fn simulate(
    inst: &PyProblemInstance,
    w: &PyMixingMatrix,
    tau: usize,
    rounds: usize,
    alpha: f64,
) -> PyResult<Vec<(usize, f64)>> {
    let p = ScheduleParams::new(inst.inner.n_agents(), tau, rounds, alpha, inst.inner.class).py()?;
    let traj = sim::run_diging(&inst.inner, &w.inner, &p, None).py()?;
    let xs = sim::global_optimum(&inst.inner).py()?;
    Ok(sim::error_curve(&traj, &xs))
}

/// Simulates `trials` random feasible instances and checks them against
/// `certificate`. Returns `(max_ratio, tightest, max_error)`; raises
/// `BoundViolatedError` if any instance exceeds the bound.
#[pyfunction]
#[pyo3(signature = (certificate, w, tau, rounds, alpha, trials = 100, seed = 0, dim = 8, mu = 0.1, l = 1.0, r0 = 1.0, rstar = 1.0))]
#[allow(clippy::too_many_arguments)]
fn verify_bound(
    py: Python<'_>,
    certificate: f64,
    w: &PyMixingMatrix,
    tau: usize,
    rounds: usize,
    alpha: f64,
    trials: usize,
    seed: u64,
    dim: usize,
    mu: f64,
    l: f64,
    r0: f64,
    rstar: f64,
) -> PyResult<(f64, Option<usize>, f64)> {
    let p = schedule(&w.inner, tau, rounds, alpha, mu, l, r0, rstar).py()?;
    let report = py
        .detach(|| {
            let scenarios = (0..trials)
                .map(|t| sweep::sampled_scenario(&p, dim, seed, t))
                .collect::<diging_pep::Result<Vec<Scenario>>>()?;
            sweep::verify_upper_bound(certificate, &scenarios, &w.inner, &p)
        })
        .py()?;
    Ok((report.max_ratio, report.tightest, report.max_error))
}

#[pymodule]
fn diging_pep_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMixingMatrix>()?;
    m.add_class::<PyProblemInstance>()?;
    m.add_class::<PyCertificate>()?;
    m.add_function(wrap_pyfunction!(worst_case, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(verify_bound, m)?)?;
    m.add("BoundViolatedError", m.py().get_type::<BoundViolatedError>())?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    Ok(())
}
