//! Concrete problem instances and an exact simulator for DIGing with local
//! updates.

use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::function_class::{ClassParams, PointTag};
use crate::graph::MixingMatrix;
use crate::pep::{PepProgram, ScheduleParams, Symbol};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Quadratic,
    LeastSquares,
}

/// One agent's objective.
#[derive(Clone, Debug)]
pub enum LocalObjective {
    /// `f(x) = 1/2 (x - b)^T A (x - b)`.
    Quadratic { a: Mat<f64>, b: Vec<f64> },
    /// `f(w) = |X w - y|^2`.
    LeastSquares { x: Mat<f64>, y: Vec<f64> },
}

fn mat_vec(m: &Mat<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)] * v[c]).sum())
        .collect()
}

fn mat_t_vec(m: &Mat<f64>, v: &[f64]) -> Vec<f64> {
    (0..m.ncols())
        .map(|c| (0..m.nrows()).map(|r| m[(r, c)] * v[r]).sum())
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl LocalObjective {
    pub fn dim(&self) -> usize {
        match self {
            LocalObjective::Quadratic { b, .. } => b.len(),
            LocalObjective::LeastSquares { x, .. } => x.ncols(),
        }
    }

    pub fn value(&self, p: &[f64]) -> f64 {
        match self {
            LocalObjective::Quadratic { a, b } => {
                let r = sub(p, b);
                0.5 * dot(&r, &mat_vec(a, &r))
            }
            LocalObjective::LeastSquares { x, y } => {
                let r = sub(&mat_vec(x, p), y);
                dot(&r, &r)
            }
        }
    }

    pub fn grad(&self, p: &[f64]) -> Vec<f64> {
        match self {
            LocalObjective::Quadratic { a, b } => mat_vec(a, &sub(p, b)),
            LocalObjective::LeastSquares { x, y } => {
                let r = sub(&mat_vec(x, p), y);
                mat_t_vec(x, &r).into_iter().map(|v| 2.0 * v).collect()
            }
        }
    }

    pub fn hessian(&self) -> Mat<f64> {
        match self {
            LocalObjective::Quadratic { a, .. } => a.clone(),
            LocalObjective::LeastSquares { x, .. } => {
                let h = x.transpose() * x;
                faer::Scale(2.0) * h
            }
        }
    }

    /// Minimiser of this agent's function.
    pub fn minimizer(&self) -> Result<Vec<f64>> {
        match self {
            LocalObjective::Quadratic { b, .. } => Ok(b.clone()),
            LocalObjective::LeastSquares { x, y } => {
                let h = self.hessian();
                let rhs: Vec<f64> = mat_t_vec(x, y).into_iter().map(|v| 2.0 * v).collect();
                solve_spd(&h, &rhs)
            }
        }
    }
}

fn solve_spd(h: &Mat<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let llt = h
        .llt(Side::Lower)
        .map_err(|_| Error::InvalidInstance("Hessian is not positive definite".into()))?;
    let b = Mat::from_fn(rhs.len(), 1, |i, _| rhs[i]);
    let mut x = llt.solve(&b);
    // one step of refinement keeps the stationarity residual near rounding
    let r = &b - h * &x;
    x += llt.solve(&r);
    Ok((0..rhs.len()).map(|i| x[(i, 0)]).collect())
}

/// A collection of local objectives over a shared dimension.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub kind: ProblemKind,
    pub dim: usize,
    /// Declared class; every local Hessian has its spectrum inside it.
    pub class: ClassParams,
    pub agents: Vec<LocalObjective>,
}

impl ProblemInstance {
    pub fn new(kind: ProblemKind, class: ClassParams, agents: Vec<LocalObjective>) -> Result<Self> {
        let Some(first) = agents.first() else {
            return invalid("instance needs at least one agent");
        };
        let dim = first.dim();
        for (i, a) in agents.iter().enumerate() {
            let ok = match (kind, a) {
                (ProblemKind::Quadratic, LocalObjective::Quadratic { a, b }) => {
                    a.nrows() == dim && a.ncols() == dim && b.len() == dim
                }
                (ProblemKind::LeastSquares, LocalObjective::LeastSquares { x, y }) => {
                    x.ncols() == dim && x.nrows() == y.len()
                }
                _ => false,
            };
            if !ok {
                return invalid(format!("agent {i} does not match kind {kind:?} and dimension {dim}"));
            }
        }
        Ok(ProblemInstance {
            kind,
            dim,
            class,
            agents,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// Extreme eigenvalues `(min, max)` of each agent's Hessian.
    pub fn spectra(&self) -> Result<Vec<(f64, f64)>> {
        self.agents
            .iter()
            .map(|a| {
                let ev = a
                    .hessian()
                    .self_adjoint_eigenvalues(Side::Lower)
                    .map_err(|e| Error::InvalidInstance(format!("eigenvalues failed: {e:?}")))?;
                Ok((ev[0], ev[ev.len() - 1]))
            })
            .collect()
    }

    /// Checks every Hessian spectrum against the declared class.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for (i, (lo, hi)) in self.spectra()?.into_iter().enumerate() {
            if !self.class.admits_spectrum(&[lo, hi], tol) {
                return Err(Error::InvalidInstance(format!(
                    "agent {i} spectrum [{lo}, {hi}] outside [{}, {}]",
                    self.class.mu(),
                    self.class.l()
                )));
            }
        }
        Ok(())
    }

    pub fn local_optima(&self) -> Result<Vec<Vec<f64>>> {
        self.agents.iter().map(|a| a.minimizer()).collect()
    }

    /// Average of the local gradients at `p`.
    pub fn avg_grad(&self, p: &[f64]) -> Vec<f64> {
        let n = self.n_agents() as f64;
        let mut out = vec![0.0; self.dim];
        for a in &self.agents {
            out.iter_mut().zip(a.grad(p)).for_each(|(o, g)| *o += g / n);
        }
        out
    }
}

/// Minimiser of the average objective.
pub fn global_optimum(prob: &ProblemInstance) -> Result<Vec<f64>> {
    let d = prob.dim;
    let mut h = Mat::<f64>::zeros(d, d);
    let mut rhs = vec![0.0; d];
    for a in &prob.agents {
        let ha = a.hessian();
        h += &ha;
        // gradient is H x - c, so c = H x - grad(x) at x = 0
        let c: Vec<f64> = a.grad(&vec![0.0; d]).into_iter().map(|v| -v).collect();
        rhs.iter_mut().zip(c).for_each(|(r, v)| *r += v);
    }
    let x = solve_spd(&h, &rhs)?;
    let res: f64 = prob.avg_grad(&x).iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = 1.0 + rhs.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(res <= 1e-10 * scale) {
        return Err(Error::InvalidInstance(format!("stationarity residual {res:e} at the computed optimum")));
    }
    Ok(x)
}

/// States of every agent along a run, indexed `[k][agent][coordinate]`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub tau: usize,
    pub x: Vec<Vec<Vec<f64>>>,
    pub y: Vec<Vec<Vec<f64>>>,
    pub g: Vec<Vec<Vec<f64>>>,
    /// `comm[k]`: whether the step producing `x^{k+1}` mixed with `W`.
    pub comm: Vec<bool>,
    /// First iteration with a non-finite state; the run stops there and the
    /// offending iterate is not stored.
    pub diverged_at: Option<usize>,
}

impl Trajectory {
    /// Index of the last stored iterate.
    pub fn last_iter(&self) -> usize {
        self.x.len() - 1
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// Largest deviation `|mean_i y_i^k - mean_i g_i^k|_inf` over the run.
    pub fn tracking_gap(&self) -> f64 {
        let mut worst = 0.0f64;
        for (yk, gk) in self.y.iter().zip(&self.g) {
            let n = yk.len() as f64;
            for c in 0..yk[0].len() {
                let my: f64 = yk.iter().map(|v| v[c]).sum::<f64>() / n;
                let mg: f64 = gk.iter().map(|v| v[c]).sum::<f64>() / n;
                worst = worst.max((my - mg).abs());
            }
        }
        worst
    }
}

/// Runs DIGing with `p.tau` local updates per round for `p.total_iters()`
/// iterations. `x0` defaults to the origin for every agent.
pub fn run_diging(
    prob: &ProblemInstance,
    w: &MixingMatrix,
    p: &ScheduleParams,
    x0: Option<&[Vec<f64>]>,
) -> Result<Trajectory> {
    p.validate()?;
    let n = prob.n_agents();
    let d = prob.dim;
    if w.n() != n || p.n_agents != n {
        return invalid(format!(
            "agent counts differ: instance {n}, mixing matrix {}, schedule {}",
            w.n(),
            p.n_agents
        ));
    }
    let x0: Vec<Vec<f64>> = match x0 {
        Some(v) => {
            if v.len() != n || v.iter().any(|r| r.len() != d) {
                return invalid(format!("initial points must be {n} vectors of length {d}"));
            }
            v.to_vec()
        }
        None => vec![vec![0.0; d]; n],
    };
    let grads = |xs: &[Vec<f64>]| -> Vec<Vec<f64>> { prob.agents.iter().zip(xs).map(|(a, x)| a.grad(x)).collect() };
    let g0 = grads(&x0);
    let mut traj = Trajectory {
        tau: p.tau,
        x: vec![x0],
        y: vec![g0.clone()],
        g: vec![g0],
        comm: Vec::new(),
        diverged_at: None,
    };
    let finite = |s: &[Vec<f64>]| s.iter().all(|v| v.iter().all(|e| e.is_finite()));
    if !finite(&traj.x[0]) || !finite(&traj.g[0]) {
        traj.diverged_at = Some(0);
        return Ok(traj);
    }
    for k in 0..p.total_iters() {
        let comm = p.communicates(k);
        let (xk, yk, gk) = (&traj.x[k], &traj.y[k], &traj.g[k]);
        let mix = |s: &[Vec<f64>], i: usize| -> Vec<f64> {
            if !comm {
                return s[i].clone();
            }
            let mut out = vec![0.0; d];
            for (j, v) in s.iter().enumerate() {
                let wij = w.get(i, j);
                if wij != 0.0 {
                    out.iter_mut().zip(v).for_each(|(o, e)| *o += wij * e);
                }
            }
            out
        };
        let xn: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut v = mix(xk, i);
                v.iter_mut().zip(&yk[i]).for_each(|(o, e)| *o -= p.step * e);
                v
            })
            .collect();
        let gn = grads(&xn);
        let yn: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut v = mix(yk, i);
                for c in 0..d {
                    v[c] += gn[i][c] - gk[i][c];
                }
                v
            })
            .collect();
        if !(finite(&xn) && finite(&yn) && finite(&gn)) {
            traj.diverged_at = Some(k + 1);
            break;
        }
        traj.comm.push(comm);
        traj.x.push(xn);
        traj.y.push(yn);
        traj.g.push(gn);
    }
    Ok(traj)
}

/// `(1/N) sum_i |x_i^k - x*|^2` at iteration `k`.
pub fn iterate_error(traj: &Trajectory, k: usize, xstar: &[f64]) -> f64 {
    let xs = &traj.x[k];
    xs.iter().map(|x| sq_dist(x, xstar)).sum::<f64>() / xs.len() as f64
}

/// Error at the end of every communication round, starting with round 0.
/// Stops at the last round completed before a divergence.
pub fn error_curve(traj: &Trajectory, xstar: &[f64]) -> Vec<(usize, f64)> {
    (0..)
        .map(|t| t * traj.tau)
        .take_while(|&k| k <= traj.last_iter())
        .enumerate()
        .map(|(t, k)| (t, iterate_error(traj, k, xstar)))
        .collect()
}

pub fn write_curve_csv<W: Write>(mut out: W, curve: &[(usize, f64)]) -> Result<()> {
    writeln!(out, "round,agent_avg_sq_error")?;
    for (t, e) in curve {
        writeln!(out, "{t},{e:?}")?;
    }
    Ok(())
}

/// JSON sidecar describing a simulated run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub topology: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub tau: usize,
    #[serde(rename = "T")]
    pub rounds: usize,
    pub alpha: f64,
    pub seed: Option<u64>,
    pub kind: ProblemKind,
    pub diverged: bool,
}

/// Concrete counterpart of every basis vector of the worst-case program,
/// translated so the global minimiser sits at the origin.
pub fn basis_vectors(prob: &ProblemInstance, traj: &Trajectory, pep: &PepProgram) -> Result<Vec<Vec<f64>>> {
    let b = &pep.basis;
    if traj.diverged() || traj.last_iter() != b.total_iters || prob.n_agents() != b.n_agents {
        return invalid("trajectory does not match the program's horizon or agent count");
    }
    let xstar = global_optimum(prob)?;
    let local = prob.local_optima()?;
    Ok(b.symbols()
        .map(|s| match s {
            Symbol::Init(i) => sub(&traj.x[0][i], &xstar),
            Symbol::Grad(i, k) => traj.g[k][i].clone(),
            Symbol::GradAtGlobal(i) => prob.agents[i].grad(&xstar),
            Symbol::LocalOpt(i) => sub(&local[i], &xstar),
        })
        .collect())
}

/// Gram matrix and function values of a run, placed into `pep`'s variables.
pub fn lift_run(prob: &ProblemInstance, traj: &Trajectory, pep: &PepProgram) -> Result<(Mat<f64>, Vec<f64>)> {
    let vecs = basis_vectors(prob, traj, pep)?;
    let xstar = global_optimum(prob)?;
    let local = prob.local_optima()?;
    pep.lift(&vecs, |i, tag| {
        let a = &prob.agents[i];
        match tag {
            PointTag::Iter(k) => a.value(&traj.x[k][i]),
            PointTag::LocalOpt => a.value(&local[i]),
            PointTag::GlobalOpt => a.value(&xstar),
        }
    })
}
