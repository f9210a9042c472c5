//! Performance estimation program for DIGing with local updates.
//!
//! Every iterate of the algorithm is an affine (here: linear, with the
//! global minimiser pinned at the origin) combination of a small set of
//! basis vectors: initial points, gradients at each iterate, gradients at
//! the global minimiser and the local minimisers. The worst case over all
//! admissible functions becomes an SDP in the Gram matrix of that basis.

use std::fmt;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::function_class::{
    interpolation_block, AtomId, ClassParams, ConstraintBuilder, FValueId, LabeledPoint, PointTag, QuadraticConstraint,
    Sense,
};
use crate::graph::MixingMatrix;
use crate::sdp::{GramProgram, Objective};

/// Inputs defining one worst-case problem or simulation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub n_agents: usize,
    /// Local updates per communication round.
    pub tau: usize,
    /// Communication rounds.
    pub rounds: usize,
    pub step: f64,
    pub class: ClassParams,
    pub r0: f64,
    pub rstar: f64,
}

impl ScheduleParams {
    /// Unit radii `r0 = rstar = 1`. `rounds = 0` is allowed and describes
    /// the empty run.
    pub fn new(n_agents: usize, tau: usize, rounds: usize, step: f64, class: ClassParams) -> Result<Self> {
        Self::with_radii(n_agents, tau, rounds, step, class, 1.0, 1.0)
    }

    pub fn with_radii(
        n_agents: usize,
        tau: usize,
        rounds: usize,
        step: f64,
        class: ClassParams,
        r0: f64,
        rstar: f64,
    ) -> Result<Self> {
        let p = ScheduleParams {
            n_agents,
            tau,
            rounds,
            step,
            class,
            r0,
            rstar,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents == 0 {
            return invalid("need at least one agent");
        }
        if self.tau == 0 {
            return invalid("tau must be at least 1");
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return invalid(format!("step must be positive, got {}", self.step));
        }
        for (name, r) in [("r0", self.r0), ("rstar", self.rstar)] {
            if !(r.is_finite() && r > 0.0) {
                return invalid(format!("{name} must be positive, got {r}"));
            }
        }
        Ok(())
    }

    /// `K = tau * rounds`.
    pub fn total_iters(&self) -> usize {
        self.tau * self.rounds
    }

    /// Whether iteration `k` (producing `x^{k+1}`) mixes with `W`.
    pub fn communicates(&self, k: usize) -> bool {
        (k + 1).is_multiple_of(self.tau)
    }
}

/// A symbolic basis vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Symbol {
    /// `x_i^0`.
    Init(usize),
    /// `g_i^k`, the gradient of agent `i` at its `k`-th iterate.
    Grad(usize, usize),
    /// Gradient of agent `i` at the global minimiser.
    GradAtGlobal(usize),
    /// Minimiser of agent `i`'s own function.
    LocalOpt(usize),
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Init(i) => write!(f, "x0_{i}"),
            Symbol::Grad(i, k) => write!(f, "g{k}_{i}"),
            Symbol::GradAtGlobal(i) => write!(f, "gglob_{i}"),
            Symbol::LocalOpt(i) => write!(f, "xloc_{i}"),
        }
    }
}

/// Coordinates of the lifted basis: all `x_i^0`, then `g_i^k` agent by
/// agent, then gradients at the global minimiser, then local minimisers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BasisIndex {
    pub n_agents: usize,
    pub total_iters: usize,
}

impl BasisIndex {
    pub fn len(&self) -> usize {
        self.n_agents * (self.total_iters + 4)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, s: Symbol) -> usize {
        let (n, k1) = (self.n_agents, self.total_iters + 1);
        match s {
            Symbol::Init(i) => i,
            Symbol::Grad(i, k) => n + i * k1 + k,
            Symbol::GradAtGlobal(i) => n + n * k1 + i,
            Symbol::LocalOpt(i) => 2 * n + n * k1 + i,
        }
    }

    pub fn symbol(&self, idx: usize) -> Option<Symbol> {
        let (n, k1) = (self.n_agents, self.total_iters + 1);
        Some(if idx < n {
            Symbol::Init(idx)
        } else if idx < n + n * k1 {
            let r = idx - n;
            Symbol::Grad(r / k1, r % k1)
        } else if idx < 2 * n + n * k1 {
            Symbol::GradAtGlobal(idx - n - n * k1)
        } else if idx < self.len() {
            Symbol::LocalOpt(idx - 2 * n - n * k1)
        } else {
            return None;
        })
    }

    pub fn symbols(&self) -> impl Iterator<Item = Symbol> + '_ {
        (0..self.len()).map(|i| self.symbol(i).unwrap())
    }

    pub fn unit(&self, s: Symbol) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        v[self.index(s)] = 1.0;
        v
    }
}

pub fn build_basis(p: &ScheduleParams) -> BasisIndex {
    BasisIndex {
        n_agents: p.n_agents,
        total_iters: p.total_iters(),
    }
}

/// Coefficients of `x_i^k` and `y_i^k` over a [`BasisIndex`].
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientTable {
    pub basis: BasisIndex,
    /// `x[k][i]`, `k = 0..=K`.
    pub x: Vec<Vec<Vec<f64>>>,
    pub y: Vec<Vec<Vec<f64>>>,
    /// `comm[k]` for the step producing iterate `k + 1`.
    pub comm: Vec<bool>,
}

impl CoefficientTable {
    /// Runs the recursion symbolically. `step` may be zero here, unlike in
    /// [`ScheduleParams`].
    pub fn build(w: &MixingMatrix, n_agents: usize, tau: usize, total_iters: usize, step: f64) -> Result<Self> {
        if w.n() != n_agents {
            return invalid(format!("mixing matrix has size {}, expected {n_agents}", w.n()));
        }
        if tau == 0 || !step.is_finite() || step < 0.0 {
            return invalid("need tau >= 1 and a finite nonnegative step");
        }
        let basis = BasisIndex {
            n_agents,
            total_iters,
        };
        let n = n_agents;
        let x0: Vec<Vec<f64>> = (0..n).map(|i| basis.unit(Symbol::Init(i))).collect();
        let y0: Vec<Vec<f64>> = (0..n).map(|i| basis.unit(Symbol::Grad(i, 0))).collect();
        let mut x = vec![x0];
        let mut y = vec![y0];
        let mut comm = Vec::with_capacity(total_iters);
        let p = basis.len();
        for k in 0..total_iters {
            let c = (k + 1) % tau == 0;
            comm.push(c);
            let mix = |rows: &[Vec<f64>], i: usize| -> Vec<f64> {
                if !c {
                    return rows[i].clone();
                }
                let mut out = vec![0.0; p];
                for (j, r) in rows.iter().enumerate() {
                    let wij = w.get(i, j);
                    if wij != 0.0 {
                        out.iter_mut().zip(r).for_each(|(o, v)| *o += wij * v);
                    }
                }
                out
            };
            let (xk, yk) = (&x[k], &y[k]);
            let mut xn = Vec::with_capacity(n);
            let mut yn = Vec::with_capacity(n);
            for i in 0..n {
                let mut xi = mix(xk, i);
                xi.iter_mut().zip(&yk[i]).for_each(|(o, v)| *o -= step * v);
                let mut yi = mix(yk, i);
                yi[basis.index(Symbol::Grad(i, k + 1))] += 1.0;
                yi[basis.index(Symbol::Grad(i, k))] -= 1.0;
                xn.push(xi);
                yn.push(yi);
            }
            x.push(xn);
            y.push(yn);
        }
        Ok(CoefficientTable { basis, x, y, comm })
    }

    /// Evaluates every `x_i^k` given concrete basis vectors (one per basis
    /// coordinate, all of the same length).
    pub fn realize_x(&self, vectors: &[Vec<f64>]) -> Result<Vec<Vec<Vec<f64>>>> {
        realize(&self.x, vectors, self.basis.len())
    }

    pub fn realize_y(&self, vectors: &[Vec<f64>]) -> Result<Vec<Vec<Vec<f64>>>> {
        realize(&self.y, vectors, self.basis.len())
    }
}

fn realize(rows: &[Vec<Vec<f64>>], vectors: &[Vec<f64>], p: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    if vectors.len() != p {
        return invalid(format!("need {p} basis vectors, got {}", vectors.len()));
    }
    let d = vectors.first().map_or(0, |v| v.len());
    if vectors.iter().any(|v| v.len() != d) {
        return invalid("basis vectors differ in length");
    }
    Ok(rows
        .iter()
        .map(|per_agent| {
            per_agent
                .iter()
                .map(|coef| {
                    let mut out = vec![0.0; d];
                    for (c, v) in coef.iter().zip(vectors) {
                        if *c != 0.0 {
                            out.iter_mut().zip(v).for_each(|(o, e)| *o += c * e);
                        }
                    }
                    out
                })
                .collect()
        })
        .collect())
}

pub fn iterate_coefficients(w: &MixingMatrix, p: &ScheduleParams) -> Result<CoefficientTable> {
    p.validate()?;
    CoefficientTable::build(w, p.n_agents, p.tau, p.total_iters(), p.step)
}

/// The assembled program together with the bookkeeping needed to map
/// concrete runs into it.
#[derive(Clone, Debug)]
pub struct PepProgram {
    pub schedule: ScheduleParams,
    pub basis: BasisIndex,
    pub table: CoefficientTable,
    pub program: GramProgram,
    /// Number of leading interpolation constraints.
    pub n_interp: usize,
}

/// Interpolation points per agent: iterates `0..=K`, then the local and
/// global minimisers.
fn points_per_agent(total_iters: usize) -> usize {
    total_iters + 3
}

impl PepProgram {
    pub fn gram_dim(&self) -> usize {
        self.basis.len()
    }

    /// Function-value variable for `f_i` at the given point.
    pub fn fvar(&self, agent: usize, tag: PointTag) -> FValueId {
        let k = self.basis.total_iters;
        let t = match tag {
            PointTag::Iter(j) => j,
            PointTag::LocalOpt => k + 1,
            PointTag::GlobalOpt => k + 2,
        };
        agent * points_per_agent(k) + t
    }

    /// Gram matrix and function values of a concrete configuration.
    ///
    /// `vectors[j]` realises basis coordinate `j` (already translated so the
    /// global minimiser sits at the origin); `fvals(agent, tag)` supplies
    /// function values.
    pub fn lift(&self, vectors: &[Vec<f64>], fvals: impl Fn(usize, PointTag) -> f64) -> Result<(Mat<f64>, Vec<f64>)> {
        let p = self.basis.len();
        if vectors.len() != p {
            return invalid(format!("need {p} basis vectors, got {}", vectors.len()));
        }
        let d = vectors[0].len();
        if vectors.iter().any(|v| v.len() != d) {
            return invalid("basis vectors differ in length");
        }
        let h = Mat::from_fn(d, p, |r, c| vectors[c][r]);
        let gram = h.transpose() * &h;
        let n = self.basis.n_agents;
        let k = self.basis.total_iters;
        let mut f = vec![0.0; self.program.n_fvars];
        for i in 0..n {
            for t in (0..=k).map(PointTag::Iter).chain([PointTag::LocalOpt, PointTag::GlobalOpt]) {
                f[self.fvar(i, t)] = fvals(i, t);
            }
        }
        Ok((gram, f))
    }

    pub fn to_text(&self) -> String {
        self.program.to_text()
    }
}

/// Builds the worst-case program: maximise the average squared distance of
/// the final iterates to the global minimiser over all admissible local
/// functions and initial points.
pub fn assemble_pep(w: &MixingMatrix, p: &ScheduleParams) -> Result<PepProgram> {
    let table = iterate_coefficients(w, p)?;
    let basis = table.basis;
    let n = p.n_agents;
    let k = p.total_iters();
    let per_agent = 2 * k + 4;
    // atom layout per agent: x^0..x^K, g^0..g^K, local minimiser, gradient
    // at the global minimiser; one trailing atom for the summed gradients
    let x_atom = |i: usize, j: usize| -> AtomId { i * per_agent + j };
    let g_atom = |i: usize, j: usize| -> AtomId { i * per_agent + k + 1 + j };
    let xloc_atom = |i: usize| -> AtomId { i * per_agent + 2 * k + 2 };
    let gglob_atom = |i: usize| -> AtomId { i * per_agent + 2 * k + 3 };
    let sum_atom = n * per_agent;

    let mut atoms = Vec::with_capacity(sum_atom + 1);
    for i in 0..n {
        for j in 0..=k {
            atoms.push(table.x[j][i].clone());
        }
        for j in 0..=k {
            atoms.push(basis.unit(Symbol::Grad(i, j)));
        }
        atoms.push(basis.unit(Symbol::LocalOpt(i)));
        atoms.push(basis.unit(Symbol::GradAtGlobal(i)));
    }
    let mut sum = vec![0.0; basis.len()];
    for i in 0..n {
        sum[basis.index(Symbol::GradAtGlobal(i))] = 1.0;
    }
    atoms.push(sum);

    let npts = points_per_agent(k);
    let fvar = |i: usize, t: usize| -> FValueId { i * npts + t };
    let mut constraints = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let mut pts: Vec<LabeledPoint> = (0..=k)
            .map(|j| LabeledPoint {
                agent: i,
                tag: PointTag::Iter(j),
                x: Some(x_atom(i, j)),
                g: Some(g_atom(i, j)),
                f: fvar(i, j),
            })
            .collect();
        pts.push(LabeledPoint {
            agent: i,
            tag: PointTag::LocalOpt,
            x: Some(xloc_atom(i)),
            g: None,
            f: fvar(i, k + 1),
        });
        pts.push(LabeledPoint {
            agent: i,
            tag: PointTag::GlobalOpt,
            x: None,
            g: Some(gglob_atom(i)),
            f: fvar(i, k + 2),
        });
        constraints.extend(interpolation_block(&pts, &p.class)?);
        for a in &pts {
            for b in &pts {
                if a.tag != b.tag {
                    labels.push(format!("interp_a{i}_{}_{}", a.tag, b.tag));
                }
            }
        }
    }
    let n_interp = constraints.len();

    let mut opt = ConstraintBuilder::new();
    opt.inner(Some(sum_atom), Some(sum_atom), 1.0);
    constraints.push(opt.build(Sense::Eq, 0.0));
    labels.push("global_stationarity".into());
    for i in 0..n {
        let mut c = ConstraintBuilder::new();
        c.inner(Some(x_atom(i, 0)), Some(x_atom(i, 0)), 1.0);
        constraints.push(c.build(Sense::Le, p.r0 * p.r0));
        labels.push(format!("init_radius_a{i}"));
    }
    for i in 0..n {
        let mut c = ConstraintBuilder::new();
        c.inner(Some(xloc_atom(i)), Some(xloc_atom(i)), 1.0);
        constraints.push(c.build(Sense::Le, p.rstar * p.rstar));
        labels.push(format!("local_opt_radius_a{i}"));
    }

    let mut obj = ConstraintBuilder::new();
    for i in 0..n {
        obj.inner(Some(x_atom(i, k)), Some(x_atom(i, k)), 1.0 / n as f64);
    }
    let objective = Objective {
        quad: obj.build(Sense::Le, 0.0).quad,
        lin_f: Vec::new(),
        constant: 0.0,
    };
    let program = GramProgram {
        dim: basis.len(),
        atoms,
        n_fvars: n * npts,
        objective,
        constraints,
        labels,
    };
    program.validate().map_err(|e| Error::InvalidInput(format!("assembled program is malformed: {e}")))?;
    Ok(PepProgram {
        schedule: *p,
        basis,
        table,
        program,
        n_interp,
    })
}

/// Whether `w[i][j]` depends only on `(j - i) mod n`, so that rotating the
/// agents (and, by symmetry of `w`, reflecting them) leaves it unchanged.
/// Rings and complete graphs with Metropolis weights qualify.
pub fn is_circulant(w: &MixingMatrix) -> bool {
    let n = w.n();
    (0..n).all(|i| (0..n).all(|j| (w.get(i, j) - w.get(0, (j + n - i) % n)).abs() <= MixingMatrix::TOL))
}

/// Whether every permutation of the agents leaves `w` unchanged.
pub fn is_exchangeable(w: &MixingMatrix) -> bool {
    let n = w.n();
    let (d, o) = (w.get(0, 0), if n > 1 { w.get(0, 1) } else { 0.0 });
    (0..n).all(|i| (0..n).all(|j| (w.get(i, j) - if i == j { d } else { o }).abs() <= MixingMatrix::TOL))
}

/// Same worst case as [`assemble_pep`] for circulant mixing matrices, using
/// the symmetry between agents.
///
/// The program is invariant under rotations and reflections of the agent
/// indices, so some optimal solution is too. An invariant configuration
/// decomposes into real Fourier modes `k = 0..=n/2` over the agents: agent
/// `j`'s basis vectors are `sum_k cos(2 pi j k / n) u_k + sin(2 pi j k / n) w_k`
/// where, within mode `k`, `u_k` and `w_k` share one Gram block and are
/// mutually orthogonal, and different modes are orthogonal. Every agent then
/// sees the same geometry, so only agent 0's constraints are kept. Each
/// logical atom splits into `n` parts (a cosine part per mode and a sine
/// part per paired mode); an inner product is the sum over parts. When `w`
/// is invariant under all permutations the nonzero modes coincide and two
/// parts suffice: the mean over agents and agent 0's deviation from it.
/// Part `r` of logical atom `l` is atom `l * parts + r`, and cross-mode
/// blocks of the Gram matrix are never referenced.
pub fn assemble_symmetric_pep(w: &MixingMatrix, p: &ScheduleParams) -> Result<GramProgram> {
    if !is_circulant(w) {
        return invalid("symmetric reduction needs a circulant mixing matrix");
    }
    let table = iterate_coefficients(w, p)?;
    let basis = table.basis;
    let n = p.n_agents;
    let k = p.total_iters();
    let q = k + 4;
    let full = |j: usize, c: usize| -> usize {
        basis.index(match c {
            0 => Symbol::Init(j),
            c if c <= k + 1 => Symbol::Grad(j, c - 1),
            c if c == k + 2 => Symbol::GradAtGlobal(j),
            _ => Symbol::LocalOpt(j),
        })
    };
    // (Gram block, per-agent weights) for each part
    let parts: Vec<(usize, Vec<f64>)> = if n > 2 && is_exchangeable(w) {
        // all nonzero modes coincide: a mean part and agent 0's deviation
        let dev = (0..n)
            .map(|j| n as f64 / (n - 1) as f64 * (f64::from(u8::from(j == 0)) - 1.0 / n as f64))
            .collect();
        vec![(0, vec![1.0; n]), (1, dev)]
    } else {
        let mut parts = Vec::with_capacity(n);
        let wave = |m: usize, f: fn(f64) -> f64| -> Vec<f64> {
            (0..n)
                .map(|j| f(2.0 * std::f64::consts::PI * (j * m) as f64 / n as f64))
                .collect()
        };
        for m in 0..=n / 2 {
            parts.push((m, wave(m, f64::cos)));
            if m != 0 && 2 * m != n {
                parts.push((m, wave(m, f64::sin)));
            }
        }
        parts
    };
    let np = parts.len();
    let dim = (parts.iter().map(|(b, _)| *b).max().unwrap_or(0) + 1) * q;
    let split = |coef: &[f64]| -> Vec<Vec<f64>> {
        parts
            .iter()
            .map(|(blk, wts)| {
                let mut v = vec![0.0; dim];
                for c in 0..q {
                    v[blk * q + c] = (0..n).map(|j| coef[full(j, c)] * wts[j]).sum();
                }
                v
            })
            .collect()
    };
    let mut logical: Vec<Vec<f64>> = Vec::with_capacity(2 * k + 5);
    for j in 0..=k {
        logical.push(table.x[j][0].clone());
    }
    for j in 0..=k {
        logical.push(basis.unit(Symbol::Grad(0, j)));
    }
    logical.push(basis.unit(Symbol::LocalOpt(0)));
    logical.push(basis.unit(Symbol::GradAtGlobal(0)));
    let mut sum = vec![0.0; basis.len()];
    for i in 0..n {
        sum[basis.index(Symbol::GradAtGlobal(i))] = 1.0;
    }
    logical.push(sum);
    let x_atom = |j: usize| j;
    let g_atom = |j: usize| k + 1 + j;
    let xloc_atom = 2 * k + 2;
    let gglob_atom = 2 * k + 3;
    let sum_atom = 2 * k + 4;

    let mut atoms = Vec::with_capacity(np * logical.len());
    let mut nonzero = Vec::with_capacity(np * logical.len());
    for l in &logical {
        for v in split(l) {
            let scale = 1.0 + v.iter().fold(0.0f64, |a, e| a.max(e.abs()));
            // rounding of the trigonometric weights is not a real component
            let v: Vec<f64> = v.into_iter().map(|e| if e.abs() <= 1e-14 * scale { 0.0 } else { e }).collect();
            nonzero.push(v.iter().any(|e| *e != 0.0));
            atoms.push(v);
        }
    }
    let expand = |c: QuadraticConstraint| -> QuadraticConstraint {
        let mut b = ConstraintBuilder::new();
        for t in &c.quad {
            for r in 0..np {
                let (a1, a2) = (t.p * np + r, t.q * np + r);
                if nonzero[a1] && nonzero[a2] {
                    b.inner(Some(a1), Some(a2), t.coef);
                }
            }
        }
        for &(j, v) in &c.lin_f {
            b.fval(j, v);
        }
        b.build(c.sense, c.rhs)
    };

    let mut pts: Vec<LabeledPoint> = (0..=k)
        .map(|j| LabeledPoint {
            agent: 0,
            tag: PointTag::Iter(j),
            x: Some(x_atom(j)),
            g: Some(g_atom(j)),
            f: j,
        })
        .collect();
    pts.push(LabeledPoint {
        agent: 0,
        tag: PointTag::LocalOpt,
        x: Some(xloc_atom),
        g: None,
        f: k + 1,
    });
    pts.push(LabeledPoint {
        agent: 0,
        tag: PointTag::GlobalOpt,
        x: None,
        g: Some(gglob_atom),
        f: k + 2,
    });
    let mut constraints: Vec<QuadraticConstraint> =
        interpolation_block(&pts, &p.class)?.into_iter().map(expand).collect();
    let mut labels = Vec::new();
    for a in &pts {
        for b in &pts {
            if a.tag != b.tag {
                labels.push(format!("interp_a0_{}_{}", a.tag, b.tag));
            }
        }
    }
    let single = |a: AtomId, sense: Sense, rhs: f64| {
        let mut c = ConstraintBuilder::new();
        c.inner(Some(a), Some(a), 1.0);
        expand(c.build(sense, rhs))
    };
    constraints.push(single(sum_atom, Sense::Eq, 0.0));
    labels.push("global_stationarity".into());
    constraints.push(single(x_atom(0), Sense::Le, p.r0 * p.r0));
    labels.push("init_radius_a0".into());
    constraints.push(single(xloc_atom, Sense::Le, p.rstar * p.rstar));
    labels.push("local_opt_radius_a0".into());
    let objective = Objective {
        quad: single(x_atom(k), Sense::Le, 0.0).quad,
        lin_f: Vec::new(),
        constant: 0.0,
    };
    let program = GramProgram {
        dim,
        atoms,
        n_fvars: points_per_agent(k),
        objective,
        constraints,
        labels,
    };
    program.validate().map_err(|e| Error::InvalidInput(format!("assembled program is malformed: {e}")))?;
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, metropolis_weights, TopologyKind};
    use crate::sdp::{certify, solve, SolveStatus, SolverSettings, EIG_TOL, FEAS_TOL};

    fn class() -> ClassParams {
        ClassParams::new(0.1, 1.0).unwrap()
    }

    fn mixing(kind: TopologyKind, n: usize) -> MixingMatrix {
        metropolis_weights(&build_graph(kind, n, 0.6, 0).unwrap()).unwrap()
    }

    #[test]
    fn basis_sizes() {
        for (n, tau, t, p) in [(2, 1, 1, 10), (4, 2, 5, 56), (4, 4, 10, 176)] {
            let s = ScheduleParams::new(n, tau, t, 0.1, class()).unwrap();
            assert_eq!(build_basis(&s).len(), p);
        }
    }

    #[test]
    fn basis_symbols_round_trip() {
        let b = BasisIndex {
            n_agents: 3,
            total_iters: 4,
        };
        for (i, s) in b.symbols().enumerate() {
            assert_eq!(b.index(s), i);
        }
        assert_eq!(b.symbol(b.len()), None);
    }

    #[test]
    fn schedule_validation() {
        assert!(ScheduleParams::new(0, 1, 1, 0.1, class()).is_err());
        assert!(ScheduleParams::new(2, 0, 1, 0.1, class()).is_err());
        assert!(ScheduleParams::new(2, 1, 1, 0.0, class()).is_err());
        assert!(ScheduleParams::with_radii(2, 1, 1, 0.1, class(), 1.0, -1.0).is_err());
        let s = ScheduleParams::new(2, 3, 2, 0.1, class()).unwrap();
        assert_eq!(s.total_iters(), 6);
        let comm: Vec<_> = (0..6).map(|k| s.communicates(k)).collect();
        assert_eq!(comm, [false, false, true, false, false, true]);
    }

    #[test]
    fn first_step_with_communication() {
        let w = mixing(TopologyKind::AllToAll, 2);
        let s = ScheduleParams::new(2, 1, 1, 0.3, class()).unwrap();
        let t = iterate_coefficients(&w, &s).unwrap();
        let b = t.basis;
        for i in 0..2 {
            let row = &t.x[1][i];
            for j in 0..2 {
                assert_eq!(row[b.index(Symbol::Init(j))], w.get(i, j));
            }
            assert_eq!(row[b.index(Symbol::Grad(i, 0))], -0.3);
            assert_eq!(row.iter().filter(|v| **v != 0.0).count(), 3);
        }
    }

    #[test]
    fn local_phase_tracker_equals_gradient() {
        let w = mixing(TopologyKind::Ring, 4);
        let s = ScheduleParams::new(4, 3, 1, 0.2, class()).unwrap();
        let t = iterate_coefficients(&w, &s).unwrap();
        let b = t.basis;
        for k in 0..3 {
            for i in 0..4 {
                assert_eq!(t.y[k][i], b.unit(Symbol::Grad(i, k)), "k={k} i={i}");
            }
        }
        let mut expect = b.unit(Symbol::Init(1));
        expect[b.index(Symbol::Grad(1, 0))] = -0.2;
        assert_eq!(t.x[1][1], expect);
    }

    #[test]
    fn zero_step_identity_mixing_freezes() {
        let w = MixingMatrix::identity(3);
        let t = CoefficientTable::build(&w, 3, 1, 5, 0.0).unwrap();
        for k in 0..=5 {
            for i in 0..3 {
                assert_eq!(t.x[k][i], t.basis.unit(Symbol::Init(i)));
            }
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let w = MixingMatrix::identity(3);
        let s = ScheduleParams::new(2, 1, 1, 0.1, class()).unwrap();
        assert!(iterate_coefficients(&w, &s).is_err());
    }

    #[test]
    fn constraint_counts() {
        for (tau, t) in [(1, 0), (1, 1), (2, 2), (4, 1)] {
            let n = 4;
            let s = ScheduleParams::new(n, tau, t, 0.1, class()).unwrap();
            let pep = assemble_pep(&mixing(TopologyKind::AllToAll, n), &s).unwrap();
            let k = tau * t;
            assert_eq!(pep.n_interp, n * (k + 3) * (k + 2));
            assert_eq!(pep.program.constraints.len(), n * (k + 3) * (k + 2) + 1 + 2 * n);
            assert_eq!(pep.program.dim, n * (k + 4));
            assert_eq!(pep.program.labels.len(), pep.program.constraints.len());
        }
    }

    #[test]
    fn empty_run_value_is_initial_radius() {
        for r0 in [1.0, 2.0] {
            let s = ScheduleParams::with_radii(4, 1, 0, 0.1, class(), r0, 1.0).unwrap();
            let pep = assemble_pep(&mixing(TopologyKind::Ring, 4), &s).unwrap();
            let sol = solve(&pep.program, &SolverSettings::default()).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal, "{}", sol.diagnostics);
            assert!((sol.value - r0 * r0).abs() < 1e-6, "{}", sol.value);
            certify(&sol, &pep.program, FEAS_TOL, EIG_TOL).unwrap();
        }
    }

    #[test]
    fn one_step_contracts() {
        let s = ScheduleParams::new(2, 1, 1, 0.05, class()).unwrap();
        let pep = assemble_pep(&mixing(TopologyKind::AllToAll, 2), &s).unwrap();
        let sol = solve(&pep.program, &SolverSettings::default()).unwrap();
        assert!(sol.status.is_solved(), "{}", sol.diagnostics);
        assert!(sol.value < 1.0 && sol.value > 0.0, "{}", sol.value);
        certify(&sol, &pep.program, FEAS_TOL, EIG_TOL).unwrap();
    }

    #[test]
    fn text_round_trip() {
        let s = ScheduleParams::new(2, 2, 1, 0.1, class()).unwrap();
        let pep = assemble_pep(&mixing(TopologyKind::AllToAll, 2), &s).unwrap();
        let back = GramProgram::parse_text(&pep.to_text()).unwrap();
        assert_eq!(back, pep.program);
    }

    #[test]
    fn symmetric_reduction_matches_full_program() {
        let settings = SolverSettings::default();
        for (kind, n, tau, t, step) in [
            (TopologyKind::Ring, 4, 2, 2, 0.4),
            (TopologyKind::Ring, 5, 1, 3, 0.3),
            (TopologyKind::AllToAll, 4, 3, 1, 0.25),
            (TopologyKind::AllToAll, 2, 2, 2, 0.5),
            (TopologyKind::Ring, 3, 2, 1, 0.6),
        ] {
            let w = mixing(kind, n);
            let s = ScheduleParams::new(n, tau, t, step, class()).unwrap();
            let full = solve(&assemble_pep(&w, &s).unwrap().program, &settings).unwrap();
            let red = assemble_symmetric_pep(&w, &s).unwrap();
            let sym = solve(&red, &settings).unwrap();
            assert!(full.status.is_solved() && sym.status.is_solved());
            assert!(
                (full.value - sym.value).abs() <= 1e-6 * (1.0 + full.value),
                "{kind} n={n}: {} vs {}",
                full.value,
                sym.value
            );
            certify(&sym, &red, FEAS_TOL, EIG_TOL).unwrap();
        }
    }

    #[test]
    fn symmetry_detection() {
        assert!(is_circulant(&mixing(TopologyKind::Ring, 6)));
        assert!(is_exchangeable(&mixing(TopologyKind::AllToAll, 5)));
        assert!(!is_exchangeable(&mixing(TopologyKind::Ring, 5)));
        let path = MixingMatrix::from_rows(&[
            vec![0.5, 0.5, 0.0],
            vec![0.5, 0.0, 0.5],
            vec![0.0, 0.5, 0.5],
        ])
        .unwrap();
        assert!(!is_circulant(&path));
        let s = ScheduleParams::new(3, 1, 1, 0.1, class()).unwrap();
        assert!(assemble_symmetric_pep(&path, &s).is_err());
    }
}
