//! Primal-dual path-following interior-point method (HKM direction,
//! Mehrotra predictor-corrector) for [`GramProgram`]s.
//!
//! Internally the program is put in minimisation form
//!
//! ```text
//! min <C, G> + c_f^T F   s.t.  <A_i, G> + b_i^T F (+ s_i) = r_i,  G >= 0,  s >= 0
//! ```
//!
//! with `A_i = V E_i V^T` for the shared atom matrix `V` and small dense
//! `E_i`. The Schur complement `M_ij = tr(A_i G A_j Z^-1)` is formed in atom
//! coordinates, which costs `O(|S_i| |S_j|)` per entry instead of `O(dim^2)`.
//! Free variables `F` are handled by a second, small Schur complement.
//!
//! Before iterating, equality constraints of the form `<A, G> = 0` with
//! `A >= 0` are removed by restricting `G` to the orthogonal complement of
//! `range(A)`; such constraints leave no strictly feasible point otherwise.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, MatRef, Par, Side};
use rayon::prelude::*;

use super::program::GramProgram;
use super::{SdpSolution, SolveStatus, SolverResiduals, SolverSettings};
use crate::function_class::{QuadTerm, Sense};

/// Relative eigenvalue threshold separating range from null space in
/// facial reduction.
const FACE_TOL: f64 = 1e-10;

/// Relative dual residual treated as exact feasibility.
const DUAL_NOISE: f64 = 1e-12;

/// Worst relative residual accepted for `near_optimal`.
const NEAR_TOL: f64 = 1e-6;

struct Row {
    support: Vec<usize>,
    /// Dense symmetric `|S| x |S|`, row-major.
    e: Vec<f64>,
    lin: Vec<(usize, f64)>,
    rhs: f64,
    ineq: bool,
    scale: f64,
}

impl Row {
    fn from_terms(quad: &[QuadTerm], lin: Vec<(usize, f64)>, rhs: f64, ineq: bool) -> Row {
        let mut support: Vec<usize> = quad.iter().flat_map(|t| [t.p, t.q]).collect();
        support.sort_unstable();
        support.dedup();
        let k = support.len();
        let pos = |a: usize| support.binary_search(&a).unwrap();
        let mut e = vec![0.0; k * k];
        for t in quad {
            let (a, b) = (pos(t.p), pos(t.q));
            if a == b {
                e[a * k + a] += t.coef;
            } else {
                e[a * k + b] += 0.5 * t.coef;
                e[b * k + a] += 0.5 * t.coef;
            }
        }
        Row {
            support,
            e,
            lin,
            rhs,
            ineq,
            scale: 1.0,
        }
    }

    fn k(&self) -> usize {
        self.support.len()
    }

    /// `<E, X[S, S]>` for an atom-space matrix `X`.
    fn dot(&self, x: &Mat<f64>) -> f64 {
        let k = self.k();
        let mut acc = 0.0;
        for a in 0..k {
            for b in 0..k {
                acc += self.e[a * k + b] * x[(self.support[a], self.support[b])];
            }
        }
        acc
    }

    fn add_to(&self, coef: f64, x: &mut Mat<f64>) {
        let k = self.k();
        for a in 0..k {
            for b in 0..k {
                x[(self.support[a], self.support[b])] += coef * self.e[a * k + b];
            }
        }
    }

    fn rescale(&mut self, by: f64) {
        self.e.iter_mut().for_each(|v| *v /= by);
        self.lin.iter_mut().for_each(|(_, v)| *v /= by);
        self.rhs /= by;
        self.scale *= by;
    }
}

/// Program after facial reduction, row scaling and free-column selection.
struct Reduced {
    n: usize,
    /// `dim x n`, orthonormal columns spanning the face `G` lives on.
    face: Mat<f64>,
    /// Reduced atoms, `n x n_atoms`.
    v: Mat<f64>,
    rows: Vec<Row>,
    origin: Vec<usize>,
    /// Ordinals of inequality rows among `rows`.
    ineq: Vec<usize>,
    fcols: Vec<usize>,
    /// `m x fcols.len()`.
    b: Mat<f64>,
    obj: Row,
    obj_f: Vec<f64>,
    obj_scale: f64,
}

impl Reduced {
    fn atom_gram(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        let xv = x * &self.v;
        self.v.transpose() * xv
    }

    fn apply_a(&self, x: MatRef<'_, f64>) -> Vec<f64> {
        let xa = self.atom_gram(x);
        self.rows.iter().map(|r| r.dot(&xa)).collect()
    }

    fn apply_at(&self, y: &[f64]) -> Mat<f64> {
        let na = self.v.ncols();
        let mut ya = Mat::<f64>::zeros(na, na);
        for (r, &yi) in self.rows.iter().zip(y) {
            if yi != 0.0 {
                r.add_to(yi, &mut ya);
            }
        }
        let t = &self.v * ya;
        t * self.v.transpose()
    }

    fn obj_matrix(&self) -> Mat<f64> {
        let na = self.v.ncols();
        let mut ca = Mat::<f64>::zeros(na, na);
        self.obj.add_to(1.0, &mut ca);
        let t = &self.v * ca;
        t * self.v.transpose()
    }

    fn b_mul(&self, f: &[f64]) -> Vec<f64> {
        let m = self.rows.len();
        let mut out = vec![0.0; m];
        for (c, &fc) in f.iter().enumerate() {
            if fc != 0.0 {
                for i in 0..m {
                    out[i] += self.b[(i, c)] * fc;
                }
            }
        }
        out
    }

    fn bt_mul(&self, y: &[f64]) -> Vec<f64> {
        (0..self.fcols.len())
            .map(|c| (0..self.rows.len()).map(|i| self.b[(i, c)] * y[i]).sum())
            .collect()
    }
}

fn sym_eig(x: MatRef<'_, f64>) -> Option<(Vec<f64>, Mat<f64>)> {
    let e = x.self_adjoint_eigen(Side::Lower).ok()?;
    let s = e.S().column_vector();
    Some(((0..s.nrows()).map(|i| s[i]).collect(), e.U().to_owned()))
}

fn reduce(prog: &GramProgram) -> Result<Reduced, String> {
    let dim = prog.dim;
    let vfull = prog.atom_matrix();

    // facial reduction on homogeneous PSD equalities
    let mut removed = vec![false; prog.constraints.len()];
    let mut face_sum = Mat::<f64>::zeros(dim, dim);
    let mut any = false;
    for (i, c) in prog.constraints.iter().enumerate() {
        if c.sense != Sense::Eq || c.rhs != 0.0 || !c.lin_f.is_empty() || c.quad.is_empty() {
            continue;
        }
        let a = prog.basis_matrix(&c.quad);
        let Some((ev, _)) = sym_eig(a.as_ref()) else { continue };
        let top = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if top == 0.0 {
            continue;
        }
        let psd = ev.iter().all(|&v| v >= -FACE_TOL * top);
        let nsd = ev.iter().all(|&v| v <= FACE_TOL * top);
        if psd || nsd {
            let sign = if psd { 1.0 / top } else { -1.0 / top };
            face_sum += faer::Scale(sign) * &a;
            removed[i] = true;
            any = true;
        }
    }
    let face = if any {
        let (ev, u) = sym_eig(face_sum.as_ref()).ok_or("eigendecomposition failed in facial reduction")?;
        let top = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let keep: Vec<usize> = (0..dim).filter(|&i| ev[i] <= FACE_TOL * top.max(1.0)).collect();
        Mat::from_fn(dim, keep.len(), |r, c| u[(r, keep[c])])
    } else {
        Mat::<f64>::identity(dim, dim)
    };
    let n = face.ncols();
    if n == 0 {
        return Err("facial reduction left no free Gram directions".into());
    }
    let v = face.transpose() * &vfull;

    // rows, dropping empty ones
    let mut rows = Vec::new();
    let mut origin = Vec::new();
    for (i, c) in prog.constraints.iter().enumerate() {
        if removed[i] {
            continue;
        }
        if c.quad.is_empty() && c.lin_f.is_empty() {
            let ok = match c.sense {
                Sense::Le => c.rhs >= 0.0,
                Sense::Eq => c.rhs == 0.0,
            };
            if !ok {
                return Err(format!("constraint {} is an unsatisfiable constant", prog.labels[i]));
            }
            continue;
        }
        rows.push(Row::from_terms(&c.quad, c.lin_f.clone(), c.rhs, c.sense == Sense::Le));
        origin.push(i);
    }

    // scale each row to unit norm, measuring A_i in the reduced space
    for r in rows.iter_mut() {
        let vs = Mat::from_fn(n, r.k(), |i, a| v[(i, r.support[a])]);
        let w = vs.transpose() * &vs;
        let k = r.k();
        let mut fro2 = 0.0;
        // ||V E V^T||_F^2 = tr(E W E W)
        let ew = Mat::from_fn(k, k, |a, b| (0..k).map(|c| r.e[a * k + c] * w[(c, b)]).sum::<f64>());
        for a in 0..k {
            for b in 0..k {
                fro2 += ew[(a, b)] * ew[(b, a)];
            }
        }
        let lin2: f64 = r.lin.iter().map(|(_, c)| c * c).sum();
        let norm = (fro2.max(0.0) + lin2).sqrt();
        if norm > 0.0 && norm.is_finite() {
            r.rescale(norm);
        }
    }
    let ineq: Vec<usize> = rows.iter().enumerate().filter(|(_, r)| r.ineq).map(|(i, _)| i).collect();

    // free columns: keep a maximal independent subset
    let nf = prog.n_fvars;
    let m = rows.len();
    let bfull = {
        let mut b = Mat::<f64>::zeros(m, nf);
        for (i, r) in rows.iter().enumerate() {
            for &(j, c) in &r.lin {
                b[(i, j)] += c;
            }
        }
        b
    };
    let fcols: Vec<usize> = if nf == 0 || m == 0 {
        Vec::new()
    } else {
        let qr = bfull.col_piv_qr();
        let rr = qr.R();
        let (perm, _) = qr.P().arrays();
        let diag = rr.nrows().min(rr.ncols());
        let r00 = if diag > 0 { rr[(0, 0)].abs() } else { 0.0 };
        let rank = (0..diag).take_while(|&i| rr[(i, i)].abs() > 1e-10 * r00.max(1e-300)).count();
        let mut cols: Vec<usize> = perm[..rank].to_vec();
        cols.sort_unstable();
        cols
    };
    let b = Mat::from_fn(m, fcols.len(), |i, c| bfull[(i, fcols[c])]);
    let mut col_of = vec![usize::MAX; nf];
    for (c, &j) in fcols.iter().enumerate() {
        col_of[j] = c;
    }

    // objective in minimisation form
    let mut obj = Row::from_terms(&prog.objective.quad, Vec::new(), 0.0, false);
    obj.e.iter_mut().for_each(|x| *x = -*x);
    let mut obj_f = vec![0.0; fcols.len()];
    for &(j, c) in &prog.objective.lin_f {
        if col_of[j] != usize::MAX {
            obj_f[col_of[j]] -= c;
        }
    }
    let mut red = Reduced {
        n,
        face,
        v,
        rows,
        origin,
        ineq,
        fcols,
        b,
        obj,
        obj_f,
        obj_scale: 1.0,
    };
    let cm = red.obj_matrix();
    let cnorm = (cm.norm_l2().powi(2) + red.obj_f.iter().map(|x| x * x).sum::<f64>()).sqrt();
    if cnorm > 0.0 {
        red.obj.e.iter_mut().for_each(|x| *x /= cnorm);
        red.obj_f.iter_mut().for_each(|x| *x /= cnorm);
        red.obj_scale = cnorm;
    }
    Ok(red)
}

fn sym(x: Mat<f64>) -> Mat<f64> {
    let t = x.transpose().to_owned();
    faer::Scale(0.5) * (x + t)
}

fn frob(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> f64 {
    let mut acc = 0.0;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            acc += a[(i, j)] * b[(i, j)];
        }
    }
    acc
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest step `t` with `x + t dx` PSD (infinite if unbounded).
fn max_psd_step(x: MatRef<'_, f64>, dx: MatRef<'_, f64>) -> Option<f64> {
    let llt = x.llt(Side::Lower).ok()?;
    let l = llt.L();
    let mut t = dx.to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, t.as_mut(), Par::Seq);
    let mut t = t.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, t.as_mut(), Par::Seq);
    let t = sym(t);
    let ev = t.self_adjoint_eigenvalues(Side::Lower).ok()?;
    let lo = ev.first().copied().unwrap_or(0.0);
    Some(if lo < 0.0 { -1.0 / lo } else { f64::INFINITY })
}

fn max_lp_step(x: &[f64], dx: &[f64]) -> f64 {
    x.iter()
        .zip(dx)
        .filter(|(_, &d)| d < 0.0)
        .map(|(&v, &d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

struct Newton<'a> {
    red: &'a Reduced,
    /// Lower triangle of `M + D`, column-major, kept for refinement.
    lower: Vec<f64>,
    chol: faer::linalg::solvers::Llt<f64>,
    minv_b: Mat<f64>,
    sf: Option<faer::linalg::solvers::Llt<f64>>,
}

impl Newton<'_> {
    /// Solves the augmented system with one round of iterative refinement.
    fn solve(&self, h: &[f64], rf: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut dy, mut df) = self.solve_once(h, rf);
        {
            let m = h.len();
            let mdy = sym_lower_mul(&self.lower, m, &dy);
            let bdf = self.red.b_mul(&df);
            let r1: Vec<f64> = (0..m).map(|i| h[i] - mdy[i] - bdf[i]).collect();
            let btdy = self.red.bt_mul(&dy);
            let r2: Vec<f64> = rf.iter().zip(&btdy).map(|(a, b)| a - b).collect();
            let (cy, cf) = self.solve_once(&r1, &r2);
            dy.iter_mut().zip(&cy).for_each(|(a, b)| *a += b);
            df.iter_mut().zip(&cf).for_each(|(a, b)| *a += b);
        }
        (dy, df)
    }

    fn solve_once(&self, h: &[f64], rf: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = h.len();
        let hm = Mat::from_fn(m, 1, |i, _| h[i]);
        let dy0 = self.chol.solve(&hm);
        let nf = self.red.fcols.len();
        if nf == 0 {
            return ((0..m).map(|i| dy0[(i, 0)]).collect(), Vec::new());
        }
        let sf = self.sf.as_ref().expect("free-variable factor");
        let rhs = Mat::from_fn(nf, 1, |c, _| {
            (0..m).map(|i| self.red.b[(i, c)] * dy0[(i, 0)]).sum::<f64>() - rf[c]
        });
        let df = sf.solve(&rhs);
        let corr = &self.minv_b * &df;
        (
            (0..m).map(|i| dy0[(i, 0)] - corr[(i, 0)]).collect(),
            (0..nf).map(|c| df[(c, 0)]).collect(),
        )
    }
}

fn sym_lower_mul(lower: &[f64], m: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for c in 0..m {
        let col = &lower[c * m..(c + 1) * m];
        let mut acc = col[c] * x[c];
        for r in c + 1..m {
            out[r] += col[r] * x[c];
            acc += col[r] * x[r];
        }
        out[c] += acc;
    }
    out
}

/// Lower triangle of `M + D`, column-major.
fn schur(red: &Reduced, g: MatRef<'_, f64>, zinv: MatRef<'_, f64>, d: &[f64]) -> Vec<f64> {
    let ga = red.atom_gram(g);
    let za = red.atom_gram(zinv);
    let na = ga.ncols();
    let rows = &red.rows;
    let m = rows.len();
    let kmax = rows.iter().map(|r| r.k()).max().unwrap_or(0).max(1);
    // supports padded to kmax; padded slots carry zero weight below
    let mut sup = vec![0usize; m * kmax];
    for (j, r) in rows.iter().enumerate() {
        sup[j * kmax..j * kmax + r.k()].copy_from_slice(&r.support);
    }
    // qt[s][j * kmax + b] = (E_j Za[S_j, :])[b, s], atom-major so that a
    // column of M streams through memory
    let stride = m * kmax;
    let mut qt = vec![0.0; na * stride];
    qt.par_chunks_mut(stride).enumerate().for_each(|(s, out)| {
        for (j, r) in rows.iter().enumerate() {
            let k = r.k();
            for b in 0..k {
                let mut acc = 0.0;
                for c in 0..k {
                    acc += r.e[b * k + c] * za[(r.support[c], s)];
                }
                out[j * kmax + b] = acc;
            }
        }
    });
    // lower triangle, column-major: column i holds rows j >= i
    let mut buf = vec![0.0; m * m];
    buf.par_chunks_mut(m).enumerate().for_each(|(i, col)| {
        let ri = &rows[i];
        let k = ri.k();
        // P_i = E_i Ga[S_i, :]
        let mut p = vec![0.0; k * na];
        for a in 0..k {
            for b in 0..k {
                let e = ri.e[a * k + b];
                if e != 0.0 {
                    let sb = ri.support[b];
                    for c in 0..na {
                        p[a * na + c] += e * ga[(sb, c)];
                    }
                }
            }
        }
        for (a, &sa) in ri.support.iter().enumerate() {
            let pa = &p[a * na..(a + 1) * na];
            let q = &qt[sa * stride..(sa + 1) * stride];
            for j in i..m {
                let sj = &sup[j * kmax..(j + 1) * kmax];
                let qj = &q[j * kmax..(j + 1) * kmax];
                col[j] += sj.iter().zip(qj).map(|(&s, &q)| pa[s] * q).sum::<f64>();
            }
        }
        col[i] += d[i];
    });
    buf
}

pub(crate) fn solve(prog: &GramProgram, settings: &SolverSettings) -> SdpSolution {
    let red = match reduce(prog) {
        Ok(r) => r,
        Err(msg) => return SdpSolution::failed(prog, SolveStatus::NumericalFailure, msg),
    };
    let n = red.n;
    let m = red.rows.len();
    let mi = red.ineq.len();
    let nf = red.fcols.len();
    let rhs: Vec<f64> = red.rows.iter().map(|r| r.rhs).collect();
    let cmat = red.obj_matrix();
    let rnorm = norm2(&rhs);
    let cnorm = (cmat.norm_l2().powi(2) + red.obj_f.iter().map(|x| x * x).sum::<f64>()).sqrt();

    let xi = 10f64.max((n as f64).sqrt()).max(rnorm);
    let eta = 10f64.max((n as f64).sqrt()).max(cnorm);
    let mut g = faer::Scale(xi) * Mat::<f64>::identity(n, n);
    let mut z = faer::Scale(eta) * Mat::<f64>::identity(n, n);
    let mut s = vec![xi; mi];
    let mut zs = vec![eta; mi];
    let mut y = vec![0.0; m];
    let mut f = vec![0.0; nf];
    let nu = (n + mi) as f64;

    let mut status = SolveStatus::NumericalFailure;
    let mut diag = String::new();
    let mut iterations = 0;
    let mut gamma = 0.9;
    let mut stalls = 0;
    let mut last = SolverResiduals::default();
    // best iterate so far by worst relative residual, used when the final
    // iterations lose accuracy
    let mut best: Option<(f64, Mat<f64>, Vec<f64>, Vec<f64>, SolverResiduals)> = None;
    let mut since_best = 0;

    for it in 0..=settings.max_iter {
        iterations = it;
        // residuals
        let ag = red.apply_a(g.as_ref());
        let bf = red.b_mul(&f);
        let mut rp: Vec<f64> = (0..m).map(|i| rhs[i] - ag[i] - bf[i]).collect();
        for (k, &i) in red.ineq.iter().enumerate() {
            rp[i] -= s[k];
        }
        let aty = red.apply_at(&y);
        let rd = &cmat - &aty - &z;
        let rds: Vec<f64> = red.ineq.iter().enumerate().map(|(k, &i)| -y[i] - zs[k]).collect();
        let bty = red.bt_mul(&y);
        let rf: Vec<f64> = (0..nf).map(|c| red.obj_f[c] - bty[c]).collect();

        let pobj = frob(cmat.as_ref(), g.as_ref()) + red.obj_f.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>();
        let dobj: f64 = rhs.iter().zip(&y).map(|(a, b)| a * b).sum();
        let comp = frob(g.as_ref(), z.as_ref()) + s.iter().zip(&zs).map(|(a, b)| a * b).sum::<f64>();
        let mu = comp / nu;
        let pinf = norm2(&rp) / (1.0 + rnorm);
        let dinf = (rd.norm_l2().powi(2) + rds.iter().map(|x| x * x).sum::<f64>() + rf.iter().map(|x| x * x).sum::<f64>())
            .sqrt()
            / (1.0 + cnorm);
        let relgap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        last = SolverResiduals {
            primal: pinf,
            dual: dinf,
            rel_gap: relgap,
        };

        if !(pobj.is_finite() && dobj.is_finite() && mu.is_finite()) {
            diag = format!("non-finite iterate at iteration {it}");
            break;
        }
        let score = pinf.max(dinf).max(relgap);
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, g.clone(), f.clone(), y.clone(), last));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if relgap <= settings.rel_gap && pinf <= settings.feas_tol && dinf <= settings.feas_tol {
            status = SolveStatus::Optimal;
            break;
        }
        let gnorm = g.norm_l2();
        let ynorm = norm2(&y);
        if gnorm > 1e12 * xi && pinf < 1e-6 && pobj < -1e10 {
            status = SolveStatus::Unbounded;
            diag = format!("primal iterate norm {gnorm:e} with objective still improving");
            break;
        }
        if ynorm > 1e12 * (1.0 + cnorm) && dinf < 1e-6 && dobj > 1e10 {
            status = SolveStatus::Infeasible;
            diag = format!("dual iterate norm {ynorm:e}, primal residual {pinf:e}");
            break;
        }
        if it == settings.max_iter || stalls >= 5 || (since_best >= 3 && best.as_ref().is_some_and(|b| b.0 <= NEAR_TOL)) {
            diag = format!(
                "stopped after {it} iterations: rel_gap={relgap:e} primal={pinf:e} dual={dinf:e}"
            );
            break;
        }

        let zinv = match z.llt(Side::Lower) {
            Ok(c) => c.inverse(),
            Err(_) => {
                diag = format!("dual slack lost definiteness at iteration {it}");
                break;
            }
        };
        let dscale: Vec<f64> = {
            let mut d = vec![0.0; m];
            for (k, &i) in red.ineq.iter().enumerate() {
                d[i] = s[k] / zs[k];
            }
            d
        };
        let mut lower = schur(&red, g.as_ref(), zinv.as_ref(), &dscale);
        let chol = match MatRef::from_column_major_slice(&lower, m, m).llt(Side::Lower) {
            Ok(c) => c,
            Err(_) => {
                // tiny ridge keeps the factorisation alive near the boundary
                let ridge = 1e-13 * (0..m).map(|i| lower[i * m + i]).fold(0.0, f64::max).max(1e-300);
                for i in 0..m {
                    lower[i * m + i] += ridge;
                }
                match MatRef::from_column_major_slice(&lower, m, m).llt(Side::Lower) {
                    Ok(c) => c,
                    Err(_) => {
                        diag = format!("Schur complement not positive definite at iteration {it}");
                        break;
                    }
                }
            }
        };
        let (minv_b, sf) = if nf > 0 {
            let mb = chol.solve(&red.b);
            let sfm = red.b.transpose() * &mb;
            match sfm.llt(Side::Lower) {
                Ok(c) => (mb, Some(c)),
                Err(_) => {
                    diag = format!("free-variable system singular at iteration {it}");
                    break;
                }
            }
        } else {
            (Mat::zeros(m, 0), None)
        };
        let newton = Newton {
            red: &red,
            lower,
            chol,
            minv_b,
            sf,
        };

        // Once the dual residual is rounding noise, feeding it back through
        // G (.) Z^-1 only amplifies that noise by 1/mu into the primal.
        let (rd, rds, rf) = if dinf <= DUAL_NOISE {
            (Mat::zeros(n, n), vec![0.0; mi], vec![0.0; nf])
        } else {
            (rd, rds, rf)
        };
        // one Newton solve for a given complementarity target
        let g_rd_zinv = {
            let t = &g * &rd;
            t * &zinv
        };
        let direction = |gh: &Mat<f64>, sh: &[f64]| {
            let a_term = red.apply_a((gh - &g_rd_zinv).as_ref());
            let mut h: Vec<f64> = (0..m).map(|i| rp[i] - a_term[i]).collect();
            for (k, &i) in red.ineq.iter().enumerate() {
                h[i] -= sh[k] - s[k] / zs[k] * rds[k];
            }
            let (mut dy, mut df) = newton.solve(&h, &rf);
            let dz_mat = &rd - red.apply_at(&dy);
            let t = &g * &dz_mat;
            let mut dg = gh - sym(t * &zinv);
            let mut dzs: Vec<f64> = red.ineq.iter().enumerate().map(|(k, &i)| rds[k] - dy[i]).collect();
            let mut ds: Vec<f64> = (0..mi).map(|k| sh[k] - s[k] / zs[k] * dzs[k]).collect();
            // Refine against the linearised primal equations: forming dG
            // through Z^-1 loses accuracy as mu -> 0, and the correction
            // carries that error only at second order.
            let adg = red.apply_a(dg.as_ref());
            let bdf = red.b_mul(&df);
            let mut e: Vec<f64> = (0..m).map(|i| rp[i] - adg[i] - bdf[i]).collect();
            for (k, &i) in red.ineq.iter().enumerate() {
                e[i] -= ds[k];
            }
            let (dy2, df2) = newton.solve(&e, &vec![0.0; nf]);
            let t = &g * red.apply_at(&dy2);
            dg += sym(t * &zinv);
            for (k, &i) in red.ineq.iter().enumerate() {
                dzs[k] -= dy2[i];
                ds[k] += s[k] / zs[k] * dy2[i];
            }
            for i in 0..m {
                dy[i] += dy2[i];
            }
            for c in 0..nf {
                df[c] += df2[c];
            }
            let dz_mat = &rd - red.apply_at(&dy);
            (dg, dz_mat, ds, dzs, dy, df)
        };
        let steps = |dg: &Mat<f64>, dz: &Mat<f64>, ds: &[f64], dzs: &[f64]| -> Option<(f64, f64)> {
            let ap = max_psd_step(g.as_ref(), dg.as_ref())?.min(max_lp_step(&s, ds));
            let ad = max_psd_step(z.as_ref(), dz.as_ref())?.min(max_lp_step(&zs, dzs));
            Some((ap, ad))
        };

        // predictor
        let gh = faer::Scale(-1.0) * &g;
        let sh: Vec<f64> = s.iter().map(|v| -v).collect();
        let (dg, dz, ds, dzs, _, _) = direction(&gh, &sh);
        let Some((ap, ad)) = steps(&dg, &dz, &ds, &dzs) else {
            diag = format!("step computation failed at iteration {it}");
            break;
        };
        let (ap, ad) = (ap.min(1.0), ad.min(1.0));
        let g_aff = &g + faer::Scale(ap) * &dg;
        let z_aff = &z + faer::Scale(ad) * &dz;
        // Separate centring targets for the PSD and slack blocks. Many
        // inactive inequalities would otherwise force a common mu far below
        // what the gap needs, and Z^-1 ~ 1/mu amplifies rounding into dG.
        // Targets are floored so the gap lands near half its tolerance.
        let scale = 1.0 + pobj.abs() + dobj.abs();
        let mus = frob(g.as_ref(), z.as_ref()) / n as f64;
        let mus_aff = frob(g_aff.as_ref(), z_aff.as_ref()) / n as f64;
        let blocks = if mi > 0 { 2.0 } else { 1.0 };
        let floor_s = 0.5 * settings.rel_gap * scale / (blocks * n as f64);
        let target_s = (mus * (mus_aff / mus).clamp(0.0, 1.0).powi(if mus > 1e-6 { 2 } else { 3 })).max(floor_s);
        let target_l = if mi > 0 {
            let mul = s.iter().zip(&zs).map(|(a, b)| a * b).sum::<f64>() / mi as f64;
            let mul_aff = (0..mi).map(|k| (s[k] + ap * ds[k]) * (zs[k] + ad * dzs[k])).sum::<f64>() / mi as f64;
            let floor_l = 0.5 * settings.rel_gap * scale / (blocks * mi as f64);
            (mul * (mul_aff / mul).clamp(0.0, 1.0).powi(if mul > 1e-6 { 2 } else { 3 })).max(floor_l)
        } else {
            0.0
        };

        // corrector
        let corr = {
            let t = &dg * &dz;
            sym(t * &zinv)
        };
        let gh = faer::Scale(target_s) * &zinv - &g - corr;
        let sh: Vec<f64> = (0..mi)
            .map(|k| target_l / zs[k] - s[k] - ds[k] * dzs[k] / zs[k])
            .collect();
        let (dg, dz, ds, dzs, dy, df) = direction(&gh, &sh);
        let Some((ap, ad)) = steps(&dg, &dz, &ds, &dzs) else {
            diag = format!("step computation failed at iteration {it}");
            break;
        };
        let ap = (gamma * ap).min(1.0);
        let ad = (gamma * ad).min(1.0);
        gamma = 0.9 + 0.09 * ap.min(ad);
        if ap < 1e-8 && ad < 1e-8 {
            stalls += 1;
        } else {
            stalls = 0;
        }

        g = sym(&g + faer::Scale(ap) * &dg);
        for k in 0..mi {
            s[k] += ap * ds[k];
            zs[k] += ad * dzs[k];
        }
        for c in 0..nf {
            f[c] += ap * df[c];
        }
        z = sym(&z + faer::Scale(ad) * &dz);
        for i in 0..m {
            y[i] += ad * dy[i];
        }
    }

    if status == SolveStatus::NumericalFailure {
        if let Some((score, bg, bf, by, bres)) = best {
            if score <= NEAR_TOL {
                let strict = bres.rel_gap <= settings.rel_gap
                    && bres.primal <= settings.feas_tol
                    && bres.dual <= settings.feas_tol;
                status = if strict { SolveStatus::Optimal } else { SolveStatus::NearOptimal };
                g = bg;
                f = bf;
                y = by;
                last = bres;
            }
        }
    }

    // map back to the original program
    let gram = {
        let t = &red.face * &g;
        sym(t * red.face.transpose())
    };
    let mut f_values = vec![0.0; prog.n_fvars];
    for (c, &j) in red.fcols.iter().enumerate() {
        f_values[j] = f[c];
    }
    let mut multipliers = vec![0.0; prog.constraints.len()];
    for (i, r) in red.rows.iter().enumerate() {
        multipliers[red.origin[i]] = -y[i] * red.obj_scale / r.scale;
    }
    let cm = red.obj_matrix();
    let pobj = frob(cm.as_ref(), g.as_ref()) + red.obj_f.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>();
    let dobj: f64 = rhs.iter().zip(&y).map(|(a, b)| a * b).sum();
    let value = -pobj * red.obj_scale + prog.objective.constant;
    let dual_value = -dobj * red.obj_scale + prog.objective.constant;
    SdpSolution {
        value,
        dual_value,
        gram,
        f_values,
        multipliers,
        status,
        residuals: last,
        iterations,
        diagnostics: diag,
    }
}
