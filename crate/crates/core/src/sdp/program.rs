//! Gram-lifted programs and their sparse text format.
//!
//! A program maximises a functional that is linear in a PSD matrix `G`
//! (`dim x dim`) and a free vector `F`, subject to linear constraints in the
//! same variables. Both objective and constraints are expressed through a
//! dictionary of atom vectors `a_k` in basis coordinates: a term
//! `c <a_p, a_q>` contributes `c * a_p^T G a_q`.
//!
//! Text format, one record per line, whitespace separated:
//!
//! ```text
//! gram_program 1
//! dims <dim> <n_atoms> <n_fvars> <n_constraints>
//! a <atom> <basis> <value>                  # atom coefficient triplets
//! objective <constant>
//! q <p> <q> <coef>                          # coef * <a_p, a_q>, p <= q
//! f <j> <coef>                              # coef * F_j
//! constraint <index> <le|eq> <rhs> <label>
//! q ... / f ...
//! end
//! ```
//!
//! Floats are written in shortest round-trip form, so parsing a written
//! program reproduces it bit for bit.

use std::fmt::Write as _;

use faer::Mat;

use crate::error::{invalid, Error, Result};
use crate::function_class::{AtomId, FValueId, QuadTerm, QuadraticConstraint, Sense};

const MAGIC: &str = "gram_program 1";

/// Linear objective `constant + sum quad + sum lin_f`, maximised.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Objective {
    pub quad: Vec<QuadTerm>,
    pub lin_f: Vec<(FValueId, f64)>,
    pub constant: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GramProgram {
    pub dim: usize,
    /// Dense atom vectors, each of length `dim`.
    pub atoms: Vec<Vec<f64>>,
    pub n_fvars: usize,
    pub objective: Objective,
    pub constraints: Vec<QuadraticConstraint>,
    /// One whitespace-free label per constraint.
    pub labels: Vec<String>,
}

/// Objective value and per-constraint residuals at a concrete `(G, F)`.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub objective: f64,
    /// `lhs - rhs` per constraint.
    pub raw: Vec<f64>,
    /// Violation scaled by `1 + sum |terms|`; zero when satisfied.
    pub violation: Vec<f64>,
}

impl Evaluation {
    /// Largest scaled violation and the index of the constraint attaining it.
    pub fn max_violation(&self) -> (f64, Option<usize>) {
        self.violation
            .iter()
            .enumerate()
            .fold((0.0, None), |(best, arg), (i, &v)| if v > best { (v, Some(i)) } else { (best, arg) })
    }
}

impl GramProgram {
    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.constraints.len() {
            return invalid("one label per constraint required");
        }
        for (k, a) in self.atoms.iter().enumerate() {
            if a.len() != self.dim {
                return invalid(format!("atom {k} has length {}, expected {}", a.len(), self.dim));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return invalid(format!("atom {k} has non-finite entries"));
            }
        }
        let na = self.n_atoms();
        let check_terms = |what: &str, quad: &[QuadTerm], lin: &[(FValueId, f64)]| -> Result<()> {
            for t in quad {
                if t.p >= na || t.q >= na || t.p > t.q || !t.coef.is_finite() {
                    return invalid(format!("{what}: bad quadratic term {t:?}"));
                }
            }
            for &(j, c) in lin {
                if j >= self.n_fvars || !c.is_finite() {
                    return invalid(format!("{what}: bad function-value term ({j}, {c})"));
                }
            }
            Ok(())
        };
        check_terms("objective", &self.objective.quad, &self.objective.lin_f)?;
        for (i, c) in self.constraints.iter().enumerate() {
            check_terms(&format!("constraint {i}"), &c.quad, &c.lin_f)?;
            if !c.rhs.is_finite() {
                return invalid(format!("constraint {i}: non-finite rhs"));
            }
        }
        for l in &self.labels {
            if l.is_empty() || l.contains(char::is_whitespace) {
                return invalid(format!("label `{l}` must be non-empty without whitespace"));
            }
        }
        Ok(())
    }

    /// Atom vectors as columns of a `dim x n_atoms` matrix.
    pub fn atom_matrix(&self) -> Mat<f64> {
        Mat::from_fn(self.dim, self.n_atoms(), |i, k| self.atoms[k][i])
    }

    /// Inner products of atoms under `gram`: `V^T G V`.
    pub fn atom_gram(&self, gram: &Mat<f64>) -> Mat<f64> {
        let v = self.atom_matrix();
        let gv = gram * &v;
        v.transpose() * gv
    }

    /// Expands a set of quadratic terms into a symmetric `dim x dim`
    /// coefficient matrix in basis coordinates.
    pub fn basis_matrix(&self, quad: &[QuadTerm]) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.dim, self.dim);
        for t in quad {
            let (ap, aq) = (&self.atoms[t.p], &self.atoms[t.q]);
            for i in 0..self.dim {
                if ap[i] == 0.0 && aq[i] == 0.0 {
                    continue;
                }
                for j in 0..self.dim {
                    let v = ap[i] * aq[j] + aq[i] * ap[j];
                    if v != 0.0 {
                        m[(i, j)] += 0.5 * t.coef * v;
                    }
                }
            }
        }
        m
    }

    pub fn evaluate(&self, gram: &Mat<f64>, f: &[f64]) -> Evaluation {
        let ag = self.atom_gram(gram);
        let inner = |p: AtomId, q: AtomId| ag[(p, q)];
        let fval = |j: FValueId| f[j];
        let objective = self.objective.constant
            + self.objective.quad.iter().map(|t| t.coef * inner(t.p, t.q)).sum::<f64>()
            + self.objective.lin_f.iter().map(|&(j, c)| c * fval(j)).sum::<f64>();
        let mut raw = Vec::with_capacity(self.constraints.len());
        let mut violation = Vec::with_capacity(self.constraints.len());
        for c in &self.constraints {
            let r = c.evaluate(inner, fval);
            let scale = 1.0 + c.magnitude(inner, fval);
            let v = match c.sense {
                Sense::Le => r.max(0.0),
                Sense::Eq => r.abs(),
            };
            raw.push(r);
            violation.push(v / scale);
        }
        Evaluation {
            objective,
            raw,
            violation,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(
            out,
            "dims {} {} {} {}",
            self.dim,
            self.n_atoms(),
            self.n_fvars,
            self.constraints.len()
        );
        for (k, a) in self.atoms.iter().enumerate() {
            for (i, &v) in a.iter().enumerate() {
                if v != 0.0 {
                    let _ = writeln!(out, "a {k} {i} {v:?}");
                }
            }
        }
        let write_terms = |out: &mut String, quad: &[QuadTerm], lin: &[(FValueId, f64)]| {
            for t in quad {
                let _ = writeln!(out, "q {} {} {:?}", t.p, t.q, t.coef);
            }
            for &(j, c) in lin {
                let _ = writeln!(out, "f {j} {c:?}");
            }
        };
        let _ = writeln!(out, "objective {:?}", self.objective.constant);
        write_terms(&mut out, &self.objective.quad, &self.objective.lin_f);
        for (i, c) in self.constraints.iter().enumerate() {
            let sense = match c.sense {
                Sense::Le => "le",
                Sense::Eq => "eq",
            };
            let _ = writeln!(out, "constraint {i} {sense} {:?} {}", c.rhs, self.labels[i]);
            write_terms(&mut out, &c.quad, &c.lin_f);
        }
        out.push_str("end\n");
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let perr = |line: usize, msg: String| Error::Parse { line, msg };

        match lines.next() {
            Some((_, l)) if l == MAGIC => {}
            Some((line, l)) => return Err(perr(line, format!("expected `{MAGIC}`, got `{l}`"))),
            None => return Err(perr(1, "empty input".into())),
        }
        let (line, dims) = lines.next().ok_or_else(|| perr(2, "missing dims".into()))?;
        let d: Vec<usize> = dims
            .strip_prefix("dims ")
            .ok_or_else(|| perr(line, "expected `dims`".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| perr(line, format!("bad integer `{t}`"))))
            .collect::<Result<_>>()?;
        let [dim, n_atoms, n_fvars, n_cons] = d[..] else {
            return Err(perr(line, "dims needs four integers".into()));
        };

        let mut prog = GramProgram {
            dim,
            atoms: vec![vec![0.0; dim]; n_atoms],
            n_fvars,
            objective: Objective::default(),
            constraints: Vec::with_capacity(n_cons),
            labels: Vec::with_capacity(n_cons),
        };
        // None: atom section; Some(None): objective; Some(Some(i)): constraint i
        let mut target: Option<Option<usize>> = None;
        let mut ended = false;
        for (line, l) in lines {
            if ended {
                return Err(perr(line, "content after `end`".into()));
            }
            let tok: Vec<&str> = l.split_whitespace().collect();
            let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| perr(line, format!("bad number `{s}`"))) };
            let idx = |s: &str| -> Result<usize> { s.parse().map_err(|_| perr(line, format!("bad index `{s}`"))) };
            match tok[..] {
                ["a", k, i, v] if target.is_none() => {
                    let (k, i) = (idx(k)?, idx(i)?);
                    if k >= n_atoms || i >= dim {
                        return Err(perr(line, format!("atom entry ({k}, {i}) out of range")));
                    }
                    prog.atoms[k][i] = num(v)?;
                }
                ["objective", c] if target.is_none() => {
                    prog.objective.constant = num(c)?;
                    target = Some(None);
                }
                ["constraint", i, sense, rhs, label] if target.is_some() => {
                    if idx(i)? != prog.constraints.len() {
                        return Err(perr(line, format!("constraint {i} out of order")));
                    }
                    let sense = match sense {
                        "le" => Sense::Le,
                        "eq" => Sense::Eq,
                        s => return Err(perr(line, format!("unknown sense `{s}`"))),
                    };
                    prog.constraints.push(QuadraticConstraint {
                        quad: Vec::new(),
                        lin_f: Vec::new(),
                        rhs: num(rhs)?,
                        sense,
                    });
                    prog.labels.push(label.to_string());
                    target = Some(prog.constraints.len().checked_sub(1));
                }
                ["q", p, q, c] if target.is_some() => {
                    let t = QuadTerm {
                        p: idx(p)?,
                        q: idx(q)?,
                        coef: num(c)?,
                    };
                    match target {
                        Some(Some(i)) => prog.constraints[i].quad.push(t),
                        _ => prog.objective.quad.push(t),
                    }
                }
                ["f", j, c] if target.is_some() => {
                    let t = (idx(j)?, num(c)?);
                    match target {
                        Some(Some(i)) => prog.constraints[i].lin_f.push(t),
                        _ => prog.objective.lin_f.push(t),
                    }
                }
                ["end"] => ended = true,
                _ => return Err(perr(line, format!("unexpected record `{l}`"))),
            }
        }
        if !ended {
            return Err(perr(text.lines().count(), "missing `end`".into()));
        }
        if prog.constraints.len() != n_cons {
            return Err(perr(
                text.lines().count(),
                format!("expected {n_cons} constraints, found {}", prog.constraints.len()),
            ));
        }
        prog.validate()?;
        Ok(prog)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function_class::ConstraintBuilder;

    pub(crate) fn tiny() -> GramProgram {
        // maximise |a|^2 s.t. |a|^2 <= 2, with a = e_0 + e_1 in R^2
        let mut cb = ConstraintBuilder::new();
        cb.inner(Some(0), Some(0), 1.0);
        GramProgram {
            dim: 2,
            atoms: vec![vec![1.0, 1.0], vec![0.0, 0.3]],
            n_fvars: 1,
            objective: Objective {
                quad: vec![QuadTerm { p: 0, q: 0, coef: 1.0 }],
                lin_f: vec![],
                constant: 0.0,
            },
            constraints: vec![cb.build(Sense::Le, 2.0)],
            labels: vec!["bound".into()],
        }
    }

    #[test]
    fn text_roundtrip_tiny() {
        let p = tiny();
        let back = GramProgram::parse_text(&p.to_text()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn parse_errors() {
        assert!(GramProgram::parse_text("").is_err());
        assert!(GramProgram::parse_text("gram_program 1\ndims 1 0 0 0\nobjective 0\n").is_err());
        let bad_atom = "gram_program 1\ndims 1 1 0 0\na 0 5 1.0\nobjective 0\nend\n";
        assert!(GramProgram::parse_text(bad_atom).is_err());
        let ok = "gram_program 1\ndims 1 1 0 0\na 0 0 1.0\nobjective 0\nq 0 0 1\nend\n";
        assert!(GramProgram::parse_text(ok).is_ok());
    }

    #[test]
    fn basis_matrix_matches_atom_gram() {
        let p = tiny();
        let g = Mat::from_fn(2, 2, |i, j| if i == j { 2.0 } else { 0.5 });
        let b = p.basis_matrix(&p.constraints[0].quad);
        let via_basis: f64 = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| b[(i, j)] * g[(i, j)]).sum();
        let via_atoms = p.evaluate(&g, &[0.0]).raw[0] + 2.0;
        assert!((via_basis - via_atoms).abs() < 1e-14);
    }
}
