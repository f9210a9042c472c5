//! The class of μ-strongly convex, L-smooth functions and its interpolation
//! inequalities, written as constraints that are linear in a Gram matrix and
//! a vector of function values.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Index of a vector in a shared dictionary of "atoms". The Gram entry
/// `<a_p, a_q>` is what constraints are linear in.
pub type AtomId = usize;

/// Index of a scalar function value variable.
pub type FValueId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    mu: f64,
    l: f64,
}

impl ClassParams {
    /// Requires `0 < mu < l`.
    pub fn new(mu: f64, l: f64) -> Result<Self> {
        Self::check(mu, l, false)
    }

    /// Like [`ClassParams::new`] but also admits `mu == l`, where the class
    /// collapses to isotropic quadratics.
    pub fn new_allow_degenerate(mu: f64, l: f64) -> Result<Self> {
        Self::check(mu, l, true)
    }

    fn check(mu: f64, l: f64, allow_equal: bool) -> Result<Self> {
        if !(mu.is_finite() && l.is_finite() && mu > 0.0 && l > 0.0) {
            return invalid(format!("class constants must be positive and finite (mu={mu}, l={l})"));
        }
        if mu > l || (mu == l && !allow_equal) {
            return invalid(format!("need mu < l, got mu={mu}, l={l}"));
        }
        Ok(ClassParams { mu, l })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn is_degenerate(&self) -> bool {
        self.mu == self.l
    }

    /// Whether a symmetric Hessian spectrum lies in `[mu, l]` up to `tol`.
    pub fn admits_spectrum(&self, eigenvalues: &[f64], tol: f64) -> bool {
        eigenvalues
            .iter()
            .all(|&e| e >= self.mu - tol && e <= self.l + tol)
    }
}

/// Position of an interpolation point along a run: an iterate `k`, the local
/// minimiser of the agent's function, or the global minimiser.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PointTag {
    Iter(usize),
    LocalOpt,
    GlobalOpt,
}

impl fmt::Display for PointTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointTag::Iter(k) => write!(f, "{k}"),
            PointTag::LocalOpt => f.write_str("local_opt"),
            PointTag::GlobalOpt => f.write_str("global_opt"),
        }
    }
}

/// A triple `(x, g, f)` of one agent's function. `None` for `x` or `g` means
/// the zero vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabeledPoint {
    pub agent: usize,
    pub tag: PointTag,
    pub x: Option<AtomId>,
    pub g: Option<AtomId>,
    pub f: FValueId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Eq,
}

/// `coef * <a_p, a_q>` with `p <= q`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadTerm {
    pub p: AtomId,
    pub q: AtomId,
    pub coef: f64,
}

/// `sum quad + sum lin_f (<= | =) rhs`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticConstraint {
    pub quad: Vec<QuadTerm>,
    pub lin_f: Vec<(FValueId, f64)>,
    pub rhs: f64,
    pub sense: Sense,
}

impl QuadraticConstraint {
    /// Left-hand side minus right-hand side. Non-positive means satisfied
    /// for `Le`; zero for `Eq`.
    pub fn evaluate(&self, inner: impl Fn(AtomId, AtomId) -> f64, fval: impl Fn(FValueId) -> f64) -> f64 {
        let q: f64 = self.quad.iter().map(|t| t.coef * inner(t.p, t.q)).sum();
        let l: f64 = self.lin_f.iter().map(|&(j, c)| c * fval(j)).sum();
        q + l - self.rhs
    }

    /// Sum of absolute term magnitudes, used to normalise residuals.
    pub fn magnitude(&self, inner: impl Fn(AtomId, AtomId) -> f64, fval: impl Fn(FValueId) -> f64) -> f64 {
        let q: f64 = self.quad.iter().map(|t| (t.coef * inner(t.p, t.q)).abs()).sum();
        let l: f64 = self.lin_f.iter().map(|&(j, c)| (c * fval(j)).abs()).sum();
        q + l + self.rhs.abs()
    }

    pub fn is_trivial(&self) -> bool {
        self.quad.is_empty() && self.lin_f.is_empty() && self.rhs == 0.0
    }

    /// Atoms touched by the quadratic part, sorted.
    pub fn support(&self) -> Vec<AtomId> {
        let mut s: Vec<_> = self.quad.iter().flat_map(|t| [t.p, t.q]).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Accumulates quadratic and linear terms, merging duplicates.
#[derive(Default, Debug)]
pub struct ConstraintBuilder {
    quad: BTreeMap<(AtomId, AtomId), f64>,
    lin: BTreeMap<FValueId, f64>,
}

impl ConstraintBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `coef * <a_p, a_q>`; absent atoms stand for zero vectors.
    pub fn inner(&mut self, p: Option<AtomId>, q: Option<AtomId>, coef: f64) -> &mut Self {
        if let (Some(p), Some(q)) = (p, q) {
            *self.quad.entry((p.min(q), p.max(q))).or_insert(0.0) += coef;
        }
        self
    }

    pub fn fval(&mut self, j: FValueId, coef: f64) -> &mut Self {
        *self.lin.entry(j).or_insert(0.0) += coef;
        self
    }

    pub fn build(&self, sense: Sense, rhs: f64) -> QuadraticConstraint {
        QuadraticConstraint {
            quad: self
                .quad
                .iter()
                .filter(|(_, &c)| c != 0.0)
                .map(|(&(p, q), &coef)| QuadTerm { p, q, coef })
                .collect(),
            lin_f: self.lin.iter().filter(|(_, &c)| c != 0.0).map(|(&j, &c)| (j, c)).collect(),
            rhs,
            sense,
        }
    }
}

/// Interpolation inequality between two points of the same function:
///
/// ```text
/// f_a >= f_b + <g_b, x_a - x_b>
///        + 1/(2(1 - mu/L)) * ( |g_a - g_b|^2 / L + mu |x_a - x_b|^2
///                              - 2 mu/L <g_b - g_a, x_b - x_a> )
/// ```
///
/// Stored multiplied by `(1 - mu/L)` so that `mu == L` stays finite:
///
/// ```text
/// (1 - mu/L)(f_b - f_a + <g_b, x_a - x_b>) + 1/2 ( ... ) <= 0
/// ```
pub fn interp_constraint(a: &LabeledPoint, b: &LabeledPoint, c: &ClassParams) -> Result<QuadraticConstraint> {
    if a.agent != b.agent {
        return Err(Error::InvalidPair(format!(
            "points belong to agents {} and {}",
            a.agent, b.agent
        )));
    }
    let (mu, l) = (c.mu(), c.l());
    let w = 1.0 - mu / l;
    let mut cb = ConstraintBuilder::new();
    cb.fval(b.f, w).fval(a.f, -w);
    // <g_b, x_a - x_b>
    cb.inner(b.g, a.x, w).inner(b.g, b.x, -w);
    // |g_a - g_b|^2 / (2L)
    let cg = 0.5 / l;
    cb.inner(a.g, a.g, cg).inner(b.g, b.g, cg).inner(a.g, b.g, -2.0 * cg);
    // mu/2 |x_a - x_b|^2
    let cx = 0.5 * mu;
    cb.inner(a.x, a.x, cx).inner(b.x, b.x, cx).inner(a.x, b.x, -2.0 * cx);
    // -(mu/L) <g_a - g_b, x_a - x_b>
    let cm = -mu / l;
    cb.inner(a.g, a.x, cm)
        .inner(a.g, b.x, -cm)
        .inner(b.g, a.x, -cm)
        .inner(b.g, b.x, cm);
    Ok(cb.build(Sense::Le, 0.0))
}

/// All ordered-pair interpolation constraints for one agent's points.
pub fn interpolation_block(points: &[LabeledPoint], c: &ClassParams) -> Result<Vec<QuadraticConstraint>> {
    let mut seen = HashSet::new();
    for p in points {
        if !seen.insert(p.tag) {
            return Err(Error::InvalidInput(format!("duplicate point index {}", p.tag)));
        }
    }
    let mut out = Vec::with_capacity(points.len() * points.len().saturating_sub(1));
    for (i, a) in points.iter().enumerate() {
        for (j, b) in points.iter().enumerate() {
            if i != j {
                out.push(interp_constraint(a, b, c)?);
            }
        }
    }
    Ok(out)
}
