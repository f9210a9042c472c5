//! Step-size grid search, sweeps over the number of local updates and
//! empirical checks of certified bounds.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::function_class::ClassParams;
use crate::generator::{gen_quadratic, random_starts};
use crate::graph::MixingMatrix;
use crate::pep::{assemble_pep, assemble_symmetric_pep, is_circulant, ScheduleParams};
use crate::sdp::{certify, solve, GramProgram, SdpSolution, SolverSettings, EIG_TOL, FEAS_TOL};
use crate::sim::{global_optimum, iterate_error, run_diging, sq_dist, ProblemInstance};

/// Evenly spaced step sizes `lo, lo + res, ..., hi`.
///
/// When `1 / res` is an integer the points are formed as `k / (1 / res)`,
/// so a grid with resolution 0.01 contains exactly the doubles nearest to
/// 0.01, 0.02, ... rather than accumulated sums.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaGrid {
    pub lo: f64,
    pub hi: f64,
    pub resolution: f64,
}

impl AlphaGrid {
    pub fn new(lo: f64, hi: f64, resolution: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && resolution.is_finite()) || lo >= hi || resolution <= 0.0 {
            return invalid(format!("need lo < hi and a positive resolution, got [{lo}, {hi}] step {resolution}"));
        }
        if lo <= 0.0 {
            return invalid(format!("step sizes must be positive, got lo={lo}"));
        }
        Ok(AlphaGrid { lo, hi, resolution })
    }

    pub fn points(&self) -> Vec<f64> {
        let inv = 1.0 / self.resolution;
        let slack = 1e-9;
        if (inv - inv.round()).abs() <= 1e-9 * inv {
            let inv = inv.round();
            let first = (self.lo * inv - slack).ceil() as i64;
            let last = (self.hi * inv + slack).floor() as i64;
            (first..=last).map(|k| k as f64 / inv).collect()
        } else {
            let count = ((self.hi - self.lo) / self.resolution + slack).floor() as usize;
            (0..=count).map(|i| self.lo + i as f64 * self.resolution).collect()
        }
    }
}

impl Default for AlphaGrid {
    fn default() -> Self {
        AlphaGrid {
            lo: 0.01,
            hi: 0.8,
            resolution: 0.01,
        }
    }
}

/// Result of evaluating one grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub value: f64,
    pub status: String,
}

impl From<f64> for Outcome {
    fn from(value: f64) -> Self {
        Outcome {
            value,
            status: "ok".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Certified,
    Empirical,
}

/// Values of an error measure over a step-size grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub tau: usize,
    pub rounds: usize,
    pub alphas: Vec<f64>,
    /// `+inf` where the evaluator failed.
    pub values: Vec<f64>,
    pub statuses: Vec<String>,
    pub wall_times: Vec<f64>,
    pub alpha_star: f64,
    pub value_star: f64,
    pub mode: SweepMode,
}

impl SweepResult {
    /// Indices of strict local minima of the finite part of the curve, with
    /// differences below `noise` treated as flat.
    pub fn local_minima(&self, noise: f64) -> Vec<usize> {
        let v = &self.values;
        let n = v.len();
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            // plateau [i, j] of values within noise of v[i]
            let mut j = i;
            while j + 1 < n && (v[j + 1] - v[i]).abs() <= noise {
                j += 1;
            }
            let left = i == 0 || v[i - 1] > v[i] + noise;
            let right = j + 1 == n || v[j + 1] > v[j] + noise;
            if v[i].is_finite() && left && right {
                out.push(i);
            }
            i = j + 1;
        }
        out
    }
}

/// Evaluates every grid point (in parallel), keeping results in grid order.
/// Failed points count as `+inf`; ties go to the smaller step.
pub fn grid_search_alpha<F, O>(evaluator: F, grid: &AlphaGrid) -> Result<SweepResult>
where
    F: Fn(f64) -> Result<O> + Sync,
    O: Into<Outcome>,
{
    let alphas = grid.points();
    if alphas.is_empty() {
        return invalid("step-size grid is empty");
    }
    let evals: Vec<(Outcome, f64)> = alphas
        .par_iter()
        .map(|&a| {
            let t0 = Instant::now();
            let out = match evaluator(a) {
                Ok(o) => {
                    let o = o.into();
                    if o.value.is_nan() {
                        Outcome {
                            value: f64::INFINITY,
                            status: o.status,
                        }
                    } else {
                        o
                    }
                }
                Err(e) => Outcome {
                    value: f64::INFINITY,
                    status: format!("error: {e}"),
                },
            };
            (out, t0.elapsed().as_secs_f64())
        })
        .collect();
    let values: Vec<f64> = evals.iter().map(|(o, _)| o.value).collect();
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    Ok(SweepResult {
        tau: 0,
        rounds: 0,
        alpha_star: alphas[best],
        value_star: values[best],
        alphas,
        values,
        statuses: evals.iter().map(|(o, _)| o.status.clone()).collect(),
        wall_times: evals.iter().map(|(_, t)| *t).collect(),
        mode: SweepMode::Empirical,
    })
}

/// Worst-case program for `p` under `w`, reduced by agent symmetry when `w`
/// allows it and `use_symmetry` is set.
pub fn pep_program(w: &MixingMatrix, p: &ScheduleParams, use_symmetry: bool) -> Result<GramProgram> {
    if use_symmetry && is_circulant(w) {
        assemble_symmetric_pep(w, p)
    } else {
        Ok(assemble_pep(w, p)?.program)
    }
}

/// Solves and certifies the worst-case program.
pub fn certified_value(
    w: &MixingMatrix,
    p: &ScheduleParams,
    settings: &SolverSettings,
    use_symmetry: bool,
) -> Result<SdpSolution> {
    let prog = pep_program(w, p, use_symmetry)?;
    let sol = solve(&prog, settings)?;
    if !sol.status.is_solved() {
        return Err(Error::Solver(format!("{}: {}", sol.status, sol.diagnostics)));
    }
    certify(&sol, &prog, FEAS_TOL, EIG_TOL)?;
    Ok(sol)
}

/// Fixed ingredients of a certified sweep.
#[derive(Clone, Debug)]
pub struct PepSweep {
    pub w: MixingMatrix,
    pub class: ClassParams,
    pub r0: f64,
    pub rstar: f64,
    pub grid: AlphaGrid,
    pub settings: SolverSettings,
    pub use_symmetry: bool,
}

impl PepSweep {
    pub fn new(w: MixingMatrix, class: ClassParams, grid: AlphaGrid) -> Self {
        PepSweep {
            w,
            class,
            r0: 1.0,
            rstar: 1.0,
            grid,
            settings: SolverSettings::default(),
            use_symmetry: true,
        }
    }

    fn schedule(&self, tau: usize, rounds: usize, alpha: f64) -> Result<ScheduleParams> {
        ScheduleParams::with_radii(self.w.n(), tau, rounds, alpha, self.class, self.r0, self.rstar)
    }

    /// Certified worst case at one step size.
    pub fn evaluate(&self, tau: usize, rounds: usize, alpha: f64) -> Result<Outcome> {
        let p = self.schedule(tau, rounds, alpha)?;
        let sol = certified_value(&self.w, &p, &self.settings, self.use_symmetry)?;
        Ok(Outcome {
            value: sol.value,
            status: sol.status.to_string(),
        })
    }

    /// Certified grid search at one `(tau, rounds)`.
    pub fn search(&self, tau: usize, rounds: usize) -> Result<SweepResult> {
        self.schedule(tau, rounds, self.grid.lo)?;
        let mut r = grid_search_alpha(|a| self.evaluate(tau, rounds, a), &self.grid)?;
        r.tau = tau;
        r.rounds = rounds;
        r.mode = SweepMode::Certified;
        Ok(r)
    }
}

/// One certified grid search per `tau`, all with the same number of
/// communication rounds. Grid points of all `tau` run concurrently.
pub fn sweep_tau(taus: &[usize], rounds: usize, spec: &PepSweep) -> Result<Vec<SweepResult>> {
    for &tau in taus {
        spec.schedule(tau, rounds, spec.grid.lo)?;
    }
    let alphas = spec.grid.points();
    if alphas.is_empty() {
        return invalid("step-size grid is empty");
    }
    let jobs: Vec<(usize, f64)> = taus.iter().flat_map(|&t| alphas.iter().map(move |&a| (t, a))).collect();
    let evals: Vec<(Outcome, f64)> = jobs
        .par_iter()
        .map(|&(tau, a)| {
            let t0 = Instant::now();
            let out = spec.evaluate(tau, rounds, a).unwrap_or_else(|e| Outcome {
                value: f64::INFINITY,
                status: format!("error: {e}"),
            });
            (out, t0.elapsed().as_secs_f64())
        })
        .collect();
    Ok(taus
        .iter()
        .zip(evals.chunks(alphas.len()))
        .map(|(&tau, chunk)| {
            let values: Vec<f64> = chunk.iter().map(|(o, _)| o.value).collect();
            let mut best = 0;
            for (i, v) in values.iter().enumerate() {
                if *v < values[best] {
                    best = i;
                }
            }
            SweepResult {
                tau,
                rounds,
                alphas: alphas.clone(),
                alpha_star: alphas[best],
                value_star: values[best],
                values,
                statuses: chunk.iter().map(|(o, _)| o.status.clone()).collect(),
                wall_times: chunk.iter().map(|(_, t)| *t).collect(),
                mode: SweepMode::Certified,
            }
        })
        .collect())
}

/// Writes `tau,T,alpha,value,status,wall_time` rows. Without timing the
/// output depends only on the inputs.
pub fn write_sweep_csv<W: Write>(out: W, results: &[SweepResult], with_timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
    let mut header = vec!["tau", "T", "alpha", "value", "status"];
    if with_timing {
        header.push("wall_time");
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in results {
        for i in 0..r.alphas.len() {
            let mut row = vec![
                r.tau.to_string(),
                r.rounds.to_string(),
                format!("{:?}", r.alphas[i]),
                format!("{:?}", r.values[i]),
                r.statuses[i].clone(),
            ];
            if with_timing {
                row.push(format!("{:.6}", r.wall_times[i]));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub alpha_star: f64,
    /// `None` when every grid point failed.
    pub value_star: Option<f64>,
}

/// `tau -> (alpha_star, value_star)`, keyed by `tau` as a string.
pub fn sweep_summary(results: &[SweepResult]) -> BTreeMap<String, SummaryEntry> {
    results
        .iter()
        .map(|r| {
            (
                format!("{}", r.tau),
                SummaryEntry {
                    alpha_star: r.alpha_star,
                    value_star: r.value_star.is_finite().then_some(r.value_star),
                },
            )
        })
        .collect()
}

/// A concrete instance with optional per-agent starting points (the origin
/// otherwise).
#[derive(Clone, Debug)]
pub struct Scenario {
    pub instance: ProblemInstance,
    pub x0: Option<Vec<Vec<f64>>>,
}

impl From<ProblemInstance> for Scenario {
    fn from(instance: ProblemInstance) -> Self {
        Scenario { instance, x0: None }
    }
}

impl Scenario {
    /// Final error `(1/N) sum_i |x_i^K - x*|^2` of a run, `+inf` on
    /// divergence.
    pub fn final_error(&self, w: &MixingMatrix, p: &ScheduleParams) -> Result<f64> {
        let traj = run_diging(&self.instance, w, p, self.x0.as_deref())?;
        if traj.diverged() {
            return Ok(f64::INFINITY);
        }
        let xs = global_optimum(&self.instance)?;
        Ok(iterate_error(&traj, traj.last_iter(), &xs))
    }

    /// Checks the assumptions of the worst-case program: class membership
    /// and both radius bounds, with relative slack `tol`.
    pub fn check_assumptions(&self, p: &ScheduleParams, tol: f64) -> Result<()> {
        let inst = &self.instance;
        if inst.n_agents() != p.n_agents {
            return invalid(format!("instance has {} agents, schedule {}", inst.n_agents(), p.n_agents));
        }
        let (mu, l) = (p.class.mu(), p.class.l());
        for (lo, hi) in inst.spectra()? {
            if lo < mu - tol * mu || hi > l + tol * l {
                return Err(Error::InvalidInstance(format!("spectrum [{lo}, {hi}] outside [{mu}, {l}]")));
            }
        }
        let xs = global_optimum(inst)?;
        let origin = vec![vec![0.0; inst.dim]; inst.n_agents()];
        let starts = self.x0.as_ref().unwrap_or(&origin);
        for (i, x) in starts.iter().enumerate() {
            let r = sq_dist(x, &xs).sqrt();
            if r > p.r0 * (1.0 + tol) {
                return Err(Error::InvalidInstance(format!("agent {i} starts at distance {r} > {}", p.r0)));
            }
        }
        for (i, b) in inst.local_optima()?.iter().enumerate() {
            let r = sq_dist(b, &xs).sqrt();
            if r > p.rstar * (1.0 + tol) {
                return Err(Error::InvalidInstance(format!("agent {i} optimum at distance {r} > {}", p.rstar)));
            }
        }
        Ok(())
    }
}

/// Relative slack on the instance assumptions accepted by the harness.
pub const ASSUMPTION_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub certificate: f64,
    pub n_instances: usize,
    /// Largest simulated error over the certificate; 0 with no instances.
    pub max_ratio: f64,
    pub max_error: f64,
    /// Index of the instance attaining `max_ratio`.
    pub tightest: Option<usize>,
}

/// Simulates every scenario and checks
/// `error <= certificate * (1 + 1e-6) + 1e-8`.
pub fn verify_upper_bound(
    certificate: f64,
    scenarios: &[Scenario],
    w: &MixingMatrix,
    p: &ScheduleParams,
) -> Result<BoundReport> {
    for s in scenarios {
        s.check_assumptions(p, ASSUMPTION_TOL)?;
    }
    let errors: Vec<f64> = scenarios
        .par_iter()
        .map(|s| s.final_error(w, p))
        .collect::<Result<_>>()?;
    let mut report = BoundReport {
        certificate,
        n_instances: scenarios.len(),
        max_ratio: 0.0,
        max_error: 0.0,
        tightest: None,
    };
    for (i, &e) in errors.iter().enumerate() {
        if !(e <= certificate * (1.0 + 1e-6) + 1e-8) {
            return Err(Error::BoundViolated {
                instance: i,
                simulated: e,
                certificate,
            });
        }
        let ratio = if certificate > 0.0 { e / certificate } else { 0.0 };
        if report.tightest.is_none() || ratio > report.max_ratio {
            report.max_ratio = ratio;
            report.tightest = Some(i);
        }
        report.max_error = report.max_error.max(e);
    }
    Ok(report)
}

/// Default dimension of sampled instances.
pub const SAMPLER_DIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerReport {
    pub best: f64,
    pub best_trial: usize,
    pub trials: usize,
}

/// `i`-th random feasible quadratic scenario of the sampler. Even trials
/// start every agent on the sphere of radius `r0` around the minimiser,
/// odd ones start all agents at the origin.
pub fn sampled_scenario(p: &ScheduleParams, dim: usize, seed: u64, trial: usize) -> Result<Scenario> {
    let s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(trial as u64);
    let instance = gen_quadratic(p.n_agents, dim, p.class, p.r0, p.rstar, s)?;
    let x0 = if trial % 2 == 0 {
        let xs = global_optimum(&instance)?;
        Some(random_starts(&xs, p.n_agents, p.r0, s ^ 0x5A5A_5A5A))
    } else {
        None
    };
    Ok(Scenario { instance, x0 })
}

/// Largest simulated final error over `trials` random feasible quadratic
/// instances: a lower bound on the exact worst case.
pub fn lower_bound_sampler(w: &MixingMatrix, p: &ScheduleParams, trials: usize, seed: u64, dim: usize) -> Result<SamplerReport> {
    if trials == 0 {
        return invalid("need at least one trial");
    }
    p.validate()?;
    let errors: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| sampled_scenario(p, dim, seed, t)?.final_error(w, p))
        .collect::<Result<_>>()?;
    let mut best = 0;
    for (i, e) in errors.iter().enumerate() {
        if *e > errors[best] {
            best = i;
        }
    }
    Ok(SamplerReport {
        best: errors[best],
        best_trial: best,
        trials,
    })
}

/// Positions where the certified value at `rounds[i + 1]` exceeds the one at
/// `rounds[i]` by more than `tol` (relative). The worst case need not be
/// monotone in the budget, so these are flags, not errors.
pub fn budget_flags(values: &[(usize, f64)], tol: f64) -> Vec<usize> {
    values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].0 > w[0].0 && w[1].1 > w[0].1 * (1.0 + tol))
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, metropolis_weights, TopologyKind};

    fn class() -> ClassParams {
        ClassParams::new(0.1, 1.0).unwrap()
    }

    fn w(kind: TopologyKind, n: usize) -> MixingMatrix {
        metropolis_weights(&build_graph(kind, n, 0.6, 0).unwrap()).unwrap()
    }

    #[test]
    fn grid_points() {
        let g = AlphaGrid::default().points();
        assert_eq!(g.len(), 80);
        assert_eq!(g[6], 0.07);
        assert_eq!(g[79], 0.8);
        let g = AlphaGrid::new(0.1, 0.2, 0.03).unwrap().points();
        assert_eq!(g.len(), 4);
        assert!(AlphaGrid::new(0.5, 0.1, 0.01).is_err());
        assert!(AlphaGrid::new(0.1, 0.5, 0.0).is_err());
    }

    #[test]
    fn quadratic_evaluator_minimum() {
        let r = grid_search_alpha(|a| Ok::<_, Error>((a - 0.3) * (a - 0.3)), &AlphaGrid::default()).unwrap();
        assert_eq!(r.alpha_star, 0.3);
        assert_eq!(r.local_minima(0.0), vec![29]);
    }

    #[test]
    fn constant_evaluator_takes_smallest_step() {
        let r = grid_search_alpha(|_| Ok::<_, Error>(1.0), &AlphaGrid::default()).unwrap();
        assert_eq!(r.alpha_star, 0.01);
    }

    #[test]
    fn failures_become_infinite() {
        let r = grid_search_alpha(
            |a| if a < 0.5 { Err(Error::Solver("boom".into())) } else { Ok(a) },
            &AlphaGrid::default(),
        )
        .unwrap();
        assert_eq!(r.values[0], f64::INFINITY);
        assert!(r.statuses[0].contains("boom"));
        assert_eq!(r.alpha_star, 0.5);
    }

    #[test]
    fn local_minima_with_plateaus() {
        let mut r = grid_search_alpha(|a| Ok::<_, Error>(a), &AlphaGrid::new(0.1, 0.5, 0.1).unwrap()).unwrap();
        r.values = vec![3.0, 1.0, 1.0 + 1e-9, 2.0, 0.5];
        assert_eq!(r.local_minima(1e-6), vec![1, 4]);
        r.values = vec![3.0, 2.0, 1.0, 1.0, 4.0];
        assert_eq!(r.local_minima(0.0), vec![2]);
    }

    #[test]
    fn empty_instance_list_passes() {
        let p = ScheduleParams::new(2, 1, 1, 0.1, class()).unwrap();
        let r = verify_upper_bound(1.0, &[], &w(TopologyKind::AllToAll, 2), &p).unwrap();
        assert_eq!(r.max_ratio, 0.0);
        assert_eq!(r.tightest, None);
    }

    #[test]
    fn zero_rounds_sampler_hits_initial_radius() {
        let p = ScheduleParams::with_radii(2, 1, 0, 0.1, class(), 2.0, 1.0).unwrap();
        let r = lower_bound_sampler(&w(TopologyKind::AllToAll, 2), &p, 4, 1, 3).unwrap();
        assert!((r.best - 4.0).abs() < 1e-9, "{}", r.best);
    }

    #[test]
    fn sampler_below_certificate_small_case() {
        let wm = w(TopologyKind::AllToAll, 2);
        let p = ScheduleParams::new(2, 1, 2, 0.5, class()).unwrap();
        let cert = certified_value(&wm, &p, &SolverSettings::default(), true).unwrap().value;
        let lb = lower_bound_sampler(&wm, &p, 64, 3, SAMPLER_DIM).unwrap();
        assert!(lb.best <= cert * (1.0 + 1e-6) + 1e-8, "{} > {cert}", lb.best);
        let scenarios: Vec<Scenario> = (0..16).map(|t| sampled_scenario(&p, 4, 9, t).unwrap()).collect();
        let rep = verify_upper_bound(cert, &scenarios, &wm, &p).unwrap();
        assert!(rep.max_ratio <= 1.0 + 1e-6 && rep.tightest.is_some());
    }

    #[test]
    fn violation_is_reported() {
        let wm = w(TopologyKind::AllToAll, 2);
        let p = ScheduleParams::new(2, 1, 1, 0.1, class()).unwrap();
        let s = sampled_scenario(&p, 3, 0, 0).unwrap();
        let err = verify_upper_bound(1e-6, &[s], &wm, &p).unwrap_err();
        assert!(matches!(err, Error::BoundViolated { instance: 0, .. }));
    }

    #[test]
    fn infeasible_start_rejected() {
        let wm = w(TopologyKind::AllToAll, 2);
        let p = ScheduleParams::new(2, 1, 1, 0.1, class()).unwrap();
        let mut s = sampled_scenario(&p, 3, 0, 0).unwrap();
        s.x0 = Some(vec![vec![10.0; 3]; 2]);
        assert!(matches!(verify_upper_bound(1.0, &[s], &wm, &p), Err(Error::InvalidInstance(_))));
    }

    #[test]
    fn sweep_exports_are_deterministic() {
        let spec = PepSweep::new(w(TopologyKind::AllToAll, 2), class(), AlphaGrid::new(0.2, 0.6, 0.2).unwrap());
        let run = || {
            let r = sweep_tau(&[1, 2], 1, &spec).unwrap();
            let mut buf = Vec::new();
            write_sweep_csv(&mut buf, &r, false).unwrap();
            (String::from_utf8(buf).unwrap(), serde_json::to_string(&sweep_summary(&r)).unwrap())
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert!(a.starts_with("tau,T,alpha,value,status\n1,1,0.2,"));
        assert_eq!(a.lines().count(), 7);
    }

    #[test]
    fn budget_flags_detect_increase() {
        assert_eq!(budget_flags(&[(3, 1.0), (4, 0.9), (5, 0.95)], 0.01), vec![1]);
        assert!(budget_flags(&[(3, 1.0), (4, 0.9)], 0.0).is_empty());
    }
}
