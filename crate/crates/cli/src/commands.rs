use anyhow::{Context, Result};
use rayon::prelude::*;
use serde_json::{json, Value};

use diging_pep::function_class::ClassParams;
use diging_pep::generator::{gen_quadratic, gen_regression, motivating_example, read_bundle};
use diging_pep::graph::{build_graph, metropolis_weights, MixingMatrix, TopologyKind};
use diging_pep::pep::ScheduleParams;
use diging_pep::sdp::{certify, solve_timed, SolutionRecord, SolverSettings, EIG_TOL, FEAS_TOL};
use diging_pep::sim::{error_curve, global_optimum, run_diging, write_curve_csv, ProblemInstance, RunMetadata};
use diging_pep::sweep::{
    certified_value, grid_search_alpha, lower_bound_sampler, pep_program, sampled_scenario, sweep_summary, sweep_tau,
    verify_upper_bound, write_sweep_csv, AlphaGrid, Outcome, PepSweep, Scenario, SweepResult, SAMPLER_DIM,
};
use diging_pep::Error;

use crate::config::{emit, merge, pretty, required, usage, Meta};
use crate::{
    ClassArgs, GraphArgs, GridArgs, NetArgs, PepArgs, PepSweepArgs, Preset, ProblemArgs, SimRunArgs, SimSweepArgs,
    SolverFailure, VerifyArgs,
};

#[derive(Clone, Copy, Debug)]
pub struct Opts {
    pub timing: bool,
}

const DEFAULT_N: usize = 4;
const DEFAULT_ROUNDS: usize = 3;
const DEFAULT_TRIALS: usize = 100;
const DEFAULT_TAUS: [usize; 4] = [1, 2, 3, 4];

/// Fills in network defaults and builds the mixing matrix.
fn network(a: &mut NetArgs, default_n: usize) -> Result<MixingMatrix> {
    let kind = *a.topology.get_or_insert(TopologyKind::AllToAll);
    let n = *a.n.get_or_insert(default_n);
    let p = *a.edge_prob.get_or_insert(0.5);
    let seed = *a.graph_seed.get_or_insert(0);
    let g = build_graph(kind, n, p, seed)?;
    Ok(metropolis_weights(&g)?)
}

fn class(a: &mut ClassArgs) -> Result<ClassParams> {
    let mu = *a.mu.get_or_insert(0.1);
    let l = *a.l.get_or_insert(1.0);
    a.r0.get_or_insert(1.0);
    a.rstar.get_or_insert(1.0);
    Ok(ClassParams::new(mu, l)?)
}

fn grid(a: &mut GridArgs) -> Result<AlphaGrid> {
    let d = AlphaGrid::default();
    let lo = *a.alpha_lo.get_or_insert(d.lo);
    let hi = *a.alpha_hi.get_or_insert(d.hi);
    let res = *a.resolution.get_or_insert(d.resolution);
    Ok(AlphaGrid::new(lo, hi, res)?)
}

fn schedule(n: usize, tau: usize, rounds: usize, alpha: f64, c: ClassParams, ca: &ClassArgs) -> Result<ScheduleParams> {
    Ok(ScheduleParams::with_radii(
        n,
        tau,
        rounds,
        alpha,
        c,
        ca.r0.unwrap_or(1.0),
        ca.rstar.unwrap_or(1.0),
    )?)
}

pub fn pep_solve(args: &PepArgs, opts: Opts) -> Result<()> {
    let mut a = merge(args, args.config.as_deref())?;
    let w = network(&mut a.net, DEFAULT_N)?;
    let c = class(&mut a.class)?;
    let tau = required(a.tau, "tau")?;
    let rounds = required(a.rounds, "rounds")?;
    let alpha = required(a.alpha, "alpha")?;
    let p = schedule(w.n(), tau, rounds, alpha, c, &a.class)?;
    let meta = Meta::new("pep solve", &a)?;

    let prog = pep_program(&w, &p, !a.full)?;
    let (sol, secs) = solve_timed(&prog, &SolverSettings::default())?;
    let cert = sol
        .status
        .is_solved()
        .then(|| certify(&sol, &prog, FEAS_TOL, EIG_TOL));
    let mut record = serde_json::to_value(SolutionRecord::new(meta.config.clone(), &sol, secs))?;
    if !opts.timing {
        record.as_object_mut().expect("record is an object").remove("wall_time");
    }
    let certification = match &cert {
        Some(Ok(r)) => json!({"passed": true, "report": r}),
        Some(Err(e)) => json!({"passed": false, "error": e.to_string()}),
        None => Value::Null,
    };
    let body = json!({
        "record": record,
        "iterations": sol.iterations,
        "certification": certification,
        "program": {
            "gram_dim": prog.dim,
            "constraints": prog.constraints.len(),
            "reduced": prog.dim != p.n_agents * (p.total_iters() + 4),
        },
    });
    emit(a.out.as_ref(), &pretty(&meta.wrap(body)))?;
    match cert {
        None => Err(SolverFailure(format!("solver finished with status {}: {}", sol.status, sol.diagnostics)).into()),
        Some(Err(e)) => Err(e.into()),
        Some(Ok(_)) => Ok(()),
    }
}

pub fn pep_export(args: &PepArgs) -> Result<()> {
    let mut a = merge(args, args.config.as_deref())?;
    let w = network(&mut a.net, DEFAULT_N)?;
    let c = class(&mut a.class)?;
    let tau = required(a.tau, "tau")?;
    let rounds = required(a.rounds, "rounds")?;
    let alpha = required(a.alpha, "alpha")?;
    let p = schedule(w.n(), tau, rounds, alpha, c, &a.class)?;
    let meta = Meta::new("pep export", &a)?;
    let prog = pep_program(&w, &p, !a.full)?;
    emit(a.out.as_ref(), &format!("{}{}", meta.csv_header(), prog.to_text()))
}

fn sweep_csv(meta: &Meta, results: &[SweepResult], timing: bool) -> Result<String> {
    let mut buf = meta.csv_header().into_bytes();
    write_sweep_csv(&mut buf, results, timing)?;
    Ok(String::from_utf8(buf)?)
}

fn summary_json(meta: &Meta, rounds: usize, results: &[SweepResult]) -> Value {
    let mode = results.first().map(|r| r.mode);
    meta.wrap(json!({
        "mode": mode,
        "T": rounds,
        "summary": sweep_summary(results),
    }))
}

pub fn pep_sweep(args: &PepSweepArgs, opts: Opts) -> Result<()> {
    let mut a = merge(args, args.config.as_deref())?;
    let w = network(&mut a.net, DEFAULT_N)?;
    let c = class(&mut a.class)?;
    let g = grid(&mut a.grid)?;
    let taus = a.taus.get_or_insert_with(|| DEFAULT_TAUS.to_vec()).clone();
    if taus.is_empty() {
        return usage("`taus` must not be empty");
    }
    let rounds = *a.rounds.get_or_insert(DEFAULT_ROUNDS);
    let meta = Meta::new("pep sweep", &a)?;

    let mut spec = PepSweep::new(w, c, g);
    spec.r0 = a.class.r0.unwrap_or(1.0);
    spec.rstar = a.class.rstar.unwrap_or(1.0);
    spec.use_symmetry = !a.full;
    let results = sweep_tau(&taus, rounds, &spec)?;

    emit(a.csv.as_ref(), &sweep_csv(&meta, &results, opts.timing)?)?;
    let summary = pretty(&summary_json(&meta, rounds, &results));
    match &a.summary {
        Some(_) => emit(a.summary.as_ref(), &summary)?,
        None => eprint!("{summary}"),
    }
    if results.iter().all(|r| !r.value_star.is_finite()) {
        return Err(SolverFailure("every grid point failed".into()).into());
    }
    Ok(())
}

/// Builds the instance for a simulation preset. The seed is mandatory for
/// random presets so that every run can be reproduced.
fn instance(p: &mut ProblemArgs, n: Option<usize>, c: ClassParams, ca: &ClassArgs) -> Result<ProblemInstance> {
    let preset = required(p.preset, "preset")?;
    let n = n.unwrap_or(DEFAULT_N);
    Ok(match preset {
        Preset::Motivating => motivating_example(),
        Preset::Regression => {
            let seed = required(p.seed, "seed")?;
            let m = *p.m.get_or_insert(50);
            let d = *p.d.get_or_insert(50);
            gen_regression(n, m, d, c, seed)?
        }
        Preset::Quadratic => {
            let seed = required(p.seed, "seed")?;
            let d = *p.d.get_or_insert(SAMPLER_DIM);
            gen_quadratic(n, d, c, ca.r0.unwrap_or(1.0), ca.rstar.unwrap_or(1.0), seed)?
        }
        Preset::Bundle => {
            let dir = required(p.bundle.clone(), "bundle")?;
            read_bundle(&dir).with_context(|| format!("reading bundle {}", dir.display()))?
        }
    })
}

/// Instance plus a mixing matrix of matching size.
fn sim_setup(net: &mut NetArgs, ca: &mut ClassArgs, pa: &mut ProblemArgs) -> Result<(ProblemInstance, MixingMatrix)> {
    let c = class(ca)?;
    let inst = instance(pa, net.n, c, ca)?;
    if let Some(n) = net.n {
        if n != inst.n_agents() {
            return usage(format!("--n {n} does not match the instance's {} agents", inst.n_agents()));
        }
    }
    let w = network(net, inst.n_agents())?;
    Ok((inst, w))
}

fn curve_csv(meta: &Meta, run: &RunMetadata, curve: &[(usize, f64)]) -> Result<String> {
    let mut buf = meta.csv_header().into_bytes();
    buf.extend(format!("# {}\n", serde_json::to_string(run)?).bytes());
    write_curve_csv(&mut buf, curve)?;
    Ok(String::from_utf8(buf)?)
}

fn simulate(
    inst: &ProblemInstance,
    w: &MixingMatrix,
    net: &NetArgs,
    seed: Option<u64>,
    tau: usize,
    rounds: usize,
    alpha: f64,
) -> Result<(RunMetadata, Vec<(usize, f64)>)> {
    let p = ScheduleParams::new(inst.n_agents(), tau, rounds, alpha, inst.class)?;
    let traj = run_diging(inst, w, &p, None)?;
    let xs = global_optimum(inst)?;
    let run = RunMetadata {
        topology: net.topology.unwrap_or(TopologyKind::AllToAll).to_string(),
        n: inst.n_agents(),
        tau,
        rounds,
        alpha,
        seed,
        kind: inst.kind,
        diverged: traj.diverged(),
    };
    Ok((run, error_curve(&traj, &xs)))
}

pub fn sim_run(args: &SimRunArgs) -> Result<()> {
    let mut a = merge(args, args.config.as_deref())?;
    let (inst, w) = sim_setup(&mut a.net, &mut a.class, &mut a.problem)?;
    let tau = required(a.tau, "tau")?;
    let rounds = required(a.rounds, "rounds")?;
    let alpha = required(a.alpha, "alpha")?;
    let meta = Meta::new("sim run", &a)?;
    let (run, curve) = simulate(&inst, &w, &a.net, a.problem.seed, tau, rounds, alpha)?;
    emit(a.out.as_ref(), &curve_csv(&meta, &run, &curve)?)
}

pub fn sim_sweep(args: &SimSweepArgs, opts: Opts) -> Result<()> {
    let mut a = merge(args, args.config.as_deref())?;
    let (inst, w) = sim_setup(&mut a.net, &mut a.class, &mut a.problem)?;
    let g = grid(&mut a.grid)?;
    let taus = a.taus.get_or_insert_with(|| DEFAULT_TAUS.to_vec()).clone();
    let rounds = required(a.rounds, "rounds")?;
    let out_dir = required(a.out_dir.clone(), "out_dir")?;
    let meta = Meta::new("sim sweep", &a)?;

    let scenario = Scenario::from(inst.clone());
    let mut results = Vec::with_capacity(taus.len());
    for &tau in &taus {
        let eval = |alpha: f64| -> diging_pep::Result<Outcome> {
            let p = ScheduleParams::new(inst.n_agents(), tau, rounds, alpha, inst.class)?;
            let e = scenario.final_error(&w, &p)?;
            let status = if e.is_finite() { "ok" } else { "diverged" };
            Ok(Outcome {
                value: e,
                status: status.into(),
            })
        };
        let mut r = grid_search_alpha(eval, &g)?;
        r.tau = tau;
        r.rounds = rounds;
        results.push(r);
    }

    let path = |name: String| Some(out_dir.join(name));
    emit(path("sweep.csv".into()).as_ref(), &sweep_csv(&meta, &results, opts.timing)?)?;
    emit(path("summary.json".into()).as_ref(), &pretty(&summary_json(&meta, rounds, &results)))?;
    for r in &results {
        let (run, curve) = simulate(&inst, &w, &a.net, a.problem.seed, r.tau, rounds, r.alpha_star)?;
        emit(path(format!("curve_tau{}.csv", r.tau)).as_ref(), &curve_csv(&meta, &run, &curve)?)?;
    }
    Ok(())
}

pub fn verify(args: &VerifyArgs) -> Result<()> {
    let mut a = merge(args, args.config.as_deref())?;
    let w = network(&mut a.net, DEFAULT_N)?;
    let c = class(&mut a.class)?;
    let tau = required(a.tau, "tau")?;
    let rounds = required(a.rounds, "rounds")?;
    let alpha = required(a.alpha, "alpha")?;
    let trials = *a.trials.get_or_insert(DEFAULT_TRIALS);
    let seed = *a.seed.get_or_insert(0);
    let dim = *a.dim.get_or_insert(SAMPLER_DIM);
    let p = schedule(w.n(), tau, rounds, alpha, c, &a.class)?;
    let meta = Meta::new("verify", &a)?;

    let certificate = match a.certificate {
        Some(v) => v,
        None => certified_value(&w, &p, &SolverSettings::default(), !a.full)?.value,
    };
    let scenarios: Vec<Scenario> = (0..trials)
        .into_par_iter()
        .map(|t| sampled_scenario(&p, dim, seed, t))
        .collect::<diging_pep::Result<_>>()?;
    let outcome = verify_upper_bound(certificate, &scenarios, &w, &p);
    let (report, violation) = match outcome {
        Ok(r) => (Some(r), None),
        Err(e @ Error::BoundViolated { .. }) => (None, Some(e)),
        Err(e) => return Err(e.into()),
    };
    let lower = if trials > 0 && violation.is_none() {
        Some(lower_bound_sampler(&w, &p, trials, seed, dim)?)
    } else {
        None
    };
    let body = json!({
        "certificate": certificate,
        "passed": violation.is_none(),
        "report": report,
        "violation": violation.as_ref().map(|e| e.to_string()),
        "lower_bound": lower,
        "gap": lower.map(|l| certificate - l.best),
    });
    emit(a.out.as_ref(), &pretty(&meta.wrap(body)))?;
    match violation {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

pub fn graph(args: &GraphArgs) -> Result<()> {
    let mut a = merge(args, args.config.as_deref())?;
    let w = network(&mut a.net, DEFAULT_N)?;
    let kind = a.net.topology.unwrap_or(TopologyKind::AllToAll);
    let g = build_graph(kind, w.n(), a.net.edge_prob.unwrap_or(0.5), a.net.graph_seed.unwrap_or(0))?;
    let meta = Meta::new("graph", &a)?;
    let body = json!({
        "n": g.n_nodes(),
        "edges": g.edges(),
        "weights": w.rows(),
        "second_singular_value": w.second_singular_value(),
    });
    emit(a.out.as_ref(), &pretty(&meta.wrap(body)))
}
