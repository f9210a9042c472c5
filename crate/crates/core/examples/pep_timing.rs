//! Solves one worst-case program and prints value, status and timing.
//!
//! `cargo run --release --example pep_timing -- <tau> <rounds> <alpha> [ring|all_to_all] [full|sym]`

use std::time::Instant;

use diging_pep::function_class::ClassParams;
use diging_pep::graph::{build_graph, metropolis_weights, TopologyKind};
use diging_pep::pep::{assemble_pep, assemble_symmetric_pep, ScheduleParams};
use diging_pep::sdp::{certify, solve, SolverSettings, EIG_TOL, FEAS_TOL};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let tau: usize = args.first().map_or(1, |s| s.parse().unwrap());
    let rounds: usize = args.get(1).map_or(3, |s| s.parse().unwrap());
    let alpha: f64 = args.get(2).map_or(0.3, |s| s.parse().unwrap());
    let kind: TopologyKind = args.get(3).map_or(TopologyKind::AllToAll, |s| s.parse().unwrap());
    let w = metropolis_weights(&build_graph(kind, 4, 0.6, 0).unwrap()).unwrap();
    let class = ClassParams::new(0.1, 1.0).unwrap();
    let p = ScheduleParams::new(4, tau, rounds, alpha, class).unwrap();
    let t0 = Instant::now();
    let prog = if args.get(4).map(String::as_str) == Some("sym") {
        assemble_symmetric_pep(&w, &p).unwrap()
    } else {
        assemble_pep(&w, &p).unwrap().program
    };
    let sol = solve(&prog, &SolverSettings::default()).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let cert = certify(&sol, &prog, FEAS_TOL, EIG_TOL);
    println!(
        "tau={tau} T={rounds} alpha={alpha} value={:.10} dual={:.10} status={} iters={} time={dt:.2}s res={:?} cert={:?} {}",
        sol.value, sol.dual_value, sol.status, sol.iterations, sol.residuals, cert.map(|c| c.max_violation), sol.diagnostics
    );
}
