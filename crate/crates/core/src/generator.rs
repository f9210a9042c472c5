//! Seeded synthetic instances with prescribed spectra and known optima.

use std::fs::File;
use std::path::Path;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::function_class::ClassParams;
use crate::sim::{global_optimum, sq_dist, LocalObjective, ProblemInstance, ProblemKind};

/// Resampling budget for rejection-based generators.
pub const MAX_ATTEMPTS: usize = 100;

/// Tolerance on Hessian spectra of generated instances.
pub const SPECTRUM_TOL: f64 = 1e-8;

fn gaussian_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat<f64> {
    let mut m = Mat::zeros(r, c);
    for j in 0..c {
        for i in 0..r {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `d` eigenvalues in `[mu, l]` with both ends attained (for `d >= 2`) and
/// interior values log-uniform. A single eigenvalue is `l`.
fn log_uniform_spectrum(rng: &mut ChaCha8Rng, d: usize, c: &ClassParams) -> Vec<f64> {
    if d == 1 {
        return vec![c.l()];
    }
    let (lo, hi) = (c.mu().ln(), c.l().ln());
    let mut ev = Vec::with_capacity(d);
    ev.push(c.mu());
    for _ in 0..d - 2 {
        ev.push((lo + rng.random::<f64>() * (hi - lo)).exp());
    }
    ev.push(c.l());
    ev
}

fn orthogonal(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat<f64> {
    gaussian_mat(rng, r, c).qr().compute_thin_Q()
}

fn pairwise_distinct(points: &[Vec<f64>]) -> bool {
    points
        .iter()
        .enumerate()
        .all(|(i, a)| points[i + 1..].iter().all(|b| sq_dist(a, b) > 1e-20))
}

/// Least-squares agents `|X_i w - y_i|^2` with `R_* = 1`; see
/// [`gen_regression_radius`].
pub fn gen_regression(n_agents: usize, m: usize, d: usize, c: ClassParams, seed: u64) -> Result<ProblemInstance> {
    gen_regression_radius(n_agents, m, d, c, 1.0, seed)
}

/// Least-squares agents whose Hessians `2 X_i^T X_i` have spectrum exactly
/// spanning `[mu, L]`. `X_i = U_i S_i V_i^T` with orthonormal factors from QR
/// of Gaussian matrices. Local minimisers lie on the sphere of radius
/// `rstar` around a common random center, and `y_i = X_i w_i`.
pub fn gen_regression_radius(
    n_agents: usize,
    m: usize,
    d: usize,
    c: ClassParams,
    rstar: f64,
    seed: u64,
) -> Result<ProblemInstance> {
    if n_agents == 0 || d == 0 {
        return invalid("need at least one agent and one feature");
    }
    if m < d {
        return invalid(format!("need m >= d for full column rank, got m={m}, d={d}"));
    }
    if !(rstar.is_finite() && rstar > 0.0) {
        return invalid(format!("radius must be positive, got {rstar}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    for _ in 0..MAX_ATTEMPTS {
        let mut agents = Vec::with_capacity(n_agents);
        let mut optima = Vec::with_capacity(n_agents);
        for _ in 0..n_agents {
            let ev = log_uniform_spectrum(&mut rng, d, &c);
            let u = orthogonal(&mut rng, m, d);
            let v = orthogonal(&mut rng, d, d);
            let sigma: Vec<f64> = ev.iter().map(|l| (l / 2.0).sqrt()).collect();
            let us = Mat::from_fn(m, d, |i, j| u[(i, j)] * sigma[j]);
            let x = &us * v.transpose();
            let w: Vec<f64> = unit_vector(&mut rng, d)
                .into_iter()
                .zip(&center)
                .map(|(e, c0)| c0 + rstar * e)
                .collect();
            let y = (0..m).map(|i| (0..d).map(|j| x[(i, j)] * w[j]).sum()).collect();
            agents.push(LocalObjective::LeastSquares { x, y });
            optima.push(w);
        }
        if !pairwise_distinct(&optima) {
            continue;
        }
        let inst = ProblemInstance::new(ProblemKind::LeastSquares, c, agents)?;
        inst.validate(SPECTRUM_TOL)?;
        return Ok(inst);
    }
    Err(Error::GenerationFailed {
        attempts: MAX_ATTEMPTS,
        reason: "local optima were not pairwise distinct".into(),
    })
}

/// Two agents on the real line, `0.5 (x + 1)^2` and `0.1 (x - 1)^2`, in the
/// class with `mu = 0.2`, `L = 1`.
pub fn motivating_example() -> ProblemInstance {
    let quad = |a: f64, b: f64| LocalObjective::Quadratic {
        a: Mat::from_fn(1, 1, |_, _| a),
        b: vec![b],
    };
    let class = ClassParams::new(0.2, 1.0).expect("valid constants");
    ProblemInstance::new(ProblemKind::Quadratic, class, vec![quad(1.0, -1.0), quad(0.2, 1.0)])
        .expect("well-formed fixture")
}

/// Random quadratics `1/2 (x - b_i)^T A_i (x - b_i)` with `A_i` a random
/// orthogonal conjugation of a diagonal spanning `[mu, L]`. Centers are
/// rescaled so that the farthest one sits at distance `rstar` from the
/// global minimiser, which is then placed at distance `r0` from the
/// origin, so the default start `x^0 = 0` saturates the initial radius.
/// Both bounds are re-checked on the final instance.
pub fn gen_quadratic(n_agents: usize, d: usize, c: ClassParams, r0: f64, rstar: f64, seed: u64) -> Result<ProblemInstance> {
    if n_agents == 0 || d == 0 {
        return invalid("need at least one agent and dimension at least 1");
    }
    if !(r0.is_finite() && r0 > 0.0 && rstar.is_finite() && rstar > 0.0) {
        return invalid(format!("radii must be positive, got r0={r0}, rstar={rstar}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // keeps rounding from pushing a saturated bound over its limit
    let shrink = 1.0 - 1e-9;
    let mut last = String::new();
    for _ in 0..MAX_ATTEMPTS {
        let hessians: Vec<Mat<f64>> = (0..n_agents)
            .map(|_| {
                let ev = if d == 1 {
                    vec![c.mu() + rng.random::<f64>() * (c.l() - c.mu())]
                } else {
                    let mut ev = vec![c.mu(), c.l()];
                    ev.extend((0..d - 2).map(|_| c.mu() + rng.random::<f64>() * (c.l() - c.mu())));
                    ev
                };
                let q = orthogonal(&mut rng, d, d);
                let qd = Mat::from_fn(d, d, |i, j| q[(i, j)] * ev[j]);
                let a = &qd * q.transpose();
                Mat::from_fn(d, d, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]))
            })
            .collect();
        let raw: Vec<Vec<f64>> = (0..n_agents)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let build = |centers: Vec<Vec<f64>>| -> Result<ProblemInstance> {
            let agents = hessians
                .iter()
                .zip(centers)
                .map(|(a, b)| LocalObjective::Quadratic { a: a.clone(), b })
                .collect();
            ProblemInstance::new(ProblemKind::Quadratic, c, agents)
        };
        let xs = global_optimum(&build(raw.clone())?)?;
        let spread = raw.iter().map(|b| sq_dist(b, &xs).sqrt()).fold(0.0, f64::max);
        let offset: Vec<f64> = unit_vector(&mut rng, d).into_iter().map(|e| e * r0 * shrink).collect();
        let centers: Vec<Vec<f64>> = if spread > 0.0 {
            let s = rstar * shrink / spread;
            raw.iter()
                .map(|b| b.iter().zip(&xs).zip(&offset).map(|((bi, xi), o)| s * (bi - xi) + o).collect())
                .collect()
        } else {
            vec![offset.clone(); n_agents]
        };
        let inst = build(centers)?;
        if let Err(e) = inst.validate(SPECTRUM_TOL) {
            last = e.to_string();
            continue;
        }
        let xs = global_optimum(&inst)?;
        let far = inst
            .local_optima()?
            .iter()
            .map(|b| sq_dist(b, &xs).sqrt())
            .fold(0.0, f64::max);
        let start = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if far > rstar || start > r0 {
            last = format!("bounds violated after rescaling: {far} > {rstar} or {start} > {r0}");
            continue;
        }
        if n_agents > 1 && !pairwise_distinct(&inst.local_optima()?) {
            last = "local optima were not pairwise distinct".into();
            continue;
        }
        return Ok(inst);
    }
    Err(Error::GenerationFailed {
        attempts: MAX_ATTEMPTS,
        reason: last,
    })
}

/// Per-agent starting points at distance `r` from `center` in seeded random
/// directions.
pub fn random_starts(center: &[f64], n_agents: usize, r: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_agents)
        .map(|_| {
            unit_vector(&mut rng, center.len())
                .into_iter()
                .zip(center)
                .map(|(e, c)| c + r * e)
                .collect()
        })
        .collect()
}

/// Per-agent files of an instance bundle, relative to the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentFiles {
    /// `A_i` or `X_i`, one matrix row per line.
    pub matrix: String,
    /// `b_i` or `y_i`, one entry per line.
    pub vector: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub kind: ProblemKind,
    pub n_agents: usize,
    pub dim: usize,
    pub class: ClassParams,
    pub agents: Vec<AgentFiles>,
}

fn write_matrix(path: &Path, m: &Mat<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(csv_err)?;
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(File::open(path)?);
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = rec
            .iter()
            .map(|s| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: line + 1,
                    msg: format!("{}: {e}", path.display()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv: {e}"))
}

/// Writes `manifest.json` plus one matrix and one vector file per agent.
pub fn write_bundle(inst: &ProblemInstance, dir: &Path) -> Result<BundleManifest> {
    std::fs::create_dir_all(dir)?;
    let mut agents = Vec::with_capacity(inst.n_agents());
    for (i, a) in inst.agents.iter().enumerate() {
        let (mname, vname, m, v) = match a {
            LocalObjective::Quadratic { a, b } => (format!("agent_{i}_A.csv"), format!("agent_{i}_b.csv"), a, b),
            LocalObjective::LeastSquares { x, y } => (format!("agent_{i}_X.csv"), format!("agent_{i}_y.csv"), x, y),
        };
        write_matrix(&dir.join(&mname), m)?;
        write_matrix(&dir.join(&vname), &Mat::from_fn(v.len(), 1, |r, _| v[r]))?;
        agents.push(AgentFiles {
            matrix: mname,
            vector: vname,
        });
    }
    let manifest = BundleManifest {
        kind: inst.kind,
        n_agents: inst.n_agents(),
        dim: inst.dim,
        class: inst.class,
        agents,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::InvalidInput(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), text + "\n")?;
    Ok(manifest)
}

pub fn read_bundle(dir: &Path) -> Result<ProblemInstance> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: BundleManifest =
        serde_json::from_str(&text).map_err(|e| Error::InvalidInput(format!("manifest: {e}")))?;
    if manifest.agents.len() != manifest.n_agents {
        return invalid("manifest agent count does not match its file list");
    }
    let mut agents = Vec::with_capacity(manifest.n_agents);
    for f in &manifest.agents {
        let rows = read_rows(&dir.join(&f.matrix))?;
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidInput(format!("{}: ragged matrix", f.matrix)));
        }
        let m = Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]);
        let v: Vec<f64> = read_rows(&dir.join(&f.vector))?.into_iter().flatten().collect();
        agents.push(match manifest.kind {
            ProblemKind::Quadratic => LocalObjective::Quadratic { a: m, b: v },
            ProblemKind::LeastSquares => LocalObjective::LeastSquares { x: m, y: v },
        });
    }
    let inst = ProblemInstance::new(manifest.kind, manifest.class, agents)?;
    if inst.dim != manifest.dim {
        return invalid(format!("manifest says dimension {}, files have {}", manifest.dim, inst.dim));
    }
    Ok(inst)
}
