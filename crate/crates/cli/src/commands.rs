//! One function per task: run it, write its artifacts, judge its invariants.

use crate::error::CliError;
use crate::output::{load_verified, num, read, sha256_hex, unix_now, write_atomic, Csv, Invariant, RunDir, RunManifest};
use crate::scenario::{Grid, Scenario, Task};
use kl_core::chain::{evolve_map, ChainConfig};
use kl_core::geometry::SlitVector;
use kl_core::kernel::oracle::{oracle_kernel_fd, LatticeConfig};
use kl_core::kernel::{solve_kernel, KernelConfig, KernelError, KernelSolution};
use kl_core::skle::{path_seed, sample_path, summarize, McSummary, PathRecord, SklePath};
use kl_core::slit_ode::{evolve_slits, explosion_report, Status, Trajectory};
use kl_core::transform::{evolve_iota, DrivenTrajectory, DrivingPath};
use kl_core::{exec, skle};
use num_complex::Complex64;
use serde::Serialize;
use std::path::{Path, PathBuf};

pub const CACHE_ENV: &str = "KL_CACHE_DIR";

/// Where a run writes: a directory, plus an optional file name for the main
/// table when `--out` names a `.csv` file.
#[derive(Debug, Clone)]
pub struct Target {
    pub dir: PathBuf,
    pub main: Option<String>,
}

impl Target {
    pub fn resolve(out: Option<&Path>, sc: &Scenario) -> Self {
        let path = out
            .map(Path::to_path_buf)
            .or_else(|| sc.output.clone())
            .unwrap_or_else(|| PathBuf::from("kl-out").join(&sc.name));
        if path.extension().is_some_and(|e| e == "csv") {
            let dir = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
            let main = path.file_name().map(|n| n.to_string_lossy().into_owned());
            Target { dir, main }
        } else {
            Target { dir: path, main: None }
        }
    }

    fn main_or(&self, default: &str) -> String {
        self.main.clone().unwrap_or_else(|| default.to_string())
    }
}

pub fn execute(sc: &Scenario, target: &Target) -> Result<RunManifest, CliError> {
    sc.validate()?;
    let started = unix_now();
    let mut dir = RunDir::new(target.dir.clone());
    log::info!("running `{}` ({:?}) into {}", sc.name, sc.task, target.dir.display());
    let invariants = match sc.task {
        Task::Kernel => kernel(sc, target, &mut dir)?,
        Task::Evolve => evolve(sc, target, &mut dir)?,
        Task::Map => map(sc, target, &mut dir)?,
        Task::Skle => stochastic(sc, target, &mut dir, true)?,
        Task::Mc => stochastic(sc, target, &mut dir, false)?,
        Task::Transform => transform(sc, target, &mut dir)?,
    };
    for inv in invariants.iter().filter(|i| !i.passed) {
        log::warn!("invariant `{}` failed: {}", inv.name, inv.detail);
    }
    dir.finish(sc, started, invariants)
}

/// Kernel solve with an optional on-disk cache under `KL_CACHE_DIR`.
pub fn cached_kernel(s: &SlitVector, xi: f64, cfg: &KernelConfig) -> Result<KernelSolution, CliError> {
    let Some(root) = std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()) else {
        return Ok(solve_kernel(s, xi, cfg)?);
    };
    let key = sha256_hex(&serde_json::to_vec(&(s, xi.to_bits(), cfg))?);
    let path = PathBuf::from(root).join(format!("kernel-{key}.json"));
    if let Ok(bytes) = std::fs::read(&path) {
        match serde_json::from_slice::<KernelSolution>(&bytes) {
            Ok(sol) if sol.slits() == s && sol.xi().to_bits() == xi.to_bits() => {
                log::info!("kernel cache hit {}", path.display());
                return Ok(sol);
            }
            _ => log::warn!("ignoring unreadable cache entry {}", path.display()),
        }
    }
    let sol = solve_kernel(s, xi, cfg)?;
    write_atomic(&path, &serde_json::to_vec(&sol)?)?;
    Ok(sol)
}

fn default_grid(s: &SlitVector, xi: f64) -> Grid {
    let w = 3.0f64.max(1.5 * s.extent()).max(xi.abs() + 3.0);
    Grid {
        nx: 61,
        ny: 60,
        x_min: -w,
        x_max: w,
        y_min: 0.05 * w / 3.0,
        y_max: w,
    }
}

#[derive(Serialize)]
struct KernelSummary {
    xi: f64,
    bmd: f64,
    residual: f64,
    refinements: u32,
    nodes: usize,
    slit_constants: Vec<f64>,
    drift: Vec<f64>,
}

fn kernel(sc: &Scenario, target: &Target, dir: &mut RunDir) -> Result<Vec<Invariant>, CliError> {
    let s = sc.slit_vector()?;
    let cfg = sc.tolerances.evolve.kernel;
    let xi = sc.xi0;
    let sol = cached_kernel(&s, xi, &cfg)?;
    let grid = sc.grid.unwrap_or_else(|| default_grid(&s, xi));
    let pts = grid.points();
    let values = exec::map(&pts, |&(x, y)| sol.eval_psi(Complex64::new(x, y)));
    let mut csv = Csv::new(&["re", "im", "psi_re", "psi_im"]);
    let mut negative = 0;
    let mut skipped = 0;
    for (&(x, y), v) in pts.iter().zip(values) {
        match v {
            Ok(p) => {
                if y > 0.0 && p.im <= 0.0 {
                    negative += 1;
                }
                csv.row(&[x, y, p.re, p.im]);
            }
            Err(KernelError::EvalOnSingularity(_)) => skipped += 1,
            Err(e) => return Err(e.into()),
        }
    }
    dir.write(&target.main_or("kernel.csv"), &csv.into_bytes())?;
    let summary = KernelSummary {
        xi,
        bmd: sol.bmd(),
        residual: sol.residual(),
        refinements: sol.refinements(),
        nodes: sol.node_count(),
        slit_constants: sol.slit_constants().to_vec(),
        drift: sol.drift().b,
    };
    dir.write_json("kernel.json", &summary)?;
    if sc.bmd {
        println!("b_BMD = {}", num(sol.bmd()));
    }
    if let Some(cells) = sc.oracle_cells {
        let half = 5.0f64.max(2.0 * s.extent());
        let g = oracle_kernel_fd(&s, xi, &LatticeConfig::centered(xi, half, 2.0 * half, cells))?;
        let mut csv = Csv::new(&["re", "im", "value"]);
        for j in 1..g.ny {
            for i in 0..=g.nx {
                let z = g.point(i, j);
                csv.row(&[z.re, z.im, g.value(i, j)]);
            }
        }
        dir.write("oracle.csv", &csv.into_bytes())?;
    }
    Ok(vec![
        Invariant::new(
            "kernel_positive",
            negative == 0,
            format!("{negative} grid points with Im Ψ ≤ 0; {skipped} on the pole or a slit"),
        ),
        Invariant::new(
            "kernel_residual",
            sol.residual() <= cfg.tol,
            format!("residual {:.3e}, tolerance {:.1e}", sol.residual(), cfg.tol),
        ),
    ])
}

fn trajectory_csv(tr: &Trajectory) -> Csv {
    let n = tr.states.first().map_or(0, SlitVector::n);
    let mut header = vec!["t".to_string()];
    for key in ["y", "x", "xr"] {
        header.extend((1..=n).map(|j| format!("{key}_{j}")));
    }
    header.push("xi".into());
    header.push("R".into());
    let mut csv = Csv::new(&header);
    for k in 0..tr.len() {
        let mut row = vec![tr.times[k]];
        row.extend(tr.states[k].to_vec());
        row.push(tr.xi[k]);
        row.push(tr.r[k]);
        csv.row(&row);
    }
    csv
}

fn trajectory_invariants(tr: &Trajectory, eps: f64) -> Vec<Invariant> {
    let n = tr.states.first().map_or(0, SlitVector::n);
    let falling = tr
        .states
        .windows(2)
        .all(|w| (0..n).all(|j| w[1].slit(j).y < w[0].slit(j).y));
    let mut out = vec![Invariant::new(
        "heights_decrease",
        n == 0 || falling,
        format!("{} nodes", tr.len()),
    )];
    if let Ok(rep) = explosion_report(tr) {
        let last = rep.r_tail.last().map_or(f64::NAN, |p| p.1);
        out.push(Invariant::new(
            "explosion_tail",
            last <= eps && rep.tail_ends_at_minimum(),
            format!("zeta {}, final R {last:.3e}, tail minimum {}", rep.zeta, rep.tail_ends_at_minimum()),
        ));
    }
    out
}

fn evolve(sc: &Scenario, target: &Target, dir: &mut RunDir) -> Result<Vec<Invariant>, CliError> {
    let s = sc.slit_vector()?;
    let d = sc.driver()?;
    let cfg = sc.tolerances.evolve;
    let tr = evolve_slits(&s, &d, sc.t_max()?, &cfg)?;
    dir.write(&target.main_or("traj.csv"), &trajectory_csv(&tr).into_bytes())?;
    dir.write_json("traj.json", &tr)?;
    log::info!("evolve finished: {:?}", tr.status);
    Ok(trajectory_invariants(&tr, cfg.eps_explode))
}

fn map(sc: &Scenario, target: &Target, dir: &mut RunDir) -> Result<Vec<Invariant>, CliError> {
    let s = sc.slit_vector()?;
    let d = sc.driver()?;
    let t_max = sc.t_max()?;
    let grid = sc.grid.unwrap_or(Grid {
        nx: 41,
        ny: 40,
        x_min: -2.0,
        x_max: 2.0,
        y_min: 0.05,
        y_max: 2.0,
    });
    let mut pts: Vec<Complex64> = grid.points().into_iter().map(|(x, y)| Complex64::new(x, y)).collect();
    pts.extend(sc.points.iter().map(|p| Complex64::new(p[0], p[1])));
    // grid nodes on a slit or the axis are not in the domain
    let inside: Vec<Complex64> = pts.into_iter().filter(|z| s.contains(*z)).collect();
    let cfg = ChainConfig {
        evolve: sc.tolerances.evolve,
        ..ChainConfig::default()
    };
    let hist = evolve_map(&s, &d, &inside, t_max, &cfg)?;
    let mut csv = Csv::new(&["z_re", "z_im", "swallow_time"]);
    let mut late = 0;
    for (z, sw) in inside.iter().zip(&hist.swallowed_at) {
        if sw.is_some_and(|t| t > hist.times.last().copied().unwrap_or(t_max) + 1e-12) {
            late += 1;
        }
        csv.cells(&[num(z.re), num(z.im), sw.map(num).unwrap_or_default()]);
    }
    dir.write(&target.main_or("hull.csv"), &csv.into_bytes())?;
    let g = hist.g.last().cloned().unwrap_or_default();
    let mut csv = Csv::new(&["z_re", "z_im", "g_re", "g_im"]);
    for (z, w) in inside.iter().zip(&g) {
        csv.row(&[z.re, z.im, w.re, w.im]);
    }
    dir.write("map_final.csv", &csv.into_bytes())?;
    let below = g
        .iter()
        .zip(&hist.swallowed_at)
        .filter(|(w, sw)| sw.is_none() && w.im < 0.0)
        .count();
    Ok(vec![
        Invariant::new("swallow_within_horizon", late == 0, format!("{late} late swallow times")),
        Invariant::new("images_in_upper_half_plane", below == 0, format!("{below} images below the axis")),
    ])
}

/// Explosion statistics written next to the per-path records.
#[derive(Serialize)]
struct ZetaQuantiles {
    min: Option<f64>,
    q25: Option<f64>,
    median: Option<f64>,
    q75: Option<f64>,
    max: Option<f64>,
}

#[derive(Serialize)]
struct StochasticSummary<'a> {
    p_hat: f64,
    ci: (f64, f64),
    zeta_quantiles: ZetaQuantiles,
    exploded: usize,
    failed: usize,
    n_paths: usize,
    base_seed: u64,
    dt: f64,
    t_max: f64,
    alpha: String,
    drift: String,
    paths: &'a [PathRecord],
}

fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

fn stochastic(sc: &Scenario, target: &Target, dir: &mut RunDir, per_path: bool) -> Result<Vec<Invariant>, CliError> {
    let s = sc.slit_vector()?;
    let coeffs = sc.coefficients()?;
    let (t_max, dt) = (sc.t_max()?, sc.dt.unwrap_or(1e-3));
    let base = sc.seed.ok_or_else(|| CliError::config("seed is required for stochastic runs"))?;
    let n = sc.paths.unwrap_or(1);
    let cfg = sc.tolerances.skle;
    let mc: McSummary = if per_path {
        let results = exec::map_range(n, |i| {
            let seed = path_seed(base, i as u64);
            (seed, sample_path(sc.xi0, &s, &coeffs, t_max, dt, seed, &cfg))
        });
        let mut records = Vec::with_capacity(n);
        for (i, (seed, res)) in results.into_iter().enumerate() {
            match res {
                Ok(p) => {
                    dir.write(&format!("path_{i:04}.csv"), &trajectory_csv(&p.trajectory).into_bytes())?;
                    records.push(PathRecord::from_path(i, &p));
                }
                Err(e) => {
                    log::warn!("path {i} failed: {e}");
                    records.push(PathRecord::failed(i, seed, &e));
                }
            }
        }
        summarize(t_max, dt, base, records)
    } else {
        skle::mc_explosion(sc.xi0, &s, &coeffs, t_max, dt, n, base, &cfg)?
    };
    let mut table = Csv::new(&["index", "seed", "status", "zeta", "final_r", "min_height", "tail_min", "nodes", "splits"]);
    for p in &mc.paths {
        let status = match &p.status {
            Status::Completed { .. } => "completed",
            Status::Exploded { .. } => "exploded",
            Status::Failed { .. } => "failed",
        };
        table.cells(&[
            p.index.to_string(),
            p.seed.to_string(),
            status.to_string(),
            p.zeta().map(num).unwrap_or_default(),
            num(p.final_r),
            num(p.min_height),
            p.tail_ends_at_minimum.to_string(),
            p.nodes.to_string(),
            p.splits.to_string(),
        ]);
    }
    dir.write(&target.main_or("paths.csv"), &table.into_bytes())?;
    let mut zetas: Vec<f64> = mc.paths.iter().filter_map(PathRecord::zeta).collect();
    zetas.sort_by(f64::total_cmp);
    let summary = StochasticSummary {
        p_hat: mc.p_explode,
        ci: mc.ci95,
        zeta_quantiles: ZetaQuantiles {
            min: quantile(&zetas, 0.0),
            q25: quantile(&zetas, 0.25),
            median: quantile(&zetas, 0.5),
            q75: quantile(&zetas, 0.75),
            max: quantile(&zetas, 1.0),
        },
        exploded: mc.exploded,
        failed: mc.failed,
        n_paths: mc.n_paths,
        base_seed: base,
        dt,
        t_max,
        alpha: coeffs.alpha.to_string(),
        drift: coeffs.drift.to_string(),
        paths: &mc.paths,
    };
    dir.write_json("summary.json", &summary)?;
    println!(
        "p_hat = {:.4} (95% CI {:.4}..{:.4}), {} of {} exploded, {} failed",
        mc.p_explode, mc.ci95.0, mc.ci95.1, mc.exploded, mc.n_paths, mc.failed
    );
    let eps = cfg.evolve.eps_explode;
    let bad_tail = mc
        .paths
        .iter()
        .filter(|p| p.zeta().is_some() && !(p.final_r <= eps && p.tail_ends_at_minimum))
        .count();
    Ok(vec![
        Invariant::new("explosion_tail", bad_tail == 0, format!("{bad_tail} exploded paths with a bad tail")),
        Invariant::new("no_failed_paths", mc.failed == 0, format!("{} failed paths", mc.failed)),
    ])
}

/// The driving path of an earlier run, rebuilt from its verified manifest.
enum Source {
    Deterministic(Box<Scenario>, Trajectory),
    Stochastic(Box<SklePath>),
}

fn load_source(sc: &Scenario) -> Result<Source, CliError> {
    let run = sc.run.as_ref().ok_or_else(|| CliError::config("field `run` is required for transform"))?;
    let (manifest, dir) = load_verified(run)?;
    let prev = manifest.scenario;
    match prev.task {
        Task::Evolve => {
            let tr: Trajectory = serde_json::from_slice(&read(&dir.join("traj.json"))?)?;
            Ok(Source::Deterministic(Box::new(prev), tr))
        }
        Task::Skle | Task::Mc => {
            let n = prev.paths.unwrap_or(1);
            if sc.path_index >= n {
                return Err(CliError::config(format!("path_index {} but the run has {n} paths", sc.path_index)));
            }
            let base = prev.seed.ok_or_else(|| CliError::config("run manifest has no seed"))?;
            let seed = path_seed(base, sc.path_index as u64);
            let p = sample_path(
                prev.xi0,
                &prev.slit_vector()?,
                &prev.coefficients()?,
                prev.t_max()?,
                prev.dt.unwrap_or(1e-3),
                seed,
                &prev.tolerances.skle,
            )?;
            Ok(Source::Stochastic(Box::new(p)))
        }
        other => Err(CliError::config(format!("cannot transform a {other:?} run"))),
    }
}

fn transform(sc: &Scenario, target: &Target, dir: &mut RunDir) -> Result<Vec<Invariant>, CliError> {
    let points: Vec<Complex64> = sc.points.iter().map(|p| Complex64::new(p[0], p[1])).collect();
    let cfg = &sc.tolerances.iota;
    let horizon = |end: f64| sc.t_max.map_or(end, |t| t.min(end));
    let hist = match load_source(sc)? {
        Source::Deterministic(prev, tr) => {
            let d = prev.driver()?;
            let p = DrivenTrajectory { traj: &tr, driver: &d };
            evolve_iota(&p, horizon(p.t_end()), &points, cfg)?
        }
        Source::Stochastic(p) => evolve_iota(p.as_ref(), horizon(p.t_end()), &points, cfg)?,
    };
    let mut header: Vec<String> = ["t", "U", "iota1", "iota2", "a0"].map(String::from).to_vec();
    for k in 0..points.len() {
        header.push(format!("p{k}_re"));
        header.push(format!("p{k}_im"));
    }
    let mut csv = Csv::new(&header);
    let mut distortion = 0;
    for st in &hist.states {
        let mut row = vec![st.t, st.u, st.iota1, st.iota2, st.a0];
        for p in &st.points {
            row.push(p.re);
            row.push(p.im);
        }
        csv.row(&row);
        if st.iota2.abs() > 4.0 / st.r * st.iota1 {
            distortion += 1;
        }
    }
    dir.write(&target.main_or("iota.csv"), &csv.into_bytes())?;
    let positive = hist.states.iter().all(|s| s.iota1 > 0.0);
    let increasing = hist.states.windows(2).all(|w| w[1].a0 > w[0].a0);
    Ok(vec![
        Invariant::new("iota1_positive", positive, format!("{} records", hist.states.len())),
        Invariant::new("capacity_increasing", increasing, String::new()),
        Invariant::new("distortion_bound", distortion == 0, format!("{distortion} records over 4/r")),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), Some(1.0));
        assert_eq!(quantile(&v, 0.5), Some(2.5));
        assert_eq!(quantile(&v, 1.0), Some(4.0));
        assert_eq!(quantile(&[], 0.5), None);
    }

    #[test]
    fn csv_out_names_the_main_table() {
        let sc = Scenario::new("x", Task::Evolve);
        let t = Target::resolve(Some(Path::new("runs/a/traj.csv")), &sc);
        assert_eq!(t.dir, PathBuf::from("runs/a"));
        assert_eq!(t.main.as_deref(), Some("traj.csv"));
        let t = Target::resolve(None, &sc);
        assert_eq!(t.dir, PathBuf::from("kl-out/x"));
    }
}
