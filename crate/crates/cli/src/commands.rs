//! Subcommand drivers. Each returns the JSON printed on success.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use lagmhd::diagnostics::{csv_row, fmt_float, ErrorReport, CSV_HEADER};
use lagmhd::evolution::{
    compare_with_linear, config_for_m, make_initial_data, read_checkpoint, run_from, write_atomic, write_checkpoint,
    Checkpoint, Comparison, RunFailure,
};
use lagmhd::geometry::build_geometry;
use lagmhd::{
    energy_report, poincare_constant, DiophantineError, EnergyReport, EvolutionError, FlowState,
    SimConfig, TrajectoryLog,
};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{parse_raw, ConfigError, OmegaSpec, RunConfig};
use crate::manifest::RunManifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("direction not certified: {0}")]
    Certification(DiophantineError, Value),
    #[error("numerical failure: {0}")]
    Numerical(#[from] EvolutionError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(ConfigError::Certification(_)) | CliError::Certification(..) => 3,
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 4,
            CliError::Io { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(e) => e.kind(),
            CliError::Certification(..) => "certification",
            CliError::Numerical(_) => "numerical",
            CliError::Io { .. } => "io",
        }
    }

    /// Machine-readable form; certification failures carry their report.
    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "status": "error",
            "kind": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        if let CliError::Certification(_, report) = self {
            v["report"] = report.clone();
        }
        v
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(io_err(path))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn read_config(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Worker cap from `MIHD_THREADS`, defaulting to the available parallelism.
pub fn thread_limit() -> usize {
    std::env::var("MIHD_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

pub struct CertifyArgs {
    pub config_text: Option<String>,
    pub omega: Option<String>,
    pub tau: Option<f64>,
    pub truncation: Option<u32>,
    pub seed: Option<u64>,
    pub band: Option<u32>,
}

/// Certification report; `Err(Certification)` when the direction fails.
pub fn certify_omega(args: &CertifyArgs) -> Result<Value, CliError> {
    let mut text = args.config_text.clone().unwrap_or_default();
    // flags override the file
    let mut overrides = Vec::new();
    if let Some(w) = &args.omega {
        overrides.push(("omega", w.clone()));
    }
    if let Some(t) = args.tau {
        overrides.push(("tau", t.to_string()));
    }
    if let Some(x) = args.truncation {
        overrides.push(("truncation", x.to_string()));
    }
    if let Some(s) = args.seed {
        overrides.push(("seed", s.to_string()));
    }
    text = text
        .lines()
        .filter(|l| {
            let key = l.split('=').next().unwrap_or("").trim();
            !overrides.iter().any(|(k, _)| *k == key)
        })
        .collect::<Vec<_>>()
        .join("\n");
    for (k, v) in &overrides {
        text.push_str(&format!("\n{k} = {v}"));
    }
    let raw = parse_raw(&text)?;
    let band = args
        .band
        .or_else(|| raw.entries.get("grid_n").and_then(|n| n.parse::<u32>().ok()).map(|n| n / 3))
        .unwrap_or(5)
        .max(1);
    let requested = match raw.omega {
        OmegaSpec::Vector(w) => Some(w),
        _ => None,
    };
    match raw.direction() {
        Ok(d) => {
            let cp = poincare_constant(&d, 0, band.min(d.truncation_x)).ok();
            Ok(json!({
                "status": "certified",
                "omega": d.omega,
                "tau": d.tau,
                "truncation_x": d.truncation_x,
                "c_est": d.c_est,
                "argmin_chi": d.argmin_chi,
                "provenance": d.provenance,
                "poincare_band": band,
                "poincare_constant": cp,
                "warnings": raw.warnings,
            }))
        }
        Err(ConfigError::Certification(e)) => {
            let witness = match &e {
                DiophantineError::Orthogonal { witness } | DiophantineError::InfiniteConstant { witness } => {
                    Some(*witness)
                }
                _ => None,
            };
            let report = json!({
                "status": "failure",
                "omega": requested,
                "tau": raw.tau,
                "truncation_x": raw.truncation,
                "witness": witness,
                "reason": e.to_string(),
                "warnings": raw.warnings,
            });
            Err(CliError::Certification(e, report))
        }
        Err(e) => Err(e.into()),
    }
}

fn step_of(t: f64, dt: f64) -> usize {
    (t / dt).round() as usize
}

fn checkpoint_of(cfg: &SimConfig, state: &FlowState) -> Checkpoint {
    Checkpoint { state: state.clone(), nu: cfg.nu, m: cfg.m, omega: cfg.omega() }
}

fn trajectory_csv(log: &TrajectoryLog) -> String {
    let mut s = String::with_capacity(64 * (log.records.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in &log.records {
        s.push_str(&csv_row(r));
        s.push('\n');
    }
    s
}

fn summary_json(log: &TrajectoryLog) -> Value {
    json!({
        "steps": log.steps,
        "t_final": log.final_state.t,
        "orders": log.orders,
        "h": log.h,
        "initial_params": log.initial_params,
        "max_det_err": log.max_det_err,
        "max_diva_res": log.max_diva_res,
        "max_energy_resid": log.max_energy_resid,
        "guard_exceeded_steps": log.guard_exceeded_steps,
    })
}

/// Trajectory CSV, checkpoints, summary and manifest under `out_dir`.
pub fn simulate(cfg: &RunConfig) -> Result<Value, CliError> {
    let dir = &cfg.out_dir;
    ensure_dir(dir)?;
    let mut manifest = RunManifest::start("simulate", cfg);
    let sim = &cfg.sim;
    let init = make_initial_data(sim)?;
    let mut ckpt_error = None;
    let mut outputs = Vec::new();
    let result = run_from(sim, init, |state, _| {
        let step = step_of(state.t, sim.dt);
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && ckpt_error.is_none() {
            let name = format!("checkpoint_{step:08}.mihd");
            let path = dir.join(&name);
            match write_checkpoint(&path, &checkpoint_of(sim, state)) {
                Ok(()) => outputs.push(name),
                Err(source) => ckpt_error = Some(CliError::Io { path, source }),
            }
        }
    });
    if let Some(e) = ckpt_error {
        return Err(e);
    }
    let (log, failure) = match result {
        Ok(log) => (log, None),
        Err(f) => {
            let RunFailure { error, last_good, log } = *f;
            let name = "last_good.mihd".to_string();
            write_checkpoint(&dir.join(&name), &checkpoint_of(sim, &last_good)).map_err(io_err(&dir.join(&name)))?;
            outputs.push(name);
            (log, Some(error))
        }
    };
    write_file(&dir.join("trajectory.csv"), trajectory_csv(&log).as_bytes())?;
    outputs.push("trajectory.csv".into());
    if failure.is_none() {
        write_checkpoint(&dir.join("final.mihd"), &checkpoint_of(sim, &log.final_state))
            .map_err(io_err(&dir.join("final.mihd")))?;
        outputs.push("final.mihd".into());
    }
    let summary = summary_json(&log);
    write_file(&dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json").as_bytes())?;
    outputs.push("summary.json".into());
    outputs.push("manifest.json".into());
    manifest.outputs = outputs;
    manifest.finish(if failure.is_some() { "failed" } else { "ok" });
    write_file(&dir.join("manifest.json"), manifest.to_json().as_bytes())?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(json!({ "status": "ok", "run_hash": manifest.run_hash, "out_dir": dir, "summary": summary }))
}

pub const COMPARISON_HEADER: &str = "t,E0_nl,E1_nl,E2_nl,E3_nl,E0_lin,E1_lin,E2_lin,E3_lin,Ed0,Ed1,Ed2,Ed3,Dd0,Dd1,Dd2,Dd3";

fn comparison_csv(c: &Comparison) -> String {
    let mut s = String::from(COMPARISON_HEADER);
    s.push('\n');
    for r in &c.rows {
        let mut cols = vec![fmt_float(r.t)];
        for group in [&r.nonlinear, &r.linear, &r.e_d, &r.d_d] {
            cols.extend(group.iter().map(|&v| fmt_float(v)));
        }
        s.push_str(&cols.join(","));
        s.push('\n');
    }
    s
}

/// Paired nonlinear and closed-form linear series with their difference.
pub fn compare_linear(cfg: &RunConfig) -> Result<Value, CliError> {
    let dir = &cfg.out_dir;
    ensure_dir(dir)?;
    let mut manifest = RunManifest::start("compare-linear", cfg);
    let c = compare_with_linear(&cfg.sim)?;
    write_file(&dir.join("comparison.csv"), comparison_csv(&c).as_bytes())?;
    write_file(&dir.join("trajectory.csv"), trajectory_csv(&c.log).as_bytes())?;
    let series = c.error_series();
    manifest.outputs = vec!["comparison.csv".into(), "trajectory.csv".into(), "manifest.json".into()];
    manifest.finish("ok");
    write_file(&dir.join("manifest.json"), manifest.to_json().as_bytes())?;
    Ok(json!({
        "status": "ok",
        "run_hash": manifest.run_hash,
        "m": c.m,
        "sup_norm": series.sup_norm,
        "compatibility_residual": series.compatibility_residual,
    }))
}

/// One comparison per `m`, at most [`thread_limit`] at a time.
pub fn sweep(sim: &SimConfig, m_list: &[f64], threads: usize) -> Result<ErrorReport, CliError> {
    let configs = m_list.iter().map(|&m| config_for_m(sim, m)).collect::<Result<Vec<_>, _>>()?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Comparison, EvolutionError>>>> =
        Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, configs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(c) = configs.get(i) else { break };
                let r = compare_with_linear(c);
                results.lock().expect("no poisoned workers")[i] = Some(r);
            });
        }
    });
    let mut series = Vec::with_capacity(configs.len());
    for r in results.into_inner().expect("no poisoned workers") {
        series.push(r.expect("every member ran")?.error_series());
    }
    Ok(ErrorReport::from_series(series, sim.orders(), sim.epsilon, sim.t_end))
}

pub fn sweep_m(cfg: &RunConfig) -> Result<Value, CliError> {
    let dir = &cfg.out_dir;
    ensure_dir(dir)?;
    let mut manifest = RunManifest::start("sweep-m", cfg);
    let report = sweep(&cfg.sim, &cfg.m_list, thread_limit())?;
    let v = serde_json::to_value(&report).expect("report serializes");
    write_file(&dir.join("error_report.json"), serde_json::to_string_pretty(&v).expect("json").as_bytes())?;
    manifest.outputs = vec!["error_report.json".into(), "manifest.json".into()];
    manifest.finish("ok");
    write_file(&dir.join("manifest.json"), manifest.to_json().as_bytes())?;
    Ok(v)
}

/// Energy report for the state stored in a checkpoint.
pub fn diagnose_checkpoint(path: &Path, hierarchy_s: u32) -> Result<EnergyReport, CliError> {
    let ck = read_checkpoint(path)?;
    Ok(diagnose_state(&ck, hierarchy_s))
}

pub fn diagnose_state(ck: &Checkpoint, hierarchy_s: u32) -> EnergyReport {
    let s = &ck.state;
    let orders = lagmhd::diagnostics::hierarchy_orders(hierarchy_s);
    let h = lagmhd::diagnostics::highest_order(hierarchy_s);
    let g = build_geometry(&s.eta);
    let c = s.lattice().cutoff();
    let diva = lagmhd::geometry::div_a_projected(&s.u, &g, c).sobolev_norm(0);
    energy_report(s, ck.m, ck.omega, &orders, h, g.det_error_sup(), diva)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn certification_failure_reports_witness() {
        let args = CertifyArgs {
            config_text: None,
            omega: Some("1, 0, 0".into()),
            tau: None,
            truncation: None,
            seed: None,
            band: None,
        };
        let e = certify_omega(&args).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        let v = e.to_json();
        assert_eq!(v["report"]["status"], "failure");
        assert_eq!(v["report"]["witness"], json!([0, 1, 0]));
    }

    #[test]
    fn algebraic_direction_certifies() {
        let args = CertifyArgs { config_text: None, omega: None, tau: None, truncation: None, seed: None, band: Some(5) };
        let v = certify_omega(&args).unwrap();
        assert_eq!(v["status"], "certified");
        assert!(v["c_est"].as_f64().unwrap() > 0.0);
        assert!(v["poincare_constant"].as_f64().unwrap() > 0.0);
    }
}
