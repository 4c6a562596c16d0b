//! Command implementations. Each returns the outcome to report; all files
//! are written under the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use kamred::homological::{reduce_linear_forcing, ForcingCase};
use kamred::kam::{perturbed_hamiltonian, reduce, scan_measure_in, ReductionResult, ReductionStatus};
use kamred::linalg::{CMat, RMat};
use kamred::quad_ham::RVec;
use kamred::sim_classical::{integrate, verify_conjugation};
use kamred::sim_quantum::{graffi_basis_size, graffi_demo, graffi_forcing, norms_to_csv, track_norms, verify_bounded_sobolev, DrivenQuadratic, HermiteBasis, PropagationOptions, QuantumState};
use kamred::torus_fourier::FourierSeries;
use kamred::KamError;
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_REJECTED: i32 = 2;
pub const EXIT_ABORT: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical abort: {0}")]
    Numerical(#[from] KamError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) | CliError::Io { .. } => EXIT_ABORT,
        }
    }

    pub fn reason(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config_error",
            CliError::Numerical(KamError::Leak { .. }) => "truncation_leak",
            CliError::Numerical(KamError::LogarithmBranch(_)) => "logarithm_branch",
            CliError::Numerical(_) => "numerical_abort",
            CliError::Io { .. } => "io_error",
        }
    }
}

pub struct Outcome {
    pub exit: i32,
    pub status: String,
    pub summary: Value,
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| CliError::Io { path, source })
}

fn write_json(dir: &Path, name: &str, v: &Value) -> Result<(), CliError> {
    write(dir, name, &(serde_json::to_string_pretty(v).expect("json serializes") + "\n"))
}

fn rmat_json(m: &RMat) -> Value {
    json!((0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<f64>>()).collect::<Vec<_>>())
}

fn cmat_json(m: &CMat) -> Value {
    json!({
        "re": (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)].re).collect::<Vec<f64>>()).collect::<Vec<_>>(),
        "im": (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)].im).collect::<Vec<f64>>()).collect::<Vec<_>>(),
    })
}

fn series_json(s: &FourierSeries) -> Value {
    serde_json::to_value(s.to_records()).expect("records serialize")
}

fn status_exit(status: &ReductionStatus) -> i32 {
    match status {
        ReductionStatus::Converged => EXIT_OK,
        ReductionStatus::Rejected { .. } => EXIT_REJECTED,
        ReductionStatus::NotConverged { .. } => EXIT_ABORT,
    }
}

fn status_json(status: &ReductionStatus) -> Value {
    match status {
        ReductionStatus::Converged => json!({"status": "converged"}),
        ReductionStatus::Rejected { step, divisor, kappa } => json!({
            "status": "rejected",
            "step": step,
            "kappa": kappa,
            "divisor": divisor.as_ref().map(|d| json!({"k": d.k, "block": d.block.tag(), "i": d.i, "j": d.j, "value": d.value})),
        }),
        ReductionStatus::NotConverged { reason } => json!({"status": "not_converged", "reason": reason}),
    }
}

fn run_reduction(cfg: &ExperimentConfig) -> Result<ReductionResult, CliError> {
    let omega = cfg.omega().map_err(CliError::Config)?;
    let w = cfg.perturbation().map_err(CliError::Config)?;
    let r = reduce(&cfg.model.nu, &omega, &w, &cfg.schedule())?;
    info!("reduction {} after {} steps, final residual {:.3e}", r.status.tag(), r.steps_run, r.final_residual());
    Ok(r)
}

fn residual_csv(cfg: &ExperimentConfig, r: &ReductionResult) -> String {
    let s = cfg.schedule();
    let mut out = String::from("# residual is the weighted majorant [q_m]_sigma_m (dimensionless); envelope is 10*eps_m\nm,sigma,residual,envelope,kappa,min_divisor,divisor_margin,k_used,cap_hit\n");
    out.push_str(&format!("0,{:.17e},{:.17e},{:.17e},,,,,\n", s.sigma(0), r.residual_history[0], 10.0 * s.eps_m(0)));
    for rec in &r.steps {
        out.push_str(&format!(
            "{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{}\n",
            rec.m,
            rec.sigma,
            rec.residual,
            10.0 * rec.eps_target,
            rec.kappa,
            rec.min_divisor,
            rec.min_divisor - rec.kappa,
            rec.k_used,
            rec.cap_hit
        ));
    }
    out
}

fn reduction_json(r: &ReductionResult) -> Value {
    let t = r.transformation.as_ref();
    json!({
        "status": status_json(&r.status),
        "accepted": r.accepted,
        "steps_run": r.steps_run,
        "omega": r.omega,
        "nu": r.nu,
        "nu_infinity": r.nu_infinity,
        "n_infinity": cmat_json(&r.n_infinity),
        "energy_offset": r.energy_offset,
        "h_infinity": rmat_json(&r.h_infinity),
        "diagonalizer": r.diagonalizer.as_ref().map(|w| json!({"p": rmat_json(&w.p), "nu": w.nu})),
        "residual_history": r.residual_history,
        "divisor_margins": r.divisor_margins(),
        "aliasing_budget": r.aliasing_budget,
        "transformation": t.map(|t| json!({
            "a": series_json(&t.a),
            "v": series_json(&t.v),
            "deviation_from_identity": t.deviation_from_identity(),
            "symplectic_defect": t.max_symplectic_defect(),
        })),
    })
}

pub fn cmd_reduce(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let r = run_reduction(cfg)?;
    write_json(out, "result.json", &reduction_json(&r))?;
    write(out, "residual_history.csv", &residual_csv(cfg, &r))?;
    Ok(Outcome { exit: status_exit(&r.status), status: r.status.tag().into(), summary: status_json(&r.status) })
}

pub fn cmd_scan(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let w = cfg.perturbation().map_err(CliError::Config)?;
    let range = cfg.model.omega_range.map_or((0.0, 2.0 * std::f64::consts::PI), |[lo, hi]| (lo, hi));
    let rep = scan_measure_in(&cfg.model.nu, &w, &cfg.schedule(), cfg.scan.samples, cfg.scan.seed, range)?;
    let mut csv = String::from("# omega in radians per unit time; final_residual is the weighted majorant\nindex");
    for j in 1..=cfg.model.n {
        csv.push_str(&format!(",omega_{j}"));
    }
    csv.push_str(",accepted,status,first_rejection_step,steps_run,final_residual\n");
    for v in &rep.verdicts {
        csv.push_str(&v.index.to_string());
        for o in &v.omega {
            csv.push_str(&format!(",{o:.17e}"));
        }
        let step = v.first_rejection_step.map(|s| s.to_string()).unwrap_or_default();
        csv.push_str(&format!(",{},{},{},{},{:.17e}\n", v.accepted, v.status, step, v.steps_run, v.final_residual));
    }
    write(out, "scan.csv", &csv)?;
    let summary = json!({
        "eps": rep.eps,
        "omega_range": [range.0, range.1],
        "samples": rep.samples,
        "excised_fraction": rep.excised_fraction,
        "rejected_fraction": rep.rejected_fraction,
        "first_rejection_histogram": rep.rejection_histogram.iter().map(|(k, v)| json!({"step": k, "count": v})).collect::<Vec<_>>(),
    });
    write_json(out, "scan_summary.json", &summary)?;
    info!("excised fraction {:.4}", rep.excised_fraction);
    Ok(Outcome { exit: EXIT_OK, status: "completed".into(), summary })
}

fn initial_points(cfg: &ExperimentConfig) -> Vec<RVec> {
    let sim = &cfg.simulation;
    if !sim.initial.is_empty() {
        return vec![RVec::from_vec(sim.initial.clone())];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    (0..sim.trajectories.max(1)).map(|_| RVec::from_fn(2 * cfg.model.d, |_, _| rng.gen_range(-1.0..1.0))).collect()
}

pub fn cmd_sim_classical(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let omega = cfg.omega().map_err(CliError::Config)?;
    let w = cfg.perturbation().map_err(CliError::Config)?;
    let r = run_reduction(cfg)?;
    let h = perturbed_hamiltonian(&cfg.model.nu, &w, cfg.model.eps)?;
    let sim = &cfg.simulation;
    let phi = r.transformation.as_ref().expect("reduce composes the transformation");
    for (i, z0) in initial_points(cfg).iter().enumerate() {
        let tr = integrate(&h, &omega, z0, 0.0, sim.t_max, sim.dt)?.with_energy(|t, w| {
            let theta: Vec<f64> = omega.iter().map(|o| o * t).collect();
            let wn = phi.apply_inverse(&theta, w);
            0.5 * wn.dot(&(&r.h_infinity * &wn))
        });
        write(out, &format!("trajectory_{i}.csv"), &tr.to_csv())?;
    }
    let rep = verify_conjugation(&r, &h, &omega, sim.trajectories.max(1), sim.t_max, sim.dt, sim.seed)?;
    let summary = json!({
        "reduction": status_json(&r.status),
        "max_relative_drift": rep.max_relative_drift,
        "drifts": rep.drifts,
        "max_action_drift": rep.max_action_drift,
        "max_symplectic_defect": rep.max_symplectic_defect,
    });
    write_json(out, "conjugation.json", &summary)?;
    Ok(Outcome { exit: status_exit(&r.status), status: r.status.tag().into(), summary })
}

pub fn cmd_sim_quantum(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let omega = cfg.omega().map_err(CliError::Config)?;
    let w = cfg.perturbation().map_err(CliError::Config)?;
    let sim = &cfg.simulation;
    let basis = HermiteBasis::new(cfg.model.d, sim.n_basis)?;
    let psi0 = if sim.initial.is_empty() { QuantumState::ground(basis) } else { QuantumState::coherent(basis, &RVec::from_vec(sim.initial.clone())) };
    let opts = PropagationOptions { dt: sim.dt, leak_tol: sim.leak_tol, buffer: sim.buffer, ..PropagationOptions::default() };
    let r = run_reduction(cfg)?;
    let (samples, bounded) = if r.accepted {
        let rep = verify_bounded_sobolev(&r, &w, cfg.model.eps, sim.s, sim.t_max, &psi0, &opts)?;
        let b = json!({"sup_ratio": rep.sup_ratio, "inf_ratio": rep.inf_ratio, "max_deviation": rep.max_deviation, "two_sided_constant": rep.two_sided_constant});
        (rep.samples, Some(b))
    } else {
        let h = DrivenQuadratic::new(perturbed_hamiltonian(&cfg.model.nu, &w, cfg.model.eps)?, &omega, basis)?;
        (track_norms(&h, &psi0, &cfg.model.nu, sim.s, sim.t_max, &opts)?.0, None)
    };
    write(out, "norms.csv", &norms_to_csv(&samples, sim.s))?;
    let n0 = samples[0].norm_s;
    let summary = json!({
        "reduction": status_json(&r.status),
        "sup_ratio": samples.iter().map(|x| x.norm_s / n0).fold(0.0, f64::max),
        "max_norm0_drift": samples.iter().map(|x| (x.norm0 - 1.0).abs()).fold(0.0, f64::max),
        "max_leak": samples.iter().map(|x| x.leak).fold(0.0, f64::max),
        "bounded_sobolev": bounded,
    });
    write_json(out, "quantum.json", &summary)?;
    Ok(Outcome { exit: status_exit(&r.status), status: r.status.tag().into(), summary })
}

pub fn cmd_graffi(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let g = &cfg.graffi;
    let (nu, omega, forcing) = if g.forcing.is_empty() {
        (vec![1.0], vec![g.omega], graffi_forcing(g.a)?)
    } else {
        (cfg.model.nu.clone(), cfg.omega().map_err(CliError::Config)?, cfg.forcing().map_err(CliError::Config)?)
    };
    let lin = reduce_linear_forcing(&nu, &omega, &forcing, g.gamma, g.tau)?;
    let residual = lin.residual_forcing(&nu, &omega, &forcing)?;
    let mut summary = json!({
        "case": match lin.case { ForcingCase::Nonresonant => "nonresonant", ForcingCase::Resonant => "resonant" },
        "min_divisor": lin.min_divisor,
        "translation": series_json(&lin.translation),
        "residual_forcing_norm": residual.norm(0.0)?,
        "residual_modes": lin.residual_modes.iter().map(|m| json!({"k": m.k, "j": m.j, "c1": m.c1, "c2": m.c2})).collect::<Vec<_>>(),
    });
    if g.forcing.is_empty() {
        let n_basis = if g.n_basis > 0 { g.n_basis } else { graffi_basis_size(g.a, g.t_max, g.initial_level, cfg.simulation.buffer) };
        let basis = HermiteBasis::new(1, n_basis)?;
        let psi0 = QuantumState::eigenstate(basis, &[g.initial_level]);
        let opts = PropagationOptions { dt: g.dt, leak_tol: cfg.simulation.leak_tol, buffer: cfg.simulation.buffer, observe_every: ((0.5 / g.dt).round() as usize).max(1), ..PropagationOptions::default() };
        info!("driven oscillator: n_basis = {n_basis}");
        let rep = graffi_demo(g.omega, g.a, g.s, g.t_max, &psi0, &opts)?;
        write(out, "norms.csv", &norms_to_csv(&rep.samples, g.s))?;
        summary["n_basis"] = json!(n_basis);
        summary["slope_fit"] = json!(rep.slope_fit);
        summary["sup_ratio"] = json!(rep.sup_ratio);
        summary["center_error"] = json!(rep.center_error);
    }
    write_json(out, "graffi.json", &summary)?;
    Ok(Outcome { exit: EXIT_OK, status: "completed".into(), summary })
}
