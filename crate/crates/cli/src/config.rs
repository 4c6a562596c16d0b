//! Experiment configuration: TOML schema, defaults and validation.

use kamred::kam::KamSchedule;
use kamred::quad_ham::QuadHamComplex;
use kamred::torus_fourier::{FourierSeries, SeriesRecord, Shape};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub graffi: GraffiConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub n: usize,
    pub nu: Vec<f64>,
    /// Required by every command except `scan`, which samples ω.
    #[serde(default)]
    pub omega: Option<Vec<f64>>,
    /// Sampling interval (lo, hi) for each ω_i in `scan`; default (0, 2π).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_range: Option<[f64; 2]>,
    pub eps: f64,
    #[serde(default)]
    pub w: PerturbationConfig,
}

/// Fourier records of W(θ) = zᵀQ_zz z + conj + zᵀQ_zz̄ z̄ + Q_zᵀz + conj + c, with
/// conj taken pointwise in θ; matrix values are row-major d×d, vectors length d.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    #[serde(default)]
    pub zz: Vec<SeriesRecord>,
    #[serde(default)]
    pub zzb: Vec<SeriesRecord>,
    #[serde(default)]
    pub z: Vec<SeriesRecord>,
    #[serde(default)]
    pub c: Vec<SeriesRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub sigma0: f64,
    pub m_max: usize,
    pub tol_rel: f64,
    pub k_max: usize,
    pub kappa_scale: f64,
    pub drop_rel: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let s = KamSchedule::new(0.0);
        ScheduleConfig { sigma0: s.sigma0, m_max: s.m_max, tol_rel: s.tol_rel, k_max: s.k_max, kappa_scale: s.kappa_scale, drop_rel: s.drop_rel }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Sobolev index.
    pub s: f64,
    pub t_max: f64,
    pub dt: f64,
    pub n_basis: usize,
    pub leak_tol: f64,
    /// Fraction of top levels per mode treated as the truncation buffer.
    pub buffer: f64,
    /// Number of random classical trajectories.
    pub trajectories: usize,
    /// Initial phase-space point (x, ξ) for trajectories and the coherent state;
    /// empty means ground state / seeded random points.
    pub initial: Vec<f64>,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig { s: 2.0, t_max: 100.0, dt: 0.1, n_basis: 40, leak_tol: 1e-8, buffer: 0.2, trajectories: 4, initial: Vec::new(), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig { samples: 1000, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraffiConfig {
    pub omega: f64,
    pub a: f64,
    pub s: f64,
    pub t_max: f64,
    pub dt: f64,
    /// 0 selects the size from the resonant drift estimate.
    pub n_basis: usize,
    pub initial_level: usize,
    pub gamma: f64,
    pub tau: f64,
    /// Optional general forcing Σ g_j x_j + f_j ξ_j as a length-2d vector
    /// series (g..., f...) over model.nu and model.omega.
    pub forcing: Vec<SeriesRecord>,
}

impl Default for GraffiConfig {
    fn default() -> Self {
        GraffiConfig { omega: 1.0, a: 1.0, s: 1.0, t_max: 200.0, dt: 0.05, n_basis: 0, initial_level: 0, gamma: 1e-3, tau: 2.0, forcing: Vec::new() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<String>,
}

fn positive(path: &str, v: f64) -> Result<(), String> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(format!("{path}: must be a positive finite number, got {v}"))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), String> {
        let m = &self.model;
        if m.d == 0 {
            return Err("model.d: must be at least 1".into());
        }
        if m.n == 0 {
            return Err("model.n: must be at least 1".into());
        }
        if m.nu.len() != m.d {
            return Err(format!("model.nu: expected {} entries, got {}", m.d, m.nu.len()));
        }
        for (i, v) in m.nu.iter().enumerate() {
            positive(&format!("model.nu[{i}]"), *v)?;
        }
        if let Some(o) = &m.omega {
            if o.len() != m.n {
                return Err(format!("model.omega: expected {} entries, got {}", m.n, o.len()));
            }
            if let Some(i) = o.iter().position(|x| !x.is_finite()) {
                return Err(format!("model.omega[{i}]: must be finite"));
            }
        }
        if let Some([lo, hi]) = m.omega_range {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(format!("model.omega_range: need finite lo < hi, got [{lo}, {hi}]"));
            }
        }
        if !(m.eps.is_finite() && m.eps >= 0.0 && m.eps < 1.0) {
            return Err(format!("model.eps: must lie in [0, 1), got {}", m.eps));
        }
        self.perturbation()?;
        let s = &self.schedule;
        positive("schedule.sigma0", s.sigma0)?;
        positive("schedule.tol_rel", s.tol_rel)?;
        positive("schedule.kappa_scale", s.kappa_scale)?;
        if !(s.drop_rel >= 0.0) {
            return Err("schedule.drop_rel: must be non-negative".into());
        }
        if s.k_max == 0 {
            return Err("schedule.k_max: must be at least 1".into());
        }
        let sim = &self.simulation;
        positive("simulation.t_max", sim.t_max)?;
        positive("simulation.dt", sim.dt)?;
        positive("simulation.leak_tol", sim.leak_tol)?;
        if !(sim.s >= 0.0) {
            return Err("simulation.s: must be non-negative".into());
        }
        if !(sim.buffer > 0.0 && sim.buffer < 1.0) {
            return Err(format!("simulation.buffer: must lie in (0, 1), got {}", sim.buffer));
        }
        if sim.n_basis < 4 {
            return Err("simulation.n_basis: must be at least 4".into());
        }
        if !sim.initial.is_empty() && sim.initial.len() != 2 * m.d {
            return Err(format!("simulation.initial: expected {} entries (x then xi), got {}", 2 * m.d, sim.initial.len()));
        }
        if self.scan.samples == 0 {
            return Err("scan.samples: must be at least 1".into());
        }
        let g = &self.graffi;
        positive("graffi.t_max", g.t_max)?;
        positive("graffi.dt", g.dt)?;
        positive("graffi.gamma", g.gamma)?;
        if !g.omega.is_finite() || !g.a.is_finite() {
            return Err("graffi.omega, graffi.a: must be finite".into());
        }
        if !g.forcing.is_empty() {
            self.forcing()?;
        }
        Ok(())
    }

    pub fn omega(&self) -> Result<Vec<f64>, String> {
        self.model.omega.clone().ok_or_else(|| "model.omega: required by this command".into())
    }

    pub fn perturbation(&self) -> Result<QuadHamComplex, String> {
        let (d, n) = (self.model.d, self.model.n);
        let w = &self.model.w;
        let k_store = [&w.zz, &w.zzb, &w.z, &w.c].iter().flat_map(|r| r.iter()).map(|r| r.k.iter().map(|x| x.unsigned_abs() as usize).sum::<usize>()).max().unwrap_or(0);
        let series = |name: &str, shape: Shape, recs: &[SeriesRecord]| {
            FourierSeries::from_records(n, shape, k_store, recs).map_err(|e| format!("model.w.{name}: {e}"))
        };
        let mut q = QuadHamComplex::zero(d, n, k_store);
        q.qzz = series("zz", Shape::Matrix(d), &w.zz)?;
        q.qzzb = series("zzb", Shape::Matrix(d), &w.zzb)?;
        q.qz = series("z", Shape::Vector(d), &w.z)?;
        q.c = series("c", Shape::Scalar, &w.c)?;
        let defect = q.reality_defect();
        let scale = q.norm(0.0).map_err(|e| format!("model.w: {e}"))?.max(1.0);
        if defect > 1e-12 * scale {
            return Err(format!("model.w: perturbation is not real-valued (conjugate-symmetry defect {defect:.3e})"));
        }
        q.project_real();
        Ok(q)
    }

    pub fn forcing(&self) -> Result<FourierSeries, String> {
        let (d, n) = (self.model.d, self.model.n);
        let k_store = self.graffi.forcing.iter().map(|r| r.k.iter().map(|x| x.unsigned_abs() as usize).sum::<usize>()).max().unwrap_or(0);
        FourierSeries::from_records(n, Shape::Vector(2 * d), k_store, &self.graffi.forcing).map_err(|e| format!("graffi.forcing: {e}"))
    }

    pub fn schedule(&self) -> KamSchedule {
        let s = &self.schedule;
        KamSchedule {
            eps: self.model.eps,
            sigma0: s.sigma0,
            m_max: s.m_max,
            tol_rel: s.tol_rel,
            k_max: s.k_max,
            kappa_scale: s.kappa_scale,
            drop_rel: s.drop_rel,
            compose: true,
        }
    }
}
