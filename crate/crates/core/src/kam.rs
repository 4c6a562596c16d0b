//! The KAM iteration: schedule, single steps, composition of the step maps
//! into one affine symplectic transformation, and frequency scans.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{KamError, Result};
use crate::homological::{solve_homological, Divisor, NormalForm, SolveOptions};
use crate::linalg::{exp_minus_identity_and_phi1, expm, hermitian_eigh, log1p_mat, op_norm_real, real_part, to_complex, CMat, RMat};
use crate::quad_ham::{conjugation_increment, QuadHamComplex, QuadHamReal, RVec};
use crate::symplectic::{hamiltonian_defect, symplectic_defect, williamson_diagonalize, WilliamsonForm};
use crate::torus_fourier::{default_grid, expand_grid_values, FourierSeries, Shape};

/// (2 Σ_{j≥1} j⁻²)⁻¹ = 3/π².
pub const C_STAR: f64 = 3.0 / (PI * PI);

#[derive(Clone, Debug, PartialEq)]
pub struct KamSchedule {
    pub eps: f64,
    pub sigma0: f64,
    pub m_max: usize,
    /// Convergence when [q_m]_{σ_m} ≤ tol_rel · [q_0]_{σ_0}.
    pub tol_rel: f64,
    /// Cap on the truncation order and storage cutoff of all series.
    pub k_max: usize,
    /// κ_m = kappa_scale · ε_{m−1}^{1/8}.
    pub kappa_scale: f64,
    /// Eigenbasis entries at or below drop_rel · [q_0]_{σ_0} are not divided.
    pub drop_rel: f64,
    /// Whether `reduce` builds the composed transformation.
    pub compose: bool,
}

impl KamSchedule {
    pub fn new(eps: f64) -> Self {
        KamSchedule { eps, sigma0: 0.5, m_max: 25, tol_rel: 1e-12, k_max: 24, kappa_scale: 1.0, drop_rel: 1e-15, compose: true }
    }

    /// σ_m = σ_0 − C* σ_0 Σ_{j ≤ m} j⁻².
    pub fn sigma(&self, m: usize) -> f64 {
        let s: f64 = (1..=m).map(|j| 1.0 / (j * j) as f64).sum();
        self.sigma0 * (1.0 - C_STAR * s)
    }

    /// ε_m = ε^{(3/2)^m}.
    pub fn eps_m(&self, m: usize) -> f64 {
        self.eps.abs().powf(1.5f64.powi(m as i32))
    }

    /// K_m = ⌈2 (σ_{m−1} − σ_m)⁻¹ ln ε_{m−1}⁻¹⌉ for m ≥ 1, saturating.
    pub fn k_schedule(&self, m: usize) -> usize {
        let e = self.eps_m(m - 1);
        if e <= 0.0 {
            return usize::MAX;
        }
        let k = (2.0 / (self.sigma(m - 1) - self.sigma(m)) * (-e.ln())).ceil();
        if k.is_finite() && k < usize::MAX as f64 {
            k.max(1.0) as usize
        } else {
            usize::MAX
        }
    }

    pub fn k_used(&self, m: usize) -> usize {
        self.k_schedule(m).min(self.k_max).max(1)
    }

    pub fn kappa(&self, m: usize) -> f64 {
        self.kappa_scale * self.eps_m(m - 1).powf(0.125)
    }
}

/// Per-step diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub m: usize,
    pub sigma: f64,
    pub k_schedule: usize,
    pub k_used: usize,
    pub cap_hit: bool,
    pub kappa: f64,
    pub eps_target: f64,
    pub min_divisor: f64,
    pub worst: Option<Divisor>,
    pub n_tilde_norm: f64,
    pub chi_norm: f64,
    /// [q_m]_{σ_m} after the step.
    pub residual: f64,
    /// Fourier mass that the grid expansion could not keep.
    pub alias_mass: f64,
    /// max over the grid of ‖e^{B} − I‖ + |T| for this step's map.
    pub phi_minus_id: f64,
}

pub struct StepOutput {
    pub nf: NormalForm,
    pub q: QuadHamComplex,
    pub chi: QuadHamReal,
    pub accepted: bool,
    pub record: StepRecord,
}

/// One step m ≥ 1: homological solve with (K_m, κ_m), exact conjugation by
/// the time-1 flow of χ_m, and the split N_{m+1} = N_m + Ñ_m.
pub fn kam_step(nf: &NormalForm, q: &QuadHamComplex, schedule: &KamSchedule, m: usize, drop_tol: f64) -> Result<StepOutput> {
    let k_store = schedule.k_max;
    let k_sched = schedule.k_schedule(m);
    let k_used = schedule.k_used(m);
    let kappa = schedule.kappa(m);
    let sigma = schedule.sigma(m);
    let sol = solve_homological(nf, q, SolveOptions { k_max: k_used, kappa, drop_tol })?;
    let mut record = StepRecord {
        m,
        sigma,
        k_schedule: k_sched,
        k_used,
        cap_hit: k_sched > k_used,
        kappa,
        eps_target: schedule.eps_m(m),
        min_divisor: sol.min_divisor,
        worst: sol.worst.clone(),
        n_tilde_norm: crate::linalg::op_norm(&sol.n_tilde),
        chi_norm: sol.chi.norm(sigma)?,
        residual: f64::NAN,
        alias_mass: 0.0,
        phi_minus_id: 0.0,
    };
    if !sol.accepted {
        return Ok(StepOutput { nf: nf.clone(), q: q.clone(), chi: QuadHamReal::zero(q.d, q.n, 0), accepted: false, record });
    }
    let chi = sol.chi.to_real()?;
    let h = QuadHamComplex::normal_form(q.n, &nf.n_mat)?.add(q)?.to_real()?;
    let (delta, alias) = conjugation_increment(&h, &chi, &nf.omega, k_store)?;
    let mut q_next = q.add(&delta.to_complex()?)?.sub(&QuadHamComplex::normal_form(q.n, &sol.n_tilde)?)?;
    q_next.project_real();
    q_next.prune(0.0);
    let mut nf_next = nf.clone();
    nf_next.n_mat = crate::linalg::hermitize(&(&nf.n_mat + &sol.n_tilde));
    record.residual = q_next.norm(sigma)?;
    record.alias_mass = alias.band_mass;
    Ok(StepOutput { nf: nf_next, q: q_next, chi, accepted: true, record })
}

/// (x, ξ)_old = e^{A(θ)} (x, ξ)_new + V(θ).
#[derive(Clone, Debug, PartialEq)]
pub struct AffineSymplectic {
    pub d: usize,
    pub n: usize,
    pub a: FourierSeries,
    pub v: FourierSeries,
    /// Grid size per dimension of the cached values.
    pub grid: usize,
    /// e^{A(θ)} at the grid points, from the exact composition.
    pub exp_a_grid: Vec<RMat>,
    pub v_grid: Vec<RVec>,
}

impl AffineSymplectic {
    pub fn identity(d: usize, n: usize) -> Self {
        AffineSymplectic {
            d,
            n,
            a: FourierSeries::zero(n, Shape::Matrix(2 * d), 0),
            v: FourierSeries::zero(n, Shape::Vector(2 * d), 0),
            grid: 1,
            exp_a_grid: vec![RMat::identity(2 * d, 2 * d)],
            v_grid: vec![RVec::zeros(2 * d)],
        }
    }

    /// (e^{A(θ)}, V(θ)) from the Fourier representation.
    pub fn matrices_at(&self, theta: &[f64]) -> (RMat, RVec) {
        let a = real_part(&self.a.evaluate(theta));
        let v = real_part(&self.v.evaluate(theta)).column(0).into_owned();
        (expm(&a), v)
    }

    pub fn apply(&self, theta: &[f64], w_new: &RVec) -> RVec {
        let (m, v) = self.matrices_at(theta);
        m * w_new + v
    }

    pub fn apply_inverse(&self, theta: &[f64], w_old: &RVec) -> RVec {
        let (m, v) = self.matrices_at(theta);
        let minv = m.try_inverse().expect("exponential is invertible");
        minv * (w_old - v)
    }

    /// max over the grid of ‖e^{A} − I‖ + |V|.
    pub fn deviation_from_identity(&self) -> f64 {
        let dim = 2 * self.d;
        self.exp_a_grid
            .iter()
            .zip(&self.v_grid)
            .map(|(m, v)| op_norm_real(&(m - RMat::identity(dim, dim))) + v.norm())
            .fold(0.0, f64::max)
    }

    pub fn max_symplectic_defect(&self) -> f64 {
        self.exp_a_grid.iter().map(symplectic_defect).fold(0.0, f64::max)
    }

    /// Largest violation of J A symmetric over the grid.
    pub fn max_hamiltonian_defect(&self) -> f64 {
        self.a.sample_on_grid(self.grid).iter().map(|a| hamiltonian_defect(&real_part(a))).fold(0.0, f64::max)
    }
}

/// Running product of step maps on a fixed grid, kept as I + M to avoid cancellation.
struct Composer {
    grid: usize,
    m: Vec<RMat>,
    v: Vec<RVec>,
}

impl Composer {
    fn new(d: usize, n: usize, grid: usize) -> Self {
        let pts = grid.pow(n as u32);
        Composer { grid, m: vec![RMat::zeros(2 * d, 2 * d); pts], v: vec![RVec::zeros(2 * d); pts] }
    }

    /// Appends the time-1 flow of χ on the right; returns max ‖E‖ + |T|.
    fn push(&mut self, chi: &QuadHamReal) -> f64 {
        let vals = chi.grid_values(self.grid);
        let dim = 2 * chi.d;
        let j = crate::linalg::symplectic_j(chi.d);
        let mut worst: f64 = 0.0;
        for (p, (s, l, _)) in vals.iter().enumerate() {
            let (e, phi) = exp_minus_identity_and_phi1(&(&j * s));
            let t = phi * (&j * l);
            worst = worst.max(op_norm_real(&e) + t.norm());
            let full = &self.m[p] + RMat::identity(dim, dim);
            self.v[p] = &full * &t + &self.v[p];
            self.m[p] = &self.m[p] + &e + &self.m[p] * &e;
        }
        worst
    }

    fn finish(self, d: usize, n: usize, k_out: usize) -> Result<AffineSymplectic> {
        let dim = 2 * d;
        let mut a_vals = Vec::with_capacity(self.m.len());
        for m in &self.m {
            let nrm = m.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
            a_vals.push(to_complex(&log1p_mat(m).ok_or(KamError::LogarithmBranch(nrm))?));
        }
        let v_vals: Vec<CMat> = self.v.iter().map(|v| to_complex(&RMat::from_column_slice(dim, 1, v.as_slice()))).collect();
        let (mut a, _) = expand_grid_values(n, Shape::Matrix(dim), self.grid, &a_vals, k_out)?;
        let (mut v, _) = expand_grid_values(n, Shape::Vector(dim), self.grid, &v_vals, k_out)?;
        a.project_real();
        v.project_real();
        a.prune(0.0);
        v.prune(0.0);
        let exp_a_grid = self.m.iter().map(|m| m + RMat::identity(dim, dim)).collect();
        Ok(AffineSymplectic { d, n, a, v, grid: self.grid, exp_a_grid, v_grid: self.v })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ReductionStatus {
    Converged,
    /// A used divisor fell below κ at this step.
    Rejected { step: usize, divisor: Option<Divisor>, kappa: f64 },
    NotConverged { reason: String },
}

impl ReductionStatus {
    pub fn tag(&self) -> &'static str {
        match self {
            ReductionStatus::Converged => "converged",
            ReductionStatus::Rejected { .. } => "rejected",
            ReductionStatus::NotConverged { .. } => "not_converged",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ReductionResult {
    pub status: ReductionStatus,
    pub accepted: bool,
    pub steps_run: usize,
    pub omega: Vec<f64>,
    pub nu: Vec<f64>,
    pub n_infinity: CMat,
    /// Eigenvalues of N_∞ (ascending), equal to the Williamson frequencies of h_∞.
    pub nu_infinity: Vec<f64>,
    /// θ-average of the constant term left in the final Hamiltonian.
    pub energy_offset: f64,
    /// S_∞ with h_∞ = ½ wᵀ S_∞ w (+ energy_offset).
    pub h_infinity: RMat,
    pub transformation: Option<AffineSymplectic>,
    /// [q_m]_{σ_m} for m = 0, 1, ….
    pub residual_history: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub diagonalizer: Option<WilliamsonForm>,
    pub aliasing_budget: f64,
    pub tol_residual: f64,
    /// Real generators χ_1, χ_2, … of the accepted steps.
    pub chis: Vec<QuadHamReal>,
    pub final_q: QuadHamComplex,
}

impl ReductionResult {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&0.0)
    }

    pub fn divisor_margins(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.min_divisor - s.kappa).collect()
    }
}

/// Runs the iteration on h = Σ ν_j z_j z̄_j + ε W.
pub fn reduce(nu: &[f64], omega: &[f64], w: &QuadHamComplex, schedule: &KamSchedule) -> Result<ReductionResult> {
    let d = nu.len();
    let n = omega.len();
    if nu.iter().any(|&x| !(x > 0.0)) {
        return Err(KamError::Invalid("all ν_j must be positive".into()));
    }
    if w.d != d || w.n != n {
        return Err(KamError::Dimension(format!("W has (d, n) = ({}, {}), expected ({d}, {n})", w.d, w.n)));
    }
    if !(schedule.sigma0 > 0.0) {
        return Err(KamError::NegativeSigma(schedule.sigma0));
    }
    let mut q = w.scale(schedule.eps);
    let (qt, _) = truncate_complex(&q, schedule.k_max);
    q = qt;
    q.project_real();
    let mut nf = NormalForm::diagonal(omega.to_vec(), nu.to_vec());
    let r0 = q.norm(schedule.sigma0)?;
    let tol = schedule.tol_rel * r0;
    let drop_tol = schedule.drop_rel * r0;
    let mut history = vec![r0];
    let mut steps = Vec::new();
    let mut chis = Vec::new();
    let mut alias_budget = 0.0;
    let grid = default_grid(schedule.k_max);
    let mut composer = if schedule.compose { Some(Composer::new(d, n, grid)) } else { None };
    let mut status = ReductionStatus::NotConverged { reason: format!("m_max = {} reached", schedule.m_max) };
    let mut m_done = 0;
    if r0 <= tol {
        status = ReductionStatus::Converged;
    } else {
        for m in 1..=schedule.m_max {
            let out = kam_step(&nf, &q, schedule, m, drop_tol)?;
            if !out.accepted {
                status = ReductionStatus::Rejected { step: m, divisor: out.record.worst.clone(), kappa: out.record.kappa };
                steps.push(out.record);
                break;
            }
            let mut record = out.record;
            if let Some(c) = composer.as_mut() {
                record.phi_minus_id = c.push(&out.chi);
            }
            alias_budget += record.alias_mass * (record.sigma * schedule.k_max as f64).exp();
            history.push(record.residual);
            steps.push(record);
            chis.push(out.chi);
            nf = out.nf;
            q = out.q;
            m_done = m;
            let r = *history.last().unwrap();
            if r <= tol {
                status = ReductionStatus::Converged;
                break;
            }
            if m >= 4 && r > 0.5 * history[m - 1] && history[m - 1] > 0.5 * history[m - 2] {
                status = ReductionStatus::NotConverged {
                    reason: format!("residual stagnated at {r:.3e} (tolerance {tol:.3e}) after {m} steps"),
                };
                break;
            }
        }
    }
    let accepted = status == ReductionStatus::Converged;
    let n_inf = nf.n_mat.clone();
    let (eig, _) = hermitian_eigh(&n_inf);
    let h_inf = QuadHamComplex::normal_form(n, &n_inf)?.to_real()?;
    let s_inf = real_part(&h_inf.s.average());
    let diagonalizer = williamson_diagonalize(&s_inf).ok();
    let transformation = match composer {
        Some(c) => Some(c.finish(d, n, schedule.k_max)?),
        None => None,
    };
    Ok(ReductionResult {
        status,
        accepted,
        steps_run: m_done,
        omega: omega.to_vec(),
        nu: nu.to_vec(),
        n_infinity: n_inf,
        nu_infinity: eig,
        energy_offset: q.c.average()[(0, 0)].re,
        h_infinity: s_inf,
        transformation,
        residual_history: history,
        steps,
        diagonalizer,
        aliasing_budget: alias_budget,
        tol_residual: tol,
        chis,
        final_q: q,
    })
}

fn truncate_complex(q: &QuadHamComplex, k: usize) -> (QuadHamComplex, f64) {
    let (qzz, a) = q.qzz.truncate(k, 0.0);
    let (qzzb, b) = q.qzzb.truncate(k, 0.0);
    let (qz, c) = q.qz.truncate(k, 0.0);
    let (cc, _) = q.c.truncate(k, 0.0);
    (QuadHamComplex { d: q.d, n: q.n, qzz, qzzb, qz, c: cc }, a + b + c)
}

/// Real form of Σ ν_j z_j z̄_j + ε W.
pub fn perturbed_hamiltonian(nu: &[f64], w: &QuadHamComplex, eps: f64) -> Result<QuadHamReal> {
    let nf = NormalForm::diagonal(vec![0.0; w.n], nu.to_vec());
    QuadHamComplex::normal_form(w.n, &nf.n_mat)?.add(&w.scale(eps))?.to_real()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanVerdict {
    pub index: usize,
    pub omega: Vec<f64>,
    pub accepted: bool,
    pub status: String,
    pub first_rejection_step: Option<usize>,
    pub steps_run: usize,
    pub final_residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanReport {
    pub eps: f64,
    pub samples: usize,
    /// Fraction of samples for which the reduction did not converge.
    pub excised_fraction: f64,
    /// Fraction rejected by a small divisor.
    pub rejected_fraction: f64,
    pub verdicts: Vec<ScanVerdict>,
    /// Step of first rejection → count.
    pub rejection_histogram: BTreeMap<usize, usize>,
}

/// ω sampled uniformly in (0, 2π)^n from a seeded stream; the same seed
/// gives the same frequencies for every ε.
pub fn sample_frequencies(n: usize, samples: usize, seed: u64) -> Vec<Vec<f64>> {
    sample_frequencies_in(n, samples, seed, (0.0, 2.0 * PI))
}

/// ω sampled uniformly in (lo, hi)^n.
pub fn sample_frequencies_in(n: usize, samples: usize, seed: u64, (lo, hi): (f64, f64)) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples).map(|_| (0..n).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect()).collect()
}

/// Excised fraction over ω uniform in (0, 2π)^n.
pub fn scan_measure(nu: &[f64], w: &QuadHamComplex, schedule: &KamSchedule, samples: usize, seed: u64) -> Result<ScanReport> {
    scan_measure_in(nu, w, schedule, samples, seed, (0.0, 2.0 * PI))
}

pub fn scan_measure_in(nu: &[f64], w: &QuadHamComplex, schedule: &KamSchedule, samples: usize, seed: u64, range: (f64, f64)) -> Result<ScanReport> {
    if samples == 0 {
        return Err(KamError::Invalid("omega_samples must be at least 1".into()));
    }
    if !(range.0.is_finite() && range.1.is_finite() && range.0 < range.1) {
        return Err(KamError::Invalid(format!("omega range ({}, {}) is empty", range.0, range.1)));
    }
    let omegas = sample_frequencies_in(w.n, samples, seed, range);
    let mut sched = schedule.clone();
    sched.compose = false;
    let verdicts: Vec<ScanVerdict> = omegas
        .par_iter()
        .enumerate()
        .map(|(index, omega)| match reduce(nu, omega, w, &sched) {
            Ok(r) => ScanVerdict {
                index,
                omega: omega.clone(),
                accepted: r.accepted,
                status: r.status.tag().to_string(),
                first_rejection_step: match r.status {
                    ReductionStatus::Rejected { step, .. } => Some(step),
                    _ => None,
                },
                steps_run: r.steps_run,
                final_residual: r.final_residual(),
            },
            Err(e) => ScanVerdict {
                index,
                omega: omega.clone(),
                accepted: false,
                status: format!("error: {e}"),
                first_rejection_step: None,
                steps_run: 0,
                final_residual: f64::NAN,
            },
        })
        .collect();
    let mut hist = BTreeMap::new();
    for v in &verdicts {
        if let Some(s) = v.first_rejection_step {
            *hist.entry(s).or_insert(0) += 1;
        }
    }
    let excised = verdicts.iter().filter(|v| !v.accepted).count();
    let rejected: usize = hist.values().sum();
    Ok(ScanReport {
        eps: schedule.eps,
        samples,
        excised_fraction: excised as f64 / samples as f64,
        rejected_fraction: rejected as f64 / samples as f64,
        verdicts,
        rejection_histogram: hist,
    })
}
