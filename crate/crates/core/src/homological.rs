//! Homological equation {h, χ} − ω·∇_θχ + q = ⟨z, Ñ z̄⟩ + r for a normal
//! form h = ω·I + ⟨z, N z̄⟩, and the exact reduction of purely linear forcing.
//!
//! In the eigenbasis N = U diag(α) Uᴴ every block decouples into scalar
//! divisions. With q̂ expanded in e^{ik·θ}, the divisors are
//!
//! * zz̄ block: k·ω − α_i + α_j,
//! * zz block:  k·ω − α_i − α_j,
//! * linear:    k·ω − α_i.

use std::fmt::Write as _;

use crate::error::{KamError, Result};
use crate::linalg::{hermitian_eigh, hermitize, op_norm, CMat, C64, I};
use crate::quad_ham::QuadHamComplex;
use crate::torus_fourier::{l1, modes_in_ball, FourierSeries, Mode, Shape};

/// ω together with the Hermitian matrix N of ⟨z, N z̄⟩ and the unperturbed ν.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalForm {
    pub omega: Vec<f64>,
    pub n_mat: CMat,
    pub nu: Vec<f64>,
}

impl NormalForm {
    /// N₀ = diag ν.
    pub fn diagonal(omega: Vec<f64>, nu: Vec<f64>) -> Self {
        let d = nu.len();
        let n_mat = CMat::from_fn(d, d, |i, j| if i == j { C64::new(nu[i], 0.0) } else { C64::new(0.0, 0.0) });
        NormalForm { omega, n_mat, nu }
    }

    pub fn d(&self) -> usize {
        self.nu.len()
    }

    /// Lower bound ν₀ = min ν_j.
    pub fn nu0(&self) -> f64 {
        self.nu.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// ‖N − N₀‖ and the admissible bound min(1, ν₀)/max(4, d).
    pub fn deviation(&self) -> (f64, f64) {
        let n0 = Self::diagonal(self.omega.clone(), self.nu.clone()).n_mat;
        let dev = op_norm(&(&self.n_mat - n0));
        (dev, self.nu0().min(1.0) / (self.d() as f64).max(4.0))
    }

    pub fn check_assumption(&self) -> Result<()> {
        let (dev, bound) = self.deviation();
        if dev >= bound {
            return Err(KamError::AssumptionViolated { deviation: dev, bound });
        }
        Ok(())
    }

    fn k_dot_omega(&self, k: &[i32]) -> f64 {
        k.iter().zip(&self.omega).map(|(&a, &w)| a as f64 * w).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Block {
    Zzb,
    Zz,
    Lin,
}

impl Block {
    pub fn tag(self) -> &'static str {
        match self {
            Block::Zzb => "zzb",
            Block::Zz => "zz",
            Block::Lin => "lin",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Divisor {
    pub k: Mode,
    pub block: Block,
    pub i: usize,
    /// Second eigen-index; `None` for the linear block.
    pub j: Option<usize>,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DivisorReport {
    pub eigenvalues: Vec<f64>,
    pub divisors: Vec<Divisor>,
}

impl DivisorReport {
    pub fn min_modulus(&self) -> f64 {
        self.divisors.iter().map(|d| d.value.abs()).fold(f64::INFINITY, f64::min)
    }

    /// Columns k, block, i, j, divisor; k as space-separated integers, j empty for the linear block.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,block,i,j,divisor\n");
        for d in &self.divisors {
            let k: Vec<String> = d.k.iter().map(|x| x.to_string()).collect();
            let j = d.j.map(|j| j.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{:.17e}", k.join(" "), d.block.tag(), d.i, j, d.value);
        }
        out
    }
}

/// All divisors over |k|₁ ≤ K (zz pairs listed with i ≤ j).
pub fn divisor_scan(nf: &NormalForm, k_max: usize) -> DivisorReport {
    let (alpha, _) = hermitian_eigh(&nf.n_mat);
    let d = alpha.len();
    let mut divisors = Vec::new();
    for k in modes_in_ball(nf.omega.len(), k_max) {
        let kw = nf.k_dot_omega(&k);
        for i in 0..d {
            for j in 0..d {
                divisors.push(Divisor { k: k.clone(), block: Block::Zzb, i, j: Some(j), value: kw - alpha[i] + alpha[j] });
            }
        }
        for i in 0..d {
            for j in i..d {
                divisors.push(Divisor { k: k.clone(), block: Block::Zz, i, j: Some(j), value: kw - alpha[i] - alpha[j] });
            }
        }
        for i in 0..d {
            divisors.push(Divisor { k: k.clone(), block: Block::Lin, i, j: None, value: kw - alpha[i] });
        }
    }
    DivisorReport { eigenvalues: alpha, divisors }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomologicalSolution {
    pub chi: QuadHamComplex,
    pub remainder: QuadHamComplex,
    pub n_tilde: CMat,
    /// Smallest |divisor| among the entries actually divided.
    pub min_divisor: f64,
    /// The divisor attaining `min_divisor`.
    pub worst: Option<Divisor>,
    pub accepted: bool,
}

/// Options controlling which entries are solved.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub k_max: usize,
    pub kappa: f64,
    /// Entries (in N's eigenbasis) with modulus ≤ drop_tol are left in the
    /// remainder without being divided.
    pub drop_tol: f64,
}

struct Tracker {
    kappa: f64,
    min: f64,
    worst: Option<Divisor>,
    accepted: bool,
}

impl Tracker {
    fn visit(&mut self, k: &[i32], block: Block, i: usize, j: Option<usize>, value: f64) -> bool {
        if value.abs() < self.min {
            self.min = value.abs();
            self.worst = Some(Divisor { k: k.to_vec(), block, i, j, value });
        }
        if value.abs() < self.kappa {
            self.accepted = false;
            return false;
        }
        true
    }
}

pub fn solve_homological(nf: &NormalForm, q: &QuadHamComplex, opts: SolveOptions) -> Result<HomologicalSolution> {
    nf.check_assumption()?;
    let d = nf.d();
    if q.d != d || q.n != nf.omega.len() {
        return Err(KamError::Dimension(format!("perturbation has (d, n) = ({}, {}), normal form ({}, {})", q.d, q.n, d, nf.omega.len())));
    }
    let scale = q.norm(0.0)?.max(1e-300);
    let defect = q.reality_defect();
    if defect > 1e-10 * scale {
        return Err(KamError::NotRealValued(defect));
    }
    if !(opts.kappa > 0.0) {
        return Err(KamError::Invalid(format!("kappa must be positive, got {}", opts.kappa)));
    }
    let n = q.n;
    let k_store = q.k_store();
    let (alpha, u) = hermitian_eigh(&nf.n_mat);
    let uh = u.adjoint();
    let ut = u.transpose();
    let ubar = u.map(|z| z.conj());
    let mut chi = QuadHamComplex::zero(d, n, opts.k_max.min(k_store));
    let mut rem = QuadHamComplex::zero(d, n, k_store);
    rem.c = q.c.clone();
    let mut tr = Tracker { kappa: opts.kappa, min: f64::INFINITY, worst: None, accepted: true };
    let zero_mode = vec![0; n];
    let mut n_tilde = CMat::zeros(d, d);

    for (k, qk) in q.qzzb.coeffs() {
        if *k == zero_mode {
            n_tilde = hermitize(qk);
            continue;
        }
        if l1(k) > opts.k_max {
            rem.qzzb.set(k.clone(), qk.clone())?;
            continue;
        }
        let kw = nf.k_dot_omega(k);
        let y = &uh * qk * &u;
        let mut x = CMat::zeros(d, d);
        let mut r = CMat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                if y[(i, j)].norm() <= opts.drop_tol || !tr.visit(k, Block::Zzb, i, Some(j), kw - alpha[i] + alpha[j]) {
                    r[(i, j)] = y[(i, j)];
                } else {
                    x[(i, j)] = -I * y[(i, j)] / (kw - alpha[i] + alpha[j]);
                }
            }
        }
        store(&mut chi.qzzb, k, &u * x * &uh)?;
        store(&mut rem.qzzb, k, &u * r * &uh)?;
    }

    for (k, qk) in q.qzz.coeffs() {
        if l1(k) > opts.k_max {
            rem.qzz.set(k.clone(), qk.clone())?;
            continue;
        }
        let kw = nf.k_dot_omega(k);
        let y = &uh * qk * &ubar;
        let mut x = CMat::zeros(d, d);
        let mut r = CMat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                let (a, b) = (i.min(j), i.max(j));
                if y[(i, j)].norm() <= opts.drop_tol || !tr.visit(k, Block::Zz, a, Some(b), kw - alpha[i] - alpha[j]) {
                    r[(i, j)] = y[(i, j)];
                } else {
                    x[(i, j)] = -I * y[(i, j)] / (kw - alpha[i] - alpha[j]);
                }
            }
        }
        store(&mut chi.qzz, k, &u * x * &ut)?;
        store(&mut rem.qzz, k, &u * r * &ut)?;
    }

    for (k, qk) in q.qz.coeffs() {
        if l1(k) > opts.k_max {
            rem.qz.set(k.clone(), qk.clone())?;
            continue;
        }
        let kw = nf.k_dot_omega(k);
        let y = &uh * qk;
        let mut x = CMat::zeros(d, 1);
        let mut r = CMat::zeros(d, 1);
        for i in 0..d {
            if y[(i, 0)].norm() <= opts.drop_tol || !tr.visit(k, Block::Lin, i, None, kw - alpha[i]) {
                r[(i, 0)] = y[(i, 0)];
            } else {
                x[(i, 0)] = -I * y[(i, 0)] / (kw - alpha[i]);
            }
        }
        store(&mut chi.qz, k, &u * x)?;
        store(&mut rem.qz, k, &u * r)?;
    }

    chi.project_real();
    rem.project_real();
    Ok(HomologicalSolution { chi, remainder: rem, n_tilde, min_divisor: tr.min, worst: tr.worst, accepted: tr.accepted })
}

fn store(s: &mut FourierSeries, k: &Mode, v: CMat) -> Result<()> {
    if v.iter().any(|z| z.norm() > 0.0) {
        s.set(k.clone(), v)?;
    }
    Ok(())
}

/// {h_N, χ} − ω·∇_θχ + q − ⟨z, Ñz̄⟩ − r, the defect of a homological solve.
pub fn homological_defect(nf: &NormalForm, q: &QuadHamComplex, sol: &HomologicalSolution) -> Result<QuadHamComplex> {
    let n = q.n;
    let hn = QuadHamComplex::normal_form(n, &nf.n_mat)?;
    let k = q.k_store();
    let (b, _) = hn.poisson(&sol.chi, k, 0.0)?;
    let nt = QuadHamComplex::normal_form(n, &sol.n_tilde)?;
    b.sub(&sol.chi.derivative_along(&nf.omega))?.add(q)?.sub(&nt)?.sub(&sol.remainder)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForcingCase {
    Nonresonant,
    Resonant,
}

/// A forcing mode left in the reduced Hamiltonian. In the frame rotating
/// with the unperturbed oscillator it acts as the constant c₁ x_j + c₂ ξ_j.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualMode {
    pub k: Mode,
    pub j: usize,
    /// Coefficient of e^{ik·θ} z_j.
    pub coefficient: C64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearReduction {
    /// old = new + V(θ), a real vector series of length 2d.
    pub translation: FourierSeries,
    /// Linear generator whose time-1 flow is the translation.
    pub chi: QuadHamComplex,
    pub residual_modes: Vec<ResidualMode>,
    pub case: ForcingCase,
    /// Smallest |k·ω ∓ ν_j| among solved modes.
    pub min_divisor: f64,
}

/// Exactly resonant divisors (|k·ω − ν_j| below this) are kept as residual modes.
pub const EXACT_RESONANCE: f64 = 1e-12;

/// Removes linear forcing ⟨L(θ), w⟩ from Σ ν_j z_j z̄_j by a θ-dependent
/// translation. `forcing` is a real vector series of length 2d with
/// components (g_1..g_d, f_1..f_d) for Σ g_j x_j + f_j ξ_j.
pub fn reduce_linear_forcing(nu: &[f64], omega: &[f64], forcing: &FourierSeries, gamma: f64, tau: f64) -> Result<LinearReduction> {
    let d = nu.len();
    let n = omega.len();
    if forcing.shape() != Shape::Vector(2 * d) || forcing.n() != n {
        return Err(KamError::Shape(format!("forcing must be a length-{} vector series on T^{}", 2 * d, n)));
    }
    if forcing.real_valued_defect() > 1e-12 * forcing.analytic_norm(0.0)?.value.max(1e-300) {
        return Err(KamError::NotRealValued(forcing.real_valued_defect()));
    }
    let mut h = crate::quad_ham::QuadHamReal::zero(d, n, forcing.k_store());
    h.l = forcing.clone();
    let q = h.to_complex()?;
    let mut chi = QuadHamComplex::zero(d, n, forcing.k_store());
    let mut residual = Vec::new();
    let mut min_div = f64::INFINITY;
    for (k, v) in q.qz.coeffs() {
        let kw: f64 = k.iter().zip(omega).map(|(&a, &w)| a as f64 * w).sum();
        let mut x = CMat::zeros(d, 1);
        for j in 0..d {
            let c = v[(j, 0)];
            if c.norm() == 0.0 {
                continue;
            }
            let div = kw - nu[j];
            if div.abs() < EXACT_RESONANCE {
                let s2 = std::f64::consts::SQRT_2;
                residual.push(ResidualMode { k: k.clone(), j, coefficient: c, c1: s2 * c.im, c2: s2 * c.re });
                continue;
            }
            let bound = gamma / (1.0 + (l1(k) as f64).powf(tau));
            if div.abs() < bound {
                return Err(KamError::NearResonance { mode: k.clone(), index: j, divisor: div });
            }
            min_div = min_div.min(div.abs());
            x[(j, 0)] = -I * c / div;
        }
        store(&mut chi.qz, k, x)?;
    }
    let real = chi.to_real()?;
    let j = crate::linalg::to_complex(&crate::linalg::symplectic_j(d));
    let mut translation = real.l.map_values(Shape::Vector(2 * d), |l| &j * l)?;
    translation.project_real();
    let case = if residual.is_empty() { ForcingCase::Nonresonant } else { ForcingCase::Resonant };
    Ok(LinearReduction { translation, chi, residual_modes: residual, case, min_divisor: min_div })
}

impl LinearReduction {
    /// Linear part left after conjugating by the translation, computed by the
    /// exact bracket q + {h₀, χ} − ω·∇χ (exact for linear χ up to constants).
    pub fn residual_forcing(&self, nu: &[f64], omega: &[f64], forcing: &FourierSeries) -> Result<QuadHamComplex> {
        let d = nu.len();
        let n = omega.len();
        let mut h = crate::quad_ham::QuadHamReal::zero(d, n, forcing.k_store());
        h.l = forcing.clone();
        let q = h.to_complex()?;
        let nf = NormalForm::diagonal(omega.to_vec(), nu.to_vec());
        let h0 = QuadHamComplex::normal_form(n, &nf.n_mat)?;
        let (b, _) = h0.poisson(&self.chi, forcing.k_store(), 0.0)?;
        let mut out = q.add(&b)?.sub(&self.chi.derivative_along(omega))?;
        out.c = FourierSeries::zero(n, Shape::Scalar, 0);
        Ok(out)
    }
}
