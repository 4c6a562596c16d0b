//! Weyl quantization of quadratic symbols on a truncated tensor Hermite basis
//! and propagation of iψ̇ = H(ωt)ψ.
//!
//! Operators are stored sparsely: a quadratic symbol couples each level only to
//! levels at most two apart per mode. Propagation works in the interaction
//! picture of the diagonal part of H, so the step size is set by the
//! off-diagonal coupling rather than by the largest retained level.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use nalgebra::DVector;

use crate::error::{KamError, Result};
use crate::kam::ReductionResult;
use crate::linalg::{cvec_norm, symmetric_eigh, CMat, RMat, C64};
use crate::quad_ham::{QuadHamReal, RVec};

pub type CVec = DVector<C64>;

const SQRT3_6: f64 = 0.288_675_134_594_812_9;
const NODE_1: f64 = 0.5 - SQRT3_6;
const NODE_2: f64 = 0.5 + SQRT3_6;
const WEIGHT_BIG: f64 = 0.25 + SQRT3_6;
const WEIGHT_SMALL: f64 = 0.25 - SQRT3_6;

/// Tensor basis ψ_{k_1} ⊗ … ⊗ ψ_{k_d} with 0 ≤ k_j < n_basis; the last mode
/// index varies fastest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HermiteBasis {
    pub d: usize,
    pub n_basis: usize,
}

impl HermiteBasis {
    pub fn new(d: usize, n_basis: usize) -> Result<Self> {
        if d == 0 || n_basis < 2 {
            return Err(KamError::Invalid(format!("basis needs d ≥ 1 and n_basis ≥ 2, got d = {d}, n_basis = {n_basis}")));
        }
        Ok(HermiteBasis { d, n_basis })
    }

    pub fn dim(&self) -> usize {
        self.n_basis.pow(self.d as u32)
    }

    pub fn levels(&self, mut index: usize) -> Vec<usize> {
        let mut k = vec![0; self.d];
        for j in (0..self.d).rev() {
            k[j] = index % self.n_basis;
            index /= self.n_basis;
        }
        k
    }

    pub fn index(&self, levels: &[usize]) -> usize {
        levels.iter().fold(0, |acc, &k| acc * self.n_basis + k)
    }

    fn stride(&self, mode: usize) -> usize {
        self.n_basis.pow((self.d - 1 - mode) as u32)
    }

    /// Number of top levels per mode excluded from identity checks.
    pub fn buffer_levels(&self, fraction: f64) -> usize {
        ((fraction * self.n_basis as f64).ceil() as usize).clamp(1, self.n_basis - 1)
    }

    /// True for indices with every k_j < n_basis − buffer.
    pub fn interior_mask(&self, fraction: f64) -> Vec<bool> {
        let cut = self.n_basis - self.buffer_levels(fraction);
        (0..self.dim()).map(|i| self.levels(i).iter().all(|&k| k < cut)).collect()
    }

    /// λ_k = Σ (2k_j + 1) ν_j.
    pub fn lambda(&self, nu: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|i| self.levels(i).iter().zip(nu).map(|(&k, v)| (2 * k + 1) as f64 * v).sum()).collect()
    }
}

/// Row-wise sparse complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseOp {
    pub dim: usize,
    rows: Vec<Vec<(usize, C64)>>,
}

impl SparseOp {
    pub fn zero(dim: usize) -> Self {
        SparseOp { dim, rows: vec![Vec::new(); dim] }
    }

    pub fn identity(dim: usize) -> Self {
        SparseOp::diagonal(&vec![C64::new(1.0, 0.0); dim])
    }

    pub fn diagonal(values: &[C64]) -> Self {
        SparseOp { dim: values.len(), rows: values.iter().enumerate().map(|(i, &v)| vec![(i, v)]).collect() }
    }

    fn from_map(dim: usize, rows: Vec<BTreeMap<usize, C64>>) -> Self {
        SparseOp { dim, rows: rows.into_iter().map(|r| r.into_iter().filter(|(_, v)| *v != C64::new(0.0, 0.0)).collect()).collect() }
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.rows[i].iter().find(|(c, _)| *c == j).map(|(_, v)| *v).unwrap_or_default()
    }

    pub fn add(&self, o: &Self) -> Self {
        self.axpy(C64::new(1.0, 0.0), o)
    }

    /// self + a·o
    pub fn axpy(&self, a: C64, o: &Self) -> Self {
        let rows = (0..self.dim)
            .map(|i| {
                let mut m: BTreeMap<usize, C64> = self.rows[i].iter().cloned().collect();
                for &(j, v) in &o.rows[i] {
                    *m.entry(j).or_default() += a * v;
                }
                m
            })
            .collect();
        SparseOp::from_map(self.dim, rows)
    }

    pub fn scale(&self, a: C64) -> Self {
        SparseOp { dim: self.dim, rows: self.rows.iter().map(|r| r.iter().map(|&(j, v)| (j, a * v)).collect()).collect() }
    }

    pub fn mul(&self, o: &Self) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let mut m = BTreeMap::new();
                for &(k, a) in r {
                    for &(j, b) in &o.rows[k] {
                        *m.entry(j).or_insert(C64::new(0.0, 0.0)) += a * b;
                    }
                }
                m
            })
            .collect();
        SparseOp::from_map(self.dim, rows)
    }

    pub fn adjoint(&self) -> Self {
        let mut rows = vec![Vec::new(); self.dim];
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                rows[j].push((i, v.conj()));
            }
        }
        SparseOp { dim: self.dim, rows }
    }

    pub fn apply(&self, v: &CVec) -> CVec {
        CVec::from_iterator(self.dim, self.rows.iter().map(|r| r.iter().map(|&(j, a)| a * v[j]).sum()))
    }

    /// out += a · self · v
    pub fn apply_add(&self, a: C64, v: &CVec, out: &mut CVec) {
        for (i, r) in self.rows.iter().enumerate() {
            let s: C64 = r.iter().map(|&(j, x)| x * v[j]).sum();
            out[i] += a * s;
        }
    }

    pub fn to_dense(&self) -> CMat {
        let mut m = CMat::zeros(self.dim, self.dim);
        for (i, r) in self.rows.iter().enumerate() {
            for &(j, v) in r {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// max |entry| over rows and columns where the mask holds.
    pub fn max_abs_on(&self, mask: &[bool]) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, r) in self.rows.iter().enumerate() {
            if !mask[i] {
                continue;
            }
            for &(j, v) in r {
                if mask[j] {
                    worst = worst.max(v.norm());
                }
            }
        }
        worst
    }

    pub fn hermitian_defect_on(&self, mask: &[bool]) -> f64 {
        self.axpy(C64::new(-1.0, 0.0), &self.adjoint()).max_abs_on(mask)
    }
}

/// Quantized operator together with a description of its symbol.
#[derive(Clone, Debug, PartialEq)]
pub struct HermiteOperator {
    pub basis: HermiteBasis,
    pub op: SparseOp,
    pub symbol: String,
}

/// Position x_j = (a_j + a_j†)/√2 and momentum D_j = i(a_j† − a_j)/√2.
fn canonical(basis: &HermiteBasis, mode: usize, momentum: bool) -> SparseOp {
    let dim = basis.dim();
    let stride = basis.stride(mode);
    let mut rows = vec![Vec::new(); dim];
    for (i, row) in rows.iter_mut().enumerate() {
        let k = basis.levels(i)[mode];
        if k > 0 {
            let v = (k as f64).sqrt() * FRAC_1_SQRT_2;
            row.push((i - stride, if momentum { C64::new(0.0, v) } else { C64::new(v, 0.0) }));
        }
        if k + 1 < basis.n_basis {
            let v = ((k + 1) as f64).sqrt() * FRAC_1_SQRT_2;
            row.push((i + stride, if momentum { C64::new(0.0, -v) } else { C64::new(v, 0.0) }));
        }
    }
    SparseOp { dim, rows }
}

/// Weyl-ordered monomials of degree ≤ 2 in (x_1..x_d, D_1..D_d): W_a and
/// (W_a W_b + W_b W_a)/2 for a ≤ b, built once per basis.
#[derive(Clone, Debug)]
pub struct MonomialOps {
    pub basis: HermiteBasis,
    linear: Vec<SparseOp>,
    quadratic: Vec<((usize, usize), SparseOp)>,
}

impl MonomialOps {
    pub fn new(basis: HermiteBasis) -> Self {
        let d = basis.d;
        let linear: Vec<SparseOp> = (0..2 * d).map(|a| canonical(&basis, a % d, a >= d)).collect();
        let mut quadratic = Vec::new();
        for a in 0..2 * d {
            for b in a..2 * d {
                let ab = linear[a].mul(&linear[b]);
                let sym = if a == b { ab } else { ab.add(&linear[b].mul(&linear[a])).scale(C64::new(0.5, 0.0)) };
                quadratic.push(((a, b), sym));
            }
        }
        MonomialOps { basis, linear, quadratic }
    }

    pub fn canonical(&self, a: usize) -> &SparseOp {
        &self.linear[a]
    }

    /// Op(½ wᵀSw + Lᵀw + c).
    pub fn quantize(&self, s: &RMat, l: &RVec, c: f64) -> SparseOp {
        let dim = self.basis.dim();
        let mut out = if c == 0.0 { SparseOp::zero(dim) } else { SparseOp::diagonal(&vec![C64::new(c, 0.0); dim]) };
        for ((a, b), op) in &self.quadratic {
            let coef = if a == b { 0.5 * s[(*a, *b)] } else { 0.5 * (s[(*a, *b)] + s[(*b, *a)]) };
            if coef != 0.0 {
                out = out.axpy(C64::new(coef, 0.0), op);
            }
        }
        for (a, op) in self.linear.iter().enumerate() {
            if l[a] != 0.0 {
                out = out.axpy(C64::new(l[a], 0.0), op);
            }
        }
        out
    }

    /// out += Op(½ wᵀSw + Lᵀw + c) v without assembling the operator.
    pub fn apply_symbol(&self, s: &RMat, l: &RVec, c: f64, v: &CVec, out: &mut CVec) {
        if c != 0.0 {
            *out += v * C64::new(c, 0.0);
        }
        for ((a, b), op) in &self.quadratic {
            let coef = if a == b { 0.5 * s[(*a, *b)] } else { 0.5 * (s[(*a, *b)] + s[(*b, *a)]) };
            if coef != 0.0 {
                op.apply_add(C64::new(coef, 0.0), v, out);
            }
        }
        for (a, op) in self.linear.iter().enumerate() {
            if l[a] != 0.0 {
                op.apply_add(C64::new(l[a], 0.0), v, out);
            }
        }
    }
}

/// Op^w of q(θ, ·). Degree ≤ 2 is enforced by the symbol type.
pub fn quantize_quadratic(q: &QuadHamReal, theta: &[f64], n_basis: usize) -> Result<HermiteOperator> {
    let basis = HermiteBasis::new(q.d, n_basis)?;
    let (s, l, c) = q.values_at(theta);
    let op = MonomialOps::new(basis).quantize(&s, &l, c);
    Ok(HermiteOperator { basis, op, symbol: format!("quadratic symbol, d = {}, θ = {:?}", q.d, theta) })
}

/// max over the interior block of |−i[Op f, Op g] − Op{f, g}| for f, g at θ.
pub fn commutator_poisson_check(f: &QuadHamReal, g: &QuadHamReal, theta: &[f64], n_basis: usize, buffer: f64) -> Result<f64> {
    let basis = HermiteBasis::new(f.d, n_basis)?;
    let ops = MonomialOps::new(basis);
    let freeze = |h: &QuadHamReal| -> Result<QuadHamReal> {
        let (s, l, c) = h.values_at(theta);
        QuadHamReal::autonomous(1, &s, &l, c)
    };
    let (ff, gg) = (freeze(f)?, freeze(g)?);
    let (bracket, _) = ff.poisson(&gg, 0, 0.0)?;
    let (sf, lf, cf) = ff.values_at(&[0.0]);
    let (sg, lg, cg) = gg.values_at(&[0.0]);
    let (sb, lb, cb) = bracket.values_at(&[0.0]);
    let a = ops.quantize(&sf, &lf, cf);
    let b = ops.quantize(&sg, &lg, cg);
    let comm = a.mul(&b).axpy(C64::new(-1.0, 0.0), &b.mul(&a)).scale(C64::new(0.0, -1.0));
    let diff = comm.axpy(C64::new(-1.0, 0.0), &ops.quantize(&sb, &lb, cb));
    Ok(diff.max_abs_on(&basis.interior_mask(buffer)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    pub basis: HermiteBasis,
    pub coeffs: CVec,
}

impl QuantumState {
    pub fn eigenstate(basis: HermiteBasis, levels: &[usize]) -> Self {
        let mut c = CVec::zeros(basis.dim());
        c[basis.index(levels)] = C64::new(1.0, 0.0);
        QuantumState { basis, coeffs: c }
    }

    pub fn ground(basis: HermiteBasis) -> Self {
        QuantumState::eigenstate(basis, &vec![0; basis.d])
    }

    /// Product of coherent states centred at (x_j, ξ_j) = w[j], w[d + j],
    /// truncated to the basis and renormalized.
    pub fn coherent(basis: HermiteBasis, w: &RVec) -> Self {
        let d = basis.d;
        let per_mode: Vec<Vec<C64>> = (0..d)
            .map(|j| {
                let alpha = C64::new(w[j], w[d + j]) * FRAC_1_SQRT_2;
                let mut amp = vec![C64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0)];
                for k in 1..basis.n_basis {
                    let next = amp[k - 1] * alpha / (k as f64).sqrt();
                    amp.push(next);
                }
                amp
            })
            .collect();
        let c = CVec::from_fn(basis.dim(), |i, _| basis.levels(i).iter().enumerate().map(|(j, &k)| per_mode[j][k]).product());
        let mut s = QuantumState { basis, coeffs: c };
        let n = s.norm();
        s.coeffs /= C64::new(n, 0.0);
        s
    }

    pub fn random(basis: HermiteBasis, max_level: usize, rng: &mut impl rand::Rng) -> Self {
        let c = CVec::from_fn(basis.dim(), |i, _| {
            if basis.levels(i).iter().all(|&k| k <= max_level) {
                C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let n = cvec_norm(&c);
        QuantumState { basis, coeffs: c / C64::new(n, 0.0) }
    }

    pub fn norm(&self) -> f64 {
        cvec_norm(&self.coeffs)
    }

    /// ‖ψ‖_s = (Σ λ_k^s |c_k|²)^{1/2} with λ_k = Σ (2k_j + 1) ν_j.
    pub fn sobolev_norm(&self, s: f64, nu: &[f64]) -> f64 {
        self.basis.lambda(nu).iter().zip(self.coeffs.iter()).map(|(l, c)| l.powf(s) * c.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Probability in the top buffer shell (some k_j ≥ n_basis − buffer).
    pub fn leak_mass(&self, buffer: f64) -> f64 {
        let mask = self.basis.interior_mask(buffer);
        self.coeffs.iter().zip(mask).filter(|(_, m)| !m).map(|(c, _)| c.norm_sqr()).sum()
    }

    pub fn expectation(&self, op: &SparseOp) -> C64 {
        self.coeffs.dotc(&op.apply(&self.coeffs))
    }

    /// (⟨x_j⟩, ⟨D_j⟩).
    pub fn center(&self, ops: &MonomialOps) -> RVec {
        RVec::from_fn(2 * self.basis.d, |a, _| self.expectation(ops.canonical(a)).re)
    }
}

/// H(t) = Op(h(ωt)) on a Hermite basis, split as a constant diagonal D₀ plus
/// the remainder V(t) = Op(h(ωt)) − D₀.
pub struct DrivenQuadratic {
    pub h: QuadHamReal,
    pub omega: Vec<f64>,
    pub ops: MonomialOps,
    pub diag: Vec<f64>,
    /// Op(h̄) − D₀ for the θ-average h̄.
    static_part: SparseOp,
    mean: (RMat, RVec, f64),
}

impl DrivenQuadratic {
    pub fn new(h: QuadHamReal, omega: &[f64], basis: HermiteBasis) -> Result<Self> {
        if omega.len() != h.n {
            return Err(KamError::Dimension(format!("omega has length {}, Hamiltonian has n = {}", omega.len(), h.n)));
        }
        if basis.d != h.d {
            return Err(KamError::Dimension(format!("basis has d = {}, Hamiltonian has d = {}", basis.d, h.d)));
        }
        let ops = MonomialOps::new(basis);
        let dim2 = 2 * h.d;
        let s0 = RMat::from_fn(dim2, dim2, |i, j| h.s.average()[(i, j)].re);
        let l0 = RVec::from_fn(dim2, |i, _| h.l.average()[(i, 0)].re);
        let c0 = h.c.average()[(0, 0)].re;
        let op0 = ops.quantize(&s0, &l0, c0);
        let diag: Vec<f64> = (0..basis.dim()).map(|i| op0.get(i, i).re).collect();
        let d0 = SparseOp::diagonal(&diag.iter().map(|&x| C64::new(x, 0.0)).collect::<Vec<_>>());
        let static_part = op0.axpy(C64::new(-1.0, 0.0), &d0);
        Ok(DrivenQuadratic { h, omega: omega.to_vec(), ops, diag, static_part, mean: (s0, l0, c0) })
    }

    pub fn basis(&self) -> HermiteBasis {
        self.ops.basis
    }

    fn symbol_at(&self, t: f64) -> (RMat, RVec, f64) {
        let theta: Vec<f64> = self.omega.iter().map(|w| w * t).collect();
        self.h.values_at(&theta)
    }

    pub fn operator_at(&self, t: f64) -> HermiteOperator {
        let (s, l, c) = self.symbol_at(t);
        HermiteOperator { basis: self.basis(), op: self.ops.quantize(&s, &l, c), symbol: format!("H(ωt), t = {t}") }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationOptions {
    pub dt: f64,
    pub leak_tol: f64,
    /// Fraction of top levels per mode forming the leak shell.
    pub buffer: f64,
    pub krylov_tol: f64,
    pub max_krylov: usize,
    /// Observer is called every this many steps (and at the end).
    pub observe_every: usize,
}

impl Default for PropagationOptions {
    fn default() -> Self {
        PropagationOptions { dt: 0.05, leak_tol: 1e-8, buffer: 0.2, krylov_tol: 1e-14, max_krylov: 64, observe_every: 1 }
    }
}

/// exp(−iτA)v for Hermitian A given by its action, by Lanczos with full
/// reorthogonalization; splits τ when the Krylov space is exhausted.
fn expmv_hermitian(apply: &dyn Fn(&CVec) -> CVec, v: &CVec, tau: f64, tol: f64, max_m: usize) -> Result<CVec> {
    let beta0 = cvec_norm(v);
    if beta0 == 0.0 || tau == 0.0 {
        return Ok(v.clone());
    }
    let mut basis: Vec<CVec> = vec![v / C64::new(beta0, 0.0)];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    loop {
        let m = basis.len();
        let mut w = apply(&basis[m - 1]);
        let a = basis[m - 1].dotc(&w).re;
        for _ in 0..2 {
            for q in &basis {
                let p = q.dotc(&w);
                w -= q * p;
            }
        }
        alpha.push(a);
        let b = cvec_norm(&w);
        // Small exponential of the tridiagonal projection.
        let t = RMat::from_fn(m, m, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j || j + 1 == i {
                beta[i.min(j)]
            } else {
                0.0
            }
        });
        let (vals, vecs) = symmetric_eigh(&t);
        let coeff: Vec<C64> = (0..m).map(|i| (0..m).map(|k| C64::from_polar(vecs[(0, k)] * vecs[(i, k)], -tau * vals[k])).sum()).collect();
        let err = b * coeff[m - 1].norm();
        if err <= tol || b <= 1e-300 {
            let mut out = CVec::zeros(v.len());
            for (q, c) in basis.iter().zip(&coeff) {
                out += q * (*c * beta0);
            }
            return Ok(out);
        }
        if m >= max_m {
            if tau.abs() < 1e-12 {
                return Err(KamError::StepControl("Krylov exponential did not converge".into()));
            }
            let half = expmv_hermitian(apply, v, 0.5 * tau, tol, max_m)?;
            return expmv_hermitian(apply, &half, 0.5 * tau, tol, max_m);
        }
        beta.push(b);
        basis.push(w / C64::new(b, 0.0));
    }
}

/// Propagates iψ̇ = H(ωt)ψ from t0 to t1 with a commutator-free fourth-order
/// Magnus scheme in the interaction picture of D₀. The observer sees
/// Schrödinger-picture states.
pub fn propagate(h: &DrivenQuadratic, psi0: &QuantumState, t0: f64, t1: f64, opts: &PropagationOptions, mut observe: impl FnMut(f64, &QuantumState)) -> Result<QuantumState> {
    if !(opts.dt > 0.0) {
        return Err(KamError::Invalid(format!("dt must be positive, got {}", opts.dt)));
    }
    if psi0.basis != h.basis() {
        return Err(KamError::Dimension("state and Hamiltonian live on different bases".into()));
    }
    let steps = (((t1 - t0).abs() / opts.dt) - 1e-9).ceil().max(1.0) as usize;
    let dt = (t1 - t0) / steps as f64;
    let dim = psi0.coeffs.len();
    let mut phi = psi0.coeffs.clone();
    let to_schrodinger = |phi: &CVec, t: f64| -> QuantumState {
        QuantumState { basis: psi0.basis, coeffs: CVec::from_fn(dim, |i, _| phi[i] * C64::from_polar(1.0, -h.diag[i] * (t - t0))) }
    };
    observe(t0, psi0);
    // V_I(t)v = e^{iD₀(t−t0)} V(t) e^{−iD₀(t−t0)} v, with symbol and phases fixed per node.
    struct Node {
        s: RMat,
        l: RVec,
        c: f64,
        phase: Vec<C64>,
    }
    let node = |t: f64| {
        let (s, l, c) = h.symbol_at(t);
        let (s0, l0, c0) = &h.mean;
        Node { s: s - s0, l: l - l0, c: c - c0, phase: h.diag.iter().map(|d| C64::from_polar(1.0, -d * (t - t0))).collect() }
    };
    let interaction = |n: &Node, weight: f64, v: &CVec, out: &mut CVec| {
        let rot = CVec::from_fn(dim, |i, _| v[i] * n.phase[i]);
        let mut hv = CVec::zeros(dim);
        h.static_part.apply_add(C64::new(1.0, 0.0), &rot, &mut hv);
        h.ops.apply_symbol(&n.s, &n.l, n.c, &rot, &mut hv);
        for i in 0..dim {
            out[i] += hv[i] * n.phase[i].conj() * weight;
        }
    };
    for step in 0..steps {
        let t = t0 + step as f64 * dt;
        let (na, nb) = (node(t + NODE_1 * dt), node(t + NODE_2 * dt));
        let first = |v: &CVec| {
            let mut out = CVec::zeros(dim);
            interaction(&na, WEIGHT_BIG, v, &mut out);
            interaction(&nb, WEIGHT_SMALL, v, &mut out);
            out
        };
        let second = |v: &CVec| {
            let mut out = CVec::zeros(dim);
            interaction(&na, WEIGHT_SMALL, v, &mut out);
            interaction(&nb, WEIGHT_BIG, v, &mut out);
            out
        };
        phi = expmv_hermitian(&first, &phi, dt, opts.krylov_tol, opts.max_krylov)?;
        phi = expmv_hermitian(&second, &phi, dt, opts.krylov_tol, opts.max_krylov)?;
        let now = t + dt;
        let last = step + 1 == steps;
        if last || (step + 1) % opts.observe_every.max(1) == 0 {
            let psi = to_schrodinger(&phi, now);
            let leak = psi.leak_mass(opts.buffer);
            if leak > opts.leak_tol {
                return Err(KamError::Leak { leak, tol: opts.leak_tol, t: now });
            }
            observe(now, &psi);
        }
    }
    Ok(to_schrodinger(&phi, t1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormSample {
    pub t: f64,
    pub norm0: f64,
    pub norm_s: f64,
    pub leak: f64,
}

/// Columns t, norm_0, norm_s, leak.
pub fn norms_to_csv(samples: &[NormSample], s: f64) -> String {
    let mut out = format!("# t dimensionless; norm_s is the H^{s} norm with weights lambda_k^{s}; leak is the top-shell probability\nt,norm_0,norm_s,leak\n");
    for r in samples {
        out.push_str(&format!("{:.17e},{:.17e},{:.17e},{:.17e}\n", r.t, r.norm0, r.norm_s, r.leak));
    }
    out
}

/// Norm time series of a propagation.
pub fn track_norms(h: &DrivenQuadratic, psi0: &QuantumState, nu: &[f64], s: f64, t_max: f64, opts: &PropagationOptions) -> Result<(Vec<NormSample>, QuantumState)> {
    let mut samples = Vec::new();
    let fin = propagate(h, psi0, 0.0, t_max, opts, |t, psi| {
        samples.push(NormSample { t, norm0: psi.norm(), norm_s: psi.sobolev_norm(s, nu), leak: psi.leak_mass(opts.buffer) });
    })?;
    Ok((samples, fin))
}

/// ½(ξ² + x²) + a x sin θ; driven at θ = ωt.
pub fn graffi_hamiltonian(a: f64) -> Result<QuadHamReal> {
    let mut h = QuadHamReal::autonomous(1, &RMat::identity(2, 2), &RVec::zeros(2), 0.0)?;
    h.l = graffi_forcing(a)?;
    Ok(h)
}

/// a x sin θ as a forcing series (g, f) = (a sin θ, 0) on T¹.
pub fn graffi_forcing(a: f64) -> Result<crate::torus_fourier::FourierSeries> {
    use crate::torus_fourier::{FourierSeries, Shape};
    let mut l = FourierSeries::zero(1, Shape::Vector(2), 1);
    if a != 0.0 {
        l.set(vec![1], CMat::from_column_slice(2, 1, &[C64::new(0.0, -0.5 * a), C64::new(0.0, 0.0)]))?;
        l.set(vec![-1], CMat::from_column_slice(2, 1, &[C64::new(0.0, 0.5 * a), C64::new(0.0, 0.0)]))?;
    }
    Ok(l)
}

/// Classical solution of ẍ + x + a sin ωt = 0 from (x₀, p₀).
pub fn graffi_classical(omega: f64, a: f64, x0: f64, p0: f64, t: f64) -> (f64, f64) {
    if (omega.abs() - 1.0).abs() < 1e-14 {
        let sgn = omega.signum();
        // x_p = (a/2) t cos t, taken with the sign of ω.
        let (xp, vp) = (0.5 * a * sgn * t * t.cos(), 0.5 * a * sgn * (t.cos() - t * t.sin()));
        let b = p0 - 0.5 * a * sgn;
        (xp + x0 * t.cos() + b * t.sin(), vp - x0 * t.sin() + b * t.cos())
    } else {
        let r = a / (1.0 - omega * omega);
        let (xp, vp) = (-r * (omega * t).sin(), -r * omega * (omega * t).cos());
        let b = p0 + r * omega;
        (xp + x0 * t.cos() + b * t.sin(), vp - x0 * t.sin() + b * t.cos())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraffiReport {
    pub omega: f64,
    pub a: f64,
    pub s: f64,
    pub n_basis: usize,
    pub samples: Vec<NormSample>,
    /// Least-squares slope of log(running max ‖ψ‖_s) against log t on [t_max/4, t_max].
    pub slope_fit: f64,
    /// sup_t ‖ψ(t)‖_s / ‖ψ₀‖_s.
    pub sup_ratio: f64,
    /// max over samples of |(⟨x⟩, ⟨p⟩) − classical|.
    pub center_error: f64,
}

/// Basis size that keeps a resonantly drifting packet (centre ~ a t/2) inside
/// the interior: mean level a²t²/8 plus ten standard deviations plus margin,
/// divided by the interior fraction.
pub fn graffi_basis_size(a: f64, t_max: f64, start_level: usize, buffer: f64) -> usize {
    let mean = (a * t_max).powi(2) / 8.0 + start_level as f64;
    ((mean + 10.0 * mean.sqrt() + 60.0) / (1.0 - buffer)).ceil() as usize
}

/// Propagation of H = −½∂²_x + x²/2 + a x sin ωt from ψ₀ with norm tracking.
pub fn graffi_demo(omega: f64, a: f64, s: f64, t_max: f64, psi0: &QuantumState, opts: &PropagationOptions) -> Result<GraffiReport> {
    if psi0.basis.d != 1 {
        return Err(KamError::Dimension("the driven oscillator demo is one-dimensional".into()));
    }
    let h = DrivenQuadratic::new(graffi_hamiltonian(a)?, &[omega], psi0.basis)?;
    let center0 = psi0.center(&h.ops);
    let mut samples = Vec::new();
    let mut center_error: f64 = 0.0;
    propagate(&h, psi0, 0.0, t_max, opts, |t, psi| {
        samples.push(NormSample { t, norm0: psi.norm(), norm_s: psi.sobolev_norm(s, &[1.0]), leak: psi.leak_mass(opts.buffer) });
        let c = psi.center(&h.ops);
        let (x, p) = graffi_classical(omega, a, center0[0], center0[1], t);
        center_error = center_error.max((c[0] - x).abs().max((c[1] - p).abs()));
    })?;
    let n0 = samples[0].norm_s;
    let sup_ratio = samples.iter().map(|r| r.norm_s / n0).fold(0.0, f64::max);
    let slope_fit = envelope_slope(&samples, t_max / 4.0);
    Ok(GraffiReport { omega, a, s, n_basis: psi0.basis.n_basis, samples, slope_fit, sup_ratio, center_error })
}

/// Slope of log(running max of norm_s) against log t for t ≥ t_from.
pub fn envelope_slope(samples: &[NormSample], t_from: f64) -> f64 {
    let mut run: f64 = 0.0;
    let mut pts = Vec::new();
    for r in samples {
        run = run.max(r.norm_s);
        if r.t >= t_from && r.t > 0.0 {
            pts.push((r.t.ln(), run.ln()));
        }
    }
    let n = pts.len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundedReport {
    pub sup_ratio: f64,
    pub inf_ratio: f64,
    /// max_t |‖ψ(t)‖_s − ‖ψ₀‖_s| / ‖ψ₀‖_s.
    pub max_deviation: f64,
    pub initial_norm_s_plus_2: f64,
    /// max_t |‖ψ(t)‖_s − ‖ψ₀‖_s| / (ε ‖ψ₀‖_{s+2}); the fitted constant of the two-sided bound.
    pub two_sided_constant: f64,
    pub samples: Vec<NormSample>,
}

/// Propagates the quantized Σ ν_j z_j z̄_j + εW from ψ₀ and reports the
/// excursion of ‖ψ(t)‖_s.
#[allow(clippy::too_many_arguments)]
pub fn verify_bounded_sobolev(result: &ReductionResult, w: &crate::quad_ham::QuadHamComplex, eps: f64, s: f64, t_max: f64, psi0: &QuantumState, opts: &PropagationOptions) -> Result<BoundedReport> {
    if !result.accepted {
        return Err(KamError::Invalid(format!("reduction not accepted ({})", result.status.tag())));
    }
    let h = crate::kam::perturbed_hamiltonian(&result.nu, w, eps)?;
    let ham = DrivenQuadratic::new(h, &result.omega, psi0.basis)?;
    let (samples, _) = track_norms(&ham, psi0, &result.nu, s, t_max, opts)?;
    let n0 = samples[0].norm_s;
    let sup_ratio = samples.iter().map(|r| r.norm_s / n0).fold(0.0, f64::max);
    let inf_ratio = samples.iter().map(|r| r.norm_s / n0).fold(f64::INFINITY, f64::min);
    let dev = samples.iter().map(|r| (r.norm_s - n0).abs()).fold(0.0, f64::max);
    let n2 = psi0.sobolev_norm(s + 2.0, &result.nu);
    Ok(BoundedReport {
        sup_ratio,
        inf_ratio,
        max_deviation: dev / n0,
        initial_norm_s_plus_2: n2,
        two_sided_constant: if eps > 0.0 { dev / (eps * n2) } else { 0.0 },
        samples,
    })
}

/// Quasi-energies in [0, ω) from the eigenphases e^{−iET} of the propagator
/// over one period T = 2π/ω (n = 1).
pub fn quasi_energies(h: &DrivenQuadratic, opts: &PropagationOptions) -> Result<Vec<f64>> {
    if h.omega.len() != 1 {
        return Err(KamError::Dimension("quasi-energies need a single forcing frequency".into()));
    }
    let omega = h.omega[0];
    let period = 2.0 * PI / omega;
    let basis = h.basis();
    let dim = basis.dim();
    let mut u = CMat::zeros(dim, dim);
    for j in 0..dim {
        let e = QuantumState { basis, coeffs: CVec::from_fn(dim, |i, _| if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }) };
        let mut o = opts.clone();
        o.leak_tol = f64::INFINITY;
        let out = propagate(h, &e, 0.0, period, &o, |_, _| {})?;
        u.set_column(j, &out.coeffs);
    }
    let (_, tri) = nalgebra::Schur::new(u).unpack();
    let mut e: Vec<f64> = tri.diagonal().iter().map(|z| (-z.arg() / period).rem_euclid(omega)).collect();
    e.sort_by(f64::total_cmp);
    Ok(e)
}

/// max over predicted values of the distance (mod ω) to the nearest computed one.
pub fn quasi_energy_mismatch(predicted: &[f64], computed: &[f64], omega: f64) -> f64 {
    predicted
        .iter()
        .map(|p| {
            computed
                .iter()
                .map(|c| {
                    let y = (p - c).rem_euclid(omega);
                    y.min(omega - y)
                })
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn symbol(s: &[f64], l: &[f64], c: f64) -> QuadHamReal {
        let d = l.len() / 2;
        QuadHamReal::autonomous(1, &RMat::from_row_slice(2 * d, 2 * d, s), &RVec::from_row_slice(l), c).unwrap()
    }

    #[test]
    fn number_operator_is_diagonal() {
        // x² + ξ² has S = 2I.
        let op = quantize_quadratic(&symbol(&[2.0, 0.0, 0.0, 2.0], &[0.0, 0.0], 0.0), &[0.0], 16).unwrap();
        let mask = op.basis.interior_mask(0.2);
        for i in 0..16 {
            if mask[i] {
                assert!((op.op.get(i, i) - C64::new((2 * i + 1) as f64, 0.0)).norm() < 1e-13);
            }
        }
        let off = op.op.axpy(C64::new(-1.0, 0.0), &SparseOp::diagonal(&(0..16).map(|i| op.op.get(i, i)).collect::<Vec<_>>()));
        assert!(off.max_abs_on(&mask) < 1e-13);
        let zero = quantize_quadratic(&symbol(&[0.0; 4], &[0.0, 0.0], 0.0), &[0.0], 8).unwrap();
        assert_eq!(zero.op.nnz(), 0);
    }

    /// Hermite functions on a grid by the stable three-term recurrence.
    fn hermite_functions(n: usize, x: f64) -> Vec<f64> {
        let mut h = vec![PI.powf(-0.25) * (-0.5 * x * x).exp()];
        if n > 1 {
            h.push(2f64.sqrt() * x * h[0]);
        }
        for k in 2..n {
            let v = (2.0 / k as f64).sqrt() * x * h[k - 1] - ((k - 1) as f64 / k as f64).sqrt() * h[k - 2];
            h.push(v);
        }
        h
    }

    #[test]
    fn position_matches_quadrature() {
        let n = 12;
        let op = quantize_quadratic(&symbol(&[0.0; 4], &[1.0, 0.0], 0.0), &[0.0], n).unwrap();
        let (a, b, m) = (-14.0, 14.0, 4000);
        let hgrid = (b - a) / m as f64;
        let mut xm = vec![vec![0.0; n]; n];
        let mut dm = vec![vec![0.0; n]; n];
        for i in 0..=m {
            let x = a + i as f64 * hgrid;
            let f = hermite_functions(n + 1, x);
            let fp = hermite_functions(n + 1, x + 1e-5);
            let fm = hermite_functions(n + 1, x - 1e-5);
            for j in 0..n {
                for k in 0..n {
                    xm[j][k] += hgrid * f[j] * x * f[k];
                    dm[j][k] += hgrid * f[j] * (fp[k] - fm[k]) / 2e-5;
                }
            }
        }
        let dop = quantize_quadratic(&symbol(&[0.0; 4], &[0.0, 1.0], 0.0), &[0.0], n).unwrap();
        for j in 0..n {
            for k in 0..n {
                assert!((op.op.get(j, k) - C64::new(xm[j][k], 0.0)).norm() < 1e-12);
                // D = −i d/dx
                assert!((dop.op.get(j, k) - C64::new(0.0, -dm[j][k])).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn canonical_commutators() {
        let x = symbol(&[0.0; 4], &[1.0, 0.0], 0.0);
        let p = symbol(&[0.0; 4], &[0.0, 1.0], 0.0);
        assert!(commutator_poisson_check(&x, &p, &[0.0], 32, 0.2).unwrap() < 1e-13);
        assert!(commutator_poisson_check(&x, &x, &[0.0], 32, 0.2).unwrap() == 0.0);
        // {x², ξ²} = 4xξ
        let x2 = symbol(&[2.0, 0.0, 0.0, 0.0], &[0.0, 0.0], 0.0);
        let p2 = symbol(&[0.0, 0.0, 0.0, 2.0], &[0.0, 0.0], 0.0);
        assert!(commutator_poisson_check(&x2, &p2, &[0.0], 64, 0.2).unwrap() < 1e-11);
    }

    #[test]
    fn eigenstate_phase_and_unitarity() {
        let basis = HermiteBasis::new(1, 24).unwrap();
        let h0 = DrivenQuadratic::new(symbol(&[1.3, 0.0, 0.0, 1.3], &[0.0, 0.0], 0.0), &[1.0], basis).unwrap();
        let psi = QuantumState::eigenstate(basis, &[3]);
        let out = propagate(&h0, &psi, 0.0, 10.0, &PropagationOptions::default(), |_, _| {}).unwrap();
        let expected = C64::from_polar(1.0, -3.5 * 1.3 * 10.0);
        assert!((out.coeffs[3] - expected).norm() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = crate::homological::tests::random_perturbation(&mut rng, 1, 1, 2, 0.05);
        let h = crate::kam::perturbed_hamiltonian(&[1.0], &w, 1.0).unwrap();
        let dq = DrivenQuadratic::new(h, &[1.7], basis).unwrap();
        let psi = QuantumState::random(basis, 6, &mut rng);
        let mut drift: f64 = 0.0;
        let mut opts = PropagationOptions::default();
        opts.leak_tol = 1.0;
        propagate(&dq, &psi, 0.0, 5.0, &opts, |_, p| drift = drift.max((p.norm() - 1.0).abs())).unwrap();
        assert!(drift < 1e-10);
    }

    #[test]
    fn leak_monitor_aborts() {
        let basis = HermiteBasis::new(1, 16).unwrap();
        let h = DrivenQuadratic::new(graffi_hamiltonian(2.0).unwrap(), &[1.0], basis).unwrap();
        let r = propagate(&h, &QuantumState::ground(basis), 0.0, 20.0, &PropagationOptions::default(), |_, _| {});
        assert!(matches!(r, Err(KamError::Leak { .. })));
    }

    #[test]
    fn autonomous_norms_constant() {
        let basis = HermiteBasis::new(1, 40).unwrap();
        let psi = QuantumState::coherent(basis, &RVec::from_vec(vec![0.8, -0.3]));
        let rep = graffi_demo(2.0, 0.0, 1.0, 20.0, &psi, &PropagationOptions::default()).unwrap();
        for r in &rep.samples {
            assert!((r.norm_s - rep.samples[0].norm_s).abs() < 1e-12);
        }
        assert!(rep.center_error < 1e-10);
    }
}
