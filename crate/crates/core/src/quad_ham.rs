//! Real-valued polynomials of degree ≤ 2 on R^{2d} with quasiperiodic
//! coefficients.
//!
//! Real form: h(θ, w) = ½ wᵀS(θ)w + L(θ)ᵀw + c(θ) with w = (x, ξ).
//!
//! Complex form, with z = (ξ − i x)/√2:
//! q = ⟨z, Qzz z⟩ + ⟨z, Qzzb z̄⟩ + ⟨z̄, conj(Qzz) z̄⟩ + ⟨Qz, z⟩ + ⟨conj(Qz), z̄⟩ + c
//! with the bilinear pairing ⟨a, b⟩ = Σ a_j b_j.
//!
//! Poisson brackets use {f, g} = ∇fᵀ J ∇g, so Hamilton's equations are
//! ẇ = J∇h and d/dt f = {f, h}.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{KamError, Result};
use crate::linalg::{
    exp_minus_identity_and_phi1, expm, gauss_legendre_01, max_abs, real_part, symplectic_j, to_complex, CMat, RMat, C64, I,
};
use crate::torus_fourier::{default_grid, expand_grid_values, AliasingReport, FourierSeries, SeriesFlags, Shape};

pub type RVec = DVector<f64>;

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// w = M ζ with ζ = (z, z̄).
pub fn transport_m(d: usize) -> CMat {
    let mut m = CMat::zeros(2 * d, 2 * d);
    for j in 0..d {
        m[(j, j)] = I * SQRT_HALF;
        m[(j, d + j)] = -I * SQRT_HALF;
        m[(d + j, j)] = C64::new(SQRT_HALF, 0.0);
        m[(d + j, d + j)] = C64::new(SQRT_HALF, 0.0);
    }
    m
}

/// ζ = N w, the inverse of `transport_m`.
pub fn transport_n(d: usize) -> CMat {
    let mut n = CMat::zeros(2 * d, 2 * d);
    for j in 0..d {
        n[(j, j)] = -I * SQRT_HALF;
        n[(j, d + j)] = C64::new(SQRT_HALF, 0.0);
        n[(d + j, j)] = I * SQRT_HALF;
        n[(d + j, d + j)] = C64::new(SQRT_HALF, 0.0);
    }
    n
}

fn real_flags() -> SeriesFlags {
    SeriesFlags { real_valued: true, hermitian: false, symmetric: false }
}

fn bracket_parts(
    sf: &FourierSeries,
    lf: &FourierSeries,
    sg: &FourierSeries,
    lg: &FourierSeries,
    omega: &CMat,
    k_out: usize,
    sigma: f64,
) -> Result<(FourierSeries, FourierSeries, FourierSeries, f64)> {
    let dim = omega.nrows();
    let (s1, t1) = sf.convolve_with(sg, Shape::Matrix(dim), k_out, sigma, |a, b| a * omega * b - b * omega * a)?;
    let (l1, t2) = sf.convolve_with(lg, Shape::Vector(dim), k_out, sigma, |a, b| a * omega * b)?;
    let (l2, t3) = sg.convolve_with(lf, Shape::Vector(dim), k_out, sigma, |a, b| a * omega * b)?;
    let (c, t4) = lf.convolve_with(lg, Shape::Scalar, k_out, sigma, |a, b| a.transpose() * omega * b)?;
    Ok((s1, l1.sub(&l2)?, c, t1 + t2 + t3 + t4))
}

/// Real-coordinate quadratic Hamiltonian.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadHamReal {
    pub d: usize,
    pub n: usize,
    pub s: FourierSeries,
    pub l: FourierSeries,
    pub c: FourierSeries,
}

impl QuadHamReal {
    pub fn zero(d: usize, n: usize, k_store: usize) -> Self {
        QuadHamReal {
            d,
            n,
            s: FourierSeries::zero(n, Shape::Matrix(2 * d), k_store),
            l: FourierSeries::zero(n, Shape::Vector(2 * d), k_store),
            c: FourierSeries::zero(n, Shape::Scalar, k_store),
        }
    }

    /// θ-independent Hamiltonian ½wᵀSw + Lᵀw + c.
    pub fn autonomous(n: usize, s: &RMat, l: &RVec, c: f64) -> Result<Self> {
        let dim = s.nrows();
        if dim % 2 != 0 || s.ncols() != dim || l.len() != dim {
            return Err(KamError::Shape(format!("S is {}x{}, L has {} entries", s.nrows(), s.ncols(), l.len())));
        }
        let lm = CMat::from_fn(dim, 1, |i, _| C64::new(l[i], 0.0));
        Ok(QuadHamReal {
            d: dim / 2,
            n,
            s: FourierSeries::constant(n, to_complex(s), 0)?,
            l: FourierSeries::constant(n, lm, 0)?,
            c: FourierSeries::constant(n, CMat::from_element(1, 1, C64::new(c, 0.0)), 0)?,
        })
    }

    fn check(&self, o: &Self) -> Result<()> {
        if self.d != o.d || self.n != o.n {
            return Err(KamError::Dimension(format!("(d, n) = ({}, {}) vs ({}, {})", self.d, self.n, o.d, o.n)));
        }
        Ok(())
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        self.check(o)?;
        Ok(QuadHamReal { d: self.d, n: self.n, s: self.s.add(&o.s)?, l: self.l.add(&o.l)?, c: self.c.add(&o.c)? })
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        self.add(&o.scale(-1.0))
    }

    pub fn scale(&self, a: f64) -> Self {
        QuadHamReal { d: self.d, n: self.n, s: self.s.scale_real(a), l: self.l.scale_real(a), c: self.c.scale_real(a) }
    }

    /// ω·∇_θ of the Hamiltonian, i.e. its explicit time derivative along θ = ωt.
    pub fn derivative_along(&self, omega: &[f64]) -> Self {
        QuadHamReal {
            d: self.d,
            n: self.n,
            s: self.s.derivative_along(omega),
            l: self.l.derivative_along(omega),
            c: self.c.derivative_along(omega),
        }
    }

    /// (S(θ), L(θ), c(θ)) as real data.
    pub fn values_at(&self, theta: &[f64]) -> (RMat, RVec, f64) {
        let s = real_part(&self.s.evaluate(theta));
        let l = real_part(&self.l.evaluate(theta)).column(0).into_owned();
        let c = self.c.evaluate(theta)[(0, 0)].re;
        (s, l, c)
    }

    /// Real data at every point of the uniform grid (see `torus_fourier::grid_points`).
    pub fn grid_values(&self, g: usize) -> Vec<(RMat, RVec, f64)> {
        let s = self.s.sample_on_grid(g);
        let l = self.l.sample_on_grid(g);
        let c = self.c.sample_on_grid(g);
        s.iter()
            .zip(&l)
            .zip(&c)
            .map(|((s, l), c)| (real_part(s), real_part(l).column(0).into_owned(), c[(0, 0)].re))
            .collect()
    }

    pub fn evaluate(&self, theta: &[f64], w: &[f64]) -> f64 {
        let (s, l, c) = self.values_at(theta);
        let w = RVec::from_column_slice(w);
        0.5 * w.dot(&(&s * &w)) + l.dot(&w) + c
    }

    /// Largest violation of the reality and symmetry flags.
    pub fn reality_defect(&self) -> f64 {
        self.s
            .real_valued_defect()
            .max(self.s.symmetric_defect())
            .max(self.l.real_valued_defect())
            .max(self.c.real_valued_defect())
    }

    pub fn project_real(&mut self) {
        self.s.project_real();
        self.s.project_symmetric();
        self.l.project_real();
        self.c.project_real();
    }

    /// {f, g} computed on the coefficient data.
    pub fn poisson(&self, o: &Self, k_out: usize, sigma: f64) -> Result<(Self, f64)> {
        self.check(o)?;
        let j = to_complex(&symplectic_j(self.d));
        let (s, l, c, tail) = bracket_parts(&self.s, &self.l, &o.s, &o.l, &j, k_out, sigma)?;
        let mut out = QuadHamReal { d: self.d, n: self.n, s, l, c };
        out.s.set_flags(SeriesFlags { real_valued: true, hermitian: false, symmetric: true });
        out.l.set_flags(real_flags());
        out.c.set_flags(real_flags());
        Ok((out, tail))
    }

    pub fn to_complex(&self) -> Result<QuadHamComplex> {
        let d = self.d;
        let m = transport_m(d);
        let mt = m.transpose();
        let k = self.s.k_store().max(self.l.k_store());
        let g = self.s.map_values(Shape::Matrix(2 * d), |s| (&mt * s * &m) * C64::new(0.5, 0.0))?;
        let qzz = g.map_values(Shape::Matrix(d), |g| g.view((0, 0), (d, d)).into_owned())?;
        let qzzb = g.map_values(Shape::Matrix(d), |g| g.view((0, d), (d, d)) * C64::new(2.0, 0.0))?;
        let lz = self.l.map_values(Shape::Vector(d), |l| (&mt * l).rows(0, d).into_owned())?;
        let mut out = QuadHamComplex {
            d,
            n: self.n,
            qzz: with_store(qzz, k),
            qzzb: with_store(qzzb, k),
            qz: with_store(lz, k),
            c: self.c.clone(),
        };
        out.qzz.prune(0.0);
        out.qzzb.prune(0.0);
        out.qz.prune(0.0);
        out.qzz.set_flags(SeriesFlags { symmetric: true, ..Default::default() });
        out.qzzb.set_flags(SeriesFlags { hermitian: true, ..Default::default() });
        Ok(out)
    }
}

fn with_store(s: FourierSeries, k: usize) -> FourierSeries {
    let mut out = FourierSeries::zero(s.n(), s.shape(), k.max(s.k_store()));
    for (m, v) in s.coeffs() {
        out.set(m.clone(), v.clone()).expect("mode within storage ball");
    }
    out.with_flags(s.flags())
}

/// Complex-coordinate quadratic Hamiltonian.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadHamComplex {
    pub d: usize,
    pub n: usize,
    pub qzz: FourierSeries,
    pub qzzb: FourierSeries,
    pub qz: FourierSeries,
    pub c: FourierSeries,
}

impl QuadHamComplex {
    pub fn zero(d: usize, n: usize, k_store: usize) -> Self {
        QuadHamComplex {
            d,
            n,
            qzz: FourierSeries::zero(n, Shape::Matrix(d), k_store),
            qzzb: FourierSeries::zero(n, Shape::Matrix(d), k_store),
            qz: FourierSeries::zero(n, Shape::Vector(d), k_store),
            c: FourierSeries::zero(n, Shape::Scalar, k_store),
        }
    }

    /// ⟨z, N z̄⟩ with constant Hermitian N.
    pub fn normal_form(n: usize, nmat: &CMat) -> Result<Self> {
        let d = nmat.nrows();
        let mut q = Self::zero(d, n, 0);
        q.qzzb.set(vec![0; n], nmat.clone())?;
        Ok(q)
    }

    pub fn k_store(&self) -> usize {
        self.qzz.k_store().max(self.qzzb.k_store()).max(self.qz.k_store()).max(self.c.k_store())
    }

    fn check(&self, o: &Self) -> Result<()> {
        if self.d != o.d || self.n != o.n {
            return Err(KamError::Dimension(format!("(d, n) = ({}, {}) vs ({}, {})", self.d, self.n, o.d, o.n)));
        }
        Ok(())
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        self.check(o)?;
        Ok(QuadHamComplex {
            d: self.d,
            n: self.n,
            qzz: self.qzz.add(&o.qzz)?,
            qzzb: self.qzzb.add(&o.qzzb)?,
            qz: self.qz.add(&o.qz)?,
            c: self.c.add(&o.c)?,
        })
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        self.add(&o.scale(-1.0))
    }

    pub fn scale(&self, a: f64) -> Self {
        QuadHamComplex {
            d: self.d,
            n: self.n,
            qzz: self.qzz.scale_real(a),
            qzzb: self.qzzb.scale_real(a),
            qz: self.qz.scale_real(a),
            c: self.c.scale_real(a),
        }
    }

    /// ω·∇_θ applied to every block.
    pub fn derivative_along(&self, omega: &[f64]) -> Self {
        QuadHamComplex {
            d: self.d,
            n: self.n,
            qzz: self.qzz.derivative_along(omega),
            qzzb: self.qzzb.derivative_along(omega),
            qz: self.qz.derivative_along(omega),
            c: self.c.derivative_along(omega),
        }
    }

    /// [q]_σ: majorant norms of the three dynamical blocks (constants excluded).
    pub fn norm(&self, sigma: f64) -> Result<f64> {
        Ok(self.qzz.analytic_norm(sigma)?.value + self.qzzb.analytic_norm(sigma)?.value + self.qz.analytic_norm(sigma)?.value)
    }

    /// Largest violation of the conditions that make q real on real phase space.
    pub fn reality_defect(&self) -> f64 {
        self.qzz.symmetric_defect().max(self.qzzb.hermitian_defect()).max(self.c.real_valued_defect())
    }

    pub fn project_real(&mut self) {
        self.qzz.project_symmetric();
        self.qzzb.project_hermitian();
        self.c.project_real();
    }

    /// Drops coefficients at or below `tol` in every block.
    pub fn prune(&mut self, tol: f64) {
        self.qzz.prune(tol);
        self.qzzb.prune(tol);
        self.qz.prune(tol);
        self.c.prune(tol);
    }

    /// Value at real θ and complex z (z̄ taken as the conjugate of z).
    pub fn evaluate(&self, theta: &[f64], z: &[C64]) -> C64 {
        let zv = CMat::from_column_slice(z.len(), 1, z);
        let zb = zv.map(|v| v.conj());
        let a = self.qzz.evaluate(theta);
        let b = self.qzzb.evaluate(theta);
        let v = self.qz.evaluate(theta);
        let c = self.c.evaluate(theta)[(0, 0)];
        let quad = (zv.transpose() * &a * &zv)[(0, 0)]
            + (zv.transpose() * &b * &zb)[(0, 0)]
            + (zb.transpose() * a.map(|x| x.conj()) * &zb)[(0, 0)];
        let lin = (v.transpose() * &zv)[(0, 0)] + (v.map(|x| x.conj()).transpose() * &zb)[(0, 0)];
        quad + lin + c
    }

    /// The symmetric 2d×2d matrix G(θ) and vector ℓ(θ) with q = ζᵀGζ + ℓᵀζ + c.
    fn zeta_form(&self) -> Result<(FourierSeries, FourierSeries)> {
        let d = self.d;
        let k = self.k_store();
        let qzz_c = self.qzz.conj();
        let qz_c = self.qz.conj();
        let mut keys: Vec<Vec<i32>> = self
            .qzz
            .coeffs()
            .chain(self.qzzb.coeffs())
            .chain(qzz_c.coeffs())
            .map(|(m, _)| m.clone())
            .collect();
        keys.sort();
        keys.dedup();
        let mut g = FourierSeries::zero(self.n, Shape::Matrix(2 * d), k);
        for m in keys {
            let a = self.qzz.coeff_or_zero(&m);
            let b = self.qzzb.coeff_or_zero(&m) * C64::new(0.5, 0.0);
            let cc = qzz_c.coeff_or_zero(&m);
            let mut gm = CMat::zeros(2 * d, 2 * d);
            gm.view_mut((0, 0), (d, d)).copy_from(&a);
            gm.view_mut((0, d), (d, d)).copy_from(&b);
            gm.view_mut((d, 0), (d, d)).copy_from(&b.transpose());
            gm.view_mut((d, d), (d, d)).copy_from(&cc);
            g.set(m, gm)?;
        }
        let mut keys: Vec<Vec<i32>> = self.qz.coeffs().chain(qz_c.coeffs()).map(|(m, _)| m.clone()).collect();
        keys.sort();
        keys.dedup();
        let mut l = FourierSeries::zero(self.n, Shape::Vector(2 * d), k);
        for m in keys {
            let a = self.qz.coeff_or_zero(&m);
            let b = qz_c.coeff_or_zero(&m);
            let mut v = CMat::zeros(2 * d, 1);
            v.view_mut((0, 0), (d, 1)).copy_from(&a);
            v.view_mut((d, 0), (d, 1)).copy_from(&b);
            l.set(m, v)?;
        }
        Ok((g, l))
    }

    fn from_zeta_form(d: usize, n: usize, g: &FourierSeries, l: &FourierSeries, c: FourierSeries) -> Result<Self> {
        let mut q = QuadHamComplex {
            d,
            n,
            qzz: g.map_values(Shape::Matrix(d), |g| g.view((0, 0), (d, d)).into_owned())?,
            qzzb: g.map_values(Shape::Matrix(d), |g| g.view((0, d), (d, d)) * C64::new(2.0, 0.0))?,
            qz: l.map_values(Shape::Vector(d), |l| l.rows(0, d).into_owned())?,
            c,
        };
        q.qzz.prune(0.0);
        q.qzzb.prune(0.0);
        q.qz.prune(0.0);
        Ok(q)
    }

    pub fn to_real(&self) -> Result<QuadHamReal> {
        let d = self.d;
        let nm = transport_n(d);
        let nt = nm.transpose();
        let (g, l) = self.zeta_form()?;
        let mut out = QuadHamReal {
            d,
            n: self.n,
            s: g.map_values(Shape::Matrix(2 * d), |g| (&nt * g * &nm) * C64::new(2.0, 0.0))?,
            l: l.map_values(Shape::Vector(2 * d), |l| &nt * l)?,
            c: self.c.clone(),
        };
        out.project_real();
        Ok(out)
    }

    /// {f, g} computed directly in (z, z̄), where {z_j, z̄_k} = −i δ_jk.
    pub fn poisson(&self, o: &Self, k_out: usize, sigma: f64) -> Result<(Self, f64)> {
        self.check(o)?;
        let d = self.d;
        let nm = transport_n(d);
        let omega = &nm * to_complex(&symplectic_j(d)) * nm.transpose();
        let (gf, lf) = self.zeta_form()?;
        let (gg, lg) = o.zeta_form()?;
        let two = C64::new(2.0, 0.0);
        let (s, l, c, tail) = bracket_parts(&gf.scale(two), &lf, &gg.scale(two), &lg, &omega, k_out, sigma)?;
        let out = Self::from_zeta_form(d, self.n, &s.scale_real(0.5), &l, c)?;
        Ok((out, tail))
    }
}

/// (e^{tB(θ)}, T_t(θ)) for the flow of χ at frozen θ: ẇ = B w + b with
/// B = J S_χ(θ), b = J L_χ(θ), and T_t = ∫₀ᵗ e^{(t−s)B} b ds.
pub fn hamiltonian_flow(chi: &QuadHamReal, theta: &[f64], t: f64) -> (RMat, RVec) {
    let (s, l, _) = chi.values_at(theta);
    affine_flow(&s, &l, t)
}

/// Flow of ½wᵀSw + Lᵀw for time t, through one augmented exponential.
pub fn affine_flow(s: &RMat, l: &RVec, t: f64) -> (RMat, RVec) {
    let dim = s.nrows();
    let j = symplectic_j(dim / 2);
    let mut aug = RMat::zeros(dim + 1, dim + 1);
    aug.view_mut((0, 0), (dim, dim)).copy_from(&(&j * s * t));
    aug.view_mut((0, dim), (dim, 1)).copy_from(&(&j * l * t));
    let e = expm(&aug);
    (e.view((0, 0), (dim, dim)).into_owned(), e.view((0, dim), (dim, 1)).column(0).into_owned())
}

/// Result of `point_increment` at one θ.
pub struct PointIncrement {
    pub s: RMat,
    pub l: RVec,
    pub c: f64,
    /// e^B − I.
    pub e: RMat,
    /// Translation T_1.
    pub t: RVec,
}

/// Pointwise change (h∘φ − h) − ∫₀¹ χ̇∘φ^τ dτ for φ the time-1 flow of χ,
/// with the quadratic data of h given as (S, L) and χ given as (Sχ, Lχ, Ṡχ, L̇χ, ċχ).
///
/// The differences are formed from e^B − I directly, so the result carries
/// relative (not absolute) rounding error when χ is small.
pub fn point_increment(
    s_h: &RMat,
    l_h: &RVec,
    s_chi: &RMat,
    l_chi: &RVec,
    s_dot: &RMat,
    l_dot: &RVec,
    c_dot: f64,
) -> Result<PointIncrement> {
    let dim = s_h.nrows();
    let j = symplectic_j(dim / 2);
    let b = &j * s_chi;
    let bv = &j * l_chi;
    let (e, phi) = exp_minus_identity_and_phi1(&b);
    let t = &phi * &bv;
    let et = e.transpose();
    let sh_e = s_h * &e;
    let ds = &et * s_h + &sh_e + &et * &sh_e;
    let st = s_h * &t;
    let dl = &st + &et * &st + &et * l_h;
    let dc = 0.5 * t.dot(&st) + l_h.dot(&t);

    let integrand = |tau: f64| -> (RMat, RVec, f64) {
        let (et, pt) = exp_minus_identity_and_phi1(&(&b * tau));
        let m = et + RMat::identity(dim, dim);
        let tt = pt * &bv * tau;
        let sdt = s_dot * &tt;
        let mt = m.transpose();
        (&mt * s_dot * &m, &mt * (&sdt + l_dot), 0.5 * tt.dot(&sdt) + l_dot.dot(&tt) + c_dot)
    };
    let scale = max_abs(s_dot).max(max_abs(&RMat::from_column_slice(dim, 1, l_dot.as_slice()))).max(c_dot.abs());
    let (is, il, ic) = if scale == 0.0 {
        (RMat::zeros(dim, dim), RVec::zeros(dim), 0.0)
    } else {
        let quad = |order: usize| {
            let mut acc = (RMat::zeros(dim, dim), RVec::zeros(dim), 0.0);
            for (x, w) in gauss_legendre_01(order) {
                let (a, bb, c) = integrand(x);
                acc.0 += a * w;
                acc.1 += bb * w;
                acc.2 += c * w;
            }
            acc
        };
        let mut order = 8;
        let mut prev = quad(order);
        loop {
            order *= 2;
            let next = quad(order);
            let diff = max_abs(&(&next.0 - &prev.0))
                .max((&next.1 - &prev.1).amax())
                .max((next.2 - prev.2).abs());
            if diff <= 1e-14 * scale {
                break next;
            }
            if order >= 256 {
                return Err(KamError::Quadrature(format!(
                    "increment {diff:.3e} after order {order} (integrand scale {scale:.3e})"
                )));
            }
            prev = next;
        }
    };
    Ok(PointIncrement { s: ds - is, l: dl - il, c: dc - ic, e, t })
}

/// The change (h∘φ¹ − h) − ∫₀¹ χ̇∘φ^τ dτ, expanded to |k| ≤ k_out on an
/// oversampled grid. χ̇ = ω·∇_θ χ.
pub fn conjugation_increment(
    h: &QuadHamReal,
    chi: &QuadHamReal,
    omega: &[f64],
    k_out: usize,
) -> Result<(QuadHamReal, AliasingReport)> {
    h.check(chi)?;
    let g = default_grid(k_out);
    let chi_dot = chi.derivative_along(omega);
    let hv = h.grid_values(g);
    let cv = chi.grid_values(g);
    let dv = chi_dot.grid_values(g);
    let incs: Vec<Result<PointIncrement>> = (0..hv.len())
        .into_par_iter()
        .map(|p| point_increment(&hv[p].0, &hv[p].1, &cv[p].0, &cv[p].1, &dv[p].0, &dv[p].1, dv[p].2))
        .collect();
    let incs: Vec<PointIncrement> = incs.into_iter().collect::<Result<_>>()?;
    let dim = 2 * h.d;
    let svals: Vec<CMat> = incs.iter().map(|p| to_complex(&p.s)).collect();
    let lvals: Vec<CMat> = incs.iter().map(|p| to_complex(&RMat::from_column_slice(dim, 1, p.l.as_slice()))).collect();
    let cvals: Vec<CMat> = incs.iter().map(|p| CMat::from_element(1, 1, C64::new(p.c, 0.0))).collect();
    let (s, a1) = expand_grid_values(h.n, Shape::Matrix(dim), g, &svals, k_out)?;
    let (l, a2) = expand_grid_values(h.n, Shape::Vector(dim), g, &lvals, k_out)?;
    let (c, a3) = expand_grid_values(h.n, Shape::Scalar, g, &cvals, k_out)?;
    let mut out = QuadHamReal { d: h.d, n: h.n, s, l, c };
    out.project_real();
    let alias = AliasingReport {
        band_mass: a1.band_mass + a2.band_mass,
        band_max_l1: a1.band_max_l1.max(a2.band_max_l1).max(a3.band_max_l1),
    };
    Ok((out, alias))
}

/// h' = h∘φ¹ − ∫₀¹ ∂_tχ∘φ^τ dτ where φ^τ is the flow of χ(θ, ·) and
/// ∂_t = ω·∇_θ. Evaluated pointwise on a grid and re-expanded to k_out.
pub fn conjugate_by_affine(
    h: &QuadHamReal,
    chi: &QuadHamReal,
    omega: &[f64],
    k_out: usize,
) -> Result<(QuadHamReal, AliasingReport)> {
    let (inc, alias) = conjugation_increment(h, chi, omega, k_out)?;
    let (base, _) = h.truncate(k_out);
    Ok((base.add(&inc)?, alias))
}

impl QuadHamReal {
    pub fn truncate(&self, k_out: usize) -> (Self, f64) {
        let (s, a) = self.s.truncate(k_out, 0.0);
        let (l, b) = self.l.truncate(k_out, 0.0);
        let (c, _) = self.c.truncate(k_out, 0.0);
        (QuadHamReal { d: self.d, n: self.n, s, l, c }, a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_real(rng: &mut ChaCha8Rng, d: usize, n: usize, k: i32) -> QuadHamReal {
        let dim = 2 * d;
        let mut h = QuadHamReal::zero(d, n, (k as usize) * n);
        let modes: Vec<Vec<i32>> = if n == 1 {
            (-k..=k).map(|a| vec![a]).collect()
        } else {
            (-k..=k).flat_map(|a| (-k..=k).map(move |b| vec![a, b])).collect()
        };
        for m in modes {
            let s = CMat::from_fn(dim, dim, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let l = CMat::from_fn(dim, 1, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            let c = CMat::from_element(1, 1, C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            h.s.set(m.clone(), s).unwrap();
            h.l.set(m.clone(), l).unwrap();
            h.c.set(m, c).unwrap();
        }
        h.project_real();
        h
    }

    fn rand_w(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn z_of(w: &[f64], d: usize) -> Vec<C64> {
        (0..d).map(|j| C64::new(w[d + j], -w[j]) * SQRT_HALF).collect()
    }

    #[test]
    fn transport_matrices_are_inverse() {
        let p = transport_m(3) * transport_n(3);
        assert!(max_abs(&(p - CMat::identity(6, 6))) < 1e-15);
    }

    #[test]
    fn oscillator_maps_to_two_z_zbar() {
        let s = RMat::identity(2, 2) * 2.0;
        let h = QuadHamReal::autonomous(1, &s, &RVec::zeros(2), 0.0).unwrap();
        let q = h.to_complex().unwrap();
        assert!((q.qzzb.average()[(0, 0)] - C64::new(2.0, 0.0)).norm() < 1e-15);
        assert!(q.qzz.average().iter().all(|z| z.norm() < 1e-15));
        let z = QuadHamReal::zero(2, 1, 0).to_complex().unwrap();
        assert!(z.qzz.is_empty() && z.qzzb.is_empty() && z.qz.is_empty());
    }

    #[test]
    fn complex_form_evaluates_like_real_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_real(&mut rng, 2, 2, 2);
        let q = h.to_complex().unwrap();
        let back = q.to_real().unwrap();
        for _ in 0..32 {
            let th = [rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3)];
            let w = rand_w(&mut rng, 4);
            let hr = h.evaluate(&th, &w);
            let hc = q.evaluate(&th, &z_of(&w, 2));
            assert!((hc.re - hr).abs() < 1e-13 * (1.0 + hr.abs()));
            assert!(hc.im.abs() < 1e-12 * (1.0 + hr.abs()));
        }
        assert!(max_abs(&(back.s.sub(&h.s).unwrap().evaluate(&[0.3, 1.1]))) < 1e-14);
        assert!(max_abs(&(back.l.sub(&h.l).unwrap().evaluate(&[0.3, 1.1]))) < 1e-14);
    }

    fn monomial(d: usize, s_entries: &[(usize, usize, f64)], l_entries: &[(usize, f64)]) -> QuadHamReal {
        let mut s = RMat::zeros(2 * d, 2 * d);
        for &(a, b, v) in s_entries {
            s[(a, b)] += v;
            if a != b {
                s[(b, a)] += v;
            }
        }
        let mut l = RVec::zeros(2 * d);
        for &(a, v) in l_entries {
            l[a] = v;
        }
        QuadHamReal::autonomous(1, &s, &l, 0.0).unwrap()
    }

    #[test]
    fn canonical_brackets() {
        let x = monomial(1, &[], &[(0, 1.0)]);
        let xi = monomial(1, &[], &[(1, 1.0)]);
        let (b, _) = x.poisson(&xi, 0, 0.0).unwrap();
        assert!((b.c.average()[(0, 0)].re - 1.0).abs() < 1e-15);
        // f = x², g = ξ²: {f, g} = 2x · 2ξ = 4xξ, i.e. S entries 4 off-diagonal.
        let f = monomial(1, &[(0, 0, 2.0)], &[]);
        let g = monomial(1, &[(1, 1, 2.0)], &[]);
        let (b, _) = f.poisson(&g, 0, 0.0).unwrap();
        let s = real_part(&b.s.average());
        assert!((s[(0, 1)] - 4.0).abs() < 1e-15 && (s[(1, 0)] - 4.0).abs() < 1e-15);
        assert!(s[(0, 0)].abs() < 1e-15 && s[(1, 1)].abs() < 1e-15);
    }

    #[test]
    fn bracket_antisymmetry_jacobi_and_transport() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..5 {
            let f = random_real(&mut rng, 2, 1, 1);
            let g = random_real(&mut rng, 2, 1, 1);
            let h = random_real(&mut rng, 2, 1, 1);
            let k = 6;
            let (ff, _) = f.poisson(&f, k, 0.0).unwrap();
            assert!(ff.s.analytic_norm(0.0).unwrap().value < 1e-13);
            let (fg, _) = f.poisson(&g, k, 0.0).unwrap();
            let (gh, _) = g.poisson(&h, k, 0.0).unwrap();
            let (hf, _) = h.poisson(&f, k, 0.0).unwrap();
            let (a, _) = f.poisson(&gh, k, 0.0).unwrap();
            let (b, _) = g.poisson(&hf, k, 0.0).unwrap();
            let (c, _) = h.poisson(&fg, k, 0.0).unwrap();
            let jac = a.add(&b).unwrap().add(&c).unwrap();
            assert!(jac.s.analytic_norm(0.0).unwrap().value < 1e-11);
            assert!(jac.l.analytic_norm(0.0).unwrap().value < 1e-11);
            assert!(jac.c.analytic_norm(0.0).unwrap().value < 1e-11);

            let (cb, _) = f.to_complex().unwrap().poisson(&g.to_complex().unwrap(), k, 0.0).unwrap();
            let rb = fg.to_complex().unwrap();
            let diff = cb.sub(&rb).unwrap();
            assert!(diff.norm(0.0).unwrap() < 1e-12);
            assert!(diff.c.analytic_norm(0.0).unwrap().value < 1e-12);
        }
    }

    #[test]
    fn flow_of_oscillator_is_rotation() {
        let h = monomial(1, &[(0, 0, 1.0), (1, 1, 1.0)], &[]);
        let t = 0.7;
        let (m, v) = hamiltonian_flow(&h, &[0.0], t);
        // ẋ = ξ, ξ̇ = −x.
        let expected = RMat::from_row_slice(2, 2, &[t.cos(), t.sin(), -t.sin(), t.cos()]);
        assert!(max_abs(&(m - expected)) < 1e-15);
        assert!(v.amax() < 1e-16);
        let z = QuadHamReal::zero(2, 1, 0);
        let (m, v) = hamiltonian_flow(&z, &[0.0], 3.0);
        assert_eq!(m, RMat::identity(4, 4));
        assert_eq!(v.amax(), 0.0);
    }

    fn rk4(s: &RMat, l: &RVec, w0: &RVec, t: f64, steps: usize) -> RVec {
        let j = symplectic_j(s.nrows() / 2);
        let f = |w: &RVec| &j * (s * w + l);
        let h = t / steps as f64;
        let mut w = w0.clone();
        for _ in 0..steps {
            let k1 = f(&w);
            let k2 = f(&(&w + &k1 * (h / 2.0)));
            let k3 = f(&(&w + &k2 * (h / 2.0)));
            let k4 = f(&(&w + &k3 * h));
            w += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        w
    }

    #[test]
    fn translation_generator_and_rk_oracle() {
        let a = 0.8;
        let gen = monomial(1, &[], &[(1, a)]);
        let t = 1.3;
        let (m, v) = hamiltonian_flow(&gen, &[0.0], t);
        assert!(max_abs(&(m - RMat::identity(2, 2))) < 1e-15);
        assert!((v[0] - a * t).abs() < 1e-14 && v[1].abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = random_real(&mut rng, 2, 1, 0);
        let (s, l, _) = h.values_at(&[0.0]);
        let (m, v) = affine_flow(&s, &l, 0.9);
        let w0 = RVec::from_vec(rand_w(&mut rng, 4));
        let exact = &m * &w0 + &v;
        let oracle = rk4(&s, &l, &w0, 0.9, 4000);
        assert!((exact - oracle).amax() < 1e-12);
        let j = symplectic_j(2);
        assert!(max_abs(&(m.transpose() * &j * &m - j)) < 1e-12);
    }

    #[test]
    fn flow_group_property_and_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut h = random_real(&mut rng, 2, 1, 0);
        h.s = h.s.add(&FourierSeries::constant(1, to_complex(&(RMat::identity(4, 4) * 3.0)), 0).unwrap()).unwrap();
        let (s, l, c) = h.values_at(&[0.0]);
        let (m1, v1) = affine_flow(&s, &l, 0.4);
        let (m2, v2) = affine_flow(&s, &l, 0.5);
        let (m3, v3) = affine_flow(&s, &l, 0.9);
        assert!(max_abs(&(&m2 * &m1 - &m3)) < 1e-12);
        assert!((&m2 * &v1 + &v2 - &v3).amax() < 1e-12);
        let w0 = RVec::from_vec(rand_w(&mut rng, 4));
        let e0 = 0.5 * w0.dot(&(&s * &w0)) + l.dot(&w0) + c;
        for t in [0.5, 2.0, 7.0] {
            let (m, v) = affine_flow(&s, &l, t);
            let w = m * &w0 + v;
            let e = 0.5 * w.dot(&(&s * &w)) + l.dot(&w) + c;
            assert!((e - e0).abs() < 1e-12 * (1.0 + e0.abs()));
        }
    }

    #[test]
    fn conjugation_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let h = random_real(&mut rng, 1, 1, 2);
        let zero = QuadHamReal::zero(1, 1, 0);
        let (out, _) = conjugate_by_affine(&h, &zero, &[1.3], 4).unwrap();
        assert!(out.sub(&h).unwrap().s.analytic_norm(0.0).unwrap().value < 1e-14);

        // Autonomous invariance: h₀ conjugated by its own flow.
        let h0 = monomial(2, &[(0, 0, 1.0), (1, 1, 2.0), (2, 2, 1.0), (3, 3, 2.0)], &[(0, 0.3)]);
        let gen = h0.scale(0.6);
        let (out, _) = conjugate_by_affine(&h0, &gen, &[1.0], 2).unwrap();
        let diff = out.sub(&h0).unwrap();
        assert!(diff.s.analytic_norm(0.0).unwrap().value < 1e-12);
        assert!(diff.l.analytic_norm(0.0).unwrap().value < 1e-12);
    }

    #[test]
    fn conjugation_matches_pointwise_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let h = random_real(&mut rng, 1, 1, 1);
        let chi = random_real(&mut rng, 1, 1, 1).scale(0.05);
        let omega = [1.7];
        let (out, alias) = conjugate_by_affine(&h, &chi, &omega, 24).unwrap();
        assert!(alias.band_mass < 1e-12);
        // Oracle: explicit composition plus a fine trapezoid-free Simpson integral.
        let th = [0.77];
        let w = RVec::from_vec(rand_w(&mut rng, 2));
        let (sc, lc, _) = chi.values_at(&th);
        let (m, v) = affine_flow(&sc, &lc, 1.0);
        let expected_h = h.evaluate(&th, (&m * &w + &v).as_slice());
        let dchi = chi.derivative_along(&omega);
        let n = 2000;
        let mut integral = 0.0;
        for i in 0..=n {
            let tau = i as f64 / n as f64;
            let (m, v) = affine_flow(&sc, &lc, tau);
            let weight = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            integral += weight * dchi.evaluate(&th, (&m * &w + &v).as_slice());
        }
        integral /= 3.0 * n as f64;
        let got = out.evaluate(&th, w.as_slice());
        assert!((got - (expected_h - integral)).abs() < 1e-11, "{got} vs {}", expected_h - integral);
    }
}
