//! Truncated Fourier series on the torus T^n with scalar, vector or square
//! matrix values.
//!
//! Multi-indices are measured in the ℓ¹ norm everywhere: storage balls,
//! truncation and the exponential weight of the analytic majorant norm
//! `Σ_k ‖F̂_k‖ e^{σ|k|₁}` all use `|k|₁`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::linalg::{op_norm, CMat, C64};

pub type Mode = Vec<i32>;

pub fn l1(k: &[i32]) -> usize {
    k.iter().map(|&x| x.unsigned_abs() as usize).sum()
}

fn neg(k: &[i32]) -> Mode {
    k.iter().map(|&x| -x).collect()
}

/// Shape of the value carried by each coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize),
}

impl Shape {
    pub fn dims(self) -> (usize, usize) {
        match self {
            Shape::Scalar => (1, 1),
            Shape::Vector(d) => (d, 1),
            Shape::Matrix(d) => (d, d),
        }
    }

    fn from_dims(r: usize, c: usize) -> Result<Shape> {
        match (r, c) {
            (1, 1) => Ok(Shape::Scalar),
            (r, 1) => Ok(Shape::Vector(r)),
            (r, c) if r == c => Ok(Shape::Matrix(r)),
            _ => Err(KamError::Shape(format!("{r}x{c} is not a supported value shape"))),
        }
    }

    pub fn len(self) -> usize {
        let (r, c) = self.dims();
        r * c
    }
}

/// Symmetry properties a series is known to carry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SeriesFlags {
    /// coeff(−k) = conj(coeff(k)) entrywise.
    pub real_valued: bool,
    /// coeff(−k) = coeff(k)^H.
    pub hermitian: bool,
    /// coeff(k) = coeff(k)^T.
    pub symmetric: bool,
}

impl SeriesFlags {
    fn meet(self, o: SeriesFlags) -> SeriesFlags {
        SeriesFlags {
            real_valued: self.real_valued && o.real_valued,
            hermitian: self.hermitian && o.hermitian,
            symmetric: self.symmetric && o.symmetric,
        }
    }
}

/// Weighted majorant norm of a series at strip half-width `sigma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnalyticNorm {
    pub sigma: f64,
    pub value: f64,
}

/// Energy that a grid expansion could not represent below the cutoff.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AliasingReport {
    /// Σ ‖ĉ_k‖ over resolvable modes with K_out < |k|₁.
    pub band_mass: f64,
    /// Largest |k|₁ in the band (for weighting by e^{σ|k|}).
    pub band_max_l1: usize,
}

/// One serialized coefficient: `re`/`im` hold the value row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub k: Vec<i32>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourierSeries {
    n: usize,
    shape: Shape,
    k_store: usize,
    coeffs: BTreeMap<Mode, CMat>,
    flags: SeriesFlags,
}

impl FourierSeries {
    pub fn zero(n: usize, shape: Shape, k_store: usize) -> Self {
        assert!(n > 0, "torus dimension must be positive");
        FourierSeries { n, shape, k_store, coeffs: BTreeMap::new(), flags: SeriesFlags::default() }
    }

    /// θ-independent series with value `value`.
    pub fn constant(n: usize, value: CMat, k_store: usize) -> Result<Self> {
        let shape = Shape::from_dims(value.nrows(), value.ncols())?;
        let mut s = Self::zero(n, shape, k_store);
        s.set(vec![0; n], value)?;
        Ok(s)
    }

    pub fn from_coeffs<I>(n: usize, shape: Shape, k_store: usize, coeffs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Mode, CMat)>,
    {
        let mut s = Self::zero(n, shape, k_store);
        for (k, v) in coeffs {
            let prev = s.coeffs.get(&k).cloned();
            let v = match prev {
                Some(p) => p + v,
                None => v,
            };
            s.set(k, v)?;
        }
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn shape(&self) -> Shape {
        self.shape
    }
    pub fn k_store(&self) -> usize {
        self.k_store
    }
    pub fn flags(&self) -> SeriesFlags {
        self.flags
    }
    pub fn with_flags(mut self, flags: SeriesFlags) -> Self {
        self.flags = flags;
        self
    }
    pub fn set_flags(&mut self, flags: SeriesFlags) {
        self.flags = flags;
    }
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeff(&self, k: &[i32]) -> Option<&CMat> {
        self.coeffs.get(k)
    }

    /// Coefficient at `k`, zero when absent.
    pub fn coeff_or_zero(&self, k: &[i32]) -> CMat {
        let (r, c) = self.shape.dims();
        self.coeffs.get(k).cloned().unwrap_or_else(|| CMat::zeros(r, c))
    }

    pub fn coeffs(&self) -> impl Iterator<Item = (&Mode, &CMat)> {
        self.coeffs.iter()
    }

    pub fn set(&mut self, k: Mode, value: CMat) -> Result<()> {
        if k.len() != self.n {
            return Err(KamError::Dimension(format!("mode {k:?} on a {}-torus", self.n)));
        }
        if l1(&k) > self.k_store {
            return Err(KamError::ModeOutOfRange { mode: k, k_store: self.k_store });
        }
        if (value.nrows(), value.ncols()) != self.shape.dims() {
            return Err(KamError::Shape(format!(
                "value {}x{} for series of shape {:?}",
                value.nrows(),
                value.ncols(),
                self.shape
            )));
        }
        self.coeffs.insert(k, value);
        Ok(())
    }

    /// Mean over the torus, i.e. the k = 0 coefficient.
    pub fn average(&self) -> CMat {
        self.coeff_or_zero(&vec![0; self.n])
    }

    fn check_same(&self, o: &Self) -> Result<()> {
        if self.n != o.n {
            return Err(KamError::Dimension(format!("torus dims {} vs {}", self.n, o.n)));
        }
        if self.shape != o.shape {
            return Err(KamError::Shape(format!("{:?} vs {:?}", self.shape, o.shape)));
        }
        Ok(())
    }

    pub fn add(&self, o: &Self) -> Result<Self> {
        self.check_same(o)?;
        let mut out = self.clone();
        out.k_store = self.k_store.max(o.k_store);
        for (k, v) in &o.coeffs {
            match out.coeffs.get_mut(k) {
                Some(c) => *c += v,
                None => {
                    out.coeffs.insert(k.clone(), v.clone());
                }
            }
        }
        out.flags = self.flags.meet(o.flags);
        Ok(out)
    }

    pub fn sub(&self, o: &Self) -> Result<Self> {
        self.add(&o.scale(C64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        for v in out.coeffs.values_mut() {
            *v *= s;
        }
        if s.im != 0.0 {
            out.flags.real_valued = false;
            out.flags.hermitian = false;
        }
        out
    }

    pub fn scale_real(&self, s: f64) -> Self {
        self.scale(C64::new(s, 0.0))
    }

    /// Applies a θ-independent map to every coefficient. Flags are cleared.
    pub fn map_values<F>(&self, shape: Shape, f: F) -> Result<Self>
    where
        F: Fn(&CMat) -> CMat,
    {
        let mut out = Self::zero(self.n, shape, self.k_store);
        for (k, v) in &self.coeffs {
            out.set(k.clone(), f(v))?;
        }
        Ok(out)
    }

    /// Drops every mode with |k|₁ > k_out and returns Σ ‖ĉ_k‖ e^{σ|k|} over them.
    pub fn truncate(&self, k_out: usize, sigma: f64) -> (Self, f64) {
        let mut out = self.clone();
        out.k_store = k_out;
        let mut tail = 0.0;
        out.coeffs.retain(|k, v| {
            let keep = l1(k) <= k_out;
            if !keep {
                tail += op_norm(v) * (sigma * l1(k) as f64).exp();
            }
            keep
        });
        (out, tail)
    }

    /// Removes coefficients whose operator norm does not exceed `tol`.
    pub fn prune(&mut self, tol: f64) {
        self.coeffs.retain(|_, v| op_norm(v) > tol);
    }

    /// Pointwise complex conjugate for real θ: ĉ'(k) = conj(ĉ(−k)).
    pub fn conj(&self) -> Self {
        let mut out = Self::zero(self.n, self.shape, self.k_store);
        for (k, v) in &self.coeffs {
            out.coeffs.insert(neg(k), v.map(|z| z.conj()));
        }
        out.flags = self.flags;
        out
    }

    /// Pointwise adjoint for real θ: ĉ'(k) = ĉ(−k)^H.
    pub fn adjoint(&self) -> Self {
        let mut out = Self::zero(self.n, self.shape, self.k_store);
        for (k, v) in &self.coeffs {
            out.coeffs.insert(neg(k), v.adjoint());
        }
        out.flags = self.flags;
        out
    }

    /// Pointwise transpose: ĉ'(k) = ĉ(k)^T.
    pub fn transpose(&self) -> Self {
        let mut out = self.clone();
        for v in out.coeffs.values_mut() {
            *v = v.transpose();
        }
        out
    }

    /// ω·∇_θ applied to the series (multiplies ĉ_k by i k·ω).
    pub fn derivative_along(&self, omega: &[f64]) -> Self {
        let mut out = self.clone();
        for (k, v) in out.coeffs.iter_mut() {
            let kw: f64 = k.iter().zip(omega).map(|(&a, &b)| a as f64 * b).sum();
            *v *= C64::new(0.0, kw);
        }
        out.coeffs.retain(|k, _| k.iter().any(|&x| x != 0));
        out
    }

    /// Enforces coeff(−k) = conj(coeff(k)) by averaging each ± pair.
    pub fn project_real(&mut self) {
        let keys: Vec<Mode> = self.coeffs.keys().cloned().collect();
        let mut out = BTreeMap::new();
        let (r, c) = self.shape.dims();
        for k in keys {
            let mk = neg(&k);
            let a = self.coeffs.get(&k).cloned().unwrap_or_else(|| CMat::zeros(r, c));
            let b = self.coeffs.get(&mk).cloned().unwrap_or_else(|| CMat::zeros(r, c));
            let v = (a + b.map(|z| z.conj())) * C64::new(0.5, 0.0);
            out.insert(mk, v.map(|z| z.conj()));
            out.insert(k, v);
        }
        self.coeffs = out;
        self.flags.real_valued = true;
    }

    /// Enforces coeff(−k) = coeff(k)^H.
    pub fn project_hermitian(&mut self) {
        let keys: Vec<Mode> = self.coeffs.keys().cloned().collect();
        let mut out = BTreeMap::new();
        let (r, c) = self.shape.dims();
        for k in keys {
            let mk = neg(&k);
            let a = self.coeffs.get(&k).cloned().unwrap_or_else(|| CMat::zeros(r, c));
            let b = self.coeffs.get(&mk).cloned().unwrap_or_else(|| CMat::zeros(r, c));
            let v = (a + b.adjoint()) * C64::new(0.5, 0.0);
            out.insert(mk, v.adjoint());
            out.insert(k, v);
        }
        self.coeffs = out;
        self.flags.hermitian = true;
    }

    /// Enforces coeff(k) = coeff(k)^T.
    pub fn project_symmetric(&mut self) {
        for v in self.coeffs.values_mut() {
            *v = (&*v + v.transpose()) * C64::new(0.5, 0.0);
        }
        self.flags.symmetric = true;
    }

    fn pair_defect<F: Fn(&CMat) -> CMat>(&self, f: F) -> f64 {
        let (r, c) = self.shape.dims();
        let mut worst: f64 = 0.0;
        for (k, v) in &self.coeffs {
            let other = self.coeffs.get(&neg(k)).cloned().unwrap_or_else(|| CMat::zeros(r, c));
            worst = worst.max(crate::linalg::max_abs(&(f(v) - other)));
        }
        worst
    }

    pub fn real_valued_defect(&self) -> f64 {
        self.pair_defect(|v| v.map(|z| z.conj()))
    }

    pub fn hermitian_defect(&self) -> f64 {
        self.pair_defect(|v| v.adjoint())
    }

    pub fn symmetric_defect(&self) -> f64 {
        self.coeffs
            .values()
            .map(|v| crate::linalg::max_abs(&(v - v.transpose())))
            .fold(0.0, f64::max)
    }

    pub fn evaluate(&self, theta: &[f64]) -> CMat {
        let (r, c) = self.shape.dims();
        let mut out = CMat::zeros(r, c);
        for (k, v) in &self.coeffs {
            let phase: f64 = k.iter().zip(theta).map(|(&a, &b)| a as f64 * b).sum();
            out += v * C64::from_polar(1.0, phase);
        }
        out
    }

    /// Evaluation at complex angles (inside the analyticity strip).
    pub fn evaluate_complex(&self, theta: &[C64]) -> CMat {
        let (r, c) = self.shape.dims();
        let mut out = CMat::zeros(r, c);
        for (k, v) in &self.coeffs {
            let phase: C64 = k.iter().zip(theta).map(|(&a, &b)| b * a as f64).sum();
            out += v * (C64::new(0.0, 1.0) * phase).exp();
        }
        out
    }

    /// Σ_k ‖ĉ_k‖_op e^{σ|k|₁}.
    pub fn analytic_norm(&self, sigma: f64) -> Result<AnalyticNorm> {
        if sigma < 0.0 || sigma.is_nan() {
            return Err(KamError::NegativeSigma(sigma));
        }
        let value = self
            .coeffs
            .iter()
            .map(|(k, v)| op_norm(v) * (sigma * l1(k) as f64).exp())
            .sum();
        Ok(AnalyticNorm { sigma, value })
    }

    /// Fourier-product of two series, truncated to |k|₁ ≤ k_out.
    ///
    /// Values multiply as matrices (scalars broadcast). The second return
    /// value is the discarded tail Σ_{|k|>k_out} ‖·‖ e^{σ|k|}.
    pub fn convolve(&self, o: &Self, k_out: usize, sigma: f64) -> Result<(Self, f64)> {
        if self.n != o.n {
            return Err(KamError::Dimension(format!("torus dims {} vs {}", self.n, o.n)));
        }
        let (ar, ac) = self.shape.dims();
        let (br, bc) = o.shape.dims();
        let out_shape = if self.shape == Shape::Scalar {
            o.shape
        } else if o.shape == Shape::Scalar {
            self.shape
        } else if ac == br {
            Shape::from_dims(ar, bc)?
        } else {
            return Err(KamError::Shape(format!("cannot multiply {:?} by {:?}", self.shape, o.shape)));
        };
        let scalar_a = self.shape == Shape::Scalar;
        let scalar_b = o.shape == Shape::Scalar;
        self.convolve_with(o, out_shape, k_out, sigma, |a, b| {
            if scalar_a {
                b * a[(0, 0)]
            } else if scalar_b {
                a * b[(0, 0)]
            } else {
                a * b
            }
        })
    }

    /// Convolution with an arbitrary bilinear product on the values.
    pub fn convolve_with<F>(&self, o: &Self, out_shape: Shape, k_out: usize, sigma: f64, prod: F) -> Result<(Self, f64)>
    where
        F: Fn(&CMat, &CMat) -> CMat,
    {
        if self.n != o.n {
            return Err(KamError::Dimension(format!("torus dims {} vs {}", self.n, o.n)));
        }
        let mut acc: BTreeMap<Mode, CMat> = BTreeMap::new();
        for (k1, a) in &self.coeffs {
            for (k2, b) in &o.coeffs {
                let k: Mode = k1.iter().zip(k2).map(|(x, y)| x + y).collect();
                let p = prod(a, b);
                match acc.get_mut(&k) {
                    Some(c) => *c += p,
                    None => {
                        acc.insert(k, p);
                    }
                }
            }
        }
        let mut out = Self::zero(self.n, out_shape, k_out);
        let mut tail = 0.0;
        for (k, v) in acc {
            if (v.nrows(), v.ncols()) != out_shape.dims() {
                return Err(KamError::Shape("product shape mismatch".into()));
            }
            if l1(&k) <= k_out {
                out.coeffs.insert(k, v);
            } else {
                tail += op_norm(&v) * (sigma * l1(&k) as f64).exp();
            }
        }
        Ok((out, tail))
    }

    /// Values on the uniform grid θ_j = 2π j / g (row-major, last axis fastest).
    pub fn sample_on_grid(&self, g: usize) -> Vec<CMat> {
        let (r, c) = self.shape.dims();
        let total = g.pow(self.n as u32);
        let mut planes = vec![vec![C64::new(0.0, 0.0); total]; r * c];
        for (k, v) in &self.coeffs {
            let idx = flat_index(k, g);
            for e in 0..r * c {
                planes[e][idx] += v[(e / c, e % c)];
            }
        }
        let mut planner = FftPlanner::new();
        for p in planes.iter_mut() {
            fft_nd(p, self.n, g, true, &mut planner);
        }
        (0..total)
            .map(|j| CMat::from_fn(r, c, |a, b| planes[a * c + b][j]))
            .collect()
    }

    pub fn to_records(&self) -> Vec<SeriesRecord> {
        self.coeffs
            .iter()
            .map(|(k, v)| {
                let (r, c) = self.shape.dims();
                let mut re = Vec::with_capacity(r * c);
                let mut im = Vec::with_capacity(r * c);
                for a in 0..r {
                    for b in 0..c {
                        re.push(v[(a, b)].re);
                        im.push(v[(a, b)].im);
                    }
                }
                SeriesRecord { k: k.clone(), re, im }
            })
            .collect()
    }

    pub fn from_records(n: usize, shape: Shape, k_store: usize, records: &[SeriesRecord]) -> Result<Self> {
        let (r, c) = shape.dims();
        let mut s = Self::zero(n, shape, k_store);
        for (i, rec) in records.iter().enumerate() {
            if rec.re.len() != r * c || rec.im.len() != r * c {
                return Err(KamError::Shape(format!(
                    "record {i}: expected {} entries in re/im, got {}/{}",
                    r * c,
                    rec.re.len(),
                    rec.im.len()
                )));
            }
            let v = CMat::from_fn(r, c, |a, b| C64::new(rec.re[a * c + b], rec.im[a * c + b]));
            let prev = s.coeffs.get(&rec.k).cloned();
            let v = match prev {
                Some(p) => p + v,
                None => v,
            };
            s.set(rec.k.clone(), v).map_err(|e| KamError::Invalid(format!("record {i}: {e}")))?;
        }
        Ok(s)
    }
}

fn flat_index(k: &[i32], g: usize) -> usize {
    let gi = g as i64;
    k.iter().fold(0usize, |acc, &x| acc * g + (x as i64).rem_euclid(gi) as usize)
}

/// All k ∈ Z^n with |k|₁ ≤ k_max, in lexicographic order.
pub fn modes_in_ball(n: usize, k_max: usize) -> Vec<Mode> {
    fn rec(n: usize, budget: i32, prefix: &mut Mode, out: &mut Vec<Mode>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for x in -budget..=budget {
            prefix.push(x);
            rec(n, budget - x.abs(), prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, k_max as i32, &mut Vec::with_capacity(n), &mut out);
    out
}

/// Uniform grid on T^n, row-major with the last axis fastest.
pub fn grid_points(n: usize, g: usize) -> Vec<Vec<f64>> {
    let total = g.pow(n as u32);
    (0..total)
        .map(|mut j| {
            let mut th = vec![0.0; n];
            for axis in (0..n).rev() {
                th[axis] = 2.0 * PI * (j % g) as f64 / g as f64;
                j /= g;
            }
            th
        })
        .collect()
}

fn fft_nd(data: &mut [Complex64], n: usize, g: usize, inverse: bool, planner: &mut FftPlanner<f64>) {
    let fft = if inverse { planner.plan_fft_inverse(g) } else { planner.plan_fft_forward(g) };
    let mut line = vec![Complex64::new(0.0, 0.0); g];
    for axis in 0..n {
        let stride = g.pow((n - 1 - axis) as u32);
        let outer = g.pow(axis as u32);
        for o in 0..outer {
            for s in 0..stride {
                let base = o * stride * g + s;
                for (j, l) in line.iter_mut().enumerate() {
                    *l = data[base + j * stride];
                }
                fft.process(&mut line);
                for (j, l) in line.iter().enumerate() {
                    data[base + j * stride] = *l;
                }
            }
        }
    }
}

/// Fourier coefficients of grid values (in `grid_points` order), keeping
/// |k|₁ ≤ k_out. The grid must satisfy g ≥ 2·k_out + 2.
pub fn expand_grid_values(
    n: usize,
    shape: Shape,
    g: usize,
    values: &[CMat],
    k_out: usize,
) -> Result<(FourierSeries, AliasingReport)> {
    let needed = 2 * k_out + 2;
    if g < needed {
        return Err(KamError::InsufficientGrid { grid: g, k_out, needed });
    }
    let total = g.pow(n as u32);
    if values.len() != total {
        return Err(KamError::Dimension(format!("{} grid values for {} points", values.len(), total)));
    }
    let (r, c) = shape.dims();
    let mut planes = vec![vec![C64::new(0.0, 0.0); total]; r * c];
    for (j, v) in values.iter().enumerate() {
        if (v.nrows(), v.ncols()) != (r, c) {
            return Err(KamError::Shape(format!("grid value {}x{} for shape {:?}", v.nrows(), v.ncols(), shape)));
        }
        for e in 0..r * c {
            planes[e][j] = v[(e / c, e % c)];
        }
    }
    let mut planner = FftPlanner::new();
    let norm = 1.0 / total as f64;
    for p in planes.iter_mut() {
        fft_nd(p, n, g, false, &mut planner);
        for z in p.iter_mut() {
            *z *= norm;
        }
    }
    let half = (g / 2) as i64;
    let mut series = FourierSeries::zero(n, shape, k_out);
    let mut report = AliasingReport::default();
    for j in 0..total {
        let mut rem = j;
        let mut k = vec![0i32; n];
        let mut nyquist = false;
        for axis in (0..n).rev() {
            let raw = (rem % g) as i64;
            rem /= g;
            let signed = if raw > half { raw - g as i64 } else { raw };
            if g % 2 == 0 && raw == half {
                nyquist = true;
            }
            k[axis] = signed as i32;
        }
        let v = CMat::from_fn(r, c, |a, b| planes[a * c + b][j]);
        let kk = l1(&k);
        if !nyquist && kk <= k_out {
            series.coeffs.insert(k, v);
        } else {
            report.band_mass += op_norm(&v);
            report.band_max_l1 = report.band_max_l1.max(kk);
        }
    }
    Ok((series, report))
}

/// Samples `f` on the uniform real grid and re-expands it in Fourier modes.
pub fn sample_and_expand<F>(f: F, n: usize, shape: Shape, grid_per_dim: usize, k_out: usize) -> Result<(FourierSeries, AliasingReport)>
where
    F: Fn(&[f64]) -> CMat,
{
    let needed = 2 * k_out + 2;
    if grid_per_dim < needed {
        return Err(KamError::InsufficientGrid { grid: grid_per_dim, k_out, needed });
    }
    let values: Vec<CMat> = grid_points(n, grid_per_dim).iter().map(|t| f(t)).collect();
    expand_grid_values(n, shape, grid_per_dim, &values, k_out)
}

/// Smallest even grid size that resolves k_out with some oversampling.
pub fn default_grid(k_out: usize) -> usize {
    let g = (3 * k_out).max(2 * k_out + 2).max(4);
    g + g % 2
}
