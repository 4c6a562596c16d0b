//! Dense small-matrix helpers shared by the rest of the crate.
//!
//! Matrices here are at most a few dozen rows (phase-space blocks, Krylov
//! projections), so everything is plain `nalgebra::DMatrix`.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type RMat = DMatrix<f64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Standard symplectic matrix on R^{2d} in the (x, ξ) ordering:
/// J = [[0, 1], [-1, 0]], so Hamilton's equations read ẇ = J ∇h.
pub fn symplectic_j(d: usize) -> RMat {
    let mut j = RMat::zeros(2 * d, 2 * d);
    for k in 0..d {
        j[(k, d + k)] = 1.0;
        j[(d + k, k)] = -1.0;
    }
    j
}

pub fn to_complex(m: &RMat) -> CMat {
    m.map(|x| C64::new(x, 0.0))
}

pub fn real_part(m: &CMat) -> RMat {
    m.map(|z| z.re)
}

pub fn max_abs_imag(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.im.abs()))
}

pub fn max_abs<T: ComplexField<RealField = f64> + Copy>(m: &DMatrix<T>) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.modulus()))
}

fn norm1<T: ComplexField<RealField = f64> + Copy>(m: &DMatrix<T>) -> f64 {
    (0..m.ncols())
        .map(|c| m.column(c).iter().map(|z| z.modulus()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Spectral norm (largest singular value). Vectors are treated as columns.
pub fn op_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.ncols() == 1 || m.nrows() == 1 {
        return m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |a: f64, &s| a.max(s))
}

pub fn op_norm_real(m: &RMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.ncols() == 1 || m.nrows() == 1 {
        return m.norm();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |a: f64, &s| a.max(s))
}

pub fn symmetrize(m: &RMat) -> RMat {
    (m + m.transpose()) * 0.5
}

pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA: [f64; 5] = [
    1.495585217958292e-2,
    2.539398330063230e-1,
    9.504178996162932e-1,
    2.097847961257068e0,
    5.371920351148152e0,
];

fn pade_low<T: ComplexField<RealField = f64> + Copy>(a: &DMatrix<T>, b: &[f64]) -> DMatrix<T> {
    let n = a.nrows();
    let ident = DMatrix::<T>::identity(n, n);
    let a2 = a * a;
    let mut u = DMatrix::<T>::zeros(n, n);
    let mut v = DMatrix::<T>::zeros(n, n);
    let mut pow = ident.clone();
    let deg = b.len() - 1;
    let mut j = 0;
    while j <= deg {
        v += &pow * T::from_real(b[j]);
        if j + 1 <= deg {
            u += &pow * T::from_real(b[j + 1]);
        }
        pow = &pow * &a2;
        j += 2;
    }
    let u = a * u;
    solve_pade(&u, &v)
}

fn solve_pade<T: ComplexField<RealField = f64> + Copy>(u: &DMatrix<T>, v: &DMatrix<T>) -> DMatrix<T> {
    let p = v + u;
    let q = v - u;
    q.lu().solve(&p).expect("Padé denominator is singular")
}

/// Matrix exponential by scaling and squaring with a Padé approximant of
/// degree chosen from the 1-norm (degrees 3, 5, 7, 9, 13).
pub fn expm<T: ComplexField<RealField = f64> + Copy>(a: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return a.clone();
    }
    let nrm = norm1(a);
    if !nrm.is_finite() {
        panic!("expm: non-finite input");
    }
    for (theta, b) in THETA[..4]
        .iter()
        .zip([&PADE3[..], &PADE5[..], &PADE7[..], &PADE9[..]])
    {
        if nrm <= *theta {
            return pade_low(a, b);
        }
    }
    let s = if nrm > THETA[4] {
        (nrm / THETA[4]).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a * T::from_real(0.5f64.powi(s));
    let b = &PADE13;
    let ident = DMatrix::<T>::identity(n, n);
    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let c = |x: f64| T::from_real(x);
    let u_inner = &a6 * (&a6 * c(b[13]) + &a4 * c(b[11]) + &a2 * c(b[9]))
        + &a6 * c(b[7])
        + &a4 * c(b[5])
        + &a2 * c(b[3])
        + &ident * c(b[1]);
    let u = &scaled * u_inner;
    let v = &a6 * (&a6 * c(b[12]) + &a4 * c(b[10]) + &a2 * c(b[8]))
        + &a6 * c(b[6])
        + &a4 * c(b[4])
        + &a2 * c(b[2])
        + &ident * c(b[0]);
    let mut r = solve_pade(&u, &v);
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Returns (e^B − I, φ₁(B)) with φ₁(B) = Σ_k B^k/(k+1)!, so that
/// e^B = I + B φ₁(B) and ∫₀¹ e^{(1−s)B} ds = φ₁(B).
///
/// Small inputs use the Taylor series directly, which keeps e^B − I
/// accurate to relative precision when ‖B‖ ≪ 1.
pub fn exp_minus_identity_and_phi1(b: &RMat) -> (RMat, RMat) {
    let n = b.nrows();
    let nrm = norm1(b);
    if nrm <= 0.5 {
        let mut phi = RMat::identity(n, n);
        let mut term = RMat::identity(n, n);
        for k in 1..40 {
            term = &term * b / ((k + 1) as f64);
            phi += &term;
            if norm1(&term) <= 1e-18 * norm1(&phi) {
                break;
            }
        }
        let em1 = b * &phi;
        (em1, phi)
    } else {
        let mut aug = RMat::zeros(2 * n, 2 * n);
        aug.view_mut((0, 0), (n, n)).copy_from(b);
        aug.view_mut((0, n), (n, n)).fill_with_identity();
        let e = expm(&aug);
        let mut em1 = e.view((0, 0), (n, n)).into_owned();
        for k in 0..n {
            em1[(k, k)] -= 1.0;
        }
        let phi = e.view((0, n), (n, n)).into_owned();
        (em1, phi)
    }
}

/// Principal square root by the Denman–Beavers iteration.
fn sqrtm_db(x: &RMat) -> Option<RMat> {
    let n = x.nrows();
    let mut y = x.clone();
    let mut z = RMat::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse()?;
        let zi = z.clone().try_inverse()?;
        let y_next = (&y + &zi) * 0.5;
        let z_next = (&z + &yi) * 0.5;
        let delta = norm1(&(&y_next - &y));
        y = y_next;
        z = z_next;
        if delta <= 1e-15 * norm1(&y) {
            return Some(y);
        }
    }
    None
}

/// log(I + M) via the Gregory series 2·atanh(M (2I + M)^{-1}); requires ‖M‖ small.
fn log1p_series(m: &RMat) -> Option<RMat> {
    let n = m.nrows();
    let denom = m + RMat::identity(n, n) * 2.0;
    let zt = denom.transpose().lu().solve(&m.transpose())?;
    let z = zt.transpose();
    let z2 = &z * &z;
    let mut term = z.clone();
    let mut acc = z.clone();
    for k in 1..60 {
        term = &term * &z2;
        let add = &term / ((2 * k + 1) as f64);
        acc += &add;
        if norm1(&add) <= 1e-18 * norm1(&acc).max(1e-300) {
            break;
        }
    }
    Some(acc * 2.0)
}

/// Principal logarithm of I + M by inverse scaling and squaring.
///
/// Returns `None` when ‖M‖₁ ≥ 1 (outside the ball where the principal
/// branch is guaranteed by the series) or when a square root fails.
pub fn log1p_mat(m: &RMat) -> Option<RMat> {
    let n = m.nrows();
    if norm1(m) >= 1.0 {
        return None;
    }
    let mut delta = m.clone();
    let mut s = 0;
    while norm1(&delta) > 0.25 {
        let x = &delta + RMat::identity(n, n);
        let r = sqrtm_db(&x)?;
        delta = r - RMat::identity(n, n);
        s += 1;
        if s > 30 {
            return None;
        }
    }
    let l = log1p_series(&delta)?;
    Some(l * 2f64.powi(s))
}

pub fn cvec_norm(v: &DVector<C64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues ascending.
pub fn hermitian_eigh(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    let eig = nalgebra::SymmetricEigen::new(hermitize(m));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (c, &i) in idx.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Eigen-decomposition of a real symmetric matrix with eigenvalues ascending.
pub fn symmetric_eigh(m: &RMat) -> (Vec<f64>, RMat) {
    let n = m.nrows();
    let eig = nalgebra::SymmetricEigen::new(symmetrize(m));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = RMat::zeros(n, n);
    for (c, &i) in idx.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Nodes and weights of the Gauss–Legendre rule of the given order on [0, 1].
pub fn gauss_legendre_01(order: usize) -> Vec<(f64, f64)> {
    let n = order.max(1);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Newton on P_n starting from the Chebyshev-like guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push((0.5 * (1.0 - x), 0.5 * w));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_rotation_generator() {
        for &t in &[0.0, 0.3, 1.7, 12.5] {
            let a = symplectic_j(1) * t;
            let e = expm(&a);
            assert!((e[(0, 0)] - t.cos()).abs() < 1e-13);
            assert!((e[(0, 1)] - t.sin()).abs() < 1e-13);
            assert!((e[(1, 0)] + t.sin()).abs() < 1e-13);
        }
    }

    #[test]
    fn expm_complex_diagonal() {
        let a = CMat::from_diagonal(&DVector::from_vec(vec![C64::new(0.1, 2.0), C64::new(-3.0, 0.5)]));
        let e = expm(&a);
        assert!((e[(0, 0)] - C64::new(0.1, 2.0).exp()).norm() < 1e-14);
        assert!((e[(1, 1)] - C64::new(-3.0, 0.5).exp()).norm() < 1e-14);
        assert!(e[(0, 1)].norm() < 1e-16);
    }

    #[test]
    fn phi1_matches_both_branches() {
        let b = RMat::from_row_slice(2, 2, &[0.1, 0.2, -0.05, 0.03]);
        let (em1, phi) = exp_minus_identity_and_phi1(&b);
        let e = expm(&b);
        assert!((&em1 + RMat::identity(2, 2) - &e).norm() < 1e-15);
        let big = &b * 20.0;
        let (em1b, phib) = exp_minus_identity_and_phi1(&big);
        let eb = expm(&big);
        assert!((&em1b + RMat::identity(2, 2) - &eb).norm() < 1e-12);
        assert!((&big * &phib - &em1b).norm() < 1e-12);
        assert!((&b * &phi - &em1).norm() < 1e-16);
    }

    #[test]
    fn log_inverts_exp_near_identity() {
        let a = RMat::from_row_slice(3, 3, &[0.2, -0.4, 0.1, 0.3, 0.05, -0.2, 0.0, 0.15, -0.1]);
        let (em1, _) = exp_minus_identity_and_phi1(&a);
        let l = log1p_mat(&em1).unwrap();
        assert!((l - a).norm() < 1e-13);
        assert!(log1p_mat(&(RMat::identity(2, 2) * 1.5)).is_none());
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let rule = gauss_legendre_01(5);
        let total: f64 = rule.iter().map(|&(x, w)| w * x.powi(9)).sum();
        assert!((total - 0.1).abs() < 1e-15);
        let total: f64 = rule.iter().map(|&(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-15);
    }
}
