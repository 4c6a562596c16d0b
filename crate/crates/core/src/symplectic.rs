//! Linear algebra on sp(2d) and Sp(2d).

use crate::error::{KamError, Result};
use crate::linalg::{expm, log1p_mat, max_abs, symmetric_eigh, symplectic_j, to_complex, RMat, C64};

#[derive(Clone, Debug, PartialEq)]
pub struct WilliamsonForm {
    /// Symplectic P with P^{-T} S P^{-1} = diag(ν, ν).
    pub p: RMat,
    /// ν ascending.
    pub nu: Vec<f64>,
}

/// Symplectic diagonalization of a positive definite S.
///
/// With h(w) = wᵀSw this gives h∘P⁻¹(y, η) = Σ ν_j (y_j² + η_j²); the ν_j are
/// the moduli of the eigenvalues of J S.
pub fn williamson_diagonalize(s: &RMat) -> Result<WilliamsonForm> {
    let dim = s.nrows();
    if dim % 2 != 0 || s.ncols() != dim || dim == 0 {
        return Err(KamError::Shape(format!("{}x{} is not a phase-space matrix", s.nrows(), s.ncols())));
    }
    let asym = max_abs(&(s - s.transpose()));
    if asym > 1e-12 * max_abs(s).max(1.0) {
        return Err(KamError::Invalid(format!("matrix is not symmetric (defect {asym:.3e})")));
    }
    let d = dim / 2;
    let (vals, vecs) = symmetric_eigh(s);
    if vals[0] <= 0.0 {
        return Err(KamError::NotPositiveDefinite(vals[0]));
    }
    let inv_sqrt = &vecs * RMat::from_diagonal(&nalgebra::DVector::from_iterator(dim, vals.iter().map(|v| 1.0 / v.sqrt()))) * vecs.transpose();
    let j = symplectic_j(d);
    // i·S^{-1/2} J S^{-1/2} is Hermitian with spectrum ±1/ν.
    let a = &inv_sqrt * &j * &inv_sqrt;
    let h = to_complex(&a) * C64::new(0.0, 1.0);
    let (mu, u) = crate::linalg::hermitian_eigh(&h);
    let mut cols: Vec<(f64, nalgebra::DVector<C64>)> = (0..d)
        .map(|i| {
            let idx = dim - 1 - i;
            let m = mu[idx];
            let ubar = u.column(idx).map(|z| z.conj());
            let v = to_complex(&inv_sqrt) * ubar * C64::new((2.0 / m).sqrt(), 0.0);
            (1.0 / m, normalize_phase(v, d))
        })
        .collect();
    cols.sort_by(|x, y| {
        x.0.total_cmp(&y.0).then_with(|| {
            let kx: Vec<f64> = x.1.iter().flat_map(|z| [z.re, z.im]).collect();
            let ky: Vec<f64> = y.1.iter().flat_map(|z| [z.re, z.im]).collect();
            ky.partial_cmp(&kx).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    let mut r = RMat::zeros(dim, dim);
    for (i, (_, v)) in cols.iter().enumerate() {
        for k in 0..dim {
            r[(k, i)] = v[k].re;
            r[(k, d + i)] = v[k].im;
        }
    }
    let p = r.try_inverse().ok_or_else(|| KamError::Invalid("singular symplectic basis".into()))?;
    Ok(WilliamsonForm { p, nu: cols.iter().map(|c| c.0).collect() })
}

/// Rotates v so its largest component is real positive (x block) or positive
/// imaginary (ξ block); on diagonal inputs this makes P the identity.
fn normalize_phase(v: nalgebra::DVector<C64>, d: usize) -> nalgebra::DVector<C64> {
    let big = v.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let k = v.iter().position(|z| z.norm() >= big * (1.0 - 1e-12)).unwrap_or(0);
    let target = if k < d { C64::new(1.0, 0.0) } else { C64::new(0.0, 1.0) };
    let phase = target * v[k].conj() / v[k].norm();
    v * phase
}

/// e^A for a Hamiltonian matrix A (J A symmetric).
pub fn expm_hamiltonian(a: &RMat) -> RMat {
    expm(a)
}

/// Principal logarithm of a symplectic M with ‖M − I‖₁ < 1.
pub fn logm_near_identity(m: &RMat) -> Result<RMat> {
    let n = m.nrows();
    let delta = m - RMat::identity(n, n);
    let nrm = delta.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max);
    log1p_mat(&delta).ok_or(KamError::LogarithmBranch(nrm))
}

/// max |MᵀJM − J|.
pub fn symplectic_defect(m: &RMat) -> f64 {
    let j = symplectic_j(m.nrows() / 2);
    max_abs(&(m.transpose() * &j * m - j))
}

/// max |JA − (JA)ᵀ|.
pub fn hamiltonian_defect(a: &RMat) -> f64 {
    let ja = symplectic_j(a.nrows() / 2) * a;
    max_abs(&(&ja - ja.transpose()))
}

/// Diagonal quadratic form diag(ν, ν).
pub fn paired_diagonal(nu: &[f64]) -> RMat {
    let d = nu.len();
    RMat::from_fn(2 * d, 2 * d, |i, j| if i == j { nu[i % d] } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_hamiltonian(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> RMat {
        let dim = 2 * d;
        let s = RMat::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        let s = (&s + s.transpose()) * (0.5 * scale);
        symplectic_j(d) * s
    }

    #[test]
    fn diagonal_inputs() {
        let w = williamson_diagonalize(&RMat::identity(4, 4)).unwrap();
        assert_eq!(w.nu.len(), 2);
        assert!(w.nu.iter().all(|v| (v - 1.0).abs() < 1e-14));
        assert!(max_abs(&(w.p.clone() - RMat::identity(4, 4))) < 1e-13);

        // ξ² + 4x²: S = diag(4, 1).
        let w = williamson_diagonalize(&RMat::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 1.0]))).unwrap();
        assert!((w.nu[0] - 2.0).abs() < 1e-14);

        let s = paired_diagonal(&[1.0, 2f64.sqrt()]);
        let w = williamson_diagonalize(&s).unwrap();
        assert!(max_abs(&(w.p - RMat::identity(4, 4))) < 1e-13);
    }

    #[test]
    fn construct_and_recover() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for d in 1..=3 {
            let r = expm(&random_hamiltonian(&mut rng, d, 0.5));
            let nu: Vec<f64> = {
                let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..3.0)).collect();
                v.sort_by(f64::total_cmp);
                v
            };
            let s = r.transpose() * paired_diagonal(&nu) * &r;
            let w = williamson_diagonalize(&s).unwrap();
            for (a, b) in w.nu.iter().zip(&nu) {
                assert!((a - b).abs() < 1e-11);
            }
            assert!(symplectic_defect(&w.p) < 1e-12);
            let pinv = w.p.clone().try_inverse().unwrap();
            let diag = pinv.transpose() * &s * &pinv;
            assert!(max_abs(&(diag - paired_diagonal(&w.nu))) < 1e-11);
            assert!((w.p.determinant() - 1.0).abs() < 1e-10);

            let r2 = expm(&random_hamiltonian(&mut rng, d, 0.7));
            let w2 = williamson_diagonalize(&(r2.transpose() * &s * &r2)).unwrap();
            for (a, b) in w2.nu.iter().zip(&w.nu) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn degenerate_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let r = expm(&random_hamiltonian(&mut rng, 2, 0.4));
        let s = r.transpose() * paired_diagonal(&[1.5, 1.5]) * &r;
        let w = williamson_diagonalize(&s).unwrap();
        assert!(symplectic_defect(&w.p) < 1e-11);
        let pinv = w.p.clone().try_inverse().unwrap();
        assert!(max_abs(&(pinv.transpose() * &s * &pinv - paired_diagonal(&[1.5, 1.5]))) < 1e-11);
    }

    #[test]
    fn rejects_indefinite() {
        let s = RMat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(williamson_diagonalize(&s), Err(KamError::NotPositiveDefinite(_))));
    }

    #[test]
    fn exp_and_log() {
        assert_eq!(expm_hamiltonian(&RMat::zeros(2, 2)), RMat::identity(2, 2));
        assert_eq!(logm_near_identity(&RMat::identity(2, 2)).unwrap(), RMat::zeros(2, 2));
        let t = 0.6;
        let a = symplectic_j(1) * t;
        let m = expm_hamiltonian(&a);
        let rot = RMat::from_row_slice(2, 2, &[t.cos(), t.sin(), -t.sin(), t.cos()]);
        assert!(max_abs(&(&m - rot)) < 1e-15);
        assert!(max_abs(&(logm_near_identity(&m).unwrap() - a)) < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for i in 0..200 {
            let d = 1 + i % 3;
            let a = random_hamiltonian(&mut rng, d, 0.1);
            let m = expm_hamiltonian(&a);
            assert!(symplectic_defect(&m) < 1e-12);
            let back = logm_near_identity(&m).unwrap();
            assert!(max_abs(&(&back - &a)) < 1e-12);
            assert!(hamiltonian_defect(&back) < 1e-12);
        }
        assert!(logm_near_identity(&(RMat::identity(2, 2) * 3.0)).is_err());
    }
}
