//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Run with `cargo test -p kamred-core --test acceptance`.

use std::f64::consts::PI;
use std::time::Instant;

use kamred::homological::{
    divisor_scan, homological_defect, reduce_linear_forcing, Block, solve_homological, ForcingCase, NormalForm, SolveOptions,
};
use kamred::kam::{perturbed_hamiltonian, reduce, scan_measure, KamSchedule, ReductionResult};
use kamred::linalg::{hermitize, CMat, RMat, C64};
use kamred::quad_ham::{QuadHamComplex, QuadHamReal, RVec};
use kamred::sim_classical::{integrate, verify_conjugation};
use kamred::sim_quantum::{
    commutator_poisson_check, graffi_basis_size, graffi_demo, graffi_forcing, propagate, verify_bounded_sobolev, DrivenQuadratic,
    HermiteBasis, PropagationOptions, QuantumState,
};
use kamred::torus_fourier::{l1, modes_in_ball, FourierSeries, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

const GOLDEN: f64 = 1.618_033_988_749_895;

fn scalar(re: f64, im: f64) -> CMat {
    CMat::from_element(1, 1, C64::new(re, im))
}

/// cos θ (z² + z̄²)/2.
fn cos_zz() -> QuadHamComplex {
    let mut w = QuadHamComplex::zero(1, 1, 1);
    w.qzz.set(vec![1], scalar(0.25, 0.0)).unwrap();
    w.qzz.set(vec![-1], scalar(0.25, 0.0)).unwrap();
    w
}

/// cos θ (z² + z̄²)/2 + (0.3 + 2 sin θ) z z̄.
fn cos_zz_with_average() -> QuadHamComplex {
    let mut w = cos_zz();
    w.qzzb.set(vec![0], scalar(0.3, 0.0)).unwrap();
    w.qzzb.set(vec![1], scalar(0.0, -1.0)).unwrap();
    w.qzzb.set(vec![-1], scalar(0.0, 1.0)).unwrap();
    w
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

/// Real-valued perturbation with every block populated on |k| ≤ k_max.
fn random_w(rng: &mut ChaCha8Rng, d: usize, n: usize, k_max: usize) -> QuadHamComplex {
    let mut q = QuadHamComplex::zero(d, n, k_max);
    for m in modes_in_ball(n, k_max) {
        q.qzz.set(m.clone(), random_matrix(rng, d, d)).unwrap();
        q.qzzb.set(m.clone(), random_matrix(rng, d, d)).unwrap();
        q.qz.set(m.clone(), random_matrix(rng, d, 1)).unwrap();
        q.c.set(m, random_matrix(rng, 1, 1)).unwrap();
    }
    q.project_real();
    q
}

/// Random perturbation normalized to [W]_{1/2} = 1.
fn normalized_w(rng: &mut ChaCha8Rng, d: usize, n: usize) -> QuadHamComplex {
    let w = random_w(rng, d, n, 1);
    let s = w.norm(0.5).unwrap();
    w.scale(1.0 / s)
}

fn unperturbed(d: usize) -> Vec<f64> {
    (0..d).map(|j| 1.0 + 0.37 * j as f64).collect()
}

/// |divisor| ≥ γ / (1 + |k|)^τ for all divided divisors of the unperturbed normal form with |k| ≤ k_max.
fn diophantine(nu: &[f64], omega: &[f64], gamma: f64, tau: f64, k_max: usize) -> bool {
    let nf = NormalForm::diagonal(omega.to_vec(), nu.to_vec());
    divisor_scan(&nf, k_max)
        .divisors
        .iter()
        .filter(|d| !(d.block == Block::Zzb && l1(&d.k) == 0))
        .all(|d| d.value.abs() >= gamma / (1.0 + l1(&d.k) as f64).powf(tau))
}

fn sample_omega(rng: &mut ChaCha8Rng, nu: &[f64], n: usize) -> Vec<f64> {
    loop {
        let omega: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0 * PI)).collect();
        if diophantine(nu, &omega, 0.05, n as f64 + 1.0, 12) {
            return omega;
        }
    }
}

/// Draws Diophantine ω until the reduction converges; returns the result and the number of draws.
fn converged_instance(rng: &mut ChaCha8Rng, nu: &[f64], w: &QuadHamComplex, schedule: &KamSchedule) -> (ReductionResult, Vec<f64>, usize) {
    for tries in 1..=5000 {
        let omega = sample_omega(rng, nu, w.n);
        let r = reduce(nu, &omega, w, schedule).unwrap();
        if r.accepted {
            return (r, omega, tries);
        }
    }
    panic!("no converging frequency in 5000 draws");
}

fn fmt_time(t: Instant) -> String {
    format!("{:.1} s", t.elapsed().as_secs_f64())
}

// ---------------------------------------------------------------------------

/// Dense Kronecker solve of the three block equations, independent of the eigenbasis path.
fn dense_homological(nf: &NormalForm, q: &QuadHamComplex, k_max: usize) -> QuadHamComplex {
    let d = nf.d();
    let n_mat = &nf.n_mat;
    let id = CMat::identity(d, d);
    let vec = |m: &CMat| CMat::from_column_slice(d * m.ncols(), 1, m.as_slice());
    let minus_i = C64::new(0.0, -1.0);
    let mut chi = QuadHamComplex::zero(d, q.n, k_max);
    for (k, qk) in q.qzzb.coeffs() {
        if k.iter().all(|&x| x == 0) || l1(k) > k_max {
            continue;
        }
        let kw: f64 = k.iter().zip(&nf.omega).map(|(&a, w)| a as f64 * w).sum();
        let l = CMat::identity(d * d, d * d) * C64::new(kw, 0.0) - id.kronecker(n_mat) + n_mat.transpose().kronecker(&id);
        let x = l.lu().solve(&(vec(qk) * minus_i)).unwrap();
        chi.qzzb.set(k.clone(), CMat::from_column_slice(d, d, x.as_slice())).unwrap();
    }
    for (k, qk) in q.qzz.coeffs() {
        if l1(k) > k_max {
            continue;
        }
        let kw: f64 = k.iter().zip(&nf.omega).map(|(&a, w)| a as f64 * w).sum();
        let l = CMat::identity(d * d, d * d) * C64::new(kw, 0.0) - id.kronecker(n_mat) - n_mat.kronecker(&id);
        let x = l.lu().solve(&(vec(qk) * minus_i)).unwrap();
        chi.qzz.set(k.clone(), CMat::from_column_slice(d, d, x.as_slice())).unwrap();
    }
    for (k, qk) in q.qz.coeffs() {
        if l1(k) > k_max {
            continue;
        }
        let kw: f64 = k.iter().zip(&nf.omega).map(|(&a, w)| a as f64 * w).sum();
        let l = &id * C64::new(kw, 0.0) - n_mat;
        let x = l.lu().solve(&(qk * minus_i)).unwrap();
        chi.qz.set(k.clone(), x).unwrap();
    }
    chi
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_res, mut worst_dense): (f64, f64) = (0.0, 0.0);
    let mut redraws = 0;
    for inst in 0..50 {
        let d = 1 + inst % 2;
        let n = 1 + (inst / 2) % 2;
        let nu = unperturbed(d);
        let shift = random_w(&mut rng, d, 1, 0).qzzb.average() * C64::new(0.05, 0.0);
        let q = random_w(&mut rng, d, n, 3);
        let opts = SolveOptions { k_max: 3, kappa: 1e-3, drop_tol: 0.0 };
        let (nf, sol) = loop {
            let omega: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0 * PI)).collect();
            let mut nf = NormalForm::diagonal(omega, nu.clone());
            nf.n_mat += hermitize(&shift);
            let sol = solve_homological(&nf, &q, opts).unwrap();
            if sol.accepted {
                break (nf, sol);
            }
            redraws += 1;
        };
        let defect = homological_defect(&nf, &q, &sol).unwrap();
        let scale = q.norm(0.0).unwrap();
        for _ in 0..32 {
            let th: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            let z: Vec<C64> = (0..d).map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            worst_res = worst_res.max(defect.evaluate(&th, &z).norm() / scale);
        }
        let dense = dense_homological(&nf, &q, opts.k_max);
        let diff = sol.chi.sub(&dense).unwrap();
        let size = sol.chi.norm(0.0).unwrap();
        for block in [&diff.qzz, &diff.qzzb, &diff.qz] {
            worst_dense = worst_dense.max(block.analytic_norm(0.0).unwrap().value / size);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = worst_res < 1e-10 && worst_dense < 1e-12 && secs < 10.0;
    (pass, format!("50 instances ({redraws} ω redraws): residual {worst_res:.2e}, eigenbasis vs dense (relative) {worst_dense:.2e}, {secs:.2} s"))
}

fn criterion_2() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    let eps = 1e-3;
    let schedule = KamSchedule::new(eps);
    for (d, n, seed) in [(1, 1, 11u64), (1, 2, 12), (2, 1, 13), (2, 2, 14)] {
        let t = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nu = unperturbed(d);
        let w = normalized_w(&mut rng, d, n);
        let (r, _, tries) = converged_instance(&mut rng, &nu, &w, &schedule);
        let t_one = Instant::now();
        reduce(&nu, &r.omega, &w, &schedule).unwrap();
        let one = t_one.elapsed().as_secs_f64();
        let envelope = r.residual_history.iter().enumerate().map(|(m, &x)| x / (10.0 * schedule.eps_m(m))).fold(0.0, f64::max);
        let ok = envelope <= 1.0 && r.final_residual() < 1e-12 && one < 60.0;
        pass &= ok;
        lines.push(format!("d{d}n{n}: {} steps, max residual/(10 eps_m) {envelope:.1e}, final {:.1e}, {tries} draws in {}, one run {one:.2} s", r.steps_run, r.final_residual(), fmt_time(t)));
    }
    (pass, lines.join("; "))
}

fn max_shift(r: &ReductionResult) -> f64 {
    let mut a = r.nu_infinity.clone();
    let mut b = r.nu.clone();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let eps = 1e-3;
    let (mut worst_ratio, mut ratio_lo, mut ratio_hi): (f64, f64, f64) = (0.0, f64::INFINITY, 0.0);
    for inst in 0..100 {
        let d = 1 + inst % 2;
        let nu = unperturbed(d);
        let w = normalized_w(&mut rng, d, 1);
        let (r, omega, _) = converged_instance(&mut rng, &nu, &w, &KamSchedule::new(eps));
        let half = reduce(&nu, &omega, &w, &KamSchedule::new(eps / 2.0)).unwrap();
        assert!(half.accepted, "instance {inst} rejected at eps/2");
        let (s1, s2) = (max_shift(&r), max_shift(&half));
        worst_ratio = worst_ratio.max(s1 / eps);
        ratio_lo = ratio_lo.min(s2 / s1);
        ratio_hi = ratio_hi.max(s2 / s1);
    }
    let pass = worst_ratio <= 2.0 && ratio_lo >= 0.4 && ratio_hi <= 0.6;
    (pass, format!("100 instances: max shift/eps {worst_ratio:.3} (bound 2 [W]); halving ratio in [{ratio_lo:.4}, {ratio_hi:.4}]; {}", fmt_time(t)))
}

fn criterion_4() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let nu2 = unperturbed(2);
    let w2 = normalized_w(&mut rng, 2, 1);
    let (_, omega2, _) = converged_instance(&mut rng, &nu2, &w2, &KamSchedule::new(1e-3));
    let cases: [(&str, Vec<f64>, Vec<f64>, QuadHamComplex); 2] =
        [("golden", vec![1.0], vec![GOLDEN], cos_zz_with_average()), ("d2n1", nu2, omega2, w2)];
    for (name, nu, omega, w) in cases {
        let mut c = f64::NAN;
        let mut sdef: f64 = 0.0;
        let mut parts = Vec::new();
        for eps in [1e-3, 1e-4, 1e-5] {
            let mut s = KamSchedule::new(eps);
            s.kappa_scale = 0.5;
            let r = reduce(&nu, &omega, &w, &s).unwrap();
            let phi = r.transformation.as_ref().unwrap();
            let dev = phi.deviation_from_identity();
            sdef = sdef.max(phi.max_symplectic_defect());
            if c.is_nan() {
                c = dev / eps.sqrt();
            }
            pass &= r.accepted && dev <= c * eps.sqrt() * (1.0 + 1e-9);
            parts.push(format!("{eps:.0e}: {dev:.2e}"));
        }
        pass &= sdef < 1e-11;
        lines.push(format!("{name}: C = {c:.3e}, deviation {}, symplectic defect {sdef:.1e}", parts.join(", ")));
    }
    (pass, lines.join("; "))
}

fn criterion_5() -> Outcome {
    let t = Instant::now();
    let w = cos_zz();
    let mut s = KamSchedule::new(1e-3);
    s.kappa_scale = 0.5;
    let h = perturbed_hamiltonian(&[1.0], &w, 1e-3).unwrap();
    let good = reduce(&[1.0], &[GOLDEN], &w, &s).unwrap();
    let rep = verify_conjugation(&good, &h, &[GOLDEN], 4, 100.0, 0.1, 5).unwrap();
    let bad = reduce(&[1.0], &[2.0], &w, &s).unwrap();
    let neg = verify_conjugation(&bad, &h, &[2.0], 4, 100.0, 0.1, 5).unwrap();
    let pass = good.accepted && !bad.accepted && rep.max_relative_drift < 1e-8 && neg.max_relative_drift > 1e-2;
    (pass, format!("drift {:.2e} at golden ratio; negative control at omega = 2 ({}) drift {:.2e}; {}", rep.max_relative_drift, bad.status.tag(), neg.max_relative_drift, fmt_time(t)))
}

fn criterion_6() -> Outcome {
    let t = Instant::now();
    let mut w = QuadHamComplex::zero(1, 2, 1);
    w.qzz.set(vec![1, 0], scalar(0.25, 0.0)).unwrap();
    w.qzz.set(vec![-1, 0], scalar(0.25, 0.0)).unwrap();
    w.qzzb.set(vec![0, 1], scalar(0.5, 0.0)).unwrap();
    w.qzzb.set(vec![0, -1], scalar(0.5, 0.0)).unwrap();
    let mut fr = Vec::new();
    for eps in [1e-2, 1e-3, 1e-4] {
        let mut s = KamSchedule::new(eps);
        s.k_max = 12;
        fr.push((eps, scan_measure(&[1.0], &w, &s, 1000, 7).unwrap().excised_fraction));
    }
    let c = fr[0].1 / fr[0].0.powf(1.0 / 9.0);
    let monotone = fr.windows(2).all(|p| p[1].1 <= p[0].1);
    let bounded = fr.iter().all(|&(e, f)| f <= c * e.powf(1.0 / 9.0));
    let secs = t.elapsed().as_secs_f64();
    let list: Vec<String> = fr.iter().map(|(e, f)| format!("{e:.0e}: {f:.3} (bound {:.3})", c * e.powf(1.0 / 9.0))).collect();
    (monotone && bounded && secs < 1800.0, format!("C = {c:.3}; {}; {secs:.0} s", list.join(", ")))
}

fn random_quadratic(rng: &mut ChaCha8Rng, d: usize) -> QuadHamReal {
    let m = RMat::from_fn(2 * d, 2 * d, |_, _| rng.gen_range(-1.0..1.0));
    let l = RVec::from_fn(2 * d, |_, _| rng.gen_range(-1.0..1.0));
    QuadHamReal::autonomous(1, &(&m + m.transpose()), &l, rng.gen_range(-1.0..1.0)).unwrap()
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let d = 1 + i % 2;
        let (f, g) = (random_quadratic(&mut rng, d), random_quadratic(&mut rng, d));
        worst = worst.max(commutator_poisson_check(&f, &g, &[0.0], 64, 0.2).unwrap());
    }
    let w = cos_zz_with_average();
    let h = perturbed_hamiltonian(&[1.0], &w, 0.1).unwrap();
    let dq = DrivenQuadratic::new(h.clone(), &[GOLDEN], HermiteBasis::new(1, 48).unwrap()).unwrap();
    let z0 = RVec::from_vec(vec![0.7, -0.4]);
    let tr = integrate(&h, &[GOLDEN], &z0, 0.0, 20.0, 0.5).unwrap();
    let opts = PropagationOptions { dt: 0.025, observe_every: 20, ..PropagationOptions::default() };
    let mut track: f64 = 0.0;
    let mut i = 0;
    propagate(&dq, &QuantumState::coherent(dq.basis(), &z0), 0.0, 20.0, &opts, |_, psi| {
        track = track.max((psi.center(&dq.ops) - &tr.states[i]).amax());
        i += 1;
    })
    .unwrap();
    let pass = worst < 1e-11 && track < 1e-8 && i == tr.len();
    (pass, format!("commutator vs bracket {worst:.2e} over 100 pairs at N = 64; coherent centre vs classical {track:.2e}; {}", fmt_time(t)))
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let w = cos_zz_with_average();
    let omega = 3.7;
    let mut pass = true;
    let mut devs = Vec::new();
    let mut parts = Vec::new();
    for eps in [1e-3, 5e-4] {
        let r = reduce(&[1.0], &[omega], &w, &KamSchedule::new(eps)).unwrap();
        pass &= r.accepted;
        let basis = HermiteBasis::new(1, 48).unwrap();
        let psi = QuantumState::coherent(basis, &RVec::from_vec(vec![1.0, 0.0]));
        let opts = PropagationOptions { dt: 0.1, observe_every: 5, ..PropagationOptions::default() };
        let rep = verify_bounded_sobolev(&r, &w, eps, 2.0, 200.0, &psi, &opts).unwrap();
        pass &= rep.sup_ratio <= 1.0 + 100.0 * eps && rep.inf_ratio >= 1.0 / (1.0 + 100.0 * eps);
        devs.push(rep.max_deviation);
        parts.push(format!("eps {eps:.0e}: ratio in [{:.5}, {:.5}]", rep.inf_ratio, rep.sup_ratio));
    }
    let scaling = devs[1] / devs[0];
    pass &= (scaling - 0.5).abs() <= 0.15;
    (pass, format!("{}; deviation ratio under eps/2 {scaling:.3}; {}", parts.join(", "), fmt_time(t)))
}

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let n = graffi_basis_size(1.0, 200.0, 0, 0.2);
    let opts = PropagationOptions { dt: 0.05, observe_every: 10, ..PropagationOptions::default() };
    let res = graffi_demo(1.0, 1.0, 1.0, 200.0, &QuantumState::ground(HermiteBasis::new(1, n).unwrap()), &opts).unwrap();
    let opts2 = PropagationOptions { dt: 0.05, observe_every: 10, ..PropagationOptions::default() };
    let off = graffi_demo(2.0, 1.0, 1.0, 200.0, &QuantumState::eigenstate(HermiteBasis::new(1, 64).unwrap(), &[1]), &opts2).unwrap();

    let forcing = graffi_forcing(1.0).unwrap();
    let lin = reduce_linear_forcing(&[1.0], &[2.0], &forcing, 0.1, 2.0).unwrap();
    let mut trans_err: f64 = 0.0;
    for i in 0..64 {
        let s = 2.0 * PI * i as f64 / 64.0;
        let v = lin.translation.evaluate(&[2.0 * s]);
        let (f, g) = (-(2.0 * s).sin() / 3.0, -2.0 * (2.0 * s).cos() / 3.0);
        trans_err = trans_err.max((-v[(0, 0)].re - f).abs()).max((-v[(1, 0)].re - g).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    let pass = (res.slope_fit - 1.0).abs() <= 0.1 && off.sup_ratio < 1.5 && trans_err < 1e-10 && secs < 300.0;
    (
        pass,
        format!(
            "omega = 1: slope {:.4} (N = {n}, centre error {:.1e}); omega = 2: sup ratio {:.3}, translation error {trans_err:.1e}; {secs:.0} s",
            res.slope_fit, res.center_error, off.sup_ratio
        ),
    )
}

fn random_forcing(rng: &mut ChaCha8Rng, d: usize, n: usize) -> FourierSeries {
    let mut f = FourierSeries::zero(n, Shape::Vector(2 * d), 2);
    for k in modes_in_ball(n, 2) {
        f.set(k, random_matrix(rng, 2 * d, 1)).unwrap();
    }
    f.project_real();
    f
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let nu = unperturbed(2);
    let omega = vec![GOLDEN, 2f64.sqrt()];
    let f1 = random_forcing(&mut rng, 2, 2);
    let case1 = reduce_linear_forcing(&nu, &omega, &f1, 1e-3, 2.0).unwrap();
    let res1 = case1.residual_forcing(&nu, &omega, &f1).unwrap().norm(0.0).unwrap();

    // ν = ω₁ = 1: the oscillator phase is θ₁, so averaging the forcing pulled
    // back by the free rotation is a plain torus average.
    let omega2 = vec![1.0, 2f64.sqrt()];
    let f2 = random_forcing(&mut rng, 1, 2);
    let case2 = reduce_linear_forcing(&[1.0], &omega2, &f2, 1e-3, 2.0).unwrap();
    let (c1, c2) = case2.residual_modes.iter().fold((0.0, 0.0), |(a, b), m| (a + m.c1, b + m.c2));
    let g = 16;
    let (mut o1, mut o2) = (0.0, 0.0);
    for i in 0..g {
        for j in 0..g {
            let th = [2.0 * PI * i as f64 / g as f64, 2.0 * PI * j as f64 / g as f64];
            let v = f2.evaluate(&th);
            let (gx, fxi) = (v[(0, 0)].re, v[(1, 0)].re);
            o1 += gx * th[0].cos() - fxi * th[0].sin();
            o2 += gx * th[0].sin() + fxi * th[0].cos();
        }
    }
    let (o1, o2) = (o1 / (g * g) as f64, o2 / (g * g) as f64);
    let err = (c1 - o1).abs().max((c2 - o2).abs());
    let pass = case1.case == ForcingCase::Nonresonant && res1 < 1e-12 && case2.case == ForcingCase::Resonant && err < 1e-12;
    (pass, format!("case 1 residual forcing {res1:.1e}; case 2 (c1, c2) = ({c1:.6}, {c2:.6}) vs averaging ({o1:.6}, {o2:.6}), error {err:.1e}"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("homological residual", criterion_1),
        ("KAM convergence", criterion_2),
        ("frequency shift", criterion_3),
        ("transformation smallness", criterion_4),
        ("conjugation dynamics", criterion_5),
        ("measure scan", criterion_6),
        ("exact quantization", criterion_7),
        ("bounded Sobolev norms", criterion_8),
        ("resonant growth", criterion_9),
        ("linear forcing reduction", criterion_10),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let tag = format!("C{}", i + 1);
        if !filter.is_empty() && !filter.contains(&tag) {
            continue;
        }
        let (pass, detail) = run();
        failed += usize::from(!pass);
        println!("{tag:<4}{:<5} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
