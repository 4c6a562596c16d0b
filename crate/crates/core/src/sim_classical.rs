//! Integration of ẇ = J(S(ωt) w + L(ωt)) with a commutator-free fourth-order
//! Magnus scheme, and the end-to-end check of the KAM conjugation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{KamError, Result};
use crate::kam::ReductionResult;
use crate::linalg::{expm, symplectic_j, RMat};
use crate::quad_ham::{QuadHamReal, RVec};

const SQRT3_6: f64 = 0.288_675_134_594_812_9;
const NODE_1: f64 = 0.5 - SQRT3_6;
const NODE_2: f64 = 0.5 + SQRT3_6;
const WEIGHT_BIG: f64 = 0.25 + SQRT3_6;
const WEIGHT_SMALL: f64 = 0.25 - SQRT3_6;

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorOptions {
    /// Relative agreement required between n and 2n substeps on each output interval.
    pub rtol: f64,
    pub max_halvings: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        IntegratorOptions { rtol: 1e-11, max_halvings: 16 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub d: usize,
    pub times: Vec<f64>,
    pub states: Vec<RVec>,
    pub energy_log: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &RVec {
        self.states.last().expect("trajectory has at least the initial state")
    }

    pub fn with_energy(mut self, f: impl Fn(f64, &RVec) -> f64) -> Self {
        self.energy_log = Some(self.times.iter().zip(&self.states).map(|(&t, w)| f(t, w)).collect());
        self
    }

    /// Columns t, x_1..x_d, ξ_1..ξ_d and, when present, h_inf.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# t in units of the oscillator period / 2π; x, xi dimensionless\nt");
        for j in 1..=self.d {
            out.push_str(&format!(",x_{j}"));
        }
        for j in 1..=self.d {
            out.push_str(&format!(",xi_{j}"));
        }
        if self.energy_log.is_some() {
            out.push_str(",h_inf");
        }
        out.push('\n');
        for (i, (t, w)) in self.times.iter().zip(&self.states).enumerate() {
            out.push_str(&format!("{t:.17e}"));
            for v in w.iter() {
                out.push_str(&format!(",{v:.17e}"));
            }
            if let Some(e) = &self.energy_log {
                out.push_str(&format!(",{:.17e}", e[i]));
            }
            out.push('\n');
        }
        out
    }
}

/// Augmented generator [[J S, J L], [0, 0]] at time t.
fn generator(h: &QuadHamReal, omega: &[f64], t: f64) -> RMat {
    let theta: Vec<f64> = omega.iter().map(|w| w * t).collect();
    let (s, l, _) = h.values_at(&theta);
    let j = symplectic_j(h.d);
    let dim = 2 * h.d;
    let mut g = RMat::zeros(dim + 1, dim + 1);
    g.view_mut((0, 0), (dim, dim)).copy_from(&(&j * s));
    g.view_mut((0, dim), (dim, 1)).copy_from(&(&j * l));
    g
}

/// One CF4 step of the augmented propagator from t to t + dt.
fn cf4_step(h: &QuadHamReal, omega: &[f64], t: f64, dt: f64) -> RMat {
    let g1 = generator(h, omega, t + NODE_1 * dt);
    let g2 = generator(h, omega, t + NODE_2 * dt);
    let first = expm(&((&g1 * WEIGHT_BIG + &g2 * WEIGHT_SMALL) * dt));
    let second = expm(&((&g1 * WEIGHT_SMALL + &g2 * WEIGHT_BIG) * dt));
    second * first
}

fn propagate_interval(h: &QuadHamReal, omega: &[f64], t: f64, dt: f64, substeps: usize) -> RMat {
    let n = h.d * 2 + 1;
    let sub = dt / substeps as f64;
    let mut u = RMat::identity(n, n);
    for i in 0..substeps {
        u = cf4_step(h, omega, t + i as f64 * sub, sub) * u;
    }
    u
}

/// Advances the augmented state y over [t, t + dt] with step halving; returns
/// the new state and the substep count that was accepted.
fn controlled_interval(h: &QuadHamReal, omega: &[f64], y: &RMat, t: f64, dt: f64, start: usize, opts: &IntegratorOptions) -> Result<(RMat, usize)> {
    let mut n = start.max(1);
    let mut coarse = propagate_interval(h, omega, t, dt, n) * y;
    for _ in 0..opts.max_halvings {
        let fine = propagate_interval(h, omega, t, dt, 2 * n) * y;
        let scale = y.amax().max(fine.amax()).max(1.0);
        if (&fine - &coarse).amax() <= opts.rtol * scale {
            return Ok((fine, n));
        }
        coarse = fine;
        n *= 2;
    }
    Err(KamError::StepControl(format!("no agreement to {:.1e} on [{t}, {}] after {} halvings", opts.rtol, t + dt, opts.max_halvings)))
}

fn check_inputs(h: &QuadHamReal, omega: &[f64], dt: f64) -> Result<()> {
    if !(dt > 0.0) {
        return Err(KamError::Invalid(format!("dt must be positive, got {dt}")));
    }
    if omega.len() != h.n {
        return Err(KamError::Dimension(format!("omega has length {}, Hamiltonian has n = {}", omega.len(), h.n)));
    }
    Ok(())
}

/// Output intervals covering [t0, t1] with nominal length dt.
fn intervals(t0: f64, t1: f64, dt: f64) -> Vec<(f64, f64)> {
    let span = t1 - t0;
    let count = ((span.abs() / dt) - 1e-9).ceil().max(1.0) as usize;
    let h = span / count as f64;
    (0..count).map(|i| (t0 + i as f64 * h, h)).collect()
}

/// Solution of ẇ = J(S(ωt) w + L(ωt)) from w(t0) = z0, recorded every dt.
/// Backward integration (t1 < t0) is supported.
pub fn integrate(h: &QuadHamReal, omega: &[f64], z0: &RVec, t0: f64, t1: f64, dt: f64) -> Result<Trajectory> {
    integrate_with(h, omega, z0, t0, t1, dt, &IntegratorOptions::default())
}

pub fn integrate_with(h: &QuadHamReal, omega: &[f64], z0: &RVec, t0: f64, t1: f64, dt: f64, opts: &IntegratorOptions) -> Result<Trajectory> {
    check_inputs(h, omega, dt)?;
    let dim = 2 * h.d;
    if z0.len() != dim {
        return Err(KamError::Dimension(format!("initial state has length {}, expected {dim}", z0.len())));
    }
    let mut y = RMat::zeros(dim + 1, 1);
    y.view_mut((0, 0), (dim, 1)).copy_from(z0);
    y[(dim, 0)] = 1.0;
    let mut times = vec![t0];
    let mut states = vec![z0.clone()];
    let mut n = 1;
    for (t, step) in intervals(t0, t1, dt) {
        let (next, used) = controlled_interval(h, omega, &y, t, step, n, opts)?;
        y = next;
        n = (used / 2).max(1);
        times.push(t + step);
        states.push(y.view((0, 0), (dim, 1)).column(0).into_owned());
    }
    Ok(Trajectory { d: h.d, times, states, energy_log: None })
}

/// Affine flow map w(t1) = M w(t0) + v.
pub fn flow_map(h: &QuadHamReal, omega: &[f64], t0: f64, t1: f64, dt: f64) -> Result<(RMat, RVec)> {
    check_inputs(h, omega, dt)?;
    let dim = 2 * h.d;
    let mut y = RMat::identity(dim + 1, dim + 1);
    let opts = IntegratorOptions::default();
    let mut n = 1;
    for (t, step) in intervals(t0, t1, dt) {
        let (next, used) = controlled_interval(h, omega, &y, t, step, n, &opts)?;
        y = next;
        n = (used / 2).max(1);
    }
    Ok((y.view((0, 0), (dim, dim)).into_owned(), y.view((0, dim), (dim, 1)).column(0).into_owned()))
}

/// For n = 1: the moduli μ ∈ [0, ω/2] of the Floquet exponents, from the
/// eigenvalues e^{±iμT} of the monodromy over T = 2π/ω, ascending.
pub fn floquet_exponents(h: &QuadHamReal, omega: f64, dt: f64) -> Result<Vec<f64>> {
    let period = 2.0 * std::f64::consts::PI / omega;
    let (m, _) = flow_map(h, &[omega], 0.0, period, dt)?;
    let mut mu: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.arg().abs() / period).collect();
    mu.sort_by(f64::total_cmp);
    Ok(mu.into_iter().step_by(2).collect())
}

/// Distance from ν to the nearest point of {±μ + jω : j ∈ Z}.
pub fn floquet_distance(nu: f64, mu: f64, omega: f64) -> f64 {
    let r = |x: f64| {
        let y = x.rem_euclid(omega);
        y.min(omega - y)
    };
    r(nu - mu).min(r(nu + mu))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConjugationReport {
    /// max over samples and times of |h_∞(t) − h_∞(0)| / |h_∞(0)|.
    pub max_relative_drift: f64,
    pub drifts: Vec<f64>,
    /// max relative drift of the Williamson actions ½(y_j² + η_j²).
    pub max_action_drift: f64,
    /// max defect of e^{A(ωt)} being symplectic along the trajectories.
    pub max_symplectic_defect: f64,
}

/// Pushes trajectories of h_ε through the inverse of the composed map and
/// monitors h_∞ along them. A rejected result is accepted as input: with its
/// partial transformation this is the negative control.
pub fn verify_conjugation(result: &ReductionResult, h_eps: &QuadHamReal, omega: &[f64], samples: usize, t_max: f64, dt: f64, seed: u64) -> Result<ConjugationReport> {
    let phi = result.transformation.as_ref().ok_or_else(|| KamError::Invalid("reduction was run without composing the transformation".into()))?;
    let s_inf = &result.h_infinity;
    let d = h_eps.d;
    let p = result.diagonalizer.as_ref().map(|w| w.p.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drifts = Vec::with_capacity(samples);
    let mut action_drift: f64 = 0.0;
    let mut sdef: f64 = 0.0;
    for _ in 0..samples {
        let z0 = RVec::from_fn(2 * d, |_, _| rng.gen_range(-1.0..1.0));
        let traj = integrate(h_eps, omega, &z0, 0.0, t_max, dt)?;
        let mut h0 = f64::NAN;
        let mut a0: Vec<f64> = Vec::new();
        let mut worst: f64 = 0.0;
        for (t, w) in traj.times.iter().zip(&traj.states) {
            let theta: Vec<f64> = omega.iter().map(|o| o * t).collect();
            let (m, v) = phi.matrices_at(&theta);
            sdef = sdef.max(crate::symplectic::symplectic_defect(&m));
            let w_new = m.lu().solve(&(w - v)).ok_or_else(|| KamError::Invalid("singular transformation".into()))?;
            let e = 0.5 * w_new.dot(&(s_inf * &w_new));
            let actions: Vec<f64> = match &p {
                Some(p) => {
                    let y = p * &w_new;
                    (0..d).map(|j| 0.5 * (y[j] * y[j] + y[d + j] * y[d + j])).collect()
                }
                None => Vec::new(),
            };
            if h0.is_nan() {
                h0 = e;
                a0 = actions;
            } else {
                worst = worst.max((e - h0).abs() / h0.abs());
                let total: f64 = a0.iter().sum();
                for (a, b) in actions.iter().zip(&a0) {
                    action_drift = action_drift.max((a - b).abs() / total);
                }
            }
        }
        drifts.push(worst);
    }
    Ok(ConjugationReport { max_relative_drift: drifts.iter().cloned().fold(0.0, f64::max), drifts, max_action_drift: action_drift, max_symplectic_defect: sdef })
}
