//! Canonical-ensemble engine for attention energies.
//!
//! Energies `E_i` at temperature `T` define Boltzmann weights
//! `exp(-E_i/T)`; the normalised weights are the softmax attention row.
//! Besides the closed form, two dynamical routes to the same fixed point are
//! provided: an entropic mirror-descent relaxation (the overdamped limit) and
//! a constrained second-order integrator in amplitude coordinates, where the
//! Fisher kinetic term becomes a flat `(m/2)|ẋ|²` on the radius-2 sphere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infogeom::{ProbabilityVector, TangentVector};

/// Finite interaction energies, one per key.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyVector(Vec<f64>);

impl EnergyVector {
    pub fn new(e: Vec<f64>) -> Result<Self> {
        if e.is_empty() {
            return Err(Error::invalid("empty energy vector"));
        }
        if let Some((i, v)) = e.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Constraint(format!("energy {i} is {v}")));
        }
        Ok(Self(e))
    }

    /// Energies from query/key vectors, `E_i = -q·k_i`.
    pub fn from_query_keys(q: &[f64], keys: &[Vec<f64>]) -> Result<Self> {
        let e = keys
            .iter()
            .map(|k| {
                if k.len() != q.len() {
                    return Err(Error::Shape(format!("key of length {} against query of length {}", k.len(), q.len())));
                }
                Ok(-q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(e)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!("temperature must be positive and finite, got {t}")));
    }
    Ok(())
}

/// Energies, temperature and an attention distribution over the same keys.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionState {
    energies: EnergyVector,
    temperature: f64,
    rho: ProbabilityVector,
}

impl AttentionState {
    /// A possibly non-equilibrium state.
    pub fn new(energies: EnergyVector, temperature: f64, rho: ProbabilityVector) -> Result<Self> {
        check_temperature(temperature)?;
        if energies.len() != rho.len() {
            return Err(Error::Shape(format!("{} energies but {} probabilities", energies.len(), rho.len())));
        }
        Ok(Self { energies, temperature, rho })
    }

    pub fn energies(&self) -> &EnergyVector {
        &self.energies
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn rho(&self) -> &ProbabilityVector {
        &self.rho
    }
}

/// `ln Σ exp(a_i)` with max subtraction.
pub fn log_sum_exp(a: &[f64]) -> f64 {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + a.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

fn softmax_from_logits(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    let mut rho: Vec<f64> = logits.iter().map(|&l| (l - lse).exp()).collect();
    let sum: f64 = rho.iter().sum();
    rho.iter_mut().for_each(|r| *r /= sum);
    rho
}

/// `ρ_i = exp(-E_i/T) / Z`.
pub fn softmax_equilibrium(e: &EnergyVector, t: f64) -> Result<AttentionState> {
    check_temperature(t)?;
    let logits: Vec<f64> = e.0.iter().map(|&ei| -ei / t).collect();
    let rho = ProbabilityVector::from_normalized_unchecked(softmax_from_logits(&logits));
    Ok(AttentionState { energies: e.clone(), temperature: t, rho })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionFunction {
    pub log_z: f64,
    /// `exp(log_z)`; may overflow to infinity for extreme energies, `log_z` never does.
    pub z: f64,
}

pub fn partition_function(e: &EnergyVector, t: f64) -> Result<PartitionFunction> {
    check_temperature(t)?;
    let logits: Vec<f64> = e.0.iter().map(|&ei| -ei / t).collect();
    let log_z = log_sum_exp(&logits);
    Ok(PartitionFunction { log_z, z: log_z.exp() })
}

/// `Σ w_i x_i² - (Σ w_i x_i)²` for normalised weights, computed around the
/// weighted mean so that large offsets do not cancel catastrophically.
///
/// This is the single variance routine behind every specific-heat readout
/// in the crate (equilibrium, Langevin ensembles, attention probes).
pub fn weighted_variance(x: &[f64], w: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), w.len());
    let mean: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
    let var: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mean) * (a - mean)).sum();
    var.max(0.0)
}

/// Population variance (equal weights).
pub fn population_variance(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let w = vec![1.0 / x.len() as f64; x.len()];
    weighted_variance(x, &w)
}

/// `C_v = Var_ρ(E) / T²`.
pub fn specific_heat(energies: &[f64], rho: &[f64], t: f64) -> f64 {
    weighted_variance(energies, rho) / (t * t)
}

/// Shannon entropy in nats, `0 ln 0 = 0`.
pub fn shannon_entropy(rho: &[f64]) -> f64 {
    -rho.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Macroscopic readout of an attention state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermoObservables {
    pub temperature: f64,
    pub log_z: f64,
    pub z: f64,
    /// Internal energy `⟨E⟩_ρ`.
    pub u: f64,
    /// Shannon entropy of ρ.
    pub s: f64,
    /// Helmholtz free energy `-T ln Z`.
    pub f: f64,
    pub cv: f64,
    /// Ideal information-gas pressure `T / V_ctx`.
    pub pressure: f64,
    pub context_volume: usize,
}

pub fn observables(s: &AttentionState, context_volume: usize) -> Result<ThermoObservables> {
    if context_volume == 0 {
        return Err(Error::invalid("context volume must be at least 1"));
    }
    let t = s.temperature;
    let e = s.energies.as_slice();
    let rho = s.rho.as_slice();
    let pf = partition_function(&s.energies, t)?;
    let u = e.iter().zip(rho).map(|(a, b)| a * b).sum();
    Ok(ThermoObservables {
        temperature: t,
        log_z: pf.log_z,
        z: pf.z,
        u,
        s: shannon_entropy(rho),
        f: -t * pf.log_z,
        cv: specific_heat(e, rho, t),
        pressure: t / context_volume as f64,
        context_volume,
    })
}

/// Free-energy functional `F[ρ] = Σ ρ_i E_i + T Σ ρ_i ln ρ_i` for any ρ.
pub fn free_energy_functional(s: &AttentionState) -> f64 {
    let e = s.energies.as_slice();
    let rho = s.rho.as_slice();
    let u: f64 = e.iter().zip(rho).map(|(a, b)| a * b).sum();
    u - s.temperature * shannon_entropy(rho)
}

/// Unconstrained gradient `g_i = E_i + T(ln ρ_i + 1)` of the free-energy functional.
pub fn free_energy_gradient(s: &AttentionState) -> Result<Vec<f64>> {
    if let Some(i) = s.rho.as_slice().iter().position(|&p| p <= 0.0) {
        return Err(Error::BoundaryState(i));
    }
    let t = s.temperature;
    Ok(s.energies.as_slice().iter().zip(s.rho.as_slice()).map(|(&e, &p)| e + t * (p.ln() + 1.0)).collect())
}

/// Removes the component along the all-ones direction (the normalisation multiplier).
pub fn project_to_simplex_tangent(g: &[f64]) -> Vec<f64> {
    let mean = g.iter().sum::<f64>() / g.len() as f64;
    g.iter().map(|x| x - mean).collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Parameters shared by the relaxation and second-order integrators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub mass: f64,
    pub damping: f64,
    pub step: f64,
    pub max_steps: usize,
    pub convergence_tol: f64,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self { mass: 1.0, damping: 1.0, step: 0.01, max_steps: 100_000, convergence_tol: 1e-10 }
    }
}

impl DynamicsConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.mass > 0.0
            && self.damping >= 0.0
            && self.step > 0.0
            && self.max_steps > 0
            && self.convergence_tol > 0.0
            && [self.mass, self.damping, self.step, self.convergence_tol].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid dynamics config {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Relaxation {
    pub state: AttentionState,
    /// Every iterate, starting with the initial distribution.
    pub trajectory: Vec<ProbabilityVector>,
    pub steps: usize,
    /// Max-norm of the projected gradient at the final iterate.
    pub residual: f64,
    pub converged: bool,
}

impl Relaxation {
    /// Turns a non-converged run into `Error::NotConverged`.
    pub fn into_result(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged { steps: self.steps, residual: self.residual })
        }
    }
}

/// Entropic mirror descent on `F[ρ]` over the simplex.
///
/// Each step is `ln ρ ← ln ρ - Δt·g(ρ)` followed by renormalisation, which
/// is the explicit discretisation of the replicator (Fisher–Rao gradient)
/// flow. In log space the update is `ln ρ' = (1 - Δt·T) ln ρ - Δt·E + c`,
/// so the free energy decreases monotonically for `Δt·T ≤ 1` and the
/// iteration contracts geometrically onto the softmax.
pub fn relax_to_equilibrium(
    e: &EnergyVector,
    t: f64,
    init: &ProbabilityVector,
    cfg: &DynamicsConfig,
) -> Result<Relaxation> {
    check_temperature(t)?;
    cfg.validate()?;
    if init.len() != e.len() {
        return Err(Error::Shape(format!("{} energies but {} probabilities", e.len(), init.len())));
    }
    if !init.is_interior() {
        let i = init.as_slice().iter().position(|&p| p <= 0.0).unwrap_or(0);
        return Err(Error::BoundaryState(i));
    }
    if cfg.step * t > 1.0 {
        return Err(Error::invalid(format!("step {} exceeds the stability bound 1/T = {}", cfg.step, 1.0 / t)));
    }

    let energies = e.as_slice();
    let mut log_rho: Vec<f64> = init.as_slice().iter().map(|p| p.ln()).collect();
    let mut trajectory = vec![init.clone()];
    let gradient =
        |log_rho: &[f64]| -> Vec<f64> { energies.iter().zip(log_rho).map(|(&e, &l)| e + t * (l + 1.0)).collect() };

    let mut residual = max_abs(&project_to_simplex_tangent(&gradient(&log_rho)));
    let mut steps = 0;
    while residual >= cfg.convergence_tol && steps < cfg.max_steps {
        let g = gradient(&log_rho);
        for (l, gi) in log_rho.iter_mut().zip(&g) {
            *l -= cfg.step * gi;
        }
        let lse = log_sum_exp(&log_rho);
        log_rho.iter_mut().for_each(|l| *l -= lse);
        steps += 1;
        trajectory.push(ProbabilityVector::from_normalized_unchecked(softmax_from_logits(&log_rho)));
        residual = max_abs(&project_to_simplex_tangent(&gradient(&log_rho)));
    }

    let rho = trajectory.last().cloned().expect("trajectory holds the initial point");
    Ok(Relaxation {
        state: AttentionState { energies: e.clone(), temperature: t, rho },
        trajectory,
        steps,
        residual,
        converged: residual < cfg.convergence_tol,
    })
}

/// One sample of a second-order trajectory.
#[derive(Debug, Clone)]
pub struct PhasePoint {
    pub rho: ProbabilityVector,
    pub rho_dot: TangentVector,
    /// Kinetic plus free energy, `K + F[ρ]`.
    pub total_energy: f64,
}

#[derive(Debug, Clone)]
pub struct SecondOrderRun {
    pub trajectory: Vec<PhasePoint>,
    pub converged: bool,
}

/// Integrates `m(ρ̈_i/ρ_i - ρ̇_i²/(2ρ_i²)) + E_i + T ln ρ_i = Λ - γ ρ̇_i/ρ_i`.
///
/// The multiplier Λ is whatever keeps `Σρ̈ = 0`. In amplitude coordinates
/// `x = 2√ρ` this is a particle of mass `m` on the sphere `|x| = 2` in the
/// potential `F[x²/4]` with friction `γẋ`, integrated here with RATTLE
/// (constrained velocity Verlet) and an exact friction half-step on either
/// side. With `γ = 0` the scheme is symplectic and `K + F` stays bounded.
///
/// The friction `-γρ̇_i/ρ_i` is the Rayleigh dissipation of the same
/// Fisher metric as the kinetic term, so `d(K+F)/dt = -2γK/m`.
///
/// Stops early once both the projected force and the speed fall below
/// `convergence_tol`. A step that would take some `ρ_i` to zero is rejected.
pub fn integrate_second_order(
    e: &EnergyVector,
    t: f64,
    init: &ProbabilityVector,
    init_velocity: &TangentVector,
    cfg: &DynamicsConfig,
) -> Result<SecondOrderRun> {
    check_temperature(t)?;
    cfg.validate()?;
    let n = e.len();
    if init.len() != n || init_velocity.as_slice().len() != n {
        return Err(Error::Shape("energy, state and velocity lengths differ".into()));
    }
    if !init.is_interior() {
        let i = init.as_slice().iter().position(|&p| p <= 0.0).unwrap_or(0);
        return Err(Error::BoundaryState(i));
    }
    let energies = e.as_slice();
    let m = cfg.mass;
    let dt = cfg.step;

    // Amplitude coordinates.
    let mut x: Vec<f64> = init.as_slice().iter().map(|p| 2.0 * p.sqrt()).collect();
    let mut v: Vec<f64> = init.as_slice().iter().zip(init_velocity.as_slice()).map(|(p, pd)| pd / p.sqrt()).collect();
    project_tangent(&mut v, &x);

    let force = |x: &[f64]| -> Vec<f64> {
        // -∂/∂x_i of Σ (x_i²/4)(E_i + T ln(x_i²/4))
        x.iter()
            .zip(energies)
            .map(|(&xi, &ei)| {
                let rho = xi * xi / 4.0;
                -(xi / 2.0) * (ei + t * rho.ln() + t)
            })
            .collect()
    };
    let sample = |x: &[f64], v: &[f64]| -> PhasePoint {
        let rho: Vec<f64> = x.iter().map(|xi| xi * xi / 4.0).collect();
        let sum: f64 = rho.iter().sum();
        let rho: Vec<f64> = rho.into_iter().map(|r| r / sum).collect();
        let mut rho_dot: Vec<f64> = x.iter().zip(v).map(|(xi, vi)| xi * vi / 2.0).collect();
        let mean = rho_dot.iter().sum::<f64>() / n as f64;
        rho_dot.iter_mut().for_each(|r| *r -= mean);
        let kinetic = 0.5 * m * v.iter().map(|a| a * a).sum::<f64>();
        let free = energies.iter().zip(&rho).map(|(e, r)| r * (e + t * r.ln())).sum::<f64>();
        PhasePoint {
            rho: ProbabilityVector::from_normalized_unchecked(rho),
            rho_dot: TangentVector::from_projected_unchecked(rho_dot),
            total_energy: kinetic + free,
        }
    };
    let residual = |x: &[f64], v: &[f64], f: &[f64]| -> f64 {
        let mut ft = f.to_vec();
        project_tangent(&mut ft, x);
        max_abs(&ft).max(max_abs(v))
    };

    let friction = (-cfg.damping * dt / (2.0 * m)).exp();
    let mut f = force(&x);
    let mut trajectory = vec![sample(&x, &v)];
    let mut converged = cfg.damping > 0.0 && residual(&x, &v, &f) < cfg.convergence_tol;
    let mut step = 0;
    while !converged && step < cfg.max_steps {
        step += 1;
        v.iter_mut().for_each(|vi| *vi *= friction);
        let half: Vec<f64> = v.iter().zip(&f).map(|(vi, fi)| vi + dt / (2.0 * m) * fi).collect();
        let unconstrained: Vec<f64> = x.iter().zip(&half).map(|(xi, hi)| xi + dt * hi).collect();
        let lambda = sphere_multiplier(&unconstrained, &x)
            .ok_or_else(|| Error::StepRejected { step, reason: "constraint projection has no real solution".into() })?;
        let x_new: Vec<f64> = unconstrained.iter().zip(&x).map(|(u, xi)| u + lambda * xi).collect();
        if let Some(i) = x_new.iter().position(|&xi| !(xi > 0.0) || xi * xi / 4.0 >= 1.0) {
            return Err(Error::StepRejected { step, reason: format!("component {i} would leave (0, 1)") });
        }
        let mut v_new: Vec<f64> = half.iter().zip(&x).map(|(h, xi)| h + lambda * xi / dt).collect();
        f = force(&x_new);
        v_new.iter_mut().zip(&f).for_each(|(vi, fi)| *vi += dt / (2.0 * m) * fi);
        project_tangent(&mut v_new, &x_new);
        v_new.iter_mut().for_each(|vi| *vi *= friction);
        if v_new.iter().any(|vi| !vi.is_finite()) {
            return Err(Error::NonFinite { step, what: "amplitude velocity".into() });
        }
        x = x_new;
        v = v_new;
        trajectory.push(sample(&x, &v));
        converged = cfg.damping > 0.0 && residual(&x, &v, &f) < cfg.convergence_tol;
    }
    Ok(SecondOrderRun { trajectory, converged })
}

/// Removes the radial component of `v` at the sphere point `x` (|x|² = 4).
fn project_tangent(v: &mut [f64], x: &[f64]) {
    let norm_sq: f64 = x.iter().map(|a| a * a).sum();
    let dot: f64 = v.iter().zip(x).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(x).for_each(|(vi, xi)| *vi -= dot / norm_sq * xi);
}

/// Smallest `λ` with `|u + λ x|² = 4`.
fn sphere_multiplier(u: &[f64], x: &[f64]) -> Option<f64> {
    let xx: f64 = x.iter().map(|a| a * a).sum();
    let ux: f64 = u.iter().zip(x).map(|(a, b)| a * b).sum();
    let uu: f64 = u.iter().map(|a| a * a).sum();
    let disc = ux * ux - xx * (uu - 4.0);
    if disc < 0.0 {
        return None;
    }
    let r = disc.sqrt();
    let a = (-ux + r) / xx;
    let b = (-ux - r) / xx;
    Some(if a.abs() <= b.abs() { a } else { b })
}

/// `T_eff = √d_k / ‖W‖²`, proportionality constant one.
pub fn effective_temperature(dk: usize, weight_norm_sq: f64) -> Result<f64> {
    if dk == 0 {
        return Err(Error::invalid("d_k must be positive"));
    }
    if !(weight_norm_sq > 0.0) || !weight_norm_sq.is_finite() {
        return Err(Error::invalid(format!("weight norm must be positive, got {weight_norm_sq}")));
    }
    Ok((dk as f64).sqrt() / weight_norm_sq)
}
