//! Geometry of the probability simplex.
//!
//! Attention weights live on the simplex; the amplitude map `x = 2√ρ` sends
//! it onto the positive orthant of the radius-2 hypersphere, where the
//! squared Euclidean speed equals four times the Fisher information.

use crate::error::{Error, Result};

/// Tolerance on the algebraic constraints (normalisation, zero-sum velocity).
pub const CONSTRAINT_TOL: f64 = 1e-12;

/// Tolerance on `Σ x² = 4` for amplitude vectors.
pub const SPHERE_TOL: f64 = 1e-10;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Accepts `rho` only if it is nonnegative, finite and already sums to one.
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        check_nonnegative(&rho)?;
        let sum: f64 = rho.iter().sum();
        if (sum - 1.0).abs() > CONSTRAINT_TOL {
            return Err(Error::Constraint(format!("probabilities sum to {sum}, expected 1")));
        }
        Ok(Self(rho))
    }

    /// Divides by the total mass. Rejects empty or all-zero input.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        check_nonnegative(&weights)?;
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Constraint("weights have zero total mass".into()));
        }
        Ok(Self(weights.into_iter().map(|w| w / sum).collect()))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("empty distribution"));
        }
        Ok(Self(vec![1.0 / n as f64; n]))
    }

    /// Crate-internal constructor for values produced by a normalising
    /// computation (softmax, multiplicative updates).
    pub(crate) fn from_normalized_unchecked(rho: Vec<f64>) -> Self {
        debug_assert!((rho.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        Self(rho)
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

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_interior(&self) -> bool {
        self.0.iter().all(|&p| p > 0.0)
    }

    pub fn l1_distance(&self, other: &ProbabilityVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }
}

fn check_nonnegative(v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::invalid("empty distribution"));
    }
    if let Some((i, p)) = v.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
        return Err(Error::Constraint(format!("component {i} is {p}")));
    }
    Ok(())
}

/// Point on the radius-2 hypersphere, `x_i = 2√ρ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AmplitudeVector(Vec<f64>);

impl AmplitudeVector {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        check_nonnegative(&x)?;
        let norm_sq: f64 = x.iter().map(|v| v * v).sum();
        if (norm_sq - 4.0).abs() > SPHERE_TOL {
            return Err(Error::Constraint(format!("squared amplitude norm is {norm_sq}, expected 4")));
        }
        Ok(Self(x))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Velocity on the simplex; components sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(Vec<f64>);

impl TangentVector {
    pub fn new(rho_dot: Vec<f64>) -> Result<Self> {
        if let Some(v) = rho_dot.iter().find(|v| !v.is_finite()) {
            return Err(Error::Constraint(format!("non-finite velocity {v}")));
        }
        let sum: f64 = rho_dot.iter().sum();
        if sum.abs() > CONSTRAINT_TOL {
            return Err(Error::Constraint(format!("velocity components sum to {sum}, expected 0")));
        }
        Ok(Self(rho_dot))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn from_projected_unchecked(v: Vec<f64>) -> Self {
        Self(v)
    }
}

pub fn to_amplitude(p: &ProbabilityVector) -> AmplitudeVector {
    AmplitudeVector(p.0.iter().map(|&r| 2.0 * r.sqrt()).collect())
}

pub fn from_amplitude(x: &AmplitudeVector) -> ProbabilityVector {
    ProbabilityVector(x.0.iter().map(|&a| a * a / 4.0).collect())
}

/// Amplitude-space velocity `v_i = ρ̇_i / √ρ_i`.
pub fn amplitude_velocity(p: &ProbabilityVector, v: &TangentVector) -> Result<Vec<f64>> {
    check_dims(p, v)?;
    p.0.iter()
        .zip(&v.0)
        .enumerate()
        .map(|(i, (&r, &rd))| {
            if r == 0.0 {
                if rd == 0.0 {
                    Ok(0.0)
                } else {
                    Err(Error::SingularDirection { index: i, velocity: rd })
                }
            } else {
                Ok(rd / r.sqrt())
            }
        })
        .collect()
}

/// `I(ρ) = ¼ Σ ρ̇_i² / ρ_i`. Components with `ρ_i = 0` and `ρ̇_i = 0`
/// contribute nothing; `ρ_i = 0` with motion is rejected.
pub fn fisher_information(p: &ProbabilityVector, v: &TangentVector) -> Result<f64> {
    let speed_sq: f64 = amplitude_velocity(p, v)?.iter().map(|a| a * a).sum();
    Ok(0.25 * speed_sq)
}

/// `K = (m/2) Σ ρ̇_i² / ρ_i`.
pub fn kinetic_energy(p: &ProbabilityVector, v: &TangentVector, mass: f64) -> Result<f64> {
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::invalid(format!("mass must be positive, got {mass}")));
    }
    Ok(2.0 * mass * fisher_information(p, v)?)
}

fn check_dims(p: &ProbabilityVector, v: &TangentVector) -> Result<()> {
    if p.len() != v.0.len() {
        return Err(Error::Shape(format!("probability has {} components, velocity has {}", p.len(), v.0.len())));
    }
    Ok(())
}
