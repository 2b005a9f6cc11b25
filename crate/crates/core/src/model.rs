//! Model families and their parameter validation.
//!
//! A [`ModelSpec`] names one of the four model families and carries its
//! parameters. All downstream objects — voting functions, reaction terms,
//! dual trees, lattice dynamics — are constructed from a validated spec, so
//! the admissibility checks live here in one place.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Derived nonlinear-voter coefficients; recomputed on demand, never stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NlvCoeffs {
    pub b1: f64,
    pub b2: f64,
    /// Vote probabilities a_0..a_5 given k of 5 sampled neighbours are 1.
    pub a: [f64; 6],
}

/// One of the four model families with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum ModelSpec {
    /// Majority vote of three: g(p) = 3p^2 - 2p^3.
    Majority,
    /// Sexual reproduction with birth weight beta (beta = 4*lambda).
    SexualReproduction { beta: f64 },
    /// Lotka–Volterra on the p2 = p3 phase boundary; theta scales the
    /// perturbation clock, p3 the boundary location (p2 carried along).
    LotkaVolterraBoundary { theta: f64, p3: f64, p2: f64 },
    /// Nonlinear voter: resample five neighbours, adopt 1 with probability
    /// a_k when k of them are 1. Region-2 admissibility enforcement is
    /// opt-out so the degenerate boundary cases remain constructible.
    NonlinearVoter {
        a1: f64,
        a2: f64,
        #[serde(default = "default_true")]
        enforce_region2: bool,
    },
    /// Explicit cubic g(p) = p - c(p-u_minus)(p-u_zero)(p-u_plus).
    CustomCubic {
        c: f64,
        u_minus: f64,
        u_zero: f64,
        u_plus: f64,
    },
}

fn default_true() -> bool {
    true
}

fn is_probability(x: f64) -> bool {
    x.is_finite() && (0.0..=1.0).contains(&x)
}

impl ModelSpec {
    /// Validate family invariants. Called by every constructor downstream.
    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelSpec::Majority => Ok(()),
            ModelSpec::SexualReproduction { beta } => {
                if !beta.is_finite() || beta < 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "sexual reproduction needs beta >= 0, got {beta}"
                    )));
                }
                Ok(())
            }
            ModelSpec::LotkaVolterraBoundary { theta, p3, p2 } => {
                if !theta.is_finite() || theta <= 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "Lotka-Volterra needs theta > 0, got {theta}"
                    )));
                }
                if !is_probability(p3) || p3 == 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "Lotka-Volterra needs p3 in (0,1] so the event rate theta*p3 is positive, got {p3}"
                    )));
                }
                if !is_probability(p2) {
                    return Err(Error::InvalidSpec(format!(
                        "Lotka-Volterra carries p2 as a probability, got {p2}"
                    )));
                }
                Ok(())
            }
            ModelSpec::NonlinearVoter { a1, a2, enforce_region2 } => {
                if !is_probability(a1) || !is_probability(a2) {
                    return Err(Error::InvalidSpec(format!(
                        "nonlinear voter probabilities out of range: a1 = {a1}, a2 = {a2}"
                    )));
                }
                // Attractiveness: 0 <= a1 <= a2 <= 1/2.
                if !(a1 <= a2 && a2 <= 0.5) {
                    return Err(Error::InvalidSpec(format!(
                        "nonlinear voter needs 0 <= a1 <= a2 <= 1/2 (attractive), got a1 = {a1}, a2 = {a2}"
                    )));
                }
                if enforce_region2 {
                    self.require_region2()?;
                }
                Ok(())
            }
            ModelSpec::CustomCubic { c, u_minus, u_zero, u_plus } => {
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::InvalidSpec(format!("custom cubic needs c > 0, got {c}")));
                }
                if !(u_minus < u_zero && u_zero < u_plus) {
                    return Err(Error::InvalidSpec(format!(
                        "custom cubic needs u_minus < u_zero < u_plus, got ({u_minus}, {u_zero}, {u_plus})"
                    )));
                }
                let gap = (u_plus - u_zero) - (u_zero - u_minus);
                if gap.abs() > 1e-12 {
                    return Err(Error::InvalidSpec(format!(
                        "custom cubic fixed points must be equally spaced; spacing mismatch {gap:e}"
                    )));
                }
                if !is_probability(u_minus) || !is_probability(u_plus) {
                    return Err(Error::InvalidSpec(
                        "custom cubic fixed points must lie in [0,1]".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Derived nonlinear-voter coefficients b1 = 5a1 - 1, b2 = 10a2 - 4
    /// (equivalently b1 = 4a1 - a4, b2 = 6a2 - 4a3 with a4 = 1-a1,
    /// a3 = 1-a2), plus the full vote table a_0..a_5.
    pub fn nlv_coeffs(&self) -> Result<NlvCoeffs> {
        match *self {
            ModelSpec::NonlinearVoter { a1, a2, .. } => {
                let a3 = 1.0 - a2;
                let a4 = 1.0 - a1;
                Ok(NlvCoeffs {
                    b1: 4.0 * a1 - a4,
                    b2: 6.0 * a2 - 4.0 * a3,
                    a: [0.0, a1, a2, a3, a4, 1.0],
                })
            }
            _ => Err(Error::InvalidSpec(
                "nlv_coeffs is only defined for the nonlinear voter family".into(),
            )),
        }
    }

    /// Region-2 admissibility for the nonlinear voter: b1 > 0 with
    /// 3b1 + b2 < 0 (two interior stable points straddling 1/2).
    pub fn require_region2(&self) -> Result<()> {
        let c = self.nlv_coeffs()?;
        if c.b1 > 0.0 && 3.0 * c.b1 + c.b2 < 0.0 {
            Ok(())
        } else {
            Err(Error::NotInRegion2(format!(
                "need b1 > 0 and 3*b1 + b2 < 0, got b1 = {}, 3*b1 + b2 = {}",
                c.b1,
                3.0 * c.b1 + c.b2
            )))
        }
    }

    /// Total event rate of the family's reaction clock: the r in
    /// phi = r*(g - p). Sexual reproduction events fire at rate 1 + beta
    /// (death at 1, birth attempts at beta); the Lotka–Volterra boundary
    /// perturbation runs at theta*p3; the remaining families at rate 1.
    pub fn reaction_rate(&self) -> f64 {
        match *self {
            ModelSpec::SexualReproduction { beta } => 1.0 + beta,
            ModelSpec::LotkaVolterraBoundary { theta, p3, .. } => theta * p3,
            _ => 1.0,
        }
    }
}

/// The reference parameterization of each family, used throughout the test
/// suite and as defaults for the experiment configs.
pub fn reference_specs() -> Vec<ModelSpec> {
    vec![
        ModelSpec::Majority,
        ModelSpec::SexualReproduction { beta: 4.5 },
        ModelSpec::LotkaVolterraBoundary { theta: 1.0, p3: 0.5, p2: 0.5 },
        ModelSpec::NonlinearVoter { a1: 0.25, a2: 0.3, enforce_region2: true },
        ModelSpec::CustomCubic { c: 1.0, u_minus: 0.0, u_zero: 0.5, u_plus: 1.0 },
    ]
}
