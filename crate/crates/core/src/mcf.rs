//! Exact reference flows for motion by mean curvature: hyperplanes (which
//! stand still) and spheres (which shrink at rate (d-1)D/R), together with
//! signed-distance fields and finite-difference regularity checks of the
//! eikonal and normal-velocity identities.
//!
//! Conventions: the signed distance d(x,t) is positive outside the interface
//! and negative inside; the curvature is the sum of the principal curvatures,
//! equal to -Δd on the interface; the normal velocity is -∂_t d and the flow
//! moves with V = D·κ.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::SubRng;

#[derive(Debug, Clone)]
pub enum Shape {
    /// Points x with n·x = offset; distance positive on the n side.
    HalfPlane { normal: Vec<f64>, offset: f64 },
    Sphere { center: Vec<f64>, r0: f64 },
}

#[derive(Debug, Clone)]
pub struct FlowSpec {
    pub shape: Shape,
    pub dimension: usize,
    /// The D in V = D * kappa.
    pub speed_const: f64,
}

impl FlowSpec {
    pub fn new(shape: Shape, dimension: usize, speed_const: f64) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidSpec("dimension must be at least 1".into()));
        }
        if !(speed_const > 0.0) || !speed_const.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "speed constant must be positive, got {speed_const}"
            )));
        }
        match &shape {
            Shape::HalfPlane { normal, .. } => {
                if normal.len() != dimension {
                    return Err(Error::InvalidSpec(format!(
                        "normal has {} components in dimension {dimension}",
                        normal.len()
                    )));
                }
                let len2: f64 = normal.iter().map(|c| c * c).sum();
                if (len2.sqrt() - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidSpec(format!(
                        "normal must be unit length, |n| = {}",
                        len2.sqrt()
                    )));
                }
            }
            Shape::Sphere { center, r0 } => {
                if center.len() != dimension {
                    return Err(Error::InvalidSpec(format!(
                        "center has {} components in dimension {dimension}",
                        center.len()
                    )));
                }
                if !(*r0 > 0.0) {
                    return Err(Error::InvalidSpec(format!(
                        "initial radius must be positive, got {r0}"
                    )));
                }
            }
        }
        Ok(FlowSpec {
            shape,
            dimension,
            speed_const,
        })
    }

    /// Time at which the interface vanishes (infinite for planes and for
    /// 1-d "spheres", i.e. points, which feel no curvature).
    pub fn extinction_time(&self) -> f64 {
        match &self.shape {
            Shape::HalfPlane { .. } => f64::INFINITY,
            Shape::Sphere { r0, .. } => {
                if self.dimension <= 1 {
                    f64::INFINITY
                } else {
                    r0 * r0 / (2.0 * (self.dimension - 1) as f64 * self.speed_const)
                }
            }
        }
    }
}

/// Radius at time t of a sphere shrinking by mean curvature:
/// R(t) = sqrt(R0^2 - 2(d-1)D t), the solution of dR/dt = -(d-1)D/R.
/// The extinction instant itself returns 0; later times are an error.
pub fn sphere_radius(r0: f64, t: f64, dimension: usize, d_coeff: f64) -> Result<f64> {
    if !(r0 > 0.0) || !(d_coeff > 0.0) || dimension == 0 {
        return Err(Error::InvalidSpec(format!(
            "sphere_radius needs R0 > 0, D > 0, d >= 1 (got {r0}, {d_coeff}, {dimension})"
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::DomainError(format!("negative time {t}")));
    }
    let sq = r0 * r0 - 2.0 * (dimension - 1) as f64 * d_coeff * t;
    if sq < 0.0 {
        let ext = r0 * r0 / (2.0 * (dimension - 1) as f64 * d_coeff);
        return Err(Error::Extinct(format!(
            "sphere extinct: t = {t} past extinction time {ext}"
        )));
    }
    Ok(sq.sqrt())
}

/// Signed distance from x to the flow interface at time t; positive outside,
/// negative inside.
pub fn signed_distance(flow: &FlowSpec, x: &[f64], t: f64) -> Result<f64> {
    if x.len() != flow.dimension {
        return Err(Error::DomainError(format!(
            "point has {} components in dimension {}",
            x.len(),
            flow.dimension
        )));
    }
    match &flow.shape {
        // Zero curvature: the plane does not move.
        Shape::HalfPlane { normal, offset } => {
            if !(t >= 0.0) {
                return Err(Error::DomainError(format!("negative time {t}")));
            }
            Ok(normal.iter().zip(x).map(|(n, xi)| n * xi).sum::<f64>() - offset)
        }
        Shape::Sphere { center, r0 } => {
            let r = sphere_radius(*r0, t, flow.dimension, flow.speed_const)?;
            let dist = center
                .iter()
                .zip(x)
                .map(|(c, xi)| (xi - c) * (xi - c))
                .sum::<f64>()
                .sqrt();
            Ok(dist - r)
        }
    }
}

/// The signed-distance field of a flow as a reusable closure-like object.
#[derive(Debug, Clone)]
pub struct SignedDistanceField {
    flow: FlowSpec,
}

impl SignedDistanceField {
    pub fn new(flow: FlowSpec) -> Self {
        SignedDistanceField { flow }
    }

    pub fn eval(&self, x: &[f64], t: f64) -> Result<f64> {
        signed_distance(&self.flow, x, t)
    }

    pub fn extinction_time(&self) -> f64 {
        self.flow.extinction_time()
    }

    pub fn flow(&self) -> &FlowSpec {
        &self.flow
    }
}

/// One finite-difference measurement in the regularity report.
#[derive(Debug, Clone, Serialize)]
pub struct RegularityRow {
    pub quantity: String,
    pub t: f64,
    pub point: Vec<f64>,
    pub value: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub rows: Vec<RegularityRow>,
    pub max_eikonal_residual: f64,
    pub max_velocity_residual: f64,
    /// Empirical Lipschitz constant of t -> d(x,t) over the sampled window.
    pub lipschitz_t: f64,
    pub samples: usize,
    pub pass: bool,
}

const FD_SPACE: f64 = 1e-5;
/// Wider step for second differences: h^2 in the denominator amplifies
/// roundoff, and 1e-4 balances truncation against it (~1e-7 total error).
const LAP_SPACE: f64 = 1e-4;
const FD_TIME: f64 = 1e-5;
const REG_TOL: f64 = 1e-6;

/// Check the signed-distance regularity identities by central differences
/// at `samples` random points per sampled time: |∇d| = 1 inside the band,
/// and on the interface the normal-velocity identity -∂_t d = -D·Δd, both
/// within 1e-6. Also reports the empirical Lipschitz constant of d in t.
/// For spheres the band must stay below R(t)/2 at each sampled time
/// (the distance is not smooth at the center).
pub fn regularity_check(
    flow: &FlowSpec,
    samples: usize,
    band: f64,
    rng: &mut SubRng,
) -> Result<RegularityReport> {
    if !(band > 0.0) {
        return Err(Error::DomainError(format!("band must be positive, got {band}")));
    }
    if samples == 0 {
        return Err(Error::DomainError("need at least one sample".into()));
    }
    let dim = flow.dimension;
    // Sample times: for spheres stop while the radius is still 40% of R0
    // (comfortably before extinction); planes use a unit window.
    let times: Vec<f64> = match &flow.shape {
        Shape::HalfPlane { .. } => (0..6).map(|j| j as f64 * 0.2).collect(),
        Shape::Sphere { r0, .. } => {
            if flow.extinction_time().is_finite() {
                let t_end = (r0 * r0 - (0.4 * r0) * (0.4 * r0))
                    / (2.0 * (dim - 1) as f64 * flow.speed_const);
                (0..6).map(|j| j as f64 * t_end / 5.0).collect()
            } else {
                (0..6).map(|j| j as f64 * 0.2).collect()
            }
        }
    };
    if let Shape::Sphere { r0, .. } = &flow.shape {
        for &t in &times {
            let r = sphere_radius(*r0, t, dim, flow.speed_const)?;
            if band >= r / 2.0 {
                return Err(Error::DomainError(format!(
                    "band {band} is not below R(t)/2 = {} at t = {t}: \
                     signed distance not smooth that deep",
                    r / 2.0
                )));
            }
        }
    }

    let surface_point = |flow: &FlowSpec, t: f64, off: f64, rng: &mut SubRng| -> Result<Vec<f64>> {
        match &flow.shape {
            Shape::HalfPlane { normal, offset } => {
                // Random tangential position plus a normal offset.
                let v: Vec<f64> = (0..dim).map(|_| 2.0 * rng.uniform() - 1.0).collect();
                let vn: f64 = v.iter().zip(normal).map(|(a, b)| a * b).sum();
                Ok((0..dim)
                    .map(|i| v[i] - vn * normal[i] + (offset + off) * normal[i])
                    .collect())
            }
            Shape::Sphere { center, r0 } => {
                let r = sphere_radius(*r0, t, dim, flow.speed_const)?;
                // Uniform direction from normalized Gaussians.
                let mut u: Vec<f64> = (0..dim).map(|_| rng.gaussian()).collect();
                let norm: f64 = u.iter().map(|c| c * c).sum::<f64>().sqrt();
                if norm < 1e-12 {
                    u = vec![0.0; dim];
                    u[0] = 1.0;
                } else {
                    for c in &mut u {
                        *c /= norm;
                    }
                }
                Ok((0..dim).map(|i| center[i] + (r + off) * u[i]).collect())
            }
        }
    };

    let mut rows = Vec::new();
    let mut max_eik = 0.0f64;
    let mut max_vel = 0.0f64;
    let mut lips = 0.0f64;

    for &t in &times {
        for s in 0..samples {
            // Eikonal at a random band point.
            let off = (2.0 * rng.uniform() - 1.0) * band;
            let x = surface_point(flow, t, off, rng)?;
            let mut grad2 = 0.0;
            for i in 0..dim {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += FD_SPACE;
                xm[i] -= FD_SPACE;
                let gi = (signed_distance(flow, &xp, t)? - signed_distance(flow, &xm, t)?)
                    / (2.0 * FD_SPACE);
                grad2 += gi * gi;
            }
            let eik_res = (grad2.sqrt() - 1.0).abs();
            max_eik = max_eik.max(eik_res);
            if s < 4 {
                rows.push(RegularityRow {
                    quantity: "eikonal".into(),
                    t,
                    point: x.clone(),
                    value: grad2.sqrt(),
                    residual: eik_res,
                });
            }

            // Velocity identity at an on-interface point: dt d = D * lap d.
            let xi = surface_point(flow, t, 0.0, rng)?;
            let dt_d = if t >= FD_TIME {
                (signed_distance(flow, &xi, t + FD_TIME)?
                    - signed_distance(flow, &xi, t - FD_TIME)?)
                    / (2.0 * FD_TIME)
            } else {
                // Second-order one-sided stencil at the window start.
                (-3.0 * signed_distance(flow, &xi, t)?
                    + 4.0 * signed_distance(flow, &xi, t + FD_TIME)?
                    - signed_distance(flow, &xi, t + 2.0 * FD_TIME)?)
                    / (2.0 * FD_TIME)
            };
            let mut lap = 0.0;
            let d0 = signed_distance(flow, &xi, t)?;
            for i in 0..dim {
                let mut xp = xi.clone();
                let mut xm = xi.clone();
                xp[i] += LAP_SPACE;
                xm[i] -= LAP_SPACE;
                lap += (signed_distance(flow, &xp, t)? - 2.0 * d0
                    + signed_distance(flow, &xm, t)?)
                    / (LAP_SPACE * LAP_SPACE);
            }
            let vel_res = (dt_d - flow.speed_const * lap).abs();
            max_vel = max_vel.max(vel_res);
            if s < 4 {
                rows.push(RegularityRow {
                    quantity: "velocity".into(),
                    t,
                    point: xi.clone(),
                    value: dt_d,
                    residual: vel_res,
                });
            }

            // Lipschitz-in-time estimate at the band point.
            if t >= FD_TIME {
                let rate = (signed_distance(flow, &x, t)?
                    - signed_distance(flow, &x, t - FD_TIME)?)
                    .abs()
                    / FD_TIME;
                lips = lips.max(rate);
            }
        }
    }

    Ok(RegularityReport {
        rows,
        max_eikonal_residual: max_eik,
        max_velocity_residual: max_vel,
        lipschitz_t: lips,
        samples,
        pass: max_eik <= REG_TOL && max_vel <= REG_TOL,
    })
}
