//! Explicit finite-difference solver for the bistable reaction–diffusion
//! equation du/dt = D Δu + ε⁻² φ(u) in 1 and 2 dimensions, with front
//! tracking, traveling-wave speed measurement, exact sign evaluation of the
//! wave-speed integral, and a radial (axisymmetric) reference solver for
//! shrinking-circle experiments.
//!
//! The scheme is forward Euler with the second-order centered Laplacian,
//! guarded by the usual diffusion CFL bound and a reaction bound
//! dt·ε⁻²·max|φ'| ≤ 1/2. Solutions are never clamped: leaving [0,1] beyond
//! roundoff is reported as an error, which keeps the discrete maximum
//! principle honest.

use num_rational::BigRational;
use num_traits::Signed;

use crate::error::{Error, Result};
use crate::poly::{rat_from_f64, Poly, RatPoly};
use crate::stats::{linear_fit, LinearFit};

// ---------------------------------------------------------------------------
// Grid fields
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Periodic,
    Neumann,
}

/// A 1- or 2-dimensional array of values in [0,1] on a uniform grid.
/// One-dimensional fields have ny == 1.
#[derive(Debug, Clone)]
pub struct GridField {
    nx: usize,
    ny: usize,
    h: f64,
    boundary: Boundary,
    data: Vec<f64>,
}

impl GridField {
    pub fn new_1d(
        n: usize,
        h: f64,
        boundary: Boundary,
        f: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let data = (0..n).map(|i| f(i as f64 * h)).collect();
        Self::from_parts(n, 1, h, boundary, data)
    }

    pub fn new_2d(
        nx: usize,
        ny: usize,
        h: f64,
        boundary: Boundary,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                data.push(f(i as f64 * h, j as f64 * h));
            }
        }
        Self::from_parts(nx, ny, h, boundary, data)
    }

    pub fn from_values(
        nx: usize,
        ny: usize,
        h: f64,
        boundary: Boundary,
        data: Vec<f64>,
    ) -> Result<Self> {
        Self::from_parts(nx, ny, h, boundary, data)
    }

    fn from_parts(
        nx: usize,
        ny: usize,
        h: f64,
        boundary: Boundary,
        data: Vec<f64>,
    ) -> Result<Self> {
        if nx < 4 || (ny != 1 && ny < 4) {
            return Err(Error::InvalidSpec(format!(
                "grid too small: {nx} x {ny} (need at least 4 points per axis)"
            )));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidSpec(format!("grid spacing must be positive, got {h}")));
        }
        if data.len() != nx * ny {
            return Err(Error::InvalidSpec(format!(
                "data length {} does not match {nx} x {ny}",
                data.len()
            )));
        }
        for (k, v) in data.iter().enumerate() {
            if !v.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(v) {
                return Err(Error::InvalidSpec(format!(
                    "field value {v} at index {k} outside [0,1]"
                )));
            }
        }
        Ok(GridField { nx, ny, h, boundary, data })
    }

    pub fn dimension(&self) -> usize {
        if self.ny == 1 { 1 } else { 2 }
    }

    pub fn nx(&self) -> usize { self.nx }
    pub fn ny(&self) -> usize { self.ny }
    pub fn h(&self) -> f64 { self.h }
    pub fn boundary(&self) -> Boundary { self.boundary }
    pub fn data(&self) -> &[f64] { &self.data }

    pub fn x(&self, i: usize) -> f64 { i as f64 * self.h }
    pub fn y(&self, j: usize) -> f64 { j as f64 * self.h }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nx + i]
    }

    /// Bilinear interpolation at physical coordinates (clamped to the grid).
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let fx = (x / self.h).clamp(0.0, (self.nx - 1) as f64);
        let fy = (y / self.h).clamp(0.0, (self.ny - 1) as f64);
        let i0 = (fx.floor() as usize).min(self.nx - 2.min(self.nx - 1));
        let j0 = if self.ny == 1 { 0 } else { (fy.floor() as usize).min(self.ny - 2) };
        let tx = fx - i0 as f64;
        if self.ny == 1 {
            let a = self.get(i0, 0);
            let b = self.get((i0 + 1).min(self.nx - 1), 0);
            return a + tx * (b - a);
        }
        let ty = fy - j0 as f64;
        let i1 = (i0 + 1).min(self.nx - 1);
        let j1 = (j0 + 1).min(self.ny - 1);
        let v00 = self.get(i0, j0);
        let v10 = self.get(i1, j0);
        let v01 = self.get(i0, j1);
        let v11 = self.get(i1, j1);
        v00 * (1.0 - tx) * (1.0 - ty)
            + v10 * tx * (1.0 - ty)
            + v01 * (1.0 - tx) * ty
            + v11 * tx * ty
    }
}

/// Step profile in 1-D: `left` for x < x0, `right` for x > x0, midpoint
/// value on a grid point within h/4 of x0.
pub fn step_1d(
    n: usize,
    h: f64,
    boundary: Boundary,
    x0: f64,
    left: f64,
    right: f64,
) -> Result<GridField> {
    GridField::new_1d(n, h, boundary, |x| {
        if (x - x0).abs() <= h / 4.0 {
            0.5 * (left + right)
        } else if x < x0 {
            left
        } else {
            right
        }
    })
}

/// Disk profile in 2-D: `inside` within radius r0 of (cx, cy), `outside`
/// beyond, ring cells set to the midpoint.
pub fn disk_2d(
    nx: usize,
    ny: usize,
    h: f64,
    boundary: Boundary,
    cx: f64,
    cy: f64,
    r0: f64,
    inside: f64,
    outside: f64,
) -> Result<GridField> {
    GridField::new_2d(nx, ny, h, boundary, |x, y| {
        let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - r0;
        if d.abs() <= h / 4.0 {
            0.5 * (inside + outside)
        } else if d < 0.0 {
            inside
        } else {
            outside
        }
    })
}

// ---------------------------------------------------------------------------
// Problems and stepping
// ---------------------------------------------------------------------------

/// The reaction–diffusion problem du/dt = D Δu + s φ(u) with s = ε⁻²
/// (s = 1 when eps is the ∞ sentinel, meaning an unscaled reaction).
#[derive(Debug, Clone)]
pub struct RdeProblem {
    pub phi: Poly,
    pub eps: f64,
    pub diffusion: f64,
    pub dt: f64,
    pub init: GridField,
}

impl RdeProblem {
    pub fn new(phi: Poly, eps: f64, diffusion: f64, dt: f64, init: GridField) -> Result<Self> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::InvalidSpec(format!("eps must be positive or infinite, got {eps}")));
        }
        if !(diffusion > 0.0) || !diffusion.is_finite() {
            return Err(Error::InvalidSpec(format!("diffusion must be positive, got {diffusion}")));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidSpec(format!("dt must be positive, got {dt}")));
        }
        let problem = RdeProblem { phi, eps, diffusion, dt, init };
        let h = problem.init.h();
        let dim = problem.init.dimension() as f64;
        let diff_limit = h * h / (2.0 * dim * problem.diffusion);
        if problem.dt > diff_limit * (1.0 + 1e-12) {
            return Err(Error::StabilityViolation(format!(
                "dt = {} exceeds the diffusion bound h^2/(2 d D) = {diff_limit}",
                problem.dt
            )));
        }
        let m = max_abs_derivative_on_unit(&problem.phi)?;
        let react = problem.dt * problem.scale() * m;
        if react > 0.5 * (1.0 + 1e-12) {
            return Err(Error::StabilityViolation(format!(
                "dt·ε⁻²·max|φ'| = {react} exceeds 1/2"
            )));
        }
        Ok(problem)
    }

    /// ε⁻², or 1 for the unscaled sentinel.
    pub fn scale(&self) -> f64 {
        if self.eps.is_finite() {
            1.0 / (self.eps * self.eps)
        } else {
            1.0
        }
    }
}

/// max_{u in [0,1]} |φ'(u)|, evaluated at the endpoints and the exactly
/// isolated roots of φ''.
fn max_abs_derivative_on_unit(phi: &Poly) -> Result<f64> {
    let d1 = phi.derivative();
    let mut points = vec![0.0, 1.0];
    let d2 = RatPoly::from_f64_coeffs(phi.coeffs())?
        .derivative()
        .derivative();
    if !d2.is_zero() && d2.degree() >= 1 {
        points.extend(crate::poly::real_roots_in(&d2, 0.0, 1.0)?.roots);
    }
    Ok(points
        .iter()
        .map(|p| d1.eval(*p).abs())
        .fold(0.0, f64::max))
}

fn neighbor_maps(n: usize, boundary: Boundary) -> (Vec<usize>, Vec<usize>) {
    let mut left = vec![0usize; n];
    let mut right = vec![0usize; n];
    for i in 0..n {
        left[i] = if i > 0 {
            i - 1
        } else {
            match boundary {
                Boundary::Periodic => n - 1,
                Boundary::Neumann => 1,
            }
        };
        right[i] = if i + 1 < n {
            i + 1
        } else {
            match boundary {
                Boundary::Periodic => 0,
                Boundary::Neumann => n - 2,
            }
        };
    }
    (left, right)
}

/// Snapshot sequence of a solve.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub fields: Vec<GridField>,
}

impl Trajectory {
    pub fn last(&self) -> &GridField {
        self.fields.last().expect("trajectory always holds the initial field")
    }
}

/// Integrate the problem to `horizon`, keeping ~33 snapshots.
pub fn solve(problem: &RdeProblem, horizon: f64) -> Result<Trajectory> {
    solve_with_snapshots(problem, horizon, 33)
}

/// Integrate the problem to `horizon`, recording `snapshots` evenly spaced
/// fields (always including the initial and final states).
pub fn solve_with_snapshots(
    problem: &RdeProblem,
    horizon: f64,
    snapshots: usize,
) -> Result<Trajectory> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::DomainError(format!("horizon must be positive, got {horizon}")));
    }
    let snapshots = snapshots.max(2);
    let dt = problem.dt;
    let nsteps = (horizon / dt - 1e-9).ceil().max(1.0) as u64;
    let field = &problem.init;
    let nx = field.nx();
    let ny = field.ny();
    let h = field.h();
    let inv_h2 = 1.0 / (h * h);
    let d = problem.diffusion;
    let s = problem.scale();
    let phi = &problem.phi;
    let (xl, xr) = neighbor_maps(nx, field.boundary());
    let (yl, yr) = if ny > 1 {
        neighbor_maps(ny, field.boundary())
    } else {
        (vec![0], vec![0])
    };

    let mut u = field.data().to_vec();
    let mut next = vec![0.0f64; u.len()];
    let mut times = vec![0.0];
    let mut fields = vec![field.clone()];
    let record = snapshot_steps(nsteps, snapshots);
    let mut next_record = 0usize;

    let mut t = 0.0;
    for k in 1..=nsteps {
        let step_dt = if k == nsteps { horizon - t } else { dt };
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        if ny == 1 {
            for i in 0..nx {
                let lap = (u[xl[i]] - 2.0 * u[i] + u[xr[i]]) * inv_h2;
                let v = u[i] + step_dt * (d * lap + s * phi.eval(u[i]));
                lo = lo.min(v);
                hi = hi.max(v);
                next[i] = v;
            }
        } else {
            for j in 0..ny {
                let row = j * nx;
                let up = yl[j] * nx;
                let dn = yr[j] * nx;
                for i in 0..nx {
                    let c = u[row + i];
                    let lap =
                        (u[row + xl[i]] + u[row + xr[i]] + u[up + i] + u[dn + i] - 4.0 * c)
                            * inv_h2;
                    let v = c + step_dt * (d * lap + s * phi.eval(c));
                    lo = lo.min(v);
                    hi = hi.max(v);
                    next[row + i] = v;
                }
            }
        }
        std::mem::swap(&mut u, &mut next);
        t = if k == nsteps { horizon } else { k as f64 * dt };
        if lo < -1e-8 || hi > 1.0 + 1e-8 {
            return Err(Error::RangeEscape(format!(
                "solution left [0,1] at t = {t}: range [{lo}, {hi}]"
            )));
        }
        if next_record < record.len() && record[next_record] == k {
            next_record += 1;
            times.push(t);
            fields.push(GridField::from_parts(nx, ny, h, field.boundary(), u.clone())?);
        }
    }
    Ok(Trajectory { times, fields })
}

/// Step indices at which to record: ~`snapshots - 1` evenly spaced marks,
/// always ending at `nsteps`.
fn snapshot_steps(nsteps: u64, snapshots: usize) -> Vec<u64> {
    let m = (snapshots - 1).max(1) as u64;
    let mut steps: Vec<u64> = (1..=m)
        .map(|j| (j * nsteps).div_ceil(m).max(1))
        .collect();
    steps.dedup();
    steps
}

// ---------------------------------------------------------------------------
// Front tracking
// ---------------------------------------------------------------------------

/// Level-crossing track of a moving front with its fitted speed.
#[derive(Debug, Clone)]
pub struct FrontTrack {
    pub times: Vec<f64>,
    /// 1-D: x-location of the level crossing; 2-D radial: level-set radius.
    pub positions: Vec<f64>,
    /// Least-squares slope of position vs time over the second half of the
    /// window.
    pub speed: f64,
    pub fit: LinearFit,
}

/// The unique interior root of φ in (0,1) with φ' > 0 (the unstable
/// equilibrium the front profile crosses).
pub fn unstable_root(phi: &Poly) -> Result<f64> {
    let rp = RatPoly::from_f64_coeffs(phi.coeffs())?;
    let roots = crate::poly::real_roots_in(&rp, 0.0, 1.0)?.roots;
    let d1 = phi.derivative();
    let unstable: Vec<f64> = roots
        .into_iter()
        .filter(|r| *r > 1e-9 && *r < 1.0 - 1e-9 && d1.eval(*r) > 0.0)
        .collect();
    match unstable.len() {
        1 => Ok(unstable[0]),
        0 => Err(Error::DomainError("φ has no interior unstable root in (0,1)".into())),
        _ => Err(Error::DomainError(format!(
            "φ has {} interior unstable roots; level is ambiguous",
            unstable.len()
        ))),
    }
}

/// First crossing of `level` scanning left to right; linear interpolation
/// between the straddling grid values, ties toward the smaller coordinate.
fn crossing_1d(field: &GridField, level: f64) -> Option<f64> {
    let u = field.data();
    let h = field.h();
    for i in 0..u.len() {
        if u[i] == level {
            return Some(i as f64 * h);
        }
        if i + 1 < u.len() && (u[i] - level) * (u[i + 1] - level) < 0.0 {
            return Some(i as f64 * h + h * (level - u[i]) / (u[i + 1] - u[i]));
        }
    }
    None
}

/// Track the u = u_0 level crossing of a 1-D front and fit its speed on the
/// second half of the time window.
pub fn wave_speed(problem: &RdeProblem, horizon: f64) -> Result<FrontTrack> {
    if problem.init.dimension() != 1 {
        return Err(Error::DomainError("wave_speed needs a 1-D problem".into()));
    }
    let level = unstable_root(&problem.phi)?;
    let traj = solve_with_snapshots(problem, horizon, 81)?;
    let mut times = Vec::new();
    let mut positions = Vec::new();
    for (t, f) in traj.times.iter().zip(&traj.fields) {
        match crossing_1d(f, level) {
            Some(x) => {
                times.push(*t);
                positions.push(x);
            }
            None => {
                return Err(Error::FrontLost(format!("no u = {level} crossing at t = {t}")))
            }
        }
    }
    let half = times.len() / 2;
    let fit = linear_fit(&times[half..], &positions[half..])?;
    Ok(FrontTrack { times, positions, speed: fit.slope, fit })
}

// ---------------------------------------------------------------------------
// The wave-speed integral, exactly
// ---------------------------------------------------------------------------

/// Sign and exact value of ∫_0^upper φ(u) du.
#[derive(Debug, Clone)]
pub struct IntegralSign {
    /// -1, 0, or +1; the sign of the traveling-wave speed.
    pub sign: i32,
    pub value: BigRational,
}

impl IntegralSign {
    pub fn value_f64(&self) -> f64 {
        crate::poly::rat_to_f64(&self.value)
    }
}

/// Evaluate ∫_0^upper φ exactly through the polynomial antiderivative.
pub fn integral_sign(phi: &RatPoly, upper: &BigRational) -> IntegralSign {
    let anti = phi.antiderivative();
    let value = anti.eval(upper);
    let sign = if value.is_positive() {
        1
    } else if value.is_negative() {
        -1
    } else {
        0
    };
    IntegralSign { sign, value }
}

/// Convenience wrapper lifting f64 data exactly into rationals.
pub fn integral_sign_f64(phi: &Poly, upper: f64) -> Result<IntegralSign> {
    Ok(integral_sign(
        &RatPoly::from_f64_coeffs(phi.coeffs())?,
        &rat_from_f64(upper)?,
    ))
}

// ---------------------------------------------------------------------------
// Shrinking circle
// ---------------------------------------------------------------------------

const CIRCLE_RAYS: usize = 64;
const CIRCLE_SNAPSHOTS: usize = 25;

/// Level-set radius of a 2-D field around the domain center: average of the
/// first u = level crossings along rays.
pub fn level_set_radius(field: &GridField, level: f64) -> Option<f64> {
    let h = field.h();
    let cx = (field.nx() - 1) as f64 * h / 2.0;
    let cy = (field.ny() - 1) as f64 * h / 2.0;
    let rmax = cx.min(cy) - h;
    let dr = h / 2.0;
    let mut found = Vec::new();
    for k in 0..CIRCLE_RAYS {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / CIRCLE_RAYS as f64;
        let (ct, st) = (theta.cos(), theta.sin());
        let mut prev = field.sample(cx, cy);
        let mut r = dr;
        while r <= rmax {
            let v = field.sample(cx + r * ct, cy + r * st);
            if (prev - level) * (v - level) <= 0.0 && prev != v {
                let frac = (level - prev) / (v - prev);
                found.push(r - dr + frac * dr);
                break;
            }
            prev = v;
            r += dr;
        }
    }
    if found.len() * 4 < CIRCLE_RAYS * 3 {
        return None;
    }
    Some(found.iter().sum::<f64>() / found.len() as f64)
}

/// Track the radius of a shrinking circular interface (2-D radial step
/// initial data) through the u = u_0 level set.
pub fn shrinking_circle(problem: &RdeProblem, horizon: f64) -> Result<FrontTrack> {
    if problem.init.dimension() != 2 {
        return Err(Error::DomainError("shrinking_circle needs a 2-D problem".into()));
    }
    let level = unstable_root(&problem.phi)?;
    let traj = solve_with_snapshots(problem, horizon, CIRCLE_SNAPSHOTS)?;
    let h = problem.init.h();
    let mut times = Vec::new();
    let mut positions = Vec::new();
    for (t, f) in traj.times.iter().zip(&traj.fields) {
        match level_set_radius(f, level) {
            Some(r) if r >= 5.0 * h => {
                times.push(*t);
                positions.push(r);
            }
            _ => {
                return Err(Error::FrontLost(format!(
                    "interface radius below 5h or lost at t = {t}"
                )))
            }
        }
    }
    let half = times.len() / 2;
    let fit = linear_fit(&times[half..], &positions[half..])?;
    Ok(FrontTrack { times, positions, speed: fit.slope, fit })
}

// ---------------------------------------------------------------------------
// Radial reference solver
// ---------------------------------------------------------------------------

/// Axisymmetric problem du/dt = D (u_rr + (d-1) u_r / r) + s φ(u) on
/// cell-centered radii r_i = (i+1/2)·(r_max/n), zero-flux at both ends.
#[derive(Debug, Clone)]
pub struct RadialProblem {
    pub phi: Poly,
    pub eps: f64,
    pub diffusion: f64,
    pub dimension: usize,
    pub r_max: f64,
    pub n: usize,
    pub dt: f64,
}

#[derive(Debug, Clone)]
pub struct RadialSolution {
    pub times: Vec<f64>,
    /// Cell-center radii.
    pub r: Vec<f64>,
    pub profiles: Vec<Vec<f64>>,
}

impl RadialSolution {
    /// First u = level crossing of the profile at snapshot k.
    pub fn front_radius(&self, k: usize, level: f64) -> Option<f64> {
        let u = &self.profiles[k];
        for i in 0..u.len() - 1 {
            if u[i] == level {
                return Some(self.r[i]);
            }
            if (u[i] - level) * (u[i + 1] - level) < 0.0 {
                let frac = (level - u[i]) / (u[i + 1] - u[i]);
                return Some(self.r[i] + frac * (self.r[i + 1] - self.r[i]));
            }
        }
        None
    }
}

/// Integrate the radial problem; conservative discretization of
/// r^{1-d} (r^{d-1} u_r)_r with face-weighted fluxes.
pub fn solve_radial(
    problem: &RadialProblem,
    init: impl Fn(f64) -> f64,
    horizon: f64,
    snapshots: usize,
) -> Result<RadialSolution> {
    let n = problem.n;
    if n < 8 {
        return Err(Error::InvalidSpec("radial grid needs at least 8 cells".into()));
    }
    if problem.dimension < 2 {
        return Err(Error::InvalidSpec("radial solver needs dimension >= 2".into()));
    }
    if problem.eps.is_nan() || problem.eps <= 0.0 {
        return Err(Error::InvalidSpec(format!("eps must be positive, got {}", problem.eps)));
    }
    if !(horizon > 0.0) {
        return Err(Error::DomainError(format!("horizon must be positive, got {horizon}")));
    }
    let hr = problem.r_max / n as f64;
    let d = problem.diffusion;
    let s = if problem.eps.is_finite() { 1.0 / (problem.eps * problem.eps) } else { 1.0 };
    let pow = (problem.dimension - 1) as i32;
    let r: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * hr).collect();
    // Face weights (r_face / r_center)^{d-1}; zero flux through r = 0 and
    // the outer wall.
    let mut wm = vec![0.0f64; n];
    let mut wp = vec![0.0f64; n];
    for i in 0..n {
        if i > 0 {
            wm[i] = ((i as f64) * hr / r[i]).powi(pow);
        }
        if i + 1 < n {
            wp[i] = ((i as f64 + 1.0) * hr / r[i]).powi(pow);
        }
    }
    let inv_h2 = 1.0 / (hr * hr);
    let a_max = (0..n)
        .map(|i| d * (wm[i] + wp[i]) * inv_h2)
        .fold(0.0, f64::max);
    if problem.dt * a_max > 1.0 + 1e-12 {
        return Err(Error::StabilityViolation(format!(
            "radial dt = {} exceeds the diffusion bound {}",
            problem.dt,
            1.0 / a_max
        )));
    }
    let m = max_abs_derivative_on_unit(&problem.phi)?;
    if problem.dt * s * m > 0.5 * (1.0 + 1e-12) {
        return Err(Error::StabilityViolation(format!(
            "radial dt·ε⁻²·max|φ'| = {} exceeds 1/2",
            problem.dt * s * m
        )));
    }

    let mut u: Vec<f64> = r.iter().map(|ri| init(*ri)).collect();
    for v in &u {
        if !v.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(v) {
            return Err(Error::InvalidSpec(format!("radial init value {v} outside [0,1]")));
        }
    }
    let snapshots = snapshots.max(2);
    let nsteps = (horizon / problem.dt - 1e-9).ceil().max(1.0) as u64;
    let mut next = vec![0.0f64; n];
    let mut times = vec![0.0];
    let mut profiles = vec![u.clone()];
    let record = snapshot_steps(nsteps, snapshots);
    let mut next_record = 0usize;
    let mut t = 0.0;
    for k in 1..=nsteps {
        let step_dt = if k == nsteps { horizon - t } else { problem.dt };
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            let um = if i > 0 { u[i - 1] } else { u[i] };
            let up = if i + 1 < n { u[i + 1] } else { u[i] };
            let lap = (wp[i] * (up - u[i]) - wm[i] * (u[i] - um)) * inv_h2;
            let v = u[i] + step_dt * (d * lap + s * problem.phi.eval(u[i]));
            lo = lo.min(v);
            hi = hi.max(v);
            next[i] = v;
        }
        std::mem::swap(&mut u, &mut next);
        t = if k == nsteps { horizon } else { k as f64 * problem.dt };
        if lo < -1e-8 || hi > 1.0 + 1e-8 {
            return Err(Error::RangeEscape(format!(
                "radial solution left [0,1] at t = {t}: range [{lo}, {hi}]"
            )));
        }
        if next_record < record.len() && record[next_record] == k {
            next_record += 1;
            times.push(t);
            profiles.push(u.clone());
        }
    }
    Ok(RadialSolution { times, r, profiles })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gfun::forward_phi;
    use crate::model::ModelSpec;
    use crate::poly::rat;
    use crate::rng::{derive_key64, Label, SubRng};
    use num_traits::Zero;

    fn sr_phi(beta: f64) -> Poly {
        forward_phi(&ModelSpec::SexualReproduction { beta }).unwrap().poly
    }

    fn sr_plateau(beta: f64) -> f64 {
        // Top stable root rho2 = (1 + sqrt(1-4/beta))/2.
        (1.0 + (1.0 - 4.0 / beta).sqrt()) / 2.0
    }

    /// dt safely inside both stability limits and the discrete
    /// maximum-principle bound (diffusion + reaction weights summing
    /// below 1).
    fn safe_dt(phi: &Poly, eps: f64, diffusion: f64, h: f64, dim: usize) -> f64 {
        let s = if eps.is_finite() { 1.0 / (eps * eps) } else { 1.0 };
        let m = max_abs_derivative_on_unit(phi).unwrap();
        let cap_sum = 1.0 / (2.0 * dim as f64 * diffusion / (h * h) + s * m);
        let cap_react = 0.5 / (s * m);
        0.9 * cap_sum.min(cap_react)
    }

    #[test]
    fn stability_guards_trigger() {
        let phi = sr_phi(4.5);
        let init = GridField::new_1d(16, 0.1, Boundary::Neumann, |_| 0.5).unwrap();
        // Diffusion bound: h^2/(2D) = 0.01.
        assert!(matches!(
            RdeProblem::new(phi.clone(), f64::INFINITY, 0.5, 0.02, init.clone()),
            Err(Error::StabilityViolation(_))
        ));
        // Reaction bound with a strong scale: ε⁻² max|φ'| dt > 1/2.
        assert!(matches!(
            RdeProblem::new(phi.clone(), 0.01, 0.5, 0.005, init.clone()),
            Err(Error::StabilityViolation(_))
        ));
        assert!(RdeProblem::new(phi, f64::INFINITY, 0.5, 0.005, init).is_ok());
    }

    #[test]
    fn constant_plateau_stays_put() {
        // init ≡ u_+ is an equilibrium: constant in time to 1e-12.
        let up = sr_plateau(4.5);
        for boundary in [Boundary::Neumann, Boundary::Periodic] {
            let init = GridField::new_1d(32, 0.05, boundary, |_| up).unwrap();
            let phi = sr_phi(4.5);
            let dt = safe_dt(&phi, 0.1, 0.5, 0.05, 1);
            let problem = RdeProblem::new(phi, 0.1, 0.5, dt, init).unwrap();
            let traj = solve(&problem, 0.5).unwrap();
            for v in traj.last().data() {
                assert!((v - up).abs() <= 1e-12, "{v} vs {up}");
            }
        }
    }

    #[test]
    fn comparison_principle_preserves_order() {
        let phi = Poly::new(vec![0.0, -1.0, 3.0, -2.0]); // majority φ
        let n = 64;
        let h = 0.05;
        let dt = safe_dt(&phi, f64::INFINITY, 0.5, h, 1);
        let mut rng = SubRng::new(derive_key64(777, &[Label::Name("cmp")]));
        for pair in 0..20 {
            let base: Vec<f64> = (0..n)
                .map(|i| {
                    let x = i as f64 * h;
                    (0.5 + 0.3 * (2.0 * std::f64::consts::PI * x / (n as f64 * h)).sin()
                        + 0.1 * (rng.uniform() - 0.5))
                        .clamp(0.02, 0.9)
                })
                .collect();
            let bump: Vec<f64> = base
                .iter()
                .map(|v| (v + 0.05 + 0.05 * rng.uniform()).clamp(0.0, 0.98))
                .collect();
            let lo = GridField::from_parts(n, 1, h, Boundary::Periodic, base).unwrap();
            let hi = GridField::from_parts(n, 1, h, Boundary::Periodic, bump).unwrap();
            let p_lo = RdeProblem::new(phi.clone(), f64::INFINITY, 0.5, dt, lo).unwrap();
            let p_hi = RdeProblem::new(phi.clone(), f64::INFINITY, 0.5, dt, hi).unwrap();
            let f_lo = solve(&p_lo, 0.3).unwrap();
            let f_hi = solve(&p_hi, 0.3).unwrap();
            for (a, b) in f_lo.last().data().iter().zip(f_hi.last().data()) {
                assert!(*a <= *b + 1e-10, "pair {pair}: order violated ({a} > {b})");
            }
        }
    }

    #[test]
    fn odd_symmetry_about_center_is_preserved() {
        // For β = 4.5, φ is antisymmetric about u0 = 1/3; antisymmetric
        // initial data keep u(center) = u0.
        let phi = sr_phi(4.5);
        let n = 201; // odd: grid point exactly at the center
        let h = 0.02;
        let mid = (n - 1) / 2;
        let u0 = 1.0 / 3.0;
        let data: Vec<f64> = (0..n)
            .map(|i| {
                let y = (i as f64 - mid as f64) * h;
                u0 + (1.0 / 3.0) * (y / 0.1).tanh()
            })
            .collect();
        // Make the profile antisymmetric to the last bit.
        let mut sym = data;
        for j in 0..mid {
            sym[j] = 2.0 * u0 - sym[2 * mid - j];
        }
        let init = GridField::from_parts(n, 1, h, Boundary::Neumann, sym).unwrap();
        let dt = safe_dt(&phi, 0.2, 0.5, h, 1);
        let problem = RdeProblem::new(phi, 0.2, 0.5, dt, init).unwrap();
        let traj = solve(&problem, 1.0).unwrap();
        let center = traj.last().get(mid, 0);
        assert!((center - u0).abs() <= 1e-8, "center drifted to {center}");
    }

    #[test]
    fn wave_is_stationary_at_the_symmetric_beta() {
        // β = 4.5, ε = 0.05, D = 1/2: the front between u_+ and 0 stands
        // still; fitted |c| well below 0.02.
        let phi = sr_phi(4.5);
        let h = 0.01;
        let n = 801;
        let init = step_1d(n, h, Boundary::Neumann, 4.0, sr_plateau(4.5), 0.0).unwrap();
        let dt = safe_dt(&phi, 0.05, 0.5, h, 1);
        let problem = RdeProblem::new(phi, 0.05, 0.5, dt, init).unwrap();
        let track = wave_speed(&problem, 3.0).unwrap();
        assert!(track.speed.abs() <= 0.02, "c = {}", track.speed);
        assert!(track.positions.iter().all(|p| p.is_finite()));
        assert!(track.fit.residual_rms.is_finite());
    }

    #[test]
    fn wave_advances_with_the_favored_state() {
        // β = 5: the u_+ phase invades (c > 0); β = 4.2: it retreats.
        for (beta, expect_sign) in [(5.0, 1.0), (4.2, -1.0)] {
            let phi = sr_phi(beta);
            let h = 0.02;
            let n = 401;
            let init = step_1d(n, h, Boundary::Neumann, 4.0, sr_plateau(beta), 0.0).unwrap();
            let dt = safe_dt(&phi, 0.1, 0.5, h, 1);
            let problem = RdeProblem::new(phi, 0.1, 0.5, dt, init).unwrap();
            let track = wave_speed(&problem, 0.5).unwrap();
            assert!(
                track.speed * expect_sign > 0.5,
                "beta {beta}: c = {}",
                track.speed
            );
        }
    }

    #[test]
    fn speed_sign_matches_exact_integral_sign() {
        for beta in [4.2, 4.8, 5.5] {
            let phi = sr_phi(beta);
            let integral = integral_sign_f64(&phi, sr_plateau(beta)).unwrap();
            let h = 0.02;
            let init = step_1d(401, h, Boundary::Neumann, 4.0, sr_plateau(beta), 0.0).unwrap();
            let dt = safe_dt(&phi, 0.1, 0.5, h, 1);
            let problem = RdeProblem::new(phi, 0.1, 0.5, dt, init).unwrap();
            let track = wave_speed(&problem, 0.5).unwrap();
            assert_eq!(
                track.speed.signum() as i32,
                integral.sign,
                "beta {beta}: c = {}, integral = {}",
                track.speed,
                integral.value_f64()
            );
        }
    }

    #[test]
    fn integral_values_match_quadrature_oracle() {
        // Frozen numeric quadrature of ∫_0^{ρ2} φ: the exact antiderivative
        // must agree to near machine precision (the endpoint is a root of
        // φ, so lifting f64(ρ2) costs only O(δ²)).
        let cases = [
            (4.2, -0.013657708057557206),
            (4.8, 0.015691609682128767),
            (5.0, 0.026967233145831581),
        ];
        for (beta, oracle) in cases {
            let v = integral_sign_f64(&sr_phi(beta), sr_plateau(beta)).unwrap();
            assert!((v.value_f64() - oracle).abs() <= 1e-13, "beta {beta}");
            assert_eq!(v.sign, if oracle > 0.0 { 1 } else { -1 });
        }
        // β = 4.5 with the exact upper limit 2/3: exactly zero.
        let phi_rat = RatPoly::new(vec![rat(0, 1), rat(-1, 1), rat(9, 2), rat(-9, 2)]);
        let z = integral_sign(&phi_rat, &rat(2, 3));
        assert_eq!(z.sign, 0);
        assert!(z.value.is_zero());
    }

    #[test]
    fn refinement_changes_speed_by_under_ten_percent() {
        let beta = 4.8;
        let run = |h: f64, dt: f64| -> f64 {
            let n = (8.0 / h) as usize + 1;
            let phi = sr_phi(beta);
            let init = step_1d(n, h, Boundary::Neumann, 4.0, sr_plateau(beta), 0.0).unwrap();
            let problem = RdeProblem::new(phi, 0.1, 0.5, dt, init).unwrap();
            wave_speed(&problem, 0.8).unwrap().speed
        };
        let dt0 = {
            let phi = sr_phi(beta);
            safe_dt(&phi, 0.1, 0.5, 0.02, 1)
        };
        let coarse = run(0.02, dt0);
        let fine = run(0.01, dt0 / 4.0);
        assert!(
            (coarse - fine).abs() <= 0.1 * fine.abs(),
            "coarse {coarse} vs fine {fine}"
        );
    }

    #[test]
    fn range_escape_and_front_lost() {
        // φ ≡ 1 pushes the solution past 1: RangeEscape, never clamped.
        let phi = Poly::new(vec![1.0]);
        let init = GridField::new_1d(16, 0.1, Boundary::Neumann, |_| 0.9).unwrap();
        let problem = RdeProblem::new(phi, f64::INFINITY, 0.5, 0.005, init).unwrap();
        assert!(matches!(solve(&problem, 1.0), Err(Error::RangeEscape(_))));

        // Constant data have no level crossing: FrontLost.
        let phi = sr_phi(4.5);
        let init = GridField::new_1d(64, 0.05, Boundary::Neumann, |_| sr_plateau(4.5)).unwrap();
        let dt = safe_dt(&phi, 0.2, 0.5, 0.05, 1);
        let problem = RdeProblem::new(phi, 0.2, 0.5, dt, init).unwrap();
        assert!(matches!(wave_speed(&problem, 0.2), Err(Error::FrontLost(_))));
    }

    #[test]
    fn unstable_root_picks_the_middle_equilibrium() {
        assert!((unstable_root(&sr_phi(4.5)).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let majority = Poly::new(vec![0.0, -1.0, 3.0, -2.0]);
        assert!((unstable_root(&majority).unwrap() - 0.5).abs() < 1e-12);
        // Pure decay has no interior unstable root.
        assert!(unstable_root(&Poly::new(vec![0.0, -1.0])).is_err());
    }

    #[test]
    fn radial_solver_tracks_the_shrinking_circle_law() {
        // d = 2: the interface obeys R(t)^2 = R0^2 - 2 D t.
        let phi = sr_phi(4.5);
        let n = 240;
        let r_max = 1.2;
        let hr = r_max / n as f64;
        let dt = 0.9 / (4.0 * 0.5 / (hr * hr) + 400.0 * 5.5);
        let problem = RadialProblem {
            phi,
            eps: 0.05,
            diffusion: 0.5,
            dimension: 2,
            r_max,
            n,
            dt,
        };
        let r0 = 0.6;
        let up = sr_plateau(4.5);
        let sol = solve_radial(
            &problem,
            |r| if r < r0 { 0.0 } else { up },
            0.15,
            16,
        )
        .unwrap();
        let level = 1.0 / 3.0;
        let last = sol.profiles.len() - 1;
        let measured = sol.front_radius(last, level).expect("front present");
        let predicted = (r0 * r0 - 2.0 * 0.5 * 0.15).sqrt();
        assert!(
            (measured - predicted).abs() / predicted <= 0.08,
            "measured {measured}, predicted {predicted}"
        );
    }

    #[test]
    fn radial_extinction_time_matches_the_law() {
        // The u_- pocket of radius R0 disappears near t = R0^2 / (2D).
        let phi = sr_phi(4.5);
        let n = 240;
        let r_max = 1.2;
        let hr = r_max / n as f64;
        let dt = 0.9 / (4.0 * 0.5 / (hr * hr) + 400.0 * 5.5);
        let problem = RadialProblem {
            phi,
            eps: 0.05,
            diffusion: 0.5,
            dimension: 2,
            r_max,
            n,
            dt,
        };
        let r0 = 0.6;
        let up = sr_plateau(4.5);
        let sol = solve_radial(
            &problem,
            |r| if r < r0 { 0.0 } else { up },
            0.5,
            101,
        )
        .unwrap();
        let level = 1.0 / 3.0;
        let t_lost = sol
            .times
            .iter()
            .zip(0..sol.profiles.len())
            .find(|(_, k)| sol.front_radius(*k, level).is_none())
            .map(|(t, _)| *t)
            .expect("pocket should vanish inside the horizon");
        let law = r0 * r0 / (2.0 * 0.5);
        assert!(
            (t_lost - law).abs() / law <= 0.1,
            "extinction at {t_lost}, law {law}"
        );
    }

    #[test]
    fn shrinking_circle_smoke_matches_reference_flow() {
        let phi = sr_phi(4.5);
        let h = 0.02;
        let n = 101;
        let up = sr_plateau(4.5);
        let init = disk_2d(n, n, h, Boundary::Neumann, 1.0, 1.0, 0.6, 0.0, up).unwrap();
        let dt = safe_dt(&phi, 0.1, 0.5, h, 2);
        let problem = RdeProblem::new(phi, 0.1, 0.5, dt, init).unwrap();
        let track = shrinking_circle(&problem, 0.2).unwrap();
        assert!(track.positions.windows(2).all(|w| w[1] <= w[0] + 1e-6));
        // R(t)^2 decays linearly with slope -2D = -1 (coarse run: 35%).
        let sq: Vec<f64> = track.positions.iter().map(|r| r * r).collect();
        let fit = linear_fit(&track.times, &sq).unwrap();
        assert!(
            (fit.slope + 1.0).abs() <= 0.35,
            "dR²/dt = {} (want about -1)",
            fit.slope
        );
        // Endpoint against the exact reference flow, coarse tolerance.
        let reference = crate::mcf::sphere_radius(0.6, 0.2, 2, 0.5).unwrap();
        let measured = *track.positions.last().unwrap();
        assert!(
            (measured - reference).abs() / reference <= 0.12,
            "measured {measured}, reference {reference}"
        );
    }
}
