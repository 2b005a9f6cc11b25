//! Voting functions g, their fixed-point structure, iteration dynamics,
//! admissibility conditions, and the forward reaction terms phi.
//!
//! Each model family induces a polynomial map p -> g(p): the probability
//! that a site flips to 1 when its relevant neighbourhood is i.i.d.
//! Bernoulli(p). The reaction term of the corresponding mean-field PDE is
//! phi(p) = r*(g(p) - p) with r the family's event rate. Everything here is
//! kept in exact rational arithmetic alongside the f64 working copy, so
//! symmetry and coefficient identities can be decided exactly rather than
//! within a tolerance.

use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::poly::{rat, rat_from_f64, rat_to_f64, real_roots_in, Poly, RatPoly};

// ---------------------------------------------------------------------------
// GFunction
// ---------------------------------------------------------------------------

/// A voting function with its exact polynomial form and reaction rate.
#[derive(Debug, Clone)]
pub struct GFunction {
    spec: ModelSpec,
    rat: RatPoly,
    poly: Poly,
    poly_d1: Poly,
    poly_d2: Poly,
    reaction_rate: f64,
}

impl GFunction {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Exact rational coefficients of g, ascending.
    pub fn rat_poly(&self) -> &RatPoly {
        &self.rat
    }

    /// Double-precision coefficients of g, ascending.
    pub fn poly(&self) -> &Poly {
        &self.poly
    }

    /// The r in phi = r*(g - p).
    pub fn reaction_rate(&self) -> f64 {
        self.reaction_rate
    }

    /// g'(p), double precision.
    pub fn d1(&self, p: f64) -> f64 {
        self.poly_d1.eval(p)
    }

    /// g''(p), double precision.
    pub fn d2(&self, p: f64) -> f64 {
        self.poly_d2.eval(p)
    }
}

/// Build the voting function for a validated spec.
pub fn make_g(spec: ModelSpec) -> Result<GFunction> {
    spec.validate()?;
    let rat_poly = exact_g_poly(&spec)?;
    range_check(&rat_poly)?;
    let poly = rat_poly.to_poly();
    let poly_d1 = poly.derivative();
    let poly_d2 = poly_d1.derivative();
    Ok(GFunction {
        reaction_rate: spec.reaction_rate(),
        spec,
        rat: rat_poly,
        poly,
        poly_d1,
        poly_d2,
    })
}

/// The exact rational coefficients of g for each family.
fn exact_g_poly(spec: &ModelSpec) -> Result<RatPoly> {
    let x = RatPoly::x();
    match *spec {
        // Majority vote of three: 3p^2 - 2p^3.
        ModelSpec::Majority | ModelSpec::LotkaVolterraBoundary { .. } => Ok(RatPoly::new(vec![
            rat(0, 1),
            rat(0, 1),
            rat(3, 1),
            rat(-2, 1),
        ])),
        // With probability beta/(1+beta) a birth event: p + p^2 - p^3
        // mixture; otherwise a death. g = (beta/(1+beta))(p + p^2 - p^3).
        ModelSpec::SexualReproduction { beta } => {
            let b = rat_from_f64(beta)?;
            let c = &b / (BigRational::one() + &b);
            Ok(RatPoly::new(vec![rat(0, 1), c.clone(), c.clone(), -c]))
        }
        // Quintic vote: g = p + b1*p(1-p)^4 + b2*p^2(1-p)^3
        //                     - b2*p^3(1-p)^2 - b1*p^4(1-p).
        ModelSpec::NonlinearVoter { a1, a2, .. } => {
            let a1r = rat_from_f64(a1)?;
            let a2r = rat_from_f64(a2)?;
            let a3r = BigRational::one() - &a2r;
            let a4r = BigRational::one() - &a1r;
            let b1 = rat(4, 1) * &a1r - a4r;
            let b2 = rat(6, 1) * a2r - rat(4, 1) * a3r;
            let one_minus = RatPoly::new(vec![rat(1, 1), rat(-1, 1)]);
            let mut phi = RatPoly::zero();
            // Terms b1 p(1-p)^4, b2 p^2(1-p)^3, -b2 p^3(1-p)^2, -b1 p^4(1-p).
            let coeffs = [b1.clone(), b2.clone(), -b2, -b1];
            for (k, coeff) in coeffs.iter().enumerate() {
                let mut term = RatPoly::constant(coeff.clone());
                for _ in 0..(k + 1) {
                    term = term.mul(&x);
                }
                for _ in 0..(4 - k) {
                    term = term.mul(&one_minus);
                }
                phi = phi.add(&term);
            }
            Ok(x.add(&phi))
        }
        // g = p - c(p-u_-)(p-u_0)(p-u_+).
        ModelSpec::CustomCubic { c, u_minus, u_zero, u_plus } => {
            let cr = rat_from_f64(c)?;
            let mut cubic = RatPoly::constant(cr);
            for u in [u_minus, u_zero, u_plus] {
                let ur = rat_from_f64(u)?;
                cubic = cubic.mul(&RatPoly::new(vec![-ur, BigRational::one()]));
            }
            Ok(x.sub(&cubic))
        }
    }
}

/// Verify g maps [0,1] into [0,1]: check the endpoints and every interior
/// critical point exactly enough (critical points to 1e-13).
fn range_check(g: &RatPoly) -> Result<()> {
    let mut points = vec![0.0, 1.0];
    points.extend(real_roots_in(&g.derivative(), 0.0, 1.0)?.roots);
    let poly = g.to_poly();
    for p in points {
        let v = poly.eval(p);
        if !(-1e-9..=1.0 + 1e-9).contains(&v) {
            return Err(Error::InvalidSpec(format!(
                "g does not map [0,1] into [0,1]: g({p}) = {v}"
            )));
        }
    }
    Ok(())
}

/// Evaluate g at p, with the value clamped into [0,1] against roundoff.
pub fn eval_g(g: &GFunction, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::DomainError(format!("eval_g outside [0,1]: p = {p}")));
    }
    Ok(g.poly.eval(p).clamp(0.0, 1.0))
}

// ---------------------------------------------------------------------------
// Fixed points
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stability {
    Stable,
    Unstable,
}

/// The bistable triple u_- < u_0 < u_+ plus any additional fixed points at
/// the boundary 0/1, with stability read off |g'| vs 1.
#[derive(Debug, Clone)]
pub struct FixedPointSet {
    pub u_minus: f64,
    pub u_zero: f64,
    pub u_plus: f64,
    /// Fixed points at 0 and/or 1 distinct from the triple.
    pub boundary_fixed: Vec<(f64, Stability)>,
    /// Stability of (u_minus, u_zero, u_plus); always (Stable, Unstable,
    /// Stable) by construction of the triple search.
    pub stability: (Stability, Stability, Stability),
}

impl FixedPointSet {
    /// Half-width of the well: u_plus - u_zero.
    pub fn half_width(&self) -> f64 {
        self.u_plus - self.u_zero
    }

    /// Spacing asymmetry (u_plus - u_zero) - (u_zero - u_minus).
    pub fn spacing_gap(&self) -> f64 {
        (self.u_plus - self.u_zero) - (self.u_zero - self.u_minus)
    }
}

/// Locate all fixed points of g in [0,1] by exact root isolation on
/// g(p) - p, refine to better than 1e-12, and classify the bistable triple.
pub fn fixed_points(g: &GFunction) -> Result<FixedPointSet> {
    let diff = g.rat.sub(&RatPoly::x());
    let rr = real_roots_in(&diff, 0.0, 1.0)?;
    if rr.has_repeated_in_interval {
        return Err(Error::DegenerateRoots(
            "g(p) - p has a repeated root in [0,1]".into(),
        ));
    }
    let stab = |r: f64| {
        if g.d1(r).abs() < 1.0 {
            Stability::Stable
        } else {
            Stability::Unstable
        }
    };
    let roots = rr.roots;
    let stabs: Vec<Stability> = roots.iter().map(|r| stab(*r)).collect();
    // The triple is an unstable point flanked immediately by stable ones.
    let mut triples = Vec::new();
    for i in 1..roots.len().saturating_sub(1) {
        if stabs[i] == Stability::Unstable
            && stabs[i - 1] == Stability::Stable
            && stabs[i + 1] == Stability::Stable
        {
            triples.push(i);
        }
    }
    let i = match triples.len() {
        0 => {
            return Err(Error::NotBistable(format!(
                "no stable-unstable-stable fixed point triple among {roots:?}"
            )))
        }
        1 => triples[0],
        n => {
            return Err(Error::NotBistable(format!(
                "{n} candidate fixed point triples among {roots:?}"
            )))
        }
    };
    let (mut u_minus, u_zero, u_plus) = (roots[i - 1], roots[i], roots[i + 1]);
    // When the spacing is symmetric, snap u_minus to the exact mirror of
    // u_plus so downstream symmetry arguments hold to the last bit. The
    // snap moves it by at most the root-refinement error.
    if ((u_plus - u_zero) - (u_zero - u_minus)).abs() <= 1e-10 {
        u_minus = 2.0 * u_zero - u_plus;
    }
    let mut boundary_fixed = Vec::new();
    for (j, r) in roots.iter().enumerate() {
        if j >= i - 1 && j <= i + 1 {
            continue;
        }
        if r.abs() <= 1e-9 || (r - 1.0).abs() <= 1e-9 {
            boundary_fixed.push((*r, stabs[j]));
        } else {
            return Err(Error::NotBistable(format!(
                "unclassified interior fixed point at {r}"
            )));
        }
    }
    Ok(FixedPointSet {
        u_minus,
        u_zero,
        u_plus,
        boundary_fixed,
        stability: (stabs[i - 1], stabs[i], stabs[i + 1]),
    })
}

// ---------------------------------------------------------------------------
// Centered odd form (exact symmetry machinery)
// ---------------------------------------------------------------------------

/// g written around its middle fixed point: g(u0 + y) = u0 + y*q(y^2).
/// Exists exactly when the symmetry condition holds and u0 is rational;
/// evaluation is then *exactly* odd in IEEE arithmetic (negating y flips
/// the sign of the result bit-for-bit), which the symmetric iteration
/// comparisons rely on.
#[derive(Debug, Clone)]
pub struct CenteredOdd {
    pub u0: f64,
    /// Coefficients of q, so ghat(y) = y * q(y^2).
    q: Vec<f64>,
}

impl CenteredOdd {
    /// ghat(y) = g(u0 + y) - u0; exactly odd.
    pub fn eval(&self, y: f64) -> f64 {
        let y2 = y * y;
        let mut acc = 0.0;
        for c in self.q.iter().rev() {
            acc = acc * y2 + c;
        }
        acc * y
    }
}

/// The exact rational location of the middle fixed point, where the family
/// permits one: 1/2 for the cubic vote families and the nonlinear voter,
/// the declared u_zero for the custom cubic, and the closed-form root for
/// sexual reproduction when its discriminant is a rational square.
fn exact_u0(spec: &ModelSpec) -> Option<BigRational> {
    match *spec {
        ModelSpec::Majority | ModelSpec::LotkaVolterraBoundary { .. } => Some(rat(1, 2)),
        ModelSpec::NonlinearVoter { .. } => Some(rat(1, 2)),
        ModelSpec::CustomCubic { u_zero, .. } => rat_from_f64(u_zero).ok(),
        ModelSpec::SexualReproduction { beta } => {
            let b = rat_from_f64(beta).ok()?;
            if b <= rat(4, 1) {
                return None;
            }
            // u0 = (1 - sqrt(1 - 4/beta)) / 2.
            let disc = BigRational::one() - rat(4, 1) / b;
            let s = rat_sqrt_exact(&disc)?;
            Some((BigRational::one() - s) / rat(2, 1))
        }
    }
}

/// Exact square root of a nonnegative rational, if it is a perfect square.
fn rat_sqrt_exact(x: &BigRational) -> Option<BigRational> {
    if x.is_negative() {
        return None;
    }
    let n = x.numer();
    let d = x.denom();
    let sn = n.sqrt();
    let sd = d.sqrt();
    if &(&sn * &sn) == n && &(&sd * &sd) == d {
        Some(BigRational::new(sn, sd))
    } else {
        None
    }
}

/// Build the centered odd form if g is exactly symmetric about a rational
/// middle fixed point (all even coefficients of g(u0+y) - u0 vanish in
/// exact arithmetic).
pub fn centered_odd_form(g: &GFunction) -> Option<CenteredOdd> {
    let u0 = exact_u0(g.spec())?;
    let shifted = g.rat.compose_affine(&u0, &BigRational::one());
    let mut ghat = shifted.coeffs().to_vec();
    ghat[0] -= &u0;
    let mut q = Vec::new();
    for (i, c) in ghat.iter().enumerate() {
        if i % 2 == 0 {
            if !c.is_zero() {
                return None;
            }
        } else {
            q.push(rat_to_f64(c));
        }
    }
    if q.is_empty() {
        q.push(0.0);
    }
    Some(CenteredOdd {
        u0: rat_to_f64(&u0),
        q,
    })
}

// ---------------------------------------------------------------------------
// Iteration dynamics
// ---------------------------------------------------------------------------

/// n-fold composition g(g(...g(p))). Uses the centered odd form when
/// available so exact fixed points (notably u0 itself) stay put under
/// millions of iterations instead of drifting off the repelling point
/// through roundoff.
pub fn iterate_g(g: &GFunction, p: f64, n: u64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::DomainError(format!("iterate_g outside [0,1]: p = {p}")));
    }
    if let Some(c) = centered_odd_form(g) {
        let mut y = p - c.u0;
        for _ in 0..n {
            y = c.eval(y);
        }
        Ok((c.u0 + y).clamp(0.0, 1.0))
    } else {
        let mut v = p;
        for _ in 0..n {
            v = g.poly.eval(v).clamp(0.0, 1.0);
        }
        Ok(v)
    }
}

const ITERATION_CAP: u64 = 1_000_000;

fn convergence_steps_impl(g: &GFunction, eps: f64, k: u32, upward: bool) -> Result<u64> {
    let fps = fixed_points(g)?;
    let w = fps.u_plus - fps.u_zero;
    if !(eps > 0.0 && eps < w) {
        return Err(Error::DomainError(format!(
            "convergence_steps needs eps in (0, {w}), got {eps}"
        )));
    }
    let target = w - eps.powi(k as i32);
    if let Some(c) = centered_odd_form(g) {
        // Centered iteration: upward from +eps toward +target, downward
        // from -eps toward -target. The two runs are exact mirrors when the
        // symmetry holds, so the step counts agree exactly.
        let mut y = if upward { eps } else { -eps };
        let mut n = 0u64;
        loop {
            let done = if upward { y >= target } else { y <= -target };
            if done {
                return Ok(n);
            }
            if n >= ITERATION_CAP {
                return Err(Error::CapExceeded(format!(
                    "no convergence within {ITERATION_CAP} iterations (eps = {eps}, k = {k})"
                )));
            }
            y = c.eval(y);
            n += 1;
        }
    } else {
        let mut p = if upward { fps.u_zero + eps } else { fps.u_zero - eps };
        let up_target = fps.u_zero + target;
        let down_target = fps.u_zero - target;
        let mut n = 0u64;
        loop {
            let done = if upward { p >= up_target } else { p <= down_target };
            if done {
                return Ok(n);
            }
            if n >= ITERATION_CAP {
                return Err(Error::CapExceeded(format!(
                    "no convergence within {ITERATION_CAP} iterations (eps = {eps}, k = {k})"
                )));
            }
            p = g.poly.eval(p).clamp(0.0, 1.0);
            n += 1;
        }
    }
}

/// Minimal n with g^(n)(u0 + eps) >= u_+ - eps^k.
pub fn convergence_steps(g: &GFunction, eps: f64, k: u32) -> Result<u64> {
    convergence_steps_impl(g, eps, k, true)
}

/// Minimal n with g^(n)(u0 - eps) <= u_- + eps^k (the symmetric descent).
pub fn convergence_steps_down(g: &GFunction, eps: f64, k: u32) -> Result<u64> {
    convergence_steps_impl(g, eps, k, false)
}

// ---------------------------------------------------------------------------
// Second differences
// ---------------------------------------------------------------------------

/// Raw second difference g(p+eta) - 2g(p) + g(p-eta); the stencil must stay
/// inside [0,1]. Uses the centered form when available so mirror-image
/// stencils produce exactly opposite values.
pub fn second_difference(g: &GFunction, p: f64, eta: f64) -> Result<f64> {
    if eta <= 0.0 || p - eta < 0.0 || p + eta > 1.0 {
        return Err(Error::DomainError(format!(
            "second difference stencil [{}, {}] leaves [0,1]",
            p - eta,
            p + eta
        )));
    }
    if let Some(c) = centered_odd_form(g) {
        let y = p - c.u0;
        Ok(c.eval(y + eta) - 2.0 * c.eval(y) + c.eval(y - eta))
    } else {
        Ok(g.poly.eval(p + eta) - 2.0 * g.poly.eval(p) + g.poly.eval(p - eta))
    }
}

/// Sign of the second difference on the concave side: the stencil
/// [p-eta, p+eta] must lie inside [u_0, u_+]; the result is <= 0 whenever
/// the concavity condition holds there. Returns -1, 0, or +1.
pub fn second_difference_sign(g: &GFunction, p: f64, eta: f64) -> Result<i32> {
    let fps = fixed_points(g)?;
    if eta <= 0.0 || p - eta < fps.u_zero || p + eta > fps.u_plus {
        return Err(Error::DomainError(format!(
            "second difference stencil [{}, {}] leaves [u_0, u_+] = [{}, {}]",
            p - eta,
            p + eta,
            fps.u_zero,
            fps.u_plus
        )));
    }
    let d = second_difference(g, p, eta)?;
    Ok(if d > 0.0 {
        1
    } else if d < 0.0 {
        -1
    } else {
        0
    })
}

// ---------------------------------------------------------------------------
// Condition report
// ---------------------------------------------------------------------------

/// One admissibility condition with its most binding witness.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionEntry {
    pub name: String,
    pub pass: bool,
    pub witness_p: Option<f64>,
    pub witness_value: Option<f64>,
    pub detail: String,
}

/// Full admissibility report for a voting function.
#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub entries: Vec<ConditionEntry>,
    /// Contraction constant for the boundary-layer condition; chosen as
    /// (1 - g'(u_-))/2.
    pub c0: f64,
    /// First scanned point (resolution 1e-4) where g'(u_- + x) reaches
    /// 1 - c0.
    pub delta0: f64,
    pub grid_resolution: usize,
}

impl ConditionReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn entry(&self, name: &str) -> Option<&ConditionEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Check the admissibility conditions: equally spaced bistable fixed points
/// with unstable boundary extras (G0), the two-sided symmetry identity (G1),
/// the slope conditions at the fixed points (G2), the convexity split (G3),
/// the boundary-layer contraction (G4), and strict monotonicity (G5) — plus
/// the region/attractiveness/concavity parameter conditions (A1)-(A3) for
/// the nonlinear voter. Identity-type conditions are decided exactly where
/// the polynomial algebra permits; inequality-type conditions are sampled on
/// `grid` points. Failures are report entries, not errors.
pub fn check_conditions(g: &GFunction, grid: usize) -> Result<ConditionReport> {
    let grid = grid.max(16);
    let fps = fixed_points(g)?;
    let (um, u0, up) = (fps.u_minus, fps.u_zero, fps.u_plus);
    let w = up - u0;
    let mut entries = Vec::new();

    // (G0): equal spacing and unstable boundary extras.
    let gap = fps.spacing_gap();
    let boundary_ok = fps
        .boundary_fixed
        .iter()
        .all(|(_, s)| *s == Stability::Unstable);
    entries.push(ConditionEntry {
        name: "G0".into(),
        pass: gap.abs() <= 1e-10 && boundary_ok,
        witness_p: Some(u0),
        witness_value: Some(gap),
        detail: format!(
            "triple ({um}, {u0}, {up}), spacing gap {gap:e}, boundary fixed points unstable: {boundary_ok}"
        ),
    });

    // (G1): g(u_+ - d) + g(u_- + d) = 2 u_0. Exact via the centered odd
    // form when available, otherwise sampled.
    match centered_odd_form(g) {
        Some(_) => entries.push(ConditionEntry {
            name: "G1".into(),
            pass: true,
            witness_p: None,
            witness_value: Some(0.0),
            detail: "exact: all even coefficients of g(u0+y)-u0 vanish in rational arithmetic"
                .into(),
        }),
        None => {
            let mut worst = 0.0f64;
            let mut worst_x = 0.0f64;
            for j in 0..=grid {
                let x = w * j as f64 / grid as f64;
                let dev = (g.poly.eval(up - x) + g.poly.eval(um + x) - 2.0 * u0).abs();
                if dev > worst {
                    worst = dev;
                    worst_x = x;
                }
            }
            entries.push(ConditionEntry {
                name: "G1".into(),
                pass: worst <= 1e-12,
                witness_p: Some(worst_x),
                witness_value: Some(worst),
                detail: format!("sampled on {grid} offsets; max |g(u+-x)+g(u-+x)-2u0| = {worst:e}"),
            });
        }
    }

    // (G2): g'(u0) > 1, g'(u-) = g'(u+) < 1.
    let d_minus = g.d1(um);
    let d_zero = g.d1(u0);
    let d_plus = g.d1(up);
    entries.push(ConditionEntry {
        name: "G2".into(),
        pass: d_zero > 1.0 && d_plus < 1.0 && (d_minus - d_plus).abs() <= 1e-10,
        witness_p: Some(u0),
        witness_value: Some(d_zero),
        detail: format!("g'(u-) = {d_minus}, g'(u0) = {d_zero}, g'(u+) = {d_plus}"),
    });

    // (G3): g'' > 0 on (u-, u0), g'' < 0 on (u0, u+); sampled strictly
    // inside each subinterval.
    let mut g3_pass = true;
    let mut g3_worst = f64::INFINITY;
    let mut g3_worst_p = um;
    for j in 1..=grid {
        let frac = j as f64 / (grid + 1) as f64;
        let p_lo = um + (u0 - um) * frac;
        let p_hi = u0 + (up - u0) * frac;
        let v_lo = g.d2(p_lo); // want > 0
        let v_hi = -g.d2(p_hi); // want > 0
        for (p, v) in [(p_lo, v_lo), (p_hi, v_hi)] {
            if v < g3_worst {
                g3_worst = v;
                g3_worst_p = p;
            }
            if v <= 0.0 {
                g3_pass = false;
            }
        }
    }
    entries.push(ConditionEntry {
        name: "G3".into(),
        pass: g3_pass,
        witness_p: Some(g3_worst_p),
        witness_value: Some(g3_worst),
        detail: format!("min signed margin of the convex/concave split: {g3_worst:e}"),
    });

    // (G4): with c0 = (1 - g'(u-))/2 and delta0 = inf{x >= 0 :
    // g'(u_- + x) >= 1 - c0} (scanned at 1e-4), require
    // u_+ - g(u_+ - d) = g(u_- + d) - u_- <= (1 - c0) d for d <= delta0.
    let c0 = (1.0 - d_minus) / 2.0;
    let mut delta0 = 0.0;
    if c0 > 0.0 {
        let step = 1e-4;
        let mut x = step;
        while x < u0 - um {
            if g.d1(um + x) >= 1.0 - c0 {
                break;
            }
            delta0 = x;
            x += step;
        }
    }
    let mut g4_pass = c0 > 0.0 && delta0 > 0.0;
    let mut g4_margin = f64::NEG_INFINITY;
    let mut g4_worst_d = 0.0;
    let mut g4_sym = 0.0f64;
    if g4_pass {
        for j in 1..=grid {
            let d = delta0 * j as f64 / grid as f64;
            let up_gap = up - g.poly.eval(up - d);
            let lo_gap = g.poly.eval(um + d) - um;
            g4_sym = g4_sym.max((up_gap - lo_gap).abs());
            let margin = up_gap - (1.0 - c0) * d;
            if margin > g4_margin {
                g4_margin = margin;
                g4_worst_d = d;
            }
        }
        g4_pass = g4_margin <= 1e-14 && g4_sym <= 1e-10;
    }
    entries.push(ConditionEntry {
        name: "G4".into(),
        pass: g4_pass,
        witness_p: Some(g4_worst_d),
        witness_value: Some(g4_margin),
        detail: format!(
            "c0 = {c0}, delta0 = {delta0}; max of u+-g(u+-d)-(1-c0)d over sampled d = {g4_margin:e}; \
             max two-sided asymmetry = {g4_sym:e}"
        ),
    });

    // (G5): strictly increasing on [0,1]. The minimum of g' over [0,1] is
    // attained at an endpoint or a root of g''; all refined exactly.
    let mut g5_min = f64::INFINITY;
    let mut g5_argmin = 0.0;
    let mut crit = vec![0.0, 1.0];
    crit.extend(real_roots_in(&g.rat.derivative().derivative(), 0.0, 1.0)?.roots);
    for j in 0..=grid {
        crit.push(j as f64 / grid as f64);
    }
    for p in crit {
        let v = g.d1(p);
        if v < g5_min {
            g5_min = v;
            g5_argmin = p;
        }
    }
    entries.push(ConditionEntry {
        name: "G5".into(),
        pass: g5_min >= -1e-12,
        witness_p: Some(g5_argmin),
        witness_value: Some(g5_min),
        detail: format!("min g' over endpoints, inflection points, and grid = {g5_min:e}"),
    });

    // (A1)-(A3) for the nonlinear voter, decided in exact arithmetic.
    if let ModelSpec::NonlinearVoter { a1, a2, .. } = *g.spec() {
        let a1r = rat_from_f64(a1)?;
        let a2r = rat_from_f64(a2)?;
        let b1 = rat(5, 1) * &a1r - BigRational::one();
        let b2 = rat(10, 1) * &a2r - rat(4, 1);
        let three_b1_b2 = rat(3, 1) * &b1 + &b2;
        let six_b1_b2 = rat(6, 1) * &b1 + &b2;
        entries.push(ConditionEntry {
            name: "A1".into(),
            pass: b1.is_positive() && three_b1_b2.is_negative(),
            witness_p: Some(rat_to_f64(&b1)),
            witness_value: Some(rat_to_f64(&three_b1_b2)),
            detail: format!("b1 = {}, 3b1+b2 = {}", rat_to_f64(&b1), rat_to_f64(&three_b1_b2)),
        });
        entries.push(ConditionEntry {
            name: "A2".into(),
            pass: (0.0..=a2).contains(&a1) && a2 <= 0.5,
            witness_p: Some(a1),
            witness_value: Some(a2),
            detail: format!("0 <= a1 = {a1} <= a2 = {a2} <= 1/2"),
        });
        entries.push(ConditionEntry {
            name: "A3".into(),
            pass: six_b1_b2.is_positive(),
            witness_p: None,
            witness_value: Some(rat_to_f64(&six_b1_b2)),
            detail: format!("6b1+b2 = {}", rat_to_f64(&six_b1_b2)),
        });
    }

    Ok(ConditionReport {
        entries,
        c0,
        delta0,
        grid_resolution: grid,
    })
}

// ---------------------------------------------------------------------------
// Forward reaction terms
// ---------------------------------------------------------------------------

/// A root of the forward reaction term with its multiplicity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiRoot {
    pub location: f64,
    pub multiplicity: u32,
}

/// The forward-model reaction term phi with its roots in [0,1].
#[derive(Debug, Clone)]
pub struct ForwardPhi {
    pub poly: Poly,
    pub rat: RatPoly,
    pub roots: Vec<PhiRoot>,
}

/// Build the family's forward reaction term:
/// sexual reproduction phi(u) = -u + beta u^2 (1-u);
/// Lotka–Volterra boundary phi(u) = theta p3 u(1-u)(2u-1);
/// majority vote phi(u) = g(u) - u; nonlinear voter the quintic;
/// custom cubic phi(u) = -c(u-u_-)(u-u_0)(u-u_+).
pub fn forward_phi(spec: &ModelSpec) -> Result<ForwardPhi> {
    spec.validate()?;
    let rat_phi: RatPoly = match *spec {
        ModelSpec::SexualReproduction { beta } => {
            let b = rat_from_f64(beta)?;
            // Interior equilibria solve beta*u*(1-u) = 1; real only for
            // beta >= 4.
            if beta < 4.0 {
                return Err(Error::NoPositiveRoots(format!(
                    "phi(u) = -u + beta u^2(1-u) has no positive root for beta = {beta} < 4"
                )));
            }
            RatPoly::new(vec![rat(0, 1), rat(-1, 1), b.clone(), -b])
        }
        ModelSpec::Majority => RatPoly::new(vec![rat(0, 1), rat(-1, 1), rat(3, 1), rat(-2, 1)]),
        ModelSpec::LotkaVolterraBoundary { theta, p3, .. } => {
            let scale = rat_from_f64(theta)? * rat_from_f64(p3)?;
            RatPoly::new(vec![rat(0, 1), rat(-1, 1), rat(3, 1), rat(-2, 1)]).scale(&scale)
        }
        ModelSpec::NonlinearVoter { .. } => {
            let g = exact_g_poly(spec)?;
            g.sub(&RatPoly::x())
        }
        ModelSpec::CustomCubic { .. } => {
            let g = exact_g_poly(spec)?;
            g.sub(&RatPoly::x())
        }
    };
    let rr = real_roots_in(&rat_phi, 0.0, 1.0)?;
    // Multiplicities: a root is repeated iff it is also a root of
    // gcd(phi, phi') — detected through the repeated-root positions.
    let mut repeated_positions: Vec<f64> = Vec::new();
    if rr.has_repeated_in_interval {
        let gcd = crate::poly::rat_poly_gcd(&rat_phi, &rat_phi.derivative());
        repeated_positions = real_roots_in(&gcd, 0.0, 1.0)?.roots;
    }
    let roots = rr
        .roots
        .iter()
        .map(|r| PhiRoot {
            location: *r,
            multiplicity: if repeated_positions.iter().any(|q| (q - r).abs() < 1e-9) {
                2
            } else {
                1
            },
        })
        .collect();
    Ok(ForwardPhi {
        poly: rat_phi.to_poly(),
        rat: rat_phi,
        roots,
    })
}
