//! Branching Brownian motion duals: Monte Carlo vote-probability
//! estimation, one-dimensional interface profiles, and the calibration
//! quantities of the interface theorem (the z_ε quantile and maximal
//! displacement statistics).
//!
//! Two evaluation paths coexist. The general path materializes a tree,
//! diffuses vertex positions edge-by-edge (exact Gaussian increments, no
//! time discretization), Bernoulli-samples leaf states from the initial
//! condition, and applies the voting algorithm. The interface path
//! exploits that for one-dimensional step initial data and monotone rules
//! each trial's vote output is a nondecreasing step function of the
//! starting point z: one lazy bottom-up recursion computes the exact flip
//! threshold, sharing every random draw across all z at once (the
//! variance reduction behind the paired antisymmetry checks) and pruning
//! subtrees above death marks.

use std::sync::Arc;

use crate::dualtree::{sample_tree, vote, voter_a_table, PartitionSource, VoteRule};
use crate::error::{Error, Result};
use crate::gfun::{fixed_points, make_g, FixedPointSet};
use crate::model::ModelSpec;
use crate::rng::{derive_key64, Label, SubRng};
use crate::stats::{normal_cdf, normal_quantile, EstimateWithCI};

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Initial condition assigning a probability of state 1 to each point.
#[derive(Clone)]
pub enum InitCond {
    /// The canonical one-dimensional interface datum
    /// p0(x) = u_plus·1{x >= 0} + u_minus·1{x < 0}.
    Step { u_minus: f64, u_plus: f64 },
    /// Arbitrary measurable initial condition with values in [0,1].
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for InitCond {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitCond::Step { u_minus, u_plus } => f
                .debug_struct("Step")
                .field("u_minus", u_minus)
                .field("u_plus", u_plus)
                .finish(),
            InitCond::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl InitCond {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        let p = match self {
            InitCond::Step { u_minus, u_plus } => {
                if x[0] >= 0.0 {
                    *u_plus
                } else {
                    *u_minus
                }
            }
            InitCond::Custom(f) => f(x),
        };
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::DomainError(format!(
                "initial condition value {p} outside [0,1]"
            )));
        }
        Ok(p)
    }
}

/// Parameters of the dual branching Brownian motion.
#[derive(Debug, Clone)]
pub struct BbmParams {
    pub eps: f64,
    /// Branch events per unit time per lineage.
    pub branch_rate: f64,
    /// Brownian variance per coordinate per unit time.
    pub variance_rate: f64,
    pub dimension: usize,
    pub horizon: f64,
    pub initial_condition: InitCond,
}

impl BbmParams {
    pub fn new(
        eps: f64,
        branch_rate: f64,
        variance_rate: f64,
        dimension: usize,
        horizon: f64,
        initial_condition: InitCond,
    ) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidSpec(format!("eps must be positive, got {eps}")));
        }
        if !(branch_rate > 0.0) || !branch_rate.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "branch rate must be positive, got {branch_rate}"
            )));
        }
        if !(variance_rate > 0.0) || !variance_rate.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "variance rate must be positive, got {variance_rate}"
            )));
        }
        if dimension == 0 {
            return Err(Error::InvalidSpec("dimension must be >= 1".into()));
        }
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::InvalidSpec(format!("horizon must be >= 0, got {horizon}")));
        }
        if let InitCond::Step { u_minus, u_plus } = &initial_condition {
            if !(0.0..=1.0).contains(u_minus)
                || !(0.0..=1.0).contains(u_plus)
                || u_minus > u_plus
            {
                return Err(Error::InvalidSpec(format!(
                    "step levels ({u_minus}, {u_plus}) must satisfy 0 <= u- <= u+ <= 1"
                )));
            }
        }
        Ok(BbmParams {
            eps,
            branch_rate,
            variance_rate,
            dimension,
            horizon,
            initial_condition,
        })
    }

    /// Defaults wired from a model family: branch rate = reaction rate ·
    /// ε⁻², variance per the family's dual convention (2 for the ternary
    /// continuum duals, 1/d for the voter dual, 1 for the stirring-walk
    /// Lotka–Volterra dual).
    pub fn for_model(
        spec: &ModelSpec,
        eps: f64,
        dimension: usize,
        horizon: f64,
        initial_condition: InitCond,
    ) -> Result<Self> {
        let g = make_g(spec.clone())?;
        let branch_rate = g.reaction_rate() / (eps * eps);
        let variance_rate = default_variance_rate(spec, dimension);
        BbmParams::new(eps, branch_rate, variance_rate, dimension, horizon, initial_condition)
    }
}

/// Dual Brownian variance convention per family.
pub fn default_variance_rate(spec: &ModelSpec, dimension: usize) -> f64 {
    match spec {
        ModelSpec::SexualReproduction { .. } | ModelSpec::Majority | ModelSpec::CustomCubic { .. } => 2.0,
        ModelSpec::LotkaVolterraBoundary { .. } => 1.0,
        ModelSpec::NonlinearVoter { .. } => 1.0 / dimension as f64,
    }
}

/// The bistable triple of the g-function behind a vote rule.
pub fn rule_fixed_points(rule: &VoteRule) -> Result<FixedPointSet> {
    let spec = match rule {
        VoteRule::SexualBirthDeath { beta } => ModelSpec::SexualReproduction { beta: *beta },
        VoteRule::Majority => ModelSpec::Majority,
        VoteRule::NonlinearVoter { a1, a2, .. } => ModelSpec::NonlinearVoter {
            a1: *a1,
            a2: *a2,
            enforce_region2: false,
        },
    };
    fixed_points(&make_g(spec)?)
}

// ---------------------------------------------------------------------------
// General Monte Carlo estimation
// ---------------------------------------------------------------------------

/// Estimate P[vote = 1] for the dual started at `start`, by materializing
/// trees, diffusing lineages vertex-to-vertex, and voting.
pub fn estimate_vote_probability(
    start: &[f64],
    params: &BbmParams,
    rule: &VoteRule,
    trials: u64,
    seed: u64,
) -> Result<EstimateWithCI> {
    rule.validate()?;
    if start.len() != params.dimension {
        return Err(Error::DomainError(format!(
            "start point has {} coordinates, dimension is {}",
            start.len(),
            params.dimension
        )));
    }
    if trials == 0 {
        return Err(Error::EmptyEstimate("estimate_vote_probability with zero trials".into()));
    }
    let d = params.dimension;
    let sig = params.variance_rate;
    let mut hits = 0u64;
    for trial in 0..trials {
        let mut stream = SubRng::new(derive_key64(seed, &[Label::Name("bbm"), Label::Count(trial)]));
        let tree = sample_tree(params.branch_rate, params.horizon, rule.arity(), &mut stream)?;
        // Positions at each vertex's event time; exact Gaussian propagation
        // along edges, children start where the parent branched.
        let mut pos = vec![0.0f64; tree.len() * d];
        for id in 0..tree.len() {
            let v = tree.vertex(id as u32);
            let dt = v.birth_time - v.event_time;
            let sd = (sig * dt).sqrt();
            let base: Vec<f64> = match v.parent {
                None => start.to_vec(),
                Some(p) => pos[p as usize * d..p as usize * d + d].to_vec(),
            };
            for k in 0..d {
                pos[id * d + k] = base[k] + sd * stream.gaussian();
            }
        }
        let mut states = Vec::with_capacity(tree.leaf_count());
        for &leaf in tree.leaf_ids() {
            let x = &pos[leaf as usize * d..leaf as usize * d + d];
            let p = params.initial_condition.eval(x)?;
            states.push(stream.uniform() < p);
        }
        let vote_key = derive_key64(seed, &[Label::Name("bbm-vote"), Label::Count(trial)]);
        if vote(&tree, &states, rule, vote_key)? {
            hits += 1;
        }
    }
    EstimateWithCI::bernoulli(hits, trials)
}

// ---------------------------------------------------------------------------
// Interface thresholds (1-D step data, monotone rules)
// ---------------------------------------------------------------------------

/// One row of an interface profile.
#[derive(Debug, Clone)]
pub struct ProfileRow {
    pub z: f64,
    pub estimate: EstimateWithCI,
}

/// Estimated interface profile z ↦ P_z[vote = 1].
#[derive(Debug, Clone)]
pub struct InterfaceProfile {
    pub rows: Vec<ProfileRow>,
    pub eps: f64,
    pub horizon: f64,
    pub rule_name: String,
    pub trials: u64,
    pub seed: u64,
}

fn median3(a: f64, b: f64, c: f64) -> f64 {
    f64::max(f64::max(f64::min(a, b), f64::min(a, c)), f64::min(b, c))
}

struct ThresholdSampler<'a> {
    rate: f64,
    sig: f64,
    u_minus: f64,
    u_plus: f64,
    rule: &'a VoteRule,
}

impl ThresholdSampler<'_> {
    /// Flip point of the trial's vote as a function of the start z:
    /// vote(z) = 1 iff z >= threshold. `disp` is the lineage's accumulated
    /// Brownian displacement; `remaining` the time left to 0. The tree is
    /// explored lazily; death marks prune their subtrees.
    fn threshold(&self, rng: &mut SubRng, disp: f64, remaining: f64) -> f64 {
        let wait = rng.exp(self.rate);
        if wait >= remaining {
            // Leaf: position z + disp + (Gaussian over the rest of the
            // lifetime); state couples through one uniform so the flip in z
            // is a single step.
            let d = disp + rng.gaussian() * (self.sig * remaining).sqrt();
            let u = rng.uniform();
            return if u < self.u_minus {
                f64::NEG_INFINITY
            } else if u < self.u_plus {
                -d
            } else {
                f64::INFINITY
            };
        }
        let left = remaining - wait;
        let d = disp + rng.gaussian() * (self.sig * wait).sqrt();
        match self.rule {
            VoteRule::SexualBirthDeath { beta } => {
                // Death first: the whole subtree is irrelevant.
                if rng.uniform() >= beta / (1.0 + beta) {
                    return f64::INFINITY;
                }
                let t0 = self.threshold(rng, d, left);
                let t1 = self.threshold(rng, d, left);
                let t2 = self.threshold(rng, d, left);
                f64::min(t0, f64::max(t1, t2))
            }
            VoteRule::Majority => {
                let t0 = self.threshold(rng, d, left);
                let t1 = self.threshold(rng, d, left);
                let t2 = self.threshold(rng, d, left);
                median3(t0, t1, t2)
            }
            VoteRule::NonlinearVoter { a1, a2, partitions } => {
                let a = voter_a_table(*a1, *a2);
                let partition = match partitions {
                    PartitionSource::Singletons => crate::dualtree::Partition::singletons(),
                    PartitionSource::Empirical(law) => law.sample(rng.uniform()),
                };
                let cells = partition.cells();
                let reps: Vec<usize> = cells
                    .iter()
                    .map(|cell| {
                        if cell.len() == 1 {
                            cell[0]
                        } else {
                            cell[rng.below(cell.len() as u64) as usize]
                        }
                    })
                    .collect();
                let u = rng.uniform();
                let child: Vec<f64> =
                    (0..5).map(|_| self.threshold(rng, d, left)).collect();
                // Ones count is the cell-size-weighted count of cells whose
                // representative threshold is <= z; the a-table is
                // nondecreasing (checked by the caller), so the output flips
                // at the first prefix with a[count] > u.
                let mut pairs: Vec<(f64, usize)> = cells
                    .iter()
                    .zip(&reps)
                    .map(|(cell, &rep)| (child[rep], cell.len()))
                    .collect();
                pairs.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("no NaN thresholds"));
                let mut count = 0usize;
                for (thr, w) in pairs {
                    count += w;
                    if u < a[count] {
                        return thr;
                    }
                }
                f64::INFINITY
            }
        }
    }
}

/// Sample per-trial vote thresholds: trial i's vote, started at z, is 1
/// iff z >= thresholds[i]. Requires a 1-D step initial condition and a
/// monotone rule (for the nonlinear voter this means a1 <= a2 <= 1/2).
pub fn sample_interface_thresholds(
    params: &BbmParams,
    rule: &VoteRule,
    trials: u64,
    seed: u64,
) -> Result<Vec<f64>> {
    rule.validate()?;
    if params.dimension != 1 {
        return Err(Error::DomainError(
            "interface thresholds need a one-dimensional dual".into(),
        ));
    }
    let (u_minus, u_plus) = match &params.initial_condition {
        InitCond::Step { u_minus, u_plus } => (*u_minus, *u_plus),
        InitCond::Custom(_) => {
            return Err(Error::DomainError(
                "interface thresholds need a step initial condition".into(),
            ))
        }
    };
    if let VoteRule::NonlinearVoter { a1, a2, .. } = rule {
        if !(a1 <= a2 && *a2 <= 0.5) {
            return Err(Error::DomainError(
                "voter a-table must be nondecreasing (a1 <= a2 <= 1/2) for threshold sampling"
                    .into(),
            ));
        }
    }
    if trials == 0 {
        return Err(Error::EmptyEstimate("threshold sampling with zero trials".into()));
    }
    let sampler = ThresholdSampler {
        rate: params.branch_rate,
        sig: params.variance_rate,
        u_minus,
        u_plus,
        rule,
    };
    let mut out = Vec::with_capacity(trials as usize);
    for trial in 0..trials {
        let mut rng =
            SubRng::new(derive_key64(seed, &[Label::Name("bbm-front"), Label::Count(trial)]));
        out.push(sampler.threshold(&mut rng, 0.0, params.horizon));
    }
    Ok(out)
}

/// Fraction of thresholds at or below z, as a Bernoulli estimate.
pub fn threshold_cdf(thresholds: &[f64], z: f64) -> Result<EstimateWithCI> {
    let hits = thresholds.iter().filter(|t| **t <= z).count() as u64;
    EstimateWithCI::bernoulli(hits, thresholds.len() as u64)
}

/// Estimate the 1-D interface profile on a z-grid. All grid points share
/// one threshold ensemble (common random numbers across z).
pub fn interface_profile_1d(
    z_grid: &[f64],
    params: &BbmParams,
    rule: &VoteRule,
    trials: u64,
    seed: u64,
) -> Result<InterfaceProfile> {
    let thresholds = sample_interface_thresholds(params, rule, trials, seed)?;
    let rows = z_grid
        .iter()
        .map(|&z| {
            Ok(ProfileRow {
                z,
                estimate: threshold_cdf(&thresholds, z)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InterfaceProfile {
        rows,
        eps: params.eps,
        horizon: params.horizon,
        rule_name: format!("{rule:?}"),
        trials,
        seed,
    })
}

// ---------------------------------------------------------------------------
// z_epsilon
// ---------------------------------------------------------------------------

/// The centering offset z_ε solving P_0(B_{T*} >= -z) = 1/2 + ε/(u_+ - u_-):
/// z_ε = sqrt(variance_rate · T*) · Φ⁻¹(1/2 + ε/(u_+ - u_-)).
pub fn solve_z_epsilon(
    eps: f64,
    t_star: f64,
    u_minus: f64,
    u_plus: f64,
    variance_rate: f64,
) -> Result<f64> {
    if !(u_plus > u_minus) {
        return Err(Error::DomainError(format!(
            "need u_plus > u_minus, got {u_minus}, {u_plus}"
        )));
    }
    if !(t_star > 0.0) || !(variance_rate > 0.0) {
        return Err(Error::DomainError(
            "t_star and variance_rate must be positive".into(),
        ));
    }
    if eps < 0.0 {
        return Err(Error::DomainError(format!("eps must be >= 0, got {eps}")));
    }
    let target = 0.5 + eps / (u_plus - u_minus);
    if target >= 1.0 {
        return Err(Error::DomainError(format!(
            "target probability {target} outside (0,1)"
        )));
    }
    if eps == 0.0 {
        return Ok(0.0);
    }
    Ok((variance_rate * t_star).sqrt() * normal_quantile(target)?)
}

// ---------------------------------------------------------------------------
// Maximal displacement
// ---------------------------------------------------------------------------

/// Empirical `level`-quantile of the running maximum displacement
/// sup over particles and times s <= horizon of (B_i(s) - start), in the
/// first coordinate. Per-edge maxima are sampled exactly from the Brownian
/// bridge reflection law, so no time discretization enters; by symmetry
/// the one-sided running maximum has the same law as the running minimum's
/// negation and bounds the two-sided sup within a factor of 2 in tail
/// probability.
pub fn max_displacement_quantile(
    params: &BbmParams,
    level: f64,
    trials: u64,
    seed: u64,
) -> Result<f64> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::DomainError(format!("quantile level {level} outside (0,1)")));
    }
    if trials == 0 {
        return Err(Error::EmptyEstimate("max_displacement_quantile with zero trials".into()));
    }
    if params.horizon == 0.0 {
        return Ok(0.0);
    }
    let sig = params.variance_rate;
    let rate = params.branch_rate;
    // sup over the subtree below a lineage at `disp` with `remaining` time.
    fn walk(rng: &mut SubRng, rate: f64, sig: f64, disp: f64, remaining: f64) -> f64 {
        let wait = rng.exp(rate);
        let dur = wait.min(remaining);
        let e = rng.gaussian() * (sig * dur).sqrt();
        // Brownian bridge running max over the edge given endpoint e:
        // M = (e + sqrt(e^2 - 2*sig*dur*ln U)) / 2, with M >= max(0, e).
        let u = 1.0 - rng.uniform();
        let m = 0.5 * (e + (e * e - 2.0 * sig * dur * u.ln()).sqrt());
        let here = disp + m;
        if wait >= remaining {
            return here;
        }
        let below = (0..3)
            .map(|_| walk(rng, rate, sig, disp + e, remaining - wait))
            .fold(f64::NEG_INFINITY, f64::max);
        here.max(below)
    }
    let mut sups = Vec::with_capacity(trials as usize);
    for trial in 0..trials {
        let mut rng =
            SubRng::new(derive_key64(seed, &[Label::Name("bbm-disp"), Label::Count(trial)]));
        sups.push(walk(&mut rng, rate, sig, 0.0, params.horizon));
    }
    sups.sort_by(|a, b| a.partial_cmp(b).expect("finite sups"));
    let k = ((level * trials as f64).ceil() as usize).clamp(1, trials as usize);
    Ok(sups[k - 1])
}

// ---------------------------------------------------------------------------
// Slope concavity
// ---------------------------------------------------------------------------

/// Paired second-difference report for the interface slope.
#[derive(Debug, Clone)]
pub struct SlopeReport {
    pub z: f64,
    pub eta: f64,
    pub p_left: f64,
    pub p_center: f64,
    pub p_right: f64,
    /// (p_right - p_center) - (p_center - p_left), estimated trialwise.
    pub second_difference: f64,
    /// Standard error of the paired second difference.
    pub stderr: f64,
    pub trials: u64,
    pub pass: bool,
}

/// Check that the profile's increments are non-increasing to the right of
/// z (concavity of the slope above the center): second difference <= +3
/// paired standard errors. Uses common random numbers: all three points
/// are read off the same threshold ensemble.
pub fn slope_concavity_check(
    z: f64,
    eta: f64,
    params: &BbmParams,
    rule: &VoteRule,
    trials: u64,
    seed: u64,
) -> Result<SlopeReport> {
    if z < 0.0 || eta < 0.0 {
        return Err(Error::DomainError("need z >= 0 and eta >= 0".into()));
    }
    let thresholds = sample_interface_thresholds(params, rule, trials, seed)?;
    let n = thresholds.len() as f64;
    let ind = |t: f64, at: f64| -> f64 {
        if t <= at {
            1.0
        } else {
            0.0
        }
    };
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let (mut left, mut center, mut right) = (0.0, 0.0, 0.0);
    for &t in &thresholds {
        let l = ind(t, z - eta);
        let c = ind(t, z);
        let r = ind(t, z + eta);
        left += l;
        center += c;
        right += r;
        let d = (r - c) - (c - l);
        sum += d;
        sum_sq += d * d;
    }
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
    let stderr = (var / n).sqrt();
    Ok(SlopeReport {
        z,
        eta,
        p_left: left / n,
        p_center: center / n,
        p_right: right / n,
        second_difference: mean,
        stderr,
        trials,
        pass: mean <= 3.0 * stderr,
    })
}

/// The Gaussian single-particle value u_+ P_z(B_t >= 0) + u_- P_z(B_t < 0),
/// a lower bound for the interface profile at z >= 0 (voting sharpens the
/// profile about the center, so left of it the inequality reverses).
pub fn one_particle_bound(z: f64, params: &BbmParams, u_minus: f64, u_plus: f64) -> f64 {
    if params.horizon == 0.0 {
        return if z >= 0.0 { u_plus } else { u_minus };
    }
    let sd = (params.variance_rate * params.horizon).sqrt();
    let phi = normal_cdf(z / sd);
    u_plus * phi + u_minus * (1.0 - phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dualtree::exact_vote_probability;
    use crate::gfun::iterate_g;

    fn step_third() -> InitCond {
        InitCond::Step { u_minus: 0.0, u_plus: 2.0 / 3.0 }
    }

    fn sr_rule() -> VoteRule {
        VoteRule::SexualBirthDeath { beta: 4.5 }
    }

    #[test]
    fn params_validation_rejects_bad_inputs() {
        let ic = step_third();
        assert!(BbmParams::new(0.0, 1.0, 1.0, 1, 1.0, ic.clone()).is_err());
        assert!(BbmParams::new(0.1, -1.0, 1.0, 1, 1.0, ic.clone()).is_err());
        assert!(BbmParams::new(0.1, 1.0, 0.0, 1, 1.0, ic.clone()).is_err());
        assert!(BbmParams::new(0.1, 1.0, 1.0, 0, 1.0, ic.clone()).is_err());
        assert!(BbmParams::new(0.1, 1.0, 1.0, 1, -1.0, ic).is_err());
        assert!(BbmParams::new(
            0.1,
            1.0,
            1.0,
            1,
            1.0,
            InitCond::Step { u_minus: 0.9, u_plus: 0.3 }
        )
        .is_err());
        let p = BbmParams::for_model(
            &ModelSpec::SexualReproduction { beta: 4.5 },
            0.1,
            1,
            0.01,
            step_third(),
        )
        .unwrap();
        assert!((p.branch_rate - 550.0).abs() < 1e-9);
        assert!((p.variance_rate - 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_horizon_reads_the_initial_condition() {
        // t = 0: a single leaf at the start point; deterministic step levels
        // give exact answers.
        let params = BbmParams::new(1.0, 1.0, 2.0, 1, 0.0, step_third()).unwrap();
        let plus = estimate_vote_probability(&[0.5], &params, &sr_rule(), 500, 7).unwrap();
        let zero_ic = estimate_vote_probability(&[-0.5], &params, &sr_rule(), 500, 7).unwrap();
        // At x >= 0 the state is Bernoulli(2/3); at x < 0 it is surely 0.
        assert!((plus.value - 2.0 / 3.0).abs() <= 3.0 * plus.stderr);
        assert_eq!(zero_ic.value, 0.0);
    }

    #[test]
    fn constant_fixed_point_initial_data_are_absorbed() {
        // Statistically via Monte Carlo...
        for u in [0.0, 1.0 / 3.0, 2.0 / 3.0] {
            let ic = InitCond::Custom(Arc::new(move |_: &[f64]| u));
            let params = BbmParams::new(1.0, 5.5, 2.0, 1, 0.3, ic).unwrap();
            let est = estimate_vote_probability(&[0.0], &params, &sr_rule(), 20_000, 11).unwrap();
            assert!(
                (est.value - u).abs() <= 3.0 * est.stderr.max(1e-4),
                "u = {u}: {} (se {})",
                est.value,
                est.stderr
            );
        }
        // ...and exactly via the DP oracle on sampled trees.
        let mut rng = SubRng::new(derive_key64(3, &[Label::Name("absorb")]));
        for _ in 0..10 {
            let tree = sample_tree(1.5, 1.0, 3, &mut rng).unwrap();
            for u in [0.0, 1.0 / 3.0, 2.0 / 3.0] {
                let q = exact_vote_probability(&tree, &vec![u; tree.leaf_count()], &sr_rule())
                    .unwrap();
                assert!((q - u).abs() <= 1e-12, "fixed point {u} moved to {q}");
            }
        }
    }

    #[test]
    fn iterated_g_contracts_geometrically_above_u_plus() {
        // g^(n)(1) - u_+ <= (1 - k2)^n (1 - u_+) with k2 = 1 - g'(u_+) = 2/11.
        let g = make_g(ModelSpec::SexualReproduction { beta: 4.5 }).unwrap();
        let shrink: f64 = 9.0 / 11.0;
        for n in 0..=40u64 {
            let v = iterate_g(&g, 1.0, n).unwrap();
            let bound = shrink.powi(n as i32) * (1.0 / 3.0);
            assert!(
                v - 2.0 / 3.0 <= bound * (1.0 + 1e-12) + 1e-15,
                "n = {n}: {} vs {}",
                v - 2.0 / 3.0,
                bound
            );
        }
    }

    #[test]
    fn z_epsilon_matches_its_asymptotic_form() {
        assert_eq!(solve_z_epsilon(0.0, 2.0, 0.0, 2.0 / 3.0, 1.0).unwrap(), 0.0);
        // Small eps: z_eps ~ (u_+ - u_-)^{-1} eps sqrt(2 pi T*) at variance 1.
        let eps = 1e-4;
        let t_star = 2.0;
        let z = solve_z_epsilon(eps, t_star, 0.0, 2.0 / 3.0, 1.0).unwrap();
        let asym = eps / (2.0 / 3.0) * (2.0 * std::f64::consts::PI * t_star).sqrt();
        assert!((z / asym - 1.0).abs() <= 0.01, "z {z} vs asymptotic {asym}");
        // Target probability outside (0,1).
        assert!(solve_z_epsilon(0.5, 1.0, 0.0, 0.5, 1.0).is_err());
        assert!(solve_z_epsilon(-0.1, 1.0, 0.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn profile_is_monotone_with_valid_rows() {
        let params = BbmParams::for_model(
            &ModelSpec::SexualReproduction { beta: 4.5 },
            0.3,
            1,
            0.09,
            step_third(),
        )
        .unwrap();
        let grid: Vec<f64> = (-6..=6).map(|k| k as f64 * 0.1).collect();
        let profile = interface_profile_1d(&grid, &params, &sr_rule(), 4000, 17).unwrap();
        assert_eq!(profile.rows.len(), grid.len());
        for w in profile.rows.windows(2) {
            assert!(
                w[1].estimate.value >= w[0].estimate.value,
                "profile must be nondecreasing under shared randomness"
            );
        }
        for row in &profile.rows {
            let e = &row.estimate;
            assert!((0.0..=1.0).contains(&e.value));
            let se = (e.value * (1.0 - e.value) / e.trials as f64).sqrt();
            assert!((e.stderr - se).abs() <= 1e-15);
        }
        // Far plateaus at this spread (sd = sqrt(2*0.09) = 0.42).
        assert!(profile.rows.last().unwrap().estimate.value >= 0.55);
        assert!(profile.rows[0].estimate.value <= 0.08);
    }

    #[test]
    fn paired_antisymmetry_about_the_center() {
        // At beta = 4.5 the per-tree identity P_z + P_{-z} = 2 u_0 makes the
        // shared-ensemble sum concentrate hard around 2/3.
        let params = BbmParams::for_model(
            &ModelSpec::SexualReproduction { beta: 4.5 },
            0.3,
            1,
            0.09,
            step_third(),
        )
        .unwrap();
        let trials = 20_000u64;
        let thresholds =
            sample_interface_thresholds(&params, &sr_rule(), trials, 23).unwrap();
        for z in [0.05, 0.15, 0.3] {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for &t in &thresholds {
                let s = (t <= z) as u64 as f64 + (t <= -z) as u64 as f64;
                sum += s;
                sum_sq += s * s;
            }
            let n = trials as f64;
            let mean = sum / n;
            let var = (sum_sq / n - mean * mean).max(0.0);
            let se = (var / n).sqrt();
            assert!(
                (mean - 2.0 / 3.0).abs() <= 3.0 * se.max(1e-4),
                "z = {z}: sum {mean} (se {se})"
            );
        }
    }

    #[test]
    fn single_particle_gaussian_bound_holds() {
        let params = BbmParams::for_model(
            &ModelSpec::SexualReproduction { beta: 4.5 },
            0.3,
            1,
            0.09,
            step_third(),
        )
        .unwrap();
        // The bound holds right of the center only; left of it sharpening
        // reverses the inequality.
        let grid: Vec<f64> = (0..=10).map(|k| k as f64 * 0.08).collect();
        let profile = interface_profile_1d(&grid, &params, &sr_rule(), 20_000, 29).unwrap();
        for row in &profile.rows {
            let bound = one_particle_bound(row.z, &params, 0.0, 2.0 / 3.0);
            assert!(
                row.estimate.value >= bound - 3.0 * row.estimate.stderr.max(1e-4),
                "z = {}: {} < bound {bound}",
                row.z,
                row.estimate.value
            );
        }
    }

    #[test]
    fn slope_concavity_passes_right_of_center() {
        let params = BbmParams::for_model(
            &ModelSpec::SexualReproduction { beta: 4.5 },
            0.3,
            1,
            0.09,
            step_third(),
        )
        .unwrap();
        let report =
            slope_concavity_check(0.2, 0.1, &params, &sr_rule(), 20_000, 31).unwrap();
        assert!(report.pass, "second difference {} se {}", report.second_difference, report.stderr);
        assert!(report.p_left <= report.p_center && report.p_center <= report.p_right);

        // eta = 0: both gaps vanish; must not hard-fail at equality.
        let degenerate =
            slope_concavity_check(0.2, 0.0, &params, &sr_rule(), 1000, 31).unwrap();
        assert_eq!(degenerate.second_difference, 0.0);
        assert!(degenerate.pass);
    }

    #[test]
    fn threshold_sampler_rejects_unsupported_setups() {
        let custom = BbmParams::new(
            0.3,
            5.0,
            2.0,
            1,
            0.1,
            InitCond::Custom(Arc::new(|_: &[f64]| 0.5)),
        )
        .unwrap();
        assert!(sample_interface_thresholds(&custom, &sr_rule(), 10, 0).is_err());
        let two_d = BbmParams::new(0.3, 5.0, 2.0, 2, 0.1, step_third()).unwrap();
        assert!(sample_interface_thresholds(&two_d, &sr_rule(), 10, 0).is_err());
        let ok = BbmParams::new(0.3, 5.0, 2.0, 1, 0.1, step_third()).unwrap();
        let decreasing_table = VoteRule::NonlinearVoter {
            a1: 0.4,
            a2: 0.2,
            partitions: PartitionSource::Singletons,
        };
        assert!(sample_interface_thresholds(&ok, &decreasing_table, 10, 0).is_err());
    }

    #[test]
    fn voter_thresholds_agree_with_direct_votes() {
        // Cross-check the threshold recursion against materialized voting
        // at a few z for the quinary rule.
        let params = BbmParams::new(0.5, 2.0, 1.0, 1, 0.4, step_third()).unwrap();
        let rule = VoteRule::NonlinearVoter {
            a1: 0.25,
            a2: 0.3,
            partitions: PartitionSource::Singletons,
        };
        let thresholds = sample_interface_thresholds(&params, &rule, 30_000, 41).unwrap();
        for z in [-0.3, 0.0, 0.3] {
            let via_thresh = threshold_cdf(&thresholds, z).unwrap();
            let ic = InitCond::Step { u_minus: 0.0, u_plus: 2.0 / 3.0 };
            let p2 = BbmParams::new(0.5, 2.0, 1.0, 1, 0.4, ic).unwrap();
            let direct = estimate_vote_probability(&[z], &p2, &rule, 30_000, 43).unwrap();
            let pooled = (via_thresh.stderr.powi(2) + direct.stderr.powi(2)).sqrt();
            assert!(
                (via_thresh.value - direct.value).abs() <= 4.0 * pooled.max(1e-4),
                "z = {z}: threshold {} vs direct {}",
                via_thresh.value,
                direct.value
            );
        }
    }

    #[test]
    fn max_displacement_quantile_behaviors() {
        let zero = BbmParams::new(0.1, 1.0, 2.0, 1, 0.0, step_third()).unwrap();
        assert_eq!(max_displacement_quantile(&zero, 0.9, 100, 0).unwrap(), 0.0);

        // Single lineage: running-max quantile from the reflection
        // principle, sigma * Phi^{-1}((1+q)/2).
        let single = BbmParams::new(0.1, 1e-9, 2.0, 1, 1.0, step_third()).unwrap();
        let q = 0.9;
        let measured = max_displacement_quantile(&single, q, 4000, 51).unwrap();
        let sigma = (2.0 * 1.0f64).sqrt();
        let oracle = sigma * normal_quantile((1.0 + q) / 2.0).unwrap();
        assert!(
            (measured / oracle - 1.0).abs() <= 0.05,
            "measured {measured} vs oracle {oracle}"
        );
    }

    #[test]
    fn displacement_scale_is_stable_in_eps() {
        // quantile / (eps |log eps|) within +-20% across eps in {0.1, 0.05}
        // at horizon eps^2 |log eps| and branch rate eps^-2.
        let mut ratios = Vec::new();
        for eps in [0.1f64, 0.05] {
            let horizon = eps * eps * eps.ln().abs();
            let params =
                BbmParams::new(eps, eps.powi(-2), 2.0, 1, horizon, step_third()).unwrap();
            let m = max_displacement_quantile(&params, 0.9, 2000, 61).unwrap();
            ratios.push(m / (eps * eps.ln().abs()));
        }
        let rel = (ratios[0] - ratios[1]).abs() / ratios[1];
        assert!(rel <= 0.2, "ratios {ratios:?}");
    }
}
