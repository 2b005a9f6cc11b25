//! Finite-torus particle systems with fast stirring and their dual
//! branching random walks.
//!
//! Three families share the machinery. The stirring family (sexual
//! reproduction) runs per-site birth/death clocks at rate `event_rate`
//! plus nearest-neighbor exchanges at rate `stir_rate` per unordered
//! pair; its dual is a branching walk whose pairs of children occupy
//! adjacent axis sites, censored at collisions, coupled to an uncensored
//! comparison process that resolves collisions with independent
//! randomness. The voter-perturbation family (nonlinear voter,
//! Lotka–Volterra) runs per-site opinion resampling at rate `2·stir_rate`
//! plus perturbation clocks at rate `event_rate`; its comparison dual
//! suppresses births for `√η` after each branch and permits only
//! family-internal coalescence inside that window, recording the realized
//! partition of each five-member family for the vote.
//!
//! All simulation is exact event-driven sampling of the underlying Poisson
//! clocks; no time discretization enters anywhere.

use std::collections::HashMap;

use crate::dualtree::{voter_a_table, Partition};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::rng::{derive_key64, Label, SubRng};
use crate::stats::{ks_critical, ks_statistic, normal_cdf, EstimateWithCI};

/// Hard cap on live dual particles before aborting with ExplosionGuard.
pub const DUAL_PARTICLE_CAP: usize = 1_000_000;
/// Default per-run cap on processed events before RateOverflow.
pub const DEFAULT_EVENT_BUDGET: u64 = 2_000_000_000;

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
struct Torus {
    side: i32,
    dim: usize,
}

impl Torus {
    fn n_sites(&self) -> usize {
        (self.side as usize).pow(self.dim as u32)
    }

    fn wrap(&self, c: i64) -> i32 {
        (c.rem_euclid(self.side as i64)) as i32
    }

    fn wrap_site(&self, raw: [i64; 3]) -> [i32; 3] {
        let mut out = [0i32; 3];
        for k in 0..self.dim {
            out[k] = self.wrap(raw[k]);
        }
        out
    }

    fn index(&self, site: [i32; 3]) -> usize {
        let mut idx = 0usize;
        for k in (0..self.dim).rev() {
            idx = idx * self.side as usize + site[k] as usize;
        }
        idx
    }

    fn coords(&self, mut idx: usize) -> [i32; 3] {
        let mut out = [0i32; 3];
        for k in 0..self.dim {
            out[k] = (idx % self.side as usize) as i32;
            idx /= self.side as usize;
        }
        out
    }

    /// Neighbor in direction `dir` (axis = dir/2, sign = +1 for even dir).
    fn step(&self, site: [i32; 3], dir: usize) -> [i32; 3] {
        let axis = dir / 2;
        let sign = if dir % 2 == 0 { 1 } else { -1 };
        let mut out = site;
        out[axis] = self.wrap(site[axis] as i64 + sign as i64);
        out
    }

    fn neighbor_index(&self, idx: usize, dir: usize) -> usize {
        self.index(self.step(self.coords(idx), dir))
    }
}

fn dir_offset(dir: usize) -> ([usize; 1], i64) {
    ([dir / 2], if dir % 2 == 0 { 1 } else { -1 })
}

/// The two adjacent axis sites of each birth pair in the stirring family:
/// (east,north), (west,north), (west,south), (east,south).
const SEXUAL_PAIRS: [[[i64; 2]; 2]; 4] = [
    [[1, 0], [0, 1]],
    [[-1, 0], [0, 1]],
    [[-1, 0], [0, -1]],
    [[1, 0], [0, -1]],
];

// ---------------------------------------------------------------------------
// Families
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
enum Family {
    Stirring { beta: f64 },
    Nlv { a: [f64; 6] },
    Lv { theta: f64, p3: f64 },
}

fn family_of(model: &ModelSpec) -> Result<Family> {
    match model {
        ModelSpec::SexualReproduction { beta } => {
            if !(*beta > 0.0) || !beta.is_finite() {
                return Err(Error::InvalidSpec(format!("beta must be positive, got {beta}")));
            }
            Ok(Family::Stirring { beta: *beta })
        }
        ModelSpec::NonlinearVoter { a1, a2, .. } => {
            if !(0.0..=1.0).contains(a1) || !(0.0..=1.0).contains(a2) {
                return Err(Error::InvalidSpec(format!(
                    "voter probabilities (a1, a2) = ({a1}, {a2}) outside [0,1]"
                )));
            }
            Ok(Family::Nlv { a: voter_a_table(*a1, *a2) })
        }
        ModelSpec::LotkaVolterraBoundary { theta, p3, .. } => {
            if !(*theta > 0.0) || !(0.0 < *p3 && *p3 <= 1.0) {
                return Err(Error::InvalidSpec(format!(
                    "need theta > 0 and p3 in (0,1], got ({theta}, {p3})"
                )));
            }
            Ok(Family::Lv { theta: *theta, p3: *p3 })
        }
        other => Err(Error::InvalidSpec(format!(
            "{other:?} has no lattice dynamics (it is a continuum-only family)"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Scaling parameters
// ---------------------------------------------------------------------------

/// Rates and geometry of the rescaled lattice system on the torus
/// (η Z^d)^d mod side, with η = δ·ε.
#[derive(Debug, Clone)]
pub struct ScalingParams {
    pub delta: f64,
    pub eps: f64,
    pub eta: f64,
    /// Exchange rate per unordered nearest-neighbor pair (stirring family).
    /// Voter-family opinion resampling runs at 2·stir_rate per site so the
    /// single-lineage dual walk jumps at η⁻² under the defaults.
    pub stir_rate: f64,
    /// Per-site reaction clock: (1+β)·ε⁻² for the stirring family, ε⁻²
    /// perturbation events for the voter families.
    pub event_rate: f64,
    pub torus_side: usize,
    pub dimension: usize,
    /// Half-width L of the nonlinear-voter branching box [-L, L]^d in
    /// lattice units.
    pub voter_range: usize,
    /// Cap on processed events per simulation call.
    pub event_budget: u64,
}

impl ScalingParams {
    pub fn for_model(
        model: &ModelSpec,
        delta: f64,
        eps: f64,
        torus_side: usize,
        dimension: usize,
    ) -> Result<Self> {
        let fam = family_of(model)?;
        if !(delta > 0.0) || !(eps > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "delta and eps must be positive, got ({delta}, {eps})"
            )));
        }
        let eta = delta * eps;
        let event_rate = match fam {
            Family::Stirring { beta } => (1.0 + beta) / (eps * eps),
            Family::Nlv { .. } | Family::Lv { .. } => 1.0 / (eps * eps),
        };
        let params = ScalingParams {
            delta,
            eps,
            eta,
            stir_rate: 0.5 / (eta * eta),
            event_rate,
            torus_side,
            dimension,
            voter_range: 5.min(torus_side.saturating_sub(1) / 2).max(1),
            event_budget: DEFAULT_EVENT_BUDGET,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_stir_rate(mut self, stir_rate: f64) -> Result<Self> {
        self.stir_rate = stir_rate;
        self.validate()?;
        Ok(self)
    }

    pub fn with_event_rate(mut self, event_rate: f64) -> Result<Self> {
        self.event_rate = event_rate;
        self.validate()?;
        Ok(self)
    }

    pub fn with_voter_range(mut self, voter_range: usize) -> Result<Self> {
        self.voter_range = voter_range;
        self.validate()?;
        Ok(self)
    }

    pub fn with_event_budget(mut self, budget: u64) -> Self {
        self.event_budget = budget;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !(self.eps > 0.0) || !(self.eta > 0.0) {
            return Err(Error::InvalidSpec("delta, eps, eta must be positive".into()));
        }
        let expect = self.delta * self.eps;
        if (self.eta - expect).abs() > 1e-15 * expect.max(1.0) {
            return Err(Error::InvalidSpec(format!(
                "eta = {} does not equal delta*eps = {expect}",
                self.eta
            )));
        }
        if !(self.stir_rate > 0.0) {
            return Err(Error::InvalidSpec("stir_rate must be positive".into()));
        }
        if !(self.event_rate >= 0.0) || !self.event_rate.is_finite() {
            return Err(Error::InvalidSpec("event_rate must be finite and >= 0".into()));
        }
        if self.torus_side < 4 || self.torus_side % 2 != 0 {
            return Err(Error::InvalidSpec(format!(
                "torus_side must be even and >= 4, got {}",
                self.torus_side
            )));
        }
        if !(1..=3).contains(&self.dimension) {
            return Err(Error::InvalidSpec(format!(
                "dimension must be 1, 2, or 3, got {}",
                self.dimension
            )));
        }
        if self.voter_range < 1 || 2 * self.voter_range + 1 > self.torus_side {
            return Err(Error::InvalidSpec(format!(
                "voter_range {} must fit the torus (side {})",
                self.voter_range, self.torus_side
            )));
        }
        Ok(())
    }

    /// The voter branching box must offer at least four distinct
    /// non-origin offsets; only the voter families evaluate this.
    fn check_voter_box(&self) -> Result<()> {
        let box_size = (2 * self.voter_range + 1).pow(self.dimension as u32);
        if box_size - 1 < 4 {
            return Err(Error::InvalidSpec(
                "voter branching box too small for 4 distinct children".into(),
            ));
        }
        Ok(())
    }

    fn torus(&self) -> Torus {
        Torus { side: self.torus_side as i32, dim: self.dimension }
    }

    pub fn n_sites(&self) -> usize {
        self.torus().n_sites()
    }
}

// ---------------------------------------------------------------------------
// Configurations
// ---------------------------------------------------------------------------

/// Occupancy configuration on the torus at a point in time.
#[derive(Debug, Clone)]
pub struct LatticeConfig {
    pub occupancy: Vec<bool>,
    pub torus_side: usize,
    pub dimension: usize,
    pub model: ModelSpec,
    pub time: f64,
}

impl LatticeConfig {
    pub fn all_zeros(model: ModelSpec, torus_side: usize, dimension: usize) -> Self {
        let n = torus_side.pow(dimension as u32);
        LatticeConfig { occupancy: vec![false; n], torus_side, dimension, model, time: 0.0 }
    }

    pub fn all_ones(model: ModelSpec, torus_side: usize, dimension: usize) -> Self {
        let mut c = Self::all_zeros(model, torus_side, dimension);
        c.occupancy.fill(true);
        c
    }

    pub fn single_site(model: ModelSpec, torus_side: usize, dimension: usize, site: usize) -> Self {
        let mut c = Self::all_zeros(model, torus_side, dimension);
        c.occupancy[site] = true;
        c
    }

    pub fn product_bernoulli(
        model: ModelSpec,
        torus_side: usize,
        dimension: usize,
        probs: &[f64],
        rng: &mut SubRng,
    ) -> Result<Self> {
        let mut c = Self::all_zeros(model, torus_side, dimension);
        if probs.len() != c.occupancy.len() {
            return Err(Error::InvalidSpec(format!(
                "{} site probabilities for {} sites",
                probs.len(),
                c.occupancy.len()
            )));
        }
        for (bit, &p) in c.occupancy.iter_mut().zip(probs) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidSpec(format!("site probability {p} outside [0,1]")));
            }
            *bit = rng.uniform() < p;
        }
        Ok(c)
    }

    pub fn count_ones(&self) -> usize {
        self.occupancy.iter().filter(|b| **b).count()
    }
}

/// Portable text dump: one site per line, coordinates then state.
pub fn dump_grid(config: &LatticeConfig) -> String {
    let torus = Torus { side: config.torus_side as i32, dim: config.dimension };
    let mut out = String::with_capacity(config.occupancy.len() * 8);
    for (idx, &bit) in config.occupancy.iter().enumerate() {
        let c = torus.coords(idx);
        for k in 0..config.dimension {
            out.push_str(&c[k].to_string());
            out.push(' ');
        }
        out.push(if bit { '1' } else { '0' });
        out.push('\n');
    }
    out
}

/// Counters from a forward run, for invariant auditing.
#[derive(Debug, Clone, Default)]
pub struct ForwardLog {
    pub events: u64,
    pub flips_to_one: u64,
    pub flips_to_zero: u64,
    pub exchanges: u64,
    pub voter_updates: u64,
    pub perturbations: u64,
    pub min_count: usize,
    pub max_count: usize,
    pub extinction_time: Option<f64>,
}

// ---------------------------------------------------------------------------
// Forward simulation
// ---------------------------------------------------------------------------

fn check_config(model: &ModelSpec, scaling: &ScalingParams, init: &LatticeConfig) -> Result<()> {
    scaling.validate()?;
    if init.model != *model {
        return Err(Error::ConfigError(format!(
            "initial configuration was built for {:?}, simulation requested {:?}",
            init.model, model
        )));
    }
    if init.torus_side != scaling.torus_side || init.dimension != scaling.dimension {
        return Err(Error::ConfigError(format!(
            "configuration geometry {}^{} does not match scaling {}^{}",
            init.torus_side, init.dimension, scaling.torus_side, scaling.dimension
        )));
    }
    if init.occupancy.len() != scaling.n_sites() {
        return Err(Error::ConfigError("occupancy length does not match torus".into()));
    }
    Ok(())
}

/// Run the forward particle system to `init.time + horizon`.
pub fn run_forward(
    model: &ModelSpec,
    scaling: &ScalingParams,
    init: &LatticeConfig,
    horizon: f64,
    seed: u64,
) -> Result<LatticeConfig> {
    let (config, _log, _snaps) = forward_core(model, scaling, init, horizon, seed, &[])?;
    Ok(config)
}

/// As `run_forward`, also returning event counters.
pub fn run_forward_logged(
    model: &ModelSpec,
    scaling: &ScalingParams,
    init: &LatticeConfig,
    horizon: f64,
    seed: u64,
) -> Result<(LatticeConfig, ForwardLog)> {
    let (config, log, _snaps) = forward_core(model, scaling, init, horizon, seed, &[])?;
    Ok((config, log))
}

/// As `run_forward`, also emitting configuration snapshots at the given
/// elapsed times (each clamped to the horizon).
pub fn run_forward_snapshots(
    model: &ModelSpec,
    scaling: &ScalingParams,
    init: &LatticeConfig,
    horizon: f64,
    seed: u64,
    sample_times: &[f64],
) -> Result<(LatticeConfig, Vec<LatticeConfig>)> {
    let (config, _log, snaps) = forward_core(model, scaling, init, horizon, seed, sample_times)?;
    Ok((config, snaps))
}

fn forward_core(
    model: &ModelSpec,
    scaling: &ScalingParams,
    init: &LatticeConfig,
    horizon: f64,
    seed: u64,
    sample_times: &[f64],
) -> Result<(LatticeConfig, ForwardLog, Vec<LatticeConfig>)> {
    check_config(model, scaling, init)?;
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidSpec(format!("horizon must be >= 0, got {horizon}")));
    }
    let fam = family_of(model)?;
    if matches!(fam, Family::Nlv { .. }) {
        scaling.check_voter_box()?;
    }
    let torus = scaling.torus();
    let n = torus.n_sites();
    let two_d = 2 * scaling.dimension;
    let l = scaling.voter_range as i64;

    // Per-category total rates; all clocks are state-independent.
    let (site_rate, exch_rate) = match fam {
        Family::Stirring { .. } => {
            (scaling.event_rate, scaling.stir_rate * (n * scaling.dimension) as f64)
        }
        Family::Nlv { .. } => (2.0 * scaling.stir_rate + scaling.event_rate, 0.0),
        Family::Lv { theta, .. } => (2.0 * scaling.stir_rate + theta * scaling.event_rate, 0.0),
    };
    let total_rate = site_rate * n as f64 + exch_rate;
    if total_rate * horizon > scaling.event_budget as f64 {
        return Err(Error::RateOverflow(format!(
            "expected {:.3e} events exceeds budget {:.3e}",
            total_rate * horizon,
            scaling.event_budget
        )));
    }

    let mut marks: Vec<f64> = sample_times.iter().map(|t| t.clamp(0.0, horizon)).collect();
    marks.sort_by(|a, b| a.partial_cmp(b).expect("finite sample times"));
    let mut next_mark = 0usize;
    let mut snaps = Vec::with_capacity(marks.len());

    let mut rng = SubRng::new(derive_key64(seed, &[Label::Name("lattice-forward")]));
    let mut occ = init.occupancy.clone();
    let mut count = occ.iter().filter(|b| **b).count();
    let mut log = ForwardLog { min_count: count, max_count: count, ..Default::default() };

    let w_birth = match fam {
        Family::Stirring { beta } => beta / (1.0 + beta),
        _ => 0.0,
    };
    let voter_share = match fam {
        Family::Stirring { .. } => 0.0,
        _ => 2.0 * scaling.stir_rate / site_rate,
    };

    let emit = |occ: &Vec<bool>, t: f64, snaps: &mut Vec<LatticeConfig>| {
        snaps.push(LatticeConfig {
            occupancy: occ.clone(),
            torus_side: scaling.torus_side,
            dimension: scaling.dimension,
            model: *model,
            time: init.time + t,
        });
    };

    let mut t = 0.0f64;
    if total_rate > 0.0 {
        loop {
            let dt = rng.exp(total_rate);
            let t_next = t + dt;
            while next_mark < marks.len() && marks[next_mark] <= t_next.min(horizon) {
                emit(&occ, marks[next_mark], &mut snaps);
                next_mark += 1;
            }
            if t_next >= horizon {
                break;
            }
            t = t_next;
            log.events += 1;
            if log.events > scaling.event_budget {
                return Err(Error::RateOverflow(format!(
                    "event budget {} exhausted at t = {t}",
                    scaling.event_budget
                )));
            }

            let is_exchange =
                exch_rate > 0.0 && rng.uniform() * total_rate >= site_rate * n as f64;
            if is_exchange {
                // Uniform unordered nearest-neighbor pair: site plus axis.
                let site = rng.below(n as u64) as usize;
                let axis = rng.below(scaling.dimension as u64) as usize;
                let nbr = torus.neighbor_index(site, 2 * axis);
                occ.swap(site, nbr);
                log.exchanges += 1;
                continue;
            }

            let x = rng.below(n as u64) as usize;
            match fam {
                Family::Stirring { .. } => {
                    if rng.uniform() < w_birth {
                        if !occ[x] {
                            let pair = &SEXUAL_PAIRS[rng.below(4) as usize];
                            let c = torus.coords(x);
                            let both = pair.iter().all(|off| {
                                let site = torus.wrap_site([
                                    c[0] as i64 + off[0],
                                    c[1] as i64 + off[1],
                                    0,
                                ]);
                                occ[torus.index(site)]
                            });
                            if both {
                                occ[x] = true;
                                count += 1;
                                log.flips_to_one += 1;
                            }
                        }
                    } else if occ[x] {
                        occ[x] = false;
                        count -= 1;
                        log.flips_to_zero += 1;
                    }
                }
                Family::Nlv { a } => {
                    if rng.uniform() < voter_share {
                        let dir = rng.below(two_d as u64) as usize;
                        let copied = occ[torus.neighbor_index(x, dir)];
                        apply_state(&mut occ, x, copied, &mut count, &mut log);
                        log.voter_updates += 1;
                    } else {
                        let c = torus.coords(x);
                        let mut offs = [[0i64; 3]; 4];
                        sample_box_offsets(&mut rng, &mut offs, l, scaling.dimension);
                        let mut k = occ[x] as usize;
                        for off in &offs {
                            let site = torus.wrap_site([
                                c[0] as i64 + off[0],
                                c[1] as i64 + off[1],
                                c[2] as i64 + off[2],
                            ]);
                            k += occ[torus.index(site)] as usize;
                        }
                        let new = rng.uniform() < a[k];
                        apply_state(&mut occ, x, new, &mut count, &mut log);
                        log.perturbations += 1;
                    }
                }
                Family::Lv { .. } => {
                    if rng.uniform() < voter_share {
                        let dir = rng.below(two_d as u64) as usize;
                        let copied = occ[torus.neighbor_index(x, dir)];
                        apply_state(&mut occ, x, copied, &mut count, &mut log);
                        log.voter_updates += 1;
                    } else {
                        // Two neighbors with replacement; flip iff both
                        // carry the opposite state.
                        let y1 = torus.neighbor_index(x, rng.below(two_d as u64) as usize);
                        let y2 = torus.neighbor_index(x, rng.below(two_d as u64) as usize);
                        if occ[y1] != occ[x] && occ[y2] != occ[x] {
                            let flipped = !occ[x];
                            apply_state(&mut occ, x, flipped, &mut count, &mut log);
                        }
                        log.perturbations += 1;
                    }
                }
            }
            log.min_count = log.min_count.min(count);
            log.max_count = log.max_count.max(count);
            if count == 0 && log.extinction_time.is_none() {
                log.extinction_time = Some(t);
            }
        }
    }
    while next_mark < marks.len() {
        emit(&occ, marks[next_mark], &mut snaps);
        next_mark += 1;
    }

    let config = LatticeConfig {
        occupancy: occ,
        torus_side: scaling.torus_side,
        dimension: scaling.dimension,
        model: *model,
        time: init.time + horizon,
    };
    Ok((config, log, snaps))
}

fn apply_state(occ: &mut [bool], x: usize, new: bool, count: &mut usize, log: &mut ForwardLog) {
    if occ[x] != new {
        occ[x] = new;
        if new {
            *count += 1;
            log.flips_to_one += 1;
        } else {
            *count -= 1;
            log.flips_to_zero += 1;
        }
    }
}

fn sample_box_offsets(rng: &mut SubRng, offs: &mut [[i64; 3]; 4], l: i64, dim: usize) {
    let width = 2 * l + 1;
    let mut i = 0;
    while i < 4 {
        let mut off = [0i64; 3];
        for c in off.iter_mut().take(dim) {
            *c = rng.below(width as u64) as i64 - l;
        }
        if off == [0, 0, 0] || offs[..i].contains(&off) {
            continue;
        }
        offs[i] = off;
        i += 1;
    }
}

/// Exchange-only dynamics (reactions disabled); the particle count is
/// conserved exactly, which the returned log witnesses.
pub fn run_stirring_only(
    scaling: &ScalingParams,
    init: &LatticeConfig,
    horizon: f64,
    seed: u64,
) -> Result<(LatticeConfig, ForwardLog)> {
    scaling.validate()?;
    if init.torus_side != scaling.torus_side || init.dimension != scaling.dimension {
        return Err(Error::ConfigError("configuration geometry mismatch".into()));
    }
    let torus = scaling.torus();
    let n = torus.n_sites();
    let total_rate = scaling.stir_rate * (n * scaling.dimension) as f64;
    if total_rate * horizon > scaling.event_budget as f64 {
        return Err(Error::RateOverflow("stirring event budget exceeded".into()));
    }
    let mut rng = SubRng::new(derive_key64(seed, &[Label::Name("lattice-stir")]));
    let mut occ = init.occupancy.clone();
    let count = occ.iter().filter(|b| **b).count();
    let mut log = ForwardLog { min_count: count, max_count: count, ..Default::default() };
    let mut t = 0.0;
    loop {
        t += rng.exp(total_rate);
        if t >= horizon {
            break;
        }
        let site = rng.below(n as u64) as usize;
        let axis = rng.below(scaling.dimension as u64) as usize;
        let nbr = torus.neighbor_index(site, 2 * axis);
        occ.swap(site, nbr);
        log.exchanges += 1;
        log.events += 1;
        let c = occ.iter().filter(|b| **b).count();
        log.min_count = log.min_count.min(c);
        log.max_count = log.max_count.max(c);
    }
    let config = LatticeConfig {
        occupancy: occ,
        torus_side: scaling.torus_side,
        dimension: scaling.dimension,
        model: init.model,
        time: init.time + horizon,
    };
    Ok((config, log))
}

// ---------------------------------------------------------------------------
// Dual realizations
// ---------------------------------------------------------------------------

/// One vertex of a realized dual genealogy. `born_s` is the dual clock
/// (0 at the probed site, `horizon` at the initial-condition end).
#[derive(Debug, Clone)]
pub struct DualNode {
    pub parent: Option<u32>,
    pub born_s: f64,
    pub kind: DualNodeKind,
}

#[derive(Debug, Clone)]
pub enum DualNodeKind {
    /// Still evolving (only during simulation; never in a returned value).
    Pending,
    /// Lineage alive at the horizon; `site` is its torus position.
    Leaf { site: [i32; 3] },
    /// Stirring-family branch with a birth mark: continuing lineage plus
    /// the two children.
    SexualBranch { s: f64, children: [u32; 3] },
    /// Stirring-family death mark: the vote below is 0 regardless.
    SexualDeath { s: f64 },
    /// Voter-family branch; one child per coalesced family cell, with the
    /// cell sizes of the realized partition.
    VoterBranch { s: f64, partition: Partition, cells: Vec<(u8, u32)> },
    /// Lotka–Volterra majority branch.
    LvBranch { s: f64, children: [u32; 3] },
}

/// A coupled realization of the dual X (censored/coalescing) and the
/// comparison process X̂ (tree-structured), run on the torus.
#[derive(Debug, Clone)]
pub struct DualRealization {
    pub model: ModelSpec,
    pub horizon: f64,
    pub nodes: Vec<DualNode>,
    pub root: u32,
    /// All branch-clock arrivals realized in X̂ (for the stirring family
    /// this includes death-marked events).
    pub branch_events: u64,
    pub birth_marks: u64,
    pub death_marks: u64,
    pub branch_times: Vec<f64>,
    /// Stirring family: birth attempts onto occupied sites (censored in X).
    pub collision_times: Vec<f64>,
    /// First time X and X̂ differ (first collision for the stirring
    /// family; first out-of-family coalescence or suppressed-window branch
    /// for the voter family).
    pub divergence_s: Option<f64>,
    /// (s, X count, X̂ count) recorded at every branch event.
    pub count_checks: Vec<(f64, usize, usize)>,
    /// Integrated time X particles spend adjacent to another X particle.
    pub crowded_time: f64,
    /// Integrated X particle count over the run.
    pub particle_time: f64,
    /// Some lineage displaced further than half the torus side.
    pub wrapped: bool,
    pub final_count: usize,
}

#[derive(Debug, Clone)]
struct Part {
    site: [i32; 3],
    abs: [i64; 3],
    node: u32,
    ghost: bool,
    family_slot: Option<u8>,
    alive_pos: u32,
}

struct Arena {
    parts: Vec<Part>,
    alive: Vec<u32>,
    wrapped: bool,
    side: i64,
}

impl Arena {
    fn new(side: i64) -> Self {
        Arena { parts: Vec::new(), alive: Vec::new(), wrapped: false, side }
    }

    fn spawn(&mut self, site: [i32; 3], abs: [i64; 3], node: u32, ghost: bool) -> Result<u32> {
        let id = self.parts.len() as u32;
        if self.parts.len() >= DUAL_PARTICLE_CAP {
            return Err(Error::ExplosionGuard(format!(
                "dual exceeded {DUAL_PARTICLE_CAP} particles"
            )));
        }
        self.parts.push(Part {
            site,
            abs,
            node,
            ghost,
            family_slot: None,
            alive_pos: self.alive.len() as u32,
        });
        self.alive.push(id);
        self.check_wrap(abs);
        Ok(id)
    }

    fn retire(&mut self, id: u32) {
        let pos = self.parts[id as usize].alive_pos as usize;
        let last = self.alive.pop().expect("retiring from empty arena");
        if last != id {
            self.alive[pos] = last;
            self.parts[last as usize].alive_pos = pos as u32;
        }
    }

    fn displace(&mut self, id: u32, axis: usize, sign: i64, torus: &Torus) {
        let p = &mut self.parts[id as usize];
        p.abs[axis] += sign;
        p.site[axis] = torus.wrap(p.site[axis] as i64 + sign);
        let abs = p.abs;
        self.check_wrap(abs);
    }

    fn check_wrap(&mut self, abs: [i64; 3]) {
        if abs.iter().any(|v| 2 * v.abs() >= self.side) {
            self.wrapped = true;
        }
    }
}

/// Simulate the coupled dual pair started from one particle at
/// `start_site`, for `horizon` units of dual time.
pub fn run_dual(
    model: &ModelSpec,
    scaling: &ScalingParams,
    start_site: usize,
    horizon: f64,
    seed: u64,
) -> Result<DualRealization> {
    scaling.validate()?;
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidSpec(format!("horizon must be >= 0, got {horizon}")));
    }
    if start_site >= scaling.n_sites() {
        return Err(Error::InvalidSpec(format!(
            "start site {start_site} outside torus of {} sites",
            scaling.n_sites()
        )));
    }
    let fam = family_of(model)?;
    match fam {
        Family::Stirring { beta } => {
            if scaling.dimension != 2 {
                return Err(Error::InvalidSpec(
                    "the stirring-family dual is defined in dimension 2".into(),
                ));
            }
            dual_sexual(model, scaling, start_site, horizon, seed, beta)
        }
        Family::Nlv { .. } => dual_voter(model, scaling, start_site, horizon, seed),
        Family::Lv { theta, p3 } => dual_lv(model, scaling, start_site, horizon, seed, theta, p3),
    }
}

fn dual_sexual(
    model: &ModelSpec,
    scaling: &ScalingParams,
    start_site: usize,
    horizon: f64,
    seed: u64,
    beta: f64,
) -> Result<DualRealization> {
    let torus = scaling.torus();
    let two_d = 2 * scaling.dimension;
    let walk_rate = two_d as f64 * scaling.stir_rate;
    let branch_rate = scaling.event_rate;
    let per_particle = walk_rate + branch_rate;
    let w_birth = beta / (1.0 + beta);

    let mut rng = SubRng::new(derive_key64(seed, &[Label::Name("lattice-dual")]));
    let mut arena = Arena::new(torus.side as i64);
    let mut nodes: Vec<DualNode> =
        vec![DualNode { parent: None, born_s: 0.0, kind: DualNodeKind::Pending }];
    // X occupancy and per-particle adjacent-occupied counts for crowding.
    let mut occ: HashMap<[i32; 3], u32> = HashMap::new();
    let mut adj: Vec<u32> = Vec::new();
    let mut crowd = 0usize;
    let mut x_count = 0usize;

    let mut real = DualRealization {
        model: *model,
        horizon,
        nodes: Vec::new(),
        root: 0,
        branch_events: 0,
        birth_marks: 0,
        death_marks: 0,
        branch_times: Vec::new(),
        collision_times: Vec::new(),
        divergence_s: None,
        count_checks: Vec::new(),
        crowded_time: 0.0,
        particle_time: 0.0,
        wrapped: false,
        final_count: 0,
    };

    // Adjacency helpers over the X occupancy map.
    macro_rules! insert_x {
        ($id:expr, $site:expr) => {{
            let id = $id;
            let site = $site;
            while adj.len() <= id as usize {
                adj.push(0);
            }
            let mut mine = 0u32;
            for dir in 0..two_d {
                if let Some(&q) = occ.get(&torus.step(site, dir)) {
                    adj[q as usize] += 1;
                    if adj[q as usize] == 1 {
                        crowd += 1;
                    }
                    mine += 1;
                }
            }
            occ.insert(site, id);
            adj[id as usize] = mine;
            if mine > 0 {
                crowd += 1;
            }
            x_count += 1;
        }};
    }
    macro_rules! remove_x {
        ($id:expr, $site:expr) => {{
            let id = $id;
            let site = $site;
            occ.remove(&site);
            for dir in 0..two_d {
                if let Some(&q) = occ.get(&torus.step(site, dir)) {
                    adj[q as usize] -= 1;
                    if adj[q as usize] == 0 {
                        crowd -= 1;
                    }
                }
            }
            if adj[id as usize] > 0 {
                crowd -= 1;
            }
            adj[id as usize] = 0;
            x_count -= 1;
        }};
    }

    let start = torus.coords(start_site);
    let root_part = arena.spawn(start, [0; 3], 0, false)?;
    insert_x!(root_part, start);

    let mut s = 0.0f64;
    let mut events = 0u64;
    loop {
        let n_alive = arena.alive.len();
        let total = n_alive as f64 * per_particle;
        if total <= 0.0 {
            break;
        }
        let dt = rng.exp(total);
        let s_next = s + dt;
        let step_end = s_next.min(horizon);
        real.crowded_time += crowd as f64 * (step_end - s);
        real.particle_time += x_count as f64 * (step_end - s);
        if s_next >= horizon {
            break;
        }
        s = s_next;
        events += 1;
        if events > scaling.event_budget {
            return Err(Error::RateOverflow("dual event budget exhausted".into()));
        }

        let id = arena.alive[rng.below(n_alive as u64) as usize];
        if rng.uniform() * per_particle < walk_rate {
            let dir = rng.below(two_d as u64) as usize;
            let ([axis], sign) = dir_offset(dir);
            if arena.parts[id as usize].ghost {
                arena.displace(id, axis, sign, &torus);
                continue;
            }
            let from = arena.parts[id as usize].site;
            let target = torus.step(from, dir);
            if let Some(&other) = occ.get(&target) {
                // Shared exchange edge, proposed from both ends: thin by
                // half so the pair swaps at the per-edge rate.
                if rng.uniform() < 0.5 {
                    arena.displace(id, axis, sign, &torus);
                    arena.displace(other, axis, -sign, &torus);
                    occ.insert(arena.parts[id as usize].site, id);
                    occ.insert(arena.parts[other as usize].site, other);
                    adj.swap(id as usize, other as usize);
                }
            } else {
                remove_x!(id, from);
                arena.displace(id, axis, sign, &torus);
                insert_x!(id, arena.parts[id as usize].site);
            }
        } else {
            real.branch_events += 1;
            real.branch_times.push(s);
            let ghost = arena.parts[id as usize].ghost;
            let parent_node = arena.parts[id as usize].node;
            if rng.uniform() < w_birth {
                real.birth_marks += 1;
                let pair = &SEXUAL_PAIRS[rng.below(4) as usize];
                let n0 = nodes.len() as u32;
                nodes.push(DualNode {
                    parent: Some(parent_node),
                    born_s: s,
                    kind: DualNodeKind::Pending,
                });
                let mut children = [n0, 0, 0];
                for (ci, off) in pair.iter().enumerate() {
                    let node_id = nodes.len() as u32;
                    nodes.push(DualNode {
                        parent: Some(parent_node),
                        born_s: s,
                        kind: DualNodeKind::Pending,
                    });
                    children[ci + 1] = node_id;
                    let pabs = arena.parts[id as usize].abs;
                    let abs = [pabs[0] + off[0], pabs[1] + off[1], pabs[2]];
                    let site = torus.wrap_site(abs);
                    let collides = !ghost && occ.contains_key(&site);
                    if collides {
                        real.collision_times.push(s);
                        if real.divergence_s.is_none() {
                            real.divergence_s = Some(s);
                        }
                    }
                    let child_ghost = ghost || collides;
                    let child = arena.spawn(site, abs, node_id, child_ghost)?;
                    if !child_ghost {
                        insert_x!(child, site);
                    }
                }
                nodes[parent_node as usize].kind = DualNodeKind::SexualBranch { s, children };
                arena.parts[id as usize].node = n0;
            } else {
                real.death_marks += 1;
                nodes[parent_node as usize].kind = DualNodeKind::SexualDeath { s };
                if !ghost {
                    let site = arena.parts[id as usize].site;
                    remove_x!(id, site);
                }
                arena.retire(id);
            }
            real.count_checks.push((s, x_count, arena.alive.len()));
        }
    }

    for &id in &arena.alive {
        let p = &arena.parts[id as usize];
        nodes[p.node as usize].kind = DualNodeKind::Leaf { site: p.site };
    }
    real.final_count = arena.alive.len();
    real.wrapped = arena.wrapped;
    real.nodes = nodes;
    Ok(real)
}

fn find5(uf: &mut [u8; 5], mut i: u8) -> u8 {
    while uf[i as usize] != i {
        let p = uf[i as usize];
        uf[i as usize] = uf[p as usize];
        i = p;
    }
    i
}

struct VoterWindow {
    end_s: f64,
    branch_s: f64,
    branch_node: u32,
    uf: [u8; 5],
    members: [Option<u32>; 5],
}

fn dual_voter(
    model: &ModelSpec,
    scaling: &ScalingParams,
    start_site: usize,
    horizon: f64,
    seed: u64,
) -> Result<DualRealization> {
    scaling.check_voter_box()?;
    let torus = scaling.torus();
    let two_d = 2 * scaling.dimension;
    let walk_rate = 2.0 * scaling.stir_rate;
    let branch_rate = scaling.event_rate;
    let per_particle = walk_rate + branch_rate;
    let window_len = scaling.eta.sqrt();
    let l = scaling.voter_range as i64;

    let mut rng = SubRng::new(derive_key64(seed, &[Label::Name("lattice-dual")]));
    let mut arena = Arena::new(torus.side as i64);
    let mut nodes: Vec<DualNode> =
        vec![DualNode { parent: None, born_s: 0.0, kind: DualNodeKind::Pending }];
    let mut occ: HashMap<[i32; 3], Vec<u32>> = HashMap::new();

    let mut real = DualRealization {
        model: *model,
        horizon,
        nodes: Vec::new(),
        root: 0,
        branch_events: 0,
        birth_marks: 0,
        death_marks: 0,
        branch_times: Vec::new(),
        collision_times: Vec::new(),
        divergence_s: None,
        count_checks: Vec::new(),
        crowded_time: 0.0,
        particle_time: 0.0,
        wrapped: false,
        final_count: 0,
    };

    let start = torus.coords(start_site);
    let root_part = arena.spawn(start, [0; 3], 0, false)?;
    occ.entry(start).or_default().push(root_part);

    let mut window: Option<VoterWindow> = None;
    let mut frozen_x: Option<usize> = None;
    let mut s = 0.0f64;
    let mut events = 0u64;

    macro_rules! close_window {
        ($w:expr, $nodes:expr, $arena:expr) => {{
            let mut w: VoterWindow = $w;
            let mut labels = [0u8; 5];
            for slot in 0..5u8 {
                labels[slot as usize] = find5(&mut w.uf, slot);
            }
            let mut cells: Vec<(u8, u32)> = Vec::new();
            let mut seen: Vec<(u8, usize)> = Vec::new();
            for slot in 0..5u8 {
                let root = labels[slot as usize];
                match seen.iter().position(|(r, _)| *r == root) {
                    Some(pos) => cells[seen[pos].1].0 += 1,
                    None => {
                        seen.push((root, cells.len()));
                        // The surviving particle of the cell continues.
                        let survivor = (0..5u8)
                            .filter(|i| labels[*i as usize] == root)
                            .find_map(|i| w.members[i as usize])
                            .expect("each cell retains one particle");
                        let node_id = $nodes.len() as u32;
                        $nodes.push(DualNode {
                            parent: Some(w.branch_node),
                            born_s: w.branch_s,
                            kind: DualNodeKind::Pending,
                        });
                        $arena.parts[survivor as usize].node = node_id;
                        $arena.parts[survivor as usize].family_slot = None;
                        cells.push((1, node_id));
                    }
                }
            }
            $nodes[w.branch_node as usize].kind = DualNodeKind::VoterBranch {
                s: w.branch_s,
                partition: Partition::from_assignment(labels),
                cells,
            };
        }};
    }

    loop {
        let n_alive = arena.alive.len();
        let total = n_alive as f64 * per_particle;
        if total <= 0.0 {
            break;
        }
        let dt = rng.exp(total);
        let mut s_next = s + dt;
        if let Some(w) = &window {
            if s_next >= w.end_s && w.end_s <= horizon {
                s = w.end_s;
                let w = window.take().expect("window present");
                close_window!(w, nodes, arena);
                continue;
            }
        }
        if s_next >= horizon {
            s_next = horizon;
            real.particle_time += frozen_x.unwrap_or(n_alive) as f64 * (s_next - s);
            break;
        }
        real.particle_time += frozen_x.unwrap_or(n_alive) as f64 * (s_next - s);
        s = s_next;
        events += 1;
        if events > scaling.event_budget {
            return Err(Error::RateOverflow("dual event budget exhausted".into()));
        }

        let id = arena.alive[rng.below(n_alive as u64) as usize];
        if rng.uniform() * per_particle < walk_rate {
            let dir = rng.below(two_d as u64) as usize;
            let ([axis], sign) = dir_offset(dir);
            let from = arena.parts[id as usize].site;
            let list = occ.get_mut(&from).expect("occupancy tracks particles");
            let pos = list.iter().position(|p| *p == id).expect("particle on its site");
            list.swap_remove(pos);
            if list.is_empty() {
                occ.remove(&from);
            }
            arena.displace(id, axis, sign, &torus);
            let target = arena.parts[id as usize].site;
            let mut merged = false;
            if let Some(others) = occ.get(&target) {
                let my_slot = arena.parts[id as usize].family_slot;
                let family_hit = window.is_some().then(|| {
                    others.iter().copied().find(|o| {
                        my_slot.is_some() && arena.parts[*o as usize].family_slot.is_some()
                    })
                });
                if let Some(Some(other)) = family_hit {
                    // In-window family coalescence: the jumper merges into
                    // the occupant; recorded in the realized partition.
                    let w = window.as_mut().expect("window active");
                    let a = my_slot.expect("jumper in family");
                    let b = arena.parts[other as usize].family_slot.expect("occupant in family");
                    let (ra, rb) = (find5(&mut w.uf, a), find5(&mut w.uf, b));
                    if ra != rb {
                        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                        w.uf[hi as usize] = lo;
                    }
                    w.members[a as usize] = None;
                    arena.retire(id);
                    merged = true;
                } else if real.divergence_s.is_none() {
                    // X would coalesce here; X̂ does not: first divergence.
                    real.divergence_s = Some(s);
                    frozen_x = Some(arena.alive.len());
                }
            }
            if !merged {
                occ.entry(target).or_default().push(id);
            }
        } else if window.is_some() {
            // Births are suppressed during the window; in X the branch
            // clock still runs, so a pre-divergence arrival here is the
            // first branch-time mismatch between X and X̂.
            if real.divergence_s.is_none() {
                real.divergence_s = Some(s);
                frozen_x = Some(arena.alive.len());
            }
        } else {
            real.branch_events += 1;
            real.birth_marks += 1;
            real.branch_times.push(s);
            let branch_node = arena.parts[id as usize].node;
            let mut members = [None; 5];
            members[0] = Some(id);
            arena.parts[id as usize].family_slot = Some(0);
            let mut offs = [[0i64; 3]; 4];
            sample_box_offsets(&mut rng, &mut offs, l, scaling.dimension);
            for (ci, off) in offs.iter().enumerate() {
                let pabs = arena.parts[id as usize].abs;
                let abs = [pabs[0] + off[0], pabs[1] + off[1], pabs[2] + off[2]];
                let site = torus.wrap_site(abs);
                if occ.contains_key(&site) && real.divergence_s.is_none() {
                    // The newborn lands on an occupied site: X coalesces
                    // at birth, X̂ keeps a separate particle.
                    real.divergence_s = Some(s);
                    frozen_x = Some(arena.alive.len());
                }
                let child = arena.spawn(site, abs, branch_node, false)?;
                arena.parts[child as usize].family_slot = Some(ci as u8 + 1);
                members[ci + 1] = Some(child);
                occ.entry(site).or_default().push(child);
            }
            window = Some(VoterWindow {
                end_s: s + window_len,
                branch_s: s,
                branch_node,
                uf: [0, 1, 2, 3, 4],
                members,
            });
            real.count_checks.push((s, frozen_x.unwrap_or(arena.alive.len()), arena.alive.len()));
        }
    }
    if let Some(w) = window.take() {
        close_window!(w, nodes, arena);
    }

    for &id in &arena.alive {
        let p = &arena.parts[id as usize];
        nodes[p.node as usize].kind = DualNodeKind::Leaf { site: p.site };
    }
    real.final_count = arena.alive.len();
    real.wrapped = arena.wrapped;
    real.nodes = nodes;
    Ok(real)
}

fn dual_lv(
    model: &ModelSpec,
    scaling: &ScalingParams,
    start_site: usize,
    horizon: f64,
    seed: u64,
    theta: f64,
    p3: f64,
) -> Result<DualRealization> {
    let torus = scaling.torus();
    let two_d = 2 * scaling.dimension;
    let walk_rate = 2.0 * scaling.stir_rate;
    // Effective ternary branching: only perturbation events whose sampled
    // neighbors would avoid coalescence contribute, thinning by p3.
    let branch_rate = theta * p3 * scaling.event_rate;
    let per_particle = walk_rate + branch_rate;

    let mut rng = SubRng::new(derive_key64(seed, &[Label::Name("lattice-dual")]));
    let mut arena = Arena::new(torus.side as i64);
    let mut nodes: Vec<DualNode> =
        vec![DualNode { parent: None, born_s: 0.0, kind: DualNodeKind::Pending }];

    let mut real = DualRealization {
        model: *model,
        horizon,
        nodes: Vec::new(),
        root: 0,
        branch_events: 0,
        birth_marks: 0,
        death_marks: 0,
        branch_times: Vec::new(),
        collision_times: Vec::new(),
        divergence_s: None,
        count_checks: Vec::new(),
        crowded_time: 0.0,
        particle_time: 0.0,
        wrapped: false,
        final_count: 0,
    };

    let start = torus.coords(start_site);
    arena.spawn(start, [0; 3], 0, false)?;

    let mut s = 0.0f64;
    let mut events = 0u64;
    loop {
        let n_alive = arena.alive.len();
        let total = n_alive as f64 * per_particle;
        if total <= 0.0 {
            break;
        }
        let dt = rng.exp(total);
        let s_next = s + dt;
        real.particle_time += n_alive as f64 * (s_next.min(horizon) - s);
        if s_next >= horizon {
            break;
        }
        s = s_next;
        events += 1;
        if events > scaling.event_budget {
            return Err(Error::RateOverflow("dual event budget exhausted".into()));
        }

        let id = arena.alive[rng.below(n_alive as u64) as usize];
        if rng.uniform() * per_particle < walk_rate {
            let dir = rng.below(two_d as u64) as usize;
            let ([axis], sign) = dir_offset(dir);
            arena.displace(id, axis, sign, &torus);
        } else {
            real.branch_events += 1;
            real.birth_marks += 1;
            real.branch_times.push(s);
            let parent_node = arena.parts[id as usize].node;
            let d1 = rng.below(two_d as u64) as usize;
            let mut d2 = rng.below(two_d as u64 - 1) as usize;
            if d2 >= d1 {
                d2 += 1;
            }
            let n0 = nodes.len() as u32;
            nodes.push(DualNode {
                parent: Some(parent_node),
                born_s: s,
                kind: DualNodeKind::Pending,
            });
            let mut children = [n0, 0, 0];
            for (ci, dir) in [d1, d2].into_iter().enumerate() {
                let ([axis], sign) = dir_offset(dir);
                let node_id = nodes.len() as u32;
                nodes.push(DualNode {
                    parent: Some(parent_node),
                    born_s: s,
                    kind: DualNodeKind::Pending,
                });
                children[ci + 1] = node_id;
                let pabs = arena.parts[id as usize].abs;
                let mut abs = pabs;
                abs[axis] += sign;
                let site = torus.wrap_site(abs);
                arena.spawn(site, abs, node_id, false)?;
            }
            nodes[parent_node as usize].kind = DualNodeKind::LvBranch { s, children };
            arena.parts[id as usize].node = n0;
            real.count_checks.push((s, arena.alive.len(), arena.alive.len()));
        }
    }

    for &id in &arena.alive {
        let p = &arena.parts[id as usize];
        nodes[p.node as usize].kind = DualNodeKind::Leaf { site: p.site };
    }
    real.final_count = arena.alive.len();
    real.wrapped = arena.wrapped;
    real.nodes = nodes;
    Ok(real)
}

// ---------------------------------------------------------------------------
// Voting on realizations
// ---------------------------------------------------------------------------

/// Compute the root vote of a realized dual genealogy, drawing leaf states
/// Bernoulli(init_prob(torus site)) and the voter-family uniforms from
/// `rng`. Stirring-family marks were realized during simulation, so that
/// family's vote is deterministic given the leaf states.
pub fn realization_vote<F: Fn(usize) -> f64>(
    real: &DualRealization,
    scaling: &ScalingParams,
    init_prob: &F,
    rng: &mut SubRng,
) -> Result<bool> {
    let fam = family_of(&real.model)?;
    let torus = scaling.torus();
    let a = match fam {
        Family::Nlv { a } => Some(a),
        _ => None,
    };
    fn eval<F: Fn(usize) -> f64>(
        nodes: &[DualNode],
        idx: u32,
        torus: &Torus,
        init_prob: &F,
        a: &Option<[f64; 6]>,
        rng: &mut SubRng,
    ) -> Result<bool> {
        match &nodes[idx as usize].kind {
            DualNodeKind::Pending => Err(Error::InvalidSpec(
                "realization contains an unresolved vertex".into(),
            )),
            DualNodeKind::Leaf { site } => {
                let p = init_prob(torus.index(*site));
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::DomainError(format!(
                        "initial probability {p} outside [0,1]"
                    )));
                }
                Ok(rng.uniform() < p)
            }
            DualNodeKind::SexualDeath { .. } => Ok(false),
            DualNodeKind::SexualBranch { children, .. } => {
                let v0 = eval(nodes, children[0], torus, init_prob, a, rng)?;
                let v1 = eval(nodes, children[1], torus, init_prob, a, rng)?;
                let v2 = eval(nodes, children[2], torus, init_prob, a, rng)?;
                Ok(v0 || (v1 && v2))
            }
            DualNodeKind::LvBranch { children, .. } => {
                let v0 = eval(nodes, children[0], torus, init_prob, a, rng)?;
                let v1 = eval(nodes, children[1], torus, init_prob, a, rng)?;
                let v2 = eval(nodes, children[2], torus, init_prob, a, rng)?;
                Ok((v0 as u8 + v1 as u8 + v2 as u8) >= 2)
            }
            DualNodeKind::VoterBranch { cells, .. } => {
                let table = a.ok_or_else(|| {
                    Error::InvalidSpec("voter branch in a non-voter realization".into())
                })?;
                let mut count = 0usize;
                for (size, child) in cells {
                    if eval(nodes, *child, torus, init_prob, a, rng)? {
                        count += *size as usize;
                    }
                }
                Ok(rng.uniform() < table[count])
            }
        }
    }
    eval(&real.nodes, real.root, &torus, init_prob, &a, rng)
}

/// Monte Carlo estimate of P[ξ_t(start) = 1] via the comparison dual:
/// simulate X̂, assign leaves from the product initial law, vote.
pub fn dual_vote_estimate<F: Fn(usize) -> f64>(
    model: &ModelSpec,
    scaling: &ScalingParams,
    start_site: usize,
    horizon: f64,
    init_prob: &F,
    trials: u64,
    seed: u64,
) -> Result<EstimateWithCI> {
    if trials == 0 {
        return Err(Error::EmptyEstimate("dual vote estimate with zero trials".into()));
    }
    let mut hits = 0u64;
    for trial in 0..trials {
        let run_seed = derive_key64(seed, &[Label::Name("dual-run"), Label::Count(trial)]);
        let real = run_dual(model, scaling, start_site, horizon, run_seed)?;
        let mut vote_rng =
            SubRng::new(derive_key64(seed, &[Label::Name("dual-vote"), Label::Count(trial)]));
        if realization_vote(&real, scaling, init_prob, &mut vote_rng)? {
            hits += 1;
        }
    }
    EstimateWithCI::bernoulli(hits, trials)
}

// ---------------------------------------------------------------------------
// Collision statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CollisionRow {
    pub eta: f64,
    pub collision_prob: EstimateWithCI,
    /// Fraction of X particle-time spent adjacent to another X particle.
    pub crowded_fraction: f64,
    /// The crowding scale predicted for a pair of walks: η²·log(η⁻²) in
    /// d = 2, η² in d ≥ 3, η·√t in d = 1 (absolute constant unknown).
    pub theory_scale: f64,
    pub trials: u64,
}

/// Empirical collision probability and crowding across a sweep of
/// stirring-family scalings.
pub fn collision_stats(
    model: &ModelSpec,
    scalings: &[ScalingParams],
    start_site: usize,
    horizon: f64,
    trials: u64,
    seed: u64,
) -> Result<Vec<CollisionRow>> {
    if !matches!(family_of(model)?, Family::Stirring { .. }) {
        return Err(Error::InvalidSpec(
            "collision statistics are defined for the stirring family".into(),
        ));
    }
    let mut rows = Vec::with_capacity(scalings.len());
    for (si, scaling) in scalings.iter().enumerate() {
        let mut hits = 0u64;
        let mut crowded = 0.0;
        let mut particle = 0.0;
        for trial in 0..trials {
            let run_seed = derive_key64(
                seed,
                &[Label::Name("collisions"), Label::Count(si as u64), Label::Count(trial)],
            );
            let real = run_dual(model, scaling, start_site, horizon, run_seed)?;
            if !real.collision_times.is_empty() {
                hits += 1;
            }
            crowded += real.crowded_time;
            particle += real.particle_time;
        }
        let theory_scale = match scaling.dimension {
            1 => scaling.eta * horizon.sqrt(),
            2 => scaling.eta * scaling.eta * (1.0 / (scaling.eta * scaling.eta)).ln(),
            _ => scaling.eta * scaling.eta,
        };
        rows.push(CollisionRow {
            eta: scaling.eta,
            collision_prob: EstimateWithCI::bernoulli(hits, trials)?,
            crowded_fraction: if particle > 0.0 { crowded / particle } else { 0.0 },
            theory_scale,
            trials,
        });
    }
    Ok(rows)
}

/// Mean time two stirring walks started on adjacent sites spend adjacent
/// before `horizon`, from the exact two-particle exchange dynamics.
pub fn pair_crowded_time(
    scaling: &ScalingParams,
    horizon: f64,
    trials: u64,
    seed: u64,
) -> Result<EstimateWithCI> {
    scaling.validate()?;
    let torus = scaling.torus();
    let two_d = 2 * scaling.dimension;
    let per_particle = two_d as f64 * scaling.stir_rate;
    let mut samples = Vec::with_capacity(trials as usize);
    for trial in 0..trials {
        let mut rng =
            SubRng::new(derive_key64(seed, &[Label::Name("pair-crowd"), Label::Count(trial)]));
        // Unwrapped positions; the torus is irrelevant for a lone pair.
        let mut pos = [[0i64; 3], [0i64; 3]];
        pos[1][0] = 1;
        let mut s = 0.0f64;
        let mut crowded = 0.0f64;
        loop {
            let adjacent = {
                let d: i64 = (0..scaling.dimension)
                    .map(|k| (pos[0][k] - pos[1][k]).abs())
                    .sum();
                d == 1
            };
            let dt = rng.exp(2.0 * per_particle);
            let step = (horizon - s).min(dt);
            if adjacent {
                crowded += step;
            }
            s += dt;
            if s >= horizon {
                break;
            }
            let who = rng.below(2) as usize;
            let dir = rng.below(two_d as u64) as usize;
            let ([axis], sign) = dir_offset(dir);
            let mut target = pos[who];
            target[axis] += sign;
            if target == pos[1 - who] {
                // Shared edge proposed from either side: thin by half and
                // exchange both walkers.
                if rng.uniform() < 0.5 {
                    pos.swap(0, 1);
                }
            } else {
                pos[who] = target;
            }
        }
        let _ = torus;
        samples.push(crowded);
    }
    EstimateWithCI::from_samples(&samples)
}

/// Independent oracle for `pair_crowded_time`: simulate the difference
/// walk directly (reflection to the opposite site at the per-edge rate
/// when adjacent, single-coordinate steps at the combined rate otherwise,
/// the meeting move blocked) and integrate its time at distance one.
pub fn v_walk_crowded_time(
    scaling: &ScalingParams,
    horizon: f64,
    trials: u64,
    seed: u64,
) -> Result<EstimateWithCI> {
    scaling.validate()?;
    let two_d = 2 * scaling.dimension;
    let mut samples = Vec::with_capacity(trials as usize);
    for trial in 0..trials {
        let mut rng =
            SubRng::new(derive_key64(seed, &[Label::Name("v-walk"), Label::Count(trial)]));
        let mut v = [0i64; 3];
        v[0] = 1;
        let mut s = 0.0f64;
        let mut crowded = 0.0f64;
        loop {
            let dist: i64 = (0..scaling.dimension).map(|k| v[k].abs()).sum();
            let adjacent = dist == 1;
            // Adjacent: 2d-1 open step directions at rate stir each, plus
            // the swap to -v at stir. Separated: 2d steps at 2·stir each.
            let (step_rate, swap_rate) = if adjacent {
                (2.0 * scaling.stir_rate, scaling.stir_rate)
            } else {
                (2.0 * scaling.stir_rate, 0.0)
            };
            let open_steps = if adjacent { two_d as f64 - 1.0 } else { two_d as f64 };
            let total = step_rate * open_steps + swap_rate;
            let dt = rng.exp(total);
            let step = (horizon - s).min(dt);
            if adjacent {
                crowded += step;
            }
            s += dt;
            if s >= horizon {
                break;
            }
            if adjacent && rng.uniform() * total < swap_rate {
                for c in v.iter_mut() {
                    *c = -*c;
                }
            } else {
                // Uniform over the open step directions (excluding, when
                // adjacent, the blocked move onto the origin).
                loop {
                    let dir = rng.below(two_d as u64) as usize;
                    let ([axis], sign) = dir_offset(dir);
                    let mut target = v;
                    target[axis] += sign;
                    if adjacent && target == [0, 0, 0] {
                        continue;
                    }
                    v = target;
                    break;
                }
            }
        }
        samples.push(crowded);
    }
    EstimateWithCI::from_samples(&samples)
}

// ---------------------------------------------------------------------------
// Walk-vs-Brownian diagnostics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkKind {
    /// Single stirring lineage: uniform axis jumps at rate 2d·stir_rate.
    Stirring,
    /// Single voter lineage: uniform axis jumps at rate 2·stir_rate.
    Voter,
}

#[derive(Debug, Clone)]
pub struct WalkDiagnostic {
    pub kind: WalkKind,
    pub skipped: bool,
    pub trials: u64,
    pub horizon: f64,
    /// KS statistic of the standardized endpoint against the unit normal.
    pub ks_statistic: f64,
    pub ks_critical_1pct: f64,
    /// Empirical per-coordinate endpoint variance per unit time.
    pub variance_per_coord: f64,
    /// Model convention: 2·stir_rate·η² for stirring, 2·stir_rate·η²/d
    /// for the voter walk (1 and 1/d under the defaults).
    pub variance_theory: f64,
    /// Max gap between sorted walk endpoints and sorted Gaussian
    /// endpoints at matched variance (first coordinate, physical units).
    pub max_quantile_deviation: f64,
}

pub fn walk_vs_bm_diagnostic(
    scaling: &ScalingParams,
    kind: WalkKind,
    horizon: f64,
    trials: u64,
    seed: u64,
) -> Result<WalkDiagnostic> {
    scaling.validate()?;
    if trials == 0 {
        return Err(Error::EmptyEstimate("walk diagnostic with zero trials".into()));
    }
    let d = scaling.dimension;
    let jump_rate = match kind {
        WalkKind::Stirring => 2.0 * d as f64 * scaling.stir_rate,
        WalkKind::Voter => 2.0 * scaling.stir_rate,
    };
    let variance_theory = jump_rate * scaling.eta * scaling.eta / d as f64;
    if horizon == 0.0 {
        return Ok(WalkDiagnostic {
            kind,
            skipped: true,
            trials,
            horizon,
            ks_statistic: 0.0,
            ks_critical_1pct: ks_critical(trials as usize, 0.01)?,
            variance_per_coord: 0.0,
            variance_theory,
            max_quantile_deviation: 0.0,
        });
    }
    let sd = (variance_theory * horizon).sqrt();
    let mut first = Vec::with_capacity(trials as usize);
    let mut sumsq = 0.0f64;
    for trial in 0..trials {
        let mut rng =
            SubRng::new(derive_key64(seed, &[Label::Name("walk-diag"), Label::Count(trial)]));
        let mut pos = [0i64; 3];
        let mut s = 0.0f64;
        loop {
            s += rng.exp(jump_rate);
            if s >= horizon {
                break;
            }
            let dir = rng.below(2 * d as u64) as usize;
            let ([axis], sign) = dir_offset(dir);
            pos[axis] += sign;
        }
        first.push(pos[0] as f64 * scaling.eta);
        for c in pos.iter().take(d) {
            sumsq += (*c as f64 * scaling.eta).powi(2);
        }
    }
    let variance_per_coord = sumsq / (trials as f64 * d as f64) / horizon;
    let zs: Vec<f64> = first.iter().map(|x| x / sd).collect();
    let ks = ks_statistic(&zs, normal_cdf)?;
    let mut gauss_rng = SubRng::new(derive_key64(seed, &[Label::Name("walk-diag-gauss")]));
    let mut gauss: Vec<f64> = (0..trials).map(|_| gauss_rng.gaussian() * sd).collect();
    let mut walk_sorted = first.clone();
    walk_sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite endpoints"));
    gauss.sort_by(|a, b| a.partial_cmp(b).expect("finite endpoints"));
    let max_dev = walk_sorted
        .iter()
        .zip(&gauss)
        .map(|(w, g)| (w - g).abs())
        .fold(0.0f64, f64::max);
    Ok(WalkDiagnostic {
        kind,
        skipped: false,
        trials,
        horizon,
        ks_statistic: ks,
        ks_critical_1pct: ks_critical(trials as usize, 0.01)?,
        variance_per_coord,
        variance_theory,
        max_quantile_deviation: max_dev,
    })
}

// ---------------------------------------------------------------------------
// Duality check
// ---------------------------------------------------------------------------

/// A product initial law on the torus, tagged with its intended model.
#[derive(Debug, Clone)]
pub struct ProductMeasure {
    pub model: ModelSpec,
    pub torus_side: usize,
    pub dimension: usize,
    pub probs: Vec<f64>,
}

impl ProductMeasure {
    pub fn uniform(model: ModelSpec, torus_side: usize, dimension: usize, p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidSpec(format!("probability {p} outside [0,1]")));
        }
        let n = torus_side.pow(dimension as u32);
        Ok(ProductMeasure { model, torus_side, dimension, probs: vec![p; n] })
    }
}

#[derive(Debug, Clone)]
pub struct DualityRow {
    pub site: usize,
    pub forward: EstimateWithCI,
    pub dual: EstimateWithCI,
    pub z: f64,
}

#[derive(Debug, Clone)]
pub struct DualityReport {
    pub rows: Vec<DualityRow>,
    pub max_abs_z: f64,
    pub pass: bool,
}

/// Compare forward marginals P[ξ_t(x) = 1] against comparison-dual vote
/// estimates at each probe site; pass iff every |z| ≤ 4.
pub fn duality_check(
    model: &ModelSpec,
    scaling: &ScalingParams,
    init: &ProductMeasure,
    probe_sites: &[usize],
    horizon: f64,
    trials_forward: u64,
    trials_dual: u64,
    seed: u64,
) -> Result<DualityReport> {
    scaling.validate()?;
    if init.model != *model {
        return Err(Error::ConfigError(format!(
            "initial law was built for {:?} but the dynamics are {:?}",
            init.model, model
        )));
    }
    if init.torus_side != scaling.torus_side || init.dimension != scaling.dimension {
        return Err(Error::ConfigError("initial-law geometry mismatch".into()));
    }
    if probe_sites.is_empty() || trials_forward == 0 || trials_dual == 0 {
        return Err(Error::EmptyEstimate("duality check needs probes and trials".into()));
    }
    let n = scaling.n_sites();
    if init.probs.len() != n || probe_sites.iter().any(|s| *s >= n) {
        return Err(Error::ConfigError("probe sites or probabilities outside torus".into()));
    }

    let mut forward_hits = vec![0u64; probe_sites.len()];
    for trial in 0..trials_forward {
        let mut init_rng =
            SubRng::new(derive_key64(seed, &[Label::Name("duality-init"), Label::Count(trial)]));
        let config = LatticeConfig::product_bernoulli(
            *model,
            scaling.torus_side,
            scaling.dimension,
            &init.probs,
            &mut init_rng,
        )?;
        let run_seed = derive_key64(seed, &[Label::Name("duality-forward"), Label::Count(trial)]);
        let end = run_forward(model, scaling, &config, horizon, run_seed)?;
        for (k, &site) in probe_sites.iter().enumerate() {
            if end.occupancy[site] {
                forward_hits[k] += 1;
            }
        }
    }

    let mut rows = Vec::with_capacity(probe_sites.len());
    let mut max_abs_z = 0.0f64;
    for (k, &site) in probe_sites.iter().enumerate() {
        let forward = EstimateWithCI::bernoulli(forward_hits[k], trials_forward)?;
        let dual_seed = derive_key64(seed, &[Label::Name("duality-dual"), Label::Count(k as u64)]);
        let dual = dual_vote_estimate(
            model,
            scaling,
            site,
            horizon,
            &|idx: usize| init.probs[idx],
            trials_dual,
            dual_seed,
        )?;
        let z = forward.z_against(&dual);
        max_abs_z = max_abs_z.max(z.abs());
        rows.push(DualityRow { site, forward, dual, z });
    }
    Ok(DualityReport { rows, max_abs_z, pass: max_abs_z <= 4.0 })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
