//! Time-labelled dual trees and the voting algorithms evaluated on them.
//!
//! A dual genealogy is a regular tree: every internal vertex has exactly
//! `arity` children (death events are decided at vote time, not in the tree
//! shape). Each vertex carries the time-remaining at which it was born and
//! at which its event happens (branch time for internal vertices, 0 for
//! leaves). Votes are computed bottom-up, with all randomness drawn from
//! per-vertex substreams so that a vote is a pure function of
//! (tree, leaf states, rule, key).
//!
//! `exact_vote_probability` is the dynamic-programming oracle: given
//! independent Bernoulli leaf probabilities it pushes exact output
//! probabilities up the tree, which on regular trees reproduces iterated
//! g-maps and on arbitrary trees serves as the reference for Monte Carlo.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::rng::{child_key, SubRng};
use crate::stats::EstimateWithCI;

/// Default cap on materialized tree vertices.
pub const DEFAULT_VERTEX_CAP: usize = 10_000_000;

// ---------------------------------------------------------------------------
// Trees
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexKind {
    Branch,
    Leaf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub parent: Option<u32>,
    pub children: Vec<u32>,
    /// Time-remaining at which the vertex came into being (root: horizon).
    pub birth_time: f64,
    /// Time-remaining of the vertex's event: branch time for Branch
    /// vertices, exactly 0 for leaves.
    pub event_time: f64,
    pub kind: VertexKind,
    /// Spatial position at the event time; filled by the diffusion or
    /// lattice layers, absent on freshly sampled skeletons.
    pub position: Option<Vec<f64>>,
}

/// A regular time-labelled tree. Vertex 0 is the root; children always have
/// larger indices than their parent.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeLabelledTree {
    vertices: Vec<Vertex>,
    arity: usize,
    horizon: f64,
    leaf_ids: Vec<u32>,
}

impl TimeLabelledTree {
    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex(&self, id: u32) -> &Vertex {
        &self.vertices[id as usize]
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    /// Leaf vertex ids in increasing index order; `leaf_states` and
    /// `leaf_probs` arguments are indexed by position in this list.
    pub fn leaf_ids(&self) -> &[u32] {
        &self.leaf_ids
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_ids.len()
    }

    /// Set the position of one vertex (diffusion/lattice layers).
    pub fn set_position(&mut self, id: u32, position: Vec<f64>) {
        self.vertices[id as usize].position = Some(position);
    }

    /// Check the structural invariants: regular arity, child bookkeeping,
    /// strictly decreasing event times along lineages, leaves at 0.
    pub fn validate(&self) -> Result<()> {
        if self.vertices.is_empty() {
            return Err(Error::InvalidSpec("tree has no vertices".into()));
        }
        if self.arity < 2 {
            return Err(Error::InvalidSpec(format!("arity {} < 2", self.arity)));
        }
        let root = &self.vertices[0];
        if root.parent.is_some() {
            return Err(Error::InvalidSpec("vertex 0 must be the root".into()));
        }
        if root.birth_time != self.horizon {
            return Err(Error::InvalidSpec(format!(
                "root birth {} != horizon {}",
                root.birth_time, self.horizon
            )));
        }
        let mut leaf_seen = 0usize;
        for (id, v) in self.vertices.iter().enumerate() {
            if !v.birth_time.is_finite() || !v.event_time.is_finite() {
                return Err(Error::InvalidSpec(format!("non-finite time at vertex {id}")));
            }
            match v.kind {
                VertexKind::Branch => {
                    if v.children.len() != self.arity {
                        return Err(Error::InvalidSpec(format!(
                            "branch vertex {id} has {} children, arity is {}",
                            v.children.len(),
                            self.arity
                        )));
                    }
                    if !(v.event_time < v.birth_time) || v.event_time <= 0.0 {
                        return Err(Error::InvalidSpec(format!(
                            "branch vertex {id} event time {} outside (0, birth {})",
                            v.event_time, v.birth_time
                        )));
                    }
                    for &c in &v.children {
                        let child = &self.vertices[c as usize];
                        if child.parent != Some(id as u32) {
                            return Err(Error::InvalidSpec(format!(
                                "child {c} does not point back to {id}"
                            )));
                        }
                        if child.birth_time != v.event_time {
                            return Err(Error::InvalidSpec(format!(
                                "child {c} born at {}, parent event at {}",
                                child.birth_time, v.event_time
                            )));
                        }
                    }
                }
                VertexKind::Leaf => {
                    if !v.children.is_empty() {
                        return Err(Error::InvalidSpec(format!("leaf {id} has children")));
                    }
                    if v.event_time != 0.0 {
                        return Err(Error::InvalidSpec(format!(
                            "leaf {id} event time {} != 0",
                            v.event_time
                        )));
                    }
                    leaf_seen += 1;
                }
            }
        }
        if leaf_seen != self.leaf_ids.len() {
            return Err(Error::InvalidSpec("leaf index out of date".into()));
        }
        Ok(())
    }
}

/// Sample the branching skeleton: every lineage branches into `arity` at an
/// independent exponential(rate) clock, run from `horizon` down to 0.
pub fn sample_tree(
    rate: f64,
    horizon: f64,
    arity: usize,
    rng: &mut SubRng,
) -> Result<TimeLabelledTree> {
    sample_tree_with_cap(rate, horizon, arity, DEFAULT_VERTEX_CAP, rng)
}

/// As [`sample_tree`], with an explicit vertex cap.
pub fn sample_tree_with_cap(
    rate: f64,
    horizon: f64,
    arity: usize,
    cap: usize,
    rng: &mut SubRng,
) -> Result<TimeLabelledTree> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::InvalidSpec(format!("branch rate must be positive, got {rate}")));
    }
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidSpec(format!("horizon must be >= 0, got {horizon}")));
    }
    if arity < 2 {
        return Err(Error::InvalidSpec(format!("arity must be >= 2, got {arity}")));
    }
    let mut vertices = vec![Vertex {
        parent: None,
        children: Vec::new(),
        birth_time: horizon,
        event_time: 0.0,
        kind: VertexKind::Leaf,
        position: None,
    }];
    // Breadth-first: each dequeued vertex draws its own waiting time, so the
    // stream order is a deterministic function of the final tree shape.
    let mut queue = std::collections::VecDeque::from([0u32]);
    while let Some(id) = queue.pop_front() {
        let birth = vertices[id as usize].birth_time;
        let wait = rng.exp(rate);
        if wait >= birth {
            continue; // stays a leaf with event time 0
        }
        let event = birth - wait;
        if vertices.len() + arity > cap {
            return Err(Error::ExplosionGuard(format!(
                "vertex count would exceed cap {cap}"
            )));
        }
        vertices[id as usize].kind = VertexKind::Branch;
        vertices[id as usize].event_time = event;
        for _ in 0..arity {
            let cid = vertices.len() as u32;
            vertices[id as usize].children.push(cid);
            vertices.push(Vertex {
                parent: Some(id),
                children: Vec::new(),
                birth_time: event,
                event_time: 0.0,
                kind: VertexKind::Leaf,
                position: None,
            });
            queue.push_back(cid);
        }
    }
    let leaf_ids = vertices
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VertexKind::Leaf)
        .map(|(i, _)| i as u32)
        .collect();
    Ok(TimeLabelledTree { vertices, arity, horizon, leaf_ids })
}

/// The complete arity-regular tree of the given depth, with branch times at
/// evenly spaced levels of the horizon.
pub fn regular_tree(arity: usize, depth: usize, horizon: f64) -> Result<TimeLabelledTree> {
    if arity < 2 {
        return Err(Error::InvalidSpec(format!("arity must be >= 2, got {arity}")));
    }
    if !(horizon > 0.0) && depth > 0 {
        return Err(Error::InvalidSpec("regular tree of positive depth needs horizon > 0".into()));
    }
    let level_time =
        |level: usize| horizon * (depth - level) as f64 / (depth + 1) as f64;
    let mut vertices = vec![Vertex {
        parent: None,
        children: Vec::new(),
        birth_time: horizon.max(0.0),
        event_time: 0.0,
        kind: VertexKind::Leaf,
        position: None,
    }];
    let mut frontier = vec![0u32];
    for level in 0..depth {
        let event = level_time(level);
        let mut next = Vec::with_capacity(frontier.len() * arity);
        for &id in &frontier {
            vertices[id as usize].kind = VertexKind::Branch;
            vertices[id as usize].event_time = event;
            for _ in 0..arity {
                let cid = vertices.len() as u32;
                vertices[id as usize].children.push(cid);
                vertices.push(Vertex {
                    parent: Some(id),
                    children: Vec::new(),
                    birth_time: event,
                    event_time: 0.0,
                    kind: VertexKind::Leaf,
                    position: None,
                });
                next.push(cid);
            }
        }
        frontier = next;
    }
    let leaf_ids = vertices
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VertexKind::Leaf)
        .map(|(i, _)| i as u32)
        .collect();
    Ok(TimeLabelledTree {
        vertices,
        arity,
        horizon: horizon.max(0.0),
        leaf_ids,
    })
}

/// Does a complete arity-regular tree of `depth` branch generations embed at
/// the root?
pub fn contains_regular_subtree(tree: &TimeLabelledTree, depth: usize) -> bool {
    if depth == 0 {
        return true;
    }
    // Children always have larger indices, so one reverse sweep is a valid
    // post-order.
    let n = tree.len();
    let mut emb = vec![0usize; n];
    for id in (0..n).rev() {
        let v = &tree.vertices[id];
        if v.kind == VertexKind::Branch {
            let m = v
                .children
                .iter()
                .map(|&c| emb[c as usize])
                .min()
                .unwrap_or(0);
            emb[id] = 1 + m;
        }
    }
    emb[0] >= depth
}

/// Monte Carlo probability that a freshly sampled skeleton embeds the
/// regular tree of the given depth. Sampling is lazy (subtrees are only
/// explored to the embed depth), so the estimate is exact in distribution
/// without materializing super-critical trees.
pub fn embed_probability(
    rate: f64,
    horizon: f64,
    arity: usize,
    depth: usize,
    trials: u64,
    rng: &mut SubRng,
) -> Result<EstimateWithCI> {
    if !(rate > 0.0) || !(horizon >= 0.0) || arity < 2 {
        return Err(Error::InvalidSpec("embed_probability needs rate > 0, horizon >= 0, arity >= 2".into()));
    }
    fn embeds(rng: &mut SubRng, rate: f64, remaining: f64, arity: usize, depth: usize) -> bool {
        if depth == 0 {
            return true;
        }
        let wait = rng.exp(rate);
        if wait >= remaining {
            return false;
        }
        let left = remaining - wait;
        (0..arity).all(|_| embeds(rng, rate, left, arity, depth - 1))
    }
    let mut hits = 0u64;
    for _ in 0..trials {
        if embeds(rng, rate, horizon, arity, depth) {
            hits += 1;
        }
    }
    EstimateWithCI::bernoulli(hits, trials)
}

// ---------------------------------------------------------------------------
// Partitions of the five voter inputs
// ---------------------------------------------------------------------------

/// A set partition of {0,..,4} in canonical restricted-growth form:
/// block labels appear in first-use order (`rgs[0] == 0`,
/// `rgs[i] <= max(rgs[..i]) + 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Partition {
    rgs: [u8; 5],
}

impl Partition {
    pub fn singletons() -> Self {
        Partition { rgs: [0, 1, 2, 3, 4] }
    }

    /// Canonicalize an arbitrary block assignment.
    pub fn from_assignment(assignment: [u8; 5]) -> Self {
        let mut relabel: [Option<u8>; 5] = [None; 5];
        let mut next = 0u8;
        let mut rgs = [0u8; 5];
        for i in 0..5 {
            let a = (assignment[i] as usize).min(4);
            let label = match relabel[a] {
                Some(l) => l,
                None => {
                    let l = next;
                    relabel[a] = Some(l);
                    next += 1;
                    l
                }
            };
            rgs[i] = label;
        }
        Partition { rgs }
    }

    pub fn rgs(&self) -> [u8; 5] {
        self.rgs
    }

    pub fn n_cells(&self) -> usize {
        (*self.rgs.iter().max().expect("nonempty") as usize) + 1
    }

    /// Blocks in label order; members in increasing index order.
    pub fn cells(&self) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); self.n_cells()];
        for (i, &c) in self.rgs.iter().enumerate() {
            cells[c as usize].push(i);
        }
        cells
    }

    pub fn is_singletons(&self) -> bool {
        self.rgs == [0, 1, 2, 3, 4]
    }
}

/// Where a partition law came from.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionProvenance {
    /// Explicitly specified table.
    Specified,
    /// Estimated from coalescing-walk simulation.
    Empirical { trials: u64, eta: f64, l: usize, d: usize },
}

/// A probability table over set partitions of the five voter inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionLaw {
    entries: Vec<(Partition, f64)>,
    provenance: PartitionProvenance,
}

impl PartitionLaw {
    pub fn new(entries: Vec<(Partition, f64)>, provenance: PartitionProvenance) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidSpec("partition law with no entries".into()));
        }
        let mut seen = std::collections::HashSet::new();
        let mut total = 0.0;
        for (p, mass) in &entries {
            if !seen.insert(*p) {
                return Err(Error::InvalidSpec("duplicate partition in law".into()));
            }
            if !(*mass >= 0.0) || !mass.is_finite() {
                return Err(Error::InvalidSpec(format!("negative or non-finite mass {mass}")));
            }
            total += mass;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidSpec(format!(
                "partition masses sum to {total}, expected 1"
            )));
        }
        Ok(PartitionLaw { entries, provenance })
    }

    /// The law putting all mass on the all-singletons partition.
    pub fn pure_singletons() -> Self {
        PartitionLaw {
            entries: vec![(Partition::singletons(), 1.0)],
            provenance: PartitionProvenance::Specified,
        }
    }

    pub fn entries(&self) -> &[(Partition, f64)] {
        &self.entries
    }

    pub fn provenance(&self) -> &PartitionProvenance {
        &self.provenance
    }

    /// Mass on the all-singletons partition.
    pub fn singleton_mass(&self) -> f64 {
        self.entries
            .iter()
            .find(|(p, _)| p.is_singletons())
            .map(|(_, m)| *m)
            .unwrap_or(0.0)
    }

    /// Sample a partition with one uniform draw.
    pub fn sample(&self, u: f64) -> Partition {
        let mut acc = 0.0;
        for (p, mass) in &self.entries {
            acc += mass;
            if u < acc {
                return *p;
            }
        }
        self.entries.last().expect("nonempty").0
    }
}

/// Estimate the family partition law: parent and four children start at
/// five distinct uniform sites of [-L, L]^d (lattice units of η), walk as
/// coalescing nearest-neighbour walks at rate η⁻², and the partition of
/// {0,..,4} induced by coalescence within time √η is recorded.
pub fn estimate_partition_law(
    eta: f64,
    l: usize,
    d: usize,
    trials: u64,
    rng: &mut SubRng,
) -> Result<PartitionLaw> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::InvalidSpec(format!("eta must be positive, got {eta}")));
    }
    if l < 1 || !(1..=3).contains(&d) {
        return Err(Error::InvalidSpec(format!(
            "need L >= 1 and dimension in 1..=3, got L = {l}, d = {d}"
        )));
    }
    let side = 2 * l as i64 + 1;
    if side.pow(d as u32) < 5 {
        return Err(Error::InvalidSpec("branching neighborhood holds fewer than 5 sites".into()));
    }
    if trials == 0 {
        return Err(Error::EmptyEstimate("estimate_partition_law with zero trials".into()));
    }
    let window = eta.sqrt();
    let jump_rate = 1.0 / (eta * eta);
    let mut counts: BTreeMap<Partition, u64> = BTreeMap::new();
    for _ in 0..trials {
        // Five distinct uniform sites in the box.
        let mut pos: Vec<[i64; 3]> = Vec::with_capacity(5);
        while pos.len() < 5 {
            let mut site = [0i64; 3];
            for coord in site.iter_mut().take(d) {
                *coord = rng.below(side as u64) as i64 - l as i64;
            }
            if !pos.contains(&site) {
                pos.push(site);
            }
        }
        // Union-find over the five walkers; merged clusters walk as one.
        let mut cluster = [0u8, 1, 2, 3, 4];
        let mut reps: Vec<usize> = (0..5).collect();
        let mut t = 0.0;
        while reps.len() > 1 {
            let total_rate = reps.len() as f64 * jump_rate;
            t += rng.exp(total_rate);
            if t >= window {
                break;
            }
            let mover = reps[rng.below(reps.len() as u64) as usize];
            let axis = rng.below(d as u64) as usize;
            let dir = if rng.below(2) == 0 { 1 } else { -1 };
            pos[mover][axis] += dir;
            // Coalesce with any cluster already on that site.
            if let Some(&hit) = reps
                .iter()
                .find(|&&r| r != mover && pos[r] == pos[mover])
            {
                let from = cluster[mover];
                let into = cluster[hit];
                for c in cluster.iter_mut() {
                    if *c == from {
                        *c = into;
                    }
                }
                reps.retain(|&r| r != mover);
            }
        }
        let partition = Partition::from_assignment(cluster);
        *counts.entry(partition).or_insert(0) += 1;
    }
    let entries = counts
        .into_iter()
        .map(|(p, c)| (p, c as f64 / trials as f64))
        .collect();
    PartitionLaw::new(
        entries,
        PartitionProvenance::Empirical { trials, eta, l, d },
    )
}

// ---------------------------------------------------------------------------
// Vote rules
// ---------------------------------------------------------------------------

/// Where the nonlinear voter's family partitions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PartitionSource {
    /// No within-family coalescence: every partition is all singletons.
    Singletons,
    /// Partitions drawn i.i.d. per branch vertex from an estimated or
    /// specified law.
    Empirical(PartitionLaw),
}

/// The three voting algorithms.
#[derive(Debug, Clone, PartialEq)]
pub enum VoteRule {
    /// Ternary: with probability β/(1+β) the output is
    /// lineage OR (sibling1 AND sibling2); otherwise 0 (a death mark).
    SexualBirthDeath { beta: f64 },
    /// Ternary majority (also the Lotka–Volterra boundary vote).
    Majority,
    /// Quinary: collapse coalesced inputs by a uniformly chosen cell
    /// representative, count ones k among the re-expanded five, output 1
    /// with probability a_k.
    NonlinearVoter {
        a1: f64,
        a2: f64,
        partitions: PartitionSource,
    },
}

impl VoteRule {
    pub fn arity(&self) -> usize {
        match self {
            VoteRule::SexualBirthDeath { .. } | VoteRule::Majority => 3,
            VoteRule::NonlinearVoter { .. } => 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            VoteRule::SexualBirthDeath { beta } => {
                if !(*beta > 0.0) || !beta.is_finite() {
                    return Err(Error::InvalidSpec(format!("beta must be positive, got {beta}")));
                }
            }
            VoteRule::Majority => {}
            VoteRule::NonlinearVoter { a1, a2, .. } => {
                for a in [a1, a2] {
                    if !(0.0..=1.0).contains(a) {
                        return Err(Error::InvalidSpec(format!(
                            "voter probability {a} outside [0,1]"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn check_tree(&self, tree: &TimeLabelledTree) -> Result<()> {
        if tree.arity() != self.arity() {
            return Err(Error::ArityMismatch(format!(
                "rule needs arity {}, tree has {}",
                self.arity(),
                tree.arity()
            )));
        }
        Ok(())
    }
}

/// Full a_0..a_5 table from the two free parameters, using a0 = 0, a5 = 1,
/// a4 = 1 - a1, a3 = 1 - a2.
pub fn voter_a_table(a1: f64, a2: f64) -> [f64; 6] {
    [0.0, a1, a2, 1.0 - a2, 1.0 - a1, 1.0]
}

fn post_order(tree: &TimeLabelledTree) -> Vec<u32> {
    let mut order = Vec::with_capacity(tree.len());
    let mut stack = vec![(0u32, false)];
    while let Some((id, expanded)) = stack.pop() {
        if expanded {
            order.push(id);
        } else {
            stack.push((id, true));
            for &c in tree.vertex(id).children.iter().rev() {
                stack.push((c, false));
            }
        }
    }
    order
}

/// Evaluate one vote bottom-up. Randomness comes from per-vertex substreams
/// of `vote_key` (the key of vertex v is `child_key(vote_key, v)`), so the
/// result is reproducible regardless of evaluation order.
pub fn vote(
    tree: &TimeLabelledTree,
    leaf_states: &[bool],
    rule: &VoteRule,
    vote_key: u64,
) -> Result<bool> {
    rule.validate()?;
    rule.check_tree(tree)?;
    if leaf_states.len() != tree.leaf_count() {
        return Err(Error::DomainError(format!(
            "{} leaf states for {} leaves",
            leaf_states.len(),
            tree.leaf_count()
        )));
    }
    let mut leaf_pos = vec![usize::MAX; tree.len()];
    for (k, &id) in tree.leaf_ids().iter().enumerate() {
        leaf_pos[id as usize] = k;
    }
    let mut value = vec![false; tree.len()];
    for id in post_order(tree) {
        let v = tree.vertex(id);
        value[id as usize] = match v.kind {
            VertexKind::Leaf => leaf_states[leaf_pos[id as usize]],
            VertexKind::Branch => {
                let mut stream = SubRng::new(child_key(vote_key, id as u64));
                let c: Vec<bool> = v
                    .children
                    .iter()
                    .map(|&ch| value[ch as usize])
                    .collect();
                match rule {
                    VoteRule::SexualBirthDeath { beta } => {
                        let birth = stream.uniform() < beta / (1.0 + beta);
                        birth && (c[0] || (c[1] && c[2]))
                    }
                    VoteRule::Majority => {
                        c.iter().filter(|&&b| b).count() >= 2
                    }
                    VoteRule::NonlinearVoter { a1, a2, partitions } => {
                        let partition = match partitions {
                            PartitionSource::Singletons => Partition::singletons(),
                            PartitionSource::Empirical(law) => law.sample(stream.uniform()),
                        };
                        let a = voter_a_table(*a1, *a2);
                        let mut ones = 0usize;
                        for cell in partition.cells() {
                            let rep = if cell.len() == 1 {
                                cell[0]
                            } else {
                                cell[stream.below(cell.len() as u64) as usize]
                            };
                            if c[rep] {
                                ones += cell.len();
                            }
                        }
                        stream.uniform() < a[ones]
                    }
                }
            }
        };
    }
    Ok(value[0])
}

/// Exact root-output probability for independent Bernoulli leaf states.
pub fn exact_vote_probability(
    tree: &TimeLabelledTree,
    leaf_probs: &[f64],
    rule: &VoteRule,
) -> Result<f64> {
    rule.validate()?;
    rule.check_tree(tree)?;
    if leaf_probs.len() != tree.leaf_count() {
        return Err(Error::DomainError(format!(
            "{} leaf probabilities for {} leaves",
            leaf_probs.len(),
            tree.leaf_count()
        )));
    }
    for p in leaf_probs {
        if !(0.0..=1.0).contains(p) {
            return Err(Error::DomainError(format!("leaf probability {p} outside [0,1]")));
        }
    }
    let mut leaf_pos = vec![usize::MAX; tree.len()];
    for (k, &id) in tree.leaf_ids().iter().enumerate() {
        leaf_pos[id as usize] = k;
    }
    let mut q = vec![0.0f64; tree.len()];
    for id in post_order(tree) {
        let v = tree.vertex(id);
        q[id as usize] = match v.kind {
            VertexKind::Leaf => leaf_probs[leaf_pos[id as usize]],
            VertexKind::Branch => {
                let c: Vec<f64> = v
                    .children
                    .iter()
                    .map(|&ch| q[ch as usize])
                    .collect();
                match rule {
                    VoteRule::SexualBirthDeath { beta } => {
                        let w = beta / (1.0 + beta);
                        w * (c[0] + (1.0 - c[0]) * c[1] * c[2])
                    }
                    VoteRule::Majority => {
                        c[0] * c[1] + c[0] * c[2] + c[1] * c[2] - 2.0 * c[0] * c[1] * c[2]
                    }
                    VoteRule::NonlinearVoter { a1, a2, partitions } => {
                        let a = voter_a_table(*a1, *a2);
                        match partitions {
                            PartitionSource::Singletons => {
                                dot_count_law(&poisson_binomial(&c, &[1, 1, 1, 1, 1]), &a)
                            }
                            PartitionSource::Empirical(law) => {
                                let mut total = 0.0;
                                for (partition, mass) in law.entries() {
                                    if *mass == 0.0 {
                                        continue;
                                    }
                                    let cells = partition.cells();
                                    // A cell outputs its uniformly chosen
                                    // representative's value: Bernoulli with
                                    // the cell-average probability, weighted
                                    // by cell size in the ones count.
                                    let probs: Vec<f64> = cells
                                        .iter()
                                        .map(|cell| {
                                            cell.iter().map(|&i| c[i]).sum::<f64>()
                                                / cell.len() as f64
                                        })
                                        .collect();
                                    let sizes: Vec<usize> =
                                        cells.iter().map(|cell| cell.len()).collect();
                                    total +=
                                        mass * dot_count_law(&poisson_binomial(&probs, &sizes), &a);
                                }
                                total
                            }
                        }
                    }
                }
            }
        };
    }
    Ok(q[0])
}

/// Distribution of the weighted ones count: independent Bernoulli(p_i)
/// contributing weight w_i each; returns P(count = k) for k = 0..=Σw.
fn poisson_binomial(probs: &[f64], weights: &[usize]) -> Vec<f64> {
    let total: usize = weights.iter().sum();
    let mut dist = vec![0.0; total + 1];
    dist[0] = 1.0;
    let mut used = 0usize;
    for (p, &w) in probs.iter().zip(weights) {
        for k in (0..=used).rev() {
            let mass = dist[k];
            if mass == 0.0 {
                continue;
            }
            dist[k] = mass * (1.0 - p);
            dist[k + w] += mass * p;
        }
        used += w;
    }
    dist
}

fn dot_count_law(dist: &[f64], a: &[f64; 6]) -> f64 {
    dist.iter().zip(a.iter()).map(|(d, a)| d * a).sum()
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

/// Serialize as a flat edge list:
/// a header `tree-v1 <arity> <horizon>`, then one line per vertex:
/// `<id> <parent|root> <event_time> <branch|leaf> [coords...]`.
pub fn serialize_tree(tree: &TimeLabelledTree) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "tree-v1 {} {}", tree.arity(), tree.horizon());
    for (id, v) in tree.vertices().iter().enumerate() {
        let _ = write!(out, "{id} ");
        match v.parent {
            Some(p) => {
                let _ = write!(out, "{p}");
            }
            None => out.push_str("root"),
        }
        let kind = match v.kind {
            VertexKind::Branch => "branch",
            VertexKind::Leaf => "leaf",
        };
        let _ = write!(out, " {} {kind}", v.event_time);
        if let Some(pos) = &v.position {
            for x in pos {
                let _ = write!(out, " {x}");
            }
        }
        out.push('\n');
    }
    out
}

/// Parse the edge-list format back into a validated tree.
pub fn parse_tree(text: &str) -> Result<TimeLabelledTree> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty tree file".into()))?;
    let mut hp = header.split_whitespace();
    if hp.next() != Some("tree-v1") {
        return Err(Error::Parse("missing tree-v1 header".into()));
    }
    let arity: usize = hp
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse("bad arity in header".into()))?;
    let horizon: f64 = hp
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Parse("bad horizon in header".into()))?;
    let mut vertices: Vec<Vertex> = Vec::new();
    for line in lines {
        let mut parts = line.split_whitespace();
        let id: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad vertex id in {line:?}")))?;
        if id != vertices.len() {
            return Err(Error::Parse(format!(
                "vertex ids must be consecutive, expected {} got {id}",
                vertices.len()
            )));
        }
        let parent_tok = parts
            .next()
            .ok_or_else(|| Error::Parse(format!("missing parent in {line:?}")))?;
        let parent = if parent_tok == "root" {
            None
        } else {
            let p: usize = parent_tok
                .parse()
                .map_err(|_| Error::Parse(format!("bad parent in {line:?}")))?;
            if p >= id {
                return Err(Error::Parse(format!(
                    "parent {p} of vertex {id} must come earlier"
                )));
            }
            Some(p as u32)
        };
        let event_time: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse(format!("bad event time in {line:?}")))?;
        let kind = match parts.next() {
            Some("branch") => VertexKind::Branch,
            Some("leaf") => VertexKind::Leaf,
            other => return Err(Error::Parse(format!("bad vertex kind {other:?}"))),
        };
        let coords: Vec<f64> = parts
            .map(|s| s.parse().map_err(|_| Error::Parse(format!("bad coordinate in {line:?}"))))
            .collect::<Result<_>>()?;
        let birth_time = match parent {
            None => horizon,
            Some(p) => vertices[p as usize].event_time,
        };
        if let Some(p) = parent {
            vertices[p as usize].children.push(id as u32);
        }
        vertices.push(Vertex {
            parent,
            children: Vec::new(),
            birth_time,
            event_time,
            kind,
            position: if coords.is_empty() { None } else { Some(coords) },
        });
    }
    if vertices.is_empty() {
        return Err(Error::Parse("tree file has no vertices".into()));
    }
    // Children were accumulated onto parents during the scan above, but into
    // the freshly pushed (childless) copies; rebuild the lists in id order.
    let mut children: Vec<Vec<u32>> = vec![Vec::new(); vertices.len()];
    for (id, v) in vertices.iter().enumerate() {
        if let Some(p) = v.parent {
            children[p as usize].push(id as u32);
        }
    }
    for (v, c) in vertices.iter_mut().zip(children) {
        v.children = c;
    }
    let leaf_ids = vertices
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VertexKind::Leaf)
        .map(|(i, _)| i as u32)
        .collect();
    let tree = TimeLabelledTree { vertices, arity, horizon, leaf_ids };
    tree.validate().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gfun::{iterate_g, make_g};
    use crate::model::ModelSpec;
    use crate::rng::{derive_key64, Label};

    fn rng_for(name: &str) -> SubRng {
        SubRng::new(derive_key64(20260825, &[Label::Name(name)]))
    }

    #[test]
    fn horizon_zero_gives_single_leaf() {
        let mut rng = rng_for("single");
        let t = sample_tree(3.0, 0.0, 3, &mut rng).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.leaf_count(), 1);
        assert_eq!(t.vertex(0).kind, VertexKind::Leaf);
        t.validate().unwrap();
    }

    #[test]
    fn explosion_guard_trips_on_supercritical_trees() {
        let mut rng = rng_for("explode");
        let r = sample_tree_with_cap(100.0, 1.0, 3, 1000, &mut rng);
        assert!(matches!(r, Err(Error::ExplosionGuard(_))));
    }

    #[test]
    fn mean_particle_count_matches_exponential_growth() {
        // E K_t = exp(nu t) with nu = rate * (arity - 1).
        for (arity, rate, horizon) in [(3usize, 1.0, 0.5), (5usize, 1.0, 0.3)] {
            let mut rng = rng_for("growth");
            let trials = 100_000u64;
            let mut counts = Vec::with_capacity(trials as usize);
            for _ in 0..trials {
                let t = sample_tree(rate, horizon, arity, &mut rng).unwrap();
                counts.push(t.leaf_count() as f64);
            }
            let est = EstimateWithCI::from_samples(&counts).unwrap();
            let nu = rate * (arity as f64 - 1.0);
            let expect = (nu * horizon).exp();
            assert!(
                (est.value - expect).abs() <= 4.0 * est.stderr,
                "arity {arity}: mean {} vs {expect} (se {})",
                est.value,
                est.stderr
            );
        }
    }

    #[test]
    fn sampled_trees_validate_and_have_ordered_times() {
        let mut rng = rng_for("valid");
        for _ in 0..50 {
            let t = sample_tree(2.0, 1.0, 3, &mut rng).unwrap();
            t.validate().unwrap();
            for v in t.vertices() {
                if let Some(p) = v.parent {
                    assert!(v.event_time < t.vertex(p).event_time || v.kind == VertexKind::Leaf);
                    assert_eq!(v.birth_time, t.vertex(p).event_time);
                }
            }
        }
    }

    #[test]
    fn embed_probability_at_the_reference_scale() {
        // eps = 0.1: depth ceil(|log eps|) = 3; horizon a eps^2 |log eps|
        // with rate eps^-2 and a = 3.6 clears the 1 - eps = 0.9 bar.
        let eps: f64 = 0.1;
        let rate = eps.powi(-2);
        let a = 3.6;
        let horizon = a * eps * eps * eps.ln().abs();
        let depth = eps.ln().abs().ceil() as usize;
        assert_eq!(depth, 3);
        let mut rng = rng_for("embed");
        let est = embed_probability(rate, horizon, 3, depth, 4000, &mut rng).unwrap();
        assert!(
            est.value - 3.0 * est.stderr >= 1.0 - eps,
            "embed probability {} (se {})",
            est.value,
            est.stderr
        );
        let trivial = embed_probability(rate, horizon, 3, 0, 100, &mut rng).unwrap();
        assert_eq!(trivial.value, 1.0);
    }

    #[test]
    fn contains_regular_subtree_on_known_shapes() {
        let mut rng = rng_for("contains");
        let single = sample_tree(1.0, 0.0, 3, &mut rng).unwrap();
        assert!(contains_regular_subtree(&single, 0));
        assert!(!contains_regular_subtree(&single, 1));

        let full = regular_tree(3, 2, 1.0).unwrap();
        assert_eq!(full.leaf_count(), 9);
        assert!(contains_regular_subtree(&full, 2));
        assert!(!contains_regular_subtree(&full, 3));

        // Lopsided: root branches, exactly one child branches again.
        let text = "tree-v1 3 1.0\n\
                    0 root 0.6 branch\n\
                    1 0 0.0 leaf\n\
                    2 0 0.3 branch\n\
                    3 0 0.0 leaf\n\
                    4 2 0.0 leaf\n\
                    5 2 0.0 leaf\n\
                    6 2 0.0 leaf\n";
        let lopsided = parse_tree(text).unwrap();
        assert!(contains_regular_subtree(&lopsided, 1));
        assert!(!contains_regular_subtree(&lopsided, 2));
    }

    #[test]
    fn vote_absorbing_states() {
        let mut rng = rng_for("absorb");
        for _ in 0..20 {
            let t = sample_tree(2.0, 1.0, 3, &mut rng).unwrap();
            let ones = vec![true; t.leaf_count()];
            let zeros = vec![false; t.leaf_count()];
            assert!(vote(&t, &ones, &VoteRule::Majority, 5).unwrap());
            assert!(!vote(&t, &zeros, &VoteRule::Majority, 5).unwrap());
            assert!(!vote(&t, &zeros, &VoteRule::SexualBirthDeath { beta: 4.5 }, 5).unwrap());
        }
        let q = sample_tree(2.0, 0.6, 5, &mut rng).unwrap();
        let rule = VoteRule::NonlinearVoter {
            a1: 0.25,
            a2: 0.3,
            partitions: PartitionSource::Singletons,
        };
        assert!(vote(&q, &vec![true; q.leaf_count()], &rule, 9).unwrap());
        assert!(!vote(&q, &vec![false; q.leaf_count()], &rule, 9).unwrap());
    }

    #[test]
    fn majority_depth_one_matches_g_by_monte_carlo() {
        let t = regular_tree(3, 1, 1.0).unwrap();
        let p = 0.6;
        let mut rng = rng_for("depth1");
        let trials = 100_000u64;
        let mut hits = 0u64;
        for trial in 0..trials {
            let states: Vec<bool> = (0..3).map(|_| rng.uniform() < p).collect();
            let key = derive_key64(31, &[Label::Name("vote"), Label::Count(trial)]);
            if vote(&t, &states, &VoteRule::Majority, key).unwrap() {
                hits += 1;
            }
        }
        let est = EstimateWithCI::bernoulli(hits, trials).unwrap();
        let expect = 3.0 * p * p - 2.0 * p * p * p;
        assert!(
            (est.value - expect).abs() <= 3.0 * est.stderr,
            "{} vs {expect}",
            est.value
        );
    }

    #[test]
    fn exact_probability_on_regular_trees_is_iterated_g() {
        let cases: Vec<(ModelSpec, VoteRule)> = vec![
            (ModelSpec::Majority, VoteRule::Majority),
            (
                ModelSpec::SexualReproduction { beta: 4.5 },
                VoteRule::SexualBirthDeath { beta: 4.5 },
            ),
            (
                ModelSpec::NonlinearVoter { a1: 0.25, a2: 0.3, enforce_region2: true },
                VoteRule::NonlinearVoter {
                    a1: 0.25,
                    a2: 0.3,
                    partitions: PartitionSource::Singletons,
                },
            ),
        ];
        for (spec, rule) in cases {
            let g = make_g(spec).unwrap();
            for depth in 0..=6usize {
                if rule.arity() == 5 && depth > 5 {
                    continue; // 5^6 leaves add nothing over depth 5
                }
                let tree = regular_tree(rule.arity(), depth, 1.0).unwrap();
                for p in [0.0, 0.2, 0.6, 1.0] {
                    let exact =
                        exact_vote_probability(&tree, &vec![p; tree.leaf_count()], &rule).unwrap();
                    let iterated = iterate_g(&g, p, depth as u64).unwrap();
                    assert!(
                        (exact - iterated).abs() <= 1e-12,
                        "{rule:?} depth {depth} p {p}: {exact} vs {iterated}"
                    );
                }
            }
        }
    }

    #[test]
    fn exact_probability_matches_full_enumeration() {
        // Depth-2 ternary majority at p = 0.6: enumerate all 2^9 leaf
        // assignments with product weights.
        let tree = regular_tree(3, 2, 1.0).unwrap();
        let p: f64 = 0.6;
        let nleaves = tree.leaf_count();
        let mut total = 0.0;
        for mask in 0u32..(1 << nleaves) {
            let states: Vec<bool> = (0..nleaves).map(|i| mask >> i & 1 == 1).collect();
            let ones = states.iter().filter(|&&b| b).count();
            let weight = p.powi(ones as i32) * (1.0 - p).powi((nleaves - ones) as i32);
            // Majority is deterministic, so the vote key is irrelevant.
            if vote(&tree, &states, &VoteRule::Majority, 0).unwrap() {
                total += weight;
            }
        }
        let dp = exact_vote_probability(&tree, &vec![p; nleaves], &VoteRule::Majority).unwrap();
        assert!((dp - total).abs() <= 1e-12, "dp {dp} vs enumeration {total}");

        // Cross-module: equals g(g(p)).
        let g = make_g(ModelSpec::Majority).unwrap();
        let twice = iterate_g(&g, p, 2).unwrap();
        assert!((dp - twice).abs() <= 1e-12);
    }

    #[test]
    fn voter_depth_one_is_symmetric_at_half() {
        // a0=0, a5=1, a4=1-a1, a3=1-a2 force g(1/2) = 1/2; verify the DP
        // against the binomial enumeration.
        let tree = regular_tree(5, 1, 1.0).unwrap();
        let rule = VoteRule::NonlinearVoter {
            a1: 0.25,
            a2: 0.3,
            partitions: PartitionSource::Singletons,
        };
        let dp = exact_vote_probability(&tree, &vec![0.5; 5], &rule).unwrap();
        assert!((dp - 0.5).abs() <= 1e-15, "dp {dp}");

        let a = voter_a_table(0.25, 0.3);
        let p: f64 = 0.37;
        let mut manual = 0.0;
        for k in 0..=5usize {
            let binom = [1.0, 5.0, 10.0, 10.0, 5.0, 1.0][k];
            manual += binom * p.powi(k as i32) * (1.0 - p).powi(5 - k as i32) * a[k];
        }
        let dp_p = exact_vote_probability(&tree, &vec![p; 5], &rule).unwrap();
        assert!((dp_p - manual).abs() <= 1e-14, "{dp_p} vs {manual}");
    }

    #[test]
    fn dp_matches_monte_carlo_on_random_trees() {
        let rules: Vec<VoteRule> = vec![
            VoteRule::Majority,
            VoteRule::SexualBirthDeath { beta: 4.5 },
            VoteRule::NonlinearVoter {
                a1: 0.25,
                a2: 0.3,
                partitions: PartitionSource::Singletons,
            },
        ];
        let mut rng = rng_for("dpmc");
        for (r_idx, rule) in rules.iter().enumerate() {
            let (rate, horizon) = if rule.arity() == 3 { (1.0, 1.2) } else { (1.0, 0.6) };
            let mut done = 0;
            while done < 7 {
                let tree = sample_tree(rate, horizon, rule.arity(), &mut rng).unwrap();
                if tree.leaf_count() > 200 || tree.leaf_count() < 2 {
                    continue;
                }
                done += 1;
                let probs: Vec<f64> =
                    (0..tree.leaf_count()).map(|_| rng.uniform()).collect();
                let exact = exact_vote_probability(&tree, &probs, rule).unwrap();
                let trials = 10_000u64;
                let mut hits = 0u64;
                for trial in 0..trials {
                    let states: Vec<bool> =
                        probs.iter().map(|p| rng.uniform() < *p).collect();
                    let key = derive_key64(
                        101,
                        &[
                            Label::Name("dpmc"),
                            Label::Count(r_idx as u64),
                            Label::Count(done as u64),
                            Label::Count(trial),
                        ],
                    );
                    if vote(&tree, &states, rule, key).unwrap() {
                        hits += 1;
                    }
                }
                let est = EstimateWithCI::bernoulli(hits, trials).unwrap();
                let se = est.stderr.max(1e-4);
                assert!(
                    (est.value - exact).abs() <= 4.0 * se,
                    "{rule:?} tree {done}: mc {} vs dp {exact} (se {se})",
                    est.value
                );
            }
        }
    }

    #[test]
    fn complementing_leaves_flips_symmetric_rules_exactly() {
        let mut rng = rng_for("antisym");
        for _ in 0..10 {
            let t3 = sample_tree(1.0, 1.0, 3, &mut rng).unwrap();
            let probs: Vec<f64> = (0..t3.leaf_count()).map(|_| rng.uniform()).collect();
            let flipped: Vec<f64> = probs.iter().map(|p| 1.0 - p).collect();
            let q = exact_vote_probability(&t3, &probs, &VoteRule::Majority).unwrap();
            let qf = exact_vote_probability(&t3, &flipped, &VoteRule::Majority).unwrap();
            assert!((q + qf - 1.0).abs() <= 1e-12, "majority {q} + {qf}");

            let t5 = sample_tree(1.0, 0.5, 5, &mut rng).unwrap();
            let rule = VoteRule::NonlinearVoter {
                a1: 0.2,
                a2: 0.4,
                partitions: PartitionSource::Singletons,
            };
            let probs: Vec<f64> = (0..t5.leaf_count()).map(|_| rng.uniform()).collect();
            let flipped: Vec<f64> = probs.iter().map(|p| 1.0 - p).collect();
            let q = exact_vote_probability(&t5, &probs, &rule).unwrap();
            let qf = exact_vote_probability(&t5, &flipped, &rule).unwrap();
            assert!((q + qf - 1.0).abs() <= 1e-12, "voter {q} + {qf}");
        }
    }

    #[test]
    fn partition_canonical_form_and_law_validation() {
        let p = Partition::from_assignment([1, 1, 0, 2, 0]);
        assert_eq!(p.rgs(), [0, 0, 1, 2, 1]);
        assert_eq!(p.n_cells(), 3);
        assert_eq!(p.cells(), vec![vec![0, 1], vec![2, 4], vec![3]]);
        assert!(Partition::singletons().is_singletons());
        assert!(!p.is_singletons());

        assert!(PartitionLaw::new(
            vec![(Partition::singletons(), 0.5)],
            PartitionProvenance::Specified
        )
        .is_err());
        assert!(PartitionLaw::new(
            vec![
                (Partition::singletons(), 0.5),
                (Partition::singletons(), 0.5)
            ],
            PartitionProvenance::Specified
        )
        .is_err());
        let law = PartitionLaw::new(
            vec![
                (Partition::singletons(), 0.6),
                (Partition::from_assignment([0, 0, 1, 2, 3]), 0.4),
            ],
            PartitionProvenance::Specified,
        )
        .unwrap();
        assert!((law.singleton_mass() - 0.6).abs() < 1e-15);
        assert!(law.sample(0.3).is_singletons());
        assert!(!law.sample(0.95).is_singletons());
    }

    #[test]
    fn empirical_singleton_law_equals_singletons_dp() {
        let mut rng = rng_for("lawdp");
        let tree = sample_tree(1.0, 0.6, 5, &mut rng).unwrap();
        let probs: Vec<f64> = (0..tree.leaf_count()).map(|_| rng.uniform()).collect();
        let singles = VoteRule::NonlinearVoter {
            a1: 0.25,
            a2: 0.3,
            partitions: PartitionSource::Singletons,
        };
        let wrapped = VoteRule::NonlinearVoter {
            a1: 0.25,
            a2: 0.3,
            partitions: PartitionSource::Empirical(PartitionLaw::pure_singletons()),
        };
        let a = exact_vote_probability(&tree, &probs, &singles).unwrap();
        let b = exact_vote_probability(&tree, &probs, &wrapped).unwrap();
        assert!((a - b).abs() <= 1e-15);
    }

    #[test]
    fn empirical_partition_dp_matches_monte_carlo() {
        let law = PartitionLaw::new(
            vec![
                (Partition::singletons(), 0.55),
                (Partition::from_assignment([0, 0, 1, 2, 3]), 0.25),
                (Partition::from_assignment([0, 1, 1, 1, 2]), 0.20),
            ],
            PartitionProvenance::Specified,
        )
        .unwrap();
        let rule = VoteRule::NonlinearVoter {
            a1: 0.25,
            a2: 0.3,
            partitions: PartitionSource::Empirical(law),
        };
        let mut rng = rng_for("empmc");
        let tree = sample_tree(1.0, 0.7, 5, &mut rng).unwrap();
        let probs: Vec<f64> = (0..tree.leaf_count()).map(|_| rng.uniform()).collect();
        let exact = exact_vote_probability(&tree, &probs, &rule).unwrap();
        let trials = 20_000u64;
        let mut hits = 0u64;
        for trial in 0..trials {
            let states: Vec<bool> = probs.iter().map(|p| rng.uniform() < *p).collect();
            let key = derive_key64(202, &[Label::Name("empmc"), Label::Count(trial)]);
            if vote(&tree, &states, &rule, key).unwrap() {
                hits += 1;
            }
        }
        let est = EstimateWithCI::bernoulli(hits, trials).unwrap();
        assert!(
            (est.value - exact).abs() <= 4.0 * est.stderr.max(1e-4),
            "mc {} vs dp {exact}",
            est.value
        );
    }

    #[test]
    fn partition_law_estimation_behaviors() {
        // Large neighborhood: coalescence is rare, singletons dominate.
        let mut rng = rng_for("lawbig");
        let law = estimate_partition_law(0.01, 50, 3, 200, &mut rng).unwrap();
        let total: f64 = law.entries().iter().map(|(_, m)| m).sum();
        assert!((total - 1.0).abs() <= 1e-12);
        assert!(law.singleton_mass() >= 0.9, "singleton mass {}", law.singleton_mass());
        assert!(matches!(
            law.provenance(),
            PartitionProvenance::Empirical { trials: 200, .. }
        ));

        assert!(matches!(
            estimate_partition_law(0.01, 1, 3, 0, &mut rng),
            Err(Error::EmptyEstimate(_))
        ));
        assert!(estimate_partition_law(-1.0, 1, 3, 10, &mut rng).is_err());
        assert!(estimate_partition_law(0.01, 1, 9, 10, &mut rng).is_err());
    }

    #[test]
    fn tight_neighborhood_gives_nondegenerate_law() {
        let mut rng = rng_for("lawtight");
        let law = estimate_partition_law(1e-4, 1, 3, 25, &mut rng).unwrap();
        let total: f64 = law.entries().iter().map(|(_, m)| m).sum();
        assert!((total - 1.0).abs() <= 1e-12);
        assert!(
            law.entries().len() >= 2,
            "expected a nondegenerate law, got {:?}",
            law.entries()
        );
    }

    #[test]
    fn singleton_mass_increases_with_neighborhood_size() {
        let mut rng = rng_for("lawsep");
        let trials = 400u64;
        let tight = estimate_partition_law(0.01, 1, 3, trials, &mut rng).unwrap();
        let wide = estimate_partition_law(0.01, 10, 3, trials, &mut rng).unwrap();
        let (pt, pw) = (tight.singleton_mass(), wide.singleton_mass());
        let se = |p: f64| (p * (1.0 - p) / trials as f64).sqrt();
        let pooled = (se(pt).powi(2) + se(pw).powi(2)).sqrt();
        assert!(
            pw - pt >= 3.0 * pooled,
            "L=1 singleton {pt} vs L=10 {pw} (pooled se {pooled})"
        );
    }

    #[test]
    fn serialization_round_trips() {
        let mut rng = rng_for("serde");
        for arity in [3usize, 5] {
            let mut tree = sample_tree(1.5, 0.8, arity, &mut rng).unwrap();
            for (k, &id) in tree.leaf_ids().to_vec().iter().enumerate() {
                tree.set_position(id, vec![k as f64 * 0.25, -1.5]);
            }
            let text = serialize_tree(&tree);
            let back = parse_tree(&text).unwrap();
            assert_eq!(tree, back);
        }
    }

    #[test]
    fn parse_rejects_malformed_trees() {
        // Branch with too few children for the declared arity.
        let bad_arity = "tree-v1 3 1.0\n0 root 0.5 branch\n1 0 0.0 leaf\n2 0 0.0 leaf\n";
        assert!(matches!(parse_tree(bad_arity), Err(Error::Parse(_))));
        // Child branch event after its parent's.
        let bad_time = "tree-v1 3 1.0\n\
                        0 root 0.3 branch\n\
                        1 0 0.5 branch\n\
                        2 1 0.0 leaf\n\
                        3 1 0.0 leaf\n\
                        4 1 0.0 leaf\n\
                        5 0 0.0 leaf\n\
                        6 0 0.0 leaf\n";
        assert!(matches!(parse_tree(bad_time), Err(Error::Parse(_))));
        // Leaf with nonzero event time.
        let bad_leaf = "tree-v1 3 1.0\n0 root 0.25 leaf\n";
        assert!(matches!(parse_tree(bad_leaf), Err(Error::Parse(_))));
        assert!(matches!(parse_tree(""), Err(Error::Parse(_))));
    }

    #[test]
    fn votes_are_reproducible_by_key() {
        let mut rng = rng_for("repro");
        let tree = sample_tree(1.5, 1.0, 3, &mut rng).unwrap();
        let rule = VoteRule::SexualBirthDeath { beta: 4.5 };
        let states: Vec<bool> = (0..tree.leaf_count()).map(|_| rng.uniform() < 0.6).collect();
        let mut differs = false;
        for key in 0..64u64 {
            let a = vote(&tree, &states, &rule, key).unwrap();
            let b = vote(&tree, &states, &rule, key).unwrap();
            assert_eq!(a, b, "same key must reproduce");
            if a != vote(&tree, &states, &rule, key + 1000).unwrap() {
                differs = true;
            }
        }
        assert!(differs, "distinct keys should change some votes");
    }

    #[test]
    fn arity_and_length_mismatches_are_rejected() {
        let mut rng = rng_for("mismatch");
        let t3 = sample_tree(1.0, 0.8, 3, &mut rng).unwrap();
        let rule5 = VoteRule::NonlinearVoter {
            a1: 0.25,
            a2: 0.3,
            partitions: PartitionSource::Singletons,
        };
        assert!(matches!(
            exact_vote_probability(&t3, &vec![0.5; t3.leaf_count()], &rule5),
            Err(Error::ArityMismatch(_))
        ));
        assert!(matches!(
            vote(&t3, &vec![true; t3.leaf_count() + 1], &VoteRule::Majority, 0),
            Err(Error::DomainError(_))
        ));
        assert!(matches!(
            exact_vote_probability(&t3, &vec![1.5; t3.leaf_count()], &VoteRule::Majority),
            Err(Error::DomainError(_))
        ));
    }
}
