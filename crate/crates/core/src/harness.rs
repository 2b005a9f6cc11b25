//! Experiment harness: named, seeded, reproducible experiment runs with
//! CSV artifacts and a machine-readable pass/fail summary.
//!
//! Every stochastic experiment requires an explicit seed; all randomness
//! flows through hash-derived substreams keyed on (seed, experiment,
//! trial), so reruns with an identical resolved configuration produce
//! byte-identical CSV bodies. Wall-clock information is quarantined to a
//! separate metadata file. Trials are executed and aggregated in index
//! order; because each trial's stream depends only on its index, results
//! are independent of any execution schedule by construction.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bbm::{BbmParams, InitCond};
use crate::dualtree::{estimate_partition_law, PartitionSource, VoteRule};
use crate::error::{Error, Result};
use crate::gfun::{check_conditions, convergence_steps, convergence_steps_down, fixed_points, forward_phi, make_g};
use crate::lattice::{
    collision_stats, dual_vote_estimate, duality_check, dump_grid, run_forward_logged,
    run_forward_snapshots, walk_vs_bm_diagnostic, LatticeConfig, ProductMeasure, ScalingParams,
    WalkKind,
};
use crate::mcf::{regularity_check, FlowSpec, Shape};
use crate::model::{reference_specs, ModelSpec};
use crate::pde::{
    disk_2d, integral_sign_f64, level_set_radius, solve_radial, solve_with_snapshots, step_1d,
    unstable_root, wave_speed, Boundary, RadialProblem, RdeProblem,
};
use crate::rng::{derive_key64, Label, SubRng};
use crate::stats::linear_fit;

// ---------------------------------------------------------------------------
// Experiment names and configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    CheckG,
    Iterate,
    BbmInterface,
    DualVote,
    Forward,
    DualityCheck,
    Collisions,
    Coupling,
    PdeFront,
    PdeCircle,
    McfCheck,
    PartitionLaw,
}

pub const ALL_EXPERIMENTS: [ExperimentKind; 12] = [
    ExperimentKind::CheckG,
    ExperimentKind::Iterate,
    ExperimentKind::BbmInterface,
    ExperimentKind::DualVote,
    ExperimentKind::Forward,
    ExperimentKind::DualityCheck,
    ExperimentKind::Collisions,
    ExperimentKind::Coupling,
    ExperimentKind::PdeFront,
    ExperimentKind::PdeCircle,
    ExperimentKind::McfCheck,
    ExperimentKind::PartitionLaw,
];

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::CheckG => "check-g",
            ExperimentKind::Iterate => "iterate",
            ExperimentKind::BbmInterface => "bbm-interface",
            ExperimentKind::DualVote => "dual-vote",
            ExperimentKind::Forward => "forward",
            ExperimentKind::DualityCheck => "duality-check",
            ExperimentKind::Collisions => "collisions",
            ExperimentKind::Coupling => "coupling",
            ExperimentKind::PdeFront => "pde-front",
            ExperimentKind::PdeCircle => "pde-circle",
            ExperimentKind::McfCheck => "mcf-check",
            ExperimentKind::PartitionLaw => "partition-law",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        ALL_EXPERIMENTS
            .iter()
            .copied()
            .find(|k| k.name() == name)
            .ok_or_else(|| {
                let valid: Vec<&str> = ALL_EXPERIMENTS.iter().map(|k| k.name()).collect();
                Error::ConfigError(format!(
                    "experiment: unknown name {name:?}; valid names are {}",
                    valid.join(", ")
                ))
            })
    }

    /// Whether the experiment consumes random numbers (and therefore
    /// requires an explicit seed).
    pub fn is_stochastic(&self) -> bool {
        !matches!(
            self,
            ExperimentKind::CheckG
                | ExperimentKind::Iterate
                | ExperimentKind::PdeFront
                | ExperimentKind::PdeCircle
        )
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scaling parameters as they appear in configuration files; optional
/// entries fall back to the model defaults of [`ScalingParams::for_model`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    pub delta: f64,
    pub eps: f64,
    pub torus_side: usize,
    pub dimension: usize,
    #[serde(default)]
    pub stir_rate: Option<f64>,
    #[serde(default)]
    pub event_rate: Option<f64>,
    #[serde(default)]
    pub voter_range: Option<usize>,
    #[serde(default)]
    pub event_budget: Option<u64>,
}

impl ScalingConfig {
    pub fn resolve(&self, model: &ModelSpec) -> Result<ScalingParams> {
        let mut p =
            ScalingParams::for_model(model, self.delta, self.eps, self.torus_side, self.dimension)?;
        if let Some(s) = self.stir_rate {
            p = p.with_stir_rate(s)?;
        }
        if let Some(e) = self.event_rate {
            p = p.with_event_rate(e)?;
        }
        if let Some(l) = self.voter_range {
            p = p.with_voter_range(l)?;
        }
        if let Some(b) = self.event_budget {
            p = p.with_event_budget(b);
        }
        Ok(p)
    }

    fn from_params(p: &ScalingParams) -> Self {
        ScalingConfig {
            delta: p.delta,
            eps: p.eps,
            torus_side: p.torus_side,
            dimension: p.dimension,
            stir_rate: Some(p.stir_rate),
            event_rate: Some(p.event_rate),
            voter_range: Some(p.voter_range),
            event_budget: Some(p.event_budget),
        }
    }
}

/// A named experiment with its inputs. Unset fields take experiment
/// defaults; the resolved values are echoed into `config.json` next to the
/// results.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub scaling: Option<ScalingConfig>,
    #[serde(default)]
    pub trials: Option<u64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Experiment-specific time horizon (theorem time for bbm-interface,
    /// simulation horizon elsewhere).
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Site probability of the product initial law (forward, dual-vote,
    /// duality-check).
    #[serde(default)]
    pub init_prob: Option<f64>,
    /// Probe sites for dual-vote and duality-check.
    #[serde(default)]
    pub probe_sites: Option<Vec<usize>>,
    /// Named tolerance overrides, e.g. {"duality-z": 4.0}.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::ConfigError(format!("configuration parse failure: {e}")))
    }

    pub fn named(experiment: ExperimentKind) -> Self {
        ExperimentConfig { experiment: Some(experiment), ..Default::default() }
    }

    fn tol(&self, key: &str, default: f64) -> f64 {
        self.tolerances.get(key).copied().unwrap_or(default)
    }

    fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| {
            Error::ConfigError("seed: stochastic experiments require an explicit seed".into())
        })
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct SummaryLine {
    pub id: String,
    pub pass: bool,
    pub measured: f64,
    pub bound: f64,
}

impl SummaryLine {
    fn new(id: &str, pass: bool, measured: f64, bound: f64) -> Self {
        SummaryLine { id: id.to_string(), pass, measured, bound }
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub experiment: ExperimentKind,
    pub output_dir: PathBuf,
    pub summary: Vec<SummaryLine>,
    pub files: Vec<PathBuf>,
    pub pass: bool,
}

struct ExpOutput {
    /// Resolved parameters, echoed verbatim into config.json.
    echo: serde_json::Value,
    /// (file name, file body) pairs; .csv bodies are RFC-4180.
    files: Vec<(String, String)>,
    summary: Vec<SummaryLine>,
}

// ---------------------------------------------------------------------------
// CSV plumbing
// ---------------------------------------------------------------------------

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') || s.contains('\r') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Render rows as RFC-4180 CSV (CRLF line endings, header mandatory).
fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(&header.iter().map(|h| csv_field(h)).collect::<Vec<_>>().join(","));
    out.push_str("\r\n");
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        out.push_str(&row.iter().map(|f| csv_field(f)).collect::<Vec<_>>().join(","));
        out.push_str("\r\n");
    }
    out
}

fn fnum(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

fn model_slug(model: &ModelSpec) -> String {
    match model {
        ModelSpec::Majority => "majority".into(),
        ModelSpec::SexualReproduction { beta } => format!("sexual-beta{beta}"),
        ModelSpec::LotkaVolterraBoundary { theta, p3, .. } => format!("lv-theta{theta}-p{p3}"),
        ModelSpec::NonlinearVoter { a1, a2, .. } => format!("nlv-a{a1}-a{a2}"),
        ModelSpec::CustomCubic { c, .. } => format!("cubic-c{c}"),
    }
}

/// The dual voting rule matching a model family.
pub fn vote_rule_for(model: &ModelSpec) -> Result<VoteRule> {
    match model {
        ModelSpec::SexualReproduction { beta } => Ok(VoteRule::SexualBirthDeath { beta: *beta }),
        ModelSpec::Majority | ModelSpec::LotkaVolterraBoundary { .. } => Ok(VoteRule::Majority),
        ModelSpec::NonlinearVoter { a1, a2, .. } => Ok(VoteRule::NonlinearVoter {
            a1: *a1,
            a2: *a2,
            partitions: PartitionSource::Singletons,
        }),
        ModelSpec::CustomCubic { .. } => Err(Error::InvalidSpec(
            "the custom cubic family has no canonical branching vote".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Run one experiment: validates the configuration, executes, and writes
/// `config.json`, result CSVs, `summary.csv`, and `metadata.txt` into the
/// output directory. The returned report carries the summary; the run
/// "passes" iff every targeted check passes.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunReport> {
    let kind = config
        .experiment
        .ok_or_else(|| Error::ConfigError("experiment: missing (no experiment selected)".into()))?;
    if kind.is_stochastic() {
        config.require_seed()?;
    }
    let out = run_dispatch(kind, config)?;

    let dir = resolve_output_dir(config);
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::ConfigError(format!("output_dir: cannot create {dir:?}: {e}")))?;
    let mut files = Vec::new();

    let echo = serde_json::to_string_pretty(&serde_json::json!({
        "experiment": kind.name(),
        "resolved": out.echo,
        "tolerances": config.tolerances,
    }))
    .map_err(|e| Error::ConfigError(format!("config echo serialization: {e}")))?;
    files.push(write_file(&dir, "config.json", &echo)?);

    for (name, body) in &out.files {
        files.push(write_file(&dir, name, body)?);
    }

    let summary_rows: Vec<Vec<String>> = out
        .summary
        .iter()
        .map(|line| {
            vec![
                line.id.clone(),
                if line.pass { "pass".into() } else { "fail".into() },
                fnum(line.measured),
                fnum(line.bound),
            ]
        })
        .collect();
    files.push(write_file(
        &dir,
        "summary.csv",
        &csv_table(&["id", "status", "measured", "bound"], &summary_rows),
    )?);

    // Timestamps live here and only here, so result files are
    // byte-identical across reruns.
    let now = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = format!(
        "unix_time_seconds: {now}\npackage_version: {}\n",
        env!("CARGO_PKG_VERSION")
    );
    files.push(write_file(&dir, "metadata.txt", &meta)?);

    let pass = out.summary.iter().all(|l| l.pass);
    Ok(RunReport { experiment: kind, output_dir: dir, summary: out.summary, files, pass })
}

fn resolve_output_dir(config: &ExperimentConfig) -> PathBuf {
    if let Some(dir) = &config.output_dir {
        return dir.clone();
    }
    if let Ok(dir) = std::env::var("STIRFLOW_OUT") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from("stirflow-out")
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, body)
        .map_err(|e| Error::ConfigError(format!("cannot write {path:?}: {e}")))?;
    Ok(path)
}

fn run_dispatch(kind: ExperimentKind, config: &ExperimentConfig) -> Result<ExpOutput> {
    match kind {
        ExperimentKind::CheckG => exp_check_g(config),
        ExperimentKind::Iterate => exp_iterate(config),
        ExperimentKind::BbmInterface => exp_bbm_interface(config),
        ExperimentKind::DualVote => exp_dual_vote(config),
        ExperimentKind::Forward => exp_forward(config),
        ExperimentKind::DualityCheck => exp_duality_check(config),
        ExperimentKind::Collisions => exp_collisions(config),
        ExperimentKind::Coupling => exp_coupling(config),
        ExperimentKind::PdeFront => exp_pde_front(config),
        ExperimentKind::PdeCircle => exp_pde_circle(config),
        ExperimentKind::McfCheck => exp_mcf_check(config),
        ExperimentKind::PartitionLaw => exp_partition_law(config),
    }
}

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

/// Admissibility conditions for the configured model, or the four
/// reference families when no model is given.
fn exp_check_g(config: &ExperimentConfig) -> Result<ExpOutput> {
    let models: Vec<ModelSpec> = match &config.model {
        Some(m) => vec![*m],
        None => reference_specs().into_iter().take(4).collect(),
    };
    let grid = 2001usize;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for model in &models {
        let g = make_g(*model)?;
        let report = check_conditions(&g, grid)?;
        let mut failed = 0u64;
        for e in &report.entries {
            if !e.pass {
                failed += 1;
            }
            rows.push(vec![
                model_slug(model),
                e.name.clone(),
                if e.pass { "pass".into() } else { "fail".into() },
                e.witness_p.map(fnum).unwrap_or_default(),
                e.witness_value.map(fnum).unwrap_or_default(),
                e.detail.clone(),
            ]);
        }
        summary.push(SummaryLine::new(
            &format!("1/{}", model_slug(model)),
            failed == 0,
            failed as f64,
            0.0,
        ));
    }
    Ok(ExpOutput {
        echo: serde_json::json!({ "models": models, "grid": grid }),
        files: vec![(
            "check-g.csv".into(),
            csv_table(
                &["model", "condition", "status", "witness_p", "witness_value", "detail"],
                &rows,
            ),
        )],
        summary,
    })
}

/// Iteration-count scaling of g-iteration toward the stable fixed points:
/// steps to reach within ε^k of u_± grow like A·|log ε| + B.
fn exp_iterate(config: &ExperimentConfig) -> Result<ExpOutput> {
    let model = config.model.unwrap_or(ModelSpec::SexualReproduction { beta: 4.5 });
    let g = make_g(model)?;
    let eps_grid = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    let k = 2u32;
    let mut rows = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut max_gap = 0i64;
    for &eps in &eps_grid {
        let up = convergence_steps(&g, eps, k)?;
        let down = convergence_steps_down(&g, eps, k)?;
        max_gap = max_gap.max((up as i64 - down as i64).abs());
        xs.push(-(eps as f64).ln());
        ys.push(up as f64);
        rows.push(vec![fnum(eps), up.to_string(), down.to_string()]);
    }
    let fit = linear_fit(&xs, &ys)?;
    let r2_bound = config.tol("r2", 0.99);
    let summary = vec![
        SummaryLine::new("3/log-eps-fit", fit.r2 >= r2_bound, fit.r2, r2_bound),
        SummaryLine::new("3/up-down-symmetry", max_gap == 0, max_gap as f64, 0.0),
    ];
    Ok(ExpOutput {
        echo: serde_json::json!({
            "model": model, "eps_grid": eps_grid, "k": k,
            "fit_slope": fit.slope, "fit_intercept": fit.intercept, "fit_r2": fit.r2,
        }),
        files: vec![(
            "iterate.csv".into(),
            csv_table(&["eps", "steps_up", "steps_down"], &rows),
        )],
        summary,
    })
}

/// One-dimensional interface profile of the dual branching walk with step
/// initial data, with plateau, antisymmetry, monotonicity, and
/// single-particle lower-bound checks.
fn exp_bbm_interface(config: &ExperimentConfig) -> Result<ExpOutput> {
    let seed = config.require_seed()?;
    let model = config.model.unwrap_or(ModelSpec::SexualReproduction { beta: 4.5 });
    let rule = vote_rule_for(&model)?;
    let g = make_g(model)?;
    let fp = fixed_points(&g)?;
    let eps = 0.1f64;
    let trials = config.trials.unwrap_or(20_000);
    let theorem_times: Vec<f64> = match config.horizon {
        Some(t) => vec![t],
        None => vec![0.25, 1.0],
    };
    let z_grid = [-1.0, -0.5, -0.1, 0.0, 0.1, 0.5, 1.0];
    let plateau_tol = config.tol("plateau", 0.02);
    let anti_bound = config.tol("antisymmetry-z", 3.0);

    let mut rows = Vec::new();
    let mut plateau_high_worst = f64::INFINITY;
    let mut plateau_low_worst = f64::NEG_INFINITY;
    let mut anti_worst = 0.0f64;
    let mut bound_margin = f64::INFINITY;
    for (ti, &t) in theorem_times.iter().enumerate() {
        // The dual clock runs at rate ε⁻²·r; theorem time t corresponds
        // to horizon ε²·t of the unit-rate parameterization.
        let params = BbmParams::for_model(
            &model,
            eps,
            1,
            eps * eps * t,
            InitCond::Step { u_minus: fp.u_minus, u_plus: fp.u_plus },
        )?;
        let t_seed = derive_key64(seed, &[Label::Name("bbm-interface"), Label::Count(ti as u64)]);
        let thresholds = crate::bbm::sample_interface_thresholds(&params, &rule, trials, t_seed)?;
        for &z in &z_grid {
            let est = crate::bbm::threshold_cdf(&thresholds, z)?;
            let lower = if z >= 0.0 {
                crate::bbm::one_particle_bound(z, &params, fp.u_minus, fp.u_plus)
            } else {
                f64::NAN
            };
            if z >= 0.0 {
                bound_margin = bound_margin.min(est.value + 3.0 * est.stderr - lower);
            }
            rows.push(vec![fnum(t), fnum(z), fnum(est.value), fnum(est.stderr), fnum(lower)]);
        }
        let high = crate::bbm::threshold_cdf(&thresholds, 1.0)?.value;
        let low = crate::bbm::threshold_cdf(&thresholds, -1.0)?.value;
        plateau_high_worst = plateau_high_worst.min(high);
        plateau_low_worst = plateau_low_worst.max(low);
        // Paired antisymmetry: the per-trial statistic 1{T≤z} + 1{T≤-z}
        // has mean u_- + u_+ = 2·u_0 under the interface symmetry.
        for &z in &[0.1, 0.5, 1.0] {
            let mut sum = 0.0f64;
            let mut sumsq = 0.0f64;
            for &th in &thresholds {
                let v = (th <= z) as u8 + (th <= -z) as u8;
                sum += v as f64;
                sumsq += (v * v) as f64;
            }
            let n = thresholds.len() as f64;
            let mean = sum / n;
            let var = (sumsq / n - mean * mean).max(0.0);
            let se = (var / n).sqrt();
            let zscore = (mean - 2.0 * fp.u_zero) / se.max(1e-300);
            anti_worst = anti_worst.max(zscore.abs());
        }
    }
    let summary = vec![
        SummaryLine::new(
            "5/plateau-high",
            plateau_high_worst >= fp.u_plus - plateau_tol,
            plateau_high_worst,
            fp.u_plus - plateau_tol,
        ),
        SummaryLine::new(
            "5/plateau-low",
            plateau_low_worst <= fp.u_minus + plateau_tol,
            plateau_low_worst,
            fp.u_minus + plateau_tol,
        ),
        SummaryLine::new("5/antisymmetry", anti_worst <= anti_bound, anti_worst, anti_bound),
        // Common random numbers give one threshold ensemble per horizon,
        // whose empirical CDF is monotone identically.
        SummaryLine::new("5/monotone", true, 0.0, 0.0),
        SummaryLine::new("5/one-particle-bound", bound_margin >= 0.0, bound_margin, 0.0),
    ];
    Ok(ExpOutput {
        echo: serde_json::json!({
            "model": model, "eps": eps, "trials": trials, "seed": seed,
            "theorem_times": theorem_times, "z_grid": z_grid,
            "u_minus": fp.u_minus, "u_zero": fp.u_zero, "u_plus": fp.u_plus,
        }),
        files: vec![(
            "bbm-interface.csv".into(),
            csv_table(&["t", "z", "estimate", "stderr", "one_particle_lower_bound"], &rows),
        )],
        summary,
    })
}

/// Monte Carlo dual-vote marginal on the torus from a constant product
/// initial law at the upper stable density.
fn exp_dual_vote(config: &ExperimentConfig) -> Result<ExpOutput> {
    let seed = config.require_seed()?;
    let model = config.model.unwrap_or(ModelSpec::SexualReproduction { beta: 4.5 });
    let scaling = match &config.scaling {
        Some(s) => s.resolve(&model)?,
        None => ScalingParams::for_model(&model, 0.1, 0.5, 16, 2)?,
    };
    let horizon = config.horizon.unwrap_or(0.2);
    let trials = config.trials.unwrap_or(2000);
    let fp = fixed_points(&make_g(model)?)?;
    let p = config.init_prob.unwrap_or(fp.u_plus);
    let probes = config.probe_sites.clone().unwrap_or_else(|| vec![0]);
    let mut rows = Vec::new();
    let mut worst_z = 0.0f64;
    for (k, &site) in probes.iter().enumerate() {
        let site_seed = derive_key64(seed, &[Label::Name("dual-vote"), Label::Count(k as u64)]);
        let est = dual_vote_estimate(&model, &scaling, site, horizon, &|_| p, trials, site_seed)?;
        let z = (est.value - fp.u_plus) / est.stderr.max(1e-300);
        if (p - fp.u_plus).abs() < 1e-12 {
            worst_z = worst_z.max(z.abs());
        }
        rows.push(vec![
            site.to_string(),
            fnum(p),
            fnum(est.value),
            fnum(est.stderr),
            est.trials.to_string(),
        ]);
    }
    let z_bound = config.tol("fixed-point-z", 4.0);
    let summary = if (p - fp.u_plus).abs() < 1e-12 {
        vec![SummaryLine::new("dual-vote/fixed-point", worst_z <= z_bound, worst_z, z_bound)]
    } else {
        vec![SummaryLine::new("dual-vote/completed", true, rows.len() as f64, 0.0)]
    };
    Ok(ExpOutput {
        echo: serde_json::json!({
            "model": model, "scaling": ScalingConfig::from_params(&scaling),
            "horizon": horizon, "trials": trials, "seed": seed,
            "init_prob": p, "probe_sites": probes,
        }),
        files: vec![(
            "dual-vote.csv".into(),
            csv_table(&["site", "init_prob", "estimate", "stderr", "trials"], &rows),
        )],
        summary,
    })
}

/// Forward lattice simulation with grid dumps and an event log.
fn exp_forward(config: &ExperimentConfig) -> Result<ExpOutput> {
    let seed = config.require_seed()?;
    let model = config.model.unwrap_or(ModelSpec::SexualReproduction { beta: 4.5 });
    let scaling = match &config.scaling {
        Some(s) => s.resolve(&model)?,
        None => ScalingParams::for_model(&model, 0.1, 0.5, 16, 2)?,
    };
    let horizon = config.horizon.unwrap_or(0.1);
    let p = config.init_prob.unwrap_or(0.5);
    let mut init_rng = SubRng::new(derive_key64(seed, &[Label::Name("forward-init")]));
    let init = LatticeConfig::product_bernoulli(
        model,
        scaling.torus_side,
        scaling.dimension,
        &vec![p; scaling.n_sites()],
        &mut init_rng,
    )?;
    let run_seed = derive_key64(seed, &[Label::Name("forward-run")]);
    let times: Vec<f64> = (0..=4).map(|k| horizon * k as f64 / 4.0).collect();
    let (_, snaps) = run_forward_snapshots(&model, &scaling, &init, horizon, run_seed, &times)?;
    let (end, log) = run_forward_logged(&model, &scaling, &init, horizon, run_seed)?;
    let count_rows: Vec<Vec<String>> = snaps
        .iter()
        .map(|s| vec![fnum(s.time), s.count_ones().to_string()])
        .collect();
    let log_row = vec![vec![
        log.events.to_string(),
        log.flips_to_one.to_string(),
        log.flips_to_zero.to_string(),
        log.exchanges.to_string(),
        log.voter_updates.to_string(),
        log.perturbations.to_string(),
        log.min_count.to_string(),
        log.max_count.to_string(),
        log.extinction_time.map(fnum).unwrap_or_default(),
        end.count_ones().to_string(),
    ]];
    Ok(ExpOutput {
        echo: serde_json::json!({
            "model": model, "scaling": ScalingConfig::from_params(&scaling),
            "horizon": horizon, "seed": seed, "init_prob": p,
        }),
        files: vec![
            ("forward.csv".into(), csv_table(&["time", "occupied"], &count_rows)),
            (
                "forward-log.csv".into(),
                csv_table(
                    &[
                        "events",
                        "flips_to_one",
                        "flips_to_zero",
                        "exchanges",
                        "voter_updates",
                        "perturbations",
                        "min_count",
                        "max_count",
                        "extinction_time",
                        "final_count",
                    ],
                    &log_row,
                ),
            ),
            ("grid-initial.txt".into(), dump_grid(&init)),
            ("grid-final.txt".into(), dump_grid(&end)),
        ],
        summary: vec![SummaryLine::new(
            "forward/events-within-budget",
            log.events <= scaling.event_budget,
            log.events as f64,
            scaling.event_budget as f64,
        )],
    })
}

/// Forward-vs-dual marginal comparison at probe sites (the duality
/// oracle).
fn exp_duality_check(config: &ExperimentConfig) -> Result<ExpOutput> {
    let seed = config.require_seed()?;
    let model = config.model.unwrap_or(ModelSpec::SexualReproduction { beta: 4.5 });
    let scaling = match &config.scaling {
        Some(s) => s.resolve(&model)?,
        None => ScalingParams::for_model(&model, 0.1, 0.5, 16, 2)?,
    };
    let horizon = config.horizon.unwrap_or(0.2);
    let trials = config.trials.unwrap_or(10_000);
    let p = config.init_prob.unwrap_or(0.5);
    let probes = config.probe_sites.clone().unwrap_or_else(|| {
        let side = scaling.torus_side;
        vec![0, side / 4 * (side + 1), side / 2 * (side + 1), 3 * side / 4 * (side + 1)]
    });
    let init = ProductMeasure::uniform(model, scaling.torus_side, scaling.dimension, p)?;
    let report = duality_check(&model, &scaling, &init, &probes, horizon, trials, trials, seed)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.site.to_string(),
                fnum(r.forward.value),
                fnum(r.forward.stderr),
                fnum(r.dual.value),
                fnum(r.dual.stderr),
                fnum(r.z),
            ]
        })
        .collect();
    let bound = config.tol("duality-z", 4.0);
    Ok(ExpOutput {
        echo: serde_json::json!({
            "model": model, "scaling": ScalingConfig::from_params(&scaling),
            "horizon": horizon, "trials": trials, "seed": seed,
            "init_prob": p, "probe_sites": probes,
        }),
        files: vec![(
            "duality-check.csv".into(),
            csv_table(
                &["site", "forward", "forward_stderr", "dual", "dual_stderr", "z"],
                &rows,
            ),
        )],
        summary: vec![SummaryLine::new(
            "6/duality-z",
            report.max_abs_z <= bound,
            report.max_abs_z,
            bound,
        )],
    })
}

/// Collision probability sweep of the stirring-family dual across η.
fn exp_collisions(config: &ExperimentConfig) -> Result<ExpOutput> {
    let seed = config.require_seed()?;
    let model = config.model.unwrap_or(ModelSpec::SexualReproduction { beta: 4.5 });
    let trials = config.trials.unwrap_or(6000);
    let horizon = config.horizon.unwrap_or(0.1);
    let scalings: Vec<ScalingParams> = match &config.scaling {
        Some(s) => vec![s.resolve(&model)?],
        None => {
            // ε large enough that trees stay small (a few births per
            // trial), so the per-birth collision probability is not
            // saturated and the η-dependence is visible.
            let eps = 0.7;
            [0.05f64, 0.02, 0.01]
                .iter()
                .map(|&eta| ScalingParams::for_model(&model, eta / eps, eps, 64, 2))
                .collect::<Result<Vec<_>>>()?
        }
    };
    let rows_data = collision_stats(&model, &scalings, 0, horizon, trials, seed)?;
    let rows: Vec<Vec<String>> = rows_data
        .iter()
        .map(|r| {
            vec![
                fnum(r.eta),
                fnum(r.collision_prob.value),
                fnum(r.collision_prob.stderr),
                fnum(r.crowded_fraction),
                fnum(r.theory_scale),
                r.trials.to_string(),
            ]
        })
        .collect();
    let sep_bound = config.tol("collision-separation", 3.0);
    let mut min_ratio = f64::INFINITY;
    for pair in rows_data.windows(2) {
        let gap = pair[0].collision_prob.value - pair[1].collision_prob.value;
        let se = (pair[0].collision_prob.stderr.powi(2) + pair[1].collision_prob.stderr.powi(2))
            .sqrt()
            .max(1e-300);
        min_ratio = min_ratio.min(gap / se);
    }
    let pass = rows_data.len() < 2 || min_ratio >= sep_bound;
    Ok(ExpOutput {
        echo: serde_json::json!({
            "model": model, "trials": trials, "seed": seed, "horizon": horizon,
            "etas": rows_data.iter().map(|r| r.eta).collect::<Vec<_>>(),
        }),
        files: vec![(
            "collisions.csv".into(),
            csv_table(
                &["eta", "collision_prob", "stderr", "crowded_fraction", "theory_scale", "trials"],
                &rows,
            ),
        )],
        summary: vec![SummaryLine::new(
            "7/collision-monotone",
            pass,
            if min_ratio.is_finite() { min_ratio } else { 0.0 },
            sep_bound,
        )],
    })
}

/// Walk-vs-Brownian coupling diagnostics: stirring-lineage KS, voter-walk
/// variance convention, and voter dual/comparison divergence frequency.
fn exp_coupling(config: &ExperimentConfig) -> Result<ExpOutput> {
    let seed = config.require_seed()?;
    let ks_trials = config.trials.unwrap_or(10_000);
    let sexual = ModelSpec::SexualReproduction { beta: 4.5 };
    let nlv = ModelSpec::NonlinearVoter { a1: 0.25, a2: 0.3, enforce_region2: false };
    let mut rows = Vec::new();
    let mut summary = Vec::new();

    // Single stirring lineage in d = 1 at η = 1e-3.
    let s1 = ScalingParams::for_model(&sexual, 2e-3, 0.5, 16, 1)?;
    let ks = walk_vs_bm_diagnostic(&s1, WalkKind::Stirring, 0.01, ks_trials, seed)?;
    rows.push(vec![
        "stirring-ks".into(),
        fnum(ks.ks_statistic),
        fnum(ks.ks_critical_1pct),
        (ks.ks_statistic < ks.ks_critical_1pct).to_string(),
    ]);
    summary.push(SummaryLine::new(
        "7/walk-ks",
        ks.ks_statistic < ks.ks_critical_1pct,
        ks.ks_statistic,
        ks.ks_critical_1pct,
    ));

    // Voter walk per-coordinate variance in d = 2 against σ² = 1/d.
    let s2 = ScalingParams::for_model(&nlv, 0.02, 0.5, 16, 2)?;
    let var_trials = config.trials.map(|t| 8 * t).unwrap_or(80_000);
    let vd = walk_vs_bm_diagnostic(
        &s2,
        WalkKind::Voter,
        0.02,
        var_trials,
        derive_key64(seed, &[Label::Name("coupling-variance")]),
    )?;
    let rel = (vd.variance_per_coord / vd.variance_theory - 1.0).abs();
    let var_tol = config.tol("variance", 0.02);
    rows.push(vec![
        "voter-variance-rel-dev".into(),
        fnum(rel),
        fnum(var_tol),
        (rel <= var_tol).to_string(),
    ]);
    summary.push(SummaryLine::new("7/voter-variance", rel <= var_tol, rel, var_tol));

    // Voter dual vs comparison process: divergence before the horizon
    // should be rare at the reference scaling.
    let s3 = ScalingParams::for_model(&nlv, 8e-4, 2.5, 16, 3)?;
    let div_trials = config.trials.map(|t| t / 25).unwrap_or(400).max(100);
    let mut diverged = 0u64;
    for trial in 0..div_trials {
        let run_seed =
            derive_key64(seed, &[Label::Name("coupling-divergence"), Label::Count(trial)]);
        let real = crate::lattice::run_dual(&nlv, &s3, 0, 0.4, run_seed)?;
        if real.divergence_s.is_some() {
            diverged += 1;
        }
    }
    let frac = diverged as f64 / div_trials as f64;
    let div_tol = config.tol("divergence", 0.05);
    rows.push(vec![
        "voter-divergence-fraction".into(),
        fnum(frac),
        fnum(div_tol),
        (frac < div_tol).to_string(),
    ]);
    summary.push(SummaryLine::new("coupling/divergence", frac < div_tol, frac, div_tol));

    Ok(ExpOutput {
        echo: serde_json::json!({
            "seed": seed, "ks_trials": ks_trials, "variance_trials": var_trials,
            "divergence_trials": div_trials,
        }),
        files: vec![(
            "coupling.csv".into(),
            csv_table(&["check", "measured", "bound", "pass"], &rows),
        )],
        summary,
    })
}

fn sr_dt(beta: f64, eps: f64, diffusion: f64, h: f64, dim: usize) -> f64 {
    // max |φ'| on [0,1] for φ = -u + β u²(1-u) is 1 + β (attained at 1).
    let diff_cap = h * h / (2.0 * dim as f64 * diffusion);
    let react_cap = 0.5 * eps * eps / (1.0 + beta);
    0.9 * diff_cap.min(react_cap)
}

/// 1-D front speeds across β with the exact integral-sign oracle.
fn exp_pde_front(config: &ExperimentConfig) -> Result<ExpOutput> {
    let eps = 0.05f64;
    let diffusion = 0.5f64;
    let h = 0.01f64;
    let n = 801usize;
    let betas = [4.2f64, 4.5, 5.0];
    let speed_tol = config.tol("zero-speed", 0.02);
    let mut rows = Vec::new();
    let mut all_pass = true;
    let mut zero_speed = f64::NAN;
    let mut sign_ok = true;
    for &beta in &betas {
        let model = ModelSpec::SexualReproduction { beta };
        let phi = forward_phi(&model)?;
        let u_plus = fixed_points(&make_g(model)?)?.u_plus;
        let init = step_1d(n, h, Boundary::Neumann, 4.0, u_plus, 0.0)?;
        let dt = sr_dt(beta, eps, diffusion, h, 1);
        let problem = RdeProblem::new(phi.poly.clone(), eps, diffusion, dt, init)?;
        let horizon = if (beta - 4.5).abs() < 1e-12 {
            config.horizon.unwrap_or(3.0)
        } else {
            0.5
        };
        let track = wave_speed(&problem, horizon)?;
        let integral = integral_sign_f64(&phi.poly, u_plus)?;
        // The rational integral is exact in its inputs, but the upper root
        // enters as an f64; its rounding perturbs a true zero to ~1e-28.
        // Any genuinely nonzero integral for these cubics is ~1e-2, so
        // magnitudes below 1e-12 are zero at input resolution.
        let isign = if integral.value_f64().abs() <= 1e-12 { 0 } else { integral.sign };
        let this_sign_ok = if isign == 0 {
            track.speed.abs() <= speed_tol
        } else {
            track.speed * isign as f64 > 0.0
        };
        sign_ok &= this_sign_ok;
        if (beta - 4.5).abs() < 1e-12 {
            zero_speed = track.speed;
            all_pass &= track.speed.abs() <= speed_tol;
        } else if beta < 4.5 {
            all_pass &= track.speed < 0.0;
        } else {
            all_pass &= track.speed > 0.0;
        }
        rows.push(vec![
            fnum(beta),
            fnum(track.speed),
            fnum(integral.value_f64()),
            isign.to_string(),
            this_sign_ok.to_string(),
        ]);
    }
    let summary = vec![
        SummaryLine::new("8/zero-speed", zero_speed.abs() <= speed_tol, zero_speed.abs(), speed_tol),
        SummaryLine::new("8/sign-rule", all_pass, if all_pass { 1.0 } else { 0.0 }, 1.0),
        SummaryLine::new("8/integral-sign", sign_ok, if sign_ok { 1.0 } else { 0.0 }, 1.0),
    ];
    Ok(ExpOutput {
        echo: serde_json::json!({
            "betas": betas, "eps": eps, "diffusion": diffusion, "h": h, "n": n,
        }),
        files: vec![(
            "pde-front.csv".into(),
            csv_table(&["beta", "speed", "integral", "integral_sign", "sign_match"], &rows),
        )],
        summary,
    })
}

/// 2-D shrinking circle against the fine radial oracle: R² slope,
/// pointwise radii, and the two-phase plateau structure.
fn exp_pde_circle(config: &ExperimentConfig) -> Result<ExpOutput> {
    let beta = 4.5f64;
    let model = ModelSpec::SexualReproduction { beta };
    let eps = 0.02f64;
    let diffusion = 0.5f64;
    let h = 0.01f64;
    let r0 = 1.0f64;
    let half = 1.9f64;
    let n = (2.0 * half / h).round() as usize + 1;
    let horizon = config.horizon.unwrap_or(0.6);
    let phi = forward_phi(&model)?;
    let fp = fixed_points(&make_g(model)?)?;
    let level = unstable_root(&phi.poly)?;

    let init = disk_2d(n, n, h, Boundary::Neumann, half, half, r0, fp.u_plus, fp.u_minus)?;
    let dt = sr_dt(beta, eps, diffusion, h, 2);
    let problem = RdeProblem::new(phi.poly.clone(), eps, diffusion, dt, init)?;
    let snapshots = 13usize;
    let traj = solve_with_snapshots(&problem, horizon, snapshots)?;

    let radial = RadialProblem {
        phi: phi.poly.clone(),
        eps,
        diffusion,
        dimension: 2,
        r_max: half,
        n: 1900,
        dt: 9e-7,
    };
    let u_plus = fp.u_plus;
    let u_minus = fp.u_minus;
    let radial_sol = solve_radial(
        &radial,
        |r| if r < r0 { u_plus } else { u_minus },
        horizon,
        snapshots,
    )?;

    let margin = 10.0 * eps * (1.0 / eps).ln();
    let mut rows = Vec::new();
    let mut fit_t = Vec::new();
    let mut fit_r2_field = Vec::new();
    let mut fit_r2_radial = Vec::new();
    let mut max_rel = 0.0f64;
    let mut max_plateau_dev = 0.0f64;
    for (k, (&t, field)) in traj.times.iter().zip(&traj.fields).enumerate() {
        let r_field = level_set_radius(field, level);
        let r_rad = radial_sol.front_radius(k, level);
        let (rf, rr) = match (r_field, r_rad) {
            (Some(a), Some(b)) => (a, b),
            _ => continue,
        };
        let rel = (rf - rr).abs() / rr;
        rows.push(vec![fnum(t), fnum(rf), fnum(rr), fnum(rel)]);
        if t >= 0.1 - 1e-12 {
            fit_t.push(t);
            fit_r2_field.push(rf * rf);
            fit_r2_radial.push(rr * rr);
            max_rel = max_rel.max(rel);
        }
        // Plateau structure: away from the front by the interface margin,
        // u sits at the stable levels (checked while the circle is still
        // large enough to own an interior plateau).
        if rr >= 0.78 {
            for j in 0..field.ny() {
                for i in 0..field.nx() {
                    let x = field.x(i) - half;
                    let y = field.y(j) - half;
                    let r = (x * x + y * y).sqrt();
                    let u = field.get(i, j);
                    if r <= rr - margin {
                        max_plateau_dev = max_plateau_dev.max((u - u_plus).abs());
                    } else if r >= rr + margin {
                        max_plateau_dev = max_plateau_dev.max((u - u_minus).abs());
                    }
                }
            }
        }
    }
    let fit_field = linear_fit(&fit_t, &fit_r2_field)?;
    let fit_radial = linear_fit(&fit_t, &fit_r2_radial)?;
    let slope_rel = (fit_field.slope / fit_radial.slope - 1.0).abs();
    let slope_tol = config.tol("slope", 0.10);
    let point_tol = config.tol("pointwise", 0.05);
    let plateau_tol = config.tol("plateau-u", 0.02);
    let summary = vec![
        SummaryLine::new("9/r-squared-slope", slope_rel <= slope_tol, slope_rel, slope_tol),
        SummaryLine::new("9/pointwise-radius", max_rel <= point_tol, max_rel, point_tol),
        SummaryLine::new("9/plateau", max_plateau_dev <= plateau_tol, max_plateau_dev, plateau_tol),
    ];
    Ok(ExpOutput {
        echo: serde_json::json!({
            "model": model, "eps": eps, "diffusion": diffusion, "h": h,
            "r0": r0, "domain_half": half, "horizon": horizon,
            "radial_cells": radial.n, "plateau_margin": margin,
            "slope_field": fit_field.slope, "slope_radial": fit_radial.slope,
        }),
        files: vec![(
            "pde-circle.csv".into(),
            csv_table(&["t", "radius_2d", "radius_radial", "rel_diff"], &rows),
        )],
        summary,
    })
}

/// Signed-distance regularity identities for reference mean-curvature
/// flows (planes and spheres in d = 2, 3).
fn exp_mcf_check(config: &ExperimentConfig) -> Result<ExpOutput> {
    let seed = config.require_seed()?;
    let samples = config.trials.unwrap_or(1000) as usize;
    let d_coeff = 0.5f64;
    let residual_tol = config.tol("residual", 1e-6);
    let cases: Vec<(String, FlowSpec, f64)> = vec![
        (
            "half-plane-d2".into(),
            FlowSpec::new(
                Shape::HalfPlane { normal: vec![1.0, 0.0], offset: 0.3 },
                2,
                d_coeff,
            )?,
            0.5,
        ),
        (
            "half-plane-d3".into(),
            FlowSpec::new(
                Shape::HalfPlane { normal: vec![0.0, 1.0, 0.0], offset: -0.2 },
                3,
                d_coeff,
            )?,
            0.5,
        ),
        (
            "sphere-d2".into(),
            FlowSpec::new(Shape::Sphere { center: vec![0.0, 0.0], r0: 1.0 }, 2, d_coeff)?,
            0.15,
        ),
        (
            "sphere-d3".into(),
            FlowSpec::new(Shape::Sphere { center: vec![0.1, -0.2, 0.0], r0: 1.0 }, 3, d_coeff)?,
            0.15,
        ),
    ];
    let mut rows = Vec::new();
    let mut max_eik = 0.0f64;
    let mut max_vel = 0.0f64;
    for (i, (name, flow, band)) in cases.iter().enumerate() {
        let mut rng = SubRng::new(derive_key64(seed, &[Label::Name("mcf"), Label::Count(i as u64)]));
        let report = regularity_check(flow, samples, *band, &mut rng)?;
        max_eik = max_eik.max(report.max_eikonal_residual);
        max_vel = max_vel.max(report.max_velocity_residual);
        rows.push(vec![
            name.clone(),
            flow.dimension.to_string(),
            fnum(report.max_eikonal_residual),
            fnum(report.max_velocity_residual),
            fnum(report.lipschitz_t),
            report.pass.to_string(),
        ]);
    }
    let summary = vec![
        SummaryLine::new("10/eikonal", max_eik <= residual_tol, max_eik, residual_tol),
        SummaryLine::new("10/velocity", max_vel <= residual_tol, max_vel, residual_tol),
    ];
    Ok(ExpOutput {
        echo: serde_json::json!({ "seed": seed, "samples": samples, "speed_const": d_coeff }),
        files: vec![(
            "mcf-check.csv".into(),
            csv_table(
                &["shape", "dimension", "max_eikonal", "max_velocity", "lipschitz_t", "pass"],
                &rows,
            ),
        )],
        summary,
    })
}

/// Empirical family-partition law of five coalescing walks inside the
/// no-branch window.
fn exp_partition_law(config: &ExperimentConfig) -> Result<ExpOutput> {
    let seed = config.require_seed()?;
    let trials = config.trials.unwrap_or(20_000);
    let scaling = config.scaling.as_ref();
    let eta = scaling.map(|s| s.delta * s.eps).unwrap_or(0.05);
    let l = scaling.and_then(|s| s.voter_range).unwrap_or(5);
    let d = scaling.map(|s| s.dimension).unwrap_or(2);
    let mut rng = SubRng::new(derive_key64(seed, &[Label::Name("partition-law")]));
    let law = estimate_partition_law(eta, l, d, trials, &mut rng)?;
    let mut rows = Vec::new();
    let mut total = 0.0f64;
    for (partition, prob) in law.entries() {
        total += prob;
        let rgs: String = partition.rgs().iter().map(|c| char::from(b'0' + c)).collect();
        rows.push(vec![rgs, partition.n_cells().to_string(), fnum(*prob)]);
    }
    let summary = vec![
        SummaryLine::new("partition-law/total-mass", (total - 1.0).abs() <= 1e-12, total, 1.0),
        SummaryLine::new("partition-law/singleton-mass", true, law.singleton_mass(), 0.0),
    ];
    Ok(ExpOutput {
        echo: serde_json::json!({
            "seed": seed, "trials": trials, "eta": eta, "range": l, "dimension": d,
        }),
        files: vec![(
            "partition-law.csv".into(),
            csv_table(&["partition_rgs", "cells", "probability"], &rows),
        )],
        summary,
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
