//! Method dispatch and the seeded benchmark harness.
//!
//! A bench run crosses β regimes, depth levels and budget levels into cells,
//! generates `instances_per_cell` random trees per cell and runs every
//! configured method on each. Gaps are reported against a reference: the grid
//! oracle for small instances, the envelope upper bound otherwise.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envelope::{solve_envelope_relaxation_until, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::model::{generate_random, GeneratorParams, Instance, SeverityFamily, SolveReport};
use crate::nsa::{nsa_solve, NsaParams};
use crate::series::{solve_series, ROOT_TOL};
use crate::tree_lp::{solve_uniform_tree, ALPHA_TOL};
use crate::verification::grid_oracle;

/// Largest instance for which the grid oracle serves as the bench reference.
pub const ORACLE_REFERENCE_MAX_NODES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Series,
    LpUniform,
    Envelope,
    Nsa,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Series, Method::LpUniform, Method::Envelope, Method::Nsa, Method::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Method::Series => "series",
            Method::LpUniform => "lp-uniform",
            Method::Envelope => "envelope",
            Method::Nsa => "nsa",
            Method::Oracle => "oracle",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Knobs shared by all methods; each method reads the ones it understands.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOptions {
    pub tol: f64,
    /// Lattice step for the grid oracle.
    pub step: f64,
    pub nsa: NsaParams,
    pub time_limit: Option<f64>,
}

impl Default for MethodOptions {
    fn default() -> Self {
        MethodOptions { tol: ROOT_TOL, step: 0.02, nsa: NsaParams::default(), time_limit: None }
    }
}

/// Runs one solver and returns its report.
///
/// Exact methods fail with a method-mismatch error on instances outside their
/// scope (see [`Error::is_method_mismatch`]).
pub fn run_method(instance: &Instance, method: Method, opts: &MethodOptions) -> Result<SolveReport> {
    match method {
        Method::Series => solve_series(instance, opts.tol),
        Method::LpUniform => solve_uniform_tree(instance, ALPHA_TOL),
        Method::Nsa => {
            let mut params = opts.nsa.clone();
            if opts.time_limit.is_some() {
                params.time_limit = opts.time_limit;
            }
            params.validate()?;
            Ok(nsa_solve(instance, &params))
        }
        Method::Envelope => {
            let start = Instant::now();
            let deadline = opts.time_limit.map(|s| start + Duration::from_secs_f64(s.max(0.0)));
            let r = solve_envelope_relaxation_until(instance, DEFAULT_TOL, DEFAULT_MAX_ITER, deadline);
            let mut report = SolveReport::new(instance, r.plan.clone(), "envelope");
            report.upper_bound = Some(r.bound());
            report.iterations = r.iterations;
            if r.timed_out {
                report.flags.push("time limit reached".into());
            } else if r.iterations >= DEFAULT_MAX_ITER {
                report.flags.push("iteration limit reached".into());
            }
            report.wall_time = start.elapsed().as_secs_f64();
            Ok(report)
        }
        Method::Oracle => {
            let start = Instant::now();
            let r = grid_oracle(instance, opts.step)?;
            let mut report = SolveReport::new(instance, r.plan, "oracle");
            report.iterations = usize::try_from(r.evaluated).unwrap_or(usize::MAX);
            report.wall_time = start.elapsed().as_secs_f64();
            Ok(report)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthLevel {
    pub name: String,
    pub max_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLevel {
    pub name: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRegime {
    pub name: String,
    pub range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub instances_per_cell: usize,
    pub node_count: usize,
    pub depth_levels: Vec<DepthLevel>,
    pub budget_levels: Vec<BudgetLevel>,
    pub beta_regimes: Vec<BetaRegime>,
    pub cost_range: (f64, f64),
    pub weight_range: (f64, f64),
    pub family: SeverityFamily,
    pub base_seed: u64,
    pub methods: Vec<Method>,
    /// Seconds per method and instance, keyed by method name.
    pub time_limits: std::collections::BTreeMap<String, f64>,
    pub oracle_step: f64,
    pub nsa: NsaParams,
    /// Worker threads; `None` uses every available core.
    pub threads: Option<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let depth = |name: &str, max_depth| DepthLevel { name: name.into(), max_depth };
        let budget = |name: &str, fraction| BudgetLevel { name: name.into(), fraction };
        BenchConfig {
            instances_per_cell: 30,
            node_count: 50,
            depth_levels: vec![depth("low", 5), depth("medium", 10), depth("high", 20)],
            budget_levels: vec![budget("low", 0.2), budget("medium", 0.5), budget("high", 0.75)],
            beta_regimes: vec![
                BetaRegime { name: "wide".into(), range: (0.0, 1.0) },
                BetaRegime { name: "low".into(), range: (0.0, 0.25) },
            ],
            cost_range: (1.0, 10.0),
            weight_range: (1.0, 10.0),
            family: SeverityFamily::Triangular,
            base_seed: 2024,
            methods: vec![Method::Nsa],
            time_limits: [("nsa".to_string(), 60.0)].into_iter().collect(),
            oracle_step: 0.02,
            nsa: NsaParams::default(),
            threads: None,
        }
    }
}

impl BenchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: BenchConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParams(msg.into()));
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        if self.instances_per_cell == 0 || self.node_count == 0 {
            return bad("instance counts and sizes must be positive");
        }
        if self.depth_levels.is_empty() || self.budget_levels.is_empty() || self.beta_regimes.is_empty() {
            return bad("depth_levels, budget_levels and beta_regimes must not be empty");
        }
        if let Some((name, _)) = self.time_limits.iter().find(|(_, &t)| !(t >= 0.0)) {
            return Err(Error::InvalidParams(format!("time limit for {name} must be nonnegative")));
        }
        if let Some(name) = self.time_limits.keys().find(|k| k.parse::<Method>().is_err()) {
            return Err(Error::InvalidParams(format!("time limit for unknown method {name:?}")));
        }
        self.nsa.validate()?;
        for job in self.jobs() {
            job.params.validate()?;
        }
        Ok(())
    }

    /// All bench instances in CSV order.
    ///
    /// The seed depends on the β regime, depth level and replicate index but
    /// not on the budget level, so the budget levels of a cell column share
    /// their networks.
    pub fn jobs(&self) -> Vec<BenchJob> {
        let mut jobs = Vec::new();
        for (r, regime) in self.beta_regimes.iter().enumerate() {
            for (d, depth) in self.depth_levels.iter().enumerate() {
                for budget in &self.budget_levels {
                    for k in 0..self.instances_per_cell {
                        let seed = derive_seed(self.base_seed, &[r as u64, d as u64, k as u64]);
                        jobs.push(BenchJob {
                            id: jobs.len() + 1,
                            beta_regime: regime.name.clone(),
                            depth_level: depth.name.clone(),
                            budget_level: budget.name.clone(),
                            params: GeneratorParams {
                                node_count: self.node_count,
                                max_depth: depth.max_depth,
                                cost_range: self.cost_range,
                                weight_range: self.weight_range,
                                budget_fraction: budget.fraction,
                                beta_range: regime.range,
                                family: self.family,
                                seed,
                            },
                        });
                    }
                }
            }
        }
        jobs
    }

    fn options(&self, method: Method) -> MethodOptions {
        MethodOptions {
            step: self.oracle_step,
            nsa: self.nsa.clone(),
            time_limit: self.time_limits.get(method.name()).copied(),
            ..MethodOptions::default()
        }
    }
}

/// SplitMix64 finalizer folded over `parts`.
fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, &p| mix(acc ^ p))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchJob {
    pub id: usize,
    pub beta_regime: String,
    pub depth_level: String,
    pub budget_level: String,
    pub params: GeneratorParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    Oracle,
    UpperBound,
    None,
}

/// One solver's outcome on one bench instance.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    pub objective: Option<f64>,
    pub upper_bound: Option<f64>,
    pub wall_time: f64,
    /// Percentage gap to the reference; `None` unless the reference is positive.
    pub gap_pct: Option<f64>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub job: BenchJob,
    pub nodes: usize,
    pub reference_kind: ReferenceKind,
    pub reference: Option<f64>,
    pub results: Vec<MethodResult>,
}

/// `100 (z_ref - z) / z_ref`, defined only for a positive reference.
pub fn gap_percent(reference: f64, value: f64) -> Option<f64> {
    (reference > 0.0).then(|| 100.0 * (reference - value) / reference)
}

fn run_job(config: &BenchConfig, job: &BenchJob) -> BenchRow {
    let instance = match generate_random(&job.params) {
        Ok(inst) => inst,
        Err(e) => {
            let results = config
                .methods
                .iter()
                .map(|&method| MethodResult {
                    method,
                    objective: None,
                    upper_bound: None,
                    wall_time: 0.0,
                    gap_pct: None,
                    flags: vec![format!("error: {e}")],
                })
                .collect();
            return BenchRow { job: job.clone(), nodes: 0, reference_kind: ReferenceKind::None, reference: None, results };
        }
    };
    let small = instance.len() <= ORACLE_REFERENCE_MAX_NODES;

    let mut reports: Vec<(Method, Result<SolveReport>)> = Vec::new();
    for &method in &config.methods {
        let outcome = if method == Method::Oracle && !small {
            Err(Error::InvalidArgument(format!(
                "oracle skipped: n > {ORACLE_REFERENCE_MAX_NODES}"
            )))
        } else {
            run_method(&instance, method, &config.options(method))
        };
        reports.push((method, outcome));
    }

    let find_ok = |m: Method| reports.iter().find(|(k, _)| *k == m).and_then(|(_, r)| r.as_ref().ok());
    let (reference_kind, reference) = if small {
        let z = match find_ok(Method::Oracle) {
            Some(r) => Ok(r.objective),
            None => grid_oracle(&instance, config.oracle_step).map(|r| r.objective),
        };
        match z {
            Ok(z) => (ReferenceKind::Oracle, Some(z)),
            Err(_) => (ReferenceKind::None, None),
        }
    } else {
        let reported = reports
            .iter()
            .filter_map(|(_, r)| r.as_ref().ok()?.upper_bound)
            .fold(f64::INFINITY, f64::min);
        let bound = if reported.is_finite() {
            reported
        } else {
            crate::envelope::upper_bound(&instance)
        };
        (ReferenceKind::UpperBound, Some(bound))
    };

    let results = reports
        .into_iter()
        .map(|(method, outcome)| match outcome {
            Ok(r) => MethodResult {
                method,
                objective: Some(r.objective),
                upper_bound: r.upper_bound,
                wall_time: r.wall_time.max(0.0),
                gap_pct: reference.and_then(|z| gap_percent(z, r.objective)),
                flags: r.flags,
            },
            Err(e) => MethodResult {
                method,
                objective: None,
                upper_bound: None,
                wall_time: 0.0,
                gap_pct: None,
                flags: vec![format!("error: {e}")],
            },
        })
        .collect();
    BenchRow { job: job.clone(), nodes: instance.len(), reference_kind, reference, results }
}

/// Runs every job of `config` on a worker pool. Rows come back in job order.
pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    config.validate()?;
    let jobs = config.jobs();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = config.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidParams(format!("thread pool: {e}")))?;
    Ok(pool.install(|| jobs.par_iter().map(|job| run_job(config, job)).collect()))
}

pub const CSV_HEADER: [&str; 17] = [
    "instance_id",
    "seed",
    "beta_regime",
    "depth_level",
    "max_depth",
    "budget_level",
    "budget_fraction",
    "nodes",
    "method",
    "objective",
    "upper_bound",
    "wall_time_s",
    "reference_kind",
    "reference",
    "gap_pct",
    "flags",
    "status",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes one CSV record per (instance, method) pair.
pub fn write_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for row in rows {
        let reference_kind = match row.reference_kind {
            ReferenceKind::Oracle => "oracle",
            ReferenceKind::UpperBound => "upper-bound",
            ReferenceKind::None => "",
        };
        for r in &row.results {
            let p = &row.job.params;
            w.write_record([
                row.job.id.to_string(),
                p.seed.to_string(),
                row.job.beta_regime.clone(),
                row.job.depth_level.clone(),
                p.max_depth.to_string(),
                row.job.budget_level.clone(),
                p.budget_fraction.to_string(),
                row.nodes.to_string(),
                r.method.name().to_string(),
                opt(r.objective),
                opt(r.upper_bound),
                r.wall_time.to_string(),
                reference_kind.to_string(),
                opt(row.reference),
                opt(r.gap_pct),
                r.flags.join("; "),
                if r.objective.is_some() { "ok" } else { "failed" }.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-cell aggregate for one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub beta_regime: String,
    pub depth_level: String,
    pub budget_level: String,
    pub method: Method,
    pub instances: usize,
    pub failures: usize,
    pub mean_gap_pct: Option<f64>,
    pub max_gap_pct: Option<f64>,
    pub mean_time_s: f64,
    pub max_time_s: f64,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize(config: &BenchConfig, rows: &[BenchRow]) -> Vec<CellSummary> {
    let mut out = Vec::new();
    for regime in &config.beta_regimes {
        for depth in &config.depth_levels {
            for budget in &config.budget_levels {
                let cell: Vec<&BenchRow> = rows
                    .iter()
                    .filter(|r| {
                        r.job.beta_regime == regime.name
                            && r.job.depth_level == depth.name
                            && r.job.budget_level == budget.name
                    })
                    .collect();
                for &method in &config.methods {
                    let results: Vec<&MethodResult> = cell
                        .iter()
                        .flat_map(|r| r.results.iter().filter(|m| m.method == method))
                        .collect();
                    let gaps: Vec<f64> = results.iter().filter_map(|m| m.gap_pct).collect();
                    let times: Vec<f64> = results.iter().map(|m| m.wall_time).collect();
                    out.push(CellSummary {
                        beta_regime: regime.name.clone(),
                        depth_level: depth.name.clone(),
                        budget_level: budget.name.clone(),
                        method,
                        instances: results.len(),
                        failures: results.iter().filter(|m| m.objective.is_none()).count(),
                        mean_gap_pct: mean(&gaps),
                        max_gap_pct: gaps.iter().copied().reduce(f64::max),
                        mean_time_s: mean(&times).unwrap_or(0.0),
                        max_time_s: times.iter().copied().fold(0.0, f64::max),
                    });
                }
            }
        }
    }
    out
}

/// Mean-gap tables, budget levels down and depth levels across, one block
/// per β regime and method.
pub fn render_summary(config: &BenchConfig, cells: &[CellSummary]) -> String {
    let mut s = String::new();
    for regime in &config.beta_regimes {
        for &method in &config.methods {
            let (lo, hi) = regime.range;
            let _ = writeln!(s, "beta regime {} [{lo}, {hi}], method {method}: mean gap % (mean time s)", regime.name);
            let _ = write!(s, "{:>10}", "budget");
            for d in &config.depth_levels {
                let _ = write!(s, " {:>20}", format!("depth {} ({})", d.name, d.max_depth));
            }
            s.push('\n');
            for b in &config.budget_levels {
                let _ = write!(s, "{:>10}", b.name);
                for d in &config.depth_levels {
                    let cell = cells.iter().find(|c| {
                        c.beta_regime == regime.name && c.depth_level == d.name && c.budget_level == b.name && c.method == method
                    });
                    let text = match cell {
                        Some(c) => match c.mean_gap_pct {
                            Some(g) => format!("{g:.3} ({:.3})", c.mean_time_s),
                            None => format!("n/a ({:.3})", c.mean_time_s),
                        },
                        None => "-".into(),
                    };
                    let _ = write!(s, " {text:>20}");
                }
                s.push('\n');
            }
            s.push('\n');
        }
    }
    s
}
