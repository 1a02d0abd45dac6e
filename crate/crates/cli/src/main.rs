use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use fortify_core::bench::{render_summary, run_bench, run_method, summarize, write_csv, BenchConfig, Method, MethodOptions};
use fortify_core::model::{
    check_feasible, expected_without_service, generate_chain, generate_random, objective, read_instance,
    write_instance, write_report, SeverityFamily,
};
use fortify_core::nsa::NsaParams;
use fortify_core::verification::mc_estimate;
use fortify_core::{Error, FortificationPlan, GeneratorParams, FEASIBILITY_TOL};

#[derive(Parser)]
#[command(name = "fortify", version, about = "Node fortification planning for tree networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve an instance and write a report.
    Solve(SolveArgs),
    /// Generate a random instance.
    Generate(GenerateArgs),
    /// Run the seeded benchmark and write per-instance CSV rows.
    Bench(BenchArgs),
    /// Evaluate a plan analytically and by Monte Carlo.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Instance JSON file.
    instance: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Lattice step for the oracle.
    #[arg(long, default_value_t = 0.02)]
    step: f64,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seconds before nsa or envelope stop early.
    #[arg(long)]
    time_limit: Option<f64>,
    /// JSON file with NSA parameters; flags below override it.
    #[arg(long)]
    nsa_config: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_no_improve: Option<usize>,
    #[arg(long)]
    max_sweeps: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    nodes: usize,
    #[arg(long, default_value_t = 10)]
    max_depth: usize,
    #[arg(long, default_value_t = 0.5)]
    budget_frac: f64,
    /// Range for the triangular mode, as `a=LO,b=HI`.
    #[arg(long, default_value = "a=0,b=1", value_parser = parse_range)]
    beta: (f64, f64),
    #[arg(long, default_value = "a=1,b=10", value_parser = parse_range)]
    cost: (f64, f64),
    #[arg(long, default_value = "a=1,b=10", value_parser = parse_range)]
    weight: (f64, f64),
    #[arg(long, default_value = "triangular", value_parser = parse_family)]
    family: SeverityFamily,
    /// Generate a series system instead of a random tree.
    #[arg(long)]
    chain: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Bench configuration JSON; defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the per-cell summary as CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    instance: PathBuf,
    /// Plan JSON, or a solve report whose plan is evaluated.
    plan: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_family(s: &str) -> Result<SeverityFamily, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown family {s:?}; expected triangular, scurve or uniform"))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let mut a = None;
    let mut b = None;
    for part in s.split(',') {
        let (key, value) = part.split_once('=').ok_or_else(|| format!("expected key=value, got {part:?}"))?;
        let value: f64 = value.trim().parse().map_err(|_| format!("bad number {value:?}"))?;
        match key.trim() {
            "a" => a = Some(value),
            "b" => b = Some(value),
            other => return Err(format!("unknown key {other:?}; expected a or b")),
        }
    }
    match (a, b) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err("both a and b are required".into()),
    }
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(e) if e.is_method_mismatch() => 2,
            _ => 1,
        };
        Failure { code, error }
    }
}

fn emit(text: &str, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn solve(args: SolveArgs) -> Result<(), Failure> {
    let instance = read_instance(&args.instance).with_context(|| format!("reading {}", args.instance.display()))?;
    let mut nsa = match &args.nsa_config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<NsaParams>(&text).context("parsing NSA parameters")?
        }
        None => NsaParams::default(),
    };
    if let Some(e) = args.epsilon {
        nsa.epsilon = e;
    }
    if let Some(k) = args.max_no_improve {
        nsa.max_no_improve = k;
    }
    if let Some(k) = args.max_sweeps {
        nsa.max_sweeps = k;
    }
    let opts = MethodOptions { step: args.step, nsa, time_limit: args.time_limit, ..MethodOptions::default() };
    let report = run_method(&instance, args.method, &opts).map_err(anyhow::Error::from)?;
    match &args.out {
        Some(path) => write_report(&report, path).with_context(|| format!("writing {}", path.display()))?,
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?),
    }
    eprintln!(
        "{}: objective {:.6}{}",
        report.method,
        report.objective,
        report.upper_bound.map(|u| format!(", upper bound {u:.6}")).unwrap_or_default()
    );
    Ok(())
}

fn generate(args: GenerateArgs) -> anyhow::Result<()> {
    let params = GeneratorParams {
        node_count: args.nodes,
        max_depth: args.max_depth,
        cost_range: args.cost,
        weight_range: args.weight,
        budget_fraction: args.budget_frac,
        beta_range: args.beta,
        family: args.family,
        seed: args.seed,
    };
    let instance = if args.chain { generate_chain(&params) } else { generate_random(&params) }?;
    write_instance(&instance, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}

fn bench(args: BenchArgs) -> anyhow::Result<()> {
    let config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            BenchConfig::from_json(&text)?
        }
        None => BenchConfig::default(),
    };
    let rows = run_bench(&config)?;
    let file = fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_csv(&rows, std::io::BufWriter::new(file))?;
    let cells = summarize(&config, &rows);
    if let Some(path) = &args.summary {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        for c in &cells {
            w.serialize(c)?;
        }
        w.flush()?;
    }
    print!("{}", render_summary(&config, &cells));
    Ok(())
}

fn load_plan(path: &Path, n: usize) -> anyhow::Result<FortificationPlan> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut value: serde_json::Value = serde_json::from_str(&text).context("parsing plan")?;
    if let Some(plan) = value.get_mut("plan") {
        value = plan.take();
    }
    let plan: FortificationPlan = serde_json::from_value(value).context("parsing plan")?;
    if plan.len() != n {
        bail!("plan has {} levels, instance has {n} nodes", plan.len());
    }
    Ok(plan)
}

fn evaluate(args: EvaluateArgs) -> anyhow::Result<()> {
    let instance = read_instance(&args.instance).with_context(|| format!("reading {}", args.instance.display()))?;
    let plan = load_plan(&args.plan, instance.len())?;
    if plan.levels.iter().any(|x| !x.is_finite()) {
        return Err(anyhow!("plan contains non-finite levels"));
    }
    let violations = check_feasible(&instance, &plan, FEASIBILITY_TOL)?;
    let mc = mc_estimate(&instance, &plan, args.mc_samples, args.seed)?;
    let lost = expected_without_service(&instance, &plan)?;
    let report = serde_json::json!({
        "objective": objective(&instance, &plan),
        "served_by_path_minimum": instance.total_weight() - lost,
        "cost": plan.cost(&instance),
        "budget": instance.budget(),
        "violations": violations,
        "monte_carlo": mc,
    });
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    emit(&text, args.out.as_deref())?;
    if args.out.is_some() {
        eprintln!(
            "objective {:.6}, monte carlo {:.6} +/- {:.6}, {} violation(s)",
            objective(&instance, &plan),
            mc.mean,
            mc.stderr,
            violations.len()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(args) => solve(args),
        Command::Generate(args) => generate(args).map_err(Failure::from),
        Command::Bench(args) => bench(args).map_err(Failure::from),
        Command::Evaluate(args) => evaluate(args).map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
