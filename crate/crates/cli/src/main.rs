use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use percept_sched::config::RunConfig;
use percept_sched::engine::{PolicyKind, RunLog};
use percept_sched::harness::{compare, evaluate, ground_truth};
use percept_sched::metrics::{render_table, report, GroundTruthKeyframes, LatencyDenominator, MetricsReport};
use percept_sched::scene::ModuleId;
use percept_sched::toolkit::synth::{generate, Archetype, SynthOptions};
use percept_sched::toolkit::Trace;
use percept_sched::Error;

#[derive(Parser)]
#[command(name = "percept-sched", version, about = "Reward-driven perception module scheduling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace.
    GenTrace(GenTraceArgs),
    /// Run one policy and report its metrics.
    Run(RunArgs),
    /// Run several policies on the same trace and tabulate them.
    Compare(CompareArgs),
    /// Recompute a report from a saved run log.
    Report(ReportArgs),
    /// Write, check or print configuration files.
    #[command(subcommand)]
    Config(ConfigCommand),
}

#[derive(Args)]
struct GenTraceArgs {
    #[arg(long, default_value = "static")]
    archetype: Archetype,
    #[arg(long, default_value_t = 1800)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Embed WIDTHxHEIGHT rasters instead of precomputed change statistics.
    #[arg(long, value_parser = parse_size)]
    raster: Option<(usize, usize)>,
    #[arg(long)]
    out: PathBuf,
}

/// Flags shared by every command that runs the engine. Flags override the config file.
#[derive(Args, Clone)]
struct CommonArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Generate the trace in memory when no trace file is given.
    #[arg(long)]
    archetype: Option<Archetype>,
    #[arg(long, default_value_t = 1800)]
    frames: usize,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    cost_yolo_ms: Option<f64>,
    #[arg(long)]
    cost_pose_ms: Option<f64>,
    /// `activated_frames` or `all_frames`.
    #[arg(long, value_parser = parse_denominator)]
    latency_denominator: Option<LatencyDenominator>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    policy: Option<PolicyKind>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_delimiter = ',', default_value = "parallel,oracle,scheduled")]
    policies: Vec<PolicyKind>,
    /// Print the comparison as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    runlog: PathBuf,
    #[arg(long)]
    keyframes: PathBuf,
    /// Supplies the metrics section; defaults apply otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum ConfigCommand {
    /// Write the recommended configuration.
    Init {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a configuration file.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the effective configuration after flag overrides.
    Show(CommonArgs),
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or("expected WIDTHxHEIGHT")?;
    let w = w.parse().map_err(|_| "bad width")?;
    let h = h.parse().map_err(|_| "bad height")?;
    Ok((w, h))
}

fn parse_denominator(s: &str) -> Result<LatencyDenominator, String> {
    match s {
        "activated_frames" => Ok(LatencyDenominator::ActivatedFrames),
        "all_frames" => Ok(LatencyDenominator::AllFrames),
        _ => Err("expected activated_frames or all_frames".into()),
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            Error::Trace(_) => 3,
            _ => 4,
        };
        Failure { code, message: e.to_string() }
    }
}

fn trace_error(e: Error) -> Failure {
    Failure { code: 3, message: e.to_string() }
}

fn runtime_error(e: impl std::fmt::Display) -> Failure {
    Failure { code: 4, message: e.to_string() }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::recommended(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(trace) = &common.trace {
        cfg.trace = Some(trace.clone());
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    if let Some(l) = common.lambda {
        cfg.reward.lambda_info_per_ms = l;
        cfg.reward.lambda_overrides.clear();
    }
    if let Some(c) = common.cost_yolo_ms {
        cfg.reward.cost_ms.insert(ModuleId::Detection, c);
    }
    if let Some(c) = common.cost_pose_ms {
        cfg.reward.cost_ms.insert(ModuleId::Pose, c);
    }
    if let Some(d) = common.latency_denominator {
        cfg.metrics.latency_denominator = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_trace(common: &CommonArgs, cfg: &RunConfig) -> Result<Trace, Failure> {
    match (&cfg.trace, common.archetype) {
        (Some(path), _) => Trace::read(path).map_err(trace_error),
        (None, Some(a)) => generate(&SynthOptions::new(a, common.frames, cfg.seed)).map_err(trace_error),
        (None, None) => Err(Failure { code: 2, message: "no trace: pass --trace or --archetype".into() }),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(runtime_error)?;
    fs::write(path, text + "\n").map_err(|e| runtime_error(format!("{}: {e}", path.display())))
}

fn prepare_out(cfg: &RunConfig) -> Result<Option<PathBuf>, Failure> {
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir).map_err(|e| runtime_error(format!("{}: {e}", dir.display())))?;
    }
    Ok(cfg.out_dir.clone())
}

fn save_run(dir: &Path, log: &RunLog, report: &MetricsReport) -> Result<(), Failure> {
    let policy = log.header.policy;
    log.write(&dir.join(format!("runlog-{policy}.jsonl")))?;
    write_json(&dir.join(format!("report-{policy}.json")), report)
}

fn cmd_gen_trace(args: GenTraceArgs) -> Result<(), Failure> {
    let mut opts = SynthOptions::new(args.archetype, args.frames, args.seed);
    opts.raster = args.raster;
    let trace = generate(&opts).map_err(|e| Failure { code: 2, message: e.to_string() })?;
    trace.write(&args.out).map_err(runtime_error)?;
    println!("wrote {} frames to {}", trace.len(), args.out.display());
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.common)?;
    if let Some(p) = args.policy {
        cfg.policy = p;
    }
    cfg.validate()?;
    let trace = load_trace(&args.common, &cfg)?;
    let keyframes = ground_truth(&trace, &cfg)?;
    let eval = evaluate(&trace, cfg.policy, &cfg, &keyframes)?;
    if let Some(dir) = prepare_out(&cfg)? {
        write_json(&dir.join("keyframes.json"), &keyframes)?;
        save_run(&dir, &eval.log, &eval.report)?;
    }
    print!("{}", render_table(std::slice::from_ref(&eval.report)));
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), Failure> {
    let cfg = load_config(&args.common)?;
    let trace = load_trace(&args.common, &cfg)?;
    let cmp = compare(&trace, &args.policies, &cfg)?;
    let reports = cmp.reports();
    if let Some(dir) = prepare_out(&cfg)? {
        write_json(&dir.join("keyframes.json"), &cmp.keyframes)?;
        for e in &cmp.evaluations {
            save_run(&dir, &e.log, &e.report)?;
        }
        write_json(&dir.join("comparison.json"), &reports)?;
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&reports).map_err(runtime_error)?);
    } else {
        print!("{}", render_table(&reports));
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let metrics = match &args.config {
        Some(path) => RunConfig::load(path)?.metrics,
        None => Default::default(),
    };
    let log = RunLog::read(&args.runlog).map_err(trace_error)?;
    let text = fs::read_to_string(&args.keyframes).map_err(|e| trace_error(e.into()))?;
    let keyframes: GroundTruthKeyframes = serde_json::from_str(&text).map_err(|e| trace_error(e.into()))?;
    let rep = report(&log, &keyframes, &metrics)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&rep).map_err(runtime_error)?);
    } else {
        print!("{}", render_table(std::slice::from_ref(&rep)));
    }
    Ok(())
}

fn cmd_config(cmd: ConfigCommand) -> Result<(), Failure> {
    match cmd {
        ConfigCommand::Init { out } => {
            let text = RunConfig::recommended().to_toml()?;
            match out {
                Some(path) => fs::write(&path, text).map_err(|e| runtime_error(format!("{}: {e}", path.display())))?,
                None => print!("{text}"),
            }
        }
        ConfigCommand::Check { config } => {
            RunConfig::load(&config)?;
            println!("{}: ok", config.display());
        }
        ConfigCommand::Show(common) => print!("{}", load_config(&common)?.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTrace(a) => cmd_gen_trace(a),
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Report(a) => cmd_report(a),
        Command::Config(c) => cmd_config(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
