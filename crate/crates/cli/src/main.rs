//! `gapbench`: run inference-benchmark sweeps, analyze records, check the
//! golden table and serve the simulator as a protocol worker.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use gapbench_core::golden::{check_golden_text, load_golden, GOLDEN_FIXTURE};
use gapbench_core::model::{validate_plan, SweepPlan};
use gapbench_core::presets::model_by_name;
use gapbench_core::presets::{default_plan, load_plan, resolve_device};
use gapbench_core::protocol::conformance::run_conformance;
use gapbench_core::protocol::external::{ExternalBackend, WorkerFactory};
use gapbench_core::protocol::server::{serve, ServeOptions};
use gapbench_core::protocol::{Backend, BackendError, BackendFactory, PROTOCOL_VERSION};
use gapbench_core::report::{describe_omitted, render_peak_table, write_report};
use gapbench_core::sim::{SimBackend, SimFactory};
use gapbench_core::stats::{format_ratio, AnalysisOptions};
use gapbench_core::sweep::{
    execute_sweep, read_records, FileSink, SweepError, SweepOptions, RECORDS_FILE,
};

const PROTOCOL_DOC: &str = include_str!("../../../PROTOCOL.md");
const PLAN_COPY: &str = "plan.json";
const DEFAULT_OUT: &str = "gapbench-out";

const EXIT_FAILURE: u8 = 1;
const EXIT_INVALID_PLAN: u8 = 2;
const EXIT_BACKEND_UNAVAILABLE: u8 = 3;
const EXIT_SINK: u8 = 4;

#[derive(Parser)]
#[command(
    name = "gapbench",
    version,
    about = "Inference benchmark sweeps, analysis and reporting"
)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a sweep plan and write records plus analysis.
    Run(RunArgs),
    /// Analyze an existing record file.
    Analyze(AnalyzeArgs),
    /// Inspect or check the embedded published-results table.
    Golden {
        #[command(subcommand)]
        action: GoldenAction,
    },
    /// Worker protocol documentation and conformance checks.
    Protocol {
        #[command(subcommand)]
        action: ProtocolAction,
    },
    /// Validate or print sweep plans.
    Plan {
        #[command(subcommand)]
        action: PlanAction,
    },
    /// Serve the simulated device as a protocol worker on stdin/stdout.
    Worker(WorkerArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Plan file, or `paper-default` for the shipped plan.
    #[arg(long)]
    plan: String,
    /// `sim`, or `worker:<program> [args...]` for an external worker.
    #[arg(long, default_value = "sim")]
    backend: String,
    /// Output directory.
    #[arg(long, env = "GAPBENCH_OUT", default_value = DEFAULT_OUT)]
    out: PathBuf,
    /// Continue an interrupted run in `--out`.
    #[arg(long, conflicts_with = "force")]
    resume: bool,
    /// Replace existing records in `--out`.
    #[arg(long)]
    force: bool,
    /// Override the plan seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Sweep devices concurrently.
    #[arg(long)]
    parallel_devices: bool,
    /// Seconds to wait for any single worker reply.
    #[arg(long, default_value_t = 600)]
    worker_timeout_s: u64,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Record file written by `run`.
    #[arg(long)]
    records: PathBuf,
    /// Output directory (default: the record file's directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// CPU reference throughput, `model=images_per_sec`; repeatable.
    #[arg(long = "cpu-baseline", value_parser = parse_baseline)]
    cpu_baseline: Vec<(String, f64)>,
}

#[derive(Subcommand)]
enum GoldenAction {
    /// Print the embedded table.
    Dump {
        #[arg(long, value_enum, default_value_t = DumpFormat::Json)]
        format: DumpFormat,
    },
    /// Recompute every speedup from the table's throughputs.
    Check {
        /// Check this fixture file instead of the embedded one.
        #[arg(long)]
        fixture: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DumpFormat {
    Json,
    Table,
}

#[derive(Subcommand)]
enum ProtocolAction {
    /// Print the protocol specification.
    Print,
    /// Run the conformance vectors against a worker command.
    Check {
        /// Worker command line, e.g. "python3 worker.py".
        #[arg(long)]
        worker: String,
        /// Device preset or profile file handed to the worker.
        #[arg(long, default_value = "t4.sim")]
        device: String,
        #[arg(long, default_value = "resnet18")]
        model: String,
    },
}

#[derive(Subcommand)]
enum PlanAction {
    /// Parse and validate a plan; print the resolved plan.
    Validate { path: String },
    /// Print the shipped plan.
    Show,
}

#[derive(Args)]
struct WorkerArgs {
    /// Device preset name or profile file.
    #[arg(long)]
    device: String,
    /// Seed for runs that arrive without one.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Protocol version to announce (for testing version checks).
    #[arg(long, default_value_t = PROTOCOL_VERSION)]
    protocol_version: u32,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code,
            error: e.into(),
        })
    }
}

fn parse_baseline(s: &str) -> Result<(String, f64), String> {
    let (model, ips) = s.split_once('=').ok_or("expected model=images_per_sec")?;
    let ips: f64 = ips.parse().map_err(|e| format!("{e}"))?;
    if !(ips > 0.0) {
        return Err("baseline must be positive".into());
    }
    Ok((model.to_string(), ips))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Golden { action } => cmd_golden(action),
        Command::Protocol { action } => cmd_protocol(action),
        Command::Plan { action } => cmd_plan(action),
        Command::Worker(args) => cmd_worker(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn resolve_plan(reference: &str) -> anyhow::Result<SweepPlan> {
    let path = Path::new(reference);
    let builtin = reference == "paper-default"
        || (!path.exists() && path.file_name() == Some("paper-default.plan".as_ref()));
    let plan = if builtin {
        default_plan()?
    } else {
        load_plan(path)?
    };
    validate_plan(plan).map_err(|e| {
        let lines: Vec<String> = e
            .violations()
            .iter()
            .map(|v| format!("  {}: {}", v.field, v.reason))
            .collect();
        anyhow!("invalid plan {reference}:\n{}", lines.join("\n"))
    })
}

fn split_command(command: &str) -> anyhow::Result<(String, Vec<String>)> {
    let mut parts = command.split_whitespace().map(str::to_string);
    let program = parts
        .next()
        .ok_or_else(|| anyhow!("empty worker command"))?;
    Ok((program, parts.collect()))
}

fn cmd_run(args: RunArgs) -> CmdResult {
    let mut plan = resolve_plan(&args.plan).exit_with(EXIT_INVALID_PLAN)?;
    if let Some(seed) = args.seed {
        plan.seed = seed;
    }
    let factory: Box<dyn BackendFactory> = match args.backend.as_str() {
        "sim" => Box::new(SimFactory { seed: plan.seed }),
        other => match other.strip_prefix("worker:") {
            Some(command) => {
                let (program, worker_args) = split_command(command).exit_with(EXIT_INVALID_PLAN)?;
                Box::new(WorkerFactory {
                    program,
                    args: worker_args,
                    scratch_dir: args.out.join("devices"),
                    timeout: Some(Duration::from_secs(args.worker_timeout_s)),
                })
            }
            None => {
                return Err(Failure {
                    code: EXIT_INVALID_PLAN,
                    error: anyhow!(
                        "unknown backend `{other}` (expected `sim` or `worker:<command>`)"
                    ),
                })
            }
        },
    };

    let plan_text = serde_json::to_string_pretty(&plan).expect("plan serializes");
    let records_path = args.out.join(RECORDS_FILE);
    let plan_copy = args.out.join(PLAN_COPY);
    let (sink, completed) = if args.resume {
        if let Ok(previous) = fs::read_to_string(&plan_copy) {
            if previous.trim_end() != plan_text {
                return Err(Failure {
                    code: EXIT_INVALID_PLAN,
                    error: anyhow!(
                        "{} was written by a different plan or seed",
                        args.out.display()
                    ),
                });
            }
        }
        FileSink::resume(&args.out).exit_with(EXIT_SINK)?
    } else {
        if records_path.exists() && !args.force {
            return Err(Failure {
                code: EXIT_INVALID_PLAN,
                error: anyhow!(
                    "{} already holds records; pass --resume to continue or --force to replace",
                    args.out.display()
                ),
            });
        }
        (
            FileSink::create(&args.out).exit_with(EXIT_SINK)?,
            Default::default(),
        )
    };
    fs::write(&plan_copy, format!("{plan_text}\n"))
        .with_context(|| format!("writing {}", plan_copy.display()))
        .exit_with(EXIT_SINK)?;

    info!(
        "{} runs planned, {} already complete",
        plan.total_runs(),
        completed.len()
    );
    let options = SweepOptions {
        completed,
        parallel_devices: args.parallel_devices,
    };
    let progress = execute_sweep(&plan, factory.as_ref(), &sink, &options).map_err(|e| {
        let code = match &e {
            SweepError::InvalidPlan(_) => EXIT_INVALID_PLAN,
            SweepError::BackendUnavailable { .. } => EXIT_BACKEND_UNAVAILABLE,
            SweepError::Sink { .. } => EXIT_SINK,
        };
        Failure {
            code,
            error: e.into(),
        }
    })?;
    drop(sink);
    eprintln!(
        "{} runs: {} ok, {} failed, {} resumed, {:.1} s",
        progress.total_configs,
        progress.completed,
        progress.failed,
        progress.resumed,
        progress.elapsed_s
    );

    let records = read_records(&records_path).exit_with(EXIT_SINK)?;
    let options = AnalysisOptions {
        cpu_baseline_ips: plan.cpu_baseline_ips.clone(),
    };
    let (analysis, _) = write_report(&records, &options, &args.out).exit_with(EXIT_FAILURE)?;
    for line in describe_omitted(&analysis.omitted) {
        warn!("omitted {line}");
    }
    println!("{}", render_peak_table(&analysis, &options));
    Ok(())
}

fn cmd_analyze(args: AnalyzeArgs) -> CmdResult {
    let records = read_records(&args.records).exit_with(EXIT_FAILURE)?;
    let dir = args
        .records
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let out = args.out.unwrap_or_else(|| dir.clone());
    let mut cpu_baseline_ips: BTreeMap<String, f64> = fs::read_to_string(dir.join(PLAN_COPY))
        .ok()
        .and_then(|t| serde_json::from_str::<SweepPlan>(&t).ok())
        .map(|p| p.cpu_baseline_ips)
        .unwrap_or_default();
    cpu_baseline_ips.extend(args.cpu_baseline);
    let options = AnalysisOptions { cpu_baseline_ips };
    let (analysis, written) = write_report(&records, &options, &out).exit_with(EXIT_FAILURE)?;
    for line in describe_omitted(&analysis.omitted) {
        warn!("omitted {line}");
    }
    info!("wrote {} files under {}", written.len(), out.display());
    println!("{}", render_peak_table(&analysis, &options));
    Ok(())
}

fn cmd_golden(action: GoldenAction) -> CmdResult {
    match action {
        GoldenAction::Dump { format } => {
            let data = load_golden().exit_with(EXIT_FAILURE)?;
            match format {
                DumpFormat::Json => print!("{GOLDEN_FIXTURE}"),
                DumpFormat::Table => {
                    println!(
                        "{:<28} {:<10} {:>10} {:>28} {:>14}",
                        "Platform",
                        "Model",
                        "Peak Batch",
                        "Peak Throughput (images/sec)",
                        "Speedup vs CPU"
                    );
                    for r in &data.rows {
                        println!(
                            "{:<28} {:<10} {:>10} {:>28} {:>14}",
                            r.platform,
                            r.model,
                            r.peak_batch,
                            r.peak_throughput_ips,
                            format_ratio(r.speedup_vs_cpu)
                        );
                    }
                }
            }
            Ok(())
        }
        GoldenAction::Check { fixture } => {
            let text = match &fixture {
                Some(path) => fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))
                    .exit_with(EXIT_FAILURE)?,
                None => GOLDEN_FIXTURE.to_string(),
            };
            let report = check_golden_text(&text).exit_with(EXIT_FAILURE)?;
            for c in &report.checks {
                let verdict = if c.passed { "ok  " } else { "FAIL" };
                let flag = if c.rounding_insensitive {
                    "  (differs from reference; rounding hides the change)"
                } else {
                    ""
                };
                println!(
                    "{verdict} {:<28} {:<10} {}/{} = {:.2} printed {:.2}{flag}",
                    c.platform, c.model, c.throughput_ips, c.baseline_ips, c.recomputed, c.printed
                );
            }
            if !report.checksum_ok {
                println!("note: fixture differs from the embedded reference table");
            }
            println!(
                "{}/{} speedups match",
                report.passed_count(),
                report.checks.len()
            );
            if report.passed() {
                Ok(())
            } else {
                Err(Failure {
                    code: EXIT_FAILURE,
                    error: anyhow!("golden check failed"),
                })
            }
        }
    }
}

fn cmd_protocol(action: ProtocolAction) -> CmdResult {
    match action {
        ProtocolAction::Print => {
            print!("{PROTOCOL_DOC}");
            Ok(())
        }
        ProtocolAction::Check {
            worker,
            device,
            model,
        } => {
            let (program, args) = split_command(&worker).exit_with(EXIT_INVALID_PLAN)?;
            let profile = resolve_device(&device, Path::new(".")).exit_with(EXIT_INVALID_PLAN)?;
            let model = model_by_name(&model)
                .ok_or_else(|| anyhow!("unknown model `{model}`"))
                .exit_with(EXIT_INVALID_PLAN)?;
            let scratch =
                std::env::temp_dir().join(format!("gapbench-conformance-{}", std::process::id()));
            fs::create_dir_all(&scratch).exit_with(EXIT_FAILURE)?;
            let device_file = scratch.join("device.json");
            fs::write(
                &device_file,
                serde_json::to_string_pretty(&profile).expect("profile serializes"),
            )
            .exit_with(EXIT_FAILURE)?;
            let device_arg = device_file.to_string_lossy().to_string();
            let open = || -> Result<Box<dyn Backend>, BackendError> {
                let b = ExternalBackend::spawn(
                    &program,
                    &args,
                    &device_arg,
                    &profile,
                    Some(Duration::from_secs(60)),
                )?;
                Ok(Box::new(b))
            };
            let outcomes = run_conformance(&open, &model);
            let _ = fs::remove_dir_all(&scratch);
            for o in &outcomes {
                let verdict = if o.passed { "ok  " } else { "FAIL" };
                println!(
                    "{verdict} {}{}",
                    o.name,
                    if o.detail.is_empty() {
                        String::new()
                    } else {
                        format!(": {}", o.detail)
                    }
                );
            }
            let passed = outcomes.iter().filter(|o| o.passed).count();
            println!("{passed}/{} vectors pass", outcomes.len());
            if passed == outcomes.len() {
                Ok(())
            } else {
                Err(Failure {
                    code: EXIT_FAILURE,
                    error: anyhow!("worker is not conformant"),
                })
            }
        }
    }
}

fn cmd_plan(action: PlanAction) -> CmdResult {
    let plan = match action {
        PlanAction::Validate { path } => resolve_plan(&path).exit_with(EXIT_INVALID_PLAN)?,
        PlanAction::Show => default_plan().exit_with(EXIT_FAILURE)?,
    };
    println!(
        "{}",
        serde_json::to_string_pretty(&plan).expect("plan serializes")
    );
    eprintln!("{} runs", plan.total_runs());
    Ok(())
}

fn cmd_worker(args: WorkerArgs) -> CmdResult {
    let profile =
        resolve_device(&args.device, Path::new(".")).exit_with(EXIT_BACKEND_UNAVAILABLE)?;
    let backend = SimBackend::open(&profile, args.seed).exit_with(EXIT_BACKEND_UNAVAILABLE)?;
    let options = ServeOptions {
        protocol_version: args.protocol_version,
        ..ServeOptions::default()
    };
    let stdin = BufReader::new(io::stdin());
    let stdout = io::stdout();
    serve(backend, stdin, stdout, &options).exit_with(EXIT_FAILURE)
}
