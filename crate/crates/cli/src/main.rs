//! `r2o`: run the gated control cases, shadow trials, threshold sweeps,
//! configuration checks and the review gate from the command line.
//!
//! Exit status: 0 on success, 1 for bad input (config, scenario, flags,
//! failed review gate), 2 when a run breaks a guarantee it should keep.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use r2o_core::artifacts::{
    run_review_gate, sensitivity_sweep, write_atomic, write_run_artifacts, ArtifactError, SweepParameter,
    WorksheetRecord,
};
use r2o_core::config::{
    default_config, load_config, validate_cross_references, Domain, GovernanceConfig, ParseOptions,
};
use r2o_core::gating::{check_audit_coverage, check_time_bounds, RunMode, SimulationReport};
use r2o_core::report::{Format, Table};
use r2o_core::sim::{run_case, Case, CaseError, CaseOutcome, CaseScenario};

#[derive(Debug, Parser)]
#[command(
    name = "r2o",
    version,
    about = "Override-gated control simulations and governance artifacts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a case, gated and ungated, and print its result tables.
    RunCase(RunArgs),
    /// Same as run-case with --mode shadow: monitors and logs, no actuation.
    Shadow(CaseArgs),
    /// Re-run the gated case over a list of threshold values.
    Sweep(SweepArgs),
    /// Parse a governance document and check its cross-references.
    ValidateConfig(ConfigArgs),
    /// Check a deployment workspace for required documents and reviews.
    Gate(GateArgs),
    /// Run a case and write the worksheet, incident reports and notices.
    Report(RunArgs),
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Governance document, or `default` for the built-in one.
    #[arg(long, env = "R2O_CONFIG", default_value = "default")]
    config: String,
    /// Accept unrecognized keys (reported as warnings).
    #[arg(long)]
    lenient: bool,
}

#[derive(Debug, Args)]
struct CaseArgs {
    #[arg(value_parser = parse_case)]
    case: Case,
    #[command(flatten)]
    config: ConfigArgs,
    /// Scenario JSON; the calibrated built-in scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for tables, the audit log and other artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    format: OutputFormat,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[arg(long, value_enum, default_value_t = Mode::Actuated)]
    mode: Mode,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    case: CaseArgs,
    /// Threshold to vary: tau_D (disparity) or tau_A (accessibility minutes).
    #[arg(long, value_parser = parse_param)]
    param: SweepParameter,
    /// Comma-separated values, run in the order given.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
}

#[derive(Debug, Args)]
struct GateArgs {
    /// Workspace holding docs/ and reviews/.
    workspace: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, default_value_t = OutputFormat::Table)]
    format: OutputFormat,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Actuated,
    Shadow,
}

impl From<Mode> for RunMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Actuated => RunMode::Actuated,
            Mode::Shadow => RunMode::Shadow,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OutputFormat {
    Table,
    Delimited,
}

impl OutputFormat {
    fn format(self) -> Format {
        match self {
            OutputFormat::Table => Format::Table,
            OutputFormat::Delimited => Format::Delimited,
        }
    }

    fn extension(self) -> &'static str {
        match self {
            OutputFormat::Table => "txt",
            OutputFormat::Delimited => "csv",
        }
    }
}

fn parse_case(s: &str) -> Result<Case, String> {
    s.parse()
}

fn parse_param(s: &str) -> Result<SweepParameter, String> {
    s.parse()
}

/// Failure classes, mapped onto exit codes.
#[derive(Debug)]
enum Failure {
    Input(anyhow::Error),
    Invariant(anyhow::Error),
}

impl Failure {
    fn invariant(msg: impl Into<String>) -> Self {
        Failure::Invariant(anyhow::anyhow!(msg.into()))
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

impl From<CaseError> for Failure {
    fn from(e: CaseError) -> Self {
        if e.is_invariant() {
            Failure::Invariant(e.into())
        } else {
            Failure::Input(e.into())
        }
    }
}

impl From<ArtifactError> for Failure {
    fn from(e: ArtifactError) -> Self {
        if e.is_invariant() {
            Failure::Invariant(e.into())
        } else {
            Failure::Input(e.into())
        }
    }
}

fn main() -> ExitCode {
    // Usage errors are input errors; clap's own code 2 would read as an
    // invariant breach.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(Failure::Input(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
        Err(Failure::Invariant(e)) => {
            eprintln!("invariant violated: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

/// The error chain, skipping causes an outer message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn dispatch(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::RunCase(a) => run(&a.case, a.mode.into(), false),
        Command::Shadow(a) => run(&a, RunMode::Shadow, false),
        Command::Report(a) => run(&a.case, a.mode.into(), true),
        Command::Sweep(a) => sweep(&a),
        Command::ValidateConfig(a) => validate(&a),
        Command::Gate(a) => gate(&a),
    }
}

fn load(args: &ConfigArgs) -> anyhow::Result<GovernanceConfig> {
    if args.config == "default" {
        return Ok(default_config());
    }
    let options = ParseOptions {
        strict: !args.lenient,
        ..ParseOptions::default()
    };
    let parsed = load_config(Path::new(&args.config), options).with_context(|| format!("config {}", args.config))?;
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    Ok(parsed.config)
}

fn domain_of(case: Case) -> Domain {
    match case {
        Case::Power => Domain::Power,
        Case::Building => Domain::Buildings,
        Case::Traffic => Domain::Transport,
    }
}

fn scenario(args: &CaseArgs) -> Result<CaseScenario, Failure> {
    match &args.scenario {
        Some(path) => {
            if args.seed.is_some() {
                eprintln!("warning: --seed is ignored when --scenario is given (the file carries its own seed)");
            }
            Ok(CaseScenario::load(args.case, path)?)
        }
        None => Ok(CaseScenario::fixture(args.case, args.seed)),
    }
}

/// Config must be usable for the case's domain before anything runs.
fn checked_config(args: &CaseArgs) -> Result<GovernanceConfig, Failure> {
    let config = load(&args.config)?;
    let problems = validate_cross_references(&config, domain_of(args.case));
    if !problems.is_empty() {
        let list: Vec<String> = problems.iter().map(|p| p.to_string()).collect();
        return Err(anyhow::anyhow!("config fails cross-reference checks: {}", list.join("; ")).into());
    }
    Ok(config)
}

fn guarantees(run: &SimulationReport, config: &GovernanceConfig) -> Result<(), Failure> {
    check_audit_coverage(run).map_err(Failure::invariant)?;
    check_time_bounds(run, config).map_err(Failure::invariant)?;
    if run.mode == RunMode::Shadow && run.fallback_steps() > 0 {
        return Err(Failure::invariant("shadow run actuated a fallback"));
    }
    Ok(())
}

fn override_table(run: &SimulationReport) -> Table {
    Table::new(
        "Overrides",
        ["Scenario", "Mode", "Overrides opened", "Fallback steps"],
        vec![vec![
            run.scenario_id.clone(),
            run.mode.to_string(),
            run.overrides_opened().to_string(),
            run.fallback_steps().to_string(),
        ]],
    )
}

fn render(tables: &[Table], format: OutputFormat) -> String {
    tables
        .iter()
        .map(|t| t.render(format.format()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    Ok(write_atomic(path, contents.as_bytes())?)
}

fn run(args: &CaseArgs, mode: RunMode, report: bool) -> Result<ExitCode, Failure> {
    let config = checked_config(args)?;
    let scenario = scenario(args)?;
    let outcome: CaseOutcome = run_case(&scenario, &config, mode)?;
    let run = outcome.run();

    let mut tables = outcome.tables();
    tables.push(override_table(run));
    let text = render(&tables, args.format);
    let stem = format!("{}-{}", args.case, mode);
    write(
        &args
            .out
            .join("tables")
            .join(format!("{stem}.{}", args.format.extension())),
        &text,
    )?;
    let log = run
        .audit
        .to_jsonl()
        .map_err(|e| anyhow::anyhow!("cannot serialize audit log: {e}"))?;
    write(&args.out.join("audit").join(format!("{stem}.jsonl")), &log)?;

    if report {
        let worksheet = WorksheetRecord::template(&config, domain_of(args.case), &run.scenario_id);
        let json = worksheet.to_json()?;
        write(
            &args.out.join("reports").join(format!("worksheet-{}.json", args.case)),
            &json,
        )?;
        let written = write_run_artifacts(&args.out, run, &config)?;
        eprintln!(
            "wrote {} incident report(s) and {} notice(s) under {}",
            written.incidents.len(),
            written.notices.len(),
            args.out.display()
        );
    }
    print!("{text}");
    guarantees(run, &config)?;
    Ok(ExitCode::SUCCESS)
}

fn sweep(args: &SweepArgs) -> Result<ExitCode, Failure> {
    let config = checked_config(&args.case)?;
    let scenario = scenario(&args.case)?;
    let table = sensitivity_sweep(&scenario, args.param, &args.values, &config)?.table();
    let text = table.render(args.case.format.format());
    let name = format!(
        "sweep-{}-{}.{}",
        args.case.case,
        args.param.as_str(),
        args.case.format.extension()
    );
    write(&args.case.out.join("tables").join(name), &text)?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn validate(args: &ConfigArgs) -> Result<ExitCode, Failure> {
    let config = load(args)?;
    let mut problems = Vec::new();
    for d in Domain::ALL {
        problems.extend(
            validate_cross_references(&config, d)
                .into_iter()
                .map(|p| format!("{d}: {p}")),
        );
    }
    if problems.is_empty() {
        println!("config {} is valid", args.config);
        Ok(ExitCode::SUCCESS)
    } else {
        Err(anyhow::anyhow!("config {} failed checks:\n  {}", args.config, problems.join("\n  ")).into())
    }
}

fn gate(args: &GateArgs) -> Result<ExitCode, Failure> {
    let config = load(&args.config)?;
    let result = run_review_gate(&args.workspace, &config)?;
    print!("{}", result.table().render(args.format.format()));
    if result.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(anyhow::anyhow!("review gate failed: {}", result.failed().join(", ")).into())
    }
}
