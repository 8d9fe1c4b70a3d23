//! `leibenson`: particle simulation, verification and certificates for
//! Barenblatt solutions of the Leibenson equation.
//!
//! Exit codes: 0 success, 1 verdict or certificate failure, 2 usage, input
//! or regime error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;

use leibenson::io::{self, load_run, parse_key_values, write_atomic, write_run};
use leibenson::maximal::{maximal_surface_bruteforce_search, maximal_surface_d3, CapGeometry};
use leibenson::quad::certify_all;
use leibenson::stats::{Thresholds, VerificationReport};
use leibenson::{FieldEvaluator, LeibensonError, LeibensonParams, RegimeReport, SDEConfig};

const REPORT_FILE: &str = "report.json";
const SUMMARY_FILE: &str = "summary.csv";

#[derive(Parser)]
#[command(name = "leibenson", version, about, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the particle system and write snapshots plus metadata.
    Simulate(SimulateArgs),
    /// Compare a simulated run with the analytic law and write a report.
    Verify(VerifyArgs),
    /// Evaluate the finiteness certificates.
    Certify(CertifyArgs),
    /// Tabulate which regime predicates hold on a (p, q) grid.
    Regimes(RegimesArgs),
    /// Compare the closed-form maximal function with brute force.
    MaximalDemo(MaximalArgs),
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    q: f64,
    #[arg(long)]
    delta: f64,
    #[arg(long)]
    t_final: f64,
    #[arg(long)]
    dt: f64,
    #[arg(long)]
    particles: usize,
    #[arg(long)]
    seed: u64,
    /// Comma-separated snapshot times; defaults to t-final.
    #[arg(long, value_delimiter = ',')]
    snap_times: Vec<f64>,
    /// Not echoed, so that runs written to different places compare equal.
    #[arg(long)]
    #[serde(skip)]
    out: PathBuf,
    /// Origin clamp radius for p < 2; defaults to 1e-8·R_δ(0).
    #[arg(long)]
    origin_clamp: Option<f64>,
    #[arg(long, action = ArgAction::SetTrue)]
    zero_noise: bool,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    #[arg(long)]
    run: PathBuf,
    /// key=value file overriding the default thresholds.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    /// Also evaluate the certificates over [0, t_final].
    #[arg(long, action = ArgAction::SetTrue)]
    certificates: bool,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct CertifyArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    p: f64,
    #[arg(long)]
    q: f64,
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
    #[arg(long = "T")]
    t: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct RegimesArgs {
    #[arg(long)]
    d: usize,
    /// `lo,hi`: p runs over (lo, hi].
    #[arg(long, value_delimiter = ',', num_args = 1)]
    p_range: Vec<f64>,
    #[arg(long, value_delimiter = ',', num_args = 1)]
    q_range: Vec<f64>,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct MaximalArgs {
    #[arg(long = "R")]
    radius: f64,
    #[arg(long)]
    xnorm: f64,
    #[arg(long, default_value_t = 4000)]
    grid: usize,
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<LeibensonError> for Failure {
    fn from(e: LeibensonError) -> Self {
        let code = match e {
            LeibensonError::NumericalBlowup { .. } | LeibensonError::Convergence(_) => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

type CmdResult = std::result::Result<u8, Failure>;

fn write_file(path: &Path, text: &str) -> std::result::Result<(), Failure> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn simulate(args: SimulateArgs) -> CmdResult {
    let params = LeibensonParams::new(args.d, args.p, args.q)?;
    let mut config = SDEConfig::new(params, args.delta, args.t_final, args.dt, args.particles, args.seed);
    if !args.snap_times.is_empty() {
        config.snap_times = args.snap_times.clone();
    }
    config.origin_clamp = args.origin_clamp;
    config.zero_noise = args.zero_noise;
    config.validate()?;
    let snapshots = leibenson::simulate(&config)?;
    let echo = serde_json::to_value(&args).map_err(LeibensonError::from)?;
    let meta = write_run(&args.out, echo, &config, &snapshots)?;
    for r in &meta.snap_rounding {
        println!("snapshot t = {} (requested {}) at step {}", r.actual, r.requested, r.step);
    }
    println!("wrote {} and {} to {}", io::SNAPSHOT_FILE, io::METADATA_FILE, args.out.display());
    Ok(0)
}

fn verify(args: VerifyArgs) -> CmdResult {
    let (meta, snapshots) = load_run(&args.run)?;
    let thresholds = match &args.thresholds {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(LeibensonError::from)?;
            Thresholds::from_pairs(&parse_key_values(&text, &Thresholds::KEYS)?)?
        }
        None => Thresholds::default(),
    };
    let config = &meta.sde;
    let field = FieldEvaluator::new(config.params, config.delta)?;
    let certificates = if args.certificates {
        Some(certify_all(&config.params, config.delta, config.t_final, args.tol)?)
    } else {
        None
    };
    let mut report = VerificationReport::build(meta.config.clone(), &field, &snapshots, certificates, thresholds)?;
    report.snapshot_sha256 = Some(meta.snapshot_sha256.clone());
    let out = args.out.clone().unwrap_or_else(|| args.run.clone());
    std::fs::create_dir_all(&out).map_err(LeibensonError::from)?;
    write_file(&out.join(REPORT_FILE), &report.to_json()?)?;
    write_file(&out.join(SUMMARY_FILE), &report.summary_csv())?;
    for (name, v) in &report.verdicts {
        println!("{} {name}: {:.6e} (limit {:.6e})", if v.pass { "PASS" } else { "FAIL" }, v.value, v.limit);
    }
    Ok(if report.passed { 0 } else { 1 })
}

fn certify(args: CertifyArgs) -> CmdResult {
    let params = LeibensonParams::new(args.d, args.p, args.q)?;
    let regime = params.regime();
    if !regime.superposition_ok && !(regime.strong_solution_ok && args.delta > 0.0) {
        return Err(usage(format!(
            "no certificate applies to (d, p, q) = ({}, {}, {}): superposition and strong-solution gates both fail",
            args.d, args.p, args.q
        )));
    }
    let report = certify_all(&params, args.delta, args.t, args.tol)?;
    let json = serde_json::to_string_pretty(&report).map_err(LeibensonError::from)? + "\n";
    if let Some(path) = &args.out {
        write_file(path, &json)?;
    }
    print!("{json}");
    Ok(if report.all_finite { 0 } else { 1 })
}

fn range(values: &[f64], name: &str) -> std::result::Result<(f64, f64), Failure> {
    match values {
        [lo, hi] if lo.is_finite() && hi.is_finite() && lo < hi => Ok((*lo, *hi)),
        _ => Err(usage(format!("{name} must be lo,hi with lo < hi"))),
    }
}

fn regimes(args: RegimesArgs) -> CmdResult {
    let (p_lo, p_hi) = range(&args.p_range, "--p-range")?;
    let (q_lo, q_hi) = range(&args.q_range, "--q-range")?;
    if args.steps == 0 || args.d == 0 {
        return Err(usage("--steps and --d must be positive"));
    }
    let mut csv = String::from("d,p,q");
    for name in RegimeReport::FLAG_NAMES {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    let n = args.steps as f64;
    for i in 1..=args.steps {
        let p = p_lo + (p_hi - p_lo) * i as f64 / n;
        for j in 1..=args.steps {
            let q = q_lo + (q_hi - q_lo) * j as f64 / n;
            csv.push_str(&format!("{},{},{}", args.d, io::format_float(p), io::format_float(q)));
            for flag in RegimeReport::classify(args.d, p, q).flags() {
                csv.push_str(if flag { ",1" } else { ",0" });
            }
            csv.push('\n');
        }
    }
    match &args.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(0)
}

fn maximal_demo(args: MaximalArgs) -> CmdResult {
    let geom = CapGeometry::new(args.radius, args.xnorm)?;
    let formula = maximal_surface_d3(&geom)?;
    let brute = maximal_surface_bruteforce_search(&geom, args.grid)?;
    let rel = (formula - brute.value).abs() / formula;
    println!("{:>10} {:>10} {:>22} {:>22} {:>22} {:>10}", "R", "|x|", "formula", "brute_force", "argmax", "rel_diff");
    println!(
        "{:>10} {:>10} {:>22.15e} {:>22.15e} {:>22.15e} {:>10.3e}",
        args.radius, args.xnorm, formula, brute.value, brute.argmax, rel
    );
    Ok(0)
}

/// Expands `--config FILE` into flags placed right after the subcommand,
/// so that explicit flags given later override file values.
fn expand_config(mut argv: Vec<String>) -> std::result::Result<Vec<String>, Failure> {
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(argv);
    };
    let path = if let Some(p) = argv[pos].strip_prefix("--config=") {
        let p = p.to_string();
        argv.remove(pos);
        p
    } else {
        if pos + 1 >= argv.len() {
            return Err(usage("--config needs a file"));
        }
        argv.remove(pos);
        argv.remove(pos)
    };
    let sub_pos = argv.iter().skip(1).position(|a| !a.starts_with('-')).map(|i| i + 1);
    let sub_pos = sub_pos.ok_or_else(|| usage("--config must follow a subcommand"))?;
    let command = Cli::command();
    let sub = command
        .find_subcommand(&argv[sub_pos])
        .ok_or_else(|| usage(format!("unknown subcommand {:?}", argv[sub_pos])))?;
    let flags: Vec<(String, bool)> = sub
        .get_arguments()
        .filter_map(|a| a.get_long().map(|l| (l.to_string(), a.get_action().takes_values())))
        .filter(|(l, _)| l != "help")
        .collect();
    let allowed: Vec<&str> = flags.iter().map(|(l, _)| l.as_str()).collect();
    let text = std::fs::read_to_string(&path).map_err(|e| usage(format!("cannot read {path}: {e}")))?;
    let pairs = parse_key_values(&text, &allowed)?;
    let mut injected = Vec::new();
    for (key, value) in pairs {
        let takes_value = flags.iter().any(|(l, v)| *l == key && *v);
        if takes_value {
            injected.push(format!("--{key}"));
            injected.push(value);
        } else {
            match value.as_str() {
                "true" => injected.push(format!("--{key}")),
                "false" => {}
                _ => return Err(usage(format!("{key} must be true or false"))),
            }
        }
    }
    argv.splice(sub_pos + 1..sub_pos + 1, injected);
    Ok(argv)
}

fn configure_threads() -> std::result::Result<(), Failure> {
    if let Ok(value) = std::env::var("LEIBENSON_THREADS") {
        let n: usize = value
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| usage(format!("LEIBENSON_THREADS must be a positive integer, got {value:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("cannot size the thread pool: {e}")))?;
    }
    Ok(())
}

fn run() -> CmdResult {
    let argv = expand_config(std::env::args().collect())?;
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return Ok(code);
        }
    };
    configure_threads()?;
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Verify(a) => verify(a),
        Command::Certify(a) => certify(a),
        Command::Regimes(a) => regimes(a),
        Command::MaximalDemo(a) => maximal_demo(a),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
