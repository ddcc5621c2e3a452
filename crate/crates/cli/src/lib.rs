//! Command line front end for the `fmm2d` engine.
//!
//! Every subcommand prints a self-describing key-value document on stdout
//! that repeats the full parameter set, so reruns with the same flags (and
//! seed) produce byte-identical documents. Measured wall times go to
//! stderr; velocity, sweep, and trace rows go to files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fmm2d::costmodel::{self, MachineModel};
use fmm2d::engine::{self, FmmConfig};
use fmm2d::io::{read_particles, write_velocities};
use fmm2d::kernel::{self, KernelParams};
use fmm2d::{generate, CostCoefficients64, ExecMode, FmmConfig64, FmmError, Particle64, Velocity64};

/// Direct-sum oracle guard: quadratic cost beyond this needs `--force`.
const ORACLE_GUARD: usize = 100_000;

/// Entry point shared by the binary and the integration tests.
/// Returns the process exit code: 0 success, 1 internal invariant
/// failure, 2 user input error.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return err.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            failure.code
        }
    }
}

#[derive(Parser)]
#[command(
    name = "fmm2d",
    version,
    about = "Fast multipole solver for the regularized Biot-Savart kernel",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solver and write per-particle velocities.
    Run(RunArgs),
    /// Compare the solver against the quadratic direct sum.
    Oracle(OracleArgs),
    /// Query the analytic cost model.
    #[command(subcommand)]
    Model(ModelQuery),
    /// Tabulate the minimum particles per process over a range of P.
    Sweep(SweepArgs),
    /// Play the ten-stage schedule forward on an abstract machine.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct SourceArgs {
    /// Particle file with "x,y,gamma" rows; '#' starts a comment.
    #[arg(
        long,
        value_name = "PATH",
        required_unless_present = "gen",
        conflicts_with = "gen"
    )]
    input: Option<PathBuf>,
    /// Synthesize particles instead of reading a file.
    #[arg(long, value_enum, requires = "n")]
    gen: Option<Generator>,
    /// Particle count for --gen; scientific notation accepted.
    #[arg(long, value_parser = parse_count, conflicts_with = "input")]
    n: Option<u64>,
    /// RNG seed, required with `--gen random`.
    #[arg(long, conflicts_with = "input", required_if_eq("gen", "random"))]
    seed: Option<u64>,
}

#[derive(Args)]
struct SolverArgs {
    /// Tree depth L; the finest level has 4^L boxes.
    #[arg(long, default_value_t = 3)]
    levels: u32,
    /// Expansion order t.
    #[arg(long, default_value_t = 15)]
    order: usize,
    /// Blob core radius; defaults to a tenth of the finest box width.
    #[arg(long)]
    sigma: Option<f64>,
    /// Near-field scheduling mode.
    #[arg(long, value_enum, default_value_t = ModeArg::Overlapped)]
    mode: ModeArg,
    /// Worker pool size; 1 runs the serial reference path.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Velocity output file ("index,u,v" rows).
    #[arg(long, default_value = "velocities.csv")]
    output: PathBuf,
    /// Trace output file, written when workers > 1
    /// ("stage,box,worker,start_ns,end_ns" rows).
    #[arg(long, default_value = "trace.csv")]
    trace: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Run the direct sum even beyond the N <= 1e5 guard.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum ModelQuery {
    /// Coefficient table of T = aN/P + b log4(P) + cN/(BP) + dNB/P.
    Coeffs(ModelCommon),
    /// Box population minimizing the total run time.
    Bopt(ModelCommon),
    /// Minimum box population that hides the reduction bottleneck.
    Cover(CoverArgs),
    /// Minimum particles per process at a fixed box population.
    Minsize(MinsizeArgs),
}

#[derive(Args)]
struct ModelCommon {
    /// Expansion order t.
    #[arg(long, default_value_t = 15)]
    order: usize,
    /// Flop rate r; all coefficients scale as 1/r.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
}

#[derive(Args)]
struct CoverArgs {
    #[command(flatten)]
    common: ModelCommon,
    /// Particle count; scientific notation accepted.
    #[arg(long, value_parser = parse_count)]
    n: u64,
    /// Process count; scientific notation accepted.
    #[arg(long, value_parser = parse_count)]
    p: u64,
    /// Root-tree depth; defaults to log4(P).
    #[arg(long)]
    lroot: Option<f64>,
}

#[derive(Args)]
struct MinsizeArgs {
    #[command(flatten)]
    common: ModelCommon,
    /// Process count; scientific notation accepted.
    #[arg(long, value_parser = parse_count)]
    p: u64,
    /// Box population B.
    #[arg(long, default_value_t = 18.0)]
    b: f64,
}

#[derive(Args)]
struct SweepArgs {
    /// Smallest process count; rows cover powers of 4 in range.
    #[arg(long, value_parser = parse_count, default_value = "4")]
    p_min: u64,
    /// Largest process count.
    #[arg(long, value_parser = parse_count, default_value = "1048576")]
    p_max: u64,
    /// Box population B.
    #[arg(long, default_value_t = 18.0)]
    b: f64,
    /// Expansion order t.
    #[arg(long, default_value_t = 15)]
    order: usize,
    /// Curve output file ("P,min_per_process" rows).
    #[arg(long, default_value = "sweep.csv")]
    output: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Particle count; scientific notation accepted.
    #[arg(long, value_parser = parse_count)]
    n: u64,
    /// Process count; scientific notation accepted.
    #[arg(long, value_parser = parse_count)]
    p: u64,
    /// Box population B.
    #[arg(long, default_value_t = 18.0)]
    b: f64,
    /// Expansion order t.
    #[arg(long, default_value_t = 15)]
    order: usize,
    /// Flop rate r.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    /// Near-field scheduling mode.
    #[arg(long, value_enum, default_value_t = ModeArg::Overlapped)]
    mode: ModeArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Generator {
    Lattice,
    Random,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Sequential,
    Overlapped,
}

impl From<ModeArg> for ExecMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Sequential => ExecMode::Sequential,
            ModeArg::Overlapped => ExecMode::Overlapped,
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<FmmError> for Failure {
    fn from(err: FmmError) -> Self {
        let code = match err {
            FmmError::ParseRow { .. }
            | FmmError::OutOfDomain { .. }
            | FmmError::InvalidConfig { .. }
            | FmmError::InvalidLevels { .. }
            | FmmError::Io(_) => 2,
            _ => 1,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

/// Counts accept plain integers or scientific notation ("1e6").
fn parse_count(text: &str) -> Result<u64, String> {
    if let Ok(value) = text.parse::<u64>() {
        return Ok(value);
    }
    let value: f64 = text
        .parse()
        .map_err(|_| format!("{text:?} is not a count"))?;
    if value.is_finite() && value >= 0.0 && value == value.trunc() && value <= 2f64.powi(53) {
        Ok(value as u64)
    } else {
        Err(format!("{text:?} is not a whole non-negative count"))
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Oracle(args) => cmd_oracle(args),
        Command::Model(query) => cmd_model(query),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn load_particles(source: &SourceArgs, levels: u32) -> Result<(Vec<Particle64>, String), Failure> {
    if let Some(path) = &source.input {
        let file = File::open(path)
            .map_err(|err| Failure::usage(format!("cannot open {}: {err}", path.display())))?;
        let particles = read_particles(BufReader::new(file))?;
        return Ok((particles, format!("file:{}", path.display())));
    }
    let n = source.n.expect("clap enforces --n with --gen") as usize;
    match source.gen.expect("clap enforces a particle source") {
        Generator::Lattice => {
            if levels > 15 {
                return Err(Failure::usage(format!(
                    "lattice generation supports at most 15 levels, got {levels}"
                )));
            }
            let boxes = 1usize << (2 * levels);
            if n % boxes != 0 {
                return Err(Failure::usage(format!(
                    "lattice particle count must be a multiple of 4^levels = {boxes}, got {n}"
                )));
            }
            Ok((
                generate::uniform_lattice(levels, n / boxes),
                "lattice".into(),
            ))
        }
        Generator::Random => {
            let seed = source.seed.expect("clap enforces --seed with random");
            Ok((generate::uniform_random(n, seed), format!("random:{seed}")))
        }
    }
}

fn solver_config(args: &SolverArgs) -> FmmConfig64 {
    let config = FmmConfig::new(args.levels, args.order)
        .with_mode(args.mode.into())
        .with_workers(args.workers);
    match args.sigma {
        Some(sigma) => config.with_sigma(sigma),
        None => config,
    }
}

fn sigma_label(sigma: Option<f64>) -> String {
    match sigma {
        Some(value) => value.to_string(),
        None => "default".into(),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let (particles, source) = load_particles(&args.source, args.solver.levels)?;
    let config = solver_config(&args.solver);
    let (velocities, report, trace) = engine::compute_velocities_traced(&particles, config)?;

    let file = File::create(&args.output).map_err(|err| {
        Failure::usage(format!("cannot write {}: {err}", args.output.display()))
    })?;
    let mut writer = BufWriter::new(file);
    write_velocities(&mut writer, &velocities)?;
    writer.flush().map_err(FmmError::from)?;

    if let Some(trace) = &trace {
        std::fs::write(&args.trace, trace.export()).map_err(|err| {
            Failure::usage(format!("cannot write {}: {err}", args.trace.display()))
        })?;
    }

    let mut doc = String::new();
    doc += "command = run\n";
    doc += &format!("source = {source}\n");
    doc += &format!("n = {}\n", report.n);
    doc += &format!("levels = {}\n", report.levels);
    doc += &format!("order = {}\n", report.order);
    doc += &format!("sigma = {}\n", sigma_label(args.solver.sigma));
    doc += &format!("mode = {}\n", config.mode);
    doc += &format!("workers = {}\n", config.workers);
    doc += &format!("output = {}\n", args.output.display());
    if trace.is_some() {
        doc += &format!("trace = {}\n", args.trace.display());
    }
    doc += &format!("near_pairs = {}\n", report.near_pairs);
    doc += &format!("m2l_entries = {}\n", report.m2l_entries);
    for stage in 1..=10 {
        let stats = report.stage(stage);
        doc += &format!("stage_{stage}_tasks = {}\n", stats.tasks);
        doc += &format!("stage_{stage}_flops = {}\n", stats.flops);
    }
    doc += &format!("total_flops = {}\n", report.total_flops());
    let flops = engine::flop_report(&report);
    doc += &format!("p2m_flops_predicted = {}\n", flops.predicted_init);
    doc += &format!("direct_flops_predicted = {}\n", flops.predicted_direct);
    print!("{doc}");

    for stage in 1..=10 {
        eprintln!(
            "stage_{stage}_wall_seconds = {:e}",
            report.stage(stage).wall_seconds
        );
    }
    eprintln!("total_wall_seconds = {:e}", report.total_wall_seconds());
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<(), Failure> {
    let (particles, source) = load_particles(&args.source, args.solver.levels)?;
    let n = particles.len();
    if n > ORACLE_GUARD && !args.force {
        return Err(Failure::usage(format!(
            "direct sum over {n} particles costs O(N²); pass --force to run anyway"
        )));
    }
    let config = solver_config(&args.solver);
    let (fmm, report) = engine::compute_velocities(&particles, config)?;
    let params = match args.solver.sigma {
        Some(sigma) => KernelParams::new(sigma)?,
        None => KernelParams::default_for_box_width(0.5f64.powi(args.solver.levels as i32)),
    };
    let reference = kernel::direct_sum_all(&particles, params);
    let (max_rel, rms_rel) = error_stats(&fmm, &reference);

    let mut doc = String::new();
    doc += "command = oracle\n";
    doc += &format!("source = {source}\n");
    doc += &format!("n = {n}\n");
    doc += &format!("levels = {}\n", report.levels);
    doc += &format!("order = {}\n", report.order);
    doc += &format!("sigma = {}\n", sigma_label(args.solver.sigma));
    doc += &format!("mode = {}\n", config.mode);
    doc += &format!("workers = {}\n", config.workers);
    doc += &format!("max_rel_error = {max_rel:e}\n");
    doc += &format!("rms_rel_error = {rms_rel:e}\n");
    print!("{doc}");
    Ok(())
}

/// Relative errors against the reference; zero-velocity references fall
/// back to the absolute difference.
fn error_stats(got: &[Velocity64], want: &[Velocity64]) -> (f64, f64) {
    assert_eq!(got.len(), want.len());
    let mut max = 0.0f64;
    let mut sum_sq = 0.0f64;
    for (g, w) in got.iter().zip(want) {
        let diff = (*g - *w).norm();
        let denom = w.norm();
        let rel = if denom == 0.0 { diff } else { diff / denom };
        max = max.max(rel);
        sum_sq += rel * rel;
    }
    let rms = if got.is_empty() {
        0.0
    } else {
        (sum_sq / got.len() as f64).sqrt()
    };
    (max, rms)
}

fn coefficients_for(common: &ModelCommon) -> Result<CostCoefficients64, FmmError> {
    let machine = MachineModel::new(common.rate, 1)?;
    costmodel::coefficients(common.order, &machine)
}

/// `name = <full precision> (<conventionally rounded>)`.
fn push_pair(doc: &mut String, name: &str, value: f64, decimals: usize) {
    doc.push_str(&format!(
        "{name} = {value} ({})\n",
        rounded(value, decimals)
    ));
}

fn rounded(value: f64, decimals: usize) -> String {
    let text = format!("{value:.decimals$}");
    match text.strip_suffix(".00") {
        Some(head) => head.to_string(),
        None => text.to_string(),
    }
}

fn cmd_model(query: ModelQuery) -> Result<(), Failure> {
    let mut doc = String::new();
    match query {
        ModelQuery::Coeffs(common) => {
            let coeffs = coefficients_for(&common)?;
            doc += "command = model coeffs\n";
            doc += &format!("order = {}\n", common.order);
            doc += &format!("flop_rate = {}\n", common.rate);
            push_pair(&mut doc, "a", coeffs.a, 2);
            push_pair(&mut doc, "b", coeffs.b, 2);
            push_pair(&mut doc, "c", coeffs.c, 2);
            push_pair(&mut doc, "d", coeffs.d, 2);
            push_pair(&mut doc, "b_over_d", coeffs.b / coeffs.d, 2);
        }
        ModelQuery::Bopt(common) => {
            let coeffs = coefficients_for(&common)?;
            doc += "command = model bopt\n";
            doc += &format!("order = {}\n", common.order);
            doc += &format!("flop_rate = {}\n", common.rate);
            push_pair(&mut doc, "b_opt", costmodel::optimal_b(&coeffs), 0);
        }
        ModelQuery::Cover(args) => {
            if args.n < 1 || args.p < 1 {
                return Err(Failure::usage("n and p must be at least 1"));
            }
            let coeffs = coefficients_for(&args.common)?;
            let l_root = args
                .lroot
                .unwrap_or_else(|| costmodel::log4(args.p as f64));
            doc += "command = model cover\n";
            doc += &format!("order = {}\n", args.common.order);
            doc += &format!("flop_rate = {}\n", args.common.rate);
            doc += &format!("n = {}\n", args.n);
            doc += &format!("p = {}\n", args.p);
            doc += &format!("l_root = {l_root}\n");
            push_pair(
                &mut doc,
                "min_b_cover",
                costmodel::min_b_cover(args.n, args.p, l_root, &coeffs),
                2,
            );
        }
        ModelQuery::Minsize(args) => {
            if args.p < 1 {
                return Err(Failure::usage("p must be at least 1"));
            }
            if !(args.b > 0.0) {
                return Err(Failure::usage("b must be positive"));
            }
            let coeffs = coefficients_for(&args.common)?;
            doc += "command = model minsize\n";
            doc += &format!("order = {}\n", args.common.order);
            doc += &format!("flop_rate = {}\n", args.common.rate);
            doc += &format!("p = {}\n", args.p);
            doc += &format!("b = {}\n", args.b);
            doc += &format!("log4_p = {}\n", costmodel::log4(args.p as f64));
            push_pair(&mut doc, "per_log4p", coeffs.b / (coeffs.d * args.b), 2);
            push_pair(
                &mut doc,
                "min_particles_per_process",
                costmodel::min_particles_per_process(args.p, args.b, &coeffs),
                2,
            );
        }
    }
    print!("{doc}");
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    if args.p_min < 1 || args.p_max < args.p_min {
        return Err(Failure::usage(
            "process range must satisfy 1 <= p-min <= p-max",
        ));
    }
    let mut p_values = Vec::new();
    let mut p = 1u64;
    while p <= args.p_max {
        if p >= args.p_min {
            p_values.push(p);
        }
        match p.checked_mul(4) {
            Some(next) => p = next,
            None => break,
        }
    }
    if p_values.is_empty() {
        return Err(Failure::usage("no power of 4 lies in the requested range"));
    }
    let rows = costmodel::sweep_min_size(&p_values, args.b, args.order)?;

    let mut text = String::new();
    for (p, value) in &rows {
        text += &format!("{p},{value}\n");
    }
    std::fs::write(&args.output, text).map_err(|err| {
        Failure::usage(format!("cannot write {}: {err}", args.output.display()))
    })?;

    let (final_p, final_value) = *rows.last().expect("at least one row");
    let mut doc = String::new();
    doc += "command = sweep\n";
    doc += &format!("order = {}\n", args.order);
    doc += &format!("b = {}\n", args.b);
    doc += &format!("p_min = {}\n", args.p_min);
    doc += &format!("p_max = {}\n", args.p_max);
    doc += &format!("rows = {}\n", rows.len());
    doc += &format!("output = {}\n", args.output.display());
    doc += &format!("final_p = {final_p}\n");
    push_pair(&mut doc, "final_min_per_process", final_value, 2);
    print!("{doc}");
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let machine = MachineModel::new(args.rate, args.p)?;
    let report = costmodel::timeline_simulate(args.n, args.b, args.order, &machine, args.mode.into())?;

    let mut doc = String::new();
    doc += "command = simulate\n";
    doc += &format!("n = {}\n", args.n);
    doc += &format!("p = {}\n", args.p);
    doc += &format!("b = {}\n", args.b);
    doc += &format!("order = {}\n", args.order);
    doc += &format!("flop_rate = {}\n", args.rate);
    doc += &format!("mode = {}\n", report.mode);
    doc += &format!("levels = {}\n", report.levels);
    doc += &format!("init_duration = {}\n", report.init_duration);
    doc += &format!("sweep_idle = {}\n", report.sweep_idle);
    doc += &format!("direct_pool = {}\n", report.direct_pool);
    doc += &format!("absorbed_idle = {}\n", report.absorbed_idle);
    doc += &format!(
        "residual_idle = {}\n",
        report.sweep_idle - report.absorbed_idle
    );
    doc += &format!("direct_tail = {}\n", report.direct_tail);
    doc += &format!("makespan = {}\n", report.makespan);
    doc += &format!("utilization = {}\n", report.utilization);
    doc += &format!("bottleneck_covered = {}\n", report.bottleneck_covered);
    print!("{doc}");
    Ok(())
}
