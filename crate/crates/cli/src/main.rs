use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use lineid_core::decompose::CaseCounts;
use lineid_core::estimate::{Case3Form, EstimatorVariant};
use lineid_core::measurement::{ingest_csv, write_csv};
use lineid_core::report::{self, Benchmark};
use lineid_core::sensitivity::{run_sensitivity, write_sensitivity_csv, SensitivityError, Subsample};
use lineid_core::synth::{emulate_sensors, make_aspern_like, AspernConfig, ScenarioFile, SimulationScenario, SynthError};
use lineid_core::topology::{GridTopology, TopologyError, TopologyFile};
use lineid_core::{decompose, estimate_all, EstimatorConfig, FeasibleVoltageBand, MeasurementSet};

/// Exit statuses beyond clap's own usage error (2).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Status {
    Io = 1,
    Config = 2,
    Parse = 3,
    NoResults = 4,
}

#[derive(Debug)]
struct Failure {
    status: Status,
    error: anyhow::Error,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

fn fail(status: Status) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| Failure { status, error }
}

type CliResult<T = ()> = Result<T, Failure>;

#[derive(Parser)]
#[command(name = "lineid", version, about = "Line impedance estimation from smart-meter measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a feeder and write synthetic measurements plus ground truth.
    Generate(GenerateArgs),
    /// Classify every line by which of its endpoints carry a meter.
    Decompose(DecomposeArgs),
    /// Estimate line impedances and, with a benchmark, score them.
    Estimate(EstimateArgs),
    /// Error against the benchmark as a function of samples used.
    Sensitivity(SensitivityArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario file; without it an Aspern-like feeder is generated.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 30.0)]
    days: f64,
    #[arg(long, default_value_t = 15)]
    nodes: usize,
    /// Fraction of nodes carrying a meter.
    #[arg(long, default_value_t = 0.5)]
    coverage: f64,
    /// Relative standard deviation of the multiplicative sensor noise.
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecomposeArgs {
    #[arg(long)]
    topology: PathBuf,
    /// Nodes with data here count as metered when the topology lists none.
    #[arg(long)]
    measurements: Option<PathBuf>,
    /// Directory for classification.csv; the table is printed regardless.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    FirstMoment,
    SecondMoment,
}

#[derive(Clone, Copy, ValueEnum)]
enum Case3 {
    Literal,
    ParallelEquivalent,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    topology: PathBuf,
    #[arg(long)]
    measurements: PathBuf,
    #[arg(long)]
    benchmark: Option<PathBuf>,
    #[arg(long, default_value_t = 230.0)]
    v_nominal: f64,
    /// Lower edge of the feasible voltage band, V (default 0.95 V_nominal).
    #[arg(long)]
    v_min: Option<f64>,
    /// Upper edge of the feasible voltage band, V (default 1.05 V_nominal).
    #[arg(long)]
    v_max: Option<f64>,
    #[arg(long, default_value_t = 100)]
    min_samples: usize,
    #[arg(long, value_enum, default_value_t = Variant::FirstMoment)]
    variant: Variant,
    #[arg(long, value_enum, default_value_t = Case3::Literal)]
    case3_form: Case3,
    /// Grid frequency used to turn benchmark reactances into angles.
    #[arg(long, default_value_t = 50.0)]
    frequency: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Sample counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [500, 1000, 5000, 10000])]
    sizes: Vec<usize>,
    /// Draw a seeded random subset instead of the first N samples.
    #[arg(long)]
    random: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Decompose(a) => cmd_decompose(&a),
        Command::Estimate(a) => cmd_estimate(&a.run),
        Command::Sensitivity(a) => cmd_sensitivity(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("lineid: {f}");
            ExitCode::from(f.status as u8)
        }
    }
}

fn create(dir: &Path, name: &str) -> CliResult<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(fail(Status::Io))
}

fn out_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(fail(Status::Io))
}

fn io<T, E: Into<anyhow::Error>>(r: Result<T, E>, what: &str) -> CliResult<T> {
    r.map_err(Into::into).with_context(|| format!("writing {what}")).map_err(fail(Status::Io))
}

fn synth_failure(e: SynthError) -> Failure {
    let status = match &e {
        SynthError::Io(_) => Status::Config,
        SynthError::Topology(TopologyError::Parse(_)) => Status::Parse,
        SynthError::NonConvergence { .. } => Status::Io,
        _ => Status::Config,
    };
    fail(status)(e.into())
}

fn cmd_generate(a: &GenerateArgs) -> CliResult {
    let scenario = match &a.scenario {
        Some(path) => ScenarioFile::load(path)
            .and_then(|f| f.build())
            .map_err(synth_failure)?,
        None => make_aspern_like(&AspernConfig {
            seed: a.seed,
            days: a.days,
            nodes: a.nodes,
            coverage: a.coverage,
            noise_pct: a.noise,
            ..AspernConfig::default()
        })
        .map_err(synth_failure)?,
    };
    let set = emulate_sensors(&scenario).map_err(synth_failure)?;
    out_dir(&a.out)?;
    write_scenario_files(&scenario, &set, &a.out)?;

    let counts = CaseCounts::of(&decompose(&scenario.topology));
    println!(
        "{} nodes, {} metered, {} lines: case1 {}, case2 {}, case3 {}, case4 {}",
        scenario.topology.node_count(),
        scenario.topology.measured_nodes().len(),
        scenario.topology.lines().len(),
        counts.case1,
        counts.case2,
        counts.case3,
        counts.case4
    );
    println!("{} samples per metered node and phase, written to {}", scenario.samples_per_node(), a.out.display());
    Ok(())
}

fn write_scenario_files(s: &SimulationScenario, set: &MeasurementSet, dir: &Path) -> CliResult {
    let mut w = create(dir, "measurements.csv")?;
    io(write_csv(set, &mut w), "measurements.csv")?;
    io(w.flush(), "measurements.csv")?;
    let mut w = create(dir, "ground_truth.csv")?;
    io(s.write_ground_truth(&mut w), "ground_truth.csv")?;
    io(w.flush(), "ground_truth.csv")?;
    let mut w = create(dir, "benchmark.csv")?;
    io(s.write_benchmark(&mut w), "benchmark.csv")?;
    io(w.flush(), "benchmark.csv")?;
    io(fs::write(dir.join("topology.json"), s.topology.to_file().to_json() + "\n"), "topology.json")?;
    io(fs::write(dir.join("scenario.json"), s.to_file().to_json() + "\n"), "scenario.json")?;
    Ok(())
}

fn read_topology(path: &Path) -> CliResult<TopologyFile> {
    TopologyFile::load(path).map_err(|e| {
        let status = if matches!(e, TopologyError::Io(_)) { Status::Config } else { Status::Parse };
        fail(status)(e.into())
    })
}

fn read_measurements(path: &Path) -> CliResult<MeasurementSet> {
    let file = File::open(path)
        .with_context(|| format!("cannot open measurements {}", path.display()))
        .map_err(fail(Status::Config))?;
    let (set, report) = ingest_csv(BufReader::new(file))
        .with_context(|| format!("cannot parse {}", path.display()))
        .map_err(fail(Status::Parse))?;
    log::info!("ingested {report:?}");
    if report.malformed > 0 || report.skipped > 0 {
        log::warn!("{} malformed and {} skipped rows in {}", report.malformed, report.skipped, path.display());
    }
    Ok(set)
}

/// Builds the topology. Without an explicit meter list, every node that
/// has data in `set` counts as metered.
fn build_topology(mut file: TopologyFile, set: Option<&MeasurementSet>) -> CliResult<GridTopology> {
    if let Some(set) = set {
        let known: BTreeSet<_> = file.nodes.iter().cloned().collect();
        let with_data: BTreeSet<_> = set.iter().map(|s| s.node.clone()).collect();
        for n in with_data.difference(&known) {
            log::warn!("measurements for node {n} which is not in the topology");
        }
        if file.measured.is_empty() {
            file.measured = with_data.intersection(&known).cloned().collect();
        }
    }
    file.build().map_err(|e| fail(Status::Parse)(e.into()))
}

fn cmd_decompose(a: &DecomposeArgs) -> CliResult {
    let file = read_topology(&a.topology)?;
    let set = a.measurements.as_deref().map(read_measurements).transpose()?;
    let t = build_topology(file, set.as_ref())?;
    let classes = decompose(&t);
    print!("{}", report::classification_table(&classes));
    if let Some(dir) = &a.out {
        out_dir(dir)?;
        let mut w = create(dir, "classification.csv")?;
        io(report::write_classification_csv(&classes, &mut w), "classification.csv")?;
        io(w.flush(), "classification.csv")?;
    }
    Ok(())
}

struct Loaded {
    topology: GridTopology,
    set: MeasurementSet,
    config: EstimatorConfig,
    benchmark: Option<Benchmark>,
}

fn load_run(a: &RunArgs) -> CliResult<Loaded> {
    let band = match (a.v_min, a.v_max) {
        (None, None) => FeasibleVoltageBand::new(a.v_nominal),
        (lo, hi) => FeasibleVoltageBand::with_limits(
            a.v_nominal,
            lo.unwrap_or(0.95 * a.v_nominal),
            hi.unwrap_or(1.05 * a.v_nominal),
        ),
    }
    .map_err(|e| fail(Status::Config)(e.into()))?;
    if a.frequency <= 0.0 {
        return Err(fail(Status::Config)(anyhow::anyhow!("frequency must be positive")));
    }
    let mut config = EstimatorConfig::new(band);
    config.min_samples = a.min_samples;
    config.variant = match a.variant {
        Variant::FirstMoment => EstimatorVariant::FirstMoment,
        Variant::SecondMoment => EstimatorVariant::SecondMoment,
    };
    config.case3_form = match a.case3_form {
        Case3::Literal => Case3Form::Literal,
        Case3::ParallelEquivalent => Case3Form::ParallelEquivalent,
    };

    let file = read_topology(&a.topology)?;
    let set = read_measurements(&a.measurements)?;
    let topology = build_topology(file, Some(&set))?;
    let benchmark = match &a.benchmark {
        None => None,
        Some(path) => {
            let f = File::open(path)
                .with_context(|| format!("cannot open benchmark {}", path.display()))
                .map_err(fail(Status::Config))?;
            let b = Benchmark::read_csv(BufReader::new(f), a.frequency)
                .with_context(|| format!("cannot parse {}", path.display()))
                .map_err(fail(Status::Parse))?;
            Some(b)
        }
    };
    Ok(Loaded {
        topology,
        set,
        config,
        benchmark,
    })
}

fn cmd_estimate(a: &RunArgs) -> CliResult {
    let l = load_run(a)?;
    let run = estimate_all(&l.topology, &l.set, &l.config);
    out_dir(&a.out)?;

    let mut w = create(&a.out, "classification.csv")?;
    io(report::write_classification_csv(&run.classifications, &mut w), "classification.csv")?;
    io(w.flush(), "classification.csv")?;
    let mut w = create(&a.out, "estimates.csv")?;
    io(report::write_estimates_csv(&run.estimates, &mut w), "estimates.csv")?;
    io(w.flush(), "estimates.csv")?;
    io(
        fs::write(a.out.join("estimates.json"), report::estimates_to_json(&run.estimates) + "\n"),
        "estimates.json",
    )?;

    let determined = run.determined_count();
    println!("{determined} of {} line-phase estimates determined", run.estimates.len());
    if let Some(bench) = &l.benchmark {
        let rows = report::compare(&run.estimates, bench);
        let mut w = create(&a.out, "comparison.csv")?;
        io(report::write_comparison_csv(&rows, &mut w), "comparison.csv")?;
        io(w.flush(), "comparison.csv")?;
        let text = report::summary_text(&report::summarize(&rows));
        io(fs::write(a.out.join("summary.txt"), &text), "summary.txt")?;
        print!("{text}");
    }
    if determined == 0 {
        return Err(fail(Status::NoResults)(anyhow::anyhow!("no line could be estimated")));
    }
    Ok(())
}

fn cmd_sensitivity(a: &SensitivityArgs) -> CliResult {
    let l = load_run(&a.run)?;
    let Some(bench) = &l.benchmark else {
        return Err(fail(Status::Config)(anyhow::anyhow!("sensitivity needs --benchmark")));
    };
    let mode = if a.random { Subsample::Random { seed: a.seed } } else { Subsample::Prefix };
    let rows = run_sensitivity(&l.topology, &l.set, &l.config, bench, &a.sizes, mode).map_err(|e| {
        let status = match e {
            SensitivityError::SizeExceedsData { .. } | SensitivityError::NoSizes => Status::Config,
            _ => Status::Io,
        };
        fail(status)(e.into())
    })?;
    out_dir(&a.run.out)?;
    let mut w = create(&a.run.out, "sensitivity.csv")?;
    io(write_sensitivity_csv(&rows, &mut w), "sensitivity.csv")?;
    io(w.flush(), "sensitivity.csv")?;
    for &n in &a.sizes {
        match lineid_core::sensitivity::median_err_at(&rows, n) {
            Some(m) => println!("n={n}: median error {m:.1}%"),
            None => println!("n={n}: no determined case-1 line"),
        }
    }
    if rows.iter().all(|r| r.err_pct.is_none()) {
        return Err(fail(Status::NoResults)(anyhow::anyhow!("no line could be scored")));
    }
    Ok(())
}
