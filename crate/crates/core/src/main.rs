use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gridmor::gramians::GramianConfig;
use gridmor::lyap::MACHINE_TAU;
use gridmor::netparams::{load_parameters, save_parameters, synth_grid};
use gridmor::pipeline::{
    evaluate, reduce_network, simulate_full, sweep, write_diagnostics_csv, write_metrics_csv,
    IndexedValue, ModelKind, RunConfig, SweepGrid,
};
use gridmor::reduce::{load_reduced, save_reduced, PodVariant, ReductionMethod};
use gridmor::sim::{write_trajectory_csv, CsvColumns};
use gridmor::Error;

#[derive(Parser)]
#[command(
    name = "gridmor",
    version,
    about = "Reduce swing-equation grid models by quadratic lifting and balanced truncation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic network parameter file.
    Gen(GenArgs),
    /// Reduce a network and write the reduced model and a diagnostics table.
    Reduce(ReduceArgs),
    /// Simulate a network and a reduced model and report errors.
    Compare(CompareArgs),
    /// Reduce and compare over a grid of settings.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Number of oscillators.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probability that a pair of oscillators is coupled.
    #[arg(long, default_value_t = 1.0)]
    connectivity: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Bt,
    Pod,
}

impl From<Method> for ReductionMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Bt => ReductionMethod::BalancedTruncation,
            Method::Pod => ReductionMethod::Pod,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PodBasis {
    Global,
    Block,
}

#[derive(Args)]
struct SimArgs {
    /// Simulation end time (s).
    #[arg(long, default_value_t = 2.0)]
    tend: f64,
    #[arg(long, default_value_t = 1e-8)]
    rtol: f64,
    #[arg(long, default_value_t = 1e-10)]
    atol: f64,
    /// Number of output samples.
    #[arg(long, default_value_t = 201)]
    grid: usize,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Initial angle of one oscillator, `i:radians` (1-based).
    #[arg(long = "perturb-x0", value_parser = parse_indexed)]
    perturb_x0: Option<IndexedValue>,
    /// Scale one entry of the input [u; 1], `i:factor` (1-based).
    #[arg(long = "perturb-u", value_parser = parse_indexed)]
    perturb_u: Option<IndexedValue>,
}

#[derive(Args)]
struct ReductionArgs {
    /// Model family label written to the diagnostics (EN or SM).
    #[arg(long = "model-kind", default_value = "EN", value_parser = parse_kind)]
    model_kind: ModelKind,
    #[arg(long, value_enum, default_value = "global")]
    pod_basis: PodBasis,
    /// Skip the steady-state adjustment of the reduced angles.
    #[arg(long)]
    no_steady_state: bool,
    /// Common initial frequency of the reduction shift point and the scenario.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    omega0: f64,
    #[arg(long, default_value_t = MACHINE_TAU)]
    tau: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReduceArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long, value_enum, default_value = "bt")]
    method: Method,
    /// Reduced state dimension.
    #[arg(long)]
    nr: usize,
    /// Gramian shift.
    #[arg(long, default_value_t = 5e-3)]
    alpha: f64,
    /// Number of Gramian series terms (odd).
    #[arg(long = "N", default_value_t = 3)]
    terms: usize,
    #[command(flatten)]
    reduction: ReductionArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Reduced-model file; diagnostics go next to it.
    #[arg(long)]
    out: PathBuf,
    /// Diagnostics CSV path (default: `<out stem>.diagnostics.csv`).
    #[arg(long)]
    diagnostics: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    params: PathBuf,
    /// Reduced-model file written by `reduce`.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Output directory for metrics.csv, full_outputs.csv and reduced_outputs.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "bt")]
    method: Vec<Method>,
    #[arg(long, value_delimiter = ',', required = true)]
    nr: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "5e-3")]
    alpha: Vec<f64>,
    #[arg(long = "N", value_delimiter = ',', default_value = "3")]
    terms: Vec<usize>,
    #[command(flatten)]
    reduction: ReductionArgs,
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Metrics CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn parse_indexed(s: &str) -> Result<IndexedValue, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn base_config(sim: &SimArgs, red: Option<&ReductionArgs>) -> RunConfig {
    let mut cfg = RunConfig {
        t_end: sim.tend,
        rtol: sim.rtol,
        atol: sim.atol,
        output_grid: sim.grid,
        ..RunConfig::default()
    };
    if let Some(r) = red {
        cfg.model_kind = r.model_kind;
        cfg.seed = r.seed;
        cfg.initial_frequency = r.omega0;
        cfg.gramians.tau = r.tau;
        cfg.pod_variant = match r.pod_basis {
            PodBasis::Global => PodVariant::Global,
            PodBasis::Block => PodVariant::BlockDiagonal,
        };
        if r.no_steady_state {
            cfg.steady_state = None;
        }
    }
    cfg
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_gen(a: GenArgs) -> Result<(), Error> {
    let params = synth_grid(a.n, a.seed, a.connectivity)?;
    save_parameters(&params, &a.out)?;
    log::info!("wrote {} oscillators to {}", a.n, a.out.display());
    Ok(())
}

fn cmd_reduce(a: ReduceArgs) -> Result<(), Error> {
    let params = load_parameters(&a.params)?;
    let cfg = RunConfig {
        method: a.method.into(),
        n_r: a.nr,
        gramians: GramianConfig {
            alpha: a.alpha,
            terms: a.terms,
            tau: a.reduction.tau,
        },
        ..base_config(&a.sim, Some(&a.reduction))
    };
    cfg.validate_for(&params)?;
    let red = reduce_network(&params, &cfg)?;
    save_reduced(&red.model, &a.out)?;
    let diag = a
        .diagnostics
        .unwrap_or_else(|| a.out.with_extension("diagnostics.csv"));
    write_diagnostics_csv(&red, &cfg, create(&diag)?)?;
    log::info!("wrote {} and {}", a.out.display(), diag.display());
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> Result<(), Error> {
    let params = load_parameters(&a.params)?;
    let model = load_reduced(&a.model)?;
    if model.n_full() != 4 * params.n_o() {
        return Err(Error::Validation(format!(
            "reduced model was built for {} lifted states, the network has {}",
            model.n_full(),
            4 * params.n_o()
        )));
    }
    let mut cfg = RunConfig {
        method: model.method,
        n_r: model.n_r(),
        perturb_x0: a.scenario.perturb_x0,
        perturb_u: a.scenario.perturb_u,
        ..base_config(&a.sim, None)
    };
    if let Some(g) = model.gramian_config {
        cfg.gramians = g;
    }
    let n_o = params.n_o();
    let omega0 = model.x0_full[n_o];
    if model.x0_full.rows(n_o, n_o).iter().any(|w| *w != omega0) {
        return Err(Error::Validation(
            "reduced model was shifted at non-uniform frequencies".into(),
        ));
    }
    cfg.initial_frequency = omega0;
    cfg.validate_for(&params)?;
    let full = simulate_full(&params, &cfg)?;
    let (record, reduced) = evaluate(&params, &model, &full, &cfg)?;
    fs::create_dir_all(&a.out)?;
    write_metrics_csv(
        std::slice::from_ref(&record),
        create(&a.out.join("metrics.csv"))?,
    )?;
    write_trajectory_csv(
        &full,
        CsvColumns::Outputs,
        create(&a.out.join("full_outputs.csv"))?,
    )?;
    match reduced {
        Some(tr) => write_trajectory_csv(
            &tr,
            CsvColumns::Outputs,
            create(&a.out.join("reduced_outputs.csv"))?,
        )?,
        None => log::warn!(
            "reduced simulation failed: {}",
            record.failure.as_deref().unwrap_or("unknown")
        ),
    }
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Error> {
    let params = load_parameters(&a.params)?;
    let base = RunConfig {
        perturb_x0: a.scenario.perturb_x0,
        perturb_u: a.scenario.perturb_u,
        ..base_config(&a.sim, Some(&a.reduction))
    };
    let grid = SweepGrid {
        methods: a.method.iter().map(|&m| m.into()).collect(),
        alphas: a.alpha,
        terms: a.terms,
        n_rs: a.nr,
    };
    let rows = sweep(&params, &base, &grid, a.jobs)?;
    write_metrics_csv(&rows, create(&a.out)?)?;
    let failed = rows.iter().filter(|r| r.failed()).count();
    log::info!(
        "{} runs, {failed} failed; wrote {}",
        rows.len(),
        a.out.display()
    );
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Validation(_) | Error::Parse(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Reduce(a) => cmd_reduce(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
