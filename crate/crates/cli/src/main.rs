use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use spingas::boltzmann::{
    analytic_alpha, analytic_entropy_lower_bound, decoherence_times, long_time_entropy_bound, short_time_entropy,
    BoltzmannConfig, PhaseMode,
};
use spingas::runner::{oracle_check, run_with, ExperimentSpec, ModelKind, RunOptions, RunOutput};
use spingas::Error;

#[derive(Parser)]
#[command(name = "spingas", version, about = "Collisional entanglement in classical gases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Boltzmann-gas experiment file.
    Boltzmann(RunArgs),
    /// Run a lattice-gas experiment file.
    Lattice(RunArgs),
    /// Compare fast reduced states with brute-force partial traces.
    OracleCheck {
        /// Largest gas size.
        #[arg(long, default_value_t = 12)]
        n: usize,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, env = "SPINGAS_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate closed-form expressions.
    Analytic(AnalyticArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment file, TOML or JSON.
    #[arg(long, env = "SPINGAS_CONFIG")]
    config: PathBuf,
    #[arg(long, env = "SPINGAS_SEED")]
    seed: Option<u64>,
    #[arg(long, env = "SPINGAS_ENSEMBLE")]
    ensemble: Option<usize>,
    /// Output directory; CSV goes to stdout when absent.
    #[arg(long, env = "SPINGAS_OUT")]
    out: Option<PathBuf>,
    #[arg(long, env = "SPINGAS_WORKERS")]
    workers: Option<usize>,
    /// Realizations between partial flushes.
    #[arg(long, env = "SPINGAS_CHUNK")]
    chunk: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Expression {
    /// Short-time block entropy (2 − log₂e)·N_A(N−N_A)/(N−1)·rt.
    #[value(alias = "7")]
    ShortTime,
    /// Lower bound on the block entropy for random phases.
    #[value(alias = "8")]
    Bound,
    /// Long-time limit of the lower bound.
    LongTime,
    /// Phase-variance rate α for exact phases γ/v.
    Alpha,
    /// Coherence-loss times τ_e and τ_g.
    Tau,
}

#[derive(Args)]
struct AnalyticArgs {
    #[arg(long = "eq", value_enum)]
    expression: Expression,
    /// Gas size.
    #[arg(long = "N")]
    n: Option<usize>,
    /// Block size.
    #[arg(long = "NA")]
    n_a: Option<usize>,
    /// Mean collisions per particle.
    #[arg(long)]
    rt: Option<f64>,
    /// Collision rate r.
    #[arg(long, default_value_t = 1.0)]
    rate: f64,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    delta_phi: Option<f64>,
    #[arg(long)]
    delta_t: Option<f64>,
}

fn required<T>(value: Option<T>, flag: &str, expr: Expression) -> anyhow::Result<T> {
    value.ok_or_else(|| Error::InvalidParameter(format!("--eq {expr:?} needs --{flag}")).into())
}

fn is_usage_error(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<Error>(),
            Some(Error::Config { .. } | Error::IncompatibleObservable { .. } | Error::InvalidParameter(_))
        )
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_usage_error(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Boltzmann(args) => run_experiment(ModelKind::Boltzmann, args),
        Command::Lattice(args) => run_experiment(ModelKind::Lattice, args),
        Command::OracleCheck { n, trials, seed } => {
            let report = oracle_check(n, trials, seed)?;
            println!(
                "trials={} max_error={:.3e} tolerance={:.0e} failures={}",
                report.trials, report.max_error, report.tolerance, report.failures
            );
            if !report.passed() {
                bail!("{} of {} trials exceeded the tolerance", report.failures, report.trials);
            }
            Ok(())
        }
        Command::Analytic(a) => analytic(a),
    }
}

fn analytic(a: AnalyticArgs) -> anyhow::Result<()> {
    let e = a.expression;
    match e {
        Expression::ShortTime => {
            let rt = required(a.rt, "rt", e)?;
            let f = short_time_entropy(required(a.n, "N", e)?, required(a.n_a, "NA", e)?, rt)?;
            if !f.in_regime {
                eprintln!("warning: rt = {rt} is outside the short-time regime");
            }
            println!("{:.5}", f.value);
        }
        Expression::Bound => {
            let s = analytic_entropy_lower_bound(required(a.n, "N", e)?, required(a.n_a, "NA", e)?, 1.0, required(a.rt, "rt", e)?)?;
            println!("{s:.5}");
        }
        Expression::LongTime => println!("{:.5}", long_time_entropy_bound(required(a.n, "N", e)?, required(a.n_a, "NA", e)?)?),
        Expression::Alpha => {
            let cfg = BoltzmannConfig::with_collision_rate(required(a.n, "N", e)?, a.rate, required(a.gamma, "gamma", e)?, PhaseMode::Exact);
            cfg.validate()?;
            let alpha = analytic_alpha(&cfg);
            println!(
                "closed_form={:.6} quadrature={:.6} small_phase={}",
                alpha.closed_form, alpha.quadrature, alpha.small_phase
            );
        }
        Expression::Tau => {
            let (tau_e, tau_g) = decoherence_times(required(a.delta_phi, "delta-phi", e)?, required(a.delta_t, "delta-t", e)?)?;
            println!("tau_e={tau_e:.6} tau_g={tau_g:.6}");
        }
    }
    Ok(())
}

fn run_experiment(model: ModelKind, args: RunArgs) -> anyhow::Result<()> {
    let mut spec = ExperimentSpec::from_path(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    if spec.model != model {
        return Err(Error::Config {
            path: "model".into(),
            message: format!("file describes a {} run", spec.model.name()),
        })
        .context(format!("{} is not a {} experiment", args.config.display(), model.name()));
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(ensemble) = args.ensemble {
        spec.ensemble = ensemble;
    }
    if let Some(out) = args.out {
        spec.output = Some(out);
    }
    spec.validate()?;
    let opts = RunOptions {
        workers: args.workers,
        chunk: args.chunk,
    };
    let out_dir = spec.output.clone();
    let partial_path = out_dir.as_ref().map(|d| d.join(format!("{}.partial.csv", spec.name)));
    let output = run_with(&spec, &opts, |out, done| {
        if let (Some(path), false) = (&partial_path, done) {
            write_partial(path, out)?;
        }
        Ok(())
    })?;
    match out_dir {
        Some(dir) => {
            for path in output.write(&dir)? {
                eprintln!("wrote {}", path.display());
            }
            if let Some(p) = partial_path {
                let _ = fs::remove_file(p);
            }
        }
        None => print!("{}", output.to_csv()?),
    }
    Ok(())
}

fn write_partial(path: &Path, out: &RunOutput) -> spingas::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out.to_csv()?)?;
    Ok(())
}
