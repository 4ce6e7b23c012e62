//! `robdiag`: pretrain, train, design and test robust diagnosis filters.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use robdiag::experiment::{self, Experiment};
use robdiag::{DesignMode, Error};

#[derive(Parser)]
#[command(name = "robdiag", version, about = "Data-assisted robust anomaly diagnosis filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Pure,
    Assisted,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Experiment output directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the top-level seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the design mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Also write Q̄ as CSV during training.
    #[arg(long)]
    dump_matrices: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the multivariate pre-training LPs.
    Pretrain(Common),
    /// Simulate the training instances and store mismatch signatures.
    Train(Common),
    /// Synthesize the filter and calibrate the detector.
    Design(Common),
    /// Run held-out simulations with and without attack.
    Test(Common),
    /// All phases in order.
    RunAll(Common),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NoFilter(_) | Error::DetectorInfeasible(_) => 2,
        Error::SimulationBlowUp { .. } => 3,
        Error::Config(_)
        | Error::InvalidInput(_)
        | Error::Io { .. }
        | Error::HashMismatch { .. }
        | Error::Artifact(_)
        | Error::Dimension(_) => 4,
        Error::Numerical(_) | Error::Unbounded(_) => 1,
    }
}

fn load(c: &Common) -> Result<Experiment, Error> {
    let mut exp = Experiment::load(&c.config)?;
    if let Some(seed) = c.seed {
        exp = exp.with_seed(seed);
    }
    if let Some(mode) = c.mode {
        exp = exp.with_mode(match mode {
            Mode::Pure => DesignMode::PureModel,
            Mode::Assisted => DesignMode::DataAssisted,
        });
    }
    exp.cfg.dump_matrices |= c.dump_matrices;
    Ok(exp)
}

fn run(cmd: &Command) -> Result<(), Error> {
    let c = match cmd {
        Command::Pretrain(c) | Command::Train(c) | Command::Design(c) | Command::Test(c) | Command::RunAll(c) => c,
    };
    let exp = load(c)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(c.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cmd {
        Command::Pretrain(_) => {
            let r = experiment::cmd_pretrain(&exp, &c.out)?;
            for b in &r.branches {
                println!("LP_{}  γ* = {:.6e}  ({})", b.j, b.gamma_star, b.status);
            }
            println!("best j = {}  γ* = {:.6e}", r.best_j, r.best_gamma);
            Ok(())
        }
        Command::Train(_) => {
            let b = experiment::cmd_train(&exp, &c.out)?;
            let worst = b.summary.instances.iter().fold(0.0f64, |m, s| m.max(s.max_abs_mismatch));
            println!("{} instances, {} samples each, max |ε| = {worst:.4e}", b.signatures.len(), b.summary.samples);
            Ok(())
        }
        Command::Design(_) => {
            let bundle = match exp.cfg.design.mode {
                DesignMode::DataAssisted => Some(experiment::load_bundle(&c.out)?),
                DesignMode::PureModel => None,
            };
            let o = experiment::cmd_design(&exp, bundle.as_ref(), &c.out)?;
            println!(
                "branch j = {} sign {:+}  objective = {:.6e}  threshold = {:.6e}",
                o.report.branch.j,
                o.report.branch.sign,
                o.report.objective,
                o.detector.threshold()
            );
            Ok(())
        }
        Command::Test(_) => {
            let r = experiment::cmd_test(&exp, &c.out)?;
            println!(
                "false alarms {}/{}  detections {}/{}  threshold {:.6e}",
                r.false_alarms,
                r.runs.len(),
                r.detections,
                r.runs.len(),
                r.threshold
            );
            Ok(())
        }
        Command::RunAll(_) => {
            let r = experiment::run_all(&exp, &c.out)?;
            println!(
                "{} ({:?}): false alarms {}/{}  detections {}/{}",
                r.name, r.mode, r.false_alarms, r.runs, r.detections, r.runs
            );
            Ok(())
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
