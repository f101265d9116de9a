use clap::{Parser, Subcommand};
use ncbf::commands::{self, OracleArgs, ReportArgs, SimulateArgs, TrainArgs, VerifyArgs};
use ncbf::Outcome;
use std::path::PathBuf;
use std::process::ExitCode;

/// Co-synthesis of a neural control barrier function, controller and
/// observer, with certificate checking and closed-loop simulation.
///
/// Exit codes: 0 success or certified, 2 not converged, not certified or an
/// audit failed, 1 error.
#[derive(Parser)]
#[command(name = "ncbf", version)]
struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the sample set and train the three networks.
    Train {
        #[arg(long)]
        plant: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Also write the labelled samples as CSV.
        #[arg(long)]
        save_dataset: bool,
    },
    /// Check the validity condition L_max·ε + η ≤ 0.
    Verify {
        /// Training output directory.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        plant: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        epsilon: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        eta: Option<f64>,
        /// JSON file replacing some or all constants.
        #[arg(long)]
        overrides: Option<PathBuf>,
        /// Also charge the loss tolerance against the margin.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        tolerance: Option<f64>,
        /// Re-run the grid oracle at this covering radius and embed it.
        #[arg(long)]
        oracle_epsilon: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the closed loop from random initial pairs and audit it.
    Simulate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        plant: PathBuf,
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value_t = 10.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Hold the control for this sample period instead of continuous feedback.
        #[arg(long)]
        zoh: Option<f64>,
        /// Start at the centre of the initial set.
        #[arg(long)]
        center: bool,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate q1..q3 on a fine grid and compare their maxima with η.
    Oracle {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        plant: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, allow_hyphen_values = true)]
        eta: Option<f64>,
        #[arg(long)]
        slack: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render SVG plots of a run and its simulations.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        simulations: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let threads = cli.threads;
    Ok(match cli.command {
        Command::Train {
            plant,
            config,
            out,
            resume,
            checkpoint_every,
            save_dataset,
        } => {
            let (outcome, s) = commands::train(&TrainArgs {
                plant,
                config,
                out,
                threads,
                resume,
                checkpoint_every,
                save_dataset,
            })?;
            println!(
                "{} after {} epochs; L_cbf {:e}, eta {}, margin {:e} ({:?})",
                s.message, s.epochs, s.final_losses.l_cbf, s.eta, s.certificate.margin, s.certificate.verdict
            );
            outcome
        }
        Command::Verify {
            run,
            plant,
            epsilon,
            eta,
            overrides,
            strict,
            tolerance,
            oracle_epsilon,
            out,
        } => {
            let (outcome, c) = commands::verify(&VerifyArgs {
                run,
                plant,
                epsilon,
                eta,
                overrides,
                strict,
                tolerance,
                oracle_epsilon,
                out,
                threads,
            })?;
            println!("L_max {} · eps {} + eta {} = {:e}: {:?}", c.l_max, c.epsilon, c.eta_star, c.margin, c.verdict);
            outcome
        }
        Command::Simulate {
            run,
            plant,
            count,
            horizon,
            dt,
            seed,
            zoh,
            center,
            tolerance,
            out,
        } => {
            let (outcome, s) = commands::simulate(&SimulateArgs {
                run,
                plant,
                count,
                horizon,
                dt,
                seed,
                zoh,
                center,
                tolerance,
                out,
                threads,
            })?;
            println!(
                "{} of {} trajectories passed; {} entered the unsafe region; min B {:e}",
                s.passed,
                s.trajectories.len(),
                s.unsafe_entries,
                s.min_barrier
            );
            outcome
        }
        Command::Oracle {
            run,
            plant,
            epsilon,
            eta,
            slack,
            out,
        } => {
            let (outcome, s) = commands::oracle(&OracleArgs {
                run,
                plant,
                epsilon,
                eta,
                slack,
                out,
                threads,
            })?;
            println!("max q over {} points: {:?} (eta {})", s.report.points, s.report.max_q, s.eta);
            outcome
        }
        Command::Report { run, simulations, out } => {
            for f in commands::report(&ReportArgs { run, simulations, out })? {
                println!("{}", f.display());
            }
            Outcome::Success
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
