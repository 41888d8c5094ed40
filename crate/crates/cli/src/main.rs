use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use robust_dsm::experiments::{
    cmd_convergence_trace, cmd_oracle_check, cmd_realtime_compare, cmd_solve, cmd_sweep_users, exit_code,
    ExperimentConfig, EXIT_OK, EXIT_ORACLE, EXIT_SOLVER,
};
use robust_dsm::game::{SolverConfig, SweepMode};
use robust_dsm::oracle::OracleOptions;
use robust_dsm::DsmError;

#[derive(Parser, Debug)]
#[command(name = "dsm", version, about = "Robust demand-side management experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario document or scenario spec (JSON).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Comma-separated population sizes [default: 20,50,100; 3 for oracle-check].
    #[arg(long, global = true, value_delimiter = ',')]
    users: Option<Vec<usize>>,
    /// Monte Carlo runs per population.
    #[arg(long, global = true, default_value_t = 100)]
    runs: usize,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Proximal weight (default depends on the sweep).
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    outer_tol: Option<f64>,
    #[arg(long, global = true)]
    inner_tol: Option<f64>,
    #[arg(long, global = true, value_enum, default_value_t = Sweep::Aggregate)]
    sweep: Sweep,
    /// Optimize loads with zero errors and price the worst case afterwards.
    #[arg(long, global = true)]
    naive: bool,
    #[arg(long, global = true)]
    beta_m: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one scenario.
    Solve,
    /// Robust versus naive equilibria across population sizes.
    SweepUsers,
    /// Monte Carlo real-time cost comparison.
    RealtimeCompare,
    /// Per-iteration convergence record of one solve.
    ConvergenceTrace,
    /// Compare the solvers with brute-force oracles on micro-instances.
    OracleCheck {
        #[arg(long, default_value_t = 2)]
        slots: usize,
        /// Negate the coupling matrix of the slot-error mapping.
        #[arg(long, hide = true)]
        corrupt_mapping: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sweep {
    GaussSeidel,
    Jacobi,
    Aggregate,
}

impl From<Sweep> for SweepMode {
    fn from(s: Sweep) -> Self {
        match s {
            Sweep::GaussSeidel => SweepMode::GaussSeidel,
            Sweep::Jacobi => SweepMode::Jacobi,
            Sweep::Aggregate => SweepMode::Aggregate,
        }
    }
}

fn config(cli: &Cli) -> ExperimentConfig {
    let defaults = SolverConfig::default();
    ExperimentConfig {
        scenario_path: cli.scenario.clone(),
        output_dir: cli.out.clone(),
        runs: cli.runs,
        user_counts: cli.users.clone().unwrap_or_else(|| vec![20, 50, 100]),
        seed: cli.seed,
        solver: SolverConfig {
            tau: cli.tau,
            outer_tol: cli.outer_tol.unwrap_or(defaults.outer_tol),
            inner_tol: cli.inner_tol.unwrap_or(defaults.inner_tol),
            sweep_mode: cli.sweep.into(),
            naive: cli.naive,
            ..defaults
        },
        beta_m: cli.beta_m,
    }
}

fn init_threads() -> Result<(), DsmError> {
    let Ok(value) = std::env::var("DSM_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .map_err(|_| DsmError::Config(format!("DSM_THREADS = {value:?} is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| DsmError::Config(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<i32, DsmError> {
    init_threads()?;
    let cfg = config(cli);
    match &cli.command {
        Command::Solve => {
            let r = cmd_solve(&cfg)?;
            println!(
                "outer iterations {}, certificate {:.3e}, converged {}",
                r.outer_iterations, r.ne_certificate, r.converged
            );
            Ok(if r.converged { EXIT_OK } else { EXIT_SOLVER })
        }
        Command::SweepUsers => {
            for row in cmd_sweep_users(&cfg)? {
                println!(
                    "users {:>5}  robust {:.6}  naive {:.6}  gain {:.3}%",
                    row.users, row.robust_total_cost, row.naive_total_cost, row.gain_pct
                );
            }
            Ok(EXIT_OK)
        }
        Command::RealtimeCompare => {
            for s in cmd_realtime_compare(&cfg)? {
                println!(
                    "users {:>5}  robust {:.6}  non-robust {:.6}  gain {:.3}% (se {:.3})",
                    s.users, s.mean_robust, s.mean_nonrobust, s.gain_pct, s.stderr
                );
            }
            Ok(EXIT_OK)
        }
        Command::ConvergenceTrace => {
            let r = cmd_convergence_trace(&cfg)?;
            println!("{} outer iterations, converged {}", r.outer_iterations, r.converged);
            Ok(if r.converged { EXIT_OK } else { EXIT_SOLVER })
        }
        Command::OracleCheck { slots, corrupt_mapping } => {
            let opts = OracleOptions {
                users: cli.users.as_ref().map_or(3, |u| u.first().copied().unwrap_or(0)),
                slots: *slots,
                coupling: if *corrupt_mapping { -1.0 } else { 1.0 },
            };
            let report = cmd_oracle_check(&cfg, &opts)?;
            println!("{:<14} {:<28} {:>12} {:>10}  ok", "check", "instance", "discrepancy", "tolerance");
            for c in &report.cases {
                println!(
                    "{:<14} {:<28} {:>12.3e} {:>10.0e}  {}",
                    c.check, c.instance, c.discrepancy, c.tolerance, c.passed
                );
            }
            Ok(if report.passed() { EXIT_OK } else { EXIT_ORACLE })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
