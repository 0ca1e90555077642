use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lanechange::planner::{residual_sweep, PlanningProblem, SCAN_MARGIN, SCAN_POINTS};
use lanechange::predictor::predict_trajectory;
use lanechange::scenario::{export, load_scenario, run_scenario, synthesize_history, RunOptions};
use lanechange::{Error, SweepPoint};

#[derive(Parser)]
#[command(
    name = "lanechange",
    version,
    about = "Lane-change planning around a predicted vehicle"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan a scenario and write ego.csv, obstacle.csv and meta.json.
    Run {
        /// Preset name (scenario1, scenario2, scenario3) or scenario file.
        scenario: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Cross-check the plan against the collocation oracle.
        #[arg(long)]
        verify: bool,
        /// Sampling step of the exported trajectory [s].
        #[arg(long, default_value_t = lanechange::model::DEFAULT_SAMPLE_DT)]
        dt: f64,
        /// Seed for observation noise.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the jump residual and cost over candidate constraint times as CSV.
    Sweep {
        scenario: String,
        #[arg(long, default_value_t = SCAN_POINTS)]
        points: usize,
        /// Index of the surrounding vehicle to constrain against.
        #[arg(long, default_value_t = 0)]
        vehicle: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(err: &Error) -> u8 {
    if err.is_infeasible() {
        2
    } else {
        1
    }
}

fn print_sweep(points: &[SweepPoint]) -> std::io::Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "t_i,residual,cost")?;
    for p in points {
        writeln!(out, "{:.16e},{:.16e},{:.16e}", p.t_i, p.residual, p.cost)?;
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Run {
            scenario,
            out,
            verify,
            dt,
            seed,
        } => {
            let config = load_scenario(&scenario)?;
            let options = RunOptions {
                sample_dt: dt,
                seed,
                verify,
            };
            let result = run_scenario(&config, &options)?;
            let files = export(&result, &out)?;
            let plan = &result.plan;
            match plan.t_i {
                Some(t_i) => println!(
                    "{}: constrained, t_i* = {t_i:.6} s, J = {:.6}, phi = ({:.6}, {:.6})",
                    config.name, plan.cost, plan.phi_1, plan.phi_3
                ),
                None => println!("{}: unconstrained, J = {:.6}", config.name, plan.cost),
            }
            println!("clearance violations: {}", result.total_violations());
            if let Some(oracle) = &result.oracle {
                println!(
                    "oracle: relative cost delta {:.3e}, t_i delta {}",
                    oracle.cost_rel_delta,
                    oracle
                        .t_i_delta
                        .map_or("n/a".to_string(), |d| format!("{d:.4} s"))
                );
            }
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Sweep {
            scenario,
            points,
            vehicle,
            seed,
        } => {
            let config = load_scenario(&scenario)?;
            config.validate()?;
            let v = config.vehicles.get(vehicle).ok_or_else(|| Error::Config {
                field: "vehicle".into(),
                line: None,
                message: format!("scenario has {} vehicles", config.vehicles.len()),
            })?;
            let history = synthesize_history(&config, v, seed)?;
            let prediction = predict_trajectory(
                &history,
                &config.predictor.predictor_config(),
                config.t_f - config.t_0,
            )?;
            let problem = PlanningProblem::new(
                config.boundary()?,
                prediction.polynomial,
                v.envelope,
                v.side,
            )?;
            let sweep = residual_sweep(&problem, points, SCAN_MARGIN)?;
            print_sweep(&sweep).map_err(|source| Error::Io {
                path: PathBuf::from("<stdout>"),
                source,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            if let Error::Infeasible { sweep, .. } = &err {
                if !sweep.is_empty() {
                    eprintln!("residual sweep:");
                    for p in sweep {
                        eprintln!(
                            "  t_i = {:.4}  R = {:+.6e}  J = {:.6}",
                            p.t_i, p.residual, p.cost
                        );
                    }
                }
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
