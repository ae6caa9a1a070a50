use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sepatch::budget::ObjectiveWeights;
use sepatch::cli::{cmd_budget, cmd_gradcheck, cmd_render, cmd_run, BudgetArgs};
use sepatch::gradcheck::{Analytic, GradcheckConfig};
use sepatch::simulator::{scenario_by_name, scripted_scenarios, ScenarioScript};

#[derive(Parser)]
#[command(name = "sepatch", version, about = "Dynamic patch sizes for multi-view ViT detection, measured in FLOPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write report.json, frames.csv and selections.txt.
    Run {
        /// Flat `key = value` run config.
        config: PathBuf,
    },
    /// Fit accuracy/cost surfaces and pick the pair closest to the budgets.
    Budget {
        /// CSV with columns p_small,p_large,accuracy,cost.
        samples: PathBuf,
        #[arg(long, default_value_t = 2)]
        degree: usize,
        /// Cost budget, in the samples' cost units.
        #[arg(long)]
        budget_time: f64,
        /// Accuracy budget, in the samples' accuracy units.
        #[arg(long)]
        budget_nds: f64,
        #[arg(long, default_value_t = 1.0)]
        weight_time: f64,
        #[arg(long, default_value_t = 1.0)]
        weight_nds: f64,
        /// Directory for surface.json and grid.csv.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Finite-difference check of the attention gradients.
    Gradcheck {
        #[arg(long, default_value_t = 24)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Dump simulator frames as PGM/PPM plus truth.csv.
    Render {
        /// Library scenario name or script path.
        scenario: String,
        #[arg(long)]
        output: PathBuf,
        /// First frame to render.
        #[arg(long, default_value_t = 0)]
        start: usize,
        /// Number of frames (default: through the end of the script).
        #[arg(long)]
        count: Option<usize>,
    },
    /// List the built-in scenarios.
    Scenarios,
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Command) -> sepatch::Result<ExitCode> {
    match cmd {
        Command::Run { config } => {
            let s = cmd_run(&config)?;
            println!("{}", s.line());
        }
        Command::Budget {
            samples,
            degree,
            budget_time,
            budget_nds,
            weight_time,
            weight_nds,
            output,
        } => {
            let out = cmd_budget(&BudgetArgs {
                samples,
                degree,
                budget_cost: budget_time,
                budget_accuracy: budget_nds,
                weights: ObjectiveWeights {
                    cost: weight_time,
                    accuracy: weight_nds,
                },
                output,
            })?;
            println!("{}", out.line());
        }
        Command::Gradcheck {
            instances,
            seed,
            tolerance,
        } => {
            let cfg = GradcheckConfig {
                instances,
                seed,
                tolerance,
                ..GradcheckConfig::default()
            };
            let r = cmd_gradcheck(&cfg, Analytic::default())?;
            println!(
                "temporal max rel err {:.3e}, cgfe max rel err {:.3e}, tolerance {:.1e}: {}",
                r.worst_temporal(),
                r.worst_cgfe(),
                r.tolerance,
                if r.passed() { "pass" } else { "FAIL" }
            );
            if !r.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Render {
            scenario,
            output,
            start,
            count,
        } => {
            let script = match scenario_by_name(&scenario) {
                Some(s) => s,
                None => ScenarioScript::load(std::path::Path::new(&scenario))?,
            };
            let end = count.map_or(script.num_frames, |c| start + c);
            let n = cmd_render(&script, start..end, &output)?;
            println!("wrote {n} images to {}", output.display());
        }
        Command::Scenarios => {
            for s in scripted_scenarios() {
                println!("{}\t{} frames\t{} objects", s.name, s.num_frames, s.objects.len());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
