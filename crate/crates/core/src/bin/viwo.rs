use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mecanum_vio::harness::{
    expected_orderings, presets, run_experiment, run_variants, step_response, EstimatorVariant,
    PipelineConfig, VariantResult,
};
use mecanum_vio::io;
use mecanum_vio::simworld::{run_scenario, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "viwo",
    about = "Mecanum visual-inertial-wheel odometry simulator and estimator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file, or a preset name (clean, slip, collision, abduction, step).
    #[arg(short, long, default_value = "slip")]
    scenario: String,
    /// Override the scenario's random seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulator and write the sensor log.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(short, long, default_value = "out/log")]
        out: PathBuf,
    },
    /// Run estimators over a previously written log.
    Estimate {
        /// Directory written by `simulate`.
        #[arg(short, long)]
        log: PathBuf,
        /// Comma-separated variant names.
        #[arg(long, value_delimiter = ',', default_values_t = EstimatorVariant::ALL.map(|v| v.to_string()))]
        variants: Vec<String>,
        #[arg(short, long, default_value = "out/estimate")]
        out: PathBuf,
    },
    /// Simulate once, run all requested variants, compare against ground truth.
    Experiment {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_delimiter = ',', default_values_t = EstimatorVariant::ALL.map(|v| v.to_string()))]
        variants: Vec<String>,
        #[arg(short, long, default_value = "out/experiment")]
        out: PathBuf,
        /// Fail unless the expected error orderings hold.
        #[arg(long)]
        check: bool,
    },
    /// Step response of the wheel controller.
    ControllerStep {
        #[arg(short, long, default_value = "step")]
        scenario: String,
        #[arg(short, long, default_value = "out/controller_step.csv")]
        out: PathBuf,
    },
}

type BoxResult<T> = Result<T, Box<dyn std::error::Error>>;

fn load_scenario(source: &str, seed: Option<u64>) -> BoxResult<ScenarioConfig> {
    let mut cfg = if Path::new(source).is_file() {
        ScenarioConfig::from_toml(&std::fs::read_to_string(source)?)?
    } else {
        presets::by_name(source).ok_or_else(|| format!("`{source}` is neither a file nor a preset"))?
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn parse_variants(names: &[String]) -> BoxResult<Vec<EstimatorVariant>> {
    Ok(names.iter().map(|n| n.parse()).collect::<Result<_, _>>()?)
}

fn write_results(out: &Path, results: &[VariantResult]) -> BoxResult<()> {
    std::fs::create_dir_all(out)?;
    let mut table =
        String::from("variant,position_error,position_error_rate,heading_error,gated_count\n");
    for r in results {
        let dir = out.join(r.variant.name());
        std::fs::create_dir_all(&dir)?;
        io::write_trajectory(&dir.join("trajectory.csv"), &r.trajectory)?;
        io::write_metrics(&dir.join("metrics.txt"), &r.metrics)?;
        if !r.keyframes.is_empty() {
            std::fs::write(dir.join("verdicts.csv"), io::verdicts_text(&r.keyframes))?;
        }
        let m = &r.metrics;
        table += &format!(
            "{},{},{},{},{}\n",
            r.variant, m.position_error, m.position_error_rate, m.heading_error, m.gated_count
        );
        println!(
            "{:<20} error {:>7.3} m  rate {:>6.2}%  heading {:>+7.2} deg  gated {}",
            r.variant.name(),
            m.position_error,
            m.position_error_rate * 100.0,
            m.heading_error,
            m.gated_count
        );
    }
    std::fs::write(out.join("comparison.csv"), table)?;
    Ok(())
}

fn run(cli: Cli) -> BoxResult<bool> {
    let pipeline = PipelineConfig::default();
    match cli.command {
        Command::Simulate { scenario, out } => {
            let cfg = load_scenario(&scenario.scenario, scenario.seed)?;
            let log = run_scenario(&cfg)?;
            io::write_log(&out, &log)?;
            println!(
                "{}: {} imu, {} wheel, {} camera samples -> {}",
                cfg.name,
                log.imu.len(),
                log.wheels.len(),
                log.frames.len(),
                out.display()
            );
            Ok(true)
        }
        Command::Estimate { log, variants, out } => {
            let variants = parse_variants(&variants)?;
            let log = io::read_log(&log)?;
            write_results(&out, &run_variants(&log, &variants, &pipeline)?)?;
            Ok(true)
        }
        Command::Experiment {
            scenario,
            variants,
            out,
            check,
        } => {
            let cfg = load_scenario(&scenario.scenario, scenario.seed)?;
            let variants = parse_variants(&variants)?;
            let exp = run_experiment(&cfg, &variants, &pipeline)?;
            write_results(&out, &exp.results)?;
            let mut ok = true;
            if check {
                for (what, holds) in expected_orderings(&cfg, &exp) {
                    println!("{} {what}", if holds { "PASS" } else { "FAIL" });
                    ok &= holds;
                }
            }
            Ok(ok)
        }
        Command::ControllerStep { scenario, out } => {
            let cfg = load_scenario(&scenario, None)?;
            let resp = step_response(&cfg)?;
            if let Some(dir) = out.parent() {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&out, io::step_response_text(&resp))?;
            let ok = resp.final_error <= 0.02;
            println!(
                "{} settled within {:.3}% of setpoint, max |constraint error| {:.5} m/s",
                if ok { "PASS" } else { "FAIL" },
                resp.final_error * 100.0,
                resp.max_constraint_error
            );
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
