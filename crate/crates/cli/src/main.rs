use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use hac_core::config::CtrlModeName;
use hac_core::{parse_config_with_overrides, run_scenario, Error, OutputOptions, ScenarioName};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Discrete,
    Continuous,
}

/// Runs a hybrid angle control scenario and writes CSV, plots and a report.
#[derive(Debug, Parser)]
#[command(name = "hac", version)]
struct Args {
    /// islanded_load_step, grid_connected_setpoint, grid_freq_step,
    /// two_converter_sharing, matching_only, droop_only, lyapunov_decay or
    /// equilibrium_report
    #[arg(long)]
    scenario: String,
    /// TOML configuration; defaults apply to every key not given
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Stop time in seconds
    #[arg(long)]
    t_stop: Option<f64>,
    /// Integration step in seconds
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, value_enum, default_value = "on")]
    plots: OnOff,
    #[arg(long, value_enum)]
    ctrl_mode: Option<Mode>,
    /// Config override, e.g. `--set hac.kappa_dc=0`; repeatable
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

fn run(args: Args) -> Result<String, Error> {
    let name: ScenarioName = args.scenario.parse()?;
    let text = match &args.config {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut cfg = parse_config_with_overrides(&text, &args.overrides)?;
    if let Some(t) = args.t_stop {
        cfg.sim.t_stop_s = t;
        cfg.lyapunov.t_stop_s = t;
    }
    if let Some(h) = args.dt {
        cfg.sim.h_s = h;
    }
    if let Some(m) = args.ctrl_mode {
        cfg.sim.ctrl_mode = match m {
            Mode::Discrete => CtrlModeName::Discrete,
            Mode::Continuous => CtrlModeName::Continuous,
        };
    }
    cfg.validate()?;
    let out = OutputOptions { dir: Some(args.out), plots: matches!(args.plots, OnOff::On) };
    let run = run_scenario(name, &cfg, &out)?;
    Ok(run.report.to_string())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(args) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) if e.is_config() => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
