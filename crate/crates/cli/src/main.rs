use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dzvoc_cli::config::ScenarioConfig;
use dzvoc_cli::output::write_impulse_csv;
use dzvoc_cli::report::{apply_param, stability_report};
use dzvoc_cli::run::{apply_overrides, execute, resolve_scenario, sweep, write_outputs, RunOverrides};
use dzvoc_cli::{CliError, EXIT_EXPECTATION, EXIT_OK};
use dzvoc_core::oscillator::{FeedbackGains, OscillatorParams};
use dzvoc_core::stability::{impulse_response, ImpulseMode};

#[derive(Parser)]
#[command(name = "dzvoc", version, about = "Dead-zone oscillator microgrid simulator", args_conflicts_with_subcommands = true)]
struct Cli {
    /// Run every .toml/.json scenario in DIR in parallel.
    #[arg(long, value_name = "DIR")]
    sweep: Option<PathBuf>,
    /// Output root for --sweep; each scenario writes into its own subdirectory.
    #[arg(long, value_name = "DIR", default_value = "sweep-out", requires = "sweep")]
    sweep_out: PathBuf,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Segment eigenvalues and design-rule checks; exits 1 if a rule fails.
    Stability {
        /// Parameter override, e.g. --param sigma=0.3 (r, l, c, sigma, phi, r_s, omega0, i_gain, v_gain).
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    /// Oscillator response to a unit initial voltage, written as CSV (t, v_osc).
    Impulse {
        /// above, inside, below or full.
        #[arg(long)]
        mode: ImpulseMode,
        #[arg(long, default_value_t = 2.0)]
        duration: f64,
        #[arg(long, default_value_t = 1e-5)]
        dt: f64,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    /// Simulate a builtin scenario (paper-a, paper-b, paper-c) or a scenario file.
    Run {
        scenario: String,
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
        /// Integration step, seconds; the output interval is kept.
        #[arg(long, value_name = "S")]
        dt: Option<f64>,
        /// Record every integration step.
        #[arg(long)]
        full_rate: bool,
        /// Simulate the PV bridge switch by switch.
        #[arg(long)]
        switched_pv: bool,
    },
    /// Print a scenario's full configuration.
    Show {
        scenario: String,
        #[arg(long)]
        json: bool,
    },
}

fn oscillator_with(params: &[String]) -> Result<(OscillatorParams, FeedbackGains), CliError> {
    let mut p = OscillatorParams::default();
    let mut g = FeedbackGains::default();
    for kv in params {
        apply_param(&mut p, &mut g, kv).map_err(CliError::Usage)?;
    }
    let bad: Vec<String> = p.violations().into_iter().chain(g.violations()).collect();
    if !bad.is_empty() {
        return Err(CliError::Invalid(bad));
    }
    Ok((p, g))
}

fn run(cli: Cli) -> Result<i32, CliError> {
    if let Some(dir) = cli.sweep {
        let results = sweep(&dir, &cli.sweep_out)?;
        if results.is_empty() {
            return Err(CliError::Usage(format!("no .toml or .json scenarios in {}", dir.display())));
        }
        let mut code = EXIT_OK;
        for r in &results {
            let status = match &r.result {
                Ok(s) if s.passed => "pass".to_string(),
                Ok(_) => "FAIL".to_string(),
                Err(e) => format!("error: {e}"),
            };
            println!("{}: {status}", r.input.display());
            code = code.max(r.exit_code());
        }
        return Ok(code);
    }
    match cli.command {
        None => Err(CliError::Usage("nothing to do; try `dzvoc --help`".into())),
        Some(Command::Stability { params }) => {
            let (p, g) = oscillator_with(&params)?;
            let (text, ok) = stability_report(&p, &g);
            print!("{text}");
            Ok(if ok { EXIT_OK } else { EXIT_EXPECTATION })
        }
        Some(Command::Impulse { mode, duration, dt, out, params }) => {
            let (p, g) = oscillator_with(&params)?;
            let samples = impulse_response(mode, &p, &g, duration, dt)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let file = File::create(&out).map_err(|e| CliError::io(&out, e))?;
            write_impulse_csv(&samples, BufWriter::new(file)).map_err(|e| CliError::csv(&out, e))?;
            println!("wrote {} samples to {}", samples.len(), out.display());
            Ok(EXIT_OK)
        }
        Some(Command::Run { scenario, out, dt, full_rate, switched_pv }) => {
            let mut cfg = resolve_scenario(&scenario)?;
            apply_overrides(&mut cfg, &RunOverrides { dt, full_rate, switched_pv })?;
            let outcome = execute(&cfg)?;
            let (csv, json) = write_outputs(&outcome, &out)?;
            let s = &outcome.summary;
            for c in &s.checks {
                println!("[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
            }
            println!("{}: {} in {:.2} s", s.scenario, if s.passed { "pass" } else { "FAIL" }, s.runtime_s);
            println!("trace: {}\nsummary: {}", csv.display(), json.display());
            Ok(if s.passed { EXIT_OK } else { EXIT_EXPECTATION })
        }
        Some(Command::Show { scenario, json }) => {
            let cfg: ScenarioConfig = resolve_scenario(&scenario)?;
            print!("{}", if json { cfg.to_json() + "\n" } else { cfg.to_toml() });
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = run(cli).unwrap_or_else(|e| {
        eprintln!("error: {e}");
        e.exit_code()
    });
    ExitCode::from(code as u8)
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        super::Cli::command().debug_assert();
    }
}
