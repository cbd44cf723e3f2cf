use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use dzvoc_core::engine::{run_scenario, Trace, SWITCHED_MAX_DT};
use dzvoc_core::network::PvMode;

use crate::builtins::builtin;
use crate::config::ScenarioConfig;
use crate::error::CliError;
use crate::output::write_trace_csv;
use crate::summary::{evaluate, RunSummary};

/// Command-line adjustments applied on top of a scenario file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunOverrides {
    pub dt: Option<f64>,
    pub full_rate: bool,
    pub switched_pv: bool,
}

/// A builtin name or a path to a TOML/JSON scenario.
pub fn resolve_scenario(arg: &str) -> Result<ScenarioConfig, CliError> {
    match builtin(arg) {
        Some(c) => Ok(c),
        None => {
            let path = Path::new(arg);
            if !path.exists() {
                return Err(CliError::Usage(format!(
                    "'{arg}' is neither a builtin scenario ({}) nor an existing file",
                    crate::builtins::BUILTIN_NAMES.join(", ")
                )));
            }
            ScenarioConfig::load(path)
        }
    }
}

/// Overrides keep the output interval: a smaller step raises the decimation.
pub fn apply_overrides(cfg: &mut ScenarioConfig, o: &RunOverrides) -> Result<(), CliError> {
    let interval = cfg.sim.dt * cfg.sim.decimation as f64;
    let mut dt = o.dt;
    if o.switched_pv {
        let pv = cfg
            .pv
            .as_mut()
            .ok_or_else(|| CliError::Usage(format!("scenario '{}' has no PV inverter", cfg.name)))?;
        pv.mode = PvMode::Switched;
        if dt.is_none() && cfg.sim.dt > SWITCHED_MAX_DT {
            dt = Some(SWITCHED_MAX_DT);
        }
    }
    if let Some(dt) = dt {
        cfg.sim.dt = dt;
        cfg.sim.decimation = ((interval / dt).round() as usize).max(1);
    }
    if o.full_rate {
        cfg.sim.decimation = 1;
    }
    Ok(())
}

pub struct RunOutcome {
    pub summary: RunSummary,
    pub trace: Trace,
}

pub fn execute(cfg: &ScenarioConfig) -> Result<RunOutcome, CliError> {
    let built = cfg.build()?;
    let started = Instant::now();
    let (trace, metrics) = run_scenario(built.sim, &built.schedule, built.grid.clone())?;
    let unguarded_overshoot = if cfg.expect.compare_without_guard {
        let mut grid = built.grid;
        for u in &mut grid.units {
            u.vrl.params.fault_guard = false;
        }
        let (_, m) = run_scenario(built.sim, &built.schedule, grid)?;
        m.faults.first().map(|f| f.post_clear_overshoot)
    } else {
        None
    };
    let runtime_s = started.elapsed().as_secs_f64();
    let checks = evaluate(cfg, &metrics, unguarded_overshoot);
    let summary = RunSummary {
        scenario: cfg.name.clone(),
        passed: checks.iter().all(|c| c.passed),
        checks,
        metrics,
        unguarded_overshoot,
        dt: cfg.sim.dt,
        t_end: cfg.sim.t_end,
        runtime_s,
    };
    Ok(RunOutcome { summary, trace })
}

/// Writes `<name>.csv` and `<name>.summary.json` under `dir`.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let stem: String = outcome
        .summary
        .scenario
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    let csv_path = dir.join(format!("{stem}.csv"));
    let file = File::create(&csv_path).map_err(|e| CliError::io(&csv_path, e))?;
    write_trace_csv(&outcome.trace, BufWriter::new(file)).map_err(|e| CliError::csv(&csv_path, e))?;
    let json_path = dir.join(format!("{stem}.summary.json"));
    let json = serde_json::to_string_pretty(&outcome.summary).expect("summary always serializes");
    std::fs::write(&json_path, json + "\n").map_err(|e| CliError::io(&json_path, e))?;
    Ok((csv_path, json_path))
}

/// Scenario files directly inside `dir`, sorted.
pub fn sweep_inputs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(p.extension().and_then(|e| e.to_str()), Some("toml") | Some("json"))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub struct SweepResult {
    pub input: PathBuf,
    pub result: Result<RunSummary, CliError>,
}

impl SweepResult {
    pub fn exit_code(&self) -> i32 {
        match &self.result {
            Ok(s) if s.passed => crate::EXIT_OK,
            Ok(_) => crate::EXIT_EXPECTATION,
            Err(e) => e.exit_code(),
        }
    }
}

/// Runs every file in parallel; each writes into `out/<file stem>/`.
pub fn sweep(dir: &Path, out: &Path) -> Result<Vec<SweepResult>, CliError> {
    let inputs = sweep_inputs(dir)?;
    Ok(inputs
        .into_par_iter()
        .map(|input| {
            let result = ScenarioConfig::load(&input).and_then(|cfg| {
                let outcome = execute(&cfg)?;
                let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                write_outputs(&outcome, &out.join(stem))?;
                Ok(outcome.summary)
            });
            SweepResult { input, result }
        })
        .collect())
}
