//! Scenario files: TOML (preferred) or JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use dzvoc_core::control::{PvSource, VrlParams};
use dzvoc_core::engine::{EventSchedule, ScheduledEvent, SimConfig};
use dzvoc_core::network::{
    scale_unit_for_capacity, FilterParams, GridEvent, GridModel, InverterUnit, PvInverter, PvMode,
    DEFAULT_FAULT_CONDUCTANCE, DEFAULT_PV_BAND, DEFAULT_PV_L, DEFAULT_PV_R,
};
use dzvoc_core::oscillator::{FeedbackGains, OscillatorParams};
use dzvoc_core::stability::validate_design;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    /// Phase RMS setpoint, volts.
    #[serde(default = "default_v_nominal")]
    pub v_nominal: f64,
    /// Initial load, watts.
    pub load_power: f64,
    /// Conductance applied by fault events that do not give their own.
    #[serde(default = "default_fault_conductance")]
    pub fault_conductance: f64,
    #[serde(default)]
    pub sim: SimConfig,
    pub units: Vec<UnitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pv: Option<PvConfig>,
    #[serde(default)]
    pub events: Vec<EventConfig>,
    #[serde(default)]
    pub expect: Expectations,
}

fn default_v_nominal() -> f64 {
    230.0
}

fn default_fault_conductance() -> f64 {
    DEFAULT_FAULT_CONDUCTANCE
}

fn default_capacity() -> f64 {
    1.0
}

/// One battery inverter. Parameters describe the full-rating unit and are
/// rescaled by `capacity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitConfig {
    #[serde(default = "default_capacity")]
    pub capacity: f64,
    #[serde(default)]
    pub oscillator: OscillatorParams,
    #[serde(default)]
    pub gains: FeedbackGains,
    #[serde(default)]
    pub filter: FilterParams,
    #[serde(default)]
    pub vrl: VrlParams,
}

impl Default for UnitConfig {
    fn default() -> Self {
        Self {
            capacity: 1.0,
            oscillator: OscillatorParams::default(),
            gains: FeedbackGains::default(),
            filter: FilterParams::default(),
            vrl: VrlParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PvConfig {
    /// Watts.
    pub power: f64,
    pub v_dc: f64,
    pub connected: bool,
    pub mode: PvMode,
    /// Relay half-band, amperes.
    pub band: f64,
    pub l_filter: f64,
    pub r_filter: f64,
}

impl Default for PvConfig {
    fn default() -> Self {
        let src = PvSource::default();
        Self {
            power: src.p_generated,
            v_dc: src.v_dc,
            connected: true,
            mode: PvMode::Averaged,
            band: DEFAULT_PV_BAND,
            l_filter: DEFAULT_PV_L,
            r_filter: DEFAULT_PV_R,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    LoadSet,
    LoadDelta,
    FaultOn,
    FaultOff,
    PvDisconnect,
    PvConnect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventConfig {
    pub time: f64,
    pub kind: EventKind,
    /// Watts, for load events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power: Option<f64>,
    /// Siemens, optional for `fault_on`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conductance: Option<f64>,
}

impl EventConfig {
    pub fn new(time: f64, kind: EventKind) -> Self {
        Self { time, kind, power: None, conductance: None }
    }

    pub fn with_power(mut self, power: f64) -> Self {
        self.power = Some(power);
        self
    }

    fn to_event(self) -> Result<GridEvent, String> {
        let needs_power = |p: Option<f64>| {
            p.ok_or_else(|| format!("event at t = {}: {:?} needs `power`", self.time, self.kind))
        };
        if self.conductance.is_some() && self.kind != EventKind::FaultOn {
            return Err(format!("event at t = {}: `conductance` only applies to fault_on", self.time));
        }
        if self.power.is_some() && !matches!(self.kind, EventKind::LoadSet | EventKind::LoadDelta) {
            return Err(format!("event at t = {}: `power` only applies to load events", self.time));
        }
        Ok(match self.kind {
            EventKind::LoadSet => GridEvent::LoadSet { power: needs_power(self.power)? },
            EventKind::LoadDelta => GridEvent::LoadDelta { power: needs_power(self.power)? },
            EventKind::FaultOn => GridEvent::FaultOn { conductance: self.conductance },
            EventKind::FaultOff => GridEvent::FaultOff,
            EventKind::PvDisconnect => GridEvent::PvDisconnect,
            EventKind::PvConnect => GridEvent::PvConnect,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepHorizon {
    /// Difference of the settled windows around the event.
    #[default]
    Settled,
    /// One-cycle average one cycle after the event, against the settled
    /// window before it.
    OneCycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerStepExpectation {
    /// Event time the step belongs to.
    pub time: f64,
    /// Source index: units in order, then the PV inverter.
    pub source: usize,
    /// Expected change, watts.
    pub delta: f64,
    /// Relative tolerance on `delta`.
    pub tolerance: f64,
    #[serde(default)]
    pub horizon: StepHorizon,
}

/// Declared pass/fail conditions for a run. Unset entries are not checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Expectations {
    /// Target unit shares in every settled, fault-free window.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shares: Option<Vec<f64>>,
    /// Absolute tolerance on each share.
    pub share_tolerance: f64,
    /// Longest RMS settling time after load and PV events, seconds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settling_time: Option<f64>,
    /// Longest per-source power response after load and PV events, seconds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_response: Option<f64>,
    /// Highest bus RMS while a fault is applied, per unit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault_rms_max: Option<f64>,
    /// Longest RMS recovery after fault clearance, seconds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault_recovery: Option<f64>,
    /// Re-run with the fault guard disabled and require a strictly larger
    /// post-clearance overshoot.
    pub compare_without_guard: bool,
    /// Largest power-balance residual on settled windows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub balance_residual: Option<f64>,
    /// Relative tolerance of the PV's settled injection while connected.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pv_power_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub power_steps: Vec<PowerStepExpectation>,
}

impl Default for Expectations {
    fn default() -> Self {
        Self {
            shares: None,
            share_tolerance: 0.05,
            settling_time: None,
            power_response: None,
            fault_rms_max: None,
            fault_recovery: None,
            compare_without_guard: false,
            balance_residual: None,
            pv_power_tolerance: None,
            power_steps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigFormat {
    Toml,
    Json,
}

impl ConfigFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => ConfigFormat::Json,
            _ => ConfigFormat::Toml,
        }
    }
}

/// Everything the engine needs for one run.
#[derive(Debug, Clone)]
pub struct BuiltScenario {
    pub sim: SimConfig,
    pub schedule: EventSchedule,
    pub grid: GridModel,
}

impl ScenarioConfig {
    pub fn parse(text: &str, format: ConfigFormat) -> Result<Self, String> {
        match format {
            ConfigFormat::Toml => toml::from_str(text).map_err(|e| e.to_string()),
            ConfigFormat::Json => serde_json::from_str(text).map_err(|e| e.to_string()),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, ConfigFormat::from_path(path)).map_err(|message| CliError::Parse {
            path: path.display().to_string(),
            message,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config always serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario config always serializes")
    }

    fn schedule(&self) -> Result<EventSchedule, Vec<String>> {
        let mut bad = Vec::new();
        let mut events = Vec::with_capacity(self.events.len());
        for e in &self.events {
            match e.to_event() {
                Ok(event) => events.push(ScheduledEvent { time: e.time, event }),
                Err(m) => bad.push(m),
            }
        }
        if !bad.is_empty() {
            return Err(bad);
        }
        EventSchedule::new(events).map_err(|e| vec![e.to_string()])
    }

    /// Every violated rule across the file, including the oscillator design
    /// rules of each unit.
    pub fn violations(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.units.is_empty() {
            bad.push("at least one [[units]] entry is required".into());
        }
        if !(self.load_power > 0.0) {
            bad.push(format!("load_power must be positive, got {}", self.load_power));
        }
        if !(self.v_nominal > 0.0) {
            bad.push(format!("v_nominal must be positive, got {}", self.v_nominal));
        }
        if !(self.fault_conductance >= 0.0) {
            bad.push(format!("fault_conductance must be >= 0, got {}", self.fault_conductance));
        }
        let switched = matches!(self.pv, Some(pv) if pv.mode == PvMode::Switched);
        bad.extend(self.sim.violations(switched));
        for (k, u) in self.units.iter().enumerate() {
            let tag = format!("units[{k}]");
            if !(u.capacity > 0.0 && u.capacity <= 1.0) {
                bad.push(format!("{tag}.capacity must lie in (0, 1], got {}", u.capacity));
            }
            let structural: Vec<String> = u
                .oscillator
                .violations()
                .into_iter()
                .chain(u.gains.violations())
                .chain(u.filter.violations())
                .chain(u.vrl.violations())
                .collect();
            if structural.is_empty() {
                for c in validate_design(&u.oscillator, &u.gains).failures() {
                    bad.push(format!("{tag}: design rule {} failed: {}", c.name, c.detail));
                }
            }
            bad.extend(structural.into_iter().map(|m| format!("{tag}: {m}")));
        }
        if let Some(pv) = &self.pv {
            if !(pv.power >= 0.0) {
                bad.push(format!("pv.power must be >= 0, got {}", pv.power));
            }
            if !(pv.v_dc > 0.0) {
                bad.push(format!("pv.v_dc must be positive, got {}", pv.v_dc));
            }
            if !(pv.band > 0.0) {
                bad.push(format!("pv.band must be positive, got {}", pv.band));
            }
            if !(pv.l_filter > 0.0 && pv.r_filter >= 0.0) {
                bad.push("pv.l_filter must be positive and pv.r_filter non-negative".into());
            }
        }
        if let Some(shares) = &self.expect.shares {
            if shares.len() != self.units.len() {
                bad.push(format!(
                    "expect.shares has {} entries for {} units",
                    shares.len(),
                    self.units.len()
                ));
            }
        }
        let n_src = self.units.len() + usize::from(self.pv.is_some());
        for s in &self.expect.power_steps {
            if s.source >= n_src {
                bad.push(format!("expect.power_steps: source {} does not exist", s.source));
            }
            if !self.events.iter().any(|e| (e.time - s.time).abs() < 1e-9) {
                bad.push(format!("expect.power_steps: no event at t = {}", s.time));
            }
        }
        match self.schedule() {
            Ok(s) => {
                if let Some(e) = s.events().iter().find(|e| e.time > self.sim.t_end) {
                    bad.push(format!("event at t = {} lies beyond sim.t_end = {}", e.time, self.sim.t_end));
                }
            }
            Err(msgs) => bad.extend(msgs),
        }
        bad
    }

    pub fn build(&self) -> Result<BuiltScenario, CliError> {
        let bad = self.violations();
        if !bad.is_empty() {
            return Err(CliError::Invalid(bad));
        }
        let units = self
            .units
            .iter()
            .map(|u| {
                let base = InverterUnit::new(u.oscillator, u.gains, u.filter, u.vrl);
                scale_unit_for_capacity(&base, u.capacity)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Invalid(vec![e.to_string()]))?;
        let pv = self.pv.map(|c| {
            let source = PvSource {
                p_generated: c.power,
                v_dc: c.v_dc,
                connected: c.connected,
            };
            PvInverter::new(source, c.mode, c.band, c.l_filter, c.r_filter)
        });
        let mut grid = GridModel::new(units, pv, self.load_power, self.v_nominal)
            .map_err(|e| CliError::Invalid(vec![e.to_string()]))?;
        grid.fault_conductance = self.fault_conductance;
        let schedule = self.schedule().map_err(CliError::Invalid)?;
        Ok(BuiltScenario { sim: self.sim, schedule, grid })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        "name = \"tiny\"\nload_power = 5000.0\n\n[[units]]\n"
    }

    #[test]
    fn minimal_file_takes_defaults() {
        let c = ScenarioConfig::parse(minimal(), ConfigFormat::Toml).unwrap();
        assert_eq!(c.units, vec![UnitConfig::default()]);
        assert_eq!(c.sim, SimConfig::default());
        assert_eq!(c.v_nominal, 230.0);
        assert!(c.violations().is_empty());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{}sigmaa = 0.4\n", minimal());
        let err = ScenarioConfig::parse(&text, ConfigFormat::Toml).unwrap_err();
        assert!(err.contains("sigmaa"), "{err}");
        let err = ScenarioConfig::parse("name = \"x\"\nload_power = 1.0\nunits = []\n[sim]\nstep = 1e-5\n", ConfigFormat::Toml)
            .unwrap_err();
        assert!(err.contains("step"), "{err}");
    }

    #[test]
    fn parse_errors_carry_the_line() {
        let err = ScenarioConfig::parse("name = \"x\"\nload_power = = 3\n", ConfigFormat::Toml).unwrap_err();
        assert!(err.contains("line 2"), "{err}");
        let err = ScenarioConfig::parse("{\n\"name\": \"x\",\n\"load_power\": ]\n}", ConfigFormat::Json).unwrap_err();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn every_violation_is_listed() {
        let mut c = ScenarioConfig::parse(minimal(), ConfigFormat::Toml).unwrap();
        c.load_power = -1.0;
        c.units[0].oscillator.sigma = 0.05;
        c.units[0].capacity = 2.0;
        c.events.push(EventConfig::new(1.0, EventKind::LoadDelta));
        let bad = c.violations();
        assert!(bad.iter().any(|m| m.contains("load_power")));
        assert!(bad.iter().any(|m| m.contains("sigma_r")));
        assert!(bad.iter().any(|m| m.contains("capacity")));
        assert!(bad.iter().any(|m| m.contains("needs `power`")));
        assert!(matches!(c.build(), Err(CliError::Invalid(v)) if v.len() == bad.len()));
    }

    #[test]
    fn mistuned_inductor_fails_the_frequency_rule() {
        let mut c = ScenarioConfig::parse(minimal(), ConfigFormat::Toml).unwrap();
        c.units[0].oscillator.l = 500e-6;
        let bad = c.violations();
        assert_eq!(bad.len(), 1, "{bad:?}");
        assert!(bad[0].contains("frequency") && bad[0].contains("35.355"));
    }

    #[test]
    fn json_is_accepted() {
        let c = ScenarioConfig::parse(minimal(), ConfigFormat::Toml).unwrap();
        let back = ScenarioConfig::parse(&c.to_json(), ConfigFormat::Json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn build_scales_units() {
        let mut c = ScenarioConfig::parse(minimal(), ConfigFormat::Toml).unwrap();
        c.units.push(UnitConfig { capacity: 0.5, ..UnitConfig::default() });
        let b = c.build().unwrap();
        assert_eq!(b.grid.units.len(), 2);
        assert_eq!(b.grid.units[1].gains.i_gain, 2.0 * b.grid.units[0].gains.i_gain);
    }
}
