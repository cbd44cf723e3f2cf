//! Averaged electrical model of the islanded microgrid.
//!
//! Every grid-forming unit is an EMF behind its series `R_f`–`L_f` branch. All
//! shunt filter capacitors sit in parallel on the common bus, together with
//! the constant-resistance load, the fault conductance and the PV injection.
//! Phases are simulated independently against an implicit neutral.
//!
//! The dynamic state lives in one flat vector laid out as
//! `[unit 0: v_osc, i_L, i_fa, i_fb, i_fc] … [bus: va, vb, vc] [pv: ia, ib, ic]`
//! where the PV currents exist only for the switched PV inverter.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{HysteresisController, PvSource, SwitchState, VrlParams, VrlState};
use crate::oscillator::{FeedbackGains, OscillatorParams, OscillatorState};
use crate::signals::{MovingAverage, ThreePhase};

pub const UNIT_STATES: usize = 5;
pub const DEFAULT_FAULT_CONDUCTANCE: f64 = 20.0;
pub const DEFAULT_PV_BAND: f64 = 0.5;
pub const DEFAULT_PV_L: f64 = 5e-3;
pub const DEFAULT_PV_R: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("capacity scale must lie in (0, 1], got {0}")]
    BadCapacity(f64),
    #[error("event would leave load power at {0} W; it must stay positive")]
    NonPositiveLoad(f64),
    #[error("fault conductance must be non-negative, got {0}")]
    NegativeFault(f64),
    #[error("event requires a PV inverter but the grid has none")]
    NoPv,
    #[error("grid needs at least one grid-forming unit")]
    NoUnits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterParams {
    pub r_f: f64,
    pub l_f: f64,
    pub c_f: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            r_f: 0.1,
            l_f: 250e-4,
            c_f: 60e-6,
        }
    }
}

impl FilterParams {
    pub fn violations(&self) -> Vec<String> {
        [("r_f", self.r_f), ("l_f", self.l_f), ("c_f", self.c_f)]
            .into_iter()
            .filter(|(_, v)| !(v.is_finite() && *v > 0.0))
            .map(|(n, v)| format!("filter.{n} must be positive and finite, got {v}"))
            .collect()
    }
}

/// One grid-forming battery inverter.
#[derive(Debug, Clone, PartialEq)]
pub struct InverterUnit {
    pub osc: OscillatorParams,
    pub gains: FeedbackGains,
    pub filter: FilterParams,
    pub vrl: VrlState,
    /// Fraction of the reference unit's rating, in (0, 1].
    pub capacity: f64,
    /// Free-running orbit peak used to normalize the modulation reference.
    /// Filled in by the engine's calibration when `None`.
    pub orbit_peak: Option<f64>,
}

impl InverterUnit {
    pub fn new(osc: OscillatorParams, gains: FeedbackGains, filter: FilterParams, vrl: VrlParams) -> Self {
        Self {
            osc,
            gains,
            filter,
            vrl: VrlState::new(vrl),
            capacity: 1.0,
            orbit_peak: None,
        }
    }
}

impl Default for InverterUnit {
    fn default() -> Self {
        Self::new(
            OscillatorParams::default(),
            FeedbackGains::default(),
            FilterParams::default(),
            VrlParams::default(),
        )
    }
}

/// Rescale a unit to `s_k` times its rating: gains and series impedance
/// inversely, shunt capacitance proportionally. `R_s` follows `i_gain` so the
/// small-signal eigenvalues are unchanged.
pub fn scale_unit_for_capacity(base: &InverterUnit, s_k: f64) -> Result<InverterUnit, NetworkError> {
    if !(s_k > 0.0 && s_k <= 1.0) {
        return Err(NetworkError::BadCapacity(s_k));
    }
    let mut unit = base.clone();
    unit.capacity = base.capacity * s_k;
    unit.gains.i_gain = base.gains.i_gain / s_k;
    unit.osc.r_s = base.osc.r_s / s_k;
    unit.filter = FilterParams {
        r_f: base.filter.r_f / s_k,
        l_f: base.filter.l_f / s_k,
        c_f: base.filter.c_f * s_k,
    };
    Ok(unit)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PvMode {
    /// Ideal current source equal to the reference.
    #[default]
    Averaged,
    /// Two-level bridge with per-phase relays behind an inductor.
    Switched,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PvInverter {
    pub source: PvSource,
    pub mode: PvMode,
    pub control: HysteresisController,
    pub l_filter: f64,
    pub r_filter: f64,
    /// Reference held over the current step.
    pub i_ref: ThreePhase,
}

impl PvInverter {
    pub fn new(source: PvSource, mode: PvMode, band: f64, l_filter: f64, r_filter: f64) -> Self {
        Self {
            source,
            mode,
            control: HysteresisController::new(band),
            l_filter,
            r_filter,
            i_ref: ThreePhase::ZERO,
        }
    }

    /// Default band and filter.
    pub fn with_defaults(source: PvSource, mode: PvMode) -> Self {
        Self::new(source, mode, DEFAULT_PV_BAND, DEFAULT_PV_L, DEFAULT_PV_R)
    }
}

/// How the PV inverter drives the bus during one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PvDrive {
    None,
    /// Injected current (averaged mode).
    Current(ThreePhase),
    /// Leg voltages relative to the DC midpoint (switched mode).
    Poles(ThreePhase),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridEvent {
    LoadSet { power: f64 },
    LoadDelta { power: f64 },
    /// `conductance` defaults to the grid's configured bolted-fault value.
    FaultOn {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        conductance: Option<f64>,
    },
    FaultOff,
    PvDisconnect,
    PvConnect,
}

impl GridEvent {
    pub fn name(&self) -> &'static str {
        match self {
            GridEvent::LoadSet { .. } => "load_set",
            GridEvent::LoadDelta { .. } => "load_delta",
            GridEvent::FaultOn { .. } => "fault_on",
            GridEvent::FaultOff => "fault_off",
            GridEvent::PvDisconnect => "pv_disconnect",
            GridEvent::PvConnect => "pv_connect",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    pub units: Vec<InverterUnit>,
    pub pv: Option<PvInverter>,
    /// Per-phase bus capacitance, farads.
    pub c_bus: f64,
    /// Nominal phase RMS voltage used to convert power setpoints.
    pub v_nominal: f64,
    /// Load setpoint at nominal voltage, watts.
    pub load_power: f64,
    /// Per-phase conductances, siemens.
    pub g_load: f64,
    pub g_fault: f64,
    pub fault_conductance: f64,
    pub state: Vec<f64>,
}

/// Per-phase load conductance drawing `power` watts at `v_phase_rms`.
pub fn load_conductance(power: f64, v_phase_rms: f64) -> f64 {
    power / (3.0 * v_phase_rms * v_phase_rms)
}

impl GridModel {
    pub fn new(
        units: Vec<InverterUnit>,
        pv: Option<PvInverter>,
        load_power: f64,
        v_nominal: f64,
    ) -> Result<Self, NetworkError> {
        if units.is_empty() {
            return Err(NetworkError::NoUnits);
        }
        if !(load_power > 0.0) {
            return Err(NetworkError::NonPositiveLoad(load_power));
        }
        let c_bus = units.iter().map(|u| u.filter.c_f).sum();
        let mut grid = Self {
            units,
            pv,
            c_bus,
            v_nominal,
            load_power,
            g_load: load_conductance(load_power, v_nominal),
            g_fault: 0.0,
            fault_conductance: DEFAULT_FAULT_CONDUCTANCE,
            state: Vec::new(),
        };
        grid.state = vec![0.0; grid.state_len()];
        for k in 0..grid.units.len() {
            grid.set_oscillator(k, OscillatorState::STARTUP);
        }
        Ok(grid)
    }

    pub fn has_switched_pv(&self) -> bool {
        matches!(&self.pv, Some(pv) if pv.mode == PvMode::Switched)
    }

    pub fn state_len(&self) -> usize {
        self.bus_offset() + 3 + if self.has_switched_pv() { 3 } else { 0 }
    }

    fn bus_offset(&self) -> usize {
        self.units.len() * UNIT_STATES
    }

    fn pv_offset(&self) -> usize {
        self.bus_offset() + 3
    }

    pub fn oscillator(&self, k: usize) -> OscillatorState {
        oscillator_in(&self.state, k)
    }

    pub fn set_oscillator(&mut self, k: usize, s: OscillatorState) {
        let o = k * UNIT_STATES;
        self.state[o] = s.v_osc;
        self.state[o + 1] = s.i_l;
    }

    pub fn unit_current(&self, k: usize) -> ThreePhase {
        unit_current_in(&self.state, k)
    }

    pub fn bus_voltage(&self) -> ThreePhase {
        three_at(&self.state, self.bus_offset())
    }

    /// PV output current: the inductor state when switched, else the held reference.
    pub fn pv_current(&self) -> ThreePhase {
        match &self.pv {
            Some(pv) if pv.source.connected => match pv.mode {
                PvMode::Switched => three_at(&self.state, self.pv_offset()),
                PvMode::Averaged => pv.i_ref,
            },
            _ => ThreePhase::ZERO,
        }
    }

    pub fn apply_event(&mut self, event: &GridEvent) -> Result<(), NetworkError> {
        match *event {
            GridEvent::LoadSet { power } => self.set_load(power)?,
            GridEvent::LoadDelta { power } => self.set_load(self.load_power + power)?,
            GridEvent::FaultOn { conductance } => {
                let g = conductance.unwrap_or(self.fault_conductance);
                if !(g >= 0.0) {
                    return Err(NetworkError::NegativeFault(g));
                }
                self.g_fault = g;
            }
            GridEvent::FaultOff => self.g_fault = 0.0,
            GridEvent::PvDisconnect | GridEvent::PvConnect => {
                let connect = matches!(event, GridEvent::PvConnect);
                let off = self.pv_offset();
                let switched = self.has_switched_pv();
                let pv = self.pv.as_mut().ok_or(NetworkError::NoPv)?;
                pv.source.connected = connect;
                if !connect {
                    pv.i_ref = ThreePhase::ZERO;
                    if switched {
                        self.state[off..off + 3].fill(0.0);
                    }
                }
            }
        }
        Ok(())
    }

    fn set_load(&mut self, power: f64) -> Result<(), NetworkError> {
        if !(power > 0.0) {
            return Err(NetworkError::NonPositiveLoad(power));
        }
        self.load_power = power;
        self.g_load = load_conductance(power, self.v_nominal);
        Ok(())
    }

    /// Largest `G/C` rate on the bus node for a given extra conductance.
    pub fn bus_rate(&self, extra_conductance: f64) -> f64 {
        (self.g_load + extra_conductance) / self.c_bus
    }
}

fn three_at(y: &[f64], o: usize) -> ThreePhase {
    ThreePhase::new(y[o], y[o + 1], y[o + 2])
}

pub fn oscillator_in(y: &[f64], k: usize) -> OscillatorState {
    let o = k * UNIT_STATES;
    OscillatorState::new(y[o], y[o + 1])
}

pub fn unit_current_in(y: &[f64], k: usize) -> ThreePhase {
    three_at(y, k * UNIT_STATES + 2)
}

/// Derivatives of the electrical states (filter currents, bus voltages, PV
/// inductor currents) for the given EMFs and PV drive. Oscillator slots of
/// `dy` are left untouched.
pub fn grid_derivative(g: &GridModel, y: &[f64], emfs: &[ThreePhase], pv: PvDrive, dy: &mut [f64]) {
    let bus_o = g.bus_offset();
    let v_bus = three_at(y, bus_o);
    let mut i_in = ThreePhase::ZERO;
    for (k, unit) in g.units.iter().enumerate() {
        let i_f = unit_current_in(y, k);
        i_in = i_in + i_f;
        let di = (emfs[k] - i_f * unit.filter.r_f - v_bus) * (1.0 / unit.filter.l_f);
        let o = k * UNIT_STATES + 2;
        dy[o] = di.a;
        dy[o + 1] = di.b;
        dy[o + 2] = di.c;
    }
    match pv {
        PvDrive::None => {}
        PvDrive::Current(i) => i_in = i_in + i,
        PvDrive::Poles(poles) => {
            let inv = g.pv.as_ref().expect("switched drive without a PV inverter");
            let o = g.pv_offset();
            let i_pv = three_at(y, o);
            i_in = i_in + i_pv;
            // floating neutral: subtract the common-mode pole voltage
            let cm = (poles.a + poles.b + poles.c) / 3.0;
            let v_out = poles - ThreePhase::new(cm, cm, cm);
            let di = (v_out - i_pv * inv.r_filter - v_bus) * (1.0 / inv.l_filter);
            dy[o] = di.a;
            dy[o + 1] = di.b;
            dy[o + 2] = di.c;
        }
    }
    if g.has_switched_pv() && !matches!(pv, PvDrive::Poles(_)) {
        let o = g.pv_offset();
        dy[o..o + 3].fill(0.0);
    }
    let dv = (i_in - v_bus * (g.g_load + g.g_fault)) * (1.0 / g.c_bus);
    dy[bus_o] = dv.a;
    dy[bus_o + 1] = dv.b;
    dy[bus_o + 2] = dv.c;
}

/// Leg voltages for the given relay states.
pub fn pole_voltages(states: [SwitchState; 3], v_dc: f64) -> ThreePhase {
    ThreePhase::new(
        states[0].pole_voltage(v_dc),
        states[1].pole_voltage(v_dc),
        states[2].pole_voltage(v_dc),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerMeasurement {
    /// Instantaneous three-phase power, watts.
    pub instantaneous: f64,
    /// One-cycle sliding average, watts.
    pub average: f64,
}

/// Sliding one-cycle power meter.
#[derive(Debug, Clone)]
pub struct PowerMeter {
    avg: MovingAverage,
}

impl PowerMeter {
    pub fn new(window_s: f64, dt: f64) -> Self {
        Self {
            avg: MovingAverage::with_samples((window_s / dt).round().max(1.0) as usize),
        }
    }

    pub fn push(&mut self, p: f64) -> PowerMeasurement {
        PowerMeasurement {
            instantaneous: p,
            average: self.avg.push(p),
        }
    }
}

/// A measurable power flow on the bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerPoint {
    Unit(usize),
    Pv,
    Load,
    Fault,
}

/// Instantaneous power `Σ v·i` at the bus for one measurement point.
pub fn instantaneous_power(g: &GridModel, at: PowerPoint) -> f64 {
    let v = g.bus_voltage();
    match at {
        PowerPoint::Unit(k) => v.dot(&g.unit_current(k)),
        PowerPoint::Pv => v.dot(&g.pv_current()),
        PowerPoint::Load => g.g_load * v.sum_squares(),
        PowerPoint::Fault => g.g_fault * v.sum_squares(),
    }
}

pub fn measure_power(g: &GridModel, at: PowerPoint, meter: &mut PowerMeter) -> PowerMeasurement {
    meter.push(instantaneous_power(g, at))
}
