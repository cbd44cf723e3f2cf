//! Deterministic fixed-step simulation of the full microgrid.
//!
//! Each step reads the measurements at the current instant, updates the
//! discrete controllers (recovery loops, PV reference, relays), then advances
//! the continuous states with the controller outputs held constant over the
//! step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    hysteresis_step, pv_reference, vrl_fault_guard, vrl_step, VrlMeasurement,
};
use crate::network::{
    grid_derivative, instantaneous_power, oscillator_in, pole_voltages, unit_current_in,
    GridEvent, GridModel, NetworkError, PowerMeasurement, PowerMeter, PowerPoint, PvDrive, PvMode,
    UNIT_STATES,
};
use crate::ode::{Integrator, Stepper};
use crate::oscillator::{oscillator_derivative, pwm_reference, OscillatorParams, OscillatorState};
use crate::signals::{clarke, FrequencyTracker, SlidingRms, ThreePhase};

/// Any state above this magnitude aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;
/// Largest step allowed with the switched PV bridge.
pub const SWITCHED_MAX_DT: f64 = 2e-6;
/// Bound on `dt·G/C` for the bus node; RK4's real-axis stability edge is ≈2.785.
pub const RK4_STIFFNESS_LIMIT: f64 = 2.5;
pub const EULER_STIFFNESS_LIMIT: f64 = 1.8;
const CALIBRATION_DT: f64 = 1e-5;
const CALIBRATION_SPAN: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid simulation setup:\n  {}", .0.join("\n  "))]
    InvalidConfig(Vec<String>),
    #[error("state {index} diverged to {value:e} at t = {time:.6} s")]
    Diverged { time: f64, index: usize, value: f64 },
    #[error("event at t = {time} s rejected: {source}")]
    Event { time: f64, source: NetworkError },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    pub integrator: Integrator,
    /// Record every `decimation`-th step.
    pub decimation: usize,
    /// Initial interval excluded from metrics.
    pub startup: f64,
    /// Window of the RMS and power averages.
    pub rms_window: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-5,
            t_end: 5.0,
            integrator: Integrator::Rk4,
            decimation: 100,
            startup: 0.5,
            rms_window: 0.02,
        }
    }
}

impl SimConfig {
    pub fn violations(&self, switched_pv: bool) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            out.push(format!("sim.dt must be positive, got {}", self.dt));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            out.push(format!("sim.t_end must be positive, got {}", self.t_end));
        }
        if self.decimation < 1 {
            out.push("sim.decimation must be at least 1".into());
        }
        if switched_pv && self.dt > SWITCHED_MAX_DT * (1.0 + 1e-9) {
            out.push(format!(
                "sim.dt = {} exceeds {SWITCHED_MAX_DT} s required by the switched PV bridge",
                self.dt
            ));
        }
        if !(self.rms_window > 0.0) {
            out.push(format!("sim.rms_window must be positive, got {}", self.rms_window));
        }
        out
    }

    pub fn steps(&self) -> u64 {
        (self.t_end / self.dt).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub time: f64,
    #[serde(flatten)]
    pub event: GridEvent,
}

/// Time-ordered events, each applied once at the step nearest its timestamp.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventSchedule {
    events: Vec<ScheduledEvent>,
}

impl EventSchedule {
    pub fn new(events: Vec<ScheduledEvent>) -> Result<Self, EngineError> {
        let mut bad = Vec::new();
        for w in events.windows(2) {
            if w[1].time < w[0].time {
                bad.push(format!(
                    "event times must be non-decreasing ({} after {})",
                    w[1].time, w[0].time
                ));
            }
        }
        if let Some(e) = events.iter().find(|e| !(e.time >= 0.0 && e.time.is_finite())) {
            bad.push(format!("event time {} must be finite and >= 0", e.time));
        }
        if bad.is_empty() {
            Ok(Self { events })
        } else {
            Err(EngineError::InvalidConfig(bad))
        }
    }

    pub fn events(&self) -> &[ScheduledEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSample {
    pub v_osc: f64,
    pub i_l: f64,
    pub scale: f64,
    pub current: ThreePhase,
    pub power: PowerMeasurement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceSample {
    pub current: ThreePhase,
    /// Current reference in force over the following step.
    pub reference: ThreePhase,
    pub power: PowerMeasurement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub units: Vec<UnitSample>,
    pub bus: ThreePhase,
    pub bus_rms: f64,
    pub pv: Option<SourceSample>,
    pub load: PowerMeasurement,
    pub fault_power: f64,
    pub frequency: Option<f64>,
}

impl TraceRecord {
    /// One-cycle average power of each source: units first, then PV.
    pub fn source_powers(&self) -> Vec<f64> {
        let mut p: Vec<f64> = self.units.iter().map(|u| u.power.average).collect();
        if let Some(pv) = &self.pv {
            p.push(pv.power.average);
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub unit_count: usize,
    pub has_pv: bool,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn record_spacing(&self) -> Option<f64> {
        match self.records.as_slice() {
            [a, b, ..] => Some(b.t - a.t),
            _ => None,
        }
    }

    /// Index of the first record at or after `t`.
    pub fn index_at(&self, t: f64) -> usize {
        self.records.partition_point(|r| r.t < t - 1e-9)
    }
}

/// Free-running oscillator (no output current) from the startup state,
/// sampled as `(t, state)` every `dt`.
pub fn free_run_oscillator(p: &OscillatorParams, duration: f64, dt: f64) -> Vec<(f64, OscillatorState)> {
    let gains = crate::oscillator::FeedbackGains::default();
    let n = (duration / dt).round() as usize;
    let mut y = [OscillatorState::STARTUP.v_osc, OscillatorState::STARTUP.i_l];
    let mut stepper = Stepper::new(Integrator::Rk4, 2);
    let mut out = Vec::with_capacity(n + 1);
    out.push((0.0, OscillatorState::new(y[0], y[1])));
    for i in 0..n {
        stepper.step(i as f64 * dt, dt, &mut y, |_, s, d| {
            let ds = oscillator_derivative(OscillatorState::new(s[0], s[1]), 0.0, p, &gains);
            d[0] = ds.v_osc;
            d[1] = ds.i_l;
        });
        out.push(((i + 1) as f64 * dt, OscillatorState::new(y[0], y[1])));
    }
    out
}

/// Peak `|v_osc|` of the settled free-running orbit.
pub fn calibrate_orbit_peak(p: &OscillatorParams) -> f64 {
    let run = free_run_oscillator(p, CALIBRATION_SPAN, CALIBRATION_DT);
    let tail_start = CALIBRATION_SPAN - 0.1;
    run.iter()
        .filter(|(t, _)| *t >= tail_start)
        .map(|(_, s)| s.v_osc.abs())
        .fold(0.0, f64::max)
}

fn system_derivative(
    grid: &GridModel,
    scales: &[f64],
    peaks: &[f64],
    drive: PvDrive,
    emfs: &mut Vec<ThreePhase>,
    y: &[f64],
    dy: &mut [f64],
) {
    emfs.clear();
    for (k, unit) in grid.units.iter().enumerate() {
        let osc = oscillator_in(y, k);
        let i_alpha = clarke(unit_current_in(y, k)).alpha;
        let d = oscillator_derivative(osc, i_alpha, &unit.osc, &unit.gains);
        dy[k * UNIT_STATES] = d.v_osc;
        dy[k * UNIT_STATES + 1] = d.i_l;
        emfs.push(pwm_reference(osc, &unit.osc, &unit.gains, scales[k], peaks[k]));
    }
    grid_derivative(grid, y, emfs, drive, dy);
}

/// A running simulation.
pub struct Simulation {
    cfg: SimConfig,
    grid: GridModel,
    events: Vec<(u64, GridEvent)>,
    next_event: usize,
    step_index: u64,
    n_steps: u64,
    stepper: Stepper,
    bus_rms: SlidingRms,
    bridge_rms: Vec<SlidingRms>,
    freq: FrequencyTracker,
    unit_meters: Vec<PowerMeter>,
    pv_meter: PowerMeter,
    load_meter: PowerMeter,
    peaks: Vec<f64>,
    scales: Vec<f64>,
    emfs: Vec<ThreePhase>,
    drive: PvDrive,
    nominal_peak: f64,
}

impl Simulation {
    pub fn new(cfg: SimConfig, mut grid: GridModel, schedule: &EventSchedule) -> Result<Self, EngineError> {
        let mut bad = cfg.violations(grid.has_switched_pv());
        for (k, u) in grid.units.iter().enumerate() {
            bad.extend(u.osc.violations().into_iter().map(|m| format!("unit {}: {m}", k + 1)));
            bad.extend(u.gains.violations().into_iter().map(|m| format!("unit {}: {m}", k + 1)));
            bad.extend(u.filter.violations().into_iter().map(|m| format!("unit {}: {m}", k + 1)));
            bad.extend(u.vrl.params.violations().into_iter().map(|m| format!("unit {}: {m}", k + 1)));
        }
        if let Some(pv) = &grid.pv {
            if pv.mode == PvMode::Switched && !(pv.l_filter > 0.0 && pv.r_filter >= 0.0) {
                bad.push("pv filter inductance must be positive".into());
            }
            if !(pv.control.band > 0.0) {
                bad.push(format!("pv.band must be positive, got {}", pv.control.band));
            }
        }
        if let Some(e) = schedule.events().iter().find(|e| e.time > cfg.t_end) {
            bad.push(format!("event at t = {} lies beyond t_end = {}", e.time, cfg.t_end));
        }
        bad.extend(stiffness_violations(&cfg, &grid, schedule));
        if !bad.is_empty() {
            return Err(EngineError::InvalidConfig(bad));
        }

        let mut peaks = Vec::with_capacity(grid.units.len());
        let mut cache: Vec<(OscillatorParams, f64)> = Vec::new();
        for unit in grid.units.iter_mut() {
            let peak = match unit.orbit_peak {
                Some(p) => p,
                None => {
                    // R_s only enters the small-signal model; the free orbit ignores it
                    let key = OscillatorParams { r_s: 1.0, ..unit.osc };
                    match cache.iter().find(|(k, _)| *k == key) {
                        Some((_, p)) => *p,
                        None => {
                            let p = calibrate_orbit_peak(&unit.osc);
                            cache.push((key, p));
                            p
                        }
                    }
                }
            };
            unit.orbit_peak = Some(peak);
            peaks.push(peak);
        }

        let dt = cfg.dt;
        let n_units = grid.units.len();
        let window = (cfg.rms_window / dt).round().max(1.0) as usize;
        let events = schedule
            .events()
            .iter()
            .map(|e| ((e.time / dt).round() as u64, e.event))
            .collect();
        Ok(Self {
            stepper: Stepper::new(cfg.integrator, grid.state_len()),
            bus_rms: SlidingRms::with_samples(window),
            bridge_rms: vec![SlidingRms::with_samples(window); n_units],
            freq: FrequencyTracker::new(),
            unit_meters: vec![PowerMeter::new(cfg.rms_window, dt); n_units],
            pv_meter: PowerMeter::new(cfg.rms_window, dt),
            load_meter: PowerMeter::new(cfg.rms_window, dt),
            scales: grid.units.iter().map(|u| u.vrl.scale).collect(),
            emfs: Vec::with_capacity(n_units),
            drive: PvDrive::None,
            nominal_peak: grid.v_nominal * 2f64.sqrt(),
            n_steps: cfg.steps(),
            next_event: 0,
            step_index: 0,
            events,
            peaks,
            grid,
            cfg,
        })
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.cfg.dt
    }

    pub fn grid(&self) -> &GridModel {
        &self.grid
    }

    pub fn orbit_peaks(&self) -> &[f64] {
        &self.peaks
    }

    pub fn is_finished(&self) -> bool {
        self.step_index > self.n_steps
    }

    /// Measure, update controllers, optionally record, then integrate one step.
    /// At the final instant the sample is taken without integrating.
    pub fn step(&mut self, record: bool) -> Result<Option<TraceRecord>, EngineError> {
        let t = self.time();
        let dt = self.cfg.dt;
        while let Some(&(at, ev)) = self.events.get(self.next_event) {
            if at > self.step_index {
                break;
            }
            self.grid
                .apply_event(&ev)
                .map_err(|source| EngineError::Event { time: t, source })?;
            self.next_event += 1;
        }

        let bus = self.grid.bus_voltage();
        let bus_rms = self.bus_rms.push((bus.sum_squares() / 3.0).sqrt());
        let frequency = self.freq.push(t, bus.a);

        self.drive = PvDrive::None;
        let pv_meas = self.grid.pv_current();
        if let Some(pv) = self.grid.pv.as_mut() {
            if pv.source.connected {
                let i_ref = pv_reference(&pv.source, clarke(bus), self.nominal_peak);
                pv.i_ref = i_ref;
                self.drive = match pv.mode {
                    PvMode::Averaged => PvDrive::Current(i_ref),
                    PvMode::Switched => {
                        let sw = hysteresis_step(&mut pv.control, pv_meas, i_ref);
                        PvDrive::Poles(pole_voltages(sw, pv.source.v_dc))
                    }
                };
            }
        }

        for k in 0..self.grid.units.len() {
            let unit = &self.grid.units[k];
            let measured = match unit.vrl.params.measurement {
                VrlMeasurement::Terminal => bus_rms,
                VrlMeasurement::Bridge => {
                    let emf = pwm_reference(
                        self.grid.oscillator(k),
                        &unit.osc,
                        &unit.gains,
                        self.scales[k],
                        self.peaks[k],
                    );
                    self.bridge_rms[k].push((emf.sum_squares() / 3.0).sqrt())
                }
            };
            let vrl = &mut self.grid.units[k].vrl;
            vrl_fault_guard(vrl, measured, dt);
            self.scales[k] = vrl_step(vrl, measured, dt);
        }

        let mut units = Vec::new();
        for k in 0..self.grid.units.len() {
            let p = instantaneous_power(&self.grid, PowerPoint::Unit(k));
            let power = self.unit_meters[k].push(p);
            if record {
                let osc = self.grid.oscillator(k);
                units.push(UnitSample {
                    v_osc: osc.v_osc,
                    i_l: osc.i_l,
                    scale: self.scales[k],
                    current: self.grid.unit_current(k),
                    power,
                });
            }
        }
        let pv_power = self
            .grid
            .pv
            .as_ref()
            .map(|_| self.pv_meter.push(instantaneous_power(&self.grid, PowerPoint::Pv)));
        let load = self.load_meter.push(instantaneous_power(&self.grid, PowerPoint::Load));
        let fault_power = instantaneous_power(&self.grid, PowerPoint::Fault);

        let sample = record.then(|| TraceRecord {
            t,
            units,
            bus,
            bus_rms,
            pv: pv_power.map(|power| SourceSample {
                current: self.grid.pv_current(),
                reference: self.grid.pv.as_ref().map_or(ThreePhase::ZERO, |pv| pv.i_ref),
                power,
            }),
            load,
            fault_power,
            frequency,
        });

        if self.step_index < self.n_steps {
            self.integrate(t)?;
        }
        self.step_index += 1;
        Ok(sample)
    }

    fn integrate(&mut self, t: f64) -> Result<(), EngineError> {
        let mut y = std::mem::take(&mut self.grid.state);
        {
            let grid = &self.grid;
            let scales = &self.scales;
            let peaks = &self.peaks;
            let drive = self.drive;
            let emfs = &mut self.emfs;
            self.stepper.step(t, self.cfg.dt, &mut y, |_, s, d| {
                system_derivative(grid, scales, peaks, drive, emfs, s, d)
            });
        }
        self.grid.state = y;
        if let Some((index, &value)) = self
            .grid
            .state
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.abs() <= DIVERGENCE_LIMIT))
        {
            return Err(EngineError::Diverged {
                time: t + self.cfg.dt,
                index,
                value,
            });
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<Trace, EngineError> {
        let dec = self.cfg.decimation as u64;
        let mut records = Vec::with_capacity((self.n_steps / dec + 1) as usize);
        while !self.is_finished() {
            let want = self.step_index % dec == 0;
            if let Some(r) = self.step(want)? {
                records.push(r);
            }
        }
        Ok(Trace {
            unit_count: self.grid.units.len(),
            has_pv: self.grid.pv.is_some(),
            records,
        })
    }
}

fn stiffness_violations(cfg: &SimConfig, grid: &GridModel, schedule: &EventSchedule) -> Vec<String> {
    if !(cfg.dt > 0.0) || grid.c_bus <= 0.0 {
        return Vec::new();
    }
    let mut load = grid.load_power;
    let mut max_load = load;
    let mut max_fault = grid.g_fault;
    for e in schedule.events() {
        match e.event {
            GridEvent::LoadSet { power } => load = power,
            GridEvent::LoadDelta { power } => load += power,
            GridEvent::FaultOn { conductance } => {
                max_fault = max_fault.max(conductance.unwrap_or(grid.fault_conductance))
            }
            _ => {}
        }
        max_load = max_load.max(load);
    }
    let g = crate::network::load_conductance(max_load, grid.v_nominal) + max_fault;
    let limit = match cfg.integrator {
        Integrator::Rk4 => RK4_STIFFNESS_LIMIT,
        Integrator::Euler => EULER_STIFFNESS_LIMIT,
    };
    let ratio = cfg.dt * g / grid.c_bus;
    if ratio > limit {
        vec![format!(
            "bus node too stiff for dt = {}: dt*G/C = {ratio:.2} exceeds {limit} \
             (reduce dt below {:.3e} s or the fault conductance)",
            cfg.dt,
            limit * grid.c_bus / g
        )]
    } else {
        Vec::new()
    }
}

/// Thresholds used when reducing a trace to scenario metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricOptions {
    pub v_nominal: f64,
    pub f_nominal: f64,
    /// RMS settling band, per unit.
    pub rms_band: f64,
    /// How long the RMS must stay in band to count as settled.
    pub hold: f64,
    pub startup: f64,
    /// Interval after any event excluded from settled windows.
    pub exclusion: f64,
    /// Length of the settled window closing each inter-event interval.
    pub settled_span: f64,
    /// Power response band, fraction of the new settled value.
    pub power_band: f64,
    /// Absolute floor of the power response band, watts.
    pub power_floor: f64,
    pub rms_window: f64,
    /// Post-clearance span searched for overshoot.
    pub recovery_horizon: f64,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            v_nominal: 230.0,
            f_nominal: 50.0,
            rms_band: 0.02,
            hold: 0.1,
            startup: 0.5,
            exclusion: 0.1,
            settled_span: 0.2,
            power_band: 0.05,
            power_floor: 50.0,
            rms_window: 0.02,
            recovery_horizon: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettledWindow {
    pub start: f64,
    pub end: f64,
    pub faulted: bool,
    /// Mean power per source (units, then PV), watts.
    pub source_power: Vec<f64>,
    /// Unit powers as fractions of the total grid-forming output.
    pub shares: Vec<f64>,
    pub load_power: f64,
    pub fault_power: f64,
    pub bus_rms: f64,
    /// `|Σ sources − load − fault| / load`.
    pub balance_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventMetrics {
    pub time: f64,
    pub kind: String,
    /// First instant after the event from which the bus RMS holds the band.
    pub settling_time: Option<f64>,
    pub rms_max: f64,
    pub rms_min: f64,
    /// Per source: time until the one-cycle power stays within band of the
    /// next settled value.
    pub power_response: Vec<Option<f64>>,
    /// Per source: one-cycle power one cycle after the event minus the
    /// preceding settled mean.
    pub power_step_one_cycle: Vec<f64>,
    /// Per source: following settled mean minus preceding settled mean.
    pub power_step_settled: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultMetrics {
    pub on: f64,
    pub off: f64,
    pub rms_min: f64,
    pub rms_max: f64,
    /// Largest post-clearance RMS excess over nominal, fraction (≥ 0).
    pub post_clear_overshoot: f64,
    pub recovery_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub windows: Vec<SettledWindow>,
    pub events: Vec<EventMetrics>,
    pub faults: Vec<FaultMetrics>,
    pub max_frequency_deviation: Option<f64>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn settling_from(trace: &Trace, from: f64, o: &MetricOptions) -> Option<f64> {
    let band = o.rms_band * o.v_nominal;
    let mut run_start: Option<f64> = None;
    for r in &trace.records[trace.index_at(from)..] {
        if (r.bus_rms - o.v_nominal).abs() <= band {
            let s = *run_start.get_or_insert(r.t);
            if r.t - s >= o.hold - 1e-9 {
                return Some(s - from);
            }
        } else {
            run_start = None;
        }
    }
    None
}

fn settled_window(trace: &Trace, start: f64, end: f64, faulted: bool) -> SettledWindow {
    let rs = &trace.records[trace.index_at(start)..trace.index_at(end)];
    let n_src = trace.unit_count + usize::from(trace.has_pv);
    let source_power: Vec<f64> = (0..n_src)
        .map(|k| {
            mean(rs.iter().map(|r| {
                if k < trace.unit_count {
                    r.units[k].power.instantaneous
                } else {
                    r.pv.map_or(0.0, |p| p.power.instantaneous)
                }
            }))
        })
        .collect();
    let unit_total: f64 = source_power[..trace.unit_count].iter().sum();
    let shares = source_power[..trace.unit_count]
        .iter()
        .map(|p| p / unit_total)
        .collect();
    let load_power = mean(rs.iter().map(|r| r.load.instantaneous));
    let fault_power = mean(rs.iter().map(|r| r.fault_power));
    let supplied: f64 = source_power.iter().sum();
    SettledWindow {
        start,
        end,
        faulted,
        shares,
        load_power,
        fault_power,
        bus_rms: mean(rs.iter().map(|r| r.bus_rms)),
        balance_residual: (supplied - load_power - fault_power).abs() / load_power,
        source_power,
    }
}

/// Reduce a trace to scenario metrics. Settled windows close each interval
/// between events and never start within `exclusion` of an event or before
/// `startup`.
pub fn compute_metrics(trace: &Trace, schedule: &EventSchedule, o: &MetricOptions) -> ScenarioMetrics {
    let Some(last) = trace.records.last() else {
        return ScenarioMetrics {
            windows: Vec::new(),
            events: Vec::new(),
            faults: Vec::new(),
            max_frequency_deviation: None,
        };
    };
    let t_end = last.t;
    let mut bounds = vec![0.0];
    bounds.extend(schedule.events().iter().map(|e| e.time));
    bounds.push(t_end + 1e-9);

    // fault intervals
    let mut fault_spans: Vec<(f64, f64)> = Vec::new();
    let mut on: Option<f64> = None;
    for e in schedule.events() {
        match e.event {
            GridEvent::FaultOn { .. } => on = on.or(Some(e.time)),
            GridEvent::FaultOff => {
                if let Some(s) = on.take() {
                    fault_spans.push((s, e.time));
                }
            }
            _ => {}
        }
    }
    if let Some(s) = on {
        fault_spans.push((s, f64::INFINITY));
    }
    let in_fault = |a: f64, b: f64| fault_spans.iter().any(|&(s, e)| a < e && b > s);

    // one settled window per interval (None if the interval is too short)
    let windows: Vec<Option<SettledWindow>> = bounds
        .windows(2)
        .map(|w| {
            let start = (w[0] + o.exclusion).max(o.startup).max(w[1] - o.settled_span);
            let end = w[1];
            (end - start > 2.0 * o.rms_window.min(end - start).max(0.0) && start < end)
                .then(|| settled_window(trace, start, end, in_fault(start, end)))
                .filter(|win| win.load_power.is_finite())
        })
        .collect();

    let n_src = trace.unit_count + usize::from(trace.has_pv);
    let events = schedule
        .events()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let next = bounds[i + 2];
            let pre = windows[i].as_ref();
            let post = windows[i + 1].as_ref();
            let span = &trace.records[trace.index_at(e.time)..trace.index_at(next)];
            let rms_max = span.iter().map(|r| r.bus_rms).fold(f64::NEG_INFINITY, f64::max);
            let rms_min = span.iter().map(|r| r.bus_rms).fold(f64::INFINITY, f64::min);
            let after_cycle = trace.records.get(trace.index_at(e.time + o.rms_window));
            let mut power_response = Vec::with_capacity(n_src);
            let mut step_cycle = Vec::with_capacity(n_src);
            let mut step_settled = Vec::with_capacity(n_src);
            for k in 0..n_src {
                let before = pre.map_or(f64::NAN, |w| w.source_power[k]);
                let target = post.map_or(f64::NAN, |w| w.source_power[k]);
                step_settled.push(target - before);
                step_cycle.push(after_cycle.map_or(f64::NAN, |r| r.source_powers()[k]) - before);
                power_response.push(post.and_then(|w| {
                    let band = (o.power_band * target.abs()).max(o.power_floor);
                    let upto = trace.index_at(w.start);
                    let from = trace.index_at(e.time);
                    let recs = &trace.records[from..upto];
                    match recs
                        .iter()
                        .rposition(|r| (r.source_powers()[k] - target).abs() > band)
                    {
                        None => Some(0.0),
                        Some(j) => trace.records.get(from + j + 1).map(|r| r.t - e.time),
                    }
                }));
            }
            EventMetrics {
                time: e.time,
                kind: e.event.name().to_string(),
                settling_time: settling_from(trace, e.time, o),
                rms_max,
                rms_min,
                power_response,
                power_step_one_cycle: step_cycle,
                power_step_settled: step_settled,
            }
        })
        .collect();

    let faults = fault_spans
        .iter()
        .filter(|(_, off)| off.is_finite())
        .map(|&(on, off)| {
            let during = &trace.records[trace.index_at(on + o.rms_window)..trace.index_at(off)];
            let horizon = schedule
                .events()
                .iter()
                .map(|e| e.time)
                .find(|&t| t > off)
                .unwrap_or(f64::INFINITY)
                .min(off + o.recovery_horizon);
            let after = &trace.records[trace.index_at(off)..trace.index_at(horizon)];
            FaultMetrics {
                on,
                off,
                rms_min: during.iter().map(|r| r.bus_rms).fold(f64::INFINITY, f64::min),
                rms_max: during.iter().map(|r| r.bus_rms).fold(f64::NEG_INFINITY, f64::max),
                post_clear_overshoot: after
                    .iter()
                    .map(|r| (r.bus_rms - o.v_nominal) / o.v_nominal)
                    .fold(0.0, f64::max),
                recovery_time: settling_from(trace, off, o),
            }
        })
        .collect();

    let max_frequency_deviation = trace
        .records
        .iter()
        .filter(|r| r.t >= o.startup)
        .filter(|r| {
            !fault_spans
                .iter()
                .any(|&(s, e)| r.t >= s && r.t <= e + o.exclusion)
        })
        .filter_map(|r| r.frequency.map(|f| (f - o.f_nominal).abs()))
        .fold(None, |acc: Option<f64>, d| Some(acc.map_or(d, |a| a.max(d))));

    ScenarioMetrics {
        windows: windows.into_iter().flatten().collect(),
        events,
        faults,
        max_frequency_deviation,
    }
}

/// Run a scenario to completion and reduce it to metrics.
pub fn run_scenario(
    cfg: SimConfig,
    schedule: &EventSchedule,
    grid: GridModel,
) -> Result<(Trace, ScenarioMetrics), EngineError> {
    let opts = MetricOptions {
        v_nominal: grid.v_nominal,
        startup: cfg.startup,
        rms_window: cfg.rms_window,
        ..MetricOptions::default()
    };
    let trace = Simulation::new(cfg, grid, schedule)?.run()?;
    let metrics = compute_metrics(&trace, schedule, &opts);
    Ok((trace, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::InverterUnit;

    fn synthetic(rms: impl Fn(f64) -> f64, t_end: f64, spacing: f64) -> Trace {
        let n = (t_end / spacing).round() as usize;
        let records = (0..=n)
            .map(|i| {
                let t = i as f64 * spacing;
                TraceRecord {
                    t,
                    units: vec![UnitSample {
                        v_osc: 0.0,
                        i_l: 0.0,
                        scale: 1.0,
                        current: ThreePhase::ZERO,
                        power: PowerMeasurement { instantaneous: 1000.0, average: 1000.0 },
                    }],
                    bus: ThreePhase::ZERO,
                    bus_rms: rms(t),
                    pv: None,
                    load: PowerMeasurement { instantaneous: 1000.0, average: 1000.0 },
                    fault_power: 0.0,
                    frequency: Some(50.0),
                }
            })
            .collect();
        Trace { unit_count: 1, has_pv: false, records }
    }

    fn at(time: f64, event: GridEvent) -> ScheduledEvent {
        ScheduledEvent { time, event }
    }

    #[test]
    fn constant_trace_settles_immediately() {
        let tr = synthetic(|_| 230.0, 2.0, 1e-3);
        let s = EventSchedule::new(vec![at(1.0, GridEvent::LoadDelta { power: 0.0 })]).unwrap();
        let m = compute_metrics(&tr, &s, &MetricOptions::default());
        assert_eq!(m.events[0].settling_time, Some(0.0));
        assert_eq!(m.windows.len(), 2);
        assert!(m.windows.iter().all(|w| w.balance_residual == 0.0));
    }

    #[test]
    fn exponential_recovery_settling_time() {
        let tau = 0.1;
        let spacing = 1e-3;
        let tr = synthetic(
            |t| if t < 1.0 { 230.0 } else { 230.0 * (1.0 + 0.05 * (-(t - 1.0) / tau).exp()) },
            2.0,
            spacing,
        );
        let s = EventSchedule::new(vec![at(1.0, GridEvent::LoadDelta { power: 0.0 })]).unwrap();
        let m = compute_metrics(&tr, &s, &MetricOptions::default());
        let settle = m.events[0].settling_time.unwrap();
        let expected = tau * 2.5f64.ln();
        assert!((settle - expected).abs() <= spacing + 1e-12, "{settle} vs {expected}");
    }

    #[test]
    fn never_settling_is_marked() {
        let tr = synthetic(|t| 230.0 + 20.0 * (t * 30.0).sin(), 2.0, 1e-3);
        let s = EventSchedule::new(vec![at(1.0, GridEvent::LoadDelta { power: 0.0 })]).unwrap();
        assert_eq!(compute_metrics(&tr, &s, &MetricOptions::default()).events[0].settling_time, None);
    }

    #[test]
    fn schedule_must_be_ordered() {
        let e = GridEvent::FaultOff;
        assert!(EventSchedule::new(vec![at(2.0, e), at(1.0, e)]).is_err());
        assert!(EventSchedule::new(vec![at(-1.0, e)]).is_err());
        assert!(EventSchedule::new(vec![at(1.0, e), at(1.0, e)]).is_ok());
    }

    #[test]
    fn switched_pv_requires_small_step() {
        let cfg = SimConfig::default();
        assert!(cfg.violations(false).is_empty());
        assert_eq!(cfg.violations(true).len(), 1);
        assert!(SimConfig { dt: 2e-6, ..cfg }.violations(true).is_empty());
    }

    #[test]
    fn stiff_fault_is_rejected() {
        let grid = GridModel::new(vec![InverterUnit::default()], None, 5000.0, 230.0).unwrap();
        let bolted = EventSchedule::new(vec![at(0.1, GridEvent::FaultOn { conductance: Some(1000.0) })]).unwrap();
        let cfg = SimConfig { t_end: 0.2, ..SimConfig::default() };
        match Simulation::new(cfg, grid.clone(), &bolted) {
            Err(EngineError::InvalidConfig(msgs)) => assert!(msgs[0].contains("stiff"), "{msgs:?}"),
            other => panic!("expected rejection, got {:?}", other.err()),
        }
        let fine = SimConfig { dt: 1e-7, ..cfg };
        assert!(stiffness_violations(&fine, &grid, &bolted).is_empty());
    }

    #[test]
    fn event_beyond_end_is_rejected() {
        let grid = GridModel::new(vec![InverterUnit::default()], None, 5000.0, 230.0).unwrap();
        let s = EventSchedule::new(vec![at(3.0, GridEvent::FaultOff)]).unwrap();
        let cfg = SimConfig { t_end: 1.0, ..SimConfig::default() };
        assert!(matches!(Simulation::new(cfg, grid, &s), Err(EngineError::InvalidConfig(_))));
    }

    #[test]
    fn load_event_takes_effect_on_its_step() {
        let mut unit = InverterUnit::default();
        unit.orbit_peak = Some(1.0);
        let grid = GridModel::new(vec![unit], None, 5000.0, 230.0).unwrap();
        let cfg = SimConfig { t_end: 0.01, dt: 1e-5, ..SimConfig::default() };
        let s = EventSchedule::new(vec![at(0.005, GridEvent::LoadSet { power: 8000.0 })]).unwrap();
        let mut sim = Simulation::new(cfg, grid, &s).unwrap();
        let mut last = None;
        while !sim.is_finished() {
            let before = sim.grid().g_load;
            let r = sim.step(true).unwrap().unwrap();
            if (r.t - 0.005).abs() < 1e-12 {
                assert_eq!(before, crate::network::load_conductance(5000.0, 230.0));
                assert_eq!(sim.grid().g_load, crate::network::load_conductance(8000.0, 230.0));
                let expected = r.bus.sum_squares() * sim.grid().g_load;
                assert!((r.load.instantaneous - expected).abs() <= 1e-9 * expected.abs().max(1.0));
            }
            last = Some(r.t);
        }
        assert!((last.unwrap() - 0.01).abs() < 1e-12);
    }

    #[test]
    fn calibrated_orbit_is_near_unity() {
        let peak = calibrate_orbit_peak(&OscillatorParams::default());
        assert!(peak > 0.9 && peak < 1.1, "{peak}");
    }

    #[test]
    fn decimation_gives_uniform_records() {
        let grid = GridModel::new(vec![InverterUnit::default()], None, 5000.0, 230.0).unwrap();
        let cfg = SimConfig { t_end: 0.1, decimation: 50, ..SimConfig::default() };
        let tr = Simulation::new(cfg, grid, &EventSchedule::default()).unwrap().run().unwrap();
        assert_eq!(tr.records.len(), 201);
        for w in tr.records.windows(2) {
            assert!((w[1].t - w[0].t - 5e-4).abs() < 1e-12);
        }
    }
}
