//! Outer controllers: the voltage recovery loop wrapped around each oscillator
//! and the hysteresis-band current controller of the grid-following PV inverter.

use serde::{Deserialize, Serialize};

use crate::signals::{inverse_clarke, AlphaBeta, ThreePhase};

/// Below this fraction of the RMS setpoint the fault guard starts its timer.
pub const GUARD_UNDERVOLTAGE_PU: f64 = 0.5;
/// Above this fraction the guard releases and resets the integrator.
pub const GUARD_RECOVERY_PU: f64 = 0.9;
/// Undervoltage must persist longer than this before the loop is frozen.
pub const GUARD_DELAY_S: f64 = 0.02;

/// Where the recovery loop takes its RMS measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VrlMeasurement {
    /// Filter output terminal, which is the common bus once shunt capacitors are lumped.
    #[default]
    Terminal,
    /// Bridge side of the filter (the modulated EMF).
    Bridge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VrlParams {
    /// Per volt.
    pub kp: f64,
    /// Per volt-second.
    pub ki: f64,
    pub v_ref_rms: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub enabled: bool,
    pub fault_guard: bool,
    pub measurement: VrlMeasurement,
}

impl Default for VrlParams {
    fn default() -> Self {
        Self {
            kp: 2e-4,
            ki: 0.08,
            v_ref_rms: 230.0,
            scale_min: 0.5,
            scale_max: 1.5,
            enabled: true,
            fault_guard: true,
            measurement: VrlMeasurement::Terminal,
        }
    }
}

impl VrlParams {
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.kp >= 0.0 && self.ki >= 0.0) {
            out.push(format!("vrl gains must be non-negative (kp = {}, ki = {})", self.kp, self.ki));
        }
        if !(self.v_ref_rms > 0.0) {
            out.push(format!("vrl.v_ref_rms must be positive, got {}", self.v_ref_rms));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= 1.0 && self.scale_max >= 1.0) {
            out.push(format!(
                "vrl limits must satisfy 0 < scale_min <= 1 <= scale_max (got {}, {})",
                self.scale_min, self.scale_max
            ));
        }
        out
    }
}

/// PI loop scaling the modulation reference to hold the RMS setpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct VrlState {
    pub params: VrlParams,
    pub integrator: f64,
    pub scale: f64,
    pub frozen: bool,
    undervoltage_time: f64,
    healthy_integrator: f64,
}

impl VrlState {
    pub fn new(params: VrlParams) -> Self {
        Self {
            params,
            integrator: 0.0,
            scale: 1.0,
            frozen: false,
            undervoltage_time: 0.0,
            healthy_integrator: 0.0,
        }
    }

    fn integrator_bounds(&self) -> (f64, f64) {
        (self.params.scale_min - 1.0, self.params.scale_max - 1.0)
    }
}

/// One controller update. Integration is skipped while frozen and while the
/// output is pinned at a limit in the direction of the error.
pub fn vrl_step(s: &mut VrlState, v_meas_rms: f64, dt: f64) -> f64 {
    let p = s.params;
    if !p.enabled {
        s.scale = 1.0;
        return s.scale;
    }
    let error = p.v_ref_rms - v_meas_rms;
    if !s.frozen {
        let raw = 1.0 + p.kp * error + s.integrator;
        let pinned_high = raw >= p.scale_max && error > 0.0;
        let pinned_low = raw <= p.scale_min && error < 0.0;
        if !(pinned_high || pinned_low) {
            s.integrator += p.ki * error * dt;
        }
        let (lo, hi) = s.integrator_bounds();
        s.integrator = s.integrator.clamp(lo, hi);
    }
    s.scale = (1.0 + p.kp * error + s.integrator).clamp(p.scale_min, p.scale_max);
    s.scale
}

/// Freeze and reset logic for deep voltage collapses.
///
/// After more than [`GUARD_DELAY_S`] below half the setpoint the integrator is
/// returned to the last value it held while the voltage was healthy and then
/// held. Once the voltage is back above 0.9 pu the integrator is reset to zero
/// and integration resumes.
pub fn vrl_fault_guard(s: &mut VrlState, v_meas_rms: f64, dt: f64) {
    let p = s.params;
    if !(p.enabled && p.fault_guard) {
        return;
    }
    if v_meas_rms < GUARD_UNDERVOLTAGE_PU * p.v_ref_rms {
        s.undervoltage_time += dt;
        if !s.frozen && s.undervoltage_time > GUARD_DELAY_S {
            s.frozen = true;
            s.integrator = s.healthy_integrator;
        }
    } else {
        s.undervoltage_time = 0.0;
    }
    if v_meas_rms > GUARD_RECOVERY_PU * p.v_ref_rms {
        if s.frozen {
            s.integrator = 0.0;
            s.frozen = false;
        }
        s.healthy_integrator = s.integrator;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchState {
    High,
    #[default]
    Low,
}

impl SwitchState {
    /// Leg voltage relative to the DC midpoint.
    pub fn pole_voltage(self, v_dc: f64) -> f64 {
        match self {
            SwitchState::High => 0.5 * v_dc,
            SwitchState::Low => -0.5 * v_dc,
        }
    }
}

/// Per-phase relay controller.
#[derive(Debug, Clone, PartialEq)]
pub struct HysteresisController {
    /// Half-width of the tolerance band, amperes.
    pub band: f64,
    pub states: [SwitchState; 3],
}

impl HysteresisController {
    pub fn new(band: f64) -> Self {
        Self {
            band,
            states: [SwitchState::Low; 3],
        }
    }
}

pub fn hysteresis_step(
    h: &mut HysteresisController,
    i_meas: ThreePhase,
    i_ref: ThreePhase,
) -> [SwitchState; 3] {
    let meas = i_meas.to_array();
    let reference = i_ref.to_array();
    for k in 0..3 {
        if meas[k] < reference[k] - h.band {
            h.states[k] = SwitchState::High;
        } else if meas[k] > reference[k] + h.band {
            h.states[k] = SwitchState::Low;
        }
    }
    h.states
}

/// Dispatched PV generation behind an ideal DC link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PvSource {
    /// Watts.
    pub p_generated: f64,
    pub v_dc: f64,
    pub connected: bool,
}

impl Default for PvSource {
    fn default() -> Self {
        Self {
            p_generated: 4800.0,
            v_dc: 600.0,
            connected: true,
        }
    }
}

/// Bus amplitude below which the PV reference is held at zero, per unit.
pub const PV_MIN_VOLTAGE_PU: f64 = 0.1;

/// Phase-locked current reference delivering `p_generated` into the bus.
///
/// `nominal_phase_peak` sets the per-unit base for the low-voltage cutoff.
pub fn pv_reference(pv: &PvSource, v_bus: AlphaBeta, nominal_phase_peak: f64) -> ThreePhase {
    if !pv.connected || pv.p_generated <= 0.0 {
        return ThreePhase::ZERO;
    }
    // |v_αβ| = √(3/2)·V̂ for a balanced set
    let mag = v_bus.magnitude();
    let phase_peak = mag / 1.5f64.sqrt();
    if phase_peak <= PV_MIN_VOLTAGE_PU * nominal_phase_peak {
        return ThreePhase::ZERO;
    }
    // in phase with v_αβ, |i_αβ| = P/|v_αβ| so that v_α·i_α + v_β·i_β = P
    let k = pv.p_generated / (mag * mag);
    inverse_clarke(AlphaBeta::new(k * v_bus.alpha, k * v_bus.beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::clarke;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_error_keeps_unity_scale() {
        let mut s = VrlState::new(VrlParams::default());
        assert_eq!(vrl_step(&mut s, 230.0, 1e-5), 1.0);
        assert_eq!(s.integrator, 0.0);
    }

    #[test]
    fn constant_error_slews_at_ki_e() {
        let params = VrlParams { kp: 0.0, ki: 0.1, ..VrlParams::default() };
        let mut s = VrlState::new(params);
        let dt = 1e-4;
        for _ in 0..1000 {
            vrl_step(&mut s, 225.0, dt);
        }
        // 0.1 s at 0.1·5 per second
        assert!((s.scale - 1.05).abs() < 1e-9, "{}", s.scale);
        for _ in 0..100_000 {
            vrl_step(&mut s, 225.0, dt);
        }
        assert_eq!(s.scale, params.scale_max);
        assert!(s.integrator <= params.scale_max - 1.0 + 1e-12);
        // saturated against a positive error: integrator is no longer moving
        let held = s.integrator;
        vrl_step(&mut s, 225.0, dt);
        assert_eq!(s.integrator, held);
    }

    #[test]
    fn saturated_loop_unwinds_immediately() {
        let mut s = VrlState::new(VrlParams::default());
        for _ in 0..200_000 {
            vrl_step(&mut s, 100.0, 1e-4);
        }
        assert_eq!(s.scale, 1.5);
        let before = s.integrator;
        vrl_step(&mut s, 300.0, 1e-4);
        assert!(s.integrator < before);
        assert!(s.scale < 1.5);
    }

    #[test]
    fn disabled_loop_passes_unity() {
        let mut s = VrlState::new(VrlParams { enabled: false, ..VrlParams::default() });
        assert_eq!(vrl_step(&mut s, 10.0, 1e-3), 1.0);
    }

    fn guard_run(s: &mut VrlState, v: f64, duration: f64, dt: f64) {
        let n = (duration / dt).round() as usize;
        for _ in 0..n {
            vrl_fault_guard(s, v, dt);
            vrl_step(s, v, dt);
        }
    }

    #[test]
    fn guard_never_trips_at_nominal() {
        let mut s = VrlState::new(VrlParams::default());
        guard_run(&mut s, 230.0, 1.0, 1e-4);
        assert!(!s.frozen);
    }

    #[test]
    fn short_shallow_dip_does_not_freeze() {
        let mut s = VrlState::new(VrlParams::default());
        guard_run(&mut s, 0.8 * 230.0, 0.01, 1e-5);
        assert!(!s.frozen);
        // even a deep dip must outlast the delay
        let mut s = VrlState::new(VrlParams::default());
        guard_run(&mut s, 0.3 * 230.0, 0.015, 1e-5);
        assert!(!s.frozen);
    }

    #[test]
    fn deep_collapse_freezes_then_resets() {
        let mut s = VrlState::new(VrlParams::default());
        guard_run(&mut s, 230.0, 0.1, 1e-5);
        guard_run(&mut s, 10.0, 0.5, 1e-5);
        assert!(s.frozen);
        assert_eq!(s.integrator, 0.0);
        let held = s.integrator;
        guard_run(&mut s, 10.0, 0.1, 1e-5);
        assert_eq!(s.integrator, held);
        // between thresholds: still frozen
        guard_run(&mut s, 0.7 * 230.0, 0.01, 1e-5);
        assert!(s.frozen);
        guard_run(&mut s, 0.95 * 230.0, 1e-5, 1e-5);
        assert!(!s.frozen);
    }

    #[test]
    fn guard_discards_windup_accumulated_during_the_delay() {
        let mut guarded = VrlState::new(VrlParams::default());
        let mut bare = VrlState::new(VrlParams { fault_guard: false, ..VrlParams::default() });
        for s in [&mut guarded, &mut bare] {
            guard_run(s, 230.0, 0.05, 1e-5);
            guard_run(s, 5.0, 0.5, 1e-5);
        }
        assert!(guarded.integrator < bare.integrator);
        assert_eq!(bare.scale, 1.5);
    }

    #[test]
    fn hysteresis_rules() {
        let mut h = HysteresisController::new(0.5);
        let r = ThreePhase::new(1.0, 0.0, -1.0);
        assert_eq!(hysteresis_step(&mut h, r, r), [SwitchState::Low; 3]);
        let low = r - ThreePhase::new(1.0, 1.0, 1.0);
        assert_eq!(hysteresis_step(&mut h, low, r), [SwitchState::High; 3]);
        // back inside the band: hold
        assert_eq!(hysteresis_step(&mut h, r, r), [SwitchState::High; 3]);
        let high = r + ThreePhase::new(1.0, 0.0, 1.0);
        assert_eq!(
            hysteresis_step(&mut h, high, r),
            [SwitchState::Low, SwitchState::High, SwitchState::Low]
        );
    }

    #[test]
    fn hysteresis_tracks_sinusoid_on_inductive_plant() {
        // one phase behind L against a stiff grid, legs at ±V_dc/2 relative to neutral
        let (l, r, v_dc, band, dt) = (5e-3, 0.1, 600.0, 0.5, 2e-6);
        let (v_grid, i_pk, w) = (200.0, 9.8, 100.0 * PI);
        let mut h = HysteresisController::new(band);
        let mut i = 0.0;
        let mut max_err: f64 = 0.0;
        let slope_max = (0.5 * v_dc + v_grid) / l;
        let n = (0.04 / dt) as usize;
        for step in 0..n {
            let t = step as f64 * dt;
            let i_ref = i_pk * (w * t).sin();
            let sw = hysteresis_step(&mut h, ThreePhase::new(i, 0.0, 0.0), ThreePhase::new(i_ref, 0.0, 0.0));
            if t >= 0.02 {
                max_err = max_err.max((i - i_ref).abs());
            }
            let v_pole = sw[0].pole_voltage(v_dc);
            let vg = v_grid * (w * t).sin();
            i += dt * (v_pole - r * i - vg) / l;
        }
        assert!(max_err <= band + slope_max * dt, "{max_err}");
    }

    #[test]
    fn pv_reference_magnitude() {
        let pv = PvSource::default();
        let v_pk = 326.6;
        let v = clarke(ThreePhase::balanced(v_pk, 0.4));
        let i = pv_reference(&pv, v, v_pk);
        let i_pk = (i.sum_squares() * 2.0 / 3.0).sqrt();
        assert!((i_pk - 9.798).abs() < 1e-3, "{i_pk}");
        assert!((i_pk - 2.0 * 4800.0 / (3.0 * v_pk)).abs() < 1e-9);
        // in phase with the bus voltage
        let ia = clarke(i);
        assert!((ia.angle() - v.angle()).abs() < 1e-12);
        let p = ThreePhase::balanced(v_pk, 0.4).dot(&i);
        assert!((p - 4800.0).abs() < 1e-9);
    }

    #[test]
    fn pv_reference_zero_cases() {
        let v = clarke(ThreePhase::balanced(326.6, 0.0));
        let off = PvSource { connected: false, ..PvSource::default() };
        assert_eq!(pv_reference(&off, v, 326.6), ThreePhase::ZERO);
        let idle = PvSource { p_generated: 0.0, ..PvSource::default() };
        assert_eq!(pv_reference(&idle, v, 326.6), ThreePhase::ZERO);
        let collapsed = clarke(ThreePhase::balanced(20.0, 0.0));
        assert_eq!(pv_reference(&PvSource::default(), collapsed, 326.6), ThreePhase::ZERO);
    }

    proptest! {
        #[test]
        fn scale_stays_in_limits(volts in prop::collection::vec(0.0..500.0f64, 1..400)) {
            let mut s = VrlState::new(VrlParams { ki: 5.0, kp: 0.01, ..VrlParams::default() });
            let hi = s.params.scale_max - 1.0;
            let lo = s.params.scale_min - 1.0;
            for v in volts {
                vrl_fault_guard(&mut s, v, 1e-3);
                let out = vrl_step(&mut s, v, 1e-3);
                prop_assert!(out >= s.params.scale_min && out <= s.params.scale_max);
                prop_assert!(s.integrator >= lo && s.integrator <= hi);
            }
        }

        #[test]
        fn hysteresis_holds_inside_band(err in prop::array::uniform3(-0.49..0.49f64), start in any::<[bool; 3]>()) {
            let mut h = HysteresisController::new(0.5);
            for k in 0..3 {
                h.states[k] = if start[k] { SwitchState::High } else { SwitchState::Low };
            }
            let before = h.states;
            let r = ThreePhase::new(3.0, -1.0, -2.0);
            let out = hysteresis_step(&mut h, r + ThreePhase::from_array(err), r);
            prop_assert_eq!(out, before);
        }
    }
}
