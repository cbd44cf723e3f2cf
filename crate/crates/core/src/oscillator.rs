//! Dead-zone virtual oscillator.
//!
//! A parallel virtual RLC circuit driven by the piecewise-linear current
//! source `−g(v) = σv − f(v)`. Inside the dead zone the source is a negative
//! conductance `σ > 1/R` that pumps energy in; outside it the net slope turns
//! dissipative, so the origin is unstable and trajectories settle onto a
//! near-circular 50 Hz limit cycle.

use serde::{Deserialize, Serialize};

use crate::signals::{inverse_clarke, AlphaBeta, ThreePhase};

const SQRT_3_2: f64 = 1.224_744_871_391_589;

/// Virtual circuit and dead-zone constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OscillatorParams {
    /// Ohms.
    pub r: f64,
    /// Henries.
    pub l: f64,
    /// Farads.
    pub c: f64,
    /// Siemens; the dead-zone function's outer slope is `2σ`.
    pub sigma: f64,
    /// Dead-zone half-width, volts.
    pub phi: f64,
    /// Feedback scaling resistance used by the small-signal model, ohms.
    pub r_s: f64,
    /// Nominal angular frequency, rad/s.
    pub omega0: f64,
}

impl Default for OscillatorParams {
    fn default() -> Self {
        Self {
            r: 10.0,
            l: 250e-6,
            c: 0.040_528_47,
            sigma: 0.4572,
            phi: 0.5,
            r_s: 10.0,
            omega0: 2.0 * std::f64::consts::PI * 50.0,
        }
    }
}

impl OscillatorParams {
    /// Resonant angular frequency `1/√(LC)`.
    pub fn resonance(&self) -> f64 {
        1.0 / (self.l * self.c).sqrt()
    }

    /// Every violated structural rule, as human-readable lines.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("r", self.r),
            ("l", self.l),
            ("c", self.c),
            ("sigma", self.sigma),
            ("phi", self.phi),
            ("r_s", self.r_s),
            ("omega0", self.omega0),
        ] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("oscillator.{name} must be positive and finite, got {v}"));
            }
        }
        out
    }
}

/// Current and voltage feedback gains. `alpha_total` is always `i_gain·v_gain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeedbackGains {
    pub i_gain: f64,
    /// Peak phase voltage produced by a unit orbit, volts.
    pub v_gain: f64,
}

impl Default for FeedbackGains {
    fn default() -> Self {
        Self {
            i_gain: 1.0568e-3,
            v_gain: 400.0 * 2f64.sqrt() / 3f64.sqrt(),
        }
    }
}

impl FeedbackGains {
    pub fn new(i_gain: f64, v_gain: f64) -> Self {
        Self { i_gain, v_gain }
    }

    pub fn alpha_total(&self) -> f64 {
        self.i_gain * self.v_gain
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [("i_gain", self.i_gain), ("v_gain", self.v_gain)] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("gains.{name} must be positive and finite, got {v}"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OscillatorState {
    /// Capacitor voltage.
    pub v_osc: f64,
    /// Virtual inductor current.
    pub i_l: f64,
}

impl OscillatorState {
    /// Small kick off the unstable origin.
    pub const STARTUP: OscillatorState = OscillatorState { v_osc: 0.1, i_l: 0.0 };

    pub const fn new(v_osc: f64, i_l: f64) -> Self {
        Self { v_osc, i_l }
    }

    pub fn is_finite(&self) -> bool {
        self.v_osc.is_finite() && self.i_l.is_finite()
    }

    /// Phase-plane radius with the current axis scaled by `ω0·L`.
    pub fn radius(&self, p: &OscillatorParams) -> f64 {
        self.v_osc.hypot(p.omega0 * p.l * self.i_l)
    }
}

/// Piecewise dead-zone function `f(v)`.
pub fn dead_zone_f(v: f64, p: &OscillatorParams) -> f64 {
    if v > p.phi {
        2.0 * p.sigma * (v - p.phi)
    } else if v < -p.phi {
        2.0 * p.sigma * (v + p.phi)
    } else {
        0.0
    }
}

/// `g(v) = f(v) − σv`. The current injected into the RLC tank is `−g(v)`.
pub fn source_current_g(v: f64, p: &OscillatorParams) -> f64 {
    dead_zone_f(v, p) - p.sigma * v
}

/// Time derivative of the oscillator state given the measured alpha-axis
/// output current. The feedback current drawn from the tank is `i_gain·i_α`.
pub fn oscillator_derivative(
    s: OscillatorState,
    i_alpha_measured: f64,
    p: &OscillatorParams,
    g: &FeedbackGains,
) -> OscillatorState {
    let i_feedback = g.i_gain * i_alpha_measured;
    let i_c = -s.v_osc / p.r - source_current_g(s.v_osc, p) - s.i_l - i_feedback;
    OscillatorState {
        v_osc: i_c / p.c,
        i_l: s.v_osc / p.l,
    }
}

/// Modulation reference for the averaged inverter.
///
/// The stationary-frame pair is `(v_osc, ω0·L·i_L)`. It is divided by the
/// calibrated free-running orbit peak so that a settled orbit produces phase
/// voltages of peak `vrl_scale·v_gain`.
pub fn pwm_reference(
    s: OscillatorState,
    p: &OscillatorParams,
    g: &FeedbackGains,
    vrl_scale: f64,
    orbit_peak: f64,
) -> ThreePhase {
    let k = SQRT_3_2 / orbit_peak;
    let ab = AlphaBeta::new(k * s.v_osc, k * p.omega0 * p.l * s.i_l);
    inverse_clarke(ab) * (vrl_scale * g.v_gain)
}
