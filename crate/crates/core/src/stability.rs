//! Small-signal analysis of the dead-zone oscillator, one linear segment at a time.
//!
//! With the feedback current taken as `α·v/R_s`, each branch of the dead-zone
//! function gives the second-order model `v̈ = (β/C)·v̇ − v/(LC)`, whose
//! characteristic polynomial is `λ² − (β/C)λ + 1/(LC)`.

use serde::{Deserialize, Serialize};

use crate::ode::{Integrator, Stepper};
use crate::oscillator::{
    oscillator_derivative, FeedbackGains, OscillatorParams, OscillatorState,
};

/// Real parts closer to zero than this are treated as marginal.
pub const SUSTAINED_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    /// `v > φ`
    Above,
    /// `|v| ≤ φ`
    Inside,
    /// `v < −φ`
    Below,
}

impl Segment {
    pub const ALL: [Segment; 3] = [Segment::Above, Segment::Inside, Segment::Below];

    pub fn name(self) -> &'static str {
        match self {
            Segment::Above => "above",
            Segment::Inside => "inside",
            Segment::Below => "below",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentLinearization {
    pub segment: Segment,
    /// Net tank conductance seen by the capacitor, siemens.
    pub beta_eff: f64,
    /// `[[0, 1], [−1/(LC), β/C]]` acting on `(v, dv/dt)`.
    pub matrix: [[f64; 2]; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StabilityClass {
    Decaying,
    Sustained,
    Growing,
}

pub fn linearize_segment(
    p: &OscillatorParams,
    g: &FeedbackGains,
    segment: Segment,
) -> SegmentLinearization {
    let rho = p.sigma - 1.0 / p.r;
    let load = g.alpha_total() / p.r_s;
    let beta_eff = match segment {
        Segment::Above | Segment::Below => rho - 2.0 * p.sigma - load,
        // f ≡ 0 here, so the 2σ term drops out
        Segment::Inside => rho - load,
    };
    SegmentLinearization {
        segment,
        beta_eff,
        matrix: [[0.0, 1.0], [-1.0 / (p.l * p.c), beta_eff / p.c]],
    }
}

/// Roots of `λ² − (β/C)λ + 1/(LC) = 0`.
pub fn eigenvalues(lin: &SegmentLinearization, p: &OscillatorParams) -> (EigenPair, EigenPair) {
    quadratic_roots(-lin.beta_eff / p.c, 1.0 / (p.l * p.c))
}

/// Roots of the monic quadratic `λ² + bλ + c`, real roots via the
/// cancellation-free `q = −(b + sign(b)·√disc)/2`.
pub fn quadratic_roots(b: f64, c: f64) -> (EigenPair, EigenPair) {
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        let re = -0.5 * b;
        let im = 0.5 * (-disc).sqrt();
        return (EigenPair { re, im }, EigenPair { re, im: -im });
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    if q == 0.0 {
        // b = 0 and c = 0
        return (EigenPair { re: 0.0, im: 0.0 }, EigenPair { re: 0.0, im: 0.0 });
    }
    let r1 = q;
    let r2 = c / q;
    let (hi, lo) = if r1 >= r2 { (r1, r2) } else { (r2, r1) };
    (EigenPair { re: hi, im: 0.0 }, EigenPair { re: lo, im: 0.0 })
}

pub fn classify_stability(eig: &EigenPair) -> StabilityClass {
    if eig.re.abs() <= SUSTAINED_EPS {
        StabilityClass::Sustained
    } else if eig.re < 0.0 {
        StabilityClass::Decaying
    } else {
        StabilityClass::Growing
    }
}

/// Least stable of a root pair.
pub fn classify_pair(pair: &(EigenPair, EigenPair)) -> StabilityClass {
    let dominant = if pair.0.re >= pair.1.re { &pair.0 } else { &pair.1 };
    classify_stability(dominant)
}

/// `σ` that places the outer-segment real part at `target_re` (1/s).
pub fn solve_sigma_for_decay(target_re: f64, p: &OscillatorParams, g: &FeedbackGains) -> f64 {
    // Re(λ) = β/(2C), β = −σ − 1/R − α/R_s
    let beta = 2.0 * p.c * target_re;
    -beta - 1.0 / p.r - g.alpha_total() / p.r_s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub checks: Vec<DesignCheck>,
}

impl DesignReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &DesignCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

pub fn validate_design(p: &OscillatorParams, g: &FeedbackGains) -> DesignReport {
    let mut checks = Vec::new();
    let sr = p.sigma * p.r;
    checks.push(DesignCheck {
        name: "sigma_r".into(),
        passed: sr > 1.0,
        detail: format!("sigma*R = {sr:.4} (need > 1)"),
    });
    let f = p.resonance() / (2.0 * std::f64::consts::PI);
    checks.push(DesignCheck {
        name: "frequency".into(),
        passed: (f - 50.0).abs() < 0.05,
        detail: format!("1/(2*pi*sqrt(LC)) = {f:.4} Hz (need 50 +/- 0.05)"),
    });
    for seg in [Segment::Above, Segment::Below] {
        let pair = eigenvalues(&linearize_segment(p, g, seg), p);
        let class = classify_pair(&pair);
        checks.push(DesignCheck {
            name: format!("{}_decaying", seg.name()),
            passed: class == StabilityClass::Decaying,
            detail: format!("{} segment Re(lambda) = {:.4}", seg.name(), pair.0.re.max(pair.1.re)),
        });
    }
    let pair = eigenvalues(&linearize_segment(p, g, Segment::Inside), p);
    checks.push(DesignCheck {
        name: "inside_growing".into(),
        passed: classify_pair(&pair) == StabilityClass::Growing,
        detail: format!("inside segment Re(lambda) = {:.4}", pair.0.re.max(pair.1.re)),
    });
    DesignReport { checks }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImpulseMode {
    Segment(Segment),
    /// Whole dead-zone nonlinearity.
    Full,
}

impl std::str::FromStr for ImpulseMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "above" => Ok(ImpulseMode::Segment(Segment::Above)),
            "inside" => Ok(ImpulseMode::Segment(Segment::Inside)),
            "below" => Ok(ImpulseMode::Segment(Segment::Below)),
            "full" => Ok(ImpulseMode::Full),
            other => Err(format!("unknown impulse mode '{other}' (above|inside|below|full)")),
        }
    }
}

/// Largest step accepted by [`impulse_response`].
pub const IMPULSE_MAX_DT: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ImpulseError {
    #[error("impulse step {0} s exceeds the {IMPULSE_MAX_DT} s limit")]
    StepTooLarge(f64),
    #[error("step and duration must be positive (dt = {dt}, duration = {duration})")]
    NonPositive { dt: f64, duration: f64 },
}

/// Response to a unit initial `v_osc` with zero initial slope / inductor
/// current, as `(t, v_osc)` samples from `t = 0` to `duration` inclusive.
///
/// Linear segments integrate the homogeneous 2×2 model. `Full` integrates the
/// nonlinear tank with the same `α·v/R_s` feedback load.
pub fn impulse_response(
    mode: ImpulseMode,
    p: &OscillatorParams,
    g: &FeedbackGains,
    duration: f64,
    dt: f64,
) -> Result<Vec<(f64, f64)>, ImpulseError> {
    if !(dt > 0.0 && duration > 0.0) {
        return Err(ImpulseError::NonPositive { dt, duration });
    }
    if dt > IMPULSE_MAX_DT {
        return Err(ImpulseError::StepTooLarge(dt));
    }
    let n = (duration / dt).round() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut stepper = Stepper::new(Integrator::Rk4, 2);
    match mode {
        ImpulseMode::Segment(seg) => {
            let m = linearize_segment(p, g, seg).matrix;
            let mut y = [1.0, 0.0];
            out.push((0.0, y[0]));
            for i in 0..n {
                stepper.step(i as f64 * dt, dt, &mut y, |_, s, d| {
                    d[0] = m[0][0] * s[0] + m[0][1] * s[1];
                    d[1] = m[1][0] * s[0] + m[1][1] * s[1];
                });
                out.push(((i + 1) as f64 * dt, y[0]));
            }
        }
        ImpulseMode::Full => {
            // i_α chosen so that i_gain·i_α = α·v/R_s
            let load = g.v_gain / p.r_s;
            let mut y = [1.0, 0.0];
            out.push((0.0, y[0]));
            for i in 0..n {
                stepper.step(i as f64 * dt, dt, &mut y, |_, s, d| {
                    let st = OscillatorState::new(s[0], s[1]);
                    let ds = oscillator_derivative(st, load * s[0], p, g);
                    d[0] = ds.v_osc;
                    d[1] = ds.i_l;
                });
                out.push(((i + 1) as f64 * dt, y[0]));
            }
        }
    }
    Ok(out)
}
