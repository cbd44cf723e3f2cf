//! Three-phase signal algebra.
//!
//! Clarke transforms use the power-invariant `sqrt(2/3)` scaling, so for any
//! zero-sequence-free set `a² + b² + c² = α² + β²` and instantaneous
//! three-phase power is `v_α·i_α + v_β·i_β`.

use std::collections::VecDeque;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

const SQRT_2_3: f64 = 0.816_496_580_927_726;
const SQRT_3_2: f64 = 0.866_025_403_784_438_6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("need at least 2 rising zero crossings to estimate frequency, found {found}")]
    InsufficientCrossings { found: usize },
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
}

/// Instantaneous phase quantities (volts or amperes).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ThreePhase {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl ThreePhase {
    pub const ZERO: ThreePhase = ThreePhase { a: 0.0, b: 0.0, c: 0.0 };

    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    /// Balanced positive-sequence set `amplitude·cos(θ − k·2π/3)`.
    pub fn balanced(amplitude: f64, theta: f64) -> Self {
        use std::f64::consts::FRAC_PI_3;
        Self {
            a: amplitude * theta.cos(),
            b: amplitude * (theta - 2.0 * FRAC_PI_3).cos(),
            c: amplitude * (theta + 2.0 * FRAC_PI_3).cos(),
        }
    }

    pub fn dot(&self, other: &ThreePhase) -> f64 {
        self.a * other.a + self.b * other.b + self.c * other.c
    }

    pub fn sum_squares(&self) -> f64 {
        self.dot(self)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.a, self.b, self.c]
    }

    pub fn from_array(x: [f64; 3]) -> Self {
        Self::new(x[0], x[1], x[2])
    }

    pub fn max_abs(&self) -> f64 {
        self.a.abs().max(self.b.abs()).max(self.c.abs())
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(f(self.a), f(self.b), f(self.c))
    }
}

impl Add for ThreePhase {
    type Output = ThreePhase;
    fn add(self, rhs: ThreePhase) -> ThreePhase {
        ThreePhase::new(self.a + rhs.a, self.b + rhs.b, self.c + rhs.c)
    }
}

impl Sub for ThreePhase {
    type Output = ThreePhase;
    fn sub(self, rhs: ThreePhase) -> ThreePhase {
        ThreePhase::new(self.a - rhs.a, self.b - rhs.b, self.c - rhs.c)
    }
}

impl Mul<f64> for ThreePhase {
    type Output = ThreePhase;
    fn mul(self, k: f64) -> ThreePhase {
        ThreePhase::new(self.a * k, self.b * k, self.c * k)
    }
}

/// Stationary-frame components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AlphaBeta {
    pub alpha: f64,
    pub beta: f64,
}

impl AlphaBeta {
    pub const fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub fn magnitude(&self) -> f64 {
        self.alpha.hypot(self.beta)
    }

    pub fn angle(&self) -> f64 {
        self.beta.atan2(self.alpha)
    }
}

pub fn clarke(x: ThreePhase) -> AlphaBeta {
    AlphaBeta {
        alpha: SQRT_2_3 * (x.a - 0.5 * x.b - 0.5 * x.c),
        beta: SQRT_2_3 * SQRT_3_2 * (x.b - x.c),
    }
}

/// Right inverse of [`clarke`]; the result carries no zero-sequence component.
pub fn inverse_clarke(x: AlphaBeta) -> ThreePhase {
    let beta_part = SQRT_3_2 * x.beta;
    ThreePhase {
        a: SQRT_2_3 * x.alpha,
        b: SQRT_2_3 * (-0.5 * x.alpha + beta_part),
        c: SQRT_2_3 * (-0.5 * x.alpha - beta_part),
    }
}

/// Sliding-window RMS over a fixed number of samples.
///
/// Until the window has filled, the mean is taken over the samples seen so
/// far. The running sum is recomputed from the buffer every `window` pushes so
/// floating-point drift cannot accumulate over long runs.
#[derive(Debug, Clone)]
pub struct SlidingRms {
    capacity: usize,
    buf: VecDeque<f64>,
    sum_sq: f64,
    pushes_since_resum: usize,
}

impl SlidingRms {
    /// Window of `window_s` seconds sampled every `dt` seconds.
    pub fn new(window_s: f64, dt: f64) -> Result<Self, SignalError> {
        if !(dt > 0.0) {
            return Err(SignalError::NonPositiveStep(dt));
        }
        Ok(Self::with_samples((window_s / dt).round().max(1.0) as usize))
    }

    pub fn with_samples(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            capacity,
            buf: VecDeque::with_capacity(capacity),
            sum_sq: 0.0,
            pushes_since_resum: 0,
        }
    }

    pub fn window_samples(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, sample: f64) -> f64 {
        let sq = sample * sample;
        if self.buf.len() == self.capacity {
            if let Some(old) = self.buf.pop_front() {
                self.sum_sq -= old;
            }
        }
        self.buf.push_back(sq);
        self.sum_sq += sq;
        self.pushes_since_resum += 1;
        if self.pushes_since_resum >= self.capacity {
            self.sum_sq = self.buf.iter().sum();
            self.pushes_since_resum = 0;
        }
        self.value()
    }

    pub fn value(&self) -> f64 {
        if self.buf.is_empty() {
            return 0.0;
        }
        (self.sum_sq.max(0.0) / self.buf.len() as f64).sqrt()
    }

    pub fn reset(&mut self) {
        self.buf.clear();
        self.sum_sq = 0.0;
        self.pushes_since_resum = 0;
    }
}

pub fn rms_push(state: &mut SlidingRms, sample: f64) -> f64 {
    state.push(sample)
}

/// Fixed-length moving average; same bookkeeping as [`SlidingRms`] without the square.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    capacity: usize,
    buf: VecDeque<f64>,
    sum: f64,
    pushes_since_resum: usize,
}

impl MovingAverage {
    pub fn with_samples(capacity: usize) -> Self {
        let capacity = capacity.max(1);
        Self {
            capacity,
            buf: VecDeque::with_capacity(capacity),
            sum: 0.0,
            pushes_since_resum: 0,
        }
    }

    pub fn push(&mut self, sample: f64) -> f64 {
        if self.buf.len() == self.capacity {
            if let Some(old) = self.buf.pop_front() {
                self.sum -= old;
            }
        }
        self.buf.push_back(sample);
        self.sum += sample;
        self.pushes_since_resum += 1;
        if self.pushes_since_resum >= self.capacity {
            self.sum = self.buf.iter().sum();
            self.pushes_since_resum = 0;
        }
        self.value()
    }

    pub fn value(&self) -> f64 {
        if self.buf.is_empty() {
            0.0
        } else {
            self.sum / self.buf.len() as f64
        }
    }
}

/// Times of rising zero crossings, linearly interpolated between bracketing samples.
pub fn rising_crossings(samples: &[(f64, f64)]) -> Vec<f64> {
    samples
        .windows(2)
        .filter_map(|w| {
            let (t0, x0) = w[0];
            let (t1, x1) = w[1];
            if x0 < 0.0 && x1 >= 0.0 {
                Some(t0 + (t1 - t0) * (-x0) / (x1 - x0))
            } else {
                None
            }
        })
        .collect()
}

/// Frequency from the mean spacing of rising zero crossings in `(t, x)` samples.
pub fn estimate_frequency(samples: &[(f64, f64)]) -> Result<f64, SignalError> {
    let crossings = rising_crossings(samples);
    if crossings.len() < 2 {
        return Err(SignalError::InsufficientCrossings {
            found: crossings.len(),
        });
    }
    let span = crossings[crossings.len() - 1] - crossings[0];
    let mean_period = span / (crossings.len() - 1) as f64;
    Ok(1.0 / mean_period)
}

/// Online zero-crossing frequency tracker; reports the last full period.
#[derive(Debug, Clone, Default)]
pub struct FrequencyTracker {
    prev: Option<(f64, f64)>,
    last_crossing: Option<f64>,
    frequency: Option<f64>,
}

impl FrequencyTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, t: f64, x: f64) -> Option<f64> {
        if let Some((t0, x0)) = self.prev {
            if x0 < 0.0 && x >= 0.0 {
                let tc = t0 + (t - t0) * (-x0) / (x - x0);
                if let Some(last) = self.last_crossing {
                    if tc > last {
                        self.frequency = Some(1.0 / (tc - last));
                    }
                }
                self.last_crossing = Some(tc);
            }
        }
        self.prev = Some((t, x));
        self.frequency
    }

    pub fn frequency(&self) -> Option<f64> {
        self.frequency
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn clarke_zero_and_unit_alpha() {
        assert_eq!(clarke(ThreePhase::ZERO), AlphaBeta::new(0.0, 0.0));
        let ab = clarke(ThreePhase::new(1.0, -0.5, -0.5));
        assert!(close(ab.alpha, 1.224_744_871_391_589, 1e-12));
        assert!(close(ab.beta, 0.0, 1e-15));
    }

    #[test]
    fn balanced_set_maps_to_rotating_vector() {
        let amp = 3.7;
        let k = (1.5f64).sqrt();
        for i in 0..360 {
            let theta = i as f64 * PI / 180.0;
            let ab = clarke(ThreePhase::balanced(amp, theta));
            assert!(close(ab.alpha, k * amp * theta.cos(), 1e-12));
            assert!(close(ab.beta, k * amp * theta.sin(), 1e-12));
        }
    }

    #[test]
    fn inverse_of_unit_alpha() {
        let x = inverse_clarke(AlphaBeta::new((1.5f64).sqrt(), 0.0));
        assert!(close(x.a, 1.0, 1e-12));
        assert!(close(x.b, -0.5, 1e-12));
        assert!(close(x.c, -0.5, 1e-12));
        assert_eq!(inverse_clarke(AlphaBeta::default()), ThreePhase::ZERO);
    }

    #[test]
    fn rms_of_constant_and_square() {
        let mut rms = SlidingRms::with_samples(100);
        for _ in 0..250 {
            rms.push(5.0);
        }
        assert!(close(rms.value(), 5.0, 1e-12));
        let mut sq = SlidingRms::with_samples(100);
        for i in 0..1000 {
            sq.push(if (i / 10) % 2 == 0 { 2.5 } else { -2.5 });
        }
        assert!(close(sq.value(), 2.5, 1e-12));
    }

    #[test]
    fn rms_of_mains_sinusoid() {
        let dt = 1e-5;
        let mut rms = SlidingRms::new(0.02, dt).unwrap();
        let amp = 230.0 * 2f64.sqrt();
        let mut out = 0.0;
        for n in 0..5000 {
            out = rms_push(&mut rms, amp * (100.0 * PI * n as f64 * dt).cos());
        }
        assert!((out - 230.0).abs() / 230.0 < 1e-3);
    }

    #[test]
    fn rms_before_window_fills_uses_seen_samples() {
        let mut rms = SlidingRms::with_samples(10);
        assert_eq!(rms.value(), 0.0);
        rms.push(3.0);
        assert!(close(rms.push(4.0), (12.5f64).sqrt(), 1e-12));
    }

    #[test]
    fn rms_rejects_bad_step() {
        assert!(SlidingRms::new(0.02, 0.0).is_err());
    }

    fn sine(freq: f64, dt: f64, duration: f64) -> Vec<(f64, f64)> {
        let n = (duration / dt) as usize;
        (0..n)
            .map(|i| {
                let t = i as f64 * dt;
                (t, (2.0 * PI * freq * t + 0.3).sin())
            })
            .collect()
    }

    #[test]
    fn frequency_of_pure_tones() {
        let f = estimate_frequency(&sine(50.0, 1e-5, 0.2)).unwrap();
        assert!((f - 50.0).abs() < 0.01);
        let f = estimate_frequency(&sine(49.0, 1e-5, 0.2)).unwrap();
        assert!((f - 49.0).abs() < 0.01);
    }

    #[test]
    fn frequency_of_dc_is_an_error() {
        let dc: Vec<_> = (0..1000).map(|i| (i as f64 * 1e-5, 1.0)).collect();
        assert_eq!(
            estimate_frequency(&dc),
            Err(SignalError::InsufficientCrossings { found: 0 })
        );
    }

    #[test]
    fn tracker_matches_batch_estimate() {
        let s = sine(50.0, 1e-5, 0.1);
        let mut tr = FrequencyTracker::new();
        for &(t, x) in &s {
            tr.push(t, x);
        }
        assert!((tr.frequency().unwrap() - 50.0).abs() < 0.01);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn clarke_is_linear(a in -1e3..1e3f64, b in -1e3..1e3f64,
                            x in prop::array::uniform3(-1e3..1e3f64),
                            y in prop::array::uniform3(-1e3..1e3f64)) {
            let x = ThreePhase::from_array(x);
            let y = ThreePhase::from_array(y);
            let lhs = clarke(x * a + y * b);
            let cx = clarke(x);
            let cy = clarke(y);
            let tol = 1e-9 * (1.0 + a.abs() + b.abs()) * 1e3;
            prop_assert!((lhs.alpha - (a * cx.alpha + b * cy.alpha)).abs() < tol);
            prop_assert!((lhs.beta - (a * cx.beta + b * cy.beta)).abs() < tol);
        }

        #[test]
        fn round_trip_and_power_invariance(alpha in -1e3..1e3f64, beta in -1e3..1e3f64) {
            let ab = AlphaBeta::new(alpha, beta);
            let abc = inverse_clarke(ab);
            let back = clarke(abc);
            prop_assert!((back.alpha - alpha).abs() < 1e-12 * (1.0 + alpha.abs()));
            prop_assert!((back.beta - beta).abs() < 1e-12 * (1.0 + beta.abs()));
            let e3 = abc.sum_squares();
            let e2 = alpha * alpha + beta * beta;
            prop_assert!((e3 - e2).abs() <= 1e-12 * e2 + 1e-300);
            prop_assert!((abc.a + abc.b + abc.c).abs() < 1e-9);
        }

        #[test]
        fn rms_is_non_negative(samples in prop::collection::vec(-1e4..1e4f64, 1..200)) {
            let mut rms = SlidingRms::with_samples(37);
            for s in samples {
                prop_assert!(rms.push(s) >= 0.0);
            }
        }
    }
}
