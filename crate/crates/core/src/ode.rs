//! Fixed-step explicit integrators over flat state vectors.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

/// Reusable scratch space for stepping `dy/dt = f(t, y)` in place.
#[derive(Debug, Clone)]
pub struct Stepper {
    method: Integrator,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Stepper {
    pub fn new(method: Integrator, dim: usize) -> Self {
        Self {
            method,
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    pub fn method(&self) -> Integrator {
        self.method
    }

    /// Advance `y` from `t` to `t + h`. `f(t, y, dydt)` writes the derivative.
    pub fn step<F>(&mut self, t: f64, h: f64, y: &mut [f64], mut f: F)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        debug_assert_eq!(y.len(), self.k1.len());
        match self.method {
            Integrator::Euler => {
                f(t, y, &mut self.k1);
                for (yi, ki) in y.iter_mut().zip(&self.k1) {
                    *yi += h * ki;
                }
            }
            Integrator::Rk4 => {
                let half = 0.5 * h;
                f(t, y, &mut self.k1);
                for i in 0..y.len() {
                    self.tmp[i] = y[i] + half * self.k1[i];
                }
                f(t + half, &self.tmp, &mut self.k2);
                for i in 0..y.len() {
                    self.tmp[i] = y[i] + half * self.k2[i];
                }
                f(t + half, &self.tmp, &mut self.k3);
                for i in 0..y.len() {
                    self.tmp[i] = y[i] + h * self.k3[i];
                }
                f(t + h, &self.tmp, &mut self.k4);
                let sixth = h / 6.0;
                for i in 0..y.len() {
                    y[i] += sixth * (self.k1[i] + 2.0 * (self.k2[i] + self.k3[i]) + self.k4[i]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic(omega: f64, h: f64, t_end: f64, method: Integrator) -> f64 {
        // x'' = -ω²x from (1, 0); returns |x(t_end) - cos(ω t_end)|
        let mut y = [1.0, 0.0];
        let mut st = Stepper::new(method, 2);
        let n = (t_end / h).round() as usize;
        for i in 0..n {
            st.step(i as f64 * h, h, &mut y, |_, s, d| {
                d[0] = s[1];
                d[1] = -omega * omega * s[0];
            });
        }
        (y[0] - (omega * n as f64 * h).cos()).abs()
    }

    #[test]
    fn exponential_growth() {
        let mut y = [1.0];
        let mut st = Stepper::new(Integrator::Rk4, 1);
        for i in 0..10 {
            st.step(i as f64 * 0.1, 0.1, &mut y, |_, s, d| d[0] = s[0]);
        }
        assert!((y[0] - std::f64::consts::E).abs() < 1e-5);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let omega = 2.0 * std::f64::consts::PI * 50.0;
        let hs = [2e-4, 1e-4, 5e-5];
        let errs: Vec<f64> = hs
            .iter()
            .map(|&h| harmonic(omega, h, 0.1024, Integrator::Rk4))
            .collect();
        let slope = (errs[0] / errs[2]).ln() / (hs[0] / hs[2]).ln();
        assert!((slope - 4.0).abs() < 0.3, "slope {slope}");
    }

    #[test]
    fn euler_is_first_order() {
        let omega = 10.0;
        let e1 = harmonic(omega, 1e-4, 0.5, Integrator::Euler);
        let e2 = harmonic(omega, 5e-5, 0.5, Integrator::Euler);
        let slope = (e1 / e2).ln() / 2f64.ln();
        assert!((slope - 1.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn zero_field_is_fixed_point() {
        let mut y = [0.0; 4];
        let mut st = Stepper::new(Integrator::Rk4, 4);
        st.step(0.0, 1e-3, &mut y, |_, _, d| d.fill(0.0));
        assert_eq!(y, [0.0; 4]);
    }
}
