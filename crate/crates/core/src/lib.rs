//! Dead-zone virtual oscillator control for paralleled three-phase inverters.
//!
//! - [`signals`]: three-phase quantities, Clarke transform, RMS and frequency estimation.
//! - [`oscillator`]: the dead-zone oscillator and its modulation reference.
//! - [`stability`]: piecewise linearization and design-rule checks.
//! - [`control`]: voltage recovery loop, hysteresis current control, PV reference.
//! - [`network`]: the islanded microgrid model.
//! - [`engine`]: fixed-step simulation, traces and scenario metrics.

pub mod control;
pub mod engine;
pub mod network;
pub mod ode;
pub mod oscillator;
pub mod signals;
pub mod stability;
