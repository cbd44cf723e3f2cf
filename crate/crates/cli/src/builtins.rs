//! Reference scenarios.

use dzvoc_core::engine::SimConfig;

use crate::config::{
    EventConfig, EventKind, Expectations, PowerStepExpectation, PvConfig, ScenarioConfig,
    StepHorizon, UnitConfig,
};

pub const BUILTIN_NAMES: [&str; 3] = ["paper-a", "paper-b", "paper-c"];

pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    match name {
        "paper-a" => Some(paper_a()),
        "paper-b" => Some(paper_b()),
        "paper-c" => Some(paper_c()),
        _ => None,
    }
}

fn shared_units() -> Vec<UnitConfig> {
    [1.0, 0.5, 1.0 / 3.0]
        .into_iter()
        .map(|capacity| UnitConfig { capacity, ..UnitConfig::default() })
        .collect()
}

fn sim(t_end: f64) -> SimConfig {
    SimConfig { t_end, ..SimConfig::default() }
}

/// Three units rated 1 : 1/2 : 1/3 on an 8 kW load that drops by 3 kW at 3 s.
pub fn paper_a() -> ScenarioConfig {
    ScenarioConfig {
        name: "paper-a".into(),
        description: "three paralleled units, 8 kW load, -3 kW step at 3 s".into(),
        v_nominal: 230.0,
        load_power: 8000.0,
        fault_conductance: dzvoc_core::network::DEFAULT_FAULT_CONDUCTANCE,
        sim: sim(4.0),
        units: shared_units(),
        pv: None,
        events: vec![EventConfig::new(3.0, EventKind::LoadDelta).with_power(-3000.0)],
        expect: Expectations {
            shares: Some(vec![6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0]),
            share_tolerance: 0.05,
            settling_time: Some(0.5),
            power_response: Some(0.05),
            balance_residual: Some(0.005),
            ..Expectations::default()
        },
    }
}

/// The same network with a bolted bus fault from 2.5 s to 3 s.
pub fn paper_b() -> ScenarioConfig {
    ScenarioConfig {
        name: "paper-b".into(),
        description: "three paralleled units, 8 kW load, bus fault 2.5 s to 3 s".into(),
        events: vec![
            EventConfig::new(2.5, EventKind::FaultOn),
            EventConfig::new(3.0, EventKind::FaultOff),
        ],
        expect: Expectations {
            fault_rms_max: Some(0.1),
            fault_recovery: Some(1.0),
            compare_without_guard: true,
            balance_residual: Some(0.005),
            ..Expectations::default()
        },
        ..paper_a()
    }
}

/// One battery unit with a 4.8 kW PV inverter on a 5 kW load; +3 kW at 2 s,
/// PV lost at 3 s.
pub fn paper_c() -> ScenarioConfig {
    ScenarioConfig {
        name: "paper-c".into(),
        description: "battery unit with PV, 5 kW load, +3 kW at 2 s, PV disconnect at 3 s".into(),
        v_nominal: 230.0,
        load_power: 5000.0,
        fault_conductance: dzvoc_core::network::DEFAULT_FAULT_CONDUCTANCE,
        sim: sim(4.0),
        units: vec![UnitConfig::default()],
        pv: Some(PvConfig::default()),
        events: vec![
            EventConfig::new(2.0, EventKind::LoadDelta).with_power(3000.0),
            EventConfig::new(3.0, EventKind::PvDisconnect),
        ],
        expect: Expectations {
            settling_time: Some(0.2),
            pv_power_tolerance: Some(0.02),
            balance_residual: Some(0.005),
            power_steps: vec![
                PowerStepExpectation {
                    time: 2.0,
                    source: 0,
                    delta: 3000.0,
                    tolerance: 0.05,
                    horizon: StepHorizon::Settled,
                },
                PowerStepExpectation {
                    time: 3.0,
                    source: 0,
                    delta: 4800.0,
                    tolerance: 0.05,
                    horizon: StepHorizon::OneCycle,
                },
            ],
            ..Expectations::default()
        },
    }
}
