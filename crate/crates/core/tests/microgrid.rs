use dzvoc_core::control::PvSource;
use dzvoc_core::engine::{
    run_scenario, EventSchedule, ScheduledEvent, SimConfig, Simulation, Trace,
};
use dzvoc_core::network::{
    scale_unit_for_capacity, GridEvent, GridModel, InverterUnit, PvInverter, PvMode,
};
use dzvoc_core::signals::estimate_frequency;

fn at(time: f64, event: GridEvent) -> ScheduledEvent {
    ScheduledEvent { time, event }
}

fn single_unit(load: f64) -> GridModel {
    GridModel::new(vec![InverterUnit::default()], None, load, 230.0).unwrap()
}

fn three_units(load: f64, tweak: impl Fn(&mut InverterUnit)) -> GridModel {
    let base = InverterUnit::default();
    let units = [1.0, 0.5, 1.0 / 3.0]
        .iter()
        .map(|&s| {
            let mut u = scale_unit_for_capacity(&base, s).unwrap();
            tweak(&mut u);
            u
        })
        .collect();
    GridModel::new(units, None, load, 230.0).unwrap()
}

fn mean_rms(tr: &Trace, from: f64, to: f64) -> f64 {
    let rs: Vec<f64> = tr
        .records
        .iter()
        .filter(|r| r.t >= from && r.t < to)
        .map(|r| r.bus_rms)
        .collect();
    rs.iter().sum::<f64>() / rs.len() as f64
}

#[test]
fn repeated_runs_are_identical() {
    let s = EventSchedule::new(vec![at(0.3, GridEvent::LoadDelta { power: 2000.0 })]).unwrap();
    let cfg = SimConfig { t_end: 0.5, ..SimConfig::default() };
    let a = Simulation::new(cfg, three_units(8000.0, |_| {}), &s).unwrap().run().unwrap();
    let b = Simulation::new(cfg, three_units(8000.0, |_| {}), &s).unwrap().run().unwrap();
    assert_eq!(a.records.len(), b.records.len());
    for (x, y) in a.records.iter().zip(&b.records) {
        assert_eq!(format!("{x:?}"), format!("{y:?}"));
    }
}

#[test]
fn halving_the_step_barely_moves_the_settled_voltage() {
    let run = |dt: f64| {
        let cfg = SimConfig { t_end: 1.5, dt, decimation: (1e-3 / dt).round() as usize, ..SimConfig::default() };
        let (tr, _) = run_scenario(cfg, &EventSchedule::default(), single_unit(5000.0)).unwrap();
        mean_rms(&tr, 1.3, 1.5)
    };
    let coarse = run(1e-5);
    let fine = run(5e-6);
    assert!((coarse - fine).abs() / fine < 1e-4, "{coarse} vs {fine}");
}

#[test]
fn free_unit_runs_at_mains_frequency() {
    let cfg = SimConfig { t_end: 2.0, decimation: 10, ..SimConfig::default() };
    let (tr, m) = run_scenario(cfg, &EventSchedule::default(), single_unit(5000.0)).unwrap();
    let va: Vec<(f64, f64)> = tr.records.iter().filter(|r| r.t >= 1.0).map(|r| (r.t, r.bus.a)).collect();
    let f = estimate_frequency(&va).unwrap();
    assert!((f - 50.0).abs() <= 0.25, "{f}");
    assert!(m.max_frequency_deviation.unwrap() <= 0.25);
}

#[test]
fn undisturbed_grid_holds_its_voltage() {
    let cfg = SimConfig { t_end: 3.5, ..SimConfig::default() };
    let (tr, _) = run_scenario(cfg, &EventSchedule::default(), three_units(8000.0, |_| {})).unwrap();
    let settled: Vec<f64> = tr.records.iter().filter(|r| r.t >= 1.5).map(|r| r.bus_rms).collect();
    let hi = settled.iter().cloned().fold(f64::MIN, f64::max);
    let lo = settled.iter().cloned().fold(f64::MAX, f64::min);
    assert!((hi - lo) / 230.0 < 1e-3, "drift {}", (hi - lo) / 230.0);
}

#[test]
fn capacity_scaled_units_share_in_proportion() {
    let s = EventSchedule::new(vec![at(1.5, GridEvent::LoadDelta { power: -3000.0 })]).unwrap();
    let cfg = SimConfig { t_end: 2.5, ..SimConfig::default() };
    let (_, m) = run_scenario(cfg, &s, three_units(8000.0, |_| {})).unwrap();
    assert_eq!(m.windows.len(), 2);
    for w in &m.windows {
        for (share, target) in w.shares.iter().zip([6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0]) {
            assert!((share - target).abs() < 1e-3, "{:?}", w.shares);
        }
        assert!(w.balance_residual < 5e-3);
    }
}

fn fault_overshoot(tweak: impl Fn(&mut InverterUnit)) -> f64 {
    let s = EventSchedule::new(vec![
        at(1.5, GridEvent::FaultOn { conductance: None }),
        at(2.0, GridEvent::FaultOff),
    ])
    .unwrap();
    let cfg = SimConfig { t_end: 3.0, ..SimConfig::default() };
    let (_, m) = run_scenario(cfg, &s, three_units(8000.0, tweak)).unwrap();
    m.faults[0].post_clear_overshoot
}

#[test]
fn fault_guard_limits_post_clearance_overshoot() {
    let guarded = fault_overshoot(|_| {});
    let unguarded = fault_overshoot(|u| u.vrl.params.fault_guard = false);
    let open_loop = fault_overshoot(|u| u.vrl.params.enabled = false);
    assert!(guarded < unguarded, "{guarded} vs {unguarded}");
    // whatever remains is the circuit's own clearing transient, not windup
    assert!(guarded <= open_loop, "{guarded} vs {open_loop}");
}

fn pv_grid(mode: PvMode) -> GridModel {
    let pv = PvInverter::with_defaults(PvSource::default(), mode);
    GridModel::new(vec![InverterUnit::default()], Some(pv), 5000.0, 230.0).unwrap()
}

fn settled_pv_power(mode: PvMode, dt: f64) -> (f64, f64) {
    let cfg = SimConfig { t_end: 1.5, dt, decimation: (1e-4 / dt).round() as usize, ..SimConfig::default() };
    let (tr, _) = run_scenario(cfg, &EventSchedule::default(), pv_grid(mode)).unwrap();
    let w: Vec<_> = tr.records.iter().filter(|r| r.t >= 1.4).collect();
    let p = w.iter().map(|r| r.pv.unwrap().power.instantaneous).sum::<f64>() / w.len() as f64;
    (p, mean_rms(&tr, 1.4, 1.5))
}

#[test]
fn averaged_pv_injects_its_generation() {
    let (p, v) = settled_pv_power(PvMode::Averaged, 1e-5);
    assert!((v - 230.0).abs() / 230.0 < 0.02);
    assert!((p - 4800.0).abs() / 4800.0 < 0.02, "{p}");
}

#[test]
fn switched_pv_injects_its_generation() {
    let (p, v) = settled_pv_power(PvMode::Switched, 2e-6);
    assert!((v - 230.0).abs() / 230.0 < 0.02);
    assert!((p - 4800.0).abs() / 4800.0 < 0.02, "{p}");
}

#[test]
fn pv_disconnect_shifts_its_share_to_the_battery() {
    let s = EventSchedule::new(vec![at(1.5, GridEvent::PvDisconnect)]).unwrap();
    let cfg = SimConfig { t_end: 2.5, ..SimConfig::default() };
    let (tr, m) = run_scenario(cfg, &s, pv_grid(PvMode::Averaged)).unwrap();
    let after = &m.windows[1];
    assert_eq!(after.source_power[1], 0.0);
    assert!((after.source_power[0] - after.load_power).abs() / after.load_power < 5e-3);
    assert!(tr.records.iter().filter(|r| r.t >= 1.5).all(|r| r.pv.unwrap().current == Default::default()));
}
