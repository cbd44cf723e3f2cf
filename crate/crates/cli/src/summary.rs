use serde::{Deserialize, Serialize};

use dzvoc_core::engine::ScenarioMetrics;

use crate::config::{EventKind, ScenarioConfig, StepHorizon};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub metrics: ScenarioMetrics,
    /// Post-clearance overshoot of the guard-disabled comparison run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unguarded_overshoot: Option<f64>,
    pub dt: f64,
    pub t_end: f64,
    pub runtime_s: f64,
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "not settled".to_string(), |v| format!("{v:.4} s"))
}

fn pv_connected_at(cfg: &ScenarioConfig, t: f64) -> bool {
    let mut on = cfg.pv.map_or(false, |p| p.connected);
    for e in cfg.events.iter().filter(|e| e.time <= t) {
        match e.kind {
            EventKind::PvDisconnect => on = false,
            EventKind::PvConnect => on = true,
            _ => {}
        }
    }
    on
}

/// Judge the metrics against the scenario's declared expectations.
pub fn evaluate(cfg: &ScenarioConfig, m: &ScenarioMetrics, unguarded_overshoot: Option<f64>) -> Vec<Check> {
    let x = &cfg.expect;
    let mut checks = Vec::new();
    let clean: Vec<_> = m.windows.iter().filter(|w| !w.faulted).collect();

    if let Some(target) = &x.shares {
        for w in &clean {
            let worst = w
                .shares
                .iter()
                .zip(target)
                .map(|(s, t)| (s - t).abs())
                .fold(0.0, f64::max);
            checks.push(Check::new(
                format!("shares@{:.2}s", w.end),
                worst <= x.share_tolerance,
                format!("shares {:?}, worst deviation {worst:.4} (tolerance {})", round4(&w.shares), x.share_tolerance),
            ));
        }
    }

    let ordinary = |kind: &str| !kind.starts_with("fault");
    for e in m.events.iter().filter(|e| ordinary(&e.kind)) {
        if let Some(limit) = x.settling_time {
            checks.push(Check::new(
                format!("settling@{}s", e.time),
                e.settling_time.map_or(false, |s| s <= limit),
                format!("{} settled after {} (limit {limit} s)", e.kind, fmt_opt(e.settling_time)),
            ));
        }
        if let Some(limit) = x.power_response {
            let worst = e
                .power_response
                .iter()
                .map(|r| r.unwrap_or(f64::INFINITY))
                .fold(0.0, f64::max);
            checks.push(Check::new(
                format!("power_response@{}s", e.time),
                worst <= limit,
                format!("slowest source within band after {worst:.4} s (limit {limit} s)"),
            ));
        }
    }

    for f in &m.faults {
        if let Some(limit) = x.fault_rms_max {
            let pu = f.rms_max / cfg.v_nominal;
            checks.push(Check::new(
                format!("fault_rms@{}s", f.on),
                pu < limit,
                format!("bus RMS during fault at most {:.2} V ({pu:.4} pu, limit {limit} pu)", f.rms_max),
            ));
        }
        if let Some(limit) = x.fault_recovery {
            checks.push(Check::new(
                format!("fault_recovery@{}s", f.off),
                f.recovery_time.map_or(false, |r| r <= limit),
                format!("recovered after {} (limit {limit} s)", fmt_opt(f.recovery_time)),
            ));
        }
    }
    if x.compare_without_guard {
        let guarded = m.faults.first().map(|f| f.post_clear_overshoot);
        let passed = matches!((guarded, unguarded_overshoot), (Some(g), Some(u)) if u > g);
        checks.push(Check::new(
            "guard_comparison",
            passed,
            format!(
                "post-clearance overshoot {:.4} with guard, {:.4} without",
                guarded.unwrap_or(f64::NAN),
                unguarded_overshoot.unwrap_or(f64::NAN)
            ),
        ));
    }

    if let Some(limit) = x.balance_residual {
        let worst = m.windows.iter().map(|w| w.balance_residual).fold(0.0, f64::max);
        checks.push(Check::new(
            "power_balance",
            worst < limit,
            format!("worst settled residual {worst:.2e} (limit {limit})"),
        ));
    }

    if let (Some(tol), Some(pv)) = (x.pv_power_tolerance, cfg.pv) {
        let k = cfg.units.len();
        for w in clean.iter().filter(|w| pv_connected_at(cfg, w.start)) {
            let p = w.source_power[k];
            let err = (p - pv.power).abs() / pv.power;
            checks.push(Check::new(
                format!("pv_power@{:.2}s", w.end),
                err <= tol,
                format!("PV injected {p:.1} W of {} W ({:.2}%, tolerance {}%)", pv.power, 100.0 * err, 100.0 * tol),
            ));
        }
    }

    for s in &x.power_steps {
        let got = m
            .events
            .iter()
            .find(|e| (e.time - s.time).abs() < 1e-9)
            .and_then(|e| match s.horizon {
                StepHorizon::Settled => e.power_step_settled.get(s.source),
                StepHorizon::OneCycle => e.power_step_one_cycle.get(s.source),
            })
            .copied()
            .unwrap_or(f64::NAN);
        let horizon = match s.horizon {
            StepHorizon::Settled => "settled",
            StepHorizon::OneCycle => "one_cycle",
        };
        checks.push(Check::new(
            format!("power_step@{}s[{}]/{horizon}", s.time, s.source),
            (got - s.delta).abs() <= s.tolerance * s.delta.abs(),
            format!("source {} changed by {got:.1} W (expected {} W +/- {}%)", s.source, s.delta, 100.0 * s.tolerance),
        ));
    }
    checks
}

fn round4(xs: &[f64]) -> Vec<f64> {
    xs.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}
