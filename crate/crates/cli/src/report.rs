//! Text reports for the `stability` command.

use std::fmt::Write;

use dzvoc_core::oscillator::{FeedbackGains, OscillatorParams};
use dzvoc_core::stability::{classify_pair, eigenvalues, linearize_segment, validate_design, Segment};

/// Apply one `key=value` override.
pub fn apply_param(p: &mut OscillatorParams, g: &mut FeedbackGains, kv: &str) -> Result<(), String> {
    let (key, value) = kv
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got '{kv}'"))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|e| format!("{}: {e}", key.trim()))?;
    let slot = match key.trim() {
        "r" => &mut p.r,
        "l" => &mut p.l,
        "c" => &mut p.c,
        "sigma" => &mut p.sigma,
        "phi" => &mut p.phi,
        "r_s" => &mut p.r_s,
        "omega0" => &mut p.omega0,
        "i_gain" => &mut g.i_gain,
        "v_gain" => &mut g.v_gain,
        other => {
            return Err(format!(
                "unknown parameter '{other}' (r, l, c, sigma, phi, r_s, omega0, i_gain, v_gain)"
            ))
        }
    };
    *slot = value;
    Ok(())
}

/// Per-segment linearization and design rules. The flag is true when every
/// rule passes.
pub fn stability_report(p: &OscillatorParams, g: &FeedbackGains) -> (String, bool) {
    let mut out = String::new();
    let _ = writeln!(out, "segment  beta_eff [S]   eigenvalues [1/s]              class");
    for seg in Segment::ALL {
        let lin = linearize_segment(p, g, seg);
        let pair = eigenvalues(&lin, p);
        let (l1, l2) = pair;
        let eig = if l1.im != 0.0 {
            format!("{:.4} +/- j{:.4}", l1.re, l1.im.abs())
        } else {
            format!("{:.4}, {:.4}", l1.re, l2.re)
        };
        let _ = writeln!(
            out,
            "{:<8} {:>+12.7}   {:<30} {:?}",
            seg.name(),
            lin.beta_eff,
            eig,
            classify_pair(&pair)
        );
    }
    let report = validate_design(p, g);
    let _ = writeln!(out, "design rules:");
    for c in &report.checks {
        let _ = writeln!(out, "  [{}] {:<16} {}", if c.passed { "ok" } else { "FAIL" }, c.name, c.detail);
    }
    (out, report.all_passed())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_report_passes() {
        let (text, ok) = stability_report(&OscillatorParams::default(), &FeedbackGains::default());
        assert!(ok, "{text}");
        assert!(text.contains("-7.30"), "{text}");
        assert!(text.contains("j314.07"), "{text}");
    }

    #[test]
    fn overrides() {
        let mut p = OscillatorParams::default();
        let mut g = FeedbackGains::default();
        apply_param(&mut p, &mut g, "sigma=0.05").unwrap();
        apply_param(&mut p, &mut g, " i_gain = 2e-3").unwrap();
        assert_eq!(p.sigma, 0.05);
        assert_eq!(g.i_gain, 2e-3);
        assert!(apply_param(&mut p, &mut g, "sigma").is_err());
        assert!(apply_param(&mut p, &mut g, "zeta=1").is_err());
        assert!(apply_param(&mut p, &mut g, "l=abc").is_err());
        let (text, ok) = stability_report(&p, &g);
        assert!(!ok);
        assert!(text.contains("[FAIL] sigma_r"), "{text}");
    }
}
