//! Trace and impulse CSV files.
//!
//! Values are written in shortest round-trip form, so reading a trace back
//! reproduces the recorded samples exactly.

use std::io::{Read, Write};

use dzvoc_core::engine::{SourceSample, Trace, TraceRecord, UnitSample};
use dzvoc_core::network::PowerMeasurement;
use dzvoc_core::signals::ThreePhase;

const UNIT_FIELDS: [&str; 8] = ["v_osc", "i_l", "scale", "ia", "ib", "ic", "p", "p_avg"];
const PV_FIELDS: [&str; 8] = ["pv_ia", "pv_ib", "pv_ic", "pv_ref_a", "pv_ref_b", "pv_ref_c", "pv_p", "pv_p_avg"];

pub fn trace_header(unit_count: usize, has_pv: bool) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for k in 1..=unit_count {
        h.extend(UNIT_FIELDS.iter().map(|f| format!("u{k}_{f}")));
    }
    h.extend(["bus_va", "bus_vb", "bus_vc", "bus_rms"].map(String::from));
    if has_pv {
        h.extend(PV_FIELDS.map(String::from));
    }
    h.extend(["load_p", "load_p_avg", "fault_p", "freq"].map(String::from));
    h
}

fn push3(row: &mut Vec<String>, x: ThreePhase) {
    row.extend(x.to_array().iter().map(f64::to_string));
}

pub fn write_trace_csv<W: Write>(trace: &Trace, w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(trace_header(trace.unit_count, trace.has_pv))?;
    let mut row = Vec::new();
    for r in &trace.records {
        row.clear();
        row.push(r.t.to_string());
        for u in &r.units {
            row.extend([u.v_osc, u.i_l, u.scale].iter().map(f64::to_string));
            push3(&mut row, u.current);
            row.push(u.power.instantaneous.to_string());
            row.push(u.power.average.to_string());
        }
        push3(&mut row, r.bus);
        row.push(r.bus_rms.to_string());
        if let Some(pv) = &r.pv {
            push3(&mut row, pv.current);
            push3(&mut row, pv.reference);
            row.push(pv.power.instantaneous.to_string());
            row.push(pv.power.average.to_string());
        }
        row.push(r.load.instantaneous.to_string());
        row.push(r.load.average.to_string());
        row.push(r.fault_power.to_string());
        row.push(r.frequency.map(|f| f.to_string()).unwrap_or_default());
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn bad_data(msg: String) -> csv::Error {
    csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, msg))
}

/// Read a trace written by [`write_trace_csv`].
pub fn read_trace_csv<R: Read>(r: R) -> Result<Trace, csv::Error> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let unit_count = header.iter().filter(|h| h.ends_with("_v_osc")).count();
    let has_pv = header.iter().any(|h| h == "pv_ia");
    if header != trace_header(unit_count, has_pv) {
        return Err(bad_data(format!("unrecognized trace header: {}", header.join(","))));
    }
    let mut records = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let mut fields = rec.iter();
        let mut next = || -> Result<f64, csv::Error> {
            let s = fields.next().unwrap_or("");
            s.parse::<f64>()
                .map_err(|e| bad_data(format!("row {}: '{s}': {e}", line + 2)))
        };
        let t = next()?;
        let mut units = Vec::with_capacity(unit_count);
        for _ in 0..unit_count {
            let (v_osc, i_l, scale) = (next()?, next()?, next()?);
            let current = ThreePhase::new(next()?, next()?, next()?);
            let power = PowerMeasurement { instantaneous: next()?, average: next()? };
            units.push(UnitSample { v_osc, i_l, scale, current, power });
        }
        let bus = ThreePhase::new(next()?, next()?, next()?);
        let bus_rms = next()?;
        let pv = if has_pv {
            let current = ThreePhase::new(next()?, next()?, next()?);
            let reference = ThreePhase::new(next()?, next()?, next()?);
            let power = PowerMeasurement { instantaneous: next()?, average: next()? };
            Some(SourceSample { current, reference, power })
        } else {
            None
        };
        let load = PowerMeasurement { instantaneous: next()?, average: next()? };
        let fault_power = next()?;
        let frequency = next().ok();
        records.push(TraceRecord { t, units, bus, bus_rms, pv, load, fault_power, frequency });
    }
    Ok(Trace { unit_count, has_pv, records })
}

pub fn write_impulse_csv<W: Write>(samples: &[(f64, f64)], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "v_osc"])?;
    for (t, v) in samples {
        out.write_record([t.to_string(), v.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
