//! CSV formats: `t,value` paths, `x,t,value` fields and event traces.
//!
//! Numbers are written in the shortest form that parses back to the same
//! `f64`, so a written path reads back bit-exactly.

use std::io::{Read, Write};

use mdrate_core::sim::QueueTrace;
use mdrate_core::{GridField2D, GridPath};

use crate::error::CliError;

pub fn write_path<W: Write>(out: W, path: &GridPath) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "value"])?;
    for (t, v) in path.times().zip(path.values()) {
        w.write_record([t.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a `t,value` CSV on a uniform grid starting at 0.
pub fn read_path<R: Read>(input: R) -> Result<GridPath, CliError> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "t" || &headers[1] != "value" {
        return Err(CliError::Config("path CSV must have the header t,value".into()));
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Config(e.to_string()))?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| CliError::Config(format!("bad number {s:?}: {e}")));
        times.push(parse(&rec[0])?);
        values.push(parse(&rec[1])?);
    }
    if times.len() < 3 {
        return Err(CliError::Config("path CSV needs at least three rows".into()));
    }
    let horizon = *times.last().unwrap();
    let path = GridPath::new(horizon, values).map_err(|e| CliError::Config(format!("path CSV: {e}")))?;
    let tol = 1e-9 * horizon.abs().max(1.0);
    if times.iter().zip(path.times()).any(|(a, b)| (a - b).abs() > tol) {
        return Err(CliError::Config("path CSV times must form a uniform grid starting at 0".into()));
    }
    Ok(path)
}

pub fn write_field<W: Write>(out: W, field: &GridField2D, time_label: &str) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", time_label, "value"])?;
    for j in 0..=field.t_steps() {
        for a in 0..=field.x_steps() {
            w.write_record([field.x(a).to_string(), field.t(j).to_string(), field.get(a, j).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace<W: Write>(out: W, trace: &QueueTrace) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "type", "customer"])?;
    for e in &trace.events {
        w.write_record([e.time.to_string(), e.kind.label().to_string(), e.customer.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Generic numeric table with a header row.
pub fn write_table<W: Write>(out: W, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}
