//! Signal traces as `time_s,value` CSV.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub fn signal_to_csv(samples: &[f64], fs: f64) -> String {
    let mut out = String::from("time_s,value\n");
    for (i, v) in samples.iter().enumerate() {
        let _ = writeln!(out, "{},{}", i as f64 / fs, v);
    }
    out
}

pub fn write_signal_csv(path: &Path, samples: &[f64], fs: f64) -> Result<()> {
    std::fs::write(path, signal_to_csv(samples, fs)).map_err(|e| Error::file(path, e))
}

/// Parses `time_s,value` rows, skipping `#` comment lines; returns the values and the sampling rate
/// implied by the first and last time stamps.
pub fn parse_signal_csv(text: &str) -> Result<(Vec<f64>, f64)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h.trim() == "time_s,value" => {}
        _ => return Err(Error::invalid("signal csv must start with a time_s,value header")),
    }
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines {
        let bad = || Error::invalid(format!("signal csv line {}: expected two numbers, got {line:?}", i + 1));
        let (t, v) = line.split_once(',').ok_or_else(bad)?;
        times.push(t.trim().parse::<f64>().map_err(|_| bad())?);
        values.push(v.trim().parse::<f64>().map_err(|_| bad())?);
    }
    if values.len() < 2 {
        return Err(Error::InsufficientData("signal csv needs at least 2 rows".into()));
    }
    let span = times[times.len() - 1] - times[0];
    if span.is_nan() || span <= 0.0 {
        return Err(Error::invalid("signal csv time stamps must increase"));
    }
    Ok((values, (times.len() - 1) as f64 / span))
}

pub fn read_signal_csv(path: &Path) -> Result<(Vec<f64>, f64)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_signal_csv(&text)
}
