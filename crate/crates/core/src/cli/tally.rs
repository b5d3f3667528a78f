//! Tally CSV: a `source,count` header, one row per source, then metadata
//! rows for `M`, the selection probabilities and the observed QBERs.
//!
//! ```text
//! source,count
//! vacuum,3504
//! decoy,96311
//! signal,329509
//! M,5222000000
//! p0,0.1
//! p,0.4
//! pp,0.5
//! t0_signal,0.0358
//! t0_decoy,0.09098
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::decoy_bounds::{ObservedTallies, Selection};

use super::ConfigError;

const COUNT_KEYS: [&str; 4] = ["vacuum", "decoy", "signal", "M"];
const VALUE_KEYS: [&str; 5] = ["p0", "p", "pp", "t0_signal", "t0_decoy"];

pub fn write_tally_csv<W: Write>(tallies: &ObservedTallies, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "count"])?;
    let counts = [tallies.n0, tallies.nd, tallies.ns, tallies.pulses];
    for (key, n) in COUNT_KEYS.iter().zip(counts) {
        w.write_record([key.to_string(), n.to_string()])?;
    }
    let s = tallies.selection;
    let values = [s.p0, s.p, s.pp, tallies.t0_signal, tallies.t0_decoy];
    for (key, v) in VALUE_KEYS.iter().zip(values) {
        w.write_record([key.to_string(), v.to_string()])?;
    }
    w.flush()
}

pub fn read_tally_csv<R: Read>(input: R, origin: &str) -> Result<ObservedTallies, ConfigError> {
    let err = |key: &str, msg: String| ConfigError::new(format!("{origin}:{key}"), msg);
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| err("header", e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "source" || &headers[1] != "count" {
        return Err(err("header", format!("expected `source,count`, found `{}`", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = BTreeMap::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| err("row", e.to_string()))?;
        if rec.len() != 2 {
            return Err(err("row", format!("expected two fields, found {}", rec.len())));
        }
        let key = rec[0].to_string();
        if rows.insert(key.clone(), rec[1].to_string()).is_some() {
            return Err(err(&key, "duplicate row".into()));
        }
    }
    if let Some(extra) = rows.keys().find(|k| !COUNT_KEYS.contains(&k.as_str()) && !VALUE_KEYS.contains(&k.as_str())) {
        return Err(err(extra, "unknown row".into()));
    }
    let count = |key: &str| -> Result<u64, ConfigError> {
        let raw = rows.get(key).ok_or_else(|| err(key, "missing row".into()))?;
        raw.parse::<u64>().map_err(|e| err(key, format!("`{raw}` is not a non-negative integer: {e}")))
    };
    let value = |key: &str| -> Result<f64, ConfigError> {
        let raw = rows.get(key).ok_or_else(|| err(key, "missing row".into()))?;
        if raw.contains('%') {
            return Err(err(key, format!("`{raw}`: percent signs are not accepted, write a plain decimal")));
        }
        raw.parse::<f64>().map_err(|e| err(key, format!("`{raw}` is not a number: {e}")))
    };
    let selection = Selection::new(value("p0")?, value("p")?, value("pp")?)
        .map_err(|e| err("p0", e.to_string()))?;
    let tallies = ObservedTallies {
        pulses: count("M")?,
        selection,
        n0: count("vacuum")?,
        nd: count("decoy")?,
        ns: count("signal")?,
        t0_signal: value("t0_signal")?,
        t0_decoy: value("t0_decoy")?,
    };
    tallies.validate().map_err(|e| err("tallies", e.to_string()))?;
    Ok(tallies)
}
