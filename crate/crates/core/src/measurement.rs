//! Probe records and replicate collapsing.

use std::collections::BTreeMap;
use std::io::Read;
use std::net::Ipv4Addr;

use serde::Serialize;

use crate::error::{Error, Result};

pub const MEASUREMENT_HEADER: [&str; 5] =
    ["source_id", "destination_ip", "rtt_ms", "probe_index", "complete"];

/// One probe result from a source node to a destination IP.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementRecord {
    pub source_id: String,
    pub destination_ip: Ipv4Addr,
    /// Round-trip time in ms. Present and positive for complete probes.
    pub rtt_ms: Option<f64>,
    pub probe_index: u8,
    pub complete: bool,
}

impl MeasurementRecord {
    pub fn complete(source_id: &str, destination_ip: Ipv4Addr, rtt_ms: f64, probe_index: u8) -> Self {
        Self {
            source_id: source_id.to_string(),
            destination_ip,
            rtt_ms: Some(rtt_ms),
            probe_index,
            complete: true,
        }
    }

    pub fn incomplete(source_id: &str, destination_ip: Ipv4Addr, probe_index: u8) -> Self {
        Self {
            source_id: source_id.to_string(),
            destination_ip,
            rtt_ms: None,
            probe_index,
            complete: false,
        }
    }
}

/// A row that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedRow {
    /// 1-based line number in the input, counting the header.
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedMeasurements {
    pub records: Vec<MeasurementRecord>,
    pub rejects: Vec<RejectedRow>,
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<MeasurementRecord, String> {
    if row.len() != MEASUREMENT_HEADER.len() {
        return Err(format!("expected 5 fields, found {}", row.len()));
    }
    let source_id = row[0].to_string();
    if source_id.is_empty() {
        return Err("empty source_id".into());
    }
    let destination_ip: Ipv4Addr = row[1]
        .parse()
        .map_err(|_| format!("invalid IPv4 address {:?}", &row[1]))?;
    let probe_index: u8 = row[3]
        .parse()
        .map_err(|_| format!("invalid probe index {:?}", &row[3]))?;
    if !(1..=3).contains(&probe_index) {
        return Err(format!("probe index {probe_index} outside 1..=3"));
    }
    let complete = match row[4].to_ascii_lowercase().as_str() {
        "true" | "1" => true,
        "false" | "0" => false,
        other => return Err(format!("invalid complete flag {other:?}")),
    };
    // Some exporters write a Unicode minus sign.
    let rtt_text = row[2].replace('\u{2212}', "-");
    let rtt_ms = if rtt_text.is_empty() {
        None
    } else {
        let v: f64 = rtt_text
            .parse()
            .map_err(|_| format!("invalid RTT {:?}", &row[2]))?;
        if !v.is_finite() {
            return Err("non-finite RTT".into());
        }
        Some(v)
    };
    if complete {
        match rtt_ms {
            None => return Err("missing RTT on complete probe".into()),
            Some(v) if v <= 0.0 => return Err("non-positive RTT".into()),
            _ => {}
        }
    }
    Ok(MeasurementRecord {
        source_id,
        destination_ip,
        rtt_ms,
        probe_index,
        complete,
    })
}

/// Reads a measurements CSV.
///
/// Malformed rows are collected in `rejects` with a reason.
pub fn parse_measurements<R: Read>(reader: R) -> Result<ParsedMeasurements> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(MEASUREMENT_HEADER.iter().copied()) {
        return Err(Error::Format(format!(
            "expected header {:?}, found {:?}",
            MEASUREMENT_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut parsed = ParsedMeasurements::default();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&row) {
            Ok(record) => parsed.records.push(record),
            Err(reason) => parsed.rejects.push(RejectedRow { line, reason }),
        }
    }
    Ok(parsed)
}

pub fn write_measurements<W: std::io::Write>(writer: W, records: &[MeasurementRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(MEASUREMENT_HEADER)?;
    for r in records {
        wtr.write_record([
            r.source_id.clone(),
            r.destination_ip.to_string(),
            r.rtt_ms.map(|v| v.to_string()).unwrap_or_default(),
            r.probe_index.to_string(),
            r.complete.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Keeps the minimum-RTT complete replicate for each (source, destination)
/// pair. Pairs without any complete replicate are dropped.
///
/// Output is ordered by source id, then destination address.
pub fn collapse_replicates(records: &[MeasurementRecord]) -> Vec<MeasurementRecord> {
    let mut best: BTreeMap<(&str, Ipv4Addr), &MeasurementRecord> = BTreeMap::new();
    for record in records {
        let Some(rtt) = record.rtt_ms.filter(|_| record.complete) else {
            continue;
        };
        best.entry((record.source_id.as_str(), record.destination_ip))
            .and_modify(|kept| {
                if rtt < kept.rtt_ms.unwrap_or(f64::INFINITY) {
                    *kept = record;
                }
            })
            .or_insert(record);
    }
    best.into_values().cloned().collect()
}
