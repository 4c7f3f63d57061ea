//! Chain files: a versioned JSON header line followed by one JSON record per
//! retained draw. Every record ends with a newline, so a missing final
//! newline marks a truncated file.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::atomic_write;
use crate::error::{Error, Result};
use crate::lagselect::SelectionMode;
use crate::sampler::{Chain, Draw, TraceRow};

pub const CHAIN_FORMAT: &str = "bnpwmar-chain";
pub const CHAIN_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChainHeader {
    pub format: String,
    pub version: u32,
    pub lags: usize,
    pub components: usize,
    pub selection_mode: SelectionMode,
    pub seed: u64,
    pub thin: usize,
}

impl ChainHeader {
    pub fn for_chain(chain: &Chain) -> Self {
        Self {
            format: CHAIN_FORMAT.into(),
            version: CHAIN_VERSION,
            lags: chain.lags,
            components: chain.config.components,
            selection_mode: chain.config.selection_mode,
            seed: chain.config.seed,
            thin: chain.config.thin,
        }
    }
}

pub fn encode_chain(header: &ChainHeader, draws: &[Draw]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    serde_json::to_writer(&mut buf, header)?;
    buf.push(b'\n');
    for d in draws {
        serde_json::to_writer(&mut buf, d)?;
        buf.push(b'\n');
    }
    Ok(buf)
}

pub fn write_chain(path: &Path, header: &ChainHeader, draws: &[Draw]) -> Result<()> {
    atomic_write(path, &encode_chain(header, draws)?)
}

pub fn decode_chain<R: BufRead>(mut reader: R) -> Result<(ChainHeader, Vec<Draw>)> {
    let mut line = String::new();
    let corrupt = |record: usize, msg: String| Error::Corrupt { record, msg };
    if reader.read_line(&mut line)? == 0 || !line.ends_with('\n') {
        return Err(corrupt(0, "missing header line".into()));
    }
    let raw: serde_json::Value = serde_json::from_str(&line).map_err(|e| corrupt(0, format!("header: {e}")))?;
    if raw.get("format").and_then(|f| f.as_str()) != Some(CHAIN_FORMAT) {
        return Err(corrupt(0, "header is not a chain header".into()));
    }
    let found = raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != CHAIN_VERSION {
        return Err(Error::Schema {
            found,
            expected: CHAIN_VERSION,
        });
    }
    let header: ChainHeader = serde_json::from_value(raw).map_err(|e| corrupt(0, format!("header: {e}")))?;
    let mut draws = Vec::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let record = draws.len();
        if !line.ends_with('\n') {
            return Err(corrupt(record, "truncated record".into()));
        }
        let d: Draw = serde_json::from_str(&line).map_err(|e| corrupt(record, e.to_string()))?;
        if d.state.lags() != header.lags || d.state.n_components() != header.components {
            return Err(corrupt(record, "record shape disagrees with the header".into()));
        }
        draws.push(d);
    }
    Ok((header, draws))
}

pub fn read_chain(path: &Path) -> Result<(ChainHeader, Vec<Draw>)> {
    decode_chain(BufReader::new(std::fs::File::open(path)?))
}

pub const TRACE_COLUMNS: [&str; 6] = [
    "iteration",
    "loglik",
    "n_occupied",
    "log_omega_last",
    "alpha",
    "n_gamma",
];

/// Whitespace-separated trace table with a header row.
pub fn encode_traces(rows: &[TraceRow]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(rows.len() * 64);
    writeln!(buf, "{}", TRACE_COLUMNS.join(" ")).unwrap();
    for r in rows {
        writeln!(
            buf,
            "{} {:?} {} {:?} {:?} {:?}",
            r.iteration, r.loglik, r.n_occupied, r.log_omega_last, r.alpha, r.n_gamma
        )
        .unwrap();
    }
    buf
}

pub fn decode_traces(text: &str) -> Result<Vec<TraceRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.split_whitespace().eq(TRACE_COLUMNS.iter().copied()) => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "unexpected trace header".into(),
            })
        }
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let bad = |what: &str| Error::Parse {
                line: k + 2,
                msg: format!("bad {what} in trace row"),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != TRACE_COLUMNS.len() {
                return Err(bad("column count"));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(TRACE_COLUMNS[i]));
            Ok(TraceRow {
                iteration: f[0].parse().map_err(|_| bad("iteration"))?,
                loglik: num(1)?,
                n_occupied: f[2].parse().map_err(|_| bad("n_occupied"))?,
                log_omega_last: num(3)?,
                alpha: num(4)?,
                n_gamma: num(5)?,
            })
        })
        .collect()
}

pub fn write_traces(path: &Path, rows: &[TraceRow]) -> Result<()> {
    atomic_write(path, &encode_traces(rows))
}
