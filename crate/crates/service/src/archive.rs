//! Self-contained session archives.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "MODAVGS\0"
//! version  u32      1
//! hlen     u64      length of the JSON header
//! header   hlen     {"id", "created_at", "nu", "config", "csv"}
//! log_mlr  2^nu f64
//! log_po   2^nu f64
//! ```
//!
//! Scan values are raw IEEE-754 bits, so a reloaded session answers every
//! query bit-for-bit like the original.

use crate::error::ApiError;
use crate::session::{session_id, Session, SessionConfig};
use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 8] = b"MODAVGS\0";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    id: String,
    created_at: u64,
    nu: usize,
    config: SessionConfig,
    csv: String,
}

pub fn encode(s: &Session) -> Vec<u8> {
    let header = Header {
        id: s.id.clone(),
        created_at: s.created_at,
        nu: s.analysis.nu(),
        config: s.config.clone(),
        csv: s.csv.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let scan = &s.analysis.scan;
    let mut out = Vec::with_capacity(20 + json.len() + 16 * scan.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in scan.log_mlr.iter().chain(&scan.log_po) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8], ApiError> {
    if buf.len() < n {
        return Err(ApiError::archive("truncated archive"));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

fn floats(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
}

pub fn decode(bytes: &[u8]) -> Result<Session, ApiError> {
    let mut buf = bytes;
    if take(&mut buf, 8)? != MAGIC {
        return Err(ApiError::archive("not a session archive"));
    }
    let version = u32::from_le_bytes(take(&mut buf, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(ApiError::archive(format!("unsupported archive version {version}")));
    }
    let hlen = u64::from_le_bytes(take(&mut buf, 8)?.try_into().unwrap());
    let hlen = usize::try_from(hlen).map_err(|_| ApiError::archive("header too large"))?;
    let header: Header =
        serde_json::from_slice(take(&mut buf, hlen)?).map_err(|e| ApiError::archive(format!("bad header: {e}")))?;
    if header.nu > 62 {
        return Err(ApiError::archive("variable count out of range"));
    }
    let models = 1usize << header.nu;
    if buf.len() != 16 * models {
        return Err(ApiError::archive(format!("expected {} scan bytes, found {}", 16 * models, buf.len())));
    }
    let log_mlr = floats(take(&mut buf, 8 * models)?);
    let log_po = floats(buf);
    if session_id(&header.csv, &header.config) != header.id {
        return Err(ApiError::archive("content hash does not match the archived data"));
    }
    let s = Session::restore(header.csv, header.config, header.created_at, log_mlr, log_po)?;
    if s.analysis.nu() != header.nu {
        return Err(ApiError::archive("variable count does not match the data"));
    }
    Ok(s)
}
