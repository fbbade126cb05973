//! On-disk event files and dataset manifests.
//!
//! Event file (all little-endian):
//!
//! | offset | size | field                     |
//! |--------|------|---------------------------|
//! | 0      | 4    | magic `SSEV`              |
//! | 4      | 2    | version (1)               |
//! | 6      | 2    | sensor width              |
//! | 8      | 2    | sensor height             |
//! | 10     | 2    | reserved, zero            |
//! | 12     | 4    | event count N             |
//! | 16     | 9·N  | records `u32 t, u16 x, u16 y, u8 p` |
//!
//! A manifest is a text file with one `<relative path> <label>` line per stream.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Event, EventStream};
use crate::error::{Error, Result};

pub const EVENT_MAGIC: [u8; 4] = *b"SSEV";
pub const EVENT_VERSION: u16 = 1;
const HEADER_LEN: usize = 16;
const RECORD_LEN: usize = 9;

pub fn encode_events(stream: &EventStream) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.events.len());
    buf.extend_from_slice(&EVENT_MAGIC);
    buf.extend_from_slice(&EVENT_VERSION.to_le_bytes());
    buf.extend_from_slice(&stream.width.to_le_bytes());
    buf.extend_from_slice(&stream.height.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(stream.events.len() as u32).to_le_bytes());
    for e in &stream.events {
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.push(e.p);
    }
    buf
}

pub fn decode_events(bytes: &[u8], label: usize) -> Result<EventStream> {
    let bad = |msg: String| Error::format("event file", msg);
    if bytes.len() < HEADER_LEN || bytes[..4] != EVENT_MAGIC {
        return Err(bad("missing SSEV header".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let version = u16_at(4);
    if version != EVENT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let (width, height) = (u16_at(6), u16_at(8));
    let count = u32_at(12) as usize;
    if bytes.len() != HEADER_LEN + count * RECORD_LEN {
        return Err(bad(format!(
            "{count} records declared but {} payload bytes present",
            bytes.len() - HEADER_LEN
        )));
    }
    let events = (0..count)
        .map(|i| {
            let o = HEADER_LEN + i * RECORD_LEN;
            Event {
                t: u32_at(o),
                x: u16_at(o + 4),
                y: u16_at(o + 6),
                p: bytes[o + 8],
            }
        })
        .collect();
    let stream = EventStream {
        events,
        width,
        height,
        label,
    };
    stream.validate()?;
    Ok(stream)
}

pub fn write_events(path: &Path, stream: &EventStream) -> Result<()> {
    fs::write(path, encode_events(stream)).map_err(|e| Error::io(path, e))
}

/// Read an event file; the label is not stored in the file and comes from the caller.
pub fn read_events(path: &Path, label: usize) -> Result<EventStream> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_events(&bytes, label)
}

/// Parse `t,x,y,p` lines. A non-numeric first line is treated as a header.
/// Events are sorted by timestamp (stable) after parsing.
pub fn read_csv_events(text: &str, width: u16, height: u16, label: usize) -> Result<EventStream> {
    let mut events = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = (fields.len() == 4)
            .then(|| {
                Some(Event {
                    t: fields[0].parse().ok()?,
                    x: fields[1].parse().ok()?,
                    y: fields[2].parse().ok()?,
                    p: fields[3].parse().ok()?,
                })
            })
            .flatten();
        match parsed {
            Some(e) => events.push(e),
            None if n == 0 => continue,
            None => return Err(Error::format("csv events", format!("line {}: `{line}`", n + 1))),
        }
    }
    events.sort_by_key(|e| e.t);
    let stream = EventStream {
        events,
        width,
        height,
        label,
    };
    stream.validate()?;
    Ok(stream)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let text: String = entries
        .iter()
        .map(|e| format!("{} {}\n", e.path.display(), e.label))
        .collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Entries with paths resolved against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let (file, label) = line
                .trim()
                .rsplit_once(char::is_whitespace)
                .ok_or_else(|| Error::format("manifest", format!("line {}: `{line}`", n + 1)))?;
            let label = label
                .parse()
                .map_err(|_| Error::format("manifest", format!("line {}: bad label `{label}`", n + 1)))?;
            Ok(ManifestEntry {
                path: base.join(file.trim()),
                label,
            })
        })
        .collect()
}
