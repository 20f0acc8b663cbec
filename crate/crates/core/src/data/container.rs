//! Flat binary window container (`.actw`).
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic      4 bytes  "ACTW"
//! version    u16      1
//! channels   u16
//! length     u32      samples per channel
//! count      u64      number of windows
//! per channel: mean f64, std f64, passthrough u8
//! index, one entry per window:
//!     id_len u16, id bytes (UTF-8), labels [u8; 5], split u8
//! data: count * channels * length f64, window-major, channel-major within a window
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::preprocess::Normalization;
use super::window::{Labels, Split, Window};
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"ACTW";
pub const CONTAINER_VERSION: u16 = 1;

fn format_err(message: impl Into<String>) -> Error {
    Error::Format {
        what: "window container",
        message: message.into(),
    }
}

pub fn write_windows_to<W: Write>(
    mut out: W,
    windows: &[Window],
    normalization: &Normalization,
) -> Result<()> {
    let (channels, length) = windows
        .first()
        .map(|w| (w.channels, w.length()))
        .unwrap_or((normalization.mean.len(), 0));
    if windows
        .iter()
        .any(|w| w.channels != channels || w.length() != length)
    {
        return Err(format_err("windows differ in shape"));
    }
    if normalization.mean.len() != channels
        || normalization.std.len() != channels
        || normalization.passthrough.len() != channels
    {
        return Err(format_err(
            "normalization statistics do not match channel count",
        ));
    }
    let io = |e: std::io::Error| format_err(e.to_string());
    out.write_all(CONTAINER_MAGIC).map_err(io)?;
    out.write_u16::<LE>(CONTAINER_VERSION).map_err(io)?;
    out.write_u16::<LE>(channels as u16).map_err(io)?;
    out.write_u32::<LE>(length as u32).map_err(io)?;
    out.write_u64::<LE>(windows.len() as u64).map_err(io)?;
    for c in 0..channels {
        out.write_f64::<LE>(normalization.mean[c]).map_err(io)?;
        out.write_f64::<LE>(normalization.std[c]).map_err(io)?;
        out.write_u8(normalization.passthrough[c] as u8)
            .map_err(io)?;
    }
    for w in windows {
        let id = w.participant_id.as_bytes();
        if id.len() > u16::MAX as usize {
            return Err(format_err("participant id too long"));
        }
        out.write_u16::<LE>(id.len() as u16).map_err(io)?;
        out.write_all(id).map_err(io)?;
        out.write_all(&w.labels.0).map_err(io)?;
        out.write_u8(w.split.code()).map_err(io)?;
    }
    for w in windows {
        for v in &w.values {
            out.write_f64::<LE>(*v).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

pub fn read_windows_from<R: Read>(mut input: R) -> Result<(Vec<Window>, Normalization)> {
    let io = |e: std::io::Error| format_err(e.to_string());
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic).map_err(io)?;
    if &magic != CONTAINER_MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = input.read_u16::<LE>().map_err(io)?;
    if version != CONTAINER_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let channels = input.read_u16::<LE>().map_err(io)? as usize;
    let length = input.read_u32::<LE>().map_err(io)? as usize;
    let count = input.read_u64::<LE>().map_err(io)? as usize;
    let mut norm = Normalization {
        mean: Vec::with_capacity(channels),
        std: Vec::with_capacity(channels),
        passthrough: Vec::with_capacity(channels),
    };
    for _ in 0..channels {
        norm.mean.push(input.read_f64::<LE>().map_err(io)?);
        norm.std.push(input.read_f64::<LE>().map_err(io)?);
        norm.passthrough.push(input.read_u8().map_err(io)? != 0);
    }
    let mut index = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let n = input.read_u16::<LE>().map_err(io)? as usize;
        let mut id = vec![0u8; n];
        input.read_exact(&mut id).map_err(io)?;
        let id = String::from_utf8(id).map_err(|_| format_err("participant id is not UTF-8"))?;
        let mut labels = [0u8; 5];
        input.read_exact(&mut labels).map_err(io)?;
        let labels = Labels(labels);
        labels.validate().map_err(format_err)?;
        let split = Split::from_code(input.read_u8().map_err(io)?)
            .ok_or_else(|| format_err("bad split code"))?;
        index.push((id, labels, split));
    }
    let mut windows = Vec::with_capacity(index.len());
    for (id, labels, split) in index {
        let mut values = vec![0.0; channels * length];
        input.read_f64_into::<LE>(&mut values).map_err(io)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(format_err(format!("non-finite value in window of {id}")));
        }
        windows.push(Window::new(id, channels, values, labels, split)?);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(io)? != 0 {
        return Err(format_err("trailing bytes"));
    }
    Ok((windows, norm))
}

pub fn write_windows(path: &Path, windows: &[Window], normalization: &Normalization) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_windows_to(BufWriter::new(file), windows, normalization)
}

pub fn read_windows(path: &Path) -> Result<(Vec<Window>, Normalization)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_windows_from(BufReader::new(file))
}
