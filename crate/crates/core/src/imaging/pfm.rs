//! Portable float map (PFM) codec.
//!
//! Layout: ASCII header `Pf\n<width> <height>\n<scale>\n` (`PF` for three
//! channels) followed by raw 32-bit floats, bottom row first. A negative
//! scale means little-endian samples; this writer always emits `-1.0`.

use std::path::Path;

use super::{DepthMap, ImagingError};

/// Decoded PFM samples in top-row-first order.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: u32,
    pub height: u32,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Encodes a top-row-first raster with 1 or 3 channels.
pub fn encode_pfm(width: u32, height: u32, channels: usize, data: &[f32]) -> Result<Vec<u8>, ImagingError> {
    let tag = match channels {
        1 => "Pf",
        3 => "PF",
        n => return Err(ImagingError::Size(format!("PFM supports 1 or 3 channels, got {n}"))),
    };
    let stride = width as usize * channels;
    if data.len() != stride * height as usize {
        return Err(ImagingError::Size(format!(
            "{width}x{height}x{channels} PFM needs {} samples, got {}",
            stride * height as usize,
            data.len()
        )));
    }
    let mut out = format!("{tag}\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(data.len() * 4);
    for row in (0..height as usize).rev() {
        for v in &data[row * stride..(row + 1) * stride] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Reads one whitespace-delimited header token starting at `*pos`.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<(&'a str, usize), ImagingError> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(ImagingError::parse(start, "truncated PFM header"));
    }
    let s = std::str::from_utf8(&bytes[start..*pos]).map_err(|_| ImagingError::parse(start, "non-ASCII PFM header"))?;
    Ok((s, start))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<PfmImage, ImagingError> {
    let mut pos = 0;
    let (tag, _) = token(bytes, &mut pos)?;
    let channels = match tag {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(ImagingError::parse(0, format!("bad PFM magic {other:?}"))),
    };
    let (w, w_at) = token(bytes, &mut pos)?;
    let width: u32 = w.parse().map_err(|_| ImagingError::parse(w_at, format!("bad width {w:?}")))?;
    let (h, h_at) = token(bytes, &mut pos)?;
    let height: u32 = h.parse().map_err(|_| ImagingError::parse(h_at, format!("bad height {h:?}")))?;
    let (s, s_at) = token(bytes, &mut pos)?;
    let scale: f32 = s.parse().map_err(|_| ImagingError::parse(s_at, format!("bad scale {s:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(ImagingError::parse(s_at, "scale must be nonzero and finite"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(ImagingError::parse(pos, "missing whitespace after PFM header"));
    }
    pos += 1;
    if width == 0 || height == 0 {
        return Err(ImagingError::parse(w_at, "zero-sized PFM"));
    }
    let stride = width as usize * channels;
    let count =
        (stride as u64).checked_mul(height as u64).filter(|&c| c.saturating_mul(4) == (bytes.len() - pos) as u64).ok_or_else(|| {
            ImagingError::parse(pos, format!("expected {width}x{height}x{channels} samples, found {} bytes", bytes.len() - pos))
        })? as usize;
    let little = scale < 0.0;
    let mut data = vec![0.0f32; count];
    for (i, chunk) in bytes[pos..].chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().unwrap();
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let file_row = i / stride;
        let col = i % stride;
        data[(height as usize - 1 - file_row) * stride + col] = v;
    }
    Ok(PfmImage { width, height, channels, data })
}

pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    encode_pfm(depth.width(), depth.height(), 1, depth.data()).expect("depth maps are single-channel and sized")
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthMap, ImagingError> {
    let pfm = decode_pfm(bytes)?;
    if pfm.channels != 1 {
        return Err(ImagingError::parse(0, "depth maps must be single-channel (Pf)"));
    }
    DepthMap::new(pfm.width, pfm.height, pfm.data)
}

pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<(), ImagingError> {
    std::fs::write(path, encode_depth(depth))?;
    Ok(())
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap, ImagingError> {
    decode_depth(&std::fs::read(path)?)
}
