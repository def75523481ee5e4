//! Minimal 8-bit PNG reader/writer.
//!
//! Writes truecolor (RGB) or grayscale images with filter type 0. Reads
//! non-interlaced 8-bit grayscale, gray+alpha, RGB and RGBA images with any
//! of the five standard row filters; alpha is discarded. Every decode error
//! carries the byte offset of the offending chunk or field.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;

use super::{quantize_u8, ImageRGB, ImagingError, Mask};

const SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', b'\r', b'\n', 0x1a, b'\n'];
/// Upper bound on decoded pixels, keeps hostile headers from allocating wildly.
const MAX_PIXELS: u64 = 1 << 28;

fn write_chunk(out: &mut Vec<u8>, kind: &[u8; 4], data: &[u8]) {
    out.extend_from_slice(&(data.len() as u32).to_be_bytes());
    out.extend_from_slice(kind);
    out.extend_from_slice(data);
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(kind);
    hasher.update(data);
    out.extend_from_slice(&hasher.finalize().to_be_bytes());
}

fn encode_raw(width: u32, height: u32, color_type: u8, channels: usize, pixels: &[u8]) -> Vec<u8> {
    let mut ihdr = Vec::with_capacity(13);
    ihdr.extend_from_slice(&width.to_be_bytes());
    ihdr.extend_from_slice(&height.to_be_bytes());
    ihdr.extend_from_slice(&[8, color_type, 0, 0, 0]);

    let stride = width as usize * channels;
    let mut raw = Vec::with_capacity((stride + 1) * height as usize);
    for row in pixels.chunks_exact(stride.max(1)).take(height as usize) {
        raw.push(0);
        raw.extend_from_slice(row);
    }
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&raw).expect("writing to a Vec cannot fail");
    let idat = enc.finish().expect("writing to a Vec cannot fail");

    let mut out = Vec::with_capacity(idat.len() + 64);
    out.extend_from_slice(&SIGNATURE);
    write_chunk(&mut out, b"IHDR", &ihdr);
    write_chunk(&mut out, b"IDAT", &idat);
    write_chunk(&mut out, b"IEND", &[]);
    out
}

/// Encodes an RGB image, quantizing each channel to 8 bits.
pub fn encode_png(img: &ImageRGB) -> Vec<u8> {
    let pixels: Vec<u8> = img.data().iter().map(|&v| quantize_u8(v)).collect();
    encode_raw(img.width(), img.height(), 2, 3, &pixels)
}

/// Encodes a mask as 8-bit grayscale (255 = known).
pub fn encode_png_gray(mask: &Mask) -> Vec<u8> {
    let pixels: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    encode_raw(mask.width(), mask.height(), 0, 1, &pixels)
}

fn paeth(a: u8, b: u8, c: u8) -> u8 {
    let p = a as i16 + b as i16 - c as i16;
    let (pa, pb, pc) = ((p - a as i16).abs(), (p - b as i16).abs(), (p - c as i16).abs());
    if pa <= pb && pa <= pc {
        a
    } else if pb <= pc {
        b
    } else {
        c
    }
}

struct Header {
    width: u32,
    height: u32,
    channels: usize,
}

/// Decodes a PNG into 8-bit samples: `(width, height, channels, samples)`.
fn decode_raw(bytes: &[u8]) -> Result<(Header, Vec<u8>), ImagingError> {
    if bytes.len() < 8 || bytes[..8] != SIGNATURE {
        return Err(ImagingError::parse(0, "missing PNG signature"));
    }
    let mut pos = 8;
    let mut header: Option<(Header, usize)> = None;
    let mut idat = Vec::new();
    let mut idat_offset = None;
    let mut seen_end = false;
    while pos < bytes.len() {
        let chunk_start = pos;
        if bytes.len() - pos < 12 {
            return Err(ImagingError::parse(pos, "truncated chunk header"));
        }
        let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        let kind: [u8; 4] = bytes[pos + 4..pos + 8].try_into().unwrap();
        let data_start = pos + 8;
        let data_end = data_start
            .checked_add(len)
            .filter(|&e| e.checked_add(4).is_some_and(|e4| e4 <= bytes.len()))
            .ok_or_else(|| ImagingError::parse(chunk_start, "chunk length runs past end of file"))?;
        let data = &bytes[data_start..data_end];
        let stored_crc = u32::from_be_bytes(bytes[data_end..data_end + 4].try_into().unwrap());
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&kind);
        hasher.update(data);
        if hasher.finalize() != stored_crc {
            return Err(ImagingError::parse(data_end, format!("CRC mismatch in {} chunk", String::from_utf8_lossy(&kind))));
        }
        match &kind {
            b"IHDR" => {
                if header.is_some() {
                    return Err(ImagingError::parse(chunk_start, "duplicate IHDR"));
                }
                if len != 13 {
                    return Err(ImagingError::parse(chunk_start, "IHDR must be 13 bytes"));
                }
                let width = u32::from_be_bytes(data[0..4].try_into().unwrap());
                let height = u32::from_be_bytes(data[4..8].try_into().unwrap());
                let (depth, color, compression, filter, interlace) = (data[8], data[9], data[10], data[11], data[12]);
                if width == 0 || height == 0 || width as u64 * height as u64 > MAX_PIXELS {
                    return Err(ImagingError::parse(data_start, format!("unsupported dimensions {width}x{height}")));
                }
                if depth != 8 {
                    return Err(ImagingError::parse(data_start + 8, format!("unsupported bit depth {depth}")));
                }
                let channels = match color {
                    0 => 1,
                    2 => 3,
                    4 => 2,
                    6 => 4,
                    other => return Err(ImagingError::parse(data_start + 9, format!("unsupported color type {other}"))),
                };
                if compression != 0 || filter != 0 {
                    return Err(ImagingError::parse(data_start + 10, "unknown compression or filter method"));
                }
                if interlace != 0 {
                    return Err(ImagingError::parse(data_start + 12, "interlaced images are not supported"));
                }
                header = Some((Header { width, height, channels }, chunk_start));
            }
            b"IDAT" => {
                if header.is_none() {
                    return Err(ImagingError::parse(chunk_start, "IDAT before IHDR"));
                }
                idat_offset.get_or_insert(chunk_start);
                idat.extend_from_slice(data);
            }
            b"IEND" => {
                seen_end = true;
                break;
            }
            _ => {
                if kind[0] & 0x20 == 0 && &kind != b"PLTE" {
                    return Err(ImagingError::parse(chunk_start, format!("unknown critical chunk {}", String::from_utf8_lossy(&kind))));
                }
            }
        }
        pos = data_end + 4;
    }
    let (header, _) = header.ok_or_else(|| ImagingError::parse(8, "missing IHDR"))?;
    if !seen_end {
        return Err(ImagingError::parse(bytes.len(), "missing IEND"));
    }
    let idat_offset = idat_offset.ok_or_else(|| ImagingError::parse(pos, "missing IDAT"))?;

    let stride = header.width as usize * header.channels;
    let expected = (stride + 1) * header.height as usize;
    let mut raw = Vec::new();
    ZlibDecoder::new(&idat[..])
        .take(expected as u64 + 1)
        .read_to_end(&mut raw)
        .map_err(|e| ImagingError::parse(idat_offset, format!("corrupt image data: {e}")))?;
    if raw.len() != expected {
        return Err(ImagingError::parse(idat_offset, format!("image data has {} bytes, expected {expected}", raw.len())));
    }

    let bpp = header.channels;
    let mut out = vec![0u8; stride * header.height as usize];
    for y in 0..header.height as usize {
        let filter = raw[y * (stride + 1)];
        let line = &raw[y * (stride + 1) + 1..(y + 1) * (stride + 1)];
        let (prev_rows, cur_rows) = out.split_at_mut(y * stride);
        let prev = if y > 0 { Some(&prev_rows[(y - 1) * stride..]) } else { None };
        let cur = &mut cur_rows[..stride];
        for x in 0..stride {
            let a = if x >= bpp { cur[x - bpp] } else { 0 };
            let b = prev.map_or(0, |p| p[x]);
            let c = if x >= bpp { prev.map_or(0, |p| p[x - bpp]) } else { 0 };
            let predicted = match filter {
                0 => 0,
                1 => a,
                2 => b,
                3 => ((a as u16 + b as u16) / 2) as u8,
                4 => paeth(a, b, c),
                other => {
                    return Err(ImagingError::parse(idat_offset, format!("invalid filter type {other} on row {y}")));
                }
            };
            cur[x] = line[x].wrapping_add(predicted);
        }
    }
    Ok((header, out))
}

/// Decodes any supported PNG into an RGB image.
pub fn decode_png(bytes: &[u8]) -> Result<ImageRGB, ImagingError> {
    let (h, samples) = decode_raw(bytes)?;
    let data: Vec<f32> = samples
        .chunks_exact(h.channels)
        .flat_map(|p| {
            let rgb = match h.channels {
                1 | 2 => [p[0]; 3],
                _ => [p[0], p[1], p[2]],
            };
            rgb.map(|v| v as f32 / 255.0)
        })
        .collect();
    ImageRGB::new(h.width, h.height, data)
}

/// Decodes a PNG mask: a pixel is known when its first channel is nonzero.
pub fn decode_png_mask(bytes: &[u8]) -> Result<Mask, ImagingError> {
    let (h, samples) = decode_raw(bytes)?;
    let data = samples.chunks_exact(h.channels).map(|p| p[0] != 0).collect();
    Mask::new(h.width, h.height, data)
}

pub fn write_image(path: impl AsRef<Path>, img: &ImageRGB) -> Result<(), ImagingError> {
    std::fs::write(path, encode_png(img))?;
    Ok(())
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageRGB, ImagingError> {
    decode_png(&std::fs::read(path)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<(), ImagingError> {
    std::fs::write(path, encode_png_gray(mask))?;
    Ok(())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask, ImagingError> {
    decode_png_mask(&std::fs::read(path)?)
}
