//! Request parsing and response encoding.

use axum::http::StatusCode;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{Map, Value};
use splatloop::imaging::{decode_depth, decode_png};
use splatloop::{DepthMap, ImageRGB, Intrinsics, PipelineConfig, Pose};

use crate::error::ApiError;

pub struct CreateRequest {
    pub image: ImageRGB,
    pub depth: DepthMap,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    pub config: PipelineConfig,
}

pub struct StepRequest {
    pub pose: Pose,
    pub prompt: String,
}

fn object(body: &[u8]) -> Result<Map<String, Value>, ApiError> {
    match serde_json::from_slice::<Value>(body) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(ApiError::field("body", "expected a JSON object")),
        Err(e) => Err(ApiError::field("body", format!("invalid JSON: {e}"))),
    }
}

fn base64_field(map: &Map<String, Value>, field: &str) -> Result<Vec<u8>, ApiError> {
    let text = map.get(field).ok_or_else(|| ApiError::missing(field))?;
    let text = text.as_str().ok_or_else(|| ApiError::field(field, "expected a base64 string"))?;
    B64.decode(text.trim()).map_err(|e| ApiError::field(field, format!("invalid base64: {e}")))
}

pub fn pose_value(value: Option<&Value>) -> Result<Pose, ApiError> {
    let value = value.ok_or_else(|| ApiError::missing("pose"))?;
    let items = value.as_array().ok_or_else(|| ApiError::field("pose", "expected an array of 12 numbers"))?;
    let nums: Option<Vec<f64>> = items.iter().map(Value::as_f64).collect();
    let nums = nums.ok_or_else(|| ApiError::field("pose", "expected an array of 12 numbers"))?;
    pose_numbers(&nums)
}

fn pose_numbers(nums: &[f64]) -> Result<Pose, ApiError> {
    if nums.len() != 12 {
        return Err(ApiError::field("pose", format!("expected 12 numbers, got {}", nums.len())));
    }
    Pose::from_row_major(nums).map_err(|e| ApiError::field("pose", e.to_string()))
}

/// Query form: `1,0,0,0,0,1,0,0,0,0,1,0`, optionally bracketed.
pub fn pose_query(text: Option<&str>) -> Result<Pose, ApiError> {
    let text = text.ok_or_else(|| ApiError::missing("pose"))?;
    let inner = text.trim().trim_start_matches('[').trim_end_matches(']');
    let nums: Result<Vec<f64>, _> = inner.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let nums = nums.map_err(|e| ApiError::field("pose", format!("expected comma-separated numbers: {e}")))?;
    pose_numbers(&nums)
}

/// Width and height from a PNG IHDR, read before inflating anything.
fn png_dims(bytes: &[u8]) -> Option<(u32, u32)> {
    const SIG: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];
    if bytes.len() < 24 || bytes[..8] != SIG || &bytes[12..16] != b"IHDR" {
        return None;
    }
    let be = |i: usize| u32::from_be_bytes([bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]]);
    Some((be(16), be(20)))
}

fn check_pixels(field: &str, w: u32, h: u32, max: u64) -> Result<(), ApiError> {
    if w as u64 * h as u64 > max {
        return Err(ApiError::status(StatusCode::PAYLOAD_TOO_LARGE, format!("{field} is {w}x{h}, above the {max}-pixel limit")));
    }
    Ok(())
}

pub fn parse_create(body: &[u8], max_pixels: u64) -> Result<CreateRequest, ApiError> {
    let map = object(body)?;

    let png = base64_field(&map, "image")?;
    let (w, h) = png_dims(&png).ok_or_else(|| ApiError::field("image", "not a PNG"))?;
    check_pixels("image", w, h, max_pixels)?;
    let image = decode_png(&png).map_err(|e| ApiError::field("image", e.to_string()))?;

    let pfm = base64_field(&map, "depth")?;
    let depth = decode_depth(&pfm).map_err(|e| ApiError::field("depth", e.to_string()))?;
    check_pixels("depth", depth.width(), depth.height(), max_pixels)?;
    if (depth.width(), depth.height()) != (image.width(), image.height()) {
        return Err(ApiError::field(
            "depth",
            format!("depth is {}x{} but the image is {}x{}", depth.width(), depth.height(), image.width(), image.height()),
        ));
    }
    if let Some(i) = depth.data().iter().position(|d| !(d.is_finite() && *d > 0.0)) {
        let (x, y) = (i as u32 % depth.width(), i as u32 / depth.width());
        return Err(ApiError::field("depth", format!("depth must be positive and finite everywhere; pixel ({x}, {y}) is not")));
    }

    let pose = pose_value(map.get("pose"))?;

    let intr = map.get("intrinsics").ok_or_else(|| ApiError::missing("intrinsics"))?;
    let intrinsics: Intrinsics = serde_json::from_value(intr.clone()).map_err(|e| ApiError::field("intrinsics", e.to_string()))?;
    intrinsics.validate().map_err(|e| ApiError::field("intrinsics", e.to_string()))?;
    if (intrinsics.width, intrinsics.height) != (image.width(), image.height()) {
        return Err(ApiError::field(
            "intrinsics",
            format!("intrinsics are {}x{} but the image is {}x{}", intrinsics.width, intrinsics.height, image.width(), image.height()),
        ));
    }

    let config = match map.get("config") {
        None | Some(Value::Null) => PipelineConfig::default(),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| ApiError::field("config", e.to_string()))?,
    };
    config.validate().map_err(|e| ApiError::field("config", e.to_string()))?;

    Ok(CreateRequest { image, depth, pose, intrinsics, config })
}

pub fn parse_step(body: &[u8]) -> Result<StepRequest, ApiError> {
    let map = object(body)?;
    let pose = pose_value(map.get("pose"))?;
    let prompt = match map.get("prompt") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(ApiError::field("prompt", "expected a string")),
    };
    Ok(StepRequest { pose, prompt })
}

/// One part of a `multipart/mixed` body.
pub struct Part<'a> {
    pub name: &'a str,
    pub filename: &'a str,
    pub content_type: &'a str,
    pub bytes: &'a [u8],
}

/// Encodes `parts` and returns `(content_type, body)`. The boundary is
/// extended until no part contains it.
pub fn multipart(parts: &[Part<'_>]) -> (String, Vec<u8>) {
    let mut boundary = String::from("splatloop-part");
    let mut n = 0u32;
    while parts.iter().any(|p| contains(p.bytes, boundary.as_bytes())) {
        n += 1;
        boundary = format!("splatloop-part-{n:08x}");
    }
    let mut body = Vec::new();
    for p in parts {
        body.extend_from_slice(format!("--{boundary}\r\n").as_bytes());
        body.extend_from_slice(format!("Content-Type: {}\r\n", p.content_type).as_bytes());
        body.extend_from_slice(format!("Content-Disposition: attachment; name=\"{}\"; filename=\"{}\"\r\n", p.name, p.filename).as_bytes());
        body.extend_from_slice(format!("Content-Length: {}\r\n\r\n", p.bytes.len()).as_bytes());
        body.extend_from_slice(p.bytes);
        body.extend_from_slice(b"\r\n");
    }
    body.extend_from_slice(format!("--{boundary}--\r\n").as_bytes());
    (format!("multipart/mixed; boundary={boundary}"), body)
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    hay.windows(needle.len()).any(|w| w == needle)
}
