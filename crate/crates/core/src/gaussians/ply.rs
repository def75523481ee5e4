//! Binary PLY storage for Gaussian sets.

use std::path::Path;

use thiserror::Error;

use super::{Gaussian, GaussianSet};

const FLOAT_PROPS: [&str; 12] = ["x", "y", "z", "scale", "qw", "qx", "qy", "qz", "opacity", "red", "green", "blue"];
const STEP_PROP: &str = "source_step";

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("PLY header: {0}")]
    Header(String),
    #[error("PLY schema: missing vertex property `{0}`")]
    MissingProperty(String),
    #[error("PLY body: {0}")]
    Body(String),
    #[error("PLY vertex {index}: {reason}")]
    InvalidGaussian { index: usize, reason: &'static str },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let raw: [u8; $n] = b[..$n].try_into().unwrap();
                (if little { <$t>::from_le_bytes(raw) } else { <$t>::from_be_bytes(raw) }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }

    fn read_f32(self, b: &[u8], little: bool) -> f32 {
        if self == Scalar::F32 {
            let raw: [u8; 4] = b[..4].try_into().unwrap();
            if little {
                f32::from_le_bytes(raw)
            } else {
                f32::from_be_bytes(raw)
            }
        } else {
            self.read(b, little) as f32
        }
    }
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

impl Element {
    fn stride(&self) -> usize {
        self.props.iter().map(|(_, t)| t.size()).sum()
    }
}

pub fn encode_ply(set: &GaussianSet) -> Result<Vec<u8>, PlyError> {
    let mut out = String::from("ply\nformat binary_little_endian 1.0\n");
    out.push_str(&format!("element vertex {}\n", set.len()));
    for p in FLOAT_PROPS {
        out.push_str(&format!("property float {p}\n"));
    }
    out.push_str(&format!("property int {STEP_PROP}\nend_header\n"));
    let mut bytes = out.into_bytes();
    bytes.reserve(set.len() * 52);
    for (i, g) in set.iter().enumerate() {
        let step = i32::try_from(g.source_step)
            .map_err(|_| PlyError::InvalidGaussian { index: i, reason: "source_step exceeds the PLY int range" })?;
        let floats = [
            g.center[0],
            g.center[1],
            g.center[2],
            g.scale,
            g.rotation[0],
            g.rotation[1],
            g.rotation[2],
            g.rotation[3],
            g.opacity,
            g.color[0],
            g.color[1],
            g.color[2],
        ];
        for v in floats {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&step.to_le_bytes());
    }
    Ok(bytes)
}

fn parse_header(bytes: &[u8]) -> Result<(Vec<Element>, bool, usize), PlyError> {
    const END: &[u8] = b"end_header\n";
    let end = bytes.windows(END.len()).position(|w| w == END).ok_or_else(|| PlyError::Header("no end_header line".into()))?;
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| PlyError::Header("header is not UTF-8".into()))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(PlyError::Header("missing `ply` magic".into()));
    }
    let mut little = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _] => {
                little = Some(match *fmt {
                    "binary_little_endian" => true,
                    "binary_big_endian" => false,
                    other => return Err(PlyError::Header(format!("unsupported format `{other}`"))),
                })
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| PlyError::Header(format!("bad element count `{count}`")))?;
                elements.push(Element { name: name.to_string(), count, props: Vec::new() });
            }
            ["property", "list", ..] => return Err(PlyError::Header("list properties are not supported".into())),
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| PlyError::Header(format!("unknown property type `{ty}`")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| PlyError::Header("property before any element".into()))?
                    .props
                    .push((name.to_string(), ty));
            }
            _ => return Err(PlyError::Header(format!("unrecognized line `{line}`"))),
        }
    }
    let little = little.ok_or_else(|| PlyError::Header("missing format line".into()))?;
    Ok((elements, little, end + END.len()))
}

pub fn decode_ply(bytes: &[u8]) -> Result<GaussianSet, PlyError> {
    let (elements, little, mut pos) = parse_header(bytes)?;
    for e in &elements {
        if e.name == "vertex" {
            break;
        }
        pos = e
            .count
            .checked_mul(e.stride())
            .and_then(|n| n.checked_add(pos))
            .ok_or_else(|| PlyError::Body("element size overflows".into()))?;
    }
    let vertex = elements.iter().find(|e| e.name == "vertex").ok_or_else(|| PlyError::Header("no vertex element".into()))?;
    let locate = |name: &str| -> Result<(usize, Scalar), PlyError> {
        let mut offset = 0;
        for (n, t) in &vertex.props {
            if n == name {
                return Ok((offset, *t));
            }
            offset += t.size();
        }
        Err(PlyError::MissingProperty(name.to_string()))
    };
    let mut floats = Vec::with_capacity(FLOAT_PROPS.len());
    for p in FLOAT_PROPS {
        floats.push(locate(p)?);
    }
    let step = locate(STEP_PROP)?;
    let stride = vertex.stride();
    let body_len = vertex.count.checked_mul(stride).ok_or_else(|| PlyError::Body("vertex count overflows".into()))?;
    let body = bytes
        .get(pos..)
        .and_then(|b| b.get(..body_len))
        .ok_or_else(|| PlyError::Body(format!("expected {} vertices of {stride} bytes, file is truncated", vertex.count)))?;
    let mut set = GaussianSet::with_capacity(vertex.count);
    for (index, rec) in body.chunks_exact(stride.max(1)).take(vertex.count).enumerate() {
        let f = |k: usize| floats[k].1.read_f32(&rec[floats[k].0..], little);
        let s = step.1.read(&rec[step.0..], little);
        if !(s >= 0.0 && s <= u32::MAX as f64 && s.fract() == 0.0) {
            return Err(PlyError::InvalidGaussian { index, reason: "source_step must be a non-negative integer" });
        }
        let g = Gaussian {
            center: [f(0), f(1), f(2)],
            scale: f(3),
            rotation: [f(4), f(5), f(6), f(7)],
            opacity: f(8),
            color: [f(9), f(10), f(11)],
            source_step: s as u32,
        };
        g.validate().map_err(|reason| PlyError::InvalidGaussian { index, reason })?;
        set.push_unchecked(g);
    }
    Ok(set)
}

pub fn write_ply(path: impl AsRef<Path>, set: &GaussianSet) -> Result<(), PlyError> {
    std::fs::write(path, encode_ply(set)?)?;
    Ok(())
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<GaussianSet, PlyError> {
    decode_ply(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, seed: u64) -> GaussianSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GaussianSet::from_gaussians((0..n).map(|_| {
            let q: [f32; 4] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0];
            let n = q.iter().map(|v| v * v).sum::<f32>().sqrt();
            Gaussian {
                center: [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)],
                scale: rng.random_range(1e-4..1.0),
                rotation: q.map(|v| v / n),
                opacity: rng.random_range(0.01..=1.0),
                color: [rng.random(), rng.random(), rng.random()],
                source_step: rng.random_range(0..1000),
            }
        }))
        .unwrap()
    }

    #[test]
    fn empty_and_single_round_trip() {
        for set in [GaussianSet::new(), random_set(1, 1)] {
            let bytes = encode_ply(&set).unwrap();
            let back = decode_ply(&bytes).unwrap();
            assert_eq!(back, set);
            assert_eq!(encode_ply(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn ten_thousand_round_trip_bit_exact() {
        let set = random_set(10_000, 2);
        let bytes = encode_ply(&set).unwrap();
        assert_eq!(encode_ply(&decode_ply(&bytes).unwrap()).unwrap(), bytes);
    }

    #[test]
    fn missing_property_is_named() {
        let bytes = encode_ply(&random_set(2, 3)).unwrap();
        let text = String::from_utf8_lossy(&bytes[..bytes.windows(10).position(|w| w == b"end_header").unwrap()]).to_string();
        let body = &bytes[text.len() + "end_header\n".len()..];
        let renamed = text.replace("property float opacity", "property float alpha");
        let mut edited = renamed.into_bytes();
        edited.extend_from_slice(b"end_header\n");
        edited.extend_from_slice(body);
        match decode_ply(&edited) {
            Err(PlyError::MissingProperty(p)) => assert_eq!(p, "opacity"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reordered_and_big_endian_files_decode() {
        let g = random_set(1, 4).get(0);
        let mut bytes = b"ply\nformat binary_big_endian 1.0\nelement vertex 1\nproperty int source_step\n".to_vec();
        for p in FLOAT_PROPS.iter().rev() {
            bytes.extend_from_slice(format!("property float {p}\n").as_bytes());
        }
        bytes.extend_from_slice(b"end_header\n");
        bytes.extend_from_slice(&(g.source_step as i32).to_be_bytes());
        let vals = [
            g.center[0],
            g.center[1],
            g.center[2],
            g.scale,
            g.rotation[0],
            g.rotation[1],
            g.rotation[2],
            g.rotation[3],
            g.opacity,
            g.color[0],
            g.color[1],
            g.color[2],
        ];
        for v in vals.iter().rev() {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        assert_eq!(decode_ply(&bytes).unwrap().get(0), g);
    }

    #[test]
    fn truncated_body_is_an_error() {
        let bytes = encode_ply(&random_set(3, 5)).unwrap();
        assert!(matches!(decode_ply(&bytes[..bytes.len() - 1]), Err(PlyError::Body(_))));
    }

    proptest! {
        #[test]
        fn decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = decode_ply(&bytes);
        }

        #[test]
        fn decoder_survives_corrupted_bodies(pos in 0usize..400, byte in any::<u8>()) {
            let mut bytes = encode_ply(&random_set(3, 6)).unwrap();
            let i = pos % bytes.len();
            bytes[i] = byte;
            let _ = decode_ply(&bytes);
        }
    }
}
