//! Binary checkpoint format.
//!
//! ```text
//! "FI2P" | version u32 | config length u32 | config JSON | width u8 |
//! raw little-endian tensors in parameter order (weight, then bias) |
//! FNV-1a 64 of everything before it, u64
//! ```
//! All integers are little-endian.

use std::fs;
use std::path::Path;

use super::{param_layers, ModelConfig, ModelParams, ParamBlock};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FI2P";
pub const CHECKPOINT_VERSION: u32 = 1;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn encode<T: Element>(params: &ModelParams<T>, config: &ModelConfig) -> Result<Vec<u8>> {
    params.check_against(config)?;
    let json = serde_json::to_vec(config)?;
    let mut out = Vec::with_capacity(checkpoint_len(params, json.len()));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.push(T::WIDTH);
    for t in params.tensors() {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

fn checkpoint_len<T: Element>(params: &ModelParams<T>, json_len: usize) -> usize {
    let values: usize = params.tensors().map(Tensor::len).sum();
    4 + 4 + 4 + json_len + 1 + values * T::WIDTH as usize + 8
}

/// Exact size in bytes of the file [`save_checkpoint`] would write.
pub fn checkpoint_bytes<T: Element>(params: &ModelParams<T>, config: &ModelConfig) -> Result<u64> {
    let json = serde_json::to_vec(config)?;
    Ok(checkpoint_len(params, json.len()) as u64)
}

pub fn save_checkpoint<T: Element>(
    params: &ModelParams<T>,
    config: &ModelConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(params, config)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Header<'a> {
    config_json: &'a [u8],
    width: u8,
    body: &'a [u8],
}

fn parse_header(bytes: &[u8]) -> Result<Header<'_>> {
    let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
    if bytes.len() < 4 + 4 + 4 + 1 + 8 {
        return Err(corrupt("file is too short"));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let (content, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if stored != fnv1a(content) {
        return Err(corrupt("checksum mismatch"));
    }
    let version = u32::from_le_bytes(content[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::CorruptCheckpoint(format!(
            "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let json_len = u32::from_le_bytes(content[8..12].try_into().expect("4 bytes")) as usize;
    let json_end = 12usize
        .checked_add(json_len)
        .filter(|&e| e < content.len())
        .ok_or_else(|| corrupt("config length runs past end of file"))?;
    Ok(Header {
        config_json: &content[12..json_end],
        width: content[json_end],
        body: &content[json_end + 1..],
    })
}

/// Element width recorded in a checkpoint, after validating its checksum.
pub fn peek_checkpoint_width(path: impl AsRef<Path>) -> Result<u8> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_header(&bytes)?.width)
}

pub fn load_checkpoint<T: Element>(path: impl AsRef<Path>) -> Result<(ModelParams<T>, ModelConfig)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn decode<T: Element>(bytes: &[u8]) -> Result<(ModelParams<T>, ModelConfig)> {
    let header = parse_header(bytes)?;
    if header.width != T::WIDTH {
        return Err(Error::WidthMismatch {
            expected: T::WIDTH,
            found: header.width,
        });
    }
    let config: ModelConfig = serde_json::from_slice(header.config_json)
        .map_err(|e| Error::CorruptCheckpoint(format!("config: {e}")))?;
    config
        .validate()
        .map_err(|e| Error::CorruptCheckpoint(format!("embedded config: {e}")))?;
    let width = T::WIDTH as usize;
    let mut cursor = header.body;
    let mut take = |shape: Vec<usize>| -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        if cursor.len() < n * width {
            return Err(Error::CorruptCheckpoint("tensor data is truncated".into()));
        }
        let (head, rest) = cursor.split_at(n * width);
        cursor = rest;
        Tensor::new(shape, head.chunks_exact(width).map(T::read_le).collect())
    };
    let mut blocks = Vec::new();
    for (id, spec) in param_layers(&config)? {
        let weight = take(spec.weight_shape().expect("parameterized"))?;
        let bias = spec.bias_shape().map(&mut take).transpose()?;
        blocks.push(ParamBlock { id, weight, bias });
    }
    if !cursor.is_empty() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} unexpected trailing bytes",
            cursor.len()
        )));
    }
    Ok((ModelParams { blocks }, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, forward, Variant};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            image_size: 32,
            channel_plan: vec![4, 4, 4, 8, 8],
            decoder_deconv_channels: vec![4],
            fc_hidden: 8,
            point_count: 4,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn round_trip_is_bitwise_and_size_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        for v in Variant::ALL {
            let c = small().with_variant(v);
            let p: ModelParams<f32> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            save_checkpoint(&p, &c, &path).unwrap();
            let (q, c2) = load_checkpoint::<f32>(&path).unwrap();
            assert_eq!(q, p);
            assert_eq!(c2, c);
            let len = fs::metadata(&path).unwrap().len();
            assert_eq!(len, checkpoint_bytes(&p, &c).unwrap());
            let img = Tensor::from_fn(&[1, 3, 32, 32], |i| (i % 17) as f32 / 17.0);
            let a = forward(&p, &c, &img).unwrap().cloud;
            let b = forward(&q, &c2, &img).unwrap().cloud;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn truncation_and_bit_flips_are_detected() {
        let c = small();
        let p: ModelParams<f64> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let bytes = encode(&p, &c).unwrap();
        for cut in [0, 3, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                decode::<f64>(&bytes[..cut]),
                Err(Error::CorruptCheckpoint(_))
            ));
        }
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 2] ^= 0x10;
        assert!(matches!(decode::<f64>(&flipped), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn version_mismatch() {
        let c = small();
        let p: ModelParams<f64> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut bytes = encode(&p, &c).unwrap();
        bytes[4] = 9;
        let n = bytes.len() - 8;
        let sum = fnv1a(&bytes[..n]);
        bytes[n..].copy_from_slice(&sum.to_le_bytes());
        let err = decode::<f64>(&bytes).unwrap_err();
        assert!(matches!(err, Error::CorruptCheckpoint(ref m) if m.contains("version")));
    }

    #[test]
    fn width_mismatch() {
        let c = small();
        let p: ModelParams<f64> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let bytes = encode(&p, &c).unwrap();
        assert!(matches!(
            decode::<f32>(&bytes),
            Err(Error::WidthMismatch { expected: 4, found: 8 })
        ));
    }

    #[test]
    fn mismatched_params_rejected_on_save() {
        let c = small();
        let p: ModelParams<f64> = build_model(&c, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let other = ModelConfig {
            point_count: 5,
            ..small()
        };
        assert!(encode(&p, &other).is_err());
    }
}
