//! Model checkpoints.
//!
//! Layout: `b"HALO"`, format version (u32 LE), metadata length (u32 LE),
//! JSON metadata, then every parameter as a little-endian `f32` in flat
//! order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::Error;

use super::{HandOccupancyModel, OccupancyConfig, NUM_PARTS};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"HALO";

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    config: OccupancyConfig,
    num_params: usize,
    /// Named blocks per part as `(name, rows, cols)`, in storage order.
    part_layers: Vec<(String, usize, usize)>,
    /// Bone driving each part (`None` for the palm).
    part_bones: Vec<Option<usize>>,
    encoder_layers: Vec<(String, usize, usize)>,
    /// Free-form training information.
    #[serde(default)]
    extra: serde_json::Value,
}

fn metadata(m: &HandOccupancyModel, extra: serde_json::Value) -> Metadata {
    let cfg = m.config();
    let w = cfg.width;
    let mut part_layers = vec![
        ("pose_projection".to_string(), cfg.pose_dim, 3 * NUM_PARTS),
        ("w1".to_string(), w, 3 + cfg.feature_dim()),
        ("b1".to_string(), w, 1),
    ];
    for l in 1..cfg.layers {
        part_layers.push((format!("res{l}.w"), w, w));
        part_layers.push((format!("res{l}.b"), w, 1));
    }
    part_layers.push(("w_out".to_string(), 1, w));
    part_layers.push(("b_out".to_string(), 1, 1));
    let encoder_layers = if m.layout().encoder.is_some() {
        vec![
            ("enc.w1".to_string(), cfg.encoder_width, NUM_PARTS),
            ("enc.b1".to_string(), cfg.encoder_width, 1),
            ("enc.w2".to_string(), cfg.encoder_dim, cfg.encoder_width),
            ("enc.b2".to_string(), cfg.encoder_dim, 1),
        ]
    } else {
        vec![]
    };
    Metadata {
        config: cfg.clone(),
        num_params: m.num_params(),
        part_layers,
        part_bones: (0..NUM_PARTS).map(|p| (p > 0).then_some(4 + p)).collect(),
        encoder_layers,
        extra,
    }
}

/// Serializes a model to bytes.
pub fn checkpoint_bytes(m: &HandOccupancyModel, extra: serde_json::Value) -> Vec<u8> {
    let meta = serde_json::to_vec(&metadata(m, extra)).expect("metadata serializes");
    let mut out = Vec::with_capacity(12 + meta.len() + 4 * m.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    for v in m.params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses bytes produced by [`checkpoint_bytes`], returning the model and
/// the free-form metadata.
pub fn model_from_bytes(bytes: &[u8]) -> Result<(HandOccupancyModel, serde_json::Value), Error> {
    let fmt = |m: &str| Error::Format(m.to_string());
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(fmt("not a HALO checkpoint"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + len).ok_or_else(|| fmt("truncated metadata"))?;
    let meta: Metadata = serde_json::from_slice(body).map_err(|e| Error::Format(format!("metadata: {e}")))?;
    let raw = &bytes[12 + len..];
    if raw.len() != 4 * meta.num_params {
        return Err(Error::ShapeMismatch {
            expected: meta.num_params,
            got: raw.len() / 4,
        });
    }
    let params = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let model = HandOccupancyModel::from_params(meta.config, params)?;
    Ok((model, meta.extra))
}

pub fn save_checkpoint(m: &HandOccupancyModel, path: &Path, extra: serde_json::Value) -> Result<(), Error> {
    let bytes = checkpoint_bytes(m, extra);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(HandOccupancyModel, serde_json::Value), Error> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occupancy::Mode;

    #[test]
    fn bytes_round_trip_bitwise() {
        for mode in Mode::ALL {
            let m = HandOccupancyModel::init(OccupancyConfig::with_mode(mode), 5).unwrap();
            let b = checkpoint_bytes(&m, serde_json::json!({"step": 3}));
            let (back, extra) = model_from_bytes(&b).unwrap();
            assert_eq!(extra["step"], 3);
            assert_eq!(back.config(), m.config());
            let a: Vec<u32> = m.params().iter().map(|v| v.to_bits()).collect();
            let c: Vec<u32> = back.params().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, c);
            assert_eq!(checkpoint_bytes(&back, extra), b);
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let m = HandOccupancyModel::init(OccupancyConfig::with_mode(Mode::HaloLocal), 1).unwrap();
        let mut b = checkpoint_bytes(&m, serde_json::Value::Null);
        assert!(matches!(model_from_bytes(&b[..b.len() - 2]), Err(Error::ShapeMismatch { .. })));
        b[0] = b'X';
        assert!(matches!(model_from_bytes(&b), Err(Error::Format(_))));
    }
}
