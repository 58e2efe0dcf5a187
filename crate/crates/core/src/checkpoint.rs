//! Checkpoint persistence.
//!
//! File layout: the magic bytes `DGF1`, a little-endian u32 header length, a
//! JSON header `{version, iteration, config, records: [{name, shape,
//! offset}]}`, then the raw little-endian f32 payloads in record order
//! (`offset` counts bytes from the start of the payload section). Writes go
//! through a temp file and a rename, so a crash never leaves a torn
//! checkpoint behind.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CheckpointError, Error, Result};
use crate::loss::FeatureExtractor;
use crate::tensor::{Element, Parameter, Tensor};

pub const MAGIC: &[u8; 4] = b"DGF1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Header {
    pub version: u32,
    pub iteration: u64,
    /// Free-form snapshot of whatever configuration produced the file.
    pub config: serde_json::Value,
    pub records: Vec<RecordMeta>,
}

/// A fully loaded checkpoint: header plus named f32 tensors.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub iteration: u64,
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<(&[usize], &[f32])> {
        self.tensors
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, shape, data)| (shape.as_slice(), data.as_slice()))
    }
}

/// Serialize named tensors (converted to f32) with the given config snapshot.
pub fn save_checkpoint(
    path: &Path,
    iteration: u64,
    config: &serde_json::Value,
    tensors: &[(String, Vec<usize>, Vec<f32>)],
) -> Result<()> {
    let mut records = Vec::with_capacity(tensors.len());
    let mut offset = 0u64;
    for (name, shape, data) in tensors {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "record `{name}`: shape {shape:?} vs {} values",
                data.len()
            )));
        }
        records.push(RecordMeta { name: name.clone(), shape: shape.clone(), offset });
        offset += (data.len() * 4) as u64;
    }
    let header = Header {
        version: CHECKPOINT_VERSION,
        iteration,
        config: config.clone(),
        records,
    };
    let header_json = serde_json::to_vec(&header)?;

    let tmp = path.with_extension("part");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(MAGIC)?;
        f.write_all(&(header_json.len() as u32).to_le_bytes())?;
        f.write_all(&header_json)?;
        let mut buf = Vec::new();
        for (_, _, data) in tensors {
            buf.clear();
            buf.reserve(data.len() * 4);
            for v in data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            f.write_all(&buf)?;
        }
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)
        .map_err(|_| CheckpointError::Truncated("file shorter than the magic".into()))?;
    if &magic != MAGIC {
        return Err(CheckpointError::NotACheckpoint.into());
    }
    let mut len_bytes = [0u8; 4];
    f.read_exact(&mut len_bytes)
        .map_err(|_| CheckpointError::Truncated("missing header length".into()))?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    f.read_exact(&mut header_json)
        .map_err(|_| CheckpointError::Truncated("header shorter than declared".into()))?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| CheckpointError::Header(e.to_string()))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: header.version,
            supported: CHECKPOINT_VERSION,
        }
        .into());
    }

    let mut payload = Vec::new();
    f.read_to_end(&mut payload)?;
    let mut tensors = Vec::with_capacity(header.records.len());
    for rec in &header.records {
        let numel: usize = rec.shape.iter().product();
        let start = rec.offset as usize;
        let end = start + numel * 4;
        if end > payload.len() {
            return Err(CheckpointError::Truncated(format!(
                "record `{}` needs bytes {start}..{end}, payload has {}",
                rec.name,
                payload.len()
            ))
            .into());
        }
        let data: Vec<f32> = payload[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((rec.name.clone(), rec.shape.clone(), data));
    }
    Ok(Checkpoint { iteration: header.iteration, config: header.config, tensors })
}

/// Named-tensor records from a parameter list (cast to f32).
pub fn parameter_records<E: Element>(params: &[Parameter<E>]) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    params
        .iter()
        .map(|p| {
            (
                p.name.clone(),
                p.tensor.shape().to_vec(),
                p.tensor.to_vec().iter().map(|v| v.as_f64() as f32).collect(),
            )
        })
        .collect()
}

/// Copy checkpoint values into an existing parameter list by name. Every
/// parameter must be present with the exact shape; the first offender is
/// named in the error.
pub fn load_into_params<E: Element>(ckpt: &Checkpoint, params: &[Parameter<E>]) -> Result<()> {
    for p in params {
        let (shape, data) = ckpt
            .get(&p.name)
            .ok_or_else(|| CheckpointError::MissingRecord(p.name.clone()))?;
        if shape != p.tensor.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: p.name.clone(),
                found: shape.to_vec(),
                expected: p.tensor.shape().to_vec(),
            }
            .into());
        }
        p.tensor.with_data_mut(|d| {
            for (dst, src) in d.iter_mut().zip(data) {
                *dst = E::of_f64(*src as f64);
            }
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExtractorMeta {
    strides: Vec<usize>,
    paddings: Vec<usize>,
    leaky_slope: f64,
}

/// Persist a feature extractor as a standalone parameter file
/// (records `extractor.conv{i}.{weight,bias}` plus layer geometry in the
/// config field).
pub fn save_extractor<E: Element>(path: &Path, extractor: &FeatureExtractor<E>) -> Result<()> {
    let layers = extractor.layer_tensors();
    let meta = ExtractorMeta {
        strides: layers.iter().map(|l| l.2).collect(),
        paddings: layers.iter().map(|l| l.3).collect(),
        leaky_slope: extractor.leaky_slope(),
    };
    let mut records = Vec::new();
    for (i, (w, b, _, _)) in layers.iter().enumerate() {
        for (suffix, t) in [("weight", w), ("bias", b)] {
            records.push((
                format!("extractor.conv{i}.{suffix}"),
                t.shape().to_vec(),
                t.to_vec().iter().map(|v| v.as_f64() as f32).collect(),
            ));
        }
    }
    let config = serde_json::json!({ "extractor": meta });
    save_checkpoint(path, 0, &config, &records)
}

/// Load a feature extractor saved by [`save_extractor`] (or assembled by any
/// tool that writes the same record names).
pub fn load_extractor<E: Element>(path: &Path) -> Result<FeatureExtractor<E>> {
    let ckpt = load_checkpoint(path)?;
    let meta: ExtractorMeta = serde_json::from_value(
        ckpt.config
            .get("extractor")
            .cloned()
            .ok_or_else(|| CheckpointError::Header("missing extractor geometry".into()))?,
    )
    .map_err(|e| CheckpointError::Header(e.to_string()))?;

    let mut layers = Vec::new();
    for i in 0..meta.strides.len() {
        let (wshape, wdata) = ckpt
            .get(&format!("extractor.conv{i}.weight"))
            .ok_or_else(|| CheckpointError::MissingRecord(format!("extractor.conv{i}.weight")))?;
        let (bshape, bdata) = ckpt
            .get(&format!("extractor.conv{i}.bias"))
            .ok_or_else(|| CheckpointError::MissingRecord(format!("extractor.conv{i}.bias")))?;
        let weight = Tensor::new(wshape, wdata.iter().map(|v| E::of_f64(*v as f64)).collect(), false)?;
        let bias = Tensor::new(bshape, bdata.iter().map(|v| E::of_f64(*v as f64)).collect(), false)?;
        layers.push((weight, bias, meta.strides[i], meta.paddings[i]));
    }
    FeatureExtractor::from_layers(layers, meta.leaky_slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_records() -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        vec![
            (
                "net.w".into(),
                vec![2, 3],
                Tensor::<f32>::randn(&[2, 3], 1.0, &mut rng).to_vec(),
            ),
            ("net.b".into(), vec![3], vec![0.25, -0.5, 1e-7]),
        ]
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dgf");
        let records = sample_records();
        let config = serde_json::json!({"chr": 64});
        save_checkpoint(&path, 42, &config, &records).unwrap();

        let ckpt = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt.iteration, 42);
        assert_eq!(ckpt.config, config);
        assert_eq!(ckpt.tensors.len(), 2);
        for ((n1, s1, d1), (n2, s2, d2)) in records.iter().zip(&ckpt.tensors) {
            assert_eq!(n1, n2);
            assert_eq!(s1, s2);
            assert!(d1.iter().zip(d2).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn corrupt_magic_is_not_a_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dgf");
        save_checkpoint(&path, 0, &serde_json::Value::Null, &sample_records()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, bytes).unwrap();
        match load_checkpoint(&path).unwrap_err() {
            Error::Checkpoint(CheckpointError::NotACheckpoint) => {}
            other => panic!("expected NotACheckpoint, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dgf");
        save_checkpoint(&path, 0, &serde_json::Value::Null, &sample_records()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        match load_checkpoint(&path).unwrap_err() {
            Error::Checkpoint(CheckpointError::Truncated(_)) => {}
            other => panic!("expected Truncated, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dgf");
        save_checkpoint(&path, 0, &serde_json::Value::Null, &[]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Rewrite "version":1 in the JSON header.
        let json_start = 8;
        let s = String::from_utf8(bytes[json_start..].to_vec()).unwrap();
        let patched = s.replace("\"version\":1", "\"version\":9");
        bytes.truncate(json_start);
        bytes.extend_from_slice(patched.as_bytes());
        std::fs::write(&path, bytes).unwrap();
        match load_checkpoint(&path).unwrap_err() {
            Error::Checkpoint(CheckpointError::Version { found: 9, .. }) => {}
            other => panic!("expected Version, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_names_the_offending_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dgf");
        save_checkpoint(&path, 0, &serde_json::Value::Null, &sample_records()).unwrap();
        let ckpt = load_checkpoint(&path).unwrap();

        let wrong = [Parameter::new("net.w", Tensor::<f32>::zeros(&[3, 3]))];
        match load_into_params(&ckpt, &wrong).unwrap_err() {
            Error::Checkpoint(CheckpointError::ShapeMismatch { name, .. }) => {
                assert_eq!(name, "net.w");
            }
            other => panic!("expected ShapeMismatch, got {other:?}"),
        }

        let missing = [Parameter::new("net.unknown", Tensor::<f32>::zeros(&[1]))];
        match load_into_params(&ckpt, &missing).unwrap_err() {
            Error::Checkpoint(CheckpointError::MissingRecord(name)) => {
                assert_eq!(name, "net.unknown");
            }
            other => panic!("expected MissingRecord, got {other:?}"),
        }
    }

    #[test]
    fn extractor_roundtrip_reproduces_features() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extractor.dgf");
        let ext = FeatureExtractor::<f32>::random_conv(5, 3);
        save_extractor(&path, &ext).unwrap();
        let loaded = load_extractor::<f32>(&path).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::<f32>::randn(&[1, 3, 16, 16], 0.5, &mut rng);
        let a = ext.forward(&x).unwrap();
        let b = loaded.forward(&x).unwrap();
        assert_eq!(a.to_vec(), b.to_vec());
    }
}
