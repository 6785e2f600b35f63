//! Model files and round-report CSVs.
//!
//! A model is two files. The binary holds the parameters:
//!
//! | field   | type                          |
//! |---------|-------------------------------|
//! | magic   | 4 bytes `PPMP`                |
//! | version | `u32` = 1                     |
//! | count   | `u64`, number of values       |
//! | values  | `count` × `f64`               |
//!
//! all little-endian, in the flat order of [`ParamSet::to_flat`]. The JSON
//! manifest beside it names every tensor with its shape and offset and embeds
//! the network spec.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FedError, RoundReport};
use crate::nn::{NetworkSpec, ParamSet};

const MAGIC: &[u8; 4] = b"PPMP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset in values, not bytes.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format: String,
    pub spec: NetworkSpec,
    pub tensors: Vec<TensorEntry>,
    pub total: usize,
}

impl ModelManifest {
    pub fn of(spec: &NetworkSpec, params: &ParamSet) -> Self {
        let mut offset = 0;
        let tensors = params
            .manifest()
            .into_iter()
            .map(|(name, shape)| {
                let len = shape.iter().product();
                let e = TensorEntry {
                    name,
                    shape,
                    offset,
                    len,
                };
                offset += len;
                e
            })
            .collect();
        Self {
            format: format!("PPMP v{VERSION}"),
            spec: spec.clone(),
            tensors,
            total: offset,
        }
    }
}

/// Writes `<stem>.bin` and `<stem>.manifest.json` into `dir`.
pub fn save_model(dir: &Path, stem: &str, spec: &NetworkSpec, params: &ParamSet) -> Result<(), FedError> {
    params.check_spec(spec)?;
    let flat = params.to_flat();
    let mut bytes = Vec::with_capacity(16 + flat.len() * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in &flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(dir.join(format!("{stem}.bin")), bytes)?;
    let manifest = serde_json::to_string_pretty(&ModelManifest::of(spec, params))?;
    std::fs::write(dir.join(format!("{stem}.manifest.json")), manifest)?;
    Ok(())
}

/// Reads a model written by [`save_model`] and checks it against its manifest.
pub fn load_model(dir: &Path, stem: &str) -> Result<(NetworkSpec, ParamSet), FedError> {
    let manifest: ModelManifest = serde_json::from_slice(&std::fs::read(dir.join(format!("{stem}.manifest.json")))?)?;
    manifest.spec.validate()?;
    let bytes = std::fs::read(dir.join(format!("{stem}.bin")))?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(FedError::Format("bad magic at byte 0".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(FedError::Format(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    if bytes.len() != 16 + count.saturating_mul(8) {
        return Err(FedError::Format(format!(
            "header promises {count} values but file has {} bytes",
            bytes.len()
        )));
    }
    let flat: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let params = ParamSet::zeros(&manifest.spec).with_flat(&flat)?;
    if ModelManifest::of(&manifest.spec, &params) != manifest {
        return Err(FedError::Format("manifest does not match the network spec".into()));
    }
    Ok((manifest.spec, params))
}

/// CSV with one row per sampled client per round.
pub fn write_round_reports(path: &Path, reports: &[RoundReport]) -> Result<(), FedError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "round",
        "client_id",
        "support_loss",
        "query_loss",
        "grad_norm",
        "weight",
        "lr",
    ])?;
    for r in reports {
        for c in &r.clients {
            w.write_record([
                r.round.to_string(),
                c.client_id.to_string(),
                c.support_loss.to_string(),
                c.query_loss.to_string(),
                c.grad_norm.to_string(),
                c.weight.to_string(),
                r.lr.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn model_roundtrip_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetworkSpec::mlp(&[3, 4, 2], true).unwrap();
        let p = ParamSet::init(&spec, &mut substream(0, &[]));
        save_model(dir.path(), "global", &spec, &p).unwrap();
        let (s2, p2) = load_model(dir.path(), "global").unwrap();
        assert_eq!((s2, p2), (spec.clone(), p.clone()));
        let m = ModelManifest::of(&spec, &p);
        assert_eq!(m.total, 4 * 3 + 4 + 2 * 4 + 2);
        assert_eq!(m.tensors[1].name, "layer0.bias");
        assert_eq!(m.tensors[2].offset, 16);
        let bin = dir.path().join("global.bin");
        let mut bytes = std::fs::read(&bin).unwrap();
        bytes.pop();
        std::fs::write(&bin, bytes).unwrap();
        assert!(matches!(load_model(dir.path(), "global"), Err(FedError::Format(_))));
    }
}
