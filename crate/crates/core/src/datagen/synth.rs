//! Sampling labeled synthetic datasets and their on-disk form.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! | field          | type                    |
//! |----------------|-------------------------|
//! | magic          | 4 bytes `PPSD`          |
//! | version        | `u32` = 1               |
//! | dim            | `u64`                   |
//! | count          | `u64`                   |
//! | class count    | `u32`                   |
//! | classes        | `u32` each              |
//! | n_classes      | `u32` (label space)     |
//! | epsilon spent  | `f64`, `+inf` if no DP  |
//! | delta          | `f64`                   |
//! | client         | `u64`                   |
//! | hash length    | `u32`                   |
//! | config hash    | UTF-8 bytes             |
//! | samples        | `count · dim` × `f64`   |
//! | labels         | `count` × `u32`         |

use std::path::Path;

use super::student::{sample_latent, GeneratorSet, Provenance};
use super::DatagenError;
use crate::data::{write_csv, LabeledDataset};
use crate::nn;
use crate::rng::Rng;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PPSD";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub samples: Tensor,
    pub labels: Vec<usize>,
    pub classes: Vec<usize>,
    pub n_classes: usize,
    pub provenance: Provenance,
}

/// Draws `n_per_class` samples from every class generator, class by class,
/// clamped to `[0, 1]`. Pure post-processing: no privacy is spent.
pub fn synthesize(gens: &GeneratorSet, n_per_class: usize, rng: &mut Rng) -> Result<SyntheticDataset, DatagenError> {
    let dim = gens.data_dim();
    let mut data = Vec::with_capacity(gens.generators.len() * n_per_class * dim);
    let mut labels = Vec::with_capacity(gens.generators.len() * n_per_class);
    for (&class, params) in &gens.generators {
        let z = sample_latent(n_per_class, gens.latent_dim, rng);
        let x = nn::forward(&gens.spec, params, &z)?;
        data.extend(x.data().iter().map(|v| v.clamp(0.0, 1.0)));
        labels.extend(std::iter::repeat_n(class, n_per_class));
    }
    Ok(SyntheticDataset {
        samples: Tensor::new(vec![labels.len(), dim], data)?,
        labels,
        classes: gens.classes(),
        n_classes: gens.n_classes,
        provenance: gens.provenance.clone(),
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], DatagenError> {
        if self.bytes.len() - self.pos < n {
            return Err(DatagenError::Format(format!("truncated {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, DatagenError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, DatagenError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, DatagenError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn to_labeled(&self, name: &str) -> Result<LabeledDataset, DatagenError> {
        Ok(LabeledDataset::new(
            self.samples.clone(),
            self.labels.clone(),
            self.n_classes,
            name,
        )?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.samples.len() * 8 + self.labels.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim() as u64).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.classes.len() as u32).to_le_bytes());
        for &c in &self.classes {
            out.extend_from_slice(&(c as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.n_classes as u32).to_le_bytes());
        let eps = self.provenance.epsilon_spent.unwrap_or(f64::INFINITY);
        out.extend_from_slice(&eps.to_le_bytes());
        out.extend_from_slice(&self.provenance.delta.to_le_bytes());
        out.extend_from_slice(&self.provenance.client.to_le_bytes());
        let hash = self.provenance.config_hash.as_bytes();
        out.extend_from_slice(&(hash.len() as u32).to_le_bytes());
        out.extend_from_slice(hash);
        for v in self.samples.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &y in &self.labels {
            out.extend_from_slice(&(y as u32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatagenError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(DatagenError::Format("bad magic at byte 0".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(DatagenError::Format(format!("unsupported version {version}")));
        }
        let dim = r.u64("dim")? as usize;
        let count = r.u64("count")? as usize;
        let n_listed = r.u32("class count")? as usize;
        let classes = (0..n_listed)
            .map(|_| r.u32("class list").map(|c| c as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let n_classes = r.u32("label space")? as usize;
        let eps = r.f64("epsilon")?;
        let delta = r.f64("delta")?;
        let client = r.u64("client")?;
        let hash_len = r.u32("hash length")? as usize;
        let config_hash = String::from_utf8(r.take(hash_len, "config hash")?.to_vec())
            .map_err(|_| DatagenError::Format("config hash is not UTF-8".into()))?;
        let total = count
            .checked_mul(dim)
            .ok_or_else(|| DatagenError::Format("sample matrix size overflows".into()))?;
        let data = (0..total).map(|_| r.f64("samples")).collect::<Result<Vec<_>, _>>()?;
        let labels = (0..count)
            .map(|_| r.u32("labels").map(|y| y as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if r.pos != bytes.len() {
            return Err(DatagenError::Format(format!("trailing bytes after byte {}", r.pos)));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(DatagenError::Format(format!(
                "label {y} outside label space {n_classes}"
            )));
        }
        Ok(Self {
            samples: Tensor::new(vec![count, dim], data)?,
            labels,
            classes,
            n_classes,
            provenance: Provenance {
                client,
                epsilon_spent: eps.is_finite().then_some(eps),
                delta,
                config_hash,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DatagenError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatagenError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// CSV with feature columns `f0..` and a `label` column.
    pub fn save_csv(&self, path: &Path) -> Result<(), DatagenError> {
        write_csv(&self.to_labeled("synthetic")?, path)?;
        Ok(())
    }
}
