//! Self-describing checkpoint container.
//!
//! Layout: the 8-byte magic `SODNETCK`, a little-endian `u64` header length, a
//! JSON header, then raw little-endian `f32` blobs at the offsets the header lists.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sodnet_tensor::{ParamStore, Shape, Tensor};

use super::config::TrainConfig;
use crate::error::{Result, SodError};

const MAGIC: &[u8; 8] = b"SODNETCK";
/// Bumped on incompatible layout changes; readers accept any `1.x`.
pub const FORMAT_VERSION: (u32, u32) = (1, 0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 4],
    /// Byte offset into the blob section.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: (u32, u32),
    pub config: TrainConfig,
    pub config_hash: String,
    pub epoch: usize,
    pub step: usize,
    pub best_val_mae: Option<f64>,
    pub params: Vec<TensorEntry>,
    /// Optimizer momentum, one entry per parameter in the same order (may be empty).
    pub momentum: Vec<TensorEntry>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: Header,
    pub params: ParamStore<f32>,
    pub momentum: Vec<Tensor<f32>>,
}

fn entries<'a>(items: impl Iterator<Item = (&'a str, &'a Tensor<f32>)>, offset: &mut usize) -> Vec<TensorEntry> {
    items
        .map(|(name, t)| {
            let e = TensorEntry { name: name.to_string(), shape: t.shape().0, offset: *offset };
            *offset += 4 * t.numel();
            e
        })
        .collect()
}

impl Checkpoint {
    pub fn new(config: TrainConfig, epoch: usize, step: usize, best_val_mae: Option<f64>, params: ParamStore<f32>, momentum: Vec<Tensor<f32>>) -> Self {
        let mut offset = 0;
        let p = entries(params.iter().map(|(_, p)| (p.name.as_str(), &p.value)), &mut offset);
        let m = entries(params.iter().map(|(_, p)| p.name.as_str()).zip(momentum.iter()), &mut offset);
        let header = Header { format: FORMAT_VERSION, config_hash: config.hash(), config, epoch, step, best_val_mae, params: p, momentum: m };
        Checkpoint { header, params, momentum }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + 4 * self.params.num_scalars() * 2);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.params.iter().map(|(_, p)| &p.value).chain(self.momentum.iter()) {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| SodError::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let hend = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..hend])?;
        if header.format.0 != FORMAT_VERSION.0 {
            return Err(SodError::Checkpoint(format!("unsupported format {}.{}", header.format.0, header.format.1)));
        }
        let blobs = &bytes[hend..];
        let read = |e: &TensorEntry| -> Result<Tensor<f32>> {
            let shape = Shape(e.shape);
            let end = e.offset.checked_add(4 * shape.numel()).filter(|&x| x <= blobs.len()).ok_or_else(|| bad("truncated blob"))?;
            let data = blobs[e.offset..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            Ok(Tensor::from_vec(shape, data)?)
        };
        let mut params = ParamStore::new();
        for e in &header.params {
            params.register(e.name.clone(), read(e)?)?;
        }
        let momentum = header.momentum.iter().map(read).collect::<Result<_>>()?;
        Ok(Checkpoint { header, params, momentum })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| SodError::io(dir, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| SodError::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| SodError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| SodError::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Copy values into `store` by name; every parameter of `store` must be present with the same shape.
    pub fn restore_into(&self, store: &mut ParamStore<f32>) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let name = store.get(id).name.clone();
            let src = self.params.find(&name).ok_or_else(|| SodError::Checkpoint(format!("missing parameter `{name}`")))?;
            let v = self.params.value(src);
            if v.shape() != store.value(id).shape() {
                return Err(SodError::Checkpoint(format!("`{name}` has shape {} in the checkpoint, model expects {}", v.shape(), store.value(id).shape())));
            }
            *store.value_mut(id) = v.clone();
        }
        if self.params.len() != store.len() {
            return Err(SodError::Checkpoint(format!("checkpoint has {} parameters, model has {}", self.params.len(), store.len())));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut store = ParamStore::new();
        store.register("a.weight", Tensor::from_vec(Shape([2, 1, 1, 1]), vec![1.5, -2.0]).unwrap()).unwrap();
        store.register("b.bias", Tensor::full(Shape([1, 3, 1, 1]), 0.25)).unwrap();
        let momentum = vec![Tensor::full(Shape([2, 1, 1, 1]), 0.1), Tensor::zeros(Shape([1, 3, 1, 1]))];
        Checkpoint::new(TrainConfig::desk(), 3, 42, Some(0.05), store, momentum)
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.header, c.header);
        assert_eq!(back.to_bytes(), c.to_bytes());
        assert_eq!(back.params.value(back.params.lookup("a.weight").unwrap()).data(), &[1.5, -2.0]);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
