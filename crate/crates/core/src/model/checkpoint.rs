//! Binary checkpoints: `"ARCK" | u32 header length | JSON header | f64 LE data`.
//! Values are stored as raw f64 so a save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use arcade_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::{build_model, ModelConfig, ModelHandles, Network};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ARCK";
const FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: u32,
    pub config: ModelConfig,
    pub seed: u64,
    pub metadata: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Model parameters plus arbitrary named tensors (optimizer state, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub seed: u64,
    pub metadata: serde_json::Value,
    pub tensors: BTreeMap<String, Tensor>,
}

const NETWORKS: [&str; 3] = ["encoder", "decoder", "critic"];

fn network<'a>(m: &'a ModelHandles, which: &str) -> &'a Network {
    match which {
        "encoder" => &m.encoder,
        "decoder" => &m.decoder,
        _ => &m.critic,
    }
}

fn network_mut<'a>(m: &'a mut ModelHandles, which: &str) -> &'a mut Network {
    match which {
        "encoder" => &mut m.encoder,
        "decoder" => &mut m.decoder,
        _ => &mut m.critic,
    }
}

impl Checkpoint {
    pub fn from_model(model: &ModelHandles, metadata: serde_json::Value) -> Checkpoint {
        let mut tensors = BTreeMap::new();
        for which in NETWORKS {
            let net = network(model, which);
            for (k, t) in &net.params {
                tensors.insert(format!("{which}.param.{k}"), t.clone());
            }
            for (k, t) in &net.buffers {
                tensors.insert(format!("{which}.buffer.{k}"), t.clone());
            }
        }
        Checkpoint {
            config: model.config.clone(),
            seed: model.seed,
            metadata,
            tensors,
        }
    }

    /// Rebuilds the model, checking every expected tensor is present with
    /// the right shape.
    pub fn to_model(&self) -> Result<ModelHandles> {
        let mut model = build_model(&self.config, self.seed)?;
        for which in NETWORKS {
            let net = network_mut(&mut model, which);
            for (kind, map) in [("param", &mut net.params), ("buffer", &mut net.buffers)] {
                for (k, slot) in map.iter_mut() {
                    let key = format!("{which}.{kind}.{k}");
                    let t = self
                        .tensors
                        .get(&key)
                        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
                    if t.shape() != slot.shape() {
                        return Err(Error::Checkpoint(format!(
                            "tensor {key} has shape {:?}, expected {:?}",
                            t.shape(),
                            slot.shape()
                        )));
                    }
                    *slot = t.clone();
                }
            }
        }
        Ok(model)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += t.numel();
        }
        let header = CheckpointHeader {
            format: FORMAT,
            config: self.config.clone(),
            seed: self.seed,
            metadata: self.metadata.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;
        w.write_all(MAGIC)?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::with_capacity(offset * 8);
        for t in self.tensors.values() {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Checkpoint> {
        let mut head = [0u8; 8];
        r.read_exact(&mut head)
            .map_err(|e| Error::Checkpoint(format!("short header: {e}")))?;
        if &head[..4] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let len = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)
            .map_err(|e| Error::Checkpoint(format!("short header: {e}")))?;
        let header: CheckpointHeader = serde_json::from_slice(&json)?;
        if header.format != FORMAT {
            return Err(Error::Checkpoint(format!("unsupported format {}", header.format)));
        }
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() % 8 != 0 {
            return Err(Error::Checkpoint("data section is not a whole number of f64".into()));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut tensors = BTreeMap::new();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let data = values
                .get(e.offset..e.offset + n)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} runs past the data section", e.name)))?;
            tensors.insert(e.name, Tensor::new(&e.shape, data.to_vec()));
        }
        Ok(Checkpoint {
            config: header.config,
            seed: header.seed,
            metadata: header.metadata,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::read_from(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut m = build_model(&ModelConfig::new(1, 3), 9).unwrap();
        m.encoder.buffers.get_mut("bn0.running_var").unwrap().data_mut()[0] = 0.1 + 0.2;
        let mut ck = Checkpoint::from_model(&m, serde_json::json!({"epoch": 4}));
        ck.tensors.insert("extra".into(), Tensor::new(&[2], vec![f64::MIN_POSITIVE, -0.0]));
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(&bytes[..]).unwrap();
        assert_eq!(back.tensors["extra"].data()[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(back, ck);
        assert_eq!(back.to_model().unwrap(), m);
    }

    #[test]
    fn missing_tensor_is_reported() {
        let m = build_model(&ModelConfig::new(1, 3), 9).unwrap();
        let mut ck = Checkpoint::from_model(&m, serde_json::Value::Null);
        ck.tensors.remove("critic.param.fc1.bias");
        assert!(matches!(ck.to_model(), Err(Error::Checkpoint(_))));
    }
}
