//! Line-delimited JSON checkpoints.
//!
//! Line 1 is a [`CheckpointHeader`]; every following line is one
//! [`TensorRecord`]. Values are written with shortest round-trip decimal
//! formatting, so `read(write(x)) == x` bit for bit.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::LinearLayer;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "groundkit-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerInfo {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    /// Model kind, e.g. `mil`, `recon`, `cls-single`.
    pub kind: String,
    pub seed: u64,
    pub epoch: usize,
    pub layers: Vec<LayerInfo>,
    /// Model-specific settings (class index, dropout rates, ...).
    #[serde(default)]
    pub meta: BTreeMap<String, serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn new(kind: &str, seed: u64, epoch: usize) -> Self {
        Self {
            header: CheckpointHeader {
                format: CHECKPOINT_FORMAT.to_string(),
                kind: kind.to_string(),
                seed,
                epoch,
                layers: Vec::new(),
                meta: BTreeMap::new(),
            },
            tensors: Vec::new(),
        }
    }

    pub fn push_layer(&mut self, name: &str, layer: &LinearLayer) {
        self.header.layers.push(LayerInfo {
            name: name.to_string(),
            in_dim: layer.in_dim(),
            out_dim: layer.out_dim(),
        });
        self.tensors.push(TensorRecord {
            name: format!("{name}.weight"),
            shape: vec![layer.out_dim(), layer.in_dim()],
            values: layer.weights.iter().copied().collect(),
        });
        self.tensors.push(TensorRecord {
            name: format!("{name}.bias"),
            shape: vec![layer.out_dim()],
            values: layer.bias.to_vec(),
        });
    }

    pub fn layer(&self, name: &str) -> Result<LinearLayer> {
        let w = self.tensor(&format!("{name}.weight"))?;
        let b = self.tensor(&format!("{name}.bias"))?;
        if w.shape.len() != 2 || b.shape.len() != 1 {
            return Err(Error::Checkpoint(format!("layer {name}: bad tensor rank")));
        }
        let weights = Array2::from_shape_vec((w.shape[0], w.shape[1]), w.values.clone())
            .map_err(|e| Error::Checkpoint(format!("layer {name}: {e}")))?;
        LinearLayer::from_parts(weights, Array1::from(b.values.clone()))
    }

    pub fn tensor(&self, name: &str) -> Result<&TensorRecord> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn meta<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .header
            .meta
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing meta field {key}")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Checkpoint(format!("meta {key}: {e}")))
    }

    pub fn set_meta<T: Serialize>(&mut self, key: &str, value: T) {
        let v = serde_json::to_value(value).expect("meta values are plain data");
        self.header.meta.insert(key.to_string(), v);
    }

    pub fn expect_kind(&self, kinds: &[&str]) -> Result<()> {
        if kinds.contains(&self.header.kind.as_str()) {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "expected a {} checkpoint, found {}",
                kinds.join("/"),
                self.header.kind
            )))
        }
    }

    pub fn write<W: Write>(&self, mut sink: W) -> Result<()> {
        for t in &self.tensors {
            if let Some(v) = t.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("tensor {}: {v}", t.name)));
            }
        }
        serde_json::to_writer(&mut sink, &self.header).map_err(io_err)?;
        sink.write_all(b"\n")?;
        for t in &self.tensors {
            serde_json::to_writer(&mut sink, t).map_err(io_err)?;
            sink.write_all(b"\n")?;
        }
        sink.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(source: R) -> Result<Self> {
        let mut lines = source.lines().enumerate();
        let header: CheckpointHeader = loop {
            match lines.next() {
                None => return Err(Error::Checkpoint("missing header".into())),
                Some((i, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&line).map_err(|e| Error::Parse {
                        line: i + 1,
                        msg: format!("checkpoint header: {e}"),
                    })?;
                }
            }
        };
        if header.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format {:?}",
                header.format
            )));
        }
        let mut tensors = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: TensorRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("tensor record: {e}"),
            })?;
            if t.shape.iter().product::<usize>() != t.values.len() {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!(
                        "tensor {} has {} values for shape {:?}",
                        t.name,
                        t.values.len(),
                        t.shape
                    ),
                });
            }
            tensors.push(t);
        }
        Ok(Self { header, tensors })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }
}

fn io_err(e: serde_json::Error) -> Error {
    Error::Io(e.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorcore::Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = Rng::new(11);
        let layer = LinearLayer::new(7, 3, &mut rng);
        let mut ckpt = Checkpoint::new("test", 11, 4);
        ckpt.push_layer("enc", &layer);
        ckpt.set_meta("classes", vec!["a", "b"]);
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::read(&bytes[..]).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.layer("enc").unwrap(), layer);
        assert_eq!(back.meta::<Vec<String>>("classes").unwrap(), vec!["a", "b"]);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_bad_shape_and_format() {
        let bad = "{\"format\":\"groundkit-checkpoint\",\"kind\":\"x\",\"seed\":0,\"epoch\":0,\"layers\":[]}\n{\"name\":\"w\",\"shape\":[2,2],\"values\":[1.0]}\n";
        assert!(Checkpoint::read(bad.as_bytes()).is_err());
        let other = "{\"format\":\"other\",\"kind\":\"x\",\"seed\":0,\"epoch\":0,\"layers\":[]}\n";
        assert!(Checkpoint::read(other.as_bytes()).is_err());
        assert!(Checkpoint::read("".as_bytes()).is_err());
    }
}
