//! `SIDM` model checkpoints.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{write_container, Reader};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::layers::{DenseParams, LstmLayerParams};
use super::network::Network;

pub const MODEL_MAGIC: &[u8; 4] = b"SIDM";
pub const MODEL_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub in_dim: usize,
    pub lstm_sizes: Vec<usize>,
    pub out_dim: usize,
    pub seed: u64,
    /// Free-form training provenance (config, datasets, epochs).
    #[serde(default)]
    pub provenance: serde_json::Value,
    /// Shapes of the tensors that follow, in declaration order.
    pub tensors: Vec<Vec<usize>>,
}

impl<T: Scalar> Network<T> {
    pub fn to_checkpoint_bytes(&self, seed: u64, provenance: serde_json::Value) -> Result<Vec<u8>> {
        let header = CheckpointHeader {
            in_dim: self.in_dim(),
            lstm_sizes: self.sizes(),
            out_dim: self.out_dim(),
            seed,
            provenance,
            tensors: self.tensors().iter().map(|t| t.shape().to_vec()).collect(),
        };
        let arrays: Vec<Vec<f64>> = self
            .tensors()
            .iter()
            .map(|t| t.as_slice().iter().map(|x| x.to_f64_lossless()).collect())
            .collect();
        let refs: Vec<&[f64]> = arrays.iter().map(|a| a.as_slice()).collect();
        let mut out = Vec::new();
        write_container(
            &mut out,
            MODEL_MAGIC,
            MODEL_VERSION,
            &serde_json::to_value(&header)?,
            &refs,
        )?;
        Ok(out)
    }

    pub fn save_checkpoint(
        &self,
        path: impl AsRef<Path>,
        seed: u64,
        provenance: serde_json::Value,
    ) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes(seed, provenance)?)?;
        Ok(())
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<(Self, CheckpointHeader)> {
        let mut r = Reader::new(bytes);
        let header: CheckpointHeader =
            serde_json::from_value(r.header(MODEL_MAGIC, MODEL_VERSION)?).map_err(|e| {
                Error::Format {
                    offset: 10,
                    expected: format!("checkpoint header ({e})"),
                }
            })?;
        if header.lstm_sizes.is_empty() {
            return Err(Error::Format {
                offset: 10,
                expected: "at least one LSTM layer".into(),
            });
        }
        let expected = Network::<T>::zeros(header.in_dim, &header.lstm_sizes, header.out_dim)?;
        let shapes: Vec<Vec<usize>> = expected
            .tensors()
            .iter()
            .map(|t| t.shape().to_vec())
            .collect();
        if shapes != header.tensors {
            return Err(Error::Format {
                offset: 10,
                expected: format!("tensor shapes {shapes:?} for sizes {:?}", header.lstm_sizes),
            });
        }
        let mut tensors = Vec::with_capacity(shapes.len());
        for (k, shape) in shapes.iter().enumerate() {
            let n = shape.iter().product();
            let raw = r.f64s(n, &format!("tensor {k}"))?;
            tensors.push(Tensor::from_vec(
                shape,
                raw.into_iter().map(T::of).collect(),
            )?);
        }
        r.finish()?;
        let mut it = tensors.into_iter();
        let lstm = header
            .lstm_sizes
            .iter()
            .map(|_| LstmLayerParams {
                w: it.next().unwrap(),
                u: it.next().unwrap(),
                b: it.next().unwrap(),
            })
            .collect();
        let dense = DenseParams {
            w: it.next().unwrap(),
            b: it.next().unwrap(),
        };
        Ok((Network::from_layers(lstm, dense)?, header))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Self, CheckpointHeader)> {
        Self::from_checkpoint_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let net = Network::<f64>::init(2, &[3, 4], 1, 17).unwrap();
        let bytes = net
            .to_checkpoint_bytes(17, serde_json::json!({"note": "x"}))
            .unwrap();
        let (back, header) = Network::<f64>::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(header.seed, 17);
        assert_eq!(header.lstm_sizes, vec![3, 4]);
        assert_eq!(
            back.to_checkpoint_bytes(17, serde_json::json!({"note": "x"}))
                .unwrap(),
            bytes
        );
    }

    #[test]
    fn truncated_and_versioned_files_fail() {
        let net = Network::<f64>::init(2, &[2], 1, 1).unwrap();
        let bytes = net.to_checkpoint_bytes(1, serde_json::Value::Null).unwrap();
        assert!(matches!(
            Network::<f64>::from_checkpoint_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Format { .. })
        ));
        let mut v = bytes.clone();
        v[4] = 2;
        assert!(matches!(
            Network::<f64>::from_checkpoint_bytes(&v),
            Err(Error::Version { found: 2, .. })
        ));
    }
}
