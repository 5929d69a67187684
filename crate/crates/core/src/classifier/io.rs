//! Binary model files.
//!
//! Layout (little-endian): magic `VMLM`, format version `u32`, feature
//! config, training parameters, both bias vectors, then the non-zero
//! buckets as `(bucket: u32, main weights, sub weights)`.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::features::FeatureConfig;
use super::model::{Model, TrainParams, MAIN_CLASSES, SUB_CLASSES};

const MAGIC: &[u8; 4] = b"VMLM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("not a model file")]
    BadMagic,
    #[error("unsupported model format version {0}")]
    Version(u32),
    #[error("model file is truncated")]
    Truncated,
    #[error("corrupt model file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let c = &model.config;
    out.extend_from_slice(&(c.hash_dim as u32).to_le_bytes());
    out.push(u8::from(c.signed));
    out.push(c.orders.len() as u8);
    out.extend_from_slice(&c.orders);
    let t = &model.train_meta;
    out.extend_from_slice(&t.epochs.to_le_bytes());
    out.extend_from_slice(&t.lr.to_le_bytes());
    out.extend_from_slice(&t.seed.to_le_bytes());
    for b in model.main.bias.iter().chain(&model.sub.bias) {
        out.extend_from_slice(&b.to_le_bytes());
    }

    let column = |j: usize| {
        model.main.weights[j * MAIN_CLASSES..][..MAIN_CLASSES]
            .iter()
            .chain(&model.sub.weights[j * SUB_CLASSES..][..SUB_CLASSES])
            .copied()
    };
    let nonzero: Vec<usize> = (0..c.hash_dim).filter(|&j| column(j).any(|w| w != 0.0)).collect();
    out.extend_from_slice(&(nonzero.len() as u32).to_le_bytes());
    for j in nonzero {
        out.extend_from_slice(&(j as u32).to_le_bytes());
        for w in column(j) {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelIoError> {
        if self.bytes.len() < n {
            return Err(ModelIoError::Truncated);
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], ModelIoError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, ModelIoError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ModelIoError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, ModelIoError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64, ModelIoError> {
        let v = f64::from_le_bytes(self.array()?);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ModelIoError::Corrupt("non-finite weight".into()))
        }
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<Model, ModelIoError> {
    let mut r = Reader { bytes };
    if r.take(4).map_err(|_| ModelIoError::BadMagic)? != MAGIC {
        return Err(ModelIoError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelIoError::Version(version));
    }
    let hash_dim = r.u32()? as usize;
    let signed = match r.u8()? {
        0 => false,
        1 => true,
        v => return Err(ModelIoError::Corrupt(format!("bad signed flag {v}"))),
    };
    let n_orders = r.u8()? as usize;
    let orders = r.take(n_orders)?.to_vec();
    let config = FeatureConfig::new(orders, hash_dim, signed).map_err(|e| ModelIoError::Corrupt(e.to_string()))?;
    let train_meta = TrainParams { epochs: r.u32()?, lr: r.f64()?, seed: r.u64()? };

    let mut model = Model::new(config, train_meta);
    for b in model.main.bias.iter_mut().chain(model.sub.bias.iter_mut()) {
        *b = r.f64()?;
    }
    let columns = r.u32()? as usize;
    for _ in 0..columns {
        let j = r.u32()? as usize;
        if j >= hash_dim {
            return Err(ModelIoError::Corrupt(format!("bucket {j} out of range")));
        }
        for w in &mut model.main.weights[j * MAIN_CLASSES..][..MAIN_CLASSES] {
            *w = r.f64()?;
        }
        for w in &mut model.sub.weights[j * SUB_CLASSES..][..SUB_CLASSES] {
            *w = r.f64()?;
        }
    }
    if !r.bytes.is_empty() {
        return Err(ModelIoError::Corrupt("trailing bytes".into()));
    }
    Ok(model)
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), ModelIoError> {
    Ok(fs::write(path, encode_model(model))?)
}

pub fn load_model(path: &Path) -> Result<Model, ModelIoError> {
    decode_model(&fs::read(path)?)
}
