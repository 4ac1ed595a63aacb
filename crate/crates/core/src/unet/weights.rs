//! `UNW1` weight files.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic "UNW1" | version | descriptor text length | descriptor text (UTF-8)
//! then, for every layer in inventory order:
//!   name length | name | rank | dims[rank] | f32 values (little-endian)
//! ```
//!
//! The layer count is implied by the descriptor; trailing bytes are an error.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use super::descriptor::{ArchDescriptor, LayerSpec};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"UNW1";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("bad weight file magic {found:?}, expected \"UNW1\"")]
    BadMagic { found: Vec<u8> },

    #[error("unsupported weight file version {0}")]
    UnsupportedVersion(u32),

    #[error("weight file truncated in {section}")]
    Truncated { section: String },

    #[error("layer {index}: expected {expected:?}, found {found:?}")]
    LayerName {
        index: usize,
        expected: String,
        found: String,
    },

    #[error("layer {layer}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch {
        layer: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("{0} unexpected trailing bytes after the last layer")]
    TrailingBytes(usize),

    #[error("weight file text is not UTF-8 in {0}")]
    Utf8(String),

    #[error("expected {expected} layers, got {found}")]
    LayerCount { expected: usize, found: usize },
}

/// A named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Parameters of one trained model, validated against its descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightStore {
    descriptor: ArchDescriptor,
    fingerprint: String,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl WeightStore {
    /// Checks that `tensors` matches the descriptor's inventory exactly, in
    /// order and shape.
    pub fn new(descriptor: ArchDescriptor, tensors: Vec<Tensor>) -> Result<Self> {
        descriptor.validate()?;
        let layers = descriptor.layers();
        if layers.len() != tensors.len() {
            return Err(WeightsError::LayerCount {
                expected: layers.len(),
                found: tensors.len(),
            }
            .into());
        }
        for (i, (spec, t)) in layers.iter().zip(&tensors).enumerate() {
            if spec.name != t.name {
                return Err(WeightsError::LayerName {
                    index: i,
                    expected: spec.name.clone(),
                    found: t.name.clone(),
                }
                .into());
            }
            if spec.shape != t.shape || t.data.len() != spec.numel() {
                return Err(WeightsError::ShapeMismatch {
                    layer: t.name.clone(),
                    expected: spec.shape.clone(),
                    found: t.shape.clone(),
                }
                .into());
            }
        }
        let index = tensors.iter().enumerate().map(|(i, t)| (t.name.clone(), i)).collect();
        Ok(WeightStore {
            fingerprint: descriptor.fingerprint(),
            descriptor,
            tensors,
            index,
        })
    }

    fn build(descriptor: ArchDescriptor, mut fill: impl FnMut(&LayerSpec) -> Vec<f32>) -> Result<Self> {
        descriptor.validate()?;
        let tensors = descriptor
            .layers()
            .iter()
            .map(|spec| Tensor {
                name: spec.name.clone(),
                shape: spec.shape.clone(),
                data: fill(spec),
            })
            .collect();
        Self::new(descriptor, tensors)
    }

    /// Zero weights and biases with identity norm affines (scale 1, shift 0).
    pub fn zeros(descriptor: ArchDescriptor) -> Result<Self> {
        Self::build(descriptor, |spec| {
            let v = if spec.name.contains(".norm") && spec.name.ends_with(".weight") { 1.0 } else { 0.0 };
            vec![v; spec.numel()]
        })
    }

    /// He-normal convolution weights, small random biases and shifts, norm
    /// scales near 1. Deterministic in `seed`.
    pub fn random(descriptor: ArchDescriptor, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(descriptor, |spec| {
            let n = spec.numel();
            let std = if spec.shape.len() == 5 {
                let fan_in = if spec.name.contains(".up.") {
                    spec.shape[0] * 8
                } else {
                    spec.shape[1..].iter().product()
                };
                (2.0 / fan_in as f64).sqrt()
            } else {
                0.1
            };
            let normal = Normal::new(0.0, std).unwrap();
            let is_scale = spec.name.contains(".norm") && spec.name.ends_with(".weight");
            (0..n)
                .map(|_| {
                    let v = normal.sample(&mut rng) as f32;
                    if is_scale {
                        1.0 + v
                    } else {
                        v
                    }
                })
                .collect()
        })
    }

    pub fn descriptor(&self) -> &ArchDescriptor {
        &self.descriptor
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.index.get(name).map(|&i| &self.tensors[i].data[..])
    }

    pub(crate) fn expect(&self, name: &str) -> &[f32] {
        self.get(name)
            .unwrap_or_else(|| panic!("weight store validated against inventory but lacks {name}"))
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn save_weights(store: &WeightStore) -> Vec<u8> {
    let text = store.descriptor.canonical_text();
    let mut out = Vec::with_capacity(16 + text.len() + 4 * store.param_count() + 64 * store.tensors.len());
    out.extend_from_slice(&WEIGHTS_MAGIC);
    put_u32(&mut out, WEIGHTS_VERSION);
    put_u32(&mut out, text.len() as u32);
    out.extend_from_slice(text.as_bytes());
    for t in &store.tensors {
        put_u32(&mut out, t.name.len() as u32);
        out.extend_from_slice(t.name.as_bytes());
        put_u32(&mut out, t.shape.len() as u32);
        for &d in &t.shape {
            put_u32(&mut out, d as u32);
        }
        let start = out.len();
        out.resize(start + 4 * t.data.len(), 0);
        LittleEndian::write_f32_into(&t.data, &mut out[start..]);
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8], WeightsError> {
        if self.bytes.len() - self.pos < n {
            return Err(WeightsError::Truncated {
                section: section.to_string(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, section: &str) -> Result<u32, WeightsError> {
        Ok(LittleEndian::read_u32(self.take(4, section)?))
    }

    fn text(&mut self, section: &str) -> Result<&'a str, WeightsError> {
        let n = self.u32(section)? as usize;
        std::str::from_utf8(self.take(n, section)?).map_err(|_| WeightsError::Utf8(section.to_string()))
    }
}

pub fn load_weights(bytes: &[u8]) -> Result<WeightStore> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic").map_err(|_| WeightsError::BadMagic { found: bytes.to_vec() })?;
    if magic != WEIGHTS_MAGIC {
        return Err(WeightsError::BadMagic { found: magic.to_vec() }.into());
    }
    let version = cur.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(WeightsError::UnsupportedVersion(version).into());
    }
    let descriptor = ArchDescriptor::parse(cur.text("descriptor")?)?;
    let layers = descriptor.layers();
    let mut tensors = Vec::with_capacity(layers.len());
    for (i, spec) in layers.iter().enumerate() {
        let section = format!("layer {}", spec.name);
        let name = cur.text(&section)?;
        if name != spec.name {
            return Err(WeightsError::LayerName {
                index: i,
                expected: spec.name.clone(),
                found: name.to_string(),
            }
            .into());
        }
        let rank = cur.u32(&section)? as usize;
        if rank > 8 {
            return Err(WeightsError::ShapeMismatch {
                layer: spec.name.clone(),
                expected: spec.shape.clone(),
                found: vec![rank],
            }
            .into());
        }
        let shape = (0..rank)
            .map(|_| cur.u32(&section).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        if shape != spec.shape {
            return Err(WeightsError::ShapeMismatch {
                layer: spec.name.clone(),
                expected: spec.shape.clone(),
                found: shape,
            }
            .into());
        }
        let raw = cur.take(4 * spec.numel(), &section)?;
        let mut data = vec![0f32; spec.numel()];
        LittleEndian::read_f32_into(raw, &mut data);
        tensors.push(Tensor {
            name: spec.name.clone(),
            shape,
            data,
        });
    }
    if cur.pos != bytes.len() {
        return Err(WeightsError::TrailingBytes(bytes.len() - cur.pos).into());
    }
    WeightStore::new(descriptor, tensors)
}

pub fn load_weights_file(path: &Path) -> Result<WeightStore> {
    load_weights(&fs::read(path)?)
}

pub fn save_weights_file(path: &Path, store: &WeightStore) -> Result<()> {
    fs::write(path, save_weights(store)).map_err(Error::from)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ArchDescriptor {
        ArchDescriptor {
            channels: vec![2, 4],
            in_channels: 2,
            out_channels: 2,
            kernel: 3,
            convs_per_stage: 2,
            instance_norm: true,
            negative_slope: 0.01,
        }
    }

    fn weights_err(bytes: &[u8]) -> WeightsError {
        match load_weights(bytes) {
            Err(Error::Weights(e)) => e,
            other => panic!("expected a weights error, got {other:?}"),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let store = WeightStore::random(toy(), 5).unwrap();
        let bytes = save_weights(&store);
        assert_eq!(&bytes[..4], b"UNW1");
        assert_eq!(load_weights(&bytes).unwrap(), store);
    }

    #[test]
    fn corrupt_magic() {
        let mut bytes = save_weights(&WeightStore::zeros(toy()).unwrap());
        bytes[0] = b'X';
        assert!(matches!(weights_err(&bytes), WeightsError::BadMagic { .. }));
    }

    #[test]
    fn truncated_tensor_names_layer() {
        let bytes = save_weights(&WeightStore::random(toy(), 1).unwrap());
        let cut = &bytes[..bytes.len() - 4];
        match weights_err(cut) {
            WeightsError::Truncated { section } => assert_eq!(section, "layer head.bias"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shape_and_name_mismatch() {
        let store = WeightStore::random(toy(), 1).unwrap();
        let bytes = save_weights(&store);
        let text_len = LittleEndian::read_u32(&bytes[8..]) as usize;
        let first = 12 + text_len;
        let name_len = LittleEndian::read_u32(&bytes[first..]) as usize;

        // first dim of the first layer: 2 -> 3
        let mut b = bytes.clone();
        let dim0 = first + 4 + name_len + 4;
        LittleEndian::write_u32(&mut b[dim0..], 3);
        match weights_err(&b) {
            WeightsError::ShapeMismatch { layer, found, .. } => {
                assert_eq!(layer, "encoder.0.conv0.weight");
                assert_eq!(found[0], 3);
            }
            other => panic!("{other:?}"),
        }

        let mut b = bytes.clone();
        b[first + 4] = b'E';
        assert!(matches!(weights_err(&b), WeightsError::LayerName { index: 0, .. }));

        let mut b = bytes;
        b.push(0);
        assert!(matches!(weights_err(&b), WeightsError::TrailingBytes(1)));
    }

    #[test]
    fn store_validates_inventory() {
        let mut tensors = WeightStore::zeros(toy()).unwrap().tensors().to_vec();
        tensors[1].shape = vec![3];
        tensors[1].data = vec![0.0; 3];
        assert!(WeightStore::new(toy(), tensors.clone()).is_err());
        tensors.pop();
        assert!(WeightStore::new(toy(), tensors).is_err());
    }

    #[test]
    fn zeros_have_identity_norm() {
        let store = WeightStore::zeros(toy()).unwrap();
        assert!(store.get("encoder.0.norm0.weight").unwrap().iter().all(|&v| v == 1.0));
        assert!(store.get("encoder.0.norm0.bias").unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(store.param_count(), toy().param_count().unwrap());
    }
}
