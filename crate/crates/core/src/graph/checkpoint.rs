//! Binary model checkpoints.
//!
//! Layout: magic `CGF1`, a u32 format version, the head kind (u8), class
//! count (u32), per-sample input dims (3 x u32), then a layer table (kind
//! tag u8 plus that kind's u32 hyperparameters), then one embedded tensor
//! record per parameter slot in layer order (weights first, bias as a
//! `(1, len, 1, 1)` record), and finally a CRC32 of everything before it.
//! All integers are little-endian. Loading rebuilds canonical slot names
//! (`layer{i}.weight` / `layer{i}.bias`), so a save/load round trip
//! reproduces the model exactly.

use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::graph::{slot_names, HeadKind, LayerSpec, ModelGraph, ParamStore};
use crate::tensor::t4f;
use crate::tensor::Tensor4;

const MAGIC: [u8; 4] = *b"CGF1";
const FORMAT_VERSION: u32 = 1;

const TAG_CONV: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_MAXPOOL2: u8 = 3;
const TAG_GAP: u8 = 4;
const TAG_FLATTEN: u8 = 5;
const TAG_FC: u8 = 6;
const TAG_POINTWISE_HEAD: u8 = 7;
const TAG_SPATIAL_AVG: u8 = 8;
const TAG_SOFTMAX: u8 = 9;

/// IEEE CRC32 (reflected, polynomial 0xEDB88320), table-driven.
pub fn crc32(bytes: &[u8]) -> u32 {
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut table = [0u32; 256];
        for (i, entry) in table.iter_mut().enumerate() {
            let mut value = i as u32;
            for _ in 0..8 {
                value = if value & 1 == 1 { 0xEDB8_8320 ^ (value >> 1) } else { value >> 1 };
            }
            *entry = value;
        }
        table
    });
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = table[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    !crc
}

fn push_u32(buf: &mut Vec<u8>, value: u32) {
    buf.extend_from_slice(&value.to_le_bytes());
}

/// Serializes a model to checkpoint bytes (including the trailing CRC).
pub fn to_bytes(model: &ModelGraph) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    push_u32(&mut buf, FORMAT_VERSION);
    buf.push(match model.head_kind() {
        HeadKind::GapFc => 0,
        HeadKind::BuiltInCam => 1,
    });
    push_u32(&mut buf, model.class_count() as u32);
    let (c, h, w) = model.input_shape();
    push_u32(&mut buf, c as u32);
    push_u32(&mut buf, h as u32);
    push_u32(&mut buf, w as u32);
    push_u32(&mut buf, model.layers().len() as u32);

    for layer in model.layers() {
        match layer {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                buf.push(TAG_CONV);
                for v in [in_channels, out_channels, kernel, stride, padding] {
                    push_u32(&mut buf, *v as u32);
                }
            }
            LayerSpec::ReLU => buf.push(TAG_RELU),
            LayerSpec::MaxPool2 => buf.push(TAG_MAXPOOL2),
            LayerSpec::GlobalAvgPool => buf.push(TAG_GAP),
            LayerSpec::Flatten => buf.push(TAG_FLATTEN),
            LayerSpec::FullyConnected {
                in_features,
                out_features,
                ..
            } => {
                buf.push(TAG_FC);
                push_u32(&mut buf, *in_features as u32);
                push_u32(&mut buf, *out_features as u32);
            }
            LayerSpec::PointwiseConvHead {
                in_channels,
                out_channels,
                ..
            } => {
                buf.push(TAG_POINTWISE_HEAD);
                push_u32(&mut buf, *in_channels as u32);
                push_u32(&mut buf, *out_channels as u32);
            }
            LayerSpec::SpatialAverage => buf.push(TAG_SPATIAL_AVG),
            LayerSpec::Softmax => buf.push(TAG_SOFTMAX),
        }
    }

    for layer in model.layers() {
        let slots = match layer {
            LayerSpec::Conv { weight, bias, .. }
            | LayerSpec::FullyConnected { weight, bias, .. }
            | LayerSpec::PointwiseConvHead { weight, bias, .. } => Some((weight, bias)),
            _ => None,
        };
        if let Some((weight, bias)) = slots {
            let wt = model.params().tensor(weight).expect("validated slot");
            buf.extend_from_slice(&t4f::to_bytes(wt));
            let bv = model.params().vector(bias).expect("validated slot");
            let bias_tensor = Tensor4::new(1, bv.len(), 1, 1, bv.clone()).expect("bias tensor");
            buf.extend_from_slice(&t4f::to_bytes(&bias_tensor));
        }
    }

    let crc = crc32(&buf);
    push_u32(&mut buf, crc);
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn read_u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn read_u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn read_usize(&mut self) -> Result<usize> {
        Ok(self.read_u32()? as usize)
    }

    fn read_tensor(&mut self) -> Result<Tensor4> {
        let header = self
            .bytes
            .get(self.pos..self.pos + t4f::HEADER_LEN)
            .ok_or_else(|| Error::format(self.path, "truncated tensor record"))?;
        let record_len = t4f::record_len(header)
            .ok_or_else(|| Error::format(self.path, "malformed tensor record header"))?;
        let record = self.take(record_len)?;
        t4f::from_bytes(record, &self.path.display().to_string())
    }
}

/// Parses checkpoint bytes. `path` is used only for error messages.
pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<ModelGraph> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::format(path, "truncated checkpoint"));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([crc_bytes[0], crc_bytes[1], crc_bytes[2], crc_bytes[3]]);
    let computed = crc32(body);
    if stored != computed {
        return Err(Error::format(
            path,
            format!("checksum mismatch (stored {stored:08x}, computed {computed:08x})"),
        ));
    }

    let mut cur = Cursor { bytes: body, pos: 0, path };
    if cur.take(4)? != MAGIC {
        return Err(Error::format(path, "bad magic (expected CGF1)"));
    }
    let version = cur.read_u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::format(path, format!("unsupported format version {version}")));
    }
    let head_kind = match cur.read_u8()? {
        0 => HeadKind::GapFc,
        1 => HeadKind::BuiltInCam,
        other => return Err(Error::format(path, format!("unknown head kind {other}"))),
    };
    let class_count = cur.read_usize()?;
    let input_shape = (cur.read_usize()?, cur.read_usize()?, cur.read_usize()?);
    let layer_count = cur.read_usize()?;

    let mut layers = Vec::with_capacity(layer_count);
    for index in 0..layer_count {
        let tag = cur.read_u8()?;
        let (weight, bias) = slot_names(index);
        let layer = match tag {
            TAG_CONV => LayerSpec::Conv {
                in_channels: cur.read_usize()?,
                out_channels: cur.read_usize()?,
                kernel: cur.read_usize()?,
                stride: cur.read_usize()?,
                padding: cur.read_usize()?,
                weight,
                bias,
            },
            TAG_RELU => LayerSpec::ReLU,
            TAG_MAXPOOL2 => LayerSpec::MaxPool2,
            TAG_GAP => LayerSpec::GlobalAvgPool,
            TAG_FLATTEN => LayerSpec::Flatten,
            TAG_FC => LayerSpec::FullyConnected {
                in_features: cur.read_usize()?,
                out_features: cur.read_usize()?,
                weight,
                bias,
            },
            TAG_POINTWISE_HEAD => LayerSpec::PointwiseConvHead {
                in_channels: cur.read_usize()?,
                out_channels: cur.read_usize()?,
                weight,
                bias,
            },
            TAG_SPATIAL_AVG => LayerSpec::SpatialAverage,
            TAG_SOFTMAX => LayerSpec::Softmax,
            other => {
                return Err(Error::format(
                    path,
                    format!("unsupported layer kind tag {other} at layer {index}"),
                ))
            }
        };
        layers.push(layer);
    }

    let mut params = ParamStore::new();
    for (index, layer) in layers.iter().enumerate() {
        let parameterized = matches!(
            layer,
            LayerSpec::Conv { .. } | LayerSpec::FullyConnected { .. } | LayerSpec::PointwiseConvHead { .. }
        );
        if parameterized {
            let (wslot, bslot) = slot_names(index);
            params.insert_tensor(wslot, cur.read_tensor()?);
            let bias_tensor = cur.read_tensor()?;
            params.insert_vector(bslot, bias_tensor.data().to_vec());
        }
    }
    if cur.pos != body.len() {
        return Err(Error::format(path, "trailing bytes after parameter records"));
    }

    ModelGraph::new(layers, params, input_shape, class_count, head_kind)
}

/// Writes a checkpoint atomically (temp file + rename).
pub fn save(model: &ModelGraph, path: &Path) -> Result<()> {
    t4f::write_atomic(path, &to_bytes(model))
}

/// Reads and validates a checkpoint.
pub fn load(path: &Path) -> Result<ModelGraph> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
