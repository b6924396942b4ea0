//! Little-endian binary formats for diagrams (`TPD1`), images (`TPI1`) and
//! network weights (`TWT1`).
//!
//! ```text
//! TPD1  magic[4] | u8 dimension | u32 count | count x (f64 birth, f64 lifetime)
//! TPI1  magic[4] | u32 rows | u32 cols | u32 channels | rows*cols*channels x f32
//! TWT1  magic[4] | u32 layers | per layer: u32 tensors,
//!                              per tensor: u32 ndim | ndim x u32 dim | f32 entries
//! ```

use crate::error::{Error, Result};
use crate::nn::{LayerStack, Scalar, Tensor};
use crate::types::{PersistenceDiagram, PersistenceImage, PersistencePoint};

pub const PD_MAGIC: &[u8; 4] = b"TPD1";
pub const PI_MAGIC: &[u8; 4] = b"TPI1";
pub const WEIGHTS_MAGIC: &[u8; 4] = b"TWT1";

/// Per-layer parameter and state tensors, in stack order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub layers: Vec<Vec<Tensor<f32>>>,
}

impl WeightSet {
    pub fn tensor_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn value_count(&self) -> usize {
        self.layers.iter().flatten().map(Tensor::len).sum()
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::decode(format!(
                    "truncated input: need {n} bytes at offset {}, have {}",
                    self.pos,
                    self.bytes.len() - self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != expected {
            return Err(Error::decode(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::decode(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn len_u32(n: usize, what: &str) -> u32 {
    u32::try_from(n).unwrap_or_else(|_| panic!("{what} {n} exceeds u32"))
}

pub fn encode_pd(pd: &PersistenceDiagram) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 16 * pd.len());
    out.extend_from_slice(PD_MAGIC);
    out.push(pd.dimension());
    out.extend_from_slice(&len_u32(pd.len(), "point count").to_le_bytes());
    for p in pd.points() {
        out.extend_from_slice(&p.birth.to_le_bytes());
        out.extend_from_slice(&p.lifetime.to_le_bytes());
    }
    out
}

pub fn decode_pd(bytes: &[u8]) -> Result<PersistenceDiagram> {
    let mut r = Reader::new(bytes);
    r.magic(PD_MAGIC)?;
    let dimension = r.u8()?;
    if dimension > 1 {
        return Err(Error::decode(format!("homology dimension {dimension} out of range")));
    }
    let count = r.u32()? as usize;
    // Bound the allocation by what the payload can actually hold.
    let mut points = Vec::with_capacity(count.min(bytes.len() / 16));
    for i in 0..count {
        let birth = r.f64()?;
        let lifetime = r.f64()?;
        if !birth.is_finite() || !lifetime.is_finite() {
            return Err(Error::decode(format!("non-finite value in point {i}")));
        }
        if lifetime < 0.0 {
            return Err(Error::decode(format!("negative lifetime in point {i}")));
        }
        points.push(PersistencePoint { birth, lifetime });
    }
    r.finish()?;
    PersistenceDiagram::new(dimension, points).map_err(|e| Error::decode(e.to_string()))
}

pub fn encode_pi(pi: &PersistenceImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * pi.data().len());
    out.extend_from_slice(PI_MAGIC);
    out.extend_from_slice(&len_u32(pi.rows(), "rows").to_le_bytes());
    out.extend_from_slice(&len_u32(pi.cols(), "cols").to_le_bytes());
    out.extend_from_slice(&len_u32(pi.channels(), "channels").to_le_bytes());
    for v in pi.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_pi(bytes: &[u8]) -> Result<PersistenceImage> {
    let mut r = Reader::new(bytes);
    r.magic(PI_MAGIC)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let channels = r.u32()? as usize;
    if rows == 0 || cols == 0 || channels == 0 {
        return Err(Error::decode(format!(
            "zero dimension in header {rows}x{cols}x{channels}"
        )));
    }
    let n = rows
        .checked_mul(cols)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::decode("image dimensions overflow"))?;
    if n.checked_mul(4).is_none_or(|b| b > bytes.len()) {
        return Err(Error::decode(format!(
            "truncated input: header declares {n} entries"
        )));
    }
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let v = r.f32()?;
        if !v.is_finite() {
            return Err(Error::decode("non-finite image entry"));
        }
        data.push(v);
    }
    r.finish()?;
    PersistenceImage::new(rows, cols, channels, data).map_err(|e| Error::decode(e.to_string()))
}

pub fn encode_weight_set(weights: &WeightSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * weights.value_count());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&len_u32(weights.layers.len(), "layer count").to_le_bytes());
    for layer in &weights.layers {
        out.extend_from_slice(&len_u32(layer.len(), "tensor count").to_le_bytes());
        for t in layer {
            out.extend_from_slice(&len_u32(t.shape().len(), "rank").to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&len_u32(d, "dimension").to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn decode_weight_set(bytes: &[u8]) -> Result<WeightSet> {
    let mut r = Reader::new(bytes);
    r.magic(WEIGHTS_MAGIC)?;
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::with_capacity(n_layers.min(bytes.len() / 4));
    for li in 0..n_layers {
        let n_tensors = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors.min(bytes.len() / 4));
        for ti in 0..n_tensors {
            let rank = r.u32()? as usize;
            if rank == 0 || rank > 8 {
                return Err(Error::decode(format!(
                    "layer {li} tensor {ti}: unsupported rank {rank}"
                )));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n > 0 && n.saturating_mul(4) <= bytes.len())
                .ok_or_else(|| {
                    Error::decode(format!("layer {li} tensor {ti}: bad shape {shape:?}"))
                })?;
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                let v = r.f32()?;
                if !v.is_finite() {
                    return Err(Error::decode(format!(
                        "layer {li} tensor {ti}: non-finite weight"
                    )));
                }
                data.push(v);
            }
            tensors.push(Tensor::new(shape, data)?);
        }
        layers.push(tensors);
    }
    r.finish()?;
    Ok(WeightSet { layers })
}

pub fn encode_weights<T: Scalar>(stack: &LayerStack<T>) -> Vec<u8> {
    encode_weight_set(&stack.weight_set())
}

/// Decodes a `TWT1` payload; apply it with [`LayerStack::load_weights`].
pub fn decode_weights(bytes: &[u8]) -> Result<WeightSet> {
    decode_weight_set(bytes)
}
