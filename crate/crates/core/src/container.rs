//! Binary containers for masks (`MPDM`) and models (`MPDC`).
//!
//! Everything is little-endian. Masks store only the generator output
//! (shape, k, seeds, permutations); the support is rebuilt on load.
//!
//! Model layers are written as `d_in, d_out, k` (u32), `p_row` (d_out u32),
//! `p_col` (d_in u32), then weights and bias as f64. In masked-dense files
//! the weights are the full `d_out x d_in` matrix row-major and `k = 0`
//! marks an unmasked layer. In packed files the weights are the blocks in
//! order, each row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{BlockDiagMatrix, DenseMatrix};
use crate::maskgen::{block_pattern, BinaryMask};
use crate::pack::{PackedLayer, PackedModel};
use crate::perm::Permutation;
use crate::train::{Layer, Model};

pub const MASK_MAGIC: &[u8; 4] = b"MPDM";
pub const MODEL_MAGIC: &[u8; 4] = b"MPDC";
pub const VERSION: u32 = 1;

const MODE_DENSE: u8 = 0;
const MODE_PACKED: u8 = 1;

/// A decoded `MPDC` file.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Dense(Model),
    Packed(PackedModel),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("dimension fits in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn perm(&mut self, p: &Permutation) {
        p.as_slice().iter().for_each(|&i| self.u32(i));
    }

    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated(what))?;
        let out = self.bytes.get(self.pos..end).ok_or(Error::Truncated(what))?;
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn perm(&mut self, n: usize, what: &'static str) -> Result<Permutation> {
        let raw = self.take(n.checked_mul(4).ok_or(Error::Truncated(what))?, what)?;
        let map = raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        Permutation::from_vec(map)
    }

    fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or(Error::Truncated(what))?, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let found = self.take(4, "magic")?;
        if found != magic {
            return Err(Error::BadMagic {
                expected: u32::from_be_bytes(*magic),
                found: u32::from_be_bytes(found.try_into().expect("4 bytes")),
            });
        }
        let version = self.u32("version")? as u32;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Malformed(format!(
                "{} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn encode_mask(mask: &BinaryMask) -> Vec<u8> {
    let mut w = Writer(MASK_MAGIC.to_vec());
    w.u32(VERSION as usize);
    w.u32(mask.rows());
    w.u32(mask.cols());
    w.u32(mask.k());
    w.u64(mask.row_seed());
    w.u64(mask.col_seed());
    w.perm(mask.p_row());
    w.perm(mask.p_col());
    w.0
}

pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    let mut rd = Reader { bytes, pos: 0 };
    rd.header(MASK_MAGIC)?;
    let m = rd.u32("mask shape")?;
    let n = rd.u32("mask shape")?;
    let k = rd.u32("mask shape")?;
    let row_seed = rd.u64("mask seeds")?;
    let col_seed = rd.u64("mask seeds")?;
    let p_row = rd.perm(m, "row permutation")?;
    let p_col = rd.perm(n, "column permutation")?;
    rd.finish()?;
    Ok(BinaryMask::from_parts(block_pattern(m, n, k)?, p_row, p_col)?.with_seeds(row_seed, col_seed))
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let mut w = Writer(MODEL_MAGIC.to_vec());
    w.u32(VERSION as usize);
    w.0.push(MODE_DENSE);
    w.u32(model.n_layers());
    for layer in model.layers() {
        w.u32(layer.d_in());
        w.u32(layer.d_out());
        match layer.mask() {
            Some(mask) => {
                w.u32(mask.k());
                w.perm(mask.p_row());
                w.perm(mask.p_col());
            }
            None => {
                w.u32(0);
                w.perm(&Permutation::identity(layer.d_out()));
                w.perm(&Permutation::identity(layer.d_in()));
            }
        }
        w.f64s(layer.weights().as_slice());
        w.f64s(layer.bias());
    }
    w.0
}

pub fn encode_packed(packed: &PackedModel) -> Vec<u8> {
    let mut w = Writer(MODEL_MAGIC.to_vec());
    w.u32(VERSION as usize);
    w.0.push(MODE_PACKED);
    w.u32(packed.layers().len());
    for layer in packed.layers() {
        w.u32(layer.d_in());
        w.u32(layer.d_out());
        w.u32(layer.weights().pattern().k());
        w.perm(layer.p_row());
        w.perm(layer.p_col());
        for block in layer.weights().blocks() {
            w.f64s(block.as_slice());
        }
        w.f64s(layer.bias());
    }
    w.0
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelFile> {
    let mut rd = Reader { bytes, pos: 0 };
    rd.header(MODEL_MAGIC)?;
    let mode = rd.u8("mode")?;
    if mode != MODE_DENSE && mode != MODE_PACKED {
        return Err(Error::Malformed(format!("unknown model mode {mode}")));
    }
    let n_layers = rd.u32("layer count")?;
    if n_layers == 0 {
        return Err(Error::EmptyArchitecture);
    }
    let mut dense = Vec::new();
    let mut packed = Vec::new();
    for _ in 0..n_layers {
        let d_in = rd.u32("layer header")?;
        let d_out = rd.u32("layer header")?;
        let k = rd.u32("layer header")?;
        let p_row = rd.perm(d_out, "row permutation")?;
        let p_col = rd.perm(d_in, "column permutation")?;
        if mode == MODE_DENSE {
            let weights = DenseMatrix::from_vec(d_out, d_in, rd.f64s(d_out * d_in, "weights")?)?;
            let bias = rd.f64s(d_out, "bias")?;
            let mask = match k {
                0 => None,
                k => Some(BinaryMask::from_parts(block_pattern(d_out, d_in, k)?, p_row, p_col)?),
            };
            dense.push(Layer::new(weights, bias, mask)?);
        } else {
            let pattern = block_pattern(d_out, d_in, k)?;
            let blocks = (0..k)
                .map(|b| {
                    let (r, c) = pattern.block_shape(b);
                    DenseMatrix::from_vec(r, c, rd.f64s(r * c, "block weights")?)
                })
                .collect::<Result<Vec<_>>>()?;
            let bias = rd.f64s(d_out, "bias")?;
            packed.push(PackedLayer::new(BlockDiagMatrix::new(pattern, blocks)?, bias, p_row, p_col)?);
        }
    }
    rd.finish()?;
    if mode == MODE_DENSE {
        Ok(ModelFile::Dense(Model::from_layers(dense)?))
    } else {
        Ok(ModelFile::Packed(PackedModel::new(packed)?))
    }
}

pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    Ok(fs::write(path, encode_mask(mask))?)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    decode_mask(&fs::read(path)?)
}

pub fn write_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    Ok(fs::write(path, encode_model(model))?)
}

pub fn write_packed(path: impl AsRef<Path>, packed: &PackedModel) -> Result<()> {
    Ok(fs::write(path, encode_packed(packed))?)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    decode_model(&fs::read(path)?)
}
