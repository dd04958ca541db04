//! Inference-time packing: masked-dense layers become block-diagonal
//! matrices, and the mask permutations move onto the activations.
//!
//! For a mask with permutations `(p_row, p_col)` the packed weights are
//! `W*[r][c] = W[p_row[r]][p_col[c]]` and the packed bias `b*[r] = b[p_row[r]]`.
//! A layer fed `x*[c] = x[p_col[c]]` then produces `z*[r] = z[p_row[r]]`, so
//! between layers `i` and `i + 1` the activations are re-gathered by
//! `g[c] = inv(p_row_i)[p_col_{i+1}[c]]`, which is the identity exactly when
//! `p_col_{i+1} == p_row_i`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{block_matmul_with, permute_matrix, to_block_diagonal, BlockDiagMatrix, DenseMatrix, MacCounter, Transpose};
use crate::maskgen::{block_pattern, BinaryMask, BlockPattern};
use crate::perm::Permutation;
use crate::train::{relu_in_place, Layer, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct PackedLayer {
    weights: BlockDiagMatrix,
    bias: Vec<f64>,
    p_row: Permutation,
    p_col: Permutation,
}

impl PackedLayer {
    /// Assembles a layer from already-packed parts.
    pub fn new(weights: BlockDiagMatrix, bias: Vec<f64>, p_row: Permutation, p_col: Permutation) -> Result<Self> {
        if bias.len() != weights.rows() || p_row.len() != weights.rows() {
            return Err(Error::DimensionMismatch {
                context: "packed layer rows",
                expected: weights.rows(),
                found: if bias.len() != weights.rows() { bias.len() } else { p_row.len() },
            });
        }
        if p_col.len() != weights.cols() {
            return Err(Error::DimensionMismatch {
                context: "packed layer columns",
                expected: weights.cols(),
                found: p_col.len(),
            });
        }
        Ok(Self {
            weights,
            bias,
            p_row,
            p_col,
        })
    }

    pub fn weights(&self) -> &BlockDiagMatrix {
        &self.weights
    }

    /// Bias in packed row order.
    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn p_row(&self) -> &Permutation {
        &self.p_row
    }

    pub fn p_col(&self) -> &Permutation {
        &self.p_col
    }

    pub fn d_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weights.rows()
    }

    /// Weights and bias back in original coordinates.
    pub fn unpack(&self) -> (DenseMatrix, Vec<f64>) {
        let w = permute_matrix(&self.weights.to_dense(), &self.p_row, &self.p_col, Transpose::NONE)
            .expect("packed permutations match the weight shape");
        let bias = self.p_row.scatter(&self.bias).expect("bias length checked");
        (w, bias)
    }
}

/// Packs one masked layer. Fails with a structure violation if `w` has a
/// nonzero outside the mask support.
pub fn pack_layer(w: &DenseMatrix, bias: &[f64], mask: &BinaryMask) -> Result<PackedLayer> {
    pack_with(w, bias, mask.p_row(), mask.p_col(), mask.pattern())
}

fn pack_with(
    w: &DenseMatrix,
    bias: &[f64],
    p_row: &Permutation,
    p_col: &Permutation,
    pattern: &BlockPattern,
) -> Result<PackedLayer> {
    let gathered = permute_matrix(w, p_row, p_col, Transpose::BOTH)?;
    let blocks = to_block_diagonal(&gathered, pattern)?;
    let bias = p_row.gather(bias)?;
    PackedLayer::new(blocks, bias, p_row.clone(), p_col.clone())
}

/// A packed network plus the activation gathers between its layers.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedModel {
    layers: Vec<PackedLayer>,
    input_perm: Permutation,
    boundary_perms: Vec<Permutation>,
    output_perm: Permutation,
}

impl PackedModel {
    pub fn new(layers: Vec<PackedLayer>) -> Result<Self> {
        let (first, last) = match (layers.first(), layers.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::EmptyArchitecture),
        };
        let mut boundary_perms = Vec::with_capacity(layers.len() - 1);
        for pair in layers.windows(2) {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::DimensionMismatch {
                    context: "layer chaining",
                    expected: pair[0].d_out(),
                    found: pair[1].d_in(),
                });
            }
            boundary_perms.push(pair[1].p_col.compose(&pair[0].p_row.invert())?);
        }
        Ok(Self {
            input_perm: first.p_col.clone(),
            output_perm: last.p_row.invert(),
            boundary_perms,
            layers,
        })
    }

    pub fn layers(&self) -> &[PackedLayer] {
        &self.layers
    }

    pub fn input_perm(&self) -> &Permutation {
        &self.input_perm
    }

    /// Gather applied between layer `i` and `i + 1`.
    pub fn boundary_perms(&self) -> &[Permutation] {
        &self.boundary_perms
    }

    pub fn output_perm(&self) -> &Permutation {
        &self.output_perm
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out()
    }

    /// Interior boundaries that need an actual gather.
    pub fn interior_gathers(&self) -> usize {
        self.boundary_perms.iter().filter(|p| !p.is_identity()).count()
    }

    /// Masked-dense model with the same function.
    pub fn unpack(&self, masks: &[Option<BinaryMask>]) -> Result<Model> {
        if masks.len() != self.layers.len() {
            return Err(Error::DimensionMismatch {
                context: "mask count",
                expected: self.layers.len(),
                found: masks.len(),
            });
        }
        let layers = self
            .layers
            .iter()
            .zip(masks)
            .map(|(l, m)| {
                let (w, b) = l.unpack();
                Layer::new(w, b, m.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Model::from_layers(layers)
    }
}

/// Packs every layer of `model`.
///
/// Unmasked layers become single-block layers. Their permutations are chosen
/// to absorb the neighbors' (columns follow the previous layer's rows, rows
/// follow the next masked layer's columns), which costs nothing since a dense
/// block can be stored in any order, and leaves the boundaries around them
/// free of gathers.
pub fn pack_model(model: &Model) -> Result<PackedModel> {
    let layers = model.layers();
    let mut packed: Vec<PackedLayer> = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let p = match layer.mask() {
            Some(mask) => pack_layer(layer.weights(), layer.bias(), mask)?,
            None => {
                let p_col = match packed.last() {
                    Some(prev) => prev.p_row.clone(),
                    None => Permutation::identity(layer.d_in()),
                };
                let p_row = match layers.get(i + 1).and_then(Layer::mask) {
                    Some(next) => next.p_col().clone(),
                    None => Permutation::identity(layer.d_out()),
                };
                let pattern = block_pattern(layer.d_out(), layer.d_in(), 1)?;
                pack_with(layer.weights(), layer.bias(), &p_row, &p_col, &pattern)?
            }
        };
        packed.push(p);
    }
    PackedModel::new(packed)
}

fn gather_rows(x: &DenseMatrix, p: &Permutation) -> DenseMatrix {
    let width = x.cols();
    let mut data = Vec::with_capacity(x.rows() * width);
    for &src in p.as_slice() {
        data.extend_from_slice(x.row(src));
    }
    DenseMatrix::from_vec(x.rows(), width, data).expect("same shape")
}

/// Packed forward pass over a feature-major batch, single-threaded.
pub fn packed_forward(packed: &PackedModel, batch: &DenseMatrix, counter: &mut MacCounter) -> Result<DenseMatrix> {
    packed_forward_with(packed, batch, counter, 1)
}

/// As [`packed_forward`], with each layer's blocks spread over `threads`.
pub fn packed_forward_with(
    packed: &PackedModel,
    batch: &DenseMatrix,
    counter: &mut MacCounter,
    threads: usize,
) -> Result<DenseMatrix> {
    if batch.rows() != packed.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "packed forward input",
            expected: packed.input_dim(),
            found: batch.rows(),
        });
    }
    let width = batch.cols();
    let last = packed.layers.len() - 1;
    let mut h = gather_rows(batch, &packed.input_perm);
    for (i, layer) in packed.layers.iter().enumerate() {
        let mut z = block_matmul_with(&layer.weights, &h, counter, threads)?;
        for (r, &b) in layer.bias.iter().enumerate() {
            for v in &mut z.as_mut_slice()[r * width..(r + 1) * width] {
                *v += b;
            }
        }
        if i == last {
            return Ok(gather_rows(&z, &packed.output_perm));
        }
        relu_in_place(&mut z);
        let g = &packed.boundary_perms[i];
        h = if g.is_identity() { z } else { gather_rows(&z, g) };
    }
    unreachable!("the last layer returns")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub d_in: usize,
    pub d_out: usize,
    /// Block count; 1 for unmasked layers.
    pub k: usize,
    pub dense_weights: usize,
    pub stored_weights: usize,
    pub biases: usize,
    pub weight_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompressionReport {
    pub layers: Vec<LayerReport>,
    pub dense_weights: usize,
    pub stored_weights: usize,
    pub biases: usize,
    pub dense_params: usize,
    pub stored_params: usize,
    /// `dense_weights / stored_weights`.
    pub weight_ratio: f64,
    /// `dense_params / stored_params`, biases included on both sides.
    pub param_ratio: f64,
    pub dense_macs_per_sample: u64,
    pub packed_macs_per_sample: u64,
    pub interior_gathers: usize,
}

/// Parameter and MAC accounting for `model` as it would be packed.
pub fn compression_report(model: &Model) -> Result<CompressionReport> {
    let packed = pack_model(model)?;
    let layers: Vec<LayerReport> = packed
        .layers
        .iter()
        .map(|l| {
            let dense = l.d_in() * l.d_out();
            let stored = l.weights.stored();
            LayerReport {
                d_in: l.d_in(),
                d_out: l.d_out(),
                k: l.weights.pattern().k(),
                dense_weights: dense,
                stored_weights: stored,
                biases: l.d_out(),
                weight_ratio: dense as f64 / stored as f64,
            }
        })
        .collect();
    let dense_weights: usize = layers.iter().map(|l| l.dense_weights).sum();
    let stored_weights: usize = layers.iter().map(|l| l.stored_weights).sum();
    let biases: usize = layers.iter().map(|l| l.biases).sum();
    Ok(CompressionReport {
        dense_weights,
        stored_weights,
        biases,
        dense_params: dense_weights + biases,
        stored_params: stored_weights + biases,
        weight_ratio: dense_weights as f64 / stored_weights as f64,
        param_ratio: (dense_weights + biases) as f64 / (stored_weights + biases) as f64,
        dense_macs_per_sample: dense_weights as u64,
        packed_macs_per_sample: stored_weights as u64,
        interior_gathers: packed.interior_gathers(),
        layers,
    })
}
