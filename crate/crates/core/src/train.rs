//! Masked training of fully-connected ReLU networks.
//!
//! Each masked layer keeps `W == M ∘ W` at all times: gradients are computed
//! as usual and the mask is applied to the updated weights after every step.
//! Activations are stored feature-major (one column per sample), which keeps
//! the innermost loops running over contiguous batch entries.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{check_mask_shape, DenseMatrix};
use crate::maskgen::{block_pattern, BinaryMask};
use crate::perm::Permutation;
use crate::dataio::Dataset;
use crate::rng::{derive_layer_seeds, LayerSeeds, Rng64};

/// How the column permutation of a masked layer relates to the row
/// permutation of the masked layer feeding it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskAlignment {
    /// Every permutation drawn from its own seed.
    #[default]
    Independent,
    /// Layer `i + 1` reuses layer `i`'s row permutation on its columns, so
    /// the two cancel at the boundary and packed inference needs no gather
    /// there.
    Aligned,
}

/// Layer widths plus the block count of every masked layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    layer_dims: Vec<usize>,
    mask_k: Vec<Option<usize>>,
    permute: bool,
    alignment: MaskAlignment,
}

impl Architecture {
    /// `layer_dims` lists d1..d(n+1); `masked` lists `(layer, k)` with layers
    /// numbered from 1.
    pub fn new(layer_dims: Vec<usize>, masked: &[(usize, usize)]) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::EmptyArchitecture);
        }
        if let Some(i) = layer_dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidArchitecture(format!("layer width {i} is zero")));
        }
        let n = layer_dims.len() - 1;
        let mut mask_k = vec![None; n];
        for &(layer, k) in masked {
            if layer == 0 || layer > n {
                return Err(Error::InvalidArchitecture(format!(
                    "masked layer {layer} outside 1..={n}"
                )));
            }
            if mask_k[layer - 1].replace(k).is_some() {
                return Err(Error::InvalidArchitecture(format!("layer {layer} masked twice")));
            }
            block_pattern(layer_dims[layer], layer_dims[layer - 1], k)?;
        }
        Ok(Self {
            layer_dims,
            mask_k,
            permute: true,
            alignment: MaskAlignment::Independent,
        })
    }

    /// 784-300-100-10 with the first two layers masked at `k` blocks.
    pub fn lenet_300_100(k: usize) -> Self {
        Self::new(vec![784, 300, 100, 10], &[(1, k), (2, k)]).expect("valid LeNet architecture")
    }

    /// `false` keeps masks block diagonal (identity permutations).
    pub fn with_permutation(mut self, permute: bool) -> Self {
        self.permute = permute;
        self
    }

    pub fn with_alignment(mut self, alignment: MaskAlignment) -> Self {
        self.alignment = alignment;
        self
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn n_layers(&self) -> usize {
        self.mask_k.len()
    }

    /// Block count of layer `i` (0-based), `None` when unmasked.
    pub fn mask_k(&self, i: usize) -> Option<usize> {
        self.mask_k[i]
    }

    pub fn permute(&self) -> bool {
        self.permute
    }

    pub fn alignment(&self) -> MaskAlignment {
        self.alignment
    }
}

/// One fully-connected layer `d_out x d_in` with an optional mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weights: DenseMatrix,
    bias: Vec<f64>,
    mask: Option<BinaryMask>,
    // compressed-row support of the mask, cached for the kernels
    row_ptr: Vec<usize>,
    support_cols: Vec<usize>,
}

impl Layer {
    /// Fails with a structure violation if a masked layer has a nonzero
    /// weight outside the mask support.
    pub fn new(weights: DenseMatrix, bias: Vec<f64>, mask: Option<BinaryMask>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::DimensionMismatch {
                context: "layer bias",
                expected: weights.rows(),
                found: bias.len(),
            });
        }
        if weights.as_slice().iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Malformed("layer parameters must be finite".into()));
        }
        let (row_ptr, support_cols) = match &mask {
            Some(mask) => {
                check_mask_shape(&weights, mask)?;
                for r in 0..weights.rows() {
                    for (c, &v) in weights.row(r).iter().enumerate() {
                        if v != 0.0 && !mask.contains(r, c) {
                            return Err(Error::StructureViolation { row: r, col: c });
                        }
                    }
                }
                mask.csr()
            }
            None => (Vec::new(), Vec::new()),
        };
        Ok(Self {
            weights,
            bias,
            mask,
            row_ptr,
            support_cols,
        })
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn mask(&self) -> Option<&BinaryMask> {
        self.mask.as_ref()
    }

    pub fn d_in(&self) -> usize {
        self.weights.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weights.rows()
    }

    /// Weights that can be nonzero: mask support size, or all of them.
    pub fn active_weights(&self) -> usize {
        self.mask.as_ref().map_or(self.d_in() * self.d_out(), BinaryMask::nnz)
    }

    fn row_support(&self, r: usize) -> Option<&[usize]> {
        self.mask
            .as_ref()
            .map(|_| &self.support_cols[self.row_ptr[r]..self.row_ptr[r + 1]])
    }

    /// `W · x + b` over a feature-major batch. Masked layers visit only the
    /// support, in ascending column order; skipped terms are exact zeros.
    fn affine(&self, x: &DenseMatrix) -> DenseMatrix {
        let width = x.cols();
        let mut out = DenseMatrix::zeros(self.d_out(), width);
        let xs = x.as_slice();
        for r in 0..self.d_out() {
            let w_row = self.weights.row(r);
            let dst = out.row_mut(r);
            let mut accumulate = |c: usize| {
                let w = w_row[c];
                for (o, &xv) in dst.iter_mut().zip(&xs[c * width..(c + 1) * width]) {
                    *o += w * xv;
                }
            };
            match self.row_support(r) {
                Some(cols) => cols.iter().for_each(|&c| accumulate(c)),
                None => (0..self.d_in()).for_each(&mut accumulate),
            }
            let b = self.bias[r];
            for o in dst.iter_mut() {
                *o += b;
            }
        }
        out
    }
}

/// Feed-forward network; ReLU after every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
}

impl Model {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::EmptyArchitecture);
        }
        for pair in layers.windows(2) {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::DimensionMismatch {
                    context: "layer chaining",
                    expected: pair[0].d_out(),
                    found: pair[1].d_in(),
                });
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].d_out()
    }

    /// True when every masked layer has no weight outside its support.
    pub fn conforms_to_masks(&self) -> bool {
        self.layers.iter().all(|l| match &l.mask {
            Some(mask) => (0..l.d_out()).all(|r| {
                l.weights
                    .row(r)
                    .iter()
                    .enumerate()
                    .all(|(c, &v)| v == 0.0 || mask.contains(r, c))
            }),
            None => true,
        })
    }
}

/// Builds masks and draws initial weights.
///
/// The seed stream first yields the `(row, col)` mask seed of every layer
/// (see [`derive_layer_seeds`]), then continues with the weights: each layer
/// row-major, uniform in `(-sqrt(6 / d_in), sqrt(6 / d_in))`. Biases start at
/// zero and the masks are applied once so the model conforms immediately.
pub fn init_model(arch: &Architecture, master_seed: u64) -> Result<Model> {
    let n = arch.n_layers();
    let seeds = derive_layer_seeds(master_seed, n)?;
    let mut rng = Rng64::new(master_seed);
    for _ in 0..2 * n {
        rng.next_u64();
    }
    let dims = arch.layer_dims();
    let mut layers = Vec::with_capacity(n);
    let mut prev_row_perm: Option<Permutation> = None;
    for i in 0..n {
        let (d_in, d_out) = (dims[i], dims[i + 1]);
        let mask = match arch.mask_k(i) {
            None => None,
            Some(k) if !arch.permute() => Some(BinaryMask::unpermuted(d_out, d_in, k)?),
            Some(k) => {
                let LayerSeeds { row_seed, col_seed } = seeds[i];
                let p_row = Permutation::random(d_out, row_seed)?;
                let p_col = match (&prev_row_perm, arch.alignment()) {
                    (Some(prev), MaskAlignment::Aligned) => prev.clone(),
                    _ => Permutation::random(d_in, col_seed)?,
                };
                Some(BinaryMask::from_parts(block_pattern(d_out, d_in, k)?, p_row, p_col)?.with_seeds(row_seed, col_seed))
            }
        };
        prev_row_perm = mask.as_ref().map(|m| m.p_row().clone());

        let limit = (6.0 / d_in as f64).sqrt();
        let mut weights = DenseMatrix::from_fn(d_out, d_in, |_, _| rng.uniform(-limit, limit));
        if let Some(mask) = &mask {
            crate::linalg::apply_mask_in_place(&mut weights, mask);
        }
        layers.push(Layer::new(weights, vec![0.0; d_out], mask)?);
    }
    Model::from_layers(layers)
}


/// Per-layer activations of a forward pass. `layers[0]` is the input batch,
/// `layers[i]` the output of layer `i` (post-ReLU for hidden layers, raw
/// logits for the last).
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    pub layers: Vec<DenseMatrix>,
}

impl Activations {
    pub fn logits(&self) -> &DenseMatrix {
        &self.layers[self.layers.len() - 1]
    }
}

/// Forward pass over a feature-major batch (`d_in x batch`).
pub fn forward(model: &Model, batch: &DenseMatrix) -> Result<Activations> {
    if batch.rows() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "forward input",
            expected: model.input_dim(),
            found: batch.rows(),
        });
    }
    let last = model.n_layers() - 1;
    let mut layers = Vec::with_capacity(model.n_layers() + 1);
    layers.push(batch.clone());
    for (i, layer) in model.layers.iter().enumerate() {
        let mut z = layer.affine(&layers[i]);
        if i != last {
            relu_in_place(&mut z);
        }
        layers.push(z);
    }
    Ok(Activations { layers })
}

pub(crate) fn relu_in_place(z: &mut DenseMatrix) {
    for v in z.as_mut_slice() {
        *v = v.max(0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

/// Which weight-gradient entries to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    /// Every entry.
    Dense,
    /// Only entries on the mask support of masked layers (others left at
    /// zero). The update step discards off-support entries, so training
    /// results are identical either way.
    Support,
}

/// Mean softmax cross-entropy over the batch and its dense gradients.
pub fn loss_and_grads(model: &Model, batch: &DenseMatrix, labels: &[usize]) -> Result<(f64, Gradients)> {
    backprop(model, batch, labels, GradScope::Dense)
}

/// Softmax cross-entropy over the columns of `logits`, averaged, together
/// with its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &DenseMatrix, labels: &[usize]) -> Result<(f64, DenseMatrix)> {
    let (classes, width) = logits.shape();
    if labels.len() != width {
        return Err(Error::DimensionMismatch {
            context: "label count",
            expected: width,
            found: labels.len(),
        });
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidLabel { label, classes });
    }
    let scale = 1.0 / width as f64;
    let mut grad = DenseMatrix::zeros(classes, width);
    let mut loss = 0.0;
    for (s, &label) in labels.iter().enumerate() {
        let max = (0..classes).map(|c| logits.get(c, s)).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..classes).map(|c| (logits.get(c, s) - max).exp()).sum();
        loss += denom.ln() + max - logits.get(label, s);
        for c in 0..classes {
            let p = (logits.get(c, s) - max).exp() / denom;
            let target = if c == label { 1.0 } else { 0.0 };
            grad.set(c, s, (p - target) * scale);
        }
    }
    Ok((loss * scale, grad))
}

pub fn backprop(model: &Model, batch: &DenseMatrix, labels: &[usize], scope: GradScope) -> Result<(f64, Gradients)> {
    let acts = forward(model, batch)?;
    let (loss, mut delta) = softmax_cross_entropy(acts.logits(), labels)?;
    let width = batch.cols();
    let mut grads: Vec<LayerGrads> = Vec::with_capacity(model.n_layers());
    for (i, layer) in model.layers.iter().enumerate().rev() {
        let input = &acts.layers[i];
        let xs = input.as_slice();
        let ds = delta.as_slice();
        let mut gw = DenseMatrix::zeros(layer.d_out(), layer.d_in());
        let support_only = scope == GradScope::Support;
        for r in 0..layer.d_out() {
            let d_row = &ds[r * width..(r + 1) * width];
            let g_row = gw.row_mut(r);
            match layer.row_support(r).filter(|_| support_only) {
                Some(cols) => {
                    for &c in cols {
                        g_row[c] = dot(d_row, &xs[c * width..(c + 1) * width]);
                    }
                }
                None => {
                    for (c, g) in g_row.iter_mut().enumerate() {
                        *g = dot(d_row, &xs[c * width..(c + 1) * width]);
                    }
                }
            }
        }
        let gb = (0..layer.d_out())
            .map(|r| ds[r * width..(r + 1) * width].iter().sum())
            .collect();

        if i > 0 {
            // delta_prev = (Wᵀ delta) ⊙ [input > 0]
            let mut prev = DenseMatrix::zeros(layer.d_in(), width);
            let ps = prev.as_mut_slice();
            for r in 0..layer.d_out() {
                let w_row = layer.weights.row(r);
                let d_row = &ds[r * width..(r + 1) * width];
                let mut scatter = |c: usize| {
                    let w = w_row[c];
                    for (p, &d) in ps[c * width..(c + 1) * width].iter_mut().zip(d_row) {
                        *p += w * d;
                    }
                };
                match layer.row_support(r) {
                    Some(cols) => cols.iter().for_each(|&c| scatter(c)),
                    None => (0..layer.d_in()).for_each(&mut scatter),
                }
            }
            for (p, &x) in ps.iter_mut().zip(xs) {
                if x <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        grads.push(LayerGrads { weights: gw, bias: gb });
    }
    grads.reverse();
    Ok((loss, Gradients { layers: grads }))
}

/// Dot product with four interleaved partial sums, combined in a fixed order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4 * 4;
    for (ca, cb) in a[..chunks].chunks_exact(4).zip(b[..chunks].chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = 0.0;
    for (x, y) in a[chunks..].iter().zip(&b[chunks..]) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn check_grad_shapes(model: &Model, grads: &Gradients) -> Result<()> {
    if grads.layers.len() != model.n_layers() {
        return Err(Error::DimensionMismatch {
            context: "gradient layer count",
            expected: model.n_layers(),
            found: grads.layers.len(),
        });
    }
    for (layer, g) in model.layers.iter().zip(&grads.layers) {
        if g.weights.shape() != layer.weights.shape() || g.bias.len() != layer.bias.len() {
            return Err(Error::DimensionMismatch {
                context: "gradient shape",
                expected: layer.weights.rows() * layer.weights.cols(),
                found: g.weights.rows() * g.weights.cols(),
            });
        }
    }
    Ok(())
}

/// Visits the weight indices an update may change: the support of masked
/// layers (everything else is zero before and after `W ← M ∘ (W − Δ)`), or
/// every index of an unmasked layer.
fn for_each_active(layer: &mut Layer, mut f: impl FnMut(&mut f64, usize)) {
    let Layer {
        weights,
        mask,
        row_ptr,
        support_cols,
        ..
    } = layer;
    let cols = weights.cols();
    let ws = weights.as_mut_slice();
    match mask {
        Some(_) => {
            for r in 0..row_ptr.len() - 1 {
                for &c in &support_cols[row_ptr[r]..row_ptr[r + 1]] {
                    let i = r * cols + c;
                    f(&mut ws[i], i);
                }
            }
        }
        None => ws.iter_mut().enumerate().for_each(|(i, w)| f(w, i)),
    }
}

/// `W ← M ∘ (W − lr ∇W)` for masked layers, `W ← W − lr ∇W` otherwise, and
/// `b ← b − lr ∇b`.
pub fn masked_sgd_step(model: &mut Model, grads: &Gradients, lr: f64) -> Result<()> {
    check_grad_shapes(model, grads)?;
    for (layer, g) in model.layers.iter_mut().zip(&grads.layers) {
        let gw = g.weights.as_slice();
        for_each_active(layer, |w, i| *w -= lr * gw[i]);
        for (b, gb) in layer.bias.iter_mut().zip(&g.bias) {
            *b -= lr * gb;
        }
    }
    Ok(())
}

/// First and second moment estimates for [`masked_adam_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &Model) -> Self {
        let w = || model.layers.iter().map(|l| vec![0.0; l.d_in() * l.d_out()]).collect();
        let b = || model.layers.iter().map(|l| vec![0.0; l.d_out()]).collect();
        Self {
            step: 0,
            m_w: w(),
            v_w: w(),
            m_b: b(),
            v_b: b(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam update followed by the same mask application as
/// [`masked_sgd_step`]. Moments are kept only for weights the mask allows.
pub fn masked_adam_step(
    model: &mut Model,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
    params: AdamParams,
) -> Result<()> {
    check_grad_shapes(model, grads)?;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - params.beta1.powi(t);
    let c2 = 1.0 - params.beta2.powi(t);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = params.beta1 * *m + (1.0 - params.beta1) * g;
        *v = params.beta2 * *v + (1.0 - params.beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + params.epsilon);
    };
    for (li, (layer, g)) in model.layers.iter_mut().zip(&grads.layers).enumerate() {
        let gw = g.weights.as_slice();
        let (mw, vw) = (&mut state.m_w[li], &mut state.v_w[li]);
        for_each_active(layer, |w, i| update(w, gw[i], &mut mw[i], &mut vw[i]));
        for (j, b) in layer.bias.iter_mut().enumerate() {
            update(b, g.bias[j], &mut state.m_b[li][j], &mut state.v_b[li][j]);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain SGD with a fixed learning rate.
    #[default]
    Sgd,
    Adam(AdamParams),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub master_seed: u64,
    pub shuffle: bool,
    pub optimizer: Optimizer,
}

impl TrainConfig {
    pub fn new(batch_size: usize, learning_rate: f64, epochs: usize, master_seed: u64) -> Self {
        Self {
            batch_size,
            learning_rate,
            epochs,
            master_seed,
            shuffle: true,
            optimizer: Optimizer::Sgd,
        }
    }

    pub fn with_optimizer(mut self, optimizer: Optimizer) -> Self {
        self.optimizer = optimizer;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochMetrics>,
}

// Mixed into the master seed for the epoch-shuffle stream, so shuffling does
// not replay the mask/weight stream.
const SHUFFLE_STREAM: u64 = 0xA076_1D64_78BD_642F;

/// Trains without per-epoch reporting beyond the returned history.
pub fn train(config: &TrainConfig, arch: &Architecture, data: &Dataset, eval: Option<&Dataset>) -> Result<TrainOutcome> {
    train_with(config, arch, data, eval, |_| {})
}

/// `epochs × ceil(N / batch_size)` masked steps. `on_epoch` sees each
/// epoch's metrics as soon as they are known.
pub fn train_with(
    config: &TrainConfig,
    arch: &Architecture,
    data: &Dataset,
    eval: Option<&Dataset>,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dims = arch.layer_dims();
    if data.dim() != dims[0] {
        return Err(Error::DimensionMismatch {
            context: "dataset dimension",
            expected: dims[0],
            found: data.dim(),
        });
    }
    let mut model = init_model(arch, config.master_seed)?;
    let mut adam = match config.optimizer {
        Optimizer::Adam(_) => Some(AdamState::new(&model)),
        Optimizer::Sgd => None,
    };
    let mut shuffle_rng = Rng64::new(config.master_seed ^ SHUFFLE_STREAM);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        if config.shuffle {
            shuffle_rng.shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch = data.batch(idx);
            let labels = data.batch_labels(idx);
            let (loss, grads) = backprop(&model, &batch, &labels, GradScope::Support)?;
            loss_sum += loss * idx.len() as f64;
            match (&mut adam, config.optimizer) {
                (Some(state), Optimizer::Adam(params)) => {
                    masked_adam_step(&mut model, &grads, state, config.learning_rate, params)?
                }
                _ => masked_sgd_step(&mut model, &grads, config.learning_rate)?,
            }
        }
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / data.len() as f64,
            eval_acc: eval.map(|e| evaluate(&model, e)).transpose()?,
        };
        on_epoch(&metrics);
        history.push(metrics);
    }
    Ok(TrainOutcome { model, history })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Predicted class per column of a logits matrix.
pub fn predictions(logits: &DenseMatrix) -> Vec<usize> {
    (0..logits.cols())
        .map(|s| argmax((0..logits.rows()).map(|c| logits.get(c, s))))
        .collect()
}

const EVAL_CHUNK: usize = 1000;

/// Fraction of samples whose argmax logit equals the label.
pub fn evaluate(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    let all: Vec<usize> = (0..data.len()).collect();
    for idx in all.chunks(EVAL_CHUNK) {
        let acts = forward(model, &data.batch(idx))?;
        correct += predictions(acts.logits())
            .iter()
            .zip(data.batch_labels(idx))
            .filter(|(p, l)| **p == *l)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}
