//! Block-structured CNN: five conv blocks followed by a dense softmax head.
//!
//! Blocks are the unit of freezing. Every layer belongs to exactly one block,
//! blocks are ordered input to output, and the last block is always the head
//! (`flatten -> dense -> softmax`).

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Layer, LayerKind, ParamGrad};
use crate::tensor::{Scalar, Tensor};

pub const HEAD_BLOCK: &str = "head";

/// Number of convolution blocks in the default architecture.
pub const CONV_BLOCKS: usize = 5;

/// Shape of a network: square input, one conv (+ReLU, optional 2x2 pool)
/// per block, dense softmax head.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_size: usize,
    pub input_channels: usize,
    pub conv_widths: Vec<usize>,
    /// Whether each block ends with a 2x2 max-pool.
    pub pooled: Vec<bool>,
    pub num_classes: usize,
}

impl Default for Architecture {
    /// 48x48x1 input, widths `[8, 16, 32, 64, 64]`. 48 only halves four
    /// times, so the fifth block keeps its 3x3 map instead of pooling.
    fn default() -> Self {
        Architecture {
            input_size: 48,
            input_channels: 1,
            conv_widths: vec![8, 16, 32, 64, 64],
            pooled: vec![true, true, true, true, false],
            num_classes: 8,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.conv_widths.is_empty() || self.conv_widths.len() != self.pooled.len() {
            return Err(Error::InvalidArgument(
                "conv_widths and pooled must be non-empty and the same length".into(),
            ));
        }
        if self.num_classes < 2 || self.input_channels == 0 || self.conv_widths.contains(&0) {
            return Err(Error::InvalidArgument(
                "need at least 2 classes and positive channel counts".into(),
            ));
        }
        let mut size = self.input_size;
        for (i, &pool) in self.pooled.iter().enumerate() {
            if pool {
                if !size.is_multiple_of(2) || size == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "block {} pools an odd spatial size {size}",
                        i + 1
                    )));
                }
                size /= 2;
            }
        }
        if size == 0 {
            return Err(Error::InvalidArgument("input too small".into()));
        }
        Ok(())
    }

    /// Spatial size of the last conv block's output.
    pub fn feature_size(&self) -> usize {
        self.pooled
            .iter()
            .fold(self.input_size, |s, &p| if p { s / 2 } else { s })
    }

    /// Length of the flattened last-conv-block activation.
    pub fn feature_len(&self) -> usize {
        let s = self.feature_size();
        s * s * self.conv_widths.last().copied().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub layers: Range<usize>,
    pub trainable: bool,
}

/// Metadata carried through checkpoints.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub seed: u64,
    pub epochs: u32,
}

/// How many leading conv blocks are frozen during a transfer run
/// (`FreezeB<i>`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FreezePlan {
    frozen_blocks: usize,
}

impl FreezePlan {
    pub fn new(frozen_blocks: usize) -> Result<Self> {
        if frozen_blocks > CONV_BLOCKS {
            return Err(Error::InvalidArgument(format!(
                "freeze plan {frozen_blocks} out of range 0..={CONV_BLOCKS}"
            )));
        }
        Ok(FreezePlan { frozen_blocks })
    }

    pub fn frozen_blocks(self) -> usize {
        self.frozen_blocks
    }

    /// `FreezeB0` .. `FreezeB5`.
    pub fn label(self) -> String {
        format!("FreezeB{}", self.frozen_blocks)
    }

    pub fn all() -> impl Iterator<Item = FreezePlan> {
        (0..=CONV_BLOCKS).map(|i| FreezePlan { frozen_blocks: i })
    }

    /// Per-block trainable flags for a network with `conv_blocks` conv blocks
    /// (head last, always trainable).
    pub fn trainable_flags(self, conv_blocks: usize) -> Vec<bool> {
        (0..conv_blocks)
            .map(|i| i >= self.frozen_blocks)
            .chain(std::iter::once(true))
            .collect()
    }
}

/// Gradients for every layer, aligned with `Network::layers`. Parameter-free
/// layers are `None`; frozen parameter layers hold zeros.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub layers: Vec<Option<ParamGrad<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flatten()
            .all(|g| g.weights.is_finite() && g.bias.is_finite())
    }

    /// True when every entry is zero (e.g. an all-frozen network).
    pub fn is_zero(&self) -> bool {
        self.layers.iter().flatten().all(|g| {
            g.weights.data().iter().all(|x| x.is_zero())
                && g.bias.data().iter().all(|x| x.is_zero())
        })
    }
}

#[derive(Clone, Debug)]
pub struct Network<T> {
    input_shape: [usize; 3],
    blocks: Vec<Block>,
    layers: Vec<Layer<T>>,
    meta: TrainMeta,
}

impl<T: Scalar> Network<T> {
    /// Fresh network with seeded He-uniform weights.
    pub fn new<R: Rng + ?Sized>(arch: &Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut layers = Vec::new();
        let mut blocks = Vec::new();
        let mut channels = arch.input_channels;
        for (i, (&width, &pool)) in arch.conv_widths.iter().zip(&arch.pooled).enumerate() {
            let start = layers.len();
            layers.push(Layer::conv2d(channels, width, rng));
            layers.push(Layer::relu());
            if pool {
                layers.push(Layer::maxpool());
            }
            blocks.push(Block {
                name: format!("block{}", i + 1),
                layers: start..layers.len(),
                trainable: true,
            });
            channels = width;
        }
        let start = layers.len();
        layers.push(Layer::flatten());
        layers.push(Layer::dense(arch.feature_len(), arch.num_classes, rng));
        layers.push(Layer::softmax());
        blocks.push(Block {
            name: HEAD_BLOCK.into(),
            layers: start..layers.len(),
            trainable: true,
        });
        Network::from_parts(
            [arch.input_size, arch.input_size, arch.input_channels],
            blocks,
            layers,
            TrainMeta::default(),
        )
    }

    /// Assemble and validate a network from explicit parts.
    pub fn from_parts(
        input_shape: [usize; 3],
        blocks: Vec<Block>,
        layers: Vec<Layer<T>>,
        meta: TrainMeta,
    ) -> Result<Self> {
        let net = Network {
            input_shape,
            blocks,
            layers,
            meta,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.blocks.len() < 2 {
            return bad("need at least one conv block and a head".into());
        }
        let mut next = 0;
        for b in &self.blocks {
            if b.layers.start != next || b.layers.end <= b.layers.start {
                return bad(format!(
                    "blocks do not partition the layers at `{}`",
                    b.name
                ));
            }
            next = b.layers.end;
        }
        if next != self.layers.len() {
            return bad("blocks do not cover every layer".into());
        }
        let head = self.blocks.last().unwrap();
        let head_kinds: Vec<_> = self.layers[head.layers.clone()]
            .iter()
            .map(|l| l.kind())
            .collect();
        if head.name != HEAD_BLOCK
            || head_kinds != [LayerKind::Flatten, LayerKind::Dense, LayerKind::Softmax]
        {
            return bad("last block must be `head` = flatten, dense, softmax".into());
        }
        for b in &self.blocks[..self.blocks.len() - 1] {
            let kinds: Vec<_> = self.layers[b.layers.clone()]
                .iter()
                .map(|l| l.kind())
                .collect();
            let ok = matches!(
                kinds.as_slice(),
                [LayerKind::Conv2d, LayerKind::Relu]
                    | [LayerKind::Conv2d, LayerKind::Relu, LayerKind::MaxPool2x2]
            );
            if !ok {
                return bad(format!("block `{}` must be conv, relu[, maxpool]", b.name));
            }
        }
        let mut names: Vec<_> = self.blocks.iter().map(|b| b.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.blocks.len() {
            return bad("duplicate block names".into());
        }
        // shapes chain from input to output
        let mut shape = vec![
            1,
            self.input_shape[0],
            self.input_shape[1],
            self.input_shape[2],
        ];
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.head_dense().weights().unwrap().shape()[1]
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn meta(&self) -> TrainMeta {
        self.meta
    }

    pub fn set_meta(&mut self, meta: TrainMeta) {
        self.meta = meta;
    }

    /// Number of blocks before the head.
    pub fn conv_block_count(&self) -> usize {
        self.blocks.len() - 1
    }

    /// One past the last layer of the last conv block.
    pub fn feature_end(&self) -> usize {
        self.blocks[self.blocks.len() - 2].layers.end
    }

    pub fn architecture(&self) -> Architecture {
        let conv = &self.blocks[..self.conv_block_count()];
        Architecture {
            input_size: self.input_shape[0],
            input_channels: self.input_shape[2],
            conv_widths: conv
                .iter()
                .map(|b| self.layers[b.layers.start].weights().unwrap().shape()[3])
                .collect(),
            pooled: conv.iter().map(|b| b.layers.len() == 3).collect(),
            num_classes: self.num_classes(),
        }
    }

    fn head_dense(&self) -> &Layer<T> {
        let head = self.blocks.last().unwrap();
        &self.layers[head.layers.start + 1]
    }

    pub fn block(&self, name: &str) -> Result<&Block> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::UnknownBlock(name.into()))
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let block = self
            .blocks
            .iter_mut()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::UnknownBlock(name.into()))?;
        block.trainable = trainable;
        Ok(())
    }

    pub fn is_trainable(&self, name: &str) -> Result<bool> {
        Ok(self.block(name)?.trainable)
    }

    /// `FreezeB<i>`: first `i` conv blocks frozen, the rest and the head
    /// trainable.
    pub fn apply_freeze_plan(&mut self, plan: FreezePlan) -> Result<()> {
        let conv = self.conv_block_count();
        if plan.frozen_blocks() > conv {
            return Err(Error::InvalidArgument(format!(
                "{} freezes more blocks than the network has ({conv})",
                plan.label()
            )));
        }
        for (block, flag) in self.blocks.iter_mut().zip(plan.trainable_flags(conv)) {
            block.trainable = flag;
        }
        Ok(())
    }

    /// Freeze every conv block, leave the head trainable.
    pub fn freeze_features(&mut self) {
        let conv = self.conv_block_count();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            block.trainable = i >= conv;
        }
    }

    /// Swap in a freshly initialised `num_classes`-way head.
    pub fn replace_head<R: Rng + ?Sized>(&mut self, num_classes: usize, rng: &mut R) -> Result<()> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument(
                "head needs at least 2 classes".into(),
            ));
        }
        let inputs = self.head_dense().weights().unwrap().shape()[0];
        let idx = self.blocks.last().unwrap().layers.start + 1;
        self.layers[idx] = Layer::dense(inputs, num_classes, rng);
        self.clear_cache();
        Ok(())
    }

    pub fn clear_cache(&mut self) {
        for l in &mut self.layers {
            l.clear_cache();
        }
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            input_shape: self.input_shape,
            blocks: self.blocks.clone(),
            layers: self.layers.iter().map(Layer::cast).collect(),
            meta: self.meta,
        }
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        let s = batch.shape();
        if s.len() != 4 || s[1..] != self.input_shape {
            return Err(Error::Shape(format!(
                "batch {:?} does not match network input [N, {}, {}, {}]",
                s, self.input_shape[0], self.input_shape[1], self.input_shape[2]
            )));
        }
        Ok(())
    }

    /// Forward pass caching every layer's input and output; returns class
    /// probabilities `[N, K]`.
    pub fn forward(&mut self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        self.forward_cached_from(0, batch.clone())
    }

    /// Continue a cached forward pass from layer `start` given that layer's
    /// input. Layers below `start` have their caches cleared.
    pub fn forward_cached_from(&mut self, start: usize, input: Tensor<T>) -> Result<Tensor<T>> {
        for l in &mut self.layers[..start] {
            l.clear_cache();
        }
        let mut x = input;
        for layer in &mut self.layers[start..] {
            let y = layer.forward(&x)?;
            layer.cached_input = Some(x);
            x = y;
            layer.cached_output = Some(x.clone());
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("forward output".into()));
        }
        Ok(x)
    }

    /// Forward pass without touching the caches.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        let out = self.forward_range(0..self.layers.len(), batch.clone())?;
        if !out.is_finite() {
            return Err(Error::NonFinite("forward output".into()));
        }
        Ok(out)
    }

    /// Run layers `range` on `input` (the input of `range.start`), no caching.
    pub fn forward_range(&self, range: Range<usize>, input: Tensor<T>) -> Result<Tensor<T>> {
        let mut x = input;
        for layer in &self.layers[range] {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    /// Output of the last conv block, `[N, H', W', C']`.
    pub fn features(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        self.forward_range(0..self.feature_end(), batch.clone())
    }

    /// Argmax class per sample.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(self.infer(batch)?.argmax_rows())
    }

    /// Pre-softmax scores from the most recent cached forward pass.
    pub fn cached_logits(&self) -> Option<&Tensor<T>> {
        self.layers.last().and_then(|l| l.cached_input())
    }

    fn block_of_layer(&self, layer: usize) -> &Block {
        self.blocks
            .iter()
            .find(|b| b.layers.contains(&layer))
            .unwrap()
    }

    /// First layer index belonging to a trainable block, if any.
    pub fn first_trainable_layer(&self) -> Option<usize> {
        self.blocks
            .iter()
            .find(|b| b.trainable)
            .map(|b| b.layers.start)
    }

    /// Backpropagate `logits_grad` (dL/d pre-softmax scores, `[N, K]`) through
    /// the cached forward pass. The softmax itself is folded into the loss
    /// gradient.
    pub fn backward(&mut self, logits_grad: &Tensor<T>) -> Result<Gradients<T>> {
        let softmax_idx = self.layers.len() - 1;
        let logits = self.layers[softmax_idx]
            .cached_input()
            .ok_or(Error::MissingForward)?;
        if logits.shape() != logits_grad.shape() {
            return Err(Error::Shape(format!(
                "logit gradient {:?} vs logits {:?}",
                logits_grad.shape(),
                logits.shape()
            )));
        }
        let mut grads: Vec<Option<ParamGrad<T>>> = self
            .layers
            .iter()
            .map(|l| {
                l.weights().map(|w| ParamGrad {
                    weights: Tensor::zeros(w.shape().to_vec()),
                    bias: Tensor::zeros(l.bias().unwrap().shape().to_vec()),
                })
            })
            .collect();
        let Some(lowest) = self.first_trainable_layer() else {
            return Ok(Gradients { layers: grads });
        };
        let mut g = logits_grad.clone();
        for idx in (lowest..softmax_idx).rev() {
            let layer = &self.layers[idx];
            let input = layer.cached_input().ok_or(Error::MissingForward)?;
            let output = layer.cached_output().ok_or(Error::MissingForward)?;
            let trainable = self.block_of_layer(idx).trainable;
            let lg = layer.backward(
                input,
                output,
                &g,
                idx > lowest,
                trainable && layer.kind().has_params(),
            )?;
            if let Some(p) = lg.params {
                grads[idx] = Some(p);
            }
            match lg.input {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(Gradients { layers: grads })
    }

    /// Plain SGD: `w <- w - lr * grad` on trainable blocks only.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, learning_rate: f64) -> Result<()> {
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate {learning_rate}"
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape("gradient set does not match network".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients; SGD step rejected".into()));
        }
        for (idx, g) in grads.layers.iter().enumerate() {
            let layer = &self.layers[idx];
            match (g, layer.weights()) {
                (Some(g), Some(w)) if g.weights.shape() == w.shape() => {}
                (None, None) => {}
                _ => {
                    return Err(Error::Shape(format!(
                        "gradient for layer {idx} has the wrong shape"
                    )))
                }
            }
        }
        if learning_rate == 0.0 {
            return Ok(());
        }
        let lr = T::from_f64(learning_rate);
        let trainable: Vec<bool> = (0..self.layers.len())
            .map(|i| self.block_of_layer(i).trainable)
            .collect();
        for ((layer, g), train) in self.layers.iter_mut().zip(&grads.layers).zip(trainable) {
            let (Some(g), true) = (g, train) else {
                continue;
            };
            for (w, &d) in layer
                .weights_mut()
                .unwrap()
                .data_mut()
                .iter_mut()
                .zip(g.weights.data())
            {
                *w -= lr * d;
            }
            for (b, &d) in layer
                .bias_mut()
                .unwrap()
                .data_mut()
                .iter_mut()
                .zip(g.bias.data())
            {
                *b -= lr * d;
            }
        }
        Ok(())
    }

    /// Raw little-endian f32 bytes of every parameter in `block`.
    pub fn block_bytes(&self, name: &str) -> Result<Vec<u8>> {
        let block = self.block(name)?;
        let mut out = Vec::new();
        for layer in &self.layers[block.layers.clone()] {
            for t in [layer.weights(), layer.bias()].into_iter().flatten() {
                for &x in t.data() {
                    out.extend_from_slice(&(x.to_f64() as f32).to_le_bytes());
                }
            }
        }
        Ok(out)
    }
}
