//! Layer kinds and their forward/backward kernels.
//!
//! Activations are NHWC. Convolutions are 3x3, stride 1, zero padding 1, and
//! run as im2col + GEMM. Kernels here are pure functions of their inputs; the
//! activation cache lives on [`Layer`] and is managed by `Network`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{gemm, Op, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv2d,
    MaxPool2x2,
    Dense,
    Relu,
    Softmax,
    Flatten,
}

impl LayerKind {
    /// Tag byte used by the checkpoint format.
    pub fn tag(self) -> u8 {
        match self {
            LayerKind::Conv2d => 0,
            LayerKind::MaxPool2x2 => 1,
            LayerKind::Dense => 2,
            LayerKind::Relu => 3,
            LayerKind::Softmax => 4,
            LayerKind::Flatten => 5,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => LayerKind::Conv2d,
            1 => LayerKind::MaxPool2x2,
            2 => LayerKind::Dense,
            3 => LayerKind::Relu,
            4 => LayerKind::Softmax,
            5 => LayerKind::Flatten,
            _ => return None,
        })
    }

    pub fn has_params(self) -> bool {
        matches!(self, LayerKind::Conv2d | LayerKind::Dense)
    }
}

/// Parameter gradients of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad<T> {
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Result of [`Layer::backward`].
#[derive(Clone, Debug)]
pub struct LayerGrads<T> {
    pub input: Option<Tensor<T>>,
    pub params: Option<ParamGrad<T>>,
}

#[derive(Clone, Debug)]
pub struct Layer<T> {
    kind: LayerKind,
    weights: Option<Tensor<T>>,
    bias: Option<Tensor<T>>,
    pub(crate) cached_input: Option<Tensor<T>>,
    pub(crate) cached_output: Option<Tensor<T>>,
}

fn he_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: Vec<usize>,
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let limit = (6.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-limit..limit)))
}

impl<T: Scalar> Layer<T> {
    fn bare(kind: LayerKind) -> Self {
        Layer {
            kind,
            weights: None,
            bias: None,
            cached_input: None,
            cached_output: None,
        }
    }

    /// 3x3 convolution with He-uniform weights `[3, 3, in, out]` and zero bias.
    pub fn conv2d<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let w = he_uniform(vec![3, 3, in_channels, out_channels], 9 * in_channels, rng);
        let mut layer = Self::bare(LayerKind::Conv2d);
        layer.weights = Some(w);
        layer.bias = Some(Tensor::zeros(vec![out_channels]));
        layer
    }

    /// Fully connected layer with weights `[in, out]`.
    pub fn dense<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let w = he_uniform(vec![inputs, outputs], inputs, rng);
        let mut layer = Self::bare(LayerKind::Dense);
        layer.weights = Some(w);
        layer.bias = Some(Tensor::zeros(vec![outputs]));
        layer
    }

    pub fn relu() -> Self {
        Self::bare(LayerKind::Relu)
    }

    pub fn maxpool() -> Self {
        Self::bare(LayerKind::MaxPool2x2)
    }

    pub fn flatten() -> Self {
        Self::bare(LayerKind::Flatten)
    }

    pub fn softmax() -> Self {
        Self::bare(LayerKind::Softmax)
    }

    /// Build a parameterised layer from explicit tensors.
    pub fn with_params(kind: LayerKind, weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let out = *weights.shape().last().unwrap_or(&0);
        let ok = match kind {
            LayerKind::Conv2d => {
                weights.rank() == 4 && weights.shape()[0] == 3 && weights.shape()[1] == 3
            }
            LayerKind::Dense => weights.rank() == 2,
            _ => false,
        };
        if !ok || bias.shape() != [out] {
            return Err(Error::Shape(format!(
                "{kind:?} cannot take weights {:?} and bias {:?}",
                weights.shape(),
                bias.shape()
            )));
        }
        let mut layer = Self::bare(kind);
        layer.weights = Some(weights);
        layer.bias = Some(bias);
        Ok(layer)
    }

    /// Parameter-free layer of the given kind.
    pub fn without_params(kind: LayerKind) -> Result<Self> {
        if kind.has_params() {
            return Err(Error::InvalidArgument(format!("{kind:?} needs parameters")));
        }
        Ok(Self::bare(kind))
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn weights(&self) -> Option<&Tensor<T>> {
        self.weights.as_ref()
    }

    pub fn bias(&self) -> Option<&Tensor<T>> {
        self.bias.as_ref()
    }

    pub fn weights_mut(&mut self) -> Option<&mut Tensor<T>> {
        self.weights.as_mut()
    }

    pub fn bias_mut(&mut self) -> Option<&mut Tensor<T>> {
        self.bias.as_mut()
    }

    pub fn cached_input(&self) -> Option<&Tensor<T>> {
        self.cached_input.as_ref()
    }

    pub fn cached_output(&self) -> Option<&Tensor<T>> {
        self.cached_output.as_ref()
    }

    pub fn clear_cache(&mut self) {
        self.cached_input = None;
        self.cached_output = None;
    }

    pub fn cast<U: Scalar>(&self) -> Layer<U> {
        Layer {
            kind: self.kind,
            weights: self.weights.as_ref().map(Tensor::cast),
            bias: self.bias.as_ref().map(Tensor::cast),
            cached_input: None,
            cached_output: None,
        }
    }

    /// Output shape (including the batch axis) for an input of `shape`.
    pub fn output_shape(&self, shape: &[usize]) -> Result<Vec<usize>> {
        let bad = |why: &str| Error::Shape(format!("{:?} input {shape:?}: {why}", self.kind));
        match self.kind {
            LayerKind::Conv2d => {
                let w = self.weights.as_ref().expect("conv has weights");
                if shape.len() != 4 || shape[3] != w.shape()[2] {
                    return Err(bad("expected [N, H, W, in_channels]"));
                }
                Ok(vec![shape[0], shape[1], shape[2], w.shape()[3]])
            }
            LayerKind::MaxPool2x2 => {
                if shape.len() != 4 {
                    return Err(bad("expected [N, H, W, C]"));
                }
                if !shape[1].is_multiple_of(2) || !shape[2].is_multiple_of(2) {
                    return Err(bad("spatial dims must be even"));
                }
                Ok(vec![shape[0], shape[1] / 2, shape[2] / 2, shape[3]])
            }
            LayerKind::Dense => {
                let w = self.weights.as_ref().expect("dense has weights");
                if shape.len() != 2 || shape[1] != w.shape()[0] {
                    return Err(bad("expected [N, inputs]"));
                }
                Ok(vec![shape[0], w.shape()[1]])
            }
            LayerKind::Relu => Ok(shape.to_vec()),
            LayerKind::Softmax => {
                if shape.len() != 2 {
                    return Err(bad("expected [N, K]"));
                }
                Ok(shape.to_vec())
            }
            LayerKind::Flatten => {
                if shape.is_empty() {
                    return Err(bad("empty shape"));
                }
                Ok(vec![shape[0], shape[1..].iter().product()])
            }
        }
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out_shape = self.output_shape(input.shape())?;
        let out = match self.kind {
            LayerKind::Conv2d => conv_forward(
                input,
                self.weights.as_ref().unwrap(),
                self.bias.as_ref().unwrap(),
                out_shape,
            ),
            LayerKind::MaxPool2x2 => maxpool_forward(input, out_shape),
            LayerKind::Dense => dense_forward(
                input,
                self.weights.as_ref().unwrap(),
                self.bias.as_ref().unwrap(),
            ),
            LayerKind::Relu => input.map(|x| if x > T::zero() { x } else { T::zero() }),
            LayerKind::Softmax => softmax_forward(input),
            LayerKind::Flatten => input.clone().reshape(out_shape)?,
        };
        Ok(out)
    }

    /// Backpropagate `grad_out` (dL/d output) through this layer.
    ///
    /// `input`/`output` are the activations from the matching forward pass.
    pub fn backward(
        &self,
        input: &Tensor<T>,
        output: &Tensor<T>,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
        need_param_grad: bool,
    ) -> Result<LayerGrads<T>> {
        if grad_out.shape() != output.shape() {
            return Err(Error::Shape(format!(
                "{:?} backward: gradient {:?} vs output {:?}",
                self.kind,
                grad_out.shape(),
                output.shape()
            )));
        }
        let grads = match self.kind {
            LayerKind::Conv2d => conv_backward(
                input,
                self.weights.as_ref().unwrap(),
                grad_out,
                need_input_grad,
                need_param_grad,
            ),
            LayerKind::Dense => dense_backward(
                input,
                self.weights.as_ref().unwrap(),
                grad_out,
                need_input_grad,
                need_param_grad,
            ),
            LayerKind::MaxPool2x2 => LayerGrads {
                input: need_input_grad.then(|| maxpool_backward(input, grad_out)),
                params: None,
            },
            LayerKind::Relu => LayerGrads {
                input: need_input_grad.then(|| {
                    let mut g = grad_out.clone();
                    for (gi, &x) in g.data_mut().iter_mut().zip(input.data()) {
                        if x <= T::zero() {
                            *gi = T::zero();
                        }
                    }
                    g
                }),
                params: None,
            },
            LayerKind::Softmax => LayerGrads {
                input: need_input_grad.then(|| softmax_backward(output, grad_out)),
                params: None,
            },
            LayerKind::Flatten => LayerGrads {
                input: if need_input_grad {
                    Some(grad_out.clone().reshape(input.shape().to_vec())?)
                } else {
                    None
                },
                params: None,
            },
        };
        Ok(grads)
    }
}

/// Unfold a `[N, H, W, C]` input into rows of 3x3 patches: `[N*H*W, 9*C]`,
/// column order `(ky, kx, c)`, zero padded.
pub(crate) fn im2col<T: Scalar>(x: &[T], n: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    let row_len = 9 * c;
    let mut col = vec![T::zero(); n * h * w * row_len];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let row = ((b * h + y) * w + xx) * row_len;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let src = ((b * h + sy as usize) * w + sx as usize) * c;
                        let dst = row + (ky * 3 + kx) * c;
                        col[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    col
}

/// Inverse of [`im2col`]: scatter-add patch rows back into `[N, H, W, C]`.
pub(crate) fn col2im<T: Scalar>(col: &[T], n: usize, h: usize, w: usize, c: usize) -> Vec<T> {
    let row_len = 9 * c;
    let mut x = vec![T::zero(); n * h * w * c];
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                let row = ((b * h + y) * w + xx) * row_len;
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = xx as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let dst = ((b * h + sy as usize) * w + sx as usize) * c;
                        let src = row + (ky * 3 + kx) * c;
                        for (d, &s) in x[dst..dst + c].iter_mut().zip(&col[src..src + c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    x
}

fn conv_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    out_shape: Vec<usize>,
) -> Tensor<T> {
    let (n, h, w, c) = dims4(input.shape());
    let out_c = out_shape[3];
    let col = im2col(input.data(), n, h, w, c);
    let rows = n * h * w;
    let mut out = vec![T::zero(); rows * out_c];
    for row in out.chunks_mut(out_c) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        rows,
        9 * c,
        out_c,
        &col,
        Op::Plain,
        weights.data(),
        Op::Plain,
        &mut out,
        T::one(),
    );
    Tensor::new(out_shape, out).expect("conv output shape")
}

fn conv_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
    need_param_grad: bool,
) -> LayerGrads<T> {
    let (n, h, w, c) = dims4(input.shape());
    let out_c = grad_out.shape()[3];
    let rows = n * h * w;
    let k = 9 * c;
    let params = need_param_grad.then(|| {
        let col = im2col(input.data(), n, h, w, c);
        let mut dw = vec![T::zero(); k * out_c];
        gemm(
            k,
            rows,
            out_c,
            &col,
            Op::Transposed,
            grad_out.data(),
            Op::Plain,
            &mut dw,
            T::zero(),
        );
        let mut db = vec![T::zero(); out_c];
        for row in grad_out.data().chunks(out_c) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        ParamGrad {
            weights: Tensor::new(weights.shape().to_vec(), dw).unwrap(),
            bias: Tensor::new(vec![out_c], db).unwrap(),
        }
    });
    let input_grad = need_input_grad.then(|| {
        let mut dcol = vec![T::zero(); rows * k];
        gemm(
            rows,
            out_c,
            k,
            grad_out.data(),
            Op::Plain,
            weights.data(),
            Op::Transposed,
            &mut dcol,
            T::zero(),
        );
        Tensor::new(input.shape().to_vec(), col2im(&dcol, n, h, w, c)).unwrap()
    });
    LayerGrads {
        input: input_grad,
        params,
    }
}

fn dense_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Tensor<T> {
    let n = input.shape()[0];
    let (inputs, outputs) = (weights.shape()[0], weights.shape()[1]);
    let mut out = vec![T::zero(); n * outputs];
    for row in out.chunks_mut(outputs) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        n,
        inputs,
        outputs,
        input.data(),
        Op::Plain,
        weights.data(),
        Op::Plain,
        &mut out,
        T::one(),
    );
    Tensor::new(vec![n, outputs], out).unwrap()
}

fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
    need_param_grad: bool,
) -> LayerGrads<T> {
    let n = input.shape()[0];
    let (inputs, outputs) = (weights.shape()[0], weights.shape()[1]);
    let params = need_param_grad.then(|| {
        let mut dw = vec![T::zero(); inputs * outputs];
        gemm(
            inputs,
            n,
            outputs,
            input.data(),
            Op::Transposed,
            grad_out.data(),
            Op::Plain,
            &mut dw,
            T::zero(),
        );
        let mut db = vec![T::zero(); outputs];
        for row in grad_out.data().chunks(outputs) {
            for (d, &g) in db.iter_mut().zip(row) {
                *d += g;
            }
        }
        ParamGrad {
            weights: Tensor::new(vec![inputs, outputs], dw).unwrap(),
            bias: Tensor::new(vec![outputs], db).unwrap(),
        }
    });
    let input_grad = need_input_grad.then(|| {
        let mut dx = vec![T::zero(); n * inputs];
        gemm(
            n,
            outputs,
            inputs,
            grad_out.data(),
            Op::Plain,
            weights.data(),
            Op::Transposed,
            &mut dx,
            T::zero(),
        );
        Tensor::new(input.shape().to_vec(), dx).unwrap()
    });
    LayerGrads {
        input: input_grad,
        params,
    }
}

/// Flat index (within the input) of the winning element of each pooling
/// window, ties resolved to the first element in row-major order.
pub(crate) fn maxpool_winners<T: Scalar>(input: &Tensor<T>) -> Vec<usize> {
    let (n, h, w, c) = dims4(input.shape());
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut winners = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let idx =
                        |dy: usize, dx: usize| ((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    let mut best = idx(0, 0);
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = idx(dy, dx);
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                    winners.push(best);
                }
            }
        }
    }
    winners
}

fn maxpool_forward<T: Scalar>(input: &Tensor<T>, out_shape: Vec<usize>) -> Tensor<T> {
    let x = input.data();
    let data = maxpool_winners(input).into_iter().map(|i| x[i]).collect();
    Tensor::new(out_shape, data).unwrap()
}

fn maxpool_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input.shape().to_vec());
    for (&i, &g) in maxpool_winners(input).iter().zip(grad_out.data()) {
        dx.data_mut()[i] += g;
    }
    dx
}

fn softmax_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let k = input.shape()[1];
    let mut out = input.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    out
}

fn softmax_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let k = output.shape()[1];
    let mut dx = grad_out.clone();
    for (row_dx, row_y) in dx.data_mut().chunks_mut(k).zip(output.data().chunks(k)) {
        let dot: T = row_dx.iter().zip(row_y).map(|(&g, &y)| g * y).sum();
        for (g, &y) in row_dx.iter_mut().zip(row_y) {
            *g = y * (*g - dot);
        }
    }
    dx
}

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    (shape[0], shape[1], shape[2], shape[3])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_kernel_reproduces_input() {
        let mut w = Tensor::<f64>::zeros(vec![3, 3, 1, 1]);
        w.data_mut()[4] = 1.0; // centre tap
        let conv = Layer::with_params(LayerKind::Conv2d, w, Tensor::zeros(vec![1])).unwrap();
        let x = Tensor::from_fn(vec![2, 4, 6, 1], |i| (i as f64 * 0.37).sin());
        let y = conv.forward(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn maxpool_takes_window_max() {
        let x = Tensor::new(vec![1, 2, 2, 1], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let y = Layer::<f32>::maxpool().forward(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        let x = Tensor::<f32>::zeros(vec![1, 3, 4, 1]);
        assert!(Layer::<f32>::maxpool().forward(&x).is_err());
    }

    #[test]
    fn maxpool_tie_goes_to_first() {
        let x = Tensor::new(vec![1, 2, 2, 1], vec![5.0f32, 5.0, 5.0, 5.0]).unwrap();
        assert_eq!(maxpool_winners(&x), vec![0]);
        let g = Tensor::new(vec![1, 1, 1, 1], vec![1.0f32]).unwrap();
        let out = Layer::<f32>::maxpool().forward(&x).unwrap();
        let dx = Layer::<f32>::maxpool()
            .backward(&x, &out, &g, true, false)
            .unwrap()
            .input
            .unwrap();
        assert_eq!(dx.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(vec![16, 7], |_| rng.random_range(-30.0f32..30.0));
        let y = Layer::<f32>::softmax().forward(&x).unwrap();
        for row in y.data().chunks(7) {
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "sum {s}");
        }
    }

    #[test]
    fn dense_hand_gradient() {
        // y = w1 a1 + w2 a2, dL/dy = 3 => dL/dw = a * 3, dL/da = w * 3
        let w = Tensor::new(vec![2, 1], vec![0.5f64, -2.0]).unwrap();
        let layer = Layer::with_params(LayerKind::Dense, w, Tensor::zeros(vec![1])).unwrap();
        let a = Tensor::new(vec![1, 2], vec![1.5f64, 4.0]).unwrap();
        let y = layer.forward(&a).unwrap();
        assert_eq!(y.data(), &[0.75 - 8.0]);
        let g = Tensor::new(vec![1, 1], vec![3.0f64]).unwrap();
        let grads = layer.backward(&a, &y, &g, true, true).unwrap();
        let p = grads.params.unwrap();
        assert_eq!(p.weights.data(), &[4.5, 12.0]);
        assert_eq!(p.bias.data(), &[3.0]);
        assert_eq!(grads.input.unwrap().data(), &[1.5, -6.0]);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        // <im2col(x), y> == <x, col2im(y)>
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, h, w, c) = (2, 5, 4, 3);
        let x: Vec<f64> = (0..n * h * w * c)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let y: Vec<f64> = (0..n * h * w * 9 * c)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let lhs: f64 = im2col(&x, n, h, w, c)
            .iter()
            .zip(&y)
            .map(|(a, b)| a * b)
            .sum();
        let rhs: f64 = x
            .iter()
            .zip(col2im(&y, n, h, w, c))
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
