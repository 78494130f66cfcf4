//! Layer-wise relevance propagation.
//!
//! Relevance starts at the pre-softmax logit of the chosen class and flows
//! back to the input pixels. Dense layers use the z-rule, conv layers the
//! z⁺-rule (positive weights only), max-pool routes relevance to the window
//! winner and ReLU/flatten pass it through unchanged. Everything runs in f64
//! on a single image.
//!
//! The dense z-rule counts the bias as one more contributor in the
//! denominator, so a dense layer with biases leaks `R_j * b_j / z_j`. The
//! z⁺-rule ignores biases and conserves relevance exactly (up to the
//! stabiliser) unless a unit's positive pre-activation is zero.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::layers::{col2im, im2col, maxpool_winners, LayerKind};
use crate::network::Network;
use crate::pgm;
use crate::tensor::{gemm, Op, Scalar, Tensor};

/// Denominator stabiliser, added with the sign of the denominator.
pub const EPSILON: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    Raw,
    /// Each pixel's share of the total positive relevance.
    ConfidenceFraction,
    MinMax,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub width: usize,
    pub height: usize,
    /// Row-major, `width * height` values.
    pub values: Vec<f64>,
    pub normalization: Normalization,
    pub model_id: String,
    pub class_id: usize,
    /// Normalisation had nothing to work with (no positive relevance, or a
    /// zero-range difference).
    pub degenerate: bool,
}

impl SaliencyMap {
    pub fn raw(
        width: usize,
        height: usize,
        values: Vec<f64>,
        model_id: &str,
        class_id: usize,
    ) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} map",
                values.len()
            )));
        }
        Ok(SaliencyMap {
            width,
            height,
            values,
            normalization: Normalization::Raw,
            model_id: model_id.into(),
            class_id,
            degenerate: false,
        })
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// A raw map plus the relevance total left at every layer interface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrpTrace {
    pub map: SaliencyMap,
    /// Sum of the initial relevance (the logit for [`lrp_relevance`]).
    pub initial: f64,
    /// `(layer index, kind, total relevance at that layer's input)`, from the
    /// top of the network down to the pixels.
    pub layer_totals: Vec<(usize, LayerKind, f64)>,
}

impl LrpTrace {
    /// Largest relative deviation of any interface total from the initial
    /// relevance.
    pub fn max_relative_leak(&self) -> f64 {
        let scale = self.initial.abs().max(f64::MIN_POSITIVE);
        self.layer_totals
            .iter()
            .map(|&(_, _, t)| (t - self.initial).abs() / scale)
            .fold(0.0, f64::max)
    }
}

fn stabilise(z: f64) -> f64 {
    if z >= 0.0 {
        z + EPSILON
    } else {
        z - EPSILON
    }
}

/// z-rule for `out = a W + b`, weights `[in, out]`.
fn dense_z(a: &[f64], w: &[f64], b: &[f64], r: &[f64]) -> Vec<f64> {
    let (n_in, n_out) = (a.len(), r.len());
    let mut s = vec![0.0; n_out];
    gemm(1, n_in, n_out, a, Op::Plain, w, Op::Plain, &mut s, 0.0);
    for j in 0..n_out {
        s[j] = r[j] / stabilise(s[j] + b[j]);
    }
    let mut c = vec![0.0; n_in];
    gemm(
        1,
        n_out,
        n_in,
        &s,
        Op::Plain,
        w,
        Op::Transposed,
        &mut c,
        0.0,
    );
    a.iter().zip(c).map(|(ai, ci)| ai * ci).collect()
}

/// z⁺-rule for a 3x3 same-padded convolution on one `[h, w, c_in]` input.
fn conv_zplus(a: &[f64], shape: [usize; 3], w: &[f64], r: &[f64]) -> Vec<f64> {
    let [h, wd, c_in] = shape;
    let k = 9 * c_in;
    let c_out = w.len() / k;
    let w_plus: Vec<f64> = w.iter().map(|&v| v.max(0.0)).collect();
    let col = im2col(a, 1, h, wd, c_in);
    let mut z = vec![0.0; h * wd * c_out];
    gemm(
        h * wd,
        k,
        c_out,
        &col,
        Op::Plain,
        &w_plus,
        Op::Plain,
        &mut z,
        0.0,
    );
    let s: Vec<f64> = z
        .iter()
        .zip(r)
        .map(|(&zj, &rj)| rj / stabilise(zj))
        .collect();
    let mut back = vec![0.0; h * wd * k];
    gemm(
        h * wd,
        c_out,
        k,
        &s,
        Op::Plain,
        &w_plus,
        Op::Transposed,
        &mut back,
        0.0,
    );
    let spread = col2im(&back, 1, h, wd, c_in);
    a.iter().zip(spread).map(|(ai, ci)| ai * ci).collect()
}

fn pool_route(input: &Tensor<f64>, r: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; input.len()];
    for (winner, &rj) in maxpool_winners(input).into_iter().zip(r) {
        out[winner] += rj;
    }
    out
}

/// Propagate an arbitrary relevance vector given at the logits (the input of
/// the final softmax) down to the pixels of one image.
pub fn lrp_from<T: Scalar>(
    net: &Network<T>,
    image: &[f32],
    initial: &[f64],
    model_id: &str,
    class_id: usize,
) -> Result<LrpTrace> {
    let [h, w, c] = net.input_shape();
    if image.len() != h * w * c {
        return Err(Error::Shape(format!(
            "image has {} values, network expects {h}x{w}x{c}",
            image.len()
        )));
    }
    if initial.len() != net.num_classes() {
        return Err(Error::Shape(format!(
            "{} initial relevances for {} classes",
            initial.len(),
            net.num_classes()
        )));
    }
    let net = net.cast::<f64>();
    let layers = net.layers();
    let top = match layers.last().map(|l| l.kind()) {
        Some(LayerKind::Softmax) => layers.len() - 1,
        _ => layers.len(),
    };
    // inputs of every layer below the softmax
    let mut acts = Vec::with_capacity(top + 1);
    acts.push(Tensor::new(
        vec![1, h, w, c],
        image.iter().map(|&v| f64::from(v)).collect(),
    )?);
    for layer in &layers[..top] {
        let y = layer.forward(acts.last().unwrap())?;
        acts.push(y);
    }
    let mut r = initial.to_vec();
    let initial_total: f64 = r.iter().sum();
    let mut totals = Vec::with_capacity(top);
    for li in (0..top).rev() {
        let layer = &layers[li];
        let a = &acts[li];
        r = match layer.kind() {
            LayerKind::Dense => {
                let wt = layer.weights().expect("dense weights");
                let b = layer.bias().expect("dense bias");
                dense_z(a.data(), wt.data(), b.data(), &r)
            }
            LayerKind::Conv2d => {
                let s = a.shape();
                conv_zplus(
                    a.data(),
                    [s[1], s[2], s[3]],
                    layer.weights().expect("conv weights").data(),
                    &r,
                )
            }
            LayerKind::MaxPool2x2 => pool_route(a, &r),
            LayerKind::Relu | LayerKind::Flatten => r,
            LayerKind::Softmax => {
                return Err(Error::InvalidArgument(
                    "softmax below the top of the network".into(),
                ));
            }
        };
        totals.push((li, layer.kind(), r.iter().sum()));
    }
    // collapse channels into one map per pixel
    let pixels: Vec<f64> = r.chunks(c).map(|px| px.iter().sum()).collect();
    Ok(LrpTrace {
        map: SaliencyMap::raw(w, h, pixels, model_id, class_id)?,
        initial: initial_total,
        layer_totals: totals,
    })
}

/// Raw relevance of `class_id`, started from that class's logit.
pub fn lrp_relevance<T: Scalar>(
    net: &Network<T>,
    image: &[f32],
    class_id: usize,
    model_id: &str,
) -> Result<LrpTrace> {
    let k = net.num_classes();
    if class_id >= k {
        return Err(Error::InvalidArgument(format!(
            "class {class_id} out of range for {k} classes"
        )));
    }
    let layers = net.layers();
    let top = match layers.last().map(|l| l.kind()) {
        Some(LayerKind::Softmax) => layers.len() - 1,
        _ => layers.len(),
    };
    let [h, w, c] = net.input_shape();
    let x = Tensor::new(
        vec![1, h, w, c],
        image.iter().map(|&v| f64::from(v)).collect(),
    )?;
    let logits = net.cast::<f64>().forward_range(0..top, x)?;
    let mut initial = vec![0.0; k];
    initial[class_id] = logits.data()[class_id];
    lrp_from(net, image, &initial, model_id, class_id)
}

/// Confidence-fraction map: positive relevance divided by its total,
/// negative pixels set to 0.
pub fn normalize_saliency(map: &SaliencyMap) -> Result<SaliencyMap> {
    if map.normalization != Normalization::Raw {
        return Err(Error::InvalidArgument(
            "normalize_saliency expects a raw map".into(),
        ));
    }
    let positive: f64 = map.values.iter().filter(|&&v| v > 0.0).sum();
    let degenerate = !(positive > 0.0);
    let values = if degenerate {
        vec![0.0; map.values.len()]
    } else {
        map.values.iter().map(|&v| v.max(0.0) / positive).collect()
    };
    Ok(SaliencyMap {
        values,
        normalization: Normalization::ConfidenceFraction,
        degenerate,
        ..map.clone()
    })
}

/// Min-max normalised `a - b`. Values above 0.5 are where `a` put more
/// relevance. A zero-range difference comes out as constant 0.5.
pub fn diff_saliency(a: &SaliencyMap, b: &SaliencyMap) -> Result<SaliencyMap> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Shape(format!(
            "cannot diff a {}x{} map with a {}x{} map",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.normalization != Normalization::Raw || b.normalization != Normalization::Raw {
        return Err(Error::InvalidArgument(
            "diff_saliency expects raw maps".into(),
        ));
    }
    if a.class_id != b.class_id {
        return Err(Error::InvalidArgument(format!(
            "maps are for classes {} and {}",
            a.class_id, b.class_id
        )));
    }
    let d: Vec<f64> = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
    let (lo, hi) = d
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let degenerate = !(hi > lo);
    let values = if degenerate {
        vec![0.5; d.len()]
    } else {
        d.iter().map(|&v| (v - lo) / (hi - lo)).collect()
    };
    Ok(SaliencyMap {
        width: a.width,
        height: a.height,
        values,
        normalization: Normalization::MinMax,
        model_id: format!("{}-minus-{}", a.model_id, b.model_id),
        class_id: a.class_id,
        degenerate,
    })
}

/// Write a normalised map as an 8-bit PGM (`round(255 v)`) plus a JSON
/// sidecar with the metadata next to it.
pub fn render_map(map: &SaliencyMap, path: &Path) -> Result<()> {
    if map.normalization == Normalization::Raw {
        return Err(Error::InvalidArgument(
            "render a normalised map, not a raw one".into(),
        ));
    }
    pgm::write_unit(path, map.width, map.height, &map.values)?;
    let meta = serde_json::json!({
        "model_id": map.model_id,
        "class_id": map.class_id,
        "normalization": map.normalization,
        "degenerate": map.degenerate,
        "width": map.width,
        "height": map.height,
    });
    let side = path.with_extension("json");
    std::fs::write(&side, serde_json::to_string_pretty(&meta)?).with_path(&side)
}

/// Heat overlay PNG: the grayscale input with the map blended in red.
pub fn render_overlay(map: &SaliencyMap, image: &[f32], path: &Path) -> Result<()> {
    if image.len() != map.values.len() {
        return Err(Error::Shape("overlay image and map differ in size".into()));
    }
    let mut buf = image::RgbImage::new(map.width as u32, map.height as u32);
    for (i, px) in buf.pixels_mut().enumerate() {
        let g = f64::from(image[i]).clamp(0.0, 1.0) * 0.6;
        let heat = map.values[i].clamp(0.0, 1.0);
        *px = image::Rgb([
            pgm::quantize(g + heat * (1.0 - g)),
            pgm::quantize(g * (1.0 - heat)),
            pgm::quantize(g * (1.0 - heat)),
        ]);
    }
    buf.save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}
