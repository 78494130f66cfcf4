//! Concept probes: is a concept linearly decodable from the last conv
//! block's output?
//!
//! A linear SVM (Pegasos) is trained on one half of the probe images and
//! scored by F1 on the other half, both ways round, for many random
//! stratified splits. Iteration `i` uses seed `base_seed + i`; the splits
//! depend only on the seed and the labels, so two models probed with the
//! same seed see the same folds and their per-iteration scores can be
//! compared with a paired t-test.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::seed::{rng_for, tag};
use crate::stats::{paired_t_test, TestResult};
use crate::synth::{Concept, LabeledImage};
use crate::tensor::Tensor;

const BATCH: usize = 128;

/// Part of the image kept before feature extraction; removed rows are
/// zero-filled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Crop {
    #[default]
    Full,
    /// Zero the bottom `n` rows.
    DropBottom(usize),
}

impl Crop {
    pub fn apply(self, pixels: &[f32], width: usize) -> Vec<f32> {
        let mut out = pixels.to_vec();
        if let Crop::DropBottom(rows) = self {
            let h = pixels.len() / width;
            let keep = h.saturating_sub(rows);
            out[keep * width..].fill(0.0);
        }
        out
    }
}

impl FromStr for Crop {
    type Err = Error;

    /// `full`, `bottom` (drop the bottom half) or `bottom:<rows>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Crop::Full),
            "bottom" => Ok(Crop::DropBottom(crate::synth::CANVAS / 2)),
            _ => s
                .strip_prefix("bottom:")
                .and_then(|n| n.parse().ok())
                .map(Crop::DropBottom)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "unknown crop `{s}` (full, bottom, bottom:<rows>)"
                    ))
                }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub model_id: String,
    pub concept: Concept,
    pub sample_ids: Vec<String>,
    /// Flattened last-conv-block activations, row-major and channel-last.
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<bool>,
}

impl FeatureSet {
    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.len();
        if n == 0 || self.labels.len() != n || self.sample_ids.len() != n {
            return Err(Error::Dataset("feature set is empty or misaligned".into()));
        }
        if self.features.iter().any(|f| f.len() != self.dim()) {
            return Err(Error::Shape("feature vectors differ in length".into()));
        }
        if self.labels.iter().all(|&l| l) || self.labels.iter().all(|&l| !l) {
            return Err(Error::Dataset(format!(
                "concept {} labels contain a single class",
                self.concept
            )));
        }
        Ok(())
    }
}

/// Last-conv-block features of `images`, labelled by presence of `concept`.
pub fn extract_features(
    net: &Network<f32>,
    images: &[LabeledImage],
    concept: Concept,
    crop: Crop,
    model_id: &str,
) -> Result<FeatureSet> {
    if images.is_empty() {
        return Err(Error::Dataset("no images to extract features from".into()));
    }
    let shape = net.input_shape();
    let mut features = Vec::with_capacity(images.len());
    for chunk in images.chunks(BATCH) {
        let px: Vec<Vec<f32>> = chunk
            .iter()
            .map(|im| crop.apply(&im.pixels, shape[1]))
            .collect();
        let refs: Vec<&[f32]> = px.iter().map(Vec::as_slice).collect();
        let f = net.features(&Tensor::stack(&shape, &refs)?)?;
        features.extend((0..chunk.len()).map(|i| {
            f.sample(i)
                .iter()
                .map(|&v| f64::from(v))
                .collect::<Vec<_>>()
        }));
    }
    Ok(FeatureSet {
        model_id: model_id.into(),
        concept,
        sample_ids: images.iter().map(|im| im.id.clone()).collect(),
        features,
        labels: images.iter().map(|im| im.has(concept)).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    /// L2 regularisation strength.
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            lambda: 1e-3,
            epochs: 200,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "probe needs lambda > 0 and epochs > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Linear classifier on z-scored features: `score = w . z(x) + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LinearProbe {
    pub fn score(&self, x: &[f64]) -> f64 {
        let mut s = self.bias;
        for (((&xi, &m), &sc), &w) in x.iter().zip(&self.mean).zip(&self.scale).zip(&self.weights) {
            s += w * (xi - m) / sc;
        }
        s
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.score(x) > 0.0
    }
}

/// Pegasos: hinge loss + `lambda/2 |w|^2`, step `1/(lambda t)`, one pass over
/// a shuffled order per epoch. The bias is a constant extra feature and is
/// regularised with the rest. Features are z-scored with statistics of
/// `xs` itself.
pub fn train_linear_probe(
    xs: &[&[f64]],
    labels: &[bool],
    seed: u64,
    cfg: &ProbeConfig,
) -> Result<LinearProbe> {
    cfg.validate()?;
    if xs.is_empty() || xs.len() != labels.len() {
        return Err(Error::Dataset(
            "probe training set is empty or misaligned".into(),
        ));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::Dataset(
            "probe training fold contains a single class".into(),
        ));
    }
    let n = xs.len();
    let d = xs[0].len();
    let mut mean = vec![0.0; d];
    for x in xs {
        for (m, &v) in mean.iter_mut().zip(*x) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut scale = vec![0.0; d];
    for x in xs {
        for ((s, &v), &m) in scale.iter_mut().zip(*x).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut scale {
        let sd = (*s / n as f64).sqrt();
        *s = if sd > 0.0 { sd } else { 1.0 };
    }
    let z: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            x.iter()
                .zip(&mean)
                .zip(&scale)
                .map(|((&v, &m), &s)| (v - m) / s)
                .chain([1.0])
                .collect()
        })
        .collect();
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();

    let mut w = vec![0.0; d + 1];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, &[tag("pegasos")]);
    let radius = 1.0 / cfg.lambda.sqrt();
    let mut t = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (cfg.lambda * t as f64);
            let margin = y[i] * w.iter().zip(&z[i]).map(|(a, b)| a * b).sum::<f64>();
            let shrink = 1.0 - eta * cfg.lambda;
            if margin < 1.0 {
                for (wj, &zj) in w.iter_mut().zip(&z[i]) {
                    *wj = shrink * *wj + eta * y[i] * zj;
                }
            } else {
                w.iter_mut().for_each(|wj| *wj *= shrink);
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                let f = radius / norm;
                w.iter_mut().for_each(|wj| *wj *= f);
            }
        }
    }
    let bias = w.pop().unwrap_or(0.0);
    Ok(LinearProbe {
        weights: w,
        bias,
        mean,
        scale,
    })
}

/// F1 of the positive class; 0 when there are no true or predicted
/// positives.
pub fn f1_score(predicted: &[bool], actual: &[bool]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Stratified random halves: positives and negatives are shuffled separately
/// and dealt alternately, so each fold's class counts differ from half the
/// total by at most one.
pub fn stratified_halves(labels: &[bool], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng_for(seed, &[tag("folds")]);
    let (mut a, mut b) = (Vec::new(), Vec::new());
    let mut turn = false;
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            if turn {
                b.push(i);
            } else {
                a.push(i);
            }
            turn = !turn;
        }
    }
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRun {
    pub model_id: String,
    pub concept: Concept,
    pub iterations: usize,
    /// Mean F1 of the two folds, per iteration.
    pub f1: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl ProbeRun {
    pub fn mean(&self) -> f64 {
        self.f1.iter().sum::<f64>() / self.f1.len().max(1) as f64
    }

    /// `iteration,f1`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,f1\n");
        for (i, f) in self.f1.iter().enumerate() {
            let _ = writeln!(out, "{i},{f}");
        }
        out
    }
}

fn fold_f1(
    fs: &FeatureSet,
    train: &[usize],
    test: &[usize],
    seed: u64,
    cfg: &ProbeConfig,
) -> Result<f64> {
    let xs: Vec<&[f64]> = train.iter().map(|&i| fs.features[i].as_slice()).collect();
    let ys: Vec<bool> = train.iter().map(|&i| fs.labels[i]).collect();
    let probe = train_linear_probe(&xs, &ys, seed, cfg)?;
    let pred: Vec<bool> = test
        .iter()
        .map(|&i| probe.predict(&fs.features[i]))
        .collect();
    let actual: Vec<bool> = test.iter().map(|&i| fs.labels[i]).collect();
    Ok(f1_score(&pred, &actual))
}

/// One iteration: split, train on each half, score on the other.
pub fn cv_iteration(fs: &FeatureSet, seed: u64, cfg: &ProbeConfig) -> Result<f64> {
    let (a, b) = stratified_halves(&fs.labels, seed);
    let f_ab = fold_f1(fs, &a, &b, crate::seed::derive_seed(seed, &[0]), cfg)?;
    let f_ba = fold_f1(fs, &b, &a, crate::seed::derive_seed(seed, &[1]), cfg)?;
    Ok((f_ab + f_ba) / 2.0)
}

pub fn repeated_2fold_cv(
    fs: &FeatureSet,
    iterations: usize,
    base_seed: u64,
    cfg: &ProbeConfig,
) -> Result<ProbeRun> {
    fs.validate()?;
    cfg.validate()?;
    if iterations == 0 {
        return Err(Error::InvalidArgument(
            "probe needs at least one iteration".into(),
        ));
    }
    for class in [true, false] {
        if fs.labels.iter().filter(|&&l| l == class).count() < 2 {
            return Err(Error::Dataset(
                "probe needs at least 2 samples per class".into(),
            ));
        }
    }
    let seeds: Vec<u64> = (0..iterations as u64)
        .map(|i| base_seed.wrapping_add(i))
        .collect();
    let f1 = seeds
        .par_iter()
        .map(|&s| cv_iteration(fs, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProbeRun {
        model_id: fs.model_id.clone(),
        concept: fs.concept,
        iterations,
        f1,
        seeds,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeComparison {
    pub model_a: String,
    pub model_b: String,
    pub concept: Concept,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Paired t on `a - b`: negative t means `a` decodes the concept worse.
    pub test: TestResult,
}

pub fn compare_probe_runs(a: &ProbeRun, b: &ProbeRun) -> Result<ProbeComparison> {
    if a.seeds != b.seeds {
        return Err(Error::InvalidArgument(
            "probe runs used different seeds, so their folds are not paired".into(),
        ));
    }
    Ok(ProbeComparison {
        model_a: a.model_id.clone(),
        model_b: b.model_id.clone(),
        concept: a.concept,
        mean_a: a.mean(),
        mean_b: b.mean(),
        test: paired_t_test(&a.f1, &b.f1)?,
    })
}
