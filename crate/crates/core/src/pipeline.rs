//! The three training phases and the forgetting sweep.
//!
//! 1. `train_source`: K-way classifier on the source task.
//! 2. `transfer_train`: copy it, swap in a 2-way head, freeze the first `i`
//!    conv blocks (`FreezeB<i>`) and fine-tune on the target task.
//! 3. `retrain_head`: freeze every conv block of a target model and train a
//!    fresh K-way head on the source task. How well the source classes come
//!    back measures what the conv features forgot.
//!
//! Training uses fixed epochs and keeps the weights of the epoch with the
//! best validation macro F1. All randomness is derived from one seed and a
//! phase tag, so every `FreezeB<i>` run sees the same head initialisation,
//! shuffles and augmentations.

use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_affine, AugmentConfig};
use crate::checkpoint::to_bytes;
use crate::error::{Error, IoContext, Result};
use crate::loss::{LossConfig, WeightNorm};
use crate::metrics::{classification_metrics, MetricsReport};
use crate::network::{Architecture, FreezePlan, Network, TrainMeta, HEAD_BLOCK};
use crate::seed::{rng_for, tag};
use crate::stats::{discordant_counts, mcnemar, TestResult};
use crate::synth::{Dataset, LabeledImage, CANVAS};
use crate::tensor::Tensor;

const EVAL_BATCH: usize = 128;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    /// Class-balance beta; `None` trains with the unweighted loss.
    pub beta: Option<f64>,
    pub weight_norm: WeightNorm,
    pub augment: AugmentConfig,
}

impl PhaseConfig {
    /// Weighted focal loss with gamma 5, flips only.
    pub fn source() -> Self {
        PhaseConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.01,
            gamma: 5.0,
            beta: Some(0.99998),
            weight_norm: WeightNorm::Mean,
            augment: AugmentConfig::flip_only(),
        }
    }

    /// Unweighted focal loss with gamma 2, full augmentation.
    pub fn target() -> Self {
        PhaseConfig {
            epochs: 40,
            batch_size: 16,
            learning_rate: 0.01,
            gamma: 2.0,
            beta: None,
            weight_norm: WeightNorm::Mean,
            augment: AugmentConfig::full(),
        }
    }

    /// Same optimiser, loss and augmentation as source training.
    pub fn retrain() -> Self {
        Self::source()
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be > 0",
                self.learning_rate
            )));
        }
        self.augment.validate()?;
        // placeholder counts: only the gamma and beta ranges are checked here
        self.loss(Some(vec![1, 1])).validate()
    }

    fn loss(&self, counts: Option<Vec<usize>>) -> LossConfig {
        LossConfig {
            gamma: self.gamma,
            beta: self.beta,
            class_counts: if self.beta.is_some() { counts } else { None },
            weight_norm: self.weight_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
    pub val_metrics: MetricsReport,
}

#[derive(Clone, Copy)]
struct Example<'a> {
    pixels: &'a [f32],
    label: usize,
}

fn source_examples(images: &[LabeledImage]) -> Vec<Example<'_>> {
    images
        .iter()
        .map(|im| Example {
            pixels: &im.pixels,
            label: im.source_class.expect("source split image"),
        })
        .collect()
}

fn target_examples(images: &[LabeledImage]) -> Vec<Example<'_>> {
    images
        .iter()
        .map(|im| Example {
            pixels: &im.pixels,
            label: usize::from(im.target_label),
        })
        .collect()
}

fn class_counts(examples: &[Example], k: usize) -> Vec<usize> {
    let mut counts = vec![0; k];
    for e in examples {
        counts[e.label] += 1;
    }
    counts
}

fn image_shape() -> [usize; 3] {
    [CANVAS, CANVAS, 1]
}

/// Argmax predictions, evaluated in fixed-size batches.
pub fn predict_images(net: &Network<f32>, images: &[&[f32]]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(EVAL_BATCH) {
        out.extend(net.predict(&Tensor::stack(&net.input_shape(), chunk)?)?);
    }
    Ok(out)
}

fn evaluate(net: &Network<f32>, examples: &[Example]) -> Result<MetricsReport> {
    let px: Vec<&[f32]> = examples.iter().map(|e| e.pixels).collect();
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    classification_metrics(&predict_images(net, &px)?, &labels, net.num_classes())
}

/// Outputs of the frozen layers below the first trainable one, for the
/// unflipped and flipped version of every training image. Only valid when
/// augmentation is at most a flip.
struct PrefixCache {
    plain: Vec<Vec<f32>>,
    flipped: Vec<Vec<f32>>,
    shape: Vec<usize>,
}

impl PrefixCache {
    fn build(net: &Network<f32>, start: usize, examples: &[Example], flips: bool) -> Result<Self> {
        let flip_params = crate::augment::AffineParams {
            flip: true,
            ..crate::augment::AffineParams::identity()
        };
        let run = |imgs: Vec<Vec<f32>>| -> Result<(Vec<Vec<f32>>, Vec<usize>)> {
            let mut rows = Vec::with_capacity(imgs.len());
            let mut shape = Vec::new();
            for chunk in imgs.chunks(EVAL_BATCH) {
                let refs: Vec<&[f32]> = chunk.iter().map(Vec::as_slice).collect();
                let y = net.forward_range(0..start, Tensor::stack(&image_shape(), &refs)?)?;
                shape = y.shape()[1..].to_vec();
                rows.extend((0..chunk.len()).map(|i| y.sample(i).to_vec()));
            }
            Ok((rows, shape))
        };
        let (plain, shape) = run(examples.iter().map(|e| e.pixels.to_vec()).collect())?;
        let flipped = if flips {
            run(examples
                .iter()
                .map(|e| apply_affine(e.pixels, CANVAS, &flip_params))
                .collect::<Result<_>>()?)?
            .0
        } else {
            Vec::new()
        };
        Ok(PrefixCache {
            plain,
            flipped,
            shape,
        })
    }
}

/// Mini-batch SGD for `cfg.epochs` epochs; `net` ends up holding the weights
/// of the best validation epoch.
fn fit(
    net: &mut Network<f32>,
    train: &[Example],
    val: &[Example],
    cfg: &PhaseConfig,
    loss: &LossConfig,
    seed: u64,
    phase: &str,
) -> Result<TrainReport> {
    cfg.validate()?;
    loss.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Dataset(format!(
            "{phase}: empty training or validation split"
        )));
    }
    let k = net.num_classes();
    if let Some(bad) = train.iter().chain(val).find(|e| e.label >= k) {
        return Err(Error::Dataset(format!(
            "{phase}: label {} for a {k}-class head",
            bad.label
        )));
    }
    net.clear_cache();
    let start = net.first_trainable_layer();
    let cache = match start {
        Some(s) if s > 0 && cfg.augment.is_flip_only() => Some(PrefixCache::build(
            net,
            s,
            train,
            cfg.augment.horizontal_flip,
        )?),
        _ => None,
    };

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Network<f32>, MetricsReport)> = None;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng_for(
            seed,
            &[tag(phase), tag("shuffle"), epoch as u64],
        ));
        let mut loss_sum = 0.0;
        let mut batches = 0;
        if let Some(start) = start {
            for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let flips: Vec<_> = chunk
                    .iter()
                    .map(|&i| {
                        let mut rng =
                            rng_for(seed, &[tag(phase), tag("augment"), epoch as u64, i as u64]);
                        cfg.augment.sample(&mut rng)
                    })
                    .collect();
                let x = match &cache {
                    Some(c) => {
                        let rows: Vec<&[f32]> = chunk
                            .iter()
                            .zip(&flips)
                            .map(|(&i, p)| {
                                if p.flip {
                                    c.flipped[i].as_slice()
                                } else {
                                    c.plain[i].as_slice()
                                }
                            })
                            .collect();
                        Tensor::stack(&c.shape, &rows)?
                    }
                    None => {
                        let imgs: Vec<Vec<f32>> = chunk
                            .iter()
                            .zip(&flips)
                            .map(|(&i, p)| apply_affine(train[i].pixels, CANVAS, p))
                            .collect::<Result<_>>()?;
                        let refs: Vec<&[f32]> = imgs.iter().map(Vec::as_slice).collect();
                        net.forward_range(0..start, Tensor::stack(&image_shape(), &refs)?)?
                    }
                };
                let probs = net.forward_cached_from(start, x)?;
                let labels: Vec<usize> = chunk.iter().map(|&i| train[i].label).collect();
                let out = loss
                    .evaluate(&probs, &labels)
                    .map_err(|_| Error::Diverged {
                        epoch,
                        batch: bi,
                        loss: f64::NAN,
                    })?;
                if !out.loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: bi,
                        loss: out.loss,
                    });
                }
                let grads = net.backward(&out.logits_grad)?;
                net.sgd_step(&grads, cfg.learning_rate)?;
                loss_sum += out.loss;
                batches += 1;
            }
        }
        net.clear_cache();
        let metrics = evaluate(net, val)?;
        let f1 = metrics.macro_f1;
        history.push(EpochLog {
            epoch,
            mean_loss: if batches == 0 {
                0.0
            } else {
                loss_sum / batches as f64
            },
            val_macro_f1: f1,
        });
        log::debug!(
            "{phase} epoch {epoch}: loss {:.5}, val macro F1 {f1:.4}",
            history.last().unwrap().mean_loss
        );
        if best.as_ref().is_none_or(|(b, ..)| f1 > *b) {
            best = Some((f1, epoch, net.clone(), metrics));
        }
    }
    let (_, best_epoch, best_net, val_metrics) = best.expect("at least one epoch");
    *net = best_net;
    net.set_meta(TrainMeta {
        seed,
        epochs: best_epoch as u32,
    });
    Ok(TrainReport {
        best_epoch,
        history,
        val_metrics,
    })
}

/// Train a fresh network on the source classes.
pub fn train_source(
    ds: &Dataset,
    arch: &Architecture,
    cfg: &PhaseConfig,
    seed: u64,
) -> Result<(Network<f32>, TrainReport)> {
    let k = ds.spec.classes.len();
    if k < 2 {
        return Err(Error::Dataset(
            "source task needs at least two classes".into(),
        ));
    }
    let arch = Architecture {
        num_classes: k,
        ..arch.clone()
    };
    let mut net = Network::new(&arch, &mut rng_for(seed, &[tag("source-init")]))?;
    let train = source_examples(&ds.source.train);
    let val = source_examples(&ds.source.val);
    let loss = cfg.loss(Some(class_counts(&train, k)));
    let mut report = fit(&mut net, &train, &val, cfg, &loss, seed, "source")?;
    report.val_metrics = report
        .val_metrics
        .with_class_names(&ds.spec.class_names())?;
    Ok((net, report))
}

fn frozen_blocks_unchanged(before: &Network<f32>, after: &Network<f32>) -> Result<()> {
    for block in after.blocks().iter().filter(|b| !b.trainable) {
        if before.block_bytes(&block.name)? != after.block_bytes(&block.name)? {
            return Err(Error::InvalidArgument(format!(
                "frozen block `{}` changed during training",
                block.name
            )));
        }
    }
    Ok(())
}

/// `FreezeB<i>`: fresh 2-way head, first `i` conv blocks frozen, fine-tuned on
/// the target task.
pub fn transfer_train(
    source: &Network<f32>,
    plan: FreezePlan,
    ds: &Dataset,
    cfg: &PhaseConfig,
    seed: u64,
) -> Result<(Network<f32>, TrainReport)> {
    let mut net = source.clone();
    net.clear_cache();
    net.replace_head(2, &mut rng_for(seed, &[tag("target-head")]))?;
    net.apply_freeze_plan(plan)?;
    let train = target_examples(&ds.target.train);
    let val = target_examples(&ds.target.val);
    let loss = cfg.loss(Some(class_counts(&train, 2)));
    let report = fit(&mut net, &train, &val, cfg, &loss, seed, "target")?;
    frozen_blocks_unchanged(source, &net)?;
    Ok((net, report))
}

/// Freeze every conv block of `target_model` and train a new source-task head
/// on top of its features.
pub fn retrain_head(
    target_model: &Network<f32>,
    ds: &Dataset,
    cfg: &PhaseConfig,
    seed: u64,
) -> Result<(Network<f32>, TrainReport)> {
    let k = ds.spec.classes.len();
    let mut net = target_model.clone();
    net.clear_cache();
    net.replace_head(k, &mut rng_for(seed, &[tag("retrain-head")]))?;
    net.freeze_features();
    let train = source_examples(&ds.source.train);
    let val = source_examples(&ds.source.val);
    let loss = cfg.loss(Some(class_counts(&train, k)));
    let mut report = fit(&mut net, &train, &val, cfg, &loss, seed, "retrain")?;
    frozen_blocks_unchanged(target_model, &net)?;
    report.val_metrics = report
        .val_metrics
        .with_class_names(&ds.spec.class_names())?;
    Ok((net, report))
}

/// Source-task metrics on the source test split.
pub fn source_test_metrics(net: &Network<f32>, ds: &Dataset) -> Result<MetricsReport> {
    evaluate(net, &source_examples(&ds.source.test))?.with_class_names(&ds.spec.class_names())
}

/// Target-task metrics on the target test split (class 1 = positive).
pub fn target_test_metrics(net: &Network<f32>, ds: &Dataset) -> Result<MetricsReport> {
    evaluate(net, &target_examples(&ds.target.test))?
        .with_class_names(&["negative".into(), "positive".into()])
}

/// Ids of images of `class_id` that `model_a` gets right and `model_b` gets
/// wrong. Images without a source class are skipped.
pub fn select_divergent_samples(
    model_a: &Network<f32>,
    model_b: &Network<f32>,
    images: &[LabeledImage],
    class_id: usize,
) -> Result<Vec<String>> {
    if model_a.input_shape() != model_b.input_shape()
        || model_a.num_classes() != model_b.num_classes()
    {
        return Err(Error::ArchitectureMismatch(
            "models differ in input shape or class count".into(),
        ));
    }
    let of_class: Vec<&LabeledImage> = images
        .iter()
        .filter(|im| im.source_class == Some(class_id))
        .collect();
    if of_class.is_empty() {
        return Ok(Vec::new());
    }
    let px: Vec<&[f32]> = of_class.iter().map(|im| im.pixels.as_slice()).collect();
    let pa = predict_images(model_a, &px)?;
    let pb = predict_images(model_b, &px)?;
    Ok(of_class
        .iter()
        .zip(pa.iter().zip(&pb))
        .filter(|(_, (&a, &b))| a == class_id && b != class_id)
        .map(|(im, _)| im.id.clone())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub arch: Architecture,
    pub source: PhaseConfig,
    pub target: PhaseConfig,
    pub retrain: PhaseConfig,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            arch: Architecture::default(),
            source: PhaseConfig::source(),
            target: PhaseConfig::target(),
            retrain: PhaseConfig::retrain(),
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub model: String,
    pub frozen_blocks: usize,
    pub seed: u64,
    /// Target test metrics of the transferred model.
    pub target_metrics: MetricsReport,
    /// Source test metrics after head retraining.
    pub retrain_metrics: MetricsReport,
    pub target_recall: f64,
    pub source_recalls: Vec<f64>,
    pub transfer_best_epoch: usize,
    pub retrain_best_epoch: usize,
    /// Checkpoint paths relative to the sweep directory.
    pub checkpoints: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassComparison {
    /// Compared against `FreezeB5`.
    pub model: String,
    pub class: String,
    /// Right under `FreezeB5`, wrong under `model`.
    pub b: u64,
    /// Wrong under `FreezeB5`, right under `model`.
    pub c: u64,
    pub test: TestResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub model: String,
    pub target_recall: f64,
    pub source_recalls: Vec<f64>,
    pub forgotten_recall: f64,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub class_names: Vec<String>,
    pub forgotten_classes: Vec<String>,
    pub source_metrics: MetricsReport,
    pub records: Vec<ExperimentRecord>,
    pub comparisons: Vec<ClassComparison>,
    pub tradeoff: Vec<TradeoffRow>,
    /// Model with the highest `target_recall + forgotten_recall`; ties go to
    /// the deeper freeze.
    pub best_model: String,
}

pub struct SweepOutput {
    pub report: SweepReport,
    pub source: Network<f32>,
    pub transferred: Vec<Network<f32>>,
    pub retrained: Vec<Network<f32>>,
}

struct RunOutput {
    record: ExperimentRecord,
    transferred: Network<f32>,
    retrained: Network<f32>,
    retrain_predictions: Vec<usize>,
}

fn run_one(
    source: &Network<f32>,
    plan: FreezePlan,
    ds: &Dataset,
    cfg: &SweepConfig,
) -> Result<RunOutput> {
    let label = plan.label();
    log::info!("{label}: transfer");
    let (transferred, treport) = transfer_train(source, plan, ds, &cfg.target, cfg.seed)?;
    log::info!("{label}: retrain head");
    let (retrained, rreport) = retrain_head(&transferred, ds, &cfg.retrain, cfg.seed)?;
    let target_metrics = target_test_metrics(&transferred, ds)?;
    let retrain_metrics = source_test_metrics(&retrained, ds)?;
    let px: Vec<&[f32]> = ds
        .source
        .test
        .iter()
        .map(|im| im.pixels.as_slice())
        .collect();
    Ok(RunOutput {
        record: ExperimentRecord {
            model: label.clone(),
            frozen_blocks: plan.frozen_blocks(),
            seed: cfg.seed,
            target_recall: target_metrics.per_class[1].recall,
            source_recalls: retrain_metrics.recalls(),
            target_metrics,
            retrain_metrics,
            transfer_best_epoch: treport.best_epoch,
            retrain_best_epoch: rreport.best_epoch,
            checkpoints: vec![
                format!("{label}/transfer.ckpt"),
                format!("{label}/retrain.ckpt"),
                "source/source.ckpt".into(),
            ],
        },
        retrain_predictions: predict_images(&retrained, &px)?,
        transferred,
        retrained,
    })
}

/// Per-class McNemar tests of every model against `FreezeB5`.
fn compare_to_reference(ds: &Dataset, runs: &[RunOutput]) -> Result<Vec<ClassComparison>> {
    let reference = runs.last().expect("six runs");
    let truth: Vec<usize> = ds
        .source
        .test
        .iter()
        .map(|im| im.source_class.unwrap())
        .collect();
    let mut out = Vec::new();
    for run in &runs[..runs.len() - 1] {
        for (ci, name) in ds.spec.class_names().iter().enumerate() {
            let idx: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == ci).collect();
            let right = |preds: &[usize]| idx.iter().map(|&i| preds[i] == ci).collect::<Vec<_>>();
            let (b, c) = discordant_counts(
                &right(&reference.retrain_predictions),
                &right(&run.retrain_predictions),
            )?;
            out.push(ClassComparison {
                model: run.record.model.clone(),
                class: name.clone(),
                b,
                c,
                test: mcnemar(b, c),
            });
        }
    }
    Ok(out)
}

pub fn tradeoff_rows(records: &[ExperimentRecord], forgotten: &[usize]) -> Vec<TradeoffRow> {
    records
        .iter()
        .map(|r| {
            let forgotten_recall = if forgotten.is_empty() {
                0.0
            } else {
                forgotten.iter().map(|&c| r.source_recalls[c]).sum::<f64>() / forgotten.len() as f64
            };
            TradeoffRow {
                model: r.model.clone(),
                target_recall: r.target_recall,
                source_recalls: r.source_recalls.clone(),
                forgotten_recall,
                score: r.target_recall + forgotten_recall,
            }
        })
        .collect()
}

/// Highest score; on ties the later row (deeper freeze) wins.
pub fn best_tradeoff(rows: &[TradeoffRow]) -> Option<&TradeoffRow> {
    rows.iter()
        .fold(None, |best: Option<&TradeoffRow>, r| match best {
            Some(b) if b.score > r.score => Some(b),
            _ => Some(r),
        })
}

/// Train the source model (unless given), then run `FreezeB0..FreezeB5`
/// transfer + head retraining. `jobs > 1` runs the six transfers on a thread
/// pool; results are identical to a sequential run.
pub fn run_forgetting_sweep(
    ds: &Dataset,
    cfg: &SweepConfig,
    source: Option<Network<f32>>,
    jobs: usize,
) -> Result<SweepOutput> {
    let source = match source {
        Some(net) => net,
        None => {
            log::info!("training source model");
            train_source(ds, &cfg.arch, &cfg.source, cfg.seed)?.0
        }
    };
    if source.num_classes() != ds.spec.classes.len() {
        return Err(Error::ArchitectureMismatch(format!(
            "source model has {} classes, dataset {}",
            source.num_classes(),
            ds.spec.classes.len()
        )));
    }
    let source_metrics = source_test_metrics(&source, ds)?;
    let plans: Vec<FreezePlan> = FreezePlan::all().collect();
    let runs: Vec<RunOutput> = if jobs <= 1 {
        plans
            .iter()
            .map(|&p| run_one(&source, p, ds, cfg))
            .collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| {
            plans
                .par_iter()
                .map(|&p| run_one(&source, p, ds, cfg))
                .collect::<Result<_>>()
        })?
    };
    let comparisons = compare_to_reference(ds, &runs)?;
    let forgotten = ds.spec.forgotten_classes();
    let records: Vec<ExperimentRecord> = runs.iter().map(|r| r.record.clone()).collect();
    let tradeoff = tradeoff_rows(&records, &forgotten);
    let best_model = best_tradeoff(&tradeoff)
        .map(|r| r.model.clone())
        .unwrap_or_default();
    let class_names = ds.spec.class_names();
    let report = SweepReport {
        forgotten_classes: forgotten.iter().map(|&c| class_names[c].clone()).collect(),
        class_names,
        source_metrics,
        records,
        comparisons,
        tradeoff,
        best_model,
    };
    let (transferred, retrained) = runs
        .into_iter()
        .map(|r| (r.transferred, r.retrained))
        .unzip();
    Ok(SweepOutput {
        report,
        source,
        transferred,
        retrained,
    })
}

/// `model,target_recall,<class>...` one row per model.
pub fn tradeoff_csv(report: &SweepReport) -> String {
    let mut out = String::from("model,target_recall");
    for name in &report.class_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for row in &report.tradeoff {
        out.push_str(&format!("{},{}", row.model, row.target_recall));
        for r in &row.source_recalls {
            out.push_str(&format!(",{r}"));
        }
        out.push('\n');
    }
    out
}

/// True if every conv block of `a` and `b` is byte-identical.
pub fn same_features(a: &Network<f32>, b: &Network<f32>) -> Result<bool> {
    for block in a.blocks().iter().filter(|b| b.name != HEAD_BLOCK) {
        if a.block_bytes(&block.name)? != b.block_bytes(&block.name)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `model,class,b,c,method,statistic,p_value,chi2_p,exact_p`
pub fn comparisons_csv(comparisons: &[ClassComparison]) -> String {
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    let mut out = String::from("model,class,b,c,method,statistic,p_value,chi2_p,exact_p\n");
    for c in comparisons {
        let method = serde_json::to_value(c.test.method)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{method},{},{},{},{}\n",
            c.model,
            c.class,
            c.b,
            c.c,
            opt(c.test.statistic),
            c.test.p_value,
            opt(c.test.chi2_p),
            opt(c.test.exact_p)
        ));
    }
    out
}

fn write_file(
    dir: &Path,
    rel: &str,
    contents: impl AsRef<[u8]>,
    written: &mut Vec<String>,
) -> Result<()> {
    let path = dir.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_path(parent)?;
    }
    std::fs::write(&path, contents).with_path(&path)?;
    written.push(rel.to_string());
    Ok(())
}

/// Write checkpoints and metrics of one trained model under `dir/rel_dir`.
pub fn save_model_outputs(
    dir: &Path,
    rel_dir: &str,
    stem: &str,
    net: &Network<f32>,
    metrics: &MetricsReport,
    written: &mut Vec<String>,
) -> Result<()> {
    write_file(
        dir,
        &format!("{rel_dir}/{stem}.ckpt"),
        to_bytes(net),
        written,
    )?;
    write_file(
        dir,
        &format!("{rel_dir}/{stem}_metrics.csv"),
        metrics.to_csv(),
        written,
    )?;
    write_file(
        dir,
        &format!("{rel_dir}/{stem}_metrics.json"),
        metrics.to_json()?,
        written,
    )
}

impl SweepOutput {
    /// Lay the sweep out under `dir`:
    ///
    /// ```text
    /// source/source.ckpt, source_metrics.{csv,json}
    /// FreezeB<i>/transfer.ckpt, transfer_metrics.{csv,json}   target task
    /// FreezeB<i>/retrain.ckpt, retrain_metrics.{csv,json}     source task
    /// FreezeB<i>/record.json
    /// mcnemar.csv, tradeoff.csv, sweep.json
    /// ```
    ///
    /// Returns the written paths relative to `dir`.
    pub fn save(&self, dir: &Path) -> Result<Vec<String>> {
        let mut written = Vec::new();
        let r = &self.report;
        save_model_outputs(
            dir,
            "source",
            "source",
            &self.source,
            &r.source_metrics,
            &mut written,
        )?;
        for (i, rec) in r.records.iter().enumerate() {
            save_model_outputs(
                dir,
                &rec.model,
                "transfer",
                &self.transferred[i],
                &rec.target_metrics,
                &mut written,
            )?;
            save_model_outputs(
                dir,
                &rec.model,
                "retrain",
                &self.retrained[i],
                &rec.retrain_metrics,
                &mut written,
            )?;
            write_file(
                dir,
                &format!("{}/record.json", rec.model),
                serde_json::to_string_pretty(rec)?,
                &mut written,
            )?;
        }
        write_file(
            dir,
            "mcnemar.csv",
            comparisons_csv(&r.comparisons),
            &mut written,
        )?;
        write_file(dir, "tradeoff.csv", tradeoff_csv(r), &mut written)?;
        write_file(
            dir,
            "sweep.json",
            serde_json::to_string_pretty(r)?,
            &mut written,
        )?;
        Ok(written)
    }
}

pub fn load_sweep_report(dir: &Path) -> Result<SweepReport> {
    let path = dir.join("sweep.json");
    Ok(serde_json::from_str(
        &std::fs::read_to_string(&path).with_path(&path)?,
    )?)
}
