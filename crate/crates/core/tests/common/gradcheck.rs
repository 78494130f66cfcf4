//! Central finite-difference checks shared by the gradient tests and the
//! acceptance summary. Everything runs in f64.

use faud::layers::{Layer, LayerKind};
use faud::loss::{LossConfig, WeightNorm};
use faud::network::{Architecture, Network};
use faud::seed::rng_for;
use faud::tensor::Tensor;
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
const FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Worst error seen by one check, with a label for failure messages.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub seed: u64,
    pub worst: f64,
    pub compared: usize,
}

impl Check {
    pub fn ok(&self) -> bool {
        self.worst < TOLERANCE && self.compared > 0
    }
}

fn central(mut f: impl FnMut(f64) -> f64, x: f64) -> f64 {
    (f(x + STEP) - f(x - STEP)) / (2.0 * STEP)
}

fn random_tensor(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values bounded away from zero so no ReLU kink sits within a step.
fn away_from_zero(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values on a coarse lattice plus jitter, so every 2x2 window has
/// a clear winner.
fn well_separated(shape: Vec<usize>, rng: &mut impl Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut ranks: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        ranks.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_fn(shape, |i| {
        ranks[i] as f64 * 0.01 + rng.random_range(0.0..0.002) - 0.5 * n as f64 * 0.01
    })
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn layer_for(kind: LayerKind, rng: &mut impl Rng) -> (Layer<f64>, Tensor<f64>) {
    match kind {
        LayerKind::Conv2d => {
            let mut layer = Layer::conv2d(2, 3, rng);
            let bias = random_tensor(vec![3], rng);
            *layer.bias_mut().unwrap() = bias;
            (layer, random_tensor(vec![2, 5, 4, 2], rng))
        }
        LayerKind::Dense => {
            let mut layer = Layer::dense(6, 4, rng);
            *layer.bias_mut().unwrap() = random_tensor(vec![4], rng);
            (layer, random_tensor(vec![3, 6], rng))
        }
        LayerKind::Relu => (Layer::relu(), away_from_zero(vec![2, 3, 3, 2], rng)),
        LayerKind::MaxPool2x2 => (Layer::maxpool(), well_separated(vec![2, 4, 6, 3], rng)),
        LayerKind::Flatten => (Layer::flatten(), random_tensor(vec![2, 2, 3, 2], rng)),
        LayerKind::Softmax => (
            Layer::softmax(),
            random_tensor(vec![3, 5], rng).map(|x| 3.0 * x),
        ),
    }
}

/// Check one layer against `L = <g, layer(x)>` for a random projection `g`,
/// covering the input gradient and, when present, weights and bias.
pub fn check_layer(kind: LayerKind, seed: u64) -> Check {
    let mut rng = rng_for(seed, &[kind.tag() as u64]);
    let (layer, x) = layer_for(kind, &mut rng);
    let y = layer.forward(&x).unwrap();
    let g = random_tensor(y.shape().to_vec(), &mut rng);
    let grads = layer.backward(&x, &y, &g, true, kind.has_params()).unwrap();
    let mut worst: f64 = 0.0;
    let mut compared = 0;

    let gx = grads.input.expect("input gradient");
    for i in 0..x.len() {
        let numeric = central(
            |v| {
                let mut xp = x.clone();
                xp.data_mut()[i] = v;
                dot(&g, &layer.forward(&xp).unwrap())
            },
            x.data()[i],
        );
        worst = worst.max(rel_err(gx.data()[i], numeric));
        compared += 1;
    }

    if let Some(p) = grads.params {
        for (which, analytic) in [(0, &p.weights), (1, &p.bias)] {
            for i in 0..analytic.len() {
                let base = if which == 0 {
                    layer.weights().unwrap().data()[i]
                } else {
                    layer.bias().unwrap().data()[i]
                };
                let numeric = central(
                    |v| {
                        let mut l = layer.clone();
                        let t = if which == 0 {
                            l.weights_mut()
                        } else {
                            l.bias_mut()
                        };
                        t.unwrap().data_mut()[i] = v;
                        dot(&g, &l.forward(&x).unwrap())
                    },
                    base,
                );
                worst = worst.max(rel_err(analytic.data()[i], numeric));
                compared += 1;
            }
        }
    }
    Check {
        name: format!("{kind:?}"),
        seed,
        worst,
        compared,
    }
}

/// The two losses: plain focal and class-balanced focal.
pub fn loss_configs(gamma: f64, classes: usize) -> [(String, LossConfig); 2] {
    let counts: Vec<usize> = (0..classes).map(|k| 5 + 40 * k).collect();
    [
        (
            format!("focal(gamma={gamma})"),
            LossConfig::unweighted(gamma),
        ),
        (
            format!("class-balanced focal(gamma={gamma})"),
            LossConfig {
                gamma,
                beta: Some(0.99),
                class_counts: Some(counts),
                weight_norm: WeightNorm::Mean,
            },
        ),
    ]
}

fn softmax_loss(cfg: &LossConfig, logits: &Tensor<f64>, labels: &[usize]) -> f64 {
    let probs = Layer::<f64>::softmax().forward(logits).unwrap();
    cfg.evaluate(&probs, labels).unwrap().loss
}

/// Gradient of each loss with respect to the pre-softmax scores.
pub fn check_loss(cfg: &LossConfig, name: &str, seed: u64) -> Check {
    let mut rng = rng_for(seed, &[7]);
    let k = cfg.class_counts.as_ref().map_or(5, |c| c.len());
    let n = 6;
    let logits = random_tensor(vec![n, k], &mut rng).map(|x| 4.0 * x);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let probs = Layer::<f64>::softmax().forward(&logits).unwrap();
    let analytic = cfg.evaluate(&probs, &labels).unwrap().logits_grad;
    let mut worst: f64 = 0.0;
    for i in 0..logits.len() {
        let numeric = central(
            |v| {
                let mut z = logits.clone();
                z.data_mut()[i] = v;
                softmax_loss(cfg, &z, &labels)
            },
            logits.data()[i],
        );
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    Check {
        name: name.to_string(),
        seed,
        worst,
        compared: logits.len(),
    }
}

/// Tiny five-block network: 16x16 input pooled down to 1x1.
pub fn tiny_arch() -> Architecture {
    Architecture {
        input_size: 16,
        input_channels: 1,
        conv_widths: vec![2, 3, 3, 2, 2],
        pooled: vec![true, true, true, true, false],
        num_classes: 3,
    }
}

/// Whole-network parameter gradients through every layer and the loss.
///
/// Coordinates whose perturbation flips a ReLU or a pool winner sit on a kink
/// where the derivative is undefined; they are skipped and counted.
pub fn check_network(cfg: &LossConfig, name: &str, seed: u64) -> (Check, usize) {
    let mut rng = rng_for(seed, &[11]);
    let arch = tiny_arch();
    let mut net: Network<f64> = Network::new(&arch, &mut rng).unwrap();
    for layer in net.layers_mut() {
        if let Some(b) = layer.bias_mut() {
            for v in b.data_mut() {
                *v = rng.random_range(-0.1..0.1);
            }
        }
    }
    let n = 4;
    let x = random_tensor(vec![n, 16, 16, 1], &mut rng).map(|v| v + 0.5);
    let labels: Vec<usize> = (0..n).map(|i| i % arch.num_classes).collect();
    let probs = net.forward(&x).unwrap();
    let out = cfg.evaluate(&probs, &labels).unwrap();
    let grads = net.backward(&out.logits_grad).unwrap();
    let pattern = activation_pattern(&net, &x);

    let mut worst: f64 = 0.0;
    let mut compared = 0;
    let mut skipped = 0;
    let param_layers: Vec<usize> = (0..net.layers().len())
        .filter(|&i| net.layers()[i].kind().has_params())
        .collect();
    for &li in &param_layers {
        let pg = grads.layers[li].as_ref().expect("trainable layer gradient");
        for which in 0..2 {
            let analytic = if which == 0 { &pg.weights } else { &pg.bias };
            for i in 0..analytic.len() {
                let eval = |v: f64, net: &mut Network<f64>| {
                    let layer = &mut net.layers_mut()[li];
                    let t = if which == 0 {
                        layer.weights_mut()
                    } else {
                        layer.bias_mut()
                    };
                    let old = t.as_ref().unwrap().data()[i];
                    t.unwrap().data_mut()[i] = v;
                    let loss = cfg.evaluate(&net.infer(&x).unwrap(), &labels).unwrap().loss;
                    let kinked = activation_pattern(net, &x) != pattern;
                    let layer = &mut net.layers_mut()[li];
                    let t = if which == 0 {
                        layer.weights_mut()
                    } else {
                        layer.bias_mut()
                    };
                    t.unwrap().data_mut()[i] = old;
                    (loss, kinked)
                };
                let base = {
                    let layer = &net.layers()[li];
                    if which == 0 {
                        layer.weights()
                    } else {
                        layer.bias()
                    }
                    .unwrap()
                    .data()[i]
                };
                let (plus, k1) = eval(base + STEP, &mut net);
                let (minus, k2) = eval(base - STEP, &mut net);
                if k1 || k2 {
                    skipped += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * STEP);
                worst = worst.max(rel_err(analytic.data()[i], numeric));
                compared += 1;
            }
        }
    }
    (
        Check {
            name: format!("network + {name}"),
            seed,
            worst,
            compared,
        },
        skipped,
    )
}

/// Sign of every ReLU input and the winner of every pool window.
fn activation_pattern(net: &Network<f64>, x: &Tensor<f64>) -> Vec<u32> {
    let mut pattern = Vec::new();
    let mut a = x.clone();
    for layer in net.layers() {
        match layer.kind() {
            LayerKind::Relu => pattern.extend(a.data().iter().map(|&v| u32::from(v > 0.0))),
            LayerKind::MaxPool2x2 => {
                let s = a.shape().to_vec();
                let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
                for b in 0..n {
                    for oy in 0..h / 2 {
                        for ox in 0..w / 2 {
                            for ch in 0..c {
                                let mut best = (f64::NEG_INFINITY, 0u32);
                                for (k, (dy, dx)) in
                                    [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate()
                                {
                                    let v = a.data()
                                        [((b * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch];
                                    if v > best.0 {
                                        best = (v, k as u32);
                                    }
                                }
                                pattern.push(best.1);
                            }
                        }
                    }
                }
            }
            _ => {}
        }
        a = layer.forward(&a).unwrap();
    }
    pattern
}

pub const LAYER_KINDS: [LayerKind; 6] = [
    LayerKind::Conv2d,
    LayerKind::Relu,
    LayerKind::MaxPool2x2,
    LayerKind::Flatten,
    LayerKind::Dense,
    LayerKind::Softmax,
];

pub const GAMMAS: [f64; 4] = [0.0, 0.5, 2.0, 5.0];

/// Every check over `seeds`: each layer kind, each loss at several gammas,
/// and the whole network under both losses.
pub fn full_suite(seeds: std::ops::Range<u64>) -> Vec<Check> {
    let mut out = Vec::new();
    for seed in seeds {
        for kind in LAYER_KINDS {
            out.push(check_layer(kind, seed));
        }
        for gamma in GAMMAS {
            for (name, cfg) in loss_configs(gamma, 5) {
                out.push(check_loss(&cfg, &name, seed));
            }
        }
        for (name, cfg) in loss_configs(2.0, 3) {
            let (check, skipped) = check_network(&cfg, &name, seed);
            assert!(
                skipped * 20 < check.compared,
                "{name} seed {seed}: {skipped} kinked coordinates"
            );
            out.push(check);
        }
    }
    out
}
