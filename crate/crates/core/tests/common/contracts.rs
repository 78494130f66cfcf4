//! Property checks that return a verdict instead of panicking, so the
//! acceptance target can print one line each.

use faud::layers::Layer;
use faud::loss::{class_balanced_weights, focal_loss, WeightNorm};
use faud::lrp::lrp_relevance;
use faud::network::{Architecture, FreezePlan, Network, HEAD_BLOCK};
use faud::pipeline::{retrain_head, train_source, transfer_train, PhaseConfig};
use faud::seed::rng_for;
use faud::synth::{generate_dataset, Dataset, GenConfig, TaskSpec};
use faud::tensor::Tensor;
use rand::Rng;

pub type Verdict = Result<String, String>;

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Focal loss with gamma 0 against cross-entropy computed from log-softmax,
/// one sample at a time, on `n` random inputs.
pub fn focal_gamma0_is_cross_entropy(n: usize, seed: u64) -> Verdict {
    let mut rng = rng_for(seed, &[]);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let k = rng.random_range(2..10);
        let scale = rng.random_range(0.1..8.0);
        let z: Vec<f64> = (0..k)
            .map(|_| rng.random_range(-1.0..1.0) * scale)
            .collect();
        let label = rng.random_range(0..k);
        let ce = log_sum_exp(&z) - z[label];
        let probs = Layer::<f64>::softmax()
            .forward(&Tensor::new(vec![1, k], z).unwrap())
            .unwrap();
        let fl = focal_loss(&probs, &[label], 0.0).unwrap().loss;
        worst = worst.max((fl - ce).abs());
    }
    if worst <= 1e-12 {
        Ok(format!("max |focal - CE| = {worst:.2e} over {n} inputs"))
    } else {
        Err(format!("max |focal - CE| = {worst:.2e} exceeds 1e-12"))
    }
}

/// Class-balanced weights: exactly 1 for a single-sample class, uniform for
/// equal counts.
pub fn class_balanced_identities() -> Verdict {
    for beta in [0.0, 0.5, 0.9, 0.999, 0.99998] {
        let single =
            class_balanced_weights(&[1], beta, WeightNorm::None).map_err(|e| e.to_string())?;
        if (single[0] - 1.0).abs() > 1e-12 {
            return Err(format!("beta {beta}: weight for n=1 is {}", single[0]));
        }
        for n in [1usize, 7, 500, 100_000] {
            for norm in [WeightNorm::None, WeightNorm::Mean] {
                let w = class_balanced_weights(&[n; 5], beta, norm).map_err(|e| e.to_string())?;
                if w.iter().any(|&x| x != w[0]) {
                    return Err(format!("beta {beta} n {n}: weights not uniform {w:?}"));
                }
            }
        }
    }
    Ok("n=1 gives 1, equal counts give uniform weights".into())
}

/// Default-width five-block architecture; conv biases start at zero, so the
/// network is bias-free once the head bias is zero as well.
pub fn conservation_arch() -> Architecture {
    Architecture::default()
}

/// Relevance totals at every layer interface against the starting logit on
/// `n` random images, plus z⁺ non-negativity with a non-negative head.
pub fn lrp_conservation(n: usize, seed: u64) -> Verdict {
    let arch = conservation_arch();
    let net: Network<f32> = Network::new(&arch, &mut rng_for(seed, &[1])).unwrap();
    if net
        .layers()
        .iter()
        .filter_map(|l| l.bias())
        .any(|b| b.data().iter().any(|&v| v != 0.0))
    {
        return Err("network is not bias-free".into());
    }
    // same network with |w| in the head: every dense contribution is
    // non-negative, so only the z⁺ conv rule can introduce a sign
    let mut positive_head = net.clone();
    let head = positive_head.block(HEAD_BLOCK).unwrap().layers.clone();
    for layer in &mut positive_head.layers_mut()[head] {
        if let Some(w) = layer.weights_mut() {
            for v in w.data_mut() {
                *v = v.abs();
            }
        }
    }
    let side = arch.input_size * arch.input_size * arch.input_channels;
    let mut rng = rng_for(seed, &[2]);
    let mut worst: f64 = 0.0;
    let mut most_negative: f64 = 0.0;
    for i in 0..n {
        let img: Vec<f32> = (0..side).map(|_| rng.random_range(0.0f32..1.0)).collect();
        let class = i % arch.num_classes;
        let trace = lrp_relevance(&net, &img, class, "conservation").map_err(|e| e.to_string())?;
        if trace.initial == 0.0 {
            continue;
        }
        worst = worst.max(trace.max_relative_leak());
        let pos =
            lrp_relevance(&positive_head, &img, class, "z-plus").map_err(|e| e.to_string())?;
        let scale = pos.initial.abs().max(f64::MIN_POSITIVE);
        most_negative =
            most_negative.min(pos.map.values.iter().fold(0.0f64, |m, &v| m.min(v)) / scale);
    }
    if worst > 1e-5 {
        return Err(format!("worst relative leak {worst:.2e} exceeds 1e-5"));
    }
    // allow only rounding noise below zero
    if most_negative < -1e-12 {
        return Err(format!(
            "z-plus relevance went negative ({most_negative:.2e} of the logit)"
        ));
    }
    Ok(format!(
        "worst relative leak {worst:.2e} over {n} inputs; z-plus maps non-negative"
    ))
}

/// Dataset and short phase configs small enough for contract tests.
pub fn tiny_setup() -> (Dataset, Architecture, PhaseConfig) {
    let gen = GenConfig {
        n_per_class: 8,
        test_per_class: 2,
        target_per_class: 4,
        n_probe: 16,
        seed: 5,
        ..GenConfig::default()
    };
    let ds = generate_dataset(&TaskSpec::default(), &gen).unwrap();
    let arch = Architecture {
        conv_widths: vec![2, 3, 3, 4, 4],
        ..Architecture::default()
    };
    let phase = PhaseConfig {
        epochs: 2,
        batch_size: 8,
        ..PhaseConfig::source()
    };
    (ds, arch, phase)
}

/// Frozen blocks keep their exact bytes through `transfer_train` and
/// `retrain_head`, and the trainable ones actually move.
pub fn freeze_contracts() -> Verdict {
    let (ds, arch, phase) = tiny_setup();
    let target = PhaseConfig {
        augment: PhaseConfig::target().augment,
        ..phase.clone()
    };
    let (source, _) = train_source(&ds, &arch, &phase, 9).map_err(|e| e.to_string())?;
    let names: Vec<String> = source.blocks().iter().map(|b| b.name.clone()).collect();
    let bytes = |net: &Network<f32>, name: &str| net.block_bytes(name).unwrap();
    for i in 0..=5 {
        let plan = FreezePlan::new(i).map_err(|e| e.to_string())?;
        let (transferred, _) =
            transfer_train(&source, plan, &ds, &target, 9).map_err(|e| e.to_string())?;
        for (b, name) in names.iter().take(5).enumerate() {
            let same = bytes(&source, name) == bytes(&transferred, name);
            if b < i && !same {
                return Err(format!("{}: frozen {name} changed", plan.label()));
            }
            if b >= i && same {
                return Err(format!("{}: trainable {name} never moved", plan.label()));
            }
        }
        let (retrained, _) =
            retrain_head(&transferred, &ds, &phase, 9).map_err(|e| e.to_string())?;
        for name in names.iter().take(5) {
            if bytes(&transferred, name) != bytes(&retrained, name) {
                return Err(format!("{}: retrain_head changed {name}", plan.label()));
            }
        }
    }
    Ok("FreezeB0..FreezeB5 keep frozen blocks byte-identical".into())
}
