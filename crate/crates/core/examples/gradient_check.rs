//! Compare backprop gradients with central finite differences on a tiny
//! five-block network in f64.
//!
//! `cargo run --release --example gradient_check -- [seed]`

use faud::loss::LossConfig;
use faud::seed::rng_for;
use faud::{Architecture, Network, Tensor};
use rand::Rng;

const STEP: f64 = 1e-5;

fn main() -> faud::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map_or(0, |s| s.parse().expect("seed"));
    let arch = Architecture {
        input_size: 16,
        input_channels: 1,
        conv_widths: vec![2, 3, 3, 2, 2],
        pooled: vec![true, true, true, true, false],
        num_classes: 3,
    };
    let mut rng = rng_for(seed, &[]);
    let mut net: Network<f64> = Network::new(&arch, &mut rng)?;
    let x = Tensor::from_fn(vec![2, 16, 16, 1], |_| rng.random_range(0.0..1.0));
    let labels = [0, 2];
    let loss = LossConfig::unweighted(2.0);

    let out = loss.evaluate(&net.forward(&x)?, &labels)?;
    let grads = net.backward(&out.logits_grad)?;
    for li in 0..net.layers().len() {
        let Some(g) = grads.layers[li].clone() else {
            continue;
        };
        let mut worst: f64 = 0.0;
        for i in 0..g.weights.len() {
            let w0 = net.layers()[li].weights().unwrap().data()[i];
            let mut at = |v: f64| -> faud::Result<f64> {
                net.layers_mut()[li].weights_mut().unwrap().data_mut()[i] = v;
                Ok(loss.evaluate(&net.infer(&x)?, &labels)?.loss)
            };
            let numeric = (at(w0 + STEP)? - at(w0 - STEP)?) / (2.0 * STEP);
            at(w0)?;
            let analytic = g.weights.data()[i];
            worst =
                worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
        }
        println!(
            "layer {li:>2} {:?}: {} weights, worst rel err {worst:.2e}",
            net.layers()[li].kind(),
            g.weights.len()
        );
    }
    Ok(())
}
