//! Focal loss against cross-entropy, and class-balanced weights for a skewed
//! class histogram.
//!
//! `cargo run --release --example focal_loss`

use faud::loss::{class_balanced_weights, focal_loss, focal_term, WeightNorm};
use faud::Tensor;

fn main() -> faud::Result<()> {
    println!(
        "{:>6} {:>10} {:>10} {:>10}",
        "p_t", "gamma=0", "gamma=2", "gamma=5"
    );
    for p in [0.05, 0.2, 0.5, 0.8, 0.95] {
        println!(
            "{p:>6.2} {:>10.5} {:>10.5} {:>10.5}",
            focal_term(p, 0.0),
            focal_term(p, 2.0),
            focal_term(p, 5.0)
        );
    }

    let probs = Tensor::new(vec![2, 3], vec![0.7, 0.2, 0.1, 0.1, 0.1, 0.8])?;
    for gamma in [0.0, 2.0] {
        let out = focal_loss::<f64>(&probs, &[0, 1], gamma)?;
        println!(
            "batch loss gamma={gamma}: {:.5}, dL/dz {:?}",
            out.loss,
            out.logits_grad.data()
        );
    }

    let counts = [500, 120, 40, 8];
    for beta in [0.9, 0.999, 0.99998] {
        let w = class_balanced_weights(&counts, beta, WeightNorm::Mean)?;
        let w: Vec<String> = w.iter().map(|x| format!("{x:.3}")).collect();
        println!("beta {beta}: weights {} for counts {counts:?}", w.join(" "));
    }
    Ok(())
}
