//! Train the source classifier on a freshly generated dataset and print its
//! test metrics.
//!
//! `cargo run --release --example train_source -- [epochs] [n_per_class]`

use std::time::Instant;

use faud::pipeline::{source_test_metrics, train_source, PhaseConfig};
use faud::synth::{generate_dataset, GenConfig, TaskSpec};
use faud::Architecture;

fn main() -> faud::Result<()> {
    let mut args = std::env::args().skip(1);
    let mut cfg = PhaseConfig::source();
    if let Some(e) = args.next() {
        cfg.epochs = e.parse().expect("epochs");
    }
    let mut gen = GenConfig::default();
    if let Some(n) = args.next() {
        gen.n_per_class = n.parse().expect("n_per_class");
    }
    let ds = generate_dataset(&TaskSpec::default(), &gen)?;

    let t = Instant::now();
    let (net, report) = train_source(&ds, &Architecture::default(), &cfg, 1)?;
    let secs = t.elapsed().as_secs_f64();
    for e in &report.history {
        println!(
            "epoch {:>3}  loss {:.5}  val macro F1 {:.3}",
            e.epoch, e.mean_loss, e.val_macro_f1
        );
    }
    println!(
        "best epoch {} ({secs:.1}s, {:.2}s/epoch)",
        report.best_epoch,
        secs / cfg.epochs as f64
    );
    print!("{}", source_test_metrics(&net, &ds)?.to_csv());
    Ok(())
}
