//! Full FreezeB0..FreezeB5 sweep on the default dataset: target recall,
//! post-retrain source recalls, McNemar tests against FreezeB5 and the
//! trade-off pick.
//!
//! `cargo run --release --example forgetting_sweep -- [seed]`

use std::time::Instant;

use faud::pipeline::{run_forgetting_sweep, SweepConfig};
use faud::synth::{generate_dataset, GenConfig, TaskSpec};

fn main() -> faud::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .map_or(1, |s| s.parse().expect("seed"));
    let ds = generate_dataset(
        &TaskSpec::default(),
        &GenConfig {
            seed,
            ..GenConfig::default()
        },
    )?;
    let cfg = SweepConfig {
        seed,
        ..SweepConfig::default()
    };

    let t = Instant::now();
    let out = run_forgetting_sweep(&ds, &cfg, None, 1)?;
    let r = &out.report;
    println!("source test macro F1 {:.3}", r.source_metrics.macro_f1);
    println!(
        "{:<9} {:>7}  {}",
        "model",
        "target",
        r.class_names.join(" ")
    );
    for row in &r.tradeoff {
        let recalls: Vec<String> = row
            .source_recalls
            .iter()
            .map(|x| format!("{x:.2}"))
            .collect();
        println!(
            "{:<9} {:>7.3}  {}  score {:.3}",
            row.model,
            row.target_recall,
            recalls.join(" "),
            row.score
        );
    }
    for c in r
        .comparisons
        .iter()
        .filter(|c| r.forgotten_classes.contains(&c.class))
    {
        println!(
            "{} vs FreezeB5 on {:<8} b={:<3} c={:<3} p={:.3e}",
            c.model, c.class, c.b, c.c, c.test.p_value
        );
    }
    println!("best: {} ({:.0}s)", r.best_model, t.elapsed().as_secs_f64());
    Ok(())
}
