//! Linear concept probes on the last conv block of a briefly trained source
//! model and of the same network at initialisation.
//!
//! `cargo run --release --example concept_probe -- [concept] [iterations]`

use faud::pipeline::{train_source, PhaseConfig};
use faud::probe::{compare_probe_runs, extract_features, repeated_2fold_cv, Crop, ProbeConfig};
use faud::seed::rng_for;
use faud::synth::{generate_dataset, Concept, GenConfig, TaskSpec};
use faud::{Architecture, Network};

fn main() -> faud::Result<()> {
    let mut args = std::env::args().skip(1);
    let concept: Concept = args.next().as_deref().unwrap_or("C2").parse()?;
    let iterations: usize = args.next().map_or(100, |s| s.parse().expect("iterations"));

    let gen = GenConfig {
        n_per_class: 80,
        test_per_class: 20,
        target_per_class: 4,
        ..GenConfig::default()
    };
    let ds = generate_dataset(&TaskSpec::default(), &gen)?;
    let arch = Architecture::default();
    let cfg = PhaseConfig {
        epochs: 8,
        ..PhaseConfig::source()
    };
    let (trained, report) = train_source(&ds, &arch, &cfg, 1)?;
    println!(
        "source val macro F1 after {} epochs: {:.3}",
        cfg.epochs, report.val_metrics.macro_f1
    );
    let fresh: Network<f32> = Network::new(&arch, &mut rng_for(99, &[]))?;

    let svm = ProbeConfig::default();
    let fa = extract_features(&fresh, &ds.probe, concept, Crop::Full, "init")?;
    let fb = extract_features(&trained, &ds.probe, concept, Crop::Full, "trained")?;
    println!(
        "{} probe images, {} features each",
        fa.features.len(),
        fa.dim()
    );
    let ra = repeated_2fold_cv(&fa, iterations, 7, &svm)?;
    let rb = repeated_2fold_cv(&fb, iterations, 7, &svm)?;
    let cmp = compare_probe_runs(&ra, &rb)?;
    println!(
        "{concept}: init F1 {:.3}, trained F1 {:.3}, t = {:.2}, p = {:.2e}",
        cmp.mean_a,
        cmp.mean_b,
        cmp.test.statistic.unwrap_or(f64::NAN),
        cmp.test.p_value
    );
    Ok(())
}
