//! Generate the default planted-concept dataset and write it to disk.
//!
//! `cargo run --release --example gen_dataset -- out/data`

use std::path::PathBuf;

use faud::synth::{generate_dataset, GenConfig, TaskSpec};

fn main() -> faud::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/data".into()));
    let spec = TaskSpec::default();
    let ds = generate_dataset(&spec, &GenConfig::default())?;
    ds.save(&dir)?;

    println!(
        "source: {} train / {} val / {} test",
        ds.source.train.len(),
        ds.source.val.len(),
        ds.source.test.len()
    );
    println!(
        "target: {} train / {} val / {} test",
        ds.target.train.len(),
        ds.target.val.len(),
        ds.target.test.len()
    );
    println!("probe:  {}", ds.probe.len());
    for class in &spec.classes {
        let concepts: Vec<String> = class
            .concepts
            .iter()
            .map(|c| format!("{c} ({})", c.region()))
            .collect();
        println!("  {:<9} {}", class.name, concepts.join(", "));
    }
    println!(
        "target rule: {:?}, forgettable: {:?}",
        spec.target_rule, spec.forgettable
    );
    println!("wrote {}", dir.display());
    Ok(())
}
