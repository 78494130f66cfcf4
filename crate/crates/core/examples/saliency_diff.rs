//! LRP difference maps between two source-task models on the images of one
//! class that the first gets right and the second gets wrong. Point it at a
//! sweep output, e.g. the retrained FreezeB5 and FreezeB0 heads.
//!
//! `cargo run --release --example saliency_diff -- <data_dir> <a.ckpt> <b.ckpt> <class> <out_dir>`

use std::path::PathBuf;

use faud::checkpoint::load_checkpoint;
use faud::lrp::{diff_saliency, lrp_relevance, normalize_saliency, render_map};
use faud::pipeline::select_divergent_samples;
use faud::synth::Dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() != 5 {
        eprintln!("usage: saliency_diff <data_dir> <a.ckpt> <b.ckpt> <class> <out_dir>");
        std::process::exit(2);
    }
    let ds = Dataset::load(&PathBuf::from(&args[0]))?;
    let a = load_checkpoint(&PathBuf::from(&args[1]))?;
    let b = load_checkpoint(&PathBuf::from(&args[2]))?;
    let class = ds.spec.class_index(&args[3])?;
    let out = PathBuf::from(&args[4]);
    std::fs::create_dir_all(&out)?;

    let ids = select_divergent_samples(&a, &b, &ds.source.test, class)?;
    println!(
        "{} test images of `{}` right under A, wrong under B",
        ids.len(),
        args[3]
    );
    for id in &ids {
        let im = ds
            .source
            .test
            .iter()
            .find(|im| &im.id == id)
            .expect("selected from this split");
        let ra = lrp_relevance(&a, &im.pixels, class, "a")?;
        let rb = lrp_relevance(&b, &im.pixels, class, "b")?;
        let d = diff_saliency(&ra.map, &rb.map)?;
        render_map(&d, &out.join(format!("{id}-diff.pgm")))?;
        render_map(
            &normalize_saliency(&ra.map)?,
            &out.join(format!("{id}-a.pgm")),
        )?;
        println!(
            "{id}: logit A {:.3}, B {:.3}; worst layer leak A {:.1e}",
            ra.initial,
            rb.initial,
            ra.max_relative_leak()
        );
    }
    Ok(())
}
