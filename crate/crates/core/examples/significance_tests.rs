//! McNemar and paired t-tests on small hand-made inputs.
//!
//! `cargo run --release --example significance_tests`

use faud::stats::{discordant_counts, mcnemar, paired_t_test};

fn main() -> faud::Result<()> {
    // two classifiers scored on the same 12 images
    let a = [
        true, true, true, true, true, true, true, true, true, true, false, true,
    ];
    let b = [
        false, false, true, false, false, true, false, false, false, false, false, true,
    ];
    let (right_a, right_b) = discordant_counts(&a, &b)?;
    let m = mcnemar(right_a, right_b);
    println!("discordant: A-only {right_a}, B-only {right_b}");
    println!("mcnemar: {:?}, p = {:.4}", m.method, m.p_value);

    for (b, c) in [(10, 2), (30, 12), (0, 0)] {
        let m = mcnemar(b, c);
        println!(
            "mcnemar({b:>2}, {c:>2}): stat {:>8}  chi2 p {:>8}  exact p {:>8}  reported {:.4}",
            m.statistic.map_or("-".into(), |s| format!("{s:.4}")),
            m.chi2_p.map_or("-".into(), |p| format!("{p:.4}")),
            m.exact_p.map_or("-".into(), |p| format!("{p:.4}")),
            m.p_value
        );
    }

    // per-iteration F1 of two probes sharing folds
    let f1_a = [0.71, 0.68, 0.74, 0.70, 0.69, 0.72];
    let f1_b = [0.80, 0.77, 0.79, 0.83, 0.78, 0.81];
    let t = paired_t_test(&f1_a, &f1_b)?;
    println!(
        "paired t (A - B): t = {:.3}, df = {}, p = {:.2e}",
        t.statistic.unwrap_or(f64::NAN),
        t.df.unwrap_or(f64::NAN),
        t.p_value
    );
    Ok(())
}
