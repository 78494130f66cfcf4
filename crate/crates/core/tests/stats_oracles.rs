mod common;

use common::grids::{CHI2_1_SF, STUDENT_T_SF};
use faud::stats::{chi2_1_sf, exact_binomial_p, mcnemar, student_t_sf};

#[test]
fn chi2_survival_matches_reference_grid() {
    for &(x, want) in &CHI2_1_SF {
        let got = chi2_1_sf(x).unwrap();
        assert!((got - want).abs() < 1e-10, "x={x}: {got} vs {want}");
    }
}

#[test]
fn student_t_survival_matches_reference_grid() {
    for &(t, df, want) in &STUDENT_T_SF {
        let got = student_t_sf(t, df).unwrap();
        assert!((got - want).abs() < 1e-10, "t={t} df={df}: {got} vs {want}");
    }
}

/// Two-sided p by enumerating every outcome of `n` fair coin flips.
fn brute_force_exact_p(b: u64, c: u64) -> f64 {
    let n = b + c;
    let k = b.min(c);
    let hits = (0u64..1 << n)
        .filter(|m| u64::from(m.count_ones()) <= k)
        .count();
    (2.0 * hits as f64 / (1u64 << n) as f64).min(1.0)
}

#[test]
fn exact_binomial_matches_enumeration() {
    for n in 1..=20u64 {
        for b in 0..=n {
            let c = n - b;
            assert_eq!(
                exact_binomial_p(b, c),
                brute_force_exact_p(b, c),
                "b={b} c={c}"
            );
            assert_eq!(mcnemar(b, c).exact_p, Some(brute_force_exact_p(b, c)));
        }
    }
}
