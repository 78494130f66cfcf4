//! McNemar's test, the paired t-test, and the special functions behind their
//! p-values (log-gamma, regularized incomplete gamma and beta).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this many discordant pairs the exact binomial p is authoritative.
pub const EXACT_BINOMIAL_BELOW: u64 = 25;

const CF_TOL: f64 = 1e-12;
const CF_MAX_ITER: usize = 10_000;
const TINY: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Chi2Corrected,
    ExactBinomial,
    PairedT,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub method: Method,
    /// `None` when undefined (McNemar with no discordant pairs).
    #[serde(with = "json_float")]
    pub statistic: Option<f64>,
    pub df: Option<f64>,
    /// Two-sided p-value of `method`.
    pub p_value: f64,
    /// Continuity-corrected chi-square p (McNemar only).
    pub chi2_p: Option<f64>,
    /// Exact binomial p (McNemar with few discordant pairs).
    pub exact_p: Option<f64>,
    pub degenerate: bool,
}

/// JSON has no infinities; they are written as the strings `"inf"`/`"-inf"`.
mod json_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if x.is_finite() => s.serialize_some(x),
            Some(x) if *x > 0.0 => s.serialize_some("inf"),
            Some(x) if *x < 0.0 => s.serialize_some("-inf"),
            Some(_) => s.serialize_some("nan"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Ok(match Option::<Repr>::deserialize(d)? {
            None => None,
            Some(Repr::Num(x)) => Some(x),
            Some(Repr::Text(t)) => Some(match t.as_str() {
                "inf" => f64::INFINITY,
                "-inf" => f64::NEG_INFINITY,
                _ => f64::NAN,
            }),
        })
    }
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut term = 1.0 / a;
    let mut sum = term;
    let mut ap = a;
    for _ in 0..CF_MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_fraction(a: f64, x: f64) -> f64 {
    // modified Lentz on the Legendre continued fraction
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..CF_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Survival function of the chi-square distribution with one degree of
/// freedom, `erfc(sqrt(x / 2))`.
pub fn chi2_1_sf(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::InvalidArgument(format!("chi-square statistic {x}")));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    // erfc(z) = Q(1/2, z^2)
    Ok(gamma_q(0.5, x / 2.0))
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front =
        (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    // the fraction converges fast only on this side of the mean
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_fraction(x, a, b) / a
    } else {
        1.0 - front * beta_fraction(1.0 - x, b, a) / b
    }
}

/// Lentz evaluation of the continued fraction for `I_x(a, b)`.
fn beta_fraction(x: f64, a: f64, b: f64) -> f64 {
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let even = m * (b - m) * x / ((qam + m2) * (a + m2));
        for coeff in [even, -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))] {
            d = 1.0 + coeff * d;
            if d.abs() < TINY {
                d = TINY;
            }
            c = 1.0 + coeff / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            h *= d * c;
        }
        if (d * c - 1.0).abs() < CF_TOL {
            break;
        }
    }
    h
}

fn check_df(df: f64) -> Result<()> {
    if !(df >= 1.0 && df.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "degrees of freedom {df} must be >= 1"
        )));
    }
    Ok(())
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    if t.is_nan() {
        return Err(Error::InvalidArgument("t statistic is NaN".into()));
    }
    if t.is_infinite() {
        return Ok(if t > 0.0 { 0.0 } else { 1.0 });
    }
    let tail = 0.5 * inc_beta(df / (df + t * t), df / 2.0, 0.5);
    Ok(if t >= 0.0 { tail } else { 1.0 - tail })
}

/// Two-sided p for a t statistic.
pub fn student_t_two_sided(t: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    if t.is_infinite() {
        return Ok(0.0);
    }
    Ok(inc_beta(df / (df + t * t), df / 2.0, 0.5).min(1.0))
}

/// `C(n, k)` exactly, for the small `n` where the exact test is used.
fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
    }
    acc
}

/// `min(1, 2 P(X <= min(b, c)))` for `X ~ Binomial(b + c, 1/2)`.
pub fn exact_binomial_p(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let k = b.min(c);
    if n <= 100 {
        // integer tail; the division by 2^n is exact in f64
        let tail: u128 = (0..=k).map(|i| binomial(n, i)).sum();
        let p = 2.0 * tail as f64 / 2f64.powi(n as i32);
        return p.min(1.0);
    }
    let ln_half_n = n as f64 * std::f64::consts::LN_2;
    let ln_fact = |m: u64| ln_gamma(m as f64 + 1.0);
    let tail: f64 = (0..=k)
        .map(|i| (ln_fact(n) - ln_fact(i) - ln_fact(n - i) - ln_half_n).exp())
        .sum();
    (2.0 * tail).min(1.0)
}

/// McNemar's test on discordant counts: `b` = right by A and wrong by B,
/// `c` = wrong by A and right by B.
///
/// The statistic is always the continuity-corrected `(|b - c| - 1)^2 / (b + c)`.
/// With fewer than [`EXACT_BINOMIAL_BELOW`] discordant pairs the exact
/// binomial p is reported as `p_value`; `chi2_p` is filled either way.
pub fn mcnemar(b: u64, c: u64) -> TestResult {
    let n = b + c;
    if n == 0 {
        return TestResult {
            method: Method::ExactBinomial,
            statistic: None,
            df: Some(1.0),
            p_value: 1.0,
            chi2_p: None,
            exact_p: Some(1.0),
            degenerate: true,
        };
    }
    let diff = b.abs_diff(c) as f64 - 1.0;
    let statistic = diff * diff / n as f64;
    let chi2_p = chi2_1_sf(statistic).expect("finite statistic");
    let (method, p_value, exact_p) = if n < EXACT_BINOMIAL_BELOW {
        let p = exact_binomial_p(b, c);
        (Method::ExactBinomial, p, Some(p))
    } else {
        (Method::Chi2Corrected, chi2_p, None)
    };
    TestResult {
        method,
        statistic: Some(statistic),
        df: Some(1.0),
        p_value,
        chi2_p: Some(chi2_p),
        exact_p,
        degenerate: false,
    }
}

/// Discordant counts `(b, c)` from per-sample correctness of two classifiers.
pub fn discordant_counts(correct_a: &[bool], correct_b: &[bool]) -> Result<(u64, u64)> {
    if correct_a.len() != correct_b.len() {
        return Err(Error::Shape(
            "classifiers scored on different sample sets".into(),
        ));
    }
    let mut b = 0;
    let mut c = 0;
    for (&x, &y) in correct_a.iter().zip(correct_b) {
        match (x, y) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok((b, c))
}

/// Paired t-test on `d = xs - ys`. Negative t means `mean(xs) < mean(ys)`.
pub fn paired_t_test(xs: &[f64], ys: &[f64]) -> Result<TestResult> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!(
            "paired samples of length {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "paired t-test needs at least 2 pairs".into(),
        ));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("paired t-test input".into()));
    }
    let d: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let df = (n - 1) as f64;
    let sd = var.sqrt();
    let (t, p, degenerate) = if sd == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0, false)
        } else {
            (f64::INFINITY.copysign(mean), 0.0, true)
        }
    } else {
        let t = mean / (sd / (n as f64).sqrt());
        (t, student_t_two_sided(t, df)?, false)
    };
    Ok(TestResult {
        method: Method::PairedT,
        statistic: Some(t),
        df: Some(df),
        p_value: p,
        chi2_p: None,
        exact_p: None,
        degenerate,
    })
}

/// Pearson chi-square test of independence on a 2x2 table (no continuity
/// correction). Returns `(statistic, p)`; a table with an empty margin gives
/// `(0, 1)`.
pub fn chi2_independence_2x2(table: [[u64; 2]; 2]) -> (f64, f64) {
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    let n = (rows[0] + rows[1]) as f64;
    if rows.contains(&0) || cols.contains(&0) {
        return (0.0, 1.0);
    }
    let mut stat = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let expected = rows[i] as f64 * cols[j] as f64 / n;
            let diff = table[i][j] as f64 - expected;
            stat += diff * diff / expected;
        }
    }
    (stat, chi2_1_sf(stat).expect("finite statistic"))
}
