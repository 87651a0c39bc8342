//! Corpus BLEU, character accuracy, Welch's unequal-variance t-test and
//! per-seed sign counts.

use std::hash::Hash;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenId;
use crate::error::{Error, Result};

fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> FxHashMap<&[T], usize> {
    let mut counts = FxHashMap::default();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU in `[0, 100]` over orders `1..=max_n`: clipped n-gram
/// precisions, add-one smoothing from order 2 on, geometric mean, and
/// brevity penalty `min(1, exp(1 - r/c))`.
pub fn corpus_bleu<T: Eq + Hash>(
    hypotheses: &[Vec<T>],
    references: &[Vec<T>],
    max_n: usize,
) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::LengthMismatch {
            left: hypotheses.len(),
            right: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if max_n == 0 {
        return Err(Error::Config("BLEU needs max_n >= 1".into()));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            for (gram, &c) in &hc {
                matches[n - 1] += c.min(rc.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 || matches[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let p = if n == 0 {
            matches[0] as f64 / totals[0] as f64
        } else {
            (matches[n] as f64 + 1.0) / (totals[n] as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let bp = (1.0 - ref_len as f64 / hyp_len as f64).exp().min(1.0);
    Ok(100.0 * bp * (log_sum / max_n as f64).exp())
}

/// Splits a character-token sequence into words at `separator`, dropping
/// empty words.
pub fn words(seq: &[TokenId], separator: Option<TokenId>) -> Vec<Vec<TokenId>> {
    match separator {
        None => seq.iter().map(|&t| vec![t]).collect(),
        Some(sep) => seq
            .split(|&t| t == sep)
            .filter(|w| !w.is_empty())
            .map(<[TokenId]>::to_vec)
            .collect(),
    }
}

/// Position-wise matches over the longer length; two empty sequences score 1.
pub fn char_accuracy<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> f64 {
    let longest = hypothesis.len().max(reference.len());
    if longest == 0 {
        return 1.0;
    }
    let hits = hypothesis
        .iter()
        .zip(reference)
        .filter(|(a, b)| a == b)
        .count();
    hits as f64 / longest as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n−1 denominator).
    pub std: f64,
}

impl SummaryStats {
    pub fn new(n: usize, mean: f64, std: f64) -> Result<Self> {
        let s = Self { n, mean, std };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidStats(format!("need n >= 2, got {}", self.n)));
        }
        if !self.mean.is_finite() || !self.std.is_finite() || self.std < 0.0 {
            return Err(Error::InvalidStats(format!(
                "mean {} / std {} must be finite with std >= 0",
                self.mean, self.std
            )));
        }
        Ok(())
    }

    pub fn from_samples(xs: &[f64]) -> Result<Self> {
        let n = xs.len();
        if n < 2 {
            return Err(Error::InvalidStats(format!("need n >= 2, got {n}")));
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        Self::new(n, mean, (ss / (n - 1) as f64).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub t_statistic: f64,
    pub df: f64,
    pub p_two_sided: f64,
}

/// Welch's t-test of `mean_b − mean_a` from summary statistics.
pub fn welch_t_test(a: &SummaryStats, b: &SummaryStats) -> Result<TestResult> {
    a.validate()?;
    b.validate()?;
    let va = a.std * a.std / a.n as f64;
    let vb = b.std * b.std / b.n as f64;
    let se2 = va + vb;
    if se2 == 0.0 {
        if a.mean == b.mean {
            return Ok(TestResult {
                t_statistic: 0.0,
                df: (a.n + b.n - 2) as f64,
                p_two_sided: 1.0,
            });
        }
        return Err(Error::InvalidStats(
            "both groups have zero variance but different means".into(),
        ));
    }
    let t = (b.mean - a.mean) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.n - 1) as f64 + vb * vb / (b.n - 1) as f64);
    let p = student_t_two_sided(t, df)?;
    Ok(TestResult {
        t_statistic: t,
        df,
        p_two_sided: p,
    })
}

/// Welch's t-test on raw samples.
pub fn welch_t_test_samples(a: &[f64], b: &[f64]) -> Result<TestResult> {
    welch_t_test(
        &SummaryStats::from_samples(a)?,
        &SummaryStats::from_samples(b)?,
    )
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> Result<f64> {
    if df.is_nan() || df <= 0.0 || t.is_nan() {
        return Err(Error::InvalidStats(format!("invalid t = {t}, df = {df}")));
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let x = df / (df + t * t);
    Ok(regularized_incomplete_beta(x, df / 2.0, 0.5)?.clamp(0.0, 1.0))
}

/// Student-t cumulative distribution function.
pub fn student_t_cdf(t: f64, df: f64) -> Result<f64> {
    let tail = student_t_two_sided(t, df)? / 2.0;
    Ok(if t >= 0.0 { 1.0 - tail } else { tail })
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

/// `ln Γ(x)` for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

const BETA_MAX_ITER: usize = 300;
const BETA_TOL: f64 = 1e-10;
const TINY: f64 = 1e-300;

/// Regularized incomplete beta `I_x(a, b)` by Lentz's continued fraction.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) || a.is_nan() || a <= 0.0 || b.is_nan() || b <= 0.0 {
        return Err(Error::InvalidStats(format!(
            "incomplete beta undefined at x = {x}, a = {a}, b = {b}"
        )));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(x);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(ln_front.exp() * beta_fraction(x, a, b)? / a)
    } else {
        Ok(1.0 - ln_front.exp() * beta_fraction(1.0 - x, b, a)? / b)
    }
}

fn beta_fraction(x: f64, a: f64, b: f64) -> Result<f64> {
    let clamp = |v: f64| if v.abs() < TINY { TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - (a + b) * x / (a + 1.0));
    let mut h = d;
    for m in 1..=BETA_MAX_ITER {
        let m = m as f64;
        let even = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        d = 1.0 / clamp(1.0 + even * d);
        c = clamp(1.0 + even / c);
        h *= d * c;
        let odd = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        d = 1.0 / clamp(1.0 + odd * d);
        c = clamp(1.0 + odd / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < BETA_TOL {
            return Ok(h);
        }
    }
    Err(Error::InvalidStats(format!(
        "incomplete beta did not converge at x = {x}, a = {a}, b = {b}"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignCounts {
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
}

/// Counts `a > b`, `b > a` and `a = b` over paired per-seed values.
pub fn sign_aggregate(pairs: &[(f64, f64)]) -> Result<SignCounts> {
    if pairs.is_empty() {
        return Err(Error::InvalidStats("no pairs to aggregate".into()));
    }
    let mut s = SignCounts {
        wins_a: 0,
        wins_b: 0,
        ties: 0,
    };
    for &(a, b) in pairs {
        if a > b {
            s.wins_a += 1;
        } else if b > a {
            s.wins_b += 1;
        } else {
            s.ties += 1;
        }
    }
    Ok(s)
}
