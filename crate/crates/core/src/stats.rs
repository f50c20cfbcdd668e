//! Statistical protocol for paired model comparisons.
//!
//! Normality gating (Shapiro–Wilk), Wilcoxon signed-rank and paired t tests
//! for within-question comparisons, Mann–Whitney U for independent samples,
//! Benjamini–Hochberg false discovery rate control, Cohen's effect sizes,
//! percentile bootstrap intervals and paired-design sample sizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

/// Largest n for which the signed-rank null is enumerated exactly.
pub const WILCOXON_EXACT_MAX_N: usize = 25;
/// Largest combined size for which the rank-sum null is enumerated exactly.
pub const MANN_WHITNEY_EXACT_MAX_N: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("parameter {name}={value} out of range")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("Shapiro-Wilk supports 3..=5000 observations, got {0}")]
    ShapiroSize(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    Greater,
    Less,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub labels: Vec<String>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PairedSample {
    pub fn new(labels: Vec<String>, a: Vec<f64>, b: Vec<f64>) -> Result<Self, StatsError> {
        if a.len() != b.len() || labels.len() != a.len() {
            return Err(StatsError::LengthMismatch(a.len(), b.len()));
        }
        if a.len() < 2 {
            return Err(StatsError::TooFew { needed: 2, got: a.len() });
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        Ok(Self { labels, a, b })
    }

    /// `a - b`, pair by pair.
    pub fn differences(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(x, y)| x - y).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test_name: String,
    pub statistic: f64,
    pub alternative: Alternative,
    /// p for the requested direction; for two-sided requests, the smaller
    /// one-sided p.
    pub p_one_sided: f64,
    pub p_greater: f64,
    pub p_less: f64,
    pub p_two_sided: f64,
    pub effect_size: Option<f64>,
    pub ci95: Option<(f64, f64)>,
    pub n: usize,
    pub exact: bool,
}

impl TestResult {
    #[allow(clippy::too_many_arguments)]
    fn new(
        test_name: &str,
        statistic: f64,
        alternative: Alternative,
        p_greater: f64,
        p_less: f64,
        p_two_sided: f64,
        effect_size: Option<f64>,
        ci95: Option<(f64, f64)>,
        n: usize,
        exact: bool,
    ) -> Self {
        let p_greater = p_greater.clamp(0.0, 1.0);
        let p_less = p_less.clamp(0.0, 1.0);
        let p_one_sided = match alternative {
            Alternative::Greater => p_greater,
            Alternative::Less => p_less,
            Alternative::TwoSided => p_greater.min(p_less),
        };
        Self {
            test_name: test_name.to_string(),
            statistic,
            alternative,
            p_one_sided,
            p_greater,
            p_less,
            p_two_sided: p_two_sided.clamp(0.0, 1.0),
            effect_size,
            ci95,
            n,
            exact,
        }
    }

    /// The p-value matching `alternative`.
    pub fn p(&self) -> f64 {
        match self.alternative {
            Alternative::TwoSided => self.p_two_sided,
            _ => self.p_one_sided,
        }
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)).sqrt()
}

pub fn median(x: &[f64]) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

fn check_finite(x: &[f64]) -> Result<(), StatsError> {
    if x.iter().any(|v| !v.is_finite()) {
        Err(StatsError::NonFinite)
    } else {
        Ok(())
    }
}

/// Relative tolerance for treating a spread as zero.
fn is_degenerate(sd: f64, scale: f64) -> bool {
    sd <= 1e-12 * scale.abs().max(1.0)
}

// ---------------------------------------------------------------------------
// Shapiro–Wilk
// ---------------------------------------------------------------------------

fn poly(coefs: &[f64], x: f64) -> f64 {
    coefs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Shapiro–Wilk W and p-value (Royston's approximation).
pub fn shapiro_wilk(x: &[f64]) -> Result<(f64, f64), StatsError> {
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    const C3: [f64; 4] = [0.544, -0.39978, 0.025054, -6.714e-4];
    const C4: [f64; 4] = [1.3822, -0.77857, 0.062767, -0.0020322];
    const C5: [f64; 4] = [-1.5861, -0.31082, -0.083751, 0.0038915];
    const C6: [f64; 3] = [-0.4803, -0.082676, 0.0030302];
    const G: [f64; 2] = [-2.273, 0.459];

    let n = x.len();
    if !(3..=5000).contains(&n) {
        return Err(StatsError::ShapiroSize(n));
    }
    check_finite(x)?;
    let mut xs = x.to_vec();
    xs.sort_by(f64::total_cmp);
    let range = xs[n - 1] - xs[0];
    if is_degenerate(range, xs[n - 1]) {
        return Err(StatsError::ZeroVariance);
    }

    let norm = std_normal();
    let half = n / 2;
    let an = n as f64;
    // Coefficients for the upper half, largest first.
    let mut a = vec![0.0; half];
    if n == 3 {
        a[0] = 0.5f64.sqrt();
    } else {
        let an25 = an + 0.25;
        let m: Vec<f64> = (1..=half)
            .map(|i| norm.inverse_cdf((i as f64 - 0.375) / an25))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / an.sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first_free, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            let fac = ((summ2 - 2.0 * m[0].powi(2) - 2.0 * m[1].powi(2)) / (1.0 - 2.0 * a1.powi(2) - 2.0 * a2.powi(2))).sqrt();
            a[1] = a2;
            (2, fac)
        } else {
            let fac = ((summ2 - 2.0 * m[0].powi(2)) / (1.0 - 2.0 * a1.powi(2))).sqrt();
            (1, fac)
        };
        a[0] = a1;
        for i in first_free..half {
            a[i] = -m[i] / fac;
        }
    }

    let mu = mean(&xs);
    let ssq: f64 = xs.iter().map(|v| (v - mu).powi(2)).sum();
    let num: f64 = (0..half).map(|i| a[i] * (xs[n - 1 - i] - xs[i])).sum();
    let w = (num * num / ssq).min(1.0);

    let p = if n == 3 {
        let pi6 = 6.0 / std::f64::consts::PI;
        let stqr = std::f64::consts::PI / 3.0;
        (pi6 * (w.sqrt().asin() - stqr)).clamp(0.0, 1.0)
    } else {
        let w1 = (1.0 - w).max(f64::MIN_POSITIVE);
        let mut y = w1.ln();
        let (m, s) = if n <= 11 {
            let gamma = poly(&G, an);
            if y >= gamma {
                return Ok((w, 1e-99));
            }
            y = -(gamma - y).ln();
            (poly(&C3, an), poly(&C4, an).exp())
        } else {
            let xx = an.ln();
            (poly(&C5, xx), poly(&C6, xx).exp())
        };
        std_normal().sf((y - m) / s)
    };
    Ok((w, p))
}

// ---------------------------------------------------------------------------
// Ranks
// ---------------------------------------------------------------------------

/// Mid-ranks (1-based) and the sizes of tie groups.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let r = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

fn tie_term(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t as f64).powi(3) - t as f64).sum()
}

// ---------------------------------------------------------------------------
// Paired tests
// ---------------------------------------------------------------------------

pub fn cohens_dz(d: &[f64]) -> Result<f64, StatsError> {
    if d.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: d.len() });
    }
    check_finite(d)?;
    let sd = sample_sd(d);
    if is_degenerate(sd, mean(d)) {
        return Err(StatsError::ZeroVariance);
    }
    Ok(mean(d) / sd)
}

/// t-based 95% interval on the mean; `None` below two observations or
/// without spread.
fn mean_ci95(d: &[f64]) -> Option<(f64, f64)> {
    if d.len() < 2 {
        return None;
    }
    let m = mean(d);
    let sd = sample_sd(d);
    if is_degenerate(sd, m) {
        return Some((m, m));
    }
    let t = StudentsT::new(0.0, 1.0, d.len() as f64 - 1.0).ok()?.inverse_cdf(0.975);
    let half = t * sd / (d.len() as f64).sqrt();
    Some((m - half, m + half))
}

/// Null distribution of the doubled signed-rank sum: `counts[s]` is the
/// number of sign assignments whose positive doubled ranks sum to `s`.
fn signed_rank_null(doubled_ranks: &[usize]) -> Vec<f64> {
    let total: usize = doubled_ranks.iter().sum();
    let mut counts = vec![0.0; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in doubled_ranks {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Wilcoxon signed-rank test on `a - b`. Zero differences are dropped, ties
/// get mid-ranks; exact null up to [`WILCOXON_EXACT_MAX_N`] non-zero pairs,
/// normal approximation with continuity and tie correction beyond.
pub fn wilcoxon_signed_rank(s: &PairedSample, alternative: Alternative) -> Result<TestResult, StatsError> {
    wilcoxon_with(s, alternative, None)
}

/// As [`wilcoxon_signed_rank`], forcing the exact (`Some(true)`) or the
/// approximate (`Some(false)`) branch.
pub fn wilcoxon_with(s: &PairedSample, alternative: Alternative, force_exact: Option<bool>) -> Result<TestResult, StatsError> {
    let d_all = s.differences();
    let d: Vec<f64> = d_all.iter().copied().filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return Err(StatsError::AllZeroDifferences);
    }
    let n = d.len();
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let t_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();

    let exact = force_exact.unwrap_or(n <= WILCOXON_EXACT_MAX_N);
    let (p_greater, p_less) = if exact {
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let counts = signed_rank_null(&doubled);
        let total: f64 = counts.iter().sum();
        let obs = (t_plus * 2.0).round() as usize;
        let upper: f64 = counts[obs..].iter().sum();
        let lower: f64 = counts[..=obs].iter().sum();
        (upper / total, lower / total)
    } else {
        let nf = n as f64;
        let mu = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&ties) / 48.0;
        let sigma = var.sqrt();
        let norm = std_normal();
        (
            norm.sf((t_plus - mu - 0.5) / sigma),
            norm.cdf((t_plus - mu + 0.5) / sigma),
        )
    };
    let p_two = (2.0 * p_greater.min(p_less)).min(1.0);
    let effect = cohens_dz(&d_all).ok();
    Ok(TestResult::new(
        "wilcoxon_signed_rank",
        t_plus,
        alternative,
        p_greater,
        p_less,
        p_two,
        effect,
        mean_ci95(&d_all),
        n,
        exact,
    ))
}

/// Paired t test on `a - b`; effect size is Cohen's dz.
pub fn paired_t(s: &PairedSample, alternative: Alternative) -> Result<TestResult, StatsError> {
    let d = s.differences();
    let n = d.len();
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    let m = mean(&d);
    let sd = sample_sd(&d);
    if is_degenerate(sd, m) {
        return Err(StatsError::ZeroVariance);
    }
    let t = m / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, n as f64 - 1.0).expect("df >= 1");
    let p_greater = dist.sf(t);
    let p_less = dist.cdf(t);
    Ok(TestResult::new(
        "paired_t",
        t,
        alternative,
        p_greater,
        p_less,
        (2.0 * p_greater.min(p_less)).min(1.0),
        Some(m / sd),
        mean_ci95(&d),
        n,
        false,
    ))
}

/// Shapiro–Wilk on the differences decides the test: p < 0.05 (or a
/// difference vector Shapiro–Wilk cannot assess) selects Wilcoxon, otherwise
/// the paired t test.
pub fn paired_comparison(s: &PairedSample, alternative: Alternative) -> Result<TestResult, StatsError> {
    let d = s.differences();
    match shapiro_wilk(&d) {
        Ok((_, p)) if p >= 0.05 => paired_t(s, alternative),
        _ => wilcoxon_signed_rank(s, alternative),
    }
}

// ---------------------------------------------------------------------------
// Independent samples
// ---------------------------------------------------------------------------

fn pooled_cohens_d(x: &[f64], y: &[f64]) -> Option<f64> {
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    if x.len() < 2 || y.len() < 2 {
        return None;
    }
    let pooled = (((n1 - 1.0) * sample_sd(x).powi(2) + (n2 - 1.0) * sample_sd(y).powi(2)) / (n1 + n2 - 2.0)).sqrt();
    let diff = mean(x) - mean(y);
    (!is_degenerate(pooled, diff)).then(|| diff / pooled)
}

fn welch_ci95(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if x.len() < 2 || y.len() < 2 {
        return None;
    }
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let (v1, v2) = (sample_sd(x).powi(2) / n1, sample_sd(y).powi(2) / n2);
    let diff = mean(x) - mean(y);
    let se = (v1 + v2).sqrt();
    if is_degenerate(se, diff) {
        return Some((diff, diff));
    }
    let df = (v1 + v2).powi(2) / (v1 * v1 / (n1 - 1.0) + v2 * v2 / (n2 - 1.0));
    let t = StudentsT::new(0.0, 1.0, df).ok()?.inverse_cdf(0.975);
    Some((diff - t * se, diff + t * se))
}

/// Visits every `k`-subset of `0..n` in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Mann–Whitney U for `x` versus `y` (U counts x-over-y wins, ties half).
/// Exact null when the combined size is at most
/// [`MANN_WHITNEY_EXACT_MAX_N`], otherwise the tie-corrected normal
/// approximation with continuity correction.
pub fn mann_whitney_u(x: &[f64], y: &[f64], alternative: Alternative) -> Result<TestResult, StatsError> {
    mann_whitney_with(x, y, alternative, None)
}

pub fn mann_whitney_with(
    x: &[f64],
    y: &[f64],
    alternative: Alternative,
    force_exact: Option<bool>,
) -> Result<TestResult, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::TooFew {
            needed: 1,
            got: x.len().min(y.len()),
        });
    }
    check_finite(x)?;
    check_finite(y)?;
    let (n1, n2) = (x.len(), y.len());
    let n = n1 + n2;
    let combined: Vec<f64> = x.iter().chain(y).copied().collect();
    let (ranks, ties) = midranks(&combined);
    let r1: f64 = ranks[..n1].iter().sum();
    let offset = (n1 * (n1 + 1)) as f64 / 2.0;
    let u = r1 - offset;

    let exact = force_exact.unwrap_or(n <= MANN_WHITNEY_EXACT_MAX_N);
    let (p_greater, p_less) = if exact {
        let doubled: Vec<i64> = ranks.iter().map(|r| (r * 2.0).round() as i64).collect();
        let obs = (r1 * 2.0).round() as i64;
        let (mut total, mut ge, mut le) = (0u64, 0u64, 0u64);
        for_each_combination(n, n1, |subset| {
            let s: i64 = subset.iter().map(|&i| doubled[i]).sum();
            total += 1;
            if s >= obs {
                ge += 1;
            }
            if s <= obs {
                le += 1;
            }
        });
        (ge as f64 / total as f64, le as f64 / total as f64)
    } else {
        let (f1, f2, nf) = (n1 as f64, n2 as f64, n as f64);
        let mu = f1 * f2 / 2.0;
        let var = f1 * f2 / 12.0 * ((nf + 1.0) - tie_term(&ties) / (nf * (nf - 1.0)));
        if var <= 0.0 {
            (1.0, 1.0)
        } else {
            let sigma = var.sqrt();
            let norm = std_normal();
            (norm.sf((u - mu - 0.5) / sigma), norm.cdf((u - mu + 0.5) / sigma))
        }
    };
    Ok(TestResult::new(
        "mann_whitney_u",
        u,
        alternative,
        p_greater,
        p_less,
        (2.0 * p_greater.min(p_less)).min(1.0),
        pooled_cohens_d(x, y),
        welch_ci95(x, y),
        n,
        exact,
    ))
}

// ---------------------------------------------------------------------------
// Multiple comparisons
// ---------------------------------------------------------------------------

fn check_pvalues(pvals: &[f64]) -> Result<(), StatsError> {
    match pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        Some(&p) => Err(StatsError::OutOfRange { name: "p", value: p }),
        None => Ok(()),
    }
}

/// Benjamini–Hochberg step-up rejections at FDR level `q`, in input order.
pub fn benjamini_hochberg(pvals: &[f64], q: f64) -> Result<Vec<bool>, StatsError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(StatsError::OutOfRange { name: "q", value: q });
    }
    check_pvalues(pvals)?;
    let m = pvals.len();
    let mut sorted = pvals.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cutoff = (1..=m)
        .rev()
        .find(|&i| sorted[i - 1] <= i as f64 / m as f64 * q)
        .map(|i| sorted[i - 1]);
    Ok(pvals.iter().map(|&p| cutoff.is_some_and(|c| p <= c)).collect())
}

/// BH-adjusted p-values, in input order.
pub fn bh_adjusted(pvals: &[f64]) -> Result<Vec<f64>, StatsError> {
    check_pvalues(pvals)?;
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| pvals[i].total_cmp(&pvals[j]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (1..=m).rev() {
        let i = order[rank - 1];
        running = running.min(pvals[i] * m as f64 / rank as f64);
        adjusted[i] = running.min(1.0);
    }
    Ok(adjusted)
}

// ---------------------------------------------------------------------------
// Power
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tails {
    One,
    Two,
}

impl Tails {
    fn count(self) -> f64 {
        match self {
            Tails::One => 1.0,
            Tails::Two => 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMethod {
    /// Closed form `ceil(((z_{1-α/tails} + z_power) / dz)^2)`.
    NormalApprox,
    /// Smallest n whose paired t test reaches the power under the
    /// noncentral t distribution.
    NoncentralT,
}

/// `P(T > c)` for a noncentral t with `df` degrees of freedom and
/// noncentrality `delta`, by integrating the normal tail over the
/// distribution of `sqrt(chi2_df / df)`.
pub fn noncentral_t_sf(c: f64, df: f64, delta: f64) -> f64 {
    let norm = std_normal();
    let log_const = std::f64::consts::LN_2 + (df / 2.0) * (df / 2.0).ln() - ln_gamma(df / 2.0);
    let density = |s: f64| -> f64 {
        if s <= 0.0 {
            return if df == 1.0 { log_const.exp() } else { 0.0 };
        }
        (log_const + (df - 1.0) * s.ln() - df * s * s / 2.0).exp()
    };
    let spread = 12.0 / df.sqrt();
    let lo = (1.0 - spread).max(0.0);
    let hi = 1.0 + spread + 1.0;
    let steps = 4000;
    let h = (hi - lo) / steps as f64;
    let f = |s: f64| density(s) * norm.sf(c * s - delta);
    let mut acc = f(lo) + f(hi);
    for i in 1..steps {
        let s = lo + i as f64 * h;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(s);
    }
    (acc * h / 3.0).clamp(0.0, 1.0)
}

/// Power of a paired t test with `n` pairs at effect size `dz`.
pub fn paired_t_power(n: usize, dz: f64, alpha: f64, tails: Tails) -> f64 {
    let df = n as f64 - 1.0;
    let delta = dz * (n as f64).sqrt();
    let crit = StudentsT::new(0.0, 1.0, df)
        .expect("df >= 1")
        .inverse_cdf(1.0 - alpha / tails.count());
    let upper = noncentral_t_sf(crit, df, delta);
    match tails {
        Tails::One => upper,
        Tails::Two => upper + (1.0 - noncentral_t_sf(-crit, df, delta)),
    }
}

/// Pairs needed to detect effect size `dz` with the given power.
pub fn required_pairs(dz: f64, alpha: f64, power: f64, tails: Tails, method: PowerMethod) -> Result<usize, StatsError> {
    if !(dz > 0.0 && dz.is_finite()) {
        return Err(StatsError::OutOfRange { name: "dz", value: dz });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::OutOfRange { name: "alpha", value: alpha });
    }
    if !(power > 0.0 && power < 1.0) {
        return Err(StatsError::OutOfRange { name: "power", value: power });
    }
    let norm = std_normal();
    let z_alpha = norm.inverse_cdf(1.0 - alpha / tails.count());
    let z_power = norm.inverse_cdf(power);
    let approx = (((z_alpha + z_power) / dz).powi(2)).ceil().max(2.0) as usize;
    match method {
        PowerMethod::NormalApprox => Ok(approx),
        PowerMethod::NoncentralT => {
            // The t test needs at least as many pairs as the z approximation.
            let mut n = approx.saturating_sub(2).max(2);
            while n > 2 && paired_t_power(n - 1, dz, alpha, tails) >= power {
                n -= 1;
            }
            while paired_t_power(n, dz, alpha, tails) < power {
                n += 1;
            }
            Ok(n)
        }
    }
}

// ---------------------------------------------------------------------------
// Bootstrap
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Median,
}

impl Statistic {
    pub fn apply(self, x: &[f64]) -> f64 {
        match self {
            Statistic::Mean => mean(x),
            Statistic::Median => median(x),
        }
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

const BOOTSTRAP_BLOCK: usize = 1000;

/// Percentile bootstrap 95% interval. Resamples are drawn in blocks, each
/// from its own ChaCha stream of `seed`, so the result does not depend on
/// thread scheduling.
pub fn bootstrap_ci(x: &[f64], statistic: Statistic, resamples: usize, seed: u64) -> Result<(f64, f64), StatsError> {
    if x.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: x.len() });
    }
    check_finite(x)?;
    if resamples == 0 {
        return Err(StatsError::OutOfRange { name: "resamples", value: 0.0 });
    }
    let n = x.len();
    let blocks = resamples.div_ceil(BOOTSTRAP_BLOCK);
    let mut stats: Vec<f64> = (0..blocks)
        .into_par_iter()
        .flat_map_iter(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = BOOTSTRAP_BLOCK.min(resamples - b * BOOTSTRAP_BLOCK);
            let mut buf = vec![0.0; n];
            (0..count)
                .map(|_| {
                    for v in buf.iter_mut() {
                        *v = x[rng.random_range(0..n)];
                    }
                    statistic.apply(&buf)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&stats, 0.025), quantile_sorted(&stats, 0.975)))
}
