//! Classical tests over per-seed accuracies: one-way ANOVA, Tukey HSD,
//! Student t-tests and t-based confidence intervals.
//!
//! F and t tail probabilities go through the regularized incomplete beta
//! function. The studentized range distribution has no closed form and is
//! integrated numerically.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {group} has {len} values, need at least 2")]
    GroupTooSmall { group: usize, len: usize },
    #[error("paired test needs equal sizes, got {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite value in group {0}")]
    NonFinite(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    Anova,
    TukeyPair,
    TTest,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::Anova => "anova",
            TestKind::TukeyPair => "tukey_pair",
            TestKind::TTest => "t_test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatResult {
    pub test: TestKind,
    /// Free-form identification, e.g. the pair of groups compared.
    pub label: String,
    /// F for ANOVA, t for t-tests, q (studentized range) for Tukey pairs.
    pub statistic: f64,
    pub dof: (usize, Option<usize>),
    pub p_value: f64,
    /// Interval for the mean difference where one applies.
    pub ci95: Option<(f64, f64)>,
    /// Zero within-group variance: the statistic is 0 or infinite.
    pub degenerate: bool,
}

impl StatResult {
    pub fn dof_string(&self) -> String {
        match self.dof {
            (a, Some(b)) => format!("({a},{b})"),
            (a, None) => a.to_string(),
        }
    }
}

impl fmt::Display for StatResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} statistic={:.4} dof={} p={:.6}",
            self.test.name(),
            self.label,
            self.statistic,
            self.dof_string(),
            self.p_value
        )?;
        if let Some((lo, hi)) = self.ci95 {
            write!(f, " ci95=[{lo:.4},{hi:.4}]")?;
        }
        if self.degenerate {
            f.write_str(" degenerate")?;
        }
        Ok(())
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Upper tail of F(d1, d2).
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

/// Two-sided tail of Student t with `dof` degrees of freedom.
pub fn t_two_sided(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(dof / 2.0, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0)
}

/// Quantile of |T| such that the two-sided tail equals `alpha`.
pub fn t_critical(alpha: f64, dof: f64) -> f64 {
    bisect(|t| t_two_sided(t, dof) - alpha, 0.0, 1e3)
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    // f decreasing from positive at lo to negative at hi
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn check_groups(groups: &[&[f64]]) -> Result<(), StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    for (i, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(StatsError::GroupTooSmall { group: i, len: g.len() });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite(i));
        }
    }
    Ok(())
}

struct Decomposition {
    means: Vec<f64>,
    sizes: Vec<usize>,
    ss_between: f64,
    ss_within: f64,
    n: usize,
}

fn decompose(groups: &[&[f64]]) -> Decomposition {
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let means: Vec<f64> = groups.iter().map(|g| mean(g)).collect();
    let ss_between = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.len() as f64 * (m - grand) * (m - grand))
        .sum();
    let ss_within = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|x| (x - m) * (x - m)).sum::<f64>())
        .sum();
    Decomposition {
        means,
        sizes: groups.iter().map(|g| g.len()).collect(),
        ss_between,
        ss_within,
        n,
    }
}

/// Means equal up to rounding; used to resolve 0/0 in degenerate cases.
fn means_equal(means: &[f64]) -> bool {
    let scale = means.iter().fold(1.0f64, |a, m| a.max(m.abs()));
    means.windows(2).all(|w| (w[0] - w[1]).abs() <= 1e-12 * scale)
}

pub fn one_way_anova(groups: &[&[f64]]) -> Result<StatResult, StatsError> {
    check_groups(groups)?;
    let d = decompose(groups);
    let k = groups.len();
    let (d1, d2) = (k - 1, d.n - k);
    let degenerate = d.ss_within == 0.0;
    let (statistic, p_value) = if degenerate {
        if means_equal(&d.means) {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let f = (d.ss_between / d1 as f64) / (d.ss_within / d2 as f64);
        (f, f_sf(f, d1 as f64, d2 as f64))
    };
    Ok(StatResult {
        test: TestKind::Anova,
        label: format!("{k} groups"),
        statistic,
        dof: (d1, Some(d2)),
        p_value,
        ci95: None,
        degenerate,
    })
}

/// All pairwise comparisons (Tukey–Kramer for unequal sizes), in order
/// (0,1), (0,2), ..., (1,2), .... Labels use `names` when given.
pub fn tukey_hsd(groups: &[&[f64]], names: Option<&[&str]>) -> Result<Vec<StatResult>, StatsError> {
    check_groups(groups)?;
    let d = decompose(groups);
    let k = groups.len();
    let dof = d.n - k;
    let mse = d.ss_within / dof as f64;
    let degenerate = mse == 0.0;
    let q_crit = if degenerate {
        0.0
    } else {
        bisect(|q| studentized_range_sf(q, k, dof as f64) - 0.05, 0.0, 100.0)
    };
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let diff = d.means[j] - d.means[i];
            let se = (mse / 2.0 * (1.0 / d.sizes[i] as f64 + 1.0 / d.sizes[j] as f64)).sqrt();
            let (q, p) = if degenerate {
                if means_equal(&[d.means[i], d.means[j]]) {
                    (0.0, 1.0)
                } else {
                    (f64::INFINITY, 0.0)
                }
            } else {
                let q = diff.abs() / se;
                (q, studentized_range_sf(q, k, dof as f64))
            };
            let label = match names {
                Some(n) => format!("{}-{}", n[i], n[j]),
                None => format!("{i}-{j}"),
            };
            out.push(StatResult {
                test: TestKind::TukeyPair,
                label,
                statistic: q,
                dof: (k, Some(dof)),
                p_value: p,
                ci95: Some((diff - q_crit * se, diff + q_crit * se)),
                degenerate,
            });
        }
    }
    Ok(out)
}

/// Student t-test of mean(a) − mean(b): pooled variance when unpaired,
/// differences when paired.
pub fn two_sample_t(a: &[f64], b: &[f64], paired: bool) -> Result<StatResult, StatsError> {
    check_groups(&[a, b])?;
    let (diff, se, dof) = if paired {
        if a.len() != b.len() {
            return Err(StatsError::LengthMismatch(a.len(), b.len()));
        }
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let n = d.len() as f64;
        (mean(&d), (variance(&d) / n).sqrt(), d.len() - 1)
    } else {
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let dof = a.len() + b.len() - 2;
        let pooled = ((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / dof as f64;
        (mean(a) - mean(b), (pooled * (1.0 / na + 1.0 / nb)).sqrt(), dof)
    };
    let degenerate = se == 0.0;
    let (t, p) = if degenerate {
        if diff.abs() <= 1e-12 * mean(a).abs().max(mean(b).abs()).max(1.0) {
            (0.0, 1.0)
        } else {
            (diff.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = diff / se;
        (t, t_two_sided(t, dof as f64))
    };
    let half = t_critical(0.05, dof as f64) * se;
    Ok(StatResult {
        test: TestKind::TTest,
        label: if paired { "paired".into() } else { "unpaired".into() },
        statistic: t,
        dof: (dof, None),
        p_value: p,
        ci95: Some((diff - half, diff + half)),
        degenerate,
    })
}

/// Mean with a t-based 95% interval. The interval is `None` below two values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCi {
    pub n: usize,
    pub mean: f64,
    pub ci95: Option<(f64, f64)>,
}

pub fn mean_ci(xs: &[f64]) -> MeanCi {
    let n = xs.len();
    if n == 0 {
        return MeanCi {
            n,
            mean: f64::NAN,
            ci95: None,
        };
    }
    let m = mean(xs);
    let ci95 = (n >= 2).then(|| {
        let half = t_critical(0.05, (n - 1) as f64) * (variance(xs) / n as f64).sqrt();
        (m - half, m + half)
    });
    MeanCi { n, mean: m, ci95 }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// P(range of `k` standard normals < w).
fn normal_range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let inner = |z: f64| {
        let phi = (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
        phi * (normal_cdf(z) - normal_cdf(z - w)).max(0.0).powi(k as i32 - 1)
    };
    (k as f64 * simpson(inner, -8.5, 8.5 + w, 240)).min(1.0)
}

/// Upper tail of the studentized range distribution with `k` means and
/// `dof` error degrees of freedom: integrates the normal-range CDF against
/// the density of s = sqrt(chi²_dof / dof).
pub fn studentized_range_sf(q: f64, k: usize, dof: f64) -> f64 {
    if q <= 0.0 {
        return 1.0;
    }
    if q.is_infinite() {
        return 0.0;
    }
    let log_norm = 0.5 * dof * dof.ln() - ln_gamma(0.5 * dof) - (0.5 * dof - 1.0) * 2f64.ln();
    let density = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        (log_norm + (dof - 1.0) * s.ln() - 0.5 * dof * s * s).exp()
    };
    let spread = 9.0 / dof.sqrt();
    let lo = (1.0 - spread).max(0.0);
    let hi = 1.0 + spread.max(0.5) * if dof < 4.0 { 1.5 } else { 1.0 };
    let cdf = simpson(|s| density(s) * normal_range_cdf(q * s, k), lo, hi, 400);
    (1.0 - cdf).clamp(0.0, 1.0)
}
