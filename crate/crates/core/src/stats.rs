//! Welch's unequal-variance t-test, pooled-SD Cohen's d, the two-sided
//! Student-t tail, and tail-window sampling of metric series.

use crate::error::{Error, Result};
use crate::training::MetricSeries;
use serde::{Deserialize, Serialize};
use statrs::function::beta::checked_beta_reg;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    #[serde(rename = "p")]
    pub p_two_sided: f64,
    #[serde(rename = "d")]
    pub cohen_d: f64,
    pub n1: usize,
    pub n2: usize,
    pub means: [f64; 2],
    /// Unbiased sample variances.
    pub variances: [f64; 2],
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn check_sizes(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::TooFewSamples { n1: a.len(), n2: b.len() });
    }
    Ok(())
}

/// Standardized mean difference `(mean(a) - mean(b)) / s_pooled`.
pub fn cohen_d(a: &[f64], b: &[f64]) -> Result<f64> {
    check_sizes(a, b)?;
    let (m1, v1) = mean_var(a);
    let (m2, v2) = mean_var(b);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let pooled = (((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / (n1 + n2 - 2.0)).sqrt();
    if pooled == 0.0 {
        return if m1 == m2 { Ok(0.0) } else { Err(Error::ZeroPooledVariance) };
    }
    Ok((m1 - m2) / pooled)
}

/// Two-sided tail probability `P(|T| >= |t|)` for Student's t with `df`
/// degrees of freedom, via the regularized incomplete beta function.
pub fn student_t_sf(t: f64, df: f64) -> Result<f64> {
    if df.is_nan() || df <= 0.0 {
        return Err(Error::NonPositiveDf(df));
    }
    if t.is_nan() {
        return Err(Error::InvalidOp {
            op: "student_t_sf",
            msg: "t is NaN".into(),
        });
    }
    if t.is_infinite() {
        return Ok(0.0);
    }
    let x = df / (df + t * t);
    let p = checked_beta_reg(df / 2.0, 0.5, x).map_err(|e| Error::InvalidOp {
        op: "student_t_sf",
        msg: e.to_string(),
    })?;
    Ok(p.clamp(0.0, 1.0))
}

/// Welch's t-test of `a` against `b` with Welch–Satterthwaite degrees of
/// freedom. Two constant, equal groups give t = 0 and p = 1.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    check_sizes(a, b)?;
    let (m1, v1) = mean_var(a);
    let (m2, v2) = mean_var(b);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let d = cohen_d(a, b)?;
    let (se1, se2) = (v1 / n1, v2 / n2);
    let se = se1 + se2;
    let (t, df) = if se == 0.0 {
        (0.0, n1 + n2 - 2.0)
    } else {
        let df = se * se / (se1 * se1 / (n1 - 1.0) + se2 * se2 / (n2 - 1.0));
        ((m1 - m2) / se.sqrt(), df)
    };
    Ok(TTestResult {
        t,
        df,
        p_two_sided: student_t_sf(t, df)?,
        cohen_d: d,
        n1: a.len(),
        n2: b.len(),
        means: [m1, m2],
        variances: [v1, v2],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Loss,
    Perplexity,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Loss => "loss",
            Metric::Perplexity => "perplexity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizedWindow {
    pub source: String,
    pub start_fraction: f64,
    pub metric: Metric,
    pub samples: Vec<f64>,
}

/// Default share of a series treated as warm-up before sampling.
pub const DEFAULT_START_FRACTION: f64 = 0.5;

/// Values of every record from index `floor(start_fraction * len)` on, so
/// the tail keeps `ceil((1 - start_fraction) * len)` records.
pub fn stabilized_window(series: &MetricSeries, start_fraction: f64, metric: Metric) -> Result<StabilizedWindow> {
    if !(0.0..1.0).contains(&start_fraction) {
        return Err(Error::InvalidOp {
            op: "stabilized_window",
            msg: format!("start fraction {start_fraction} outside [0, 1)"),
        });
    }
    let start = (start_fraction * series.len() as f64).floor() as usize;
    let samples: Vec<f64> = series
        .records
        .iter()
        .skip(start)
        .map(|r| match metric {
            Metric::Loss => r.loss,
            Metric::Perplexity => r.perplexity,
        })
        .collect();
    if samples.is_empty() {
        return Err(Error::EmptyWindow);
    }
    Ok(StabilizedWindow {
        source: format!("{}/{}/{}", series.group, series.arch, series.seed),
        start_fraction,
        metric,
        samples,
    })
}

/// Renders a p-value as "p<.001" below the threshold, else "p=.223".
pub fn format_p(p: f64) -> String {
    if p < 0.001 {
        return "p<.001".to_string();
    }
    let s = format!("{p:.3}");
    format!("p={}", s.strip_prefix('0').unwrap_or(&s))
}

/// One-line summary such as "p<.001, t(305.0)=-19.66, Cohen's d=-2.20".
pub fn format_test(r: &TTestResult) -> String {
    format!("{}, t({:.1})={:.2}, Cohen's d={:.2}", format_p(r.p_two_sided), r.df, r.t, r.cohen_d)
}
