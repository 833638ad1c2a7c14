//! Two-sided t-tests: paired over aligned per-sample losses, and Welch's unequal-variance
//! test for independent groups.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::MetricsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    PairedT,
    WelchT,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::PairedT => "paired_t",
            TestKind::WelchT => "welch_t",
        }
    }
}

/// Set when the standard error is zero. The p-value is then 0 if the means differ and 1
/// otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Degeneracy {
    DegenerateVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub test: TestKind,
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub n_a: usize,
    pub n_b: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate: Option<Degeneracy>,
}

impl SignificanceResult {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance; zero for fewer than two values.
fn sample_var(v: &[f64], m: f64) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

fn two_sided_p(t: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

fn check_finite(v: &[f64]) -> Result<(), MetricsError> {
    if v.iter().any(|x| !x.is_finite()) {
        Err(MetricsError::NonFinite)
    } else {
        Ok(())
    }
}

/// Paired two-sided t-test over `errors_a[i] - errors_b[i]`.
pub fn significance(errors_a: &[f64], errors_b: &[f64]) -> Result<SignificanceResult, MetricsError> {
    if errors_a.len() != errors_b.len() {
        return Err(MetricsError::LengthMismatch(errors_a.len(), errors_b.len()));
    }
    if errors_a.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    check_finite(errors_a)?;
    check_finite(errors_b)?;
    let n = errors_a.len();
    let diffs: Vec<f64> = errors_a.iter().zip(errors_b).map(|(a, b)| a - b).collect();
    let md = mean(&diffs);
    let sd = sample_var(&diffs, md).sqrt();
    let se = sd / (n as f64).sqrt();
    let mut out = SignificanceResult {
        test: TestKind::PairedT,
        statistic: 0.0,
        df: (n as f64 - 1.0).max(0.0),
        p_value: 1.0,
        mean_a: mean(errors_a),
        mean_b: mean(errors_b),
        n_a: n,
        n_b: n,
        degenerate: None,
    };
    let all_equal = diffs.iter().all(|d| *d == diffs[0]);
    if all_equal || se == 0.0 || n < 2 {
        out.degenerate = Some(Degeneracy::DegenerateVariance);
        if md != 0.0 {
            out.statistic = md.signum() * f64::INFINITY;
            out.p_value = 0.0;
        }
        return Ok(out);
    }
    out.statistic = md / se;
    out.p_value = two_sided_p(out.statistic, out.df);
    Ok(out)
}

/// Welch two-sample two-sided t-test of `values_a` against `values_b`.
pub fn group_comparison(values_a: &[f64], values_b: &[f64]) -> Result<SignificanceResult, MetricsError> {
    if values_a.is_empty() || values_b.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    check_finite(values_a)?;
    check_finite(values_b)?;
    let (na, nb) = (values_a.len() as f64, values_b.len() as f64);
    let (ma, mb) = (mean(values_a), mean(values_b));
    let (va, vb) = (sample_var(values_a, ma) / na, sample_var(values_b, mb) / nb);
    let se2 = va + vb;
    let mut out = SignificanceResult {
        test: TestKind::WelchT,
        statistic: 0.0,
        df: 0.0,
        p_value: 1.0,
        mean_a: ma,
        mean_b: mb,
        n_a: values_a.len(),
        n_b: values_b.len(),
        degenerate: None,
    };
    if se2 <= 0.0 {
        out.degenerate = Some(Degeneracy::DegenerateVariance);
        if ma != mb {
            out.statistic = (ma - mb).signum() * f64::INFINITY;
            out.p_value = 0.0;
        }
        return Ok(out);
    }
    let term = |v: f64, n: f64| if n > 1.0 { v * v / (n - 1.0) } else { 0.0 };
    out.df = se2 * se2 / (term(va, na) + term(vb, nb));
    out.statistic = (ma - mb) / se2.sqrt();
    out.p_value = two_sided_p(out.statistic, out.df);
    Ok(out)
}
