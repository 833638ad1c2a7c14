use serde::{Deserialize, Serialize};

use super::MetricsError;

/// MAE, MSE and R² over one evaluation.
///
/// `r2` is NaN when the labels have zero variance and the predictions are not exact;
/// `r2_undefined` then carries the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionScores {
    pub mae: f64,
    pub mse: f64,
    pub r2: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r2_undefined: Option<String>,
}

/// Per-sample loss used for pairing in significance tests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Squared,
    Absolute,
}

fn check(y: &[f64], yhat: &[f64]) -> Result<(), MetricsError> {
    if y.len() != yhat.len() {
        return Err(MetricsError::LengthMismatch(y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    if y.iter().chain(yhat).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite);
    }
    Ok(())
}

pub fn regression_scores(y: &[f64], yhat: &[f64]) -> Result<RegressionScores, MetricsError> {
    check(y, yhat)?;
    let n = y.len() as f64;
    let mut abs = 0.0;
    let mut sq = 0.0;
    for (a, b) in y.iter().zip(yhat) {
        let d = a - b;
        abs += d.abs();
        sq += d * d;
    }
    let mean = y.iter().sum::<f64>() / n;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let (r2, r2_undefined) = if ss_tot > 0.0 {
        (1.0 - sq / ss_tot, None)
    } else if sq == 0.0 {
        (1.0, None)
    } else {
        (f64::NAN, Some("labels have zero variance".to_string()))
    };
    let scores = RegressionScores {
        mae: abs / n,
        mse: sq / n,
        r2,
        n: y.len(),
        r2_undefined,
    };
    debug_assert!(scores.mae * scores.mae <= scores.mse * (1.0 + 1e-12) + 1e-300);
    Ok(scores)
}

/// Per-sample squared or absolute errors.
pub fn per_sample_losses(y: &[f64], yhat: &[f64], kind: LossKind) -> Result<Vec<f64>, MetricsError> {
    check(y, yhat)?;
    Ok(y.iter()
        .zip(yhat)
        .map(|(a, b)| match kind {
            LossKind::Squared => (a - b).powi(2),
            LossKind::Absolute => (a - b).abs(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit() {
        let s = regression_scores(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((s.mae, s.mse, s.r2), (0.0, 0.0, 1.0));
    }

    #[test]
    fn mean_predictor_has_zero_r2() {
        let s = regression_scores(&[1.0, 2.0, 3.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!(s.r2.abs() < 1e-15);
    }

    #[test]
    fn swapped_extremes() {
        let s = regression_scores(&[0.0, 10.0], &[10.0, 0.0]).unwrap();
        assert_eq!(s.mae, 10.0);
        assert_eq!(s.mse, 100.0);
        assert!((s.r2 + 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_labels() {
        let s = regression_scores(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert_eq!(s.r2, 1.0);
        let s = regression_scores(&[2.0, 2.0], &[2.0, 3.0]).unwrap();
        assert!(s.r2.is_nan());
        assert!(s.r2_undefined.is_some());
    }

    #[test]
    fn errors() {
        assert_eq!(regression_scores(&[1.0], &[]), Err(MetricsError::LengthMismatch(1, 0)));
        assert_eq!(regression_scores(&[], &[]), Err(MetricsError::EmptyInput));
        assert_eq!(regression_scores(&[f64::NAN], &[1.0]), Err(MetricsError::NonFinite));
    }

    proptest::proptest! {
        #[test]
        fn mae_squared_bounded_by_mse(pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..40)) {
            let (y, yhat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let s = regression_scores(&y, &yhat).unwrap();
            proptest::prop_assert!(s.mae * s.mae <= s.mse + 1e-12);
            proptest::prop_assert!(s.mae >= 0.0 && s.mse >= 0.0);
            if s.r2.is_finite() {
                proptest::prop_assert!(s.r2 <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn joint_shift_preserves_errors(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 2..40),
            shift in -50.0f64..50.0,
        ) {
            let (y, yhat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let a = regression_scores(&y, &yhat).unwrap();
            let ys: Vec<f64> = y.iter().map(|v| v + shift).collect();
            let yhs: Vec<f64> = yhat.iter().map(|v| v + shift).collect();
            let b = regression_scores(&ys, &yhs).unwrap();
            proptest::prop_assert!((a.mae - b.mae).abs() < 1e-9);
            proptest::prop_assert!((a.mse - b.mse).abs() < 1e-9);
            if a.r2.is_finite() {
                proptest::prop_assert!((a.r2 - b.r2).abs() < 1e-6);
            }
        }
    }
}
