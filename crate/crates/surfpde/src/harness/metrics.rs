//! Error metrics normalized by the ground-truth range, so a truth field
//! affinely mapped to [-0.5, 0.5] has normalization 1.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct MetricReport {
    pub nmae: f64,
    pub nmaxe: f64,
    pub nrmse: f64,
    pub n_eval: usize,
    /// The range the errors were divided by.
    pub normalization: f64,
}

/// Errors divided by range(truth). Constant truth is rejected; steady-state
/// benchmarks with constant references use [`metrics_with_range`] and the
/// initial condition's range instead.
pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<MetricReport> {
    if pred.len() != truth.len() || pred.len() < 2 {
        return Err(Error::Config(
            "metrics need equal-length inputs with at least 2 entries".into(),
        ));
    }
    let lo = truth.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = truth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(Error::Config(
            "truth field is constant; its range cannot normalize errors".into(),
        ));
    }
    metrics_with_range(pred, truth, range)
}

pub fn metrics_with_range(pred: &[f64], truth: &[f64], range: f64) -> Result<MetricReport> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Config("metrics need equal-length inputs".into()));
    }
    if !(range > 0.0) {
        return Err(Error::Config("normalization range must be positive".into()));
    }
    let n = pred.len() as f64;
    let mut sum_abs = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut sum_sq = 0.0;
    for (p, t) in pred.iter().zip(truth.iter()) {
        let e = (p - t).abs();
        sum_abs += e;
        max_abs = max_abs.max(e);
        sum_sq += e * e;
    }
    Ok(MetricReport {
        nmae: sum_abs / n / range,
        nmaxe: max_abs / range,
        nrmse: (sum_sq / n).sqrt() / range,
        n_eval: pred.len(),
        normalization: range,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_prediction_gives_zeros() {
        let truth = vec![0.0, 1.0, 2.0, -1.0];
        let m = metrics(&truth, &truth).unwrap();
        assert_eq!(m.nmae, 0.0);
        assert_eq!(m.nmaxe, 0.0);
        assert_eq!(m.nrmse, 0.0);
        assert_eq!(m.n_eval, 4);
        assert_eq!(m.normalization, 3.0);
    }

    #[test]
    fn constant_shift_arithmetic() {
        // truth range 2, prediction shifted by 0.1 -> nmae = nmaxe = 0.05
        let truth = vec![-1.0, 0.0, 1.0];
        let pred: Vec<f64> = truth.iter().map(|v| v + 0.1).collect();
        let m = metrics(&pred, &truth).unwrap();
        assert!((m.nmae - 0.05).abs() < 1e-12);
        assert!((m.nmaxe - 0.05).abs() < 1e-12);
        assert!((m.nrmse - 0.05).abs() < 1e-12);
    }

    #[test]
    fn constant_truth_rejected() {
        assert!(metrics(&[1.0, 2.0], &[3.0, 3.0]).is_err());
        // but an explicit range works
        let m = metrics_with_range(&[1.0, 2.0], &[3.0, 3.0], 1.0).unwrap();
        assert!((m.nmaxe - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn power_mean_inequality(
            values in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..200)
        ) {
            let pred: Vec<f64> = values.iter().map(|v| v.0).collect();
            let truth: Vec<f64> = values.iter().map(|v| v.1).collect();
            if let Ok(m) = metrics(&pred, &truth) {
                prop_assert!(m.nmae <= m.nrmse + 1e-12);
                prop_assert!(m.nrmse <= m.nmaxe + 1e-12);
                prop_assert!(m.nmae >= 0.0);
            }
        }
    }
}
