//! Prediction error measures and replication summaries.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_shapes(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn squared_error(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// `‖Y − Ŷ‖² / ‖Y‖²`
pub fn smspe(y_true: &Tensor, y_hat: &Tensor) -> Result<f64> {
    let denom = y_true.norm_sq();
    if denom == 0.0 {
        return Err(Error::InvalidConfig(
            "SMSPE is undefined for an all-zero response".into(),
        ));
    }
    Ok(squared_error(y_true, y_hat)? / denom)
}

/// Squared error averaged over samples and grid points.
pub fn mspe(y_true: &Tensor, y_hat: &Tensor) -> Result<f64> {
    Ok(squared_error(y_true, y_hat)? / y_true.len() as f64)
}

/// Squared error against the noiseless signal, averaged like [`mspe`].
pub fn msee(y_clean: &Tensor, y_hat: &Tensor) -> Result<f64> {
    mspe(y_clean, y_hat)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Smspe,
    LogSmspe,
    Mspe,
    Msee,
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MetricKind::Smspe => "smspe",
            MetricKind::LogSmspe => "log_smspe",
            MetricKind::Mspe => "mspe",
            MetricKind::Msee => "msee",
        })
    }
}

/// Values of one metric across replications.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub kind: MetricKind,
    pub values: Vec<f64>,
}

impl MetricReport {
    pub fn new(kind: MetricKind, values: Vec<f64>) -> Self {
        MetricReport { kind, values }
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }

    /// Sample standard deviation; `None` for fewer than two values.
    pub fn sd(&self) -> Option<f64> {
        sample_sd(&self.values)
    }

    /// `metric,replication,value` rows followed by mean and sd rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,replication,value\n");
        for (i, v) in self.values.iter().enumerate() {
            let _ = writeln!(s, "{},{},{v:e}", self.kind, i);
        }
        let _ = writeln!(s, "{},mean,{:e}", self.kind, self.mean());
        match self.sd() {
            Some(sd) => {
                let _ = writeln!(s, "{},sd,{sd:e}", self.kind);
            }
            None => {
                let _ = writeln!(s, "{},sd,", self.kind);
            }
        }
        s
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn sample_sd(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn smspe_examples() {
        let y = t(&[3.0, 4.0]);
        assert_eq!(smspe(&y, &y).unwrap(), 0.0);
        assert_eq!(smspe(&y, &t(&[0.0, 0.0])).unwrap(), 1.0);
        assert!((smspe(&y, &t(&[3.0, 0.0])).unwrap() - 0.64).abs() < 1e-15);
        assert!(smspe(&t(&[0.0]), &t(&[1.0])).is_err());
        assert!(smspe(&y, &t(&[1.0])).is_err());
    }

    #[test]
    fn mspe_examples() {
        let y = t(&[1.0, 2.0]);
        assert_eq!(mspe(&y, &y).unwrap(), 0.0);
        assert!((mspe(&y, &t(&[1.5, 2.5])).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(mspe(&y, &t(&[0.0, -1.0])).unwrap(), 5.0);
        assert_eq!(msee(&y, &t(&[0.0, -1.0])).unwrap(), 5.0);
    }

    #[test]
    fn report_summary() {
        let r = MetricReport::new(MetricKind::Smspe, vec![1.0, 2.0, 3.0]);
        assert_eq!(r.mean(), 2.0);
        assert_eq!(r.sd(), Some(1.0));
        let csv = r.to_csv();
        assert!(csv.starts_with("metric,replication,value\nsmspe,0,1e0\n"));
        assert!(csv.ends_with("smspe,mean,2e0\nsmspe,sd,1e0\n"));
        assert_eq!(MetricReport::new(MetricKind::Mspe, vec![1.0]).sd(), None);
    }
}
