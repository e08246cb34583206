//! Accuracy and Matthews correlation coefficient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn from_labels(y_true: &[u8], y_pred: &[u8]) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::LengthMismatch {
                left: y_true.len(),
                right: y_pred.len(),
            });
        }
        let mut c = Confusion::default();
        for (&t, &p) in y_true.iter().zip(y_pred) {
            match (t != 0, p != 0) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    /// MCC, defined as 0 when any marginal is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, tn, fp, fn_) = (self.tp as f64, self.tn as f64, self.fp as f64, self.fn_ as f64);
        let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if denom == 0.0 {
            return 0.0;
        }
        (tp * tn - fp * fn_) / denom.sqrt()
    }
}

/// `(accuracy, mcc)`; labels are read as 0 / non-zero.
pub fn metrics(y_true: &[u8], y_pred: &[u8]) -> Result<(f64, f64)> {
    if y_true.is_empty() {
        return Err(Error::LengthMismatch { left: 0, right: y_pred.len() });
    }
    let c = Confusion::from_labels(y_true, y_pred)?;
    Ok((c.accuracy(), c.mcc()))
}

pub fn mcc(y_true: &[u8], y_pred: &[u8]) -> Result<f64> {
    metrics(y_true, y_pred).map(|m| m.1)
}
