//! Finite-difference verification of model gradients.
//!
//! Central differences are compared with the analytic gradient entry by
//! entry. Max-pooling and dynamic graphs make the loss piecewise smooth; an
//! entry whose one-sided differences disagree sharply sits on a kink, where
//! no derivative exists, and is counted separately instead of failing.

use super::model::SegModel;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub step: f64,
    pub rel: f64,
    pub abs: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            step: 1e-5,
            rel: 1e-3,
            abs: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub kinks: usize,
    pub failures: Vec<Mismatch>,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Checks `analytic` (one vector per parameter slot) against central
/// differences of `loss`, for the parameters whose name satisfies `select`.
/// An entry passes when `|numeric − analytic| ≤ max(abs, rel·|numeric|)`.
pub fn check_gradients<F>(
    model: &SegModel<f64>,
    analytic: &[Vec<f64>],
    select: impl Fn(&str) -> bool,
    mut loss: F,
    tol: Tolerance,
) -> Result<GradCheck>
where
    F: FnMut(&SegModel<f64>) -> Result<f64>,
{
    let mut probe = model.clone();
    let f0 = loss(model)?;
    let h = tol.step;
    let mut report = GradCheck::default();
    for slot in 0..model.params().len() {
        let name = model.names()[slot].clone();
        if !select(&name) {
            continue;
        }
        for e in 0..model.params()[slot].len() {
            let orig = model.params()[slot].data()[e];
            probe.params_mut()[slot].data_mut()[e] = orig + h;
            let fp = loss(&probe)?;
            probe.params_mut()[slot].data_mut()[e] = orig - h;
            let fm = loss(&probe)?;
            probe.params_mut()[slot].data_mut()[e] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let got = analytic[slot][e];
            report.checked += 1;
            if (numeric - got).abs() <= tol.abs.max(tol.rel * numeric.abs()) {
                continue;
            }
            let right = (fp - f0) / h;
            let left = (f0 - fm) / h;
            if (right - left).abs() > 10.0 * tol.abs.max(tol.rel * numeric.abs()) {
                report.kinks += 1;
            } else {
                report.failures.push(Mismatch {
                    param: name.clone(),
                    index: e,
                    analytic: got,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
