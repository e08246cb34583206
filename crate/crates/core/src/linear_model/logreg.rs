//! Class-weighted L1-regularized logistic regression.
//!
//! Minimizes `Σ ω_i · logloss_i + (1/C)·‖w‖₁` (bias unpenalized) with
//! accelerated proximal gradient at a fixed step `1/L`, where `L` is the
//! exact Lipschitz constant `λ_max(Aᵀ Ω A) / 4` of the smooth part
//! (`A = [Z 1]`). Iterates restart whenever the objective would increase,
//! so the accepted objective sequence is monotone.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub const MAX_ITERATIONS: usize = 5000;
pub const OBJECTIVE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassWeights {
    /// ω inversely proportional to class frequency, scaled so Σ ω_{y_i} = n.
    Balanced,
    Uniform,
}

impl ClassWeights {
    pub fn sample_weights(self, y: &[u8]) -> Vec<f64> {
        match self {
            ClassWeights::Uniform => vec![1.0; y.len()],
            ClassWeights::Balanced => {
                let n = y.len() as f64;
                let pos = y.iter().filter(|&&v| v != 0).count() as f64;
                let neg = n - pos;
                y.iter()
                    .map(|&v| if v != 0 { n / (2.0 * pos) } else { n / (2.0 * neg) })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogRegFit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct Problem<'a> {
    z: &'a DMatrix<f64>,
    y: Vec<f64>,
    omega: &'a [f64],
    l1: f64,
}

impl Problem<'_> {
    fn logits(&self, w: &DVector<f64>, b: f64) -> DVector<f64> {
        let mut eta = self.z * w;
        eta.add_scalar_mut(b);
        eta
    }

    fn smooth(&self, eta: &DVector<f64>) -> f64 {
        eta.iter()
            .zip(&self.y)
            .zip(self.omega)
            .map(|((&e, &y), &o)| o * (softplus(e) - y * e))
            .sum()
    }

    fn objective(&self, w: &DVector<f64>, b: f64) -> f64 {
        self.smooth(&self.logits(w, b)) + self.l1 * w.lp_norm(1)
    }

    fn gradient(&self, w: &DVector<f64>, b: f64) -> (DVector<f64>, f64) {
        let eta = self.logits(w, b);
        let r = DVector::from_iterator(
            eta.len(),
            eta.iter()
                .zip(&self.y)
                .zip(self.omega)
                .map(|((&e, &y), &o)| o * (sigmoid(e) - y)),
        );
        (self.z.transpose() * &r, r.sum())
    }

    fn lipschitz(&self) -> f64 {
        let (n, d) = self.z.shape();
        let mut a = DMatrix::from_element(n, d + 1, 1.0);
        a.columns_mut(0, d).copy_from(self.z);
        let mut wa = a.clone();
        for (i, &o) in self.omega.iter().enumerate() {
            wa.row_mut(i).scale_mut(o);
        }
        let h = a.transpose() * wa;
        let top = SymmetricEigen::new(h).eigenvalues.max();
        // slack against eigenvalue rounding
        0.25 * top * (1.0 + 1e-9)
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Fits with explicit per-sample weights.
pub fn fit_logreg_weighted(z: &DMatrix<f64>, y: &[u8], sample_weights: &[f64], c: f64) -> Result<LogRegFit> {
    let n = z.nrows();
    if y.len() != n || sample_weights.len() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: y.len().min(sample_weights.len()),
        });
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidConfig(format!("C must be positive, got {c}")));
    }
    let pos = y.iter().filter(|&&v| v != 0).count();
    if pos == 0 || pos == n {
        return Err(Error::SingleClass);
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design matrix".into()));
    }
    let prob = Problem {
        z,
        y: y.iter().map(|&v| f64::from(u8::from(v != 0))).collect(),
        omega: sample_weights,
        l1: 1.0 / c,
    };
    let d = z.ncols();
    let step = 1.0 / prob.lipschitz();
    let thresh = prob.l1 * step;

    let mut w = DVector::zeros(d);
    let mut b = 0.0;
    let mut obj = prob.objective(&w, b);
    let (mut yw, mut yb) = (w.clone(), b);
    let mut t = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (gw, gb) = prob.gradient(&yw, yb);
        let nw = (&yw - gw * step).map(|v| soft_threshold(v, thresh));
        let nb = yb - gb * step;
        let nobj = prob.objective(&nw, nb);
        if !nobj.is_finite() {
            return Err(Error::NonFinite("logistic objective".into()));
        }
        if nobj > obj {
            // restart momentum from the last accepted point
            if t == 1.0 {
                // plain proximal step already failed to descend: at optimum
                converged = true;
                break;
            }
            t = 1.0;
            yw = w.clone();
            yb = b;
            continue;
        }
        let nt = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / nt;
        yw = &nw + (&nw - &w) * mom;
        yb = nb + (nb - b) * mom;
        t = nt;
        let change = obj - nobj;
        w = nw;
        b = nb;
        obj = nobj;
        if change < OBJECTIVE_TOL {
            converged = true;
            break;
        }
    }
    Ok(LogRegFit {
        weights: w.iter().copied().collect(),
        bias: b,
        objective: obj,
        iterations,
        converged,
    })
}

pub fn fit_logreg(z: &DMatrix<f64>, y: &[u8], c: f64, class_weights: ClassWeights) -> Result<LogRegFit> {
    fit_logreg_weighted(z, y, &class_weights.sample_weights(y), c)
}

/// Objective value of `(w, b)` on the weighted problem; exposed for checks.
pub fn objective(z: &DMatrix<f64>, y: &[u8], sample_weights: &[f64], c: f64, w: &[f64], b: f64) -> f64 {
    let prob = Problem {
        z,
        y: y.iter().map(|&v| f64::from(u8::from(v != 0))).collect(),
        omega: sample_weights,
        l1: 1.0 / c,
    };
    prob.objective(&DVector::from_column_slice(w), b)
}
