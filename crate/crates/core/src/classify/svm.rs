//! One-vs-rest soft-margin linear SVM trained by dual coordinate descent.
//!
//! Each binary problem minimizes `½‖w‖² + (C/n) Σ max(0, 1 − yᵢ(w·xᵢ + b))`.
//! The loss is averaged rather than summed, so duplicating every training
//! row leaves the solution unchanged. The bias is learned as the weight of a
//! constant unit feature and is therefore regularized.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Calibration {
    /// Softmax over the one-vs-rest decision values.
    Softmax,
    /// Per-class Platt sigmoid fitted on training decision values, then
    /// renormalized.
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    /// Stop when the spread of projected gradients falls below this.
    pub tol: f64,
    /// Cap on passes over the data.
    pub max_epochs: usize,
    pub calibration: Calibration,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 0.1,
            tol: 1e-4,
            max_epochs: 1000,
            calibration: Calibration::Softmax,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    /// `[classes, features]`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub calibration: Calibration,
    /// Platt `(A, B)` per class when `calibration` is `Sigmoid`.
    pub platt: Option<Vec<(f64, f64)>>,
    /// Epochs used by each binary problem.
    pub epochs: Vec<usize>,
}

struct Binary {
    w: Vec<f64>,
    b: f64,
    epochs: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn train_binary(x: ArrayView2<'_, f64>, positive: &[bool], p: &SvmParams, stream: u64) -> Binary {
    let (n, d) = x.dim();
    let upper = p.c / n as f64;
    let rows: Vec<&[f64]> = x.outer_iter().map(|r| r.to_slice().expect("standard layout")).collect();
    // Diagonal of Q including the unit bias feature.
    let qii: Vec<f64> = rows.iter().map(|r| dot(r, r) + 1.0).collect();
    let sign: Vec<f64> = positive.iter().map(|&pos| if pos { 1.0 } else { -1.0 }).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::stream(p.seed, stream);
    let mut epochs = 0;
    while epochs < p.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        let mut pg_max = f64::NEG_INFINITY;
        let mut pg_min = f64::INFINITY;
        for &i in &order {
            let g = sign[i] * (dot(&w, rows[i]) + b) - 1.0;
            let pg = if alpha[i] <= 0.0 {
                g.min(0.0)
            } else if alpha[i] >= upper {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / qii[i]).clamp(0.0, upper);
                let step = (alpha[i] - old) * sign[i];
                if step != 0.0 {
                    for (wj, &xj) in w.iter_mut().zip(rows[i]) {
                        *wj += step * xj;
                    }
                    b += step;
                }
            }
        }
        if pg_max - pg_min < p.tol {
            break;
        }
    }
    Binary { w, b, epochs }
}

pub(crate) fn check_inputs(x: ArrayView2<'_, f64>, y: &[usize]) -> Result<usize> {
    if x.nrows() == 0 {
        return Err(Error::EmptyExemplars);
    }
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training features".into()));
    }
    let n_classes = y.iter().max().map_or(0, |&m| m + 1);
    let mut present = vec![false; n_classes];
    for &l in y {
        present[l] = true;
    }
    let k = present.iter().filter(|&&p| p).count();
    if k < 2 {
        return Err(Error::SingleClass(k));
    }
    Ok(n_classes)
}

impl LinearSvm {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize, p: &SvmParams) -> Result<Self> {
        if !(p.c > 0.0) {
            return Err(Error::InvalidParameter(format!("C = {}", p.c)));
        }
        let x = x.as_standard_layout();
        let d = x.ncols();
        let mut weights = Array2::zeros((n_classes, d));
        let mut bias = Array1::zeros(n_classes);
        let mut epochs = Vec::with_capacity(n_classes);
        for class in 0..n_classes {
            let positive: Vec<bool> = y.iter().map(|&l| l == class).collect();
            let fit = train_binary(x.view(), &positive, p, class as u64);
            weights.row_mut(class).assign(&ArrayView1::from(&fit.w));
            bias[class] = fit.b;
            epochs.push(fit.epochs);
        }
        let mut model = Self {
            weights,
            bias,
            calibration: p.calibration,
            platt: None,
            epochs,
        };
        if p.calibration == Calibration::Sigmoid {
            let dv = model.decision_function(x.view());
            model.platt = Some(
                (0..n_classes)
                    .map(|c| {
                        let targets: Vec<bool> = y.iter().map(|&l| l == c).collect();
                        platt_fit(dv.column(c), &targets)
                    })
                    .collect(),
            );
        }
        Ok(model)
    }

    /// `[rows, classes]` one-vs-rest decision values.
    pub fn decision_function(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weights.t());
        out += &self.bias;
        out
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut dv = self.decision_function(x);
        match (&self.calibration, &self.platt) {
            (Calibration::Sigmoid, Some(ab)) => {
                for mut row in dv.outer_iter_mut() {
                    for (v, &(a, b)) in row.iter_mut().zip(ab) {
                        *v = sigmoid_prob(*v, a, b).max(1e-300);
                    }
                    let s = row.sum();
                    row /= s;
                }
            }
            _ => {
                for mut row in dv.outer_iter_mut() {
                    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - m).exp());
                    let s = row.sum();
                    row /= s;
                }
            }
        }
        dv
    }
}

fn sigmoid_prob(f: f64, a: f64, b: f64) -> f64 {
    let z = f * a + b;
    if z >= 0.0 {
        (-z).exp() / (1.0 + (-z).exp())
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Platt scaling by Newton's method with backtracking line search, using
/// the smoothed targets of Lin, Lin & Weng.
fn platt_fit(dec: ArrayView1<'_, f64>, positive: &[bool]) -> (f64, f64) {
    let prior1 = positive.iter().filter(|&&p| p).count() as f64;
    let prior0 = positive.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = positive.iter().map(|&p| if p { hi } else { lo }).collect();
    let (min_step, sigma, eps) = (1e-10, 1e-12, 1e-5);
    let mut a = 0.0;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
    let objective = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (1.0 + (-z).exp()).ln()
                } else {
                    (ti - 1.0) * z + (1.0 + z.exp()).ln()
                }
            })
            .sum()
    };
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (sigma, sigma, 0.0, 0.0, 0.0);
        for (&f, &ti) in dec.iter().zip(&t) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                let e = (-z).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = z.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < eps && g2.abs() < eps {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= min_step {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < min_step {
            break;
        }
    }
    (a, b)
}
