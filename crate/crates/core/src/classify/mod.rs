//! Unimodal decoders: one-vs-rest linear SVM and random forest, both
//! exposing class-probability rows on the simplex, plus C grid search.

mod forest;
mod svm;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataio::plan_folds;
use crate::error::{Error, Result};

pub use forest::{ForestParams, MaxFeatures, Node, RandomForest, Tree};
pub use svm::{Calibration, LinearSvm, SvmParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    LinearSvm(LinearSvm),
    RandomForest(RandomForest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub n_classes: usize,
    pub n_features: usize,
    pub fit_seed: u64,
    pub params: ModelParams,
}

impl TrainedModel {
    pub fn kind(&self) -> &'static str {
        match self.params {
            ModelParams::LinearSvm(_) => "linear_svm",
            ModelParams::RandomForest(_) => "random_forest",
        }
    }

    fn check_dim(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.n_features {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        Ok(())
    }

    /// `[rows, classes]`, each row non-negative and summing to one.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(x)?;
        Ok(match &self.params {
            ModelParams::LinearSvm(m) => m.predict_proba(x),
            ModelParams::RandomForest(f) => f.predict_proba(x, self.n_classes),
        })
    }

    /// Argmax of [`predict_proba`](Self::predict_proba), lowest index on ties.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict_proba(x)?))
    }
}

pub fn argmax_rows(p: &Array2<f64>) -> Vec<usize> {
    p.outer_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}

/// Class count implied by the labels; `n_classes` overrides it when larger.
fn resolve_classes(y: &[usize], n_classes: Option<usize>) -> usize {
    let seen = y.iter().max().map_or(0, |&m| m + 1);
    n_classes.map_or(seen, |n| n.max(seen))
}

pub fn train_linear_svm(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: Option<usize>,
    params: &SvmParams,
) -> Result<TrainedModel> {
    svm::check_inputs(x, y)?;
    let n_classes = resolve_classes(y, n_classes);
    Ok(TrainedModel {
        n_classes,
        n_features: x.ncols(),
        fit_seed: params.seed,
        params: ModelParams::LinearSvm(LinearSvm::fit(x, y, n_classes, params)?),
    })
}

pub fn train_random_forest(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    n_classes: Option<usize>,
    params: &ForestParams,
) -> Result<TrainedModel> {
    svm::check_inputs(x, y)?;
    let n_classes = resolve_classes(y, n_classes);
    Ok(TrainedModel {
        n_classes,
        n_features: x.ncols(),
        fit_seed: params.seed,
        params: ModelParams::RandomForest(RandomForest::fit(x, y, n_classes, params)?),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub c: f64,
    /// Mean inner-CV accuracy, `None` if training failed.
    pub mean_accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub points: Vec<GridPoint>,
    pub best_c: f64,
}

pub const DEFAULT_C_GRID: [f64; 4] = [0.01, 0.1, 1.0, 10.0];

/// Stratified k-fold search over `C`. The winner has the highest mean
/// accuracy; ties go to the smaller `C`, then to grid order.
pub fn grid_search(
    x: ArrayView2<'_, f64>,
    y: &[usize],
    grid: &[f64],
    k: usize,
    seed: u64,
    base: &SvmParams,
) -> Result<GridSearchResult> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("empty grid".into()));
    }
    let plan = plan_folds(y, k, seed)?;
    let n_classes = resolve_classes(y, None);
    let points: Vec<GridPoint> = grid
        .iter()
        .map(|&c| {
            let params = SvmParams { c, ..base.clone() };
            let run = || -> Result<f64> {
                let mut total = 0.0;
                for fold in 0..k {
                    let (train, test) = plan.split(fold);
                    let ytr: Vec<usize> = train.iter().map(|&i| y[i]).collect();
                    let yte: Vec<usize> = test.iter().map(|&i| y[i]).collect();
                    let xtr = x.select(ndarray::Axis(0), &train);
                    let xte = x.select(ndarray::Axis(0), &test);
                    let model = train_linear_svm(xtr.view(), &ytr, Some(n_classes), &params)?;
                    total += accuracy(&model.predict(xte.view())?, &yte);
                }
                Ok(total / k as f64)
            };
            match run() {
                Ok(acc) => GridPoint {
                    c,
                    mean_accuracy: Some(acc),
                    error: None,
                },
                Err(e) => GridPoint {
                    c,
                    mean_accuracy: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let best = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.mean_accuracy.map(|a| (i, a, p.c)))
        .reduce(|best, cand| {
            let better = cand.1 > best.1 || (cand.1 == best.1 && cand.2 < best.2);
            if better {
                cand
            } else {
                best
            }
        })
        .ok_or_else(|| Error::InvalidParameter("every grid point failed".into()))?;
    Ok(GridSearchResult { best_c: best.2, points })
}
