//! One-way ANOVA F scoring, top-percentile selection and train-fitted
//! standardization.
//!
//! Scoring works on row subsets of a shared base matrix (`rows` may repeat
//! an index), so fold splits and re-paired exemplar sets never need to copy
//! the wide EEG matrix.

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-feature one-way ANOVA F statistic over all rows of `x`.
pub fn anova_f<T: Copy + Into<f64>>(x: ArrayView2<'_, T>, y: &[usize]) -> Result<Array1<f64>> {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    anova_f_rows(x, &rows, y)
}

/// ANOVA F over the rows `rows` of `x`; `y[i]` is the label of `rows[i]`.
///
/// A feature with no variance at all scores 0; one with between-class but
/// no within-class variance scores +inf.
pub fn anova_f_rows<T: Copy + Into<f64>>(x: ArrayView2<'_, T>, rows: &[usize], y: &[usize]) -> Result<Array1<f64>> {
    if rows.len() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", rows.len(), y.len())));
    }
    let d = x.ncols();
    let n_classes = y.iter().max().map_or(0, |&m| m + 1);
    let mut counts = vec![0usize; n_classes];
    for &l in y {
        counts[l] += 1;
    }
    let k = counts.iter().filter(|&&c| c > 0).count();
    if k < 2 {
        return Err(Error::SingleClass(k));
    }
    let n = rows.len();
    if n <= k {
        return Err(Error::InvalidParameter(format!(
            "{n} rows leave no within-class degrees of freedom for {k} classes"
        )));
    }

    // Repeated (row, label) entries become weights, so re-paired sets cost
    // one pass per distinct exemplar.
    let mut entries: Vec<(usize, usize)> = rows.iter().copied().zip(y.iter().copied()).collect();
    entries.sort_unstable();
    let mut weighted: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
    for (r, l) in entries {
        match weighted.last_mut() {
            Some(last) if last.0 == r && last.1 == l => last.2 += 1.0,
            _ => weighted.push((r, l, 1.0)),
        }
    }

    let mut means = Array2::<f64>::zeros((n_classes, d));
    for &(r, l, w) in &weighted {
        let mut acc = means.row_mut(l);
        for (a, &v) in acc.iter_mut().zip(x.row(r).iter()) {
            *a += w * v.into();
        }
    }
    let mut grand = Array1::<f64>::zeros(d);
    for (c, mut row) in means.outer_iter_mut().enumerate() {
        if counts[c] > 0 {
            grand += &row;
            row /= counts[c] as f64;
        }
    }
    grand /= n as f64;

    let mut ss_within = Array1::<f64>::zeros(d);
    for &(r, l, w) in &weighted {
        let m = means.row(l);
        for ((acc, &v), &mu) in ss_within.iter_mut().zip(x.row(r).iter()).zip(m.iter()) {
            let dev = v.into() - mu;
            *acc += w * dev * dev;
        }
    }
    let mut ss_between = Array1::<f64>::zeros(d);
    for (c, row) in means.outer_iter().enumerate() {
        if counts[c] == 0 {
            continue;
        }
        let w = counts[c] as f64;
        for ((acc, &mu), &g) in ss_between.iter_mut().zip(row.iter()).zip(grand.iter()) {
            *acc += w * (mu - g) * (mu - g);
        }
    }

    let df_b = (k - 1) as f64;
    let df_w = (n - k) as f64;
    Ok(Array1::from_iter(ss_between.iter().zip(ss_within.iter()).map(
        |(&b, &w)| match (b > 0.0, w > 0.0) {
            (false, _) => 0.0,
            (true, false) => f64::INFINITY,
            (true, true) => (b / df_b) / (w / df_w),
        },
    )))
}

/// Number of features kept at percentile `p` of `d`: `max(1, ⌈p·d/100⌉)`.
pub fn percentile_count(p: f64, d: usize) -> usize {
    let exact = p * d as f64 / 100.0;
    // Guard against products like 0.07 * 100 landing a hair above an integer.
    let k = (exact - 1e-9 * exact.max(1.0)).ceil() as usize;
    k.clamp(1, d.max(1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelector {
    pub scores: Array1<f64>,
    /// Selected feature indices, ascending.
    pub selected: Vec<usize>,
    pub percentile: f64,
}

/// Keeps the top `p` percent of features by score, ties going to the lower
/// index.
pub fn select_percentile(scores: &Array1<f64>, p: f64) -> Result<FeatureSelector> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::InvalidParameter(format!("percentile {p} outside (0, 100]")));
    }
    if scores.is_empty() {
        return Err(Error::InvalidParameter("no features to select from".into()));
    }
    let k = percentile_count(p, scores.len());
    let key = |i: usize| {
        if scores[i].is_nan() {
            f64::NEG_INFINITY
        } else {
            scores[i]
        }
    };
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    let mut selected = order[..k].to_vec();
    selected.sort_unstable();
    Ok(FeatureSelector {
        scores: scores.clone(),
        selected,
        percentile: p,
    })
}

impl FeatureSelector {
    /// Scores `rows` of `x` with ANOVA F and keeps the top `p` percent. Only
    /// the training rows and their labels are ever seen here.
    pub fn fit<T: Copy + Into<f64>>(x: ArrayView2<'_, T>, rows: &[usize], y: &[usize], p: f64) -> Result<Self> {
        select_percentile(&anova_f_rows(x, rows, y)?, p)
    }

    pub fn n_input(&self) -> usize {
        self.scores.len()
    }

    /// Selected columns of `rows` of `x` as a dense `f64` matrix.
    pub fn transform<T: Copy + Into<f64>>(&self, x: ArrayView2<'_, T>, rows: &[usize]) -> Result<Array2<f64>> {
        if x.ncols() != self.n_input() {
            return Err(Error::Shape(format!(
                "selector fitted on {} features, got {}",
                self.n_input(),
                x.ncols()
            )));
        }
        Ok(gather(x, rows, &self.selected))
    }
}

pub fn gather<T: Copy + Into<f64>>(x: ArrayView2<'_, T>, rows: &[usize], cols: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), cols.len()));
    for (mut dst, &r) in out.outer_iter_mut().zip(rows) {
        let src = x.row(r);
        for (d, &c) in dst.iter_mut().zip(cols) {
            *d = src[c].into();
        }
    }
    out
}

/// Column means and population standard deviations from training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    /// Zero marks a constant column, which transforms to 0.
    pub sd: Array1<f64>,
}

impl Standardizer {
    pub fn fit(train: ArrayView2<'_, f64>) -> Result<Self> {
        let n = train.nrows();
        if n == 0 {
            return Err(Error::EmptyExemplars);
        }
        let mean = train.mean_axis(ndarray::Axis(0)).expect("non-empty");
        let mut var = Array1::<f64>::zeros(train.ncols());
        for row in train.outer_iter() {
            for ((v, &x), &m) in var.iter_mut().zip(row.iter()).zip(mean.iter()) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = mean.mapv(|m: f64| m.abs().max(1.0));
        let sd = Array1::from_iter(var.iter().zip(scale.iter()).map(|(&v, &s)| {
            let sd = (v / n as f64).sqrt();
            if sd <= 1e-12 * s {
                0.0
            } else {
                sd
            }
        }));
        Ok(Self { mean, sd })
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "standardizer fitted on {} columns, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        let mut out = x.to_owned();
        for mut row in out.outer_iter_mut() {
            for ((v, &m), &s) in row.iter_mut().zip(self.mean.iter()).zip(self.sd.iter()) {
                *v = if s == 0.0 { 0.0 } else { (*v - m) / s };
            }
        }
        Ok(out)
    }
}

/// Transforms `apply` with statistics fitted on `train` only.
pub fn standardize(train: ArrayView2<'_, f64>, apply: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    Standardizer::fit(train)?.transform(apply)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array};
    use proptest::prelude::*;
    use rand::Rng;

    /// Textbook group-sum ANOVA, one feature at a time.
    fn brute_force_f(x: &Array2<f64>, y: &[usize]) -> Vec<f64> {
        let classes: Vec<usize> = {
            let mut c = y.to_vec();
            c.sort_unstable();
            c.dedup();
            c
        };
        (0..x.ncols())
            .map(|j| {
                let col: Vec<f64> = x.column(j).to_vec();
                let n = col.len() as f64;
                let grand = col.iter().sum::<f64>() / n;
                let mut ssb = 0.0;
                let mut ssw = 0.0;
                for &c in &classes {
                    let g: Vec<f64> = col.iter().zip(y).filter(|(_, &l)| l == c).map(|(&v, _)| v).collect();
                    let m = g.iter().sum::<f64>() / g.len() as f64;
                    ssb += g.len() as f64 * (m - grand).powi(2);
                    ssw += g.iter().map(|v| (v - m).powi(2)).sum::<f64>();
                }
                let k = classes.len() as f64;
                if ssb == 0.0 {
                    0.0
                } else {
                    (ssb / (k - 1.0)) / (ssw / (n - k))
                }
            })
            .collect()
    }

    #[test]
    fn hand_computed_two_group_case() {
        let x = array![[0.0], [1.0], [2.0], [3.0]];
        let f = anova_f(x.view(), &[0, 0, 1, 1]).unwrap();
        assert_eq!(f[0], 8.0);
    }

    #[test]
    fn constant_feature_scores_zero() {
        let x = array![[5.0, 1.0], [5.0, 2.0], [5.0, 3.0], [5.0, 5.0]];
        let f = anova_f(x.view(), &[0, 0, 1, 1]).unwrap();
        assert_eq!(f[0], 0.0);
    }

    #[test]
    fn single_class_rejected() {
        let x = array![[0.0], [1.0]];
        assert!(matches!(anova_f(x.view(), &[2, 2]), Err(Error::SingleClass(1))));
    }

    #[test]
    fn repeated_rows_act_as_weights() {
        let x = array![[0.0, 1.0], [1.0, 3.0], [2.0, -1.0], [4.0, 0.5], [3.0, 2.0]];
        let rows = [0, 0, 1, 2, 3, 3, 3, 4];
        let y = [0, 0, 0, 1, 1, 1, 1, 1];
        let expanded = gather(x.view(), &rows, &[0, 1]);
        let via_rows = anova_f_rows(x.view(), &rows, &y).unwrap();
        let direct = anova_f(expanded.view(), &y).unwrap();
        for (a, b) in via_rows.iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn null_f_averages_one() {
        let mut total = 0.0;
        let seeds = 5;
        for seed in 0..seeds {
            let mut rng = crate::rng::stream(seed, 1);
            let n = 80;
            let x = Array::from_shape_fn((n, 1000), |_| rng.random::<f64>());
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..8)).collect();
            total += anova_f(x.view(), &y).unwrap().mean().unwrap();
        }
        let mean = total / seeds as f64;
        assert!((mean - 1.0).abs() < 0.15, "null mean F {mean}");
    }

    #[test]
    fn percentile_counts() {
        assert_eq!(percentile_count(1.0, 216_713), 2168);
        assert_eq!(percentile_count(1.0, 4000), 40);
        assert_eq!(percentile_count(2.0, 65_536), 1311);
        assert_eq!(percentile_count(1.0, 10), 1);
        assert_eq!(percentile_count(100.0, 17), 17);
        assert_eq!(percentile_count(7.0, 100), 7);
    }

    #[test]
    fn select_all_and_bad_percentile() {
        let s = Array1::from(vec![0.3, 0.1, 0.2]);
        assert_eq!(select_percentile(&s, 100.0).unwrap().selected, vec![0, 1, 2]);
        assert!(select_percentile(&s, 0.0).is_err());
        assert!(select_percentile(&s, 101.0).is_err());
    }

    #[test]
    fn ties_go_to_lower_index() {
        let s = Array1::from(vec![1.0, 5.0, 5.0, 5.0, 0.0]);
        assert_eq!(select_percentile(&s, 40.0).unwrap().selected, vec![1, 2]);
    }

    #[test]
    fn planted_features_are_recovered() {
        let mut rng = crate::rng::stream(3, 2);
        let n = 160;
        let d = 1000;
        let y: Vec<usize> = (0..n).map(|i| i % 8).collect();
        let planted: Vec<usize> = (0..10).map(|i| 37 + i * 91).collect();
        let x = Array::from_shape_fn((n, d), |(i, j)| {
            let noise: f64 = rng.random_range(-1.0..1.0);
            if planted.contains(&j) {
                noise + 3.0 * y[i] as f64
            } else {
                noise
            }
        });
        let sel = FeatureSelector::fit(x.view(), &(0..n).collect::<Vec<_>>(), &y, 1.0).unwrap();
        assert_eq!(sel.selected, planted);
    }

    #[test]
    fn standardize_self_and_constant() {
        let x = array![[1.0, 4.0, 2.0], [2.0, 4.0, 8.0], [6.0, 4.0, -1.0]];
        let z = standardize(x.view(), x.view()).unwrap();
        for j in [0, 2] {
            let col = z.column(j);
            let mean = col.mean().unwrap();
            let sd = (col.mapv(|v| (v - mean).powi(2)).mean().unwrap()).sqrt();
            assert!(mean.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
        assert!(z.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standardize_uses_train_statistics_only() {
        let train = array![[0.0], [2.0], [4.0]];
        let test = array![[10.0], [20.0]];
        let with_train = standardize(train.view(), test.view()).unwrap();
        let with_self = standardize(test.view(), test.view()).unwrap();
        assert_ne!(with_train, with_self);
        let sd = (8.0f64 / 3.0).sqrt();
        assert!((with_train[[0, 0]] - 8.0 / sd).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            n in 6usize..20,
            d in 1usize..5,
            seed in any::<u64>(),
        ) {
            let mut rng = crate::rng::stream(seed, 0);
            let x = Array::from_shape_fn((n, d), |_| rng.random_range(-5.0..5.0));
            let mut y: Vec<usize> = (0..n).map(|i| i % 3).collect();
            y[0] = rng.random_range(0..3);
            let fast = anova_f(x.view(), &y).unwrap();
            let slow = brute_force_f(&x, &y);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
            }
        }

        #[test]
        fn selection_is_scale_invariant(scale in 0.001f64..1000.0, seed in any::<u64>()) {
            let mut rng = crate::rng::stream(seed, 4);
            let x = Array::from_shape_fn((24, 30), |_| rng.random_range(-1.0..1.0));
            let y: Vec<usize> = (0..24).map(|i| i % 4).collect();
            let rows: Vec<usize> = (0..24).collect();
            let a = FeatureSelector::fit(x.view(), &rows, &y, 10.0).unwrap();
            let scaled = x.mapv(|v| v * scale);
            let b = FeatureSelector::fit(scaled.view(), &rows, &y, 10.0).unwrap();
            prop_assert_eq!(a.selected, b.selected);
        }
    }
}
