//! Random forest of fully grown Gini trees on bootstrap samples.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaxFeatures {
    Sqrt,
    All,
    Count(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: MaxFeatures::Sqrt,
            min_samples_split: 2,
            max_depth: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        class: usize,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { class } => return class,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
}

struct Builder<'a> {
    /// Feature-major copy of the training matrix: `columns[j][i]`.
    columns: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    mtry: usize,
    params: &'a ForestParams,
}

struct SplitChoice {
    feature: usize,
    threshold: f64,
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

impl Builder<'_> {
    fn best_split_on(
        &self,
        feature: usize,
        samples: &[usize],
        pairs: &mut Vec<(f64, usize)>,
        total: &[usize],
    ) -> Option<(f64, f64)> {
        let col = &self.columns[feature];
        pairs.clear();
        pairs.extend(samples.iter().map(|&s| (col[s], self.y[s])));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if pairs[0].0 == pairs[pairs.len() - 1].0 {
            return None;
        }
        let n = pairs.len();
        let mut left = vec![0usize; self.n_classes];
        let mut right = total.to_vec();
        let mut sum_l2 = 0.0;
        let mut sum_r2: f64 = right.iter().map(|&c| (c * c) as f64).sum();
        let mut best: Option<(f64, f64)> = None;
        for i in 0..n - 1 {
            let c = pairs[i].1;
            sum_l2 += (2 * left[c] + 1) as f64;
            sum_r2 -= (2 * right[c] - 1) as f64;
            left[c] += 1;
            right[c] -= 1;
            if pairs[i].0 == pairs[i + 1].0 {
                continue;
            }
            let nl = (i + 1) as f64;
            let nr = (n - i - 1) as f64;
            // Maximizing this minimizes the weighted Gini impurity.
            let score = sum_l2 / nl + sum_r2 / nr;
            if best.is_none_or(|(s, _)| score > s) {
                let (lo, hi) = (pairs[i].0, pairs[i + 1].0);
                let mut thr = lo + (hi - lo) / 2.0;
                if thr >= hi {
                    thr = lo;
                }
                best = Some((score, thr));
            }
        }
        best
    }

    fn choose_split(&self, samples: &[usize], counts: &[usize], rng: &mut rng::Rng) -> Option<SplitChoice> {
        let d = self.columns.len();
        let mut features: Vec<usize> = (0..d).collect();
        let mut pairs = Vec::with_capacity(samples.len());
        let mut best: Option<(f64, SplitChoice)> = None;
        let mut drawn = 0;
        // Keep drawing past mtry until some feature admits a split.
        while drawn < d && (drawn < self.mtry || best.is_none()) {
            let j = rng.random_range(drawn..d);
            features.swap(drawn, j);
            let feature = features[drawn];
            drawn += 1;
            if let Some((score, threshold)) = self.best_split_on(feature, samples, &mut pairs, counts) {
                if best.as_ref().is_none_or(|(s, _)| score > *s) {
                    best = Some((score, SplitChoice { feature, threshold }));
                }
            }
        }
        best.map(|(_, s)| s)
    }

    fn grow(&self, samples: Vec<usize>, rng: &mut rng::Rng) -> Tree {
        let mut nodes = vec![Node::Leaf { class: 0 }];
        let mut stack = vec![(0usize, samples, 0usize)];
        while let Some((slot, samples, depth)) = stack.pop() {
            let mut counts = vec![0usize; self.n_classes];
            for &s in &samples {
                counts[self.y[s]] += 1;
            }
            let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
            let depth_capped = self.params.max_depth.is_some_and(|m| depth >= m);
            let split = if pure || depth_capped || samples.len() < self.params.min_samples_split {
                None
            } else {
                self.choose_split(&samples, &counts, rng)
            };
            match split {
                None => {
                    nodes[slot] = Node::Leaf {
                        class: majority(&counts),
                    }
                }
                Some(SplitChoice { feature, threshold }) => {
                    let col = &self.columns[feature];
                    let (l, r): (Vec<usize>, Vec<usize>) = samples.iter().partition(|&&s| col[s] <= threshold);
                    let left = nodes.len();
                    nodes.push(Node::Leaf { class: 0 });
                    let right = nodes.len();
                    nodes.push(Node::Leaf { class: 0 });
                    nodes[slot] = Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                    stack.push((right, r, depth + 1));
                    stack.push((left, l, depth + 1));
                }
            }
        }
        Tree { nodes }
    }
}

impl RandomForest {
    pub fn fit(x: ArrayView2<'_, f64>, y: &[usize], n_classes: usize, p: &ForestParams) -> Result<Self> {
        if p.n_trees == 0 {
            return Err(Error::InvalidParameter("forest needs at least one tree".into()));
        }
        let (n, d) = x.dim();
        if d == 0 {
            return Err(Error::InvalidParameter("no features".into()));
        }
        let columns: Vec<Vec<f64>> = x.columns().into_iter().map(|c| c.to_vec()).collect();
        let mtry = match p.max_features {
            MaxFeatures::Sqrt => ((d as f64).sqrt() as usize).max(1),
            MaxFeatures::All => d,
            MaxFeatures::Count(k) => k.clamp(1, d),
        };
        let builder = Builder {
            columns: &columns,
            y,
            n_classes,
            mtry,
            params: p,
        };
        let trees = (0..p.n_trees)
            .map(|t| {
                let mut rng = rng::stream(p.seed, 0x7265_6500 + t as u64);
                let samples: Vec<usize> = if p.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    let mut all: Vec<usize> = (0..n).collect();
                    all.shuffle(&mut rng);
                    all
                };
                builder.grow(samples, &mut rng)
            })
            .collect();
        Ok(Self { trees })
    }

    /// Fraction of trees voting for each class.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>, n_classes: usize) -> Array2<f64> {
        let x = x.as_standard_layout();
        let mut out = Array2::zeros((x.nrows(), n_classes));
        let n_trees = self.trees.len() as f64;
        for (row, mut dst) in x.outer_iter().zip(out.outer_iter_mut()) {
            let row = row.to_slice().expect("standard layout");
            for tree in &self.trees {
                dst[tree.predict_row(row)] += 1.0;
            }
            dst /= n_trees;
        }
        out
    }
}
