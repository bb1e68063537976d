//! Two-dimensional embeddings (isomap, spectral, locally linear) of
//! exemplar matrices, a silhouette-based class-structure score, and an SVG
//! scatter renderer.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{anova_f, select_percentile, Standardizer};
use crate::linalg::sym_eigen;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Isomap,
    Spectral,
    Lle,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Isomap, Method::Spectral, Method::Lle];

    pub fn name(self) -> &'static str {
        match self {
            Method::Isomap => "isomap",
            Method::Spectral => "spectral",
            Method::Lle => "lle",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown method '{s}' (isomap, spectral, lle)")))
    }
}

pub const DEFAULT_NEIGHBORS: usize = 10;

/// ANOVA percentile of features kept for embedding by default.
pub const DEFAULT_PERCENTILE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding2D {
    /// `[n, 2]`
    pub coords: Array2<f64>,
    pub labels: Vec<usize>,
    pub method: Method,
    pub n_neighbors: usize,
    /// Isomap: fraction of the positive MDS spectrum kept. Spectral: the
    /// first non-trivial Laplacian eigenvalue. LLE: reconstruction cost of
    /// the two kept eigenvectors.
    pub diagnostic: f64,
}

/// Euclidean distances between all rows.
pub fn pairwise_distances(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        let a = x.row(i);
        for j in (i + 1)..n {
            let s: f64 = a.iter().zip(x.row(j).iter()).map(|(p, q)| (p - q) * (p - q)).sum();
            d[[i, j]] = s.sqrt();
            d[[j, i]] = d[[i, j]];
        }
    }
    d
}

/// The `k` nearest other rows of every row, nearest first; ties go to the
/// lower index.
fn knn(dist: &Array2<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = dist.nrows();
    (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| dist[[i, a]].total_cmp(&dist[[i, b]]).then(a.cmp(&b)));
            others.truncate(k);
            others
        })
        .collect()
}

/// Symmetrized neighbour lists: j is adjacent to i if either is among the
/// other's k nearest.
fn symmetric_graph(neighbors: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); neighbors.len()];
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

fn components(adj: &[Vec<usize>]) -> usize {
    let mut seen = vec![false; adj.len()];
    let mut count = 0;
    for start in 0..adj.len() {
        if seen[start] {
            continue;
        }
        count += 1;
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
    }
    count
}

/// Total-ordered f64 for the Dijkstra heap.
struct Dist(f64);
impl PartialEq for Dist {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for Dist {}
impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Dist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

fn geodesics(adj: &[Vec<usize>], dist: &Array2<f64>) -> Array2<f64> {
    let n = adj.len();
    let mut out = Array2::from_elem((n, n), f64::INFINITY);
    let mut heap = BinaryHeap::new();
    for s in 0..n {
        let mut row = out.row_mut(s);
        row[s] = 0.0;
        heap.push(Reverse((Dist(0.0), s)));
        while let Some(Reverse((Dist(d), v))) = heap.pop() {
            if d > row[v] {
                continue;
            }
            for &w in &adj[v] {
                let nd = d + dist[[v, w]];
                if nd < row[w] {
                    row[w] = nd;
                    heap.push(Reverse((Dist(nd), w)));
                }
            }
        }
    }
    // Average the two directions so the matrix is exactly symmetric.
    let t = out.t().to_owned();
    (out + t) * 0.5
}

fn isomap(dist: &Array2<f64>, adj: &[Vec<usize>]) -> (Array2<f64>, f64) {
    let n = dist.nrows();
    let g = geodesics(adj, dist);
    // Double-centred squared geodesics.
    let sq = g.mapv(|v| v * v);
    let row_mean = sq.mean_axis(ndarray::Axis(1)).expect("non-empty");
    let total = row_mean.mean().expect("non-empty");
    let b = Array2::from_shape_fn((n, n), |(i, j)| -0.5 * (sq[[i, j]] - row_mean[i] - row_mean[j] + total));
    let (values, vectors) = sym_eigen(b.view());
    let mut coords = Array2::zeros((n, 2));
    for c in 0..2 {
        let k = n - 1 - c;
        let scale = values[k].max(0.0).sqrt();
        for i in 0..n {
            coords[[i, c]] = vectors[[i, k]] * scale;
        }
    }
    let positive: f64 = values.iter().filter(|&&v| v > 0.0).sum();
    let kept = values[n - 1].max(0.0) + values[n - 2].max(0.0);
    (coords, if positive > 0.0 { kept / positive } else { 0.0 })
}

fn spectral(neighbors: &[Vec<usize>]) -> (Array2<f64>, f64) {
    let n = neighbors.len();
    // Affinity 0.5 (A + Aᵀ) of the kNN connectivity matrix.
    let mut a = Array2::<f64>::zeros((n, n));
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            a[[i, j]] += 0.5;
            a[[j, i]] += 0.5;
        }
    }
    let deg: Array1<f64> = a.sum_axis(ndarray::Axis(1));
    let inv_sqrt = deg.mapv(|d| 1.0 / d.sqrt());
    // Normalized Laplacian I - D^-1/2 A D^-1/2.
    let l = Array2::from_shape_fn((n, n), |(i, j)| {
        let off = a[[i, j]] * inv_sqrt[i] * inv_sqrt[j];
        if i == j {
            1.0 - off
        } else {
            -off
        }
    });
    let (values, vectors) = sym_eigen(l.view());
    let mut coords = Array2::zeros((n, 2));
    for c in 0..2 {
        for i in 0..n {
            coords[[i, c]] = vectors[[i, c + 1]] * inv_sqrt[i];
        }
    }
    (coords, values[1])
}

const LLE_REG: f64 = 1e-3;

fn lle(x: ArrayView2<'_, f64>, neighbors: &[Vec<usize>]) -> (Array2<f64>, f64) {
    let n = x.nrows();
    let mut w = Array2::<f64>::zeros((n, n));
    for (i, list) in neighbors.iter().enumerate() {
        let k = list.len();
        let z = DMatrix::from_fn(k, x.ncols(), |r, c| x[[list[r], c]] - x[[i, c]]);
        let mut gram = &z * z.transpose();
        let trace = gram.trace();
        let reg = if trace > 0.0 { LLE_REG * trace } else { LLE_REG };
        for d in 0..k {
            gram[(d, d)] += reg;
        }
        let ones = DVector::from_element(k, 1.0);
        let sol = gram
            .clone()
            .cholesky()
            .map(|c| c.solve(&ones))
            .unwrap_or_else(|| gram.lu().solve(&ones).unwrap_or(ones.clone()));
        let sum = sol.sum();
        for (r, &j) in list.iter().enumerate() {
            w[[i, j]] = sol[r] / sum;
        }
    }
    let m = Array2::<f64>::eye(n) - &w;
    let cost = m.t().dot(&m);
    let (values, vectors) = sym_eigen(cost.view());
    let mut coords = Array2::zeros((n, 2));
    for c in 0..2 {
        for i in 0..n {
            coords[[i, c]] = vectors[[i, c + 1]];
        }
    }
    (coords, values[1] + values[2])
}

/// Embeds the rows of `x` in two dimensions using a `k`-nearest-neighbour
/// graph. The graph must be connected.
pub fn embed(x: ArrayView2<'_, f64>, labels: &[usize], method: Method, k: usize) -> Result<Embedding2D> {
    let n = x.nrows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} rows but {} labels", labels.len())));
    }
    if k < 2 || k >= n {
        return Err(Error::InvalidParameter(format!(
            "need 2 <= n_neighbors < n, got n_neighbors = {k} with n = {n}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("embedding input".into()));
    }
    let dist = pairwise_distances(x);
    let neighbors = knn(&dist, k);
    let adj = symmetric_graph(&neighbors);
    let parts = components(&adj);
    if parts > 1 {
        return Err(Error::DisconnectedGraph { components: parts });
    }
    let (coords, diagnostic) = match method {
        Method::Isomap => isomap(&dist, &adj),
        Method::Spectral => spectral(&neighbors),
        Method::Lle => lle(x, &neighbors),
    };
    if coords.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{} coordinates", method.name())));
    }
    Ok(Embedding2D {
        coords,
        labels: labels.to_vec(),
        method,
        n_neighbors: k,
        diagnostic,
    })
}

/// Mean silhouette coefficient of the labels in embedding space. Points in
/// a singleton class score 0.
pub fn silhouette(coords: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
    let classes: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(Error::SingleClass(classes.len()));
    }
    let n_classes = classes.iter().max().map_or(0, |&m| m + 1);
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    let dist = pairwise_distances(coords);
    let mut total = 0.0;
    for i in 0..labels.len() {
        let mut sums = vec![0.0; n_classes];
        for j in 0..labels.len() {
            sums[labels[j]] += dist[[i, j]];
        }
        let own = labels[i];
        if counts[own] < 2 {
            continue;
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..n_classes)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / labels.len() as f64)
}

pub fn structure_score(emb: &Embedding2D) -> Result<f64> {
    silhouette(emb.coords.view(), &emb.labels)
}

/// Features to embed: optionally the top `percentile` by ANOVA F over all
/// rows, optionally standardized.
pub fn prepare_features<T: Copy + Into<f64>>(
    x: ArrayView2<'_, T>,
    labels: &[usize],
    percentile: Option<f64>,
    standardize: bool,
) -> Result<Array2<f64>> {
    let all: Vec<usize> = (0..x.nrows()).collect();
    let cols: Vec<usize> = match percentile {
        Some(p) => select_percentile(&anova_f(x, labels)?, p)?.selected,
        None => (0..x.ncols()).collect(),
    };
    let z = crate::features::gather(x, &all, &cols);
    if standardize {
        Standardizer::fit(z.view())?.transform(z.view())
    } else {
        Ok(z)
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Coordinates as text: `index,label,x,y`.
pub fn coords_csv(emb: &Embedding2D) -> String {
    let mut out = String::from("index,label,x,y\n");
    for (i, (row, l)) in emb.coords.outer_iter().zip(&emb.labels).enumerate() {
        let _ = writeln!(out, "{i},{l},{:.9e},{:.9e}", row[0], row[1]);
    }
    out
}

/// Writes an SVG scatter plot to `path` and the coordinates beside it
/// (same stem, `.csv`). Returns the coordinate file path.
pub fn render_embedding(emb: &Embedding2D, words: &[String], path: &Path) -> Result<PathBuf> {
    if emb.coords.nrows() == 0 {
        return Err(Error::EmptyExemplars);
    }
    let score = structure_score(emb).ok();
    let (w, h, margin, legend) = (640.0, 520.0, 50.0, 120.0);
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for row in emb.coords.outer_iter() {
        for c in 0..2 {
            lo[c] = lo[c].min(row[c]);
            hi[c] = hi[c].max(row[c]);
        }
    }
    let span = |c: usize| if hi[c] > lo[c] { hi[c] - lo[c] } else { 1.0 };
    let px = |v: f64| margin + (v - lo[0]) / span(0) * (w - 2.0 * margin - legend);
    let py = |v: f64| h - margin - (v - lo[1]) / span(1) * (h - 2.0 * margin);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let title = match score {
        Some(s) => format!("{} (k = {}), silhouette {s:.3}", emb.method.name(), emb.n_neighbors),
        None => format!("{} (k = {})", emb.method.name(), emb.n_neighbors),
    };
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="28" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>"#,
        (w - legend) / 2.0
    );
    for (row, &l) in emb.coords.outer_iter().zip(&emb.labels) {
        let _ = writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{}" fill-opacity="0.8"/>"#,
            px(row[0]),
            py(row[1]),
            PALETTE[l % PALETTE.len()]
        );
    }
    for (c, word) in words.iter().enumerate() {
        let y = margin + 20.0 * c as f64;
        let x = w - legend + 10.0;
        let _ = writeln!(
            svg,
            r#"<circle cx="{x}" cy="{y}" r="5" fill="{}"/><text x="{}" y="{}" font-family="sans-serif" font-size="13">{word}</text>"#,
            PALETTE[c % PALETTE.len()],
            x + 12.0,
            y + 4.0
        );
    }
    svg.push_str("</svg>\n");

    std::fs::write(path, svg).map_err(|e| Error::io(path, e))?;
    let csv_path = path.with_extension("csv");
    std::fs::write(&csv_path, coords_csv(emb)).map_err(|e| Error::io(&csv_path, e))?;
    Ok(csv_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn silhouette_hand_case() {
        // Two tight pairs far apart.
        let c = array![[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]];
        let s = silhouette(c.view(), &[0, 0, 1, 1]).unwrap();
        let b = (10.0 + 101f64.sqrt()) / 2.0;
        assert!((s - (b - 1.0) / b).abs() < 1e-12);
        assert!(silhouette(c.view(), &[1, 1, 1, 1]).is_err());
    }

    #[test]
    fn bad_neighbor_counts() {
        let x = Array2::<f64>::zeros((5, 2));
        assert!(embed(x.view(), &[0; 5], Method::Isomap, 5).is_err());
        assert!(embed(x.view(), &[0; 5], Method::Isomap, 1).is_err());
    }

    #[test]
    fn disconnected_graph_reports_components() {
        let mut x = Array2::zeros((8, 1));
        for i in 0..4 {
            x[[i, 0]] = i as f64;
            x[[i + 4, 0]] = 1000.0 + i as f64;
        }
        let err = embed(x.view(), &[0; 8], Method::Spectral, 2).unwrap_err();
        assert!(matches!(err, Error::DisconnectedGraph { components: 2 }), "{err}");
    }

    #[test]
    fn method_names() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()).unwrap(), m);
        }
        assert!(Method::parse("tsne").is_err());
    }
}
