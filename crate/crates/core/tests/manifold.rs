use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use neurofuse::manifold::{
    coords_csv, embed, prepare_features, render_embedding, silhouette, structure_score, Embedding2D, Method,
};
use neurofuse::rng;
use neurofuse::synthgen::{generate_subject, SubjectProfile};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng::stream(seed, 1);
    Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Residual of the best orthogonal-plus-translation fit of `b` onto `a`,
/// relative to the spread of `a`.
fn procrustes(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let center = |x: ArrayView2<'_, f64>| {
        let m = x.mean_axis(ndarray::Axis(0)).unwrap();
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[[i, j]] - m[j])
    };
    let (ca, cb) = (center(a), center(b));
    let svd = (cb.transpose() * &ca).svd(true, true);
    let r = svd.u.unwrap() * svd.v_t.unwrap();
    (cb * r - &ca).norm() / ca.norm()
}

fn random_orthogonal(d: usize, seed: u64) -> Array2<f64> {
    let g = gaussian(d, d, seed);
    let q = DMatrix::from_fn(d, d, |i, j| g[[i, j]]).qr().q();
    Array2::from_shape_fn((d, d), |(i, j)| q[(i, j)])
}

#[test]
fn isomap_unrolls_a_line() {
    let mut rng = rng::stream(3, 0);
    let dir = gaussian(1, 50, 4);
    let dir = &dir / dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let t: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..10.0)).collect();
    let x = Array2::from_shape_fn((100, 50), |(i, j)| {
        t[i] * dir[[0, j]] + 1e-3 * rng.random_range(-1.0..1.0)
    });
    let emb = embed(x.view(), &vec![0; 100], Method::Isomap, 10).unwrap();
    let first: Vec<f64> = emb.coords.column(0).to_vec();
    let rho = pearson(&ranks(&first), &ranks(&t));
    assert!(rho.abs() >= 0.99, "rank correlation {rho}");
}

/// Two planar Gaussian blobs far apart, embedded with the smallest `k` that
/// connects them.
fn two_blob_embedding(seed: u64) -> Embedding2D {
    let nb = 50;
    let mut x = gaussian(2 * nb, 2, seed);
    for i in nb..2 * nb {
        x[[i, 0]] += 20.0;
    }
    let labels: Vec<usize> = (0..2 * nb).map(|i| i / nb).collect();
    (2..2 * nb)
        .find_map(|k| embed(x.view(), &labels, Method::Spectral, k).ok())
        .unwrap()
}

#[test]
fn spectral_separates_two_blobs() {
    for seed in 0..3 {
        let emb = two_blob_embedding(seed);
        let s = structure_score(&emb).unwrap();
        assert!(s > 0.8, "seed {seed}: silhouette {s}");
        let first = emb.coords.column(0);
        let side = |i: usize| first[i] > 0.0;
        assert!((0..50).all(|i| side(i) == side(0)));
        assert!((50..100).all(|i| side(i) != side(0)));
    }
}

#[test]
fn isomap_reproduces_planar_convex_sets() {
    let mut rng = rng::stream(6, 0);
    let n = 15;
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    let x = Array2::from_shape_fn(
        (n, 2),
        |(i, j)| if j == 0 { 3.0 * angles[i].cos() } else { angles[i].sin() },
    );
    let emb = embed(x.view(), &vec![0; n], Method::Isomap, n - 1).unwrap();
    assert!(procrustes(x.view(), emb.coords.view()) < 1e-6);
}

#[test]
fn isomap_is_invariant_to_rotations_of_the_input() {
    let x = gaussian(40, 5, 7);
    let q = random_orthogonal(5, 8);
    let a = embed(x.view(), &vec![0; 40], Method::Isomap, 8).unwrap();
    let b = embed(x.dot(&q).view(), &vec![0; 40], Method::Isomap, 8).unwrap();
    assert!(procrustes(a.coords.view(), b.coords.view()) < 1e-6);
}

#[test]
fn spectral_directions_are_degree_orthogonal() {
    let x = gaussian(50, 4, 9);
    let k = 6;
    let emb = embed(x.view(), &vec![0; 50], Method::Spectral, k).unwrap();
    // Degrees of 0.5 (A + Aᵀ) for the kNN connectivity A, rebuilt here.
    let n = x.nrows();
    let mut deg = vec![0.0; n];
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let s: f64 = x.row(i).iter().zip(x.row(j).iter()).map(|(p, q)| (p - q).powi(2)).sum();
                (s.sqrt(), j)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in d.iter().take(k) {
            deg[i] += 0.5;
            deg[j] += 0.5;
        }
    }
    let (y1, y2) = (emb.coords.column(0), emb.coords.column(1));
    let cross: f64 = (0..n).map(|i| deg[i] * y1[i] * y2[i]).sum();
    let norm1: f64 = (0..n).map(|i| deg[i] * y1[i] * y1[i]).sum();
    let norm2: f64 = (0..n).map(|i| deg[i] * y2[i] * y2[i]).sum();
    assert!((cross / (norm1 * norm2).sqrt()).abs() < 1e-8);
    let centred: f64 = (0..n).map(|i| deg[i] * y1[i]).sum();
    assert!(centred.abs() < 1e-8 * norm1.sqrt() * deg.iter().sum::<f64>().sqrt());
}

#[test]
fn lle_embeds_a_curve() {
    let n = 60;
    let x = Array2::from_shape_fn((n, 3), |(i, j)| {
        let t = i as f64 / n as f64 * 3.0;
        [t.cos(), t.sin(), 0.3 * t][j]
    });
    let emb = embed(x.view(), &vec![0; n], Method::Lle, 8).unwrap();
    let first: Vec<f64> = emb.coords.column(0).to_vec();
    let t: Vec<f64> = (0..n).map(|i| i as f64).collect();
    assert!(pearson(&ranks(&first), &t).abs() > 0.95);
}

#[test]
fn identical_points_per_class_score_one() {
    let labels: Vec<usize> = (0..80).map(|i| i % 8).collect();
    let x = Array2::from_shape_fn((80, 8), |(i, j)| if labels[i] == j { 1.0 } else { 0.0 });
    let s = silhouette(x.view(), &labels).unwrap();
    assert!(s > 0.9, "{s}");
}

#[test]
fn shuffled_labels_score_near_zero() {
    let mut total = 0.0;
    for seed in 0..5 {
        let coords = gaussian(800, 2, 20 + seed);
        let mut labels: Vec<usize> = (0..800).map(|i| i % 8).collect();
        labels.shuffle(&mut rng::stream(seed, 2));
        total += silhouette(coords.view(), &labels).unwrap() / 5.0;
    }
    assert!(total.abs() < 0.1, "{total}");
}

#[test]
fn score_ignores_rotation() {
    let coords = gaussian(64, 2, 30);
    let labels: Vec<usize> = (0..64).map(|i| (i * 7) % 8).collect();
    let (c, s) = (0.6f64, 0.8f64);
    let rot = ndarray::arr2(&[[c, -s], [s, c]]);
    let a = silhouette(coords.view(), &labels).unwrap();
    let b = silhouette(coords.dot(&rot).view(), &labels).unwrap();
    assert!((a - b).abs() < 1e-12);
}

fn subject_embedding(seed: u64) -> Embedding2D {
    let p = SubjectProfile {
        n_per_class: 40,
        fmri_sep: 6.0,
        ..SubjectProfile::small(seed)
    };
    let s = generate_subject(&p).unwrap();
    let x = prepare_features(s.fmri.data.view(), &s.fmri.labels, Some(10.0), true).unwrap();
    embed(x.view(), &s.fmri.labels, Method::Isomap, 10).unwrap()
}

#[test]
fn rendering_writes_image_and_coordinates() {
    let emb = subject_embedding(1);
    assert_eq!(emb.coords.nrows(), 320);
    let dir = tempfile::tempdir().unwrap();
    let words: Vec<String> = (0..8).map(|i| format!("w{i}")).collect();
    let csv = render_embedding(&emb, &words, &dir.path().join("fig.svg")).unwrap();
    assert!(dir.path().join("fig.svg").exists());
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 321);
    assert_eq!(text, coords_csv(&emb));

    let again = subject_embedding(1);
    assert_eq!(coords_csv(&again).into_bytes(), text.into_bytes());

    let empty = Embedding2D {
        coords: Array2::zeros((0, 2)),
        labels: vec![],
        ..emb
    };
    assert!(render_embedding(&empty, &words, &dir.path().join("empty.svg")).is_err());
}

#[test]
fn planted_structure_scores_higher_than_none() {
    for seed in 0..5 {
        let structured = structure_score(&subject_embedding(seed)).unwrap();
        let p = SubjectProfile {
            n_per_class: 40,
            ..SubjectProfile::small(seed)
        };
        let s = generate_subject(&p).unwrap();
        let x = prepare_features(s.fmri.data.view(), &s.fmri.labels, Some(10.0), true).unwrap();
        let flat = structure_score(&embed(x.view(), &s.fmri.labels, Method::Isomap, 10).unwrap()).unwrap();
        assert!(structured > flat, "seed {seed}: {structured} vs {flat}");
    }
}
