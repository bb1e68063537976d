//! Symmetric FastICA (log-cosh contrast) with PCA whitening, plus EOG
//! component ranking and removal.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ContinuousEEG, Step};
use crate::error::{Error, Result};
use crate::linalg::{correlation, sym_eigen};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaOptions {
    /// Components to keep after whitening; `None` keeps the numerical rank.
    pub n_components: Option<usize>,
    pub max_iter: usize,
    pub tol: f64,
    /// Fit on at most this many evenly strided samples.
    pub max_samples: usize,
    /// Channels whose mean serves as the EOG template. Falls back to the
    /// first two channels when none of these names exist.
    pub eog_channels: Vec<String>,
    pub seed: u64,
}

impl Default for IcaOptions {
    fn default() -> Self {
        Self {
            n_components: None,
            max_iter: 200,
            tol: 1e-4,
            max_samples: 20_000,
            eog_channels: vec!["Fp1".into(), "Fp2".into()],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ICADecomposition {
    /// `[components, channels]`.
    pub unmixing: Array2<f64>,
    /// `[channels, components]`.
    pub mixing: Array2<f64>,
    /// Absolute correlation of each component with the EOG template.
    pub component_scores: Array1<f64>,
    pub channel_names: Vec<String>,
    pub n_iter: usize,
    /// Provenance of the record the decomposition was fitted on.
    pub fitted_on: Vec<Step>,
}

impl ICADecomposition {
    pub fn n_components(&self) -> usize {
        self.unmixing.nrows()
    }

    /// Component indices ordered from most to least EOG-like.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.n_components()).collect();
        idx.sort_by(|&a, &b| {
            self.component_scores[b]
                .total_cmp(&self.component_scores[a])
                .then(a.cmp(&b))
        });
        idx
    }

    /// Component time courses of `x` (`[components, samples]`).
    pub fn sources(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.unmixing.dot(&x)
    }
}

fn eog_template(x: &ContinuousEEG, names: &[String]) -> Vec<usize> {
    let found: Vec<usize> = names
        .iter()
        .filter_map(|n| x.channel_names.iter().position(|c| c == n))
        .collect();
    if found.is_empty() {
        (0..x.n_channels().min(2)).collect()
    } else {
        found
    }
}

/// `(W Wᵀ)^{-1/2} W`.
fn symmetric_decorrelation(w: &Array2<f64>) -> Array2<f64> {
    let (vals, vecs) = sym_eigen(w.dot(&w.t()).view());
    let inv_sqrt = vals.mapv(|v| 1.0 / v.max(f64::MIN_POSITIVE).sqrt());
    let scaled = &vecs * &inv_sqrt.insert_axis(Axis(0));
    scaled.dot(&vecs.t()).dot(w)
}

pub fn fit_ica(x: &ContinuousEEG, seed: u64) -> Result<ICADecomposition> {
    fit_ica_with(
        x,
        &IcaOptions {
            seed,
            ..IcaOptions::default()
        },
    )
}

pub fn fit_ica_with(x: &ContinuousEEG, opts: &IcaOptions) -> Result<ICADecomposition> {
    let (n_ch, n_total) = x.data.dim();
    if n_total < 2 || n_ch == 0 {
        return Err(Error::EmptyExemplars);
    }
    let stride = n_total.div_ceil(opts.max_samples.max(1));
    let sub = x.data.slice(s![.., ..;stride]).to_owned();
    let t = sub.ncols() as f64;

    let mean = sub.mean_axis(Axis(1)).expect("non-empty");
    let centered = &sub - &mean.view().insert_axis(Axis(1));
    let cov = centered.dot(&centered.t()) / t;
    let (vals, vecs) = sym_eigen(cov.view());
    let top = vals[n_ch - 1];
    let rank = vals.iter().filter(|&&v| v > top * 1e-10).count();
    let n_comp = opts.n_components.unwrap_or(rank);
    if n_comp == 0 || n_comp > rank {
        return Err(Error::InvalidParameter(format!(
            "{n_comp} components requested, data rank is {rank}"
        )));
    }
    // Whitening K = D^{-1/2} Eᵀ on the leading components.
    let mut k = Array2::zeros((n_comp, n_ch));
    let mut dewhite = Array2::zeros((n_ch, n_comp));
    for c in 0..n_comp {
        let src = n_ch - 1 - c;
        let d = vals[src].sqrt();
        for ch in 0..n_ch {
            k[[c, ch]] = vecs[[ch, src]] / d;
            dewhite[[ch, c]] = vecs[[ch, src]] * d;
        }
    }
    let z = k.dot(&centered);

    let mut rng = rng::stream(opts.seed, rng::tag("fastica"));
    let init = Array2::from_shape_fn((n_comp, n_comp), |_| StandardNormal.sample(&mut rng));
    let mut w = symmetric_decorrelation(&init);
    let mut n_iter = 0;
    let mut last_change = f64::INFINITY;
    while n_iter < opts.max_iter {
        n_iter += 1;
        let mut g = w.dot(&z);
        let mut g_prime = Array1::zeros(n_comp);
        for (c, mut row) in g.axis_iter_mut(Axis(0)).enumerate() {
            let mut acc = 0.0;
            row.mapv_inplace(|u| {
                let th = u.tanh();
                acc += 1.0 - th * th;
                th
            });
            g_prime[c] = acc / t;
        }
        let w_new = g.dot(&z.t()) / t - &(&w * &g_prime.view().insert_axis(Axis(1)));
        let w_new = symmetric_decorrelation(&w_new);
        last_change = w_new
            .outer_iter()
            .zip(w.outer_iter())
            .map(|(a, b)| (a.dot(&b).abs() - 1.0).abs())
            .fold(0.0, f64::max);
        w = w_new;
        if last_change < opts.tol {
            break;
        }
    }
    if last_change >= opts.tol {
        return Err(Error::IcaNotConverged {
            iterations: n_iter,
            last_change,
        });
    }

    let unmixing = w.dot(&k);
    // W is orthogonal, so the pseudo-inverse of W K is E D^{1/2} Wᵀ.
    let mixing = dewhite.dot(&w.t());

    let template_ch = eog_template(x, &opts.eog_channels);
    let template: Vec<f64> = (0..sub.ncols())
        .map(|i| template_ch.iter().map(|&c| sub[[c, i]]).sum::<f64>() / template_ch.len() as f64)
        .collect();
    let sources = unmixing.dot(&sub);
    let component_scores = Array1::from_iter(
        sources
            .outer_iter()
            .map(|row| correlation(row.as_slice().expect("contiguous"), &template).abs()),
    );

    Ok(ICADecomposition {
        unmixing,
        mixing,
        component_scores,
        channel_names: x.channel_names.clone(),
        n_iter,
        fitted_on: x.provenance.clone(),
    })
}

/// Subtracts the `n_remove` most EOG-like components from `target` through
/// the mixing matrix. With `n_remove = 0` the record is returned unchanged.
pub fn remove_eog(target: &ContinuousEEG, ica: &ICADecomposition, n_remove: usize) -> Result<ContinuousEEG> {
    if n_remove >= ica.n_components() {
        return Err(Error::InvalidParameter(format!(
            "cannot remove {n_remove} of {} components",
            ica.n_components()
        )));
    }
    if target.channel_names != ica.channel_names {
        return Err(Error::Shape(
            "target channels differ from the channels the ICA was fitted on".into(),
        ));
    }
    let mut out = target.clone();
    for &c in ica.ranking().iter().take(n_remove) {
        let source = ica.unmixing.row(c).dot(&target.data);
        let pattern = ica.mixing.column(c);
        for (ch, mut row) in out.data.outer_iter_mut().enumerate() {
            row.scaled_add(-pattern[ch], &source);
        }
    }
    out.provenance.push(Step::RemoveEog);
    Ok(out)
}
