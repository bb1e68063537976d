//! Synthetic bimodal subjects with separately tunable class structure in
//! each modality.
//!
//! Each modality gets eight class means in a latent space, pairwise
//! `sep` apart, pushed into sensor space by a seeded orthonormal-column map.
//! EEG trials add a 1/f background and white noise; fMRI betas add white
//! noise. The per-trial noise of the two modalities is independent, so the
//! classification errors they induce are too.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::{s, Array2, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{BimodalSubject, EEGTrialSet, FMRIBetaSet, LabelVocab, N_CLASSES};
use crate::eegprep::ContinuousEEG;
use crate::error::{Error, Result};
use crate::fmriprep::{build_design, unmask, BoldRun, TrialEvent};
use crate::rng::{stream, tag, Rng};

/// BioSemi 64-channel labels in cap order.
pub const BIOSEMI64: [&str; 64] = [
    "Fp1", "AF7", "AF3", "F1", "F3", "F5", "F7", "FT7", "FC5", "FC3", "FC1", "C1", "C3", "C5", "T7", "TP7", "CP5",
    "CP3", "CP1", "P1", "P3", "P5", "P7", "P9", "PO7", "PO3", "O1", "Iz", "Oz", "POz", "Pz", "CPz", "Fpz", "Fp2",
    "AF8", "AF4", "AFz", "Fz", "F2", "F4", "F6", "F8", "FT8", "FC6", "FC4", "FC2", "FCz", "Cz", "C2", "C4", "C6", "T8",
    "TP8", "CP6", "CP4", "CP2", "P2", "P4", "P6", "P8", "P10", "PO8", "PO4", "O2",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub n_per_class: usize,
    /// Pairwise distance between EEG class means, in latent units.
    pub eeg_sep: f64,
    pub fmri_sep: f64,
    pub noise_sd: f64,
    pub latent_dim: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    pub fs: f64,
    pub n_voxels_info: usize,
    pub mask_shape: [usize; 3],
    pub voxel_size_mm: [f64; 3],
    pub seed: u64,
}

impl Default for SubjectProfile {
    fn default() -> Self {
        Self {
            n_per_class: 80,
            eeg_sep: 0.0,
            fmri_sep: 0.0,
            noise_sd: 1.0,
            latent_dim: 8,
            n_channels: 64,
            n_samples: 1024,
            fs: 512.0,
            n_voxels_info: 200,
            mask_shape: [20, 20, 20],
            voxel_size_mm: [2.0, 2.0, 2.0],
            seed: 0,
        }
    }
}

impl SubjectProfile {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_per_class < 2 {
            return bad(format!("n_per_class {} < 2", self.n_per_class));
        }
        for (name, v) in [("eeg_sep", self.eeg_sep), ("fmri_sep", self.fmri_sep)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.noise_sd.is_finite() && self.noise_sd > 0.0) {
            return bad(format!("noise_sd must be positive, got {}", self.noise_sd));
        }
        if self.latent_dim < N_CLASSES {
            return bad(format!("latent_dim {} < {N_CLASSES}", self.latent_dim));
        }
        if self.n_channels < 2 || self.n_samples < 16 || !(self.fs > 0.0) {
            return bad("need at least 2 channels, 16 samples and a positive rate".into());
        }
        if self.latent_dim > self.n_channels {
            return bad(format!(
                "latent_dim {} exceeds channel count {}",
                self.latent_dim, self.n_channels
            ));
        }
        let n_mask = ellipsoid_mask(self.mask_shape).iter().filter(|&&m| m).count();
        if self.n_voxels_info < self.latent_dim || self.n_voxels_info > n_mask {
            return bad(format!(
                "n_voxels_info {} must lie in [{}, {n_mask}]",
                self.n_voxels_info, self.latent_dim
            ));
        }
        Ok(())
    }

    /// A small profile for quick checks: 16 channels, 128 samples, 10³ mask.
    pub fn small(seed: u64) -> Self {
        Self {
            n_per_class: 12,
            n_channels: 16,
            n_samples: 128,
            fs: 128.0,
            n_voxels_info: 60,
            mask_shape: [10, 10, 10],
            seed,
            ..Self::default()
        }
    }
}

/// The three regimes: no class structure, structure in fMRI only, and
/// structure in both modalities.
pub fn regime_presets() -> BTreeMap<String, SubjectProfile> {
    let base = SubjectProfile::default();
    BTreeMap::from([
        ("none".to_string(), base.clone()),
        (
            "fmri_only".to_string(),
            SubjectProfile {
                fmri_sep: 4.0,
                ..base.clone()
            },
        ),
        (
            "both".to_string(),
            SubjectProfile {
                eeg_sep: 18.0,
                fmri_sep: 3.5,
                ..base
            },
        ),
    ])
}

pub fn preset(name: &str, seed: u64) -> Result<SubjectProfile> {
    let mut p = regime_presets().remove(name).ok_or_else(|| {
        Error::InvalidParameter(format!("unknown preset '{name}' (expected none, fmri_only or both)"))
    })?;
    p.seed = seed;
    Ok(p)
}

/// Ellipsoid filling the grid, radius 0.45 of each side.
pub fn ellipsoid_mask(shape: [usize; 3]) -> Array3<bool> {
    Array3::from_shape_fn((shape[0], shape[1], shape[2]), |(i, j, k)| {
        let r: f64 = [i, j, k]
            .iter()
            .zip(shape)
            .map(|(&v, n)| {
                let c = (n as f64 - 1.0) / 2.0;
                ((v as f64 - c) / (0.45 * n as f64)).powi(2)
            })
            .sum();
        r <= 1.0
    })
}

pub fn channel_names(n: usize) -> Vec<String> {
    if n == BIOSEMI64.len() {
        return BIOSEMI64.iter().map(|s| s.to_string()).collect();
    }
    // Frontal pair first so small montages still carry the EOG channels.
    let mut names: Vec<String> = ["Fp1", "Fp2"]
        .into_iter()
        .chain(BIOSEMI64.iter().copied().filter(|&c| c != "Fp1" && c != "Fp2"))
        .map(String::from)
        .collect();
    names.extend((names.len()..n).map(|i| format!("E{}", i + 1)));
    names.truncate(n);
    names
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `[rows, cols]` with orthonormal columns.
fn orthonormal_columns(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| normal(rng));
    let q = g.qr().q();
    Array2::from_shape_fn((rows, cols), |(i, j)| q[(i, j)])
}

/// Class means `[classes, latent_dim]`, pairwise `sep` apart.
fn class_means(latent_dim: usize, sep: f64, rng: &mut Rng) -> Array2<f64> {
    let q = orthonormal_columns(latent_dim, N_CLASSES, rng);
    q.t().mapv(|v| v * sep / std::f64::consts::SQRT_2)
}

fn balanced_labels(n_per_class: usize, rng: &mut Rng) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..N_CLASSES * n_per_class).map(|i| i % N_CLASSES).collect();
    labels.shuffle(rng);
    labels
}

/// Latent-to-sensor EEG map. Column `l` is a focal spatial pattern (disjoint
/// channel groups) times a windowed oscillation, so columns are orthonormal.
fn eeg_map(p: &SubjectProfile, rng: &mut Rng) -> Array3<f64> {
    let (c, t, l) = (p.n_channels, p.n_samples, p.latent_dim);
    let mut channels: Vec<usize> = (0..c).collect();
    channels.shuffle(rng);
    let group = c / l;
    let mut map = Array3::zeros((l, c, t));
    for k in 0..l {
        let chans = &channels[k * group..(k + 1) * group];
        let weights: Vec<f64> = chans.iter().map(|_| normal(rng)).collect();
        let wn = weights.iter().map(|w| w * w).sum::<f64>().sqrt();

        let duration = t as f64 / p.fs;
        let latency = duration * rng.random_range(0.15..0.85);
        let width = duration * rng.random_range(0.04..0.08);
        let freq = rng.random_range(3.0..12.0f64).min(p.fs / 8.0);
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let wave: Vec<f64> = (0..t)
            .map(|i| {
                let ts = i as f64 / p.fs;
                (-0.5 * ((ts - latency) / width).powi(2)).exp() * (std::f64::consts::TAU * freq * ts + phase).cos()
            })
            .collect();
        let vn = wave.iter().map(|w| w * w).sum::<f64>().sqrt();
        for (&ch, w) in chans.iter().zip(&weights) {
            for (i, v) in wave.iter().enumerate() {
                map[[k, ch, i]] = w / wn * v / vn;
            }
        }
    }
    map
}

/// 1/f-shaped noise: one white innovation through a bank of AR(1) filters
/// whose poles span the spectrum, scaled to unit variance.
struct PinkNoise {
    poles: [f64; 4],
    gains: [f64; 4],
    /// Cholesky factor of the stationary state covariance.
    chol: [[f64; 4]; 4],
    state: [f64; 4],
}

impl PinkNoise {
    fn new() -> Self {
        let poles = [0.99, 0.95, 0.8, 0.3];
        let raw = poles.map(|a: f64| (1.0 - a * a).sqrt());
        let cov = |g: &[f64; 4], i: usize, j: usize| g[i] * g[j] / (1.0 - poles[i] * poles[j]);
        let total: f64 = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .map(|(i, j)| cov(&raw, i, j))
            .sum();
        let gains = raw.map(|g| g / total.sqrt());
        let mut chol = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..=i {
                let dot: f64 = (0..j).map(|k| chol[i][k] * chol[j][k]).sum();
                let c = cov(&gains, i, j) - dot;
                chol[i][j] = if i == j { c.sqrt() } else { c / chol[j][j] };
            }
        }
        Self {
            poles,
            gains,
            chol,
            state: [0.0; 4],
        }
    }

    /// Draws the state from the stationary distribution.
    fn reset(&mut self, rng: &mut Rng) {
        let z: [f64; 4] = std::array::from_fn(|_| normal(rng));
        for i in 0..4 {
            self.state[i] = (0..=i).map(|k| self.chol[i][k] * z[k]).sum();
        }
    }

    fn next(&mut self, e: f64) -> f64 {
        let mut out = 0.0;
        for ((s, a), g) in self.state.iter_mut().zip(&self.poles).zip(&self.gains) {
            *s = a * *s + g * e;
            out += *s;
        }
        out
    }
}

fn background(rows: usize, len: usize, sd: f64, rng: &mut Rng) -> Array2<f64> {
    let mut out = Array2::zeros((rows, len));
    let mut pink = PinkNoise::new();
    for mut row in out.outer_iter_mut() {
        pink.reset(rng);
        for v in row.iter_mut() {
            let e = normal(rng);
            let w = normal(rng);
            *v = sd * (pink.next(e) + w);
        }
    }
    out
}

pub fn generate_subject(p: &SubjectProfile) -> Result<BimodalSubject> {
    p.validate()?;
    let seed = p.seed;
    let labels = balanced_labels(p.n_per_class, &mut stream(seed, tag("labels")));
    let n = labels.len();

    let eeg_means = class_means(p.latent_dim, p.eeg_sep, &mut stream(seed, tag("eeg-means")));
    let map = eeg_map(p, &mut stream(seed, tag("eeg-map")));
    let (c, t) = (p.n_channels, p.n_samples);
    let mut eeg = Array3::<f32>::zeros((n, c, t));
    for (i, &y) in labels.iter().enumerate() {
        let mut rng = stream(seed, tag("eeg-trial") ^ i as u64);
        let mut trial = background(c, t, p.noise_sd, &mut rng);
        for (k, &z) in eeg_means.row(y).iter().enumerate() {
            if z != 0.0 {
                trial.scaled_add(z, &map.index_axis(Axis(0), k));
            }
        }
        eeg.index_axis_mut(Axis(0), i).assign(&trial.mapv(|v| v as f32));
    }

    let mask = ellipsoid_mask(p.mask_shape);
    let n_vox = mask.iter().filter(|&&m| m).count();
    let fmri_means = class_means(p.latent_dim, p.fmri_sep, &mut stream(seed, tag("fmri-means")));
    let mut rng = stream(seed, tag("fmri-map"));
    let informative = informative_voxels(&mask, p.n_voxels_info, &mut rng);
    let vmap = orthonormal_columns(p.n_voxels_info, p.latent_dim, &mut rng);
    // [classes, informative voxels]
    let patterns = fmri_means.dot(&vmap.t());
    let mut fmri = Array2::<f32>::zeros((n, n_vox));
    for (i, &y) in labels.iter().enumerate() {
        let mut rng = stream(seed, tag("fmri-trial") ^ i as u64);
        let mut row = fmri.row_mut(i);
        for v in row.iter_mut() {
            *v = (p.noise_sd * normal(&mut rng)) as f32;
        }
        for (&vox, &a) in informative.iter().zip(patterns.row(y)) {
            row[vox] += a as f32;
        }
    }

    let eeg = EEGTrialSet::new(eeg, labels.clone(), p.fs, channel_names(c))?;
    let fmri = FMRIBetaSet::new(fmri, labels, mask, p.voxel_size_mm)?;
    Ok(BimodalSubject {
        subject_id: format!("synth-{seed}"),
        eeg,
        fmri,
        vocab: LabelVocab::ispeech(),
        seed,
    })
}

/// Column indices (in mask order) of the `n` in-mask voxels nearest a
/// seeded centre: a compact informative blob.
fn informative_voxels(mask: &Array3<bool>, n: usize, rng: &mut Rng) -> Vec<usize> {
    let coords: Vec<[f64; 3]> = mask
        .indexed_iter()
        .filter(|(_, &m)| m)
        .map(|((i, j, k), _)| [i as f64, j as f64, k as f64])
        .collect();
    let centre = coords[rng.random_range(0..coords.len())];
    let mut order: Vec<(f64, usize)> = coords
        .iter()
        .enumerate()
        .map(|(idx, c)| {
            let d: f64 = c.iter().zip(&centre).map(|(a, b)| (a - b).powi(2)).sum();
            (d, idx)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut picked: Vec<usize> = order.into_iter().take(n).map(|(_, i)| i).collect();
    picked.sort_unstable();
    picked
}

/// Trial timing of the continuous EEG record, in seconds.
pub const FIXATION_S: f64 = 1.0;
pub const REST_S: f64 = 1.0;

/// Continuous record containing the subject's epochs plus what a real
/// recording would add: a common reference signal picked up by the mastoids
/// M1/M2, line noise at 50 Hz and harmonics, slow drift, and blinks mixed
/// into the frontal channels. Running the EEG chain on it should give back
/// epochs close to `subject.eeg`.
pub fn generate_raw_eeg(p: &SubjectProfile, subject: &BimodalSubject) -> Result<ContinuousEEG> {
    let eeg = &subject.eeg;
    let (n, c, t) = eeg.data.dim();
    let fs = eeg.fs;
    let fix = (FIXATION_S * fs).round() as usize;
    let rest = (REST_S * fs).round() as usize;
    let period = fix + t + rest;
    let total = n * period;
    let mut rng = stream(p.seed, tag("raw-eeg"));

    let signal_sd = {
        let (s, s2) = eeg
            .data
            .iter()
            .fold((0.0, 0.0), |(a, b), &v| (a + v as f64, b + (v as f64).powi(2)));
        let m = s / eeg.data.len() as f64;
        (s2 / eeg.data.len() as f64 - m * m).sqrt()
    };

    // Neural activity: background between trials, the clean epochs inside.
    let mut data = Array2::zeros((c + 2, total));
    data.slice_mut(s![..c, ..])
        .assign(&background(c, total, p.noise_sd, &mut rng));
    let mut events = Vec::with_capacity(n);
    for i in 0..n {
        let onset = i * period + fix;
        data.slice_mut(s![..c, onset..onset + t])
            .assign(&eeg.data.index_axis(Axis(0), i).mapv(|v| v as f64));
        events.push((onset, eeg.labels[i]));
    }
    let mastoid = background(2, total, 0.1 * p.noise_sd, &mut rng);
    data.slice_mut(s![c.., ..]).assign(&mastoid);

    // Common reference signal, removed by re-referencing.
    let common = background(1, total, 2.0 * signal_sd, &mut rng);
    data += &common;

    let mut names = eeg.channel_names.clone();
    names.push("M1".into());
    names.push("M2".into());

    // Blinks: brief large bumps every few seconds.
    let mut blink = vec![0.0; total];
    let width = 0.06 * fs;
    let mut at = rng.random_range(0.5..3.0) * fs;
    while (at as usize) < total {
        let amp = 8.0 * signal_sd * rng.random_range(0.7..1.3);
        let lo = (at - 5.0 * width).max(0.0) as usize;
        let hi = ((at + 5.0 * width) as usize).min(total);
        for (k, b) in blink.iter_mut().enumerate().take(hi).skip(lo) {
            *b += amp * (-0.5 * ((k as f64 - at) / width).powi(2)).exp();
        }
        at += rng.random_range(2.0..5.0) * fs;
    }

    let nyquist = fs / 2.0;
    let line_amp = 5.0 * signal_sd;
    for (ch, name) in names.iter().enumerate() {
        let eog_gain = match name.as_str() {
            "Fp1" | "Fp2" => 1.0,
            "Fpz" | "AF7" | "AF3" | "AFz" | "AF4" | "AF8" => 0.4,
            n if n.starts_with('F') => 0.15,
            _ => 0.02,
        };
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let gain = rng.random_range(0.5..1.5);
        let drift: Vec<(f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    rng.random_range(0.02..0.3),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    3.0 * signal_sd * normal(&mut rng),
                )
            })
            .collect();
        let mut row = data.row_mut(ch);
        for (k, v) in row.iter_mut().enumerate() {
            let ts = k as f64 / fs;
            let mut h = 1.0;
            let mut line = 0.0;
            while 50.0 * h < nyquist {
                line += (std::f64::consts::TAU * 50.0 * h * ts + h * phase).sin() / (h * h);
                h += 1.0;
            }
            *v += gain * line_amp * line + eog_gain * blink[k];
            for &(f, ph, a) in &drift {
                *v += a * (std::f64::consts::TAU * f * ts + ph).sin();
            }
        }
    }
    ContinuousEEG::new(data, fs, names, events)
}

pub const BOLD_TR_S: f64 = 2.16;
pub const BOLD_TASK_S: f64 = 4.0;
pub const BOLD_REST_S: f64 = 10.0;
const BOLD_LEAD_S: f64 = 10.0;
const BOLD_BASELINE: f64 = 100.0;

/// BOLD run whose single-trial responses are the subject's beta maps.
/// Adds a baseline, a motion-correlated nuisance and white noise of
/// `noise_sd`; with `noise_sd = 0` the GLM recovers the betas exactly.
pub fn generate_bold_run(p: &SubjectProfile, subject: &BimodalSubject, noise_sd: f64) -> Result<BoldRun> {
    if !(noise_sd >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise_sd {noise_sd}")));
    }
    let fmri = &subject.fmri;
    let n = fmri.data.nrows();
    let events: Vec<TrialEvent> = (0..n)
        .map(|i| TrialEvent {
            onset_s: BOLD_LEAD_S + i as f64 * (BOLD_TASK_S + BOLD_REST_S),
            duration_s: BOLD_TASK_S,
            class: fmri.labels[i],
        })
        .collect();
    let run_len = BOLD_LEAD_S + n as f64 * (BOLD_TASK_S + BOLD_REST_S) + 20.0;
    let n_scans = (run_len / BOLD_TR_S).ceil() as usize;

    let mut rng = stream(p.seed, tag("bold"));
    let mut motion = Array2::zeros((n_scans, 6));
    for j in 0..6 {
        let mut acc = 0.0;
        for i in 0..n_scans {
            acc = 0.95 * acc + 0.02 * normal(&mut rng);
            motion[[i, j]] = acc;
        }
    }
    let design = build_design(&events, n_scans, BOLD_TR_S, None)?;
    let trial_cols = design.matrix.slice(s![.., ..n]);

    let (nx, ny, nz) = fmri.mask.dim();
    let n_vox = nx * ny * nz;
    // [trials, voxels] in grid order
    let mut betas = Array2::zeros((n, n_vox));
    for (i, row) in fmri.data.outer_iter().enumerate() {
        let vol = unmask(row, &fmri.mask);
        betas
            .row_mut(i)
            .assign(&ndarray::ArrayView1::from(vol.as_slice().expect("standard")));
    }
    // [voxels, scans]
    let mut ts = betas.t().dot(&trial_cols.t());
    for mut v in ts.outer_iter_mut() {
        let motion_gain = normal(&mut rng);
        for (k, x) in v.iter_mut().enumerate() {
            *x += BOLD_BASELINE + motion_gain * motion[[k, 0]];
            if noise_sd > 0.0 {
                *x += noise_sd * normal(&mut rng);
            }
        }
    }
    let data = ts
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((nx, ny, nz, n_scans))
        .map_err(|e| Error::Shape(e.to_string()))?;
    BoldRun::new(data, BOLD_TR_S, events, motion)
}

/// Full-grid beta volumes `[trials, x, y, z]` of a subject.
pub fn beta_volumes(subject: &BimodalSubject) -> Array4<f64> {
    let (nx, ny, nz) = subject.fmri.mask.dim();
    let mut out = Array4::zeros((subject.fmri.data.nrows(), nx, ny, nz));
    for (i, row) in subject.fmri.data.outer_iter().enumerate() {
        out.index_axis_mut(Axis(0), i).assign(&unmask(row, &subject.fmri.mask));
    }
    out
}
