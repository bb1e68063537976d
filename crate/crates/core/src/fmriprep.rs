//! Single-trial GLM beta estimation with a canonical double-gamma HRF,
//! separable Gaussian smoothing, and mask flattening.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Array3, Array4, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataio::{FMRIBetaSet, N_CLASSES};
use crate::error::{Error, Result};
use crate::linalg::to_dmatrix;

/// One trial of a BOLD run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialEvent {
    pub onset_s: f64,
    pub duration_s: f64,
    pub class: usize,
}

/// 4-D BOLD data `[x, y, z, scans]` with trial timing and motion regressors.
#[derive(Debug, Clone, PartialEq)]
pub struct BoldRun {
    pub data: Array4<f64>,
    pub tr_s: f64,
    pub events: Vec<TrialEvent>,
    /// `[scans, 6]`; zero columns are ignored when building the design.
    pub motion: Array2<f64>,
}

impl BoldRun {
    pub fn new(data: Array4<f64>, tr_s: f64, events: Vec<TrialEvent>, motion: Array2<f64>) -> Result<Self> {
        if !(tr_s > 0.0) {
            return Err(Error::InvalidParameter(format!("TR {tr_s}")));
        }
        let n_scans = data.dim().3;
        if motion.nrows() != n_scans {
            return Err(Error::Shape(format!(
                "motion has {} rows for {n_scans} scans",
                motion.nrows()
            )));
        }
        let run_len = n_scans as f64 * tr_s;
        for e in &events {
            if e.onset_s < 0.0 || e.duration_s < 0.0 || e.onset_s + e.duration_s > run_len {
                return Err(Error::InvalidParameter(format!(
                    "event at {} s (+{} s) outside run of {run_len} s",
                    e.onset_s, e.duration_s
                )));
            }
            if e.class >= N_CLASSES {
                return Err(Error::LabelOutOfRange {
                    label: e.class as i64,
                    n_classes: N_CLASSES,
                });
            }
        }
        Ok(Self {
            data,
            tr_s,
            events,
            motion,
        })
    }

    pub fn n_scans(&self) -> usize {
        self.data.dim().3
    }
}

/// Canonical HRF shape. Delays are the modes of the two gamma densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrfParams {
    pub peak_s: f64,
    pub undershoot_s: f64,
    pub peak_dispersion: f64,
    pub undershoot_dispersion: f64,
    pub ratio: f64,
}

impl Default for HrfParams {
    fn default() -> Self {
        Self {
            peak_s: 6.0,
            undershoot_s: 16.0,
            peak_dispersion: 1.0,
            undershoot_dispersion: 1.0,
            ratio: 1.0 / 6.0,
        }
    }
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7, n = 9.
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + 7.5;
    for (i, &c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn gamma_pdf_by_mode(t: f64, mode: f64, dispersion: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let shape = mode / dispersion + 1.0;
    ((shape - 1.0) * t.ln() - t / dispersion - ln_gamma(shape) - shape * dispersion.ln()).exp()
}

/// Double-gamma kernel sampled at `0, dt, 2dt, …` below `duration_s`,
/// scaled to a peak of 1.
pub fn canonical_hrf(dt_s: f64, duration_s: f64) -> Result<Vec<f64>> {
    canonical_hrf_with(dt_s, duration_s, &HrfParams::default())
}

pub fn canonical_hrf_with(dt_s: f64, duration_s: f64, p: &HrfParams) -> Result<Vec<f64>> {
    if !(dt_s > 0.0) || !(duration_s > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "HRF sampling dt={dt_s}, duration={duration_s}"
        )));
    }
    let n = (duration_s / dt_s).ceil() as usize;
    let mut h: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 * dt_s;
            gamma_pdf_by_mode(t, p.peak_s, p.peak_dispersion)
                - p.ratio * gamma_pdf_by_mode(t, p.undershoot_s, p.undershoot_dispersion)
        })
        .collect();
    let peak = h.iter().cloned().fold(f64::MIN, f64::max);
    if peak > 0.0 {
        h.iter_mut().for_each(|v| *v /= peak);
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnRole {
    Trial(usize),
    Motion(usize),
    Intercept,
}

/// `[scans, trials + nuisance + 1]` least-squares-all design.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub matrix: Array2<f64>,
    pub column_roles: Vec<ColumnRole>,
}

impl DesignMatrix {
    pub fn n_trials(&self) -> usize {
        self.column_roles
            .iter()
            .filter(|r| matches!(r, ColumnRole::Trial(_)))
            .count()
    }
}

/// Oversampling of the scan grid used for convolution.
const MICROTIME: usize = 16;

/// One HRF-convolved boxcar column per trial, then any motion columns, then
/// the intercept. Fails on rank deficiency, naming the dependent columns.
pub fn build_design(
    events: &[TrialEvent],
    n_scans: usize,
    tr_s: f64,
    motion: Option<ArrayView2<'_, f64>>,
) -> Result<DesignMatrix> {
    if events.is_empty() {
        return Err(Error::EmptyExemplars);
    }
    if !(tr_s > 0.0) || n_scans == 0 {
        return Err(Error::InvalidParameter(format!("{n_scans} scans at TR {tr_s}")));
    }
    let dt = tr_s / MICROTIME as f64;
    let hrf = canonical_hrf(dt, 32.0)?;
    let n_fine = n_scans * MICROTIME;
    let n_motion = motion.map_or(0, |m| m.ncols());
    if let Some(m) = motion {
        if m.nrows() != n_scans {
            return Err(Error::Shape(format!(
                "motion has {} rows for {n_scans} scans",
                m.nrows()
            )));
        }
    }
    let n_cols = events.len() + n_motion + 1;
    let mut x = Array2::zeros((n_scans, n_cols));
    let mut roles = Vec::with_capacity(n_cols);

    for (j, e) in events.iter().enumerate() {
        // Stimulus on the fine grid; a zero duration is a unit impulse.
        let first = (e.onset_s / dt).round() as usize;
        let (len, weight) = if e.duration_s > 0.0 {
            (((e.duration_s / dt).round() as usize).max(1), dt)
        } else {
            (1, 1.0)
        };
        let mut fine = vec![0.0; n_fine.saturating_sub(first).min(len + hrf.len())];
        for k in 0..len {
            for (l, &h) in hrf.iter().enumerate() {
                if let Some(slot) = fine.get_mut(k + l) {
                    *slot += weight * h;
                }
            }
        }
        for scan in 0..n_scans {
            let f = scan * MICROTIME;
            if f >= first && f - first < fine.len() {
                x[[scan, j]] = fine[f - first];
            }
        }
        roles.push(ColumnRole::Trial(j));
    }
    if let Some(m) = motion {
        for c in 0..n_motion {
            x.column_mut(events.len() + c).assign(&m.column(c));
            roles.push(ColumnRole::Motion(c));
        }
    }
    x.column_mut(n_cols - 1).fill(1.0);
    roles.push(ColumnRole::Intercept);

    let design = DesignMatrix {
        matrix: x,
        column_roles: roles,
    };
    OlsSolver::new(&design)?;
    Ok(design)
}

/// Precomputed `R⁻¹ Qᵀ` for repeated least-squares fits against one design.
#[derive(Debug, Clone)]
pub struct OlsSolver {
    pinv: Array2<f64>,
}

impl OlsSolver {
    pub fn new(design: &DesignMatrix) -> Result<Self> {
        let (n, p) = design.matrix.dim();
        if n < p {
            return Err(Error::RankDeficient {
                columns: (n..p).collect(),
            });
        }
        // Scale columns to unit norm so the rank test is relative.
        let norms: Vec<f64> = design.matrix.axis_iter(Axis(1)).map(|c| c.dot(&c).sqrt()).collect();
        let zero: Vec<usize> = (0..p).filter(|&j| norms[j] == 0.0).collect();
        if !zero.is_empty() {
            return Err(Error::RankDeficient { columns: zero });
        }
        let mut a = to_dmatrix(design.matrix.view());
        for (j, &norm) in norms.iter().enumerate() {
            a.column_mut(j).unscale_mut(norm);
        }
        let qr = a.qr();
        let r = qr.r();
        let dependent: Vec<usize> = (0..p).filter(|&j| r[(j, j)].abs() < 1e-9).collect();
        if !dependent.is_empty() {
            return Err(Error::RankDeficient { columns: dependent });
        }
        let qt = qr.q().transpose();
        let sol: DMatrix<f64> = r
            .solve_upper_triangular(&qt)
            .ok_or_else(|| Error::RankDeficient { columns: vec![] })?;
        let pinv = Array2::from_shape_fn((p, n), |(i, j)| sol[(i, j)] / norms[i]);
        Ok(Self { pinv })
    }

    /// Least-squares coefficients for one response vector.
    pub fn coefficients(&self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        self.pinv.dot(&y)
    }
}

/// Trial beta volumes `[trials, x, y, z]` before masking.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaVolumes {
    pub volumes: Array4<f64>,
    pub labels: Vec<usize>,
}

/// Ordinary least squares per voxel over the single-trial design; nuisance
/// and intercept betas are discarded.
pub fn estimate_betas(run: &BoldRun) -> Result<BetaVolumes> {
    let n_scans = run.n_scans();
    let active: Vec<usize> = (0..run.motion.ncols())
        .filter(|&c| run.motion.column(c).iter().any(|&v| v != 0.0))
        .collect();
    let motion = (!active.is_empty()).then(|| run.motion.select(Axis(1), &active));
    let design = build_design(&run.events, n_scans, run.tr_s, motion.as_ref().map(|m| m.view()))?;
    let solver = OlsSolver::new(&design)?;
    let n_trials = design.n_trials();

    let (nx, ny, nz, _) = run.data.dim();
    let flat = run
        .data
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((nx * ny * nz, n_scans))
        .expect("standard layout");
    let bad = flat
        .outer_iter()
        .filter(|row| row.iter().any(|v| !v.is_finite()))
        .count();
    if bad > 0 {
        return Err(Error::NonFinite(format!("{bad} voxels contain NaN/Inf")));
    }
    let trial_rows = solver.pinv.slice(ndarray::s![..n_trials, ..]);
    // [trials, voxels] = [trials, scans] x [scans, voxels]
    let betas = trial_rows.dot(&flat.t());
    let volumes = betas.into_shape_with_order((n_trials, nx, ny, nz)).expect("shape");
    Ok(BetaVolumes {
        volumes,
        labels: run.events.iter().map(|e| e.class).collect(),
    })
}

/// FWHM in millimetres to a Gaussian sigma in voxels.
pub fn fwhm_to_sigma(fwhm_mm: f64, voxel_mm: f64) -> f64 {
    fwhm_mm / voxel_mm / (2.0 * (2.0 * std::f64::consts::LN_2).sqrt())
}

fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m >= n {
        period as usize - 1 - m
    } else {
        m
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (4.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian smoothing with reflective boundaries.
pub fn smooth_volume(vol: &Array3<f64>, fwhm_mm: f64, voxel_size_mm: [f64; 3]) -> Result<Array3<f64>> {
    if !(fwhm_mm >= 0.0) {
        return Err(Error::InvalidParameter(format!("FWHM {fwhm_mm}")));
    }
    let mut out = vol.clone();
    if fwhm_mm == 0.0 {
        return Ok(out);
    }
    for (axis, &size) in voxel_size_mm.iter().enumerate() {
        let sigma = fwhm_to_sigma(fwhm_mm, size);
        let kernel = gaussian_kernel(sigma);
        let radius = (kernel.len() / 2) as isize;
        let n = out.len_of(Axis(axis));
        let mut buf = vec![0.0; n];
        for mut lane in out.lanes_mut(Axis(axis)) {
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, w)| w * lane[reflect(i as isize + k as isize - radius, n)])
                    .sum();
            }
            for (dst, &v) in lane.iter_mut().zip(&buf) {
                *dst = v;
            }
        }
    }
    Ok(out)
}

/// Flattens trial volumes through the mask: rows are trials, columns the
/// in-mask voxels in C-order.
pub fn apply_mask(
    volumes: &Array4<f64>,
    labels: Vec<usize>,
    mask: &Array3<bool>,
    voxel_size_mm: [f64; 3],
) -> Result<FMRIBetaSet> {
    let (n, x, y, z) = volumes.dim();
    if (x, y, z) != mask.dim() {
        return Err(Error::Shape(format!(
            "volumes {:?} vs mask {:?}",
            (x, y, z),
            mask.dim()
        )));
    }
    let idx: Vec<usize> = mask.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect();
    if idx.is_empty() {
        return Err(Error::InvalidParameter("empty mask".into()));
    }
    let flat = volumes
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((n, x * y * z))
        .expect("standard layout");
    let data = Array2::from_shape_fn((n, idx.len()), |(r, c)| flat[[r, idx[c]]] as f32);
    FMRIBetaSet::new(data, labels, mask.clone(), voxel_size_mm)
}

/// Inverse of the mask flattening for one row; voxels outside the mask are 0.
pub fn unmask(row: ArrayView1<'_, f32>, mask: &Array3<bool>) -> Array3<f64> {
    let mut out = Array3::zeros(mask.dim());
    let mut values = row.iter();
    for (dst, &m) in out.iter_mut().zip(mask.iter()) {
        if m {
            *dst = *values.next().expect("row length matches mask") as f64;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmriPrepConfig {
    pub fwhm_mm: f64,
    pub voxel_size_mm: [f64; 3],
}

impl Default for FmriPrepConfig {
    fn default() -> Self {
        Self {
            fwhm_mm: 8.0,
            voxel_size_mm: [2.0, 2.0, 2.0],
        }
    }
}

/// GLM betas, smoothed per trial, flattened through `mask`.
pub fn preprocess(run: &BoldRun, mask: &Array3<bool>, cfg: &FmriPrepConfig) -> Result<FMRIBetaSet> {
    let BetaVolumes { mut volumes, labels } = estimate_betas(run)?;
    for mut vol in volumes.outer_iter_mut() {
        let smoothed = smooth_volume(&vol.to_owned(), cfg.fwhm_mm, cfg.voxel_size_mm)?;
        vol.assign(&smoothed);
    }
    apply_mask(&volumes, labels, mask, cfg.voxel_size_mm)
}
