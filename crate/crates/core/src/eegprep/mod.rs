//! EEG cleaning chain: mastoid re-reference, zero-phase high-pass, notch
//! bank at the line frequency and its harmonics, ICA-based EOG removal with
//! weights fitted on a sanitized copy, and epoching.

pub mod filter;
mod ica;

use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::dataio::{EEGTrialSet, N_CLASSES};
use crate::error::{Error, Result};

pub use ica::{fit_ica, fit_ica_with, remove_eog, ICADecomposition, IcaOptions};

/// Processing steps recorded on a record, in application order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Step {
    Rereference,
    Highpass,
    Notch,
    RemoveEog,
    Epoch,
}

/// Continuous multichannel EEG, `data` is `[channels, samples]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousEEG {
    pub data: Array2<f64>,
    pub fs: f64,
    pub channel_names: Vec<String>,
    /// `(sample_index, class_index)` of each trial onset.
    pub events: Vec<(usize, usize)>,
    pub provenance: Vec<Step>,
}

impl ContinuousEEG {
    pub fn new(data: Array2<f64>, fs: f64, channel_names: Vec<String>, events: Vec<(usize, usize)>) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::InvalidParameter(format!("sampling rate {fs}")));
        }
        if channel_names.len() != data.nrows() {
            return Err(Error::Shape(format!(
                "{} channel names for {} rows",
                channel_names.len(),
                data.nrows()
            )));
        }
        if let Some(&(s, _)) = events.iter().find(|&&(s, _)| s >= data.ncols()) {
            return Err(Error::OutOfBounds {
                start: s as i64,
                end: s as i64 + 1,
                len: data.ncols(),
            });
        }
        if let Some(&(_, c)) = events.iter().find(|&&(_, c)| c >= N_CLASSES) {
            return Err(Error::LabelOutOfRange {
                label: c as i64,
                n_classes: N_CLASSES,
            });
        }
        Ok(Self {
            data,
            fs,
            channel_names,
            events,
            provenance: Vec::new(),
        })
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    fn channel_index(&self, name: &str) -> Result<usize> {
        self.channel_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    fn map_rows(&self, step: Step, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut out = self.clone();
        for mut row in out.data.outer_iter_mut() {
            let filtered = f(row.as_slice().expect("standard layout"));
            row.assign(&ndarray::ArrayView1::from(&filtered));
        }
        out.provenance.push(step);
        out
    }

    /// Removes the named channels.
    pub fn drop_channels(&self, names: &[String]) -> Result<Self> {
        let drop: Vec<usize> = names.iter().map(|n| self.channel_index(n)).collect::<Result<_>>()?;
        let keep: Vec<usize> = (0..self.n_channels()).filter(|i| !drop.contains(i)).collect();
        let mut out = self.clone();
        out.data = self.data.select(Axis(0), &keep);
        out.channel_names = keep.iter().map(|&i| self.channel_names[i].clone()).collect();
        Ok(out)
    }
}

/// Subtracts the mean of `ref_channels` from every channel, references
/// included.
pub fn rereference(x: &ContinuousEEG, ref_channels: &[String]) -> Result<ContinuousEEG> {
    if ref_channels.is_empty() {
        return Err(Error::InvalidParameter("no reference channels".into()));
    }
    let idx: Vec<usize> = ref_channels.iter().map(|n| x.channel_index(n)).collect::<Result<_>>()?;
    let reference = x.data.select(Axis(0), &idx).mean_axis(Axis(0)).expect("non-empty");
    let mut out = x.clone();
    out.data -= &reference.insert_axis(Axis(0));
    out.provenance.push(Step::Rereference);
    Ok(out)
}

/// Zero-phase 4th-order Butterworth high-pass.
pub fn highpass(x: &ContinuousEEG, cutoff_hz: f64) -> Result<ContinuousEEG> {
    let sos = filter::butter_highpass(4, cutoff_hz, x.fs)?;
    Ok(x.map_rows(Step::Highpass, |row| sos.filtfilt(row)))
}

pub const NOTCH_Q: f64 = 30.0;

/// Zero-phase notches (Q = 30) at every multiple of `base_hz` below Nyquist.
pub fn notch_bank(x: &ContinuousEEG, base_hz: f64) -> Result<ContinuousEEG> {
    let mut sos = filter::Sos::default();
    for f in filter::harmonics_below_nyquist(base_hz, x.fs)? {
        sos.sections.push(filter::iir_notch(f, NOTCH_Q, x.fs)?);
    }
    Ok(x.map_rows(Step::Notch, |row| sos.filtfilt(row)))
}

/// Cuts `[tmin, tmax)` seconds around every event.
pub fn epoch(x: &ContinuousEEG, tmin_s: f64, tmax_s: f64) -> Result<EEGTrialSet> {
    if !(tmax_s > tmin_s) {
        return Err(Error::InvalidParameter(format!(
            "empty epoch window [{tmin_s}, {tmax_s})"
        )));
    }
    if x.events.is_empty() {
        return Err(Error::EmptyExemplars);
    }
    let offset = (tmin_s * x.fs).round() as i64;
    let len = ((tmax_s - tmin_s) * x.fs).round() as usize;
    let n_total = x.n_samples();
    let mut data = Array3::zeros((x.events.len(), x.n_channels(), len));
    for (trial, &(onset, _)) in x.events.iter().enumerate() {
        let start = onset as i64 + offset;
        let end = start + len as i64;
        if start < 0 || end > n_total as i64 {
            return Err(Error::OutOfBounds {
                start,
                end,
                len: n_total,
            });
        }
        let window = x.data.slice(ndarray::s![.., start as usize..end as usize]);
        data.index_axis_mut(Axis(0), trial).assign(&window.mapv(|v| v as f32));
    }
    let labels = x.events.iter().map(|&(_, c)| c).collect();
    EEGTrialSet::new(data, labels, x.fs, x.channel_names.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EegPrepConfig {
    pub ref_channels: Vec<String>,
    /// Drop the reference channels once they have been used.
    pub drop_refs: bool,
    pub highpass_hz: f64,
    pub notch_hz: f64,
    pub n_remove: usize,
    pub tmin_s: f64,
    pub tmax_s: f64,
    pub ica: IcaOptions,
}

impl Default for EegPrepConfig {
    fn default() -> Self {
        Self {
            ref_channels: vec!["M1".into(), "M2".into()],
            drop_refs: true,
            highpass_hz: 1.0,
            notch_hz: 50.0,
            n_remove: 1,
            tmin_s: 0.0,
            tmax_s: 2.0,
            // Near-Gaussian background components have no FastICA fixed
            // point, so only the leading whitened components are unmixed.
            ica: IcaOptions {
                n_components: Some(4),
                ..IcaOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EegPrepReport {
    /// Steps applied to the record the epochs were cut from.
    pub provenance: Vec<Step>,
    pub ica: ICADecomposition,
    pub removed: Vec<usize>,
}

/// Order of steps the cleaned record must carry.
pub const CLEAN_ORDER: [Step; 4] = [Step::Rereference, Step::RemoveEog, Step::Highpass, Step::Notch];
/// Order of steps on the sanitized copy the ICA is fitted on.
pub const SANITIZED_ORDER: [Step; 3] = [Step::Rereference, Step::Highpass, Step::Notch];

/// Checks that the cleaned record and the ICA fit followed the two-pass
/// order: weights come from a filtered copy and are applied to the merely
/// re-referenced record, which is filtered afterwards.
pub fn check_pipeline_order(cleaned: &[Step], ica_fitted_on: &[Step]) -> Result<()> {
    if ica_fitted_on != SANITIZED_ORDER {
        return Err(Error::InvalidParameter(format!(
            "ICA fitted on {ica_fitted_on:?}, expected {SANITIZED_ORDER:?}"
        )));
    }
    let core: Vec<Step> = cleaned.iter().copied().filter(|&s| s != Step::Epoch).collect();
    if core != CLEAN_ORDER {
        return Err(Error::InvalidParameter(format!(
            "cleaned record has steps {cleaned:?}, expected {CLEAN_ORDER:?}"
        )));
    }
    Ok(())
}

/// Runs the full chain on a raw record and returns epochs plus provenance.
pub fn preprocess(raw: &ContinuousEEG, cfg: &EegPrepConfig) -> Result<(EEGTrialSet, EegPrepReport)> {
    let mut referenced = rereference(raw, &cfg.ref_channels)?;
    if cfg.drop_refs {
        referenced = referenced.drop_channels(&cfg.ref_channels)?;
    }
    let sanitized = notch_bank(&highpass(&referenced, cfg.highpass_hz)?, cfg.notch_hz)?;
    let ica = fit_ica_with(&sanitized, &cfg.ica)?;
    drop(sanitized);
    let cleaned = remove_eog(&referenced, &ica, cfg.n_remove)?;
    drop(referenced);
    let cleaned = notch_bank(&highpass(&cleaned, cfg.highpass_hz)?, cfg.notch_hz)?;
    check_pipeline_order(&cleaned.provenance, &ica.fitted_on)?;
    let trials = epoch(&cleaned, cfg.tmin_s, cfg.tmax_s)?;
    let mut provenance = cleaned.provenance.clone();
    provenance.push(Step::Epoch);
    let removed = ica.ranking().into_iter().take(cfg.n_remove).collect();
    Ok((
        trials,
        EegPrepReport {
            provenance,
            ica,
            removed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::Rng;
    use std::f64::consts::PI;

    fn record(rows: Vec<Vec<f64>>, fs: f64) -> ContinuousEEG {
        let names = (0..rows.len()).map(|i| format!("c{}", i + 1)).collect();
        let t = rows[0].len();
        let data = Array::from_shape_fn((rows.len(), t), |(i, j)| rows[i][j]);
        ContinuousEEG::new(data, fs, names, vec![]).unwrap()
    }

    fn tone(freq: f64, fs: f64, secs: f64) -> Vec<f64> {
        (0..(fs * secs) as usize)
            .map(|i| (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    /// RMS over the record with one second trimmed at each edge.
    fn trimmed_rms(x: &[f64], fs: f64) -> f64 {
        let k = fs as usize;
        let core = &x[k..x.len() - k];
        (core.iter().map(|v| v * v).sum::<f64>() / core.len() as f64).sqrt()
    }

    fn db(out: &[f64], inp: &[f64], fs: f64) -> f64 {
        20.0 * (trimmed_rms(out, fs) / trimmed_rms(inp, fs)).log10()
    }

    #[test]
    fn rereference_both_channels_sums_to_zero() {
        let x = record(vec![vec![1.0, 2.0, -3.0], vec![4.0, 0.5, 9.0]], 512.0);
        let y = rereference(&x, &["c1".into(), "c2".into()]).unwrap();
        for t in 0..3 {
            assert!((y.data[[0, t]] + y.data[[1, t]]).abs() < 1e-12);
        }
    }

    #[test]
    fn rereference_zero_channel_is_noop() {
        let x = record(vec![vec![1.0, 2.0, 3.0], vec![0.0, 0.0, 0.0]], 512.0);
        let y = rereference(&x, &["c2".into()]).unwrap();
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn rereference_matches_loop_oracle() {
        let mut rng = crate::rng::stream(5, 0);
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..100).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let x = record(rows.clone(), 512.0);
        let y = rereference(&x, &["c3".into(), "c4".into()]).unwrap();
        for (ch, row) in rows.iter().enumerate() {
            for (t, v) in row.iter().enumerate() {
                let expected = v - (rows[2][t] + rows[3][t]) / 2.0;
                assert!((y.data[[ch, t]] - expected).abs() < 1e-14);
            }
        }
        assert!(matches!(rereference(&x, &["Cz".into()]), Err(Error::UnknownChannel(_))));
    }

    #[test]
    fn highpass_removes_dc() {
        let fs = 512.0;
        let x = record(vec![vec![2.5; 4096]], fs);
        let y = highpass(&x, 1.0).unwrap();
        let k = fs as usize;
        let peak = y
            .data
            .row(0)
            .slice(ndarray::s![k..4096 - k])
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(peak < 1e-3 * 2.5);
    }

    #[test]
    fn highpass_attenuation_and_passband() {
        let fs = 512.0;
        let slow = tone(0.1, fs, 40.0);
        let y = highpass(&record(vec![slow.clone()], fs), 1.0).unwrap();
        assert!(db(y.data.row(0).as_slice().unwrap(), &slow, fs) <= -20.0);
        let fast = tone(20.0, fs, 10.0);
        let y = highpass(&record(vec![fast.clone()], fs), 1.0).unwrap();
        assert!(db(y.data.row(0).as_slice().unwrap(), &fast, fs).abs() <= 1.0);
    }

    #[test]
    fn highpass_rejects_bad_cutoff() {
        let x = record(vec![vec![0.0; 16]], 512.0);
        assert!(highpass(&x, 0.0).is_err());
        assert!(highpass(&x, 256.0).is_err());
    }

    #[test]
    fn notch_attenuates_line_and_passes_30hz() {
        let fs = 512.0;
        for f in [50.0, 100.0, 250.0] {
            let line = tone(f, fs, 10.0);
            let y = notch_bank(&record(vec![line.clone()], fs), 50.0).unwrap();
            assert!(db(y.data.row(0).as_slice().unwrap(), &line, fs) <= -20.0, "{f} Hz");
        }
        let keep = tone(30.0, fs, 10.0);
        let y = notch_bank(&record(vec![keep.clone()], fs), 50.0).unwrap();
        assert!(db(y.data.row(0).as_slice().unwrap(), &keep, fs).abs() <= 1.0);
    }

    #[test]
    fn filters_are_linear() {
        let mut rng = crate::rng::stream(9, 0);
        let a: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..3000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 2.0 * x - 0.7 * y).collect();
        let fa = highpass(&record(vec![a], 512.0), 1.0).unwrap();
        let fb = highpass(&record(vec![b], 512.0), 1.0).unwrap();
        let fm = notch_bank(&highpass(&record(vec![mix], 512.0), 1.0).unwrap(), 50.0).unwrap();
        let fa = notch_bank(&fa, 50.0).unwrap();
        let fb = notch_bank(&fb, 50.0).unwrap();
        let scale = fm.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for t in 0..3000 {
            let lin = 2.0 * fa.data[[0, t]] - 0.7 * fb.data[[0, t]];
            assert!((fm.data[[0, t]] - lin).abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn epoch_window_and_bounds() {
        let fs = 512.0;
        let mut x = record(vec![vec![0.0; 5000], vec![1.0; 5000]], fs);
        x.events = vec![(100, 3), (2000, 5)];
        let trials = epoch(&x, 0.0, 2.0).unwrap();
        assert_eq!(trials.data.dim(), (2, 2, 1024));
        assert_eq!(trials.labels, vec![3, 5]);
        x.events = vec![(0, 1)];
        assert!(matches!(epoch(&x, -0.5, 2.0), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn pipeline_order_check() {
        assert!(check_pipeline_order(
            &[
                Step::Rereference,
                Step::RemoveEog,
                Step::Highpass,
                Step::Notch,
                Step::Epoch
            ],
            &SANITIZED_ORDER
        )
        .is_ok());
        // Weights applied to an already filtered copy would double-filter.
        assert!(check_pipeline_order(
            &[
                Step::Rereference,
                Step::Highpass,
                Step::Notch,
                Step::RemoveEog,
                Step::Highpass,
                Step::Notch
            ],
            &SANITIZED_ORDER
        )
        .is_err());
        assert!(check_pipeline_order(&CLEAN_ORDER, &[Step::Rereference]).is_err());
    }
}
