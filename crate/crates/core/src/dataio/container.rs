//! Directory container: `manifest.json` plus raw little-endian tensors.
//!
//! Float tensors are `f32`, label vectors `i32`, all C-order. Every file is
//! covered by a SHA-256 checksum in the manifest. Raw continuous EEG and BOLD
//! runs are optional extra sections used by the preprocessing commands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BimodalSubject, EEGTrialSet, FMRIBetaSet, LabelVocab};
use crate::eegprep::ContinuousEEG;
use crate::error::{Error, Result};
use crate::fmriprep::{BoldRun, TrialEvent};

pub const MANIFEST_NAME: &str = "manifest.json";
const FORMAT: &str = "neurofuse-container";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    subject_id: String,
    seed: u64,
    vocab: VocabEntry,
    eeg: EegEntry,
    fmri: FmriEntry,
    labels: LabelsEntry,
    checksums: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw_eeg: Option<RawEegEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bold: Option<BoldEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabEntry {
    words: Vec<String>,
    categories: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EegEntry {
    file: String,
    shape: [usize; 3],
    fs_hz: f64,
    channel_names: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FmriEntry {
    file: String,
    shape: [usize; 2],
    mask_file: String,
    mask_shape: [usize; 3],
    voxel_size_mm: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LabelsEntry {
    eeg_file: String,
    fmri_file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawEegEntry {
    file: String,
    shape: [usize; 2],
    fs_hz: f64,
    channel_names: Vec<String>,
    /// `i32` pairs `(sample_index, class_index)`.
    events_file: String,
    n_events: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BoldEntry {
    file: String,
    shape: [usize; 4],
    tr_s: f64,
    /// `f32` triples `(onset_s, duration_s, class_index)`.
    events_file: String,
    n_events: usize,
    /// `f32` `[n_scans, 6]`.
    motion_file: String,
}

fn f32_bytes(values: impl Iterator<Item = f32>) -> Vec<u8> {
    values.flat_map(f32::to_le_bytes).collect()
}

fn i32_bytes(values: impl Iterator<Item = i32>) -> Vec<u8> {
    values.flat_map(i32::to_le_bytes).collect()
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Writer<'a> {
    dir: &'a Path,
    checksums: BTreeMap<String, String>,
}

impl Writer<'_> {
    fn put(&mut self, name: &str, bytes: Vec<u8>) -> Result<String> {
        let path = self.dir.join(name);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        self.checksums.insert(name.to_string(), digest(&bytes));
        Ok(name.to_string())
    }
}

fn labels_to_i32(labels: &[usize]) -> impl Iterator<Item = i32> + '_ {
    labels.iter().map(|&l| l as i32)
}

/// Writes `subject` into directory `path` (created if missing) and returns the
/// manifest path. Any raw sections already present in an existing manifest
/// are dropped.
pub fn write_dataset(subject: &BimodalSubject, path: &Path) -> Result<PathBuf> {
    subject.eeg.validate()?;
    subject.fmri.validate()?;
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer {
        dir: path,
        checksums: BTreeMap::new(),
    };

    let eeg = &subject.eeg;
    let eeg_file = w.put("eeg.f32", f32_bytes(eeg.data.as_standard_layout().iter().copied()))?;
    let fmri = &subject.fmri;
    let fmri_file = w.put("fmri.f32", f32_bytes(fmri.data.as_standard_layout().iter().copied()))?;
    let mask_file = w.put(
        "mask.f32",
        f32_bytes(
            fmri.mask
                .as_standard_layout()
                .iter()
                .map(|&m| if m { 1.0 } else { 0.0 }),
        ),
    )?;
    let eeg_labels = w.put("eeg_labels.i32", i32_bytes(labels_to_i32(&eeg.labels)))?;
    let fmri_labels = w.put("fmri_labels.i32", i32_bytes(labels_to_i32(&fmri.labels)))?;

    let (n, c, s) = eeg.data.dim();
    let (m, v) = fmri.data.dim();
    let (mx, my, mz) = fmri.mask.dim();
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        subject_id: subject.subject_id.clone(),
        seed: subject.seed,
        vocab: VocabEntry {
            words: subject.vocab.words().to_vec(),
            categories: subject.vocab.categories().clone(),
        },
        eeg: EegEntry {
            file: eeg_file,
            shape: [n, c, s],
            fs_hz: eeg.fs,
            channel_names: eeg.channel_names.clone(),
        },
        fmri: FmriEntry {
            file: fmri_file,
            shape: [m, v],
            mask_file,
            mask_shape: [mx, my, mz],
            voxel_size_mm: fmri.voxel_size_mm,
        },
        labels: LabelsEntry {
            eeg_file: eeg_labels,
            fmri_file: fmri_labels,
        },
        checksums: w.checksums,
        raw_eeg: None,
        bold: None,
    };
    save_manifest(path, &manifest)
}

fn save_manifest(dir: &Path, manifest: &Manifest) -> Result<PathBuf> {
    let path = dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Accepts either the container directory or its manifest file.
fn container_dir(path: &Path) -> PathBuf {
    if path.file_name().is_some_and(|n| n == MANIFEST_NAME) {
        path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    } else {
        path.to_path_buf()
    }
}

fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_NAME);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::Manifest(format!("unknown format '{}'", manifest.format)));
    }
    if manifest.vocab.words.len() != super::N_CLASSES {
        return Err(Error::VocabSize(manifest.vocab.words.len()));
    }
    Ok(manifest)
}

fn read_checked(dir: &Path, name: &str, checksums: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    match checksums.get(name) {
        Some(expected) if *expected == digest(&bytes) => Ok(bytes),
        Some(_) => Err(Error::Checksum { file: name.into() }),
        None => Err(Error::Manifest(format!("no checksum recorded for {name}"))),
    }
}

fn decode_f32(bytes: &[u8], expected: usize, name: &str) -> Result<Vec<f32>> {
    if bytes.len() != expected * 4 {
        return Err(Error::Shape(format!(
            "{name}: {} bytes, manifest implies {}",
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn decode_i32(bytes: &[u8], expected: usize, name: &str) -> Result<Vec<i32>> {
    if bytes.len() != expected * 4 {
        return Err(Error::Shape(format!(
            "{name}: {} bytes, manifest implies {}",
            bytes.len(),
            expected * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn decode_labels(raw: Vec<i32>) -> Result<Vec<usize>> {
    raw.into_iter()
        .map(|l| {
            if (0..super::N_CLASSES as i32).contains(&l) {
                Ok(l as usize)
            } else {
                Err(Error::LabelOutOfRange {
                    label: l as i64,
                    n_classes: super::N_CLASSES,
                })
            }
        })
        .collect()
}

/// Loads and validates a container written by [`write_dataset`].
pub fn read_dataset(path: &Path) -> Result<BimodalSubject> {
    let path = container_dir(path);
    let path = path.as_path();
    let m = load_manifest(path)?;
    let vocab = LabelVocab::new(m.vocab.words.clone(), m.vocab.categories.clone())?;

    let [n, c, s] = m.eeg.shape;
    let eeg_data = decode_f32(&read_checked(path, &m.eeg.file, &m.checksums)?, n * c * s, &m.eeg.file)?;
    let eeg_labels = decode_labels(decode_i32(
        &read_checked(path, &m.labels.eeg_file, &m.checksums)?,
        n,
        &m.labels.eeg_file,
    )?)?;
    let eeg = EEGTrialSet::new(
        Array3::from_shape_vec((n, c, s), eeg_data).map_err(|e| Error::Shape(e.to_string()))?,
        eeg_labels,
        m.eeg.fs_hz,
        m.eeg.channel_names.clone(),
    )?;

    let [t, v] = m.fmri.shape;
    let fmri_data = decode_f32(&read_checked(path, &m.fmri.file, &m.checksums)?, t * v, &m.fmri.file)?;
    let [mx, my, mz] = m.fmri.mask_shape;
    let mask_raw = decode_f32(
        &read_checked(path, &m.fmri.mask_file, &m.checksums)?,
        mx * my * mz,
        &m.fmri.mask_file,
    )?;
    let fmri_labels = decode_labels(decode_i32(
        &read_checked(path, &m.labels.fmri_file, &m.checksums)?,
        t,
        &m.labels.fmri_file,
    )?)?;
    let fmri = FMRIBetaSet::new(
        Array2::from_shape_vec((t, v), fmri_data).map_err(|e| Error::Shape(e.to_string()))?,
        fmri_labels,
        Array3::from_shape_vec((mx, my, mz), mask_raw.iter().map(|&x| x != 0.0).collect())
            .map_err(|e| Error::Shape(e.to_string()))?,
        m.fmri.voxel_size_mm,
    )?;

    Ok(BimodalSubject {
        subject_id: m.subject_id,
        eeg,
        fmri,
        vocab,
        seed: m.seed,
    })
}

/// Adds a continuous EEG record to an existing container. Samples are stored
/// as `f32`.
pub fn write_raw_eeg(path: &Path, raw: &ContinuousEEG) -> Result<()> {
    let mut m = load_manifest(path)?;
    let mut w = Writer {
        dir: path,
        checksums: std::mem::take(&mut m.checksums),
    };
    let file = w.put(
        "raw_eeg.f32",
        f32_bytes(raw.data.as_standard_layout().iter().map(|&x| x as f32)),
    )?;
    let events_file = w.put(
        "raw_events.i32",
        i32_bytes(raw.events.iter().flat_map(|&(s, c)| [s as i32, c as i32])),
    )?;
    let (c, t) = raw.data.dim();
    m.raw_eeg = Some(RawEegEntry {
        file,
        shape: [c, t],
        fs_hz: raw.fs,
        channel_names: raw.channel_names.clone(),
        events_file,
        n_events: raw.events.len(),
    });
    m.checksums = w.checksums;
    save_manifest(path, &m).map(|_| ())
}

/// The continuous EEG section of a container, if present.
pub fn read_raw_eeg(path: &Path) -> Result<Option<ContinuousEEG>> {
    let path = container_dir(path);
    let path = path.as_path();
    let m = load_manifest(path)?;
    let Some(r) = m.raw_eeg else { return Ok(None) };
    let [c, t] = r.shape;
    let data = decode_f32(&read_checked(path, &r.file, &m.checksums)?, c * t, &r.file)?;
    let ev = decode_i32(
        &read_checked(path, &r.events_file, &m.checksums)?,
        2 * r.n_events,
        &r.events_file,
    )?;
    let labels = decode_labels(ev.chunks_exact(2).map(|p| p[1]).collect())?;
    let events = ev
        .chunks_exact(2)
        .zip(labels)
        .map(|(p, l)| {
            usize::try_from(p[0])
                .map(|s| (s, l))
                .map_err(|_| Error::Manifest(format!("negative event sample {}", p[0])))
        })
        .collect::<Result<Vec<_>>>()?;
    let data = Array2::from_shape_vec((c, t), data.into_iter().map(f64::from).collect())
        .map_err(|e| Error::Shape(e.to_string()))?;
    ContinuousEEG::new(data, r.fs_hz, r.channel_names, events).map(Some)
}

/// Adds a BOLD run to an existing container. Samples are stored as `f32`.
pub fn write_bold_run(path: &Path, run: &BoldRun) -> Result<()> {
    let mut m = load_manifest(path)?;
    let mut w = Writer {
        dir: path,
        checksums: std::mem::take(&mut m.checksums),
    };
    let file = w.put(
        "bold.f32",
        f32_bytes(run.data.as_standard_layout().iter().map(|&x| x as f32)),
    )?;
    let events_file = w.put(
        "bold_events.f32",
        f32_bytes(
            run.events
                .iter()
                .flat_map(|e| [e.onset_s as f32, e.duration_s as f32, e.class as f32]),
        ),
    )?;
    let motion_file = w.put(
        "motion.f32",
        f32_bytes(run.motion.as_standard_layout().iter().map(|&x| x as f32)),
    )?;
    let (x, y, z, t) = run.data.dim();
    m.bold = Some(BoldEntry {
        file,
        shape: [x, y, z, t],
        tr_s: run.tr_s,
        events_file,
        n_events: run.events.len(),
        motion_file,
    });
    m.checksums = w.checksums;
    save_manifest(path, &m).map(|_| ())
}

/// The BOLD section of a container, if present.
pub fn read_bold_run(path: &Path) -> Result<Option<BoldRun>> {
    let path = container_dir(path);
    let path = path.as_path();
    let m = load_manifest(path)?;
    let Some(b) = m.bold else { return Ok(None) };
    let [x, y, z, t] = b.shape;
    let data = decode_f32(&read_checked(path, &b.file, &m.checksums)?, x * y * z * t, &b.file)?;
    let ev = decode_f32(
        &read_checked(path, &b.events_file, &m.checksums)?,
        3 * b.n_events,
        &b.events_file,
    )?;
    let motion = decode_f32(
        &read_checked(path, &b.motion_file, &m.checksums)?,
        t * 6,
        &b.motion_file,
    )?;
    let events = ev
        .chunks_exact(3)
        .map(|e| TrialEvent {
            onset_s: e[0] as f64,
            duration_s: e[1] as f64,
            class: e[2] as usize,
        })
        .collect();
    let data = Array4::from_shape_vec((x, y, z, t), data.into_iter().map(f64::from).collect())
        .map_err(|e| Error::Shape(e.to_string()))?;
    let motion = Array2::from_shape_vec((t, 6), motion.into_iter().map(f64::from).collect())
        .map_err(|e| Error::Shape(e.to_string()))?;
    BoldRun::new(data, b.tr_s, events, motion).map(Some)
}
