//! Dataset types shared by every stage, the on-disk container, and
//! stratified fold planning.

mod container;
mod folds;

use std::collections::BTreeMap;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use container::{
    read_bold_run, read_dataset, read_raw_eeg, write_bold_run, write_dataset, write_raw_eeg, MANIFEST_NAME,
};
pub use folds::{plan_folds, FoldPlan};

/// Number of word classes in the decoding task.
pub const N_CLASSES: usize = 8;

/// The ordered eight-word vocabulary. Position in `words` is the class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocab {
    words: Vec<String>,
    categories: BTreeMap<String, String>,
}

impl LabelVocab {
    pub fn new(words: Vec<String>, categories: BTreeMap<String, String>) -> Result<Self> {
        if words.len() != N_CLASSES {
            return Err(Error::VocabSize(words.len()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for w in &words {
            if !seen.insert(w) {
                return Err(Error::Vocab(format!("duplicate word '{w}'")));
            }
            if !categories.contains_key(w) {
                return Err(Error::Vocab(format!("word '{w}' has no category")));
            }
        }
        if categories.len() != N_CLASSES {
            return Err(Error::Vocab("categories must cover exactly the 8 words".into()));
        }
        let mut per_category: BTreeMap<&str, usize> = BTreeMap::new();
        for c in categories.values() {
            *per_category.entry(c.as_str()).or_default() += 1;
        }
        if per_category.len() != 2 || per_category.values().any(|&n| n != 4) {
            return Err(Error::Vocab("need exactly 2 categories with 4 words each".into()));
        }
        Ok(Self { words, categories })
    }

    /// The inner-speech vocabulary: four number words, four social words.
    pub fn ispeech() -> Self {
        let numbers = ["four", "three", "ten", "six"];
        let social = ["daughter", "father", "wife", "child"];
        let words: Vec<String> = numbers.iter().chain(&social).map(|s| s.to_string()).collect();
        let categories = numbers
            .iter()
            .map(|w| (w.to_string(), "numbers".to_string()))
            .chain(social.iter().map(|w| (w.to_string(), "social".to_string())))
            .collect();
        Self::new(words, categories).expect("built-in vocab is valid")
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn categories(&self) -> &BTreeMap<String, String> {
        &self.categories
    }

    pub fn category(&self, class: usize) -> Option<&str> {
        self.words
            .get(class)
            .and_then(|w| self.categories.get(w))
            .map(String::as_str)
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }
}

impl Default for LabelVocab {
    fn default() -> Self {
        Self::ispeech()
    }
}

fn check_labels(labels: &[usize]) -> Result<()> {
    match labels.iter().find(|&&l| l >= N_CLASSES) {
        Some(&l) => Err(Error::LabelOutOfRange {
            label: l as i64,
            n_classes: N_CLASSES,
        }),
        None => Ok(()),
    }
}

/// Epoched EEG: `data` is `[trials, channels, samples]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EEGTrialSet {
    pub data: Array3<f32>,
    pub labels: Vec<usize>,
    pub fs: f64,
    pub channel_names: Vec<String>,
}

impl EEGTrialSet {
    pub fn new(data: Array3<f32>, labels: Vec<usize>, fs: f64, channel_names: Vec<String>) -> Result<Self> {
        let set = Self {
            data,
            labels,
            fs,
            channel_names,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, c, _) = self.data.dim();
        if n == 0 {
            return Err(Error::EmptyExemplars);
        }
        if self.labels.len() != n {
            return Err(Error::Shape(format!(
                "eeg has {n} trials but {} labels",
                self.labels.len()
            )));
        }
        if self.channel_names.len() != c {
            return Err(Error::Shape(format!(
                "eeg has {c} channels but {} channel names",
                self.channel_names.len()
            )));
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::InvalidParameter(format!("sampling rate {}", self.fs)));
        }
        check_labels(&self.labels)?;
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("eeg trials".into()));
        }
        Ok(())
    }

    pub fn n_trials(&self) -> usize {
        self.data.dim().0
    }

    /// Trials as row vectors, channel-major (`[channel 0 samples…, channel 1 samples…]`).
    pub fn flattened(&self) -> Array2<f32> {
        let (n, c, s) = self.data.dim();
        self.data
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, c * s))
            .expect("standard layout reshapes")
    }

    /// Consuming variant of [`flattened`](Self::flattened) that avoids a copy.
    pub fn into_flattened(self) -> Array2<f32> {
        let (n, c, s) = self.data.dim();
        self.data
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, c * s))
            .expect("standard layout reshapes")
    }
}

/// Per-trial beta maps flattened through a brain mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FMRIBetaSet {
    /// `[trials, in-mask voxels]`, columns in C-order scan of the mask.
    pub data: Array2<f32>,
    pub labels: Vec<usize>,
    pub mask: Array3<bool>,
    pub voxel_size_mm: [f64; 3],
}

impl FMRIBetaSet {
    pub fn new(data: Array2<f32>, labels: Vec<usize>, mask: Array3<bool>, voxel_size_mm: [f64; 3]) -> Result<Self> {
        let set = Self {
            data,
            labels,
            mask,
            voxel_size_mm,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, v) = self.data.dim();
        if n == 0 {
            return Err(Error::EmptyExemplars);
        }
        if self.labels.len() != n {
            return Err(Error::Shape(format!(
                "fmri has {n} trials but {} labels",
                self.labels.len()
            )));
        }
        let in_mask = self.mask.iter().filter(|&&m| m).count();
        if in_mask != v {
            return Err(Error::Shape(format!(
                "fmri has {v} voxel columns but mask has {in_mask} true voxels"
            )));
        }
        if self.voxel_size_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidParameter("voxel size must be positive".into()));
        }
        check_labels(&self.labels)?;
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("fmri betas".into()));
        }
        Ok(())
    }

    pub fn n_voxels(&self) -> usize {
        self.data.ncols()
    }
}

/// One subject's paired EEG and fMRI exemplars.
#[derive(Debug, Clone, PartialEq)]
pub struct BimodalSubject {
    pub subject_id: String,
    pub eeg: EEGTrialSet,
    pub fmri: FMRIBetaSet,
    pub vocab: LabelVocab,
    pub seed: u64,
}

impl BimodalSubject {
    /// Checks the contained sets plus the requirement that every class has at
    /// least `k` members in both modalities.
    pub fn validate(&self, k: usize) -> Result<()> {
        self.eeg.validate()?;
        self.fmri.validate()?;
        for labels in [&self.eeg.labels, &self.fmri.labels] {
            let counts = class_counts(labels);
            if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &c)| c < k) {
                return Err(Error::Stratification { class, count, k });
            }
        }
        Ok(())
    }
}

pub fn class_counts(labels: &[usize]) -> [usize; N_CLASSES] {
    let mut counts = [0; N_CLASSES];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}
