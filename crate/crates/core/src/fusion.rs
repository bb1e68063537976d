//! Unimodal pipelines, late fusion (stacking of per-modality class
//! probabilities), early fusion (joint feature selection) and cross-pairing
//! augmentation.
//!
//! Exemplar sets reference shared base matrices by row index, so fold
//! subsets and re-paired sets cost a few index vectors rather than copies of
//! the wide EEG matrix.

use std::collections::BTreeSet;
use std::sync::Arc;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::classify::{argmax_rows, train_linear_svm, train_random_forest, ForestParams, SvmParams, TrainedModel};
use crate::dataio::{plan_folds, BimodalSubject, N_CLASSES};
use crate::error::{Error, Result};
use crate::features::{anova_f_rows, gather, select_percentile, FeatureSelector, Standardizer};
use crate::rng::{stream, tag};

/// Paired EEG/fMRI exemplars. Position `i` pairs EEG row `pairing[i].0`
/// with fMRI row `pairing[i].1`; both carry `labels[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedExemplarSet {
    /// `[all EEG exemplars, d_e]`
    pub eeg: Arc<Array2<f32>>,
    /// `[all fMRI exemplars, d_f]`
    pub fmri: Arc<Array2<f32>>,
    pub labels: Vec<usize>,
    pub pairing: Vec<(usize, usize)>,
}

impl PairedExemplarSet {
    pub fn new(
        eeg: Arc<Array2<f32>>,
        fmri: Arc<Array2<f32>>,
        labels: Vec<usize>,
        pairing: Vec<(usize, usize)>,
    ) -> Result<Self> {
        let set = Self {
            eeg,
            fmri,
            labels,
            pairing,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels.len() != self.pairing.len() {
            return Err(Error::Shape(format!(
                "{} labels for {} pairs",
                self.labels.len(),
                self.pairing.len()
            )));
        }
        if let Some(&(e, f)) = self
            .pairing
            .iter()
            .find(|&&(e, f)| e >= self.eeg.nrows() || f >= self.fmri.nrows())
        {
            return Err(Error::Shape(format!(
                "pair ({e}, {f}) outside {} EEG / {} fMRI rows",
                self.eeg.nrows(),
                self.fmri.nrows()
            )));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l >= N_CLASSES) {
            return Err(Error::LabelOutOfRange {
                label: l as i64,
                n_classes: N_CLASSES,
            });
        }
        Ok(())
    }

    /// Pairs a subject's exemplars: the j-th EEG trial of a class goes with
    /// the j-th fMRI trial of the same class. Surplus trials of a class in
    /// one modality are dropped.
    pub fn from_subject(subject: &BimodalSubject) -> Result<Self> {
        let eeg = Arc::new(subject.eeg.flattened());
        let fmri = Arc::new(subject.fmri.data.clone());
        let mut by_class_f: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
        for (i, &l) in subject.fmri.labels.iter().enumerate() {
            by_class_f[l].push(i);
        }
        let mut next = [0usize; N_CLASSES];
        let mut labels = Vec::new();
        let mut pairing = Vec::new();
        for (e, &l) in subject.eeg.labels.iter().enumerate() {
            if let Some(&f) = by_class_f[l].get(next[l]) {
                next[l] += 1;
                labels.push(l);
                pairing.push((e, f));
            }
        }
        if pairing.is_empty() {
            return Err(Error::EmptyExemplars);
        }
        Self::new(eeg, fmri, labels, pairing)
    }

    pub fn len(&self) -> usize {
        self.pairing.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairing.is_empty()
    }

    pub fn eeg_rows(&self) -> Vec<usize> {
        self.pairing.iter().map(|p| p.0).collect()
    }

    pub fn fmri_rows(&self) -> Vec<usize> {
        self.pairing.iter().map(|p| p.1).collect()
    }

    /// The pairs at positions `idx`, sharing the base matrices.
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            eeg: Arc::clone(&self.eeg),
            fmri: Arc::clone(&self.fmri),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            pairing: idx.iter().map(|&i| self.pairing[i]).collect(),
        }
    }

    /// Copy whose base matrices hold only the rows this set references,
    /// renumbered in order of first use.
    pub fn compact(&self) -> Self {
        fn remap(rows: &[usize], base: &Array2<f32>) -> (Vec<usize>, Array2<f32>) {
            let mut order = Vec::new();
            let mut index = std::collections::HashMap::new();
            let new: Vec<usize> = rows
                .iter()
                .map(|&r| {
                    *index.entry(r).or_insert_with(|| {
                        order.push(r);
                        order.len() - 1
                    })
                })
                .collect();
            (new, base.select(Axis(0), &order))
        }
        let (e, eeg) = remap(&self.eeg_rows(), &self.eeg);
        let (f, fmri) = remap(&self.fmri_rows(), &self.fmri);
        Self {
            eeg: Arc::new(eeg),
            fmri: Arc::new(fmri),
            labels: self.labels.clone(),
            pairing: e.into_iter().zip(f).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Eeg,
    Fmri,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Eeg => "eeg",
            Modality::Fmri => "fmri",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    Svm(SvmParams),
    Forest(ForestParams),
}

impl ModelSpec {
    fn with_seed(&self, seed: u64) -> Self {
        match self {
            ModelSpec::Svm(p) => ModelSpec::Svm(SvmParams { seed, ..p.clone() }),
            ModelSpec::Forest(p) => ModelSpec::Forest(ForestParams { seed, ..p.clone() }),
        }
    }

    fn train(&self, x: ArrayView2<'_, f64>, y: &[usize]) -> Result<TrainedModel> {
        match self {
            ModelSpec::Svm(p) => train_linear_svm(x, y, Some(N_CLASSES), p),
            ModelSpec::Forest(p) => train_random_forest(x, y, Some(N_CLASSES), p),
        }
    }
}

/// Selection percentile, optional standardization and a classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub percentile: f64,
    pub standardize: bool,
    pub model: ModelSpec,
}

impl PipelineConfig {
    /// Random forest on the top 2% of EEG features, unscaled.
    pub fn eeg_default() -> Self {
        Self {
            percentile: 2.0,
            standardize: false,
            model: ModelSpec::Forest(ForestParams::default()),
        }
    }

    /// Linear SVM (C = 0.1) on the top 1% of voxels, standardized.
    pub fn fmri_default() -> Self {
        Self {
            percentile: 1.0,
            standardize: true,
            model: ModelSpec::Svm(SvmParams::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnimodalPipeline {
    pub selector: FeatureSelector,
    pub standardizer: Option<Standardizer>,
    pub model: TrainedModel,
}

impl UnimodalPipeline {
    /// Fits on `rows` of `x` with labels `y`.
    pub fn fit(x: ArrayView2<'_, f32>, rows: &[usize], y: &[usize], cfg: &PipelineConfig) -> Result<Self> {
        let selector = FeatureSelector::fit(x, rows, y, cfg.percentile)?;
        let mut z = selector.transform(x, rows)?;
        let standardizer = if cfg.standardize {
            let s = Standardizer::fit(z.view())?;
            z = s.transform(z.view())?;
            Some(s)
        } else {
            None
        };
        let model = cfg.model.train(z.view(), y)?;
        Ok(Self {
            selector,
            standardizer,
            model,
        })
    }

    pub fn predict_proba(&self, x: ArrayView2<'_, f32>, rows: &[usize]) -> Result<Array2<f64>> {
        let mut z = self.selector.transform(x, rows)?;
        if let Some(s) = &self.standardizer {
            z = s.transform(z.view())?;
        }
        self.model.predict_proba(z.view())
    }

    pub fn fit_modality(set: &PairedExemplarSet, modality: Modality, cfg: &PipelineConfig) -> Result<Self> {
        let (x, rows) = modality_rows(set, modality);
        Self::fit(x, &rows, &set.labels, cfg).map_err(|e| Error::submodel(modality.name(), e))
    }

    pub fn predict_modality(&self, set: &PairedExemplarSet, modality: Modality) -> Result<Array2<f64>> {
        let (x, rows) = modality_rows(set, modality);
        self.predict_proba(x, &rows)
            .map_err(|e| Error::submodel(modality.name(), e))
    }
}

fn modality_rows(set: &PairedExemplarSet, modality: Modality) -> (ArrayView2<'_, f32>, Vec<usize>) {
    match modality {
        Modality::Eeg => (set.eeg.view(), set.eeg_rows()),
        Modality::Fmri => (set.fmri.view(), set.fmri_rows()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub eeg: PipelineConfig,
    pub fmri: PipelineConfig,
    /// Inner folds producing out-of-fold probabilities for the stacker.
    pub stack_folds: usize,
    pub stacker: SvmParams,
    pub standardize_stacker: bool,
    pub early_percentile: f64,
    pub early: SvmParams,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            eeg: PipelineConfig::eeg_default(),
            fmri: PipelineConfig::fmri_default(),
            stack_folds: 4,
            stacker: SvmParams {
                c: 1.0,
                ..SvmParams::default()
            },
            standardize_stacker: true,
            early_percentile: 1.0,
            early: SvmParams::default(),
            seed: 0,
        }
    }
}

impl FusionConfig {
    fn seeded(&self, seed: u64) -> Self {
        Self {
            eeg: PipelineConfig {
                model: self.eeg.model.with_seed(crate::rng::derive(seed, tag("eeg"))),
                ..self.eeg.clone()
            },
            fmri: PipelineConfig {
                model: self.fmri.model.with_seed(crate::rng::derive(seed, tag("fmri"))),
                ..self.fmri.clone()
            },
            stacker: SvmParams {
                seed: crate::rng::derive(seed, tag("stacker")),
                ..self.stacker.clone()
            },
            early: SvmParams {
                seed: crate::rng::derive(seed, tag("early")),
                ..self.early.clone()
            },
            seed,
            ..self.clone()
        }
    }
}

#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    Late {
        eeg: UnimodalPipeline,
        fmri: UnimodalPipeline,
        stacker_scaler: Option<Standardizer>,
        stacker: TrainedModel,
    },
    Early {
        selector: FeatureSelector,
        /// Width of the EEG block in the joint feature space.
        eeg_width: usize,
        standardizer: Standardizer,
        model: TrainedModel,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub strategy: Strategy,
    pub config: FusionConfig,
}

impl FusionModel {
    pub fn name(&self) -> &'static str {
        match self.strategy {
            Strategy::Late { .. } => "late",
            Strategy::Early { .. } => "early",
        }
    }
}

/// Concatenated class probabilities `[n, 16]` of the two submodels.
fn stack_features(eeg: &UnimodalPipeline, fmri: &UnimodalPipeline, set: &PairedExemplarSet) -> Result<Array2<f64>> {
    let pe = eeg.predict_modality(set, Modality::Eeg)?;
    let pf = fmri.predict_modality(set, Modality::Fmri)?;
    Ok(concatenate(Axis(1), &[pe.view(), pf.view()]).expect("equal row counts"))
}

/// Trains the EEG and fMRI pipelines and a linear SVM on their
/// concatenated probability vectors. The stacker learns from out-of-fold
/// probabilities of an inner split, so it never sees submodel outputs on
/// their own training rows.
pub fn late_fuse_train(train: &PairedExemplarSet, cfg: &FusionConfig) -> Result<FusionModel> {
    train.validate()?;
    let cfg = cfg.seeded(cfg.seed);
    let plan = plan_folds(
        &train.labels,
        cfg.stack_folds,
        crate::rng::derive(cfg.seed, tag("stack")),
    )?;
    let mut oof = Array2::zeros((train.len(), 2 * N_CLASSES));
    for fold in 0..cfg.stack_folds {
        let (inner_train, inner_test) = plan.split(fold);
        let fit_set = train.subset(&inner_train);
        let eval_set = train.subset(&inner_test);
        let eeg = UnimodalPipeline::fit_modality(&fit_set, Modality::Eeg, &cfg.eeg)?;
        let fmri = UnimodalPipeline::fit_modality(&fit_set, Modality::Fmri, &cfg.fmri)?;
        let block = stack_features(&eeg, &fmri, &eval_set)?;
        for (row, &i) in block.outer_iter().zip(&inner_test) {
            oof.row_mut(i).assign(&row);
        }
    }
    let eeg = UnimodalPipeline::fit_modality(train, Modality::Eeg, &cfg.eeg)?;
    let fmri = UnimodalPipeline::fit_modality(train, Modality::Fmri, &cfg.fmri)?;
    let (stacker_scaler, z) = if cfg.standardize_stacker {
        let s = Standardizer::fit(oof.view())?;
        let z = s.transform(oof.view())?;
        (Some(s), z)
    } else {
        (None, oof)
    };
    let stacker = train_linear_svm(z.view(), &train.labels, Some(N_CLASSES), &cfg.stacker)
        .map_err(|e| Error::submodel("stacker", e))?;
    Ok(FusionModel {
        strategy: Strategy::Late {
            eeg,
            fmri,
            stacker_scaler,
            stacker,
        },
        config: cfg,
    })
}

/// Joint ANOVA scores: the per-modality scores side by side. Each feature's
/// F only depends on its own column, so this equals scoring the
/// concatenated matrix without materializing it.
pub fn joint_scores(set: &PairedExemplarSet) -> Result<Array1<f64>> {
    let se = anova_f_rows(set.eeg.view(), &set.eeg_rows(), &set.labels)?;
    let sf = anova_f_rows(set.fmri.view(), &set.fmri_rows(), &set.labels)?;
    Ok(concatenate(Axis(0), &[se.view(), sf.view()]).expect("1-D"))
}

/// The selected joint columns `[n, k]`.
pub fn joint_transform(set: &PairedExemplarSet, selected: &[usize], eeg_width: usize) -> Result<Array2<f64>> {
    let d_f = set.fmri.ncols();
    if set.eeg.ncols() != eeg_width || selected.iter().any(|&c| c >= eeg_width + d_f) {
        return Err(Error::Shape(format!(
            "joint selector expects {eeg_width} EEG columns, got {} (+{d_f} fMRI)",
            set.eeg.ncols()
        )));
    }
    let split = selected.partition_point(|&c| c < eeg_width);
    let ce = &selected[..split];
    let cf: Vec<usize> = selected[split..].iter().map(|&c| c - eeg_width).collect();
    let xe = gather(set.eeg.view(), &set.eeg_rows(), ce);
    let xf = gather(set.fmri.view(), &set.fmri_rows(), &cf);
    Ok(concatenate(Axis(1), &[xe.view(), xf.view()]).expect("equal row counts"))
}

/// Concatenates the modalities, keeps the top percentile of the joint
/// features by ANOVA F, standardizes and trains a linear SVM.
pub fn early_fuse_train(train: &PairedExemplarSet, cfg: &FusionConfig) -> Result<FusionModel> {
    train.validate()?;
    let cfg = cfg.seeded(cfg.seed);
    let eeg_width = train.eeg.ncols();
    let selector = select_percentile(&joint_scores(train)?, cfg.early_percentile)?;
    let z = joint_transform(train, &selector.selected, eeg_width)?;
    let standardizer = Standardizer::fit(z.view())?;
    let z = standardizer.transform(z.view())?;
    let model = train_linear_svm(z.view(), &train.labels, Some(N_CLASSES), &cfg.early)?;
    Ok(FusionModel {
        strategy: Strategy::Early {
            selector,
            eeg_width,
            standardizer,
            model,
        },
        config: cfg,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// `[n, 8]`, rows on the simplex.
    pub proba: Array2<f64>,
}

pub fn fusion_predict(model: &FusionModel, test: &PairedExemplarSet) -> Result<Prediction> {
    test.validate()?;
    let proba = match &model.strategy {
        Strategy::Late {
            eeg,
            fmri,
            stacker_scaler,
            stacker,
        } => {
            let mut z = stack_features(eeg, fmri, test)?;
            if let Some(s) = stacker_scaler {
                z = s.transform(z.view())?;
            }
            stacker.predict_proba(z.view())?
        }
        Strategy::Early {
            selector,
            eeg_width,
            standardizer,
            model,
        } => {
            let z = joint_transform(test, &selector.selected, *eeg_width)?;
            model.predict_proba(standardizer.transform(z.view())?.view())?
        }
    };
    Ok(Prediction {
        labels: argmax_rows(&proba),
        proba,
    })
}

/// Adds `factor` re-paired exemplars after each original pair. New pairs
/// combine an EEG and an fMRI exemplar of the same class that were not
/// originally paired; within a class they are drawn without replacement
/// until every such combination is used, then with replacement.
pub fn augment_pairs(set: &PairedExemplarSet, factor: usize, seed: u64) -> Result<PairedExemplarSet> {
    set.validate()?;
    if factor == 0 {
        return Ok(set.clone());
    }
    let mut rng = stream(seed, tag("augment"));
    let originals: BTreeSet<(usize, usize)> = set.pairing.iter().copied().collect();
    let mut pools: Vec<Vec<(usize, usize)>> = Vec::with_capacity(N_CLASSES);
    for class in 0..N_CLASSES {
        let members = set.labels.iter().enumerate().filter(|(_, &l)| l == class);
        let eeg: BTreeSet<usize> = members.clone().map(|(i, _)| set.pairing[i].0).collect();
        let fmri: BTreeSet<usize> = members.map(|(i, _)| set.pairing[i].1).collect();
        let mut pool: Vec<(usize, usize)> = eeg
            .iter()
            .flat_map(|&e| fmri.iter().map(move |&f| (e, f)))
            .filter(|p| !originals.contains(p))
            .collect();
        if pool.is_empty() {
            // A single exemplar per modality: repeating the original is all
            // that is possible.
            pool = eeg.iter().flat_map(|&e| fmri.iter().map(move |&f| (e, f))).collect();
        }
        pool.shuffle(&mut rng);
        pools.push(pool);
    }
    let mut cursor = [0usize; N_CLASSES];
    let mut labels = Vec::with_capacity(set.len() * (factor + 1));
    let mut pairing = Vec::with_capacity(set.len() * (factor + 1));
    for (&pair, &l) in set.pairing.iter().zip(&set.labels) {
        labels.push(l);
        pairing.push(pair);
        let pool = &pools[l];
        for _ in 0..factor {
            let new = if cursor[l] < pool.len() {
                cursor[l] += 1;
                pool[cursor[l] - 1]
            } else {
                pool[rng.random_range(0..pool.len())]
            };
            labels.push(l);
            pairing.push(new);
        }
    }
    PairedExemplarSet::new(Arc::clone(&set.eeg), Arc::clone(&set.fmri), labels, pairing)
}

/// Fraction of selected joint features that come from the fMRI block.
pub fn fmri_share(model: &FusionModel) -> Option<f64> {
    match &model.strategy {
        Strategy::Early {
            selector, eeg_width, ..
        } => {
            let n = selector.selected.len();
            let f = selector.selected.iter().filter(|&&c| c >= *eeg_width).count();
            Some(f as f64 / n as f64)
        }
        Strategy::Late { .. } => None,
    }
}

/// Width of the stacker's input.
pub fn stacker_width(model: &FusionModel) -> Option<usize> {
    match &model.strategy {
        Strategy::Late { stacker, .. } => Some(stacker.n_features),
        Strategy::Early { .. } => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn toy(n_per_class: usize) -> PairedExemplarSet {
        let n = n_per_class * N_CLASSES;
        let labels: Vec<usize> = (0..n).map(|i| i % N_CLASSES).collect();
        let eeg = Array::from_shape_fn((n, 3), |(i, j)| (i * 3 + j) as f32);
        let fmri = Array::from_shape_fn((n, 2), |(i, j)| -((i * 2 + j) as f32));
        PairedExemplarSet::new(Arc::new(eeg), Arc::new(fmri), labels, (0..n).map(|i| (i, i)).collect()).unwrap()
    }

    #[test]
    fn augment_counts_labels_and_uniqueness() {
        let set = toy(5);
        let aug = augment_pairs(&set, 3, 1).unwrap();
        assert_eq!(aug.len(), 40 * 4);
        for (i, &(e, f)) in aug.pairing.iter().enumerate() {
            assert_eq!(set.labels[e], aug.labels[i]);
            assert_eq!(set.labels[f], aug.labels[i]);
        }
        // 5 x 5 - 5 = 20 fresh combinations per class, 15 needed: no repeats.
        let unique: BTreeSet<_> = aug.pairing.iter().collect();
        assert_eq!(unique.len(), aug.len());
        for i in 0..set.len() {
            assert_eq!(aug.pairing[i * 4], set.pairing[i]);
        }
        assert_eq!(augment_pairs(&set, 0, 1).unwrap(), set);
        assert_eq!(aug, augment_pairs(&set, 3, 1).unwrap());
    }

    #[test]
    fn augment_falls_back_to_replacement() {
        let set = toy(2);
        // Two fresh combinations per class, six requested per class.
        let aug = augment_pairs(&set, 3, 2).unwrap();
        assert_eq!(aug.len(), 16 * 4);
        let fresh: BTreeSet<_> = aug.pairing.iter().filter(|p| !set.pairing.contains(p)).collect();
        assert_eq!(fresh.len(), 16);
    }

    #[test]
    fn pairing_by_class_order() {
        use crate::synthgen::{generate_subject, SubjectProfile};
        let mut subject = generate_subject(&SubjectProfile {
            n_per_class: 3,
            ..SubjectProfile::small(4)
        })
        .unwrap();
        // Reverse the fMRI trial order: pairs must still match labels.
        let n = subject.fmri.labels.len();
        let rev: Vec<usize> = (0..n).rev().collect();
        subject.fmri.data = subject.fmri.data.select(Axis(0), &rev);
        subject.fmri.labels.reverse();
        let set = PairedExemplarSet::from_subject(&subject).unwrap();
        assert_eq!(set.len(), n);
        for (i, &(e, f)) in set.pairing.iter().enumerate() {
            assert_eq!(subject.eeg.labels[e], set.labels[i]);
            assert_eq!(subject.fmri.labels[f], set.labels[i]);
        }
    }

    #[test]
    fn compact_keeps_content() {
        let set = toy(3);
        let sub = set.subset(&[5, 2, 5, 9]);
        let c = sub.compact();
        assert_eq!(c.eeg.nrows(), 3);
        assert_eq!(c.labels, sub.labels);
        for (a, b) in sub.pairing.iter().zip(&c.pairing) {
            assert_eq!(set.eeg.row(a.0), c.eeg.row(b.0));
            assert_eq!(set.fmri.row(a.1), c.fmri.row(b.1));
        }
    }

    #[test]
    fn invalid_pairs_rejected() {
        let set = toy(2);
        let bad = PairedExemplarSet::new(Arc::clone(&set.eeg), Arc::clone(&set.fmri), vec![0], vec![(99, 0)]);
        assert!(bad.is_err());
        let bad = PairedExemplarSet::new(Arc::clone(&set.eeg), Arc::clone(&set.fmri), vec![0, 1], vec![(0, 0)]);
        assert!(bad.is_err());
    }
}
