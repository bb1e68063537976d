//! Fixtures shared by the pipeline benchmarks.

use ndarray::Array2;
use neurofuse::dataio::BimodalSubject;
use neurofuse::synthgen::{generate_subject, preset, SubjectProfile};

/// A full-size "both" subject.
pub fn full_subject(seed: u64) -> BimodalSubject {
    generate_subject(&preset("both", seed).expect("preset")).expect("subject")
}

/// A reduced "both" subject, cheap enough for per-iteration work.
pub fn small_subject(seed: u64) -> BimodalSubject {
    let p = SubjectProfile {
        eeg_sep: 9.0,
        fmri_sep: 3.0,
        ..SubjectProfile::small(seed)
    };
    generate_subject(&p).expect("subject")
}

/// fMRI exemplars of `subject` widened to f64, with their labels.
pub fn fmri_matrix(subject: &BimodalSubject) -> (Array2<f64>, Vec<usize>) {
    (subject.fmri.data.mapv(f64::from), subject.fmri.labels.clone())
}
