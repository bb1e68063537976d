use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use neurofuse::dataio::{
    read_bold_run, read_dataset, read_raw_eeg, write_bold_run, write_dataset, write_raw_eeg, BimodalSubject,
};
use neurofuse::eegprep::{self, EegPrepConfig};
use neurofuse::fmriprep::{self, FmriPrepConfig};
use neurofuse::harness::{
    render_table, run_experiment, run_subject, table_from_csv, write_results, ExperimentConfig, ModelKind,
};
use neurofuse::manifold::{self, Method};
use neurofuse::synthgen;

#[derive(Parser)]
#[command(
    name = "neurofuse",
    version,
    about = "Bimodal EEG/fMRI decoding pipeline",
    arg_required_else_help = true
)]
struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Late,
    Early,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Modality {
    Eeg,
    Fmri,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic subject container from a regime preset.
    Synth {
        /// none, fmri_only or both.
        #[arg(long, default_value = "both")]
        preset: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        eeg_sep: Option<f64>,
        #[arg(long)]
        fmri_sep: Option<f64>,
        #[arg(long)]
        noise_sd: Option<f64>,
        #[arg(long)]
        n_per_class: Option<usize>,
        /// Start from the reduced 16-channel, 10³-voxel profile.
        #[arg(long)]
        small: bool,
        /// Also store a continuous EEG record and a BOLD run for the
        /// preprocessing commands.
        #[arg(long)]
        raw: bool,
        /// White-noise sd added to the BOLD run.
        #[arg(long, default_value_t = 0.5)]
        bold_noise: f64,
    },
    /// Clean the container's continuous EEG and replace its epochs.
    EegPrep {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        hp: f64,
        #[arg(long, default_value_t = 50.0)]
        notch: f64,
        /// EOG components to remove.
        #[arg(long, default_value_t = 1)]
        n_remove: usize,
        /// Components unmixed by ICA; 0 keeps the data rank.
        #[arg(long, default_value_t = 4)]
        components: usize,
        #[arg(long, default_value_t = 0.0)]
        tmin: f64,
        #[arg(long, default_value_t = 2.0)]
        tmax: f64,
    },
    /// Estimate single-trial betas from the container's BOLD run and replace
    /// its fMRI exemplars.
    FmriPrep {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Smoothing kernel FWHM in mm.
        #[arg(long, default_value_t = 8.0)]
        fwhm: f64,
    },
    /// Cross-validate one fusion strategy on a container.
    Fuse {
        #[arg(long, value_enum)]
        strategy: Strategy,
        /// Re-paired exemplars added per original pair (early fusion only).
        #[arg(long, default_value_t = 0)]
        augment: usize,
        /// Re-pair the training folds only.
        #[arg(long)]
        augment_train_only: bool,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        k: usize,
    },
    /// Embed a container's exemplars in 2-D and plot them.
    Manifold {
        #[arg(long = "in")]
        input: PathBuf,
        /// isomap, spectral or lle.
        #[arg(long, default_value = "isomap")]
        method: String,
        #[arg(long, default_value_t = manifold::DEFAULT_NEIGHBORS)]
        k: usize,
        #[arg(long, value_enum, default_value = "fmri")]
        modality: Modality,
        /// Keep this percentile of features by ANOVA F before embedding;
        /// 100 keeps them all.
        #[arg(long, default_value_t = manifold::DEFAULT_PERCENTILE)]
        percentile: f64,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// Run a full experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render a results table written by `run`.
    Report {
        /// A results directory or its table.csv.
        #[arg(long = "in", default_value = "results")]
        input: PathBuf,
        /// Write the table here instead of printing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Synth {
            preset,
            out,
            eeg_sep,
            fmri_sep,
            noise_sd,
            n_per_class,
            small,
            raw,
            bold_noise,
        } => {
            let seed = seed.unwrap_or(0);
            let base = synthgen::preset(&preset, seed)?;
            let mut p = if small {
                synthgen::SubjectProfile {
                    eeg_sep: base.eeg_sep,
                    fmri_sep: base.fmri_sep,
                    ..synthgen::SubjectProfile::small(seed)
                }
            } else {
                base
            };
            p.eeg_sep = eeg_sep.unwrap_or(p.eeg_sep);
            p.fmri_sep = fmri_sep.unwrap_or(p.fmri_sep);
            p.noise_sd = noise_sd.unwrap_or(p.noise_sd);
            p.n_per_class = n_per_class.unwrap_or(p.n_per_class);
            let mut subject = synthgen::generate_subject(&p)?;
            subject.subject_id = format!("{preset}-s{seed}");
            write_dataset(&subject, &out)?;
            if raw {
                write_raw_eeg(&out, &synthgen::generate_raw_eeg(&p, &subject)?)?;
                write_bold_run(&out, &synthgen::generate_bold_run(&p, &subject, bold_noise)?)?;
            }
            println!(
                "{}: {} trials, {} EEG features, {} voxels -> {}",
                subject.subject_id,
                subject.eeg.n_trials(),
                subject.eeg.data.len() / subject.eeg.n_trials(),
                subject.fmri.n_voxels(),
                out.display()
            );
        }
        Command::EegPrep {
            input,
            out,
            hp,
            notch,
            n_remove,
            components,
            tmin,
            tmax,
        } => {
            let mut subject = read_dataset(&input)?;
            let raw =
                read_raw_eeg(&input)?.context("container has no continuous EEG (create it with `synth --raw`)")?;
            let mut cfg = EegPrepConfig {
                highpass_hz: hp,
                notch_hz: notch,
                n_remove,
                tmin_s: tmin,
                tmax_s: tmax,
                ..EegPrepConfig::default()
            };
            cfg.ica.n_components = (components > 0).then_some(components);
            cfg.ica.seed = seed.unwrap_or(cfg.ica.seed);
            let (trials, report) = eegprep::preprocess(&raw, &cfg)?;
            if trials.labels != subject.fmri.labels {
                bail!("cleaned epochs carry different labels than the fMRI exemplars");
            }
            subject.eeg = trials;
            save_with_sections(&subject, &input, &out)?;
            let removed: Vec<String> = report
                .removed
                .iter()
                .map(|&c| format!("{c} (score {:.3})", report.ica.component_scores[c]))
                .collect();
            println!(
                "{} epochs of {} channels; ICA converged in {} iterations; removed component {} -> {}",
                subject.eeg.n_trials(),
                subject.eeg.channel_names.len(),
                report.ica.n_iter,
                removed.join(", "),
                out.display()
            );
        }
        Command::FmriPrep { input, out, fwhm } => {
            let mut subject = read_dataset(&input)?;
            let run = read_bold_run(&input)?.context("container has no BOLD run (create it with `synth --raw`)")?;
            let cfg = FmriPrepConfig {
                fwhm_mm: fwhm,
                voxel_size_mm: subject.fmri.voxel_size_mm,
            };
            let betas = fmriprep::preprocess(&run, &subject.fmri.mask, &cfg)?;
            if betas.labels != subject.eeg.labels {
                bail!("beta labels differ from the EEG trial labels");
            }
            subject.fmri = betas;
            save_with_sections(&subject, &input, &out)?;
            println!(
                "{} beta maps over {} voxels from {} scans -> {}",
                subject.fmri.data.nrows(),
                subject.fmri.n_voxels(),
                run.n_scans(),
                out.display()
            );
        }
        Command::Fuse {
            strategy,
            augment,
            augment_train_only,
            input,
            out,
            k,
        } => {
            let model = match (strategy, augment) {
                (Strategy::Late, 0) => ModelKind::Late,
                (Strategy::Late, _) => bail!("augmentation applies to early fusion only"),
                (Strategy::Early, 0) => ModelKind::Early,
                (Strategy::Early, _) => ModelKind::EarlyAug,
            };
            let subject = read_dataset(&input)?;
            let cfg = ExperimentConfig {
                models: vec![model],
                k,
                seed: seed.unwrap_or(0),
                augment_factor: augment.max(1),
                augment_train_only,
                ..ExperimentConfig::default()
            };
            let cell = run_subject(&cfg, &subject)?.remove(0);
            if let Some(e) = &cell.error {
                bail!("{e}");
            }
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut text = String::from("fold,accuracy\n");
            for (i, a) in cell.folds.iter().enumerate() {
                text.push_str(&format!("{},{a:?}\n", i + 1));
            }
            let path = out.join(format!("{}_{}.csv", subject.subject_id, model.name()));
            std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            println!(
                "{} {}: {:.2} ± {:.2} % over {k} folds -> {}",
                subject.subject_id,
                model.name(),
                cell.mean().unwrap_or(f64::NAN),
                cell.std().unwrap_or(f64::NAN),
                path.display()
            );
        }
        Command::Manifold {
            input,
            method,
            k,
            modality,
            percentile,
            out,
        } => {
            let method = Method::parse(&method)?;
            let subject = read_dataset(&input)?;
            let (x, labels, name) = match modality {
                Modality::Fmri => (
                    manifold::prepare_features(subject.fmri.data.view(), &subject.fmri.labels, Some(percentile), true)?,
                    &subject.fmri.labels,
                    "fmri",
                ),
                Modality::Eeg => {
                    let flat = subject.eeg.flattened();
                    (
                        manifold::prepare_features(flat.view(), &subject.eeg.labels, Some(percentile), true)?,
                        &subject.eeg.labels,
                        "eeg",
                    )
                }
            };
            let emb = manifold::embed(x.view(), labels, method, k)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let svg = out.join(format!("{}_{name}_{}.svg", subject.subject_id, method.name()));
            let coords = manifold::render_embedding(&emb, subject.vocab.words(), &svg)?;
            println!(
                "{} {name} {}: silhouette {:.3} -> {}, {}",
                subject.subject_id,
                method.name(),
                manifold::structure_score(&emb)?,
                svg.display(),
                coords.display()
            );
        }
        Command::Run { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            let table = run_experiment(&cfg)?;
            write_results(&table, &cfg, &cfg.out_dir)?;
            print!("{}", render_table(&table)?);
            println!("results written to {}", cfg.out_dir.display());
        }
        Command::Report { input, out } => {
            let csv = if input.is_dir() { input.join("table.csv") } else { input };
            let text = std::fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?;
            let rendered = render_table(&table_from_csv(&text)?)?;
            match out {
                Some(path) => std::fs::write(&path, rendered).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{rendered}"),
            }
        }
    }
    Ok(())
}

/// Writes `subject` to `out`, carrying over the raw EEG and BOLD sections of
/// the container at `from`.
fn save_with_sections(subject: &BimodalSubject, from: &Path, out: &Path) -> Result<()> {
    let raw = read_raw_eeg(from)?;
    let bold = read_bold_run(from)?;
    write_dataset(subject, out)?;
    if let Some(raw) = raw {
        write_raw_eeg(out, &raw)?;
    }
    if let Some(bold) = bold {
        write_bold_run(out, &bold)?;
    }
    Ok(())
}
