use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gramtraj::alignment::{FrameMetric, SimilarityKind, SimilarityMatrix};
use gramtraj::curve::{fit_blended_curve_with, resample_curve, FitOptions};
use gramtraj::manifold::{distance, distance_2d_closed_form, distance_2d_rotation_only};
use gramtraj::pipeline::{self, Align, RunConfig, RunDir};
use gramtraj::skeleton::{
    clean_frames, frames_to_trajectory, load_dataset, read_frames, trajectory_to_csv, DatasetManifest, Format,
    LoadOptions, ManifestEntry,
};
use gramtraj::svm::{ppf_kernel_rows, train_precomputed, KernelKind, Protocol, SvmModel, SvmParams};
use gramtraj::synth::{synthetic_dataset, write_synthetic, SynthConfig};
use gramtraj::Error;

/// Classify landmark sequences as trajectories of Gram matrices.
#[derive(Parser, Debug)]
#[command(name = "gramtraj", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load, clean and center a dataset; optionally export centered CSVs.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        load: LoadArgs,
        /// Directory receiving centered sequences and a new manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distance between one frame of each of two sequence files.
    Distance {
        file_a: PathBuf,
        file_b: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame_a: usize,
        #[arg(long, default_value_t = 0)]
        frame_b: usize,
        #[arg(long, value_enum, default_value_t = MetricArg::General)]
        metric: MetricArg,
        /// With d2, keep only the rotation branch of the closed form.
        #[arg(long)]
        rotation_only_d2: bool,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[command(flatten)]
        load: LoadArgs,
    },
    /// Fit a blended curve to one sequence and write it as CSV.
    Fit {
        file: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long)]
        resample: Option<usize>,
        #[arg(long)]
        fit_window: Option<usize>,
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
        #[command(flatten)]
        load: LoadArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the similarity matrix of a dataset into a run directory.
    Kernel {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an SVM on the manifest's sequences using a cached similarity matrix.
    Train {
        #[arg(long)]
        kernel: PathBuf,
        /// Training sequences and labels; ids must appear in the kernel.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        svm_c: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict labels for the kernel's sequences that were not used in training.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        kernel: PathBuf,
        /// Predict every sequence in the kernel, including training ones.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-validate the full pipeline and write a run directory.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic labeled dataset.
    Synth {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        per_class: usize,
        #[arg(long, default_value_t = 40)]
        frames: usize,
        #[arg(long, default_value_t = 8)]
        landmarks: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 5)]
        subjects: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time alignment with the general and the 2D metric (median of repetitions).
    Bench {
        /// Dataset to time; a synthetic one is generated when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        frames: usize,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum MetricArg {
    General,
    D2,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum AlignArg {
    Gak,
    Dtw,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ProtocolArg {
    Loo,
    Loao,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Kinect,
    Openpose,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Kinect => Format::Kinect,
            FormatArg::Openpose => Format::Openpose,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct LoadArgs {
    /// Frames with any joint below this confidence are dropped.
    #[arg(long, default_value_t = 0.1)]
    min_confidence: f64,
    /// Scale each centered frame to unit Frobenius norm.
    #[arg(long)]
    unit_norm: bool,
    /// Abort on the first unreadable sequence instead of skipping it.
    #[arg(long)]
    strict: bool,
}

impl LoadArgs {
    fn options(&self) -> LoadOptions {
        LoadOptions {
            min_confidence: self.min_confidence,
            unit_norm: self.unit_norm,
            strict: self.strict,
            ..LoadOptions::default()
        }
    }
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[arg(long, value_enum, default_value_t = MetricArg::General)]
    metric: MetricArg,
    #[arg(long)]
    rotation_only_d2: bool,
    #[arg(long, value_enum, default_value_t = AlignArg::Gak)]
    align: AlignArg,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    #[arg(long, default_value_t = 10.0)]
    lambda: f64,
    #[arg(long)]
    curve_fit: bool,
    #[arg(long)]
    resample: Option<usize>,
    #[arg(long)]
    fit_window: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    svm_c: f64,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Loo)]
    protocol: ProtocolArg,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    normalize_kernel: bool,
    /// Use the squared frame distance in the local kernel exponent.
    #[arg(long)]
    squared_exponent: bool,
    /// Run the alignment recursion on plain values instead of logarithms.
    #[arg(long)]
    linear_space: bool,
    #[command(flatten)]
    load: LoadArgs,
}

fn frame_metric(metric: MetricArg, rotation_only: bool) -> FrameMetric {
    match (metric, rotation_only) {
        (MetricArg::General, _) => FrameMetric::General,
        (MetricArg::D2, false) => FrameMetric::D2Closed,
        (MetricArg::D2, true) => FrameMetric::D2RotationOnly,
    }
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            metric: frame_metric(self.metric, self.rotation_only_d2),
            align: match self.align {
                AlignArg::Gak => Align::Gak,
                AlignArg::Dtw => Align::Dtw,
            },
            sigma: self.sigma,
            lambda: self.lambda,
            curve_fit: self.curve_fit,
            resample: self.resample,
            window: self.fit_window,
            svm_c: self.svm_c,
            protocol: match self.protocol {
                ProtocolArg::Loo => Protocol::Loo,
                ProtocolArg::Loao => Protocol::Loao,
            },
            workers: self.workers,
            seed: self.seed,
            normalize: self.normalize_kernel,
            squared_exponent: self.squared_exponent,
            log_space: !self.linear_space,
            load: self.load.options(),
        }
    }
}

fn guess_format(path: &Path, format: Option<FormatArg>) -> Format {
    match format {
        Some(f) => f.into(),
        None if path.is_dir() || path.extension().is_some_and(|e| e == "json") => Format::Openpose,
        None => Format::Csv,
    }
}

fn load_single(path: &Path, format: Format, options: &LoadOptions) -> gramtraj::Result<gramtraj::curve::Trajectory> {
    let load = || {
        let frames = clean_frames(read_frames(path, format)?, options.min_confidence)?;
        frames_to_trajectory(&frames, options)
    };
    load().map_err(|e| Error::File {
        path: path.to_path_buf(),
        source: Box::new(e),
    })
}

fn load_manifest(path: &Path, options: &LoadOptions) -> gramtraj::Result<gramtraj::skeleton::Dataset> {
    let manifest = DatasetManifest::read(path)?;
    let dataset = load_dataset(&manifest, options)?;
    for (p, why) in &dataset.skipped {
        eprintln!("skipped {p}: {why}");
    }
    Ok(dataset)
}

fn run(cli: Cli) -> gramtraj::Result<()> {
    match cli.command {
        Command::Ingest { manifest, load, out } => {
            let dataset = load_manifest(&manifest, &load.options())?;
            for (id, t) in dataset.ids.iter().zip(&dataset.trajectories) {
                println!(
                    "{id}\t{}\t{}\t{} frames\t{}x{}",
                    t.label.as_deref().unwrap_or(""),
                    t.subject.as_deref().unwrap_or(""),
                    t.len(),
                    t.n(),
                    t.d()
                );
            }
            println!("loaded {} sequence(s), skipped {}", dataset.trajectories.len(), dataset.skipped.len());
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                let mut entries = Vec::new();
                for (i, t) in dataset.trajectories.iter().enumerate() {
                    let name = format!("seq_{i:04}.csv");
                    fs::write(out.join(&name), trajectory_to_csv(t))?;
                    entries.push(ManifestEntry {
                        path: name,
                        label: t.label.clone().unwrap_or_default(),
                        subject: t.subject.clone(),
                        format: Format::Csv,
                    });
                }
                let m = DatasetManifest {
                    entries,
                    base_dir: out.clone(),
                };
                fs::write(out.join("manifest.csv"), m.to_csv()?)?;
            }
        }
        Command::Distance {
            file_a,
            file_b,
            frame_a,
            frame_b,
            metric,
            rotation_only_d2,
            format,
            load,
        } => {
            let options = load.options();
            let a = load_single(&file_a, guess_format(&file_a, format), &options)?;
            let b = load_single(&file_b, guess_format(&file_b, format), &options)?;
            let metric = frame_metric(metric, rotation_only_d2);
            metric.check_dimension(a.d())?;
            metric.check_dimension(b.d())?;
            let pick = |t: &gramtraj::curve::Trajectory, k: usize, path: &Path| {
                t.points().get(k).cloned().ok_or_else(|| {
                    Error::InvalidParameter(format!(
                        "{} has {} frame(s) after cleaning, frame {k} requested",
                        path.display(),
                        t.len()
                    ))
                })
            };
            let za = pick(&a, frame_a, &file_a)?;
            let zb = pick(&b, frame_b, &file_b)?;
            let d = match metric {
                FrameMetric::General => distance(&za, &zb)?,
                FrameMetric::D2Closed => distance_2d_closed_form(&za, &zb)?,
                FrameMetric::D2RotationOnly => distance_2d_rotation_only(&za, &zb)?,
            };
            println!("{d:.12}");
        }
        Command::Fit {
            file,
            lambda,
            resample,
            fit_window,
            format,
            load,
            out,
        } => {
            let traj = load_single(&file, guess_format(&file, format), &load.options())?;
            let curve = fit_blended_curve_with(
                &traj,
                &FitOptions {
                    lambda,
                    window: fit_window,
                },
            )?;
            let fitted = match resample {
                Some(m) => resample_curve(&curve, m)?,
                None => curve.at_anchor_times()?,
            };
            fs::write(&out, trajectory_to_csv(&fitted))?;
        }
        Command::Kernel { manifest, run, out } => {
            let config = run.config();
            let dataset = load_manifest(&manifest, &config.load)?;
            config.validate(&dataset.trajectories)?;
            let prepared = pipeline::prepare_trajectories(&dataset.trajectories, &config)?;
            let matrix = pipeline::similarity_matrix(&prepared, &dataset.ids, &config)?;
            let dir = RunDir::create(&out)?;
            dir.write_config(&config, &pipeline::manifest_hash(&manifest)?)?;
            let path = dir.write_kernel(&matrix)?;
            println!("{}", path.display());
        }
        Command::Train {
            kernel,
            manifest,
            svm_c,
            out,
        } => {
            let matrix = read_matrix(&kernel)?;
            let m = DatasetManifest::read(&manifest)?;
            let index: HashMap<&str, usize> = matrix.ids().iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
            let rows = m
                .entries
                .iter()
                .map(|e| {
                    index.get(e.path.as_str()).copied().ok_or_else(|| {
                        Error::ShapeMismatch(format!("{} is not in {}", e.path, kernel.display()))
                    })
                })
                .collect::<gramtraj::Result<Vec<_>>>()?;
            let labels: Vec<String> = m.entries.iter().map(|e| e.label.clone()).collect();
            let params = SvmParams::with_c(svm_c);
            let train = matrix.select(&rows, &rows);
            let (k, kind) = match matrix.kind() {
                SimilarityKind::GakKernel => {
                    matrix.check_psd()?;
                    (train, KernelKind::Precomputed)
                }
                SimilarityKind::DtwProximity => (ppf_kernel_rows(&train, &train), KernelKind::LinearOnVectors),
            };
            let mut model = train_precomputed(&k, &labels, &params, kind)?;
            model.train_ids = rows.iter().map(|&r| matrix.ids()[r].clone()).collect();
            fs::write(&out, model.to_text())?;
            println!("trained {} classes on {} sequences", model.classes.len(), rows.len());
        }
        Command::Predict {
            model,
            kernel,
            all,
            out,
        } => {
            let text = fs::read_to_string(&model).map_err(|e| Error::from(e).in_path(&model))?;
            let model: SvmModel = text.parse()?;
            let matrix = read_matrix(&kernel)?;
            let index: HashMap<&str, usize> = matrix.ids().iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
            let cols = model
                .train_ids
                .iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::ShapeMismatch(format!("training sequence {id} is not in the kernel")))
                })
                .collect::<gramtraj::Result<Vec<_>>>()?;
            let rows: Vec<usize> = (0..matrix.len()).filter(|r| all || !cols.contains(r)).collect();
            let kernel_rows = match model.kernel_kind {
                KernelKind::Precomputed => matrix.select(&rows, &cols),
                KernelKind::LinearOnVectors => {
                    ppf_kernel_rows(&matrix.select(&rows, &cols), &matrix.select(&cols, &cols))
                }
            };
            let predicted = model.predict(&kernel_rows)?;
            let mut csv = String::from("id,predicted\n");
            for (&r, p) in rows.iter().zip(&predicted) {
                csv.push_str(&format!("{},{p}\n", matrix.ids()[r]));
            }
            match out {
                Some(path) => fs::write(path, csv)?,
                None => print!("{csv}"),
            }
        }
        Command::Evaluate { manifest, run, out } => {
            let config = run.config();
            let dataset = load_manifest(&manifest, &config.load)?;
            let result = pipeline::evaluate(&dataset.trajectories, &dataset.ids, &config)?;
            let dir = RunDir::create(&out)?;
            dir.write_config(&config, &pipeline::manifest_hash(&manifest)?)?;
            dir.write_kernel(&result.matrix)?;
            dir.write_report(&result.report)?;
            println!("accuracy {:.4}", result.report.accuracy);
        }
        Command::Synth {
            classes,
            per_class,
            frames,
            landmarks,
            noise,
            subjects,
            seed,
            out,
        } => {
            let config = SynthConfig {
                classes,
                per_class,
                frames,
                landmarks,
                noise,
                seed,
                subjects,
            };
            validate_synth(&config)?;
            let path = write_synthetic(&config, &out)?;
            println!("{}", path.display());
        }
        Command::Bench {
            manifest,
            frames,
            repetitions,
            run,
            out,
        } => {
            let config = run.config();
            let trajectories = match manifest {
                Some(m) => load_manifest(&m, &config.load)?.trajectories,
                None => {
                    synthetic_dataset(&SynthConfig {
                        classes: 2,
                        per_class: 3,
                        frames,
                        seed: config.seed,
                        ..SynthConfig::default()
                    })?
                    .trajectories
                }
            };
            let report = pipeline::bench_alignment(&trajectories, &config, repetitions)?;
            println!(
                "general {:.6}s\nd2 {:.6}s\nratio {:.4}",
                report.general_seconds, report.d2_seconds, report.ratio
            );
            if let Some(out) = out {
                fs::create_dir_all(&out)?;
                fs::write(
                    out.join("bench.csv"),
                    format!(
                        "metric,median_seconds\ngeneral,{}\nd2,{}\n",
                        report.general_seconds, report.d2_seconds
                    ),
                )?;
                fs::write(out.join("bench.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            }
        }
    }
    Ok(())
}

fn validate_synth(config: &SynthConfig) -> gramtraj::Result<()> {
    if config.classes == 0 || config.per_class == 0 || config.frames == 0 {
        return Err(Error::InvalidParameter("classes, per-class and frames must be positive".into()));
    }
    if config.landmarks < 3 {
        return Err(Error::InvalidParameter("need at least 3 landmarks".into()));
    }
    if !(config.noise >= 0.0 && config.noise.is_finite()) {
        return Err(Error::InvalidParameter("noise must be a finite non-negative number".into()));
    }
    Ok(())
}

fn read_matrix(path: &Path) -> gramtraj::Result<SimilarityMatrix> {
    let file = fs::File::open(path).map_err(|e| Error::from(e).in_path(path))?;
    SimilarityMatrix::read_csv(file).map_err(|e| e.in_path(path))
}

trait InPath {
    fn in_path(self, path: &Path) -> Error;
}

impl InPath for Error {
    fn in_path(self, path: &Path) -> Error {
        Error::File {
            path: path.to_path_buf(),
            source: Box::new(self),
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::File { source, .. } | Error::Pair { source, .. } => exit_code(source),
        Error::InvalidParameter(_) | Error::DimensionError(_) => 2,
        e if e.is_data_error() => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
