//! End-to-end runs: curve fitting, similarity matrix, SVM evaluation, run
//! directories and alignment timing benchmarks.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::{build_similarity_matrix, AlignMethod, FrameMetric, GakParams, SimilarityMatrix};
use crate::curve::{fit_blended_curve_with, resample_curve, FitOptions, Trajectory};
use crate::error::{Error, Result};
use crate::skeleton::{DatasetManifest, LoadOptions};
use crate::svm::{cross_validate, EvalReport, Protocol, StageTimings, SvmParams};

/// Sequence alignment used to build the similarity matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Align {
    Gak,
    Dtw,
}

impl std::str::FromStr for Align {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gak" => Ok(Align::Gak),
            "dtw" => Ok(Align::Dtw),
            other => Err(Error::InvalidParameter(format!("unknown alignment {other:?}"))),
        }
    }
}

/// Fully resolved run settings; a copy is written into every run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub metric: FrameMetric,
    pub align: Align,
    pub sigma: f64,
    pub lambda: f64,
    pub curve_fit: bool,
    /// Number of uniformly spaced samples taken from each fitted curve.
    pub resample: Option<usize>,
    /// Restrict each anchor's spline to this many neighbours on each side.
    pub window: Option<usize>,
    pub svm_c: f64,
    pub protocol: Protocol,
    pub workers: usize,
    pub seed: u64,
    pub normalize: bool,
    pub squared_exponent: bool,
    pub log_space: bool,
    pub load: LoadOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            metric: FrameMetric::General,
            align: Align::Gak,
            sigma: 1.0,
            lambda: 1.0,
            curve_fit: false,
            resample: None,
            window: None,
            svm_c: 1.0,
            protocol: Protocol::Loo,
            workers: 1,
            seed: 0,
            normalize: false,
            squared_exponent: false,
            log_space: true,
            load: LoadOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn align_method(&self) -> Result<AlignMethod> {
        Ok(match self.align {
            Align::Gak => {
                let params = GakParams {
                    sigma: self.sigma,
                    log_space: self.log_space,
                    squared_exponent: self.squared_exponent,
                    normalize: self.normalize,
                };
                params.validate()?;
                AlignMethod::Gak(params)
            }
            Align::Dtw => AlignMethod::Dtw,
        })
    }

    /// Checks flag combinations against a dataset.
    pub fn validate(&self, trajectories: &[Trajectory]) -> Result<()> {
        self.align_method()?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.resample.is_some() && !self.curve_fit {
            return Err(Error::InvalidParameter("--resample requires curve fitting".into()));
        }
        if self.resample.is_some_and(|m| m < 2) {
            return Err(Error::InvalidParameter("--resample needs at least 2 samples".into()));
        }
        if let Some(first) = trajectories.first() {
            self.metric.check_dimension(first.d())?;
        }
        if self.protocol == Protocol::Loao {
            if let Some(i) = trajectories.iter().position(|t| t.subject.is_none()) {
                return Err(Error::MissingSubjectIds(i));
            }
        }
        Ok(())
    }
}

/// Applies curve fitting (and resampling) to every sequence when enabled.
pub fn prepare_trajectories(trajectories: &[Trajectory], config: &RunConfig) -> Result<Vec<Trajectory>> {
    if !config.curve_fit {
        return Ok(trajectories.to_vec());
    }
    let options = FitOptions {
        lambda: config.lambda,
        window: config.window,
    };
    trajectories
        .par_iter()
        .map(|t| {
            let curve = fit_blended_curve_with(t, &options)?;
            let mut fitted = match config.resample {
                Some(m) => resample_curve(&curve, m)?,
                None => curve.at_anchor_times()?,
            };
            fitted.label = t.label.clone();
            fitted.subject = t.subject.clone();
            Ok(fitted)
        })
        .collect()
}

/// Similarity matrix of the prepared sequences, labelled with `ids`.
pub fn similarity_matrix(trajectories: &[Trajectory], ids: &[String], config: &RunConfig) -> Result<SimilarityMatrix> {
    build_similarity_matrix(trajectories, config.align_method()?, config.metric, config.workers)?.with_ids(ids.to_vec())
}

/// Everything an evaluation produces.
#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub matrix: SimilarityMatrix,
    pub report: EvalReport,
}

/// Fits, aligns and cross-validates; timings are per-sequence averages.
pub fn evaluate(trajectories: &[Trajectory], ids: &[String], config: &RunConfig) -> Result<EvalOutput> {
    config.validate(trajectories)?;
    let m = trajectories.len().max(1) as f64;
    let t0 = Instant::now();
    let prepared = prepare_trajectories(trajectories, config)?;
    let t1 = Instant::now();
    let matrix = similarity_matrix(&prepared, ids, config)?;
    let t2 = Instant::now();
    let labels: Vec<String> = prepared.iter().map(|t| t.label.clone().unwrap_or_default()).collect();
    let subjects: Vec<Option<String>> = prepared.iter().map(|t| t.subject.clone()).collect();
    let mut report = cross_validate(
        &matrix,
        &labels,
        Some(&subjects),
        config.protocol,
        &SvmParams::with_c(config.svm_c),
    )?;
    let t3 = Instant::now();
    report.timings = StageTimings {
        curve_fitting: if config.curve_fit { (t1 - t0).as_secs_f64() / m } else { 0.0 },
        alignment: (t2 - t1).as_secs_f64() / m,
        classification: (t3 - t2).as_secs_f64() / m,
    };
    Ok(EvalOutput { matrix, report })
}

/// SHA-256 over the manifest text and the bytes of every file it references.
pub fn manifest_hash(manifest_path: &Path) -> Result<String> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let mut hasher = Sha256::new();
    hasher.update(fs::read(manifest_path)?);
    for entry in &manifest.entries {
        let path = manifest.resolve(entry);
        let mut files = if path.is_dir() {
            fs::read_dir(&path)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<Vec<_>>>()?
        } else {
            vec![path]
        };
        files.sort();
        for f in files {
            hasher.update(f.to_string_lossy().as_bytes());
            hasher.update(fs::read(&f).map_err(|e| Error::from(e).in_file(&f))?);
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Output directory of one run.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        fs::create_dir_all(&path)?;
        Ok(Self { path })
    }

    pub fn write_config(&self, config: &RunConfig, manifest_hash: &str) -> Result<()> {
        fs::write(self.path.join("config.json"), serde_json::to_string_pretty(config)? + "\n")?;
        fs::write(self.path.join("manifest.sha256"), format!("{manifest_hash}\n"))?;
        Ok(())
    }

    pub fn write_kernel(&self, matrix: &SimilarityMatrix) -> Result<PathBuf> {
        let path = self.path.join("kernel.csv");
        matrix.write_csv(fs::File::create(&path)?)?;
        fs::write(
            self.path.join("kernel.json"),
            serde_json::to_string_pretty(&serde_json::json!({
                "kind": matrix.kind().as_str(),
                "log_scale": matrix.log_scale,
                "size": matrix.len(),
            }))? + "\n",
        )?;
        Ok(path)
    }

    pub fn write_report(&self, report: &EvalReport) -> Result<()> {
        fs::write(self.path.join("accuracy.txt"), format!("{}\n", report.accuracy))?;
        fs::write(self.path.join("confusion.csv"), report.confusion_csv())?;
        let t = &report.timings;
        fs::write(
            self.path.join("timing.csv"),
            format!(
                "stage,seconds_per_sequence\ncurve_fitting,{}\nalignment,{}\nclassification,{}\n",
                t.curve_fitting, t.alignment, t.classification
            ),
        )?;
        fs::write(self.path.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
        Ok(())
    }
}

/// Median alignment times of the two frame metrics on the same data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub general_seconds: f64,
    pub d2_seconds: f64,
    pub ratio: f64,
    pub repetitions: usize,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Times similarity-matrix construction with the general and the 2D metric.
pub fn bench_alignment(trajectories: &[Trajectory], config: &RunConfig, repetitions: usize) -> Result<BenchReport> {
    FrameMetric::D2Closed.check_dimension(trajectories.first().ok_or(Error::EmptySequence)?.d())?;
    let method = config.align_method()?;
    let time = |metric: FrameMetric| -> Result<f64> {
        let mut samples = Vec::with_capacity(repetitions);
        for _ in 0..repetitions.max(1) {
            let start = Instant::now();
            build_similarity_matrix(trajectories, method, metric, config.workers)?;
            samples.push(start.elapsed().as_secs_f64());
        }
        Ok(median(&mut samples))
    };
    // warm-up so neither side pays for first-touch allocation
    build_similarity_matrix(&trajectories[..1], method, FrameMetric::General, 1)?;
    let general_seconds = time(FrameMetric::General)?;
    let d2_seconds = time(FrameMetric::D2Closed)?;
    Ok(BenchReport {
        general_seconds,
        d2_seconds,
        ratio: d2_seconds / general_seconds,
        repetitions: repetitions.max(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::SimilarityKind;
    use crate::synth::{synthetic_dataset, SynthConfig};

    fn data(noise: f64) -> (Vec<Trajectory>, Vec<String>) {
        let ds = synthetic_dataset(&SynthConfig {
            classes: 3,
            per_class: 4,
            frames: 16,
            noise,
            ..SynthConfig::default()
        })
        .unwrap();
        (ds.trajectories, ds.ids)
    }

    #[test]
    fn config_validation() {
        let (t, _) = data(0.05);
        let ok = RunConfig::default();
        ok.validate(&t).unwrap();
        let bad = RunConfig {
            resample: Some(10),
            ..RunConfig::default()
        };
        assert!(bad.validate(&t).is_err());
        let bad = RunConfig {
            sigma: 0.0,
            ..RunConfig::default()
        };
        assert!(bad.validate(&t).is_err());
        let mut no_subject = t.clone();
        no_subject[2].subject = None;
        let loao = RunConfig {
            protocol: Protocol::Loao,
            ..RunConfig::default()
        };
        assert!(matches!(loao.validate(&no_subject), Err(Error::MissingSubjectIds(2))));
        let json = serde_json::to_string(&ok).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), ok);
    }

    #[test]
    fn noiseless_within_class_similarity_dominates() {
        let (t, ids) = data(0.0);
        let config = RunConfig {
            normalize: true,
            ..RunConfig::default()
        };
        let k = similarity_matrix(&t, &ids, &config).unwrap();
        let labels: Vec<_> = t.iter().map(|t| t.label.clone()).collect();
        for i in 0..t.len() {
            for j in 0..t.len() {
                for l in 0..t.len() {
                    if labels[i] == labels[j] && labels[i] != labels[l] {
                        assert!(k.values()[(i, j)] >= k.values()[(i, l)], "{i} {j} {l}");
                    }
                }
            }
        }
    }

    #[test]
    fn evaluation_is_deterministic_across_workers() {
        let (t, ids) = data(0.05);
        let config = RunConfig {
            curve_fit: true,
            lambda: 10.0,
            ..RunConfig::default()
        };
        let a = evaluate(&t, &ids, &config).unwrap();
        let b = evaluate(&t, &ids, &RunConfig { workers: 4, ..config }).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert_eq!(a.report.folds, b.report.folds);
        assert!(a.report.timings.curve_fitting > 0.0);
    }

    #[test]
    fn dtw_and_loao_run() {
        let (t, ids) = data(0.05);
        let config = RunConfig {
            align: Align::Dtw,
            protocol: Protocol::Loao,
            ..RunConfig::default()
        };
        let out = evaluate(&t, &ids, &config).unwrap();
        assert_eq!(out.matrix.kind(), SimilarityKind::DtwProximity);
        assert_eq!(out.report.folds.len(), 4);
    }

    #[test]
    fn resampled_curves_have_requested_length() {
        let (t, _) = data(0.05);
        let config = RunConfig {
            curve_fit: true,
            resample: Some(9),
            ..RunConfig::default()
        };
        let p = prepare_trajectories(&t, &config).unwrap();
        assert!(p.iter().all(|p| p.len() == 9 && p.label.is_some()));
    }

    #[test]
    fn run_dir_contents() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = crate::synth::write_synthetic(
            &SynthConfig {
                classes: 2,
                per_class: 2,
                frames: 6,
                ..SynthConfig::default()
            },
            &dir.path().join("data"),
        )
        .unwrap();
        let h1 = manifest_hash(&manifest).unwrap();
        assert_eq!(h1, manifest_hash(&manifest).unwrap());
        assert_eq!(h1.len(), 64);
        let (t, ids) = data(0.05);
        let out = evaluate(&t, &ids, &RunConfig::default()).unwrap();
        let run = RunDir::create(dir.path().join("run")).unwrap();
        run.write_config(&RunConfig::default(), &h1).unwrap();
        run.write_kernel(&out.matrix).unwrap();
        run.write_report(&out.report).unwrap();
        for f in ["config.json", "manifest.sha256", "kernel.csv", "kernel.json", "accuracy.txt", "confusion.csv", "timing.csv"] {
            assert!(run.path.join(f).exists(), "{f}");
        }
        let back = SimilarityMatrix::read_csv(fs::File::open(run.path.join("kernel.csv")).unwrap()).unwrap();
        assert_eq!(back.values(), out.matrix.values());
    }

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
