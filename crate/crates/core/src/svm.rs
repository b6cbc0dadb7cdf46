//! One-vs-all kernel SVMs trained by SMO on precomputed kernels, the
//! pairwise-proximity variant over DTW distances, and cross-validation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::alignment::{SimilarityKind, SimilarityMatrix};
use crate::error::{Error, Result};

/// SMO settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    /// Box constraint on the dual variables.
    pub c: f64,
    /// Stop once the maximal KKT violation drops to this value.
    pub tol: f64,
    /// Upper bound on SMO iterations per binary problem.
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-3,
            max_iter: 1_000_000,
        }
    }
}

impl SvmParams {
    pub fn with_c(c: f64) -> Self {
        Self { c, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParameter(format!("svm c must be positive, got {}", self.c)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("svm tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// What the training kernel was computed from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    /// A precomputed (GAK) kernel.
    Precomputed,
    /// Inner products of proximity vectors.
    LinearOnVectors,
}

impl KernelKind {
    fn as_str(self) -> &'static str {
        match self {
            KernelKind::Precomputed => "precomputed",
            KernelKind::LinearOnVectors => "linear_on_vectors",
        }
    }
}

/// Outcome of one binary SMO run.
#[derive(Clone, Debug)]
pub struct BinarySolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// Final maximal KKT violation `m(α) − M(α)`.
    pub violation: f64,
    /// Smallest dual-objective increase over all iterations.
    pub min_gain: f64,
    pub converged: bool,
}

/// Solves `max Σα − ½ Σ α_i α_j y_i y_j K_ij` s.t. `0 ≤ α ≤ c`, `Σ α y = 0`.
///
/// Working pairs are the maximal violating pair; each step is the exact
/// line maximum clipped to the box.
pub fn solve_binary(kernel: &DMatrix<f64>, y: &[f64], params: &SvmParams) -> BinarySolution {
    let l = y.len();
    let c = params.c;
    let mut alpha = vec![0.0; l];
    // f_t = Σ_s α_s y_s K_ts
    let mut f = vec![0.0; l];
    let mut iterations = 0;
    let mut min_gain = f64::INFINITY;

    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt > 0.0 && a > 0.0) || (yt < 0.0 && a < c);

    let (violation, up_max, low_min) = loop {
        let mut i = None;
        let mut j = None;
        let (mut m, mut big_m) = (f64::NEG_INFINITY, f64::INFINITY);
        for t in 0..l {
            let g = y[t] - f[t];
            if in_up(alpha[t], y[t]) && g > m {
                m = g;
                i = Some(t);
            }
            if in_low(alpha[t], y[t]) && g < big_m {
                big_m = g;
                j = Some(t);
            }
        }
        let (Some(i), Some(j)) = (i, j) else {
            break (0.0, m, big_m);
        };
        let gap = m - big_m;
        if gap <= params.tol || iterations >= params.max_iter {
            break (gap, m, big_m);
        }
        iterations += 1;
        let eta = (kernel[(i, i)] + kernel[(j, j)] - 2.0 * kernel[(i, j)]).max(1e-12);
        let room_i = if y[i] > 0.0 { c - alpha[i] } else { alpha[i] };
        let room_j = if y[j] > 0.0 { alpha[j] } else { c - alpha[j] };
        let step = (gap / eta).min(room_i).min(room_j);
        min_gain = min_gain.min(step * gap - 0.5 * eta * step * step);
        alpha[i] = (alpha[i] + y[i] * step).clamp(0.0, c);
        alpha[j] = (alpha[j] - y[j] * step).clamp(0.0, c);
        for (t, ft) in f.iter_mut().enumerate() {
            *ft += step * (kernel[(t, i)] - kernel[(t, j)]);
        }
    };

    let free: Vec<f64> = (0..l)
        .filter(|&t| alpha[t] > 0.0 && alpha[t] < c)
        .map(|t| y[t] - f[t])
        .collect();
    let bias = if !free.is_empty() {
        free.iter().sum::<f64>() / free.len() as f64
    } else if up_max.is_finite() && low_min.is_finite() {
        0.5 * (up_max + low_min)
    } else if y.iter().all(|&v| v > 0.0) {
        1.0
    } else {
        -1.0
    };
    if iterations >= params.max_iter && violation > params.tol {
        log::warn!("SMO stopped after {iterations} iterations with KKT violation {violation:.3e}");
    }
    BinarySolution {
        alpha,
        bias,
        iterations,
        violation,
        min_gain: if min_gain.is_finite() { min_gain } else { 0.0 },
        converged: violation <= params.tol,
    }
}

/// Sparse binary decision function `Σ coef_s K(x, s) + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    pub support: Vec<usize>,
    /// `α_s y_s` for each support index.
    pub coef: Vec<f64>,
    pub bias: f64,
}

impl BinaryMachine {
    fn decision(&self, row: &[f64]) -> f64 {
        self.support.iter().zip(&self.coef).map(|(&s, &a)| a * row[s]).sum::<f64>() + self.bias
    }
}

/// One-vs-all SVM over a training set of `train_ids.len()` sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub classes: Vec<String>,
    pub machines: Vec<BinaryMachine>,
    pub c: f64,
    pub kernel_kind: KernelKind,
    pub train_ids: Vec<String>,
}

/// Sorted distinct labels and each sample's class index.
pub fn encode_labels(labels: &[String]) -> (Vec<String>, Vec<usize>) {
    let classes: Vec<String> = labels
        .iter()
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let encoded = labels.iter().map(|l| index[l.as_str()]).collect();
    (classes, encoded)
}

/// Trains one binary machine per class on a precomputed training kernel.
pub fn train_precomputed(
    kernel: &DMatrix<f64>,
    labels: &[String],
    params: &SvmParams,
    kind: KernelKind,
) -> Result<SvmModel> {
    params.validate()?;
    let l = labels.len();
    if kernel.shape() != (l, l) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} kernel for {l} labels",
            kernel.nrows(),
            kernel.ncols()
        )));
    }
    if l == 0 {
        return Err(Error::DegenerateClass("<none>".into()));
    }
    let (classes, encoded) = encode_labels(labels);
    let machines = (0..classes.len())
        .map(|class| {
            let y: Vec<f64> = encoded.iter().map(|&e| if e == class { 1.0 } else { -1.0 }).collect();
            let sol = solve_binary(kernel, &y, params);
            let (support, coef) = sol
                .alpha
                .iter()
                .enumerate()
                .filter(|(_, &a)| a > 0.0)
                .map(|(t, &a)| (t, a * y[t]))
                .unzip();
            BinaryMachine {
                support,
                coef,
                bias: sol.bias,
            }
        })
        .collect();
    Ok(SvmModel {
        classes,
        machines,
        c: params.c,
        kernel_kind: kind,
        train_ids: (0..l).map(|i| i.to_string()).collect(),
    })
}

/// Trains on a GAK kernel matrix after checking it is PSD within tolerance.
pub fn train_svm(kernel: &SimilarityMatrix, labels: &[String], c: f64) -> Result<SvmModel> {
    if kernel.kind() != SimilarityKind::GakKernel {
        return Err(Error::InvalidParameter(
            "train_svm expects a GAK kernel; use train_ppf_svm for DTW proximities".into(),
        ));
    }
    kernel.check_psd()?;
    let mut model = train_precomputed(kernel.values(), labels, &SvmParams::with_c(c), KernelKind::Precomputed)?;
    model.train_ids = kernel.ids().to_vec();
    Ok(model)
}

/// Linear kernel between proximity vectors: `rows · trainᵀ`.
pub fn ppf_kernel_rows(rows: &DMatrix<f64>, train: &DMatrix<f64>) -> DMatrix<f64> {
    rows * train.transpose()
}

/// Linear SVM on the rows of a DTW proximity matrix.
pub fn train_ppf_svm(p: &SimilarityMatrix, labels: &[String], c: f64) -> Result<SvmModel> {
    if p.kind() != SimilarityKind::DtwProximity {
        return Err(Error::InvalidParameter("train_ppf_svm expects a DTW proximity matrix".into()));
    }
    let kernel = ppf_kernel_rows(p.values(), p.values());
    let mut model = train_precomputed(&kernel, labels, &SvmParams::with_c(c), KernelKind::LinearOnVectors)?;
    model.train_ids = p.ids().to_vec();
    Ok(model)
}

impl SvmModel {
    pub fn train_size(&self) -> usize {
        self.train_ids.len()
    }

    /// Test×class matrix of one-vs-all decision values.
    pub fn decision_values(&self, kernel_rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if kernel_rows.ncols() != self.train_size() {
            return Err(Error::ShapeMismatch(format!(
                "kernel rows have {} columns, model was trained on {}",
                kernel_rows.ncols(),
                self.train_size()
            )));
        }
        let mut out = DMatrix::zeros(kernel_rows.nrows(), self.machines.len());
        let mut row = vec![0.0; kernel_rows.ncols()];
        for r in 0..kernel_rows.nrows() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = kernel_rows[(r, c)];
            }
            for (k, m) in self.machines.iter().enumerate() {
                out[(r, k)] = m.decision(&row);
            }
        }
        Ok(out)
    }

    /// Class index per row: argmax of decision values, ties to the lowest index.
    pub fn predict_indices(&self, kernel_rows: &DMatrix<f64>) -> Result<Vec<usize>> {
        let dv = self.decision_values(kernel_rows)?;
        Ok((0..dv.nrows())
            .map(|r| {
                let mut best = 0;
                for k in 1..dv.ncols() {
                    if dv[(r, k)] > dv[(r, best)] {
                        best = k;
                    }
                }
                best
            })
            .collect())
    }

    pub fn predict(&self, kernel_rows: &DMatrix<f64>) -> Result<Vec<String>> {
        Ok(self
            .predict_indices(kernel_rows)?
            .into_iter()
            .map(|k| self.classes[k].clone())
            .collect())
    }

    /// Serializes the model in a versioned line-oriented text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "gramtraj-svm 1");
        let _ = writeln!(s, "kernel {}", self.kernel_kind.as_str());
        let _ = writeln!(s, "c {}", self.c);
        let _ = writeln!(s, "classes {}", self.classes.len());
        for c in &self.classes {
            let _ = writeln!(s, "{c}");
        }
        let _ = writeln!(s, "train {}", self.train_ids.len());
        for id in &self.train_ids {
            let _ = writeln!(s, "{id}");
        }
        for (k, m) in self.machines.iter().enumerate() {
            let _ = writeln!(s, "machine {k} {} {}", m.bias, m.support.len());
            for (i, a) in m.support.iter().zip(&m.coef) {
                let _ = writeln!(s, "{i} {a}");
            }
        }
        s
    }
}

impl FromStr for SvmModel {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::MalformedModel(msg.to_string());
        let mut lines = text.lines();
        let mut next = || lines.next().ok_or_else(|| bad("unexpected end of file"));
        fn field<'a>(line: &'a str, key: &str) -> Result<&'a str> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| Error::MalformedModel(format!("expected {key:?}, got {line:?}")))
        }
        fn num<T: FromStr>(s: &str) -> Result<T> {
            s.trim().parse().map_err(|_| Error::MalformedModel(format!("bad number {s:?}")))
        }
        if next()? != "gramtraj-svm 1" {
            return Err(bad("unsupported header or version"));
        }
        let kernel_kind = match field(next()?, "kernel")? {
            "precomputed" => KernelKind::Precomputed,
            "linear_on_vectors" => KernelKind::LinearOnVectors,
            other => return Err(bad(&format!("unknown kernel kind {other:?}"))),
        };
        let c: f64 = num(field(next()?, "c")?)?;
        let nclass: usize = num(field(next()?, "classes")?)?;
        let classes = (0..nclass).map(|_| next().map(str::to_string)).collect::<Result<Vec<_>>>()?;
        let ntrain: usize = num(field(next()?, "train")?)?;
        let train_ids = (0..ntrain).map(|_| next().map(str::to_string)).collect::<Result<Vec<_>>>()?;
        let mut machines = Vec::with_capacity(nclass);
        for k in 0..nclass {
            let head: Vec<&str> = field(next()?, "machine")?.split(' ').collect();
            if head.len() != 3 || num::<usize>(head[0])? != k {
                return Err(bad("malformed machine header"));
            }
            let bias: f64 = num(head[1])?;
            let nsv: usize = num(head[2])?;
            let mut support = Vec::with_capacity(nsv);
            let mut coef = Vec::with_capacity(nsv);
            for _ in 0..nsv {
                let line = next()?;
                let (i, a) = line.split_once(' ').ok_or_else(|| bad("malformed support line"))?;
                let i: usize = num(i)?;
                if i >= ntrain {
                    return Err(bad("support index out of range"));
                }
                support.push(i);
                coef.push(num(a)?);
            }
            machines.push(BinaryMachine { support, coef, bias });
        }
        Ok(SvmModel {
            classes,
            machines,
            c,
            kernel_kind,
            train_ids,
        })
    }
}

/// Cross-validation protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Leave one sequence out.
    Loo,
    /// Leave one actor (subject) out.
    Loao,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loo" => Ok(Protocol::Loo),
            "loao" => Ok(Protocol::Loao),
            other => Err(Error::InvalidParameter(format!("unknown protocol {other:?}"))),
        }
    }
}

/// Test indices of each fold.
pub fn folds(protocol: Protocol, len: usize, subjects: Option<&[Option<String>]>) -> Result<Vec<Vec<usize>>> {
    match protocol {
        Protocol::Loo => Ok((0..len).map(|i| vec![i]).collect()),
        Protocol::Loao => {
            let subjects = subjects.ok_or(Error::MissingSubjectIds(0))?;
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, s) in subjects.iter().enumerate() {
                let s = s.as_deref().ok_or(Error::MissingSubjectIds(i))?;
                groups.entry(s).or_default().push(i);
            }
            Ok(groups.into_values().collect())
        }
    }
}

/// Wall-clock seconds spent per pipeline stage, averaged per sequence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub curve_fitting: f64,
    pub alignment: f64,
    pub classification: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub test: Vec<usize>,
    pub predicted: Vec<usize>,
}

/// Aggregated cross-validation results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub classes: Vec<String>,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<usize>>,
    pub folds: Vec<FoldResult>,
    pub timings: StageTimings,
}

impl EvalReport {
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("true\\predicted");
        for c in &self.classes {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            s.push_str(c);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Cross-validates an SVM on a precomputed similarity matrix.
///
/// GAK kernels are sliced per fold; DTW proximity matrices are turned into
/// proximity vectors against each fold's training sequences.
pub fn cross_validate(
    sim: &SimilarityMatrix,
    labels: &[String],
    subjects: Option<&[Option<String>]>,
    protocol: Protocol,
    params: &SvmParams,
) -> Result<EvalReport> {
    let m = sim.len();
    if labels.len() != m {
        return Err(Error::ShapeMismatch(format!("{} labels for {m} sequences", labels.len())));
    }
    if sim.kind() == SimilarityKind::GakKernel {
        sim.check_psd()?;
    }
    let (classes, encoded) = encode_labels(labels);
    let mut confusion = vec![vec![0usize; classes.len()]; classes.len()];
    let mut results = Vec::new();
    for test in folds(protocol, m, subjects)? {
        let train: Vec<usize> = (0..m).filter(|i| !test.contains(i)).collect();
        if train.is_empty() {
            return Err(Error::InvalidParameter("a fold leaves no training data".into()));
        }
        let train_labels: Vec<String> = train.iter().map(|&i| labels[i].clone()).collect();
        let (train_kernel, test_rows, kind) = match sim.kind() {
            SimilarityKind::GakKernel => (sim.select(&train, &train), sim.select(&test, &train), KernelKind::Precomputed),
            SimilarityKind::DtwProximity => {
                let feats = sim.select(&train, &train);
                let test_feats = sim.select(&test, &train);
                (
                    ppf_kernel_rows(&feats, &feats),
                    ppf_kernel_rows(&test_feats, &feats),
                    KernelKind::LinearOnVectors,
                )
            }
        };
        let model = train_precomputed(&train_kernel, &train_labels, params, kind)?;
        let predicted: Vec<usize> = model
            .predict(&test_rows)?
            .iter()
            .map(|p| classes.iter().position(|c| c == p).expect("fold classes are a subset"))
            .collect();
        for (&t, &p) in test.iter().zip(&predicted) {
            confusion[encoded[t]][p] += 1;
        }
        results.push(FoldResult { test, predicted });
    }
    let correct: usize = (0..classes.len()).map(|c| confusion[c][c]).sum();
    Ok(EvalReport {
        accuracy: correct as f64 / m as f64,
        classes,
        confusion,
        folds: results,
        timings: StageTimings::default(),
    })
}
