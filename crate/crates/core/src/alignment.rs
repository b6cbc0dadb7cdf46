//! Sequence comparison: frame cross-distances, the Global Alignment Kernel,
//! dynamic time warping, and dataset-level similarity matrices.

use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curve::Trajectory;
use crate::error::{Error, Result};
use crate::manifold::{closed_form_2d, cross_2d, distance};

/// How the distance between two frames is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameMetric {
    /// Procrustes alignment through an SVD; any dimension.
    #[default]
    General,
    /// Closed form for planar data (both rotation and reflection branches).
    D2Closed,
    /// Rotation-only closed form for planar data.
    D2RotationOnly,
}

impl FrameMetric {
    pub fn requires_planar(self) -> bool {
        !matches!(self, FrameMetric::General)
    }

    pub fn check_dimension(self, d: usize) -> Result<()> {
        if self.requires_planar() && d != 2 {
            return Err(Error::DimensionError(d));
        }
        Ok(())
    }
}

impl FromStr for FrameMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" | "m1" => Ok(FrameMetric::General),
            "d2" | "d2_closed" | "m2" => Ok(FrameMetric::D2Closed),
            "d2_rotation_only" => Ok(FrameMetric::D2RotationOnly),
            other => Err(Error::InvalidParameter(format!("unknown metric {other:?}"))),
        }
    }
}

/// τ₁×τ₂ matrix of frame-to-frame distances.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossDistanceMatrix {
    values: DMatrix<f64>,
}

impl CrossDistanceMatrix {
    /// Wraps precomputed distances; entries must be finite and nonnegative.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter(
                "distances must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn row_len(&self) -> usize {
        self.values.nrows()
    }

    pub fn col_len(&self) -> usize {
        self.values.ncols()
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(&self.values * alpha)
    }
}

fn check_pair(seq1: &Trajectory, seq2: &Trajectory, metric: FrameMetric) -> Result<()> {
    if (seq1.n(), seq1.d()) != (seq2.n(), seq2.d()) {
        return Err(Error::DimensionMismatch(format!(
            "sequences of {}x{} and {}x{} frames",
            seq1.n(),
            seq1.d(),
            seq2.n(),
            seq2.d()
        )));
    }
    metric.check_dimension(seq1.d())
}

/// `D(i, j)` = distance between frame `i` of `seq1` and frame `j` of `seq2`.
pub fn cross_distance_matrix(
    seq1: &Trajectory,
    seq2: &Trajectory,
    metric: FrameMetric,
) -> Result<CrossDistanceMatrix> {
    check_pair(seq1, seq2, metric)?;
    let (a, b) = (seq1.points(), seq2.points());
    let mut values = DMatrix::zeros(a.len(), b.len());
    match metric {
        FrameMetric::General => {
            for (i, zi) in a.iter().enumerate() {
                for (j, zj) in b.iter().enumerate() {
                    values[(i, j)] = distance(zi, zj)?;
                }
            }
        }
        FrameMetric::D2Closed | FrameMetric::D2RotationOnly => {
            let rotation_only = metric == FrameMetric::D2RotationOnly;
            let tr_b: Vec<f64> = b.iter().map(|z| z.gram_trace()).collect();
            for (i, zi) in a.iter().enumerate() {
                let tr_i = zi.gram_trace();
                for (j, zj) in b.iter().enumerate() {
                    let m = cross_2d(zi.coords(), zj.coords());
                    values[(i, j)] = closed_form_2d(tr_i, tr_b[j], m, rotation_only);
                }
            }
        }
    }
    Ok(CrossDistanceMatrix { values })
}

/// Parameters of the Global Alignment Kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GakParams {
    /// Bandwidth σ of the local kernel.
    pub sigma: f64,
    /// Run the recursion on logarithms (avoids underflow on long sequences).
    pub log_space: bool,
    /// Use `D²/σ²` in the exponent instead of `D/σ²`.
    pub squared_exponent: bool,
    /// Report `K(x,y) / sqrt(K(x,x) K(y,y))` in similarity matrices.
    pub normalize: bool,
}

impl GakParams {
    pub fn new(sigma: f64) -> Result<Self> {
        let params = Self {
            sigma,
            log_space: true,
            squared_exponent: false,
            normalize: false,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    fn exponent(&self, dist: f64) -> f64 {
        let x = if self.squared_exponent { dist * dist } else { dist };
        x / (self.sigma * self.sigma)
    }

    /// `log k` for a frame distance, with `k̃ = ½ exp(−D/σ²)` and `k = k̃ / (1 − k̃)`.
    pub fn log_local(&self, dist: f64) -> f64 {
        let e = self.exponent(dist);
        let log_half = -std::f64::consts::LN_2 - e;
        log_half - (-0.5 * (-e).exp()).ln_1p()
    }
}

/// Halved Gaussian kernel `k̃` and its transformed version `k = k̃ / (1 − k̃)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalKernel {
    pub halved: DMatrix<f64>,
    pub kernel: DMatrix<f64>,
}

pub fn local_kernel(dmat: &CrossDistanceMatrix, params: &GakParams) -> LocalKernel {
    let halved = dmat.values.map(|d| 0.5 * (-params.exponent(d)).exp());
    let kernel = halved.map(|h| h / (1.0 - h));
    LocalKernel { halved, kernel }
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Global alignment score from precomputed distances, in linear space.
///
/// `M[0][0] = 1`, the rest of the first row and column are 0, and
/// `M[i][j] = (M[i][j−1] + M[i−1][j−1] + M[i−1][j]) · k(i−1, j−1)`; the score is `M[τ₁][τ₂]`.
pub fn gak_linear_from_distances(dmat: &CrossDistanceMatrix, params: &GakParams) -> Result<f64> {
    let (t1, t2) = dmat.values.shape();
    if t1 == 0 || t2 == 0 {
        return Err(Error::EmptySequence);
    }
    let k = local_kernel(dmat, params).kernel;
    let mut prev = vec![0.0; t2 + 1];
    let mut cur = vec![0.0; t2 + 1];
    prev[0] = 1.0;
    for i in 1..=t1 {
        cur[0] = 0.0;
        for j in 1..=t2 {
            // diagonal first, then the commutative sideways pair: transposing D gives the same bits
            cur[j] = (prev[j - 1] + (cur[j - 1] + prev[j])) * k[(i - 1, j - 1)];
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[t2])
}

/// Natural logarithm of the global alignment score, via log-sum-exp.
pub fn gak_log_from_distances(dmat: &CrossDistanceMatrix, params: &GakParams) -> Result<f64> {
    let (t1, t2) = dmat.values.shape();
    if t1 == 0 || t2 == 0 {
        return Err(Error::EmptySequence);
    }
    let ninf = f64::NEG_INFINITY;
    let mut prev = vec![ninf; t2 + 1];
    let mut cur = vec![ninf; t2 + 1];
    prev[0] = 0.0;
    for i in 1..=t1 {
        cur[0] = ninf;
        for j in 1..=t2 {
            let acc = log_add(prev[j - 1], log_add(cur[j - 1], prev[j]));
            cur[j] = acc + params.log_local(dmat.values[(i - 1, j - 1)]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[t2])
}

/// Global alignment similarity of two sequences.
///
/// Returns the natural logarithm of the score when `params.log_space` is set,
/// the score itself otherwise.
pub fn gak_similarity(
    seq1: &Trajectory,
    seq2: &Trajectory,
    params: &GakParams,
    metric: FrameMetric,
) -> Result<f64> {
    params.validate()?;
    let dmat = cross_distance_matrix(seq1, seq2, metric)?;
    if params.log_space {
        gak_log_from_distances(&dmat, params)
    } else {
        gak_linear_from_distances(&dmat, params)
    }
}

/// Largest `τ₁·τ₂` accepted by [`brute_force_ga`].
pub const BRUTE_FORCE_LIMIT: usize = 36;

/// Explicit sum, over every monotone path from the first to the last cell
/// with steps →, ↓ and ↘, of the product of local kernel values on the path.
///
/// Exponential cost; exists to verify the dynamic program.
pub fn brute_force_ga(
    seq1: &Trajectory,
    seq2: &Trajectory,
    params: &GakParams,
    metric: FrameMetric,
) -> Result<f64> {
    params.validate()?;
    let cells = seq1.len() * seq2.len();
    if cells > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(cells));
    }
    let dmat = cross_distance_matrix(seq1, seq2, metric)?;
    brute_force_ga_from_distances(&dmat, params)
}

pub fn brute_force_ga_from_distances(dmat: &CrossDistanceMatrix, params: &GakParams) -> Result<f64> {
    let (t1, t2) = dmat.values.shape();
    if t1 * t2 > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(t1 * t2));
    }
    if t1 == 0 || t2 == 0 {
        return Err(Error::EmptySequence);
    }
    let k = local_kernel(dmat, params).kernel;
    let mut total = 0.0;
    let mut path = vec![(0, 0)];
    enumerate_paths(&mut path, (t1 - 1, t2 - 1), &mut |p| {
        total += p.iter().map(|&(i, j)| k[(i, j)]).product::<f64>();
    });
    Ok(total)
}

fn enumerate_paths(
    path: &mut Vec<(usize, usize)>,
    goal: (usize, usize),
    visit: &mut dyn FnMut(&[(usize, usize)]),
) {
    let (i, j) = *path.last().expect("path starts non-empty");
    if (i, j) == goal {
        visit(path);
        return;
    }
    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
        let next = (i + di, j + dj);
        if next.0 <= goal.0 && next.1 <= goal.1 {
            path.push(next);
            enumerate_paths(path, goal, visit);
            path.pop();
        }
    }
}

/// Classical DTW cost from precomputed distances.
pub fn dtw_from_distances(dmat: &CrossDistanceMatrix) -> Result<f64> {
    let (t1, t2) = dmat.values.shape();
    if t1 == 0 || t2 == 0 {
        return Err(Error::EmptySequence);
    }
    let d = &dmat.values;
    let mut prev = vec![f64::INFINITY; t2];
    let mut cur = vec![f64::INFINITY; t2];
    for i in 0..t1 {
        for j in 0..t2 {
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let left = if j > 0 { cur[j - 1] } else { f64::INFINITY };
                let up = if i > 0 { prev[j] } else { f64::INFINITY };
                let diag = if i > 0 && j > 0 { prev[j - 1] } else { f64::INFINITY };
                left.min(up).min(diag)
            };
            cur[j] = d[(i, j)] + best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[t2 - 1])
}

/// Minimum cumulative frame distance over monotone alignments.
pub fn dtw_distance(seq1: &Trajectory, seq2: &Trajectory, metric: FrameMetric) -> Result<f64> {
    dtw_from_distances(&cross_distance_matrix(seq1, seq2, metric)?)
}

/// Which alignment method fills a similarity matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum AlignMethod {
    Gak(GakParams),
    Dtw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    GakKernel,
    DtwProximity,
}

impl SimilarityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityKind::GakKernel => "gak_kernel",
            SimilarityKind::DtwProximity => "dtw_proximity",
        }
    }
}

/// Dataset-level n_seq×n_seq matrix: a GAK kernel or DTW proximities.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    values: DMatrix<f64>,
    kind: SimilarityKind,
    ids: Vec<String>,
    /// Unnormalized kernels whose exponentials would leave the normal `f64`
    /// range are stored divided by `exp(log_scale)`; zero otherwise.
    pub log_scale: f64,
}

/// Relative tolerance on the most negative eigenvalue of a kernel matrix.
pub const KERNEL_PSD_TOL: f64 = 1e-8;

impl SimilarityMatrix {
    /// Wraps a square matrix, checking the invariants of `kind`.
    pub fn new(values: DMatrix<f64>, kind: SimilarityKind, ids: Vec<String>) -> Result<Self> {
        let n = values.nrows();
        if !values.is_square() || n == 0 {
            return Err(Error::ShapeMismatch(format!(
                "similarity matrix must be square and non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if ids.len() != n {
            return Err(Error::ShapeMismatch(format!("{} ids for {n} rows", ids.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let scale = values.amax();
        let asym = (&values - values.transpose()).amax();
        if asym > 1e-9 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::NotSymmetric(asym));
        }
        if kind == SimilarityKind::DtwProximity
            && (values.diagonal().iter().any(|v| *v != 0.0) || values.iter().any(|v| *v < 0.0))
        {
            return Err(Error::InvalidParameter(
                "proximity matrix needs a zero diagonal and nonnegative entries".into(),
            ));
        }
        Ok(Self {
            values,
            kind,
            ids,
            log_scale: 0.0,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::ShapeMismatch(format!("{} ids for {} rows", ids.len(), self.len())));
        }
        self.ids = ids;
        Ok(self)
    }

    /// Extreme eigenvalues `(min, max)` of the symmetric matrix.
    pub fn eigen_range(&self) -> (f64, f64) {
        let eig = self.values.clone().symmetric_eigenvalues();
        (eig.min(), eig.max())
    }

    /// Fails with `NotPsd` if the minimum eigenvalue is below `−1e-8 · λ_max`.
    pub fn check_psd(&self) -> Result<()> {
        let (min, max) = self.eigen_range();
        if min < -KERNEL_PSD_TOL * max.max(0.0) {
            return Err(Error::NotPsd { min, max });
        }
        Ok(())
    }

    /// Submatrix with the given rows and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |r, c| self.values[(rows[r], cols[c])])
    }

    /// Writes the matrix as CSV: a header `kind,id…` then one `id,value…` row per sequence.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![self.kind.as_str().to_string()];
        header.extend(self.ids.iter().cloned());
        w.write_record(&header)?;
        for (r, id) in self.ids.iter().enumerate() {
            let mut row = vec![id.clone()];
            row.extend(self.values.row(r).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        let kind = match header.get(0) {
            Some("gak_kernel") => SimilarityKind::GakKernel,
            Some("dtw_proximity") => SimilarityKind::DtwProximity,
            other => {
                return Err(Error::MalformedDocument(format!(
                    "unknown similarity kind {other:?}"
                )))
            }
        };
        let ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let n = ids.len();
        let mut data = Vec::with_capacity(n * n);
        let mut row_ids = Vec::with_capacity(n);
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != n + 1 {
                return Err(Error::MalformedDocument(format!(
                    "row with {} fields, expected {}",
                    rec.len(),
                    n + 1
                )));
            }
            row_ids.push(rec[0].to_string());
            for field in rec.iter().skip(1) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::MalformedDocument(format!("bad number {field:?}")))?;
                data.push(v);
            }
        }
        if row_ids != ids {
            return Err(Error::MalformedDocument(
                "row ids do not match the header".into(),
            ));
        }
        Self::new(DMatrix::from_row_slice(n, n, &data), kind, ids)
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))
}

/// Computes every pairwise entry on the upper triangle and mirrors it.
///
/// Entries are computed independently, so the result does not depend on `workers`.
pub fn build_similarity_matrix(
    dataset: &[Trajectory],
    method: AlignMethod,
    metric: FrameMetric,
    workers: usize,
) -> Result<SimilarityMatrix> {
    let first = dataset.first().ok_or(Error::EmptySequence)?;
    if let AlignMethod::Gak(p) = &method {
        p.validate()?;
    }
    metric.check_dimension(first.d())?;
    if let Some(k) = dataset.iter().position(|t| (t.n(), t.d()) != (first.n(), first.d())) {
        return Err(Error::DimensionMismatch(format!(
            "sequence {k} has {}x{} frames, sequence 0 has {}x{}",
            dataset[k].n(),
            dataset[k].d(),
            first.n(),
            first.d()
        )));
    }
    let m = dataset.len();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect();
    let entry = |&(i, j): &(usize, usize)| -> Result<f64> {
        let dmat = cross_distance_matrix(&dataset[i], &dataset[j], metric)?;
        match &method {
            AlignMethod::Dtw => dtw_from_distances(&dmat),
            AlignMethod::Gak(p) if p.log_space => gak_log_from_distances(&dmat, p),
            AlignMethod::Gak(p) => gak_linear_from_distances(&dmat, p).map(f64::ln),
        }
        .map_err(|e| Error::Pair {
            i,
            j,
            source: Box::new(e),
        })
    };
    let entries: Vec<f64> = thread_pool(workers)?
        .install(|| pairs.par_iter().map(entry).collect::<Result<Vec<_>>>())?;

    let mut raw = DMatrix::zeros(m, m);
    for (&(i, j), v) in pairs.iter().zip(entries) {
        raw[(i, j)] = v;
        raw[(j, i)] = v;
    }
    let ids = (0..m).map(|i| i.to_string()).collect();
    match method {
        AlignMethod::Dtw => {
            for i in 0..m {
                raw[(i, i)] = 0.0;
            }
            SimilarityMatrix::new(raw, SimilarityKind::DtwProximity, ids)
        }
        AlignMethod::Gak(p) => {
            let (values, log_scale) = exponentiate_log_kernel(&raw, p.normalize)?;
            let mut out = SimilarityMatrix::new(values, SimilarityKind::GakKernel, ids)?;
            out.log_scale = log_scale;
            out.check_psd()?;
            Ok(out)
        }
    }
}

/// Turns log-kernel values into kernel values, normalized or rescaled as needed.
fn exponentiate_log_kernel(logk: &DMatrix<f64>, normalize: bool) -> Result<(DMatrix<f64>, f64)> {
    let m = logk.nrows();
    if (0..m).any(|i| !logk[(i, i)].is_finite()) {
        return Err(Error::InvalidParameter(
            "self-similarity underflowed; increase sigma".into(),
        ));
    }
    if normalize {
        let values = DMatrix::from_fn(m, m, |i, j| {
            (logk[(i, j)] - 0.5 * (logk[(i, i)] + logk[(j, j)])).exp()
        });
        return Ok((values, 0.0));
    }
    let finite = logk.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    // exp stays normal on roughly [-708, 709]
    let log_scale = if lo > -700.0 && hi < 700.0 { 0.0 } else { hi };
    Ok((logk.map(|v| (v - log_scale).exp()), log_scale))
}
