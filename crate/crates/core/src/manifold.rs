//! Geometry of the manifold of n×n positive-semidefinite matrices of rank d.
//!
//! Points are stored as full-rank n×d factors `Z` (the Gram matrix being
//! `Z Zᵀ`); two factors represent the same point when they differ by a right
//! orthogonal factor. The quotient metric is induced by the Frobenius metric on
//! factors, so distances reduce to an orthogonal Procrustes problem and
//! geodesics are straight lines between Procrustes-aligned factors.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Default relative tolerance on `σ_min / σ_max` for a factor to count as full rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Eigenvalues down to `-PSD_CLIP_TOL * λ_max` are treated as round-off and clipped to zero.
pub const PSD_CLIP_TOL: f64 = 1e-8;

/// Eigenvalues at or below this fraction of `λ_max` are below numerical rank.
const EIGEN_RANK_TOL: f64 = 1e-10;

/// One frame's landmark coordinates: an n×d factor representing a point of S⁺(d, n).
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkConfig {
    coords: DMatrix<f64>,
}

impl LandmarkConfig {
    /// Wraps a factor, checking finiteness, `n ≥ d ≥ 1` and full column rank.
    pub fn new(coords: DMatrix<f64>) -> Result<Self> {
        Self::with_rank_tol(coords, DEFAULT_RANK_TOL)
    }

    pub fn with_rank_tol(coords: DMatrix<f64>, rank_tol: f64) -> Result<Self> {
        let config = Self::from_factor(coords)?;
        check_full_rank(&config.coords, rank_tol)?;
        Ok(config)
    }

    /// Wraps a factor without enforcing full rank.
    ///
    /// Distances and alignments are well defined for rank-deficient factors,
    /// which is useful for degenerate test configurations; `exp_map` still
    /// re-validates its output.
    pub fn from_factor(coords: DMatrix<f64>) -> Result<Self> {
        let (n, d) = coords.shape();
        if d == 0 || n < d {
            return Err(Error::InvalidShape(format!(
                "need n >= d >= 1, got {n}x{d}"
            )));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { coords })
    }

    /// Builds a factor from row-major data.
    pub fn from_row_slice(n: usize, d: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * d {
            return Err(Error::InvalidShape(format!(
                "{} values for a {n}x{d} configuration",
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, d, data))
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn into_coords(self) -> DMatrix<f64> {
        self.coords
    }

    /// Number of landmarks.
    pub fn n(&self) -> usize {
        self.coords.nrows()
    }

    /// Ambient dimension.
    pub fn d(&self) -> usize {
        self.coords.ncols()
    }

    /// `tr(Z Zᵀ)`, the squared Frobenius norm of the factor.
    pub fn gram_trace(&self) -> f64 {
        self.coords.norm_squared()
    }

    /// The representative `Z Q` of the same equivalence class.
    pub fn act(&self, q: &OrthogonalAligner) -> Self {
        Self {
            coords: &self.coords * &q.q,
        }
    }

    /// Whether every column sums to zero within `1e-9 · n · column scale`.
    pub fn is_centered(&self) -> bool {
        let n = self.n() as f64;
        self.coords.column_iter().all(|col| {
            let scale = col.amax().max(1.0);
            col.sum().abs() <= 1e-9 * n * scale
        })
    }
}

fn check_full_rank(coords: &DMatrix<f64>, rank_tol: f64) -> Result<()> {
    let sv = coords.singular_values();
    let max = sv.max();
    let min = sv.min();
    let ratio = if max > 0.0 { min / max } else { 0.0 };
    if ratio < rank_tol || max == 0.0 {
        return Err(Error::RankDeficient { ratio, tol: rank_tol });
    }
    Ok(())
}

/// Subtracts the column means of `raw`, without any rank validation.
pub fn center_coords(raw: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = raw.clone();
    let n = raw.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

/// Removes the centroid from a raw landmark matrix and validates the result.
///
/// A centered n×d matrix has rank at most `n - 1`, so configurations with
/// `n ≤ d` landmarks are always rejected as rank deficient.
pub fn center_landmarks(raw: &DMatrix<f64>) -> Result<LandmarkConfig> {
    center_landmarks_with_tol(raw, DEFAULT_RANK_TOL)
}

pub fn center_landmarks_with_tol(raw: &DMatrix<f64>, rank_tol: f64) -> Result<LandmarkConfig> {
    // shape and finiteness first, so the error names the real problem
    LandmarkConfig::from_factor(raw.clone())?;
    LandmarkConfig::with_rank_tol(center_coords(raw), rank_tol)
}

/// Symmetric n×n Gram matrix `Z Zᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
}

impl GramMatrix {
    /// Wraps a square matrix that is symmetric to within `1e-12` relative.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(Error::InvalidShape(format!(
                "Gram matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let scale = values.amax().max(1.0);
        let asym = (&values - values.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self { values })
    }

    /// Gram matrix of an arbitrary (possibly rank-deficient) factor.
    pub fn from_factor(z: &DMatrix<f64>) -> Self {
        let values = z * z.transpose();
        // exact symmetry regardless of summation order
        let values = (&values + values.transpose()) * 0.5;
        Self { values }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.values.trace()
    }

    /// Number of eigenvalues above `1e-10 · λ_max`.
    pub fn numerical_rank(&self) -> usize {
        let eig = self.values.clone().symmetric_eigenvalues();
        let max = eig.max();
        if max <= 0.0 {
            return 0;
        }
        eig.iter().filter(|&&l| l > EIGEN_RANK_TOL * max).count()
    }
}

/// `G = Z Zᵀ`.
pub fn gram(z: &LandmarkConfig) -> GramMatrix {
    GramMatrix::from_factor(&z.coords)
}

/// A d×d orthogonal matrix (rotations and reflections both allowed).
#[derive(Clone, Debug, PartialEq)]
pub struct OrthogonalAligner {
    q: DMatrix<f64>,
}

impl OrthogonalAligner {
    /// Wraps `q`, requiring `qᵀq = I` within `1e-10`.
    pub fn new(q: DMatrix<f64>) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::InvalidShape("orthogonal matrix must be square".into()));
        }
        let d = q.nrows();
        let err = (q.transpose() * &q - DMatrix::identity(d, d)).amax();
        if !(err <= 1e-10) {
            return Err(Error::InvalidParameter(format!(
                "matrix is not orthogonal (|QᵀQ - I| = {err:.3e})"
            )));
        }
        Ok(Self { q })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            q: DMatrix::identity(d, d),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn determinant(&self) -> f64 {
        self.q.determinant()
    }
}

fn check_same_shape(a: &LandmarkConfig, b: &LandmarkConfig) -> Result<()> {
    if a.coords.shape() != b.coords.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.n(),
            a.d(),
            b.n(),
            b.d()
        )));
    }
    Ok(())
}

/// Optimal aligner together with the singular values of `z_iᵀ z_j`.
fn procrustes_svd(zi: &LandmarkConfig, zj: &LandmarkConfig) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_same_shape(zi, zj)?;
    let cross = zi.coords.transpose() * &zj.coords;
    let svd = cross.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => unreachable!("SVD requested with both factors"),
    };
    let q = v_t.transpose() * u.transpose();
    Ok((q, svd.singular_values.iter().copied().collect()))
}

/// Orthogonal `Q* = V Uᵀ` minimizing `‖z_j Q − z_i‖_F`, from `z_iᵀ z_j = U Σ Vᵀ`.
///
/// When `z_iᵀ z_j` has repeated or zero singular values the minimizer is not
/// unique and an arbitrary one is returned.
pub fn procrustes_align(zi: &LandmarkConfig, zj: &LandmarkConfig) -> Result<OrthogonalAligner> {
    procrustes_svd(zi, zj).map(|(q, _)| OrthogonalAligner { q })
}

/// Riemannian distance `min_Q ‖z_j Q − z_i‖_F`, evaluated on the aligned residual.
///
/// The result is bitwise symmetric in its arguments.
pub fn distance(zi: &LandmarkConfig, zj: &LandmarkConfig) -> Result<f64> {
    // fixed argument order makes d(a, b) and d(b, a) the same computation
    let (zi, zj) = if zi.coords.iter().partial_cmp(zj.coords.iter()) == Some(std::cmp::Ordering::Greater) {
        (zj, zi)
    } else {
        (zi, zj)
    };
    let (q, _) = procrustes_svd(zi, zj)?;
    Ok((&zj.coords * q - &zi.coords).norm())
}

/// Same distance from the Gram matrices, via
/// `[tr G_i + tr G_j − 2 tr((G_i^½ G_j G_i^½)^½)]^½`.
///
/// This is an O(n³) route used to cross-check [`distance`].
pub fn distance_gram(gi: &GramMatrix, gj: &GramMatrix) -> Result<f64> {
    if gi.n() != gj.n() {
        return Err(Error::DimensionMismatch(format!("n = {} vs n = {}", gi.n(), gj.n())));
    }
    let root_i = psd_sqrt(&gi.values)?;
    let inner = &root_i * &gj.values * &root_i;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = clipped_eigen(&inner)?.eigenvalues.iter().map(|l| l.sqrt()).sum();
    let d2 = gi.trace() + gj.trace() - 2.0 * cross;
    Ok(d2.max(0.0).sqrt())
}

/// Eigendecomposition with round-off negatives and sub-rank eigenvalues set to zero.
fn clipped_eigen(m: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.max().max(0.0);
    let min = eig.eigenvalues.min();
    if min < -PSD_CLIP_TOL * max {
        return Err(Error::NotPsd { min, max });
    }
    for l in eig.eigenvalues.iter_mut() {
        if *l <= EIGEN_RANK_TOL * max {
            *l = 0.0;
        }
    }
    Ok(eig)
}

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut eig = clipped_eigen(m)?;
    eig.eigenvalues.iter_mut().for_each(|l| *l = l.sqrt());
    Ok(eig.recompose())
}

/// Entries `[[a, b], [c, d]]` of `z_jᵀ z_i` for 2-column factors.
pub(crate) fn cross_2d(zi: &DMatrix<f64>, zj: &DMatrix<f64>) -> [f64; 4] {
    let (xi, yi) = (zi.column(0), zi.column(1));
    let (xj, yj) = (zj.column(0), zj.column(1));
    let mut m = [0.0; 4];
    for k in 0..zi.nrows() {
        m[0] += xj[k] * xi[k];
        m[1] += xj[k] * yi[k];
        m[2] += yj[k] * xi[k];
        m[3] += yj[k] * yi[k];
    }
    m
}

/// Closed-form 2D distance from the traces and the entries of `z_jᵀ z_i`.
///
/// With `rotation_only` the maximization runs over rotations alone, which
/// overestimates the distance when `det(z_jᵀ z_i) < 0`.
pub(crate) fn closed_form_2d(tr_i: f64, tr_j: f64, m: [f64; 4], rotation_only: bool) -> f64 {
    let [a, b, c, d] = m;
    let rotation = (a + d).hypot(c - b);
    let best = if rotation_only {
        rotation
    } else {
        rotation.max((a - d).hypot(b + c))
    };
    ((tr_i + tr_j) - 2.0 * best).max(0.0).sqrt()
}

/// Closed-form distance for planar configurations.
///
/// With `[[a, b], [c, d]] = z_jᵀ z_i`, returns
/// `sqrt(tr G_i − 2 max(√((a+d)² + (c−b)²), √((a−d)² + (b+c)²)) + tr G_j)`;
/// the two branches cover rotations and reflections respectively.
pub fn distance_2d_closed_form(zi: &LandmarkConfig, zj: &LandmarkConfig) -> Result<f64> {
    distance_2d(zi, zj, false)
}

/// Rotation-only variant of [`distance_2d_closed_form`]; differs from the
/// true quotient distance when the optimal aligner is a reflection.
pub fn distance_2d_rotation_only(zi: &LandmarkConfig, zj: &LandmarkConfig) -> Result<f64> {
    distance_2d(zi, zj, true)
}

fn distance_2d(zi: &LandmarkConfig, zj: &LandmarkConfig, rotation_only: bool) -> Result<f64> {
    for z in [zi, zj] {
        if z.d() != 2 {
            return Err(Error::DimensionError(z.d()));
        }
    }
    check_same_shape(zi, zj)?;
    let m = cross_2d(&zi.coords, &zj.coords);
    Ok(closed_form_2d(zi.gram_trace(), zj.gram_trace(), m, rotation_only))
}

/// Horizontal tangent vector `delta` anchored at `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    base: LandmarkConfig,
    delta: DMatrix<f64>,
}

impl TangentVector {
    pub fn new(base: LandmarkConfig, delta: DMatrix<f64>) -> Result<Self> {
        if base.coords.shape() != delta.shape() {
            return Err(Error::DimensionMismatch(format!(
                "tangent {}x{} at base {}x{}",
                delta.nrows(),
                delta.ncols(),
                base.n(),
                base.d()
            )));
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { base, delta })
    }

    pub fn zero(base: LandmarkConfig) -> Self {
        let (n, d) = base.coords.shape();
        Self {
            base,
            delta: DMatrix::zeros(n, d),
        }
    }

    pub fn base(&self) -> &LandmarkConfig {
        &self.base
    }

    pub fn delta(&self) -> &DMatrix<f64> {
        &self.delta
    }

    pub fn into_delta(self) -> DMatrix<f64> {
        self.delta
    }

    pub fn norm(&self) -> f64 {
        self.delta.norm()
    }

    pub fn scaled(&self, t: f64) -> Self {
        Self {
            base: self.base.clone(),
            delta: &self.delta * t,
        }
    }

    /// Largest entry of `baseᵀ·delta − (baseᵀ·delta)ᵀ`.
    pub fn asymmetry(&self) -> f64 {
        let m = self.base.coords.transpose() * &self.delta;
        (&m - m.transpose()).amax()
    }
}

/// Riemannian logarithm: `x Q* − y` where `Q*` aligns `x` onto `y`.
///
/// When `yᵀx` is rank deficient the aligner is not unique (the points sit on
/// each other's cut locus); a warning is logged and one minimizer is used.
pub fn log_map(y: &LandmarkConfig, x: &LandmarkConfig) -> Result<TangentVector> {
    let (q, sv) = procrustes_svd(y, x)?;
    if on_cut_locus(&sv, DEFAULT_RANK_TOL) {
        log::warn!("log map evaluated at the cut locus; aligner is not unique");
    }
    let delta = &x.coords * q - &y.coords;
    Ok(TangentVector {
        base: y.clone(),
        delta,
    })
}

fn on_cut_locus(sv: &[f64], rank_tol: f64) -> bool {
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    max == 0.0 || min <= rank_tol * max
}

/// Whether `yᵀx` is rank deficient, i.e. the logarithm is not unique.
pub fn is_cut_locus(y: &LandmarkConfig, x: &LandmarkConfig) -> Result<bool> {
    let (_, sv) = procrustes_svd(y, x)?;
    Ok(on_cut_locus(&sv, DEFAULT_RANK_TOL))
}

/// Riemannian exponential: `y + delta`, re-validated for full rank.
pub fn exp_map(y: &LandmarkConfig, v: &TangentVector) -> Result<LandmarkConfig> {
    check_same_shape(y, &v.base)?;
    if v.base.coords != y.coords {
        return Err(Error::ForeignTangent);
    }
    LandmarkConfig::new(&y.coords + &v.delta)
}

/// Point at parameter `t ∈ [0, 1]` on the geodesic from `y` to `x`.
pub fn geodesic(y: &LandmarkConfig, x: &LandmarkConfig, t: f64) -> Result<LandmarkConfig> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("geodesic parameter {t} outside [0, 1]")));
    }
    let v = log_map(y, x)?;
    exp_map(y, &v.scaled(t))
}
