//! Natural cubic smoothing splines for matrix-valued data.
//!
//! Minimizes `λ Σ_j ‖y(t_j) − v_j‖² + ∫ ‖y''(t)‖² dt` componentwise. The
//! minimizer is a natural cubic spline with knots at the sample times; its
//! knot values and second derivatives come from the Reinsch system
//! `(R + Qᵀ Q / λ) γ = Qᵀ v`, `g = v − Q γ / λ`, which is pentadiagonal.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Factorized smoothing system for a fixed set of knot times and `λ`.
///
/// The factorization depends only on the times, so one smoother can fit any
/// number of data sets sampled at those times.
#[derive(Clone, Debug)]
pub struct SplineSmoother {
    times: Vec<f64>,
    steps: Vec<f64>,
    inv_lambda: f64,
    chol: Option<BandedCholesky>,
}

impl SplineSmoother {
    pub fn new(times: &[f64], lambda: f64) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidParameter(
                "smoothing spline needs at least two samples".into(),
            ));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive and finite, got {lambda}"
            )));
        }
        let steps: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        if steps.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidParameter(
                "knot times must be finite and strictly increasing".into(),
            ));
        }
        let inv_lambda = 1.0 / lambda;
        let chol = if times.len() > 2 {
            Some(BandedCholesky::factor(&reinsch_matrix(&steps, inv_lambda))?)
        } else {
            None
        };
        Ok(Self {
            times: times.to_vec(),
            steps,
            inv_lambda,
            chol,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Fits the spline to one matrix per knot time.
    pub fn fit(&self, values: &[DMatrix<f64>]) -> Result<SmoothingSpline> {
        let k = self.times.len();
        if values.len() != k {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {k} knot times",
                values.len()
            )));
        }
        let shape = values[0].shape();
        if values.iter().any(|v| v.shape() != shape) {
            return Err(Error::DimensionMismatch(
                "spline values have inconsistent shapes".into(),
            ));
        }
        let mut fitted = values.to_vec();
        let mut second = vec![DMatrix::zeros(shape.0, shape.1); k];
        if let Some(chol) = &self.chol {
            let h = &self.steps;
            let mut y = vec![0.0; k];
            let mut rhs = vec![0.0; k - 2];
            for c in 0..shape.0 * shape.1 {
                for (yj, v) in y.iter_mut().zip(values) {
                    *yj = v[c];
                }
                // Qᵀ y
                for (j, r) in rhs.iter_mut().enumerate() {
                    *r = y[j] / h[j] - (1.0 / h[j] + 1.0 / h[j + 1]) * y[j + 1] + y[j + 2] / h[j + 1];
                }
                let gamma = chol.solve(&rhs);
                // g = y − Q γ / λ
                for r in 0..k {
                    let mut qg = 0.0;
                    if r >= 2 {
                        qg += gamma[r - 2] / h[r - 1];
                    }
                    if r >= 1 && r <= k - 2 {
                        qg -= (1.0 / h[r - 1] + 1.0 / h[r]) * gamma[r - 1];
                    }
                    if r < k - 2 {
                        qg += gamma[r] / h[r];
                    }
                    fitted[r][c] = y[r] - self.inv_lambda * qg;
                }
                for (j, g) in gamma.iter().enumerate() {
                    second[j + 1][c] = *g;
                }
            }
        }
        Ok(SmoothingSpline {
            times: self.times.clone(),
            values: fitted,
            second,
        })
    }
}

/// `R + Qᵀ Q / λ` in banded storage (diagonal, first and second super-diagonals).
fn reinsch_matrix(h: &[f64], inv_lambda: f64) -> Vec<[f64; 3]> {
    let m = h.len() - 1;
    // column j of Q has entries at rows j, j+1, j+2
    let q = |j: usize| -> [f64; 3] { [1.0 / h[j], -1.0 / h[j] - 1.0 / h[j + 1], 1.0 / h[j + 1]] };
    (0..m)
        .map(|j| {
            let qj = q(j);
            let diag = (h[j] + h[j + 1]) / 3.0 + inv_lambda * qj.iter().map(|v| v * v).sum::<f64>();
            let off1 = if j + 1 < m {
                let qn = q(j + 1);
                h[j + 1] / 6.0 + inv_lambda * (qj[1] * qn[0] + qj[2] * qn[1])
            } else {
                0.0
            };
            let off2 = if j + 2 < m { inv_lambda * qj[2] * q(j + 2)[0] } else { 0.0 };
            [diag, off1, off2]
        })
        .collect()
}

/// Cholesky factor of a symmetric positive-definite matrix with bandwidth 2.
#[derive(Clone, Debug)]
struct BandedCholesky {
    // row i holds L[i][i-2], L[i][i-1], L[i][i]
    rows: Vec<[f64; 3]>,
}

impl BandedCholesky {
    fn factor(band: &[[f64; 3]]) -> Result<Self> {
        let m = band.len();
        let mut rows = vec![[0.0; 3]; m];
        for i in 0..m {
            let l2 = if i >= 2 { band[i - 2][2] / rows[i - 2][2] } else { 0.0 };
            let l1 = if i >= 1 {
                let carry = if i >= 2 { l2 * rows[i - 1][1] } else { 0.0 };
                (band[i - 1][1] - carry) / rows[i - 1][2]
            } else {
                0.0
            };
            let pivot = band[i][0] - l2 * l2 - l1 * l1;
            if !(pivot > 0.0) {
                return Err(Error::SingularSystem);
            }
            rows[i] = [l2, l1, pivot.sqrt()];
        }
        Ok(Self { rows })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let m = self.rows.len();
        let mut z = vec![0.0; m];
        for i in 0..m {
            let mut s = b[i];
            if i >= 1 {
                s -= self.rows[i][1] * z[i - 1];
            }
            if i >= 2 {
                s -= self.rows[i][0] * z[i - 2];
            }
            z[i] = s / self.rows[i][2];
        }
        for i in (0..m).rev() {
            let mut s = z[i];
            if i + 1 < m {
                s -= self.rows[i + 1][1] * z[i + 1];
            }
            if i + 2 < m {
                s -= self.rows[i + 2][0] * z[i + 2];
            }
            z[i] = s / self.rows[i][2];
        }
        z
    }
}

/// Fitted natural cubic spline: knot values and second derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothingSpline {
    times: Vec<f64>,
    values: Vec<DMatrix<f64>>,
    second: Vec<DMatrix<f64>>,
}

impl SmoothingSpline {
    pub fn fit(values: &[DMatrix<f64>], times: &[f64], lambda: f64) -> Result<Self> {
        SplineSmoother::new(times, lambda)?.fit(values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Fitted values at the knots.
    pub fn knot_values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    fn locate(&self, t: f64) -> Result<usize> {
        if !(t >= self.start() && t <= self.end()) {
            return Err(Error::OutOfDomain {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        let idx = self.times.partition_point(|&x| x <= t);
        Ok(idx.saturating_sub(1).min(self.times.len() - 2))
    }

    pub fn evaluate(&self, t: f64) -> Result<DMatrix<f64>> {
        let i = self.locate(t)?;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let (a, b) = (t - t0, t1 - t);
        let linear = (&self.values[i + 1] * a + &self.values[i] * b) / h;
        let bend = (&self.second[i + 1] * (1.0 + a / h) + &self.second[i] * (1.0 + b / h)) * (a * b / 6.0);
        Ok(linear - bend)
    }

    /// Second derivative, piecewise linear between knots.
    pub fn second_derivative(&self, t: f64) -> Result<DMatrix<f64>> {
        let i = self.locate(t)?;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let w = (t - t0) / (t1 - t0);
        Ok(&self.second[i] * (1.0 - w) + &self.second[i + 1] * w)
    }

    /// The same spline restricted to knots `lo..=hi`.
    pub fn restrict(&self, lo: usize, hi: usize) -> Self {
        assert!(lo < hi && hi < self.times.len(), "invalid knot range {lo}..={hi}");
        Self {
            times: self.times[lo..=hi].to_vec(),
            values: self.values[lo..=hi].to_vec(),
            second: self.second[lo..=hi].to_vec(),
        }
    }
}
