//! Trajectories on the manifold and their denoising by composite blended curves.
//!
//! Each anchor `p_i` carries a Euclidean smoothing spline fitted to the data
//! lifted into its tangent space. On `[t_i, t_{i+1}]` the curve is the
//! pointwise geodesic blend, with weight `s`, of the two splines mapped back
//! through the exponentials at `p_i` and `p_{i+1}`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifold::{exp_map, geodesic, log_map, LandmarkConfig, TangentVector};
use crate::spline::{SmoothingSpline, SplineSmoother};

/// Time-stamped sequence of landmark configurations sharing one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    points: Vec<LandmarkConfig>,
    times: Vec<f64>,
    pub label: Option<String>,
    pub subject: Option<String>,
}

impl Trajectory {
    /// Builds a trajectory; `times` must be finite and strictly increasing.
    pub fn new(points: Vec<LandmarkConfig>, times: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptySequence);
        }
        if points.len() != times.len() {
            return Err(Error::InvalidTrajectory(format!(
                "{} points but {} times",
                points.len(),
                times.len()
            )));
        }
        let shape = (points[0].n(), points[0].d());
        if let Some(k) = points.iter().position(|p| (p.n(), p.d()) != shape) {
            return Err(Error::InvalidTrajectory(format!(
                "frame {k} is {}x{}, expected {}x{}",
                points[k].n(),
                points[k].d(),
                shape.0,
                shape.1
            )));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidTrajectory(
                "times must be finite and strictly increasing".into(),
            ));
        }
        Ok(Self {
            points,
            times,
            label: None,
            subject: None,
        })
    }

    /// Trajectory with knot times `0, 1, …, τ`.
    pub fn from_points(points: Vec<LandmarkConfig>) -> Result<Self> {
        let times = (0..points.len()).map(|i| i as f64).collect();
        Self::new(points, times)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_subject(mut self, subject: impl Into<String>) -> Self {
        self.subject = Some(subject.into());
        self
    }

    pub fn points(&self) -> &[LandmarkConfig] {
        &self.points
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Landmark count.
    pub fn n(&self) -> usize {
        self.points[0].n()
    }

    /// Ambient dimension.
    pub fn d(&self) -> usize {
        self.points[0].d()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Copy with new points/times and the same label and subject.
    pub fn with_points(&self, points: Vec<LandmarkConfig>, times: Vec<f64>) -> Result<Self> {
        let mut out = Self::new(points, times)?;
        out.label = self.label.clone();
        out.subject = self.subject.clone();
        Ok(out)
    }
}

/// Curve-fitting options.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    /// Fidelity weight: large values nearly interpolate, small values tend to a geodesic.
    pub lambda: f64,
    /// Restrict each anchor's tangent fit to anchors within this many steps.
    pub window: Option<usize>,
}

impl FitOptions {
    pub fn new(lambda: f64) -> Self {
        Self { lambda, window: None }
    }
}

/// Composite blended curve fitted to a trajectory.
#[derive(Clone, Debug)]
pub struct FittedCurve {
    anchors: Trajectory,
    lambda: f64,
    // tangent spline of anchor i, restricted to its neighbouring knots
    local: Vec<SmoothingSpline>,
}

/// Fits a blended curve using every data point in each tangent fit.
pub fn fit_blended_curve(traj: &Trajectory, lambda: f64) -> Result<FittedCurve> {
    fit_blended_curve_with(traj, &FitOptions::new(lambda))
}

pub fn fit_blended_curve_with(traj: &Trajectory, options: &FitOptions) -> Result<FittedCurve> {
    let k = traj.len();
    if k < 2 {
        return Err(Error::InvalidTrajectory(
            "curve fitting needs at least two points".into(),
        ));
    }
    if options.window == Some(0) {
        return Err(Error::InvalidParameter("fit window must be at least 1".into()));
    }
    let window_of = |i: usize| match options.window {
        Some(w) => (i.saturating_sub(w), (i + w).min(k - 1)),
        None => (0, k - 1),
    };
    let shared = match options.window {
        None => Some(SplineSmoother::new(traj.times(), options.lambda)?),
        Some(_) => {
            // validates lambda even when every anchor builds its own smoother
            SplineSmoother::new(&traj.times()[..2], options.lambda)?;
            None
        }
    };
    let points = traj.points();
    let local = (0..k)
        .into_par_iter()
        .map(|i| {
            let (lo, hi) = window_of(i);
            let lifted = (lo..=hi)
                .map(|j| log_map(&points[i], &points[j]).map(TangentVector::into_delta))
                .collect::<Result<Vec<_>>>()?;
            let spline = match &shared {
                Some(s) => s.fit(&lifted)?,
                None => SplineSmoother::new(&traj.times()[lo..=hi], options.lambda)?.fit(&lifted)?,
            };
            let keep_lo = i.saturating_sub(1).max(lo);
            let keep_hi = (i + 1).min(hi);
            Ok(spline.restrict(keep_lo - lo, keep_hi - lo))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FittedCurve {
        anchors: traj.clone(),
        lambda: options.lambda,
        local,
    })
}

impl FittedCurve {
    pub fn anchors(&self) -> &Trajectory {
        &self.anchors
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn start(&self) -> f64 {
        self.anchors.start()
    }

    pub fn end(&self) -> f64 {
        self.anchors.end()
    }

    /// Number of segments `[t_i, t_{i+1}]`.
    pub fn segments(&self) -> usize {
        self.anchors.len() - 1
    }

    fn anchor_image(&self, i: usize, t: f64) -> Result<LandmarkConfig> {
        let base = &self.anchors.points()[i];
        let delta = self.local[i].evaluate(t)?;
        exp_map(base, &TangentVector::new(base.clone(), delta)?)
    }

    /// Evaluates segment `segment` (between anchors `segment` and `segment + 1`) at `t`.
    ///
    /// Used to take one-sided limits at interior knots.
    pub fn evaluate_segment(&self, segment: usize, t: f64) -> Result<LandmarkConfig> {
        if segment >= self.segments() {
            return Err(Error::InvalidParameter(format!(
                "segment {segment} out of range (curve has {})",
                self.segments()
            )));
        }
        let times = self.anchors.times();
        let (t0, t1) = (times[segment], times[segment + 1]);
        if !(t >= t0 && t <= t1) {
            return Err(Error::OutOfDomain { t, start: t0, end: t1 });
        }
        let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let left = self.anchor_image(segment, t)?;
        if s == 0.0 {
            return Ok(left);
        }
        let right = self.anchor_image(segment + 1, t)?;
        geodesic(&left, &right, s)
    }

    /// Curve value at `t ∈ [t_0, t_τ]`.
    pub fn evaluate(&self, t: f64) -> Result<LandmarkConfig> {
        if !(t >= self.start() && t <= self.end()) {
            return Err(Error::OutOfDomain {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        let times = self.anchors.times();
        let seg = times.partition_point(|&x| x <= t).saturating_sub(1).min(self.segments() - 1);
        self.evaluate_segment(seg, t)
    }

    /// The curve sampled at the anchor times.
    pub fn at_anchor_times(&self) -> Result<Trajectory> {
        let times = self.anchors.times().to_vec();
        let points = times.iter().map(|&t| self.evaluate(t)).collect::<Result<Vec<_>>>()?;
        self.anchors.with_points(points, times)
    }
}

/// Samples `m ≥ 2` points at uniform times over `[t_0, t_τ]`.
pub fn resample_curve(curve: &FittedCurve, m: usize) -> Result<Trajectory> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!("resample size must be >= 2, got {m}")));
    }
    let (t0, t1) = (curve.start(), curve.end());
    let times: Vec<f64> = (0..m)
        .map(|k| {
            if k == m - 1 {
                t1
            } else {
                t0 + (t1 - t0) * k as f64 / (m - 1) as f64
            }
        })
        .collect();
    let points = times.iter().map(|&t| curve.evaluate(t)).collect::<Result<Vec<_>>>()?;
    curve.anchors.with_points(points, times)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::distance;
    use crate::test_util::{noisy_trajectory, random_config, random_orthogonal, rng};

    #[test]
    fn trajectory_validation() {
        let mut r = rng(1);
        let a = random_config(&mut r, 5, 2);
        let b = random_config(&mut r, 6, 2);
        assert!(Trajectory::new(vec![], vec![]).is_err());
        assert!(Trajectory::new(vec![a.clone(), b], vec![0.0, 1.0]).is_err());
        assert!(Trajectory::new(vec![a.clone(), a.clone()], vec![1.0, 1.0]).is_err());
        assert!(Trajectory::new(vec![a.clone()], vec![0.0, 1.0]).is_err());
        let t = Trajectory::from_points(vec![a.clone(), a]).unwrap().with_label("x");
        assert_eq!(t.times(), &[0.0, 1.0]);
        assert_eq!(t.label.as_deref(), Some("x"));
    }

    #[test]
    fn constant_trajectory_stays_in_its_class() {
        let mut r = rng(2);
        let p = random_config(&mut r, 6, 3);
        let points = (0..6).map(|_| p.act(&random_orthogonal(&mut r, 3))).collect();
        let traj = Trajectory::from_points(points).unwrap();
        let curve = fit_blended_curve(&traj, 1.0).unwrap();
        for k in 0..=50 {
            let q = curve.evaluate(5.0 * k as f64 / 50.0).unwrap();
            assert!(distance(&q, &p).unwrap() <= 1e-9);
        }
    }

    #[test]
    fn start_is_the_first_anchor_image() {
        let traj = noisy_trajectory(3, 7, 6, 2, 0.1);
        let curve = fit_blended_curve(&traj, 2.0).unwrap();
        let base = &traj.points()[0];
        let expected = exp_map(base, &TangentVector::new(base.clone(), curve.local[0].evaluate(0.0).unwrap()).unwrap()).unwrap();
        assert_eq!(curve.evaluate(0.0).unwrap(), expected);
    }

    #[test]
    fn knots_are_continuous() {
        let traj = noisy_trajectory(4, 8, 7, 3, 0.2);
        let curve = fit_blended_curve(&traj, 0.7).unwrap();
        for i in 1..traj.len() - 1 {
            let t = traj.times()[i];
            let left = curve.evaluate_segment(i - 1, t).unwrap();
            let right = curve.evaluate_segment(i, t).unwrap();
            assert!(distance(&left, &right).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn evaluation_is_deterministic_and_bounded() {
        let traj = noisy_trajectory(5, 6, 5, 2, 0.1);
        let curve = fit_blended_curve(&traj, 1.0).unwrap();
        let a: Vec<_> = (0..=40).map(|k| curve.evaluate(5.0 * k as f64 / 40.0).unwrap()).collect();
        let b: Vec<_> = (0..=40).map(|k| curve.evaluate(5.0 * k as f64 / 40.0).unwrap()).collect();
        assert_eq!(a, b);
        assert!(matches!(curve.evaluate(5.5), Err(Error::OutOfDomain { .. })));
        assert!(matches!(curve.evaluate(-0.1), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn windowed_fit_matches_full_fit_when_window_covers_all() {
        let traj = noisy_trajectory(6, 6, 5, 2, 0.1);
        let full = fit_blended_curve(&traj, 1.0).unwrap();
        let windowed = fit_blended_curve_with(&traj, &FitOptions { lambda: 1.0, window: Some(10) }).unwrap();
        for k in 0..=20 {
            let t = 5.0 * k as f64 / 20.0;
            let d = distance(&full.evaluate(t).unwrap(), &windowed.evaluate(t).unwrap()).unwrap();
            assert!(d < 1e-12);
        }
        let narrow = fit_blended_curve_with(&traj, &FitOptions { lambda: 1.0, window: Some(1) }).unwrap();
        assert!(narrow.evaluate(2.5).is_ok());
        assert!(fit_blended_curve_with(&traj, &FitOptions { lambda: 1.0, window: Some(0) }).is_err());
    }

    #[test]
    fn resample_grid() {
        let traj = noisy_trajectory(7, 10, 6, 2, 0.1);
        let curve = fit_blended_curve(&traj, 1.0).unwrap();
        let two = resample_curve(&curve, 2).unwrap();
        assert_eq!(two.times(), &[0.0, 9.0]);
        assert_eq!(two.points()[0], curve.evaluate(0.0).unwrap());
        assert_eq!(two.points()[1], curve.evaluate(9.0).unwrap());
        let fifty = resample_curve(&curve, 50).unwrap();
        assert_eq!(fifty.len(), 50);
        for (k, t) in fifty.times().iter().enumerate() {
            assert!((t - 9.0 * k as f64 / 49.0).abs() < 1e-12);
        }
        assert_eq!(fifty.label, traj.label);
        assert_eq!(fifty.subject, traj.subject);
        assert!(resample_curve(&curve, 1).is_err());
    }

    #[test]
    fn irregular_times_are_supported() {
        let base = noisy_trajectory(8, 5, 5, 2, 0.1);
        let traj = base.with_points(base.points().to_vec(), vec![0.0, 1.0, 3.0, 4.0, 7.0]).unwrap();
        let curve = fit_blended_curve(&traj, 1.0).unwrap();
        assert!(curve.evaluate(5.5).is_ok());
    }
}
