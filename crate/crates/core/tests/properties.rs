use nalgebra::DMatrix;
use proptest::prelude::*;

use gramtraj::alignment::{
    build_similarity_matrix, dtw_distance, gak_similarity, AlignMethod, FrameMetric, GakParams,
};
use gramtraj::curve::{fit_blended_curve, Trajectory};
use gramtraj::manifold::{center_coords, distance, LandmarkConfig};
use gramtraj::pipeline::{evaluate, Align, RunConfig};
use gramtraj::skeleton::{clean_frames, parse_csv_sequence, trajectory_to_csv, trajectory_to_frames, RawFrame};
use gramtraj::synth::{synthetic_dataset, SynthConfig};

fn config_strategy(n: usize, d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, n * d).prop_map(move |v| DMatrix::from_row_slice(n, d, &v))
}

/// Orthogonal matrix from an angle (and optional reflection) per coordinate plane.
fn orthogonal(d: usize, angles: &[f64], reflect: bool) -> DMatrix<f64> {
    let mut q = DMatrix::identity(d, d);
    for (k, &a) in angles.iter().enumerate() {
        let (i, j) = [(0, 1), (0, 2), (1, 2)][k % 3];
        if j >= d {
            continue;
        }
        let mut g = DMatrix::identity(d, d);
        let (s, c) = a.sin_cos();
        g[(i, i)] = c;
        g[(j, j)] = c;
        g[(i, j)] = -s;
        g[(j, i)] = s;
        q *= g;
    }
    if reflect {
        q.column_mut(0).neg_mut();
    }
    q
}

fn centered(raw: &DMatrix<f64>) -> Option<LandmarkConfig> {
    LandmarkConfig::with_rank_tol(center_coords(raw), 1e-6).ok()
}

fn trajectory(frames: &[DMatrix<f64>]) -> Option<Trajectory> {
    let points = frames.iter().map(centered).collect::<Option<Vec<_>>>()?;
    Trajectory::from_points(points).ok()
}

/// Smooth-ish random trajectory: cumulative sums of bounded steps.
fn walk_strategy(len: usize, n: usize, d: usize) -> impl Strategy<Value = Vec<DMatrix<f64>>> {
    (config_strategy(n, d), prop::collection::vec(config_strategy(n, d), len)).prop_map(|(start, steps)| {
        let mut z = start;
        steps
            .into_iter()
            .map(|s| {
                z += s * 0.1;
                z.clone()
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_symmetric_and_right_invariant(
        a in config_strategy(6, 3),
        b in config_strategy(6, 3),
        angles in prop::collection::vec(0.0..6.3f64, 6),
        reflect in any::<bool>(),
    ) {
        let (Some(za), Some(zb)) = (centered(&a), centered(&b)) else { return Ok(()) };
        let dab = distance(&za, &zb).unwrap();
        prop_assert!((dab - distance(&zb, &za).unwrap()).abs() <= 1e-10);
        let q1 = orthogonal(3, &angles[..3], reflect);
        let q2 = orthogonal(3, &angles[3..], false);
        let ra = LandmarkConfig::from_factor(za.coords() * q1).unwrap();
        let rb = LandmarkConfig::from_factor(zb.coords() * q2).unwrap();
        prop_assert!((distance(&ra, &rb).unwrap() - dab).abs() <= 1e-9);
    }

    #[test]
    fn translation_before_centering_is_invisible(
        a in config_strategy(5, 2),
        b in config_strategy(5, 2),
        t in prop::collection::vec(-50.0..50.0f64, 2),
    ) {
        let (Some(za), Some(zb)) = (centered(&a), centered(&b)) else { return Ok(()) };
        let moved = DMatrix::from_fn(5, 2, |i, j| a[(i, j)] + t[j]);
        let zm = centered(&moved).unwrap();
        prop_assert!((distance(&zm, &zb).unwrap() - distance(&za, &zb).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn gak_is_symmetric_and_dtw_frame_invariant(
        a in walk_strategy(5, 5, 2),
        b in walk_strategy(7, 5, 2),
        angles in prop::collection::vec(0.0..6.3f64, 7),
        sigma in 0.5..3.0f64,
    ) {
        let (Some(ta), Some(tb)) = (trajectory(&a), trajectory(&b)) else { return Ok(()) };
        let p = GakParams::new(sigma).unwrap();
        let ab = gak_similarity(&ta, &tb, &p, FrameMetric::General).unwrap();
        let ba = gak_similarity(&tb, &ta, &p, FrameMetric::General).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * ab.abs().max(1.0));

        let rotated: Vec<LandmarkConfig> = tb
            .points()
            .iter()
            .zip(&angles)
            .map(|(z, &a)| LandmarkConfig::from_factor(z.coords() * orthogonal(2, &[a], a > 3.0)).unwrap())
            .collect();
        let tr = Trajectory::from_points(rotated).unwrap();
        let d0 = dtw_distance(&ta, &tb, FrameMetric::General).unwrap();
        let d1 = dtw_distance(&ta, &tr, FrameMetric::General).unwrap();
        prop_assert!((d0 - d1).abs() <= 1e-9 * d0.max(1.0));
    }

    #[test]
    fn trajectory_csv_round_trip_is_bit_exact(
        frames in prop::collection::vec(config_strategy(4, 3), 1..5),
        scale in prop::sample::select(vec![1e-12, 1e-3, 1.0, 7.3e5, 1e12]),
    ) {
        let scaled: Vec<DMatrix<f64>> = frames.iter().map(|f| f * scale).collect();
        let Some(traj) = trajectory(&scaled) else { return Ok(()) };
        let parsed = parse_csv_sequence(&trajectory_to_csv(&traj)).unwrap();
        prop_assert_eq!(parsed.len(), traj.len());
        for (f, p) in parsed.iter().zip(traj.points()) {
            prop_assert_eq!(&f.to_matrix(), p.coords());
        }
        prop_assert_eq!(parsed, trajectory_to_frames(&traj));
    }

    #[test]
    fn cleaning_is_idempotent(
        conf in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 3), 1..8),
        threshold in 0.0..0.5f64,
    ) {
        let frames: Vec<RawFrame> = conf
            .iter()
            .enumerate()
            .map(|(t, c)| RawFrame {
                frame_index: t as f64,
                dim: 2,
                coords: vec![0.0, 1.0, 2.0, 0.5, 1.0, 3.0],
                confidence: c.iter().map(|&v| Some(v)).collect(),
                missing: c.iter().map(|&v| v < 0.05).collect(),
            })
            .collect();
        if let Ok(once) = clean_frames(frames, threshold) {
            prop_assert_eq!(clean_frames(once.clone(), threshold).unwrap(), once);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn fitting_commutes_with_orthogonal_action_and_gauges(
        frames in walk_strategy(6, 5, 2),
        angles in prop::collection::vec(0.0..6.3f64, 7),
        lambda in prop::sample::select(vec![0.1, 1.0, 10.0]),
    ) {
        let Some(traj) = trajectory(&frames) else { return Ok(()) };
        let curve = fit_blended_curve(&traj, lambda).unwrap();
        let q = orthogonal(2, &angles[..1], true);
        let global = traj
            .with_points(
                traj.points().iter().map(|p| LandmarkConfig::from_factor(p.coords() * &q).unwrap()).collect(),
                traj.times().to_vec(),
            )
            .unwrap();
        let gauged = traj
            .with_points(
                traj.points()
                    .iter()
                    .zip(&angles[1..])
                    .map(|(p, &a)| LandmarkConfig::from_factor(p.coords() * orthogonal(2, &[a], a > 3.0)).unwrap())
                    .collect(),
                traj.times().to_vec(),
            )
            .unwrap();
        let c_global = fit_blended_curve(&global, lambda).unwrap();
        let c_gauged = fit_blended_curve(&gauged, lambda).unwrap();
        for k in 0..=20 {
            let t = 5.0 * k as f64 / 20.0;
            let base = curve.evaluate(t).unwrap();
            prop_assert!(distance(&base, &c_global.evaluate(t).unwrap()).unwrap() <= 1e-8);
            prop_assert!(distance(&base, &c_gauged.evaluate(t).unwrap()).unwrap() <= 1e-8);
        }
    }

    #[test]
    fn fidelity_improves_with_lambda(frames in walk_strategy(8, 5, 3)) {
        let Some(traj) = trajectory(&frames) else { return Ok(()) };
        let mut previous = f64::INFINITY;
        for lambda in [0.1, 1.0, 10.0, 100.0] {
            let curve = fit_blended_curve(&traj, lambda).unwrap();
            let residual: f64 = traj
                .points()
                .iter()
                .zip(traj.times())
                .map(|(p, &t)| distance(&curve.evaluate(t).unwrap(), p).unwrap().powi(2))
                .sum();
            prop_assert!(residual <= previous * (1.0 + 1e-9) + 1e-15, "lambda {lambda}: {residual} > {previous}");
            previous = residual;
        }
    }
}

#[test]
fn kernel_and_predictions_do_not_depend_on_workers() {
    let ds = synthetic_dataset(&SynthConfig {
        per_class: 4,
        frames: 15,
        ..SynthConfig::default()
    })
    .unwrap();
    for align in [Align::Gak, Align::Dtw] {
        let config = RunConfig {
            align,
            sigma: 4.0,
            curve_fit: true,
            ..RunConfig::default()
        };
        let one = evaluate(&ds.trajectories, &ds.ids, &config).unwrap();
        let many = evaluate(&ds.trajectories, &ds.ids, &RunConfig { workers: 4, ..config.clone() }).unwrap();
        assert_eq!(one.matrix, many.matrix);
        assert_eq!(one.report.folds, many.report.folds);
        assert_eq!(one.report.confusion, many.report.confusion);
    }
    let params = AlignMethod::Gak(GakParams::new(4.0).unwrap());
    let a = build_similarity_matrix(&ds.trajectories, params, FrameMetric::D2Closed, 1).unwrap();
    let b = build_similarity_matrix(&ds.trajectories, params, FrameMetric::D2Closed, 3).unwrap();
    assert_eq!(a, b);
}
