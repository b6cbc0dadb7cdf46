use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gramtraj(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gramtraj"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn synth(dir: &Path, extra: &[&str]) {
    let mut args = vec!["synth", "--out", "data"];
    args.extend_from_slice(extra);
    let o = gramtraj(&args, dir);
    assert!(o.status.success(), "{o:?}");
}

const KINECT_LIKE: &str = "frame,joint,x,y,z\n0,0,0,0,0\n0,1,1,0,0\n0,2,0,1,0\n0,3,0,0,1\n";

#[test]
fn distance_same_frame_is_zero_and_metrics_agree() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--classes", "2", "--per-class", "2", "--frames", "5"]);
    let o = gramtraj(&["distance", "data/seq_0000.csv", "data/seq_0000.csv", "--frame-a", "2", "--frame-b", "2"], dir.path());
    assert_eq!(stdout(&o), "0.000000000000\n");
    let general = gramtraj(&["distance", "data/seq_0000.csv", "data/seq_0003.csv", "--frame-b", "4"], dir.path());
    let d2 = gramtraj(
        &["distance", "data/seq_0000.csv", "data/seq_0003.csv", "--frame-b", "4", "--metric", "d2"],
        dir.path(),
    );
    assert!(general.status.success() && d2.status.success());
    assert_eq!(stdout(&general), stdout(&d2));
}

#[test]
fn d2_on_three_dimensional_data_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.csv"), KINECT_LIKE).unwrap();
    let o = gramtraj(&["distance", "a.csv", "a.csv", "--metric", "d2"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let ok = gramtraj(&["distance", "a.csv", "a.csv"], dir.path());
    assert_eq!(stdout(&ok), "0.000000000000\n");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(gramtraj(&["no-such-command"], dir.path()).status.code(), Some(2));
    assert_eq!(gramtraj(&["distance", "missing.csv", "missing.csv"], dir.path()).status.code(), Some(3));
    fs::write(dir.path().join("ragged.csv"), "frame,joint,x,y\n0,0,1,2\n0,1,1\n").unwrap();
    assert_eq!(gramtraj(&["distance", "ragged.csv", "ragged.csv"], dir.path()).status.code(), Some(3));
    // collinear joints are rank deficient after centering
    fs::write(dir.path().join("flat.csv"), "frame,joint,x,y\n0,0,0,0\n0,1,1,1\n0,2,2,2\n").unwrap();
    assert_eq!(gramtraj(&["distance", "flat.csv", "flat.csv"], dir.path()).status.code(), Some(4));
}

#[test]
fn synth_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), &["--frames", "6", "--seed", "3"]);
    synth(b.path(), &["--frames", "6", "--seed", "3"]);
    for name in ["manifest.csv", "seq_0000.csv", "seq_0029.csv"] {
        assert_eq!(
            fs::read(a.path().join("data").join(name)).unwrap(),
            fs::read(b.path().join("data").join(name)).unwrap()
        );
    }
}

#[test]
fn evaluate_writes_a_complete_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &[]);
    let o = gramtraj(
        &["evaluate", "--manifest", "data/manifest.csv", "--sigma", "4", "--workers", "2", "--out", "run"],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let run = dir.path().join("run");
    for f in ["config.json", "manifest.sha256", "kernel.csv", "accuracy.txt", "confusion.csv", "timing.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let accuracy: f64 = fs::read_to_string(run.join("accuracy.txt")).unwrap().trim().parse().unwrap();
    assert!(accuracy >= 0.95, "accuracy {accuracy}");
    let timing = fs::read_to_string(run.join("timing.csv")).unwrap();
    assert!(timing.starts_with("stage,seconds_per_sequence\ncurve_fitting,"));
    assert!(timing.contains("\nalignment,") && timing.contains("\nclassification,"));
    let config: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(config["sigma"], 4.0);
    assert_eq!(config["align"], "gak");
}

#[test]
fn kernel_is_identical_across_reruns_and_workers() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--per-class", "3", "--frames", "10"]);
    for (out, workers) in [("k1", "1"), ("k2", "3")] {
        let o = gramtraj(
            &["kernel", "--manifest", "data/manifest.csv", "--sigma", "4", "--workers", workers, "--out", out],
            dir.path(),
        );
        assert!(o.status.success(), "{o:?}");
    }
    let k1 = fs::read(dir.path().join("k1/kernel.csv")).unwrap();
    assert_eq!(k1, fs::read(dir.path().join("k2/kernel.csv")).unwrap());
    assert_eq!(
        fs::read(dir.path().join("k1/manifest.sha256")).unwrap(),
        fs::read(dir.path().join("k2/manifest.sha256")).unwrap()
    );

    let o = gramtraj(&["kernel", "--manifest", "data/manifest.csv", "--align", "dtw", "--out", "kd"], dir.path());
    assert!(o.status.success());
    let text = fs::read_to_string(dir.path().join("kd/kernel.csv")).unwrap();
    let mut rows = csv_rows(&text);
    let header = rows.remove(0);
    assert_eq!(header[0], "dtw_proximity");
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[i + 1].parse::<f64>().unwrap(), 0.0);
    }
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn train_then_predict_held_out_sequences() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--per-class", "6", "--frames", "20"]);
    for align in ["gak", "dtw"] {
        let kdir = format!("k_{align}");
        let o = gramtraj(
            &["kernel", "--manifest", "data/manifest.csv", "--align", align, "--sigma", "4", "--out", &kdir],
            dir.path(),
        );
        assert!(o.status.success(), "{o:?}");
        let manifest = fs::read_to_string(dir.path().join("data/manifest.csv")).unwrap();
        let lines: Vec<&str> = manifest.lines().collect();
        // keep the first four sequences of each class for training
        let mut train = vec![lines[0]];
        for class in 0..3 {
            train.extend(&lines[1 + class * 6..5 + class * 6]);
        }
        fs::write(dir.path().join("data/train.csv"), train.join("\n") + "\n").unwrap();
        let model = format!("{align}.model");
        let kernel = format!("{kdir}/kernel.csv");
        let o = gramtraj(
            &["train", "--kernel", &kernel, "--manifest", "data/train.csv", "--out", &model],
            dir.path(),
        );
        assert!(o.status.success(), "{o:?}");
        let o = gramtraj(&["predict", "--model", &model, "--kernel", &kernel], dir.path());
        assert!(o.status.success(), "{o:?}");
        let out = stdout(&o);
        let rows: Vec<&str> = out.lines().skip(1).collect();
        assert_eq!(rows.len(), 6);
        for row in rows {
            let (id, predicted) = row.split_once(',').unwrap();
            let index: usize = id[4..8].parse().unwrap();
            assert_eq!(predicted, format!("class{}", index / 6), "{align} {row}");
        }
    }
}

#[test]
fn fit_and_ingest() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--classes", "1", "--per-class", "2", "--frames", "12"]);
    let o = gramtraj(
        &["fit", "data/seq_0000.csv", "--lambda", "10", "--resample", "20", "--out", "fitted.csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{o:?}");
    let fitted = fs::read_to_string(dir.path().join("fitted.csv")).unwrap();
    assert_eq!(fitted.lines().count(), 1 + 20 * 8);

    let o = gramtraj(&["ingest", "--manifest", "data/manifest.csv", "--out", "clean"], dir.path());
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("loaded 2 sequence(s), skipped 0"));
    assert!(dir.path().join("clean/manifest.csv").exists());
}

#[test]
fn bench_reports_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let o = gramtraj(&["bench", "--frames", "20", "--repetitions", "1", "--out", "b"], dir.path());
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("ratio "));
    assert!(dir.path().join("b/bench.csv").exists());
}

#[test]
fn loao_without_subjects_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), &["--classes", "2", "--per-class", "2", "--frames", "5"]);
    let manifest = fs::read_to_string(dir.path().join("data/manifest.csv")).unwrap();
    let stripped: String = manifest
        .lines()
        .map(|l| {
            let mut f: Vec<&str> = l.split(',').collect();
            if f[2] != "subject" {
                f[2] = "";
            }
            f.join(",") + "\n"
        })
        .collect();
    fs::write(dir.path().join("data/nosubj.csv"), stripped).unwrap();
    let o = gramtraj(
        &["evaluate", "--manifest", "data/nosubj.csv", "--protocol", "loao", "--out", "r"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
}
