use std::fs;
use std::path::Path;
use std::process::Command;

use nalgebra::Vector3;
use vo_cli::commands::*;
use vo_core::dataset::save_tum_trajectory;
use vo_core::geometry::{Intrinsics, Pose};
use vo_core::synthscene::{make_orbit_scene, NoiseModel, SyntheticScene};

fn short_sequence(dir: &Path, frames: usize) {
    let orbit = make_orbit_scene(3.0, 240, 250, 31);
    let positions: Vec<Vector3<f64>> = orbit.landmarks.iter().map(|l| l.position).collect();
    SyntheticScene::new(
        &positions,
        orbit.trajectory[..frames].to_vec(),
        Intrinsics::tum_freiburg1(),
        NoiseModel::default(),
        31,
    )
    .export_tum(dir)
    .unwrap();
}

#[test]
fn run_writes_the_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    short_sequence(&tmp.path().join("seq"), 8);
    fs::write(
        tmp.path().join("run.toml"),
        "sequence = \"seq\"\noutput_dir = \"out\"\nmax_frames = 5\n\n[extractor]\nimplementation = \"model\"\nmodel_path = \"missing.onnx\"\n",
    )
    .unwrap();
    assert_eq!(cmd_run(&tmp.path().join("run.toml")), EXIT_OK);

    let out = tmp.path().join("out");
    for f in [
        TRAJECTORY_FILE,
        TELEMETRY_FILE,
        METADATA_FILE,
        PLOT_FILE,
        GROUND_TRUTH_FILE,
        MAP_FILE,
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert_eq!(fs::read_to_string(out.join(TELEMETRY_FILE)).unwrap().lines().count(), 5);
    let meta: toml::Table = toml::from_str(&fs::read_to_string(out.join(METADATA_FILE)).unwrap()).unwrap();
    let run = meta["run"].as_table().unwrap();
    assert_eq!(run["frames_processed"].as_integer(), Some(5));
    assert_eq!(
        run["extractor"].as_str(),
        Some("builtin-grid"),
        "missing model falls back"
    );
    assert!(run["build"].as_str().unwrap().starts_with(env!("CARGO_PKG_VERSION")));
    assert!(run.contains_key("ate_rmse"));
    let config = meta["config"].as_table().unwrap();
    assert_eq!(config["max_frames"].as_integer(), Some(5));
    assert!(config.contains_key("intrinsics"), "derived defaults are echoed");
}

#[test]
fn bad_configurations_exit_with_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "sequence = \"nowhere\"\n").unwrap();
    assert_eq!(cmd_run(&cfg), EXIT_ERROR);
    fs::write(&cfg, "sequence = \".\"\nmax_frame = 3\n").unwrap();
    assert_eq!(cmd_run(&cfg), EXIT_ERROR);
    assert_eq!(cmd_run(&tmp.path().join("absent.toml")), EXIT_ERROR);
}

fn curve_trajectory(offset: f64) -> Vec<(f64, Pose)> {
    (0..10)
        .map(|i| {
            let x = i as f64 * 0.1;
            (
                x,
                Pose::from_translation(Vector3::new(x, x * x, offset * (i % 2) as f64)),
            )
        })
        .collect()
}

#[test]
fn evaluate_reports_text_json_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let (est, gt) = (tmp.path().join("est.txt"), tmp.path().join("gt.txt"));
    save_tum_trajectory(&est, &curve_trajectory(0.02)).unwrap();
    save_tum_trajectory(&gt, &curve_trajectory(0.0)).unwrap();

    let text = evaluate(&est, &gt, false, None, 0.02).unwrap();
    assert!(text.contains("pairs   10"), "{text}");
    let json: serde_json::Value = serde_json::from_str(&evaluate(&est, &gt, true, None, 0.02).unwrap()).unwrap();
    let rmse = json["rmse"].as_f64().unwrap();
    assert!(rmse > 0.0 && rmse < 0.02);

    let plot = tmp.path().join("plot.svg");
    assert_eq!(cmd_evaluate(&est, &gt, false, Some(&plot), 0.02), EXIT_OK);
    assert!(fs::read_to_string(&plot).unwrap().starts_with("<svg"));
    assert_eq!(
        cmd_evaluate(&est, &tmp.path().join("none.txt"), false, None, 0.02),
        EXIT_ERROR
    );
}

#[test]
fn compare_renders_grid_and_pairwise_table() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("manifest.toml");
    let mut body = String::from("baseline = \"1000F\"\ncandidate = \"SELM\"\n");
    for (system, seq, rmse) in [
        ("1000F", "P037", 4.428),
        ("1000F", "P038", 3.294),
        ("SELM", "P037", 0.049),
        ("SELM", "P038", 0.020),
    ] {
        body.push_str(&format!(
            "\n[[entry]]\nsystem = \"{system}\"\nsequence = \"{seq}\"\nrmse = {rmse}\n"
        ));
    }
    body.push_str("\n[[entry]]\nsystem = \"SELM\"\nsequence = \"P039\"\nfailed = true\n");
    fs::write(&manifest, &body).unwrap();

    let csv = tmp.path().join("table.csv");
    let text = compare(&manifest, Some(&csv)).unwrap();
    assert!(text.contains("3.861"), "{text}");
    assert!(text.contains("0.035"), "{text}");
    assert!(text.contains("baseline: 1000F"));
    let csv_text = fs::read_to_string(&csv).unwrap();
    assert!(
        csv_text
            .lines()
            .next()
            .unwrap()
            .starts_with("system,P037,P038,P039,Avg."),
        "{csv_text}"
    );

    fs::write(&manifest, body.replace("candidate = \"SELM\"", "candidate = \"ORB\"")).unwrap();
    assert_eq!(cmd_compare(&manifest, None), EXIT_ERROR);
}

#[test]
fn conversion_of_missing_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        cmd_convert_tartanair(&tmp.path().join("absent"), &tmp.path().join("out")),
        EXIT_ERROR
    );
}

#[test]
fn binary_prints_presets() {
    let exe = env!("CARGO_BIN_EXE_rgbd-vo");
    let out = Command::new(exe).args(["preset", "baseline-1000f"]).output().unwrap();
    assert!(out.status.success());
    let cfg: toml::Table = toml::from_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(cfg["extractor"]["grid"]["max_features"].as_integer(), Some(1000));
    assert_eq!(cfg["tracker"]["mode"].as_str(), Some("baseline"));
    let bad = Command::new(exe).args(["preset", "nope"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_ERROR));
}
