use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hdm_core::io::{load_image, load_saliency, save_saliency};
use hdm_core::render::render_overlay;
use hdm_core::{HdmConfig, MaskGrid, SaliencyRecord};
use serde_json::Value;

fn hdm(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hdm"))
        .args(args)
        .current_dir(cwd)
        .env_remove("HDM_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Exports a two-image testbed into `dir/bed`.
fn bed(dir: &Path) -> PathBuf {
    ok(hdm(
        dir,
        &["testbed", "--out", "bed", "--seed", "3", "--limit", "2"],
    ));
    dir.join("bed")
}

fn sal_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "sal"))
        .collect();
    v.sort();
    v
}

fn explain(dir: &Path, image: &str, out: &str, extra: &[&str]) -> Output {
    let mut args = vec!["explain", image, "--out", out, "--model", "bed/model.json"];
    args.extend_from_slice(extra);
    hdm(dir, &args)
}

#[test]
fn testbed_export_is_complete() {
    let tmp = tempfile::tempdir().unwrap();
    let bed = bed(tmp.path());
    let manifest = fs::read_to_string(bed.join("manifest.tsv")).unwrap();
    let rows: Vec<&str> = manifest.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let cols: Vec<&str> = row.split('\t').collect();
        assert!(bed.join(cols[0]).is_file() && bed.join(cols[2]).is_file());
    }
    let model: Value =
        serde_json::from_str(&fs::read_to_string(bed.join("model.json")).unwrap()).unwrap();
    assert!(model.get("weights").is_some());
}

#[test]
fn explain_writes_one_file_per_stage_plus_the_mix() {
    let tmp = tempfile::tempdir().unwrap();
    bed(tmp.path());
    ok(explain(
        tmp.path(),
        "bed/images/img000.png",
        "out",
        &["--stages", "2"],
    ));
    let out = tmp.path().join("out");
    let files = sal_files(&out);
    assert_eq!(files.len(), 3, "{files:?}");
    for name in [
        "img000.heatmap.png",
        "img000.overlay.png",
        "img000.stage2.overlay.png",
    ] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let log: Value =
        serde_json::from_str(&fs::read_to_string(out.join("img000.log.json")).unwrap()).unwrap();
    let cfg = HdmConfig::desk();
    let stages = log["stages"].as_array().unwrap();
    assert_eq!(stages.len(), 2);
    for stage in stages {
        for grid in stage["grids"].as_array().unwrap() {
            assert_eq!(grid["trace"].as_array().unwrap().len(), cfg.dm.epochs + 1);
        }
    }
    assert_eq!(
        log["mix"]["trace"].as_array().unwrap().len(),
        cfg.mix_epochs + 1
    );
    let mixed = load_saliency(out.join("img000.sal")).unwrap();
    assert_eq!(mixed.class, log["class"].as_u64().unwrap() as usize);
    assert_eq!(mixed.method, "hdm");
}

#[test]
fn reruns_produce_identical_saliency_files() {
    let tmp = tempfile::tempdir().unwrap();
    bed(tmp.path());
    ok(explain(tmp.path(), "bed/images/img001.png", "a", &[]));
    ok(explain(tmp.path(), "bed/images/img001.png", "b", &[]));
    let (a, b) = (
        sal_files(&tmp.path().join("a")),
        sal_files(&tmp.path().join("b")),
    );
    assert_eq!(a.len(), 4);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(
            fs::read(x).unwrap(),
            fs::read(y).unwrap(),
            "{}",
            x.display()
        );
    }
}

#[test]
fn failures_have_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    bed(tmp.path());
    let missing = explain(tmp.path(), "bed/images/nope.png", "out", &[]);
    assert_eq!(missing.status.code(), Some(3));

    let toml = HdmConfig::desk()
        .to_toml_string()
        .replace("learning_rate = 0.04", "learning_rate = 1e300")
        .replace("projection = \"clamp\"", "projection = \"none\"");
    fs::write(tmp.path().join("boom.toml"), toml).unwrap();
    let numeric = explain(
        tmp.path(),
        "bed/images/img000.png",
        "out",
        &["--config", "boom.toml"],
    );
    assert_eq!(numeric.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&numeric.stderr).contains("numeric"));

    let config = explain(
        tmp.path(),
        "bed/images/img000.png",
        "out",
        &["--preset", "natural"],
    );
    assert_eq!(config.status.code(), Some(4));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn config_path_can_come_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let toml = HdmConfig::desk()
        .to_toml_string()
        .replace("stages = 3", "stages = 2");
    fs::write(tmp.path().join("two.toml"), toml).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hdm"))
        .args(["config"])
        .current_dir(tmp.path())
        .env("HDM_CONFIG", "two.toml")
        .output()
        .unwrap();
    let text = String::from_utf8(ok(out).stdout).unwrap();
    assert_eq!(HdmConfig::from_toml_str(&text).unwrap().stages, 2);
}

fn report(dir: &Path, manifest: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "evaluate",
        manifest,
        "--saliency",
        "sal",
        "--out",
        "rep",
        "--model",
        "bed/model.json",
    ];
    args.extend_from_slice(extra);
    hdm(dir, &args)
}

fn records(dir: &Path) -> Vec<Value> {
    fs::read_to_string(dir.join("rep/report.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn evaluate_reports_every_image_and_an_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    bed(tmp.path());
    for img in ["img000", "img001"] {
        ok(explain(
            tmp.path(),
            &format!("bed/images/{img}.png"),
            "sal",
            &[],
        ));
    }
    ok(report(tmp.path(), "bed/manifest.tsv", &[]));
    let recs = records(tmp.path());
    assert_eq!(recs.len(), 3);
    assert!(recs[..2].iter().all(|r| r["record"] == "image"));
    assert_eq!(recs[0]["index"], 0);
    assert!(recs[0]["image"].as_str().unwrap().ends_with("img000.png"));
    assert_eq!(recs[2]["record"], "aggregate");
    assert_eq!(recs[2]["images"], 2);
    for k in 0..2 {
        let per: Vec<f64> = recs[..2]
            .iter()
            .map(|r| r["muted"][k]["drop_percent"].as_f64().unwrap())
            .collect();
        let agg = recs[2]["average_drop"][k]["value"].as_f64().unwrap();
        assert!((agg - (per[0] + per[1]) / 2.0).abs() < 1e-12);
        let inc: Vec<f64> = recs[..2]
            .iter()
            .map(|r| {
                if r["muted"][k]["increase"].as_bool().unwrap() {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        assert_eq!(
            recs[2]["average_increase"][k]["value"].as_f64().unwrap(),
            (inc[0] + inc[1]) / 2.0
        );
    }
    assert!(recs[2]["proportion"].as_f64().unwrap() > 0.5);
}

#[test]
fn evaluate_without_foregrounds_omits_proportion() {
    let tmp = tempfile::tempdir().unwrap();
    bed(tmp.path());
    ok(explain(tmp.path(), "bed/images/img000.png", "sal", &[]));
    fs::write(tmp.path().join("bare.tsv"), "bed/images/img000.png\t0\n").unwrap();
    ok(report(
        tmp.path(),
        "bare.tsv",
        &["--metrics", "drop,deletion,proportion"],
    ));
    let recs = records(tmp.path());
    assert_eq!(recs.len(), 2);
    assert!(recs[0].get("proportion").is_none());
    assert!(recs[0].get("deletion_auc").is_some());
    assert!(recs[0].get("insertion_auc").is_none());
    assert!(recs[1].get("average_increase").is_none());
    assert!(recs[1].get("average_drop").is_some());
}

#[test]
fn evaluate_lists_missing_saliency_files() {
    let tmp = tempfile::tempdir().unwrap();
    bed(tmp.path());
    fs::create_dir(tmp.path().join("sal")).unwrap();
    let out = report(tmp.path(), "bed/manifest.tsv", &[]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("img000.png") && err.contains("img001.png"),
        "{err}"
    );
    assert!(!tmp.path().join("rep").exists());
}

#[test]
fn render_modes() {
    let tmp = tempfile::tempdir().unwrap();
    bed(tmp.path());
    let image = tmp.path().join("bed/images/img000.png");
    let x = load_image(&image).unwrap();
    let (h, w) = (x.height(), x.width());
    let write = |name: &str, map: &MaskGrid| {
        save_saliency(
            &SaliencyRecord::new(map, "t", "t", 0),
            tmp.path().join(name),
        )
        .unwrap();
    };
    write("zeros.sal", &MaskGrid::zeros(h, w));
    write("ones.sal", &MaskGrid::filled(h, w, 1.0));
    let ramp = MaskGrid::new(
        h,
        w,
        (0..h * w).map(|i| i as f64 / (h * w - 1) as f64).collect(),
    )
    .unwrap();
    write("ramp.sal", &ramp);
    let img = "bed/images/img000.png";

    ok(hdm(
        tmp.path(),
        &[
            "render",
            "zeros.sal",
            img,
            "--mode",
            "heatmap",
            "--out",
            "r",
        ],
    ));
    let heat = load_image(tmp.path().join("r/zeros.heatmap.png")).unwrap();
    assert!(heat
        .pixels()
        .chunks(3)
        .all(|p| p == [0.0, 0.0, 128.0 / 255.0]));

    ok(hdm(
        tmp.path(),
        &["render", "ones.sal", img, "--mode", "mask", "--out", "r"],
    ));
    assert_eq!(load_image(tmp.path().join("r/ones.mask.png")).unwrap(), x);

    ok(hdm(tmp.path(), &["render", "ramp.sal", img, "--out", "r"]));
    let got = load_image(tmp.path().join("r/ramp.overlay.png")).unwrap();
    let expected = render_overlay(
        &x,
        &load_saliency(tmp.path().join("ramp.sal")).unwrap().map,
        0.5,
    )
    .unwrap();
    for (g, e) in got.pixels().iter().zip(expected.pixels()) {
        assert_eq!(*g, (e * 255.0).round() / 255.0);
    }

    write("small.sal", &MaskGrid::zeros(4, 4));
    let mismatch = hdm(tmp.path(), &["render", "small.sal", img, "--out", "r"]);
    assert_eq!(mismatch.status.code(), Some(3));
}

#[test]
fn outputs_stay_under_the_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    bed(tmp.path());
    let before: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    ok(explain(tmp.path(), "bed/images/img000.png", "only", &[]));
    let mut after: Vec<_> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    after.retain(|n| !before.contains(n));
    assert_eq!(after, vec![std::ffi::OsString::from("only")]);
}
