use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use p300_core::io::{save_recording, RecordingFormat};
use p300_core::model::{Condition, Recording};
use p300_core::sim::{gen_session, spatial_weights, synth_recording, ErpComponent, ErpTemplates, SessionTiming, SynthConfig};
use p300_core::layout::ElectrodeLayout;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn p300(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_p300"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = p300(dir, args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn csv_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

/// Two simulated subjects, both conditions, preprocessed.
fn corpus(dir: &Path) -> PathBuf {
    ok(dir, &["simulate", "--seed", "4", "--subjects", "2", "--snr", "1", "-o", "sim"]);
    ok(dir, &["preprocess", "sim/recordings", "-o", "pre"]);
    dir.join("pre/preprocessed")
}

#[test]
fn missing_input_exits_2_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = p300(dir.path(), &["preprocess", "nope.bin", "-o", "run"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("input not found"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["simulate", "--seed", "1", "--snr", "1,-0.5", "-o", "a"],
        vec!["simulate", "--subjects", "1", "-o", "b"],
        vec!["simulate", "--seed", "1", "--bogus"],
        vec!["simulate", "--seed", "1"],
        vec!["simulate", "--seed", "1", "--schedule", "spiral", "-o", "c"],
    ] {
        assert_eq!(code(&p300(dir.path(), &args)), 2, "{args:?}");
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn outputs_are_write_once() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["simulate", "--seed", "1", "--subjects", "1", "--conditions", "PC", "-o", "sim"]);
    let before = tree(&dir.path().join("sim"));
    let out = p300(dir.path(), &["simulate", "--seed", "2", "--subjects", "1", "-o", "sim"]);
    assert_eq!(code(&out), 2);
    assert_eq!(tree(&dir.path().join("sim")), before);
}

#[test]
fn simulate_and_preprocess_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["simulate", "--seed", "9", "--subjects", "1", "--snr", "0,2", "--workers", "1", "-o", "a"]);
    ok(d, &["simulate", "--seed", "9", "--subjects", "1", "--snr", "0,2", "--workers", "3", "-o", "b"]);
    let a = tree(&d.join("a"));
    assert_eq!(a, tree(&d.join("b")));
    // one session per SNR and condition
    assert_eq!(a.keys().filter(|p| p.extension().is_some_and(|e| e == "bin")).count(), 4);
    assert!(a.contains_key(Path::new("recordings/snr2-s01_VR.bin")));
    ok(d, &["preprocess", "a/recordings", "-o", "p1"]);
    ok(d, &["preprocess", "a/recordings", "-o", "p2", "--workers", "2"]);
    assert_eq!(tree(&d.join("p1")), tree(&d.join("p2")));
    let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("p1/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "preprocess");
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 12);
    assert!(manifest["outputs"].as_array().unwrap().iter().any(|o| o["path"] == "preprocessed/snr0-s01_PC.bin"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("run.toml"),
        "seed = 5\noutput_dir = \"from_config\"\nconditions = [\"VR\"]\n[simulate]\nn_subjects = 1\nsnr = [0.5]\n",
    )
    .unwrap();
    ok(d, &["simulate", "--config", "run.toml", "--seed", "6"]);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("from_config/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 6);
    let rows = csv_rows(&d.join("from_config/corpus.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["condition"], "VR");
    assert_eq!(rows[0]["snr"], "0.5");
}

#[test]
fn eval_default_grid_and_single_repetition() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let pre = corpus(d);
    let pre = pre.to_str().unwrap();
    ok(d, &["eval", pre, "--seed", "1", "--sets", "1", "-o", "grid"]);
    let rows = csv_rows(&d.join("grid/eval/grand_average.csv"));
    for cond in ["PC", "VR"] {
        let hr: Vec<_> = rows.iter().filter(|r| r["condition"] == cond && r["metric"] == "hr").collect();
        assert_eq!(hr.len(), 5 * 9);
        let rs: std::collections::BTreeSet<&str> = hr.iter().map(|r| r["r"].as_str()).collect();
        assert_eq!(rs.len(), 5);
    }
    for name in ["hr_vs_r.svg", "ba_vs_training.svg"] {
        assert!(d.join("grid/eval").join(name).is_file());
    }

    ok(d, &["eval", pre, "--seed", "1", "--sets", "1", "--repetitions", "1", "--fractions", "0.5", "-o", "one"]);
    let rows = csv_rows(&d.join("one/eval/metrics.csv"));
    assert!(rows.iter().all(|r| r["r"] == "1" && r["fraction"] == "0.5"));
    assert_eq!(rows.len(), 4 * 4);

    let out = p300(d, &["eval", pre, "-o", "noseed"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn erp_single_condition_has_no_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let pre = corpus(d);
    ok(d, &["erp", pre.to_str().unwrap(), "--conditions", "PC", "-o", "erp"]);
    let files = tree(&d.join("erp"));
    for ch in ["CZ", "PZ", "OZ"] {
        let svg = String::from_utf8(files[Path::new(&format!("erp/{ch}.svg"))].clone()).unwrap();
        assert!(!svg.contains("significance"));
    }
    assert!(!files.contains_key(Path::new("erp/clusters.json")));
    let rows = csv_rows(&d.join("erp/erp/grand_average.csv"));
    assert!(rows.iter().all(|r| r["condition"] == "PC" && r["n_subjects"] == "2"));

    let out = p300(d, &["erp", pre.to_str().unwrap(), "--channels", "T9", "-o", "bad"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn stats_needs_both_conditions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let pre = corpus(d);
    let out = p300(d, &["stats", pre.to_str().unwrap(), "--seed", "1", "--conditions", "VR", "-o", "st"]);
    assert_eq!(code(&out), 2);
    assert!(!d.join("st").exists());
}

#[test]
fn train_writes_models_for_selected_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let pre = corpus(d);
    ok(d, &["train", pre.to_str().unwrap(), "--blocks", "0,1,2", "--components", "3", "-o", "tr"]);
    let rows = csv_rows(&d.join("tr/models/summary.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r["n_target"] == "30" && r["n_nontarget"] == "150" && r["n_components"] == "3"));
    let model: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("tr/models/s01_VR.model.json")).unwrap()).unwrap();
    assert_eq!(model["train_blocks"], serde_json::json!([0, 1, 2]));
    let out = p300(d, &["train", pre.to_str().unwrap(), "--blocks", "40", "-o", "bad"]);
    assert_eq!(code(&out), 2);
}

/// VR responses carry an extra central bump at 150–310 ms; every subject is
/// otherwise drawn from the same templates.
fn effect_corpus(dir: &Path, n_subjects: usize) {
    let layout = ElectrodeLayout::standard_16();
    let timing = SessionTiming::default();
    for s in 0..n_subjects {
        for condition in [Condition::Pc, Condition::Vr] {
            let mut templates = ErpTemplates::for_condition(Condition::Pc);
            if condition == Condition::Vr {
                templates.components.push(ErpComponent {
                    name: "bump".into(),
                    amplitude_uv: 8.0,
                    latency_ms: 230.0,
                    width_ms: 40.0,
                    early: true,
                    spatial_weights: spatial_weights(&layout, "CZ", 0.35).unwrap(),
                });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(100 + s as u64 * 2 + condition as u64);
            let schedule = gen_session(&mut rng, timing).unwrap();
            let cfg = SynthConfig {
                subject_id: format!("s{s:02}"),
                condition,
                ..Default::default()
            };
            let rec: Recording = synth_recording(&schedule, &templates, 1.0, &cfg, &mut rng).unwrap();
            save_recording(&rec, &dir.join(format!("s{s:02}_{condition}.bin")), RecordingFormat::ColumnarBinary).unwrap();
        }
    }
}

#[test]
fn erp_overlay_marks_injected_window() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    std::fs::create_dir(&data).unwrap();
    effect_corpus(&data, 10);
    ok(d, &["erp", "data", "--seed", "3", "--permutations", "1000", "-o", "erp"]);
    let rows = csv_rows(&d.join("erp/erp/significance.csv"));
    let cz: Vec<_> = rows.iter().filter(|r| r["channel"] == "CZ").collect();
    assert!(!cz.is_empty(), "no significant window at CZ: {rows:?}");
    let (start, end): (f64, f64) = (cz[0]["start_ms"].parse().unwrap(), cz[0]["end_ms"].parse().unwrap());
    let overlap = (end.min(310.0) - start.max(150.0)).max(0.0) / 160.0;
    assert!(overlap > 0.5, "window {start}..{end}");
    assert!(cz[0]["p_value"].parse::<f64>().unwrap() < 0.05);
    let svg = std::fs::read_to_string(d.join("erp/erp/CZ.svg")).unwrap();
    assert!(svg.contains(r#"class="significance""#));
}
