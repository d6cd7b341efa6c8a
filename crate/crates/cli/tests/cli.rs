use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dunetplus::arch::Model;
use dunetplus::data::load_dir;
use dunetplus::train::evaluate;

fn dunp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dunp"))
        .args(args)
        .current_dir(cwd)
        .env_remove("DUNP_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/overfit_disks.json")
}

const TINY: &str = r#"{
  "seed": 4,
  "output_dir": "tiny",
  "data": {"synthetic": {"kind": "disk", "count": 6}, "split": [0.5, 0.5, 0.0]},
  "network": {"levels": 2, "base_channels": 2, "input_size": [16, 16], "in_channels": 1},
  "train": {"lr0": 0.001, "max_epochs": 3}
}"#;

fn tiny_run(dir: &Path) -> PathBuf {
    std::fs::write(dir.join("tiny.json"), TINY).unwrap();
    let o = dunp(&["train", "tiny.json"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("tiny")
}

#[test]
fn help_lists_every_command() {
    let dir = tempfile::tempdir().unwrap();
    let o = dunp(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for cmd in ["train", "eval", "predict", "gradcheck", "ablate", "ttest", "synth"] {
        assert!(text.contains(cmd), "{cmd} missing from help:\n{text}");
    }
    let o = dunp(&["train", "--help"], dir.path());
    assert!(stdout(&o).contains("--seed") && stdout(&o).contains("--output-dir"));
}

#[test]
fn bundled_example_overfits() {
    let dir = tempfile::tempdir().unwrap();
    let o = dunp(&["train", bundled().to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("runs/overfit_disks");
    // The resolved config is written back in canonical form.
    let saved = std::fs::read_to_string(out.join("config.json")).unwrap();
    assert_eq!(saved, std::fs::read_to_string(bundled()).unwrap());
    for f in ["model.dunp", "log.csv", "metrics.csv", "config.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mean = metrics.lines().find(|l| l.starts_with("mean,")).unwrap();
    let dsc: f64 = mean.split(',').nth(7).unwrap().parse().unwrap();
    assert!(dsc > 0.95, "{mean}");
}

#[test]
fn same_seed_gives_identical_log_and_env_seed_changes_it() {
    let dir = tempfile::tempdir().unwrap();
    let run = tiny_run(dir.path());
    let first = std::fs::read(run.join("log.csv")).unwrap();
    let again = tiny_run(dir.path());
    assert_eq!(first, std::fs::read(again.join("log.csv")).unwrap());

    let o = Command::new(env!("CARGO_BIN_EXE_dunp"))
        .args(["train", "tiny.json", "--output-dir", "env"])
        .current_dir(dir.path())
        .env("DUNP_SEED", "5")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let saved = std::fs::read_to_string(dir.path().join("env/config.json")).unwrap();
    assert!(saved.contains("\"seed\": 5"));
    assert_ne!(first, std::fs::read(dir.path().join("env/log.csv")).unwrap());

    let o = Command::new(env!("CARGO_BIN_EXE_dunp"))
        .args(["train", "tiny.json", "--output-dir", "flag", "--seed", "4"])
        .current_dir(dir.path())
        .env("DUNP_SEED", "5")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(first, std::fs::read(dir.path().join("flag/log.csv")).unwrap());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\n  \"seed\": 1,\n  \"network\": {\"levels\": }\n}").unwrap();
    let o = dunp(&["train", "bad.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3 column"), "{}", stderr(&o));

    std::fs::write(dir.path().join("unknown.json"), r#"{"train": {"learning_rate": 0.1}}"#).unwrap();
    let o = dunp(&["train", "unknown.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"));

    let o = dunp(&["train", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(dir.path().join("nodata.json"), "{}").unwrap();
    assert_eq!(dunp(&["train", "nodata.json"], dir.path()).status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TINY.replace("\"lr0\": 0.001", "\"lr0\": 1e300");
    std::fs::write(dir.path().join("hot.json"), cfg).unwrap();
    let o = dunp(&["train", "hot.json"], dir.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn eval_matches_library_and_rejects_wrong_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let run = tiny_run(dir.path());
    assert!(dunp(&["synth", "--out", "data", "--count", "3", "--size", "16", "--seed", "8"], dir.path())
        .status
        .success());
    let o = dunp(&["eval", "--checkpoint", "tiny/model.dunp", "--data", "data", "--out", "m.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let model = Model::load(run.join("model.dunp")).unwrap();
    let lib = evaluate(&model, &load_dir(dir.path().join("data"), 1).unwrap(), 0.5).unwrap();
    assert_eq!(std::fs::read_to_string(dir.path().join("m.csv")).unwrap(), lib.to_csv_string().unwrap());

    let o = dunp(&["eval", "--checkpoint", "tiny/model.dunp", "--data", "data"], dir.path());
    assert_eq!(stdout(&o), lib.to_csv_string().unwrap());

    assert!(dunp(&["synth", "--out", "big", "--count", "1", "--size", "32"], dir.path()).status.success());
    let o = dunp(&["eval", "--checkpoint", "tiny/model.dunp", "--data", "big"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = dunp(&["predict", "--checkpoint", "tiny/model.dunp", "--image", "big/disk0000.png"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn predict_writes_identical_binary_masks() {
    let dir = tempfile::tempdir().unwrap();
    tiny_run(dir.path());
    image::GrayImage::new(16, 16).save(dir.path().join("zero.png")).unwrap();
    for out in ["p1", "p2"] {
        let o = dunp(
            &["predict", "--checkpoint", "tiny/model.dunp", "--image", "zero.png", "--out-dir", out],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for m in ["mask1.png", "mask2.png"] {
        let a = std::fs::read(dir.path().join("p1").join(m)).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("p2").join(m)).unwrap());
        let img = image::load_from_memory(&a).unwrap();
        assert_eq!(img.color(), image::ColorType::L8);
        assert!(img.to_luma8().pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
    }
}

fn metrics_csv(rows: &[(&str, f64)]) -> String {
    let mut s = String::from("sample_id,tp,fp,tn,fn,precision,recall,dsc,iou\n");
    for (id, d) in rows {
        s += &format!("{id},1,0,0,0,1.0,1.0,{d},{d}\n");
    }
    s
}

#[test]
fn ttest_reports_known_values_and_guards_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("a.csv"), metrics_csv(&[("x", 0.4), ("y", 0.5), ("z", 0.6)])).unwrap();
    std::fs::write(p.join("b.csv"), metrics_csv(&[("z", 0.3), ("x", 0.3), ("y", 0.3)])).unwrap();
    let o = dunp(&["ttest", "a.csv", "b.csv"], p);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("t = 3.4641") && text.contains("df = 2") && text.contains("p = 0.0742"), "{text}");
    assert!(text.contains("not significant at 0.05"));

    assert_eq!(dunp(&["ttest", "a.csv", "a.csv"], p).status.code(), Some(2));
    std::fs::write(p.join("c.csv"), metrics_csv(&[("x", 0.1), ("y", 0.2), ("w", 0.3)])).unwrap();
    assert_eq!(dunp(&["ttest", "a.csv", "c.csv"], p).status.code(), Some(2));
    std::fs::write(p.join("d.csv"), metrics_csv(&[("x", 0.1), ("y", 0.2)])).unwrap();
    assert_eq!(dunp(&["ttest", "a.csv", "d.csv"], p).status.code(), Some(2));
    assert_eq!(dunp(&["ttest", "a.csv", "b.csv", "--column", "auc"], p).status.code(), Some(2));
}

#[test]
fn gradcheck_default_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = dunp(&["gradcheck"], dir.path());
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    assert!(text.contains("se_aspp") && text.contains("tag") && text.contains("model net2.dec.l0"));
    assert!(text.trim_end().ends_with("overall PASS"));
}

#[test]
fn ablate_writes_seven_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TINY.replace("\"max_epochs\": 3", "\"max_epochs\": 2");
    std::fs::write(dir.path().join("abl.json"), cfg).unwrap();
    let o = dunp(&["ablate", "abl.json", "--out", "abl.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("abl.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 8);
    for name in ["baseline", "w/o MKRC", "w/o TAM", "w/o TAG", "w/o TAM&MKRC", "w/o TAM&MKRC&TAG", "full"] {
        assert!(lines.iter().any(|l| l.starts_with(&format!("{name},"))), "{name}");
    }
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        assert!(dunp(&["synth", "--out", out, "--count", "2", "--size", "16", "--kind", "blob", "--seed", "3"], dir.path())
            .status
            .success());
    }
    for f in ["blob0000.png", "blob0000_mask.png", "blob0001.png", "blob0001_mask.png"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
    assert_eq!(dunp(&["synth", "--out", "c", "--kind", "star"], dir.path()).status.code(), Some(2));
}
