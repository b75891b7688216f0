use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use iepg::config::RunConfig;
use iepg_core::fusion::{FusionConfig, Variant};
use iepg_core::gec::GecConfig;
use iepg_core::train::TrainConfig;

fn iepg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iepg"))
        .args(args)
        .env_remove("IEPG_SEED")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = iepg(args);
    assert!(
        out.status.success(),
        "iepg {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Run {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_owned();
        Run { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn dataset(&self) -> PathBuf {
        let d = self.path("data");
        ok(&["dataset", "--out", s(&d), "--persons", "4", "--yaw-step", "90", "--size", "16", "--test-persons", "1", "--seed", "2"]);
        d
    }

    fn config(&self, data: &Path, out: &str) -> PathBuf {
        let mut cfg = RunConfig::new(data, self.path(out));
        cfg.train = TrainConfig {
            batch_size: 1,
            gec_steps: 4,
            pis_steps: 3,
            increments: 1,
            pair_gap_deg: 180.0,
            gec_increments: vec![0, 1],
            ..TrainConfig::default()
        };
        cfg.gec = GecConfig {
            feat_dim: 8,
            hidden: 8,
            layers: 1,
            disc_hidden: 4,
            ..GecConfig::default()
        };
        cfg.fusion = FusionConfig {
            d: 8,
            heads: 2,
            variant: Variant::S,
            enc_channels: 4,
            ffn_mult: 2,
            queue_capacity: 2,
            iec_channels: 2,
            disc_channels: 4,
            ..FusionConfig::default()
        };
        cfg.checkpoint_every = 2;
        let path = self.path(&format!("{out}.json"));
        std::fs::write(&path, cfg.to_json()).unwrap();
        path
    }
}

fn files(dir: &Path, prefix: &str) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with(prefix))
        .collect();
    v.sort();
    v
}

#[test]
fn dataset_command_writes_every_frame() {
    let run = Run::new();
    let d = run.dataset();
    let index: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("index.json")).unwrap()).unwrap();
    assert_eq!(index["frames"].as_array().unwrap().len(), 16);
    assert_eq!(files(&d.join("person_003"), "yaw_"), ["yaw_000.ppm", "yaw_001.ppm", "yaw_002.ppm", "yaw_003.ppm"]);
}

#[test]
fn train_infer_eval_pipeline() {
    let run = Run::new();
    let data = run.dataset();
    let cfg = run.config(&data, "out");
    let out = run.path("out");

    // The synthesis stage needs a trained evolution model.
    let r = iepg(&["train", "pis", "--config", s(&cfg)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("--gec"));

    let stdout = ok(&["train", "gec", "--config", s(&cfg)]);
    assert!(stdout.contains("gec: 4 steps"), "{stdout}");
    let gec = out.join("gec.ckpt");
    let log = std::fs::read_to_string(out.join("gec_loss.log")).unwrap();
    assert!(log.lines().count() >= 4 && log.starts_with("step 0 "), "{log}");
    assert!(out.join("config.json").exists());

    ok(&["train", "pis", "--config", s(&cfg), "--gec", s(&gec)]);
    let pis = out.join("pis.ckpt");
    let log = std::fs::read_to_string(out.join("pis_loss.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.contains(" pis_g ")).count(), 3);

    for (inc, frames) in [("0", 1), ("1", 2)] {
        let dir = run.path(&format!("infer{inc}"));
        ok(&[
            "infer", "--fusion", s(&pis), "--gec", s(&gec), "--dataset", s(&data), "--source", "3:0",
            "--target-yaw", "180", "--increments", inc, "--out", s(&dir),
        ]);
        let images = files(&dir, "image_t");
        let expected: Vec<String> = (1..=frames).map(|t| format!("image_t{t:02}.ppm")).collect();
        assert_eq!(images, expected);
        assert_eq!(files(&dir, "overlay_t").len(), frames);
        assert_eq!(files(&dir, "semantic_t").len(), frames);
        let seq: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("sequence.json")).unwrap()).unwrap();
        assert_eq!(seq["frames"].as_array().unwrap().len(), frames);
    }

    // Yaws outside the dataset grid and malformed ids are usage errors.
    for (src, yaw) in [("3:0", "45"), ("9:0", "180"), ("x", "180")] {
        let r = iepg(&[
            "infer", "--fusion", s(&pis), "--gec", s(&gec), "--dataset", s(&data), "--source", src,
            "--target-yaw", yaw, "--out", s(&run.path("bad")),
        ]);
        assert_eq!(r.status.code(), Some(2), "{src} {yaw}");
    }

    let report = run.path("report.json");
    let table = ok(&[
        "eval", "--fusion", s(&pis), "--gec", s(&gec), "--dataset", s(&data), "--pairs", "sampled", "3", "--out",
        s(&report),
    ]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["pairs"].as_array().unwrap().len(), 3);
    assert!(v["mean_ssim"].as_f64().unwrap().is_finite());
    assert!(table.lines().count() >= 4);

    // An evolution checkpoint is not a synthesizer.
    let r = iepg(&["eval", "--fusion", s(&gec), "--dataset", s(&data), "--out", s(&report)]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn reruns_are_bit_identical() {
    let run = Run::new();
    let data = run.dataset();
    let read = |name: &str| std::fs::read(run.path(name)).unwrap();
    for out in ["a", "b"] {
        let cfg = run.config(&data, out);
        ok(&["train", "gec", "--config", s(&cfg)]);
        let gec = run.path(out).join("gec.ckpt");
        ok(&["train", "pis", "--config", s(&cfg), "--gec", s(&gec)]);
    }
    for f in ["gec.ckpt", "gec_loss.log", "pis.ckpt", "pis_loss.log"] {
        assert_eq!(read(&format!("a/{f}")), read(&format!("b/{f}")), "{f}");
    }
}

#[test]
fn seed_environment_overrides_the_config() {
    let run = Run::new();
    let data = run.dataset();
    let cfg = run.config(&data, "out");
    let with_seed = |seed: &str| {
        Command::new(env!("CARGO_BIN_EXE_iepg"))
            .args(["train", "gec", "--config", s(&cfg), "--steps", "1"])
            .env("IEPG_SEED", seed)
            .output()
            .unwrap()
    };
    assert_eq!(with_seed("abc").status.code(), Some(2));
    assert!(with_seed("9").status.success());
    let written: RunConfig = serde_json::from_str(&std::fs::read_to_string(run.path("out/config.json")).unwrap()).unwrap();
    assert_eq!(written.train.seed, 9);
}

#[test]
fn ablate_names_every_arm() {
    let run = Run::new();
    let data = run.dataset();
    let cfg = run.config(&data, "out");
    let r = iepg(&["ablate", "--config", s(&cfg), "--arms", "no_attention"]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("unknown arm"));

    let stdout = ok(&["ablate", "--config", s(&cfg), "--arms", "full", "remove1", "inc0", "no_iec"]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.path("out/ablation.json")).unwrap()).unwrap();
    let names: Vec<&str> = v["arms"].as_array().unwrap().iter().map(|a| a["arm"].as_str().unwrap()).collect();
    assert_eq!(names, ["full", "remove1", "inc0", "no_iec"]);
    for n in names {
        assert!(stdout.contains(n));
    }
    assert!(run.path("out/ablation.txt").exists());
    assert!(run.path("out/gec_loss.log").exists());
}
