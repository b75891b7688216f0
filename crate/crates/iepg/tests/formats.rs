use iepg::checkpoint::{Checkpoint, Stage};
use iepg::config::{parse_seed, RunConfig};
use iepg::data::{load_dataset, parse_frame_id, read_index, write_dataset, Split, INDEX};
use iepg::images::{from_rgb, read_ppm, to_rgb, write_ppm};
use iepg::CliError;
use iepg_core::fusion::{FusionConfig, FusionModel, Variant};
use iepg_core::gec::{GecConfig, GecModel};
use iepg_core::metrics::{eval_report, EvalOptions};
use iepg_core::pose::{gen_dataset, DatasetConfig, ImageTensor};
use iepg_core::train::{
    fusion_digest, gec_digest, gec_validation, select_pairs, train_gec, train_pis, PairSelection, TrainConfig,
};
use iepg_core::{rng_from_seed, Tensor};
use rand::Rng as _;

fn small(persons: usize, step: f64, size: usize) -> DatasetConfig {
    DatasetConfig {
        n_persons: persons,
        yaw_step_deg: step,
        image_size: size,
        seed: 5,
        test_persons: Some(1),
    }
}

fn gec_cfg() -> GecConfig {
    GecConfig {
        feat_dim: 8,
        hidden: 8,
        layers: 1,
        disc_hidden: 4,
        ..GecConfig::default()
    }
}

fn fusion_cfg() -> FusionConfig {
    FusionConfig {
        image_size: 16,
        d: 8,
        heads: 2,
        variant: Variant::S,
        enc_channels: 4,
        ffn_mult: 2,
        queue_capacity: 2,
        iec_channels: 2,
        disc_channels: 4,
        ..FusionConfig::default()
    }
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        batch_size: 1,
        gec_steps: 3,
        pis_steps: 2,
        increments: 1,
        pair_gap_deg: 180.0,
        gec_increments: vec![0, 1],
        ..TrainConfig::default()
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let data = gen_dataset(&small(3, 90.0, 16)).unwrap();
    let gec = GecModel::new(&gec_cfg(), &mut rng_from_seed(1)).unwrap();
    let gec = train_gec(&data, gec, &train_cfg(), |_| {}).unwrap();
    let ck = Checkpoint::from_gec(&gec, &train_cfg(), 3);
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.meta.stage, Stage::Gec);
    assert_eq!(gec_digest(&back.to_gec().unwrap()), gec_digest(&gec));
    // Stage confusion is refused.
    assert!(matches!(back.to_fusion(), Err(CliError::Usage(_))));

    let model = FusionModel::new(&fusion_cfg(), &mut rng_from_seed(2)).unwrap();
    let (model, _) = train_pis(&data, model, Some(gec.clone()), &train_cfg(), |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pis.ckpt");
    Checkpoint::from_fusion(&model, &train_cfg(), 2).save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap().to_fusion().unwrap();
    assert_eq!(fusion_digest(&loaded), fusion_digest(&model));
    assert!(!dir.path().join(".pis.ckpt.tmp").exists());
}

#[test]
fn reloaded_models_reproduce_validation_scores() {
    let data = gen_dataset(&small(3, 90.0, 16)).unwrap();
    let cfg = train_cfg();
    let gec = train_gec(&data, GecModel::new(&gec_cfg(), &mut rng_from_seed(1)).unwrap(), &cfg, |_| {}).unwrap();
    let gec2 = Checkpoint::from_bytes(&Checkpoint::from_gec(&gec, &cfg, 3).to_bytes())
        .unwrap()
        .to_gec()
        .unwrap();
    let (a, b) = (
        gec_validation(&gec, &data, &cfg, 1, 7).unwrap(),
        gec_validation(&gec2, &data, &cfg, 1, 7).unwrap(),
    );
    assert_eq!(a.pose.to_bits(), b.pose.to_bits());

    let model = FusionModel::new(&fusion_cfg(), &mut rng_from_seed(2)).unwrap();
    let (model, _) = train_pis(&data, model, Some(gec.clone()), &cfg, |_| {}).unwrap();
    let model2 = Checkpoint::from_bytes(&Checkpoint::from_fusion(&model, &cfg, 2).to_bytes())
        .unwrap()
        .to_fusion()
        .unwrap();
    let pairs = select_pairs(&data, &data.test_ids, &PairSelection::Exhaustive, 0).unwrap();
    let opts = EvalOptions { steps: 2, remove: 0, seed: 3 };
    assert_eq!(
        eval_report(&model, Some(&gec), &data, &pairs, &opts).unwrap(),
        eval_report(&model2, Some(&gec2), &data, &pairs, &opts).unwrap()
    );
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let gec = GecModel::new(&gec_cfg(), &mut rng_from_seed(1)).unwrap();
    let bytes = Checkpoint::from_gec(&gec, &train_cfg(), 0).to_bytes();
    for cut in [0, 3, 8, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(CliError::Format(_))),
            "truncated at {cut}"
        );
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(CliError::Format(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(CliError::Format(_))));
    let mut bad = bytes.clone();
    bad.push(0);
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(CliError::Format(_))));
    // A tensor missing from an otherwise valid file.
    let mut ck = Checkpoint::from_gec(&gec, &train_cfg(), 0);
    ck.tensors.pop();
    let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
    assert!(back.to_gec().is_err());
}

#[test]
fn ppm_round_trip() {
    let mut rng = rng_from_seed(4);
    let q = |v: f64| (v * 255.0).round() / 255.0;
    let img = ImageTensor::new(Tensor::from_fn(&[3, 9, 13], |_| q(rng.random_range(0.0..1.0)))).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ppm");
    write_ppm(&path, &img).unwrap();
    let back = read_ppm(&path).unwrap();
    assert_eq!((back.height(), back.width()), (9, 13));
    for (a, b) in img.tensor().data().iter().zip(back.tensor().data()) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(from_rgb(&to_rgb(&back)).unwrap(), back);
    let raw = std::fs::read(&path).unwrap();
    assert!(raw.starts_with(b"P6"));
}

#[test]
fn config_rejects_unknown_keys() {
    let p = std::path::Path::new("run.json");
    let good = RunConfig::new("data", "out").to_json();
    assert_eq!(RunConfig::from_json(&good, p).unwrap(), RunConfig::new("data", "out"));
    let minimal = r#"{"dataset": "d", "out_dir": "o"}"#;
    assert_eq!(RunConfig::from_json(minimal, p).unwrap().checkpoint_every, 100);
    for bad in [
        r#"{"dataset": "d", "out_dir": "o", "lr": 1}"#,
        r#"{"dataset": "d", "out_dir": "o", "train": {"lr_decay": 1}}"#,
        r#"{"dataset": "d", "out_dir": "o", "fusion": {"ablation": {"no_attention": true}}}"#,
    ] {
        assert!(matches!(RunConfig::from_json(bad, p), Err(CliError::Json { .. })), "{bad}");
    }
    let invalid = r#"{"dataset": "d", "out_dir": "o", "train": {"batch_size": 0}}"#;
    assert!(RunConfig::from_json(invalid, p).is_err());
}

#[test]
fn seed_values_parse() {
    assert_eq!(parse_seed("42").unwrap(), 42);
    assert_eq!(parse_seed(" 7\n").unwrap(), 7);
    for bad in ["", "-1", "x", "1.5"] {
        assert!(matches!(parse_seed(bad), Err(CliError::Usage(_))), "{bad}");
    }
}

#[test]
fn dataset_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(4, 90.0, 16);
    let (data, index) = write_dataset(&cfg, dir.path()).unwrap();
    assert_eq!(index.frames.len(), 16);
    assert_eq!(index.frames.iter().filter(|f| f.split == Split::Test).count(), 4);
    assert!(dir.path().join(INDEX).exists());
    assert_eq!(read_index(dir.path()).unwrap(), index);
    for e in &index.frames {
        let img = read_ppm(&dir.path().join(&e.file)).unwrap();
        let orig = &data.frame(e.person, e.yaw_index).image;
        let err = img
            .tensor()
            .data()
            .iter()
            .zip(orig.tensor().data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 0.5 / 255.0 + 1e-12, "{}: {err}", e.id);
    }
    let loaded = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded.digest(), data.digest());
    assert_eq!(parse_frame_id("3:2", &loaded).unwrap(), (3, 2));
    for bad in ["3", "4:0", "0:4", "a:b"] {
        assert!(matches!(parse_frame_id(bad, &loaded), Err(CliError::Usage(_))), "{bad}");
    }
    // Same seed, same bytes on disk.
    let dir2 = tempfile::tempdir().unwrap();
    let (_, index2) = write_dataset(&cfg, dir2.path()).unwrap();
    assert_eq!(index2.digest, index.digest);
    let f = &index.frames[5].file;
    assert_eq!(
        std::fs::read(dir.path().join(f)).unwrap(),
        std::fs::read(dir2.path().join(f)).unwrap()
    );
    // A tampered index no longer matches its configuration.
    let text = std::fs::read_to_string(dir.path().join(INDEX)).unwrap();
    std::fs::write(dir.path().join(INDEX), text.replace(&index.digest, "0000000000000000")).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(CliError::Format(_))));
}

#[test]
fn default_dataset_frame_count() {
    let cfg = DatasetConfig { image_size: 16, ..DatasetConfig::default() };
    assert_eq!((cfg.n_persons, cfg.yaw_step_deg), (28, 15.0));
    let data = gen_dataset(&cfg).unwrap();
    assert_eq!(data.frame_count(), 28 * 24);
}
