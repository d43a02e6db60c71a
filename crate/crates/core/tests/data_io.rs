use std::fs;

use pgn_core::data::checkpoint::{
    load_checkpoint, load_parameters, save_checkpoint, save_parameters, Checkpoint,
};
use pgn_core::data::config::{parse_config, parse_document};
use pgn_core::data::synthetic::{generate, SyntheticConfig};
use pgn_core::data::{load_dataset, save_dataset, Dataset, Format, Split};
use pgn_core::models::{desk_classifier, AccessPolicy, FrozenClassifier};
use pgn_core::train::{
    train_classifier, ClassifierOptions, LossVariant, Mode, PgnTrainer, TrainConfig,
};
use pgn_core::Error;

fn small(n: usize, split: Split) -> Dataset {
    generate(n, 5, split, &SyntheticConfig::default()).unwrap()
}

fn quick_classifier(train: &Dataset) -> FrozenClassifier {
    let opts = ClassifierOptions::new(1, 0);
    train_classifier(train, train, desk_classifier(10), &opts)
        .unwrap()
        .0
}

fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::new(Mode::Enhance, LossVariant::LeastSquares);
    cfg.epochs = 3;
    cfg.batch_size = 8;
    cfg.seed = 11;
    cfg
}

#[test]
fn both_formats_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small(12, Split::Test);
    for format in [Format::IdxBinary, Format::RawTensorDir] {
        let sub = dir.path().join(format!("{format:?}"));
        save_dataset(&ds, &sub, format).unwrap();
        let back = load_dataset(&sub, Split::Test, format, 10).unwrap();
        assert_eq!(back.images(), ds.images());
        assert_eq!(back.labels(), ds.labels());
    }
}

#[test]
fn damaged_files_give_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small(10, Split::Train);
    save_dataset(&ds, dir.path(), Format::IdxBinary).unwrap();
    let images = dir.path().join("train-images.idx");
    let bytes = fs::read(&images).unwrap();

    fs::write(&images, &bytes[..bytes.len() - 7]).unwrap();
    assert!(matches!(
        load_dataset(dir.path(), Split::Train, Format::IdxBinary, 10),
        Err(Error::Truncated { .. })
    ));

    let mut bad = bytes.clone();
    bad[3] = 0x42;
    fs::write(&images, &bad).unwrap();
    assert!(matches!(
        load_dataset(dir.path(), Split::Train, Format::IdxBinary, 10),
        Err(Error::CorruptHeader { .. })
    ));

    fs::write(&images, &bytes).unwrap();
    assert!(matches!(
        load_dataset(dir.path(), Split::Train, Format::IdxBinary, 3),
        Err(Error::LabelOutOfRange { .. })
    ));
}

#[test]
fn config_file_resolves_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.txt");
    fs::write(&path, "mode = adversarial\n[classifier]\nepochs = 2\n").unwrap();
    let rc = parse_config(&path).unwrap();
    assert_eq!(rc.train.gamma, 3.0);
    assert_eq!(rc.train.loss, LossVariant::LeastSquares);
    assert!(rc.networks.is_empty());
    fs::write(&path, "mode = enhance\nlearning_rate = 1\n").unwrap();
    assert!(matches!(parse_config(&path), Err(Error::UnknownKey { .. })));
    assert!(matches!(
        parse_document("epochs = 2.5"),
        Err(Error::TypeMismatch { .. })
    ));
}

#[test]
fn checkpoint_round_trip_is_byte_equal() {
    let train = small(24, Split::Train);
    let f = quick_classifier(&train);
    let mut trainer = PgnTrainer::new(tiny_config(), &train, &f).unwrap();
    trainer.run_epoch().unwrap();
    let ck = Checkpoint {
        config: tiny_config(),
        trainer: trainer.state(),
        classifier: f.network().params().to_vec(),
    };

    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&a, &ck).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    assert_eq!(loaded, ck);
    save_checkpoint(&b, &loaded).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(!dir.path().join("a.tmp").exists());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let train = small(24, Split::Train);
    let f = quick_classifier(&train);

    let mut straight = PgnTrainer::new(tiny_config(), &train, &f).unwrap();
    straight.run().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let mut first = PgnTrainer::new(tiny_config(), &train, &f).unwrap();
    first.run_epoch().unwrap();
    let ck = Checkpoint {
        config: tiny_config(),
        trainer: first.state(),
        classifier: f.network().params().to_vec(),
    };
    save_checkpoint(&path, &ck).unwrap();

    let loaded = load_checkpoint(&path).unwrap();
    let mut resumed = PgnTrainer::new(loaded.config.clone(), &train, &f).unwrap();
    resumed.restore(loaded.trainer).unwrap();
    resumed.run().unwrap();
    assert_eq!(resumed.rows(), straight.rows());
    assert_eq!(resumed.state(), straight.state());
}

#[test]
fn truncated_checkpoint_is_corrupt() {
    let train = small(16, Split::Train);
    let f = quick_classifier(&train);
    let trainer = PgnTrainer::new(tiny_config(), &train, &f).unwrap();
    let ck = Checkpoint {
        config: tiny_config(),
        trainer: trainer.state(),
        classifier: f.network().params().to_vec(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    save_checkpoint(&path, &ck).unwrap();
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(Error::CorruptCheckpoint { .. })
    ));
    fs::write(&path, b"not a checkpoint").unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(Error::CorruptCheckpoint { .. })
    ));
}

#[test]
fn classifier_parameters_round_trip() {
    let train = small(16, Split::Train);
    let f = quick_classifier(&train);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.params");
    save_parameters(&path, f.network().params()).unwrap();
    let back = load_parameters(&path).unwrap();
    assert_eq!(back, f.network().params());
    let mut net = f.network().clone();
    net.restore(back).unwrap();
    assert_eq!(
        FrozenClassifier::new(net, AccessPolicy::WhiteBoxLogits).checksum(),
        f.checksum()
    );
}
