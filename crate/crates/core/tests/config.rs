use mmformer::config::{RunConfig, FAST_TEST_CAP, FAST_TRAIN_PER_CLASS};
use mmformer::data::TrainAmount;
use mmformer::model::Modality;
use mmformer::training::DecayMode;
use mmformer::Error;
use proptest::prelude::*;

#[test]
fn snapshot_round_trips() {
    let text = "seed = 9\nscales = 8,2\nmodality = lidar_only\nglobal_softmax = yes\nlr = 0.001\ndecay_mode = coupled\ntrain_fraction = 0.3\ntest_cap = 40\nconv3d_kernel = 3,3,3\n";
    let cfg = RunConfig::from_text(text).unwrap();
    assert_eq!(cfg.model.modality, Modality::LidarOnly);
    assert_eq!(cfg.train.decay_mode, DecayMode::Coupled);
    assert_eq!(cfg.split.train, TrainAmount::Fraction(0.3));
    assert_eq!((cfg.model.seed, cfg.train.seed, cfg.split.seed), (9, 9, 9));
    let back = RunConfig::from_text(&cfg.to_text()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.to_text(), cfg.to_text());
    assert_eq!(RunConfig::from_text(&RunConfig::default().to_text()).unwrap(), RunConfig::default());
}

#[test]
fn comments_and_blank_lines_are_skipped() {
    let cfg = RunConfig::from_text("# header\n\n  depth = 2   # trailing\n\t\n").unwrap();
    assert_eq!(cfg.model.depth, 2);
    assert!(cfg.is_explicit("depth"));
    assert!(!cfg.is_explicit("lr"));
}

#[test]
fn later_lines_win() {
    let mut cfg = RunConfig::from_text("epochs = 5\nepochs = 7\n").unwrap();
    assert_eq!(cfg.train.epochs, 7);
    cfg.apply_text("epochs = 9").unwrap();
    assert_eq!(cfg.train.epochs, 9);
}

#[test]
fn bad_lines_name_the_key() {
    for (text, field) in [
        ("colour = red", "colour"),
        ("depth = two", "depth"),
        ("global_softmax = maybe", "global_softmax"),
        ("scales = 16,3", "scales"),
        ("conv3d_kernel = 3,3", "conv3d_kernel"),
        ("modality = sonar", "modality"),
        ("just words", "line 1"),
    ] {
        match RunConfig::from_text(text) {
            Err(Error::Config { field: f, .. }) => assert_eq!(f, field, "{text}"),
            other => panic!("{text}: {other:?}"),
        }
    }
}

#[test]
fn validation_catches_inconsistent_values() {
    assert!(RunConfig::default().validate().is_ok());
    for text in ["embed_dim = 10\nscales = 16,8,4", "lr = -1", "batch_train = 0", "train_fraction = 1.5", "depth = 0"] {
        let cfg = RunConfig::from_text(text).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config { .. })), "{text}");
    }
}

#[test]
fn scene_fit_respects_explicit_values() {
    let mut cfg = RunConfig::default();
    cfg.fit_scene(64, 2, 11).unwrap();
    assert_eq!((cfg.model.tokenizer.hsi_bands, cfg.model.tokenizer.lidar_bands, cfg.model.num_classes), (64, 2, 11));

    let mut cfg = RunConfig::from_text("num_classes = 6").unwrap();
    assert!(cfg.fit_scene(63, 1, 6).is_ok());
    assert!(matches!(cfg.fit_scene(64, 2, 11), Err(Error::ParamMismatch(_))));
}

#[test]
fn fast_profile_shrinks_the_split() {
    let mut cfg = RunConfig::default();
    cfg.apply_fast();
    assert_eq!(cfg.split.train, TrainAmount::PerClass(FAST_TRAIN_PER_CLASS));
    assert_eq!(cfg.split.test_cap, Some(FAST_TEST_CAP));
    assert_eq!(cfg.train.epochs, 50);
}

#[test]
fn missing_file_names_the_path() {
    let mut cfg = RunConfig::default();
    let e = cfg.apply_file("/no/such/run.cfg").unwrap_err();
    assert!(e.to_string().contains("/no/such/run.cfg"), "{e}");
}

proptest! {
    #[test]
    fn numeric_fields_round_trip(seed in any::<u64>(), epochs in 1usize..500, lr in 1e-6f64..1.0, gamma in 0.01f64..1.0, cap in proptest::option::of(1usize..1000)) {
        let mut cfg = RunConfig::default();
        cfg.set("seed", &seed.to_string()).unwrap();
        cfg.set("epochs", &epochs.to_string()).unwrap();
        cfg.set("lr", &lr.to_string()).unwrap();
        cfg.set("gamma", &gamma.to_string()).unwrap();
        cfg.split.test_cap = cap;
        let back = RunConfig::from_text(&cfg.to_text()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
