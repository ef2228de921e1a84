use std::fs;
use std::path::Path;

use octnet_core::data::{generate_synthetic_fixture, scan_dataset, AugmentConfig, DatasetManifest, FixtureSpec, Split};
use octnet_core::model::{build, Arch, ArchConfig, Network};
use octnet_core::nn::ForwardCtx;
use octnet_core::seed;
use octnet_core::train::{
    evaluate_split, fit, load_checkpoint, save_checkpoint, train_step, Optimizer, OptimizerKind, TrainConfig,
    CURVE_HEADER,
};
use octnet_core::{Error, Tensor};

fn dataset(dir: &Path, per_class: usize) -> DatasetManifest {
    let spec = FixtureSpec { train_per_class: per_class, val_per_class: 2, test_per_class: 2, size: 16, seed: 3 };
    generate_synthetic_fixture(&spec, dir).unwrap();
    scan_dataset(dir).unwrap()
}

fn small_net(seed: u64) -> Network {
    build(Arch::VanillaCnn, &ArchConfig::default().with_width_divisor(16).with_seed(seed)).unwrap()
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 8, seed: 1, augment: AugmentConfig::disabled(), ..TrainConfig::default() }
}

#[test]
fn loss_decreases_over_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(dir.path(), 8);
    let mut net = small_net(2);
    let curve = fit(&mut net, &m, &quick_config(4), |_| {}).unwrap();
    assert_eq!(curve.len(), 4);
    assert!(curve[3].train_loss < curve[0].train_loss, "{curve:?}");
    assert!(curve.iter().all(|p| (0.0..=1.0).contains(&p.train_acc) && (0.0..=1.0).contains(&p.val_acc)));
}

#[test]
fn train_step_is_deterministic_and_updates_weights() {
    let x = Tensor::<f32>::random_uniform([4, 150, 150, 3], 0.0, 1.0, &mut seed::rng(1));
    let y = Tensor::from_fn([4, 4], |i| if i % 5 == 0 { 1.0 } else { 0.0 });
    let run = || {
        let mut net = small_net(7);
        let mut opt = Optimizer::new(OptimizerKind::SgdMomentum, 0.01, 0.9);
        let stats = train_step(&mut net, &mut opt, &x, &y, &ForwardCtx::train(5)).unwrap();
        (stats.loss, net.state().iter().flat_map(|(_, t)| t.data().to_vec()).collect::<Vec<f32>>())
    };
    let (l1, w1) = run();
    let (l2, w2) = run();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(w1, w2);
    let before: Vec<f32> = small_net(7).state().iter().flat_map(|(_, t)| t.data().to_vec()).collect();
    assert_ne!(before, w1);
}

#[test]
fn fit_writes_curve_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let m = dataset(&dir.path().join("data"), 4);
    let mut cfg = quick_config(2);
    cfg.curve_path = Some(dir.path().join("curve.csv"));
    cfg.checkpoint_path = Some(dir.path().join("model.octm"));
    let mut net = small_net(1);
    let curve = fit(&mut net, &m, &cfg, |_| {}).unwrap();

    let csv = fs::read_to_string(dir.path().join("curve.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CURVE_HEADER);
    assert_eq!(lines[1..], curve.iter().map(|p| p.csv_row()).collect::<Vec<_>>()[..]);

    let ckpt = load_checkpoint::<f32>(dir.path().join("model.octm")).unwrap();
    assert_eq!(ckpt.header.arch, Arch::VanillaCnn);
    assert_eq!(ckpt.header.rng.as_ref().unwrap().epochs_completed, 2);
    assert_eq!(ckpt.header.train_config.as_ref().unwrap().seed, 1);
    let a = evaluate_split(&net, &m, Split::Test, 3).unwrap();
    let b = evaluate_split(&ckpt.network, &m, Split::Test, 5).unwrap();
    assert_eq!(a.predictions, b.predictions);
    assert!((a.loss - b.loss).abs() < 1e-6);
}

#[test]
fn checkpoint_rejects_mismatched_payload() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.octm");
    save_checkpoint(&small_net(1), None, None, &path).unwrap();
    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 4);
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::CheckpointTruncated(_))));
    bytes[0] = b'X';
    fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::CheckpointCorrupt(_))));
}

#[test]
fn fit_needs_train_and_val_items() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = dataset(dir.path(), 2);
    m.splits[Split::Val.index()].files.iter_mut().for_each(|f| f.clear());
    let err = fit(&mut small_net(1), &m, &quick_config(1), |_| {}).unwrap_err();
    assert!(matches!(err, Error::EmptyInput(_)), "{err}");
}

#[test]
fn config_validation() {
    let bad = [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
        TrainConfig { learning_rate: f64::NAN, ..TrainConfig::default() },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(Error::Parameter(_))), "{cfg:?}");
    }
    assert!(TrainConfig::default().validate().is_ok());
}

#[test]
fn adam_and_sgd_reduce_quadratic() {
    for kind in [OptimizerKind::Adam, OptimizerKind::SgdMomentum] {
        let mut w = Tensor::<f64>::from_fn([3], |i| i as f64 + 1.0);
        let mut opt = Optimizer::new(kind, 0.05, 0.9);
        for _ in 0..300 {
            let g = w.clone(); // d/dw of |w|^2 / 2
            opt.step(vec![&mut w], &[&g]).unwrap();
        }
        assert!(w.data().iter().all(|v| v.abs() < 0.05), "{kind:?}: {:?}", w.data());
    }
}
