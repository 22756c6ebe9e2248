mod common;

use common::*;
use nspgnn_core::data::{DataSplit, Dataset, FeatureMatrix, LabelVector};
use nspgnn_core::io::{read_checkpoint, write_checkpoint};
use nspgnn_core::knn::build_dual_knn_with;
use nspgnn_core::model::{forward, ModelInputs, Variant};
use nspgnn_core::synthetic::{generate_synthetic, SyntheticSpec};
use nspgnn_core::train::{accuracy, train, TrainConfig};

fn config(variant: Variant, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        variant,
        epochs,
        seed,
        k1: 5,
        k2: 5,
        hidden: vec![16],
        ..TrainConfig::default()
    }
}

fn dual_for(ds: &Dataset, cfg: &TrainConfig) -> Option<nspgnn_core::knn::DualKnnGraphs> {
    cfg.variant.needs_dual().then(|| {
        build_dual_knn_with(&ds.graph, &ds.features.view(), cfg.k1, cfg.k2, &cfg.taus).unwrap()
    })
}

fn separable() -> Dataset {
    generate_synthetic(&SyntheticSpec {
        n_nodes: 100,
        n_classes: 2,
        mean_degree: 6.0,
        homophily: 0.95,
        n_features: 8,
        class_sep: 4.0,
        noise: 0.3,
        seed: 11,
    })
    .unwrap()
}

#[test]
fn single_class_dataset_is_learned_immediately() {
    let base = random_dataset(3, 30, 4, 2);
    let labels = LabelVector::new(vec![0; 30], 2).unwrap();
    let split = DataSplit::stratified(&labels, 0.5, 0.2, 3);
    // A constant column stands in for the intercept the bias-free SGC lacks.
    let mut x = ndarray::Array2::ones((30, 5));
    x.slice_mut(ndarray::s![.., ..4])
        .assign(&base.features.view());
    let ds = Dataset::new(
        base.graph.clone(),
        FeatureMatrix::new(x).unwrap(),
        labels,
        split,
    )
    .unwrap();
    for variant in ALL_VARIANTS {
        let cfg = TrainConfig {
            lr: 0.05,
            ..config(variant, 50, 0)
        };
        let r = train(&ds, dual_for(&ds, &cfg).as_ref(), &cfg).unwrap();
        let last = *r.train_loss.last().unwrap();
        assert!(last < 0.05, "{}: final loss {last}", variant.name());
        assert_eq!(r.test_acc, 1.0);
    }
}

#[test]
fn separable_csbm_reaches_high_accuracy_for_every_variant() {
    let ds = separable();
    for variant in ALL_VARIANTS {
        let cfg = config(variant, 500, 0);
        let r = train(&ds, dual_for(&ds, &cfg).as_ref(), &cfg).unwrap();
        println!(
            "{}: test {:.3}, val {:.3}",
            variant.name(),
            r.test_acc,
            r.best_val_acc
        );
        assert!(r.test_acc >= 0.95, "{}: {}", variant.name(), r.test_acc);
        assert_eq!(r.loss_spikes, 0);
    }
}

#[test]
fn training_is_bitwise_deterministic() {
    let ds = random_dataset(5, 40, 5, 3);
    for variant in ALL_VARIANTS {
        let cfg = config(variant, 40, 9);
        let dual = dual_for(&ds, &cfg);
        let a = train(&ds, dual.as_ref(), &cfg).unwrap();
        let b = train(&ds, dual.as_ref(), &cfg).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.train_loss), bits(&b.train_loss));
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(a.best_epoch, b.best_epoch);
    }
}

#[test]
fn zero_learning_rate_keeps_initial_parameters() {
    let ds = random_dataset(6, 30, 4, 2);
    for variant in ALL_VARIANTS {
        let cfg = TrainConfig {
            lr: 0.0,
            ..config(variant, 10, 1)
        };
        let r = train(&ds, dual_for(&ds, &cfg).as_ref(), &cfg).unwrap();
        assert_eq!(r.final_params, r.best_params);
        assert!(r.train_loss.windows(2).all(|w| w[0] == w[1]));
    }
}

#[test]
fn best_epoch_has_maximal_validation_accuracy() {
    let ds = random_dataset(8, 40, 5, 2);
    let cfg = config(Variant::Nspgnn, 60, 2);
    let r = train(&ds, dual_for(&ds, &cfg).as_ref(), &cfg).unwrap();
    let max = r.val_acc.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(r.best_val_acc, max);
    assert_eq!(r.val_acc[r.best_epoch], max);
    assert!(
        r.val_acc[r.best_epoch + 1..].iter().all(|&v| v < max),
        "last epoch reaching the max wins"
    );
}

#[test]
fn checkpoint_replays_the_reported_test_accuracy() {
    let ds = separable();
    let dir = tempfile::tempdir().unwrap();
    for variant in ALL_VARIANTS {
        let cfg = config(variant, 80, 4);
        let dual = dual_for(&ds, &cfg);
        let r = train(&ds, dual.as_ref(), &cfg).unwrap();
        let path = dir.path().join(format!("{}.ckpt", variant.name()));
        write_checkpoint(&path, &r.best_params, cfg.seed, serde_json::Value::Null).unwrap();
        let (header, params) = read_checkpoint(&path).unwrap();
        assert_eq!(header.variant, variant);
        assert_eq!(params, r.best_params);
        let inputs = ModelInputs::new(variant, &ds, dual.as_ref(), cfg.sgc_tau).unwrap();
        let (probs, _) = forward(&params, &inputs).unwrap();
        let acc = accuracy(&probs, ds.labels.as_slice(), &ds.split.test).unwrap();
        assert_eq!(acc, r.test_acc);
    }
}

#[test]
fn features_are_required_to_be_finite() {
    let x = ndarray::Array2::from_elem((2, 2), f64::NAN);
    assert!(FeatureMatrix::new(x).is_err());
}
