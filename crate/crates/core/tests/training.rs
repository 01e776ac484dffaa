mod common;

use ddrecon::checkpoint::Checkpoint;
use ddrecon::mri::{
    generate_dataset, Dataset, DatasetSplit, KSpaceVolume, SamplingMask, SyntheticConfig,
};
use ddrecon::training::{TrainConfig, Trainer, BEST_CHECKPOINT, HISTORY_FILE, LATEST_CHECKPOINT};
use ddrecon::{DdCsenet, Error};

fn small_dataset(slices: usize) -> Dataset {
    generate_dataset(&SyntheticConfig {
        height: 32,
        width: 32,
        ncoil: 2,
        slices,
        ..Default::default()
    })
    .unwrap()
}

fn split(train: &[usize], val: &[usize]) -> DatasetSplit {
    let id = |i: &usize| format!("slice_{i:04}");
    DatasetSplit {
        train: train.iter().map(id).collect(),
        val: val.iter().map(id).collect(),
        test: vec![],
    }
}

fn config(dir: &std::path::Path, n: usize, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new(n, dir);
    cfg.epochs = epochs;
    cfg.learning_rate = 1e-3;
    cfg
}

#[test]
fn one_epoch_writes_both_checkpoints() {
    let ds = small_dataset(3);
    let dir = tempfile::tempdir().unwrap();
    let mut trainer = Trainer::new(
        &ds,
        &split(&[0, 1], &[2]),
        common::tiny_cascade_config(2, true),
        config(dir.path(), 2, 1),
    )
    .unwrap();
    trainer.run().unwrap();
    assert!(dir.path().join(LATEST_CHECKPOINT).exists());
    assert!(dir.path().join(BEST_CHECKPOINT).exists());
    let history = std::fs::read_to_string(dir.path().join(HISTORY_FILE)).unwrap();
    let fields: Vec<&str> = history.trim_end().split('\t').collect();
    assert_eq!(fields.len(), 3);
    assert_eq!(fields[0], "1");
    let loss: f64 = fields[1].parse().unwrap();
    assert!(loss > 0.0);
    assert_eq!(
        fields[1]
            .trim_start_matches(['-', '0', '.'])
            .replace('.', "")
            .len(),
        9
    );

    let best =
        DdCsenet::from_checkpoint(&Checkpoint::load(&dir.path().join(BEST_CHECKPOINT)).unwrap())
            .unwrap();
    assert_eq!(best.params(), trainer.best_model().params());
}

#[test]
fn resume_reproduces_uninterrupted_run() {
    let ds = small_dataset(5);
    let sp = split(&[0, 1, 2], &[3, 4]);
    let cascade = common::tiny_cascade_config(2, true);

    let full_dir = tempfile::tempdir().unwrap();
    let mut full = Trainer::new(&ds, &sp, cascade.clone(), config(full_dir.path(), 2, 3)).unwrap();
    full.run().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut first = Trainer::new(&ds, &sp, cascade, config(dir.path(), 2, 2)).unwrap();
    first.run().unwrap();
    drop(first);
    let mut resumed = Trainer::resume(&ds, &sp, config(dir.path(), 2, 3)).unwrap();
    assert_eq!(resumed.epochs_done(), 2);
    let next = resumed.run_epoch().unwrap();
    let reference = full.history()[2];
    assert!((next.train_loss - reference.train_loss).abs() < 1e-9);
    assert_eq!(next, reference);
    assert_eq!(resumed.model().params(), full.model().params());
    assert_eq!(
        std::fs::read(dir.path().join(HISTORY_FILE)).unwrap(),
        std::fs::read(full_dir.path().join(HISTORY_FILE)).unwrap()
    );
}

#[test]
fn training_is_bit_deterministic() {
    let ds = small_dataset(3);
    let sp = split(&[0, 1], &[2]);
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(
            &ds,
            &sp,
            common::tiny_cascade_config(1, false),
            config(dir.path(), 1, 2),
        )
        .unwrap();
        t.run().unwrap();
        (
            std::fs::read(dir.path().join(LATEST_CHECKPOINT)).unwrap(),
            std::fs::read(dir.path().join(HISTORY_FILE)).unwrap(),
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_loss_names_the_batch() {
    let good = small_dataset(2);
    let mut data = good.slices[0].volume.tensor().clone();
    data.data_mut()[0] = f64::NAN;
    let bad = KSpaceVolume::from_tensor(data, "broken").unwrap();
    let ds = Dataset::new(
        vec![good.slices[1].volume.clone(), bad],
        vec![SamplingMask::full(32), SamplingMask::full(32)],
    )
    .unwrap();
    let sp = DatasetSplit {
        train: vec!["broken".into()],
        val: vec!["slice_0001".into()],
        test: vec![],
    };
    let dir = tempfile::tempdir().unwrap();
    let err = Trainer::new(
        &ds,
        &sp,
        common::tiny_cascade_config(1, false),
        config(dir.path(), 1, 1),
    )
    .unwrap()
    .run()
    .unwrap_err();
    match err {
        Error::NonFinite(msg) => {
            assert!(msg.contains("batch 1"), "{msg}");
            assert!(msg.contains("broken"), "{msg}");
        }
        other => panic!("expected a non-finite error, got {other:?}"),
    }
}

#[test]
fn rejects_unknown_or_empty_splits() {
    let ds = small_dataset(3);
    let dir = tempfile::tempdir().unwrap();
    let empty = split(&[], &[1]);
    assert!(matches!(
        Trainer::new(
            &ds,
            &empty,
            common::tiny_cascade_config(1, false),
            config(dir.path(), 1, 1)
        ),
        Err(Error::EmptySplit(_))
    ));
    let unknown = DatasetSplit {
        train: vec!["nope".into()],
        val: vec!["slice_0001".into()],
        test: vec![],
    };
    assert!(Trainer::new(
        &ds,
        &unknown,
        common::tiny_cascade_config(1, false),
        config(dir.path(), 1, 1)
    )
    .is_err());
}
