use mixact::autodiff::Tensor;
use mixact::checkpoint::Checkpoint;
use mixact::data::{Dataset, DatasetName};
use mixact::model::{Group, Model, ModelConfig};
use mixact::schedule::{checkpoint_path, PhaseConfig, Schedule, TrainOptions, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noisy_bands(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = vec![0.0; n * 784];
    let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
    for (img, &y) in pixels.chunks_exact_mut(784).zip(&labels) {
        for (i, px) in img.iter_mut().enumerate() {
            let band = (i / 28) / 3 == y;
            *px = if band { 0.8 } else { 0.0 } + rng.gen_range(0.0..0.2);
        }
    }
    Dataset::new(
        DatasetName::Mnist,
        Tensor::new(&[n, 1, 28, 28], pixels).unwrap(),
        labels,
    )
    .unwrap()
}

fn schedule() -> Schedule {
    Schedule::new(vec![
        PhaseConfig::new(Group::Backbone, 1e-2, 2).unwrap(),
        PhaseConfig::new(Group::Mixture, 1e-2, 1).unwrap(),
        PhaseConfig::new(Group::Backbone, 1e-2, 1).unwrap(),
    ])
    .unwrap()
}

fn options(out: Option<&std::path::Path>) -> TrainOptions {
    TrainOptions {
        batch_size: 16,
        seed: 11,
        out_dir: out.map(|p| p.to_path_buf()),
        ..TrainOptions::default()
    }
}

#[test]
fn resuming_from_a_phase_checkpoint_matches_an_uninterrupted_run() {
    let (train, test) = (noisy_bands(80, 1), noisy_bands(40, 2));
    let dir = tempfile::tempdir().unwrap();

    let mut straight = Trainer::new(
        Model::new(ModelConfig::tiny(), 11),
        options(Some(dir.path())),
    );
    straight.run_schedule(&train, &test, &schedule()).unwrap();

    let ckpt = Checkpoint::load(checkpoint_path(dir.path(), 1)).unwrap();
    assert_eq!(ckpt.phases_done, 1);
    let mut resumed = Trainer::from_checkpoint(ckpt, options(None));
    let report = resumed.run_schedule(&train, &test, &schedule()).unwrap();
    assert_eq!(
        report.phases.iter().map(|p| p.phase).collect::<Vec<_>>(),
        vec![2, 3]
    );

    assert_eq!(
        resumed.checkpoint().to_bytes(),
        Checkpoint::load(checkpoint_path(dir.path(), 3))
            .unwrap()
            .to_bytes()
    );
}

#[test]
fn training_learns_a_separable_task() {
    let (train, test) = (noisy_bands(200, 3), noisy_bands(100, 4));
    let mut trainer = Trainer::new(Model::new(ModelConfig::tiny(), 0), options(None));
    let report = trainer.run_schedule(&train, &test, &schedule()).unwrap();
    let first = report.phases[0].epochs[0].train_loss;
    let last = report.phases[2].epochs.last().unwrap().train_loss;
    assert!(last < first, "loss {first} -> {last}");
    assert!(report.final_accuracy() > 0.9, "{}", report.final_accuracy());
}

#[test]
fn mixture_weights_respect_floor_under_aggressive_rate() {
    let (train, test) = (noisy_bands(64, 5), noisy_bands(20, 6));
    let mut trainer = Trainer::new(Model::new(ModelConfig::tiny(), 2), options(None));
    let phase = PhaseConfig::new(Group::Mixture, 5.0, 2).unwrap();
    trainer.run_phase(&train, &test, &phase).unwrap();
    for w in trainer.model.mixtures() {
        assert!(w.raw().iter().all(|&v| v >= 1e-6), "{:?}", w.raw());
    }
}
