//! Desk-scale run of the backbone / mixture / backbone schedule on the
//! bundled MNIST files, driven through the library API.
//!
//!     cargo run --release --example three_cycle_training -- data 0.2

use std::path::PathBuf;

use mixact::data::{Dataset, DatasetName, Split};
use mixact::model::{Model, ModelConfig};
use mixact::report::{format_weight_table, trend_annotation, weight_table};
use mixact::schedule::{Schedule, TrainOptions, Trainer};

fn main() -> mixact::Result<()> {
    let mut args = std::env::args().skip(1);
    let root = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let scale: f64 = args.next().map_or(0.2, |s| s.parse().expect("epoch scale"));

    let train = Dataset::load(&root, DatasetName::Mnist, Split::Train)?.subset(2000, 0);
    let test = Dataset::load(&root, DatasetName::Mnist, Split::Test)?.subset(1000, 0);
    let schedule = Schedule::three_cycle().scale_epochs(scale)?;

    let mut trainer = Trainer::new(
        Model::new(ModelConfig::standard(), 0),
        TrainOptions::default(),
    );
    for phase in schedule.phases() {
        let m = trainer.run_phase(&train, &test, phase)?;
        for e in &m.epochs {
            println!(
                "phase {} [{}] epoch {}: loss {:.4}, test accuracy {:.4}",
                m.phase, phase.trainable, e.epoch, e.train_loss, e.test_accuracy
            );
        }
    }
    let rows = weight_table(&trainer.model);
    print!(
        "\n{}\n{}",
        format_weight_table(&rows),
        trend_annotation(&rows)
    );
    Ok(())
}
