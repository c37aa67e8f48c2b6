//! Prints the mixture weights stored in a checkpoint and the accuracy of
//! every phase checkpoint of a run directory.
//!
//!     cargo run --release --example checkpoint_report -- runs/default data

use std::path::PathBuf;

use mixact::checkpoint::Checkpoint;
use mixact::data::{Dataset, DatasetName, Split};
use mixact::report::{format_weight_table, weight_table};
use mixact::schedule::{checkpoint_path, evaluate};

fn main() -> mixact::Result<()> {
    let mut args = std::env::args().skip(1);
    let run = PathBuf::from(
        args.next()
            .expect("usage: checkpoint_report <run dir> [data root]"),
    );
    let root = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let test = Dataset::load(&root, DatasetName::Mnist, Split::Test)?;

    let mut phase = 1;
    while checkpoint_path(&run, phase).exists() {
        let ckpt = Checkpoint::load(checkpoint_path(&run, phase))?;
        println!(
            "after phase {phase} ({} epochs total, adam step {}): test accuracy {:.4}",
            ckpt.epochs_done,
            ckpt.adam.t,
            evaluate(&ckpt.model, &test)?
        );
        print!("{}", format_weight_table(&weight_table(&ckpt.model)));
        phase += 1;
    }
    if phase == 1 {
        eprintln!("no checkpoints under {}", run.display());
    }
    Ok(())
}
