//! Writes a small IDX dataset, loads it back and walks two seeded epochs.
//!
//!     cargo run --example idx_dataset

use std::fs;

use mixact::data::{
    encode_idx_images, encode_idx_labels, epoch_batches, expected_files, Dataset, DatasetName,
    IdxHeader, Split,
};

fn main() -> mixact::Result<()> {
    let root = std::env::temp_dir().join(format!("mixact-idx-{}", std::process::id()));
    let files = expected_files(&root, DatasetName::Kmnist);
    fs::create_dir_all(files[0].parent().unwrap())?;
    for (count, image_path, label_path) in [(12, &files[0], &files[1]), (4, &files[2], &files[3])] {
        let pixels: Vec<u8> = (0..count * 784).map(|i| (i % 256) as u8).collect();
        let labels: Vec<u8> = (0..count).map(|i| (i % 10) as u8).collect();
        fs::write(image_path, encode_idx_images(count, &pixels))?;
        fs::write(label_path, encode_idx_labels(&labels))?;
    }

    let header = IdxHeader::parse(&fs::read(&files[0])?).expect("valid header");
    println!("{}: dims {:?}", files[0].display(), header.dims);

    let train = Dataset::load(&root, DatasetName::Kmnist, Split::Train)?;
    println!("loaded {} images, labels {:?}", train.len(), train.labels());
    for epoch in 0..2 {
        println!(
            "epoch {epoch}: {:?}",
            epoch_batches(train.len(), 5, 42, epoch)
        );
    }

    let small = train.subset(6, 42);
    println!("seeded subset of 6: labels {:?}", small.labels());
    fs::remove_dir_all(&root)?;
    Ok(())
}
