//! MNIST-family datasets in IDX format.
//!
//! Files are looked up as `<data_root>/<dataset>/<file>` where `<file>` is one
//! of the standard uncompressed IDX names (`train-images-idx3-ubyte`, …).
//! Pixels are scaled to `[0, 1]` by dividing by 255.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::IMAGE_SIDE;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
const UBYTE: u8 = 0x08;
const CLASSES: usize = 10;

/// Type code and dimensions from an IDX header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub dtype: u8,
    pub dims: Vec<u32>,
}

impl IdxHeader {
    pub fn is_ubyte(&self) -> bool {
        self.dtype == UBYTE
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Size of the encoded header in bytes.
    pub fn len(&self) -> usize {
        4 + 4 * self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn parse(bytes: &[u8]) -> Option<IdxHeader> {
        if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
            return None;
        }
        let ndim = bytes[3] as usize;
        let body = bytes.get(4..4 + 4 * ndim)?;
        let dims = body
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Some(IdxHeader {
            dtype: bytes[2],
            dims,
        })
    }

    fn magic(&self) -> u32 {
        u32::from_be_bytes([0, 0, self.dtype, self.dims.len() as u8])
    }
}

fn read_ubyte_idx(path: &Path, magic: u32) -> Result<(IdxHeader, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::data(path, format!("cannot read: {e}")))?;
    let header = IdxHeader::parse(&bytes)
        .ok_or_else(|| Error::data(path, "truncated or malformed IDX header"))?;
    if header.magic() != magic {
        return Err(Error::data(
            path,
            format!(
                "wrong magic 0x{:08x}, expected 0x{magic:08x}",
                header.magic()
            ),
        ));
    }
    let payload = &bytes[header.len()..];
    let expected: usize = header.dims.iter().map(|&d| d as usize).product();
    if payload.len() < expected {
        return Err(Error::data(
            path,
            format!("truncated payload: {} of {expected} bytes", payload.len()),
        ));
    }
    let payload = payload[..expected].to_vec();
    Ok((header, payload))
}

/// Raw `u8` pixels of an IDX image file, `count × 28 × 28`.
pub fn read_idx_image_bytes(path: impl AsRef<Path>) -> Result<(usize, Vec<u8>)> {
    let path = path.as_ref();
    let (header, pixels) = read_ubyte_idx(path, IMAGES_MAGIC)?;
    let (rows, cols) = (header.dims[1] as usize, header.dims[2] as usize);
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::data(
            path,
            format!("images are {rows}x{cols}, expected {IMAGE_SIDE}x{IMAGE_SIDE}"),
        ));
    }
    Ok((header.dims[0] as usize, pixels))
}

/// Images as an `[N, 1, 28, 28]` tensor scaled to `[0, 1]`.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Tensor> {
    let (count, pixels) = read_idx_image_bytes(path)?;
    let data = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new(&[count, 1, IMAGE_SIDE, IMAGE_SIDE], data)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let (_, labels) = read_ubyte_idx(path, LABELS_MAGIC)?;
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= CLASSES) {
        return Err(Error::data(path, format!("label {bad} outside 0..=9")));
    }
    Ok(labels)
}

pub fn encode_idx_images(count: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), count * IMAGE_SIDE * IMAGE_SIDE);
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    for d in [count, IMAGE_SIDE, IMAGE_SIDE] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    FashionMnist,
    Kmnist,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion_mnist",
            DatasetName::Kmnist => "kmnist",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetName::Mnist),
            "fashion_mnist" | "fashion-mnist" | "fashionmnist" => Ok(DatasetName::FashionMnist),
            "kmnist" => Ok(DatasetName::Kmnist),
            other => Err(Error::Config(format!(
                "unknown dataset `{other}` (expected mnist, fashion_mnist or kmnist)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn files(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }
}

/// Paths `load` will read for `name` under `root`.
pub fn expected_files(root: &Path, name: DatasetName) -> Vec<PathBuf> {
    [Split::Train, Split::Test]
        .iter()
        .flat_map(|s| {
            let (i, l) = s.files();
            [i, l].map(|f| root.join(name.as_str()).join(f))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: DatasetName,
    images: Tensor,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(name: DatasetName, images: Tensor, labels: Vec<usize>) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1..] != [1, IMAGE_SIDE, IMAGE_SIDE] || shape[0] != labels.len()
        {
            return Err(Error::shape(
                "dataset",
                shape,
                &[labels.len(), 1, IMAGE_SIDE, IMAGE_SIDE],
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= CLASSES) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: CLASSES,
            });
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            name,
            images,
            labels,
        })
    }

    pub fn load(root: &Path, name: DatasetName, split: Split) -> Result<Self> {
        let dir = root.join(name.as_str());
        let (img, lbl) = split.files();
        let images = load_idx_images(dir.join(img))?;
        let label_path = dir.join(lbl);
        let labels: Vec<usize> = load_idx_labels(&label_path)?
            .into_iter()
            .map(usize::from)
            .collect();
        if labels.len() != images.shape()[0] {
            return Err(Error::data(
                label_path,
                format!("{} labels for {} images", labels.len(), images.shape()[0]),
            ));
        }
        Self::new(name, images, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Gathers the given samples into a batch tensor and label list.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let px = IMAGE_SIDE * IMAGE_SIDE;
        let mut data = Vec::with_capacity(indices.len() * px);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * px..(i + 1) * px]);
        }
        let images = Tensor::new(&[indices.len(), 1, IMAGE_SIDE, IMAGE_SIDE], data)
            .expect("gathered whole images");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// The first `n` samples after one seeded shuffle (all of them if
    /// `n >= len`).
    pub fn subset(&self, n: usize, seed: u64) -> Dataset {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut stream_rng(seed, SUBSET_STREAM));
        order.truncate(n.min(self.len()));
        let (images, labels) = self.gather(&order);
        Dataset {
            name: self.name,
            images,
            labels,
        }
    }
}

const SUBSET_STREAM: u64 = u64::MAX;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Batches of sample indices for one epoch; the order depends only on
/// `(seed, epoch)` and the final short batch is kept.
pub fn epoch_batches(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut stream_rng(seed, epoch));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Epoch-0 batches over `d`, optionally restricted to a seeded subset.
/// Indices refer to `d`.
pub fn make_batches(
    d: &Dataset,
    batch_size: usize,
    seed: u64,
    subset: Option<usize>,
) -> Vec<Vec<usize>> {
    let mut pool: Vec<usize> = (0..d.len()).collect();
    if let Some(n) = subset {
        pool.shuffle(&mut stream_rng(seed, SUBSET_STREAM));
        pool.truncate(n.min(d.len()));
    }
    epoch_batches(pool.len(), batch_size, seed, 0)
        .into_iter()
        .map(|b| b.into_iter().map(|i| pool[i]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn synthetic(n: usize) -> Dataset {
        let images = Tensor::full(&[n, 1, 28, 28], 0.5);
        Dataset::new(DatasetName::Mnist, images, (0..n).map(|i| i % 10).collect()).unwrap()
    }

    #[test]
    fn header_constants() {
        let h = IdxHeader::parse(&[0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 28, 0, 0, 0, 28]).unwrap();
        assert!(h.is_ubyte());
        assert_eq!(h.ndim(), 3);
        assert_eq!(h.dims, vec![1, 28, 28]);
        let h = IdxHeader::parse(&[0, 0, 8, 1, 0, 0, 0, 5]).unwrap();
        assert!(h.is_ubyte());
        assert_eq!(h.ndim(), 1);
    }

    #[test]
    fn all_white_image_loads_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img");
        fs::write(&path, encode_idx_images(1, &[255; 784])).unwrap();
        let t = load_idx_images(&path).unwrap();
        assert_eq!(t.shape(), &[1, 1, 28, 28]);
        assert!(t.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn single_label_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lbl");
        fs::write(&path, encode_idx_labels(&[7])).unwrap();
        assert_eq!(load_idx_labels(&path).unwrap(), vec![7]);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f");

        fs::write(&p, encode_idx_labels(&[1, 2])).unwrap();
        assert!(load_idx_images(&p)
            .unwrap_err()
            .to_string()
            .contains("magic"));

        let mut truncated = encode_idx_images(2, &[0; 2 * 784]);
        truncated.truncate(100);
        fs::write(&p, truncated).unwrap();
        assert!(load_idx_images(&p)
            .unwrap_err()
            .to_string()
            .contains("truncated"));

        let mut wrong_dims = IMAGES_MAGIC.to_be_bytes().to_vec();
        for d in [1u32, 20, 20] {
            wrong_dims.extend_from_slice(&d.to_be_bytes());
        }
        wrong_dims.extend_from_slice(&[0; 400]);
        fs::write(&p, wrong_dims).unwrap();
        assert!(load_idx_images(&p)
            .unwrap_err()
            .to_string()
            .contains("20x20"));

        fs::write(&p, encode_idx_labels(&[3, 10])).unwrap();
        assert!(load_idx_labels(&p).is_err());

        assert!(load_idx_labels(dir.path().join("missing")).is_err());
    }

    #[test]
    fn missing_dataset_names_expected_file() {
        let dir = tempfile::tempdir().unwrap();
        let err = Dataset::load(dir.path(), DatasetName::Kmnist, Split::Train).unwrap_err();
        assert!(err.to_string().contains("train-images-idx3-ubyte"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn batch_sizes_keep_short_tail() {
        let sizes: Vec<usize> = make_batches(&synthetic(10), 4, 0, None)
            .iter()
            .map(Vec::len)
            .collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    #[test]
    fn batching_is_deterministic_per_seed() {
        let d = synthetic(50);
        assert_eq!(
            make_batches(&d, 8, 3, Some(20)),
            make_batches(&d, 8, 3, Some(20))
        );
        assert_ne!(epoch_batches(50, 8, 3, 0), epoch_batches(50, 8, 3, 1));
    }

    #[test]
    fn subset_takes_requested_count() {
        let d = synthetic(30);
        let s = d.subset(12, 5);
        assert_eq!(s.len(), 12);
        assert_eq!(s, d.subset(12, 5));
        assert_eq!(d.subset(100, 5).len(), 30);
        let batched: usize = make_batches(&d, 5, 5, Some(12)).iter().map(Vec::len).sum();
        assert_eq!(batched, 12);
    }

    #[test]
    fn dataset_validates_contents() {
        assert!(Dataset::new(DatasetName::Mnist, Tensor::zeros(&[2, 1, 28, 28]), vec![1]).is_err());
        assert!(
            Dataset::new(DatasetName::Mnist, Tensor::zeros(&[1, 1, 28, 28]), vec![10]).is_err()
        );
        assert!(Dataset::new(
            DatasetName::Mnist,
            Tensor::full(&[1, 1, 28, 28], 2.0),
            vec![1]
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn epoch_is_a_permutation(len in 0usize..200, bs in 1usize..40, seed: u64, epoch in 0u64..5) {
            let mut seen: Vec<usize> = epoch_batches(len, bs, seed, epoch).concat();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..len).collect::<Vec<_>>());
        }

        #[test]
        fn idx_bytes_round_trip(pixels in proptest::collection::vec(any::<u8>(), 784 * 2), labels in proptest::collection::vec(0u8..10, 1..20)) {
            let dir = tempfile::tempdir().unwrap();
            let ip = dir.path().join("i");
            let lp = dir.path().join("l");
            let ibytes = encode_idx_images(2, &pixels);
            let lbytes = encode_idx_labels(&labels);
            fs::write(&ip, &ibytes).unwrap();
            fs::write(&lp, &lbytes).unwrap();
            let (count, raw) = read_idx_image_bytes(&ip).unwrap();
            prop_assert_eq!(encode_idx_images(count, &raw), ibytes);
            prop_assert_eq!(encode_idx_labels(&load_idx_labels(&lp).unwrap()), lbytes);
        }
    }
}
