//! Datasets: the 1-D blue/red/blue toy problem and MNIST-style IDX files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, IdxError, Result};
use crate::tensor::Tensor;

pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;
pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;

pub const MNIST_IMAGES: &str = "train-images-idx3-ubyte";
pub const MNIST_LABELS: &str = "train-labels-idx1-ubyte";

/// Labelled rows. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.shape().len() != 2 || inputs.rows() != labels.len() {
            return Err(Error::Dimension {
                op: "dataset",
                left: inputs.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::contract(format!("label {bad} out of range for {num_classes} classes")));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// Always false: construction rejects empty data.
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Rows `idx` as a batch.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        (self.inputs.select_rows(idx), idx.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let (inputs, labels) = self.batch(idx);
        Self::new(inputs, labels, self.num_classes)
    }

    /// The first `n` rows.
    pub fn take(&self, n: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// `(train, validation)` after a seeded shuffle; `train` gets
/// `round(fraction * N)` rows.
pub fn split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::contract(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let n = ds.len();
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::contract(format!("split of {n} rows at {fraction} leaves one side empty")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((ds.subset(&idx[..n_train])?, ds.subset(&idx[n_train..])?))
}

pub const TOY_BLUE: usize = 0;
pub const TOY_RED: usize = 1;

/// Blue on `[-3, -1)`, red on `[-1, 1)`, blue on `[1, 3)`; `n` points in each
/// blue segment and `2n` red, so the classes balance exactly.
pub fn generate_toy_1d(n_per_segment: usize, seed: u64) -> Result<Dataset> {
    if n_per_segment == 0 {
        return Err(Error::contract("toy data needs n_per_segment >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(4 * n_per_segment);
    let mut ys = Vec::with_capacity(4 * n_per_segment);
    for (lo, hi, count, label) in [
        (-3.0, -1.0, n_per_segment, TOY_BLUE),
        (-1.0, 1.0, 2 * n_per_segment, TOY_RED),
        (1.0, 3.0, n_per_segment, TOY_BLUE),
    ] {
        for _ in 0..count {
            xs.push(rng.gen_range(lo..hi));
            ys.push(label);
        }
    }
    Dataset::new(Tensor::new([xs.len(), 1], xs)?, ys, 2)
}

/// Best accuracy of any single-threshold rule `x > t => class a` on a
/// binary problem, over every cut between sorted values and both polarities.
pub fn best_threshold_accuracy(values: &[f64], labels: &[usize]) -> f64 {
    assert_eq!(values.len(), labels.len());
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let total_ones = labels.iter().filter(|&&y| y == 1).count();
    // cut before position i: indices order[..i] predicted 0, the rest 1
    let mut ones_below = 0;
    let mut best = total_ones.max(n - total_ones);
    for i in 1..=n {
        ones_below += usize::from(labels[order[i - 1]] == 1);
        if i < n && values[order[i]] == values[order[i - 1]] {
            continue;
        }
        let zeros_below = i - ones_below;
        let ones_above = total_ones - ones_below;
        let correct = zeros_below + ones_above;
        best = best.max(correct).max(n - correct);
    }
    best as f64 / n as f64
}

fn open_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(GzDecoder::new(BufReader::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes)
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| {
            IdxError::Truncated {
                path: path.to_path_buf(),
                expected: at + 4,
                found: bytes.len(),
            }
            .into()
        })
}

/// Parses an IDX file with unsigned-byte payload: `(dims, payload)`.
fn read_idx(path: &Path, magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = open_maybe_gz(path)?;
    let found = be_u32(&bytes, 0, path)?;
    if found != magic {
        return Err(IdxError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        }
        .into());
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|i| be_u32(&bytes, 4 + 4 * i, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * rank;
    let expected = start + dims.iter().product::<usize>();
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        }
        .into());
    }
    Ok((dims, bytes[start..expected].to_vec()))
}

/// Images scaled to `[0, 1]` as `N x (rows * cols)` plus labels `0..10`.
pub fn load_mnist_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (images, labels) = (images.as_ref(), labels.as_ref());
    let (img_dims, pixels) = read_idx(images, IDX_IMAGE_MAGIC)?;
    let (lbl_dims, raw_labels) = read_idx(labels, IDX_LABEL_MAGIC)?;
    if img_dims[0] != lbl_dims[0] {
        return Err(IdxError::CountMismatch {
            images: img_dims[0],
            labels: lbl_dims[0],
        }
        .into());
    }
    if let Some(&bad) = raw_labels.iter().find(|&&y| y >= 10) {
        return Err(IdxError::LabelRange {
            path: labels.to_path_buf(),
            label: bad,
            classes: 10,
        }
        .into());
    }
    let n = img_dims[0];
    if n == 0 {
        return Err(Error::contract(format!("{} holds no images", images.display())));
    }
    let inputs = Tensor::new([n, img_dims[1] * img_dims[2]], pixels.iter().map(|&p| p as f64 / 255.0).collect())?;
    Dataset::new(inputs, raw_labels.iter().map(|&y| y as usize).collect(), 10)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let result = if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(BufWriter::new(file), Compression::default());
        enc.write_all(bytes).and_then(|_| enc.finish()?.flush())
    } else {
        let mut w = BufWriter::new(file);
        w.write_all(bytes).and_then(|_| w.flush())
    };
    result.map_err(|e| Error::io(path, e))
}

/// Writes `ds` as an IDX image/label pair with `rows x cols` images.
/// Pixels are stored as `round(255 v)`; a `.gz` suffix compresses.
pub fn write_idx(ds: &Dataset, rows: usize, cols: usize, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    if rows * cols != ds.input_dim() {
        return Err(Error::contract(format!("{rows}x{cols} images for input width {}", ds.input_dim())));
    }
    if ds.labels().iter().any(|&y| y > u8::MAX as usize) {
        return Err(Error::contract("IDX labels must fit in a byte"));
    }
    let n = ds.len() as u32;
    let mut img = Vec::with_capacity(16 + ds.inputs().numel());
    for v in [IDX_IMAGE_MAGIC, n, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(ds.inputs().data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    let mut lbl = Vec::with_capacity(8 + ds.len());
    for v in [IDX_LABEL_MAGIC, n] {
        lbl.extend_from_slice(&v.to_be_bytes());
    }
    lbl.extend(ds.labels().iter().map(|&y| y as u8));
    write_bytes(images.as_ref(), &img)?;
    write_bytes(labels.as_ref(), &lbl)
}

/// Locates the training image/label pair in `dir`, gzipped or not.
pub fn mnist_paths(dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    let find = |stem: &str| {
        [format!("{stem}.gz"), stem.to_string()]
            .into_iter()
            .map(|f| dir.join(f))
            .find(|p| p.is_file())
    };
    match (find(MNIST_IMAGES), find(MNIST_LABELS)) {
        (Some(i), Some(l)) => Ok((i, l)),
        _ => Err(Error::io(
            dir.join(format!("{MNIST_IMAGES}.gz")),
            std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!(
                    "expected {MNIST_IMAGES}[.gz] and {MNIST_LABELS}[.gz] in {}; \
                     download the standard MNIST training pair (or any IDX files in that format) \
                     into a directory and pass it with --data-dir or CK_DATA_DIR",
                    dir.display()
                ),
            ),
        )),
    }
}

pub fn load_mnist_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
    let (i, l) = mnist_paths(dir)?;
    load_mnist_idx(i, l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_layout() {
        let ds = generate_toy_1d(1, 3).unwrap();
        let x = ds.inputs().data();
        assert_eq!(ds.labels(), &[0, 1, 1, 0]);
        assert!(x[0] < -1.0 && x[3] >= 1.0);
        assert!(x[1..3].iter().all(|v| (-1.0..1.0).contains(v)));
        assert!(generate_toy_1d(0, 3).is_err());
    }

    #[test]
    fn threshold_sweep() {
        assert_eq!(best_threshold_accuracy(&[0.0, 1.0, 2.0, 3.0], &[0, 0, 1, 1]), 1.0);
        assert_eq!(best_threshold_accuracy(&[0.0, 1.0, 2.0, 3.0], &[1, 1, 0, 0]), 1.0);
        assert_eq!(best_threshold_accuracy(&[0.0, 1.0, 2.0, 3.0], &[0, 1, 1, 0]), 0.75);
        // tied values cannot be separated
        assert_eq!(best_threshold_accuracy(&[1.0, 1.0], &[0, 1]), 0.5);
    }

    #[test]
    fn split_sizes_and_errors() {
        let ds = Dataset::new(Tensor::new([10, 1], (0..10).map(f64::from).collect()).unwrap(), vec![0; 10], 1).unwrap();
        let (a, b) = split(&ds, 0.5, 1).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        assert!(split(&ds, 0.0, 1).is_err());
        assert!(split(&ds, 0.01, 1).is_err());
    }

    #[test]
    fn dataset_rejects_bad_labels() {
        assert!(Dataset::new(Tensor::zeros([2, 1]), vec![0, 2], 2).is_err());
        assert!(Dataset::new(Tensor::zeros([2, 1]), vec![0], 2).is_err());
    }
}
