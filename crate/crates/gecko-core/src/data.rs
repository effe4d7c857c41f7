//! Dataset ingestion and synthesis.
//!
//! Three sources: IDX image files (optionally gzip-wrapped), CSV files of
//! `label,f1,...,fd` rows, and seeded synthetic Gaussian blobs. Loaders are
//! deterministic; datasets are immutable once built.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::FloatTensor2D;

/// IDX magic for unsigned-byte image tensors (3 dimensions).
const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
/// IDX magic for unsigned-byte label vectors (1 dimension).
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Feature matrix plus integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<T: Scalar> {
    features: FloatTensor2D<T>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(features: FloatTensor2D<T>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::shape(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::domain(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledDataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &FloatTensor2D<T> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Materialize the subset selected by `indices`, in order.
    pub fn gather(&self, indices: &[usize]) -> Result<LabeledDataset<T>> {
        let features = self.features.gather_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        LabeledDataset::new(features, labels, self.num_classes)
    }

    /// First `n` records (deterministic subsetting for desk-scale runs).
    pub fn take(&self, n: usize) -> Result<LabeledDataset<T>> {
        let indices: Vec<usize> = (0..n.min(self.len())).collect();
        self.gather(&indices)
    }
}

/// Disjoint train/test index sets produced by a seeded shuffle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

impl SplitSpec {
    /// Check disjointness and range against a dataset of `n` records.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train_indices.iter().chain(self.test_indices.iter()) {
            if i >= n {
                return Err(Error::domain(format!("split index {i} out of range {n}")));
            }
            if seen[i] {
                return Err(Error::domain(format!("splits overlap at index {i}")));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

fn read_be_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("truncated IDX header".to_string()))?;
    Ok(u32::from_be_bytes(buf))
}

/// Open a file, transparently unwrapping gzip when the 0x1f 0x8b magic is present.
fn open_maybe_gzip(path: &Path) -> Result<Box<dyn Read>> {
    let mut file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic)?;
    let header = &magic[..n];
    let is_gzip = header == [0x1f, 0x8b];
    // Reopen rather than seek so the gzip reader sees the stream from byte 0.
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    if is_gzip {
        Ok(Box::new(GzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

/// Load an IDX image/label file pair (FashionMNIST layout).
///
/// Pixels are scaled by 1/255 into `[0, 1]`.
pub fn load_idx<T: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset<T>> {
    let mut img = open_maybe_gzip(images_path.as_ref())?;
    let magic = read_be_u32(&mut img)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(format!(
            "bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )));
    }
    let count = read_be_u32(&mut img)? as usize;
    let rows = read_be_u32(&mut img)? as usize;
    let cols = read_be_u32(&mut img)? as usize;
    let mut pixels = vec![0u8; count * rows * cols];
    img.read_exact(&mut pixels)
        .map_err(|_| Error::format("truncated IDX image payload".to_string()))?;

    let mut lab = open_maybe_gzip(labels_path.as_ref())?;
    let magic = read_be_u32(&mut lab)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(format!(
            "bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )));
    }
    let label_count = read_be_u32(&mut lab)? as usize;
    if label_count != count {
        return Err(Error::format(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let mut raw_labels = vec![0u8; label_count];
    lab.read_exact(&mut raw_labels)
        .map_err(|_| Error::format("truncated IDX label payload".to_string()))?;

    let scale = T::from_f64_c(1.0 / 255.0);
    let data: Vec<T> = pixels
        .iter()
        .map(|&p| T::from_f64_c(f64::from(p)) * scale)
        .collect();
    let features = FloatTensor2D::from_vec(count, rows * cols, data)?;
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().max().map_or(1, |&m| m + 1);
    LabeledDataset::new(features, labels, num_classes)
}

/// Load a CSV dataset of `label,f1,...,fd` rows (PURCHASE/LOCATION shape).
///
/// The feature dimension is inferred from the first row and enforced on the
/// rest. Values are passed through unscaled but must be finite.
pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, num_classes: usize) -> Result<LabeledDataset<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(BufReader::new(file));

    let mut labels = Vec::new();
    let mut rows: Vec<Vec<T>> = Vec::new();
    let mut dim: Option<usize> = None;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(format!("row {}: {e}", line + 1)))?;
        if record.is_empty() {
            continue;
        }
        let mut cells = record.iter();
        let label_cell = cells.next().unwrap_or("");
        let label: usize = label_cell
            .trim()
            .parse()
            .map_err(|_| Error::format(format!("row {}: bad label {label_cell:?}", line + 1)))?;
        if label >= num_classes {
            return Err(Error::domain(format!(
                "row {}: label {label} out of range for {num_classes} classes",
                line + 1
            )));
        }
        let mut features = Vec::new();
        for cell in cells {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::format(format!("row {}: non-numeric cell {cell:?}", line + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::domain(format!("row {}: non-finite value", line + 1)));
            }
            features.push(T::from_f64_c(v));
        }
        match dim {
            None => dim = Some(features.len()),
            Some(d) if d != features.len() => {
                return Err(Error::format(format!(
                    "row {}: {} features, expected {d}",
                    line + 1,
                    features.len()
                )));
            }
            _ => {}
        }
        labels.push(label);
        rows.push(features);
    }
    if rows.is_empty() {
        return Err(Error::format(format!("{}: empty dataset", path.display())));
    }
    let features = FloatTensor2D::from_rows(&rows)?;
    LabeledDataset::new(features, labels, num_classes)
}

/// Synthesize `c` Gaussian clusters with seeded centers, balanced classes,
/// and features min-max scaled into `[0, 1]`.
pub fn synth_blobs<T: Scalar>(
    n: usize,
    d: usize,
    c: usize,
    spread: f64,
    seed: u64,
) -> Result<LabeledDataset<T>> {
    if c == 0 || n < c || d == 0 {
        return Err(Error::domain(format!(
            "blob sizes invalid: n={n}, d={d}, classes={c}"
        )));
    }
    if !(spread >= 0.0) {
        return Err(Error::domain(format!("spread {spread} must be >= 0")));
    }
    let mut rng = SeededRng::new(seed);
    let centers: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..d).map(|_| rng.normal()).collect())
        .collect();

    let mut raw = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % c; // balanced within 1 by construction
        labels.push(class);
        for j in 0..d {
            raw.push(centers[class][j] + spread * rng.normal());
        }
    }

    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data: Vec<T> = if span > 0.0 {
        raw.iter().map(|&v| T::from_f64_c((v - lo) / span)).collect()
    } else {
        vec![T::from_f64_c(0.5); raw.len()]
    };
    let features = FloatTensor2D::from_vec(n, d, data)?;
    LabeledDataset::new(features, labels, c)
}

/// Seeded shuffle-then-cut split of `0..n`.
pub fn make_splits(n: usize, train_fraction: f64, seed: u64) -> Result<SplitSpec> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::domain(format!(
            "train_fraction {train_fraction} must be in (0, 1)"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = SeededRng::new(seed);
    rng.shuffle(&mut indices);
    let cut = (n as f64 * train_fraction).floor() as usize;
    if cut == 0 || cut == n {
        return Err(Error::domain(format!(
            "fraction {train_fraction} leaves an empty split for n={n}"
        )));
    }
    let test_indices = indices.split_off(cut);
    Ok(SplitSpec {
        train_indices: indices,
        test_indices,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_idx_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        // Two 2x2 images with known bytes plus two labels.
        let images = dir.join("imgs.idx");
        let labels = dir.join("labels.idx");
        let mut buf = Vec::new();
        buf.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
        buf.extend_from_slice(&2u32.to_be_bytes());
        buf.extend_from_slice(&2u32.to_be_bytes());
        buf.extend_from_slice(&2u32.to_be_bytes());
        buf.extend_from_slice(&[0, 51, 102, 255, 255, 204, 153, 0]);
        std::fs::write(&images, &buf).unwrap();

        let mut buf = Vec::new();
        buf.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        buf.extend_from_slice(&2u32.to_be_bytes());
        buf.extend_from_slice(&[1, 0]);
        std::fs::write(&labels, &buf).unwrap();
        (images, labels)
    }

    #[test]
    fn idx_fixture_loads_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_idx_fixture(dir.path());
        let ds: LabeledDataset<f64> = load_idx(&images, &labels).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.feature_dim(), 4);
        assert_eq!(ds.labels(), &[1, 0]);
        let expected = [0.0, 51.0 / 255.0, 102.0 / 255.0, 1.0];
        for (got, want) in ds.features().row(0).iter().zip(expected.iter()) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!(ds.features().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn idx_gzip_wrapped_loads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_idx_fixture(dir.path());
        let plain: LabeledDataset<f64> = load_idx(&images, &labels).unwrap();

        let gz_images = dir.path().join("imgs.idx.gz");
        let mut enc =
            flate2::write::GzEncoder::new(File::create(&gz_images).unwrap(), Default::default());
        enc.write_all(&std::fs::read(&images).unwrap()).unwrap();
        enc.finish().unwrap();
        let gz: LabeledDataset<f64> = load_idx(&gz_images, &labels).unwrap();
        assert_eq!(gz, plain);
    }

    #[test]
    fn idx_bad_magic_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.idx");
        std::fs::write(&bad, 0xdead_beefu32.to_be_bytes()).unwrap();
        let (_, labels) = write_idx_fixture(dir.path());
        let err = load_idx::<f64>(&bad, &labels).unwrap_err();
        assert!(err.to_string().contains("0xdeadbeef"), "{err}");
    }

    #[test]
    fn idx_count_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (images, _) = write_idx_fixture(dir.path());
        let labels = dir.path().join("short.idx");
        let mut buf = Vec::new();
        buf.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        buf.extend_from_slice(&1u32.to_be_bytes());
        buf.push(0);
        std::fs::write(&labels, &buf).unwrap();
        let err = load_idx::<f64>(&images, &labels).unwrap_err();
        assert!(err.to_string().contains("labels"), "{err}");
    }

    #[test]
    fn idx_truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = write_idx_fixture(dir.path());
        let bytes = std::fs::read(&images).unwrap();
        let cut = dir.path().join("cut.idx");
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load_idx::<f64>(&cut, &labels).is_err());
    }

    #[test]
    fn csv_fixture_loads_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, "0,1,0,1\n2,0.5,0.25,0\n1,0,0,1\n").unwrap();
        let ds: LabeledDataset<f64> = load_csv(&path, 3).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.labels(), &[0, 2, 1]);
        assert_eq!(ds.features().row(1), &[0.5, 0.25, 0.0]);
    }

    #[test]
    fn csv_empty_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        assert!(load_csv::<f64>(&path, 3).is_err());
    }

    #[test]
    fn csv_label_out_of_range_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "0,1,2\n9,3,4\n").unwrap();
        let err = load_csv::<f64>(&path, 3).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn csv_ragged_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ragged.csv");
        std::fs::write(&path, "0,1,2\n1,3\n").unwrap();
        assert!(load_csv::<f64>(&path, 3).is_err());
    }

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let a: LabeledDataset<f64> = synth_blobs(103, 4, 5, 1.0, 9).unwrap();
        let b: LabeledDataset<f64> = synth_blobs(103, 4, 5, 1.0, 9).unwrap();
        assert_eq!(a, b);
        let mut counts = vec![0usize; 5];
        for &l in a.labels() {
            counts[l] += 1;
        }
        let (min, max) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(max - min <= 1, "{counts:?}");
        assert!(a.features().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn zero_spread_blobs_are_separable_by_nearest_center() {
        let ds: LabeledDataset<f64> = synth_blobs(60, 3, 4, 0.0, 21).unwrap();
        // Collect one prototype per class, then 1-NN classify every point.
        let mut protos: Vec<Option<Vec<f64>>> = vec![None; 4];
        for i in 0..ds.len() {
            let c = ds.labels()[i];
            if protos[c].is_none() {
                protos[c] = Some(ds.features().row(i).to_vec());
            }
        }
        for i in 0..ds.len() {
            let row = ds.features().row(i);
            let best = protos
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da: f64 = a
                        .as_ref()
                        .unwrap()
                        .iter()
                        .zip(row.iter())
                        .map(|(x, y)| (x - y).powi(2))
                        .sum();
                    let db: f64 = b
                        .as_ref()
                        .unwrap()
                        .iter()
                        .zip(row.iter())
                        .map(|(x, y)| (x - y).powi(2))
                        .sum();
                    da.partial_cmp(&db).unwrap()
                })
                .map(|(c, _)| c)
                .unwrap();
            assert_eq!(best, ds.labels()[i]);
        }
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        let split = make_splits(100, 0.5, 3).unwrap();
        assert_eq!(split.train_indices.len(), 50);
        assert_eq!(split.test_indices.len(), 50);
        split.validate(100).unwrap();
        let mut all: Vec<usize> = split
            .train_indices
            .iter()
            .chain(split.test_indices.iter())
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn splits_same_seed_identical() {
        assert_eq!(make_splits(77, 0.3, 5).unwrap(), make_splits(77, 0.3, 5).unwrap());
    }

    #[test]
    fn degenerate_fraction_rejected() {
        assert!(make_splits(10, 0.0, 1).is_err());
        assert!(make_splits(10, 1.0, 1).is_err());
        assert!(make_splits(3, 0.01, 1).is_err());
    }

    #[test]
    fn split_validate_catches_overlap() {
        let split = SplitSpec {
            train_indices: vec![0, 1],
            test_indices: vec![1, 2],
            seed: 0,
        };
        assert!(split.validate(3).is_err());
    }
}
