//! The "GECKO1" model container and its JSON sidecar.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      6 bytes  "GECKO1"
//! kind       u8       0 = full precision, 1 = binarized
//! word_bits  u8       bits per packed word (64)
//! layers     u32      number of weight layers
//! per layer:
//!   kind     u8       0 = dense, 1 = bit
//!   in_dim   u32
//!   out_dim  u32
//!   dense    in*out f32 weights (row-major), out f32 bias
//!   bit      in * ceil(out/word_bits) u64 packed words (row-major)
//! ```
//!
//! Round trips are bit-exact: loading a file and saving it again produces
//! identical bytes. Values are stored as 32-bit floats regardless of the
//! in-memory scalar type.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bits::{BitMatrix, WORD_BITS};
use crate::error::{Error, Result};
use crate::nn::{DenseLayer, MlpModel};
use crate::quantize::{BinarizedModel, BitLayer};
use crate::scalar::Scalar;
use crate::tensor::FloatTensor2D;

const MAGIC: &[u8; 6] = b"GECKO1";

const KIND_FULL: u8 = 0;
const KIND_BINARIZED: u8 = 1;
const LAYER_DENSE: u8 = 0;
const LAYER_BIT: u8 = 1;

/// A loaded model of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile<T: Scalar> {
    Full(MlpModel<T>),
    Binarized(BinarizedModel<T>),
}

impl<T: Scalar> ModelFile<T> {
    pub fn dims(&self) -> Vec<usize> {
        match self {
            ModelFile::Full(m) => m.dims(),
            ModelFile::Binarized(m) => m.dims(),
        }
    }
}

/// Provenance metadata written next to a model file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSidecar {
    pub architecture: Vec<usize>,
    pub seed: u64,
    pub epochs: usize,
}

/// Write bytes atomically: temp file in the same directory, then rename,
/// so concurrent runs never observe a partial file.
pub fn atomic_write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static COUNTER: AtomicU64 = AtomicU64::new(0);

    let path = path.as_ref();
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".gecko-tmp-{}-{}",
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    let mut file = fs::OpenOptions::new().write(true).create_new(true).open(&tmp)?;
    file.write_all(bytes)?;
    file.flush()?;
    drop(file);
    fs::rename(&tmp, path)?;
    Ok(())
}

fn push_dense<T: Scalar>(buf: &mut Vec<u8>, layer: &DenseLayer<T>) {
    buf.push(LAYER_DENSE);
    buf.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
    for &w in layer.weights().data() {
        buf.extend_from_slice(&(w.to_f32().expect("scalar to f32")).to_le_bytes());
    }
    for &b in layer.bias().data() {
        buf.extend_from_slice(&(b.to_f32().expect("scalar to f32")).to_le_bytes());
    }
}

fn push_bits(buf: &mut Vec<u8>, layer: &BitLayer) {
    buf.push(LAYER_BIT);
    buf.extend_from_slice(&(layer.n_in() as u32).to_le_bytes());
    buf.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
    for &word in layer.weights().words() {
        buf.extend_from_slice(&word.to_le_bytes());
    }
}

/// Serialize a full-precision model to container bytes.
pub fn mlp_to_bytes<T: Scalar>(model: &MlpModel<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(KIND_FULL);
    buf.push(WORD_BITS as u8);
    buf.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    for layer in model.layers() {
        push_dense(&mut buf, layer);
    }
    buf
}

/// Serialize a binarized model (packed hidden layers, shadows dropped).
pub fn binarized_to_bytes<T: Scalar>(model: &BinarizedModel<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.push(KIND_BINARIZED);
    buf.push(WORD_BITS as u8);
    buf.extend_from_slice(&((model.hidden_layers().len() + 2) as u32).to_le_bytes());
    push_dense(&mut buf, model.first_layer());
    for layer in model.hidden_layers() {
        push_bits(&mut buf, layer);
    }
    push_dense(&mut buf, model.last_layer());
    buf
}

pub fn save_mlp<T: Scalar>(path: impl AsRef<Path>, model: &MlpModel<T>) -> Result<()> {
    atomic_write(path, &mlp_to_bytes(model))
}

pub fn save_binarized<T: Scalar>(path: impl AsRef<Path>, model: &BinarizedModel<T>) -> Result<()> {
    atomic_write(path, &binarized_to_bytes(model))
}

pub fn save_model<T: Scalar>(path: impl AsRef<Path>, model: &ModelFile<T>) -> Result<()> {
    match model {
        ModelFile::Full(m) => save_mlp(path, m),
        ModelFile::Binarized(m) => save_binarized(path, m),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(format!(
                "truncated container: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_dense<T: Scalar>(cur: &mut Cursor) -> Result<DenseLayer<T>> {
    let in_dim = cur.u32()? as usize;
    let out_dim = cur.u32()? as usize;
    let mut weights = Vec::with_capacity(in_dim * out_dim);
    for _ in 0..in_dim * out_dim {
        weights.push(T::from_f64_c(f64::from(cur.f32()?)));
    }
    let mut bias = Vec::with_capacity(out_dim);
    for _ in 0..out_dim {
        bias.push(T::from_f64_c(f64::from(cur.f32()?)));
    }
    DenseLayer::new(
        FloatTensor2D::from_vec(in_dim, out_dim, weights)?,
        FloatTensor2D::from_vec(1, out_dim, bias)?,
    )
}

fn read_bits(cur: &mut Cursor) -> Result<BitLayer> {
    let in_dim = cur.u32()? as usize;
    let out_dim = cur.u32()? as usize;
    let n_words = in_dim * out_dim.div_ceil(WORD_BITS);
    let mut words = Vec::with_capacity(n_words);
    for _ in 0..n_words {
        words.push(cur.u64()?);
    }
    Ok(BitLayer::new(BitMatrix::from_words(in_dim, out_dim, words)?))
}

/// Parse container bytes into a model.
pub fn model_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ModelFile<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(Error::format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(magic),
            String::from_utf8_lossy(MAGIC)
        )));
    }
    let kind = cur.u8()?;
    let word_bits = cur.u8()? as usize;
    if word_bits != WORD_BITS {
        return Err(Error::format(format!(
            "container uses {word_bits}-bit words, this build uses {WORD_BITS}"
        )));
    }
    let layer_count = cur.u32()? as usize;
    match kind {
        KIND_FULL => {
            let mut layers = Vec::with_capacity(layer_count);
            for _ in 0..layer_count {
                let lk = cur.u8()?;
                if lk != LAYER_DENSE {
                    return Err(Error::format("full-precision container holds a bit layer".to_string()));
                }
                layers.push(read_dense::<T>(&mut cur)?);
            }
            finish(&cur)?;
            Ok(ModelFile::Full(MlpModel::from_layers(layers)?))
        }
        KIND_BINARIZED => {
            if layer_count < 3 {
                return Err(Error::format(format!(
                    "binarized container with {layer_count} layers"
                )));
            }
            let first = expect_dense::<T>(&mut cur)?;
            let mut hidden = Vec::with_capacity(layer_count - 2);
            for _ in 0..layer_count - 2 {
                let lk = cur.u8()?;
                if lk != LAYER_BIT {
                    return Err(Error::format("expected a bit layer".to_string()));
                }
                hidden.push(read_bits(&mut cur)?);
            }
            let last = expect_dense::<T>(&mut cur)?;
            finish(&cur)?;
            Ok(ModelFile::Binarized(BinarizedModel::from_parts(
                first, hidden, last,
            )?))
        }
        other => Err(Error::format(format!("unknown model kind {other}"))),
    }
}

fn expect_dense<T: Scalar>(cur: &mut Cursor) -> Result<DenseLayer<T>> {
    let lk = cur.u8()?;
    if lk != LAYER_DENSE {
        return Err(Error::format("expected a dense layer".to_string()));
    }
    read_dense(cur)
}

fn finish(cur: &Cursor) -> Result<()> {
    if cur.pos != cur.bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after model payload",
            cur.bytes.len() - cur.pos
        )));
    }
    Ok(())
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelFile<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    model_from_bytes(&bytes)
}

/// Write the JSON sidecar next to a model file (`<model>.json`).
pub fn save_sidecar(model_path: impl AsRef<Path>, sidecar: &ModelSidecar) -> Result<()> {
    let path = sidecar_path(model_path.as_ref());
    let json = serde_json::to_vec_pretty(sidecar).map_err(|e| Error::format(e.to_string()))?;
    atomic_write(path, &json)
}

pub fn load_sidecar(model_path: impl AsRef<Path>) -> Result<ModelSidecar> {
    let path = sidecar_path(model_path.as_ref());
    let bytes = fs::read(&path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

fn sidecar_path(model_path: &Path) -> std::path::PathBuf {
    let mut os = model_path.as_os_str().to_os_string();
    os.push(".json");
    std::path::PathBuf::from(os)
}
