//! Sign-packed binary matrices and the XNOR-bitcount dot product.
//!
//! Encoding is fixed crate-wide: bit 1 means +1, bit 0 means -1. Each
//! logical row is packed into whole machine words; padding bits in the
//! final word of a row are always zero, so word-at-a-time kernels never
//! need per-bit branches.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::FloatTensor2D;

/// Logical bits per storage word.
pub const WORD_BITS: usize = 64;

/// Bit-packed matrix with logical dimensions `rows x cols`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    words: Vec<u64>,
}

impl BitMatrix {
    /// All-zero (all −1) matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(WORD_BITS);
        BitMatrix {
            rows,
            cols,
            words_per_row,
            words: vec![0; rows * words_per_row],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    /// Packed words backing logical row `r`.
    pub fn row_words(&self, r: usize) -> &[u64] {
        &self.words[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        let w = self.words[r * self.words_per_row + c / WORD_BITS];
        (w >> (c % WORD_BITS)) & 1 == 1
    }

    pub fn set(&mut self, r: usize, c: usize, bit: bool) {
        let idx = r * self.words_per_row + c / WORD_BITS;
        let mask = 1u64 << (c % WORD_BITS);
        if bit {
            self.words[idx] |= mask;
        } else {
            self.words[idx] &= !mask;
        }
    }

    /// Mask covering the valid bits of the final word in a row.
    pub fn tail_mask(&self) -> u64 {
        let rem = self.cols % WORD_BITS;
        if rem == 0 {
            u64::MAX
        } else {
            (1u64 << rem) - 1
        }
    }

    /// True iff every padding bit is zero.
    pub fn padding_clear(&self) -> bool {
        if self.words_per_row == 0 {
            return true;
        }
        let mask = self.tail_mask();
        (0..self.rows).all(|r| self.row_words(r)[self.words_per_row - 1] & !mask == 0)
    }

    /// Transposed copy (logical `cols x rows`).
    pub fn transpose(&self) -> BitMatrix {
        let mut out = BitMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if self.get(r, c) {
                    out.set(c, r, true);
                }
            }
        }
        out
    }

    /// Construct from raw packed words (e.g. deserialization). Rejects set padding bits.
    pub fn from_words(rows: usize, cols: usize, words: Vec<u64>) -> Result<Self> {
        let words_per_row = cols.div_ceil(WORD_BITS);
        if words.len() != rows * words_per_row {
            return Err(Error::shape(format!(
                "{} words cannot back a {rows}x{cols} bit matrix",
                words.len()
            )));
        }
        let m = BitMatrix {
            rows,
            cols,
            words_per_row,
            words,
        };
        if !m.padding_clear() {
            return Err(Error::format("padding bits are not zero".to_string()));
        }
        Ok(m)
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

/// Pack a ±1 matrix into bits (+1 -> 1, −1 -> 0).
///
/// Every entry must be exactly `+1.0` or `-1.0`.
pub fn pack_signs<T: Scalar>(m: &FloatTensor2D<T>) -> Result<BitMatrix> {
    let one = T::one();
    let minus_one = T::zero() - T::one();
    let mut out = BitMatrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        for (c, &v) in m.row(r).iter().enumerate() {
            if v == one {
                out.set(r, c, true);
            } else if v != minus_one {
                return Err(Error::domain(format!(
                    "entry {v:?} at ({r},{c}) is not +1 or -1"
                )));
            }
        }
    }
    Ok(out)
}

/// Unpack bits back to a ±1 matrix: the exact inverse of [`pack_signs`].
pub fn unpack_signs<T: Scalar>(b: &BitMatrix) -> FloatTensor2D<T> {
    let one = T::one();
    let minus_one = T::zero() - T::one();
    let mut out = FloatTensor2D::zeros(b.rows(), b.cols());
    for r in 0..b.rows() {
        for c in 0..b.cols() {
            out.set(r, c, if b.get(r, c) { one } else { minus_one });
        }
    }
    out
}

/// Dot product of two packed ±1 vectors of logical length `n`.
///
/// Computed as `n − 2·popcount(xor)`, which equals `2·popcount(xnor) − n`
/// over the logical bits and needs no tail masking because zero padding
/// cancels in the XOR. The result is exactly `Σ xᵢ·wᵢ` of the encoded
/// vectors: an integer in `[-n, n]` with the parity of `n`.
pub fn xnor_dot(x: &[u64], w: &[u64], n: usize) -> Result<i64> {
    if x.len() != w.len() || n.div_ceil(WORD_BITS) != x.len() {
        return Err(Error::shape(format!(
            "xnor_dot over {} vs {} words for n={n}",
            x.len(),
            w.len()
        )));
    }
    let disagree: u32 = x.iter().zip(w.iter()).map(|(a, b)| (a ^ b).count_ones()).sum();
    Ok(n as i64 - 2 * disagree as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use proptest::prelude::*;

    fn random_sign_matrix(rows: usize, cols: usize, rng: &mut SeededRng) -> FloatTensor2D<f64> {
        let mut m = FloatTensor2D::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m.set(r, c, if rng.next_u64() & 1 == 1 { 1.0 } else { -1.0 });
            }
        }
        m
    }

    #[test]
    fn pack_all_ones_row() {
        let m = FloatTensor2D::from_vec(1, 4, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let b = pack_signs(&m).unwrap();
        assert_eq!(b.row_words(0)[0], 0b1111);
    }

    #[test]
    fn pack_all_minus_row() {
        let m = FloatTensor2D::from_vec(1, 4, vec![-1.0, -1.0, -1.0, -1.0]).unwrap();
        let b = pack_signs(&m).unwrap();
        assert_eq!(b.row_words(0)[0], 0);
    }

    #[test]
    fn pack_rejects_non_sign_values() {
        let m = FloatTensor2D::from_vec(1, 2, vec![1.0, 0.5]).unwrap();
        assert!(pack_signs(&m).is_err());
    }

    #[test]
    fn unpack_decodes_bits() {
        let mut b = BitMatrix::zeros(1, 4);
        b.set(0, 0, true);
        b.set(0, 2, true);
        let m: FloatTensor2D<f64> = unpack_signs(&b);
        assert_eq!(m.data(), &[1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn all_zero_row_unpacks_to_minus_ones() {
        let b = BitMatrix::zeros(1, 5);
        let m: FloatTensor2D<f64> = unpack_signs(&b);
        assert!(m.data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn xnor_dot_identical_and_antipodal() {
        let m = FloatTensor2D::from_vec(1, 8, vec![1.0; 8]).unwrap();
        let b = pack_signs(&m).unwrap();
        assert_eq!(xnor_dot(b.row_words(0), b.row_words(0), 8).unwrap(), 8);

        let neg = pack_signs(&m.map(|v| -v)).unwrap();
        assert_eq!(xnor_dot(b.row_words(0), neg.row_words(0), 8).unwrap(), -8);
    }

    #[test]
    fn xnor_dot_orthogonal_case() {
        let x = pack_signs(&FloatTensor2D::from_vec(1, 4, vec![1.0, -1.0, 1.0, -1.0]).unwrap())
            .unwrap();
        let w = pack_signs(&FloatTensor2D::from_vec(1, 4, vec![1.0, 1.0, -1.0, -1.0]).unwrap())
            .unwrap();
        assert_eq!(xnor_dot(x.row_words(0), w.row_words(0), 4).unwrap(), 0);
    }

    #[test]
    fn xnor_dot_matches_float_dot_on_random_vectors() {
        let mut rng = SeededRng::new(99);
        for &n in &[3usize, 8, 31, 32, 33, 64, 100] {
            for _ in 0..50 {
                let x = random_sign_matrix(1, n, &mut rng);
                let w = random_sign_matrix(1, n, &mut rng);
                let expected: f64 = x
                    .row(0)
                    .iter()
                    .zip(w.row(0).iter())
                    .map(|(a, b)| a * b)
                    .sum();
                let xb = pack_signs(&x).unwrap();
                let wb = pack_signs(&w).unwrap();
                let got = xnor_dot(xb.row_words(0), wb.row_words(0), n).unwrap();
                assert_eq!(got as f64, expected);
            }
        }
    }

    #[test]
    fn from_words_rejects_dirty_padding() {
        // cols=4 leaves 60 padding bits in the word; set one of them.
        let words = vec![1u64 << 10];
        assert!(BitMatrix::from_words(1, 4, words).is_err());
    }

    proptest! {
        #[test]
        fn pack_unpack_round_trip(rows in 1usize..6, cols in 1usize..130, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let m = random_sign_matrix(rows, cols, &mut rng);
            let packed = pack_signs(&m).unwrap();
            prop_assert!(packed.padding_clear());
            let back: FloatTensor2D<f64> = unpack_signs(&packed);
            prop_assert_eq!(back, m);
        }

        #[test]
        fn unpack_pack_round_trip(rows in 1usize..6, cols in 1usize..130, seed in any::<u64>()) {
            let mut rng = SeededRng::new(seed);
            let mut b = BitMatrix::zeros(rows, cols);
            for r in 0..rows {
                for c in 0..cols {
                    b.set(r, c, rng.next_u64() & 1 == 1);
                }
            }
            let m: FloatTensor2D<f64> = unpack_signs(&b);
            let repacked = pack_signs(&m).unwrap();
            prop_assert_eq!(repacked, b);
        }
    }
}
