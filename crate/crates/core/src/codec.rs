//! Bit-packed binary codes and popcount Hamming distance.
//!
//! Code bit `b` of item `i` lives in word `b / 64`, bit `b % 64` of that
//! item's row. A set bit means `+1`, a clear bit `-1`. Bits past `r` in the
//! last word are always zero, so XOR + popcount needs no masking.

use std::io::{Read, Write};

use rayon::prelude::*;

use crate::binio::{version_check, LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::trainer::HashModel;

const MAGIC: &[u8; 4] = b"BCMX";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryCodeMatrix {
    n: usize,
    bits: usize,
    words_per_code: usize,
    words: Vec<u64>,
}

impl BinaryCodeMatrix {
    fn empty(n: usize, bits: usize) -> Result<Self> {
        if bits == 0 {
            return Err(Error::Config("code length must be at least 1".into()));
        }
        let words_per_code = bits.div_ceil(64);
        Ok(Self {
            n,
            bits,
            words_per_code,
            words: vec![0; n * words_per_code],
        })
    }

    /// Packs a row-major `n × bits` matrix of real scores; `score >= 0` maps
    /// to `+1`.
    pub fn from_scores(scores: &[f64], bits: usize) -> Result<Self> {
        Self::pack_with(scores, bits, |v: &f64| *v >= 0.0)
    }

    /// Packs a row-major `n × bits` matrix of `±1` entries.
    pub fn from_signs(signs: &[i8], bits: usize) -> Result<Self> {
        if let Some(&bad) = signs.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::Malformed(format!("code entry {bad} is not ±1")));
        }
        Self::pack_with(signs, bits, |v: &i8| *v > 0)
    }

    fn pack_with<T: Sync>(
        values: &[T],
        bits: usize,
        positive: impl Fn(&T) -> bool + Sync,
    ) -> Result<Self> {
        if bits == 0 || !values.len().is_multiple_of(bits) {
            return Err(Error::LengthMismatch {
                expected: bits,
                got: values.len() % bits.max(1),
            });
        }
        let n = values.len() / bits;
        let mut out = Self::empty(n, bits)?;
        let wpc = out.words_per_code;
        out.words
            .par_chunks_mut(wpc)
            .zip(values.par_chunks(bits))
            .for_each(|(row, vals)| {
                for (b, v) in vals.iter().enumerate() {
                    if positive(v) {
                        row[b / 64] |= 1u64 << (b % 64);
                    }
                }
            });
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn words_per_code(&self) -> usize {
        self.words_per_code
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn code(&self, i: usize) -> &[u64] {
        &self.words[i * self.words_per_code..(i + 1) * self.words_per_code]
    }

    /// Row-major `±1` matrix.
    pub fn unpack(&self) -> Vec<i8> {
        let mut out = Vec::with_capacity(self.n * self.bits);
        for i in 0..self.n {
            let row = self.code(i);
            out.extend((0..self.bits).map(|b| {
                if row[b / 64] >> (b % 64) & 1 == 1 {
                    1i8
                } else {
                    -1
                }
            }));
        }
        out
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::IndexOutOfBounds {
                index: i,
                len: self.n,
            });
        }
        Ok(())
    }

    pub fn hamming(&self, i: usize, j: usize) -> Result<u32> {
        self.check(i)?;
        self.check(j)?;
        Ok(hamming_words(self.code(i), self.code(j)))
    }

    /// Distances from one packed code to every row of `self`.
    pub fn distances_from(&self, query: &[u64]) -> Vec<u32> {
        debug_assert_eq!(query.len(), self.words_per_code);
        match self.words_per_code {
            1 => {
                let q = query[0];
                self.words.iter().map(|w| (w ^ q).count_ones()).collect()
            }
            _ => self
                .words
                .chunks_exact(self.words_per_code)
                .map(|c| hamming_words(c, query))
                .collect(),
        }
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let mut out = Self::empty(rows.len(), self.bits)?;
        for (k, &i) in rows.iter().enumerate() {
            self.check(i)?;
            out.words[k * self.words_per_code..(k + 1) * self.words_per_code]
                .copy_from_slice(self.code(i));
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<W> {
        let mut w = LeWriter::new(w);
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.u64(self.n as u64)?;
        w.u32(self.bits as u32)?;
        let mut buf = Vec::with_capacity(self.words.len() * 8);
        for word in &self.words {
            buf.extend_from_slice(&word.to_le_bytes());
        }
        w.bytes(&buf)?;
        Ok(w.into_inner())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = LeReader::new(r, "code file");
        r.magic(MAGIC)?;
        version_check("code file", r.u32()?, VERSION)?;
        let n = r.u64()? as usize;
        let bits = r.u32()? as usize;
        let mut out = Self::empty(n, bits)?;
        let mut buf = vec![0u8; out.words.len() * 8];
        r.fill(&mut buf)?;
        for (w, c) in out.words.iter_mut().zip(buf.chunks_exact(8)) {
            *w = u64::from_le_bytes(c.try_into().unwrap());
        }
        let tail = bits % 64;
        if tail != 0 {
            let mask = !((1u64 << tail) - 1);
            if out
                .words
                .chunks_exact(out.words_per_code)
                .any(|row| row[row.len() - 1] & mask != 0)
            {
                return Err(Error::Malformed("nonzero padding bits in code file".into()));
            }
        }
        r.at_eof()?;
        Ok(out)
    }
}

pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// `sign(W_finalᵀ z)` for each row of the row-major raw feature matrix `x`.
pub fn encode(model: &HashModel, x: &[f64]) -> Result<BinaryCodeMatrix> {
    let z = model.feature_map().map_rows(x)?;
    encode_features(model, &z)
}

/// As [`encode`], for rows already passed through the model's feature map.
pub fn encode_features(model: &HashModel, z: &[f64]) -> Result<BinaryCodeMatrix> {
    let w = model.final_weights().ok_or(Error::ModelNotFinalized)?;
    let scores = crate::trainer::project_rows(w, model.feature_dim(), model.bits(), z)?;
    BinaryCodeMatrix::from_scores(&scores, model.bits())
}
