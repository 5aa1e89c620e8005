//! Length alignment of `r*`-bit target codes to `r` hash bits.
//!
//! When `r < r*` the codes are shortened by a fixed Gaussian sign projection
//! `sign(W̃ᵀ c)` with `W̃ ∈ R^{r*×r}`; when `r = r*` the projection is the
//! identity. `W̃` is never stored: it is regenerated from its seed with the
//! Box-Muller sampler in [`crate::rng`].

use std::io::{Read, Write};

use crate::binio::{LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::hadamard::TargetCode;
use crate::rng::{GaussianSampler, GAUSSIAN_METHOD_BOX_MULLER};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMode {
    Identity,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    mode: ProjectionMode,
    order: usize,
    bits: usize,
    seed: u64,
    /// Row-major `order × bits`; empty in identity mode.
    matrix: Vec<f64>,
}

impl Projector {
    pub fn new(order: usize, bits: usize, seed: u64) -> Result<Self> {
        if bits > order {
            return Err(Error::BitLengthExceedsOrder { bits, order });
        }
        if bits == 0 {
            return Err(Error::Config("hash length must be at least 1".into()));
        }
        if bits == order {
            return Ok(Self {
                mode: ProjectionMode::Identity,
                order,
                bits,
                seed,
                matrix: Vec::new(),
            });
        }
        let mut g = GaussianSampler::new(seed);
        let matrix = (0..order * bits).map(|_| g.sample()).collect();
        Ok(Self {
            mode: ProjectionMode::Gaussian,
            order,
            bits,
            seed,
            matrix,
        })
    }

    pub fn mode(&self) -> ProjectionMode {
        self.mode
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// `sign(W̃ᵀ c)` with `sign(0) = +1`.
    pub fn project(&self, code: &TargetCode) -> Result<TargetCode> {
        if code.len() != self.order {
            return Err(Error::LengthMismatch {
                expected: self.order,
                got: code.len(),
            });
        }
        if self.mode == ProjectionMode::Identity {
            return Ok(code.clone());
        }
        let mut acc = vec![0.0f64; self.bits];
        for (row, &c) in self.matrix.chunks_exact(self.bits).zip(code.bits()) {
            let c = c as f64;
            for (a, w) in acc.iter_mut().zip(row) {
                *a += w * c;
            }
        }
        TargetCode::new(acc.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect())
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<W> {
        let mut w = LeWriter::new(w);
        w.u8(match self.mode {
            ProjectionMode::Identity => 0,
            ProjectionMode::Gaussian => 1,
        })?;
        w.u8(GAUSSIAN_METHOD_BOX_MULLER)?;
        w.u32(self.order as u32)?;
        w.u32(self.bits as u32)?;
        w.u64(self.seed)?;
        Ok(w.into_inner())
    }

    pub fn read_from<R: Read>(r: R) -> Result<(Self, R)> {
        let mut r = LeReader::new(r, "projector");
        let mode = r.u8()?;
        let method = r.u8()?;
        if method != GAUSSIAN_METHOD_BOX_MULLER {
            return Err(Error::Malformed(format!(
                "unknown normal-sampling method {method}"
            )));
        }
        let order = r.u32()? as usize;
        let bits = r.u32()? as usize;
        let seed = r.u64()?;
        let p = Self::new(order, bits, seed)?;
        let expected = match p.mode {
            ProjectionMode::Identity => 0,
            ProjectionMode::Gaussian => 1,
        };
        if mode != expected {
            return Err(Error::Malformed(format!(
                "projector mode byte {mode} inconsistent with dims {order}×{bits}"
            )));
        }
        Ok((p, r.into_inner()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hadamard::HadamardCodebook;

    #[test]
    fn equal_lengths_give_identity() {
        let p = Projector::new(32, 32, 1).unwrap();
        assert_eq!(p.mode(), ProjectionMode::Identity);
        let book = HadamardCodebook::sylvester(32, 0).unwrap();
        let c = book.column(5);
        assert_eq!(p.project(&c).unwrap(), c);
    }

    #[test]
    fn shorter_hash_gives_gaussian_matrix() {
        let p = Projector::new(256, 64, 9).unwrap();
        assert_eq!(p.mode(), ProjectionMode::Gaussian);
        assert_eq!(p.matrix().len(), 256 * 64);
    }

    #[test]
    fn longer_hash_is_rejected() {
        assert!(matches!(
            Projector::new(32, 64, 0),
            Err(Error::BitLengthExceedsOrder {
                bits: 64,
                order: 32
            })
        ));
    }

    #[test]
    fn projection_is_deterministic_and_sized() {
        let p = Projector::new(64, 16, 77).unwrap();
        let book = HadamardCodebook::sylvester(64, 0).unwrap();
        let c = book.column(10);
        let a = p.project(&c).unwrap();
        assert_eq!(a, p.project(&c).unwrap());
        assert_eq!(a.len(), 16);
        assert!(a.bits().iter().all(|&b| b == 1 || b == -1));
    }

    #[test]
    fn wrong_code_length_is_rejected() {
        let p = Projector::new(64, 16, 77).unwrap();
        let c = TargetCode::new(vec![1; 32]).unwrap();
        assert!(matches!(
            p.project(&c),
            Err(Error::LengthMismatch {
                expected: 64,
                got: 32
            })
        ));
    }

    #[test]
    fn sign_of_zero_is_plus_one() {
        // A zero column of W̃ would score exactly zero: force it by building
        // the projector by hand.
        let p = Projector {
            mode: ProjectionMode::Gaussian,
            order: 2,
            bits: 1,
            seed: 0,
            matrix: vec![1.0, 1.0],
        };
        let c = TargetCode::new(vec![1, -1]).unwrap();
        assert_eq!(p.project(&c).unwrap().bits(), &[1]);
    }

    #[test]
    fn persisted_projector_regenerates_bit_identically() {
        let p = Projector::new(128, 48, 0xDEAD_BEEF).unwrap();
        let bytes = p.write_to(Vec::new()).unwrap();
        let (q, _) = Projector::read_from(&bytes[..]).unwrap();
        assert_eq!(p.matrix().len(), q.matrix().len());
        assert!(p
            .matrix()
            .iter()
            .zip(q.matrix())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
