//! Sylvester Hadamard codebook and label → target-code assignment.
//!
//! Each class label owns one column of a `r* × r*` Hadamard matrix. Columns
//! are handed out at random without replacement the first time a label is
//! seen; multi-label items fuse their columns by per-bit majority vote and
//! then fill tied bits to balance the number of `+1` and `-1` entries.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng;

use crate::binio::{version_check, LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::rng::{seeded, StreamRng};

/// Largest order built unless the caller raises the cap.
pub const DEFAULT_ORDER_CAP: usize = 1 << 15;

const SIDECAR_MAGIC: &[u8; 4] = b"HADC";
const SIDECAR_VERSION: u32 = 1;

/// Row-major Sylvester Hadamard matrix of the given order.
///
/// Built by the doubling recursion `H_2k = [[H_k, H_k], [H_k, -H_k]]`
/// starting from `H_1 = [1]`.
pub fn sylvester_matrix(order: usize, cap: usize) -> Result<Vec<i8>> {
    if order < 2 || !order.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(order));
    }
    if order > cap {
        return Err(Error::OrderTooLarge { order, cap });
    }
    let mut h = vec![0i8; order * order];
    h[0] = 1;
    let mut size = 1;
    while size < order {
        for i in 0..size {
            for j in 0..size {
                let v = h[i * order + j];
                h[i * order + j + size] = v;
                h[(i + size) * order + j] = v;
                h[(i + size) * order + j + size] = -v;
            }
        }
        size *= 2;
    }
    Ok(h)
}

/// Smallest power of two (at least 2) covering both the hash length and the
/// number of labels.
pub fn target_order(bits: usize, max_labels: usize) -> usize {
    bits.max(max_labels).max(2).next_power_of_two()
}

/// A `±1` code of length `r*` (or `r` after projection).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TargetCode(Vec<i8>);

impl TargetCode {
    pub fn new(bits: Vec<i8>) -> Result<Self> {
        if let Some(&bad) = bits.iter().find(|&&b| b != 1 && b != -1) {
            return Err(Error::Malformed(format!(
                "target code entry {bad} is not ±1"
            )));
        }
        Ok(Self(bits))
    }

    pub fn bits(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn plus_count(&self) -> usize {
        self.0.iter().filter(|&&b| b > 0).count()
    }

    pub fn into_bits(self) -> Vec<i8> {
        self.0
    }
}

/// Hadamard matrix plus the label → column registry.
#[derive(Clone)]
pub struct HadamardCodebook {
    order: usize,
    matrix: Vec<i8>,
    assignment: HashMap<u32, usize>,
    assigned_in_order: Vec<(u32, usize)>,
    free_columns: Vec<usize>,
    seed: u64,
    rng: StreamRng,
}

impl std::fmt::Debug for HadamardCodebook {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HadamardCodebook")
            .field("order", &self.order)
            .field("assigned", &self.assigned_in_order.len())
            .field("seed", &self.seed)
            .finish()
    }
}

impl HadamardCodebook {
    pub fn sylvester(order: usize, seed: u64) -> Result<Self> {
        Self::sylvester_with_cap(order, seed, DEFAULT_ORDER_CAP)
    }

    pub fn sylvester_with_cap(order: usize, seed: u64, cap: usize) -> Result<Self> {
        let matrix = sylvester_matrix(order, cap)?;
        Ok(Self {
            order,
            matrix,
            assignment: HashMap::new(),
            assigned_in_order: Vec::new(),
            free_columns: (0..order).collect(),
            seed,
            rng: seeded(seed),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entry(&self, row: usize, col: usize) -> i8 {
        self.matrix[row * self.order + col]
    }

    pub fn matrix(&self) -> &[i8] {
        &self.matrix
    }

    pub fn column(&self, col: usize) -> TargetCode {
        TargetCode((0..self.order).map(|i| self.entry(i, col)).collect())
    }

    pub fn column_of(&self, label: u32) -> Option<usize> {
        self.assignment.get(&label).copied()
    }

    /// Assignments in the order they were made.
    pub fn assignments(&self) -> &[(u32, usize)] {
        &self.assigned_in_order
    }

    pub fn free_columns(&self) -> &[usize] {
        &self.free_columns
    }

    /// Column index for `label`, drawing a fresh random column on first sight.
    pub fn assign(&mut self, label: u32) -> Result<usize> {
        if let Some(&col) = self.assignment.get(&label) {
            return Ok(col);
        }
        if self.free_columns.is_empty() {
            return Err(Error::ColumnsExhausted {
                order: self.order,
                label,
            });
        }
        let pick = self.rng.random_range(0..self.free_columns.len());
        let col = self.free_columns.remove(pick);
        self.assignment.insert(label, col);
        self.assigned_in_order.push((label, col));
        Ok(col)
    }

    pub fn assign_column(&mut self, label: u32) -> Result<TargetCode> {
        let col = self.assign(label)?;
        Ok(self.column(col))
    }

    /// Target code for a label set: majority vote per bit, ties filled by
    /// [`balance_fill`].
    pub fn fuse_multilabel(&mut self, labels: &[u32]) -> Result<TargetCode> {
        let mut labels = labels.to_vec();
        labels.sort_unstable();
        labels.dedup();
        if labels.is_empty() {
            return Err(Error::EmptyLabelSet);
        }
        let mut sums = vec![0i32; self.order];
        for &label in &labels {
            let col = self.assign(label)?;
            for (i, s) in sums.iter_mut().enumerate() {
                *s += self.entry(i, col) as i32;
            }
        }
        let votes: Vec<i8> = sums.iter().map(|&s| s.signum() as i8).collect();
        Ok(TargetCode(balance_fill(&votes)))
    }

    pub fn write_sidecar<W: Write>(&self, w: W) -> Result<W> {
        let mut w = LeWriter::new(w);
        w.bytes(SIDECAR_MAGIC)?;
        w.u32(SIDECAR_VERSION)?;
        w.u32(self.order as u32)?;
        w.u64(self.seed)?;
        w.u32(self.assigned_in_order.len() as u32)?;
        for &(label, col) in &self.assigned_in_order {
            w.u32(label)?;
            w.u32(col as u32)?;
        }
        Ok(w.into_inner())
    }

    /// Rebuilds the codebook by replaying the stored assignments against the
    /// seeded column draw; a file whose columns disagree with the replay is
    /// rejected.
    pub fn read_sidecar<R: Read>(r: R, cap: usize) -> Result<(Self, R)> {
        let mut r = LeReader::new(r, "codebook sidecar");
        r.magic(SIDECAR_MAGIC)?;
        version_check("codebook sidecar", r.u32()?, SIDECAR_VERSION)?;
        let order = r.u32()? as usize;
        let seed = r.u64()?;
        let count = r.u32()? as usize;
        let mut book = Self::sylvester_with_cap(order, seed, cap)?;
        for _ in 0..count {
            let label = r.u32()?;
            let col = r.u32()? as usize;
            let replayed = book.assign(label)?;
            if replayed != col {
                return Err(Error::Malformed(format!(
                    "label {label} stored with column {col}, seed replay gives {replayed}"
                )));
            }
        }
        Ok((book, r.into_inner()))
    }
}

/// Resolves zero votes to `±1`.
///
/// Zeros are visited in ascending index order. While the nonzero votes are
/// unbalanced, zeros take the under-represented sign; once balanced, the
/// remaining zeros alternate starting with `+1`.
pub fn balance_fill(votes: &[i8]) -> Vec<i8> {
    let mut deficit: i64 = votes.iter().map(|&v| v as i64).sum();
    let mut next_alternate = 1i8;
    votes
        .iter()
        .map(|&v| {
            if v != 0 {
                return v;
            }
            let fill = if deficit > 0 {
                -1
            } else if deficit < 0 {
                1
            } else {
                let s = next_alternate;
                next_alternate = -next_alternate;
                s
            };
            deficit += fill as i64;
            fill
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(order: usize) -> Vec<Vec<i8>> {
        let h = sylvester_matrix(order, DEFAULT_ORDER_CAP).unwrap();
        h.chunks(order).map(|c| c.to_vec()).collect()
    }

    #[test]
    fn order_two_matches_base_case() {
        assert_eq!(rows(2), vec![vec![1, 1], vec![1, -1]]);
    }

    #[test]
    fn order_four_is_one_doubling_of_order_two() {
        assert_eq!(
            rows(4),
            vec![
                vec![1, 1, 1, 1],
                vec![1, -1, 1, -1],
                vec![1, 1, -1, -1],
                vec![1, -1, -1, 1],
            ]
        );
    }

    #[test]
    fn rejects_bad_orders() {
        assert!(matches!(
            sylvester_matrix(3, 1024),
            Err(Error::NotPowerOfTwo(3))
        ));
        assert!(matches!(
            sylvester_matrix(1, 1024),
            Err(Error::NotPowerOfTwo(1))
        ));
        assert!(matches!(
            sylvester_matrix(0, 1024),
            Err(Error::NotPowerOfTwo(0))
        ));
        assert!(matches!(
            sylvester_matrix(2048, 1024),
            Err(Error::OrderTooLarge {
                order: 2048,
                cap: 1024
            })
        ));
    }

    #[test]
    fn orthogonal_and_row_balanced_up_to_256() {
        for k in 1..=8 {
            let n = 1usize << k;
            let h = rows(n);
            for i in 0..n {
                for j in 0..n {
                    let dot: i64 = (0..n).map(|c| (h[i][c] as i64) * (h[j][c] as i64)).sum();
                    assert_eq!(dot, if i == j { n as i64 } else { 0 });
                }
                if i > 0 {
                    assert_eq!(h[i].iter().map(|&v| v as i64).sum::<i64>(), 0);
                }
            }
        }
    }

    #[test]
    fn target_order_cases() {
        assert_eq!(target_order(32, 10), 32);
        assert_eq!(target_order(8, 205), 256);
        assert_eq!(target_order(48, 10), 64);
        assert_eq!(target_order(1, 1), 2);
        assert_eq!(target_order(128, 205), 256);
    }

    #[test]
    fn assignment_is_idempotent_and_injective() {
        let mut book = HadamardCodebook::sylvester(16, 3).unwrap();
        let a = book.assign_column(7).unwrap();
        let b = book.assign_column(7).unwrap();
        assert_eq!(a, b);

        let mut book = HadamardCodebook::sylvester(16, 3).unwrap();
        let mut cols: Vec<usize> = (0..10).map(|l| book.assign(l).unwrap()).collect();
        cols.sort_unstable();
        cols.dedup();
        assert_eq!(cols.len(), 10);
        assert_eq!(book.assignments().len() + book.free_columns().len(), 16);
    }

    #[test]
    fn seventeenth_label_exhausts_order_sixteen() {
        let mut book = HadamardCodebook::sylvester(16, 11).unwrap();
        for l in 0..16 {
            book.assign(l).unwrap();
        }
        assert!(matches!(
            book.assign(16),
            Err(Error::ColumnsExhausted {
                order: 16,
                label: 16
            })
        ));
        // Known labels still resolve after exhaustion.
        assert!(book.assign(3).is_ok());
    }

    #[test]
    fn same_seed_same_registry() {
        let mut a = HadamardCodebook::sylvester(64, 99).unwrap();
        let mut b = HadamardCodebook::sylvester(64, 99).unwrap();
        for l in [5, 1, 40, 2, 9] {
            a.assign(l).unwrap();
            b.assign(l).unwrap();
        }
        assert_eq!(a.assignments(), b.assignments());
        assert_eq!(a.free_columns(), b.free_columns());
    }

    #[test]
    fn single_label_fusion_is_the_column() {
        let mut a = HadamardCodebook::sylvester(32, 5).unwrap();
        let mut b = a.clone();
        assert_eq!(
            a.fuse_multilabel(&[4]).unwrap(),
            b.assign_column(4).unwrap()
        );
    }

    #[test]
    fn fill_rule_on_two_column_example() {
        // Sums [2, 0, 0, -2] give votes [+1, 0, 0, -1]; the nonzero votes are
        // balanced, so zeros alternate starting with +1.
        let c1 = [1i8, 1, -1, -1];
        let c2 = [1i8, -1, 1, -1];
        let votes: Vec<i8> = c1
            .iter()
            .zip(&c2)
            .map(|(a, b)| ((*a as i32) + (*b as i32)).signum() as i8)
            .collect();
        assert_eq!(votes, vec![1, 0, 0, -1]);
        assert_eq!(balance_fill(&votes), vec![1, 1, -1, -1]);
    }

    #[test]
    fn fill_prefers_deficient_sign() {
        assert_eq!(balance_fill(&[1, 1, 0, 0, 0, 1]), vec![1, 1, -1, -1, -1, 1]);
        assert_eq!(balance_fill(&[-1, 0, 0, 0]), vec![-1, 1, 1, -1]);
    }

    #[test]
    fn negated_columns_fuse_to_exact_balance() {
        // Rows of a Sylvester matrix with the first coordinate flipped give
        // the same tie pattern; use the fill rule directly on an all-zero vote.
        let filled = balance_fill(&vec![0i8; 256]);
        assert_eq!(filled.iter().filter(|&&b| b > 0).count(), 128);
    }

    #[test]
    fn sidecar_round_trip_replays_registry() {
        let mut book = HadamardCodebook::sylvester(32, 1234).unwrap();
        for l in [9, 3, 17, 0] {
            book.assign(l).unwrap();
        }
        let bytes = book.write_sidecar(Vec::new()).unwrap();
        assert_eq!(&bytes[..4], b"HADC");
        let (back, _) = HadamardCodebook::read_sidecar(&bytes[..], DEFAULT_ORDER_CAP).unwrap();
        assert_eq!(back.assignments(), book.assignments());
        assert_eq!(back.free_columns(), book.free_columns());
        assert_eq!(back.write_sidecar(Vec::new()).unwrap(), bytes);
    }

    #[test]
    fn sidecar_rejects_tampered_column() {
        let mut book = HadamardCodebook::sylvester(8, 1).unwrap();
        let col = book.assign(0).unwrap();
        let mut bytes = book.write_sidecar(Vec::new()).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&(((col + 1) % 8) as u32).to_le_bytes());
        assert!(matches!(
            HadamardCodebook::read_sidecar(&bytes[..], DEFAULT_ORDER_CAP),
            Err(Error::Malformed(_))
        ));
    }
}
