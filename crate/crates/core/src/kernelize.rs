//! Anchor-based Gaussian RBF feature map.
//!
//! The first `m` points of the stream become anchors; every later point `x`
//! is represented by its RBF similarities to those anchors,
//! `z_i = exp(-‖x - a_i‖² / (2·bandwidth))`, where `bandwidth` is `η²`.
//! Optionally the mean kernel vector of the anchor set is subtracted so the
//! features are centred before they reach the linear hash functions.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// `m` anchor points with a shared dimension and RBF bandwidth `η²`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    points: Vec<f64>,
    dim: usize,
    count: usize,
    bandwidth: f64,
}

impl AnchorSet {
    /// Anchors from a row-major `count × dim` buffer.
    pub fn new(points: Vec<f64>, dim: usize, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidBandwidth(bandwidth));
        }
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(Error::Config(format!(
                "anchor buffer of length {} does not split into rows of dimension {dim}",
                points.len()
            )));
        }
        let count = points.len() / dim;
        Ok(Self {
            points,
            dim,
            count,
            bandwidth,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn anchor(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn kernel_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.count];
        self.kernel_map_into(x, &mut out)?;
        Ok(out)
    }

    pub fn kernel_map_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let scale = -1.0 / (2.0 * self.bandwidth);
        for (o, a) in out.iter_mut().zip(self.points.chunks_exact(self.dim)) {
            let sq: f64 = x.iter().zip(a).map(|(p, q)| (p - q) * (p - q)).sum();
            *o = (sq * scale).exp();
        }
        Ok(())
    }
}

/// Takes the first `m` points of `stream` as anchors; the iterator is left
/// positioned at the first training point.
pub fn collect_anchors<I, S>(stream: &mut I, m: usize, bandwidth: f64) -> Result<AnchorSet>
where
    I: Iterator<Item = S>,
    S: AsRef<[f64]>,
{
    if m == 0 {
        return Err(Error::Config("anchor count must be at least 1".into()));
    }
    let mut points = Vec::new();
    let mut dim = None;
    for got in 0..m {
        let Some(p) = stream.next() else {
            return Err(Error::InsufficientData { needed: m, got });
        };
        let p = p.as_ref();
        match dim {
            None => {
                dim = Some(p.len());
                points.reserve(m * p.len());
            }
            Some(d) if d != p.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: p.len(),
                })
            }
            _ => {}
        }
        points.extend_from_slice(p);
    }
    AnchorSet::new(points, dim.unwrap_or(0), bandwidth)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    None,
    #[default]
    AnchorMean,
}

impl Centering {
    pub fn as_str(self) -> &'static str {
        match self {
            Centering::None => "none",
            Centering::AnchorMean => "anchor-mean",
        }
    }
}

impl std::str::FromStr for Centering {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "off" => Ok(Centering::None),
            "anchor-mean" | "on" => Ok(Centering::AnchorMean),
            _ => Err(Error::Config(format!("unknown kernel centering `{s}`"))),
        }
    }
}

/// Raw features → the representation the hash functions see.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    Identity {
        dim: usize,
    },
    Rbf {
        anchors: AnchorSet,
        offset: Vec<f64>,
        centering: Centering,
    },
}

impl FeatureMap {
    pub fn rbf(anchors: AnchorSet, centering: Centering) -> Self {
        let offset = match centering {
            Centering::None => vec![0.0; anchors.len()],
            Centering::AnchorMean => {
                let m = anchors.len();
                let mut mean = vec![0.0; m];
                let mut row = vec![0.0; m];
                for i in 0..m {
                    anchors
                        .kernel_map_into(anchors.anchor(i), &mut row)
                        .expect("anchor has anchor dimension");
                    for (acc, v) in mean.iter_mut().zip(&row) {
                        *acc += v;
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m as f64);
                mean
            }
        };
        FeatureMap::Rbf {
            anchors,
            offset,
            centering,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Rbf { anchors, .. } => anchors.dim(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            FeatureMap::Identity { dim } => *dim,
            FeatureMap::Rbf { anchors, .. } => anchors.len(),
        }
    }

    pub fn anchors(&self) -> Option<&AnchorSet> {
        match self {
            FeatureMap::Identity { .. } => None,
            FeatureMap::Rbf { anchors, .. } => Some(anchors),
        }
    }

    pub fn map_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            FeatureMap::Identity { dim } => {
                if x.len() != *dim {
                    return Err(Error::DimensionMismatch {
                        expected: *dim,
                        got: x.len(),
                    });
                }
                out.copy_from_slice(x);
                Ok(())
            }
            FeatureMap::Rbf {
                anchors, offset, ..
            } => {
                anchors.kernel_map_into(x, out)?;
                for (o, c) in out.iter_mut().zip(offset) {
                    *o -= c;
                }
                Ok(())
            }
        }
    }

    pub fn map(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.map_into(x, &mut out)?;
        Ok(out)
    }

    /// Maps a row-major `n × input_dim` matrix, in parallel over rows.
    pub fn map_rows(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let d = self.input_dim();
        if d == 0 || !rows.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: rows.len() % d.max(1),
            });
        }
        if let FeatureMap::Identity { .. } = self {
            return Ok(rows.to_vec());
        }
        let m = self.output_dim();
        let n = rows.len() / d;
        let mut out = vec![0.0; n * m];
        out.par_chunks_mut(m)
            .zip(rows.par_chunks(d))
            .try_for_each(|(o, x)| self.map_into(x, o))?;
        Ok(out)
    }
}
