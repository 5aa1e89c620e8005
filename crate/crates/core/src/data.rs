//! Dataset loading, normalization, splitting and streaming.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};

use crate::binio::{LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::trainer::Sample;

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;
const DENSE_MAGIC: &[u8; 4] = b"DNSF";

/// Row-major `n × dim` features with one label set per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Vec<Vec<u32>>,
}

impl Dataset {
    pub fn new(features: Vec<f64>, dim: usize, labels: Vec<Vec<u32>>) -> Result<Self> {
        if features.len() != dim * labels.len() {
            return Err(Error::CountMismatch {
                images: features.len().checked_div(dim).unwrap_or(0),
                labels: labels.len(),
            });
        }
        if let Some(i) = labels.iter().position(|l| l.is_empty()) {
            return Err(Error::Malformed(format!("item {i} has no label")));
        }
        Ok(Self {
            features,
            dim,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[Vec<u32>] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(rows.len() * self.dim);
        for &i in rows {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            features,
            dim: self.dim,
            labels: rows.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }

    /// Appends `other` below `self`.
    pub fn concat(mut self, other: Dataset) -> Result<Dataset> {
        if self.is_empty() {
            return Ok(other);
        }
        if other.dim != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        self.features.extend(other.features);
        self.labels.extend(other.labels);
        Ok(self)
    }

    pub fn normalize(&mut self, norm: Normalization) {
        match norm {
            Normalization::None => {}
            Normalization::Scale255 => self.features.iter_mut().for_each(|v| *v /= 255.0),
            Normalization::UnitL2 => {
                for row in self.features.chunks_exact_mut(self.dim.max(1)) {
                    let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if n > 0.0 {
                        row.iter_mut().for_each(|v| *v /= n);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    #[default]
    None,
    Scale255,
    UnitL2,
}

impl Normalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::Scale255 => "scale-255",
            Normalization::UnitL2 => "unit-l2",
        }
    }
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Normalization::None),
            "scale-255" => Ok(Normalization::Scale255),
            "unit-l2" => Ok(Normalization::UnitL2),
            _ => Err(Error::Config(format!("unknown normalization `{s}`"))),
        }
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    open(path)?
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(buf)
}

fn be_u32(bytes: &[u8], at: usize, what: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::TruncatedFile(what.display().to_string()))
}

/// Reads an IDX `u8` image file (magic `0x803`); returns unscaled pixels
/// and the per-item dimension.
pub fn load_idx_images(path: &Path) -> Result<(Vec<f64>, usize)> {
    let img = read_all(path)?;
    let magic = be_u32(&img, 0, path)?;
    if magic != IDX_IMAGES {
        return Err(Error::BadMagic {
            expected: IDX_IMAGES,
            found: magic,
        });
    }
    let n = be_u32(&img, 4, path)? as usize;
    let rows = be_u32(&img, 8, path)? as usize;
    let cols = be_u32(&img, 12, path)? as usize;
    let dim = rows * cols;
    let body = img
        .get(16..16 + n * dim)
        .ok_or_else(|| Error::TruncatedFile(path.display().to_string()))?;
    Ok((body.iter().map(|&p| p as f64).collect(), dim))
}

/// Reads an IDX label file (magic `0x801`).
pub fn load_idx_labels(path: &Path) -> Result<Vec<Vec<u32>>> {
    let lab = read_all(path)?;
    let magic = be_u32(&lab, 0, path)?;
    if magic != IDX_LABELS {
        return Err(Error::BadMagic {
            expected: IDX_LABELS,
            found: magic,
        });
    }
    let n = be_u32(&lab, 4, path)? as usize;
    let body = lab
        .get(8..8 + n)
        .ok_or_else(|| Error::TruncatedFile(path.display().to_string()))?;
    Ok(body.iter().map(|&l| vec![l as u32]).collect())
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let (features, dim) = load_idx_images(images)?;
    let labels = load_idx_labels(labels)?;
    let n = features.len().checked_div(dim).unwrap_or(0);
    if n != labels.len() {
        return Err(Error::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    Dataset::new(features, dim, labels)
}

/// Features only, in any supported format. Returns `(features, dim)`.
pub fn read_features(format: FeatureFormat, path: &Path) -> Result<(Vec<f64>, usize)> {
    match format {
        FeatureFormat::Idx => load_idx_images(path),
        FeatureFormat::Dense => read_dense(BufReader::new(open(path)?)),
        FeatureFormat::Csv => read_csv(open(path)?),
    }
}

/// Labels only: IDX label files for `idx`, label text otherwise.
pub fn read_labels(format: FeatureFormat, path: &Path) -> Result<Vec<Vec<u32>>> {
    match format {
        FeatureFormat::Idx => load_idx_labels(path),
        _ => read_label_text(open(path)?),
    }
}

/// Dense `f32` feature file: `DNSF`, `n: u64`, `d: u32`, row-major values.
pub fn write_dense<W: Write>(w: W, features: &[f64], dim: usize) -> Result<W> {
    if dim == 0 || !features.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: features.len(),
        });
    }
    let mut w = LeWriter::new(w);
    w.bytes(DENSE_MAGIC)?;
    w.u64((features.len() / dim) as u64)?;
    w.u32(dim as u32)?;
    let mut buf = Vec::with_capacity(features.len() * 4);
    for &v in features {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.bytes(&buf)?;
    Ok(w.into_inner())
}

/// Returns `(features, dim)`.
pub fn read_dense<R: Read>(r: R) -> Result<(Vec<f64>, usize)> {
    let mut r = LeReader::new(r, "dense feature file");
    r.magic(DENSE_MAGIC)?;
    let n = r.u64()? as usize;
    let d = r.u32()? as usize;
    let mut buf = vec![0u8; n * d * 4];
    r.fill(&mut buf)?;
    r.at_eof()?;
    let features = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((features, d))
}

/// Comma-separated reals, one row per line, no header.
pub fn read_csv<R: Read>(r: R) -> Result<(Vec<f64>, usize)> {
    let mut features = Vec::new();
    let mut dim = None;
    for (n, line) in BufReader::new(r).lines().enumerate() {
        let line = line.map_err(|e| Error::io("csv", e))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let before = features.len();
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Malformed(format!("csv line {}: bad number `{field}`", n + 1))
            })?;
            features.push(v);
        }
        let width = features.len() - before;
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: width,
                })
            }
            _ => {}
        }
    }
    Ok((features, dim.unwrap_or(0)))
}

/// One line per item, space-separated integer label ids.
pub fn read_label_text<R: Read>(r: R) -> Result<Vec<Vec<u32>>> {
    BufReader::new(r)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(n, line)| {
            let line = line.map_err(|e| Error::io("label file", e))?;
            line.split_whitespace()
                .map(|t| {
                    t.parse::<u32>().map_err(|_| {
                        Error::Malformed(format!("label line {}: bad id `{t}`", n + 1))
                    })
                })
                .collect()
        })
        .collect()
}

pub fn write_label_text<W: Write>(mut w: W, labels: &[Vec<u32>]) -> Result<W> {
    for l in labels {
        let line: Vec<String> = l.iter().map(u32::to_string).collect();
        writeln!(w, "{}", line.join(" ")).map_err(|e| Error::io("label file", e))?;
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Idx,
    Dense,
    Csv,
}

impl std::str::FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "idx" => Ok(FeatureFormat::Idx),
            "dense" | "dense-f32" => Ok(FeatureFormat::Dense),
            "csv" => Ok(FeatureFormat::Csv),
            _ => Err(Error::Config(format!("unknown feature format `{s}`"))),
        }
    }
}

impl FeatureFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureFormat::Idx => "idx",
            FeatureFormat::Dense => "dense-f32",
            FeatureFormat::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuerySplit {
    PerClass(usize),
    Count(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub query: QuerySplit,
    /// `None` trains on the whole retrieval set.
    pub train_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub format: FeatureFormat,
    /// Feature files, concatenated in order.
    pub features: Vec<PathBuf>,
    /// Label files, one per feature file. IDX label files for `idx`, label
    /// text otherwise.
    pub labels: Vec<PathBuf>,
    pub normalization: Normalization,
    pub split: SplitSpec,
}

pub fn load(spec: &DatasetSpec) -> Result<Dataset> {
    if spec.features.is_empty() {
        return Err(Error::Config("no feature files given".into()));
    }
    if spec.features.len() != spec.labels.len() {
        return Err(Error::Config(format!(
            "{} feature files but {} label files",
            spec.features.len(),
            spec.labels.len()
        )));
    }
    let mut out = Dataset {
        features: Vec::new(),
        dim: 0,
        labels: Vec::new(),
    };
    for (f, l) in spec.features.iter().zip(&spec.labels) {
        let (features, dim) = read_features(spec.format, f)?;
        let labels = read_labels(spec.format, l)?;
        let images = features.len().checked_div(dim).unwrap_or(0);
        if images != labels.len() {
            return Err(Error::CountMismatch {
                images,
                labels: labels.len(),
            });
        }
        let part = Dataset::new(features, dim, labels)?;
        out = out.concat(part)?;
    }
    out.normalize(spec.normalization);
    Ok(out)
}

pub fn save_dense(path: &Path, features: &[f64], dim: usize) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = write_dense(BufWriter::new(f), features, dim)?;
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Index lists of a query / retrieval / train split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub query: Vec<usize>,
    pub retrieval: Vec<usize>,
    pub train: Vec<usize>,
}

/// Samples the query set (per class by each item's first label, or a flat
/// count), leaves the rest as the retrieval set and samples the training
/// set from it. All lists are in ascending index order.
pub fn split(data: &Dataset, spec: &SplitSpec, seed: u64) -> Result<Split> {
    let n = data.len();
    let mut rng = seeded(seed);
    let mut is_query = vec![false; n];
    match spec.query {
        QuerySplit::PerClass(per) => {
            let mut classes: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
            for (i, l) in data.labels.iter().enumerate() {
                classes.entry(l[0]).or_default().push(i);
            }
            for (class, members) in &classes {
                if members.len() < per {
                    return Err(Error::SplitInfeasible(format!(
                        "class {class} has {} items, {per} queries requested",
                        members.len()
                    )));
                }
                for k in index::sample(&mut rng, members.len(), per) {
                    is_query[members[k]] = true;
                }
            }
        }
        QuerySplit::Count(q) => {
            if q > n {
                return Err(Error::SplitInfeasible(format!(
                    "{q} queries requested from {n} items"
                )));
            }
            for k in index::sample(&mut rng, n, q) {
                is_query[k] = true;
            }
        }
    }
    let query: Vec<usize> = (0..n).filter(|&i| is_query[i]).collect();
    let retrieval: Vec<usize> = (0..n).filter(|&i| !is_query[i]).collect();
    let train = match spec.train_count {
        None => retrieval.clone(),
        Some(t) if t > retrieval.len() => {
            return Err(Error::SplitInfeasible(format!(
                "{t} training items requested from a retrieval set of {}",
                retrieval.len()
            )))
        }
        Some(t) => {
            let mut picked: Vec<usize> = index::sample(&mut rng, retrieval.len(), t)
                .into_iter()
                .map(|k| retrieval[k])
                .collect();
            picked.sort_unstable();
            picked
        }
    };
    Ok(Split {
        query,
        retrieval,
        train,
    })
}

/// A seeded permutation of `items` delivered once in batches of `n_t`.
#[derive(Debug, Clone)]
pub struct BatchStream<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    batch: usize,
    pos: usize,
}

pub fn stream<'a>(
    data: &'a Dataset,
    items: &[usize],
    batch: usize,
    seed: u64,
) -> Result<BatchStream<'a>> {
    if batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if let Some(&bad) = items.iter().find(|&&i| i >= data.len()) {
        return Err(Error::IndexOutOfBounds {
            index: bad,
            len: data.len(),
        });
    }
    let mut order = items.to_vec();
    order.shuffle(&mut seeded(seed));
    Ok(BatchStream {
        data,
        order,
        batch,
        pos: 0,
    })
}

impl<'a> BatchStream<'a> {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// The same stream one sample at a time.
    pub fn samples(self) -> impl Iterator<Item = Sample> + 'a {
        let data = self.data;
        self.order.into_iter().map(move |i| Sample {
            features: data.row(i).to_vec(),
            labels: data.labels[i].clone(),
        })
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Vec<Sample>;

    fn next(&mut self) -> Option<Vec<Sample>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let out = self.order[self.pos..end]
            .iter()
            .map(|&i| Sample {
                features: self.data.row(i).to_vec(),
                labels: self.data.labels[i].clone(),
            })
            .collect();
        self.pos = end;
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(per_class: usize, classes: u32) -> Dataset {
        let n = per_class * classes as usize;
        Dataset::new(
            (0..n * 2).map(|v| v as f64).collect(),
            2,
            (0..n).map(|i| vec![i as u32 % classes]).collect(),
        )
        .unwrap()
    }

    fn idx_bytes(magic: u32, dims: &[u32], body: &[u8]) -> Vec<u8> {
        let mut out = magic.to_be_bytes().to_vec();
        for d in dims {
            out.extend_from_slice(&d.to_be_bytes());
        }
        out.extend_from_slice(body);
        out
    }

    fn write_tmp(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn idx_loader_cases() {
        let dir = tempfile::tempdir().unwrap();
        let img = write_tmp(
            dir.path(),
            "img",
            &idx_bytes(0x803, &[2, 2, 2], &[0, 1, 2, 3, 4, 5, 6, 255]),
        );
        let lab = write_tmp(dir.path(), "lab", &idx_bytes(0x801, &[2], &[7, 9]));
        let d = load_idx(&img, &lab).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 4);
        assert_eq!(d.row(1), &[4.0, 5.0, 6.0, 255.0]);
        assert_eq!(d.labels(), &[vec![7], vec![9]]);

        let lab3 = write_tmp(dir.path(), "lab3", &idx_bytes(0x801, &[3], &[1, 2, 3]));
        assert!(matches!(
            load_idx(&img, &lab3),
            Err(Error::CountMismatch {
                images: 2,
                labels: 3
            })
        ));
        assert!(matches!(
            load_idx(&lab, &lab),
            Err(Error::BadMagic {
                expected: 0x803,
                found: 0x801
            })
        ));
        let short = write_tmp(
            dir.path(),
            "short",
            &idx_bytes(0x803, &[2, 2, 2], &[0, 1, 2]),
        );
        assert!(matches!(
            load_idx(&short, &lab),
            Err(Error::TruncatedFile(_))
        ));
        assert!(matches!(
            load_idx(&dir.path().join("missing"), &lab),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn dense_round_trip_is_bitwise() {
        let feats: Vec<f64> = (0..12).map(|i| (i as f32 * 0.37 - 1.0) as f64).collect();
        let bytes = write_dense(Vec::new(), &feats, 4).unwrap();
        let (back, dim) = read_dense(&bytes[..]).unwrap();
        assert_eq!(dim, 4);
        assert!(back
            .iter()
            .zip(&feats)
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(matches!(
            read_dense(&bytes[..bytes.len() - 2]),
            Err(Error::TruncatedFile(_))
        ));
    }

    #[test]
    fn csv_and_label_text() {
        let (f, d) = read_csv("1,2,3\n4, 5,6\n".as_bytes()).unwrap();
        assert_eq!((f, d), (vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3));
        assert!(read_csv("1,2\n3\n".as_bytes()).is_err());
        assert!(read_csv("1,x\n".as_bytes()).is_err());
        let l = read_label_text("3\n1 4 7\n".as_bytes()).unwrap();
        assert_eq!(l, vec![vec![3], vec![1, 4, 7]]);
        let back = write_label_text(Vec::new(), &l).unwrap();
        assert_eq!(read_label_text(&back[..]).unwrap(), l);
    }

    #[test]
    fn normalizations() {
        let mut d = Dataset::new(vec![0.0, 255.0, 3.0, 4.0], 2, vec![vec![0], vec![1]]).unwrap();
        let mut e = d.clone();
        d.normalize(Normalization::Scale255);
        assert_eq!(d.row(0), &[0.0, 1.0]);
        assert!(d.features().iter().all(|v| (0.0..=1.0).contains(v)));
        e.normalize(Normalization::UnitL2);
        assert_eq!(e.row(1), &[0.6, 0.8]);
    }

    #[test]
    fn per_class_split() {
        let d = toy(30, 5);
        let spec = SplitSpec {
            query: QuerySplit::PerClass(4),
            train_count: Some(50),
        };
        let s = split(&d, &spec, 11).unwrap();
        assert_eq!(s.query.len(), 20);
        assert_eq!(s.retrieval.len(), 130);
        assert_eq!(s.train.len(), 50);
        for c in 0..5 {
            assert_eq!(
                s.query.iter().filter(|&&i| d.labels()[i][0] == c).count(),
                4
            );
        }
        assert!(s.query.iter().all(|q| !s.retrieval.contains(q)));
        assert!(s.train.iter().all(|t| s.retrieval.contains(t)));
        assert_eq!(split(&d, &spec, 11).unwrap(), s);
        assert_ne!(split(&d, &spec, 12).unwrap(), s);
    }

    #[test]
    fn infeasible_splits() {
        let d = toy(150, 2);
        let per = SplitSpec {
            query: QuerySplit::PerClass(200),
            train_count: None,
        };
        assert!(matches!(split(&d, &per, 0), Err(Error::SplitInfeasible(_))));
        let train = SplitSpec {
            query: QuerySplit::Count(10),
            train_count: Some(291),
        };
        assert!(matches!(
            split(&d, &train, 0),
            Err(Error::SplitInfeasible(_))
        ));
    }

    #[test]
    fn stream_batches_cover_train_once() {
        let d = toy(10, 10);
        let items: Vec<usize> = (0..100).collect();
        assert_eq!(stream(&d, &items, 1, 0).unwrap().count(), 100);
        let batches: Vec<_> = stream(&d, &items, 30, 0).unwrap().collect();
        assert_eq!(
            batches.iter().map(Vec::len).collect::<Vec<_>>(),
            vec![30, 30, 30, 10]
        );
        let mut seen = stream(&d, &items, 7, 5).unwrap().order().to_vec();
        assert_ne!(seen, items);
        seen.sort_unstable();
        assert_eq!(seen, items);
        assert_eq!(
            stream(&d, &items, 7, 5).unwrap().order(),
            stream(&d, &items, 7, 5).unwrap().order()
        );
        let flat: Vec<Sample> = stream(&d, &items, 7, 5).unwrap().flatten().collect();
        let direct: Vec<Sample> = stream(&d, &items, 7, 5).unwrap().samples().collect();
        assert_eq!(flat, direct);
    }
}
