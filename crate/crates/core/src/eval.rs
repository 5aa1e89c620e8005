//! Hamming-ranking retrieval metrics.
//!
//! The database is ranked per query by Hamming distance, ties broken by
//! ascending database index. Two items are relevant to each other when
//! their label sets intersect.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::codec::BinaryCodeMatrix;
use crate::error::{Error, Result};

pub fn relevant(query_labels: &[u32], item_labels: &[u32]) -> bool {
    query_labels.iter().any(|q| item_labels.contains(q))
}

/// Query and database codes with their label sets.
#[derive(Debug, Clone, Copy)]
pub struct Retrieval<'a> {
    pub queries: &'a BinaryCodeMatrix,
    pub database: &'a BinaryCodeMatrix,
    pub query_labels: &'a [Vec<u32>],
    pub db_labels: &'a [Vec<u32>],
}

impl<'a> Retrieval<'a> {
    pub fn new(
        queries: &'a BinaryCodeMatrix,
        database: &'a BinaryCodeMatrix,
        query_labels: &'a [Vec<u32>],
        db_labels: &'a [Vec<u32>],
    ) -> Result<Self> {
        if database.is_empty() {
            return Err(Error::EmptyDatabase);
        }
        if queries.is_empty() {
            return Err(Error::Config("no queries to evaluate".into()));
        }
        if queries.bits() != database.bits() {
            return Err(Error::LengthMismatch {
                expected: database.bits(),
                got: queries.bits(),
            });
        }
        if query_labels.len() != queries.len() {
            return Err(Error::LengthMismatch {
                expected: queries.len(),
                got: query_labels.len(),
            });
        }
        if db_labels.len() != database.len() {
            return Err(Error::LengthMismatch {
                expected: database.len(),
                got: db_labels.len(),
            });
        }
        Ok(Self {
            queries,
            database,
            query_labels,
            db_labels,
        })
    }
}

/// Which metrics to compute in one pass over the queries.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub map: bool,
    pub map_at: Option<usize>,
    pub hamming_radius: Option<u32>,
    pub precision_at: Vec<usize>,
    pub pr_curve: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            map: true,
            map_at: None,
            hamming_radius: Some(2),
            precision_at: Vec::new(),
            pr_curve: false,
        }
    }
}

/// Per-query sums; averaged over queries at the end.
#[derive(Debug, Clone, Default)]
struct QueryStats {
    ap: f64,
    ap_at: f64,
    ball: f64,
    pk: Vec<f64>,
    pr: Vec<(f64, f64)>,
}

fn query_stats(set: &Retrieval<'_>, q: usize, opts: &EvalOptions) -> QueryStats {
    let bits = set.database.bits();
    let n = set.database.len();
    let dists = set.database.distances_from(set.queries.code(q));
    let qlabels = &set.query_labels[q];
    let rel: Vec<bool> = set.db_labels.iter().map(|l| relevant(qlabels, l)).collect();
    let total_rel = rel.iter().filter(|&&r| r).count();

    // Histogram over distances 0..=bits.
    let mut count = vec![0usize; bits + 1];
    let mut count_rel = vec![0usize; bits + 1];
    for (&d, &r) in dists.iter().zip(&rel) {
        count[d as usize] += 1;
        count_rel[d as usize] += r as usize;
    }

    let mut out = QueryStats::default();

    let need_order = opts.map || opts.map_at.is_some() || !opts.precision_at.is_empty();
    if need_order {
        // Stable counting sort gives ascending index within each distance.
        let mut start = vec![0usize; bits + 2];
        for d in 0..=bits {
            start[d + 1] = start[d] + count[d];
        }
        let mut ranked = vec![false; n];
        for (&d, &r) in dists.iter().zip(&rel) {
            let slot = &mut start[d as usize];
            ranked[*slot] = r;
            *slot += 1;
        }
        if opts.map {
            out.ap = average_precision(&ranked, total_rel, n);
        }
        if let Some(k) = opts.map_at {
            out.ap_at = average_precision(&ranked, total_rel, k);
        }
        out.pk = opts
            .precision_at
            .iter()
            .map(|&k| {
                let k = k.min(n);
                ranked[..k].iter().filter(|&&r| r).count() as f64 / k as f64
            })
            .collect();
    }

    if let Some(radius) = opts.hamming_radius {
        let upto = (radius as usize).min(bits);
        let inside: usize = count[..=upto].iter().sum();
        let hits: usize = count_rel[..=upto].iter().sum();
        out.ball = if inside == 0 {
            0.0
        } else {
            hits as f64 / inside as f64
        };
    }

    if opts.pr_curve {
        let (mut inside, mut hits) = (0usize, 0usize);
        out.pr = (0..=bits)
            .map(|d| {
                inside += count[d];
                hits += count_rel[d];
                let precision = if inside == 0 {
                    0.0
                } else {
                    hits as f64 / inside as f64
                };
                let recall = if total_rel == 0 {
                    0.0
                } else {
                    hits as f64 / total_rel as f64
                };
                (recall, precision)
            })
            .collect();
    }
    out
}

/// AP of a ranked relevance list truncated at `k`, normalized by
/// `min(k, total_rel)`. Zero when nothing is relevant.
fn average_precision(ranked: &[bool], total_rel: usize, k: usize) -> f64 {
    let k = k.min(ranked.len());
    let norm = k.min(total_rel);
    if norm == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &r) in ranked[..k].iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    sum / norm as f64
}

fn collect(set: &Retrieval<'_>, opts: &EvalOptions) -> Vec<QueryStats> {
    (0..set.queries.len())
        .into_par_iter()
        .map(|q| query_stats(set, q, opts))
        .collect()
}

fn mean(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.sum::<f64>() / n as f64
}

/// mAP over the full ranking, or mAP@k when `k` is given.
pub fn mean_average_precision(set: &Retrieval<'_>, k: Option<usize>) -> Result<f64> {
    let opts = EvalOptions {
        map: k.is_none(),
        map_at: k,
        hamming_radius: None,
        precision_at: Vec::new(),
        pr_curve: false,
    };
    let stats = collect(set, &opts);
    let n = stats.len();
    Ok(match k {
        None => mean(stats.iter().map(|s| s.ap), n),
        Some(_) => mean(stats.iter().map(|s| s.ap_at), n),
    })
}

/// Mean fraction of relevant items within Hamming distance `radius`; an
/// empty ball counts as precision 0.
pub fn precision_at_hamming_radius(set: &Retrieval<'_>, radius: u32) -> Result<f64> {
    let opts = EvalOptions {
        map: false,
        map_at: None,
        hamming_radius: Some(radius),
        precision_at: Vec::new(),
        pr_curve: false,
    };
    let stats = collect(set, &opts);
    Ok(mean(stats.iter().map(|s| s.ball), stats.len()))
}

/// Precision of the top `k` items for each `k`. `k` past the database size
/// is clipped to it.
pub fn precision_at_k(set: &Retrieval<'_>, ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    if let Some(&bad) = ks.iter().find(|&&k| k == 0) {
        return Err(Error::Config(format!(
            "precision cutoff must be at least 1, got {bad}"
        )));
    }
    let opts = EvalOptions {
        map: false,
        map_at: None,
        hamming_radius: None,
        precision_at: ks.to_vec(),
        pr_curve: false,
    };
    let stats = collect(set, &opts);
    let n = stats.len();
    Ok(ks
        .iter()
        .enumerate()
        .map(|(j, &k)| (k, mean(stats.iter().map(|s| s.pk[j]), n)))
        .collect())
}

/// `(recall, precision)` averaged over queries for Hamming thresholds
/// `0..=bits`.
pub fn pr_curve(set: &Retrieval<'_>) -> Result<Vec<(f64, f64)>> {
    let opts = EvalOptions {
        map: false,
        map_at: None,
        hamming_radius: None,
        precision_at: Vec::new(),
        pr_curve: true,
    };
    let stats = collect(set, &opts);
    Ok(average_curves(&stats))
}

fn average_curves(stats: &[QueryStats]) -> Vec<(f64, f64)> {
    let n = stats.len() as f64;
    let len = stats.first().map_or(0, |s| s.pr.len());
    (0..len)
        .map(|d| {
            let (r, p) = stats
                .iter()
                .fold((0.0, 0.0), |(r, p), s| (r + s.pr[d].0, p + s.pr[d].1));
            (r / n, p / n)
        })
        .collect()
}

/// Trapezoid area under `points` (sorted by x), divided by the x-range.
/// A single point or a zero-width range gives the mean y.
pub fn auc(points: &[(f64, f64)]) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyCurve);
    }
    if points.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(Error::Malformed("curve points are not sorted by x".into()));
    }
    let width = points[points.len() - 1].0 - points[0].0;
    if width == 0.0 {
        return Ok(points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64);
    }
    let area: f64 = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum();
    Ok(area / width)
}

#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map_at_k: Option<(usize, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prec_at_h2: Option<f64>,
    pub prec_at_k_curve: Vec<(usize, f64)>,
    pub pr_curve: Vec<(f64, f64)>,
    pub auc_values: BTreeMap<String, f64>,
    pub timing: BTreeMap<String, f64>,
    pub config_echo: BTreeMap<String, String>,
}

/// All metrics selected by `opts`, from one pass over the queries.
pub fn evaluate(set: &Retrieval<'_>, opts: &EvalOptions) -> Result<EvalReport> {
    if let Some(&bad) = opts.precision_at.iter().find(|&&k| k == 0) {
        return Err(Error::Config(format!(
            "precision cutoff must be at least 1, got {bad}"
        )));
    }
    let stats = collect(set, opts);
    let n = stats.len();
    let mut report = EvalReport::default();
    if opts.map {
        report.map = Some(mean(stats.iter().map(|s| s.ap), n));
    }
    if let Some(k) = opts.map_at {
        report.map_at_k = Some((k, mean(stats.iter().map(|s| s.ap_at), n)));
    }
    if opts.hamming_radius.is_some() {
        report.prec_at_h2 = Some(mean(stats.iter().map(|s| s.ball), n));
    }
    report.prec_at_k_curve = opts
        .precision_at
        .iter()
        .enumerate()
        .map(|(j, &k)| (k, mean(stats.iter().map(|s| s.pk[j]), n)))
        .collect();
    if report.prec_at_k_curve.len() > 1 {
        let pts: Vec<(f64, f64)> = report
            .prec_at_k_curve
            .iter()
            .map(|&(k, p)| (k as f64, p))
            .collect();
        report
            .auc_values
            .insert("precision_at_k".into(), auc(&pts)?);
    }
    if opts.pr_curve {
        report.pr_curve = average_curves(&stats);
        let mut pts = report.pr_curve.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        report.auc_values.insert("pr".into(), auc(&pts)?);
    }
    Ok(report)
}

impl EvalReport {
    /// One `key = value` line per scalar metric.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let mut line =
            |k: &str, v: String| writeln!(w, "{k} = {v}").map_err(|e| Error::io("report", e));
        for (k, v) in &self.config_echo {
            line(&format!("config.{k}"), v.clone())?;
        }
        if let Some(m) = self.map {
            line("map", format!("{m:.6}"))?;
        }
        if let Some((k, m)) = self.map_at_k {
            line(&format!("map@{k}"), format!("{m:.6}"))?;
        }
        if let Some(p) = self.prec_at_h2 {
            line("precision@h2", format!("{p:.6}"))?;
        }
        for (k, p) in &self.prec_at_k_curve {
            line(&format!("precision@{k}"), format!("{p:.6}"))?;
        }
        for (k, v) in &self.auc_values {
            line(&format!("auc.{k}"), format!("{v:.6}"))?;
        }
        for (k, v) in &self.timing {
            line(&format!("time.{k}"), format!("{v:.3}"))?;
        }
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::io("report", e.into()))
    }
}

/// `x,y` per line with a header row.
pub fn write_curve_csv<W: Write, X: std::fmt::Display>(
    mut w: W,
    header: (&str, &str),
    points: &[(X, f64)],
) -> Result<()> {
    let io = |e| Error::io("curve csv", e);
    writeln!(w, "{},{}", header.0, header.1).map_err(io)?;
    for (x, y) in points {
        writeln!(w, "{x},{y}").map_err(io)?;
    }
    Ok(())
}
