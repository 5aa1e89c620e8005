//! Command implementations behind the `hadhash` binary.
//!
//! Each `cmd_*` function takes resolved settings, does its work and writes
//! its outputs under the configured directory. Progress lines go to the
//! supplied writer.

pub mod config;
mod selfcheck;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};

pub use config::{BenchSettings, ConfigMap, EvalSettings, Metrics, RunConfig, Seeds};
pub use selfcheck::{selfcheck, CheckOutcome};

use crate::codec::{encode, encode_features, BinaryCodeMatrix};
use crate::data::{self, Dataset, FeatureFormat, Normalization, Split};
use crate::error::{Error, Result};
use crate::eval::{auc, evaluate, write_curve_csv, EvalOptions, EvalReport, Retrieval};
use crate::kernelize::{collect_anchors, FeatureMap};
use crate::rng::{derive_seed, seeded, GaussianSampler};
use crate::trainer::{
    train_stream_with, HashModel, KernelConfig, StepInfo, StreamBatch, TrainConfig,
};

/// Loaded dataset and its split.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: Dataset,
    pub split: Split,
}

impl Prepared {
    pub fn query_labels(&self) -> Vec<Vec<u32>> {
        self.split
            .query
            .iter()
            .map(|&i| self.data.labels()[i].clone())
            .collect()
    }

    pub fn db_labels(&self) -> Vec<Vec<u32>> {
        self.split
            .retrieval
            .iter()
            .map(|&i| self.data.labels()[i].clone())
            .collect()
    }

    pub fn query_rows(&self) -> Vec<f64> {
        rows(&self.data, &self.split.query)
    }

    pub fn db_rows(&self) -> Vec<f64> {
        rows(&self.data, &self.split.retrieval)
    }
}

fn rows(data: &Dataset, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * data.dim());
    for &i in idx {
        out.extend_from_slice(data.row(i));
    }
    out
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let data = data::load(&cfg.dataset)?;
    let split = data::split(&data, &cfg.dataset.split, cfg.seeds.split)?;
    Ok(Prepared { data, split })
}

/// Trains on the split's training stream. `observer` sees every round.
pub fn train_model<F>(cfg: &RunConfig, prep: &Prepared, observer: F) -> Result<HashModel>
where
    F: FnMut(&HashModel, &StepInfo),
{
    let stream = data::stream(
        &prep.data,
        &prep.split.train,
        cfg.train.batch_size,
        cfg.seeds.stream,
    )?;
    train_stream_with(&cfg.train, stream.samples(), observer)
}

/// The feature map a training run on this stream would build.
pub fn stream_feature_map(cfg: &RunConfig, prep: &Prepared) -> Result<FeatureMap> {
    let k: &KernelConfig = &cfg.train.kernel;
    if !k.active() {
        return Ok(FeatureMap::Identity {
            dim: prep.data.dim(),
        });
    }
    let mut samples = data::stream(&prep.data, &prep.split.train, 1, cfg.seeds.stream)?.samples();
    let anchors = collect_anchors(&mut samples, k.anchors, k.bandwidth)?;
    Ok(FeatureMap::rbf(anchors, k.centering))
}

/// Untrained model whose projection is i.i.d. standard normal.
pub fn lsh_baseline(train: &TrainConfig, feature_map: FeatureMap, seed: u64) -> Result<HashModel> {
    let mut g = GaussianSampler::new(seed);
    let w = (0..feature_map.output_dim() * train.bits)
        .map(|_| g.sample())
        .collect();
    HashModel::with_fixed_weights(train, feature_map, w)
}

pub fn eval_options(e: &EvalSettings) -> EvalOptions {
    EvalOptions {
        map: e.metrics.map,
        map_at: e.map_at,
        hamming_radius: e.metrics.ph2.then_some(e.radius),
        precision_at: if e.metrics.pk {
            e.precision_at.clone()
        } else {
            Vec::new()
        },
        pr_curve: e.metrics.pr,
    }
}

/// Query and retrieval features after a model's feature map.
pub struct MappedSets {
    pub query: Vec<f64>,
    pub db: Vec<f64>,
}

pub fn map_sets(feature_map: &FeatureMap, prep: &Prepared) -> Result<MappedSets> {
    Ok(MappedSets {
        query: feature_map.map_rows(&prep.query_rows())?,
        db: feature_map.map_rows(&prep.db_rows())?,
    })
}

/// Encodes both sets with `model` and scores retrieval.
pub fn evaluate_model(
    model: &HashModel,
    sets: &MappedSets,
    query_labels: &[Vec<u32>],
    db_labels: &[Vec<u32>],
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let q = encode_features(model, &sets.query)?;
    let db = encode_features(model, &sets.db)?;
    evaluate(&Retrieval::new(&q, &db, query_labels, db_labels)?, opts)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn flush(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_text_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn save_model(model: &HashModel, path: &Path) -> Result<()> {
    let w = model.write_to(create(path)?)?;
    flush(w, path)
}

pub fn load_model(path: &Path) -> Result<HashModel> {
    let f = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    HashModel::read_from(std::io::BufReader::new(f))
}

pub fn save_codes(codes: &BinaryCodeMatrix, path: &Path) -> Result<()> {
    let w = codes.write_to(create(path)?)?;
    flush(w, path)
}

pub fn load_codes(path: &Path) -> Result<BinaryCodeMatrix> {
    let f = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    BinaryCodeMatrix::read_from(std::io::BufReader::new(f))
}

/// `report.txt`, `report.json` and one CSV per curve.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    make_dir(dir)?;
    let p = dir.join("report.txt");
    let mut w = create(&p)?;
    report.write_text(&mut w)?;
    flush(w, &p)?;
    let p = dir.join("report.json");
    let mut w = create(&p)?;
    report.write_json(&mut w)?;
    writeln!(w).map_err(|e| Error::io("report", e))?;
    flush(w, &p)?;
    if !report.prec_at_k_curve.is_empty() {
        let p = dir.join("precision_at_k.csv");
        let mut w = create(&p)?;
        write_curve_csv(&mut w, ("k", "precision"), &report.prec_at_k_curve)?;
        flush(w, &p)?;
    }
    if !report.pr_curve.is_empty() {
        let p = dir.join("pr.csv");
        let mut w = create(&p)?;
        write_curve_csv(&mut w, ("recall", "precision"), &report.pr_curve)?;
        flush(w, &p)?;
    }
    Ok(())
}

fn log_line(log: &mut dyn Write, file: &mut dyn Write, line: &str) -> Result<()> {
    writeln!(log, "{line}").map_err(|e| Error::io("log", e))?;
    writeln!(file, "{line}").map_err(|e| Error::io("train.log", e))
}

/// Per-round logging and checkpoint snapshots during training.
struct Progress<'a> {
    log: &'a mut dyn Write,
    file: BufWriter<File>,
    every: usize,
    start: Instant,
    window_mistakes: u64,
    window_bits: u64,
    checkpoints: Vec<usize>,
    snapshots: Vec<(usize, HashModel)>,
    error: Option<Error>,
}

impl Progress<'_> {
    fn observe(&mut self, model: &HashModel, info: &StepInfo) {
        if self.error.is_some() {
            return;
        }
        self.window_mistakes += info.mistaken_bits;
        self.window_bits += info.total_bits;
        while let Some(&next) = self.checkpoints.first() {
            if (info.points_seen as usize) < next {
                break;
            }
            self.checkpoints.remove(0);
            match model.snapshot() {
                Ok(s) => self.snapshots.push((info.points_seen as usize, s)),
                Err(e) => self.error = Some(e),
            }
        }
        if self.every > 0 && info.round.is_multiple_of(self.every as u64) {
            let line = format!(
                "round {} points {} mistake_rate {:.4} elapsed {:.2}s",
                info.round,
                info.points_seen,
                self.window_mistakes as f64 / self.window_bits.max(1) as f64,
                self.start.elapsed().as_secs_f64()
            );
            self.window_mistakes = 0;
            self.window_bits = 0;
            if let Err(e) = log_line(self.log, &mut self.file, &line) {
                self.error = Some(e);
            }
        }
    }
}

/// Outcome of a training command.
pub struct TrainOutcome {
    pub model: HashModel,
    pub prepared: Prepared,
    pub snapshots: Vec<(usize, HashModel)>,
    pub seconds: f64,
}

fn run_training(map: &ConfigMap, log: &mut dyn Write) -> Result<(RunConfig, TrainOutcome)> {
    let cfg = map.resolve()?;
    make_dir(&cfg.out)?;
    write_text_file(&cfg.out.join("resolved.conf"), &map.resolved_text()?)?;
    let prepared = prepare(&cfg)?;
    let log_path = cfg.out.join("train.log");
    let mut progress = Progress {
        log,
        file: create(&log_path)?,
        every: cfg.log_every,
        start: Instant::now(),
        window_mistakes: 0,
        window_bits: 0,
        checkpoints: {
            let mut c = cfg.eval.checkpoints.clone();
            c.sort_unstable();
            c
        },
        snapshots: Vec::new(),
        error: None,
    };
    let model = train_model(&cfg, &prepared, |m, i| progress.observe(m, i))?;
    if let Some(e) = progress.error.take() {
        return Err(e);
    }
    let seconds = progress.start.elapsed().as_secs_f64();
    let line = format!(
        "trained {} rounds on {} points in {:.2}s (bits {}, order {}, feature dim {})",
        model.rounds(),
        model.points_seen(),
        seconds,
        model.bits(),
        model.order(),
        model.feature_dim()
    );
    log_line(progress.log, &mut progress.file, &line)?;
    flush(progress.file, &log_path)?;
    save_model(&model, &cfg.out.join("model.hmoh"))?;
    Ok((
        cfg,
        TrainOutcome {
            model,
            prepared,
            snapshots: progress.snapshots,
            seconds,
        },
    ))
}

/// Trains and writes `model.hmoh`, `train.log` and `resolved.conf`.
pub fn cmd_train(map: &ConfigMap, log: &mut dyn Write) -> Result<PathBuf> {
    let (cfg, _) = run_training(map, log)?;
    Ok(cfg.out.join("model.hmoh"))
}

/// Train, encode the query and retrieval sets, and evaluate.
pub fn cmd_run(map: &ConfigMap, log: &mut dyn Write) -> Result<EvalReport> {
    let (cfg, outcome) = run_training(map, log)?;
    let TrainOutcome {
        model,
        prepared,
        snapshots,
        ..
    } = outcome;
    let sets = map_sets(model.feature_map(), &prepared)?;
    let ql = prepared.query_labels();
    let dl = prepared.db_labels();
    let opts = eval_options(&cfg.eval);
    let mut report = evaluate_model(&model, &sets, &ql, &dl, &opts)?;
    if !snapshots.is_empty() {
        let map_opts = EvalOptions {
            map: true,
            map_at: cfg.eval.map_at,
            hamming_radius: None,
            precision_at: Vec::new(),
            pr_curve: false,
        };
        let mut curve = Vec::with_capacity(snapshots.len());
        for (points, snap) in &snapshots {
            let r = evaluate_model(snap, &sets, &ql, &dl, &map_opts)?;
            let v = r.map_at_k.map(|(_, v)| v).or(r.map).unwrap_or(0.0);
            curve.push((*points, v));
        }
        let pts: Vec<(f64, f64)> = curve.iter().map(|&(x, y)| (x as f64, y)).collect();
        report.auc_values.insert("map_curve".into(), auc(&pts)?);
        let p = cfg.out.join("map_curve.csv");
        let mut w = create(&p)?;
        write_curve_csv(&mut w, ("train_points", "map"), &curve)?;
        flush(w, &p)?;
    }
    for (k, v) in map.resolved()?.entries() {
        report.config_echo.insert(k.to_string(), v.to_string());
    }
    save_codes(
        &encode_features(&model, &sets.query)?,
        &cfg.out.join("query_codes.bcmx"),
    )?;
    save_codes(
        &encode_features(&model, &sets.db)?,
        &cfg.out.join("db_codes.bcmx"),
    )?;
    write_report(&cfg.out, &report)?;
    report_summary(log, &report)?;
    Ok(report)
}

fn report_summary(log: &mut dyn Write, report: &EvalReport) -> Result<()> {
    let summary = EvalReport {
        config_echo: Default::default(),
        ..report.clone()
    };
    summary.write_text(log)
}

/// Encodes a feature file with a saved model.
pub fn cmd_encode(
    model: &Path,
    features: &Path,
    format: FeatureFormat,
    normalization: Normalization,
    out: &Path,
) -> Result<BinaryCodeMatrix> {
    let model = load_model(model)?;
    let (x, dim) = data::read_features(format, features)?;
    if dim != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            got: dim,
        });
    }
    let labels = vec![vec![0u32]; x.len().checked_div(dim).unwrap_or(0)];
    let mut d = Dataset::new(x, dim, labels)?;
    d.normalize(normalization);
    let codes = encode(&model, d.features())?;
    save_codes(&codes, out)?;
    Ok(codes)
}

/// Inputs of the standalone evaluation command.
pub struct EvalInputs<'a> {
    pub query_codes: &'a Path,
    pub db_codes: &'a Path,
    pub query_labels: &'a Path,
    pub db_labels: &'a Path,
    pub label_format: FeatureFormat,
    pub settings: EvalSettings,
    pub out: &'a Path,
}

pub fn cmd_eval(inputs: &EvalInputs<'_>, log: &mut dyn Write) -> Result<EvalReport> {
    let q = load_codes(inputs.query_codes)?;
    let db = load_codes(inputs.db_codes)?;
    let ql = data::read_labels(inputs.label_format, inputs.query_labels)?;
    let dl = data::read_labels(inputs.label_format, inputs.db_labels)?;
    let set = Retrieval::new(&q, &db, &ql, &dl)?;
    let report = evaluate(&set, &eval_options(&inputs.settings))?;
    write_report(inputs.out, &report)?;
    report_summary(log, &report)?;
    Ok(report)
}

/// Untrained Gaussian-projection baseline on the configured data.
pub fn cmd_baseline_lsh(map: &ConfigMap, log: &mut dyn Write) -> Result<EvalReport> {
    let cfg = map.resolve()?;
    make_dir(&cfg.out)?;
    let prep = prepare(&cfg)?;
    let fmap = stream_feature_map(&cfg, &prep)?;
    let model = lsh_baseline(&cfg.train, fmap, derive_seed(cfg.seeds.master, 5))?;
    let sets = map_sets(model.feature_map(), &prep)?;
    let mut report = evaluate_model(
        &model,
        &sets,
        &prep.query_labels(),
        &prep.db_labels(),
        &eval_options(&cfg.eval),
    )?;
    for (k, v) in map.resolved()?.entries() {
        report.config_echo.insert(k.to_string(), v.to_string());
    }
    save_model(&model, &cfg.out.join("lsh_baseline.hmoh"))?;
    write_report(&cfg.out.join("lsh_baseline"), &report)?;
    report_summary(log, &report)?;
    Ok(report)
}

/// Mean wall time of one `sgd_step` on synthetic Gaussian data with the
/// given feature dimension, code length and batch size. Data generation is
/// excluded from the timing. Returns the fastest of `repeats` runs.
pub fn step_time(
    dim: usize,
    bits: usize,
    batch: usize,
    steps: usize,
    repeats: usize,
    seed: u64,
) -> Result<f64> {
    let cfg = TrainConfig {
        bits,
        max_labels: 10,
        kernel: KernelConfig {
            enabled: false,
            ..KernelConfig::default()
        },
        batch_size: batch,
        ..TrainConfig::default()
    };
    let mut best = f64::INFINITY;
    for rep in 0..repeats.max(1) {
        let mut model = HashModel::new(&cfg, FeatureMap::Identity { dim })?;
        let mut g = GaussianSampler::new(derive_seed(seed, rep as u64));
        let mut labels = seeded(derive_seed(seed, 1000 + rep as u64));
        let targets: Vec<_> = (0..10u32)
            .map(|l| model.target_for(&[l]))
            .collect::<Result<_>>()?;
        let chunk = 512usize;
        let mut elapsed = 0.0;
        let mut done = 0;
        while done < steps {
            let n = chunk.min(steps - done);
            let work: Vec<(StreamBatch, Vec<_>)> = (0..n)
                .map(|_| {
                    let ls: Vec<u32> = (0..batch).map(|_| labels.random_range(0..10u32)).collect();
                    let feats = (0..batch * dim).map(|_| g.sample()).collect();
                    let t = ls.iter().map(|&l| targets[l as usize].clone()).collect();
                    let sets = ls.iter().map(|&l| vec![l]).collect();
                    StreamBatch::new(feats, dim, sets).map(|b| (b, t))
                })
                .collect::<Result<_>>()?;
            let t0 = Instant::now();
            for (b, t) in &work {
                model.sgd_step(b, t)?;
            }
            elapsed += t0.elapsed().as_secs_f64();
            done += n;
        }
        best = best.min(elapsed / steps as f64);
    }
    Ok(best)
}

/// Timing grid over feature dimension, code length and batch size;
/// writes `bench.csv`.
pub fn cmd_bench(map: &ConfigMap, log: &mut dyn Write) -> Result<Vec<(usize, usize, usize, f64)>> {
    let cfg = map.resolve()?;
    make_dir(&cfg.out)?;
    let b = &cfg.bench;
    if b.dims.is_empty() || b.bits.is_empty() || b.batch.is_empty() || b.steps == 0 {
        return Err(Error::Config("bench grid is empty".into()));
    }
    let p = cfg.out.join("bench.csv");
    let mut w = create(&p)?;
    writeln!(w, "dim,bits,batch,steps,seconds_per_step").map_err(|e| Error::io("bench.csv", e))?;
    let mut rows = Vec::new();
    for &dim in &b.dims {
        for &bits in &b.bits {
            for &batch in &b.batch {
                let t = step_time(dim, bits, batch, b.steps, 3, cfg.seeds.master)?;
                let line = format!("{dim},{bits},{batch},{},{t:.9}", b.steps);
                writeln!(w, "{line}").map_err(|e| Error::io("bench.csv", e))?;
                writeln!(log, "{line}").map_err(|e| Error::io("log", e))?;
                rows.push((dim, bits, batch, t));
            }
        }
    }
    flush(w, &p)?;
    Ok(rows)
}

/// Caps the global worker pool from `HADHASH_THREADS`, if set.
pub fn init_thread_pool() -> Result<()> {
    let Ok(v) = std::env::var("HADHASH_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("HADHASH_THREADS: cannot parse `{v}`")))?;
    // A pool may already exist (e.g. in tests); keep it.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

// Shared by the self-check.
fn random_signs(rng: &mut impl Rng, n: usize) -> Vec<i8> {
    (0..n)
        .map(|_| if rng.random::<bool>() { 1 } else { -1 })
        .collect()
}

fn rng_for(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
