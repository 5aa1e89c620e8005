//! Quick end-to-end checks against naive re-implementations.

use std::io::Write;

use rand::Rng;

use super::{random_signs, rng_for};
use crate::codec::BinaryCodeMatrix;
use crate::error::{Error, Result};
use crate::eval::{mean_average_precision, precision_at_hamming_radius, Retrieval};
use crate::hadamard::{sylvester_matrix, HadamardCodebook, TargetCode, DEFAULT_ORDER_CAP};
use crate::kernelize::FeatureMap;
use crate::projector::Projector;
use crate::trainer::{HashModel, KernelConfig, StreamBatch, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, r: Result<std::result::Result<(), String>>) -> CheckOutcome {
    match r {
        Ok(Ok(())) => CheckOutcome {
            name,
            passed: true,
            detail: String::new(),
        },
        Ok(Err(detail)) => CheckOutcome {
            name,
            passed: false,
            detail,
        },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

type Check = Result<std::result::Result<(), String>>;

fn hadamard_orthogonality() -> Check {
    for k in 1..=8 {
        let n = 1usize << k;
        let h = sylvester_matrix(n, DEFAULT_ORDER_CAP)?;
        for i in 0..n {
            for j in 0..n {
                let dot: i64 = (0..n)
                    .map(|c| (h[i * n + c] as i64) * (h[j * n + c] as i64))
                    .sum();
                let want = if i == j { n as i64 } else { 0 };
                if dot != want {
                    return Ok(Err(format!("order {n}: row {i}·row {j} = {dot}")));
                }
            }
        }
    }
    Ok(Ok(()))
}

fn hamming_vs_naive() -> Check {
    let mut rng = rng_for(11);
    for bits in [8usize, 48, 64, 128] {
        let signs = random_signs(&mut rng, 200 * bits);
        let codes = BinaryCodeMatrix::from_signs(&signs, bits)?;
        for _ in 0..500 {
            let (i, j) = (rng.random_range(0..200), rng.random_range(0..200));
            let naive = (0..bits)
                .filter(|&b| signs[i * bits + b] != signs[j * bits + b])
                .count() as u32;
            if codes.hamming(i, j)? != naive {
                return Ok(Err(format!("{bits} bits, pair ({i},{j})")));
            }
        }
    }
    Ok(Ok(()))
}

fn metrics_vs_naive() -> Check {
    let mut rng = rng_for(12);
    let bits = 16;
    let (nq, nd) = (15, 120);
    let qs = random_signs(&mut rng, nq * bits);
    let ds = random_signs(&mut rng, nd * bits);
    let ql: Vec<Vec<u32>> = (0..nq).map(|_| vec![rng.random_range(0..5)]).collect();
    let dl: Vec<Vec<u32>> = (0..nd).map(|_| vec![rng.random_range(0..5)]).collect();
    let q = BinaryCodeMatrix::from_signs(&qs, bits)?;
    let d = BinaryCodeMatrix::from_signs(&ds, bits)?;
    let set = Retrieval::new(&q, &d, &ql, &dl)?;

    let mut ap_sum = 0.0;
    let mut ball_sum = 0.0;
    for i in 0..nq {
        let mut ranked: Vec<(usize, usize)> = (0..nd)
            .map(|j| {
                let dist = (0..bits)
                    .filter(|&b| qs[i * bits + b] != ds[j * bits + b])
                    .count();
                (dist, j)
            })
            .collect();
        ranked.sort();
        let rel: Vec<bool> = ranked.iter().map(|&(_, j)| dl[j][0] == ql[i][0]).collect();
        let total = rel.iter().filter(|&&r| r).count();
        let mut hits = 0.0;
        let mut s = 0.0;
        for (r, &is_rel) in rel.iter().enumerate() {
            if is_rel {
                hits += 1.0;
                s += hits / (r + 1) as f64;
            }
        }
        ap_sum += if total == 0 { 0.0 } else { s / total as f64 };
        let ball: Vec<bool> = ranked
            .iter()
            .zip(&rel)
            .filter(|((d, _), _)| *d <= 2)
            .map(|(_, &r)| r)
            .collect();
        ball_sum += if ball.is_empty() {
            0.0
        } else {
            ball.iter().filter(|&&r| r).count() as f64 / ball.len() as f64
        };
    }
    let map = mean_average_precision(&set, None)?;
    if (map - ap_sum / nq as f64).abs() > 1e-12 {
        return Ok(Err(format!("mAP {map} vs naive {}", ap_sum / nq as f64)));
    }
    let ph2 = precision_at_hamming_radius(&set, 2)?;
    if (ph2 - ball_sum / nq as f64).abs() > 1e-12 {
        return Ok(Err(format!(
            "precision@h2 {ph2} vs naive {}",
            ball_sum / nq as f64
        )));
    }
    Ok(Ok(()))
}

fn update_vs_dense() -> Check {
    let mut rng = rng_for(13);
    let (dim, bits, n) = (7usize, 8usize, 3usize);
    let cfg = TrainConfig {
        bits,
        max_labels: 8,
        kernel: KernelConfig {
            enabled: false,
            ..KernelConfig::default()
        },
        learning_rate: 0.3,
        batch_size: n,
        ..TrainConfig::default()
    };
    let w0: Vec<f64> = (0..dim * bits)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let mut model = HashModel::with_fixed_weights(&cfg, FeatureMap::Identity { dim }, w0.clone())?;
    let z: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let targets: Vec<TargetCode> = (0..n)
        .map(|_| TargetCode::new(random_signs(&mut rng, bits)))
        .collect::<Result<_>>()?;
    let batch = StreamBatch::new(z.clone(), dim, vec![vec![0]; n])?;
    model.sgd_step(&batch, &targets)?;

    let mut expect = w0.clone();
    for (i, t) in targets.iter().enumerate() {
        for k in 0..bits {
            let score: f64 = (0..dim).map(|f| w0[f * bits + k] * z[i * dim + f]).sum();
            let predicted = if score >= 0.0 { 1 } else { -1 };
            if predicted != t.bits()[k] {
                for f in 0..dim {
                    expect[f * bits + k] += 0.3 * z[i * dim + f] * t.bits()[k] as f64;
                }
            }
        }
    }
    let worst = expect
        .iter()
        .zip(model.weights())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if worst > 1e-12 {
        return Ok(Err(format!("max deviation {worst:e}")));
    }
    Ok(Ok(()))
}

fn projection_balance() -> Check {
    let book = HadamardCodebook::sylvester(256, 0)?;
    let mut total = 0usize;
    let trials = 1000;
    for s in 0..trials {
        let p = Projector::new(256, 64, s as u64)?;
        total += p.project(&book.column(1 + s % 255))?.plus_count();
    }
    let mean = total as f64 / trials as f64;
    // 1000 trials: standard error of the mean is 0.13.
    if (mean - 32.0).abs() > 0.65 {
        return Ok(Err(format!("mean +1 count {mean}")));
    }
    Ok(Ok(()))
}

fn model_round_trip() -> Check {
    let cfg = TrainConfig {
        bits: 16,
        max_labels: 4,
        kernel: KernelConfig {
            enabled: false,
            ..KernelConfig::default()
        },
        ..TrainConfig::default()
    };
    let mut rng = rng_for(14);
    let w: Vec<f64> = (0..5 * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let m = HashModel::with_fixed_weights(&cfg, FeatureMap::Identity { dim: 5 }, w)?;
    let bytes = m.write_to(Vec::new())?;
    let back = HashModel::read_from(&bytes[..])?;
    if back.write_to(Vec::new())? != bytes {
        return Ok(Err("re-serialized bytes differ".into()));
    }
    Ok(Ok(()))
}

/// Runs every check, printing one line each. Returns all outcomes.
pub fn selfcheck(log: &mut dyn Write) -> Result<Vec<CheckOutcome>> {
    let results = vec![
        outcome("hadamard orthogonality", hadamard_orthogonality()),
        outcome("hamming vs naive", hamming_vs_naive()),
        outcome("metrics vs naive", metrics_vs_naive()),
        outcome("update vs dense", update_vs_dense()),
        outcome("projection balance", projection_balance()),
        outcome("model round trip", model_round_trip()),
    ];
    for r in &results {
        let line = if r.passed {
            format!("ok    {}", r.name)
        } else {
            format!("FAIL  {}: {}", r.name, r.detail)
        };
        writeln!(log, "{line}").map_err(|e| Error::io("log", e))?;
    }
    Ok(results)
}
