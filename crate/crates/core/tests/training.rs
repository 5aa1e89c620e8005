use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hadhash::codec::{encode, BinaryCodeMatrix};
use hadhash::hadamard::{HadamardCodebook, TargetCode};
use hadhash::kernelize::FeatureMap;
use hadhash::projector::Projector;
use hadhash::trainer::{
    mistake_mask, train_stream, train_stream_with, HashModel, KernelConfig, Sample, StreamBatch,
    TrainConfig,
};

fn linear(bits: usize, lr: f64, batch: usize) -> TrainConfig {
    TrainConfig {
        bits,
        max_labels: 4,
        kernel: KernelConfig {
            enabled: false,
            ..KernelConfig::default()
        },
        learning_rate: lr,
        batch_size: batch,
        ..TrainConfig::default()
    }
}

fn signs(rng: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    (0..n)
        .map(|_| if rng.random::<bool>() { 1 } else { -1 })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn samples(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: u32) -> Vec<Sample> {
    (0..n)
        .map(|_| Sample {
            features: uniform(rng, dim),
            labels: vec![rng.random_range(0..classes)],
        })
        .collect()
}

#[test]
fn scores_match_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let dim = rng.random_range(1..30);
        let bits = rng.random_range(1..40);
        let w = uniform(&mut rng, dim * bits);
        let z = uniform(&mut rng, dim);
        let m = HashModel::with_fixed_weights(
            &linear(bits, 0.1, 1),
            FeatureMap::Identity { dim },
            w.clone(),
        )
        .unwrap();
        let got = m.predict_scores(&z).unwrap();
        for k in 0..bits {
            let mut s = 0.0;
            for f in 0..dim {
                s += w[f * bits + k] * z[f];
            }
            assert!((got[k] - s).abs() <= 1e-12);
        }
    }
}

#[test]
fn one_batch_from_zero_moves_minus_one_bits_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (dim, bits, n, lr) = (5, 8, 3, 0.25);
    let stream = samples(&mut rng, n, dim, 4);
    let model = train_stream(&linear(bits, lr, n), stream.clone()).unwrap();
    assert_eq!(model.rounds(), 1);

    // Zero scores read as +1, so exactly the -1 target bits are mistaken.
    let mut probe = HashModel::new(&linear(bits, lr, n), FeatureMap::Identity { dim }).unwrap();
    let mut expect = vec![0.0; dim * bits];
    for s in &stream {
        let t = probe.target_for(&s.labels).unwrap();
        for k in 0..bits {
            if t.bits()[k] == -1 {
                for f in 0..dim {
                    expect[f * bits + k] -= lr * s.features[f];
                }
            }
        }
    }
    let got = model.final_weights().unwrap();
    for (a, b) in got.iter().zip(&expect) {
        assert!((a - b).abs() <= 1e-15);
    }
}

#[test]
fn accumulator_equals_sum_of_recorded_snapshots() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (dim, bits) = (6, 16);
    let stream = samples(&mut rng, 40, dim, 4);
    let mut trace: Vec<Vec<f64>> = Vec::new();
    let model = train_stream_with(&linear(bits, 0.3, 3), stream, |m, _| {
        trace.push(m.weights().to_vec())
    })
    .unwrap();
    assert_eq!(trace.len() as u64, model.rounds());
    let mut sum = vec![0.0; dim * bits];
    for w in &trace {
        for (s, x) in sum.iter_mut().zip(w) {
            *s += x;
        }
    }
    for (a, b) in model.weight_sum().iter().zip(&sum) {
        assert!((a - b).abs() <= 1e-12);
    }
    let t = trace.len() as f64;
    for (f, s) in model.final_weights().unwrap().iter().zip(&sum) {
        assert!((f - s / t).abs() <= 1e-12);
    }
}

#[test]
fn zero_learning_rate_stays_at_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = train_stream(&linear(8, 0.0, 2), samples(&mut rng, 30, 4, 3)).unwrap();
    assert!(model.final_weights().unwrap().iter().all(|&w| w == 0.0));
}

#[test]
fn replaying_a_point_never_adds_mistakes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for lr in [0.01, 0.1] {
        for _ in 0..200 {
            let (dim, bits) = (rng.random_range(2..12), rng.random_range(2..24));
            let mut m = HashModel::with_fixed_weights(
                &linear(bits, lr, 1),
                FeatureMap::Identity { dim },
                uniform(&mut rng, dim * bits),
            )
            .unwrap();
            let batch = StreamBatch::new(uniform(&mut rng, dim), dim, vec![vec![0]]).unwrap();
            let target = vec![TargetCode::new(signs(&mut rng, bits)).unwrap()];
            let before = m.sgd_step(&batch, &target).unwrap();
            let after = m.sgd_step(&batch, &target).unwrap();
            assert!(after <= before, "lr {lr}: {before} -> {after}");
        }
    }
}

#[test]
fn separable_stream_converges_within_perceptron_bound() {
    // Every point has a unit first coordinate, so w_k = c_k e_0 separates
    // each bit with margin 1 and the mistake count per bit is at most R².
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (dim, bits) = (6, 8);
    let points: Vec<Vec<f64>> = (0..50)
        .map(|_| {
            let mut p = uniform(&mut rng, dim);
            p[0] = 1.0;
            p
        })
        .collect();
    let r2 = points
        .iter()
        .map(|p| p.iter().map(|x| x * x).sum::<f64>())
        .fold(0.0, f64::max);
    let mut m = HashModel::new(&linear(bits, 0.5, 1), FeatureMap::Identity { dim }).unwrap();
    let target = m.target_for(&[2]).unwrap();
    let mut per_bit = vec![0u32; bits];
    let mut last_epoch = u64::MAX;
    for _ in 0..100 {
        last_epoch = 0;
        for p in &points {
            let mask = mistake_mask(&m.predict_scores(p).unwrap(), target.bits()).unwrap();
            for (c, &a) in per_bit.iter_mut().zip(&mask) {
                *c += a as u32;
            }
            let batch = StreamBatch::new(p.clone(), dim, vec![vec![2]]).unwrap();
            last_epoch += m.sgd_step(&batch, std::slice::from_ref(&target)).unwrap();
        }
    }
    assert_eq!(last_epoch, 0);
    for c in per_bit {
        assert!(c as f64 <= r2, "{c} mistakes, bound {r2}");
    }
}

#[test]
fn same_seed_same_model_bytes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let stream = samples(&mut rng, 200, 10, 5);
    let cfg = TrainConfig {
        bits: 12,
        max_labels: 5,
        kernel: KernelConfig {
            anchors: 20,
            bandwidth: 2.0,
            ..KernelConfig::default()
        },
        ..TrainConfig::default()
    };
    let a = train_stream(&cfg, stream.clone()).unwrap();
    let b = train_stream(&cfg, stream).unwrap();
    assert_eq!(
        a.write_to(Vec::new()).unwrap(),
        b.write_to(Vec::new()).unwrap()
    );
}

#[test]
fn encoding_matches_dense_signs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (dim, bits, n) = (7, 20, 30);
    let w = uniform(&mut rng, dim * bits);
    let m = HashModel::with_fixed_weights(
        &linear(bits, 0.1, 1),
        FeatureMap::Identity { dim },
        w.clone(),
    )
    .unwrap();
    let x = uniform(&mut rng, n * dim);
    let codes = encode(&m, &x).unwrap().unpack();
    for i in 0..n {
        for k in 0..bits {
            let s: f64 = (0..dim).map(|f| w[f * bits + k] * x[i * dim + f]).sum();
            assert_eq!(codes[i * bits + k], if s >= 0.0 { 1 } else { -1 });
        }
    }
}

#[test]
fn hand_scores_pack_to_alternating_byte() {
    let c =
        BinaryCodeMatrix::from_scores(&[1.0, -2.0, 3.0, -4.0, 5.0, -6.0, 7.0, -8.0], 8).unwrap();
    assert_eq!(c.code(0), &[0b0101_0101]);
}

#[test]
fn projected_label_codes_stay_distinct() {
    let seeds = 1000;
    let mut distinct = 0;
    for s in 0..seeds {
        let mut book = HadamardCodebook::sylvester(256, s).unwrap();
        let p = Projector::new(256, 64, s + 10_000).unwrap();
        let mut codes: Vec<Vec<i8>> = (0..10)
            .map(|l| {
                p.project(&book.assign_column(l).unwrap())
                    .unwrap()
                    .into_bits()
            })
            .collect();
        codes.sort();
        codes.dedup();
        distinct += (codes.len() == 10) as u32;
    }
    assert!(distinct as f64 >= 0.99 * seeds as f64, "{distinct}/{seeds}");
}
