//! Streaming training loop.
//!
//! Each hash bit is a perceptron fitting one bit of the item's target code.
//! Per batch the current weights score every point, the mistaken bits form a
//! 0/1 mask `A`, and the weights move by `λ · Z (c̃ ⊙ A)ᵀ`. After every
//! batch the new weights are added to a running sum; the final model is that
//! sum divided by the number of rounds.

use std::collections::HashMap;
use std::io::{Read, Write};

use rayon::prelude::*;

use crate::binio::{version_check, LeReader, LeWriter};
use crate::error::{Error, Result};
use crate::hadamard::{target_order, HadamardCodebook, TargetCode, DEFAULT_ORDER_CAP};
use crate::kernelize::{collect_anchors, AnchorSet, Centering, FeatureMap};
use crate::projector::Projector;

const MODEL_MAGIC: &[u8; 4] = b"HMOH";
const MODEL_VERSION: u32 = 1;

/// Which bits of the mask `A` are set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    /// `a_k = 1` when bit `k` is predicted wrongly (perceptron rule).
    #[default]
    Mistake,
    /// `a_k = 1` when bit `k` is predicted correctly.
    Correct,
}

impl MaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskMode::Mistake => "mistake",
            MaskMode::Correct => "correct",
        }
    }
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mistake" => Ok(MaskMode::Mistake),
            "correct" => Ok(MaskMode::Correct),
            _ => Err(Error::Config(format!("unknown mask mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub enabled: bool,
    pub anchors: usize,
    /// RBF bandwidth `η²`.
    pub bandwidth: f64,
    pub centering: Centering,
}

impl KernelConfig {
    /// `m = 0` switches kernelization off.
    pub fn active(&self) -> bool {
        self.enabled && self.anchors > 0
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            anchors: 300,
            bandwidth: 10.0,
            centering: Centering::AnchorMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub bits: usize,
    pub max_labels: usize,
    pub kernel: KernelConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub codebook_seed: u64,
    pub projector_seed: u64,
    pub mask_mode: MaskMode,
    pub order_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            bits: 32,
            max_labels: 10,
            kernel: KernelConfig::default(),
            learning_rate: 0.1,
            batch_size: 1,
            codebook_seed: 0,
            projector_seed: 1,
            mask_mode: MaskMode::Mistake,
            order_cap: DEFAULT_ORDER_CAP,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 {
            return Err(Error::Config("bits must be at least 1".into()));
        }
        if self.max_labels == 0 {
            return Err(Error::Config("max_labels must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.kernel.active()
            && !(self.kernel.bandwidth > 0.0 && self.kernel.bandwidth.is_finite())
        {
            return Err(Error::InvalidBandwidth(self.kernel.bandwidth));
        }
        Ok(())
    }
}

/// One raw streaming item.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
}

impl AsRef<[f64]> for Sample {
    fn as_ref(&self) -> &[f64] {
        &self.features
    }
}

/// `n_t` points already in the model's feature space, with their label sets.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamBatch {
    features: Vec<f64>,
    dim: usize,
    label_sets: Vec<Vec<u32>>,
}

impl StreamBatch {
    pub fn new(features: Vec<f64>, dim: usize, label_sets: Vec<Vec<u32>>) -> Result<Self> {
        if label_sets.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if features.len() != dim * label_sets.len() {
            return Err(Error::DimensionMismatch {
                expected: dim * label_sets.len(),
                got: features.len(),
            });
        }
        Ok(Self {
            features,
            dim,
            label_sets,
        })
    }

    pub fn len(&self) -> usize {
        self.label_sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label_sets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label_sets(&self) -> &[Vec<u32>] {
        &self.label_sets
    }
}

/// 0/1 mask of mistaken bits, `sign(0) = +1`.
pub fn mistake_mask(scores: &[f64], target: &[i8]) -> Result<Vec<u8>> {
    bit_mask(MaskMode::Mistake, scores, target)
}

pub fn bit_mask(mode: MaskMode, scores: &[f64], target: &[i8]) -> Result<Vec<u8>> {
    if scores.len() != target.len() {
        return Err(Error::LengthMismatch {
            expected: target.len(),
            got: scores.len(),
        });
    }
    Ok(scores
        .iter()
        .zip(target)
        .map(|(&s, &t)| {
            let predicted = if s >= 0.0 { 1 } else { -1 };
            let wrong = predicted != t;
            match mode {
                MaskMode::Mistake => wrong as u8,
                MaskMode::Correct => (!wrong) as u8,
            }
        })
        .collect())
}

/// Weight of each round in the ensemble: uniform `1/T`.
pub fn ensemble_weights(rounds: u64) -> Result<f64> {
    if rounds == 0 {
        return Err(Error::ZeroRounds);
    }
    Ok(1.0 / rounds as f64)
}

/// Row-major `Z W` for `n` rows of dimension `dim` and `W` of shape
/// `dim × bits`.
pub fn project_rows(w: &[f64], dim: usize, bits: usize, z: &[f64]) -> Result<Vec<f64>> {
    if w.len() != dim * bits {
        return Err(Error::DimensionMismatch {
            expected: dim * bits,
            got: w.len(),
        });
    }
    if dim == 0 || !z.len().is_multiple_of(dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: z.len() % dim.max(1),
        });
    }
    let n = z.len() / dim;
    let mut out = vec![0.0; n * bits];
    out.par_chunks_mut(bits)
        .zip(z.par_chunks(dim))
        .for_each(|(s, row)| scores_into(w, bits, row, s));
    Ok(out)
}

fn scores_into(w: &[f64], bits: usize, z: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for (wrow, &zf) in w.chunks_exact(bits).zip(z) {
        if zf == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(wrow) {
            *o += wv * zf;
        }
    }
}

/// Counters reported after each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepInfo {
    pub round: u64,
    pub points_seen: u64,
    pub mistaken_bits: u64,
    pub total_bits: u64,
}

#[derive(Debug, Clone)]
pub struct HashModel {
    weights: Vec<f64>,
    weight_sum: Vec<f64>,
    rounds: u64,
    points_seen: u64,
    feature_map: FeatureMap,
    projector: Projector,
    codebook: HadamardCodebook,
    learning_rate: f64,
    batch_size: usize,
    mask_mode: MaskMode,
    targets: HashMap<Vec<u32>, TargetCode>,
    final_weights: Option<Vec<f64>>,
}

impl HashModel {
    /// Zero-initialized model for the given feature map.
    pub fn new(config: &TrainConfig, feature_map: FeatureMap) -> Result<Self> {
        config.validate()?;
        let order = target_order(config.bits, config.max_labels);
        let codebook =
            HadamardCodebook::sylvester_with_cap(order, config.codebook_seed, config.order_cap)?;
        let projector = Projector::new(order, config.bits, config.projector_seed)?;
        let shape = feature_map.output_dim() * config.bits;
        Ok(Self {
            weights: vec![0.0; shape],
            weight_sum: vec![0.0; shape],
            rounds: 0,
            points_seen: 0,
            feature_map,
            projector,
            codebook,
            learning_rate: config.learning_rate,
            batch_size: config.batch_size,
            mask_mode: config.mask_mode,
            targets: HashMap::new(),
            final_weights: None,
        })
    }

    pub fn bits(&self) -> usize {
        self.projector.bits()
    }

    pub fn order(&self) -> usize {
        self.codebook.order()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_map.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.feature_map.input_dim()
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn points_seen(&self) -> u64 {
        self.points_seen
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn mask_mode(&self) -> MaskMode {
        self.mask_mode
    }

    pub fn feature_map(&self) -> &FeatureMap {
        &self.feature_map
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn codebook(&self) -> &HadamardCodebook {
        &self.codebook
    }

    /// Current-round weights `W^t`, row-major `feature_dim × bits`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_sum(&self) -> &[f64] {
        &self.weight_sum
    }

    pub fn final_weights(&self) -> Option<&[f64]> {
        self.final_weights.as_deref()
    }

    /// `Wᵀ z` with the current-round weights.
    pub fn predict_scores(&self, z: &[f64]) -> Result<Vec<f64>> {
        let dim = self.feature_dim();
        if z.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: z.len(),
            });
        }
        let mut out = vec![0.0; self.bits()];
        scores_into(&self.weights, self.bits(), z, &mut out);
        Ok(out)
    }

    /// Projected `r`-bit target for a label set, cached per distinct set.
    pub fn target_for(&mut self, labels: &[u32]) -> Result<TargetCode> {
        let mut key = labels.to_vec();
        key.sort_unstable();
        key.dedup();
        if let Some(t) = self.targets.get(&key) {
            return Ok(t.clone());
        }
        let code = match key.as_slice() {
            [] => return Err(Error::EmptyLabelSet),
            [single] => self.codebook.assign_column(*single)?,
            many => self.codebook.fuse_multilabel(many)?,
        };
        let projected = self.projector.project(&code)?;
        self.targets.insert(key, projected.clone());
        Ok(projected)
    }

    /// One SGD step on `Φ`: `W ← W + λ·Z(c̃ ⊙ A)ᵀ`, then `W_sum += W`.
    ///
    /// The mask is computed for every point from the weights as they were
    /// before this step. Returns the number of mistaken bits in the batch.
    pub fn sgd_step(&mut self, batch: &StreamBatch, targets: &[TargetCode]) -> Result<u64> {
        let dim = self.feature_dim();
        let bits = self.bits();
        if batch.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: batch.dim(),
            });
        }
        if targets.len() != batch.len() {
            return Err(Error::LengthMismatch {
                expected: batch.len(),
                got: targets.len(),
            });
        }
        let mut mistakes = 0u64;
        let mut coeffs: Vec<(usize, Vec<f64>)> = Vec::with_capacity(batch.len());
        let mut scores = vec![0.0; bits];
        for (i, target) in targets.iter().enumerate() {
            if target.len() != bits {
                return Err(Error::LengthMismatch {
                    expected: bits,
                    got: target.len(),
                });
            }
            scores_into(&self.weights, bits, batch.point(i), &mut scores);
            let wrong = mistake_mask(&scores, target.bits())?;
            mistakes += wrong.iter().map(|&m| m as u64).sum::<u64>();
            let mask = match self.mask_mode {
                MaskMode::Mistake => wrong,
                MaskMode::Correct => wrong.iter().map(|&m| 1 - m).collect(),
            };
            if mask.iter().any(|&m| m != 0) {
                let g = target
                    .bits()
                    .iter()
                    .zip(&mask)
                    .map(|(&c, &a)| (c as f64) * (a as f64))
                    .collect();
                coeffs.push((i, g));
            }
        }
        let lr = self.learning_rate;
        for (i, g) in &coeffs {
            for (wrow, &zf) in self.weights.chunks_exact_mut(bits).zip(batch.point(*i)) {
                let step = lr * zf;
                for (w, gk) in wrow.iter_mut().zip(g) {
                    *w += step * gk;
                }
            }
        }
        for (s, w) in self.weight_sum.iter_mut().zip(&self.weights) {
            *s += w;
        }
        self.rounds += 1;
        self.points_seen += batch.len() as u64;
        self.final_weights = None;
        Ok(mistakes)
    }

    /// Maps raw samples through the feature map, resolves their targets and
    /// applies one [`sgd_step`](Self::sgd_step).
    pub fn train_samples(&mut self, samples: &[Sample]) -> Result<StepInfo> {
        if samples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let dim = self.feature_dim();
        let mut features = vec![0.0; samples.len() * dim];
        let mut targets = Vec::with_capacity(samples.len());
        for (s, out) in samples.iter().zip(features.chunks_exact_mut(dim)) {
            self.feature_map.map_into(&s.features, out)?;
            targets.push(self.target_for(&s.labels)?);
        }
        let labels = samples.iter().map(|s| s.labels.clone()).collect();
        let batch = StreamBatch::new(features, dim, labels)?;
        let mistaken_bits = self.sgd_step(&batch, &targets)?;
        Ok(StepInfo {
            round: self.rounds,
            points_seen: self.points_seen,
            mistaken_bits,
            total_bits: (samples.len() * self.bits()) as u64,
        })
    }

    /// `W_final = W_sum / T`.
    pub fn finalize(&mut self) -> Result<()> {
        let scale = ensemble_weights(self.rounds)?;
        self.final_weights = Some(self.weight_sum.iter().map(|s| s * scale).collect());
        Ok(())
    }

    /// Finalized copy of the model as it stands now.
    pub fn snapshot(&self) -> Result<HashModel> {
        let mut m = self.clone();
        m.finalize()?;
        Ok(m)
    }

    /// Copy whose final weights are the last-round `W^T` alone, without
    /// ensembling.
    pub fn last_round(&self) -> Result<HashModel> {
        if self.rounds == 0 {
            return Err(Error::ZeroRounds);
        }
        let mut m = self.clone();
        m.final_weights = Some(self.weights.clone());
        Ok(m)
    }

    /// Finalized model with the given (untrained) projection matrix, for
    /// random-projection baselines.
    pub fn with_fixed_weights(
        config: &TrainConfig,
        feature_map: FeatureMap,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let mut m = Self::new(config, feature_map)?;
        if weights.len() != m.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: m.weights.len(),
                got: weights.len(),
            });
        }
        m.weights = weights.clone();
        m.final_weights = Some(weights);
        Ok(m)
    }

    /// Writes the finalized model: header, `W_final`, anchors, projector and
    /// codebook sidecars.
    pub fn write_to<W: Write>(&self, w: W) -> Result<W> {
        let fin = self
            .final_weights
            .as_ref()
            .ok_or(Error::ModelNotFinalized)?;
        let mut w = LeWriter::new(w);
        w.bytes(MODEL_MAGIC)?;
        w.u32(MODEL_VERSION)?;
        w.u32(self.bits() as u32)?;
        w.u32(self.order() as u32)?;
        w.u32(self.feature_dim() as u32)?;
        w.u32(self.input_dim() as u32)?;
        let (flag, centering, bandwidth) = match &self.feature_map {
            FeatureMap::Identity { .. } => (0u8, 0u8, 0.0),
            FeatureMap::Rbf {
                anchors, centering, ..
            } => (
                1,
                match centering {
                    Centering::None => 0,
                    Centering::AnchorMean => 1,
                },
                anchors.bandwidth(),
            ),
        };
        w.u8(flag)?;
        w.u8(centering)?;
        w.u8(match self.mask_mode {
            MaskMode::Mistake => 0,
            MaskMode::Correct => 1,
        })?;
        w.f64(bandwidth)?;
        w.f64(self.learning_rate)?;
        w.u32(self.batch_size as u32)?;
        w.u64(self.codebook.seed())?;
        w.u64(self.projector.seed())?;
        w.u64(self.rounds)?;
        w.u64(self.points_seen)?;
        w.f64_slice(fin)?;
        if let Some(anchors) = self.feature_map.anchors() {
            w.f64_slice(anchors.points())?;
        }
        let inner = w.into_inner();
        let inner = self.projector.write_to(inner)?;
        self.codebook.write_sidecar(inner)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = LeReader::new(r, "model file");
        r.magic(MODEL_MAGIC)?;
        version_check("model file", r.u32()?, MODEL_VERSION)?;
        let bits = r.u32()? as usize;
        let order = r.u32()? as usize;
        let feature_dim = r.u32()? as usize;
        let input_dim = r.u32()? as usize;
        let kernel = r.u8()?;
        let centering = match r.u8()? {
            0 => Centering::None,
            1 => Centering::AnchorMean,
            other => return Err(Error::Malformed(format!("centering byte {other}"))),
        };
        let mask_mode = match r.u8()? {
            0 => MaskMode::Mistake,
            1 => MaskMode::Correct,
            other => return Err(Error::Malformed(format!("mask mode byte {other}"))),
        };
        let bandwidth = r.f64()?;
        let learning_rate = r.f64()?;
        let batch_size = r.u32()? as usize;
        let _codebook_seed = r.u64()?;
        let _projector_seed = r.u64()?;
        let rounds = r.u64()?;
        let points_seen = r.u64()?;
        let fin = r.f64_vec(feature_dim * bits)?;
        let feature_map = match kernel {
            0 => FeatureMap::Identity { dim: input_dim },
            1 => {
                let points = r.f64_vec(feature_dim * input_dim)?;
                FeatureMap::rbf(AnchorSet::new(points, input_dim, bandwidth)?, centering)
            }
            other => return Err(Error::Malformed(format!("kernel flag {other}"))),
        };
        if feature_map.output_dim() != feature_dim {
            return Err(Error::Malformed(
                "feature dimension disagrees with anchors".into(),
            ));
        }
        let inner = r.into_inner();
        let (projector, inner) = Projector::read_from(inner)?;
        let (codebook, inner) =
            HadamardCodebook::read_sidecar(inner, DEFAULT_ORDER_CAP.max(order))?;
        if projector.bits() != bits || projector.order() != order || codebook.order() != order {
            return Err(Error::Malformed(
                "sidecar dimensions disagree with header".into(),
            ));
        }
        LeReader::new(inner, "model file").at_eof()?;
        Ok(Self {
            weights: fin.clone(),
            weight_sum: vec![0.0; fin.len()],
            rounds,
            points_seen,
            feature_map,
            projector,
            codebook,
            learning_rate,
            batch_size,
            mask_mode,
            targets: HashMap::new(),
            final_weights: Some(fin),
        })
    }
}

/// Trains on a stream of raw samples.
///
/// With the kernel enabled the first `m` samples become anchors and are not
/// trained on. The rest are consumed once, in order, in batches of
/// `batch_size`.
pub fn train_stream<I>(config: &TrainConfig, stream: I) -> Result<HashModel>
where
    I: IntoIterator<Item = Sample>,
{
    train_stream_with(config, stream, |_, _| {})
}

/// As [`train_stream`], calling `observer` after every round.
pub fn train_stream_with<I, F>(
    config: &TrainConfig,
    stream: I,
    mut observer: F,
) -> Result<HashModel>
where
    I: IntoIterator<Item = Sample>,
    F: FnMut(&HashModel, &StepInfo),
{
    config.validate()?;
    let mut it = stream.into_iter().peekable();
    let feature_map = if config.kernel.active() {
        let anchors = collect_anchors(&mut it, config.kernel.anchors, config.kernel.bandwidth)?;
        FeatureMap::rbf(anchors, config.kernel.centering)
    } else {
        let dim = it
            .peek()
            .map(|s| s.features.len())
            .ok_or(Error::EmptyStream)?;
        FeatureMap::Identity { dim }
    };
    let mut model = HashModel::new(config, feature_map)?;
    let mut batch = Vec::with_capacity(config.batch_size);
    loop {
        batch.clear();
        batch.extend(it.by_ref().take(config.batch_size));
        if batch.is_empty() {
            break;
        }
        let info = model.train_samples(&batch)?;
        observer(&model, &info);
    }
    if model.rounds == 0 {
        return Err(Error::EmptyStream);
    }
    model.finalize()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_config(bits: usize) -> TrainConfig {
        TrainConfig {
            bits,
            max_labels: 4,
            kernel: KernelConfig {
                enabled: false,
                ..KernelConfig::default()
            },
            learning_rate: 0.5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_weights_give_zero_scores() {
        let m = HashModel::new(&linear_config(4), FeatureMap::Identity { dim: 3 }).unwrap();
        assert_eq!(m.predict_scores(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 4]);
        assert!(matches!(
            m.predict_scores(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 1
            })
        ));
    }

    #[test]
    fn identity_block_scores_unit_vector() {
        let mut w = vec![0.0; 3 * 4];
        for i in 0..3 {
            w[i * 4 + i] = 1.0;
        }
        let m =
            HashModel::with_fixed_weights(&linear_config(4), FeatureMap::Identity { dim: 3 }, w)
                .unwrap();
        assert_eq!(
            m.predict_scores(&[1.0, 0.0, 0.0]).unwrap(),
            vec![1.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn mask_cases() {
        assert_eq!(
            mistake_mask(&[0.5, -0.2, 0.0], &[1, 1, -1]).unwrap(),
            vec![0, 1, 1]
        );
        assert_eq!(mistake_mask(&[2.0, -1.0], &[1, -1]).unwrap(), vec![0, 0]);
        assert_eq!(mistake_mask(&[-2.0, 1.0], &[1, -1]).unwrap(), vec![1, 1]);
        assert_eq!(
            bit_mask(MaskMode::Correct, &[0.5, -0.2, 0.0], &[1, 1, -1]).unwrap(),
            vec![1, 0, 0]
        );
        assert!(matches!(
            mistake_mask(&[1.0], &[1, 1]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ensemble_weights_are_uniform() {
        assert_eq!(ensemble_weights(1).unwrap(), 1.0);
        assert_eq!(ensemble_weights(4).unwrap(), 0.25);
        assert!(matches!(ensemble_weights(0), Err(Error::ZeroRounds)));
    }

    #[test]
    fn all_correct_batch_leaves_weights_and_accumulates() {
        let cfg = linear_config(2);
        let mut w = vec![0.0; 2 * 2];
        w[0] = 1.0; // bit 0 follows feature 0
        w[3] = -1.0; // bit 1 is minus feature 1
        let mut m = HashModel::with_fixed_weights(&cfg, FeatureMap::Identity { dim: 2 }, w.clone())
            .unwrap();
        let batch = StreamBatch::new(vec![1.0, 1.0], 2, vec![vec![0]]).unwrap();
        let target = TargetCode::new(vec![1, -1]).unwrap();
        let mistakes = m.sgd_step(&batch, &[target]).unwrap();
        assert_eq!(mistakes, 0);
        assert_eq!(m.weights(), w.as_slice());
        assert_eq!(m.weight_sum(), w.as_slice());
        assert_eq!(m.rounds(), 1);
    }

    #[test]
    fn single_mistaken_bit_moves_one_column() {
        let cfg = linear_config(2);
        let mut w = vec![0.0; 3 * 2];
        w[1] = 0.3; // bit 1 already positive on feature 0
        w[0] = -1.0; // bit 0 negative on feature 0
        let mut m = HashModel::with_fixed_weights(&cfg, FeatureMap::Identity { dim: 3 }, w.clone())
            .unwrap();
        let z = [2.0, 0.5, -1.0];
        let batch = StreamBatch::new(z.to_vec(), 3, vec![vec![0]]).unwrap();
        m.sgd_step(&batch, &[TargetCode::new(vec![1, 1]).unwrap()])
            .unwrap();
        for f in 0..3 {
            assert_eq!(m.weights()[f * 2], w[f * 2] + 0.5 * z[f]);
            assert_eq!(m.weights()[f * 2 + 1], w[f * 2 + 1]);
        }
    }

    #[test]
    fn wrong_target_count_is_rejected() {
        let mut m = HashModel::new(&linear_config(2), FeatureMap::Identity { dim: 2 }).unwrap();
        let batch = StreamBatch::new(vec![1.0, 1.0], 2, vec![vec![0]]).unwrap();
        assert!(matches!(
            m.sgd_step(&batch, &[]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            StreamBatch::new(vec![], 2, vec![]),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn finalize_averages_snapshots() {
        let cfg = linear_config(2);
        let mut m = HashModel::new(&cfg, FeatureMap::Identity { dim: 2 }).unwrap();
        assert!(matches!(m.finalize(), Err(Error::ZeroRounds)));
        let t = TargetCode::new(vec![-1, 1]).unwrap();
        let batch = StreamBatch::new(vec![1.0, 2.0], 2, vec![vec![0]]).unwrap();
        m.sgd_step(&batch, std::slice::from_ref(&t)).unwrap();
        let w1 = m.weights().to_vec();
        m.sgd_step(&batch, &[t]).unwrap();
        let w2 = m.weights().to_vec();
        m.finalize().unwrap();
        let fin = m.final_weights().unwrap();
        for k in 0..4 {
            assert!((fin[k] - (w1[k] + w2[k]) / 2.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn targets_are_cached_and_projected_to_bits() {
        let mut cfg = linear_config(8);
        cfg.max_labels = 20;
        let mut m = HashModel::new(&cfg, FeatureMap::Identity { dim: 2 }).unwrap();
        assert_eq!(m.order(), 32);
        let a = m.target_for(&[3]).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(m.target_for(&[3]).unwrap(), a);
        assert_eq!(
            m.target_for(&[5, 3]).unwrap(),
            m.target_for(&[3, 5, 5]).unwrap()
        );
        assert!(matches!(m.target_for(&[]), Err(Error::EmptyLabelSet)));
    }

    #[test]
    fn empty_streams_error() {
        let cfg = linear_config(4);
        assert!(matches!(
            train_stream(&cfg, Vec::<Sample>::new()),
            Err(Error::EmptyStream)
        ));
        let mut kcfg = cfg.clone();
        kcfg.kernel = KernelConfig {
            enabled: true,
            anchors: 2,
            bandwidth: 1.0,
            centering: Centering::None,
        };
        let two = vec![
            Sample {
                features: vec![0.0],
                labels: vec![0],
            },
            Sample {
                features: vec![1.0],
                labels: vec![1],
            },
        ];
        assert!(matches!(train_stream(&kcfg, two), Err(Error::EmptyStream)));
    }

    #[test]
    fn model_file_round_trip_is_byte_exact() {
        let mut cfg = linear_config(8);
        cfg.kernel = KernelConfig {
            enabled: true,
            anchors: 3,
            bandwidth: 2.0,
            centering: Centering::AnchorMean,
        };
        cfg.max_labels = 16;
        let stream: Vec<Sample> = (0..40)
            .map(|i| Sample {
                features: vec![(i % 7) as f64, (i % 3) as f64 * 0.5],
                labels: vec![(i % 5) as u32],
            })
            .collect();
        let m = train_stream(&cfg, stream).unwrap();
        let bytes = m.write_to(Vec::new()).unwrap();
        assert_eq!(&bytes[..4], b"HMOH");
        let back = HashModel::read_from(&bytes[..]).unwrap();
        assert_eq!(back.write_to(Vec::new()).unwrap(), bytes);
        assert_eq!(back.final_weights(), m.final_weights());
        let mut truncated = bytes.clone();
        truncated.truncate(bytes.len() - 3);
        assert!(HashModel::read_from(&truncated[..]).is_err());
    }

    #[test]
    fn unfinalized_model_cannot_be_written() {
        let m = HashModel::new(&linear_config(2), FeatureMap::Identity { dim: 2 }).unwrap();
        assert!(matches!(
            m.write_to(Vec::new()),
            Err(Error::ModelNotFinalized)
        ));
    }
}
