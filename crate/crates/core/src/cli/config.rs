//! Run configuration: a `key = value` text file plus overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DatasetSpec, FeatureFormat, Normalization, QuerySplit, SplitSpec};
use crate::error::{Error, Result};
use crate::hadamard::DEFAULT_ORDER_CAP;
use crate::kernelize::Centering;
use crate::rng::derive_seed;
use crate::trainer::{KernelConfig, MaskMode, TrainConfig};

const DEFAULTS: &[(&str, &str)] = &[
    ("dataset.format", "idx"),
    ("dataset.features", ""),
    ("dataset.labels", ""),
    ("dataset.normalization", "none"),
    ("split.query", "per-class:100"),
    ("split.train", "all"),
    ("bits", "32"),
    ("max_labels", "10"),
    ("kernel", "on"),
    ("kernel.anchors", "300"),
    ("kernel.bandwidth", "10"),
    ("kernel.centering", "anchor-mean"),
    ("learning_rate", "0.1"),
    ("batch_size", "1"),
    ("mask_mode", "mistake"),
    ("seed", "0"),
    ("seed.split", "auto"),
    ("seed.stream", "auto"),
    ("seed.codebook", "auto"),
    ("seed.projector", "auto"),
    ("out", "runs/default"),
    ("eval.metrics", "map,ph2"),
    ("eval.map_at", "none"),
    ("eval.radius", "2"),
    ("eval.precision_at", "100,500,1000"),
    ("eval.checkpoints", "none"),
    ("bench.dims", "256,512,1024"),
    ("bench.bits", "32"),
    ("bench.batch", "1"),
    ("bench.steps", "20000"),
    ("log_every", "1000"),
];

/// Raw key-value settings, defaults filled in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl Default for ConfigMap {
    fn default() -> Self {
        Self {
            values: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            out.set(k.trim(), v.trim())?;
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key `{key}`"))),
        }
    }

    /// `key=value` form used on the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        let v = self.get(key);
        if v == "none" || v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{t}`")))
            })
            .collect()
    }

    fn paths(&self, key: &str) -> Vec<PathBuf> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(PathBuf::from)
            .collect()
    }

    fn seed(&self, key: &str, master: u64, stream: u64) -> Result<u64> {
        match self.get(key) {
            "auto" => Ok(derive_seed(master, stream)),
            _ => self.parsed(key),
        }
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let on_off = |key: &str| match self.get(key) {
            "on" | "true" | "yes" => Ok(true),
            "off" | "false" | "no" => Ok(false),
            other => Err(Error::Config(format!(
                "`{key}`: expected on|off, got `{other}`"
            ))),
        };
        let query = match self.get("split.query").split_once(':') {
            Some(("per-class", n)) => QuerySplit::PerClass(parse_usize("split.query", n)?),
            Some(("count", n)) => QuerySplit::Count(parse_usize("split.query", n)?),
            _ => {
                return Err(Error::Config(format!(
                    "`split.query`: expected per-class:N or count:N, got `{}`",
                    self.get("split.query")
                )))
            }
        };
        let train_count = match self.get("split.train") {
            "all" => None,
            n => Some(parse_usize("split.train", n)?),
        };
        let master: u64 = self.parsed("seed")?;
        let seeds = Seeds {
            master,
            split: self.seed("seed.split", master, 1)?,
            stream: self.seed("seed.stream", master, 2)?,
            codebook: self.seed("seed.codebook", master, 3)?,
            projector: self.seed("seed.projector", master, 4)?,
        };
        let train = TrainConfig {
            bits: self.parsed("bits")?,
            max_labels: self.parsed("max_labels")?,
            kernel: KernelConfig {
                enabled: on_off("kernel")?,
                anchors: self.parsed("kernel.anchors")?,
                bandwidth: self.parsed("kernel.bandwidth")?,
                centering: self.parsed::<Centering>("kernel.centering")?,
            },
            learning_rate: self.parsed("learning_rate")?,
            batch_size: self.parsed("batch_size")?,
            codebook_seed: seeds.codebook,
            projector_seed: seeds.projector,
            mask_mode: self.parsed::<MaskMode>("mask_mode")?,
            order_cap: DEFAULT_ORDER_CAP,
        };
        train.validate()?;
        if train.learning_rate == 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        let map_at = match self.get("eval.map_at") {
            "none" => None,
            n => Some(parse_usize("eval.map_at", n)?),
        };
        let metrics = Metrics::parse(self.get("eval.metrics"))?;
        let cfg = RunConfig {
            dataset: DatasetSpec {
                format: self.parsed::<FeatureFormat>("dataset.format")?,
                features: self.paths("dataset.features"),
                labels: self.paths("dataset.labels"),
                normalization: self.parsed::<Normalization>("dataset.normalization")?,
                split: SplitSpec { query, train_count },
            },
            train,
            seeds,
            out: PathBuf::from(self.get("out")),
            eval: EvalSettings {
                metrics,
                map_at,
                radius: self.parsed("eval.radius")?,
                precision_at: self.list("eval.precision_at")?,
                checkpoints: self.list("eval.checkpoints")?,
            },
            bench: BenchSettings {
                dims: self.list("bench.dims")?,
                bits: self.list("bench.bits")?,
                batch: self.list("bench.batch")?,
                steps: self.parsed("bench.steps")?,
            },
            log_every: self.parsed("log_every")?,
        };
        Ok(cfg)
    }

    /// Copy with derived seeds written out.
    pub fn resolved(&self) -> Result<ConfigMap> {
        let cfg = self.resolve()?;
        let mut out = self.clone();
        out.set("seed.split", &cfg.seeds.split.to_string())?;
        out.set("seed.stream", &cfg.seeds.stream.to_string())?;
        out.set("seed.codebook", &cfg.seeds.codebook.to_string())?;
        out.set("seed.projector", &cfg.seeds.projector.to_string())?;
        Ok(out)
    }

    /// [`resolved`](Self::resolved) settings, one `key = value` per line.
    pub fn resolved_text(&self) -> Result<String> {
        Ok(self
            .resolved()?
            .entries()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect())
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub master: u64,
    pub split: u64,
    pub stream: u64,
    pub codebook: u64,
    pub projector: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Metrics {
    pub map: bool,
    pub ph2: bool,
    pub pk: bool,
    pub pr: bool,
}

impl Metrics {
    pub fn parse(list: &str) -> Result<Self> {
        let mut m = Metrics::default();
        for t in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match t {
                "map" => m.map = true,
                "ph2" => m.ph2 = true,
                "pk" => m.pk = true,
                "pr" => m.pr = true,
                _ => return Err(Error::Config(format!("unknown metric `{t}`"))),
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub metrics: Metrics,
    pub map_at: Option<usize>,
    pub radius: u32,
    pub precision_at: Vec<usize>,
    /// Training-set sizes at which a snapshot is evaluated.
    pub checkpoints: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSettings {
    pub dims: Vec<usize>,
    pub bits: Vec<usize>,
    pub batch: Vec<usize>,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub seeds: Seeds,
    pub out: PathBuf,
    pub eval: EvalSettings,
    pub bench: BenchSettings,
    pub log_every: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let cfg = ConfigMap::default().resolve().unwrap();
        assert_eq!(cfg.train.bits, 32);
        assert!(cfg.train.kernel.enabled);
        assert_eq!(cfg.dataset.split.query, QuerySplit::PerClass(100));
        assert_eq!(cfg.seeds.stream, derive_seed(0, 2));
        assert!(cfg.eval.metrics.map && cfg.eval.metrics.ph2 && !cfg.eval.metrics.pr);
    }

    #[test]
    fn file_and_overrides() {
        let mut m =
            ConfigMap::parse("# comment\nbits = 64\nkernel = off  # trailing\nseed.stream = 7\n")
                .unwrap();
        m.set_pair("learning_rate=0.5").unwrap();
        let cfg = m.resolve().unwrap();
        assert_eq!(cfg.train.bits, 64);
        assert!(!cfg.train.kernel.enabled);
        assert_eq!(cfg.seeds.stream, 7);
        assert_eq!(cfg.train.learning_rate, 0.5);
        let echo = m.resolved_text().unwrap();
        assert!(echo.contains("seed.stream = 7\n"));
        assert!(echo.contains(&format!("seed.split = {}\n", derive_seed(0, 1))));
    }

    #[test]
    fn bad_inputs() {
        assert!(ConfigMap::parse("nonsense").is_err());
        assert!(ConfigMap::parse("colour = red").is_err());
        let m = ConfigMap::parse("bits = lots").unwrap();
        assert!(matches!(m.resolve(), Err(Error::Config(_))));
        let m = ConfigMap::parse("learning_rate = 0").unwrap();
        assert!(m.resolve().is_err());
        let m = ConfigMap::parse("split.query = half").unwrap();
        assert!(m.resolve().is_err());
        let m = ConfigMap::parse("eval.metrics = map,ndcg").unwrap();
        assert!(m.resolve().is_err());
    }
}
