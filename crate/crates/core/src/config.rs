//! Run configuration: a flat `section.key = value` text format, overridable
//! by command-line flags, echoed verbatim into every output directory.

use std::path::{Path, PathBuf};

use crate::dataset::{RatingsFormat, SplitConfig};
use crate::embedding::EmbeddingConfig;
use crate::error::{Error, Result};
use crate::mlp::MlpConfig;
use crate::pco::{Basis, LogBase};
use crate::profiles::Aggregation;

/// Which end-to-end pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Co-occurrence embeddings scored by the trained network.
    GemRankMlp,
    /// Co-occurrence embeddings scored by cosine similarity.
    GemRankSimple,
    /// Direct user-item interest factorization, scored by the network.
    UserItemMf,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::GemRankMlp => "gemrank-mlp",
            Variant::GemRankSimple => "gemrank-simple",
            Variant::UserItemMf => "user-item-mf",
        }
    }

    /// Row label used in reports.
    pub fn label(self, basis: Basis) -> String {
        match self {
            Variant::GemRankMlp => format!("{}-based", basis.as_str()),
            Variant::GemRankSimple => "simple".to_string(),
            Variant::UserItemMf => "user-item".to_string(),
        }
    }

    pub fn uses_mlp(self) -> bool {
        !matches!(self, Variant::GemRankSimple)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gemrank-mlp" => Ok(Variant::GemRankMlp),
            "gemrank-simple" => Ok(Variant::GemRankSimple),
            "user-item-mf" => Ok(Variant::UserItemMf),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected gemrank-mlp, gemrank-simple, or user-item-mf)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset_path: Option<PathBuf>,
    pub format: RatingsFormat,
    pub basis: Basis,
    pub variant: Variant,
    pub split: SplitConfig,
    pub embedding: EmbeddingConfig,
    pub mlp: MlpConfig,
    pub aggregation: Aggregation,
    pub normalize_aggregates: bool,
    pub n_values: Vec<usize>,
    pub repetitions: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_path: None,
            format: RatingsFormat::default(),
            basis: Basis::ItemBased,
            variant: Variant::GemRankMlp,
            split: SplitConfig::default(),
            embedding: EmbeddingConfig::default(),
            mlp: MlpConfig::default(),
            aggregation: Aggregation::RateCentered,
            normalize_aggregates: false,
            n_values: vec![5, 10],
            repetitions: 5,
            out_dir: PathBuf::from("out"),
            seed: 0,
            threads: 1,
        }
    }
}

fn parse_list(value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad list entry `{t}`")))
        })
        .collect()
}

fn unescape_delimiter(value: &str) -> String {
    value.replace("\\t", "\t")
}

fn escape_delimiter(value: &str) -> String {
    value.replace('\t', "\\t")
}

impl RunConfig {
    /// Parse the flat config format: one `key = value` per line, `#` for
    /// comment lines, blank lines ignored.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", line_no + 1))
            })?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", line_no + 1)))?;
        }
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_text(&text)
    }

    /// Apply a single key. Flags funnel through here too, so overrides and
    /// file values cannot drift apart.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad_value = |what: &str| Error::Config(format!("bad {what} value `{value}`"));
        match key {
            "dataset.path" => self.dataset_path = Some(PathBuf::from(value)),
            "dataset.delimiter" => self.format.delimiter = unescape_delimiter(value),
            "dataset.r_max" => {
                self.format.r_max = value.parse().map_err(|_| bad_value("dataset.r_max"))?
            }
            "basis" => self.basis = value.parse()?,
            "variant" => self.variant = value.parse()?,
            "seed" => self.seed = value.parse().map_err(|_| bad_value("seed"))?,
            "out" => self.out_dir = PathBuf::from(value),
            "threads" => {
                self.threads = value.parse().map_err(|_| bad_value("threads"))?;
                if self.threads == 0 {
                    return Err(Error::Config("threads must be >= 1".into()));
                }
            }
            "repetitions" => {
                self.repetitions = value.parse().map_err(|_| bad_value("repetitions"))?;
                if self.repetitions == 0 {
                    return Err(Error::Config("repetitions must be >= 1".into()));
                }
            }
            "split.upl" => self.split.upl = value.parse().map_err(|_| bad_value("split.upl"))?,
            "split.min_test_items" => {
                self.split.min_test_items =
                    value.parse().map_err(|_| bad_value("split.min_test_items"))?
            }
            "embedding.dim" => {
                self.embedding.dim = value.parse().map_err(|_| bad_value("embedding.dim"))?
            }
            "embedding.learning_rate" => {
                self.embedding.learning_rate = value
                    .parse()
                    .map_err(|_| bad_value("embedding.learning_rate"))?
            }
            "embedding.epochs" => {
                self.embedding.epochs =
                    value.parse().map_err(|_| bad_value("embedding.epochs"))?
            }
            "embedding.init_scale" => {
                self.embedding.init_scale =
                    value.parse().map_err(|_| bad_value("embedding.init_scale"))?
            }
            "embedding.zero_pair_samples_per_entity" => {
                self.embedding.zero_pair_samples_per_entity = value
                    .parse()
                    .map_err(|_| bad_value("embedding.zero_pair_samples_per_entity"))?
            }
            "embedding.representation" => {
                self.embedding.representation_mode = value.parse()?
            }
            "embedding.log_base" => {
                self.embedding.log_base = match value {
                    "natural" => LogBase::Natural,
                    "base2" => LogBase::Base2,
                    _ => return Err(bad_value("embedding.log_base")),
                }
            }
            "aggregation" => self.aggregation = value.parse()?,
            "normalize" => {
                self.normalize_aggregates =
                    value.parse().map_err(|_| bad_value("normalize"))?
            }
            "mlp.hidden_candidates" => self.mlp.hidden_candidates = parse_list(value)?,
            "mlp.dropout_rate" => {
                self.mlp.dropout_rate =
                    value.parse().map_err(|_| bad_value("mlp.dropout_rate"))?
            }
            "mlp.learning_rate" => {
                self.mlp.learning_rate =
                    value.parse().map_err(|_| bad_value("mlp.learning_rate"))?
            }
            "mlp.epochs" => {
                self.mlp.epochs = value.parse().map_err(|_| bad_value("mlp.epochs"))?
            }
            "mlp.validation_fraction" => {
                self.mlp.validation_fraction = value
                    .parse()
                    .map_err(|_| bad_value("mlp.validation_fraction"))?
            }
            "mlp.loss" => self.mlp.loss = value.parse()?,
            "mlp.batch_size" => {
                self.mlp.batch_size =
                    value.parse().map_err(|_| bad_value("mlp.batch_size"))?
            }
            "mlp.optimizer" => self.mlp.optimizer = value.parse()?,
            "mlp.lr_decay" => {
                self.mlp.lr_decay = value.parse().map_err(|_| bad_value("mlp.lr_decay"))?
            }
            "eval.n_values" => self.n_values = parse_list(value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Canonical flat rendering; parsing it back yields the same config.
    pub fn to_flat_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        if let Some(p) = &self.dataset_path {
            kv("dataset.path", p.display().to_string());
        }
        kv("dataset.delimiter", escape_delimiter(&self.format.delimiter));
        kv("dataset.r_max", self.format.r_max.to_string());
        kv("basis", self.basis.as_str().to_string());
        kv("variant", self.variant.as_str().to_string());
        kv("seed", self.seed.to_string());
        kv("out", self.out_dir.display().to_string());
        kv("threads", self.threads.to_string());
        kv("repetitions", self.repetitions.to_string());
        kv("split.upl", self.split.upl.to_string());
        kv("split.min_test_items", self.split.min_test_items.to_string());
        kv("embedding.dim", self.embedding.dim.to_string());
        kv(
            "embedding.learning_rate",
            self.embedding.learning_rate.to_string(),
        );
        kv("embedding.epochs", self.embedding.epochs.to_string());
        kv("embedding.init_scale", self.embedding.init_scale.to_string());
        kv(
            "embedding.zero_pair_samples_per_entity",
            self.embedding.zero_pair_samples_per_entity.to_string(),
        );
        kv(
            "embedding.representation",
            self.embedding.representation_mode.as_str().to_string(),
        );
        kv(
            "embedding.log_base",
            match self.embedding.log_base {
                LogBase::Natural => "natural".to_string(),
                LogBase::Base2 => "base2".to_string(),
            },
        );
        kv("aggregation", self.aggregation.as_str().to_string());
        kv("normalize", self.normalize_aggregates.to_string());
        kv(
            "mlp.hidden_candidates",
            self.mlp
                .hidden_candidates
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        kv("mlp.dropout_rate", self.mlp.dropout_rate.to_string());
        kv("mlp.learning_rate", self.mlp.learning_rate.to_string());
        kv("mlp.epochs", self.mlp.epochs.to_string());
        kv(
            "mlp.validation_fraction",
            self.mlp.validation_fraction.to_string(),
        );
        kv("mlp.loss", self.mlp.loss.as_str().to_string());
        kv("mlp.batch_size", self.mlp.batch_size.to_string());
        kv("mlp.lr_decay", self.mlp.lr_decay.to_string());
        kv("mlp.optimizer", self.mlp.optimizer.as_str().to_string());
        kv(
            "eval.n_values",
            self.n_values
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        s
    }

    /// Locate the rating log: the configured path if it exists, otherwise
    /// relative to `GEMRANK_DATA_DIR`; with no configured path at all,
    /// `GEMRANK_DATA_DIR` itself (a file) or `GEMRANK_DATA_DIR/u.data`.
    pub fn resolve_dataset_path(&self) -> Result<PathBuf> {
        let env_dir = std::env::var_os("GEMRANK_DATA_DIR").map(PathBuf::from);
        if let Some(path) = &self.dataset_path {
            if path.exists() {
                return Ok(path.clone());
            }
            if path.is_relative() {
                if let Some(dir) = &env_dir {
                    let joined = dir.join(path);
                    if joined.exists() {
                        return Ok(joined);
                    }
                }
            }
            return Err(Error::Config(format!(
                "dataset path `{}` not found (also tried GEMRANK_DATA_DIR)",
                path.display()
            )));
        }
        if let Some(dir) = &env_dir {
            if dir.is_file() {
                return Ok(dir.clone());
            }
            let joined = dir.join("u.data");
            if joined.exists() {
                return Ok(joined);
            }
        }
        Err(Error::Config(
            "no dataset.path configured and GEMRANK_DATA_DIR does not point to data".into(),
        ))
    }

    /// Representation-mode and normalization options for aggregation.
    pub fn aggregate_options(&self) -> crate::profiles::AggregateOptions {
        crate::profiles::AggregateOptions {
            representation: self.embedding.representation_mode,
            normalize: self.normalize_aggregates,
        }
    }
}
