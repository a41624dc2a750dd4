//! Run configuration and its file format.
//!
//! Config files are TOML restricted to one level of sections:
//!
//! ```toml
//! [tables]
//! rows = [10000, 20000]
//! tt = true
//! row_factors = ["10x10x100", "auto"]
//! ```
//!
//! Every key must sit in a section, and values are scalars or flat arrays.
//! A scalar where a per-table list is expected applies to every table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use ttrec_core::{InitKind, InitSpec, Pooling, RejectionMode, ScalingMode};

use crate::error::{HarnessError, Result};

/// Section -> key -> value, with arrays flattened to comma-separated text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn scalar_text(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(f.to_string()),
        toml::Value::Boolean(b) => Some(b.to_string()),
        _ => None,
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let doc: toml::Table =
            text.parse()
                .map_err(|e: toml::de::Error| HarnessError::ConfigSyntax {
                    line: e.span().map_or(0, |s| line_of(text, s.start)),
                    message: e.message().to_string(),
                })?;
        let shape_err = |message: String| HarnessError::ConfigSyntax { line: 0, message };
        let mut sections = BTreeMap::new();
        for (name, body) in doc {
            let toml::Value::Table(entries) = body else {
                return Err(shape_err(format!("key '{name}' outside any section")));
            };
            let mut flat = BTreeMap::new();
            for (key, value) in entries {
                let text = match &value {
                    toml::Value::Array(items) => items
                        .iter()
                        .map(scalar_text)
                        .collect::<Option<Vec<_>>>()
                        .map(|v| v.join(",")),
                    other => scalar_text(other),
                }
                .ok_or_else(|| {
                    shape_err(format!(
                        "[{name}] {key}: nested tables and arrays are not supported"
                    ))
                })?;
                flat.insert(key, text);
            }
            sections.insert(name, flat);
        }
        Ok(Self { sections })
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) {
        self.sections
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.into());
    }

    pub fn sections(&self) -> impl Iterator<Item = (&str, &BTreeMap<String, String>)> {
        self.sections.iter().map(|(k, v)| (k.as_str(), v))
    }

    fn parsed<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get(section, key)
            .map(|v| {
                v.parse().map_err(|e: T::Err| HarnessError::ConfigValue {
                    section: section.into(),
                    key: key.into(),
                    message: format!("'{v}': {e}"),
                })
            })
            .transpose()
    }

    fn list<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        self.get(section, key)
            .map(|v| {
                parse_list(v).map_err(|message| HarnessError::ConfigValue {
                    section: section.into(),
                    key: key.into(),
                    message,
                })
            })
            .transpose()
    }

    /// Reject sections and keys this program does not read.
    fn check_known(&self) -> Result<()> {
        for (section, entries) in &self.sections {
            let known: &[&str] = match section.as_str() {
                "model" => MODEL_KEYS,
                "tables" => TABLE_KEYS,
                "train" => TRAIN_KEYS,
                "data" => DATA_KEYS,
                other => {
                    return Err(HarnessError::InvalidConfig(format!(
                        "unknown section [{other}]"
                    )))
                }
            };
            if let Some(key) = entries.keys().find(|k| !known.contains(&k.as_str())) {
                return Err(HarnessError::ConfigValue {
                    section: section.clone(),
                    key: key.clone(),
                    message: "unknown key".into(),
                });
            }
        }
        Ok(())
    }
}

pub fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e: T::Err| format!("'{s}': {e}")))
        .collect()
}

const MODEL_KEYS: &[&str] = &[
    "dense_features",
    "emb_dim",
    "bottom_mlp",
    "top_mlp",
    "interaction",
    "micro_batch",
    "threads",
];
const TABLE_KEYS: &[&str] = &[
    "rows",
    "tt",
    "rank",
    "tt_dim",
    "row_factors",
    "cache_pct",
    "cache_decay",
];
const TRAIN_KEYS: &[&str] = &[
    "lr",
    "batch_size",
    "iterations",
    "warmup_fraction",
    "refresh_period",
    "seed",
    "init",
    "scaling",
    "rejection",
    "eval_batches",
    "log_every",
];
const DATA_KEYS: &[&str] = &[
    "source",
    "zipf_s",
    "pooling",
    "pooling_mode",
    "hot_rows",
    "margin",
    "path",
    "hash_size",
    "negative_keep",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interaction {
    /// Bottom output plus all pairwise dot products.
    Dot,
    /// Bottom output and pooled embeddings side by side.
    Concat,
}

impl FromStr for Interaction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dot" => Ok(Self::Dot),
            "concat" => Ok(Self::Concat),
            other => Err(format!("unknown interaction '{other}' (dot, concat)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub rows: u64,
    pub use_tt: bool,
    pub rank: usize,
    pub tt_dim: usize,
    pub row_factors: Option<Vec<usize>>,
    /// Cache capacity as a percentage of rows; 0 disables the cache.
    pub cache_pct: f64,
    pub cache_decay: Option<f64>,
}

impl TableConfig {
    pub fn dense(rows: u64) -> Self {
        Self {
            rows,
            use_tt: false,
            rank: 8,
            tt_dim: 3,
            row_factors: None,
            cache_pct: 0.0,
            cache_decay: None,
        }
    }

    pub fn tt(rows: u64, rank: usize) -> Self {
        Self {
            use_tt: true,
            rank,
            ..Self::dense(rows)
        }
    }

    pub fn cache_capacity(&self) -> usize {
        if self.cache_pct <= 0.0 {
            0
        } else {
            ((self.rows as f64 * self.cache_pct / 100.0).ceil() as usize).max(1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dense_features: usize,
    pub emb_dim: usize,
    pub tables: Vec<TableConfig>,
    /// Bottom MLP layer widths; the last must equal `emb_dim`.
    pub bottom_mlp: Vec<usize>,
    /// Hidden widths of the top MLP; a final width-1 layer is implied.
    pub top_mlp: Vec<usize>,
    pub interaction: Interaction,
    pub micro_batch: usize,
    pub threads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dense_features: 3,
            emb_dim: 16,
            tables: [10_000, 20_000, 50_000, 100_000]
                .into_iter()
                .map(TableConfig::dense)
                .collect(),
            bottom_mlp: vec![16],
            top_mlp: vec![8],
            interaction: Interaction::Dot,
            micro_batch: ttrec_core::embedding::DEFAULT_MICRO_BATCH,
            threads: 1,
        }
    }
}

impl ModelConfig {
    pub fn interaction_dim(&self) -> usize {
        let t = self.tables.len();
        match self.interaction {
            Interaction::Dot => self.emb_dim + (t + 1) * t / 2,
            Interaction::Concat => self.emb_dim * (t + 1),
        }
    }

    /// Switch every table to TT format with the given rank.
    pub fn with_tt(mut self, rank: usize) -> Self {
        for t in &mut self.tables {
            t.use_tt = true;
            t.rank = rank;
        }
        self
    }

    pub fn with_cache_pct(mut self, pct: f64) -> Self {
        for t in &mut self.tables {
            t.cache_pct = pct;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if self.dense_features == 0 || self.emb_dim == 0 {
            return bad("dense_features and emb_dim must be positive".into());
        }
        if self.tables.is_empty() {
            return bad("at least one categorical table is required".into());
        }
        if self.bottom_mlp.last() != Some(&self.emb_dim) {
            return bad(format!(
                "bottom MLP must end at emb_dim {}, got {:?}",
                self.emb_dim, self.bottom_mlp
            ));
        }
        if self.bottom_mlp.iter().chain(&self.top_mlp).any(|&w| w == 0) {
            return bad("MLP widths must be positive".into());
        }
        if self.micro_batch == 0 || self.threads == 0 {
            return bad("micro_batch and threads must be >= 1".into());
        }
        for (i, t) in self.tables.iter().enumerate() {
            if t.rows == 0 {
                return bad(format!("table {i} has no rows"));
            }
            if !(0.0..=100.0).contains(&t.cache_pct) {
                return bad(format!(
                    "table {i}: cache_pct {} outside [0, 100]",
                    t.cache_pct
                ));
            }
            if t.cache_pct > 0.0 && !t.use_tt {
                return bad(format!("table {i}: a row cache needs a TT table"));
            }
            if t.use_tt {
                ttrec_core::plan_shapes(
                    t.rows,
                    self.emb_dim,
                    t.tt_dim,
                    t.rank,
                    t.row_factors.as_deref(),
                    None,
                )
                .map_err(|e| HarnessError::InvalidConfig(format!("table {i}: {e}")))?;
            }
        }
        Ok(())
    }
}

/// Which initializer TT-cores use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TtInit {
    SampledGaussian,
    KlGaussian,
    Uniform,
}

impl FromStr for TtInit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sampled-gaussian" => Ok(Self::SampledGaussian),
            "kl-gaussian" => Ok(Self::KlGaussian),
            "uniform" => Ok(Self::Uniform),
            other => Err(format!(
                "unknown init '{other}' (sampled-gaussian, kl-gaussian, uniform)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub warmup_fraction: f64,
    pub refresh_period: usize,
    pub seed: u64,
    pub tt_init: TtInit,
    pub scaling: ScalingMode,
    pub rejection: RejectionMode,
    /// Held-out batches scored after training.
    pub eval_batches: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            batch_size: 128,
            iterations: 4000,
            warmup_fraction: ttrec_core::cache::DEFAULT_WARMUP_FRACTION,
            refresh_period: ttrec_core::cache::DEFAULT_REFRESH_PERIOD,
            seed: 0,
            tt_init: TtInit::SampledGaussian,
            // Moment-corrected scaling ignores the sum over rank paths, which
            // inflates row variance by R^(d-1) and slows TT training.
            scaling: ScalingMode::RankCorrected,
            rejection: RejectionMode::TwoSided,
            eval_batches: 40,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::InvalidConfig(m));
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be finite and >= 0, got {}", self.lr));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return bad("batch_size and iterations must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad(format!(
                "warmup_fraction {} outside [0, 1)",
                self.warmup_fraction
            ));
        }
        if self.refresh_period == 0 {
            return bad("refresh_period must be >= 1".into());
        }
        Ok(())
    }

    /// Initializer for TT-cores of a table with embedding width `emb_dim`.
    pub fn tt_init_spec(&self, emb_dim: usize) -> InitSpec {
        match self.tt_init {
            TtInit::SampledGaussian => InitSpec {
                kind: InitKind::SampledGaussian {
                    threshold: ttrec_core::init::DEFAULT_THRESHOLD,
                    target_variance: 1.0 / (3.0 * emb_dim as f64),
                    scaling: self.scaling,
                    rejection: self.rejection,
                },
                fan_in: emb_dim,
            },
            TtInit::KlGaussian => InitSpec::kl_gaussian(emb_dim),
            TtInit::Uniform => InitSpec::uniform_default(emb_dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataConfig {
    Synthetic(SyntheticConfig),
    Criteo(CriteoConfig),
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic(SyntheticConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    /// Zipf exponent; 0 draws rows uniformly.
    pub zipf_s: f64,
    /// Lookups per sample per table.
    pub pooling: usize,
    pub pooling_mode: Pooling,
    /// Rows per table that carry teacher signal, in popularity order.
    pub hot_rows: usize,
    /// Samples whose teacher logit is within this distance of 0 are redrawn.
    pub margin: f64,
    /// Keep probability for negatives; 1 keeps all.
    pub negative_keep: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            zipf_s: 1.05,
            pooling: 1,
            pooling_mode: Pooling::Sum,
            hot_rows: 50,
            margin: 0.5,
            negative_keep: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteoConfig {
    pub path: String,
    /// Hash buckets per categorical column, one value or one per column.
    pub hash_sizes: Vec<u64>,
    pub negative_keep: f64,
}

/// Everything one training run needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

fn bool_list(v: &[String], n: usize) -> std::result::Result<Vec<bool>, String> {
    let parse = |s: &str| match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("'{other}' is not a boolean")),
    };
    match v {
        [one] if one == "all" => Ok(vec![true; n]),
        [one] if one == "none" => Ok(vec![false; n]),
        [one] => Ok(vec![parse(one)?; n]),
        many if many.len() == n => many.iter().map(|s| parse(s)).collect(),
        many => Err(format!("{} values for {n} tables", many.len())),
    }
}

/// One value for every table, or exactly one per table.
fn broadcast<T: Clone>(v: Vec<T>, n: usize, section: &str, key: &str) -> Result<Vec<T>> {
    match v.len() {
        1 => Ok(vec![v[0].clone(); n]),
        len if len == n => Ok(v),
        len => Err(HarnessError::ConfigValue {
            section: section.into(),
            key: key.into(),
            message: format!("{len} values for {n} tables"),
        }),
    }
}

impl RunConfig {
    pub fn from_file(file: &ConfigFile) -> Result<Self> {
        file.check_known()?;
        let mut cfg = RunConfig::default();

        let m = &mut cfg.model;
        if let Some(v) = file.parsed("model", "dense_features")? {
            m.dense_features = v;
        }
        if let Some(v) = file.parsed("model", "emb_dim")? {
            m.emb_dim = v;
        }
        if let Some(v) = file.list("model", "bottom_mlp")? {
            m.bottom_mlp = v;
        } else {
            m.bottom_mlp = vec![m.emb_dim];
        }
        if let Some(v) = file.list("model", "top_mlp")? {
            m.top_mlp = v;
        }
        if let Some(v) = file.parsed("model", "interaction")? {
            m.interaction = v;
        }
        if let Some(v) = file.parsed("model", "micro_batch")? {
            m.micro_batch = v;
        }
        if let Some(v) = file.parsed("model", "threads")? {
            m.threads = v;
        }

        if let Some(rows) = file.list::<u64>("tables", "rows")? {
            m.tables = rows.into_iter().map(TableConfig::dense).collect();
        }
        let n = m.tables.len();
        if let Some(v) = file.list::<String>("tables", "tt")? {
            let flags = bool_list(&v, n).map_err(|message| HarnessError::ConfigValue {
                section: "tables".into(),
                key: "tt".into(),
                message,
            })?;
            for (t, f) in m.tables.iter_mut().zip(flags) {
                t.use_tt = f;
            }
        }
        if let Some(v) = file.list::<usize>("tables", "rank")? {
            for (t, r) in m.tables.iter_mut().zip(broadcast(v, n, "tables", "rank")?) {
                t.rank = r;
            }
        }
        if let Some(v) = file.list::<usize>("tables", "tt_dim")? {
            for (t, d) in m
                .tables
                .iter_mut()
                .zip(broadcast(v, n, "tables", "tt_dim")?)
            {
                t.tt_dim = d;
            }
        }
        if let Some(v) = file.get("tables", "row_factors") {
            // `a x b x c` or `auto` per table
            let per_table: Vec<&str> = v.split(',').map(str::trim).collect();
            if per_table.len() != n {
                return Err(HarnessError::ConfigValue {
                    section: "tables".into(),
                    key: "row_factors".into(),
                    message: format!("{} entries for {n} tables", per_table.len()),
                });
            }
            for (t, spec) in m.tables.iter_mut().zip(per_table) {
                if spec == "auto" {
                    continue;
                }
                let factors: Vec<usize> =
                    parse_list(&spec.replace('x', ",")).map_err(|message| {
                        HarnessError::ConfigValue {
                            section: "tables".into(),
                            key: "row_factors".into(),
                            message,
                        }
                    })?;
                t.row_factors = Some(factors);
            }
        }
        if let Some(v) = file.list::<f64>("tables", "cache_pct")? {
            for (t, p) in m
                .tables
                .iter_mut()
                .zip(broadcast(v, n, "tables", "cache_pct")?)
            {
                t.cache_pct = p;
            }
        }
        if let Some(v) = file.parsed::<f64>("tables", "cache_decay")? {
            for t in &mut m.tables {
                t.cache_decay = Some(v);
            }
        }

        let t = &mut cfg.train;
        if let Some(v) = file.parsed("train", "lr")? {
            t.lr = v;
        }
        if let Some(v) = file.parsed("train", "batch_size")? {
            t.batch_size = v;
        }
        if let Some(v) = file.parsed("train", "iterations")? {
            t.iterations = v;
        }
        if let Some(v) = file.parsed("train", "warmup_fraction")? {
            t.warmup_fraction = v;
        }
        if let Some(v) = file.parsed("train", "refresh_period")? {
            t.refresh_period = v;
        }
        if let Some(v) = file.parsed("train", "seed")? {
            t.seed = v;
        }
        if let Some(v) = file.parsed("train", "init")? {
            t.tt_init = v;
        }
        if let Some(v) = file.parsed::<ScalingMode>("train", "scaling")? {
            t.scaling = v;
        }
        if let Some(v) = file.parsed::<RejectionMode>("train", "rejection")? {
            t.rejection = v;
        }
        if let Some(v) = file.parsed("train", "eval_batches")? {
            t.eval_batches = v;
        }
        if let Some(v) = file.parsed("train", "log_every")? {
            t.log_every = v;
        }

        let source = file.get("data", "source").unwrap_or("synthetic");
        let negative_keep = file.parsed::<f64>("data", "negative_keep")?.unwrap_or(1.0);
        cfg.data = match source {
            "synthetic" => {
                let mut s = SyntheticConfig {
                    negative_keep,
                    ..SyntheticConfig::default()
                };
                if let Some(v) = file.parsed("data", "zipf_s")? {
                    s.zipf_s = v;
                }
                if let Some(v) = file.parsed("data", "pooling")? {
                    s.pooling = v;
                }
                if let Some(v) = file.parsed::<Pooling>("data", "pooling_mode")? {
                    s.pooling_mode = v;
                }
                if let Some(v) = file.parsed("data", "hot_rows")? {
                    s.hot_rows = v;
                }
                if let Some(v) = file.parsed("data", "margin")? {
                    s.margin = v;
                }
                DataConfig::Synthetic(s)
            }
            "criteo" => {
                let path = file
                    .get("data", "path")
                    .ok_or_else(|| {
                        HarnessError::InvalidConfig("[data] source = criteo needs a path".into())
                    })?
                    .to_string();
                let hash_sizes = file
                    .list("data", "hash_size")?
                    .unwrap_or_else(|| vec![1 << 20]);
                DataConfig::Criteo(CriteoConfig {
                    path,
                    hash_sizes,
                    negative_keep,
                })
            }
            other => {
                return Err(HarnessError::ConfigValue {
                    section: "data".into(),
                    key: "source".into(),
                    message: format!("unknown source '{other}' (synthetic, criteo)"),
                })
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_file(&ConfigFile::parse(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        match &self.data {
            DataConfig::Synthetic(s) => {
                if !(s.zipf_s >= 0.0 && s.zipf_s.is_finite()) || s.pooling == 0 {
                    return Err(HarnessError::InvalidConfig(
                        "zipf_s must be >= 0 and pooling >= 1".into(),
                    ));
                }
                if !(s.negative_keep > 0.0 && s.negative_keep <= 1.0) {
                    return Err(HarnessError::InvalidConfig(
                        "negative_keep must be in (0, 1]".into(),
                    ));
                }
            }
            DataConfig::Criteo(c) => {
                if c.hash_sizes.len() != 1 && c.hash_sizes.len() != self.model.tables.len() {
                    return Err(HarnessError::InvalidConfig(format!(
                        "{} hash sizes for {} tables",
                        c.hash_sizes.len(),
                        self.model.tables.len()
                    )));
                }
                if c.hash_sizes.iter().any(|&h| h < 2) {
                    return Err(HarnessError::InvalidConfig(
                        "hash sizes must be >= 2".into(),
                    ));
                }
                if !(c.negative_keep > 0.0 && c.negative_keep <= 1.0) {
                    return Err(HarnessError::InvalidConfig(
                        "negative_keep must be in (0, 1]".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}
