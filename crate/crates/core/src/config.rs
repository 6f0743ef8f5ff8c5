//! Run configuration, read from a small TOML document:
//!
//! ```toml
//! output_dir = "out"
//! seed = 42
//! resolution = 8
//! cuts = [3, 9]
//! normalization = "pooled"
//!
//! [train]
//! epochs = 200
//! batch_size = 32
//! learning_rate = 0.001
//! optimizer = "adam"
//! shuffle = true
//!
//! [[city]]
//! city_id = "wroclaw"
//! gtfs = "feeds/wroclaw.zip"
//! population = 640000
//! date = "auto"
//! boundary = "wroclaw.geojson"
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Deserialize;
use thiserror::Error;

use crate::autoencoder::{Optimizer, TrainConfig};
use crate::gtfs::ValidationConfig;
use crate::region::DEFAULT_RESOLUTION;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceDateSpec {
    /// First Wednesday with service in the feed's calendar span.
    Auto,
    Fixed(NaiveDate),
}

impl ServiceDateSpec {
    pub fn parse(s: &str) -> Option<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Some(ServiceDateSpec::Auto);
        }
        NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().map(ServiceDateSpec::Fixed)
    }
}

/// Scaling of the feature blocks. Only one statistic pool exists: all
/// regions of all included cities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizationMode {
    #[default]
    Pooled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CityConfig {
    pub city_id: String,
    pub gtfs: PathBuf,
    pub population: u64,
    pub date: ServiceDateSpec,
    /// GeoJSON polygon(s); when set, stop-free cells inside are kept as
    /// all-zero regions.
    pub boundary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub cities: Vec<CityConfig>,
    pub resolution: u8,
    pub normalization: NormalizationMode,
    /// `train.seed` is ignored by the pipeline; it derives the training seed
    /// from `seed`.
    pub train: TrainConfig,
    pub cuts: Vec<usize>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub validation: ValidationConfig,
}

impl RunConfig {
    pub fn new(cities: Vec<CityConfig>, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            cities,
            resolution: DEFAULT_RESOLUTION,
            normalization: NormalizationMode::Pooled,
            train: TrainConfig::default(),
            cuts: vec![3, 9],
            output_dir: output_dir.into(),
            seed: 42,
            validation: ValidationConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.cities.is_empty() {
            return bad("no cities configured".into());
        }
        let mut seen = BTreeSet::new();
        for c in &self.cities {
            if c.city_id.is_empty() || c.city_id.contains([':', ',', '/', '\\']) {
                return bad(format!("city_id `{}` must be non-empty without `:`, `,` or path separators", c.city_id));
            }
            if !seen.insert(c.city_id.as_str()) {
                return bad(format!("duplicate city_id `{}`", c.city_id));
            }
        }
        if self.resolution > 15 {
            return bad(format!("resolution {} outside 0..=15", self.resolution));
        }
        if self.cuts.is_empty() || self.cuts.contains(&0) {
            return bad("cuts must be a non-empty list of values >= 1".into());
        }
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 || !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return bad("train needs epochs >= 1, batch_size >= 1 and learning_rate > 0".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        raw.into_config(base_dir)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_toml(&text, base)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    output_dir: Option<String>,
    seed: Option<u64>,
    resolution: Option<u8>,
    cuts: Option<Vec<usize>>,
    normalization: Option<String>,
    train: Option<RawTrain>,
    validation: Option<RawValidation>,
    #[serde(default)]
    city: Vec<RawCity>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    optimizer: Option<String>,
    shuffle: Option<bool>,
    parallel: Option<bool>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawValidation {
    min_routes: Option<usize>,
    min_population: Option<u64>,
    max_extent_km: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCity {
    city_id: String,
    gtfs: String,
    population: u64,
    date: Option<String>,
    boundary: Option<String>,
}

impl RawConfig {
    fn into_config(self, base: &Path) -> Result<RunConfig, ConfigError> {
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() { p } else { base.join(p) }
        };
        let mut cities = Vec::with_capacity(self.city.len());
        for c in self.city {
            let date = match c.date.as_deref() {
                None => ServiceDateSpec::Auto,
                Some(d) => ServiceDateSpec::parse(d)
                    .ok_or_else(|| ConfigError::Invalid(format!("city `{}`: date `{d}` is neither auto nor YYYY-MM-DD", c.city_id)))?,
            };
            cities.push(CityConfig {
                gtfs: resolve(&c.gtfs),
                boundary: c.boundary.as_deref().map(resolve),
                city_id: c.city_id,
                population: c.population,
                date,
            });
        }
        let mut cfg = RunConfig::new(cities, resolve(self.output_dir.as_deref().unwrap_or("gtfs2vec-out")));
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.resolution {
            cfg.resolution = r;
        }
        if let Some(c) = self.cuts {
            cfg.cuts = c;
        }
        match self.normalization.as_deref() {
            None | Some("pooled") => {}
            Some(other) => return Err(ConfigError::Invalid(format!("unknown normalization `{other}` (expected pooled)"))),
        }
        if let Some(t) = self.train {
            let tc = &mut cfg.train;
            tc.epochs = t.epochs.unwrap_or(tc.epochs);
            tc.batch_size = t.batch_size.unwrap_or(tc.batch_size);
            tc.learning_rate = t.learning_rate.unwrap_or(tc.learning_rate);
            tc.shuffle = t.shuffle.unwrap_or(tc.shuffle);
            tc.parallel = t.parallel.unwrap_or(tc.parallel);
            if let Some(name) = t.optimizer {
                tc.optimizer = Optimizer::from_name(&name).ok_or_else(|| ConfigError::Invalid(format!("unknown optimizer `{name}`")))?;
            }
        }
        if let Some(v) = self.validation {
            let vc = &mut cfg.validation;
            vc.min_routes = v.min_routes.unwrap_or(vc.min_routes);
            vc.min_population = v.min_population.unwrap_or(vc.min_population);
            vc.max_extent_km = v.max_extent_km.unwrap_or(vc.max_extent_km);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
