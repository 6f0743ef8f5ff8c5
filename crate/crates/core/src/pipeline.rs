//! End-to-end run: ingest → features → normalize → train → embed → cluster
//! → typology → export.
//!
//! Every stage writes plain-text artifacts into the output directory:
//!
//! ```text
//! validation.csv
//! ingest/<city>/{meta.txt,events.csv,stops.csv[,boundary.geojson]}
//! features.csv  norm_params.txt  normalized.csv
//! model.txt  loss_history.csv  embeddings.csv
//! dendrogram.csv  cuts.csv  cluster_summary.csv
//! regions_k<k>.geojson (one per cut)  regions_features.geojson
//! manifest.txt
//! ```
//!
//! Training is skipped when `cache/train.key` holds the digest of its inputs
//! and the model files on disk still match.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::autoencoder::{encode, train, AutoencoderModel, TrainConfig};
use crate::cluster::{assign_typology, cluster_summary, cut, ward_agglomerate, ClusterCut, ClusterSummary, Dendrogram, Typology};
use crate::config::{CityConfig, ConfigError, RunConfig, ServiceDateSpec};
use crate::features::{build_feature_matrix, CityEvents, FeatureMatrix};
use crate::geojson::{export_geojson_string, parse_boundary, ExportLevel};
use crate::gtfs::{default_service_date, departure_events, format_gtfs_date, load_feed, DepartureEvent, Stop, ValidationConfig, ValidationReport};
use crate::io::{self, fmt_f64, CutTable};
use crate::matrix::Matrix;
use crate::normalize::{self, NormParams};
use crate::region::{cells_covering, group_stops_by_region, RegionKey};

/// Offset added to the global seed to obtain the training seed (weight
/// initialisation and batch shuffling). No other stage draws random numbers.
pub const TRAIN_SEED_OFFSET: u64 = 0;

pub fn train_seed(global_seed: u64) -> u64 {
    global_seed.wrapping_add(TRAIN_SEED_OFFSET)
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage}{}: {message}", .city.as_ref().map(|c| format!(" [{c}]")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        city: Option<String>,
        message: String,
    },
}

fn stage_err<E: fmt::Display>(stage: &'static str, city: Option<&str>) -> impl FnOnce(E) -> PipelineError {
    let city = city.map(str::to_string);
    move |e| PipelineError::Stage {
        stage,
        city,
        message: e.to_string(),
    }
}

/// Everything known about one region after a full run.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionRecord {
    pub region: RegionKey,
    /// 34 raw counts.
    pub raw: Vec<f64>,
    /// 34 scaled values (empty when not computed).
    pub normalized: Vec<f64>,
    /// 64-dim embedding (empty when not computed).
    pub embedding: Vec<f64>,
    /// k → cluster label.
    pub labels: BTreeMap<usize, usize>,
    pub typology: Option<String>,
}

/// One city's departures on its service date, ready for feature extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestedCity {
    pub city_id: String,
    pub service_date: NaiveDate,
    pub population: u64,
    pub events: Vec<DepartureEvent>,
    pub stops: Vec<Stop>,
    /// Raw GeoJSON of the city boundary, when stop-free cells are wanted.
    pub boundary: Option<String>,
}

/// Load and validate one feed. Events are only extracted when the feed
/// passes validation.
pub fn ingest_city(city: &CityConfig, validation: &ValidationConfig) -> Result<(ValidationReport, Option<IngestedCity>), PipelineError> {
    let id = Some(city.city_id.as_str());
    let feed = load_feed(&city.gtfs, &city.city_id, city.population).map_err(stage_err("ingest", id))?;
    let report = crate::gtfs::validate_feed_with(&feed, validation);
    if !report.passed {
        return Ok((report, None));
    }
    let date = match city.date {
        ServiceDateSpec::Fixed(d) => d,
        ServiceDateSpec::Auto => default_service_date(&feed).map_err(stage_err("ingest", id))?,
    };
    let events = departure_events(&feed, date).map_err(stage_err("ingest", id))?;
    let boundary = match &city.boundary {
        Some(p) => Some(io::read_text(p).map_err(stage_err("ingest", id))?),
        None => None,
    };
    let ingested = IngestedCity {
        city_id: city.city_id.clone(),
        service_date: date,
        population: city.population,
        events,
        stops: feed.stops,
        boundary,
    };
    Ok((report, Some(ingested)))
}

pub fn write_ingested(dir: &Path, city: &IngestedCity) -> Result<Vec<PathBuf>, io::IoError> {
    let meta = format!(
        "city_id={}\nservice_date={}\npopulation={}\n",
        city.city_id,
        city.service_date.format("%Y-%m-%d"),
        city.population
    );
    let mut paths = vec![dir.join("meta.txt"), dir.join("events.csv"), dir.join("stops.csv")];
    io::write_text(&paths[0], &meta)?;
    io::write_events(&paths[1], &city.events)?;
    io::write_stops(&paths[2], &city.stops)?;
    if let Some(b) = &city.boundary {
        paths.push(dir.join("boundary.geojson"));
        io::write_text(&paths[3], b)?;
    }
    Ok(paths)
}

pub fn read_ingested(dir: &Path) -> Result<IngestedCity, PipelineError> {
    let err = stage_err("features", None);
    let meta = io::read_text(&dir.join("meta.txt")).map_err(stage_err("features", None))?;
    let mut fields = BTreeMap::new();
    for line in meta.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| PipelineError::Stage {
            stage: "features",
            city: None,
            message: format!("{}: bad meta line `{line}`", dir.display()),
        })?;
        fields.insert(k.trim(), v.trim());
    }
    let get = |k: &str| {
        fields.get(k).copied().ok_or_else(|| PipelineError::Stage {
            stage: "features",
            city: None,
            message: format!("{}: meta.txt lacks `{k}`", dir.display()),
        })
    };
    let city_id = get("city_id")?.to_string();
    let service_date = NaiveDate::parse_from_str(get("service_date")?, "%Y-%m-%d").map_err(err)?;
    let population = get("population")?.parse::<u64>().map_err(stage_err("features", Some(&city_id)))?;
    let events = io::read_events(&dir.join("events.csv")).map_err(stage_err("features", Some(&city_id)))?;
    let stops = io::read_stops(&dir.join("stops.csv")).map_err(stage_err("features", Some(&city_id)))?;
    let bpath = dir.join("boundary.geojson");
    let boundary = if bpath.exists() {
        Some(io::read_text(&bpath).map_err(stage_err("features", Some(&city_id)))?)
    } else {
        None
    };
    Ok(IngestedCity {
        city_id,
        service_date,
        population,
        events,
        stops,
        boundary,
    })
}

/// Regions of one city: cells holding stops, plus every cell inside the
/// boundary when one is attached.
pub fn city_events(city: &IngestedCity, resolution: u8) -> Result<CityEvents, PipelineError> {
    let id = Some(city.city_id.as_str());
    let mut regions = group_stops_by_region(&city.stops, &city.city_id, resolution).map_err(stage_err("features", id))?;
    if let Some(text) = &city.boundary {
        let polygons = parse_boundary(text).map_err(stage_err("features", id))?;
        for cell in cells_covering(&polygons, resolution).map_err(stage_err("features", id))? {
            regions.entry(RegionKey::new(city.city_id.clone(), cell)).or_default();
        }
    }
    Ok(CityEvents {
        city_id: city.city_id.clone(),
        events: city.events.clone(),
        regions,
    })
}

/// Dendrogram, requested cuts and the typology of the 3-cut.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    pub rows: Vec<RegionKey>,
    pub dendrogram: Dendrogram,
    pub cuts: BTreeMap<usize, ClusterCut>,
    /// Per region; present when the cut list contains 3.
    pub typology: Option<Vec<Typology>>,
    pub summaries: BTreeMap<usize, Vec<ClusterSummary>>,
}

/// Cluster embeddings and name the clusters using the raw counts. Rows of
/// `embeddings` and `raw` must describe the same regions in the same order.
pub fn cluster_stage(rows: &[RegionKey], embeddings: &Matrix, raw: &FeatureMatrix, cuts: &[usize]) -> Result<ClusterOutcome, PipelineError> {
    if raw.rows != rows {
        return Err(PipelineError::Stage {
            stage: "cluster",
            city: None,
            message: "embeddings and features cover different regions".into(),
        });
    }
    let dendrogram = ward_agglomerate(embeddings).map_err(stage_err("cluster", None))?;
    let mut out = BTreeMap::new();
    let mut summaries = BTreeMap::new();
    for &k in cuts.iter().collect::<BTreeSet<_>>() {
        let c = cut(&dendrogram, k).map_err(stage_err("cluster", None))?;
        summaries.insert(k, cluster_summary(&c, raw));
        out.insert(k, c);
    }
    let typology = match out.get(&3) {
        Some(c3) => {
            let names = assign_typology(c3, &summaries[&3]).map_err(stage_err("typology", None))?;
            Some(c3.labels.iter().map(|l| names[l]).collect())
        }
        None => None,
    };
    Ok(ClusterOutcome {
        rows: rows.to_vec(),
        dendrogram,
        cuts: out,
        typology,
        summaries,
    })
}

impl ClusterOutcome {
    pub fn cut_table(&self) -> CutTable {
        CutTable {
            rows: self.rows.clone(),
            cuts: self.cuts.iter().map(|(&k, c)| (k, c.labels.clone())).collect(),
            typology: self
                .typology
                .as_ref()
                .map(|t| t.iter().map(|t| t.as_str().to_string()).collect()),
        }
    }

    /// `k,cluster,region_count,mean_sum_trips,mean_directions_whole_day,typology_name`.
    /// A cluster's typology is that of its members (cuts nest, so it is
    /// unique).
    pub fn summary_csv(&self) -> String {
        let mut s = "k,cluster,region_count,mean_sum_trips,mean_directions_whole_day,typology_name\n".to_string();
        for (k, sums) in &self.summaries {
            for sm in sums {
                let name = self.typology.as_ref().map_or("", |t| {
                    let first = self.cuts[k].labels.iter().position(|&l| l == sm.cluster_id).expect("non-empty cluster");
                    t[first].as_str()
                });
                let _ = writeln!(
                    s,
                    "{k},{},{},{},{},{name}",
                    sm.cluster_id,
                    sm.region_count,
                    fmt_f64(sm.mean_sum_trips),
                    fmt_f64(sm.mean_directions_whole_day)
                );
            }
        }
        s
    }
}

/// Join per-stage outputs into per-region records. `normalized` and
/// `embeddings` may be `None` (e.g. when exporting from stage files).
pub fn build_records(raw: &FeatureMatrix, normalized: Option<&Matrix>, embeddings: Option<&Matrix>, cuts: &CutTable) -> Vec<RegionRecord> {
    let pos: BTreeMap<&RegionKey, usize> = cuts.rows.iter().enumerate().map(|(i, k)| (k, i)).collect();
    raw.rows
        .iter()
        .enumerate()
        .map(|(i, key)| {
            let j = pos.get(key).copied();
            RegionRecord {
                region: key.clone(),
                raw: raw.values.row(i).to_vec(),
                normalized: normalized.map_or_else(Vec::new, |m| m.row(i).to_vec()),
                embedding: embeddings.map_or_else(Vec::new, |m| m.row(i).to_vec()),
                labels: j.map_or_else(BTreeMap::new, |j| cuts.cuts.iter().map(|(&k, l)| (k, l[j])).collect()),
                typology: j.and_then(|j| cuts.typology.as_ref().map(|t| t[j].clone())),
            }
        })
        .collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn file_digest(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::Stage {
        stage: "manifest",
        city: None,
        message: format!("{}: {e}", path.display()),
    })?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub stage: &'static str,
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CityStatus {
    pub city_id: String,
    /// None when the feed was excluded.
    pub service_date: Option<NaiveDate>,
    pub region_count: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub output_dir: PathBuf,
    pub cities: Vec<CityStatus>,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn excluded(&self) -> impl Iterator<Item = &CityStatus> {
        self.cities.iter().filter(|c| c.service_date.is_none())
    }

    pub fn artifact(&self, path: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == path)
    }

    pub fn to_text(&self) -> String {
        let mut s = "# gtfs2vec run manifest\n".to_string();
        for c in &self.cities {
            match c.service_date {
                Some(d) => {
                    let _ = writeln!(s, "city\t{}\tincluded\t{}\t{} regions", c.city_id, format_gtfs_date(d), c.region_count);
                }
                None => {
                    let _ = writeln!(s, "city\t{}\texcluded\t{}", c.city_id, c.failures.join("; "));
                }
            }
        }
        for a in &self.artifacts {
            let _ = writeln!(s, "artifact\t{}\t{}\t{}", a.stage, a.path, a.sha256);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub manifest: RunManifest,
    pub records: Vec<RegionRecord>,
    pub loss_history: Vec<f64>,
    /// Stages whose outputs were reused from a previous run.
    pub cached_stages: Vec<&'static str>,
}

struct Run<'a> {
    dir: &'a Path,
    artifacts: Vec<Artifact>,
}

impl Run<'_> {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn record(&mut self, stage: &'static str, rel: &str) -> Result<(), PipelineError> {
        let sha256 = file_digest(&self.path(rel))?;
        self.artifacts.push(Artifact {
            stage,
            path: rel.to_string(),
            sha256,
        });
        Ok(())
    }

    fn key_path(&self, stage: &str) -> PathBuf {
        self.dir.join("cache").join(format!("{stage}.key"))
    }

    /// The outputs are reusable when the stored key matches `key` and every
    /// output still has the digest recorded next to it.
    fn cache_hit(&self, stage: &str, key: &str, outputs: &[&str]) -> bool {
        let Ok(stored) = std::fs::read_to_string(self.key_path(stage)) else {
            return false;
        };
        let mut lines = stored.lines();
        if lines.next() != Some(key) {
            return false;
        }
        let recorded: BTreeMap<&str, &str> = lines.filter_map(|l| l.split_once('\t')).collect();
        outputs.iter().all(|o| {
            recorded
                .get(o)
                .is_some_and(|d| file_digest(&self.path(o)).is_ok_and(|actual| actual == *d))
        })
    }

    fn store_key(&self, stage: &str, key: &str, outputs: &[&str]) -> Result<(), PipelineError> {
        let mut text = format!("{key}\n");
        for o in outputs {
            let _ = writeln!(text, "{o}\t{}", file_digest(&self.path(o))?);
        }
        io::write_text(&self.key_path(stage), &text).map_err(stage_err("cache", None))
    }
}

fn train_key(normalized_digest: &str, config: &TrainConfig) -> String {
    let desc = format!(
        "{normalized_digest}|epochs={}|batch={}|lr={:?}|opt={:?}|seed={}|shuffle={}",
        config.epochs, config.batch_size, config.learning_rate, config.optimizer, config.seed, config.shuffle
    );
    sha256_hex(desc.as_bytes())
}

/// Execute every stage. Feeds failing validation are dropped and listed in
/// the manifest; the run fails when none remain.
pub fn run(config: &RunConfig) -> Result<RunResult, PipelineError> {
    config.validate()?;
    let dir = config.output_dir.as_path();
    let mut run = Run { dir, artifacts: Vec::new() };
    let mut cached_stages = Vec::new();

    // Ingest, per city in parallel; errors surface in configuration order.
    let ingested: Vec<_> = config
        .cities
        .par_iter()
        .map(|c| ingest_city(c, &config.validation))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, _>>()?;
    let reports: Vec<ValidationReport> = ingested.iter().map(|(r, _)| r.clone()).collect();
    io::write_validation(&run.path("validation.csv"), &reports).map_err(stage_err("validate", None))?;
    run.record("validate", "validation.csv")?;
    let mut cities = Vec::new();
    let mut statuses = Vec::new();
    for (report, city) in ingested {
        match city {
            Some(c) => cities.push(c),
            None => statuses.push(CityStatus {
                city_id: report.city_id.clone(),
                service_date: None,
                region_count: 0,
                failures: report.failures().map(|f| format!("{}: {}", f.criterion, f.message)).collect(),
            }),
        }
    }
    if cities.is_empty() {
        return Err(PipelineError::Stage {
            stage: "validate",
            city: None,
            message: "no feed passed validation".into(),
        });
    }
    for c in &cities {
        let base = format!("ingest/{}", c.city_id);
        let paths = write_ingested(&run.path(&base), c).map_err(stage_err("ingest", Some(&c.city_id)))?;
        for p in paths {
            let name = p.file_name().expect("file path").to_string_lossy().into_owned();
            run.record("ingest", &format!("{base}/{name}"))?;
        }
    }

    // Features.
    let city_events: Vec<CityEvents> = cities
        .par_iter()
        .map(|c| city_events(c, config.resolution))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<_, _>>()?;
    for (c, ev) in cities.iter().zip(&city_events) {
        statuses.push(CityStatus {
            city_id: c.city_id.clone(),
            service_date: Some(c.service_date),
            region_count: ev.regions.len(),
            failures: Vec::new(),
        });
    }
    statuses.sort_by(|a, b| a.city_id.cmp(&b.city_id));
    let features = build_feature_matrix(&city_events);
    io::write_features(&run.path("features.csv"), &features).map_err(stage_err("features", None))?;
    run.record("features", "features.csv")?;

    // Normalize (pooled over all cities).
    let (params, normalized) = normalize_features(&features)?;
    io::write_text(&run.path("norm_params.txt"), &params.to_text()).map_err(stage_err("normalize", None))?;
    io::write_normalized(&run.path("normalized.csv"), &features.rows, &normalized).map_err(stage_err("normalize", None))?;
    run.record("normalize", "norm_params.txt")?;
    run.record("normalize", "normalized.csv")?;

    // Train.
    let mut train_config = config.train.clone();
    train_config.seed = train_seed(config.seed);
    let key = train_key(&run.artifacts.last().expect("normalized").sha256, &train_config);
    let outputs = ["model.txt", "loss_history.csv"];
    let (model, loss_history) = if run.cache_hit("train", &key, &outputs) {
        cached_stages.push("train");
        let text = io::read_text(&run.path("model.txt")).map_err(stage_err("train", None))?;
        let model = AutoencoderModel::from_text(&text).map_err(stage_err("train", None))?;
        let history = io::read_loss_history(&run.path("loss_history.csv")).map_err(stage_err("train", None))?;
        (model, history)
    } else {
        let (model, history) = train(&normalized, &train_config).map_err(stage_err("train", None))?;
        io::write_text(&run.path("model.txt"), &model.to_text()).map_err(stage_err("train", None))?;
        io::write_loss_history(&run.path("loss_history.csv"), &history).map_err(stage_err("train", None))?;
        run.store_key("train", &key, &outputs)?;
        (model, history)
    };
    for o in outputs {
        run.record("train", o)?;
    }

    // Embed.
    let embeddings = encode(&model, &normalized).map_err(stage_err("embed", None))?;
    io::write_embeddings(&run.path("embeddings.csv"), &features.rows, &embeddings).map_err(stage_err("embed", None))?;
    run.record("embed", "embeddings.csv")?;

    // Cluster + typology.
    let cuts: Vec<usize> = config.cuts.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let outcome = cluster_stage(&features.rows, &embeddings, &features, &cuts)?;
    let table = outcome.cut_table();
    io::write_text(&run.path("dendrogram.csv"), &outcome.dendrogram.to_csv()).map_err(stage_err("cluster", None))?;
    io::write_cuts(&run.path("cuts.csv"), &table).map_err(stage_err("cluster", None))?;
    io::write_text(&run.path("cluster_summary.csv"), &outcome.summary_csv()).map_err(stage_err("cluster", None))?;
    for o in ["dendrogram.csv", "cuts.csv", "cluster_summary.csv"] {
        run.record("cluster", o)?;
    }

    // Export.
    let records = build_records(&features, Some(&normalized), Some(&embeddings), &table);
    let levels = cuts.iter().map(|&k| ExportLevel::Cut(k)).chain([ExportLevel::Features]);
    for level in levels {
        let rel = format!("regions_{}.geojson", level.name());
        io::write_text(&run.path(&rel), &export_geojson_string(&records, level)).map_err(stage_err("export", None))?;
        run.record("export", &rel)?;
    }

    let manifest = RunManifest {
        output_dir: dir.to_path_buf(),
        cities: statuses,
        artifacts: run.artifacts,
    };
    io::write_text(&dir.join("manifest.txt"), &manifest.to_text()).map_err(stage_err("manifest", None))?;
    Ok(RunResult {
        manifest,
        records,
        loss_history,
        cached_stages,
    })
}

/// Normalized matrix and its parameters for a feature table.
pub fn normalize_features(features: &FeatureMatrix) -> Result<(NormParams, Matrix), PipelineError> {
    let params = normalize::fit(&features.values).map_err(stage_err("normalize", None))?;
    let m = normalize::transform(&features.values, &params).map_err(stage_err("normalize", None))?;
    Ok((params, m))
}
