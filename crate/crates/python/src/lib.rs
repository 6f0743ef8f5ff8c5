//! Python bindings: `import gtfs2vec`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use chrono::NaiveDate;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gtfs2vec_core::autoencoder::{self, AutoencoderModel, Embedding, Optimizer, TrainConfig};
use gtfs2vec_core::cluster::{self, ClusterCut};
use gtfs2vec_core::config::RunConfig;
use gtfs2vec_core::features::{self, CityEvents, FeatureMatrix, FEATURE_DIM};
use gtfs2vec_core::geojson::{export_geojson_string, ExportLevel};
use gtfs2vec_core::gtfs::{self, CheckStatus, FeedBundle, ValidationConfig};
use gtfs2vec_core::matrix::Matrix;
use gtfs2vec_core::normalize::{self, NormParams};
use gtfs2vec_core::pipeline::{self, RegionRecord};
use gtfs2vec_core::region::{group_stops_by_region, RegionKey, DEFAULT_RESOLUTION};
use gtfs2vec_core::similarity::{self, EmbeddingIndex, QueryFilter};
use gtfs2vec_core::synth;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>, cols: Option<usize>) -> PyResult<Matrix> {
    let cols = cols.or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    Matrix::from_rows(&rows, cols).ok_or_else(|| PyValueError::new_err(format!("every row must have {cols} values")))
}

fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

fn region_keys(regions: &[String]) -> PyResult<Vec<RegionKey>> {
    regions.iter().map(|r| r.parse::<RegionKey>().map_err(err)).collect()
}

fn parse_date(date: Option<&str>) -> PyResult<Option<NaiveDate>> {
    date.map(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").map_err(|_| PyValueError::new_err(format!("date `{d}`: expected YYYY-MM-DD"))))
        .transpose()
}

/// A parsed GTFS feed.
#[pyclass(module = "gtfs2vec", frozen)]
struct Feed {
    inner: FeedBundle,
}

#[pymethods]
impl Feed {
    #[getter]
    fn city_id(&self) -> &str {
        &self.inner.city_id
    }

    #[getter]
    fn stop_count(&self) -> usize {
        self.inner.stops.len()
    }

    #[getter]
    fn route_count(&self) -> usize {
        self.inner.route_count()
    }

    #[getter]
    fn trip_count(&self) -> usize {
        self.inner.trips.len()
    }

    #[getter]
    fn skipped_stop_times(&self) -> usize {
        self.inner.skipped_stop_times
    }

    /// First Wednesday with service, as YYYY-MM-DD.
    fn default_service_date(&self) -> PyResult<String> {
        Ok(gtfs::default_service_date(&self.inner).map_err(err)?.to_string())
    }

    /// `(passed, [(criterion, status, message), ...])`.
    #[pyo3(signature = (min_routes=20, min_population=200_000, max_extent_km=300.0))]
    fn validate(&self, min_routes: usize, min_population: u64, max_extent_km: f64) -> (bool, Vec<(String, String, String)>) {
        let config = ValidationConfig { min_routes, min_population, max_extent_km };
        let report = gtfs::validate_feed_with(&self.inner, &config);
        let checks = report
            .checks
            .into_iter()
            .map(|c| {
                let status = match c.status {
                    CheckStatus::Pass => "pass",
                    CheckStatus::Fail => "fail",
                    CheckStatus::Advisory => "advisory",
                };
                (c.criterion.to_string(), status.to_string(), c.message)
            })
            .collect();
        (report.passed, checks)
    }

    /// Departures on `date` (default: the automatic service date) as
    /// `(stop_id, hour, headsign)`.
    #[pyo3(signature = (date=None))]
    fn events(&self, date: Option<&str>) -> PyResult<Vec<(String, u8, String)>> {
        let date = self.service_date(date)?;
        let events = gtfs::departure_events(&self.inner, date).map_err(err)?;
        Ok(events.into_iter().map(|e| (e.stop_id, e.hour, e.headsign)).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Feed(city_id={:?}, stops={}, routes={}, trips={})",
            self.inner.city_id,
            self.inner.stops.len(),
            self.inner.route_count(),
            self.inner.trips.len()
        )
    }
}

impl Feed {
    fn service_date(&self, date: Option<&str>) -> PyResult<NaiveDate> {
        match parse_date(date)? {
            Some(d) => Ok(d),
            None => gtfs::default_service_date(&self.inner).map_err(err),
        }
    }
}

#[pyfunction]
fn load_feed(path: PathBuf, city_id: &str, population: u64) -> PyResult<Feed> {
    Ok(Feed { inner: gtfs::load_feed(path, city_id, population).map_err(err)? })
}

/// Regions × 34 raw counts, rows sorted by region.
#[pyclass(module = "gtfs2vec", frozen)]
struct FeatureTable {
    inner: FeatureMatrix,
}

#[pymethods]
impl FeatureTable {
    #[new]
    fn new(regions: Vec<String>, values: Vec<Vec<f64>>) -> PyResult<Self> {
        let rows = region_keys(&regions)?;
        let values = matrix(values, Some(FEATURE_DIM))?;
        if rows.len() != values.rows() {
            return Err(PyValueError::new_err(format!("{} regions but {} rows", rows.len(), values.rows())));
        }
        Ok(FeatureTable { inner: FeatureMatrix { rows, values } })
    }

    #[staticmethod]
    fn columns() -> Vec<String> {
        features::column_names()
    }

    /// `city_id:cell` per row.
    #[getter]
    fn regions(&self) -> Vec<String> {
        self.inner.rows.iter().map(ToString::to_string).collect()
    }

    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        rows_of(&self.inner.values)
    }

    fn sum_trips(&self) -> Vec<f64> {
        (0..self.inner.len()).map(|i| self.inner.sum_trips(i)).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Hourly features for several feeds. `dates` maps city_id to YYYY-MM-DD;
/// other feeds use their automatic service date.
#[pyfunction]
#[pyo3(signature = (feeds, resolution=DEFAULT_RESOLUTION, dates=None))]
fn extract_features(feeds: Vec<Py<Feed>>, resolution: u8, dates: Option<BTreeMap<String, String>>, py: Python<'_>) -> PyResult<FeatureTable> {
    let dates = dates.unwrap_or_default();
    let mut cities = Vec::with_capacity(feeds.len());
    for feed in &feeds {
        let feed = feed.get();
        let date = feed.service_date(dates.get(&feed.inner.city_id).map(String::as_str))?;
        let f = &feed.inner;
        cities.push(CityEvents {
            city_id: f.city_id.clone(),
            events: gtfs::departure_events(f, date).map_err(err)?,
            regions: group_stops_by_region(&f.stops, &f.city_id, resolution).map_err(err)?,
        });
    }
    let inner = py.allow_threads(|| features::build_feature_matrix(&cities));
    Ok(FeatureTable { inner })
}

/// Block-wise min-max scaling fitted on a pool of rows.
#[pyclass(module = "gtfs2vec", frozen)]
struct Normalizer {
    inner: NormParams,
}

#[pymethods]
impl Normalizer {
    #[staticmethod]
    fn fit(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        Ok(Normalizer { inner: normalize::fit(&matrix(rows, Some(FEATURE_DIM))?).map_err(err)? })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Normalizer { inner: NormParams::from_text(text).map_err(err)? })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn transform(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows_of(&normalize::transform(&matrix(rows, Some(FEATURE_DIM))?, &self.inner).map_err(err)?))
    }

    fn inverse_transform(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows_of(&normalize::inverse_transform(&matrix(rows, Some(FEATURE_DIM))?, &self.inner).map_err(err)?))
    }

    /// `(trips_min, trips_max, dirs_min, dirs_max)`.
    #[getter]
    fn params(&self) -> (f64, f64, f64, f64) {
        let p = &self.inner;
        (p.trips_min, p.trips_max, p.dirs_min, p.dirs_max)
    }
}

#[pyclass(module = "gtfs2vec", frozen)]
struct Autoencoder {
    inner: AutoencoderModel,
}

#[pymethods]
impl Autoencoder {
    /// Freshly initialised 34→48→64→48→34 network.
    #[new]
    #[pyo3(signature = (seed=42))]
    fn new(seed: u64) -> Self {
        Autoencoder { inner: autoencoder::init_model(seed) }
    }

    /// Train on scaled rows; returns `(model, loss_per_epoch)`.
    #[staticmethod]
    #[pyo3(signature = (rows, epochs=200, batch_size=32, learning_rate=1e-3, optimizer="adam", seed=42, shuffle=true))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        rows: Vec<Vec<f64>>,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        optimizer: &str,
        seed: u64,
        shuffle: bool,
    ) -> PyResult<(Autoencoder, Vec<f64>)> {
        let data = matrix(rows, Some(FEATURE_DIM))?;
        let config = TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            optimizer: Optimizer::from_name(optimizer).ok_or_else(|| PyValueError::new_err(format!("unknown optimizer `{optimizer}`")))?,
            seed,
            shuffle,
            parallel: false,
        };
        let (model, history) = py.allow_threads(|| autoencoder::train(&data, &config)).map_err(err)?;
        Ok((Autoencoder { inner: model }, history))
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(Autoencoder { inner: AutoencoderModel::from_text(text).map_err(err)? })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn encode(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows_of(&autoencoder::encode(&self.inner, &matrix(rows, Some(FEATURE_DIM))?).map_err(err)?))
    }

    fn reconstruct(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows_of(&self.inner.reconstruct(&matrix(rows, Some(FEATURE_DIM))?).map_err(err)?))
    }

    /// Mean over rows of the summed squared reconstruction error.
    fn loss(&self, rows: Vec<Vec<f64>>) -> PyResult<f64> {
        let data = matrix(rows, Some(FEATURE_DIM))?;
        let rec = self.inner.reconstruct(&data).map_err(err)?;
        autoencoder::loss(&data, &rec).map_err(err)
    }
}

/// Ward hierarchy over a set of points.
#[pyclass(module = "gtfs2vec", frozen)]
struct Dendrogram {
    inner: cluster::Dendrogram,
}

#[pymethods]
impl Dendrogram {
    #[staticmethod]
    fn ward(py: Python<'_>, points: Vec<Vec<f64>>) -> PyResult<Self> {
        let m = matrix(points, None)?;
        Ok(Dendrogram { inner: py.allow_threads(|| cluster::ward_agglomerate(&m)).map_err(err)? })
    }

    /// `(left, right, height, size)` per merge.
    #[getter]
    fn merges(&self) -> Vec<(usize, usize, f64, usize)> {
        self.inner.merges.iter().map(|m| (m.left, m.right, m.height, m.size)).collect()
    }

    /// Flat labels for `k` clusters; label 0 is the largest.
    fn cut(&self, k: usize) -> PyResult<Vec<usize>> {
        Ok(cluster::cut(&self.inner, k).map_err(err)?.labels)
    }

    fn __len__(&self) -> usize {
        self.inner.leaf_count
    }
}

/// Ward clustering of embeddings, cut at each of `cuts`, plus the
/// typology names of the 3-cluster level. Returns `{k: labels}` and the
/// per-region names (or None when 3 is not among the cuts).
#[pyfunction]
#[pyo3(signature = (features, embeddings, cuts=vec![3, 9]))]
fn cluster_regions(
    py: Python<'_>,
    features: &FeatureTable,
    embeddings: Vec<Vec<f64>>,
    cuts: Vec<usize>,
) -> PyResult<(BTreeMap<usize, Vec<usize>>, Option<Vec<String>>)> {
    let emb = matrix(embeddings, None)?;
    let raw = &features.inner;
    let outcome = py
        .allow_threads(|| pipeline::cluster_stage(&raw.rows, &emb, raw, &cuts))
        .map_err(err)?;
    let labels = outcome.cuts.into_iter().map(|(k, c)| (k, c.labels)).collect();
    let typology = outcome.typology.map(|t| t.into_iter().map(|x| x.as_str().to_string()).collect());
    Ok((labels, typology))
}

/// Embeddings keyed by `city_id:cell`, for exact nearest-neighbour queries.
#[pyclass(module = "gtfs2vec", frozen)]
struct RegionIndex {
    inner: EmbeddingIndex,
}

#[pymethods]
impl RegionIndex {
    #[new]
    fn new(regions: Vec<String>, embeddings: Vec<Vec<f64>>) -> PyResult<Self> {
        let keys = region_keys(&regions)?;
        if keys.len() != embeddings.len() {
            return Err(PyValueError::new_err(format!("{} regions but {} embeddings", keys.len(), embeddings.len())));
        }
        let entries = keys.into_iter().zip(embeddings).map(|(region, vector)| Embedding { region, vector }).collect();
        Ok(RegionIndex { inner: EmbeddingIndex::new(entries).map_err(err)? })
    }

    /// `[(region, distance), ...]` ascending; the query is never returned.
    #[pyo3(signature = (region, k=10, cities=None, exclude_same_city=false))]
    fn nearest(&self, region: &str, k: usize, cities: Option<Vec<String>>, exclude_same_city: bool) -> PyResult<Vec<(String, f64)>> {
        let query: RegionKey = region.parse().map_err(err)?;
        let filter = QueryFilter {
            cities: cities.map(|c| c.into_iter().collect::<BTreeSet<_>>()),
            exclude_same_city,
        };
        let hits = similarity::nearest(&self.inner, &query, k, &filter).map_err(err)?;
        Ok(hits.into_iter().map(|(r, d)| (r.to_string(), d)).collect())
    }

    /// The `m` members of `cluster` closest to its centroid.
    fn exemplars(&self, labels: Vec<usize>, cluster: usize, m: usize) -> PyResult<Vec<String>> {
        let k = labels.iter().max().map_or(0, |l| l + 1);
        let cut = ClusterCut { k, labels };
        let picks = similarity::cluster_center_exemplars(&self.inner, &cut, cluster, m).map_err(err)?;
        Ok(picks.into_iter().map(|r| r.to_string()).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Outcome of a full pipeline run.
#[pyclass(module = "gtfs2vec", frozen)]
struct RunResult {
    records: Vec<RegionRecord>,
    #[pyo3(get)]
    output_dir: String,
    #[pyo3(get)]
    loss_history: Vec<f64>,
    #[pyo3(get)]
    cached_stages: Vec<String>,
    /// city_id → failed checks.
    #[pyo3(get)]
    excluded: BTreeMap<String, Vec<String>>,
    /// Relative artifact path → sha256.
    #[pyo3(get)]
    artifacts: BTreeMap<String, String>,
}

#[pymethods]
impl RunResult {
    #[getter]
    fn regions(&self) -> Vec<String> {
        self.records.iter().map(|r| r.region.to_string()).collect()
    }

    #[getter]
    fn embeddings(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.embedding.clone()).collect()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.raw.clone()).collect()
    }

    fn labels(&self, k: usize) -> PyResult<Vec<usize>> {
        self.records
            .iter()
            .map(|r| r.labels.get(&k).copied().ok_or_else(|| PyValueError::new_err(format!("no cut at k={k}"))))
            .collect()
    }

    #[getter]
    fn typology(&self) -> Vec<Option<String>> {
        self.records.iter().map(|r| r.typology.clone()).collect()
    }

    /// GeoJSON text for `"k3"`, `"k9"`, ... or `"features"`.
    fn geojson(&self, level: &str) -> PyResult<String> {
        let level = ExportLevel::parse(level).ok_or_else(|| PyValueError::new_err(format!("level `{level}`: expected k<N> or features")))?;
        Ok(export_geojson_string(&self.records, level))
    }

    fn __len__(&self) -> usize {
        self.records.len()
    }
}

/// Run every stage for the TOML configuration at `config_path`.
#[pyfunction]
fn run_pipeline(py: Python<'_>, config_path: PathBuf) -> PyResult<RunResult> {
    let config = RunConfig::load(&config_path).map_err(err)?;
    let result = py
        .allow_threads(|| pipeline::run(&config))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let m = &result.manifest;
    Ok(RunResult {
        output_dir: m.output_dir.display().to_string(),
        excluded: m.excluded().map(|c| (c.city_id.clone(), c.failures.clone())).collect(),
        artifacts: m.artifacts.iter().map(|a| (a.path.clone(), a.sha256.clone())).collect(),
        cached_stages: result.cached_stages.iter().map(|s| s.to_string()).collect(),
        loss_history: result.loss_history,
        records: result.records,
    })
}

/// Write synthetic feeds for three cities of known region types (and
/// optionally one that fails validation) under `dir`, plus `run.toml`.
/// Returns the config path.
#[pyfunction]
#[pyo3(signature = (dir, seed=42, with_underserved=false))]
fn write_synthetic_fixture(dir: PathBuf, seed: u64, with_underserved: bool) -> PyResult<String> {
    let dir = std::path::absolute(dir).map_err(err)?;
    let fixture = synth::write_archetype_fixture(&dir.join("feeds"), seed, with_underserved).map_err(err)?;
    let path = dir.join("run.toml");
    std::fs::write(&path, synth::config_toml(&fixture.cities, &dir.join("out"), seed)).map_err(err)?;
    Ok(path.display().to_string())
}

#[pymodule]
fn gtfs2vec(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Feed>()?;
    m.add_class::<FeatureTable>()?;
    m.add_class::<Normalizer>()?;
    m.add_class::<Autoencoder>()?;
    m.add_class::<Dendrogram>()?;
    m.add_class::<RegionIndex>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(load_feed, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_regions, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic_fixture, m)?)?;
    m.add("FEATURE_DIM", FEATURE_DIM)?;
    Ok(())
}
