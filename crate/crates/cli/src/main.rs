use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gtfs2vec::autoencoder::{encode, train, AutoencoderModel, Optimizer, TrainConfig};
use gtfs2vec::cluster::ClusterCut;
use gtfs2vec::config::{CityConfig, RunConfig, ServiceDateSpec};
use gtfs2vec::features::build_feature_matrix;
use gtfs2vec::geojson::{export_geojson_string, ExportLevel};
use gtfs2vec::gtfs::{CheckStatus, ValidationConfig};
use gtfs2vec::io;
use gtfs2vec::normalize::{self, NormParams};
use gtfs2vec::pipeline::{self, build_records, city_events, cluster_stage, ingest_city, read_ingested, write_ingested};
use gtfs2vec::region::RegionKey;
use gtfs2vec::similarity::{cluster_center_exemplars, nearest, EmbeddingIndex, QueryFilter};
use gtfs2vec::synth;

#[derive(Parser)]
#[command(name = "gtfs2vec", version, about = "Transit offer typology of H3 micro-regions from GTFS feeds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage from a TOML config
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Load and validate one feed, write its departure events
    Ingest(IngestArgs),
    /// Build the 34-column feature table from ingested cities
    Features {
        /// A city directory written by `ingest`, or a directory of them
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        resolution: u8,
    },
    /// Fit scaling (unless --norm exists) and train the autoencoder
    Train(TrainArgs),
    /// Encode features into 64-dim embeddings
    Embed {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        norm: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ward clustering and typology
    Cluster {
        #[arg(long)]
        embeddings: PathBuf,
        /// Raw feature table, used to name the clusters
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "3,9")]
        cuts: Vec<usize>,
        /// Output directory for dendrogram.csv, cuts.csv, cluster_summary.csv
        #[arg(long)]
        out: PathBuf,
    },
    /// Nearest regions in embedding space
    Similar {
        #[arg(long)]
        embeddings: PathBuf,
        /// city_id:cell
        #[arg(long)]
        region: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        cross_city_only: bool,
        #[arg(long, value_delimiter = ',')]
        cities: Option<Vec<String>>,
    },
    /// Regions closest to a cluster's embedding centroid
    Exemplars {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        cuts: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long)]
        cluster: usize,
        #[arg(long, default_value_t = 5)]
        m: usize,
    },
    /// GeoJSON layer from feature and cut tables
    Export {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        cuts: Option<PathBuf>,
        /// k3, k9, ... or features
        #[arg(long, default_value = "k3")]
        level: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic archetype feeds and a matching run config
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Add a fourth city with only five routes
        #[arg(long)]
        with_underserved: bool,
    },
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    gtfs: PathBuf,
    #[arg(long)]
    city: String,
    #[arg(long)]
    population: u64,
    /// YYYY-MM-DD or auto
    #[arg(long, default_value = "auto")]
    date: String,
    #[arg(long)]
    out: PathBuf,
    /// City boundary GeoJSON; stop-free cells inside become all-zero regions
    #[arg(long)]
    include_empty_cells: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    /// Scaling parameters; read when present, otherwise fitted and written
    #[arg(long)]
    norm: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    loss_out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value = "adam")]
    optimizer: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    no_shuffle: bool,
}

fn main() {
    if let Err(e) = dispatch(Cli::parse().command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { config } => cmd_run(&config),
        Command::Ingest(args) => cmd_ingest(args),
        Command::Features { input, out, resolution } => cmd_features(&input, &out, resolution),
        Command::Train(args) => cmd_train(args),
        Command::Embed { features, norm, model, out } => cmd_embed(&features, &norm, &model, &out),
        Command::Cluster { embeddings, features, cuts, out } => cmd_cluster(&embeddings, &features, &cuts, &out),
        Command::Similar { embeddings, region, k, cross_city_only, cities } => {
            cmd_similar(&embeddings, &region, k, cross_city_only, cities)
        }
        Command::Exemplars { embeddings, cuts, k, cluster, m } => cmd_exemplars(&embeddings, &cuts, k, cluster, m),
        Command::Export { features, cuts, level, out } => cmd_export(&features, cuts.as_deref(), &level, &out),
        Command::Synth { out, seed, with_underserved } => cmd_synth(&out, seed, with_underserved),
    }
}

fn cmd_run(path: &Path) -> Result<()> {
    let config = RunConfig::load(path)?;
    let result = pipeline::run(&config)?;
    for c in &result.manifest.cities {
        match c.service_date {
            Some(d) => println!("{}: {} regions, service date {d}", c.city_id, c.region_count),
            None => println!("{}: excluded ({})", c.city_id, c.failures.join("; ")),
        }
    }
    if !result.cached_stages.is_empty() {
        println!("reused: {}", result.cached_stages.join(", "));
    }
    println!("{} regions, outputs in {}", result.records.len(), config.output_dir.display());
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let date = ServiceDateSpec::parse(&args.date).with_context(|| format!("--date `{}`: expected YYYY-MM-DD or auto", args.date))?;
    let city = CityConfig {
        city_id: args.city,
        gtfs: args.gtfs,
        population: args.population,
        date,
        boundary: args.include_empty_cells,
    };
    let (report, ingested) = ingest_city(&city, &ValidationConfig::default())?;
    io::write_validation(&args.out.join("validation.csv"), std::slice::from_ref(&report))?;
    for c in &report.checks {
        if c.status != CheckStatus::Pass {
            eprintln!("{} {}: {}", c.status, c.criterion, c.message);
        }
    }
    let Some(ingested) = ingested else {
        bail!("{} failed validation; see {}", city.city_id, args.out.join("validation.csv").display());
    };
    write_ingested(&args.out, &ingested)?;
    println!(
        "{}: {} departures on {}",
        ingested.city_id,
        ingested.events.len(),
        ingested.service_date
    );
    Ok(())
}

fn ingested_dirs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.join("meta.txt").is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.txt").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("{} holds no ingested city (no meta.txt)", input.display());
    }
    Ok(dirs)
}

fn cmd_features(input: &Path, out: &Path, resolution: u8) -> Result<()> {
    let mut cities = Vec::new();
    for dir in ingested_dirs(input)? {
        cities.push(city_events(&read_ingested(&dir)?, resolution)?);
    }
    let m = build_feature_matrix(&cities);
    io::write_features(out, &m)?;
    println!("{} regions x 34 features -> {}", m.len(), out.display());
    Ok(())
}

fn load_or_fit_norm(path: &Path, features: &gtfs2vec::features::FeatureMatrix) -> Result<NormParams> {
    if path.exists() {
        return Ok(NormParams::from_text(&io::read_text(path)?)?);
    }
    let params = normalize::fit(&features.values)?;
    io::write_text(path, &params.to_text())?;
    Ok(params)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let features = io::read_features(&args.features)?;
    let params = load_or_fit_norm(&args.norm, &features)?;
    let data = normalize::transform(&features.values, &params)?;
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        learning_rate: args.learning_rate,
        optimizer: Optimizer::from_name(&args.optimizer).with_context(|| format!("unknown optimizer `{}`", args.optimizer))?,
        seed: args.seed,
        shuffle: !args.no_shuffle,
        parallel: false,
    };
    let (model, history) = train(&data, &config)?;
    io::write_text(&args.out, &model.to_text())?;
    if let Some(p) = &args.loss_out {
        io::write_loss_history(p, &history)?;
    }
    println!(
        "trained on {} rows: loss {:.6} -> {:.6}",
        data.rows(),
        history.first().copied().unwrap_or(f64::NAN),
        history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_embed(features: &Path, norm: &Path, model: &Path, out: &Path) -> Result<()> {
    let features = io::read_features(features)?;
    let params = NormParams::from_text(&io::read_text(norm)?)?;
    let model = AutoencoderModel::from_text(&io::read_text(model)?)?;
    let z = encode(&model, &normalize::transform(&features.values, &params)?)?;
    io::write_embeddings(out, &features.rows, &z)?;
    println!("{} embeddings -> {}", z.rows(), out.display());
    Ok(())
}

fn cmd_cluster(embeddings: &Path, features: &Path, cuts: &[usize], out: &Path) -> Result<()> {
    let (rows, z) = io::read_embeddings(embeddings)?;
    let raw = io::read_features(features)?;
    let outcome = cluster_stage(&rows, &z, &raw, cuts)?;
    io::write_text(&out.join("dendrogram.csv"), &outcome.dendrogram.to_csv())?;
    io::write_cuts(&out.join("cuts.csv"), &outcome.cut_table())?;
    io::write_text(&out.join("cluster_summary.csv"), &outcome.summary_csv())?;
    print!("{}", outcome.summary_csv());
    Ok(())
}

fn load_index(path: &Path) -> Result<EmbeddingIndex> {
    let (rows, z) = io::read_embeddings(path)?;
    Ok(EmbeddingIndex::new(encode_rows(rows, &z))?)
}

fn encode_rows(rows: Vec<RegionKey>, z: &gtfs2vec::matrix::Matrix) -> Vec<gtfs2vec::autoencoder::Embedding> {
    rows.into_iter()
        .zip(z.iter_rows())
        .map(|(region, v)| gtfs2vec::autoencoder::Embedding { region, vector: v.to_vec() })
        .collect()
}

fn cmd_similar(embeddings: &Path, region: &str, k: usize, cross_city_only: bool, cities: Option<Vec<String>>) -> Result<()> {
    let index = load_index(embeddings)?;
    let query: RegionKey = region.parse()?;
    let filter = QueryFilter {
        cities: cities.map(|c| c.into_iter().collect::<BTreeSet<_>>()),
        exclude_same_city: cross_city_only,
    };
    let hits = nearest(&index, &query, k, &filter)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "rank,city_id,cell,distance")?;
    for (i, (key, d)) in hits.iter().enumerate() {
        writeln!(out, "{},{},{},{d:?}", i + 1, key.city_id, key.cell)?;
    }
    Ok(())
}

fn cmd_exemplars(embeddings: &Path, cuts: &Path, k: usize, cluster: usize, m: usize) -> Result<()> {
    let (rows, z) = io::read_embeddings(embeddings)?;
    let table = io::read_cuts(cuts)?;
    if table.rows != rows {
        bail!("{} and {} cover different regions", embeddings.display(), cuts.display());
    }
    let labels = table.cuts.get(&k).with_context(|| format!("{} has no label_k{k} column", cuts.display()))?;
    let cut = ClusterCut { k, labels: labels.clone() };
    let index = EmbeddingIndex::new(encode_rows(rows, &z))?;
    println!("city_id,cell");
    for key in cluster_center_exemplars(&index, &cut, cluster, m)? {
        println!("{},{}", key.city_id, key.cell);
    }
    Ok(())
}

fn cmd_export(features: &Path, cuts: Option<&Path>, level: &str, out: &Path) -> Result<()> {
    let level = ExportLevel::parse(level).with_context(|| format!("--level `{level}`: expected k<N> or features"))?;
    let raw = io::read_features(features)?;
    let table = match cuts {
        Some(p) => io::read_cuts(p)?,
        None if level == ExportLevel::Features => io::CutTable {
            rows: Vec::new(),
            cuts: Default::default(),
            typology: None,
        },
        None => bail!("--level {} needs --cuts", level.name()),
    };
    if let ExportLevel::Cut(k) = level {
        if !table.cuts.contains_key(&k) {
            bail!("cut table has no label_k{k} column");
        }
    }
    let records = build_records(&raw, None, None, &table);
    io::write_text(out, &export_geojson_string(&records, level))?;
    println!("{} features -> {}", records.len(), out.display());
    Ok(())
}

fn cmd_synth(out: &Path, seed: u64, with_underserved: bool) -> Result<()> {
    let out = std::path::absolute(out)?;
    let fixture = synth::write_archetype_fixture(&out.join("feeds"), seed, with_underserved)?;
    let config = out.join("run.toml");
    io::write_text(&config, &synth::config_toml(&fixture.cities, &out.join("out"), seed))?;
    println!("{} feeds in {}; run with: gtfs2vec run --config {}", fixture.cities.len(), out.join("feeds").display(), config.display());
    Ok(())
}
