//! Public-transport offer typology from GTFS timetables.
//!
//! Pipeline: GTFS feeds → hourly departure events → H3 micro-regions →
//! 34 hourly features per region → block-wise min-max scaling → autoencoder
//! embeddings → Ward clustering → suburban / mid-city / hubs typology.

pub mod autoencoder;
pub mod cluster;
pub mod config;
pub mod features;
pub mod geojson;
pub mod gtfs;
pub mod io;
pub mod matrix;
pub mod normalize;
pub mod pipeline;
pub mod region;
pub mod similarity;
pub mod synth;
