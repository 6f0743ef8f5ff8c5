use std::collections::BTreeMap;

use gtfs2vec::config::RunConfig;
use gtfs2vec::io;
use gtfs2vec::pipeline::{cluster_stage, run};
use gtfs2vec::synth::write_archetype_fixture;

#[test]
fn full_run_excludes_underserved_city_and_recovers_archetypes() {
    let tmp = tempfile::tempdir().unwrap();
    let fixture = write_archetype_fixture(&tmp.path().join("feeds"), 7, true).unwrap();
    let config = RunConfig::new(fixture.cities.clone(), tmp.path().join("out"));
    let result = run(&config).unwrap();
    let m = &result.manifest;

    let excluded: Vec<_> = m.excluded().collect();
    assert_eq!(excluded.len(), 1);
    assert_eq!(excluded[0].city_id, "delta");
    assert!(excluded[0].failures.iter().any(|f| f.starts_with("route_count")));
    assert!(m.to_text().contains("delta\texcluded"));

    for p in [
        "features.csv",
        "norm_params.txt",
        "model.txt",
        "embeddings.csv",
        "dendrogram.csv",
        "cuts.csv",
        "regions_k3.geojson",
        "regions_k9.geojson",
        "regions_features.geojson",
    ] {
        let a = m.artifact(p).unwrap_or_else(|| panic!("{p} missing from manifest"));
        assert_eq!(a.sha256.len(), 64);
    }

    assert_eq!(result.records.len(), fixture.truth.len());
    let agree = result
        .records
        .iter()
        .filter(|r| r.typology.as_deref() == Some(fixture.truth[&r.region].typology().as_str()))
        .count();
    assert!(agree * 10 >= result.records.len() * 9, "{agree}/{} typology agreement", result.records.len());
    let mut names: BTreeMap<String, usize> = BTreeMap::new();
    for r in &result.records {
        *names.entry(r.typology.clone().unwrap()).or_default() += 1;
    }
    assert_eq!(names.len(), 3);

    let hist = &result.loss_history;
    assert_eq!(hist.len(), 200);
    assert!(hist.last().unwrap() < hist.first().unwrap());
}

#[test]
fn rerun_is_byte_identical_and_reuses_the_model() {
    let tmp = tempfile::tempdir().unwrap();
    let fixture = write_archetype_fixture(&tmp.path().join("feeds"), 3, false).unwrap();
    let mut config = RunConfig::new(fixture.cities, tmp.path().join("a"));
    config.train.epochs = 30;
    let a = run(&config).unwrap();
    assert!(a.cached_stages.is_empty());
    let again = run(&config).unwrap();
    assert_eq!(again.cached_stages, vec!["train"]);
    assert_eq!(again.manifest.artifacts, a.manifest.artifacts);

    config.output_dir = tmp.path().join("b");
    let b = run(&config).unwrap();
    assert_eq!(b.manifest.artifacts, a.manifest.artifacts);
    assert_eq!(
        std::fs::read(tmp.path().join("a/manifest.txt")).unwrap(),
        std::fs::read(tmp.path().join("b/manifest.txt")).unwrap()
    );

    // Clustering again from the stored embeddings gives the stored cuts.
    let (rows, emb) = io::read_embeddings(&tmp.path().join("a/embeddings.csv")).unwrap();
    let features = io::read_features(&tmp.path().join("a/features.csv")).unwrap();
    let outcome = cluster_stage(&rows, &emb, &features, &[3, 9]).unwrap();
    assert_eq!(outcome.cut_table(), io::read_cuts(&tmp.path().join("a/cuts.csv")).unwrap());
}
