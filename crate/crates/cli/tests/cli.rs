use std::path::Path;
use std::process::{Command, Output};

fn gtfs2vec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gtfs2vec")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gtfs2vec(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_then_run_then_query() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    ok(&["synth", "--out", s(root), "--with-underserved"]);
    let stdout = ok(&["run", "--config", s(&root.join("run.toml"))]);
    assert!(stdout.contains("delta: excluded"), "{stdout}");
    let out = root.join("out");
    for f in ["manifest.txt", "cuts.csv", "regions_k3.geojson", "regions_k9.geojson", "regions_features.geojson"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    let emb = out.join("embeddings.csv");
    let cuts = std::fs::read_to_string(out.join("cuts.csv")).unwrap();
    let first = cuts.lines().nth(1).unwrap();
    let mut fields = first.split(',');
    let region = format!("{}:{}", fields.next().unwrap(), fields.next().unwrap());

    let similar = ok(&["similar", "--embeddings", s(&emb), "--region", &region, "--k", "5", "--cross-city-only"]);
    let lines: Vec<&str> = similar.lines().collect();
    assert_eq!(lines[0], "rank,city_id,cell,distance");
    assert_eq!(lines.len(), 6);
    assert!(lines[1..].iter().all(|l| !l.contains(&format!(",{},", region.split(':').next().unwrap()))));

    let ex = ok(&["exemplars", "--embeddings", s(&emb), "--cuts", s(&out.join("cuts.csv")), "--cluster", "0", "--m", "2"]);
    assert_eq!(ex.lines().count(), 3);

    let unknown = gtfs2vec(&["similar", "--embeddings", s(&emb), "--region", "nowhere:881e20408bfffff"]);
    assert!(!unknown.status.success());
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("not in the index"));
}

#[test]
fn stages_run_standalone() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    ok(&["synth", "--out", s(root), "--with-underserved"]);
    let feeds = root.join("feeds");
    let ingest = root.join("ingest");
    for city in ["alpha", "beta", "gamma"] {
        ok(&[
            "ingest", "--gtfs", s(&feeds.join(format!("{city}.zip"))), "--city", city,
            "--population", "500000", "--date", "2024-03-06", "--out", s(&ingest.join(city)),
        ]);
    }
    let failed = gtfs2vec(&[
        "ingest", "--gtfs", s(&feeds.join("delta.zip")), "--city", "delta",
        "--population", "500000", "--out", s(&root.join("delta")),
    ]);
    assert!(!failed.status.success());
    assert!(std::fs::read_to_string(root.join("delta/validation.csv")).unwrap().contains("route_count,fail"));

    let features = root.join("features.csv");
    ok(&["features", "--in", s(&ingest), "--out", s(&features)]);
    let header = std::fs::read_to_string(&features).unwrap();
    assert!(header.starts_with("city_id,cell,trips_h06,"));

    let norm = root.join("norm.txt");
    let model = root.join("model.txt");
    ok(&["train", "--features", s(&features), "--norm", s(&norm), "--out", s(&model), "--epochs", "20", "--loss-out", s(&root.join("loss.csv"))]);
    assert!(norm.is_file());
    let emb = root.join("emb.csv");
    ok(&["embed", "--features", s(&features), "--norm", s(&norm), "--model", s(&model), "--out", s(&emb)]);
    let clusters = root.join("clusters");
    ok(&["cluster", "--embeddings", s(&emb), "--features", s(&features), "--cuts", "3,9", "--out", s(&clusters)]);
    let geo = root.join("k9.geojson");
    ok(&["export", "--features", s(&features), "--cuts", s(&clusters.join("cuts.csv")), "--level", "k9", "--out", s(&geo)]);
    let text = std::fs::read_to_string(&geo).unwrap();
    assert!(text.starts_with("{\"features\":[{"));
    ok(&["export", "--features", s(&features), "--level", "features", "--out", s(&root.join("f.geojson"))]);
    assert!(!gtfs2vec(&["export", "--features", s(&features), "--level", "k3", "--out", s(&root.join("x.geojson"))]).status.success());
}
