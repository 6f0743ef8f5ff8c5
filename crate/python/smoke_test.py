"""Build a synthetic fixture, run the pipeline and exercise each binding.

    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/gtfs2vec-*.whl
    python python/smoke_test.py
"""

import json
import os
import sys
import tempfile

import gtfs2vec


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        config = gtfs2vec.write_synthetic_fixture(tmp, seed=7, with_underserved=True)

        feed = gtfs2vec.load_feed(os.path.join(tmp, "feeds", "alpha.zip"), "alpha", 450_000)
        passed, checks = feed.validate()
        assert passed, checks
        date = feed.default_service_date()
        events = feed.events(date)
        assert events and all(0 <= h < 48 for _, h, _ in events)

        table = gtfs2vec.extract_features([feed])
        assert len(table) > 0 and len(table.values[0]) == gtfs2vec.FEATURE_DIM
        assert table.columns()[0] == "trips_h06"

        norm = gtfs2vec.Normalizer.fit(table.values)
        scaled = norm.transform(table.values)
        assert all(0.0 <= v <= 1.0 for row in scaled for v in row)
        back = norm.inverse_transform(scaled)
        assert max(abs(a - b) for r, s in zip(back, table.values) for a, b in zip(r, s)) < 1e-9
        assert gtfs2vec.Normalizer.from_text(norm.to_text()).params == norm.params

        model, history = gtfs2vec.Autoencoder.train(scaled, epochs=50, seed=1)
        assert len(history) == 50 and history[-1] < history[0]
        assert model.param_count == 9602
        emb = model.encode(scaled)
        assert len(emb[0]) == 64
        again = gtfs2vec.Autoencoder.from_text(model.to_text())
        assert again.encode(scaled) == emb

        tree = gtfs2vec.Dendrogram.ward(emb)
        assert len(tree.merges) == len(emb) - 1
        assert len(set(tree.cut(3))) == 3

        labels, typology = gtfs2vec.cluster_regions(table, emb, cuts=[3, 9])
        assert sorted(labels) == [3, 9] and len(typology) == len(table)

        result = gtfs2vec.run_pipeline(config)
        assert list(result.excluded) == ["delta"], result.excluded
        assert len(result.loss_history) == 200
        assert "embeddings.csv" in result.artifacts
        names = set(t for t in result.typology if t)
        assert names == {"suburban", "mid-city", "hubs"}, names

        index = gtfs2vec.RegionIndex(result.regions, result.embeddings)
        query = result.regions[0]
        hits = index.nearest(query, k=5, exclude_same_city=True)
        assert len(hits) == 5 and all(not r.startswith("alpha:") for r, _ in hits)
        assert [d for _, d in hits] == sorted(d for _, d in hits)
        assert len(index.exemplars(result.labels(3), 0, 2)) == 2

        geo = json.loads(result.geojson("k3"))
        assert geo["type"] == "FeatureCollection" and len(geo["features"]) == len(result)

    print(f"smoke test ok: {len(result)} regions, typology {sorted(names)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
