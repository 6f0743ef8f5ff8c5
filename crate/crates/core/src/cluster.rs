//! Agglomerative clustering with Ward linkage, dendrogram cuts and the
//! three-way typology naming.
//!
//! Merges are found with the nearest-neighbour chain algorithm. Ward
//! distances between clusters are computed on the fly from centroids and
//! sizes,
//!
//! ```text
//! d(A, B) = sqrt(2·|A|·|B| / (|A| + |B|)) · ‖c_A − c_B‖
//! ```
//!
//! which equals the Lance–Williams Ward update and reduces to the euclidean
//! distance for two singletons. Memory stays O(N·d).

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::matrix::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("vectors have different lengths ({0} vs {1})")]
    ShapeMismatch(usize, usize),
    #[error("need at least 2 finite points to cluster, got {0}")]
    DegenerateInput(usize),
    #[error("k = {k} is outside 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("typology naming needs a 3-cluster cut, got k = {0}")]
    NotThreeClusters(usize),
    #[error("bad dendrogram file: {0}")]
    Parse(String),
}

pub fn euclidean_distance(x: &[f64], y: &[f64]) -> Result<f64, ClusterError> {
    if x.len() != y.len() {
        return Err(ClusterError::ShapeMismatch(x.len(), y.len()));
    }
    Ok(squared_distance(x, y).sqrt())
}

#[inline]
fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// One agglomeration step. Leaves are nodes `0..n`; merge `i` creates node
/// `n + i`. `left < right`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    pub merges: Vec<Merge>,
    pub leaf_count: usize,
}

/// Parallelise nearest-neighbour scans above this many active clusters.
const PARALLEL_SCAN: usize = 4096;

struct Clusters<'a> {
    points: &'a Matrix,
    centroid: Vec<Vec<f64>>,
    size: Vec<usize>,
    active: Vec<bool>,
}

impl Clusters<'_> {
    /// Singletons keep no centroid copy; their point is the centroid.
    fn centroid(&self, i: usize) -> &[f64] {
        if self.size[i] == 1 {
            self.points.row(i)
        } else {
            &self.centroid[i]
        }
    }

    fn ward(&self, a: usize, b: usize) -> f64 {
        let (na, nb) = (self.size[a] as f64, self.size[b] as f64);
        let sq = squared_distance(self.centroid(a), self.centroid(b));
        (2.0 * na * nb / (na + nb) * sq).sqrt()
    }

    /// Nearest active cluster to `a`; ties go to `prefer` when given, then to
    /// the smallest index.
    fn nearest(&self, a: usize, prefer: Option<usize>, n_active: usize) -> (usize, f64) {
        let n = self.active.len();
        let best = if n_active > PARALLEL_SCAN {
            (0..n)
                .into_par_iter()
                .filter(|&j| j != a && self.active[j])
                .map(|j| (self.ward(a, j), j))
                .reduce(|| (f64::INFINITY, usize::MAX), |x, y| if y.0 < x.0 || (y.0 == x.0 && y.1 < x.1) { y } else { x })
        } else {
            let mut best = (f64::INFINITY, usize::MAX);
            for j in 0..n {
                if j != a && self.active[j] {
                    let d = self.ward(a, j);
                    if d < best.0 {
                        best = (d, j);
                    }
                }
            }
            best
        };
        if let Some(p) = prefer {
            let d = self.ward(a, p);
            if d <= best.0 {
                return (p, d);
            }
        }
        (best.1, best.0)
    }

    fn merge(&mut self, a: usize, b: usize) {
        let (na, nb) = (self.size[a] as f64, self.size[b] as f64);
        let merged: Vec<f64> = self
            .centroid(a)
            .iter()
            .zip(self.centroid(b))
            .map(|(x, y)| (na * x + nb * y) / (na + nb))
            .collect();
        self.centroid[a] = merged;
        self.centroid[b] = Vec::new();
        self.size[a] += self.size[b];
        self.active[b] = false;
    }
}

/// Ward agglomeration of the rows of `points`.
///
/// Merges are reported in nondecreasing height order with node ids
/// assigned as in the usual linkage-matrix convention.
pub fn ward_agglomerate(points: &Matrix) -> Result<Dendrogram, ClusterError> {
    let n = points.rows();
    if n < 2 {
        return Err(ClusterError::DegenerateInput(n));
    }
    if points.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(ClusterError::DegenerateInput(n));
    }
    let mut c = Clusters {
        points,
        centroid: vec![Vec::new(); n],
        size: vec![1; n],
        active: vec![true; n],
    };
    // (slot kept, slot absorbed, height)
    let mut raw: Vec<(usize, usize, f64)> = Vec::with_capacity(n - 1);
    let mut chain: Vec<usize> = Vec::new();
    let mut n_active = n;
    while n_active > 1 {
        if chain.is_empty() {
            chain.push(c.active.iter().position(|&a| a).expect("an active cluster"));
        }
        let (a, b, height) = loop {
            let a = *chain.last().expect("non-empty chain");
            let prev = chain.len().checked_sub(2).map(|i| chain[i]);
            let (b, d) = c.nearest(a, prev, n_active);
            if Some(b) == prev {
                break (a, b, d);
            }
            chain.push(b);
        };
        chain.truncate(chain.len() - 2);
        let (keep, drop) = (a.min(b), a.max(b));
        c.merge(keep, drop);
        raw.push((keep, drop, height));
        n_active -= 1;
    }

    // Chain order is not height order; sort (stable) and relabel.
    raw.sort_by(|x, y| x.2.total_cmp(&y.2));
    let mut parent: Vec<usize> = (0..n).collect();
    let mut node: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let merges = raw
        .into_iter()
        .enumerate()
        .map(|(i, (a, b, height))| {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            let (na, nb) = (node[ra], node[rb]);
            parent[rb] = ra;
            size[ra] += size[rb];
            node[ra] = n + i;
            Merge {
                left: na.min(nb),
                right: na.max(nb),
                height,
                size: size[ra],
            }
        })
        .collect();
    Ok(Dendrogram { merges, leaf_count: n })
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// A flat partition. Label 0 is the largest cluster; equal sizes are ordered
/// by their smallest member index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterCut {
    pub k: usize,
    pub labels: Vec<usize>,
}

impl ClusterCut {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == cluster).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

/// Undo the last `k − 1` merges.
pub fn cut(dendrogram: &Dendrogram, k: usize) -> Result<ClusterCut, ClusterError> {
    let n = dendrogram.leaf_count;
    if k == 0 || k > n {
        return Err(ClusterError::InvalidK { k, n });
    }
    let mut parent: Vec<usize> = (0..n + dendrogram.merges.len()).collect();
    for (i, m) in dendrogram.merges.iter().take(n - k).enumerate() {
        parent[m.left] = n + i;
        parent[m.right] = n + i;
    }
    let roots: Vec<usize> = (0..n).map(|leaf| find(&mut parent, leaf)).collect();
    // root → (size, first leaf)
    let mut groups: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (leaf, &r) in roots.iter().enumerate() {
        groups.entry(r).or_insert((0, leaf)).0 += 1;
    }
    let mut order: Vec<(usize, usize, usize)> = groups.into_iter().map(|(r, (s, f))| (r, s, f)).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let label_of: BTreeMap<usize, usize> = order.iter().enumerate().map(|(l, &(r, _, _))| (r, l)).collect();
    Ok(ClusterCut {
        k,
        labels: roots.iter().map(|r| label_of[r]).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub cluster_id: usize,
    pub region_count: usize,
    pub mean_sum_trips: f64,
    pub mean_directions_whole_day: f64,
}

/// Per-cluster means of the whole-day aggregates, from raw counts.
/// `directions_whole_day` is the sum of the 17 hourly direction counts.
pub fn cluster_summary(cut: &ClusterCut, raw: &FeatureMatrix) -> Vec<ClusterSummary> {
    assert_eq!(cut.labels.len(), raw.len(), "cut and matrix cover different regions");
    let mut acc = vec![(0usize, 0.0, 0.0); cut.k];
    for (i, &l) in cut.labels.iter().enumerate() {
        acc[l].0 += 1;
        acc[l].1 += raw.sum_trips(i);
        acc[l].2 += raw.directions_whole_day(i);
    }
    acc.into_iter()
        .enumerate()
        .filter(|(_, (n, _, _))| *n > 0)
        .map(|(id, (n, t, d))| ClusterSummary {
            cluster_id: id,
            region_count: n,
            mean_sum_trips: t / n as f64,
            mean_directions_whole_day: d / n as f64,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Typology {
    Suburban,
    MidCity,
    Hubs,
}

impl Typology {
    pub fn as_str(self) -> &'static str {
        match self {
            Typology::Suburban => "suburban",
            Typology::MidCity => "mid-city",
            Typology::Hubs => "hubs",
        }
    }
}

impl fmt::Display for Typology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Name the clusters of a 3-cut by ascending mean whole-day trips. Ties fall
/// back to mean directions, then to cluster id.
pub fn assign_typology(cut: &ClusterCut, summaries: &[ClusterSummary]) -> Result<BTreeMap<usize, Typology>, ClusterError> {
    if cut.k != 3 || summaries.len() != 3 {
        return Err(ClusterError::NotThreeClusters(cut.k));
    }
    let mut order: Vec<&ClusterSummary> = summaries.iter().collect();
    order.sort_by(|a, b| {
        a.mean_sum_trips
            .total_cmp(&b.mean_sum_trips)
            .then(a.mean_directions_whole_day.total_cmp(&b.mean_directions_whole_day))
            .then(a.cluster_id.cmp(&b.cluster_id))
    });
    Ok(order
        .into_iter()
        .zip([Typology::Suburban, Typology::MidCity, Typology::Hubs])
        .map(|(s, t)| (s.cluster_id, t))
        .collect())
}

impl Dendrogram {
    /// `step,left,right,height,size` table.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# leaves={}\nstep,left,right,height,size\n", self.leaf_count);
        for (i, m) in self.merges.iter().enumerate() {
            s.push_str(&format!("{i},{},{},{:?},{}\n", m.left, m.right, m.height, m.size));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, ClusterError> {
        let err = |m: &str| ClusterError::Parse(m.to_string());
        let mut lines = text.lines();
        let leaf_count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("# leaves="))
            .and_then(|v| v.trim().parse().ok())
            .ok_or_else(|| err("missing `# leaves=` line"))?;
        if lines.next().map(str::trim) != Some("step,left,right,height,size") {
            return Err(err("missing header"));
        }
        let mut merges = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(err("expected 5 fields"));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|_| err("bad integer"));
            merges.push(Merge {
                left: num(f[1])?,
                right: num(f[2])?,
                height: f[3].parse().map_err(|_| err("bad height"))?,
                size: num(f[4])?,
            });
        }
        if merges.len() + 1 != leaf_count {
            return Err(err("merge count must be leaves − 1"));
        }
        Ok(Dendrogram { merges, leaf_count })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows, rows[0].len()).unwrap()
    }

    #[test]
    fn distance_basics() {
        assert_eq!(euclidean_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(euclidean_distance(&[1.5, 2.0], &[1.5, 2.0]).unwrap(), 0.0);
        assert_eq!(euclidean_distance(&[1.0], &[1.0, 2.0]), Err(ClusterError::ShapeMismatch(1, 2)));
    }

    #[test]
    fn two_points() {
        let d = ward_agglomerate(&pts(&[&[0.0, 0.0], &[3.0, 4.0]])).unwrap();
        assert_eq!(d.merges, vec![Merge { left: 0, right: 1, height: 5.0, size: 2 }]);
    }

    #[test]
    fn collinear_points() {
        let d = ward_agglomerate(&pts(&[&[10.0], &[0.0], &[1.0]])).unwrap();
        assert_eq!((d.merges[0].left, d.merges[0].right), (1, 2));
        assert_eq!(d.merges[0].height, 1.0);
        assert_eq!((d.merges[1].left, d.merges[1].right), (0, 3));
        // sqrt(2·2·1/3)·9.5
        assert!((d.merges[1].height - (4.0f64 / 3.0).sqrt() * 9.5).abs() < 1e-12);
    }

    // Linkage computed with scipy.cluster.hierarchy.linkage(X, "ward") for
    // X = [[0,0],[0,1],[4,0],[4,1.5],[10,10]].
    #[test]
    fn reference_linkage() {
        let d = ward_agglomerate(&pts(&[&[0.0, 0.0], &[0.0, 1.0], &[4.0, 0.0], &[4.0, 1.5], &[10.0, 10.0]])).unwrap();
        let expected = [
            (0, 1, 1.0, 2),
            (2, 3, 1.5, 2),
            (5, 6, 5.667892024377317, 4),
            (4, 7, 15.589259122870466, 5),
        ];
        for (m, (l, r, h, s)) in d.merges.iter().zip(expected) {
            assert_eq!((m.left, m.right, m.size), (l, r, s));
            assert!((m.height - h).abs() < 1e-9 * h, "{} vs {h}", m.height);
        }
    }

    #[test]
    fn degenerate() {
        assert_eq!(ward_agglomerate(&Matrix::zeros(1, 3)), Err(ClusterError::DegenerateInput(1)));
        let mut m = Matrix::zeros(3, 2);
        m.set(1, 1, f64::NAN);
        assert!(ward_agglomerate(&m).is_err());
    }

    #[test]
    fn cut_extremes_and_errors() {
        let d = ward_agglomerate(&pts(&[&[0.0], &[1.0], &[5.0], &[5.5]])).unwrap();
        let all = cut(&d, 4).unwrap();
        let mut l = all.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2, 3]);
        assert_eq!(cut(&d, 1).unwrap().labels, vec![0; 4]);
        assert_eq!(cut(&d, 0), Err(ClusterError::InvalidK { k: 0, n: 4 }));
        assert!(cut(&d, 5).is_err());
        let two = cut(&d, 2).unwrap();
        assert_eq!(two.labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn labels_by_size() {
        let d = ward_agglomerate(&pts(&[&[100.0], &[0.0], &[0.1], &[0.2]])).unwrap();
        assert_eq!(cut(&d, 2).unwrap().labels, vec![1, 0, 0, 0]);
    }

    #[test]
    fn dendrogram_csv_roundtrip() {
        let d = ward_agglomerate(&pts(&[&[0.0, 1.0], &[1.0, 1.0], &[5.0, 2.0], &[0.3, 7.0]])).unwrap();
        assert_eq!(Dendrogram::from_csv(&d.to_csv()).unwrap(), d);
        assert!(Dendrogram::from_csv("step,left\n").is_err());
    }

    fn summary(id: usize, trips: f64, dirs: f64) -> ClusterSummary {
        ClusterSummary { cluster_id: id, region_count: 1, mean_sum_trips: trips, mean_directions_whole_day: dirs }
    }

    #[test]
    fn typology_order() {
        let cut3 = ClusterCut { k: 3, labels: vec![0, 1, 2] };
        let names = assign_typology(&cut3, &[summary(0, 80.0, 5.0), summary(1, 400.0, 9.0), summary(2, 5.0, 1.0)]).unwrap();
        assert_eq!(names[&2], Typology::Suburban);
        assert_eq!(names[&0], Typology::MidCity);
        assert_eq!(names[&1], Typology::Hubs);

        // Equal trips: fewer directions is more suburban, then lower id.
        let names = assign_typology(&cut3, &[summary(0, 10.0, 5.0), summary(1, 10.0, 2.0), summary(2, 10.0, 2.0)]).unwrap();
        assert_eq!((names[&1], names[&2], names[&0]), (Typology::Suburban, Typology::MidCity, Typology::Hubs));

        let cut2 = ClusterCut { k: 2, labels: vec![0, 1] };
        assert!(assign_typology(&cut2, &[summary(0, 1.0, 1.0), summary(1, 2.0, 2.0)]).is_err());
    }

    fn partition_sets(labels: &[usize], perm: &[usize]) -> Vec<Vec<usize>> {
        // Map labels back to original indices and canonicalize.
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut sets = vec![Vec::new(); k];
        for (pos, &l) in labels.iter().enumerate() {
            sets[l].push(perm[pos]);
        }
        for s in &mut sets {
            s.sort();
        }
        sets.sort();
        sets
    }

    proptest! {
        #[test]
        fn nesting_and_monotone(points in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 3), 2..40)) {
            let m = Matrix::from_rows(&points, 3).unwrap();
            let d = ward_agglomerate(&m).unwrap();
            prop_assert_eq!(d.merges.len(), m.rows() - 1);
            for w in d.merges.windows(2) {
                prop_assert!(w[0].height <= w[1].height);
            }
            for k1 in 1..=m.rows().min(6) {
                let c1 = cut(&d, k1).unwrap();
                prop_assert_eq!(c1.sizes().len(), k1);
                for k2 in k1..=m.rows().min(10) {
                    let c2 = cut(&d, k2).unwrap();
                    // each fine cluster maps to one coarse cluster
                    let mut map = BTreeMap::new();
                    for (a, b) in c2.labels.iter().zip(&c1.labels) {
                        prop_assert_eq!(*map.entry(*a).or_insert(*b), *b);
                    }
                }
            }
        }

        #[test]
        fn permutation_invariant(
            points in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 4), 3..25),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let n = points.len();
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = Matrix::from_rows(&points, 4).unwrap();
            let shuffled: Vec<_> = perm.iter().map(|&i| points[i].clone()).collect();
            let b = Matrix::from_rows(&shuffled, 4).unwrap();
            let da = ward_agglomerate(&a).unwrap();
            let db = ward_agglomerate(&b).unwrap();
            for (x, y) in da.merges.iter().zip(&db.merges) {
                prop_assert!((x.height - y.height).abs() <= 1e-9 * x.height.max(1e-12));
            }
            let identity: Vec<usize> = (0..n).collect();
            for k in [2, 3, n.min(5)] {
                prop_assert_eq!(
                    partition_sets(&cut(&da, k).unwrap().labels, &identity),
                    partition_sets(&cut(&db, k).unwrap().labels, &perm)
                );
            }
        }
    }
}
