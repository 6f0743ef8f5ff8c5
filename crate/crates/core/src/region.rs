//! Micro-regions: H3 cells that contain transit stops.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use h3o::{CellIndex, LatLng, Resolution};
use thiserror::Error;

use crate::gtfs::Stop;

pub const DEFAULT_RESOLUTION: u8 = 8;

#[derive(Debug, Error, PartialEq)]
pub enum RegionError {
    #[error("invalid coordinate ({lat}, {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("invalid H3 resolution {0} (expected 0..=15)")]
    InvalidResolution(u8),
    #[error("invalid H3 cell `{0}`")]
    InvalidCell(String),
    #[error("invalid region key `{0}` (expected city:cell)")]
    InvalidRegionKey(String),
}

/// A valid H3 cell index. Displays as 15 lowercase hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId(CellIndex);

impl CellId {
    pub fn from_u64(value: u64) -> Result<Self, RegionError> {
        CellIndex::try_from(value)
            .map(CellId)
            .map_err(|_| RegionError::InvalidCell(format!("{value:x}")))
    }

    pub fn value(self) -> u64 {
        u64::from(self.0)
    }

    pub fn resolution(self) -> u8 {
        u8::from(self.0.resolution())
    }

    pub fn is_pentagon(self) -> bool {
        self.0.is_pentagon()
    }

    pub fn parent(self, resolution: u8) -> Option<CellId> {
        let res = Resolution::try_from(resolution).ok()?;
        self.0.parent(res).map(CellId)
    }

    /// Cell centre as (lat, lon) degrees.
    pub fn center(self) -> (f64, f64) {
        let ll = LatLng::from(self.0);
        (ll.lat(), ll.lng())
    }

    /// Cells within `k` grid steps, sorted by index.
    pub fn grid_disk(self, k: u32) -> Vec<CellId> {
        let mut cells: Vec<CellId> = self.0.grid_disk::<Vec<_>>(k).into_iter().map(CellId).collect();
        cells.sort();
        cells
    }

    /// The 12 pentagons at `resolution`.
    pub fn pentagons(resolution: u8) -> Result<Vec<CellId>, RegionError> {
        let res = Resolution::try_from(resolution).map_err(|_| RegionError::InvalidResolution(resolution))?;
        Ok(res.pentagons().map(CellId).collect())
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:015x}", self.value())
    }
}

impl FromStr for CellId {
    type Err = RegionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let value = u64::from_str_radix(s.trim(), 16).map_err(|_| RegionError::InvalidCell(s.to_string()))?;
        CellId::from_u64(value)
    }
}

/// A micro-region: one cell within one city. Orders by (city_id, cell), which
/// matches ordering by the fixed-width hex string.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RegionKey {
    pub city_id: String,
    pub cell: CellId,
}

impl RegionKey {
    pub fn new(city_id: impl Into<String>, cell: CellId) -> Self {
        RegionKey {
            city_id: city_id.into(),
            cell,
        }
    }
}

impl fmt::Display for RegionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.city_id, self.cell)
    }
}

impl FromStr for RegionKey {
    type Err = RegionError;

    /// Parses `city:cell`; the city id may itself contain colons.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (city, cell) = s
            .rsplit_once(':')
            .filter(|(c, _)| !c.is_empty())
            .ok_or_else(|| RegionError::InvalidRegionKey(s.to_string()))?;
        Ok(RegionKey::new(city, cell.parse()?))
    }
}

pub fn assign_cell(lat: f64, lon: f64, resolution: u8) -> Result<CellId, RegionError> {
    if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(RegionError::InvalidCoordinate { lat, lon });
    }
    let res = Resolution::try_from(resolution).map_err(|_| RegionError::InvalidResolution(resolution))?;
    let ll = LatLng::new(lat, lon).map_err(|_| RegionError::InvalidCoordinate { lat, lon })?;
    Ok(CellId(ll.to_cell(res)))
}

/// Group stops by the cell that contains them. Cells without stops do not
/// appear; each stop lands in exactly one region.
pub fn group_stops_by_region(
    stops: &[Stop],
    city_id: &str,
    resolution: u8,
) -> Result<BTreeMap<RegionKey, Vec<String>>, RegionError> {
    let mut regions: BTreeMap<RegionKey, Vec<String>> = BTreeMap::new();
    for stop in stops {
        let cell = assign_cell(stop.lat, stop.lon, resolution)?;
        regions
            .entry(RegionKey::new(city_id, cell))
            .or_default()
            .push(stop.stop_id.clone());
    }
    Ok(regions)
}

/// Boundary vertices as (lat, lon), counterclockwise, not closed.
pub fn cell_boundary(cell: CellId) -> Vec<(f64, f64)> {
    cell.0.boundary().iter().map(|ll| (ll.lat(), ll.lng())).collect()
}

/// A polygon with (lat, lon) rings. Rings need not be closed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeoPolygon {
    pub exterior: Vec<(f64, f64)>,
    pub holes: Vec<Vec<(f64, f64)>>,
}

impl GeoPolygon {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        ring_contains(&self.exterior, lat, lon) && !self.holes.iter().any(|h| ring_contains(h, lat, lon))
    }
}

fn ring_contains(ring: &[(f64, f64)], lat: f64, lon: f64) -> bool {
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let (ya, xa) = ring[i];
        let (yb, xb) = ring[(i + n - 1) % n];
        if (ya > lat) != (yb > lat) && lon < (xb - xa) * (lat - ya) / (yb - ya) + xa {
            inside = !inside;
        }
    }
    inside
}

/// Every cell whose centre lies inside one of the polygons.
///
/// The polygons' bounding box is sampled on a lattice finer than a third of
/// the cell edge, so every cell whose centre is inside gets hit by a sample.
pub fn cells_covering(polygons: &[GeoPolygon], resolution: u8) -> Result<BTreeSet<CellId>, RegionError> {
    let res = Resolution::try_from(resolution).map_err(|_| RegionError::InvalidResolution(resolution))?;
    let mut out = BTreeSet::new();
    for poly in polygons {
        let Some(&(lat0, lon0)) = poly.exterior.first() else {
            continue;
        };
        let (mut s, mut n, mut w, mut e) = (lat0, lat0, lon0, lon0);
        for &(lat, lon) in &poly.exterior {
            s = s.min(lat);
            n = n.max(lat);
            w = w.min(lon);
            e = e.max(lon);
        }
        let step_km = res.edge_length_km() / 3.0;
        let dlat = step_km / 111.0;
        let dlon = dlat / s.abs().max(n.abs()).to_radians().cos().max(0.01);
        let mut seen = BTreeSet::new();
        let mut lat = s;
        while lat <= n + dlat {
            let mut lon = w;
            while lon <= e + dlon {
                if let Ok(ll) = LatLng::new(lat.clamp(-90.0, 90.0), lon) {
                    seen.insert(ll.to_cell(res));
                }
                lon += dlon;
            }
            lat += dlat;
        }
        for cell in seen {
            let c = LatLng::from(cell);
            if poly.contains(c.lat(), c.lng()) {
                out.insert(CellId(cell));
            }
        }
    }
    Ok(out)
}
