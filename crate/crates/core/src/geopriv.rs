//! Adjustable location accuracy.
//!
//! Every app query reads the true fix first and only then transforms it
//! according to the app's policy, so an app cannot tell from timing which
//! policy is in force.
//!
//! Blurring is deterministic grid quantization. The globe is cut into
//! latitude rows of angular height `Δφ = grid_km / R` (degrees), counted from
//! the south pole. Each row is cut into longitude columns counted from -180°,
//! of width `Δφ / max(cos φ_e, 0.01)` where `φ_e` is the row's equatorward
//! edge, so that no column is wider than `grid_km` anywhere inside the row.
//! Cells are half-open (`[start, start + size)`), and the reported point is
//! the row's centre latitude with the column's centre longitude.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{validate_coordinate, DeviceError, GeoFix, SimTime};

/// Mean Earth radius (IUGG), km.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;
pub const MIN_GRID_KM: f64 = 1.0;
pub const MAX_GRID_KM: f64 = 500.0;
const MIN_COLUMN_COS: f64 = 0.01;

static BUNDLED_PLACES: &str = include_str!("../data/places.csv");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("grid size {0} km outside [1, 500]")]
    GridOutOfRange(f64),
    #[error(transparent)]
    Coordinate(#[from] DeviceError),
    #[error("gazetteer record {record}: {message}")]
    Gazetteer { record: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CoordinateWire")]
pub struct Coordinate {
    pub lat: f64,
    pub lon: f64,
}

impl Coordinate {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        let (lat, lon) = validate_coordinate(lat, lon)?;
        Ok(Coordinate { lat, lon })
    }
}

impl TryFrom<CoordinateWire> for Coordinate {
    type Error = GeoError;

    fn try_from(w: CoordinateWire) -> Result<Self, Self::Error> {
        Coordinate::new(w.lat, w.lon)
    }
}

#[derive(Deserialize)]
struct CoordinateWire {
    lat: f64,
    lon: f64,
}

/// Blur cell edge length in km, always within `[1, 500]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct GridSize(f64);

impl GridSize {
    pub fn km(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for GridSize {
    type Error = GeoError;

    fn try_from(km: f64) -> Result<Self, Self::Error> {
        if km.is_finite() && (MIN_GRID_KM..=MAX_GRID_KM).contains(&km) {
            Ok(GridSize(km))
        } else {
            Err(GeoError::GridOutOfRange(km))
        }
    }
}

impl From<GridSize> for f64 {
    fn from(g: GridSize) -> f64 {
        g.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LocationPolicy {
    Off,
    Precise,
    Fixed {
        #[serde(flatten)]
        position: Coordinate,
    },
    Blur { grid_km: GridSize },
}

impl LocationPolicy {
    pub fn blur(grid_km: f64) -> Result<Self, GeoError> {
        Ok(LocationPolicy::Blur { grid_km: GridSize::try_from(grid_km)? })
    }

    pub fn fixed(lat: f64, lon: f64) -> Result<Self, GeoError> {
        Ok(LocationPolicy::Fixed { position: Coordinate::new(lat, lon)? })
    }
}

impl fmt::Display for LocationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LocationPolicy::Off => f.write_str("off"),
            LocationPolicy::Precise => f.write_str("precise"),
            LocationPolicy::Fixed { position } => write!(f, "fixed({}, {})", position.lat, position.lon),
            LocationPolicy::Blur { grid_km } => write!(f, "blur({} km)", grid_km.km()),
        }
    }
}

/// Global default plus per-app exceptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationSettings {
    pub global_default: LocationPolicy,
    #[serde(default)]
    pub exceptions: BTreeMap<String, LocationPolicy>,
}

impl Default for LocationSettings {
    fn default() -> Self {
        LocationSettings { global_default: LocationPolicy::Precise, exceptions: BTreeMap::new() }
    }
}

impl LocationSettings {
    pub fn resolve_policy(&self, app_id: &str) -> LocationPolicy {
        self.exceptions.get(app_id).copied().unwrap_or(self.global_default)
    }

    /// Exception entries naming apps that `is_known` does not recognise.
    pub fn unknown_exceptions(&self, is_known: impl Fn(&str) -> bool) -> Vec<&str> {
        self.exceptions.keys().map(String::as_str).filter(|id| !is_known(id)).collect()
    }
}

/// What an app receives. `position` is `None` exactly when location is off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ReportedWire", into = "ReportedWire")]
pub struct ReportedLocation {
    pub position: Option<Coordinate>,
    pub timestamp: SimTime,
}

impl ReportedLocation {
    pub fn lat(&self) -> Option<f64> {
        self.position.map(|p| p.lat)
    }

    pub fn lon(&self) -> Option<f64> {
        self.position.map(|p| p.lon)
    }
}

#[derive(Serialize, Deserialize)]
struct ReportedWire {
    lat: Option<f64>,
    lon: Option<f64>,
    timestamp: SimTime,
}

impl From<ReportedWire> for ReportedLocation {
    fn from(w: ReportedWire) -> Self {
        let position = match (w.lat, w.lon) {
            (Some(lat), Some(lon)) => Some(Coordinate { lat, lon }),
            _ => None,
        };
        ReportedLocation { position, timestamp: w.timestamp }
    }
}

impl From<ReportedLocation> for ReportedWire {
    fn from(r: ReportedLocation) -> Self {
        ReportedWire { lat: r.lat(), lon: r.lon(), timestamp: r.timestamp }
    }
}

pub fn apply_policy(fix: &GeoFix, policy: &LocationPolicy) -> ReportedLocation {
    let position = match policy {
        LocationPolicy::Off => None,
        LocationPolicy::Precise => Some(Coordinate { lat: fix.lat, lon: fix.lon }),
        LocationPolicy::Fixed { position } => Some(*position),
        LocationPolicy::Blur { grid_km } => Some(quantize(fix.lat, fix.lon, *grid_km)),
    };
    ReportedLocation { position, timestamp: fix.timestamp }
}

/// Row/column indices, bounds and centre of the grid cell holding a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub row: i64,
    pub col: i64,
    pub south: f64,
    pub north: f64,
    pub west: f64,
    pub east: f64,
    pub center: Coordinate,
}

fn row_height_deg(grid: GridSize) -> f64 {
    (grid.km() / EARTH_RADIUS_KM).to_degrees()
}

// Half-open interval index: the largest i with origin + i*step <= x.
fn interval_index(x: f64, origin: f64, step: f64) -> i64 {
    let start = |i: i64| origin + i as f64 * step;
    let mut i = ((x - origin) / step).floor() as i64;
    while x < start(i) {
        i -= 1;
    }
    while x >= start(i + 1) {
        i += 1;
    }
    i
}

pub fn locate_cell(lat: f64, lon: f64, grid: GridSize) -> GridCell {
    let dphi = row_height_deg(grid);
    let row = interval_index(lat, -90.0, dphi);
    let south = -90.0 + row as f64 * dphi;
    let north = -90.0 + (row + 1) as f64 * dphi;
    let center_lat = (-90.0 + (row as f64 + 0.5) * dphi).min(90.0);

    let equatorward = if south <= 0.0 && north >= 0.0 { 0.0 } else { south.abs().min(north.abs()) };
    let dlambda = dphi / equatorward.to_radians().cos().max(MIN_COLUMN_COS);
    let col = interval_index(lon, -180.0, dlambda);
    let west = -180.0 + col as f64 * dlambda;
    let east = -180.0 + (col + 1) as f64 * dlambda;
    let mut center_lon = -180.0 + (col as f64 + 0.5) * dlambda;
    if center_lon >= 180.0 {
        center_lon -= 360.0;
    }

    GridCell {
        row,
        col,
        south,
        north,
        west,
        east,
        center: Coordinate { lat: center_lat, lon: center_lon },
    }
}

/// Centre of the grid cell containing `(lat, lon)`.
pub fn quantize(lat: f64, lon: f64, grid: GridSize) -> Coordinate {
    locate_cell(lat, lon, grid).center
}

/// Range-checked entry point taking a raw kilometre value.
pub fn quantize_fix(fix: &GeoFix, grid_km: f64) -> Result<ReportedLocation, GeoError> {
    let grid = GridSize::try_from(grid_km)?;
    Ok(ReportedLocation { position: Some(quantize(fix.lat, fix.lon, grid)), timestamp: fix.timestamp })
}

/// Great-circle distance in km.
pub fn haversine_km(a: Coordinate, b: Coordinate) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceKind {
    City,
    Country,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Place {
    pub name: String,
    pub kind: PlaceKind,
    pub lat: f64,
    pub lon: f64,
}

impl Place {
    pub fn coordinate(&self) -> Coordinate {
        Coordinate { lat: self.lat, lon: self.lon }
    }
}

/// Parses a gazetteer CSV with header `name,kind,lat,lon`.
pub fn parse_gazetteer(csv_text: &str) -> Result<Vec<Place>, GeoError> {
    let mut reader = csv::Reader::from_reader(csv_text.as_bytes());
    let mut places = Vec::new();
    for (idx, row) in reader.deserialize::<Place>().enumerate() {
        let err = |message: String| GeoError::Gazetteer { record: idx + 1, message };
        let place = row.map_err(|e| err(e.to_string()))?;
        Coordinate::new(place.lat, place.lon).map_err(|e| err(e.to_string()))?;
        places.push(place);
    }
    Ok(places)
}

/// The gazetteer shipped with the crate.
pub fn bundled_gazetteer() -> Vec<Place> {
    parse_gazetteer(BUNDLED_PLACES).expect("bundled gazetteer is valid")
}

/// Case-insensitive substring search ordered by (match position, name).
pub fn search_places<'a>(gazetteer: &'a [Place], query: &str) -> Vec<&'a Place> {
    let needle = query.to_lowercase();
    let mut hits: Vec<(usize, &Place)> = gazetteer
        .iter()
        .filter_map(|p| p.name.to_lowercase().find(&needle).map(|pos| (pos, p)))
        .collect();
    hits.sort_by(|(pa, a), (pb, b)| pa.cmp(pb).then_with(|| a.name.cmp(&b.name)));
    hits.into_iter().map(|(_, p)| p).collect()
}
