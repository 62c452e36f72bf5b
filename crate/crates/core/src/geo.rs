//! Spherical coordinates, great-circle distances and the uniform lon/lat grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used for every distance in the crate.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// A position in degrees. Longitude is kept in `[-180, 180)`.
///
/// The fields are public so raw (possibly invalid) positions read from AIS
/// feeds can be represented before sentinel filtering; use [`GeoPoint::new`]
/// to get a checked, normalized point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        if !lon.is_finite() || !lat.is_finite() || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::InvalidPoint { lon, lat });
        }
        Ok(Self {
            lon: normalize_lon(lon),
            lat,
        })
    }

    /// True when the raw fields describe a real position (AIS uses lon 181 /
    /// lat 91 as "not available").
    pub fn is_valid(&self) -> bool {
        self.lon.is_finite()
            && self.lat.is_finite()
            && (-180.0..=180.0).contains(&self.lon)
            && (-90.0..=90.0).contains(&self.lat)
    }

    pub fn to_radians(self) -> (f64, f64) {
        (self.lon.to_radians(), self.lat.to_radians())
    }
}

/// Wraps a longitude into `[-180, 180)`; 180 maps to -180.
pub fn normalize_lon(lon: f64) -> f64 {
    let wrapped = (lon + 180.0).rem_euclid(360.0) - 180.0;
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if wrapped >= 180.0 {
        wrapped - 360.0
    } else {
        wrapped
    }
}

/// Smallest absolute longitude difference, in `[0, 180]`.
pub fn lon_delta(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lon1, lat1) = a.to_radians();
    let (lon2, lat2) = b.to_radians();
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Initial great-circle bearing from `a` to `b`, degrees in `[0, 360)`.
pub fn bearing_deg(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lon1, lat1) = a.to_radians();
    let (lon2, lat2) = b.to_radians();
    let dlon = lon2 - lon1;
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    y.atan2(x).to_degrees().rem_euclid(360.0)
}

/// Point at fraction `t` of the great circle from `a` to `b`.
pub fn interpolate(a: GeoPoint, b: GeoPoint, t: f64) -> GeoPoint {
    let (lon1, lat1) = a.to_radians();
    let (lon2, lat2) = b.to_radians();
    let delta = haversine_km(a, b) / EARTH_RADIUS_KM;
    if delta < 1e-12 {
        return a;
    }
    let sa = ((1.0 - t) * delta).sin() / delta.sin();
    let sb = (t * delta).sin() / delta.sin();
    let x = sa * lat1.cos() * lon1.cos() + sb * lat2.cos() * lon2.cos();
    let y = sa * lat1.cos() * lon1.sin() + sb * lat2.cos() * lon2.sin();
    let z = sa * lat1.sin() + sb * lat2.sin();
    GeoPoint {
        lon: normalize_lon(y.atan2(x).to_degrees()),
        lat: z.atan2((x * x + y * y).sqrt()).to_degrees(),
    }
}

/// Destination point after travelling `distance_km` on `bearing` degrees.
pub fn destination(from: GeoPoint, bearing: f64, distance_km: f64) -> GeoPoint {
    let (lon1, lat1) = from.to_radians();
    let ang = distance_km / EARTH_RADIUS_KM;
    let brg = bearing.to_radians();
    let lat2 = (lat1.sin() * ang.cos() + lat1.cos() * ang.sin() * brg.cos()).asin();
    let lon2 = lon1
        + (brg.sin() * ang.sin() * lat1.cos()).atan2(ang.cos() - lat1.sin() * lat2.sin());
    GeoPoint {
        lon: normalize_lon(lon2.to_degrees()),
        lat: lat2.to_degrees(),
    }
}

/// Uniform lon/lat grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    cell_size: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { cell_size: 1.0 }
    }
}

impl GridSpec {
    pub fn new(cell_size: f64) -> Result<Self> {
        let divides = |span: f64| {
            let n = span / cell_size;
            (n - n.round()).abs() < 1e-9
        };
        if !(cell_size > 0.0) || !divides(360.0) || !divides(180.0) {
            return Err(Error::Config(format!(
                "grid cell size {cell_size} must be positive and divide 360 and 180"
            )));
        }
        Ok(Self { cell_size })
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn cols(&self) -> u32 {
        (360.0 / self.cell_size).round() as u32
    }

    pub fn rows(&self) -> u32 {
        (180.0 / self.cell_size).round() as u32
    }

    pub fn cell(&self, col: u32, row: u32) -> GridCell {
        GridCell {
            col,
            row,
            center: GeoPoint {
                lon: (col as f64 + 0.5) * self.cell_size - 180.0,
                lat: (row as f64 + 0.5) * self.cell_size - 90.0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub col: u32,
    pub row: u32,
    pub center: GeoPoint,
}

impl GridCell {
    pub fn same_cell(&self, other: &GridCell) -> bool {
        self.col == other.col && self.row == other.row
    }
}

pub fn cell_of(p: GeoPoint, spec: &GridSpec) -> GridCell {
    let lon = normalize_lon(p.lon);
    let col = ((lon + 180.0) / spec.cell_size).floor() as i64;
    let row = ((p.lat + 90.0) / spec.cell_size).floor() as i64;
    let col = col.clamp(0, spec.cols() as i64 - 1) as u32;
    let row = row.clamp(0, spec.rows() as i64 - 1) as u32;
    spec.cell(col, row)
}
