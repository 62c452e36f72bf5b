//! Port-to-port trajectory annotation: destination candidates from free text,
//! sticky positional status tags, cutting at port visits and validation.

mod status;
mod text;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{haversine_km, lon_delta, GeoPoint, EARTH_RADIUS_KM};
use crate::refine::filter_sentinels;

pub use status::{
    extract_trajectories, positional_status, validate_segment, RejectReason, StatusTag,
};
pub use text::{dl_distance, extract_candidates, regularize, similarity, CandidateMatcher};

pub const SEGMENT_SCHEMA_VERSION: u32 = 1;

/// One AIS report. Kinematic fields are `None` when absent or voided by
/// sentinel filtering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AisMessage {
    pub vessel_id: String,
    /// UTC seconds.
    pub timestamp: i64,
    /// UTC seconds.
    pub eta: Option<i64>,
    pub pos: GeoPoint,
    /// Knots.
    pub sog: Option<f64>,
    /// Degrees per minute.
    pub rot: Option<f64>,
    pub cog: Option<f64>,
    pub heading: Option<f64>,
    /// Meters.
    pub draught: Option<f64>,
    pub ship_type: usize,
    pub destination: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PortFile {
    port_id: usize,
    name: String,
    #[serde(default)]
    locode: String,
    polygon: Vec<[f64; 2]>,
}

/// A port with its polygon and the derived circular boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PortFile", into = "PortFile")]
pub struct PortRecord {
    pub port_id: usize,
    pub name: String,
    pub locode: String,
    pub polygon: Vec<GeoPoint>,
    pub center: GeoPoint,
    pub boundary_radius_km: f64,
}

pub const DEFAULT_BOUNDARY_ALPHA: f64 = 1.8;

impl PortRecord {
    /// Builds a port; the boundary radius is `alpha * sqrt(area / pi)`.
    pub fn from_polygon(
        port_id: usize,
        name: &str,
        locode: &str,
        polygon: Vec<GeoPoint>,
        alpha: f64,
    ) -> Result<Self> {
        if polygon.len() < 3 {
            return Err(Error::Config(format!(
                "port {port_id} ({name}): polygon needs at least 3 vertices"
            )));
        }
        for p in &polygon {
            GeoPoint::new(p.lon, p.lat)?;
        }
        let area = spherical_polygon_area_km2(&polygon);
        Ok(Self {
            port_id,
            name: name.to_string(),
            locode: locode.to_string(),
            center: polygon_centroid(&polygon),
            boundary_radius_km: alpha * (area / std::f64::consts::PI).sqrt(),
            polygon,
        })
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        haversine_km(p, self.center) < self.boundary_radius_km
    }
}

impl TryFrom<PortFile> for PortRecord {
    type Error = Error;

    fn try_from(f: PortFile) -> Result<Self> {
        let polygon = f
            .polygon
            .iter()
            .map(|&[lon, lat]| GeoPoint { lon, lat })
            .collect();
        PortRecord::from_polygon(f.port_id, &f.name, &f.locode, polygon, DEFAULT_BOUNDARY_ALPHA)
    }
}

impl From<PortRecord> for PortFile {
    fn from(p: PortRecord) -> Self {
        PortFile {
            port_id: p.port_id,
            name: p.name,
            locode: p.locode,
            polygon: p.polygon.iter().map(|g| [g.lon, g.lat]).collect(),
        }
    }
}

/// Area enclosed by a polygon with great-circle edges (spherical excess).
pub fn spherical_polygon_area_km2(polygon: &[GeoPoint]) -> f64 {
    let n = polygon.len();
    let mut excess = 0.0;
    for i in 0..n {
        let (l1, p1) = polygon[i].to_radians();
        let (l2, p2) = polygon[(i + 1) % n].to_radians();
        let mut dl = l2 - l1;
        if dl > std::f64::consts::PI {
            dl -= 2.0 * std::f64::consts::PI;
        } else if dl < -std::f64::consts::PI {
            dl += 2.0 * std::f64::consts::PI;
        }
        let (t1, t2) = ((p1 / 2.0).tan(), (p2 / 2.0).tan());
        excess += 2.0 * ((dl / 2.0).tan() * (t1 + t2)).atan2(1.0 + t1 * t2);
    }
    excess.abs() * EARTH_RADIUS_KM * EARTH_RADIUS_KM
}

/// Area-weighted centroid in lon/lat, longitudes unwrapped around the first
/// vertex. Adequate for port-sized polygons.
fn polygon_centroid(polygon: &[GeoPoint]) -> GeoPoint {
    let base = polygon[0].lon;
    let xs: Vec<(f64, f64)> = polygon
        .iter()
        .map(|p| {
            let mut d = p.lon - base;
            if d > 180.0 {
                d -= 360.0;
            } else if d < -180.0 {
                d += 360.0;
            }
            (d, p.lat)
        })
        .collect();
    let n = xs.len();
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (x0, y0) = xs[i];
        let (x1, y1) = xs[(i + 1) % n];
        let cross = x0 * y1 - x1 * y0;
        a += cross;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    let (x, y) = if a.abs() < 1e-15 {
        let k = n as f64;
        (
            xs.iter().map(|p| p.0).sum::<f64>() / k,
            xs.iter().map(|p| p.1).sum::<f64>() / k,
        )
    } else {
        (cx / (3.0 * a), cy / (3.0 * a))
    };
    GeoPoint {
        lon: crate::geo::normalize_lon(base + x),
        lat: y,
    }
}

/// Ports indexed by id; ids must be exactly `0..len`.
#[derive(Debug, Clone)]
pub struct PortRegistry {
    ports: Vec<PortRecord>,
}

impl PortRegistry {
    pub fn new(mut ports: Vec<PortRecord>) -> Result<Self> {
        if ports.is_empty() {
            return Err(Error::Empty("port registry"));
        }
        ports.sort_by_key(|p| p.port_id);
        for (i, p) in ports.iter().enumerate() {
            if p.port_id != i {
                return Err(Error::Config(format!(
                    "port ids must be contiguous from 0; found {} at position {i}",
                    p.port_id
                )));
            }
        }
        Ok(Self { ports })
    }

    pub fn ports(&self) -> &[PortRecord] {
        &self.ports
    }

    pub fn get(&self, id: usize) -> &PortRecord {
        &self.ports[id]
    }

    pub fn len(&self) -> usize {
        self.ports.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ports.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotateConfig {
    pub match_threshold: f64,
    pub max_ngram: usize,
    pub max_gap_days: f64,
    pub moving_sog_knots: f64,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self {
            match_threshold: 0.75,
            max_ngram: 3,
            max_gap_days: 3.0,
            moving_sog_knots: 1.0,
        }
    }
}

/// A message with its annotation state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedMessage {
    #[serde(flatten)]
    pub msg: AisMessage,
    pub status: StatusTag,
    pub candidates: Vec<usize>,
}

/// A validated port-to-port voyage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub schema_version: u32,
    pub vessel_id: String,
    pub departure: usize,
    pub destination: usize,
    pub messages: Vec<TaggedMessage>,
}

impl Segment {
    pub fn ship_type(&self) -> usize {
        self.messages.first().map(|m| m.msg.ship_type).unwrap_or(0)
    }

    pub fn first_timestamp(&self) -> i64 {
        self.messages.first().map(|m| m.msg.timestamp).unwrap_or(0)
    }

    pub fn last_timestamp(&self) -> i64 {
        self.messages.last().map(|m| m.msg.timestamp).unwrap_or(0)
    }

    pub fn raw_messages(&self) -> impl Iterator<Item = &AisMessage> {
        self.messages.iter().map(|m| &m.msg)
    }
}

/// A cut that failed validation, kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub vessel_id: String,
    pub first_timestamp: i64,
    pub last_timestamp: i64,
    pub reason: RejectReason,
}

#[derive(Debug, Default, Clone)]
pub struct Annotation {
    pub segments: Vec<Segment>,
    pub rejections: Vec<Rejection>,
}

/// Annotates one vessel's time-ordered stream.
pub fn annotate_vessel(
    msgs: &[AisMessage],
    registry: &PortRegistry,
    matcher: &mut CandidateMatcher<'_>,
    config: &AnnotateConfig,
) -> Annotation {
    let candidates: Vec<Vec<usize>> = msgs
        .iter()
        .map(|m| matcher.candidates(&m.destination).to_vec())
        .collect();
    let tags = positional_status(msgs, &candidates, registry, config.moving_sog_knots);
    let mut out = Annotation::default();
    for span in extract_trajectories(msgs, &tags, registry) {
        let verdict = validate_segment(
            &msgs[span.clone()],
            &tags[span.clone()],
            &candidates[span.clone()],
            config.max_gap_days,
        );
        match verdict {
            Ok((departure, destination)) => out.segments.push(Segment {
                schema_version: SEGMENT_SCHEMA_VERSION,
                vessel_id: msgs[span.start].vessel_id.clone(),
                departure,
                destination,
                messages: span
                    .map(|i| TaggedMessage {
                        msg: msgs[i].clone(),
                        status: tags[i],
                        candidates: candidates[i].clone(),
                    })
                    .collect(),
            }),
            Err(reason) => out.rejections.push(Rejection {
                vessel_id: msgs[span.start].vessel_id.clone(),
                first_timestamp: msgs[span.start].timestamp,
                last_timestamp: msgs[span.end - 1].timestamp,
                reason,
            }),
        }
    }
    out
}

/// Groups raw messages by vessel, drops sentinel values, sorts by time and
/// annotates every vessel in parallel. Output is ordered by vessel id.
pub fn annotate_all(
    msgs: Vec<AisMessage>,
    registry: &PortRegistry,
    config: &AnnotateConfig,
) -> Annotation {
    let mut by_vessel: BTreeMap<String, Vec<AisMessage>> = BTreeMap::new();
    for m in filter_sentinels(msgs) {
        by_vessel.entry(m.vessel_id.clone()).or_default().push(m);
    }
    let parts: Vec<Annotation> = by_vessel
        .into_par_iter()
        .map(|(_, mut stream)| {
            stream.sort_by_key(|m| m.timestamp);
            stream.dedup_by_key(|m| m.timestamp);
            let mut matcher =
                CandidateMatcher::new(registry.ports(), config.match_threshold, config.max_ngram);
            annotate_vessel(&stream, registry, &mut matcher, config)
        })
        .collect();
    let mut out = Annotation::default();
    for p in parts {
        out.segments.extend(p.segments);
        out.rejections.extend(p.rejections);
    }
    out
}

/// Absolute lon/lat difference in degrees with antimeridian wrap.
pub(crate) fn degree_delta(a: GeoPoint, b: GeoPoint) -> (f64, f64) {
    (lon_delta(a.lon, b.lon), (a.lat - b.lat).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rect(lon0: f64, lat0: f64, dlon: f64, dlat: f64) -> Vec<GeoPoint> {
        vec![
            GeoPoint { lon: lon0, lat: lat0 },
            GeoPoint { lon: lon0 + dlon, lat: lat0 },
            GeoPoint { lon: lon0 + dlon, lat: lat0 + dlat },
            GeoPoint { lon: lon0, lat: lat0 + dlat },
        ]
    }

    /// Exact area of a lon/lat rectangle (parallels as edges), used as an
    /// oracle for small boxes where great-circle and parallel edges agree.
    fn rect_area(lat0: f64, dlon: f64, dlat: f64) -> f64 {
        EARTH_RADIUS_KM.powi(2)
            * dlon.to_radians()
            * ((lat0 + dlat).to_radians().sin() - lat0.to_radians().sin())
    }

    #[test]
    fn polygon_area_matches_rectangle_oracle() {
        for &(lat0, size) in &[(0.0, 0.05), (45.0, 0.02), (-60.0, 0.1), (10.0, 0.001)] {
            let poly = rect(120.0, lat0, size, size);
            let a = spherical_polygon_area_km2(&poly);
            let want = rect_area(lat0, size, size);
            assert!((a - want).abs() / want < 1e-3, "{a} vs {want}");
            // orientation does not matter
            let rev: Vec<_> = poly.iter().rev().copied().collect();
            assert!((spherical_polygon_area_km2(&rev) - a).abs() < 1e-9 * a.max(1.0));
        }
    }

    #[test]
    fn port_radius_and_center() {
        let p = PortRecord::from_polygon(0, "A", "", rect(10.0, 0.0, 0.1, 0.1), 1.8).unwrap();
        let area = spherical_polygon_area_km2(&p.polygon);
        assert!((p.boundary_radius_km - 1.8 * (area / std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!((p.center.lon - 10.05).abs() < 1e-9 && (p.center.lat - 0.05).abs() < 1e-9);
        assert!(p.contains(p.center));
        // antimeridian-straddling polygon
        let q = PortRecord::from_polygon(1, "B", "", rect(179.95, 0.0, 0.1, 0.1), 1.8).unwrap();
        assert!((q.center.lon - (-180.0)).abs() < 1e-9 || (q.center.lon - 180.0).abs() < 1e-9);
        assert!(PortRecord::from_polygon(2, "C", "", rect(0.0, 0.0, 0.1, 0.1)[..2].to_vec(), 1.8).is_err());
    }

    #[test]
    fn port_json_roundtrip_recomputes_boundary() {
        let p = PortRecord::from_polygon(0, "Alpha", "XXALP", rect(10.0, 0.0, 0.1, 0.1), 1.8).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"polygon\":[[10.0,0.0]"));
        let back: PortRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn registry_requires_contiguous_ids() {
        let p = |id| PortRecord::from_polygon(id, "P", "", rect(0.0, 0.0, 0.1, 0.1), 1.8).unwrap();
        assert!(PortRegistry::new(vec![p(1), p(0)]).is_ok());
        assert!(PortRegistry::new(vec![p(0), p(2)]).is_err());
        assert!(PortRegistry::new(vec![]).is_err());
    }
}
