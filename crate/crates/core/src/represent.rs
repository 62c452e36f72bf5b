//! Nested grid-sequence representation of a segment, plus the sinusoidal
//! spatial and time encodings.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::annotate::{AisMessage, Segment};
use crate::error::{Error, Result};
use crate::geo::{cell_of, normalize_lon, GridCell, GridSpec};
use crate::nn::Tensor;

pub const SEQUENCE_SCHEMA_VERSION: u32 = 1;
pub const SAMPLE_POISSON_MEAN: f64 = 5.0;
pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Number of kinematic features standardized per message.
pub const KINEMATIC_FIELDS: usize = 6;
/// Length of [`LocalFeatureRow::to_vector`].
pub const FEATURE_DIM: usize = 3 + 2 * KINEMATIC_FIELDS;

/// `(ln pi)^2`, the amplitude of the latitude-only spatial dimensions.
pub fn ln_pi_squared() -> f64 {
    std::f64::consts::PI.ln().powi(2)
}

/// A visited cell with every raw message it absorbed, before sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct RawElement {
    pub cell: GridCell,
    pub messages: Vec<AisMessage>,
}

/// A segment regrouped into consecutive same-cell runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Reorganized {
    pub id: String,
    pub elements: Vec<RawElement>,
    pub departure: usize,
    pub ship_type: usize,
    pub label: usize,
    /// Timestamp of the first raw message of the segment.
    pub origin_timestamp: i64,
}

/// Groups consecutive messages sharing a grid cell. Leaving a cell and
/// coming back opens a new element.
pub fn reorganize(segment: &Segment, grid: &GridSpec) -> Result<Reorganized> {
    let first = segment.messages.first().ok_or(Error::Empty("segment"))?;
    let mut elements: Vec<RawElement> = Vec::new();
    for m in segment.raw_messages() {
        let cell = cell_of(m.pos, grid);
        match elements.last_mut() {
            Some(e) if e.cell.same_cell(&cell) => e.messages.push(m.clone()),
            _ => elements.push(RawElement {
                cell,
                messages: vec![m.clone()],
            }),
        }
    }
    Ok(Reorganized {
        id: format!("{}@{}", segment.vessel_id, first.msg.timestamp),
        elements,
        departure: segment.departure,
        ship_type: segment.ship_type(),
        label: segment.destination,
        origin_timestamp: first.msg.timestamp,
    })
}

/// Sorted indices of the messages kept from an element of `m` messages: the
/// count is a Poisson draw with the given mean clamped to `[1, m]`, the
/// subset uniform. Panics unless `mean` is positive and finite.
pub fn sample_indices<R: Rng + ?Sized>(m: usize, mean: f64, rng: &mut R) -> Vec<usize> {
    if m == 0 {
        return Vec::new();
    }
    let poisson = Poisson::new(mean).expect("positive mean");
    let k = poisson.sample(rng) as usize;
    let mut picked = index::sample(rng, m, k.clamp(1, m)).into_vec();
    picked.sort_unstable();
    picked
}

pub fn sample_element<R: Rng + ?Sized>(element: &RawElement, mean: f64, rng: &mut R) -> RawElement {
    let picked = sample_indices(element.messages.len(), mean, rng);
    RawElement {
        cell: element.cell,
        messages: picked.iter().map(|&i| element.messages[i].clone()).collect(),
    }
}

/// Kinematic fields of a message in feature order: sog, rot, cog, heading,
/// draught and the ETA distance in days.
pub fn kinematics(m: &AisMessage) -> [Option<f64>; KINEMATIC_FIELDS] {
    let eta = m
        .eta
        .map(|eta| (eta - m.timestamp) as f64 / SECONDS_PER_DAY);
    [m.sog, m.rot, m.cog, m.heading, m.draught, eta]
}

/// Per-field mean and standard deviation of the kinematic features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; KINEMATIC_FIELDS],
    pub std: [f64; KINEMATIC_FIELDS],
}

impl Default for Standardizer {
    fn default() -> Self {
        Self {
            mean: [0.0; KINEMATIC_FIELDS],
            std: [1.0; KINEMATIC_FIELDS],
        }
    }
}

impl Standardizer {
    /// Fits on every present value. Fields that are absent or constant get
    /// unit scale.
    pub fn fit<'a>(messages: impl IntoIterator<Item = &'a AisMessage>) -> Self {
        let mut n = [0usize; KINEMATIC_FIELDS];
        let mut sum = [0.0; KINEMATIC_FIELDS];
        let mut sq = [0.0; KINEMATIC_FIELDS];
        for m in messages {
            for (f, v) in kinematics(m).into_iter().enumerate() {
                if let Some(v) = v {
                    n[f] += 1;
                    sum[f] += v;
                    sq[f] += v * v;
                }
            }
        }
        let mut out = Self::default();
        for f in 0..KINEMATIC_FIELDS {
            if n[f] == 0 {
                continue;
            }
            let mean = sum[f] / n[f] as f64;
            let var = (sq[f] / n[f] as f64 - mean * mean).max(0.0);
            out.mean[f] = mean;
            if var.sqrt() > 1e-12 {
                out.std[f] = var.sqrt();
            }
        }
        out
    }

    pub fn apply(&self, field: usize, v: f64) -> f64 {
        (v - self.mean[field]) / self.std[field]
    }
}

/// Per-message input to the local GRU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalFeatureRow {
    /// Cell center minus observed longitude, degrees.
    pub rel_lon: f64,
    /// Cell center minus observed latitude, degrees.
    pub rel_lat: f64,
    pub days_in_cell: f64,
    /// Standardized sog, rot, cog, heading, draught, ETA distance; 0 when
    /// missing.
    pub kinematics: [f64; KINEMATIC_FIELDS],
    pub present: [bool; KINEMATIC_FIELDS],
}

impl LocalFeatureRow {
    pub fn to_vector(&self) -> [f64; FEATURE_DIM] {
        let mut v = [0.0; FEATURE_DIM];
        v[0] = self.rel_lon;
        v[1] = self.rel_lat;
        v[2] = self.days_in_cell;
        for f in 0..KINEMATIC_FIELDS {
            v[3 + f] = self.kinematics[f];
            v[3 + KINEMATIC_FIELDS + f] = if self.present[f] { 1.0 } else { 0.0 };
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridElement {
    pub cell: GridCell,
    pub samples: Vec<LocalFeatureRow>,
    /// Days from the first message of the segment to the last sample here.
    pub time_distance: f64,
}

/// Which partition a sequence belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedSequence {
    pub schema_version: u32,
    pub id: String,
    pub split: Split,
    pub elements: Vec<GridElement>,
    pub departure: usize,
    pub ship_type: usize,
    pub label: usize,
}

impl NestedSequence {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn centers(&self) -> Vec<crate::geo::GeoPoint> {
        self.elements.iter().map(|e| e.cell.center).collect()
    }

    pub fn time_distances(&self) -> Vec<f64> {
        self.elements.iter().map(|e| e.time_distance).collect()
    }

    /// The first `n` elements, as seen by a model `n` steps into the voyage.
    pub fn prefix(&self, n: usize) -> NestedSequence {
        NestedSequence {
            elements: self.elements[..n.min(self.len())].to_vec(),
            ..self.clone()
        }
    }
}

fn feature_rows(cell: &GridCell, msgs: &[AisMessage], std: &Standardizer) -> Vec<LocalFeatureRow> {
    let t0 = msgs.first().map_or(0, |m| m.timestamp);
    msgs.iter()
        .map(|m| {
            let mut kin = [0.0; KINEMATIC_FIELDS];
            let mut present = [false; KINEMATIC_FIELDS];
            for (f, v) in kinematics(m).into_iter().enumerate() {
                if let Some(v) = v {
                    kin[f] = std.apply(f, v);
                    present[f] = true;
                }
            }
            LocalFeatureRow {
                rel_lon: normalize_lon(cell.center.lon - m.pos.lon),
                rel_lat: cell.center.lat - m.pos.lat,
                days_in_cell: (m.timestamp - t0) as f64 / SECONDS_PER_DAY,
                kinematics: kin,
                present,
            }
        })
        .collect()
}

/// Samples every element and computes feature rows and time distances.
pub fn build_sequence<R: Rng + ?Sized>(
    reorg: &Reorganized,
    standardizer: &Standardizer,
    split: Split,
    sample_mean: f64,
    rng: &mut R,
) -> NestedSequence {
    let elements = reorg
        .elements
        .iter()
        .map(|e| {
            let sampled = sample_element(e, sample_mean, rng);
            let last = sampled.messages.last().map_or(reorg.origin_timestamp, |m| m.timestamp);
            GridElement {
                cell: e.cell,
                samples: feature_rows(&e.cell, &sampled.messages, standardizer),
                time_distance: (last - reorg.origin_timestamp) as f64 / SECONDS_PER_DAY,
            }
        })
        .collect();
    NestedSequence {
        schema_version: SEQUENCE_SCHEMA_VERSION,
        id: reorg.id.clone(),
        split,
        elements,
        departure: reorg.departure,
        ship_type: reorg.ship_type,
        label: reorg.label,
    }
}

/// Sinusoidal encoding of cell centers (degrees in, converted here) into an
/// `N x d` matrix. Block `i` uses the divisor `(2 pi)^(4i / d^2)`.
pub fn spatial_encode(centers: &[crate::geo::GeoPoint], d: usize) -> Result<Tensor> {
    if d == 0 || d % 4 != 0 {
        return Err(Error::Config(format!("spatial encoding dimension {d} must be a positive multiple of 4")));
    }
    let amp = ln_pi_squared();
    let tau = 2.0 * std::f64::consts::PI;
    let mut data = Vec::with_capacity(centers.len() * d);
    for c in centers {
        let (lon, lat) = c.to_radians();
        for i in 0..d / 4 {
            let s = tau.powf((4 * i) as f64 / (d * d) as f64);
            let (a, b) = (lat / s, lon / s);
            data.push(a.cos() * b.sin());
            data.push(amp * a.sin());
            data.push(a.cos() * b.cos());
            data.push(-amp * a.sin());
        }
    }
    Tensor::new(vec![centers.len(), d], data)
}

/// Sinusoidal encoding of real-valued day offsets into an `N x d` matrix.
pub fn time_encode(deltas: &[f64], d: usize) -> Result<Tensor> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::Config(format!("time encoding dimension {d} must be positive and even")));
    }
    let mut data = Vec::with_capacity(deltas.len() * d);
    for &delta in deltas {
        for i in 0..d / 2 {
            let x = delta / 1000f64.powf((2 * i) as f64 / d as f64);
            data.push(x.cos());
            data.push(x.sin());
        }
    }
    Tensor::new(vec![deltas.len(), d], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::{StatusTag, TaggedMessage, SEGMENT_SCHEMA_VERSION};
    use crate::geo::GeoPoint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn msg(lon: f64, lat: f64, t: i64) -> AisMessage {
        AisMessage {
            vessel_id: "v".into(),
            timestamp: t,
            eta: None,
            pos: GeoPoint { lon, lat },
            sog: Some(10.0),
            rot: None,
            cog: None,
            heading: None,
            draught: None,
            ship_type: 2,
            destination: String::new(),
        }
    }

    fn segment(points: &[(f64, f64)]) -> Segment {
        Segment {
            schema_version: SEGMENT_SCHEMA_VERSION,
            vessel_id: "v".into(),
            departure: 0,
            destination: 1,
            messages: points
                .iter()
                .enumerate()
                .map(|(i, &(lon, lat))| TaggedMessage {
                    msg: msg(lon, lat, i as i64 * 3600),
                    status: StatusTag::Moving,
                    candidates: vec![],
                })
                .collect(),
        }
    }

    fn run_lengths(r: &Reorganized) -> Vec<usize> {
        r.elements.iter().map(|e| e.messages.len()).collect()
    }

    #[test]
    fn grouping_examples() {
        let grid = GridSpec::default();
        let one = reorganize(&segment(&[(0.1, 0.1), (0.5, 0.5), (0.9, 0.2)]), &grid).unwrap();
        assert_eq!(run_lengths(&one), vec![3]);
        let abc = segment(&[(0.5, 0.5), (0.6, 0.5), (1.5, 0.5), (1.6, 0.5), (1.7, 0.5), (2.5, 0.5)]);
        assert_eq!(run_lengths(&reorganize(&abc, &grid).unwrap()), vec![2, 3, 1]);
        let aba = segment(&[(0.5, 0.5), (1.5, 0.5), (0.5, 0.5)]);
        let r = reorganize(&aba, &grid).unwrap();
        assert_eq!(run_lengths(&r), vec![1, 1, 1]);
        assert!(r.elements[0].cell.same_cell(&r.elements[2].cell));
        let mut empty = segment(&[]);
        empty.messages.clear();
        assert!(reorganize(&empty, &grid).is_err());
    }

    #[test]
    fn sampling_clamps() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample_indices(1, SAMPLE_POISSON_MEAN, &mut rng), vec![0]);
        }
        for _ in 0..200 {
            let s = sample_indices(3, SAMPLE_POISSON_MEAN, &mut rng);
            assert!(!s.is_empty() && s.len() <= 3);
            assert!(s.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let a = sample_indices(100, SAMPLE_POISSON_MEAN, &mut ChaCha8Rng::seed_from_u64(42));
        let b = sample_indices(100, SAMPLE_POISSON_MEAN, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
        assert!(a.iter().all(|&i| i < 100));
    }

    #[test]
    fn features_and_time_distance() {
        let grid = GridSpec::default();
        let seg = segment(&[(0.25, 0.5), (0.75, 0.5), (1.5, 0.5)]);
        let r = reorganize(&seg, &grid).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = build_sequence(&r, &Standardizer::default(), Split::Train, SAMPLE_POISSON_MEAN, &mut rng);
        assert_eq!(s.len(), 2);
        let first = &s.elements[0].samples[0];
        assert_eq!(first.days_in_cell, 0.0);
        assert!(first.rel_lon.abs() <= 1.0 && first.rel_lat.abs() <= 1.0);
        assert!(first.present[0] && !first.present[1]);
        assert_eq!(s.elements[1].time_distance, 2.0 * 3600.0 / SECONDS_PER_DAY);
        assert!(s.elements[0].time_distance <= s.elements[1].time_distance);
    }

    #[test]
    fn standardizer_fit() {
        let msgs: Vec<AisMessage> = [8.0, 12.0].iter().map(|&v| AisMessage { sog: Some(v), ..msg(0.0, 0.0, 0) }).collect();
        let s = Standardizer::fit(&msgs);
        assert_eq!(s.mean[0], 10.0);
        assert_eq!(s.std[0], 2.0);
        assert_eq!(s.std[1], 1.0);
        assert_eq!(s.apply(0, 12.0), 1.0);
    }

    #[test]
    fn encoding_examples() {
        let se = spatial_encode(&[GeoPoint { lon: 0.0, lat: 0.0 }], 16).unwrap();
        for i in 0..4 {
            assert_eq!(&se.data()[4 * i..4 * i + 4], &[0.0, 0.0, 1.0, 0.0]);
        }
        let se = spatial_encode(&[GeoPoint { lon: 90.0, lat: 0.0 }], 8).unwrap();
        assert!((se.data()[0] - 1.0).abs() < 1e-15 && se.data()[2].abs() < 1e-15);
        assert!(spatial_encode(&[], 6).is_err());

        let te = time_encode(&[0.0, std::f64::consts::PI], 8).unwrap();
        assert_eq!(te.row(0), &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert!((te.at(1, 0) + 1.0).abs() < 1e-15 && te.at(1, 1).abs() < 1e-15);
        assert!((ln_pi_squared() - 1.3104).abs() < 1e-4);
    }
}
