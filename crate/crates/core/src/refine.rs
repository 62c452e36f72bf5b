//! Sentinel filtering and density-based removal of illogical position shifts.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::annotate::{
    degree_delta, validate_segment, AisMessage, RejectReason, Segment, StatusTag,
};
use crate::error::{Error, Result};

pub const SOG_NOT_AVAILABLE: f64 = 1023.0;
pub const COG_NOT_AVAILABLE: f64 = 360.0;
pub const ROT_NOT_AVAILABLE: f64 = -731.0;
pub const HEADING_NOT_AVAILABLE: f64 = 511.0;

/// Voids AIS "not available" values and drops messages whose position is out
/// of range.
pub fn filter_sentinels(msgs: Vec<AisMessage>) -> Vec<AisMessage> {
    let void = |v: Option<f64>, sentinel: f64| v.filter(|x| *x != sentinel && x.is_finite());
    msgs.into_iter()
        .filter(|m| m.pos.is_valid())
        .map(|mut m| {
            m.pos = crate::geo::GeoPoint {
                lon: crate::geo::normalize_lon(m.pos.lon),
                lat: m.pos.lat,
            };
            m.sog = void(m.sog, SOG_NOT_AVAILABLE);
            m.cog = void(m.cog, COG_NOT_AVAILABLE);
            m.rot = void(m.rot, ROT_NOT_AVAILABLE);
            m.heading = void(m.heading, HEADING_NOT_AVAILABLE);
            m.draught = m.draught.filter(|x| x.is_finite());
            m
        })
        .collect()
}

pub const RESIDUAL_EPS: f64 = 1e-6;

/// Displacement between consecutive messages, normalized by the distance the
/// reported speed would explain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeResidual {
    /// Degrees.
    pub d_lon: f64,
    pub d_lat: f64,
    pub d_euclid: f64,
    /// `|dt hours| * mean SOG` in knot-hours.
    pub normalizer: f64,
}

impl EdgeResidual {
    pub fn vector(&self) -> [f64; 3] {
        let n = self.normalizer.max(RESIDUAL_EPS);
        [self.d_lon / n, self.d_lat / n, self.d_euclid / n]
    }
}

/// How the SOG average of an edge is taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SogAverage {
    /// Mean of the two endpoints; a missing endpoint falls back to the
    /// segment mean.
    #[default]
    Pair,
    Segment,
}

pub fn edge_residuals(msgs: &[&AisMessage], average: SogAverage) -> Result<Vec<EdgeResidual>> {
    if msgs.len() < 2 {
        return Err(Error::SegmentTooShort(msgs.len()));
    }
    let known: Vec<f64> = msgs.iter().filter_map(|m| m.sog).collect();
    let seg_mean = if known.is_empty() {
        0.0
    } else {
        known.iter().sum::<f64>() / known.len() as f64
    };
    Ok(msgs
        .windows(2)
        .map(|w| {
            let (d_lon, d_lat) = degree_delta(w[1].pos, w[0].pos);
            let dt_h = ((w[1].timestamp - w[0].timestamp) as f64 / 3600.0).abs();
            let sog = match average {
                SogAverage::Pair => {
                    (w[0].sog.unwrap_or(seg_mean) + w[1].sog.unwrap_or(seg_mean)) / 2.0
                }
                SogAverage::Segment => seg_mean,
            };
            EdgeResidual {
                d_lon,
                d_lat,
                d_euclid: d_lon.hypot(d_lat),
                normalizer: dt_h * sog,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClusterLabel {
    Cluster(usize),
    Noise,
}

impl ClusterLabel {
    pub fn is_noise(self) -> bool {
        self == ClusterLabel::Noise
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Uniform hash grid with cell side `eps` for radius queries.
struct NeighborIndex<'a> {
    points: &'a [[f64; 3]],
    eps: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> NeighborIndex<'a> {
    fn new(points: &'a [[f64; 3]], eps: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, eps)).or_default().push(i);
        }
        Self { points, eps, cells }
    }

    fn key(p: &[f64; 3], eps: f64) -> [i64; 3] {
        // saturating float->int cast keeps huge teleport residuals finite
        [
            (p[0] / eps).floor() as i64,
            (p[1] / eps).floor() as i64,
            (p[2] / eps).floor() as i64,
        ]
    }

    /// Indices within `eps` of point `i`, including `i` itself.
    fn query(&self, i: usize) -> Vec<usize> {
        let p = &self.points[i];
        let k = Self::key(p, self.eps);
        let eps2 = self.eps * self.eps;
        let mut out = Vec::new();
        for dx in -1..=1i64 {
            for dy in -1..=1i64 {
                for dz in -1..=1i64 {
                    let key = [
                        k[0].saturating_add(dx),
                        k[1].saturating_add(dy),
                        k[2].saturating_add(dz),
                    ];
                    if let Some(bucket) = self.cells.get(&key) {
                        out.extend(
                            bucket
                                .iter()
                                .copied()
                                .filter(|&j| dist2(p, &self.points[j]) <= eps2),
                        );
                    }
                }
            }
        }
        out
    }
}

/// DBSCAN over 3-vectors. A point is core when at least `min_pts` points
/// (itself included) lie within `eps`. Clusters are the connected components
/// of core points; a non-core point within `eps` of a core point joins the
/// cluster of its nearest core neighbor, which makes the labeling independent
/// of input order. Cluster ids are numbered by first appearance.
pub fn dbscan(points: &[[f64; 3]], eps: f64, min_pts: usize) -> Result<Vec<ClusterLabel>> {
    if !(eps > 0.0) || min_pts == 0 {
        return Err(Error::Config(format!(
            "dbscan needs eps > 0 and min_pts >= 1 (got {eps}, {min_pts})"
        )));
    }
    let index = NeighborIndex::new(points, eps);
    let neighbors: Vec<Vec<usize>> = (0..points.len()).map(|i| index.query(i)).collect();
    let core: Vec<bool> = neighbors.iter().map(|n| n.len() >= min_pts).collect();

    let mut labels = vec![ClusterLabel::Noise; points.len()];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in 0..points.len() {
        if !core[start] || labels[start] != ClusterLabel::Noise {
            continue;
        }
        labels[start] = ClusterLabel::Cluster(next);
        stack.push(start);
        while let Some(i) = stack.pop() {
            for &j in &neighbors[i] {
                if core[j] && labels[j] == ClusterLabel::Noise {
                    labels[j] = ClusterLabel::Cluster(next);
                    stack.push(j);
                }
            }
        }
        next += 1;
    }
    for i in 0..points.len() {
        if core[i] {
            continue;
        }
        let nearest = neighbors[i]
            .iter()
            .copied()
            .filter(|&j| core[j])
            .min_by(|&a, &b| dist2(&points[i], &points[a]).total_cmp(&dist2(&points[i], &points[b])));
        if let Some(j) = nearest {
            labels[i] = labels[j];
        }
    }
    Ok(relabel_by_first_appearance(&labels))
}

fn relabel_by_first_appearance(labels: &[ClusterLabel]) -> Vec<ClusterLabel> {
    let mut map = HashMap::new();
    labels
        .iter()
        .map(|l| match l {
            ClusterLabel::Noise => ClusterLabel::Noise,
            ClusterLabel::Cluster(c) => {
                let n = map.len();
                ClusterLabel::Cluster(*map.entry(*c).or_insert(n))
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub eps: f64,
    pub min_pts: usize,
    pub max_passes: usize,
    pub sog_average: SogAverage,
    pub max_gap_days: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            eps: 0.15,
            min_pts: 4,
            max_passes: 5,
            sog_average: SogAverage::Pair,
            max_gap_days: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineFailure {
    TooShort,
    Revalidation(RejectReason),
}

/// Indices (into the input) removed by one refinement pass: within every
/// maximal run of consecutive noise edges, the later endpoint of the first
/// edge is dropped. A single spike makes two noise edges in a row, and only
/// the spike itself goes.
fn noise_deletions(labels: &[ClusterLabel]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut in_run = false;
    for (e, l) in labels.iter().enumerate() {
        if l.is_noise() {
            if !in_run {
                out.push(e + 1);
            }
            in_run = true;
        } else {
            in_run = false;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub segment: Segment,
    /// Positions in the input segment of the messages that were removed.
    pub removed: Vec<usize>,
}

/// Repeatedly drops messages at anomalous edges, then re-validates. Surviving
/// messages keep their order and annotation. Segments with fewer edges than
/// `min_pts` cannot form a density cluster and are only re-validated.
pub fn refine_segment(segment: &Segment, config: &RefineConfig) -> std::result::Result<Refined, RefineFailure> {
    let mut keep: Vec<usize> = (0..segment.messages.len()).collect();
    for _ in 0..config.max_passes {
        if keep.len() < 2 {
            return Err(RefineFailure::TooShort);
        }
        if keep.len() - 1 < config.min_pts {
            break;
        }
        let msgs: Vec<&AisMessage> = keep.iter().map(|&i| &segment.messages[i].msg).collect();
        let residuals = edge_residuals(&msgs, config.sog_average).map_err(|_| RefineFailure::TooShort)?;
        let points: Vec<[f64; 3]> = residuals.iter().map(EdgeResidual::vector).collect();
        let labels = dbscan(&points, config.eps, config.min_pts).map_err(|_| RefineFailure::TooShort)?;
        let drop = noise_deletions(&labels);
        if drop.is_empty() {
            break;
        }
        let mut k = 0;
        keep = keep
            .iter()
            .enumerate()
            .filter_map(|(pos, &i)| {
                if k < drop.len() && drop[k] == pos {
                    k += 1;
                    None
                } else {
                    Some(i)
                }
            })
            .collect();
    }
    if keep.len() < 2 {
        return Err(RefineFailure::TooShort);
    }
    let messages: Vec<_> = keep.iter().map(|&i| segment.messages[i].clone()).collect();
    let raw: Vec<AisMessage> = messages.iter().map(|m| m.msg.clone()).collect();
    let tags: Vec<StatusTag> = messages.iter().map(|m| m.status).collect();
    let cands: Vec<Vec<usize>> = messages.iter().map(|m| m.candidates.clone()).collect();
    let (departure, destination) =
        validate_segment(&raw, &tags, &cands, config.max_gap_days).map_err(RefineFailure::Revalidation)?;
    let mut removed = Vec::new();
    let mut it = keep.iter().peekable();
    for i in 0..segment.messages.len() {
        if it.peek() == Some(&&i) {
            it.next();
        } else {
            removed.push(i);
        }
    }
    Ok(Refined {
        segment: Segment {
            departure,
            destination,
            messages,
            ..segment.clone()
        },
        removed,
    })
}
