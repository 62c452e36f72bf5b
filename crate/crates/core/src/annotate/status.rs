use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{AisMessage, PortRegistry};
use crate::geo::haversine_km;

const KM_PER_NM: f64 = 1.852;
const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusTag {
    Port(usize),
    Moving,
    Still,
}

impl StatusTag {
    pub fn port(self) -> Option<usize> {
        match self {
            StatusTag::Port(p) => Some(p),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooShort,
    EndpointNotPort,
    LoopVoyage,
    StillInside,
    NoMovement,
    CandidateMismatch,
    TimeGap,
}

/// Speed in knots; when SOG is missing it is implied from the displacement
/// since the previous message.
fn effective_sog(msgs: &[AisMessage], t: usize) -> f64 {
    if let Some(s) = msgs[t].sog {
        return s;
    }
    if t == 0 {
        return 0.0;
    }
    let dt_h = (msgs[t].timestamp - msgs[t - 1].timestamp) as f64 / 3600.0;
    if dt_h <= 0.0 {
        return 0.0;
    }
    haversine_km(msgs[t].pos, msgs[t - 1].pos) / KM_PER_NM / dt_h
}

/// Sticky port tagging: a message stays tagged with the previous port while
/// it remains inside that port's boundary; otherwise the first candidate port
/// whose boundary contains it wins; otherwise Moving or Still by SOG.
pub fn positional_status(
    msgs: &[AisMessage],
    candidates: &[Vec<usize>],
    registry: &PortRegistry,
    moving_sog_knots: f64,
) -> Vec<StatusTag> {
    let mut tags: Vec<StatusTag> = Vec::with_capacity(msgs.len());
    for (t, m) in msgs.iter().enumerate() {
        if let Some(StatusTag::Port(prev)) = tags.last().copied() {
            if registry.get(prev).contains(m.pos) {
                tags.push(StatusTag::Port(prev));
                continue;
            }
        }
        let hit = candidates[t]
            .iter()
            .copied()
            .find(|&c| c < registry.len() && registry.get(c).contains(m.pos));
        let tag = match hit {
            Some(c) => StatusTag::Port(c),
            None if effective_sog(msgs, t) > moving_sog_knots => StatusTag::Moving,
            None => StatusTag::Still,
        };
        tags.push(tag);
    }
    tags
}

/// Cuts the stream inside every maximal run of identical port tags at the
/// message nearest the port center (first one on ties). Each returned range
/// runs from just after one cut up to and including the next cut.
pub fn extract_trajectories(
    msgs: &[AisMessage],
    tags: &[StatusTag],
    registry: &PortRegistry,
) -> Vec<Range<usize>> {
    let mut cuts = Vec::new();
    let mut t = 0;
    while t < tags.len() {
        let Some(port) = tags[t].port() else {
            t += 1;
            continue;
        };
        let center = registry.get(port).center;
        let mut best = t;
        let mut best_d = f64::INFINITY;
        let mut j = t;
        while j < tags.len() && tags[j] == StatusTag::Port(port) {
            let d = haversine_km(msgs[j].pos, center);
            if d < best_d {
                best_d = d;
                best = j;
            }
            j += 1;
        }
        cuts.push(best);
        t = j;
    }
    cuts.windows(2).map(|w| w[0] + 1..w[1] + 1).collect()
}

/// Checks a cut against the voyage conditions and returns
/// `(departure, destination)` when it is a valid port-to-port trajectory.
pub fn validate_segment(
    msgs: &[AisMessage],
    tags: &[StatusTag],
    candidates: &[Vec<usize>],
    max_gap_days: f64,
) -> Result<(usize, usize), RejectReason> {
    if msgs.len() < 2 {
        return Err(RejectReason::TooShort);
    }
    let (Some(dep), Some(dest)) = (tags[0].port(), tags[tags.len() - 1].port()) else {
        return Err(RejectReason::EndpointNotPort);
    };
    if dep == dest {
        return Err(RejectReason::LoopVoyage);
    }
    if tags.contains(&StatusTag::Still) {
        return Err(RejectReason::StillInside);
    }
    if !tags.contains(&StatusTag::Moving) {
        return Err(RejectReason::NoMovement);
    }
    if candidates
        .iter()
        .any(|c| !c.contains(&dep) && !c.contains(&dest))
    {
        return Err(RejectReason::CandidateMismatch);
    }
    let max_gap = (max_gap_days * SECONDS_PER_DAY).round() as i64;
    if msgs
        .windows(2)
        .any(|w| w[1].timestamp - w[0].timestamp >= max_gap)
    {
        return Err(RejectReason::TimeGap);
    }
    Ok((dep, dest))
}
