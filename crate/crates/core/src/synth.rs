//! Seeded synthetic AIS world: ports, trade lanes and vessels chaining
//! voyages between them, with optional text, sentinel and position noise.
//! Ground truth for every voyage is kept alongside the raw stream.

use rand::distr::weighted::WeightedIndex;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{extract_candidates, AisMessage, PortRecord, DEFAULT_BOUNDARY_ALPHA};
use crate::annotate::{dl_distance, AnnotateConfig};
use crate::error::{Error, Result};
use crate::geo::{bearing_deg, destination, haversine_km, interpolate, GeoPoint};
use crate::refine::{COG_NOT_AVAILABLE, HEADING_NOT_AVAILABLE, ROT_NOT_AVAILABLE, SOG_NOT_AVAILABLE};

/// 2020-01-01T00:00:00Z.
pub const EPOCH_START: i64 = 1_577_836_800;
pub const TRUTH_SCHEMA_VERSION: u32 = 1;

const KM_PER_DEG: f64 = 111.195;
const KM_PER_NM: f64 = 1.852;
const EXIT_DISTANCE_DEG: f64 = 0.8;
const MIN_PORT_SEPARATION_DEG: f64 = 1.5;
const TELEPORT_DEG: (f64, f64) = (10.0, 20.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseProfile {
    /// Probability that a message's destination text carries edits.
    pub typo_rate: f64,
    /// Probability that a message has one field replaced by its sentinel.
    pub sentinel_rate: f64,
    /// Probability that an underway message is displaced far off course.
    pub teleport_rate: f64,
}

impl NoiseProfile {
    pub fn none() -> Self {
        Self {
            typo_rate: 0.0,
            sentinel_rate: 0.0,
            teleport_rate: 0.0,
        }
    }
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self {
            typo_rate: 0.3,
            sentinel_rate: 0.05,
            teleport_rate: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub seed: u64,
    pub ports: usize,
    /// Trade partners drawn per port (lanes are undirected).
    pub partners: usize,
    pub vessels: usize,
    /// Total voyages, spread evenly over the vessels.
    pub voyages: usize,
    /// `[lon_min, lon_max, lat_min, lat_max]` in degrees.
    pub region: [f64; 4],
    /// AIS ship-type codes with relative frequencies.
    pub ship_types: Vec<(usize, f64)>,
    pub mean_interval_minutes: f64,
    pub max_interval_days: f64,
    pub speed_knots: (f64, f64),
    pub dwell_messages: (usize, usize),
    /// Probability that destination text uses the location code.
    pub locode_rate: f64,
    pub noise: NoiseProfile,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            ports: 20,
            partners: 4,
            vessels: 50,
            voyages: 500,
            region: [100.0, 130.0, 0.0, 30.0],
            ship_types: vec![(60, 1.0), (70, 3.0), (80, 2.0)],
            mean_interval_minutes: 20.0,
            max_interval_days: 2.0,
            speed_knots: (8.0, 20.0),
            dwell_messages: (3, 8),
            locode_rate: 0.1,
            noise: NoiseProfile::default(),
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let [lon0, lon1, lat0, lat1] = self.region;
        if self.ports < 2 {
            return bad(format!("need at least 2 ports, got {}", self.ports));
        }
        if self.partners == 0 || self.vessels == 0 {
            return bad("partners and vessels must be positive".into());
        }
        if !(lon0 < lon1 && lat0 < lat1 && lon0 >= -180.0 && lon1 <= 180.0 && lat0 >= -80.0 && lat1 <= 80.0) {
            return bad(format!("invalid region {:?}", self.region));
        }
        if self.ship_types.is_empty() || self.ship_types.iter().any(|&(_, w)| !(w > 0.0)) {
            return bad("ship-type frequencies must be positive".into());
        }
        if !(self.mean_interval_minutes > 0.0 && self.max_interval_days > 0.0) {
            return bad("message intervals must be positive".into());
        }
        let (s0, s1) = self.speed_knots;
        if !(s0 > 1.0 && s0 <= s1) {
            return bad(format!("invalid speed range {:?}", self.speed_knots));
        }
        if self.dwell_messages.0 < 3 || self.dwell_messages.0 > self.dwell_messages.1 {
            return bad("dwell needs at least 3 messages".into());
        }
        let n = &self.noise;
        for (name, p) in [
            ("typo_rate", n.typo_rate),
            ("sentinel_rate", n.sentinel_rate),
            ("teleport_rate", n.teleport_rate),
            ("locode_rate", self.locode_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// An undirected trade lane with its intermediate waypoints from `a` to `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
    pub waypoints: Vec<GeoPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub ports: Vec<PortRecord>,
    pub lanes: Vec<Lane>,
}

impl World {
    /// Lanes leaving `port` as `(lane index, destination)`.
    pub fn departures(&self, port: usize) -> Vec<(usize, usize)> {
        self.lanes
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                if l.a == port {
                    Some((i, l.b))
                } else if l.b == port {
                    Some((i, l.a))
                } else {
                    None
                }
            })
            .collect()
    }

    /// Full polyline from `from` to `to` along `lane`.
    pub fn route(&self, lane: usize, from: usize) -> Vec<GeoPoint> {
        let l = &self.lanes[lane];
        let mut pts = vec![self.ports[l.a].center];
        pts.extend(&l.waypoints);
        pts.push(self.ports[l.b].center);
        if from == l.b {
            pts.reverse();
        }
        pts
    }
}

fn world_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    const CONS: &[u8] = b"BCDFGHKLMNPRSTVZ";
    const VOWELS: &[u8] = b"AEIOU";
    let syllables = rng.random_range(3..=4);
    let mut s = String::new();
    for _ in 0..syllables {
        s.push(*CONS.choose(rng).expect("non-empty") as char);
        s.push(*VOWELS.choose(rng).expect("non-empty") as char);
    }
    if rng.random_bool(0.5) {
        s.push(*CONS.choose(rng).expect("non-empty") as char);
    }
    s
}

fn random_letters<R: Rng>(rng: &mut R, n: usize) -> String {
    (0..n).map(|_| rng.random_range(b'A'..=b'Z') as char).collect()
}

fn port_polygon<R: Rng>(rng: &mut R, center: GeoPoint) -> Vec<GeoPoint> {
    let r = rng.random_range(0.03..0.06);
    (0..6)
        .map(|k| {
            let a = k as f64 * std::f64::consts::PI / 3.0;
            let rr = r * rng.random_range(0.85..1.0);
            GeoPoint {
                lon: center.lon + rr * a.cos() / center.lat.to_radians().cos(),
                lat: center.lat + rr * a.sin(),
            }
        })
        .collect()
}

/// Smallest distance from `p` to points sampled every ~2 km along the legs.
fn leg_clearance(legs: &[GeoPoint], p: GeoPoint) -> f64 {
    let mut best = f64::INFINITY;
    for w in legs.windows(2) {
        let steps = (haversine_km(w[0], w[1]) / 2.0).ceil().max(1.0) as usize;
        for s in 0..=steps {
            best = best.min(haversine_km(interpolate(w[0], w[1], s as f64 / steps as f64), p));
        }
    }
    best
}

/// A route may touch its departure port only on the first leg and its
/// destination only on the last.
fn route_ok(route: &[GeoPoint], from: &PortRecord, to: &PortRecord) -> bool {
    let margin = 5.0;
    if route.len() == 2 {
        return true;
    }
    leg_clearance(&route[1..], from.center) > from.boundary_radius_km + margin
        && leg_clearance(&route[..route.len() - 1], to.center) > to.boundary_radius_km + margin
}

fn unique_match(text: &str, port: usize, ports: &[PortRecord]) -> bool {
    let c = AnnotateConfig::default();
    let found = extract_candidates(text, ports, c.match_threshold, c.max_ngram);
    found.len() == 1 && found.contains(&port)
}

pub fn gen_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = world_rng(spec.seed, 0);
    let [lon0, lon1, lat0, lat1] = spec.region;
    let margin = 1.0;
    let mut centers: Vec<GeoPoint> = Vec::new();
    let mut attempts = 0;
    while centers.len() < spec.ports {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::Config(format!(
                "cannot place {} ports {MIN_PORT_SEPARATION_DEG} degrees apart in region {:?}",
                spec.ports, spec.region
            )));
        }
        let p = GeoPoint {
            lon: rng.random_range(lon0 + margin..lon1 - margin),
            lat: rng.random_range(lat0 + margin..lat1 - margin),
        };
        if centers
            .iter()
            .all(|c| haversine_km(*c, p) > MIN_PORT_SEPARATION_DEG * KM_PER_DEG)
        {
            centers.push(p);
        }
    }

    let mut names: Vec<String> = Vec::new();
    while names.len() < spec.ports {
        let w = pseudo_word(&mut rng);
        if names.iter().all(|n| dl_distance(n, &w) >= 4) {
            names.push(w);
        }
    }
    let mut codes: Vec<String> = Vec::new();
    while codes.len() < spec.ports {
        let c = format!("X{}{}", random_letters(&mut rng, 1), random_letters(&mut rng, 3));
        let clash = codes.iter().any(|o| dl_distance(o, &c) < 3)
            || names.iter().any(|n| dl_distance(n, &c) < 4);
        if !clash {
            codes.push(c);
        }
    }
    let mut ports = Vec::with_capacity(spec.ports);
    for (i, c) in centers.iter().enumerate() {
        let poly = port_polygon(&mut rng, *c);
        ports.push(PortRecord::from_polygon(i, &names[i], &codes[i], poly, DEFAULT_BOUNDARY_ALPHA)?);
    }
    for (i, p) in ports.iter().enumerate() {
        if !unique_match(&p.name, i, &ports) || !unique_match(&p.locode, i, &ports) {
            return Err(Error::Config(format!("port identifiers of {} are ambiguous", p.name)));
        }
    }

    let mid = GeoPoint {
        lon: (lon0 + lon1) / 2.0,
        lat: (lat0 + lat1) / 2.0,
    };
    let exits: Vec<GeoPoint> = centers
        .iter()
        .map(|c| {
            let b = bearing_deg(*c, mid) + rng.random_range(-60.0..60.0);
            destination(*c, b, EXIT_DISTANCE_DEG * KM_PER_DEG)
        })
        .collect();
    let hub_count = (spec.ports / 4).max(2);
    let hubs: Vec<GeoPoint> = (0..hub_count)
        .map(|_| GeoPoint {
            lon: rng.random_range(lon0 + 2.0..lon1 - 2.0),
            lat: rng.random_range(lat0 + 2.0..lat1 - 2.0),
        })
        .collect();
    let nearest_hub = |p: GeoPoint| {
        (0..hubs.len())
            .min_by(|&a, &b| haversine_km(hubs[a], p).total_cmp(&haversine_km(hubs[b], p)))
            .expect("at least one hub")
    };

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut add_pair = |a: usize, b: usize| {
        let key = (a.min(b), a.max(b));
        if a != b && !pairs.contains(&key) {
            pairs.push(key);
        }
    };
    let mut order: Vec<usize> = (0..spec.ports).collect();
    rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
    for w in order.windows(2) {
        add_pair(w[0], w[1]);
    }
    let partners = spec.partners.min(spec.ports - 1);
    for a in 0..spec.ports {
        let others: Vec<usize> = (0..spec.ports).filter(|&b| b != a).collect();
        for &b in others.choose_multiple(&mut rng, partners) {
            add_pair(a, b);
        }
    }
    pairs.sort_unstable();

    let mut lanes = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let (ha, hb) = (nearest_hub(exits[a]), nearest_hub(exits[b]));
        let mut full = vec![exits[a], hubs[ha]];
        if hb != ha {
            full.push(hubs[hb]);
        }
        full.push(exits[b]);
        let options = [full, vec![exits[a], exits[b]], vec![]];
        let waypoints = options
            .into_iter()
            .find(|wps| {
                let mut route = vec![ports[a].center];
                route.extend(wps);
                route.push(ports[b].center);
                route_ok(&route, &ports[a], &ports[b])
            })
            .expect("direct route always passes");
        lanes.push(Lane {
            a,
            b,
            weight: rng.random_range(1.0..5.0),
            waypoints,
        });
    }
    Ok(World { ports, lanes })
}

/// Ground truth of one generated voyage: the segment annotation should
/// recover, by vessel and first/last timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoyageTruth {
    pub schema_version: u32,
    pub vessel_id: String,
    pub voyage: usize,
    pub departure: usize,
    pub destination: usize,
    pub first_timestamp: i64,
    pub last_timestamp: i64,
    /// Raw messages in the segment span, including injected spikes.
    pub messages: usize,
    /// Timestamps of messages displaced off course.
    pub teleports: Vec<i64>,
    /// Timestamps of messages whose position was replaced by its sentinel.
    pub dropped: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub world: World,
    /// Ordered by vessel, then time.
    pub messages: Vec<AisMessage>,
    pub truth: Vec<VoyageTruth>,
}

struct VesselCtx<'a> {
    world: &'a World,
    spec: &'a WorldSpec,
    id: String,
    ship_type: usize,
}

impl VesselCtx<'_> {
    fn interval<R: Rng>(&self, rng: &mut R) -> i64 {
        let exp = Exp::new(1.0 / (self.spec.mean_interval_minutes * 60.0)).expect("positive rate");
        let cap = self.spec.max_interval_days * 86_400.0;
        loop {
            let x: f64 = exp.sample(rng);
            if x <= cap {
                return (x.round() as i64).max(1);
            }
        }
    }

    /// Destination text for `port`, possibly as its code and possibly edited.
    fn text<R: Rng>(&self, port: usize, rng: &mut R) -> String {
        let p = &self.world.ports[port];
        let base = if rng.random_bool(self.spec.locode_rate) {
            p.locode.clone()
        } else {
            p.name.clone()
        };
        if !rng.random_bool(self.spec.noise.typo_rate) {
            return base;
        }
        for _ in 0..8 {
            let t = typo(&base, rng);
            if t != base && unique_match(&t, port, &self.world.ports) {
                return t;
            }
        }
        base
    }

    fn message(&self, t: i64, pos: GeoPoint, dest: String) -> AisMessage {
        AisMessage {
            vessel_id: self.id.clone(),
            timestamp: t,
            eta: None,
            pos,
            sog: Some(0.0),
            rot: Some(0.0),
            cog: Some(0.0),
            heading: Some(0.0),
            draught: None,
            ship_type: self.ship_type,
            destination: dest,
        }
    }

    /// `count` messages moored at the port center, starting at `t`. The
    /// first half names the port, the rest the next destination.
    fn dwell<R: Rng>(&self, port: usize, next: Option<usize>, mut t: i64, draught: f64, rng: &mut R) -> Vec<AisMessage> {
        let (lo, hi) = self.spec.dwell_messages;
        let count = rng.random_range(lo..=hi);
        let heading = rng.random_range(0..360) as f64;
        (0..count)
            .map(|k| {
                if k > 0 {
                    t += self.interval(rng);
                }
                let named = if k < count.div_ceil(2) { port } else { next.unwrap_or(port) };
                let mut m = self.message(t, self.world.ports[port].center, self.text(named, rng));
                m.heading = Some(heading);
                m.draught = Some(draught);
                m
            })
            .collect()
    }
}

/// Applies a random number of single-character edits that keeps the edited
/// text within a quarter of its own length from the original.
pub fn typo<R: Rng>(text: &str, rng: &mut R) -> String {
    let mut chars: Vec<char> = text.chars().collect();
    let len = chars.len();
    // e edits leave at least len - e characters; require e / (len - e) < 1/4
    let max_edits = (1..len).take_while(|&e| 4 * e < len - e).last().unwrap_or(0);
    if max_edits == 0 {
        return text.to_string();
    }
    let edits = rng.random_range(1..=max_edits);
    for _ in 0..edits {
        let letter = rng.random_range(b'A'..=b'Z') as char;
        match rng.random_range(0..4) {
            0 => {
                let i = rng.random_range(0..chars.len());
                chars[i] = letter;
            }
            1 => {
                let i = rng.random_range(0..=chars.len());
                chars.insert(i, letter);
            }
            2 if chars.len() > 1 => {
                let i = rng.random_range(0..chars.len());
                chars.remove(i);
            }
            _ if chars.len() > 1 => {
                let i = rng.random_range(0..chars.len() - 1);
                chars.swap(i, i + 1);
            }
            _ => {}
        }
    }
    chars.into_iter().collect()
}

/// One voyage from `from` along `lane`, starting at time `start` moored at
/// the departure center: the underway messages followed by the dwell at the
/// destination. Returns the messages and the dwell's first index.
pub fn gen_voyage<R: Rng>(
    world: &World,
    spec: &WorldSpec,
    lane: usize,
    from: usize,
    next_after: Option<usize>,
    vessel: (&str, usize),
    start: i64,
    rng: &mut R,
) -> (Vec<AisMessage>, usize) {
    let to = world.departures(from).into_iter().find(|&(i, _)| i == lane).map(|(_, d)| d).expect("lane touches port");
    let ctx = VesselCtx {
        world,
        spec,
        id: vessel.0.to_string(),
        ship_type: vessel.1,
    };
    let route = world.route(lane, from);
    let legs: Vec<f64> = route.windows(2).map(|w| haversine_km(w[0], w[1])).collect();
    let total_km: f64 = legs.iter().sum();
    let speed = rng.random_range(spec.speed_knots.0..=spec.speed_knots.1);
    let speed_kmh = speed * KM_PER_NM;
    let arrival = start + (total_km / speed_kmh * 3600.0).ceil() as i64;
    let draught = (rng.random_range(50..150) as f64) / 10.0;
    let jitter = Normal::new(0.0, 0.2).expect("finite");
    let mut out = Vec::new();
    let mut t = start + ctx.interval(rng);
    while t < arrival {
        let mut along = (t - start) as f64 / 3600.0 * speed_kmh;
        let mut leg = 0;
        while leg + 1 < legs.len() && along > legs[leg] {
            along -= legs[leg];
            leg += 1;
        }
        let frac = (along / legs[leg]).clamp(0.0, 1.0);
        let pos = interpolate(route[leg], route[leg + 1], frac);
        let cog = bearing_deg(pos, route[leg + 1]);
        let mut m = ctx.message(t, pos, ctx.text(to, rng));
        m.sog = Some(((speed + jitter.sample(rng)) * 10.0).round() / 10.0);
        m.cog = Some((cog * 10.0).round() / 10.0 % 360.0);
        m.heading = Some((cog.round() + rng.random_range(-2.0f64..=2.0).round()).rem_euclid(360.0));
        m.rot = Some(jitter.sample(rng).round());
        m.draught = Some(draught);
        m.eta = Some(arrival + rng.random_range(-7200..=7200));
        out.push(m);
        t += ctx.interval(rng);
    }
    let dwell_start = out.len();
    out.extend(ctx.dwell(to, next_after, t, draught, rng));
    (out, dwell_start)
}

fn generate_vessel(world: &World, spec: &WorldSpec, index: usize, voyages: usize) -> (Vec<AisMessage>, Vec<VoyageTruth>) {
    let mut rng = world_rng(spec.seed, index as u64 + 1);
    let id = format!("V{:05}", index + 1);
    let weights: Vec<f64> = spec.ship_types.iter().map(|&(_, w)| w).collect();
    let ship_type = spec.ship_types[WeightedIndex::new(&weights).expect("validated").sample(&mut rng)].0;

    // port sequence first, so each dwell knows the next destination
    let mut port = rng.random_range(0..world.ports.len());
    let mut plan = Vec::with_capacity(voyages);
    for _ in 0..voyages {
        let options = world.departures(port);
        let w: Vec<f64> = options.iter().map(|&(l, _)| world.lanes[l].weight).collect();
        let (lane, to) = options[WeightedIndex::new(&w).expect("every port has a lane").sample(&mut rng)];
        plan.push((lane, port, to));
        port = to;
    }
    let ctx = VesselCtx {
        world,
        spec,
        id: id.clone(),
        ship_type,
    };
    let start = EPOCH_START + rng.random_range(0..30 * 86_400);
    let mut msgs = ctx.dwell(plan[0].1, Some(plan[0].2), start, 8.0, &mut rng);
    let mut spans = Vec::with_capacity(voyages);
    let mut underway = Vec::with_capacity(voyages);
    for (v, &(lane, from, to)) in plan.iter().enumerate() {
        let next = plan.get(v + 1).map(|p| p.2);
        let depart = msgs.last().expect("dwell is never empty").timestamp;
        let first = msgs.len() - ctx_dwell_len(&msgs, from, world) + 1;
        let (voyage, dwell_start) = gen_voyage(world, spec, lane, from, next, (&id, ship_type), depart, &mut rng);
        let base = msgs.len();
        msgs.extend(voyage);
        spans.push((first, base + dwell_start, from, to));
        underway.push(base..base + dwell_start);
    }

    let mut teleports: Vec<usize> = Vec::new();
    let mut dropped: Vec<usize> = Vec::new();
    let noise = spec.noise;
    for range in &underway {
        if range.len() < 3 {
            continue;
        }
        for i in range.start + 1..range.end - 1 {
            if teleports.last().is_some_and(|&p| p + 1 >= i) || !rng.random_bool(noise.teleport_rate) {
                continue;
            }
            if let Some(p) = teleport_target(world, msgs[i].pos, &mut rng) {
                msgs[i].pos = p;
                teleports.push(i);
            }
        }
    }
    let is_underway = |i: usize| underway.iter().any(|r| r.contains(&i));
    for i in 0..msgs.len() {
        if !rng.random_bool(noise.sentinel_rate) {
            continue;
        }
        let fields = if is_underway(i) && !teleports.contains(&i) { 5 } else { 4 };
        let m = &mut msgs[i];
        match rng.random_range(0..fields) {
            0 => m.sog = Some(SOG_NOT_AVAILABLE),
            1 => m.cog = Some(COG_NOT_AVAILABLE),
            2 => m.rot = Some(ROT_NOT_AVAILABLE),
            3 => m.heading = Some(HEADING_NOT_AVAILABLE),
            _ => {
                m.pos = GeoPoint { lon: 181.0, lat: 91.0 };
                dropped.push(i);
            }
        }
    }

    let truth = spans
        .iter()
        .enumerate()
        .map(|(v, &(first, last, from, to))| {
            let ts = |set: &[usize]| set.iter().filter(|&&i| i >= first && i <= last).map(|&i| msgs[i].timestamp).collect();
            VoyageTruth {
                schema_version: TRUTH_SCHEMA_VERSION,
                vessel_id: id.clone(),
                voyage: v,
                departure: from,
                destination: to,
                first_timestamp: msgs[first].timestamp,
                last_timestamp: msgs[last].timestamp,
                messages: last + 1 - first,
                teleports: ts(&teleports),
                dropped: ts(&dropped),
            }
        })
        .collect();
    (msgs, truth)
}

/// Length of the trailing run of messages moored at `port`'s center.
fn ctx_dwell_len(msgs: &[AisMessage], port: usize, world: &World) -> usize {
    let c = world.ports[port].center;
    msgs.iter().rev().take_while(|m| m.pos == c).count()
}

fn teleport_target<R: Rng>(world: &World, pos: GeoPoint, rng: &mut R) -> Option<GeoPoint> {
    for _ in 0..20 {
        let d = rng.random_range(TELEPORT_DEG.0..TELEPORT_DEG.1) * KM_PER_DEG;
        let p = destination(pos, rng.random_range(0.0..360.0), d);
        if p.lat.abs() < 85.0 && world.ports.iter().all(|q| haversine_km(q.center, p) > KM_PER_DEG) {
            return Some(p);
        }
    }
    None
}

/// Generates the world and every vessel's stream. Vessels use independent
/// random streams, so output does not depend on thread count.
pub fn generate(spec: &WorldSpec) -> Result<Dataset> {
    let world = gen_world(spec)?;
    let vessels = spec.vessels.min(spec.voyages.max(1));
    let per = spec.voyages / vessels;
    let extra = spec.voyages % vessels;
    let parts: Vec<(Vec<AisMessage>, Vec<VoyageTruth>)> = (0..vessels)
        .into_par_iter()
        .filter_map(|i| {
            let n = per + usize::from(i < extra);
            (n > 0).then(|| generate_vessel(&world, spec, i, n))
        })
        .collect();
    let mut messages = Vec::new();
    let mut truth = Vec::new();
    for (m, t) in parts {
        messages.extend(m);
        truth.extend(t);
    }
    Ok(Dataset { world, messages, truth })
}
