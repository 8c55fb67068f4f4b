//! Synthetic grid networks and probe fleets with known routes.
//!
//! Vehicles drive routes chosen by travel time under a personal taste for
//! each link, so that a vehicle repeating an origin/destination pair also
//! repeats its route. Link speeds follow a two-peak congestion profile that
//! hits arterials harder than local streets.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, direction_deg, normalize_deg};
use crate::history::{MatchRecord, ProbeMatch};
use crate::network::{EdgeId, LinkRecord, NodeRecord, RoadNetwork};
use crate::trajectory::{MAX_SPEED, Probe, Trajectory};

const DAY: f64 = 86_400.0;
const MAX_OD_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Block length (m).
    pub spacing: f64,
    /// Every n-th row and column is an arterial.
    pub arterial_every: usize,
    /// Free-flow speed on arterials (m/s).
    pub arterial_speed: f64,
    /// Free-flow speed on local streets (m/s).
    pub local_speed: f64,
    pub origin_lon: f64,
    pub origin_lat: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rows: 8,
            cols: 8,
            spacing: 430.0,
            arterial_every: 3,
            arterial_speed: 15.7,
            local_speed: 9.3,
            origin_lon: 117.65,
            origin_lat: 24.51,
        }
    }
}

impl GridSpec {
    fn is_arterial(&self, i: usize) -> bool {
        self.arterial_every > 0 && i.is_multiple_of(self.arterial_every)
    }
}

/// Nodes and two-way links of a rectangular grid.
pub fn grid_records(spec: &GridSpec) -> (Vec<NodeRecord>, Vec<LinkRecord>) {
    let proj = crate::geometry::LocalProjection::new(spec.origin_lon, spec.origin_lat);
    let id = |r: usize, c: usize| (r * spec.cols + c + 1) as i64;
    let mut nodes = Vec::with_capacity(spec.rows * spec.cols);
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let (lon, lat) = proj.unproject(Point::new(c as f64 * spec.spacing, r as f64 * spec.spacing));
            nodes.push(NodeRecord { node_id: id(r, c), lon, lat });
        }
    }
    let mut links = Vec::new();
    let mut push = |a: i64, b: i64| {
        for (from, to) in [(a, b), (b, a)] {
            links.push(LinkRecord {
                link_id: links.len() as i64 + 1,
                from_node: from,
                to_node: to,
                length_m: None,
                bearing_deg: None,
            });
        }
    };
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            if c + 1 < spec.cols {
                push(id(r, c), id(r, c + 1));
            }
            if r + 1 < spec.rows {
                push(id(r, c), id(r + 1, c));
            }
        }
    }
    (nodes, links)
}

pub fn grid_network(spec: &GridSpec, split_length: f64) -> Result<RoadNetwork> {
    let (nodes, links) = grid_records(spec);
    RoadNetwork::load(&nodes, &links, split_length)
}

/// Free-flow speeds (m/s) per link index: arterials for grid lines picked by
/// `spec`, local streets elsewhere.
pub fn grid_free_flow(net: &RoadNetwork, spec: &GridSpec) -> Vec<f64> {
    net.links
        .iter()
        .map(|l| {
            let (a, b) = (l.from, l.to);
            let (ra, ca) = (a / spec.cols, a % spec.cols);
            let (rb, cb) = (b / spec.cols, b % spec.cols);
            let arterial = (ra == rb && spec.is_arterial(ra)) || (ca == cb && spec.is_arterial(ca));
            if arterial { spec.arterial_speed } else { spec.local_speed }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetSpec {
    pub vehicles: usize,
    pub days: usize,
    pub trips_per_day: usize,
    /// Probability that a trip repeats the vehicle's habitual origin and
    /// destination.
    pub habit_strength: f64,
    pub congestion: bool,
    /// Probing interval (s).
    pub interval: f64,
    /// Position noise (m).
    pub gps_sigma: f64,
    /// Speed noise (m/s).
    pub speed_sigma: f64,
    /// Bearing noise (degrees).
    pub bearing_sigma: f64,
    /// Time of day at which the first trip slot opens (s).
    pub day_start: f64,
    /// Length of each trip slot (s); a trip departs in its first half.
    pub slot: f64,
    /// Minimum idle time between two trips of one vehicle (s). Keeping it
    /// above the probe reader's trip gap lets written probes split back
    /// into the same trips.
    pub min_gap: f64,
    /// Spread of each vehicle's personal link preference (log-normal sigma).
    pub taste_sigma: f64,
    /// Minimum straight-line distance between trip origin and destination (m).
    pub min_trip_m: f64,
    pub seed: u64,
}

impl Default for FleetSpec {
    fn default() -> Self {
        Self {
            vehicles: 200,
            days: 8,
            trips_per_day: 3,
            habit_strength: 0.7,
            congestion: true,
            interval: 15.0,
            gps_sigma: 5.0,
            speed_sigma: 0.5,
            bearing_sigma: 5.0,
            day_start: 7.0 * 3600.0,
            slot: 3600.0,
            min_gap: 960.0,
            taste_sigma: 0.3,
            min_trip_m: 1500.0,
            seed: 0,
        }
    }
}

impl FleetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.interval > 0.0) {
            return Err(Error::InvalidParameter("probe interval must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.habit_strength) {
            return Err(Error::InvalidParameter("habit strength must lie in [0, 1]".into()));
        }
        if [self.gps_sigma, self.speed_sigma, self.bearing_sigma, self.taste_sigma]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return Err(Error::InvalidParameter("noise levels must be nonnegative".into()));
        }
        if !(self.min_gap >= 0.0) {
            return Err(Error::InvalidParameter("minimum trip gap must be nonnegative".into()));
        }
        if !(self.slot > 0.0) {
            return Err(Error::InvalidParameter("trip slot must be positive".into()));
        }
        Ok(())
    }
}

/// Link speed multiplier in `(0, 1]` at time `t`: morning and evening peaks.
pub fn congestion_factor(t: f64, arterial: bool) -> f64 {
    let tod = t.rem_euclid(DAY);
    let peak = |c: f64| (-((tod - c) / 3600.0).powi(2)).exp();
    let depth = if arterial { 0.45 } else { 0.2 };
    1.0 - depth * (peak(8.0 * 3600.0) + peak(18.0 * 3600.0)).min(1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrip {
    pub trajectory: Trajectory,
    /// Reference match: every probe on its true edge, segments on the route.
    pub truth: MatchRecord,
    pub day: usize,
    pub habitual: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyntheticFleet {
    pub trips: Vec<SyntheticTrip>,
}

impl SyntheticFleet {
    pub fn trajectories(&self) -> Vec<Trajectory> {
        self.trips.iter().map(|t| t.trajectory.clone()).collect()
    }

    pub fn truth(&self) -> Vec<MatchRecord> {
        self.trips.iter().map(|t| t.truth.clone()).collect()
    }

    /// Trips of the given days, in generation order.
    pub fn days(&self, days: std::ops::Range<usize>) -> SyntheticFleet {
        SyntheticFleet {
            trips: self.trips.iter().filter(|t| days.contains(&t.day)).cloned().collect(),
        }
    }
}

struct Vehicle {
    id: String,
    taste: Vec<f64>,
    home: (usize, usize),
    pace: f64,
}

fn route_links(
    net: &RoadNetwork,
    cost: impl Fn(usize) -> f64,
    from: usize,
    to: usize,
) -> Option<Vec<usize>> {
    let n = net.nodes.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut via: Vec<Option<usize>> = vec![None; n];
    let mut heap = BinaryHeap::new();
    dist[from] = 0.0;
    heap.push(Reverse((OrdF64(0.0), from)));
    while let Some(Reverse((OrdF64(d), u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        if u == to {
            break;
        }
        for &l in net.out_links(u) {
            let v = net.links[l].to;
            let nd = d + cost(l);
            if nd < dist[v] {
                dist[v] = nd;
                via[v] = Some(l);
                heap.push(Reverse((OrdF64(nd), v)));
            }
        }
    }
    if !dist[to].is_finite() {
        return None;
    }
    let mut links = Vec::new();
    let mut at = to;
    while let Some(l) = via[at] {
        links.push(l);
        at = net.links[l].from;
    }
    links.reverse();
    Some(links)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Drives a route and samples probes. The vehicle starts at `s0` metres
/// along the first link and stops at `s1` metres along the last one.
struct Drive<'a> {
    net: &'a RoadNetwork,
    links: &'a [usize],
    speeds: Vec<f64>,
    s0: f64,
    s1: f64,
}

/// One sample of the vehicle state.
struct Sample {
    link_pos: usize,
    along: f64,
    speed: f64,
}

impl Drive<'_> {
    /// Samples at `t0 + k*dt` until the destination is reached.
    fn samples(&self, dt: f64) -> Vec<Sample> {
        let mut out = Vec::new();
        let mut link_pos = 0;
        let mut along = self.s0;
        let last = self.links.len() - 1;
        loop {
            out.push(Sample {
                link_pos,
                along,
                speed: self.speeds[link_pos],
            });
            // advance by dt
            let mut budget = dt;
            loop {
                let len = self.net.links[self.links[link_pos]].length;
                let stop = if link_pos == last { self.s1 } else { len };
                let v = self.speeds[link_pos];
                let need = (stop - along) / v;
                if need > budget {
                    along += budget * v;
                    break;
                }
                budget -= need;
                if link_pos == last {
                    return out;
                }
                link_pos += 1;
                along = 0.0;
            }
        }
    }
}

/// Edge containing a position along a link, with the same half-open rule
/// the projection uses.
fn edge_at(net: &RoadNetwork, link: usize, along: f64) -> EdgeId {
    let l = &net.links[link];
    for i in l.edges.clone() {
        let e = &net.edges[i];
        if along < e.link_offset + e.length {
            return EdgeId(i);
        }
    }
    EdgeId(l.edges.end - 1)
}

/// Generates trips for every vehicle and day. Trip ids follow the
/// `{vehicle}-{k}` scheme of the probe reader, so writing the probes and
/// reading them back reproduces the same trajectories.
pub fn generate_synthetic(net: &RoadNetwork, free_flow: &[f64], spec: &FleetSpec) -> Result<SyntheticFleet> {
    spec.validate()?;
    if free_flow.len() != net.links.len() {
        return Err(Error::DimensionMismatch {
            expected: net.links.len(),
            got: free_flow.len(),
        });
    }
    if net.links.is_empty() {
        return Err(Error::InsufficientData("network has no links".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let taste_dist = LogNormal::new(0.0, spec.taste_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let gps = Normal::new(0.0, spec.gps_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let speed_noise = Normal::new(0.0, spec.speed_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let bearing_noise = Normal::new(0.0, spec.bearing_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let max_free = free_flow.iter().copied().fold(0.0, f64::max);
    let min_free = free_flow.iter().copied().fold(f64::INFINITY, f64::min);
    let arterial: Vec<bool> = free_flow.iter().map(|&v| v >= max_free && max_free > min_free).collect();

    let n_nodes = net.nodes.len();
    let pick_od = |rng: &mut ChaCha8Rng| -> Result<(usize, usize)> {
        for _ in 0..MAX_OD_RETRIES {
            let a = rng.random_range(0..n_nodes);
            let b = rng.random_range(0..n_nodes);
            if a != b && net.nodes[a].pos.dist(&net.nodes[b].pos) >= spec.min_trip_m {
                return Ok((a, b));
            }
        }
        Err(Error::InsufficientData("no origin/destination pair far enough apart".into()))
    };

    let mut vehicles = Vec::with_capacity(spec.vehicles);
    for v in 0..spec.vehicles {
        let taste = (0..net.links.len()).map(|_| taste_dist.sample(&mut rng)).collect();
        let home = pick_od(&mut rng)?;
        vehicles.push(Vehicle {
            id: format!("v{v:03}"),
            taste,
            home,
            pace: rng.random_range(0.92..1.08),
        });
    }

    let mut trips = Vec::new();
    for veh in &vehicles {
        let mut k = 0;
        let mut free_at = f64::NEG_INFINITY;
        for day in 0..spec.days {
            for slot in 0..spec.trips_per_day {
                let habitual = rng.random_bool(spec.habit_strength);
                let depart = day as f64 * DAY
                    + spec.day_start
                    + slot as f64 * spec.slot
                    + rng.random_range(0.0..0.5 * spec.slot);
                let depart = depart.max(free_at + spec.min_gap);
                let speed_at = |l: usize, t: f64| {
                    let c = if spec.congestion { congestion_factor(t, arterial[l]) } else { 1.0 };
                    (free_flow[l] * c * veh.pace).min(MAX_SPEED - 1.0)
                };
                let mut built = None;
                for attempt in 0..MAX_OD_RETRIES {
                    let (a, b) = if habitual && attempt == 0 { veh.home } else { pick_od(&mut rng)? };
                    let cost = |l: usize| net.links[l].length / speed_at(l, depart) * veh.taste[l];
                    if let Some(r) = route_links(net, cost, a, b).filter(|r| !r.is_empty()) {
                        built = Some(r);
                        break;
                    }
                }
                let Some(links) = built else {
                    return Err(Error::InsufficientData(format!("{}: no reachable trip found", veh.id)));
                };
                let speeds = links.iter().map(|&l| speed_at(l, depart)).collect();
                let first_len = net.links[links[0]].length;
                let last_len = net.links[*links.last().unwrap()].length;
                let drive = Drive {
                    net,
                    links: &links,
                    speeds,
                    s0: rng.random_range(0.15..0.45) * first_len,
                    s1: rng.random_range(0.55..0.85) * last_len,
                };
                let samples = drive.samples(spec.interval);
                if samples.len() < 2 {
                    continue;
                }
                let id = format!("{}-{k}", veh.id);
                let mut probes = Vec::with_capacity(samples.len());
                let mut truth: Vec<ProbeMatch> = Vec::with_capacity(samples.len());
                let mut prev: Option<(usize, EdgeId)> = None;
                for (i, s) in samples.iter().enumerate() {
                    let l = links[s.link_pos];
                    let link = &net.links[l];
                    let (a, b) = (net.nodes[link.from].pos, net.nodes[link.to].pos);
                    let p = a.lerp(&b, s.along / link.length);
                    let noisy = Point::new(p.x + gps.sample(&mut rng), p.y + gps.sample(&mut rng));
                    let (lon, lat) = net.unproject(noisy);
                    let t = depart + i as f64 * spec.interval;
                    probes.push(Probe {
                        t,
                        speed: (s.speed + speed_noise.sample(&mut rng)).clamp(0.0, MAX_SPEED - 1e-6),
                        bearing: normalize_deg(direction_deg(a, b) + bearing_noise.sample(&mut rng)),
                        lon,
                        lat,
                    });
                    let edge = edge_at(net, l, s.along);
                    let path = prev.map(|(pl, pe)| route_edges(net, &links, pl, pe, s.link_pos, edge));
                    truth.push(ProbeMatch {
                        timestamp: t,
                        edge: Some(edge),
                        point: Some(p),
                        path,
                    });
                    prev = Some((s.link_pos, edge));
                }
                free_at = probes.last().map_or(depart, |p| p.t);
                trips.push(SyntheticTrip {
                    trajectory: Trajectory::new(id.clone(), veh.id.clone(), probes)?,
                    truth: MatchRecord {
                        trajectory_id: id,
                        probes: truth,
                    },
                    day,
                    habitual,
                });
                k += 1;
            }
        }
    }
    Ok(SyntheticFleet { trips })
}

/// Route edges from `(from_pos, from_edge)` to `(to_pos, to_edge)`, both included.
fn route_edges(
    net: &RoadNetwork,
    links: &[usize],
    from_pos: usize,
    from_edge: EdgeId,
    to_pos: usize,
    to_edge: EdgeId,
) -> Vec<EdgeId> {
    let mut out = Vec::new();
    for (pos, &l) in links.iter().enumerate().take(to_pos + 1).skip(from_pos) {
        let range = net.links[l].edges.clone();
        let lo = if pos == from_pos { from_edge.0 } else { range.start };
        let hi = if pos == to_pos { to_edge.0 } else { range.end - 1 };
        out.extend((lo..=hi).map(EdgeId));
    }
    out
}
