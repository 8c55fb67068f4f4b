//! Finished match results: per-trajectory edge usage counts, collaborative
//! group queries, and the newline-delimited history log.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::network::{EdgeId, RoadNetwork};
use crate::trajectory::Trajectory;

const DAY_SECONDS: f64 = 86_400.0;

/// Match outcome for a single probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeMatch {
    pub timestamp: f64,
    pub edge: Option<EdgeId>,
    /// Projection of the probe on `edge`.
    pub point: Option<Point>,
    /// Inferred path of the segment that ends at this probe (start-edge first).
    pub path: Option<Vec<EdgeId>>,
}

impl ProbeMatch {
    pub fn unmatched(timestamp: f64) -> Self {
        Self {
            timestamp,
            edge: None,
            point: None,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRecord {
    pub trajectory_id: String,
    pub probes: Vec<ProbeMatch>,
}

impl MatchRecord {
    pub fn completion_time(&self) -> f64 {
        self.probes.last().map(|p| p.timestamp).unwrap_or(f64::NEG_INFINITY)
    }

    pub fn matched_count(&self) -> usize {
        self.probes.iter().filter(|p| p.edge.is_some()).count()
    }

    /// Checks path connectivity and that every segment ends on its probe's edge.
    pub fn validate(&self, net: &RoadNetwork) -> Result<()> {
        for (i, pm) in self.probes.iter().enumerate() {
            let Some(path) = &pm.path else { continue };
            if path.is_empty() {
                return Err(Error::EmptyPath);
            }
            if let Some(bad) = path.iter().find(|e| e.0 >= net.edges.len()) {
                return Err(Error::DisconnectedPath(format!("unknown edge {}", bad.0)));
            }
            for w in path.windows(2) {
                if !edges_connected(net, w[0], w[1]) {
                    return Err(Error::DisconnectedPath(format!(
                        "{}: probe {i}: {:?} -> {:?}",
                        self.trajectory_id,
                        net.edge_label(w[0]),
                        net.edge_label(w[1])
                    )));
                }
            }
            if pm.edge != path.last().copied() {
                return Err(Error::DisconnectedPath(format!(
                    "{}: probe {i} edge differs from its segment's end edge",
                    self.trajectory_id
                )));
            }
        }
        Ok(())
    }

    /// Edge traversal sequence: segment paths concatenated, with the edge
    /// shared by consecutive segments counted once.
    pub fn traversal(&self) -> Vec<EdgeId> {
        let mut out: Vec<EdgeId> = Vec::new();
        let mut prev_end: Option<EdgeId> = None;
        for pm in &self.probes {
            match &pm.path {
                Some(path) => {
                    let skip = usize::from(prev_end.is_some() && prev_end == path.first().copied());
                    out.extend_from_slice(&path[skip..]);
                    prev_end = path.last().copied();
                }
                None => {
                    if let Some(e) = pm.edge {
                        if out.last() != Some(&e) {
                            out.push(e);
                        }
                    }
                    prev_end = pm.edge;
                }
            }
        }
        out
    }
}

/// True when `b` directly follows `a` in the directed graph.
pub fn edges_connected(net: &RoadNetwork, a: EdgeId, b: EdgeId) -> bool {
    let (ea, eb) = (net.edge(a), net.edge(b));
    if ea.link == eb.link {
        return eb.seq == ea.seq + 1;
    }
    let (la, lb) = (&net.links[ea.link], &net.links[eb.link]);
    ea.seq == la.edge_count() && eb.seq == 1 && la.to == lb.from
}

/// Origin/destination attributes used by collaborative-group queries.
#[derive(Debug, Clone, PartialEq)]
pub struct TripSummary {
    pub id: String,
    pub vehicle: String,
    pub start: Point,
    pub start_time: f64,
    /// Absent while the trip is still streaming.
    pub end: Option<(Point, f64)>,
}

impl TripSummary {
    pub fn of(tr: &Trajectory, net: &RoadNetwork) -> Self {
        let (s, e) = (tr.start(), tr.end());
        Self {
            id: tr.id.clone(),
            vehicle: tr.vehicle.clone(),
            start: net.project(s.lon, s.lat),
            start_time: s.t,
            end: Some((net.project(e.lon, e.lat), e.t)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalMode {
    Absolute,
    #[default]
    TimeOfDay,
}

impl TemporalMode {
    pub fn gap(self, a: f64, b: f64) -> f64 {
        match self {
            TemporalMode::Absolute => (a - b).abs(),
            TemporalMode::TimeOfDay => {
                let d = (a - b).rem_euclid(DAY_SECONDS);
                d.min(DAY_SECONDS - d)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupQuery {
    pub spatial_radius: f64,
    pub temporal_radius: f64,
    pub mode: TemporalMode,
    /// Skip end-anchored filters for trips that have no end probe yet.
    pub streaming: bool,
}

impl Default for GroupQuery {
    fn default() -> Self {
        Self {
            spatial_radius: 300.0,
            temporal_radius: 5.0,
            mode: TemporalMode::TimeOfDay,
            streaming: false,
        }
    }
}

/// The ego vehicle's earlier trips and its neighbouring trips.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollaborativeGroup {
    pub ego: Vec<String>,
    pub neighbors: Vec<String>,
}

impl CollaborativeGroup {
    /// `|G|`: the ego plus its neighbours.
    pub fn size(&self) -> usize {
        1 + self.neighbors.len()
    }
}

#[derive(Debug, Clone)]
struct StoredTrip {
    summary: TripSummary,
    counts: HashMap<EdgeId, u32>,
}

#[derive(Debug, Clone, Default)]
pub struct HistoryStore {
    trips: Vec<StoredTrip>,
    index: HashMap<String, usize>,
    by_vehicle: HashMap<String, Vec<usize>>,
    records: Vec<MatchRecord>,
}

impl HistoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.trips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trips.is_empty()
    }

    pub fn records(&self) -> &[MatchRecord] {
        &self.records
    }

    pub fn record_match(&mut self, net: &RoadNetwork, trip: TripSummary, record: MatchRecord) -> Result<()> {
        if record.trajectory_id != trip.id {
            return Err(Error::Misaligned(format!(
                "record {} stored under trip {}",
                record.trajectory_id, trip.id
            )));
        }
        if trip.end.is_none() {
            return Err(Error::Unfinished(trip.id));
        }
        if self.index.contains_key(&trip.id) {
            return Err(Error::DuplicateRecord(trip.id));
        }
        record.validate(net)?;
        let mut counts: HashMap<EdgeId, u32> = HashMap::new();
        for e in record.traversal() {
            *counts.entry(e).or_default() += 1;
        }
        let ix = self.trips.len();
        self.index.insert(trip.id.clone(), ix);
        self.by_vehicle.entry(trip.vehicle.clone()).or_default().push(ix);
        self.trips.push(StoredTrip { summary: trip, counts });
        self.records.push(record);
        Ok(())
    }

    pub fn edge_count(&self, trip_id: &str, edge: EdgeId) -> u32 {
        self.index
            .get(trip_id)
            .and_then(|&i| self.trips[i].counts.get(&edge).copied())
            .unwrap_or(0)
    }

    fn finished_before(&self, ix: usize, t: f64) -> bool {
        self.trips[ix]
            .summary
            .end
            .is_some_and(|(_, end_time)| end_time < t)
    }

    /// Finished trips whose origin/destination and start/end times fall
    /// within the query radii of `trip`.
    pub fn collaborative_group(&self, trip: &TripSummary, q: &GroupQuery) -> Result<BTreeSet<String>> {
        let end = match trip.end {
            Some(end) => Some(end),
            None if q.streaming => None,
            None => return Err(Error::Unfinished(trip.id.clone())),
        };
        let mut out = BTreeSet::new();
        for (ix, st) in self.trips.iter().enumerate() {
            let other = &st.summary;
            if other.id == trip.id || !self.finished_before(ix, trip.start_time) {
                continue;
            }
            if other.start.dist(&trip.start) > q.spatial_radius
                || q.mode.gap(other.start_time, trip.start_time) > q.temporal_radius
            {
                continue;
            }
            if let (Some((pe, te)), Some((pe2, te2))) = (end, other.end) {
                if pe.dist(&pe2) > q.spatial_radius || q.mode.gap(te, te2) > q.temporal_radius {
                    continue;
                }
            }
            out.insert(other.id.clone());
        }
        Ok(out)
    }

    /// Ego history (every earlier finished trip of the same vehicle) plus the
    /// other vehicles' trips in the collaborative group.
    pub fn group_for(&self, trip: &TripSummary, q: &GroupQuery) -> Result<CollaborativeGroup> {
        let ego: Vec<String> = self
            .by_vehicle
            .get(&trip.vehicle)
            .into_iter()
            .flatten()
            .filter(|&&ix| self.trips[ix].summary.id != trip.id && self.finished_before(ix, trip.start_time))
            .map(|&ix| self.trips[ix].summary.id.clone())
            .collect();
        let neighbors = self
            .collaborative_group(trip, q)?
            .into_iter()
            .filter(|id| self.trips[self.index[id]].summary.vehicle != trip.vehicle)
            .collect();
        Ok(CollaborativeGroup { ego, neighbors })
    }

    fn sum_counts(&self, trips: &[String], path: &[EdgeId]) -> f64 {
        trips
            .iter()
            .filter_map(|id| self.index.get(id))
            .map(|&ix| {
                let counts = &self.trips[ix].counts;
                path.iter().map(|e| counts.get(e).copied().unwrap_or(0) as f64).sum::<f64>()
            })
            .sum()
    }

    /// Weighted historical usage frequency of a path.
    pub fn usage_frequency(&self, group: &CollaborativeGroup, path: &[EdgeId], w_c: f64) -> Result<f64> {
        if path.is_empty() {
            return Err(Error::EmptyPath);
        }
        if !(0.0..=1.0).contains(&w_c) {
            return Err(Error::InvalidParameter(format!("w_c must lie in [0, 1], got {w_c}")));
        }
        let ego = self.sum_counts(&group.ego, path);
        let others = if w_c > 0.0 { self.sum_counts(&group.neighbors, path) } else { 0.0 };
        let denom = (1.0 + w_c * (group.size() - 1) as f64) * path.len() as f64;
        Ok((ego + w_c * others) / denom)
    }

    pub fn write_log(&self, net: &RoadNetwork, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for rec in &self.records {
            write_log_lines(&mut w, net, rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rebuilds a store from a history log plus the trajectories it refers to.
    pub fn load_log(net: &RoadNetwork, path: &Path, trajectories: &[Trajectory]) -> Result<HistoryStore> {
        let parsed = read_log(net, path)?;
        let by_id: HashMap<&str, &Trajectory> = trajectories.iter().map(|t| (t.id.as_str(), t)).collect();
        let mut store = HistoryStore::new();
        for (id, lines) in parsed {
            let tr = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::Misaligned(format!("history trajectory {id} missing from probes")))?;
            let mut probes: Vec<ProbeMatch> = tr.probes.iter().map(|p| ProbeMatch::unmatched(p.t)).collect();
            for line in lines {
                let slot = probes.get_mut(line.probe_idx).ok_or_else(|| {
                    Error::Misaligned(format!("{id}: probe index {} out of range", line.probe_idx))
                })?;
                slot.edge = line.edge;
                slot.path = line.path;
            }
            let record = MatchRecord { trajectory_id: id, probes };
            store.record_match(net, TripSummary::of(tr, net), record)?;
        }
        Ok(store)
    }
}

pub(crate) fn format_edge(net: &RoadNetwork, e: EdgeId) -> String {
    let (link, seq) = net.edge_label(e);
    format!("{link}:{seq}")
}

pub(crate) fn format_path(net: &RoadNetwork, path: &[EdgeId]) -> String {
    path.iter().map(|&e| format_edge(net, e)).collect::<Vec<_>>().join(";")
}

pub(crate) fn parse_edge(net: &RoadNetwork, s: &str) -> Result<EdgeId> {
    let (link, seq) = s
        .split_once(':')
        .ok_or_else(|| Error::Format(format!("bad edge label {s:?}")))?;
    let link: i64 = link.trim().parse().map_err(|_| Error::Format(format!("bad link id in {s:?}")))?;
    let seq: usize = seq.trim().parse().map_err(|_| Error::Format(format!("bad edge index in {s:?}")))?;
    net.edge_id(link, seq)
        .ok_or_else(|| Error::Format(format!("edge {s} does not exist in the network")))
}

pub(crate) fn parse_path(net: &RoadNetwork, s: &str) -> Result<Option<Vec<EdgeId>>> {
    let s = s.trim();
    if s.is_empty() {
        return Ok(None);
    }
    s.split(';').map(|p| parse_edge(net, p)).collect::<Result<Vec<_>>>().map(Some)
}

fn write_log_lines(w: &mut impl Write, net: &RoadNetwork, rec: &MatchRecord) -> Result<()> {
    for (i, pm) in rec.probes.iter().enumerate() {
        let Some(edge) = pm.edge else { continue };
        let path = pm.path.as_deref().map(|p| format_path(net, p)).unwrap_or_default();
        writeln!(w, "{}|{}|{}|{}", rec.trajectory_id, i, format_edge(net, edge), path)?;
    }
    Ok(())
}

struct LogLine {
    probe_idx: usize,
    edge: Option<EdgeId>,
    path: Option<Vec<EdgeId>>,
}

fn read_log(net: &RoadNetwork, path: &Path) -> Result<Vec<(String, Vec<LogLine>)>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<LogLine>> = HashMap::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != 4 {
            return Err(Error::Format(format!("history line {}: expected 4 fields", n + 1)));
        }
        let probe_idx = fields[1]
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("history line {}: bad probe index", n + 1)))?;
        let edge = if fields[2].trim().is_empty() {
            None
        } else {
            Some(parse_edge(net, fields[2])?)
        };
        let id = fields[0].trim().to_string();
        if !grouped.contains_key(&id) {
            order.push(id.clone());
        }
        grouped.entry(id).or_default().push(LogLine {
            probe_idx,
            edge,
            path: parse_path(net, fields[3])?,
        });
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let lines = grouped.remove(&id).unwrap_or_default();
            (id, lines)
        })
        .collect())
}
