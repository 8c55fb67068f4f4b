//! The matching pipeline: candidate edges, ellipse subgraph, top-K paths,
//! the three scores, fusion and selection, plus fleet runs that feed the
//! history and traffic-state stores between epochs.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::nearest_edge_record;
use crate::error::{Error, Result};
use crate::geometry::{Point, direction_deg};
use crate::history::{
    CollaborativeGroup, GroupQuery, HistoryStore, MatchRecord, ProbeMatch, TemporalMode, TripSummary, format_edge,
    format_path, parse_edge, parse_path,
};
use crate::network::RoadNetwork;
use crate::scoring::{
    DEFAULT_LAMBDA, FusionWeights, ScoreSet, ScoreVector, SegmentKinematics, a_scores, c_scores, final_score,
    mean_link_share, p_score, select_path,
};
use crate::search::{
    CandidateEdge, CandidatePath, build_subgraph, ellipse_region, find_candidate_edges, k_for_interval,
    k_shortest_paths,
};
use crate::traffic::{Predictor, TrafficConfig, TrafficLog, interval_index};
use crate::trajectory::{Probe, Trajectory};

/// Search radius R (m).
pub const DEFAULT_RADIUS: f64 = 170.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchConfig {
    /// Candidate search radius R (m).
    pub radius: f64,
    pub lambda: f64,
    /// r_s (m).
    pub spatial_radius: f64,
    /// r_t (s).
    pub temporal_radius: f64,
    pub temporal_mode: TemporalMode,
    /// Weight of neighbouring trips relative to the ego history.
    pub w_c: f64,
    pub weights: FusionWeights,
    pub scores: ScoreSet,
    /// Fixed K instead of the interval rule.
    pub k: Option<usize>,
    pub traffic: TrafficConfig,
}

impl Default for MatchConfig {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            lambda: DEFAULT_LAMBDA,
            spatial_radius: 300.0,
            temporal_radius: 5.0,
            temporal_mode: TemporalMode::TimeOfDay,
            w_c: 1.0,
            weights: FusionWeights::calibrated(),
            scores: ScoreSet::ALL,
            k: None,
            traffic: TrafficConfig::default(),
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("radius", self.radius), ("lambda", self.lambda)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.spatial_radius >= 0.0 && self.temporal_radius >= 0.0) {
            return Err(Error::InvalidParameter("group radii must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.w_c) {
            return Err(Error::InvalidParameter(format!("w_c must lie in [0, 1], got {}", self.w_c)));
        }
        if self.k == Some(0) {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        FusionWeights::new(self.weights.wp, self.weights.wc, self.weights.wa)?;
        self.traffic.validate()
    }

    pub fn group_query(&self) -> GroupQuery {
        GroupQuery {
            spatial_radius: self.spatial_radius,
            temporal_radius: self.temporal_radius,
            mode: self.temporal_mode,
            streaming: false,
        }
    }
}

/// Result of matching one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchOutcome {
    pub record: MatchRecord,
    /// Scores of the selected path for every probe that ends a matched segment.
    pub scores: Vec<Option<ScoreVector>>,
    /// Wall time spent (s).
    pub elapsed: f64,
}

/// A map matcher usable by the evaluation harness.
pub trait Matcher: Sync {
    fn name(&self) -> &str;
    fn match_trajectory(&self, tr: &Trajectory) -> Result<MatchOutcome>;
}

/// Baseline: nearest candidate edge per probe joined by shortest paths.
pub struct NearestEdgeMatcher<'a> {
    pub net: &'a RoadNetwork,
    pub radius: f64,
}

impl Matcher for NearestEdgeMatcher<'_> {
    fn name(&self) -> &str {
        "nearest-edge"
    }

    fn match_trajectory(&self, tr: &Trajectory) -> Result<MatchOutcome> {
        let t0 = Instant::now();
        let record = nearest_edge_record(tr, self.net, self.radius);
        Ok(MatchOutcome {
            scores: vec![None; record.probes.len()],
            record,
            elapsed: t0.elapsed().as_secs_f64(),
        })
    }
}

/// Every candidate path of one segment with its scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidates {
    pub paths: Vec<CandidatePath>,
    pub scores: Vec<ScoreVector>,
    pub finals: Vec<f64>,
    /// Weights actually applied, after dropping unavailable scores.
    pub weights: FusionWeights,
}

impl ScoredCandidates {
    pub fn best(&self) -> Option<usize> {
        select_path(&self.paths, &self.finals)
    }
}

/// Per-trajectory state shared by its segments.
struct TripContext {
    group: Option<CollaborativeGroup>,
    predictions: HashMap<i64, Option<Vec<f64>>>,
    k: usize,
}

/// The three-score matcher over immutable history and traffic snapshots.
pub struct FusionMatcher<'a> {
    pub net: &'a RoadNetwork,
    pub cfg: &'a MatchConfig,
    pub history: &'a HistoryStore,
    pub traffic: &'a TrafficLog,
    pub predictor: Option<&'a Predictor>,
}

impl<'a> FusionMatcher<'a> {
    fn context(&self, tr: &Trajectory) -> Result<TripContext> {
        let group = if self.cfg.scores.c && !self.history.is_empty() {
            Some(self.history.group_for(&TripSummary::of(tr, self.net), &self.cfg.group_query())?)
        } else {
            None
        };
        Ok(TripContext {
            group,
            predictions: HashMap::new(),
            k: self.cfg.k.unwrap_or_else(|| k_for_interval(tr.interval())),
        })
    }

    fn prediction<'c>(&self, ctx: &'c mut TripContext, t: f64) -> Result<Option<&'c Vec<f64>>> {
        let Some(pred) = self.predictor.filter(|_| self.cfg.scores.a) else {
            return Ok(None);
        };
        let j = interval_index(t, self.traffic.interval_s());
        if let Entry::Vacant(slot) = ctx.predictions.entry(j) {
            slot.insert(pred.predict(self.traffic, j)?);
        }
        Ok(ctx.predictions[&j].as_ref())
    }

    /// Candidate edges of a probe.
    pub fn candidates(&self, probe: &Probe, pos: Point) -> Vec<CandidateEdge> {
        find_candidate_edges(self.net, pos, probe.bearing, self.cfg.radius)
    }

    fn score_segment(
        &self,
        ctx: &mut TripContext,
        prev: &Probe,
        cur: (&Probe, Point, &[CandidateEdge]),
        prev_pos: Point,
        start: &[CandidateEdge],
    ) -> Result<Option<ScoredCandidates>> {
        let (cur, cur_pos, end) = cur;
        let dt = cur.t - prev.t;
        let ellipse = ellipse_region(prev_pos, cur_pos, prev.speed, cur.speed, dt)?;
        let sub = build_subgraph(self.net, &ellipse, start, end);
        let paths = k_shortest_paths(self.net, &sub, start, end, ctx.k)?;
        if paths.is_empty() {
            return Ok(None);
        }
        let kin = SegmentKinematics {
            v_prev: prev.speed,
            v_cur: cur.speed,
            bearing: cur.bearing,
            dt,
        };
        let p: Vec<f64> = paths
            .iter()
            .map(|path| {
                let e = self.net.edge(path.end.edge);
                p_score(path.length, direction_deg(e.start, e.end), &kin, self.cfg.lambda)
            })
            .collect();
        let c = match &ctx.group {
            Some(g) => {
                let freq = paths
                    .iter()
                    .map(|path| self.history.usage_frequency(g, &path.edges, self.cfg.w_c))
                    .collect::<Result<Vec<_>>>()?;
                c_scores(&freq)
            }
            None => vec![0.0; paths.len()],
        };
        let (a, a_on) = match self.prediction(ctx, cur.t)? {
            Some(x) => {
                let shares = paths
                    .iter()
                    .map(|path| mean_link_share(&path.links, x))
                    .collect::<Result<Vec<_>>>()?;
                (a_scores(&shares), true)
            }
            None => (vec![0.0; paths.len()], false),
        };
        let weights = self.cfg.weights.restrict(ScoreSet {
            a: self.cfg.scores.a && a_on,
            ..self.cfg.scores
        });
        let scores: Vec<ScoreVector> = (0..paths.len())
            .map(|i| ScoreVector { p: p[i], c: c[i], a: a[i] })
            .collect();
        let finals = scores.iter().map(|s| final_score(s, &weights)).collect();
        Ok(Some(ScoredCandidates {
            paths,
            scores,
            finals,
            weights,
        }))
    }

    /// Matches a trajectory, handing every scored segment to `visit` along
    /// with the indices of the probes it joins.
    pub fn match_with<F>(&self, tr: &Trajectory, mut visit: F) -> Result<MatchOutcome>
    where
        F: FnMut(usize, usize, &ScoredCandidates),
    {
        let t0 = Instant::now();
        let mut ctx = self.context(tr)?;
        let pos = tr.positions(self.net);
        let mut probes: Vec<ProbeMatch> = tr.probes.iter().map(|p| ProbeMatch::unmatched(p.t)).collect();
        let mut scores = vec![None; tr.len()];

        // candidates carried by the previous probe
        let mut cursor = self.candidates(&tr.probes[0], pos[0]);
        if tr.len() == 1 {
            if let Some(c) = cursor.first() {
                probes[0].edge = Some(c.edge);
                probes[0].point = Some(c.point);
            }
        }
        for i in 1..tr.len() {
            let (prev, cur) = (&tr.probes[i - 1], &tr.probes[i]);
            let end = self.candidates(cur, pos[i]);
            if cursor.is_empty() || end.is_empty() {
                debug!("{}: restarting candidate search at probe {i}", tr.id);
                cursor = end;
                continue;
            }
            let Some(scored) = self.score_segment(&mut ctx, prev, (cur, pos[i], &end), pos[i - 1], &cursor)? else {
                debug!("{}: no candidate path for segment {i}", tr.id);
                cursor = end;
                continue;
            };
            visit(i - 1, i, &scored);
            let best = scored.best().expect("non-empty candidate set");
            let path = &scored.paths[best];
            if probes[i - 1].edge.is_none() {
                probes[i - 1].edge = Some(path.start.edge);
                probes[i - 1].point = Some(path.start.point);
            }
            probes[i] = ProbeMatch {
                timestamp: cur.t,
                edge: Some(path.end.edge),
                point: Some(path.end.point),
                path: Some(path.edges.clone()),
            };
            scores[i] = Some(scored.scores[best]);
            cursor = vec![path.end];
        }
        Ok(MatchOutcome {
            record: MatchRecord {
                trajectory_id: tr.id.clone(),
                probes,
            },
            scores,
            elapsed: t0.elapsed().as_secs_f64(),
        })
    }
}

impl Matcher for FusionMatcher<'_> {
    fn name(&self) -> &str {
        "fusion"
    }

    fn match_trajectory(&self, tr: &Trajectory) -> Result<MatchOutcome> {
        self.match_with(tr, |_, _, _| {})
    }
}

/// History and traffic-state stores grown by fleet runs.
#[derive(Debug, Clone)]
pub struct FleetState {
    pub history: HistoryStore,
    pub traffic: TrafficLog,
}

impl FleetState {
    pub fn new(net: &RoadNetwork, cfg: &MatchConfig) -> Self {
        Self {
            history: HistoryStore::new(),
            traffic: TrafficLog::new(net.links.len(), cfg.traffic.interval_s),
        }
    }

    /// Adds a finished match to both stores.
    pub fn absorb(&mut self, net: &RoadNetwork, tr: &Trajectory, record: &MatchRecord) -> Result<()> {
        self.history.record_match(net, TripSummary::of(tr, net), record.clone())?;
        self.traffic.ingest(net, record);
        Ok(())
    }
}

/// Matches trajectories in epochs of one Δτ interval, keyed by each
/// trajectory's end time. Trajectories of one epoch run in parallel against
/// the stores as they stood before the epoch; their results are absorbed at
/// the barrier that closes it. Outcomes come back in input order.
pub fn match_fleet(
    net: &RoadNetwork,
    cfg: &MatchConfig,
    trajectories: &[Trajectory],
    state: &mut FleetState,
    predictor: Option<&Predictor>,
) -> Result<Vec<MatchOutcome>> {
    let mut epochs: std::collections::BTreeMap<i64, Vec<usize>> = std::collections::BTreeMap::new();
    for (i, tr) in trajectories.iter().enumerate() {
        epochs
            .entry(interval_index(tr.end_time(), cfg.traffic.interval_s))
            .or_default()
            .push(i);
    }
    let mut out: Vec<Option<MatchOutcome>> = vec![None; trajectories.len()];
    let mut duplicates = 0usize;
    for batch in epochs.values() {
        let results: Vec<Result<MatchOutcome>> = {
            let matcher = FusionMatcher {
                net,
                cfg,
                history: &state.history,
                traffic: &state.traffic,
                predictor,
            };
            batch
                .par_iter()
                .map(|&i| matcher.match_trajectory(&trajectories[i]))
                .collect()
        };
        for (&i, res) in batch.iter().zip(results) {
            let outcome = res?;
            match state.absorb(net, &trajectories[i], &outcome.record) {
                Err(Error::DuplicateRecord(_)) => duplicates += 1,
                Err(e) => warn!("{}: not added to history: {e}", trajectories[i].id),
                Ok(()) => {}
            }
            out[i] = Some(outcome);
        }
    }
    if duplicates > 0 {
        warn!("{duplicates} trajectories were already in the history and were not added again");
    }
    Ok(out.into_iter().map(|o| o.expect("every trajectory belongs to an epoch")).collect())
}

/// Matches independent trajectories in parallel with any matcher.
pub fn match_all<M: Matcher + ?Sized>(matcher: &M, trajectories: &[Trajectory]) -> Result<Vec<MatchOutcome>> {
    trajectories.par_iter().map(|tr| matcher.match_trajectory(tr)).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct MatchRow {
    trajectory_id: String,
    probe_idx: usize,
    timestamp: f64,
    link_id: Option<i64>,
    edge_idx: Option<usize>,
    matched: u8,
    path_edges: String,
}

/// Writes match records as CSV
/// `trajectory_id,probe_idx,timestamp,link_id,edge_idx,matched,path_edges`.
pub fn write_matches<W: Write>(out: W, net: &RoadNetwork, records: &[MatchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        for (i, pm) in r.probes.iter().enumerate() {
            let label = pm.edge.map(|e| net.edge_label(e));
            w.serialize(MatchRow {
                trajectory_id: r.trajectory_id.clone(),
                probe_idx: i,
                timestamp: pm.timestamp,
                link_id: label.map(|l| l.0),
                edge_idx: label.map(|l| l.1),
                matched: u8::from(pm.edge.is_some()),
                path_edges: pm.path.as_deref().map(|p| format_path(net, p)).unwrap_or_default(),
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_matches_csv(path: &Path, net: &RoadNetwork, records: &[MatchRecord]) -> Result<()> {
    write_matches(std::fs::File::create(path)?, net, records)
}

/// Reads a match CSV back; rows of one trajectory must be contiguous and
/// ordered by probe index.
pub fn read_matches_csv(path: &Path, net: &RoadNetwork) -> Result<Vec<MatchRecord>> {
    let rows: Vec<MatchRow> = crate::network::read_records(path, &["trajectory_id", "probe_idx", "link_id", "edge_idx", "matched"])?;
    let mut out: Vec<MatchRecord> = Vec::new();
    for row in rows {
        let edge = match (row.matched, row.link_id, row.edge_idx) {
            (0, _, _) => None,
            (1, Some(l), Some(k)) => Some(parse_edge(net, &format!("{l}:{k}"))?),
            _ => return Err(Error::Format(format!("{}: bad match row {}", row.trajectory_id, row.probe_idx))),
        };
        let pm = ProbeMatch {
            timestamp: row.timestamp,
            edge,
            point: None,
            path: parse_path(net, &row.path_edges)?,
        };
        match out.last_mut() {
            Some(r) if r.trajectory_id == row.trajectory_id => {
                if row.probe_idx != r.probes.len() {
                    return Err(Error::Format(format!("{}: probe rows out of order", row.trajectory_id)));
                }
                r.probes.push(pm);
            }
            _ => {
                if row.probe_idx != 0 || out.iter().any(|r| r.trajectory_id == row.trajectory_id) {
                    return Err(Error::Format(format!("{}: rows are not contiguous", row.trajectory_id)));
                }
                out.push(MatchRecord {
                    trajectory_id: row.trajectory_id,
                    probes: vec![pm],
                });
            }
        }
    }
    Ok(out)
}

/// GeoJSON FeatureCollection with one LineString per trajectory (its edge
/// traversal) and one Point per matched probe location, in WGS84.
pub fn matches_geojson(net: &RoadNetwork, records: &[MatchRecord]) -> serde_json::Value {
    let lonlat = |p: Point| {
        let (lon, lat) = net.unproject(p);
        serde_json::json!([lon, lat])
    };
    let mut features = Vec::new();
    for r in records {
        let edges = r.traversal();
        if !edges.is_empty() {
            let mut coords = vec![lonlat(net.edge(edges[0]).start)];
            coords.extend(edges.iter().map(|&e| lonlat(net.edge(e).end)));
            features.push(serde_json::json!({
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": coords},
                "properties": {"trajectory_id": r.trajectory_id, "kind": "route"},
            }));
        }
        for (i, pm) in r.probes.iter().enumerate() {
            let (Some(e), Some(p)) = (pm.edge, pm.point) else { continue };
            features.push(serde_json::json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": lonlat(p)},
                "properties": {
                    "trajectory_id": r.trajectory_id,
                    "probe_idx": i,
                    "timestamp": pm.timestamp,
                    "edge": format_edge(net, e),
                },
            }));
        }
    }
    serde_json::json!({"type": "FeatureCollection", "features": features})
}

/// Debug dump of a search: kept subgraph edges and candidate paths.
pub fn search_geojson(net: &RoadNetwork, sub: &crate::search::SubGraph, paths: &[CandidatePath]) -> serde_json::Value {
    let lonlat = |p: Point| {
        let (lon, lat) = net.unproject(p);
        serde_json::json!([lon, lat])
    };
    let mut features: Vec<serde_json::Value> = sub
        .edges()
        .map(|e| {
            let edge = net.edge(e);
            serde_json::json!({
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": [lonlat(edge.start), lonlat(edge.end)]},
                "properties": {"kind": "subgraph", "edge": format_edge(net, e)},
            })
        })
        .collect();
    for (rank, p) in paths.iter().enumerate() {
        let coords: Vec<_> = p.polyline(net).into_iter().map(lonlat).collect();
        features.push(serde_json::json!({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": coords},
            "properties": {"kind": "path", "rank": rank, "length": p.length},
        }));
    }
    serde_json::json!({"type": "FeatureCollection", "features": features})
}
