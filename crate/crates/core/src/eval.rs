//! Accuracy, recall and cost of match results against reference routes.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::MatchRecord;
use crate::network::EdgeId;

/// A reference route with the route position of every probe timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRoute {
    pub trajectory_id: String,
    pub route: Vec<EdgeId>,
    stamps: Vec<(f64, usize)>,
}

impl TruthRoute {
    /// Builds the route from a fully matched record, such as the generator's
    /// truth output.
    pub fn from_record(r: &MatchRecord) -> Result<Self> {
        let mut route: Vec<EdgeId> = Vec::new();
        let mut stamps = Vec::with_capacity(r.probes.len());
        for (i, pm) in r.probes.iter().enumerate() {
            let edge = pm
                .edge
                .ok_or_else(|| Error::Misaligned(format!("{}: truth probe {i} has no edge", r.trajectory_id)))?;
            match &pm.path {
                Some(path) if !route.is_empty() => {
                    let skip = usize::from(route.last() == path.first());
                    route.extend_from_slice(&path[skip..]);
                }
                Some(path) => route.extend_from_slice(path),
                None if route.last() != Some(&edge) => route.push(edge),
                None => {}
            }
            if route.last() != Some(&edge) {
                return Err(Error::Misaligned(format!(
                    "{}: truth probe {i} is not at the end of its segment",
                    r.trajectory_id
                )));
            }
            stamps.push((pm.timestamp, route.len() - 1));
        }
        Ok(Self {
            trajectory_id: r.trajectory_id.clone(),
            route,
            stamps,
        })
    }

    fn position(&self, t: f64) -> Result<usize> {
        self.stamps
            .binary_search_by(|(s, _)| s.total_cmp(&t))
            .map(|i| self.stamps[i].1)
            .map_err(|_| Error::Misaligned(format!("{}: no reference probe at t={t}", self.trajectory_id)))
    }

    pub fn edge_at(&self, t: f64) -> Result<EdgeId> {
        Ok(self.route[self.position(t)?])
    }

    /// Route edges driven between two probe times, both end edges included.
    pub fn segment(&self, t_prev: f64, t_cur: f64) -> Result<&[EdgeId]> {
        let (a, b) = (self.position(t_prev)?, self.position(t_cur)?);
        if b < a {
            return Err(Error::Misaligned(format!("{}: times out of order", self.trajectory_id)));
        }
        Ok(&self.route[a..=b])
    }
}

/// Reference routes keyed by trajectory id.
#[derive(Debug, Clone, Default)]
pub struct TruthSet {
    routes: HashMap<String, TruthRoute>,
}

impl TruthSet {
    pub fn from_records(records: &[MatchRecord]) -> Result<Self> {
        let mut routes = HashMap::new();
        for r in records {
            if routes.insert(r.trajectory_id.clone(), TruthRoute::from_record(r)?).is_some() {
                return Err(Error::DuplicateRecord(r.trajectory_id.clone()));
            }
        }
        Ok(Self { routes })
    }

    pub fn get(&self, id: &str) -> Result<&TruthRoute> {
        self.routes
            .get(id)
            .ok_or_else(|| Error::Misaligned(format!("no reference route for {id}")))
    }
}

fn percent(hits: f64, total: usize) -> f64 {
    if total == 0 { 0.0 } else { 100.0 * hits / total as f64 }
}

/// Share of probes whose matched edge equals the reference edge; unmatched
/// probes count as wrong.
pub fn accuracy_index(records: &[MatchRecord], truth: &TruthSet) -> Result<f64> {
    let (hits, total) = accuracy_counts(records, truth)?;
    Ok(percent(hits as f64, total))
}

fn accuracy_counts(records: &[MatchRecord], truth: &TruthSet) -> Result<(usize, usize)> {
    let (mut hits, mut total) = (0, 0);
    for r in records {
        let t = truth.get(&r.trajectory_id)?;
        for pm in &r.probes {
            let want = t.edge_at(pm.timestamp)?;
            hits += usize::from(pm.edge == Some(want));
            total += 1;
        }
    }
    Ok((hits, total))
}

/// Overlap of one inferred segment path with its reference: the share of
/// inferred edges that the reference contains. An empty inference scores 0.
pub fn segment_overlap(inferred: Option<&[EdgeId]>, reference: &[EdgeId]) -> f64 {
    match inferred {
        Some(p) if !p.is_empty() => {
            let r: HashSet<EdgeId> = reference.iter().copied().collect();
            p.iter().filter(|e| r.contains(e)).count() as f64 / p.len() as f64
        }
        _ => 0.0,
    }
}

/// Mean overlap over all segments between consecutive probes.
pub fn recall_index(records: &[MatchRecord], truth: &TruthSet) -> Result<f64> {
    let (sum, n) = recall_sums(records, truth)?;
    Ok(percent(sum, n))
}

fn recall_sums(records: &[MatchRecord], truth: &TruthSet) -> Result<(f64, usize)> {
    let (mut sum, mut n) = (0.0, 0);
    for r in records {
        let t = truth.get(&r.trajectory_id)?;
        for w in r.probes.windows(2) {
            let reference = t.segment(w[0].timestamp, w[1].timestamp)?;
            sum += segment_overlap(w[1].path.as_deref(), reference);
            n += 1;
        }
    }
    Ok((sum, n))
}

/// Mean wall time per trajectory (s).
pub fn cost_index(wall_times: &[f64]) -> Result<f64> {
    if wall_times.is_empty() {
        return Err(Error::InsufficientData("no trajectories timed".into()));
    }
    Ok(wall_times.iter().sum::<f64>() / wall_times.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    /// Median probing interval (s), rounded to whole seconds.
    pub interval_s: i64,
    pub trajectories: usize,
    pub accuracy: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percent of probes on the correct edge.
    pub accuracy: f64,
    /// Percent mean edge overlap of segment paths.
    pub recall: f64,
    /// Seconds per trajectory, when timings are known.
    pub cost: Option<f64>,
    pub trajectories: usize,
    pub probes: usize,
    pub segments: usize,
    pub per_interval: Vec<IntervalReport>,
    pub config: serde_json::Value,
}

fn median_interval(r: &MatchRecord) -> i64 {
    let mut gaps: Vec<f64> = r.probes.windows(2).map(|w| w[1].timestamp - w[0].timestamp).collect();
    if gaps.is_empty() {
        return 0;
    }
    gaps.sort_by(f64::total_cmp);
    gaps[gaps.len() / 2].round() as i64
}

pub fn evaluate(
    records: &[MatchRecord],
    truth: &TruthSet,
    wall_times: Option<&[f64]>,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let (hits, probes) = accuracy_counts(records, truth)?;
    let (overlap, segments) = recall_sums(records, truth)?;
    let mut groups: BTreeMap<i64, Vec<MatchRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(median_interval(r)).or_default().push(r.clone());
    }
    let per_interval = groups
        .into_iter()
        .map(|(dt, rs)| {
            Ok(IntervalReport {
                interval_s: dt,
                trajectories: rs.len(),
                accuracy: accuracy_index(&rs, truth)?,
                recall: recall_index(&rs, truth)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        accuracy: percent(hits as f64, probes),
        recall: percent(overlap, segments),
        cost: wall_times.map(cost_index).transpose()?,
        trajectories: records.len(),
        probes,
        segments,
        per_interval,
        config,
    })
}
