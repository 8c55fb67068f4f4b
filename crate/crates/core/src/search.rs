//! Candidate edges, the ellipse reachability region, subgraph trimming, and
//! top-K loopless candidate paths between consecutive probes.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{bearing_inclination, Point};
use crate::network::{EdgeId, RoadNetwork, SideNode};

/// Slack (m) applied to the ellipse inequality to absorb round-off.
const ELLIPSE_SLACK: f64 = 1e-6;

/// Relative slack used when collecting length ties at the K-th position.
const TIE_EPS: f64 = 1e-9;

pub const MIN_K: usize = 6;
pub const MAX_K: usize = 200;

/// Number of candidate paths for a probing interval: `max{0.3 dt - 18, 6}`,
/// rounded up and clamped to `[6, 200]`.
pub fn k_for_interval(dt: f64) -> usize {
    let k = (0.3 * dt - 18.0 - 1e-9).ceil().max(MIN_K as f64);
    (k as usize).clamp(MIN_K, MAX_K)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CandidateEdge {
    pub edge: EdgeId,
    pub point: Point,
    /// Offset of the projection from the edge start (m).
    pub offset: f64,
    pub distance: f64,
}

impl CandidateEdge {
    /// Position of the projection along the whole link.
    pub fn link_position(&self, net: &RoadNetwork) -> f64 {
        net.edge(self.edge).link_offset + self.offset
    }
}

/// Edges a probe may project onto: one per nearby link, passing the
/// distance, bearing (< 90°) and side-node vicinity filters. Sorted by
/// perpendicular distance, then edge id.
pub fn find_candidate_edges(net: &RoadNetwork, pos: Point, bearing: f64, radius: f64) -> Vec<CandidateEdge> {
    let links: BTreeSet<usize> = net
        .edges_near(pos, radius)
        .into_iter()
        .map(|e| net.edge(e).link)
        .collect();
    let mut out = Vec::new();
    for l in links {
        let link = &net.links[l];
        if bearing_inclination(bearing, link.bearing) >= 90.0 {
            continue;
        }
        let (edge, proj) = net.project_to_link(pos, l);
        if proj.distance > radius {
            continue;
        }
        let e = net.edge(edge);
        let near = |s: SideNode| net.side_node_pos(s).dist(&pos) <= radius;
        if !(near(e.tail) || near(e.head)) {
            continue;
        }
        out.push(CandidateEdge {
            edge,
            point: proj.point,
            offset: proj.offset,
            distance: proj.distance,
        });
    }
    out.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.edge.cmp(&b.edge)));
    out
}

/// Points whose summed distance to the two foci is at most `long_axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Ellipse {
    pub focus_a: Point,
    pub focus_b: Point,
    pub long_axis: f64,
}

impl Ellipse {
    pub fn contains(&self, p: Point) -> bool {
        p.dist(&self.focus_a) + p.dist(&self.focus_b) <= self.long_axis + ELLIPSE_SLACK
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let cx = 0.5 * (self.focus_a.x + self.focus_b.x);
        let cy = 0.5 * (self.focus_a.y + self.focus_b.y);
        let r = 0.5 * self.long_axis + ELLIPSE_SLACK;
        (Point::new(cx - r, cy - r), Point::new(cx + r, cy + r))
    }
}

/// Reachability region between consecutive probes: long axis
/// `max{max(v_prev, v_cur) * dt, 2 |p_cur - p_prev|}`.
pub fn ellipse_region(p_prev: Point, p_cur: Point, v_prev: f64, v_cur: f64, dt: f64) -> Result<Ellipse> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("probing interval must be positive, got {dt}")));
    }
    let long_axis = (v_prev.max(v_cur) * dt).max(2.0 * p_prev.dist(&p_cur));
    Ok(Ellipse {
        focus_a: p_prev,
        focus_b: p_cur,
        long_axis,
    })
}

/// Edges that candidate paths may traverse in full.
#[derive(Debug, Clone, PartialEq)]
pub struct SubGraph {
    included: Vec<bool>,
}

impl SubGraph {
    pub fn full(net: &RoadNetwork) -> Self {
        Self {
            included: vec![true; net.edges.len()],
        }
    }

    pub fn empty(net: &RoadNetwork) -> Self {
        Self {
            included: vec![false; net.edges.len()],
        }
    }

    pub fn contains(&self, e: EdgeId) -> bool {
        self.included.get(e.0).copied().unwrap_or(false)
    }

    pub fn insert(&mut self, e: EdgeId) {
        self.included[e.0] = true;
    }

    pub fn edges(&self) -> impl Iterator<Item = EdgeId> + '_ {
        self.included.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| EdgeId(i))
    }

    pub fn len(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn contains_range(&self, range: std::ops::Range<usize>) -> bool {
        range.into_iter().all(|i| self.included[i])
    }
}

/// Keeps an edge when both side nodes lie in the ellipse, or when one side
/// node belongs to a candidate edge and lies in the ellipse.
pub fn build_subgraph(
    net: &RoadNetwork,
    ellipse: &Ellipse,
    start: &[CandidateEdge],
    end: &[CandidateEdge],
) -> SubGraph {
    let candidate_nodes: HashSet<SideNode> = start
        .iter()
        .chain(end)
        .flat_map(|c| {
            let e = net.edge(c.edge);
            [e.tail, e.head]
        })
        .collect();
    let (lo, hi) = ellipse.bounding_box();
    let mut sub = SubGraph::empty(net);
    for id in net.grid().query_rect(lo, hi) {
        let e = net.edge(id);
        let tail_in = ellipse.contains(e.start);
        let head_in = ellipse.contains(e.end);
        let keep = (tail_in && head_in)
            || (tail_in && candidate_nodes.contains(&e.tail))
            || (head_in && candidate_nodes.contains(&e.head));
        if keep {
            sub.insert(id);
        }
    }
    sub
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidatePath {
    pub start: CandidateEdge,
    pub end: CandidateEdge,
    /// Every edge touched, start-edge first and end-edge last.
    pub edges: Vec<EdgeId>,
    /// Link indices in travel order, start and end links included.
    pub links: Vec<usize>,
    /// Traveled length `L^P` (m).
    pub length: f64,
}

impl CandidatePath {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn end_link(&self) -> usize {
        *self.links.last().expect("path has an end link")
    }

    /// Ranking used for ordering and tie-breaks: length, link count, edge ids.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        self.length
            .total_cmp(&other.length)
            .then(self.link_count().cmp(&other.link_count()))
            .then_with(|| self.edges.cmp(&other.edges))
    }

    /// Polyline from the start projection to the end projection.
    pub fn polyline(&self, net: &RoadNetwork) -> Vec<Point> {
        let mut pts = vec![self.start.point];
        let n = self.edges.len();
        for (i, &e) in self.edges.iter().enumerate() {
            if i + 1 < n {
                pts.push(net.edge(e).end);
            }
        }
        pts.push(self.end.point);
        pts.dedup();
        pts
    }

    /// Direct path along a single link, when the end lies ahead of the start.
    fn direct(net: &RoadNetwork, start: &CandidateEdge, end: &CandidateEdge) -> Option<CandidatePath> {
        let (es, ee) = (net.edge(start.edge), net.edge(end.edge));
        if es.link != ee.link {
            return None;
        }
        let ahead = ee.seq > es.seq || (ee.seq == es.seq && end.offset >= start.offset);
        if !ahead {
            return None;
        }
        Some(CandidatePath {
            start: *start,
            end: *end,
            edges: (start.edge.0..=end.edge.0).map(EdgeId).collect(),
            links: vec![es.link],
            length: end.link_position(net) - start.link_position(net),
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum ArcKind {
    Link(usize),
    Source(usize),
    Sink(usize),
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    from: usize,
    to: usize,
    weight: f64,
    kind: ArcKind,
}

/// Intersection graph with a virtual source/sink. Interior split points have
/// a single in- and out-edge, so whole links are the only branching units.
struct SearchGraph {
    arcs: Vec<Arc>,
    out: Vec<Vec<usize>>,
    source: usize,
    sink: usize,
}

impl SearchGraph {
    fn build(net: &RoadNetwork, sub: &SubGraph, start: &[CandidateEdge], end: &[CandidateEdge]) -> Self {
        let n = net.nodes.len();
        let (source, sink) = (n, n + 1);
        let mut g = SearchGraph {
            arcs: Vec::new(),
            out: vec![Vec::new(); n + 2],
            source,
            sink,
        };
        for (ix, link) in net.links.iter().enumerate() {
            if sub.contains_range(link.edges.clone()) {
                g.push(link.from, link.to, link.length, ArcKind::Link(ix));
            }
        }
        for (ci, c) in start.iter().enumerate() {
            let link = net.link_of(c.edge);
            if sub.contains_range(c.edge.0 + 1..link.edges.end) {
                let w = link.length - c.link_position(net);
                g.push(source, link.to, w, ArcKind::Source(ci));
            }
        }
        for (ci, c) in end.iter().enumerate() {
            let link = net.link_of(c.edge);
            if sub.contains_range(link.edges.start..c.edge.0) {
                g.push(link.from, sink, c.link_position(net), ArcKind::Sink(ci));
            }
        }
        g
    }

    fn push(&mut self, from: usize, to: usize, weight: f64, kind: ArcKind) {
        self.out[from].push(self.arcs.len());
        self.arcs.push(Arc { from, to, weight, kind });
    }

    /// Shortest arc sequence from `from` to the sink avoiding banned arcs/nodes.
    fn dijkstra(&self, from: usize, banned_arcs: &HashSet<usize>, banned_nodes: &[bool]) -> Option<Vec<usize>> {
        let n = self.out.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred: Vec<Option<usize>> = vec![None; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[from] = 0.0;
        heap.push(Reverse((Dist(0.0), from)));
        while let Some(Reverse((Dist(d), u))) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            if u == self.sink {
                break;
            }
            for &a in &self.out[u] {
                if banned_arcs.contains(&a) {
                    continue;
                }
                let arc = self.arcs[a];
                if banned_nodes[arc.to] || done[arc.to] {
                    continue;
                }
                let nd = d + arc.weight;
                if nd < dist[arc.to] {
                    dist[arc.to] = nd;
                    pred[arc.to] = Some(a);
                    heap.push(Reverse((Dist(nd), arc.to)));
                }
            }
        }
        if !done[self.sink] {
            return None;
        }
        let mut arcs = Vec::new();
        let mut v = self.sink;
        while v != from {
            let a = pred[v]?;
            arcs.push(a);
            v = self.arcs[a].from;
        }
        arcs.reverse();
        Some(arcs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// A source-to-sink arc sequence with its materialized candidate path.
#[derive(Debug, Clone)]
struct Route {
    arcs: Vec<usize>,
    nodes: Vec<usize>,
    path: CandidatePath,
    valid: bool,
}

impl PartialEq for Route {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Route {}

impl PartialOrd for Route {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Route {
    fn cmp(&self, other: &Self) -> Ordering {
        self.path.rank_cmp(&other.path).then_with(|| self.arcs.cmp(&other.arcs))
    }
}

struct Search<'a> {
    net: &'a RoadNetwork,
    graph: SearchGraph,
    start: &'a [CandidateEdge],
    end: &'a [CandidateEdge],
}

impl<'a> Search<'a> {
    fn route(&self, arcs: Vec<usize>) -> Route {
        let mut nodes = vec![self.graph.source];
        nodes.extend(arcs.iter().map(|&a| self.graph.arcs[a].to));
        let (mut start, mut end) = (None, None);
        let mut mid_links = Vec::new();
        for &a in &arcs {
            match self.graph.arcs[a].kind {
                ArcKind::Source(c) => start = Some(self.start[c]),
                ArcKind::Sink(c) => end = Some(self.end[c]),
                ArcKind::Link(l) => mid_links.push(l),
            }
        }
        let (start, end) = (start.expect("route leaves the source"), end.expect("route reaches the sink"));
        let net = self.net;
        let (ls, le) = (net.link_of(start.edge), net.link_of(end.edge));
        let mut edges: Vec<EdgeId> = (start.edge.0..ls.edges.end).map(EdgeId).collect();
        let mut links = vec![net.edge(start.edge).link];
        for &l in &mid_links {
            edges.extend(net.links[l].edge_ids());
            links.push(l);
        }
        edges.extend((le.edges.start..=end.edge.0).map(EdgeId));
        links.push(net.edge(end.edge).link);
        let mut length = ls.length - start.link_position(net);
        for &l in &mid_links {
            length += net.links[l].length;
        }
        length += end.link_position(net);
        // Going around back onto the start link is loopless only when the
        // end edge does not lie ahead of the start edge.
        let valid = !(net.edge(start.edge).link == net.edge(end.edge).link
            && net.edge(end.edge).seq > net.edge(start.edge).seq);
        Route {
            arcs,
            nodes,
            path: CandidatePath {
                start,
                end,
                edges,
                links,
                length,
            },
            valid,
        }
    }

    /// `known` holds the lengths of paths found outside the graph; they count
    /// towards the K paths that end the search.
    fn yen(&self, k: usize, mut known: Vec<f64>) -> Vec<CandidatePath> {
        let no_arcs = HashSet::new();
        let mut banned_nodes = vec![false; self.graph.out.len()];
        let Some(first) = self.graph.dijkstra(self.graph.source, &no_arcs, &banned_nodes) else {
            return Vec::new();
        };
        let mut accepted: Vec<Route> = Vec::new();
        let mut heap: BinaryHeap<Reverse<Route>> = BinaryHeap::new();
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        seen.insert(first.clone());
        heap.push(Reverse(self.route(first)));
        known.sort_by(f64::total_cmp);
        let mut valid_lengths = known;

        while let Some(Reverse(next)) = heap.pop() {
            if valid_lengths.len() >= k {
                let kth = valid_lengths[k - 1];
                if next.path.length > kth + TIE_EPS * kth.abs().max(1.0) {
                    break;
                }
            }
            if next.valid {
                let pos = valid_lengths.partition_point(|&l| l <= next.path.length);
                valid_lengths.insert(pos, next.path.length);
            }
            // spur from every node of the newly accepted route except the sink
            for i in 0..next.arcs.len() {
                let spur = next.nodes[i];
                let root = &next.arcs[..i];
                let mut banned_arcs = HashSet::new();
                for r in accepted.iter().chain(std::iter::once(&next)) {
                    if r.arcs.len() > i && r.arcs[..i] == *root {
                        banned_arcs.insert(r.arcs[i]);
                    }
                }
                banned_nodes.iter_mut().for_each(|b| *b = false);
                for &v in &next.nodes[..i] {
                    banned_nodes[v] = true;
                }
                if let Some(tail) = self.graph.dijkstra(spur, &banned_arcs, &banned_nodes) {
                    let mut arcs = root.to_vec();
                    arcs.extend(tail);
                    if seen.insert(arcs.clone()) {
                        heap.push(Reverse(self.route(arcs)));
                    }
                }
            }
            accepted.push(next);
        }
        accepted.into_iter().filter(|r| r.valid).map(|r| r.path).collect()
    }
}

/// Up to `k` loopless paths from any start projection to any end projection,
/// ascending by (length, link count, edge ids).
pub fn k_shortest_paths(
    net: &RoadNetwork,
    sub: &SubGraph,
    start: &[CandidateEdge],
    end: &[CandidateEdge],
    k: usize,
) -> Result<Vec<CandidatePath>> {
    if k == 0 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    if start.is_empty() || end.is_empty() {
        return Ok(Vec::new());
    }
    let graph = SearchGraph::build(net, sub, start, end);
    let search = Search {
        net,
        graph,
        start,
        end,
    };
    let mut direct = Vec::new();
    for s in start {
        for e in end {
            let (es, ee) = (s.edge.0, e.edge.0);
            let (lo, hi) = (es.min(ee), es.max(ee));
            if !sub.contains_range(lo + 1..hi) {
                continue;
            }
            if let Some(p) = CandidatePath::direct(net, s, e) {
                direct.push(p);
            }
        }
    }
    let mut paths = search.yen(k, direct.iter().map(|p| p.length).collect());
    paths.extend(direct);
    paths.sort_by(|a, b| a.rank_cmp(b));
    paths.dedup_by(|a, b| a.edges == b.edges);
    paths.truncate(k);
    Ok(paths)
}

/// Single shortest path over the whole network.
pub fn shortest_path(
    net: &RoadNetwork,
    start: &[CandidateEdge],
    end: &[CandidateEdge],
) -> Option<CandidatePath> {
    k_shortest_paths(net, &SubGraph::full(net), start, end, 1)
        .ok()
        .and_then(|mut v| (!v.is_empty()).then(|| v.swap_remove(0)))
}
