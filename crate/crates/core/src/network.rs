//! Directed road network: nodes, links, fixed-length edges, a grid spatial
//! index over edges, and the link adjacency/Laplacian spectrum.

use std::collections::HashMap;
use std::ops::Range;
use std::path::Path;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{direction_deg, normalize_deg, project_to_segment, LocalProjection, Point};

/// Split pieces shorter than this are folded into the previous edge.
pub const MIN_EDGE_LENGTH: f64 = 1e-3;

/// Default edge length δ (m).
pub const DEFAULT_SPLIT_LENGTH: f64 = 50.0;

const DEFAULT_CELL_SIZE: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeId(pub usize);

/// One row of the nodes file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node_id: i64,
    pub lon: f64,
    pub lat: f64,
}

/// One row of the links file. Missing length/bearing are derived from geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub link_id: i64,
    pub from_node: i64,
    pub to_node: i64,
    #[serde(default)]
    pub length_m: Option<f64>,
    #[serde(default)]
    pub bearing_deg: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: i64,
    pub lon: f64,
    pub lat: f64,
    pub pos: Point,
}

#[derive(Debug, Clone)]
pub struct Link {
    pub id: i64,
    /// Upstream node index.
    pub from: usize,
    /// Downstream node index.
    pub to: usize,
    pub length: f64,
    pub bearing: f64,
    /// Global ids of this link's edges, in travel order.
    pub edges: Range<usize>,
}

impl Link {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeId> {
        self.edges.clone().map(EdgeId)
    }
}

/// Boundary point of an edge: an intersection or an interior split point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SideNode {
    Junction(usize),
    /// Split point after the `k`-th edge (1-based) of link `link`.
    Split { link: usize, k: usize },
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub link: usize,
    /// 1-based position within the link.
    pub seq: usize,
    pub length: f64,
    /// Distance from the link's upstream node to this edge's start.
    pub link_offset: f64,
    pub start: Point,
    pub end: Point,
    pub tail: SideNode,
    pub head: SideNode,
}

/// Where a point lands on an edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub point: Point,
    pub offset: f64,
    pub distance: f64,
}

/// Laplacian eigenpairs, eigenvalues ascending and rescaled into `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub eigenvectors: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    /// Largest raw eigenvalue used for the rescaling (0 for an edgeless graph).
    pub raw_max: f64,
}

impl Spectrum {
    pub fn from_laplacian(laplacian: &DMatrix<f64>) -> Result<Spectrum> {
        if laplacian.nrows() != laplacian.ncols() {
            return Err(Error::Decomposition("matrix is not square".into()));
        }
        if laplacian.iter().any(|v| !v.is_finite()) {
            return Err(Error::Decomposition("matrix has non-finite entries".into()));
        }
        let n = laplacian.nrows();
        let eig = SymmetricEigen::new(laplacian.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut vectors = DMatrix::zeros(n, n);
        let mut values = DVector::zeros(n);
        for (dst, &src) in order.iter().enumerate() {
            vectors.set_column(dst, &eig.eigenvectors.column(src));
            // round-off can push the null eigenvalue slightly negative
            values[dst] = eig.eigenvalues[src].max(0.0);
        }
        let raw_max = values.iter().copied().fold(0.0, f64::max);
        if raw_max > 0.0 {
            values /= raw_max;
        }
        Ok(Spectrum {
            eigenvectors: vectors,
            eigenvalues: values,
            raw_max,
        })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `U diag(λ) Uᵀ`, the rescaled Laplacian.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let u = &self.eigenvectors;
        u * DMatrix::from_diagonal(&self.eigenvalues) * u.transpose()
    }
}

/// Uniform grid over edge bounding boxes.
#[derive(Debug, Clone)]
pub struct EdgeGrid {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<EdgeId>>,
}

impl EdgeGrid {
    pub fn build<'a>(cell: f64, edges: impl IntoIterator<Item = (EdgeId, &'a Edge)>) -> Self {
        let mut grid = EdgeGrid {
            cell,
            cells: HashMap::new(),
        };
        for (id, e) in edges {
            grid.insert(id, e);
        }
        for v in grid.cells.values_mut() {
            v.sort_unstable();
        }
        grid
    }

    fn key(&self, v: f64) -> i64 {
        (v / self.cell).floor() as i64
    }

    fn insert(&mut self, id: EdgeId, e: &Edge) {
        let (x0, x1) = (e.start.x.min(e.end.x), e.start.x.max(e.end.x));
        let (y0, y1) = (e.start.y.min(e.end.y), e.start.y.max(e.end.y));
        for cx in self.key(x0)..=self.key(x1) {
            for cy in self.key(y0)..=self.key(y1) {
                self.cells.entry((cx, cy)).or_default().push(id);
            }
        }
    }

    /// Edges whose bounding box touches the given rectangle.
    pub fn query_rect(&self, min: Point, max: Point) -> Vec<EdgeId> {
        let mut out = Vec::new();
        for cx in self.key(min.x)..=self.key(max.x) {
            for cy in self.key(min.y)..=self.key(max.y) {
                if let Some(ids) = self.cells.get(&(cx, cy)) {
                    out.extend_from_slice(ids);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Superset of the edges within `radius` of `center`.
    pub fn query_radius(&self, center: Point, radius: f64) -> Vec<EdgeId> {
        self.query_rect(
            Point::new(center.x - radius, center.y - radius),
            Point::new(center.x + radius, center.y + radius),
        )
    }
}

#[derive(Debug)]
pub struct RoadNetwork {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub edges: Vec<Edge>,
    pub split_length: f64,
    projection: LocalProjection,
    node_index: HashMap<i64, usize>,
    link_index: HashMap<i64, usize>,
    out_links: Vec<Vec<usize>>,
    in_links: Vec<Vec<usize>>,
    grid: EdgeGrid,
    spectrum: OnceLock<std::result::Result<Spectrum, String>>,
}

/// Edge lengths for a link of length `length` split every `split`.
pub fn split_lengths(length: f64, split: f64) -> Vec<f64> {
    let m = ((length / split).ceil() as usize).max(1);
    let mut out = vec![split; m - 1];
    let last = length - (m - 1) as f64 * split;
    if last < MIN_EDGE_LENGTH && !out.is_empty() {
        let prev = out.pop().unwrap_or(0.0);
        out.push(prev + last);
    } else {
        out.push(last);
    }
    out
}

impl RoadNetwork {
    pub fn load(nodes: &[NodeRecord], links: &[LinkRecord], split_length: f64) -> Result<RoadNetwork> {
        if !(split_length > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "split length must be positive, got {split_length}"
            )));
        }
        if nodes.is_empty() {
            return Err(Error::Format("network has no nodes".into()));
        }
        let n = nodes.len() as f64;
        let lon0 = nodes.iter().map(|r| r.lon).sum::<f64>() / n;
        let lat0 = nodes.iter().map(|r| r.lat).sum::<f64>() / n;
        let projection = LocalProjection::new(lon0, lat0);

        let mut node_index = HashMap::with_capacity(nodes.len());
        let mut node_list = Vec::with_capacity(nodes.len());
        for r in nodes {
            if !(r.lon.is_finite() && r.lat.is_finite())
                || r.lon.abs() > 180.0
                || r.lat.abs() > 90.0
            {
                return Err(Error::Format(format!("node {} has invalid coordinates", r.node_id)));
            }
            if node_index.insert(r.node_id, node_list.len()).is_some() {
                return Err(Error::DuplicateNode(r.node_id));
            }
            node_list.push(Node {
                id: r.node_id,
                lon: r.lon,
                lat: r.lat,
                pos: projection.project(r.lon, r.lat),
            });
        }

        let mut link_index = HashMap::with_capacity(links.len());
        let mut link_list = Vec::with_capacity(links.len());
        let mut edges = Vec::new();
        let mut out_links = vec![Vec::new(); node_list.len()];
        let mut in_links = vec![Vec::new(); node_list.len()];
        for r in links {
            let lookup = |node: i64| {
                node_index
                    .get(&node)
                    .copied()
                    .ok_or(Error::DanglingNode { link: r.link_id, node })
            };
            let from = lookup(r.from_node)?;
            let to = lookup(r.to_node)?;
            if from == to {
                return Err(Error::SelfLoop(r.link_id));
            }
            let (a, b) = (node_list[from].pos, node_list[to].pos);
            let length = r.length_m.unwrap_or_else(|| a.dist(&b));
            if !(length > 0.0) || !length.is_finite() {
                return Err(Error::NonPositiveLength(r.link_id));
            }
            let bearing = r.bearing_deg.map(normalize_deg).unwrap_or_else(|| direction_deg(a, b));
            let ix = link_list.len();
            if link_index.insert(r.link_id, ix).is_some() {
                return Err(Error::DuplicateLink(r.link_id));
            }

            let pieces = split_lengths(length, split_length);
            let m = pieces.len();
            let first = edges.len();
            let mut offset = 0.0;
            for (k, &piece) in pieces.iter().enumerate() {
                let seq = k + 1;
                let start = a.lerp(&b, offset / length);
                let end_offset = if seq == m { length } else { offset + piece };
                let end = a.lerp(&b, end_offset / length);
                let tail = if seq == 1 {
                    SideNode::Junction(from)
                } else {
                    SideNode::Split { link: ix, k: seq - 1 }
                };
                let head = if seq == m {
                    SideNode::Junction(to)
                } else {
                    SideNode::Split { link: ix, k: seq }
                };
                edges.push(Edge {
                    link: ix,
                    seq,
                    length: piece,
                    link_offset: offset,
                    start,
                    end,
                    tail,
                    head,
                });
                offset = end_offset;
            }
            out_links[from].push(ix);
            in_links[to].push(ix);
            link_list.push(Link {
                id: r.link_id,
                from,
                to,
                length,
                bearing,
                edges: first..edges.len(),
            });
        }

        let cell = (2.0 * split_length).max(DEFAULT_CELL_SIZE);
        let grid = EdgeGrid::build(cell, edges.iter().enumerate().map(|(i, e)| (EdgeId(i), e)));
        Ok(RoadNetwork {
            nodes: node_list,
            links: link_list,
            edges,
            split_length,
            projection,
            node_index,
            link_index,
            out_links,
            in_links,
            grid,
            spectrum: OnceLock::new(),
        })
    }

    pub fn from_csv(nodes: &Path, links: &Path, split_length: f64) -> Result<RoadNetwork> {
        let nodes = read_nodes_csv(nodes)?;
        let links = read_links_csv(links)?;
        Self::load(&nodes, &links, split_length)
    }

    pub fn projection(&self) -> &LocalProjection {
        &self.projection
    }

    pub fn project(&self, lon: f64, lat: f64) -> Point {
        self.projection.project(lon, lat)
    }

    pub fn unproject(&self, p: Point) -> (f64, f64) {
        self.projection.unproject(p)
    }

    pub fn node_ix(&self, id: i64) -> Option<usize> {
        self.node_index.get(&id).copied()
    }

    pub fn link_ix(&self, id: i64) -> Option<usize> {
        self.link_index.get(&id).copied()
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.0]
    }

    pub fn link_of(&self, id: EdgeId) -> &Link {
        &self.links[self.edges[id.0].link]
    }

    /// Global id of the `seq`-th (1-based) edge of link `link_id`.
    pub fn edge_id(&self, link_id: i64, seq: usize) -> Option<EdgeId> {
        let link = &self.links[self.link_ix(link_id)?];
        (seq >= 1 && seq <= link.edge_count()).then(|| EdgeId(link.edges.start + seq - 1))
    }

    /// External `(link id, 1-based edge index)` label.
    pub fn edge_label(&self, id: EdgeId) -> (i64, usize) {
        let e = &self.edges[id.0];
        (self.links[e.link].id, e.seq)
    }

    pub fn out_links(&self, node: usize) -> &[usize] {
        &self.out_links[node]
    }

    pub fn in_links(&self, node: usize) -> &[usize] {
        &self.in_links[node]
    }

    pub fn side_node_pos(&self, side: SideNode) -> Point {
        match side {
            SideNode::Junction(n) => self.nodes[n].pos,
            SideNode::Split { link, k } => self.edges[self.links[link].edges.start + k - 1].end,
        }
    }

    pub fn grid(&self) -> &EdgeGrid {
        &self.grid
    }

    pub fn edges_near(&self, center: Point, radius: f64) -> Vec<EdgeId> {
        self.grid.query_radius(center, radius)
    }

    /// Projects a planar point onto an edge. The offset is measured in the
    /// edge's nominal length, which may differ from its chord when the link
    /// length was overridden in the input.
    pub fn project_to_edge(&self, p: Point, id: EdgeId) -> Projection {
        let e = &self.edges[id.0];
        let s = project_to_segment(p, e.start, e.end);
        let chord = e.start.dist(&e.end);
        let offset = if chord > 0.0 { s.offset / chord * e.length } else { 0.0 };
        Projection {
            point: s.point,
            offset: offset.clamp(0.0, e.length),
            distance: s.distance,
        }
    }

    /// Projects onto the whole link, returning the containing edge.
    pub fn project_to_link(&self, p: Point, link_ix: usize) -> (EdgeId, Projection) {
        let link = &self.links[link_ix];
        let (a, b) = (self.nodes[link.from].pos, self.nodes[link.to].pos);
        let s = project_to_segment(p, a, b);
        let chord = a.dist(&b);
        let along = if chord > 0.0 { s.offset / chord * link.length } else { 0.0 };
        let along = along.clamp(0.0, link.length);
        let mut id = link.edges.end - 1;
        for i in link.edges.clone() {
            let e = &self.edges[i];
            if along < e.link_offset + e.length {
                id = i;
                break;
            }
        }
        let e = &self.edges[id];
        let proj = Projection {
            point: s.point,
            offset: (along - e.link_offset).clamp(0.0, e.length),
            distance: s.distance,
        };
        (EdgeId(id), proj)
    }

    /// Symmetric 0/1 matrix: links sharing an intersection node.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let n = self.links.len();
        let mut a = DMatrix::zeros(n, n);
        for node in 0..self.nodes.len() {
            let touching: Vec<usize> = self.out_links[node]
                .iter()
                .chain(self.in_links[node].iter())
                .copied()
                .collect();
            for &l in &touching {
                for &m in &touching {
                    if l != m {
                        a[(l, m)] = 1.0;
                    }
                }
            }
        }
        a
    }

    /// `diag(row sums of A) - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        laplacian_of(&self.adjacency())
    }

    /// Laplacian eigendecomposition, computed once on first use.
    pub fn spectrum(&self) -> Result<&Spectrum> {
        self.spectrum
            .get_or_init(|| Spectrum::from_laplacian(&self.laplacian()).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Decomposition(e.clone()))
    }
}

pub fn laplacian_of(adjacency: &DMatrix<f64>) -> DMatrix<f64> {
    let degrees: Vec<f64> = adjacency.row_iter().map(|r| r.sum()).collect();
    let mut l = -adjacency.clone();
    for (i, d) in degrees.into_iter().enumerate() {
        l[(i, i)] += d;
    }
    l
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::Csv(e),
            _ => Error::Format(format!("{}: {e}", path.display())),
        })
}

/// Reads every row of a headed CSV, failing if any `required` column is absent.
pub(crate) fn read_records<T: for<'de> Deserialize<'de>>(path: &Path, required: &[&str]) -> Result<Vec<T>> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        .clone();
    if let Some(missing) = required.iter().find(|c| !headers.iter().any(|h| h == **c)) {
        return Err(Error::Format(format!("{}: missing column {missing:?}", path.display())));
    }
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Format(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn read_nodes_csv(path: &Path) -> Result<Vec<NodeRecord>> {
    read_records(path, &["node_id", "lon", "lat"])
}

pub fn read_links_csv(path: &Path) -> Result<Vec<LinkRecord>> {
    read_records(path, &["link_id", "from_node", "to_node"])
}

pub fn write_nodes_csv(path: &Path, nodes: &[NodeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for n in nodes {
        w.serialize(n)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_links_csv(path: &Path, links: &[LinkRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for l in links {
        w.serialize(l)?;
    }
    w.flush()?;
    Ok(())
}
