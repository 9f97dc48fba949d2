//! The unity graph: one graph over every kept clip of every video in a task.
//!
//! Temporal edges chain consecutive kept clips within a video. Spatial edges
//! connect each clip to its most cosine-similar clip in every other video,
//! with the two directed picks of a pair merged into one undirected edge.
//! Building the graph costs O(n^2 z^2 d) similarity work for n videos of z
//! clips each; the builder counts evaluations so the scaling is checkable.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::VideoFeatures;

/// Identifies a clip node as (video index within the task, original clip
/// index within the video).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub video_index: u32,
    pub clip_index: u32,
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.video_index, self.clip_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EdgeKind {
    Spatial,
    Temporal,
}

impl EdgeKind {
    pub fn code(self) -> char {
        match self {
            EdgeKind::Spatial => 'S',
            EdgeKind::Temporal => 'T',
        }
    }

    pub fn from_code(c: &str) -> Result<Self> {
        match c {
            "S" => Ok(EdgeKind::Spatial),
            "T" => Ok(EdgeKind::Temporal),
            other => Err(Error::Format(format!("edge kind {other:?}, expected S or T"))),
        }
    }
}

/// Undirected edge stored with `a < b` in (video, clip) order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    pub kind: EdgeKind,
    pub weight: f64,
}

/// One graph node: its id, the clip embedding it was built from and the
/// clip's normalized time. Embeddings may be empty when a graph is read
/// back from disk; walks only need topology.
#[derive(Debug, Clone)]
pub struct GraphNode {
    pub id: NodeId,
    pub embedding: Vec<f32>,
    pub time: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Neighbor {
    pub node: usize,
    pub weight: f64,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone)]
pub struct UnityGraph {
    /// Sorted by (video_index, clip_index); position is the node ordinal.
    pub nodes: Vec<GraphNode>,
    /// Canonical order: (a, b, kind) ascending.
    pub edges: Vec<Edge>,
    /// Per-ordinal neighbor lists, sorted by neighbor ordinal then kind.
    pub adjacency: Vec<Vec<Neighbor>>,
    pub n_videos: usize,
}

/// Edge weighting for spatial picks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialWeight {
    /// Every edge weighs 1.
    #[default]
    Unit,
    /// Spatial edges carry the cosine similarity of their pick.
    Cosine,
}

/// Counters recorded while building, for cost-model checks.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct BuildStats {
    /// Cosine evaluations performed (one per cross-video clip pair).
    pub similarity_evaluations: u64,
    /// Directed argmax picks before symmetrization.
    pub directed_picks: u64,
}

/// Cosine similarity with f64 accumulation, clamped to [-1, 1].
pub fn cosine_similarity(u: &[f32], v: &[f32]) -> Result<f64> {
    debug_assert_eq!(u.len(), v.len());
    let mut dot = 0.0f64;
    let mut sq_u = 0.0f64;
    let mut sq_v = 0.0f64;
    for (&x, &y) in u.iter().zip(v.iter()) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        sq_u += x * x;
        sq_v += y * y;
    }
    if sq_u == 0.0 {
        return Err(Error::ZeroVector(0));
    }
    if sq_v == 0.0 {
        return Err(Error::ZeroVector(1));
    }
    Ok((dot / (sq_u * sq_v).sqrt()).clamp(-1.0, 1.0))
}

/// One directed spatial pick: source node, chosen destination, similarity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialPick {
    pub src: NodeId,
    pub dst: NodeId,
    pub similarity: f64,
}

/// For every clip of `src`, pick the most similar clip of `dst`.
/// Ties resolve to the lowest destination clip index.
pub fn spatial_picks(src: &VideoFeatures, src_index: u32, dst: &VideoFeatures, dst_index: u32) -> Result<Vec<SpatialPick>> {
    let mut picks = Vec::with_capacity(src.z());
    for i in 0..src.z() {
        let mut best: Option<(f64, usize)> = None;
        for j in 0..dst.z() {
            let sim = cosine_similarity(src.row(i), dst.row(j))?;
            if best.map_or(true, |(bs, _)| sim > bs) {
                best = Some((sim, j));
            }
        }
        let (similarity, j) = best.expect("destination video has at least one clip");
        picks.push(SpatialPick {
            src: NodeId { video_index: src_index, clip_index: src.spans[i].clip_index },
            dst: NodeId { video_index: dst_index, clip_index: dst.spans[j].clip_index },
            similarity,
        });
    }
    Ok(picks)
}

/// Chain consecutive kept clips of one video. After background filtering
/// "consecutive" means adjacent in the kept sequence.
pub fn temporal_edges(vf: &VideoFeatures, video_index: u32) -> Vec<Edge> {
    vf.spans
        .windows(2)
        .map(|w| Edge {
            a: NodeId { video_index, clip_index: w[0].clip_index },
            b: NodeId { video_index, clip_index: w[1].clip_index },
            kind: EdgeKind::Temporal,
            weight: 1.0,
        })
        .collect()
}

/// Build the unity graph over all kept clips of all videos.
pub fn build_unity_graph(
    videos: &[VideoFeatures],
    spatial_weight: SpatialWeight,
) -> Result<(UnityGraph, BuildStats)> {
    if videos.is_empty() {
        return Err(Error::Config("graph build needs at least one video".into()));
    }
    for vf in videos {
        vf.validate()?;
        let d0 = videos[0].d;
        if vf.d != d0 {
            return Err(Error::Dimension(format!(
                "video {} has d={}, expected {} like the first video",
                vf.video_id, vf.d, d0
            )));
        }
    }

    let mut nodes = Vec::new();
    for (vi, vf) in videos.iter().enumerate() {
        for (ci, span) in vf.spans.iter().enumerate() {
            nodes.push(GraphNode {
                id: NodeId { video_index: vi as u32, clip_index: span.clip_index },
                embedding: vf.row(ci).to_vec(),
                time: vf.time(ci),
            });
        }
    }
    // video-major construction order is already (video, clip) sorted

    let mut stats = BuildStats::default();
    let mut edges: Vec<Edge> = Vec::new();
    for (vi, vf) in videos.iter().enumerate() {
        edges.extend(temporal_edges(vf, vi as u32));
    }

    // one similarity matrix per unordered video pair serves both directions
    let mut spatial: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    for i in 0..videos.len() {
        for j in (i + 1)..videos.len() {
            let (vi, vj) = (&videos[i], &videos[j]);
            let (zi, zj) = (vi.z(), vj.z());
            let mut sims = vec![0.0f64; zi * zj];
            for a in 0..zi {
                for b in 0..zj {
                    sims[a * zj + b] = cosine_similarity(vi.row(a), vj.row(b))?;
                    stats.similarity_evaluations += 1;
                }
            }
            let mut record = |src: NodeId, dst: NodeId, sim: f64| {
                let key = if src < dst { (src, dst) } else { (dst, src) };
                let w = match spatial_weight {
                    SpatialWeight::Unit => 1.0,
                    SpatialWeight::Cosine => sim,
                };
                spatial.entry(key).or_insert(w);
            };
            // picks i -> j: max over rows
            for a in 0..zi {
                let mut best = 0usize;
                for b in 1..zj {
                    if sims[a * zj + b] > sims[a * zj + best] {
                        best = b;
                    }
                }
                stats.directed_picks += 1;
                record(
                    NodeId { video_index: i as u32, clip_index: vi.spans[a].clip_index },
                    NodeId { video_index: j as u32, clip_index: vj.spans[best].clip_index },
                    sims[a * zj + best],
                );
            }
            // picks j -> i: max over columns
            for b in 0..zj {
                let mut best = 0usize;
                for a in 1..zi {
                    if sims[a * zj + b] > sims[best * zj + b] {
                        best = a;
                    }
                }
                stats.directed_picks += 1;
                record(
                    NodeId { video_index: j as u32, clip_index: vj.spans[b].clip_index },
                    NodeId { video_index: i as u32, clip_index: vi.spans[best].clip_index },
                    sims[best * zj + b],
                );
            }
        }
    }
    edges.extend(spatial.into_iter().map(|((a, b), weight)| Edge {
        a,
        b,
        kind: EdgeKind::Spatial,
        weight,
    }));

    let graph = UnityGraph::from_parts(nodes, edges, videos.len())?;
    Ok((graph, stats))
}

impl UnityGraph {
    /// Assemble a graph from node and edge lists, canonicalizing order and
    /// rebuilding adjacency.
    pub fn from_parts(mut nodes: Vec<GraphNode>, mut edges: Vec<Edge>, n_videos: usize) -> Result<Self> {
        nodes.sort_by_key(|n| n.id);
        let ordinal: BTreeMap<NodeId, usize> =
            nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        if ordinal.len() != nodes.len() {
            return Err(Error::Format("duplicate node id in graph".into()));
        }
        for e in &mut edges {
            if e.a == e.b {
                return Err(Error::Format(format!("self loop at node {}", e.a)));
            }
            if e.b < e.a {
                std::mem::swap(&mut e.a, &mut e.b);
            }
            if !ordinal.contains_key(&e.a) || !ordinal.contains_key(&e.b) {
                return Err(Error::Format(format!("edge ({}, {}) references unknown node", e.a, e.b)));
            }
        }
        edges.sort_by(|x, y| (x.a, x.b, x.kind).cmp(&(y.a, y.b, y.kind)));
        edges.dedup_by_key(|e| (e.a, e.b, e.kind));

        let mut adjacency = vec![Vec::new(); nodes.len()];
        for e in &edges {
            let (ia, ib) = (ordinal[&e.a], ordinal[&e.b]);
            adjacency[ia].push(Neighbor { node: ib, weight: e.weight, kind: e.kind });
            adjacency[ib].push(Neighbor { node: ia, weight: e.weight, kind: e.kind });
        }
        for list in &mut adjacency {
            list.sort_by_key(|n| (n.node, n.kind));
        }
        Ok(UnityGraph { nodes, edges, adjacency, n_videos })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn ordinal_of(&self, id: NodeId) -> Option<usize> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok()
    }

    pub fn degree(&self, ordinal: usize) -> usize {
        self.adjacency[ordinal].len()
    }

    pub fn kind_counts(&self) -> (usize, usize) {
        let spatial = self.edges.iter().filter(|e| e.kind == EdgeKind::Spatial).count();
        (spatial, self.edges.len() - spatial)
    }

    pub fn stats(&self, build: &BuildStats) -> GraphStatsReport {
        let (spatial_edges, temporal_edges) = self.kind_counts();
        let max_degree = (0..self.node_count()).map(|i| self.degree(i)).max().unwrap_or(0);
        let mut degree_histogram = vec![0u64; max_degree + 1];
        for i in 0..self.node_count() {
            degree_histogram[self.degree(i)] += 1;
        }
        GraphStatsReport {
            n_videos: self.n_videos,
            n_nodes: self.node_count(),
            n_edges: self.edge_count(),
            spatial_edges,
            temporal_edges,
            degree_histogram,
            similarity_evaluations: build.similarity_evaluations,
            directed_picks: build.directed_picks,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphStatsReport {
    pub n_videos: usize,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub spatial_edges: usize,
    pub temporal_edges: usize,
    /// Index d holds the number of nodes with degree d.
    pub degree_histogram: Vec<u64>,
    pub similarity_evaluations: u64,
    pub directed_picks: u64,
}

/// Write the canonical edge CSV: `src_video,src_clip,dst_video,dst_clip,kind,weight`.
pub fn write_edges_csv(graph: &UnityGraph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "src_video,src_clip,dst_video,dst_clip,kind,weight")?;
    for e in &graph.edges {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            e.a.video_index,
            e.a.clip_index,
            e.b.video_index,
            e.b.clip_index,
            e.kind.code(),
            e.weight
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_edges_csv(path: &Path) -> Result<Vec<Edge>> {
    let raw = fs::read_to_string(path)?;
    let mut lines = raw.lines();
    match lines.next() {
        Some("src_video,src_clip,dst_video,dst_clip,kind,weight") => {}
        other => return Err(Error::Format(format!("edge csv: bad header {other:?}"))),
    }
    let mut edges = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Format(format!("edge csv line {}: expected 6 fields", lineno + 2)));
        }
        let num = |s: &str| -> Result<u32> {
            s.parse().map_err(|_| Error::Format(format!("edge csv: bad integer {s:?}")))
        };
        edges.push(Edge {
            a: NodeId { video_index: num(fields[0])?, clip_index: num(fields[1])? },
            b: NodeId { video_index: num(fields[2])?, clip_index: num(fields[3])? },
            kind: EdgeKind::from_code(fields[4])?,
            weight: fields[5]
                .parse()
                .map_err(|_| Error::Format(format!("edge csv: bad weight {:?}", fields[5])))?,
        });
    }
    Ok(edges)
}

/// Write the node table: `video,clip,time`.
pub fn write_nodes_csv(graph: &UnityGraph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "video,clip,time")?;
    for n in &graph.nodes {
        writeln!(w, "{},{},{}", n.id.video_index, n.id.clip_index, n.time)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_nodes_csv(path: &Path) -> Result<Vec<(NodeId, f64)>> {
    let raw = fs::read_to_string(path)?;
    let mut lines = raw.lines();
    match lines.next() {
        Some("video,clip,time") => {}
        other => return Err(Error::Format(format!("node csv: bad header {other:?}"))),
    }
    let mut nodes = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Format("node csv: expected 3 fields".into()));
        }
        let id = NodeId {
            video_index: fields[0]
                .parse()
                .map_err(|_| Error::Format(format!("node csv: bad video {:?}", fields[0])))?,
            clip_index: fields[1]
                .parse()
                .map_err(|_| Error::Format(format!("node csv: bad clip {:?}", fields[1])))?,
        };
        let time: f64 = fields[2]
            .parse()
            .map_err(|_| Error::Format(format!("node csv: bad time {:?}", fields[2])))?;
        nodes.push((id, time));
    }
    Ok(nodes)
}

/// Reload a graph from the node and edge CSVs. Node embeddings are not part
/// of the files; the result carries empty embedding vectors.
pub fn read_graph(nodes_path: &Path, edges_path: &Path) -> Result<UnityGraph> {
    let nodes: Vec<GraphNode> = read_nodes_csv(nodes_path)?
        .into_iter()
        .map(|(id, time)| GraphNode { id, embedding: Vec::new(), time })
        .collect();
    let n_videos = nodes.iter().map(|n| n.id.video_index as usize + 1).max().unwrap_or(0);
    let edges = read_edges_csv(edges_path)?;
    UnityGraph::from_parts(nodes, edges, n_videos)
}
