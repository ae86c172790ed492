use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::detect::Detection;
use crate::error::{Error, Result};

/// Costs of the tracking network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlowParams {
    /// Largest distance, in pixels, bridged between consecutive frames.
    pub gate: f64,
    pub entry_cost: f64,
    pub exit_cost: f64,
    /// Weight of the embedding distance in transition costs.
    pub gamma: f64,
    /// Log-odds detection costs; when false every detection gets the same
    /// reward and linking is decided by distance alone.
    pub confidence_prior: bool,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            gate: 25.0,
            entry_cost: 2.0,
            exit_cost: 2.0,
            gamma: 0.0,
            confidence_prior: true,
        }
    }
}

/// `log((1 - c) / c)` with `c` clamped away from 0 and 1.
pub fn detection_cost(confidence: f64) -> f64 {
    let c = confidence.clamp(1e-4, 1.0 - 1e-4);
    ((1.0 - c) / c).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Node {
    Source,
    Sink,
    In(usize),
    Out(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArcKind {
    Entry,
    Exit,
    Detection,
    Transition,
}

/// Unit-capacity arc between node indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub cost: f64,
    pub kind: ArcKind,
}

/// Node 0 is the source, node 1 the sink; detection `k` owns nodes
/// `2 + 2k` (in) and `3 + 2k` (out).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowGraph {
    pub nodes: Vec<Node>,
    pub arcs: Vec<Arc>,
    /// Detections in frame-group order.
    pub detections: Vec<Detection>,
    /// Frame group of each detection.
    pub group: Vec<usize>,
}

impl FlowGraph {
    pub const SOURCE: usize = 0;
    pub const SINK: usize = 1;

    fn in_node(k: usize) -> usize {
        2 + 2 * k
    }

    fn out_node(k: usize) -> usize {
        3 + 2 * k
    }

    pub fn transition_count(&self) -> usize {
        self.arcs
            .iter()
            .filter(|a| a.kind == ArcKind::Transition)
            .count()
    }
}

/// Build the tracking network over consecutive frame groups. `embeddings`,
/// when given, holds one vector per detection in the same layout as
/// `frames`.
pub fn build_flow_graph(
    frames: &[Vec<Detection>],
    params: &FlowParams,
    embeddings: Option<&[Vec<Vec<f64>>]>,
) -> Result<FlowGraph> {
    if !(params.gate > 0.0 && params.gate.is_finite()) {
        return Err(Error::invalid(format!(
            "gate must be positive, got {}",
            params.gate
        )));
    }
    if let Some(e) = embeddings {
        if e.len() != frames.len() || e.iter().zip(frames).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::invalid(
                "embeddings must mirror the detection groups",
            ));
        }
    }
    let mut detections = Vec::new();
    let mut group = Vec::new();
    let mut first = Vec::with_capacity(frames.len() + 1);
    for (g, dets) in frames.iter().enumerate() {
        first.push(detections.len());
        for d in dets {
            if !(d.x.is_finite() && d.y.is_finite() && d.confidence.is_finite()) {
                return Err(Error::NonFinite(format!("detection in frame group {g}")));
            }
            detections.push(*d);
            group.push(g);
        }
    }
    first.push(detections.len());

    let mut nodes = vec![Node::Source, Node::Sink];
    let mut arcs = Vec::new();
    let reward = -(params.entry_cost + params.exit_cost) - 1.0;
    for (k, d) in detections.iter().enumerate() {
        nodes.push(Node::In(k));
        nodes.push(Node::Out(k));
        let cost = if params.confidence_prior {
            detection_cost(d.confidence)
        } else {
            reward
        };
        arcs.push(Arc {
            from: FlowGraph::SOURCE,
            to: FlowGraph::in_node(k),
            cost: params.entry_cost,
            kind: ArcKind::Entry,
        });
        arcs.push(Arc {
            from: FlowGraph::in_node(k),
            to: FlowGraph::out_node(k),
            cost,
            kind: ArcKind::Detection,
        });
        arcs.push(Arc {
            from: FlowGraph::out_node(k),
            to: FlowGraph::SINK,
            cost: params.exit_cost,
            kind: ArcKind::Exit,
        });
    }
    for g in 0..frames.len().saturating_sub(1) {
        for i in first[g]..first[g + 1] {
            for j in first[g + 1]..first[g + 2] {
                let dist = detections[i].distance(&detections[j]);
                if dist > params.gate {
                    continue;
                }
                let mut cost = dist / params.gate;
                if let (Some(e), true) = (embeddings, params.gamma != 0.0) {
                    let a = &e[g][i - first[g]];
                    let b = &e[g + 1][j - first[g + 1]];
                    let ed: f64 = a
                        .iter()
                        .zip(b)
                        .map(|(u, v)| (u - v) * (u - v))
                        .sum::<f64>()
                        .sqrt();
                    cost += params.gamma * ed;
                }
                arcs.push(Arc {
                    from: FlowGraph::out_node(i),
                    to: FlowGraph::in_node(j),
                    cost,
                    kind: ArcKind::Transition,
                });
            }
        }
    }
    Ok(FlowGraph {
        nodes,
        arcs,
        detections,
        group,
    })
}

/// A linked run of detections over consecutive frame groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tracklet {
    pub id: u64,
    pub detections: Vec<Detection>,
    pub average_confidence: f64,
}

impl Tracklet {
    pub fn new(id: u64, detections: Vec<Detection>) -> Self {
        let average_confidence =
            detections.iter().map(|d| d.confidence).sum::<f64>() / detections.len().max(1) as f64;
        Tracklet {
            id,
            detections,
            average_confidence,
        }
    }

    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSolution {
    pub tracklets: Vec<Tracklet>,
    /// Total cost of the selected flow.
    pub cost: f64,
    /// Indices into `FlowGraph::detections`, one list per tracklet.
    pub paths: Vec<Vec<usize>>,
}

#[derive(Clone, Copy)]
struct Edge {
    to: usize,
    cap: u8,
    cost: f64,
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // min-heap on distance, then node index
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

/// Successive shortest paths with node potentials, one unit per
/// augmentation, stopping once the cheapest path no longer lowers the cost.
pub fn solve_min_cost_flow(graph: &FlowGraph) -> FlowSolution {
    let n = graph.nodes.len();
    let mut edges: Vec<Edge> = Vec::with_capacity(2 * graph.arcs.len());
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for a in &graph.arcs {
        adj[a.from].push(edges.len());
        edges.push(Edge {
            to: a.to,
            cap: 1,
            cost: a.cost,
        });
        adj[a.to].push(edges.len());
        edges.push(Edge {
            to: a.from,
            cap: 0,
            cost: -a.cost,
        });
    }

    // Initial potentials: shortest distances on the DAG, relaxed in
    // topological order (source, then in/out per detection in frame order).
    let mut pot = vec![f64::INFINITY; n];
    pot[FlowGraph::SOURCE] = 0.0;
    let mut order = vec![FlowGraph::SOURCE];
    for k in 0..graph.detections.len() {
        order.push(FlowGraph::in_node(k));
        order.push(FlowGraph::out_node(k));
    }
    for &u in &order {
        if pot[u].is_finite() {
            for &e in &adj[u] {
                let ed = edges[e];
                if ed.cap > 0 && pot[u] + ed.cost < pot[ed.to] {
                    pot[ed.to] = pot[u] + ed.cost;
                }
            }
        }
    }

    let mut dist = vec![f64::INFINITY; n];
    let mut prev: Vec<Option<usize>> = vec![None; n];
    loop {
        dist.fill(f64::INFINITY);
        prev.fill(None);
        dist[FlowGraph::SOURCE] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Entry(0.0, FlowGraph::SOURCE));
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &e in &adj[u] {
                let ed = edges[e];
                if ed.cap == 0 || !pot[ed.to].is_finite() {
                    continue;
                }
                let reduced = (ed.cost + pot[u] - pot[ed.to]).max(0.0);
                if d + reduced < dist[ed.to] {
                    dist[ed.to] = d + reduced;
                    prev[ed.to] = Some(e);
                    heap.push(Entry(dist[ed.to], ed.to));
                }
            }
        }
        if !dist[FlowGraph::SINK].is_finite() {
            break;
        }
        let path_cost = dist[FlowGraph::SINK] + pot[FlowGraph::SINK] - pot[FlowGraph::SOURCE];
        if path_cost >= 0.0 {
            break;
        }
        for v in 0..n {
            if dist[v].is_finite() {
                pot[v] += dist[v];
            }
        }
        let mut v = FlowGraph::SINK;
        while let Some(e) = prev[v] {
            edges[e].cap -= 1;
            edges[e ^ 1].cap += 1;
            v = edges[e ^ 1].to;
        }
    }

    let used = |arc: usize| edges[2 * arc].cap == 0;
    let cost = (0..graph.arcs.len())
        .filter(|&a| used(a))
        .map(|a| graph.arcs[a].cost)
        .sum();
    let mut next = vec![None; graph.detections.len()];
    let mut starts = Vec::new();
    for (a, arc) in graph.arcs.iter().enumerate() {
        if !used(a) {
            continue;
        }
        match arc.kind {
            ArcKind::Entry => starts.push((arc.to - 2) / 2),
            ArcKind::Transition => next[(arc.from - 3) / 2] = Some((arc.to - 2) / 2),
            _ => {}
        }
    }
    starts.sort_unstable();
    let mut paths = Vec::new();
    for s in starts {
        let mut path = vec![s];
        while let Some(k) = next[*path.last().unwrap()] {
            path.push(k);
        }
        paths.push(path);
    }
    let tracklets = paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            Tracklet::new(
                i as u64 + 1,
                p.iter().map(|&k| graph.detections[k]).collect(),
            )
        })
        .collect();
    FlowSolution {
        tracklets,
        cost,
        paths,
    }
}

/// Group detections into consecutive frames, link them, and return the
/// tracklets.
pub fn track(detections: &[Detection], params: &FlowParams) -> Result<Vec<Tracklet>> {
    let Some(last) = detections.iter().map(|d| d.frame).max() else {
        return Ok(Vec::new());
    };
    let first = detections.iter().map(|d| d.frame).min().unwrap_or(0);
    let mut frames = vec![Vec::new(); last - first + 1];
    for d in detections {
        frames[d.frame - first].push(*d);
    }
    let graph = build_flow_graph(&frames, params, None)?;
    Ok(solve_min_cost_flow(&graph).tracklets)
}
