//! Command grounding and task-oriented subgraph extraction.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_store::{frame_at_operator_time, lifecycle_events, LifecycleEvent, LifecycleKind};
use crate::model::{
    Command, FeatureVec, FrameGraph, LatencyTag, NodeId, ObjectNode, SceneGraph4D, SpatialEdge,
    TrackId, TrackStatus,
};
use crate::scalar::{cosine, Point3, Scalar};

pub const SUBGRAPH_SCHEMA: &str = "stovsg-subgraph/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", default, deny_unknown_fields)]
pub struct QueryConfig<T: Scalar> {
    /// Weight of the image-feature similarity term.
    pub beta: T,
    pub top_k: usize,
    pub neighbor_hops: usize,
    /// Most recent track observations attached per node; `None` keeps all.
    pub history_depth: Option<usize>,
    /// Use the earliest frame when nothing was visible at issue time.
    pub fallback_to_earliest: bool,
}

impl<T: Scalar> Default for QueryConfig<T> {
    fn default() -> Self {
        Self {
            beta: T::lit(0.5),
            top_k: 5,
            neighbor_hops: 1,
            history_depth: None,
            fallback_to_earliest: false,
        }
    }
}

impl<T: Scalar> QueryConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= T::zero()) {
            return Err(Error::invalid("beta must be finite and non-negative"));
        }
        if self.top_k == 0 {
            return Err(Error::invalid("top_k must be at least 1"));
        }
        Ok(())
    }
}

/// Which frame a command is resolved against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// The newest frame visible to the operator at issue time.
    LatencyAware,
    /// Whatever frame is newest when the command is processed.
    NewestFrame,
}

/// `cos(g, f_txt) + beta cos(g, f_img)` for every node, best first, ties by node id.
pub fn score_nodes<T: Scalar>(g_u: &FeatureVec<T>, frame: &FrameGraph<T>, beta: T) -> Result<Vec<(NodeId, T)>> {
    let mut scores = Vec::with_capacity(frame.nodes.len());
    for n in &frame.nodes {
        let cos = |f: &FeatureVec<T>| {
            if f.dim() != g_u.dim() {
                return Err(Error::invalid(format!(
                    "command embedding dim {} vs node feature dim {}",
                    g_u.dim(),
                    f.dim()
                )));
            }
            cosine(g_u.as_slice(), f.as_slice()).ok_or_else(|| Error::invalid("cosine of zero-norm vector"))
        };
        scores.push((n.node_id, cos(&n.f_txt)? + beta * cos(&n.f_img)?));
    }
    scores.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    Ok(scores)
}

fn aligned_frame<'g, T: Scalar>(
    graph: &'g SceneGraph4D<T>,
    command: &Command<T>,
    cfg: &QueryConfig<T>,
    alignment: Alignment,
) -> Result<&'g FrameGraph<T>> {
    let found = match alignment {
        Alignment::LatencyAware => frame_at_operator_time(graph, command.issue_time)
            .or_else(|| cfg.fallback_to_earliest.then(|| graph.frames.first()).flatten()),
        Alignment::NewestFrame => graph.newest_frame(),
    };
    found.ok_or(Error::NoAlignedFrame {
        issue_time: command.issue_time.as_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Target,
    Neighbor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgraphNode<T: Scalar> {
    pub node: ObjectNode<T>,
    pub score: T,
    pub role: NodeRole,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry<T: Scalar> {
    pub frame_index: usize,
    pub node_id: NodeId,
    /// Capture time of the observation.
    pub time: T,
    pub centroid: Point3<T>,
}

/// Command-centred excerpt of the graph handed to a planner.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSubgraph<T: Scalar> {
    pub command: Command<T>,
    pub aligned_frame_index: usize,
    pub latency_tag: LatencyTag<T>,
    /// Sorted by score (descending), then node id.
    pub nodes: Vec<SubgraphNode<T>>,
    pub spatial_edges: Vec<SpatialEdge<T>>,
    pub history: BTreeMap<NodeId, Vec<HistoryEntry<T>>>,
    pub scene_dynamics: Vec<LifecycleEvent<T>>,
}

impl<T: Scalar> TaskSubgraph<T> {
    pub fn node_ids(&self) -> BTreeSet<NodeId> {
        self.nodes.iter().map(|n| n.node.node_id).collect()
    }

    /// Every spatial edge endpoint is a member node.
    pub fn is_closed(&self) -> bool {
        let ids = self.node_ids();
        self.spatial_edges
            .iter()
            .all(|e| ids.contains(&e.src) && ids.contains(&e.dst))
    }
}

fn history_of<T: Scalar>(
    graph: &SceneGraph4D<T>,
    track: Option<TrackId>,
    depth: Option<usize>,
) -> Vec<HistoryEntry<T>> {
    let Some(track) = track.and_then(|t| graph.track(t)) else {
        return Vec::new();
    };
    let mut entries: Vec<HistoryEntry<T>> = track
        .history
        .iter()
        .filter_map(|r| {
            let frame = graph.frame(r.frame_index)?;
            let node = frame.node(r.node_id)?;
            Some(HistoryEntry {
                frame_index: r.frame_index,
                node_id: r.node_id,
                time: frame.latency_tag.capture_time,
                centroid: node.centroid,
            })
        })
        .collect();
    if let Some(d) = depth {
        let skip = entries.len().saturating_sub(d);
        entries.drain(..skip);
    }
    entries
}

/// Scores the aligned frame, keeps the top-K nodes, grows them by spatial hops,
/// and attaches track histories plus the lifecycle events between the aligned
/// and the newest frame.
pub fn extract_subgraph<T: Scalar>(
    graph: &SceneGraph4D<T>,
    command: &Command<T>,
    cfg: &QueryConfig<T>,
) -> Result<TaskSubgraph<T>> {
    extract_subgraph_with(graph, command, cfg, Alignment::LatencyAware)
}

pub fn extract_subgraph_with<T: Scalar>(
    graph: &SceneGraph4D<T>,
    command: &Command<T>,
    cfg: &QueryConfig<T>,
    alignment: Alignment,
) -> Result<TaskSubgraph<T>> {
    cfg.validate()?;
    let frame = aligned_frame(graph, command, cfg, alignment)?;
    let scores = score_nodes(&command.embedding, frame, cfg.beta)?;
    let score_of: BTreeMap<NodeId, T> = scores.iter().copied().collect();

    let targets: Vec<NodeId> = scores.iter().take(cfg.top_k).map(|s| s.0).collect();
    let mut members: BTreeSet<NodeId> = targets.iter().copied().collect();
    let mut queue: VecDeque<(NodeId, usize)> = targets.iter().map(|&id| (id, 0)).collect();
    while let Some((id, depth)) = queue.pop_front() {
        if depth == cfg.neighbor_hops {
            continue;
        }
        for e in &frame.spatial_edges {
            let other = if e.src == id {
                e.dst
            } else if e.dst == id {
                e.src
            } else {
                continue;
            };
            if members.insert(other) {
                queue.push_back((other, depth + 1));
            }
        }
    }

    let target_set: BTreeSet<NodeId> = targets.iter().copied().collect();
    let mut nodes: Vec<SubgraphNode<T>> = scores
        .iter()
        .filter(|(id, _)| members.contains(id))
        .filter_map(|&(id, score)| {
            frame.node(id).map(|n| SubgraphNode {
                node: n.clone(),
                score,
                role: if target_set.contains(&id) { NodeRole::Target } else { NodeRole::Neighbor },
            })
        })
        .collect();
    nodes.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.node.node_id.cmp(&b.node.node_id))
    });
    debug_assert!(nodes.iter().all(|n| score_of.contains_key(&n.node.node_id)));

    let spatial_edges: Vec<SpatialEdge<T>> = frame
        .spatial_edges
        .iter()
        .filter(|e| members.contains(&e.src) && members.contains(&e.dst))
        .cloned()
        .collect();

    let history = nodes
        .iter()
        .map(|n| (n.node.node_id, history_of(graph, n.node.track_id, cfg.history_depth)))
        .filter(|(_, h)| !h.is_empty())
        .collect();

    let newest = graph.newest_frame().map_or(frame.latency_tag.capture_time, |f| f.latency_tag.capture_time);
    let scene_dynamics = lifecycle_events(graph, frame.latency_tag.capture_time, newest);

    Ok(TaskSubgraph {
        command: command.clone(),
        aligned_frame_index: frame.frame_index,
        latency_tag: frame.latency_tag,
        nodes,
        spatial_edges,
        history,
        scene_dynamics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GroundedNode<T: Scalar> {
    pub node_id: NodeId,
    pub track_id: Option<TrackId>,
    pub frame_index: usize,
    pub label: String,
    pub centroid: Point3<T>,
    pub size: Point3<T>,
    pub obs_time: T,
}

impl<T: Scalar> From<&ObjectNode<T>> for GroundedNode<T> {
    fn from(n: &ObjectNode<T>) -> Self {
        Self {
            node_id: n.node_id,
            track_id: n.track_id,
            frame_index: n.frame_index,
            label: n.label.clone(),
            centroid: n.centroid,
            size: n.size,
            obs_time: n.obs_time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundingStatus {
    /// Target identity is alive in the newest frame.
    Tracked,
    /// Target's track is not observed in the newest frame; see `last_known`.
    TargetLost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GroundingResult<T: Scalar> {
    pub alignment: Alignment,
    pub aligned_frame_index: usize,
    pub score: T,
    /// Best-scoring node in the aligned frame.
    pub target: GroundedNode<T>,
    /// Same identity in the newest frame, if it is still observed there.
    pub current: Option<GroundedNode<T>>,
    /// Most recent observation of the target identity.
    pub last_known: GroundedNode<T>,
    pub status: GroundingStatus,
}

/// Picks the top-1 node of the aligned frame and follows its track to the
/// newest observation, yielding the execution-time pose.
pub fn ground_command<T: Scalar>(
    graph: &SceneGraph4D<T>,
    command: &Command<T>,
    cfg: &QueryConfig<T>,
    alignment: Alignment,
) -> Result<GroundingResult<T>> {
    let frame = aligned_frame(graph, command, cfg, alignment)?;
    let scores = score_nodes(&command.embedding, frame, cfg.beta)?;
    let &(best, score) = scores
        .first()
        .ok_or_else(|| Error::NotFound(format!("no objects in aligned frame {}", frame.frame_index)))?;
    let target_node = frame.node(best).expect("scored node belongs to frame");
    let target = GroundedNode::from(target_node);

    let newest_index = graph.newest_frame().map(|f| f.frame_index);
    let track = target_node.track_id.and_then(|t| graph.track(t));
    let last_node = track
        .and_then(|t| t.last_node())
        .and_then(|r| graph.node(r))
        .unwrap_or(target_node);
    let last_known = GroundedNode::from(last_node);
    let alive = match track {
        Some(t) => t.status == TrackStatus::Active && Some(last_node.frame_index) == newest_index,
        None => Some(target_node.frame_index) == newest_index,
    };
    Ok(GroundingResult {
        alignment,
        aligned_frame_index: frame.frame_index,
        score,
        target,
        current: alive.then(|| last_known.clone()),
        last_known,
        status: if alive { GroundingStatus::Tracked } else { GroundingStatus::TargetLost },
    })
}

// ---------------------------------------------------------------------------
// Wire format

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyTagDoc {
    pub capture_time: f64,
    pub transmission_latency: f64,
    pub obs_time: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationDoc {
    pub subject: u64,
    pub relation: String,
    pub object: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionDoc {
    pub time: f64,
    pub frame_index: usize,
    pub centroid: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: u64,
    pub track_id: Option<u64>,
    pub class: String,
    pub role: NodeRole,
    pub centroid: [f64; 3],
    pub size: [f64; 3],
    pub score: f64,
    pub spatial_relations: Vec<RelationDoc>,
    pub motion_history: Vec<MotionDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsDoc {
    pub time: f64,
    pub frame_index: usize,
    pub track_id: u64,
    pub event: LifecycleKind,
}

/// Serialized subgraph as seen by a planner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubgraphDocument {
    pub schema: String,
    pub command_text: String,
    pub issue_time: f64,
    pub command_latency: f64,
    pub aligned_frame_index: usize,
    pub aligned_frame_time: f64,
    pub latency_tag: LatencyTagDoc,
    pub nodes: Vec<NodeDoc>,
    pub scene_dynamics: Vec<DynamicsDoc>,
}

/// Rounds to 6 significant decimal digits.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

fn r3(p: [f64; 3]) -> [f64; 3] {
    p.map(round_sig6)
}

fn to3<T: Scalar>(p: &Point3<T>) -> [f64; 3] {
    [p[0].as_f64(), p[1].as_f64(), p[2].as_f64()]
}

impl SubgraphDocument {
    pub fn from_subgraph<T: Scalar>(sub: &TaskSubgraph<T>) -> Self {
        let nodes = sub
            .nodes
            .iter()
            .map(|n| {
                let id = n.node.node_id;
                let mut spatial_relations: Vec<RelationDoc> = sub
                    .spatial_edges
                    .iter()
                    .filter(|e| e.src == id || e.dst == id)
                    .map(|e| RelationDoc {
                        subject: e.src.0,
                        relation: e.relation.clone(),
                        object: e.dst.0,
                    })
                    .collect();
                spatial_relations.sort();
                NodeDoc {
                    id: id.0,
                    track_id: n.node.track_id.map(|t| t.0),
                    class: n.node.label.clone(),
                    role: n.role,
                    centroid: to3(&n.node.centroid),
                    size: to3(&n.node.size),
                    score: n.score.as_f64(),
                    spatial_relations,
                    motion_history: sub
                        .history
                        .get(&id)
                        .into_iter()
                        .flatten()
                        .map(|h| MotionDoc {
                            time: h.time.as_f64(),
                            frame_index: h.frame_index,
                            centroid: to3(&h.centroid),
                        })
                        .collect(),
                }
            })
            .collect();
        Self {
            schema: SUBGRAPH_SCHEMA.to_string(),
            command_text: sub.command.text.clone(),
            issue_time: sub.command.issue_time.as_f64(),
            command_latency: sub.command.command_latency.as_f64(),
            aligned_frame_index: sub.aligned_frame_index,
            aligned_frame_time: sub.latency_tag.capture_time.as_f64(),
            latency_tag: LatencyTagDoc {
                capture_time: sub.latency_tag.capture_time.as_f64(),
                transmission_latency: sub.latency_tag.transmission_latency.as_f64(),
                obs_time: sub.latency_tag.obs_time().as_f64(),
            },
            nodes,
            scene_dynamics: sub
                .scene_dynamics
                .iter()
                .map(|e| DynamicsDoc {
                    time: e.time.as_f64(),
                    frame_index: e.frame_index,
                    track_id: e.track_id.0,
                    event: e.event,
                })
                .collect(),
        }
    }

    fn rounded(&self) -> Self {
        let mut d = self.clone();
        d.issue_time = round_sig6(d.issue_time);
        d.command_latency = round_sig6(d.command_latency);
        d.aligned_frame_time = round_sig6(d.aligned_frame_time);
        d.latency_tag.capture_time = round_sig6(d.latency_tag.capture_time);
        d.latency_tag.transmission_latency = round_sig6(d.latency_tag.transmission_latency);
        d.latency_tag.obs_time = round_sig6(d.latency_tag.obs_time);
        for n in &mut d.nodes {
            n.centroid = r3(n.centroid);
            n.size = r3(n.size);
            n.score = round_sig6(n.score);
            for m in &mut n.motion_history {
                m.time = round_sig6(m.time);
                m.centroid = r3(m.centroid);
            }
        }
        for e in &mut d.scene_dynamics {
            e.time = round_sig6(e.time);
        }
        d
    }

    /// Canonical text: fixed key order, 6 significant digits, two-space indent.
    pub fn to_canonical_string(&self) -> String {
        serde_json::to_string_pretty(&self.rounded()).expect("subgraph document serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(text)?;
        if doc.schema != SUBGRAPH_SCHEMA {
            return Err(Error::Schema {
                expected: SUBGRAPH_SCHEMA.to_string(),
                found: doc.schema,
            });
        }
        Ok(doc)
    }
}

pub fn serialize_subgraph<T: Scalar>(sub: &TaskSubgraph<T>) -> String {
    SubgraphDocument::from_subgraph(sub).to_canonical_string()
}
