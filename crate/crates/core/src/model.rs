//! Domain types of the spatio-temporal scene graph.
//!
//! Everything here is a plain value type: constructed once, then shared read-only.
//! The engine mutates a [`SceneGraph4D`] only through `graph_store` and
//! `temporal::apply_outcome`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::scalar::{Point3, Scalar};

/// Canonical label form: trimmed, lowercased, internal whitespace collapsed.
pub fn normalize_label(label: &str) -> String {
    label
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrackId(pub u64);

impl fmt::Display for TrackId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Axis-aligned image-space box with continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BoundingBox2D<T: Scalar> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Scalar> BoundingBox2D<T> {
    pub fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Result<Self> {
        let b = Self::new_unchecked(x_min, y_min, x_max, y_max);
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::invalid(format!(
                "invalid box ({x_min}, {y_min}, {x_max}, {y_max})"
            )))
        }
    }

    pub const fn new_unchecked(x_min: T, y_min: T, x_max: T, y_max: T) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }
}

/// Deduplicated pixel set kept in row-major `(v, u)` order.
///
/// Serialized as run-length rows `[v, u_start, run_length]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PixelMask {
    pixels: Vec<(u32, u32)>,
}

impl PixelMask {
    /// Builds a mask from `(u, v)` pixels; order and duplicates are normalized.
    pub fn new(pixels: impl IntoIterator<Item = (u32, u32)>) -> Self {
        let set: BTreeSet<(u32, u32)> = pixels.into_iter().map(|(u, v)| (v, u)).collect();
        Self {
            pixels: set.into_iter().map(|(v, u)| (u, v)).collect(),
        }
    }

    /// All integer pixels inside `[u0, u1] x [v0, v1]`.
    pub fn filled_rect(u0: u32, v0: u32, u1: u32, v1: u32) -> Self {
        let mut pixels = Vec::new();
        for v in v0..=v1 {
            for u in u0..=u1 {
                pixels.push((u, v));
            }
        }
        Self { pixels }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// `(u, v)` pixels in row-major order.
    pub fn pixels(&self) -> &[(u32, u32)] {
        &self.pixels
    }

    pub fn runs(&self) -> Vec<[u32; 3]> {
        let mut runs: Vec<[u32; 3]> = Vec::new();
        for &(u, v) in &self.pixels {
            match runs.last_mut() {
                Some(run) if run[0] == v && run[1] + run[2] == u => run[2] += 1,
                _ => runs.push([v, u, 1]),
            }
        }
        runs
    }

    pub fn from_runs(runs: &[[u32; 3]]) -> Result<Self> {
        let mut pixels = Vec::new();
        for &[v, u0, len] in runs {
            if len == 0 {
                return Err(Error::invalid("zero-length mask run"));
            }
            let end = u0
                .checked_add(len)
                .ok_or_else(|| Error::invalid("mask run overflows"))?;
            pixels.extend((u0..end).map(|u| (u, v)));
        }
        Ok(Self::new(pixels))
    }
}

impl Serialize for PixelMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.runs().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PixelMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let runs = Vec::<[u32; 3]>::deserialize(deserializer)?;
        PixelMask::from_runs(&runs).map_err(serde::de::Error::custom)
    }
}

/// Fixed-dimension embedding (image, text or command features).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound = "")]
pub struct FeatureVec<T: Scalar>(Vec<T>);

impl<T: Scalar> FeatureVec<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empty feature vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature entry"));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn norm(&self) -> T {
        self.0.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
    }

    /// Unit-length copy, `None` for the zero vector.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        if n == T::zero() {
            return None;
        }
        Some(Self(self.0.iter().map(|&x| x / n).collect()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Pinhole intrinsics plus camera-to-world pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CameraModel<T: Scalar> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    /// Row-major rotation, camera frame to world frame.
    pub rotation: [[T; 3]; 3],
    /// Camera origin in world coordinates (meters).
    pub translation: Point3<T>,
}

impl<T: Scalar> CameraModel<T> {
    pub fn with_identity_pose(fx: T, fy: T, cx: T, cy: T) -> Self {
        let (o, z) = (T::one(), T::zero());
        Self {
            fx,
            fy,
            cx,
            cy,
            rotation: [[o, z, z], [z, o, z], [z, z, o]],
            translation: [z, z, z],
        }
    }

    /// Problems with this camera, empty when valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.fx > T::zero() && self.fx.is_finite() && self.fy > T::zero() && self.fy.is_finite())
        {
            out.push(format!("focal lengths must be positive (fx={}, fy={})", self.fx, self.fy));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            out.push("principal point must be finite".to_string());
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            out.push("translation must be finite".to_string());
        }
        let r = &self.rotation;
        let tol = T::lit(1e-9);
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = T::zero();
                for k in 0..3 {
                    dot = dot + r[k][i] * r[k][j];
                }
                let expect = if i == j { T::one() } else { T::zero() };
                if !((dot - expect).abs() <= tol) {
                    out.push(format!("rotation is not orthonormal (R^T R)[{i}][{j}]={dot}"));
                    return out;
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.problems().into_iter().next() {
            None => Ok(()),
            Some(p) => Err(Error::invalid(format!("camera: {p}"))),
        }
    }
}

/// Capture time and transmission latency of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LatencyTag<T: Scalar> {
    pub capture_time: T,
    pub transmission_latency: T,
}

impl<T: Scalar> LatencyTag<T> {
    pub fn new(capture_time: T, transmission_latency: T) -> Self {
        Self {
            capture_time,
            transmission_latency,
        }
    }

    /// Time at which the frame becomes visible to the operator.
    pub fn obs_time(&self) -> T {
        self.capture_time + self.transmission_latency
    }
}

/// One observed object instance in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ObjectNode<T: Scalar> {
    pub node_id: NodeId,
    pub frame_index: usize,
    /// Identity assigned by temporal association (absent until associated).
    pub track_id: Option<TrackId>,
    #[serde(rename = "box")]
    pub bbox: BoundingBox2D<T>,
    pub mask: PixelMask,
    pub f_img: FeatureVec<T>,
    pub f_txt: FeatureVec<T>,
    pub label: String,
    pub centroid: Point3<T>,
    pub size: Point3<T>,
    pub points: Vec<Point3<T>>,
    pub obs_time: T,
}

impl<T: Scalar> ObjectNode<T> {
    pub fn node_ref(&self) -> NodeRef {
        NodeRef {
            node_id: self.node_id,
            frame_index: self.frame_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SpatialEdge<T: Scalar> {
    pub src: NodeId,
    pub dst: NodeId,
    pub relation: String,
    pub resolved_cost: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub node_id: NodeId,
    pub frame_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalRelation {
    SameInstance,
    Appeared,
    Disappeared,
}

/// Cross-frame link. `frame_index` is the frame in which the link was recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalEdge {
    pub src: Option<NodeRef>,
    pub dst: Option<NodeRef>,
    pub relation: TemporalRelation,
    pub track_id: TrackId,
    pub frame_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Active,
    Disappeared,
    Retired,
}

/// Persistent object identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Track<T: Scalar> {
    pub track_id: TrackId,
    pub label: String,
    /// Centroid of the most recent node.
    pub centroid: Point3<T>,
    /// Finite-difference velocity between the last two observations.
    pub velocity: Option<Point3<T>>,
    pub descriptor: FeatureVec<T>,
    pub last_seen_time: T,
    pub status: TrackStatus,
    pub history: Vec<NodeRef>,
}

impl<T: Scalar> Track<T> {
    pub fn last_node(&self) -> Option<NodeRef> {
        self.history.last().copied()
    }
}

/// Per-frame graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct FrameGraph<T: Scalar> {
    pub frame_index: usize,
    pub latency_tag: LatencyTag<T>,
    pub image_width: u32,
    pub image_height: u32,
    pub nodes: Vec<ObjectNode<T>>,
    pub spatial_edges: Vec<SpatialEdge<T>>,
}

impl<T: Scalar> FrameGraph<T> {
    pub fn node(&self, id: NodeId) -> Option<&ObjectNode<T>> {
        self.nodes.iter().find(|n| n.node_id == id)
    }

    pub fn obs_time(&self) -> T {
        self.latency_tag.obs_time()
    }
}

/// The full spatio-temporal graph: frames, temporal edges, and tracks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SceneGraph4D<T: Scalar> {
    pub frames: Vec<FrameGraph<T>>,
    pub temporal_edges: Vec<TemporalEdge>,
    #[serde(with = "tracks_as_list")]
    pub tracks: BTreeMap<TrackId, Track<T>>,
    /// Camera of the most recently ingested frame.
    pub camera: Option<CameraModel<T>>,
    pub feature_dim: Option<usize>,
    pub next_node_id: u64,
    pub next_track_id: u64,
    /// Number of oldest frames dropped by the retention cap.
    pub evicted_frames: usize,
}

impl<T: Scalar> Default for SceneGraph4D<T> {
    fn default() -> Self {
        Self {
            frames: Vec::new(),
            temporal_edges: Vec::new(),
            tracks: BTreeMap::new(),
            camera: None,
            feature_dim: None,
            next_node_id: 1,
            next_track_id: 1,
            evicted_frames: 0,
        }
    }
}

impl<T: Scalar> SceneGraph4D<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn first_frame_index(&self) -> usize {
        self.evicted_frames + 1
    }

    pub fn newest_frame(&self) -> Option<&FrameGraph<T>> {
        self.frames.last()
    }

    pub fn frame(&self, frame_index: usize) -> Option<&FrameGraph<T>> {
        frame_index
            .checked_sub(self.first_frame_index())
            .and_then(|i| self.frames.get(i))
            .filter(|f| f.frame_index == frame_index)
    }

    pub fn node(&self, r: NodeRef) -> Option<&ObjectNode<T>> {
        self.frame(r.frame_index).and_then(|f| f.node(r.node_id))
    }

    pub fn track(&self, id: TrackId) -> Option<&Track<T>> {
        self.tracks.get(&id)
    }

    pub fn temporal_edges_of(&self, relation: TemporalRelation) -> impl Iterator<Item = &TemporalEdge> {
        self.temporal_edges.iter().filter(move |e| e.relation == relation)
    }
}

mod tracks_as_list {
    use super::*;

    pub fn serialize<T: Scalar, S: Serializer>(
        tracks: &BTreeMap<TrackId, Track<T>>,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(tracks.values())
    }

    pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<BTreeMap<TrackId, Track<T>>, D::Error> {
        let list = Vec::<Track<T>>::deserialize(deserializer)?;
        let mut map = BTreeMap::new();
        for t in list {
            if map.insert(t.track_id, t).is_some() {
                return Err(serde::de::Error::custom("duplicate track id"));
            }
        }
        Ok(map)
    }
}

/// Operator instruction with its precomputed embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Command<T: Scalar> {
    pub text: String,
    pub embedding: FeatureVec<T>,
    /// Local issue time (seconds).
    pub issue_time: T,
    /// Operator-to-robot latency (seconds).
    pub command_latency: T,
}

impl<T: Scalar> Command<T> {
    pub fn delivery_time(&self) -> T {
        self.issue_time + self.command_latency
    }
}

/// Relation proposed for an object pair together with its interaction zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RelationCandidate<T: Scalar> {
    pub subject: NodeId,
    pub object: NodeId,
    pub relation: String,
    pub zone: BoundingBox2D<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AcceptedMatch<T: Scalar> {
    pub track_id: TrackId,
    pub node_id: NodeId,
    pub cost: T,
}

/// Result of one association step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct AssociationOutcome<T: Scalar> {
    pub accepted: Vec<AcceptedMatch<T>>,
    pub unmatched_nodes: Vec<NodeId>,
    pub disappeared_tracks: Vec<TrackId>,
}

impl<T: Scalar> AssociationOutcome<T> {
    /// Checks the partition property against the node ids of the frame and the
    /// eligible track ids. Returns a description of every breach.
    pub fn partition_violations(&self, nodes: &[NodeId], tracks: &[TrackId]) -> Vec<String> {
        let mut out = Vec::new();
        let mut node_seen: BTreeMap<NodeId, usize> = BTreeMap::new();
        let mut track_seen: BTreeMap<TrackId, usize> = BTreeMap::new();
        for m in &self.accepted {
            *node_seen.entry(m.node_id).or_default() += 1;
            *track_seen.entry(m.track_id).or_default() += 1;
        }
        for n in &self.unmatched_nodes {
            *node_seen.entry(*n).or_default() += 1;
        }
        for t in &self.disappeared_tracks {
            *track_seen.entry(*t).or_default() += 1;
        }
        let node_set: BTreeSet<_> = nodes.iter().copied().collect();
        let track_set: BTreeSet<_> = tracks.iter().copied().collect();
        for n in &node_set {
            match node_seen.get(n) {
                Some(1) => {}
                Some(k) => out.push(format!("node {n} appears {k} times")),
                None => out.push(format!("node {n} missing from outcome")),
            }
        }
        for t in &track_set {
            match track_seen.get(t) {
                Some(1) => {}
                Some(k) => out.push(format!("track {t} appears {k} times")),
                None => out.push(format!("track {t} missing from outcome")),
            }
        }
        for n in node_seen.keys().filter(|n| !node_set.contains(n)) {
            out.push(format!("outcome names unknown node {n}"));
        }
        for t in track_seen.keys().filter(|t| !track_set.contains(t)) {
            out.push(format!("outcome names ineligible track {t}"));
        }
        out
    }
}

/// A broken invariant found by [`validate_graph`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub rule: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)
    }
}

pub mod rules {
    pub const BOX_VALID: &str = "bounding-box-valid";
    pub const MASK_NON_EMPTY: &str = "mask-non-empty";
    pub const MASK_IN_BOUNDS: &str = "mask-in-image-bounds";
    pub const FEATURE_FINITE: &str = "feature-finite";
    pub const FEATURE_DIM: &str = "feature-dimension";
    pub const CAMERA_VALID: &str = "camera-valid";
    pub const LATENCY_NON_NEGATIVE: &str = "latency-non-negative";
    pub const CAPTURE_MONOTONIC: &str = "capture-time-strictly-increasing";
    pub const FRAME_CONTIGUOUS: &str = "frame-index-contiguous";
    pub const NODE_ID_UNIQUE: &str = "node-id-unique";
    pub const NODE_FRAME: &str = "node-frame-index";
    pub const CENTROID_IN_POINTS: &str = "centroid-within-points";
    pub const SIZE_NON_NEGATIVE: &str = "size-non-negative";
    pub const OBS_TIME: &str = "obs-time";
    pub const SPATIAL_EDGE: &str = "spatial-edge-endpoints";
    pub const TEMPORAL_EDGE: &str = "temporal-edge";
    pub const TRACK: &str = "track";
}

/// Checks every structural invariant; an empty list means the graph is well formed.
pub fn validate_graph<T: Scalar>(graph: &SceneGraph4D<T>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |rule: &'static str, detail: String| out.push(Violation { rule, detail });

    if let Some(cam) = &graph.camera {
        for p in cam.problems() {
            push(rules::CAMERA_VALID, p);
        }
    }

    let slack = T::lit(1e-6);
    let mut all_nodes: BTreeMap<NodeId, usize> = BTreeMap::new();
    let mut prev_capture: Option<T> = None;
    let mut dim = graph.feature_dim;
    for (pos, frame) in graph.frames.iter().enumerate() {
        let expected = graph.first_frame_index() + pos;
        if frame.frame_index != expected {
            push(
                rules::FRAME_CONTIGUOUS,
                format!("frame at position {pos} has index {} (expected {expected})", frame.frame_index),
            );
        }
        let tag = frame.latency_tag;
        if !(tag.transmission_latency >= T::zero()) {
            push(
                rules::LATENCY_NON_NEGATIVE,
                format!("frame {} has transmission latency {}", frame.frame_index, tag.transmission_latency),
            );
        }
        if let Some(prev) = prev_capture {
            if !(tag.capture_time > prev) {
                push(
                    rules::CAPTURE_MONOTONIC,
                    format!("frame {} capture time {} does not exceed {prev}", frame.frame_index, tag.capture_time),
                );
            }
        }
        prev_capture = Some(tag.capture_time);

        let mut frame_ids = BTreeSet::new();
        for node in &frame.nodes {
            let id = node.node_id;
            if !frame_ids.insert(id) || all_nodes.insert(id, frame.frame_index).is_some() {
                push(rules::NODE_ID_UNIQUE, format!("duplicate node id {id}"));
            }
            if node.frame_index != frame.frame_index {
                push(rules::NODE_FRAME, format!("node {id} claims frame {} inside frame {}", node.frame_index, frame.frame_index));
            }
            if !node.bbox.is_valid() {
                push(rules::BOX_VALID, format!("node {id} box {:?}", node.bbox));
            }
            if node.mask.is_empty() {
                push(rules::MASK_NON_EMPTY, format!("node {id}"));
            }
            if node
                .mask
                .pixels()
                .iter()
                .any(|&(u, v)| u >= frame.image_width || v >= frame.image_height)
            {
                push(rules::MASK_IN_BOUNDS, format!("node {id} has pixels outside {}x{}", frame.image_width, frame.image_height));
            }
            for (name, f) in [("f_img", &node.f_img), ("f_txt", &node.f_txt)] {
                if !f.is_finite() {
                    push(rules::FEATURE_FINITE, format!("node {id} {name}"));
                }
                match dim {
                    Some(d) if d != f.dim() => {
                        push(rules::FEATURE_DIM, format!("node {id} {name} has dim {} (expected {d})", f.dim()))
                    }
                    None => dim = Some(f.dim()),
                    _ => {}
                }
            }
            if node.size.iter().any(|s| !(*s >= T::zero())) {
                push(rules::SIZE_NON_NEGATIVE, format!("node {id} size {:?}", node.size));
            }
            if !(node.obs_time >= tag.capture_time) {
                push(rules::OBS_TIME, format!("node {id} obs_time {} before capture {}", node.obs_time, tag.capture_time));
            }
            if node.points.is_empty() {
                push(rules::CENTROID_IN_POINTS, format!("node {id} has no points"));
            } else {
                for axis in 0..3 {
                    let lo = node.points.iter().map(|p| p[axis]).fold(T::infinity(), T::min);
                    let hi = node.points.iter().map(|p| p[axis]).fold(T::neg_infinity(), T::max);
                    let c = node.centroid[axis];
                    if !(c >= lo - slack && c <= hi + slack) {
                        push(rules::CENTROID_IN_POINTS, format!("node {id} axis {axis}: {c} outside [{lo}, {hi}]"));
                    }
                }
            }
        }
        for e in &frame.spatial_edges {
            if e.src == e.dst {
                push(rules::SPATIAL_EDGE, format!("self loop on {}", e.src));
            }
            if !frame_ids.contains(&e.src) || !frame_ids.contains(&e.dst) {
                push(rules::SPATIAL_EDGE, format!("edge {}->{} leaves frame {}", e.src, e.dst, frame.frame_index));
            }
            if !(e.resolved_cost >= T::zero()) {
                push(rules::SPATIAL_EDGE, format!("edge {}->{} has cost {}", e.src, e.dst, e.resolved_cost));
            }
        }
    }

    let first = graph.first_frame_index();
    let resolvable = |r: &NodeRef| r.frame_index < first || graph.node(*r).is_some();
    for e in &graph.temporal_edges {
        let shape_ok = match e.relation {
            TemporalRelation::SameInstance => match (e.src, e.dst) {
                (Some(a), Some(b)) => a.frame_index < b.frame_index,
                _ => false,
            },
            TemporalRelation::Appeared => e.src.is_none() && e.dst.is_some(),
            TemporalRelation::Disappeared => e.src.is_some() && e.dst.is_none(),
        };
        if !shape_ok {
            push(rules::TEMPORAL_EDGE, format!("malformed {:?} edge for {}", e.relation, e.track_id));
        }
        for r in e.src.iter().chain(e.dst.iter()) {
            if !resolvable(r) {
                push(rules::TEMPORAL_EDGE, format!("edge endpoint {} in frame {} not found", r.node_id, r.frame_index));
            }
        }
        if !graph.tracks.contains_key(&e.track_id) {
            push(rules::TEMPORAL_EDGE, format!("edge references unknown track {}", e.track_id));
        }
    }

    for (id, track) in &graph.tracks {
        if *id != track.track_id {
            push(rules::TRACK, format!("track keyed {id} carries id {}", track.track_id));
        }
        let Some(last) = track.last_node() else {
            push(rules::TRACK, format!("track {id} has empty history"));
            continue;
        };
        if track.history.windows(2).any(|w| w[0].frame_index >= w[1].frame_index) {
            push(rules::TRACK, format!("track {id} history not strictly increasing"));
        }
        if last.frame_index >= first {
            match graph.node(last) {
                Some(node) => {
                    if node.obs_time != track.last_seen_time {
                        push(rules::TRACK, format!("track {id} last_seen {} differs from node obs {}", track.last_seen_time, node.obs_time));
                    }
                    if node.track_id != Some(*id) {
                        push(rules::TRACK, format!("node {} not labelled with track {id}", node.node_id));
                    }
                }
                None => push(rules::TRACK, format!("track {id} history node {} missing", last.node_id)),
            }
        }
    }
    out
}
