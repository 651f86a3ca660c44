//! Incremental graph construction and time-indexed retrieval.
//!
//! A frame is ingested in two phases: everything fallible (lifting, relation
//! resolution, association) runs against an immutable view of the graph, and
//! only then is the frame committed. A rejected frame therefore leaves the graph
//! untouched.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::{Error, Result};
use crate::geometry::{centroid_and_size, lift_mask, subsample_uniform, DepthImage};
use crate::model::{
    normalize_label, AssociationOutcome, BoundingBox2D, CameraModel, FeatureVec, FrameGraph,
    LatencyTag, NodeId, ObjectNode, PixelMask, RelationCandidate, SceneGraph4D, TemporalRelation,
    TrackId,
};
use crate::scalar::Scalar;
use crate::spatial::resolve_ambiguous;
use crate::temporal::{apply_outcome, associate, eligible_tracks};

/// One perception output for a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Detection<T: Scalar> {
    #[serde(rename = "box")]
    pub bbox: BoundingBox2D<T>,
    pub mask: PixelMask,
    pub label: String,
    pub f_img: FeatureVec<T>,
    pub f_txt: FeatureVec<T>,
}

/// Relation proposal referring to detections by their index in the frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CandidateInput<T: Scalar> {
    pub subject: usize,
    pub object: usize,
    pub relation: String,
    pub zone: BoundingBox2D<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameInput<T: Scalar> {
    pub latency_tag: LatencyTag<T>,
    pub detections: Vec<Detection<T>>,
    pub relation_candidates: Vec<CandidateInput<T>>,
    pub depth: DepthImage<T>,
    pub camera: CameraModel<T>,
}

/// What a successful ingest did.
#[derive(Debug, Clone, PartialEq)]
pub struct IngestReport<T: Scalar> {
    pub frame_index: usize,
    pub node_ids: Vec<NodeId>,
    /// Tracks that were eligible for association, in id order.
    pub eligible_tracks: Vec<TrackId>,
    pub outcome: AssociationOutcome<T>,
}

fn check_box_in_image<T: Scalar>(b: &BoundingBox2D<T>, width: u32, height: u32) -> bool {
    let w = T::from_u32(width).unwrap_or_else(T::nan);
    let h = T::from_u32(height).unwrap_or_else(T::nan);
    b.x_min >= T::zero() && b.y_min >= T::zero() && b.x_max <= w && b.y_max <= h
}

/// Appends a frame: lifts detections, resolves spatial edges, associates with
/// tracks, and records temporal edges.
pub fn ingest_frame<T: Scalar>(
    graph: &mut SceneGraph4D<T>,
    input: &FrameInput<T>,
    cfg: &EngineConfig<T>,
) -> Result<IngestReport<T>> {
    let tag = input.latency_tag;
    if !tag.capture_time.is_finite() || !tag.transmission_latency.is_finite() {
        return Err(Error::invalid("latency tag must be finite"));
    }
    if !(tag.transmission_latency >= T::zero()) {
        return Err(Error::invalid(format!("negative transmission latency {}", tag.transmission_latency)));
    }
    if let Some(last) = graph.newest_frame() {
        if !(tag.capture_time > last.latency_tag.capture_time) {
            return Err(Error::invalid(format!(
                "capture time {} does not exceed previous {}",
                tag.capture_time, last.latency_tag.capture_time
            )));
        }
    }
    input.camera.validate()?;

    let frame_index = graph.first_frame_index() + graph.frames.len();
    let obs_time = tag.obs_time();
    let (width, height) = (input.depth.width(), input.depth.height());
    let mut dim = graph.feature_dim;
    let mut nodes = Vec::with_capacity(input.detections.len());
    for (i, det) in input.detections.iter().enumerate() {
        let reject = |why: String| Error::invalid(format!("detection {i}: {why}"));
        if !det.bbox.is_valid() || !check_box_in_image(&det.bbox, width, height) {
            return Err(reject(format!("box {:?} invalid or outside {width}x{height}", det.bbox)));
        }
        if det.mask.is_empty() {
            return Err(reject("empty mask".into()));
        }
        for f in [&det.f_img, &det.f_txt] {
            if !f.is_finite() {
                return Err(reject("non-finite feature".into()));
            }
            match dim {
                Some(d) if d != f.dim() => {
                    return Err(reject(format!("feature dimension {} differs from stream dimension {d}", f.dim())))
                }
                None => dim = Some(f.dim()),
                _ => {}
            }
        }
        let points = lift_mask(&input.depth, &det.mask, &input.camera).map_err(|e| reject(e.to_string()))?;
        if points.is_empty() {
            return Err(reject("no valid depth under mask".into()));
        }
        let points = subsample_uniform(points, cfg.max_points);
        let (centroid, size) = centroid_and_size(&points)?;
        nodes.push(ObjectNode {
            node_id: NodeId(graph.next_node_id + i as u64),
            frame_index,
            track_id: None,
            bbox: det.bbox,
            mask: det.mask.clone(),
            f_img: det.f_img.clone(),
            f_txt: det.f_txt.clone(),
            label: normalize_label(&det.label),
            centroid,
            size,
            points,
            obs_time,
        });
    }

    let mut candidates = Vec::with_capacity(input.relation_candidates.len());
    for c in &input.relation_candidates {
        let (Some(s), Some(o)) = (nodes.get(c.subject), nodes.get(c.object)) else {
            return Err(Error::invalid(format!(
                "relation candidate references detection {} / {} of {}",
                c.subject,
                c.object,
                nodes.len()
            )));
        };
        if !c.zone.is_valid() {
            return Err(Error::invalid("relation candidate zone is not a valid box"));
        }
        candidates.push(RelationCandidate {
            subject: s.node_id,
            object: o.node_id,
            relation: normalize_label(&c.relation),
            zone: c.zone,
        });
    }
    let node_boxes: BTreeMap<NodeId, BoundingBox2D<T>> = nodes.iter().map(|n| (n.node_id, n.bbox)).collect();
    let spatial_edges = resolve_ambiguous(&candidates, &node_boxes, &cfg.spatial)?;

    let eligible = eligible_tracks(graph.tracks.values(), obs_time, &cfg.temporal);
    let eligible_ids: Vec<TrackId> = eligible.iter().map(|t| t.track_id).collect();
    let outcome = associate(&eligible, &nodes, &cfg.temporal, obs_time)?;

    let node_ids: Vec<NodeId> = nodes.iter().map(|n| n.node_id).collect();
    let frame = FrameGraph {
        frame_index,
        latency_tag: tag,
        image_width: width,
        image_height: height,
        nodes,
        spatial_edges,
    };

    // commit
    let node_count = node_ids.len() as u64;
    apply_outcome(graph, &outcome, frame, &cfg.temporal)?;
    graph.next_node_id += node_count;
    graph.feature_dim = dim;
    graph.camera = Some(input.camera.clone());
    if let Some(cap) = cfg.max_frames {
        evict_to(graph, cap.max(1));
    }

    Ok(IngestReport {
        frame_index,
        node_ids,
        eligible_tracks: eligible_ids,
        outcome,
    })
}

/// Drops the oldest frames beyond `cap`; tracks keep their summaries.
fn evict_to<T: Scalar>(graph: &mut SceneGraph4D<T>, cap: usize) {
    if graph.frames.len() <= cap {
        return;
    }
    let drop = graph.frames.len() - cap;
    graph.frames.drain(..drop);
    graph.evicted_frames += drop;
    let first = graph.first_frame_index();
    graph.temporal_edges.retain(|e| {
        e.src.is_none_or(|r| r.frame_index >= first) && e.dst.is_none_or(|r| r.frame_index >= first)
    });
}

/// Latest frame the operator could have seen at time `tau`: the newest frame
/// whose operator-visible time `capture + latency` is `<= tau`.
pub fn frame_at_operator_time<T: Scalar>(graph: &SceneGraph4D<T>, tau: T) -> Option<&FrameGraph<T>> {
    graph.frames.iter().rev().find(|f| f.obs_time() <= tau)
}

/// Every retained node of a track, in frame order.
pub fn track_history<T: Scalar>(graph: &SceneGraph4D<T>, track_id: TrackId) -> Result<Vec<&ObjectNode<T>>> {
    let track = graph
        .track(track_id)
        .ok_or_else(|| Error::NotFound(format!("track {track_id}")))?;
    Ok(track.history.iter().filter_map(|r| graph.node(*r)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleKind {
    Appeared,
    Disappeared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LifecycleEvent<T: Scalar> {
    /// Capture time of the frame in which the event was recorded.
    pub time: T,
    pub frame_index: usize,
    pub track_id: TrackId,
    pub event: LifecycleKind,
}

/// Appear/disappear events whose frame capture time lies in `[t0, t1]`.
pub fn lifecycle_events<T: Scalar>(graph: &SceneGraph4D<T>, t0: T, t1: T) -> Vec<LifecycleEvent<T>> {
    let mut out: Vec<LifecycleEvent<T>> = graph
        .temporal_edges
        .iter()
        .filter_map(|e| {
            let event = match e.relation {
                TemporalRelation::Appeared => LifecycleKind::Appeared,
                TemporalRelation::Disappeared => LifecycleKind::Disappeared,
                TemporalRelation::SameInstance => return None,
            };
            let time = graph.frame(e.frame_index)?.latency_tag.capture_time;
            (time >= t0 && time <= t1).then_some(LifecycleEvent {
                time,
                frame_index: e.frame_index,
                track_id: e.track_id,
                event,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        a.frame_index
            .cmp(&b.frame_index)
            .then(a.track_id.cmp(&b.track_id))
    });
    out
}

/// Single-writer, multi-reader handle. Readers get immutable snapshots that
/// never observe a partially ingested frame.
#[derive(Debug, Default)]
pub struct GraphStore<T: Scalar> {
    current: RwLock<Arc<SceneGraph4D<T>>>,
}

impl<T: Scalar> GraphStore<T> {
    pub fn new(graph: SceneGraph4D<T>) -> Self {
        Self {
            current: RwLock::new(Arc::new(graph)),
        }
    }

    pub fn snapshot(&self) -> Arc<SceneGraph4D<T>> {
        self.current.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn ingest(&self, input: &FrameInput<T>, cfg: &EngineConfig<T>) -> Result<IngestReport<T>> {
        let mut guard = self.current.write().unwrap_or_else(|e| e.into_inner());
        // copy-on-write: outstanding snapshots keep the old graph
        ingest_frame(Arc::make_mut(&mut guard), input, cfg)
    }

    pub fn into_inner(self) -> SceneGraph4D<T> {
        let arc = self.current.into_inner().unwrap_or_else(|e| e.into_inner());
        Arc::try_unwrap(arc).unwrap_or_else(|a| (*a).clone())
    }
}
