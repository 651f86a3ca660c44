//! Track-to-detection association and the track lifecycle.

use serde::{Deserialize, Serialize};

use crate::assignment::{solve_assignment, Matrix};
use crate::error::{Error, Result};
use crate::model::{
    AcceptedMatch, AssociationOutcome, FeatureVec, FrameGraph, NodeId, NodeRef, ObjectNode,
    SceneGraph4D, TemporalEdge, TemporalRelation, Track, TrackId, TrackStatus,
};
use crate::scalar::{add3, norm3, scale3, sub3, Point3, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TemporalWeights<T: Scalar> {
    pub w_pos: T,
    pub w_vis: T,
    pub delta_cls: T,
    /// Distance normalizer in meters.
    pub d_max: T,
    /// A pair is accepted when its cost is strictly below this.
    pub eta: T,
    /// Seconds a disappeared track stays eligible for re-matching.
    pub grace_period: T,
    /// EMA rate of the descriptor refresh.
    #[serde(default = "default_alpha")]
    pub descriptor_alpha: T,
    /// Extrapolate the track centroid with its last velocity.
    #[serde(default)]
    pub constant_velocity: bool,
}

fn default_alpha<T: Scalar>() -> T {
    T::lit(0.3)
}

impl<T: Scalar> Default for TemporalWeights<T> {
    fn default() -> Self {
        Self {
            w_pos: T::lit(0.4),
            w_vis: T::lit(0.4),
            delta_cls: T::lit(0.2),
            d_max: T::lit(1.0),
            eta: T::lit(0.5),
            grace_period: T::lit(10.0),
            descriptor_alpha: default_alpha(),
            constant_velocity: false,
        }
    }
}

impl<T: Scalar> TemporalWeights<T> {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: T| v.is_finite() && v >= T::zero();
        if !(nonneg(self.w_pos) && nonneg(self.w_vis) && nonneg(self.delta_cls)) {
            return Err(Error::invalid("w_pos, w_vis, delta_cls must be finite and non-negative"));
        }
        if !(self.d_max.is_finite() && self.d_max > T::zero()) {
            return Err(Error::invalid("d_max must be positive"));
        }
        if !(self.eta.is_finite() && self.eta > T::zero()) {
            return Err(Error::invalid("eta must be positive"));
        }
        if !nonneg(self.grace_period) {
            return Err(Error::invalid("grace_period must be non-negative"));
        }
        if !(self.descriptor_alpha >= T::zero() && self.descriptor_alpha <= T::one()) {
            return Err(Error::invalid("descriptor_alpha must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Upper bound of [`temporal_cost`] under these weights.
    pub fn max_cost(&self) -> T {
        self.w_pos + T::lit(2.0) * self.w_vis + self.delta_cls
    }
}

impl<T: Scalar> Track<T> {
    /// Centroid the track is expected at when observed at `time`.
    pub fn predicted_centroid(&self, time: T, constant_velocity: bool) -> Point3<T> {
        match self.velocity {
            Some(v) if constant_velocity => {
                let dt = time - self.last_seen_time;
                add3(&self.centroid, &scale3(&v, dt.max(T::zero())))
            }
            _ => self.centroid,
        }
    }

    /// Whether the track takes part in association at `now`.
    pub fn is_eligible(&self, now: T, grace_period: T) -> bool {
        match self.status {
            TrackStatus::Active => true,
            TrackStatus::Disappeared => now - self.last_seen_time <= grace_period,
            TrackStatus::Retired => false,
        }
    }
}

fn cos_or_err<T: Scalar>(a: &FeatureVec<T>, b: &FeatureVec<T>) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!("feature dimension mismatch: {} vs {}", a.dim(), b.dim())));
    }
    crate::scalar::cosine(a.as_slice(), b.as_slice())
        .ok_or_else(|| Error::invalid("cosine of zero-norm feature vector"))
}

/// Association cost between a track and a detection:
/// `w_pos min(|c_track - c| / d_max, 1) + w_vis (1 - cos(f_track, f_img)) + delta_cls [labels differ]`.
pub fn temporal_cost<T: Scalar>(track: &Track<T>, node: &ObjectNode<T>, w: &TemporalWeights<T>) -> Result<T> {
    if !(w.d_max > T::zero()) {
        return Err(Error::invalid("d_max must be positive"));
    }
    let predicted = track.predicted_centroid(node.obs_time, w.constant_velocity);
    let dist = norm3(&sub3(&predicted, &node.centroid));
    let pos = (dist / w.d_max).min(T::one());
    let vis = T::one() - cos_or_err(&track.descriptor, &node.f_img)?;
    let cls = if track.label != node.label { w.delta_cls } else { T::zero() };
    // cosine may overshoot 1 by an ulp
    Ok(w.w_pos * pos + w.w_vis * vis.max(T::zero()) + cls)
}

/// Cost matrix with the track and node ids behind its rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T: Scalar> {
    pub track_ids: Vec<TrackId>,
    pub node_ids: Vec<NodeId>,
    pub costs: Matrix<T>,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.costs.get(row, col)
    }
}

/// Tracks taking part in association at `now`, in id order.
pub fn eligible_tracks<'a, T: Scalar>(
    tracks: impl IntoIterator<Item = &'a Track<T>>,
    now: T,
    w: &TemporalWeights<T>,
) -> Vec<&'a Track<T>> {
    let mut out: Vec<_> = tracks
        .into_iter()
        .filter(|t| t.is_eligible(now, w.grace_period))
        .collect();
    out.sort_by_key(|t| t.track_id);
    out
}

/// Builds the association matrix. Ineligible tracks (retired, or disappeared
/// longer than the grace period at `now`) are left out.
pub fn build_cost_matrix<T: Scalar>(
    tracks: &[&Track<T>],
    nodes: &[ObjectNode<T>],
    w: &TemporalWeights<T>,
    now: T,
) -> Result<CostMatrix<T>> {
    let rows: Vec<&Track<T>> = tracks
        .iter()
        .copied()
        .filter(|t| t.is_eligible(now, w.grace_period))
        .collect();
    let mut data = Vec::with_capacity(rows.len() * nodes.len());
    for t in &rows {
        for n in nodes {
            data.push(temporal_cost(t, n, w)?);
        }
    }
    Ok(CostMatrix {
        track_ids: rows.iter().map(|t| t.track_id).collect(),
        node_ids: nodes.iter().map(|n| n.node_id).collect(),
        costs: Matrix::new(rows.len(), nodes.len(), data)?,
    })
}

/// Optimal assignment pairs `(row, col)` of a cost matrix.
pub fn solve_cost_matrix<T: Scalar>(c: &CostMatrix<T>) -> Result<Vec<(usize, usize)>> {
    solve_assignment(&c.costs)
}

/// Matches detections to eligible tracks; pairs at or above `eta` are rejected.
pub fn associate<T: Scalar>(
    tracks: &[&Track<T>],
    nodes: &[ObjectNode<T>],
    w: &TemporalWeights<T>,
    now: T,
) -> Result<AssociationOutcome<T>> {
    let matrix = build_cost_matrix(tracks, nodes, w, now)?;
    let pairs = solve_cost_matrix(&matrix)?;
    let mut node_taken = vec![false; matrix.node_ids.len()];
    let mut track_taken = vec![false; matrix.track_ids.len()];
    let mut accepted = Vec::new();
    for (r, c) in pairs {
        let cost = matrix.get(r, c);
        if cost < w.eta {
            node_taken[c] = true;
            track_taken[r] = true;
            accepted.push(AcceptedMatch {
                track_id: matrix.track_ids[r],
                node_id: matrix.node_ids[c],
                cost,
            });
        }
    }
    Ok(AssociationOutcome {
        accepted,
        unmatched_nodes: matrix
            .node_ids
            .iter()
            .zip(&node_taken)
            .filter(|(_, t)| !**t)
            .map(|(id, _)| *id)
            .collect(),
        disappeared_tracks: matrix
            .track_ids
            .iter()
            .zip(&track_taken)
            .filter(|(_, t)| !**t)
            .map(|(id, _)| *id)
            .collect(),
    })
}

fn refresh_descriptor<T: Scalar>(old: &FeatureVec<T>, new: &FeatureVec<T>, alpha: T) -> FeatureVec<T> {
    let blended: Vec<T> = old
        .as_slice()
        .iter()
        .zip(new.as_slice())
        .map(|(&a, &b)| (T::one() - alpha) * a + alpha * b)
        .collect();
    FeatureVec::new(blended)
        .ok()
        .and_then(|f| f.normalized())
        .or_else(|| new.normalized())
        .unwrap_or_else(|| new.clone())
}

/// Appends `frame` to the graph and applies an association outcome to it:
/// accepted pairs extend their track, unmatched nodes start tracks, newly
/// disappeared tracks get a single `disappeared` edge, and disappeared tracks
/// past the grace period retire.
pub fn apply_outcome<T: Scalar>(
    graph: &mut SceneGraph4D<T>,
    outcome: &AssociationOutcome<T>,
    mut frame: FrameGraph<T>,
    w: &TemporalWeights<T>,
) -> Result<()> {
    let frame_index = frame.frame_index;
    let now = frame.obs_time();
    let node_pos = |frame: &FrameGraph<T>, id: NodeId| frame.nodes.iter().position(|n| n.node_id == id);

    for m in &outcome.accepted {
        let track = graph
            .tracks
            .get(&m.track_id)
            .ok_or_else(|| Error::NotFound(format!("track {}", m.track_id)))?;
        if track.status == TrackStatus::Retired {
            return Err(Error::invalid(format!("track {} is retired", m.track_id)));
        }
        node_pos(&frame, m.node_id).ok_or_else(|| Error::NotFound(format!("node {}", m.node_id)))?;
    }
    for id in &outcome.unmatched_nodes {
        node_pos(&frame, *id).ok_or_else(|| Error::NotFound(format!("node {id}")))?;
    }
    for id in &outcome.disappeared_tracks {
        if !graph.tracks.contains_key(id) {
            return Err(Error::NotFound(format!("track {id}")));
        }
    }

    let mut edges = Vec::new();
    for m in &outcome.accepted {
        let pos = node_pos(&frame, m.node_id).expect("checked above");
        let node = &mut frame.nodes[pos];
        node.track_id = Some(m.track_id);
        let track = graph.tracks.get_mut(&m.track_id).expect("checked above");
        let prev = track.last_node();
        let dt = node.obs_time - track.last_seen_time;
        track.velocity = (dt > T::zero()).then(|| scale3(&sub3(&node.centroid, &track.centroid), T::one() / dt));
        track.centroid = node.centroid;
        track.descriptor = refresh_descriptor(&track.descriptor, &node.f_img, w.descriptor_alpha);
        track.label = node.label.clone();
        track.last_seen_time = node.obs_time;
        track.status = TrackStatus::Active;
        track.history.push(node.node_ref());
        edges.push(TemporalEdge {
            src: prev,
            dst: Some(node.node_ref()),
            relation: TemporalRelation::SameInstance,
            track_id: m.track_id,
            frame_index,
        });
    }

    for id in &outcome.unmatched_nodes {
        let pos = node_pos(&frame, *id).expect("checked above");
        let node = &mut frame.nodes[pos];
        let track_id = TrackId(graph.next_track_id);
        graph.next_track_id += 1;
        node.track_id = Some(track_id);
        let descriptor = node.f_img.normalized().unwrap_or_else(|| node.f_img.clone());
        graph.tracks.insert(
            track_id,
            Track {
                track_id,
                label: node.label.clone(),
                centroid: node.centroid,
                velocity: None,
                descriptor,
                last_seen_time: node.obs_time,
                status: TrackStatus::Active,
                history: vec![node.node_ref()],
            },
        );
        edges.push(TemporalEdge {
            src: None,
            dst: Some(node.node_ref()),
            relation: TemporalRelation::Appeared,
            track_id,
            frame_index,
        });
    }

    for id in &outcome.disappeared_tracks {
        let track = graph.tracks.get_mut(id).expect("checked above");
        if track.status == TrackStatus::Active {
            track.status = TrackStatus::Disappeared;
            edges.push(TemporalEdge {
                src: track.last_node(),
                dst: None,
                relation: TemporalRelation::Disappeared,
                track_id: *id,
                frame_index,
            });
        }
    }

    for track in graph.tracks.values_mut() {
        if track.status == TrackStatus::Disappeared && now - track.last_seen_time > w.grace_period {
            track.status = TrackStatus::Retired;
        }
    }

    graph.frames.push(frame);
    graph.temporal_edges.extend(edges);
    Ok(())
}

/// Node reference of the newest observation of `track`.
pub fn newest_node_of<T: Scalar>(graph: &SceneGraph4D<T>, track: TrackId) -> Option<NodeRef> {
    graph.track(track).and_then(Track::last_node)
}
