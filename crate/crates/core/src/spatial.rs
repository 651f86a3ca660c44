//! Relation candidate scoring against interaction zones and ambiguity resolution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoundingBox2D, NodeId, RelationCandidate, SpatialEdge};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SpatialWeights<T: Scalar> {
    pub w_iou: T,
    pub w_area: T,
    pub w_ctr: T,
}

impl<T: Scalar> Default for SpatialWeights<T> {
    fn default() -> Self {
        Self {
            w_iou: T::lit(1.0),
            w_area: T::lit(0.5),
            w_ctr: T::lit(0.5),
        }
    }
}

impl<T: Scalar> SpatialWeights<T> {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_iou, self.w_area, self.w_ctr];
        if ws.iter().any(|w| !(w.is_finite() && *w >= T::zero())) {
            return Err(Error::invalid("spatial weights must be finite and non-negative"));
        }
        if ws.iter().all(|w| *w == T::zero()) {
            return Err(Error::invalid("at least one spatial weight must be positive"));
        }
        Ok(())
    }
}

/// Geometric disagreement between the pair's union box `u` and the proposed zone `z`.
///
/// `w_iou (1 - IoU) + w_area |ln(A(u)/A(z))| + w_ctr |ctr(u) - ctr(z)| / diag(z)`
pub fn spatial_cost<T: Scalar>(
    pair_union: &BoundingBox2D<T>,
    zone: &BoundingBox2D<T>,
    w: &SpatialWeights<T>,
) -> Result<T> {
    let au = pair_union.area();
    let az = zone.area();
    if !(au > T::zero() && az > T::zero()) {
        return Err(Error::invalid("spatial cost needs boxes with positive area"));
    }
    let overlap = T::one() - pair_union.iou(zone);
    let scale = (au / az).ln().abs();
    let (ux, uy) = pair_union.center();
    let (zx, zy) = zone.center();
    let offset = (ux - zx).hypot(uy - zy) / zone.diagonal();
    Ok(w.w_iou * overlap + w.w_area * scale + w.w_ctr * offset)
}

/// Keeps, for every group of candidates that share a zone or an object, the
/// cheapest candidate, then admits the rest greedily in ascending cost order
/// as long as they conflict with nothing already kept.
///
/// Equal costs are broken by the lowest `(subject, object)` pair.
pub fn resolve_ambiguous<T: Scalar>(
    candidates: &[RelationCandidate<T>],
    node_boxes: &BTreeMap<NodeId, BoundingBox2D<T>>,
    w: &SpatialWeights<T>,
) -> Result<Vec<SpatialEdge<T>>> {
    let mut scored = Vec::with_capacity(candidates.len());
    for (idx, c) in candidates.iter().enumerate() {
        if c.subject == c.object {
            return Err(Error::invalid(format!("relation candidate on a single node {}", c.subject)));
        }
        let bj = node_boxes
            .get(&c.subject)
            .ok_or_else(|| Error::invalid(format!("candidate references unknown node {}", c.subject)))?;
        let bk = node_boxes
            .get(&c.object)
            .ok_or_else(|| Error::invalid(format!("candidate references unknown node {}", c.object)))?;
        let cost = spatial_cost(&bj.union(bk), &c.zone, w)?;
        scored.push((cost, idx));
    }
    scored.sort_by(|a, b| {
        let (ca, cb) = (&candidates[a.1], &candidates[b.1]);
        a.0.partial_cmp(&b.0)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((ca.subject, ca.object).cmp(&(cb.subject, cb.object)))
            .then(a.1.cmp(&b.1))
    });

    let conflicts = |a: &RelationCandidate<T>, b: &RelationCandidate<T>| {
        a.zone == b.zone
            || a.subject == b.subject
            || a.subject == b.object
            || a.object == b.subject
            || a.object == b.object
    };

    let mut kept: Vec<(T, usize)> = Vec::new();
    for (cost, idx) in scored {
        let c = &candidates[idx];
        if kept.iter().all(|&(_, k)| !conflicts(&candidates[k], c)) {
            kept.push((cost, idx));
        }
    }
    Ok(kept
        .into_iter()
        .map(|(cost, idx)| {
            let c = &candidates[idx];
            SpatialEdge {
                src: c.subject,
                dst: c.object,
                relation: c.relation.clone(),
                resolved_cost: cost,
            }
        })
        .collect())
}
