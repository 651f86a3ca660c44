//! Graph accuracy against simulator ground truth.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{NodeRef, SceneGraph4D, TemporalRelation};
use crate::scalar::Scalar;
use crate::sim::GroundTruthLog;

pub const METRICS_SCHEMA: &str = "stovsg-metrics/1";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rate {
    pub correct: usize,
    pub total: usize,
    /// `correct / total`, absent when nothing was counted.
    pub rate: Option<f64>,
}

impl Rate {
    pub fn new(correct: usize, total: usize) -> Self {
        Self {
            correct,
            total,
            rate: (total > 0).then(|| correct as f64 / total as f64),
        }
    }

    pub fn add(&mut self, correct: bool) {
        *self = Self::new(self.correct + usize::from(correct), self.total + 1);
    }

    pub fn merge(&mut self, other: &Rate) {
        *self = Self::new(self.correct + other.correct, self.total + other.total);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub schema: String,
    pub a_node: Rate,
    pub a_spa: Rate,
    pub a_tmp: Rate,
    pub grounding: Rate,
    pub per_family: BTreeMap<String, Rate>,
}

impl Default for MetricsReport {
    fn default() -> Self {
        Self {
            schema: METRICS_SCHEMA.to_string(),
            a_node: Rate::default(),
            a_spa: Rate::default(),
            a_tmp: Rate::default(),
            grounding: Rate::default(),
            per_family: BTreeMap::new(),
        }
    }
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metrics serialize");
        s.push('\n');
        s
    }
}

/// True object id behind a graph node; nodes are stored in detection order.
pub fn true_id_of<T: Scalar>(graph: &SceneGraph4D<T>, truth: &GroundTruthLog, r: NodeRef) -> Option<u64> {
    let frame = graph.frame(r.frame_index)?;
    let pos = frame.nodes.iter().position(|n| n.node_id == r.node_id)?;
    truth.true_id(r.frame_index, pos)
}

/// Node, spatial-edge and same-instance-edge accuracy with centroid tolerance `tol_c` meters.
pub fn score_graph<T: Scalar>(graph: &SceneGraph4D<T>, truth: &GroundTruthLog, tol_c: f64) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    for frame in &graph.frames {
        let ft = truth
            .frame(frame.frame_index)
            .ok_or_else(|| Error::invalid(format!("truth has no frame {}", frame.frame_index)))?;
        if ft.detections.len() != frame.nodes.len() {
            return Err(Error::invalid(format!(
                "frame {}: graph has {} nodes, truth has {} detections",
                frame.frame_index,
                frame.nodes.len(),
                ft.detections.len()
            )));
        }
        if (ft.capture_time - frame.latency_tag.capture_time.as_f64()).abs() > 1e-9 {
            return Err(Error::invalid(format!("frame {}: capture times differ", frame.frame_index)));
        }
        let mut id_of = BTreeMap::new();
        for (node, dt) in frame.nodes.iter().zip(&ft.detections) {
            id_of.insert(node.node_id, dt.true_id);
            let dist = (0..3)
                .map(|k| (node.centroid[k].as_f64() - dt.centroid[k]).powi(2))
                .sum::<f64>()
                .sqrt();
            report.a_node.add(node.label == dt.label && dist <= tol_c);
        }
        for e in &frame.spatial_edges {
            let pair = (id_of.get(&e.src).copied(), id_of.get(&e.dst).copied());
            let ok = matches!(pair, (Some(s), Some(o)) if ft.relations.iter().any(|r| r.subject == s && r.object == o));
            report.a_spa.add(ok);
        }
    }
    for e in graph.temporal_edges_of(TemporalRelation::SameInstance) {
        let (Some(src), Some(dst)) = (e.src, e.dst) else { continue };
        let (a, b) = (true_id_of(graph, truth, src), true_id_of(graph, truth, dst));
        report.a_tmp.add(a.is_some() && a == b);
    }
    Ok(report)
}
