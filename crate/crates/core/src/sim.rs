//! Deterministic synthetic scenes, a latency channel, and the adversarial
//! scenario families used by the latency-robustness harness.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_point, world_to_camera, DepthImage};
use crate::graph_store::{CandidateInput, Detection, FrameInput};
use crate::model::{BoundingBox2D, CameraModel, Command, FeatureVec, LatencyTag, PixelMask};
use crate::scalar::Point3;

pub const SCENARIO_SCHEMA: &str = "stovsg-scenario/1";
pub const TRUTH_SCHEMA: &str = "stovsg-truth/1";

/// Masks smaller than this after occlusion are not reported.
const MIN_MASK_PIXELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub time: f64,
    pub position: Point3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimObject {
    pub true_id: u64,
    pub label: String,
    pub size: Point3<f64>,
    pub text_archetype: Vec<f64>,
    pub image_archetype: Vec<f64>,
    /// Piecewise-linear trajectory; two waypoints with the same time form a jump.
    pub waypoints: Vec<Waypoint>,
    /// Half-open `[start, end)` intervals in seconds.
    pub visible: Vec<[f64; 2]>,
}

impl SimObject {
    pub fn position_at(&self, t: f64) -> Point3<f64> {
        let w = &self.waypoints;
        let after = w.partition_point(|p| p.time <= t);
        if after == 0 {
            return w[0].position;
        }
        if after == w.len() {
            return w[after - 1].position;
        }
        let (a, b) = (&w[after - 1], &w[after]);
        let s = (t - a.time) / (b.time - a.time);
        [0, 1, 2].map(|k| a.position[k] + s * (b.position[k] - a.position[k]))
    }

    pub fn is_visible(&self, t: f64) -> bool {
        self.visible.iter().any(|&[a, b]| t >= a && t < b)
    }
}

/// Relation between two objects, proposed whenever both are detected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimRelation {
    pub subject: u64,
    pub object: u64,
    pub relation: String,
    /// `[start, end)` during which the relation holds; always when absent.
    #[serde(default)]
    pub active: Option<[f64; 2]>,
}

impl SimRelation {
    pub fn holds_at(&self, t: f64) -> bool {
        self.active.is_none_or(|[a, b]| t >= a && t < b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    /// Per-axis standard deviation of the observed position (meters).
    pub centroid_sigma: f64,
    /// Per-component standard deviation added before renormalizing features.
    pub feature_sigma: f64,
    pub dropout: f64,
    pub label_flip: f64,
}

impl NoiseSpec {
    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }
}

/// Delay as a function of send time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LatencyProfile {
    Constant { delay: f64 },
    /// Linear interpolation between `[time, delay]` points, clamped at the ends.
    Piecewise { points: Vec<[f64; 2]> },
}

impl LatencyProfile {
    pub fn constant(delay: f64) -> Self {
        Self::Constant { delay }
    }

    pub fn delay_at(&self, t: f64) -> f64 {
        match self {
            Self::Constant { delay } => *delay,
            Self::Piecewise { points } => {
                let after = points.partition_point(|p| p[0] <= t);
                if after == 0 {
                    return points[0][1];
                }
                if after == points.len() {
                    return points[after - 1][1];
                }
                let (a, b) = (points[after - 1], points[after]);
                a[1] + (t - a[0]) / (b[0] - a[0]) * (b[1] - a[1])
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Constant { delay } => {
                if !(delay.is_finite() && *delay >= 0.0) {
                    return Err(Error::invalid(format!("delay {delay} must be finite and non-negative")));
                }
            }
            Self::Piecewise { points } => {
                if points.is_empty() {
                    return Err(Error::invalid("piecewise latency profile needs points"));
                }
                if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite() && p[1] >= 0.0)) {
                    return Err(Error::invalid("latency profile points must be finite with non-negative delay"));
                }
                if points.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                    return Err(Error::invalid("latency profile times must increase"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimCommand {
    pub text: String,
    /// Ground-truth object the operator means.
    pub target: u64,
    pub issue_time: f64,
    /// Defaults to the target's text archetype.
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioFamily {
    OcclusionAfterCommand,
    TargetMoved,
    SameClassDistractor,
    MovedReference,
}

impl ScenarioFamily {
    pub const ALL: [ScenarioFamily; 4] = [
        Self::OcclusionAfterCommand,
        Self::TargetMoved,
        Self::SameClassDistractor,
        Self::MovedReference,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::OcclusionAfterCommand => "occlusion_after_command",
            Self::TargetMoved => "target_moved",
            Self::SameClassDistractor => "same_class_distractor",
            Self::MovedReference => "moved_reference",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| Error::invalid(format!("unknown scenario family {name:?}")))
    }
}

impl std::fmt::Display for ScenarioFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub schema: String,
    #[serde(default)]
    pub family: Option<ScenarioFamily>,
    pub seed: u64,
    pub duration: f64,
    pub frame_rate: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub camera: CameraModel<f64>,
    pub feature_dim: usize,
    pub objects: Vec<SimObject>,
    #[serde(default)]
    pub relations: Vec<SimRelation>,
    #[serde(default)]
    pub noise: NoiseSpec,
    /// Robot-to-operator delay of each frame.
    pub uplink: LatencyProfile,
    /// Operator-to-robot delay of each command.
    pub downlink: LatencyProfile,
    #[serde(default)]
    pub commands: Vec<SimCommand>,
    /// Deliver commands in send order even when the profile would reorder them.
    #[serde(default)]
    pub fifo: bool,
}

fn check_unit_range(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("{name} = {p} is not a probability")));
    }
    Ok(())
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCENARIO_SCHEMA {
            return Err(Error::Schema {
                expected: SCENARIO_SCHEMA.into(),
                found: self.schema.clone(),
            });
        }
        if !(self.frame_rate.is_finite() && self.frame_rate > 0.0) {
            return Err(Error::invalid("frame_rate must be positive"));
        }
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::invalid("duration must be non-negative"));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(Error::invalid("feature_dim must be positive"));
        }
        self.camera.validate()?;
        let n = &self.noise;
        if !(n.centroid_sigma >= 0.0 && n.feature_sigma >= 0.0) {
            return Err(Error::invalid("noise standard deviations must be non-negative"));
        }
        check_unit_range("dropout", n.dropout)?;
        check_unit_range("label_flip", n.label_flip)?;
        self.uplink.validate()?;
        self.downlink.validate()?;

        let mut ids = BTreeSet::new();
        for o in &self.objects {
            let ctx = |m: &str| Error::invalid(format!("object {}: {m}", o.true_id));
            if !ids.insert(o.true_id) {
                return Err(ctx("duplicate true_id"));
            }
            if o.label.trim().is_empty() {
                return Err(ctx("empty label"));
            }
            if o.size.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(ctx("size must be positive"));
            }
            for a in [&o.text_archetype, &o.image_archetype] {
                if a.len() != self.feature_dim {
                    return Err(ctx("archetype dimension differs from feature_dim"));
                }
                if a.iter().any(|v| !v.is_finite()) || a.iter().all(|v| *v == 0.0) {
                    return Err(ctx("archetype must be finite and non-zero"));
                }
            }
            if o.waypoints.is_empty() {
                return Err(ctx("needs at least one waypoint"));
            }
            if o.waypoints.iter().any(|w| !w.time.is_finite() || w.position.iter().any(|p| !p.is_finite())) {
                return Err(ctx("waypoints must be finite"));
            }
            if o.waypoints.windows(2).any(|w| w[1].time < w[0].time) {
                return Err(ctx("waypoint times must not decrease"));
            }
            for &[a, b] in &o.visible {
                if !(a >= 0.0 && a < b && b <= self.duration) {
                    return Err(ctx(&format!("visibility [{a}, {b}) not within [0, {}]", self.duration)));
                }
            }
        }
        for r in &self.relations {
            if !ids.contains(&r.subject) || !ids.contains(&r.object) || r.subject == r.object {
                return Err(Error::invalid(format!(
                    "relation {} {} {} references unknown or identical objects",
                    r.subject, r.relation, r.object
                )));
            }
        }
        for c in &self.commands {
            if !ids.contains(&c.target) {
                return Err(Error::invalid(format!("command {:?} targets unknown object {}", c.text, c.target)));
            }
            if !(c.issue_time.is_finite() && c.issue_time >= 0.0) {
                return Err(Error::invalid("command issue_time must be non-negative"));
            }
            if let Some(e) = &c.embedding {
                if e.len() != self.feature_dim {
                    return Err(Error::invalid("command embedding dimension differs from feature_dim"));
                }
            }
        }
        Ok(())
    }

    pub fn object(&self, true_id: u64) -> Option<&SimObject> {
        self.objects.iter().find(|o| o.true_id == true_id)
    }

    pub fn frame_period(&self) -> f64 {
        1.0 / self.frame_rate
    }

    /// Capture times `k / frame_rate` before `duration`.
    pub fn frame_times(&self) -> Vec<f64> {
        (0..)
            .map(|k| k as f64 / self.frame_rate)
            .take_while(|&t| t < self.duration)
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }
}

// ---------------------------------------------------------------------------
// Ground truth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionTruth {
    pub true_id: u64,
    pub label: String,
    pub centroid: Point3<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationTruth {
    pub subject: u64,
    pub object: u64,
    pub relation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameTruth {
    pub frame_index: usize,
    pub capture_time: f64,
    /// Parallel to the frame's detections.
    pub detections: Vec<DetectionTruth>,
    pub relations: Vec<RelationTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandTruth {
    pub text: String,
    pub issue_time: f64,
    pub delivery_time: f64,
    pub intended_id: u64,
    #[serde(default)]
    pub family: Option<ScenarioFamily>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthLog {
    pub schema: String,
    pub frames: Vec<FrameTruth>,
    pub commands: Vec<CommandTruth>,
}

impl Default for GroundTruthLog {
    fn default() -> Self {
        Self {
            schema: TRUTH_SCHEMA.to_string(),
            frames: Vec::new(),
            commands: Vec::new(),
        }
    }
}

impl GroundTruthLog {
    pub fn frame(&self, frame_index: usize) -> Option<&FrameTruth> {
        let i = frame_index.checked_sub(1)?;
        self.frames.get(i).filter(|f| f.frame_index == frame_index)
    }

    /// True id behind detection `position` of frame `frame_index`.
    pub fn true_id(&self, frame_index: usize, position: usize) -> Option<u64> {
        self.frame(frame_index)?.detections.get(position).map(|d| d.true_id)
    }
}

// ---------------------------------------------------------------------------
// Stream generation

#[derive(Debug, Clone, PartialEq)]
pub struct SimStream {
    pub frames: Vec<FrameInput<f64>>,
    pub commands: Vec<Command<f64>>,
    pub truth: GroundTruthLog,
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter().map(|x| x / n).collect()
    } else {
        v.to_vec()
    }
}

fn noisy_feature(arch: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Result<FeatureVec<f64>> {
    let base = normalize(arch);
    let values = if sigma > 0.0 {
        let dist = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
        let v: Vec<f64> = base.iter().map(|x| x + dist.sample(rng)).collect();
        normalize(&v)
    } else {
        base
    };
    FeatureVec::new(values)
}

struct Rendered {
    object: usize,
    true_position: Point3<f64>,
    depth: f64,
    bbox: BoundingBox2D<f64>,
    pixels: (u32, u32, u32, u32),
}

/// Projects the object's axis-aligned box and clips it to the image.
fn render_box(
    position: &Point3<f64>,
    size: &Point3<f64>,
    camera: &CameraModel<f64>,
    width: u32,
    height: u32,
) -> Option<(BoundingBox2D<f64>, (u32, u32, u32, u32))> {
    let (mut u_lo, mut v_lo, mut u_hi, mut v_hi) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for corner in 0..8 {
        let offset = [0, 1, 2].map(|k| if corner >> k & 1 == 1 { size[k] / 2.0 } else { -size[k] / 2.0 });
        let p = [0, 1, 2].map(|k| position[k] + offset[k]);
        let (u, v) = project_point(&p, camera)?;
        u_lo = u_lo.min(u);
        v_lo = v_lo.min(v);
        u_hi = u_hi.max(u);
        v_hi = v_hi.max(v);
    }
    let (w, h) = (width as f64, height as f64);
    let (u_lo, v_lo, u_hi, v_hi) = (u_lo.max(0.0), v_lo.max(0.0), u_hi.min(w), v_hi.min(h));
    let (pu0, pv0) = (u_lo.ceil(), v_lo.ceil());
    let (pu1, pv1) = (u_hi.floor().min(w - 1.0), v_hi.floor().min(h - 1.0));
    if !(pu0 <= pu1 && pv0 <= pv1) {
        return None;
    }
    let bbox = BoundingBox2D::new(u_lo, v_lo, u_hi, v_hi).ok()?;
    Some((bbox, (pu0 as u32, pv0 as u32, pu1 as u32, pv1 as u32)))
}

/// Renders the scenario into frame inputs, commands and ground truth.
/// The output is a pure function of the spec (including its seed).
pub fn generate_stream(spec: &ScenarioSpec) -> Result<SimStream> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = spec.noise;
    let pos_noise = if noise.centroid_sigma > 0.0 {
        Some(Normal::new(0.0, noise.centroid_sigma).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let labels: Vec<&str> = spec
        .objects
        .iter()
        .map(|o| o.label.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (w, h) = (spec.image_width, spec.image_height);

    let mut frames = Vec::new();
    let mut truth = GroundTruthLog::default();
    for (k, t) in spec.frame_times().into_iter().enumerate() {
        let mut rendered = Vec::new();
        for (i, o) in spec.objects.iter().enumerate() {
            if !o.is_visible(t) {
                continue;
            }
            let true_position = o.position_at(t);
            let mut observed = true_position;
            if let Some(d) = &pos_noise {
                for c in &mut observed {
                    *c += d.sample(&mut rng);
                }
            }
            let depth = world_to_camera(&observed, &spec.camera)[2];
            if !(depth > 0.0) {
                continue;
            }
            if let Some((bbox, pixels)) = render_box(&observed, &o.size, &spec.camera, w, h) {
                rendered.push(Rendered {
                    object: i,
                    true_position,
                    depth: (depth as f32) as f64,
                    bbox,
                    pixels,
                });
            }
        }

        // z-buffer: each pixel belongs to the nearest object covering it
        let mut owner: Vec<Option<usize>> = vec![None; (w * h) as usize];
        let mut depth = DepthImage::blank(w, h)?;
        for (r_idx, r) in rendered.iter().enumerate() {
            let (u0, v0, u1, v1) = r.pixels;
            for v in v0..=v1 {
                for u in u0..=u1 {
                    let cell = &mut owner[(v * w + u) as usize];
                    if cell.is_none_or(|o| r.depth < rendered[o].depth) {
                        *cell = Some(r_idx);
                        depth.set(u, v, r.depth);
                    }
                }
            }
        }

        let mut detections = Vec::new();
        let mut det_truth = Vec::new();
        let mut detected_ids = Vec::new();
        for (r_idx, r) in rendered.iter().enumerate() {
            let (u0, v0, u1, v1) = r.pixels;
            let mask = PixelMask::new(
                (v0..=v1)
                    .flat_map(|v| (u0..=u1).map(move |u| (u, v)))
                    .filter(|&(u, v)| owner[(v * w + u) as usize] == Some(r_idx)),
            );
            if mask.len() < MIN_MASK_PIXELS {
                continue;
            }
            // draws happen unconditionally so noise settings do not shift later samples
            let dropped = rng.random_bool(noise.dropout);
            let flipped = rng.random_bool(noise.label_flip);
            let flip_pick: usize = rng.random_range(0..labels.len().max(1));
            let o = &spec.objects[r.object];
            let f_img = noisy_feature(&o.image_archetype, noise.feature_sigma, &mut rng)?;
            let f_txt = noisy_feature(&o.text_archetype, noise.feature_sigma, &mut rng)?;
            if dropped {
                continue;
            }
            let label = if flipped {
                let others: Vec<&str> = labels.iter().copied().filter(|l| *l != o.label).collect();
                if others.is_empty() {
                    "unknown".to_string()
                } else {
                    others[flip_pick % others.len()].to_string()
                }
            } else {
                o.label.clone()
            };
            detections.push(Detection {
                bbox: r.bbox,
                mask,
                label,
                f_img,
                f_txt,
            });
            det_truth.push(DetectionTruth {
                true_id: o.true_id,
                label: crate::model::normalize_label(&o.label),
                centroid: r.true_position,
            });
            detected_ids.push(o.true_id);
        }

        let mut relation_candidates = Vec::new();
        for rel in spec.relations.iter().filter(|r| r.holds_at(t)) {
            let s = detected_ids.iter().position(|&id| id == rel.subject);
            let o = detected_ids.iter().position(|&id| id == rel.object);
            if let (Some(s), Some(o)) = (s, o) {
                relation_candidates.push(CandidateInput {
                    subject: s,
                    object: o,
                    relation: rel.relation.clone(),
                    zone: detections[s].bbox.union(&detections[o].bbox),
                });
            }
        }
        let mut relations: Vec<RelationTruth> = spec
            .relations
            .iter()
            .filter(|r| r.holds_at(t))
            .map(|r| RelationTruth {
                subject: r.subject,
                object: r.object,
                relation: crate::model::normalize_label(&r.relation),
            })
            .collect();
        relations.sort();

        frames.push(FrameInput {
            latency_tag: LatencyTag::new(t, spec.uplink.delay_at(t)),
            detections,
            relation_candidates,
            depth,
            camera: spec.camera.clone(),
        });
        truth.frames.push(FrameTruth {
            frame_index: k + 1,
            capture_time: t,
            detections: det_truth,
            relations,
        });
    }

    let mut commands = Vec::new();
    for c in &spec.commands {
        let target = spec.object(c.target).expect("validated");
        let embedding = FeatureVec::new(c.embedding.clone().unwrap_or_else(|| normalize(&target.text_archetype)))?;
        let latency = spec.downlink.delay_at(c.issue_time);
        commands.push(Command {
            text: c.text.clone(),
            embedding,
            issue_time: c.issue_time,
            command_latency: latency,
        });
        truth.commands.push(CommandTruth {
            text: c.text.clone(),
            issue_time: c.issue_time,
            delivery_time: c.issue_time + latency,
            intended_id: c.target,
            family: spec.family,
        });
    }
    if spec.fifo {
        let sent: Vec<TimedMessage<usize>> = commands
            .iter()
            .enumerate()
            .map(|(i, c)| TimedMessage { send_time: c.issue_time, payload: i })
            .collect();
        for d in latency_channel(sent, &spec.downlink, true)? {
            commands[d.payload].command_latency = d.delivery_time - d.send_time;
            truth.commands[d.payload].delivery_time = d.delivery_time;
        }
    }
    Ok(SimStream { frames, commands, truth })
}

// ---------------------------------------------------------------------------
// Latency channel

#[derive(Debug, Clone, PartialEq)]
pub struct TimedMessage<M> {
    pub send_time: f64,
    pub payload: M,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivered<M> {
    pub send_time: f64,
    pub delivery_time: f64,
    /// Position in send order.
    pub seq: usize,
    pub payload: M,
}

/// Delays each message by the profile value at its send time and returns
/// them in delivery order (ties by send order). With `fifo`, a message is
/// never delivered before one sent earlier.
pub fn latency_channel<M>(messages: Vec<TimedMessage<M>>, profile: &LatencyProfile, fifo: bool) -> Result<Vec<Delivered<M>>> {
    profile.validate()?;
    let mut sent: Vec<(usize, TimedMessage<M>)> = messages.into_iter().enumerate().collect();
    if sent.iter().any(|(_, m)| !m.send_time.is_finite()) {
        return Err(Error::invalid("send times must be finite"));
    }
    sent.sort_by(|a, b| a.1.send_time.total_cmp(&b.1.send_time).then(a.0.cmp(&b.0)));
    let mut floor = f64::NEG_INFINITY;
    let mut out: Vec<Delivered<M>> = sent
        .into_iter()
        .enumerate()
        .map(|(seq, (_, m))| {
            let mut delivery_time = m.send_time + profile.delay_at(m.send_time);
            if fifo {
                delivery_time = delivery_time.max(floor);
                floor = delivery_time;
            }
            Delivered {
                send_time: m.send_time,
                delivery_time,
                seq,
                payload: m.payload,
            }
        })
        .collect();
    out.sort_by(|a, b| a.delivery_time.total_cmp(&b.delivery_time).then(a.seq.cmp(&b.seq)));
    Ok(out)
}

// ---------------------------------------------------------------------------
// Scenario families

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyParams {
    pub seed: u64,
    /// Operator-to-robot command delay (seconds).
    pub delay: f64,
    /// Robot-to-operator frame delay; equal to `delay` when absent.
    pub uplink_delay: Option<f64>,
    pub frame_rate: f64,
    /// Frames of undisturbed scene the operator sees before issuing.
    pub lead_time: f64,
    /// Seconds simulated after the command arrives.
    pub tail: f64,
    pub noise: NoiseSpec,
    /// Add a same-label distractor at the target's old location (target_moved).
    pub distractor: bool,
    /// Angle between target and distractor image archetypes.
    pub distractor_angle_deg: f64,
    /// Occlusion length before the target reappears; never reappears when absent.
    pub occlusion_gap: Option<f64>,
    /// Displacement of moved objects (meters).
    pub move_distance: f64,
    pub background_objects: usize,
}

impl Default for FamilyParams {
    fn default() -> Self {
        Self {
            seed: 0,
            delay: 1.0,
            uplink_delay: None,
            frame_rate: 20.0,
            lead_time: 1.0,
            tail: 0.5,
            noise: NoiseSpec::default(),
            distractor: true,
            distractor_angle_deg: 10.0,
            occlusion_gap: None,
            move_distance: 0.35,
            background_objects: 2,
        }
    }
}

const FEATURE_DIM: usize = 16;
const IMAGE_WIDTH: u32 = 160;
const IMAGE_HEIGHT: u32 = 120;
const BACKGROUND_LABELS: [&str; 6] = ["bowl", "bottle", "box", "can", "plate", "spoon"];

pub fn default_camera() -> CameraModel<f64> {
    CameraModel::with_identity_pose(120.0, 120.0, 80.0, 60.0)
}

fn axis(k: usize) -> Vec<f64> {
    let mut v = vec![0.0; FEATURE_DIM];
    v[k] = 1.0;
    v
}

/// Unit vector at `deg` degrees from axis `k` toward the spare last axis.
fn tilted(k: usize, deg: f64) -> Vec<f64> {
    let r = deg.to_radians();
    let mut v = vec![0.0; FEATURE_DIM];
    v[k] = r.cos();
    v[FEATURE_DIM - 1] += r.sin();
    v
}

/// Rejection-samples tabletop positions at least `min_sep` apart in x/y.
struct Layout {
    rng: ChaCha8Rng,
    placed: Vec<Point3<f64>>,
}

impl Layout {
    const MIN_SEP: f64 = 0.22;

    fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a70),
            placed: Vec::new(),
        }
    }

    fn far_enough(&self, p: &Point3<f64>, exempt: Option<&Point3<f64>>) -> bool {
        self.placed.iter().all(|q| {
            Some(q) == exempt || ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() >= Self::MIN_SEP
        })
    }

    fn sample(&mut self) -> Result<Point3<f64>> {
        for _ in 0..10_000 {
            let p = [
                self.rng.random_range(-0.5..0.5),
                self.rng.random_range(-0.36..0.36),
                self.rng.random_range(0.9..1.15),
            ];
            if self.far_enough(&p, None) {
                self.placed.push(p);
                return Ok(p);
            }
        }
        Err(Error::invalid("cannot place objects in the workspace"))
    }

    /// Position `dist` away from `from`, clear of everything else.
    fn sample_at_distance(&mut self, from: &Point3<f64>, dist: f64) -> Result<Point3<f64>> {
        for _ in 0..10_000 {
            let a: f64 = self.rng.random_range(0.0..std::f64::consts::TAU);
            let p = [from[0] + dist * a.cos(), from[1] + dist * a.sin(), from[2]];
            if p[0].abs() <= 0.5 && p[1].abs() <= 0.36 && self.far_enough(&p, Some(from)) {
                self.placed.push(p);
                return Ok(p);
            }
        }
        Err(Error::invalid(format!("cannot place an object {dist} m from {from:?}")))
    }
}

fn static_object(true_id: u64, label: &str, axis_k: usize, position: Point3<f64>, visible: Vec<[f64; 2]>) -> SimObject {
    SimObject {
        true_id,
        label: label.to_string(),
        size: [0.1, 0.1, 0.1],
        text_archetype: axis(axis_k),
        image_archetype: axis(axis_k),
        waypoints: vec![Waypoint { time: 0.0, position }],
        visible,
    }
}

/// Builds a spec whose defining event falls strictly between the command's
/// issue time and its arrival at the robot.
pub fn make_scenario(family: ScenarioFamily, p: &FamilyParams) -> Result<ScenarioSpec> {
    if !(p.frame_rate.is_finite() && p.frame_rate > 0.0) {
        return Err(Error::invalid("frame_rate must be positive"));
    }
    if !(p.delay.is_finite() && p.delay > 0.0) {
        return Err(Error::invalid("delay must be positive"));
    }
    let uplink = p.uplink_delay.unwrap_or(p.delay);
    if !(uplink.is_finite() && uplink >= 0.0) {
        return Err(Error::invalid("uplink_delay must be non-negative"));
    }
    if !(p.lead_time >= 0.0 && p.tail >= 0.0 && p.move_distance >= Layout::MIN_SEP) {
        return Err(Error::invalid(format!(
            "lead_time and tail must be non-negative and move_distance at least {} m",
            Layout::MIN_SEP
        )));
    }
    if p.background_objects > BACKGROUND_LABELS.len() {
        return Err(Error::invalid(format!("at most {} background objects", BACKGROUND_LABELS.len())));
    }
    if !(p.distractor_angle_deg > 0.0 && p.distractor_angle_deg < 90.0) {
        return Err(Error::invalid("distractor_angle_deg must lie in (0, 90)"));
    }

    let dt = 1.0 / p.frame_rate;
    if p.delay < dt {
        return Err(Error::invalid(format!("delay {} s is shorter than one frame ({dt} s)", p.delay)));
    }
    // issue half-way between frames so no capture coincides with it
    let issue = ((uplink + p.lead_time + dt) / dt).ceil() * dt + dt / 2.0;
    let arrival = issue + p.delay;
    let window: Vec<f64> = (0..)
        .map(|k| k as f64 * dt)
        .skip_while(|&t| t <= issue)
        .take_while(|&t| t < arrival)
        .collect();
    let needed = match family {
        ScenarioFamily::TargetMoved if p.distractor => 2,
        ScenarioFamily::SameClassDistractor => 2,
        _ => 1,
    };
    if window.len() < needed {
        return Err(Error::invalid(format!(
            "delay {} s spans {} frame(s) at {} Hz; {family} needs {needed}",
            p.delay,
            window.len(),
            p.frame_rate
        )));
    }
    let m = window.len();
    let first = m.div_ceil(2).max(1);
    let second = ((3 * m).div_ceil(4)).max(first + 1).min(m);
    // an event at quarter period before a frame is first seen in that frame
    let event_time = |j: usize| window[j - 1] - dt / 4.0;
    let (t1, t2) = (event_time(first), event_time(second));

    let mut duration = arrival + p.tail;
    if let (ScenarioFamily::OcclusionAfterCommand, Some(gap)) = (family, p.occlusion_gap) {
        if !(gap.is_finite() && gap > 0.0) {
            return Err(Error::invalid("occlusion_gap must be positive"));
        }
        duration = duration.max(t1 + gap + 2.0 * dt + p.tail);
    }
    let duration = (duration * p.frame_rate).ceil() / p.frame_rate;
    let always = vec![[0.0, duration]];

    let mut layout = Layout::new(p.seed);
    let mut objects = Vec::new();
    let mut relations = Vec::new();
    let target_id = 1;
    let a = layout.sample()?;
    let (target_label, text) = match family {
        ScenarioFamily::MovedReference => ("mug", "pick up the mug next to the book"),
        _ => ("mug", "pick up the mug"),
    };
    let mut target = static_object(target_id, target_label, 0, a, always.clone());
    let has_distractor = matches!(family, ScenarioFamily::SameClassDistractor)
        || (family == ScenarioFamily::TargetMoved && p.distractor);
    if has_distractor {
        // the distractor is closer to the prototype, so it out-scores the target
        target.image_archetype = tilted(0, 2.0 * p.distractor_angle_deg);
    }

    match family {
        ScenarioFamily::OcclusionAfterCommand => {
            let mut visible = vec![[0.0, t1]];
            if let Some(gap) = p.occlusion_gap {
                visible.push([t1 + gap, duration]);
            }
            target.visible = visible;
        }
        ScenarioFamily::TargetMoved => {
            let b = layout.sample_at_distance(&a, p.move_distance)?;
            target.waypoints = vec![Waypoint { time: 0.0, position: a }, Waypoint { time: t1, position: a }, Waypoint { time: t1, position: b }];
        }
        ScenarioFamily::SameClassDistractor => {
            let b = layout.sample_at_distance(&a, p.move_distance)?;
            target.waypoints = vec![Waypoint { time: 0.0, position: a }, Waypoint { time: issue, position: a }, Waypoint { time: t1, position: b }];
        }
        ScenarioFamily::MovedReference => {}
    }
    objects.push(target);

    if has_distractor {
        let mut d = static_object(2, target_label, 0, a, vec![[t2, duration]]);
        d.image_archetype = tilted(0, p.distractor_angle_deg);
        objects.push(d);
    }
    if family == ScenarioFamily::MovedReference {
        // the landmark sits beside the target, then jumps away
        let beside = [a[0] + if a[0] > 0.0 { -0.16 } else { 0.16 }, a[1], a[2]];
        layout.placed.push(beside);
        let c = layout.sample_at_distance(&beside, p.move_distance)?;
        let mut book = static_object(3, "book", 1, beside, always.clone());
        book.waypoints = vec![Waypoint { time: 0.0, position: beside }, Waypoint { time: t1, position: beside }, Waypoint { time: t1, position: c }];
        objects.push(book);
        relations.push(SimRelation {
            subject: target_id,
            object: 3,
            relation: "next to".into(),
            active: Some([0.0, t1]),
        });
    }
    for (i, label) in BACKGROUND_LABELS.iter().take(p.background_objects).enumerate() {
        let pos = layout.sample()?;
        objects.push(static_object(10 + i as u64, label, 2 + i, pos, always.clone()));
    }

    let spec = ScenarioSpec {
        schema: SCENARIO_SCHEMA.to_string(),
        family: Some(family),
        seed: p.seed,
        duration,
        frame_rate: p.frame_rate,
        image_width: IMAGE_WIDTH,
        image_height: IMAGE_HEIGHT,
        camera: default_camera(),
        feature_dim: FEATURE_DIM,
        objects,
        relations,
        noise: p.noise,
        uplink: LatencyProfile::constant(uplink),
        downlink: LatencyProfile::constant(p.delay),
        commands: vec![SimCommand {
            text: text.to_string(),
            target: target_id,
            issue_time: issue,
            embedding: None,
        }],
        fifo: false,
    };
    spec.validate()?;
    Ok(spec)
}
