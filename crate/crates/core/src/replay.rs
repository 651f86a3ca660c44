//! Discrete-event replay: frames are ingested at capture time and commands are
//! grounded when the channel delivers them.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::error::Result;
use crate::graph_store::{ingest_frame, IngestReport};
use crate::metrics::{score_graph, true_id_of, MetricsReport, Rate};
use crate::model::{NodeRef, SceneGraph4D};
use crate::query::{ground_command, Alignment, GroundingResult};
use crate::sim::{generate_stream, make_scenario, FamilyParams, GroundTruthLog, ScenarioFamily, ScenarioSpec, SimStream};

pub const REPLAY_SCHEMA: &str = "stovsg-replay/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Capture(usize),
    Deliver(usize),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: usize,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed so the max-heap pops the earliest (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandOutcome {
    pub text: String,
    pub issue_time: f64,
    pub delivery_time: f64,
    pub intended_id: u64,
    /// True id of the engine's target node.
    pub chosen_id: Option<u64>,
    pub success: bool,
    /// Frames in the graph when the command was grounded.
    pub frames_at_delivery: usize,
    pub grounding: Option<GroundingResult<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub graph: SceneGraph4D<f64>,
    pub truth: GroundTruthLog,
    pub reports: Vec<IngestReport<f64>>,
    pub commands: Vec<CommandOutcome>,
}

impl RunOutput {
    pub fn metrics(&self, cfg: &EngineConfig<f64>) -> Result<MetricsReport> {
        let mut m = score_graph(&self.graph, &self.truth, cfg.centroid_tolerance)?;
        for c in &self.commands {
            m.grounding.add(c.success);
        }
        Ok(m)
    }
}

/// Replays a generated stream through the engine on a single event loop.
/// Events are ordered by `(time, sequence)`; captures are queued first, so a
/// frame captured at a command's delivery instant is visible to it.
pub fn run_stream(stream: &SimStream, cfg: &EngineConfig<f64>, alignment: Alignment) -> Result<RunOutput> {
    cfg.validate()?;
    let mut queue = BinaryHeap::new();
    for (i, f) in stream.frames.iter().enumerate() {
        queue.push(Event {
            time: f.latency_tag.capture_time,
            seq: queue.len(),
            kind: EventKind::Capture(i),
        });
    }
    for (i, c) in stream.truth.commands.iter().enumerate() {
        queue.push(Event {
            time: c.delivery_time,
            seq: queue.len(),
            kind: EventKind::Deliver(i),
        });
    }

    let mut graph = SceneGraph4D::new();
    let mut reports = Vec::with_capacity(stream.frames.len());
    let mut outcomes: Vec<Option<CommandOutcome>> = vec![None; stream.commands.len()];
    while let Some(ev) = queue.pop() {
        match ev.kind {
            EventKind::Capture(i) => reports.push(ingest_frame(&mut graph, &stream.frames[i], cfg)?),
            EventKind::Deliver(i) => {
                let cmd = &stream.commands[i];
                let ct = &stream.truth.commands[i];
                let result = ground_command(&graph, cmd, &cfg.query, alignment);
                let chosen_id = result.as_ref().ok().and_then(|g| {
                    true_id_of(
                        &graph,
                        &stream.truth,
                        NodeRef {
                            node_id: g.target.node_id,
                            frame_index: g.target.frame_index,
                        },
                    )
                });
                outcomes[i] = Some(CommandOutcome {
                    text: cmd.text.clone(),
                    issue_time: cmd.issue_time,
                    delivery_time: ct.delivery_time,
                    intended_id: ct.intended_id,
                    chosen_id,
                    success: chosen_id == Some(ct.intended_id),
                    frames_at_delivery: graph.frames.len(),
                    error: result.as_ref().err().map(|e| e.to_string()),
                    grounding: result.ok(),
                });
            }
        }
    }
    Ok(RunOutput {
        graph,
        truth: stream.truth.clone(),
        reports,
        commands: outcomes.into_iter().map(|o| o.expect("every command is delivered")).collect(),
    })
}

pub fn run_scenario(spec: &ScenarioSpec, cfg: &EngineConfig<f64>, alignment: Alignment) -> Result<RunOutput> {
    run_stream(&generate_stream(spec)?, cfg, alignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub families: Vec<ScenarioFamily>,
    pub delays: Vec<f64>,
    pub trials: usize,
    pub latency_aware: bool,
    /// Template for every trial; `delay` and `seed` are overridden.
    pub base: FamilyParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub family: ScenarioFamily,
    pub delay: f64,
    pub success: Rate,
    pub a_tmp: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema: String,
    pub latency_aware: bool,
    pub trials: usize,
    pub rows: Vec<SuiteRow>,
    pub per_family: BTreeMap<String, Rate>,
    pub overall: Rate,
    pub a_tmp: Rate,
}

impl SuiteReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "latency-aware: {}   trials per cell: {}",
            if self.latency_aware { "on" } else { "off" },
            self.trials
        );
        let _ = writeln!(out, "{:<26} {:>7} {:>9} {:>8}", "family", "delay_s", "success", "a_tmp");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<26} {:>7} {:>9} {:>8}",
                r.family.name(),
                r.delay,
                format!("{}/{}", r.success.correct, r.success.total),
                r.a_tmp.rate.map_or("-".to_string(), |v| format!("{v:.3}"))
            );
        }
        for (name, rate) in &self.per_family {
            let _ = writeln!(out, "{name:<26} {:>7} {:>9}", "all", fmt_rate(rate));
        }
        let _ = writeln!(out, "{:<26} {:>7} {:>9}", "overall", "", fmt_rate(&self.overall));
        out
    }
}

fn fmt_rate(r: &Rate) -> String {
    r.rate.map_or("-".to_string(), |v| format!("{v:.3}"))
}

/// Runs every (family, delay, trial) cell; trial `i` uses seed `base.seed + i`.
pub fn run_suite(suite: &SuiteConfig, cfg: &EngineConfig<f64>) -> Result<SuiteReport> {
    let alignment = if suite.latency_aware {
        Alignment::LatencyAware
    } else {
        Alignment::NewestFrame
    };
    let mut rows = Vec::new();
    let mut per_family: BTreeMap<String, Rate> = BTreeMap::new();
    let mut overall = Rate::default();
    let mut a_tmp_all = Rate::default();
    for &family in &suite.families {
        for &delay in &suite.delays {
            let mut success = Rate::default();
            let mut a_tmp = Rate::default();
            for trial in 0..suite.trials {
                let params = FamilyParams {
                    delay,
                    seed: suite.base.seed.wrapping_add(trial as u64),
                    ..suite.base.clone()
                };
                let spec = make_scenario(family, &params)?;
                let run = run_scenario(&spec, cfg, alignment)?;
                for c in &run.commands {
                    success.add(c.success);
                }
                a_tmp.merge(&score_graph(&run.graph, &run.truth, cfg.centroid_tolerance)?.a_tmp);
            }
            per_family.entry(family.name().to_string()).or_default().merge(&success);
            overall.merge(&success);
            a_tmp_all.merge(&a_tmp);
            rows.push(SuiteRow { family, delay, success, a_tmp });
        }
    }
    Ok(SuiteReport {
        schema: REPLAY_SCHEMA.to_string(),
        latency_aware: suite.latency_aware,
        trials: suite.trials,
        rows,
        per_family,
        overall,
        a_tmp: a_tmp_all,
    })
}
