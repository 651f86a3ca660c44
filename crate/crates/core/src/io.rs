//! File formats: detection streams (JSON lines plus binary depth), scene
//! graphs, command lists, ground truth and scenarios.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DepthImage;
use crate::graph_store::{CandidateInput, Detection, FrameInput};
use crate::model::{validate_graph, CameraModel, Command, LatencyTag, SceneGraph4D};
use crate::sim::{GroundTruthLog, ScenarioSpec, TRUTH_SCHEMA};

pub const STREAM_SCHEMA: &str = "stovsg-stream/1";
pub const GRAPH_SCHEMA: &str = "stovsg-graph/1";
pub const COMMANDS_SCHEMA: &str = "stovsg-commands/1";

fn check_schema(expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(Error::Schema {
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("document serializes");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// Depth files: u32 LE width, u32 LE height, then row-major f32 LE meters.

pub fn encode_depth(depth: &DepthImage<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * depth.values().len());
    out.extend_from_slice(&depth.width().to_le_bytes());
    out.extend_from_slice(&depth.height().to_le_bytes());
    for &v in depth.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthImage<f64>> {
    let word = |i: usize| -> Result<[u8; 4]> {
        bytes
            .get(i..i + 4)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::invalid("truncated depth file"))
    };
    let width = u32::from_le_bytes(word(0)?);
    let height = u32::from_le_bytes(word(4)?);
    let n = (width as usize) * (height as usize);
    if bytes.len() != 8 + 4 * n {
        return Err(Error::invalid(format!(
            "depth file of {width}x{height} should be {} bytes, is {}",
            8 + 4 * n,
            bytes.len()
        )));
    }
    let values = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    DepthImage::new(width, height, values)
}

// ---------------------------------------------------------------------------
// Detection stream

/// One line of a detection stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamRecord {
    pub schema: String,
    pub frame_index: usize,
    pub latency_tag: LatencyTag<f64>,
    pub camera: CameraModel<f64>,
    pub image_width: u32,
    pub image_height: u32,
    pub detections: Vec<Detection<f64>>,
    pub relation_candidates: Vec<CandidateInput<f64>>,
    /// Depth file relative to the stream file's directory; an all-invalid
    /// depth image is assumed when absent.
    #[serde(default)]
    pub depth: Option<String>,
}

/// Depth file name used for frame `frame_index` of stream `stream`.
pub fn depth_path_for(stream: &Path, frame_index: usize) -> String {
    let stem = stream.file_stem().map_or_else(|| "stream".into(), |s| s.to_string_lossy().into_owned());
    format!("{stem}.depth/{frame_index:06}.bin")
}

fn record_of(frame: &FrameInput<f64>, frame_index: usize, depth: Option<String>) -> StreamRecord {
    StreamRecord {
        schema: STREAM_SCHEMA.to_string(),
        frame_index,
        latency_tag: frame.latency_tag,
        camera: frame.camera.clone(),
        image_width: frame.depth.width(),
        image_height: frame.depth.height(),
        detections: frame.detections.clone(),
        relation_candidates: frame.relation_candidates.clone(),
        depth,
    }
}

/// Writes the stream and one depth file per frame next to it.
pub fn write_stream(path: &Path, frames: &[FrameInput<f64>]) -> Result<()> {
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut text = String::new();
    for (i, frame) in frames.iter().enumerate() {
        let rel = depth_path_for(path, i + 1);
        let full = dir.join(&rel);
        if let Some(d) = full.parent() {
            fs::create_dir_all(d)?;
        }
        fs::write(&full, encode_depth(&frame.depth))?;
        text.push_str(&serde_json::to_string(&record_of(frame, i + 1, Some(rel)))?);
        text.push('\n');
    }
    write_text(path, &text)
}

/// Parses a JSON-lines stream. Any malformed line aborts with its 1-based number.
pub fn parse_stream(path: &Path) -> Result<Vec<FrameInput<f64>>> {
    let text = read_text(path)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_stream_text(&text, |rel| {
        let bytes = fs::read(dir.join(rel))?;
        decode_depth(&bytes)
    })
}

pub fn parse_stream_text(
    text: &str,
    mut load_depth: impl FnMut(&str) -> Result<DepthImage<f64>>,
) -> Result<Vec<FrameInput<f64>>> {
    let mut frames = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let bad = |message: String| Error::Malformed { line: n, message };
        let rec: StreamRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        if rec.schema != STREAM_SCHEMA {
            return Err(bad(format!("schema {:?}, expected {STREAM_SCHEMA:?}", rec.schema)));
        }
        if rec.frame_index != n {
            return Err(bad(format!("frame_index {} out of sequence", rec.frame_index)));
        }
        for det in &rec.detections {
            for f in [&det.f_img, &det.f_txt] {
                match dim {
                    None => dim = Some(f.dim()),
                    Some(d) if d != f.dim() => {
                        return Err(bad(format!("feature dimension {} drifts from {d}", f.dim())))
                    }
                    _ => {}
                }
            }
        }
        let depth = match &rec.depth {
            Some(rel) => load_depth(rel).map_err(|e| bad(format!("depth {rel}: {e}")))?,
            None => DepthImage::blank(rec.image_width, rec.image_height).map_err(|e| bad(e.to_string()))?,
        };
        if (depth.width(), depth.height()) != (rec.image_width, rec.image_height) {
            return Err(bad(format!(
                "depth is {}x{}, record says {}x{}",
                depth.width(),
                depth.height(),
                rec.image_width,
                rec.image_height
            )));
        }
        frames.push(FrameInput {
            latency_tag: rec.latency_tag,
            detections: rec.detections,
            relation_candidates: rec.relation_candidates,
            depth,
            camera: rec.camera,
        });
    }
    Ok(frames)
}

// ---------------------------------------------------------------------------
// Scene graph

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDocument {
    pub schema: String,
    pub graph: SceneGraph4D<f64>,
}

pub fn graph_to_json(graph: &SceneGraph4D<f64>) -> String {
    let doc = GraphDocument {
        schema: GRAPH_SCHEMA.to_string(),
        graph: graph.clone(),
    };
    let mut s = serde_json::to_string(&doc).expect("graph serializes");
    s.push('\n');
    s
}

/// Parses a graph document and rejects graphs that break structural invariants.
pub fn graph_from_json(text: &str) -> Result<SceneGraph4D<f64>> {
    let doc: GraphDocument = serde_json::from_str(text)?;
    check_schema(GRAPH_SCHEMA, &doc.schema)?;
    if let Some(v) = validate_graph(&doc.graph).into_iter().next() {
        return Err(Error::invalid(format!("graph violates {}: {}", v.rule, v.detail)));
    }
    Ok(doc.graph)
}

pub fn write_graph(path: &Path, graph: &SceneGraph4D<f64>) -> Result<()> {
    write_text(path, &graph_to_json(graph))
}

pub fn read_graph(path: &Path) -> Result<SceneGraph4D<f64>> {
    graph_from_json(&read_text(path)?)
}

// ---------------------------------------------------------------------------
// Commands, truth, scenarios

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandsDocument {
    pub schema: String,
    pub commands: Vec<Command<f64>>,
}

pub fn commands_to_json(commands: &[Command<f64>]) -> String {
    pretty(&CommandsDocument {
        schema: COMMANDS_SCHEMA.to_string(),
        commands: commands.to_vec(),
    })
}

pub fn commands_from_json(text: &str) -> Result<Vec<Command<f64>>> {
    let doc: CommandsDocument = serde_json::from_str(text)?;
    check_schema(COMMANDS_SCHEMA, &doc.schema)?;
    Ok(doc.commands)
}

pub fn truth_to_json(truth: &GroundTruthLog) -> String {
    pretty(truth)
}

pub fn truth_from_json(text: &str) -> Result<GroundTruthLog> {
    let truth: GroundTruthLog = serde_json::from_str(text)?;
    check_schema(TRUTH_SCHEMA, &truth.schema)?;
    Ok(truth)
}

fn read_doc<T>(path: &Path, parse: impl FnOnce(&str) -> Result<T>) -> Result<T> {
    parse(&read_text(path)?)
}

pub fn read_commands(path: &Path) -> Result<Vec<Command<f64>>> {
    read_doc(path, commands_from_json)
}

pub fn read_truth(path: &Path) -> Result<GroundTruthLog> {
    read_doc(path, truth_from_json)
}

pub fn read_scenario(path: &Path) -> Result<ScenarioSpec> {
    read_doc(path, ScenarioSpec::from_json)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}

/// `dir/stem.suffix` next to `path`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}"))
}
