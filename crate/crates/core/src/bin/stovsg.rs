use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use stovsg_core::config::EngineConfig;
use stovsg_core::graph_store::ingest_frame;
use stovsg_core::io;
use stovsg_core::metrics::{score_graph, true_id_of};
use stovsg_core::model::{NodeRef, SceneGraph4D};
use stovsg_core::query::{extract_subgraph_with, ground_command, Alignment, SubgraphDocument};
use stovsg_core::replay::{run_suite, SuiteConfig};
use stovsg_core::sim::{generate_stream, make_scenario, FamilyParams, ScenarioFamily};
use stovsg_core::{Error, Result};

#[derive(Parser)]
#[command(name = "stovsg", version, about = "Latency-aware 4D scene graph engine and teleoperation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a scenario into a detection stream, ground truth and commands.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `<out stem>.truth.json`.
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Defaults to `<out stem>.commands.json`.
        #[arg(long)]
        commands: Option<PathBuf>,
    },
    /// Write a scenario file for one of the adversarial families.
    MakeScenario {
        #[arg(long)]
        family: String,
        /// Family parameters JSON; flags below override it.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        delay: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        occlusion_gap: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ingest a detection stream into a scene graph.
    Build {
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ground commands and print their task subgraphs.
    Query {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        command: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Resolve against the newest frame instead of the operator's view.
        #[arg(long)]
        naive: bool,
        #[arg(long)]
        json: bool,
    },
    /// Accuracy of a graph against ground truth, as JSON.
    Score {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        commands: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// End-to-end latency-robustness suite.
    Replay {
        /// Family parameters JSON used as the template for every trial.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value = "all")]
        families: String,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2,5")]
        delays: Vec<f64>,
        #[arg(long, value_enum, default_value = "on")]
        latency_aware: OnOff,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Re-emit a scene graph file in canonical form.
    Export {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the default engine configuration.
    Config,
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig<f64>> {
    match path {
        Some(p) => EngineConfig::from_json(&std::fs::read_to_string(p)?),
        None => Ok(EngineConfig::default()),
    }
}

fn build_graph(frames: &[stovsg_core::FrameInput], cfg: &EngineConfig<f64>) -> Result<SceneGraph4D<f64>> {
    cfg.validate()?;
    let mut graph = SceneGraph4D::new();
    for (i, f) in frames.iter().enumerate() {
        ingest_frame(&mut graph, f, cfg).map_err(|e| Error::InvalidInput(format!("frame {}: {e}", i + 1)))?;
    }
    Ok(graph)
}

fn parse_families(spec: &str) -> Result<Vec<ScenarioFamily>> {
    if spec == "all" {
        return Ok(ScenarioFamily::ALL.to_vec());
    }
    spec.split(',').map(|s| ScenarioFamily::parse(s.trim())).collect()
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json value serializes")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Simulate { scenario, seed, out, truth, commands } => {
            let mut spec = io::read_scenario(&scenario)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            let stream = generate_stream(&spec)?;
            io::write_stream(&out, &stream.frames)?;
            let truth = truth.unwrap_or_else(|| io::sibling(&out, "truth.json"));
            io::write_file(&truth, &io::truth_to_json(&stream.truth))?;
            let commands = commands.unwrap_or_else(|| io::sibling(&out, "commands.json"));
            io::write_file(&commands, &io::commands_to_json(&stream.commands))?;
        }
        Cmd::MakeScenario { family, params, delay, seed, occlusion_gap, out } => {
            let mut p: FamilyParams = match params {
                Some(path) => io::read_json(&path)?,
                None => FamilyParams::default(),
            };
            if let Some(d) = delay {
                p.delay = d;
            }
            if let Some(s) = seed {
                p.seed = s;
            }
            if occlusion_gap.is_some() {
                p.occlusion_gap = occlusion_gap;
            }
            let spec = make_scenario(ScenarioFamily::parse(&family)?, &p)?;
            io::write_file(&out, &spec.to_json())?;
        }
        Cmd::Build { stream, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let frames = io::parse_stream(&stream)?;
            io::write_graph(&out, &build_graph(&frames, &cfg)?)?;
        }
        Cmd::Query { graph, command, config, naive, json } => {
            let cfg = load_config(config.as_deref())?;
            let graph = io::read_graph(&graph)?;
            let alignment = if naive { Alignment::NewestFrame } else { Alignment::LatencyAware };
            let mut results = Vec::new();
            for cmd in io::read_commands(&command)? {
                let grounding = ground_command(&graph, &cmd, &cfg.query, alignment)?;
                let sub = extract_subgraph_with(&graph, &cmd, &cfg.query, alignment)?;
                let doc = SubgraphDocument::from_subgraph(&sub);
                if json {
                    results.push(json!({ "grounding": grounding, "subgraph": serde_json::from_str::<serde_json::Value>(&doc.to_canonical_string())? }));
                } else {
                    println!("command: {:?} (issued {} s, +{} s)", cmd.text, cmd.issue_time, cmd.command_latency);
                    let t = &grounding.target;
                    println!(
                        "  target: node {} track {} '{}' in frame {} at {:?}",
                        t.node_id,
                        t.track_id.map_or("-".into(), |x| x.to_string()),
                        t.label,
                        t.frame_index,
                        t.centroid
                    );
                    match &grounding.current {
                        Some(c) => println!("  current: node {} in frame {} at {:?}", c.node_id, c.frame_index, c.centroid),
                        None => println!(
                            "  target lost; last seen node {} in frame {} at {:?}",
                            grounding.last_known.node_id, grounding.last_known.frame_index, grounding.last_known.centroid
                        ),
                    }
                    println!("{}", doc.to_canonical_string());
                }
            }
            if json {
                println!("{}", pretty(&serde_json::Value::Array(results)));
            }
        }
        Cmd::Score { graph, truth, commands, config } => {
            let cfg = load_config(config.as_deref())?;
            let graph = io::read_graph(&graph)?;
            let truth = io::read_truth(&truth)?;
            let mut report = score_graph(&graph, &truth, cfg.centroid_tolerance)?;
            if let Some(path) = commands {
                let cmds = io::read_commands(&path)?;
                if cmds.len() != truth.commands.len() {
                    return Err(Error::InvalidInput(format!(
                        "{} commands but truth lists {}",
                        cmds.len(),
                        truth.commands.len()
                    )));
                }
                for (cmd, ct) in cmds.iter().zip(&truth.commands) {
                    let chosen = ground_command(&graph, cmd, &cfg.query, Alignment::LatencyAware)
                        .ok()
                        .and_then(|g| {
                            true_id_of(&graph, &truth, NodeRef { node_id: g.target.node_id, frame_index: g.target.frame_index })
                        });
                    let ok = chosen == Some(ct.intended_id);
                    report.grounding.add(ok);
                    if let Some(f) = ct.family {
                        report.per_family.entry(f.name().to_string()).or_default().add(ok);
                    }
                }
            }
            print!("{}", report.to_json());
        }
        Cmd::Replay { scenario, families, trials, delays, latency_aware, config, json } => {
            let cfg = load_config(config.as_deref())?;
            let base: FamilyParams = match scenario {
                Some(path) => io::read_json(&path)?,
                None => FamilyParams::default(),
            };
            if trials == 0 {
                return Err(Error::InvalidInput("trials must be at least 1".into()));
            }
            let suite = SuiteConfig {
                families: parse_families(&families)?,
                delays,
                trials,
                latency_aware: latency_aware == OnOff::On,
                base,
            };
            let report = run_suite(&suite, &cfg)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.table());
            }
        }
        Cmd::Export { graph, format: Format::Json, out } => {
            let text = io::graph_to_json(&io::read_graph(&graph)?);
            match out {
                Some(path) => io::write_file(&path, &text)?,
                None => print!("{text}"),
            }
        }
        Cmd::Config => print!("{}", EngineConfig::<f64>::default().to_json()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = json!({ "error": { "kind": e.kind(), "message": e.to_string() } });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}
