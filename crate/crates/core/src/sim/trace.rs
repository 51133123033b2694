//! JSON-lines run traces: one header, one record per tick, interleaved
//! event records, and a closing summary.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::behaviors::SearchReport;
use crate::filter::FilterEvent;
use crate::graph::{BehaviorKind, Transition};
use crate::sim::metrics::SeriesPoint;
use crate::sim::scenario::WorldScenario;
use crate::sim::world::WorldEvent;
use crate::types::{AffordanceStatus, ControlInput, RobotState};

/// Version stamped into every trace header.
pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace is missing its {0}")]
    Missing(&'static str),
    #[error("trace format_version {0} is not supported")]
    Version(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format_version: u32,
    /// `sb2g`, `coverage-only`, `coverage-inspect` or `teleop`.
    pub method: String,
    pub seed: u64,
    pub budget: f64,
    pub scenario: WorldScenario,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusEntry {
    pub id: u32,
    pub status: AffordanceStatus,
}

/// State after the tick's control was applied. Tick 0 is the initial
/// state and carries a zero control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub time: f64,
    /// True robot state.
    pub robot: RobotState<f64>,
    /// Believed pose `(x, y, θ)`.
    pub estimate: [f64; 3],
    /// Active graph node; `None` when a human drives.
    pub active: Option<BehaviorKind>,
    pub engaged: Option<u32>,
    pub control: ControlInput<f64>,
    /// True status of every object.
    pub statuses: Vec<StatusEntry>,
    pub inspected: usize,
    /// Inspected plus ascended.
    pub completed: usize,
    pub closest_sum: f64,
    pub path_length: f64,
    pub reward: f64,
    pub reward_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "data", rename_all = "kebab-case")]
pub enum TraceEvent {
    World(WorldEvent),
    Filter(FilterEvent),
    Transition(Transition),
    Search(SearchReport),
    CoverageComplete { pass: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// Tick whose step produced the event.
    pub tick: u64,
    pub event: TraceEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub scenario: String,
    pub ticks: u64,
    pub duration: f64,
    pub targets: usize,
    pub inspected: usize,
    pub completed: usize,
    pub path_length: f64,
    pub closest_sum: f64,
    pub reward: f64,
    pub stair_failures: u32,
    pub collisions: u32,
    pub reward_cost: f64,
    pub series: Vec<SeriesPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "kebab-case")]
// one header per trace; boxing it would buy nothing
#[allow(clippy::large_enum_variant)]
pub enum TraceRecord {
    Header(TraceHeader),
    Tick(TickRecord),
    Event(EventRecord),
    End(RunSummary),
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace records serialize")
    }
}

/// Writes records as lines and hashes exactly the bytes written.
pub struct TraceWriter<W: Write> {
    out: W,
    hasher: Sha256,
    lines: usize,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self {
            out,
            hasher: Sha256::new(),
            lines: 0,
        }
    }

    pub fn write(&mut self, record: &TraceRecord) -> std::io::Result<()> {
        let mut line = record.to_line();
        line.push('\n');
        self.hasher.update(line.as_bytes());
        self.lines += 1;
        self.out.write_all(line.as_bytes())
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    /// Flush and return the sink with the hex SHA-256 of everything written.
    pub fn finish(mut self) -> std::io::Result<(W, String)> {
        self.out.flush()?;
        Ok((self.out, hex::encode(self.hasher.finalize())))
    }
}

/// Hex SHA-256 of a trace's bytes.
pub fn trace_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A parsed trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn read(input: impl BufRead) -> Result<Self, TraceError> {
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            match rec {
                TraceRecord::Header(h) if header.is_none() => {
                    if h.format_version != TRACE_FORMAT_VERSION {
                        return Err(TraceError::Version(h.format_version));
                    }
                    header = Some(h);
                }
                TraceRecord::Header(_) => {
                    return Err(TraceError::Parse {
                        line: i + 1,
                        message: "second header".into(),
                    })
                }
                _ if header.is_none() => return Err(TraceError::Missing("header")),
                other => records.push(other),
            }
        }
        Ok(Self {
            header: header.ok_or(TraceError::Missing("header"))?,
            records,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, TraceError> {
        let f = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(f))
    }

    pub fn ticks(&self) -> impl Iterator<Item = &TickRecord> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Tick(t) => Some(t),
            _ => None,
        })
    }

    pub fn events(&self) -> impl Iterator<Item = &EventRecord> {
        self.records.iter().filter_map(|r| match r {
            TraceRecord::Event(e) => Some(e),
            _ => None,
        })
    }

    pub fn summary(&self) -> Option<&RunSummary> {
        self.records.iter().rev().find_map(|r| match r {
            TraceRecord::End(s) => Some(s),
            _ => None,
        })
    }

    /// Every line, as written.
    pub fn lines(&self) -> Vec<String> {
        std::iter::once(TraceRecord::Header(self.header.clone()).to_line())
            .chain(self.records.iter().map(TraceRecord::to_line))
            .collect()
    }

    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for l in self.lines() {
            h.update(l.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}
