//! Runs a behavior graph against the simulator: pick the node, let its
//! behavior choose a control, step the world, fold the observation in.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behaviors::{
    ActiveSearch, ClimbStairs, CoverageGrid, CoveragePlanner, CoverageStep, Inspect, NavMap,
    SearchContext,
};
use crate::graph::{
    apply_transition, evaluate_predicate, BehaviorGraph, BehaviorKind, TriggerFamily,
};
use crate::sim::scenario::{ScenarioError, WorldScenario};
use crate::sim::trace::{
    EventRecord, RunSummary, TickRecord, Trace, TraceError, TraceEvent, TraceHeader, TraceRecord,
    TraceWriter, TRACE_FORMAT_VERSION,
};
use crate::sim::world::WorldEvent;
use crate::sim::{Simulation, TickOutcome};
use crate::types::ControlInput;

/// Which graph drives the robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Coverage, active search and task behaviors.
    Sb2g,
    /// Coverage only; never triggers a task.
    CoverageOnly,
    /// Coverage that jumps straight to the task once the belief is actionable.
    CoverageInspect,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sb2g, Method::CoverageInspect, Method::CoverageOnly];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sb2g => "sb2g",
            Self::CoverageOnly => "coverage-only",
            Self::CoverageInspect => "coverage-inspect",
        }
    }

    pub fn graph(self, scenario: &WorldScenario) -> BehaviorGraph {
        let (labels, th) = (&scenario.sensor.labels, scenario.thresholds);
        match self {
            Self::Sb2g => BehaviorGraph::sb2g(labels, th),
            Self::CoverageOnly => BehaviorGraph::coverage_only(th),
            Self::CoverageInspect => BehaviorGraph::coverage_inspect(labels, th),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown method `{0}` (expected sb2g, coverage-only or coverage-inspect)")]
pub struct UnknownMethod(pub String);

impl FromStr for Method {
    type Err = UnknownMethod;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| UnknownMethod(s.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid graph: {0}")]
    Graph(#[from] crate::graph::GraphError),
}

/// Control chosen for one tick plus what the agent wants logged.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentStep {
    pub control: ControlInput<f64>,
    pub events: Vec<TraceEvent>,
}

/// The autonomous robot: a behavior graph plus the state of each behavior.
#[derive(Debug, Clone)]
pub struct Agent {
    pub graph: BehaviorGraph,
    nav: NavMap,
    /// Coverage of the current sweep; reset when a sweep completes.
    sweep: CoverageGrid,
    passes: u32,
    coverage: CoveragePlanner,
    search: ActiveSearch,
    inspect: Inspect,
    climb: ClimbStairs,
}

impl Agent {
    pub fn new(graph: BehaviorGraph, sim: &Simulation) -> Result<Self, RunError> {
        graph.validate()?;
        let s = &sim.scenario;
        let nav = NavMap::new(sim.world.plan.clone(), s.clearance);
        let mut sweep = CoverageGrid::new(nav.plan(), s.behavior.coverage.footprint_radius);
        let r = &sim.world.robot;
        sweep.mark(nav.plan(), r.floor, r.position);
        Ok(Self {
            graph,
            nav,
            sweep,
            passes: 0,
            coverage: CoveragePlanner::new(),
            search: ActiveSearch::new(),
            inspect: Inspect::new(),
            climb: ClimbStairs::new(),
        })
    }

    pub fn active(&self) -> BehaviorKind {
        self.graph.active
    }

    pub fn engaged(&self) -> Option<u32> {
        self.graph.engaged
    }

    /// Choose this tick's node and control from the current belief.
    pub fn act(&mut self, sim: &mut Simulation) -> AgentStep {
        let mut events = Vec::new();
        if let Some(t) = self.graph.transition(&mut sim.belief) {
            match t.to {
                BehaviorKind::GeometricCoverage => self.coverage.invalidate(),
                BehaviorKind::ActiveSearch { .. } => self.search.reset(),
                BehaviorKind::Inspect { .. } => self.inspect.reset(),
                BehaviorKind::ClimbStairs { .. } => self.climb.reset(),
            }
            events.push(TraceEvent::Transition(t));
        }
        let robot = sim.belief.robot_state();
        let time = sim.belief.time;
        self.sweep
            .mark(self.nav.plan(), robot.floor, robot.position);
        let s = &sim.scenario;
        let (limits, gains) = (&s.limits, &s.behavior.tracking);
        let target = self.graph.engaged.and_then(|id| sim.belief.object(id));
        let control = match (self.graph.active, target) {
            (BehaviorKind::GeometricCoverage, _) => {
                let (u, status) = self.coverage.step(
                    &robot,
                    time,
                    &self.nav,
                    &mut self.sweep,
                    &s.behavior.coverage,
                    limits,
                    gains,
                );
                if status == CoverageStep::Complete {
                    // start another sweep; tasks may still be open
                    self.passes += 1;
                    events.push(TraceEvent::CoverageComplete { pass: self.passes });
                    self.sweep = CoverageGrid::new(self.nav.plan(), self.sweep.radius);
                    self.coverage.invalidate();
                }
                u
            }
            (BehaviorKind::ActiveSearch { label }, Some(obj)) => {
                let id = obj.id;
                let ctx = SearchContext {
                    model: &s.sensor,
                    nav: &self.nav,
                    known: Some(&sim.coverage),
                    config: &s.planner,
                };
                let step = self.search.step(
                    &ctx,
                    &sim.belief,
                    id,
                    label,
                    &s.thresholds,
                    &mut sim.rng.planner,
                    limits,
                    gains,
                );
                if let Some(r) = step.report {
                    events.push(TraceEvent::Search(r));
                }
                step.control
            }
            (BehaviorKind::Inspect { label }, Some(obj)) => {
                let standoff = s.sensor.label(label).standoff;
                let (u, _) = self.inspect.step(
                    &robot,
                    time,
                    obj,
                    standoff,
                    &self.nav,
                    &s.behavior.inspect,
                    limits,
                    gains,
                );
                u
            }
            (BehaviorKind::ClimbStairs { .. }, Some(obj)) => {
                let (u, _) =
                    self.climb
                        .step(&robot, obj, &self.nav, &s.behavior.climb, limits, gains);
                u
            }
            // engaged track vanished: hold still until a predicate fires
            (_, None) => ControlInput::zero(),
        };
        AgentStep {
            control: control.clamped(limits),
            events,
        }
    }

    /// React to what the world reported after the step.
    pub fn observe(&mut self, events: &[WorldEvent]) {
        for e in events {
            match e {
                WorldEvent::Collision { .. } => {
                    self.coverage.invalidate();
                    self.inspect.reset();
                }
                WorldEvent::StairFailure { .. } => self.climb.on_failure(),
                _ => {}
            }
        }
    }
}

/// Result of a batch run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: RunSummary,
    /// Hex SHA-256 of the trace bytes.
    pub hash: String,
    pub lines: usize,
}

pub(crate) fn header(sim: &Simulation, method: &str) -> TraceHeader {
    TraceHeader {
        format_version: TRACE_FORMAT_VERSION,
        method: method.to_string(),
        seed: sim.seed,
        budget: sim.scenario.budget,
        scenario: sim.scenario.clone(),
    }
}

pub(crate) fn push_outcome(out: &mut Vec<TraceRecord>, tick: u64, o: &TickOutcome) {
    for e in &o.world {
        out.push(TraceRecord::Event(EventRecord {
            tick,
            event: TraceEvent::World(e.clone()),
        }));
    }
    for e in &o.filter {
        out.push(TraceRecord::Event(EventRecord {
            tick,
            event: TraceEvent::Filter(*e),
        }));
    }
}

/// Run `method` on `scenario` with master seed `seed` until the terminal
/// predicate holds, writing the trace to `sink`.
pub fn run<W: Write>(
    scenario: &WorldScenario,
    method: Method,
    seed: u64,
    sink: W,
) -> Result<RunOutput, RunError> {
    let mut sim = Simulation::new(scenario, seed)?;
    let mut agent = Agent::new(method.graph(scenario), &sim)?;
    let mut w = TraceWriter::new(sink);
    w.write(&TraceRecord::Header(header(&sim, method.as_str())))?;
    let first = sim.tick_record(Some(agent.active()), agent.engaged(), ControlInput::zero());
    w.write(&TraceRecord::Tick(first.clone()))?;
    let mut ticks = vec![first];
    let mut pending = Vec::new();
    while !sim.is_terminal() {
        let step = agent.act(&mut sim);
        let tick = sim.tick() + 1;
        for e in step.events {
            pending.push(TraceRecord::Event(EventRecord { tick, event: e }));
        }
        let outcome = sim.advance(&step.control);
        agent.observe(&outcome.world);
        push_outcome(&mut pending, tick, &outcome);
        for r in pending.drain(..) {
            w.write(&r)?;
        }
        let rec = sim.tick_record(Some(agent.active()), agent.engaged(), step.control);
        w.write(&TraceRecord::Tick(rec.clone()))?;
        ticks.push(rec);
    }
    let summary = sim.summary(method.as_str(), &ticks);
    w.write(&TraceRecord::End(summary.clone()))?;
    let lines = w.lines();
    let (_, hash) = w.finish()?;
    Ok(RunOutput {
        summary,
        hash,
        lines,
    })
}

/// A graph-discipline violation found while replaying a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub tick: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    /// The regenerated trace.
    pub trace: Trace,
    pub original_hash: String,
    pub replay_hash: String,
    /// Line number (1-based) of the first differing line.
    pub first_mismatch: Option<usize>,
    pub violations: Vec<Violation>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.first_mismatch.is_none() && self.original_hash == self.replay_hash
    }
}

/// Re-run a trace: the world and filter are stepped with the logged
/// controls and the same seed; the agent's decisions are taken from the
/// log. Every logged transition is re-checked against the replayed belief.
pub fn replay(trace: &Trace) -> Result<ReplayReport, RunError> {
    let h = &trace.header;
    let mut scenario = h.scenario.clone();
    scenario.budget = h.budget;
    let mut sim = Simulation::new(&scenario, h.seed)?;
    let graph = h.method.parse::<Method>().ok().map(|m| m.graph(&scenario));
    let mut audit = Audit::new(graph);
    let mut out = Vec::new();
    let mut ticks: Vec<TickRecord> = Vec::new();
    let mut agent_events: Vec<TraceEvent> = Vec::new();
    for rec in &trace.records {
        match rec {
            TraceRecord::Event(e) => match &e.event {
                TraceEvent::Transition(_)
                | TraceEvent::Search(_)
                | TraceEvent::CoverageComplete { .. } => agent_events.push(e.event.clone()),
                _ => {}
            },
            TraceRecord::Tick(t) if t.tick == 0 => {
                let first = sim.tick_record(t.active, t.engaged, ControlInput::zero());
                audit.start(&first);
                out.push(TraceRecord::Tick(first.clone()));
                ticks.push(first);
            }
            TraceRecord::Tick(t) => {
                let tick = sim.tick() + 1;
                for ev in agent_events.drain(..) {
                    if let TraceEvent::Transition(tr) = &ev {
                        audit.transition(tick, tr, &sim);
                        apply_transition(&mut sim.belief, tr);
                    }
                    out.push(TraceRecord::Event(EventRecord { tick, event: ev }));
                }
                let outcome = sim.advance(&t.control);
                push_outcome(&mut out, tick, &outcome);
                let rec = sim.tick_record(t.active, t.engaged, t.control);
                audit.tick(&rec);
                out.push(TraceRecord::Tick(rec.clone()));
                ticks.push(rec);
            }
            TraceRecord::End(s) => out.push(TraceRecord::End(sim.summary(&s.method, &ticks))),
            TraceRecord::Header(_) => {}
        }
    }
    let replayed = Trace {
        header: h.clone(),
        records: out,
    };
    let a = trace.lines();
    let b = replayed.lines();
    let first_mismatch = a
        .iter()
        .zip(&b)
        .position(|(x, y)| x != y)
        .or_else(|| (a.len() != b.len()).then_some(a.len().min(b.len())))
        .map(|i| i + 1);
    Ok(ReplayReport {
        original_hash: trace.hash(),
        replay_hash: replayed.hash(),
        trace: replayed,
        first_mismatch,
        violations: audit.violations,
    })
}

/// Checks that every transition follows an edge of the graph whose
/// predicate holds on the belief at that tick, that the node only changes
/// through such transitions, and that resolved tracks are never engaged
/// again.
struct Audit {
    graph: Option<BehaviorGraph>,
    active: Option<BehaviorKind>,
    expected: Option<BehaviorKind>,
    resolved: BTreeSet<u32>,
    violations: Vec<Violation>,
}

impl Audit {
    fn new(graph: Option<BehaviorGraph>) -> Self {
        Self {
            graph,
            active: None,
            expected: None,
            resolved: BTreeSet::new(),
            violations: Vec::new(),
        }
    }

    fn flag(&mut self, tick: u64, message: String) {
        self.violations.push(Violation { tick, message });
    }

    fn start(&mut self, first: &TickRecord) {
        self.active = first.active;
        self.expected = first.active;
    }

    fn transition(&mut self, tick: u64, t: &crate::graph::Transition, sim: &Simulation) {
        let Some(graph) = &self.graph else { return };
        let edge = graph.edges.get(t.edge).copied();
        let thresholds = graph.thresholds;
        let matches = edge.is_some_and(|e| {
            e.from == t.from && e.to == t.to && e.family == t.family && e.predicate == t.predicate
        });
        if !matches {
            self.flag(
                tick,
                format!("transition via edge {} is not an edge of the graph", t.edge),
            );
        }
        if Some(t.from) != self.expected {
            self.flag(
                tick,
                format!(
                    "transition from {:?} while {:?} was active",
                    t.from, self.expected
                ),
            );
        }
        if !evaluate_predicate(&t.predicate, &thresholds, &sim.belief, t.target) {
            self.flag(
                tick,
                format!(
                    "predicate {:?} does not hold for object {}",
                    t.predicate, t.target
                ),
            );
        }
        if t.to.is_engaged()
            && self.resolved.contains(&t.target)
            && t.family != TriggerFamily::Abort
        {
            self.flag(tick, format!("resolved object {} engaged again", t.target));
        }
        if let Some(obj) = sim.belief.object(t.target) {
            let engaging = matches!(t.family, TriggerFamily::Detected | TriggerFamily::Confident);
            if engaging && obj.status.is_resolved() {
                self.flag(
                    tick,
                    format!("object {} engaged with status {:?}", t.target, obj.status),
                );
            }
        }
        match t.family {
            TriggerFamily::Absent | TriggerFamily::Completed => {
                self.resolved.insert(t.target);
            }
            _ => {}
        }
        self.expected = Some(t.to);
    }

    fn tick(&mut self, rec: &TickRecord) {
        if self.graph.is_none() {
            return;
        }
        if rec.active != self.expected {
            self.flag(
                rec.tick,
                format!("node changed to {:?} without a transition", rec.active),
            );
        }
        self.active = rec.active;
        self.expected = rec.active;
    }
}
