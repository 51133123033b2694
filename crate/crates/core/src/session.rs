//! Live sessions: the tick loop behind the server, and the JSON protocol
//! spoken with a teleoperation or spectator client.
//!
//! A session owns a [`Simulation`] and is advanced one tick at a time by
//! whoever paces it (the server's wall clock, or a test). Client commands
//! queue between ticks; at each tick boundary the latest one is consumed.
//! The trace a session writes has the batch schema, so a teleop trace can be
//! compared field by field with an autonomous one and replayed headlessly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Cov2, Vec2};
use crate::graph::executor::{header, push_outcome};
use crate::graph::BehaviorKind;
use crate::sim::scenario::WorldScenario;
use crate::sim::trace::{
    EventRecord, RunSummary, TickRecord, TraceEvent, TraceRecord, TraceWriter,
};
use crate::sim::Simulation;
use crate::types::{AffordanceStatus, ControlInput, DiscreteAction, Gait, Observation};
use crate::{Agent, Method, RunError};

/// Version stamped into every protocol message.
pub const PROTOCOL_VERSION: u32 = 1;
/// Session length when none is given, seconds.
pub const DEFAULT_SESSION_BUDGET: f64 = 300.0;
/// How long a teleop session waits for its client to come back, seconds.
pub const DISCONNECT_GRACE: f64 = 30.0;
/// Snapshot rate, Hz.
pub const SNAPSHOT_RATE: f64 = 10.0;
/// Half-width of the occupancy window sent in snapshots, meters.
pub const WINDOW_RADIUS: f64 = 6.0;
/// Method name recorded for human-driven sessions.
pub const TELEOP_METHOD: &str = "teleop";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("message format_version {got} is not supported (expected {PROTOCOL_VERSION})")]
    Version { got: u32 },
    #[error("session has ended")]
    Ended,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SessionMode {
    /// A connected client drives the robot.
    Teleop,
    /// The behavior graph drives; clients only watch.
    Autonomous,
}

impl std::str::FromStr for SessionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "teleop" => Ok(Self::Teleop),
            "autonomous" => Ok(Self::Autonomous),
            other => Err(format!(
                "unknown mode `{other}` (expected teleop or autonomous)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub mode: SessionMode,
    pub seed: u64,
    /// Simulated seconds.
    pub budget: f64,
    /// Wall seconds a teleop session stays paused without a client.
    pub disconnect_grace: f64,
}

impl SessionConfig {
    pub fn new(mode: SessionMode, seed: u64) -> Self {
        Self {
            mode,
            seed,
            budget: DEFAULT_SESSION_BUDGET,
            disconnect_grace: DISCONNECT_GRACE,
        }
    }
}

/// Client to server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// Body-frame velocity; held until the next one.
    CmdVel {
        vx: f64,
        vy: f64,
        omega: f64,
    },
    TriggerInspect {
        object_id: u32,
    },
    SetGait {
        mode: Gait,
    },
    Start,
    Pause,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Snapshot(Box<Snapshot>),
    Event {
        event: TraceEvent,
    },
    SessionEnd {
        reason: EndReason,
        summary: Box<RunSummary>,
    },
}

/// A message plus the fields every message carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<M> {
    pub format_version: u32,
    /// Client: the last tick it saw. Server: the tick the message describes.
    pub tick: u64,
    #[serde(flatten)]
    pub message: M,
}

impl<M> Envelope<M> {
    pub fn new(tick: u64, message: M) -> Self {
        Self {
            format_version: PROTOCOL_VERSION,
            tick,
            message,
        }
    }
}

impl<M: Serialize> Envelope<M> {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("protocol messages serialize")
    }
}

/// Parse a client message, rejecting unknown versions.
pub fn parse_client(text: &str) -> Result<Envelope<ClientMessage>, SessionError> {
    let env: Envelope<ClientMessage> =
        serde_json::from_str(text).map_err(|e| SessionError::Malformed(e.to_string()))?;
    if env.format_version != PROTOCOL_VERSION {
        return Err(SessionError::Version {
            got: env.format_version,
        });
    }
    Ok(env)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndReason {
    Budget,
    /// Every object resolved.
    Completed,
    /// The teleop client stayed away past the grace period.
    Aborted,
}

/// What the robot believes about one object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefView {
    pub id: u32,
    pub floor: usize,
    pub mean: Vec2<f64>,
    pub cov: Cov2<f64>,
    pub heading: f64,
    pub labels: Vec<f64>,
    pub status: AffordanceStatus,
}

/// Occupancy around the robot's estimate: `rows[0]` is the row at `origin.y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapWindow {
    pub origin: Vec2<f64>,
    pub cell_size: f64,
    /// Same characters as scenario floors.
    pub rows: Vec<String>,
    /// `1` where the footprint has swept, `0` elsewhere.
    pub covered: Vec<String>,
}

/// Everything a client may see: the robot's own belief and raw sensing,
/// never the true object placements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub budget: f64,
    pub running: bool,
    /// Believed pose `(x, y, θ)`.
    pub estimate: [f64; 3],
    pub floor: usize,
    pub gait: Gait,
    pub active: Option<BehaviorKind>,
    pub window: MapWindow,
    pub observations: Vec<Observation<f64>>,
    pub beliefs: Vec<BeliefView>,
    pub inspected: usize,
    pub completed: usize,
    pub reward_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Waiting,
    Running,
    /// Paused by the client.
    Paused,
    /// Teleop client gone; `waited` wall seconds so far.
    Disconnected {
        waited: f64,
    },
    Ended(EndReason),
}

/// A command consumed at a tick boundary; the log that replays a session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedCommand {
    pub tick: u64,
    pub message: ClientMessage,
}

/// Result of a finished session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutput {
    pub reason: EndReason,
    pub summary: RunSummary,
    pub trace: Vec<u8>,
    pub hash: String,
    pub commands: Vec<LoggedCommand>,
}

pub struct Session {
    config: SessionConfig,
    sim: Simulation,
    agent: Option<Agent>,
    state: State,
    /// Latest command since the last tick.
    pending: Option<ClientMessage>,
    held: ControlInput<f64>,
    writer: TraceWriter<Vec<u8>>,
    ticks: Vec<TickRecord>,
    commands: Vec<LoggedCommand>,
    last_observations: Vec<Observation<f64>>,
    snapshot_period: u64,
}

impl Session {
    pub fn new(scenario: &WorldScenario, config: SessionConfig) -> Result<Self, SessionError> {
        let mut scenario = scenario.clone();
        scenario.budget = config.budget;
        let sim = Simulation::new(&scenario, config.seed).map_err(RunError::from)?;
        let agent = match config.mode {
            SessionMode::Autonomous => Some(Agent::new(Method::Sb2g.graph(&scenario), &sim)?),
            SessionMode::Teleop => None,
        };
        let method = match config.mode {
            SessionMode::Autonomous => Method::Sb2g.as_str(),
            SessionMode::Teleop => TELEOP_METHOD,
        };
        let mut writer = TraceWriter::new(Vec::new());
        let first = sim.tick_record(
            agent.as_ref().map(Agent::active),
            agent.as_ref().and_then(Agent::engaged),
            ControlInput::zero(),
        );
        writer
            .write(&TraceRecord::Header(header(&sim, method)))
            .map_err(RunError::from)?;
        writer
            .write(&TraceRecord::Tick(first.clone()))
            .map_err(RunError::from)?;
        let snapshot_period = (sim.world.tick_rate / SNAPSHOT_RATE).round().max(1.0) as u64;
        Ok(Self {
            config,
            sim,
            agent,
            state: State::Waiting,
            pending: None,
            held: ControlInput::zero(),
            writer,
            ticks: vec![first],
            commands: Vec::new(),
            last_observations: Vec::new(),
            snapshot_period,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn tick(&self) -> u64 {
        self.sim.tick()
    }

    pub fn is_running(&self) -> bool {
        self.state == State::Running
    }

    pub fn ended(&self) -> Option<EndReason> {
        match self.state {
            State::Ended(r) => Some(r),
            _ => None,
        }
    }

    /// Queue a client message. `start` and `pause` take effect at once;
    /// robot commands wait for the next tick, and a newer one replaces an
    /// older one. Spectators of an autonomous session cannot drive.
    pub fn submit(&mut self, message: ClientMessage) -> Result<(), SessionError> {
        if self.ended().is_some() {
            return Err(SessionError::Ended);
        }
        match message {
            ClientMessage::Start => {
                if matches!(self.state, State::Waiting | State::Paused) {
                    self.state = State::Running;
                }
            }
            ClientMessage::Pause => {
                if self.state == State::Running {
                    self.state = State::Paused;
                }
            }
            _ if self.config.mode == SessionMode::Autonomous => {}
            cmd => self.pending = Some(cmd),
        }
        Ok(())
    }

    /// The teleop client went away: stop the robot and start the grace clock.
    pub fn disconnect(&mut self) {
        if self.config.mode == SessionMode::Teleop
            && matches!(self.state, State::Running | State::Paused)
        {
            self.held = ControlInput::zero();
            self.pending = None;
            self.state = State::Disconnected { waited: 0.0 };
        }
    }

    /// A client is back; a session paused by disconnect stays paused until
    /// it sends `start`.
    pub fn reconnect(&mut self) {
        if let State::Disconnected { .. } = self.state {
            self.state = State::Paused;
        }
    }

    /// Advance wall-clock-paced state by `dt` wall seconds. Only a
    /// disconnected session uses it, to expire the grace period.
    pub fn idle(&mut self, dt: f64) -> Vec<ServerMessage> {
        if let State::Disconnected { waited } = self.state {
            let waited = waited + dt;
            if waited >= self.config.disconnect_grace {
                return self.end(EndReason::Aborted);
            }
            self.state = State::Disconnected { waited };
        }
        Vec::new()
    }

    /// Run one simulation tick if the session is running. Returns the
    /// messages to broadcast: the tick's events, a snapshot at the snapshot
    /// rate, and `session_end` when the run finishes.
    pub fn step(&mut self) -> Result<Vec<ServerMessage>, SessionError> {
        if self.state != State::Running {
            return Ok(Vec::new());
        }
        if let Some(reason) = self.terminal() {
            return Ok(self.end(reason));
        }
        let mut events = Vec::new();
        let control = match self.agent.as_mut() {
            Some(agent) => {
                let step = agent.act(&mut self.sim);
                events = step.events;
                step.control
            }
            None => self.consume_command(),
        };
        let tick = self.sim.tick() + 1;
        let mut records: Vec<TraceRecord> = events
            .into_iter()
            .map(|event| TraceRecord::Event(EventRecord { tick, event }))
            .collect();
        let outcome = self.sim.advance(&control);
        if let Some(agent) = self.agent.as_mut() {
            agent.observe(&outcome.world);
        }
        push_outcome(&mut records, tick, &outcome);
        let mut out = Vec::new();
        for r in records {
            self.writer.write(&r).map_err(RunError::from)?;
            if let TraceRecord::Event(e) = r {
                out.push(ServerMessage::Event { event: e.event });
            }
        }
        let (active, engaged) = match &self.agent {
            Some(a) => (Some(a.active()), a.engaged()),
            None => (None, None),
        };
        let rec = self.sim.tick_record(active, engaged, control);
        self.writer
            .write(&TraceRecord::Tick(rec.clone()))
            .map_err(RunError::from)?;
        self.ticks.push(rec);
        self.last_observations = outcome.observations;
        if tick.is_multiple_of(self.snapshot_period) {
            out.push(ServerMessage::Snapshot(Box::new(self.snapshot())));
        }
        if let Some(reason) = self.terminal() {
            out.extend(self.end(reason));
        }
        Ok(out)
    }

    fn consume_command(&mut self) -> ControlInput<f64> {
        let tick = self.sim.tick() + 1;
        let mut action = DiscreteAction::None;
        if let Some(cmd) = self.pending.take() {
            self.commands.push(LoggedCommand { tick, message: cmd });
            match cmd {
                ClientMessage::CmdVel { vx, vy, omega } => {
                    self.held =
                        ControlInput::velocity(vx, vy, omega).clamped(&self.sim.world.limits);
                }
                ClientMessage::TriggerInspect { object_id } => {
                    action = DiscreteAction::TriggerInspect { object_id }
                }
                ClientMessage::SetGait { mode } => action = DiscreteAction::SetGait { mode },
                ClientMessage::Start | ClientMessage::Pause => {}
            }
        }
        ControlInput {
            action,
            ..self.held
        }
    }

    fn terminal(&self) -> Option<EndReason> {
        if self.sim.all_resolved() {
            Some(EndReason::Completed)
        } else if self.sim.is_terminal() {
            Some(EndReason::Budget)
        } else {
            None
        }
    }

    fn end(&mut self, reason: EndReason) -> Vec<ServerMessage> {
        if self.ended().is_some() {
            return Vec::new();
        }
        self.state = State::Ended(reason);
        let summary = self.summary();
        // the sink is a Vec; writing cannot fail
        let _ = self.writer.write(&TraceRecord::End(summary.clone()));
        vec![ServerMessage::SessionEnd {
            reason,
            summary: Box::new(summary),
        }]
    }

    pub fn summary(&self) -> RunSummary {
        let method = match self.config.mode {
            SessionMode::Autonomous => Method::Sb2g.as_str(),
            SessionMode::Teleop => TELEOP_METHOD,
        };
        self.sim.summary(method, &self.ticks)
    }

    pub fn snapshot(&self) -> Snapshot {
        let b = &self.sim.belief;
        let plan = &self.sim.world.plan;
        let floor = b.floor;
        let g = &plan.floors[floor];
        let cs = g.cell_size();
        let at = b.robot.position();
        let lo_x = (((at.x - WINDOW_RADIUS) / cs).floor().max(0.0) as usize).min(g.width());
        let lo_y = (((at.y - WINDOW_RADIUS) / cs).floor().max(0.0) as usize).min(g.height());
        let hi_x = (((at.x + WINDOW_RADIUS) / cs).ceil().max(0.0) as usize).min(g.width());
        let hi_y = (((at.y + WINDOW_RADIUS) / cs).ceil().max(0.0) as usize).min(g.height());
        let all_rows = g.to_rows();
        let rows = (lo_y..hi_y)
            .map(|y| all_rows[y][lo_x..hi_x].to_string())
            .collect();
        let mask = &self.sim.coverage.covered[floor];
        let covered = (lo_y..hi_y)
            .map(|y| {
                (lo_x..hi_x)
                    .map(|x| if mask[g.index((x, y))] { '1' } else { '0' })
                    .collect()
            })
            .collect();
        let w = &self.sim.world;
        Snapshot {
            time: w.time(),
            budget: self.sim.scenario.budget,
            running: self.is_running(),
            estimate: b.robot.mean,
            floor,
            gait: b.gait,
            active: self.agent.as_ref().map(Agent::active),
            window: MapWindow {
                origin: Vec2::new(lo_x as f64 * cs, lo_y as f64 * cs),
                cell_size: cs,
                rows,
                covered,
            },
            observations: self.last_observations.clone(),
            beliefs: b
                .objects
                .values()
                .map(|o| BeliefView {
                    id: o.id,
                    floor: o.floor,
                    mean: o.mean,
                    cov: o.cov,
                    heading: o.heading_mean,
                    labels: o.labels.clone(),
                    status: o.status,
                })
                .collect(),
            inspected: w.count(AffordanceStatus::Inspected),
            completed: w.completed(),
            reward_cost: self.sim.reward_cost(),
        }
    }

    /// Close the session (ending it at the current tick if still open) and
    /// hand back the trace.
    pub fn finish(mut self) -> Result<SessionOutput, SessionError> {
        let reason = match self.ended() {
            Some(r) => r,
            None => {
                let r = self.terminal().unwrap_or(EndReason::Aborted);
                self.end(r);
                r
            }
        };
        let summary = self.summary();
        let (trace, hash) = self.writer.finish().map_err(RunError::from)?;
        Ok(SessionOutput {
            reason,
            summary,
            trace,
            hash,
            commands: self.commands,
        })
    }
}

/// Drive a teleop session headlessly from a command log: each command is
/// submitted just before its tick. Reproduces the live session's trace.
pub fn replay_commands(
    scenario: &WorldScenario,
    config: SessionConfig,
    log: &[LoggedCommand],
) -> Result<SessionOutput, SessionError> {
    let mut s = Session::new(scenario, config)?;
    s.submit(ClientMessage::Start)?;
    let mut next = log.iter().peekable();
    while s.ended().is_none() {
        let tick = s.tick() + 1;
        while let Some(c) = next.next_if(|c| c.tick <= tick) {
            s.submit(c.message)?;
        }
        s.step()?;
    }
    s.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario() -> WorldScenario {
        WorldScenario::bundled("office-small").unwrap()
    }

    #[test]
    fn client_messages_round_trip() {
        let msgs = [
            ClientMessage::CmdVel {
                vx: 0.5,
                vy: 0.0,
                omega: -0.2,
            },
            ClientMessage::TriggerInspect { object_id: 3 },
            ClientMessage::SetGait {
                mode: Gait::StairGait,
            },
            ClientMessage::Start,
            ClientMessage::Pause,
        ];
        for m in msgs {
            let text = Envelope::new(7, m).to_json();
            let back = parse_client(&text).unwrap();
            assert_eq!(back.message, m);
            assert_eq!(back.tick, 7);
        }
        let raw = r#"{"format_version":1,"tick":0,"type":"cmd_vel","vx":1.0,"vy":0.0,"omega":0.0}"#;
        assert!(matches!(
            parse_client(raw).unwrap().message,
            ClientMessage::CmdVel { .. }
        ));
    }

    #[test]
    fn wrong_version_and_garbage_are_rejected() {
        let raw = r#"{"format_version":9,"tick":0,"type":"start"}"#;
        assert!(matches!(
            parse_client(raw),
            Err(SessionError::Version { got: 9 })
        ));
        assert!(matches!(
            parse_client("{}"),
            Err(SessionError::Malformed(_))
        ));
        assert!(matches!(
            parse_client(r#"{"format_version":1,"tick":0,"type":"fly"}"#),
            Err(SessionError::Malformed(_))
        ));
    }

    #[test]
    fn nothing_moves_before_start() {
        let mut s = Session::new(&scenario(), SessionConfig::new(SessionMode::Teleop, 1)).unwrap();
        let p0 = s.simulation().world.robot;
        for _ in 0..5 {
            assert!(s.step().unwrap().is_empty());
        }
        assert_eq!(s.tick(), 0);
        assert_eq!(s.simulation().world.robot, p0);
    }

    #[test]
    fn latest_command_wins_and_velocity_is_held() {
        let mut s = Session::new(&scenario(), SessionConfig::new(SessionMode::Teleop, 1)).unwrap();
        s.submit(ClientMessage::Start).unwrap();
        s.submit(ClientMessage::CmdVel {
            vx: -0.3,
            vy: 0.0,
            omega: 0.0,
        })
        .unwrap();
        s.submit(ClientMessage::CmdVel {
            vx: 0.4,
            vy: 0.0,
            omega: 0.0,
        })
        .unwrap();
        for _ in 0..3 {
            s.step().unwrap();
        }
        let out = s.finish().unwrap();
        assert_eq!(out.commands.len(), 1);
        let trace = crate::Trace::read(std::io::Cursor::new(&out.trace)).unwrap();
        let controls: Vec<f64> = trace.ticks().skip(1).map(|t| t.control.vx).collect();
        assert_eq!(controls, vec![0.4, 0.4, 0.4]);
    }

    #[test]
    fn disconnect_stops_then_aborts_after_grace() {
        let mut s = Session::new(&scenario(), SessionConfig::new(SessionMode::Teleop, 1)).unwrap();
        s.submit(ClientMessage::Start).unwrap();
        s.submit(ClientMessage::CmdVel {
            vx: 0.5,
            vy: 0.0,
            omega: 0.0,
        })
        .unwrap();
        s.step().unwrap();
        s.disconnect();
        assert!(s.step().unwrap().is_empty());
        assert!(s.idle(29.9).is_empty());
        s.reconnect();
        s.submit(ClientMessage::Start).unwrap();
        s.step().unwrap();
        // held velocity was dropped on disconnect
        let trace = crate::Trace::read(std::io::Cursor::new(s.writer_bytes())).unwrap();
        assert_eq!(trace.ticks().last().unwrap().control.vx, 0.0);
        s.disconnect();
        let msgs = s.idle(DISCONNECT_GRACE);
        assert!(matches!(
            msgs.as_slice(),
            [ServerMessage::SessionEnd {
                reason: EndReason::Aborted,
                ..
            }]
        ));
        assert_eq!(s.ended(), Some(EndReason::Aborted));
        assert!(matches!(
            s.submit(ClientMessage::Start),
            Err(SessionError::Ended)
        ));
    }

    #[test]
    fn spectators_cannot_drive() {
        let mut s =
            Session::new(&scenario(), SessionConfig::new(SessionMode::Autonomous, 1)).unwrap();
        s.submit(ClientMessage::TriggerInspect { object_id: 1 })
            .unwrap();
        s.disconnect();
        s.submit(ClientMessage::Start).unwrap();
        assert!(s.is_running());
        s.step().unwrap();
        assert!(s.commands.is_empty());
    }

    #[test]
    fn snapshots_carry_belief_only() {
        let mut s =
            Session::new(&scenario(), SessionConfig::new(SessionMode::Autonomous, 2)).unwrap();
        s.submit(ClientMessage::Start).unwrap();
        let mut snaps = 0;
        for _ in 0..200 {
            for m in s.step().unwrap() {
                if let ServerMessage::Snapshot(snap) = m {
                    snaps += 1;
                    let believed: Vec<u32> =
                        s.simulation().belief.objects.keys().copied().collect();
                    let sent: Vec<u32> = snap.beliefs.iter().map(|b| b.id).collect();
                    assert_eq!(sent, believed);
                    assert_eq!(snap.window.rows.len(), snap.window.covered.len());
                    let text = Envelope::new(s.tick(), ServerMessage::Snapshot(snap)).to_json();
                    assert!(!text.contains("\"truths\""));
                }
            }
        }
        assert_eq!(snaps, 200);
    }

    impl Session {
        fn writer_bytes(&self) -> Vec<u8> {
            let mut v = Vec::new();
            let mut w = TraceWriter::new(&mut v);
            w.write(&TraceRecord::Header(header(&self.sim, TELEOP_METHOD)))
                .unwrap();
            for t in &self.ticks {
                w.write(&TraceRecord::Tick(t.clone())).unwrap();
            }
            v
        }
    }
}
