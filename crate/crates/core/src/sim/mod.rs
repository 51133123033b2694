//! The simulated world and the per-tick loop shared by batch runs, replay
//! and live sessions.

pub mod grid;
pub mod metrics;
pub mod scenario;
pub mod trace;
pub mod world;

use crate::behaviors::CoverageGrid;
use crate::filter::{ingest, predict, update_robot_pose, FilterEvent};
use crate::graph::BehaviorKind;
use crate::types::{
    AffordanceStatus, ControlInput, GeoSemanticBelief, Observation, RobotPoseBelief,
};
use metrics::{reward_cost, sample_series};
use scenario::{ScenarioError, WorldScenario};
use trace::{RunSummary, StatusEntry, TickRecord};
use world::{RngStreams, World, WorldEvent};

pub use grid::{Cell, FloorPlan, OccupancyGrid};
pub use scenario::{generate_scenario, load_scenario, resolve_scenario, ScenarioTemplate};

/// What one tick produced.
#[derive(Debug, Clone, Default)]
pub struct TickOutcome {
    pub world: Vec<WorldEvent>,
    pub filter: Vec<FilterEvent>,
    pub observations: Vec<Observation<f64>>,
}

/// World, belief and what the robot has seen, advanced together.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub scenario: WorldScenario,
    pub seed: u64,
    pub world: World,
    pub belief: GeoSemanticBelief<f64>,
    /// Cells the robot's footprint has swept, ever.
    pub coverage: CoverageGrid,
    pub rng: RngStreams,
    targets: usize,
}

impl Simulation {
    pub fn new(scenario: &WorldScenario, seed: u64) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let world = World::new(scenario)?;
        let belief = GeoSemanticBelief::new(&world.robot);
        let mut coverage =
            CoverageGrid::new(&world.plan, scenario.behavior.coverage.footprint_radius);
        coverage.mark(&world.plan, world.robot.floor, world.robot.position);
        let targets = world.target_count();
        Ok(Self {
            scenario: scenario.clone(),
            seed,
            world,
            belief,
            coverage,
            rng: RngStreams::new(seed),
            targets,
        })
    }

    pub fn tick(&self) -> u64 {
        self.world.tick
    }

    pub fn time(&self) -> f64 {
        self.world.time()
    }

    pub fn targets(&self) -> usize {
        self.targets
    }

    /// Out of time, or every placed object resolved: its task is done, or
    /// the robot has dismissed its track.
    pub fn is_terminal(&self) -> bool {
        self.time() >= self.scenario.budget || self.all_resolved()
    }

    pub fn all_resolved(&self) -> bool {
        self.world.truths.iter().all(|o| {
            o.status.is_completed()
                || self
                    .belief
                    .object(o.id)
                    .is_some_and(|b| b.status.is_resolved())
        })
    }

    /// Apply `u`, then fold the resulting sensor frame into the belief.
    pub fn advance(&mut self, u: &ControlInput<f64>) -> TickOutcome {
        let world_events = self.world.step(u, &self.belief, &mut self.rng);
        let u = u.clamped(&self.world.limits);
        let s = &self.scenario;
        let mut belief = predict(&self.belief, &u, self.world.dt, &s.filter);
        belief.time = self.world.time();
        belief.floor = self.world.robot.floor;
        belief.gait = self.world.robot.gait;
        let teleported = world_events
            .iter()
            .any(|e| matches!(e, WorldEvent::Ascended { .. }));
        if s.perfect_localization || teleported {
            belief.robot = RobotPoseBelief::exact(&self.world.robot);
        } else {
            let fix = self.world.pose_fix(s.localization_noise, &mut self.rng);
            let var = s.localization_noise.map(|x| x * x);
            update_robot_pose(&mut belief, fix, var);
        }
        for e in &world_events {
            // the robot learns the outcome of its own tasks
            let done = match e {
                WorldEvent::Inspected { object_id, .. } => {
                    Some((*object_id, AffordanceStatus::Inspected))
                }
                WorldEvent::Ascended { object_id, .. } => {
                    Some((*object_id, AffordanceStatus::Ascended))
                }
                _ => None,
            };
            if let Some((id, status)) = done {
                let _ = belief.set_status(id, status);
            }
        }
        let observations = self.world.observe(&mut self.rng);
        let robot = belief.robot_state();
        let filter_events = ingest(
            &mut belief,
            &observations,
            &robot,
            &s.sensor,
            &self.world.plan,
            &s.filter,
        );
        self.coverage
            .mark(&self.world.plan, robot.floor, robot.position);
        self.belief = belief;
        TickOutcome {
            world: world_events,
            filter: filter_events,
            observations,
        }
    }

    pub fn reward_cost(&self) -> f64 {
        reward_cost(
            self.world.reward,
            self.world.path_length,
            self.time(),
            self.world.stair_failures,
            &self.scenario.rewards,
        )
    }

    pub fn tick_record(
        &self,
        active: Option<BehaviorKind>,
        engaged: Option<u32>,
        control: ControlInput<f64>,
    ) -> TickRecord {
        let w = &self.world;
        TickRecord {
            tick: w.tick,
            time: w.time(),
            robot: w.robot,
            estimate: self.belief.robot.mean,
            active,
            engaged,
            control,
            statuses: w
                .truths
                .iter()
                .map(|o| StatusEntry {
                    id: o.id,
                    status: o.status,
                })
                .collect(),
            inspected: w.count(AffordanceStatus::Inspected),
            completed: w.completed(),
            closest_sum: w.closest_sum(),
            path_length: w.path_length,
            reward: w.reward,
            reward_cost: self.reward_cost(),
        }
    }

    pub fn summary(&self, method: &str, ticks: &[TickRecord]) -> RunSummary {
        let w = &self.world;
        RunSummary {
            method: method.to_string(),
            seed: self.seed,
            scenario: self.scenario.name.clone(),
            ticks: w.tick,
            duration: w.time(),
            targets: self.targets,
            inspected: w.count(AffordanceStatus::Inspected),
            completed: w.completed(),
            path_length: w.path_length,
            closest_sum: w.closest_sum(),
            reward: w.reward,
            stair_failures: w.stair_failures,
            collisions: w.collisions,
            reward_cost: self.reward_cost(),
            series: sample_series(ticks, w.tick_rate, self.scenario.budget),
        }
    }
}
