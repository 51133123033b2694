//! Ground truth: robot kinematics, noise, collisions, task adjudication.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::behaviors::search::derive_seed;
use crate::geometry::{wrap_angle, Vec2};
use crate::sensing::{sample_observations, SensorModel};
use crate::sim::grid::FloorPlan;
use crate::sim::scenario::{InspectionRules, RewardSpec, ScenarioError, StairLink, WorldScenario};
use crate::types::{
    AffordanceStatus, ControlInput, DiscreteAction, Gait, GeoSemanticBelief, ObjectTruth,
    Observation, RobotState, VelocityLimits,
};

/// Cap applied to each object's closest distance.
pub const CLOSEST_DISTANCE_CAP: f64 = 5.0;

/// Independent random streams fanned out from one master seed. The
/// planner stream is handed to the agent; the world never touches it.
#[derive(Debug, Clone)]
pub struct RngStreams {
    pub motion: ChaCha8Rng,
    pub detection: ChaCha8Rng,
    pub measurement: ChaCha8Rng,
    pub planner: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        let s = |k| ChaCha8Rng::seed_from_u64(derive_seed(seed, k));
        Self {
            motion: s(1),
            detection: s(2),
            measurement: s(3),
            planner: s(4),
        }
    }
}

/// Something the world decided this tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WorldEvent {
    Collision {
        at: Vec2<f64>,
    },
    Inspected {
        object_id: u32,
        reward: f64,
    },
    InspectionFailed {
        object_id: u32,
        reason: String,
    },
    GaitChanged {
        mode: Gait,
    },
    Ascended {
        object_id: u32,
        to_floor: usize,
        reward: f64,
    },
    StairFailure {
        object_id: u32,
        lateral: f64,
        heading_error: f64,
        gait: Gait,
    },
}

/// Stair zone resolved against its object.
#[derive(Debug, Clone)]
struct Zone {
    link: StairLink,
    foot: Vec2<f64>,
    direction: f64,
    floor: usize,
}

#[derive(Debug, Clone)]
pub struct World {
    pub plan: FloorPlan,
    pub sensor: SensorModel<f64>,
    pub robot: RobotState<f64>,
    pub truths: Vec<ObjectTruth<f64>>,
    zones: Vec<Zone>,
    pub limits: VelocityLimits<f64>,
    pub rewards: RewardSpec,
    pub inspection: InspectionRules,
    pub dt: f64,
    pub tick_rate: f64,
    pub process_noise: f64,
    pub heading_noise: f64,
    pub tick: u64,
    /// Sum of per-tick displacements on the same floor, meters.
    pub path_length: f64,
    /// Rewards earned so far.
    pub reward: f64,
    pub stair_failures: u32,
    pub collisions: u32,
    /// Running minimum of the capped distance to each object.
    pub closest: Vec<f64>,
}

impl World {
    pub fn new(s: &WorldScenario) -> Result<Self, ScenarioError> {
        let truths = s.truths()?;
        let zones = s
            .stairs
            .iter()
            .filter_map(|link| {
                let o = s.objects.iter().find(|o| o.id == link.object_id)?;
                Some(Zone {
                    link: link.clone(),
                    foot: o.position,
                    direction: o.orientation,
                    floor: o.floor,
                })
            })
            .collect();
        let mut w = Self {
            plan: s.floor_plan(),
            sensor: s.sensor.clone(),
            robot: s.start_state(),
            closest: vec![CLOSEST_DISTANCE_CAP; truths.len()],
            truths,
            zones,
            limits: s.limits,
            rewards: s.rewards,
            inspection: s.inspection,
            dt: s.dt(),
            tick_rate: s.tick_rate,
            process_noise: s.process_noise,
            heading_noise: s.heading_noise,
            tick: 0,
            path_length: 0.0,
            reward: 0.0,
            stair_failures: 0,
            collisions: 0,
        };
        w.update_closest();
        Ok(w)
    }

    /// Simulated time; exact multiple of the tick period.
    pub fn time(&self) -> f64 {
        self.tick as f64 / self.tick_rate
    }

    pub fn truth(&self, id: u32) -> Option<&ObjectTruth<f64>> {
        self.truths.iter().find(|o| o.id == id)
    }

    /// Objects that carried a task at the start.
    pub fn target_count(&self) -> usize {
        self.truths
            .iter()
            .filter(|o| o.status.is_pending() || o.status.is_completed())
            .count()
    }

    pub fn count(&self, status: AffordanceStatus) -> usize {
        self.truths.iter().filter(|o| o.status == status).count()
    }

    pub fn completed(&self) -> usize {
        self.truths
            .iter()
            .filter(|o| o.status.is_completed())
            .count()
    }

    pub fn closest_sum(&self) -> f64 {
        self.closest.iter().sum()
    }

    fn update_closest(&mut self) {
        for (c, o) in self.closest.iter_mut().zip(&self.truths) {
            if o.floor == self.robot.floor {
                *c = c.min(
                    self.robot
                        .position
                        .distance(o.position)
                        .min(CLOSEST_DISTANCE_CAP),
                );
            }
        }
    }

    /// Advance one tick. `belief` is what the robot believed when it chose
    /// `u`; it is only used to judge an inspection trigger.
    pub fn step(
        &mut self,
        u: &ControlInput<f64>,
        belief: &GeoSemanticBelief<f64>,
        rng: &mut RngStreams,
    ) -> Vec<WorldEvent> {
        let mut events = Vec::new();
        let u = u.clamped(&self.limits);
        match u.action {
            DiscreteAction::None => {}
            DiscreteAction::SetGait { mode } => {
                if self.robot.gait != mode {
                    self.robot.gait = mode;
                    events.push(WorldEvent::GaitChanged { mode });
                }
            }
            DiscreteAction::TriggerInspect { object_id } => {
                events.push(self.adjudicate(object_id, belief))
            }
        }

        let dt = self.dt;
        let r = &self.robot;
        let (s, c) = r.heading.sin_cos();
        let mut target = r.position + Vec2::new(c * u.vx - s * u.vy, s * u.vx + c * u.vy) * dt;
        // noise is drawn every tick so the motion stream stays aligned
        let nx: f64 = rng.motion.sample(StandardNormal);
        let ny: f64 = rng.motion.sample(StandardNormal);
        let nh: f64 = rng.motion.sample(StandardNormal);
        target += Vec2::new(nx, ny) * self.process_noise;
        let heading = wrap_angle(r.heading + u.omega * dt + nh * self.heading_noise);
        let from = r.position;

        let grid = &self.plan.floors[r.floor];
        let mut next = target;
        if grid.is_wall_at(target) {
            next = clip_to_free(from, target, |p| !grid.is_wall_at(p));
            self.collisions += 1;
            events.push(WorldEvent::Collision { at: next });
        }

        let zone_from = self.zone_at(r.floor, from);
        let zone_to = self.zone_at(r.floor, next);
        if let (None, Some(z)) = (zone_from, zone_to) {
            let zone = &self.zones[z];
            let (_, lateral) = zone.link.local(zone.foot, zone.direction, next);
            let heading_error = wrap_angle(heading - zone.direction).abs();
            let ok = self.robot.gait == Gait::StairGait
                && lateral.abs() <= zone.link.lateral_tolerance
                && heading_error <= zone.link.heading_tolerance;
            let object_id = zone.link.object_id;
            if ok {
                let landing = zone.link.landing;
                let to_floor = zone.link.to_floor;
                self.path_length += from.distance(next);
                self.robot.position = landing.position;
                self.robot.heading = wrap_angle(landing.heading);
                self.robot.floor = to_floor;
                let reward = self.complete(object_id, AffordanceStatus::Ascended);
                events.push(WorldEvent::Ascended {
                    object_id,
                    to_floor,
                    reward,
                });
            } else {
                self.stair_failures += 1;
                self.robot.heading = heading;
                events.push(WorldEvent::StairFailure {
                    object_id,
                    lateral,
                    heading_error,
                    gait: self.robot.gait,
                });
            }
        } else {
            self.path_length += from.distance(next);
            self.robot.position = next;
            self.robot.heading = heading;
        }
        self.tick += 1;
        self.update_closest();
        events
    }

    /// Status change plus reward, if the object was still pending.
    fn complete(&mut self, id: u32, status: AffordanceStatus) -> f64 {
        let Some(o) = self.truths.iter_mut().find(|o| o.id == id) else {
            return 0.0;
        };
        if !o.status.is_pending() || !o.status.can_become(status) {
            return 0.0;
        }
        o.status = status;
        let r = self.sensor.label(o.label).reward;
        self.reward += r;
        r
    }

    fn adjudicate(&mut self, object_id: u32, belief: &GeoSemanticBelief<f64>) -> WorldEvent {
        let fail = |reason: String| WorldEvent::InspectionFailed { object_id, reason };
        let Some(truth) = self.truth(object_id).cloned() else {
            return fail("no such object".into());
        };
        let Some(believed) = belief.object(object_id) else {
            return fail("object is not in the belief".into());
        };
        if truth.status != AffordanceStatus::ToBeInspected {
            return fail(format!("true status is {:?}", truth.status));
        }
        if truth.floor != self.robot.floor {
            return fail("object is on another floor".into());
        }
        let belief_error = believed.mean.distance(truth.position);
        if belief_error > self.inspection.belief_tolerance {
            return fail(format!(
                "believed position is {belief_error:.3} m from the object"
            ));
        }
        let reach = self.sensor.label(truth.label).standoff + self.inspection.standoff_slack;
        let d = self.robot.position.distance(truth.position);
        if d > reach {
            return fail(format!(
                "robot is {d:.3} m from the object, reach is {reach:.3} m"
            ));
        }
        let reward = self.complete(object_id, AffordanceStatus::Inspected);
        WorldEvent::Inspected { object_id, reward }
    }

    fn zone_at(&self, floor: usize, p: Vec2<f64>) -> Option<usize> {
        self.zones
            .iter()
            .position(|z| z.floor == floor && z.link.contains(z.foot, z.direction, p))
    }

    /// One sensor frame from the true pose.
    pub fn observe(&self, rng: &mut RngStreams) -> Vec<Observation<f64>> {
        sample_observations(
            &self.robot,
            &self.truths,
            &self.sensor,
            &self.plan,
            &mut rng.detection,
            &mut rng.measurement,
        )
    }

    /// Noisy absolute pose fix, drawn from the motion stream.
    pub fn pose_fix(&self, noise: [f64; 3], rng: &mut RngStreams) -> [f64; 3] {
        let mut z = [
            self.robot.position.x,
            self.robot.position.y,
            self.robot.heading,
        ];
        for (zi, s) in z.iter_mut().zip(noise) {
            let n: f64 = rng.motion.sample(StandardNormal);
            *zi += n * s;
        }
        z[2] = wrap_angle(z[2]);
        z
    }
}

/// Last point on `from → to` that passes `free`, by bisection. Motion per
/// tick is shorter than a cell, so at most one boundary is crossed.
fn clip_to_free(from: Vec2<f64>, to: Vec2<f64>, free: impl Fn(Vec2<f64>) -> bool) -> Vec2<f64> {
    if !free(from) {
        return from;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if free(from + (to - from) * mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    from + (to - from) * lo
}
