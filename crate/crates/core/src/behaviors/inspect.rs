//! Object inspection: go to the standoff pose in front of the object, face
//! it, trigger the inspection.

use serde::{Deserialize, Serialize};

use crate::behaviors::nav::{drive_toward, NavMap, PathTracker, TrackingGains};
use crate::geometry::{wrap_angle, Vec2};
use crate::types::{ControlInput, DiscreteAction, ObjectBelief, RobotState, VelocityLimits};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InspectConfig {
    /// Position tolerance at the standoff pose before triggering, meters.
    pub position_tolerance: f64,
    /// Heading tolerance before triggering, radians.
    pub heading_tolerance: f64,
    /// Wait between repeated triggers on the same object, seconds.
    pub retry_period: f64,
    /// Path replanning period, seconds.
    pub replan_period: f64,
}

impl Default for InspectConfig {
    fn default() -> Self {
        Self {
            position_tolerance: 0.1,
            heading_tolerance: 0.1,
            retry_period: 2.0,
            replan_period: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InspectStatus {
    Approaching,
    /// The trigger was emitted this tick.
    Triggered,
    /// At the pose, waiting before a retry.
    Waiting,
    /// No reachable standoff pose.
    Blocked,
}

/// Standoff pose for `obj`: `standoff` meters along its believed facing
/// direction, looking back at it. Falls back to the open point on the
/// standoff circle closest in angle to the facing direction.
pub fn standoff_pose(
    obj: &ObjectBelief<f64>,
    standoff: f64,
    nav: &NavMap,
    robot: &RobotState<f64>,
) -> Option<RobotState<f64>> {
    const RING: usize = 36;
    let mut best: Option<(f64, Vec2<f64>)> = None;
    for k in 0..=RING {
        // 0, +δ, −δ, +2δ, ...
        let step = k.div_ceil(2) as f64 * (std::f64::consts::TAU / RING as f64);
        let offset = if k % 2 == 1 { step } else { -step };
        let angle = obj.heading_mean + offset;
        let p = obj.mean + Vec2::from_angle(angle) * standoff;
        if nav.is_open_at(obj.floor, p) {
            let key = offset.abs();
            if best.is_none_or(|(b, _)| key < b) {
                best = Some((key, p));
            }
            break;
        }
    }
    let (_, p) = best?;
    Some(RobotState {
        position: p,
        heading: wrap_angle((obj.mean - p).angle()),
        ..*robot
    })
}

/// Inspection behavior state.
#[derive(Debug, Clone, Default)]
pub struct Inspect {
    target: Option<u32>,
    tracker: PathTracker,
    planned_at: f64,
    planned_goal: Option<Vec2<f64>>,
    last_trigger: Option<f64>,
}

impl Inspect {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        robot: &RobotState<f64>,
        time: f64,
        obj: &ObjectBelief<f64>,
        standoff: f64,
        nav: &NavMap,
        cfg: &InspectConfig,
        limits: &VelocityLimits<f64>,
        gains: &TrackingGains,
    ) -> (ControlInput<f64>, InspectStatus) {
        if self.target != Some(obj.id) {
            self.reset();
            self.target = Some(obj.id);
        }
        let Some(goal) = standoff_pose(obj, standoff, nav, robot) else {
            return (ControlInput::zero(), InspectStatus::Blocked);
        };
        let err = goal.position.distance(robot.position);
        let herr = wrap_angle(goal.heading - robot.heading).abs();
        if err < cfg.position_tolerance && herr < cfg.heading_tolerance {
            let ready = self
                .last_trigger
                .is_none_or(|t| time - t >= cfg.retry_period);
            if ready {
                self.last_trigger = Some(time);
                return (
                    ControlInput::action(DiscreteAction::TriggerInspect { object_id: obj.id }),
                    InspectStatus::Triggered,
                );
            }
            return (ControlInput::zero(), InspectStatus::Waiting);
        }
        if nav.segment_open(robot.floor, robot.position, goal.position) || err < 0.5 {
            self.tracker = PathTracker::default();
            let u = drive_toward(robot, goal.position, err, Some(goal.heading), limits, gains);
            return (u, InspectStatus::Approaching);
        }
        let moved = self
            .planned_goal
            .is_none_or(|g| g.distance(goal.position) > 0.3);
        if self.tracker.is_empty() || moved || time - self.planned_at >= cfg.replan_period {
            match nav.shortest_path(robot.floor, robot.position, goal.position) {
                Some(path) => {
                    self.tracker = PathTracker::new(path);
                    self.planned_goal = Some(goal.position);
                    self.planned_at = time;
                }
                None => return (ControlInput::zero(), InspectStatus::Blocked),
            }
        }
        (
            self.tracker
                .control(robot, Some(goal.heading), limits, gains),
            InspectStatus::Approaching,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Cov2;
    use crate::sim::grid::{FloorPlan, OccupancyGrid};
    use crate::types::AffordanceStatus;

    fn obj(at: Vec2<f64>, facing: f64) -> ObjectBelief<f64> {
        ObjectBelief {
            id: 4,
            mean: at,
            cov: Cov2::isotropic(0.01),
            heading_mean: facing,
            heading_var: 0.01,
            labels: vec![1.0, 0.0, 0.0, 0.0],
            status: AffordanceStatus::ToBeInspected,
            floor: 0,
            last_miss_update: None,
        }
    }

    fn nav() -> NavMap {
        NavMap::new(
            FloorPlan::single(OccupancyGrid::walled_room(0.25, 10.0, 10.0)),
            0.3,
        )
    }

    #[test]
    fn at_standoff_triggers_immediately() {
        let nav = nav();
        let o = obj(Vec2::new(5.0, 5.0), std::f64::consts::PI);
        let robot = RobotState::<f64>::new(Vec2::new(4.0, 5.0), 0.0);
        let mut b = Inspect::new();
        let (u, s) = b.step(
            &robot,
            0.0,
            &o,
            1.0,
            &nav,
            &InspectConfig::default(),
            &VelocityLimits::default(),
            &TrackingGains::default(),
        );
        assert_eq!(s, InspectStatus::Triggered);
        assert_eq!(u.action, DiscreteAction::TriggerInspect { object_id: 4 });
        // no immediate re-trigger
        let (_, s) = b.step(
            &robot,
            0.1,
            &o,
            1.0,
            &nav,
            &InspectConfig::default(),
            &VelocityLimits::default(),
            &TrackingGains::default(),
        );
        assert_eq!(s, InspectStatus::Waiting);
    }

    #[test]
    fn approach_error_shrinks_monotonically() {
        let nav = nav();
        // object 1.5 m ahead, facing the robot
        let o = obj(Vec2::new(4.5, 5.0), std::f64::consts::PI);
        let mut robot = RobotState::<f64>::new(Vec2::new(3.0, 5.0), 0.0);
        let mut b = Inspect::new();
        let limits = VelocityLimits::default();
        let goal = Vec2::new(3.5, 5.0);
        let mut prev = robot.position.distance(goal);
        let mut triggered = false;
        for k in 0..200 {
            let (u, s) = b.step(
                &robot,
                k as f64 * 0.1,
                &o,
                1.0,
                &nav,
                &InspectConfig::default(),
                &limits,
                &TrackingGains::default(),
            );
            assert!(u.within(&limits));
            if s == InspectStatus::Triggered {
                assert!(prev < 0.1);
                triggered = true;
                break;
            }
            let v = Vec2::new(u.vx, u.vy).rotate(robot.heading);
            robot.position += v * 0.1;
            robot.heading = wrap_angle(robot.heading + u.omega * 0.1);
            let d = robot.position.distance(goal);
            assert!(d <= prev + 1e-12, "error grew at tick {k}: {prev} -> {d}");
            prev = d;
        }
        assert!(triggered);
    }

    #[test]
    fn standoff_avoids_walls() {
        let nav = nav();
        // facing straight into the wall 0.5 m away
        let o = obj(Vec2::new(9.2, 5.0), 0.0);
        let robot = RobotState::<f64>::new(Vec2::new(5.0, 5.0), 0.0);
        let p = standoff_pose(&o, 1.0, &nav, &robot).unwrap();
        assert!(nav.is_open_at(0, p.position));
        assert!((p.position.distance(o.mean) - 1.0).abs() < 1e-9);
    }
}
