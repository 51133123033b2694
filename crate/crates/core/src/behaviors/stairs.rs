//! Stair climbing: line up with the flight, switch gait, walk up, switch
//! back.

use serde::{Deserialize, Serialize};

use crate::behaviors::nav::{drive_toward, NavMap, PathTracker, TrackingGains};
use crate::geometry::{wrap_angle, Vec2};
use crate::types::{ControlInput, DiscreteAction, Gait, ObjectBelief, RobotState, VelocityLimits};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClimbConfig {
    /// Distance of the entry pose before the first step, meters.
    pub approach: f64,
    /// Alignment required before switching gait (tighter than the
    /// simulator's acceptance so noise does not tip it over).
    pub position_tolerance: f64,
    pub heading_tolerance: f64,
    /// Forward speed on the flight, m/s.
    pub climb_speed: f64,
}

impl Default for ClimbConfig {
    fn default() -> Self {
        Self {
            approach: 1.0,
            position_tolerance: 0.1,
            heading_tolerance: 0.05,
            climb_speed: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClimbPhase {
    Approach,
    Traverse,
    Exit,
    Done,
}

/// Entry pose of a flight whose foot is at `obj.mean` and which ascends
/// along `obj.heading_mean`.
pub fn entry_pose(
    obj: &ObjectBelief<f64>,
    approach: f64,
    robot: &RobotState<f64>,
) -> RobotState<f64> {
    let dir = Vec2::from_angle(obj.heading_mean);
    RobotState {
        position: obj.mean - dir * approach,
        heading: wrap_angle(obj.heading_mean),
        ..*robot
    }
}

#[derive(Debug, Clone)]
pub struct ClimbStairs {
    target: Option<u32>,
    phase: ClimbPhase,
    start_floor: usize,
    tracker: PathTracker,
    /// Ascent line frozen at gait switch.
    line: Option<(Vec2<f64>, f64)>,
}

impl Default for ClimbStairs {
    fn default() -> Self {
        Self {
            target: None,
            phase: ClimbPhase::Approach,
            start_floor: 0,
            tracker: PathTracker::default(),
            line: None,
        }
    }
}

impl ClimbStairs {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn phase(&self) -> ClimbPhase {
        self.phase
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    /// The simulator refused the entry: start over from the approach.
    pub fn on_failure(&mut self) {
        self.phase = ClimbPhase::Approach;
        self.tracker = PathTracker::default();
        self.line = None;
    }

    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        robot: &RobotState<f64>,
        obj: &ObjectBelief<f64>,
        nav: &NavMap,
        cfg: &ClimbConfig,
        limits: &VelocityLimits<f64>,
        gains: &TrackingGains,
    ) -> (ControlInput<f64>, ClimbPhase) {
        if self.target != Some(obj.id) {
            self.reset();
            self.target = Some(obj.id);
            self.start_floor = robot.floor;
        }
        match self.phase {
            ClimbPhase::Approach => {
                if robot.gait != Gait::Walk {
                    return (
                        ControlInput::action(DiscreteAction::SetGait { mode: Gait::Walk }),
                        self.phase,
                    );
                }
                let entry = entry_pose(obj, cfg.approach, robot);
                let err = entry.position.distance(robot.position);
                let herr = wrap_angle(entry.heading - robot.heading).abs();
                if err < cfg.position_tolerance && herr < cfg.heading_tolerance {
                    self.phase = ClimbPhase::Traverse;
                    self.line = Some((entry.position, entry.heading));
                    return (
                        ControlInput::action(DiscreteAction::SetGait {
                            mode: Gait::StairGait,
                        }),
                        self.phase,
                    );
                }
                if err < 0.5 || nav.segment_open(robot.floor, robot.position, entry.position) {
                    return (
                        drive_toward(
                            robot,
                            entry.position,
                            err,
                            Some(entry.heading),
                            limits,
                            gains,
                        ),
                        self.phase,
                    );
                }
                if self.tracker.is_empty()
                    || self
                        .tracker
                        .goal()
                        .is_none_or(|g| g.distance(entry.position) > 0.3)
                {
                    match nav.shortest_path(robot.floor, robot.position, entry.position) {
                        Some(p) => self.tracker = PathTracker::new(p),
                        None => return (ControlInput::zero(), self.phase),
                    }
                }
                (
                    self.tracker
                        .control(robot, Some(entry.heading), limits, gains),
                    self.phase,
                )
            }
            ClimbPhase::Traverse => {
                if robot.floor != self.start_floor {
                    self.phase = ClimbPhase::Exit;
                    return (
                        ControlInput::action(DiscreteAction::SetGait { mode: Gait::Walk }),
                        self.phase,
                    );
                }
                let (origin, heading) = self.line.unwrap_or((robot.position, robot.heading));
                let dir = Vec2::from_angle(heading);
                let rel = robot.position - origin;
                let lateral = dir.cross(rel);
                // hold the centre line while walking up
                let world = dir * cfg.climb_speed + Vec2::new(-dir.y, dir.x) * (-lateral);
                let body = world.rotate(-robot.heading);
                let omega = (gains.k_heading * wrap_angle(heading - robot.heading))
                    .clamp(-limits.max_yaw_rate, limits.max_yaw_rate);
                let u = ControlInput::velocity(
                    body.x
                        .clamp(-limits.max_longitudinal, limits.max_longitudinal),
                    body.y.clamp(-limits.max_lateral, limits.max_lateral),
                    omega,
                );
                (u, self.phase)
            }
            ClimbPhase::Exit => {
                if robot.gait == Gait::Walk {
                    self.phase = ClimbPhase::Done;
                    (ControlInput::zero(), self.phase)
                } else {
                    (
                        ControlInput::action(DiscreteAction::SetGait { mode: Gait::Walk }),
                        self.phase,
                    )
                }
            }
            ClimbPhase::Done => (ControlInput::zero(), self.phase),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Cov2;
    use crate::sim::grid::{FloorPlan, OccupancyGrid};
    use crate::types::AffordanceStatus;

    fn stairs() -> ObjectBelief<f64> {
        ObjectBelief {
            id: 9,
            mean: Vec2::new(5.0, 5.0),
            cov: Cov2::isotropic(0.01),
            heading_mean: 0.0,
            heading_var: 0.001,
            labels: vec![0.0, 0.0, 1.0, 0.0],
            status: AffordanceStatus::ToBeAscended,
            floor: 0,
            last_miss_update: None,
        }
    }

    #[test]
    fn aligned_robot_switches_gait_then_walks_up() {
        let nav = NavMap::new(
            FloorPlan::single(OccupancyGrid::walled_room(0.25, 10.0, 10.0)),
            0.3,
        );
        let mut robot = RobotState::<f64>::new(Vec2::new(4.0, 5.0), 0.0);
        let mut c = ClimbStairs::new();
        let cfg = ClimbConfig::default();
        let limits = VelocityLimits::default();
        let (u, phase) = c.step(
            &robot,
            &stairs(),
            &nav,
            &cfg,
            &limits,
            &TrackingGains::default(),
        );
        assert_eq!(phase, ClimbPhase::Traverse);
        assert_eq!(
            u.action,
            DiscreteAction::SetGait {
                mode: Gait::StairGait
            }
        );
        robot.gait = Gait::StairGait;
        let (u, _) = c.step(
            &robot,
            &stairs(),
            &nav,
            &cfg,
            &limits,
            &TrackingGains::default(),
        );
        assert!(u.vx > 0.2 && u.vy.abs() < 1e-9);
        robot.floor = 1;
        let (u, phase) = c.step(
            &robot,
            &stairs(),
            &nav,
            &cfg,
            &limits,
            &TrackingGains::default(),
        );
        assert_eq!(phase, ClimbPhase::Exit);
        assert_eq!(u.action, DiscreteAction::SetGait { mode: Gait::Walk });
    }
}
