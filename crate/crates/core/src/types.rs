//! Robot, object, observation and belief value types.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Cov2, Vec2};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("degenerate evidence: every label weight is zero")]
    DegenerateEvidence,
    #[error("label weights must be finite and non-negative (got {0})")]
    InvalidWeight(f64),
    #[error("affordance status cannot move from {from:?} to {to:?}")]
    NonMonotoneStatus {
        from: AffordanceStatus,
        to: AffordanceStatus,
    },
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("invalid label registry: {0}")]
    InvalidRegistry(String),
}

/// Locomotion mode of the robot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gait {
    #[default]
    Walk,
    StairGait,
}

/// True (simulated) robot state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RobotState<T> {
    pub position: Vec2<T>,
    /// Yaw in (−π, π].
    pub heading: T,
    #[serde(default)]
    pub floor: usize,
    #[serde(default)]
    pub gait: Gait,
    #[serde(default = "default_true")]
    pub sensor_active: bool,
}

fn default_true() -> bool {
    true
}

impl<T: Scalar> RobotState<T> {
    pub fn new(position: Vec2<T>, heading: T) -> Self {
        Self {
            position,
            heading: wrap_angle(heading),
            floor: 0,
            gait: Gait::Walk,
            sensor_active: true,
        }
    }

    pub fn on_floor(mut self, floor: usize) -> Self {
        self.floor = floor;
        self
    }
}

/// Index into a [`LabelRegistry`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub u16);

impl LabelId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// What the robot is expected to do with an object of a given label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Inspect,
    Ascend,
}

/// Distance-decay profile `peak · exp(−|optimal − d| / decay)`.
///
/// Used both for the detection probability and for the expected detector score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayProfile<T> {
    pub peak: T,
    pub optimal_distance: T,
    pub decay: T,
}

impl<T: Scalar> DecayProfile<T> {
    pub fn new(peak: T, optimal_distance: T, decay: T) -> Self {
        Self {
            peak,
            optimal_distance,
            decay,
        }
    }

    #[inline]
    pub fn eval(&self, distance: T) -> T {
        self.peak * (-(self.optimal_distance - distance).abs() / self.decay).exp()
    }

    pub fn is_valid(&self) -> bool {
        self.peak > T::zero()
            && self.peak <= T::one()
            && self.optimal_distance >= T::zero()
            && self.decay > T::zero()
    }
}

/// One semantic class of the label registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec<T> {
    pub name: String,
    /// Class-dependent noise factor γ(l).
    pub gamma: T,
    /// Expected detector score versus distance.
    pub score: DecayProfile<T>,
    /// Per-label detection probability profile.
    pub detection: DecayProfile<T>,
    /// Inspection / approach standoff, meters.
    pub standoff: T,
    /// `None` for classes that carry no task (clutter, spurious detections).
    #[serde(default)]
    pub task: Option<TaskKind>,
    /// Reward for completing this label's task.
    #[serde(default = "default_reward")]
    pub reward: f64,
}

fn default_reward() -> f64 {
    100.0
}

/// Scenario-declared set of semantic classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelRegistry<T> {
    pub labels: Vec<LabelSpec<T>>,
}

impl<T: Scalar> LabelRegistry<T> {
    pub fn new(labels: Vec<LabelSpec<T>>) -> Result<Self, CoreError> {
        let reg = Self { labels };
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        if self.labels.is_empty() {
            return Err(CoreError::InvalidRegistry("registry is empty".into()));
        }
        if self.labels.len() > u16::MAX as usize {
            return Err(CoreError::InvalidRegistry("too many labels".into()));
        }
        for (i, l) in self.labels.iter().enumerate() {
            if self.labels[..i].iter().any(|o| o.name == l.name) {
                return Err(CoreError::InvalidRegistry(format!(
                    "duplicate label `{}`",
                    l.name
                )));
            }
            if !(l.gamma > T::zero()) {
                return Err(CoreError::InvalidRegistry(format!(
                    "{}: gamma must be > 0",
                    l.name
                )));
            }
            if !l.score.is_valid() {
                return Err(CoreError::InvalidRegistry(format!(
                    "{}: score parameters need 0 < p <= 1, m >= 0, v > 0",
                    l.name
                )));
            }
            if !l.detection.is_valid() {
                return Err(CoreError::InvalidRegistry(format!(
                    "{}: detection parameters need 0 < p0 <= 1, m0 >= 0, v0 > 0",
                    l.name
                )));
            }
            if !(l.standoff >= T::zero()) {
                return Err(CoreError::InvalidRegistry(format!(
                    "{}: standoff must be >= 0",
                    l.name
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn get(&self, id: LabelId) -> &LabelSpec<T> {
        &self.labels[id.index()]
    }

    pub fn id(&self, name: &str) -> Result<LabelId, CoreError> {
        self.labels
            .iter()
            .position(|l| l.name == name)
            .map(|i| LabelId(i as u16))
            .ok_or_else(|| CoreError::UnknownLabel(name.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = LabelId> {
        (0..self.labels.len()).map(|i| LabelId(i as u16))
    }
}

/// Task status of an object. Transitions are monotone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AffordanceStatus {
    ToBeInspected,
    Inspected,
    ToBeAscended,
    Ascended,
    /// Search concluded the object is not of the expected class; also the
    /// status of objects whose class carries no task.
    Dismissed,
}

impl AffordanceStatus {
    pub fn initial_for(task: Option<TaskKind>) -> Self {
        match task {
            Some(TaskKind::Inspect) => Self::ToBeInspected,
            Some(TaskKind::Ascend) => Self::ToBeAscended,
            None => Self::Dismissed,
        }
    }

    #[inline]
    pub fn is_pending(self) -> bool {
        matches!(self, Self::ToBeInspected | Self::ToBeAscended)
    }

    #[inline]
    pub fn is_resolved(self) -> bool {
        !self.is_pending()
    }

    /// Inspected or ascended.
    #[inline]
    pub fn is_completed(self) -> bool {
        matches!(self, Self::Inspected | Self::Ascended)
    }

    /// Resolved statuses are final; an open task may be re-typed (a track
    /// first seen as a door can turn out to be stairs) or resolved.
    pub fn can_become(self, next: Self) -> bool {
        use AffordanceStatus::*;
        self == next
            || (self.is_pending() && next.is_pending())
            || matches!(
                (self, next),
                (ToBeInspected, Inspected)
                    | (ToBeInspected, Dismissed)
                    | (ToBeAscended, Ascended)
                    | (ToBeAscended, Dismissed)
            )
    }

    pub fn transition(self, next: Self) -> Result<Self, CoreError> {
        if self.can_become(next) {
            Ok(next)
        } else {
            Err(CoreError::NonMonotoneStatus {
                from: self,
                to: next,
            })
        }
    }
}

/// Ground-truth object placed in the simulated world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ObjectTruth<T> {
    pub id: u32,
    pub position: Vec2<T>,
    /// Facing direction, radians.
    #[serde(default)]
    pub orientation: T,
    pub label: LabelId,
    pub status: AffordanceStatus,
    #[serde(default)]
    pub floor: usize,
    /// Per-object override of the label's detection profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DecayProfile<T>>,
}

/// Geo-semantic measurement of one object, already associated by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation<T> {
    pub object_id: u32,
    pub position: Vec2<T>,
    pub orientation: T,
    pub label: LabelId,
    /// Detector confidence in [0, 1].
    pub score: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DiscreteAction {
    #[default]
    None,
    TriggerInspect {
        object_id: u32,
    },
    SetGait {
        mode: Gait,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityLimits<T> {
    pub max_longitudinal: T,
    pub max_lateral: T,
    pub max_yaw_rate: T,
}

impl<T: Scalar> Default for VelocityLimits<T> {
    fn default() -> Self {
        Self {
            max_longitudinal: T::lit(1.0),
            max_lateral: T::lit(0.5),
            max_yaw_rate: T::lit(1.0),
        }
    }
}

/// Body-frame velocity command plus an optional discrete action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput<T> {
    pub vx: T,
    pub vy: T,
    pub omega: T,
    #[serde(default)]
    pub action: DiscreteAction,
}

impl<T: Scalar> ControlInput<T> {
    pub fn zero() -> Self {
        Self::velocity(T::zero(), T::zero(), T::zero())
    }

    pub fn velocity(vx: T, vy: T, omega: T) -> Self {
        Self {
            vx,
            vy,
            omega,
            action: DiscreteAction::None,
        }
    }

    pub fn action(action: DiscreteAction) -> Self {
        Self {
            action,
            ..Self::zero()
        }
    }

    pub fn is_stationary(&self) -> bool {
        self.vx == T::zero() && self.vy == T::zero() && self.omega == T::zero()
    }

    /// Clamp each velocity component to the limits. NaN becomes zero.
    pub fn clamped(mut self, limits: &VelocityLimits<T>) -> Self {
        let clip = |v: T, m: T| {
            if v.is_nan() {
                T::zero()
            } else {
                v.max(-m).min(m)
            }
        };
        self.vx = clip(self.vx, limits.max_longitudinal);
        self.vy = clip(self.vy, limits.max_lateral);
        self.omega = clip(self.omega, limits.max_yaw_rate);
        self
    }

    pub fn within(&self, limits: &VelocityLimits<T>) -> bool {
        self.vx.abs() <= limits.max_longitudinal
            && self.vy.abs() <= limits.max_lateral
            && self.omega.abs() <= limits.max_yaw_rate
    }
}

/// Belief over one object's pose, class and status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ObjectBelief<T> {
    pub id: u32,
    pub mean: Vec2<T>,
    pub cov: Cov2<T>,
    pub heading_mean: T,
    pub heading_var: T,
    /// Categorical class distribution indexed by [`LabelId`].
    pub labels: Vec<T>,
    pub status: AffordanceStatus,
    #[serde(default)]
    pub floor: usize,
    /// Simulated time of the last negative-information update.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_miss_update: Option<T>,
}

impl<T: Scalar> ObjectBelief<T> {
    pub fn label_probability(&self, label: LabelId) -> T {
        self.labels.get(label.index()).copied().unwrap_or(T::zero())
    }

    /// Most probable label; ties go to the lower id.
    pub fn map_label(&self) -> LabelId {
        let mut best = 0;
        for (i, p) in self.labels.iter().enumerate() {
            if *p > self.labels[best] {
                best = i;
            }
        }
        LabelId(best as u16)
    }

    pub fn position_std(&self) -> T {
        self.cov.max_marginal_std()
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let sum: T = self.labels.iter().copied().sum();
        if (sum - T::one()).abs() > T::lit(1e-9) {
            return Err(format!("label distribution sums to {sum}"));
        }
        if self.labels.iter().any(|p| !(*p >= T::zero())) {
            return Err("negative label probability".into());
        }
        if !self.cov.is_psd(T::lit(1e-10)) {
            return Err(format!("covariance not PSD: {:?}", self.cov));
        }
        Ok(())
    }
}

/// Gaussian belief over the robot pose `(x, y, θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotPoseBelief<T> {
    pub mean: [T; 3],
    pub cov: [[T; 3]; 3],
}

impl<T: Scalar> RobotPoseBelief<T> {
    pub fn exact(state: &RobotState<T>) -> Self {
        Self {
            mean: [state.position.x, state.position.y, state.heading],
            cov: [[T::zero(); 3]; 3],
        }
    }

    #[inline]
    pub fn position(&self) -> Vec2<T> {
        Vec2::new(self.mean[0], self.mean[1])
    }

    #[inline]
    pub fn heading(&self) -> T {
        self.mean[2]
    }
}

/// Joint robot + object belief.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GeoSemanticBelief<T> {
    pub robot: RobotPoseBelief<T>,
    /// Known locomotion state of the robot.
    pub gait: Gait,
    pub floor: usize,
    pub objects: BTreeMap<u32, ObjectBelief<T>>,
    pub time: T,
}

impl<T: Scalar> GeoSemanticBelief<T> {
    pub fn new(robot: &RobotState<T>) -> Self {
        Self {
            robot: RobotPoseBelief::exact(robot),
            gait: robot.gait,
            floor: robot.floor,
            objects: BTreeMap::new(),
            time: T::zero(),
        }
    }

    /// Robot state as the robot believes it to be.
    pub fn robot_state(&self) -> RobotState<T> {
        RobotState {
            position: self.robot.position(),
            heading: self.robot.heading(),
            floor: self.floor,
            gait: self.gait,
            sensor_active: true,
        }
    }

    pub fn object(&self, id: u32) -> Option<&ObjectBelief<T>> {
        self.objects.get(&id)
    }

    /// Record a status the robot learned (e.g. from a completed task).
    pub fn set_status(&mut self, id: u32, status: AffordanceStatus) -> Result<(), CoreError> {
        if let Some(obj) = self.objects.get_mut(&id) {
            obj.status = obj.status.transition(status)?;
        }
        Ok(())
    }
}

/// Normalize non-negative weights into a probability vector.
pub fn normalize_label_distribution<T: Scalar>(weights: &[T]) -> Result<Vec<T>, CoreError> {
    let mut total = T::zero();
    for w in weights {
        if !(*w >= T::zero()) || !w.is_finite() {
            return Err(CoreError::InvalidWeight(w.to_f64_lossy()));
        }
        total = total + *w;
    }
    if total <= T::zero() {
        return Err(CoreError::DegenerateEvidence);
    }
    Ok(weights.iter().map(|w| *w / total).collect())
}

/// Uniform distribution over `n` labels.
pub fn uniform<T: Scalar>(n: usize) -> Vec<T> {
    vec![T::one() / T::from_usize(n).unwrap(); n]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize_label_distribution(&[2.0f64, 2.0]).unwrap(),
            vec![0.5, 0.5]
        );
        assert_eq!(
            normalize_label_distribution(&[0.0f64, 3.0, 1.0]).unwrap(),
            vec![0.0, 0.75, 0.25]
        );
        assert_eq!(
            normalize_label_distribution(&[0.0f64, 0.0]),
            Err(CoreError::DegenerateEvidence)
        );
        assert!(matches!(
            normalize_label_distribution(&[-1.0f64, 2.0]),
            Err(CoreError::InvalidWeight(_))
        ));
    }

    #[test]
    fn status_is_monotone() {
        use AffordanceStatus::*;
        assert_eq!(ToBeInspected.transition(Inspected), Ok(Inspected));
        assert_eq!(ToBeAscended.transition(Dismissed), Ok(Dismissed));
        assert!(Inspected.transition(ToBeInspected).is_err());
        assert!(Dismissed.transition(ToBeInspected).is_err());
        assert!(ToBeInspected.transition(Ascended).is_err());
        assert!(Ascended.transition(Dismissed).is_err());
    }

    #[test]
    fn clamp_respects_limits() {
        let lim = VelocityLimits::<f64>::default();
        let u = ControlInput::velocity(3.0, -2.0, f64::NAN).clamped(&lim);
        assert_eq!((u.vx, u.vy, u.omega), (1.0, -0.5, 0.0));
        assert!(u.within(&lim));
    }

    #[test]
    fn status_serializes_kebab() {
        let s = serde_json::to_string(&AffordanceStatus::ToBeInspected).unwrap();
        assert_eq!(s, "\"to-be-inspected\"");
        let a = serde_json::to_string(&DiscreteAction::TriggerInspect { object_id: 4 }).unwrap();
        assert_eq!(a, r#"{"kind":"trigger-inspect","object_id":4}"#);
    }

    fn arb_belief() -> impl Strategy<Value = ObjectBelief<f64>> {
        (
            any::<u32>(),
            -50.0f64..50.0,
            -50.0f64..50.0,
            0.001f64..10.0,
            -3.0f64..3.0,
            prop::collection::vec(0.001f64..1.0, 1..6),
            prop::option::of(0.0f64..700.0),
        )
            .prop_map(|(id, x, y, v, h, w, miss)| ObjectBelief {
                id,
                mean: Vec2::new(x, y),
                cov: Cov2::isotropic(v),
                heading_mean: h,
                heading_var: v / 3.0,
                labels: normalize_label_distribution(&w).unwrap(),
                status: AffordanceStatus::ToBeInspected,
                floor: 0,
                last_miss_update: miss,
            })
    }

    proptest! {
        #[test]
        fn belief_json_round_trip(b in arb_belief()) {
            let s = serde_json::to_string(&b).unwrap();
            let back: ObjectBelief<f64> = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back, b);
        }

        #[test]
        fn normalized_sums_to_one(w in prop::collection::vec(0.0f64..100.0, 1..10)) {
            prop_assume!(w.iter().any(|v| *v > 0.0));
            let p = normalize_label_distribution(&w).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
