//! Scenario files: world layout, objects, sensor and planner parameters.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::behaviors::{ClimbConfig, CoverageConfig, InspectConfig, PlannerConfig, TrackingGains};
use crate::filter::FilterConfig;
use crate::geometry::{wrap_angle, Vec2};
use crate::graph::Thresholds;
use crate::sensing::{
    ConfusionMatrix, FieldOfView, NoiseCoefficients, NoiseModelParams, SensorModel,
};
use crate::sim::grid::{Cell, FloorPlan, OccupancyGrid};
use crate::types::{
    AffordanceStatus, DecayProfile, LabelId, LabelRegistry, LabelSpec, ObjectTruth, RobotState,
    TaskKind, VelocityLimits,
};

/// Version stamped into scenario and trace files.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{origin}: line {line}, column {column}: at `{field}`: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown bundled scenario `{0}`")]
    UnknownBundled(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ScenarioError> {
    Err(ScenarioError::Invalid(msg.into()))
}

/// One object placement; the label is referenced by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectPlacement {
    pub id: u32,
    pub label: String,
    pub position: Vec2<f64>,
    #[serde(default)]
    pub orientation: f64,
    #[serde(default)]
    pub floor: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DecayProfile<f64>>,
}

/// Stair zone attached to a stairs object: a `depth × 2·half_width`
/// rectangle starting at the object's position and extending along its
/// orientation. Entering it correctly lands the robot on `to_floor`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StairLink {
    pub object_id: u32,
    #[serde(default = "default_stair_depth")]
    pub depth: f64,
    #[serde(default = "default_stair_half_width")]
    pub half_width: f64,
    pub to_floor: usize,
    pub landing: Pose,
    /// Entry acceptance: lateral offset from the centre line, meters.
    #[serde(default = "default_lateral_tolerance")]
    pub lateral_tolerance: f64,
    /// Entry acceptance: heading error, radians.
    #[serde(default = "default_heading_tolerance")]
    pub heading_tolerance: f64,
}

fn default_stair_depth() -> f64 {
    1.0
}
fn default_stair_half_width() -> f64 {
    0.8
}
fn default_lateral_tolerance() -> f64 {
    0.3
}
fn default_heading_tolerance() -> f64 {
    0.2
}

impl StairLink {
    /// `(along, lateral)` of `p` in the zone frame.
    pub fn local(&self, foot: Vec2<f64>, direction: f64, p: Vec2<f64>) -> (f64, f64) {
        let dir = Vec2::from_angle(direction);
        let rel = p - foot;
        (dir.dot(rel), dir.cross(rel))
    }

    pub fn contains(&self, foot: Vec2<f64>, direction: f64, p: Vec2<f64>) -> bool {
        let (a, l) = self.local(foot, direction, p);
        (0.0..=self.depth).contains(&a) && l.abs() <= self.half_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub position: Vec2<f64>,
    #[serde(default)]
    pub heading: f64,
    #[serde(default)]
    pub floor: usize,
}

/// Costs and rewards used to score a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSpec {
    /// Per meter traveled.
    pub distance_cost: f64,
    /// Per simulated second.
    pub time_cost: f64,
    /// Per failed stair entry.
    pub stair_failure_penalty: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            distance_cost: 1.0,
            time_cost: 0.05,
            stair_failure_penalty: 100.0,
        }
    }
}

/// How the simulator judges an inspection trigger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InspectionRules {
    /// Max distance between believed and true object position, meters.
    pub belief_tolerance: f64,
    /// Slack over the label's standoff for the robot-object distance.
    pub standoff_slack: f64,
}

impl Default for InspectionRules {
    fn default() -> Self {
        Self {
            belief_tolerance: 0.5,
            standoff_slack: 0.5,
        }
    }
}

/// Behavior tuning that is not a published parameter.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorTuning {
    pub coverage: CoverageConfig,
    pub inspect: InspectConfig,
    pub climb: ClimbConfig,
    pub tracking: TrackingGains,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldScenario {
    pub format_version: u32,
    pub name: String,
    /// One occupancy grid per floor.
    pub floors: Vec<OccupancyGrid>,
    pub sensor: SensorModel<f64>,
    pub objects: Vec<ObjectPlacement>,
    #[serde(default)]
    pub stairs: Vec<StairLink>,
    pub start: Pose,
    #[serde(default)]
    pub limits: VelocityLimits<f64>,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub behavior: BehaviorTuning,
    #[serde(default)]
    pub filter: FilterConfig<f64>,
    #[serde(default)]
    pub rewards: RewardSpec,
    #[serde(default)]
    pub inspection: InspectionRules,
    /// Simulated seconds.
    #[serde(default = "default_budget")]
    pub budget: f64,
    /// Ticks per simulated second.
    #[serde(default = "default_tick_rate")]
    pub tick_rate: f64,
    pub seed: u64,
    /// Std of the additive position noise per tick, meters.
    #[serde(default = "default_process_noise")]
    pub process_noise: f64,
    /// Std of the additive heading noise per tick, radians.
    #[serde(default)]
    pub heading_noise: f64,
    /// Use the true pose as the robot's pose estimate.
    #[serde(default = "default_true")]
    pub perfect_localization: bool,
    /// Std of the pose fix used when localization is not perfect.
    #[serde(default = "default_fix_noise")]
    pub localization_noise: [f64; 3],
    /// Robot clearance kept from walls by the planners, meters.
    #[serde(default = "default_clearance")]
    pub clearance: f64,
}

fn default_budget() -> f64 {
    700.0
}
fn default_tick_rate() -> f64 {
    10.0
}
fn default_process_noise() -> f64 {
    0.01
}
fn default_true() -> bool {
    true
}
fn default_fix_noise() -> [f64; 3] {
    [0.05, 0.05, 0.02]
}
fn default_clearance() -> f64 {
    0.3
}

fn label(
    name: &str,
    task: Option<TaskKind>,
    detection: DecayProfile<f64>,
    score: DecayProfile<f64>,
    standoff: f64,
) -> LabelSpec<f64> {
    LabelSpec {
        name: name.into(),
        gamma: 1.0,
        score,
        detection,
        standoff,
        task,
        reward: 100.0,
    }
}

/// Default registry: fire extinguishers and doors to inspect, stairs to
/// ascend, and a task-free background class that produces false positives.
pub fn default_labels() -> LabelRegistry<f64> {
    let det = DecayProfile::new(0.9, 2.0, 4.0);
    let score = DecayProfile::new(0.9, 1.5, 8.0);
    LabelRegistry::new(vec![
        label(
            "fire-extinguisher",
            Some(TaskKind::Inspect),
            det,
            score,
            1.0,
        ),
        label("door", Some(TaskKind::Inspect), det, score, 1.5),
        label("stairs", Some(TaskKind::Ascend), det, score, 1.0),
        label(
            "background",
            None,
            DecayProfile::new(0.1, 2.0, 4.0),
            DecayProfile::new(0.3, 2.0, 4.0),
            1.0,
        ),
    ])
    .expect("default registry is valid")
}

/// Default sensor over [`default_labels`].
pub fn default_sensor_model() -> SensorModel<f64> {
    SensorModel {
        labels: default_labels(),
        fov: FieldOfView::default(),
        noise: NoiseModelParams {
            position: NoiseCoefficients {
                distance: 0.05,
                bearing: 0.1,
                label: 0.1,
            },
            orientation: NoiseCoefficients {
                distance: 0.02,
                bearing: 0.05,
                label: 0.05,
            },
            confusion: ConfusionMatrix {
                rows: vec![
                    vec![0.95, 0.03, 0.02, 0.0],
                    vec![0.03, 0.95, 0.02, 0.0],
                    vec![0.02, 0.03, 0.95, 0.0],
                    vec![0.60, 0.35, 0.05, 0.0],
                ],
            },
        },
        score_std: 0.1,
    }
}

const OFFICE_SMALL: &str = include_str!("../../scenarios/office-small.json");
const TWO_FLOOR: &str = include_str!("../../scenarios/two-floor.json");
const OFFICE_TEMPLATE: &str = include_str!("../../scenarios/office-template.json");

/// Names of the scenarios compiled into the library.
pub const BUNDLED: [&str; 2] = ["office-small", "two-floor"];

/// Parse JSON, reporting the failing field path and position.
fn parse_json<T: serde::de::DeserializeOwned>(
    text: &str,
    origin: &str,
) -> Result<T, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ScenarioError::Parse {
            origin: origin.to_string(),
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })
}

impl WorldScenario {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        let s: Self = parse_json(text, origin)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn bundled(name: &str) -> Result<Self, ScenarioError> {
        let text = match name {
            "office-small" => OFFICE_SMALL,
            "two-floor" => TWO_FLOOR,
            other => return Err(ScenarioError::UnknownBundled(other.into())),
        };
        Self::from_json(text, name)
    }

    /// Seconds per tick.
    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate
    }

    pub fn label_id(&self, name: &str) -> Result<LabelId, ScenarioError> {
        self.sensor
            .labels
            .id(name)
            .map_err(|e| ScenarioError::Invalid(e.to_string()))
    }

    /// Floors with the stair zones stamped in as [`Cell::Stair`].
    pub fn floor_plan(&self) -> FloorPlan {
        let mut plan = FloorPlan {
            floors: self.floors.clone(),
        };
        for link in &self.stairs {
            let Some(obj) = self.objects.iter().find(|o| o.id == link.object_id) else {
                continue;
            };
            let Some(g) = plan.floors.get_mut(obj.floor) else {
                continue;
            };
            for y in 0..g.height() {
                for x in 0..g.width() {
                    if g.get((x, y)) == Cell::Free
                        && link.contains(obj.position, obj.orientation, g.center((x, y)))
                    {
                        g.set((x, y), Cell::Stair);
                    }
                }
            }
        }
        plan
    }

    /// Ground-truth objects with their initial statuses.
    pub fn truths(&self) -> Result<Vec<ObjectTruth<f64>>, ScenarioError> {
        self.objects
            .iter()
            .map(|o| {
                let label = self.label_id(&o.label)?;
                Ok(ObjectTruth {
                    id: o.id,
                    position: o.position,
                    orientation: wrap_angle(o.orientation),
                    label,
                    status: AffordanceStatus::initial_for(self.sensor.labels.get(label).task),
                    floor: o.floor,
                    detection: o.detection,
                })
            })
            .collect()
    }

    /// Objects that carry a task (what a run is scored against).
    pub fn task_count(&self) -> usize {
        self.truths()
            .map(|t| t.iter().filter(|o| o.status.is_pending()).count())
            .unwrap_or(0)
    }

    pub fn start_state(&self) -> RobotState<f64> {
        RobotState::new(self.start.position, self.start.heading).on_floor(self.start.floor)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.format_version != FORMAT_VERSION {
            return invalid(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            ));
        }
        if self.floors.is_empty() {
            return invalid("at least one floor is required");
        }
        self.sensor.validate().map_err(ScenarioError::Invalid)?;
        self.thresholds.validate().map_err(ScenarioError::Invalid)?;
        self.planner.validate().map_err(ScenarioError::Invalid)?;
        if !(self.budget > 0.0 && self.budget.is_finite()) {
            return invalid(format!("budget must be > 0, got {}", self.budget));
        }
        if !(self.tick_rate > 0.0 && self.tick_rate.is_finite()) {
            return invalid(format!("tick_rate must be > 0, got {}", self.tick_rate));
        }
        if !(self.process_noise >= 0.0 && self.heading_noise >= 0.0) {
            return invalid("process noise must be >= 0");
        }
        if !(self.limits.max_longitudinal > 0.0
            && self.limits.max_lateral >= 0.0
            && self.limits.max_yaw_rate > 0.0)
        {
            return invalid("velocity limits must be positive");
        }
        let free_at =
            |floor: usize, p: Vec2<f64>| self.floors.get(floor).is_some_and(|g| g.is_free_at(p));
        if !free_at(self.start.floor, self.start.position) {
            return invalid(format!(
                "start pose ({}, {}) on floor {} is not in free space",
                self.start.position.x, self.start.position.y, self.start.floor
            ));
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return invalid(format!("duplicate object id {}", o.id));
            }
            self.label_id(&o.label)?;
            if !free_at(o.floor, o.position) {
                return invalid(format!(
                    "object {} at ({}, {}) on floor {} is not in a free cell",
                    o.id, o.position.x, o.position.y, o.floor
                ));
            }
            if let Some(d) = &o.detection {
                if !d.is_valid() {
                    return invalid(format!("object {} has an invalid detection profile", o.id));
                }
            }
        }
        for link in &self.stairs {
            let Some(obj) = self.objects.iter().find(|o| o.id == link.object_id) else {
                return invalid(format!(
                    "stair link references unknown object {}",
                    link.object_id
                ));
            };
            let task = self.sensor.labels.get(self.label_id(&obj.label)?).task;
            if task != Some(TaskKind::Ascend) {
                return invalid(format!(
                    "stair link object {} is not a label with an ascend task",
                    obj.id
                ));
            }
            if link.to_floor >= self.floors.len() {
                return invalid(format!("stair link to missing floor {}", link.to_floor));
            }
            if link.landing.floor != link.to_floor || !free_at(link.to_floor, link.landing.position)
            {
                return invalid(format!(
                    "stair landing for object {} is not free on floor {}",
                    obj.id, link.to_floor
                ));
            }
            if !(link.depth > 0.0 && link.half_width > 0.0) {
                return invalid("stair zone dimensions must be positive");
            }
        }
        Ok(())
    }
}

pub fn load_scenario(path: &Path) -> Result<WorldScenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    WorldScenario::from_json(&text, &path.display().to_string())
}

/// Bundled name or file path.
pub fn resolve_scenario(name_or_path: &str) -> Result<WorldScenario, ScenarioError> {
    if BUNDLED.contains(&name_or_path) {
        WorldScenario::bundled(name_or_path)
    } else {
        load_scenario(Path::new(name_or_path))
    }
}

/// Recipe for random object layouts on a fixed map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTemplate {
    /// Map, sensor and parameters; its object list is replaced.
    pub base: WorldScenario,
    pub object_count: usize,
    /// Label names with relative frequencies.
    pub label_mix: Vec<(String, f64)>,
    #[serde(default = "default_separation")]
    pub min_separation: f64,
    /// Minimum distance of objects from the start pose, meters.
    #[serde(default = "default_separation")]
    pub min_start_distance: f64,
}

fn default_separation() -> f64 {
    3.0
}

impl ScenarioTemplate {
    pub fn bundled() -> Result<Self, ScenarioError> {
        Self::from_json(OFFICE_TEMPLATE, "office-template")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self, ScenarioError> {
        let t: Self = parse_json(text, origin)?;
        t.base.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text, &path.display().to_string())
    }
}

/// Place `object_count` objects uniformly over free cells of floor 0, at
/// least `min_separation` apart. Deterministic in `(template, seed)`.
pub fn generate_scenario(
    template: &ScenarioTemplate,
    seed: u64,
) -> Result<WorldScenario, ScenarioError> {
    let base = &template.base;
    let weights: Vec<f64> = template.label_mix.iter().map(|(_, w)| *w).collect();
    if template.label_mix.is_empty()
        || weights.iter().any(|w| !(*w >= 0.0))
        || weights.iter().sum::<f64>() <= 0.0
    {
        return invalid("label_mix needs at least one positive weight");
    }
    for (name, _) in &template.label_mix {
        base.label_id(name)?;
    }
    let grid = &base.floors[0];
    let clearance = base.clearance;
    let free: Vec<Vec2<f64>> = grid
        .free_cells()
        .map(|c| grid.center(c))
        .filter(|p| {
            // keep objects off the walls so standoff poses exist
            [0.0f64, 90.0, 180.0, 270.0]
                .iter()
                .all(|a| grid.is_free_at(*p + Vec2::from_angle(a.to_radians()) * clearance))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<ObjectPlacement> = Vec::new();
    let mut attempts = 0usize;
    while placed.len() < template.object_count {
        attempts += 1;
        if attempts > 10_000 * template.object_count.max(1) || free.is_empty() {
            return invalid(format!(
                "could not place {} objects with separation {} m",
                template.object_count, template.min_separation
            ));
        }
        let p = free[rng.random_range(0..free.len())];
        if p.distance(base.start.position) < template.min_start_distance
            || placed
                .iter()
                .any(|o| o.position.distance(p) < template.min_separation)
        {
            continue;
        }
        let u: f64 = rng.random();
        let label = &template.label_mix[crate::sensing::sample_categorical(&weights, u)].0;
        let orientation = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        placed.push(ObjectPlacement {
            id: placed.len() as u32 + 1,
            label: label.clone(),
            position: p,
            orientation,
            floor: 0,
            detection: None,
        });
    }
    let mut s = base.clone();
    s.objects = placed;
    s.stairs.clear();
    s.seed = seed;
    s.name = format!("{}-gen{}", base.name, seed);
    s.validate()?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn office_small_loads_with_six_objects() {
        let s = WorldScenario::bundled("office-small").unwrap();
        assert_eq!(s.objects.len(), 6);
        let g = &s.floors[0];
        assert!((g.extent().x - 20.0).abs() < 1e-9 && (g.extent().y - 12.0).abs() < 1e-9);
        assert_eq!(s.budget, 700.0);
    }

    #[test]
    fn two_floor_loads() {
        let s = WorldScenario::bundled("two-floor").unwrap();
        assert_eq!(s.floors.len(), 2);
        assert_eq!(s.stairs.len(), 1);
        let plan = s.floor_plan();
        let stair = s
            .objects
            .iter()
            .find(|o| o.id == s.stairs[0].object_id)
            .unwrap();
        let inside = stair.position + Vec2::from_angle(stair.orientation) * 0.5;
        let c = plan.floors[0].cell_of(inside).unwrap();
        assert_eq!(plan.floors[0].get(c), Cell::Stair);
    }

    #[test]
    fn object_in_wall_is_rejected() {
        let mut s = WorldScenario::bundled("office-small").unwrap();
        s.objects[0].position = Vec2::new(0.1, 0.1);
        let err = s.validate().unwrap_err();
        assert!(err.to_string().contains("not in a free cell"), "{err}");
    }

    #[test]
    fn parse_error_names_field() {
        let mut v: serde_json::Value = serde_json::from_str(OFFICE_SMALL).unwrap();
        v["budget"] = serde_json::json!("long");
        let err = WorldScenario::from_json(&serde_json::to_string_pretty(&v).unwrap(), "x.json")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("budget") && msg.contains("line"), "{msg}");
    }

    #[test]
    fn round_trip_is_exact() {
        let s = WorldScenario::bundled("office-small").unwrap();
        let back = WorldScenario::from_json(&s.to_json(), "rt").unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn generation_is_deterministic_and_separated() {
        let t = ScenarioTemplate::bundled().unwrap();
        let a = generate_scenario(&t, 5).unwrap();
        let b = generate_scenario(&t, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.objects.len(), t.object_count);
        for (i, x) in a.objects.iter().enumerate() {
            for y in &a.objects[i + 1..] {
                assert!(x.position.distance(y.position) >= t.min_separation);
            }
        }
        assert_ne!(generate_scenario(&t, 6).unwrap().objects, a.objects);
    }
}
