//! Active semantic search: receding-horizon entropy minimization over a
//! sparsely sampled tree, solved by branch and bound.
//!
//! The tree is fully determined by the root seed. Every node derives its
//! own RNG from its seed, so candidate poses and observation outcomes are
//! identical no matter which evaluator walks the tree or in what order.
//! That is what makes [`branch_and_bound`] comparable to [`exhaustive`].

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::behaviors::coverage::CoverageGrid;
use crate::behaviors::entropy::entropy_objective;
use crate::behaviors::nav::{drive_toward, NavMap, TrackingGains};
use crate::filter::{detection_profile_at_mean, update_no_detection_with, DetectionUpdate};
use crate::geometry::{wrap_angle, Vec2};
use crate::graph::predicates::{evaluate_predicate, BeliefPredicate, PredicateKind, Thresholds};
use crate::sensing::{sample_categorical, sample_measurement, SensorModel};
use crate::sim::grid::Cell;
use crate::types::{
    ControlInput, GeoSemanticBelief, LabelId, ObjectBelief, ObjectTruth, RobotState, VelocityLimits,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Lookahead, seconds.
    pub horizon: f64,
    /// Candidate poses sampled per node.
    pub action_samples: usize,
    /// Tree depth; each step lasts `horizon / steps`.
    pub steps: usize,
    /// Weight of the pose term in the objective.
    pub pose_weight: f64,
    /// Sampled detections per candidate, on top of the no-detection branch.
    pub outcome_samples: usize,
    /// Radial displacement range of candidate poses, meters.
    pub min_step: f64,
    pub max_step: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 8.0,
            action_samples: 8,
            steps: 4,
            pose_weight: 0.1,
            outcome_samples: 3,
            min_step: 0.5,
            max_step: 2.0,
        }
    }
}

impl PlannerConfig {
    pub fn step_duration(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.action_samples == 0 || self.steps == 0 || self.outcome_samples == 0 {
            return Err("planner counts must be >= 1".into());
        }
        if !(self.horizon > 0.0) {
            return Err(format!("planner horizon must be > 0, got {}", self.horizon));
        }
        if !(self.min_step > 0.0 && self.max_step >= self.min_step) {
            return Err("planner step range must satisfy 0 < min_step <= max_step".into());
        }
        if !(self.pose_weight >= 0.0) {
            return Err("planner pose_weight must be >= 0".into());
        }
        Ok(())
    }
}

/// Belief state at a tree node: where the robot would be and what it
/// would believe about the target.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchNode {
    pub robot: RobotState<f64>,
    pub object: ObjectBelief<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub weight: f64,
    pub node: SearchNode,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    /// Inner nodes whose candidate poses were generated.
    pub expanded: u64,
    /// Candidate actions cut off before full evaluation.
    pub pruned: u64,
    /// Leaf beliefs scored.
    pub leaves: u64,
}

/// Everything the tree needs besides the node itself.
#[derive(Clone, Copy)]
pub struct SearchContext<'a> {
    pub model: &'a SensorModel<f64>,
    pub nav: &'a NavMap,
    /// Cells the robot has seen; candidates must lie in them. `None` treats
    /// the whole map as known.
    pub known: Option<&'a CoverageGrid>,
    pub config: &'a PlannerConfig,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `k`-th stream below `seed`.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    splitmix(seed ^ splitmix(k))
}

impl<'a> SearchContext<'a> {
    pub fn leaf_value(&self, node: &SearchNode) -> f64 {
        entropy_objective(&node.object, self.config.pose_weight)
    }

    fn pose_ok(&self, floor: usize, from: Vec2<f64>, to: Vec2<f64>) -> bool {
        if !self.nav.is_open_at(floor, to) {
            return false;
        }
        if let Some(known) = self.known {
            if !known.is_covered(self.nav.plan(), floor, to) {
                return false;
            }
        }
        let g = self.nav.grid(floor);
        g.segment_clear(from, to, |c| g.get(c) == Cell::Free)
    }

    /// Candidate next poses of `node`, facing the believed object.
    pub fn candidates(&self, node: &SearchNode) -> Vec<RobotState<f64>> {
        let cfg = self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(node.seed, 0));
        let mut out = Vec::with_capacity(cfg.action_samples);
        let attempts = cfg.action_samples * 4;
        for _ in 0..attempts {
            if out.len() == cfg.action_samples {
                break;
            }
            let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let r = if cfg.max_step > cfg.min_step {
                rng.random_range(cfg.min_step..cfg.max_step)
            } else {
                cfg.min_step
            };
            let pos = node.robot.position + Vec2::from_angle(angle) * r;
            if !self.pose_ok(node.robot.floor, node.robot.position, pos) {
                continue;
            }
            let to_obj = node.object.mean - pos;
            let heading = if to_obj.norm() > 1e-9 {
                to_obj.angle()
            } else {
                node.robot.heading
            };
            out.push(RobotState {
                position: pos,
                heading: wrap_angle(heading),
                ..node.robot
            });
        }
        out
    }

    /// Observation outcomes of moving to `pose` (the `action`-th candidate).
    pub fn outcomes(
        &self,
        node: &SearchNode,
        action: usize,
        pose: &RobotState<f64>,
    ) -> Vec<Outcome> {
        let model = self.model;
        let plan = self.nav.plan();
        let obj = &node.object;
        let action_seed = derive_seed(node.seed, action as u64 + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(action_seed);
        let pd = detection_profile_at_mean(obj, pose, model, plan);
        let joint: Vec<f64> = obj.labels.iter().zip(&pd).map(|(p, d)| p * d).collect();
        let p_detect: f64 = joint.iter().sum::<f64>().clamp(0.0, 1.0);
        let mut out = Vec::with_capacity(self.config.outcome_samples + 1);
        let child = |k: u64, object: ObjectBelief<f64>| SearchNode {
            robot: *pose,
            object,
            seed: derive_seed(action_seed, k),
        };
        if p_detect < 1.0 {
            let miss = update_no_detection_with(obj, &pd).belief;
            out.push(Outcome {
                weight: 1.0 - p_detect,
                node: child(0, miss),
            });
        }
        if p_detect > 0.0 {
            let k = self.config.outcome_samples;
            let chol = obj.cov.cholesky().unwrap_or([0.0; 3]);
            let update = DetectionUpdate::new(obj, pose, model);
            for s in 0..k {
                let u: f64 = rng.random();
                let label = LabelId(sample_categorical(&joint, u) as u16);
                let n1: f64 = rng.sample(StandardNormal);
                let n2: f64 = rng.sample(StandardNormal);
                let nh: f64 = rng.sample(StandardNormal);
                let hypothesis = ObjectTruth {
                    id: obj.id,
                    position: obj.mean + Vec2::new(chol[0] * n1, chol[1] * n1 + chol[2] * n2),
                    orientation: wrap_angle(
                        obj.heading_mean + obj.heading_var.max(0.0).sqrt() * nh,
                    ),
                    label,
                    status: obj.status,
                    floor: obj.floor,
                    detection: None,
                };
                let z = sample_measurement(pose, &hypothesis, model, &mut rng);
                let upd = update.apply(&z).belief;
                out.push(Outcome {
                    weight: p_detect / k as f64,
                    node: child(s as u64 + 1, upd),
                });
            }
        }
        out
    }
}

/// Brute-force expectimax over the sampled tree. Returns the value and the
/// index of the first-step action (first minimum wins ties).
pub fn exhaustive(ctx: &SearchContext, node: &SearchNode, depth: usize) -> (f64, Option<usize>) {
    if depth == 0 {
        return (ctx.leaf_value(node), None);
    }
    let cands = ctx.candidates(node);
    if cands.is_empty() {
        return (ctx.leaf_value(node), None);
    }
    let mut best = f64::INFINITY;
    let mut best_idx = None;
    for (a, pose) in cands.iter().enumerate() {
        let mut total = 0.0;
        for o in ctx.outcomes(node, a, pose) {
            total += o.weight * exhaustive(ctx, &o.node, depth - 1).0;
        }
        if total < best {
            best = total;
            best_idx = Some(a);
        }
    }
    (best, best_idx)
}

/// Result of a bounded evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Bound {
    Exact(f64),
    /// The true value is at least this (and at least the cutoff).
    AtLeast(f64),
}

struct Bnb<'c, 'a> {
    ctx: &'c SearchContext<'a>,
    stats: SearchStats,
}

impl Bnb<'_, '_> {
    /// Min node. Exact when the value is below `cutoff`.
    fn min_node(&mut self, node: &SearchNode, depth: usize, cutoff: f64) -> (Bound, Option<usize>) {
        if depth == 0 {
            self.stats.leaves += 1;
            return (Bound::Exact(self.ctx.leaf_value(node)), None);
        }
        let cands = self.ctx.candidates(node);
        if cands.is_empty() {
            self.stats.leaves += 1;
            return (Bound::Exact(self.ctx.leaf_value(node)), None);
        }
        self.stats.expanded += 1;
        let mut best = f64::INFINITY;
        let mut best_idx = None;
        for (a, pose) in cands.iter().enumerate() {
            let cut = best.min(cutoff);
            match self.expectation(node, a, pose, depth, cut) {
                Bound::Exact(v) => {
                    if v < best {
                        best = v;
                        best_idx = Some(a);
                    }
                }
                Bound::AtLeast(_) => self.stats.pruned += 1,
            }
        }
        if best < cutoff {
            (Bound::Exact(best), best_idx)
        } else {
            (Bound::AtLeast(cutoff), None)
        }
    }

    /// Chance node. Exact, or a proof that the value is at least `cut`.
    fn expectation(
        &mut self,
        node: &SearchNode,
        a: usize,
        pose: &RobotState<f64>,
        depth: usize,
        cut: f64,
    ) -> Bound {
        let outcomes = self.ctx.outcomes(node, a, pose);
        let n = outcomes.len();
        let mut partial = 0.0;
        for (i, o) in outcomes.iter().enumerate() {
            let child_cut = if o.weight > 0.0 {
                (cut - partial) / o.weight
            } else {
                f64::INFINITY
            };
            let v = match self.min_node(&o.node, depth - 1, child_cut).0 {
                Bound::Exact(v) => v,
                Bound::AtLeast(lb) => {
                    // remaining outcomes contribute >= 0, so this bounds the total
                    let lower = partial + o.weight * lb;
                    if lower >= cut {
                        return Bound::AtLeast(lower);
                    }
                    // rounding left the bound inconclusive: evaluate exactly
                    match self.min_node(&o.node, depth - 1, f64::INFINITY).0 {
                        Bound::Exact(v) => v,
                        Bound::AtLeast(_) => unreachable!("infinite cutoff is always exact"),
                    }
                }
            };
            partial += o.weight * v;
            if partial >= cut && i + 1 < n {
                return Bound::AtLeast(partial);
            }
        }
        Bound::Exact(partial)
    }
}

/// Branch and bound over the same tree as [`exhaustive`]. The objective is
/// non-negative, so a partial expectation is an admissible lower bound and
/// pruning never changes the chosen action.
pub fn branch_and_bound(
    ctx: &SearchContext,
    node: &SearchNode,
    depth: usize,
) -> (f64, Option<usize>, SearchStats) {
    let mut bnb = Bnb {
        ctx,
        stats: SearchStats::default(),
    };
    let (bound, idx) = bnb.min_node(node, depth, f64::INFINITY);
    let value = match bound {
        Bound::Exact(v) => v,
        Bound::AtLeast(v) => v,
    };
    (value, idx, bnb.stats)
}

/// Summary of one planning call, recorded in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub object_id: u32,
    pub seed: u64,
    pub value: f64,
    pub action: Option<usize>,
    pub stats: SearchStats,
}

/// Plan from the robot's belief. Returns the first pose of the best branch.
pub fn plan(
    ctx: &SearchContext,
    robot: &RobotState<f64>,
    object: &ObjectBelief<f64>,
    seed: u64,
) -> (Option<RobotState<f64>>, SearchReport) {
    let root = SearchNode {
        robot: *robot,
        object: object.clone(),
        seed,
    };
    let (value, action, stats) = branch_and_bound(ctx, &root, ctx.config.steps);
    let pose = action.map(|a| ctx.candidates(&root)[a]);
    (
        pose,
        SearchReport {
            object_id: object.id,
            seed,
            value,
            action,
            stats,
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchStatus {
    Searching,
    /// The target is in the actionable set; no motion issued.
    TargetReached,
    /// No collision-free candidate: rotating in place.
    Recovering,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchStep {
    pub control: ControlInput<f64>,
    pub status: SearchStatus,
    /// Set when the tree was rebuilt this tick.
    pub report: Option<SearchReport>,
}

/// Receding-horizon wrapper: executes only the first pose of each plan
/// and replans when it is reached or a step's worth of time has passed.
#[derive(Debug, Clone, Default)]
pub struct ActiveSearch {
    target: Option<u32>,
    waypoint: Option<RobotState<f64>>,
    planned_at: f64,
}

impl ActiveSearch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn waypoint(&self) -> Option<RobotState<f64>> {
        self.waypoint
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        ctx: &SearchContext,
        belief: &GeoSemanticBelief<f64>,
        target: u32,
        label: LabelId,
        thresholds: &Thresholds,
        rng: &mut dyn RngCore,
        limits: &VelocityLimits<f64>,
        gains: &TrackingGains,
    ) -> SearchStep {
        let reached = BeliefPredicate {
            kind: PredicateKind::Actionable,
            label,
        };
        if evaluate_predicate(&reached, thresholds, belief, target) {
            self.waypoint = None;
            return SearchStep {
                control: ControlInput::zero(),
                status: SearchStatus::TargetReached,
                report: None,
            };
        }
        let Some(obj) = belief.object(target) else {
            return SearchStep {
                control: ControlInput::zero(),
                status: SearchStatus::Recovering,
                report: None,
            };
        };
        if self.target != Some(target) {
            self.target = Some(target);
            self.waypoint = None;
        }
        let robot = belief.robot_state();
        let now = belief.time;
        let arrived = self.waypoint.is_some_and(|w| {
            w.position.distance(robot.position) < 0.15
                && wrap_angle(w.heading - robot.heading).abs() < 0.2
        });
        let stale = now - self.planned_at >= ctx.config.step_duration() - 1e-9;
        let mut report = None;
        if self.waypoint.is_none() || arrived || stale {
            let seed = rng.next_u64();
            let (pose, r) = plan(ctx, &robot, obj, seed);
            self.waypoint = pose;
            self.planned_at = now;
            report = Some(r);
        }
        match self.waypoint {
            Some(w) => {
                let dist = w.position.distance(robot.position);
                SearchStep {
                    control: drive_toward(&robot, w.position, dist, Some(w.heading), limits, gains),
                    status: SearchStatus::Searching,
                    report,
                }
            }
            None => {
                let bearing = wrap_angle((obj.mean - robot.position).angle() - robot.heading);
                let dir = if bearing < 0.0 { -1.0 } else { 1.0 };
                SearchStep {
                    control: ControlInput::velocity(0.0, 0.0, dir * 0.5 * limits.max_yaw_rate),
                    status: SearchStatus::Recovering,
                    report,
                }
            }
        }
    }
}
