//! Greedy frontier coverage: sweep the free space with a circular sensor
//! footprint.

use serde::{Deserialize, Serialize};

use crate::behaviors::nav::{NavMap, PathTracker, TrackingGains};
use crate::geometry::Vec2;
use crate::sim::grid::{Cell, FloorPlan};
use crate::types::{ControlInput, RobotState, VelocityLimits};

/// Per-floor mask of cells already seen by the footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageGrid {
    pub radius: f64,
    pub covered: Vec<Vec<bool>>,
}

impl CoverageGrid {
    pub fn new(plan: &FloorPlan, radius: f64) -> Self {
        Self {
            radius,
            covered: plan.floors.iter().map(|g| vec![false; g.len()]).collect(),
        }
    }

    pub fn is_covered(&self, plan: &FloorPlan, floor: usize, p: Vec2<f64>) -> bool {
        plan.floor(floor)
            .and_then(|g| g.cell_of(p))
            .is_some_and(|c| self.covered[floor][plan.floors[floor].index(c)])
    }

    /// Mark every cell within the footprint radius and in line of sight.
    /// Returns how many cells became covered.
    pub fn mark(&mut self, plan: &FloorPlan, floor: usize, at: Vec2<f64>) -> usize {
        let Some(g) = plan.floor(floor) else { return 0 };
        let cs = g.cell_size();
        let r = self.radius;
        let x0 = ((at.x - r) / cs).floor().max(0.0) as usize;
        let y0 = ((at.y - r) / cs).floor().max(0.0) as usize;
        let x1 = (((at.x + r) / cs).ceil() as usize).min(g.width());
        let y1 = (((at.y + r) / cs).ceil() as usize).min(g.height());
        let mask = &mut self.covered[floor];
        let mut newly = 0;
        for y in y0..y1 {
            for x in x0..x1 {
                let i = g.index((x, y));
                if mask[i] || g.get((x, y)) == Cell::Wall {
                    continue;
                }
                let c = g.center((x, y));
                if c.distance(at) > r {
                    continue;
                }
                if g.line_of_sight(at, c) {
                    mask[i] = true;
                    newly += 1;
                }
            }
        }
        newly
    }

    /// Fraction of free cells on `floor` that are covered.
    pub fn fraction(&self, plan: &FloorPlan, floor: usize) -> f64 {
        let g = &plan.floors[floor];
        let mut free = 0usize;
        let mut seen = 0usize;
        for c in g.free_cells() {
            free += 1;
            if self.covered[floor][g.index(c)] {
                seen += 1;
            }
        }
        if free == 0 {
            1.0
        } else {
            seen as f64 / free as f64
        }
    }
}

/// Tuning for the frontier choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageConfig {
    /// Footprint radius, meters.
    pub footprint_radius: f64,
    /// Path meters traded per uncovered cell the goal would reveal.
    pub information_weight: f64,
    /// Number of nearest frontier cells scored per decision.
    pub candidates: usize,
    /// Path replanning period, seconds.
    pub replan_period: f64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self {
            footprint_radius: 4.0,
            information_weight: 0.02,
            candidates: 48,
            replan_period: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageStep {
    Moving,
    Complete,
}

/// Coverage behavior state: committed frontier goal and its path.
#[derive(Debug, Clone, Default)]
pub struct CoveragePlanner {
    goal: Option<(usize, usize)>,
    tracker: PathTracker,
    planned_at: f64,
}

impl CoveragePlanner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn goal(&self) -> Option<Vec2<f64>> {
        self.tracker.goal()
    }

    /// Forget the current goal (e.g. after a collision).
    pub fn invalidate(&mut self) {
        self.goal = None;
        self.tracker = PathTracker::default();
    }

    fn choose_goal(
        &self,
        robot: &RobotState<f64>,
        nav: &NavMap,
        coverage: &CoverageGrid,
        cfg: &CoverageConfig,
    ) -> Option<(usize, Vec<Vec2<f64>>)> {
        let floor = robot.floor;
        let g = nav.grid(floor);
        let field = nav.distance_field(floor, robot.position)?;
        let mask = &coverage.covered[floor];
        let mut frontier: Vec<(f64, usize)> = (0..g.len())
            .filter(|&i| !mask[i] && field.reachable(i))
            .map(|i| (field.dist[i], i))
            .collect();
        if frontier.is_empty() {
            return None;
        }
        frontier.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        frontier.truncate(cfg.candidates.max(1));
        let cs = g.cell_size();
        let r = (coverage.radius / cs).ceil() as i64;
        let r2 = coverage.radius * coverage.radius;
        let mut best: Option<(f64, usize)> = None;
        for &(d, i) in &frontier {
            let (cx, cy) = g.cell_at_index(i);
            let center = g.center((cx, cy));
            // uncovered free cells the footprint would sweep from there (no sight check)
            let mut gain = 0usize;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (x, y) = (cx as i64 + dx, cy as i64 + dy);
                    if x < 0 || y < 0 || x as usize >= g.width() || y as usize >= g.height() {
                        continue;
                    }
                    let c = (x as usize, y as usize);
                    let j = g.index(c);
                    if mask[j]
                        || g.get(c) != Cell::Free
                        || g.center(c).distance(center).powi(2) > r2
                    {
                        continue;
                    }
                    gain += 1;
                }
            }
            let score = d - cfg.information_weight * gain as f64;
            if best.is_none_or(|(s, _)| score < s) {
                best = Some((score, i));
            }
        }
        let (_, goal) = best?;
        let cells = field.path_to(goal)?;
        let mut pts = vec![robot.position];
        pts.extend(cells.iter().skip(1).map(|&i| g.center(g.cell_at_index(i))));
        if pts.len() == 1 {
            pts.push(g.center(g.cell_at_index(goal)));
        }
        Some((goal, nav.smooth(floor, pts)))
    }

    /// One control step. Marks the footprint at the current pose, keeps
    /// the committed goal until it is covered, replans the path
    /// periodically, and reports completion when no reachable free cell
    /// is left uncovered.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        robot: &RobotState<f64>,
        time: f64,
        nav: &NavMap,
        coverage: &mut CoverageGrid,
        cfg: &CoverageConfig,
        limits: &VelocityLimits<f64>,
        gains: &TrackingGains,
    ) -> (ControlInput<f64>, CoverageStep) {
        let floor = robot.floor;
        coverage.mark(nav.plan(), floor, robot.position);
        let goal_done = self
            .goal
            .is_none_or(|(f, i)| f != floor || coverage.covered[f][i]);
        if goal_done || self.tracker.is_empty() {
            match self.choose_goal(robot, nav, coverage, cfg) {
                Some((goal, path)) => {
                    self.goal = Some((floor, goal));
                    self.tracker = PathTracker::new(path);
                    self.planned_at = time;
                }
                None => {
                    self.invalidate();
                    return (ControlInput::zero(), CoverageStep::Complete);
                }
            }
        } else if time - self.planned_at >= cfg.replan_period {
            let (f, i) = self.goal.expect("goal checked above");
            let g = nav.grid(f);
            match nav.shortest_path(f, robot.position, g.center(g.cell_at_index(i))) {
                Some(path) => self.tracker = PathTracker::new(path),
                None => self.invalidate(),
            }
            self.planned_at = time;
            if self.goal.is_none() {
                return self.step(robot, time, nav, coverage, cfg, limits, gains);
            }
        }
        let u = self.tracker.control(robot, None, limits, gains);
        (u, CoverageStep::Moving)
    }
}
