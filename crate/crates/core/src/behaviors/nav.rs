//! Grid navigation shared by the behaviors: inflated cost maps, A*,
//! Dijkstra distance fields and a go-to-point tracking controller.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Vec2};
use crate::sim::grid::{CellIx, FloorPlan, OccupancyGrid};
use crate::types::{ControlInput, RobotState, VelocityLimits};

/// Floor plan plus per-floor "keep out" masks for a robot of a given clearance.
#[derive(Debug, Clone)]
pub struct NavMap {
    plan: FloorPlan,
    blocked: Vec<Vec<bool>>,
}

const NEIGHBORS: [(i64, i64, f64); 8] = [
    (1, 0, 1.0),
    (-1, 0, 1.0),
    (0, 1, 1.0),
    (0, -1, 1.0),
    (1, 1, std::f64::consts::SQRT_2),
    (1, -1, std::f64::consts::SQRT_2),
    (-1, 1, std::f64::consts::SQRT_2),
    (-1, -1, std::f64::consts::SQRT_2),
];

#[derive(Copy, Clone, PartialEq)]
struct Open {
    f: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on f, ties broken by index for determinism
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest-path distances (meters) from one source cell.
#[derive(Debug, Clone)]
pub struct DistanceField {
    pub dist: Vec<f64>,
    parent: Vec<usize>,
}

impl DistanceField {
    pub fn reachable(&self, idx: usize) -> bool {
        self.dist[idx].is_finite()
    }

    /// Cells from the source to `idx`, inclusive.
    pub fn path_to(&self, idx: usize) -> Option<Vec<usize>> {
        if !self.reachable(idx) {
            return None;
        }
        let mut out = vec![idx];
        let mut cur = idx;
        while self.parent[cur] != cur {
            cur = self.parent[cur];
            out.push(cur);
        }
        out.reverse();
        Some(out)
    }
}

impl NavMap {
    pub fn new(plan: FloorPlan, clearance: f64) -> Self {
        let blocked = plan
            .floors
            .iter()
            .map(|g| g.inflated_blocked(clearance))
            .collect();
        Self { plan, blocked }
    }

    pub fn plan(&self) -> &FloorPlan {
        &self.plan
    }

    pub fn grid(&self, floor: usize) -> &OccupancyGrid {
        &self.plan.floors[floor]
    }

    pub fn floors(&self) -> usize {
        self.plan.floors.len()
    }

    pub fn is_blocked(&self, floor: usize, c: CellIx) -> bool {
        let g = self.grid(floor);
        self.blocked[floor][g.index(c)]
    }

    /// Point lies in a cell the robot may plan through.
    pub fn is_open_at(&self, floor: usize, p: Vec2<f64>) -> bool {
        self.plan
            .floor(floor)
            .and_then(|g| g.cell_of(p))
            .is_some_and(|c| !self.is_blocked(floor, c))
    }

    pub fn segment_open(&self, floor: usize, a: Vec2<f64>, b: Vec2<f64>) -> bool {
        let Some(g) = self.plan.floor(floor) else {
            return false;
        };
        let mask = &self.blocked[floor];
        g.segment_clear(a, b, |c| !mask[g.index(c)])
    }

    /// Nearest open cell to `p` by breadth-first ring search.
    pub fn nearest_open(&self, floor: usize, p: Vec2<f64>) -> Option<CellIx> {
        let g = self.plan.floor(floor)?;
        let cs = g.cell_size();
        let cx = (p.x / cs).floor() as i64;
        let cy = (p.y / cs).floor() as i64;
        let max_r = g.width().max(g.height()) as i64;
        for r in 0..=max_r {
            let mut best: Option<(f64, CellIx)> = None;
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx.abs() != r && dy.abs() != r {
                        continue;
                    }
                    let (x, y) = (cx + dx, cy + dy);
                    if x < 0 || y < 0 || x as usize >= g.width() || y as usize >= g.height() {
                        continue;
                    }
                    let c = (x as usize, y as usize);
                    if self.is_blocked(floor, c) {
                        continue;
                    }
                    let d = g.center(c).distance(p);
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, c));
                    }
                }
            }
            if let Some((_, c)) = best {
                return Some(c);
            }
        }
        None
    }

    fn start_cell(&self, floor: usize, p: Vec2<f64>) -> Option<usize> {
        let g = self.plan.floor(floor)?;
        // the robot may sit inside the inflation margin; start from the nearest open cell
        let c = match g.cell_of(p) {
            Some(c) if !self.is_blocked(floor, c) => c,
            _ => self.nearest_open(floor, p)?,
        };
        Some(g.index(c))
    }

    fn expand(&self, floor: usize, idx: usize, mut f: impl FnMut(usize, f64)) {
        let g = self.grid(floor);
        let (x, y) = g.cell_at_index(idx);
        let mask = &self.blocked[floor];
        let cs = g.cell_size();
        for (dx, dy, w) in NEIGHBORS {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            if nx < 0 || ny < 0 || nx as usize >= g.width() || ny as usize >= g.height() {
                continue;
            }
            let n = g.index((nx as usize, ny as usize));
            if mask[n] {
                continue;
            }
            if dx != 0 && dy != 0 {
                // no corner cutting
                let a = g.index((nx as usize, y));
                let b = g.index((x, ny as usize));
                if mask[a] || mask[b] {
                    continue;
                }
            }
            f(n, w * cs);
        }
    }

    /// Dijkstra over open cells from the robot's position.
    pub fn distance_field(&self, floor: usize, from: Vec2<f64>) -> Option<DistanceField> {
        let g = self.plan.floor(floor)?;
        let src = self.start_cell(floor, from)?;
        let n = g.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut parent: Vec<usize> = (0..n).collect();
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(Open { f: 0.0, idx: src });
        while let Some(Open { f, idx }) = heap.pop() {
            if f > dist[idx] {
                continue;
            }
            self.expand(floor, idx, |nb, w| {
                let nd = f + w;
                if nd < dist[nb] {
                    dist[nb] = nd;
                    parent[nb] = idx;
                    heap.push(Open { f: nd, idx: nb });
                }
            });
        }
        Some(DistanceField { dist, parent })
    }

    /// A* from `from` to `to`; the returned waypoints are string-pulled and
    /// end exactly at `to` when that point is open.
    pub fn shortest_path(
        &self,
        floor: usize,
        from: Vec2<f64>,
        to: Vec2<f64>,
    ) -> Option<Vec<Vec2<f64>>> {
        let g = self.plan.floor(floor)?;
        if self.segment_open(floor, from, to) {
            return Some(vec![from, to]);
        }
        let src = self.start_cell(floor, from)?;
        let goal_cell = match g.cell_of(to) {
            Some(c) if !self.is_blocked(floor, c) => c,
            _ => self.nearest_open(floor, to)?,
        };
        let goal = g.index(goal_cell);
        let goal_pt = g.center(goal_cell);
        let h = |i: usize| {
            let (x, y) = g.cell_at_index(i);
            let dx = (x as f64 - goal_cell.0 as f64).abs();
            let dy = (y as f64 - goal_cell.1 as f64).abs();
            (dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)) * g.cell_size()
        };
        let n = g.len();
        let mut cost = vec![f64::INFINITY; n];
        let mut parent: Vec<usize> = (0..n).collect();
        let mut heap = BinaryHeap::new();
        cost[src] = 0.0;
        heap.push(Open {
            f: h(src),
            idx: src,
        });
        let mut found = false;
        while let Some(Open { f, idx }) = heap.pop() {
            if idx == goal {
                found = true;
                break;
            }
            let base = cost[idx];
            if f - h(idx) > base + 1e-9 {
                continue;
            }
            self.expand(floor, idx, |nb, w| {
                let nc = base + w;
                if nc < cost[nb] {
                    cost[nb] = nc;
                    parent[nb] = idx;
                    heap.push(Open {
                        f: nc + h(nb),
                        idx: nb,
                    });
                }
            });
        }
        if !found {
            return None;
        }
        let mut cells = vec![goal];
        let mut cur = goal;
        while parent[cur] != cur {
            cur = parent[cur];
            cells.push(cur);
        }
        cells.reverse();
        let mut pts: Vec<Vec2<f64>> = Vec::with_capacity(cells.len() + 1);
        pts.push(from);
        pts.extend(cells.iter().skip(1).map(|&i| g.center(g.cell_at_index(i))));
        if goal_cell == g.cell_of(to).unwrap_or(goal_cell) && self.is_open_at(floor, to) {
            if let Some(last) = pts.last_mut() {
                *last = to;
            }
        } else if pts.len() == 1 {
            pts.push(goal_pt);
        }
        Some(self.smooth(floor, pts))
    }

    /// Drop waypoints that can be skipped by a straight open segment.
    pub fn smooth(&self, floor: usize, pts: Vec<Vec2<f64>>) -> Vec<Vec2<f64>> {
        if pts.len() <= 2 {
            return pts;
        }
        let mut out = vec![pts[0]];
        let mut i = 0;
        while i < pts.len() - 1 {
            let mut j = pts.len() - 1;
            while j > i + 1 && !self.segment_open(floor, pts[i], pts[j]) {
                j -= 1;
            }
            out.push(pts[j]);
            i = j;
        }
        out
    }
}

/// Gains for [`drive_toward`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingGains {
    /// Speed per meter of remaining distance, 1/s. Keep `k_pos·dt < 1`.
    pub k_pos: f64,
    pub k_heading: f64,
    pub lookahead: f64,
    pub cruise_speed: f64,
}

impl Default for TrackingGains {
    fn default() -> Self {
        Self {
            k_pos: 1.0,
            k_heading: 2.0,
            lookahead: 0.75,
            cruise_speed: 1.0,
        }
    }
}

/// Holonomic go-to-point law. Moves straight at `point` in the world frame
/// (so a noise-free step never overshoots), scaled into the body-frame limits,
/// while turning toward `heading` (or the direction of travel).
pub fn drive_toward(
    robot: &RobotState<f64>,
    point: Vec2<f64>,
    remaining: f64,
    heading: Option<f64>,
    limits: &VelocityLimits<f64>,
    gains: &TrackingGains,
) -> ControlInput<f64> {
    let d = point - robot.position;
    let dist = d.norm();
    let (vx, vy) = if dist > 1e-9 {
        let speed = (gains.k_pos * remaining).min(gains.cruise_speed);
        let body = (d * (speed / dist)).rotate(-robot.heading);
        let mut s = 1.0f64;
        if body.x.abs() > limits.max_longitudinal {
            s = s.min(limits.max_longitudinal / body.x.abs());
        }
        if body.y.abs() > limits.max_lateral {
            s = s.min(limits.max_lateral / body.y.abs());
        }
        (body.x * s, body.y * s)
    } else {
        (0.0, 0.0)
    };
    let desired = heading.unwrap_or_else(|| {
        if dist > 0.05 {
            d.angle()
        } else {
            robot.heading
        }
    });
    let err = wrap_angle(desired - robot.heading);
    let omega = (gains.k_heading * err).clamp(-limits.max_yaw_rate, limits.max_yaw_rate);
    ControlInput::velocity(vx, vy, omega)
}

/// Stateful waypoint follower over a polyline.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PathTracker {
    pub path: Vec<Vec2<f64>>,
    next: usize,
}

impl PathTracker {
    pub fn new(path: Vec<Vec2<f64>>) -> Self {
        Self { path, next: 1 }
    }

    pub fn is_empty(&self) -> bool {
        self.path.len() < 2
    }

    pub fn goal(&self) -> Option<Vec2<f64>> {
        self.path.last().copied()
    }

    /// Remaining waypoints, for "waypoints lie in free cells" checks.
    pub fn remaining(&self) -> &[Vec2<f64>] {
        &self.path[self.next.min(self.path.len())..]
    }

    pub fn control(
        &mut self,
        robot: &RobotState<f64>,
        heading: Option<f64>,
        limits: &VelocityLimits<f64>,
        gains: &TrackingGains,
    ) -> ControlInput<f64> {
        if self.path.is_empty() {
            return ControlInput::zero();
        }
        let last = self.path.len() - 1;
        while self.next < last && robot.position.distance(self.path[self.next]) < gains.lookahead {
            self.next += 1;
        }
        let target = self.path[self.next.min(last)];
        let mut remaining = robot.position.distance(target);
        for w in self.path[self.next.min(last)..].windows(2) {
            remaining += w[0].distance(w[1]);
        }
        // face the direction of travel until close to the end of the path
        let face = heading.filter(|_| remaining < 0.3);
        drive_toward(robot, target, remaining, face, limits, gains)
    }
}
