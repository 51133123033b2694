//! Occupancy grids, one per floor.
//!
//! Text form (used in scenario files): one string per row, first row at the
//! top (highest y). `#` is a wall, `.` free space and `S` a stair-zone cell
//! (free for line of sight, off-limits to walking navigation).

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::sensing::Occlusion;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cell {
    Free,
    Wall,
    Stair,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridText", into = "GridText")]
pub struct OccupancyGrid {
    cell_size: f64,
    width: usize,
    height: usize,
    cells: Vec<Cell>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridText {
    cell_size: f64,
    rows: Vec<String>,
}

impl TryFrom<GridText> for OccupancyGrid {
    type Error = String;

    fn try_from(t: GridText) -> Result<Self, String> {
        OccupancyGrid::from_rows(t.cell_size, &t.rows)
    }
}

impl From<OccupancyGrid> for GridText {
    fn from(g: OccupancyGrid) -> Self {
        GridText {
            cell_size: g.cell_size,
            rows: g.to_rows(),
        }
    }
}

/// Integer cell coordinate, `y = 0` at the bottom row.
pub type CellIx = (usize, usize);

impl OccupancyGrid {
    pub fn new(cell_size: f64, width: usize, height: usize) -> Self {
        Self {
            cell_size,
            width,
            height,
            cells: vec![Cell::Free; width * height],
        }
    }

    /// Empty room of the given size in meters, walled on all sides.
    pub fn walled_room(cell_size: f64, width_m: f64, height_m: f64) -> Self {
        let w = (width_m / cell_size).round() as usize;
        let h = (height_m / cell_size).round() as usize;
        let mut g = Self::new(cell_size, w, h);
        for x in 0..w {
            g.set((x, 0), Cell::Wall);
            g.set((x, h - 1), Cell::Wall);
        }
        for y in 0..h {
            g.set((0, y), Cell::Wall);
            g.set((w - 1, y), Cell::Wall);
        }
        g
    }

    pub fn from_rows(cell_size: f64, rows: &[String]) -> Result<Self, String> {
        if !(cell_size > 0.0) {
            return Err(format!("cell_size must be > 0 (got {cell_size})"));
        }
        let height = rows.len();
        if height == 0 {
            return Err("grid has no rows".into());
        }
        let width = rows[0].chars().count();
        if width == 0 {
            return Err("grid rows are empty".into());
        }
        let mut g = Self::new(cell_size, width, height);
        for (r, row) in rows.iter().enumerate() {
            let y = height - 1 - r;
            let n = row.chars().count();
            if n != width {
                return Err(format!("grid row {r} has {n} cells, expected {width}"));
            }
            for (x, ch) in row.chars().enumerate() {
                let c = match ch {
                    '.' | ' ' => Cell::Free,
                    '#' => Cell::Wall,
                    'S' => Cell::Stair,
                    other => {
                        return Err(format!("grid row {r} column {x}: unknown cell `{other}`"))
                    }
                };
                g.set((x, y), c);
            }
        }
        Ok(g)
    }

    pub fn to_rows(&self) -> Vec<String> {
        (0..self.height)
            .rev()
            .map(|y| {
                (0..self.width)
                    .map(|x| match self.get((x, y)) {
                        Cell::Free => '.',
                        Cell::Wall => '#',
                        Cell::Stair => 'S',
                    })
                    .collect()
            })
            .collect()
    }

    #[inline]
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn extent(&self) -> Vec2<f64> {
        Vec2::new(
            self.width as f64 * self.cell_size,
            self.height as f64 * self.cell_size,
        )
    }

    #[inline]
    pub fn index(&self, c: CellIx) -> usize {
        c.1 * self.width + c.0
    }

    #[inline]
    pub fn cell_at_index(&self, i: usize) -> CellIx {
        (i % self.width, i / self.width)
    }

    #[inline]
    pub fn get(&self, c: CellIx) -> Cell {
        self.cells[self.index(c)]
    }

    #[inline]
    pub fn set(&mut self, c: CellIx, v: Cell) {
        let i = self.index(c);
        self.cells[i] = v;
    }

    pub fn cell_of(&self, p: Vec2<f64>) -> Option<CellIx> {
        if !(p.x >= 0.0 && p.y >= 0.0) {
            return None;
        }
        let x = (p.x / self.cell_size).floor() as usize;
        let y = (p.y / self.cell_size).floor() as usize;
        (x < self.width && y < self.height).then_some((x, y))
    }

    #[inline]
    pub fn center(&self, c: CellIx) -> Vec2<f64> {
        Vec2::new(
            (c.0 as f64 + 0.5) * self.cell_size,
            (c.1 as f64 + 0.5) * self.cell_size,
        )
    }

    /// Walls block both motion and sight.
    pub fn is_wall_at(&self, p: Vec2<f64>) -> bool {
        self.cell_of(p).is_none_or(|c| self.get(c) == Cell::Wall)
    }

    /// Free space a walking robot may occupy.
    pub fn is_free_at(&self, p: Vec2<f64>) -> bool {
        self.cell_of(p).is_some_and(|c| self.get(c) == Cell::Free)
    }

    pub fn free_cells(&self) -> impl Iterator<Item = CellIx> + '_ {
        (0..self.cells.len())
            .filter(|i| self.cells[*i] == Cell::Free)
            .map(|i| self.cell_at_index(i))
    }

    /// Visit every cell the segment `a → b` passes through, in order.
    /// Stops early when `visit` returns `false`; returns whether it ran to the end.
    pub fn walk_segment(
        &self,
        a: Vec2<f64>,
        b: Vec2<f64>,
        mut visit: impl FnMut(Option<CellIx>) -> bool,
    ) -> bool {
        let cs = self.cell_size;
        let (mut cx, mut cy) = ((a.x / cs).floor() as i64, (a.y / cs).floor() as i64);
        let (ex, ey) = ((b.x / cs).floor() as i64, (b.y / cs).floor() as i64);
        let cell = |x: i64, y: i64| {
            (x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height)
                .then_some((x as usize, y as usize))
        };
        if !visit(cell(cx, cy)) {
            return false;
        }
        let d = b - a;
        let step_x: i64 = if d.x > 0.0 { 1 } else { -1 };
        let step_y: i64 = if d.y > 0.0 { 1 } else { -1 };
        let t_delta_x = if d.x != 0.0 {
            cs / d.x.abs()
        } else {
            f64::INFINITY
        };
        let t_delta_y = if d.y != 0.0 {
            cs / d.y.abs()
        } else {
            f64::INFINITY
        };
        let next_boundary = |c: i64, step: i64| (if step > 0 { c + 1 } else { c }) as f64 * cs;
        let mut t_max_x = if d.x != 0.0 {
            (next_boundary(cx, step_x) - a.x) / d.x
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if d.y != 0.0 {
            (next_boundary(cy, step_y) - a.y) / d.y
        } else {
            f64::INFINITY
        };
        let max_steps = (self.width + self.height) * 2 + 4;
        for _ in 0..max_steps {
            if cx == ex && cy == ey {
                return true;
            }
            if t_max_x.min(t_max_y) > 1.0 {
                return true;
            }
            if t_max_x < t_max_y {
                cx += step_x;
                t_max_x += t_delta_x;
            } else {
                cy += step_y;
                t_max_y += t_delta_y;
            }
            if !visit(cell(cx, cy)) {
                return false;
            }
        }
        true
    }

    /// No wall between `a` and `b` (stair cells are see-through).
    pub fn line_of_sight(&self, a: Vec2<f64>, b: Vec2<f64>) -> bool {
        self.walk_segment(a, b, |c| c.is_some_and(|c| self.get(c) != Cell::Wall))
    }

    /// Every cell under the segment passes `ok`.
    pub fn segment_clear(&self, a: Vec2<f64>, b: Vec2<f64>, ok: impl Fn(CellIx) -> bool) -> bool {
        self.walk_segment(a, b, |c| c.is_some_and(&ok))
    }

    /// Mask of cells a walking robot should avoid: walls, stair zones and
    /// anything within `clearance` meters of either.
    pub fn inflated_blocked(&self, clearance: f64) -> Vec<bool> {
        let r = (clearance / self.cell_size).ceil() as i64;
        let mut blocked: Vec<bool> = self.cells.iter().map(|c| *c != Cell::Free).collect();
        if r <= 0 {
            return blocked;
        }
        let r2 = clearance * clearance;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get((x, y)) == Cell::Free {
                    continue;
                }
                for dy in -r..=r {
                    for dx in -r..=r {
                        let nx = x as i64 + dx;
                        let ny = y as i64 + dy;
                        if nx < 0
                            || ny < 0
                            || nx as usize >= self.width
                            || ny as usize >= self.height
                        {
                            continue;
                        }
                        // distance between cell centers minus half a cell
                        let gap = ((dx.abs() as f64 - 1.0).max(0.0).powi(2)
                            + (dy.abs() as f64 - 1.0).max(0.0).powi(2))
                            * self.cell_size
                            * self.cell_size;
                        if gap < r2 {
                            let i = self.index((nx as usize, ny as usize));
                            blocked[i] = true;
                        }
                    }
                }
            }
        }
        blocked
    }
}

/// All floors of a building.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FloorPlan {
    pub floors: Vec<OccupancyGrid>,
}

impl FloorPlan {
    pub fn single(grid: OccupancyGrid) -> Self {
        Self { floors: vec![grid] }
    }

    pub fn floor(&self, f: usize) -> Option<&OccupancyGrid> {
        self.floors.get(f)
    }
}

impl Occlusion<f64> for FloorPlan {
    fn visible(&self, from: Vec2<f64>, to: Vec2<f64>, floor: usize) -> bool {
        self.floors
            .get(floor)
            .is_some_and(|g| g.line_of_sight(from, to))
    }
}

impl Occlusion<f64> for OccupancyGrid {
    fn visible(&self, from: Vec2<f64>, to: Vec2<f64>, _floor: usize) -> bool {
        self.line_of_sight(from, to)
    }
}
