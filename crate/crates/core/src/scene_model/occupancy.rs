//! Free-space occupancy grid over the floor plan, used for trajectory
//! planning.

use nalgebra::Vector2;

use crate::grid::Grid;

use super::SceneLayout;

/// Boolean occupancy over the floor-polygon bounding rectangle; `true`
/// means the cell is free.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    pub origin: Vector2<f64>,
    pub cell_size: f64,
    free: Grid<bool>,
}

impl OccupancyGrid {
    #[inline]
    pub fn cols(&self) -> usize {
        self.free.width()
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.free.height()
    }

    /// World (x, z) of a cell center.
    #[inline]
    pub fn cell_center(&self, col: usize, row: usize) -> Vector2<f64> {
        Vector2::new(
            self.origin.x + (col as f64 + 0.5) * self.cell_size,
            self.origin.y + (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cell containing a world (x, z) point, if inside the grid rectangle.
    pub fn cell_of(&self, p: Vector2<f64>) -> Option<(usize, usize)> {
        let fx = (p.x - self.origin.x) / self.cell_size;
        let fz = (p.y - self.origin.y) / self.cell_size;
        if fx < 0.0 || fz < 0.0 {
            return None;
        }
        let (col, row) = (fx as usize, fz as usize);
        if col >= self.cols() || row >= self.rows() {
            return None;
        }
        Some((col, row))
    }

    #[inline]
    pub fn is_free(&self, col: usize, row: usize) -> bool {
        self.free.at(col, row)
    }

    /// Whether a world (x, z) point lies over a free cell.
    pub fn point_is_free(&self, p: Vector2<f64>) -> bool {
        self.cell_of(p).is_some_and(|(c, r)| self.is_free(c, r))
    }

    pub fn free_cell_count(&self) -> usize {
        self.free.data().iter().filter(|f| **f).count()
    }

    /// Iterate `(col, row)` of free cells in row-major order.
    pub fn free_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.free
            .iter_cells()
            .filter(|(_, _, f)| **f)
            .map(|(c, r, _)| (c, r))
    }
}

/// Builds the occupancy grid: a cell is free iff its center is inside the
/// floor polygon with at least `clearance` to the walls and at least
/// `clearance` to every box footprint.
pub fn build_occupancy(layout: &SceneLayout, cell_size: f64, clearance: f64) -> OccupancyGrid {
    assert!(cell_size > 0.0, "cell_size must be > 0");
    let (min, max) = layout.shell.bounds();
    let cols = (((max.x - min.x) / cell_size).ceil() as usize).max(1);
    let rows = (((max.z - min.z) / cell_size).ceil() as usize).max(1);
    let origin = Vector2::new(min.x, min.z);

    let mut free = Grid::filled(cols, rows, false);
    for row in 0..rows {
        for col in 0..cols {
            let c = Vector2::new(
                origin.x + (col as f64 + 0.5) * cell_size,
                origin.y + (row as f64 + 0.5) * cell_size,
            );
            let ok = layout.shell.contains_footprint(c)
                && layout.shell.boundary_distance(c) >= clearance
                && layout
                    .boxes
                    .iter()
                    .all(|b| b.footprint_distance(c) >= clearance);
            free.set(col, row, ok);
        }
    }

    OccupancyGrid {
        origin,
        cell_size,
        free,
    }
}
