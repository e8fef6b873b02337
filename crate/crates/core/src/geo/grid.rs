use serde::{Deserialize, Serialize};

use super::{GeoError, Rect};

/// Side length of a study-area grid cell, meters.
pub const CELL_SIZE_M: f64 = 2500.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub cell_id: u32,
    pub row: u32,
    pub col: u32,
    pub bounds: Rect,
    pub size_m: f64,
}

/// Relative slack when counting cells, so that e.g. 25 000 m / 2 500 m is 10
/// cells even when the bounds carry float noise.
const COUNT_EPS: f64 = 1e-9;

/// Partition the bounding rectangle of `scene` into square cells of
/// `cell_size_m`, anchored at the north-west corner. Cells on the east and
/// south edges keep full size and may extend past the scene.
///
/// Cell ids run row-major from the north-west cell, starting at 0.
pub fn make_grid(scene: Rect, cell_size_m: f64) -> Result<Vec<GridCell>, GeoError> {
    if scene.is_degenerate() {
        return Err(GeoError::InvalidInput(format!("degenerate scene bounds {scene:?}")));
    }
    if !(cell_size_m.is_finite() && cell_size_m > 0.0) {
        return Err(GeoError::InvalidInput(format!("cell size {cell_size_m} must be > 0")));
    }
    let cols = cell_count(scene.width(), cell_size_m);
    let rows = cell_count(scene.height(), cell_size_m);
    let mut cells = Vec::with_capacity((cols * rows) as usize);
    for row in 0..rows {
        let max_y = scene.max_y - row as f64 * cell_size_m;
        for col in 0..cols {
            let min_x = scene.min_x + col as f64 * cell_size_m;
            cells.push(GridCell {
                cell_id: row * cols + col,
                row,
                col,
                bounds: Rect::new(min_x, max_y - cell_size_m, min_x + cell_size_m, max_y),
                size_m: cell_size_m,
            });
        }
    }
    Ok(cells)
}

fn cell_count(extent: f64, cell: f64) -> u32 {
    let ratio = extent / cell;
    ((ratio - ratio * COUNT_EPS).ceil() as u32).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn study_area_box_gives_100_cells() {
        let cells = make_grid(Rect::new(0.0, 0.0, 25_000.0, 25_000.0), CELL_SIZE_M).unwrap();
        assert_eq!(cells.len(), 100);
        // 100 cells × 6.25 km² exceeds the 600.7 km² study area, so some
        // boundary cells are only partly covered by data.
        let covered_km2 = cells.len() as f64 * 6.25;
        assert!(covered_km2 > 600.7);
    }

    #[test]
    fn exact_cell_is_identity() {
        let b = Rect::new(700_000.0, 2_300_000.0, 702_500.0, 2_302_500.0);
        let cells = make_grid(b, CELL_SIZE_M).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].bounds, b);
    }

    #[test]
    fn partial_last_cell_extends_past_data() {
        let cells = make_grid(Rect::new(0.0, 0.0, 6000.0, 2500.0), CELL_SIZE_M).unwrap();
        assert_eq!(cells.len(), 3);
        assert_eq!(cells[2].bounds.max_x - 6000.0, 1500.0);
    }

    #[test]
    fn ids_are_row_major_from_north_west() {
        let cells = make_grid(Rect::new(0.0, 0.0, 5000.0, 5000.0), CELL_SIZE_M).unwrap();
        assert_eq!(cells[0].bounds, Rect::new(0.0, 2500.0, 2500.0, 5000.0));
        assert_eq!(cells[1].bounds.min_x, 2500.0);
        assert_eq!(cells[2].bounds.max_y, 2500.0);
        assert_eq!(cells.iter().map(|c| c.cell_id).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn degenerate_bounds_rejected() {
        assert!(make_grid(Rect::new(0.0, 0.0, 0.0, 10.0), CELL_SIZE_M).is_err());
        assert!(make_grid(Rect::new(0.0, 0.0, 10.0, 10.0), 0.0).is_err());
    }
}
