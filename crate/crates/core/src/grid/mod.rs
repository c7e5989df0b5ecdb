//! Raster model output and resolution matching.
//!
//! Values sit at cell centers. `origin_x`/`origin_y` is the center of cell
//! `(row 0, col 0)`, rows grow with `y` and columns with `x`, and `values` is
//! stored row-major.

mod ascii;

pub use ascii::{read_ascii_grid, write_ascii_grid, AsciiGridError};

use crate::scalar::Real;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid shape {n_rows}x{n_cols} does not match {len} values")]
    ShapeMismatch { n_rows: usize, n_cols: usize, len: usize },
    #[error("cell size must be positive, got {0}")]
    InvalidCellSize(f64),
    #[error("negative depth {value} at cell ({row}, {col})")]
    NegativeDepth { row: usize, col: usize, value: f64 },
    #[error("target ({x}, {y}) lies outside the cell-center hull of the grid")]
    TargetOutOfBounds { x: f64, y: f64 },
    #[error("target ({x}, {y}) has a nodata neighbor")]
    NodataNeighbor { x: f64, y: f64 },
    #[error("location ({x}, {y}) is not a cell center of the grid")]
    LocationNotOnGrid { x: f64, y: f64 },
    #[error("location ({x}, {y}) falls on a nodata cell")]
    NodataAtLocation { x: f64, y: f64 },
    #[error("duplicate location ({x}, {y})")]
    DuplicateLocation { x: f64, y: f64 },
}

/// Georeferencing of a square-cell raster.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridGeometry {
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub n_rows: usize,
    pub n_cols: usize,
}

impl GridGeometry {
    pub fn new(origin_x: f64, origin_y: f64, cell_size: f64, n_rows: usize, n_cols: usize) -> Result<Self, GridError> {
        if !(cell_size > 0.0) || !cell_size.is_finite() {
            return Err(GridError::InvalidCellSize(cell_size));
        }
        Ok(Self { origin_x, origin_y, cell_size, n_rows, n_cols })
    }

    pub fn len(&self) -> usize {
        self.n_rows * self.n_cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Center of cell `(row, col)`.
    pub fn center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + col as f64 * self.cell_size,
            self.origin_y + row as f64 * self.cell_size,
        )
    }

    /// All cell centers in row-major order.
    pub fn centers(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| (0..self.n_cols).map(move |c| self.center(r, c)))
    }

    /// Axis-aligned hull of the cell centers: `(xmin, xmax, ymin, ymax)`.
    pub fn center_hull(&self) -> (f64, f64, f64, f64) {
        let (x1, y1) = self.center(self.n_rows.saturating_sub(1), self.n_cols.saturating_sub(1));
        (self.origin_x, x1, self.origin_y, y1)
    }

    /// Lower-left and upper-right corners of the covered area.
    pub fn extent(&self) -> ((f64, f64), (f64, f64)) {
        let h = 0.5 * self.cell_size;
        let (xmin, xmax, ymin, ymax) = self.center_hull();
        ((xmin - h, ymin - h), (xmax + h, ymax + h))
    }

    /// Cell whose center coincides with `(x, y)`, within a millionth of a cell.
    pub fn cell_at_center(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fc = (x - self.origin_x) / self.cell_size;
        let fr = (y - self.origin_y) / self.cell_size;
        let (c, r) = (fc.round(), fr.round());
        if (fc - c).abs() > 1e-6 || (fr - r).abs() > 1e-6 || c < 0.0 || r < 0.0 {
            return None;
        }
        let (r, c) = (r as usize, c as usize);
        (r < self.n_rows && c < self.n_cols).then_some((r, c))
    }
}

/// Rectangular raster of flood depths (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    geometry: GridGeometry,
    values: Vec<T>,
    nodata: Vec<bool>,
}

impl<T: Real> Grid<T> {
    /// Builds a grid with no nodata cells.
    pub fn new(geometry: GridGeometry, values: Vec<T>) -> Result<Self, GridError> {
        let nodata = vec![false; values.len()];
        Self::with_nodata(geometry, values, nodata)
    }

    pub fn with_nodata(geometry: GridGeometry, values: Vec<T>, nodata: Vec<bool>) -> Result<Self, GridError> {
        if values.len() != geometry.len() || nodata.len() != geometry.len() {
            return Err(GridError::ShapeMismatch {
                n_rows: geometry.n_rows,
                n_cols: geometry.n_cols,
                len: values.len(),
            });
        }
        for (i, (&v, &nd)) in values.iter().zip(&nodata).enumerate() {
            if !nd && !(v >= T::zero()) {
                return Err(GridError::NegativeDepth {
                    row: i / geometry.n_cols,
                    col: i % geometry.n_cols,
                    value: crate::scalar::to_f64(v),
                });
            }
        }
        // Masked cells carry no value.
        let values = values.into_iter().zip(&nodata).map(|(v, &nd)| if nd { T::zero() } else { v }).collect();
        Ok(Self { geometry, values, nodata })
    }

    /// Builds a grid by evaluating `f(x, y)` at every cell center.
    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut(f64, f64) -> T) -> Result<Self, GridError> {
        let values = geometry.centers().map(|(x, y)| f(x, y)).collect();
        Self::new(geometry, values)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn nodata_mask(&self) -> &[bool] {
        &self.nodata
    }

    pub fn n_rows(&self) -> usize {
        self.geometry.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.geometry.n_cols
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.geometry.n_cols + col
    }

    /// Value at `(row, col)`, or `None` for nodata.
    pub fn get(&self, row: usize, col: usize) -> Option<T> {
        let i = self.index(row, col);
        (!self.nodata[i]).then(|| self.values[i])
    }

    pub fn is_nodata(&self, row: usize, col: usize) -> bool {
        self.nodata[self.index(row, col)]
    }

    /// Value of the bilinear surface through the four surrounding centers.
    pub fn interpolate_at(&self, x: f64, y: f64) -> Result<T, GridError> {
        let g = &self.geometry;
        let (xmin, xmax, ymin, ymax) = g.center_hull();
        let tol = 1e-9 * g.cell_size;
        if !(x >= xmin - tol && x <= xmax + tol && y >= ymin - tol && y <= ymax + tol) {
            return Err(GridError::TargetOutOfBounds { x, y });
        }
        let (c0, tx) = axis_cell((x - g.origin_x) / g.cell_size, g.n_cols);
        let (r0, ty) = axis_cell((y - g.origin_y) / g.cell_size, g.n_rows);
        let c1 = (c0 + 1).min(g.n_cols - 1);
        let r1 = (r0 + 1).min(g.n_rows - 1);
        let corner = |r, c| self.get(r, c).ok_or(GridError::NodataNeighbor { x, y });
        let v00 = corner(r0, c0)?;
        let v01 = corner(r0, c1)?;
        let v10 = corner(r1, c0)?;
        let v11 = corner(r1, c1)?;
        let tx: T = crate::scalar::lit(tx);
        let ty: T = crate::scalar::lit(ty);
        let one = T::one();
        Ok((one - ty) * ((one - tx) * v00 + tx * v01) + ty * ((one - tx) * v10 + tx * v11))
    }

    /// Per-cell map into a new grid on the same geometry, carrying nodata.
    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Result<Grid<U>, GridError> {
        let values = self.values.iter().zip(&self.nodata).map(|(&v, &nd)| if nd { U::zero() } else { f(v) }).collect();
        Grid::with_nodata(self.geometry, values, self.nodata.clone())
    }
}

/// Splits a fractional cell coordinate into a lower index and weight.
fn axis_cell(f: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let f = f.clamp(0.0, (n - 1) as f64);
    let i = (f.floor() as usize).min(n - 2);
    (i, f - i as f64)
}

/// Ordered set of distinct spatial locations (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct LocationSet {
    coords: Vec<(f64, f64)>,
}

impl LocationSet {
    pub fn new(coords: Vec<(f64, f64)>) -> Result<Self, GridError> {
        let mut keys: Vec<(u64, u64)> = coords.iter().map(|&(x, y)| (x.to_bits(), y.to_bits())).collect();
        keys.sort_unstable();
        if let Some(w) = keys.windows(2).find(|w| w[0] == w[1]) {
            return Err(GridError::DuplicateLocation {
                x: f64::from_bits(w[0].0),
                y: f64::from_bits(w[0].1),
            });
        }
        Ok(Self { coords })
    }

    /// Every cell center of `geometry`, row-major.
    pub fn all_centers(geometry: &GridGeometry) -> Self {
        Self { coords: geometry.centers().collect() }
    }

    /// Cell centers of `fine` that lie inside the cell-center hull of `coarse`,
    /// i.e. the locations where coarse runs can be interpolated.
    pub fn shared_centers(fine: &GridGeometry, coarse: &GridGeometry) -> Self {
        let (xmin, xmax, ymin, ymax) = coarse.center_hull();
        let tol = 1e-9 * coarse.cell_size;
        let coords = fine
            .centers()
            .filter(|&(x, y)| x >= xmin - tol && x <= xmax + tol && y >= ymin - tol && y <= ymax + tol)
            .collect();
        Self { coords }
    }

    pub fn coords(&self) -> &[(f64, f64)] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Interpolates a coarse grid onto `targets`.
pub fn bilinear_interpolate<T: Real>(coarse: &Grid<T>, targets: &LocationSet) -> Result<Vec<T>, GridError> {
    targets.coords().iter().map(|&(x, y)| coarse.interpolate_at(x, y)).collect()
}

/// Reads the grid at `locations`, which must all be cell centers.
pub fn flatten<T: Real>(grid: &Grid<T>, locations: &LocationSet) -> Result<Vec<T>, GridError> {
    locations
        .coords()
        .iter()
        .map(|&(x, y)| {
            let (r, c) = grid.geometry().cell_at_center(x, y).ok_or(GridError::LocationNotOnGrid { x, y })?;
            grid.get(r, c).ok_or(GridError::NodataAtLocation { x, y })
        })
        .collect()
}

/// Writes `depths` at `locations` back into a grid on `geometry`. Cells not
/// covered by a location become nodata.
pub fn unflatten<T: Real>(geometry: GridGeometry, locations: &LocationSet, depths: &[T]) -> Result<Grid<T>, GridError> {
    let mut values = vec![T::zero(); geometry.len()];
    let mut nodata = vec![true; geometry.len()];
    for (&(x, y), &v) in locations.coords().iter().zip(depths) {
        let (r, c) = geometry.cell_at_center(x, y).ok_or(GridError::LocationNotOnGrid { x, y })?;
        let i = r * geometry.n_cols + c;
        values[i] = v;
        nodata[i] = false;
    }
    Grid::with_nodata(geometry, values, nodata)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn geom(n_rows: usize, n_cols: usize, cs: f64) -> GridGeometry {
        GridGeometry::new(0.0, 0.0, cs, n_rows, n_cols).unwrap()
    }

    #[test]
    fn node_reproduction() {
        let g = Grid::new(geom(2, 3, 1.0), vec![0.0, 1.0, 2.5, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(g.interpolate_at(2.0, 0.0).unwrap(), 2.5);
    }

    #[test]
    fn cell_midpoint_is_average() {
        let g = Grid::new(geom(2, 2, 1.0), vec![0.0, 1.0, 1.0, 2.0]).unwrap();
        assert_abs_diff_eq!(g.interpolate_at(0.5, 0.5).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn bilinear_function_reproduced() {
        let f = |x: f64, y: f64| 3.0 + 2.0 * x - y + 0.5 * x * y;
        let geometry = GridGeometry::new(10.0, 20.0, 2.0, 6, 7).unwrap();
        // Shift so every sampled value stays non-negative.
        let g = Grid::from_fn(geometry, |x, y| f(x, y) + 100.0).unwrap();
        for &(x, y) in &[(11.3, 21.7), (17.9, 29.1), (10.0, 30.0), (22.0, 20.0), (15.55, 24.25)] {
            let v = g.interpolate_at(x, y).unwrap();
            assert!((v - (f(x, y) + 100.0)).abs() < 1e-12, "{v} vs {}", f(x, y) + 100.0);
        }
    }

    #[test]
    fn works_in_single_precision() {
        let g: Grid<f32> = Grid::new(geom(2, 2, 1.0), vec![0.0, 1.0, 1.0, 2.0]).unwrap();
        assert!((g.interpolate_at(0.25, 0.75).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_boundary_band_and_nodata() {
        let g = Grid::with_nodata(geom(2, 2, 1.0), vec![0.0, 1.0, 1.0, 2.0], vec![false, false, false, true]).unwrap();
        assert!(matches!(g.interpolate_at(-0.25, 0.5), Err(GridError::TargetOutOfBounds { .. })));
        assert!(matches!(g.interpolate_at(1.0, 1.5), Err(GridError::TargetOutOfBounds { .. })));
        assert!(matches!(g.interpolate_at(0.5, 0.5), Err(GridError::NodataNeighbor { .. })));
    }

    #[test]
    fn invariants_enforced() {
        assert!(matches!(GridGeometry::new(0.0, 0.0, 0.0, 1, 1), Err(GridError::InvalidCellSize(_))));
        assert!(matches!(Grid::new(geom(2, 2, 1.0), vec![0.0; 3]), Err(GridError::ShapeMismatch { .. })));
        assert!(matches!(Grid::new(geom(1, 2, 1.0), vec![0.0, -0.1]), Err(GridError::NegativeDepth { .. })));
        assert!(matches!(
            LocationSet::new(vec![(0.0, 1.0), (2.0, 3.0), (0.0, 1.0)]),
            Err(GridError::DuplicateLocation { .. })
        ));
    }

    #[test]
    fn flatten_cases() {
        let g = Grid::new(geom(1, 1, 1.0), vec![0.0]).unwrap();
        assert_eq!(flatten(&g, &LocationSet::all_centers(g.geometry())).unwrap(), vec![0.0]);

        let g = Grid::new(geom(2, 2, 1.0), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(flatten(&g, &LocationSet::all_centers(g.geometry())).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);

        let values: Vec<f64> = (0..9).map(|i| i as f64 * 1.5).collect();
        let g = Grid::new(geom(3, 3, 2.0), values.clone()).unwrap();
        let locs = LocationSet::new(vec![(4.0, 2.0), (0.0, 4.0)]).unwrap();
        // Direct lookup: (x=4,y=2) -> row 1 col 2; (x=0,y=4) -> row 2 col 0.
        assert_eq!(flatten(&g, &locs).unwrap(), vec![values[5], values[6]]);

        let off = LocationSet::new(vec![(0.5, 0.0)]).unwrap();
        assert!(matches!(flatten(&g, &off), Err(GridError::LocationNotOnGrid { .. })));
    }

    #[test]
    fn shared_centers_excludes_boundary_band() {
        let fine = GridGeometry::new(0.5, 0.5, 1.0, 32, 32).unwrap();
        let coarse = GridGeometry::new(2.0, 2.0, 4.0, 8, 8).unwrap();
        let locs = LocationSet::shared_centers(&fine, &coarse);
        assert_eq!(locs.len(), 28 * 28);
        assert!(locs.coords().iter().all(|&(x, y)| (2.0..=30.0).contains(&x) && (2.0..=30.0).contains(&y)));
    }

    #[test]
    fn unflatten_inverts_flatten() {
        let g = Grid::new(geom(3, 4, 1.0), (0..12).map(|i| i as f64).collect()).unwrap();
        let locs = LocationSet::all_centers(g.geometry());
        let back = unflatten(*g.geometry(), &locs, &flatten(&g, &locs).unwrap()).unwrap();
        assert_eq!(back, g);
    }
}
