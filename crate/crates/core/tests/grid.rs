use mrcal::grid::{bilinear_interpolate, flatten, read_ascii_grid, unflatten, write_ascii_grid};
use mrcal::{Grid, GridGeometry, LocationSet};
use proptest::prelude::*;

#[test]
fn subset_of_centers_reads_the_right_cells() {
    let g = GridGeometry::new(10.5, 20.5, 1.0, 3, 3).unwrap();
    let grid = Grid::from_fn(g, |x, y| 100.0 * x + y).unwrap();
    let (a, b) = (g.center(0, 2), g.center(2, 1));
    let locs = LocationSet::new(vec![a, b]).unwrap();
    assert_eq!(flatten(&grid, &locs).unwrap(), vec![100.0 * a.0 + a.1, 100.0 * b.0 + b.1]);
    let back = unflatten(g, &locs, &[1.0, 2.0]).unwrap();
    assert_eq!(back.get(0, 2), Some(1.0));
    assert_eq!(back.get(2, 1), Some(2.0));
    assert_eq!(back.nodata_mask().iter().filter(|&&n| n).count(), 7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bilinear_is_exact_on_bilinear_fields(
        c in prop::array::uniform4(0.0f64..5.0),
        ox in 10.0f64..50.0,
        oy in 10.0f64..50.0,
        cs in 0.5f64..8.0,
        n in 2usize..7,
    ) {
        let f = |x: f64, y: f64| c[0] + c[1] * x + c[2] * y + c[3] * x * y;
        let coarse = GridGeometry::new(ox, oy, cs, n, n).unwrap();
        let fine = GridGeometry::new(ox - cs / 2.0 + cs / 8.0, oy - cs / 2.0 + cs / 8.0, cs / 4.0, 4 * n, 4 * n).unwrap();
        let locs = LocationSet::shared_centers(&fine, &coarse);
        prop_assert!(!locs.is_empty());
        let got = bilinear_interpolate(&Grid::from_fn(coarse, f).unwrap(), &locs).unwrap();
        for (&(x, y), v) in locs.coords().iter().zip(got) {
            prop_assert!((v - f(x, y)).abs() <= 1e-9 * (1.0 + f(x, y).abs()));
        }
    }

    #[test]
    fn ascii_round_trip(vals in prop::collection::vec(prop::option::weighted(0.9, 0.0f64..1e3), 12), ox in -1e3f64..1e3) {
        let g = GridGeometry::new(ox, 5.0, 2.5, 3, 4).unwrap();
        let nodata: Vec<bool> = vals.iter().map(Option::is_none).collect();
        let grid = Grid::with_nodata(g, vals.iter().map(|v| v.unwrap_or(0.0)).collect(), nodata).unwrap();
        let mut buf = Vec::new();
        write_ascii_grid(&grid, &mut buf).unwrap();
        let back: Grid = read_ascii_grid(buf.as_slice()).unwrap();
        prop_assert_eq!(back.nodata_mask(), grid.nodata_mask());
        for r in 0..3 {
            for col in 0..4 {
                prop_assert_eq!(back.get(r, col), grid.get(r, col));
            }
        }
    }
}
