//! Gaussian-curvature filter.
//!
//! Each sweep visits the four parity classes of the pixel grid in turn
//! (a pixel's 8-neighbourhood never shares its class, so updates within a
//! class are independent). A pixel moves by the smallest of eight
//! tangent-plane projection distances, which drives local Gaussian curvature
//! toward zero while leaving developable surfaces (planes, ramps) untouched.
//!
//! Rows are indexed by `i` (the y axis) and columns by `j` (the x axis).
//! Out-of-range neighbours replicate the nearest edge pixel.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::Volume3;

/// Visiting order of the (row parity, column parity) classes.
const PARITY_ORDER: [(usize, usize); 4] = [(0, 0), (1, 1), (0, 1), (1, 0)];

/// The eight projection distances d1..d8 at row `i`, column `j`.
pub fn projection_distances(u: &[f64], nx: usize, ny: usize, i: usize, j: usize) -> [f64; 8] {
    let at = |di: isize, dj: isize| -> f64 {
        let r = (i as isize + di).clamp(0, ny as isize - 1) as usize;
        let c = (j as isize + dj).clamp(0, nx as isize - 1) as usize;
        u[c + nx * r]
    };
    let c = at(0, 0);
    let (n, s, w, e) = (at(-1, 0), at(1, 0), at(0, -1), at(0, 1));
    let (nw, ne, sw, se) = (at(-1, -1), at(-1, 1), at(1, -1), at(1, 1));
    [
        (n + s) / 2.0 - c,
        (w + e) / 2.0 - c,
        (nw + se) / 2.0 - c,
        (ne + sw) / 2.0 - c,
        n + w - nw - c,
        n + e - ne - c,
        s + w - sw - c,
        s + e - se - c,
    ]
}

/// Smallest-magnitude distance; ties go to the lowest index.
#[inline]
fn min_abs(d: &[f64; 8]) -> f64 {
    let mut best = d[0];
    for &v in &d[1..] {
        if v.abs() < best.abs() {
            best = v;
        }
    }
    best
}

pub fn cf_denoise_slice(f: &[f64], nx: usize, ny: usize, iters: usize) -> Vec<f64> {
    assert_eq!(f.len(), nx * ny);
    let mut u = f.to_vec();
    for _ in 0..iters {
        for &(pi, pj) in &PARITY_ORDER {
            for i in (pi..ny).step_by(2) {
                for j in (pj..nx).step_by(2) {
                    let d = projection_distances(&u, nx, ny, i, j);
                    u[j + nx * i] += min_abs(&d);
                }
            }
        }
    }
    u
}

/// Curvature-filters every axial slice of `vol` independently.
pub fn cf_denoise(vol: &Volume3, iters: usize) -> Result<Volume3> {
    if iters == 0 {
        return Err(Error::InvalidArgument("CF needs at least one iteration".into()));
    }
    let dims = vol.dims();
    let slices: Vec<Vec<f64>> = (0..dims.nz)
        .into_par_iter()
        .map(|z| cf_denoise_slice(vol.slice(z), dims.nx, dims.ny, iters))
        .collect();
    Ok(Volume3::new(dims, slices.concat())?.with_voxel_size(vol.voxel_size()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Dims;
    use proptest::prelude::*;

    #[test]
    fn constant_slice_unchanged() {
        let f = vec![3.5; 30];
        assert_eq!(cf_denoise_slice(&f, 6, 5, 10), f);
    }

    #[test]
    fn planar_ramp_unchanged() {
        let (nx, ny) = (7, 6);
        let f: Vec<f64> = (0..nx * ny).map(|k| ((k % nx) + (k / nx)) as f64).collect();
        assert_eq!(cf_denoise_slice(&f, nx, ny, 10), f);
        let g: Vec<f64> = (0..nx * ny).map(|k| 0.5 * (k % nx) as f64 - 2.0 * (k / nx) as f64).collect();
        assert_eq!(cf_denoise_slice(&g, nx, ny, 3), g);
    }

    #[test]
    fn impulse_distances_and_reduction() {
        let mut f = vec![0.0; 9];
        f[4] = 1.0;
        // Every neighbour is zero, so all eight distances equal −1.
        assert_eq!(projection_distances(&f, 3, 3, 1, 1), [-1.0; 8]);
        let u = cf_denoise_slice(&f, 3, 3, 1);
        assert!(u[4].abs() < 1.0);

        let mut g = vec![0.0; 49];
        g[24] = 5.0;
        let u = cf_denoise_slice(&g, 7, 7, 1);
        assert!(u[24].abs() < 5.0);
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        assert_eq!(min_abs(&[0.5, -0.5, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0]), 0.5);
        assert_eq!(min_abs(&[2.0, -0.5, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0]), -0.5);
    }

    #[test]
    fn volume_wrapper() {
        let dims = Dims::new(5, 4, 2).unwrap();
        let v = Volume3::from_fn(dims, |x, y, z| (x * y + z) as f64).unwrap();
        let out = cf_denoise(&v, 2).unwrap();
        assert_eq!(out.slice(1), cf_denoise_slice(v.slice(1), 5, 4, 2).as_slice());
        assert!(cf_denoise(&v, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn single_sweep_range_bounded_by_largest_step(
            values in proptest::collection::vec(-50.0f64..50.0, 36)
        ) {
            let (nx, ny) = (6, 6);
            let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            // Largest possible single step: |d| ≤ 2·(hi − lo) for the corner projections.
            let slack = 2.0 * (hi - lo);
            let u = cf_denoise_slice(&values, nx, ny, 1);
            for &v in &u {
                prop_assert!(v >= lo - slack - 1e-9 && v <= hi + slack + 1e-9);
            }
        }

        #[test]
        fn deterministic(values in proptest::collection::vec(-5.0f64..5.0, 20)) {
            prop_assert_eq!(cf_denoise_slice(&values, 5, 4, 3), cf_denoise_slice(&values, 5, 4, 3));
        }
    }
}
