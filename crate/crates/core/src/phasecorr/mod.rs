//! Phase correction: background-phase estimation, complex rotation and the
//! quadrant calibration that tells genuine noise-floor apart from signal
//! whose sign was flipped by noise.
//!
//! A voxel with magnitude `M` and measured phase `φ` is rotated by
//! `Δφ = φ − φ_BG`; the real part `M·cos Δφ` is kept as the corrected signal
//! and `M·sin Δφ` is discarded. Uncalibrated correction lets any voxel whose
//! `Δφ` lands in the left half-plane go negative. Calibration reflects such
//! angles back to the right half-plane unless the raw voxel sits in the
//! quadrant diagonally opposite the filtered (noise-free) estimate, which is
//! the signature of noise-floor.

mod calibrate;

use std::f64::consts::{FRAC_PI_2, PI};

pub use calibrate::{
    calibrate_rotation, Calibrator, CalibratorRegistry, IdentityCalibrator, QuadrantCalibrator,
};

use crate::angle::{opposite_diagonal, wrap, Quadrant};
use crate::error::Result;
use crate::filters::{filter_series_with, BackgroundFilter, FilterConfig, FilterRegistry};
use crate::volume::{check_dims, ComplexSeries, ComplexVolume3, DwiSeries, MagnitudeSeries, Mask, PhaseField, Volume3};

#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionResult {
    /// `M·cos` of the applied angle; may be negative.
    pub corrected_real: Volume3,
    pub discarded_imag: Volume3,
    /// Angle actually applied, in (−π, π].
    pub rotation: PhaseField,
    /// Voxels judged genuine noise-floor (empty for uncalibrated correction).
    pub noise_floor_mask: Mask,
}

/// Full-quadrant phase of a complex value; the origin maps to 0.
#[inline]
fn phase(re: f64, im: f64) -> f64 {
    if re == 0.0 && im == 0.0 {
        0.0
    } else {
        wrap(im.atan2(re))
    }
}

fn phase_field(vol: &ComplexVolume3) -> PhaseField {
    let angles = vol
        .re()
        .zip_map(vol.im(), phase)
        .expect("parts share dims");
    PhaseField::new(angles).expect("phase() is canonical")
}

/// Per-voxel phase of the raw complex signal.
pub fn measured_phase(vol: &ComplexVolume3) -> PhaseField {
    phase_field(vol)
}

/// Background phase from the filtered real and imaginary parts, using the
/// two-argument arctangent so all four quadrants are resolved.
pub fn background_phase(filtered: &ComplexVolume3) -> PhaseField {
    phase_field(filtered)
}

/// `Δφ = wrap(φ − φ_BG)`.
pub fn rotation_angle(phi: &PhaseField, phi_bg: &PhaseField) -> Result<PhaseField> {
    check_dims(phi.dims(), phi_bg.dims(), "rotation angle")?;
    let delta = phi.angles().zip_map(phi_bg.angles(), |a, b| wrap(a - b))?;
    PhaseField::new(delta)
}

/// Rotates by `delta`: real part `M·cos Δφ`, imaginary part `M·sin Δφ`.
pub fn rotate(vol: &ComplexVolume3, delta: &PhaseField) -> Result<CorrectionResult> {
    check_dims(vol.dims(), delta.dims(), "rotation")?;
    let m = vol.magnitude();
    let corrected_real = m.zip_map(delta.angles(), |m, d| m * d.cos())?;
    let discarded_imag = m.zip_map(delta.angles(), |m, d| m * d.sin())?;
    Ok(CorrectionResult {
        corrected_real,
        discarded_imag,
        rotation: delta.clone(),
        noise_floor_mask: Mask::empty(vol.dims()),
    })
}

/// Reflects a left-half-plane angle across the imaginary axis
/// (Q2 → Q1, Q3 → Q4); right-half-plane angles pass through.
#[inline]
pub fn flip_to_right(delta: f64) -> f64 {
    if delta > FRAC_PI_2 {
        PI - delta
    } else if delta < -FRAC_PI_2 {
        -PI - delta
    } else {
        delta
    }
}

/// True when the raw voxel lies in the quadrant diagonally opposite the
/// filtered estimate, i.e. noise inverted both sign-symbols.
#[inline]
pub fn is_noise_floor(raw: (f64, f64), filtered: (f64, f64)) -> bool {
    opposite_diagonal(Quadrant::of(raw.0, raw.1), Quadrant::of(filtered.0, filtered.1))
}

/// Rotation by a calibrated angle. Where `applied` is the reflection of
/// `original`, the phasor is taken from the reflection identity
/// `(cos, sin) → (−cos, sin)` so the corrected value is exactly
/// `|M·cos Δφ|`.
pub fn rotate_calibrated(
    vol: &ComplexVolume3,
    original: &PhaseField,
    applied: &PhaseField,
    noise_floor_mask: Mask,
) -> Result<CorrectionResult> {
    check_dims(vol.dims(), original.dims(), "rotation")?;
    check_dims(vol.dims(), applied.dims(), "rotation")?;
    let m = vol.magnitude();
    // Real and imaginary parts in separate passes so each uses the plain
    // cos/sin rather than a fused sincos that may round differently.
    let pass = |part: fn(f64) -> f64, reflect: f64| -> Vec<f64> {
        m.as_slice()
            .iter()
            .zip(original.as_slice())
            .zip(applied.as_slice())
            .map(|((&m, &d), &a)| {
                if a == d {
                    m * part(d)
                } else if a == flip_to_right(d) {
                    m * reflect * part(d)
                } else {
                    m * part(a)
                }
            })
            .collect()
    };
    let re = pass(f64::cos, -1.0);
    let im = pass(f64::sin, 1.0);
    Ok(CorrectionResult {
        corrected_real: Volume3::new(vol.dims(), re)?,
        discarded_imag: Volume3::new(vol.dims(), im)?,
        rotation: applied.clone(),
        noise_floor_mask,
    })
}

/// Corrects one volume against its filtered estimate.
pub fn correct_volume(
    raw: &ComplexVolume3,
    filtered: &ComplexVolume3,
    calibrator: Option<&dyn Calibrator>,
) -> Result<CorrectionResult> {
    let delta = rotation_angle(&measured_phase(raw), &background_phase(filtered))?;
    match calibrator {
        None => rotate(raw, &delta),
        Some(cal) => {
            let (applied, mask) = cal.calibrate(&delta, raw, filtered)?;
            rotate_calibrated(raw, &delta, &applied, mask)
        }
    }
}

#[derive(Debug, Clone)]
pub struct PhaseCorrection {
    /// Corrected real parts, one per DW volume.
    pub corrected: MagnitudeSeries,
    pub diagnostics: Vec<CorrectionResult>,
}

/// Corrects a series given its already-filtered counterpart.
pub fn correct_series(
    raw: &ComplexSeries,
    filtered: &ComplexSeries,
    calibrator: Option<&dyn Calibrator>,
) -> Result<PhaseCorrection> {
    use rayon::prelude::*;
    check_dims(raw.dims(), filtered.dims(), "raw vs filtered series")?;
    let diagnostics = raw
        .volumes()
        .par_iter()
        .zip(filtered.volumes().par_iter())
        .map(|(r, f)| correct_volume(r, f, calibrator))
        .collect::<Result<Vec<_>>>()?;
    let corrected = DwiSeries::new(
        diagnostics.iter().map(|d| d.corrected_real.clone()).collect(),
        raw.gradients().clone(),
    )?;
    Ok(PhaseCorrection {
        corrected,
        diagnostics,
    })
}

/// Filter, estimate background phase, rotate, optionally calibrating with
/// the quadrant rule.
pub fn phase_correct(
    series: &ComplexSeries,
    cfg: &FilterConfig,
    calibrated: bool,
) -> Result<PhaseCorrection> {
    let filter = FilterRegistry::default().build(cfg)?;
    phase_correct_with(series, filter.as_ref(), calibrated.then_some(&QuadrantCalibrator as &dyn Calibrator))
}

pub fn phase_correct_with(
    series: &ComplexSeries,
    filter: &dyn BackgroundFilter,
    calibrator: Option<&dyn Calibrator>,
) -> Result<PhaseCorrection> {
    let filtered = filter_series_with(series, filter)?;
    correct_series(series, &filtered.series, calibrator)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradients::GradientTable;
    use crate::volume::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_4;

    fn one(v: f64) -> Volume3 {
        Volume3::filled(Dims::new(1, 1, 1).unwrap(), v)
    }

    fn cv(re: f64, im: f64) -> ComplexVolume3 {
        ComplexVolume3::new(one(re), one(im)).unwrap()
    }

    fn pf(a: f64) -> PhaseField {
        PhaseField::new(one(a)).unwrap()
    }

    #[test]
    fn measured_phase_examples() {
        assert!((measured_phase(&cv(1.0, 1.0)).as_slice()[0] - FRAC_PI_4).abs() < 1e-15);
        assert_eq!(measured_phase(&cv(-1.0, 0.0)).as_slice()[0], PI);
        assert_eq!(measured_phase(&cv(-1.0, -0.0)).as_slice()[0], PI);
        assert_eq!(measured_phase(&cv(0.0, 0.0)).as_slice()[0], 0.0);
        assert_eq!(measured_phase(&cv(-0.0, 0.0)).as_slice()[0], 0.0);
    }

    #[test]
    fn background_phase_examples() {
        assert_eq!(background_phase(&cv(1.0, 0.0)).as_slice()[0], 0.0);
        assert!((background_phase(&cv(1.0, 1.0)).as_slice()[0] - FRAC_PI_4).abs() < 1e-15);
        // A single-argument arctan of the ratio would alias this to −π/4.
        assert!((background_phase(&cv(-1.0, 1.0)).as_slice()[0] - 3.0 * FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn rotation_angle_examples() {
        let d = |a, b| rotation_angle(&pf(a), &pf(b)).unwrap().as_slice()[0];
        assert_eq!(d(FRAC_PI_4, FRAC_PI_4), 0.0);
        assert!((d(-3.0 * FRAC_PI_4, FRAC_PI_2) - 3.0 * FRAC_PI_4).abs() < 1e-12);
        assert!((d(PI, -FRAC_PI_2) + FRAC_PI_2).abs() < 1e-12);
        let two = PhaseField::zeros(Dims::new(2, 1, 1).unwrap());
        assert!(rotation_angle(&pf(0.0), &two).is_err());
    }

    #[test]
    fn rotate_examples() {
        let r = rotate(&cv(1.0, 1.0), &pf(FRAC_PI_4)).unwrap();
        assert!((r.corrected_real.as_slice()[0] - 1.0).abs() < 1e-12);
        assert!((r.discarded_imag.as_slice()[0] - 1.0).abs() < 1e-12);
        let r = rotate(&cv(3.0, 4.0), &pf(0.0)).unwrap();
        assert_eq!(r.corrected_real.as_slice()[0], 5.0);
        assert_eq!(r.discarded_imag.as_slice()[0], 0.0);
        let r = rotate(&cv(3.0, 4.0), &pf(PI)).unwrap();
        assert!((r.corrected_real.as_slice()[0] + 5.0).abs() < 1e-12);
    }

    #[test]
    fn flip_examples() {
        assert!((flip_to_right(3.0 * FRAC_PI_4) - FRAC_PI_4).abs() < 1e-15);
        assert!((flip_to_right(-3.0 * FRAC_PI_4) + FRAC_PI_4).abs() < 1e-15);
        assert_eq!(flip_to_right(PI / 6.0), PI / 6.0);
        assert_eq!(flip_to_right(PI), 0.0);
    }

    #[test]
    fn flip_preserves_sine_and_rectifies_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let d: f64 = wrap(rng.random_range(-PI..PI));
            let f = flip_to_right(d);
            assert!((f.cos() - d.cos().abs()).abs() < 1e-12);
            assert!((f.sin() - d.sin()).abs() < 1e-12);
            assert!(f > -PI && f <= PI);
        }
    }

    #[test]
    fn noise_floor_examples() {
        assert!(is_noise_floor((-1.0, -0.5), (1.0, 0.5)));
        assert!(!is_noise_floor((-1.0, 0.5), (1.0, 0.5)));
        assert!(!is_noise_floor((1.0, 0.5), (1.0, 0.5)));
    }

    #[test]
    fn noise_floor_implies_left_half_plane_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut hits = 0;
        for _ in 0..100_000 {
            let mut nz = || {
                let v: f64 = rng.random_range(-1.0..1.0);
                if v == 0.0 { 0.5 } else { v }
            };
            let raw = (nz(), nz());
            let filt = (nz(), nz());
            if is_noise_floor(raw, filt) {
                hits += 1;
                let d = wrap(phase(raw.0, raw.1) - phase(filt.0, filt.1));
                assert!(d.cos() < 0.0, "raw {raw:?} filtered {filt:?} delta {d}");
            }
        }
        assert!(hits > 20_000);
    }

    #[test]
    fn calibrated_rotation_is_exact_reflection() {
        let raw = cv(-1.0, 1.0);
        let filt = cv(1.0, 1.0);
        let res = correct_volume(&raw, &filt, Some(&QuadrantCalibrator)).unwrap();
        let d = rotation_angle(&measured_phase(&raw), &background_phase(&filt)).unwrap().as_slice()[0];
        let m = 2f64.sqrt();
        assert_eq!(res.corrected_real.as_slice()[0], (m * d.cos()).abs());
        assert!(!res.noise_floor_mask.as_slice()[0]);
    }

    #[test]
    fn near_identity_filter_recovers_noise_free_magnitudes() {
        let dims = Dims::new(6, 6, 2).unwrap();
        let grads = GradientTable::hemisphere_scheme(1, 2, 1000.0).unwrap();
        let vols: Vec<_> = (0..3)
            .map(|k| {
                let mag = Volume3::from_fn(dims, |x, y, _| 50.0 + (x * y + k) as f64).unwrap();
                let ph = Volume3::from_fn(dims, |x, y, _| 0.3 * x as f64 - 0.2 * y as f64).unwrap();
                ComplexVolume3::new(
                    mag.zip_map(&ph, |m, p| m * p.cos()).unwrap(),
                    mag.zip_map(&ph, |m, p| m * p.sin()).unwrap(),
                )
                .unwrap()
            })
            .collect();
        let series = DwiSeries::new(vols, grads).unwrap();
        let cfg = FilterConfig::TV { lambda: 1e-9, iters: 10 };
        let out = phase_correct(&series, &cfg, false).unwrap();
        for (c, v) in out.corrected.volumes().iter().zip(series.volumes()) {
            for (a, b) in c.as_slice().iter().zip(v.magnitude().as_slice()) {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn calibration_changes_only_flipped_non_noise_floor_voxels() {
        let dims = Dims::new(12, 12, 2).unwrap();
        let grads = GradientTable::hemisphere_scheme(1, 3, 1000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let vols: Vec<_> = (0..4)
            .map(|_| {
                let re = Volume3::from_fn(dims, |x, _, _| x as f64 * 0.3 + rng.random_range(-3.0..3.0)).unwrap();
                let im = Volume3::from_fn(dims, |_, y, _| 1.0 - y as f64 * 0.1 + rng.random_range(-3.0..3.0)).unwrap();
                ComplexVolume3::new(re, im).unwrap()
            })
            .collect();
        let series = DwiSeries::new(vols, grads).unwrap();
        let cfg = FilterConfig::tv();
        let off = phase_correct(&series, &cfg, false).unwrap();
        let on = phase_correct(&series, &cfg, true).unwrap();
        let mut changed = 0;
        for (a, b) in off.diagnostics.iter().zip(&on.diagnostics) {
            for i in 0..dims.len() {
                let d = a.rotation.as_slice()[i];
                let left = d.cos() < 0.0;
                let floor = b.noise_floor_mask.as_slice()[i];
                let differs = a.corrected_real.as_slice()[i] != b.corrected_real.as_slice()[i];
                assert_eq!(differs, left && !floor && a.corrected_real.as_slice()[i] != 0.0, "voxel {i}");
                changed += differs as usize;
                let m2 = a.corrected_real.as_slice()[i].powi(2) + a.discarded_imag.as_slice()[i].powi(2);
                let n2 = b.corrected_real.as_slice()[i].powi(2) + b.discarded_imag.as_slice()[i].powi(2);
                assert!((m2 - n2).abs() <= 1e-9 * m2.max(1e-300));
            }
        }
        assert!(changed > 0);
    }
}
