use crate::error::Result;
use crate::registry::Registry;
use crate::volume::{check_dims, ComplexVolume3, Mask, PhaseField, Volume3};

use super::{flip_to_right, is_noise_floor};

/// Adjusts rotation angles before the complex rotation is applied.
pub trait Calibrator: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns the angles to apply and the voxels judged noise-floor.
    fn calibrate(
        &self,
        delta: &PhaseField,
        raw: &ComplexVolume3,
        filtered: &ComplexVolume3,
    ) -> Result<(PhaseField, Mask)>;
}

/// The quadrant rule: rectify left-half-plane rotations unless the raw
/// voxel is diagonally opposite its filtered estimate.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadrantCalibrator;

impl Calibrator for QuadrantCalibrator {
    fn name(&self) -> &'static str {
        "quadrant"
    }

    fn calibrate(
        &self,
        delta: &PhaseField,
        raw: &ComplexVolume3,
        filtered: &ComplexVolume3,
    ) -> Result<(PhaseField, Mask)> {
        calibrate_rotation(delta, raw, filtered)
    }
}

/// Leaves every angle untouched. Negative control for the calibration.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityCalibrator;

impl Calibrator for IdentityCalibrator {
    fn name(&self) -> &'static str {
        "identity"
    }

    fn calibrate(
        &self,
        delta: &PhaseField,
        raw: &ComplexVolume3,
        _filtered: &ComplexVolume3,
    ) -> Result<(PhaseField, Mask)> {
        check_dims(delta.dims(), raw.dims(), "calibration")?;
        Ok((delta.clone(), Mask::empty(delta.dims())))
    }
}

/// Per voxel:
/// 1. `Δφᶠ` = `Δφ` reflected into the right half-plane when it lies in Q2/Q3;
/// 2. `Δφᶠᶠ` = `Δφ` (reflection undone) when the raw voxel is noise-floor,
///    else `Δφᶠ`;
/// 3. the output is `Δφᶠ` where `Δφ ≠ Δφᶠᶠ` and `Δφ` otherwise.
pub fn calibrate_rotation(
    delta: &PhaseField,
    raw: &ComplexVolume3,
    filtered: &ComplexVolume3,
) -> Result<(PhaseField, Mask)> {
    check_dims(delta.dims(), raw.dims(), "calibration")?;
    check_dims(delta.dims(), filtered.dims(), "calibration")?;
    let dims = delta.dims();
    let (rr, ri) = (raw.re().as_slice(), raw.im().as_slice());
    let (fr, fi) = (filtered.re().as_slice(), filtered.im().as_slice());
    let mut out = Vec::with_capacity(dims.len());
    let mut floor = Vec::with_capacity(dims.len());
    for (i, &d) in delta.as_slice().iter().enumerate() {
        let flipped = flip_to_right(d);
        let noise_floor = is_noise_floor((rr[i], ri[i]), (fr[i], fi[i]));
        let flipped_back = if noise_floor { d } else { flipped };
        out.push(if d != flipped_back { flipped } else { d });
        floor.push(noise_floor);
    }
    Ok((PhaseField::new(Volume3::new(dims, out)?)?, Mask::new(dims, floor)?))
}

pub type CalibratorConstructor = fn() -> Box<dyn Calibrator>;

/// Calibrators available by name.
#[derive(Debug, Clone)]
pub struct CalibratorRegistry(Registry<CalibratorConstructor>);

impl Default for CalibratorRegistry {
    fn default() -> Self {
        let mut r: Registry<CalibratorConstructor> = Registry::new("calibrator");
        r.register("quadrant", || Box::new(QuadrantCalibrator))
            .register("identity", || Box::new(IdentityCalibrator));
        CalibratorRegistry(r)
    }
}

impl CalibratorRegistry {
    pub fn register(&mut self, name: &str, ctor: CalibratorConstructor) -> &mut Self {
        self.0.register(name, ctor);
        self
    }

    pub fn names(&self) -> Vec<&str> {
        self.0.names()
    }

    pub fn build(&self, name: &str) -> Result<Box<dyn Calibrator>> {
        Ok((self.0.get(name)?)())
    }
}
