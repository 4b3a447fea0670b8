//! Volumetric containers: scalar, complex, phase and boolean grids, and
//! DW series with their gradient table.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::angle::wrap;
use crate::error::{Error, Result};
use crate::gradients::GradientTable;

/// Grid extent, x-fastest storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Dims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Dims> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(Error::InvalidArgument(format!(
                "dims must be positive, got {nx}x{ny}x{nz}"
            )));
        }
        Ok(Dims { nx, ny, nz })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Voxels per axial slice.
    #[inline]
    pub fn slice_len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.nx;
        let y = (i / self.nx) % self.ny;
        let z = i / self.slice_len();
        (x, y, z)
    }

    pub fn as_array(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.nx, self.ny, self.nz)
    }
}

pub(crate) fn check_dims(a: Dims, b: Dims, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::DimsMismatch(format!("{what}: {a} vs {b}")));
    }
    Ok(())
}

/// A 3D scalar grid. All values are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    dims: Dims,
    voxel_size: [f64; 3],
    data: Vec<f64>,
}

impl Volume3 {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Volume3> {
        if data.len() != dims.len() {
            return Err(Error::DimsMismatch(format!(
                "{} values for a {dims} grid",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite value {} at voxel {i}",
                data[i]
            )));
        }
        Ok(Volume3 {
            dims,
            voxel_size: [1.0; 3],
            data,
        })
    }

    pub fn filled(dims: Dims, value: f64) -> Volume3 {
        assert!(value.is_finite());
        Volume3 {
            dims,
            voxel_size: [1.0; 3],
            data: vec![value; dims.len()],
        }
    }

    pub fn zeros(dims: Dims) -> Volume3 {
        Volume3::filled(dims, 0.0)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Volume3> {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Volume3::new(dims, data)
    }

    pub fn with_voxel_size(mut self, voxel_size: [f64; 3]) -> Volume3 {
        self.voxel_size = voxel_size;
        self
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.dims.index(x, y, z)]
    }

    /// Contiguous axial slice `z`.
    pub fn slice(&self, z: usize) -> &[f64] {
        let n = self.dims.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Volume3> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Ok(Volume3::new(self.dims, data)?.with_voxel_size(self.voxel_size))
    }

    pub fn zip_map(&self, other: &Volume3, f: impl Fn(f64, f64) -> f64) -> Result<Volume3> {
        check_dims(self.dims, other.dims, "zip_map")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Volume3::new(self.dims, data)?.with_voxel_size(self.voxel_size))
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// One complex acquisition as paired real and imaginary grids.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVolume3 {
    re: Volume3,
    im: Volume3,
}

impl ComplexVolume3 {
    pub fn new(re: Volume3, im: Volume3) -> Result<ComplexVolume3> {
        check_dims(re.dims(), im.dims(), "real/imaginary parts")?;
        Ok(ComplexVolume3 { re, im })
    }

    pub fn dims(&self) -> Dims {
        self.re.dims()
    }

    pub fn re(&self) -> &Volume3 {
        &self.re
    }

    pub fn im(&self) -> &Volume3 {
        &self.im
    }

    pub fn into_parts(self) -> (Volume3, Volume3) {
        (self.re, self.im)
    }

    /// Voxel-wise modulus √(re² + im²).
    pub fn magnitude(&self) -> Volume3 {
        self.re
            .zip_map(&self.im, f64::hypot)
            .expect("parts share dims and hypot of finite values is finite")
    }
}

/// Boolean voxel gate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: Dims,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(dims: Dims, data: Vec<bool>) -> Result<Mask> {
        if data.len() != dims.len() {
            return Err(Error::DimsMismatch(format!(
                "{} mask entries for a {dims} grid",
                data.len()
            )));
        }
        Ok(Mask { dims, data })
    }

    pub fn full(dims: Dims) -> Mask {
        Mask {
            dims,
            data: vec![true; dims.len()],
        }
    }

    pub fn empty(dims: Dims) -> Mask {
        Mask {
            dims,
            data: vec![false; dims.len()],
        }
    }

    pub fn from_fn(dims: Dims, f: impl Fn(usize, usize, usize) -> bool) -> Mask {
        let data = (0..dims.len())
            .map(|i| {
                let (x, y, z) = dims.coords(i);
                f(x, y, z)
            })
            .collect();
        Mask { dims, data }
    }

    /// Voxels where `vol` is nonzero.
    pub fn from_volume(vol: &Volume3) -> Mask {
        Mask {
            dims: vol.dims(),
            data: vol.as_slice().iter().map(|&v| v != 0.0).collect(),
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.dims.index(x, y, z)]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn not(&self) -> Mask {
        Mask {
            dims: self.dims,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        check_dims(self.dims, other.dims, "mask intersection")?;
        Ok(Mask {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        })
    }

    /// 1.0 inside, 0.0 outside.
    pub fn to_volume(&self) -> Volume3 {
        Volume3 {
            dims: self.dims,
            voxel_size: [1.0; 3],
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Per-voxel angles in (−π, π].
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    angles: Volume3,
}

impl PhaseField {
    /// Validates that every angle is already canonical.
    pub fn new(angles: Volume3) -> Result<PhaseField> {
        if let Some(&a) = angles.as_slice().iter().find(|&&a| !(a > -PI && a <= PI)) {
            return Err(Error::InvalidData(format!("angle {a} outside (-pi, pi]")));
        }
        Ok(PhaseField { angles })
    }

    /// Wraps every value into (−π, π].
    pub fn wrapped(angles: &Volume3) -> PhaseField {
        PhaseField {
            angles: angles.map(wrap).expect("wrap of finite values is finite"),
        }
    }

    pub fn zeros(dims: Dims) -> PhaseField {
        PhaseField {
            angles: Volume3::zeros(dims),
        }
    }

    pub fn dims(&self) -> Dims {
        self.angles.dims()
    }

    pub fn angles(&self) -> &Volume3 {
        &self.angles
    }

    pub fn as_slice(&self) -> &[f64] {
        self.angles.as_slice()
    }

    pub fn into_volume(self) -> Volume3 {
        self.angles
    }
}

/// Anything that can be a member of a DW series.
pub trait SeriesVolume: Clone {
    fn dims(&self) -> Dims;
}

impl SeriesVolume for Volume3 {
    fn dims(&self) -> Dims {
        Volume3::dims(self)
    }
}

impl SeriesVolume for ComplexVolume3 {
    fn dims(&self) -> Dims {
        ComplexVolume3::dims(self)
    }
}

/// Ordered DW volumes with one gradient-table entry per volume.
#[derive(Debug, Clone, PartialEq)]
pub struct DwiSeries<V> {
    volumes: Vec<V>,
    gradients: GradientTable,
}

pub type ComplexSeries = DwiSeries<ComplexVolume3>;
pub type MagnitudeSeries = DwiSeries<Volume3>;

impl<V: SeriesVolume> DwiSeries<V> {
    pub fn new(volumes: Vec<V>, gradients: GradientTable) -> Result<DwiSeries<V>> {
        if volumes.len() != gradients.len() {
            return Err(Error::DimsMismatch(format!(
                "{} volumes but {} gradient entries",
                volumes.len(),
                gradients.len()
            )));
        }
        let Some(first) = volumes.first() else {
            return Err(Error::InvalidArgument("empty series".into()));
        };
        let dims = first.dims();
        for (i, v) in volumes.iter().enumerate() {
            check_dims(dims, v.dims(), &format!("series volume {i}"))?;
        }
        Ok(DwiSeries { volumes, gradients })
    }

    pub fn dims(&self) -> Dims {
        self.volumes[0].dims()
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn volumes(&self) -> &[V] {
        &self.volumes
    }

    pub fn gradients(&self) -> &GradientTable {
        &self.gradients
    }

    pub fn into_volumes(self) -> Vec<V> {
        self.volumes
    }
}

impl ComplexSeries {
    pub fn real_parts(&self) -> Vec<Volume3> {
        self.volumes.iter().map(|v| v.re().clone()).collect()
    }

    pub fn imag_parts(&self) -> Vec<Volume3> {
        self.volumes.iter().map(|v| v.im().clone()).collect()
    }

    /// Magnitude series √(re² + im²), the uncorrected baseline.
    pub fn magnitude(&self) -> MagnitudeSeries {
        DwiSeries {
            volumes: self.volumes.iter().map(ComplexVolume3::magnitude).collect(),
            gradients: self.gradients.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(nx: usize, ny: usize, nz: usize) -> Dims {
        Dims::new(nx, ny, nz).unwrap()
    }

    #[test]
    fn volume_rejects_bad_length_and_nan() {
        assert!(matches!(
            Volume3::new(d(2, 2, 1), vec![0.0; 3]),
            Err(Error::DimsMismatch(_))
        ));
        assert!(matches!(
            Volume3::new(d(2, 1, 1), vec![0.0, f64::NAN]),
            Err(Error::InvalidData(_))
        ));
        assert!(Dims::new(0, 1, 1).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let dims = d(3, 4, 5);
        for i in 0..dims.len() {
            let (x, y, z) = dims.coords(i);
            assert_eq!(dims.index(x, y, z), i);
        }
        let v = Volume3::from_fn(dims, |x, y, z| (x + 10 * y + 100 * z) as f64).unwrap();
        assert_eq!(v.get(2, 3, 4), 432.0);
        assert_eq!(v.slice(1)[0], 100.0);
    }

    #[test]
    fn complex_parts_must_agree() {
        assert!(ComplexVolume3::new(Volume3::zeros(d(2, 2, 1)), Volume3::zeros(d(2, 1, 1))).is_err());
        let c = ComplexVolume3::new(
            Volume3::filled(d(1, 1, 1), 3.0),
            Volume3::filled(d(1, 1, 1), -4.0),
        )
        .unwrap();
        assert_eq!(c.magnitude().as_slice(), &[5.0]);
    }

    #[test]
    fn phase_field_range() {
        assert!(PhaseField::new(Volume3::filled(d(1, 1, 1), -PI)).is_err());
        assert!(PhaseField::new(Volume3::filled(d(1, 1, 1), PI)).is_ok());
        let w = PhaseField::wrapped(&Volume3::filled(d(1, 1, 1), -PI));
        assert_eq!(w.as_slice(), &[PI]);
    }

    #[test]
    fn series_checks_counts() {
        let g = GradientTable::parse("0 0 0 0\n1000 1 0 0\n").unwrap();
        let v = Volume3::zeros(d(2, 2, 2));
        assert!(DwiSeries::new(vec![v.clone()], g.clone()).is_err());
        assert!(DwiSeries::new(vec![v.clone(), Volume3::zeros(d(2, 2, 1))], g.clone()).is_err());
        assert_eq!(DwiSeries::new(vec![v.clone(), v], g).unwrap().len(), 2);
    }
}
