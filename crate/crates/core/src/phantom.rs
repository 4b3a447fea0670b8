//! Synthetic crossing-bundle phantom, smooth background phase and complex
//! Gaussian noise with a known spatial pattern.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dti::{SymTensor, TensorField};
use crate::error::{Error, Result};
use crate::filters::SigmaMap;
use crate::volume::{ComplexSeries, ComplexVolume3, Dims, MagnitudeSeries, Mask, PhaseField, Volume3};

/// Name of the generator behind [`add_complex_noise`], recorded in manifests.
pub const RNG_NAME: &str = "ChaCha20";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    /// Half-open voxel index ranges `[min, max)`.
    Box { min: [usize; 3], max: [usize; 3] },
    /// Voxels whose centre lies within `radius` of `center` (voxel units).
    /// The centre must lie in the grid; the ball is clipped at the edges.
    Sphere { center: [f64; 3], radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    #[serde(flatten)]
    pub shape: Shape,
    /// Tensor eigenvalues in mm²/s, principal first.
    pub eigenvalues: [f64; 3],
    /// Principal direction; need not be normalized.
    #[serde(default = "x_axis")]
    pub direction: [f64; 3],
    pub s0: f64,
    #[serde(default)]
    pub wm: bool,
}

fn x_axis() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

impl Region {
    fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        match &self.shape {
            Shape::Box { min, max } => {
                (min[0]..max[0]).contains(&x) && (min[1]..max[1]).contains(&y) && (min[2]..max[2]).contains(&z)
            }
            Shape::Sphere { center, radius } => {
                let d2 = (x as f64 - center[0]).powi(2)
                    + (y as f64 - center[1]).powi(2)
                    + (z as f64 - center[2]).powi(2);
                d2 <= radius * radius
            }
        }
    }

    fn validate(&self, dims: Dims) -> Result<()> {
        let n = dims.as_array();
        match &self.shape {
            Shape::Box { min, max } => {
                if (0..3).any(|a| min[a] >= max[a] || max[a] > n[a]) {
                    return Err(Error::InvalidArgument(format!(
                        "box {min:?}..{max:?} is empty or outside {dims}"
                    )));
                }
            }
            Shape::Sphere { center, radius } => {
                let inside = (0..3).all(|a| center[a] >= 0.0 && center[a] <= (n[a] - 1) as f64);
                if !inside || !(*radius > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "sphere at {center:?} radius {radius} is outside {dims}"
                    )));
                }
            }
        }
        if self.eigenvalues.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::InvalidArgument("negative tensor eigenvalue".into()));
        }
        if !(self.s0 >= 0.0) || !self.s0.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid S0 {}", self.s0)));
        }
        let norm = self.direction.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidArgument("zero principal direction".into()));
        }
        Ok(())
    }

    fn tensor(&self) -> SymTensor {
        SymTensor::from_eigen(self.eigenvalues, frame(self.direction))
    }
}

/// Orthonormal frame whose first axis is `v`.
fn frame(v: [f64; 3]) -> [[f64; 3]; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    let e1 = [v[0] / n, v[1] / n, v[2] / n];
    // Helper axis least aligned with e1.
    let k = (0..3).min_by(|&a, &b| e1[a].abs().total_cmp(&e1[b].abs())).unwrap();
    let mut h = [0.0; 3];
    h[k] = 1.0;
    let cross = |a: [f64; 3], b: [f64; 3]| {
        [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
    };
    let u = cross(e1, h);
    let un = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
    let e2 = [u[0] / un, u[1] / un, u[2] / un];
    [e1, e2, cross(e1, e2)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    /// `None` selects the default crossing-bundle geometry scaled to `dims`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regions: Option<Vec<Region>>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec { dims: [64, 64, 8], regions: None }
    }
}

pub const WM_EIGENVALUES: [f64; 3] = [1.7e-3, 0.3e-3, 0.3e-3];
pub const ISO_DIFFUSIVITY: f64 = 0.8e-3;
pub const DEFAULT_S0: f64 = 100.0;

/// Two crossing rectangular WM bundles along x and y plus an isotropic
/// sphere. The y bundle is listed last and owns the crossing.
pub fn default_regions(dims: Dims) -> Vec<Region> {
    let [nx, ny, nz] = dims.as_array();
    let frac = |n: usize, f: f64| ((n as f64 * f).round() as usize).min(n);
    let span = |n: usize, lo: f64, hi: f64| {
        let a = frac(n, lo).min(n - 1);
        (a, frac(n, hi).max(a + 1))
    };
    let (x0, x1) = span(nx, 0.125, 0.875);
    let (y0, y1) = span(ny, 0.30, 0.45);
    let (bx0, bx1) = span(nx, 0.55, 0.70);
    let (by0, by1) = span(ny, 0.125, 0.875);
    vec![
        Region {
            shape: Shape::Box { min: [x0, y0, 0], max: [x1, y1, nz] },
            eigenvalues: WM_EIGENVALUES,
            direction: [1.0, 0.0, 0.0],
            s0: DEFAULT_S0,
            wm: true,
        },
        Region {
            shape: Shape::Box { min: [bx0, by0, 0], max: [bx1, by1, nz] },
            eigenvalues: WM_EIGENVALUES,
            direction: [0.0, 1.0, 0.0],
            s0: DEFAULT_S0,
            wm: true,
        },
        Region {
            shape: Shape::Sphere {
                center: [0.28 * (nx - 1) as f64, 0.72 * (ny - 1) as f64, (nz - 1) as f64 / 2.0],
                radius: 0.15 * nx.min(ny) as f64,
            },
            eigenvalues: [ISO_DIFFUSIVITY; 3],
            direction: [1.0, 0.0, 0.0],
            s0: DEFAULT_S0,
            wm: false,
        },
    ]
}

#[derive(Debug, Clone)]
pub struct Phantom {
    pub tensors: TensorField,
    pub wm: Mask,
    /// Voxels with S0 = 0.
    pub background: Mask,
}

/// Rasterizes the regions; later regions override earlier ones.
pub fn build_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    let dims = Dims::new(spec.dims[0], spec.dims[1], spec.dims[2])?;
    let regions = match &spec.regions {
        Some(r) => r.clone(),
        None => default_regions(dims),
    };
    for r in &regions {
        r.validate(dims)?;
    }
    let tensors: Vec<SymTensor> = regions.iter().map(Region::tensor).collect();
    let mut field = vec![SymTensor::default(); dims.len()];
    let mut s0 = vec![0.0; dims.len()];
    let mut wm = vec![false; dims.len()];
    for i in 0..dims.len() {
        let (x, y, z) = dims.coords(i);
        if let Some(k) = regions.iter().rposition(|r| r.contains(x, y, z)) {
            field[i] = tensors[k];
            s0[i] = regions[k].s0;
            wm[i] = regions[k].wm;
        }
    }
    let background = Mask::new(dims, s0.iter().map(|&s| s == 0.0).collect())?;
    Ok(Phantom {
        tensors: TensorField::new(dims, field, s0)?,
        wm: Mask::new(dims, wm)?,
        background,
    })
}

pub use crate::dti::simulate_signal as simulate_dwi;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundPhaseSpec {
    /// Radians.
    pub amplitude: f64,
    /// Cycles per field of view.
    pub fx: f64,
    pub fy: f64,
    /// Radians per field of view.
    pub px: f64,
    pub py: f64,
}

impl Default for BackgroundPhaseSpec {
    fn default() -> Self {
        BackgroundPhaseSpec { amplitude: FRAC_PI_2, fx: 1.0, fy: 1.0, px: FRAC_PI_2, py: -FRAC_PI_4 }
    }
}

/// `wrap(a·sin(2π·fx·x/nx)·cos(2π·fy·y/ny) + px·x/nx + py·y/ny)`, constant in z.
pub fn synth_background_phase(dims: Dims, spec: &BackgroundPhaseSpec) -> Result<PhaseField> {
    let vals = [spec.amplitude, spec.fx, spec.fy, spec.px, spec.py];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite background phase parameter".into()));
    }
    let (nx, ny) = (dims.nx as f64, dims.ny as f64);
    let raw = Volume3::from_fn(dims, |x, y, _| {
        let (u, v) = (x as f64 / nx, y as f64 / ny);
        spec.amplitude * (2.0 * PI * spec.fx * u).sin() * (2.0 * PI * spec.fy * v).cos()
            + spec.px * u
            + spec.py * v
    })?;
    Ok(PhaseField::wrapped(&raw))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoisePattern {
    Constant,
    /// Scale `1 + slope·t` with `t` running 0→1 along `axis`.
    LinearRamp { axis: usize, slope: f64 },
    /// Scale `1 + amplitude·exp(−r²/(2·width²))`, `r` in voxels from `center`.
    GaussianBump { center: [f64; 3], width: f64, amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma0: f64,
    pub pattern: NoisePattern,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseSpec {
    /// b=0 SNR of 20 at the low end of a 1×–2× ramp along x.
    fn default() -> Self {
        NoiseSpec {
            sigma0: DEFAULT_S0 / 20.0,
            pattern: NoisePattern::LinearRamp { axis: 0, slope: 1.0 },
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 >= 0.0) || !self.sigma0.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid sigma0 {}", self.sigma0)));
        }
        match self.pattern {
            NoisePattern::Constant => Ok(()),
            NoisePattern::LinearRamp { axis, slope } => {
                if axis > 2 {
                    Err(Error::InvalidArgument(format!("ramp axis {axis} not in 0..=2")))
                } else if !(slope >= -1.0) || !slope.is_finite() {
                    Err(Error::InvalidArgument(format!("ramp slope {slope} makes sigma negative")))
                } else {
                    Ok(())
                }
            }
            NoisePattern::GaussianBump { center, width, amplitude } => {
                if !(width > 0.0) || !(amplitude >= -1.0) || center.iter().chain([&width, &amplitude]).any(|v| !v.is_finite()) {
                    Err(Error::InvalidArgument("invalid gaussian bump".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Analytic σ(x).
    pub fn sigma_map(&self, dims: Dims) -> Result<SigmaMap> {
        self.validate()?;
        let n = dims.as_array();
        let vol = Volume3::from_fn(dims, |x, y, z| {
            let p = [x, y, z];
            let scale = match self.pattern {
                NoisePattern::Constant => 1.0,
                NoisePattern::LinearRamp { axis, slope } => {
                    let t = if n[axis] > 1 { p[axis] as f64 / (n[axis] - 1) as f64 } else { 0.0 };
                    1.0 + slope * t
                }
                NoisePattern::GaussianBump { center, width, amplitude } => {
                    let r2: f64 = (0..3).map(|a| (p[a] as f64 - center[a]).powi(2)).sum();
                    1.0 + amplitude * (-r2 / (2.0 * width * width)).exp()
                }
            };
            (self.sigma0 * scale).max(0.0)
        })?;
        SigmaMap::new(vol)
    }
}

/// `S·e^{jφ} + ε_r + j·ε_i` with ε ~ N(0, σ(x)²) independent per part.
/// Volume `v` draws from stream `v` of the seeded generator, voxels in
/// storage order, real before imaginary.
pub fn add_complex_noise(
    clean: &MagnitudeSeries,
    phase: &PhaseField,
    noise: &NoiseSpec,
) -> Result<(ComplexSeries, SigmaMap)> {
    let dims = clean.dims();
    crate::volume::check_dims(dims, phase.dims(), "background phase")?;
    if clean.volumes().iter().any(|v| v.as_slice().iter().any(|&s| s < 0.0)) {
        return Err(Error::InvalidData("negative clean magnitude".into()));
    }
    let sigma = noise.sigma_map(dims)?;
    let sig = sigma.volume().as_slice();
    let (cos, sin): (Vec<f64>, Vec<f64>) = phase.as_slice().iter().map(|p| (p.cos(), p.sin())).unzip();
    let vols = clean
        .volumes()
        .par_iter()
        .enumerate()
        .map(|(v, vol)| {
            let mut rng = ChaCha20Rng::seed_from_u64(noise.seed);
            rng.set_stream(v as u64);
            let mut re = Vec::with_capacity(dims.len());
            let mut im = Vec::with_capacity(dims.len());
            for (i, &s) in vol.as_slice().iter().enumerate() {
                let er: f64 = StandardNormal.sample(&mut rng);
                let ei: f64 = StandardNormal.sample(&mut rng);
                re.push(s * cos[i] + sig[i] * er);
                im.push(s * sin[i] + sig[i] * ei);
            }
            ComplexVolume3::new(Volume3::new(dims, re)?, Volume3::new(dims, im)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ComplexSeries::new(vols, clean.gradients().clone())?, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::angle::wrap;
    use crate::dti::{eig3_sym, fa, fa_map};
    use crate::gradients::GradientTable;
    use crate::phasecorr::measured_phase;

    fn small_spec() -> PhantomSpec {
        PhantomSpec { dims: [32, 32, 4], regions: None }
    }

    #[test]
    fn empty_region_list_is_all_background() {
        let p = build_phantom(&PhantomSpec { dims: [4, 3, 2], regions: Some(vec![]) }).unwrap();
        assert!(p.tensors.s0().iter().all(|&s| s == 0.0));
        assert_eq!(p.background.count(), 24);
        assert_eq!(p.wm.count(), 0);
    }

    #[test]
    fn isotropic_sphere_has_no_off_diagonals() {
        let region = Region {
            shape: Shape::Sphere { center: [2.0, 2.0, 2.0], radius: 1.5 },
            eigenvalues: [1e-3; 3],
            direction: [0.3, -0.4, 0.866],
            s0: 50.0,
            wm: false,
        };
        let p = build_phantom(&PhantomSpec { dims: [5, 5, 5], regions: Some(vec![region]) }).unwrap();
        for (t, &s0) in p.tensors.tensors().iter().zip(p.tensors.s0()) {
            if s0 > 0.0 {
                assert!(t.xy.abs() < 1e-18 && t.xz.abs() < 1e-18 && t.yz.abs() < 1e-18);
                assert!((t.xx - 1e-3).abs() < 1e-18);
            }
        }
        assert!(p.background.count() < 125);
    }

    #[test]
    fn default_geometry_audit() {
        let p = build_phantom(&PhantomSpec::default()).unwrap();
        assert!(p.wm.count() > 0);
        assert_eq!(p.wm.and(&p.background).unwrap().count(), 0);
        let dims = p.tensors.dims();
        let fa_gt = fa_map(&p.tensors, &p.background.not()).unwrap();
        let wm_fa = fa(WM_EIGENVALUES[0], WM_EIGENVALUES[1], WM_EIGENVALUES[2]);
        let mut iso = 0;
        for i in 0..dims.len() {
            if p.wm.as_slice()[i] {
                assert!((fa_gt.as_slice()[i] - wm_fa).abs() < 1e-12);
            } else if !p.background.as_slice()[i] {
                iso += 1;
                assert!(fa_gt.as_slice()[i].abs() < 1e-12);
            } else {
                assert_eq!(fa_gt.as_slice()[i], 0.0);
            }
        }
        assert!(iso > 0);
        // Both bundle orientations are present.
        let dirs: Vec<[f64; 3]> = p.tensors.tensors().iter().zip(p.wm.as_slice())
            .filter(|(_, &w)| w)
            .map(|(t, _)| [t.xx, t.yy, t.zz])
            .collect();
        assert!(dirs.iter().any(|d| d[0] > d[1]) && dirs.iter().any(|d| d[1] > d[0]));
        let l = eig3_sym(&p.tensors.tensors()[dims.index(dims.nx / 2, (dims.ny as f64 * 0.35) as usize, 0)]);
        assert!((l[0] - 1.7e-3).abs() < 1e-15);
    }

    #[test]
    fn later_regions_override() {
        let a = Region {
            shape: Shape::Box { min: [0, 0, 0], max: [4, 1, 1] },
            eigenvalues: [1e-3; 3],
            direction: [1.0, 0.0, 0.0],
            s0: 10.0,
            wm: true,
        };
        let b = Region { shape: Shape::Box { min: [2, 0, 0], max: [3, 1, 1] }, s0: 20.0, wm: false, ..a.clone() };
        let p = build_phantom(&PhantomSpec { dims: [4, 1, 1], regions: Some(vec![a, b]) }).unwrap();
        assert_eq!(p.tensors.s0(), &[10.0, 10.0, 20.0, 10.0]);
        assert_eq!(p.wm.as_slice(), &[true, true, false, true]);
    }

    #[test]
    fn regions_outside_dims_are_rejected() {
        let r = Region {
            shape: Shape::Box { min: [0, 0, 0], max: [5, 1, 1] },
            eigenvalues: [1e-3; 3],
            direction: [1.0, 0.0, 0.0],
            s0: 1.0,
            wm: false,
        };
        assert!(build_phantom(&PhantomSpec { dims: [4, 1, 1], regions: Some(vec![r.clone()]) }).is_err());
        let s = Region { shape: Shape::Sphere { center: [9.0, 0.0, 0.0], radius: 1.0 }, ..r.clone() };
        assert!(build_phantom(&PhantomSpec { dims: [4, 1, 1], regions: Some(vec![s]) }).is_err());
        let neg = Region { shape: Shape::Box { min: [0, 0, 0], max: [1, 1, 1] }, eigenvalues: [-1e-3, 0.0, 0.0], ..r };
        assert!(build_phantom(&PhantomSpec { dims: [4, 1, 1], regions: Some(vec![neg]) }).is_err());
    }

    #[test]
    fn frame_is_orthonormal() {
        for v in [[1.0, 0.0, 0.0], [0.0, 0.0, 2.0], [1.0, 2.0, 3.0], [-0.2, 0.1, 0.0]] {
            let f = frame(v);
            for a in 0..3 {
                for b in 0..3 {
                    let dot: f64 = (0..3).map(|k| f[a][k] * f[b][k]).sum();
                    assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn signal_along_fiber() {
        let region = Region {
            shape: Shape::Box { min: [0, 0, 0], max: [1, 1, 1] },
            eigenvalues: WM_EIGENVALUES,
            direction: [1.0, 0.0, 0.0],
            s0: 100.0,
            wm: true,
        };
        let p = build_phantom(&PhantomSpec { dims: [1, 1, 1], regions: Some(vec![region]) }).unwrap();
        let grads = GradientTable::parse("0 0 0 0\n1000 1 0 0\n").unwrap();
        let s = simulate_dwi(&p.tensors, &grads).unwrap();
        assert_eq!(s.volumes()[0].as_slice()[0], 100.0);
        assert!((s.volumes()[1].as_slice()[0] / 100.0 - (-1.7f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn background_phase_examples() {
        let dims = Dims::new(16, 8, 2).unwrap();
        let zero = BackgroundPhaseSpec { amplitude: 0.0, fx: 1.0, fy: 1.0, px: 0.0, py: 0.0 };
        assert!(synth_background_phase(dims, &zero).unwrap().as_slice().iter().all(|&p| p == 0.0));

        let ramp = BackgroundPhaseSpec { px: PI, ..zero };
        let f = synth_background_phase(dims, &ramp).unwrap();
        for x in 0..16 {
            assert!((f.angles().get(x, 3, 1) - PI * x as f64 / 16.0).abs() < 1e-15);
        }

        let sine = BackgroundPhaseSpec { amplitude: FRAC_PI_2, fx: 1.0, fy: 1.0, px: 0.0, py: 0.0 };
        let f = synth_background_phase(Dims::new(64, 64, 2).unwrap(), &sine).unwrap();
        assert!(f.as_slice().iter().all(|&p| p.abs() <= FRAC_PI_2 + 1e-12 && p > -PI && p <= PI));
    }

    #[test]
    fn default_background_phase_is_smooth() {
        let dims = Dims::new(64, 64, 8).unwrap();
        let f = synth_background_phase(dims, &BackgroundPhaseSpec::default()).unwrap();
        let a = f.angles();
        let mut worst: f64 = 0.0;
        for z in 0..dims.nz {
            for y in 0..dims.ny {
                for x in 0..dims.nx {
                    if x + 1 < dims.nx {
                        worst = worst.max(wrap(a.get(x + 1, y, z) - a.get(x, y, z)).abs());
                    }
                    if y + 1 < dims.ny {
                        worst = worst.max(wrap(a.get(x, y + 1, z) - a.get(x, y, z)).abs());
                    }
                }
            }
        }
        assert!(worst < FRAC_PI_4, "{worst}");
    }

    fn clean_series(spec: &PhantomSpec, n_dirs: usize) -> MagnitudeSeries {
        let p = build_phantom(spec).unwrap();
        simulate_dwi(&p.tensors, &GradientTable::hemisphere_scheme(1, n_dirs, 1000.0).unwrap()).unwrap()
    }

    #[test]
    fn zero_noise_is_exact_phasor() {
        let clean = clean_series(&small_spec(), 6);
        let phase = synth_background_phase(clean.dims(), &BackgroundPhaseSpec::default()).unwrap();
        let noise = NoiseSpec { sigma0: 0.0, ..NoiseSpec::default() };
        let (noisy, sigma) = add_complex_noise(&clean, &phase, &noise).unwrap();
        assert!(sigma.volume().as_slice().iter().all(|&s| s == 0.0));
        for (c, n) in clean.volumes().iter().zip(noisy.volumes()) {
            for i in 0..c.as_slice().len() {
                let (s, p) = (c.as_slice()[i], phase.as_slice()[i]);
                // Equal up to libm rounding of sin/cos.
                assert!((n.re().as_slice()[i] - s * p.cos()).abs() <= 1e-14 * s);
                assert!((n.im().as_slice()[i] - s * p.sin()).abs() <= 1e-14 * s);
            }
            let mp = measured_phase(n);
            for i in 0..c.as_slice().len() {
                if c.as_slice()[i] > 0.0 {
                    assert!(wrap(mp.as_slice()[i] - phase.as_slice()[i]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn sigma_map_matches_analytic_pattern() {
        let dims = Dims::new(5, 3, 2).unwrap();
        let ramp = NoiseSpec { sigma0: 2.0, pattern: NoisePattern::LinearRamp { axis: 0, slope: 1.0 }, seed: 0 };
        let s = ramp.sigma_map(dims).unwrap();
        for x in 0..5 {
            assert_eq!(s.volume().get(x, 1, 1), 2.0 * (1.0 + x as f64 / 4.0));
        }
        let bump = NoiseSpec {
            sigma0: 1.0,
            pattern: NoisePattern::GaussianBump { center: [2.0, 1.0, 0.0], width: 1.0, amplitude: 3.0 },
            seed: 0,
        };
        let s = bump.sigma_map(dims).unwrap();
        assert_eq!(s.volume().get(2, 1, 0), 4.0);
        assert_eq!(s.volume().get(3, 1, 0), 1.0 + 3.0 * (-0.5f64).exp());
        let bad = NoiseSpec { pattern: NoisePattern::LinearRamp { axis: 0, slope: -2.0 }, ..ramp };
        assert!(bad.sigma_map(dims).is_err());
    }

    fn pure_noise(sigma: f64, seed: u64) -> (ComplexSeries, SigmaMap) {
        let dims = Dims::new(64, 64, 25).unwrap();
        let grads = GradientTable::hemisphere_scheme(1, 0, 1000.0).unwrap();
        let clean = MagnitudeSeries::new(vec![Volume3::zeros(dims)], grads).unwrap();
        let noise = NoiseSpec { sigma0: sigma, pattern: NoisePattern::Constant, seed };
        add_complex_noise(&clean, &PhaseField::zeros(dims), &noise).unwrap()
    }

    #[test]
    fn rayleigh_mean_and_gaussian_std_in_background() {
        let (noisy, _) = pure_noise(1.0, 42);
        let v = &noisy.volumes()[0];
        let n = v.re().as_slice().len() as f64;
        assert!(n >= 1e5);
        let mean_mag = v.magnitude().mean();
        assert!((1.23..=1.28).contains(&mean_mag), "{mean_mag}");
        for part in [v.re(), v.im()] {
            let m = part.mean();
            let sd = (part.as_slice().iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            assert!((sd - 1.0).abs() < 0.02, "{sd}");
        }
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let clean = clean_series(&small_spec(), 6);
        let phase = synth_background_phase(clean.dims(), &BackgroundPhaseSpec::default()).unwrap();
        let noise = NoiseSpec { seed: 7, ..NoiseSpec::default() };
        let a = add_complex_noise(&clean, &phase, &noise).unwrap().0;
        let b = add_complex_noise(&clean, &phase, &noise).unwrap().0;
        assert_eq!(a.volumes(), b.volumes());
        let c = add_complex_noise(&clean, &phase, &NoiseSpec { seed: 8, ..noise }).unwrap().0;
        assert_ne!(a.volumes(), c.volumes());
        // Volumes use distinct streams.
        assert_ne!(a.volumes()[0].im().as_slice()[0], a.volumes()[1].im().as_slice()[0]);
    }

    #[test]
    fn fa_recovery_at_snr_20() {
        use crate::dti::fit_tensor;
        let spec = PhantomSpec::default();
        let p = build_phantom(&spec).unwrap();
        let grads = GradientTable::hemisphere_scheme(3, 30, 1000.0).unwrap();
        let clean = simulate_dwi(&p.tensors, &grads).unwrap();
        let noise = NoiseSpec { sigma0: DEFAULT_S0 / 20.0, pattern: NoisePattern::Constant, seed: 3 };
        let (noisy, _) = add_complex_noise(&clean, &PhaseField::zeros(clean.dims()), &noise).unwrap();
        let tissue = p.background.not();
        let fit = fit_tensor(&noisy.magnitude(), &tissue).unwrap();
        let est = fa_map(&fit.field, &tissue).unwrap();
        let gt = fa_map(&p.tensors, &tissue).unwrap();
        let (mut se, mut n) = (0.0, 0);
        for i in 0..est.as_slice().len() {
            if p.wm.as_slice()[i] {
                se += (est.as_slice()[i] - gt.as_slice()[i]).powi(2);
                n += 1;
            }
        }
        let rms = (se / n as f64).sqrt();
        assert!(rms < 0.05, "FA RMS {rms}");
    }
}
