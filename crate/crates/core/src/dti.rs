//! Diffusion tensor estimation and fractional anisotropy.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gradients::GradientTable;
use crate::volume::{check_dims, Dims, MagnitudeSeries, Mask, Volume3};

/// Symmetric 3×3 tensor in mm²/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SymTensor {
    pub xx: f64,
    pub yy: f64,
    pub zz: f64,
    pub xy: f64,
    pub xz: f64,
    pub yz: f64,
}

impl SymTensor {
    pub fn diag(a: f64, b: f64, c: f64) -> SymTensor {
        SymTensor { xx: a, yy: b, zz: c, ..Default::default() }
    }

    /// `λ1·e1e1ᵀ + λ2·e2e2ᵀ + λ3·e3e3ᵀ` for an orthonormal frame.
    pub fn from_eigen(eigenvalues: [f64; 3], frame: [[f64; 3]; 3]) -> SymTensor {
        let mut m = [[0.0; 3]; 3];
        for (l, e) in eigenvalues.iter().zip(&frame) {
            for r in 0..3 {
                for c in 0..3 {
                    m[r][c] += l * e[r] * e[c];
                }
            }
        }
        SymTensor::from_matrix(m)
    }

    pub fn from_matrix(m: [[f64; 3]; 3]) -> SymTensor {
        SymTensor {
            xx: m[0][0],
            yy: m[1][1],
            zz: m[2][2],
            xy: 0.5 * (m[0][1] + m[1][0]),
            xz: 0.5 * (m[0][2] + m[2][0]),
            yz: 0.5 * (m[1][2] + m[2][1]),
        }
    }

    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        [
            [self.xx, self.xy, self.xz],
            [self.xy, self.yy, self.yz],
            [self.xz, self.yz, self.zz],
        ]
    }

    /// `gᵀ D g`.
    pub fn quadratic_form(&self, g: [f64; 3]) -> f64 {
        let [x, y, z] = g;
        self.xx * x * x
            + self.yy * y * y
            + self.zz * z * z
            + 2.0 * (self.xy * x * y + self.xz * x * z + self.yz * y * z)
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy + self.zz
    }

    /// Components in storage order Dxx, Dyy, Dzz, Dxy, Dxz, Dyz.
    pub fn components(&self) -> [f64; 6] {
        [self.xx, self.yy, self.zz, self.xy, self.xz, self.yz]
    }

    pub fn frobenius(&self) -> f64 {
        let c = self.components();
        (c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + 2.0 * (c[3] * c[3] + c[4] * c[4] + c[5] * c[5]))
            .sqrt()
    }
}

/// Eigenvalues of a symmetric 3×3 matrix, descending, by the closed-form
/// trigonometric solution of the characteristic cubic.
pub fn eig3_sym(t: &SymTensor) -> [f64; 3] {
    let off = t.xy * t.xy + t.xz * t.xz + t.yz * t.yz;
    if off == 0.0 {
        let mut d = [t.xx, t.yy, t.zz];
        d.sort_by(|a, b| b.total_cmp(a));
        return d;
    }
    let q = t.trace() / 3.0;
    let (a, b, c) = (t.xx - q, t.yy - q, t.zz - q);
    let p = ((a * a + b * b + c * c + 2.0 * off) / 6.0).sqrt();
    // det((A − qI) / p) / 2
    let det = a * (b * c - t.yz * t.yz) - t.xy * (t.xy * c - t.yz * t.xz)
        + t.xz * (t.xy * t.yz - b * t.xz);
    let r = (det / (2.0 * p * p * p)).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let l2 = 3.0 * q - l1 - l3;
    [l1, l2, l3]
}

/// Fractional anisotropy, clamped to [0, 1]; all-zero eigenvalues give 0.
pub fn fa(l1: f64, l2: f64, l3: f64) -> f64 {
    let den = l1 * l1 + l2 * l2 + l3 * l3;
    if den == 0.0 {
        return 0.0;
    }
    let mean = (l1 + l2 + l3) / 3.0;
    let num = (l1 - mean).powi(2) + (l2 - mean).powi(2) + (l3 - mean).powi(2);
    (1.5 * num / den).sqrt().clamp(0.0, 1.0)
}

/// Per-voxel tensors plus the unweighted signal S0.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    dims: Dims,
    tensors: Vec<SymTensor>,
    s0: Vec<f64>,
}

impl TensorField {
    pub fn new(dims: Dims, tensors: Vec<SymTensor>, s0: Vec<f64>) -> Result<TensorField> {
        if tensors.len() != dims.len() || s0.len() != dims.len() {
            return Err(Error::DimsMismatch(format!("tensor field data does not fill {dims}")));
        }
        let finite = tensors.iter().all(|t| t.components().iter().all(|c| c.is_finite()))
            && s0.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidData("non-finite tensor field".into()));
        }
        Ok(TensorField { dims, tensors, s0 })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn tensors(&self) -> &[SymTensor] {
        &self.tensors
    }

    pub fn s0(&self) -> &[f64] {
        &self.s0
    }

    /// Seven channels: S0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz.
    pub fn to_channels(&self) -> Vec<Volume3> {
        let mut out = vec![Volume3::new(self.dims, self.s0.clone()).expect("finite")];
        for k in 0..6 {
            let data = self.tensors.iter().map(|t| t.components()[k]).collect();
            out.push(Volume3::new(self.dims, data).expect("finite"));
        }
        out
    }

    pub fn from_channels(channels: &[Volume3]) -> Result<TensorField> {
        if channels.len() != 7 {
            return Err(Error::InvalidData(format!(
                "tensor field needs 7 channels, found {}",
                channels.len()
            )));
        }
        let dims = channels[0].dims();
        let c: Vec<&[f64]> = channels.iter().map(Volume3::as_slice).collect();
        let tensors = (0..dims.len())
            .map(|i| SymTensor { xx: c[1][i], yy: c[2][i], zz: c[3][i], xy: c[4][i], xz: c[5][i], yz: c[6][i] })
            .collect();
        TensorField::new(dims, tensors, c[0].to_vec())
    }
}

/// Ordinary least-squares operator for the log-linear tensor model.
#[derive(Debug, Clone)]
pub struct TensorDesign {
    /// 7×N pseudo-inverse, rows ln S0, Dxx, Dyy, Dzz, Dxy, Dxz, Dyz.
    pinv: DMatrix<f64>,
}

const RANK_RTOL: f64 = 1e-10;

impl TensorDesign {
    pub fn new(grads: &GradientTable) -> Result<TensorDesign> {
        let n = grads.len();
        if n < 7 {
            return Err(Error::Config(format!("tensor fit needs at least 7 volumes, got {n}")));
        }
        if grads.b0_count() == 0 {
            return Err(Error::Config("tensor fit needs at least one b=0 volume".into()));
        }
        let bmax = grads.entries().iter().map(|e| e.b).fold(0.0, f64::max);
        if bmax == 0.0 {
            return Err(Error::Config("tensor fit needs b>0 volumes".into()));
        }
        // Columns scaled by 1/bmax for conditioning; undone after the solve.
        let design = DMatrix::from_fn(n, 7, |r, c| {
            let e = grads.entries()[r];
            let s = e.b / bmax;
            let [x, y, z] = e.g;
            match c {
                0 => 1.0,
                1 => -s * x * x,
                2 => -s * y * y,
                3 => -s * z * z,
                4 => -2.0 * s * x * y,
                5 => -2.0 * s * x * z,
                _ => -2.0 * s * y * z,
            }
        });
        let svd = design.svd(true, true);
        let smax = svd.singular_values.max();
        if svd.singular_values.iter().any(|&s| s <= RANK_RTOL * smax) {
            return Err(Error::Config("rank-deficient gradient scheme for tensor fit".into()));
        }
        let mut pinv = svd.pseudo_inverse(0.0).map_err(|e| Error::Config(e.to_string()))?;
        for r in 1..7 {
            for c in 0..n {
                pinv[(r, c)] /= bmax;
            }
        }
        Ok(TensorDesign { pinv })
    }

    /// Returns (ln S0, tensor) for one voxel's log-signals.
    pub fn solve(&self, log_signal: &DVector<f64>) -> (f64, SymTensor) {
        let x = &self.pinv * log_signal;
        (x[0], SymTensor { xx: x[1], yy: x[2], zz: x[3], xy: x[4], xz: x[5], yz: x[6] })
    }
}

#[derive(Debug, Clone)]
pub struct TensorFit {
    pub field: TensorField,
    /// Voxels where more than half of the samples hit the signal floor.
    pub clamped: Mask,
    pub floor: f64,
}

/// Log-linear OLS fit at every masked voxel; voxels outside get a zero
/// tensor and S0 = 0. Signals are floored at `1e−6·max(b=0 signal)`.
pub fn fit_tensor(series: &MagnitudeSeries, mask: &Mask) -> Result<TensorFit> {
    let dims = series.dims();
    check_dims(dims, mask.dims(), "tensor fit mask")?;
    let grads = series.gradients();
    let design = TensorDesign::new(grads)?;
    let vols = series.volumes();
    let b0_max = grads
        .entries()
        .iter()
        .zip(vols)
        .filter(|(e, _)| e.b == 0.0)
        .map(|(_, v)| v.max())
        .fold(0.0, f64::max);
    let floor = if b0_max > 0.0 { 1e-6 * b0_max } else { f64::MIN_POSITIVE };
    let n = vols.len();

    let per_voxel: Vec<(SymTensor, f64, bool)> = (0..dims.len())
        .into_par_iter()
        .map(|i| {
            if !mask.as_slice()[i] {
                return (SymTensor::default(), 0.0, false);
            }
            let mut clamped = 0;
            let y = DVector::from_iterator(
                n,
                vols.iter().map(|v| {
                    let s = v.as_slice()[i];
                    if s < floor {
                        clamped += 1;
                        floor.ln()
                    } else {
                        s.ln()
                    }
                }),
            );
            let (ln_s0, t) = design.solve(&y);
            (t, ln_s0.exp().min(f64::MAX), 2 * clamped > n)
        })
        .collect();

    let mut tensors = Vec::with_capacity(dims.len());
    let mut s0 = Vec::with_capacity(dims.len());
    let mut clamped = Vec::with_capacity(dims.len());
    for (t, s, c) in per_voxel {
        tensors.push(t);
        s0.push(s);
        clamped.push(c);
    }
    Ok(TensorFit {
        field: TensorField::new(dims, tensors, s0)?,
        clamped: Mask::new(dims, clamped)?,
        floor,
    })
}

/// FA inside `mask`, 0 elsewhere.
pub fn fa_map(tensors: &TensorField, mask: &Mask) -> Result<Volume3> {
    check_dims(tensors.dims(), mask.dims(), "FA mask")?;
    let data = tensors
        .tensors()
        .iter()
        .zip(mask.as_slice())
        .map(|(t, &inside)| {
            if inside {
                let [a, b, c] = eig3_sym(t);
                fa(a, b, c)
            } else {
                0.0
            }
        })
        .collect();
    Volume3::new(tensors.dims(), data)
}

/// Monoexponential signal `S0·exp(−b·gᵀDg)` for every gradient entry.
pub fn simulate_signal(field: &TensorField, grads: &GradientTable) -> Result<MagnitudeSeries> {
    let vols = grads
        .entries()
        .iter()
        .map(|e| {
            let data = field
                .tensors()
                .iter()
                .zip(field.s0())
                .map(|(t, &s0)| if e.b == 0.0 { s0 } else { s0 * (-e.b * t.quadratic_form(e.g)).exp() })
                .collect();
            Volume3::new(field.dims(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    MagnitudeSeries::new(vols, grads.clone())
}
