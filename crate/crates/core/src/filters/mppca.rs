//! Marchenko–Pastur PCA denoising over sliding 3D blocks.
//!
//! Each block yields an M×N Casorati matrix X (M block voxels, N volumes).
//! The eigenvalues of XᵀX/M are split into signal and a noise tail whose
//! spread is bounded by the Marchenko–Pastur law; the block is projected
//! onto the retained eigenvectors and overlapping reconstructions are
//! averaged per voxel.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use super::SigmaMap;
use crate::error::{Error, Result};
use crate::volume::{check_dims, Dims, MagnitudeSeries, Volume3};

/// Eigenvalues below this fraction of the largest are treated as exact zeros.
const ZERO_EIGEN_RTOL: f64 = 1e-12;

/// Blocks are solved in parallel in batches of this size and accumulated
/// sequentially, so the output does not depend on the thread count.
const BATCH: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankRule {
    MarchenkoPastur,
    /// Keep exactly this many components (clamped to N).
    Fixed(usize),
}

/// Retained rank and noise variance from eigenvalues sorted descending.
///
/// Returns the smallest `p` with `λ[p] − λ[N−1] < 4σ²√((N−p)/M)`, where
/// `σ² = Σ_{i≥p} λ[i] / (N−p)`. A tail that is identically zero is accepted
/// as noise-free. If no `p` qualifies every component is kept and `σ² = 0`.
pub fn mp_rank(eigs_desc: &[f64], m: usize) -> (usize, f64) {
    let n = eigs_desc.len();
    let last = n.saturating_sub(1);
    for p in 0..n {
        let tail = &eigs_desc[p..];
        let sigma2 = tail.iter().sum::<f64>() / tail.len() as f64;
        if sigma2 == 0.0 {
            return (p, 0.0);
        }
        let spread = eigs_desc[p] - eigs_desc[last];
        if spread < 4.0 * sigma2 * ((n - p) as f64 / m as f64).sqrt() {
            return (p, sigma2);
        }
    }
    (n, 0.0)
}

#[derive(Debug, Clone)]
pub struct BlockDenoise {
    pub reconstruction: DMatrix<f64>,
    pub rank: usize,
    pub sigma: f64,
}

/// Denoises one Casorati matrix (rows = voxels, columns = volumes).
pub fn denoise_casorati(x: &DMatrix<f64>, rule: RankRule) -> BlockDenoise {
    let (m, n) = x.shape();
    let cov = x.tr_mul(x) / m as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let eigs: Vec<f64> = order
        .iter()
        .map(|&k| {
            let v = eig.eigenvalues[k];
            if v <= ZERO_EIGEN_RTOL * top {
                0.0
            } else {
                v
            }
        })
        .collect();

    let (rank, sigma2) = match rule {
        RankRule::MarchenkoPastur => mp_rank(&eigs, m),
        RankRule::Fixed(p) => {
            let p = p.min(n);
            let tail = &eigs[p..];
            let s2 = if tail.is_empty() {
                0.0
            } else {
                tail.iter().sum::<f64>() / tail.len() as f64
            };
            (p, s2)
        }
    };

    let reconstruction = if rank == n {
        x.clone()
    } else if rank == 0 {
        DMatrix::zeros(m, n)
    } else {
        let mut basis = DMatrix::zeros(n, rank);
        for (c, &k) in order[..rank].iter().enumerate() {
            basis.set_column(c, &eig.eigenvectors.column(k));
        }
        let coords = x * &basis;
        coords * basis.transpose()
    };
    BlockDenoise {
        reconstruction,
        rank,
        sigma: sigma2.sqrt(),
    }
}

/// Window start offsets along one axis: every `stride` from 0, plus a final
/// window flush with the far edge.
pub fn block_starts(n: usize, block: usize, stride: usize) -> Vec<usize> {
    assert!(block <= n && stride > 0);
    let mut starts: Vec<usize> = (0..=n - block).step_by(stride).collect();
    if *starts.last().unwrap() != n - block {
        starts.push(n - block);
    }
    starts
}

pub fn mppca_denoise(
    series: &MagnitudeSeries,
    block: [usize; 3],
    stride: usize,
) -> Result<(MagnitudeSeries, SigmaMap)> {
    let (vols, sigma) =
        mppca_denoise_volumes(series.volumes(), block, stride, RankRule::MarchenkoPastur)?;
    Ok((MagnitudeSeries::new(vols, series.gradients().clone())?, sigma))
}

/// Jointly denoises same-sized volumes.
pub fn mppca_denoise_volumes(
    volumes: &[Volume3],
    block: [usize; 3],
    stride: usize,
    rule: RankRule,
) -> Result<(Vec<Volume3>, SigmaMap)> {
    let n = volumes.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!("MPPCA needs at least 2 volumes, got {n}")));
    }
    if stride == 0 {
        return Err(Error::InvalidArgument("MPPCA stride must be positive".into()));
    }
    let dims = volumes[0].dims();
    for v in volumes {
        check_dims(dims, v.dims(), "MPPCA series")?;
    }
    let [bx, by, bz] = block;
    if bx == 0 || by == 0 || bz == 0 || bx > dims.nx || by > dims.ny || bz > dims.nz {
        return Err(Error::InvalidArgument(format!(
            "block {bx}x{by}x{bz} does not fit inside {dims}"
        )));
    }

    let xs = block_starts(dims.nx, bx, stride);
    let ys = block_starts(dims.ny, by, stride);
    let zs = block_starts(dims.nz, bz, stride);
    let mut positions = Vec::with_capacity(xs.len() * ys.len() * zs.len());
    for &z in &zs {
        for &y in &ys {
            for &x in &xs {
                positions.push([x, y, z]);
            }
        }
    }

    let m = bx * by * bz;
    let offsets = block_offsets(dims, block);
    let mut sum = vec![0.0; dims.len() * n];
    let mut count = vec![0u32; dims.len()];
    let mut sigma_sum = vec![0.0; dims.len()];

    for batch in positions.chunks(BATCH) {
        let solved: Vec<BlockDenoise> = batch
            .par_iter()
            .map(|&[x0, y0, z0]| {
                let origin = dims.index(x0, y0, z0);
                let casorati =
                    DMatrix::from_fn(m, n, |r, c| volumes[c].as_slice()[origin + offsets[r]]);
                denoise_casorati(&casorati, rule)
            })
            .collect();
        for (&[x0, y0, z0], res) in batch.iter().zip(&solved) {
            let origin = dims.index(x0, y0, z0);
            for (r, &off) in offsets.iter().enumerate() {
                let voxel = origin + off;
                count[voxel] += 1;
                sigma_sum[voxel] += res.sigma;
                for c in 0..n {
                    sum[c * dims.len() + voxel] += res.reconstruction[(r, c)];
                }
            }
        }
    }

    let out = (0..n)
        .map(|c| {
            let data = (0..dims.len())
                .map(|v| sum[c * dims.len() + v] / count[v] as f64)
                .collect();
            Ok(Volume3::new(dims, data)?.with_voxel_size(volumes[c].voxel_size()))
        })
        .collect::<Result<Vec<_>>>()?;
    let sigma = Volume3::new(
        dims,
        sigma_sum.iter().zip(&count).map(|(s, &k)| s / k as f64).collect(),
    )?;
    Ok((out, SigmaMap::new(sigma)?))
}

/// Linear offsets of every voxel in a block, relative to its origin,
/// x fastest.
fn block_offsets(dims: Dims, [bx, by, bz]: [usize; 3]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(bx * by * bz);
    for z in 0..bz {
        for y in 0..by {
            for x in 0..bx {
                offsets.push(dims.index(x, y, z));
            }
        }
    }
    offsets
}
