//! Error metrics, FA error maps, slice renders and CSV emission.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{check_dims, Mask, Volume3};

/// Window for signed FA error maps.
pub const ERROR_WINDOW: (f64, f64) = (-0.4, 0.4);
/// Window for DW image renders.
pub const DWI_WINDOW: (f64, f64) = (-20.0, 200.0);
/// Window for FA renders.
pub const FA_WINDOW: (f64, f64) = (0.0, 1.0);

/// Labelled `(index, value)` pairs; indices strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    label: String,
    values: Vec<(usize, f64)>,
}

impl MetricSeries {
    pub fn new(label: impl Into<String>, values: Vec<(usize, f64)>) -> Result<MetricSeries> {
        if values.iter().any(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite metric value".into()));
        }
        if values.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::InvalidData("metric indices must be strictly increasing".into()));
        }
        Ok(MetricSeries { label: label.into(), values })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn values(&self) -> &[(usize, f64)] {
        &self.values
    }

    /// Mean of the values; 0 for an empty series.
    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|(_, v)| v).sum::<f64>() / self.values.len() as f64
    }

    pub fn mean_abs(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().map(|(_, v)| v.abs()).sum::<f64>() / self.values.len() as f64
    }
}

fn check_series(est: &[Volume3], gt: &[Volume3]) -> Result<()> {
    if est.len() != gt.len() {
        return Err(Error::DimsMismatch(format!(
            "series lengths differ: {} vs {}",
            est.len(),
            gt.len()
        )));
    }
    for (e, g) in est.iter().zip(gt) {
        check_dims(e.dims(), g.dims(), "MAE")?;
    }
    Ok(())
}

/// Mean of `|est − gt|` over every voxel of each volume.
pub fn mae_per_volume(label: &str, est: &[Volume3], gt: &[Volume3]) -> Result<MetricSeries> {
    check_series(est, gt)?;
    let values = est
        .iter()
        .zip(gt)
        .enumerate()
        .map(|(v, (e, g))| {
            let sum: f64 = e.as_slice().iter().zip(g.as_slice()).map(|(a, b)| (a - b).abs()).sum();
            (v, sum / e.as_slice().len() as f64)
        })
        .collect();
    MetricSeries::new(label, values)
}

/// MAE restricted to `mask`; volumes are reported as 0 when the mask is empty.
pub fn mae_per_volume_masked(label: &str, est: &[Volume3], gt: &[Volume3], mask: &Mask) -> Result<MetricSeries> {
    check_series(est, gt)?;
    let n = mask.count();
    let mut values = Vec::with_capacity(est.len());
    for (v, (e, g)) in est.iter().zip(gt).enumerate() {
        check_dims(e.dims(), mask.dims(), "MAE mask")?;
        let sum: f64 = e
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .zip(mask.as_slice())
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| (a - b).abs())
            .sum();
        values.push((v, if n == 0 { 0.0 } else { sum / n as f64 }));
    }
    MetricSeries::new(label, values)
}

/// Signed mean of `fa_est − fa_gt` over the WM voxels of each axial slice.
/// Slices without WM are omitted.
pub fn me_per_slice(label: &str, fa_est: &Volume3, fa_gt: &Volume3, wm: &Mask) -> Result<MetricSeries> {
    check_dims(fa_est.dims(), fa_gt.dims(), "ME")?;
    check_dims(fa_est.dims(), wm.dims(), "ME mask")?;
    let dims = fa_est.dims();
    let n = dims.slice_len();
    let mut values = Vec::new();
    for z in 0..dims.nz {
        let range = z * n..(z + 1) * n;
        let (mut sum, mut count) = (0.0, 0usize);
        for i in range {
            if wm.as_slice()[i] {
                sum += fa_est.as_slice()[i] - fa_gt.as_slice()[i];
                count += 1;
            }
        }
        if count > 0 {
            values.push((z, sum / count as f64));
        }
    }
    MetricSeries::new(label, values)
}

/// Signed voxel-wise `fa_est − fa_gt`.
pub fn error_map(fa_est: &Volume3, fa_gt: &Volume3) -> Result<Volume3> {
    fa_est.zip_map(fa_gt, |a, b| a - b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Palette {
    Gray,
    /// Piecewise-linear through [`SPECTRUM_STOPS`].
    Spectrum,
}

/// Dark blue, blue, cyan, yellow, red, dark red at equal spacing.
pub const SPECTRUM_STOPS: [[u8; 3]; 6] = [
    [0, 0, 128],
    [0, 0, 255],
    [0, 255, 255],
    [255, 255, 0],
    [255, 0, 0],
    [128, 0, 0],
];

/// Affine map of `[lo, hi]` onto `[0, 255]`, clamped.
pub fn to_level(v: f64, (lo, hi): (f64, f64)) -> u8 {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (t * 255.0).round() as u8
}

pub fn spectrum(level: u8) -> [u8; 3] {
    let t = level as f64 / 255.0 * (SPECTRUM_STOPS.len() - 1) as f64;
    let k = (t.floor() as usize).min(SPECTRUM_STOPS.len() - 2);
    let f = t - k as f64;
    let (a, b) = (SPECTRUM_STOPS[k], SPECTRUM_STOPS[k + 1]);
    [0, 1, 2].map(|c| (a[c] as f64 + f * (b[c] as f64 - a[c] as f64)).round() as u8)
}

/// Encodes axial slice `z` as binary PGM (gray) or PPM (spectrum). Row 0 of
/// the image is y = 0.
pub fn encode_slice(vol: &Volume3, z: usize, window: (f64, f64), palette: Palette) -> Result<Vec<u8>> {
    let dims = vol.dims();
    if z >= dims.nz {
        return Err(Error::InvalidArgument(format!("slice {z} outside 0..{}", dims.nz)));
    }
    if !(window.0 < window.1) {
        return Err(Error::InvalidArgument(format!("empty window {window:?}")));
    }
    let levels = vol.slice(z).iter().map(|&v| to_level(v, window));
    let (magic, body): (&str, Vec<u8>) = match palette {
        Palette::Gray => ("P5", levels.collect()),
        Palette::Spectrum => ("P6", levels.flat_map(spectrum).collect()),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", dims.nx, dims.ny).into_bytes();
    out.extend(body);
    Ok(out)
}

pub fn render_slice(vol: &Volume3, z: usize, window: (f64, f64), palette: Palette, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_slice(vol, z, window, palette)?;
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// `label,index,value` rows in input order, values to 9 significant digits.
pub fn metrics_csv(series: &[MetricSeries]) -> Result<String> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("no metric series to write".into()));
    }
    let mut out = String::from("label,index,value\n");
    for s in series {
        for (i, v) in &s.values {
            writeln!(out, "{},{},{:.8e}", s.label, i, v).expect("write to String");
        }
    }
    Ok(out)
}

pub fn write_metrics_csv(series: &[MetricSeries], path: impl AsRef<Path>) -> Result<()> {
    let text = metrics_csv(series)?;
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
