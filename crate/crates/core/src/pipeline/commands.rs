use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dti::TensorField;
use crate::error::{Error, Result};
use crate::eval::{
    render_slice, write_metrics_csv, MetricSeries, Palette, DWI_WINDOW, ERROR_WINDOW, FA_WINDOW,
};
use crate::filters::FilterConfig;
use crate::gradients::GradientTable;
use crate::io::{container_exists, load_channels, load_mask, load_volume, save_channels, save_mask, save_volume};
use crate::phantom::RNG_NAME;
use crate::phasecorr::CalibratorRegistry;
use crate::volume::{ComplexSeries, ComplexVolume3, DwiSeries, Mask, Volume3};

use super::config::ExperimentConfig;
use super::experiment::{
    build_report, correct_variants, evaluate_method, fit_fa, magnitude_baseline, magnitude_preservation_error,
    simulate, MethodMetrics, MethodRun, Report, Simulation, MAG_LABEL,
};

pub const TOOL_NAME: &str = "dwipc";

/// File and directory names under the output directory.
pub mod layout {
    pub const MANIFEST: &str = "manifest.json";
    pub const GRADIENTS: &str = "gradients.txt";
    pub const NOISY_RE: &str = "noisy_re";
    pub const NOISY_IM: &str = "noisy_im";
    pub const GROUNDTRUTH: &str = "groundtruth";
    pub const CLEAN: &str = "clean";
    pub const SIGMA: &str = "sigma";
    pub const FA: &str = "fa";
    pub const TENSOR: &str = "tensor";
    pub const WM_MASK: &str = "wm_mask";
    pub const BACKGROUND_MASK: &str = "background_mask";
    pub const TISSUE_MASK: &str = "tissue_mask";
    pub const BACKGROUND_PHASE: &str = "background_phase";
    pub const CORRECTED: &str = "corrected";
    pub const DISCARDED_IMAG: &str = "discarded_imag";
    pub const ROTATION: &str = "rotation";
    pub const NOISE_FLOOR_MASK: &str = "noise_floor_mask";
    pub const MPPCA_SIGMA_RE: &str = "mppca_sigma_re";
    pub const MPPCA_SIGMA_IM: &str = "mppca_sigma_im";
    pub const TIMING_LOG: &str = "timing.log";
    pub const DIAGNOSTICS: &str = "diagnostics.json";
    pub const FIT_QC_MASK: &str = "fit_qc_mask";
    pub const FA_ERROR: &str = "fa_error";
    pub const METRICS: &str = "metrics";
    pub const MAE_CSV: &str = "mae.csv";
    pub const ME_CSV: &str = "me.csv";
    pub const SUMMARY: &str = "summary.json";
    pub const RENDERS: &str = "renders";
    pub const REPORT: &str = "report.json";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub rng: String,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn new(cfg: &ExperimentConfig) -> Manifest {
        Manifest {
            tool: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            rng: RNG_NAME.into(),
            config: cfg.clone(),
        }
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn load_gradients(root: &Path) -> Result<GradientTable> {
    let path = root.join(layout::GRADIENTS);
    if !path.exists() {
        return Err(Error::Config(format!("missing gradient table {}", path.display())));
    }
    GradientTable::load(path)
}

fn load_noisy(root: &Path) -> Result<ComplexSeries> {
    let re = load_channels(root.join(layout::NOISY_RE))?;
    let im = load_channels(root.join(layout::NOISY_IM))?;
    let grads = load_gradients(root)?;
    if re.len() != im.len() {
        return Err(Error::DimsMismatch("real and imaginary series differ in length".into()));
    }
    let vols = re.into_iter().zip(im).map(|(r, i)| ComplexVolume3::new(r, i)).collect::<Result<Vec<_>>>()?;
    ComplexSeries::new(vols, grads)
}

/// Writes the clean and noisy series, ground truth and the manifest.
pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<Simulation> {
    let root = cfg.output_dir()?;
    let sim = simulate(cfg)?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_json(&Manifest::new(cfg), &root.join(layout::MANIFEST))?;
    sim.noisy.gradients().save(root.join(layout::GRADIENTS))?;
    save_channels(&sim.noisy.real_parts(), root.join(layout::NOISY_RE))?;
    save_channels(&sim.noisy.imag_parts(), root.join(layout::NOISY_IM))?;
    let gt = root.join(layout::GROUNDTRUTH);
    save_channels(sim.clean.volumes(), gt.join(layout::CLEAN))?;
    save_volume(sim.sigma.volume(), gt.join(layout::SIGMA))?;
    save_volume(&sim.fa_gt, gt.join(layout::FA))?;
    save_channels(&sim.phantom.tensors.to_channels(), gt.join(layout::TENSOR))?;
    save_mask(&sim.phantom.wm, gt.join(layout::WM_MASK))?;
    save_mask(&sim.phantom.background, gt.join(layout::BACKGROUND_MASK))?;
    save_mask(&sim.tissue(), gt.join(layout::TISSUE_MASK))?;
    save_volume(sim.phase.angles(), gt.join(layout::BACKGROUND_PHASE))?;
    Ok(sim)
}

/// Which filters and modes `cmd_correct` runs; `None` defers to the config.
#[derive(Debug, Clone, Default)]
pub struct CorrectRequest {
    pub filters: Option<Vec<String>>,
    pub calibrated: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
struct Diagnostics<'a> {
    label: &'a str,
    filter: &'a FilterConfig,
    calibrated: bool,
    calibrator: Option<&'a str>,
    noise_floor_voxels: Vec<usize>,
    max_magnitude_rel_error: f64,
}

/// Corrects the stored noisy series; returns each written method label
/// with its magnitude-preservation error.
pub fn cmd_correct(cfg: &ExperimentConfig, req: &CorrectRequest) -> Result<Vec<(String, f64)>> {
    let root = cfg.output_dir()?;
    let filters: Vec<FilterConfig> = match &req.filters {
        Some(names) => names.iter().map(|n| cfg.filter(n)).collect::<Result<_>>()?,
        None => cfg.filters.clone(),
    };
    let modes: Vec<bool> = match req.calibrated {
        Some(c) => vec![c],
        None => cfg.calibration.modes().to_vec(),
    };
    let calibrator = CalibratorRegistry::default().build(&cfg.calibrator)?;
    let noisy = load_noisy(root)?;
    let mut written = Vec::new();
    for f in &filters {
        for run in correct_variants(&noisy, f, &modes, calibrator.as_ref())? {
            let diags = run.diagnostics.as_deref().expect("corrected runs carry diagnostics");
            let err = magnitude_preservation_error(&noisy, diags);
            let calibrated = run.label.ends_with("-new");
            let dir = root.join(&run.label);
            write_method(&dir, &run)?;
            write_json(
                &Diagnostics {
                    label: &run.label,
                    filter: f,
                    calibrated,
                    calibrator: calibrated.then_some(calibrator.name()),
                    noise_floor_voxels: diags.iter().map(|d| d.noise_floor_mask.count()).collect(),
                    max_magnitude_rel_error: err,
                },
                &dir.join(layout::DIAGNOSTICS),
            )?;
            written.push((run.label.clone(), err));
        }
    }
    Ok(written)
}

fn write_method(dir: &Path, run: &MethodRun) -> Result<()> {
    save_channels(run.corrected.volumes(), dir.join(layout::CORRECTED))?;
    if let Some(diags) = &run.diagnostics {
        let discarded: Vec<Volume3> = diags.iter().map(|d| d.discarded_imag.clone()).collect();
        let rotation: Vec<Volume3> = diags.iter().map(|d| d.rotation.angles().clone()).collect();
        let floor: Vec<Volume3> = diags.iter().map(|d| d.noise_floor_mask.to_volume()).collect();
        save_channels(&discarded, dir.join(layout::DISCARDED_IMAG))?;
        save_channels(&rotation, dir.join(layout::ROTATION))?;
        save_channels(&floor, dir.join(layout::NOISE_FLOOR_MASK))?;
    }
    if let Some((re, im)) = &run.mppca_sigma {
        save_volume(re.volume(), dir.join(layout::MPPCA_SIGMA_RE))?;
        save_volume(im.volume(), dir.join(layout::MPPCA_SIGMA_IM))?;
    }
    if !run.volume_times.is_empty() {
        // Wall-clock only; not part of the reproducible outputs.
        let mut log = format!("filter_ms {:.3}\n", run.filter_time.as_secs_f64() * 1e3);
        for (v, t) in run.volume_times.iter().enumerate() {
            writeln!(log, "volume {v} correct_ms {:.3}", t.as_secs_f64() * 1e3).expect("write to String");
        }
        write_file(&dir.join(layout::TIMING_LOG), log.as_bytes())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FitTarget {
    /// A method directory such as `TV-new`.
    Method(String),
    /// Uncorrected magnitudes of the noisy series.
    Mag,
    /// Every method directory present plus MAG.
    All,
}

const RESERVED_DIRS: [&str; 3] = [layout::GROUNDTRUTH, layout::METRICS, layout::RENDERS];

/// Method directories holding a corrected series: configured filters in
/// order (uncalibrated first), any others sorted, MAG last.
fn method_dirs(cfg: &ExperimentConfig, root: &Path, need: &str) -> Result<Vec<String>> {
    let mut found = Vec::new();
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if entry.path().is_dir() && !RESERVED_DIRS.contains(&name.as_str()) && container_exists(entry.path().join(need)) {
            found.push(name);
        }
    }
    found.sort();
    let mut ordered = Vec::new();
    for f in &cfg.filters {
        for label in [f.name().to_string(), format!("{}-new", f.name())] {
            if let Some(k) = found.iter().position(|n| *n == label) {
                ordered.push(found.remove(k));
            }
        }
    }
    let mag = found.iter().position(|n| n == MAG_LABEL).map(|k| found.remove(k));
    ordered.extend(found);
    ordered.extend(mag);
    Ok(ordered)
}

fn fit_mask(root: &Path, dims: crate::volume::Dims) -> Result<Mask> {
    let path = root.join(layout::GROUNDTRUTH).join(layout::TISSUE_MASK);
    if container_exists(&path) {
        load_mask(path)
    } else {
        Ok(Mask::full(dims))
    }
}

/// Fits tensors and FA for the requested series; returns labels fitted.
pub fn cmd_fit(cfg: &ExperimentConfig, target: &FitTarget) -> Result<Vec<String>> {
    let root = cfg.output_dir()?;
    let labels = match target {
        FitTarget::Method(l) if l == MAG_LABEL => vec![MAG_LABEL.to_string()],
        FitTarget::Method(l) => vec![l.clone()],
        FitTarget::Mag => vec![MAG_LABEL.to_string()],
        FitTarget::All => {
            let mut l: Vec<String> =
                method_dirs(cfg, root, layout::CORRECTED)?.into_iter().filter(|n| n != MAG_LABEL).collect();
            l.push(MAG_LABEL.into());
            l
        }
    };
    let grads = load_gradients(root)?;
    for label in &labels {
        let dir = root.join(label);
        let series = if label == MAG_LABEL {
            let run = magnitude_baseline(&load_noisy(root)?);
            write_method(&dir, &run)?;
            run.corrected
        } else {
            DwiSeries::new(load_channels(dir.join(layout::CORRECTED))?, grads.clone())?
        };
        let mask = fit_mask(root, series.dims())?;
        let out = fit_fa(&series, &mask)?;
        save_volume(&out.fa, dir.join(layout::FA))?;
        save_channels(&out.fit.field.to_channels(), dir.join(layout::TENSOR))?;
        save_mask(&out.fit.clamped, dir.join(layout::FIT_QC_MASK))?;
    }
    Ok(labels)
}

#[derive(Debug, Serialize)]
struct SummaryEntry<'a> {
    label: &'a str,
    mean_mae: f64,
    mean_abs_me: f64,
    mean_me: f64,
}

/// MAE/ME tables, FA error maps, renders and summary for every fitted
/// method directory.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<Vec<MethodMetrics>> {
    let root = cfg.output_dir()?;
    let gt = root.join(layout::GROUNDTRUTH);
    for name in [layout::CLEAN, layout::FA, layout::WM_MASK] {
        if !container_exists(gt.join(name)) {
            return Err(Error::MissingFile(gt.join(name)));
        }
    }
    let clean = load_channels(gt.join(layout::CLEAN))?;
    let fa_gt = load_volume(gt.join(layout::FA))?;
    let wm = load_mask(gt.join(layout::WM_MASK))?;
    let labels = method_dirs(cfg, root, layout::FA)?;
    if labels.is_empty() {
        return Err(Error::InvalidData(format!("no fitted method directories in {}", root.display())));
    }
    let grads = load_gradients(root)?;
    let dwi_index = grads.entries().iter().position(|e| e.b > 0.0).unwrap_or(0);
    let z = fa_gt.dims().nz / 2;
    let renders = root.join(layout::RENDERS);
    render_slice(&clean[dwi_index], z, DWI_WINDOW, Palette::Gray, renders.join("groundtruth_dwi.pgm"))?;
    render_slice(&fa_gt, z, FA_WINDOW, Palette::Gray, renders.join("groundtruth_fa.pgm"))?;

    let mut metrics = Vec::new();
    for label in &labels {
        let dir = root.join(label);
        let corrected = load_channels(dir.join(layout::CORRECTED))?;
        let fa = load_volume(dir.join(layout::FA))?;
        let m = evaluate_method(label, &corrected, &fa, &clean, &fa_gt, &wm)?;
        save_volume(&m.fa_error, dir.join(layout::FA_ERROR))?;
        render_slice(&corrected[dwi_index], z, DWI_WINDOW, Palette::Gray, renders.join(format!("{label}_dwi.pgm")))?;
        render_slice(&fa, z, FA_WINDOW, Palette::Gray, renders.join(format!("{label}_fa.pgm")))?;
        render_slice(&m.fa_error, z, ERROR_WINDOW, Palette::Spectrum, renders.join(format!("{label}_fa_error.ppm")))?;
        metrics.push(m);
    }
    let metrics_dir = root.join(layout::METRICS);
    let mae: Vec<MetricSeries> = metrics.iter().map(|m| m.mae.clone()).collect();
    let me: Vec<MetricSeries> = metrics.iter().map(|m| m.me.clone()).collect();
    write_metrics_csv(&mae, metrics_dir.join(layout::MAE_CSV))?;
    write_metrics_csv(&me, metrics_dir.join(layout::ME_CSV))?;
    let summary: Vec<SummaryEntry> = metrics
        .iter()
        .map(|m| SummaryEntry { label: &m.label, mean_mae: m.mae.mean(), mean_abs_me: m.me.mean_abs(), mean_me: m.me.mean() })
        .collect();
    write_json(&serde_json::json!({ "methods": summary }), &metrics_dir.join(layout::SUMMARY))?;
    Ok(metrics)
}

/// simulate → correct → fit → evaluate, then writes `report.json`.
pub fn cmd_reproduce(cfg: &ExperimentConfig) -> Result<Report> {
    let root = cfg.output_dir()?.to_path_buf();
    cmd_simulate(cfg)?;
    let corrected = cmd_correct(cfg, &CorrectRequest::default())?;
    cmd_fit(cfg, &FitTarget::All)?;
    let metrics = cmd_evaluate(cfg)?;
    let filters: Vec<&str> = cfg.filters.iter().map(FilterConfig::name).collect();
    let report = build_report(&metrics, &filters, cfg.noise.sigma0, &corrected)?;
    write_json(&report, &root.join(layout::REPORT))?;
    Ok(report)
}

/// Loads a stored tensor field, e.g. `<out>/TV-new/tensor`.
pub fn load_tensor_field(path: impl Into<PathBuf>) -> Result<TensorField> {
    TensorField::from_channels(&load_channels(path.into())?)
}
