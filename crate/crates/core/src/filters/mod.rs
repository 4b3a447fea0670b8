//! Background-phase smoothing filters. Each filter is applied separately to
//! the real and the imaginary parts of a complex DW series; the filtered
//! pair is the noise-free estimate from which the background phase is read.

mod curvature;
mod mppca;
mod tv;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use curvature::{cf_denoise, cf_denoise_slice, projection_distances};
pub use mppca::{
    block_starts, denoise_casorati, mp_rank, mppca_denoise, mppca_denoise_volumes, BlockDenoise,
    RankRule,
};
pub use tv::{rof_objective, tv_denoise, tv_denoise_slice, Chambolle, CHAMBOLLE_STEP};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::volume::{ComplexSeries, ComplexVolume3, DwiSeries, Volume3};

/// Per-voxel noise standard deviation in signal units.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaMap(Volume3);

impl SigmaMap {
    pub fn new(sigma: Volume3) -> Result<SigmaMap> {
        if sigma.as_slice().iter().any(|&s| s < 0.0) {
            return Err(Error::InvalidData("negative noise level".into()));
        }
        Ok(SigmaMap(sigma))
    }

    pub fn volume(&self) -> &Volume3 {
        &self.0
    }

    pub fn into_volume(self) -> Volume3 {
        self.0
    }
}

fn default_lambda() -> f64 {
    2.0
}
fn default_iters() -> usize {
    10
}
fn default_block() -> [usize; 3] {
    [5, 5, 5]
}
fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FilterConfig {
    /// Total-variation (ROF) denoising per axial slice.
    TV {
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default = "default_iters")]
        iters: usize,
    },
    /// Gaussian-curvature filtering per axial slice.
    CF {
        #[serde(default = "default_iters")]
        iters: usize,
    },
    /// Marchenko–Pastur PCA across the volume dimension.
    MPPCA {
        #[serde(default = "default_block")]
        block: [usize; 3],
        #[serde(default = "default_stride")]
        stride: usize,
    },
}

impl FilterConfig {
    pub fn tv() -> FilterConfig {
        FilterConfig::TV {
            lambda: default_lambda(),
            iters: default_iters(),
        }
    }

    pub fn cf() -> FilterConfig {
        FilterConfig::CF {
            iters: default_iters(),
        }
    }

    pub fn mppca() -> FilterConfig {
        FilterConfig::MPPCA {
            block: default_block(),
            stride: default_stride(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FilterConfig::TV { .. } => "TV",
            FilterConfig::CF { .. } => "CF",
            FilterConfig::MPPCA { .. } => "MPPCA",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{}: {msg}", self.name())));
        match *self {
            FilterConfig::TV { lambda, iters } => {
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return bad(format!("lambda must be positive, got {lambda}"));
                }
                if iters == 0 {
                    return bad("iters must be at least 1".into());
                }
            }
            FilterConfig::CF { iters } => {
                if iters == 0 {
                    return bad("iters must be at least 1".into());
                }
            }
            FilterConfig::MPPCA { block, stride } => {
                if block.iter().any(|&b| b < 3 || b % 2 == 0) {
                    return bad(format!("block dims must be odd and >= 3, got {block:?}"));
                }
                if stride == 0 {
                    return bad("stride must be at least 1".into());
                }
            }
        }
        Ok(())
    }
}

/// Result of filtering one part (real or imaginary) of a series.
#[derive(Debug, Clone)]
pub struct FilteredPart {
    pub volumes: Vec<Volume3>,
    /// Estimated noise level, for filters that produce one.
    pub sigma: Option<SigmaMap>,
}

/// A smoothing strategy f(·) applied to one real-valued part of a series.
pub trait BackgroundFilter: Send + Sync {
    fn name(&self) -> &'static str;

    fn config(&self) -> FilterConfig;

    fn filter_part(&self, part: &[Volume3]) -> Result<FilteredPart>;
}

#[derive(Debug, Clone)]
pub struct TvFilter {
    pub lambda: f64,
    pub iters: usize,
}

impl BackgroundFilter for TvFilter {
    fn name(&self) -> &'static str {
        "TV"
    }

    fn config(&self) -> FilterConfig {
        FilterConfig::TV {
            lambda: self.lambda,
            iters: self.iters,
        }
    }

    fn filter_part(&self, part: &[Volume3]) -> Result<FilteredPart> {
        let volumes = part
            .par_iter()
            .map(|v| tv_denoise(v, self.lambda, self.iters))
            .collect::<Result<Vec<_>>>()?;
        Ok(FilteredPart { volumes, sigma: None })
    }
}

#[derive(Debug, Clone)]
pub struct CurvatureFilter {
    pub iters: usize,
}

impl BackgroundFilter for CurvatureFilter {
    fn name(&self) -> &'static str {
        "CF"
    }

    fn config(&self) -> FilterConfig {
        FilterConfig::CF { iters: self.iters }
    }

    fn filter_part(&self, part: &[Volume3]) -> Result<FilteredPart> {
        let volumes = part
            .par_iter()
            .map(|v| cf_denoise(v, self.iters))
            .collect::<Result<Vec<_>>>()?;
        Ok(FilteredPart { volumes, sigma: None })
    }
}

#[derive(Debug, Clone)]
pub struct MppcaFilter {
    pub block: [usize; 3],
    pub stride: usize,
}

impl BackgroundFilter for MppcaFilter {
    fn name(&self) -> &'static str {
        "MPPCA"
    }

    fn config(&self) -> FilterConfig {
        FilterConfig::MPPCA {
            block: self.block,
            stride: self.stride,
        }
    }

    fn filter_part(&self, part: &[Volume3]) -> Result<FilteredPart> {
        let (volumes, sigma) =
            mppca_denoise_volumes(part, self.block, self.stride, RankRule::MarchenkoPastur)?;
        Ok(FilteredPart {
            volumes,
            sigma: Some(sigma),
        })
    }
}

pub type FilterConstructor = fn(&FilterConfig) -> Result<Box<dyn BackgroundFilter>>;

#[derive(Clone, Copy)]
pub struct FilterEntry {
    pub build: FilterConstructor,
    pub default_config: fn() -> FilterConfig,
}

impl std::fmt::Debug for FilterEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("FilterEntry")
    }
}

fn wrong_variant(expected: &str, cfg: &FilterConfig) -> Error {
    Error::Config(format!(
        "constructor for {expected} received a {} configuration",
        cfg.name()
    ))
}

fn build_tv(cfg: &FilterConfig) -> Result<Box<dyn BackgroundFilter>> {
    cfg.validate()?;
    match *cfg {
        FilterConfig::TV { lambda, iters } => Ok(Box::new(TvFilter { lambda, iters })),
        _ => Err(wrong_variant("TV", cfg)),
    }
}

fn build_cf(cfg: &FilterConfig) -> Result<Box<dyn BackgroundFilter>> {
    cfg.validate()?;
    match *cfg {
        FilterConfig::CF { iters } => Ok(Box::new(CurvatureFilter { iters })),
        _ => Err(wrong_variant("CF", cfg)),
    }
}

fn build_mppca(cfg: &FilterConfig) -> Result<Box<dyn BackgroundFilter>> {
    cfg.validate()?;
    match *cfg {
        FilterConfig::MPPCA { block, stride } => Ok(Box::new(MppcaFilter { block, stride })),
        _ => Err(wrong_variant("MPPCA", cfg)),
    }
}

/// Filters available by name.
#[derive(Debug, Clone)]
pub struct FilterRegistry(Registry<FilterEntry>);

impl Default for FilterRegistry {
    fn default() -> Self {
        let mut r = Registry::new("filter");
        r.register("TV", FilterEntry { build: build_tv, default_config: FilterConfig::tv })
            .register("CF", FilterEntry { build: build_cf, default_config: FilterConfig::cf })
            .register("MPPCA", FilterEntry { build: build_mppca, default_config: FilterConfig::mppca });
        FilterRegistry(r)
    }
}

impl FilterRegistry {
    pub fn empty() -> Self {
        FilterRegistry(Registry::new("filter"))
    }

    pub fn register(&mut self, name: &str, entry: FilterEntry) -> &mut Self {
        self.0.register(name, entry);
        self
    }

    pub fn names(&self) -> Vec<&str> {
        self.0.names()
    }

    pub fn default_config(&self, name: &str) -> Result<FilterConfig> {
        Ok((self.0.get(name)?.default_config)())
    }

    pub fn build(&self, cfg: &FilterConfig) -> Result<Box<dyn BackgroundFilter>> {
        (self.0.get(cfg.name())?.build)(cfg)
    }
}

/// Filters the real and imaginary parts of every volume independently.
pub fn filter_series(series: &ComplexSeries, cfg: &FilterConfig) -> Result<ComplexSeries> {
    let filter = FilterRegistry::default().build(cfg)?;
    Ok(filter_series_with(series, filter.as_ref())?.series)
}

#[derive(Debug, Clone)]
pub struct FilteredSeries {
    pub series: ComplexSeries,
    pub sigma_re: Option<SigmaMap>,
    pub sigma_im: Option<SigmaMap>,
}

pub fn filter_series_with(
    series: &ComplexSeries,
    filter: &dyn BackgroundFilter,
) -> Result<FilteredSeries> {
    let re = filter.filter_part(&series.real_parts())?;
    let im = filter.filter_part(&series.imag_parts())?;
    let volumes = re
        .volumes
        .into_iter()
        .zip(im.volumes)
        .map(|(r, i)| ComplexVolume3::new(r, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(FilteredSeries {
        series: DwiSeries::new(volumes, series.gradients().clone())?,
        sigma_re: re.sigma,
        sigma_im: im.sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradients::GradientTable;
    use crate::volume::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy_series(n: usize, dims: Dims, seed: u64, zero_imag: bool) -> ComplexSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grads = GradientTable::hemisphere_scheme(1, n - 1, 1000.0).unwrap();
        let vols = (0..n)
            .map(|_| {
                let re = Volume3::from_fn(dims, |x, _, _| 10.0 + x as f64 + rng.random::<f64>()).unwrap();
                let im = if zero_imag {
                    Volume3::zeros(dims)
                } else {
                    Volume3::from_fn(dims, |_, y, _| y as f64 - rng.random::<f64>()).unwrap()
                };
                ComplexVolume3::new(re, im).unwrap()
            })
            .collect();
        DwiSeries::new(vols, grads).unwrap()
    }

    #[test]
    fn defaults_match_documented_settings() {
        assert_eq!(FilterConfig::tv(), FilterConfig::TV { lambda: 2.0, iters: 10 });
        assert_eq!(FilterConfig::cf(), FilterConfig::CF { iters: 10 });
        assert_eq!(FilterConfig::mppca(), FilterConfig::MPPCA { block: [5, 5, 5], stride: 1 });
        let parsed: FilterConfig = serde_json::from_str(r#"{"kind":"MPPCA"}"#).unwrap();
        assert_eq!(parsed, FilterConfig::mppca());
    }

    #[test]
    fn validation() {
        assert!(FilterConfig::TV { lambda: 0.0, iters: 10 }.validate().is_err());
        assert!(FilterConfig::CF { iters: 0 }.validate().is_err());
        assert!(FilterConfig::MPPCA { block: [4, 5, 5], stride: 1 }.validate().is_err());
        assert!(FilterConfig::MPPCA { block: [1, 1, 1], stride: 1 }.validate().is_err());
        assert!(FilterConfig::MPPCA { block: [5, 5, 5], stride: 0 }.validate().is_err());
    }

    #[test]
    fn registry_lists_builtin_filters() {
        let reg = FilterRegistry::default();
        assert_eq!(reg.names(), vec!["CF", "MPPCA", "TV"]);
        assert_eq!(reg.default_config("TV").unwrap(), FilterConfig::tv());
        let err = reg.default_config("median").unwrap_err().to_string();
        assert!(err.contains("CF") && err.contains("MPPCA") && err.contains("TV"), "{err}");
        assert_eq!(reg.build(&FilterConfig::cf()).unwrap().name(), "CF");
    }

    #[test]
    fn near_identity_tv_preserves_series() {
        let s = noisy_series(3, Dims::new(6, 5, 2).unwrap(), 1, false);
        let out = filter_series(&s, &FilterConfig::TV { lambda: 1e-9, iters: 10 }).unwrap();
        for (a, b) in out.volumes().iter().zip(s.volumes()) {
            for (x, y) in a.re().as_slice().iter().zip(b.re().as_slice()) {
                assert!((x - y).abs() < 1e-6);
            }
            for (x, y) in a.im().as_slice().iter().zip(b.im().as_slice()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_imaginary_stays_zero() {
        let s = noisy_series(3, Dims::new(6, 5, 2).unwrap(), 2, true);
        for cfg in [FilterConfig::tv(), FilterConfig::cf()] {
            let out = filter_series(&s, &cfg).unwrap();
            for v in out.volumes() {
                assert!(v.im().as_slice().iter().all(|&x| x == 0.0), "{}", cfg.name());
            }
        }
    }

    #[test]
    fn mppca_series_shape_and_sigma() {
        let dims = Dims::new(8, 8, 8).unwrap();
        let s = noisy_series(5, dims, 3, false);
        let filter = FilterRegistry::default().build(&FilterConfig::mppca()).unwrap();
        let out = filter_series_with(&s, filter.as_ref()).unwrap();
        assert_eq!(out.series.len(), 5);
        assert_eq!(out.series.dims(), dims);
        for sigma in [out.sigma_re.unwrap(), out.sigma_im.unwrap()] {
            assert!(sigma.volume().as_slice().iter().all(|&x| x.is_finite() && x >= 0.0));
        }
    }

    #[test]
    fn filters_are_deterministic() {
        let s = noisy_series(4, Dims::new(7, 6, 5).unwrap(), 4, false);
        for cfg in [FilterConfig::tv(), FilterConfig::cf(), FilterConfig::mppca()] {
            let a = filter_series(&s, &cfg).unwrap();
            let b = filter_series(&s, &cfg).unwrap();
            assert_eq!(a, b, "{}", cfg.name());
        }
    }
}
