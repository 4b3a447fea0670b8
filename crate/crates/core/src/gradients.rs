//! Gradient tables: one `b gx gy gz` row per DW volume.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientEntry {
    /// Diffusion weighting in s/mm².
    pub b: f64,
    /// Unit direction; zero vector allowed for b = 0.
    pub g: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientTable {
    entries: Vec<GradientEntry>,
}

impl GradientTable {
    pub fn new(entries: Vec<GradientEntry>) -> Result<GradientTable> {
        for (i, e) in entries.iter().enumerate() {
            if !(e.b.is_finite() && e.g.iter().all(|c| c.is_finite())) {
                return Err(Error::Gradient(format!("entry {i}: non-finite value")));
            }
            if e.b < 0.0 {
                return Err(Error::Gradient(format!("entry {i}: negative b-value {}", e.b)));
            }
            if e.b > 0.0 {
                let norm = e.g.iter().map(|c| c * c).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(Error::Gradient(format!(
                        "entry {i}: non-unit direction (norm {norm}) with b = {}",
                        e.b
                    )));
                }
            }
        }
        Ok(GradientTable { entries })
    }

    /// Parses whitespace-separated `b gx gy gz` rows; `#` starts a comment.
    pub fn parse(text: &str) -> Result<GradientTable> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::Gradient(format!(
                    "line {}: expected 4 columns (b gx gy gz), found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let mut vals = [0.0; 4];
            for (v, f) in vals.iter_mut().zip(&fields) {
                *v = f.parse().map_err(|_| {
                    Error::Gradient(format!("line {}: cannot parse '{f}'", lineno + 1))
                })?;
            }
            entries.push(GradientEntry {
                b: vals[0],
                g: [vals[1], vals[2], vals[3]],
            });
        }
        GradientTable::new(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<GradientTable> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GradientTable::parse(&text)
    }

    /// Shortest round-trip formatting, so save/load is exact.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# b gx gy gz\n");
        for e in &self.entries {
            let _ = writeln!(out, "{} {} {} {}", e.b, e.g[0], e.g[1], e.g[2]);
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// `n_b0` unweighted entries followed by `n_dirs` near-uniform directions
    /// on the upper hemisphere (Fibonacci lattice) at weighting `b`.
    pub fn hemisphere_scheme(n_b0: usize, n_dirs: usize, b: f64) -> Result<GradientTable> {
        let golden = PI * (3.0 - 5f64.sqrt());
        let mut entries = vec![GradientEntry { b: 0.0, g: [0.0; 3] }; n_b0];
        for k in 0..n_dirs {
            let z = 1.0 - (k as f64 + 0.5) / n_dirs as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            entries.push(GradientEntry {
                b,
                g: [r * phi.cos(), r * phi.sin(), z],
            });
        }
        GradientTable::new(entries)
    }

    pub fn entries(&self) -> &[GradientEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn b0_count(&self) -> usize {
        self.entries.iter().filter(|e| e.b == 0.0).count()
    }
}
