//! The `metrics` subcommand: saturation and RMS contrast of image files.

use std::path::{Path, PathBuf};

use swgtoy_core::{ImageStats, RgbImage};

use crate::run::csv_field;
use crate::CliError;

const PPM_EXTENSIONS: [&str; 2] = ["ppm", "pnm"];

fn is_image(path: &Path) -> bool {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    PPM_EXTENSIONS.contains(&ext.as_str()) || (cfg!(feature = "png") && ext == "png")
}

/// Expands directories (recursively, sorted) into image files. Explicit
/// file arguments are kept as given.
pub fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| CliError::io(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|e| CliError::io(dir, e)))
            .collect::<Result<_, _>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, out)?;
            } else if is_image(&p) {
                out.push(p);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            walk(p, &mut out)?;
        } else {
            out.push(p.clone());
        }
    }
    Ok(out)
}

pub fn load_image(path: &Path) -> Result<RgbImage, String> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    if ext == "png" {
        return load_png(path);
    }
    swgtoy_core::ppm::read_ppm(path).map_err(|e| e.to_string())
}

#[cfg(feature = "png")]
fn load_png(path: &Path) -> Result<RgbImage, String> {
    let img = image::open(path).map_err(|e| e.to_string())?.into_rgb32f();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0.map(f64::from)).collect();
    RgbImage::new(w as usize, h as usize, data).map_err(|e| e.to_string())
}

#[cfg(not(feature = "png"))]
fn load_png(_: &Path) -> Result<RgbImage, String> {
    Err("PNG support is not compiled in (enable the `png` feature)".into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<(PathBuf, Result<ImageStats, String>)>,
}

impl MetricsTable {
    pub fn compute(paths: &[PathBuf]) -> Self {
        let rows = paths
            .iter()
            .map(|p| {
                let stats =
                    load_image(p).and_then(|img| ImageStats::of(&img).map_err(|e| e.to_string()));
                if let Err(e) = &stats {
                    tracing::warn!(path = %p.display(), "{e}");
                }
                (p.clone(), stats)
            })
            .collect();
        Self { rows }
    }

    pub fn n_ok(&self) -> usize {
        self.rows.iter().filter(|(_, r)| r.is_ok()).count()
    }

    /// One row per file and a final `mean` row over the readable files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,saturation,rms_contrast,error\n");
        let (mut s, mut c) = (0.0, 0.0);
        for (path, r) in &self.rows {
            let name = csv_field(&path.display().to_string());
            match r {
                Ok(stats) => {
                    s += stats.saturation;
                    c += stats.contrast;
                    out.push_str(&format!(
                        "{name},{},{},\n",
                        stats.saturation, stats.contrast
                    ));
                }
                Err(e) => out.push_str(&format!("{name},,,{}\n", csv_field(e))),
            }
        }
        let n = self.n_ok();
        if n > 0 {
            out.push_str(&format!("mean,{},{},\n", s / n as f64, c / n as f64));
        } else {
            out.push_str("mean,,,no readable images\n");
        }
        out
    }
}

/// Computes the table; fails only when no file could be read.
pub fn run_metrics(paths: &[PathBuf]) -> Result<MetricsTable, CliError> {
    let inputs = collect_inputs(paths)?;
    if inputs.is_empty() {
        return Err(CliError::Runtime("no image files found".into()));
    }
    let table = MetricsTable::compute(&inputs);
    if table.n_ok() == 0 {
        return Err(CliError::Runtime(format!(
            "none of the {} image files could be read",
            inputs.len()
        )));
    }
    Ok(table)
}
