//! Power-law scaling of the specific-heat peak across moduli.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grokking::{aggregate_seeds, read_summary, RunSummary};
use crate::rundir::SUMMARY_FILE;

pub const SCALING_SCHEMA: &str = "# schema: scaling_table v1";

/// Default set of moduli for a cross-size sweep.
pub const DEFAULT_MODULI: [u64; 6] = [19, 23, 37, 59, 97, 113];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub p: u64,
    pub cv_peak_mean: f64,
    pub cv_peak_std: f64,
    pub n_seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent_a: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub weighted: bool,
    pub points: Vec<ScalingPoint>,
}

fn check_points(points: &[ScalingPoint]) -> Result<()> {
    if points.len() < 3 {
        return Err(Error::invalid(format!("a power-law fit needs at least 3 points, got {}", points.len())));
    }
    if let Some(bad) = points.iter().find(|pt| !(pt.cv_peak_mean > 0.0 && pt.cv_peak_mean.is_finite())) {
        return Err(Error::invalid(format!("peak value {} at p = {} is not positive", bad.cv_peak_mean, bad.p)));
    }
    if let Some(bad) = points.iter().find(|pt| pt.p < 2) {
        return Err(Error::invalid(format!("modulus {} is too small for a log scale", bad.p)));
    }
    Ok(())
}

/// Weighted least squares of `y` on `x`; returns slope, intercept and R².
fn least_squares(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for ((&xi, &yi), &wi) in x.iter().zip(y).zip(w) {
        let (dx, dy) = (xi - mx, yi - my);
        sxx += wi * dx * dx;
        sxy += wi * dx * dy;
        syy += wi * dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 =
            x.iter().zip(y).zip(w).map(|((&xi, &yi), &wi)| wi * (yi - intercept - slope * xi).powi(2)).sum();
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    (slope, intercept, r2)
}

/// Ordinary least squares of `ln cv_peak_mean` on `ln p`.
pub fn fit_power_law(points: &[ScalingPoint]) -> Result<ScalingFit> {
    check_points(points)?;
    let x: Vec<f64> = points.iter().map(|pt| (pt.p as f64).ln()).collect();
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::invalid("all points share one modulus"));
    }
    let y: Vec<f64> = points.iter().map(|pt| pt.cv_peak_mean.ln()).collect();
    let (a, b, r2) = least_squares(&x, &y, &vec![1.0; x.len()]);
    Ok(ScalingFit { exponent_a: a, intercept: b, r_squared: r2, weighted: false, points: points.to_vec() })
}

/// Least squares weighted by the inverse variance of `ln cv_peak_mean`,
/// estimated as `(std/mean)²/n_seeds`. Every point needs a positive spread.
pub fn fit_power_law_weighted(points: &[ScalingPoint]) -> Result<ScalingFit> {
    check_points(points)?;
    let mut w = Vec::with_capacity(points.len());
    for pt in points {
        if !(pt.cv_peak_std > 0.0) || pt.n_seeds == 0 {
            return Err(Error::invalid(format!("weighted fit needs a positive spread at every point (p = {})", pt.p)));
        }
        let rel = pt.cv_peak_std / pt.cv_peak_mean;
        w.push(pt.n_seeds as f64 / (rel * rel));
    }
    let x: Vec<f64> = points.iter().map(|pt| (pt.p as f64).ln()).collect();
    if x.iter().all(|&v| v == x[0]) {
        return Err(Error::invalid("all points share one modulus"));
    }
    let y: Vec<f64> = points.iter().map(|pt| pt.cv_peak_mean.ln()).collect();
    let (a, b, r2) = least_squares(&x, &y, &w);
    Ok(ScalingFit { exponent_a: a, intercept: b, r_squared: r2, weighted: true, points: points.to_vec() })
}

/// Points aggregated from run directories plus per-directory problems that
/// did not prevent building the table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingTable {
    pub points: Vec<ScalingPoint>,
    pub warnings: Vec<String>,
}

/// Reads the summary of every run directory, groups by modulus and
/// aggregates each group over its seeds. Unreadable summaries and groups with
/// a single seed become warnings; a seed appearing twice for one modulus is
/// an error.
pub fn build_scaling_table(run_dirs: &[PathBuf]) -> Result<ScalingTable> {
    if run_dirs.is_empty() {
        return Err(Error::invalid("no run directories given"));
    }
    let mut warnings = Vec::new();
    let mut groups: BTreeMap<u64, Vec<(PathBuf, RunSummary)>> = BTreeMap::new();
    for dir in run_dirs {
        match read_summary(&dir.join(SUMMARY_FILE)) {
            Ok(s) => groups.entry(s.p).or_default().push((dir.clone(), s)),
            Err(e) => warnings.push(format!("{}: {e}", dir.display())),
        }
    }
    let mut points = Vec::new();
    for (p, runs) in groups {
        let mut seen: BTreeMap<u64, &Path> = BTreeMap::new();
        for (dir, s) in &runs {
            if let Some(prev) = seen.insert(s.seed, dir) {
                return Err(Error::invalid(format!(
                    "seed {} for p = {p} appears in both {} and {}",
                    s.seed,
                    prev.display(),
                    dir.display()
                )));
            }
        }
        let summaries: Vec<RunSummary> = runs.into_iter().map(|(_, s)| s).collect();
        match aggregate_seeds(&summaries) {
            Ok(agg) => points.push(ScalingPoint {
                p,
                cv_peak_mean: agg.cv_peak_mean,
                cv_peak_std: agg.cv_peak_std,
                n_seeds: agg.n,
            }),
            Err(e) => warnings.push(format!("p = {p}: {e}")),
        }
    }
    if points.is_empty() {
        return Err(Error::invalid(format!("no valid summaries found ({} problems)", warnings.len())));
    }
    Ok(ScalingTable { points, warnings })
}

pub fn write_scaling_table_csv(points: &[ScalingPoint], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "{SCALING_SCHEMA}").map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["p", "cv_peak_mean", "cv_peak_std", "n_seeds"])?;
    for pt in points {
        w.write_record([
            pt.p.to_string(),
            pt.cv_peak_mean.to_string(),
            pt.cv_peak_std.to_string(),
            pt.n_seeds.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_scaling_table_csv(path: &Path) -> Result<Vec<ScalingPoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
    if first.trim_end() != SCALING_SCHEMA {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            expected: SCALING_SCHEMA.into(),
            found: first.trim_end().into(),
        });
    }
    csv::Reader::from_reader(rest.as_bytes()).deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Structured fit summary written next to the table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub exponent_a: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub weighted: bool,
    pub n_points: usize,
    pub moduli: Vec<u64>,
}

impl From<&ScalingFit> for FitReport {
    fn from(f: &ScalingFit) -> Self {
        Self {
            exponent_a: f.exponent_a,
            intercept: f.intercept,
            r_squared: f.r_squared,
            weighted: f.weighted,
            n_points: f.points.len(),
            moduli: f.points.iter().map(|p| p.p).collect(),
        }
    }
}

pub fn write_fit_json(fit: &ScalingFit, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&FitReport::from(fit))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted(a: f64, c: f64, ps: &[u64]) -> Vec<ScalingPoint> {
        ps.iter()
            .map(|&p| ScalingPoint { p, cv_peak_mean: c * (p as f64).powf(a), cv_peak_std: 0.1, n_seeds: 5 })
            .collect()
    }

    #[test]
    fn recovers_square_root() {
        let fit = fit_power_law(&planted(0.5, 2.0, &DEFAULT_MODULI)).unwrap();
        assert!((fit.exponent_a - 0.5).abs() < 1e-9);
        assert!((fit.intercept - 2f64.ln()).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-9);
    }

    #[test]
    fn flat_series() {
        let fit = fit_power_law(&planted(0.0, 3.0, &DEFAULT_MODULI)).unwrap();
        assert_eq!(fit.exponent_a, 0.0);
        assert_eq!(fit.r_squared, 1.0);
    }

    #[test]
    fn preconditions() {
        assert!(fit_power_law(&planted(1.0, 1.0, &[19, 23])).is_err());
        let mut pts = planted(1.0, 1.0, &[19, 23, 29]);
        pts[1].cv_peak_mean = 0.0;
        assert!(fit_power_law(&pts).is_err());
        let mut pts = planted(1.0, 1.0, &[19, 23, 29]);
        pts[0].cv_peak_std = 0.0;
        assert!(fit_power_law_weighted(&pts).is_err());
    }

    #[test]
    fn weighted_fit_recovers_noiseless_exponent() {
        let mut pts = planted(-0.7, 1.5, &DEFAULT_MODULI);
        for (i, p) in pts.iter_mut().enumerate() {
            p.cv_peak_std = 0.01 * (i + 1) as f64;
        }
        let fit = fit_power_law_weighted(&pts).unwrap();
        assert!(fit.weighted);
        assert!((fit.exponent_a + 0.7).abs() < 1e-9);
    }

    #[test]
    fn table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scaling_table.csv");
        let pts = planted(0.3, 1.0, &[19, 23, 37]);
        write_scaling_table_csv(&pts, &path).unwrap();
        assert_eq!(read_scaling_table_csv(&path).unwrap(), pts);
    }
}
