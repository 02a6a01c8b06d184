//! Path quality measures and the aggregate report over many endpoint pairs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

#[allow(unused_imports)] // std, when linked, provides these as inherent methods
use num_traits::Float;

use crate::density::MixtureDensity;
use crate::error::{Error, Result};
use crate::geodesic::GeodesicPath;
use crate::stats::{mean, std_dev};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AccumulatedProbability {
    /// `Σₜ p(xₜ)` over all `T` grid points.
    pub raw: f64,
    /// Mean of `p(xₜ)` over the grid divided by the density's peak value, in `[0, 1]`.
    pub normalized: f64,
}

/// Density accumulated along `path`. `peak` is the highest value of the
/// density (see [`MixtureDensity::peak_density`]).
pub fn accumulated_probability(path: &GeodesicPath, density: &MixtureDensity, peak: f64) -> Result<AccumulatedProbability> {
    let mut raw = 0.0;
    for t in 0..path.len() {
        raw += density.density(path.point(t))?;
    }
    Ok(AccumulatedProbability {
        raw,
        normalized: raw / path.len() as f64 / peak,
    })
}

/// `√(meanₜ ‖aₜ − bₜ‖²)` between two paths on the same grid with the same endpoints.
pub fn path_rmse(a: &GeodesicPath, b: &GeodesicPath) -> Result<f64> {
    if a.len() != b.len() || a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            op: "path_rmse",
            left: a.points().shape().to_vec(),
            right: b.points().shape().to_vec(),
        });
    }
    let close = |p: &[f64], q: &[f64]| p.iter().zip(q).all(|(x, y)| (x - y).abs() <= 1e-9 * (1.0 + x.abs()));
    if !close(a.start(), b.start()) || !close(a.end(), b.end()) {
        return Err(Error::invalid(format!(
            "paths compared by RMSE must share endpoints ({:?}→{:?} vs {:?}→{:?})",
            a.start(),
            a.end(),
            b.start(),
            b.end()
        )));
    }
    let ss: f64 = a
        .points()
        .data()
        .iter()
        .zip(b.points().data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Euclidean step lengths along the path.
pub fn step_size_profile(path: &GeodesicPath) -> Vec<f64> {
    path.step_sizes()
}

/// Largest over smallest step; infinite when some step has zero length.
pub fn step_ratio(profile: &[f64]) -> f64 {
    let max = profile.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = profile.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min
}

/// `√(meanₜ minᵢ ‖xₜ − dataᵢ‖²)`: how far a path strays from the dataset.
pub fn nearest_neighbor_rmse(path: &GeodesicPath, data: &Tensor) -> f64 {
    let ss: f64 = (0..path.len())
        .map(|t| {
            (0..data.rows())
                .map(|i| {
                    path.point(t)
                        .iter()
                        .zip(data.row(i))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    (ss / path.len() as f64).sqrt()
}

/// Paths one solver produced under one metric, one slot per endpoint pair.
/// `None` marks a pair the solver failed on.
#[derive(Clone, Debug)]
pub struct EvalEntry {
    pub metric: String,
    pub solver: String,
    /// Name of the entry whose paths serve as the RMSE reference.
    pub baseline: Option<String>,
    pub paths: Vec<Option<GeodesicPath>>,
    /// Metric floor hits recorded while producing the paths.
    pub clamps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub metric: String,
    pub solver: String,
    pub n_pairs: usize,
    pub acc_prob_mean: f64,
    pub acc_prob_2sig: f64,
    pub acc_prob_raw_mean: f64,
    pub rmse_mean: Option<f64>,
    pub rmse_2sig: Option<f64>,
    pub skipped: usize,
    pub clamps: usize,
}

/// One row per metric and solver for a single pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    pub metric: String,
    pub solver: String,
    pub pair_id: usize,
    pub acc_prob_raw: f64,
    pub acc_prob_normalized: f64,
    pub rmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub n_sets: usize,
    pub rows: Vec<EvalRow>,
    pub records: Vec<PathRecord>,
}

pub const REPORT_HEADER: &str = "dataset,metric,solver,n_pairs,acc_prob_mean,acc_prob_2sig,rmse_mean,rmse_2sig,skipped";

/// Means over `n_sets` contiguous blocks of pairs, then the mean and twice
/// the sample standard deviation of the block means.
fn set_stats(values: &[Option<f64>], n_sets: usize) -> (f64, f64) {
    let size = values.len().div_ceil(n_sets);
    let means: Vec<f64> = values
        .chunks(size.max(1))
        .map(|c| {
            let v: Vec<f64> = c.iter().flatten().copied().collect();
            mean(&v)
        })
        .filter(|m| m.is_finite())
        .collect();
    (mean(&means), 2.0 * std_dev(&means))
}

/// Scores every entry: density accumulated along its paths and RMSE against
/// its baseline entry, aggregated with a 2σ spread over `n_sets` disjoint sets
/// of pairs. Failed pairs are counted in `skipped`.
pub fn run_eval_suite(dataset: &str, entries: &[EvalEntry], density: &MixtureDensity, n_sets: usize) -> Result<EvalReport> {
    if entries.is_empty() {
        return Err(Error::EmptyReport);
    }
    if n_sets < 2 {
        return Err(Error::invalid("the 2σ spread needs at least two sets of pairs"));
    }
    let n_pairs = entries[0].paths.len();
    if entries.iter().any(|e| e.paths.len() != n_pairs) {
        return Err(Error::invalid("every entry must hold one slot per endpoint pair"));
    }
    if n_pairs < n_sets {
        return Err(Error::invalid(format!("{n_pairs} pairs cannot fill {n_sets} sets")));
    }
    let peak = density.peak_density();
    let mut rows = Vec::with_capacity(entries.len());
    let mut records = Vec::new();
    for entry in entries {
        let base = match &entry.baseline {
            Some(name) => Some(
                entries
                    .iter()
                    .find(|e| &e.metric == name || format!("{}/{}", e.metric, e.solver) == *name)
                    .ok_or_else(|| Error::invalid(format!("unknown baseline {name} for {}", entry.metric)))?,
            ),
            None => None,
        };
        let mut acc = vec![None; n_pairs];
        let mut raw = Vec::new();
        let mut rmse = vec![None; n_pairs];
        let mut skipped = 0;
        for (i, path) in entry.paths.iter().enumerate() {
            let Some(path) = path else {
                skipped += 1;
                continue;
            };
            let a = accumulated_probability(path, density, peak)?;
            acc[i] = Some(a.normalized);
            raw.push(a.raw);
            if let Some(Some(bp)) = base.map(|b| &b.paths[i]) {
                rmse[i] = Some(path_rmse(path, bp)?);
            }
            records.push(PathRecord {
                metric: entry.metric.clone(),
                solver: entry.solver.clone(),
                pair_id: i,
                acc_prob_raw: a.raw,
                acc_prob_normalized: a.normalized,
                rmse: rmse[i],
            });
        }
        let (acc_mean, acc_2sig) = set_stats(&acc, n_sets);
        let (rmse_mean, rmse_2sig) = if base.is_some() {
            let (m, s) = set_stats(&rmse, n_sets);
            (Some(m), Some(s))
        } else {
            (None, None)
        };
        rows.push(EvalRow {
            metric: entry.metric.clone(),
            solver: entry.solver.clone(),
            n_pairs,
            acc_prob_mean: acc_mean,
            acc_prob_2sig: acc_2sig,
            acc_prob_raw_mean: mean(&raw),
            rmse_mean,
            rmse_2sig,
            skipped,
            clamps: entry.clamps,
        });
    }
    Ok(EvalReport {
        dataset: dataset.into(),
        n_sets,
        rows,
        records,
    })
}

impl EvalReport {
    pub fn row(&self, metric: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }

    /// CSV text with [`REPORT_HEADER`]; absent RMSE values are left empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.6},{},{},{}",
                self.dataset,
                r.metric,
                r.solver,
                r.n_pairs,
                r.acc_prob_mean,
                r.acc_prob_2sig,
                opt(r.rmse_mean),
                opt(r.rmse_2sig),
                r.skipped
            );
        }
        s
    }

    /// Aligned text table: accumulated probability and RMSE as `mean ± 2σ`.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{} ({} pairs, 2σ over {} sets)",
            self.dataset,
            self.rows.first().map_or(0, |r| r.n_pairs),
            self.n_sets
        );
        let _ = writeln!(
            s,
            "{:<12} {:<12} {:>18} {:>12} {:>18} {:>8} {:>10}",
            "metric", "solver", "p(γ) normalized", "p(γ) raw", "RMSE", "skipped", "clamps"
        );
        for r in &self.rows {
            let rmse = match (r.rmse_mean, r.rmse_2sig) {
                (Some(m), Some(e)) => format!("{m:.3} ± {e:.3}"),
                _ => String::from("-"),
            };
            let _ = writeln!(
                s,
                "{:<12} {:<12} {:>18} {:>12.4} {:>18} {:>8} {:>10}",
                r.metric,
                r.solver,
                format!("{:.3} ± {:.3}", r.acc_prob_mean, r.acc_prob_2sig),
                r.acc_prob_raw_mean,
                rmse,
                r.skipped,
                r.clamps
            );
        }
        s
    }
}
