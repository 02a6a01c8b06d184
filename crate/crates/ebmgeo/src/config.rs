//! Run configuration, read from a TOML file. Every section and field is
//! optional; omitted values take the defaults below.
//!
//! ```toml
//! seed = 0
//! workers = 1
//! output_dir = "runs/ucg"
//!
//! [dataset]
//! variant = { kind = "ucg" }     # or "wcg", or { kind = "custom", centers = [[0.0, 0.0]], weights = [1.0] }
//! components = 200
//! radius = 8.0
//! n_samples = 2000
//!
//! [ebm]
//! steps = 20000
//! adam = { lr = 1e-4 }
//!
//! [langevin]
//! steps = 100
//!
//! [metrics]
//! land_sigma = 1.0
//! rbf_centers = 30
//!
//! [geodesic]
//! train = ["g_e_theta", "g_invp_theta", "land", "rbf"]
//! solve = ["g_e_oracle", "g_invp_oracle"]
//!
//! [interpolant]
//! steps = 10000
//!
//! [eval]
//! pairs = 1000
//! sets = 5
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use ebmgeo_core::density::DatasetSpec;
use ebmgeo_core::ebm::{EbmTrainConfig, LangevinConfig};
use ebmgeo_core::geodesic::{InterpolantTrainConfig, ShootingConfig, WaypointConfig};
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// The metrics a geodesic can be computed under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// `α·E_θ + β` from the trained energy model.
    GETheta,
    /// `(α·exp(−E_θ) + β)⁻¹` from the trained energy model.
    GInvpTheta,
    /// `α·(−log p) + β` from the true density.
    GEOracle,
    /// `(α·p + β)⁻¹` from the true density.
    GInvpOracle,
    Land,
    Rbf,
}

impl MetricKind {
    pub const ALL: [MetricKind; 6] = [
        MetricKind::GETheta,
        MetricKind::GInvpTheta,
        MetricKind::GEOracle,
        MetricKind::GInvpOracle,
        MetricKind::Land,
        MetricKind::Rbf,
    ];

    /// File-name form.
    pub fn id(self) -> &'static str {
        match self {
            MetricKind::GETheta => "g_e_theta",
            MetricKind::GInvpTheta => "g_invp_theta",
            MetricKind::GEOracle => "g_e_oracle",
            MetricKind::GInvpOracle => "g_invp_oracle",
            MetricKind::Land => "land",
            MetricKind::Rbf => "rbf",
        }
    }

    /// Display form used in reports and figures.
    pub fn label(self) -> &'static str {
        match self {
            MetricKind::GETheta => "G_Eθ",
            MetricKind::GInvpTheta => "G_1/pθ",
            MetricKind::GEOracle => "G_E_M",
            MetricKind::GInvpOracle => "G_1/p_M",
            MetricKind::Land => "LAND",
            MetricKind::Rbf => "RBF",
        }
    }

    pub fn needs_energy_model(self) -> bool {
        matches!(self, MetricKind::GETheta | MetricKind::GInvpTheta)
    }

    /// The oracle whose paths an entry under this metric is compared to.
    pub fn reference(self) -> Option<MetricKind> {
        match self {
            MetricKind::GETheta => Some(MetricKind::GEOracle),
            MetricKind::GInvpTheta | MetricKind::Land | MetricKind::Rbf => Some(MetricKind::GInvpOracle),
            MetricKind::GEOracle | MetricKind::GInvpOracle => None,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// LAND kernel bandwidth σ.
    pub land_sigma: f64,
    /// Number of RBF centroids K.
    pub rbf_centers: usize,
    pub rbf_kappa: f64,
    /// Calibration targets: metric mean on data points and on midpoints.
    pub g_min: f64,
    pub g_max: f64,
    /// Endpoint pairs drawn to build the calibration sets.
    pub calibration_pairs: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            land_sigma: 1.0,
            rbf_centers: 30,
            rbf_kappa: 1.0,
            g_min: 1.0,
            g_max: 1000.0,
            calibration_pairs: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeodesicConfig {
    /// Metrics that get an amortized interpolant (`geodesic train`).
    pub train: Vec<MetricKind>,
    /// Metrics solved pair by pair with the waypoint optimizer (`geodesic solve`).
    pub solve: Vec<MetricKind>,
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        GeodesicConfig {
            train: vec![MetricKind::GETheta, MetricKind::GInvpTheta, MetricKind::Land, MetricKind::Rbf],
            solve: vec![MetricKind::GEOracle, MetricKind::GInvpOracle],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Endpoint pairs drawn from the dataset.
    pub pairs: usize,
    /// Disjoint sets the pairs are split into for the 2σ spread.
    pub sets: usize,
    /// Grid points per path.
    pub t_steps: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            pairs: 1000,
            sets: 5,
            t_steps: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotConfig {
    /// Background grid resolution per axis.
    pub grid: usize,
    pub bands: usize,
    /// Geodesics drawn per metric panel.
    pub paths: usize,
    /// Pair whose step-size profiles are plotted.
    pub step_pair: usize,
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig {
            grid: 200,
            bands: 12,
            paths: 8,
            step_pair: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage derives its own streams from it.
    pub seed: u64,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub dataset: DatasetSpec,
    pub ebm: EbmTrainConfig,
    pub langevin: LangevinConfig,
    pub metrics: MetricsConfig,
    pub geodesic: GeodesicConfig,
    pub interpolant: InterpolantTrainConfig,
    pub waypoint: WaypointConfig,
    pub shooting: ShootingConfig,
    pub eval: EvalConfig,
    pub plot: PlotConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            output_dir: PathBuf::from("runs/default"),
            dataset: DatasetSpec::default(),
            ebm: EbmTrainConfig::default(),
            langevin: LangevinConfig::default(),
            metrics: MetricsConfig::default(),
            geodesic: GeodesicConfig::default(),
            interpolant: InterpolantTrainConfig {
                steps: 10_000,
                ..Default::default()
            },
            waypoint: WaypointConfig::default(),
            shooting: ShootingConfig::default(),
            eval: EvalConfig::default(),
            plot: PlotConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates; errors name the offending field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            PipelineError::config(if field == "." { String::from("<root>") } else { field }, e.into_inner().message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, field: &str, msg: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(PipelineError::config(field, msg))
            }
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        check(self.workers >= 1, "workers", "must be at least 1")?;
        check(self.dataset.components >= 1, "dataset.components", "must be at least 1")?;
        check(positive(self.dataset.radius), "dataset.radius", "must be positive")?;
        check(self.dataset.n_samples >= 2, "dataset.n_samples", "must be at least 2")?;

        check(self.ebm.steps >= 1, "ebm.steps", "must be at least 1")?;
        check(self.ebm.batch_size >= 1, "ebm.batch_size", "must be at least 1")?;
        check(positive(self.ebm.adam.lr), "ebm.adam.lr", "must be positive")?;
        check(self.ebm.buffer_capacity >= 1, "ebm.buffer_capacity", "must be at least 1")?;
        check(self.langevin.steps >= 1, "langevin.steps", "must be at least 1")?;
        check(positive(self.langevin.step_size), "langevin.step_size", "must be positive")?;
        check(self.langevin.noise >= 0.0, "langevin.noise", "must be non-negative")?;
        check((0.0..=1.0).contains(&self.langevin.buffer_prob), "langevin.buffer_prob", "must lie in [0, 1]")?;

        let m = &self.metrics;
        check(positive(m.land_sigma), "metrics.land_sigma", "must be positive")?;
        check(m.rbf_centers >= 1, "metrics.rbf_centers", "must be at least 1")?;
        check(m.rbf_centers <= self.dataset.n_samples, "metrics.rbf_centers", "exceeds dataset.n_samples")?;
        check(positive(m.rbf_kappa), "metrics.rbf_kappa", "must be positive")?;
        check(positive(m.g_min), "metrics.g_min", "must be positive")?;
        check(m.g_max > m.g_min && m.g_max.is_finite(), "metrics.g_max", "must exceed metrics.g_min")?;
        check(m.calibration_pairs >= 1, "metrics.calibration_pairs", "must be at least 1")?;

        check(self.interpolant.t_steps >= 2, "interpolant.t_steps", "must be at least 2")?;
        check(self.interpolant.batch_pairs >= 1, "interpolant.batch_pairs", "must be at least 1")?;
        check(positive(self.interpolant.adam.lr), "interpolant.adam.lr", "must be positive")?;
        check(self.waypoint.t_steps >= 2, "waypoint.t_steps", "must be at least 2")?;
        check(self.shooting.t_steps >= 2, "shooting.t_steps", "must be at least 2")?;
        check(self.shooting.restarts >= 1, "shooting.restarts", "must be at least 1")?;

        check(self.eval.sets >= 2, "eval.sets", "the 2σ spread needs at least two sets")?;
        check(self.eval.pairs >= self.eval.sets, "eval.pairs", "must be at least eval.sets")?;
        check(self.eval.t_steps >= 2, "eval.t_steps", "must be at least 2")?;
        check(self.waypoint.t_steps == self.eval.t_steps, "waypoint.t_steps", "must equal eval.t_steps so paths share one grid")?;
        check(self.shooting.t_steps == self.eval.t_steps, "shooting.t_steps", "must equal eval.t_steps so paths share one grid")?;
        check(self.plot.grid >= 2, "plot.grid", "must be at least 2")?;
        check(self.plot.bands >= 1, "plot.bands", "must be at least 1")?;
        check(self.plot.step_pair < self.eval.pairs, "plot.step_pair", "must index one of the eval pairs")?;

        let mut all: Vec<_> = self.geodesic.train.iter().chain(&self.geodesic.solve).collect();
        check(!all.is_empty(), "geodesic", "no metrics selected")?;
        all.sort();
        let n = all.len();
        all.dedup();
        check(all.len() == n, "geodesic", "a metric appears more than once across train and solve")?;
        Ok(())
    }

    /// Seed for one named stage, so stages stay independent of each other's draws.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage.bytes().fold(0u64, |h, b| h.wrapping_mul(0x100_0000_01b3) ^ b as u64))
    }
}

/// SplitMix64 of `base ^ salt`.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = (base ^ salt).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
