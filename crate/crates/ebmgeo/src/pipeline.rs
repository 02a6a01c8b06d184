//! Pipeline stages. Each stage reads its inputs from the output root, writes
//! its artifacts there and records them in the manifest.
//!
//! ```text
//! dataset gen ─┬─ ebm train ───────┐
//!              ├─ metric fit ──────┼─ metric calibrate ─┬─ geodesic train ─┐
//!              │                   │                    └─ geodesic solve ─┼─ eval run ─ plot fig1|fig2
//!              └─ geodesic shoot   │                                       │
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ebmgeo_core::density::{DatasetVariant, MixtureDensity};
use ebmgeo_core::ebm::train_ebm;
use ebmgeo_core::eval::{run_eval_suite, step_ratio, step_size_profile, EvalEntry, EvalReport};
use ebmgeo_core::geodesic::{
    interpolant_paths, optimize_waypoints, shoot_geodesic, train_interpolant, EndpointSampler, GeodesicPath,
};
use ebmgeo_core::metric::{fit_rbf, CalibrationSets, LandModel, MetricField, MetricForm, RawField, RbfModel};
use ebmgeo_core::nets::{EnergyModel, InterpolantNet};
use ebmgeo_core::stats::coeff_of_variation;
use ebmgeo_core::Tensor;
use log::{info, warn};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{derive_seed, MetricKind, RunConfig};
use crate::csvio;
use crate::error::{PipelineError, Result};
use crate::manifest::{hash_file, sha256_hex, ArtifactRecord, Manifest, TOOL_VERSION};
use crate::pool::map_ordered;
use crate::svg;

pub const DATA: &str = "dataset/data.csv";
pub const PAIRS: &str = "dataset/pairs.csv";
pub const EBM_CKPT: &str = "ebm/energy.ckpt";
pub const EBM_LOG: &str = "ebm/train_log.csv";
pub const RBF_MODEL: &str = "metrics/rbf.json";
pub const LAND_MODEL: &str = "metrics/land.json";
pub const CALIBRATION: &str = "metrics/calibration.json";
pub const CAL_ON: &str = "metrics/calibration_on.csv";
pub const CAL_OFF: &str = "metrics/calibration_off.csv";
pub const SHOOTING_PATHS: &str = "paths/shooting.csv";
pub const SHOOTING_SUMMARY: &str = "paths/shooting_summary.csv";
pub const LINEAR_PATHS: &str = "eval/paths/linear.csv";
pub const REPORT: &str = "eval/report.csv";
pub const REPORT_TABLE: &str = "eval/report.txt";
pub const RECORDS: &str = "eval/records.csv";
pub const STEP_SIZES: &str = "eval/step_sizes.csv";
pub const STEP_RATIOS: &str = "eval/step_ratios.csv";
pub const FIG1: &str = "figures/fig1.svg";
pub const FIG2: &str = "figures/fig2.svg";

pub const CMD_DATASET: &str = "dataset gen";
pub const CMD_EBM: &str = "ebm train";
pub const CMD_FIT: &str = "metric fit";
pub const CMD_CALIBRATE: &str = "metric calibrate";
pub const CMD_TRAIN: &str = "geodesic train";
pub const CMD_SOLVE: &str = "geodesic solve";
pub const CMD_SHOOT: &str = "geodesic shoot";
pub const CMD_EVAL: &str = "eval run";
pub const CMD_FIG1: &str = "plot fig1";
pub const CMD_FIG2: &str = "plot fig2";

pub fn interpolant_ckpt(kind: MetricKind) -> String {
    format!("geodesics/{}.ckpt", kind.id())
}

pub fn interpolant_log(kind: MetricKind) -> String {
    format!("geodesics/{}_loss.csv", kind.id())
}

pub fn waypoint_paths(kind: MetricKind) -> String {
    format!("paths/{}_waypoint.csv", kind.id())
}

pub fn waypoint_summary(kind: MetricKind) -> String {
    format!("paths/{}_waypoint_summary.csv", kind.id())
}

pub fn eval_paths(kind: MetricKind) -> String {
    format!("eval/paths/{}_interpolant.csv", kind.id())
}

/// A configured run rooted at an output directory.
#[derive(Clone, Debug)]
pub struct Run {
    pub root: PathBuf,
    pub cfg: RunConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RbfFile {
    centroids: Vec<Vec<f64>>,
    bandwidths: Vec<f64>,
    weights: Vec<f64>,
    kappa: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LandFile {
    sigma: f64,
    /// The reference set is the dataset itself; its hash pins which one.
    data_sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CalibrationEntry {
    form: MetricForm,
    alpha: f64,
    beta: f64,
    floor: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CalibrationFile {
    g_min: f64,
    g_max: f64,
    metrics: BTreeMap<MetricKind, CalibrationEntry>,
}

/// Inputs read and outputs written by one command.
struct Stage<'a> {
    run: &'a Run,
    command: &'static str,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

impl<'a> Stage<'a> {
    fn new(run: &'a Run, command: &'static str) -> Self {
        info!("{command}");
        Stage {
            run,
            command,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// Resolves an upstream artifact, failing with the command that makes it.
    fn input(&mut self, rel: &str, producer: &'static str) -> Result<PathBuf> {
        let path = self.run.root.join(rel);
        if !path.is_file() {
            return Err(PipelineError::MissingArtifact {
                path,
                producer: cli_name(producer),
            });
        }
        self.inputs.insert(rel.to_string(), hash_file(&path)?);
        Ok(path)
    }

    fn output(&mut self, rel: &str) -> Result<PathBuf> {
        let path = self.run.root.join(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
        self.outputs.push(rel.to_string());
        Ok(path)
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.output(rel)?;
        std::fs::write(&path, bytes).map_err(|e| PipelineError::io(&path, e))
    }

    fn finish(self) -> Result<()> {
        let mut manifest = Manifest::load(&self.run.root)?;
        let config = self.run.config_snapshot();
        for rel in &self.outputs {
            manifest.record(
                rel,
                ArtifactRecord {
                    command: self.command.to_string(),
                    sha256: hash_file(&self.run.root.join(rel))?,
                    inputs: self.inputs.clone(),
                    config: config.clone(),
                    tool_version: TOOL_VERSION.to_string(),
                },
            );
        }
        manifest.save(&self.run.root)
    }
}

fn cli_name(command: &'static str) -> &'static str {
    match command {
        CMD_DATASET => "ebmgeo dataset gen",
        CMD_EBM => "ebmgeo ebm train",
        CMD_FIT => "ebmgeo metric fit",
        CMD_CALIBRATE => "ebmgeo metric calibrate",
        CMD_TRAIN => "ebmgeo geodesic train",
        CMD_SOLVE => "ebmgeo geodesic solve",
        CMD_SHOOT => "ebmgeo geodesic shoot",
        CMD_EVAL => "ebmgeo eval run",
        CMD_FIG1 => "ebmgeo plot fig1",
        _ => "ebmgeo plot fig2",
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::format(path, e))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("artifact serializes");
    s.push('\n');
    s.into_bytes()
}

impl Run {
    pub fn new(cfg: RunConfig, root: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Run { root: root.into(), cfg })
    }

    /// The configuration with the fields that cannot change any output removed.
    fn config_snapshot(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(&self.cfg).expect("config serializes");
        if let Some(map) = v.as_object_mut() {
            map.remove("output_dir");
            map.remove("workers");
        }
        v
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn dataset_name(&self) -> &'static str {
        match self.cfg.dataset.variant {
            DatasetVariant::Ucg => "ucg",
            DatasetVariant::Wcg => "wcg",
            DatasetVariant::Custom { .. } => "custom",
        }
    }

    pub fn density(&self) -> Result<MixtureDensity> {
        self.cfg
            .dataset
            .density()
            .map_err(|e| PipelineError::config("dataset", e.to_string()))
    }

    fn metric_kinds(&self) -> Vec<MetricKind> {
        let mut all: Vec<MetricKind> = self.cfg.geodesic.train.iter().chain(&self.cfg.geodesic.solve).copied().collect();
        all.sort();
        all
    }

    /// Builds the raw (uncalibrated) field for `kind`, recording what it read.
    fn raw_field(&self, stage: &mut Stage, kind: MetricKind) -> Result<RawField> {
        Ok(match kind {
            MetricKind::GETheta => RawField::Energy(self.load_energy(stage)?),
            MetricKind::GInvpTheta => RawField::EnergyExp(self.load_energy(stage)?),
            MetricKind::GEOracle => RawField::NegLogDensity(self.density()?),
            MetricKind::GInvpOracle => RawField::Density(self.density()?),
            MetricKind::Land => {
                let file: LandFile = read_json(&stage.input(LAND_MODEL, CMD_FIT)?)?;
                let data_path = stage.input(DATA, CMD_DATASET)?;
                if hash_file(&data_path)? != file.data_sha256 {
                    return Err(PipelineError::format(
                        data_path,
                        format!("dataset changed since `{}`; rerun it", cli_name(CMD_FIT)),
                    ));
                }
                RawField::Land(LandModel::new(csvio::read_points(&data_path)?, file.sigma)?)
            }
            MetricKind::Rbf => {
                let path = stage.input(RBF_MODEL, CMD_FIT)?;
                let file: RbfFile = read_json(&path)?;
                let centroids = Tensor::from_rows(&file.centroids).map_err(|e| PipelineError::format(&path, e))?;
                RawField::Rbf(RbfModel {
                    centroids,
                    bandwidths: file.bandwidths,
                    weights: file.weights,
                    kappa: file.kappa,
                })
            }
        })
    }

    fn load_energy(&self, stage: &mut Stage) -> Result<EnergyModel> {
        let ck = Checkpoint::load(&stage.input(EBM_CKPT, CMD_EBM)?)?;
        let mut model = EnergyModel::zeroed(self.cfg.dataset.density().map(|d| d.dim()).unwrap_or(2));
        ck.restore_into(&mut model)?;
        Ok(model)
    }

    /// The calibrated metric for `kind`, read back from the run's artifacts.
    pub fn calibrated_metric(&self, kind: MetricKind) -> Result<MetricField> {
        let mut st = Stage {
            run: self,
            command: "inspect",
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        };
        self.metric(&mut st, kind)
    }

    /// The calibrated metric for `kind` as fixed by `metric calibrate`.
    fn metric(&self, stage: &mut Stage, kind: MetricKind) -> Result<MetricField> {
        let path = stage.input(CALIBRATION, CMD_CALIBRATE)?;
        let file: CalibrationFile = read_json(&path)?;
        let entry = file
            .metrics
            .get(&kind)
            .ok_or_else(|| PipelineError::format(&path, format!("no calibration for {kind}; rerun `{}`", cli_name(CMD_CALIBRATE))))?;
        let raw = self.raw_field(stage, kind)?;
        Ok(MetricField::new(kind.label(), raw, entry.alpha, entry.beta).with_floor(entry.floor))
    }

    pub fn dataset_gen(&self) -> Result<()> {
        let mut st = Stage::new(self, CMD_DATASET);
        let data = self
            .cfg
            .dataset
            .sample()
            .map_err(|e| PipelineError::config("dataset", e.to_string()))?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.cfg.stage_seed("pairs"));
        let n = data.rows();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for _ in 0..self.cfg.eval.pairs {
            let i = rng.random_range(0..n);
            let j = (i + rng.random_range(1..n)) % n;
            a.push(i);
            b.push(j);
        }
        csvio::write_points(&st.output(DATA)?, &data)?;
        csvio::write_pairs(&st.output(PAIRS)?, &data.select_rows(&a), &data.select_rows(&b))?;
        st.finish()
    }

    pub fn ebm_train(&self) -> Result<()> {
        let mut st = Stage::new(self, CMD_EBM);
        let data = csvio::read_points(&st.input(DATA, CMD_DATASET)?)?;
        let (model, log) = train_ebm(&data, &self.cfg.ebm, &self.cfg.langevin)?;
        let mut meta = BTreeMap::new();
        meta.insert("steps".to_string(), self.cfg.ebm.steps.to_string());
        let tail: Vec<String> = log.iter().rev().take(10).rev().map(|r| r.cd_loss.to_string()).collect();
        meta.insert("cd_loss_tail".to_string(), tail.join(" "));
        Checkpoint::from_model(&model, self.cfg.ebm.seed, meta).save(&st.output(EBM_CKPT)?)?;
        csvio::write_ebm_log(&st.output(EBM_LOG)?, &log)?;
        st.finish()
    }

    pub fn metric_fit(&self) -> Result<()> {
        let mut st = Stage::new(self, CMD_FIT);
        let data_path = st.input(DATA, CMD_DATASET)?;
        let data = csvio::read_points(&data_path)?;
        let m = &self.cfg.metrics;
        let rbf = fit_rbf(&data, m.rbf_centers, m.rbf_kappa, self.cfg.stage_seed("rbf"))?;
        let file = RbfFile {
            centroids: (0..rbf.centroids.rows()).map(|i| rbf.centroids.row(i).to_vec()).collect(),
            bandwidths: rbf.bandwidths,
            weights: rbf.weights,
            kappa: rbf.kappa,
        };
        st.write(RBF_MODEL, &json_bytes(&file))?;
        let land = LandFile {
            sigma: m.land_sigma,
            data_sha256: hash_file(&data_path)?,
        };
        st.write(LAND_MODEL, &json_bytes(&land))?;
        st.finish()
    }

    pub fn metric_calibrate(&self) -> Result<()> {
        let mut st = Stage::new(self, CMD_CALIBRATE);
        let data = csvio::read_points(&st.input(DATA, CMD_DATASET)?)?;
        let m = &self.cfg.metrics;
        let sets = CalibrationSets::from_pairs(&data, m.calibration_pairs, self.cfg.stage_seed("calibration"), m.g_min, m.g_max)?;
        let mut metrics = BTreeMap::new();
        for kind in self.metric_kinds() {
            let raw = self.raw_field(&mut st, kind)?;
            let field = MetricField::calibrated(kind.label(), raw, &sets)?;
            info!("{kind}: α = {:.6e}, β = {:.6e}, floor = {:.3e}", field.alpha, field.beta, field.floor);
            metrics.insert(
                kind,
                CalibrationEntry {
                    form: field.form(),
                    alpha: field.alpha,
                    beta: field.beta,
                    floor: field.floor,
                },
            );
        }
        let file = CalibrationFile {
            g_min: m.g_min,
            g_max: m.g_max,
            metrics,
        };
        st.write(CALIBRATION, &json_bytes(&file))?;
        csvio::write_points(&st.output(CAL_ON)?, &sets.on_manifold)?;
        csvio::write_points(&st.output(CAL_OFF)?, &sets.off_manifold)?;
        st.finish()
    }

    /// Trains one interpolant per metric in `geodesic.train`.
    pub fn geodesic_train(&self) -> Result<()> {
        let mut st = Stage::new(self, CMD_TRAIN);
        let data = csvio::read_points(&st.input(DATA, CMD_DATASET)?)?;
        let sampler = EndpointSampler::Pool(data.clone());
        for &kind in &self.cfg.geodesic.train {
            let metric = self.metric(&mut st, kind)?;
            let mut cfg = self.cfg.interpolant.clone();
            cfg.seed = derive_seed(cfg.seed, kind as u64);
            let net = InterpolantNet::new(data.cols(), cfg.seed);
            let (net, losses) = train_interpolant(net, &sampler, &metric, &cfg)?;
            if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
                info!("{kind}: loss {first:.4e} → {last:.4e} over {} steps", losses.len());
            }
            let mut meta = BTreeMap::new();
            meta.insert("metric".to_string(), kind.id().to_string());
            meta.insert("steps".to_string(), cfg.steps.to_string());
            let tail: Vec<String> = losses.iter().rev().take(10).rev().map(f64::to_string).collect();
            meta.insert("loss_tail".to_string(), tail.join(" "));
            Checkpoint::from_model(&net, cfg.seed, meta).save(&st.output(&interpolant_ckpt(kind))?)?;
            csvio::write_loss_log(&st.output(&interpolant_log(kind))?, &losses)?;
        }
        st.finish()
    }

    /// Optimizes waypoints for every eval pair under each metric in `geodesic.solve`.
    pub fn geodesic_solve(&self) -> Result<()> {
        let mut st = Stage::new(self, CMD_SOLVE);
        let (x0, x1) = csvio::read_pairs(&st.input(PAIRS, CMD_DATASET)?)?;
        let idx: Vec<usize> = (0..x0.rows()).collect();
        for &kind in &self.cfg.geodesic.solve {
            let metric = self.metric(&mut st, kind)?;
            let outcomes = map_ordered(self.cfg.workers, &idx, |_, &i| {
                optimize_waypoints(x0.row(i), x1.row(i), &metric, &self.cfg.waypoint)
            });
            let mut paths = Vec::with_capacity(idx.len());
            let mut rows = Vec::with_capacity(idx.len());
            for (i, out) in outcomes.into_iter().enumerate() {
                match out {
                    Ok(o) => {
                        if let Some(w) = &o.warning {
                            warn!("{kind} pair {i}: {w}");
                        }
                        let cv = coeff_of_variation(&o.path.speeds(&metric)?);
                        rows.push(vec![
                            i.to_string(),
                            o.energy.to_string(),
                            o.initial_energy.to_string(),
                            o.iterations.to_string(),
                            o.converged.to_string(),
                            cv.to_string(),
                        ]);
                        paths.push(Some(o.path));
                    }
                    Err(e) => {
                        warn!("{kind} pair {i}: {e}");
                        rows.push(vec![i.to_string(), String::new(), String::new(), String::new(), "false".into(), String::new()]);
                        paths.push(None);
                    }
                }
            }
            csvio::write_paths(&st.output(&waypoint_paths(kind))?, &paths)?;
            csvio::write_rows(
                &st.output(&waypoint_summary(kind))?,
                &["pair_id", "energy", "initial_energy", "iterations", "converged", "speed_cv"],
                rows,
            )?;
        }
        st.finish()
    }

    /// Shoots the geodesic ODE of the uncalibrated `1/p` metric for every eval pair.
    pub fn geodesic_shoot(&self) -> Result<()> {
        let mut st = Stage::new(self, CMD_SHOOT);
        let (x0, x1) = csvio::read_pairs(&st.input(PAIRS, CMD_DATASET)?)?;
        let density = self.density()?;
        let idx: Vec<usize> = (0..x0.rows()).collect();
        let shots = map_ordered(self.cfg.workers, &idx, |_, &i| {
            let mut cfg = self.cfg.shooting.clone();
            cfg.seed = derive_seed(cfg.seed, i as u64);
            shoot_geodesic(x0.row(i), x1.row(i), &density, &cfg)
        });
        let mut paths = Vec::with_capacity(idx.len());
        let mut rows = Vec::with_capacity(idx.len());
        for (i, shot) in shots.into_iter().enumerate() {
            match shot {
                Ok(p) => {
                    rows.push(vec![i.to_string(), "true".into(), String::new()]);
                    paths.push(Some(p));
                }
                Err(e) => {
                    warn!("pair {i}: {e}");
                    rows.push(vec![i.to_string(), "false".into(), e.to_string()]);
                    paths.push(None);
                }
            }
        }
        csvio::write_paths(&st.output(SHOOTING_PATHS)?, &paths)?;
        csvio::write_rows(&st.output(SHOOTING_SUMMARY)?, &["pair_id", "converged", "error"], rows)?;
        st.finish()
    }

    /// Scores every trained and solved metric, plus straight lines, on the eval pairs.
    pub fn eval_run(&self) -> Result<EvalReport> {
        let mut st = Stage::new(self, CMD_EVAL);
        let (x0, x1) = csvio::read_pairs(&st.input(PAIRS, CMD_DATASET)?)?;
        let n = x0.rows();
        let t = self.cfg.eval.t_steps;
        let solved = &self.cfg.geodesic.solve;
        let mut entries = Vec::new();
        let mut written: Vec<(String, Vec<Option<GeodesicPath>>)> = Vec::new();

        for &kind in &self.cfg.geodesic.train {
            let ck = Checkpoint::load(&st.input(&interpolant_ckpt(kind), CMD_TRAIN)?)?;
            let mut net = InterpolantNet::new(x0.cols(), 0);
            ck.restore_into(&mut net)?;
            let paths: Vec<Option<GeodesicPath>> = interpolant_paths(&net, &x0, &x1, t)?.into_iter().map(Some).collect();
            let metric = self.metric(&mut st, kind)?;
            let clamps = floor_hits(&metric, &paths)?;
            let baseline = kind.reference().filter(|r| solved.contains(r)).map(|r| r.label().to_string());
            entries.push(EvalEntry {
                metric: kind.label().into(),
                solver: "interpolant".into(),
                baseline,
                paths: paths.clone(),
                clamps,
            });
            written.push((eval_paths(kind), paths));
        }
        for &kind in solved {
            let paths = csvio::read_paths(&st.input(&waypoint_paths(kind), CMD_SOLVE)?, n)?;
            let metric = self.metric(&mut st, kind)?;
            let clamps = floor_hits(&metric, &paths)?;
            entries.push(EvalEntry {
                metric: kind.label().into(),
                solver: "waypoint".into(),
                baseline: None,
                paths,
                clamps,
            });
        }
        let linear: Vec<Option<GeodesicPath>> = (0..n)
            .map(|i| GeodesicPath::straight(x0.row(i), x1.row(i), t).map(Some))
            .collect::<ebmgeo_core::Result<_>>()?;
        entries.push(EvalEntry {
            metric: "linear".into(),
            solver: "straight".into(),
            baseline: None,
            paths: linear.clone(),
            clamps: 0,
        });
        written.push((LINEAR_PATHS.to_string(), linear));

        let report = run_eval_suite(self.dataset_name(), &entries, &self.density()?, self.cfg.eval.sets)?;

        let pick = self.cfg.plot.step_pair;
        let mut curves = Vec::new();
        let mut ratios = Vec::new();
        for e in &entries {
            if let Some(p) = &e.paths[pick] {
                curves.push((e.metric.clone(), step_size_profile(p)));
            }
            let mut r: Vec<f64> = e.paths.iter().flatten().map(|p| step_ratio(&step_size_profile(p))).filter(|v| v.is_finite()).collect();
            r.sort_by(f64::total_cmp);
            let median = if r.is_empty() { f64::NAN } else { r[r.len() / 2] };
            ratios.push(vec![e.metric.clone(), e.solver.clone(), r.len().to_string(), median.to_string()]);
        }

        for (rel, paths) in &written {
            csvio::write_paths(&st.output(rel)?, paths)?;
        }
        st.write(REPORT, report.to_csv().as_bytes())?;
        st.write(REPORT_TABLE, report.to_table().as_bytes())?;
        csvio::write_records(&st.output(RECORDS)?, &report.records)?;
        csvio::write_step_sizes(&st.output(STEP_SIZES)?, &curves)?;
        csvio::write_rows(&st.output(STEP_RATIOS)?, &["metric", "solver", "n_paths", "median_step_ratio"], ratios)?;
        st.finish()?;
        Ok(report)
    }

    /// Geodesics of every evaluated metric over filled bands of `−log p`.
    pub fn plot_fig1(&self) -> Result<()> {
        let mut st = Stage::new(self, CMD_FIG1);
        let (x0, _) = csvio::read_pairs(&st.input(PAIRS, CMD_DATASET)?)?;
        let n = x0.rows();
        let keep = self.cfg.plot.paths.min(n);
        let mut sources: Vec<(String, String, &'static str)> = vec![("linear".into(), LINEAR_PATHS.into(), CMD_EVAL)];
        for &kind in &self.cfg.geodesic.train {
            sources.push((kind.label().into(), eval_paths(kind), CMD_EVAL));
        }
        for &kind in &self.cfg.geodesic.solve {
            sources.push((kind.label().into(), waypoint_paths(kind), CMD_SOLVE));
        }
        let mut panels = Vec::new();
        for (title, rel, producer) in sources {
            let paths = csvio::read_paths(&st.input(&rel, producer)?, n)?;
            panels.push(svg::Panel {
                title,
                paths: paths.into_iter().take(keep).flatten().collect(),
            });
        }
        let density = self.density()?;
        let extent = 14.0f64.max(1.75 * self.cfg.dataset.radius);
        let mut err = None;
        let field = svg::Field::sample(self.cfg.plot.grid, -extent, extent, |x, y| match density.log_density(&[x, y]) {
            Ok(lp) => -lp,
            Err(e) => {
                err.get_or_insert(e);
                f64::NAN
            }
        });
        if let Some(e) = err {
            return Err(e.into());
        }
        let text = svg::geodesic_panels(&field, self.cfg.plot.bands, &panels)?;
        st.write(FIG1, text.as_bytes())?;
        st.finish()
    }

    /// Step-size profiles along one pair's geodesics, one curve per metric.
    pub fn plot_fig2(&self) -> Result<()> {
        let mut st = Stage::new(self, CMD_FIG2);
        let curves = csvio::read_step_sizes(&st.input(STEP_SIZES, CMD_EVAL)?)?;
        st.write(FIG2, svg::step_size_curves(&curves).as_bytes())?;
        st.finish()
    }

    /// Every stage except shooting, in dependency order.
    pub fn run_all(&self) -> Result<EvalReport> {
        self.dataset_gen()?;
        self.ebm_train_if_needed()?;
        self.metric_fit()?;
        self.metric_calibrate()?;
        self.geodesic_train()?;
        self.geodesic_solve()?;
        let report = self.eval_run()?;
        self.plot_fig1()?;
        self.plot_fig2()?;
        Ok(report)
    }

    fn ebm_train_if_needed(&self) -> Result<()> {
        if self.metric_kinds().iter().any(|k| k.needs_energy_model()) {
            self.ebm_train()?;
        }
        Ok(())
    }

    /// SHA-256 of every CSV under the output root, keyed by relative path.
    pub fn csv_digests(&self) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).map_err(|e| PipelineError::io(&dir, e))? {
                let path = entry.map_err(|e| PipelineError::io(&dir, e))?.path();
                if path.is_dir() {
                    stack.push(path);
                } else if path.extension().is_some_and(|e| e == "csv") {
                    let rel = path.strip_prefix(&self.root).unwrap().to_string_lossy().replace('\\', "/");
                    let bytes = std::fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
                    out.insert(rel, sha256_hex(&bytes));
                }
            }
        }
        Ok(out)
    }
}

/// Grid points of `paths` at which `metric` hit its floor.
fn floor_hits(metric: &MetricField, paths: &[Option<GeodesicPath>]) -> Result<usize> {
    metric.reset_clamp_count();
    for p in paths.iter().flatten() {
        metric.eval(p.points())?;
    }
    Ok(metric.clamp_count())
}
