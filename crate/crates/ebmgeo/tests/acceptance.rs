//! Acceptance suite: one test per criterion, named `criterion_NN_*`, so the
//! test runner prints one pass/fail line for each.

use std::path::PathBuf;
use std::sync::OnceLock;

use ebmgeo::csvio;
use ebmgeo::pipeline::{self, Run};
use ebmgeo::{MetricKind, RunConfig};
use ebmgeo_core::autodiff::{Tape, Var};
use ebmgeo_core::density::{DatasetSpec, MixtureDensity};
use ebmgeo_core::ebm::{langevin_sample, EnergyFn, LangevinConfig};
use ebmgeo_core::eval::{path_rmse, EvalReport};
use ebmgeo_core::geodesic::{
    interpolant_paths, optimize_waypoints, shoot_geodesic, train_interpolant, EndpointSampler, GeodesicPath,
    InterpolantTrainConfig, ShootingConfig, WaypointConfig,
};
use ebmgeo_core::metric::{MetricField, MetricForm, RawField};
use ebmgeo_core::nets::{EnergyModel, InterpolantNet, Parameterized};
use ebmgeo_core::optim::AdamConfig;
use ebmgeo_core::stats::{mean, pearson, std_dev};
use ebmgeo_core::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Desk-scale UCG run shared by the calibration, fidelity, ordering and
/// constant-speed checks.
const UCG: &str = r#"
seed = 0
[ebm]
steps = 2000
adam = { lr = 1e-3 }
[langevin]
steps = 20
[interpolant]
steps = 2000
batch_pairs = 16
adam = { lr = 1e-3 }
[waypoint]
max_iters = 500
rel_tol = 1e-6
[eval]
pairs = 1000
sets = 5
"#;

/// The WCG counterpart for the step-size ratios.
const WCG: &str = r#"
seed = 0
[dataset]
variant = { kind = "wcg" }
[ebm]
steps = 2000
adam = { lr = 1e-3 }
[langevin]
steps = 20
[interpolant]
steps = 2000
batch_pairs = 16
adam = { lr = 1e-3 }
[waypoint]
max_iters = 500
rel_tol = 1e-6
[eval]
pairs = 200
sets = 5
"#;

/// Smaller UCG run executed twice for the determinism check.
const RERUN: &str = r#"
seed = 11
[ebm]
steps = 300
[langevin]
steps = 20
[interpolant]
steps = 300
batch_pairs = 16
[waypoint]
max_iters = 200
[eval]
pairs = 100
sets = 5
[plot]
grid = 100
"#;

struct Finished {
    run: Run,
    report: EvalReport,
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn run_pipeline(toml: &str, name: &str) -> Finished {
    let run = Run::new(RunConfig::from_toml(toml).unwrap(), scratch(name)).unwrap();
    let report = run.run_all().unwrap();
    Finished { run, report }
}

fn ucg() -> &'static Finished {
    static RUN: OnceLock<Finished> = OnceLock::new();
    RUN.get_or_init(|| run_pipeline(UCG, "ucg"))
}

fn wcg() -> &'static Finished {
    static RUN: OnceLock<Finished> = OnceLock::new();
    RUN.get_or_init(|| run_pipeline(WCG, "wcg"))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

// ---------------------------------------------------------------- criterion 1

const H: f64 = 1e-5;
const PROBES: usize = 100;

type Op = for<'t> fn(&[Var<'t>]) -> Var<'t>;

/// Worst directional relative error of `Σ w ⊙ op(inputs)` over random inputs
/// and random directions.
fn primitive_error(shapes: &[&[usize]], lo: f64, hi: f64, op: Op, rng: &mut ChaCha8Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..PROBES {
        let xs: Vec<Tensor> = shapes.iter().map(|s| uniform(rng, s, lo, hi)).collect();
        let out_shape = {
            let tape = Tape::new();
            let vs: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
            op(&vs).shape()
        };
        let w = uniform(rng, &out_shape, -1.0, 1.0);
        let value = |xs: &[Tensor]| {
            let tape = Tape::new();
            let vs: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
            op(&vs).mul(tape.constant(w.clone())).unwrap().sum().item()
        };
        let tape = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let g = tape.backward(op(&vs).mul(tape.constant(w.clone())).unwrap().sum()).unwrap();
        let dirs: Vec<Tensor> = xs.iter().map(|x| uniform(rng, x.shape(), -1.0, 1.0)).collect();
        let shifted = |c: f64| -> Vec<Tensor> {
            xs.iter()
                .zip(&dirs)
                .map(|(x, d)| Tensor::new(x.shape().to_vec(), x.data().iter().zip(d.data()).map(|(a, b)| a + c * b).collect()).unwrap())
                .collect()
        };
        let numeric = (value(&shifted(H)) - value(&shifted(-H))) / (2.0 * H);
        let exact: f64 = vs.iter().zip(&dirs).map(|(v, d)| dot(g.get(*v).unwrap().data(), d.data())).sum();
        worst = worst.max(rel(exact, numeric));
    }
    worst
}

fn parameter_error<M: Parameterized + Clone>(model: &M, analytic: &[Tensor], loss: &dyn Fn(&M) -> f64, rng: &mut ChaCha8Rng) -> f64 {
    let dirs: Vec<Tensor> = analytic.iter().map(|g| uniform(rng, g.shape(), -1.0, 1.0)).collect();
    let shift = |c: f64| {
        let mut m = model.clone();
        for (p, d) in m.params_mut().into_iter().zip(&dirs) {
            p.data_mut().iter_mut().zip(d.data()).for_each(|(v, dv)| *v += c * dv);
        }
        loss(&m)
    };
    let numeric = (shift(H) - shift(-H)) / (2.0 * H);
    let exact: f64 = analytic.iter().zip(&dirs).map(|(g, d)| dot(g.data(), d.data())).sum();
    rel(exact, numeric)
}

fn input_error(x: &Tensor, analytic: &Tensor, f: &dyn Fn(&Tensor) -> f64, rng: &mut ChaCha8Rng) -> f64 {
    let d = uniform(rng, x.shape(), -1.0, 1.0);
    let at = |c: f64| Tensor::new(x.shape().to_vec(), x.data().iter().zip(d.data()).map(|(a, b)| a + c * b).collect()).unwrap();
    let numeric = (f(&at(H)) - f(&at(-H))) / (2.0 * H);
    rel(dot(analytic.data(), d.data()), numeric)
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases: Vec<(&str, Vec<&[usize]>, f64, f64, Op)> = vec![
        ("matmul", vec![&[3, 4], &[4, 2]], -2.0, 2.0, |v| v[0].matmul(v[1]).unwrap()),
        ("add", vec![&[3, 4], &[3, 4]], -2.0, 2.0, |v| v[0].add(v[1]).unwrap()),
        ("add broadcast", vec![&[3, 4], &[4]], -2.0, 2.0, |v| v[0].add(v[1]).unwrap()),
        ("sub", vec![&[3, 4], &[1, 4]], -2.0, 2.0, |v| v[0].sub(v[1]).unwrap()),
        ("mul", vec![&[1, 4], &[3, 4]], -2.0, 2.0, |v| v[0].mul(v[1]).unwrap()),
        ("scale", vec![&[4, 3]], -2.0, 2.0, |v| v[0].scale(-1.7)),
        ("neg", vec![&[4, 3]], -2.0, 2.0, |v| v[0].neg()),
        ("add_scalar", vec![&[4, 3]], -2.0, 2.0, |v| v[0].add_scalar(0.3)),
        ("silu", vec![&[4, 3]], -3.0, 3.0, |v| v[0].silu()),
        ("exp", vec![&[4, 3]], -2.0, 2.0, |v| v[0].exp()),
        ("log", vec![&[4, 3]], 0.2, 3.0, |v| v[0].log()),
        ("square", vec![&[4, 3]], -2.0, 2.0, |v| v[0].square()),
        ("sum", vec![&[5, 2]], -2.0, 2.0, |v| v[0].sum()),
        ("mean", vec![&[5, 2]], -2.0, 2.0, |v| v[0].mean()),
        ("sqnorm_rows", vec![&[5, 3]], -2.0, 2.0, |v| v[0].sqnorm_rows()),
        ("gather_rows", vec![&[4, 2]], -2.0, 2.0, |v| v[0].gather_rows(&[3, 0, 3, 1]).unwrap()),
        ("reshape", vec![&[4, 3]], -2.0, 2.0, |v| v[0].reshape(&[2, 6]).unwrap()),
        ("map_rows", vec![&[6, 2]], -2.0, 2.0, |v| {
            v[0].map_rows(2, |t| {
                let mut out = Vec::new();
                let mut jac = Vec::new();
                for r in 0..t.rows() {
                    let (a, b) = (t.row(r)[0], t.row(r)[1]);
                    out.extend([a * b, a.sin()]);
                    jac.extend([b, a, a.cos(), 0.0]);
                }
                Ok((Tensor::matrix(t.rows(), 2, out)?, jac))
            })
            .unwrap()
        }),
        ("fan-out", vec![&[3]], -2.0, 2.0, |v| v[0].mul(v[0]).unwrap().add(v[0].scale(3.0)).unwrap()),
    ];
    let mut failures = Vec::new();
    for (name, shapes, lo, hi, op) in cases {
        let worst = primitive_error(&shapes, lo, hi, op, &mut rng);
        if !(worst <= 1e-5) {
            failures.push(format!("{name}: {worst:e}"));
        }
    }

    let (mut energy_theta, mut energy_x, mut net_theta, mut net_x): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for probe in 0..PROBES {
        let model = EnergyModel::new(2, probe as u64);
        let x = uniform(&mut rng, &[4, 2], -8.0, 8.0);
        let w = uniform(&mut rng, &[4], -1.0, 1.0);
        let weighted = |m: &EnergyModel, x: &Tensor| dot(&m.energy(x).unwrap(), w.data());
        let tape = Tape::new();
        let params = model.bind(&tape, true);
        let xv = tape.param(x.clone());
        let e = model.forward_tape(&params, xv).unwrap();
        let g = tape.backward(e.mul(tape.constant(w.clone())).unwrap().sum()).unwrap();
        let analytic: Vec<Tensor> = params.iter().map(|p| g.get(*p).unwrap().clone()).collect();
        energy_theta = energy_theta.max(parameter_error(&model, &analytic, &|m| weighted(m, &x), &mut rng));
        energy_x = energy_x.max(input_error(&x, g.get(xv).unwrap(), &|xp| weighted(&model, xp), &mut rng));

        let mut net = InterpolantNet::new(2, probe as u64);
        let out = net.mlp.layers.last_mut().unwrap();
        out.weight.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        let x0 = uniform(&mut rng, &[2, 2], -8.0, 8.0);
        let x1 = uniform(&mut rng, &[2, 2], -8.0, 8.0);
        let inputs = net.inputs(&x0, &x1, &[0.0, 0.3, 0.77, 1.0]).unwrap();
        let w = uniform(&mut rng, &[inputs.rows(), 2], -1.0, 1.0);
        let weighted = |n: &InterpolantNet, i: &Tensor| dot(n.phi_rows(i).data(), w.data());
        let tape = Tape::new();
        let params = net.bind(&tape, true);
        let iv = tape.param(inputs.clone());
        let phi = net.forward_tape(&params, iv).unwrap();
        let g = tape.backward(phi.mul(tape.constant(w.clone())).unwrap().sum()).unwrap();
        let analytic: Vec<Tensor> = params.iter().map(|p| g.get(*p).unwrap().clone()).collect();
        net_theta = net_theta.max(parameter_error(&net, &analytic, &|n| weighted(n, &inputs), &mut rng));
        net_x = net_x.max(input_error(&inputs, g.get(iv).unwrap(), &|i| weighted(&net, i), &mut rng));
    }
    for (name, worst) in [
        ("energy parameters", energy_theta),
        ("energy input", energy_x),
        ("interpolant parameters", net_theta),
        ("interpolant input", net_x),
    ] {
        if !(worst <= 1e-5) {
            failures.push(format!("{name}: {worst:e}"));
        }
    }
    assert!(failures.is_empty(), "relative errors above 1e-5: {failures:?}");
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn criterion_02_calibration_hits_targets_exactly() {
    let f = ucg();
    let on = csvio::read_points(&f.run.path(pipeline::CAL_ON)).unwrap();
    let off = csvio::read_points(&f.run.path(pipeline::CAL_OFF)).unwrap();
    let (g_min, g_max) = (f.run.cfg.metrics.g_min, f.run.cfg.metrics.g_max);
    let mut failures = Vec::new();
    for kind in MetricKind::ALL {
        let m = f.run.calibrated_metric(kind).unwrap();
        // The affine value is the metric itself (direct) or its reciprocal (inverse).
        let (t_on, t_off) = match m.form() {
            MetricForm::Direct => (g_min, g_max),
            MetricForm::Inverse => (1.0 / g_min, 1.0 / g_max),
        };
        let (a, b) = (m.affine_mean(&on).unwrap(), m.affine_mean(&off).unwrap());
        if (a - t_on).abs() > 1e-9 * t_on || (b - t_off).abs() > 1e-9 * t_off {
            failures.push(format!("{}: {a} / {b}", kind.label()));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_03_euclidean_interpolant_is_straight() {
    let density = DatasetSpec::ucg(0).density().unwrap();
    let pool = density.sample(2000, 3).unwrap();
    let mut net = InterpolantNet::new(2, 4);
    // A zero output layer would make every path straight before training.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let out = net.mlp.layers.last_mut().unwrap();
    out.weight.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
    out.bias.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
    let cfg = InterpolantTrainConfig {
        t_steps: 50,
        batch_pairs: 16,
        adam: AdamConfig::with_lr(1e-3),
        steps: 2000,
        seed: 6,
    };
    let (net, _) = train_interpolant(net, &EndpointSampler::Pool(pool), &MetricField::euclidean(2), &cfg).unwrap();

    let held = density.sample(200, 7).unwrap();
    let x0 = held.select_rows(&(0..100).collect::<Vec<_>>());
    let x1 = held.select_rows(&(100..200).collect::<Vec<_>>());
    let paths = interpolant_paths(&net, &x0, &x1, 100).unwrap();
    let mut worst: f64 = 0.0;
    for (k, p) in paths.iter().enumerate() {
        let line = GeodesicPath::straight(x0.row(k), x1.row(k), 100).unwrap();
        let span = line.euclidean_length();
        worst = worst.max(path_rmse(p, &line).unwrap() / span);
    }
    assert!(worst <= 0.02, "worst RMSE / ‖x₁ − x₀‖ = {worst}");
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_04_energy_tracks_negative_log_density() {
    let f = ucg();
    let ck = ebmgeo::checkpoint::Checkpoint::load(&f.run.path(pipeline::EBM_CKPT)).unwrap();
    let mut model = EnergyModel::zeroed(2);
    ck.restore_into(&mut model).unwrap();
    let density = f.run.density().unwrap();
    let n = 100;
    let mut grid = Vec::with_capacity(2 * n * n);
    for i in 0..n {
        for j in 0..n {
            grid.push(-14.0 + 28.0 * i as f64 / (n - 1) as f64);
            grid.push(-14.0 + 28.0 * j as f64 / (n - 1) as f64);
        }
    }
    let grid = Tensor::matrix(n * n, 2, grid).unwrap();
    let energy = model.energy(&grid).unwrap();
    let nll: Vec<f64> = (0..n * n).map(|i| -density.log_density(grid.row(i)).unwrap()).collect();
    let r = pearson(&energy, &nll);
    assert!(r >= 0.9, "Pearson r = {r}");
}

// ---------------------------------------------------------------- criterion 5

/// Mean RMSE between matching pairs of two path sets, skipping missing ones.
fn mean_rmse(a: &[Option<GeodesicPath>], b: &[Option<GeodesicPath>]) -> f64 {
    let v: Vec<f64> = a
        .iter()
        .zip(b)
        .filter_map(|(p, q)| Some(path_rmse(p.as_ref()?, q.as_ref()?).unwrap()))
        .collect();
    mean(&v)
}

#[test]
fn criterion_05_ucg_ordering() {
    let f = ucg();
    let row = |name: &str| f.report.row(name).unwrap_or_else(|| panic!("no row {name}"));
    let acc = |name: &str| row(name).acc_prob_mean;
    let err = |name: &str| row(name).rmse_mean.unwrap();
    let ebm = ["G_Eθ", "G_1/pθ"];
    let baselines = ["LAND", "RBF"];
    let mut failures = Vec::new();
    for e in ebm {
        for b in baselines {
            if !(acc(e) > acc(b)) {
                failures.push(format!("accumulated probability {e} {} ≤ {b} {}", acc(e), acc(b)));
            }
            if !(err(e) < err(b)) {
                failures.push(format!("RMSE {e} {} ≥ {b} {}", err(e), err(b)));
            }
        }
    }
    for b in baselines {
        if !(acc(b) > acc("linear")) {
            failures.push(format!("accumulated probability {b} {} ≤ linear {}", acc(b), acc("linear")));
        }
    }

    let n = f.run.cfg.eval.pairs;
    let oracle = csvio::read_paths(&f.run.path(&pipeline::waypoint_paths(MetricKind::GInvpOracle)), n).unwrap();
    for kind in [MetricKind::GETheta, MetricKind::GInvpTheta] {
        let paths = csvio::read_paths(&f.run.path(&pipeline::eval_paths(kind)), n).unwrap();
        let e = mean_rmse(&paths, &oracle);
        if !(e <= 0.25) {
            failures.push(format!("{} RMSE to G_1/p_M {e} > 0.25", kind.label()));
        }
    }
    assert!(failures.is_empty(), "{failures:#?}\n{}", f.report.to_table());
}

// ---------------------------------------------------------------- criterion 6

#[test]
fn criterion_06_log_metrics_vary_step_sizes_more() {
    let f = wcg();
    let (_, rows) = csvio::read_rows(&f.run.path(pipeline::STEP_RATIOS)).unwrap();
    let ratio = |label: &str| -> f64 {
        rows.iter()
            .find(|r| r[0] == label)
            .unwrap_or_else(|| panic!("no step ratio for {label}"))[3]
            .parse()
            .unwrap()
    };
    let mut failures = Vec::new();
    for high in ["G_E_M", "G_Eθ"] {
        for low in ["G_1/p_M", "G_1/pθ", "RBF", "LAND"] {
            if !(ratio(high) > ratio(low)) {
                failures.push(format!("{high} {} ≤ {low} {}", ratio(high), ratio(low)));
            }
        }
    }
    assert!(failures.is_empty(), "{failures:?}\n{rows:?}");
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_07_three_solvers_agree_on_one_gaussian() {
    let density = MixtureDensity::new(&[vec![0.0, 0.0]], &[1.0]).unwrap();
    let metric = MetricField::uncalibrated("1/p", RawField::Density(density.clone()));
    let ends = density.sample(40, 8).unwrap();
    let x0 = ends.select_rows(&(0..20).collect::<Vec<_>>());
    let x1 = ends.select_rows(&(20..40).collect::<Vec<_>>());
    let t = 100;

    let cfg = InterpolantTrainConfig {
        t_steps: t,
        batch_pairs: 20,
        adam: AdamConfig::with_lr(1e-3),
        steps: 3000,
        seed: 9,
    };
    let sampler = EndpointSampler::Pairs { x0: x0.clone(), x1: x1.clone() };
    let (net, _) = train_interpolant(InterpolantNet::new(2, 10), &sampler, &metric, &cfg).unwrap();
    let learned = interpolant_paths(&net, &x0, &x1, t).unwrap();

    let mut worst = [0.0f64; 3];
    for k in 0..20 {
        let (a, b) = (x0.row(k), x1.row(k));
        let way = optimize_waypoints(a, b, &metric, &WaypointConfig { t_steps: t, ..Default::default() }).unwrap().path;
        let shot = shoot_geodesic(a, b, &density, &ShootingConfig { t_steps: t, ..Default::default() }).unwrap();
        for (slot, (p, q)) in [(&learned[k], &way), (&learned[k], &shot), (&way, &shot)].into_iter().enumerate() {
            worst[slot] = worst[slot].max(path_rmse(p, q).unwrap());
        }
    }
    assert!(
        worst.iter().all(|w| *w <= 0.05),
        "worst RMSE interpolant/waypoint {}, interpolant/shooting {}, waypoint/shooting {}",
        worst[0],
        worst[1],
        worst[2]
    );
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_08_converged_geodesics_have_constant_speed() {
    let mut failures = Vec::new();
    let mut converged = 0;
    for f in [ucg(), wcg()] {
        for &kind in &f.run.cfg.geodesic.solve {
            let (header, rows) = csvio::read_rows(&f.run.path(&pipeline::waypoint_summary(kind))).unwrap();
            let col = |name: &str| header.iter().position(|h| h == name).unwrap();
            let (c_conv, c_cv) = (col("converged"), col("speed_cv"));
            let cvs: Vec<f64> = rows.iter().filter(|r| r[c_conv] == "true").map(|r| r[c_cv].parse().unwrap()).collect();
            converged += cvs.len();
            let bad = cvs.iter().filter(|cv| **cv > 0.1).count();
            if bad > 0 {
                let worst = cvs.iter().cloned().fold(0.0, f64::max);
                failures.push(format!(
                    "{} {}: {bad}/{} converged paths above CV 0.1 (worst {worst:.3})",
                    f.run.dataset_name(),
                    kind.label(),
                    cvs.len()
                ));
            }
        }
    }
    assert!(converged > 0, "no converged geodesics");
    assert!(failures.is_empty(), "{failures:#?}");
}

// ---------------------------------------------------------------- criterion 9

/// `E(x) = ‖x‖²/2`.
struct Quadratic;

impl EnergyFn for Quadratic {
    fn energy_and_grad(&self, x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let e = (0..x.rows()).map(|i| 0.5 * x.row(i).iter().map(|v| v * v).sum::<f64>()).collect();
        Ok((e, x.clone()))
    }
}

#[test]
fn criterion_09_density_module() {
    let mut failures = Vec::new();
    for spec in [DatasetSpec::ucg(0), DatasetSpec::wcg(0)] {
        let d = spec.density().unwrap();
        let h = 0.02;
        let n = (28.0 / h) as usize;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                total += d.density(&[-14.0 + (i as f64 + 0.5) * h, -14.0 + (j as f64 + 0.5) * h]).unwrap();
            }
        }
        total *= h * h;
        if (total - 1.0).abs() > 1e-3 {
            failures.push(format!("integral {total}"));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let x = [rng.random_range(-14.0..14.0), rng.random_range(-14.0..14.0)];
            let s = d.score(&x).unwrap();
            let mut fd = [0.0; 2];
            for (j, slot) in fd.iter_mut().enumerate() {
                let (mut p, mut m) = (x, x);
                p[j] += 1e-5;
                m[j] -= 1e-5;
                *slot = (d.log_density(&p).unwrap() - d.log_density(&m).unwrap()) / 2e-5;
            }
            let diff = ((s[0] - fd[0]).powi(2) + (s[1] - fd[1]).powi(2)).sqrt();
            let scale = (fd[0] * fd[0] + fd[1] * fd[1]).sqrt().max(1e-3);
            worst = worst.max(diff / scale);
        }
        if worst > 1e-7 {
            failures.push(format!("score relative error {worst:e}"));
        }
    }

    let cfg = LangevinConfig {
        steps: 10_000,
        step_size: 0.01,
        noise: (2.0f64 * 0.01).sqrt(),
        buffer_prob: 0.0,
        max_drift: None,
    };
    let chains = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let out = langevin_sample(&Quadratic, &Tensor::zeros(&[chains, 2]), &cfg, &mut rng).unwrap();
    for j in 0..2 {
        let col: Vec<f64> = (0..chains).map(|i| out.row(i)[j]).collect();
        let var = std_dev(&col).powi(2);
        if (var - 1.0).abs() > 0.1 {
            failures.push(format!("Langevin variance on axis {j}: {var}"));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

// ---------------------------------------------------------------- criterion 10

#[test]
fn criterion_10_rerun_is_byte_identical() {
    let a = run_pipeline(RERUN, "rerun_a");
    let b = run_pipeline(RERUN, "rerun_b");
    let (da, db) = (a.run.csv_digests().unwrap(), b.run.csv_digests().unwrap());
    assert!(da.len() >= 20, "only {} CSV artifacts", da.len());
    let differing: Vec<&String> = da.keys().filter(|k| db.get(*k) != da.get(*k)).collect();
    assert!(differing.is_empty() && da.len() == db.len(), "differing artifacts: {differing:?}");
}
