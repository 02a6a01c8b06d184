use ebmgeo_core::autodiff::{Tape, Var};
use ebmgeo_core::density::DatasetSpec;
use ebmgeo_core::ebm::{cd_loss, langevin_sample, train_ebm, EbmTrainConfig, EnergyFn, LangevinConfig};
use ebmgeo_core::nets::{EnergyModel, Parameterized};
use ebmgeo_core::optim::AdamConfig;
use ebmgeo_core::{Error, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `E(x) = ‖x‖²/2`, the unit Gaussian's energy.
struct Quadratic;

impl EnergyFn for Quadratic {
    fn energy_and_grad(&self, x: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let e = (0..x.rows()).map(|i| 0.5 * x.row(i).iter().map(|v| v * v).sum::<f64>()).collect();
        Ok((e, x.clone()))
    }
}

#[test]
fn langevin_on_quadratic_reaches_unit_variance() {
    let cfg = LangevinConfig {
        steps: 10_000,
        step_size: 0.01,
        noise: (2.0f64 * 0.01).sqrt(),
        buffer_prob: 0.0,
        max_drift: None,
    };
    let chains = 2000;
    let init = Tensor::zeros(&[chains, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let out = langevin_sample(&Quadratic, &init, &cfg, &mut rng).unwrap();
    for j in 0..2 {
        let col: Vec<f64> = (0..chains).map(|i| out.row(i)[j]).collect();
        let var = ebmgeo_core::stats::std_dev(&col).powi(2);
        // Discretization bias of unadjusted Langevin is 1/(1 − α/2) − 1 ≈ 0.005.
        assert!((var - 1.0).abs() <= 0.1, "axis {j} variance {var}");
    }
}

#[test]
fn langevin_without_noise_on_flat_energy_is_identity() {
    let model = EnergyModel::zeroed(2);
    let init = Tensor::from_rows(&[[1.0, 2.0], [-3.0, 0.5]]).unwrap();
    let cfg = LangevinConfig {
        noise: 0.0,
        steps: 5,
        ..LangevinConfig::default()
    };
    let out = langevin_sample(&model, &init, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(out, init);
}

#[test]
fn langevin_rejects_invalid_configs() {
    let init = Tensor::zeros(&[1, 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for cfg in [
        LangevinConfig { steps: 0, ..Default::default() },
        LangevinConfig { step_size: 0.0, ..Default::default() },
        LangevinConfig { noise: -1.0, ..Default::default() },
    ] {
        assert!(langevin_sample(&Quadratic, &init, &cfg, &mut rng).is_err());
    }
}

fn linear<'t>(x: Var<'t>, theta: Var<'t>) -> Result<Var<'t>> {
    let n = x.shape()[0];
    x.mul(theta)?.reshape(&[n])
}

#[test]
fn cd_loss_linear_energy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pos: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
    let neg: Vec<f64> = (0..16).map(|_| rng.random_range(-2.0..2.0)).collect();
    let reg = 0.7;
    let loss_at = |theta: f64| -> (f64, f64) {
        let tape = Tape::new();
        let th = tape.param(Tensor::vector(vec![theta]));
        let xp = tape.constant(Tensor::matrix(16, 1, pos.clone()).unwrap());
        let xn = tape.constant(Tensor::matrix(16, 1, neg.clone()).unwrap());
        let l = cd_loss(|x| linear(x, th), xp, xn, reg).unwrap();
        let g = tape.backward(l.total).unwrap();
        (l.total.item(), g.get(th).unwrap().item())
    };
    let theta = 0.4;
    let (_, analytic) = loss_at(theta);
    let h = 1e-5;
    let fd = (loss_at(theta + h).0 - loss_at(theta - h).0) / (2.0 * h);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
    let formula = mean(&pos) - mean(&neg) + 2.0 * reg * theta * (mean(&sq(&pos)) + mean(&sq(&neg)));
    assert!((analytic - fd).abs() <= 1e-6 * fd.abs().max(1.0));
    assert!((analytic - formula).abs() <= 1e-12 * formula.abs().max(1.0));
}

#[test]
fn cd_loss_identical_batches_is_regularizer_only() {
    let model = EnergyModel::new(2, 5);
    let x = Tensor::from_rows(&[[0.3, -1.0], [2.0, 0.5], [-1.0, -1.0]]).unwrap();
    let tape = Tape::new();
    let params = model.bind(&tape, true);
    let xp = tape.constant(x.clone());
    let xn = tape.constant(x.clone());
    let l = cd_loss(|v| model.forward_tape(&params, v), xp, xn, 1.0).unwrap();
    assert_eq!(l.cd, 0.0);
    let e = model.energy(&x).unwrap();
    let reg = 2.0 * e.iter().map(|v| v * v).sum::<f64>() / 3.0;
    assert!((l.total.item() - reg).abs() <= 1e-12);

    let zero = EnergyModel::zeroed(2);
    let tape = Tape::new();
    let params = zero.bind(&tape, true);
    let l = cd_loss(|v| zero.forward_tape(&params, v), tape.constant(x.clone()), tape.constant(x), 1.0).unwrap();
    assert_eq!(l.total.item(), 0.0);
}

#[test]
fn negatives_never_receive_gradient() {
    let model = EnergyModel::new(2, 6);
    let data = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
    let chains = langevin_sample(&model, &data, &LangevinConfig { steps: 3, ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let tape = Tape::new();
    let params = model.bind(&tape, true);
    let xp = tape.constant(data.clone());
    let xn = tape.constant(chains.clone());
    let l = cd_loss(|v| model.forward_tape(&params, v), xp, xn, 1.0).unwrap();
    let g = tape.backward(l.total).unwrap();
    assert!(g.get(xn).is_none_or(|t| t.data().iter().all(|&v| v == 0.0)));
    assert!(params.iter().any(|p| g.get(*p).is_some_and(|t| t.data().iter().any(|&v| v != 0.0))));

    let tape = Tape::new();
    let params = model.bind(&tape, true);
    let attached = tape.param(chains);
    let err = cd_loss(|v| model.forward_tape(&params, v), tape.constant(data), attached, 1.0).unwrap_err();
    assert!(matches!(err, Error::NotDetached { .. }));
}

#[test]
fn short_training_separates_data_from_far_points() {
    let data = DatasetSpec::ucg(0).sample().unwrap();
    let cfg = EbmTrainConfig {
        steps: 400,
        adam: AdamConfig::with_lr(1e-3),
        seed: 2,
        ..Default::default()
    };
    let langevin = LangevinConfig { steps: 20, ..Default::default() };
    let (model, log) = train_ebm(&data, &cfg, &langevin).unwrap();
    assert_eq!(log.len(), 400);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let idx: Vec<usize> = (0..1000).map(|_| rng.random_range(0..data.rows())).collect();
    let on = model.energy(&data.select_rows(&idx)).unwrap();
    let uniform: Vec<f64> = (0..2000).map(|_| rng.random_range(-14.0..14.0)).collect();
    let off = model.energy(&Tensor::matrix(1000, 2, uniform).unwrap()).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(mean(&on) < mean(&off), "data {} vs uniform {}", mean(&on), mean(&off));

    // Far points: at least 5 units from every center of the arc.
    let centers = DatasetSpec::ucg(0).density().unwrap();
    let mut wins = 0;
    let mut pairs = 0;
    while pairs < 500 {
        let far = [rng.random_range(-14.0..14.0), rng.random_range(-14.0..14.0)];
        let gap = (0..centers.n_components())
            .map(|k| {
                let c = centers.center(k);
                ((far[0] - c[0]).powi(2) + (far[1] - c[1]).powi(2)).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        if gap < 5.0 {
            continue;
        }
        let x = data.row(rng.random_range(0..data.rows()));
        let e = model.energy(&Tensor::from_rows(&[[x[0], x[1]], far]).unwrap()).unwrap();
        wins += (e[0] < e[1]) as usize;
        pairs += 1;
    }
    assert!(wins >= 475, "{wins}/500 pairs ordered");
}

#[test]
fn training_is_bit_reproducible() {
    let data = DatasetSpec::ucg(1).sample().unwrap();
    let cfg = EbmTrainConfig { steps: 20, seed: 4, ..Default::default() };
    let langevin = LangevinConfig { steps: 5, ..Default::default() };
    let (a, la) = train_ebm(&data, &cfg, &langevin).unwrap();
    let (b, lb) = train_ebm(&data, &cfg, &langevin).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
}
