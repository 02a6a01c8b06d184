use std::path::Path;
use std::process::Command;

use ebmgeo::checkpoint::Checkpoint;
use ebmgeo::csvio;
use ebmgeo::manifest::Manifest;
use ebmgeo::pipeline::{self, Run};
use ebmgeo::{PipelineError, RunConfig};
use ebmgeo_core::nets::EnergyModel;

const TINY: &str = r#"
seed = 3
[dataset]
n_samples = 400
[ebm]
steps = 30
[langevin]
steps = 5
[metrics]
calibration_pairs = 100
[interpolant]
steps = 30
batch_pairs = 4
t_steps = 20
[waypoint]
t_steps = 20
max_iters = 60
[shooting]
t_steps = 20
restarts = 2
[eval]
pairs = 12
sets = 2
t_steps = 20
[plot]
grid = 40
step_pair = 3
"#;

fn tiny_run(root: &Path) -> Run {
    Run::new(RunConfig::from_toml(TINY).unwrap(), root).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ebmgeo"))
}

#[test]
fn rerunning_the_pipeline_reproduces_every_csv() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (tiny_run(a.path()), tiny_run(b.path()));
    ra.run_all().unwrap();
    let mut multi = rb.clone();
    multi.cfg.workers = 3;
    multi.run_all().unwrap();
    let da = ra.csv_digests().unwrap();
    assert!(da.len() >= 15, "{da:?}");
    assert_eq!(da, multi.csv_digests().unwrap());

    // Rerunning a stage in place leaves its outputs unchanged.
    ra.geodesic_solve().unwrap();
    assert_eq!(ra.csv_digests().unwrap(), da);
    assert_eq!(
        std::fs::read(ra.path(pipeline::FIG1)).unwrap(),
        std::fs::read(multi.path(pipeline::FIG1)).unwrap()
    );
}

#[test]
fn manifest_is_a_dag_matching_the_files() {
    let dir = tempfile::tempdir().unwrap();
    let run = tiny_run(dir.path());
    run.run_all().unwrap();
    let m = Manifest::load(dir.path()).unwrap();
    m.validate_dag().unwrap();
    assert!(m.stale_artifacts(dir.path()).is_empty());
    let rec = &m.artifacts[pipeline::REPORT];
    assert_eq!(rec.command, pipeline::CMD_EVAL);
    assert!(rec.inputs.contains_key(pipeline::PAIRS));
    assert!(rec.inputs.contains_key(&pipeline::interpolant_ckpt(ebmgeo::MetricKind::GETheta)));
    assert!(rec.config.get("output_dir").is_none());
}

#[test]
fn fig2_draws_one_vertex_per_csv_row() {
    let dir = tempfile::tempdir().unwrap();
    let run = tiny_run(dir.path());
    run.run_all().unwrap();
    let (_, rows) = csvio::read_rows(&run.path(pipeline::STEP_SIZES)).unwrap();
    let svg = std::fs::read_to_string(run.path(pipeline::FIG2)).unwrap();
    let mut total = 0;
    let mut curves = 0;
    for line in svg.lines().filter(|l| l.contains(r#"class="curve""#)) {
        let metric = line.split(r#"data-metric=""#).nth(1).unwrap().split('"').next().unwrap();
        let d = line.split(r#" d=""#).nth(1).unwrap().split('"').next().unwrap();
        let vertices = d.matches(['M', 'L']).count();
        let expected = rows.iter().filter(|r| r[0] == metric).count();
        assert_eq!(vertices, expected, "{metric}");
        total += vertices;
        curves += 1;
    }
    assert_eq!(total, rows.len());
    // Six metrics plus straight lines.
    assert_eq!(curves, 7);
}

#[test]
fn report_has_every_metric_row() {
    let dir = tempfile::tempdir().unwrap();
    let report = tiny_run(dir.path()).run_all().unwrap();
    let names: Vec<&str> = report.rows.iter().map(|r| r.metric.as_str()).collect();
    assert_eq!(names, ["G_Eθ", "G_1/pθ", "LAND", "RBF", "G_E_M", "G_1/p_M", "linear"]);
    assert_eq!(report.row("G_Eθ").unwrap().rmse_mean.is_some(), true);
    assert!(report.row("linear").unwrap().rmse_mean.is_none());
    let csv = std::fs::read_to_string(dir.path().join(pipeline::REPORT)).unwrap();
    assert!(csv.starts_with("dataset,metric,solver,n_pairs,acc_prob_mean,acc_prob_2sig,rmse_mean,rmse_2sig,skipped\n"));
    assert_eq!(csv.lines().count(), 8);
}

#[test]
fn checkpoints_restore_the_trained_model() {
    let dir = tempfile::tempdir().unwrap();
    let run = tiny_run(dir.path());
    run.dataset_gen().unwrap();
    run.ebm_train().unwrap();
    let ck = Checkpoint::load(&run.path(pipeline::EBM_CKPT)).unwrap();
    let mut model = EnergyModel::zeroed(2);
    ck.restore_into(&mut model).unwrap();
    assert_eq!(Checkpoint::from_model(&model, ck.seed, ck.metadata.clone()), ck);
    assert_eq!(ck.metadata["steps"], "30");
}

#[test]
fn missing_interpolant_names_its_command() {
    let dir = tempfile::tempdir().unwrap();
    let run = tiny_run(dir.path());
    run.dataset_gen().unwrap();
    match run.eval_run() {
        Err(e @ PipelineError::MissingArtifact { .. }) => {
            assert_eq!(e.exit_code(), 3);
            let msg = e.to_string();
            assert!(msg.contains("ebmgeo metric calibrate") || msg.contains("ebmgeo geodesic train"), "{msg}");
        }
        other => panic!("expected a missing-artifact error, got {other:?}"),
    }
}

#[test]
fn cli_dataset_gen_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for name in ["a", "b"] {
        let root = dir.path().join(name);
        let status = bin()
            .args(["dataset", "gen", "--variant", "ucg", "--seed", "7"])
            .env("EBMGEO_OUT", &root)
            .env("RUST_LOG", "warn")
            .status()
            .unwrap();
        assert!(status.success());
        outs.push(std::fs::read(root.join(pipeline::DATA)).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    assert!(!outs[0].is_empty());
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["eval", "run"])
        .env("EBMGEO_OUT", dir.path())
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("ebmgeo dataset gen"));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[metrics]\ng_max = -1.0\n").unwrap();
    let out = bin().arg("--config").arg(&cfg).arg("config").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("metrics.g_max"));

    let out = bin().args(["config"]).env("EBMGEO_OUT", dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let shown = RunConfig::from_toml(&String::from_utf8_lossy(&out.stdout)).unwrap();
    assert_eq!(shown.eval.pairs, RunConfig::default().eval.pairs);
}

#[test]
fn numerical_failures_map_to_exit_four() {
    let e: PipelineError = ebmgeo_core::Error::NonFinite { context: "loss".into() }.into();
    assert_eq!(e.exit_code(), 4);
}
