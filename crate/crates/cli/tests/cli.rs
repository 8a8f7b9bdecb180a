use std::fs;
use std::path::Path;
use std::process::Command;

use holorecon::config::PipelineConfig;
use holorecon::io as hio;
use holorecon_cli::{
    apply_override, cmd_bench, cmd_evaluate, cmd_process, cmd_simulate, BenchArgs, EvaluateArgs, ProcessArgs,
    SimulateArgs,
};

fn small() -> PipelineConfig {
    [
        "optics.nx=96",
        "optics.ny=64",
        "optics.n_planes=40",
        "tiles.tile=32",
        "tiles.step=16",
        "simulation.gamma.d_cap_um=40.0",
    ]
    .iter()
    .fold(PipelineConfig::default(), |c, o| apply_override(&c, o).unwrap())
}

fn simulate(cfg: &PipelineConfig, dir: &Path, n: usize, particles: usize) {
    let args = SimulateArgs {
        out_dir: dir.to_path_buf(),
        n_holograms: Some(n),
        n_particles: Some(particles),
        tile_dataset: false,
    };
    cmd_simulate(cfg, &args).unwrap();
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_holorecon"));
    c.env_remove(holorecon::config::CONFIG_ENV);
    c
}

#[test]
fn simulate_writes_full_dataset_layout() {
    let cfg = ["optics.nx=64", "optics.ny=48", "optics.n_planes=20"]
        .iter()
        .fold(PipelineConfig::default(), |c, o| apply_override(&c, o).unwrap());
    let dir = tempfile::tempdir().unwrap();
    simulate(&cfg, dir.path(), 120, 500);
    let images = fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("synthetic_"))
        .count();
    assert_eq!(images, 120);
    let truth = hio::read_particles_file(&dir.path().join("truth.csv")).unwrap();
    assert_eq!(truth.values().map(Vec::len).sum::<usize>(), 60_000);
    let splits = fs::read_to_string(dir.path().join("splits.csv")).unwrap();
    let count = |s: &str| splits.lines().filter(|l| l.ends_with(s)).count();
    assert_eq!((count(",train"), count(",valid"), count(",test")), (100, 10, 10));
}

#[test]
fn blank_hologram_and_bit_identical_reruns() {
    let cfg = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    simulate(&cfg, a.path(), 1, 0);
    let blank = hio::read_gray(&a.path().join("synthetic_0.png")).unwrap();
    assert!(blank.values().iter().all(|&v| v == 127.0));

    simulate(&cfg, a.path(), 3, 10);
    simulate(&cfg, b.path(), 3, 10);
    for name in ["synthetic_0.png", "synthetic_2.png", "truth.csv", "splits.csv", "config.toml"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn written_config_round_trips() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    simulate(&cfg, dir.path(), 1, 1);
    let back = PipelineConfig::load(Some(&dir.path().join("config.toml"))).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn empty_input_list_gives_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pred.csv");
    let args = ProcessArgs { out: out.clone(), ..Default::default() };
    assert!(cmd_process(&small(), &args).unwrap().is_empty());
    assert_eq!(fs::read_to_string(out).unwrap(), "hid,x_um,y_um,z_um,d_um,n_members,assigned,score\n");
}

#[test]
fn perfect_predictions_score_perfectly() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    simulate(&cfg, dir.path(), 2, 6);
    let truth = hio::read_particles_file(&dir.path().join("truth.csv")).unwrap();
    let preds: Vec<(u32, Vec<holorecon::detect3d::PredictedParticle>)> = truth
        .iter()
        .map(|(h, ps)| {
            let pp = ps
                .iter()
                .map(|&particle| holorecon::detect3d::PredictedParticle {
                    particle,
                    n_members: 1,
                    assigned: false,
                    score: 1.0,
                })
                .collect();
            (*h, pp)
        })
        .collect();
    let pred_path = dir.path().join("pred.csv");
    let mut f = fs::File::create(&pred_path).unwrap();
    hio::write_predictions_csv(&mut f, preds.iter().map(|(h, p)| (*h, p.as_slice()))).unwrap();
    let args = EvaluateArgs {
        predictions: pred_path,
        truth: dir.path().join("truth.csv"),
        out_dir: dir.path().join("eval"),
        hist_bins: 5,
        ..Default::default()
    };
    cmd_evaluate(&cfg, &args).unwrap();
    let report = fs::read_to_string(dir.path().join("eval/metrics.csv")).unwrap();
    let pooled: Vec<&str> = report.lines().last().unwrap().split(',').collect();
    assert_eq!(pooled[0], "all");
    // f1, pod, far, csi, match_accuracy, match_f1, rmse
    assert_eq!(
        [pooled[5], pooled[8], pooled[9], pooled[10], pooled[11], pooled[12], pooled[13]],
        ["1.000000", "1.000000", "0.000000", "1.000000", "1.000000", "1.000000", "0.000000"]
    );
    for coord in ["x", "y", "z", "d"] {
        assert!(fs::read_to_string(dir.path().join(format!("eval/hist_{coord}.svg"))).unwrap().starts_with("<svg"));
    }
}

#[test]
fn oracle_process_and_sweep_through_the_binary() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    simulate(&cfg, p, 2, 8);
    let sets: Vec<String> = ["optics.nx=96", "optics.ny=64", "optics.n_planes=40", "tiles.tile=32", "tiles.step=16"]
        .iter()
        .flat_map(|s| ["-s".to_string(), s.to_string()])
        .collect();
    let status = bin()
        .args(&sets)
        .arg("process")
        .arg(p)
        .args(["--truth", p.join("truth.csv").to_str().unwrap()])
        .args(["--detections", p.join("det.csv").to_str().unwrap()])
        .args(["-o", p.join("pred.csv").to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let status = bin()
        .args(&sets)
        .arg("sweep")
        .args(["--detections", p.join("det.csv").to_str().unwrap()])
        .args(["--truth", p.join("truth.csv").to_str().unwrap()])
        .args(["--thresholds", "1,100,1000,1000000"])
        .args(["-o", p.join("sweep.csv").to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let sweep = fs::read_to_string(p.join("sweep.csv")).unwrap();
    // Two holograms plus the pooled rows, four thresholds each.
    assert_eq!(sweep.lines().count(), 1 + 3 * 4);
    let collapsed = sweep.lines().find(|l| l.starts_with("all,1000000,")).unwrap();
    assert_eq!(collapsed.split(',').nth(4), Some("2"));
}

#[test]
fn exit_codes_distinguish_config_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let bad = bin().args(["-s", "optics.bogus=1", "bench"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2), "{}", String::from_utf8_lossy(&bad.stderr));

    let cfg_path = p.join("cfg.toml");
    fs::write(&cfg_path, "[optics]\nnx = 0\n").unwrap();
    let env = bin().env(holorecon::config::CONFIG_ENV, &cfg_path).arg("bench").output().unwrap();
    assert_eq!(env.status.code(), Some(2));

    let missing = bin().args(["sweep", "--detections", "/no/such", "--truth", "/no/such", "-o", "x"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));

    fs::write(p.join("truth.csv"), "hid,x_um,y_um,z_um,d_um\n1,10,10,20000,20\n").unwrap();
    fs::write(p.join("pred.csv"), "hid,x_um,y_um,z_um,d_um,n_members,assigned\n7,10,10,20000,20,1,false\n").unwrap();
    let mismatch = bin()
        .args(["evaluate", "--pred"])
        .arg(p.join("pred.csv"))
        .arg("--truth")
        .arg(p.join("truth.csv"))
        .arg("-o")
        .arg(p.join("eval"))
        .output()
        .unwrap();
    assert_eq!(mismatch.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("7"));

    fs::write(p.join("broken.png"), b"not an image").unwrap();
    let cfg = small();
    let args = ProcessArgs { inputs: vec![p.join("broken.png")], out: p.join("o.csv"), ..Default::default() };
    let cfg_focus = apply_override(&cfg, "segmenter.kind=focus").unwrap();
    let err = cmd_process(&cfg_focus, &args).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("broken.png"));
}

#[test]
fn bench_reports_rows_and_config_hash() {
    let cfg = small();
    let report = cmd_bench(&cfg, &BenchArgs { n_planes: 1, out: None }).unwrap();
    let reconstruct: Vec<_> = report.rows.iter().filter(|r| r.stage == "reconstruct_plane").collect();
    assert_eq!(reconstruct.len(), 2);
    assert!(reconstruct.iter().all(|r| r.n == 1 && r.sd_ms == 0.0));
    assert_eq!((reconstruct[1].nx, reconstruct[1].ny), (192, 64));
    assert!(report.scaling_ratio > 0.0);
    assert_eq!(report.cfg_hash, cfg.optics.hash());
    assert!(report.to_csv().lines().skip(1).all(|l| l.ends_with(&report.cfg_hash)));
}
