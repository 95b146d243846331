use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;
use serde_json::Value;
use vqbet::data::{Trajectory, TrajectoryDataset};
use vqbet_cli::RunConfig;

fn vqbet(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vqbet")).arg("--out").arg(out).args(args).output().unwrap()
}

fn summary(o: &Output) -> Value {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn error_line(o: &Output) -> Value {
    let err = String::from_utf8_lossy(&o.stderr);
    let line = err.lines().last().unwrap();
    serde_json::from_str(line).unwrap()
}

#[test]
fn gen_data_is_bit_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        summary(&vqbet(d.path(), &["gen-data", "four_goal", "count=10", "seed=7"]));
    }
    for f in ["data.vqbd", "data.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let ds = TrajectoryDataset::read(&a.path().join("data.vqbd")).unwrap();
    assert_eq!(ds.num_trajectories(), 10);
    // the resolved config sits beside the outputs and parses back
    let resolved = std::fs::read_to_string(a.path().join("gen-data.config")).unwrap();
    assert_eq!(RunConfig::parse(&resolved).unwrap().count(), 10);
}

#[test]
fn train_rvq_memorizes_four_chunks() {
    let dir = tempfile::tempdir().unwrap();
    let corners = [[0.5f32, 0.5], [-0.5, 0.5], [-0.5, -0.5], [0.5, -0.5]];
    let actions: Vec<f32> = (0..64).flat_map(|t| corners[t % 4]).collect();
    let traj = Trajectory { observations: vec![0.0; 128], actions };
    TrajectoryDataset::new(2, 2, vec![traj]).unwrap().write(&dir.path().join("data.vqbd")).unwrap();
    let o = vqbet(dir.path(), &["train-rvq", "rvq_train.steps=2000", "rvq_train.batch_size=16", "rvq.latent_dim=8", "rvq.hidden=64", "seed=3"]);
    let s = summary(&o);
    let recon = s["recon_l1"].as_f64().unwrap();
    assert!(recon <= 1e-2, "recon {recon}");
    let log = std::fs::read_to_string(dir.path().join("rvq_log.csv")).unwrap();
    assert!(log.starts_with("step,lr,recon,embed,commit,total,resets,util_0,util_1\n"));
}

#[test]
fn untrained_codebook_has_every_combination() {
    let dir = tempfile::tempdir().unwrap();
    summary(&vqbet(dir.path(), &["gen-data", "detour", "count=2"]));
    summary(&vqbet(dir.path(), &["train-rvq", "rvq_train.steps=0"]));
    summary(&vqbet(dir.path(), &["inspect-codebook"]));
    let mut r = csv::Reader::from_path(dir.path().join("codebook.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 64);
    for row in &rows {
        assert!(row.iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
    }
    assert!(std::fs::read_to_string(dir.path().join("codebook.svg")).unwrap().contains("<svg"));
}

#[test]
fn errors_are_one_json_line_with_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = vqbet(dir.path(), &["gen-data", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(error_line(&o)["error"], "config");

    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# comment\nseed=1\nrvq.bogus=3\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_vqbet")).arg("--config").arg(&cfg).args(["gen-data"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(error_line(&o)["message"].as_str().unwrap().contains("rvq.bogus"));

    // missing dataset is a data error
    let o = vqbet(dir.path(), &["train-rvq"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_line(&o)["exit_code"], 3);

    std::fs::write(dir.path().join("data.vqbd"), b"VQB1 not really").unwrap();
    let o = vqbet(dir.path(), &["train-rvq"]);
    assert_eq!(o.status.code(), Some(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn run_config_parse_never_panics(text in "(#?[a-z_.]{0,16}=?[a-z0-9_.,:/-]{0,8}\\n){0,6}") {
        if let Ok(cfg) = RunConfig::parse(&text) {
            prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap().to_text(), cfg.to_text());
        }
    }

    #[test]
    fn arbitrary_text_is_rejected_cleanly(text in "\\PC*") {
        let _ = RunConfig::parse(&text);
    }
}
