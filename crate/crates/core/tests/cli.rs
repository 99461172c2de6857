//! End-to-end command-line checks through the public dispatch entry point.

use roam::cli::dispatch;
use std::path::PathBuf;

fn args(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn tmp(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn gen_map_is_deterministic_and_reports_visitable_states() {
    let dir = tmp("cli_gen_map");
    let a = dir.join("a.txt");
    let b = dir.join("b.txt");
    assert_eq!(
        dispatch(&args(&["gen-map", "--seed", "9", "--out", a.to_str().unwrap(), "--rooms", "4"])),
        0
    );
    assert_eq!(
        dispatch(&args(&["gen-map", "--seed", "9", "--out", b.to_str().unwrap(), "--rooms", "4"])),
        0
    );
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let text = std::fs::read_to_string(&a).unwrap();
    assert!(text.contains('S'));
    assert!(text.starts_with('#'));
}

#[test]
fn run_with_missing_config_fails_without_artifacts() {
    let dir = tmp("cli_missing_config");
    let out = dir.join("should_not_exist");
    let code = dispatch(&args(&[
        "run",
        "--config",
        dir.join("missing.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    assert_ne!(code, 0);
    assert!(!out.exists(), "failed runs must not leave artifacts");
}

#[test]
fn unknown_flags_and_commands_are_rejected() {
    assert_ne!(dispatch(&args(&["run", "--bogus", "x"])), 0);
    assert_ne!(dispatch(&args(&["frobnicate"])), 0);
    assert_ne!(dispatch(&args(&["gen-map", "--seed", "1"])), 0); // missing --out
}

#[test]
fn self_report_has_unit_ratio() {
    let dir = tmp("cli_self_report");
    let run_dir = dir.join("run_a");
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{
            "seed": 4, "agent": "random", "episodes": 2,
            "steps_per_episode": 50, "updates_per_episode": 0,
            "sim": {"obs_width": 6, "obs_height": 6, "fov_deg": 90.0, "headings": 8, "collision_channel": false},
            "map": {"source": "generate", "spec": {"width": 9, "height": 9, "rooms": 2, "door_width": 1}, "map_seed": 3}
        }"#,
    )
    .unwrap();
    assert_eq!(
        dispatch(&args(&["run", "--config", config.to_str().unwrap(), "--out", run_dir.to_str().unwrap()])),
        0
    );
    let report_dir = dir.join("report");
    assert_eq!(
        dispatch(&args(&[
            "report",
            "--runs",
            run_dir.to_str().unwrap(),
            run_dir.to_str().unwrap(),
            "--out",
            report_dir.to_str().unwrap(),
        ])),
        0
    );
    let summary = std::fs::read_to_string(report_dir.join("comparison_summary.csv")).unwrap();
    let data_lines: Vec<&str> = summary.lines().skip(1).take(2).collect();
    for line in data_lines {
        assert!(line.ends_with(",1.000000"), "self-comparison ratio must be 1.0: {line}");
    }
    assert!(report_dir.join("comparison.csv").exists());
}

#[test]
fn gradcheck_command_passes() {
    // One round keeps the runtime small; the library test covers ten.
    assert_eq!(dispatch(&args(&["gradcheck", "--seed", "7", "--rounds", "1"])), 0);
}

#[test]
fn probe_command_runs_against_a_recorded_mutation() {
    let dir = tmp("cli_probe");
    let run_dir = dir.join("run");
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{
            "seed": 6, "agent": "curiosity", "episodes": 3,
            "steps_per_episode": 40, "updates_per_episode": 3,
            "sim": {"obs_width": 6, "obs_height": 6, "fov_deg": 90.0, "headings": 8, "collision_channel": false},
            "wm": {"obs_dim": 108, "embed_dim": 16, "hidden_dim": 24, "hidden_layers": 1,
                   "gru_dim": 12, "latent_groups": 2, "latent_classes": 4, "free_nats": 1.0, "kl_balance": 0.8},
            "policy": {"hidden_dim": 24, "hidden_layers": 1, "horizon": 5, "gamma": 0.99, "lambda": 0.95,
                       "entropy_scale": 0.0001, "actor_critic_lr": 0.00008, "reward_head_lr": 0.0003,
                       "slow_critic_interval": 100},
            "train": {"batch_size": 4, "seq_len": 8, "wm_lr": 0.0003, "imagination_batch": 6,
                      "buffer_capacity_steps": null},
            "map": {"source": "generate", "spec": {"width": 9, "height": 9, "rooms": 1, "door_width": 1}, "map_seed": 8},
            "mutations": [{"episode": 2, "mutation": {"kind": "add_obstacle", "cell": [4, 2]}}]
        }"#,
    )
    .unwrap();
    let code = dispatch(&args(&["run", "--config", config.to_str().unwrap(), "--out", run_dir.to_str().unwrap()]));
    assert_eq!(code, 0);
    assert!(run_dir.join("probe_ep2.csv").exists());

    let probe_out = dir.join("probe_out");
    assert_eq!(
        dispatch(&args(&[
            "probe",
            "--run",
            run_dir.to_str().unwrap(),
            "--out",
            probe_out.to_str().unwrap(),
        ])),
        0
    );
    let csv = std::fs::read_to_string(probe_out.join("probe.csv")).unwrap();
    assert!(csv.starts_with("col,row,heading,affected,error\n"));
    assert!(csv.lines().count() > 10);
}
