use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
out_dir = "out"
seeds = [1, 2]
[scenario]
train_days = 3
eval_days = 2
[training]
episodes = 3
[agent]
hidden = [8, 8]
batch_size = 16
warmup_steps = 24
"#;

fn cbatt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbatt"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn cbatt")
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

#[test]
fn synth_writes_both_scenarios_reproducibly() {
    let dir = setup(SMALL);
    assert!(cbatt(dir.path(), &["--config", "run.toml", "synth"]).status.success());
    let train = fs::read_to_string(dir.path().join("out/scenario_train.csv")).unwrap();
    let eval = fs::read_to_string(dir.path().join("out/scenario_eval.csv")).unwrap();
    assert_eq!(train.lines().count(), 1 + 72);
    assert_eq!(eval.lines().count(), 1 + 48);
    assert!(cbatt(dir.path(), &["--config", "run.toml", "synth"]).status.success());
    assert_eq!(fs::read_to_string(dir.path().join("out/scenario_train.csv")).unwrap(), train);
}

#[test]
fn train_then_compare_is_deterministic() {
    let dir = setup(SMALL);
    assert!(cbatt(dir.path(), &["--config", "run.toml", "train"]).status.success());
    for name in ["sac_seed1", "sac_seed2", "ddpg_seed1", "ddpg_seed2"] {
        assert!(dir.path().join(format!("out/checkpoints/{name}.json")).exists());
        let log = fs::read_to_string(dir.path().join(format!("out/logs/{name}.csv"))).unwrap();
        let lines: Vec<&str> = log.lines().collect();
        assert!(lines[0].starts_with("# config_hash="));
        assert_eq!(lines[1], "episode,cum_reward,energy_cost,violation_count");
        assert_eq!(lines.len(), 2 + 3);
    }
    let out = cbatt(dir.path(), &["--config", "run.toml", "compare"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = fs::read(dir.path().join("out/report.csv")).unwrap();
    let seeds = fs::read(dir.path().join("out/report_seeds.csv")).unwrap();
    assert!(cbatt(dir.path(), &["--config", "run.toml", "compare"]).status.success());
    assert_eq!(fs::read(dir.path().join("out/report.csv")).unwrap(), first);
    assert_eq!(fs::read(dir.path().join("out/report_seeds.csv")).unwrap(), seeds);

    let text = String::from_utf8(first).unwrap();
    let methods: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(methods, ["greedy", "dp", "mpc", "sac", "ddpg"]);
}

#[test]
fn noisy_flag_changes_logged_hash() {
    let dir = setup(SMALL);
    let plain = SMALL.replace("[agent]\n", "[agent]\nnoisy_net = false\n");
    fs::write(dir.path().join("plain.toml"), plain).unwrap();
    let header = |cfg: &str, out: &str| {
        let o = cbatt(dir.path(), &["--config", cfg, "--seed", "1", "--out-dir", out, "train"]);
        assert!(o.status.success());
        let log = fs::read_to_string(dir.path().join(out).join("logs/sac_seed1.csv")).unwrap();
        log.lines().next().unwrap().to_string()
    };
    let a = header("run.toml", "a");
    let b = header("plain.toml", "b");
    assert!(a.contains("noisy_net=true") && b.contains("noisy_net=false"));
    let hash = |h: &str| h.split_whitespace().nth(1).unwrap().to_string();
    assert_ne!(hash(&a), hash(&b));
}

#[test]
fn trace_rows_match_one_day() {
    let dir = setup(SMALL);
    let out = cbatt(dir.path(), &["--config", "run.toml", "trace", "--source", "greedy", "--day", "1"]);
    assert!(out.status.success());
    let text = fs::read_to_string(dir.path().join("out/traces/trace_greedy_day1.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 24);
}

#[test]
fn exit_codes() {
    let dir = setup(SMALL);
    let code = |args: &[&str]| cbatt(dir.path(), args).status.code();
    assert_eq!(code(&["--config", "missing.toml", "synth"]), Some(2));
    assert_eq!(code(&["--config", "run.toml", "trace", "--day", "9"]), Some(2));
    assert_eq!(code(&["--config", "run.toml", "compare"]), Some(1));
    fs::write(dir.path().join("bad.toml"), "[battery]\ne_min = 900.0\n").unwrap();
    assert_eq!(code(&["--config", "bad.toml", "synth"]), Some(2));
    assert_eq!(code(&["--config", "run.toml", "gradcheck", "--count", "4"]), Some(0));
}

#[test]
fn divergence_exits_with_three_and_keeps_partial_log() {
    let huge_rewards = SMALL.replace("[agent]\n", "[agent]\nreward_scale = 1e300\n");
    let dir = setup(&huge_rewards.replace("episodes = 3", "episodes = 40"));
    let out = cbatt(dir.path(), &["--config", "run.toml", "--seed", "1", "train"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(dir.path().join("out/logs/sac_seed1.csv")).unwrap();
    assert!(log.lines().count() >= 2);
}
