use std::path::Path;
use std::process::{Command, Output};

fn opfenv(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_opfenv"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("OPFENV_OUT")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Small and quick: cheap reference solves, a handful of test states.
const QUICK: &[&str] = &[
    "--set",
    "oracle.starts=2",
    "--set",
    "oracle.min_step=1e-4",
    "--set",
    "eval.samples=4",
];

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_writes_reproducible_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = opfenv(d.path(), &["--seed", "7", "gen-data"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(a.path().join("voltage_control.csv").exists());
    assert!(a.path().join("voltage_control.csv.meta.json").exists());
    assert_eq!(read_tree(a.path()), read_tree(b.path()));

    let o = opfenv(a.path(), &["--set", "gen_data.horizon=10", "gen-data"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizon"));
}

#[test]
fn generated_dataset_drives_a_scenario() {
    let d = tempfile::tempdir().unwrap();
    let o = opfenv(d.path(), &["--scenario", "eco-dispatch", "--seed", "3", "gen-data"]);
    assert_eq!(code(&o), 0);
    let ds = d.path().join("eco_dispatch.csv");
    let set = format!("scenario.dataset={:?}", ds.to_str().unwrap());
    let o = opfenv(
        d.path(),
        &["--scenario", "eco-dispatch", "--set", &set, "--set", "scatter.samples=50", "scatter"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(d.path().join("scatter_eco_dispatch.json").exists());
}

#[test]
fn powerflow_reports_the_two_bus_case() {
    let d = tempfile::tempdir().unwrap();
    let o = opfenv(d.path(), &["powerflow", "--grid", "two_bus"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("converged true"));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("powerflow.json")).unwrap()).unwrap();
    let vm = v["vm_pu"].as_array().unwrap();
    assert_eq!(vm[0].as_f64(), Some(1.0));
    assert!(vm[1].as_f64().unwrap() < 1.0);

    let o = opfenv(d.path(), &["powerflow", "--grid", "lv_desk", "--zero"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("powerflow.json")).unwrap()).unwrap();
    assert!(v["vm_pu"].as_array().unwrap().iter().all(|x| (x.as_f64().unwrap() - 1.0).abs() < 1e-6));
}

#[test]
fn malformed_inputs_exit_with_config_code() {
    let d = tempfile::tempdir().unwrap();
    let bad = d.path().join("bad.grid");
    std::fs::write(&bad, "base_mva = \"ten\"\n").unwrap();
    assert_eq!(code(&opfenv(d.path(), &["powerflow", "--grid", bad.to_str().unwrap()])), 2);
    assert_eq!(code(&opfenv(d.path(), &["--set", "train.no_such=1", "train"])), 2);
    assert_eq!(code(&opfenv(d.path(), &["--set", "train.steps=lots", "train"])), 2);
    assert_eq!(code(&opfenv(d.path(), &["--set", "env.episode_mode=n_step", "--set", "env.n_steps=5", "train"])), 2);
    let cfg = d.path().join("c.toml");
    std::fs::write(&cfg, "[train]\nsteps = 10\nwhat = 1\n").unwrap();
    assert_eq!(code(&opfenv(d.path(), &["--config", cfg.to_str().unwrap(), "train"])), 2);
    // missing files are not config errors
    assert_eq!(code(&opfenv(d.path(), &["powerflow", "--grid", "/nonexistent/x.grid"])), 1);
}

#[test]
fn output_root_comes_from_the_environment() {
    let d = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_opfenv"))
        .args(["powerflow", "--grid", "two_bus"])
        .env("OPFENV_OUT", d.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(d.path().join("powerflow.json").exists());
}

#[test]
fn oracle_second_call_hits_the_cache() {
    let d = tempfile::tempdir().unwrap();
    let args: Vec<&str> = QUICK.iter().copied().chain(["oracle"]).collect();
    let first = opfenv(d.path(), &args);
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    assert!(stdout(&first).contains("4 solved"));
    let second = opfenv(d.path(), &args);
    assert!(stdout(&second).contains("0 solved, 4 from cache"));
}

fn train_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v: Vec<&str> = QUICK.to_vec();
    v.extend([
        "--set",
        "train.steps=2000",
        "--set",
        "ddpg.warmup_steps=500",
        "--set",
        "ddpg.eval_interval=1000",
    ]);
    v.extend_from_slice(extra);
    v.push("train");
    v
}

#[test]
fn train_smoke_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = opfenv(d.path(), &train_args(&["--seed", "4", "--deterministic"]));
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(a.path().join("policy.json").exists());
    assert_eq!(read_tree(a.path()), read_tree(b.path()));

    // the saved policy evaluates through the evaluate subcommand
    let policy = a.path().join("policy.json");
    let mut args: Vec<&str> = QUICK.to_vec();
    args.extend(["evaluate", "--policy", policy.to_str().unwrap()]);
    let o = opfenv(a.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(a.path().join("evaluation.json").exists());
}

#[test]
fn unstable_training_exits_with_divergence_code() {
    let d = tempfile::tempdir().unwrap();
    let o = opfenv(
        d.path(),
        &train_args(&[
            "--set",
            "ddpg.actor_lr=10",
            "--set",
            "ddpg.critic_lr=10",
            "--set",
            "ddpg.reward_scale=1e300",
        ]),
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
}

#[test]
fn reward_sweep_emits_one_row_per_run_and_resumes() {
    let d = tempfile::tempdir().unwrap();
    let mut args: Vec<&str> = QUICK.to_vec();
    args.extend([
        "--deterministic",
        "--set",
        "sweep.variants=[\"summation\",\"summation_10x\",\"replacement_min\",\"replacement_mean\"]",
        "--set",
        "sweep.seeds=[1,2]",
        "--set",
        "sweep.steps=400",
        "--set",
        "ddpg.warmup_steps=200",
        "--set",
        "ddpg.eval_interval=400",
        "sweep",
        "--jobs",
        "2",
    ]);
    let o = opfenv(d.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(d.path().join("sweep/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 2);
    let before = read_tree(d.path());

    // drop one run, rerun: only that run is recomputed and the files match
    std::fs::remove_file(d.path().join("sweep/replacement_min__seed2.result")).unwrap();
    let o = opfenv(d.path(), &args);
    assert_eq!(code(&o), 0);
    assert_eq!(read_tree(d.path()), before);
}
