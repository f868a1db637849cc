use std::sync::Arc;

use opfenv::env::{DesignConfig, OpfEnv};
use opfenv::eval::{
    evaluate_policy, export_results, run_experiment, select_test_rows, ExperimentPlan, OracleCache,
    OracleController, RandomController, Variant, RESULTS_HEADER,
};
use opfenv::opf::{OracleSettings, PenaltyFactors};
use opfenv::par::Execution;
use opfenv::rl::DdpgConfig;
use opfenv::scenarios::{self, ScenarioKind};
use opfenv::Error;

/// Fewer starts and a coarser stop keep the reference solves cheap; the
/// tests here only need a fixed reference, not the best one.
fn quick_settings() -> OracleSettings {
    OracleSettings {
        starts: 2,
        min_step: 1e-4,
        ..OracleSettings::default()
    }
}

fn env_for(kind: ScenarioKind) -> OpfEnv {
    OpfEnv::new(Arc::new(scenarios::bundled(kind)), DesignConfig::default(), 1).unwrap()
}

#[test]
fn oracle_controller_has_zero_error() {
    let mut env = env_for(ScenarioKind::VoltageControl);
    let rows = select_test_rows(&env.scenario().dataset, 6);
    let cache = OracleCache::in_memory(quick_settings());
    assert_eq!(cache.ensure(env.scenario(), &rows, Execution::Sequential).unwrap(), 6);
    let report = evaluate_policy(&mut OracleController { cache: &cache }, &mut env, &rows, &cache).unwrap();
    assert_eq!(report.n_samples, 6);
    assert!(report.mape_percent.unwrap() < 1e-9);
    for s in &report.samples {
        assert_eq!(s.valid, s.oracle_valid);
    }
}

#[test]
fn random_actions_break_more_dispatch_constraints_than_the_oracle() {
    let mut env = env_for(ScenarioKind::EcoDispatch);
    let rows = select_test_rows(&env.scenario().dataset, 8);
    let cache = OracleCache::in_memory(quick_settings());
    cache.ensure(env.scenario(), &rows, Execution::Parallel).unwrap();
    let oracle = evaluate_policy(&mut OracleController { cache: &cache }, &mut env, &rows, &cache).unwrap();
    let random = evaluate_policy(&mut RandomController::new(3), &mut env, &rows, &cache).unwrap();
    assert!(
        random.invalid_share_percent > oracle.invalid_share_percent,
        "{} vs {}",
        random.invalid_share_percent,
        oracle.invalid_share_percent
    );
    assert_eq!(random.test_set_hash, oracle.test_set_hash);
}

#[test]
fn evaluation_guards_its_inputs() {
    let mut env = env_for(ScenarioKind::VoltageControl);
    let cache = OracleCache::in_memory(quick_settings());
    let split = env.scenario().dataset.split_index;
    let err = evaluate_policy(&mut RandomController::new(0), &mut env, &[split - 1], &cache).unwrap_err();
    assert!(err.is_config_error());
    let err = evaluate_policy(&mut RandomController::new(0), &mut env, &[split], &cache).unwrap_err();
    assert!(matches!(err, Error::OracleMissing(_)));
    assert!(evaluate_policy(&mut RandomController::new(0), &mut env, &[], &cache).is_err());
}

#[test]
fn disk_cache_survives_reload() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenarios::bundled(ScenarioKind::VoltageControl);
    let rows = select_test_rows(&scenario.dataset, 3);
    let first = OracleCache::on_disk(dir.path(), quick_settings());
    assert_eq!(first.ensure(&scenario, &rows, Execution::Sequential).unwrap(), 3);
    let second = OracleCache::on_disk(dir.path(), quick_settings());
    assert_eq!(second.ensure(&scenario, &rows, Execution::Sequential).unwrap(), 0);
    for &r in &rows {
        assert_eq!(first.require(&scenario, r).unwrap(), second.require(&scenario, r).unwrap());
    }
}

fn tiny_plan(variants: Vec<Variant>, seeds: Vec<u64>) -> ExperimentPlan {
    ExperimentPlan {
        variants,
        seeds,
        steps: 300,
        eval_samples: 3,
        ddpg: DdpgConfig {
            warmup_steps: 100,
            eval_interval: 300,
            batch_size: 16,
            actor_hidden: vec![16],
            critic_hidden: vec![16],
            ..DdpgConfig::desk()
        },
        deterministic: true,
    }
}

#[test]
fn sweep_covers_every_pair_and_resumes() {
    let scenario = Arc::new(scenarios::bundled(ScenarioKind::VoltageControl));
    let variants: Vec<Variant> = opfenv::eval::design_variants(500.0)
        .into_iter()
        .filter(|v| v.id == "summation" || v.id == "replacement_mean")
        .collect();
    let plan = tiny_plan(variants, vec![1, 2, 3]);
    let cache = OracleCache::in_memory(quick_settings());
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");

    let results = run_experiment(&scenario, &plan, &cache, Some(&runs), Execution::Parallel).unwrap();
    assert_eq!(results.len(), 6);
    assert!(results.iter().all(|r| r.report.is_some() && !r.diverged && r.wall_clock_s == 0.0));

    // a second pass loads every run from disk
    let stamp = |p: &std::path::Path| std::fs::metadata(p).unwrap().modified().unwrap();
    let files: Vec<_> = std::fs::read_dir(&runs).unwrap().map(|e| e.unwrap().path()).collect();
    let before: Vec<_> = files.iter().map(|p| stamp(p)).collect();
    let again = run_experiment(&scenario, &plan, &cache, Some(&runs), Execution::Sequential).unwrap();
    assert_eq!(again, results);
    assert_eq!(files.iter().map(|p| stamp(p)).collect::<Vec<_>>(), before);

    // a deleted run is retrained to the same result
    std::fs::remove_file(runs.join(opfenv::eval::result_file_name("summation", 2))).unwrap();
    let resumed = run_experiment(&scenario, &plan, &cache, Some(&runs), Execution::Sequential).unwrap();
    assert_eq!(resumed, results);

    let out = dir.path().join("nested/export");
    let csv = export_results(&results, &out).unwrap();
    let first = std::fs::read(&csv).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert_eq!(text.lines().next(), Some(RESULTS_HEADER));
    assert_eq!(text.lines().count(), 7);
    export_results(&results, &out).unwrap();
    assert_eq!(std::fs::read(&csv).unwrap(), first);
}

#[test]
fn diverged_run_is_isolated() {
    let scenario = Arc::new(scenarios::bundled(ScenarioKind::VoltageControl));
    let huge = Variant::new(
        "huge_penalty",
        DesignConfig {
            penalty_factors: Some(PenaltyFactors::uniform(1e306)),
            ..DesignConfig::default()
        },
    );
    let plan = tiny_plan(vec![Variant::new("summation", DesignConfig::default()), huge], vec![5]);
    let cache = OracleCache::in_memory(quick_settings());
    let results = run_experiment(&scenario, &plan, &cache, None, Execution::Sequential).unwrap();
    assert!(!results[0].diverged && results[0].report.is_some());
    assert!(results[1].diverged && results[1].report.is_none());
    assert!(results[1].log.diverged_at.is_some());
}

#[test]
fn plan_validation() {
    let mut plan = tiny_plan(vec![Variant::new("a", DesignConfig::default())], vec![1, 1]);
    assert!(plan.validate().is_err());
    plan.seeds = vec![1];
    assert!(plan.validate().is_ok());
    plan.variants.push(Variant::new("a", DesignConfig::default()));
    assert!(plan.validate().is_err());
}
