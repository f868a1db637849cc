use std::sync::Arc;

use opfenv::env::{
    sample_normal, sample_time_series, sample_uniform, DataSource, DesignConfig, EpisodeMode, InitActionMode,
    ObsMode, OffsetMode, OpfEnv, Provenance, RewardMode,
};
use opfenv::scenarios::{self, ScenarioKind};
use opfenv::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn env(kind: ScenarioKind, config: DesignConfig, seed: u64) -> OpfEnv {
    OpfEnv::new(Arc::new(scenarios::bundled(kind)), config, seed).unwrap()
}

fn column_means(draws: &[Vec<f64>]) -> Vec<f64> {
    let n = draws.len() as f64;
    (0..draws[0].len())
        .map(|j| draws.iter().map(|d| d[j]).sum::<f64>() / n)
        .collect()
}

#[test]
fn uniform_sampler_mean_is_midpoint() {
    let ranges = vec![(0.0, 1.0), (-3.0, 5.0), (20.0, 100.0), (2.0, 2.0)];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws: Vec<Vec<f64>> = (0..100_000).map(|_| sample_uniform(&ranges, &mut rng).unwrap()).collect();
    for ((lo, hi), m) in ranges.iter().zip(column_means(&draws)) {
        let width = (hi - lo).max(1e-12);
        assert!((m - 0.5 * (lo + hi)).abs() / width < 0.01, "{m}");
    }
    assert!(draws.iter().all(|d| d.iter().zip(&ranges).all(|(v, (lo, hi))| v >= lo && v <= hi)));
}

#[test]
fn normal_sampler_mean_and_spread() {
    // symmetric ranges around the mean keep the clipped mean unbiased
    let ranges = vec![(0.0, 2.0), (-10.0, 10.0)];
    let means = vec![1.0, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let draws: Vec<Vec<f64>> = (0..100_000)
        .map(|_| sample_normal(&means, &ranges, 0.1, &mut rng).unwrap())
        .collect();
    for (j, (m, mu)) in column_means(&draws).iter().zip(&means).enumerate() {
        let width = ranges[j].1 - ranges[j].0;
        assert!((m - mu).abs() / width < 0.02);
        let var = draws.iter().map(|d| (d[j] - m).powi(2)).sum::<f64>() / draws.len() as f64;
        // sigma = 0.1 * width and clipping at 5 sigma is negligible
        assert!((var.sqrt() / (0.1 * width) - 1.0).abs() < 0.02);
    }
}

#[test]
fn bad_sampler_range_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(
        sample_uniform(&[(1.0, 0.0)], &mut rng),
        Err(Error::SamplerRange { .. })
    ));
    assert!(sample_uniform(&[(0.0, f64::NAN)], &mut rng).is_err());
}

#[test]
fn time_series_draws_train_rows_only() {
    let scenario = scenarios::bundled(ScenarioKind::VoltageControl);
    let train = scenario.dataset.train_rows();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5000 {
        let s = sample_time_series(&scenario.dataset, &scenario.state_columns, &mut rng).unwrap();
        let Provenance::Row(r) = s.provenance else {
            panic!("expected a row")
        };
        assert!(train.contains(&r));
        let expect: Vec<f64> = scenario.state_columns.iter().map(|&c| scenario.dataset.rows[r][c]).collect();
        assert_eq!(s.values, expect);
    }
}

#[test]
fn sampled_states_are_reproducible_from_provenance() {
    let config = DesignConfig {
        data_source: DataSource::Uniform,
        ..DesignConfig::default()
    };
    let e = env(ScenarioKind::EcoDispatch, config, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let s = e.sample_state(&mut rng).unwrap();
        let Provenance::Sampled(seed) = s.provenance else {
            panic!("expected a sampled state")
        };
        let again = sample_uniform(e.sampler_ranges(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        assert_eq!(again, s.values);
    }
}

#[test]
fn stepping_does_not_disturb_state_sequence() {
    let config = DesignConfig {
        data_source: DataSource::Uniform,
        ..DesignConfig::default()
    };
    let mut a = env(ScenarioKind::VoltageControl, config.clone(), 11);
    let mut b = env(ScenarioKind::VoltageControl, config, 11);
    let mid: Vec<f64> = a.action_box().iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
    for _ in 0..20 {
        let oa = a.reset().unwrap();
        a.step(&mid).unwrap();
        let ob = b.reset().unwrap();
        assert_eq!(oa, ob);
        assert_eq!(a.episode().unwrap().state, b.episode().unwrap().state);
    }
}

#[test]
fn observations_are_scaled_and_pure() {
    for config in [
        DesignConfig::default(),
        DesignConfig::n_step(5),
        DesignConfig {
            obs_mode: ObsMode::Redundant,
            init_action_mode: InitActionMode::Random,
            ..DesignConfig::default()
        },
    ] {
        let mut e = env(ScenarioKind::EcoDispatch, config.clone(), 5);
        for _ in 0..20 {
            let obs = e.reset().unwrap();
            assert_eq!(obs.len(), e.observation_dim());
            assert!(obs.iter().all(|v| (-1.0..=1.0).contains(v)));
            if config.init_action_mode == InitActionMode::Fixed {
                let state = e.episode().unwrap().state.clone();
                assert_eq!(e.reset_to(state).unwrap(), obs);
            }
        }
    }
}

#[test]
fn episode_lengths_follow_mode() {
    for n in [1, 3, 5] {
        let config = if n == 1 {
            DesignConfig::default()
        } else {
            DesignConfig::n_step(n)
        };
        assert_eq!(config.episode_mode == EpisodeMode::NStep, n > 1);
        let mut e = env(ScenarioKind::VoltageControl, config, 6);
        let mid: Vec<f64> = e.action_box().iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
        for _ in 0..2 {
            e.reset().unwrap();
            for k in 1..=n {
                assert_eq!(e.step(&mid).unwrap().terminal, k == n);
            }
            assert!(matches!(e.step(&mid), Err(Error::EpisodeFinished)));
        }
    }
}

#[test]
fn rewards_follow_mode() {
    let mut sum = env(ScenarioKind::EcoDispatch, DesignConfig::default(), 8);
    let mut rep = env(
        ScenarioKind::EcoDispatch,
        DesignConfig {
            reward_mode: RewardMode::Replacement,
            offset_k: Some(1234.0),
            ..DesignConfig::default()
        },
        8,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bounds = sum.action_box();
    let (mut seen_valid, mut seen_invalid) = (false, false);
    for _ in 0..200 {
        sum.reset().unwrap();
        rep.reset().unwrap();
        let a = opfenv::env::initial_action(&bounds, InitActionMode::Random, &mut rng);
        let s = sum.step(&a).unwrap();
        let r = rep.step(&a).unwrap();
        assert_eq!(s.info.objective, r.info.objective);
        assert_eq!(s.reward, -s.info.objective - s.info.penalty);
        if r.info.valid {
            seen_valid = true;
            assert_eq!(r.info.penalty, 0.0);
            assert_eq!(r.reward, 1234.0 - r.info.objective);
        } else {
            seen_invalid = true;
            assert_eq!(r.reward, -r.info.penalty);
            assert!(r.info.penalty > 0.0);
        }
    }
    assert!(seen_valid && seen_invalid);
}

#[test]
fn replacement_offset_ranks_valid_above_invalid() {
    for mode in [OffsetMode::Min, OffsetMode::Mean] {
        let config = DesignConfig {
            reward_mode: RewardMode::Replacement,
            offset_mode: mode,
            ..DesignConfig::default()
        };
        let e = env(ScenarioKind::VoltageControl, config, 10);
        let cal = e.calibrate_offset(mode, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_eq!(cal.samples.len(), 1000);
        let objectives: Vec<f64> = cal.samples.iter().map(|s| s.objective).collect();
        let max = objectives.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = objectives.iter().sum::<f64>() / objectives.len() as f64;
        match mode {
            OffsetMode::Min => {
                assert_eq!(cal.k, max);
                // every valid sample earns at least as much as any invalid one
                let worst_valid = cal
                    .samples
                    .iter()
                    .filter(|s| s.valid)
                    .map(|s| cal.k - s.objective)
                    .fold(f64::INFINITY, f64::min);
                let best_invalid = cal
                    .samples
                    .iter()
                    .filter(|s| !s.valid)
                    .map(|s| -s.penalty)
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(worst_valid >= 0.0 && best_invalid < 0.0);
            }
            OffsetMode::Mean => assert!((cal.k - mean).abs() <= 1e-9 * mean.abs().max(1.0)),
        }
        // construction calibrates when no k is given
        assert!(e.offset_k().is_finite());
    }
}

#[test]
fn design_config_round_trips_through_toml() {
    let config = DesignConfig {
        data_source: DataSource::Normal,
        reward_mode: RewardMode::Replacement,
        offset_k: Some(3.5),
        ..DesignConfig::n_step(5)
    };
    let back = DesignConfig::from_toml_str(&config.to_toml_string()).unwrap();
    assert_eq!(back, config);
    assert!(DesignConfig::from_toml_str("no_such_key = 1").is_err());
}
