//! Synthetic daily load and generation profiles standing in for measured
//! time series.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Column, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileClass {
    /// Evening peak.
    Household,
    /// Midday plateau.
    Commercial,
}

// Hourly knots, midnight to midnight; expanded to 96 quarter-hour points.
const HOUSEHOLD_KNOTS: [f64; 25] = [
    0.35, 0.30, 0.28, 0.27, 0.27, 0.30, 0.45, 0.65, 0.60, 0.50, 0.45, 0.45, 0.50, 0.48, 0.45,
    0.45, 0.50, 0.65, 0.85, 1.00, 0.95, 0.80, 0.60, 0.45, 0.35,
];
const COMMERCIAL_KNOTS: [f64; 25] = [
    0.30, 0.28, 0.27, 0.27, 0.28, 0.30, 0.40, 0.60, 0.85, 0.95, 1.00, 1.00, 0.95, 1.00, 0.98,
    0.95, 0.85, 0.70, 0.50, 0.40, 0.35, 0.33, 0.32, 0.30, 0.30,
];

fn expand(knots: &[f64; 25]) -> [f64; 96] {
    let mut out = [0.0; 96];
    for (i, v) in out.iter_mut().enumerate() {
        let h = i / 4;
        let frac = (i % 4) as f64 / 4.0;
        *v = knots[h] + frac * (knots[h + 1] - knots[h]);
    }
    out
}

impl ProfileClass {
    pub fn archetype(self) -> [f64; 96] {
        match self {
            ProfileClass::Household => expand(&HOUSEHOLD_KNOTS),
            ProfileClass::Commercial => expand(&COMMERCIAL_KNOTS),
        }
    }

    /// Shape value at `minute` past midnight, linear between quarter-hours.
    pub fn value_at(self, minute: f64) -> f64 {
        let shape = self.archetype();
        let pos = (minute.rem_euclid(1440.0)) / 15.0;
        let i = pos.floor() as usize % 96;
        let j = (i + 1) % 96;
        let frac = pos - pos.floor();
        shape[i] + frac * (shape[j] - shape[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadProfile {
    /// Signed peak power; negative values describe feed-in.
    pub base_p_mw: f64,
    pub class: ProfileClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorProfile {
    pub s_max_mva: f64,
    /// Active output peaks at this fraction of `s_max_mva`.
    pub p_fraction: f64,
    pub class: ProfileClass,
    pub price_active: (f64, f64),
    pub price_reactive: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticProfileConfig {
    pub horizon: usize,
    pub timestep_minutes: u32,
    pub loads: Vec<LoadProfile>,
    pub generators: Vec<GeneratorProfile>,
    pub noise: f64,
    pub power_factor: f64,
    pub seed: u64,
}

impl SyntheticProfileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 100 {
            return Err(Error::Config(format!("horizon {} < 100", self.horizon)));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(Error::Config(format!("noise {} outside [0, 1]", self.noise)));
        }
        if self.timestep_minutes == 0 {
            return Err(Error::Config("timestep_minutes must be positive".into()));
        }
        if !(self.power_factor > 0.0 && self.power_factor <= 1.0) {
            return Err(Error::Config("power_factor must be in (0, 1]".into()));
        }
        for g in &self.generators {
            for (lo, hi) in [g.price_active, g.price_reactive] {
                if lo > hi || lo < 0.0 {
                    return Err(Error::Config(format!("bad price range [{lo}, {hi}]")));
                }
            }
        }
        Ok(())
    }

    pub fn rows_per_day(&self) -> usize {
        (1440 / self.timestep_minutes) as usize
    }
}

pub fn load_column(index: usize, quantity: &str) -> String {
    format!("load{index}:{quantity}")
}

pub fn gen_column(index: usize, quantity: &str) -> String {
    format!("gen{index}:{quantity}")
}

pub fn generate_profiles(config: &SyntheticProfileConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let tan_phi = config.power_factor.acos().tan();

    let mut names = Vec::new();
    for i in 0..config.loads.len() {
        names.push(load_column(i, "p_mw"));
        names.push(load_column(i, "q_mvar"));
    }
    for g in 0..config.generators.len() {
        names.push(gen_column(g, "p_mw"));
        names.push(gen_column(g, "price_active"));
        names.push(gen_column(g, "price_reactive"));
    }

    let mut rows = Vec::with_capacity(config.horizon);
    for r in 0..config.horizon {
        let minute = (r as f64) * f64::from(config.timestep_minutes);
        let mut row = Vec::with_capacity(names.len());
        for load in &config.loads {
            let u: f64 = rng.random_range(-1.0..=1.0);
            let p = load.base_p_mw * load.class.value_at(minute) * (1.0 + config.noise * u);
            row.push(p);
            row.push(p * tan_phi);
        }
        for g in &config.generators {
            let u: f64 = rng.random_range(-1.0..=1.0);
            let cap = g.p_fraction * g.s_max_mva;
            let p = (cap * g.class.value_at(minute) * (1.0 + config.noise * u)).clamp(0.0, cap);
            row.push(p);
            row.push(draw(&mut rng, g.price_active));
            row.push(draw(&mut rng, g.price_reactive));
        }
        rows.push(row);
    }

    let columns = names.into_iter().map(Column::new).collect();
    Ok(Dataset::new(columns, rows))
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(noise: f64, base: f64) -> SyntheticProfileConfig {
        SyntheticProfileConfig {
            horizon: 96 * 3,
            timestep_minutes: 15,
            loads: vec![
                LoadProfile { base_p_mw: base, class: ProfileClass::Household },
                LoadProfile { base_p_mw: base, class: ProfileClass::Commercial },
            ],
            generators: vec![GeneratorProfile {
                s_max_mva: 2.0,
                p_fraction: 0.8,
                class: ProfileClass::Commercial,
                price_active: (20.0, 100.0),
                price_reactive: (0.0, 1.0),
            }],
            noise,
            power_factor: 0.95,
            seed: 3,
        }
    }

    #[test]
    fn archetypes_peak_at_one() {
        for class in [ProfileClass::Household, ProfileClass::Commercial] {
            let shape = class.archetype();
            let max = shape.iter().cloned().fold(f64::MIN, f64::max);
            assert_eq!(max, 1.0);
            assert!(shape.iter().all(|v| *v > 0.0));
        }
        assert_eq!(ProfileClass::Household.value_at(19.0 * 60.0), 1.0);
        assert_eq!(ProfileClass::Household.value_at(1440.0), 0.35);
    }

    #[test]
    fn noiseless_days_repeat() {
        let cfg = config(0.0, 1.0);
        let ds = generate_profiles(&cfg).unwrap();
        let period = cfg.rows_per_day();
        let load_cols: Vec<usize> = (0..4).collect();
        for r in 0..ds.n_rows() - period {
            for &c in &load_cols {
                assert_eq!(ds.rows[r][c], ds.rows[r + period][c]);
            }
        }
    }

    #[test]
    fn zero_base_gives_zero_loads() {
        let ds = generate_profiles(&config(0.2, 0.0)).unwrap();
        for row in &ds.rows {
            assert!(row[..4].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn reactive_follows_power_factor() {
        let ds = generate_profiles(&config(0.2, 1.0)).unwrap();
        let tan_phi = 0.95_f64.acos().tan();
        for row in &ds.rows {
            assert!((row[1] - row[0] * tan_phi).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_output_within_cap() {
        let ds = generate_profiles(&config(0.5, 1.0)).unwrap();
        for row in &ds.rows {
            assert!(row[4] >= 0.0 && row[4] <= 1.6);
            assert!((20.0..=100.0).contains(&row[5]));
            assert!((0.0..=1.0).contains(&row[6]));
        }
    }

    #[test]
    fn short_horizon_rejected() {
        let mut cfg = config(0.1, 1.0);
        cfg.horizon = 10;
        assert!(matches!(generate_profiles(&cfg), Err(Error::Config(_))));
        cfg.horizon = 200;
        cfg.noise = 1.5;
        assert!(generate_profiles(&cfg).is_err());
    }

    #[test]
    fn same_seed_same_rows() {
        let a = generate_profiles(&config(0.1, 1.0)).unwrap();
        let b = generate_profiles(&config(0.1, 1.0)).unwrap();
        assert_eq!(a, b);
    }
}
