//! Synthetic hourly regional load, wind and solar series.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::PowerFlowError;
use crate::grid::{GridGraph, Technology};

/// First and last daylight hour of the synthetic day (inclusive).
pub const SUNRISE_HOUR: usize = 6;
pub const SUNSET_HOUR: usize = 19;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    /// Relative amplitude of the daily load cycle.
    pub diurnal_amplitude: f64,
    /// Relative amplitude of the weekly load cycle.
    pub weekly_amplitude: f64,
    pub load_ar: f64,
    /// Stationary standard deviation of the relative load noise.
    pub load_noise: f64,
    pub wind_ar: f64,
    /// Rayleigh scale of the hub-height wind speed (m/s).
    pub wind_speed_scale: f64,
    pub cloud_ar: f64,
    pub cloud_noise: f64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig {
            diurnal_amplitude: 0.15,
            weekly_amplitude: 0.05,
            load_ar: 0.9,
            load_noise: 0.03,
            wind_ar: 0.95,
            wind_speed_scale: 7.5,
            cloud_ar: 0.85,
            cloud_noise: 0.25,
        }
    }
}

/// Region × hour series in MW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSeries {
    pub load: Vec<Vec<f64>>,
    pub wind: Vec<Vec<f64>>,
    pub solar: Vec<Vec<f64>>,
}

impl ProfileSeries {
    pub fn n_regions(&self) -> usize {
        self.load.len()
    }

    pub fn horizon(&self) -> usize {
        self.load.first().map_or(0, Vec::len)
    }

    pub fn total_load(&self, t: usize) -> f64 {
        self.load.iter().map(|r| r[t]).sum()
    }

    pub fn total_renewable(&self, t: usize) -> f64 {
        self.wind.iter().chain(&self.solar).map(|r| r[t]).sum()
    }
}

/// Stationary AR(1) with unit marginal variance.
struct Ar1 {
    coef: f64,
    state: f64,
}

impl Ar1 {
    fn new(coef: f64, rng: &mut ChaCha8Rng) -> Self {
        let state: f64 = StandardNormal.sample(rng);
        Ar1 { coef, state }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        let e: f64 = StandardNormal.sample(rng);
        self.state = self.coef * self.state + (1.0 - self.coef * self.coef).sqrt() * e;
        self.state
    }
}

/// Clear-sky shape: a half sine over the daylight hours, zero at night.
pub fn clear_sky(hour_of_day: usize) -> f64 {
    if (SUNRISE_HOUR..=SUNSET_HOUR).contains(&hour_of_day) {
        let span = (SUNSET_HOUR - SUNRISE_HOUR + 1) as f64;
        (PI * ((hour_of_day - SUNRISE_HOUR) as f64 + 0.5) / span).sin()
    } else {
        0.0
    }
}

/// Cubic power curve with 3 m/s cut-in, 12 m/s rated and 25 m/s cut-out.
fn wind_power_curve(speed: f64) -> f64 {
    const CUT_IN: f64 = 3.0;
    const RATED: f64 = 12.0;
    const CUT_OUT: f64 = 25.0;
    if !(CUT_IN..CUT_OUT).contains(&speed) {
        0.0
    } else if speed >= RATED {
        1.0
    } else {
        ((speed - CUT_IN) / (RATED - CUT_IN)).powi(3)
    }
}

/// Per-region nominal load and installed wind/solar capacity (MW).
pub fn regional_capacity(grid: &GridGraph) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let r = grid.n_regions();
    let mut load = vec![0.0; r];
    let mut wind = vec![0.0; r];
    let mut solar = vec![0.0; r];
    for b in grid.buses() {
        load[b.region as usize] += b.load_mw;
    }
    for g in grid.generators() {
        let region = grid.buses()[g.bus].region as usize;
        match g.technology {
            Technology::Wind => wind[region] += g.p_max,
            Technology::Solar => solar[region] += g.p_max,
            _ => {}
        }
    }
    (load, wind, solar)
}

/// Load: nominal × (1 + diurnal + weekly + AR(1) noise), clipped at zero.
/// Solar: capacity × clear-sky half sine × AR(1) cloud factor.
/// Wind: capacity × power curve of a Rayleigh speed built from two AR(1)
/// components. Each region draws from its own stream of the seeded RNG.
pub fn synthesize_profiles(
    grid: &GridGraph,
    horizon_hours: usize,
    seed: u64,
    cfg: &ProfileConfig,
) -> Result<ProfileSeries, PowerFlowError> {
    if horizon_hours < 49 {
        return Err(PowerFlowError::Dimension(format!(
            "horizon of {horizon_hours} h is shorter than one 48-step window plus target"
        )));
    }
    let (base, wind_cap, solar_cap) = regional_capacity(grid);
    let regions = base.len();
    let mut out = ProfileSeries {
        load: vec![Vec::with_capacity(horizon_hours); regions],
        wind: vec![Vec::with_capacity(horizon_hours); regions],
        solar: vec![Vec::with_capacity(horizon_hours); regions],
    };
    for r in 0..regions {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64 + 1);
        let mut load_noise = Ar1::new(cfg.load_ar, &mut rng);
        let mut wind_a = Ar1::new(cfg.wind_ar, &mut rng);
        let mut wind_b = Ar1::new(cfg.wind_ar, &mut rng);
        let mut cloud = Ar1::new(cfg.cloud_ar, &mut rng);
        // Regions peak at slightly different hours.
        let phase = r as f64 * 0.5;
        for t in 0..horizon_hours {
            let hour = t % 24;
            let day = t / 24;
            let daily = (2.0 * PI * (t as f64 - 12.0 - phase) / 24.0).sin();
            let weekly = (2.0 * PI * t as f64 / 168.0).cos();
            let rel = 1.0
                + cfg.diurnal_amplitude * daily
                + cfg.weekly_amplitude * weekly
                + cfg.load_noise * load_noise.next(&mut rng);
            out.load[r].push((base[r] * rel).max(0.0));

            let speed = cfg.wind_speed_scale / 2f64.sqrt()
                * (wind_a.next(&mut rng).powi(2) + wind_b.next(&mut rng).powi(2)).sqrt();
            out.wind[r].push(wind_cap[r] * wind_power_curve(speed));

            let season = 1.0 + 0.2 * (2.0 * PI * (day as f64 - 172.0) / 365.0).cos();
            let cover = (0.8 + cfg.cloud_noise * cloud.next(&mut rng)).clamp(0.1, 1.0);
            let solar = solar_cap[r] * (clear_sky(hour) * season / 1.2 * cover).min(1.0);
            out.solar[r].push(solar);
        }
    }
    Ok(out)
}
