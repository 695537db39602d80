use std::f64::consts::PI;
use std::path::Path;

use chrono::{NaiveDate, TimeDelta};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DataError, MissingMask, RawDataset};
use crate::fsutil::atomic_write_bytes;
use crate::tensor::Tensor;

/// Generator settings for a weather-coupled power record.
///
/// Turbine `n` at step `t`:
/// `power = offset + A_d·sin(2πt/T_d + φ_n) + A_w·sin(2πt/T_w)
///          + coupling·(wind_n(t − lag) − wind_mean) + e_n(t)`
/// where `wind_n` is weather channel 0, a mean plus a scaled mix of a shared
/// and a local unit AR(1) process, and `e_n` is AR(1) noise. Further weather
/// channels are a diurnal cycle plus white noise, unrelated to power. Every
/// random term is multiplied by `noise_amplitude`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthRecipe {
    pub step_minutes: i64,
    pub offset: f64,
    pub diurnal_amplitude: f64,
    pub diurnal_period: f64,
    pub weekly_amplitude: f64,
    pub weekly_period: f64,
    /// Diurnal phase offset between consecutive turbines, radians.
    pub phase_step: f64,
    pub noise_amplitude: f64,
    pub ar_coefficient: f64,
    /// Stationary standard deviation of `e_n` at unit noise amplitude.
    pub ar_std: f64,
    pub wind_mean: f64,
    pub wind_ar: f64,
    /// Stationary standard deviation of the wind anomaly at unit noise
    /// amplitude.
    pub wind_std: f64,
    /// Share of wind variance common to all turbines.
    pub wind_shared: f64,
    pub coupling: f64,
    pub coupling_lag: usize,
}

impl Default for SynthRecipe {
    fn default() -> Self {
        Self {
            step_minutes: 60,
            offset: 3.0,
            diurnal_amplitude: 1.0,
            diurnal_period: 24.0,
            weekly_amplitude: 0.3,
            weekly_period: 168.0,
            phase_step: 0.3,
            noise_amplitude: 1.0,
            ar_coefficient: 0.5,
            ar_std: 0.2,
            wind_mean: 6.0,
            wind_ar: 0.9,
            wind_std: 1.0,
            wind_shared: 0.5,
            coupling: 0.8,
            coupling_lag: 12,
        }
    }
}

impl SynthRecipe {
    /// Correlation between `power(t)` and `wind(t − lag)` implied by the
    /// recipe, taking each sinusoid's variance as `A²/2`.
    pub fn analytic_correlation(&self) -> f64 {
        let sw = self.noise_amplitude * self.wind_std;
        if sw == 0.0 {
            return 0.0;
        }
        let se = self.noise_amplitude * self.ar_std;
        let var_p = 0.5 * self.diurnal_amplitude.powi(2)
            + 0.5 * self.weekly_amplitude.powi(2)
            + (self.coupling * sw).powi(2)
            + se * se;
        self.coupling * sw / var_p.sqrt()
    }

    /// Deterministic part of turbine `n`'s power at step `t`.
    pub fn seasonal(&self, n: usize, t: usize) -> f64 {
        let t = t as f64;
        self.offset
            + self.diurnal_amplitude * (2.0 * PI * t / self.diurnal_period + self.phase_step * n as f64).sin()
            + self.weekly_amplitude * (2.0 * PI * t / self.weekly_period).sin()
    }

    fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidParameter(m.to_string()));
        if self.step_minutes <= 0 {
            return bad("step_minutes must be positive");
        }
        if self.diurnal_period <= 0.0 || self.weekly_period <= 0.0 {
            return bad("periods must be positive");
        }
        if !(0.0..1.0).contains(&self.ar_coefficient.abs()) || !(0.0..1.0).contains(&self.wind_ar.abs()) {
            return bad("AR coefficients must lie in (-1, 1)");
        }
        if !(0.0..=1.0).contains(&self.wind_shared) {
            return bad("wind_shared must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Unit-variance AR(1) path started from its stationary distribution.
fn unit_ar(len: usize, phi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    let innovation = (1.0 - phi * phi).sqrt();
    let mut x: f64 = StandardNormal.sample(rng);
    for _ in 0..len {
        out.push(x);
        let z: f64 = StandardNormal.sample(rng);
        x = phi * x + innovation * z;
    }
    out
}

pub fn synth_generate(
    n_turbines: usize,
    rows: usize,
    channels: usize,
    seed: u64,
    recipe: &SynthRecipe,
) -> Result<RawDataset, DataError> {
    recipe.validate()?;
    if n_turbines == 0 || rows == 0 || channels == 0 {
        return Err(DataError::InvalidParameter(
            "need at least one turbine, row and weather channel".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lag = recipe.coupling_lag;
    let span = rows + lag;
    let amp = recipe.noise_amplitude;
    let shared = unit_ar(span, recipe.wind_ar, &mut rng);
    let (ws, wl) = (recipe.wind_shared.sqrt(), (1.0 - recipe.wind_shared).sqrt());

    let mut power = Tensor::zeros(&[rows, n_turbines]);
    let mut weather = Tensor::zeros(&[rows, n_turbines, channels]);
    for n in 0..n_turbines {
        let local = unit_ar(span, recipe.wind_ar, &mut rng);
        let noise = unit_ar(rows, recipe.ar_coefficient, &mut rng);
        // wind[k] is the anomaly at step k − lag
        let wind: Vec<f64> = (0..span)
            .map(|k| amp * recipe.wind_std * (ws * shared[k] + wl * local[k]))
            .collect();
        for t in 0..rows {
            let p = recipe.seasonal(n, t) + recipe.coupling * wind[t] + amp * recipe.ar_std * noise[t];
            power.set(&[t, n], p);
            weather.set(&[t, n, 0], recipe.wind_mean + wind[t + lag]);
            for c in 1..channels {
                let cycle = 10.0 + 5.0 * (2.0 * PI * t as f64 / recipe.diurnal_period + c as f64).sin();
                let z: f64 = StandardNormal.sample(&mut rng);
                weather.set(&[t, n, c], cycle + amp * 0.5 * z);
            }
        }
    }

    let start = NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date").and_hms_opt(0, 0, 0).expect("valid time");
    let step = TimeDelta::minutes(recipe.step_minutes);
    let weather_names: Vec<String> = std::iter::once("wspd".to_string())
        .chain((1..channels).map(|c| format!("temp{c}")))
        .collect();
    Ok(RawDataset {
        timestamps: (0..rows).map(|t| start + step * t as i32).collect(),
        step,
        turbines: (1..=n_turbines).map(|n| n.to_string()).collect(),
        weather_names,
        power,
        weather,
        missing: MissingMask::new(rows, n_turbines, channels + 1),
        invalid_rows: vec![false; rows],
        clamped_negative: 0,
    })
}

#[derive(Serialize)]
struct RecipeFile<'a> {
    recipe: &'a SynthRecipe,
    turbines: usize,
    rows: usize,
    channels: usize,
    seed: u64,
    analytic_correlation: f64,
}

/// Records the generator settings next to a generated file.
pub fn write_recipe_json(
    path: &Path,
    recipe: &SynthRecipe,
    raw: &RawDataset,
    seed: u64,
) -> Result<(), DataError> {
    let file = RecipeFile {
        recipe,
        turbines: raw.num_turbines(),
        rows: raw.rows(),
        channels: raw.num_weather(),
        seed,
        analytic_correlation: recipe.analytic_correlation(),
    };
    let text = serde_json::to_string_pretty(&file).map_err(|e| DataError::InvalidParameter(e.to_string()))?;
    atomic_write_bytes(path, text.as_bytes()).map_err(|e| DataError::io(path, e))
}

/// Sites on a square grid with the given spacing, `turbine_id,x,y`.
pub fn write_coords_csv(path: &Path, turbines: &[String], spacing: f64) -> Result<(), DataError> {
    let side = (turbines.len() as f64).sqrt().ceil().max(1.0) as usize;
    let mut text = String::from("turbine_id,x,y\n");
    for (k, id) in turbines.iter().enumerate() {
        text.push_str(&format!("{id},{},{}\n", (k % side) as f64 * spacing, (k / side) as f64 * spacing));
    }
    atomic_write_bytes(path, text.as_bytes()).map_err(|e| DataError::io(path, e))
}
