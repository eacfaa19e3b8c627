//! Synthetic data: a two-node RC zone model, a seasonal weather generator,
//! forecast distortion and gap injection.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{Schema, SeriesSet};

pub const SECONDS_PER_HOUR: f64 = 3600.0;
/// 2021-01-01T00:00:00Z.
pub const DEFAULT_START: i64 = 1_609_459_200;

/// Sub-seed streams of a scenario.
const STREAM_WEATHER: u64 = 1;
const STREAM_CONTROLS: u64 = 2;
const STREAM_PLANT: u64 = 3;
const STREAM_GAPS: u64 = 4;
const STREAM_GAINS: u64 = 5;
const STREAM_WANDER: u64 = 6;

/// Columns of the plant input matrix.
pub const INPUTS: usize = 5;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Zone air node coupled to a thermal mass node and to ambient air.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcParams {
    /// J/K.
    pub c_zone: f64,
    /// J/K.
    pub c_mass: f64,
    /// K/W.
    pub r_zone_mass: f64,
    /// K/W.
    pub r_zone_amb: f64,
    /// Effective aperture in m2.
    pub solar_aperture: f64,
    /// Share of solar gain absorbed by the mass node.
    pub solar_mass_fraction: f64,
    pub heater_efficiency: f64,
    pub cooler_efficiency: f64,
    /// Zone temperature noise per step, K.
    pub process_sigma: f64,
    /// K.
    pub measurement_sigma: f64,
    /// Output resolution in K, if any.
    pub quantization: Option<f64>,
}

impl Default for RcParams {
    fn default() -> Self {
        Self::light()
    }
}

impl RcParams {
    /// Light construction with large glazing.
    pub fn light() -> Self {
        Self {
            c_zone: 2.0e6,
            c_mass: 1.25e7,
            r_zone_mass: 2.0e-3,
            r_zone_amb: 1.0 / 150.0,
            solar_aperture: 2.0,
            solar_mass_fraction: 0.3,
            heater_efficiency: 1.0,
            cooler_efficiency: 1.0,
            process_sigma: 0.01,
            measurement_sigma: 0.05,
            quantization: None,
        }
    }

    /// Heavy construction, small aperture, coarse sensor.
    pub fn heavy() -> Self {
        Self {
            c_zone: 3.0e6,
            c_mass: 4.0e7,
            r_zone_mass: 1.5e-3,
            r_zone_amb: 1.0 / 120.0,
            solar_aperture: 1.0,
            quantization: Some(0.1),
            ..Self::light()
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.process_sigma = 0.0;
        self.measurement_sigma = 0.0;
        self.quantization = None;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.c_zone, self.c_mass, self.r_zone_mass, self.r_zone_amb];
        if positive.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("capacitances and resistances must be positive".into()));
        }
        if !(self.process_sigma >= 0.0 && self.measurement_sigma >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.solar_mass_fraction) {
            return Err(Error::Config("solar mass fraction must lie in [0, 1]".into()));
        }
        if matches!(self.quantization, Some(q) if !(q > 0.0)) {
            return Err(Error::Config("quantization step must be positive".into()));
        }
        Ok(())
    }

    /// Continuous-time state matrix for `[T_zone, T_mass]`.
    pub fn state_matrix(&self) -> Matrix2<f64> {
        let gzm = 1.0 / self.r_zone_mass;
        let gza = 1.0 / self.r_zone_amb;
        Matrix2::new(
            -(gzm + gza) / self.c_zone,
            gzm / self.c_zone,
            gzm / self.c_mass,
            -gzm / self.c_mass,
        )
    }

    /// Input matrix for `[P_heat kW, P_cool kW, T_amb, I_sol]`.
    pub fn input_matrix(&self) -> DMatrix<f64> {
        let f = self.solar_mass_fraction;
        DMatrix::from_row_slice(
            2,
            INPUTS,
            &[
                1000.0 * self.heater_efficiency / self.c_zone,
                -1000.0 * self.cooler_efficiency / self.c_zone,
                1.0 / (self.r_zone_amb * self.c_zone),
                (1.0 - f) * self.solar_aperture / self.c_zone,
                1000.0 / self.c_zone,
                0.0,
                0.0,
                0.0,
                f * self.solar_aperture / self.c_mass,
                0.0,
            ],
        )
    }

    /// Zero-order-hold discretization over `dt` seconds.
    pub fn discretize(&self, dt: f64) -> Discrete {
        let a = self.state_matrix();
        let b = self.input_matrix();
        let mut aug = DMatrix::zeros(2 + INPUTS, 2 + INPUTS);
        aug.view_mut((0, 0), (2, 2)).copy_from(&a);
        aug.view_mut((0, 2), (2, INPUTS)).copy_from(&b);
        let e = (aug * dt).exp();
        Discrete {
            a: e.fixed_view::<2, 2>(0, 0).into_owned(),
            b: e.view((0, 2), (2, INPUTS)).into_owned(),
        }
    }

    fn lerp(&self, other: &RcParams, s: f64) -> RcParams {
        let l = |a: f64, b: f64| a + (b - a) * s;
        RcParams {
            c_zone: l(self.c_zone, other.c_zone),
            c_mass: l(self.c_mass, other.c_mass),
            r_zone_mass: l(self.r_zone_mass, other.r_zone_mass),
            r_zone_amb: l(self.r_zone_amb, other.r_zone_amb),
            solar_aperture: l(self.solar_aperture, other.solar_aperture),
            solar_mass_fraction: l(self.solar_mass_fraction, other.solar_mass_fraction),
            heater_efficiency: l(self.heater_efficiency, other.heater_efficiency),
            cooler_efficiency: l(self.cooler_efficiency, other.cooler_efficiency),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discrete {
    pub a: Matrix2<f64>,
    pub b: DMatrix<f64>,
}

impl Discrete {
    /// `input` is heating, cooling (kW), ambient temperature, irradiance and
    /// internal gains (kW).
    pub fn step(&self, x: &Vector2<f64>, input: &[f64; INPUTS]) -> Vector2<f64> {
        let mut next = self.a * x;
        for (j, &v) in input.iter().enumerate() {
            next[0] += self.b[(0, j)] * v;
            next[1] += self.b[(1, j)] * v;
        }
        next
    }

    /// Eigenvalues of the transition matrix (real for a passive RC network).
    pub fn eigenvalues(&self) -> [f64; 2] {
        let eig = self.a.complex_eigenvalues();
        let mut ev = [eig[0].re, eig[1].re];
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// Exogenous signals of a simulation, one value per step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Weather {
    pub temperature: Vec<f64>,
    pub solar: Vec<f64>,
    /// Unmeasured internal heat gains in kW; empty for none.
    pub gains: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Controls {
    pub heat: Vec<f64>,
    pub cool: Vec<f64>,
}

/// Zone and mass temperatures plus the measured zone temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub zone: Vec<f64>,
    pub mass: Vec<f64>,
    pub measured: Vec<f64>,
}

/// Simulates `weather.len()` steps from `initial = [T_zone, T_mass]`.
///
/// Sample `k` of each output is the state at step `k`, before input `k`
/// acts. A non-empty `daily` replaces the plant parameters of day `d` with
/// `daily[d]`; noise levels always come from `params`.
pub fn simulate_rc(
    params: &RcParams,
    daily: &[RcParams],
    weather: &Weather,
    controls: &Controls,
    dt: f64,
    initial: [f64; 2],
    seed: u64,
) -> Result<Simulation> {
    params.validate()?;
    for d in daily {
        d.validate()?;
    }
    let n = weather.temperature.len();
    let gains_ok = weather.gains.is_empty() || weather.gains.len() == n;
    if weather.solar.len() != n || controls.heat.len() != n || controls.cool.len() != n || !gains_ok {
        return Err(Error::Shape("weather and controls must cover the same steps".into()));
    }
    let all = weather
        .temperature
        .iter()
        .chain(&weather.solar)
        .chain(&weather.gains)
        .chain(&controls.heat)
        .chain(&controls.cool);
    if all.clone().any(|v| !v.is_finite()) || !initial.iter().all(|v| v.is_finite()) {
        return Err(Error::Input("simulation inputs must be finite".into()));
    }
    let mut rng = rng_for(seed, STREAM_PLANT);
    let process = Normal::new(0.0, params.process_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let measurement = Normal::new(0.0, params.measurement_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let refresh = ((86_400.0 / dt).round() as usize).max(1);
    if !daily.is_empty() && daily.len() < n.div_ceil(refresh) {
        return Err(Error::Shape(format!("daily parameters cover {} days, the run needs {}", daily.len(), n.div_ceil(refresh))));
    }
    let mut model = params.discretize(dt);
    let mut x = Vector2::new(initial[0], initial[1]);
    let mut out = Simulation {
        zone: Vec::with_capacity(n),
        mass: Vec::with_capacity(n),
        measured: Vec::with_capacity(n),
    };
    for k in 0..n {
        if !daily.is_empty() && k % refresh == 0 {
            model = daily[k / refresh].discretize(dt);
        }
        out.zone.push(x[0]);
        out.mass.push(x[1]);
        let mut y = x[0];
        if params.measurement_sigma > 0.0 {
            y += measurement.sample(&mut rng);
        }
        if let Some(q) = params.quantization {
            y = (y / q).round() * q;
        }
        out.measured.push(y);
        let gain = weather.gains.get(k).copied().unwrap_or(0.0);
        let input = [controls.heat[k], controls.cool[k], weather.temperature[k], weather.solar[k], gain];
        x = model.step(&x, &input);
        if params.process_sigma > 0.0 {
            x[0] += process.sample(&mut rng);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherParams {
    pub mean_temperature: f64,
    pub annual_amplitude: f64,
    /// Day of year (0-based) with the lowest mean temperature.
    pub coldest_day: f64,
    pub diurnal_amplitude: f64,
    /// Local hour of the daily minimum.
    pub coldest_hour: f64,
    /// AR(1) coefficient of the temperature noise per step.
    pub noise_persistence: f64,
    pub noise_sigma: f64,
    /// Mean clear-sky noon irradiance, W/m2.
    pub peak_irradiance: f64,
    /// Seasonal swing of the noon irradiance, W/m2.
    pub peak_irradiance_swing: f64,
    pub mean_day_length: f64,
    /// Seasonal swing of the day length, hours.
    pub day_length_swing: f64,
    /// How deeply a fully overcast day cuts irradiance, in [0, 1].
    pub cloud_depth: f64,
}

impl Default for WeatherParams {
    fn default() -> Self {
        Self {
            mean_temperature: 9.5,
            annual_amplitude: 10.0,
            coldest_day: 15.0,
            diurnal_amplitude: 5.0,
            coldest_hour: 4.0,
            noise_persistence: 0.995,
            noise_sigma: 0.12,
            peak_irradiance: 600.0,
            peak_irradiance_swing: 300.0,
            mean_day_length: 12.0,
            day_length_swing: 4.0,
            cloud_depth: 0.8,
        }
    }
}

impl WeatherParams {
    /// No noise, clear sky and no seasonal change in the solar pattern.
    pub fn deterministic() -> Self {
        Self {
            noise_sigma: 0.0,
            peak_irradiance_swing: 0.0,
            day_length_swing: 0.0,
            cloud_depth: 0.0,
            ..Self::default()
        }
    }
}

/// Ambient temperature and irradiance for `days` days at `dt` seconds.
pub fn gen_weather(days: usize, params: &WeatherParams, dt: f64, seed: u64) -> Result<Weather> {
    if days == 0 {
        return Err(Error::Config("weather needs at least one day".into()));
    }
    let steps_per_day = (86_400.0 / dt).round() as usize;
    let n = days * steps_per_day;
    let mut rng = rng_for(seed, STREAM_WEATHER);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut ar = 0.0;
    let mut cloud_noise = 0.0;
    let mut cloudiness = 0.0;
    let mut w = Weather {
        temperature: Vec::with_capacity(n),
        solar: Vec::with_capacity(n),
        gains: Vec::new(),
    };
    for k in 0..n {
        if k % steps_per_day == 0 {
            cloudiness = rng.random::<f64>().powf(1.5);
        }
        let day = k as f64 * dt / 86_400.0;
        let hour = (day - day.floor()) * 24.0;
        let annual = (2.0 * PI * (day - params.coldest_day) / 365.0).cos();
        let diurnal = (2.0 * PI * (hour - params.coldest_hour) / 24.0).cos();
        ar = params.noise_persistence * ar + params.noise_sigma * unit.sample(&mut rng);
        let temperature =
            params.mean_temperature - params.annual_amplitude * annual - params.diurnal_amplitude * diurnal + ar;

        let season = (2.0 * PI * (day - 172.0) / 365.0).cos();
        let day_length = params.mean_day_length + params.day_length_swing * season;
        let peak = params.peak_irradiance + params.peak_irradiance_swing * season;
        let since_sunrise = hour - (12.0 - day_length / 2.0);
        let clear = if since_sunrise > 0.0 && since_sunrise < day_length {
            peak * (PI * since_sunrise / day_length).sin()
        } else {
            0.0
        };
        cloud_noise = 0.97 * cloud_noise + 0.05 * unit.sample(&mut rng);
        let factor = if params.cloud_depth > 0.0 {
            (1.0 - params.cloud_depth * cloudiness + cloud_noise).clamp(0.05, 1.0)
        } else {
            1.0
        };
        w.temperature.push(temperature);
        w.solar.push((clear * factor).max(0.0));
    }
    Ok(w)
}

/// Unmeasured internal gains from occupants and appliances: a daily
/// schedule scaled by a random level per day, plus AR(1) fluctuation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GainParams {
    /// Schedule peak on a day of level 1, kW.
    pub peak: f64,
    /// Standard deviation of the daily level around 1.
    pub day_spread: f64,
    /// Day-to-day AR(1) coefficient of the daily level.
    pub day_persistence: f64,
    /// Per-step AR(1) coefficient.
    pub persistence: f64,
    /// kW.
    pub noise_sigma: f64,
}

impl Default for GainParams {
    fn default() -> Self {
        Self {
            peak: 0.0,
            day_spread: 0.3,
            day_persistence: 0.0,
            persistence: 0.98,
            noise_sigma: 0.0,
        }
    }
}

impl GainParams {
    pub fn occupied() -> Self {
        Self {
            peak: 0.6,
            noise_sigma: 0.05,
            ..Self::default()
        }
    }

    pub fn is_zero(&self) -> bool {
        self.peak == 0.0 && self.noise_sigma == 0.0
    }

    /// Occupancy shape in [0, 1] at local `hour`: morning and evening peaks.
    pub fn schedule(hour: f64) -> f64 {
        let bump = |centre: f64, width: f64| (-0.5 * ((hour - centre) / width).powi(2)).exp();
        (0.6 * bump(7.5, 1.2) + bump(19.5, 2.0) + 0.25).min(1.0)
    }
}

/// Internal gains for `n` steps of `dt` seconds; empty when `params` is zero.
pub fn gen_gains(n: usize, params: &GainParams, dt: f64, seed: u64) -> Result<Vec<f64>> {
    if params.is_zero() {
        return Ok(Vec::new());
    }
    let persistent = [params.persistence, params.day_persistence];
    if !(params.peak >= 0.0 && params.noise_sigma >= 0.0 && params.day_spread >= 0.0)
        || !persistent.iter().all(|p| (0.0..1.0).contains(p))
    {
        return Err(Error::Config("gain peak, spread and noise must be non-negative, persistence in [0, 1)".into()));
    }
    let steps_per_day = ((86_400.0 / dt).round() as usize).max(1);
    let mut rng = rng_for(seed, STREAM_GAINS);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let (mut dev, mut ar) = (0.0, 0.0);
    let innovation = (1.0 - params.day_persistence.powi(2)).sqrt();
    let mut level = 1.0;
    Ok((0..n)
        .map(|k| {
            if k % steps_per_day == 0 {
                dev = params.day_persistence * dev + innovation * unit.sample(&mut rng);
                level = (1.0 + params.day_spread * dev).max(0.0);
            }
            let hour = (k % steps_per_day) as f64 * 24.0 / steps_per_day as f64;
            ar = params.persistence * ar + params.noise_sigma * unit.sample(&mut rng);
            (params.peak * level * GainParams::schedule(hour) + ar).max(0.0)
        })
        .collect())
}

/// Weather-compensated heating and cooling curves with optional random
/// excitation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    /// Heating power is `heat_gain * (heat_balance - smoothed ambient)`.
    pub heat_balance: f64,
    /// kW per K.
    pub heat_gain: f64,
    pub heat_max: f64,
    /// Smoothed ambient temperature above which heating is off.
    pub heat_limit: f64,
    pub cooling: bool,
    pub cool_threshold: f64,
    pub cool_gain: f64,
    pub cool_max: f64,
    /// Time constant of the ambient smoothing, hours.
    pub smoothing_hours: f64,
    /// Half-width of the random power offsets, kW.
    pub excitation: f64,
    /// Range of the dwell time of each offset, hours.
    pub dwell_hours: (f64, f64),
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            heat_balance: 20.5,
            heat_gain: 0.15,
            heat_max: 8.0,
            heat_limit: 15.0,
            cooling: true,
            cool_threshold: 18.0,
            cool_gain: 0.2,
            cool_max: 5.0,
            smoothing_hours: 24.0,
            excitation: 0.8,
            dwell_hours: (1.0, 6.0),
        }
    }
}

pub fn gen_controls(weather: &Weather, params: &ControlParams, dt: f64, seed: u64) -> Controls {
    let mut rng = rng_for(seed, STREAM_CONTROLS);
    let n = weather.temperature.len();
    let rate = dt / (params.smoothing_hours * SECONDS_PER_HOUR);
    let mut smooth = weather.temperature.first().copied().unwrap_or(0.0);
    let (mut heat_offset, mut cool_offset, mut left) = (0.0, 0.0, 0usize);
    let mut c = Controls {
        heat: Vec::with_capacity(n),
        cool: Vec::with_capacity(n),
    };
    for &t in &weather.temperature {
        smooth += (t - smooth) * rate;
        if params.excitation > 0.0 && left == 0 {
            let (lo, hi) = params.dwell_hours;
            left = ((rng.random_range(lo..=hi) * SECONDS_PER_HOUR / dt).round() as usize).max(1);
            heat_offset = rng.random_range(-params.excitation..=params.excitation);
            cool_offset = rng.random_range(-params.excitation..=params.excitation);
        }
        left = left.saturating_sub(1);
        let heat = params.heat_gain * (params.heat_balance - smooth);
        let heat = if heat > 0.0 && smooth < params.heat_limit {
            heat + heat_offset
        } else {
            0.0
        };
        c.heat.push(heat.clamp(0.0, params.heat_max));
        let cool = if params.cooling {
            let cool = params.cool_gain * (smooth - params.cool_threshold);
            if cool > 0.0 {
                (cool + cool_offset).clamp(0.0, params.cool_max)
            } else {
                0.0
            }
        } else {
            0.0
        };
        c.cool.push(cool);
    }
    c
}

/// Mean-reverting random variation of the ambient resistance, solar
/// aperture and heater efficiency: each is scaled by `exp(z)` with `z` an
/// AR(1) process over days.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wander {
    /// Stationary standard deviation of `z`.
    pub sigma: f64,
    /// Correlation time of `z` in days.
    pub days: f64,
}

impl Wander {
    pub fn apply(&self, daily: &mut [RcParams], seed: u64) -> Result<()> {
        if !(self.sigma >= 0.0 && self.days > 0.0) {
            return Err(Error::Config("wander needs sigma >= 0 and a positive correlation time".into()));
        }
        let mut rng = rng_for(seed, STREAM_WANDER);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let rho = (-1.0 / self.days).exp();
        let step = self.sigma * (1.0 - rho * rho).sqrt();
        let mut z = [0.0; 3];
        for p in daily {
            for v in &mut z {
                *v = rho * *v + step * unit.sample(&mut rng);
            }
            p.r_zone_amb *= z[0].exp();
            p.solar_aperture *= z[1].exp();
            p.heater_efficiency *= z[2].exp();
        }
        Ok(())
    }
}

/// Randomized sine distortion of a weather forecast.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortionParams {
    /// K, reached at the end of the ramp.
    pub temperature_amplitude: f64,
    /// Relative, reached at the end of the ramp.
    pub solar_amplitude: f64,
    /// Angular frequency range in rad/h.
    pub frequency_range: (f64, f64),
    pub ramp_hours: f64,
}

impl Default for DistortionParams {
    fn default() -> Self {
        Self {
            temperature_amplitude: 4.0,
            solar_amplitude: 0.15,
            frequency_range: (0.5 * PI / 12.0, 1.5 * PI / 12.0),
            ramp_hours: 24.0,
        }
    }
}

/// Frequency `a` (rad/h) and phase `b` of one distortion sine.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SineDraw {
    pub a: f64,
    pub b: f64,
}

impl DistortionParams {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> SineDraw {
        let (lo, hi) = self.frequency_range;
        SineDraw {
            a: rng.random_range(lo..hi),
            b: rng.random_range(-PI..PI),
        }
    }

    fn wave(&self, t: f64, d: SineDraw) -> f64 {
        t / self.ramp_hours * (d.a * t + d.b).sin()
    }

    /// Additive temperature error at `t` hours, K.
    pub fn temperature_offset(&self, t: f64, d: SineDraw) -> f64 {
        self.temperature_amplitude * self.wave(t, d)
    }

    /// Multiplicative irradiance factor at `t` hours.
    pub fn solar_factor(&self, t: f64, d: SineDraw) -> f64 {
        1.0 + self.solar_amplitude * self.wave(t, d)
    }
}

/// Distorts a forecast starting at `t = 0` with step `dt_hours`; each
/// channel gets its own draw.
pub fn distort_forecast<R: Rng + ?Sized>(
    temperature: &[f64],
    solar: &[f64],
    dt_hours: f64,
    params: &DistortionParams,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if temperature.len() != solar.len() {
        return Err(Error::Shape("forecast channels differ in length".into()));
    }
    let horizon = temperature.len().saturating_sub(1) as f64 * dt_hours;
    if horizon > params.ramp_hours + 1e-9 {
        return Err(Error::Precondition(format!(
            "forecast spans {horizon} h, distortion is defined up to {} h",
            params.ramp_hours
        )));
    }
    let dt_draw = params.draw(rng);
    let ds_draw = params.draw(rng);
    let t = |i: usize| i as f64 * dt_hours;
    Ok((
        temperature
            .iter()
            .enumerate()
            .map(|(i, &v)| v + params.temperature_offset(t(i), dt_draw))
            .collect(),
        solar
            .iter()
            .enumerate()
            .map(|(i, &v)| v * params.solar_factor(t(i), ds_draw))
            .collect(),
    ))
}

/// Marks bursts of whole time steps as GAP until `fraction` of all steps
/// are missing. Burst lengths are geometric with mean `mean_gap_len`.
pub fn inject_gaps(series: &SeriesSet, fraction: f64, mean_gap_len: f64, seed: u64) -> Result<SeriesSet> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::Config(format!("gap fraction must lie in [0, 1), got {fraction}")));
    }
    if !(mean_gap_len >= 1.0) {
        return Err(Error::Config("mean gap length must be at least one step".into()));
    }
    let mut out = series.clone();
    let n = series.len();
    let target = (fraction * n as f64).round() as usize;
    if target == 0 {
        return Ok(out);
    }
    let mut rng = rng_for(seed, STREAM_GAPS);
    let lengths = Geometric::new(1.0 / mean_gap_len).map_err(|e| Error::Config(e.to_string()))?;
    let mut missing = out.gap_steps();
    while missing < target {
        let len = 1 + lengths.sample(&mut rng) as usize;
        let start = rng.random_range(0..n);
        for k in start..(start + len).min(n) {
            if missing >= target {
                break;
            }
            if out.step_is_valid(k) {
                out.mark_gap(k);
                missing += 1;
            }
        }
    }
    Ok(out)
}

/// Everything needed to generate one synthetic data set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub days: usize,
    /// Epoch seconds of the first sample.
    pub start: i64,
    /// Seconds.
    pub dt: i64,
    pub plant: RcParams,
    /// Parameters reached at the end of the run, if the plant drifts.
    pub drift_to: Option<RcParams>,
    /// Slow random variation of the envelope and heater around the drift.
    #[serde(default)]
    pub wander: Option<Wander>,
    pub weather: WeatherParams,
    pub controls: ControlParams,
    #[serde(default)]
    pub gains: GainParams,
    pub gap_fraction: f64,
    pub mean_gap_len: f64,
    pub seed: u64,
}

impl Scenario {
    /// Light building with heating and cooling.
    pub fn light(seed: u64) -> Self {
        Self {
            name: "light".into(),
            days: 365,
            start: DEFAULT_START,
            dt: 900,
            plant: RcParams::light(),
            drift_to: None,
            wander: None,
            weather: WeatherParams::default(),
            controls: ControlParams::default(),
            gains: GainParams::occupied(),
            gap_fraction: 0.10,
            mean_gap_len: 8.0,
            seed,
        }
    }

    /// Heavy building, heating only, coarse sensor.
    pub fn heavy(seed: u64) -> Self {
        Self {
            name: "heavy".into(),
            plant: RcParams::heavy(),
            controls: ControlParams {
                cooling: false,
                heat_gain: 0.12,
                ..ControlParams::default()
            },
            gap_fraction: 0.025,
            ..Self::light(seed)
        }
    }

    /// Noise-free light building driven by deterministic weather and plain
    /// heating curves, so the data come from a finite-dimensional linear
    /// system.
    pub fn noiseless(seed: u64) -> Self {
        Self {
            name: "noiseless".into(),
            days: 90,
            plant: RcParams::light().noiseless(),
            weather: WeatherParams::deterministic(),
            controls: ControlParams {
                cooling: false,
                excitation: 0.0,
                ..ControlParams::default()
            },
            gains: GainParams::default(),
            gap_fraction: 0.0,
            ..Self::light(seed)
        }
    }

    /// Heavy building whose heater and glazing degrade over the run while the
    /// envelope also wanders slowly.
    pub fn drifting(seed: u64) -> Self {
        let base = Self::heavy(seed);
        let end = RcParams {
            r_zone_mass: base.plant.r_zone_mass * 2.0,
            c_mass: base.plant.c_mass * 0.5,
            solar_aperture: base.plant.solar_aperture * 0.5,
            heater_efficiency: 0.8,
            ..base.plant.clone()
        };
        Self {
            name: "drifting".into(),
            drift_to: Some(end),
            wander: Some(Wander { sigma: 0.1, days: 30.0 }),
            ..base
        }
    }

    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        match name {
            "light" => Ok(Self::light(seed)),
            "heavy" => Ok(Self::heavy(seed)),
            "noiseless" => Ok(Self::noiseless(seed)),
            "drifting" => Ok(Self::drifting(seed)),
            other => Err(Error::Config(format!("unknown scenario preset {other:?}"))),
        }
    }

    pub fn schema(&self) -> Schema {
        if self.controls.cooling {
            Schema::building()
        } else {
            Schema::heating_only()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.days == 0 || self.dt <= 0 || 86_400 % self.dt != 0 {
            return Err(Error::Config("scenario needs days >= 1 and a step dividing one day".into()));
        }
        self.plant.validate()?;
        if let Some(d) = &self.drift_to {
            d.validate()?;
        }
        if !(0.0..1.0).contains(&self.gap_fraction) {
            return Err(Error::Config("gap fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Plant parameters per day; empty for a constant plant.
    pub fn daily_params(&self) -> Result<Vec<RcParams>> {
        if self.drift_to.is_none() && self.wander.is_none() {
            return Ok(Vec::new());
        }
        let end = self.drift_to.as_ref().unwrap_or(&self.plant);
        let mut daily: Vec<RcParams> = (0..self.days)
            .map(|d| self.plant.lerp(end, d as f64 / self.days as f64))
            .collect();
        if let Some(w) = &self.wander {
            w.apply(&mut daily, self.seed)?;
        }
        Ok(daily)
    }

    /// Series with full weather and controls but without gaps.
    pub fn generate_clean(&self) -> Result<SeriesSet> {
        self.validate()?;
        let dt = self.dt as f64;
        let mut weather = gen_weather(self.days, &self.weather, dt, self.seed)?;
        weather.gains = gen_gains(weather.temperature.len(), &self.gains, dt, self.seed)?;
        let controls = gen_controls(&weather, &self.controls, dt, self.seed);
        let start = self.controls.heat_balance.min(21.0);
        let daily = self.daily_params()?;
        let sim = simulate_rc(&self.plant, &daily, &weather, &controls, dt, [start, start], self.seed)?;
        let mut values = vec![controls.heat];
        if self.controls.cooling {
            values.push(controls.cool);
        }
        values.extend([weather.temperature, weather.solar, sim.measured]);
        SeriesSet::new(self.schema(), self.start, self.dt, values)
    }

    pub fn generate(&self) -> Result<SeriesSet> {
        let clean = self.generate_clean()?;
        inject_gaps(&clean, self.gap_fraction, self.mean_gap_len, self.seed)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
