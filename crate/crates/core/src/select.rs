//! Choosing which past trajectories populate the trajectory matrix.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{SeriesSet, Trajectory};

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    MostRecent,
    MostCorrelated,
    SmallestRmse,
    ClosestMean,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::MostRecent,
        Strategy::MostCorrelated,
        Strategy::SmallestRmse,
        Strategy::ClosestMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::MostRecent => "most_recent",
            Strategy::MostCorrelated => "most_correlated",
            Strategy::SmallestRmse => "smallest_rmse",
            Strategy::ClosestMean => "closest_mean",
        }
    }

    /// Whether a larger score ranks first.
    pub fn descending(self) -> bool {
        matches!(self, Strategy::MostRecent | Strategy::MostCorrelated)
    }

    /// Whether ranking needs the weather forecast at all.
    pub fn uses_weather(self) -> bool {
        self != Strategy::MostRecent
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown selection strategy {s:?}")))
    }
}

/// Site parameters mapping weather into comparable ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub temperature_offset: f64,
    pub temperature_scale: f64,
    /// 500 for irradiance in W/m2, 3 for a PV power proxy in kW.
    pub solar_scale: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            temperature_offset: 10.0,
            temperature_scale: 20.0,
            solar_scale: 500.0,
        }
    }
}

impl Normalization {
    pub fn pv() -> Self {
        Self {
            solar_scale: 3.0,
            ..Self::default()
        }
    }

    pub fn temperature(&self, t: f64) -> f64 {
        (t - self.temperature_offset) / self.temperature_scale
    }

    pub fn solar(&self, s: f64) -> f64 {
        s / self.solar_scale
    }
}

pub fn normalize_weather(temperature: &[f64], solar: &[f64], norm: &Normalization) -> (Vec<f64>, Vec<f64>) {
    (
        temperature.iter().map(|&t| norm.temperature(t)).collect(),
        solar.iter().map(|&s| norm.solar(s)).collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub strategy: Strategy,
    pub width: usize,
    pub window_days: f64,
    pub normalization: Normalization,
}

impl SelectionConfig {
    pub fn new(strategy: Strategy, width: usize) -> Self {
        Self {
            strategy,
            width,
            window_days: 365.0,
            normalization: Normalization::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Config("selection width must be at least 1".into()));
        }
        if !(self.window_days > 0.0) {
            return Err(Error::Config("selection window must be positive".into()));
        }
        Ok(())
    }

    fn window_seconds(&self) -> i64 {
        (self.window_days * SECONDS_PER_DAY as f64).round() as i64
    }
}

/// Which disturbance channels carry temperature and solar, as positions
/// within the disturbance block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeatherChannels {
    pub temperature: usize,
    pub solar: usize,
}

impl Default for WeatherChannels {
    fn default() -> Self {
        Self {
            temperature: 0,
            solar: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct Stats {
    mean: f64,
    /// Sum of squared deviations from the mean.
    spread: f64,
}

impl Stats {
    fn of(x: &[f64]) -> Self {
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let spread = x.iter().map(|v| (v - mean).powi(2)).sum();
        Self { mean, spread }
    }
}

/// Normalized weather the candidates are compared against, covering the
/// whole trajectory window.
#[derive(Clone, Debug, PartialEq)]
pub struct WeatherWindow {
    temperature: Vec<f64>,
    solar: Vec<f64>,
    centered: [Vec<f64>; 2],
    stats: [Stats; 2],
}

impl WeatherWindow {
    /// Both series must already be normalized.
    pub fn new(temperature: Vec<f64>, solar: Vec<f64>) -> Result<Self> {
        if temperature.len() != solar.len() || temperature.is_empty() {
            return Err(Error::Shape("forecast channels must be equally long and non-empty".into()));
        }
        if temperature.iter().chain(&solar).any(|v| !v.is_finite()) {
            return Err(Error::Precondition("forecast contains a GAP".into()));
        }
        let stats = [Stats::of(&temperature), Stats::of(&solar)];
        let centered = [
            temperature.iter().map(|v| v - stats[0].mean).collect(),
            solar.iter().map(|v| v - stats[1].mean).collect(),
        ];
        Ok(Self {
            temperature,
            solar,
            centered,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.temperature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.temperature.is_empty()
    }

    pub fn temperature(&self) -> &[f64] {
        &self.temperature
    }

    pub fn solar(&self) -> &[f64] {
        &self.solar
    }

    fn channel(&self, c: usize) -> &[f64] {
        if c == 0 {
            &self.temperature
        } else {
            &self.solar
        }
    }
}

/// Pearson coefficient, or 0 when either side has no variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (sx, sy) = (Stats::of(x), Stats::of(y));
    let cross: f64 = x.iter().zip(y).map(|(a, b)| (a - sx.mean) * (b - sy.mean)).sum();
    correlation_from(cross, sx.spread, sy.spread)
}

fn correlation_from(cross: f64, spread_x: f64, spread_y: f64) -> f64 {
    let denom = (spread_x * spread_y).sqrt();
    if denom > 0.0 && denom.is_finite() {
        (cross / denom).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Result of ranking a pool.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Positions in the pool, best first.
    pub indices: Vec<usize>,
    /// Series start index of each chosen window.
    pub starts: Vec<usize>,
    pub end_times: Vec<i64>,
    pub scores: Vec<f64>,
    /// Fewer eligible candidates than requested.
    pub shortfall: bool,
}

impl Selection {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The best `n` entries. Rankings are total, so this equals selecting
    /// `n` directly.
    pub fn truncated(&self, n: usize) -> Selection {
        let n = n.min(self.len());
        Selection {
            indices: self.indices[..n].to_vec(),
            starts: self.starts[..n].to_vec(),
            end_times: self.end_times[..n].to_vec(),
            scores: self.scores[..n].to_vec(),
            shortfall: self.shortfall,
        }
    }
}

/// Candidate windows over normalized weather, ordered by end time.
///
/// Windows live in one flat buffer per channel: candidate `i` covers
/// `offsets[i]..offsets[i] + window_len`.
#[derive(Clone, Debug)]
pub struct CandidatePool {
    window_len: usize,
    temperature: Vec<f64>,
    solar: Vec<f64>,
    offsets: Vec<usize>,
    starts: Vec<usize>,
    end_times: Vec<i64>,
    stats: Vec<[Stats; 2]>,
}

impl CandidatePool {
    /// Windows of `window_len` steps starting at `starts` (series indices).
    /// The windows must be gap-free in the weather channels.
    pub fn from_series(
        series: &SeriesSet,
        starts: &[usize],
        window_len: usize,
        channels: WeatherChannels,
        norm: &Normalization,
    ) -> Result<Self> {
        let w = series.schema().indices(crate::series::ChannelKind::Disturbance);
        let (Some(&tc), Some(&sc)) = (w.get(channels.temperature), w.get(channels.solar)) else {
            return Err(Error::Config("weather channels out of range of the disturbance block".into()));
        };
        let (temperature, solar) = normalize_weather(series.channel(tc), series.channel(sc), norm);
        let end_times = starts
            .iter()
            .map(|&s| series.time_at(s + window_len - 1))
            .collect();
        Self::assemble(window_len, temperature, solar, starts.to_vec(), starts.to_vec(), end_times)
    }

    pub fn from_trajectories(trajectories: &[Trajectory], channels: WeatherChannels, norm: &Normalization) -> Result<Self> {
        let window_len = trajectories.first().map_or(0, Trajectory::len);
        let mut temperature = Vec::with_capacity(window_len * trajectories.len());
        let mut solar = Vec::with_capacity(window_len * trajectories.len());
        for tr in trajectories {
            let (Some(t), Some(s)) = (tr.w_block.get(channels.temperature), tr.w_block.get(channels.solar)) else {
                return Err(Error::Config("weather channels out of range of the disturbance block".into()));
            };
            if t.len() != window_len {
                return Err(Error::Shape("trajectories differ in length".into()));
            }
            temperature.extend(t.iter().map(|&v| norm.temperature(v)));
            solar.extend(s.iter().map(|&v| norm.solar(v)));
        }
        let offsets = (0..trajectories.len()).map(|i| i * window_len).collect();
        let starts = trajectories.iter().map(|t| t.source_start_index).collect();
        let end_times = trajectories.iter().map(|t| t.end_time).collect();
        Self::assemble(window_len, temperature, solar, offsets, starts, end_times)
    }

    fn assemble(
        window_len: usize,
        temperature: Vec<f64>,
        solar: Vec<f64>,
        offsets: Vec<usize>,
        starts: Vec<usize>,
        end_times: Vec<i64>,
    ) -> Result<Self> {
        if window_len == 0 {
            return Err(Error::Shape("candidate windows must be non-empty".into()));
        }
        let mut order: Vec<usize> = (0..offsets.len()).collect();
        order.sort_by_key(|&i| (end_times[i], starts[i]));
        let offsets: Vec<usize> = order.iter().map(|&i| offsets[i]).collect();
        let starts: Vec<usize> = order.iter().map(|&i| starts[i]).collect();
        let end_times: Vec<i64> = order.iter().map(|&i| end_times[i]).collect();
        let mut stats = Vec::with_capacity(offsets.len());
        for &o in &offsets {
            let t = &temperature[o..o + window_len];
            let s = &solar[o..o + window_len];
            if t.iter().chain(s).any(|v| !v.is_finite()) {
                return Err(Error::Precondition(format!("candidate at offset {o} contains a GAP")));
            }
            stats.push([Stats::of(t), Stats::of(s)]);
        }
        Ok(Self {
            window_len,
            temperature,
            solar,
            offsets,
            starts,
            end_times,
            stats,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn end_times(&self) -> &[i64] {
        &self.end_times
    }

    /// Pool positions whose end time lies in `[now - window, now)`.
    pub fn window_filter(&self, now: i64, window_days: f64) -> std::ops::Range<usize> {
        let window = (window_days * SECONDS_PER_DAY as f64).round() as i64;
        let lo = self.end_times.partition_point(|&t| t < now - window);
        let hi = self.end_times.partition_point(|&t| t < now);
        lo..hi.max(lo)
    }

    fn window(&self, i: usize, c: usize) -> &[f64] {
        let o = self.offsets[i];
        let buf = if c == 0 { &self.temperature } else { &self.solar };
        &buf[o..o + self.window_len]
    }

    /// Score of candidate `i` under `strategy`.
    pub fn score(&self, i: usize, strategy: Strategy, forecast: &WeatherWindow) -> f64 {
        match strategy {
            Strategy::MostRecent => self.end_times[i] as f64,
            Strategy::MostCorrelated => (0..2)
                .map(|c| {
                    let cross: f64 = self.window(i, c).iter().zip(&forecast.centered[c]).map(|(a, b)| a * b).sum();
                    correlation_from(cross, self.stats[i][c].spread, forecast.stats[c].spread)
                })
                .sum(),
            Strategy::SmallestRmse => (0..2)
                .map(|c| {
                    let ss: f64 = self
                        .window(i, c)
                        .iter()
                        .zip(forecast.channel(c))
                        .map(|(a, b)| (a - b).powi(2))
                        .sum();
                    (ss / self.window_len as f64).sqrt()
                })
                .sum(),
            Strategy::ClosestMean => (0..2)
                .map(|c| (self.stats[i][c].mean - forecast.stats[c].mean).abs())
                .sum(),
        }
    }

    /// Ranks the candidates inside the causal window and keeps the best
    /// `cfg.width`. `forecast` may be `None` for `most_recent`.
    pub fn select(&self, now: i64, forecast: Option<&WeatherWindow>, cfg: &SelectionConfig) -> Result<Selection> {
        cfg.validate()?;
        let eligible = self.window_filter(now, cfg.window_days);
        if eligible.is_empty() {
            return Err(Error::Selection(format!(
                "no admissible trajectory ends within {} days before the prediction instant",
                cfg.window_days
            )));
        }
        let forecast = match (cfg.strategy.uses_weather(), forecast) {
            (false, _) => None,
            (true, Some(f)) if f.len() == self.window_len => Some(f),
            (true, Some(f)) => {
                return Err(Error::Shape(format!(
                    "forecast covers {} steps, candidates {}",
                    f.len(),
                    self.window_len
                )))
            }
            (true, None) => return Err(Error::Selection(format!("{} needs a forecast", cfg.strategy))),
        };
        let strategy = cfg.strategy;
        let mut scored: Vec<(f64, usize)> = eligible
            .map(|i| {
                let s = match forecast {
                    Some(f) => self.score(i, strategy, f),
                    None => self.end_times[i] as f64,
                };
                (s, i)
            })
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            let primary = if strategy.descending() {
                b.0.total_cmp(&a.0)
            } else {
                a.0.total_cmp(&b.0)
            };
            primary
                .then_with(|| self.end_times[b.1].cmp(&self.end_times[a.1]))
                .then_with(|| self.starts[a.1].cmp(&self.starts[b.1]))
        };
        let shortfall = scored.len() < cfg.width;
        let keep = cfg.width.min(scored.len());
        if keep < scored.len() {
            scored.select_nth_unstable_by(keep - 1, cmp);
            scored.truncate(keep);
        }
        scored.sort_unstable_by(cmp);
        Ok(Selection {
            indices: scored.iter().map(|&(_, i)| i).collect(),
            starts: scored.iter().map(|&(_, i)| self.starts[i]).collect(),
            end_times: scored.iter().map(|&(_, i)| self.end_times[i]).collect(),
            scores: scored.iter().map(|&(s, _)| s).collect(),
            shortfall,
        })
    }
}

/// Convenience wrapper ranking a list of trajectories.
pub fn select(
    pool: &[Trajectory],
    now: i64,
    forecast: Option<&WeatherWindow>,
    cfg: &SelectionConfig,
) -> Result<Selection> {
    if pool.is_empty() {
        return Err(Error::Selection("empty trajectory pool".into()));
    }
    CandidatePool::from_trajectories(pool, WeatherChannels::default(), &cfg.normalization)?.select(now, forecast, cfg)
}

/// Trajectories whose end time lies in `[now - window, now)`.
pub fn window_filter(pool: &[Trajectory], now: i64, window_days: f64) -> Vec<Trajectory> {
    let cfg = SelectionConfig {
        window_days,
        ..SelectionConfig::new(Strategy::MostRecent, 1)
    };
    let window = cfg.window_seconds();
    pool.iter()
        .filter(|t| t.end_time < now && t.end_time >= now - window)
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(start: usize, end_time: i64, temps: Vec<f64>, solar: Vec<f64>) -> Trajectory {
        let n = temps.len();
        Trajectory {
            source_start_index: start,
            u_block: vec![vec![0.0; n]],
            w_block: vec![temps, solar],
            y_block: vec![vec![20.0; n]],
            end_time,
        }
    }

    #[test]
    fn normalization_examples() {
        let n = Normalization::default();
        assert_eq!(n.temperature(30.0), 1.0);
        assert_eq!(n.temperature(10.0), 0.0);
        assert_eq!(n.temperature(-10.0), -1.0);
        assert_eq!(n.solar(500.0), 1.0);
        assert_eq!(Normalization::pv().solar(3.0), 1.0);
    }

    #[test]
    fn window_filter_examples() {
        let now = 400 * SECONDS_PER_DAY;
        let pool = vec![
            traj(0, now - 366 * SECONDS_PER_DAY, vec![0.; 3], vec![0.; 3]),
            traj(1, now, vec![0.; 3], vec![0.; 3]),
            traj(2, now - 900, vec![0.; 3], vec![0.; 3]),
        ];
        let kept = window_filter(&pool, now, 365.0);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].source_start_index, 2);
    }

    #[test]
    fn exact_weather_match_ranks_first() {
        let fc_t = vec![12.0, 15.0, 19.0, 14.0];
        let fc_s = vec![0.0, 200.0, 450.0, 100.0];
        let norm = Normalization::default();
        let (nt, ns) = normalize_weather(&fc_t, &fc_s, &norm);
        let fc = WeatherWindow::new(nt, ns).unwrap();
        let pool = vec![
            traj(0, 100, vec![5.0, 6.0, 8.0, 7.0], vec![0.0, 50.0, 90.0, 10.0]),
            traj(1, 200, fc_t.clone(), fc_s.clone()),
            traj(2, 300, vec![20.0, 19.0, 18.0, 17.0], vec![500.0, 300.0, 100.0, 0.0]),
        ];
        for strategy in [Strategy::MostCorrelated, Strategy::SmallestRmse, Strategy::ClosestMean] {
            let sel = select(&pool, 1000, Some(&fc), &SelectionConfig::new(strategy, 2)).unwrap();
            assert_eq!(sel.starts[0], 1, "{strategy}");
        }
        let sel = select(&pool, 1000, None, &SelectionConfig::new(Strategy::MostRecent, 2)).unwrap();
        assert_eq!(sel.starts, vec![2, 1]);
        assert!(!sel.shortfall);
    }

    #[test]
    fn shortfall_and_empty_pool() {
        let pool = vec![traj(0, 10, vec![1.0; 2], vec![1.0; 2])];
        let sel = select(&pool, 100, None, &SelectionConfig::new(Strategy::MostRecent, 5)).unwrap();
        assert_eq!(sel.len(), 1);
        assert!(sel.shortfall);
        assert!(matches!(
            select(&[], 100, None, &SelectionConfig::new(Strategy::MostRecent, 5)),
            Err(Error::Selection(_))
        ));
        // Nothing causal left after filtering.
        assert!(matches!(
            select(&pool, 10, None, &SelectionConfig::new(Strategy::MostRecent, 5)),
            Err(Error::Selection(_))
        ));
    }

    #[test]
    fn zero_variance_correlates_as_zero() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), 0.0);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ties_prefer_recent_then_lower_index() {
        let pool = vec![
            traj(5, 100, vec![1.0; 2], vec![0.0; 2]),
            traj(3, 200, vec![1.0; 2], vec![0.0; 2]),
            traj(4, 200, vec![1.0; 2], vec![0.0; 2]),
        ];
        let fc = WeatherWindow::new(vec![0.0; 2], vec![0.0; 2]).unwrap();
        let sel = select(&pool, 1000, Some(&fc), &SelectionConfig::new(Strategy::ClosestMean, 3)).unwrap();
        assert_eq!(sel.starts, vec![3, 4, 5]);
    }

    #[test]
    fn closest_mean_brute_force() {
        // Ten days whose mean temperature drifts linearly; forecast sits at
        // the median between days 4 and 5.
        let pool: Vec<Trajectory> = (0..10)
            .map(|d| {
                let base = 2.0 + d as f64;
                let temps = (0..8).map(|k| base + (k as f64 * 0.7).sin()).collect();
                traj(d, d as i64 * 86_400, temps, vec![0.0; 8])
            })
            .collect();
        let norm = Normalization::default();
        let fc_t: Vec<f64> = (0..8).map(|k| 6.5 + (k as f64 * 0.7).sin()).collect();
        let (nt, ns) = normalize_weather(&fc_t, &[0.0; 8], &norm);
        let fc = WeatherWindow::new(nt.clone(), ns).unwrap();
        let sel = select(&pool, 20 * 86_400, Some(&fc), &SelectionConfig::new(Strategy::ClosestMean, 2)).unwrap();

        let fc_mean = nt.iter().sum::<f64>() / 8.0;
        let mut brute: Vec<(f64, i64, usize)> = pool
            .iter()
            .map(|t| {
                let m = t.w_block[0].iter().map(|&v| norm.temperature(v)).sum::<f64>() / 8.0;
                ((m - fc_mean).abs(), -t.end_time, t.source_start_index)
            })
            .collect();
        brute.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(sel.starts, vec![brute[0].2, brute[1].2]);
        let mut days = sel.starts.clone();
        days.sort();
        assert_eq!(days, vec![4, 5]);
    }

    #[test]
    fn parse_strategy() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert!(matches!("best".parse::<Strategy>(), Err(Error::Config(_))));
    }
}
