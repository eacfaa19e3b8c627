//! Rolling evaluation of predictor variants.
//!
//! Every variant is scored on the same instants. An instant `k` is evaluated
//! when the steps `[k - H, k + t_f)` are gap-free, with `H` covering both the
//! trajectory initialization and the ARX regressors. Prediction always uses
//! the realized weather; the distorted forecast only drives data selection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arx::{self, ArxModel, ArxOrders};
use crate::bst::{init_weight_matrix, RhsVector, RidgeSystem};
use crate::error::{Error, Result};
use crate::matrix::{min_singular_value, RankTolerance, StackedTrajectoryMatrix};
use crate::plant::{distort_forecast, rng_for, DistortionParams, SECONDS_PER_HOUR};
use crate::select::{pearson, CandidatePool, Normalization, SelectionConfig, Strategy, WeatherChannels, WeatherWindow};
use crate::series::{day_of_year, segments_from_validity, ChannelKind, Segment, SeriesSet};

pub const LAMBDAS: [f64; 5] = [1e0, 1e1, 1e2, 1e3, 1e4];
pub const WIDTHS: [usize; 3] = [181, 373, 661];
pub const MEMORY_DAYS: [f64; 3] = [3.0, 5.0, 8.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    ArxStatic,
    ArxAdaptive,
    BstStatic,
    BstAdaptive,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::ArxStatic, Family::ArxAdaptive, Family::BstStatic, Family::BstAdaptive];

    pub fn name(self) -> &'static str {
        match self {
            Family::ArxStatic => "arx_static",
            Family::ArxAdaptive => "arx_adaptive",
            Family::BstStatic => "bst_static",
            Family::BstAdaptive => "bst_adaptive",
        }
    }

    pub fn is_bst(self) -> bool {
        matches!(self, Family::BstStatic | Family::BstAdaptive)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown variant family {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum VariantSpec {
    ArxStatic,
    ArxAdaptive { memory_days: f64 },
    BstStatic { lambda: f64 },
    BstAdaptive { strategy: Strategy, width: usize, lambda: f64 },
}

fn lambda_label(l: f64) -> String {
    format!("{l:e}")
}

impl VariantSpec {
    pub fn family(&self) -> Family {
        match self {
            VariantSpec::ArxStatic => Family::ArxStatic,
            VariantSpec::ArxAdaptive { .. } => Family::ArxAdaptive,
            VariantSpec::BstStatic { .. } => Family::BstStatic,
            VariantSpec::BstAdaptive { .. } => Family::BstAdaptive,
        }
    }

    /// Stable identifier, e.g. `bst_adaptive-most_recent-w661-l1e2`.
    pub fn name(&self) -> String {
        match self {
            VariantSpec::ArxStatic => "arx_static".into(),
            VariantSpec::ArxAdaptive { memory_days } => format!("arx_adaptive-{memory_days}d"),
            VariantSpec::BstStatic { lambda } => format!("bst_static-l{}", lambda_label(*lambda)),
            VariantSpec::BstAdaptive { strategy, width, lambda } => {
                format!("bst_adaptive-{strategy}-w{width}-l{}", lambda_label(*lambda))
            }
        }
    }

    /// The 69 variants: one static ARX, three adaptive ARX, five static BST
    /// and sixty adaptive BST.
    pub fn full_grid() -> Vec<VariantSpec> {
        let mut out = vec![VariantSpec::ArxStatic];
        out.extend(MEMORY_DAYS.map(|memory_days| VariantSpec::ArxAdaptive { memory_days }));
        out.extend(LAMBDAS.map(|lambda| VariantSpec::BstStatic { lambda }));
        for strategy in Strategy::ALL {
            for width in WIDTHS {
                for lambda in LAMBDAS {
                    out.push(VariantSpec::BstAdaptive { strategy, width, lambda });
                }
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            VariantSpec::ArxStatic => true,
            VariantSpec::ArxAdaptive { memory_days } => memory_days > 0.0,
            VariantSpec::BstStatic { lambda } => lambda > 0.0,
            VariantSpec::BstAdaptive { width, lambda, .. } => width > 0 && lambda > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid variant parameters in {}", self.name())))
        }
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for VariantSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse variant name {s:?}"));
        let num = |t: &str| t.parse::<f64>().map_err(|_| bad());
        let parts: Vec<&str> = s.trim().split('-').collect();
        let spec = match parts.as_slice() {
            ["arx_static"] => VariantSpec::ArxStatic,
            ["arx_adaptive", d] => VariantSpec::ArxAdaptive {
                memory_days: num(d.strip_suffix('d').ok_or_else(bad)?)?,
            },
            ["bst_static", l] => VariantSpec::BstStatic {
                lambda: num(l.strip_prefix('l').ok_or_else(bad)?)?,
            },
            ["bst_adaptive", st, w, l] => VariantSpec::BstAdaptive {
                strategy: st.parse()?,
                width: w.strip_prefix('w').ok_or_else(bad)?.parse().map_err(|_| bad())?,
                lambda: num(l.strip_prefix('l').ok_or_else(bad)?)?,
            },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Keeps the specs matching any filter; a filter is a family name, an exact
/// variant name, or a name prefix.
pub fn filter_variants(specs: &[VariantSpec], filters: &[String]) -> Vec<VariantSpec> {
    if filters.is_empty() {
        return specs.to_vec();
    }
    specs
        .iter()
        .filter(|s| {
            let name = s.name();
            filters
                .iter()
                .any(|f| name == *f || s.family().name() == f || name.starts_with(&format!("{f}-")))
        })
        .copied()
        .collect()
}

/// Step ranges of the three phases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phases {
    /// Windows supplying static models and the initial ARX fit.
    pub identification: Vec<Range<usize>>,
    /// Adaptive models update here before scoring starts.
    pub initialization: Range<usize>,
    pub evaluation: Range<usize>,
}

/// Phase layout in days since the series start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDays {
    pub identification: Vec<[f64; 2]>,
    pub initialization: [f64; 2],
    /// `[start]` runs to the series end; `[start, end]` stops earlier.
    pub evaluation: Vec<f64>,
}

impl Default for PhaseDays {
    fn default() -> Self {
        Self {
            identification: vec![[0.0, 30.0]],
            initialization: [30.0, 60.0],
            evaluation: vec![60.0],
        }
    }
}

impl PhaseDays {
    pub fn to_steps(&self, series: &SeriesSet) -> Result<Phases> {
        let spd = series.steps_per_day() as f64;
        let step = |d: f64| -> Result<usize> {
            if d < 0.0 || !d.is_finite() {
                return Err(Error::Config(format!("phase bound {d} is not a valid day")));
            }
            Ok(((d * spd).round() as usize).min(series.len()))
        };
        let range = |[a, b]: [f64; 2]| -> Result<Range<usize>> { Ok(step(a)?..step(b)?) };
        let (eval_start, eval_end) = match self.evaluation[..] {
            [a] => (step(a)?, series.len()),
            [a, b] => (step(a)?, step(b)?),
            _ => return Err(Error::Config("evaluation takes [start] or [start, end] in days".into())),
        };
        let phases = Phases {
            identification: self.identification.iter().map(|&r| range(r)).collect::<Result<_>>()?,
            initialization: range(self.initialization)?,
            evaluation: eval_start..eval_end,
        };
        phases.validate(series.len())?;
        Ok(phases)
    }
}

impl Phases {
    pub fn validate(&self, len: usize) -> Result<()> {
        let all = self
            .identification
            .iter()
            .chain([&self.initialization, &self.evaluation]);
        for r in all {
            if r.start > r.end || r.end > len {
                return Err(Error::Config(format!("phase {r:?} lies outside the series of {len} steps")));
            }
        }
        if self.evaluation.is_empty() {
            return Err(Error::Config("evaluation phase is empty".into()));
        }
        if self.initialization.end > self.evaluation.start {
            return Err(Error::Config("initialization must end before evaluation starts".into()));
        }
        if self.identification.iter().any(|r| r.end > self.initialization.start) {
            return Err(Error::Config("identification must end before initialization starts".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub t_ini: usize,
    pub t_f: usize,
    pub arx_orders: ArxOrders,
    pub init_weight: f64,
    pub p0: f64,
    /// Score every n-th step of the evaluation phase.
    pub eval_stride: usize,
    /// Log the smallest singular value of the trajectory matrix at every
    /// n-th scored instant; 0 disables it.
    pub sigma_min_every: usize,
    /// Most recent trajectories kept in the static BST matrix.
    pub static_column_cap: Option<usize>,
    pub window_days: f64,
    pub normalization: Normalization,
    pub weather_channels: WeatherChannels,
    pub distortion: DistortionParams,
    pub distortion_seed: u64,
    pub utc_offset_hours: f64,
    pub keep_predictions: bool,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            t_ini: 12,
            t_f: 96,
            arx_orders: ArxOrders::default(),
            init_weight: 100.0,
            p0: arx::DEFAULT_P0,
            eval_stride: 1,
            sigma_min_every: 0,
            static_column_cap: None,
            window_days: 365.0,
            normalization: Normalization::default(),
            weather_channels: WeatherChannels::default(),
            distortion: DistortionParams::default(),
            distortion_seed: 0,
            utc_offset_hours: 0.0,
            keep_predictions: false,
            jobs: 1,
        }
    }
}

impl HarnessConfig {
    fn validate(&self) -> Result<()> {
        if self.t_ini == 0 || self.t_f == 0 || self.eval_stride == 0 {
            return Err(Error::Config("t_ini, t_f and eval_stride must be at least 1".into()));
        }
        self.arx_orders.validate()
    }

    /// History an instant needs before `k`.
    pub fn history(&self) -> usize {
        self.t_ini.max(self.arx_orders.history())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstantRecord {
    pub step: usize,
    pub time: i64,
    /// `|prediction - actual|` per horizon step.
    pub abs_errors: Vec<f64>,
    pub sigma_min: Option<f64>,
    /// Seconds spent producing this prediction, shared work included.
    pub wall_time: f64,
    /// Predictions, when requested.
    pub predictions: Option<Vec<f64>>,
}

impl InstantRecord {
    pub fn mean_abs_error(&self) -> f64 {
        self.abs_errors.iter().sum::<f64>() / self.abs_errors.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    /// A GAP inside the history or horizon.
    Gap,
    /// Too close to the series start or end.
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedInstant {
    pub step: usize,
    pub time: i64,
    pub reason: SkipReason,
}

/// Cubic least-squares fit `c0 + c1 d + c2 d^2 + c3 d^3` in day of year.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeasonalFit {
    pub coefficients: [f64; 4],
    pub residual_ss: f64,
    /// `(day, fitted)` at every whole day 1..=366.
    pub curve: Vec<(f64, f64)>,
}

impl SeasonalFit {
    pub fn eval(&self, d: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * d + c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub variant: VariantSpec,
    pub instants: Vec<InstantRecord>,
    pub skipped: Vec<SkippedInstant>,
    /// Steps in the evaluation phase.
    pub evaluation_steps: usize,
    pub eval_stride: usize,
    pub rmse: f64,
    pub per_step_mean: Vec<f64>,
    pub per_step_std: Vec<f64>,
    pub seasonal: Option<SeasonalFit>,
    pub mean_wall_time: f64,
    pub notes: Vec<String>,
}

impl EvaluationReport {
    pub fn name(&self) -> String {
        self.variant.name()
    }

    /// Instants the stride visits.
    pub fn sampled_instants(&self) -> usize {
        self.evaluation_steps.div_ceil(self.eval_stride)
    }

    pub fn sigma_min_log(&self) -> Vec<(f64, f64)> {
        self.instants
            .iter()
            .filter_map(|r| r.sigma_min.map(|s| (s, r.mean_abs_error())))
            .collect()
    }

    /// `(day of year, mean absolute error)` per instant.
    pub fn seasonal_points(&self, utc_offset_hours: f64) -> Vec<(f64, f64)> {
        self.instants
            .iter()
            .map(|r| (day_of_year(r.time, utc_offset_hours), r.mean_abs_error()))
            .collect()
    }
}

/// Root mean square of `pred - actual`.
pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::Metric("prediction and actual differ in length".into()));
    }
    rmse_of(pred.iter().zip(actual).map(|(p, a)| p - a))
}

fn rmse_of(errors: impl Iterator<Item = f64>) -> Result<f64> {
    let (mut ss, mut n) = (0.0, 0usize);
    for e in errors {
        ss += e * e;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Metric("no errors to aggregate".into()));
    }
    Ok((ss / n as f64).sqrt())
}

/// Mean and population standard deviation of the absolute error at each
/// horizon step. `errors[i][h]` is the error of instant `i` at step `h`.
pub fn per_step_stats(errors: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    let Some(first) = errors.first() else {
        return Err(Error::Metric("no instants to aggregate".into()));
    };
    let h = first.len();
    if h == 0 || errors.iter().any(|e| e.len() != h) {
        return Err(Error::Metric("error trajectories must be non-empty and equally long".into()));
    }
    let n = errors.len() as f64;
    let mut mean = vec![0.0; h];
    for e in errors {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v.abs();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; h];
    for e in errors {
        for ((s, v), m) in var.iter_mut().zip(e).zip(&mean) {
            *s += (v.abs() - m).powi(2);
        }
    }
    Ok((mean, var.into_iter().map(|s| (s / n).sqrt()).collect()))
}

/// Least-squares cubic through `(day, value)` pairs.
pub fn seasonal_fit(days: &[f64], values: &[f64]) -> Result<SeasonalFit> {
    if days.len() != values.len() {
        return Err(Error::Fit("days and values differ in length".into()));
    }
    let distinct: BTreeSet<i64> = days.iter().map(|d| d.floor() as i64).collect();
    if distinct.len() < 4 {
        return Err(Error::Fit(format!("{} distinct days, a cubic needs 4", distinct.len())));
    }
    // Work in d / 365 so the columns have comparable scale.
    const SCALE: f64 = 365.0;
    let x = DMatrix::from_fn(days.len(), 4, |i, j| (days[i] / SCALE).powi(j as i32));
    let y = DVector::from_column_slice(values);
    let qr = x.clone().qr();
    let qty = qr.q().tr_mul(&y);
    let scaled = qr
        .r()
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Fit("design matrix is singular".into()))?;
    let coefficients = [
        scaled[0],
        scaled[1] / SCALE,
        scaled[2] / SCALE.powi(2),
        scaled[3] / SCALE.powi(3),
    ];
    let residual_ss = (&x * &scaled - &y).norm_squared();
    let mut fit = SeasonalFit {
        coefficients,
        residual_ss,
        curve: Vec::new(),
    };
    fit.curve = (1..=366).map(|d| (d as f64, fit.eval(d as f64))).collect();
    Ok(fit)
}

/// Pearson coefficient between the logged smallest singular values and the
/// per-instant mean absolute error, with the sample count. Zero-variance
/// inputs give 0.
pub fn sigma_min_correlation(report: &EvaluationReport) -> Result<(f64, usize)> {
    if !report.variant.family().is_bst() {
        return Err(Error::NotApplicable(format!("{} has no trajectory matrix", report.name())));
    }
    let log = report.sigma_min_log();
    if log.len() < 2 {
        return Ok((0.0, log.len()));
    }
    let (s, e): (Vec<f64>, Vec<f64>) = log.into_iter().unzip();
    Ok((pearson(&s, &e), s.len()))
}

/// Reports of a grid run, plus variants that failed.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct GridOutcome {
    pub reports: Vec<EvaluationReport>,
    pub failures: Vec<(String, String)>,
    pub skipped: Vec<SkippedInstant>,
    pub notes: Vec<String>,
}

impl GridOutcome {
    pub fn report(&self, name: &str) -> Option<&EvaluationReport> {
        self.reports.iter().find(|r| r.name() == name)
    }

    /// Reports sorted by RMSE, then name.
    pub fn ranked(&self) -> Vec<&EvaluationReport> {
        let mut r: Vec<_> = self.reports.iter().collect();
        r.sort_by(|a, b| a.rmse.total_cmp(&b.rmse).then_with(|| a.name().cmp(&b.name())));
        r
    }
}

/// Scores one variant.
pub fn run_variant(series: &SeriesSet, spec: VariantSpec, phases: &Phases, cfg: &HarnessConfig) -> Result<EvaluationReport> {
    let mut out = run_grid(series, &[spec], phases, cfg)?;
    if let Some((_, e)) = out.failures.pop() {
        return Err(Error::Numerical(e));
    }
    out.reports.pop().ok_or_else(|| Error::Numerical("variant produced no report".into()))
}

type VariantRun = (VariantSpec, Result<(Vec<InstantRecord>, Vec<String>)>);

/// Scores every spec on the shared instant set. Configuration problems are
/// returned as errors; a failing variant is listed in
/// [`GridOutcome::failures`] and the others still complete.
pub fn run_grid(series: &SeriesSet, specs: &[VariantSpec], phases: &Phases, cfg: &HarnessConfig) -> Result<GridOutcome> {
    cfg.validate()?;
    phases.validate(series.len())?;
    if specs.is_empty() {
        return Err(Error::Config("no variants selected".into()));
    }
    let mut seen = BTreeSet::new();
    for s in specs {
        s.validate()?;
        if !seen.insert(s.name()) {
            return Err(Error::Config(format!("variant {} listed twice", s.name())));
        }
    }
    let ctx = Context::new(series, phases, cfg);
    let tasks = plan_tasks(specs);
    let arx_start = if specs.iter().any(|s| matches!(s.family(), Family::ArxStatic | Family::ArxAdaptive)) {
        Some(ctx.initial_arx())
    } else {
        None
    };

    let run = |task: &Task| -> Vec<VariantRun> {
        match task {
            Task::ArxStatic => vec![(VariantSpec::ArxStatic, ctx.run_arx(arx_start.as_ref().unwrap(), None))],
            Task::ArxAdaptive(days) => vec![(
                VariantSpec::ArxAdaptive { memory_days: *days },
                ctx.run_arx(arx_start.as_ref().unwrap(), Some(*days)),
            )],
            Task::BstStatic(lambdas) => ctx.run_bst_static(lambdas),
            Task::BstAdaptive { strategy, variants } => ctx.run_bst_adaptive(*strategy, variants),
        }
    };
    let results: Vec<_> = if cfg.jobs == 1 {
        tasks.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| tasks.par_iter().map(run).collect())
    };

    let mut by_name: BTreeMap<String, VariantRun> = BTreeMap::new();
    for (spec, r) in results.into_iter().flatten() {
        by_name.insert(spec.name(), (spec, r));
    }
    let mut outcome = GridOutcome {
        skipped: ctx.skipped.clone(),
        ..GridOutcome::default()
    };
    if let Some(Ok((_, Some(note)))) = &arx_start {
        outcome.notes.push(note.clone());
    }
    for spec in specs {
        let (spec, result) = by_name.remove(&spec.name()).expect("every spec has a task");
        match result.and_then(|(records, notes)| ctx.finish(spec, records, notes)) {
            Ok(r) => outcome.reports.push(r),
            Err(e) => {
                log::warn!("variant {} failed: {e}", spec.name());
                outcome.failures.push((spec.name(), e.to_string()));
            }
        }
    }
    Ok(outcome)
}

enum Task {
    ArxStatic,
    ArxAdaptive(f64),
    BstStatic(Vec<f64>),
    BstAdaptive {
        strategy: Strategy,
        variants: Vec<(usize, f64)>,
    },
}

fn plan_tasks(specs: &[VariantSpec]) -> Vec<Task> {
    let mut tasks = Vec::new();
    let mut statics = Vec::new();
    let mut adaptive: BTreeMap<Strategy, Vec<(usize, f64)>> = BTreeMap::new();
    for s in specs {
        match *s {
            VariantSpec::ArxStatic => tasks.push(Task::ArxStatic),
            VariantSpec::ArxAdaptive { memory_days } => tasks.push(Task::ArxAdaptive(memory_days)),
            VariantSpec::BstStatic { lambda } => statics.push(lambda),
            VariantSpec::BstAdaptive { strategy, width, lambda } => {
                adaptive.entry(strategy).or_default().push((width, lambda))
            }
        }
    }
    if !statics.is_empty() {
        tasks.push(Task::BstStatic(statics));
    }
    for (strategy, variants) in adaptive {
        tasks.push(Task::BstAdaptive { strategy, variants });
    }
    tasks
}

type VariantResult = (VariantSpec, Result<(Vec<InstantRecord>, Vec<String>)>);

struct Context<'a> {
    series: &'a SeriesSet,
    phases: &'a Phases,
    cfg: &'a HarnessConfig,
    valid: Vec<bool>,
    instants: Vec<usize>,
    skipped: Vec<SkippedInstant>,
}

impl<'a> Context<'a> {
    fn new(series: &'a SeriesSet, phases: &'a Phases, cfg: &'a HarnessConfig) -> Self {
        let valid = series.validity();
        // Prefix counts of invalid steps for O(1) window checks.
        let mut bad = vec![0usize; valid.len() + 1];
        for (k, &v) in valid.iter().enumerate() {
            bad[k + 1] = bad[k] + usize::from(!v);
        }
        let h = cfg.history();
        let mut instants = Vec::new();
        let mut skipped = Vec::new();
        for k in phases.evaluation.clone().step_by(cfg.eval_stride) {
            let reason = if k < h || k + cfg.t_f > series.len() {
                Some(SkipReason::Boundary)
            } else if bad[k + cfg.t_f] - bad[k - h] > 0 {
                Some(SkipReason::Gap)
            } else {
                None
            };
            match reason {
                None => instants.push(k),
                Some(reason) => skipped.push(SkippedInstant {
                    step: k,
                    time: series.time_at(k),
                    reason,
                }),
            }
        }
        Self {
            series,
            phases,
            cfg,
            valid,
            instants,
            skipped,
        }
    }

    fn actual(&self, k: usize) -> &[f64] {
        &self.series.channel(self.series.schema().output_index())[k..k + self.cfg.t_f]
    }

    fn record(&self, k: usize, pred: &[f64], sigma_min: Option<f64>, wall_time: f64) -> InstantRecord {
        InstantRecord {
            step: k,
            time: self.series.time_at(k),
            abs_errors: pred.iter().zip(self.actual(k)).map(|(p, a)| (p - a).abs()).collect(),
            sigma_min,
            wall_time,
            predictions: self.cfg.keep_predictions.then(|| pred.to_vec()),
        }
    }

    fn identification_segments(&self, min_len: usize) -> Vec<Segment> {
        self.phases
            .identification
            .iter()
            .flat_map(|r| segments_from_validity(&self.valid, r.clone(), min_len))
            .collect()
    }

    /// Batch fit on the identification data. When the regressors are not
    /// identifiable, the minimum-norm fit over the identifiable directions
    /// is used instead.
    fn initial_arx(&self) -> Result<(ArxModel, Option<String>)> {
        let orders = self.cfg.arx_orders;
        let segments = self.identification_segments(orders.history() + 1);
        match arx::fit_batch(&segments, self.series, orders) {
            Ok(mut m) => {
                m.reset_covariance(self.cfg.p0);
                Ok((m, None))
            }
            Err(Error::Identifiability { directions }) => {
                let (mut m, rank) = arx::fit_min_norm(&segments, self.series, orders, RankTolerance::default())?;
                m.reset_covariance(self.cfg.p0);
                let note = format!(
                    "batch ARX fit not identifiable ({}); minimum-norm fit over {rank} of {} directions",
                    directions.join("; "),
                    m.theta.len()
                );
                log::warn!("{note}");
                Ok((m, Some(note)))
            }
            Err(e) => Err(e),
        }
    }

    fn run_arx(
        &self,
        start: &Result<(ArxModel, Option<String>)>,
        memory_days: Option<f64>,
    ) -> Result<(Vec<InstantRecord>, Vec<String>)> {
        let (model, _) = start.as_ref().map_err(|e| Error::Fit(e.to_string()))?;
        let mut model = model.clone();
        let t_f = self.cfg.t_f;
        let mut records = Vec::with_capacity(self.instants.len());
        let mut notes = Vec::new();
        let Some(days) = memory_days else {
            for &k in &self.instants {
                let t = Instant::now();
                let pred = model.predict_from_series(self.series, k, t_f, None)?;
                records.push(self.record(k, &pred, None, t.elapsed().as_secs_f64()));
            }
            return Ok((records, notes));
        };
        model = model.with_alpha(arx::alpha_from_memory(days, self.series.steps_per_day()))?;
        let mut next = self.instants.iter().peekable();
        let (mut halted, mut faults) = (0usize, 0usize);
        for k in self.phases.initialization.start..self.phases.evaluation.end {
            if next.peek() == Some(&&k) {
                next.next();
                let t = Instant::now();
                let pred = model.predict_from_series(self.series, k, t_f, None)?;
                records.push(self.record(k, &pred, None, t.elapsed().as_secs_f64()));
            }
            match model.update_from_series(self.series, k) {
                Ok(true) => {}
                Ok(false) => halted += 1,
                Err(Error::Numerical(_)) => faults += 1,
                Err(e) => return Err(e),
            }
        }
        notes.push(format!("update halted at {halted} steps with incomplete history"));
        if faults > 0 {
            notes.push(format!("{faults} updates skipped after a non-positive denominator"));
        }
        Ok((records, notes))
    }

    fn trajectory_len(&self) -> usize {
        self.cfg.t_ini + self.cfg.t_f
    }

    fn weights(&self) -> crate::bst::InitWeightMatrix {
        init_weight_matrix(self.cfg.t_ini, self.cfg.t_f, self.series.schema().counts(), self.cfg.init_weight)
    }

    fn rhs(&self, k: usize) -> Result<DVector<f64>> {
        Ok(RhsVector::from_series(self.series, k, self.cfg.t_ini, self.cfg.t_f, None)?
            .as_vector()
            .clone())
    }

    fn sigma_due(&self, index: usize) -> bool {
        self.cfg.sigma_min_every > 0 && index.is_multiple_of(self.cfg.sigma_min_every)
    }

    fn run_bst_static(&self, lambdas: &[f64]) -> Vec<VariantResult> {
        let specs: Vec<VariantSpec> = lambdas.iter().map(|&lambda| VariantSpec::BstStatic { lambda }).collect();
        match self.bst_static_records(lambdas) {
            Ok(per) => specs.into_iter().zip(per).map(|(s, r)| (s, Ok(r))).collect(),
            Err(e) => {
                let msg = e.to_string();
                specs
                    .into_iter()
                    .map(|s| (s, Err(Error::Numerical(msg.clone()))))
                    .collect()
            }
        }
    }

    fn bst_static_records(&self, lambdas: &[f64]) -> Result<Vec<(Vec<InstantRecord>, Vec<String>)>> {
        let len = self.trajectory_len();
        let mut starts: Vec<usize> = self
            .identification_segments(len)
            .iter()
            .flat_map(|s| s.start_index..=s.end() - len)
            .collect();
        if starts.is_empty() {
            return Err(Error::Precondition("no admissible trajectory in the identification data".into()));
        }
        let mut notes = vec![format!("{} admissible identification trajectories", starts.len())];
        if let Some(cap) = self.cfg.static_column_cap {
            if starts.len() > cap {
                starts.drain(..starts.len() - cap);
                notes.push(format!("matrix capped at the {cap} most recent trajectories"));
            }
        }
        let stack = StackedTrajectoryMatrix::from_series(self.series, &starts, self.cfg.t_ini, self.cfg.t_f)?;
        let system = RidgeSystem::new(stack.known(), &self.weights())?;
        let sigma = (self.cfg.sigma_min_every > 0).then(|| stack.min_singular_value());
        let mut maps = Vec::with_capacity(lambdas.len());
        for &l in lambdas {
            maps.push(system.factor(l)?.output_map(stack.future_outputs())?);
        }
        notes.push(format!("{} columns, {:?} form", stack.width(), system.form()));
        let mut out: Vec<(Vec<InstantRecord>, Vec<String>)> =
            lambdas.iter().map(|_| (Vec::with_capacity(self.instants.len()), notes.clone())).collect();
        for &k in &self.instants {
            let v = self.rhs(k)?;
            for (map, (records, _)) in maps.iter().zip(out.iter_mut()) {
                let t = Instant::now();
                let pred = map * &v;
                records.push(self.record(k, pred.as_slice(), sigma, t.elapsed().as_secs_f64()));
            }
        }
        Ok(out)
    }

    fn run_bst_adaptive(&self, strategy: Strategy, variants: &[(usize, f64)]) -> Vec<VariantResult> {
        let specs: Vec<VariantSpec> = variants
            .iter()
            .map(|&(width, lambda)| VariantSpec::BstAdaptive { strategy, width, lambda })
            .collect();
        match self.bst_adaptive_records(strategy, variants) {
            Ok(per) => specs.into_iter().zip(per).map(|(s, r)| (s, Ok(r))).collect(),
            Err(e) => {
                let msg = e.to_string();
                specs
                    .into_iter()
                    .map(|s| (s, Err(Error::Numerical(msg.clone()))))
                    .collect()
            }
        }
    }

    /// Forecast the selection compares against: measured weather over the
    /// initialization steps, then the distorted realized weather.
    fn selection_forecast(&self, k: usize) -> Result<WeatherWindow> {
        let cfg = self.cfg;
        let w = self.series.schema().indices(ChannelKind::Disturbance);
        let (tc, sc) = (w[cfg.weather_channels.temperature], w[cfg.weather_channels.solar]);
        let temp = self.series.channel(tc);
        let solar = self.series.channel(sc);
        let dt_hours = self.series.dt() as f64 / SECONDS_PER_HOUR;
        let mut rng = rng_for(cfg.distortion_seed, k as u64);
        let (ft, fs) = distort_forecast(&temp[k..k + cfg.t_f], &solar[k..k + cfg.t_f], dt_hours, &cfg.distortion, &mut rng)?;
        let n = &cfg.normalization;
        let t_all = temp[k - cfg.t_ini..k].iter().chain(&ft).map(|&v| n.temperature(v)).collect();
        let s_all = solar[k - cfg.t_ini..k].iter().chain(&fs).map(|&v| n.solar(v)).collect();
        WeatherWindow::new(t_all, s_all)
    }

    fn bst_adaptive_records(
        &self,
        strategy: Strategy,
        variants: &[(usize, f64)],
    ) -> Result<Vec<(Vec<InstantRecord>, Vec<String>)>> {
        let len = self.trajectory_len();
        let starts: Vec<usize> = segments_from_validity(&self.valid, 0..self.phases.evaluation.end, len)
            .iter()
            .flat_map(|s| s.start_index..=s.end() - len)
            .collect();
        let pool = CandidatePool::from_series(
            self.series,
            &starts,
            len,
            self.cfg.weather_channels,
            &self.cfg.normalization,
        )?;
        let mut widths: Vec<usize> = variants.iter().map(|v| v.0).collect();
        widths.sort_unstable();
        widths.dedup();
        let max_width = *widths.last().expect("at least one variant");
        let select_cfg = SelectionConfig {
            strategy,
            width: max_width,
            window_days: self.cfg.window_days,
            normalization: self.cfg.normalization,
        };
        let weights = self.weights();
        let mut out: Vec<(Vec<InstantRecord>, Vec<String>)> = variants
            .iter()
            .map(|_| (Vec::with_capacity(self.instants.len()), Vec::new()))
            .collect();
        let mut shortfalls = vec![0usize; widths.len()];
        for (index, &k) in self.instants.iter().enumerate() {
            let t_select = Instant::now();
            let forecast = if strategy.uses_weather() {
                Some(self.selection_forecast(k)?)
            } else {
                None
            };
            let ranked = pool.select(self.series.time_at(k), forecast.as_ref(), &select_cfg)?;
            let v = self.rhs(k)?;
            let select_time = t_select.elapsed().as_secs_f64();
            let t_build = Instant::now();
            let stack =
                StackedTrajectoryMatrix::from_series(self.series, &ranked.starts, self.cfg.t_ini, self.cfg.t_f)?;
            let used: Vec<usize> = widths.iter().map(|&w| w.min(stack.width())).collect();
            let systems = RidgeSystem::nested(stack.known(), &weights, &used)?;
            let build_time = t_build.elapsed().as_secs_f64();
            let future = stack.future_outputs();
            for (wi, &width) in widths.iter().enumerate() {
                if used[wi] < width {
                    shortfalls[wi] += 1;
                }
                let outputs = future.columns(0, used[wi]);
                let sigma = self
                    .sigma_due(index)
                    .then(|| min_singular_value(&stack.matrix().columns(0, used[wi]).into_owned()));
                for (vi, &(w, lambda)) in variants.iter().enumerate() {
                    if w != width {
                        continue;
                    }
                    let t = Instant::now();
                    let g = systems[wi].factor(lambda)?.solve(&v)?;
                    let pred = outputs * g;
                    let wall = select_time + build_time + t.elapsed().as_secs_f64();
                    out[vi].0.push(self.record(k, pred.as_slice(), sigma, wall));
                }
            }
        }
        for (vi, &(w, _)) in variants.iter().enumerate() {
            let wi = widths.binary_search(&w).expect("width listed");
            if shortfalls[wi] > 0 {
                out[vi].1.push(format!("{} instants had fewer than {w} candidates", shortfalls[wi]));
            }
        }
        Ok(out)
    }

    fn finish(&self, variant: VariantSpec, instants: Vec<InstantRecord>, mut notes: Vec<String>) -> Result<EvaluationReport> {
        if instants.is_empty() {
            return Err(Error::Metric("no admissible evaluation instant".into()));
        }
        let rmse = rmse_of(instants.iter().flat_map(|r| r.abs_errors.iter().copied()))?;
        let errors: Vec<Vec<f64>> = instants.iter().map(|r| r.abs_errors.clone()).collect();
        let (per_step_mean, per_step_std) = per_step_stats(&errors)?;
        let mean_wall_time = instants.iter().map(|r| r.wall_time).sum::<f64>() / instants.len() as f64;
        let mut report = EvaluationReport {
            variant,
            instants,
            skipped: self.skipped.clone(),
            evaluation_steps: self.phases.evaluation.len(),
            eval_stride: self.cfg.eval_stride,
            rmse,
            per_step_mean,
            per_step_std,
            seasonal: None,
            mean_wall_time,
            notes: Vec::new(),
        };
        let (days, values): (Vec<f64>, Vec<f64>) = report.seasonal_points(self.cfg.utc_offset_hours).into_iter().unzip();
        match seasonal_fit(&days, &values) {
            Ok(fit) => report.seasonal = Some(fit),
            Err(e) => notes.push(format!("no seasonal fit: {e}")),
        }
        report.notes = notes;
        Ok(report)
    }
}
