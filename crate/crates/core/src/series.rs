//! Uniformly sampled building telemetry with explicit gap marks.
//!
//! A [`SeriesSet`] stores one `f64` sequence per channel. Missing or
//! implausible samples are stored as [`GAP`] (a NaN); any GAP in any channel
//! invalidates the whole time step for trajectory purposes.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDateTime, Timelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marker for a missing or rejected sample.
pub const GAP: f64 = f64::NAN;

#[inline]
pub fn is_gap(v: f64) -> bool {
    v.is_nan()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    /// Manipulated input `u` (heating or cooling power).
    #[serde(alias = "u")]
    Control,
    /// Measured disturbance `w` (ambient temperature, solar proxy).
    #[serde(alias = "w")]
    Disturbance,
    /// Predicted output `y` (zone temperature).
    #[serde(alias = "y")]
    Output,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSchema {
    pub name: String,
    pub kind: ChannelKind,
    #[serde(default)]
    pub unit: String,
    pub min: f64,
    pub max: f64,
}

impl ChannelSchema {
    pub fn new(name: &str, kind: ChannelKind, unit: &str, min: f64, max: f64) -> Self {
        Self {
            name: name.to_string(),
            kind,
            unit: unit.to_string(),
            min,
            max,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }
}

/// Channel counts `(m_u, m_w, p)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChannelCounts {
    pub inputs: usize,
    pub disturbances: usize,
    pub outputs: usize,
}

impl ChannelCounts {
    pub const fn new(inputs: usize, disturbances: usize, outputs: usize) -> Self {
        Self {
            inputs,
            disturbances,
            outputs,
        }
    }

    pub fn total(&self) -> usize {
        self.inputs + self.disturbances + self.outputs
    }

    /// Channels known over the prediction horizon (inputs and disturbances).
    pub fn exogenous(&self) -> usize {
        self.inputs + self.disturbances
    }
}

/// Validated channel list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ChannelSchema>", into = "Vec<ChannelSchema>")]
pub struct Schema {
    channels: Vec<ChannelSchema>,
}

impl TryFrom<Vec<ChannelSchema>> for Schema {
    type Error = Error;
    fn try_from(channels: Vec<ChannelSchema>) -> Result<Self> {
        Schema::new(channels)
    }
}

impl From<Schema> for Vec<ChannelSchema> {
    fn from(s: Schema) -> Self {
        s.channels
    }
}

impl Schema {
    pub fn new(channels: Vec<ChannelSchema>) -> Result<Self> {
        let mut names = HashSet::new();
        for c in &channels {
            if !(c.min < c.max) {
                return Err(Error::Config(format!(
                    "channel {}: plausible range [{}, {}] is empty",
                    c.name, c.min, c.max
                )));
            }
            if !names.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate channel name {}", c.name)));
            }
        }
        let count = |k| channels.iter().filter(|c| c.kind == k).count();
        if count(ChannelKind::Output) != 1 {
            return Err(Error::Config("exactly one output channel is required".into()));
        }
        if count(ChannelKind::Control) == 0 {
            return Err(Error::Config("at least one control channel is required".into()));
        }
        if count(ChannelKind::Disturbance) == 0 {
            return Err(Error::Config(
                "at least one disturbance channel is required".into(),
            ));
        }
        Ok(Self { channels })
    }

    /// Default layout of the synthetic plant: heating and cooling power in kW,
    /// ambient temperature, global irradiance and zone temperature.
    pub fn building() -> Self {
        use ChannelKind::*;
        Self::new(vec![
            ChannelSchema::new("P_heat", Control, "kW", 0.0, 50.0),
            ChannelSchema::new("P_cool", Control, "kW", 0.0, 50.0),
            ChannelSchema::new("T_amb", Disturbance, "degC", -30.0, 45.0),
            ChannelSchema::new("I_sol", Disturbance, "W/m2", 0.0, 1500.0),
            ChannelSchema::new("T_z", Output, "degC", 5.0, 40.0),
        ])
        .expect("built-in schema is valid")
    }

    /// [`Schema::building`] without the cooling channel.
    pub fn heating_only() -> Self {
        let channels = Self::building()
            .channels
            .into_iter()
            .filter(|c| c.name != "P_cool")
            .collect();
        Self::new(channels).expect("built-in schema is valid")
    }

    pub fn channels(&self) -> &[ChannelSchema] {
        &self.channels
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    /// Channel indices of one kind, in schema order.
    pub fn indices(&self, kind: ChannelKind) -> Vec<usize> {
        self.channels
            .iter()
            .enumerate()
            .filter(|(_, c)| c.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    /// Controls followed by disturbances, each in schema order.
    pub fn exogenous_indices(&self) -> Vec<usize> {
        let mut v = self.indices(ChannelKind::Control);
        v.extend(self.indices(ChannelKind::Disturbance));
        v
    }

    pub fn output_index(&self) -> usize {
        self.indices(ChannelKind::Output)[0]
    }

    pub fn counts(&self) -> ChannelCounts {
        ChannelCounts::new(
            self.indices(ChannelKind::Control).len(),
            self.indices(ChannelKind::Disturbance).len(),
            1,
        )
    }
}

/// How `ingest_csv` treats values outside a channel's plausible range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundsMode {
    /// Replace implausible values with GAP.
    #[default]
    Mask,
    /// Keep every finite value.
    Ignore,
}

#[derive(Clone, Debug)]
pub struct SeriesSet {
    schema: Schema,
    t0: i64,
    dt: i64,
    values: Vec<Vec<f64>>,
}

/// GAPs compare equal to each other; values compare bitwise.
impl PartialEq for SeriesSet {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.t0 == other.t0
            && self.dt == other.dt
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| {
                a.len() == b.len()
                    && a.iter().zip(b).all(|(x, y)| (is_gap(*x) && is_gap(*y)) || x.to_bits() == y.to_bits())
            })
    }
}

impl SeriesSet {
    /// Builds a series, masking non-finite and out-of-range values as GAP.
    pub fn new(schema: Schema, t0: i64, dt: i64, values: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_bounds(schema, t0, dt, values, BoundsMode::Mask)
    }

    pub fn with_bounds(
        schema: Schema,
        t0: i64,
        dt: i64,
        mut values: Vec<Vec<f64>>,
        bounds: BoundsMode,
    ) -> Result<Self> {
        if dt <= 0 {
            return Err(Error::Config(format!("sampling period must be positive, got {dt} s")));
        }
        if values.len() != schema.len() {
            return Err(Error::Shape(format!(
                "{} value columns for {} channels",
                values.len(),
                schema.len()
            )));
        }
        let n = values.first().map_or(0, Vec::len);
        if values.iter().any(|v| v.len() != n) {
            return Err(Error::Shape("channels differ in length".into()));
        }
        for (ch, col) in schema.channels().iter().zip(values.iter_mut()) {
            for v in col.iter_mut() {
                let reject = !v.is_finite() || (bounds == BoundsMode::Mask && !ch.contains(*v));
                if reject {
                    *v = GAP;
                }
            }
        }
        Ok(Self {
            schema,
            t0,
            dt,
            values,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Timestamp of step 0, UTC epoch seconds.
    pub fn t0(&self) -> i64 {
        self.t0
    }

    /// Sampling period in seconds.
    pub fn dt(&self) -> i64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.values[index]
    }

    pub fn channel_by_name(&self, name: &str) -> Option<&[f64]> {
        self.schema.index_of(name).map(|i| self.channel(i))
    }

    pub fn value(&self, channel: usize, step: usize) -> f64 {
        self.values[channel][step]
    }

    pub fn time_at(&self, step: usize) -> i64 {
        self.t0 + step as i64 * self.dt
    }

    pub fn steps_per_day(&self) -> usize {
        (86_400 / self.dt).max(1) as usize
    }

    pub fn step_is_valid(&self, step: usize) -> bool {
        self.values.iter().all(|c| !is_gap(c[step]))
    }

    /// Per-step validity: true when no channel is GAP.
    pub fn validity(&self) -> Vec<bool> {
        (0..self.len()).map(|k| self.step_is_valid(k)).collect()
    }

    pub fn gap_steps(&self) -> usize {
        (0..self.len()).filter(|&k| !self.step_is_valid(k)).count()
    }

    pub fn gap_cells(&self) -> usize {
        self.values
            .iter()
            .map(|c| c.iter().filter(|v| is_gap(**v)).count())
            .sum()
    }

    /// Share of steps with at least one GAP.
    pub fn missing_fraction(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.gap_steps() as f64 / self.len() as f64
    }

    /// Marks `step` as GAP in every channel.
    pub fn mark_gap(&mut self, step: usize) {
        for c in &mut self.values {
            c[step] = GAP;
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.schema.channels().iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for k in 0..self.len() {
            row.clear();
            row.push(format_timestamp(self.time_at(k)));
            for c in &self.values {
                let v = c[k];
                row.push(if is_gap(v) { String::new() } else { v.to_string() });
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

pub fn format_timestamp(t: i64) -> String {
    DateTime::<Utc>::from_timestamp(t, 0)
        .map(|d| d.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_else(|| t.to_string())
}

/// Parses ISO-8601 timestamps; values without an offset are taken as UTC.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(d) = DateTime::parse_from_rfc3339(s) {
        return Some(d.timestamp());
    }
    const FORMATS: [&str; 6] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .map(|d| d.and_utc().timestamp())
}

/// Fractional day of year (1.0 = January 1st, 00:00 local time).
pub fn day_of_year(t: i64, utc_offset_hours: f64) -> f64 {
    let local = t + (utc_offset_hours * 3600.0).round() as i64;
    let d = DateTime::<Utc>::from_timestamp(local, 0).unwrap_or_default();
    d.ordinal() as f64 + d.num_seconds_from_midnight() as f64 / 86_400.0
}

fn parse_cell(raw: &str) -> std::result::Result<f64, ()> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") {
        return Ok(GAP);
    }
    s.parse::<f64>().map_err(|_| ())
}

/// Reads a telemetry CSV onto a uniform grid of period `dt` seconds.
///
/// The first column holds ISO-8601 timestamps; remaining columns are matched
/// to the schema by header name (extra columns are ignored). Rows are sorted
/// by time, snapped to the grid (within half a period), and grid steps with no
/// row become GAP.
pub fn ingest_csv(
    path: impl AsRef<Path>,
    schema: &Schema,
    dt: i64,
    bounds: BoundsMode,
) -> Result<SeriesSet> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, schema, dt, bounds)
}

pub fn ingest_reader<R: Read>(
    reader: R,
    schema: &Schema,
    dt: i64,
    bounds: BoundsMode,
) -> Result<SeriesSet> {
    if dt <= 0 {
        return Err(Error::Config(format!("sampling period must be positive, got {dt} s")));
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut columns = Vec::with_capacity(schema.len());
    for ch in schema.channels() {
        let pos = header
            .iter()
            .skip(1)
            .position(|h| h.trim() == ch.name)
            .ok_or_else(|| Error::Parse {
                line: 1,
                msg: format!("header has no column named {}", ch.name),
            })?;
        columns.push(pos + 1);
    }

    let mut rows: Vec<(i64, usize, Vec<f64>)> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let t = parse_timestamp(&record[0]).ok_or_else(|| Error::Parse {
            line,
            msg: format!("invalid timestamp {:?}", &record[0]),
        })?;
        let mut vals = Vec::with_capacity(columns.len());
        for (&col, ch) in columns.iter().zip(schema.channels()) {
            let v = parse_cell(&record[col]).map_err(|_| Error::Parse {
                line,
                msg: format!("invalid number {:?} in column {}", &record[col], ch.name),
            })?;
            vals.push(v);
        }
        rows.push((t, line, vals));
    }

    rows.sort_by_key(|r| r.0);
    let Some(first) = rows.first() else {
        return SeriesSet::with_bounds(schema.clone(), 0, dt, vec![Vec::new(); schema.len()], bounds);
    };
    // Align the grid origin to a multiple of the period.
    let t0 = (first.0 as f64 / dt as f64).round() as i64 * dt;
    let snap = |t: i64, line: usize| -> Result<usize> {
        let offset = t - t0;
        let idx = (offset as f64 / dt as f64).round() as i64;
        let residual = (offset - idx * dt).abs();
        if idx < 0 || 2 * residual >= dt {
            return Err(Error::Grid {
                line,
                msg: format!("{} is {residual} s away from the nearest step", format_timestamp(t)),
            });
        }
        Ok(idx as usize)
    };
    let last = rows.last().unwrap();
    let n = snap(last.0, last.1)? + 1;
    let mut values = vec![vec![GAP; n]; schema.len()];
    let mut filled = vec![false; n];
    for (t, line, vals) in rows {
        let k = snap(t, line)?;
        if filled[k] {
            return Err(Error::Grid {
                line,
                msg: format!("{} maps onto an already occupied step", format_timestamp(t)),
            });
        }
        filled[k] = true;
        for (c, v) in vals.into_iter().enumerate() {
            values[c][k] = v;
        }
    }
    SeriesSet::with_bounds(schema.clone(), t0, dt, values, bounds)
}

/// Block-averages a finely sampled series onto a coarser grid.
///
/// A target step is GAP for a channel when any of its source samples is GAP.
/// A trailing partial block is dropped.
pub fn resample(raw: &SeriesSet, dt_target: i64) -> Result<SeriesSet> {
    if dt_target <= 0 || dt_target < raw.dt || dt_target % raw.dt != 0 {
        return Err(Error::Config(format!(
            "target period {dt_target} s is not an integer multiple of {} s",
            raw.dt
        )));
    }
    let ratio = (dt_target / raw.dt) as usize;
    let n = raw.len() / ratio;
    let values = raw
        .values
        .iter()
        .map(|c| {
            (0..n)
                .map(|k| {
                    let block = &c[k * ratio..(k + 1) * ratio];
                    if block.iter().any(|v| is_gap(*v)) {
                        GAP
                    } else {
                        block.iter().sum::<f64>() / ratio as f64
                    }
                })
                .collect()
        })
        .collect();
    SeriesSet::with_bounds(raw.schema.clone(), raw.t0, dt_target, values, BoundsMode::Ignore)
}

/// A maximal run of gap-free steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub start_index: usize,
    pub length: usize,
}

impl Segment {
    pub fn new(start_index: usize, length: usize) -> Self {
        Self {
            start_index,
            length,
        }
    }

    /// One past the last step.
    pub fn end(&self) -> usize {
        self.start_index + self.length
    }
}

/// Gap-free runs of at least `min_len` steps, in time order.
pub fn admissible_segments(series: &SeriesSet, min_len: usize) -> Vec<Segment> {
    segments_from_validity(&series.validity(), 0..series.len(), min_len)
}

/// Like [`admissible_segments`], restricted to the steps in `range`.
pub fn segments_from_validity(
    valid: &[bool],
    range: std::ops::Range<usize>,
    min_len: usize,
) -> Vec<Segment> {
    let min_len = min_len.max(1);
    let end = range.end.min(valid.len());
    let mut out = Vec::new();
    let mut run_start = None;
    for k in range.start..end {
        match (valid[k], run_start) {
            (true, None) => run_start = Some(k),
            (false, Some(s)) => {
                if k - s >= min_len {
                    out.push(Segment::new(s, k - s));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = run_start {
        if end - s >= min_len {
            out.push(Segment::new(s, end - s));
        }
    }
    out
}

/// One gap-free window of length `T_ini + T_f` across all channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub source_start_index: usize,
    /// Per control channel, `len` samples.
    pub u_block: Vec<Vec<f64>>,
    pub w_block: Vec<Vec<f64>>,
    pub y_block: Vec<Vec<f64>>,
    /// Timestamp of the last sample.
    pub end_time: i64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.y_block.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counts(&self) -> ChannelCounts {
        ChannelCounts::new(self.u_block.len(), self.w_block.len(), self.y_block.len())
    }

    /// Copies the window `[start, start + len)`; fails if it contains a GAP.
    pub fn from_series(series: &SeriesSet, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > series.len() {
            return Err(Error::Precondition(format!(
                "window [{start}, {}) exceeds series of length {}",
                start + len,
                series.len()
            )));
        }
        if let Some(k) = (start..start + len).find(|&k| !series.step_is_valid(k)) {
            return Err(Error::Precondition(format!("window starting at {start} has a GAP at step {k}")));
        }
        let take = |kind| {
            series
                .schema()
                .indices(kind)
                .into_iter()
                .map(|c| series.channel(c)[start..start + len].to_vec())
                .collect::<Vec<_>>()
        };
        Ok(Self {
            source_start_index: start,
            u_block: take(ChannelKind::Control),
            w_block: take(ChannelKind::Disturbance),
            y_block: take(ChannelKind::Output),
            end_time: series.time_at(start + len - 1),
        })
    }
}

/// All stride-1 windows of length `len` inside `segment`.
pub fn extract_trajectories(
    segment: &Segment,
    series: &SeriesSet,
    len: usize,
) -> Result<Vec<Trajectory>> {
    if len == 0 || segment.length < len {
        return Err(Error::Precondition(format!(
            "segment of length {} is shorter than trajectory length {len}",
            segment.length
        )));
    }
    (segment.start_index..=segment.end() - len)
        .map(|s| Trajectory::from_series(series, s, len))
        .collect()
}
