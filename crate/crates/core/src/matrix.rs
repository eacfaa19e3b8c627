//! Hankel, mosaic-Hankel, Page and stacked trajectory matrices, plus
//! persistency-of-excitation checks.
//!
//! Multichannel sequences are passed as `m x T` matrices (one row per
//! channel, one column per time step). Builders stack each time step's
//! channels contiguously, so row `i * m + c` of a depth-`L` matrix holds
//! channel `c` at lag `i`.

use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{ChannelCounts, ChannelKind, SeriesSet, Trajectory};

/// Wraps a scalar sequence as a `1 x T` matrix.
pub fn sequence(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(1, values.len(), values)
}

/// Columns are windows of `window` time steps taken every `stride` steps.
fn strided_windows(z: &DMatrix<f64>, window: usize, stride: usize) -> DMatrix<f64> {
    let m = z.nrows();
    let t = z.ncols();
    let cols = if t < window { 0 } else { (t - window) / stride + 1 };
    DMatrix::from_fn(window * m, cols, |r, j| z[(r % m, j * stride + r / m)])
}

/// Depth-`depth` Hankel matrix with `T - depth + 1` columns.
pub fn build_hankel(z: &DMatrix<f64>, depth: usize) -> Result<DMatrix<f64>> {
    if depth == 0 || z.ncols() < depth {
        return Err(Error::Size {
            len: z.ncols(),
            depth,
        });
    }
    Ok(strided_windows(z, depth, 1))
}

/// Horizontal concatenation of the Hankel matrices of each segment.
/// Segments shorter than `depth` are skipped.
pub fn build_mosaic_hankel(segments: &[DMatrix<f64>], depth: usize) -> Result<DMatrix<f64>> {
    let usable: Vec<_> = segments
        .iter()
        .filter(|s| depth > 0 && s.ncols() >= depth)
        .collect();
    let Some(first) = usable.first() else {
        return Err(Error::EmptyMatrix { depth });
    };
    let m = first.nrows();
    if usable.iter().any(|s| s.nrows() != m) {
        return Err(Error::Shape("segments differ in channel count".into()));
    }
    let blocks: Vec<_> = usable.iter().map(|s| strided_windows(s, depth, 1)).collect();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(depth * m, cols);
    let mut at = 0;
    for b in &blocks {
        out.columns_mut(at, b.ncols()).copy_from(b);
        at += b.ncols();
    }
    Ok(out)
}

/// Page matrix: non-overlapping windows; the tail `T mod depth` samples are
/// dropped.
pub fn build_page(z: &DMatrix<f64>, depth: usize) -> Result<DMatrix<f64>> {
    if depth == 0 || z.ncols() < depth {
        return Err(Error::Size {
            len: z.ncols(),
            depth,
        });
    }
    Ok(strided_windows(z, depth, depth))
}

/// Singular values, computed on the tall orientation of `m`.
pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    if m.nrows() >= m.ncols() {
        m.clone().svd(false, false).singular_values
    } else {
        m.transpose().svd(false, false).singular_values
    }
}

/// Smallest of the `min(rows, cols)` singular values.
pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().copied().fold(f64::INFINITY, f64::min).max(0.0)
}

/// Rank threshold `scale * sigma_max * max(rows, cols) * eps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTolerance {
    pub scale: f64,
}

impl Default for RankTolerance {
    fn default() -> Self {
        Self { scale: 1.0 }
    }
}

impl RankTolerance {
    pub fn threshold(&self, sigma_max: f64, rows: usize, cols: usize) -> f64 {
        self.scale * sigma_max * rows.max(cols) as f64 * f64::EPSILON
    }
}

pub fn numeric_rank(m: &DMatrix<f64>, tol: RankTolerance) -> usize {
    let sv = singular_values(m);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    let thr = tol.threshold(smax, m.nrows(), m.ncols());
    sv.iter().filter(|&&s| s > thr).count()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeStructure {
    Hankel,
    MosaicHankel,
    /// `blocks` shifted Page matrices stacked vertically (`M` in the Page
    /// condition); `blocks = 1` is the plain Page matrix.
    Page { blocks: usize },
}

impl FromStr for PeStructure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        match s.as_str() {
            "hankel" => Ok(Self::Hankel),
            "mosaic_hankel" | "mosaic" => Ok(Self::MosaicHankel),
            "page" => Ok(Self::Page { blocks: 1 }),
            other => match other.strip_prefix("page:").map(str::parse::<usize>) {
                Some(Ok(blocks)) if blocks >= 1 => Ok(Self::Page { blocks }),
                _ => Err(Error::Config(format!("unknown matrix structure {other:?}"))),
            },
        }
    }
}

impl fmt::Display for PeStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Hankel => f.write_str("hankel"),
            Self::MosaicHankel => f.write_str("mosaic_hankel"),
            Self::Page { blocks: 1 } => f.write_str("page"),
            Self::Page { blocks } => write!(f, "page:{blocks}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeVerdict {
    pub structure: PeStructure,
    pub rank: usize,
    pub required_rank: usize,
    pub satisfied: bool,
    /// Minimal number of samples for the structure's condition.
    pub min_t: usize,
    /// Samples actually supplied (summed over segments).
    pub samples: usize,
    /// True when the condition is only sufficient (Page).
    pub sufficient_only: bool,
}

/// Checks whether the input data is persistently exciting of order `depth`.
///
/// `data` holds one `m x T` matrix for Hankel and Page, and one per segment
/// for mosaic-Hankel. The verdict compares the numeric rank of the prescribed
/// matrix with full row rank.
pub fn pe_check(
    data: &[DMatrix<f64>],
    depth: usize,
    structure: PeStructure,
    tol: RankTolerance,
) -> Result<PeVerdict> {
    let single = || -> Result<&DMatrix<f64>> {
        match data {
            [one] => Ok(one),
            _ => Err(Error::Config(format!(
                "{structure} check needs exactly one sequence, got {}",
                data.len()
            ))),
        }
    };
    let (matrix, required_rank, min_t, samples) = match structure {
        PeStructure::Hankel => {
            let z = single()?;
            let m = z.nrows();
            (build_hankel(z, depth)?, depth * m, depth * (m + 1) - 1, z.ncols())
        }
        PeStructure::MosaicHankel => {
            let usable: Vec<_> = data.iter().filter(|s| s.ncols() >= depth).collect();
            let mat = build_mosaic_hankel(data, depth)?;
            let m = usable[0].nrows();
            let q = usable.len();
            let samples = usable.iter().map(|s| s.ncols()).sum();
            (mat, depth * m, depth * (m + q) - q, samples)
        }
        PeStructure::Page { blocks } => {
            if blocks == 0 {
                return Err(Error::Config("page structure needs at least one block".into()));
            }
            let z = single()?;
            let m = z.nrows();
            let window = blocks * depth;
            if depth == 0 || z.ncols() < window {
                return Err(Error::Size {
                    len: z.ncols(),
                    depth: window,
                });
            }
            let min_t = depth * ((m * depth + 1) * blocks - 1);
            (strided_windows(z, window, depth), window * m, min_t, z.ncols())
        }
    };
    let rank = numeric_rank(&matrix, tol);
    Ok(PeVerdict {
        structure,
        rank,
        required_rank,
        satisfied: rank == required_rank,
        min_t,
        samples,
        sufficient_only: matches!(structure, PeStructure::Page { .. }),
    })
}

/// The six row blocks of a stacked trajectory matrix, top to bottom.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    InitInputs,
    InitDisturbances,
    InitOutputs,
    FutureInputs,
    FutureDisturbances,
    FutureOutputs,
}

impl Block {
    pub const ALL: [Block; 6] = [
        Block::InitInputs,
        Block::InitDisturbances,
        Block::InitOutputs,
        Block::FutureInputs,
        Block::FutureDisturbances,
        Block::FutureOutputs,
    ];

    fn kind(self) -> ChannelKind {
        match self {
            Block::InitInputs | Block::FutureInputs => ChannelKind::Control,
            Block::InitDisturbances | Block::FutureDisturbances => ChannelKind::Disturbance,
            Block::InitOutputs | Block::FutureOutputs => ChannelKind::Output,
        }
    }

    fn is_init(self) -> bool {
        matches!(self, Block::InitInputs | Block::InitDisturbances | Block::InitOutputs)
    }
}

/// Row layout of the six-block stack for given horizon lengths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackLayout {
    pub t_ini: usize,
    pub t_f: usize,
    pub counts: ChannelCounts,
}

impl StackLayout {
    pub fn new(t_ini: usize, t_f: usize, counts: ChannelCounts) -> Self {
        Self { t_ini, t_f, counts }
    }

    pub fn len(&self) -> usize {
        self.t_ini + self.t_f
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rows(&self) -> usize {
        self.len() * self.counts.total()
    }

    /// Rows of the first five blocks.
    pub fn known_rows(&self) -> usize {
        self.t_ini * self.counts.total() + self.t_f * self.counts.exogenous()
    }

    fn channels(&self, kind: ChannelKind) -> usize {
        match kind {
            ChannelKind::Control => self.counts.inputs,
            ChannelKind::Disturbance => self.counts.disturbances,
            ChannelKind::Output => self.counts.outputs,
        }
    }

    pub fn block_rows(&self, block: Block) -> Range<usize> {
        let mut start = 0;
        for b in Block::ALL {
            let steps = if b.is_init() { self.t_ini } else { self.t_f };
            let n = steps * self.channels(b.kind());
            if b == block {
                return start..start + n;
            }
            start += n;
        }
        unreachable!()
    }

    /// Writes the stacked column of the window starting at `start`.
    /// `channels` lists the series channel indices per kind, in schema order.
    fn fill_column(&self, series: &SeriesSet, start: usize, channels: &KindChannels, out: &mut [f64]) {
        let mut r = 0;
        for b in Block::ALL {
            let (offset, steps) = if b.is_init() { (0, self.t_ini) } else { (self.t_ini, self.t_f) };
            let chans = channels.of(b.kind());
            for t in 0..steps {
                for &c in chans {
                    out[r] = series.value(c, start + offset + t);
                    r += 1;
                }
            }
        }
    }
}

struct KindChannels {
    u: Vec<usize>,
    w: Vec<usize>,
    y: Vec<usize>,
}

impl KindChannels {
    fn of(&self, kind: ChannelKind) -> &[usize] {
        match kind {
            ChannelKind::Control => &self.u,
            ChannelKind::Disturbance => &self.w,
            ChannelKind::Output => &self.y,
        }
    }
}

/// Trajectory columns arranged as
/// `[H_ini^u; H_ini^w; H_ini^y; H_f^u; H_f^w; H_f^y]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedTrajectoryMatrix {
    layout: StackLayout,
    data: DMatrix<f64>,
    column_end_times: Vec<i64>,
}

/// Stacks trajectories column by column; see [`StackedTrajectoryMatrix`].
pub fn stack_blocks(
    trajectories: &[Trajectory],
    t_ini: usize,
    t_f: usize,
    counts: ChannelCounts,
) -> Result<StackedTrajectoryMatrix> {
    StackedTrajectoryMatrix::from_trajectories(trajectories, t_ini, t_f, counts)
}

impl StackedTrajectoryMatrix {
    pub fn from_trajectories(
        trajectories: &[Trajectory],
        t_ini: usize,
        t_f: usize,
        counts: ChannelCounts,
    ) -> Result<Self> {
        let layout = StackLayout::new(t_ini, t_f, counts);
        if trajectories.is_empty() {
            return Err(Error::Shape("no trajectories to stack".into()));
        }
        for (j, tr) in trajectories.iter().enumerate() {
            let ok = tr.counts() == counts
                && tr
                    .u_block
                    .iter()
                    .chain(&tr.w_block)
                    .chain(&tr.y_block)
                    .all(|c| c.len() == layout.len());
            if !ok {
                return Err(Error::Shape(format!(
                    "trajectory {j} does not match {} steps of {:?}",
                    layout.len(),
                    counts
                )));
            }
        }
        let mut data = DMatrix::zeros(layout.rows(), trajectories.len());
        for (j, tr) in trajectories.iter().enumerate() {
            let mut col = data.column_mut(j);
            let mut r = 0;
            for b in Block::ALL {
                let (offset, steps) = if b.is_init() { (0, t_ini) } else { (t_ini, t_f) };
                let chans = match b.kind() {
                    ChannelKind::Control => &tr.u_block,
                    ChannelKind::Disturbance => &tr.w_block,
                    ChannelKind::Output => &tr.y_block,
                };
                for t in 0..steps {
                    for c in chans {
                        col[r] = c[offset + t];
                        r += 1;
                    }
                }
            }
        }
        Ok(Self {
            layout,
            data,
            column_end_times: trajectories.iter().map(|t| t.end_time).collect(),
        })
    }

    /// Builds the stack straight from the series windows starting at
    /// `starts`. Every window must be gap-free.
    pub fn from_series(series: &SeriesSet, starts: &[usize], t_ini: usize, t_f: usize) -> Result<Self> {
        let schema = series.schema();
        let layout = StackLayout::new(t_ini, t_f, schema.counts());
        if starts.is_empty() {
            return Err(Error::Shape("no trajectories to stack".into()));
        }
        let channels = KindChannels {
            u: schema.indices(ChannelKind::Control),
            w: schema.indices(ChannelKind::Disturbance),
            y: schema.indices(ChannelKind::Output),
        };
        let len = layout.len();
        let mut data = DMatrix::zeros(layout.rows(), starts.len());
        for (j, &s) in starts.iter().enumerate() {
            if s + len > series.len() {
                return Err(Error::Shape(format!("window at {s} runs past the series end")));
            }
            let col = data.column_mut(j);
            let slice = col.data.into_slice_mut();
            layout.fill_column(series, s, &channels, slice);
            if slice.iter().any(|v| v.is_nan()) {
                return Err(Error::Precondition(format!("window at {s} contains a GAP")));
            }
        }
        Ok(Self {
            layout,
            data,
            column_end_times: starts.iter().map(|&s| series.time_at(s + len - 1)).collect(),
        })
    }

    pub fn layout(&self) -> StackLayout {
        self.layout
    }

    pub fn t_ini(&self) -> usize {
        self.layout.t_ini
    }

    pub fn t_f(&self) -> usize {
        self.layout.t_f
    }

    pub fn counts(&self) -> ChannelCounts {
        self.layout.counts
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    /// Number of columns, `W_H`.
    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn column_end_times(&self) -> &[i64] {
        &self.column_end_times
    }

    pub fn block(&self, block: Block) -> DMatrixView<'_, f64> {
        let r = self.layout.block_rows(block);
        self.data.rows(r.start, r.len())
    }

    /// The first five blocks (everything known at prediction time).
    pub fn known(&self) -> DMatrixView<'_, f64> {
        self.data.rows(0, self.layout.known_rows())
    }

    /// The future-output block `H_f^y`.
    pub fn future_outputs(&self) -> DMatrixView<'_, f64> {
        self.block(Block::FutureOutputs)
    }

    /// Re-splits column `j` into per-channel u, w and y sequences.
    pub fn split_column(&self, j: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let l = self.layout;
        let mut u = vec![Vec::with_capacity(l.len()); l.counts.inputs];
        let mut w = vec![Vec::with_capacity(l.len()); l.counts.disturbances];
        let mut y = vec![Vec::with_capacity(l.len()); l.counts.outputs];
        let col = self.data.column(j);
        let mut r = 0;
        for b in Block::ALL {
            let steps = if b.is_init() { l.t_ini } else { l.t_f };
            let dest = match b.kind() {
                ChannelKind::Control => &mut u,
                ChannelKind::Disturbance => &mut w,
                ChannelKind::Output => &mut y,
            };
            for _ in 0..steps {
                for d in dest.iter_mut() {
                    d.push(col[r]);
                    r += 1;
                }
            }
        }
        (u, w, y)
    }

    pub fn min_singular_value(&self) -> f64 {
        min_singular_value(&self.data)
    }
}

/// Writes a matrix row by row as CSV.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
