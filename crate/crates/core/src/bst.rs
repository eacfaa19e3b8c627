//! Regularized trajectory-matrix predictor.
//!
//! With `H` the known rows of the stacked matrix, `v` the matching
//! measurements and plan, and `W` the diagonal row weights, the coefficient
//! vector minimizes `(Hg - v)' W (Hg - v) + lambda g'g`. The prediction is the
//! future-output block times `g`.

use std::fmt;
use std::str::FromStr;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt;
use faer::linalg::matmul::triangular::{self, BlockStructure};
use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::reborrow::ReborrowMut;
use faer::{Accum, Mat, MatMut, MatRef, Par};
use nalgebra::{DMatrix, DMatrixView, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Block, StackLayout, StackedTrajectoryMatrix};
use crate::select::Strategy;
use crate::series::{ChannelCounts, ChannelKind, SeriesSet};

/// Column count of the trajectory matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Width {
    Columns(usize),
    /// Every admissible trajectory of the identification data.
    All,
}

impl fmt::Display for Width {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Width::Columns(n) => write!(f, "{n}"),
            Width::All => f.write_str("all"),
        }
    }
}

impl FromStr for Width {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(Width::All),
            n => n
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .map(Width::Columns)
                .ok_or_else(|| Error::Config(format!("invalid matrix width {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BstConfig {
    pub t_ini: usize,
    pub t_f: usize,
    pub lambda: f64,
    pub width: Width,
    pub strategy: Strategy,
    pub init_weight: f64,
}

impl Default for BstConfig {
    fn default() -> Self {
        Self {
            t_ini: 12,
            t_f: 96,
            lambda: 1e2,
            width: Width::Columns(661),
            strategy: Strategy::MostRecent,
            init_weight: 100.0,
        }
    }
}

impl BstConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.t_ini == 0 || self.t_f == 0 {
            return Err(Error::Config("t_ini and t_f must be at least 1".into()));
        }
        if self.width == Width::Columns(0) {
            return Err(Error::Config("matrix width must be at least 1".into()));
        }
        if !(self.init_weight > 0.0) {
            return Err(Error::Config("init_weight must be positive".into()));
        }
        Ok(())
    }
}

/// Diagonal row weights for the known rows: `init_weight` on every
/// initialization row, 1 on the future input and disturbance rows.
#[derive(Clone, Debug, PartialEq)]
pub struct InitWeightMatrix {
    diagonal: DVector<f64>,
}

pub fn init_weight_matrix(t_ini: usize, t_f: usize, counts: ChannelCounts, init_weight: f64) -> InitWeightMatrix {
    let init = t_ini * counts.total();
    let future = t_f * counts.exogenous();
    InitWeightMatrix {
        diagonal: DVector::from_fn(init + future, |r, _| if r < init { init_weight } else { 1.0 }),
    }
}

impl InitWeightMatrix {
    pub fn from_diagonal(diagonal: DVector<f64>) -> Result<Self> {
        if diagonal.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Config("row weights must be positive and finite".into()));
        }
        Ok(Self { diagonal })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            diagonal: DVector::from_element(n, 1.0),
        }
    }

    pub fn diagonal(&self) -> &DVector<f64> {
        &self.diagonal
    }

    pub fn len(&self) -> usize {
        self.diagonal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diagonal)
    }
}

/// Known part of the trajectory at a prediction instant, stacked in the
/// row order of the first five blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct RhsVector {
    layout: StackLayout,
    data: DVector<f64>,
}

impl RhsVector {
    /// Each block is given per channel: `u_ini[c][t]` etc.
    pub fn from_blocks(
        layout: StackLayout,
        u_ini: &[Vec<f64>],
        w_ini: &[Vec<f64>],
        y_ini: &[Vec<f64>],
        u_plan: &[Vec<f64>],
        w_forecast: &[Vec<f64>],
    ) -> Result<Self> {
        let c = layout.counts;
        let parts = [
            (u_ini, c.inputs, layout.t_ini, "u_ini"),
            (w_ini, c.disturbances, layout.t_ini, "w_ini"),
            (y_ini, c.outputs, layout.t_ini, "y_ini"),
            (u_plan, c.inputs, layout.t_f, "u_plan"),
            (w_forecast, c.disturbances, layout.t_f, "w_forecast"),
        ];
        let mut data = Vec::with_capacity(layout.known_rows());
        for (block, channels, steps, name) in parts {
            if block.len() != channels || block.iter().any(|ch| ch.len() != steps) {
                return Err(Error::Shape(format!("{name} must be {channels} channels of {steps} steps")));
            }
            for t in 0..steps {
                for ch in block {
                    data.push(ch[t]);
                }
            }
        }
        Self::from_stacked(layout, DVector::from_vec(data))
    }

    /// Takes an already stacked vector.
    pub fn from_stacked(layout: StackLayout, data: DVector<f64>) -> Result<Self> {
        if data.len() != layout.known_rows() {
            return Err(Error::Shape(format!(
                "stacked vector has {} entries, layout needs {}",
                data.len(),
                layout.known_rows()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("right-hand side contains a GAP".into()));
        }
        Ok(Self { layout, data })
    }

    /// Measurements on `[k - t_ini, k)` and the realized inputs and
    /// disturbances on `[k, k + t_f)`. `forecast`, if given, replaces the
    /// future disturbances (per channel, `t_f` steps).
    pub fn from_series(
        series: &SeriesSet,
        k: usize,
        t_ini: usize,
        t_f: usize,
        forecast: Option<&[Vec<f64>]>,
    ) -> Result<Self> {
        let schema = series.schema();
        let layout = StackLayout::new(t_ini, t_f, schema.counts());
        if k < t_ini || k + t_f > series.len() {
            return Err(Error::Precondition(format!("instant {k} lacks history or horizon")));
        }
        let u = schema.indices(ChannelKind::Control);
        let w = schema.indices(ChannelKind::Disturbance);
        let y = [schema.output_index()];
        let mut data = Vec::with_capacity(layout.known_rows());
        for chans in [&u[..], &w[..], &y[..]] {
            for t in k - t_ini..k {
                data.extend(chans.iter().map(|&c| series.value(c, t)));
            }
        }
        for t in k..k + t_f {
            data.extend(u.iter().map(|&c| series.value(c, t)));
        }
        match forecast {
            Some(fc) => {
                if fc.len() != w.len() || fc.iter().any(|c| c.len() != t_f) {
                    return Err(Error::Shape("forecast does not match the disturbance block".into()));
                }
                for t in 0..t_f {
                    data.extend(fc.iter().map(|c| c[t]));
                }
            }
            None => {
                for t in k..k + t_f {
                    data.extend(w.iter().map(|&c| series.value(c, t)));
                }
            }
        }
        Self::from_stacked(layout, DVector::from_vec(data))
    }

    pub fn layout(&self) -> StackLayout {
        self.layout
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn block(&self, block: Block) -> &[f64] {
        let r = self.layout.block_rows(block);
        &self.data.as_slice()[r]
    }
}

/// Which Gram matrix gets factored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RidgeForm {
    /// `H'WH + lambda I`, width by width.
    Primal,
    /// `W^1/2 H H' W^1/2 + lambda I`, rows by rows; used for wide matrices.
    Dual,
}

/// Weighted Gram matrix of a fixed `H`, reusable across lambdas.
#[derive(Clone, Debug)]
pub struct RidgeSystem {
    /// `W^1/2 H`.
    scaled: Mat<f64>,
    sqrt_weights: DVector<f64>,
    /// Lower triangle only.
    gram: Mat<f64>,
    form: RidgeForm,
    /// Largest diagonal entry of the Gram matrix.
    scale: f64,
}

/// Below `lambda / scale` of this, the Gram matrix is not formed.
const TINY_RIDGE: f64 = 1e-13;

fn to_faer(m: DMatrixView<'_, f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn from_faer(m: MatRef<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn lower_gram(mut gram: MatMut<'_, f64>, accum: Accum, lhs: MatRef<'_, f64>, rhs: MatRef<'_, f64>) {
    triangular::matmul(
        gram.rb_mut(),
        BlockStructure::TriangularLower,
        accum,
        lhs,
        BlockStructure::Rectangular,
        rhs,
        BlockStructure::Rectangular,
        1.0,
        Par::Seq,
    );
}

impl RidgeSystem {
    pub fn new(h_hat: DMatrixView<'_, f64>, weights: &InitWeightMatrix) -> Result<Self> {
        let width = h_hat.ncols();
        Ok(Self::nested(h_hat, weights, &[width])?.pop().expect("one width"))
    }

    /// Systems for the leading `widths` columns of `h_hat`, in the given
    /// order. Wide prefixes share one running Gram accumulation.
    pub fn nested(h_hat: DMatrixView<'_, f64>, weights: &InitWeightMatrix, widths: &[usize]) -> Result<Vec<Self>> {
        if h_hat.nrows() != weights.len() {
            return Err(Error::Shape(format!(
                "H has {} rows but the weighting has {}",
                h_hat.nrows(),
                weights.len()
            )));
        }
        if widths.iter().any(|&w| w == 0 || w > h_hat.ncols()) {
            return Err(Error::Shape(format!("widths {widths:?} do not fit {} columns", h_hat.ncols())));
        }
        let sqrt_weights = weights.diagonal.map(f64::sqrt);
        let rows = h_hat.nrows();
        let max = widths.iter().copied().max().unwrap_or(0);
        let full = Mat::from_fn(rows, max, |i, j| h_hat[(i, j)] * sqrt_weights[i]);
        let mut order: Vec<usize> = (0..widths.len()).collect();
        order.sort_by_key(|&i| widths[i]);
        let mut dual = Mat::zeros(rows, rows);
        let mut dual_cols = 0;
        let mut out: Vec<Option<Self>> = vec![None; widths.len()];
        for i in order {
            let width = widths[i];
            let scaled = full.subcols(0, width).to_owned();
            let (form, gram) = if width <= rows {
                let mut gram = Mat::zeros(width, width);
                lower_gram(gram.as_mut(), Accum::Replace, scaled.transpose(), scaled.as_ref());
                (RidgeForm::Primal, gram)
            } else {
                if width > dual_cols {
                    let new = full.subcols(dual_cols, width - dual_cols);
                    let accum = if dual_cols == 0 { Accum::Replace } else { Accum::Add };
                    lower_gram(dual.as_mut(), accum, new, new.transpose());
                    dual_cols = width;
                }
                (RidgeForm::Dual, dual.clone())
            };
            let scale = (0..gram.nrows()).map(|d| gram[(d, d)]).fold(0.0, f64::max);
            out[i] = Some(Self {
                scaled,
                sqrt_weights: sqrt_weights.clone(),
                gram,
                form,
                scale,
            });
        }
        Ok(out.into_iter().map(|s| s.expect("every width built")).collect())
    }

    pub fn form(&self) -> RidgeForm {
        self.form
    }

    pub fn width(&self) -> usize {
        self.scaled.ncols()
    }

    pub fn rows(&self) -> usize {
        self.scaled.nrows()
    }

    /// Cholesky factor of the regularized Gram matrix. When `lambda` is
    /// negligible next to the Gram matrix, or the factorization breaks down,
    /// the factor comes from a QR decomposition of `[A; sqrt(lambda) I]`
    /// instead, which never squares the condition number.
    pub fn factor(&self, lambda: f64) -> Result<FactoredRidge<'_>> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        if lambda >= TINY_RIDGE * self.scale {
            let mut a = self.gram.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda;
            }
            let n = a.nrows();
            let mut mem = MemBuffer::new(llt::factor::cholesky_in_place_scratch::<f64>(n, Par::Seq, Default::default()));
            let ok = llt::factor::cholesky_in_place(
                a.as_mut(),
                Default::default(),
                Par::Seq,
                MemStack::new(&mut mem),
                Default::default(),
            );
            if ok.is_ok() {
                return Ok(FactoredRidge { system: self, lower: a });
            }
        }
        let a = match self.form {
            RidgeForm::Primal => self.scaled.as_ref(),
            RidgeForm::Dual => self.scaled.transpose(),
        };
        let n = a.ncols();
        let root = lambda.sqrt();
        let stacked = Mat::from_fn(a.nrows() + n, n, |i, j| {
            if i < a.nrows() {
                a[(i, j)]
            } else if i - a.nrows() == j {
                root
            } else {
                0.0
            }
        });
        let r = stacked.qr().thin_R().to_owned();
        if (0..n).any(|i| !(r[(i, i)].abs() > 0.0)) {
            return Err(Error::Numerical(format!(
                "regularized Gram matrix is singular (lambda {lambda})"
            )));
        }
        Ok(FactoredRidge {
            system: self,
            lower: r.transpose().to_owned(),
        })
    }
}

pub struct FactoredRidge<'a> {
    system: &'a RidgeSystem,
    /// `L` with `L L'` the regularized Gram matrix; only the lower triangle
    /// is meaningful.
    lower: Mat<f64>,
}

impl FactoredRidge<'_> {
    /// Overwrites `rhs` with `(G + lambda I)^-1 rhs`.
    fn solve_in_place(&self, mut rhs: MatMut<'_, f64>) {
        solve_lower_triangular_in_place(self.lower.as_ref(), rhs.rb_mut(), Par::Seq);
        solve_upper_triangular_in_place(self.lower.transpose(), rhs, Par::Seq);
    }

    /// Coefficients `g` for one right-hand side.
    pub fn solve(&self, v_hat: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.system;
        if v_hat.len() != s.rows() {
            return Err(Error::Shape(format!(
                "right-hand side has {} entries, H has {} rows",
                v_hat.len(),
                s.rows()
            )));
        }
        let b = Mat::from_fn(s.rows(), 1, |i, _| v_hat[i] * s.sqrt_weights[i]);
        let g = match s.form {
            RidgeForm::Primal => {
                let mut x = s.scaled.transpose() * &b;
                self.solve_in_place(x.as_mut());
                x
            }
            RidgeForm::Dual => {
                let mut y = b;
                self.solve_in_place(y.as_mut());
                s.scaled.transpose() * &y
            }
        };
        Ok(DVector::from_fn(g.nrows(), |i, _| g[(i, 0)]))
    }

    /// Linear map from the right-hand side to `outputs * g`, so repeated
    /// predictions with a fixed matrix cost one matrix-vector product.
    pub fn output_map(&self, outputs: DMatrixView<'_, f64>) -> Result<DMatrix<f64>> {
        let s = self.system;
        if outputs.ncols() != s.width() {
            return Err(Error::Shape("output block width differs from H".into()));
        }
        let outputs = to_faer(outputs);
        let map = match s.form {
            // outputs (G + lI)^-1 A' W^1/2
            RidgeForm::Primal => {
                let mut x = s.scaled.transpose().to_owned();
                self.solve_in_place(x.as_mut());
                &outputs * &x
            }
            // outputs A' (K + lI)^-1 W^1/2
            RidgeForm::Dual => {
                let mut bt = &s.scaled * outputs.transpose();
                self.solve_in_place(bt.as_mut());
                bt.transpose().to_owned()
            }
        };
        let mut map = from_faer(map.as_ref());
        for (mut col, &w) in map.column_iter_mut().zip(s.sqrt_weights.iter()) {
            col *= w;
        }
        Ok(map)
    }
}

/// Minimizer of the weighted, regularized least-squares cost.
pub fn solve_g(
    h_hat: DMatrixView<'_, f64>,
    v_hat: &DVector<f64>,
    weights: &InitWeightMatrix,
    lambda: f64,
) -> Result<DVector<f64>> {
    RidgeSystem::new(h_hat, weights)?.factor(lambda)?.solve(v_hat)
}

/// Value of the cost at `g`.
pub fn cost(
    h_hat: DMatrixView<'_, f64>,
    v_hat: &DVector<f64>,
    weights: &InitWeightMatrix,
    lambda: f64,
    g: &DVector<f64>,
) -> f64 {
    let r = h_hat * g - v_hat;
    r.iter().zip(weights.diagonal.iter()).map(|(ri, wi)| wi * ri * ri).sum::<f64>() + lambda * g.norm_squared()
}

/// Predicted future outputs, `t_f` values per output channel, time-major.
pub fn predict(stack: &StackedTrajectoryMatrix, v_hat: &RhsVector, cfg: &BstConfig) -> Result<DVector<f64>> {
    cfg.validate()?;
    if stack.layout() != v_hat.layout() {
        return Err(Error::Shape("stack and right-hand side use different layouts".into()));
    }
    if stack.t_ini() != cfg.t_ini || stack.t_f() != cfg.t_f {
        return Err(Error::Shape("stack horizons differ from the configuration".into()));
    }
    let weights = init_weight_matrix(cfg.t_ini, cfg.t_f, stack.counts(), cfg.init_weight);
    let g = solve_g(stack.known(), v_hat.as_vector(), &weights, cfg.lambda)?;
    Ok(stack.future_outputs() * g)
}
