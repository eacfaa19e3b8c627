//! ARX models: pooled batch least squares, recursive updates with a
//! forgetting factor, and chained multi-step prediction.
//!
//! `y(k) = sum_i a_i y(k-i) + sum_j sum_i b_ji x_j(k-nk-i+1)` where the
//! inputs `x` are the control channels followed by the disturbance channels.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::RankTolerance;
use crate::series::{ChannelKind, Segment, SeriesSet};

pub const DEFAULT_P0: f64 = 10_000.0;

/// Relative eigenvalue floor of the equilibrated normal matrix below which a
/// batch fit is rejected.
pub const IDENTIFIABILITY_RATIO: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArxOrders {
    pub na: usize,
    pub nb: usize,
    pub nk: usize,
}

impl Default for ArxOrders {
    fn default() -> Self {
        Self { na: 12, nb: 12, nk: 1 }
    }
}

impl ArxOrders {
    pub fn new(na: usize, nb: usize, nk: usize) -> Result<Self> {
        let o = Self { na, nb, nk };
        o.validate()?;
        Ok(o)
    }

    pub fn validate(&self) -> Result<()> {
        if self.na == 0 || self.nb == 0 {
            return Err(Error::Config("ARX orders na and nb must be at least 1".into()));
        }
        Ok(())
    }

    /// Steps before `k` the regressor of `y(k)` reaches back.
    pub fn history(&self) -> usize {
        self.na.max(self.nb + self.nk - 1)
    }

    pub fn parameters(&self, inputs: usize) -> usize {
        self.na + inputs * self.nb
    }
}

/// Forgetting factor for a memory of `days` at `steps_per_day` samples.
pub fn alpha_from_memory(days: f64, steps_per_day: usize) -> f64 {
    1.0 - 1.0 / (days * steps_per_day as f64)
}

/// Series channel indices feeding the model: `inputs` are u then w.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArxChannels {
    pub output: usize,
    pub inputs: Vec<usize>,
}

impl ArxChannels {
    pub fn from_series(series: &SeriesSet) -> Self {
        let schema = series.schema();
        Self {
            output: schema.output_index(),
            inputs: schema.exogenous_indices(),
        }
    }
}

/// Names of the regressors in coefficient order, e.g. `y(k-1)`, `P_heat(k-3)`.
pub fn regressor_names(series: &SeriesSet, orders: ArxOrders) -> Vec<String> {
    let schema = series.schema();
    let ch = ArxChannels::from_series(series);
    let y = &schema.channels()[ch.output].name;
    let mut names: Vec<String> = (1..=orders.na).map(|i| format!("{y}(k-{i})")).collect();
    for &j in &ch.inputs {
        let name = &schema.channels()[j].name;
        for i in 1..=orders.nb {
            let lag = orders.nk + i - 1;
            names.push(if lag == 0 {
                format!("{name}(k)")
            } else {
                format!("{name}(k-{lag})")
            });
        }
    }
    names
}

/// Regression vector of `y(k)`, or `None` if it reaches a gap or before
/// the series start.
pub fn regressor_at(series: &SeriesSet, k: usize, orders: ArxOrders) -> Option<DVector<f64>> {
    let ch = ArxChannels::from_series(series);
    regressor_with(series, &ch, k, orders)
}

fn regressor_with(series: &SeriesSet, ch: &ArxChannels, k: usize, orders: ArxOrders) -> Option<DVector<f64>> {
    if k < orders.history() || k >= series.len() {
        return None;
    }
    let mut psi = Vec::with_capacity(orders.parameters(ch.inputs.len()));
    let y = series.channel(ch.output);
    psi.extend((1..=orders.na).map(|i| y[k - i]));
    for &j in &ch.inputs {
        let x = series.channel(j);
        psi.extend((1..=orders.nb).map(|i| x[k + 1 - orders.nk - i]));
    }
    if psi.iter().any(|v| v.is_nan()) {
        None
    } else {
        Some(DVector::from_vec(psi))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArxModel {
    pub orders: ArxOrders,
    pub theta: DVector<f64>,
    pub p: DMatrix<f64>,
    pub alpha: f64,
}

impl ArxModel {
    /// Zero coefficients and `P = p0 I`.
    pub fn new(orders: ArxOrders, inputs: usize, alpha: f64, p0: f64) -> Result<Self> {
        orders.validate()?;
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("forgetting factor must lie in (0, 1], got {alpha}")));
        }
        if !(p0 > 0.0) {
            return Err(Error::Config("initial covariance must be positive".into()));
        }
        let n = orders.parameters(inputs);
        Ok(Self {
            orders,
            theta: DVector::zeros(n),
            p: DMatrix::identity(n, n) * p0,
            alpha,
        })
    }

    pub fn inputs(&self) -> usize {
        (self.theta.len() - self.orders.na) / self.orders.nb
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Config(format!("forgetting factor must lie in (0, 1], got {alpha}")));
        }
        self.alpha = alpha;
        Ok(self)
    }

    /// Resets the covariance to `p0 I`, keeping the coefficients.
    pub fn reset_covariance(&mut self, p0: f64) {
        let n = self.theta.len();
        self.p = DMatrix::identity(n, n) * p0;
    }

    pub fn predict_one(&self, psi: &DVector<f64>) -> f64 {
        self.theta.dot(psi)
    }

    /// One forgetting-factor step. Returns the innovation `y - y_hat`.
    pub fn update(&mut self, psi: &DVector<f64>, y: f64) -> Result<f64> {
        if psi.len() != self.theta.len() {
            return Err(Error::Shape(format!(
                "regressor has {} entries, model {}",
                psi.len(),
                self.theta.len()
            )));
        }
        let p_psi = &self.p * psi;
        let denom = self.alpha + psi.dot(&p_psi);
        if !(denom > 0.0) || !denom.is_finite() {
            return Err(Error::Numerical(format!("update denominator {denom} is not positive")));
        }
        let innovation = y - self.predict_one(psi);
        let gain = &p_psi / denom;
        self.theta.axpy(innovation, &gain, 1.0);
        self.p.ger(-1.0 / denom, &p_psi, &p_psi, 1.0);
        self.p /= self.alpha;
        let pt = self.p.transpose();
        self.p += pt;
        self.p *= 0.5;
        Ok(innovation)
    }

    /// Updates with sample `k` of `series` if its regressor and output are
    /// gap-free; returns whether an update happened.
    pub fn update_from_series(&mut self, series: &SeriesSet, k: usize) -> Result<bool> {
        let ch = ArxChannels::from_series(series);
        let y = series.value(ch.output, k);
        match regressor_with(series, &ch, k, self.orders) {
            Some(psi) if !y.is_nan() => self.update(&psi, y).map(|_| true),
            _ => Ok(false),
        }
    }

    /// Chains the one-step predictor `t_f` times.
    ///
    /// `y_history` and each `x_history[j]` end at step `k - 1` (oldest
    /// first); `x_future[j]` covers `k..k + t_f`.
    pub fn predict_horizon(
        &self,
        y_history: &[f64],
        x_history: &[Vec<f64>],
        x_future: &[Vec<f64>],
        t_f: usize,
    ) -> Result<Vec<f64>> {
        let o = self.orders;
        let m = self.inputs();
        if x_history.len() != m || x_future.len() != m {
            return Err(Error::Shape(format!("model expects {m} input channels")));
        }
        let x_need = o.nb + o.nk - 1;
        if y_history.len() < o.na || x_history.iter().any(|x| x.len() < x_need) {
            return Err(Error::Precondition(format!(
                "history must cover {} outputs and {} inputs",
                o.na, x_need
            )));
        }
        if x_future.iter().any(|x| x.len() < t_f) {
            return Err(Error::Precondition(format!("input plan must cover {t_f} steps")));
        }
        let (a, b) = self.theta.as_slice().split_at(o.na);
        let mut y: Vec<f64> = y_history[y_history.len() - o.na..].to_vec();
        let base = y.len();
        let mut out = Vec::with_capacity(t_f);
        for h in 0..t_f {
            let now = base + h;
            let mut acc: f64 = (1..=o.na).map(|i| a[i - 1] * y[now - i]).sum();
            for j in 0..m {
                let coeffs = &b[j * o.nb..(j + 1) * o.nb];
                for i in 1..=o.nb {
                    // Offset from step k, negative into the history.
                    let off = h as isize + 1 - (o.nk + i) as isize;
                    let v = if off >= 0 {
                        x_future[j][off as usize]
                    } else {
                        let hist = &x_history[j];
                        hist[(hist.len() as isize + off) as usize]
                    };
                    acc += coeffs[i - 1] * v;
                }
            }
            y.push(acc);
            out.push(acc);
        }
        Ok(out)
    }

    /// Prediction from instant `k` using measured history and the series'
    /// inputs over the horizon. `forecast`, if given, replaces the future
    /// disturbances (one entry per w channel).
    pub fn predict_from_series(
        &self,
        series: &SeriesSet,
        k: usize,
        t_f: usize,
        forecast: Option<&[Vec<f64>]>,
    ) -> Result<Vec<f64>> {
        let ch = ArxChannels::from_series(series);
        let hist = self.orders.history();
        if k < hist || k + t_f > series.len() {
            return Err(Error::Precondition(format!("instant {k} lacks history or horizon")));
        }
        let y_hist = &series.channel(ch.output)[k - hist..k];
        let x_hist: Vec<Vec<f64>> = ch.inputs.iter().map(|&j| series.channel(j)[k - hist..k].to_vec()).collect();
        let mut x_future: Vec<Vec<f64>> =
            ch.inputs.iter().map(|&j| series.channel(j)[k..k + t_f].to_vec()).collect();
        if let Some(fc) = forecast {
            let n_u = series.schema().indices(ChannelKind::Control).len();
            if fc.len() != ch.inputs.len() - n_u {
                return Err(Error::Shape("forecast does not match the disturbance channels".into()));
            }
            for (dst, src) in x_future[n_u..].iter_mut().zip(fc) {
                if src.len() < t_f {
                    return Err(Error::Shape(format!("forecast must cover {t_f} steps")));
                }
                dst.copy_from_slice(&src[..t_f]);
            }
        }
        if y_hist.iter().chain(x_hist.iter().flatten()).chain(x_future.iter().flatten()).any(|v| v.is_nan()) {
            return Err(Error::Precondition(format!("history or plan at instant {k} contains a GAP")));
        }
        self.predict_horizon(y_hist, &x_hist, &x_future, t_f)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.orders.validate()?;
        let n = m.theta.len();
        if m.p.shape() != (n, n) || !(n - m.orders.na).is_multiple_of(m.orders.nb) {
            return Err(Error::Shape("snapshot dimensions are inconsistent".into()));
        }
        Ok(m)
    }
}

/// Regression rows of all segments, never straddling a gap.
pub fn regression_rows(segments: &[Segment], series: &SeriesSet, orders: ArxOrders) -> (DMatrix<f64>, DVector<f64>) {
    let ch = ArxChannels::from_series(series);
    let n = orders.parameters(ch.inputs.len());
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for seg in segments {
        for k in seg.start_index + orders.history()..seg.end() {
            let y = series.value(ch.output, k);
            if y.is_nan() {
                continue;
            }
            if let Some(psi) = regressor_with(series, &ch, k, orders) {
                rows.extend(psi.iter().copied());
                targets.push(y);
            }
        }
    }
    (
        DMatrix::from_row_slice(targets.len(), n, &rows),
        DVector::from_vec(targets),
    )
}

/// Least-squares fit on the pooled regression rows of `segments`.
///
/// The returned model has `P = 10000 I` and no forgetting.
pub fn fit_batch(segments: &[Segment], series: &SeriesSet, orders: ArxOrders) -> Result<ArxModel> {
    orders.validate()?;
    let (phi, y) = regression_rows(segments, series, orders);
    let names = regressor_names(series, orders);
    let n = names.len();
    if phi.nrows() < n {
        return Err(Error::Identifiability {
            directions: vec![format!("{} regression rows for {n} parameters", phi.nrows())],
        });
    }
    let normal = phi.tr_mul(&phi);
    let rhs = phi.tr_mul(&y);
    let theta = solve_equilibrated(&normal, &rhs, &names)?;
    let mut model = ArxModel::new(orders, ArxChannels::from_series(series).inputs.len(), 1.0, DEFAULT_P0)?;
    model.theta = theta;
    Ok(model)
}

/// Minimum-norm least-squares fit on the pooled regression rows, restricted
/// to the directions whose equilibrated singular values clear `tol`.
/// Returns the model and the number of directions kept.
pub fn fit_min_norm(
    segments: &[Segment],
    series: &SeriesSet,
    orders: ArxOrders,
    tol: RankTolerance,
) -> Result<(ArxModel, usize)> {
    orders.validate()?;
    let (phi, y) = regression_rows(segments, series, orders);
    if phi.nrows() == 0 {
        return Err(Error::Identifiability {
            directions: vec!["no regression rows".into()],
        });
    }
    let d = DVector::from_fn(phi.ncols(), |j, _| {
        let n = phi.column(j).norm();
        if n > 0.0 {
            1.0 / n
        } else {
            0.0
        }
    });
    let mut scaled = phi;
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= d[j];
    }
    let (rows, cols) = scaled.shape();
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let thr = tol.threshold(smax, rows, cols);
    let rank = svd.singular_values.iter().filter(|&&s| s > thr).count();
    if rank == 0 {
        return Err(Error::Identifiability {
            directions: vec!["all regressors vanish".into()],
        });
    }
    let z = svd.solve(&y, thr).map_err(|e| Error::Numerical(e.into()))?;
    let mut model = ArxModel::new(orders, ArxChannels::from_series(series).inputs.len(), 1.0, DEFAULT_P0)?;
    model.theta = z.component_mul(&d);
    Ok((model, rank))
}

fn solve_equilibrated(normal: &DMatrix<f64>, rhs: &DVector<f64>, names: &[String]) -> Result<DVector<f64>> {
    let n = normal.nrows();
    let zero: Vec<String> = (0..n).filter(|&i| !(normal[(i, i)] > 0.0)).map(|i| names[i].clone()).collect();
    if !zero.is_empty() {
        return Err(Error::Identifiability { directions: zero });
    }
    let d = DVector::from_fn(n, |i, _| 1.0 / normal[(i, i)].sqrt());
    let scaled = DMatrix::from_fn(n, n, |i, j| normal[(i, j)] * d[i] * d[j]);
    let eig = SymmetricEigen::new(scaled.clone());
    let max = eig.eigenvalues.max();
    let mut weak = Vec::new();
    for (idx, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev <= IDENTIFIABILITY_RATIO * max {
            let v = eig.eigenvectors.column(idx);
            let mut comps: Vec<(f64, usize)> = v.iter().enumerate().map(|(i, c)| (c.abs(), i)).collect();
            comps.sort_by(|a, b| b.0.total_cmp(&a.0));
            let terms: Vec<String> = comps
                .iter()
                .take(3)
                .filter(|c| c.0 > 0.05)
                .map(|&(_, i)| format!("{:+.3}*{}", v[i], names[i]))
                .collect();
            weak.push(terms.join(" "));
        }
    }
    if !weak.is_empty() {
        return Err(Error::Identifiability { directions: weak });
    }
    let chol = scaled
        .cholesky()
        .ok_or_else(|| Error::Numerical("normal matrix is not positive definite".into()))?;
    let z = chol.solve(&rhs.component_mul(&d));
    Ok(z.component_mul(&d))
}

/// Runs the recursion from `model` over the regression rows of `segments`.
pub fn fit_recursive(model: &mut ArxModel, segments: &[Segment], series: &SeriesSet) -> Result<usize> {
    let mut n = 0;
    for seg in segments {
        for k in seg.start_index..seg.end() {
            if model.update_from_series(series, k)? {
                n += 1;
            }
        }
    }
    Ok(n)
}
