//! Python module `zonepred`.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

use zonepred_core::arx::{self, ArxOrders};
use zonepred_core::bench::{self, HarnessConfig, PhaseDays, VariantSpec};
use zonepred_core::bst::{self, BstConfig, RhsVector};
use zonepred_core::matrix::StackedTrajectoryMatrix;
use zonepred_core::plant::{inject_gaps, Scenario};
use zonepred_core::series::{admissible_segments, ingest_csv, BoundsMode, Schema, Segment, SeriesSet};
use zonepred_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(_) => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) | Error::Fit(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn report_to_python<'py>(py: Python<'py>, value: &bench::EvaluationReport) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| py_err(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Uniformly sampled multichannel series; missing values are NaN.
#[pyclass(name = "Series", frozen)]
struct PySeries {
    inner: SeriesSet,
}

#[pymethods]
impl PySeries {
    /// Synthetic building year from a preset: light, heavy, noiseless, drifting.
    #[staticmethod]
    #[pyo3(signature = (preset, seed, days=None))]
    fn simulate(preset: &str, seed: u64, days: Option<usize>) -> PyResult<Self> {
        let mut scenario = Scenario::preset(preset, seed).map_err(py_err)?;
        if let Some(d) = days {
            scenario.days = d;
        }
        Ok(Self { inner: scenario.generate().map_err(py_err)? })
    }

    /// Reads a timestamped CSV onto a `dt`-second grid.
    #[staticmethod]
    #[pyo3(signature = (path, dt=900, schema="building"))]
    fn load_csv(path: &str, dt: i64, schema: &str) -> PyResult<Self> {
        let schema = match schema {
            "building" => Schema::building(),
            "heating_only" => Schema::heating_only(),
            other => return Err(PyValueError::new_err(format!("unknown schema {other:?}"))),
        };
        Ok(Self { inner: ingest_csv(path, &schema, dt, BoundsMode::Mask).map_err(py_err)? })
    }

    fn save_csv(&self, path: &str) -> PyResult<()> {
        self.inner.save_csv(path).map_err(py_err)
    }

    /// Copy with NaN runs covering about `fraction` of the steps.
    #[pyo3(signature = (fraction, seed, mean_gap_len=8.0))]
    fn with_gaps(&self, fraction: f64, seed: u64, mean_gap_len: f64) -> PyResult<Self> {
        Ok(Self { inner: inject_gaps(&self.inner, fraction, mean_gap_len, seed).map_err(py_err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dt(&self) -> i64 {
        self.inner.dt()
    }

    #[getter]
    fn t0(&self) -> i64 {
        self.inner.t0()
    }

    #[getter]
    fn channel_names(&self) -> Vec<String> {
        self.inner.schema().channels().iter().map(|c| c.name.clone()).collect()
    }

    fn channel(&self, name: &str) -> PyResult<Vec<f64>> {
        self.inner
            .channel_by_name(name)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| PyValueError::new_err(format!("no channel named {name:?}")))
    }

    fn missing_fraction(&self) -> f64 {
        self.inner.missing_fraction()
    }

    fn __repr__(&self) -> String {
        format!("Series(len={}, dt={}, channels={:?})", self.inner.len(), self.inner.dt(), self.channel_names())
    }
}

/// Output trajectory over `[step, step + t_f)` from the `width` most recent
/// gap-free windows that end before `step`.
#[pyfunction]
#[pyo3(signature = (series, step, width=661, lam=1e2, t_ini=12, t_f=96, init_weight=100.0))]
fn predict_bst(
    series: &PySeries,
    step: usize,
    width: usize,
    lam: f64,
    t_ini: usize,
    t_f: usize,
    init_weight: f64,
) -> PyResult<Vec<f64>> {
    let s = &series.inner;
    let len = t_ini + t_f;
    let mut starts: Vec<usize> = admissible_segments(s, len)
        .iter()
        .flat_map(|seg| seg.start_index..=(seg.end() - len).min(step.saturating_sub(len)))
        .filter(|&start| start + len <= step)
        .collect();
    if starts.is_empty() {
        return Err(PyValueError::new_err("no complete window ends before this step"));
    }
    starts.drain(..starts.len().saturating_sub(width));
    let stack = StackedTrajectoryMatrix::from_series(s, &starts, t_ini, t_f).map_err(py_err)?;
    let v = RhsVector::from_series(s, step, t_ini, t_f, None).map_err(py_err)?;
    let cfg = BstConfig { t_ini, t_f, lambda: lam, init_weight, ..BstConfig::default() };
    let y = bst::predict(&stack, &v, &cfg).map_err(py_err)?;
    Ok(y.iter().copied().collect())
}

/// ARX model with recursive least-squares updates.
#[pyclass(name = "ArxModel")]
struct PyArxModel {
    inner: arx::ArxModel,
}

#[pymethods]
impl PyArxModel {
    /// Batch least-squares fit on the gap-free rows of `[start, end)`.
    #[staticmethod]
    #[pyo3(signature = (series, start, end, na=3, nb=3, nk=1))]
    fn fit(series: &PySeries, start: usize, end: usize, na: usize, nb: usize, nk: usize) -> PyResult<Self> {
        let orders = ArxOrders::new(na, nb, nk).map_err(py_err)?;
        let s = &series.inner;
        let segments: Vec<Segment> = admissible_segments(s, orders.history() + 1)
            .into_iter()
            .filter_map(|seg| {
                let (a, b) = (seg.start_index.max(start), seg.end().min(end));
                (b > a).then(|| Segment::new(a, b - a))
            })
            .collect();
        Ok(Self { inner: arx::fit_batch(&segments, s, orders).map_err(py_err)? })
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        self.inner.theta.iter().copied().collect()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[setter]
    fn set_alpha(&mut self, alpha: f64) -> PyResult<()> {
        self.inner = self.inner.clone().with_alpha(alpha).map_err(py_err)?;
        Ok(())
    }

    /// One recursive update with the measurement at `step`; false when the
    /// regressor or measurement has a gap.
    fn update(&mut self, series: &PySeries, step: usize) -> PyResult<bool> {
        self.inner.update_from_series(&series.inner, step).map_err(py_err)
    }

    #[pyo3(signature = (series, step, horizon=96))]
    fn predict(&self, series: &PySeries, step: usize, horizon: usize) -> PyResult<Vec<f64>> {
        self.inner.predict_from_series(&series.inner, step, horizon, None).map_err(py_err)
    }
}

/// Names of the full benchmark grid.
#[pyfunction]
fn variant_names() -> Vec<String> {
    VariantSpec::full_grid().iter().map(VariantSpec::name).collect()
}

/// Evaluates one variant and returns its report as a dict.
#[pyfunction]
#[pyo3(signature = (series, variant, eval_stride=48, identification=(0.0, 30.0), initialization=(30.0, 60.0), evaluation_start=60.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn run_variant<'py>(
    py: Python<'py>,
    series: &PySeries,
    variant: &str,
    eval_stride: usize,
    identification: (f64, f64),
    initialization: (f64, f64),
    evaluation_start: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let spec: VariantSpec = variant.parse().map_err(py_err)?;
    let phases = PhaseDays {
        identification: vec![[identification.0, identification.1]],
        initialization: [initialization.0, initialization.1],
        evaluation: vec![evaluation_start],
    }
    .to_steps(&series.inner)
    .map_err(py_err)?;
    let cfg = HarnessConfig { eval_stride, distortion_seed: seed, ..HarnessConfig::default() };
    let report = py
        .detach(|| bench::run_variant(&series.inner, spec, &phases, &cfg))
        .map_err(py_err)?;
    report_to_python(py, &report)
}

#[pymodule]
fn zonepred(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySeries>()?;
    m.add_class::<PyArxModel>()?;
    m.add_function(wrap_pyfunction!(predict_bst, m)?)?;
    m.add_function(wrap_pyfunction!(variant_names, m)?)?;
    m.add_function(wrap_pyfunction!(run_variant, m)?)?;
    Ok(())
}
