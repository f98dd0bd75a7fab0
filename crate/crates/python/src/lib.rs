//! Python bindings: samples, regions, bands, two-sample tests and the
//! simulation harness.

use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fdaregion::bands::{band_from_ellipsoid, band_naive_t, SupCalibration};
use fdaregion::ellipsoid::{make_ellipsoid, CRule};
use fdaregion::estimators::{mean_cov, pointwise_sd, two_sample, FunctionalSample};
use fdaregion::fnspace::{eigensystem, Curve, Grid, Quadrature, DEFAULT_TRIM};
use fdaregion::harness::{
    matern_cov as core_matern_cov, one_sample_region, run_experiment as core_run_experiment,
    sample_gp as core_sample_gp, two_sample_regions, BuiltRegion, ExperimentConfig, ExperimentKind, JRule, RegionKind,
    Scenario, DEFAULT_SIGMA,
};
use fdaregion::scalardist::{
    wchisq_cdf as core_wchisq_cdf, wchisq_quantile as core_wchisq_quantile, QuantileMethod, WeightedChiSq,
};

fn py_err(e: fdaregion::Error) -> PyErr {
    match e {
        fdaregion::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for fdaregion::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn grid_of(points: Vec<f64>) -> PyResult<Arc<Grid>> {
    Grid::from_points(points, Quadrature::Trapezoid).py()
}

fn curve_on(grid: &Arc<Grid>, values: Vec<f64>) -> PyResult<Curve> {
    Curve::new(grid.clone(), values).py()
}

fn j_rule(var_frac: f64, j: Option<usize>) -> JRule {
    match j {
        Some(j) => JRule::Fixed { j },
        None => JRule::VarianceFraction { fraction: var_frac },
    }
}

fn region_kind(name: &str) -> PyResult<RegionKind> {
    name.parse().py()
}

/// An iid sample of curves on a common grid.
#[pyclass(module = "fdaregion", frozen)]
struct Sample {
    inner: FunctionalSample,
}

#[pymethods]
impl Sample {
    #[new]
    fn new(grid: Vec<f64>, curves: Vec<Vec<f64>>) -> PyResult<Self> {
        let g = grid_of(grid)?;
        let curves = curves
            .into_iter()
            .map(|c| curve_on(&g, c))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Sample {
            inner: FunctionalSample::new(curves).py()?,
        })
    }

    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        Ok(Sample {
            inner: FunctionalSample::read_csv(path, Quadrature::Trapezoid).py()?,
        })
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        self.inner.write_csv(path).py()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.inner.grid().points().to_vec()
    }

    #[getter]
    fn curves(&self) -> Vec<Vec<f64>> {
        self.inner.curves().iter().map(|c| c.values().to_vec()).collect()
    }

    fn mean(&self) -> Vec<f64> {
        fdaregion::estimators::mean(&self.inner).into_values()
    }

    /// Sample covariance kernel as a list of rows.
    fn covariance(&self) -> PyResult<Vec<Vec<f64>>> {
        let (_, c) = mean_cov(&self.inner).py()?;
        Ok(c.kernel().row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.n()
    }

    fn __repr__(&self) -> String {
        format!("Sample(n={}, grid_size={})", self.inner.n(), self.inner.grid().len())
    }
}

/// A confidence region for the mean built from one sample.
#[pyclass(module = "fdaregion", frozen)]
struct Region {
    inner: BuiltRegion,
    kind: RegionKind,
    j: usize,
    alpha: f64,
}

impl Region {
    fn curve(&self, values: Vec<f64>) -> PyResult<Curve> {
        let grid = match &self.inner {
            BuiltRegion::Ellipsoid(r) => r.center().grid(),
            BuiltRegion::Rect(r) => r.center().grid(),
            BuiltRegion::Sup { center, .. } => center.grid(),
            BuiltRegion::Band(b) => b.center().grid(),
        };
        curve_on(grid, values)
    }
}

#[pymethods]
impl Region {
    /// Region names: e_norm, e_pc, e_pc3, e_c, e_c1, r_z, r_z1, r_zs, r_z1s,
    /// r_c, r_c1, b_s, b_ec.
    #[staticmethod]
    #[pyo3(signature = (sample, kind = "e_c", alpha = 0.05, var_frac = 0.999, j = None, pc_j = 3, nboot = 1000, seed = 1))]
    #[allow(clippy::too_many_arguments)]
    fn build(
        sample: &Sample,
        kind: &str,
        alpha: f64,
        var_frac: f64,
        j: Option<usize>,
        pc_j: usize,
        nboot: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let kind = region_kind(kind)?;
        let (inner, j) = one_sample_region(&sample.inner, kind, j_rule(var_frac, j), pc_j, alpha, nboot, seed).py()?;
        Ok(Region { inner, kind, j, alpha })
    }

    fn contains(&self, theta0: Vec<f64>) -> PyResult<bool> {
        let c = self.curve(theta0)?;
        Ok(!self.inner.rejects(&c).py()?)
    }

    fn rejects(&self, theta0: Vec<f64>) -> PyResult<bool> {
        let c = self.curve(theta0)?;
        self.inner.rejects(&c).py()
    }

    /// p-value of `theta0`; `None` for the ellipsoid-implied band.
    fn pvalue(&self, theta0: Vec<f64>) -> PyResult<Option<f64>> {
        let c = self.curve(theta0)?;
        self.inner.pvalue(&c).py()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.kind.label()
    }

    #[getter]
    fn j(&self) -> usize {
        self.j
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Squared radius scale of an ellipsoid.
    #[getter]
    fn xi(&self) -> Option<f64> {
        match &self.inner {
            BuiltRegion::Ellipsoid(e) => Some(e.xi()),
            _ => None,
        }
    }

    /// Per-axis half-widths of a rectangle.
    #[getter]
    fn half_widths(&self) -> Option<Vec<f64>> {
        match &self.inner {
            BuiltRegion::Rect(r) => Some(r.half_widths()),
            _ => None,
        }
    }

    fn __repr__(&self) -> String {
        format!("Region(kind={}, j={}, alpha={})", self.kind, self.j, self.alpha)
    }
}

/// A simultaneous band `center(t) +- half_width(t)`.
#[pyclass(module = "fdaregion", frozen)]
struct Band {
    inner: fdaregion::bands::Band,
}

#[pymethods]
impl Band {
    /// Band kinds: b_ec (from the sqrt-lambda ellipsoid), b_s (parametric
    /// bootstrap) and naive_t (pointwise t intervals).
    #[staticmethod]
    #[pyo3(signature = (sample, kind = "b_ec", alpha = 0.05, var_frac = 0.999, j = None, nboot = 1000, seed = 1))]
    fn build(
        sample: &Sample,
        kind: &str,
        alpha: f64,
        var_frac: f64,
        j: Option<usize>,
        nboot: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let s = &sample.inner;
        let (mean, cov) = mean_cov(s).py()?;
        let inner = match kind {
            "b_ec" => {
                let eig = Arc::new(eigensystem(&cov, DEFAULT_TRIM).py()?);
                let j = j_rule(var_frac, j).resolve(&eig).py()?;
                band_from_ellipsoid(&make_ellipsoid(mean, eig, CRule::SqrtLambda, alpha, s.n(), j).py()?)
            }
            "b_s" => SupCalibration::new(&cov, nboot, seed)
                .py()?
                .band(mean, s.n(), alpha)
                .py()?,
            "naive_t" => band_naive_t(&mean, &pointwise_sd(&cov), s.n(), alpha).py()?,
            other => return Err(PyValueError::new_err(format!("unknown band kind {other:?}"))),
        };
        Ok(Band { inner })
    }

    #[getter]
    fn grid(&self) -> Vec<f64> {
        self.inner.center().grid().points().to_vec()
    }

    #[getter]
    fn center(&self) -> Vec<f64> {
        self.inner.center().values().to_vec()
    }

    #[getter]
    fn lower(&self) -> Vec<f64> {
        self.inner.lower().into_values()
    }

    #[getter]
    fn upper(&self) -> Vec<f64> {
        self.inner.upper().into_values()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha()
    }

    fn contains(&self, curve: Vec<f64>) -> PyResult<bool> {
        let c = curve_on(self.inner.center().grid(), curve)?;
        self.inner.contains(&c).py()
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        self.inner.write_csv(path).py()
    }

    fn write_svg(&self, path: &str) -> PyResult<()> {
        fdaregion::harness::emit_outputs(
            fdaregion::harness::Artifact::Band(&self.inner),
            path,
            fdaregion::harness::Format::Svg,
        )
        .py()
    }
}

/// Matérn covariance kernel on `grid`, as a list of rows.
#[pyfunction]
#[pyo3(signature = (grid, nu, sigma = DEFAULT_SIGMA, warp_exponent = 1.0))]
fn matern_cov(grid: Vec<f64>, nu: f64, sigma: f64, warp_exponent: f64) -> PyResult<Vec<Vec<f64>>> {
    let g = grid_of(grid)?;
    let c = core_matern_cov(&g, nu, sigma, warp_exponent).py()?;
    Ok(c.kernel().row_iter().map(|r| r.iter().copied().collect()).collect())
}

/// Gaussian-process sample with a Matérn covariance around `mean`.
#[pyfunction]
#[pyo3(signature = (grid, mean, nu, n, seed = 1, sigma = DEFAULT_SIGMA, warp_exponent = 1.0))]
fn sample_gp(
    grid: Vec<f64>,
    mean: Vec<f64>,
    nu: f64,
    n: usize,
    seed: u64,
    sigma: f64,
    warp_exponent: f64,
) -> PyResult<Sample> {
    let g = grid_of(grid)?;
    let mean = curve_on(&g, mean)?;
    let c = core_matern_cov(&g, nu, sigma, warp_exponent).py()?;
    Ok(Sample {
        inner: core_sample_gp(&mean, &c, n, seed).py()?,
    })
}

#[pyfunction]
fn poly_mean(t: f64) -> f64 {
    fdaregion::harness::poly_mean(t)
}

/// `P(sum_j w_j Z_j^2 <= x)`.
#[pyfunction]
fn wchisq_cdf(weights: Vec<f64>, x: f64) -> PyResult<f64> {
    let w = WeightedChiSq::new(weights).py()?;
    core_wchisq_cdf(&w, x).py()
}

/// Quantile of `sum_j w_j Z_j^2`; `method` is "imhof" or "gamma".
#[pyfunction]
#[pyo3(signature = (weights, p, method = "imhof"))]
fn wchisq_quantile(weights: Vec<f64>, p: f64, method: &str) -> PyResult<f64> {
    let m = match method {
        "imhof" => QuantileMethod::Imhof,
        "gamma" => QuantileMethod::Gamma,
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    let w = WeightedChiSq::new(weights).py()?;
    core_wchisq_quantile(&w, p, m).py()
}

/// Tests equal means of two samples; returns `(region, pvalue, reject)` rows.
#[pyfunction]
#[pyo3(signature = (first, second, regions = None, alpha = 0.05, var_frac = 0.999, j = None, pc_j = 3, nboot = 1000, seed = 1))]
#[allow(clippy::too_many_arguments)]
fn twosample(
    first: &Sample,
    second: &Sample,
    regions: Option<Vec<String>>,
    alpha: f64,
    var_frac: f64,
    j: Option<usize>,
    pc_j: usize,
    nboot: usize,
    seed: u64,
) -> PyResult<Vec<(String, Option<f64>, bool)>> {
    let names = regions.unwrap_or_else(|| {
        ["e_norm", "e_pc", "e_pc3", "e_c", "r_z", "r_z1", "b_s"]
            .map(String::from)
            .to_vec()
    });
    let kinds = names.iter().map(|n| region_kind(n)).collect::<PyResult<Vec<_>>>()?;
    let g = first.inner.grid().clone();
    if g.points() != second.inner.grid().points() {
        return Err(PyValueError::new_err("the two samples are on different grids"));
    }
    let second = FunctionalSample::new(
        second
            .inner
            .curves()
            .iter()
            .map(|c| curve_on(&g, c.values().to_vec()))
            .collect::<PyResult<Vec<_>>>()?,
    )
    .py()?;
    let ts = two_sample(&first.inner, &second).py()?;
    let built = two_sample_regions(&ts, &kinds, j_rule(var_frac, j), pc_j, alpha, nboot, seed).py()?;
    let zero = Curve::zeros(g);
    kinds
        .iter()
        .zip(&built)
        .map(|(k, r)| Ok((k.label().to_string(), r.pvalue(&zero).py()?, r.rejects(&zero).py()?)))
        .collect()
}

/// Default experiment configuration for `kind`, as JSON. Power designs get
/// the shift scenario.
#[pyfunction]
fn default_config(kind: &str) -> PyResult<String> {
    let k = match kind {
        "type1" => ExperimentKind::Type1,
        "power" => ExperimentKind::Power,
        "band_coverage" => ExperimentKind::BandCoverage,
        "ghost_rate" => ExperimentKind::GhostRate,
        "twosample" => ExperimentKind::Twosample,
        other => return Err(PyValueError::new_err(format!("unknown experiment kind {other:?}"))),
    };
    let mut cfg = ExperimentConfig::new(k);
    if k == ExperimentKind::Power {
        cfg.scenario = Some(Scenario::Shift);
    }
    Ok(cfg.to_json())
}

/// Runs a simulation from a JSON configuration. Returns a dict with
/// `columns`, `rows` (label, values) and `metadata` (JSON text).
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config_json: &str) -> PyResult<Bound<'py, PyDict>> {
    let cfg = ExperimentConfig::from_json_str(config_json).py()?;
    let t = py.detach(|| core_run_experiment(&cfg)).py()?;
    let out = PyDict::new(py);
    out.set_item("columns", t.columns.clone())?;
    let rows: Vec<(String, Vec<f64>)> = t.rows.iter().map(|r| (r.label.clone(), r.values.clone())).collect();
    out.set_item("rows", rows)?;
    out.set_item(
        "metadata",
        serde_json::to_string(&t.metadata).map_err(|e| PyValueError::new_err(e.to_string()))?,
    )?;
    Ok(out)
}

#[pymodule]
#[pyo3(name = "fdaregion")]
pub fn fdaregion_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Sample>()?;
    m.add_class::<Region>()?;
    m.add_class::<Band>()?;
    m.add_function(wrap_pyfunction!(matern_cov, m)?)?;
    m.add_function(wrap_pyfunction!(sample_gp, m)?)?;
    m.add_function(wrap_pyfunction!(poly_mean, m)?)?;
    m.add_function(wrap_pyfunction!(wchisq_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(wchisq_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(twosample, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
