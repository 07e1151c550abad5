//! Python bindings: `import mimo_bsp`.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use mimo_bsp::metrics::{predicted_multiplications as predicted, Algorithm, OpTally};
use mimo_bsp::sim::{DetectorSpec, NoisePoints, SimulationConfig};
use mimo_bsp::{
    enumerate_config_set, lmmse_estimate, lmmse_hard_detect, lmmse_prior_llrs,
    run_bsp as core_run_bsp, run_ebrdf_bp as core_run_ebrdf, run_original_bp as core_run_obp,
    truncate_alpha as core_truncate, BitLlrOutput, BspConfig, ComplexMatrix, Error, InitMode,
    MessageGrid,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::UnsupportedScale(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(h: Vec<Vec<Complex64>>) -> PyResult<ComplexMatrix> {
    ComplexMatrix::from_rows(&h).map_err(py_err)
}

fn init_mode(s: &str) -> PyResult<InitMode> {
    match s {
        "uniform" => Ok(InitMode::Uniform),
        "lmmse" => Ok(InitMode::Lmmse),
        _ => Err(PyValueError::new_err(format!("unknown init mode {s:?}; use 'uniform' or 'lmmse'"))),
    }
}

fn counted(enabled: bool) -> OpTally {
    if enabled {
        OpTally::enabled()
    } else {
        OpTally::disabled()
    }
}

/// Square Gray-coded QAM alphabet with unit average energy.
#[pyclass(name = "Constellation", module = "mimo_bsp")]
#[derive(Clone)]
struct PyConstellation {
    inner: mimo_bsp::Constellation,
}

#[pymethods]
impl PyConstellation {
    #[new]
    fn new(bits_per_symbol: usize) -> PyResult<Self> {
        Ok(Self { inner: mimo_bsp::Constellation::new(bits_per_symbol).map_err(py_err)? })
    }

    #[getter]
    fn size(&self) -> usize {
        self.inner.size()
    }

    #[getter]
    fn bits_per_symbol(&self) -> usize {
        self.inner.bits_per_symbol()
    }

    fn points(&self) -> Vec<Complex64> {
        self.inner.points().to_vec()
    }

    fn label(&self, index: usize) -> PyResult<Vec<u8>> {
        if index >= self.inner.size() {
            return Err(PyValueError::new_err(format!("index {index} out of range")));
        }
        Ok(self.inner.label(index))
    }

    fn nearest(&self, z: Complex64) -> usize {
        self.inner.nearest(z)
    }

    fn modulate(&self, bits: Vec<u8>) -> PyResult<Vec<Complex64>> {
        mimo_bsp::modem::modulate(&bits, &self.inner).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Constellation({})", self.inner.bits_per_symbol())
    }
}

/// Bit LLRs (positive favours 1), hard decisions and, when requested,
/// the real multiplications spent.
#[pyclass(name = "Detection", module = "mimo_bsp", get_all)]
struct PyDetection {
    llrs: Vec<Vec<f64>>,
    hard_bits: Vec<u8>,
    real_multiplications: Option<u64>,
}

#[pymethods]
impl PyDetection {
    fn __repr__(&self) -> String {
        format!("Detection(hard_bits={:?})", self.hard_bits)
    }
}

fn detection(out: BitLlrOutput, tally: &OpTally) -> PyDetection {
    PyDetection {
        real_multiplications: tally.snapshot().ok().map(|c| c.real_multiplications),
        llrs: out.r,
        hard_bits: out.hard_bits,
    }
}

#[pyfunction]
fn noise_variance_from_ebn0(ebn0_db: f64, bits_per_symbol: usize, nt: usize, nr: usize) -> f64 {
    mimo_bsp::noise_variance_from_ebn0(ebn0_db, bits_per_symbol, nt, nr)
}

#[pyfunction]
#[pyo3(name = "map_detect", signature = (y, h, sigma2, constellation, count_ops = false))]
fn map_detect(
    py: Python<'_>,
    y: Vec<Complex64>,
    h: Vec<Vec<Complex64>>,
    sigma2: f64,
    constellation: &PyConstellation,
    count_ops: bool,
) -> PyResult<PyDetection> {
    let h = matrix(h)?;
    let c = &constellation.inner;
    let mut tally = counted(count_ops);
    let out = py.allow_threads(|| {
        mimo_bsp::linear::map_detect_with(&y, &h, sigma2, c, mimo_bsp::bp::DEFAULT_ENUMERATION_CAP, &mut tally)
    });
    Ok(detection(out.map_err(py_err)?, &tally))
}

/// LMMSE estimate: `(s_hat, k_diag, hard_bits, prior_llrs)`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn lmmse_detect(
    y: Vec<Complex64>,
    h: Vec<Vec<Complex64>>,
    sigma2: f64,
    constellation: &PyConstellation,
) -> PyResult<(Vec<Complex64>, Vec<f64>, Vec<u8>, Vec<Vec<f64>>)> {
    let est = lmmse_estimate(&y, &matrix(h)?, sigma2).map_err(py_err)?;
    let bits = lmmse_hard_detect(&est, &constellation.inner);
    let prior = lmmse_prior_llrs(&est, &constellation.inner).map_err(py_err)?;
    Ok((est.s_hat, est.k_diag, bits, prior))
}

fn initial_grid(
    init: InitMode,
    y: &[Complex64],
    h: &ComplexMatrix,
    sigma2: f64,
    c: &mimo_bsp::Constellation,
) -> PyResult<MessageGrid> {
    match init {
        InitMode::Uniform => Ok(MessageGrid::uniform(h.rows(), h.cols(), c.size())),
        InitMode::Lmmse => {
            let est = lmmse_estimate(y, h, sigma2).map_err(py_err)?;
            MessageGrid::from_prior(h.rows(), &lmmse_prior_llrs(&est, c).map_err(py_err)?).map_err(py_err)
        }
    }
}

#[pyfunction]
#[pyo3(signature = (y, h, sigma2, constellation, iterations = 10, init = "uniform", count_ops = false))]
#[allow(clippy::too_many_arguments)]
fn run_original_bp(
    py: Python<'_>,
    y: Vec<Complex64>,
    h: Vec<Vec<Complex64>>,
    sigma2: f64,
    constellation: &PyConstellation,
    iterations: usize,
    init: &str,
    count_ops: bool,
) -> PyResult<PyDetection> {
    let h = matrix(h)?;
    let c = &constellation.inner;
    let grid = initial_grid(init_mode(init)?, &y, &h, sigma2, c)?;
    let mut tally = counted(count_ops);
    let out = py.allow_threads(|| core_run_obp(&y, &h, sigma2, c, iterations, grid, &mut tally));
    Ok(detection(out.map_err(py_err)?, &tally))
}

#[pyfunction]
#[pyo3(signature = (y, h, sigma2, constellation, d_m, d_f, iterations = 10, init = "lmmse", count_ops = false))]
#[allow(clippy::too_many_arguments)]
fn run_bsp(
    py: Python<'_>,
    y: Vec<Complex64>,
    h: Vec<Vec<Complex64>>,
    sigma2: f64,
    constellation: &PyConstellation,
    d_m: usize,
    d_f: usize,
    iterations: usize,
    init: &str,
    count_ops: bool,
) -> PyResult<PyDetection> {
    let h = matrix(h)?;
    let cfg = BspConfig::new(d_m, d_f, iterations, init_mode(init)?).map_err(py_err)?;
    let c = &constellation.inner;
    let mut tally = counted(count_ops);
    let out = py.allow_threads(|| core_run_bsp(&y, &h, sigma2, c, &cfg, &mut tally));
    Ok(detection(out.map_err(py_err)?, &tally))
}

#[pyfunction]
#[pyo3(signature = (y, h, sigma2, constellation, d_f, iterations = 10, count_ops = false))]
#[allow(clippy::too_many_arguments)]
fn run_ebrdf_bp(
    py: Python<'_>,
    y: Vec<Complex64>,
    h: Vec<Vec<Complex64>>,
    sigma2: f64,
    constellation: &PyConstellation,
    d_f: usize,
    iterations: usize,
    count_ops: bool,
) -> PyResult<PyDetection> {
    let h = matrix(h)?;
    let c = &constellation.inner;
    let grid = MessageGrid::uniform(h.rows(), h.cols(), c.size());
    let mut tally = counted(count_ops);
    let out = py.allow_threads(|| core_run_ebrdf(&y, &h, sigma2, c, iterations, d_f, grid, &mut tally));
    Ok(detection(out.map_err(py_err)?, &tally))
}

/// Top `d_m` `(index, llr)` pairs, best first.
#[pyfunction]
fn truncate_alpha(alpha: Vec<f64>, d_m: usize) -> Vec<(usize, f64)> {
    core_truncate(&alpha, d_m).entries
}

/// Every interferer assignment searched for target symbol `j`.
#[pyfunction]
fn config_set(alphas: Vec<Vec<f64>>, j: usize, d_m: usize, d_f: usize) -> PyResult<Vec<Vec<usize>>> {
    let truncated: Vec<_> = alphas.iter().map(|a| core_truncate(a, d_m)).collect();
    Ok(enumerate_config_set(&truncated, j, d_m, d_f).map_err(py_err)?.collect())
}

/// Closed-form real multiplications per channel use; `algorithm` is
/// `"obp"`, `"map"` or `"bsp"`.
#[pyfunction]
#[pyo3(signature = (algorithm, nr, nt, bits_per_symbol, d_m = 1, d_f = 1))]
fn predicted_multiplications(
    algorithm: &str,
    nr: usize,
    nt: usize,
    bits_per_symbol: usize,
    d_m: usize,
    d_f: usize,
) -> PyResult<u128> {
    let alg = match algorithm {
        "obp" => Algorithm::OriginalBp,
        "map" => Algorithm::Map,
        "bsp" => Algorithm::Bsp,
        _ => return Err(PyValueError::new_err(format!("unknown algorithm {algorithm:?}"))),
    };
    Ok(predicted(alg, nr, nt, bits_per_symbol, d_m, d_f))
}

/// Monte Carlo BER sweep; one dict per (noise point, detector).
#[pyfunction]
#[pyo3(signature = (
    nr, nt, bits_per_symbol, detectors, ebn0_db = None, sigma2 = None, max_vectors = 100_000,
    target_bit_errors = Some(400), iterations = 10, seed = 1, workers = 1
))]
#[allow(clippy::too_many_arguments)]
fn run_sweep<'py>(
    py: Python<'py>,
    nr: usize,
    nt: usize,
    bits_per_symbol: usize,
    detectors: Vec<String>,
    ebn0_db: Option<Vec<f64>>,
    sigma2: Option<Vec<f64>>,
    max_vectors: u64,
    target_bit_errors: Option<u64>,
    iterations: usize,
    seed: u64,
    workers: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let noise = match (ebn0_db, sigma2) {
        (Some(p), None) => NoisePoints::EbN0Db(p),
        (None, Some(p)) => NoisePoints::Sigma2(p),
        _ => return Err(PyValueError::new_err("give exactly one of ebn0_db and sigma2")),
    };
    let roster = detectors
        .iter()
        .map(|d| d.parse::<DetectorSpec>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    let mut cfg = SimulationConfig::new(nr, nt, bits_per_symbol, noise, roster);
    cfg.max_vectors = max_vectors;
    cfg.target_bit_errors = target_bit_errors;
    cfg.iterations = iterations;
    cfg.master_seed = seed;
    cfg.workers = workers;
    let records = py.allow_threads(|| mimo_bsp::run_sweep(&cfg)).map_err(py_err)?;
    records
        .into_iter()
        .map(|r| {
            let d = PyDict::new_bound(py);
            d.set_item("detector", r.detector)?;
            d.set_item("ebn0_db", r.ebn0_db)?;
            d.set_item("sigma2", r.sigma2)?;
            d.set_item("vectors", r.vectors)?;
            d.set_item("bit_errors", r.bit_errors)?;
            d.set_item("bits_total", r.bits_total)?;
            d.set_item("ber", r.ber)?;
            d.set_item("ci_low", r.ci_low)?;
            d.set_item("ci_high", r.ci_high)?;
            d.set_item("symbol_errors", r.symbol_errors)?;
            d.set_item("mults_per_use", r.mults_per_use)?;
            d.set_item("failures", r.failures)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
#[pyo3(name = "mimo_bsp")]
fn mimo_bsp_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConstellation>()?;
    m.add_class::<PyDetection>()?;
    m.add_function(wrap_pyfunction!(noise_variance_from_ebn0, m)?)?;
    m.add_function(wrap_pyfunction!(map_detect, m)?)?;
    m.add_function(wrap_pyfunction!(lmmse_detect, m)?)?;
    m.add_function(wrap_pyfunction!(run_original_bp, m)?)?;
    m.add_function(wrap_pyfunction!(run_bsp, m)?)?;
    m.add_function(wrap_pyfunction!(run_ebrdf_bp, m)?)?;
    m.add_function(wrap_pyfunction!(truncate_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(config_set, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_multiplications, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    Ok(())
}
