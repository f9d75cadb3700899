//! Python bindings. Architectures cross the boundary as operation-set names
//! plus per-cell candidate indices; reports cross as JSON text.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use spikenas::arch::{self, MacroConfig, NetworkArch, OpSet, Operation};
use spikenas::config::{ConfigLayer, RunConfig};
use spikenas::data::DatasetKind;
use spikenas::memmodel;
use spikenas::run::{self, RunError};
use spikenas::scenario::Scenario;
use spikenas::score;
use spikenas::search::{AblationStrategy, SearchError};
use spikenas::snn::{self, BinaryCodes, BitMatrix, LayerCodes, LifParams};

create_exception!(spikenas, NoFeasibleArchitecture, PyException);
create_exception!(spikenas, DatasetUnavailable, PyException);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn run_err(e: RunError) -> PyErr {
    match e {
        RunError::Search(e @ SearchError::NoFeasibleArchitecture { .. }) => {
            NoFeasibleArchitecture::new_err(e.to_string())
        }
        RunError::Data(e @ spikenas::data::DataError::DatasetUnavailable(_)) => {
            DatasetUnavailable::new_err(e.to_string())
        }
        RunError::Arch(e) => value_err(e),
        RunError::Budget(e) => value_err(e),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse_opset(name: &str) -> PyResult<OpSet> {
    name.parse().map_err(value_err)
}

fn parse_dataset(name: &str) -> PyResult<DatasetKind> {
    DatasetKind::parse(name).ok_or_else(|| value_err(format!("unknown dataset `{name}`")))
}

/// Builds a run configuration from a JSON object of overrides (keys as in
/// the TOML config file), layered over `SPIKENAS_*` variables and defaults.
fn run_config(overrides: Option<&str>) -> PyResult<RunConfig> {
    let layer: ConfigLayer = match overrides {
        Some(text) => serde_json::from_str(text).map_err(value_err)?,
        None => ConfigLayer::default(),
    };
    let env = ConfigLayer::from_env().map_err(value_err)?;
    RunConfig::resolve(layer, None, env).map_err(value_err)
}

fn config_json(py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<Option<String>> {
    match config {
        None => Ok(None),
        Some(obj) if obj.is_none() => Ok(None),
        Some(obj) => {
            let json = py.import("json")?;
            Ok(Some(json.call_method1("dumps", (obj,))?.extract()?))
        }
    }
}

/// Number of cell candidates for an operation set (`|ops|^6`).
#[pyfunction]
fn search_space_size(opset: &str) -> PyResult<u64> {
    Ok(arch::search_space_size(&parse_opset(opset)?))
}

/// Candidate index of a cell given its six edge operations.
#[pyfunction]
fn encode_cell(edges: Vec<String>, opset: &str) -> PyResult<u64> {
    let ops = parse_opset(opset)?;
    let parsed: Vec<Operation> = edges
        .iter()
        .map(|e| e.parse().map_err(value_err))
        .collect::<PyResult<_>>()?;
    let edges: [Operation; arch::NUM_EDGES] = parsed
        .try_into()
        .map_err(|_| value_err("a cell has exactly 6 edges"))?;
    arch::encode_cell(&arch::CellArch::new(edges), &ops).map_err(value_err)
}

/// Edge operation names (con01, con02, con03, con12, con13, con23) of a candidate.
#[pyfunction]
fn decode_cell(index: u64, opset: &str) -> PyResult<Vec<String>> {
    let cell = arch::decode_cell(index, &parse_opset(opset)?).map_err(value_err)?;
    Ok(cell
        .edges()
        .iter()
        .map(|op| op.name().to_string())
        .collect())
}

/// Parameter count of a network at full width.
#[pyfunction]
#[pyo3(signature = (opset, cells, num_classes=10, stem_channels=64, width_multiplier=2, bias=true))]
fn count_params(
    opset: &str,
    cells: Vec<u64>,
    num_classes: usize,
    stem_channels: usize,
    width_multiplier: usize,
    bias: bool,
) -> PyResult<u64> {
    let ops = parse_opset(opset)?;
    let cells = cells
        .iter()
        .map(|&i| arch::decode_cell(i, &ops))
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_err)?;
    let config = MacroConfig {
        num_cells: cells.len(),
        num_classes,
        stem_channels,
        width_multiplier,
        bias: if bias {
            arch::BiasConfig::all()
        } else {
            arch::BiasConfig::none()
        },
        ..MacroConfig::default()
    };
    let net = NetworkArch::new(cells, config).map_err(value_err)?;
    Ok(memmodel::count_network_params(&net))
}

/// `(n_param, bits, bytes)` at the given precision.
#[pyfunction]
fn memory_footprint(n_param: u64, bits: u32) -> (u64, u64, u64) {
    let f = memmodel::memory_footprint(n_param, bits);
    (f.n_param, f.bits, f.bytes)
}

/// One LIF update; returns `(v_next, spikes)`.
#[pyfunction]
#[pyo3(signature = (v, x, tau=2.0, v_threshold=1.0, v_reset=0.0))]
fn lif_step(
    v: Vec<f64>,
    x: Vec<f64>,
    tau: f64,
    v_threshold: f64,
    v_reset: f64,
) -> PyResult<(Vec<f64>, Vec<u32>)> {
    let p = LifParams {
        tau_leak: tau,
        v_threshold,
        v_reset,
        timesteps: 1,
    };
    let (next, spikes) = snn::lif_step(&v, &x, &p).map_err(value_err)?;
    // Vec<u8> would surface as `bytes`.
    Ok((next, spikes.into_iter().map(u32::from).collect()))
}

fn bit_matrix(rows: &[Vec<bool>]) -> PyResult<BitMatrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(value_err("code rows must have equal length"));
    }
    Ok(BitMatrix::from_rows(rows))
}

/// Hamming kernel `F - alpha * H(f_i, f_j)` of an S x F list of bit rows.
#[pyfunction]
#[pyo3(signature = (codes, alpha=1.0))]
fn hamming_kernel(codes: Vec<Vec<bool>>, alpha: f64) -> PyResult<Vec<Vec<f64>>> {
    let k = score::hamming_kernel(&bit_matrix(&codes)?, alpha).map_err(value_err)?;
    Ok((0..k.size)
        .map(|i| (0..k.size).map(|j| k.get(i, j)).collect())
        .collect())
}

/// `log |det sum_l K_l|` over per-layer code matrices; `None` when singular.
#[pyfunction]
#[pyo3(signature = (layers, alpha=1.0))]
fn network_score(layers: Vec<Vec<Vec<bool>>>, alpha: f64) -> PyResult<Option<f64>> {
    let codes = BinaryCodes {
        layers: layers
            .iter()
            .enumerate()
            .map(|(i, rows)| {
                Ok(LayerCodes {
                    name: format!("layer{i}"),
                    bits: bit_matrix(rows)?,
                })
            })
            .collect::<PyResult<_>>()?,
    };
    let r = score::network_score(&codes, alpha).map_err(value_err)?;
    Ok(r.as_option())
}

/// Memory-aware search; returns the report as JSON text.
#[pyfunction]
#[pyo3(signature = (scenario, dataset="synthetic", config=None))]
fn search(
    py: Python<'_>,
    scenario: &str,
    dataset: &str,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<String> {
    let sc: Scenario = scenario.parse().map_err(value_err)?;
    let kind = parse_dataset(dataset)?;
    let cfg = run_config(config_json(py, config)?.as_deref())?;
    let out = py
        .detach(|| run::run_scenario(&sc, kind, &cfg, false))
        .map_err(run_err)?;
    Ok(out.doc.to_json())
}

/// Random-search baseline; returns the report as JSON text.
#[pyfunction]
#[pyo3(signature = (scenario, dataset="synthetic", config=None))]
fn random_search(
    py: Python<'_>,
    scenario: &str,
    dataset: &str,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<String> {
    let sc: Scenario = scenario.parse().map_err(value_err)?;
    let kind = parse_dataset(dataset)?;
    let cfg = run_config(config_json(py, config)?.as_deref())?;
    let out = py
        .detach(|| run::run_random(&sc, kind, &cfg, false))
        .map_err(run_err)?;
    Ok(out.doc.to_json())
}

/// Memory-aware search with one operation removed; returns JSON text.
#[pyfunction]
#[pyo3(signature = (opset, removed, cells=1, dataset="synthetic", config=None))]
fn ablate(
    py: Python<'_>,
    opset: &str,
    removed: &str,
    cells: usize,
    dataset: &str,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<String> {
    let ops = parse_opset(opset)?;
    let removed: Operation = removed.parse().map_err(value_err)?;
    let kind = parse_dataset(dataset)?;
    let cfg = run_config(config_json(py, config)?.as_deref())?;
    let out = py
        .detach(|| {
            run::run_ablation(
                &ops,
                cells,
                removed,
                AblationStrategy::MemoryAware,
                kind,
                &cfg,
                false,
            )
        })
        .map_err(run_err)?;
    Ok(out.doc.to_json())
}

/// Score of one architecture on the seeded batch; `None` when singular.
#[pyfunction]
#[pyo3(signature = (opset, cells, dataset="synthetic", config=None))]
fn score_architecture(
    py: Python<'_>,
    opset: &str,
    cells: Vec<u64>,
    dataset: &str,
    config: Option<&Bound<'_, PyAny>>,
) -> PyResult<Option<f64>> {
    let ops = parse_opset(opset)?;
    let kind = parse_dataset(dataset)?;
    let cfg = run_config(config_json(py, config)?.as_deref())?;
    let net = run::network_from_indices(&ops, &cells, kind, &cfg).map_err(value_err)?;
    let r = py
        .detach(|| run::score_architecture(&net, kind, &cfg, false))
        .map_err(run_err)?;
    Ok(r.as_option())
}

/// A parsed `pCqO` / `pCqO_M` scenario name.
#[pyclass(name = "Scenario", frozen)]
struct PyScenario(Scenario);

#[pymethods]
impl PyScenario {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        Ok(PyScenario(name.parse().map_err(value_err)?))
    }

    #[getter]
    fn cells(&self) -> usize {
        self.0.cells
    }

    #[getter]
    fn ops(&self) -> usize {
        self.0.ops
    }

    #[getter]
    fn constrained(&self) -> bool {
        self.0.constrained
    }

    #[getter]
    fn opset(&self) -> String {
        self.0.opset().name().to_string()
    }

    /// Parameter budget on `dataset`, or `None` when unconstrained.
    fn budget(&self, dataset: &str) -> PyResult<Option<u64>> {
        Ok(self.0.budget_for(parse_dataset(dataset)?))
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Scenario('{}')", self.0)
    }
}

#[pymodule(name = "spikenas")]
fn spikenas_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add(
        "NoFeasibleArchitecture",
        m.py().get_type::<NoFeasibleArchitecture>(),
    )?;
    m.add(
        "DatasetUnavailable",
        m.py().get_type::<DatasetUnavailable>(),
    )?;
    m.add_class::<PyScenario>()?;
    m.add_function(wrap_pyfunction!(search_space_size, m)?)?;
    m.add_function(wrap_pyfunction!(encode_cell, m)?)?;
    m.add_function(wrap_pyfunction!(decode_cell, m)?)?;
    m.add_function(wrap_pyfunction!(count_params, m)?)?;
    m.add_function(wrap_pyfunction!(memory_footprint, m)?)?;
    m.add_function(wrap_pyfunction!(lif_step, m)?)?;
    m.add_function(wrap_pyfunction!(hamming_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(network_score, m)?)?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add_function(wrap_pyfunction!(random_search, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add_function(wrap_pyfunction!(score_architecture, m)?)?;
    Ok(())
}
