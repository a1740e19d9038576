//! Python bindings: hashing and stream-prefix authentication, the protocol
//! size/confirmation laws, dynamic-height address residence, and the
//! scenario runner with dump verification.
//!
//! Byte-string arguments map to `bytes`; 32-byte digests are plain `bytes`
//! of length 32. Errors become `ValueError` carrying the library's message.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use subchain_core::consensus as rules;
use subchain_core::hashtree as ht;
use subchain_core::ledger::HeightSchedule;
use subchain_core::params::Params as CoreParams;
use subchain_core::simnet;
use subchain_core::{Digest, Height};

fn digest32(what: &str, bytes: &[u8]) -> PyResult<Digest> {
    let arr: [u8; 32] = bytes.try_into().map_err(|_| {
        PyValueError::new_err(format!("{what} must be 32 bytes, got {}", bytes.len()))
    })?;
    Ok(Digest(arr))
}

fn digests32(what: &str, items: &[Vec<u8>]) -> PyResult<Vec<Digest>> {
    items.iter().map(|b| digest32(what, b)).collect()
}

// ---------------------------------------------------------------------------
// Hashing and stream prefixes
// ---------------------------------------------------------------------------

/// Digest of a Merkle leaf (domain-separated SHA-256).
#[pyfunction]
fn leaf_digest(data: &[u8]) -> Vec<u8> {
    ht::leaf_hash(data).0.to_vec()
}

/// Digest of an interior Merkle node over two 32-byte child digests.
#[pyfunction]
fn node_digest(left: &[u8], right: &[u8]) -> PyResult<Vec<u8>> {
    Ok(ht::node_hash(&digest32("left", left)?, &digest32("right", right)?).0.to_vec())
}

/// Root of a binary Merkle tree over raw leaves (last node duplicated on
/// odd levels; the empty list hashes like an empty leaf).
#[pyfunction]
fn merkle_root(leaves: Vec<Vec<u8>>) -> Vec<u8> {
    ht::merkle_root(&leaves).0.to_vec()
}

/// Stream commitment over a non-empty list of 32-byte tree roots.
#[pyfunction]
fn stream_root(trees: Vec<Vec<u8>>) -> PyResult<Vec<u8>> {
    let trees = digests32("tree root", &trees)?;
    let (root, _) = ht::stream_root(&trees).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(root.0.to_vec())
}

/// An authenticated prefix of a stream of tree roots: the first `cut + 1`
/// roots plus one tail digest standing for everything after them.
#[pyclass]
struct StreamPrefix {
    inner: ht::StreamPrefix,
}

#[pymethods]
impl StreamPrefix {
    /// Build the prefix proof for positions `0..=cut` of the given stream.
    #[staticmethod]
    fn build(trees: Vec<Vec<u8>>, cut: usize) -> PyResult<StreamPrefix> {
        let trees = digests32("tree root", &trees)?;
        let inner =
            ht::prefix_proof(&trees, cut).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(StreamPrefix { inner })
    }

    /// Decode the canonical wire encoding produced by `to_bytes`.
    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<StreamPrefix> {
        let inner =
            ht::StreamPrefix::from_bytes(data).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(StreamPrefix { inner })
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.inner.to_bytes()
    }

    /// Highest stream position this prefix covers.
    #[getter]
    fn cut(&self) -> usize {
        self.inner.cut()
    }

    /// Whether the prefix covers the entire stream (no tail digest).
    #[getter]
    fn is_full(&self) -> bool {
        self.inner.is_full()
    }

    /// The stream commitment this prefix folds back to.
    #[getter]
    fn root(&self) -> Vec<u8> {
        self.inner.root().0.to_vec()
    }

    /// Digest standing for the stream past the cut, if any.
    #[getter]
    fn tail(&self) -> Option<Vec<u8>> {
        self.inner.tail().map(|d| d.0.to_vec())
    }

    /// The covered tree roots, in stream order.
    #[getter]
    fn trees(&self) -> Vec<Vec<u8>> {
        self.inner.trees().iter().map(|d| d.0.to_vec()).collect()
    }

    /// Check this prefix against an independently known stream commitment.
    fn verify(&self, root: &[u8]) -> PyResult<bool> {
        Ok(ht::verify_prefix(&digest32("root", root)?, &self.inner))
    }

    /// Grow the prefix with newly served roots (a cutoff raise). The served
    /// roots authenticate against the stored tail; nothing is trusted.
    #[pyo3(signature = (appended, new_tail=None))]
    fn extend(&self, appended: Vec<Vec<u8>>, new_tail: Option<Vec<u8>>) -> PyResult<StreamPrefix> {
        let appended = digests32("tree root", &appended)?;
        let new_tail = new_tail.map(|t| digest32("tail", &t)).transpose()?;
        let inner = ht::extend_prefix(&self.inner, &appended, new_tail)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(StreamPrefix { inner })
    }

    /// Shrink the prefix to a lower cut (a cutoff lowering).
    fn truncate(&self, new_cut: usize) -> PyResult<StreamPrefix> {
        let inner = ht::truncate_prefix(&self.inner, new_cut)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(StreamPrefix { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "StreamPrefix(cut={}, full={}, root={})",
            self.inner.cut(),
            self.inner.is_full(),
            &self.inner.root().to_hex()[..12]
        )
    }
}

// ---------------------------------------------------------------------------
// Protocol laws
// ---------------------------------------------------------------------------

/// Protocol constants. All arguments are optional and default to the
/// protocol's reference values.
#[pyclass(frozen)]
struct Params {
    inner: CoreParams,
}

#[pymethods]
impl Params {
    #[new]
    #[pyo3(signature = (base_size=1024, base_conf=100, max_height=16, subsidy=50, difficulty_bits=4))]
    fn new(
        base_size: u64,
        base_conf: u64,
        max_height: Height,
        subsidy: u64,
        difficulty_bits: u32,
    ) -> PyResult<Params> {
        let inner = CoreParams { base_size, base_conf, max_height, subsidy, difficulty_bits };
        inner.validate().map_err(PyValueError::new_err)?;
        Ok(Params { inner })
    }

    #[getter]
    fn base_size(&self) -> u64 {
        self.inner.base_size
    }

    #[getter]
    fn base_conf(&self) -> u64 {
        self.inner.base_conf
    }

    #[getter]
    fn max_height(&self) -> Height {
        self.inner.max_height
    }

    #[getter]
    fn subsidy(&self) -> u64 {
        self.inner.subsidy
    }

    #[getter]
    fn difficulty_bits(&self) -> u32 {
        self.inner.difficulty_bits
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "Params(base_size={}, base_conf={}, max_height={}, subsidy={}, difficulty_bits={})",
            p.base_size, p.base_conf, p.max_height, p.subsidy, p.difficulty_bits
        )
    }
}

fn check_height(params: &Params, what: &str, h: Height) -> PyResult<()> {
    if h > params.inner.max_height {
        return Err(PyValueError::new_err(format!(
            "{what} {h} exceeds the protocol maximum height {}",
            params.inner.max_height
        )));
    }
    Ok(())
}

/// Byte budget of the sub-block at `height`: the base at heights 0 and 1,
/// doubling at each height above.
#[pyfunction]
fn size_budget(params: &Params, height: Height) -> PyResult<u64> {
    check_height(params, "height", height)?;
    Ok(rules::size_budget(&params.inner, height))
}

/// Total byte budget of heights `0..=cutoff`.
#[pyfunction]
fn cumulative_budget(params: &Params, cutoff: Height) -> PyResult<u64> {
    check_height(params, "cutoff", cutoff)?;
    Ok(rules::cumulative_budget(&params.inner, cutoff))
}

/// Confirmations before value sourced at `source` settles at its
/// destination: one base interval per source height, plus one.
#[pyfunction]
fn required_confirmations(params: &Params, source: Height) -> PyResult<u64> {
    check_height(params, "source height", source)?;
    Ok(rules::required_confirmations(&params.inner, source))
}

/// Resolve a drop counter: a section in the block at `index` with counter
/// `drops` confirms the section of the block at the returned index. Returns
/// None when the counter restarts the chain (drops == index); raises
/// ValueError when the counter reaches before genesis.
#[pyfunction]
fn confirm_target(index: u64, drops: u32) -> PyResult<Option<u64>> {
    match rules::confirm_target(index, drops) {
        None => Err(PyValueError::new_err(format!(
            "drop counter {drops} at index {index} reaches before genesis"
        ))),
        Some(rules::LinkTarget::Fresh) => Ok(None),
        Some(rules::LinkTarget::Position(p)) => Ok(Some(p)),
    }
}

/// Where the coins of a scheduled address must reside at chain position
/// `now`: the base height through the lock period (inclusive boundary),
/// then one height per elapsed step period, capped at `max_height`.
#[pyfunction]
fn effective_height(
    base: Height,
    lock_period: u64,
    step_period: u64,
    created_at: u64,
    now: u64,
    max_height: Height,
) -> Height {
    let sched = HeightSchedule { lock_period, step_period, created_at };
    subchain_core::ledger::effective_height(base, &sched, now, max_height)
}

// ---------------------------------------------------------------------------
// Scenario runner
// ---------------------------------------------------------------------------

/// Everything one simulation run yields.
#[pyclass(frozen)]
struct RunResult {
    /// Whether every declared expectation held.
    #[pyo3(get)]
    ok: bool,
    /// Scenario name as declared in the config.
    #[pyo3(get)]
    scenario: String,
    /// Seed the run used.
    #[pyo3(get)]
    seed: u64,
    /// Machine-readable report.
    #[pyo3(get)]
    report_json: String,
    /// Human-readable report.
    #[pyo3(get)]
    report_text: String,
    /// Replayable chain dump (the `verify_dump` input).
    #[pyo3(get)]
    dump: Vec<u8>,
}

#[pymethods]
impl RunResult {
    fn __repr__(&self) -> String {
        format!(
            "RunResult(scenario={:?}, seed={}, ok={})",
            self.scenario, self.seed, self.ok
        )
    }
}

/// Names of the built-in scenarios, in catalog order.
#[pyfunction]
fn scenario_names() -> Vec<String> {
    simnet::scenario_names().into_iter().map(str::to_string).collect()
}

/// The scenario file text of a built-in scenario.
#[pyfunction]
fn scenario_toml(name: &str) -> PyResult<String> {
    simnet::scenario_toml(name)
        .map(str::to_string)
        .ok_or_else(|| PyValueError::new_err(format!("unknown scenario {name:?}")))
}

/// Parse a scenario file and run it deterministically. `seed` overrides the
/// seed declared in the text.
#[pyfunction]
#[pyo3(signature = (toml_text, seed=None))]
fn run_scenario(py: Python<'_>, toml_text: &str, seed: Option<u64>) -> PyResult<RunResult> {
    let mut config =
        simnet::ScenarioConfig::from_toml(toml_text).map_err(PyValueError::new_err)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let outcome = py
        .detach(|| simnet::run_scenario(&config))
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(RunResult {
        ok: outcome.report.ok,
        scenario: outcome.report.scenario.clone(),
        seed: outcome.report.seed,
        report_json: outcome.report.to_json(),
        report_text: outcome.report.render_text(),
        dump: simnet::write_dump(&outcome.dump),
    })
}

/// Replay a chain dump as an independent validator at `cutoff` and check
/// every strong rule. Returns the number of verified blocks; raises
/// ValueError naming the first failing (block, height, rule).
#[pyfunction]
fn verify_dump(py: Python<'_>, dump: &[u8], cutoff: Height) -> PyResult<usize> {
    let dump = simnet::read_dump(dump).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if cutoff > dump.params.max_height {
        return Err(PyValueError::new_err(format!(
            "cutoff {cutoff} exceeds the dump's maximum height {}",
            dump.params.max_height
        )));
    }
    py.detach(|| simnet::verify_dump(&dump, cutoff))
        .map_err(PyValueError::new_err)?;
    Ok(dump.blocks.len())
}

#[pymodule]
fn subchain_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<StreamPrefix>()?;
    m.add_class::<Params>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(leaf_digest, m)?)?;
    m.add_function(wrap_pyfunction!(node_digest, m)?)?;
    m.add_function(wrap_pyfunction!(merkle_root, m)?)?;
    m.add_function(wrap_pyfunction!(stream_root, m)?)?;
    m.add_function(wrap_pyfunction!(size_budget, m)?)?;
    m.add_function(wrap_pyfunction!(cumulative_budget, m)?)?;
    m.add_function(wrap_pyfunction!(required_confirmations, m)?)?;
    m.add_function(wrap_pyfunction!(confirm_target, m)?)?;
    m.add_function(wrap_pyfunction!(effective_height, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_names, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_toml, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(verify_dump, m)?)?;
    Ok(())
}
