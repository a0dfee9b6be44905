//! Python bindings. Matrices cross the boundary as lists of rows.

use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

use spregret_core::conic::ToleranceConfig;
use spregret_core::evaluation::{self, chain_benchmark, run_win_experiment, BenchmarkConfig, ExperimentConfig};
use spregret_core::matrix;
use spregret_core::model::{self, build_block_lift, ChainParams};
use spregret_core::sls::{self, causal_pattern, closed_loop_from_controller, Restriction};
use spregret_core::sparsity;
use spregret_core::synthesis::{
    self, synthesize_h2, synthesize_hinf, Objective, OracleChoice, OracleObjective, PipelineConfig, SynthesisSpec,
};
use spregret_core::{CostWeights, Discretization, Error};

create_exception!(spregret, SpRegretError, PyException);
create_exception!(spregret, NotQuadraticallyInvariantError, SpRegretError);
create_exception!(spregret, SolverError, SpRegretError);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.root() {
        Error::NotQuadraticallyInvariant { .. } => NotQuadraticallyInvariantError::new_err(msg),
        Error::Solver { .. } | Error::InvariantViolation(_) | Error::NotAchievable { .. } => SolverError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn mat(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    matrix::from_rows(&rows).map_err(to_py)
}

/// Linear plant over a finite horizon.
#[pyclass(module = "spregret", name = "HorizonSystem", from_py_object)]
#[derive(Clone)]
pub struct PySystem {
    inner: model::HorizonSystem,
}

#[pymethods]
impl PySystem {
    /// Time-invariant plant `x⁺ = Ax + Bu + w`.
    #[staticmethod]
    fn lti(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, horizon: usize) -> PyResult<Self> {
        let inner = model::HorizonSystem::lti(mat(a)?, mat(b)?, horizon).map_err(to_py)?;
        Ok(PySystem { inner })
    }

    /// Discretized spring-mass chain.
    #[staticmethod]
    #[pyo3(signature = (masses, horizon, ts=0.5, k=0.5, c=0.5, mass=1.0, discretization="zoh"))]
    fn chain(masses: usize, horizon: usize, ts: f64, k: f64, c: f64, mass: f64, discretization: &str) -> PyResult<Self> {
        let discretization: Discretization = discretization.parse().map_err(to_py)?;
        let p = ChainParams { masses, k, c, mass, ts, horizon, discretization };
        Ok(PySystem { inner: model::spring_mass_chain(&p).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PySystem { inner: model::HorizonSystem::from_json(text).map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon
    }

    /// Support of the lifted plant response, `Struct((I − ZA)⁻¹ZB)`.
    fn delta(&self) -> PyResult<PyPattern> {
        let lift = build_block_lift(&self.inner).map_err(to_py)?;
        Ok(PyPattern { inner: lift.delta })
    }

    /// Every causal entry of the controller.
    fn causal_pattern(&self) -> PyResult<PyPattern> {
        let lift = build_block_lift(&self.inner).map_err(to_py)?;
        Ok(PyPattern { inner: causal_pattern(&lift) })
    }

    fn __repr__(&self) -> String {
        format!("HorizonSystem(n={}, m={}, T={})", self.inner.state_dim, self.inner.input_dim, self.inner.horizon)
    }
}

/// Binary sparsity pattern.
#[pyclass(module = "spregret", name = "SparsityPattern", from_py_object)]
#[derive(Clone)]
pub struct PyPattern {
    inner: sparsity::SparsityPattern,
}

#[pymethods]
impl PyPattern {
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(PyPattern { inner: sparsity::SparsityPattern::from_text(text).map_err(to_py)? })
    }

    /// Causal information pattern of the spring-mass chain.
    #[staticmethod]
    fn chain(masses: usize, horizon: usize) -> PyResult<Self> {
        Ok(PyPattern { inner: model::chain_sparsity(masses, horizon).map_err(to_py)? })
    }

    #[staticmethod]
    fn identity(n: usize) -> Self {
        PyPattern { inner: sparsity::SparsityPattern::identity(n) }
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.shape()
    }

    fn card(&self) -> usize {
        self.inner.card()
    }

    fn get(&self, i: usize, j: usize) -> PyResult<bool> {
        let (r, c) = self.inner.shape();
        if i >= r || j >= c {
            return Err(PyValueError::new_err(format!("index ({i}, {j}) outside {r}x{c}")));
        }
        Ok(self.inner.get(i, j))
    }

    fn is_subset_of(&self, other: &PyPattern) -> bool {
        self.inner.is_subset_of(&other.inner)
    }

    fn is_qi(&self, delta: &PyPattern) -> PyResult<bool> {
        sparsity::is_qi(&self.inner, &delta.inner).map_err(to_py)
    }

    fn nearest_qi_superset(&self, delta: &PyPattern) -> PyResult<PyPattern> {
        Ok(PyPattern { inner: sparsity::nearest_qi_superset(&self.inner, &delta.inner).map_err(to_py)? })
    }

    /// State pattern paired with this controller pattern.
    fn generate_vx(&self) -> PyPattern {
        PyPattern { inner: sparsity::generate_vx(&self.inner) }
    }

    fn __eq__(&self, other: &PyPattern) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let (r, c) = self.inner.shape();
        format!("SparsityPattern({r}x{c}, {} ones)", self.inner.card())
    }
}

/// Causal state feedback `u = Kx` over the horizon.
#[pyclass(module = "spregret", name = "Controller", from_py_object)]
#[derive(Clone)]
pub struct PyController {
    inner: sls::Controller,
}

#[pymethods]
impl PyController {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyController { inner: sls::Controller::from_json(text).map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    /// The gain as a list of rows.
    #[getter]
    fn k(&self) -> Vec<Vec<f64>> {
        matrix::to_rows(&self.inner.k)
    }

    #[getter]
    fn pattern(&self) -> PyPattern {
        PyPattern { inner: self.inner.pattern.clone() }
    }

    /// Cost `J(δ, K)` with unit weights.
    fn cost(&self, system: &PySystem, delta: Vec<f64>) -> PyResult<f64> {
        let lift = build_block_lift(&system.inner).map_err(to_py)?;
        let phi = closed_loop_from_controller(&self.inner, &lift).map_err(to_py)?;
        let cost = CostWeights::identity(lift.stacked_rows());
        evaluation::cost_j(&DVector::from_vec(delta), &phi, &cost).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Controller({}x{})", self.inner.k.nrows(), self.inner.k.ncols())
    }
}

/// Outcome of a synthesis call.
#[pyclass(module = "spregret", name = "SynthesisResult")]
pub struct PyResultObj {
    #[pyo3(get)]
    controller: PyController,
    /// Optimal value: H2 cost, γ², or the worst-case regret λ*.
    #[pyo3(get)]
    value: f64,
    #[pyo3(get)]
    num_variables: usize,
    #[pyo3(get)]
    free_variables: usize,
    /// JSON report (pipeline report for the regret method).
    #[pyo3(get)]
    report: String,
}

fn tolerances(tol_gap: Option<f64>) -> ToleranceConfig {
    let d = ToleranceConfig::default();
    ToleranceConfig { tol_gap: tol_gap.unwrap_or(d.tol_gap), ..d }
}

fn restriction(toeplitz: bool) -> Restriction {
    if toeplitz {
        Restriction::Toeplitz
    } else {
        Restriction::None
    }
}

/// Synthesizes a controller over `pattern` with method `h2`, `hinf` or
/// `spregret` (cost weights `C = I`).
#[pyfunction]
#[pyo3(signature = (system, pattern, method="spregret", oracle="nearest-qi", oracle_objective="hinf", toeplitz=false, tol_gap=None))]
fn synthesize(
    py: Python<'_>,
    system: &PySystem,
    pattern: &PyPattern,
    method: &str,
    oracle: &str,
    oracle_objective: &str,
    toeplitz: bool,
    tol_gap: Option<f64>,
) -> PyResult<PyResultObj> {
    let oracle: OracleChoice = oracle.parse().map_err(to_py)?;
    let oracle_objective: OracleObjective = oracle_objective.parse().map_err(to_py)?;
    let sys = system.inner.clone();
    let s = pattern.inner.clone();
    let method = method.to_string();
    py.detach(move || {
        let lift = build_block_lift(&sys)?;
        let cost = CostWeights::identity(lift.stacked_rows());
        let tol = tolerances(tol_gap);
        let spec = |objective| -> Result<SynthesisSpec, Error> {
            Ok(SynthesisSpec::new(lift.clone(), cost.clone(), s.clone(), objective)?
                .with_restriction(restriction(toeplitz))
                .with_tolerances(tol))
        };
        let wrap = |r: synthesis::Synthesized, report: String| PyResultObj {
            controller: PyController { inner: r.controller },
            value: r.value,
            num_variables: r.num_variables,
            free_variables: r.free_variables,
            report,
        };
        match method.as_str() {
            "h2" => Ok(wrap(synthesize_h2(&spec(Objective::H2 { sigma: None })?)?, String::new())),
            "hinf" => Ok(wrap(synthesize_hinf(&spec(Objective::Hinf)?)?, String::new())),
            "spregret" => {
                let cfg = PipelineConfig { oracle, oracle_objective, restriction: restriction(toeplitz), tolerances: tol };
                let out = synthesis::pipeline(&s, &lift, &cost, &cfg)?;
                let report = out.report.to_json()?;
                Ok(wrap(out.regret, report))
            }
            other => Err(Error::Validation(format!("unknown method '{other}'"))),
        }
    })
    .map_err(to_py)
}

/// Worst-case regret `λ_max(ΦᵀΦ − Φ̂ᵀΦ̂)` of `k` against `k_hat` (`C = I`),
/// with a maximizing unit disturbance.
#[pyfunction]
fn spregret_value(system: &PySystem, k: &PyController, k_hat: &PyController) -> PyResult<(f64, Vec<f64>)> {
    let lift = build_block_lift(&system.inner).map_err(to_py)?;
    let phi = closed_loop_from_controller(&k.inner, &lift).map_err(to_py)?;
    let phi_hat = closed_loop_from_controller(&k_hat.inner, &lift).map_err(to_py)?;
    let r = evaluation::spregret_value(&phi, &phi_hat, &CostWeights::identity(lift.stacked_rows())).map_err(to_py)?;
    Ok((r.value, r.witness.iter().copied().collect()))
}

/// Builds the four benchmark controllers on a chain and runs the
/// affected-masses experiment; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (masses, horizon, draws=200, iterations=20, seed=0, lo=-0.5, hi=1.0, toeplitz=false, tol_gap=None))]
fn chain_experiment(
    py: Python<'_>,
    masses: usize,
    horizon: usize,
    draws: usize,
    iterations: usize,
    seed: u64,
    lo: f64,
    hi: f64,
    toeplitz: bool,
    tol_gap: Option<f64>,
) -> PyResult<String> {
    py.detach(move || {
        let params = ChainParams { masses, horizon, ..Default::default() };
        let bench = BenchmarkConfig { restriction: restriction(toeplitz), tolerances: tolerances(tol_gap), ..Default::default() };
        let set = chain_benchmark(&params, &bench)?.set;
        let cfg = ExperimentConfig { draws, iterations, seed, lo, hi, ..Default::default() };
        let sweep: Vec<usize> = (1..=masses).collect();
        run_win_experiment(&set, &sweep, &cfg)?.to_json()
    })
    .map_err(to_py)
}

#[pymodule(name = "spregret")]
fn spregret_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_class::<PyPattern>()?;
    m.add_class::<PyController>()?;
    m.add_class::<PyResultObj>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(spregret_value, m)?)?;
    m.add_function(wrap_pyfunction!(chain_experiment, m)?)?;
    m.add("SpRegretError", m.py().get_type::<SpRegretError>())?;
    m.add("NotQuadraticallyInvariantError", m.py().get_type::<NotQuadraticallyInvariantError>())?;
    m.add("SolverError", m.py().get_type::<SolverError>())?;
    Ok(())
}
