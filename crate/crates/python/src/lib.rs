//! Python module `fisher_lab`: offline equilibria, buyer demand, the
//! revealed-preference pricing policy, and experiment presets.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fisher_lab::harness::{self, ExperimentConfig};
use fisher_lab::{
    distributions, BuyerProfile, Error, MarketInstance, PriceVector, PricingPolicy, SolverParams, TieRule, UpdateRule,
};

fn to_py(e: Error) -> PyErr {
    if e.is_config_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse_tie_rule(name: &str) -> PyResult<TieRule> {
    match name {
        "lowest_index" => Ok(TieRule::LowestIndex),
        "uniform_split" => Ok(TieRule::UniformSplit),
        other => Err(PyValueError::new_err(format!(
            "tie_rule must be 'lowest_index' or 'uniform_split', got {other:?}"
        ))),
    }
}

fn parse_rule(name: &str) -> PyResult<UpdateRule> {
    match name {
        "additive" => Ok(UpdateRule::Additive),
        "multiplicative" => Ok(UpdateRule::Multiplicative),
        other => Err(PyValueError::new_err(format!(
            "rule must be 'additive' or 'multiplicative', got {other:?}"
        ))),
    }
}

fn build_market(capacities: Vec<f64>, budgets: Vec<f64>, utilities: Vec<Vec<f64>>) -> fisher_lab::Result<MarketInstance> {
    if budgets.len() != utilities.len() {
        return Err(Error::Dimension {
            what: "utilities",
            expected: budgets.len(),
            got: utilities.len(),
        });
    }
    let buyers = budgets
        .into_iter()
        .zip(utilities)
        .map(|(w, u)| BuyerProfile::new(w, u))
        .collect();
    MarketInstance::new(capacities, buyers)
}

/// Solution of the Eisenberg-Gale program.
#[pyclass(frozen, get_all)]
struct Equilibrium {
    prices: Vec<f64>,
    allocations: Vec<Vec<f64>>,
    primal_value: f64,
    dual_value: f64,
    gap: f64,
    iterations: usize,
}

#[pymethods]
impl Equilibrium {
    fn __repr__(&self) -> String {
        format!(
            "Equilibrium(prices={:?}, primal_value={}, gap={:e})",
            self.prices, self.primal_value, self.gap
        )
    }
}

/// Solve `max sum_t w_t log(u_t . x_t)` subject to `sum_t x_t <= c`.
#[pyfunction]
#[pyo3(signature = (capacities, budgets, utilities, gap_tol=None, max_iters=None))]
fn solve_eg(
    py: Python<'_>,
    capacities: Vec<f64>,
    budgets: Vec<f64>,
    utilities: Vec<Vec<f64>>,
    gap_tol: Option<f64>,
    max_iters: Option<usize>,
) -> PyResult<Equilibrium> {
    let inst = build_market(capacities, budgets, utilities).map_err(to_py)?;
    let mut params = SolverParams::default();
    if let Some(g) = gap_tol {
        params.gap_tol = g;
    }
    if let Some(k) = max_iters {
        params.max_iters = k;
    }
    params.validate().map_err(to_py)?;
    let sol = py
        .detach(|| fisher_lab::solve_eg_primal(&inst, &params))
        .map_err(to_py)?;
    Ok(Equilibrium {
        prices: sol.prices.into_inner(),
        allocations: sol.allocations,
        primal_value: sol.primal_value,
        dual_value: sol.dual_value,
        gap: sol.gap,
        iterations: sol.iterations,
    })
}

/// Utility-maximizing bundle of a linear-utility buyer at `prices`.
#[pyfunction]
#[pyo3(signature = (budget, utilities, prices, tie_rule="lowest_index"))]
fn optimal_bundle(budget: f64, utilities: Vec<f64>, prices: Vec<f64>, tie_rule: &str) -> PyResult<Vec<f64>> {
    let rule = parse_tie_rule(tie_rule)?;
    fisher_lab::optimal_bundle(&BuyerProfile::new(budget, utilities), &PriceVector::new(prices), rule)
        .map(|a| a.0)
        .map_err(to_py)
}

/// `w / min_j (p_j / u_j)`.
#[pyfunction]
fn indirect_utility(budget: f64, utilities: Vec<f64>, prices: Vec<f64>) -> PyResult<f64> {
    fisher_lab::indirect_utility(&BuyerProfile::new(budget, utilities), &PriceVector::new(prices)).map_err(to_py)
}

/// Offline optimum of the two-type counterexample with `s` buyers of the first type.
#[pyfunction]
fn closed_form_optimum_counterexample(n: usize, s: usize) -> PyResult<f64> {
    if s > n {
        return Err(PyValueError::new_err(format!("s = {s} exceeds n = {n}")));
    }
    Ok(distributions::closed_form_optimum_counterexample(n, s))
}

/// Names of the built-in experiment presets.
#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    harness::PRESETS.to_vec()
}

/// JSON config of a named preset.
#[pyfunction]
fn preset_config(name: &str) -> PyResult<String> {
    harness::preset(name).and_then(|c| c.to_json()).map_err(to_py)
}

fn run_config(py: Python<'_>, cfg: ExperimentConfig) -> PyResult<(String, String)> {
    let report = py.detach(|| harness::run_experiment(&cfg)).map_err(to_py)?;
    Ok((harness::rows_csv(&report), harness::aggregate_csv(&report)))
}

/// Run an experiment from its JSON config; returns `(rows_csv, aggregate_csv)`.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<(String, String)> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(to_py)?;
    run_config(py, cfg)
}

/// Run a preset with optional overrides; returns `(rows_csv, aggregate_csv)`.
#[pyfunction]
#[pyo3(signature = (name, n_values=None, replications=None, seed=None))]
fn run_preset(
    py: Python<'_>,
    name: &str,
    n_values: Option<Vec<usize>>,
    replications: Option<usize>,
    seed: Option<u64>,
) -> PyResult<(String, String)> {
    let mut cfg = harness::preset(name).map_err(to_py)?;
    if let Some(ns) = n_values {
        cfg.n_values = ns;
    }
    if let Some(r) = replications {
        cfg.replications = r;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(to_py)?;
    run_config(py, cfg)
}

/// Price adjustment from observed consumption, `gamma = gamma_scale / sqrt(n)`.
#[pyclass]
struct RevealedPreference {
    inner: fisher_lab::RevealedPreferencePolicy,
    t: usize,
}

#[pymethods]
impl RevealedPreference {
    #[new]
    #[pyo3(signature = (d, n, gamma_scale=0.01, rule="additive", p1=None))]
    fn new(d: Vec<f64>, n: usize, gamma_scale: f64, rule: &str, p1: Option<Vec<f64>>) -> PyResult<Self> {
        let p1 = PriceVector::new(p1.unwrap_or_else(|| vec![1.0; d.len()]));
        let inner = fisher_lab::RevealedPreferencePolicy::new(d, n, gamma_scale, parse_rule(rule)?, p1).map_err(to_py)?;
        Ok(Self { inner, t: 0 })
    }

    /// Price posted to the next buyer.
    #[getter]
    fn price(&self) -> Vec<f64> {
        self.inner.state().price.0.clone()
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma()
    }

    #[getter]
    fn consumed(&self) -> Vec<f64> {
        self.inner.state().consumed.clone()
    }

    #[getter]
    fn breached(&self) -> bool {
        self.inner.breached()
    }

    /// Let a buyer best-respond to the current price, update it, and return
    /// the buyer's bundle.
    fn serve(&mut self, budget: f64, utilities: Vec<f64>) -> PyResult<Vec<f64>> {
        let buyer = BuyerProfile::new(budget, utilities);
        self.t += 1;
        let price = self.inner.next_price(self.t).map_err(to_py)?;
        let x = fisher_lab::optimal_bundle(&buyer, &price, TieRule::LowestIndex).map_err(to_py)?;
        self.inner.observe(self.t, &buyer, &x).map_err(to_py)?;
        Ok(x.0)
    }
}

#[pymodule]
#[pyo3(name = "fisher_lab")]
fn fisher_lab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Equilibrium>()?;
    m.add_class::<RevealedPreference>()?;
    m.add_function(wrap_pyfunction!(solve_eg, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_bundle, m)?)?;
    m.add_function(wrap_pyfunction!(indirect_utility, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form_optimum_counterexample, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(preset_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_preset, m)?)?;
    Ok(())
}
