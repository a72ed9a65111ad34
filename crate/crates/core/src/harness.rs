//! Seeded Monte-Carlo experiments over `(n, replication)` cells.
//!
//! Every cell draws its buyers from its own stream `(seed, n << 20 | rep)`
//! and all policies of the experiment face the same realized buyers, so
//! results do not depend on scheduling or on which policies are enabled.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::buyer::{optimal_bundle, TieRule};
use crate::distributions::{
    closed_form_optimum_counterexample, counterexample_per_user_capacity, counterexample_spec, f2_benchmark_spec,
    f2_per_user_capacity, sample_users, DistributionSpec, RngStream,
};
use crate::error::{Error, Result};
use crate::market::{BuyerProfile, MarketInstance, PriceVector};
use crate::metrics::{fit_loglog_slope, norms, LinearFit, MetricsReport, SimulationTrace};
use crate::policies::{
    breached, default_initial_price, static_equilibrium_policy, AdaptiveCePolicy, ConsumptionMode, DynamicSaaPolicy,
    PricingPolicy, RevealedPreferencePolicy, StaticPolicy, UpdateRule,
};
use crate::solver::{solve_eg_primal, SolverParams};

pub const THREADS_ENV: &str = "FISHER_LAB_THREADS";
pub const ROWS_HEADER: &str = "experiment,policy,n,replication,seed,regret,u_star,u_online,violation_l2,violation_linf,nsw_ratio,max_price,min_price,tau,breach";
pub const AGGREGATE_HEADER: &str = "experiment,policy,n,mean_regret,std_regret,mean_violation_l2,std_violation_l2,breach_rate,slope_regret,slope_violation";
pub const PRESETS: [&str; 6] = [
    "fig_theory_bounds",
    "fig_comparison",
    "fig_static_vs_adaptive",
    "fig_add_vs_mult",
    "fig_price_positivity",
    "fig_lipschitz",
];

const MAX_REPLICATIONS: usize = 1 << 20;
const SAA_SEED_SALT: u64 = 0x5AA5_0000_0000_0001;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialPrice {
    /// `E[w] d / |d|^2`.
    #[default]
    Distribution,
    Ones,
    Fixed { prices: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StaticSource {
    /// Subgradient minimizer of the sample-average dual.
    Saa {
        #[serde(default = "default_samples")]
        samples: usize,
    },
    CertaintyEquivalent,
    Fixed {
        prices: Vec<f64>,
    },
}

impl Default for StaticSource {
    fn default() -> Self {
        StaticSource::Saa {
            samples: default_samples(),
        }
    }
}

fn default_samples() -> usize {
    5000
}
fn default_band() -> f64 {
    0.5
}
fn default_gamma_scale() -> f64 {
    0.01
}
fn default_delta() -> f64 {
    2.0
}
fn default_replications() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    StaticEq {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        #[serde(default)]
        source: StaticSource,
    },
    AdaptiveCe {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        /// Band half-width as a fraction of `d`.
        #[serde(default = "default_band")]
        band_fraction: f64,
        #[serde(default)]
        mode: ConsumptionMode,
    },
    RpAdditive {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        #[serde(default = "default_gamma_scale")]
        gamma_scale: f64,
        #[serde(default)]
        p1: InitialPrice,
    },
    RpMultiplicative {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        #[serde(default = "default_gamma_scale")]
        gamma_scale: f64,
        #[serde(default)]
        p1: InitialPrice,
    },
    DynamicSaa {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        #[serde(default = "default_delta")]
        delta: f64,
        #[serde(default)]
        p1: InitialPrice,
    },
}

impl PolicyConfig {
    pub fn id(&self) -> &'static str {
        match self {
            PolicyConfig::StaticEq { .. } => "static_eq",
            PolicyConfig::AdaptiveCe { .. } => "adaptive_ce",
            PolicyConfig::RpAdditive { .. } => "rp_additive",
            PolicyConfig::RpMultiplicative { .. } => "rp_multiplicative",
            PolicyConfig::DynamicSaa { .. } => "dynamic_saa",
        }
    }

    pub fn label(&self) -> &str {
        let label = match self {
            PolicyConfig::StaticEq { label, .. }
            | PolicyConfig::AdaptiveCe { label, .. }
            | PolicyConfig::RpAdditive { label, .. }
            | PolicyConfig::RpMultiplicative { label, .. }
            | PolicyConfig::DynamicSaa { label, .. } => label,
        };
        label.as_deref().unwrap_or(self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub params: SolverParams,
    /// Use the iterative solver even where a closed form exists.
    pub force_iterative: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub distribution: DistributionSpec,
    pub per_user_capacity: Vec<f64>,
    pub n_values: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub policies: Vec<PolicyConfig>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Also emit the per-step trace of replication 0 for every `(policy, n)`.
    #[serde(default)]
    pub write_traces: bool,
}

fn check_prices(field: String, prices: &[f64], m: usize) -> Result<()> {
    if prices.len() != m {
        return Err(Error::invalid(field, format!("expected {m} prices, got {}", prices.len())));
    }
    if prices.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(Error::invalid(field, "prices must be positive and finite"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Hex SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        {
            return Err(Error::invalid("name", "use letters, digits, '_', '-' or '.'"));
        }
        self.distribution.validate()?;
        let m = self.distribution.goods();
        if self.per_user_capacity.len() != m {
            return Err(Error::invalid(
                "per_user_capacity",
                format!("expected {m} entries, got {}", self.per_user_capacity.len()),
            ));
        }
        if self.per_user_capacity.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::invalid("per_user_capacity", "entries must be positive"));
        }
        if self.n_values.is_empty() || self.n_values.iter().any(|&n| n == 0 || n >= 1 << 40) {
            return Err(Error::invalid("n_values", "need at least one n, each in [1, 2^40)"));
        }
        if self.replications == 0 || self.replications >= MAX_REPLICATIONS {
            return Err(Error::invalid("replications", "must lie in [1, 2^20)"));
        }
        if self.policies.is_empty() {
            return Err(Error::invalid("policies", "need at least one policy"));
        }
        let discrete = matches!(self.distribution, DistributionSpec::Discrete { .. });
        for (i, p) in self.policies.iter().enumerate() {
            let field = |name: &str| format!("policies[{i}].{name}");
            if self.policies[..i].iter().any(|q| q.label() == p.label()) {
                return Err(Error::invalid(field("label"), format!("duplicate label {:?}", p.label())));
            }
            if p.label().is_empty() || p.label().contains([',', '/', '\\', '"', '\n']) {
                return Err(Error::invalid(field("label"), "must be nonempty and CSV/filename safe"));
            }
            let check_p1 = |p1: &InitialPrice| match p1 {
                InitialPrice::Fixed { prices } => check_prices(field("p1.prices"), prices, m),
                _ => Ok(()),
            };
            match p {
                PolicyConfig::StaticEq { source, .. } => match source {
                    StaticSource::Saa { samples } if *samples == 0 => {
                        return Err(Error::invalid(field("source.samples"), "must be at least 1"))
                    }
                    StaticSource::CertaintyEquivalent if !discrete => {
                        return Err(Error::invalid(field("source"), "needs a discrete distribution"))
                    }
                    StaticSource::Fixed { prices } => check_prices(field("source.prices"), prices, m)?,
                    _ => {}
                },
                PolicyConfig::AdaptiveCe { band_fraction, .. } => {
                    if !discrete {
                        return Err(Error::invalid(field("id"), "adaptive_ce needs a discrete distribution"));
                    }
                    if !(*band_fraction > 0.0 && *band_fraction < 1.0) {
                        return Err(Error::invalid(field("band_fraction"), "must lie in (0, 1)"));
                    }
                }
                PolicyConfig::RpAdditive { gamma_scale, p1, .. }
                | PolicyConfig::RpMultiplicative { gamma_scale, p1, .. } => {
                    if !(*gamma_scale > 0.0 && gamma_scale.is_finite()) {
                        return Err(Error::invalid(field("gamma_scale"), "must be positive"));
                    }
                    check_p1(p1)?;
                }
                PolicyConfig::DynamicSaa { delta, p1, .. } => {
                    if !(*delta > 1.0 && *delta <= 2.0) {
                        return Err(Error::invalid(field("delta"), "must lie in (1, 2]"));
                    }
                    check_p1(p1)?;
                }
            }
        }
        self.oracle.params.validate()
    }

    fn initial_price(&self, p1: &InitialPrice) -> PriceVector {
        match p1 {
            InitialPrice::Distribution => default_initial_price(&self.distribution, &self.per_user_capacity),
            InitialPrice::Ones => PriceVector::uniform(self.per_user_capacity.len(), 1.0),
            InitialPrice::Fixed { prices } => PriceVector::new(prices.clone()),
        }
    }
}

/// Stream of the `(n, replication)` cell.
pub fn cell_stream(seed: u64, n: usize, replication: usize) -> RngStream {
    RngStream::new(seed, ((n as u64) << 20) | replication as u64)
}

/// Offline optimum `U*_n` of the realized market.
pub fn oracle_value(
    spec: &DistributionSpec,
    buyers: &[BuyerProfile],
    capacities: &[f64],
    oracle: &OracleConfig,
) -> Result<f64> {
    let n = buyers.len();
    if !oracle.force_iterative && spec.is_counterexample() && capacities.iter().all(|c| *c == n as f64) {
        let s = buyers.iter().filter(|b| b.utilities[0] > 0.0).count();
        return Ok(closed_form_optimum_counterexample(n, s));
    }
    let instance = MarketInstance::new(capacities.to_vec(), buyers.to_vec())?;
    Ok(solve_eg_primal(&instance, &oracle.params)?.primal_value)
}

/// Serve `buyers` in order under `policy`. An additive price breach stops
/// the run after the offending step.
pub fn simulate(buyers: &[BuyerProfile], policy: &mut dyn PricingPolicy) -> Result<SimulationTrace> {
    let m = buyers.first().map_or(0, |b| b.goods());
    let mut trace = SimulationTrace::new(m);
    for (i, b) in buyers.iter().enumerate() {
        let t = i + 1;
        let price = policy.next_price(t)?;
        let x = match policy.prescribed_allocation(t, b)? {
            Some(x) => x,
            None => optimal_bundle(b, &price, TieRule::LowestIndex)?,
        };
        policy.observe(t, b, &x)?;
        trace.push(price, b.clone(), x.0);
        if breached(policy.events()) {
            break;
        }
    }
    trace.final_price = Some(policy.state().price.clone());
    trace.events = policy.events().to_vec();
    Ok(trace)
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub trace: SimulationTrace,
    /// `None` when the run was aborted by a price breach.
    pub metrics: Option<MetricsReport>,
}

/// Sample `n` buyers from `stream`, run `policy`, and score the run against
/// the offline optimum of the same buyers.
pub fn run_simulation(
    spec: &DistributionSpec,
    n: usize,
    capacities: &[f64],
    policy: &mut dyn PricingPolicy,
    stream: RngStream,
    oracle: &OracleConfig,
) -> Result<SimulationOutcome> {
    let buyers = sample_users(spec, n, &mut stream.rng());
    let trace = simulate(&buyers, policy)?;
    let metrics = if trace.breached() {
        None
    } else {
        let u_star = oracle_value(spec, &buyers, capacities, oracle)?;
        Some(MetricsReport::from_trace(&trace, u_star, capacities))
    };
    Ok(SimulationOutcome { trace, metrics })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub experiment: String,
    pub policy: String,
    pub n: usize,
    pub replication: usize,
    pub seed: u64,
    pub metrics: Option<MetricsReport>,
    pub breach: bool,
    /// `max_j |sum_t x_tj - c_j - (p_j^{n+1} - p_j^1) / gamma|` for additive
    /// revealed-preference runs.
    pub telescoping_residual: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub experiment: String,
    pub policy: String,
    pub n: usize,
    pub mean_regret: Option<f64>,
    pub std_regret: Option<f64>,
    pub mean_violation_l2: Option<f64>,
    pub std_violation_l2: Option<f64>,
    pub breach_rate: f64,
    pub slope_regret: Option<f64>,
    pub slope_violation: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicySlopes {
    pub policy: String,
    pub regret: Option<LinearFit>,
    pub violation: Option<LinearFit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceDump {
    pub policy: String,
    pub n: usize,
    #[serde(skip)]
    pub trace: SimulationTrace,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<ExperimentRow>,
    pub aggregates: Vec<AggregateRow>,
    pub slopes: Vec<PolicySlopes>,
    #[serde(skip)]
    pub traces: Vec<TraceDump>,
}

impl ExperimentReport {
    pub fn rows_for<'a>(&'a self, policy: &'a str) -> impl Iterator<Item = &'a ExperimentRow> + 'a {
        self.rows.iter().filter(move |r| r.policy == policy)
    }

    pub fn aggregate(&self, policy: &str, n: usize) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.policy == policy && a.n == n)
    }

    pub fn failed_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }
}

/// Policy ingredients that do not depend on the cell.
enum Prepared {
    Static(StaticPolicy),
    Other,
}

fn prepare(cfg: &ExperimentConfig, index: usize, policy: &PolicyConfig) -> Result<Prepared> {
    let d = &cfg.per_user_capacity;
    Ok(match policy {
        PolicyConfig::StaticEq { source, .. } => Prepared::Static(match source {
            StaticSource::Saa { samples } => {
                let mut rng = RngStream::new(cfg.seed ^ SAA_SEED_SALT, index as u64).rng();
                static_equilibrium_policy(&cfg.distribution, d, *samples, &mut rng, &cfg.oracle.params)?
            }
            StaticSource::CertaintyEquivalent => {
                StaticPolicy::from_certainty_equivalent(&cfg.distribution.ce_input(d)?, &cfg.oracle.params)?
            }
            StaticSource::Fixed { prices } => StaticPolicy::new(PriceVector::new(prices.clone()))?,
        }),
        _ => Prepared::Other,
    })
}

fn instantiate(cfg: &ExperimentConfig, policy: &PolicyConfig, prepared: &Prepared, n: usize) -> Result<Box<dyn PricingPolicy>> {
    let d = cfg.per_user_capacity.clone();
    let params = cfg.oracle.params;
    Ok(match (policy, prepared) {
        (PolicyConfig::StaticEq { .. }, Prepared::Static(p)) => Box::new(p.clone()),
        (PolicyConfig::AdaptiveCe { band_fraction, mode, .. }, _) => {
            let delta = d.iter().map(|v| v * band_fraction).collect();
            Box::new(AdaptiveCePolicy::new(cfg.distribution.ce_input(&d)?, n, delta, *mode, params)?)
        }
        (PolicyConfig::RpAdditive { gamma_scale, p1, .. }, _) => Box::new(RevealedPreferencePolicy::new(
            d,
            n,
            *gamma_scale,
            UpdateRule::Additive,
            cfg.initial_price(p1),
        )?),
        (PolicyConfig::RpMultiplicative { gamma_scale, p1, .. }, _) => Box::new(RevealedPreferencePolicy::new(
            d,
            n,
            *gamma_scale,
            UpdateRule::Multiplicative,
            cfg.initial_price(p1),
        )?),
        (PolicyConfig::DynamicSaa { delta, p1, .. }, _) => {
            let caps = d.iter().map(|v| v * n as f64).collect();
            Box::new(DynamicSaaPolicy::new(caps, n, *delta, cfg.initial_price(p1), params)?)
        }
        (PolicyConfig::StaticEq { .. }, Prepared::Other) => unreachable!("static policies are always prepared"),
    })
}

fn telescoping_residual(trace: &SimulationTrace, capacities: &[f64], gamma: f64) -> Option<f64> {
    let first = &trace.records.first()?.price;
    let last = trace.final_price.as_ref()?;
    Some(
        (0..capacities.len())
            .map(|j| (trace.cumulative[j] - capacities[j] - (last[j] - first[j]) / gamma).abs())
            .fold(0.0, f64::max),
    )
}

struct CellOutput {
    rows: Vec<ExperimentRow>,
    traces: Vec<TraceDump>,
}

fn run_cell(cfg: &ExperimentConfig, prepared: &[Prepared], n: usize, rep: usize) -> CellOutput {
    let buyers = sample_users(&cfg.distribution, n, &mut cell_stream(cfg.seed, n, rep).rng());
    let capacities: Vec<f64> = cfg.per_user_capacity.iter().map(|d| d * n as f64).collect();
    let mut u_star: Option<std::result::Result<f64, String>> = None;
    let mut out = CellOutput {
        rows: Vec::with_capacity(cfg.policies.len()),
        traces: Vec::new(),
    };
    for (policy, prep) in cfg.policies.iter().zip(prepared) {
        let mut row = ExperimentRow {
            experiment: cfg.name.clone(),
            policy: policy.label().to_string(),
            n,
            replication: rep,
            seed: cfg.seed,
            metrics: None,
            breach: false,
            telescoping_residual: None,
            error: None,
        };
        let run = instantiate(cfg, policy, prep, n).and_then(|mut p| simulate(&buyers, p.as_mut()));
        match run {
            Err(e) => row.error = Some(e.to_string()),
            Ok(trace) if trace.breached() => {
                row.breach = true;
                if cfg.write_traces && rep == 0 {
                    out.traces.push(TraceDump {
                        policy: row.policy.clone(),
                        n,
                        trace,
                    });
                }
            }
            Ok(trace) => {
                let value = u_star
                    .get_or_insert_with(|| {
                        oracle_value(&cfg.distribution, &buyers, &capacities, &cfg.oracle).map_err(|e| e.to_string())
                    })
                    .clone();
                match value {
                    Ok(v) => {
                        row.metrics = Some(MetricsReport::from_trace(&trace, v, &capacities));
                        if let PolicyConfig::RpAdditive { gamma_scale, .. } = policy {
                            row.telescoping_residual =
                                telescoping_residual(&trace, &capacities, gamma_scale / (n as f64).sqrt());
                        }
                    }
                    Err(e) => row.error = Some(format!("oracle: {e}")),
                }
                if cfg.write_traces && rep == 0 {
                    out.traces.push(TraceDump {
                        policy: row.policy.clone(),
                        n,
                        trace,
                    });
                }
            }
        }
        out.rows.push(row);
    }
    out
}

/// Worker count from `FISHER_LAB_THREADS`, or `None` for the rayon default.
pub fn configured_threads() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&k| k > 0)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with_threads(cfg, configured_threads())
}

pub fn run_experiment_with_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentReport> {
    cfg.validate()?;
    let prepared = cfg
        .policies
        .iter()
        .enumerate()
        .map(|(i, p)| prepare(cfg, i, p))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize)> = cfg
        .n_values
        .iter()
        .flat_map(|&n| (0..cfg.replications).map(move |r| (n, r)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = threads {
        builder = builder.num_threads(k);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::invalid(THREADS_ENV, e.to_string()))?;
    let outputs: Vec<CellOutput> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(n, rep)| run_cell(cfg, &prepared, n, rep))
            .collect()
    });
    let mut rows = Vec::with_capacity(cells.len() * cfg.policies.len());
    let mut traces = Vec::new();
    for o in outputs {
        rows.extend(o.rows);
        traces.extend(o.traces);
    }
    let (aggregates, slopes) = aggregate(cfg, &rows);
    Ok(ExperimentReport {
        experiment: cfg.name.clone(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        rows,
        aggregates,
        slopes,
        traces,
    })
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(std))
}

fn slope_over(points: Vec<(f64, Option<f64>)>) -> Option<LinearFit> {
    let pts: Vec<(f64, f64)> = points.into_iter().filter_map(|(n, v)| v.map(|v| (n, v))).collect();
    fit_loglog_slope(&pts).ok()
}

fn aggregate(cfg: &ExperimentConfig, rows: &[ExperimentRow]) -> (Vec<AggregateRow>, Vec<PolicySlopes>) {
    let mut aggregates = Vec::new();
    let mut slopes = Vec::new();
    for policy in &cfg.policies {
        let label = policy.label();
        let mut per_n = Vec::new();
        for &n in &cfg.n_values {
            let cell: Vec<&ExperimentRow> = rows.iter().filter(|r| r.policy == label && r.n == n).collect();
            let ok: Vec<&MetricsReport> = cell.iter().filter_map(|r| r.metrics.as_ref()).collect();
            let regrets: Vec<f64> = ok.iter().map(|m| m.regret).collect();
            let viols: Vec<f64> = ok.iter().map(|m| m.violation_l2).collect();
            let (mean_regret, std_regret) = mean_std(&regrets);
            let (mean_violation_l2, std_violation_l2) = mean_std(&viols);
            let breaches = cell.iter().filter(|r| r.breach).count();
            per_n.push(AggregateRow {
                experiment: cfg.name.clone(),
                policy: label.to_string(),
                n,
                mean_regret,
                std_regret,
                mean_violation_l2,
                std_violation_l2,
                breach_rate: if cell.is_empty() { 0.0 } else { breaches as f64 / cell.len() as f64 },
                slope_regret: None,
                slope_violation: None,
            });
        }
        let regret = slope_over(per_n.iter().map(|a| (a.n as f64, a.mean_regret)).collect());
        let violation = slope_over(per_n.iter().map(|a| (a.n as f64, a.mean_violation_l2)).collect());
        for a in &mut per_n {
            a.slope_regret = regret.map(|f| f.slope);
            a.slope_violation = violation.map(|f| f.slope);
        }
        aggregates.extend(per_n);
        slopes.push(PolicySlopes {
            policy: label.to_string(),
            regret,
            violation,
        });
    }
    (aggregates, slopes)
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn rows_csv(report: &ExperimentReport) -> String {
    let mut s = String::from(ROWS_HEADER);
    s.push('\n');
    for r in &report.rows {
        let m = r.metrics.as_ref();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.policy,
            r.n,
            r.replication,
            r.seed,
            opt(m.map(|m| m.regret)),
            opt(m.map(|m| m.u_star)),
            opt(m.map(|m| m.u_online)),
            opt(m.map(|m| m.violation_l2)),
            opt(m.map(|m| m.violation_linf)),
            opt(m.map(|m| m.nsw_ratio)),
            opt(m.map(|m| m.max_price)),
            opt(m.map(|m| m.min_price)),
            m.and_then(|m| m.tau).map(|t| t.to_string()).unwrap_or_default(),
            r.breach,
        );
    }
    s
}

pub fn aggregate_csv(report: &ExperimentReport) -> String {
    let mut s = String::from(AGGREGATE_HEADER);
    s.push('\n');
    for a in &report.aggregates {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            a.experiment,
            a.policy,
            a.n,
            opt(a.mean_regret),
            opt(a.std_regret),
            opt(a.mean_violation_l2),
            opt(a.std_violation_l2),
            num(a.breach_rate),
            opt(a.slope_regret),
            opt(a.slope_violation),
        );
    }
    s
}

/// Per-step trace: prices, allocation, and the scaled price change
/// `|p^{t+1} - p^t|_2 (n - t)`.
pub fn trace_csv(dump: &TraceDump) -> String {
    let tr = &dump.trace;
    let m = tr.cumulative.len();
    let mut s = String::from("t");
    for j in 1..=m {
        let _ = write!(s, ",p_{j}");
    }
    for j in 1..=m {
        let _ = write!(s, ",x_{j}");
    }
    s.push_str(",dp_l2,dp_l2_scaled,in_band\n");
    let tau = tr.tau();
    for (i, r) in tr.records.iter().enumerate() {
        let _ = write!(s, "{}", r.t);
        for p in r.price.iter() {
            let _ = write!(s, ",{p}");
        }
        for x in &r.allocation {
            let _ = write!(s, ",{x}");
        }
        let next = tr.records.get(i + 1).map(|q| &q.price).or(tr.final_price.as_ref());
        match next {
            Some(q) => {
                let diff: Vec<f64> = q.iter().zip(r.price.iter()).map(|(a, b)| a - b).collect();
                let dp = norms(&diff).0;
                let left = dump.n.saturating_sub(r.t);
                let _ = write!(s, ",{dp},{}", dp * left as f64);
            }
            None => s.push_str(",,"),
        }
        let in_band = tau.map_or(true, |tau| r.t + 1 < tau);
        let _ = writeln!(s, ",{in_band}");
    }
    s
}

/// Write the rows and aggregate CSVs (and traces, if collected) into `dir`.
/// Existing files are left untouched unless `force` is set.
pub fn write_report(report: &ExperimentReport, dir: &Path, force: bool) -> Result<Vec<PathBuf>> {
    let mut files = vec![
        (dir.join(format!("{}_rows.csv", report.experiment)), rows_csv(report)),
        (dir.join(format!("{}_aggregate.csv", report.experiment)), aggregate_csv(report)),
    ];
    for t in &report.traces {
        files.push((
            dir.join(format!("{}_{}_n{}_trace.csv", report.experiment, t.policy, t.n)),
            trace_csv(t),
        ));
    }
    if !force {
        if let Some((path, _)) = files.iter().find(|(p, _)| p.exists()) {
            return Err(Error::invalid(
                "out",
                format!("{} already exists; pass --force to overwrite", path.display()),
            ));
        }
    }
    std::fs::create_dir_all(dir)?;
    for (path, body) in &files {
        std::fs::write(path, body)?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

const F2_NS: [usize; 6] = [100, 200, 500, 1000, 2000, 5000];

fn config(name: &str, distribution: DistributionSpec, d: Vec<f64>, n_values: Vec<usize>, replications: usize, policies: Vec<PolicyConfig>) -> ExperimentConfig {
    ExperimentConfig {
        name: name.to_string(),
        distribution,
        per_user_capacity: d,
        n_values,
        replications,
        policies,
        seed: 1,
        oracle: OracleConfig::default(),
        output: None,
        write_traces: false,
    }
}

fn rp(rule: UpdateRule, label: Option<&str>, gamma_scale: f64, p1: InitialPrice) -> PolicyConfig {
    let label = label.map(str::to_string);
    match rule {
        UpdateRule::Additive => PolicyConfig::RpAdditive { label, gamma_scale, p1 },
        UpdateRule::Multiplicative => PolicyConfig::RpMultiplicative { label, gamma_scale, p1 },
    }
}

/// Configuration of a named experiment.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let f2 = || (f2_benchmark_spec(), f2_per_user_capacity());
    let ce = || (counterexample_spec(0.0), counterexample_per_user_capacity());
    Ok(match name {
        "fig_theory_bounds" => {
            let (s, d) = f2();
            config(name, s, d, F2_NS.to_vec(), 30, vec![rp(UpdateRule::Additive, None, 0.01, InitialPrice::Ones)])
        }
        "fig_comparison" => {
            let (s, d) = f2();
            config(
                name,
                s,
                d,
                F2_NS.to_vec(),
                30,
                vec![
                    rp(UpdateRule::Additive, None, 0.01, InitialPrice::Ones),
                    PolicyConfig::StaticEq {
                        label: None,
                        source: StaticSource::default(),
                    },
                    PolicyConfig::DynamicSaa {
                        label: None,
                        delta: 2.0,
                        p1: InitialPrice::Ones,
                    },
                ],
            )
        }
        "fig_static_vs_adaptive" => {
            let (s, d) = ce();
            config(
                name,
                s,
                d,
                vec![100, 400, 1600, 6400, 20000],
                300,
                vec![
                    PolicyConfig::StaticEq {
                        label: None,
                        source: StaticSource::CertaintyEquivalent,
                    },
                    PolicyConfig::AdaptiveCe {
                        label: None,
                        band_fraction: 0.5,
                        mode: ConsumptionMode::AllocationFromCe,
                    },
                ],
            )
        }
        "fig_add_vs_mult" => {
            let (s, d) = f2();
            let mut policies = Vec::new();
            for (tag, scale) in [("g1", 1.0), ("g0.01", 0.01)] {
                policies.push(rp(UpdateRule::Additive, Some(&format!("rp_additive_{tag}")), scale, InitialPrice::Ones));
                policies.push(rp(
                    UpdateRule::Multiplicative,
                    Some(&format!("rp_multiplicative_{tag}")),
                    scale,
                    InitialPrice::Ones,
                ));
            }
            config(name, s, d, vec![100, 200, 500, 1000, 2000, 3500], 30, policies)
        }
        "fig_price_positivity" => {
            let (s, d) = ce();
            config(
                name,
                s,
                d,
                F2_NS.to_vec(),
                300,
                vec![rp(UpdateRule::Additive, None, 0.01, InitialPrice::Distribution)],
            )
        }
        "fig_lipschitz" => {
            let (s, d) = ce();
            let mut c = config(
                name,
                s,
                d,
                vec![10000],
                1,
                vec![PolicyConfig::AdaptiveCe {
                    label: None,
                    band_fraction: 0.5,
                    mode: ConsumptionMode::AllocationFromCe,
                }],
            );
            c.write_traces = true;
            c
        }
        other => {
            return Err(Error::invalid(
                "preset",
                format!("unknown preset {other:?}; expected one of {}", PRESETS.join(", ")),
            ))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tiny(policies: Vec<PolicyConfig>) -> ExperimentConfig {
        let mut c = config(
            "tiny",
            counterexample_spec(0.0),
            counterexample_per_user_capacity(),
            vec![10, 20],
            3,
            policies,
        );
        c.seed = 5;
        c
    }

    fn fixed_half() -> PolicyConfig {
        PolicyConfig::StaticEq {
            label: None,
            source: StaticSource::Fixed { prices: vec![0.5, 0.5] },
        }
    }

    #[test]
    fn static_half_price_counterexample_run() {
        let mut pol = StaticPolicy::new(PriceVector::uniform(2, 0.5)).unwrap();
        let out = run_simulation(
            &counterexample_spec(0.0),
            100,
            &[100.0, 100.0],
            &mut pol,
            RngStream::new(3, 0),
            &OracleConfig::default(),
        )
        .unwrap();
        let m = out.metrics.unwrap();
        assert_abs_diff_eq!(m.u_online, 100.0 * 2f64.ln(), epsilon = 1e-9);
        assert!(m.regret <= 1e-9);
        assert!(m.regret >= -100.0 * 2f64.ln());
        let again = run_simulation(
            &counterexample_spec(0.0),
            100,
            &[100.0, 100.0],
            &mut StaticPolicy::new(PriceVector::uniform(2, 0.5)).unwrap(),
            RngStream::new(3, 0),
            &OracleConfig::default(),
        )
        .unwrap();
        assert_eq!(out.trace, again.trace);
    }

    #[test]
    fn closed_form_matches_iterative_oracle() {
        let spec = counterexample_spec(0.0);
        let buyers = sample_users(&spec, 40, &mut RngStream::new(8, 1).rng());
        let caps = [40.0, 40.0];
        let cf = oracle_value(&spec, &buyers, &caps, &OracleConfig::default()).unwrap();
        let it = oracle_value(
            &spec,
            &buyers,
            &caps,
            &OracleConfig {
                force_iterative: true,
                ..OracleConfig::default()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(cf, it, epsilon = 1e-6 * 40.0);
    }

    #[test]
    fn experiment_shape_and_means() {
        let report = run_experiment_with_threads(&tiny(vec![fixed_half()]), Some(1)).unwrap();
        assert_eq!(report.rows.len(), 6);
        assert_eq!(report.aggregates.len(), 2);
        for a in &report.aggregates {
            let rows: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| r.n == a.n)
                .map(|r| r.metrics.as_ref().unwrap().regret)
                .collect();
            assert_eq!(a.mean_regret.unwrap(), rows.iter().sum::<f64>() / rows.len() as f64);
        }
    }

    #[test]
    fn serial_and_parallel_agree() {
        let cfg = tiny(vec![
            fixed_half(),
            rp(UpdateRule::Additive, None, 0.01, InitialPrice::Distribution),
        ]);
        let a = run_experiment_with_threads(&cfg, Some(1)).unwrap();
        let b = run_experiment_with_threads(&cfg, Some(3)).unwrap();
        assert_eq!(rows_csv(&a), rows_csv(&b));
        assert_eq!(aggregate_csv(&a), aggregate_csv(&b));
    }

    #[test]
    fn identical_rows_average_to_the_row() {
        let mut cfg = tiny(vec![fixed_half()]);
        cfg.distribution = DistributionSpec::Discrete {
            types: vec![BuyerProfile::new(1.0, vec![1.0, 1.0])],
            probs: vec![1.0],
        };
        let report = run_experiment_with_threads(&cfg, Some(1)).unwrap();
        let first = report.rows[0].metrics.as_ref().unwrap().regret;
        assert_eq!(report.aggregate("static_eq", 10).unwrap().mean_regret, Some(first));
        assert_eq!(report.aggregate("static_eq", 10).unwrap().std_regret, Some(0.0));
    }

    #[test]
    fn breach_rows_are_flagged_and_excluded() {
        let cfg = tiny(vec![rp(
            UpdateRule::Additive,
            None,
            50.0,
            InitialPrice::Fixed { prices: vec![0.05, 0.05] },
        )]);
        let report = run_experiment_with_threads(&cfg, Some(1)).unwrap();
        assert!(report.rows.iter().all(|r| r.breach && r.metrics.is_none()));
        assert_eq!(report.aggregates[0].breach_rate, 1.0);
        assert_eq!(report.aggregates[0].mean_regret, None);
        let csv = rows_csv(&report);
        assert!(csv.lines().nth(1).unwrap().ends_with(",,,,,,,,,,true"));
    }

    #[test]
    fn config_rejects_unknown_keys_and_names_fields() {
        let good = tiny(vec![fixed_half()]).to_json().unwrap();
        assert!(ExperimentConfig::from_json(&good).is_ok());
        let extra = good.replacen("\"name\"", "\"colour\": 1, \"name\"", 1);
        assert!(matches!(ExperimentConfig::from_json(&extra), Err(Error::Json(_))));
        let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
        v["distribution"]["probs"] = serde_json::json!([0.5, 0.4]);
        let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("probs"), "{err}");
        let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
        v["policies"][0]["typo"] = serde_json::json!(1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&good).unwrap();
        v["replications"] = serde_json::json!(0);
        let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("replications"));
    }

    #[test]
    fn adaptive_requires_discrete() {
        let mut cfg = tiny(vec![PolicyConfig::AdaptiveCe {
            label: None,
            band_fraction: 0.5,
            mode: ConsumptionMode::AllocationFromCe,
        }]);
        cfg.distribution = f2_benchmark_spec();
        cfg.per_user_capacity = f2_per_user_capacity();
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("policies[0]"));
    }

    #[test]
    fn presets_match_paper_setup() {
        for name in PRESETS {
            preset(name).unwrap().validate().unwrap();
        }
        let tb = preset("fig_theory_bounds").unwrap();
        assert!(tb.n_values.iter().all(|&n| (100..=5000).contains(&n)));
        assert_eq!(preset("fig_static_vs_adaptive").unwrap().replications, 300);
        assert_eq!(*preset("fig_static_vs_adaptive").unwrap().n_values.last().unwrap(), 20000);
        let am = preset("fig_add_vs_mult").unwrap();
        let mut scales: Vec<f64> = am
            .policies
            .iter()
            .map(|p| match p {
                PolicyConfig::RpAdditive { gamma_scale, .. } | PolicyConfig::RpMultiplicative { gamma_scale, .. } => *gamma_scale,
                _ => panic!("unexpected policy"),
            })
            .collect();
        scales.dedup();
        scales.sort_by(f64::total_cmp);
        scales.dedup();
        assert_eq!(scales, vec![0.01, 1.0]);
        assert!(preset("fig_nothing").is_err());
    }

    #[test]
    fn write_report_respects_force() {
        let report = run_experiment_with_threads(&tiny(vec![fixed_half()]), Some(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("nested");
        let files = write_report(&report, &out, false).unwrap();
        assert_eq!(files.len(), 2);
        assert!(write_report(&report, &out, false).is_err());
        assert!(write_report(&report, &out, true).is_ok());
        let rows = std::fs::read_to_string(&files[0]).unwrap();
        assert!(rows.starts_with(ROWS_HEADER));
        assert_eq!(rows.lines().count(), 7);
    }

    #[test]
    fn trace_csv_has_scaled_changes() {
        let mut cfg = tiny(vec![PolicyConfig::AdaptiveCe {
            label: None,
            band_fraction: 0.5,
            mode: ConsumptionMode::AllocationFromCe,
        }]);
        cfg.write_traces = true;
        cfg.n_values = vec![50];
        let report = run_experiment_with_threads(&cfg, Some(1)).unwrap();
        assert_eq!(report.traces.len(), 1);
        let csv = trace_csv(&report.traces[0]);
        assert!(csv.starts_with("t,p_1,p_2,x_1,x_2,dp_l2,dp_l2_scaled,in_band\n"));
        assert_eq!(csv.lines().count(), 51);
    }
}
