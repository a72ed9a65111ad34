//! Buyer distributions, seeded samplers and the two benchmark families used
//! in the experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{BuyerProfile, CheckLevel, ValidationReport};
use crate::solver::CeInput;

const PROB_TOL: f64 = 1e-9;

/// Distribution of one arriving buyer's `(w, u)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    /// Finite support of buyer types with probabilities `probs`.
    Discrete {
        types: Vec<BuyerProfile>,
        probs: Vec<f64>,
    },
    /// Budget from a finite set, independent of utilities drawn uniformly
    /// per good from `utility_ranges[j] = [lo, hi]`.
    IndependentUniform {
        budgets: Vec<f64>,
        budget_probs: Vec<f64>,
        utility_ranges: Vec<[f64; 2]>,
    },
}

fn check_probs(field: &str, probs: &[f64]) -> Result<()> {
    if let Some(k) = probs.iter().position(|q| !(q.is_finite() && *q >= 0.0)) {
        return Err(Error::invalid(format!("{field}[{k}]"), "must be nonnegative"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::invalid(field, format!("must sum to 1, got {total}")));
    }
    Ok(())
}

impl DistributionSpec {
    pub fn goods(&self) -> usize {
        match self {
            DistributionSpec::Discrete { types, .. } => types.first().map_or(0, |t| t.goods()),
            DistributionSpec::IndependentUniform { utility_ranges, .. } => utility_ranges.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DistributionSpec::Discrete { types, probs } => {
                if types.is_empty() {
                    return Err(Error::invalid("distribution.types", "needs at least one type"));
                }
                if probs.len() != types.len() {
                    return Err(Error::invalid(
                        "distribution.probs",
                        format!("has {} entries for {} types", probs.len(), types.len()),
                    ));
                }
                check_probs("distribution.probs", probs)?;
                let m = types[0].goods();
                for (k, t) in types.iter().enumerate() {
                    if t.goods() != m || m == 0 {
                        return Err(Error::invalid(
                            format!("distribution.types[{k}].utilities"),
                            format!("expected {m} goods"),
                        ));
                    }
                    if !(t.budget.is_finite() && t.budget > 0.0) {
                        return Err(Error::invalid(format!("distribution.types[{k}].budget"), "must be positive"));
                    }
                    if t.utilities.iter().any(|u| !(u.is_finite() && *u >= 0.0)) {
                        return Err(Error::invalid(
                            format!("distribution.types[{k}].utilities"),
                            "must be nonnegative",
                        ));
                    }
                }
            }
            DistributionSpec::IndependentUniform {
                budgets,
                budget_probs,
                utility_ranges,
            } => {
                if budgets.is_empty() || budgets.len() != budget_probs.len() {
                    return Err(Error::invalid(
                        "distribution.budget_probs",
                        "needs one probability per budget value",
                    ));
                }
                check_probs("distribution.budget_probs", budget_probs)?;
                if budgets.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(Error::invalid("distribution.budgets", "must be positive"));
                }
                if utility_ranges.is_empty() {
                    return Err(Error::invalid("distribution.utility_ranges", "needs at least one good"));
                }
                for (j, [lo, hi]) in utility_ranges.iter().enumerate() {
                    if !(lo.is_finite() && hi.is_finite() && *lo >= 0.0 && lo <= hi) {
                        return Err(Error::invalid(
                            format!("distribution.utility_ranges[{j}]"),
                            "must satisfy 0 <= lo <= hi",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn mean_budget(&self) -> f64 {
        match self {
            DistributionSpec::Discrete { types, probs } => {
                types.iter().zip(probs).map(|(t, q)| t.budget * q).sum()
            }
            DistributionSpec::IndependentUniform {
                budgets, budget_probs, ..
            } => budgets.iter().zip(budget_probs).map(|(w, q)| w * q).sum(),
        }
    }

    /// Smallest budget in the support.
    pub fn min_budget(&self) -> f64 {
        match self {
            DistributionSpec::Discrete { types, probs } => types
                .iter()
                .zip(probs)
                .filter(|(_, q)| **q > 0.0)
                .map(|(t, _)| t.budget)
                .fold(f64::INFINITY, f64::min),
            DistributionSpec::IndependentUniform {
                budgets, budget_probs, ..
            } => budgets
                .iter()
                .zip(budget_probs)
                .filter(|(_, q)| **q > 0.0)
                .map(|(w, _)| *w)
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Certainty-equivalent input for a discrete spec.
    pub fn ce_input(&self, per_user_capacity: &[f64]) -> Result<CeInput> {
        match self {
            DistributionSpec::Discrete { types, probs } => {
                CeInput::new(types.clone(), probs.clone(), per_user_capacity.to_vec())
            }
            DistributionSpec::IndependentUniform { .. } => Err(Error::invalid(
                "distribution",
                "the certainty-equivalent program needs a discrete distribution",
            )),
        }
    }

    /// Whether this is the two-type unit-budget counterexample family with
    /// `epsilon = 0`, for which the offline optimum has a closed form.
    pub fn is_counterexample(&self) -> bool {
        *self == counterexample_spec(0.0)
    }
}

/// Identifies one independent random stream: the pair fully determines the
/// sample sequence, regardless of how many other streams exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn pick<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &q) in probs.iter().enumerate() {
        if q <= 0.0 {
            continue;
        }
        acc += q;
        last = k;
        if r < acc {
            return k;
        }
    }
    last
}

/// Draw one buyer. Discrete specs return exact copies of a support type,
/// so type matching downstream can use equality.
pub fn sample_user<R: Rng + ?Sized>(spec: &DistributionSpec, rng: &mut R) -> BuyerProfile {
    match spec {
        DistributionSpec::Discrete { types, probs } => types[pick(probs, rng)].clone(),
        DistributionSpec::IndependentUniform {
            budgets,
            budget_probs,
            utility_ranges,
        } => {
            let budget = budgets[pick(budget_probs, rng)];
            let utilities = utility_ranges
                .iter()
                .map(|[lo, hi]| lo + (hi - lo) * rng.gen::<f64>())
                .collect();
            BuyerProfile { budget, utilities }
        }
    }
}

pub fn sample_users<R: Rng + ?Sized>(spec: &DistributionSpec, n: usize, rng: &mut R) -> Vec<BuyerProfile> {
    (0..n).map(|_| sample_user(spec, rng)).collect()
}

/// Two goods, unit budgets, utility `(1, eps)` or `(eps, 1)` with
/// probability one half each. `eps = 0` is the static-pricing lower-bound
/// instance; pair it with capacities `c = (n, n)`.
pub fn counterexample_spec(eps: f64) -> DistributionSpec {
    DistributionSpec::Discrete {
        types: vec![
            BuyerProfile::new(1.0, vec![1.0, eps]),
            BuyerProfile::new(1.0, vec![eps, 1.0]),
        ],
        probs: vec![0.5, 0.5],
    }
}

pub fn counterexample_per_user_capacity() -> Vec<f64> {
    vec![1.0, 1.0]
}

/// Five goods, budgets in {2, 5, 10} with equal probability, utilities
/// i.i.d. uniform on [5, 10].
pub fn f2_benchmark_spec() -> DistributionSpec {
    DistributionSpec::IndependentUniform {
        budgets: vec![2.0, 5.0, 10.0],
        budget_probs: vec![1.0 / 3.0; 3],
        utility_ranges: vec![[5.0, 10.0]; 5],
    }
}

/// Capacity per user of the five-good benchmark (capacity `10 n` per good).
pub fn f2_per_user_capacity() -> Vec<f64> {
    vec![10.0; 5]
}

fn x_log_x(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Offline optimum of a counterexample realization with `s` buyers of the
/// first type: `n log n - s log s - (n - s) log(n - s)`, zero at the ends.
pub fn closed_form_optimum_counterexample(n: usize, s: usize) -> f64 {
    assert!(s <= n, "s = {s} exceeds n = {n}");
    if s == 0 || s == n {
        return 0.0;
    }
    let (lo, hi) = (s.min(n - s), s.max(n - s));
    x_log_x(n as f64) - x_log_x(hi as f64) - x_log_x(lo as f64)
}

/// Symbolic assumption check on the spec itself (all-goods-demanded and
/// strictly positive support), as opposed to a check on samples.
pub fn check_assumptions(spec: &DistributionSpec) -> ValidationReport {
    match spec {
        DistributionSpec::Discrete { types, probs } => {
            let support: Vec<(f64, &[f64])> = types
                .iter()
                .zip(probs)
                .filter(|(_, q)| **q > 0.0)
                .map(|(t, _)| (t.budget, t.utilities.as_slice()))
                .collect();
            ValidationReport::build(spec.goods(), CheckLevel::Both, support.into_iter())
        }
        DistributionSpec::IndependentUniform {
            budgets,
            budget_probs,
            utility_ranges,
        } => {
            // Worst and best points of the support stand in for it.
            let min_w = budgets
                .iter()
                .zip(budget_probs)
                .filter(|(_, q)| **q > 0.0)
                .map(|(w, _)| *w)
                .fold(f64::INFINITY, f64::min);
            let lows: Vec<f64> = utility_ranges.iter().map(|r| r[0]).collect();
            let highs: Vec<f64> = utility_ranges.iter().map(|r| r[1]).collect();
            let mut worst = ValidationReport::build(
                spec.goods(),
                CheckLevel::Assumption3,
                std::iter::once((min_w, lows.as_slice())),
            );
            let best = ValidationReport::build(
                spec.goods(),
                CheckLevel::Assumption1,
                std::iter::once((min_w, highs.as_slice())),
            );
            worst.good_supported = best.good_supported;
            worst.violations.retain(|v| !matches!(v, crate::market::Violation::DegenerateBuyer { .. }));
            worst.violations.extend(best.violations);
            worst
        }
    }
}
