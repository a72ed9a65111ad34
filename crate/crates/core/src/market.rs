//! Domain types shared by every other module: buyers, market instances,
//! price vectors and instance validation.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One arriving user: a budget of artificial currency and a linear utility
/// per unit of each good.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuyerProfile {
    pub budget: f64,
    pub utilities: Vec<f64>,
}

impl BuyerProfile {
    pub fn new(budget: f64, utilities: Vec<f64>) -> Self {
        Self { budget, utilities }
    }

    pub fn goods(&self) -> usize {
        self.utilities.len()
    }

    pub fn has_positive_utility(&self) -> bool {
        self.utilities.iter().any(|&u| u > 0.0)
    }

    /// Linear utility `u . x`.
    pub fn utility_of(&self, bundle: &[f64]) -> f64 {
        self.utilities.iter().zip(bundle).map(|(u, x)| u * x).sum()
    }

    fn check(&self, index: usize, m: usize) -> Result<()> {
        if self.utilities.len() != m {
            return Err(Error::Dimension {
                what: "buyer utilities",
                expected: m,
                got: self.utilities.len(),
            });
        }
        if !(self.budget.is_finite() && self.budget > 0.0) {
            return Err(Error::invalid(
                format!("buyers[{index}].budget"),
                format!("must be positive and finite, got {}", self.budget),
            ));
        }
        if let Some(j) = self
            .utilities
            .iter()
            .position(|u| !(u.is_finite() && *u >= 0.0))
        {
            return Err(Error::invalid(
                format!("buyers[{index}].utilities[{j}]"),
                format!("must be nonnegative and finite, got {}", self.utilities[j]),
            ));
        }
        Ok(())
    }
}

/// Per-good prices. Nonnegativity is deliberately not enforced: additive
/// price updates may cross zero and that event is detected downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceVector(pub Vec<f64>);

impl PriceVector {
    pub fn new(prices: Vec<f64>) -> Self {
        Self(prices)
    }

    pub fn uniform(m: usize, value: f64) -> Self {
        Self(vec![value; m])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn value_of(&self, bundle: &[f64]) -> f64 {
        self.0.iter().zip(bundle).map(|(p, x)| p * x).sum()
    }

    /// First good whose price is not strictly positive.
    pub fn first_nonpositive(&self) -> Option<(usize, f64)> {
        self.0
            .iter()
            .copied()
            .enumerate()
            .find(|&(_, p)| !(p > 0.0))
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Deref for PriceVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for PriceVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for PriceVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// A realized market: `m` goods with capacities `c` and a sequence of `n`
/// buyers. The per-user capacity `d = c / n` is derived on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "InstanceFile", into = "InstanceFile")]
pub struct MarketInstance {
    m: usize,
    n: usize,
    capacities: Vec<f64>,
    per_user_capacity: Vec<f64>,
    buyers: Vec<BuyerProfile>,
}

/// On-disk layout of an instance. Field order is fixed for golden files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    m: usize,
    n: usize,
    capacities: Vec<f64>,
    buyers: Vec<BuyerProfile>,
}

impl TryFrom<InstanceFile> for MarketInstance {
    type Error = Error;

    fn try_from(file: InstanceFile) -> Result<Self> {
        if file.capacities.len() != file.m {
            return Err(Error::Dimension {
                what: "capacities",
                expected: file.m,
                got: file.capacities.len(),
            });
        }
        if file.buyers.len() != file.n {
            return Err(Error::Dimension {
                what: "buyers",
                expected: file.n,
                got: file.buyers.len(),
            });
        }
        MarketInstance::new(file.capacities, file.buyers)
    }
}

impl From<MarketInstance> for InstanceFile {
    fn from(inst: MarketInstance) -> Self {
        InstanceFile {
            m: inst.m,
            n: inst.n,
            capacities: inst.capacities,
            buyers: inst.buyers,
        }
    }
}

impl MarketInstance {
    pub fn new(capacities: Vec<f64>, buyers: Vec<BuyerProfile>) -> Result<Self> {
        let m = capacities.len();
        let n = buyers.len();
        if m == 0 {
            return Err(Error::invalid("capacities", "market needs at least one good"));
        }
        if n == 0 {
            return Err(Error::invalid("buyers", "market needs at least one buyer"));
        }
        if let Some(j) = capacities.iter().position(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::invalid(
                format!("capacities[{j}]"),
                format!("must be positive and finite, got {}", capacities[j]),
            ));
        }
        for (i, b) in buyers.iter().enumerate() {
            b.check(i, m)?;
        }
        let per_user_capacity = capacities.iter().map(|c| c / n as f64).collect();
        Ok(Self {
            m,
            n,
            capacities,
            per_user_capacity,
            buyers,
        })
    }

    /// Instance whose capacities are `n * d`.
    pub fn from_per_user_capacity(per_user: &[f64], buyers: Vec<BuyerProfile>) -> Result<Self> {
        let n = buyers.len() as f64;
        Self::new(per_user.iter().map(|d| d * n).collect(), buyers)
    }

    pub fn goods(&self) -> usize {
        self.m
    }

    pub fn users(&self) -> usize {
        self.n
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn per_user_capacity(&self) -> &[f64] {
        &self.per_user_capacity
    }

    pub fn buyers(&self) -> &[BuyerProfile] {
        &self.buyers
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckLevel {
    /// Every good has a buyer with positive utility for it.
    Assumption1,
    /// Budgets and all utilities strictly positive.
    Assumption3,
    Both,
}

impl CheckLevel {
    fn support(self) -> bool {
        matches!(self, CheckLevel::Assumption1 | CheckLevel::Both)
    }

    fn positivity(self) -> bool {
        matches!(self, CheckLevel::Assumption3 | CheckLevel::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnsupportedGood { good: usize },
    ZeroUtility { buyer: usize, good: usize },
    NonpositiveBudget { buyer: usize },
    DegenerateBuyer { buyer: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    /// Indexed by good: some buyer (or type) values it positively.
    pub good_supported: Vec<bool>,
    /// Indexed by buyer (or type): budget and every utility strictly positive.
    pub buyer_positive: Vec<bool>,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub(crate) fn build<'a>(
        m: usize,
        level: CheckLevel,
        profiles: impl Iterator<Item = (f64, &'a [f64])>,
    ) -> Self {
        let mut good_supported = vec![false; m];
        let mut buyer_positive = Vec::new();
        let mut violations = Vec::new();
        for (i, (budget, utilities)) in profiles.enumerate() {
            for (j, &u) in utilities.iter().enumerate() {
                if u > 0.0 {
                    good_supported[j] = true;
                }
            }
            buyer_positive.push(budget > 0.0 && utilities.iter().all(|&u| u > 0.0));
            if !utilities.iter().any(|&u| u > 0.0) {
                violations.push(Violation::DegenerateBuyer { buyer: i });
            }
            if level.positivity() {
                if !(budget > 0.0) {
                    violations.push(Violation::NonpositiveBudget { buyer: i });
                }
                for (j, &u) in utilities.iter().enumerate() {
                    if !(u > 0.0) {
                        violations.push(Violation::ZeroUtility { buyer: i, good: j });
                    }
                }
            }
        }
        if level.support() {
            for (j, &ok) in good_supported.iter().enumerate() {
                if !ok {
                    violations.push(Violation::UnsupportedGood { good: j });
                }
            }
        }
        Self {
            good_supported,
            buyer_positive,
            violations,
        }
    }
}

/// Report which distributional assumptions the realized buyers satisfy.
/// Never fails and never mutates.
pub fn validate_instance(instance: &MarketInstance, level: CheckLevel) -> ValidationReport {
    ValidationReport::build(
        instance.m,
        level,
        instance
            .buyers
            .iter()
            .map(|b| (b.budget, b.utilities.as_slice())),
    )
}

/// Rescale to unit capacities: `u'_tj = u_tj * c_j`, so that an allocation
/// `x'_tj = x_tj / c_j` of the new instance has the same utility. The EG
/// objective is unchanged and prices map back via `p_j = p'_j / c_j`.
pub fn normalize_capacities(instance: &MarketInstance) -> MarketInstance {
    let c = &instance.capacities;
    let buyers = instance
        .buyers
        .iter()
        .map(|b| BuyerProfile {
            budget: b.budget,
            utilities: b.utilities.iter().zip(c).map(|(u, cj)| u * cj).collect(),
        })
        .collect();
    MarketInstance::new(vec![1.0; instance.m], buyers).expect("rescaling preserves validity")
}

/// Map prices of a normalized instance back to the original units.
pub fn denormalize_prices(normalized: &PriceVector, capacities: &[f64]) -> PriceVector {
    PriceVector(normalized.iter().zip(capacities).map(|(p, c)| p / c).collect())
}
