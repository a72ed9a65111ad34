//! Best-response demand of a price-taking buyer with linear utilities.
//!
//! A buyer facing strictly positive prices spends the whole budget on goods
//! that maximize the bang-per-buck ratio `u_j / p_j`.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{BuyerProfile, PriceVector};

/// Relative tolerance under which two bang-per-buck ratios count as tied.
pub const RTOL_TIE: f64 = 1e-12;

/// How to split the budget when several goods share the best ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    #[default]
    LowestIndex,
    UniformSplit,
}

/// Units of each good consumed by one buyer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Allocation(pub Vec<f64>);

impl Allocation {
    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }
}

impl Deref for Allocation {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Allocation {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

fn check_prices(prices: &PriceVector) -> Result<()> {
    match prices.first_nonpositive() {
        Some((good, price)) => Err(Error::NonpositivePrice { good, price }),
        None => Ok(()),
    }
}

/// Goods maximizing `u_j / p_j`, in increasing index order.
pub fn bang_per_buck_set(utilities: &[f64], prices: &PriceVector) -> Result<Vec<usize>> {
    if utilities.len() != prices.len() {
        return Err(Error::Dimension {
            what: "prices",
            expected: utilities.len(),
            got: prices.len(),
        });
    }
    check_prices(prices)?;
    let best = utilities
        .iter()
        .zip(prices.iter())
        .map(|(u, p)| u / p)
        .fold(0.0_f64, f64::max);
    if !(best > 0.0) {
        return Err(Error::ZeroUtility);
    }
    let cutoff = best * (1.0 - RTOL_TIE);
    Ok(utilities
        .iter()
        .zip(prices.iter())
        .enumerate()
        .filter(|(_, (u, p))| *u / *p >= cutoff)
        .map(|(j, _)| j)
        .collect())
}

/// Utility-maximizing affordable bundle. The budget is always exhausted.
pub fn optimal_bundle(buyer: &BuyerProfile, prices: &PriceVector, rule: TieRule) -> Result<Allocation> {
    let set = bang_per_buck_set(&buyer.utilities, prices)?;
    let mut x = vec![0.0; prices.len()];
    match rule {
        TieRule::LowestIndex => {
            let j = set[0];
            x[j] = buyer.budget / prices[j];
        }
        TieRule::UniformSplit => {
            let share = buyer.budget / set.len() as f64;
            for &j in &set {
                x[j] = share / prices[j];
            }
        }
    }
    Ok(Allocation(x))
}

/// Utility of the best response, `w / min_j (p_j / u_j)`.
pub fn indirect_utility(buyer: &BuyerProfile, prices: &PriceVector) -> Result<f64> {
    Ok(buyer.budget / min_price_per_utility(&buyer.utilities, prices)?)
}

/// `min_j p_j / u_j` over goods with `u_j > 0`; this is the buyer's
/// marginal price of utility.
pub fn min_price_per_utility(utilities: &[f64], prices: &PriceVector) -> Result<f64> {
    if utilities.len() != prices.len() {
        return Err(Error::Dimension {
            what: "prices",
            expected: utilities.len(),
            got: prices.len(),
        });
    }
    check_prices(prices)?;
    let beta = utilities
        .iter()
        .zip(prices.iter())
        .filter(|(u, _)| **u > 0.0)
        .map(|(u, p)| p / u)
        .fold(f64::INFINITY, f64::min);
    if beta.is_finite() {
        Ok(beta)
    } else {
        Err(Error::ZeroUtility)
    }
}
