//! Regret, capacity violation, Nash-welfare ratio and scaling fits.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{BuyerProfile, PriceVector};
use crate::policies::PolicyEvent;
use crate::solver::EquilibriumSolution;

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    pub price: PriceVector,
    pub allocation: Vec<f64>,
    /// Index of the buyer in [`SimulationTrace::buyers`].
    pub buyer: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationTrace {
    pub records: Vec<StepRecord>,
    pub buyers: Vec<BuyerProfile>,
    pub cumulative: Vec<f64>,
    /// Price the policy would post after the last buyer.
    pub final_price: Option<PriceVector>,
    pub events: Vec<PolicyEvent>,
}

impl SimulationTrace {
    pub fn new(m: usize) -> Self {
        Self {
            cumulative: vec![0.0; m],
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, price: PriceVector, buyer: BuyerProfile, allocation: Vec<f64>) {
        for (c, x) in self.cumulative.iter_mut().zip(&allocation) {
            *c += x;
        }
        self.records.push(StepRecord {
            t: self.records.len() + 1,
            price,
            allocation,
            buyer: self.buyers.len(),
        });
        self.buyers.push(buyer);
    }

    pub fn tau(&self) -> Option<usize> {
        self.events.iter().find_map(|e| match e {
            PolicyEvent::Switched { tau } => Some(*tau),
            _ => None,
        })
    }

    pub fn breached(&self) -> bool {
        crate::policies::breached(&self.events)
    }

    /// Smallest and largest price component posted over the run.
    pub fn price_range(&self) -> (f64, f64) {
        self.records
            .iter()
            .flat_map(|r| r.price.iter().copied())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p), hi.max(p)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub u_online: f64,
    pub u_star: f64,
    pub regret: f64,
    pub violation_l2: f64,
    pub violation_linf: f64,
    pub nsw_ratio: f64,
    pub max_price: f64,
    pub min_price: f64,
    pub tau: Option<usize>,
}

impl MetricsReport {
    pub fn from_trace(trace: &SimulationTrace, u_star: f64, capacities: &[f64]) -> Self {
        let u_online = online_objective(trace);
        let (violation_l2, violation_linf, _) = constraint_violation(trace, capacities);
        let (min_price, max_price) = trace.price_range();
        Self {
            u_online,
            u_star,
            regret: regret_value(u_star, u_online),
            violation_l2,
            violation_linf,
            nsw_ratio: nsw_ratio(u_star, u_online, trace.len().max(1)),
            max_price,
            min_price,
            tau: trace.tau(),
        }
    }
}

/// `sum_t w_t log(u_t . x_t)`; `-inf` as soon as one buyer gets nothing.
pub fn online_objective(trace: &SimulationTrace) -> f64 {
    trace
        .records
        .iter()
        .map(|r| {
            let b = &trace.buyers[r.buyer];
            b.budget * b.utility_of(&r.allocation).ln()
        })
        .sum()
}

/// Buyers whose realized utility is zero, which drive the objective to `-inf`.
pub fn zero_utility_steps(trace: &SimulationTrace) -> Vec<usize> {
    trace
        .records
        .iter()
        .filter(|r| !(trace.buyers[r.buyer].utility_of(&r.allocation) > 0.0))
        .map(|r| r.t)
        .collect()
}

pub fn regret(trace: &SimulationTrace, oracle: &EquilibriumSolution) -> f64 {
    regret_value(oracle.primal_value, online_objective(trace))
}

pub fn regret_value(u_star: f64, u_online: f64) -> f64 {
    u_star - u_online
}

/// Positive part of `sum_t x_t - c`, with its l2 and linf norms.
pub fn constraint_violation(trace: &SimulationTrace, capacities: &[f64]) -> (f64, f64, Vec<f64>) {
    let excess: Vec<f64> = trace
        .cumulative
        .iter()
        .zip(capacities)
        .map(|(x, c)| (x - c).max(0.0))
        .collect();
    let (l2, linf) = norms(&excess);
    (l2, linf, excess)
}

pub(crate) fn norms(v: &[f64]) -> (f64, f64) {
    let l2 = v.iter().map(|e| e * e).sum::<f64>().sqrt();
    let linf = v.iter().fold(0.0_f64, |a, e| a.max(e.abs()));
    (l2, linf)
}

/// `NSW* / NSW = exp((U* - U) / n)` for equal unit budgets.
pub fn nsw_ratio(oracle_value: f64, online_value: f64, n: usize) -> f64 {
    ((oracle_value - online_value) / n as f64).exp()
}

/// `V_t = p^t . d` for every recorded step, followed by the final price.
pub fn potential_series(trace: &SimulationTrace, d: &[f64]) -> Result<Vec<f64>> {
    if d.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("d", "potential needs strictly positive per-user capacities"));
    }
    let mut out: Vec<f64> = trace.records.iter().map(|r| r.price.value_of(d)).collect();
    if let Some(p) = &trace.final_price {
        out.push(p.value_of(d));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn fit_linear(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.len() < 2 {
        return Err(Error::invalid("points", "need at least two points"));
    }
    let k = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let my = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("points", "x values must not all coincide"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(LinearFit { slope, intercept, r2 })
}

/// Least-squares fit of `log value` on `log n`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<LinearFit> {
    if points.len() < 3 {
        return Err(Error::invalid("points", "need at least three points"));
    }
    if points.iter().any(|(n, v)| !(*n > 0.0 && *v > 0.0)) {
        return Err(Error::invalid("points", "log-log fit needs positive n and values"));
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|(n, v)| (n.ln(), v.ln())).collect();
    fit_linear(&logs)
}
