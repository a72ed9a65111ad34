//! Offline oracle for the Eisenberg-Gale program
//!
//! ```text
//! max  sum_t w_t log(u_t . x_t)   s.t.  sum_t x_tj <= c_j,  x >= 0
//! ```
//!
//! The primal is solved by proportional response. Its capacity duals are
//! the equilibrium prices, and every iterate is certified by the duality
//! gap against the unconstrained dual
//!
//! ```text
//! D(p) = sum_t w_t log w_t - sum_t w_t log(min_j p_j / u_tj) + sum_j p_j c_j - sum_t w_t.
//! ```
//!
//! A batch subgradient method on the per-user (sample average) dual is
//! provided as an independent cross-check, and the certainty-equivalent
//! program over a discrete type distribution is reduced to a small EG
//! instance with budgets `q_k w_k`.

use serde::{Deserialize, Serialize};

use crate::buyer::{min_price_per_utility, optimal_bundle, TieRule};
use crate::error::{Error, Result};
use crate::market::{BuyerProfile, MarketInstance, PriceVector};

/// Diminishing step `a / (b + k)` for the subgradient method. `a` is
/// measured in units of `mean(w) / sum_j d_j^2`, the natural price scale of
/// the problem, so the default works across instance sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub a: f64,
    pub b: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self { a: 3.0, b: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub max_iters: usize,
    /// Relative duality gap at which proportional response stops.
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub clear_tol: f64,
    /// Prices at or below this are treated as zero in slackness checks.
    pub price_eps: f64,
    pub step: StepSchedule,
    /// Projection floor applied by the subgradient method.
    pub price_floor: f64,
    /// Relative movement of window-averaged subgradient iterates at which
    /// that method is declared converged.
    pub price_tol: f64,
    /// Window length for averaging subgradient iterates.
    pub window: usize,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            max_iters: 200_000,
            gap_tol: 1e-8,
            feas_tol: 1e-8,
            clear_tol: 1e-6,
            price_eps: 1e-9,
            step: StepSchedule::default(),
            price_floor: 1e-12,
            price_tol: 1e-6,
            window: 1000,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_iters", self.max_iters as f64),
            ("gap_tol", self.gap_tol),
            ("feas_tol", self.feas_tol),
            ("clear_tol", self.clear_tol),
            ("price_eps", self.price_eps),
            ("step.a", self.step.a),
            ("step.b", self.step.b),
            ("price_floor", self.price_floor),
            ("price_tol", self.price_tol),
            ("window", self.window as f64),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("oracle.params.{field}"), "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    /// Row `t` is the bundle of buyer (or type) `t`.
    pub allocations: Vec<Vec<f64>>,
    pub prices: PriceVector,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub iterations: usize,
}

impl EquilibriumSolution {
    pub fn relative_gap(&self) -> f64 {
        self.gap / (1.0 + self.primal_value.abs())
    }

    /// Check feasibility, weak duality, market clearing on positively priced
    /// goods and budget exhaustion against `instance`. Returns a description
    /// of every violated condition.
    pub fn certificate_violations(&self, instance: &MarketInstance, params: &SolverParams) -> Vec<String> {
        let mut out = Vec::new();
        let m = instance.goods();
        let scale = |c: f64| params.feas_tol * c.max(1.0);
        for j in 0..m {
            let used: f64 = self.allocations.iter().map(|x| x[j]).sum();
            let c = instance.capacities()[j];
            if used > c + scale(c) {
                out.push(format!("good {j}: consumption {used} exceeds capacity {c}"));
            }
            if self.prices[j] > params.price_eps && (used - c).abs() > params.clear_tol * c.max(1.0) {
                out.push(format!("good {j}: priced at {} but consumption {used} != {c}", self.prices[j]));
            }
        }
        let gap_tol = params.gap_tol * (1.0 + self.primal_value.abs());
        if self.dual_value < self.primal_value - gap_tol {
            out.push(format!("weak duality: dual {} < primal {}", self.dual_value, self.primal_value));
        }
        for (t, (b, x)) in instance.buyers().iter().zip(&self.allocations).enumerate() {
            if !b.has_positive_utility() {
                continue;
            }
            let spent = self.prices.value_of(x);
            if (spent - b.budget).abs() > params.clear_tol * b.budget.max(1.0) {
                out.push(format!("buyer {t}: spends {spent} of budget {}", b.budget));
            }
        }
        out
    }

    pub fn to_json(&self, instance: &MarketInstance) -> Result<String> {
        #[derive(Serialize)]
        struct Dump<'a> {
            m: usize,
            n: usize,
            capacities: &'a [f64],
            buyers: &'a [BuyerProfile],
            allocations: &'a [Vec<f64>],
            prices: &'a [f64],
            primal_value: f64,
            dual_value: f64,
            gap: f64,
        }
        Ok(serde_json::to_string_pretty(&Dump {
            m: instance.goods(),
            n: instance.users(),
            capacities: instance.capacities(),
            buyers: instance.buyers(),
            allocations: &self.allocations,
            prices: &self.prices,
            primal_value: self.primal_value,
            dual_value: self.dual_value,
            gap: self.gap,
        })?)
    }
}

/// `sum_t w_t log w_t - sum_t w_t log(beta_t) + p . c - sum_t w_t`, with
/// goods nobody values allowed to carry a zero price.
fn dual_value_unchecked(prices: &[f64], budgets: &[f64], utils: &[f64], caps: &[f64]) -> f64 {
    let m = caps.len();
    let mut total: f64 = prices.iter().zip(caps).map(|(p, c)| p * c).sum();
    for (t, &w) in budgets.iter().enumerate() {
        let row = &utils[t * m..(t + 1) * m];
        let beta = row
            .iter()
            .zip(prices)
            .filter(|(u, _)| **u > 0.0)
            .map(|(u, p)| p / u)
            .fold(f64::INFINITY, f64::min);
        total += w * w.ln() - w * beta.ln() - w;
    }
    total
}

/// Objective of the dual program at strictly positive prices.
pub fn dual_objective(prices: &PriceVector, instance: &MarketInstance) -> Result<f64> {
    check_len(prices, instance.goods())?;
    let mut total: f64 = prices.value_of(instance.capacities());
    for b in instance.buyers() {
        let beta = min_price_per_utility(&b.utilities, prices)?;
        total += b.budget * b.budget.ln() - b.budget * beta.ln() - b.budget;
    }
    Ok(total)
}

/// Sample-average dual `D_n(p) = p . d + (1/n) sum_t (w_t log w_t - w_t log beta_t - w_t)`.
pub fn saa_dual_objective(prices: &PriceVector, buyers: &[BuyerProfile], per_user: &[f64]) -> Result<f64> {
    check_len(prices, per_user.len())?;
    if buyers.is_empty() {
        return Err(Error::invalid("buyers", "sample is empty"));
    }
    let mut avg = 0.0;
    for b in buyers {
        let beta = min_price_per_utility(&b.utilities, prices)?;
        avg += b.budget * b.budget.ln() - b.budget * beta.ln() - b.budget;
    }
    Ok(prices.value_of(per_user) + avg / buyers.len() as f64)
}

fn check_len(prices: &PriceVector, m: usize) -> Result<()> {
    if prices.len() != m {
        return Err(Error::Dimension {
            what: "prices",
            expected: m,
            got: prices.len(),
        });
    }
    Ok(())
}

/// Solve the EG program by proportional response:
/// bids `b_tj = w_t u_tj x_tj / (u_t . x_t)`, prices `p_j = sum_t b_tj / c_j`,
/// allocations `x_tj = b_tj / p_j`, until the relative duality gap falls
/// below `params.gap_tol`.
pub fn solve_eg_primal(instance: &MarketInstance, params: &SolverParams) -> Result<EquilibriumSolution> {
    let budgets: Vec<f64> = instance.buyers().iter().map(|b| b.budget).collect();
    let utils: Vec<f64> = instance
        .buyers()
        .iter()
        .flat_map(|b| b.utilities.iter().copied())
        .collect();
    proportional_response(&budgets, &utils, instance.capacities(), params)
}

fn proportional_response(
    budgets: &[f64],
    utils: &[f64],
    caps: &[f64],
    params: &SolverParams,
) -> Result<EquilibriumSolution> {
    const CHECK_EVERY: usize = 8;
    let n = budgets.len();
    let m = caps.len();
    for t in 0..n {
        if !utils[t * m..(t + 1) * m].iter().any(|&u| u > 0.0) {
            return Err(Error::DegenerateBuyer { buyer: t });
        }
    }
    let uniform: Vec<f64> = caps.iter().map(|c| c / n as f64).collect();
    // Bids from the uniform allocation.
    let mut bids = vec![0.0; n * m];
    let reset = |bids: &mut [f64], t: usize| {
        let u = &utils[t * m..(t + 1) * m];
        let value: f64 = u.iter().zip(&uniform).map(|(a, b)| a * b).sum();
        for ((bid, ui), xi) in bids[t * m..(t + 1) * m].iter_mut().zip(u).zip(&uniform) {
            *bid = budgets[t] * ui * xi / value;
        }
    };
    for t in 0..n {
        reset(&mut bids, t);
    }
    let mut prices = vec![0.0; m];
    let mut inv = vec![0.0; m];
    let mut best: Option<EquilibriumSolution> = None;

    for iter in 1..=params.max_iters {
        prices.iter_mut().for_each(|p| *p = 0.0);
        for row in bids.chunks_exact(m) {
            for (p, b) in prices.iter_mut().zip(row) {
                *p += b;
            }
        }
        for ((p, q), c) in prices.iter_mut().zip(inv.iter_mut()).zip(caps) {
            *p /= c;
            *q = if *p > 0.0 { 1.0 / *p } else { 0.0 };
        }

        if iter % CHECK_EVERY == 0 || iter == params.max_iters {
            let mut primal = 0.0;
            for (t, row) in bids.chunks_exact(m).enumerate() {
                let u = &utils[t * m..(t + 1) * m];
                let value: f64 = row.iter().zip(u).zip(&inv).map(|((b, a), q)| a * b * q).sum();
                primal += budgets[t] * value.ln();
            }
            let dual = dual_value_unchecked(&prices, budgets, utils, caps);
            let gap = dual - primal;
            let rel = gap / (1.0 + primal.abs());
            let improved = best.as_ref().map_or(true, |b| gap < b.gap);
            let converged = rel <= params.gap_tol;
            if converged || (improved && (iter % (8 * CHECK_EVERY) == 0 || iter == params.max_iters)) {
                let sol = EquilibriumSolution {
                    allocations: bids
                        .chunks_exact(m)
                        .map(|r| r.iter().zip(&inv).map(|(b, q)| b * q).collect())
                        .collect(),
                    prices: PriceVector(prices.clone()),
                    primal_value: primal,
                    dual_value: dual,
                    gap,
                    iterations: iter,
                };
                if converged {
                    return Ok(sol);
                }
                best = Some(sol);
            }
        }

        // Each buyer rebids in proportion to the utility earned from each good.
        for t in 0..n {
            let u = &utils[t * m..(t + 1) * m];
            let row = &mut bids[t * m..(t + 1) * m];
            let mut value = 0.0;
            for ((b, a), q) in row.iter_mut().zip(u).zip(&inv) {
                *b *= a * q;
                value += *b;
            }
            if value > 0.0 && value.is_finite() {
                let scale = budgets[t] / value;
                // Flush vanishing bids before they turn subnormal.
                let floor = budgets[t] * 1e-200;
                row.iter_mut().for_each(|b| {
                    *b *= scale;
                    if *b < floor {
                        *b = 0.0;
                    }
                });
            } else {
                reset(&mut bids, t);
            }
        }
    }
    let relative_gap = best.as_ref().map_or(f64::INFINITY, |b| b.relative_gap());
    Err(Error::MaxIters {
        iterations: params.max_iters,
        relative_gap,
        best: best.map(Box::new),
    })
}

/// Batch subgradient descent on the sample-average dual, using the full
/// subgradient `d - (1/n) sum_t x_t(p)` and steps `a / (b + k)`. Prices are
/// projected onto `[price_floor, inf)`. Convergence is declared when the
/// averages of two consecutive windows of iterates agree to `price_tol`;
/// the better (in dual value) of the last window average and the best
/// iterate seen is returned.
pub fn solve_dual_subgradient(
    buyers: &[BuyerProfile],
    per_user: &[f64],
    params: &SolverParams,
    p0: &PriceVector,
) -> Result<PriceVector> {
    let m = per_user.len();
    check_len(p0, m)?;
    if buyers.is_empty() {
        return Err(Error::invalid("buyers", "sample is empty"));
    }
    if let Some((good, price)) = p0.first_nonpositive() {
        return Err(Error::NonpositivePrice { good, price });
    }
    if let Some(j) = per_user.iter().position(|d| !(*d > 0.0)) {
        return Err(Error::invalid(format!("per_user_capacity[{j}]"), "must be positive"));
    }
    let n = buyers.len() as f64;
    let mean_budget = buyers.iter().map(|b| b.budget).sum::<f64>() / n;
    let scale = mean_budget / per_user.iter().map(|d| d * d).sum::<f64>();
    let a = params.step.a * scale;

    let mut p = p0.clone();
    let mut demand = vec![0.0; m];
    let mut window_sum = vec![0.0; m];
    let mut prev_avg: Option<Vec<f64>> = None;
    let mut best = (f64::INFINITY, p.clone());

    for k in 0..params.max_iters {
        demand.iter_mut().for_each(|v| *v = 0.0);
        let mut value = p.value_of(per_user);
        for b in buyers {
            let x = optimal_bundle(b, &p, TieRule::UniformSplit)?;
            for (dj, xj) in demand.iter_mut().zip(x.iter()) {
                *dj += xj;
            }
            let beta = min_price_per_utility(&b.utilities, &p)?;
            value += (b.budget * b.budget.ln() - b.budget * beta.ln() - b.budget) / n;
        }
        if value < best.0 {
            best = (value, p.clone());
        }
        let step = a / (params.step.b + k as f64);
        for j in 0..m {
            let g = per_user[j] - demand[j] / n;
            p[j] = (p[j] - step * g).max(params.price_floor);
            window_sum[j] += p[j];
        }
        if (k + 1) % params.window == 0 {
            let avg: Vec<f64> = window_sum.iter().map(|s| s / params.window as f64).collect();
            window_sum.iter_mut().for_each(|s| *s = 0.0);
            if let Some(prev) = &prev_avg {
                let top = avg.iter().copied().fold(0.0, f64::max);
                let moved = avg
                    .iter()
                    .zip(prev)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                if moved <= params.price_tol * top {
                    let avg = PriceVector(avg);
                    let avg_value = saa_dual_objective(&avg, buyers, per_user)?;
                    return Ok(if avg_value <= best.0 { avg } else { best.1 });
                }
            }
            prev_avg = Some(avg);
        }
    }
    Err(Error::MaxIters {
        iterations: params.max_iters,
        relative_gap: f64::NAN,
        best: None,
    })
}

/// Discrete type distribution and per-user capacities defining `CE(d)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeInput {
    pub types: Vec<BuyerProfile>,
    pub probs: Vec<f64>,
    pub per_user_capacity: Vec<f64>,
}

impl CeInput {
    pub fn new(types: Vec<BuyerProfile>, probs: Vec<f64>, per_user_capacity: Vec<f64>) -> Result<Self> {
        if types.len() != probs.len() || types.is_empty() {
            return Err(Error::Dimension {
                what: "probs",
                expected: types.len(),
                got: probs.len(),
            });
        }
        let m = per_user_capacity.len();
        if let Some(k) = types.iter().position(|t| t.goods() != m) {
            return Err(Error::Dimension {
                what: "type utilities",
                expected: m,
                got: types[k].goods(),
            });
        }
        if probs.iter().any(|q| !(*q >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("probs", "must be nonnegative and sum to 1"));
        }
        if per_user_capacity.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::invalid("per_user_capacity", "must be positive"));
        }
        Ok(Self {
            types,
            probs,
            per_user_capacity,
        })
    }

    pub fn with_capacity(&self, per_user_capacity: Vec<f64>) -> Self {
        Self {
            per_user_capacity,
            ..self.clone()
        }
    }
}

/// Solve `CE(d)`: `max sum_k q_k w_k log(u_k . z_k)` subject to
/// `sum_k q_k z_kj <= d_j`. The returned allocations are the per-type
/// consumption vectors `z_k` (zero for types with `q_k = 0`), and the
/// objective values are those of the CE program itself.
pub fn solve_certainty_equivalent(input: &CeInput, params: &SolverParams) -> Result<EquilibriumSolution> {
    let m = input.per_user_capacity.len();
    let active: Vec<usize> = (0..input.types.len()).filter(|&k| input.probs[k] > 0.0).collect();
    for j in 0..m {
        if !active.iter().any(|&k| input.types[k].utilities[j] > 0.0) {
            return Err(Error::UnsupportedGood { good: j });
        }
    }
    let budgets: Vec<f64> = active
        .iter()
        .map(|&k| input.probs[k] * input.types[k].budget)
        .collect();
    let utils: Vec<f64> = active
        .iter()
        .flat_map(|&k| input.types[k].utilities.iter().copied())
        .collect();
    let sol = proportional_response(&budgets, &utils, &input.per_user_capacity, params)?;
    // With y_k = q_k z_k the EG objective exceeds the CE objective by
    // sum_k q_k w_k log q_k.
    let shift: f64 = active
        .iter()
        .zip(&budgets)
        .map(|(&k, wq)| wq * input.probs[k].ln())
        .sum();
    let mut allocations = vec![vec![0.0; m]; input.types.len()];
    for (row, &k) in sol.allocations.iter().zip(&active) {
        allocations[k] = row.iter().map(|y| y / input.probs[k]).collect();
    }
    Ok(EquilibriumSolution {
        allocations,
        prices: sol.prices,
        primal_value: sol.primal_value - shift,
        dual_value: sol.dual_value - shift,
        gap: sol.gap,
        iterations: sol.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn inst(caps: &[f64], buyers: &[(f64, &[f64])]) -> MarketInstance {
        MarketInstance::new(
            caps.to_vec(),
            buyers.iter().map(|(w, u)| BuyerProfile::new(*w, u.to_vec())).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_buyer_single_good() {
        let i = inst(&[1.0], &[(1.0, &[1.0])]);
        let s = solve_eg_primal(&i, &SolverParams::default()).unwrap();
        assert_abs_diff_eq!(s.allocations[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.prices[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.primal_value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_buyers_share_evenly() {
        let i = inst(&[2.0], &[(1.0, &[1.0]), (1.0, &[1.0])]);
        let s = solve_eg_primal(&i, &SolverParams::default()).unwrap();
        assert_abs_diff_eq!(s.allocations[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.allocations[1][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.prices[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.primal_value, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn counterexample_two_of_each() {
        let a: &[f64] = &[1.0, 0.0];
        let b: &[f64] = &[0.0, 1.0];
        let i = inst(&[4.0, 4.0], &[(1.0, a), (1.0, b), (1.0, a), (1.0, b)]);
        let s = solve_eg_primal(&i, &SolverParams::default()).unwrap();
        assert_abs_diff_eq!(s.prices[0], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(s.prices[1], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(s.primal_value, 4.0 * 2f64.ln(), epsilon = 1e-10);
        assert!(s.certificate_violations(&i, &SolverParams::default()).is_empty());
    }

    #[test]
    fn degenerate_buyer_is_rejected() {
        let i = inst(&[1.0, 1.0], &[(1.0, &[0.0, 0.0]), (1.0, &[1.0, 1.0])]);
        assert!(matches!(
            solve_eg_primal(&i, &SolverParams::default()),
            Err(Error::DegenerateBuyer { buyer: 0 })
        ));
    }

    #[test]
    fn unvalued_good_gets_zero_price() {
        let i = inst(&[1.0, 1.0], &[(1.0, &[1.0, 0.0]), (2.0, &[3.0, 0.0])]);
        let s = solve_eg_primal(&i, &SolverParams::default()).unwrap();
        assert_eq!(s.prices[1], 0.0);
        assert_abs_diff_eq!(s.prices[0], 3.0, epsilon = 1e-10);
        assert!(s.certificate_violations(&i, &SolverParams::default()).is_empty());
    }

    #[test]
    fn max_iters_carries_best_iterate() {
        let i = inst(
            &[1.0, 1.0, 1.0],
            &[(1.0, &[1.0, 2.0, 3.0]), (2.0, &[3.0, 1.0, 1.0]), (1.5, &[1.0, 1.0, 1.1])],
        );
        let params = SolverParams {
            max_iters: 70,
            gap_tol: 1e-15,
            ..SolverParams::default()
        };
        match solve_eg_primal(&i, &params) {
            Err(Error::MaxIters { best: Some(best), .. }) => assert!(best.gap.is_finite()),
            other => panic!("expected MaxIters, got {other:?}"),
        }
    }

    #[test]
    fn dual_objective_examples() {
        let i = inst(&[1.0], &[(1.0, &[1.0])]);
        assert_abs_diff_eq!(dual_objective(&PriceVector::new(vec![1.0]), &i).unwrap(), 0.0);
        assert_abs_diff_eq!(
            dual_objective(&PriceVector::new(vec![2.0]), &i).unwrap(),
            1.0 - 2f64.ln(),
            epsilon = 1e-15
        );
        assert!(matches!(
            dual_objective(&PriceVector::new(vec![0.0]), &i),
            Err(Error::NonpositivePrice { .. })
        ));
    }

    #[test]
    fn saa_dual_plug_in() {
        let buyers = vec![BuyerProfile::new(1.0, vec![1.0])];
        assert_abs_diff_eq!(
            saa_dual_objective(&PriceVector::new(vec![1.0]), &buyers, &[1.0]).unwrap(),
            0.0
        );
        // Counterexample at (0.5, 0.5): 1 + (0 - log 0.5 - 1) = log 2 for any mix.
        let buyers = vec![
            BuyerProfile::new(1.0, vec![1.0, 0.0]),
            BuyerProfile::new(1.0, vec![0.0, 1.0]),
            BuyerProfile::new(1.0, vec![1.0, 0.0]),
        ];
        let v = saa_dual_objective(&PriceVector::new(vec![0.5, 0.5]), &buyers, &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(v, 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn subgradient_single_good_clears_market() {
        let buyers = vec![
            BuyerProfile::new(1.0, vec![2.0]),
            BuyerProfile::new(3.0, vec![1.0]),
            BuyerProfile::new(2.0, vec![5.0]),
        ];
        let d = [2.0];
        let p = solve_dual_subgradient(&buyers, &d, &SolverParams::default(), &PriceVector::new(vec![1.0])).unwrap();
        // sum w / c with c = n d = 6
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-6);
    }

    #[test]
    fn subgradient_counterexample_half_split() {
        let buyers: Vec<_> = (0..10)
            .map(|t| {
                if t % 2 == 0 {
                    BuyerProfile::new(1.0, vec![1.0, 0.0])
                } else {
                    BuyerProfile::new(1.0, vec![0.0, 1.0])
                }
            })
            .collect();
        let p = solve_dual_subgradient(
            &buyers,
            &[1.0, 1.0],
            &SolverParams::default(),
            &PriceVector::new(vec![1.0, 1.0]),
        )
        .unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-4);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-4);
    }

    fn counterexample_ce(d: f64) -> CeInput {
        CeInput::new(
            vec![
                BuyerProfile::new(1.0, vec![1.0, 0.0]),
                BuyerProfile::new(1.0, vec![0.0, 1.0]),
            ],
            vec![0.5, 0.5],
            vec![d, d],
        )
        .unwrap()
    }

    #[test]
    fn ce_counterexample_prices() {
        let s = solve_certainty_equivalent(&counterexample_ce(1.0), &SolverParams::default()).unwrap();
        assert_abs_diff_eq!(s.prices[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.prices[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(s.allocations[0][0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.allocations[0][1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.allocations[1][1], 2.0, epsilon = 1e-12);
        // 0.5 log 2 + 0.5 log 2
        assert_abs_diff_eq!(s.primal_value, 2f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn ce_doubled_capacity_halves_prices() {
        let params = SolverParams::default();
        let ce = counterexample_ce(2.0);
        let s = solve_certainty_equivalent(&ce, &params).unwrap();
        // Oracle: the SAA dual over the two types, each appearing once.
        let p = solve_dual_subgradient(&ce.types, &[2.0, 2.0], &params, &PriceVector::new(vec![1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(p[0], 0.25, epsilon = 1e-5);
        assert_abs_diff_eq!(s.prices[0], p[0], epsilon = 1e-5);
        assert_abs_diff_eq!(s.prices[1], p[1], epsilon = 1e-5);
    }

    #[test]
    fn ce_single_type_with_tie() {
        let params = SolverParams::default();
        let ce = CeInput::new(vec![BuyerProfile::new(1.0, vec![1.0, 1.0])], vec![1.0], vec![1.0, 1.0]).unwrap();
        let s = solve_certainty_equivalent(&ce, &params).unwrap();
        let p = solve_dual_subgradient(&ce.types, &[1.0, 1.0], &params, &PriceVector::new(vec![2.0, 0.3])).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(s.prices[j], 0.5, epsilon = 1e-9);
            assert_abs_diff_eq!(p[j], 0.5, epsilon = 1e-4);
            assert_abs_diff_eq!(s.allocations[0][j], 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn ce_rejects_unsupported_good() {
        let ce = CeInput::new(
            vec![
                BuyerProfile::new(1.0, vec![1.0, 0.0]),
                BuyerProfile::new(1.0, vec![0.0, 1.0]),
            ],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        )
        .unwrap();
        assert!(matches!(
            solve_certainty_equivalent(&ce, &SolverParams::default()),
            Err(Error::UnsupportedGood { good: 1 })
        ));
    }

    #[test]
    fn ce_input_validates_probs() {
        let types = vec![BuyerProfile::new(1.0, vec![1.0])];
        assert!(CeInput::new(types.clone(), vec![0.9], vec![1.0]).is_err());
        assert!(CeInput::new(types, vec![1.0], vec![0.0]).is_err());
    }
}
