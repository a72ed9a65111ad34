//! Online pricing policies. A policy posts `p^t` before buyer `t` arrives
//! and is told the realized consumption afterwards; steps are 1-based.

use serde::{Deserialize, Serialize};

use crate::buyer::Allocation;
use crate::distributions::{sample_users, DistributionSpec};
use crate::error::{Error, Result};
use crate::market::{BuyerProfile, MarketInstance, PriceVector};
use crate::solver::{
    solve_certainty_equivalent, solve_dual_subgradient, solve_eg_primal, CeInput, EquilibriumSolution, SolverParams,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyEvent {
    /// An additive update drove a price to zero or below after buyer `t`.
    PriceFloorBreach { t: usize, good: usize, price: f64 },
    /// Average remaining capacity left the band; prices are frozen from
    /// step `tau` on.
    Switched { tau: usize },
}

/// Whether any event is a price-floor breach.
pub fn breached(events: &[PolicyEvent]) -> bool {
    events
        .iter()
        .any(|e| matches!(e, PolicyEvent::PriceFloorBreach { .. }))
}

/// State shared by every policy: the price it will post next, cumulative
/// consumption, and the number of buyers observed so far.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyState {
    pub price: PriceVector,
    pub consumed: Vec<f64>,
    pub t: usize,
}

impl PolicyState {
    fn new(price: PriceVector) -> Self {
        let m = price.len();
        Self {
            price,
            consumed: vec![0.0; m],
            t: 0,
        }
    }

    fn record(&mut self, t: usize, x: &[f64]) -> Result<()> {
        if x.len() != self.consumed.len() {
            return Err(Error::Dimension {
                what: "allocation",
                expected: self.consumed.len(),
                got: x.len(),
            });
        }
        for (c, v) in self.consumed.iter_mut().zip(x) {
            *c += v;
        }
        self.t = t;
        Ok(())
    }
}

pub trait PricingPolicy: Send {
    fn name(&self) -> &'static str;

    /// Price posted to buyer `t`.
    fn next_price(&mut self, t: usize) -> Result<PriceVector>;

    /// Allocation the policy hands to buyer `t` instead of letting them
    /// best-respond. `None` means the buyer best-responds to the price.
    fn prescribed_allocation(&mut self, _t: usize, _buyer: &BuyerProfile) -> Result<Option<Allocation>> {
        Ok(None)
    }

    fn observe(&mut self, t: usize, buyer: &BuyerProfile, x: &Allocation) -> Result<()>;

    fn state(&self) -> &PolicyState;

    fn events(&self) -> &[PolicyEvent] {
        &[]
    }
}

/// `p1_j = E[w] d_j / sum_k d_k^2`, the price at which a buyer spending the
/// mean budget along `d` would buy exactly `d`.
pub fn default_initial_price(spec: &DistributionSpec, d: &[f64]) -> PriceVector {
    let norm: f64 = d.iter().map(|v| v * v).sum();
    let w = spec.mean_budget();
    PriceVector(d.iter().map(|v| w * v / norm).collect())
}

fn check_positive(field: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::invalid(field, "entries must be positive and finite"));
    }
    Ok(())
}

fn check_dims(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { what, expected, got });
    }
    Ok(())
}

/// Posts the same price to every buyer.
#[derive(Debug, Clone)]
pub struct StaticPolicy {
    state: PolicyState,
}

impl StaticPolicy {
    pub fn new(price: PriceVector) -> Result<Self> {
        check_positive("prices", &price)?;
        Ok(Self {
            state: PolicyState::new(price),
        })
    }

    /// Static prices from the certainty-equivalent program at `d`.
    pub fn from_certainty_equivalent(input: &CeInput, params: &SolverParams) -> Result<Self> {
        Self::new(solve_certainty_equivalent(input, params)?.prices)
    }
}

/// Static expected-equilibrium prices: the minimizer of the sample-average
/// dual over `sample_count` draws from `spec`.
pub fn static_equilibrium_policy<R: rand::Rng + ?Sized>(
    spec: &DistributionSpec,
    d: &[f64],
    sample_count: usize,
    rng: &mut R,
    params: &SolverParams,
) -> Result<StaticPolicy> {
    check_dims("per_user_capacity", spec.goods(), d.len())?;
    if sample_count == 0 {
        return Err(Error::invalid("sample_count", "must be at least 1"));
    }
    let samples = sample_users(spec, sample_count, rng);
    let p0 = default_initial_price(spec, d);
    StaticPolicy::new(solve_dual_subgradient(&samples, d, params, &p0)?)
}

impl PricingPolicy for StaticPolicy {
    fn name(&self) -> &'static str {
        "static_eq"
    }

    fn next_price(&mut self, _t: usize) -> Result<PriceVector> {
        Ok(self.state.price.clone())
    }

    fn observe(&mut self, t: usize, _buyer: &BuyerProfile, x: &Allocation) -> Result<()> {
        self.state.record(t, x)
    }

    fn state(&self) -> &PolicyState {
        &self.state
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsumptionMode {
    /// Buyer of type `k` receives the CE consumption `z_k`.
    #[default]
    AllocationFromCe,
    /// Buyer best-responds to the posted CE price.
    BestResponse,
}

/// Re-solves `CE(d_t)` on the average remaining capacity while it stays in
/// `[d - delta, d + delta]`, and falls back to the `CE(d)` prices forever
/// once it leaves.
#[derive(Debug, Clone)]
pub struct AdaptiveCePolicy {
    input: CeInput,
    params: SolverParams,
    n: usize,
    delta: Vec<f64>,
    mode: ConsumptionMode,
    remaining: Vec<f64>,
    avg_remaining: Vec<f64>,
    fallback: EquilibriumSolution,
    current: EquilibriumSolution,
    tau: Option<usize>,
    state: PolicyState,
    events: Vec<PolicyEvent>,
}

impl AdaptiveCePolicy {
    pub fn new(input: CeInput, n: usize, delta: Vec<f64>, mode: ConsumptionMode, params: SolverParams) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        let d = &input.per_user_capacity;
        check_dims("delta", d.len(), delta.len())?;
        if delta.iter().zip(d).any(|(a, b)| !(*a > 0.0 && a < b)) {
            return Err(Error::invalid("delta", "must satisfy 0 < delta < d"));
        }
        let fallback = solve_certainty_equivalent(&input, &params)?;
        let remaining = d.iter().map(|v| v * n as f64).collect();
        let avg_remaining = d.clone();
        Ok(Self {
            params,
            n,
            delta,
            mode,
            remaining,
            avg_remaining,
            current: fallback.clone(),
            state: PolicyState::new(fallback.prices.clone()),
            fallback,
            tau: None,
            events: Vec::new(),
            input,
        })
    }

    /// Default band `delta = d / 2`.
    pub fn with_default_band(input: CeInput, n: usize, mode: ConsumptionMode, params: SolverParams) -> Result<Self> {
        let delta = input.per_user_capacity.iter().map(|v| v / 2.0).collect();
        Self::new(input, n, delta, mode, params)
    }

    /// First step at which the posted price is the frozen fallback.
    pub fn tau(&self) -> Option<usize> {
        self.tau
    }

    pub fn remaining_capacity(&self) -> &[f64] {
        &self.remaining
    }

    pub fn average_remaining(&self) -> &[f64] {
        &self.avg_remaining
    }

    fn in_band(&self, d_t: &[f64]) -> bool {
        d_t.iter()
            .zip(&self.input.per_user_capacity)
            .zip(&self.delta)
            .all(|((v, d), e)| *v >= d - e && *v <= d + e)
    }

    fn active(&self) -> &EquilibriumSolution {
        if self.tau.is_some() {
            &self.fallback
        } else {
            &self.current
        }
    }
}

impl PricingPolicy for AdaptiveCePolicy {
    fn name(&self) -> &'static str {
        "adaptive_ce"
    }

    fn next_price(&mut self, _t: usize) -> Result<PriceVector> {
        Ok(self.active().prices.clone())
    }

    fn prescribed_allocation(&mut self, t: usize, buyer: &BuyerProfile) -> Result<Option<Allocation>> {
        if self.mode == ConsumptionMode::BestResponse {
            return Ok(None);
        }
        let k = self
            .input
            .types
            .iter()
            .zip(&self.input.probs)
            .position(|(ty, q)| *q > 0.0 && ty == buyer)
            .ok_or(Error::TypeMismatch { t })?;
        Ok(Some(Allocation(self.active().allocations[k].clone())))
    }

    fn observe(&mut self, t: usize, _buyer: &BuyerProfile, x: &Allocation) -> Result<()> {
        self.state.record(t, x)?;
        for (c, v) in self.remaining.iter_mut().zip(x.iter()) {
            *c -= v;
        }
        if t >= self.n {
            return Ok(());
        }
        let left = (self.n - t) as f64;
        self.avg_remaining = self.remaining.iter().map(|c| c / left).collect();
        if self.tau.is_none() {
            if self.in_band(&self.avg_remaining) {
                let input = self.input.with_capacity(self.avg_remaining.clone());
                self.current = solve_certainty_equivalent(&input, &self.params)?;
            } else {
                self.tau = Some(t + 1);
                self.events.push(PolicyEvent::Switched { tau: t + 1 });
            }
        }
        self.state.price = self.active().prices.clone();
        Ok(())
    }

    fn state(&self) -> &PolicyState {
        &self.state
    }

    fn events(&self) -> &[PolicyEvent] {
        &self.events
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// `p <- p - gamma (d - x)`, unprojected.
    #[default]
    Additive,
    /// `p <- p * exp(-gamma (d - x))`.
    Multiplicative,
}

/// Adjusts prices from observed consumption only, with constant step
/// `gamma = gamma_scale / sqrt(n)`.
#[derive(Debug, Clone)]
pub struct RevealedPreferencePolicy {
    d: Vec<f64>,
    gamma: f64,
    rule: UpdateRule,
    initial: PriceVector,
    state: PolicyState,
    events: Vec<PolicyEvent>,
}

impl RevealedPreferencePolicy {
    pub fn new(d: Vec<f64>, n: usize, gamma_scale: f64, rule: UpdateRule, p1: PriceVector) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        check_positive("per_user_capacity", &d)?;
        check_dims("p1", d.len(), p1.len())?;
        check_positive("p1", &p1)?;
        if !(gamma_scale > 0.0 && gamma_scale.is_finite()) {
            return Err(Error::invalid("gamma_scale", "must be positive"));
        }
        Ok(Self {
            gamma: gamma_scale / (n as f64).sqrt(),
            d,
            rule,
            state: PolicyState::new(p1.clone()),
            initial: p1,
            events: Vec::new(),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_price(&self) -> &PriceVector {
        &self.initial
    }

    pub fn breached(&self) -> bool {
        breached(&self.events)
    }
}

impl PricingPolicy for RevealedPreferencePolicy {
    fn name(&self) -> &'static str {
        match self.rule {
            UpdateRule::Additive => "rp_additive",
            UpdateRule::Multiplicative => "rp_multiplicative",
        }
    }

    fn next_price(&mut self, _t: usize) -> Result<PriceVector> {
        Ok(self.state.price.clone())
    }

    fn observe(&mut self, t: usize, _buyer: &BuyerProfile, x: &Allocation) -> Result<()> {
        self.state.record(t, x)?;
        let gamma = self.gamma;
        for (j, ((p, d), x)) in self.state.price.iter_mut().zip(&self.d).zip(x.iter()).enumerate() {
            match self.rule {
                UpdateRule::Additive => {
                    *p -= gamma * (d - x);
                    if *p <= 0.0 {
                        self.events.push(PolicyEvent::PriceFloorBreach { t, good: j, price: *p });
                    }
                }
                UpdateRule::Multiplicative => *p *= (-gamma * (d - x)).exp(),
            }
        }
        Ok(())
    }

    fn state(&self) -> &PolicyState {
        &self.state
    }

    fn events(&self) -> &[PolicyEvent] {
        &self.events
    }
}

/// Breakpoints `t_k = floor(delta^k)`, `k = 1..L-1`, with `L` the smallest
/// integer such that `delta^L >= n`; values are clipped to `n` and
/// deduplicated. The implicit final breakpoint is `n + 1`.
pub fn saa_breakpoints(n: usize, delta: f64) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    let mut power = delta;
    while power < n as f64 {
        let t = (power.floor() as usize).clamp(1, n);
        if out.last() != Some(&t) {
            out.push(t);
        }
        power *= delta;
    }
    out
}

/// Re-solves the sampled EG program on the buyers seen so far at
/// geometrically spaced steps. This benchmark observes each buyer's
/// budget and utilities.
#[derive(Debug, Clone)]
pub struct DynamicSaaPolicy {
    capacities: Vec<f64>,
    n: usize,
    breakpoints: Vec<usize>,
    next_break: usize,
    seen: Vec<BuyerProfile>,
    params: SolverParams,
    state: PolicyState,
}

impl DynamicSaaPolicy {
    pub fn new(capacities: Vec<f64>, n: usize, delta: f64, p1: PriceVector, params: SolverParams) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        if !(delta > 1.0 && delta <= 2.0) {
            return Err(Error::invalid("delta", "must lie in (1, 2]"));
        }
        check_positive("capacities", &capacities)?;
        check_dims("p1", capacities.len(), p1.len())?;
        check_positive("p1", &p1)?;
        Ok(Self {
            breakpoints: saa_breakpoints(n, delta),
            capacities,
            n,
            next_break: 0,
            seen: Vec::with_capacity(n),
            params,
            state: PolicyState::new(p1),
        })
    }

    pub fn breakpoints(&self) -> &[usize] {
        &self.breakpoints
    }

    fn resolve(&mut self, t: usize) -> Result<()> {
        let scale = t as f64 / self.n as f64;
        let caps = self.capacities.iter().map(|c| c * scale).collect();
        let instance = MarketInstance::new(caps, self.seen.clone())?;
        let sol = match solve_eg_primal(&instance, &self.params) {
            Ok(sol) => sol,
            Err(Error::MaxIters { best: Some(best), .. }) => *best,
            Err(e) => return Err(e),
        };
        // A good nobody in the prefix wants has no informative price.
        for (p, q) in self.state.price.iter_mut().zip(sol.prices.iter()) {
            if *q > self.params.price_eps {
                *p = *q;
            }
        }
        Ok(())
    }
}

impl PricingPolicy for DynamicSaaPolicy {
    fn name(&self) -> &'static str {
        "dynamic_saa"
    }

    fn next_price(&mut self, _t: usize) -> Result<PriceVector> {
        Ok(self.state.price.clone())
    }

    fn observe(&mut self, t: usize, buyer: &BuyerProfile, x: &Allocation) -> Result<()> {
        self.state.record(t, x)?;
        self.seen.push(buyer.clone());
        if self.breakpoints.get(self.next_break) == Some(&t) {
            self.next_break += 1;
            self.resolve(t)?;
        }
        Ok(())
    }

    fn state(&self) -> &PolicyState {
        &self.state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::buyer::{optimal_bundle, TieRule};
    use crate::distributions::{counterexample_per_user_capacity, counterexample_spec, f2_benchmark_spec, RngStream};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ce_counterexample(d: &[f64]) -> CeInput {
        counterexample_spec(0.0).ce_input(d).unwrap()
    }

    fn allocation(v: &[f64]) -> Allocation {
        Allocation(v.to_vec())
    }

    #[test]
    fn rp_examples() {
        let b = BuyerProfile::new(1.0, vec![1.0, 0.0]);
        // n = 100 and gamma_scale = 1 give gamma = 0.1.
        let mut add = RevealedPreferencePolicy::new(vec![1.0, 1.0], 100, 1.0, UpdateRule::Additive, PriceVector::uniform(2, 1.0)).unwrap();
        add.observe(1, &b, &allocation(&[2.0, 0.0])).unwrap();
        assert_abs_diff_eq!(add.state().price[0], 1.1, epsilon = 1e-12);
        assert_abs_diff_eq!(add.state().price[1], 0.9, epsilon = 1e-12);

        let mut mul = RevealedPreferencePolicy::new(vec![1.0, 1.0], 100, 1.0, UpdateRule::Multiplicative, PriceVector::uniform(2, 1.0)).unwrap();
        mul.observe(1, &b, &allocation(&[2.0, 0.0])).unwrap();
        assert_abs_diff_eq!(mul.state().price[0], 0.1f64.exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(mul.state().price[1], (-0.1f64).exp(), epsilon = 1e-12);

        for rule in [UpdateRule::Additive, UpdateRule::Multiplicative] {
            let mut p = RevealedPreferencePolicy::new(vec![1.0, 2.0], 4, 0.5, rule, PriceVector::new(vec![0.3, 0.7])).unwrap();
            p.observe(1, &b, &allocation(&[1.0, 2.0])).unwrap();
            assert_eq!(p.state().price.0, vec![0.3, 0.7]);
        }
    }

    #[test]
    fn rp_breach_is_an_event() {
        let b = BuyerProfile::new(1.0, vec![1.0, 1.0]);
        let mut p = RevealedPreferencePolicy::new(vec![1.0, 1.0], 1, 1.0, UpdateRule::Additive, PriceVector::uniform(2, 0.5)).unwrap();
        p.observe(1, &b, &allocation(&[0.0, 2.0])).unwrap();
        assert!(p.breached());
        assert_eq!(p.events()[0], PolicyEvent::PriceFloorBreach { t: 1, good: 0, price: -0.5 });
    }

    #[test]
    fn rp_rejects_bad_parameters() {
        let ones = PriceVector::uniform(2, 1.0);
        assert!(RevealedPreferencePolicy::new(vec![1.0, 1.0], 10, 0.0, UpdateRule::Additive, ones.clone()).is_err());
        assert!(RevealedPreferencePolicy::new(vec![1.0, 1.0], 10, 1.0, UpdateRule::Additive, PriceVector::new(vec![1.0, 0.0])).is_err());
        assert!(RevealedPreferencePolicy::new(vec![1.0], 10, 1.0, UpdateRule::Additive, ones).is_err());
    }

    #[test]
    fn default_initial_price_counterexample() {
        let p = default_initial_price(&counterexample_spec(0.0), &[1.0, 1.0]);
        assert_eq!(p.0, vec![0.5, 0.5]);
    }

    #[test]
    fn adaptive_first_price_is_static() {
        let p = AdaptiveCePolicy::with_default_band(ce_counterexample(&[1.0, 1.0]), 100, ConsumptionMode::AllocationFromCe, SolverParams::default())
            .unwrap()
            .next_price(1)
            .unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn adaptive_hand_trace() {
        // n = 2, c = (2, 2), delta = 0.5: one type-(1,0) buyer takes (2, 0),
        // leaving d_2 = (0, 2), which is outside the band.
        let mut pol = AdaptiveCePolicy::new(
            ce_counterexample(&[1.0, 1.0]),
            2,
            vec![0.5, 0.5],
            ConsumptionMode::AllocationFromCe,
            SolverParams::default(),
        )
        .unwrap();
        let b = BuyerProfile::new(1.0, vec![1.0, 0.0]);
        pol.next_price(1).unwrap();
        let x = pol.prescribed_allocation(1, &b).unwrap().unwrap();
        assert_abs_diff_eq!(x[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(x[1], 0.0, epsilon = 1e-12);
        pol.observe(1, &b, &x).unwrap();
        assert_eq!(pol.tau(), Some(2));
        assert_abs_diff_eq!(pol.average_remaining()[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pol.average_remaining()[1], 2.0, epsilon = 1e-12);
        let p = pol.next_price(2).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-9);
        assert_eq!(pol.events(), &[PolicyEvent::Switched { tau: 2 }]);
    }

    #[test]
    fn adaptive_in_band_step() {
        let mut pol = AdaptiveCePolicy::with_default_band(ce_counterexample(&[1.0, 1.0]), 4, ConsumptionMode::AllocationFromCe, SolverParams::default()).unwrap();
        let b = BuyerProfile::new(1.0, vec![1.0, 0.0]);
        let x = pol.prescribed_allocation(1, &b).unwrap().unwrap();
        pol.observe(1, &b, &x).unwrap();
        assert_eq!(pol.tau(), None);
        assert_abs_diff_eq!(pol.average_remaining()[0], 2.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pol.average_remaining()[1], 4.0 / 3.0, epsilon = 1e-12);
        // CE(d) for this spec prices good j at 0.5 / d_j.
        let p = pol.next_price(2).unwrap();
        assert_abs_diff_eq!(p[0], 0.75, epsilon = 1e-8);
        assert_abs_diff_eq!(p[1], 0.375, epsilon = 1e-8);
        // In-band clearing: sum_k q_k z_k = d_t.
        let sol = solve_certainty_equivalent(&ce_counterexample(pol.average_remaining()), &SolverParams::default()).unwrap();
        for j in 0..2 {
            let cleared: f64 = (0..2).map(|k| 0.5 * sol.allocations[k][j]).sum();
            assert_abs_diff_eq!(cleared, pol.average_remaining()[j], epsilon = 1e-6);
        }
    }

    #[test]
    fn adaptive_type_mismatch() {
        let mut pol = AdaptiveCePolicy::with_default_band(ce_counterexample(&[1.0, 1.0]), 4, ConsumptionMode::AllocationFromCe, SolverParams::default()).unwrap();
        let stranger = BuyerProfile::new(2.0, vec![1.0, 0.0]);
        assert!(matches!(pol.prescribed_allocation(3, &stranger), Err(Error::TypeMismatch { t: 3 })));
        let mut br = AdaptiveCePolicy::with_default_band(ce_counterexample(&[1.0, 1.0]), 4, ConsumptionMode::BestResponse, SolverParams::default()).unwrap();
        assert!(br.prescribed_allocation(3, &stranger).unwrap().is_none());
    }

    #[test]
    fn adaptive_rejects_band_wider_than_d() {
        let r = AdaptiveCePolicy::new(ce_counterexample(&[1.0, 1.0]), 4, vec![1.0, 0.5], ConsumptionMode::BestResponse, SolverParams::default());
        assert!(matches!(r, Err(Error::Invalid { .. })));
    }

    #[test]
    fn breakpoint_examples() {
        assert_eq!(saa_breakpoints(8, 2.0), vec![2, 4]);
        assert_eq!(saa_breakpoints(1, 2.0), Vec::<usize>::new());
        assert_eq!(saa_breakpoints(9, 2.0), vec![2, 4, 8]);
        assert_eq!(saa_breakpoints(10, 1.1), vec![1, 2, 3, 4, 5, 6, 7, 8, 9]);
    }

    #[test]
    fn dynamic_saa_regimes() {
        let mut pol = DynamicSaaPolicy::new(vec![8.0, 8.0], 8, 2.0, PriceVector::uniform(2, 3.0), SolverParams::default()).unwrap();
        let types = [BuyerProfile::new(1.0, vec![1.0, 0.0]), BuyerProfile::new(1.0, vec![0.0, 1.0])];
        let mut seen = Vec::new();
        for t in 1..=8 {
            let p = pol.next_price(t).unwrap();
            seen.push(p.0.clone());
            let b = &types[t % 2];
            let x = optimal_bundle(b, &p, TieRule::LowestIndex).unwrap();
            pol.observe(t, b, &x).unwrap();
        }
        assert_eq!(seen[0], vec![3.0, 3.0]);
        assert_eq!(seen[1], vec![3.0, 3.0]);
        // After two buyers, one of each type, with capacity 2 each: price 0.5.
        for s in &seen[2..] {
            assert_abs_diff_eq!(s[0], 0.5, epsilon = 1e-6);
            assert_abs_diff_eq!(s[1], 0.5, epsilon = 1e-6);
        }
    }

    #[test]
    fn dynamic_saa_keeps_price_of_unwanted_good() {
        let mut pol = DynamicSaaPolicy::new(vec![4.0, 4.0], 4, 2.0, PriceVector::uniform(2, 3.0), SolverParams::default()).unwrap();
        let b = BuyerProfile::new(1.0, vec![1.0, 0.0]);
        for t in 1..=2 {
            let x = optimal_bundle(&b, &pol.next_price(t).unwrap(), TieRule::LowestIndex).unwrap();
            pol.observe(t, &b, &x).unwrap();
        }
        let p = pol.next_price(3).unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-6);
        assert_eq!(p[1], 3.0);
    }

    #[test]
    fn static_saa_counterexample() {
        let d = counterexample_per_user_capacity();
        let mut rng = RngStream::new(11, 0).rng();
        let pol = static_equilibrium_policy(&counterexample_spec(0.0), &d, 5000, &mut rng, &SolverParams::default()).unwrap();
        for j in 0..2 {
            assert!((pol.state().price[j] - 0.5).abs() <= 0.02);
        }
    }

    #[test]
    fn static_saa_single_type_matches_ce() {
        let spec = DistributionSpec::Discrete {
            types: vec![BuyerProfile::new(2.0, vec![1.0, 3.0])],
            probs: vec![1.0],
        };
        let d = vec![1.0, 2.0];
        let mut rng = RngStream::new(1, 0).rng();
        let saa = static_equilibrium_policy(&spec, &d, 50, &mut rng, &SolverParams::default()).unwrap();
        let ce = StaticPolicy::from_certainty_equivalent(&spec.ce_input(&d).unwrap(), &SolverParams::default()).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(saa.state().price[j], ce.state().price[j], epsilon = 1e-4);
        }
    }

    #[test]
    fn consumption_accumulates() {
        let mut pol = StaticPolicy::new(PriceVector::uniform(2, 0.5)).unwrap();
        let b = BuyerProfile::new(1.0, vec![1.0, 0.0]);
        pol.observe(1, &b, &allocation(&[2.0, 0.0])).unwrap();
        pol.observe(2, &b, &allocation(&[0.5, 1.0])).unwrap();
        assert_eq!(pol.state().consumed, vec![2.5, 1.0]);
        assert_eq!(pol.state().t, 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn multiplicative_prices_stay_positive(seed in any::<u64>(), scale in 0.01f64..1.0, n in 1usize..300) {
            let spec = f2_benchmark_spec();
            let d = vec![10.0; 5];
            let mut pol = RevealedPreferencePolicy::new(d, n, scale, UpdateRule::Multiplicative, PriceVector::uniform(5, 1.0)).unwrap();
            let buyers = sample_users(&spec, n, &mut RngStream::new(seed, 0).rng());
            for (t, b) in buyers.iter().enumerate() {
                let p = pol.next_price(t + 1).unwrap();
                prop_assert!(p.iter().all(|v| *v > 0.0));
                let x = optimal_bundle(b, &p, TieRule::LowestIndex).unwrap();
                pol.observe(t + 1, b, &x).unwrap();
            }
            prop_assert!(pol.state().price.iter().all(|v| *v > 0.0));
        }

        #[test]
        fn consumed_is_nondecreasing(seed in any::<u64>(), n in 1usize..100) {
            let spec = f2_benchmark_spec();
            let mut pol = RevealedPreferencePolicy::new(vec![10.0; 5], n, 0.01, UpdateRule::Additive, PriceVector::uniform(5, 1.0)).unwrap();
            let buyers = sample_users(&spec, n, &mut RngStream::new(seed, 1).rng());
            let mut prev = vec![0.0; 5];
            for (t, b) in buyers.iter().enumerate() {
                let p = pol.next_price(t + 1).unwrap();
                let x = optimal_bundle(b, &p, TieRule::LowestIndex).unwrap();
                pol.observe(t + 1, b, &x).unwrap();
                for (a, c) in pol.state().consumed.iter().zip(&prev) {
                    prop_assert!(a >= c);
                }
                prev = pol.state().consumed.clone();
            }
        }
    }
}
