//! Fisher-market equilibria offline and online.
//!
//! The crate computes Eisenberg-Gale equilibria for linear-utility Fisher
//! markets, implements online pricing policies for buyers that arrive one at
//! a time, and measures their regret and capacity violation against the
//! offline optimum in seeded Monte-Carlo experiments.

pub mod buyer;
pub mod cli;
pub mod distributions;
pub mod error;
pub mod harness;
pub mod market;
pub mod metrics;
pub mod policies;
pub mod solver;

pub use buyer::{bang_per_buck_set, indirect_utility, optimal_bundle, Allocation, TieRule};
pub use error::{Error, Result};
pub use market::{
    normalize_capacities, validate_instance, BuyerProfile, CheckLevel, MarketInstance, PriceVector,
    ValidationReport, Violation,
};
pub use policies::{
    default_initial_price, saa_breakpoints, static_equilibrium_policy, AdaptiveCePolicy, ConsumptionMode,
    DynamicSaaPolicy, PolicyEvent, PolicyState, PricingPolicy, RevealedPreferencePolicy, StaticPolicy, UpdateRule,
};
pub use solver::{
    dual_objective, saa_dual_objective, solve_certainty_equivalent, solve_dual_subgradient, solve_eg_primal,
    CeInput, EquilibriumSolution, SolverParams, StepSchedule,
};
