//! Exact super-replication prices and hedges for European options under
//! proportional transaction costs, in a discrete-time model where each
//! one-step price ratio has a known deterministic support `[alpha, beta]`.
//!
//! The pricing operator maps a payoff of the form
//! `g(phi, x) = max_i (ghat_i(x) - mu_i * phi * x)` to a function of the same
//! form one step earlier, so a multi-step price is a finite backward
//! recursion over [`recursion::PayoffSystem`]s. The optimal position at each
//! date is recovered in a forward pass ([`strategy`]). Two independent
//! one-step pricers live in [`oracle`] for validation.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod exec;
pub mod market;
pub mod oracle;
pub mod pwl;
pub mod recursion;
pub mod strategy;

pub use market::{MarketModel, PricePath};
pub use pwl::{AffineLine, ConvexPwl, MaxAffineFamily, MinMax};
pub use recursion::{PayoffComponent, PayoffSystem, Regime};
