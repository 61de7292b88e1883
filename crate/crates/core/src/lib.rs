//! Option pricing under an uncertain Black-Scholes volatility.
//!
//! The volatility a trader hedges with is modelled as a small perturbation of
//! the true one, described by an [`ErrorStructure`]: a bias `A`, a variance
//! density `Γ` and a size `ε`. The crate propagates that structure through the
//! premium and the hedging P&L, producing biased mid prices, bid/ask quotes,
//! the implied smile and an equivalent local volatility. A Monte Carlo hedging
//! simulator serves as an independent check.
//!
//! Rates are zero throughout and only European calls are priced.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod black_scholes;
mod error;
pub mod error_calculus;
pub mod normal;
pub mod pricing;
pub mod simulator;
pub mod surface;
pub mod utility;

pub use black_scholes::{bs_greeks, bs_price, implied_vol, Greeks, MarketSpec};
pub use error::{PbsError, Result};
pub use error_calculus::{ErrorStructure, MultiErrorStructure};
pub use pricing::{HFunction, PnLMoments, Quote, SmileConditionReport};
