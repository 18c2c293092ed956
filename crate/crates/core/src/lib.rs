//! Water-market trading mechanisms under HARA utilities.
//!
//! Two mechanisms over the same population of irrigators:
//!
//! * **Common pool** ([`common_pool`]): everyone trades with the pool at a
//!   single computed equilibrium price (closed form plus an independent
//!   bisection oracle, with KKT verification).
//! * **Pair-wise trading** ([`pairwise`]): participants clear bilaterally,
//!   two at a time, with random / greedy / stable-matching pairing.
//!
//! [`analysis`] verifies welfare dominance of the common pool, Pareto
//! optimality of its equilibrium, and the no-deviation property at the
//! equilibrium price. [`calibration`] fits the HARA yield curve and the
//! aggregate price formula to monthly market data. [`scenario`] and the
//! `water-market` binary run seeded, reproducible experiments.

pub mod analysis;
pub mod calibration;
pub mod common_pool;
pub mod error;
pub mod io;
pub mod market_core;
pub mod pairwise;
pub mod scenario;

pub use error::{MarketError, Result};
pub use market_core::{Allocation, MarketConfig, Participant};
