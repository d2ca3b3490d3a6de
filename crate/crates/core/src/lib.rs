#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Economics and request routing for content delivery networks under
//! latency service-level agreements.
//!
//! * [`competition`]: price competition between CDNs of different performance,
//!   closed-form duopoly/triopoly equilibria and a numerical Nash solver.
//! * [`coverage`]: state-dependent serving radii and the exclusive/common
//!   area decomposition of a server layout.
//! * [`queueing`]: exact single-server birth-death analysis and scaling.
//! * [`static_policy`]: the two-stage (throughput, then load balance) static
//!   routing plan.
//! * [`dynamic_policy`]: optimal state-dependent routing by relative value
//!   iteration on the uniformized chain.
//! * [`sim`]: seeded discrete-event simulation of any routing policy.

pub mod competition;
pub mod coverage;
pub mod dynamic_policy;
pub mod error;
pub mod queueing;
pub mod sim;
pub mod static_policy;

pub use error::{Error, Result};
