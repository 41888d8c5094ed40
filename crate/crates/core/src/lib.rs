//! Robust demand-side management under worst-case day-ahead forecast errors.
//!
//! Users with local generation and storage schedule their net load against a
//! quadratic grid price while an adversary places a bounded forecast error on
//! every slot. The crate computes the resulting equilibrium, compares it with
//! a forecast-agnostic schedule and replays both in a real-time market.

pub mod error;
pub mod experiments;
pub mod game;
pub mod model;
pub mod oracle;
pub mod qp;
pub mod realtime;
pub mod region;
pub mod scenario;
pub mod worst_case;

pub use error::{DsmError, Result};
pub use model::*;
pub use region::*;
