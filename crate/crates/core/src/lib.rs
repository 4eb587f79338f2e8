//! Guaranteed-cost model predictive control for linear systems with
//! structured norm-bounded uncertainty.

pub mod conic;
pub mod controller;
pub mod ermpc;
pub mod error;
pub mod linalg;
pub mod model;
pub mod parallel;
pub mod problem;
pub mod reproduce;
pub mod riccati;
pub mod sim;
pub mod tightening;

pub use error::{Error, Result};
