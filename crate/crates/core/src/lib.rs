//! Global maximum-likelihood detection for one-bit quantized MIMO uplinks.
//!
//! The ML problem over `x ∈ {-1,1}^K` is rewritten as a MILP whose
//! constraints are tangent planes of the convex per-observation losses.
//! Only a tiny subset of those tangents is ever materialized: they are
//! generated on demand inside a custom branch-and-bound whose node
//! relaxations are solved by a small dense dual simplex.
//!
//! Module map:
//!
//! - [`model`]: signal model, quantizer, seeded instance generation, instance files
//! - [`special`]: stable `log Φ`, inverse Mills ratio, losses, gradient cuts
//! - [`lp`]: bounded-variable dual simplex for the node relaxations
//! - [`solver`]: cut pool, branch-and-bound, and the incremental outer loop
//! - [`baselines`]: exhaustive-search oracle, zero forcing, least squares
//! - [`detector`]: name-keyed registry of detection strategies
//! - [`harness`]: Monte-Carlo experiments and result tables

pub mod baselines;
pub mod detector;
mod error;
pub mod harness;
pub mod lp;
pub mod model;
pub mod solver;
pub mod special;

pub use error::{Error, Result};
