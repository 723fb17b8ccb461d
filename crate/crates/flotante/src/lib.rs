//! Floating-population analytics over anonymized call-detail records.
//!
//! The toolkit estimates how many people commute into a focal city from the
//! surrounding municipalities using nothing but anonymized call metadata,
//! tower registries and a household mobility survey for calibration:
//!
//! 1. [`ingest`] parses CDR shards into mergeable per-phone profiles and
//!    applies the minimum-activity filter.
//! 2. [`home`] assigns each phone a home municipality from its off-hours
//!    calling pattern.
//! 3. [`commuter`] classifies phone-days as commuting trips and accumulates
//!    origin–destination matrices ([`trips`]).
//! 4. [`network`] builds the inter-municipality mobility network, keeps the
//!    statistically significant backbone and clusters it with a two-level
//!    map-equation optimizer.
//! 5. [`calibrate`] expands raw phone counts into population estimates and
//!    brackets the residual expansion factor against the survey.
//! 6. [`analytics`] produces the headline tables, maps and rankings.
//! 7. [`synth`] generates synthetic cities with a complete ground-truth
//!    ledger, the verification oracle for everything above.
//!
//! The `flotante` binary (see the `flotante-cli` crate) orchestrates the full
//! pipeline; the guide under `book/` walks through each concept with runnable
//! examples.

pub mod analytics;
pub mod calibrate;
pub mod commuter;
pub mod error;
pub mod geo;
pub mod home;
pub mod ingest;
pub mod model;
pub mod network;
pub mod pipeline;
pub mod routing;
pub mod spatial;
pub mod stats;
pub mod synth;
pub mod trips;

pub use error::{Error, Result};
