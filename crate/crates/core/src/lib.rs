//! Core algorithms for a lightweight embedded assisted-driving stack.
//!
//! Everything here is `no_std` with `alloc`: pure data types and passes over
//! telemetry, with no IO, clocks or threads. The `leads-kit` crate layers
//! sockets, file formats and the CLI on top.
#![no_std]
// NaN must fail every range check, so `!(x > 0.0)` is intended
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod devtree;
pub mod error;
pub mod esc;
pub mod framing;
pub mod geo;
pub mod infer;
pub mod model;
pub mod pacer;
pub mod persist;
pub mod sensors;

pub use error::{Error, Result};
pub use model::{Accel, Orientation, TelemetryFrame, Trip, TripMetadata};
