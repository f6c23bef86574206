//! Std companion to `leads-kit-core`: transport entities, telemetry file
//! formats, JSON configuration, synthetic emulation and the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod comm;
pub mod config;
pub mod emulate;
pub mod io;
