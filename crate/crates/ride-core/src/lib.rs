//! Desk-scale laboratory for long-tailed classification with routed expert
//! ensembles.
//!
//! The crate provides the full experimental stack in plain Rust on `f64`
//! slices: a small dense-network substrate ([`net`]), long-tail dataset
//! construction ([`data`]), shared-backbone multi-expert models ([`experts`]),
//! the loss family used to train them ([`losses`]), dynamic expert routing
//! with cost accounting ([`router`]), knowledge distillation ([`distill`]),
//! training loops ([`train`]), and a 0-1-loss bias/variance harness over
//! replicate trainings ([`analysis`]).
//!
//! Everything is deterministic given explicit `u64` seeds, and the crate is
//! `no_std` (with `alloc`) so the numeric core stays free of IO concerns; the
//! companion `ride-lab` crate supplies file formats and a CLI.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod data;
pub mod distill;
pub mod error;
pub mod experts;
pub mod grid;
pub mod losses;
pub mod net;
pub(crate) mod numeric;
pub mod router;
pub mod seed;
pub mod train;

pub use error::{CoreError, Result};
pub use grid::ValueGrid;
