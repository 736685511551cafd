//! Channel-state feedback with implicit neural representations.
//!
//! Channel matrices are treated as functions of their `(antenna, subcarrier)`
//! coordinates. A shared, meta-learned sinusoidal coordinate network is
//! conditioned per channel by a short modulation codeword; the transmitter
//! finds the codeword with a few gradient steps, quantizes and range-codes it,
//! and the receiver decodes the codeword and evaluates the network over the
//! coordinate grid.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod checkpoint;
pub mod codec;
pub mod datafile;
pub mod engine;
pub mod eval;
pub mod model;
pub mod train;
