//! Traces of Fourier integral operators on submanifolds.
//!
//! The crate decides when restricting an FIO kernel to `X × X`, with
//! `X = {y = 0}`, yields again an FIO, and computes the traced Lagrangian,
//! its order and the leading canonical amplitude. Every closed-form stage has
//! a brute-force counterpart in [`oracle`].
#![no_std]

extern crate alloc;

pub mod canonical;
pub mod expr;
pub mod geom;
pub mod linalg;
pub mod oracle;
pub mod phase;
pub mod quad;
pub mod rng;
pub mod stationary;
pub mod trace;
