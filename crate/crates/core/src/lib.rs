//! Differentially private tabular data synthesis from adaptively selected
//! noisy marginals.
//!
//! The crate is `no_std` (with `alloc`) so the numerical core can be embedded
//! anywhere; file formats and the command-line tool live in the `margnet`
//! crate. Pipeline:
//!
//! 1. [`domain`] encodes raw tables into category indices.
//! 2. [`synthesis`] measures every one-way marginal, then repeatedly picks a
//!    two-way marginal with the exponential mechanism, measures it with
//!    Gaussian noise and refits the [`generator`] to all measurements, while
//!    the [`privacy`] accountant enforces the zCDP budget.
//! 3. The trained generator is sampled and decoded back into a table.
//!
//! [`evaluation`] and [`theory`] score the result.
#![cfg_attr(not(feature = "std"), no_std)]
extern crate alloc;

pub mod domain;
pub mod error;
pub mod evaluation;
pub mod gaussian;
pub mod generator;
pub mod marginal;
pub mod math;
pub mod privacy;
pub mod rng;
pub mod synthesis;
pub mod theory;

pub use error::{Error, Result};
