//! File formats, IO and the command-line front end for `margnet-core`.

pub mod checkpoint;
pub mod cli;
pub mod error;
pub mod io;

pub use error::{Error, Result};
