//! File formats, parallel evaluation and the command-line front end for
//! [`gaitkit_core`].

#![warn(missing_debug_implementations)]

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod heatmap_io;
pub mod parallel;

pub use error::{FormatError, Result};
