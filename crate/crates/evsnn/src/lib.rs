//! File formats, parallel execution and the command-line front end for
//! [`evsnn_core`].

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod event_csv;
pub mod metrics;
pub mod parallel;

pub use error::{Error, Result};
