//! File formats, dataset layout, reports and the command-line driver.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod labels;
pub mod par;
pub mod ppm;
pub mod render;
pub mod report;
pub mod timing;
pub mod weights;

pub use error::{Error, Result};
