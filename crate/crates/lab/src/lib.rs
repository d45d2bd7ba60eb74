//! File formats, capture service and command-line pipeline built on
//! `follower-lab-core`.
#![allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN alongside the bound

pub mod align;
pub mod capture;
pub mod cli;
pub mod error;
pub mod report;
pub mod session;
pub mod svg;

pub use error::{LabError, Result};
