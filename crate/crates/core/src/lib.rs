//! Worst-case analysis and simulation of DIGing with local updates.

pub mod error;
pub mod function_class;
pub mod generator;
pub mod graph;
pub mod pep;
pub mod sdp;
pub mod sim;
pub mod sweep;

pub use error::{Error, Result};
