//! Radial Keller-Segel blow-up laboratory.

pub mod banded;
pub mod cli;
pub mod closed;
pub mod config;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod operators;
pub mod profiles;

pub use error::*;
pub use grid::{FieldPair, GridSpec, Normalization, Parity, RadialField, RadialGrid, Representation};
