pub mod affine;
pub mod benchmarks;
pub mod controllers;
pub mod error;
pub mod exec;
pub mod polytope;
pub mod qp;
pub mod rci;
pub mod simulator;
pub mod sparse;
pub mod system;
pub mod template;

pub use error::{Error, Result};
