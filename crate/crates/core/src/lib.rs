pub mod arm;
pub mod error;
pub mod executor;
pub mod geometry;
pub mod harness;
pub mod ikinqp;
pub mod policy;
pub mod qp;
pub mod sim;

pub use error::{Error, Result};
