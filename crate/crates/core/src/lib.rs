pub mod bench;
pub mod clustering;
pub mod demos;
pub mod dsl;
pub mod env;
pub mod error;
pub mod flowchart;
pub mod interpret;
pub mod lpp;
pub mod pipeline;
pub mod policy;
pub mod solver;

pub use error::{Error, Result};
