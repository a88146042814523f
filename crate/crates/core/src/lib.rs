pub mod diffcore;
pub mod cli;
pub mod databundle;
pub mod error;
pub mod evalkit;
pub mod inference;
pub mod policy;
pub mod rewards;
pub mod trainer;

pub use error::{Error, Result};
