pub mod cli;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod parallel;
pub mod selfassess;
pub mod strategies;
pub mod text;
pub mod train;

pub use error::{Error, Result};
