pub mod corpus;
pub mod dense;
pub mod error;
pub mod index;
pub mod search;
pub mod service;
pub mod sparse;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
