//! Learned allocation of operator attention across a fleet of navigating
//! robots.

pub mod error;
pub mod experiment;
pub mod expert;
pub mod fleet;
pub mod gridnav;
pub mod imitation;
pub mod policy;
pub mod rng;
pub mod scorers;
pub mod tinynet;
pub mod value;

pub use error::{Error, Result};
