//! The KAM cycle (core transformations) and the iteration driver.

pub mod core;
pub mod driver;
