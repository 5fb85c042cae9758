pub mod answer;
pub mod das;
pub mod error;
pub mod metrics;
pub mod numcore;
pub mod qgmodel;
pub mod textdata;
pub mod training;

pub use error::{Error, Result};
