pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gamma_div;
pub mod generate;
pub mod kv;
pub mod metrics;
pub mod models;
pub mod oracle;
pub mod sampling;
pub mod special;
pub mod student_t;
pub mod svg;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
