pub mod c3score;
pub mod cli;
pub mod error;
pub mod evalreport;
pub mod interp;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod provenance;
pub mod simgen;
pub mod types;

pub use error::{Error, Result};
