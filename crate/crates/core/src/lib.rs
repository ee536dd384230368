pub mod data;
pub mod dates;
pub mod embedding;
pub mod forecasting;
pub mod error;
pub mod indices;
pub mod io;
pub mod kv;
pub mod model;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
