pub mod bae;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod forward;
pub mod mesh;
pub mod optimizer;
pub mod posterior;
pub mod prior;
pub mod sparse;
pub mod util;

pub use error::{Error, Result};
