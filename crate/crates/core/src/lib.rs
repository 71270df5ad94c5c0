pub mod collision;
pub mod error;
pub mod harness;
pub mod hypo;
pub mod kinetic;
pub mod linearized;
pub mod maxwell_stefan;
pub mod mixture;
pub mod numerics;

pub use error::{Error, Result};
