pub mod barriers;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod harness;
pub mod human;
pub mod jcf;
pub mod linalg;
pub mod optkernel;
pub mod oracle;
pub mod scf;

pub use error::{Error, Result};
pub use linalg::{SymMat, Vector};
