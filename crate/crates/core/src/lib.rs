pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod head;
pub mod io;
pub mod objectives;
pub mod par;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
