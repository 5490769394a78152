pub mod activation;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod oracle;
pub mod persist;
pub mod training;
pub mod verify;

pub use activation::{HiddenUnits, StateSet, UnitKind};
pub use error::{Error, Result};
pub use model::{ClassConditional, Dims, DrbmParams};
pub use persist::SavedModel;
