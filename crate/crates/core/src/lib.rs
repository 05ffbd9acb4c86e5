pub mod config;
pub mod envs;
pub mod error;
pub mod learner;
pub mod mixers;
pub mod oracle;
pub mod run;
pub mod tensor;
pub mod verify;
pub mod vsp;

pub use error::{Error, Result};
