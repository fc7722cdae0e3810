pub mod cli;
pub mod error;
pub mod game;
pub mod linalg;
pub mod riccati_ergodic;
pub mod riccati_finite;
pub mod simulate;
pub mod tolerances;
pub mod turnpike;
pub mod verify;

pub use error::{Error, Result};
