pub mod angle;
pub mod dti;
pub mod error;
pub mod eval;
pub mod filters;
pub mod gradients;
pub mod io;
pub mod phantom;
pub mod phasecorr;
pub mod pipeline;
pub mod registry;
pub mod volume;

pub use error::{Error, Result};
