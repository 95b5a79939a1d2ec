//! Synonymity-based compression toolkit: semantic information measures,
//! rate-distortion-perception solvers for small discrete sources, and a
//! progressive image codec built on a fixed block transform.

pub mod codec;
pub mod corpus;
pub mod entropy;
pub mod error;
pub mod io;
pub mod loss;
pub mod rdp;
pub mod semsrc;
pub mod transform;

pub use error::{Error, Result};
