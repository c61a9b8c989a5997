//! Crisp edge detection toolkit.
//!
//! * [`autodiff`]: dense grids with reverse-mode differentiation.
//! * [`loss`]: weighted cross entropy, boundary tracing and texture
//!   suppression terms, with a naive reference path.
//! * [`cofusion`]: pixel-wise attention fusion of side outputs.
//! * [`net`]: a small multi-stage side-output edge network.
//! * [`train`]: SGD with momentum, weight decay and step schedule.
//! * [`synth`]: synthetic textured-shape dataset with simulated annotators.
//! * [`eval`]: NMS + thinning, tolerance matching, ODS/OIS.

pub mod autodiff;
pub mod cofusion;
pub mod config;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod grid;
pub mod loss;
pub mod net;
pub mod par;
pub mod pgm;
pub mod rng;
pub mod synth;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use grid::Grid;
