//! Single-stage quantitative photoacoustic tomography in two dimensions.
//!
//! The crate couples a stabilized finite-element discrete-ordinates solver for
//! the stationary radiative transfer equation ([`transport`]) with the explicit
//! solution formula of the 2D wave equation ([`acoustics`]) and reconstructs the
//! absorption coefficient from boundary pressure data by proximal-gradient
//! minimization of a Tikhonov functional ([`inversion`]). The classical
//! two-stage pipeline (backprojection, then optical inversion) is included as a
//! baseline. [`experiment`] wires phantoms, simulation, noise and file formats.

pub mod acoustics;
pub mod checks;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod heating;
pub mod inversion;
pub mod sparse;
pub mod transport;

pub use error::{QpatError, Result};
