//! Built-in experiment worlds.
//!
//! Each world supplies the pieces the tick engine is generic over: a
//! communication topology, per-node component costs over scalar noises,
//! the noise drift laws, and the closed-form tracker of the true
//! time-varying optimizer used for error measurement.

pub mod least_squares;
pub mod waypoint;
