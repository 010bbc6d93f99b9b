//! Exterior algebra at points, p-convexity checks, weight constructions and a
//! cubical cochain solver for weighted L² estimates of `du = f`.

pub mod cli;
pub mod convexity;
pub mod discrete;
pub mod exterior;
pub mod fieldexpr;
pub mod solver;
pub mod weights;
