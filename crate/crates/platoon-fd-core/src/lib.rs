//! Fundamental diagrams (flow–density–speed relations) derived from platoon
//! vehicle trajectories.
//!
//! The crate turns time-aligned positions of an N-vehicle platoon into
//! empirical fundamental-diagram data and a calibrated triangular FD:
//!
//! 1. [`trajectory`] — the canonical in-memory dataset: ordered vehicles,
//!    uniformly sampled frames, driver-mode metadata, validation.
//! 2. [`edie`] — instantaneous traffic states over the moving scalene
//!    trapezoid spanned by consecutive observations of the platoon, plus a
//!    generic convex-polygon evaluator used as a cross-check oracle.
//! 3. [`aggregate`] — bivariate bin-averaging of scattered states onto
//!    density and speed grids.
//! 4. [`tfd`] — triangular fundamental diagram, the normalized dual-RMSE
//!    calibration objective, bounded derivative-free calibration, and the
//!    bin-width sensitivity sweep.
//! 5. [`segment`] — acceleration / deceleration / stable segmentation of the
//!    platoon-average speed profile via persistence-filtered extrema.
//! 6. [`synthetic`] — constant-time-headway platoon generator whose
//!    fundamental diagram is known in closed form, for end-to-end validation.
//!
//! Internal units are SI throughout (m, s, veh/m, veh/s); reporting units
//! (veh/km, km/h, veh/h) appear only in binned series and FD parameters, with
//! the conversions collected in [`units`].
//!
//! The crate is `no_std`-compatible (requires `alloc`); disable the default
//! `std` feature and enable `libm` for freestanding targets.

#![cfg_attr(not(feature = "std"), no_std)]
#![deny(unsafe_code)]
#![warn(missing_docs)]

extern crate alloc;

pub mod aggregate;
pub mod edie;
mod math;
mod optim;
pub mod segment;
pub mod synthetic;
pub mod tfd;
pub mod trajectory;
pub mod units;
