//! Multi-commodity kinematic wave models of network vehicular traffic.
//!
//! The crate provides the building blocks of a first-order (Godunov /
//! supply-demand) macroscopic traffic simulator:
//!
//! * [`fd`] — fundamental diagram families and the demand/supply primitives,
//! * [`riemann`] — the exact Riemann solver for the inhomogeneous-link model,
//! * [`junction`] — merge, diverge, and general junction flux rules,
//! * [`mixed`] — the two-class (mixed) kinematic wave model,
//! * [`network`] — the multi-commodity network loading engine,
//! * [`analysis`] — cumulative curves, travel times, convergence rates,
//!   equilibrium detection, and oscillation fitting.
//!
//! The crate is `no_std`-compatible (with `alloc`); all I/O, file formats,
//! and the command line live in the companion `kinwave-cli` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
pub mod fd;
pub mod junction;
pub(crate) mod math;
pub mod mixed;
pub mod network;
pub mod riemann;
pub mod units;

pub use fd::FdCurve;
pub use riemann::RoadState;
pub use units::UnitSystem;
