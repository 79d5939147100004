//! Scenario schema, built-in experiment library, run orchestration, and
//! file outputs for the kinwave simulator.

pub mod builtin;
pub mod output;
pub mod riemann_io;
pub mod schema;
pub mod sim;
pub mod sweep;
pub mod verify;
