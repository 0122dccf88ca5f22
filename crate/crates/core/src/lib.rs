//! Transfer of density-matrix elements through isometric channels: memory
//! of the transferred element on the rest of the source state, transfer
//! constraints, analytic memory bounds and a numerical optimizer that probes
//! them.

pub mod bounds;
pub mod channel;
pub mod constraints;
pub mod forms;
pub mod memory;
pub mod optimizer;
pub mod qcore;
pub mod scenarios;
