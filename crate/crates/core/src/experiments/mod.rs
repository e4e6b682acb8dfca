//! End-to-end drivers for the synthetic curve and face studies.

pub mod curves;
pub mod faces;
