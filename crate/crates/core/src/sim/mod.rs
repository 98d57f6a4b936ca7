//! Simulation harness: synthetic pools, dataset ingestion, exact
//! enumeration oracles and the experiment runner.

pub mod enumerate;
pub mod experiment;
pub mod io;
pub mod libsvm;
pub mod pool;
pub mod theorems;
