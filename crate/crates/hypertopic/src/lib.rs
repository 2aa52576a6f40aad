//! File formats, checkpoints, reports and the command-line driver for the
//! models in `hypertopic-core`.

pub mod checkpoint;
pub mod cli;
pub mod io;
pub mod report;
pub mod synthetic;
