//! File formats, the validation harness and the command-line front end for
//! `irrev-core`.

pub mod cli;
pub mod harness;
pub mod io;
