//! Output handling and plot-data writers behind the `irtlong` binary.

pub mod output;
pub mod plot;
