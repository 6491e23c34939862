//! Dataset formats, configuration, the simulated dataset writer and the
//! threaded batch pipeline behind the `lio` command.

pub mod config;
pub mod evaluate;
pub mod formats;
pub mod manifest;
pub mod pipeline;
pub mod simulate;
