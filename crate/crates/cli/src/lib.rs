//! File formats, checkpoints and the command-line pipeline around
//! `ftir-unmix-core`.

pub mod args;
pub mod checkpoint;
pub mod commands;
pub mod cube_io;
pub mod error;
pub mod manifest;
pub mod weights_io;
