//! File formats, configuration and commands behind the `softras` binary.

pub mod commands;
pub mod config;
pub mod obj;
pub mod png_io;

pub use config::SceneConfig;
