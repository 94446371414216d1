//! Companion crate to `opq-core`: on-disk formats, a reproducible experiment
//! harness for streaming quantization runs, and the `opq` command-line tool.

#![deny(unsafe_code)]

pub mod harness;
pub mod io;
