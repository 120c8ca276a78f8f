//! Virtual acoustic sensing toolkit.
//!
//! Estimates the acoustic pressure at "virtual" microphone positions from
//! physical monitoring microphones via linear observation filters, models the
//! operating correlation matrices as superpositions of per-source calibration
//! matrices, and tracks the relative source strengths in real time by fitting
//! those superpositions to measured correlation matrices.

pub mod config;
pub mod corr;
pub mod decomp;
pub mod error;
pub mod filter;
pub mod io;
pub mod signal;
pub mod sim;
pub mod spectral;
pub mod track;

pub use error::{Error, Result};
