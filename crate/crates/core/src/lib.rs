//! Simulation and closed-form analysis of a feedback oscillator loop: a
//! saturation inside an inner positive-feedback loop, enclosed by a
//! negative-feedback loop around a lag cascade or an integrator.
//!
//! Depending on the gains the loop is a relay (relaxation) oscillator with a
//! fixed amplitude and tunable frequency, or a marginally stable linear loop
//! with a fixed frequency and free amplitude.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod blocks;
pub mod error;
pub mod profiler;
pub mod simulator;
pub mod waveform;

pub use error::{Error, ErrorClass, Result};
