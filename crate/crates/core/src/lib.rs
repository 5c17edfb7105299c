//! Wearable heart-rate sequence models for cardiovascular risk prediction.
//!
//! The crate covers the whole experiment pipeline: sensor-stream encoding
//! ([`sensorstream`]), a planted-signal synthetic cohort ([`synthcohort`]),
//! hand-engineered HRV features ([`biomarkers`]), a reverse-mode tensor
//! engine ([`autodiff`]), the convolutional + bidirectional LSTM model and
//! its pretraining variants ([`model`]), training ([`train`]) and ROC-based
//! evaluation harnesses ([`eval`]).

pub mod autodiff;
pub mod biomarkers;
pub mod cache;
pub mod checkpoint;
mod codec;
pub mod config;
pub mod eval;
pub mod model;
pub mod par;
pub mod real;
pub mod sensorstream;
pub mod synthcohort;
pub mod train;
pub mod util;

pub use real::Real;
