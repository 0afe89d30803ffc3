//! Valve stiction detection and early prediction from controller output (OP)
//! and process variable (PV) time series.
//!
//! The pipeline runs: [`series`] (ingest and resample) → [`labeling`]
//! (slope-ratio or Hotelling T² window labels) → [`windowing`] (model-ready
//! samples) → [`models`] (CNN, LSTM, CNN-SVM on the [`neural`] toolkit) →
//! [`evaluation`]. [`loopsim`] generates labeled synthetic loops.

pub mod evaluation;
pub mod labeling;
pub mod loopsim;
pub mod models;
pub mod neural;
pub mod series;
pub mod tensor;
pub mod windowing;
