//! Keypoint preprocessing, LSTM seq2seq gesture models and motion retargeting.

pub mod data;
pub mod experiments;
pub mod featurize;
pub mod geometry;
pub mod io;
pub mod models;
pub mod nn;
pub mod retarget;
pub mod skeleton;
