//! Multi-label chest x-ray classification: a densely connected convolutional
//! encoder feeding either independent per-label sigmoid heads or an LSTM
//! that predicts labels one at a time, conditioned on the previous ones.

pub mod autodiff;
pub mod error;

pub use error::{Error, Result};
pub mod data;
pub mod decoders;
pub mod encoder;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod training;
pub mod verify;
