//! Digital twin of an NV-diamond AC/DC current comparator.
//!
//! An air-gapped high-permeability toroid carries primary and secondary
//! ratio windings; a diamond magnetometer in the gap reads the residual
//! flux that a ratio error leaves behind. This crate models the magnetic
//! circuit ([`magcore`]), the sensor physics and its noise ([`nvsensor`],
//! [`noise`]), the extraction and stability statistics ([`dsp`], [`fit`],
//! [`spectrum`]), and wires them into full measurement campaigns
//! ([`sim`]) with flat-file IO ([`config`], [`io`]).

pub mod config;
pub mod dsp;
pub mod error;
pub mod fit;
pub mod io;
pub mod magcore;
pub mod noise;
pub mod nvsensor;
pub mod sim;
pub mod spectrum;
pub mod timeseries;

pub use error::{Error, Result};
pub use timeseries::TimeSeries;
