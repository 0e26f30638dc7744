//! Simulation, calibration and training toolkit for thermally tuned
//! microring weight banks.
//!
//! The hidden-plant simulator lives in [`device`]; everything under
//! [`calibration`] only talks to it through measured spectra.

// `!(x > 0.0)` style checks reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod calibration;
pub mod device;
pub mod electronics;
pub mod error;
pub mod mdm;
pub mod optics;
pub mod seeds;
pub mod spectrum;
pub mod thermal;
pub mod training;

pub use calibration::{CalibrationModel, ControllerConfig, RingRole};
pub use analysis::FilterShape;
pub use device::{DeviceNode, FilterBank, HiddenDevice, OsaConfig, Port, Tap};
pub use electronics::{ReadoutParams, WeightBankReadout};
pub use error::{Error, Result};
pub use optics::{CouplerMatrix, RingModel, RingPhysical};
pub use spectrum::Spectrum;
pub use thermal::{ChannelId, DriveState, DriveUnit, ThermalGroup};
pub use training::{Activation, TrainingConfig, VirtualParams};

