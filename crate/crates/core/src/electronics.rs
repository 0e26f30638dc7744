//! Balanced photodiode readout and the transimpedance/source-follower chain.
//!
//! Units: power mW, current mA, resistance kΩ, voltage V.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutParams {
    /// Photodiode responsivity, mA/mW.
    pub resp: f64,
    /// Transimpedance gain, kΩ.
    pub rt: f64,
    /// Source resistor, kΩ.
    pub rs: f64,
    /// Voltage offset, V.
    pub bv: f64,
    /// Bias current added after the source resistor, mA.
    pub bc: f64,
}

impl ReadoutParams {
    pub fn new(resp: f64, rt: f64, rs: f64, bv: f64, bc: f64) -> Result<Self> {
        if !(resp > 0.0 && rt > 0.0 && rs > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "readout resp={resp} rt={rt} rs={rs}"
            )));
        }
        Ok(Self { resp, rt, rs, bv, bc })
    }

    /// Hidden-layer chain used by the 2-3-1 network.
    pub fn hidden_layer() -> Self {
        Self {
            resp: 0.9,
            rt: 15_000.0,
            rs: 1.0,
            bv: 4.0,
            bc: 0.0,
        }
    }

    /// Output-layer chain used by the 2-3-1 network.
    pub fn output_layer() -> Self {
        Self {
            resp: 0.9,
            rt: 3_000.0,
            rs: 1.0,
            bv: 0.0,
            bc: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightBankReadout {
    pub thru_power: f64,
    pub drop_power: f64,
}

/// Thru-positive balanced current.
pub fn balanced_current(readout: WeightBankReadout, resp: f64) -> f64 {
    resp * (readout.thru_power - readout.drop_power)
}

pub fn amplifier_chain(c: f64, p: &ReadoutParams) -> f64 {
    (p.rt * c + p.bv) / p.rs + p.bc
}
