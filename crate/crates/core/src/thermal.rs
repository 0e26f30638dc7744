//! Linearised heater-to-resonance model with thermal crosstalk.
//!
//! The canonical drive quantity is dissipated heater power in mW. A ring
//! `j` moves by `Σ_k K[j][k] · ΔP_k` nm where `ΔP_k` is channel `k`'s power
//! above its bias.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ChannelId = u32;

pub const DEFAULT_HEATER_RESISTANCE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriveUnit {
    #[serde(rename = "mW")]
    MilliWatt,
    #[serde(rename = "mA")]
    MilliAmp,
    #[serde(rename = "V")]
    Volt,
}

/// Per-channel drive.
///
/// In mW the values are deltas above the channel bias. In mA or V they are
/// the absolute heater current or voltage, which is converted to power
/// before the bias power is subtracted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveState {
    pub unit: DriveUnit,
    pub values: BTreeMap<ChannelId, f64>,
}

impl DriveState {
    pub fn power_deltas(values: impl IntoIterator<Item = (ChannelId, f64)>) -> Self {
        Self {
            unit: DriveUnit::MilliWatt,
            values: values.into_iter().collect(),
        }
    }

    pub fn zero() -> Self {
        Self::power_deltas([])
    }
}

pub fn convert_drive(value: f64, from: DriveUnit, to: DriveUnit, resistance: f64) -> Result<f64> {
    if !(resistance > 0.0) {
        return Err(Error::InvalidParameter(format!("heater resistance {resistance}")));
    }
    if from == DriveUnit::MilliWatt && value < 0.0 {
        return Err(Error::Domain(format!("negative power {value} mW")));
    }
    let volts = match from {
        DriveUnit::Volt => value,
        DriveUnit::MilliAmp => value * resistance / 1000.0,
        DriveUnit::MilliWatt => (value * resistance / 1000.0).sqrt(),
    };
    Ok(match to {
        DriveUnit::Volt => volts,
        DriveUnit::MilliAmp => volts / resistance * 1000.0,
        DriveUnit::MilliWatt => volts * volts / resistance * 1000.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalGroup {
    channels: Vec<ChannelId>,
    /// Rows are rings, columns follow `channels`.
    k: Vec<Vec<f64>>,
    heat_bias: Vec<f64>,
    heater_resistance: f64,
}

impl ThermalGroup {
    /// Hidden-truth group: K must be non-negative and strictly diagonally
    /// dominant.
    pub fn new(
        channels: Vec<ChannelId>,
        k: Vec<Vec<f64>>,
        heat_bias: Vec<f64>,
        heater_resistance: f64,
    ) -> Result<Self> {
        Self::checked(channels, k, heat_bias, heater_resistance, true)
    }

    /// Group built from a measured K, which noise may leave slightly short
    /// of diagonal dominance.
    pub fn from_estimate(
        channels: Vec<ChannelId>,
        k: Vec<Vec<f64>>,
        heat_bias: Vec<f64>,
        heater_resistance: f64,
    ) -> Result<Self> {
        Self::checked(channels, k, heat_bias, heater_resistance, false)
    }

    fn checked(
        channels: Vec<ChannelId>,
        k: Vec<Vec<f64>>,
        heat_bias: Vec<f64>,
        heater_resistance: f64,
        dominance: bool,
    ) -> Result<Self> {
        let nc = channels.len();
        if heat_bias.len() != nc {
            return Err(Error::InvalidParameter(format!(
                "{} heat biases for {nc} channels",
                heat_bias.len()
            )));
        }
        let mut seen = channels.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != nc {
            return Err(Error::InvalidParameter("duplicate channel id".into()));
        }
        if !(heater_resistance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "heater resistance {heater_resistance}"
            )));
        }
        if heat_bias.iter().any(|b| !(*b >= 0.0)) {
            return Err(Error::InvalidParameter("negative heat bias".into()));
        }
        for (j, row) in k.iter().enumerate() {
            if row.len() != nc {
                return Err(Error::InvalidParameter(format!("K row {j} has {} columns", row.len())));
            }
            if row.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidParameter(format!("K row {j} has a negative entry")));
            }
            if dominance && j < nc {
                let d = row[j];
                if row.iter().enumerate().any(|(c, v)| c != j && *v >= d) {
                    return Err(Error::InvalidParameter(format!(
                        "K row {j} is not diagonally dominant"
                    )));
                }
            }
        }
        Ok(Self {
            channels,
            k,
            heat_bias,
            heater_resistance,
        })
    }

    pub fn channels(&self) -> &[ChannelId] {
        &self.channels
    }

    pub fn k(&self) -> &[Vec<f64>] {
        &self.k
    }

    pub fn heat_bias(&self) -> &[f64] {
        &self.heat_bias
    }

    pub fn heater_resistance(&self) -> f64 {
        self.heater_resistance
    }

    pub fn n_rings(&self) -> usize {
        self.k.len()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n_rings().min(self.channels.len()))
            .map(|j| self.k[j][j])
            .collect()
    }

    /// Copy with every off-diagonal entry zeroed.
    pub fn diagonal_only(&self) -> Self {
        let mut g = self.clone();
        for (j, row) in g.k.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                if c != j {
                    *v = 0.0;
                }
            }
        }
        g
    }

    pub fn channel_index(&self, id: ChannelId) -> Result<usize> {
        self.channels
            .iter()
            .position(|&c| c == id)
            .ok_or(Error::UnknownChannel(id))
    }

    /// Power above bias per channel, in `channels` order.
    pub fn delta_powers(&self, drive: &DriveState) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.channels.len()];
        for (&id, &v) in &drive.values {
            let i = self.channel_index(id)?;
            let bias = self.heat_bias[i];
            let total = match drive.unit {
                DriveUnit::MilliWatt => bias + v,
                unit => {
                    if v < 0.0 {
                        return Err(Error::NegativePower { channel: id, power: v });
                    }
                    convert_drive(v, unit, DriveUnit::MilliWatt, self.heater_resistance)?
                }
            };
            if total < 0.0 {
                return Err(Error::NegativePower { channel: id, power: total });
            }
            out[i] = total - bias;
        }
        Ok(out)
    }

    /// Ring shifts for per-channel power deltas given in `channels` order.
    pub fn shifts_from_deltas(&self, deltas: &[f64]) -> Vec<f64> {
        self.k
            .iter()
            .map(|row| row.iter().zip(deltas).map(|(k, p)| k * p).sum())
            .collect()
    }

    pub fn wavelength_shifts(&self, drive: &DriveState) -> Result<Vec<f64>> {
        Ok(self.shifts_from_deltas(&self.delta_powers(drive)?))
    }

    /// Solves `K ΔP = Δλ`; requires a square K.
    pub fn deltas_for_shifts(&self, target: &[f64]) -> Result<Vec<f64>> {
        let n = self.channels.len();
        if self.n_rings() != n || target.len() != n {
            return Err(Error::Singular);
        }
        let m = DMatrix::from_fn(n, n, |r, c| self.k[r][c]);
        let x = m
            .lu()
            .solve(&DVector::from_column_slice(target))
            .ok_or(Error::Singular)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular);
        }
        for (i, dp) in x.iter().enumerate() {
            let total = self.heat_bias[i] + dp;
            if total < -1e-12 {
                return Err(Error::NegativePower {
                    channel: self.channels[i],
                    power: total,
                });
            }
        }
        Ok(x.iter().copied().collect())
    }

    pub fn drive_for_shifts(&self, target: &[f64]) -> Result<DriveState> {
        let d = self.deltas_for_shifts(target)?;
        Ok(DriveState::power_deltas(
            self.channels.iter().copied().zip(d),
        ))
    }
}

/// Hidden-truth crosstalk of the basic calibration experiment:
/// `200 · |0.1·N(0,1) + 0.1 + 0.5·I|`, redrawn until diagonally dominant.
pub fn basic_random_k<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    loop {
        let k: Vec<Vec<f64>> = (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(rng);
                        let eye = if r == c { 0.5 } else { 0.0 };
                        200.0 * (0.1 * z + 0.1 + eye).abs()
                    })
                    .collect()
            })
            .collect();
        if dominant(&k) {
            return k;
        }
    }
}

/// Hidden-truth crosstalk of the cascaded experiment:
/// `|scale·N(0,1) + diag·I|`, redrawn until diagonally dominant.
pub fn cascaded_random_k<R: Rng + ?Sized>(n: usize, diag: f64, scale: f64, rng: &mut R) -> Vec<Vec<f64>> {
    loop {
        let k: Vec<Vec<f64>> = (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| {
                        let z: f64 = StandardNormal.sample(rng);
                        let eye = if r == c { diag } else { 0.0 };
                        (scale * z + eye).abs()
                    })
                    .collect()
            })
            .collect();
        if dominant(&k) {
            return k;
        }
    }
}

fn dominant(k: &[Vec<f64>]) -> bool {
    k.iter()
        .enumerate()
        .all(|(j, row)| row.iter().enumerate().all(|(c, v)| c == j || *v < row[j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn group() -> ThermalGroup {
        ThermalGroup::new(
            vec![5, 3, 6],
            vec![
                vec![100.0, 20.0, 5.0],
                vec![10.0, 120.0, 30.0],
                vec![0.0, 25.0, 90.0],
            ],
            vec![2.5, 2.0, 1.5],
            DEFAULT_HEATER_RESISTANCE,
        )
        .unwrap()
    }

    #[test]
    fn unit_conversions() {
        let r = 1000.0;
        assert_relative_eq!(convert_drive(1.0, DriveUnit::Volt, DriveUnit::MilliWatt, r).unwrap(), 1.0);
        assert_relative_eq!(convert_drive(1.0, DriveUnit::Volt, DriveUnit::MilliAmp, r).unwrap(), 1.0);
        let v = convert_drive(2.7, DriveUnit::MilliWatt, DriveUnit::Volt, 250.0).unwrap();
        assert_relative_eq!(
            convert_drive(v, DriveUnit::Volt, DriveUnit::MilliWatt, 250.0).unwrap(),
            2.7,
            epsilon = 1e-12
        );
        assert_eq!(convert_drive(0.0, DriveUnit::MilliAmp, DriveUnit::Volt, r).unwrap(), 0.0);
        assert!(convert_drive(1.0, DriveUnit::Volt, DriveUnit::MilliWatt, 0.0).is_err());
        assert!(convert_drive(-1.0, DriveUnit::MilliWatt, DriveUnit::Volt, r).is_err());
    }

    #[test]
    fn single_channel_shift() {
        let g = group();
        let s = g
            .wavelength_shifts(&DriveState::power_deltas([(3, 0.01)]))
            .unwrap();
        assert_relative_eq!(s[1], 1.2, epsilon = 1e-12);
        assert_relative_eq!(s[0], 0.2, epsilon = 1e-12);
        assert_relative_eq!(s[2], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn unknown_channel_and_negative_power() {
        let g = group();
        assert_eq!(
            g.wavelength_shifts(&DriveState::power_deltas([(9, 0.1)])),
            Err(Error::UnknownChannel(9))
        );
        assert!(matches!(
            g.wavelength_shifts(&DriveState::power_deltas([(6, -2.0)])),
            Err(Error::NegativePower { channel: 6, .. })
        ));
    }

    #[test]
    fn current_drive_subtracts_bias_power() {
        let g = group();
        // 2 mA through 1 kΩ dissipates 4 mW; channel 5 is biased at 2.5 mW.
        let d = DriveState {
            unit: DriveUnit::MilliAmp,
            values: [(5, 2.0)].into_iter().collect(),
        };
        assert_relative_eq!(g.delta_powers(&d).unwrap()[0], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn inverse_round_trip() {
        let g = group();
        let t = [0.3, -0.1, 0.05];
        let d = g.drive_for_shifts(&t).unwrap();
        let back = g.wavelength_shifts(&d).unwrap();
        for (a, b) in t.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
        let diag = g.diagonal_only();
        let dp = diag.deltas_for_shifts(&t).unwrap();
        assert_relative_eq!(dp[1], -0.1 / 120.0, epsilon = 1e-15);
    }

    #[test]
    fn infeasible_target_names_channel() {
        assert!(matches!(
            group().drive_for_shifts(&[-1000.0, 0.0, 0.0]),
            Err(Error::NegativePower { channel: 5, .. })
        ));
    }

    #[test]
    fn basic_generator_statistics() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut diag = 0.0;
        let mut off = 0.0;
        let trials = 400;
        for _ in 0..trials {
            let k = basic_random_k(4, &mut rng);
            for (r, row) in k.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    if r == c {
                        diag += v;
                    } else {
                        off += v;
                    }
                }
            }
        }
        let diag = diag / (4 * trials) as f64;
        let off = off / (12 * trials) as f64;
        // E|0.1 z + 0.6| * 200 ≈ 120; E|0.1 z + 0.1| * 200 ≈ 23.3
        assert!((diag - 120.0).abs() < 3.0, "{diag}");
        assert!((off - 23.3).abs() < 1.5, "{off}");
    }
}
