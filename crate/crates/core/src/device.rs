//! Simulated photonic devices: filter banks composed into cascades and
//! splitters, read out by a noisy optical spectrum analyser.
//!
//! A [`HiddenDevice`] is the ground-truth plant. Calibration code only sees
//! it through an [`Instrument`], which sets heater powers and returns
//! spectra.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::RingModel;
use crate::seeds;
use crate::spectrum::{mw_to_dbm, Spectrum};
use crate::thermal::{self, ChannelId, DriveState, ThermalGroup};

/// Absolute heater powers in mW; channels not listed are off.
pub type HeaterPowers = BTreeMap<ChannelId, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BankMode {
    /// Thru and drop ports both observable.
    Dendrite,
    /// Only the thru port propagates; dropped light is lost.
    Axon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub rings: Vec<RingModel>,
    /// Primary heater of each ring.
    pub channels: Vec<ChannelId>,
    pub mode: BankMode,
}

impl FilterBank {
    pub fn new(rings: Vec<RingModel>, channels: Vec<ChannelId>, mode: BankMode) -> Result<Self> {
        if rings.len() != channels.len() || rings.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "{} rings for {} channels",
                rings.len(),
                channels.len()
            )));
        }
        Ok(Self { rings, channels, mode })
    }

    fn thru(&self, lam: f64, shifts: &[f64]) -> f64 {
        self.rings
            .iter()
            .zip(shifts)
            .map(|(r, s)| r.shifted(*s).thru(lam))
            .product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceNode {
    Bank(FilterBank),
    /// Children in series; each passes its thru output to the next.
    Cascade(Vec<DeviceNode>),
    /// Equal power split into parallel children.
    Splitter(Vec<DeviceNode>),
}

impl DeviceNode {
    fn visit_banks<'a>(&'a self, out: &mut Vec<&'a FilterBank>) {
        match self {
            DeviceNode::Bank(b) => out.push(b),
            DeviceNode::Cascade(c) | DeviceNode::Splitter(c) => {
                for n in c {
                    n.visit_banks(out)
                }
            }
        }
    }

    /// Banks in depth-first order; this order defines bank and ring indices.
    pub fn banks(&self) -> Vec<&FilterBank> {
        let mut v = Vec::new();
        self.visit_banks(&mut v);
        v
    }

    fn validate(&self) -> Result<()> {
        match self {
            DeviceNode::Bank(_) => Ok(()),
            DeviceNode::Cascade(c) | DeviceNode::Splitter(c) if c.is_empty() => {
                Err(Error::InvalidParameter("empty cascade or splitter".into()))
            }
            DeviceNode::Cascade(c) => {
                for (i, n) in c.iter().enumerate() {
                    if i + 1 < c.len() && matches!(n, DeviceNode::Splitter(_)) {
                        return Err(Error::InvalidParameter(
                            "a splitter can only end a cascade".into(),
                        ));
                    }
                    n.validate()?;
                }
                Ok(())
            }
            DeviceNode::Splitter(c) => c.iter().try_for_each(|n| n.validate()),
        }
    }

    /// Propagates `incident` power at `lam`; returns the power leaving the
    /// node's thru path and records the tap power when passing it.
    fn propagate(
        &self,
        incident: f64,
        lam: f64,
        shifts: &[f64],
        cursor: &mut (usize, usize),
        tap: Tap,
        seen: &mut Option<f64>,
    ) -> f64 {
        match self {
            DeviceNode::Bank(b) => {
                let (bank, ring) = *cursor;
                let n = b.rings.len();
                let t = b.thru(lam, &shifts[ring..ring + n]);
                if bank == tap.bank {
                    *seen = Some(match tap.port {
                        Port::Thru => incident * t,
                        Port::Drop => incident * (1.0 - t),
                    });
                }
                *cursor = (bank + 1, ring + n);
                incident * t
            }
            DeviceNode::Cascade(c) => c.iter().fold(incident, |x, n| {
                n.propagate(x, lam, shifts, cursor, tap, seen)
            }),
            DeviceNode::Splitter(c) => {
                let share = incident / c.len() as f64;
                for n in c {
                    n.propagate(share, lam, shifts, cursor, tap, seen);
                }
                0.0
            }
        }
    }

    /// Fraction of root power reaching `bank` before any filtering.
    fn split_fraction(&self, bank: usize, cursor: &mut usize, acc: f64) -> Option<f64> {
        match self {
            DeviceNode::Bank(_) => {
                let hit = *cursor == bank;
                *cursor += 1;
                hit.then_some(acc)
            }
            DeviceNode::Cascade(c) => c
                .iter()
                .fold(None, |f, n| f.or(n.split_fraction(bank, cursor, acc))),
            DeviceNode::Splitter(c) => {
                let a = acc / c.len() as f64;
                c.iter()
                    .fold(None, |f, n| f.or(n.split_fraction(bank, cursor, a)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Port {
    Thru,
    Drop,
}

/// An observable output: a bank (depth-first index) and one of its ports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tap {
    pub bank: usize,
    pub port: Port,
}

impl Tap {
    pub fn thru(bank: usize) -> Self {
        Self { bank, port: Port::Thru }
    }

    pub fn drop(bank: usize) -> Self {
        Self { bank, port: Port::Drop }
    }
}

impl fmt::Display for Tap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = match self.port {
            Port::Thru => "thru",
            Port::Drop => "drop",
        };
        write!(f, "bank{}.{p}", self.bank)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OsaConfig {
    /// Source power per wavelength, mW.
    pub pump_power: f64,
    /// Grid step, nm.
    pub spacing: f64,
    /// Pink-noise RMS, dB.
    pub noise_amplitude: f64,
    pub rng_seed: u64,
}

impl Default for OsaConfig {
    fn default() -> Self {
        Self {
            pump_power: 0.1,
            spacing: 0.01,
            noise_amplitude: 0.2,
            rng_seed: 0,
        }
    }
}

impl OsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pump_power > 0.0 && self.spacing > 0.0 && self.noise_amplitude >= 0.0) {
            return Err(Error::InvalidParameter(format!("osa {self:?}")));
        }
        Ok(())
    }

    pub fn noiseless(self) -> Self {
        Self {
            noise_amplitude: 0.0,
            ..self
        }
    }
}

/// Zero-mean 1/f noise with RMS `amplitude`, by spectral shaping of white
/// Gaussian noise.
pub fn pink_noise(n: usize, amplitude: f64, seed: u64) -> Vec<f64> {
    if amplitude == 0.0 || n < 2 {
        return vec![0.0; n];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex64> = (0..n)
        .map(|_| Complex64::new(StandardNormal.sample(&mut rng), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex64::new(0.0, 0.0);
    for (k, v) in buf.iter_mut().enumerate().skip(1) {
        let f = k.min(n - k) as f64;
        *v /= f.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= amplitude / rms);
    }
    x
}

/// Ground-truth plant: device graph, thermal response and root attenuation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenDevice {
    root: DeviceNode,
    thermal: ThermalGroup,
    attenuation: f64,
    max_power: f64,
}

impl HiddenDevice {
    /// `thermal` rows must follow the depth-first ring order and its
    /// channel order must list each ring's primary heater in that order.
    pub fn new(root: DeviceNode, thermal: ThermalGroup, attenuation: f64, max_power: f64) -> Result<Self> {
        root.validate()?;
        let ring_channels: Vec<ChannelId> = root
            .banks()
            .iter()
            .flat_map(|b| b.channels.iter().copied())
            .collect();
        if ring_channels.len() != thermal.n_rings() {
            return Err(Error::InvalidParameter(format!(
                "{} rings but K has {} rows",
                ring_channels.len(),
                thermal.n_rings()
            )));
        }
        if ring_channels.as_slice() != thermal.channels() {
            return Err(Error::InvalidParameter(
                "thermal channel order must follow ring order".into(),
            ));
        }
        if !(attenuation > 0.0 && attenuation <= 1.0) || !(max_power > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "attenuation {attenuation}, max power {max_power}"
            )));
        }
        Ok(Self {
            root,
            thermal,
            attenuation,
            max_power,
        })
    }

    pub fn root(&self) -> &DeviceNode {
        &self.root
    }

    pub fn thermal(&self) -> &ThermalGroup {
        &self.thermal
    }

    pub fn attenuation(&self) -> f64 {
        self.attenuation
    }

    pub fn max_power(&self) -> f64 {
        self.max_power
    }

    /// Heater channels, sorted; the ring assignment is not revealed.
    pub fn channel_ids(&self) -> Vec<ChannelId> {
        let mut c = self.thermal.channels().to_vec();
        c.sort_unstable();
        c
    }

    pub fn rings(&self) -> Vec<RingModel> {
        self.root
            .banks()
            .iter()
            .flat_map(|b| b.rings.iter().copied())
            .collect()
    }

    fn check_tap(&self, tap: Tap) -> Result<()> {
        let banks = self.root.banks();
        match banks.get(tap.bank) {
            None => Err(Error::UnknownTap(tap.to_string())),
            Some(b) if b.mode == BankMode::Axon && tap.port == Port::Drop => {
                Err(Error::UnknownTap(format!("{tap} (axon drop is not observable)")))
            }
            Some(_) => Ok(()),
        }
    }

    /// Ring shifts for a drive expressed relative to the hidden biases.
    pub fn shifts(&self, drive: &DriveState) -> Result<Vec<f64>> {
        self.thermal.wavelength_shifts(drive)
    }

    /// Bias-relative drive equivalent to absolute heater powers.
    pub fn drive_from_powers(&self, powers: &HeaterPowers) -> Result<DriveState> {
        let mut values = BTreeMap::new();
        for (&ch, &b) in self.thermal.channels().iter().zip(self.thermal.heat_bias()) {
            let p = powers.get(&ch).copied().unwrap_or(0.0);
            values.insert(ch, p - b);
        }
        for ch in powers.keys() {
            self.thermal.channel_index(*ch)?;
        }
        Ok(DriveState::power_deltas(values))
    }

    /// True resonance wavelength of every ring (depth-first order).
    pub fn true_resonances(&self, powers: &HeaterPowers) -> Result<Vec<f64>> {
        let s = self.shifts(&self.drive_from_powers(powers)?)?;
        Ok(self.rings().iter().zip(&s).map(|(r, d)| r.lam0 + d).collect())
    }

    /// Noiseless power at `tap` per wavelength, mW.
    pub fn transmitted_power(&self, shifts: &[f64], tap: Tap, lams: &[f64], pump: f64) -> Result<Vec<f64>> {
        self.check_tap(tap)?;
        let p0 = pump * self.attenuation;
        Ok(lams
            .iter()
            .map(|&lam| {
                let mut seen = None;
                self.root
                    .propagate(p0, lam, shifts, &mut (0, 0), tap, &mut seen);
                seen.unwrap_or(0.0)
            })
            .collect())
    }

    /// Power reaching `bank` per unit pump with every ring off resonance.
    pub fn incident_fraction(&self, bank: usize) -> Result<f64> {
        self.root
            .split_fraction(bank, &mut 0, self.attenuation)
            .ok_or_else(|| Error::UnknownTap(format!("bank{bank}")))
    }

    pub fn simulate_spectrum(
        &self,
        drive: &DriveState,
        tap: Tap,
        window: (f64, f64),
        osa: &OsaConfig,
        avg_count: usize,
    ) -> Result<Spectrum> {
        osa.validate()?;
        let (start, n) = Spectrum::grid(window.0, window.1, osa.spacing)?;
        let lams: Vec<f64> = (0..n).map(|i| start + i as f64 * osa.spacing).collect();
        let clean = self.transmitted_power(&self.shifts(drive)?, tap, &lams, osa.pump_power)?;
        let avg = avg_count.max(1);
        let mut acc = vec![0.0; n];
        for k in 0..avg {
            let noise = pink_noise(n, osa.noise_amplitude, seeds::indexed_seed(osa.rng_seed, k as u64));
            for ((a, c), e) in acc.iter_mut().zip(&clean).zip(&noise) {
                *a += c * 10f64.powf(e / 10.0);
            }
        }
        Spectrum::new(
            start,
            osa.spacing,
            acc.iter().map(|p| mw_to_dbm(p / avg as f64)).collect(),
        )
    }

    pub fn channel_powers(&self, drive: &DriveState, tap: Tap, channels: &[f64], osa: &OsaConfig) -> Result<Vec<f64>> {
        self.transmitted_power(&self.shifts(drive)?, tap, channels, osa.pump_power)
    }
}

/// Measurement session on a hidden device: the only handle calibration
/// gets. Each spectrum draws fresh noise from a counter-indexed seed.
#[derive(Debug)]
pub struct Instrument<'a> {
    device: &'a HiddenDevice,
    osa: OsaConfig,
    tap: Tap,
    powers: HeaterPowers,
    count: u64,
}

impl<'a> Instrument<'a> {
    pub fn new(device: &'a HiddenDevice, osa: OsaConfig, tap: Tap) -> Result<Self> {
        osa.validate()?;
        device.check_tap(tap)?;
        Ok(Self {
            device,
            osa,
            tap,
            powers: HeaterPowers::new(),
            count: 0,
        })
    }

    pub fn channels(&self) -> Vec<ChannelId> {
        self.device.channel_ids()
    }

    pub fn osa(&self) -> &OsaConfig {
        &self.osa
    }

    pub fn tap(&self) -> Tap {
        self.tap
    }

    pub fn set_tap(&mut self, tap: Tap) -> Result<()> {
        self.device.check_tap(tap)?;
        self.tap = tap;
        Ok(())
    }

    pub fn powers(&self) -> &HeaterPowers {
        &self.powers
    }

    pub fn measurements(&self) -> u64 {
        self.count
    }

    pub fn set_powers(&mut self, powers: &HeaterPowers) -> Result<()> {
        for (&ch, &p) in powers {
            self.device.thermal.channel_index(ch)?;
            if !(p >= 0.0 && p <= self.device.max_power) {
                return Err(Error::RangeExceeded { channel: ch, power: p });
            }
        }
        self.powers = powers.clone();
        Ok(())
    }

    pub fn set_power(&mut self, ch: ChannelId, p: f64) -> Result<()> {
        let mut next = self.powers.clone();
        next.insert(ch, p);
        self.set_powers(&next)
    }

    pub fn measure(&mut self, window: (f64, f64), avg_count: usize) -> Result<Spectrum> {
        let drive = self.device.drive_from_powers(&self.powers)?;
        let osa = OsaConfig {
            rng_seed: seeds::indexed_seed(self.osa.rng_seed, self.count),
            ..self.osa
        };
        self.count += 1;
        self.device
            .simulate_spectrum(&drive, self.tap, window, &osa, avg_count)
    }
}

/// Parameters of the single-bank device used for basic calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasicDeviceSpec {
    pub wl_channels: Vec<f64>,
    /// Heater id of each ring.
    pub heater_ids: Vec<ChannelId>,
    pub heat_bias: Vec<f64>,
    pub fwhm: f64,
    pub atten: f64,
    pub attenuation: f64,
    pub heater_resistance: f64,
    pub max_power: f64,
    /// Operator pre-tune: each trough starts this far blue of its channel.
    pub base_offset: (f64, f64),
    /// Replace the random crosstalk by a diagonal of this value.
    pub diagonal_k: Option<f64>,
}

impl Default for BasicDeviceSpec {
    fn default() -> Self {
        Self {
            wl_channels: vec![1550.0, 1552.0, 1554.0, 1556.0],
            heater_ids: vec![5, 3, 6, 4],
            heat_bias: vec![2.5, 2.0, 1.5, 1.0],
            fwhm: 0.2,
            atten: 0.98,
            attenuation: 1e-4,
            heater_resistance: thermal::DEFAULT_HEATER_RESISTANCE,
            max_power: 50.0,
            base_offset: (0.5, 1.5),
            diagonal_k: None,
        }
    }
}

/// A generated device together with its operator pre-tune drive.
#[derive(Debug, Clone)]
pub struct Generated {
    pub device: HiddenDevice,
    pub base_powers: HeaterPowers,
}

fn base_powers_for(thermal: &ThermalGroup, offsets: &[f64]) -> Result<HeaterPowers> {
    let target: Vec<f64> = offsets.iter().map(|o| -o).collect();
    let dp = thermal.deltas_for_shifts(&target)?;
    Ok(thermal
        .channels()
        .iter()
        .zip(thermal.heat_bias())
        .zip(dp)
        .map(|((&c, &b), d)| (c, b + d))
        .collect())
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, range: (f64, f64)) -> f64 {
    if range.1 > range.0 {
        rng.random_range(range.0..range.1)
    } else {
        range.0
    }
}

impl BasicDeviceSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.wl_channels.len();
        if n == 0 || self.heater_ids.len() != n || self.heat_bias.len() != n {
            return Err(Error::InvalidParameter(
                "wl_channels, heater_ids and heat_bias lengths differ".into(),
            ));
        }
        if self.wl_channels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("wl_channels must ascend".into()));
        }
        Ok(())
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Generated> {
        self.validate()?;
        let n = self.wl_channels.len();
        let rings = self
            .wl_channels
            .iter()
            .map(|&w| RingModel::from_fwhm(w, self.fwhm, self.atten))
            .collect::<Result<Vec<_>>>()?;
        let k = match self.diagonal_k {
            Some(d) => diag(n, d),
            None => thermal::basic_random_k(n, rng),
        };
        let thermal = ThermalGroup::new(
            self.heater_ids.clone(),
            k,
            self.heat_bias.clone(),
            self.heater_resistance,
        )?;
        let root = DeviceNode::Bank(FilterBank::new(rings, self.heater_ids.clone(), BankMode::Dendrite)?);
        let device = HiddenDevice::new(root, thermal, self.attenuation, self.max_power)?;
        let offsets: Vec<f64> = (0..n).map(|_| uniform(rng, self.base_offset)).collect();
        let base_powers = base_powers_for(device.thermal(), &offsets)?;
        Ok(Generated { device, base_powers })
    }
}

/// Parameters of the axon-then-dendrite cascade used for cascaded
/// calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadedDeviceSpec {
    pub wl_channels: Vec<f64>,
    pub axon_heaters: Vec<ChannelId>,
    pub dendrite_heaters: Vec<ChannelId>,
    pub axon_bias: f64,
    pub dendrite_bias: f64,
    pub fwhm: f64,
    pub atten: f64,
    pub attenuation: f64,
    pub heater_resistance: f64,
    pub max_power: f64,
    pub k_diagonal: f64,
    /// Scale of the random off-diagonal crosstalk; 0 disables it.
    pub crosstalk: f64,
    pub axon_offset: (f64, f64),
    pub dendrite_offset: (f64, f64),
}

impl Default for CascadedDeviceSpec {
    fn default() -> Self {
        Self {
            wl_channels: vec![1550.0, 1552.0, 1554.0],
            axon_heaters: vec![1, 2, 0],
            dendrite_heaters: vec![4, 5, 3],
            axon_bias: 2.0,
            dendrite_bias: 1.5,
            fwhm: 0.1,
            atten: 0.98,
            attenuation: 1e-4,
            heater_resistance: thermal::DEFAULT_HEATER_RESISTANCE,
            max_power: 50.0,
            k_diagonal: 20.0,
            crosstalk: 1.0,
            axon_offset: (0.6, 0.8),
            dendrite_offset: (0.15, 0.25),
        }
    }
}

/// Bank index of the dendrite in a cascaded device; its thru port is the
/// observable output.
pub const CASCADED_OUTPUT: Tap = Tap {
    bank: 1,
    port: Port::Thru,
};

impl CascadedDeviceSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.wl_channels.len();
        if n == 0 || self.axon_heaters.len() != n || self.dendrite_heaters.len() != n {
            return Err(Error::InvalidParameter(
                "wl_channels and heater lists lengths differ".into(),
            ));
        }
        if self.wl_channels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("wl_channels must ascend".into()));
        }
        Ok(())
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Generated> {
        self.validate()?;
        let n = self.wl_channels.len();
        let rings = self
            .wl_channels
            .iter()
            .map(|&w| RingModel::from_fwhm(w, self.fwhm, self.atten))
            .collect::<Result<Vec<_>>>()?;
        let axon = FilterBank::new(rings.clone(), self.axon_heaters.clone(), BankMode::Axon)?;
        let dendrite = FilterBank::new(rings, self.dendrite_heaters.clone(), BankMode::Dendrite)?;
        let root = DeviceNode::Cascade(vec![DeviceNode::Bank(axon), DeviceNode::Bank(dendrite)]);
        let k = thermal::cascaded_random_k(2 * n, self.k_diagonal, self.crosstalk, rng);
        let channels: Vec<ChannelId> = self
            .axon_heaters
            .iter()
            .chain(&self.dendrite_heaters)
            .copied()
            .collect();
        let bias = [vec![self.axon_bias; n], vec![self.dendrite_bias; n]].concat();
        let thermal = ThermalGroup::new(channels, k, bias, self.heater_resistance)?;
        let device = HiddenDevice::new(root, thermal, self.attenuation, self.max_power)?;
        let mut offsets = Vec::with_capacity(2 * n);
        for _ in 0..n {
            offsets.push(uniform(rng, self.axon_offset));
        }
        for _ in 0..n {
            offsets.push(uniform(rng, self.dendrite_offset));
        }
        let base_powers = base_powers_for(device.thermal(), &offsets)?;
        Ok(Generated { device, base_powers })
    }
}

fn diag(n: usize, d: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|r| (0..n).map(|c| if r == c { d } else { 0.0 }).collect())
        .collect()
}

/// The 2-3-1 broadcast-and-weight network.
///
/// Branch 1 carries the two input axons and three hidden dendrites, branch
/// 2 the three hidden axons and the output dendrite. Bank indices:
/// 0 input axons, 1..=3 hidden dendrites, 4 hidden axons, 5 output dendrite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    pub wl_channels: Vec<f64>,
    pub fwhm: f64,
    pub atten: f64,
    /// Root attenuation applied to the pump.
    pub attenuation: f64,
    /// Thermal tuning, nm per mW, on the ring's own heater.
    pub k: f64,
    pub heater_resistance: f64,
    /// Bias current of the input axons, mA.
    pub input_bias_current: f64,
    /// Bias current of the hidden axons, mA.
    pub hidden_bias_current: f64,
    /// Bias current of all dendrite rings, mA.
    pub dendrite_bias_current: f64,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            wl_channels: vec![1550.0, 1552.0, 1554.0],
            fwhm: 0.1,
            atten: 0.99,
            attenuation: 0.01,
            k: 0.02,
            heater_resistance: thermal::DEFAULT_HEATER_RESISTANCE,
            input_bias_current: 19.0,
            hidden_bias_current: 6.0,
            dendrite_bias_current: 6.0,
        }
    }
}

pub mod network {
    use super::*;

    pub const INPUT_AXONS: usize = 0;
    pub const HIDDEN_DENDRITES: [usize; 3] = [1, 2, 3];
    pub const HIDDEN_AXONS: usize = 4;
    pub const OUTPUT_DENDRITE: usize = 5;
    pub const INPUT_CHANNELS: [ChannelId; 2] = [0, 1];
    pub const HIDDEN_CHANNELS: [ChannelId; 3] = [2, 3, 4];

    pub fn dendrite_channels(bank: usize) -> Vec<ChannelId> {
        match bank {
            1..=3 => {
                let b = 5 + 2 * (bank as ChannelId - 1);
                vec![b, b + 1]
            }
            OUTPUT_DENDRITE => vec![11, 12, 13],
            _ => vec![],
        }
    }
}

impl NetworkSpec {
    pub fn build(&self) -> Result<HiddenDevice> {
        if self.wl_channels.len() != 3 {
            return Err(Error::InvalidParameter("network needs three wavelengths".into()));
        }
        let rings = |n: usize| -> Result<Vec<RingModel>> {
            self.wl_channels[..n]
                .iter()
                .map(|&w| RingModel::from_fwhm(w, self.fwhm, self.atten))
                .collect()
        };
        let bank = |n: usize, ch: Vec<ChannelId>, mode| -> Result<DeviceNode> {
            Ok(DeviceNode::Bank(FilterBank::new(rings(n)?, ch, mode)?))
        };
        let branch1 = DeviceNode::Cascade(vec![
            bank(2, network::INPUT_CHANNELS.to_vec(), BankMode::Axon)?,
            DeviceNode::Splitter(
                network::HIDDEN_DENDRITES
                    .iter()
                    .map(|&b| bank(2, network::dendrite_channels(b), BankMode::Dendrite))
                    .collect::<Result<_>>()?,
            ),
        ]);
        let branch2 = DeviceNode::Cascade(vec![
            bank(3, network::HIDDEN_CHANNELS.to_vec(), BankMode::Axon)?,
            bank(
                3,
                network::dendrite_channels(network::OUTPUT_DENDRITE),
                BankMode::Dendrite,
            )?,
        ]);
        let root = DeviceNode::Splitter(vec![branch1, branch2]);
        let channels: Vec<ChannelId> = root
            .banks()
            .iter()
            .flat_map(|b| b.channels.iter().copied())
            .collect();
        let power = |i: f64| i * i * self.heater_resistance / 1000.0;
        let bias: Vec<f64> = channels
            .iter()
            .map(|c| {
                if network::INPUT_CHANNELS.contains(c) {
                    power(self.input_bias_current)
                } else if network::HIDDEN_CHANNELS.contains(c) {
                    power(self.hidden_bias_current)
                } else {
                    power(self.dendrite_bias_current)
                }
            })
            .collect();
        let n = channels.len();
        let thermal = ThermalGroup::new(channels, diag(n, self.k), bias, self.heater_resistance)?;
        HiddenDevice::new(root, thermal, self.attenuation, f64::MAX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn one_bank(lams: &[f64], atten: f64) -> HiddenDevice {
        let rings = lams
            .iter()
            .map(|&l| RingModel::from_fwhm(l, 0.2, atten).unwrap())
            .collect();
        let ch: Vec<ChannelId> = (0..lams.len() as u32).collect();
        let n = ch.len();
        let thermal = ThermalGroup::new(ch.clone(), diag(n, 100.0), vec![1.0; n], 1000.0).unwrap();
        HiddenDevice::new(
            DeviceNode::Bank(FilterBank::new(rings, ch, BankMode::Dendrite).unwrap()),
            thermal,
            1e-4,
            50.0,
        )
        .unwrap()
    }

    #[test]
    fn flat_when_far_detuned() {
        let d = one_bank(&[1500.0], 0.98);
        let osa = OsaConfig::default().noiseless();
        let s = d
            .simulate_spectrum(&DriveState::zero(), Tap::thru(0), (1549.0, 1551.0), &osa, 1)
            .unwrap();
        for p in s.power_dbm() {
            assert!((p - (-50.0)).abs() < 0.01, "{p}");
        }
    }

    #[test]
    fn trough_depth_at_channels() {
        let d = one_bank(&[1550.0, 1552.0, 1554.0, 1556.0], 0.98);
        let osa = OsaConfig::default().noiseless();
        let p = d
            .channel_powers(&DriveState::zero(), Tap::thru(0), &[1550.0, 1553.0], &osa)
            .unwrap();
        let base = 0.1 * 1e-4;
        let rel = 10.0 * (p[0] / base).log10();
        assert!((rel - 10.0 * 0.02f64.log10()).abs() < 0.05, "{rel}");
        assert!(p[1] > 0.95 * base);
    }

    #[test]
    fn noiseless_is_repeatable_and_noise_is_seeded() {
        let d = one_bank(&[1550.0], 0.98);
        let osa = OsaConfig::default();
        let a = d.simulate_spectrum(&DriveState::zero(), Tap::thru(0), (1549.0, 1551.0), &osa, 2).unwrap();
        let b = d.simulate_spectrum(&DriveState::zero(), Tap::thru(0), (1549.0, 1551.0), &osa, 2).unwrap();
        assert_eq!(a, b);
        let other = OsaConfig { rng_seed: 9, ..osa };
        let c = d.simulate_spectrum(&DriveState::zero(), Tap::thru(0), (1549.0, 1551.0), &other, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn dendrite_ports_conserve_power() {
        let d = one_bank(&[1550.0, 1550.3], 0.98);
        let osa = OsaConfig::default();
        let lams: Vec<f64> = (0..50).map(|i| 1549.5 + i as f64 * 0.02).collect();
        let t = d.channel_powers(&DriveState::zero(), Tap::thru(0), &lams, &osa).unwrap();
        let r = d.channel_powers(&DriveState::zero(), Tap::drop(0), &lams, &osa).unwrap();
        for (a, b) in t.iter().zip(&r) {
            assert_relative_eq!(a + b, 1e-5, max_relative = 1e-12);
        }
    }

    #[test]
    fn on_resonance_drop_gets_everything() {
        let d = one_bank(&[1550.0], 1.0);
        let p = d
            .channel_powers(&DriveState::zero(), Tap::drop(0), &[1550.0], &OsaConfig::default())
            .unwrap();
        assert_relative_eq!(p[0], 1e-5, max_relative = 1e-12);
    }

    #[test]
    fn network_unhandled_channel_passes() {
        let net = NetworkSpec::default().build().unwrap();
        let osa = OsaConfig::default();
        let p = net
            .channel_powers(&DriveState::zero(), Tap::thru(1), &[1554.0], &osa)
            .unwrap();
        // pump 0.1 mW, 1% root, halved by the branch split, thirded by the
        // dendrite split; only Lorentzian tails of the other rings remain
        assert_relative_eq!(p[0], 0.1 * 0.01 / 6.0, max_relative = 5e-3);
        assert_relative_eq!(net.incident_fraction(1).unwrap(), 0.01 / 6.0);
        assert_relative_eq!(net.incident_fraction(4).unwrap(), 0.01 / 2.0);
        assert_eq!(net.thermal().channels().len(), 14);
    }

    #[test]
    fn axon_drop_tap_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = CascadedDeviceSpec::default().generate(&mut rng).unwrap();
        assert!(Instrument::new(&g.device, OsaConfig::default(), Tap::drop(0)).is_err());
        assert!(Instrument::new(&g.device, OsaConfig::default(), Tap::thru(7)).is_err());
    }

    #[test]
    fn generated_base_drive_places_troughs_blue() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = BasicDeviceSpec::default();
        let g = spec.generate(&mut rng).unwrap();
        let res = g.device.true_resonances(&g.base_powers).unwrap();
        for (r, w) in res.iter().zip(&spec.wl_channels) {
            let off = w - r;
            assert!((0.5..=1.5).contains(&off), "{off}");
        }
        let at_bias: HeaterPowers = g
            .device
            .thermal()
            .channels()
            .iter()
            .zip(g.device.thermal().heat_bias())
            .map(|(&c, &b)| (c, b))
            .collect();
        let res = g.device.true_resonances(&at_bias).unwrap();
        for (r, w) in res.iter().zip(&spec.wl_channels) {
            assert!((r - w).abs() < 1e-9);
        }
    }

    #[test]
    fn instrument_range_check() {
        let d = one_bank(&[1550.0], 0.98);
        let mut ins = Instrument::new(&d, OsaConfig::default(), Tap::thru(0)).unwrap();
        assert!(matches!(ins.set_power(0, 60.0), Err(Error::RangeExceeded { .. })));
        assert!(matches!(ins.set_power(0, -0.1), Err(Error::RangeExceeded { .. })));
        assert!(matches!(ins.set_power(3, 1.0), Err(Error::UnknownChannel(3))));
        ins.set_power(0, 1.0).unwrap();
        let a = ins.measure((1549.0, 1551.0), 1).unwrap();
        let b = ins.measure((1549.0, 1551.0), 1).unwrap();
        assert_ne!(a, b);
        assert_eq!(ins.measurements(), 2);
    }
}
