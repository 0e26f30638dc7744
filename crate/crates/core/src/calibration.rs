//! Learning a [`CalibrationModel`] from measured spectra of a hidden device.
//!
//! The basic flow ascribes heaters to troughs, builds a tuned background,
//! tracks each trough onto its channel, records filter shapes and sweeps
//! every heater for K. The cascaded flow pairs an axon and a dendrite
//! trough per channel and merges each pair onto the channel wavelength.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::{self, BackgroundModel, FilterShape, ResonanceFeature};
use crate::device::{HeaterPowers, HiddenDevice, Instrument, OsaConfig, Tap, CASCADED_OUTPUT};
use crate::error::{Error, Result};
use crate::spectrum::Spectrum;
use crate::thermal::{ChannelId, DriveState, ThermalGroup, DEFAULT_HEATER_RESISTANCE};

pub const CALIBRATION_SCHEMA_VERSION: u32 = 1;

/// Minimum half-width of a recentred tracking window, nm.
const MIN_TRACK_HALF_WIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub kp: f64,
    /// Convergence threshold, nm.
    pub precision: f64,
    pub max_iter: usize,
    pub avg_count: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kp: 0.5,
            precision: 0.005,
            max_iter: 100,
            avg_count: 4,
        }
    }
}

impl ControllerConfig {
    pub fn merging() -> Self {
        Self {
            kp: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kp > 0.0) || !(self.precision > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidParameter(format!(
                "controller kp={} precision={} max_iter={}",
                self.kp, self.precision, self.max_iter
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RingRole {
    Axon,
    Dendrite,
}

/// Error trajectory of one controller run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerTrace {
    pub stage: String,
    /// Max absolute error per iteration, nm.
    pub errors: Vec<f64>,
    pub converged: bool,
}

/// Learned mirror of a hidden device. Ring `i` is driven primarily by
/// `channel_order[i]`; K rows follow rings, columns follow `channel_order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub schema_version: u32,
    pub channel_order: Vec<ChannelId>,
    pub roles: Vec<RingRole>,
    /// Absolute heater power at which each ring sits on its bias, mW.
    pub heat_bias: Vec<f64>,
    pub lam_bias: Vec<f64>,
    pub k_est: Vec<Vec<f64>>,
    pub filter_shapes: Vec<FilterShape>,
    pub attenuation_est: f64,
    pub heater_resistance: f64,
    #[serde(default)]
    pub telemetry: Vec<ControllerTrace>,
}

impl CalibrationModel {
    pub fn validate(&self) -> Result<()> {
        let n = self.channel_order.len();
        let dims_ok = self.roles.len() == n
            && self.heat_bias.len() == n
            && self.lam_bias.len() == n
            && self.filter_shapes.len() == n
            && self.k_est.len() == n
            && self.k_est.iter().all(|r| r.len() == n);
        if !dims_ok {
            return Err(Error::InvalidParameter("calibration model dimensions differ".into()));
        }
        if self.lam_bias.iter().chain(&self.heat_bias).any(|v| !v.is_finite())
            || self.heat_bias.iter().any(|p| *p < 0.0)
        {
            return Err(Error::InvalidParameter("non-finite or negative bias".into()));
        }
        if !(self.attenuation_est > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "attenuation estimate {}",
                self.attenuation_est
            )));
        }
        Ok(())
    }

    fn ring_indices(&self, role: RingRole) -> impl Iterator<Item = usize> + '_ {
        self.roles
            .iter()
            .enumerate()
            .filter(move |(_, r)| **r == role)
            .map(|(i, _)| i)
    }

    pub fn thermal_group(&self) -> Result<ThermalGroup> {
        ThermalGroup::from_estimate(
            self.channel_order.clone(),
            self.k_est.clone(),
            self.heat_bias.clone(),
            self.heater_resistance,
        )
    }

    /// Copy whose K keeps only the diagonal.
    pub fn diagonal_only(&self) -> Self {
        let mut m = self.clone();
        for (j, row) in m.k_est.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                if c != j {
                    *v = 0.0;
                }
            }
        }
        m
    }

    /// Drive realising `weights` (thru transmission of each dendrite ring,
    /// in ring order) and `axon_detunes` (nm, each axon ring in order).
    /// Dendrites detune red of their bias.
    pub fn weights_to_drive(&self, weights: &[f64], axon_detunes: &[f64]) -> Result<DriveState> {
        let dend: Vec<usize> = self.ring_indices(RingRole::Dendrite).collect();
        let axon: Vec<usize> = self.ring_indices(RingRole::Axon).collect();
        if weights.len() != dend.len() || axon_detunes.len() != axon.len() {
            return Err(Error::InvalidParameter(format!(
                "{} weights / {} axon detunes for {} dendrite / {} axon rings",
                weights.len(),
                axon_detunes.len(),
                dend.len(),
                axon.len()
            )));
        }
        let mut shifts = vec![0.0; self.roles.len()];
        for (&i, &w) in dend.iter().zip(weights) {
            let shape = &self.filter_shapes[i];
            shifts[i] = shape.invert_red(w, 5.0 * shape.fwhm())?;
        }
        for (&i, &d) in axon.iter().zip(axon_detunes) {
            shifts[i] = d;
        }
        self.thermal_group()?.drive_for_shifts(&shifts)
    }

    /// Absolute heater powers for a bias-relative drive.
    pub fn powers_for(&self, drive: &DriveState) -> Result<HeaterPowers> {
        let g = self.thermal_group()?;
        let d = g.delta_powers(drive)?;
        Ok(self
            .channel_order
            .iter()
            .zip(&self.heat_bias)
            .zip(d)
            .map(|((&c, &b), dp)| (c, b + dp))
            .collect())
    }

    pub fn predicted_resonances(&self, drive: &DriveState) -> Result<Vec<f64>> {
        let s = self.thermal_group()?.wavelength_shifts(drive)?;
        Ok(self.lam_bias.iter().zip(s).map(|(l, d)| l + d).collect())
    }

    /// Model thru transmission of all rings in series, relative to the
    /// background.
    pub fn predicted_transmission(&self, drive: &DriveState, lams: &[f64]) -> Result<Vec<f64>> {
        let res = self.predicted_resonances(drive)?;
        Ok(lams
            .iter()
            .map(|&l| {
                self.filter_shapes
                    .iter()
                    .zip(&res)
                    .map(|(s, r)| s.transmission(l - r))
                    .product()
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::InvalidParameter(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self =
            serde_json::from_str(text).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        if m.schema_version != CALIBRATION_SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "calibration schema {} (expected {CALIBRATION_SCHEMA_VERSION})",
                m.schema_version
            )));
        }
        m.validate()?;
        Ok(m)
    }
}

/// One calibration run's exclusive handle on a device: instrument,
/// current window and background.
#[derive(Debug)]
pub struct Session<'a> {
    inst: Instrument<'a>,
    pub window: (f64, f64),
    background: Option<BackgroundModel>,
    smoothing_nm: f64,
    telemetry: Vec<ControllerTrace>,
}

impl<'a> Session<'a> {
    pub fn new(
        device: &'a HiddenDevice,
        osa: OsaConfig,
        tap: Tap,
        window: (f64, f64),
        smoothing_nm: f64,
    ) -> Result<Self> {
        if !(window.1 > window.0) || !(smoothing_nm > 0.0) {
            return Err(Error::BadWindow {
                lo: window.0,
                hi: window.1,
                why: format!("smoothing {smoothing_nm} nm"),
            });
        }
        Ok(Self {
            inst: Instrument::new(device, osa, tap)?,
            window,
            background: None,
            smoothing_nm,
            telemetry: Vec::new(),
        })
    }

    pub fn instrument(&self) -> &Instrument<'a> {
        &self.inst
    }

    pub fn powers(&self) -> HeaterPowers {
        self.inst.powers().clone()
    }

    pub fn power(&self, ch: ChannelId) -> f64 {
        self.inst.powers().get(&ch).copied().unwrap_or(0.0)
    }

    pub fn set_powers(&mut self, p: &HeaterPowers) -> Result<()> {
        self.inst.set_powers(p)
    }

    pub fn set_power(&mut self, ch: ChannelId, p: f64) -> Result<()> {
        self.inst.set_power(ch, p)
    }

    pub fn background(&self) -> Option<&BackgroundModel> {
        self.background.as_ref()
    }

    pub fn set_background(&mut self, bg: BackgroundModel) {
        self.background = Some(bg);
    }

    pub fn telemetry(&self) -> &[ControllerTrace] {
        &self.telemetry
    }

    pub fn take_telemetry(&mut self) -> Vec<ControllerTrace> {
        std::mem::take(&mut self.telemetry)
    }

    pub fn measure(&mut self, window: (f64, f64), avg: usize) -> Result<Spectrum> {
        self.inst.measure(window, avg)
    }

    /// Measured spectrum relative to the tuned background, or to a
    /// smoothed envelope before one exists.
    pub fn measure_removed(&mut self, window: (f64, f64), avg: usize) -> Result<Spectrum> {
        let raw = self.inst.measure(window, avg)?;
        match &self.background {
            Some(bg) => bg.remove(&raw),
            None => BackgroundModel::smoothed(&raw, self.smoothing_nm)?.remove(&raw),
        }
    }

    pub fn resonances(
        &mut self,
        window: (f64, f64),
        expected: usize,
        min_sep: f64,
        avg: usize,
    ) -> Result<Vec<ResonanceFeature>> {
        let s = self.measure_removed(window, avg)?;
        analysis::find_resonances(&s, expected, min_sep)
    }

    fn lost(&mut self, window: (f64, f64), expected: usize, min_sep: f64, avg: usize, what: &str) -> Result<Vec<f64>> {
        match self.resonances(window, expected, min_sep, avg) {
            Ok(f) => Ok(f.iter().map(|r| r.lam).collect()),
            Err(Error::NotEnoughTroughs { found, expected }) => Err(Error::TrackingLost(format!(
                "{what}: {found} of {expected} troughs"
            ))),
            Err(e) => Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ascription {
    /// Heater channel of each trough, troughs in ascending wavelength.
    pub channel_order: Vec<ChannelId>,
    /// Own-heater sensitivity per trough, nm/mW.
    pub k_diag: Vec<f64>,
    /// Troughs at the starting drive.
    pub base: Vec<ResonanceFeature>,
}

/// Nudges each channel by `tune_by` mW and assigns it the trough that
/// moves furthest. A nudge that carries a trough more than 0.8 of the way
/// to its red neighbour is retried at half size.
pub fn ascribe(
    s: &mut Session,
    channels: &[ChannelId],
    tune_by: f64,
    min_sep: f64,
    avg: usize,
) -> Result<Ascription> {
    if !(tune_by > 0.0) {
        return Err(Error::InvalidParameter(format!("tune_by {tune_by}")));
    }
    let n = channels.len();
    let window = s.window;
    let start = s.powers();
    let base = s.resonances(window, n, min_sep, avg)?;
    let mut order: Vec<Option<ChannelId>> = vec![None; n];
    let mut k_diag = vec![0.0; n];

    for &ch in channels {
        let p0 = s.power(ch);
        let mut step = tune_by;
        let mut hit = None;
        for _ in 0..6 {
            s.set_power(ch, p0 + step)?;
            let found = s.resonances(window, n, min_sep, avg);
            s.set_powers(&start)?;
            let feats = match found {
                Ok(f) => f,
                Err(Error::NotEnoughTroughs { .. }) => {
                    step /= 2.0;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let shifts: Vec<f64> = feats.iter().zip(&base).map(|(a, b)| a.lam - b.lam).collect();
            let p = (0..n).max_by(|&a, &b| shifts[a].total_cmp(&shifts[b])).unwrap_or(0);
            let gap = if p + 1 < n { base[p + 1].lam - base[p].lam } else { f64::INFINITY };
            if shifts[p] > 0.0 && shifts[p] < 0.8 * gap {
                hit = Some((p, shifts[p] / step));
                break;
            }
            step /= 2.0;
        }
        let (p, k) = hit.ok_or_else(|| Error::Ascription(format!("channel {ch} moved no trough cleanly")))?;
        if let Some(other) = order[p] {
            return Err(Error::Ascription(format!(
                "channels {other} and {ch} both move trough {p}"
            )));
        }
        order[p] = Some(ch);
        k_diag[p] = k;
    }
    let channel_order = order
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Ascription("a trough has no channel".into()))?;
    Ok(Ascription {
        channel_order,
        k_diag,
        base,
    })
}

/// Tuned background from the current drive and one with every trough
/// pushed `detune_fwhms` widths red. Leaves the drive unchanged.
pub fn build_background(
    s: &mut Session,
    asc: &Ascription,
    detune_fwhms: f64,
    avg: usize,
) -> Result<BackgroundModel> {
    let start = s.powers();
    let base = s.measure(s.window, avg)?;
    let mut displaced = start.clone();
    for ((ch, k), f) in asc.channel_order.iter().zip(&asc.k_diag).zip(&asc.base) {
        *displaced.entry(*ch).or_insert(0.0) += detune_fwhms * f.fwhm / k;
    }
    s.set_powers(&displaced)?;
    let disp = s.measure(s.window, avg);
    s.set_powers(&start)?;
    analysis::build_tuned_background(&base, &disp?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackResult {
    pub powers: HeaterPowers,
    pub lams: Vec<f64>,
    pub iterations: usize,
}

/// Proportional tracking of trough `i` (driven by `channels[i]`) onto
/// `targets[i]`. The window follows the troughs.
pub fn track_to_bias(
    s: &mut Session,
    channels: &[ChannelId],
    targets: &[f64],
    cfg: &ControllerConfig,
    k_diag: &[f64],
    min_sep: f64,
    stage: &str,
) -> Result<TrackResult> {
    cfg.validate()?;
    let n = channels.len();
    if targets.len() != n || k_diag.len() != n {
        return Err(Error::InvalidParameter("tracking dimensions differ".into()));
    }
    let mut trace = ControllerTrace {
        stage: stage.into(),
        errors: Vec::new(),
        converged: false,
    };
    let mut powers = s.powers();
    for it in 1..=cfg.max_iter {
        let window = s.window;
        let lams = match s.lost(window, n, min_sep, cfg.avg_count, stage) {
            Ok(l) => l,
            Err(e) => {
                s.telemetry.push(trace);
                return Err(e);
            }
        };
        let errs: Vec<f64> = targets.iter().zip(&lams).map(|(t, l)| t - l).collect();
        let worst = errs.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        trace.errors.push(worst);
        if worst < cfg.precision {
            trace.converged = true;
            s.telemetry.push(trace);
            return Ok(TrackResult {
                powers,
                lams,
                iterations: it,
            });
        }
        let lo = lams.iter().chain(targets).copied().fold(f64::INFINITY, f64::min);
        let hi = lams.iter().chain(targets).copied().fold(f64::NEG_INFINITY, f64::max);
        let half = (hi - lo).max(MIN_TRACK_HALF_WIDTH);
        s.window = (0.5 * (lo + hi) - half, 0.5 * (lo + hi) + half);
        for ((ch, e), k) in channels.iter().zip(&errs).zip(k_diag) {
            *powers.entry(*ch).or_insert(0.0) += cfg.kp * e / k;
        }
        if let Err(e) = s.set_powers(&powers) {
            s.telemetry.push(trace);
            return Err(e);
        }
    }
    let last_error = trace.errors.last().copied().unwrap_or(f64::NAN);
    s.telemetry.push(trace);
    Err(Error::NonConvergence {
        what: stage.into(),
        iterations: cfg.max_iter,
        last_error,
    })
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

fn is_bias_point(x: f64, bias: f64) -> bool {
    (x - bias).abs() <= 1e-9 * bias.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Half-range of each sweep in nm of own-trough motion.
    pub span_nm: f64,
    pub n_pts: usize,
    pub avg_count: usize,
    /// Span factor of the single retry after losing a trough.
    pub retry_scale: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            span_nm: 1.0,
            n_pts: 11,
            avg_count: 2,
            retry_scale: 0.6,
        }
    }
}

fn with_retry<T>(
    s: &mut Session,
    bias: &HeaterPowers,
    retry_scale: f64,
    mut f: impl FnMut(&mut Session, f64) -> Result<T>,
) -> Result<T> {
    let first = f(s, 1.0);
    s.set_powers(bias)?;
    match first {
        Err(Error::TrackingLost(_)) => {
            let second = f(s, retry_scale);
            s.set_powers(bias)?;
            second
        }
        other => other,
    }
}

/// Sweeps each channel around `bias` and fits every trough's shift
/// linearly. Rows follow troughs, columns follow `channels`; negative
/// slopes are clamped to zero.
pub fn estimate_k(
    s: &mut Session,
    channels: &[ChannelId],
    k_diag: &[f64],
    bias: &HeaterPowers,
    bias_lams: &[f64],
    sweep: &SweepConfig,
    min_sep: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = bias_lams.len();
    let mut k = vec![vec![0.0; channels.len()]; n];
    s.set_powers(bias)?;
    let window = s.window;
    for (c, &ch) in channels.iter().enumerate() {
        let b = bias.get(&ch).copied().unwrap_or(0.0);
        let col = with_retry(s, bias, sweep.retry_scale, |s, scale| {
            let d = scale * sweep.span_nm / k_diag[c];
            let x = linspace((b - d).max(0.0), b + d, sweep.n_pts);
            let mut y = vec![vec![0.0; x.len()]; n];
            for (i, &p) in x.iter().enumerate() {
                s.set_power(ch, p)?;
                let lams = s.lost(window, n, min_sep, sweep.avg_count, "K sweep")?;
                for r in 0..n {
                    y[r][i] = lams[r] - bias_lams[r];
                }
            }
            Ok(y.iter().map(|yr| ls_slope(&x, yr).max(0.0)).collect::<Vec<f64>>())
        })?;
        for r in 0..n {
            k[r][c] = col[r];
        }
    }
    Ok(k)
}

/// Thru-port shape of each trough from one spectrum, relative to its
/// median level. The tuned background sags between the base and displaced
/// trough positions, which would flatten the shape wings.
pub fn take_filter_shapes(
    s: &mut Session,
    expected: usize,
    min_sep: f64,
    window_fwhms: f64,
    avg: usize,
) -> Result<Vec<FilterShape>> {
    let raw = s.measure(s.window, avg)?;
    let feats = analysis::find_resonances(&level_removed(&raw)?, expected, min_sep)?;
    let spec = clear_level_removed(&raw, &feats, window_fwhms)?;
    feats
        .iter()
        .map(|f| Ok(FilterShape::Tabulated(analysis::extract_filter_shape(&spec, f, window_fwhms)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasicCalibrationConfig {
    pub window: (f64, f64),
    pub min_separation: f64,
    pub tune_by: f64,
    pub ascription_avg: usize,
    pub detune_fwhms: f64,
    pub background_avg: usize,
    pub smoothing_nm: f64,
    pub tracking: ControllerConfig,
    pub shape_window_fwhms: f64,
    pub shape_avg: usize,
    pub sweep: SweepConfig,
    pub heater_resistance: f64,
}

impl Default for BasicCalibrationConfig {
    fn default() -> Self {
        Self {
            window: (1545.0, 1560.0),
            min_separation: 0.5,
            tune_by: 0.01,
            ascription_avg: 1,
            detune_fwhms: 3.0,
            background_avg: 3,
            smoothing_nm: 1.5,
            tracking: ControllerConfig::default(),
            shape_window_fwhms: 7.0,
            shape_avg: 5,
            sweep: SweepConfig::default(),
            heater_resistance: DEFAULT_HEATER_RESISTANCE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationRun {
    pub model: CalibrationModel,
    pub measurements: u64,
    /// First merge pass after which every pair had converged (cascaded
    /// runs only).
    pub merged_after: Option<usize>,
}

/// Single-bank calibration. `start` is the operator's pre-tune, leaving
/// every trough blue of its channel in `wl_channels`.
pub fn calibrate_basic(
    device: &HiddenDevice,
    start: &HeaterPowers,
    wl_channels: &[f64],
    osa: OsaConfig,
    cfg: &BasicCalibrationConfig,
) -> Result<CalibrationRun> {
    let n = wl_channels.len();
    let mut s = Session::new(device, osa, Tap::thru(0), cfg.window, cfg.smoothing_nm)?;
    s.set_powers(start)?;
    let channels = s.instrument().channels();
    if channels.len() != n {
        return Err(Error::InvalidParameter(format!(
            "{} channels for {n} wavelengths",
            channels.len()
        )));
    }
    let asc = ascribe(&mut s, &channels, cfg.tune_by, cfg.min_separation, cfg.ascription_avg)?;
    let bg = build_background(&mut s, &asc, cfg.detune_fwhms, cfg.background_avg)?;
    let attenuation_est = bg.median_mw() / osa.pump_power;
    s.set_background(bg);

    let tr = track_to_bias(
        &mut s,
        &asc.channel_order,
        wl_channels,
        &cfg.tracking,
        &asc.k_diag,
        cfg.min_separation,
        "track to bias",
    )?;
    let filter_shapes = take_filter_shapes(&mut s, n, cfg.min_separation, cfg.shape_window_fwhms, cfg.shape_avg)?;
    let k_est = estimate_k(
        &mut s,
        &asc.channel_order,
        &asc.k_diag,
        &tr.powers,
        &tr.lams,
        &cfg.sweep,
        cfg.min_separation,
    )?;
    s.set_powers(&tr.powers)?;

    let heat_bias = asc
        .channel_order
        .iter()
        .map(|c| tr.powers.get(c).copied().unwrap_or(0.0))
        .collect();
    let model = CalibrationModel {
        schema_version: CALIBRATION_SCHEMA_VERSION,
        channel_order: asc.channel_order,
        roles: vec![RingRole::Dendrite; n],
        heat_bias,
        lam_bias: tr.lams,
        k_est,
        filter_shapes,
        attenuation_est,
        heater_resistance: cfg.heater_resistance,
        telemetry: s.take_telemetry(),
    };
    model.validate()?;
    Ok(CalibrationRun {
        model,
        measurements: s.instrument().measurements(),
        merged_after: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MergeConfig {
    /// Approach phase: both troughs tracked onto the target.
    pub approach: ControllerConfig,
    /// Gain of the width-minimising phase.
    pub kp_width: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            approach: ControllerConfig::merging(),
            kp_width: 0.11,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeOutcome {
    pub converged: bool,
    pub iterations: usize,
    /// Last width (or separation, if still resolved) error, nm.
    pub width_error: f64,
    pub center_error: f64,
}

/// Pair of rings sharing a channel wavelength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergePair {
    pub target: f64,
    /// Channel of the blue trough, then the red one.
    pub channels: (ChannelId, ChannelId),
    pub k_diag: (f64, f64),
}

/// Drives two troughs onto `pair.target` until the combined trough has
/// the width of two coincident rings (`max_fwhm`, `atten`) or less and
/// sits on target.
///
/// While the troughs are still resolved, their separation is the error;
/// afterwards the excess width is. Centring acts on both rings in common
/// mode. If the error grows the last step is undone and the rings swap
/// roles (they may have crossed); a second growth aborts.
pub fn merge_troughs(
    s: &mut Session,
    pair: &MergePair,
    max_fwhm: f64,
    atten: f64,
    cfg: &MergeConfig,
    skip_start: bool,
) -> Result<MergeOutcome> {
    cfg.approach.validate()?;
    let t = pair.target;
    let window = (t - 2.0 * max_fwhm, t + 2.0 * max_fwhm);
    let min_sep = 0.5 * max_fwhm;
    let avg = cfg.approach.avg_count;
    let precision = cfg.approach.precision;
    let (mut left, mut right) = pair.channels;
    let (mut k_left, mut k_right) = pair.k_diag;
    let mut iterations = 0;
    let mut trace = ControllerTrace {
        stage: format!("merge {t}"),
        errors: Vec::new(),
        converged: false,
    };

    if !skip_start {
        for _ in 0..cfg.approach.max_iter {
            let feats = match s.resonances(window, 2, min_sep, avg) {
                Ok(f) => f,
                Err(Error::NotEnoughTroughs { .. }) => break,
                Err(e) => return Err(e),
            };
            iterations += 1;
            if feats.iter().any(|f| f.fwhm > 2.0 * max_fwhm) {
                break;
            }
            let e0 = t - feats[0].lam;
            let e1 = t - feats[1].lam;
            trace.errors.push(e0.abs().max(e1.abs()));
            if e0.abs().max(e1.abs()) < precision {
                break;
            }
            let p0 = s.power(left) + cfg.approach.kp * e0 / k_left;
            let p1 = s.power(right) + cfg.approach.kp * e1 / k_right;
            s.set_power(left, p0)?;
            s.set_power(right, p1)?;
        }
    }

    let w_target = analysis::coincident_width(max_fwhm, atten);
    let mut prev_err = f64::INFINITY;
    let mut prev_powers = s.powers();
    let mut strike = false;
    let mut out = MergeOutcome {
        converged: false,
        iterations,
        width_error: f64::NAN,
        center_error: f64::NAN,
    };
    for _ in 0..cfg.approach.max_iter {
        let spec = s.measure_removed(window, avg)?;
        out.iterations += 1;
        let (err, center) = match analysis::find_resonances(&spec, 2, min_sep) {
            Ok(f) => (f[1].lam - f[0].lam, 0.5 * (f[0].lam + f[1].lam)),
            Err(Error::NotEnoughTroughs { .. }) => match analysis::find_resonances(&spec, 1, min_sep) {
                Ok(f) => (f[0].fwhm - w_target, f[0].lam),
                Err(_) => {
                    s.telemetry.push(trace);
                    return Err(Error::TrackingLost(format!("merge at {t}: no trough")));
                }
            },
            Err(e) => return Err(e),
        };
        let err_center = center - t;
        out.width_error = err;
        out.center_error = err_center;
        trace.errors.push(err.abs().max(err_center.abs()));

        if err > prev_err + precision {
            s.set_powers(&prev_powers)?;
            if strike {
                break;
            }
            strike = true;
            std::mem::swap(&mut left, &mut right);
            std::mem::swap(&mut k_left, &mut k_right);
            prev_err = f64::INFINITY;
            continue;
        }
        // a trough narrower than the coincident width is as merged as can be seen
        if err < precision && err_center.abs() < precision {
            out.converged = true;
            break;
        }
        prev_err = err;
        prev_powers = s.powers();
        let d = cfg.kp_width * err;
        let c = cfg.kp_width * err_center;
        s.set_power(left, s.power(left) + (d - c) / k_left)?;
        s.set_power(right, s.power(right) + (-d - c) / k_right)?;
    }
    trace.converged = out.converged;
    s.telemetry.push(trace);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadedSweepConfig {
    /// Own-trough motion of the primary pair's sweeps, nm.
    pub primary_span_nm: f64,
    pub n_pts: usize,
    /// Extra points for the weaker off-pair sweeps.
    pub extra_pts: usize,
    pub other_span_nm: f64,
    /// Red offset of the primary dendrite during off-pair sweeps, nm.
    pub separation_nm: f64,
    pub avg_count: usize,
    pub retry_scale: f64,
}

impl Default for CascadedSweepConfig {
    fn default() -> Self {
        Self {
            primary_span_nm: 0.75,
            n_pts: 7,
            extra_pts: 6,
            other_span_nm: 0.75,
            separation_nm: 0.5,
            avg_count: 5,
            retry_scale: 0.6,
        }
    }
}

/// Two rows of K (primary axon, primary dendrite) over all channels in
/// alternating axon/dendrite column order.
#[allow(clippy::too_many_arguments)]
fn partial_k(
    s: &mut Session,
    centre: f64,
    prim: usize,
    axon: &[ChannelId],
    dend: &[ChannelId],
    k_diag: &BTreeMap<ChannelId, f64>,
    bias: &HeaterPowers,
    cfg: &CascadedSweepConfig,
) -> Result<[Vec<f64>; 2]> {
    let n = axon.len();
    let mut rows = [vec![0.0; 2 * n], vec![0.0; 2 * n]];
    let kd = |ch: ChannelId| k_diag.get(&ch).copied().unwrap_or(1.0);
    let min_sep = 0.1;

    // co-located pair: the swept trough is the one that moved more
    let window = (centre - 1.0, centre + 1.0);
    for (ich, ch) in [axon[prim], dend[prim]].into_iter().enumerate() {
        let b = bias.get(&ch).copied().unwrap_or(0.0);
        let col = with_retry(s, bias, cfg.retry_scale, |s, scale| {
            let d = scale * cfg.primary_span_nm / kd(ch);
            let x = linspace((b - d).max(0.0), b + d, cfg.n_pts);
            let mut y = [vec![0.0; x.len()], vec![0.0; x.len()]];
            for (i, &p) in x.iter().enumerate() {
                if is_bias_point(p, b) {
                    continue;
                }
                s.set_power(ch, p)?;
                let lams = s.lost(window, 2, min_sep, cfg.avg_count, "primary sweep")?;
                let (mut d0, mut d1) = (lams[0] - centre, lams[1] - centre);
                if d1.abs() < d0.abs() {
                    std::mem::swap(&mut d0, &mut d1);
                }
                y[ich][i] = d1;
                y[1 - ich][i] = d0;
            }
            Ok([ls_slope(&x, &y[0]).max(0.0), ls_slope(&x, &y[1]).max(0.0)])
        })?;
        rows[0][2 * prim + ich] = col[0];
        rows[1][2 * prim + ich] = col[1];
    }

    // separate the pair so off-pair crosstalk moves two distinct troughs
    let mut sep_bias = bias.clone();
    let dch = dend[prim];
    *sep_bias.entry(dch).or_insert(0.0) += cfg.separation_nm / kd(dch);
    s.set_powers(&sep_bias)?;
    let window = (centre - 0.45, centre + cfg.separation_nm + 0.45);
    let sep_lams = s.lost(window, 2, min_sep, cfg.avg_count, "pair separation")?;

    for num in (0..n).filter(|&j| j != prim) {
        for (ich, ch) in [axon[num], dend[num]].into_iter().enumerate() {
            let b = sep_bias.get(&ch).copied().unwrap_or(0.0);
            let col = with_retry(s, &sep_bias, cfg.retry_scale, |s, scale| {
                let d = scale * cfg.other_span_nm / kd(ch);
                let x = linspace((b - d).max(0.0), b + d, cfg.n_pts + cfg.extra_pts);
                let mut y = [vec![0.0; x.len()], vec![0.0; x.len()]];
                for (i, &p) in x.iter().enumerate() {
                    if is_bias_point(p, b) {
                        continue;
                    }
                    s.set_power(ch, p)?;
                    let lams = s.lost(window, 2, min_sep, cfg.avg_count, "crosstalk sweep")?;
                    y[0][i] = lams[0] - sep_lams[0];
                    y[1][i] = lams[1] - sep_lams[1];
                }
                Ok([ls_slope(&x, &y[0]).max(0.0), ls_slope(&x, &y[1]).max(0.0)])
            })?;
            rows[0][2 * num + ich] = col[0];
            rows[1][2 * num + ich] = col[1];
        }
    }
    s.set_powers(bias)?;
    Ok(rows)
}

/// Full 2n×2n K of a merged cascade, rows and columns ordered axons then
/// dendrites.
pub fn estimate_k_cascaded(
    s: &mut Session,
    centres: &[f64],
    axon: &[ChannelId],
    dend: &[ChannelId],
    k_diag: &BTreeMap<ChannelId, f64>,
    bias: &HeaterPowers,
    cfg: &CascadedSweepConfig,
) -> Result<Vec<Vec<f64>>> {
    let n = axon.len();
    if dend.len() != n || centres.len() != n {
        return Err(Error::InvalidParameter("axon/dendrite/centre counts differ".into()));
    }
    let mut alt = Vec::with_capacity(2 * n);
    for (j, &c) in centres.iter().enumerate() {
        let [a, d] = partial_k(s, c, j, axon, dend, k_diag, bias, cfg)?;
        alt.push(a);
        alt.push(d);
    }
    // ADAD… → AA…DD…
    let perm: Vec<usize> = (0..2 * n)
        .map(|i| if i < n { 2 * i } else { 2 * (i - n) + 1 })
        .collect();
    Ok(perm
        .iter()
        .map(|&r| perm.iter().map(|&c| alt[r][c]).collect())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadedCalibrationConfig {
    pub window: (f64, f64),
    pub min_separation: f64,
    pub tune_by: f64,
    pub ascription_avg: usize,
    pub detune_fwhms: f64,
    pub background_avg: usize,
    pub smoothing_nm: f64,
    pub tracking: ControllerConfig,
    pub merge: MergeConfig,
    /// Passes always run; more are added until every pair converges.
    pub merge_passes: usize,
    pub max_merge_passes: usize,
    pub shape_window_fwhms: f64,
    pub shape_avg: usize,
    /// Partner displacement while a shape is recorded, nm.
    pub shape_partner_detune_nm: f64,
    /// Per-ring alignment after each merge pass; rings are read with their
    /// partners displaced by `shape_partner_detune_nm`.
    pub align: ControllerConfig,
    pub sweep: CascadedSweepConfig,
    pub heater_resistance: f64,
}

impl Default for CascadedCalibrationConfig {
    fn default() -> Self {
        Self {
            window: (1545.0, 1560.0),
            min_separation: 0.1,
            tune_by: 0.01,
            ascription_avg: 1,
            detune_fwhms: 3.0,
            background_avg: 3,
            smoothing_nm: 1.0,
            tracking: ControllerConfig::default(),
            merge: MergeConfig::default(),
            merge_passes: 2,
            max_merge_passes: 3,
            shape_window_fwhms: 8.0,
            shape_avg: 5,
            shape_partner_detune_nm: 1.0,
            align: ControllerConfig {
                kp: 0.8,
                precision: 0.002,
                max_iter: 20,
                avg_count: 5,
            },
            sweep: CascadedSweepConfig::default(),
            heater_resistance: DEFAULT_HEATER_RESISTANCE,
        }
    }
}

/// Shapes of the rings on `take`, measured with every partner ring pushed
/// red by `cfg.shape_partner_detune_nm`.
fn cascaded_shapes(
    s: &mut Session,
    take: &[ChannelId],
    partner: &[ChannelId],
    k_diag: &BTreeMap<ChannelId, f64>,
    bias: &HeaterPowers,
    cfg: &CascadedCalibrationConfig,
) -> Result<Vec<FilterShape>> {
    let n = take.len();
    let mut p = bias.clone();
    for ch in partner {
        *p.entry(*ch).or_insert(0.0) += cfg.shape_partner_detune_nm / k_diag[ch];
    }
    s.set_powers(&p)?;
    let spec = s.measure(s.window, cfg.shape_avg);
    s.set_powers(bias)?;
    let raw = spec?;
    let sep = 0.5 * cfg.shape_partner_detune_nm;
    let feats = analysis::find_resonances(&level_removed(&raw)?, 2 * n, sep)?;
    let spec = clear_level_removed(&raw, &feats, cfg.shape_window_fwhms)?;
    // sorted: taken ring, its displaced partner, next taken ring, …
    feats
        .iter()
        .step_by(2)
        .map(|f| Ok(FilterShape::Tabulated(analysis::extract_filter_shape(&spec, f, cfg.shape_window_fwhms)?)))
        .collect()
}

/// Spectrum shifted so its median level sits at 0 dB; troughs cover
/// little of the window.
fn level_removed(spec: &Spectrum) -> Result<Spectrum> {
    let mut v = spec.power_dbm().to_vec();
    v.sort_by(f64::total_cmp);
    let top = v[v.len() / 2];
    Spectrum::new(spec.start(), spec.spacing(), spec.power_dbm().iter().map(|p| p - top).collect())
}

/// Spectrum relative to the median of the samples at least
/// `clear_fwhms` widths from every trough. Lorentzian tails pull the plain
/// median a few percent low; falls back to it when too little of the
/// window is clear.
fn clear_level_removed(spec: &Spectrum, feats: &[ResonanceFeature], clear_fwhms: f64) -> Result<Spectrum> {
    let clear: Vec<f64> = (0..spec.len())
        .filter(|&i| {
            let lam = spec.wavelength(i);
            feats.iter().all(|f| (lam - f.lam).abs() >= clear_fwhms * f.fwhm)
        })
        .map(|i| spec.power_dbm()[i])
        .collect();
    if clear.len() < spec.len() / 10 {
        return level_removed(spec);
    }
    let mut v = clear;
    v.sort_by(f64::total_cmp);
    let top = v[v.len() / 2];
    Spectrum::new(spec.start(), spec.spacing(), spec.power_dbm().iter().map(|p| p - top).collect())
}

/// Own trough of each ring on `take`, nearest its channel, measured with
/// every partner displaced by `+detune` and then `-detune` nm. Partner
/// crosstalk enters both readings with opposite sign and averages out.
#[allow(clippy::too_many_arguments)]
fn own_positions(
    s: &mut Session,
    take: &[ChannelId],
    partner: &[ChannelId],
    k_diag: &BTreeMap<ChannelId, f64>,
    bias: &HeaterPowers,
    wl_channels: &[f64],
    detune: f64,
    avg: usize,
) -> Result<Vec<f64>> {
    let n = take.len();
    let mut acc = vec![0.0; n];
    for sign in [1.0, -1.0] {
        let mut p = bias.clone();
        for ch in partner {
            let e = p.entry(*ch).or_insert(0.0);
            *e = (*e + sign * detune / k_diag[ch]).max(0.0);
        }
        s.set_powers(&p)?;
        // the tuned background keeps faint dips where rings sat at
        // ascription; a flat level is cleaner for positions
        let spec = s.measure(s.window, avg);
        s.set_powers(bias)?;
        let spec = level_removed(&spec?)?;
        let feats = match analysis::find_resonances(&spec, 2 * n, 0.5 * detune) {
            Err(Error::NotEnoughTroughs { found, expected }) => {
                return Err(Error::TrackingLost(format!("pair alignment: {found} of {expected} troughs")))
            }
            f => f?,
        };
        for (a, wl) in acc.iter_mut().zip(wl_channels) {
            let own = feats
                .iter()
                .map(|f| f.lam)
                .min_by(|x, y| (x - wl).abs().total_cmp(&(y - wl).abs()))
                .unwrap_or(*wl);
            *a += 0.5 * own;
        }
    }
    Ok(acc)
}

/// Puts every ring of the merged pairs on its channel individually. The
/// merged width barely grows for small separations, so a pair can pass
/// the width test while split by a few hundredths of a nm.
fn align_pairs(
    s: &mut Session,
    axon: &[ChannelId],
    dend: &[ChannelId],
    k_diag: &BTreeMap<ChannelId, f64>,
    wl_channels: &[f64],
    cfg: &CascadedCalibrationConfig,
) -> Result<(bool, Vec<f64>)> {
    let c = &cfg.align;
    c.validate()?;
    let mut trace = ControllerTrace {
        stage: "pair alignment".into(),
        errors: Vec::new(),
        converged: false,
    };
    let detune = cfg.shape_partner_detune_nm;
    let mut lams = Vec::new();
    for _ in 0..c.max_iter {
        let bias = s.powers();
        lams = own_positions(s, axon, dend, k_diag, &bias, wl_channels, detune, c.avg_count)?;
        lams.extend(own_positions(s, dend, axon, k_diag, &bias, wl_channels, detune, c.avg_count)?);
        let n = wl_channels.len();
        let err: Vec<f64> = lams.iter().enumerate().map(|(r, l)| wl_channels[r % n] - l).collect();
        let worst = err.iter().fold(0.0f64, |m, e| m.max(e.abs()));
        trace.errors.push(worst);
        if worst < c.precision {
            trace.converged = true;
            break;
        }
        for (ch, e) in axon.iter().chain(dend).zip(&err) {
            s.set_power(*ch, (s.power(*ch) + c.kp * e / k_diag[ch]).max(0.0))?;
        }
    }
    let ok = trace.converged;
    s.telemetry.push(trace);
    Ok((ok, lams))
}

/// Axon+dendrite cascade calibration. `start` leaves each channel's axon
/// trough blue of its dendrite trough, both blue of the channel.
pub fn calibrate_cascaded(
    device: &HiddenDevice,
    start: &HeaterPowers,
    axon_channels: &[ChannelId],
    dendrite_channels: &[ChannelId],
    wl_channels: &[f64],
    osa: OsaConfig,
    cfg: &CascadedCalibrationConfig,
) -> Result<CalibrationRun> {
    let n = wl_channels.len();
    if axon_channels.len() != n || dendrite_channels.len() != n {
        return Err(Error::InvalidParameter("one axon and one dendrite channel per wavelength".into()));
    }
    let mut s = Session::new(device, osa, CASCADED_OUTPUT, cfg.window, cfg.smoothing_nm)?;
    s.set_powers(start)?;
    let all: Vec<ChannelId> = axon_channels.iter().chain(dendrite_channels).copied().collect();
    let asc = ascribe(&mut s, &all, cfg.tune_by, cfg.min_separation, cfg.ascription_avg)?;
    let mut axon = Vec::with_capacity(n);
    let mut dend = Vec::with_capacity(n);
    for (p, ch) in asc.channel_order.iter().enumerate() {
        let is_axon = axon_channels.contains(ch);
        if is_axon != (p % 2 == 0) {
            return Err(Error::Ascription(format!(
                "trough {p} belongs to channel {ch}; expected alternating axon/dendrite troughs"
            )));
        }
        if is_axon { axon.push(*ch) } else { dend.push(*ch) }
    }
    let k_diag: BTreeMap<ChannelId, f64> = asc.channel_order.iter().copied().zip(asc.k_diag.iter().copied()).collect();

    let bg = build_background(&mut s, &asc, cfg.detune_fwhms, cfg.background_avg)?;
    let attenuation_est = bg.median_mw() / osa.pump_power;
    s.set_background(bg);
    let feats = s.resonances(s.window, 2 * n, cfg.min_separation, cfg.tracking.avg_count)?;
    let max_fwhm = feats.iter().map(|f| f.fwhm).fold(0.0, f64::max);
    let ring_atten = feats
        .iter()
        .map(|f| 1.0 - 10f64.powf(-f.depth / 10.0))
        .sum::<f64>()
        / feats.len() as f64;

    let targets: Vec<f64> = wl_channels.iter().flat_map(|w| [w - max_fwhm, w + max_fwhm]).collect();
    track_to_bias(
        &mut s,
        &asc.channel_order,
        &targets,
        &cfg.tracking,
        &asc.k_diag,
        cfg.min_separation,
        "track to pair targets",
    )?;

    let mut merged_after = None;
    let mut own = Vec::new();
    let mut pass = 0;
    while pass < cfg.max_merge_passes.max(cfg.merge_passes) {
        pass += 1;
        let mut all_ok = true;
        for (i, &wl) in wl_channels.iter().enumerate() {
            let pair = MergePair {
                target: wl,
                channels: (axon[i], dend[i]),
                k_diag: (k_diag[&axon[i]], k_diag[&dend[i]]),
            };
            merge_troughs(&mut s, &pair, max_fwhm, ring_atten, &cfg.merge, pass > 1)?;
        }
        let (aligned, lams) = align_pairs(&mut s, &axon, &dend, &k_diag, wl_channels, cfg)?;
        all_ok &= aligned;
        own = lams;
        if all_ok && merged_after.is_none() {
            merged_after = Some(pass);
        }
        if pass >= cfg.merge_passes && merged_after.is_some() {
            break;
        }
    }
    let bias = s.powers();
    let centres = s
        .lost(s.window, n, 2.0 * max_fwhm, cfg.tracking.avg_count, "merged troughs")?;

    let mut filter_shapes = cascaded_shapes(&mut s, &axon, &dend, &k_diag, &bias, cfg)?;
    filter_shapes.extend(cascaded_shapes(&mut s, &dend, &axon, &k_diag, &bias, cfg)?);
    let k_est = estimate_k_cascaded(&mut s, &centres, &axon, &dend, &k_diag, &bias, &cfg.sweep)?;
    s.set_powers(&bias)?;

    let channel_order: Vec<ChannelId> = axon.iter().chain(&dend).copied().collect();
    let heat_bias = channel_order
        .iter()
        .map(|c| bias.get(c).copied().unwrap_or(0.0))
        .collect();
    let model = CalibrationModel {
        schema_version: CALIBRATION_SCHEMA_VERSION,
        channel_order,
        roles: [vec![RingRole::Axon; n], vec![RingRole::Dendrite; n]].concat(),
        heat_bias,
        lam_bias: own,
        k_est,
        filter_shapes,
        attenuation_est,
        heater_resistance: cfg.heater_resistance,
        telemetry: s.take_telemetry(),
    };
    model.validate()?;
    Ok(CalibrationRun {
        model,
        measurements: s.instrument().measurements(),
        merged_after,
    })
}

/// What the hidden device does when driven through a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Realized {
    pub powers: HeaterPowers,
    /// True resonance of each model ring, in model order.
    pub resonances: Vec<f64>,
    /// Transmission at `tap` per requested wavelength, relative to the
    /// off-resonance level at that bank.
    pub transmission: Vec<f64>,
}

/// Applies `drive` through `model` to the hidden device and reads back the
/// noiseless truth. Used to score a calibration, never by it.
pub fn realize(
    device: &HiddenDevice,
    model: &CalibrationModel,
    drive: &DriveState,
    tap: Tap,
    lams: &[f64],
) -> Result<Realized> {
    let powers = model.powers_for(drive)?;
    let truth = device.true_resonances(&powers)?;
    let ring_channels: Vec<ChannelId> = device
        .root()
        .banks()
        .iter()
        .flat_map(|b| b.channels.iter().copied())
        .collect();
    let resonances = model
        .channel_order
        .iter()
        .map(|c| {
            ring_channels
                .iter()
                .position(|r| r == c)
                .map(|i| truth[i])
                .ok_or(Error::UnknownChannel(*c))
        })
        .collect::<Result<Vec<_>>>()?;
    let shifts = device.shifts(&device.drive_from_powers(&powers)?)?;
    let level = device.incident_fraction(tap.bank)?;
    let transmission = device
        .transmitted_power(&shifts, tap, lams, 1.0)?
        .into_iter()
        .map(|p| p / level)
        .collect();
    Ok(Realized {
        powers,
        resonances,
        transmission,
    })
}

/// Quality of a basic calibration against the hidden truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasicGates {
    pub ascription_exact: bool,
    pub heat_bias_error: f64,
    pub lam_bias_error: f64,
    /// Largest relative error over true K entries ≥ 10 nm/mW.
    pub k_relative_error: f64,
}

impl BasicGates {
    pub fn passed(&self) -> bool {
        self.ascription_exact
            && self.heat_bias_error <= 0.01
            && self.lam_bias_error <= 0.01
            && self.k_relative_error <= 0.10
    }
}

fn heat_bias_error(model: &CalibrationModel, device: &HiddenDevice) -> Result<f64> {
    let th = device.thermal();
    let mut worst = 0.0f64;
    for (ch, b) in model.channel_order.iter().zip(&model.heat_bias) {
        let i = th.channel_index(*ch)?;
        worst = worst.max((b - th.heat_bias()[i]).abs());
    }
    Ok(worst)
}

pub fn basic_gates(model: &CalibrationModel, device: &HiddenDevice, wl_channels: &[f64]) -> Result<BasicGates> {
    let th = device.thermal();
    let ascription_exact = model.channel_order.as_slice() == th.channels();
    let lam_bias_error = model
        .lam_bias
        .iter()
        .zip(wl_channels)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let mut k_relative_error = if ascription_exact { 0.0f64 } else { f64::INFINITY };
    if ascription_exact {
        for (er, tr) in model.k_est.iter().zip(th.k()) {
            for (e, t) in er.iter().zip(tr) {
                if *t >= 10.0 {
                    k_relative_error = k_relative_error.max((e - t).abs() / t);
                }
            }
        }
    }
    Ok(BasicGates {
        ascription_exact,
        heat_bias_error: heat_bias_error(model, device)?,
        lam_bias_error,
        k_relative_error,
    })
}

/// Quality of a cascaded calibration against the hidden truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CascadedGates {
    pub ascription_exact: bool,
    /// Distance of each pair's true mean resonance from its channel, nm.
    pub merged_lam_error: f64,
    pub heat_bias_error: f64,
    pub attenuation_relative_error: f64,
    pub k_diagonal_error: f64,
    pub k_offdiagonal_error: f64,
}

impl CascadedGates {
    pub fn passed(&self) -> bool {
        self.ascription_exact
            && self.merged_lam_error <= 0.01
            && self.heat_bias_error <= 0.01
            && self.attenuation_relative_error <= 0.04
            && self.k_diagonal_error <= 0.1
            && self.k_offdiagonal_error <= 1.2
    }
}

pub fn cascaded_gates(model: &CalibrationModel, device: &HiddenDevice, wl_channels: &[f64]) -> Result<CascadedGates> {
    let th = device.thermal();
    let n = wl_channels.len();
    let ascription_exact = model.channel_order.as_slice() == th.channels();
    let powers: HeaterPowers = model
        .channel_order
        .iter()
        .copied()
        .zip(model.heat_bias.iter().copied())
        .collect();
    let truth = device.true_resonances(&powers)?;
    let merged_lam_error = wl_channels
        .iter()
        .enumerate()
        .fold(0.0f64, |m, (i, w)| m.max((0.5 * (truth[i] + truth[n + i]) - w).abs()));
    let (mut kd, mut ko) = (0.0f64, 0.0f64);
    if ascription_exact {
        for (r, (er, tr)) in model.k_est.iter().zip(th.k()).enumerate() {
            for (c, (e, t)) in er.iter().zip(tr).enumerate() {
                let d = (e - t).abs();
                if r == c { kd = kd.max(d) } else { ko = ko.max(d) }
            }
        }
    } else {
        kd = f64::INFINITY;
        ko = f64::INFINITY;
    }
    Ok(CascadedGates {
        ascription_exact,
        merged_lam_error,
        heat_bias_error: heat_bias_error(model, device)?,
        attenuation_relative_error: (model.attenuation_est - device.attenuation()).abs() / device.attenuation(),
        k_diagonal_error: kd,
        k_offdiagonal_error: ko,
    })
}
