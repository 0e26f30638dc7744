//! Experiment configuration: one TOML (or JSON) document per run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ringsim_core::calibration::{BasicCalibrationConfig, CascadedCalibrationConfig, CalibrationModel};
use ringsim_core::device::{BasicDeviceSpec, CascadedDeviceSpec, NetworkSpec, OsaConfig};
use ringsim_core::training::{Activation, CostMode, NetworkCircuit, VirtualParams};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Root seed, used when neither `--seed` nor `RINGSIM_SEED` is given.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub osa: OsaSettings,
    #[serde(default)]
    pub basic: BasicSection,
    #[serde(default)]
    pub cascaded: CascadedSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub mdm: MdmSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: None,
            osa: OsaSettings::default(),
            basic: BasicSection::default(),
            cascaded: CascadedSection::default(),
            training: TrainingSection::default(),
            network: NetworkSection::default(),
            mdm: MdmSection::default(),
        }
    }
}

/// Spectrum analyser; the noise seed comes from the root seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OsaSettings {
    pub pump_power: f64,
    pub spacing: f64,
    pub noise_amplitude: f64,
}

impl Default for OsaSettings {
    fn default() -> Self {
        let o = OsaConfig::default();
        Self {
            pump_power: o.pump_power,
            spacing: o.spacing,
            noise_amplitude: o.noise_amplitude,
        }
    }
}

impl OsaSettings {
    pub fn with_seed(&self, rng_seed: u64) -> OsaConfig {
        OsaConfig {
            pump_power: self.pump_power,
            spacing: self.spacing,
            noise_amplitude: self.noise_amplitude,
            rng_seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BasicSection {
    pub device: BasicDeviceSpec,
    pub calibration: BasicCalibrationConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CascadedSection {
    pub device: CascadedDeviceSpec,
    pub calibration: CascadedCalibrationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub eta: f64,
    pub epochs: usize,
    pub cost: CostMode,
    pub shuffle: bool,
    /// Stop once the training accuracy reaches this; plain SGD keeps
    /// wandering by a few percent around its plateau.
    pub stop_at_accuracy: Option<f64>,
    pub activation: Activation,
    /// Side of the square grid of the classification surface.
    pub surface_points: usize,
    /// Final accuracy below this fails the run (exit 3).
    pub min_accuracy: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            eta: 0.01,
            epochs: 20_000,
            cost: CostMode::SquaredError,
            shuffle: true,
            stop_at_accuracy: Some(0.98),
            activation: Activation::default(),
            surface_points: 32,
            min_accuracy: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    pub device: NetworkSpec,
    pub circuit: NetworkCircuit,
    /// Trained parameters (`params.json` of train-xor); the built-in
    /// reference set when absent.
    pub params: Option<PathBuf>,
    /// Saved calibration of the network device; its hidden truth when absent.
    pub calibration: Option<PathBuf>,
    /// Joint scale of the output weights and bias. When absent, trained
    /// output weights too strong for the bank are scaled down to
    /// `max_output_weight`.
    pub output_scale: Option<f64>,
    pub max_output_weight: f64,
    pub grid_points: usize,
    pub surface_points: usize,
    pub check_drive: [f64; 2],
    /// Largest accepted hidden-current error at `check_drive`, mA.
    pub max_current_error: f64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        Self {
            device: NetworkSpec::default(),
            circuit: NetworkCircuit::default(),
            params: None,
            calibration: None,
            output_scale: None,
            max_output_weight: 0.9,
            grid_points: 20,
            surface_points: 32,
            check_drive: [0.1, 0.1],
            max_current_error: 0.05,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdmSection {
    /// Directory of `width_length.csv` spectra. When absent the synthetic
    /// sweep below is generated into the output directory first.
    pub sweep_dir: Option<PathBuf>,
    pub synthetic: SyntheticSweep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub width: f64,
    pub length: f64,
    /// True coupling of the generated interferometer.
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSweep {
    pub window: (f64, f64),
    pub spacing: f64,
    /// Path difference, nm.
    pub dl: f64,
    pub pump_power: f64,
    pub noise_db: f64,
    pub geometries: Vec<Geometry>,
}

impl Default for SyntheticSweep {
    fn default() -> Self {
        let g = |width, length, alpha| Geometry { width, length, alpha };
        Self {
            window: (1540.0, 1560.0),
            spacing: 0.01,
            dl: 1.2e6,
            pump_power: 1.0,
            noise_db: 0.2,
            geometries: vec![
                g(0.40, 10.0, 0.2),
                g(0.40, 20.0, 0.45),
                g(0.45, 10.0, 0.3),
                g(0.45, 20.0, 0.6),
                g(0.50, 10.0, 0.4),
                g(0.50, 20.0, 0.7),
            ],
        }
    }
}

/// Reads a config; `.json` files are JSON, anything else TOML. Relative
/// paths inside are resolved against the config's directory.
pub fn load(path: &Path) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mut cfg: ExperimentConfig = if is_json {
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
    } else {
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
    };
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut cfg.network.params, &mut cfg.network.calibration, &mut cfg.mdm.sweep_dir]
        .into_iter()
        .flatten()
    {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

fn distinct<T: Ord + Copy>(items: impl IntoIterator<Item = T>) -> bool {
    let mut seen = BTreeSet::new();
    items.into_iter().all(|x| seen.insert(x))
}

fn check(ok: bool, what: &str) -> Result<(), String> {
    if ok { Ok(()) } else { Err(what.to_string()) }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        check(
            self.schema_version == SCHEMA_VERSION,
            &format!("schema_version {} (expected {SCHEMA_VERSION})", self.schema_version),
        )?;
        self.osa.with_seed(0).validate().map_err(|e| format!("osa: {e}"))?;

        let b = &self.basic.device;
        b.validate().map_err(|e| format!("basic.device: {e}"))?;
        check(distinct(b.heater_ids.iter().copied()), "basic.device: heater_ids repeat")?;
        self.basic.calibration.tracking.validate().map_err(|e| format!("basic.calibration: {e}"))?;

        let c = &self.cascaded.device;
        c.validate().map_err(|e| format!("cascaded.device: {e}"))?;
        check(
            distinct(c.axon_heaters.iter().chain(&c.dendrite_heaters).copied()),
            "cascaded.device: heater channels repeat",
        )?;
        let cc = &self.cascaded.calibration;
        for (name, ctl) in [("tracking", &cc.tracking), ("merge", &cc.merge.approach), ("align", &cc.align)] {
            ctl.validate().map_err(|e| format!("cascaded.calibration.{name}: {e}"))?;
        }

        let t = &self.training;
        t.activation.validate().map_err(|e| format!("training.activation: {e}"))?;
        self.training_config(0).validate().map_err(|e| format!("training: {e}"))?;
        check(t.surface_points >= 2, "training.surface_points must be at least 2")?;
        check((0.0..=1.0).contains(&t.min_accuracy), "training.min_accuracy outside [0, 1]")?;

        let n = &self.network;
        n.device.build().map_err(|e| format!("network.device: {e}"))?;
        check(n.grid_points >= 2 && n.surface_points >= 2, "network grid sizes must be at least 2")?;
        check(n.output_scale.is_none_or(|s| s > 0.0), "network.output_scale must be positive")?;
        check(
            n.max_output_weight > 0.0 && n.max_output_weight <= 1.0,
            "network.max_output_weight outside (0, 1]",
        )?;
        check(n.max_current_error > 0.0, "network.max_current_error must be positive")?;

        let m = &self.mdm.synthetic;
        check(
            m.spacing > 0.0 && m.dl > 0.0 && m.pump_power > 0.0 && m.noise_db >= 0.0 && m.window.1 > m.window.0,
            "mdm.synthetic: bad grid or source",
        )?;
        for g in &m.geometries {
            check((0.0..=1.0).contains(&g.alpha), "mdm.synthetic: alpha outside [0, 1]")?;
            check(g.width > 0.0 && g.length > 0.0, "mdm.synthetic: geometry must be positive")?;
        }
        Ok(())
    }

    pub fn training_config(&self, seed: u64) -> ringsim_core::TrainingConfig {
        let t = &self.training;
        ringsim_core::TrainingConfig {
            eta: t.eta,
            epochs: t.epochs,
            seed,
            cost: t.cost,
            shuffle: t.shuffle,
            stop_at_accuracy: t.stop_at_accuracy,
        }
    }
}

/// Files a network run refers to, loaded and checked up front.
pub struct NetworkInputs {
    pub params: VirtualParams,
    pub calibration: Option<CalibrationModel>,
}

pub fn load_network_inputs(cfg: &ExperimentConfig) -> Result<NetworkInputs, String> {
    let n = &cfg.network;
    let params = match &n.params {
        None => VirtualParams::sweep_reference(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            let vp: VirtualParams =
                serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?;
            if !vp.is_finite() {
                return Err(format!("{}: non-finite parameters", p.display()));
            }
            vp
        }
    };
    let calibration = match &n.calibration {
        None => None,
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            let m = CalibrationModel::from_json(&text).map_err(|e| format!("{}: {e}", p.display()))?;
            let device = n.device.build().map_err(|e| e.to_string())?;
            let mut have = m.channel_order.clone();
            have.sort_unstable();
            if have != device.channel_ids() {
                return Err(format!(
                    "{}: calibration channels {have:?} differ from the network's {:?}",
                    p.display(),
                    device.channel_ids()
                ));
            }
            Some(m)
        }
    };
    Ok(NetworkInputs { params, calibration })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn minimal_document() {
        let cfg: ExperimentConfig = toml::from_str("schema_version = 1\n").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("schema_version = 1\nsed = 3\n").is_err());
        let nested = "schema_version = 1\n[basic.device]\nfwhm = 0.2\ncolour = 1\n";
        assert!(toml::from_str::<ExperimentConfig>(nested).is_err());
    }

    #[test]
    fn wrong_version_and_repeated_channels() {
        let cfg: ExperimentConfig = toml::from_str("schema_version = 2\n").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.cascaded.device.dendrite_heaters = vec![4, 5, 1];
        assert!(cfg.validate().unwrap_err().contains("repeat"));
    }
}
