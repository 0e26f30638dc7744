//! Backpropagation for the 2-3-1 network with the photonic activation, and
//! the bridge from trained virtual parameters to the simulated device.
//!
//! Currents are mA, detunes nm. Virtual parameters absorb every circuit
//! constant so the trained model is a plain weighted sum into `f`.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{FilterShape, ShapeCurve};
use crate::calibration::{CalibrationModel, RingRole, CALIBRATION_SCHEMA_VERSION};
use crate::device::{network, BankMode, HeaterPowers, HiddenDevice, Tap};
use crate::electronics::{amplifier_chain, balanced_current, ReadoutParams, WeightBankReadout};
use crate::error::{Error, Result};
use crate::seeds;
use crate::thermal::{convert_drive, DriveUnit};

/// Axon transfer `f(x) = h(g(x))` from added drive current to thru
/// transmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Activation {
    /// Lorentzian half-width, nm.
    pub gamma: f64,
    /// Peak drop fraction.
    pub atten: f64,
    pub th_k: f64,
    /// Bias current at which the axon sits on resonance, mA.
    pub ib: f64,
    pub scale: f64,
    /// Measured thru shape; replaces the Lorentzian when present.
    pub tabulated: Option<ShapeCurve>,
}

impl Default for Activation {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            atten: 0.98,
            th_k: 20.0,
            ib: 6.0,
            scale: 1000.0,
            tabulated: None,
        }
    }
}

impl Activation {
    pub fn from_shape(shape: &FilterShape, th_k: f64, ib: f64) -> Self {
        match shape {
            FilterShape::Lorentzian { gamma, atten } => Self {
                gamma: *gamma,
                atten: *atten,
                th_k,
                ib,
                ..Self::default()
            },
            FilterShape::Tabulated(c) => Self {
                gamma: shape.fwhm() / 2.0,
                atten: 1.0 - shape.min_transmission(),
                th_k,
                ib,
                tabulated: Some(c.clone()),
                ..Self::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma > 0.0
            && (0.0..=1.0).contains(&self.atten)
            && self.th_k > 0.0
            && self.ib >= 0.0
            && self.scale > 0.0;
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "activation gamma={} atten={} th_k={} ib={} scale={}",
                self.gamma, self.atten, self.th_k, self.ib, self.scale
            )));
        }
        if let Some(c) = &self.tabulated {
            if c.rel_nm.len() < 2 || c.rel_nm.len() != c.trans.len() {
                return Err(Error::InvalidParameter("tabulated activation shape".into()));
            }
        }
        Ok(())
    }

    /// Detune for added current `x`.
    pub fn g(&self, x: f64) -> f64 {
        self.th_k * (x * x + 2.0 * self.ib * x) / self.scale
    }

    pub fn dg(&self, x: f64) -> f64 {
        self.th_k * (2.0 * x + 2.0 * self.ib) / self.scale
    }

    pub fn h(&self, delta: f64) -> f64 {
        match &self.tabulated {
            Some(c) => c.transmission(delta),
            None => {
                let g2 = self.gamma * self.gamma;
                1.0 - self.atten * g2 / (g2 + delta * delta)
            }
        }
    }

    pub fn dh(&self, delta: f64) -> f64 {
        match &self.tabulated {
            Some(c) => c.slope(delta),
            None => {
                let g2 = self.gamma * self.gamma;
                let q = g2 + delta * delta;
                2.0 * self.atten * g2 * delta / (q * q)
            }
        }
    }

    /// `f` without the domain check; below `-ib` the quadratic mirrors.
    pub fn value(&self, x: f64) -> f64 {
        self.h(self.g(x))
    }

    pub fn slope(&self, x: f64) -> f64 {
        self.dh(self.g(x)) * self.dg(x)
    }

    pub fn f(&self, x: f64) -> Result<f64> {
        if !(x >= -self.ib) {
            return Err(Error::Domain(format!(
                "current {x} mA below -{} mA bias",
                self.ib
            )));
        }
        Ok(self.value(x))
    }

    pub fn df(&self, x: f64) -> f64 {
        self.slope(x)
    }
}

/// XOR samples; class A (label +1) is the (low, low) and (high, high) pair
/// of clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XorData {
    pub inputs: Vec<[f64; 2]>,
    pub labels: Vec<f64>,
}

impl XorData {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn swapped_labels(&self) -> Self {
        Self {
            inputs: self.inputs.clone(),
            labels: self.labels.iter().map(|d| -d).collect(),
        }
    }
}

pub const XOR_CLUSTER_SIZE: usize = 100;
pub const XOR_MAX_INPUT: f64 = 0.8;

pub fn generate_xor(seed: u64) -> XorData {
    let mut rng = seeds::substream(seed, seeds::DATA_GEN);
    let u = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let clusters = [
        ((0.2, 0.2), 1.0),
        ((0.6, 0.6), 1.0),
        ((0.2, 0.6), -1.0),
        ((0.6, 0.2), -1.0),
    ];
    let mut inputs = Vec::with_capacity(4 * XOR_CLUSTER_SIZE);
    let mut labels = Vec::with_capacity(4 * XOR_CLUSTER_SIZE);
    for ((cx, cy), label) in clusters {
        for _ in 0..XOR_CLUSTER_SIZE {
            let x: f64 = u.sample(&mut rng);
            let y: f64 = u.sample(&mut rng);
            inputs.push([
                (cx + 0.2 * x).clamp(0.0, XOR_MAX_INPUT),
                (cy + 0.2 * y).clamp(0.0, XOR_MAX_INPUT),
            ]);
            labels.push(label);
        }
    }
    XorData { inputs, labels }
}

/// Trainable parameters with circuit constants absorbed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VirtualParams {
    /// Hidden weights, `w0[k][j]` from input `j` to hidden `k`.
    pub w0: [[f64; 2]; 3],
    pub b0: [f64; 3],
    pub w1: [f64; 3],
    pub b1: f64,
}

pub const N_PARAMS: usize = 13;

impl VirtualParams {
    pub fn zeros() -> Self {
        Self::from_array([0.0; N_PARAMS])
    }

    /// Unit-normal initialisation.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut a = [0.0; N_PARAMS];
        for v in &mut a {
            *v = StandardNormal.sample(rng);
        }
        Self::from_array(a)
    }

    /// A known-good XOR solution for the default activation.
    pub fn xor_reference() -> Self {
        Self {
            w0: [
                [1.30109513, 0.90975827],
                [-0.79916418, -0.85981083],
                [0.9742766, -1.02000749],
            ],
            b0: [1.0609535, 0.65707952, 0.01618425],
            w1: [-4.16287088, 11.24845219, -9.0137167],
            b1: 2.17837,
        }
    }

    /// Parameters used for the physical network sweep: the hidden layer of
    /// [`Self::xor_reference`] with the output layer scaled down to fit
    /// the output weight bank.
    pub fn sweep_reference() -> Self {
        Self {
            w0: Self::xor_reference().w0,
            b0: [1.0609535, 0.65707952, -0.01618425],
            w1: [-0.416287088, 1.124845219, -0.90137167],
            b1: 0.4359157047300002,
        }
    }

    /// Order: w0 row-major, b0, w1, b1.
    pub fn to_array(&self) -> [f64; N_PARAMS] {
        let mut a = [0.0; N_PARAMS];
        for k in 0..3 {
            a[2 * k] = self.w0[k][0];
            a[2 * k + 1] = self.w0[k][1];
            a[6 + k] = self.b0[k];
            a[9 + k] = self.w1[k];
        }
        a[12] = self.b1;
        a
    }

    pub fn from_array(a: [f64; N_PARAMS]) -> Self {
        Self {
            w0: [[a[0], a[1]], [a[2], a[3]], [a[4], a[5]]],
            b0: [a[6], a[7], a[8]],
            w1: [a[9], a[10], a[11]],
            b1: a[12],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// `self + s · other`, elementwise.
    pub fn axpy(&self, s: f64, other: &Self) -> Self {
        let (a, b) = (self.to_array(), other.to_array());
        Self::from_array(std::array::from_fn(|i| a[i] + s * b[i]))
    }

    /// Joint positive scaling of the output layer.
    pub fn scale_output(&self, c: f64) -> Self {
        Self {
            w1: self.w1.map(|w| c * w),
            b1: c * self.b1,
            ..*self
        }
    }

    /// Hidden pre-activations (drive currents) for input `x`.
    pub fn hidden_drive(&self, x: [f64; 2]) -> [f64; 3] {
        std::array::from_fn(|k| self.w0[k][0] * x[0] + self.w0[k][1] * x[1] + self.b0[k])
    }
}

pub fn forward(vp: &VirtualParams, act: &Activation, x: [f64; 2]) -> ([f64; 3], f64) {
    let hidden = vp.hidden_drive(x).map(|u| act.value(u));
    let y = (0..3).map(|k| vp.w1[k] * hidden[k]).sum::<f64>() + vp.b1;
    (hidden, y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMode {
    /// `½ (d − y)²`.
    SquaredError,
    /// Softmax cross-entropy over the logit pair `(y, −y)`.
    SoftmaxCrossEntropy,
}

impl CostMode {
    pub fn cost(self, d: f64, y: f64) -> f64 {
        match self {
            CostMode::SquaredError => 0.5 * (d - y) * (d - y),
            CostMode::SoftmaxCrossEntropy => softplus(-2.0 * d * y),
        }
    }

    /// dE/dy.
    pub fn dcost(self, d: f64, y: f64) -> f64 {
        match self {
            CostMode::SquaredError => y - d,
            CostMode::SoftmaxCrossEntropy => -2.0 * d * sigmoid(-2.0 * d * y),
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradient of the per-sample cost with respect to every parameter.
pub fn gradients(vp: &VirtualParams, act: &Activation, mode: CostMode, x: [f64; 2], d: f64) -> VirtualParams {
    let u = vp.hidden_drive(x);
    let hidden = u.map(|v| act.value(v));
    let y = (0..3).map(|k| vp.w1[k] * hidden[k]).sum::<f64>() + vp.b1;
    let e = mode.dcost(d, y);
    let mut g = VirtualParams::zeros();
    for k in 0..3 {
        g.w1[k] = e * hidden[k];
        let back = e * vp.w1[k] * act.slope(u[k]);
        g.b0[k] = back;
        g.w0[k] = [back * x[0], back * x[1]];
    }
    g.b1 = e;
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub eta: f64,
    pub epochs: usize,
    pub seed: u64,
    pub cost: CostMode,
    /// Reshuffle sample order every epoch.
    pub shuffle: bool,
    /// Stop once the training accuracy reaches this fraction.
    pub stop_at_accuracy: Option<f64>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            epochs: 1000,
            seed: 0,
            cost: CostMode::SquaredError,
            shuffle: true,
            stop_at_accuracy: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidParameter(format!("learning rate {}", self.eta)));
        }
        Ok(())
    }
}

/// Divergence: mean cost above this multiple of the initial cost...
pub const DIVERGENCE_FACTOR: f64 = 10.0;
/// ...for this many consecutive epochs.
pub const DIVERGENCE_PATIENCE: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_cost: f64,
    /// Fraction of samples whose sign(y) disagrees with the label.
    pub class_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingOutcome {
    pub params: VirtualParams,
    /// Entry 0 is the untrained state.
    pub curve: Vec<EpochStats>,
}

impl TrainingOutcome {
    pub fn final_accuracy(&self) -> f64 {
        self.curve.last().map_or(0.0, |s| 1.0 - s.class_error)
    }
}

pub fn evaluate(vp: &VirtualParams, act: &Activation, mode: CostMode, data: &XorData) -> (f64, f64) {
    let mut cost = 0.0;
    let mut wrong = 0usize;
    for (x, d) in data.inputs.iter().zip(&data.labels) {
        let (_, y) = forward(vp, act, *x);
        cost += mode.cost(*d, y);
        if !(y * d > 0.0) {
            wrong += 1;
        }
    }
    let n = data.len().max(1) as f64;
    (cost / n, wrong as f64 / n)
}

pub fn accuracy(vp: &VirtualParams, act: &Activation, data: &XorData) -> f64 {
    1.0 - evaluate(vp, act, CostMode::SquaredError, data).1
}

/// SGD from a unit-normal start drawn from the `training-init` substream.
pub fn train(data: &XorData, cfg: &TrainingConfig, act: &Activation) -> Result<TrainingOutcome> {
    let mut rng = seeds::substream(cfg.seed, seeds::TRAINING_INIT);
    let init = VirtualParams::random(&mut rng);
    run_sgd(init, data, cfg, act, &mut rng)
}

pub fn train_from(
    init: VirtualParams,
    data: &XorData,
    cfg: &TrainingConfig,
    act: &Activation,
) -> Result<TrainingOutcome> {
    let mut rng = seeds::substream(cfg.seed, seeds::TRAINING_INIT);
    run_sgd(init, data, cfg, act, &mut rng)
}

fn run_sgd<R: Rng + ?Sized>(
    init: VirtualParams,
    data: &XorData,
    cfg: &TrainingConfig,
    act: &Activation,
    rng: &mut R,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    act.validate()?;
    if data.is_empty() || data.labels.len() != data.inputs.len() {
        return Err(Error::InvalidParameter(format!(
            "{} inputs with {} labels",
            data.inputs.len(),
            data.labels.len()
        )));
    }
    if !init.is_finite() {
        return Err(Error::InvalidParameter("non-finite initial parameters".into()));
    }
    let mut p = init;
    let (c0, e0) = evaluate(&p, act, cfg.cost, data);
    let mut curve = vec![EpochStats {
        epoch: 0,
        mean_cost: c0,
        class_error: e0,
    }];
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut over = 0;
    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            order.shuffle(rng);
        }
        for &i in &order {
            let g = gradients(&p, act, cfg.cost, data.inputs[i], data.labels[i]);
            p = p.axpy(-cfg.eta, &g);
        }
        if !p.is_finite() {
            return Err(Error::Diverged(epoch));
        }
        let (cost, err) = evaluate(&p, act, cfg.cost, data);
        curve.push(EpochStats {
            epoch,
            mean_cost: cost,
            class_error: err,
        });
        over = if cost > DIVERGENCE_FACTOR * c0 { over + 1 } else { 0 };
        if over >= DIVERGENCE_PATIENCE {
            return Err(Error::Diverged(epoch));
        }
        if cfg.stop_at_accuracy.is_some_and(|a| 1.0 - err >= a) {
            break;
        }
    }
    Ok(TrainingOutcome { params: p, curve })
}

pub fn write_curve_csv<W: Write>(curve: &[EpochStats], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,mean_cost,class_error")?;
    for s in curve {
        writeln!(w, "{},{},{}", s.epoch, s.mean_cost, s.class_error)?;
    }
    Ok(())
}

/// Output over a rectilinear input grid, `values[iy][ix]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl Surface {
    pub fn sign(&self) -> Vec<Vec<i8>> {
        self.values
            .iter()
            .map(|r| r.iter().map(|v| v.signum() as i8 * (*v != 0.0) as i8).collect())
            .collect()
    }

    /// Value at the grid point nearest `(x, y)`.
    pub fn nearest(&self, x: f64, y: f64) -> f64 {
        let near = |axis: &[f64], v: f64| {
            (0..axis.len())
                .min_by(|&a, &b| (axis[a] - v).abs().total_cmp(&(axis[b] - v).abs()))
                .unwrap_or(0)
        };
        self.values[near(&self.ys, y)][near(&self.xs, x)]
    }

    /// True when the four XOR cluster centres carry the sign of their class.
    pub fn xor_pattern(&self) -> bool {
        self.nearest(0.2, 0.2) > 0.0
            && self.nearest(0.6, 0.6) > 0.0
            && self.nearest(0.2, 0.6) < 0.0
            && self.nearest(0.6, 0.2) < 0.0
    }

    /// Header row of x coordinates; each following row starts with its y.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "y\\x")?;
        for x in &self.xs {
            write!(w, ",{x}")?;
        }
        writeln!(w)?;
        for (y, row) in self.ys.iter().zip(&self.values) {
            write!(w, "{y}")?;
            for v in row {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Virtual-model output over `[0, 0.8]²`.
pub fn virtual_surface(vp: &VirtualParams, act: &Activation, n: usize) -> Surface {
    let axis = linspace(0.0, XOR_MAX_INPUT, n);
    let values = axis
        .iter()
        .map(|&y| axis.iter().map(|&x| forward(vp, act, [x, y]).1).collect())
        .collect();
    Surface {
        xs: axis.clone(),
        ys: axis,
        values,
    }
}

/// Readout chains and optical power of the 2-3-1 network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkCircuit {
    pub hidden: ReadoutParams,
    pub output: ReadoutParams,
    /// Attenuated pump per wavelength ahead of the branch split, mW.
    pub pump: f64,
    /// Pump division seen by each hidden weight bank.
    pub hidden_split: f64,
    /// Pump division seen by the output weight bank.
    pub output_split: f64,
}

impl Default for NetworkCircuit {
    fn default() -> Self {
        Self {
            hidden: ReadoutParams::hidden_layer(),
            output: ReadoutParams::output_layer(),
            pump: 1e-3,
            hidden_split: 6.0,
            output_split: 2.0,
        }
    }
}

impl NetworkCircuit {
    /// mA of hidden drive per unit weighted input.
    pub fn hidden_gain(&self) -> f64 {
        let p = &self.hidden;
        p.rt * p.resp * self.pump / (self.hidden_split * p.rs)
    }

    /// Output volts per unit weighted hidden transmission.
    pub fn output_gain(&self) -> f64 {
        let p = &self.output;
        p.rt * p.resp * self.pump / (self.output_split * p.rs)
    }
}

/// Weights are thru-minus-drop fractions in [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    pub w23: [[f64; 2]; 3],
    pub w31: [f64; 3],
    /// Current added after each hidden amplifier, mA.
    pub axon_bias: [f64; 3],
    /// Output offset, V.
    pub out_bias: f64,
}

/// The third wavelength passes the hidden banks unweighted and acts as a
/// unit optical bias, so it is folded into `axon_bias`.
pub fn virtual_to_physical(vp: &VirtualParams, circuit: &NetworkCircuit) -> Result<PhysicalParams> {
    let g1 = circuit.hidden_gain();
    let g2 = circuit.output_gain();
    if !(g1 > 0.0 && g2 > 0.0) {
        return Err(Error::InvalidParameter(format!("network gains {g1}, {g2}")));
    }
    let h = &circuit.hidden;
    let o = &circuit.output;
    let p = PhysicalParams {
        w23: vp.w0.map(|r| r.map(|w| w / g1)),
        w31: vp.w1.map(|w| w / g2),
        axon_bias: vp.b0.map(|b| b - g1 - h.bv / h.rs),
        out_bias: vp.b1 - o.bv / o.rs,
    };
    for w in p.w23.iter().flatten().chain(&p.w31) {
        if !(w.abs() <= 1.0) {
            return Err(Error::Unrealizable(*w));
        }
    }
    Ok(p)
}

/// Mirror of a device built from its hidden truth, standing in for a
/// finished calibration when only the network behaviour is of interest.
pub fn truth_model(device: &HiddenDevice) -> CalibrationModel {
    let th = device.thermal();
    let roles = device
        .root()
        .banks()
        .iter()
        .flat_map(|b| {
            let role = match b.mode {
                BankMode::Axon => RingRole::Axon,
                BankMode::Dendrite => RingRole::Dendrite,
            };
            std::iter::repeat_n(role, b.rings.len())
        })
        .collect();
    let rings = device.rings();
    CalibrationModel {
        schema_version: CALIBRATION_SCHEMA_VERSION,
        channel_order: th.channels().to_vec(),
        roles,
        heat_bias: th.heat_bias().to_vec(),
        lam_bias: rings.iter().map(|r| r.lam0).collect(),
        k_est: th.k().to_vec(),
        filter_shapes: rings
            .iter()
            .map(|r| FilterShape::Lorentzian {
                gamma: r.gamma,
                atten: r.atten,
            })
            .collect(),
        attenuation_est: device.attenuation(),
        heater_resistance: th.heater_resistance(),
        telemetry: vec![],
    }
}

/// One evaluation of the physical network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    /// Input axon transmissions.
    pub x0: [f64; 2],
    /// Hidden axon drive currents after the amplifiers, mA.
    pub hidden_currents: [f64; 3],
    /// Hidden axon transmissions.
    pub x1: [f64; 3],
    pub y: f64,
}

/// The 2-3-1 network on a hidden device with programmed weights.
///
/// The device must follow [`crate::device::NetworkSpec`]'s bank layout.
#[derive(Debug, Clone)]
pub struct NetworkSim<'a> {
    device: &'a HiddenDevice,
    circuit: NetworkCircuit,
    params: PhysicalParams,
    base: HeaterPowers,
    input_bias: [f64; 2],
    hidden_bias: [f64; 3],
    wavelengths: Vec<f64>,
    source_pump: f64,
}

impl<'a> NetworkSim<'a> {
    pub fn new(
        device: &'a HiddenDevice,
        model: &CalibrationModel,
        circuit: NetworkCircuit,
        params: PhysicalParams,
    ) -> Result<Self> {
        let banks = device.root().banks();
        let layout_ok = banks.len() == 6
            && banks[network::INPUT_AXONS].channels == network::INPUT_CHANNELS
            && banks[network::HIDDEN_AXONS].channels == network::HIDDEN_CHANNELS;
        if !layout_ok {
            return Err(Error::InvalidParameter("device is not a 2-3-1 network".into()));
        }
        for w in params.w23.iter().flatten().chain(&params.w31) {
            if !(w.abs() <= 1.0) {
                return Err(Error::Unrealizable(*w));
            }
        }
        let mut thru = std::collections::BTreeMap::new();
        for (k, &bank) in network::HIDDEN_DENDRITES.iter().enumerate() {
            for (j, ch) in network::dendrite_channels(bank).into_iter().enumerate() {
                thru.insert(ch, (params.w23[k][j] + 1.0) / 2.0);
            }
        }
        for (k, ch) in network::dendrite_channels(network::OUTPUT_DENDRITE).into_iter().enumerate() {
            thru.insert(ch, (params.w31[k] + 1.0) / 2.0);
        }
        let mut weights = Vec::new();
        let mut n_axons = 0;
        for (ch, role) in model.channel_order.iter().zip(&model.roles) {
            match role {
                RingRole::Axon => n_axons += 1,
                RingRole::Dendrite => weights.push(
                    *thru
                        .get(ch)
                        .ok_or_else(|| Error::InvalidParameter(format!("model dendrite channel {ch}")))?,
                ),
            }
        }
        let drive = model.weights_to_drive(&weights, &vec![0.0; n_axons])?;
        let base = model.powers_for(&drive)?;
        let r = device.thermal().heater_resistance();
        let bias_ma = |ch| -> Result<f64> {
            let i = model
                .channel_order
                .iter()
                .position(|c| *c == ch)
                .ok_or(Error::UnknownChannel(ch))?;
            convert_drive(model.heat_bias[i], DriveUnit::MilliWatt, DriveUnit::MilliAmp, r)
        };
        let input_bias = [
            bias_ma(network::INPUT_CHANNELS[0])?,
            bias_ma(network::INPUT_CHANNELS[1])?,
        ];
        let hidden_bias = [
            bias_ma(network::HIDDEN_CHANNELS[0])?,
            bias_ma(network::HIDDEN_CHANNELS[1])?,
            bias_ma(network::HIDDEN_CHANNELS[2])?,
        ];
        let mut wavelengths: Vec<f64> = banks[network::HIDDEN_AXONS]
            .rings
            .iter()
            .map(|r| r.lam0)
            .collect();
        wavelengths.sort_by(f64::total_cmp);
        Ok(Self {
            device,
            circuit,
            params,
            base,
            input_bias,
            hidden_bias,
            wavelengths,
            source_pump: circuit.pump / device.attenuation(),
        })
    }

    pub fn params(&self) -> &PhysicalParams {
        &self.params
    }

    fn shifts(&self, powers: &HeaterPowers) -> Result<Vec<f64>> {
        self.device.shifts(&self.device.drive_from_powers(powers)?)
    }

    fn port_sum(&self, shifts: &[f64], tap: Tap) -> Result<f64> {
        Ok(self
            .device
            .transmitted_power(shifts, tap, &self.wavelengths, self.source_pump)?
            .iter()
            .sum())
    }

    fn transmissions<const N: usize>(&self, shifts: &[f64], bank: usize) -> Result<[f64; N]> {
        let p = self.device.transmitted_power(
            shifts,
            Tap::thru(bank),
            &self.wavelengths[..N],
            self.source_pump,
        )?;
        let norm = self.source_pump * self.device.incident_fraction(bank)?;
        Ok(std::array::from_fn(|i| (p[i] / norm).clamp(0.0, 1.0)))
    }

    fn balanced(&self, shifts: &[f64], bank: usize, resp: f64) -> Result<f64> {
        let readout = WeightBankReadout {
            thru_power: self.port_sum(shifts, Tap::thru(bank))?,
            drop_power: self.port_sum(shifts, Tap::drop(bank))?,
        };
        Ok(balanced_current(readout, resp))
    }

    fn set_current(&self, powers: &mut HeaterPowers, ch: u32, current: f64) -> Result<()> {
        if current < 0.0 {
            return Err(Error::NegativePower {
                channel: ch,
                power: -current * current,
            });
        }
        let r = self.device.thermal().heater_resistance();
        powers.insert(ch, convert_drive(current, DriveUnit::MilliAmp, DriveUnit::MilliWatt, r)?);
        Ok(())
    }

    /// Runs the chain for input axon drive currents added to their bias.
    pub fn run(&self, drive: [f64; 2]) -> Result<NetworkState> {
        let mut powers = self.base.clone();
        for ((ch, bias), d) in network::INPUT_CHANNELS.iter().zip(self.input_bias).zip(drive) {
            self.set_current(&mut powers, *ch, bias + d)?;
        }
        let shifts = self.shifts(&powers)?;
        let x0 = self.transmissions::<2>(&shifts, network::INPUT_AXONS)?;
        let h = self.circuit.hidden;
        let mut hidden_currents = [0.0; 3];
        for (k, &bank) in network::HIDDEN_DENDRITES.iter().enumerate() {
            let c = self.balanced(&shifts, bank, h.resp)?;
            let chain = ReadoutParams {
                bc: self.params.axon_bias[k],
                ..h
            };
            hidden_currents[k] = amplifier_chain(c, &chain);
            self.set_current(
                &mut powers,
                network::HIDDEN_CHANNELS[k],
                self.hidden_bias[k] + hidden_currents[k],
            )?;
        }
        let shifts = self.shifts(&powers)?;
        let x1 = self.transmissions::<3>(&shifts, network::HIDDEN_AXONS)?;
        let o = self.circuit.output;
        let c = self.balanced(&shifts, network::OUTPUT_DENDRITE, o.resp)?;
        let y = amplifier_chain(
            c,
            &ReadoutParams {
                bc: self.params.out_bias,
                ..o
            },
        );
        Ok(NetworkState {
            x0,
            hidden_currents,
            x1,
            y,
        })
    }
}

/// Input drive range of the physical sweep, mA.
pub const SWEEP_MAX_DRIVE: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSweep {
    /// Output on the uniform normalised-input grid.
    pub surface: Surface,
    /// Mean input axon transmission per drive step, per input.
    pub input_axes: [Vec<f64>; 2],
    /// Raw output, `raw[i][j]` for drive steps `i` (input 0) and `j`.
    pub raw: Vec<Vec<f64>>,
}

/// Sweeps both input drives over `[0, 0.15]` mA on a `grid_n²` grid and
/// resamples the output bilinearly onto `out_n²` points of `[0, 0.8]²`.
pub fn sweep_network(sim: &NetworkSim, grid_n: usize, out_n: usize) -> Result<NetworkSweep> {
    if grid_n < 2 || out_n < 2 {
        return Err(Error::InvalidParameter(format!("sweep grid {grid_n}, output {out_n}")));
    }
    let cs = linspace(0.0, SWEEP_MAX_DRIVE, grid_n);
    let states = (0..grid_n * grid_n)
        .into_par_iter()
        .map(|idx| sim.run([cs[idx / grid_n], cs[idx % grid_n]]))
        .collect::<Result<Vec<_>>>()?;
    let n = grid_n as f64;
    let mut ax = [vec![0.0; grid_n], vec![0.0; grid_n]];
    for i in 0..grid_n {
        for j in 0..grid_n {
            let s = &states[i * grid_n + j];
            ax[0][i] += s.x0[0] / n;
            ax[1][j] += s.x0[1] / n;
        }
    }
    for a in &ax {
        if a.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "input axon transmission not increasing with drive".into(),
            ));
        }
    }
    let raw: Vec<Vec<f64>> = (0..grid_n)
        .map(|i| (0..grid_n).map(|j| states[i * grid_n + j].y).collect())
        .collect();
    let axis = linspace(0.0, XOR_MAX_INPUT, out_n);
    let values = axis
        .iter()
        .map(|&y| axis.iter().map(|&x| bilinear(&ax[0], &ax[1], &raw, x, y)).collect())
        .collect();
    Ok(NetworkSweep {
        surface: Surface {
            xs: axis.clone(),
            ys: axis,
            values,
        },
        input_axes: ax,
        raw,
    })
}

/// Segment index and fraction of `v` on an increasing axis, clamped.
fn locate(axis: &[f64], v: f64) -> (usize, f64) {
    let n = axis.len();
    if v <= axis[0] {
        return (0, 0.0);
    }
    if v >= axis[n - 1] {
        return (n - 2, 1.0);
    }
    let j = axis.partition_point(|a| *a <= v).clamp(1, n - 1);
    (j - 1, (v - axis[j - 1]) / (axis[j] - axis[j - 1]))
}

fn bilinear(xa: &[f64], ya: &[f64], z: &[Vec<f64>], x: f64, y: f64) -> f64 {
    let (i, fx) = locate(xa, x);
    let (j, fy) = locate(ya, y);
    let lo = z[i][j] * (1.0 - fx) + z[i + 1][j] * fx;
    let hi = z[i][j + 1] * (1.0 - fx) + z[i + 1][j + 1] * fx;
    lo * (1.0 - fy) + hi * fy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::NetworkSpec;
    use approx::assert_relative_eq;

    #[test]
    fn activation_examples() {
        let act = Activation::default();
        assert_relative_eq!(act.f(0.0).unwrap(), 0.02, epsilon = 1e-12);
        let unit = Activation { atten: 1.0, ..act.clone() };
        let d: f64 = 20.0 * 13.0 / 1000.0;
        assert_relative_eq!(unit.f(1.0).unwrap(), d * d / (0.01 + d * d), epsilon = 1e-12);
        assert_relative_eq!(unit.f(1.0).unwrap(), 0.8711, epsilon = 1e-4);
        assert!(act.f(50.0).unwrap() > 0.999);
        assert!(act.f(-6.5).is_err());
        assert_eq!(act.df(-6.0), 0.0);
    }

    #[test]
    fn tabulated_shape_tracks_lorentzian() {
        let lor = Activation::default();
        let xs = linspace(-1.0, 1.0, 2001);
        let c = ShapeCurve {
            trans: xs.iter().map(|d| lor.h(*d)).collect(),
            rel_nm: xs,
        };
        let tab = Activation::from_shape(&FilterShape::Tabulated(c), 20.0, 6.0);
        for x in [-0.4, -0.1, 0.0, 0.3, 1.0] {
            assert_relative_eq!(tab.f(x).unwrap(), lor.f(x).unwrap(), epsilon = 1e-4);
        }
        assert_relative_eq!(tab.gamma, 0.1, epsilon = 2e-3);
    }

    #[test]
    fn xor_layout() {
        let d = generate_xor(3);
        assert_eq!(d.len(), 400);
        assert_eq!(d.labels.iter().filter(|l| **l > 0.0).count(), 200);
        assert!(d.inputs.iter().flatten().all(|v| (0.0..=0.8).contains(v)));
        assert_eq!(d, generate_xor(3));
        assert_ne!(d, generate_xor(4));
    }

    #[test]
    fn zero_weights_forward() {
        let act = Activation::default();
        let vp = VirtualParams {
            w1: [1.0, 2.0, 3.0],
            b1: 0.5,
            ..VirtualParams::zeros()
        };
        let (h, y) = forward(&vp, &act, [0.3, 0.7]);
        assert_eq!(h, [act.value(0.0); 3]);
        assert_relative_eq!(y, 6.0 * act.value(0.0) + 0.5);
    }

    #[test]
    fn array_round_trip() {
        let vp = VirtualParams::xor_reference();
        assert_eq!(VirtualParams::from_array(vp.to_array()), vp);
    }

    #[test]
    fn single_point_cost_falls() {
        let data = XorData {
            inputs: vec![[0.3, 0.6]],
            labels: vec![1.0],
        };
        let cfg = TrainingConfig {
            eta: 1e-3,
            epochs: 10,
            ..TrainingConfig::default()
        };
        let mut rng = seeds::substream(5, seeds::TRAINING_INIT);
        let out = train_from(VirtualParams::random(&mut rng), &data, &cfg, &Activation::default()).unwrap();
        assert_eq!(out.curve.len(), 11);
        for w in out.curve.windows(2) {
            assert!(w[1].mean_cost < w[0].mean_cost);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let data = generate_xor(0);
        let cfg = TrainingConfig {
            eta: 1e6,
            epochs: 200,
            ..TrainingConfig::default()
        };
        let err = train(&data, &cfg, &Activation::default()).unwrap_err();
        assert!(matches!(err, Error::Diverged(_)), "{err}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = TrainingConfig::default();
        let empty = XorData {
            inputs: vec![],
            labels: vec![],
        };
        assert!(train(&empty, &cfg, &Activation::default()).is_err());
        let bad = TrainingConfig { eta: 0.0, ..cfg };
        assert!(train(&generate_xor(0), &bad, &Activation::default()).is_err());
    }

    #[test]
    fn physical_conversion() {
        let c = NetworkCircuit::default();
        let p = virtual_to_physical(&VirtualParams::sweep_reference(), &c).unwrap();
        assert_relative_eq!(p.w23[0][0], 0.5782645, epsilon = 1e-6);
        assert_relative_eq!(p.axon_bias[0], -5.1890465, epsilon = 1e-6);
        let zero = virtual_to_physical(&VirtualParams::zeros(), &c).unwrap();
        assert_eq!(zero.w31, [0.0; 3]);
        let too_big = VirtualParams {
            w1: [10.0, 0.0, 0.0],
            ..VirtualParams::zeros()
        };
        assert!(matches!(virtual_to_physical(&too_big, &c), Err(Error::Unrealizable(_))));
    }

    #[test]
    fn network_sim_runs() {
        let dev = NetworkSpec::default().build().unwrap();
        let p = virtual_to_physical(&VirtualParams::sweep_reference(), &NetworkCircuit::default()).unwrap();
        let sim = NetworkSim::new(&dev, &truth_model(&dev), NetworkCircuit::default(), p).unwrap();
        let s = sim.run([0.0, 0.0]).unwrap();
        assert!(s.x0.iter().all(|x| *x < 0.05), "{s:?}");
        let s = sim.run([0.15, 0.15]).unwrap();
        assert!(s.x0.iter().all(|x| *x > 0.7), "{s:?}");
    }

    #[test]
    fn bilinear_reproduces_planes() {
        let xa = [0.0, 0.3, 1.0];
        let ya = [0.0, 0.5, 0.9];
        let z: Vec<Vec<f64>> = xa
            .iter()
            .map(|x| ya.iter().map(|y| 2.0 * x - y + 0.5).collect())
            .collect();
        assert_relative_eq!(bilinear(&xa, &ya, &z, 0.7, 0.2), 2.0 * 0.7 - 0.2 + 0.5, epsilon = 1e-12);
        assert_relative_eq!(bilinear(&xa, &ya, &z, 2.0, -1.0), 2.0 - 0.0 + 0.5, epsilon = 1e-12);
    }
}
