use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use ringsim_core::analysis::find_resonances;
use ringsim_core::calibration::{calibrate_basic, BasicCalibrationConfig};
use ringsim_core::device::{BasicDeviceSpec, NetworkSpec};
use ringsim_core::mdm::{extinction_ratio, InterferometerModel};
use ringsim_core::training::{generate_xor, sweep_network, train, truth_model, virtual_to_physical, NetworkCircuit, NetworkSim};
use ringsim_core::{seeds, Activation, DriveState, OsaConfig, Tap, TrainingConfig, VirtualParams};

fn spectra(c: &mut Criterion) {
    let spec = BasicDeviceSpec::default();
    let g = spec.generate(&mut seeds::substream(0, seeds::DEVICE_GEN)).unwrap();
    let osa = OsaConfig::default();
    let drive = g.device.drive_from_powers(&g.base_powers).unwrap();
    c.bench_function("simulate_spectrum 15 nm", |b| {
        b.iter(|| g.device.simulate_spectrum(black_box(&drive), Tap::thru(0), (1545.0, 1560.0), &osa, 1).unwrap())
    });
    let s = g
        .device
        .simulate_spectrum(&DriveState::zero(), Tap::thru(0), (1545.0, 1560.0), &osa.noiseless(), 1)
        .unwrap();
    let level = s.power_dbm().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rel = ringsim_core::Spectrum::new(s.start(), s.spacing(), s.power_dbm().iter().map(|p| p - level).collect()).unwrap();
    c.bench_function("find_resonances 4 troughs", |b| b.iter(|| find_resonances(black_box(&rel), 4, 0.5).unwrap()));
}

fn calibration(c: &mut Criterion) {
    let spec = BasicDeviceSpec::default();
    let g = spec.generate(&mut seeds::substream(0, seeds::DEVICE_GEN)).unwrap();
    let cfg = BasicCalibrationConfig::default();
    let mut group = c.benchmark_group("calibration");
    group.sample_size(10);
    group.bench_function("basic, 4 rings", |b| {
        b.iter(|| calibrate_basic(&g.device, &g.base_powers, &spec.wl_channels, OsaConfig::default(), &cfg).unwrap())
    });
    group.finish();
}

fn training(c: &mut Criterion) {
    let data = generate_xor(0);
    let act = Activation::default();
    let cfg = TrainingConfig {
        epochs: 100,
        ..TrainingConfig::default()
    };
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("xor, 100 epochs", |b| b.iter(|| train(black_box(&data), &cfg, &act).unwrap()));
    group.finish();
}

fn network(c: &mut Criterion) {
    let circuit = NetworkCircuit::default();
    let pp = virtual_to_physical(&VirtualParams::sweep_reference(), &circuit).unwrap();
    let device = NetworkSpec::default().build().unwrap();
    let model = truth_model(&device);
    let sim = NetworkSim::new(&device, &model, circuit, pp).unwrap();
    c.bench_function("network run", |b| b.iter(|| sim.run(black_box([0.05, 0.1])).unwrap()));
    let mut group = c.benchmark_group("network");
    group.sample_size(10);
    group.bench_function("sweep 20x20", |b| b.iter(|| sweep_network(&sim, 20, 32).unwrap()));
    group.finish();
}

fn mdm(c: &mut Criterion) {
    let s = InterferometerModel::new(0.3, 1.2e6)
        .unwrap()
        .spectrum((1540.0, 1560.0), 0.01, 1.0, 0.2, 1)
        .unwrap();
    c.bench_function("extinction_ratio 2001 points", |b| b.iter(|| extinction_ratio(black_box(&s)).unwrap()));
}

criterion_group!(benches, spectra, calibration, training, network, mdm);
criterion_main!(benches);
