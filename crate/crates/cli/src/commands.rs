//! The experiment runs. Each writes its artifacts into an [`ArtifactSet`]
//! and returns how the run ended; the caller writes the manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Result;
use ringsim_core::calibration::{
    basic_gates, calibrate_basic, calibrate_cascaded, cascaded_gates, CalibrationModel, CalibrationRun,
};
use ringsim_core::device::{HeaterPowers, HiddenDevice, OsaConfig, Tap, CASCADED_OUTPUT};
use ringsim_core::mdm::{coupling_report, parse_geometry, write_report_csv, InterferometerModel};
use ringsim_core::training::{
    generate_xor, linspace, sweep_network, train, truth_model, virtual_surface, virtual_to_physical,
    write_curve_csv, NetworkSim, Surface, SWEEP_MAX_DRIVE,
};
use ringsim_core::{seeds, Error, Spectrum, VirtualParams};
use serde::Serialize;

use crate::artifacts::ArtifactSet;
use crate::config::{ExperimentConfig, NetworkInputs};
use crate::plot::{self, ArtifactKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Svg,
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub code: i32,
    pub status: &'static str,
    pub message: String,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_GATE: i32 = 3;
pub const EXIT_CONVERGENCE: i32 = 4;

impl Outcome {
    pub fn ok(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_OK,
            status: "ok",
            message: message.into(),
        }
    }

    pub fn gate(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_GATE,
            status: "gate-failed",
            message: message.into(),
        }
    }

    pub fn not_converged(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONVERGENCE,
            status: "not-converged",
            message: message.into(),
        }
    }

    /// Unrealizable weights are a validation failure; everything else the
    /// pipeline raises at run time counts as non-convergence.
    pub fn from_error(e: &Error) -> Self {
        match e {
            Error::Unrealizable(_) => Self::gate(e.to_string()),
            _ => Self::not_converged(e.to_string()),
        }
    }
}

pub struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    pub seed: u64,
    pub format: Format,
}

impl Ctx<'_> {
    fn osa(&self) -> OsaConfig {
        self.cfg.osa.with_seed(seeds::substream_seed(self.seed, seeds::NOISE))
    }
}

/// Index of the noise draw for report spectra, well clear of the
/// calibration's own measurement counter.
const REPORT_DRAW: u64 = 1 << 40;

fn yes(b: bool) -> &'static str {
    if b { "PASS" } else { "FAIL" }
}

fn write_model_artifacts(
    set: &mut ArtifactSet,
    ctx: &Ctx,
    run: &CalibrationRun,
    device: &HiddenDevice,
    tap: Tap,
    window: (f64, f64),
) -> Result<()> {
    let model = &run.model;
    set.write("calibration.json", model.to_json()?.as_bytes(), "calibration model")?;
    set.write_with("telemetry.csv", "controller error per iteration", |w| {
        use std::io::Write;
        writeln!(w, "stage,iteration,error")?;
        for t in &model.telemetry {
            let stage = t.stage.replace(',', ";");
            for (i, e) in t.errors.iter().enumerate() {
                writeln!(w, "{stage},{i},{e}")?;
            }
        }
        Ok(())
    })?;
    let powers: HeaterPowers = model
        .channel_order
        .iter()
        .copied()
        .zip(model.heat_bias.iter().copied())
        .collect();
    let drive = device.drive_from_powers(&powers)?;
    let mut osa = ctx.osa();
    osa.rng_seed = seeds::indexed_seed(osa.rng_seed, REPORT_DRAW);
    let spectrum = device.simulate_spectrum(&drive, tap, window, &osa, 1)?;
    let mut csv = Vec::new();
    spectrum.write_csv(&mut csv)?;
    set.write("spectrum.csv", &csv, "output spectrum at the calibrated bias")?;
    if ctx.format == Format::Svg {
        let text = String::from_utf8_lossy(&csv);
        let svg = plot::render(ArtifactKind::Spectrum, &text, "spectrum at calibrated bias")
            .map_err(anyhow::Error::msg)?;
        set.write("spectrum.svg", svg.as_bytes(), "spectrum chart")?;
    }
    Ok(())
}

fn telemetry_summary(model: &CalibrationModel, out: &mut String) {
    let _ = writeln!(out, "controller runs:");
    for t in &model.telemetry {
        let _ = writeln!(
            out,
            "  {:<22} {:>3} iterations, last error {:.5} nm, {}",
            t.stage,
            t.errors.len(),
            t.errors.last().copied().unwrap_or(f64::NAN),
            if t.converged { "converged" } else { "not converged" }
        );
    }
}

#[derive(Serialize)]
struct CalibrationReport<G: Serialize> {
    command: &'static str,
    seed: u64,
    gates: G,
    passed: bool,
    measurements: u64,
    merged_after: Option<usize>,
}

pub fn calibrate_basic_cmd(ctx: &Ctx, set: &mut ArtifactSet) -> Result<Outcome> {
    let sec = &ctx.cfg.basic;
    let g = sec.device.generate(&mut seeds::substream(ctx.seed, seeds::DEVICE_GEN))?;
    let run = match calibrate_basic(&g.device, &g.base_powers, &sec.device.wl_channels, ctx.osa(), &sec.calibration) {
        Ok(r) => r,
        Err(e) => return failed_run(set, "calibrate-basic", ctx.seed, &e),
    };
    let gates = basic_gates(&run.model, &g.device, &sec.device.wl_channels)?;
    write_model_artifacts(set, ctx, &run, &g.device, Tap::thru(0), sec.calibration.window)?;
    let passed = gates.passed();
    set.write_json(
        "report.json",
        &CalibrationReport {
            command: "calibrate-basic",
            seed: ctx.seed,
            gates,
            passed,
            measurements: run.measurements,
            merged_after: None,
        },
        "validation gates",
    )?;

    let mut t = String::new();
    let _ = writeln!(t, "calibrate-basic, seed {}", ctx.seed);
    let _ = writeln!(t, "rings: {}", run.model.channel_order.len());
    let _ = writeln!(t, "channel order: {:?}", run.model.channel_order);
    let _ = writeln!(t, "validation gates:");
    let _ = writeln!(t, "  ascription exact        {:<12} {}", gates.ascription_exact, yes(gates.ascription_exact));
    let _ = writeln!(
        t,
        "  heat bias error         {:<12.6} {} (limit 0.01 mW)",
        gates.heat_bias_error,
        yes(gates.heat_bias_error <= 0.01)
    );
    let _ = writeln!(
        t,
        "  lambda bias error       {:<12.6} {} (limit 0.01 nm)",
        gates.lam_bias_error,
        yes(gates.lam_bias_error <= 0.01)
    );
    let _ = writeln!(
        t,
        "  K relative error        {:<12.6} {} (limit 0.10, entries >= 10 nm/mW)",
        gates.k_relative_error,
        yes(gates.k_relative_error <= 0.10)
    );
    let _ = writeln!(t, "spectrum measurements: {}", run.measurements);
    telemetry_summary(&run.model, &mut t);
    let _ = writeln!(t, "result: {}", if passed { "all gates passed" } else { "gate failure" });
    set.write("report.txt", t.as_bytes(), "human-readable report")?;
    Ok(if passed {
        Outcome::ok("all validation gates passed")
    } else {
        Outcome::gate("validation gate failed")
    })
}

pub fn calibrate_cascaded_cmd(ctx: &Ctx, set: &mut ArtifactSet) -> Result<Outcome> {
    let sec = &ctx.cfg.cascaded;
    let spec = &sec.device;
    let g = spec.generate(&mut seeds::substream(ctx.seed, seeds::DEVICE_GEN))?;
    let run = match calibrate_cascaded(
        &g.device,
        &g.base_powers,
        &spec.axon_heaters,
        &spec.dendrite_heaters,
        &spec.wl_channels,
        ctx.osa(),
        &sec.calibration,
    ) {
        Ok(r) => r,
        Err(e) => return failed_run(set, "calibrate-cascaded", ctx.seed, &e),
    };
    let gates = cascaded_gates(&run.model, &g.device, &spec.wl_channels)?;
    write_model_artifacts(set, ctx, &run, &g.device, CASCADED_OUTPUT, sec.calibration.window)?;
    let passed = gates.passed();
    set.write_json(
        "report.json",
        &CalibrationReport {
            command: "calibrate-cascaded",
            seed: ctx.seed,
            gates,
            passed,
            measurements: run.measurements,
            merged_after: run.merged_after,
        },
        "validation gates",
    )?;

    let mut t = String::new();
    let _ = writeln!(t, "calibrate-cascaded, seed {}", ctx.seed);
    let _ = writeln!(t, "ring pairs: {}", spec.wl_channels.len());
    match run.merged_after {
        Some(p) => {
            let _ = writeln!(t, "merged after pass {p}");
        }
        None => {
            let _ = writeln!(t, "merge not converged after {} passes", sec.calibration.max_merge_passes);
        }
    }
    let _ = writeln!(t, "validation gates:");
    let _ = writeln!(t, "  ascription exact        {:<12} {}", gates.ascription_exact, yes(gates.ascription_exact));
    let rows = [
        ("merged lambda error", gates.merged_lam_error, gates.merged_lam_error <= 0.01, "(limit 0.01 nm)"),
        ("heat bias error", gates.heat_bias_error, gates.heat_bias_error <= 0.01, "(limit 0.01 mW)"),
        (
            "attenuation rel. error",
            gates.attenuation_relative_error,
            gates.attenuation_relative_error <= 0.04,
            "(limit 0.04)",
        ),
        ("K diagonal error", gates.k_diagonal_error, gates.k_diagonal_error <= 0.1, "(limit 0.1 nm/mW)"),
        ("K off-diagonal error", gates.k_offdiagonal_error, gates.k_offdiagonal_error <= 1.2, "(limit 1.2 nm/mW)"),
    ];
    for (name, v, ok, limit) in rows {
        let _ = writeln!(t, "  {name:<24}{v:<12.6} {} {limit}", yes(ok));
    }
    let _ = writeln!(t, "spectrum measurements: {}", run.measurements);
    telemetry_summary(&run.model, &mut t);
    let outcome = if !passed {
        Outcome::gate("validation gate failed")
    } else if run.merged_after.is_none() {
        Outcome::not_converged("trough merge did not converge")
    } else {
        Outcome::ok("all validation gates passed")
    };
    let _ = writeln!(t, "result: {}", outcome.message);
    set.write("report.txt", t.as_bytes(), "human-readable report")?;
    Ok(outcome)
}

/// Report for a run the pipeline aborted.
fn failed_run(set: &mut ArtifactSet, command: &str, seed: u64, e: &Error) -> Result<Outcome> {
    let text = format!("{command}, seed {seed}\nresult: aborted: {e}\n");
    set.write("report.txt", text.as_bytes(), "human-readable report")?;
    Ok(Outcome::from_error(e))
}

pub fn train_xor_cmd(ctx: &Ctx, set: &mut ArtifactSet) -> Result<Outcome> {
    let t = &ctx.cfg.training;
    let data = generate_xor(ctx.seed);
    set.write_with("xor_data.csv", "training set", |w| {
        use std::io::Write;
        writeln!(w, "x0,x1,label")?;
        for (x, d) in data.inputs.iter().zip(&data.labels) {
            writeln!(w, "{},{},{}", x[0], x[1], d)?;
        }
        Ok(())
    })?;
    let outcome = match train(&data, &ctx.cfg.training_config(ctx.seed), &t.activation) {
        Ok(o) => o,
        Err(e) => return failed_run(set, "train-xor", ctx.seed, &e),
    };
    let mut curve = Vec::new();
    write_curve_csv(&outcome.curve, &mut curve)?;
    set.write("learning_curve.csv", &curve, "per-epoch mean cost and class error")?;
    set.write_json("params.json", &outcome.params, "trained virtual parameters")?;
    let surface = virtual_surface(&outcome.params, &t.activation, t.surface_points);
    let surf_csv = surface_csv(&surface)?;
    set.write("surface.csv", &surf_csv, "network output over the input square")?;
    if ctx.format == Format::Svg {
        let c = plot::render(ArtifactKind::LearningCurve, &String::from_utf8_lossy(&curve), "learning curve")
            .map_err(anyhow::Error::msg)?;
        set.write("learning_curve.svg", c.as_bytes(), "learning curve chart")?;
        let s = plot::render(ArtifactKind::Surface, &String::from_utf8_lossy(&surf_csv), "classification surface")
            .map_err(anyhow::Error::msg)?;
        set.write("surface.svg", s.as_bytes(), "surface heatmap")?;
    }

    let acc = outcome.final_accuracy();
    let last = outcome.curve.last().expect("curve has the initial entry");
    let mut r = String::new();
    let _ = writeln!(r, "train-xor, seed {}", ctx.seed);
    let _ = writeln!(r, "samples: {}", data.len());
    let _ = writeln!(r, "epochs run: {}", last.epoch);
    let _ = writeln!(r, "final mean cost: {:.6}", last.mean_cost);
    let _ = writeln!(r, "final accuracy: {acc:.4}");
    let _ = writeln!(r, "quadrant pattern: {}", yes(surface.xor_pattern()));
    let ok = acc >= t.min_accuracy;
    let _ = writeln!(r, "result: {} (required {:.4})", if ok { "accuracy met" } else { "accuracy below requirement" }, t.min_accuracy);
    set.write("report.txt", r.as_bytes(), "human-readable report")?;
    Ok(if ok {
        Outcome::ok(format!("final accuracy {acc:.4}"))
    } else {
        Outcome::gate(format!("final accuracy {acc:.4} below {:.4}", t.min_accuracy))
    })
}

fn surface_csv(s: &Surface) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    s.write_csv(&mut buf)?;
    Ok(buf)
}

#[derive(Serialize)]
struct CurrentCheck {
    drive: [f64; 2],
    x0: [f64; 2],
    currents: [f64; 3],
    targets: [f64; 3],
    max_error: f64,
}

#[derive(Serialize)]
struct PhysicalReport {
    output_scale: f64,
    virtual_params: VirtualParams,
    physical: ringsim_core::training::PhysicalParams,
    check: CurrentCheck,
    input_axes: [Vec<f64>; 2],
}

pub fn sweep_231_cmd(ctx: &Ctx, inputs: &NetworkInputs, set: &mut ArtifactSet) -> Result<Outcome> {
    let n = &ctx.cfg.network;
    let device = n.device.build()?;
    let model = match &inputs.calibration {
        Some(m) => m.clone(),
        None => truth_model(&device),
    };
    let g2 = n.circuit.output_gain();
    let scale = n.output_scale.unwrap_or_else(|| {
        let strongest = inputs.params.w1.iter().fold(0.0f64, |m, w| m.max(w.abs())) / g2;
        if strongest > n.max_output_weight {
            n.max_output_weight / strongest
        } else {
            1.0
        }
    });
    let vp = inputs.params.scale_output(scale);
    let pp = match virtual_to_physical(&vp, &n.circuit) {
        Ok(p) => p,
        Err(e) => return failed_run(set, "sweep-231", ctx.seed, &e),
    };
    let sim = NetworkSim::new(&device, &model, n.circuit, pp)?;
    let state = match sim.run(n.check_drive) {
        Ok(s) => s,
        Err(e) => return failed_run(set, "sweep-231", ctx.seed, &e),
    };
    let targets = vp.hidden_drive(state.x0);
    let max_error = state
        .hidden_currents
        .iter()
        .zip(&targets)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let sweep = match sweep_network(&sim, n.grid_points, n.surface_points) {
        Ok(s) => s,
        Err(e) => return failed_run(set, "sweep-231", ctx.seed, &e),
    };

    set.write_json(
        "physical.json",
        &PhysicalReport {
            output_scale: scale,
            virtual_params: vp,
            physical: pp,
            check: CurrentCheck {
                drive: n.check_drive,
                x0: state.x0,
                currents: state.hidden_currents,
                targets,
                max_error,
            },
            input_axes: sweep.input_axes.clone(),
        },
        "programmed weights and hidden-current check",
    )?;
    let surf_csv = surface_csv(&sweep.surface)?;
    set.write("surface.csv", &surf_csv, "output over normalised inputs")?;
    let cs = linspace(0.0, SWEEP_MAX_DRIVE, n.grid_points);
    let raw = Surface {
        xs: cs.clone(),
        ys: cs,
        values: (0..n.grid_points)
            .map(|j| (0..n.grid_points).map(|i| sweep.raw[i][j]).collect())
            .collect(),
    };
    set.write("raw.csv", &surface_csv(&raw)?, "output over input drive currents, mA")?;
    if ctx.format == Format::Svg {
        let s = plot::render(ArtifactKind::Surface, &String::from_utf8_lossy(&surf_csv), "2-3-1 network output")
            .map_err(anyhow::Error::msg)?;
        set.write("surface.svg", s.as_bytes(), "surface heatmap")?;
    }

    let ok = max_error <= n.max_current_error;
    let mut r = String::new();
    let _ = writeln!(r, "sweep-231, seed {}", ctx.seed);
    let _ = writeln!(
        r,
        "calibration: {}",
        if inputs.calibration.is_some() { "loaded model" } else { "device truth" }
    );
    let _ = writeln!(r, "output scale: {scale:.6}");
    let _ = writeln!(r, "w23: {:?}", pp.w23);
    let _ = writeln!(r, "w31: {:?}", pp.w31);
    let _ = writeln!(r, "axon bias (mA): {:?}", pp.axon_bias);
    let _ = writeln!(r, "output bias (V): {}", pp.out_bias);
    let _ = writeln!(r, "hidden currents at drive {:?}: {:?}", n.check_drive, state.hidden_currents);
    let _ = writeln!(r, "virtual targets: {targets:?}");
    let _ = writeln!(
        r,
        "max current error: {max_error:.5} mA {} (limit {})",
        yes(ok),
        n.max_current_error
    );
    let _ = writeln!(r, "quadrant pattern: {}", yes(sweep.surface.xor_pattern()));
    let _ = writeln!(r, "result: {}", if ok { "current check passed" } else { "current check failed" });
    set.write("report.txt", r.as_bytes(), "human-readable report")?;
    Ok(if ok {
        Outcome::ok(format!("max hidden current error {max_error:.5} mA"))
    } else {
        Outcome::gate(format!("hidden current error {max_error:.5} mA above {}", n.max_current_error))
    })
}

/// Spectra of an interferometer sweep, keyed by geometry.
pub struct MdmSweep {
    pub spectra: Vec<(f64, f64, Spectrum)>,
    /// Files in the sweep directory whose name is not `width_length.csv`.
    pub skipped: Vec<String>,
    /// True coupling per geometry, for generated sweeps.
    pub truth: Vec<Option<f64>>,
    pub from_dir: Option<PathBuf>,
}

/// Reads every `width_length.csv` in `dir`, sorted by file name.
pub fn read_sweep_dir(dir: &Path) -> Result<MdmSweep, String> {
    let entries = std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let (mut spectra, mut skipped) = (Vec::new(), Vec::new());
    for p in paths {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        let Some((w, l)) = parse_geometry(stem) else {
            skipped.push(p.display().to_string());
            continue;
        };
        let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
        let s = Spectrum::read_csv(&text).map_err(|e| format!("{}: {e}", p.display()))?;
        spectra.push((w, l, s));
    }
    if spectra.is_empty() {
        return Err(format!("{}: no width_length.csv spectra", dir.display()));
    }
    let truth = vec![None; spectra.len()];
    Ok(MdmSweep {
        spectra,
        skipped,
        truth,
        from_dir: Some(dir.to_path_buf()),
    })
}

fn synthetic_sweep(ctx: &Ctx, set: &mut ArtifactSet) -> Result<MdmSweep> {
    let m = &ctx.cfg.mdm.synthetic;
    let noise = seeds::substream_seed(ctx.seed, seeds::NOISE);
    let mut spectra = Vec::new();
    for (i, g) in m.geometries.iter().enumerate() {
        let s = InterferometerModel::new(g.alpha, m.dl)?.spectrum(
            m.window,
            m.spacing,
            m.pump_power,
            m.noise_db,
            seeds::indexed_seed(noise, i as u64),
        )?;
        let mut csv = Vec::new();
        s.write_csv(&mut csv)?;
        set.write(&format!("sweep/{}_{}.csv", g.width, g.length), &csv, "generated interferometer spectrum")?;
        spectra.push((g.width, g.length, s));
    }
    Ok(MdmSweep {
        spectra,
        skipped: vec![],
        truth: m.geometries.iter().map(|g| Some(g.alpha)).collect(),
        from_dir: None,
    })
}

pub fn mdm_report_cmd(ctx: &Ctx, loaded: Option<MdmSweep>, set: &mut ArtifactSet) -> Result<Outcome> {
    let sweep = match loaded {
        Some(s) => s,
        None => synthetic_sweep(ctx, set)?,
    };
    let rows = coupling_report(&sweep.spectra);
    let mut csv = Vec::new();
    write_report_csv(&rows, &mut csv)?;
    set.write("coupling_report.csv", &csv, "extinction ratio and coupling per geometry, strongest first")?;

    let mut r = String::new();
    let _ = writeln!(r, "mdm-report, seed {}", ctx.seed);
    match &sweep.from_dir {
        Some(d) => {
            let _ = writeln!(r, "sweep directory: {}", d.display());
        }
        None => {
            let _ = writeln!(r, "sweep: generated ({} geometries)", sweep.spectra.len());
        }
    }
    for s in &sweep.skipped {
        let _ = writeln!(r, "skipped (name is not width_length): {s}");
    }
    let _ = writeln!(r, "{:>8} {:>8} {:>9} {:>9} {:>9}  note", "width", "length", "ER dB", "alpha", "true");
    for row in &rows {
        let truth = sweep
            .spectra
            .iter()
            .position(|(w, l, _)| *w == row.width && *l == row.length)
            .and_then(|i| sweep.truth[i]);
        // the interferometer cannot tell α from 1 − α
        let t = truth.map_or("-".to_string(), |a| format!("{:.4}", a.min(1.0 - a)));
        match (row.er_db, row.alpha) {
            (Some(er), Some((a, _))) => {
                let _ = writeln!(r, "{:>8} {:>8} {er:>9.3} {a:>9.4} {t:>9}", row.width, row.length);
            }
            _ => {
                let _ = writeln!(
                    r,
                    "{:>8} {:>8} {:>9} {:>9} {t:>9}  {}",
                    row.width,
                    row.length,
                    "-",
                    "-",
                    row.error.as_deref().unwrap_or("")
                );
            }
        }
    }
    let fitted = rows.iter().filter(|r| r.er_db.is_some()).count();
    let _ = writeln!(r, "fitted: {fitted} of {}", rows.len());
    set.write("report.txt", r.as_bytes(), "human-readable report")?;

    if ctx.format == Format::Svg {
        if let Some(best) = rows.first().filter(|r| r.er_db.is_some()) {
            if let Some((_, _, s)) = sweep
                .spectra
                .iter()
                .find(|(w, l, _)| *w == best.width && *l == best.length)
            {
                let mut c = Vec::new();
                s.write_csv(&mut c)?;
                let title = format!("strongest coupling: {} x {}", best.width, best.length);
                let svg = plot::render(ArtifactKind::Spectrum, &String::from_utf8_lossy(&c), &title)
                    .map_err(anyhow::Error::msg)?;
                set.write("strongest.svg", svg.as_bytes(), "spectrum of the strongest coupler")?;
            }
        }
    }
    Ok(if fitted == 0 {
        Outcome::not_converged("no spectrum could be fitted")
    } else {
        Outcome::ok(format!("{fitted} of {} geometries fitted", rows.len()))
    })
}

/// A CSV artifact checked and ready for export.
pub struct ExportInput {
    pub kind: ArtifactKind,
    pub stem: String,
    pub text: String,
}

pub fn read_export_input(path: &Path) -> Result<ExportInput, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let kind = ArtifactKind::detect(&text).ok_or_else(|| format!("{}: unknown artifact", path.display()))?;
    match kind {
        ArtifactKind::Spectrum => Spectrum::read_csv(&text).map(|_| ()).map_err(|e| e.to_string()),
        ArtifactKind::LearningCurve => plot::columns(&text).map(|_| ()),
        ArtifactKind::Surface => plot::parse_surface(&text).map(|_| ()),
    }
    .map_err(|e| format!("{}: {e}", path.display()))?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("artifact")
        .to_string();
    Ok(ExportInput { kind, stem, text })
}

pub fn export_cmd(ctx: &Ctx, input: &ExportInput, set: &mut ArtifactSet) -> Result<Outcome> {
    match ctx.format {
        Format::Csv => {
            let bytes = match input.kind {
                ArtifactKind::Spectrum => {
                    let mut b = Vec::new();
                    Spectrum::read_csv(&input.text)?.write_csv(&mut b)?;
                    b
                }
                _ => input.text.as_bytes().to_vec(),
            };
            set.write(&format!("{}.csv", input.stem), &bytes, input.kind.name())?;
        }
        Format::Svg => {
            let svg = plot::render(input.kind, &input.text, &input.stem).map_err(anyhow::Error::msg)?;
            set.write(&format!("{}.svg", input.stem), svg.as_bytes(), input.kind.name())?;
        }
    }
    Ok(Outcome::ok(format!("exported {}", input.kind.name())))
}
