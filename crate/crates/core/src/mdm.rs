//! Mode-division multiplexing helpers: the asymmetric interferometer used
//! to measure coupler strength, and unitary mixing compensation.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::device::pink_noise;
use crate::error::{Error, Result};
use crate::spectrum::Spectrum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferometerModel {
    /// Cross-coupling power fraction of each coupler.
    pub alpha: f64,
    /// Path-length difference, nm.
    pub dl: f64,
}

impl InterferometerModel {
    pub fn new(alpha: f64, dl: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) || !(dl > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "interferometer alpha={alpha} dl={dl}"
            )));
        }
        Ok(Self { alpha, dl })
    }

    pub fn transmission(&self, lam: f64) -> f64 {
        let a = self.alpha;
        a * a + (1.0 - a) * (1.0 - a) - 2.0 * a * (1.0 - a) * (2.0 * PI * self.dl / lam).cos()
    }

    /// Spectrum of `pump_mw` through the device, with pink noise of RMS
    /// `noise_db`.
    pub fn spectrum(
        &self,
        window: (f64, f64),
        spacing: f64,
        pump_mw: f64,
        noise_db: f64,
        seed: u64,
    ) -> Result<Spectrum> {
        let (start, n) = Spectrum::grid(window.0, window.1, spacing)?;
        let noise = pink_noise(n, noise_db, seed);
        let mw: Vec<f64> = (0..n)
            .map(|i| {
                let lam = start + i as f64 * spacing;
                pump_mw * self.transmission(lam) * 10f64.powf(noise[i] / 10.0)
            })
            .collect();
        Spectrum::from_linear(start, spacing, &mw)
    }
}

/// Extinction ratio of the transmission formula itself.
pub fn model_extinction_db(alpha: f64) -> f64 {
    let tmin = (1.0 - 2.0 * alpha).powi(2);
    10.0 * (1.0 / tmin.max(MIN_CLAMP)).log10()
}

/// Fitted minimum is held at or above this fraction of the offset.
pub const MIN_CLAMP: f64 = 1e-3;
/// Largest RMS fit residual accepted, as a fraction of the amplitude.
pub const MAX_RESIDUAL: f64 = 0.2;

/// `offset + amplitude · cos(2π · freq · ν + phase)` in wavenumber
/// `ν = 1/λ` (1/nm), where the interferometer is exactly periodic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    pub offset: f64,
    pub amplitude: f64,
    /// Cycles per unit wavenumber; equals the path difference in nm.
    pub freq: f64,
    pub phase: f64,
    pub rms_residual: f64,
}

impl SinusoidFit {
    pub fn extinction_db(&self) -> f64 {
        let max = self.offset + self.amplitude;
        let min = (self.offset - self.amplitude).max(MIN_CLAMP * self.offset);
        10.0 * (max / min).log10()
    }
}

/// Linear least squares for offset, cos and sin terms at fixed `f`.
fn fit_at(nu: &[f64], y: &[f64], f: f64) -> (f64, f64, f64, f64) {
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for (&v, &t) in nu.iter().zip(y) {
        let w = 2.0 * PI * f * v;
        let row = nalgebra::Vector3::new(1.0, w.cos(), w.sin());
        ata += row * row.transpose();
        atb += row * t;
    }
    let sol = ata.lu().solve(&atb).unwrap_or_default();
    let sse: f64 = nu
        .iter()
        .zip(y)
        .map(|(&v, &t)| {
            let w = 2.0 * PI * f * v;
            let r = t - sol[0] - sol[1] * w.cos() - sol[2] * w.sin();
            r * r
        })
        .sum();
    (sol[0], sol[1], sol[2], sse)
}

pub fn fit_sinusoid(s: &Spectrum) -> Result<SinusoidFit> {
    let y = s.power_mw();
    let n = y.len();
    if n < 8 {
        return Err(Error::FitFailed(format!("{n} samples")));
    }
    let nu: Vec<f64> = s.wavelengths().iter().map(|l| 1.0 / l).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<num_complex::Complex<f64>> = y
        .iter()
        .map(|v| num_complex::Complex::new(v - mean, 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mag: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm()).collect();
    let k = (1..mag.len())
        .max_by(|&a, &b| mag[a].total_cmp(&mag[b]))
        .unwrap_or(1);
    if k < 3 {
        return Err(Error::FitFailed(format!(
            "spectrum spans about {k} oscillation periods, need at least 3"
        )));
    }
    let span = (nu[0] - nu[n - 1]).abs();
    let sse = |f: f64| fit_at(&nu, &y, f).3;
    // golden-section search for the frequency within ±1.5 bins
    let (mut a, mut b) = ((k as f64 - 1.5) / span, (k as f64 + 1.5) / span);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (sse(c), sse(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = sse(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = sse(d);
        }
    }
    let f = 0.5 * (a + b);
    let (offset, p, q, err) = fit_at(&nu, &y, f);
    let fit = SinusoidFit {
        offset,
        amplitude: p.hypot(q),
        freq: f,
        phase: (-q).atan2(p),
        rms_residual: (err / n as f64).sqrt(),
    };
    if fit.rms_residual > MAX_RESIDUAL * fit.amplitude {
        return Err(Error::FitFailed(format!(
            "residual {:.3e} exceeds {MAX_RESIDUAL} of amplitude {:.3e}",
            fit.rms_residual, fit.amplitude
        )));
    }
    Ok(fit)
}

/// ER in dB from a sinusoid fit of the linear spectrum. A spectrum without
/// any variation reports 0 dB.
pub fn extinction_ratio(s: &Spectrum) -> Result<f64> {
    let y = s.power_mw();
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if hi - lo <= 1e-12 * hi.abs() {
        return Ok(0.0);
    }
    Ok(fit_sinusoid(s)?.extinction_db())
}

/// Coupling branch pair `(α, 1 − α)` with `α ≤ 0.5` producing `er_db`.
pub fn alpha_from_er(er_db: f64) -> (f64, f64) {
    let a = 0.5 * (1.0 - 10f64.powf(-er_db.max(0.0) / 20.0));
    (a, 1.0 - a)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub width: f64,
    pub length: f64,
    pub er_db: Option<f64>,
    pub alpha: Option<(f64, f64)>,
    pub error: Option<String>,
}

/// ER and coupling per geometry, strongest coupling (α nearest 0.5)
/// first; rows whose fit failed follow in input order.
pub fn coupling_report(sweep: &[(f64, f64, Spectrum)]) -> Vec<CouplingRow> {
    let mut rows: Vec<CouplingRow> = sweep
        .iter()
        .map(|(width, length, s)| match extinction_ratio(s) {
            Ok(er) => CouplingRow {
                width: *width,
                length: *length,
                er_db: Some(er),
                alpha: Some(alpha_from_er(er)),
                error: None,
            },
            Err(e) => CouplingRow {
                width: *width,
                length: *length,
                er_db: None,
                alpha: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    rows.sort_by(|a, b| match (a.er_db, b.er_db) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    rows
}

pub fn write_report_csv<W: Write>(rows: &[CouplingRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "width,length,alpha_low,alpha_high,er_db,status")?;
    for r in rows {
        match (r.alpha, r.er_db) {
            (Some((lo, hi)), Some(er)) => {
                writeln!(w, "{},{},{lo},{hi},{er},ok", r.width, r.length)?
            }
            _ => writeln!(
                w,
                "{},{},,,,\"{}\"",
                r.width,
                r.length,
                r.error.as_deref().unwrap_or("").replace('"', "'")
            )?,
        }
    }
    Ok(())
}

/// Parses `width_length` (file stem of a sweep spectrum).
pub fn parse_geometry(stem: &str) -> Option<(f64, f64)> {
    let (w, l) = stem.split_once('_')?;
    Some((w.parse().ok()?, l.parse().ok()?))
}

pub const UNITARY_TOLERANCE: f64 = 1e-9;

/// Intermodal mixing; kept unitary.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMixing {
    m: DMatrix<Complex64>,
}

fn unitarity_error(m: &DMatrix<Complex64>) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let p = m * m.adjoint() - DMatrix::<Complex64>::identity(n, n);
    p.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

impl ModeMixing {
    pub fn new(m: DMatrix<Complex64>) -> Result<Self> {
        let e = unitarity_error(&m);
        if !(e <= UNITARY_TOLERANCE) {
            return Err(Error::NonUnitary(e));
        }
        Ok(Self { m })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: DMatrix::identity(n, n),
        }
    }

    /// Real 2×2 rotation by `theta`.
    pub fn rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let r = |v: f64| Complex64::new(v, 0.0);
        Self {
            m: DMatrix::from_row_slice(2, 2, &[r(c), r(-s), r(s), r(c)]),
        }
    }

    /// Haar-random unitary from the QR decomposition of a complex Gaussian
    /// matrix, with R's diagonal phases divided out.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut draw = || {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            Complex64::new(re, im)
        };
        let z = DMatrix::from_fn(n, n, |_, _| draw());
        let qr = z.qr();
        let (mut q, r) = (qr.q(), qr.r());
        for j in 0..n {
            let d = r[(j, j)];
            let ph = if d.norm() > 0.0 { d / d.norm() } else { Complex64::new(1.0, 0.0) };
            for i in 0..n {
                q[(i, j)] *= ph;
            }
        }
        Self { m: q }
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.m
    }

    pub fn apply(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.m.ncols() {
            return Err(Error::InvalidParameter(format!(
                "{} weights for {} modes",
                v.len(),
                self.m.ncols()
            )));
        }
        Ok((&self.m * nalgebra::DVector::from_column_slice(v))
            .iter()
            .copied()
            .collect())
    }
}

/// Pre-weights `M† w`, so that mixing by `M` delivers `w`.
pub fn compensate_mixing(m: &ModeMixing, desired: &[Complex64]) -> Result<Vec<Complex64>> {
    let e = unitarity_error(&m.m);
    if !(e <= UNITARY_TOLERANCE) {
        return Err(Error::NonUnitary(e));
    }
    let inv = ModeMixing {
        m: m.m.adjoint(),
    };
    inv.apply(desired)
}
