//! Closed-form microring and coupler physics.
//!
//! Wavelengths are in nm, powers are linear fractions. The exact
//! transmission is kept for validation only; devices use the Lorentzian.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lossless 2x2 directional coupler `[[r, it], [it, r]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplerMatrix {
    pub r: f64,
    pub t: f64,
}

impl CouplerMatrix {
    pub fn new(r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidParameter(format!("coupler r = {r}")));
        }
        Ok(Self {
            r,
            t: (1.0 - r * r).sqrt(),
        })
    }

    pub fn apply(&self, a: Complex64, b: Complex64) -> (Complex64, Complex64) {
        let it = Complex64::new(0.0, self.t);
        (a * self.r + b * it, a * it + b * self.r)
    }
}

/// Physical ring: self-coupling `r`, index `n`, perimeter `l` (nm), order `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingPhysical {
    pub r: f64,
    pub n: f64,
    pub l: f64,
    pub m: u32,
}

impl RingPhysical {
    pub fn new(r: f64, n: f64, l: f64, m: u32) -> Result<Self> {
        if !(r > 0.0 && r < 1.0) || n <= 0.0 || l <= 0.0 || m < 1 {
            return Err(Error::InvalidParameter(format!(
                "ring r={r} n={n} L={l} m={m}"
            )));
        }
        Ok(Self { r, n, l, m })
    }

    /// Resonance wavelength of the design order `m`.
    pub fn lam0(&self) -> f64 {
        self.n * self.l / self.m as f64
    }

    pub fn phase(&self, lam: f64) -> f64 {
        2.0 * PI * self.n * self.l / lam
    }
}

/// Lorentzian ring model used by every simulated device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingModel {
    pub lam0: f64,
    pub gamma: f64,
    pub atten: f64,
}

impl RingModel {
    pub fn new(lam0: f64, gamma: f64, atten: f64) -> Result<Self> {
        if !(gamma > 0.0) || !(atten > 0.0 && atten <= 1.0) || !lam0.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "ring model lam0={lam0} gamma={gamma} atten={atten}"
            )));
        }
        Ok(Self { lam0, gamma, atten })
    }

    pub fn from_fwhm(lam0: f64, fwhm: f64, atten: f64) -> Result<Self> {
        Self::new(lam0, fwhm / 2.0, atten)
    }

    pub fn fwhm(&self) -> f64 {
        2.0 * self.gamma
    }

    /// Same ring with its resonance moved by `shift` nm.
    pub fn shifted(&self, shift: f64) -> Self {
        Self {
            lam0: self.lam0 + shift,
            ..*self
        }
    }

    pub fn drop(&self, lam: f64) -> f64 {
        lorentz_drop(self, lam)
    }

    pub fn thru(&self, lam: f64) -> f64 {
        lorentz_thru(self, lam)
    }
}

pub fn exact_thru_transmission(ring: &RingPhysical, lam: f64) -> Result<f64> {
    if !(lam > 0.0) {
        return Err(Error::Domain(format!("wavelength {lam} nm")));
    }
    let r2 = ring.r * ring.r;
    let c = ring.phase(lam).cos();
    Ok(2.0 * r2 * (1.0 - c) / (1.0 + r2 * r2 - 2.0 * r2 * c))
}

pub fn exact_drop_transmission(ring: &RingPhysical, lam: f64) -> Result<f64> {
    exact_thru_transmission(ring, lam).map(|t| 1.0 - t)
}

/// Peak-normalised Lorentzian drop `a γ² / (γ² + δ²)`.
pub fn lorentz_drop(ring: &RingModel, lam: f64) -> f64 {
    let g2 = ring.gamma * ring.gamma;
    let d = lam - ring.lam0;
    ring.atten * g2 / (g2 + d * d)
}

pub fn lorentz_thru(ring: &RingModel, lam: f64) -> f64 {
    1.0 - lorentz_drop(ring, lam)
}

/// Half-width of the Lorentzian approximating the exact response near `m`.
pub fn gamma_from_physical(ring: &RingPhysical) -> f64 {
    let m = ring.m as f64;
    (1.0 - ring.r * ring.r) * ring.n * ring.l / (2.0 * PI * ring.r * m * m)
}

/// All resonances `nL/m'` inside `[lo, hi]`, ascending.
pub fn resonant_wavelengths(ring: &RingPhysical, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if !(lo < hi) || lo <= 0.0 {
        return Err(Error::Domain(format!("window [{lo}, {hi}]")));
    }
    let nl = ring.n * ring.l;
    let m_hi = (nl / lo).floor() as u64;
    let m_lo = (nl / hi).ceil().max(1.0) as u64;
    let mut out: Vec<f64> = (m_lo..=m_hi)
        .rev()
        .map(|m| nl / m as f64)
        .filter(|l| *l >= lo && *l <= hi)
        .collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}
