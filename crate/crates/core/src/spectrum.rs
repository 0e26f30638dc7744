//! Uniform-grid optical spectra in dBm.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied before converting linear power to dBm, in mW.
pub const POWER_FLOOR_MW: f64 = 1e-15;

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.max(POWER_FLOOR_MW).log10()
}

/// A measurement on the grid `start + i * spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    start: f64,
    spacing: f64,
    power_dbm: Vec<f64>,
}

impl Spectrum {
    pub fn new(start: f64, spacing: f64, power_dbm: Vec<f64>) -> Result<Self> {
        if !(spacing > 0.0) || !start.is_finite() || power_dbm.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "spectrum start={start} spacing={spacing} n={}",
                power_dbm.len()
            )));
        }
        if let Some(p) = power_dbm.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite sample {p}")));
        }
        Ok(Self {
            start,
            spacing,
            power_dbm,
        })
    }

    pub fn from_linear(start: f64, spacing: f64, mw: &[f64]) -> Result<Self> {
        Self::new(start, spacing, mw.iter().map(|&p| mw_to_dbm(p)).collect())
    }

    /// Grid aligned to integer multiples of `spacing` covering `[lo, hi]`.
    pub fn grid(lo: f64, hi: f64, spacing: f64) -> Result<(f64, usize)> {
        if !(lo < hi) || !(spacing > 0.0) || lo <= 0.0 || !hi.is_finite() {
            return Err(Error::BadWindow {
                lo,
                hi,
                why: "empty or non-positive".into(),
            });
        }
        let i0 = (lo / spacing - 1e-9).ceil();
        let i1 = (hi / spacing + 1e-9).floor();
        if i1 < i0 {
            return Err(Error::BadWindow {
                lo,
                hi,
                why: "narrower than one grid step".into(),
            });
        }
        Ok((i0 * spacing, (i1 - i0) as usize + 1))
    }

    pub fn len(&self) -> usize {
        self.power_dbm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power_dbm.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.wavelength(self.len() - 1)
    }

    pub fn wavelength(&self, i: usize) -> f64 {
        self.start + i as f64 * self.spacing
    }

    pub fn wavelengths(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.wavelength(i)).collect()
    }

    pub fn power_dbm(&self) -> &[f64] {
        &self.power_dbm
    }

    pub fn power_mw(&self) -> Vec<f64> {
        self.power_dbm.iter().map(|&p| dbm_to_mw(p)).collect()
    }

    pub fn same_grid(&self, other: &Spectrum) -> bool {
        self.len() == other.len()
            && (self.start - other.start).abs() < 1e-9
            && (self.spacing - other.spacing).abs() < 1e-12
    }

    /// Linear interpolation in dB, clamped to the end samples.
    pub fn interp_dbm(&self, lam: f64) -> f64 {
        let x = (lam - self.start) / self.spacing;
        if x <= 0.0 {
            return self.power_dbm[0];
        }
        let i = x.floor() as usize;
        if i + 1 >= self.len() {
            return self.power_dbm[self.len() - 1];
        }
        let f = x - i as f64;
        self.power_dbm[i] * (1.0 - f) + self.power_dbm[i + 1] * f
    }

    /// Sample-wise difference in dB; `self - other`.
    pub fn subtract(&self, other: &Spectrum) -> Result<Spectrum> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        let p = self
            .power_dbm
            .iter()
            .zip(&other.power_dbm)
            .map(|(a, b)| a - b)
            .collect();
        Spectrum::new(self.start, self.spacing, p)
    }

    /// Sub-spectrum of the samples inside `[lo, hi]`.
    pub fn crop(&self, lo: f64, hi: f64) -> Result<Spectrum> {
        let i0 = ((lo - self.start) / self.spacing - 1e-9).ceil().max(0.0) as usize;
        let i1 = ((hi - self.start) / self.spacing + 1e-9).floor();
        if i1 < 0.0 || i0 >= self.len() || (i1 as usize) < i0 {
            return Err(Error::BadWindow {
                lo,
                hi,
                why: "outside spectrum".into(),
            });
        }
        let i1 = (i1 as usize).min(self.len() - 1);
        Spectrum::new(
            self.wavelength(i0),
            self.spacing,
            self.power_dbm[i0..=i1].to_vec(),
        )
    }

    /// Two-column CSV: `nm,dBm`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "nm,dBm")?;
        for (i, p) in self.power_dbm.iter().enumerate() {
            writeln!(w, "{:.4},{:.6}", self.wavelength(i), p)?;
        }
        Ok(())
    }

    /// Parses the CSV written by [`Spectrum::write_csv`]; a header line is optional.
    pub fn read_csv(text: &str) -> Result<Spectrum> {
        let mut lam = Vec::new();
        let mut p = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let (a, b) = match (cols.next(), cols.next()) {
                (Some(a), Some(b)) => (a.trim(), b.trim()),
                _ => return Err(Error::InvalidParameter(format!("csv line {}", n + 1))),
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => {
                    lam.push(x);
                    p.push(y);
                }
                _ if n == 0 => continue,
                _ => return Err(Error::InvalidParameter(format!("csv line {}", n + 1))),
            }
        }
        if lam.len() < 2 {
            return Err(Error::InvalidParameter("spectrum csv needs two samples".into()));
        }
        let spacing = (lam[lam.len() - 1] - lam[0]) / (lam.len() - 1) as f64;
        for w in lam.windows(2) {
            if ((w[1] - w[0]) - spacing).abs() > 1e-3 * spacing.abs().max(1e-12) {
                return Err(Error::InvalidParameter("spectrum csv grid not uniform".into()));
            }
        }
        Spectrum::new(lam[0], spacing, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_aligned() {
        let (s, n) = Spectrum::grid(1549.995, 1550.031, 0.01).unwrap();
        assert!((s - 1550.0).abs() < 1e-9);
        assert_eq!(n, 4);
    }

    #[test]
    fn csv_round_trip() {
        let s = Spectrum::new(1550.0, 0.01, vec![-40.0, -41.5, -57.0]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let back = Spectrum::read_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert!(back.same_grid(&s));
        assert_eq!(back.power_dbm(), s.power_dbm());
    }

    #[test]
    fn rejects_nonfinite() {
        assert!(Spectrum::new(1.0, 0.1, vec![f64::NAN]).is_err());
        assert!(mw_to_dbm(0.0).is_finite());
    }

    #[test]
    fn crop_keeps_alignment() {
        let s = Spectrum::new(1550.0, 0.01, (0..100).map(|i| i as f64).collect()).unwrap();
        let c = s.crop(1550.105, 1550.2).unwrap();
        assert!((c.start() - 1550.11).abs() < 1e-9);
        assert_eq!(c.power_dbm()[0], 11.0);
        assert_eq!(c.len(), 10);
    }
}
