//! Resonance features from measured spectra: background models, trough
//! detection with sub-grid centres, and filter-shape extraction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{dbm_to_mw, Spectrum};

/// Minimum depth (dB below baseline) for a dip to count as a trough.
pub const MIN_DEPTH_DB: f64 = 3.0;
/// Two neighbouring dips must be separated by a saddle at least this high.
pub const MIN_SADDLE_DB: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceFeature {
    /// Trough centre, nm.
    pub lam: f64,
    /// Full width at half depth in linear power, nm.
    pub fwhm: f64,
    /// dB below the local background.
    pub depth: f64,
}

fn moving_average(x: &[f64], width: usize) -> Vec<f64> {
    let h = width / 2;
    let n = x.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(h);
            let b = (i + h + 1).min(n);
            (prefix[b] - prefix[a]) / (b - a) as f64
        })
        .collect()
}

fn moving_max(x: &[f64], width: usize) -> Vec<f64> {
    let h = width / 2;
    let n = x.len();
    (0..n)
        .map(|i| {
            x[i.saturating_sub(h)..(i + h + 1).min(n)]
                .iter()
                .copied()
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

fn samples(nm: f64, spacing: f64) -> usize {
    let w = (nm / spacing).round().max(1.0) as usize;
    w | 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackgroundMode {
    Smoothed,
    Tuned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundModel {
    pub mode: BackgroundMode,
    pub background: Spectrum,
}

impl BackgroundModel {
    /// Upper envelope of `s` (running maximum then running mean over
    /// `width_nm`); only valid when troughs are narrower than the width.
    pub fn smoothed(s: &Spectrum, width_nm: f64) -> Result<Self> {
        let w = samples(width_nm, s.spacing());
        let env = moving_average(&moving_max(s.power_dbm(), w), w);
        Ok(Self {
            mode: BackgroundMode::Smoothed,
            background: Spectrum::new(s.start(), s.spacing(), env)?,
        })
    }

    /// Background level at `lam`, dBm; flat extension outside the stored grid.
    pub fn at(&self, lam: f64) -> f64 {
        self.background.interp_dbm(lam)
    }

    /// Spectrum relative to the background, dB.
    pub fn remove(&self, s: &Spectrum) -> Result<Spectrum> {
        let rel = (0..s.len())
            .map(|i| s.power_dbm()[i] - self.at(s.wavelength(i)))
            .collect();
        Spectrum::new(s.start(), s.spacing(), rel)
    }

    /// Median background power, mW.
    pub fn median_mw(&self) -> f64 {
        let mut v = self.background.power_mw();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }
}

/// Default low-pass width of the tuned background, nm.
pub const TUNED_SMOOTHING_NM: f64 = 0.1;

/// Background from a base spectrum and one with every resonance displaced:
/// the less attenuated of the two at each wavelength, then low-passed.
pub fn build_tuned_background(base: &Spectrum, displaced: &Spectrum) -> Result<BackgroundModel> {
    if !base.same_grid(displaced) {
        return Err(Error::GridMismatch);
    }
    let env: Vec<f64> = base
        .power_dbm()
        .iter()
        .zip(displaced.power_dbm())
        .map(|(a, b)| a.max(*b))
        .collect();
    let smooth = moving_average(&env, samples(TUNED_SMOOTHING_NM, base.spacing()));
    Ok(BackgroundModel {
        mode: BackgroundMode::Tuned,
        background: Spectrum::new(base.start(), base.spacing(), smooth)?,
    })
}

/// Locates `expected` troughs in a background-removed spectrum (0 dB
/// baseline), sorted by wavelength.
///
/// Minima of a moving average (width `min_separation / 4`, at least three
/// samples) are candidates;
/// a candidate needs [`MIN_DEPTH_DB`] of depth, `min_separation` from any
/// deeper trough and a [`MIN_SADDLE_DB`] saddle towards it. Centres come
/// from a least-squares parabola through `1 / (1 - T)` over the half-depth
/// core, which is exact for a Lorentzian.
pub fn find_resonances(
    s: &Spectrum,
    expected: usize,
    min_separation: f64,
) -> Result<Vec<ResonanceFeature>> {
    if expected == 0 {
        return Err(Error::InvalidParameter("expected_count must be ≥ 1".into()));
    }
    let n = s.len();
    let dx = s.spacing();
    let sm = moving_average(s.power_dbm(), samples(min_separation / 4.0, dx).max(3));
    let mut cand: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&i| sm[i] < sm[i - 1] && sm[i] <= sm[i + 1] && -sm[i] >= MIN_DEPTH_DB)
        .collect();
    cand.sort_by(|&a, &b| sm[a].total_cmp(&sm[b]));

    let mut kept: Vec<usize> = Vec::new();
    for i in cand {
        let separated = kept.iter().all(|&k| {
            let far = (k as f64 - i as f64).abs() * dx >= min_separation - 1e-9;
            let (a, b) = (k.min(i), k.max(i));
            let saddle = sm[a..=b].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            far && saddle - sm[i] >= MIN_SADDLE_DB
        });
        if separated {
            kept.push(i);
        }
        if kept.len() == expected {
            break;
        }
    }
    if kept.len() < expected {
        return Err(Error::NotEnoughTroughs {
            found: kept.len(),
            expected,
        });
    }
    kept.sort_unstable();
    let light = moving_average(s.power_dbm(), 3);
    let feats: Vec<ResonanceFeature> = kept.iter().map(|&i| refine(s, &light, i)).collect();
    // two noise dimples of one trough refine onto the same centre
    let distinct = 1 + feats
        .windows(2)
        .filter(|w| w[1].lam - w[0].lam >= 0.5 * min_separation)
        .count();
    if distinct < expected {
        return Err(Error::NotEnoughTroughs {
            found: distinct,
            expected,
        });
    }
    Ok(feats)
}

/// Background-removes `s` with a smoothed envelope, then finds troughs.
pub fn find_resonances_raw(s: &Spectrum, expected: usize, min_separation: f64) -> Result<Vec<ResonanceFeature>> {
    let bg = BackgroundModel::smoothed(s, 2.0 * min_separation)?;
    find_resonances(&bg.remove(s)?, expected, min_separation)
}

fn half_crossings(s: &Spectrum, lin: &[f64], i: usize, half: f64) -> (f64, f64) {
    let n = s.len();
    let dx = s.spacing();
    let cross = |dir: isize| -> f64 {
        let mut j = i as isize;
        loop {
            let k = j + dir;
            if k < 0 || k >= n as isize {
                return s.wavelength(j as usize);
            }
            let (a, b) = (lin[j as usize], lin[k as usize]);
            if b >= half {
                let f = if b > a { (half - a) / (b - a) } else { 0.0 };
                return s.wavelength(j as usize) + dir as f64 * f * dx;
            }
            j = k;
        }
    };
    (cross(-1), cross(1))
}

/// Least-squares parabola of `1 / (1 - T)` over `|λ - mid| ≤ half_width`;
/// returns the vertex offset from `mid` and the vertex value.
fn inverse_parabola(s: &Spectrum, mid: f64, half_width: f64) -> Option<(f64, f64)> {
    let raw = s.power_dbm();
    let mut m = nalgebra::Matrix3::<f64>::zeros();
    let mut v = nalgebra::Vector3::<f64>::zeros();
    let mut used = 0;
    for (j, p) in raw.iter().enumerate() {
        let x = s.wavelength(j) - mid;
        if x.abs() > half_width {
            continue;
        }
        let d = 1.0 - dbm_to_mw(*p);
        if d <= 1e-6 {
            continue;
        }
        let b = nalgebra::Vector3::new(1.0, x, x * x);
        m += b * b.transpose();
        v += b / d;
        used += 1;
    }
    if used < 3 {
        return None;
    }
    let c = m.lu().solve(&v)?;
    if !(c[2] > 0.0) {
        return None;
    }
    let x = -c[1] / (2.0 * c[2]);
    (x.abs() < half_width).then_some((x, c[0] - c[1] * c[1] / (4.0 * c[2])))
}

fn refine(s: &Spectrum, light_db: &[f64], i0: usize) -> ResonanceFeature {
    let n = s.len();
    let r = 3.min(i0).min(n - 1 - i0);
    let i = (i0 - r..=i0 + r)
        .min_by(|&a, &b| light_db[a].total_cmp(&light_db[b]))
        .unwrap_or(i0);
    let lin: Vec<f64> = light_db.iter().map(|v| dbm_to_mw(*v)).collect();
    let dx = s.spacing();

    let (xl, xr) = half_crossings(s, &lin, i, (1.0 + lin[i]) / 2.0);
    let mut mid = 0.5 * (xl + xr);
    let mut fwhm = (xr - xl).max(dx);
    let mut tmin = lin[i];
    if let Some((x, ymin)) = inverse_parabola(s, mid, 0.5 * fwhm) {
        if ymin > 1.0 {
            tmin = 1.0 - 1.0 / ymin;
            let (xl, xr) = half_crossings(s, &lin, i, (1.0 + tmin) / 2.0);
            fwhm = (xr - xl).max(dx);
        }
        mid += x;
    }
    ResonanceFeature {
        lam: mid,
        fwhm,
        depth: -10.0 * tmin.max(1e-12).log10(),
    }
}

/// Width of two identical coincident Lorentzian troughs at half depth of
/// the product, nm.
pub fn coincident_width(fwhm: f64, atten: f64) -> f64 {
    let tmin = (1.0 - atten).powi(2);
    let half = (1.0 + tmin) / 2.0;
    let l = (1.0 - half.sqrt()) / atten;
    fwhm * (1.0 / l - 1.0).sqrt()
}

/// Sampled thru transmission around a resonance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeCurve {
    /// Detune from the trough centre, nm, ascending.
    pub rel_nm: Vec<f64>,
    /// Linear transmission in [0, 1].
    pub trans: Vec<f64>,
}

impl ShapeCurve {
    /// Linear interpolation, held constant beyond the sampled range.
    pub fn transmission(&self, delta: f64) -> f64 {
        interp(&self.rel_nm, &self.trans, delta)
    }

    /// Piecewise-constant slope, zero outside the sampled range.
    pub fn slope(&self, delta: f64) -> f64 {
        let xs = &self.rel_nm;
        if delta <= xs[0] || delta >= xs[xs.len() - 1] {
            return 0.0;
        }
        let j = xs.partition_point(|v| *v <= delta).min(xs.len() - 1);
        (self.trans[j] - self.trans[j - 1]) / (xs[j] - xs[j - 1])
    }
}

pub fn extract_filter_shape(
    s: &Spectrum,
    feature: &ResonanceFeature,
    window_fwhms: f64,
) -> Result<ShapeCurve> {
    let half = 0.5 * window_fwhms * feature.fwhm;
    let (lo, hi) = (feature.lam - half, feature.lam + half);
    if lo < s.start() - 1e-9 || hi > s.end() + 1e-9 {
        return Err(Error::BadWindow {
            lo,
            hi,
            why: "shape window exceeds spectrum".into(),
        });
    }
    let c = s.crop(lo, hi)?;
    Ok(ShapeCurve {
        rel_nm: c.wavelengths().iter().map(|l| l - feature.lam).collect(),
        trans: c.power_mw().iter().map(|t| t.clamp(0.0, 1.0)).collect(),
    })
}

/// Thru-port filter shape of one ring, either analytic or measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum FilterShape {
    Lorentzian { gamma: f64, atten: f64 },
    Tabulated(ShapeCurve),
}

fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    if x <= xs[0] {
        return ys[0];
    }
    let n = xs.len();
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let j = xs.partition_point(|v| *v <= x);
    let (x0, x1) = (xs[j - 1], xs[j]);
    let f = (x - x0) / (x1 - x0);
    ys[j - 1] * (1.0 - f) + ys[j] * f
}

impl FilterShape {
    pub fn transmission(&self, delta: f64) -> f64 {
        match self {
            FilterShape::Lorentzian { gamma, atten } => {
                1.0 - atten * gamma * gamma / (gamma * gamma + delta * delta)
            }
            FilterShape::Tabulated(c) => c.transmission(delta),
        }
    }

    /// d transmission / d detune, per nm.
    pub fn slope(&self, delta: f64) -> f64 {
        match self {
            FilterShape::Lorentzian { gamma, atten } => {
                let g2 = gamma * gamma;
                let q = g2 + delta * delta;
                2.0 * atten * g2 * delta / (q * q)
            }
            FilterShape::Tabulated(c) => c.slope(delta),
        }
    }

    pub fn min_transmission(&self) -> f64 {
        match self {
            FilterShape::Lorentzian { atten, .. } => 1.0 - atten,
            FilterShape::Tabulated(c) => c.trans.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn fwhm(&self) -> f64 {
        match self {
            FilterShape::Lorentzian { gamma, .. } => 2.0 * gamma,
            FilterShape::Tabulated(c) => {
                let tmin = self.min_transmission();
                let half = (1.0 + tmin) / 2.0;
                let inside: Vec<f64> = c
                    .rel_nm
                    .iter()
                    .zip(&c.trans)
                    .filter(|(_, t)| **t < half)
                    .map(|(x, _)| *x)
                    .collect();
                match (inside.first(), inside.last()) {
                    (Some(a), Some(b)) => (b - a).max(1e-9),
                    _ => 1e-9,
                }
            }
        }
    }

    /// Red-side detune giving transmission `t`; targets above what the
    /// shape reaches within `max_detune` return `max_detune`.
    pub fn invert_red(&self, t: f64, max_detune: f64) -> Result<f64> {
        let tmin = self.min_transmission();
        if !(0.0..=1.0).contains(&t) || t < tmin - 1e-9 {
            return Err(Error::Unreachable(t));
        }
        match self {
            FilterShape::Lorentzian { gamma, atten } => {
                if t >= self.transmission(max_detune) {
                    return Ok(max_detune);
                }
                let d = *atten / (1.0 - t) - 1.0;
                Ok(gamma * d.max(0.0).sqrt())
            }
            FilterShape::Tabulated(c) => {
                let imin = (0..c.trans.len())
                    .min_by(|&a, &b| c.trans[a].total_cmp(&c.trans[b]))
                    .unwrap_or(0);
                let mut env = c.trans[imin];
                let mut prev = (c.rel_nm[imin], env);
                if t <= env {
                    return Ok(prev.0.max(0.0));
                }
                for j in imin + 1..c.trans.len() {
                    env = env.max(c.trans[j]);
                    let x = c.rel_nm[j];
                    if env >= t {
                        let f = if env > prev.1 { (t - prev.1) / (env - prev.1) } else { 0.0 };
                        return Ok((prev.0 + f * (x - prev.0)).max(0.0));
                    }
                    prev = (x, env);
                }
                Ok(max_detune.max(prev.0))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lorentz_spectrum(centres: &[f64], gamma: f64, a: f64, lo: f64, hi: f64, dx: f64) -> Spectrum {
        let (start, n) = Spectrum::grid(lo, hi, dx).unwrap();
        let lin: Vec<f64> = (0..n)
            .map(|i| {
                let l = start + i as f64 * dx;
                centres
                    .iter()
                    .map(|c| 1.0 - a * gamma * gamma / (gamma * gamma + (l - c).powi(2)))
                    .product()
            })
            .collect();
        Spectrum::from_linear(start, dx, &lin).unwrap()
    }

    #[test]
    fn four_troughs_located() {
        let c = [1550.0, 1552.0, 1554.0, 1556.0];
        let s = lorentz_spectrum(&c, 0.1, 0.98, 1545.0, 1560.0, 0.01);
        let f = find_resonances(&s, 4, 0.5).unwrap();
        for (a, b) in f.iter().zip(&c) {
            assert!((a.lam - b).abs() < 0.005, "{} vs {b}", a.lam);
            assert!((a.fwhm - 0.2).abs() < 0.01, "{}", a.fwhm);
            assert!((a.depth - 16.99).abs() < 0.1, "{}", a.depth);
        }
    }

    #[test]
    fn off_grid_centre_is_sub_sample() {
        let s = lorentz_spectrum(&[1550.0037], 0.05, 0.98, 1549.0, 1551.0, 0.01);
        let f = find_resonances(&s, 1, 0.1).unwrap();
        assert!((f[0].lam - 1550.0037).abs() < 1e-6, "{}", f[0].lam);
    }

    #[test]
    fn merged_and_flat_are_errors() {
        let s = lorentz_spectrum(&[1550.0, 1550.2], 0.1, 0.98, 1548.0, 1552.0, 0.01);
        assert!(matches!(
            find_resonances(&s, 2, 0.5),
            Err(Error::NotEnoughTroughs { found: 1, expected: 2 })
        ));
        let flat = Spectrum::new(1550.0, 0.01, vec![0.0; 300]).unwrap();
        assert!(find_resonances(&flat, 1, 0.5).is_err());
    }

    #[test]
    fn raw_spectrum_with_offset_baseline() {
        let s = lorentz_spectrum(&[1550.0, 1552.0], 0.1, 0.98, 1548.0, 1554.0, 0.01);
        let shifted = Spectrum::new(
            s.start(),
            s.spacing(),
            s.power_dbm().iter().map(|p| p - 50.0).collect(),
        )
        .unwrap();
        let f = find_resonances_raw(&shifted, 2, 0.5).unwrap();
        assert!((f[0].lam - 1550.0).abs() < 0.005);
        assert!((f[1].lam - 1552.0).abs() < 0.005);
    }

    #[test]
    fn tuned_background_restores_baseline() {
        let base = lorentz_spectrum(&[1550.0, 1552.0], 0.1, 0.98, 1548.0, 1554.0, 0.01);
        let disp = lorentz_spectrum(&[1550.6, 1552.6], 0.1, 0.98, 1548.0, 1554.0, 0.01);
        let bg = build_tuned_background(&base, &disp).unwrap();
        for p in bg.background.power_dbm() {
            assert!(*p > -0.5, "{p}");
        }
        assert!((bg.median_mw() - 1.0).abs() < 0.03, "{}", bg.median_mw());
        let same = build_tuned_background(&base, &base).unwrap();
        let resid = same.remove(&base).unwrap();
        let far = resid.crop(1548.5, 1549.5).unwrap();
        let worst = far.power_dbm().iter().fold(0.0f64, |m, p| m.max(p.abs()));
        assert!(worst < 0.01, "{worst}");
    }

    #[test]
    fn grid_mismatch_rejected() {
        let a = Spectrum::new(1550.0, 0.01, vec![0.0; 10]).unwrap();
        let b = Spectrum::new(1550.0, 0.01, vec![0.0; 11]).unwrap();
        assert_eq!(build_tuned_background(&a, &b), Err(Error::GridMismatch));
    }

    #[test]
    fn shape_matches_lorentzian() {
        let s = lorentz_spectrum(&[1550.0], 0.1, 0.98, 1548.0, 1552.0, 0.01);
        let f = find_resonances(&s, 1, 0.5).unwrap()[0];
        let shape = extract_filter_shape(&s, &f, 7.0).unwrap();
        let rms = (shape
            .rel_nm
            .iter()
            .zip(&shape.trans)
            .map(|(d, t)| (t - (1.0 - 0.98 * 0.01 / (0.01 + d * d))).powi(2))
            .sum::<f64>()
            / shape.trans.len() as f64)
            .sqrt();
        assert!(rms < 0.02, "{rms}");
        assert!((shape.rel_nm[0] + 0.7).abs() < 0.011);
        let tab = FilterShape::Tabulated(shape);
        assert!((tab.transmission(0.0) - 0.02).abs() < 1e-3);
        assert!(extract_filter_shape(&s, &f, 50.0).is_err());
    }

    #[test]
    fn shape_inversion() {
        let l = FilterShape::Lorentzian { gamma: 0.05, atten: 0.98 };
        let d = l.invert_red(0.5, 0.5).unwrap();
        assert_relative_eq!(l.transmission(d), 0.5, epsilon = 1e-12);
        assert!(d > 0.0);
        assert_eq!(l.invert_red(1.0, 0.5).unwrap(), 0.5);
        assert!(l.invert_red(0.01, 0.5).is_err());
        let (start, n) = (-0.35, 701);
        let curve = ShapeCurve {
            rel_nm: (0..n).map(|i| start + i as f64 * 0.001).collect(),
            trans: (0..n).map(|i| l.transmission(start + i as f64 * 0.001)).collect(),
        };
        let t = FilterShape::Tabulated(curve);
        assert!((t.invert_red(0.5, 0.5).unwrap() - d).abs() < 1e-3);
        assert!((t.fwhm() - 0.1).abs() < 0.003);
    }

    #[test]
    fn coincident_pair_is_wider() {
        let w = coincident_width(0.1, 0.98);
        assert!((w / 0.1 - 1.5314).abs() < 1e-3, "{w}");
        // direct numerical half-depth search on the product
        let g: f64 = 0.05;
        let t = |d: f64| (1.0 - 0.98 * g * g / (g * g + d * d)).powi(2);
        let half = (1.0 + t(0.0)) / 2.0;
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..100 {
            let m = 0.5 * (lo + hi);
            if t(m) < half { lo = m } else { hi = m }
        }
        assert_relative_eq!(w, 2.0 * lo, epsilon = 1e-9);
    }
}
