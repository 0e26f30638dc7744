//! Static SVG renderings of the CSV artifacts, and detection of which kind
//! of artifact a CSV holds.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Spectrum,
    LearningCurve,
    Surface,
}

impl ArtifactKind {
    pub fn detect(csv: &str) -> Option<Self> {
        let header = csv.lines().next()?.trim();
        match header {
            "nm,dBm" => Some(Self::Spectrum),
            "epoch,mean_cost,class_error" => Some(Self::LearningCurve),
            h if h.starts_with("y\\x,") => Some(Self::Surface),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Spectrum => "spectrum",
            Self::LearningCurve => "learning curve",
            Self::Surface => "surface",
        }
    }
}

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Numeric columns of a headed CSV.
pub fn columns(csv: &str) -> Result<Vec<Vec<f64>>, String> {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for (n, line) in csv.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("line {}: {e}", n + 1))?;
        if cols.is_empty() {
            cols = vec![Vec::new(); vals.len()];
        }
        if vals.len() != cols.len() {
            return Err(format!("line {}: {} columns, expected {}", n + 1, vals.len(), cols.len()));
        }
        for (c, v) in cols.iter_mut().zip(vals) {
            c.push(v);
        }
    }
    if cols.is_empty() || cols[0].len() < 2 {
        return Err("fewer than two data rows".into());
    }
    Ok(cols)
}

/// x axis, y axis and `values[iy][ix]`.
pub type SurfaceGrid = (Vec<f64>, Vec<f64>, Vec<Vec<f64>>);

/// Surface CSV: header of x values, then rows of `y, values...`.
pub fn parse_surface(csv: &str) -> Result<SurfaceGrid, String> {
    let mut lines = csv.lines();
    let header = lines.next().ok_or("empty surface")?;
    let xs = header
        .split(',')
        .skip(1)
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("header: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    let (mut ys, mut values) = (Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| format!("line {}: {e}", n + 2))?;
        if row.len() != xs.len() + 1 {
            return Err(format!("line {}: row length {}", n + 2, row.len()));
        }
        ys.push(row[0]);
        values.push(row[1..].to_vec());
    }
    if xs.is_empty() || ys.is_empty() {
        return Err("empty surface".into());
    }
    Ok((xs, ys, values))
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn header(s: &mut String, title: &str) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, x: (f64, f64), y: (f64, f64), xlabel: &str, ylabel: &str) {
    let (l, r, t, b) = (MARGIN, W - 20.0, 30.0, H - MARGIN);
    let _ = writeln!(s, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let px = l + f * (r - l);
        let py = b - f * (b - t);
        let _ = writeln!(
            s,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            b + 16.0,
            tick(x.0 + f * (x.1 - x.0))
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            l - 4.0,
            py + 4.0,
            tick(y.0 + f * (y.1 - y.0))
        );
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Line chart of one or more series sharing the axes.
pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let x = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let y = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let (l, r, t, b) = (MARGIN, W - 20.0, 30.0, H - MARGIN);
    let mut s = String::new();
    header(&mut s, title);
    axes(&mut s, x, y, xlabel, ylabel);
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|&(px, py)| {
                let sx = l + (px - x.0) / (x.1 - x.0) * (r - l);
                let sy = b - (py - y.0) / (y.1 - y.0) * (b - t);
                format!("{sx:.2},{sy:.2}")
            })
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#, pts.join(" "));
        if series.len() > 1 {
            let ly = t + 16.0 + 16.0 * i as f64;
            let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}" fill="{color}" text-anchor="end">{}</text>"#, r - 6.0, escape(&ser.label));
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Diverging heatmap centred on zero, `values[iy][ix]`.
pub fn heatmap(title: &str, xs: &[f64], ys: &[f64], values: &[Vec<f64>]) -> String {
    let (l, r, t, b) = (MARGIN, W - 20.0, 30.0, H - MARGIN);
    let x = range(xs.iter().copied());
    let y = range(ys.iter().copied());
    let vmax = values
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-12);
    let cw = (r - l) / xs.len() as f64;
    let ch = (b - t) / ys.len() as f64;
    let mut s = String::new();
    header(&mut s, title);
    for (iy, row) in values.iter().enumerate() {
        for (ix, v) in row.iter().enumerate() {
            let f = (v / vmax).clamp(-1.0, 1.0);
            let (cr, cg, cb) = if f >= 0.0 {
                (255.0 * (1.0 - f), 255.0 * (1.0 - f), 255.0)
            } else {
                (255.0, 255.0 * (1.0 + f), 255.0 * (1.0 + f))
            };
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({},{},{})"/>"#,
                l + ix as f64 * cw,
                b - (iy + 1) as f64 * ch,
                cw + 0.05,
                ch + 0.05,
                cr.round() as u8,
                cg.round() as u8,
                cb.round() as u8
            );
        }
    }
    axes(&mut s, x, y, "x", "y");
    s.push_str("</svg>\n");
    s
}

/// SVG for a CSV artifact of known kind.
pub fn render(kind: ArtifactKind, csv: &str, title: &str) -> Result<String, String> {
    match kind {
        ArtifactKind::Spectrum => {
            let c = columns(csv)?;
            let points = c[0].iter().copied().zip(c[1].iter().copied()).collect();
            Ok(line_chart(title, "wavelength (nm)", "power (dBm)", &[Series {
                label: "spectrum".into(),
                points,
            }]))
        }
        ArtifactKind::LearningCurve => {
            let c = columns(csv)?;
            let series = [("mean cost", 1), ("class error", 2)]
                .iter()
                .map(|&(label, k)| Series {
                    label: label.into(),
                    points: c[0].iter().copied().zip(c[k].iter().copied()).collect(),
                })
                .collect::<Vec<_>>();
            Ok(line_chart(title, "epoch", "cost / error", &series))
        }
        ArtifactKind::Surface => {
            let (xs, ys, v) = parse_surface(csv)?;
            Ok(heatmap(title, &xs, &ys, &v))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_headers() {
        assert_eq!(ArtifactKind::detect("nm,dBm\n1,2\n"), Some(ArtifactKind::Spectrum));
        assert_eq!(
            ArtifactKind::detect("epoch,mean_cost,class_error\n"),
            Some(ArtifactKind::LearningCurve)
        );
        assert_eq!(ArtifactKind::detect("y\\x,0,1\n0,1,2\n"), Some(ArtifactKind::Surface));
        assert_eq!(ArtifactKind::detect("a,b\n"), None);
        assert_eq!(ArtifactKind::detect(""), None);
    }

    #[test]
    fn renders_each_kind() {
        let spec = "nm,dBm\n1550.0,-40\n1550.1,-41\n1550.2,-39\n";
        let svg = render(ArtifactKind::Spectrum, spec, "s").unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
        let curve = "epoch,mean_cost,class_error\n0,1,0.5\n1,0.5,0.25\n";
        assert_eq!(render(ArtifactKind::LearningCurve, curve, "c").unwrap().matches("polyline").count(), 2);
        let surf = "y\\x,0,1\n0,1,-1\n1,-1,1\n";
        assert_eq!(render(ArtifactKind::Surface, surf, "h").unwrap().matches("<rect").count(), 2 + 4);
    }

    #[test]
    fn malformed_rows_rejected() {
        assert!(columns("nm,dBm\n1,2\n3\n").is_err());
        assert!(parse_surface("y\\x,0,1\n0,1\n").is_err());
    }
}
