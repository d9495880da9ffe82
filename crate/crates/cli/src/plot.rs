//! Standalone SVG: log–log line plots and linear scatter plots. Output is a pure function
//! of the input, formatted with fixed precision.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(vals: impl Iterator<Item = f64>, log: bool) -> Option<Axis> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in vals {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return None;
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        Some(Axis { lo, hi, log })
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    /// Tick positions in data units with labels.
    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            (self.lo as i64..=self.hi as i64)
                .map(|e| (10f64.powi(e as i32), format!("1e{e}")))
                .collect()
        } else {
            (0..=5)
                .map(|i| {
                    let v = self.lo + (self.hi - self.lo) * i as f64 / 5.0;
                    (v, format!("{v:.3}"))
                })
                .collect()
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn px(f: f64) -> f64 {
    LEFT + f * (W - LEFT - RIGHT)
}

fn py(f: f64) -> f64 {
    H - BOTTOM - f * (H - TOP - BOTTOM)
}

fn frame(out: &mut String, title: &str, xlabel: &str, ylabel: &str, xa: &Axis, ya: &Axis) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{}</text>", W / 2.0, escape(title));
    let _ = writeln!(
        out,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"black\"/>",
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    for (v, label) in xa.ticks() {
        let x = px(xa.frac(v));
        let _ = writeln!(out, "<line x1=\"{x:.2}\" y1=\"{:.1}\" x2=\"{x:.2}\" y2=\"{:.1}\" stroke=\"black\"/>", H - BOTTOM, H - BOTTOM + 5.0);
        let _ = writeln!(out, "<text x=\"{x:.2}\" y=\"{:.1}\" text-anchor=\"middle\">{label}</text>", H - BOTTOM + 18.0);
    }
    for (v, label) in ya.ticks() {
        let y = py(ya.frac(v));
        let _ = writeln!(out, "<line x1=\"{:.1}\" y1=\"{y:.2}\" x2=\"{LEFT}\" y2=\"{y:.2}\" stroke=\"black\"/>", LEFT - 5.0);
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.2}\" text-anchor=\"end\">{label}</text>", LEFT - 8.0, y + 4.0);
    }
    let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>", px(0.5), H - 10.0, escape(xlabel));
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        py(0.5),
        py(0.5),
        escape(ylabel)
    );
}

/// Log–log polyline of the strictly positive points.
pub fn loglog_svg(points: &[(f64, f64)], title: &str, xlabel: &str, ylabel: &str) -> Option<String> {
    let pts: Vec<(f64, f64)> = points.iter().copied().filter(|(x, y)| *x > 0.0 && *y > 0.0).collect();
    let xa = Axis::new(pts.iter().map(|p| p.0), true)?;
    let ya = Axis::new(pts.iter().map(|p| p.1), true)?;
    let mut out = String::new();
    frame(&mut out, title, xlabel, ylabel, &xa, &ya);
    let path: Vec<String> = pts
        .iter()
        .map(|(x, y)| format!("{:.2},{:.2}", px(xa.frac(*x)), py(ya.frac(*y))))
        .collect();
    let _ = writeln!(out, "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{}\"/>", path.join(" "));
    out.push_str("</svg>\n");
    Some(out)
}

/// Labelled scatter on linear axes.
pub fn scatter_svg(points: &[(String, f64, f64)], title: &str, xlabel: &str, ylabel: &str) -> Option<String> {
    let xa = Axis::new(points.iter().map(|p| p.1), false)?;
    let ya = Axis::new(points.iter().map(|p| p.2), false)?;
    let mut out = String::new();
    frame(&mut out, title, xlabel, ylabel, &xa, &ya);
    for (label, x, y) in points {
        let (cx, cy) = (px(xa.frac(*x)), py(ya.frac(*y)));
        let _ = writeln!(out, "<circle cx=\"{cx:.2}\" cy=\"{cy:.2}\" r=\"4\" fill=\"#d62728\"/>");
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\">{}</text>", cx + 6.0, cy - 6.0, escape(label));
    }
    out.push_str("</svg>\n");
    Some(out)
}

/// First two numeric columns of a CSV with a header row.
pub fn parse_xy_csv(text: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut it = line.split(',');
        let mut next = || -> Result<f64, String> {
            it.next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| format!("line {}: expected two numeric columns", i + 1))
        };
        out.push((next()?, next()?));
    }
    Ok(out)
}

/// `(label, NFE, mean error)` rows from a bench table CSV.
pub fn parse_table_csv(text: &str) -> Result<Vec<(String, f64, f64)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || format!("line {}: not a bench table row", i + 1);
        if cols.len() != 4 {
            return Err(bad());
        }
        let nfe: f64 = cols[1].trim().parse().map_err(|_| bad())?;
        let err: f64 = cols[2]
            .split('±')
            .next()
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(bad)?;
        out.push((cols[0].to_string(), nfe, err));
    }
    Ok(out)
}
