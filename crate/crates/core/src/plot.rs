//! Static SVG line plots of logged channels against time.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::sim::TrajectoryLog;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 45.0;

/// y-axis range with a little headroom; flat traces get a symmetric band.
fn y_range(y: &[f64]) -> (f64, f64) {
    let (lo, hi) = y
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let span = hi - lo;
    if span <= 1e-12 * lo.abs().max(hi.abs()).max(1e-300) {
        let pad = 1e-3 * lo.abs().max(1e-9);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.05 * span, hi + 0.05 * span)
    }
}

/// SVG document for one channel.
pub fn render_svg(t: &[f64], y: &[f64], title: &str) -> Result<String> {
    if t.len() < 2 || y.len() != t.len() {
        return Err(Error::EmptyLog);
    }
    let (t0, t1) = (t[0], t[t.len() - 1]);
    let t_span = if t1 > t0 { t1 - t0 } else { 1.0 };
    let (y0, y1) = y_range(y);
    let pw = WIDTH - MARGIN_L - MARGIN_R;
    let ph = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |ti: f64| MARGIN_L + (ti - t0) / t_span * pw;
    let py = |yi: f64| MARGIN_T + (y1 - yi) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{title}</text>"#, WIDTH / 2.0);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let yv = y0 + f * (y1 - y0);
        let tv = t0 + f * t_span;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-size="11" text-anchor="end">{yv:.5}</text>"#,
            MARGIN_L - 6.0,
            py(yv) + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" font-size="11" text-anchor="middle">{tv:.3}</text>"#,
            px(tv),
            HEIGHT - MARGIN_B + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">t [s]</text>"#,
        MARGIN_L + pw / 2.0,
        HEIGHT - 8.0
    );
    let mut points = String::new();
    for (&ti, &yi) in t.iter().zip(y) {
        if yi.is_finite() {
            let _ = write!(points, "{:.2},{:.2} ", px(ti), py(yi));
        }
    }
    let _ = writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, points.trim_end());
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes `<channel>.svg` into `dir` for each channel.
pub fn emit_plots(log: &TrajectoryLog, channels: &[&str], dir: &Path) -> Result<Vec<PathBuf>> {
    if log.len() < 2 {
        return Err(Error::EmptyLog);
    }
    let t = log.times();
    let mut out = Vec::with_capacity(channels.len());
    for ch in channels {
        let y = log.column(ch).ok_or_else(|| Error::config(format!("cannot plot unknown channel `{ch}`")))?;
        let path = dir.join(format!("{ch}.svg"));
        std::fs::write(&path, render_svg(&t, &y, ch)?)?;
        out.push(path);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(rows: &[[f64; 2]]) -> TrajectoryLog {
        let mut l = TrajectoryLog::new(vec!["x".into()]);
        l.rows = rows.iter().map(|r| r.to_vec()).collect();
        l
    }

    #[test]
    fn single_sample_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_plots(&log(&[[0.0, 1.0]]), &["x"], dir.path()), Err(Error::EmptyLog)));
        assert!(matches!(emit_plots(&log(&[]), &["x"], dir.path()), Err(Error::EmptyLog)));
    }

    #[test]
    fn constant_trace_is_a_flat_line() {
        let s = render_svg(&[0.0, 1.0, 2.0], &[0.975; 3], "omega_pu").unwrap();
        let pts = s.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        let ys: Vec<&str> = pts.split(' ').map(|p| p.split(',').nth(1).unwrap()).collect();
        assert!(ys.iter().all(|y| *y == ys[0]), "{pts}");
        assert!(s.contains("0.97500"));
    }

    #[test]
    fn writes_one_file_per_channel() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plots(&log(&[[0.0, 1.0], [1.0, 2.0]]), &["x"], dir.path()).unwrap();
        assert_eq!(files, vec![dir.path().join("x.svg")]);
        assert!(std::fs::read_to_string(&files[0]).unwrap().starts_with("<svg"));
        assert!(emit_plots(&log(&[[0.0, 1.0], [1.0, 2.0]]), &["y"], dir.path()).unwrap_err().is_config());
    }
}
