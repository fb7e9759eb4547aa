//! Fixed-size scatter plots without styling dependencies.

use std::fmt::Write as _;

use poslab::numerics::{self, svd};
use poslab::{Matrix, Vector};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Orthographic map onto the first two principal axes of a reference point set.
/// One-dimensional data is drawn on a horizontal line and 2-D data as is.
struct Plane {
    center: Vector,
    axes: Vec<Vector>,
}

impl Plane {
    fn fit(points: &[Vector]) -> Plane {
        let n = points.first().map_or(0, Vec::len);
        let mut center = vec![0.0; n];
        for p in points {
            numerics::axpy(&mut center, 1.0 / points.len() as f64, p);
        }
        let unit = |i: usize| (0..n).map(|k| if k == i { 1.0 } else { 0.0 }).collect::<Vector>();
        let axes = if n <= 2 {
            center = vec![0.0; n];
            (0..n).map(unit).collect()
        } else {
            let centered: Vec<Vector> = points.iter().map(|p| numerics::sub(p, &center)).collect();
            match Matrix::from_rows(&centered).and_then(|m| svd(&m)) {
                Ok(d) if d.v.cols() >= 2 => (0..2).map(|j| d.v.column(j)).collect(),
                _ => vec![unit(0), unit(1)],
            }
        };
        Plane { center, axes }
    }

    fn map(&self, p: &[f64]) -> (f64, f64) {
        let d = numerics::sub(p, &self.center);
        let x = self.axes.first().map_or(0.0, |a| numerics::dot(a, &d));
        let y = self.axes.get(1).map_or(0.0, |a| numerics::dot(a, &d));
        (x, y)
    }
}

/// Filled dots for `points` colored by label; hollow rings for the optional `overlay`
/// (reconstructions, projections or folded samples), mapped with the same axes.
pub fn scatter(title: &str, points: &[Vector], labels: &[usize], overlay: Option<&[Vector]>) -> String {
    let plane = Plane::fit(points);
    let base: Vec<(f64, f64)> = points.iter().map(|p| plane.map(p)).collect();
    let over: Vec<(f64, f64)> = overlay.unwrap_or(&[]).iter().map(|p| plane.map(p)).collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in base.iter().chain(&over).filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (-1.0, 1.0, -1.0, 1.0);
    }
    // Equal scale on both axes so angles between components read correctly.
    let span = (x1 - x0).max(y1 - y0).max(1e-12);
    let scale = ((WIDTH - 2.0 * MARGIN) / span).min((HEIGHT - 2.0 * MARGIN) / span);
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let px = |x: f64| WIDTH / 2.0 + (x - cx) * scale;
    let py = |y: f64| HEIGHT / 2.0 - (y - cy) * scale;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="640" height="480" viewBox="0 0 640 480">"#);
    let _ = writeln!(s, r#"<rect width="640" height="480" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="320" y="24" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    let (ox, oy) = (px(0.0), py(0.0));
    let _ = writeln!(s, r##"<line x1="{:.2}" y1="0" x2="{:.2}" y2="480" stroke="#ddd"/>"##, ox, ox);
    let _ = writeln!(s, r##"<line x1="0" y1="{:.2}" x2="640" y2="{:.2}" stroke="#ddd"/>"##, oy, oy);
    for (&(x, y), &l) in base.iter().zip(labels.iter().chain(std::iter::repeat(&0))) {
        if x.is_finite() && y.is_finite() {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}"/>"#, px(x), py(y), PALETTE[l % PALETTE.len()]);
        }
    }
    for &(x, y) in &over {
        if x.is_finite() && y.is_finite() {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="none" stroke="black" stroke-width="0.6"/>"#, px(x), py(y));
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_size_and_deterministic() {
        let pts = vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 0.5], vec![-1.0, 2.0, 0.0]];
        let a = scatter("t", &pts, &[0, 1, 1], Some(&pts));
        assert_eq!(a, scatter("t", &pts, &[0, 1, 1], Some(&pts)));
        assert!(a.starts_with("<svg") && a.contains(r#"width="640" height="480""#));
        assert_eq!(a.matches("<circle").count(), 6);
    }

    #[test]
    fn principal_plane_preserves_planar_distances() {
        // Points in a tilted plane of R³ keep their pairwise distances after projection.
        let pts: Vec<Vector> = [(0.0, 0.0), (1.0, 0.0), (0.0, 2.0), (3.0, 1.0)]
            .iter()
            .map(|&(a, b)| vec![a * 0.6, b, a * 0.8])
            .collect();
        let plane = Plane::fit(&pts);
        for p in &pts {
            for q in &pts {
                let (a, b) = (plane.map(p), plane.map(q));
                let d2 = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
                assert!((d2 - numerics::distance(p, q)).abs() < 1e-9);
            }
        }
    }
}
