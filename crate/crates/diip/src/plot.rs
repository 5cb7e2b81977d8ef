//! Minimal line plots: a frame, light grid lines and one polyline per series,
//! drawn into an RGB [`Image`].

use diip_core::image::{Image, Shape};

pub const WIDTH: usize = 480;
pub const HEIGHT: usize = 320;
const MARGIN: usize = 24;

const PALETTE: [[f64; 3]; 6] = [
    [0.12, 0.47, 0.71],
    [0.84, 0.15, 0.16],
    [0.17, 0.63, 0.17],
    [1.00, 0.50, 0.05],
    [0.58, 0.40, 0.74],
    [0.55, 0.34, 0.29],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    /// Base-10 log of the absolute value; zeros are dropped.
    LogAbs,
}

/// One curve: `(x, y)` points, non-finite values are skipped.
pub type Series = Vec<(f64, f64)>;

struct Canvas {
    img: Image,
}

impl Canvas {
    fn new() -> Self {
        Self {
            img: Image::filled(Shape::new(HEIGHT, WIDTH, 3), 1.0),
        }
    }

    fn dot(&mut self, x: i64, y: i64, col: [f64; 3]) {
        if (0..WIDTH as i64).contains(&x) && (0..HEIGHT as i64).contains(&y) {
            for (c, v) in col.iter().enumerate() {
                self.img.set(y as usize, x as usize, c, *v);
            }
        }
    }

    /// Bresenham.
    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), col: [f64; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.dot(x, y, col);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

/// Renders the series on shared axes. Returns `None` when no finite point
/// survives the scale.
pub fn line_plot(series: &[Series], scale: Scale) -> Option<Image> {
    let tf = |v: f64| match scale {
        Scale::Linear => v,
        Scale::LogAbs if v != 0.0 => v.abs().log10(),
        Scale::LogAbs => f64::NAN,
    };
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.iter()
                .map(|&(x, y)| (x, tf(y)))
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return None;
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let (pw, ph) = ((WIDTH - 2 * MARGIN) as f64, (HEIGHT - 2 * MARGIN) as f64);
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        let px = MARGIN as f64 + (x - x0) / (x1 - x0) * pw;
        let py = (HEIGHT - MARGIN) as f64 - (y - y0) / (y1 - y0) * ph;
        (px.round() as i64, py.round() as i64)
    };

    let mut cv = Canvas::new();
    let grey = [0.85; 3];
    for i in 1..4 {
        let gy = (MARGIN as f64 + ph * i as f64 / 4.0).round() as i64;
        let gx = (MARGIN as f64 + pw * i as f64 / 4.0).round() as i64;
        cv.line((MARGIN as i64, gy), ((WIDTH - MARGIN) as i64, gy), grey);
        cv.line((gx, MARGIN as i64), (gx, (HEIGHT - MARGIN) as i64), grey);
    }
    let (l, r, t, b) = (
        MARGIN as i64,
        (WIDTH - MARGIN) as i64,
        MARGIN as i64,
        (HEIGHT - MARGIN) as i64,
    );
    for (p, q) in [((l, t), (r, t)), ((r, t), (r, b)), ((r, b), (l, b)), ((l, b), (l, t))] {
        cv.line(p, q, [0.0; 3]);
    }
    for (i, s) in pts.iter().enumerate() {
        let col = PALETTE[i % PALETTE.len()];
        for w in s.windows(2) {
            cv.line(to_px(w[0].0, w[0].1), to_px(w[1].0, w[1].1), col);
        }
        if let [only] = s.as_slice() {
            let (x, y) = to_px(only.0, only.1);
            cv.dot(x, y, col);
        }
    }
    Some(cv.img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_series_in_colour() {
        let s: Series = (0..50).map(|i| (i as f64, (i as f64 * 0.2).sin())).collect();
        let img = line_plot(&[s], Scale::Linear).unwrap();
        assert_eq!(img.shape(), Shape::new(HEIGHT, WIDTH, 3));
        let coloured = img
            .data()
            .chunks(3)
            .filter(|p| (p[0] - PALETTE[0][0]).abs() < 1e-12 && (p[2] - PALETTE[0][2]).abs() < 1e-12)
            .count();
        assert!(coloured > 100);
    }

    #[test]
    fn log_scale_drops_zeros_and_empty_is_none() {
        assert!(line_plot(&[vec![(0.0, 0.0)]], Scale::LogAbs).is_none());
        assert!(line_plot(&[], Scale::Linear).is_none());
        assert!(line_plot(&[vec![(1.0, -0.01), (2.0, 0.0), (3.0, 1e-4)]], Scale::LogAbs).is_some());
    }
}
