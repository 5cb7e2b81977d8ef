//! Scalar reference implementations written straight from the textbook
//! formulas on nested vectors, sharing no code with the library.
#![allow(dead_code)]

pub type Grid = Vec<Vec<f64>>;

pub fn grid(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Grid {
    (0..h).map(|y| (0..w).map(|x| f(y, x)).collect()).collect()
}

/// Symmetric padding without edge repetition, built explicitly.
pub fn pad_reflect(g: &Grid, r: usize) -> Grid {
    let (h, w) = (g.len() as i64, g[0].len() as i64);
    let mirror = |i: i64, n: i64| -> usize {
        let mut i = i;
        while i < 0 || i >= n {
            if i < 0 {
                i = -i;
            }
            if i >= n {
                i = 2 * (n - 1) - i;
            }
        }
        i as usize
    };
    let r = r as i64;
    (-r..h + r)
        .map(|y| (-r..w + r).map(|x| g[mirror(y, h)][mirror(x, w)]).collect())
        .collect()
}

/// Same-size correlation with reflect padding.
pub fn correlate(g: &Grid, k: &Grid) -> Grid {
    let r = k.len() / 2;
    let p = pad_reflect(g, r);
    grid(g.len(), g[0].len(), |y, x| {
        let mut s = 0.0;
        for (i, row) in k.iter().enumerate() {
            for (j, kv) in row.iter().enumerate() {
                s += kv * p[y + i][x + j];
            }
        }
        s
    })
}

pub fn gaussian_kernel(size: usize, sigma: f64) -> Grid {
    let r = (size / 2) as f64;
    let raw = grid(size, size, |i, j| {
        let (dy, dx) = (i as f64 - r, j as f64 - r);
        (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp()
    });
    let total: f64 = raw.iter().flatten().sum();
    raw.into_iter().map(|row| row.into_iter().map(|v| v / total).collect()).collect()
}

/// Two-pass population variance of the 4-neighbour Laplacian over interior
/// pixels.
pub fn laplacian_variance(g: &Grid) -> f64 {
    let mut resp = Vec::new();
    for y in 1..g.len() - 1 {
        for x in 1..g[0].len() - 1 {
            resp.push(g[y - 1][x] + g[y + 1][x] + g[y][x - 1] + g[y][x + 1] - 4.0 * g[y][x]);
        }
    }
    let n = resp.len() as f64;
    let mean = resp.iter().sum::<f64>() / n;
    resp.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

pub fn psnr(a: &Grid, b: &Grid) -> f64 {
    let (mut s, mut n) = (0.0, 0.0);
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            s += (x - y) * (x - y);
            n += 1.0;
        }
    }
    -10.0 * (s / n).log10()
}

/// Mean SSIM over valid 11x11 windows, Gaussian sigma 1.5, unit range.
/// Each window's statistics are computed in two passes.
pub fn ssim(a: &Grid, b: &Grid) -> f64 {
    let k = gaussian_kernel(11, 1.5);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (h, w) = (a.len(), a[0].len());
    let mut vals = Vec::new();
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let wmean = |g: &Grid| -> f64 {
                (0..11).flat_map(|i| (0..11).map(move |j| (i, j))).map(|(i, j)| k[i][j] * g[y0 + i][x0 + j]).sum()
            };
            let (ma, mb) = (wmean(a), wmean(b));
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let (da, db) = (a[y0 + i][x0 + j] - ma, b[y0 + i][x0 + j] - mb);
                    va += k[i][j] * da * da;
                    vb += k[i][j] * db * db;
                    cov += k[i][j] * da * db;
                }
            }
            vals.push((2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2)));
        }
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

/// Cumulative product of `1 - beta` for a linear beta schedule, 1-based.
pub fn alpha_bar(t: usize) -> f64 {
    (0..t).map(|s| 1.0 - (1e-4 + (0.02 - 1e-4) * s as f64 / 999.0)).product()
}

pub fn x0_hat(z: f64, eps: f64, t: usize) -> f64 {
    let a = alpha_bar(t);
    (z - (1.0 - a).sqrt() * eps) / a.sqrt()
}

pub fn ddim_step(z: f64, x0: f64, t: usize, dt: usize) -> f64 {
    let (a, a2) = (alpha_bar(t), if t == dt { 1.0 } else { alpha_bar(t - dt) });
    let eps = (z - a.sqrt() * x0) / (1.0 - a).sqrt();
    a2.sqrt() * x0 + (1.0 - a2).sqrt() * eps
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}
