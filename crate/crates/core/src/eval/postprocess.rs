//! Non-maximum suppression and skeleton thinning for the standard protocol.

use crate::grid::Grid;

/// Normalized 1-D Gaussian with radius `⌈2σ⌉`; `σ = 0` gives the identity tap.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (2.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian smoothing with replicated borders.
pub fn smooth(g: &Grid, sigma: f64) -> Grid {
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    let (h, w, _) = g.shape();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let rows = Grid::from_fn(h, w, 1, |_, y, x| {
        taps.iter()
            .enumerate()
            .map(|(i, t)| t * g.at(y, clampi(x as isize + i as isize - r, w)))
            .sum()
    });
    Grid::from_fn(h, w, 1, |_, y, x| {
        taps.iter()
            .enumerate()
            .map(|(i, t)| t * rows.at(clampi(y as isize + i as isize - r, h), x))
            .sum()
    })
}

/// Central-difference gradient `(d/dy, d/dx)` with replicated borders.
pub fn gradient(g: &Grid, y: usize, x: usize) -> (f64, f64) {
    let (h, w, _) = g.shape();
    let gy = (g.at((y + 1).min(h - 1), x) - g.at(y.saturating_sub(1), x)) / 2.0;
    let gx = (g.at(y, (x + 1).min(w - 1)) - g.at(y, x.saturating_sub(1))) / 2.0;
    (gy, gx)
}

/// Bilinear sample; positions outside the grid read as zero.
pub fn bilinear(g: &Grid, y: f64, x: f64) -> f64 {
    let (h, w, _) = g.shape();
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let px = |yy: f64, xx: f64| {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            0.0
        } else {
            g.at(yy as usize, xx as usize)
        }
    };
    let mut v = 0.0;
    for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
        for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
            let wgt = wy * wx;
            if wgt != 0.0 {
                v += wgt * px(y0 + dy, x0 + dx);
            }
        }
    }
    v
}

/// Per-pixel unit normal of the ridge through each pixel, `(dy, dx)`.
///
/// Taken as the eigenvector of the largest-magnitude eigenvalue of the
/// Hessian, itself built from central differences of the central-difference
/// gradient of the smoothed map. At a ridge crest the gradient vanishes but
/// the curvature across the ridge does not. `None` where the Hessian is
/// zero.
pub fn ridge_normals(smoothed: &Grid) -> Vec<Option<(f64, f64)>> {
    let (h, w, _) = smoothed.shape();
    let gy = Grid::from_fn(h, w, 1, |_, y, x| gradient(smoothed, y, x).0);
    let gx = Grid::from_fn(h, w, 1, |_, y, x| gradient(smoothed, y, x).1);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (yy, yx) = gradient(&gy, y, x);
            let (xy, xx) = gradient(&gx, y, x);
            out.push(principal_axis(yy, 0.5 * (yx + xy), xx));
        }
    }
    out
}

/// Unit eigenvector `(vy, vx)` of `[[a, b], [b, c]]` for the eigenvalue of
/// largest magnitude.
pub fn principal_axis(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    let mean = 0.5 * (a + c);
    let rad = (0.5 * (a - c)).hypot(b);
    let lambda = if (mean + rad).abs() >= (mean - rad).abs() { mean + rad } else { mean - rad };
    if lambda == 0.0 {
        return None;
    }
    if b == 0.0 {
        return Some(if a.abs() >= c.abs() { (1.0, 0.0) } else { (0.0, 1.0) });
    }
    let (p, q) = ((b, lambda - a), (lambda - c, b));
    let v = if p.0.hypot(p.1) >= q.0.hypot(q.1) { p } else { q };
    let n = v.0.hypot(v.1);
    Some((v.0 / n, v.1 / n))
}

/// Suppresses pixels exceeded by a neighbour one pixel away on either side
/// of the ridge normal.
///
/// When exactly one neighbour ties with the pixel, the pair forms a
/// two-pixel plateau and only the lexicographically first member (row, then
/// column) survives. Pixels with no orientation, or tied on both sides, are
/// kept and left to thinning.
pub fn non_max_suppress(pred: &Grid, sigma: f64) -> Grid {
    let normals = ridge_normals(&smooth(pred, sigma));
    let (h, w, _) = pred.shape();
    Grid::from_fn(h, w, 1, |_, y, x| {
        let v = pred.at(y, x);
        if v <= 0.0 {
            return 0.0;
        }
        let Some((dy, dx)) = normals[y * w + x] else {
            return v;
        };
        let (yf, xf) = (y as f64, x as f64);
        let ahead = bilinear(pred, yf + dy, xf + dx);
        let behind = bilinear(pred, yf - dy, xf - dx);
        if ahead > v || behind > v {
            return 0.0;
        }
        let earlier = |sy: f64, sx: f64| sy < 0.0 || (sy == 0.0 && sx < 0.0);
        match (ahead == v, behind == v) {
            (true, false) if earlier(dy, dx) => 0.0,
            (false, true) if earlier(-dy, -dx) => 0.0,
            _ => v,
        }
    })
}

/// Neighbours clockwise from north: N, NE, E, SE, S, SW, W, NW.
const RING: [(isize, isize); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

fn ring(fg: &[bool], h: usize, w: usize, y: usize, x: usize) -> [bool; 8] {
    let mut p = [false; 8];
    for (k, (dy, dx)) in RING.iter().enumerate() {
        let (yy, xx) = (y as isize + dy, x as isize + dx);
        if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
            p[k] = fg[yy as usize * w + xx as usize];
        }
    }
    p
}

/// `(B, A)`: foreground neighbour count and the number of 0→1 transitions
/// around the ring.
fn counts(p: &[bool; 8]) -> (usize, usize) {
    let b = p.iter().filter(|&&v| v).count();
    let a = (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count();
    (b, a)
}

/// Deletable without splitting a component or eating an end point.
fn removable(p: &[bool; 8]) -> bool {
    let (b, a) = counts(p);
    (2..=6).contains(&b) && a == 1
}

/// Zhang–Suen thinning of a binary support given as a row-major mask.
///
/// Candidates of each sub-iteration are marked in parallel, as in the
/// classic algorithm, then deleted one at a time with the removability test
/// re-checked against the current image. The re-check keeps two-pixel-thick
/// lines and 2×2 blocks from vanishing, so every 8-connected component
/// survives as a connected skeleton.
pub fn zhang_suen(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut fg = mask.to_vec();
    // (N, E, S) & (E, S, W) zero for the first pass; (N, E, W) & (N, S, W)
    // for the second. Indices into RING: N 0, E 2, S 4, W 6.
    let passes: [[[usize; 3]; 2]; 2] = [[[0, 2, 4], [2, 4, 6]], [[0, 2, 6], [0, 4, 6]]];
    loop {
        let mut changed = false;
        for pass in &passes {
            let mut marked = Vec::new();
            for y in 0..h {
                for x in 0..w {
                    if !fg[y * w + x] {
                        continue;
                    }
                    let p = ring(&fg, h, w, y, x);
                    let open = |t: &[usize; 3]| !t.iter().all(|&k| p[k]);
                    if removable(&p) && open(&pass[0]) && open(&pass[1]) {
                        marked.push((y, x));
                    }
                }
            }
            for (y, x) in marked {
                if removable(&ring(&fg, h, w, y, x)) {
                    fg[y * w + x] = false;
                    changed = true;
                }
            }
        }
        if !changed {
            return fg;
        }
    }
}

/// NMS followed by thinning; surviving pixels keep their original values.
pub fn postprocess(pred: &Grid, sigma: f64) -> Grid {
    let (h, w, _) = pred.shape();
    let nms = non_max_suppress(pred, sigma);
    let mask: Vec<bool> = nms.data().iter().map(|&v| v > 0.0).collect();
    let keep = zhang_suen(&mask, h, w);
    Grid::from_fn(h, w, 1, |_, y, x| if keep[y * w + x] { pred.at(y, x) } else { 0.0 })
}
