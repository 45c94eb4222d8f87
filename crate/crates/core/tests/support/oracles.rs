//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls the library code it checks: indices are evaluated from
//! a name-keyed band map, thresholds by scanning every pixel at every grid
//! point, parameter counts from layer shapes written out by hand.

#![allow(dead_code)]

use std::collections::HashMap;

/// Reflectances keyed by band name ("B02", ..., "B8A").
pub type Bands = HashMap<&'static str, f64>;

pub const BAND_NAMES: [&str; 10] = ["B02", "B03", "B04", "B05", "B06", "B07", "B08", "B8A", "B11", "B12"];

/// Quotient with the "zero denominator is undefined" rule.
fn div(a: f64, b: f64) -> f64 {
    if b == 0.0 { f64::NAN } else { a / b }
}

fn nd(a: f64, b: f64) -> f64 {
    div(a - b, a + b)
}

/// Unitemporal index by name, straight from the table of formulas.
pub fn index(name: &str, p: &Bands) -> f64 {
    let blue = p["B02"];
    let green = p["B03"];
    let red = p["B04"];
    let red_edge = p["B06"];
    let nir = p["B8A"];
    let nir1 = p["B07"];
    let nir2 = p["B8A"];
    let swir = p["B12"];
    let swir1 = p["B11"];
    let swir2 = p["B12"];
    match name {
        "SAVI" => div(1.5 * (nir - red), nir + red + 0.5),
        "NDVI" => nd(nir, red),
        "EVI" => div(2.5 * (nir - red), nir + 6.0 * red - 7.5 * blue + 1.0),
        "NDWI" => nd(green, nir),
        "BAI" => div(1.0, (0.1 - red).powi(2) + (0.06 - nir).powi(2)),
        "NBR" => nd(nir, swir),
        "NBR2" => nd(swir1, swir2),
        "NBRPLUS" => div(swir - nir - green - blue, swir + nir + green + blue),
        "MIRBI" => 10.0 * swir1 - 9.8 * swir2 + 2.0,
        "CSI" => div(nir, swir),
        "BAIS2" => {
            (1.0 - div(red_edge * nir1 * nir2, red).sqrt()) * (div(swir - nir2, (swir + nir2).sqrt()) + 1.0)
        }
        "NBI" => nd(swir, blue),
        "ABAI" => div(3.0 * swir1 - 2.0 * swir2 - 3.0 * green, 3.0 * swir1 + 2.0 * swir2 + 3.0 * green),
        other => panic!("no oracle for {other}"),
    }
}

pub fn rdnbr(pre: &Bands, post: &Bands) -> f64 {
    let (a, b) = (index("NBR", pre), index("NBR", post));
    div(a - b, (a / 1000.0).abs().sqrt())
}

pub fn rbr(pre: &Bands, post: &Bands) -> f64 {
    let (a, b) = (index("NBR", pre), index("NBR", post));
    div(a - b, a + 1.001)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Burnt-class F1 from raw counts, zero when undefined.
pub fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    2.0 * p * r / (p + r)
}

/// Scans every candidate; a pixel is burnt when `value >= t`. Returns the
/// first best candidate and its F1.
pub fn brute_force_threshold(values: &[f32], labels: &[u8], candidates: &[f64]) -> (f64, f64) {
    let mut best = (candidates[0], -1.0);
    for &t in candidates {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (&v, &l) in values.iter().zip(labels) {
            let pred = f64::from(v) >= t;
            match (pred, l == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let score = f1(tp, fp, fn_);
        if score > best.1 {
            best = (t, score);
        }
    }
    best
}

/// Trainable parameters of the double-stream network, from layer shapes:
/// conv weights `cin * cout * k * k` (no bias), batch norm `2 * c`, linear
/// layers `in * out + out`, and the 1x1 convs with bias.
pub fn bamcd_param_count(bands: usize, stem: usize, widths: &[usize], blocks: &[usize], r: usize, shared: bool) -> usize {
    let conv = |cin: usize, cout: usize, k: usize| cin * cout * k * k;
    let bn = |c: usize| 2 * c;

    let mut enc = conv(bands, stem, 3) + bn(stem);
    let mut cin = stem;
    for (stage, (&w, &n)) in widths.iter().zip(blocks).enumerate() {
        for b in 0..n {
            let downsample = stage > 0 && b == 0;
            enc += conv(cin, w, 3) + bn(w) + conv(w, w, 3) + bn(w);
            if downsample || cin != w {
                enc += conv(cin, w, 1) + bn(w);
            }
            cin = w;
        }
    }

    let block = |cin: usize, c: usize| {
        let hidden = std::cmp::max(1, c / r);
        let body = conv(cin, c, 3) + bn(c) + conv(c, c, 3) + bn(c);
        let channel_se = (c * hidden + hidden) + (hidden * c + c);
        let spatial_se = c + 1;
        body + channel_se + spatial_se
    };
    let levels = widths.len();
    let mut dec = block(2 * widths[levels - 1], widths[levels - 1]);
    for s in (0..levels - 1).rev() {
        dec += block(widths[s + 1] + 2 * widths[s], widths[s]);
    }
    let head = widths[0] + 1;
    let encoders = if shared { 1 } else { 2 };
    encoders * enc + dec + head
}

/// Where each scene pixel's prediction comes from, following the tiling
/// rule independently: full tiles from the top-left, plus bottom/right
/// edge-aligned tiles for leftovers, later tiles winning. Returns for each
/// pixel the (tile_row, tile_col, y, x) source.
pub fn stitch_sources(h: usize, w: usize, p: usize) -> Vec<(usize, usize, usize, usize)> {
    let starts = |n: usize| {
        let mut s = Vec::new();
        let mut at = 0;
        while at + p <= n {
            s.push(at);
            at += p;
        }
        if n % p != 0 {
            s.push(n - p);
        }
        s
    };
    let mut src = vec![(0, 0, 0, 0); h * w];
    for &r in &starts(h) {
        for &c in &starts(w) {
            for y in 0..p {
                for x in 0..p {
                    src[(r + y) * w + c + x] = (r, c, y, x);
                }
            }
        }
    }
    src
}

/// Two Gaussian blobs separated along the diagonal with a guaranteed gap:
/// class 1 has `x0 + x1 >= margin`, class 0 has `x0 + x1 <= -margin`.
pub fn separable_2d(n: usize, margin: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    while x.len() < n {
        let a: f64 = rng.random_range(-3.0..3.0);
        let b: f64 = rng.random_range(-3.0..3.0);
        let s = a + b;
        if s.abs() < margin {
            continue;
        }
        x.push(vec![a, b]);
        y.push(u8::from(s > 0.0));
    }
    (x, y)
}
