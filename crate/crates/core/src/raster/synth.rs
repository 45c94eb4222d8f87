//! Synthetic bitemporal fire events.
//!
//! A patch starts as uniform vegetation in both epochs. Burn polygons
//! (star-shaped, randomly placed) replace the post-fire spectrum with a
//! mixture of the vegetated and burnt profiles, weighted by a severity that
//! is drawn per polygon and fades towards the polygon rim. An optional water
//! strip along one edge is dark in every band in both epochs and never
//! burns. Gaussian noise is added independently per band, pixel and epoch.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{BandId, BitemporalSample, GroundTruthMask, RasterPatch, Split};
use crate::error::{Error, Result};
use crate::seed;

/// Mean surface reflectance per band, in `BandId::ALL` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralProfile(pub [f32; 10]);

impl SpectralProfile {
    pub fn get(&self, band: BandId) -> f32 {
        let i = BandId::ALL.iter().position(|&b| b == band).unwrap();
        self.0[i]
    }

    /// `(1 - t) * self + t * other`.
    pub fn mix(&self, other: &SpectralProfile, t: f32) -> SpectralProfile {
        let mut out = [0.0; 10];
        for (i, o) in out.iter_mut().enumerate() {
            *o = (1.0 - t) * self.0[i] + t * other.0[i];
        }
        SpectralProfile(out)
    }
}

//                                B02   B03   B04   B05   B06   B07   B08   B8A   B11   B12
pub const VEGETATED: SpectralProfile =
    SpectralProfile([0.03, 0.06, 0.06, 0.12, 0.30, 0.38, 0.42, 0.45, 0.20, 0.12]);
pub const BURNT: SpectralProfile =
    SpectralProfile([0.05, 0.07, 0.09, 0.11, 0.14, 0.16, 0.17, 0.18, 0.30, 0.28]);
pub const WATER: SpectralProfile =
    SpectralProfile([0.06, 0.05, 0.03, 0.02, 0.015, 0.01, 0.01, 0.01, 0.005, 0.003]);

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub patch_size: usize,
    pub bands: Vec<BandId>,
    /// Probability that an event contains any burn at all.
    pub positive_probability: f64,
    /// Inclusive range of polygon count for a burning event.
    pub polygons: (usize, usize),
    /// Range of the polygon's outer radius, in pixels.
    pub radius: (f64, f64),
    /// Range of per-polygon peak burn severity in `(0, 1]`.
    pub severity: (f64, f64),
    /// Relative severity loss from polygon centre to rim, in `[0, 1)`.
    pub rim_falloff: f64,
    /// Standard deviation of the additive reflectance noise.
    pub noise: f64,
    pub water_probability: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            bands: BandId::ALL.to_vec(),
            positive_probability: 0.7,
            polygons: (1, 3),
            radius: (6.0, 18.0),
            severity: (0.7, 1.0),
            rim_falloff: 0.3,
            noise: 0.02,
            water_probability: 0.3,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.patch_size < 4 {
            return bad(format!("patch_size {} is too small", self.patch_size));
        }
        if self.bands.is_empty() {
            return bad("no bands requested".into());
        }
        if self.polygons.0 > self.polygons.1 {
            return bad(format!("polygon count range {:?} is inverted", self.polygons));
        }
        if !(self.radius.0 >= 0.0 && self.radius.0 <= self.radius.1) {
            return bad(format!("radius range {:?} is invalid", self.radius));
        }
        if 2.0 * self.radius.1 > self.patch_size as f64 {
            return bad(format!(
                "polygon diameter {} exceeds patch size {}",
                2.0 * self.radius.1,
                self.patch_size
            ));
        }
        if !(self.severity.0 > 0.0 && self.severity.0 <= self.severity.1 && self.severity.1 <= 1.0) {
            return bad(format!("severity range {:?} must lie in (0, 1]", self.severity));
        }
        if !(0.0..1.0).contains(&self.rim_falloff) {
            return bad(format!("rim_falloff {} must lie in [0, 1)", self.rim_falloff));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be non-negative", self.noise));
        }
        for (name, p) in [
            ("positive_probability", self.positive_probability),
            ("water_probability", self.water_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

struct Polygon {
    cx: f64,
    cy: f64,
    outer: f64,
    vertices: Vec<(f64, f64)>,
    severity: f64,
}

impl Polygon {
    fn random(rng: &mut ChaCha8Rng, size: usize, cfg: &SyntheticConfig) -> Self {
        let outer = if cfg.radius.1 > cfg.radius.0 {
            rng.random_range(cfg.radius.0..=cfg.radius.1)
        } else {
            cfg.radius.0
        };
        let span = size as f64 - 2.0 * outer;
        let cx = outer + rng.random::<f64>() * span;
        let cy = outer + rng.random::<f64>() * span;
        let k = rng.random_range(5..=9usize);
        let step = std::f64::consts::TAU / k as f64;
        let phase = rng.random::<f64>() * step;
        let vertices = (0..k)
            .map(|i| {
                let a = phase + i as f64 * step + rng.random_range(-0.3..0.3) * step;
                let r = outer * rng.random_range(0.6..=1.0);
                (cx + r * a.cos(), cy + r * a.sin())
            })
            .collect();
        let severity = if cfg.severity.1 > cfg.severity.0 {
            rng.random_range(cfg.severity.0..=cfg.severity.1)
        } else {
            cfg.severity.0
        };
        Self {
            cx,
            cy,
            outer,
            vertices,
            severity,
        }
    }

    /// Even-odd ray cast.
    fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        let n = self.vertices.len();
        let mut j = n - 1;
        for i in 0..n {
            let (xi, yi) = self.vertices[i];
            let (xj, yj) = self.vertices[j];
            if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                inside = !inside;
            }
            j = i;
        }
        inside
    }

    fn severity_at(&self, x: f64, y: f64, falloff: f64) -> f64 {
        let rho = if self.outer > 0.0 {
            ((x - self.cx).hypot(y - self.cy) / self.outer).min(1.0)
        } else {
            0.0
        };
        self.severity * (1.0 - falloff * rho)
    }
}

fn water_strip(rng: &mut ChaCha8Rng, size: usize) -> GroundTruthMask {
    let mut mask = GroundTruthMask::zeros(size, size);
    let depth = ((size as f64) * rng.random_range(0.1..=0.25)).round().max(1.0) as usize;
    let edge = rng.random_range(0..4u8);
    for r in 0..size {
        for c in 0..size {
            let wet = match edge {
                0 => r < depth,
                1 => r >= size - depth,
                2 => c < depth,
                _ => c >= size - depth,
            };
            if wet {
                mask.labels_mut()[r * size + c] = 1;
            }
        }
    }
    mask
}

/// Generates one event deterministically from `seed`.
pub fn generate_synthetic_event(seed: u64, config: &SyntheticConfig) -> Result<BitemporalSample> {
    config.validate()?;
    let size = config.patch_size;
    let mut rng = seed::rng(seed, "raster.synthetic");

    let water = (rng.random::<f64>() < config.water_probability).then(|| water_strip(&mut rng, size));
    let burning = rng.random::<f64>() < config.positive_probability;
    let count = if burning {
        rng.random_range(config.polygons.0..=config.polygons.1)
    } else {
        0
    };

    let is_water = |r: usize, c: usize| water.as_ref().is_some_and(|w| w.get(r, c) == 1);
    let mut severity = vec![0.0f64; size * size];
    let mut truth = GroundTruthMask::zeros(size, size);
    for _ in 0..count {
        // Polygons that would touch water are redrawn; after 20 misses the
        // polygon is skipped.
        for _attempt in 0..20 {
            let poly = Polygon::random(&mut rng, size, config);
            let mut cells = Vec::new();
            let mut hits_water = false;
            for r in 0..size {
                for c in 0..size {
                    let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
                    if poly.contains(x, y) {
                        hits_water |= is_water(r, c);
                        cells.push((r, c, poly.severity_at(x, y, config.rim_falloff)));
                    }
                }
            }
            if hits_water {
                continue;
            }
            for (r, c, s) in cells {
                let i = r * size + c;
                severity[i] = severity[i].max(s);
                truth.labels_mut()[i] = 1;
            }
            break;
        }
    }

    let nb = config.bands.len();
    let plane = size * size;
    let mut pre = vec![0.0f32; nb * plane];
    let mut post = vec![0.0f32; nb * plane];
    for r in 0..size {
        for c in 0..size {
            let i = r * size + c;
            let (before, after) = if is_water(r, c) {
                (WATER, WATER)
            } else {
                (VEGETATED, VEGETATED.mix(&BURNT, severity[i] as f32))
            };
            for (b, &band) in config.bands.iter().enumerate() {
                pre[b * plane + i] = before.get(band);
                post[b * plane + i] = after.get(band);
            }
        }
    }
    if config.noise > 0.0 {
        let normal = Normal::new(0.0, config.noise).map_err(|e| Error::Config(e.to_string()))?;
        for v in pre.iter_mut().chain(post.iter_mut()) {
            let noisy = f64::from(*v) + normal.sample(&mut rng);
            *v = noisy.clamp(0.0, 1.0) as f32;
        }
    }

    let pre = RasterPatch::new(size, size, config.bands.clone(), pre)?;
    let post = RasterPatch::new(size, size, config.bands.clone(), post)?;
    BitemporalSample::new(pre, post, truth, water, format!("syn{seed:06}"), Split::Train)
}

/// A benchmark of `train + val + test` events. Event `i` is generated from
/// `seed::derive(root, "synth.event.<i>")`, named `syn<i>` (four digits) and
/// assigned to train, val, then test in index order.
pub fn generate_synthetic_dataset(
    root: u64,
    config: &SyntheticConfig,
    (train, val, test): (usize, usize, usize),
) -> Result<Vec<BitemporalSample>> {
    (0..train + val + test)
        .map(|i| {
            let mut s = generate_synthetic_event(seed::derive(root, &format!("synth.event.{i}")), config)?;
            s.event_id = format!("syn{i:04}");
            s.split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            Ok(s)
        })
        .collect()
}
