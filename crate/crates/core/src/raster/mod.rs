//! Patch data model, tiling, clipping and dataset plumbing.

mod format;
mod manifest;
mod synth;

use std::fmt;
use std::str::FromStr;

use rand::seq::index;

pub use format::{read_patch_file, write_patch_file, decode_sample, encode_sample, FORMAT_VERSION, MAGIC};
pub use manifest::{split_counts, DatasetManifest, ManifestEntry};
pub use synth::{generate_synthetic_dataset, generate_synthetic_event, SpectralProfile, SyntheticConfig, BURNT, VEGETATED, WATER};

use crate::error::{Error, Result};
use crate::seed;

/// Sentinel-2 bands at 10m/20m resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BandId {
    B02,
    B03,
    B04,
    B05,
    B06,
    B07,
    B08,
    B8A,
    B11,
    B12,
}

impl BandId {
    pub const ALL: [BandId; 10] = [
        BandId::B02,
        BandId::B03,
        BandId::B04,
        BandId::B05,
        BandId::B06,
        BandId::B07,
        BandId::B08,
        BandId::B8A,
        BandId::B11,
        BandId::B12,
    ];

    /// The nine bands native to (or resampled to) 20m without B08.
    pub const TWENTY_METRE: [BandId; 9] = [
        BandId::B02,
        BandId::B03,
        BandId::B04,
        BandId::B05,
        BandId::B06,
        BandId::B07,
        BandId::B8A,
        BandId::B11,
        BandId::B12,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BandId::B02 => "B02",
            BandId::B03 => "B03",
            BandId::B04 => "B04",
            BandId::B05 => "B05",
            BandId::B06 => "B06",
            BandId::B07 => "B07",
            BandId::B08 => "B08",
            BandId::B8A => "B8A",
            BandId::B11 => "B11",
            BandId::B12 => "B12",
        }
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BandId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        BandId::ALL
            .iter()
            .copied()
            .find(|b| b.name().eq_ignore_ascii_case(t))
            .ok_or_else(|| Error::Config(format!("unknown band name `{s}`")))
    }
}

/// Dense `[band][row][col]` reflectance array.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterPatch {
    height: usize,
    width: usize,
    bands: Vec<BandId>,
    data: Vec<f32>,
}

impl RasterPatch {
    pub fn new(height: usize, width: usize, bands: Vec<BandId>, data: Vec<f32>) -> Result<Self> {
        for (i, b) in bands.iter().enumerate() {
            if bands[..i].contains(b) {
                return Err(Error::Config(format!("duplicate band {b} in patch")));
            }
        }
        let expected = height * width * bands.len();
        if data.len() != expected {
            return Err(Error::dims("raster data length", expected, data.len()));
        }
        Ok(Self {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, bands: Vec<BandId>) -> Result<Self> {
        let n = height * width * bands.len();
        Self::new(height, width, bands, vec![0.0; n])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> &[BandId] {
        &self.bands
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn band_position(&self, band: BandId) -> Option<usize> {
        self.bands.iter().position(|&b| b == band)
    }

    pub fn band(&self, band: BandId) -> Option<&[f32]> {
        let plane = self.pixels();
        self.band_position(band)
            .map(|i| &self.data[i * plane..(i + 1) * plane])
    }

    pub fn band_mut(&mut self, band: BandId) -> Option<&mut [f32]> {
        let plane = self.pixels();
        let i = self.band_position(band)?;
        Some(&mut self.data[i * plane..(i + 1) * plane])
    }

    pub fn get(&self, band: BandId, row: usize, col: usize) -> Option<f32> {
        self.band(band).map(|p| p[row * self.width + col])
    }

    /// Copy of the `height` x `width` window with top-left corner `(row, col)`.
    pub fn window(&self, row: usize, col: usize, height: usize, width: usize) -> RasterPatch {
        let mut data = Vec::with_capacity(height * width * self.bands.len());
        for b in 0..self.bands.len() {
            let plane = &self.data[b * self.pixels()..(b + 1) * self.pixels()];
            for r in row..row + height {
                data.extend_from_slice(&plane[r * self.width + col..r * self.width + col + width]);
            }
        }
        RasterPatch {
            height,
            width,
            bands: self.bands.clone(),
            data,
        }
    }

    /// Restricts the patch to `bands`, in that order.
    pub fn select_bands(&self, bands: &[BandId]) -> Result<RasterPatch> {
        let mut data = Vec::with_capacity(self.pixels() * bands.len());
        for &b in bands {
            let plane = self.band(b).ok_or_else(|| Error::MissingBand {
                index: "band selection".into(),
                band: b,
            })?;
            data.extend_from_slice(plane);
        }
        RasterPatch::new(self.height, self.width, bands.to_vec(), data)
    }

    pub fn clip(&mut self, clip_max: f32) {
        for v in &mut self.data {
            *v = clip_value(*v, clip_max);
        }
    }
}

/// Clamps a reflectance into `[0, clip_max]`; non-finite no-data becomes 0.
pub fn clip_value(v: f32, clip_max: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, clip_max)
    }
}

/// Binary `{0, 1}` raster; used for ground truth, water and predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl GroundTruthMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::dims("mask length", height * width, labels.len()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Config(format!("mask label {bad} is not binary")));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn count_positive(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn window(&self, row: usize, col: usize, height: usize, width: usize) -> GroundTruthMask {
        let mut labels = Vec::with_capacity(height * width);
        for r in row..row + height {
            labels.extend_from_slice(&self.labels[r * self.width + col..r * self.width + col + width]);
        }
        GroundTruthMask {
            height,
            width,
            labels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Pre/post patch pair with its labels: the unit of training and evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct BitemporalSample {
    pub pre: RasterPatch,
    pub post: RasterPatch,
    pub truth: GroundTruthMask,
    pub water: Option<GroundTruthMask>,
    pub event_id: String,
    pub split: Split,
}

impl BitemporalSample {
    pub fn new(
        pre: RasterPatch,
        post: RasterPatch,
        truth: GroundTruthMask,
        water: Option<GroundTruthMask>,
        event_id: impl Into<String>,
        split: Split,
    ) -> Result<Self> {
        check_layers(&pre, &post, &truth, water.as_ref())?;
        Ok(Self {
            pre,
            post,
            truth,
            water,
            event_id: event_id.into(),
            split,
        })
    }

    pub fn height(&self) -> usize {
        self.pre.height()
    }

    pub fn width(&self) -> usize {
        self.pre.width()
    }

    pub fn is_positive(&self) -> bool {
        self.truth.labels().contains(&1)
    }

    pub fn is_water(&self, row: usize, col: usize) -> bool {
        self.water.as_ref().is_some_and(|w| w.get(row, col) == 1)
    }
}

fn check_layers(
    pre: &RasterPatch,
    post: &RasterPatch,
    truth: &GroundTruthMask,
    water: Option<&GroundTruthMask>,
) -> Result<()> {
    let (h, w) = (pre.height(), pre.width());
    let dims = |hh: usize, ww: usize| format!("{hh}x{ww}");
    if (post.height(), post.width()) != (h, w) {
        return Err(Error::Ingest {
            layer: "post".into(),
            reason: format!("size {} differs from pre {}", dims(post.height(), post.width()), dims(h, w)),
        });
    }
    if post.bands() != pre.bands() {
        return Err(Error::Ingest {
            layer: "post".into(),
            reason: "band list differs from pre".into(),
        });
    }
    if (truth.height(), truth.width()) != (h, w) {
        return Err(Error::Ingest {
            layer: "truth".into(),
            reason: format!("size {} differs from pre {}", dims(truth.height(), truth.width()), dims(h, w)),
        });
    }
    if let Some(water) = water {
        if (water.height(), water.width()) != (h, w) {
            return Err(Error::Ingest {
                layer: "water".into(),
                reason: format!("size {} differs from pre {}", dims(water.height(), water.width()), dims(h, w)),
            });
        }
    }
    Ok(())
}

/// Full-size scene pair before tiling.
#[derive(Debug, Clone)]
pub struct Scene {
    pub pre: RasterPatch,
    pub post: RasterPatch,
    pub truth: GroundTruthMask,
    pub water: Option<GroundTruthMask>,
    pub event_id: String,
    pub split: Split,
}

/// Top-left corners of the full `patch_size` tiles of a `height` x `width`
/// grid, row-major. Residual border pixels are not covered.
pub fn tile_origins(height: usize, width: usize, patch_size: usize) -> Vec<(usize, usize)> {
    if patch_size == 0 {
        return Vec::new();
    }
    let rows = height / patch_size;
    let cols = width / patch_size;
    (0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r * patch_size, c * patch_size)))
        .collect()
}

/// Cuts a scene into non-overlapping `patch_size` tiles (row-major, partial
/// border tiles dropped) and clips every reflectance into `[0, clip_max]`.
pub fn ingest_scene(scene: &Scene, patch_size: usize, clip_max: f32) -> Result<Vec<BitemporalSample>> {
    if !(clip_max > 0.0) {
        return Err(Error::Config(format!("clip_max must be positive, got {clip_max}")));
    }
    if patch_size == 0 {
        return Err(Error::Config("patch_size must be positive".into()));
    }
    check_layers(&scene.pre, &scene.post, &scene.truth, scene.water.as_ref())?;
    let (h, w) = (scene.pre.height(), scene.pre.width());
    if h < patch_size || w < patch_size {
        return Err(Error::Ingest {
            layer: "pre".into(),
            reason: format!("scene {h}x{w} is smaller than patch size {patch_size}"),
        });
    }
    let origins = tile_origins(h, w, patch_size);
    let mut out = Vec::with_capacity(origins.len());
    for (i, &(r, c)) in origins.iter().enumerate() {
        let mut pre = scene.pre.window(r, c, patch_size, patch_size);
        let mut post = scene.post.window(r, c, patch_size, patch_size);
        pre.clip(clip_max);
        post.clip(clip_max);
        out.push(BitemporalSample {
            pre,
            post,
            truth: scene.truth.window(r, c, patch_size, patch_size),
            water: scene.water.as_ref().map(|m| m.window(r, c, patch_size, patch_size)),
            event_id: format!("{}_{i:04}", scene.event_id),
            split: scene.split,
        });
    }
    Ok(out)
}

/// Keeps every positive patch plus an equal number of uniformly drawn
/// negatives. Output order: positives, then chosen negatives, each in input
/// order.
pub fn balance_negatives(samples: &[BitemporalSample], seed: u64) -> Result<Vec<BitemporalSample>> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..samples.len()).partition(|&i| samples[i].is_positive());
    if neg.len() < pos.len() {
        return Err(Error::InsufficientNegatives {
            positives: pos.len(),
            negatives: neg.len(),
        });
    }
    let mut rng = seed::rng(seed, "raster.balance_negatives");
    let mut chosen: Vec<usize> = index::sample(&mut rng, neg.len(), pos.len())
        .into_iter()
        .map(|k| neg[k])
        .collect();
    chosen.sort_unstable();
    Ok(pos
        .iter()
        .chain(chosen.iter())
        .map(|&i| samples[i].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(h: usize, w: usize) -> Scene {
        let bands = vec![BandId::B04, BandId::B8A];
        let n = h * w * bands.len();
        let data: Vec<f32> = (0..n).map(|i| i as f32 / n as f32).collect();
        let pre = RasterPatch::new(h, w, bands.clone(), data.clone()).unwrap();
        let post = RasterPatch::new(h, w, bands, data).unwrap();
        Scene {
            pre,
            post,
            truth: GroundTruthMask::zeros(h, w),
            water: None,
            event_id: "e".into(),
            split: Split::Train,
        }
    }

    #[test]
    fn exact_tiling() {
        assert_eq!(ingest_scene(&scene(512, 512), 256, 1.0).unwrap().len(), 4);
    }

    #[test]
    fn border_dropped() {
        let out = ingest_scene(&scene(300, 300), 256, 1.0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].height(), 256);
    }

    #[test]
    fn clip_to_max() {
        let mut s = scene(4, 4);
        s.pre.data_mut()[0] = 1.7;
        s.pre.data_mut()[1] = -0.3;
        let out = ingest_scene(&s, 4, 1.0).unwrap();
        assert_eq!(out[0].pre.data()[0], 1.0);
        assert_eq!(out[0].pre.data()[1], 0.0);
    }

    #[test]
    fn truth_mismatch_names_layer() {
        let mut s = scene(8, 8);
        s.truth = GroundTruthMask::zeros(8, 7);
        match ingest_scene(&s, 4, 1.0) {
            Err(Error::Ingest { layer, .. }) => assert_eq!(layer, "truth"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scene_smaller_than_patch() {
        assert!(ingest_scene(&scene(10, 10), 16, 1.0).is_err());
        assert!(ingest_scene(&scene(16, 16), 16, 0.0).is_err());
    }

    #[test]
    fn tiles_partition_source() {
        // Every source pixel inside the tiled area is covered exactly once.
        let (h, w, p) = (23, 17, 5);
        let mut hits = vec![0u8; h * w];
        for (r, c) in tile_origins(h, w, p) {
            for rr in r..r + p {
                for cc in c..c + p {
                    hits[rr * w + cc] += 1;
                }
            }
        }
        for r in 0..h {
            for c in 0..w {
                let inside = r < (h / p) * p && c < (w / p) * p;
                assert_eq!(hits[r * w + c], u8::from(inside));
            }
        }
    }

    #[test]
    fn tile_content_matches_source() {
        let s = scene(12, 8);
        let tiles = ingest_scene(&s, 4, 1.0).unwrap();
        assert_eq!(tiles.len(), 6);
        for (t, (r, c)) in tiles.iter().zip(tile_origins(12, 8, 4)) {
            for rr in 0..4 {
                for cc in 0..4 {
                    assert_eq!(
                        t.pre.get(BandId::B8A, rr, cc),
                        s.pre.get(BandId::B8A, r + rr, c + cc)
                    );
                }
            }
        }
    }

    #[test]
    fn clip_idempotent() {
        for v in [-1.0f32, 0.0, 0.3, 1.0, 1.7, f32::NAN, f32::INFINITY] {
            let once = clip_value(v, 1.0);
            assert_eq!(clip_value(once, 1.0), once);
        }
    }

    fn labelled(positive: bool, id: usize) -> BitemporalSample {
        let p = RasterPatch::zeros(2, 2, vec![BandId::B04]).unwrap();
        let mut truth = GroundTruthMask::zeros(2, 2);
        if positive {
            truth.labels_mut()[0] = 1;
        }
        BitemporalSample::new(p.clone(), p, truth, None, format!("e{id}"), Split::Train).unwrap()
    }

    #[test]
    fn balance_counts() {
        let pool: Vec<_> = (0..40).map(|i| labelled(i < 10, i)).collect();
        let out = balance_negatives(&pool, 3).unwrap();
        assert_eq!(out.len(), 20);
        assert_eq!(out.iter().filter(|s| s.is_positive()).count(), 10);
        assert_eq!(out, balance_negatives(&pool, 3).unwrap());
    }

    #[test]
    fn balance_empty_and_insufficient() {
        let negs: Vec<_> = (0..5).map(|i| labelled(false, i)).collect();
        assert!(balance_negatives(&negs, 0).unwrap().is_empty());
        let pos: Vec<_> = (0..3).map(|i| labelled(true, i)).collect();
        match balance_negatives(&pos, 0) {
            Err(Error::InsufficientNegatives { positives, negatives }) => {
                assert_eq!((positives, negatives), (3, 0))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_bands_rejected() {
        assert!(RasterPatch::zeros(1, 1, vec![BandId::B04, BandId::B04]).is_err());
    }
}
