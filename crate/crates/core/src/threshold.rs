//! Global thresholding of change fields and the grid search that picks the
//! threshold.
//!
//! A pixel is burnt when its change value is `>= threshold`; NaN pixels are
//! unburnt. The search pools every training pixel, scores each grid point by
//! burnt-class F1 and keeps the first (smallest) maximiser. The default grid
//! spans the 1st..99th percentile of the pooled finite values in 256 evenly
//! spaced points, which keeps it scale-free across indices.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, ConfusionCounts};
use crate::raster::{BitemporalSample, GroundTruthMask};
use crate::spectral::{change_field, IndexKind, ScalarField};

pub const DEFAULT_STEPS: usize = 256;
pub const LOWER_PERCENTILE: f64 = 1.0;
pub const UPPER_PERCENTILE: f64 = 99.0;

/// Evenly spaced candidate thresholds, both ends included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, steps: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Fit(format!("grid bounds [{lo}, {hi}] are not an increasing finite pair")));
        }
        if steps < 2 {
            return Err(Error::Fit(format!("grid needs at least 2 steps, got {steps}")));
        }
        Ok(Self { lo, hi, steps })
    }

    pub fn point(&self, i: usize) -> f64 {
        if i + 1 == self.steps {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.steps - 1) as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.steps).map(|i| self.point(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdModel {
    pub kind: IndexKind,
    pub threshold: f64,
    pub grid: Grid,
    /// Burnt-class F1 on the training pixels at `threshold`.
    pub train_f1: f64,
}

impl ThresholdModel {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "kind={}", self.kind).unwrap();
        writeln!(s, "threshold={:?}", self.threshold).unwrap();
        writeln!(s, "grid_lo={:?}", self.grid.lo).unwrap();
        writeln!(s, "grid_hi={:?}", self.grid.hi).unwrap();
        writeln!(s, "grid_steps={}", self.grid.steps).unwrap();
        writeln!(s, "train_f1={:?}", self.train_f1).unwrap();
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut kind = None;
        let (mut threshold, mut lo, mut hi, mut steps, mut f1) = (None, None, None, None, None);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("`{line}` is not key=value")))?;
            let num = |v: &str| -> Result<f64> {
                v.trim().parse().map_err(|_| Error::Config(format!("`{v}` is not a number")))
            };
            match k.trim() {
                "kind" => kind = Some(v.parse::<IndexKind>()?),
                "threshold" => threshold = Some(num(v)?),
                "grid_lo" => lo = Some(num(v)?),
                "grid_hi" => hi = Some(num(v)?),
                "grid_steps" => {
                    steps = Some(v.trim().parse().map_err(|_| Error::Config(format!("bad grid_steps `{v}`")))?)
                }
                "train_f1" => f1 = Some(num(v)?),
                other => return Err(Error::Config(format!("unknown threshold model key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Config(format!("threshold model lacks `{k}`"));
        Ok(Self {
            kind: kind.ok_or_else(|| missing("kind"))?,
            threshold: threshold.ok_or_else(|| missing("threshold"))?,
            grid: Grid::new(
                lo.ok_or_else(|| missing("grid_lo"))?,
                hi.ok_or_else(|| missing("grid_hi"))?,
                steps.ok_or_else(|| missing("grid_steps"))?,
            )?,
            train_f1: f1.ok_or_else(|| missing("train_f1"))?,
        })
    }

    pub fn predict(&self, sample: &BitemporalSample) -> Result<GroundTruthMask> {
        Ok(binarize(&change_field(self.kind, &sample.pre, &sample.post)?, self.threshold))
    }
}

pub fn binarize(field: &ScalarField, threshold: f64) -> GroundTruthMask {
    let labels = field
        .values
        .iter()
        .map(|&v| u8::from(f64::from(v) >= threshold))
        .collect();
    GroundTruthMask::new(field.height, field.width, labels).expect("field dimensions are consistent")
}

/// Change values and labels of every pixel in `samples`, concatenated in
/// sample order.
pub fn pool_pixels(kind: IndexKind, samples: &[BitemporalSample]) -> Result<(Vec<f32>, Vec<u8>)> {
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for s in samples {
        values.extend(change_field(kind, &s.pre, &s.post)?.values);
        labels.extend_from_slice(s.truth.labels());
    }
    Ok((values, labels))
}

/// Linear-interpolated percentile (`p` in 0..=100) of the finite values.
pub fn percentile(values: &[f32], p: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().filter(|x| x.is_finite()).map(|&x| f64::from(x)).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (rank - lo as f64))
}

pub fn default_grid(values: &[f32]) -> Result<Grid> {
    let lo = percentile(values, LOWER_PERCENTILE).ok_or_else(|| Error::Fit("no finite change values".into()))?;
    let hi = percentile(values, UPPER_PERCENTILE).unwrap();
    if lo >= hi {
        return Err(Error::Fit(format!("change field is constant between percentiles ({lo})")));
    }
    Grid::new(lo, hi, DEFAULT_STEPS)
}

/// Pixel values sorted for O(log n) confusion counts at any threshold.
struct SortedPixels {
    values: Vec<f64>,
    /// `burnt_suffix[i]` = burnt pixels among `values[i..]`.
    burnt_suffix: Vec<u64>,
    burnt_total: u64,
    total: u64,
}

impl SortedPixels {
    fn new(values: &[f32], labels: &[u8]) -> Self {
        let mut finite: Vec<(f64, u8)> = values
            .iter()
            .zip(labels)
            .filter(|(v, _)| !v.is_nan())
            .map(|(&v, &l)| (f64::from(v), l))
            .collect();
        finite.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut burnt_suffix = vec![0u64; finite.len() + 1];
        for i in (0..finite.len()).rev() {
            burnt_suffix[i] = burnt_suffix[i + 1] + u64::from(finite[i].1 == 1);
        }
        Self {
            values: finite.into_iter().map(|p| p.0).collect(),
            burnt_suffix,
            burnt_total: labels.iter().filter(|&&l| l == 1).count() as u64,
            total: labels.len() as u64,
        }
    }

    fn counts(&self, threshold: f64) -> ConfusionCounts {
        let first = self.values.partition_point(|&v| !(v >= threshold));
        let predicted = (self.values.len() - first) as u64;
        let tp = self.burnt_suffix[first];
        let fp = predicted - tp;
        let fn_ = self.burnt_total - tp;
        ConfusionCounts {
            tp,
            fp,
            fn_,
            tn: self.total - tp - fp - fn_,
        }
    }
}

/// Scores every grid point on the given pixels and keeps the best.
pub fn fit_on_pixels(kind: IndexKind, values: &[f32], labels: &[u8], grid: Grid) -> Result<ThresholdModel> {
    if values.len() != labels.len() {
        return Err(Error::dims("pixel values/labels", values.len(), labels.len()));
    }
    let burnt = labels.iter().filter(|&&l| l == 1).count();
    if burnt == 0 || burnt == labels.len() {
        return Err(Error::Fit(format!(
            "training pixels for {kind} contain a single class ({burnt} burnt of {})",
            labels.len()
        )));
    }
    let sorted = SortedPixels::new(values, labels);
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..grid.steps {
        let f1 = compute_metrics(&sorted.counts(grid.point(i))).burnt.f1;
        if f1 > best.1 {
            best = (i, f1);
        }
    }
    Ok(ThresholdModel {
        kind,
        threshold: grid.point(best.0),
        grid,
        train_f1: best.1,
    })
}

pub fn fit_threshold(kind: IndexKind, train: &[BitemporalSample]) -> Result<ThresholdModel> {
    let (values, labels) = pool_pixels(kind, train)?;
    let burnt = labels.iter().filter(|&&l| l == 1).count();
    if burnt == 0 || burnt == labels.len() {
        return Err(Error::Fit(format!("training pixels for {kind} contain a single class")));
    }
    let grid = default_grid(&values)?;
    fit_on_pixels(kind, &values, &labels, grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(values: Vec<f32>) -> ScalarField {
        ScalarField::new(1, values.len(), values).unwrap()
    }

    #[test]
    fn boundary_inclusive() {
        assert_eq!(binarize(&field(vec![-1.0, 0.0, 1.0]), 0.0).labels(), &[0, 1, 1]);
    }

    #[test]
    fn below_range_is_all_burnt() {
        assert_eq!(binarize(&field(vec![-1.0, 0.0, 1.0]), -2.0).labels(), &[1, 1, 1]);
    }

    #[test]
    fn nan_is_unburnt() {
        assert_eq!(binarize(&field(vec![f32::NAN, 5.0]), 0.0).labels(), &[0, 1]);
    }

    #[test]
    fn two_point_grid_picks_better() {
        let values = [0.1f32, 0.2, 0.8, 0.9];
        let labels = [0u8, 0, 1, 1];
        let m = fit_on_pixels(IndexKind::Nbr, &values, &labels, Grid::new(0.15, 0.5, 2).unwrap()).unwrap();
        assert_eq!(m.threshold, 0.5);
        assert_eq!(m.train_f1, 1.0);
    }

    #[test]
    fn ties_take_smallest() {
        let values = [0.0f32, 1.0];
        let labels = [0u8, 1];
        let m = fit_on_pixels(IndexKind::Nbr, &values, &labels, Grid::new(0.2, 0.8, 4).unwrap()).unwrap();
        assert_eq!(m.threshold, 0.2);
    }

    #[test]
    fn single_class_rejected() {
        let r = fit_on_pixels(IndexKind::Nbr, &[0.1, 0.2], &[0, 0], Grid::new(0.0, 1.0, 3).unwrap());
        assert!(matches!(r, Err(Error::Fit(_))));
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(1.0, 1.0, 5).is_err());
        assert!(Grid::new(0.0, 1.0, 1).is_err());
        assert_eq!(Grid::new(0.0, 1.0, 3).unwrap().points(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn percentile_interpolates() {
        let v: Vec<f32> = (0..=100).map(|i| i as f32).collect();
        assert_eq!(percentile(&v, 1.0), Some(1.0));
        assert_eq!(percentile(&v, 99.0), Some(99.0));
        assert_eq!(percentile(&[f32::NAN], 50.0), None);
    }

    #[test]
    fn text_round_trip() {
        let m = ThresholdModel {
            kind: IndexKind::Mirbi,
            threshold: -0.123_456_789_012_345_6,
            grid: Grid::new(-1.5, 0.7, 256).unwrap(),
            train_f1: 0.912_345_678_901_234_5,
        };
        assert_eq!(ThresholdModel::from_text(&m.to_text()).unwrap(), m);
        assert!(ThresholdModel::from_text("kind=NBR\nbogus=1\n").is_err());
    }
}
