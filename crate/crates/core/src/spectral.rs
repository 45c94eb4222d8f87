//! Spectral indices over single patches and patch pairs.
//!
//! Formula symbols bind to Sentinel-2 bands through [`band_for`]:
//!
//! | symbol   | band |
//! |----------|------|
//! | Blue     | B02  |
//! | Green    | B03  |
//! | Red      | B04  |
//! | RedEdge  | B06  |
//! | NIR      | B8A  |
//! | NIR1     | B07  |
//! | NIR2     | B8A  |
//! | SWIR     | B12  |
//! | SWIR1    | B11  |
//! | SWIR2    | B12  |
//!
//! Arithmetic runs in `f64`; fields are stored as `f32`. A pixel where the
//! formula is undefined (zero denominator, negative radicand) is NaN.
//!
//! RdNBR is implemented literally as `(pre - post) / sqrt(|pre / 1000|)` on
//! unscaled NBR. The `/1000` originates from formulations where NBR is
//! scaled by 1000, so values here come out roughly `sqrt(1000)` times larger
//! than with scaled NBR. Thresholds are searched per index, so only the
//! scale of the search grid is affected.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::raster::{BandId, RasterPatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IndexKind {
    Savi,
    Ndvi,
    Evi,
    Ndwi,
    Bai,
    Nbr,
    Nbr2,
    NbrPlus,
    Mirbi,
    Csi,
    Bais2,
    Nbi,
    Abai,
    Rdnbr,
    Rbr,
}

impl IndexKind {
    pub const ALL: [IndexKind; 15] = [
        IndexKind::Savi,
        IndexKind::Ndvi,
        IndexKind::Evi,
        IndexKind::Ndwi,
        IndexKind::Bai,
        IndexKind::Nbr,
        IndexKind::Nbr2,
        IndexKind::NbrPlus,
        IndexKind::Mirbi,
        IndexKind::Csi,
        IndexKind::Bais2,
        IndexKind::Nbi,
        IndexKind::Abai,
        IndexKind::Rdnbr,
        IndexKind::Rbr,
    ];

    /// Indices that can be evaluated on one patch.
    pub const UNITEMPORAL: [IndexKind; 13] = [
        IndexKind::Savi,
        IndexKind::Ndvi,
        IndexKind::Evi,
        IndexKind::Ndwi,
        IndexKind::Bai,
        IndexKind::Nbr,
        IndexKind::Nbr2,
        IndexKind::NbrPlus,
        IndexKind::Mirbi,
        IndexKind::Csi,
        IndexKind::Bais2,
        IndexKind::Nbi,
        IndexKind::Abai,
    ];

    pub fn name(self) -> &'static str {
        match self {
            IndexKind::Savi => "SAVI",
            IndexKind::Ndvi => "NDVI",
            IndexKind::Evi => "EVI",
            IndexKind::Ndwi => "NDWI",
            IndexKind::Bai => "BAI",
            IndexKind::Nbr => "NBR",
            IndexKind::Nbr2 => "NBR2",
            IndexKind::NbrPlus => "NBRPLUS",
            IndexKind::Mirbi => "MIRBI",
            IndexKind::Csi => "CSI",
            IndexKind::Bais2 => "BAIS2",
            IndexKind::Nbi => "NBI",
            IndexKind::Abai => "ABAI",
            IndexKind::Rdnbr => "RDNBR",
            IndexKind::Rbr => "RBR",
        }
    }

    pub fn is_bitemporal(self) -> bool {
        matches!(self, IndexKind::Rdnbr | IndexKind::Rbr)
    }

    /// Bands the formula reads, deduplicated, in band order.
    pub fn required_bands(self) -> Vec<BandId> {
        use Symbol::*;
        let symbols: &[Symbol] = match self {
            IndexKind::Savi | IndexKind::Ndvi => &[Nir, Red],
            IndexKind::Evi => &[Nir, Red, Blue],
            IndexKind::Ndwi => &[Green, Nir],
            IndexKind::Bai => &[Red, Nir],
            IndexKind::Nbr | IndexKind::Rdnbr | IndexKind::Rbr => &[Nir, Swir],
            IndexKind::Nbr2 | IndexKind::Mirbi => &[Swir1, Swir2],
            IndexKind::NbrPlus => &[Swir, Nir, Green, Blue],
            IndexKind::Csi => &[Nir, Swir],
            IndexKind::Bais2 => &[RedEdge, Nir1, Nir2, Red, Swir],
            IndexKind::Nbi => &[Swir, Blue],
            IndexKind::Abai => &[Swir1, Swir2, Green],
        };
        let mut bands: Vec<BandId> = symbols.iter().map(|&s| band_for(s)).collect();
        bands.sort();
        bands.dedup();
        bands
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IndexKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_uppercase();
        let t = match t.as_str() {
            "NBR+" => "NBRPLUS",
            other => other,
        };
        IndexKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == t)
            .ok_or_else(|| Error::Config(format!("unknown spectral index `{s}`")))
    }
}

/// Formula symbols.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symbol {
    Blue,
    Green,
    Red,
    RedEdge,
    Nir,
    Nir1,
    Nir2,
    Swir,
    Swir1,
    Swir2,
}

pub fn band_for(symbol: Symbol) -> BandId {
    match symbol {
        Symbol::Blue => BandId::B02,
        Symbol::Green => BandId::B03,
        Symbol::Red => BandId::B04,
        Symbol::RedEdge => BandId::B06,
        Symbol::Nir => BandId::B8A,
        Symbol::Nir1 => BandId::B07,
        Symbol::Nir2 => BandId::B8A,
        Symbol::Swir => BandId::B12,
        Symbol::Swir1 => BandId::B11,
        Symbol::Swir2 => BandId::B12,
    }
}

/// Dense `height` x `width` field of index values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl ScalarField {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::dims("scalar field length", height * width, values.len()));
        }
        Ok(Self { height, width, values })
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }
}

/// Reflectances of one pixel, keyed by band.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pixel([f64; 10]);

impl Pixel {
    pub fn new(values: [(BandId, f64); 10]) -> Self {
        let mut p = Pixel::default();
        for (b, v) in values {
            p.set(b, v);
        }
        p
    }

    fn slot(band: BandId) -> usize {
        BandId::ALL.iter().position(|&b| b == band).unwrap()
    }

    pub fn set(&mut self, band: BandId, v: f64) {
        self.0[Self::slot(band)] = v;
    }

    pub fn band(&self, band: BandId) -> f64 {
        self.0[Self::slot(band)]
    }

    fn sym(&self, s: Symbol) -> f64 {
        self.band(band_for(s))
    }
}

fn div(n: f64, d: f64) -> f64 {
    if d == 0.0 {
        f64::NAN
    } else {
        n / d
    }
}

fn normalized_difference(a: f64, b: f64) -> f64 {
    div(a - b, a + b)
}

/// Evaluates a unitemporal index at one pixel. Bitemporal kinds return NaN.
pub fn evaluate(kind: IndexKind, p: &Pixel) -> f64 {
    use Symbol::*;
    let s = |sym| p.sym(sym);
    match kind {
        IndexKind::Savi => 1.5 * div(s(Nir) - s(Red), s(Nir) + s(Red) + 0.5),
        IndexKind::Ndvi => normalized_difference(s(Nir), s(Red)),
        IndexKind::Evi => 2.5 * div(s(Nir) - s(Red), s(Nir) + 6.0 * s(Red) - 7.5 * s(Blue) + 1.0),
        IndexKind::Ndwi => normalized_difference(s(Green), s(Nir)),
        IndexKind::Bai => div(1.0, (0.1 - s(Red)).powi(2) + (0.06 - s(Nir)).powi(2)),
        IndexKind::Nbr => normalized_difference(s(Nir), s(Swir)),
        IndexKind::Nbr2 => normalized_difference(s(Swir1), s(Swir2)),
        IndexKind::NbrPlus => {
            let (sw, n, g, b) = (s(Swir), s(Nir), s(Green), s(Blue));
            div(sw - n - g - b, sw + n + g + b)
        }
        IndexKind::Mirbi => 10.0 * s(Swir1) - 9.8 * s(Swir2) + 2.0,
        IndexKind::Csi => div(s(Nir), s(Swir)),
        IndexKind::Bais2 => {
            let vegetation = 1.0 - div(s(RedEdge) * s(Nir1) * s(Nir2), s(Red)).sqrt();
            let burn = div(s(Swir) - s(Nir2), (s(Swir) + s(Nir2)).sqrt()) + 1.0;
            vegetation * burn
        }
        IndexKind::Nbi => normalized_difference(s(Swir), s(Blue)),
        IndexKind::Abai => {
            let (s1, s2, g) = (s(Swir1), s(Swir2), s(Green));
            div(3.0 * s1 - 2.0 * s2 - 3.0 * g, 3.0 * s1 + 2.0 * s2 + 3.0 * g)
        }
        IndexKind::Rdnbr | IndexKind::Rbr => f64::NAN,
    }
}

/// RdNBR from pre/post NBR values.
pub fn rdnbr(nbr_pre: f64, nbr_post: f64) -> f64 {
    div(nbr_pre - nbr_post, (nbr_pre / 1000.0).abs().sqrt())
}

/// RBR from pre/post NBR values.
pub fn rbr(nbr_pre: f64, nbr_post: f64) -> f64 {
    div(nbr_pre - nbr_post, nbr_pre + 1.001)
}

fn check_bands(kind: IndexKind, patch: &RasterPatch) -> Result<()> {
    for band in kind.required_bands() {
        if patch.band(band).is_none() {
            return Err(Error::MissingBand {
                index: kind.name().into(),
                band,
            });
        }
    }
    Ok(())
}

fn pixels<'a>(patch: &'a RasterPatch, bands: &'a [BandId]) -> impl Iterator<Item = Pixel> + 'a {
    let planes: Vec<(BandId, &[f32])> = bands.iter().map(|&b| (b, patch.band(b).unwrap())).collect();
    (0..patch.pixels()).map(move |i| {
        let mut p = Pixel::default();
        for (b, plane) in &planes {
            p.set(*b, f64::from(plane[i]));
        }
        p
    })
}

fn index_values(kind: IndexKind, patch: &RasterPatch) -> Result<Vec<f64>> {
    check_bands(kind, patch)?;
    let bands = kind.required_bands();
    Ok(pixels(patch, &bands).map(|p| evaluate(kind, &p)).collect())
}

fn reject_bitemporal(kind: IndexKind) -> Result<()> {
    if kind.is_bitemporal() {
        return Err(Error::Config(format!(
            "{kind} needs a pre/post pair; use compute_rdnbr / compute_rbr"
        )));
    }
    Ok(())
}

fn to_field(patch: &RasterPatch, values: impl IntoIterator<Item = f64>) -> ScalarField {
    ScalarField {
        height: patch.height(),
        width: patch.width(),
        values: values.into_iter().map(|v| v as f32).collect(),
    }
}

pub fn compute_index(kind: IndexKind, patch: &RasterPatch) -> Result<ScalarField> {
    reject_bitemporal(kind)?;
    Ok(to_field(patch, index_values(kind, patch)?))
}

fn check_pair(pre: &RasterPatch, post: &RasterPatch) -> Result<()> {
    if (pre.height(), pre.width()) != (post.height(), post.width()) {
        return Err(Error::dims(
            "pre/post patch size",
            format!("{}x{}", pre.height(), pre.width()),
            format!("{}x{}", post.height(), post.width()),
        ));
    }
    Ok(())
}

/// `index(pre) - index(post)` pixelwise.
pub fn compute_delta(kind: IndexKind, pre: &RasterPatch, post: &RasterPatch) -> Result<ScalarField> {
    reject_bitemporal(kind)?;
    check_pair(pre, post)?;
    let a = index_values(kind, pre)?;
    let b = index_values(kind, post)?;
    Ok(to_field(pre, a.iter().zip(&b).map(|(x, y)| x - y)))
}

fn nbr_pair(pre: &RasterPatch, post: &RasterPatch, kind: IndexKind) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(pre, post)?;
    check_bands(kind, pre)?;
    check_bands(kind, post)?;
    Ok((index_values(IndexKind::Nbr, pre)?, index_values(IndexKind::Nbr, post)?))
}

pub fn compute_rdnbr(pre: &RasterPatch, post: &RasterPatch) -> Result<ScalarField> {
    let (a, b) = nbr_pair(pre, post, IndexKind::Rdnbr)?;
    Ok(to_field(pre, a.iter().zip(&b).map(|(&x, &y)| rdnbr(x, y))))
}

pub fn compute_rbr(pre: &RasterPatch, post: &RasterPatch) -> Result<ScalarField> {
    let (a, b) = nbr_pair(pre, post, IndexKind::Rbr)?;
    Ok(to_field(pre, a.iter().zip(&b).map(|(&x, &y)| rbr(x, y))))
}

/// The change field an index contributes to a pre/post pair: the delta for
/// unitemporal kinds, the index itself for RdNBR and RBR.
pub fn change_field(kind: IndexKind, pre: &RasterPatch, post: &RasterPatch) -> Result<ScalarField> {
    match kind {
        IndexKind::Rdnbr => compute_rdnbr(pre, post),
        IndexKind::Rbr => compute_rbr(pre, post),
        _ => compute_delta(kind, pre, post),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn patch(values: &[(BandId, f32)]) -> RasterPatch {
        let bands: Vec<BandId> = values.iter().map(|v| v.0).collect();
        let data: Vec<f32> = values.iter().map(|v| v.1).collect();
        RasterPatch::new(1, 1, bands, data).unwrap()
    }

    fn nbr_patch(nbr: f64) -> RasterPatch {
        // NIR = 1 + nbr, SWIR = 1 - nbr gives NBR = nbr exactly.
        patch(&[(BandId::B8A, (1.0 + nbr) as f32), (BandId::B12, (1.0 - nbr) as f32)])
    }

    #[test]
    fn ndvi_hand_value() {
        let p = patch(&[(BandId::B04, 0.25), (BandId::B8A, 0.5)]);
        let f = compute_index(IndexKind::Ndvi, &p).unwrap();
        assert_relative_eq!(f.values[0], 1.0 / 3.0, max_relative = 1e-6);
        let same = patch(&[(BandId::B04, 0.3), (BandId::B8A, 0.3)]);
        assert_eq!(compute_index(IndexKind::Ndvi, &same).unwrap().values[0], 0.0);
    }

    #[test]
    fn mirbi_constant_term() {
        let p = patch(&[(BandId::B11, 0.0), (BandId::B12, 0.0)]);
        assert_eq!(compute_index(IndexKind::Mirbi, &p).unwrap().values[0], 2.0);
    }

    #[test]
    fn missing_band_named() {
        let p = patch(&[(BandId::B04, 0.25)]);
        match compute_index(IndexKind::Ndvi, &p) {
            Err(Error::MissingBand { index, band }) => {
                assert_eq!(index, "NDVI");
                assert_eq!(band, BandId::B8A);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bitemporal_kinds_rejected_for_single_patch() {
        let p = nbr_patch(0.2);
        assert!(compute_index(IndexKind::Rbr, &p).is_err());
        assert!(compute_delta(IndexKind::Rdnbr, &p, &p).is_err());
    }

    #[test]
    fn delta_of_identical_is_zero() {
        let p = patch(&[(BandId::B04, 0.1), (BandId::B8A, 0.4)]);
        assert_eq!(compute_delta(IndexKind::Ndvi, &p, &p).unwrap().values, vec![0.0]);
    }

    #[test]
    fn delta_subtraction() {
        // NDVI 0.6 -> NIR 0.8 / Red 0.2; NDVI 0.1 -> NIR 0.55 / Red 0.45.
        let pre = patch(&[(BandId::B04, 0.2), (BandId::B8A, 0.8)]);
        let post = patch(&[(BandId::B04, 0.45), (BandId::B8A, 0.55)]);
        let d = compute_delta(IndexKind::Ndvi, &pre, &post).unwrap();
        assert_relative_eq!(d.values[0], 0.5, max_relative = 1e-6);
    }

    #[test]
    fn rdnbr_values() {
        let d = compute_rdnbr(&nbr_patch(0.5), &nbr_patch(0.1)).unwrap();
        assert_relative_eq!(d.values[0], 17.888_544, max_relative = 1e-6);
        let z = compute_rdnbr(&nbr_patch(0.3), &nbr_patch(0.3)).unwrap();
        assert_eq!(z.values[0], 0.0);
        assert!(compute_rdnbr(&nbr_patch(0.0), &nbr_patch(0.1)).unwrap().values[0].is_nan());
    }

    #[test]
    fn rbr_values() {
        let d = compute_rbr(&nbr_patch(0.5), &nbr_patch(0.1)).unwrap();
        assert_relative_eq!(d.values[0], 0.266_489, max_relative = 1e-5);
        assert_eq!(compute_rbr(&nbr_patch(0.2), &nbr_patch(0.2)).unwrap().values[0], 0.0);
        assert!(rbr(-1.0, 0.0).is_finite());
        assert_relative_eq!(rbr(-1.0, 0.0), -1.0 / 0.001, max_relative = 1e-9);
    }

    #[test]
    fn zero_denominator_is_nan() {
        let p = patch(&[(BandId::B04, 0.0), (BandId::B8A, 0.0)]);
        assert!(compute_index(IndexKind::Ndvi, &p).unwrap().values[0].is_nan());
        let q = patch(&[(BandId::B8A, 0.4), (BandId::B12, 0.0)]);
        assert!(compute_index(IndexKind::Csi, &q).unwrap().values[0].is_nan());
    }

    #[test]
    fn parse_names() {
        assert_eq!("ndvi".parse::<IndexKind>().unwrap(), IndexKind::Ndvi);
        assert_eq!("NBR+".parse::<IndexKind>().unwrap(), IndexKind::NbrPlus);
        assert_eq!("RdNBR".parse::<IndexKind>().unwrap(), IndexKind::Rdnbr);
        assert!("foo".parse::<IndexKind>().is_err());
    }
}
